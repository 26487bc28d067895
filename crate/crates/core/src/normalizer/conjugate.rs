//! Push-forward of a Fourier-Taylor field under
//! `x = xb + a(xb)`, `Y = B0(xb) + (I + B1(xb)) Yb`.
//!
//! Everything is evaluated on a torus grid and transformed back, so the
//! angle dependence of the field is never expanded symbolically.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fourier::{FourierSeries, MatrixSeries, MultiIndex};
use crate::grid::TorusGrid;
use crate::scalar::{lit, to_f64, Real};
use crate::taylor::{FtField, MonomialBasis, TermField, Trig};

/// Change of variables close to the identity.
#[derive(Clone, Debug, PartialEq)]
pub struct Transform<T: Real> {
    /// Angle correction, `n` components.
    pub a: FourierSeries<T>,
    /// Translation of the phase variables, `q` components.
    pub b0: FourierSeries<T>,
    /// Linear part minus the identity, `q x q`.
    pub b1: MatrixSeries<T>,
}

impl<T: Real> Transform<T> {
    pub fn identity(n: usize, q: usize, order: usize) -> Self {
        Transform {
            a: FourierSeries::zeros(n, n, order),
            b0: FourierSeries::zeros(n, q, order),
            b1: MatrixSeries::zeros(n, q, q, order),
        }
    }

    pub fn n(&self) -> usize {
        self.a.n()
    }

    pub fn q(&self) -> usize {
        self.b0.d()
    }

    pub fn order(&self) -> usize {
        self.a.order()
    }

    /// Largest coefficient over all three mappings.
    pub fn max_coeff(&self) -> T {
        self.a.max_coeff().max(self.b0.max_coeff()).max(self.b1.max_coeff())
    }

    pub fn truncation_loss(&self) -> T {
        self.a.truncation_loss() + self.b0.truncation_loss() + self.b1.series.truncation_loss()
    }

    /// Image of the point `(xb, Yb)`.
    pub fn apply(&self, xb: &[T], yb: &[T]) -> (Vec<T>, Vec<T>) {
        let a = self.a.eval_re(xb);
        let b0 = self.b0.eval_re(xb);
        let b1 = self.b1.eval(xb);
        let x = xb.iter().zip(&a).map(|(&u, &v)| u + v).collect();
        let ybv = DVector::from_column_slice(yb);
        let y = DVector::from_vec(b0) + &ybv + b1 * ybv;
        (x, y.iter().copied().collect())
    }

    /// Inverse of `apply`: Newton on `x = xb + a(xb)`, then the affine solve.
    pub fn invert(&self, x: &[T], y: &[T]) -> Result<(Vec<T>, Vec<T>)> {
        let n = self.n();
        let partials: Vec<FourierSeries<T>> = (0..n).map(|l| self.a.partial(l)).collect();
        let a0 = self.a.eval_re(x);
        let mut xb: Vec<T> = x.iter().zip(&a0).map(|(&u, &v)| u - v).collect();
        let tol: T = lit(1e-15);
        let mut converged = false;
        for _ in 0..50 {
            let a = self.a.eval_re(&xb);
            let r = DVector::from_iterator(n, (0..n).map(|i| xb[i] + a[i] - x[i]));
            if r.amax() <= tol * (T::one() + xb.iter().fold(T::zero(), |m, v| m.max(v.abs()))) {
                converged = true;
                break;
            }
            let mut jac = DMatrix::<T>::identity(n, n);
            for (l, p) in partials.iter().enumerate() {
                let col = p.eval_re(&xb);
                for i in 0..n {
                    jac[(i, l)] += col[i];
                }
            }
            let step = jac
                .lu()
                .solve(&r)
                .ok_or_else(|| Error::RootFindFailure("singular angle Jacobian".into()))?;
            for i in 0..n {
                xb[i] -= step[i];
            }
        }
        if !converged {
            return Err(Error::RootFindFailure("angle inversion did not converge".into()));
        }
        let b0 = DVector::from_vec(self.b0.eval_re(&xb));
        let m = DMatrix::<T>::identity(self.q(), self.q()) + self.b1.eval(&xb);
        let yb = m
            .lu()
            .solve(&(DVector::from_column_slice(y) - b0))
            .ok_or_else(|| Error::RootFindFailure("singular phase Jacobian".into()))?;
        Ok((xb, yb.iter().copied().collect()))
    }

    /// `self o inc`: first `inc`, then `self`, re-expanded on `grid`.
    pub fn compose(&self, inc: &Transform<T>, grid: &TorusGrid) -> Transform<T> {
        let (n, q, order) = (self.n(), self.q(), self.order());
        let alpha = grid.synthesize(&inc.a);
        let beta0 = grid.synthesize(&inc.b0);
        let beta1 = grid.synthesize(&inc.b1.series);
        let rows: Vec<Vec<T>> = (0..grid.len())
            .into_par_iter()
            .map(|idx| {
                let xp: Vec<T> = grid.point(idx);
                let s: Vec<T> = (0..n).map(|i| xp[i] + alpha[i][idx]).collect();
                let a = self.a.eval_re(&s);
                let b0 = DVector::from_vec(self.b0.eval_re(&s));
                let b1 = self.b1.eval(&s);
                let be0 = DVector::from_iterator(q, (0..q).map(|i| beta0[i][idx]));
                let be1 = DMatrix::from_fn(q, q, |i, j| beta1[i * q + j][idx]);
                let mut out: Vec<T> = (0..n).map(|i| alpha[i][idx] + a[i]).collect();
                let nb0 = &b0 + &be0 + &b1 * &be0;
                out.extend(nb0.iter());
                let nb1 = &b1 + &be1 + &b1 * &be1;
                for i in 0..q {
                    for j in 0..q {
                        out.push(nb1[(i, j)]);
                    }
                }
                out
            })
            .collect();
        let width = n + q + q * q;
        let data: Vec<Vec<T>> = (0..width).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
        let all = grid.analyze(&data, order);
        let a = all.components(&(0..n).collect::<Vec<_>>());
        let b0 = all.components(&(n..n + q).collect::<Vec<_>>());
        let b1 = all.components(&(n + q..width).collect::<Vec<_>>());
        Transform {
            a,
            b0,
            b1: MatrixSeries::from_series(q, q, b1),
        }
    }
}

/// A parameter-free field grouped for fast evaluation.
struct Compiled<T: Real> {
    n: usize,
    q: usize,
    basis: MonomialBasis,
    modes: Vec<Vec<i64>>,
    // (target, monomial, mode, trig, coeff)
    entries: Vec<(usize, usize, usize, Trig, T)>,
}

impl<T: Real> Compiled<T> {
    fn new(field: &TermField<T>, params: &[T]) -> Self {
        let frozen = field.freeze(params);
        let basis = MonomialBasis::new(field.q, frozen.max_phase_degree().max(1));
        let canon = frozen.canonical();
        let mut mode_index: HashMap<Vec<i64>, usize> = HashMap::new();
        let mut modes = Vec::new();
        let mut entries = Vec::new();
        for ((target, trig, k, phase, _), c) in canon {
            if c == T::zero() {
                continue;
            }
            let mi = *mode_index.entry(k.clone()).or_insert_with(|| {
                modes.push(k.clone());
                modes.len() - 1
            });
            let mono = basis.index_of(&phase).expect("degree within basis");
            entries.push((target, mono, mi, trig, c));
        }
        Compiled {
            n: field.n,
            q: field.q,
            basis,
            modes,
            entries,
        }
    }

    /// Coefficients `c[target * len + monomial]` of the field at angle `x`.
    fn coefficients(&self, x: &[T]) -> Vec<T> {
        let trig: Vec<(T, T)> = self
            .modes
            .iter()
            .map(|k| {
                let th = MultiIndex(k.clone()).dot(x);
                (th.cos(), th.sin())
            })
            .collect();
        let len = self.basis.len();
        let mut c = vec![T::zero(); (self.n + self.q) * len];
        for &(t, mono, mi, tr, coeff) in &self.entries {
            let f = match tr {
                Trig::Cos => trig[mi].0,
                Trig::Sin => trig[mi].1,
            };
            c[t * len + mono] += coeff * f;
        }
        c
    }
}

/// Values of a transform and its angle derivatives on a grid.
struct GridTransform<T: Real> {
    a: Vec<Vec<T>>,
    // da[i * n + l] = d a_i / d x_l
    da: Vec<Vec<T>>,
    b0: Vec<Vec<T>>,
    db0: Vec<Vec<T>>,
    b1: Vec<Vec<T>>,
    // db1[l][i * q + j]
    db1: Vec<Vec<Vec<T>>>,
}

impl<T: Real> GridTransform<T> {
    fn new(t: &Transform<T>, grid: &TorusGrid) -> Self {
        let n = t.n();
        let q = t.q();
        let a = grid.synthesize(&t.a);
        let b0 = grid.synthesize(&t.b0);
        let b1 = grid.synthesize(&t.b1.series);
        let pa: Vec<Vec<Vec<T>>> = (0..n).map(|l| grid.synthesize(&t.a.partial(l))).collect();
        let pb0: Vec<Vec<Vec<T>>> = (0..n).map(|l| grid.synthesize(&t.b0.partial(l))).collect();
        let db1 = (0..n).map(|l| grid.synthesize(&t.b1.series.partial(l))).collect();
        let da = (0..n * n).map(|c| pa[c % n][c / n].clone()).collect();
        let db0 = (0..q * n).map(|c| pb0[c % n][c / n].clone()).collect();
        GridTransform { a, da, b0, db0, b1, db1 }
    }
}

/// Push-forward of `field` (parameters fixed to `params`) under `t`, kept
/// to Taylor degree `degree` in `Yb` and Fourier order `order`.
pub fn conjugate<T: Real>(
    field: &TermField<T>,
    params: &[T],
    t: &Transform<T>,
    grid: &TorusGrid,
    degree: u32,
    order: usize,
) -> Result<FtField<T>> {
    let (n, q) = (field.n, field.q);
    if t.n() != n || t.q() != q || grid.n() != n {
        return Err(Error::InvalidInput("transform and field dimensions differ".into()));
    }
    let comp = Compiled::new(field, params);
    let out_basis = MonomialBasis::new(q, degree);
    let gt = GridTransform::new(t, grid);
    let nout = out_basis.len();
    let width = (n + q) * nout;
    let rows: Vec<Vec<T>> = (0..grid.len())
        .into_par_iter()
        .map(|idx| point_values(&comp, &out_basis, &gt, grid, idx))
        .collect::<Result<Vec<_>>>()?;
    let data: Vec<Vec<T>> = (0..width).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
    let series = grid.analyze(&data, order);
    Ok(FtField {
        n,
        q,
        basis: out_basis,
        series,
    })
}

fn point_values<T: Real>(
    comp: &Compiled<T>,
    ob: &MonomialBasis,
    gt: &GridTransform<T>,
    grid: &TorusGrid,
    idx: usize,
) -> Result<Vec<T>> {
    let (n, q) = (comp.n, comp.q);
    let nin = comp.basis.len();
    let nout = ob.len();
    let xb: Vec<T> = grid.point(idx);
    let x: Vec<T> = (0..n).map(|i| xb[i] + gt.a[i][idx]).collect();
    let c = comp.coefficients(&x);
    // Y_v = B0_v + sum_j (delta_vj + B1_vj) Yb_j
    let lin: Vec<Vec<T>> = (0..q)
        .map(|v| {
            let mut p = ob.zero();
            p[0] = gt.b0[v][idx];
            for j in 0..q {
                let d = if v == j { T::one() } else { T::zero() };
                p[ob.var(j)] = d + gt.b1[v * q + j][idx];
            }
            p
        })
        .collect();
    let subs = comp.basis.substitute(&lin, ob);
    let mut vals: Vec<Vec<T>> = vec![ob.zero(); n + q];
    for t in 0..n + q {
        for mono in 0..nin {
            let cm = c[t * nin + mono];
            if cm == T::zero() {
                continue;
            }
            for (o, &s) in vals[t].iter_mut().zip(&subs[mono]) {
                *o += cm * s;
            }
        }
    }
    // xb' = (I + da)^{-1} V_x
    let jac = DMatrix::from_fn(n, n, |i, l| {
        let d = if i == l { T::one() } else { T::zero() };
        d + gt.da[i * n + l][idx]
    });
    let jinv = jac
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("angle map is not invertible on the grid".into()))?;
    let mut xdot: Vec<Vec<T>> = vec![ob.zero(); n];
    for i in 0..n {
        for l in 0..n {
            let w = jinv[(i, l)];
            for (o, &s) in xdot[i].iter_mut().zip(&vals[l]) {
                *o += w * s;
            }
        }
    }
    // Yb' = (I + B1)^{-1} (V_Y - dB0 xb' - sum_l (d_l B1 Yb) xb'_l)
    let mut rhs: Vec<Vec<T>> = vals[n..].to_vec();
    for i in 0..q {
        for l in 0..n {
            let w = gt.db0[i * n + l][idx];
            if w != T::zero() {
                for (o, &s) in rhs[i].iter_mut().zip(&xdot[l]) {
                    *o -= w * s;
                }
            }
        }
        for l in 0..n {
            let mut p = ob.zero();
            for j in 0..q {
                p[ob.var(j)] = gt.db1[l][i * q + j][idx];
            }
            let prod = ob.mul(&p, &xdot[l]);
            for (o, &s) in rhs[i].iter_mut().zip(&prod) {
                *o -= s;
            }
        }
    }
    let m = DMatrix::from_fn(q, q, |i, j| {
        let d = if i == j { T::one() } else { T::zero() };
        d + gt.b1[i * q + j][idx]
    });
    let minv = m
        .try_inverse()
        .ok_or_else(|| Error::InvalidInput("phase map is not invertible on the grid".into()))?;
    let mut out = Vec::with_capacity((n + q) * nout);
    for row in &xdot {
        out.extend_from_slice(row);
    }
    for i in 0..q {
        for mono in 0..nout {
            let mut acc = T::zero();
            for j in 0..q {
                acc += minv[(i, j)] * rhs[j][mono];
            }
            out.push(acc);
        }
    }
    Ok(out)
}

/// `true` when the loss of `ft` is within `bound`, else `TruncationOverflow`.
pub fn check_truncation<T: Real>(ft: &FtField<T>, bound: f64) -> Result<()> {
    let loss = to_f64(ft.series.truncation_loss());
    if loss > bound {
        Err(Error::TruncationOverflow { loss, bound })
    } else {
        Ok(())
    }
}

/// Coefficient-wise distance between a dense field and its reversed image
/// under `(x, Y) -> (-x, S Y)`, relative to `1 + max coeff`.
pub fn ft_reversibility_defect<T: Real>(ft: &FtField<T>, s: &DMatrix<T>) -> T {
    let (n, q) = (ft.n, ft.q);
    let b = &ft.basis;
    let len = b.len();
    // monomials under Y -> S Y
    let lin: Vec<Vec<T>> = (0..q)
        .map(|v| {
            let mut p = b.zero();
            for j in 0..q {
                p[b.var(j)] = s[(v, j)];
            }
            p
        })
        .collect();
    let subs = b.substitute(&lin, b);
    let targets = n + q;
    // -DG = diag(I_n, -S)
    let mut ndg = DMatrix::<T>::zeros(targets, targets);
    for i in 0..n {
        ndg[(i, i)] = T::one();
    }
    for i in 0..q {
        for j in 0..q {
            ndg[(n + i, n + j)] = -s[(i, j)];
        }
    }
    let d = targets * len;
    let mut k = DMatrix::<T>::zeros(d, d);
    for t2 in 0..targets {
        for t in 0..targets {
            let g = ndg[(t2, t)];
            if g == T::zero() {
                continue;
            }
            for e in 0..len {
                for e2 in 0..len {
                    let pe = subs[e][e2];
                    if pe != T::zero() {
                        k[(t2 * len + e2, t * len + e)] += g * pe;
                    }
                }
            }
        }
    }
    let img = ft.series.reflect().map_target(&k);
    let scale = T::one() + ft.series.max_coeff();
    img.sub(&ft.series).max_coeff() / scale
}
