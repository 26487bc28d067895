//! Fourier-Taylor vector fields: trigonometric in the angles, polynomial in the
//! phase variables `Y` and the parameters `P`.
//!
//! A [`TermField`] is a sparse list of monomial terms and is the exact input
//! representation of a family. A [`FtField`] is the dense result of pushing a
//! field through a change of variables: one Fourier series per
//! `(target, monomial)` pair, with parameters frozen.

use std::collections::{BTreeMap, HashMap};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::fourier::{FourierSeries, MultiIndex};
use crate::scalar::{lit, to_f64, Real};

/// Monomials in `nvars` variables of total degree `<= degree`, graded:
/// index 0 is the constant and index `1 + i` is the variable `i`.
#[derive(Clone, Debug, PartialEq)]
pub struct MonomialBasis {
    nvars: usize,
    degree: u32,
    monos: Vec<Vec<u32>>,
    index: HashMap<Vec<u32>, usize>,
    // product table, usize::MAX when the product exceeds the degree
    mul: Vec<usize>,
    // for each nonconstant monomial: (variable, index of monomial / variable)
    parent: Vec<(usize, usize)>,
}

impl MonomialBasis {
    pub fn new(nvars: usize, degree: u32) -> Self {
        let mut monos = Vec::new();
        for d in 0..=degree {
            let mut cur = vec![0u32; nvars];
            gen(nvars, 0, d, &mut cur, &mut monos);
        }
        let index: HashMap<Vec<u32>, usize> = monos.iter().cloned().enumerate().map(|(i, m)| (m, i)).collect();
        let len = monos.len();
        let mut mul = vec![usize::MAX; len * len];
        for a in 0..len {
            for b in 0..len {
                let s: Vec<u32> = monos[a].iter().zip(&monos[b]).map(|(x, y)| x + y).collect();
                if let Some(&i) = index.get(&s) {
                    mul[a * len + b] = i;
                }
            }
        }
        let parent = monos
            .iter()
            .map(|m| match m.iter().position(|&e| e > 0) {
                Some(v) => {
                    let mut q = m.clone();
                    q[v] -= 1;
                    (v, index[&q])
                }
                None => (usize::MAX, usize::MAX),
            })
            .collect();
        MonomialBasis {
            nvars,
            degree,
            monos,
            index,
            mul,
            parent,
        }
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.monos.len()
    }

    pub fn is_empty(&self) -> bool {
        self.monos.is_empty()
    }

    pub fn exponents(&self, i: usize) -> &[u32] {
        &self.monos[i]
    }

    pub fn degree_of(&self, i: usize) -> u32 {
        self.monos[i].iter().sum()
    }

    pub fn index_of(&self, exps: &[u32]) -> Option<usize> {
        self.index.get(exps).copied()
    }

    /// Index of `Y_var`.
    pub fn var(&self, var: usize) -> usize {
        1 + var
    }

    /// `(v, j)` with monomial `i = Y_v * monomial j`; undefined for the constant.
    pub fn parent(&self, i: usize) -> (usize, usize) {
        self.parent[i]
    }

    pub fn zero<T: Real>(&self) -> Vec<T> {
        vec![T::zero(); self.len()]
    }

    pub fn one<T: Real>(&self) -> Vec<T> {
        let mut p = self.zero();
        p[0] = T::one();
        p
    }

    /// `out += a * b`, truncated at the basis degree.
    pub fn mul_acc<T: Real>(&self, a: &[T], b: &[T], out: &mut [T]) {
        let len = self.len();
        for (i, &ai) in a.iter().enumerate() {
            if ai == T::zero() {
                continue;
            }
            let row = &self.mul[i * len..(i + 1) * len];
            for (j, &bj) in b.iter().enumerate() {
                let t = row[j];
                if t != usize::MAX && bj != T::zero() {
                    out[t] += ai * bj;
                }
            }
        }
    }

    pub fn mul<T: Real>(&self, a: &[T], b: &[T]) -> Vec<T> {
        let mut out = self.zero();
        self.mul_acc(a, b, &mut out);
        out
    }

    /// Value of a polynomial at `y`.
    pub fn eval<T: Real>(&self, p: &[T], y: &[T]) -> T {
        let vals = self.monomial_values(y);
        p.iter().zip(&vals).fold(T::zero(), |a, (&c, &v)| a + c * v)
    }

    /// Values of every basis monomial at `y`.
    pub fn monomial_values<T: Real>(&self, y: &[T]) -> Vec<T> {
        let mut v = vec![T::one(); self.len()];
        for i in 1..self.len() {
            let (var, j) = self.parent[i];
            v[i] = v[j] * y[var];
        }
        v
    }

    /// Polynomials `prod_v L_v^{e_v}` for every monomial `e` of this basis,
    /// where the `L_v` live in `out_basis`; products are truncated there.
    pub fn substitute<T: Real>(&self, lin: &[Vec<T>], out_basis: &MonomialBasis) -> Vec<Vec<T>> {
        let mut polys: Vec<Vec<T>> = Vec::with_capacity(self.len());
        polys.push(out_basis.one());
        for i in 1..self.len() {
            let (var, j) = self.parent[i];
            let p = out_basis.mul(&polys[j], &lin[var]);
            polys.push(p);
        }
        polys
    }
}

fn gen(nvars: usize, pos: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
    if pos + 1 >= nvars {
        if nvars > 0 {
            cur[pos] = left;
            out.push(cur.clone());
            cur[pos] = 0;
        } else if left == 0 {
            out.push(vec![]);
        }
        return;
    }
    for e in (0..=left).rev() {
        cur[pos] = e;
        gen(nvars, pos + 1, left - e, cur, out);
    }
    cur[pos] = 0;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trig {
    Cos,
    Sin,
}

/// `coeff * trig(<k,x>) * Y^phase * P^param` in component `target`.
#[derive(Clone, Debug, PartialEq)]
pub struct Term<T: Real> {
    pub target: usize,
    pub coeff: T,
    pub trig: Trig,
    pub k: Vec<i64>,
    pub phase: Vec<u32>,
    pub param: Vec<u32>,
}

impl<T: Real> Term<T> {
    pub fn angle_factor(&self, x: &[T]) -> T {
        let th = MultiIndex(self.k.clone()).dot(x);
        match self.trig {
            Trig::Cos => th.cos(),
            Trig::Sin => th.sin(),
        }
    }

    pub fn param_factor(&self, p: &[T]) -> T {
        self.param
            .iter()
            .zip(p)
            .fold(T::one(), |a, (&e, &v)| a * v.powi(e as i32))
    }

    pub fn phase_degree(&self) -> u32 {
        self.phase.iter().sum()
    }
}

/// Key of a term after merging like terms: `(target, trig, canonical k, phase, param)`.
pub type TermKey = (usize, Trig, Vec<i64>, Vec<u32>, Vec<u32>);

/// Sparse Fourier-Taylor vector field on `T^n x R^q` with `nparams` parameters.
/// Targets `0..n` are the angle components, `n..n+q` the phase components.
#[derive(Clone, Debug, PartialEq)]
pub struct TermField<T: Real> {
    pub n: usize,
    pub q: usize,
    pub nparams: usize,
    pub terms: Vec<Term<T>>,
}

impl<T: Real> TermField<T> {
    pub fn new(n: usize, q: usize, nparams: usize) -> Self {
        TermField {
            n,
            q,
            nparams,
            terms: Vec::new(),
        }
    }

    pub fn targets(&self) -> usize {
        self.n + self.q
    }

    pub fn push(&mut self, term: Term<T>) {
        assert!(term.target < self.targets());
        assert_eq!(term.k.len(), self.n);
        assert_eq!(term.phase.len(), self.q);
        assert_eq!(term.param.len(), self.nparams);
        if term.coeff != T::zero() {
            self.terms.push(term);
        }
    }

    pub fn extend(&mut self, other: &TermField<T>) {
        assert_eq!((self.n, self.q, self.nparams), (other.n, other.q, other.nparams));
        self.terms.extend(other.terms.iter().cloned());
    }

    pub fn max_phase_degree(&self) -> u32 {
        self.terms.iter().map(|t| t.phase_degree()).max().unwrap_or(0)
    }

    pub fn max_mode(&self) -> usize {
        self.terms
            .iter()
            .map(|t| t.k.iter().map(|k| k.unsigned_abs() as usize).sum())
            .max()
            .unwrap_or(0)
    }

    pub fn eval(&self, x: &[T], y: &[T], p: &[T]) -> Vec<T> {
        let mut out = vec![T::zero(); self.targets()];
        for t in &self.terms {
            let mono = t
                .phase
                .iter()
                .zip(y)
                .fold(T::one(), |a, (&e, &v)| a * v.powi(e as i32));
            out[t.target] += t.coeff * t.angle_factor(x) * mono * t.param_factor(p);
        }
        out
    }

    /// `dV/dP_j`.
    pub fn param_derivative(&self, j: usize) -> Self {
        let mut out = TermField::new(self.n, self.q, self.nparams);
        for t in &self.terms {
            let e = t.param[j];
            if e == 0 {
                continue;
            }
            let mut d = t.clone();
            d.coeff = t.coeff * lit::<T>(e as f64);
            d.param[j] -= 1;
            out.push(d);
        }
        out
    }

    /// Substitutes parameter values, leaving no parameters.
    pub fn freeze(&self, p: &[T]) -> Self {
        let mut out = TermField::new(self.n, self.q, 0);
        for t in &self.terms {
            out.push(Term {
                target: t.target,
                coeff: t.coeff * t.param_factor(p),
                trig: t.trig,
                k: t.k.clone(),
                phase: t.phase.clone(),
                param: vec![],
            });
        }
        out
    }

    /// Like terms merged, with `k` made canonical (`cos(-k) = cos k`,
    /// `sin(-k) = -sin k`) and `k = 0` sines dropped.
    pub fn canonical(&self) -> BTreeMap<TermKey, T> {
        let mut map: BTreeMap<TermKey, T> = BTreeMap::new();
        for t in &self.terms {
            let mi = MultiIndex(t.k.clone());
            let (k, sign) = if mi.is_zero() || mi.is_canonical() {
                (t.k.clone(), T::one())
            } else {
                (mi.neg().0, if t.trig == Trig::Sin { -T::one() } else { T::one() })
            };
            if mi.is_zero() && t.trig == Trig::Sin {
                continue;
            }
            *map.entry((t.target, t.trig, k, t.phase.clone(), t.param.clone()))
                .or_insert_with(T::zero) += sign * t.coeff;
        }
        map
    }

    /// The field `-DG . V o G` for `G(x, Y) = (-x, S Y)`; a field is
    /// reversible with respect to `G` iff it equals this image.
    pub fn reversed_image(&self, s: &DMatrix<T>) -> Self {
        assert_eq!(s.nrows(), self.q);
        let deg = self.max_phase_degree().max(1);
        let basis = MonomialBasis::new(self.q, deg);
        // L_v = (S Y)_v
        let lin: Vec<Vec<T>> = (0..self.q)
            .map(|v| {
                let mut p = basis.zero();
                for j in 0..self.q {
                    p[basis.var(j)] = s[(v, j)];
                }
                p
            })
            .collect();
        let subs = basis.substitute(&lin, &basis);
        let mut out = TermField::new(self.n, self.q, self.nparams);
        for t in &self.terms {
            let angle_sign = if t.trig == Trig::Sin { -T::one() } else { T::one() };
            let mono = basis.index_of(&t.phase).expect("degree within basis");
            let poly = &subs[mono];
            for (idx, &c) in poly.iter().enumerate() {
                if c == T::zero() {
                    continue;
                }
                let base = t.coeff * angle_sign * c;
                let phase = basis.exponents(idx).to_vec();
                if t.target < self.n {
                    out.push(Term {
                        target: t.target,
                        coeff: base,
                        trig: t.trig,
                        k: t.k.clone(),
                        phase: phase.clone(),
                        param: t.param.clone(),
                    });
                } else {
                    // -S applied to the phase components
                    let col = t.target - self.n;
                    for r in 0..self.q {
                        let w = -s[(r, col)];
                        if w != T::zero() {
                            out.push(Term {
                                target: self.n + r,
                                coeff: base * w,
                                trig: t.trig,
                                k: t.k.clone(),
                                phase: phase.clone(),
                                param: t.param.clone(),
                            });
                        }
                    }
                }
            }
        }
        out
    }

    /// Coefficients where the field and its reversed image disagree by more
    /// than `tol * (1 + max |coeff|)`.
    pub fn reversibility_defects(&self, s: &DMatrix<T>, tol: T) -> Vec<(TermKey, T)> {
        let a = self.canonical();
        let b = self.reversed_image(s).canonical();
        let scale = T::one() + a.values().fold(T::zero(), |m, &v| m.max(v.abs()));
        let mut keys: Vec<&TermKey> = a.keys().chain(b.keys()).collect();
        keys.sort();
        keys.dedup();
        keys.into_iter()
            .filter_map(|k| {
                let d = a.get(k).copied().unwrap_or_else(T::zero) - b.get(k).copied().unwrap_or_else(T::zero);
                (d.abs() > tol * scale).then(|| (k.clone(), d))
            })
            .collect()
    }

    /// Exact Fourier-Taylor form of a parameter-free field.
    pub fn to_ft(&self, degree: u32, order: usize) -> FtField<T> {
        assert_eq!(self.nparams, 0, "freeze parameters first");
        let basis = MonomialBasis::new(self.q, degree);
        let mut ft = FtField::zeros(self.n, self.q, basis, order);
        for t in &self.terms {
            let Some(mono) = ft.basis.index_of(&t.phase) else {
                continue;
            };
            let comp = ft.index(t.target, mono);
            let d = ft.series.d();
            let mut cos = vec![T::zero(); d];
            let mut sin = vec![T::zero(); d];
            match t.trig {
                Trig::Cos => cos[comp] = t.coeff,
                Trig::Sin => sin[comp] = t.coeff,
            }
            ft.series.add_trig(&t.k, &cos, &sin);
        }
        ft
    }
}

/// Dense Fourier-Taylor field: component `target * basis.len() + monomial`.
#[derive(Clone, Debug, PartialEq)]
pub struct FtField<T: Real> {
    pub n: usize,
    pub q: usize,
    pub basis: MonomialBasis,
    pub series: FourierSeries<T>,
}

impl<T: Real> FtField<T> {
    pub fn zeros(n: usize, q: usize, basis: MonomialBasis, order: usize) -> Self {
        let d = (n + q) * basis.len();
        FtField {
            n,
            q,
            basis,
            series: FourierSeries::zeros(n, d, order),
        }
    }

    pub fn targets(&self) -> usize {
        self.n + self.q
    }

    pub fn index(&self, target: usize, mono: usize) -> usize {
        target * self.basis.len() + mono
    }

    /// Scalar series of the coefficient of monomial `mono` in `target`.
    pub fn coefficient(&self, target: usize, mono: usize) -> FourierSeries<T> {
        self.series.component(self.index(target, mono))
    }

    /// The `Y = 0` values of `targets`, as one series.
    pub fn constant_part(&self, targets: std::ops::Range<usize>) -> FourierSeries<T> {
        let idx: Vec<usize> = targets.map(|t| self.index(t, 0)).collect();
        self.series.components(&idx)
    }

    /// Linear coefficients `d target / d Y_j` for the given rows, row-major.
    pub fn linear_part(&self, rows: std::ops::Range<usize>) -> crate::fourier::MatrixSeries<T> {
        let nr = rows.len();
        let idx: Vec<usize> = rows
            .flat_map(|t| (0..self.q).map(move |j| (t, j)))
            .map(|(t, j)| self.index(t, self.basis.var(j)))
            .collect();
        crate::fourier::MatrixSeries::from_series(nr, self.q, self.series.components(&idx))
    }

    pub fn eval(&self, x: &[T], y: &[T]) -> Vec<T> {
        let c = self.series.eval_re(x);
        let mv = self.basis.monomial_values(y);
        (0..self.targets())
            .map(|t| {
                (0..self.basis.len()).fold(T::zero(), |a, m| a + c[self.index(t, m)] * mv[m])
            })
            .collect()
    }

    pub fn truncation_loss(&self) -> f64 {
        to_f64(self.series.truncation_loss())
    }

    /// Sparse form with `nparams` unused parameters; coefficients below
    /// `drop` are skipped.
    pub fn to_terms(&self, nparams: usize, drop: T) -> TermField<T> {
        let mut out = TermField::new(self.n, self.q, nparams);
        let two = lit::<T>(2.0);
        for (k, c) in self.series.modes() {
            if !(k.is_zero() || k.is_canonical()) {
                continue;
            }
            for (comp, v) in c.iter().enumerate() {
                let (target, mono) = (comp / self.basis.len(), comp % self.basis.len());
                let pairs = if k.is_zero() {
                    [(Trig::Cos, v.re), (Trig::Sin, T::zero())]
                } else {
                    [(Trig::Cos, two * v.re), (Trig::Sin, -two * v.im)]
                };
                for (trig, coeff) in pairs {
                    if coeff.abs() > drop {
                        out.push(Term {
                            target,
                            coeff,
                            trig,
                            k: k.0.clone(),
                            phase: self.basis.exponents(mono).to_vec(),
                            param: vec![0; nparams],
                        });
                    }
                }
            }
        }
        out
    }
}
