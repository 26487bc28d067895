//! One Newton sweep: three linear solves, each followed by a push-forward.
//!
//! With `M0` the target linear part, the residual of the conjugated field is
//! split into
//!
//! * `e_x = xb'|_{Yb=0} - omega0` (angle equation),
//! * `e0 = Yb'|_{Yb=0}` (torus invariance),
//! * `E = dYb'/dYb|_{Yb=0} - M0` (normal linear part).
//!
//! The sweep kills `e0` with a translation `B0 -> B0 + beta0` and the drift
//! parameters, then `e_x` with an angle correction and the frequency
//! parameters, then `E` with `B1` and the versal parameters. Each solve only
//! perturbs the equations handled before it at second order.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::cohomology::{solve_commutator_mode, solve_normal, solve_scalar};
use crate::diophantine::DiophantineParams;
use crate::error::{Error, Result};
use crate::fourier::{FourierSeries, MatrixSeries, MultiIndex};
use crate::grid::TorusGrid;
use crate::linalg;
use crate::revmat::{InvolutionStructure, RevMatrix};
use crate::scalar::{cabs, creal, to_f64, Real};
use crate::taylor::{FtField, TermField};

use super::conjugate::{check_truncation, conjugate, ft_reversibility_defect, Transform};

const SOLVE_RCOND: f64 = 1e-12;
// Relative residual above which a linear solve counts as obstructed.
const SOLVE_RESIDUAL: f64 = 1e-8;
const SOLVE_FLOOR: f64 = 1e-14;
// Systems whose entries are all below this are roundoff, not data.
const MATRIX_FLOOR: f64 = 1e-13;

/// Where each parameter group lives and what the normal form should be.
#[derive(Clone, Debug)]
pub(crate) struct Layout<T: Real> {
    pub n: usize,
    pub q: usize,
    pub s: DMatrix<T>,
    pub inv: InvolutionStructure<T>,
    pub m0: DMatrix<T>,
    pub omega0: Vec<T>,
    pub omega_params: Range<usize>,
    pub drift_params: Range<usize>,
    pub versal_params: Range<usize>,
}

pub(crate) struct Residuals<T: Real> {
    pub ft: FtField<T>,
    pub ex: FourierSeries<T>,
    pub e0: FourierSeries<T>,
    pub e: MatrixSeries<T>,
    pub norm: T,
}

/// Running maxima over every field and solve of a run.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize)]
pub struct StepDiagnostics {
    /// Coefficient defect of the conjugated fields under the reversing map.
    pub reversibility_defect: f64,
    /// `|S E0 S + E0|` of the `k = 0` matrix obstruction.
    pub obstruction_parity_defect: f64,
    pub truncation_loss: f64,
    pub conjugations: usize,
}

pub(crate) struct Engine<'a, T: Real> {
    field: &'a TermField<T>,
    derivs: Vec<TermField<T>>,
    pub layout: Layout<T>,
    grid: TorusGrid,
    order: usize,
    dioph: DiophantineParams<T>,
    trunc_bound: f64,
    pub transform: Transform<T>,
    pub params: Vec<T>,
    pub diag: StepDiagnostics,
    cached: Option<Residuals<T>>,
}

impl<'a, T: Real> Engine<'a, T> {
    pub fn new(
        field: &'a TermField<T>,
        layout: Layout<T>,
        params: Vec<T>,
        order: usize,
        dioph: DiophantineParams<T>,
        trunc_bound: f64,
    ) -> Self {
        let derivs = (0..field.nparams).map(|j| field.param_derivative(j)).collect();
        Engine {
            field,
            derivs,
            grid: TorusGrid::for_order(layout.n, order),
            transform: Transform::identity(layout.n, layout.q, order),
            layout,
            order,
            dioph,
            trunc_bound,
            params,
            diag: StepDiagnostics::default(),
            cached: None,
        }
    }

    fn push_forward(&mut self, field: &TermField<T>, track: bool) -> Result<FtField<T>> {
        let ft = conjugate(field, &self.params, &self.transform, &self.grid, 1, self.order)?;
        check_truncation(&ft, self.trunc_bound)?;
        self.diag.conjugations += 1;
        self.diag.truncation_loss = self.diag.truncation_loss.max(ft.truncation_loss());
        if track {
            let d = to_f64(ft_reversibility_defect(&ft, &self.layout.s));
            self.diag.reversibility_defect = self.diag.reversibility_defect.max(d);
        }
        Ok(ft)
    }

    pub fn residuals(&mut self) -> Result<&Residuals<T>> {
        if self.cached.is_none() {
            let field = self.field;
            let ft = self.push_forward(field, true)?;
            let (n, q) = (self.layout.n, self.layout.q);
            let ex = ft
                .constant_part(0..n)
                .sub(&FourierSeries::constant(n, self.order, &self.layout.omega0));
            let e0 = ft.constant_part(n..n + q);
            let e = ft
                .linear_part(n..n + q)
                .sub(&MatrixSeries::constant(n, self.order, &self.layout.m0));
            let zero = T::zero();
            let norm = ex.strip_norm(zero).max(e0.strip_norm(zero)).max(e.series.strip_norm(zero));
            self.cached = Some(Residuals { ft, ex, e0, e, norm });
        }
        Ok(self.cached.as_ref().expect("filled above"))
    }

    pub fn residual_norm(&mut self) -> Result<T> {
        Ok(self.residuals()?.norm)
    }

    /// `<Yb'|_0>`, `<xb'|_0>` and `<dYb'/dYb|_0>` of the push-forward of `dV/dp_j`.
    fn derivative_averages(&mut self, j: usize) -> Result<(Vec<T>, Vec<T>, DMatrix<T>)> {
        let d = self.derivs[j].clone();
        let ft = self.push_forward(&d, false)?;
        let (n, q) = (self.layout.n, self.layout.q);
        Ok((
            ft.constant_part(n..n + q).average(),
            ft.constant_part(0..n).average(),
            ft.linear_part(n..n + q).average(),
        ))
    }

    fn apply(&mut self, inc: &Transform<T>, dp: &[(usize, T)]) -> Result<()> {
        let next = self.transform.compose(inc, &self.grid);
        let loss = to_f64(next.truncation_loss());
        if loss > self.trunc_bound {
            return Err(Error::TruncationOverflow {
                loss,
                bound: self.trunc_bound,
            });
        }
        self.transform = next;
        for &(j, v) in dp {
            self.params[j] += v;
        }
        self.cached = None;
        Ok(())
    }

    /// Translation step: `(i nu - M0) beta0_k = e0_k`, and at `k = 0`
    /// `M0 beta0_0 + D dp = -<e0>` with `beta0_0` in `Fix S`.
    fn step_translation(&mut self) -> Result<()> {
        let (n, q) = (self.layout.n, self.layout.q);
        let e0 = self.residuals()?.e0.clone();
        let rev = RevMatrix::new(self.layout.m0.clone(), self.layout.inv.clone())?;
        let mut beta0 = solve_normal(&e0.without_average(), &self.layout.omega0, &rev, &self.dioph)?;
        let avg = DVector::from_vec(e0.average());
        let fplus = self.layout.inv.fix_plus().clone();
        let drift: Vec<usize> = self.layout.drift_params.clone().collect();
        let mut cols: Vec<DVector<T>> = (&self.layout.m0 * &fplus).column_iter().map(|c| c.into_owned()).collect();
        for &j in &drift {
            cols.push(DVector::from_vec(self.derivative_averages(j)?.0));
        }
        let a = from_columns(q, &cols);
        let sol = least_squares(&a, &(-&avg));
        let res = (&a * &sol + &avg).amax();
        if to_f64(res) > SOLVE_RESIDUAL * to_f64(avg.amax()) + SOLVE_FLOOR {
            return Err(Error::ZeroModeObstruction(to_f64(res)));
        }
        let np = fplus.ncols();
        let b00 = &fplus * sol.rows(0, np);
        beta0 = beta0.add(&FourierSeries::constant(n, self.order, b00.as_slice()));
        let dp: Vec<(usize, T)> = drift.iter().enumerate().map(|(i, &j)| (j, sol[np + i])).collect();
        let mut inc = Transform::identity(n, q, self.order);
        inc.b0 = beta0;
        self.apply(&inc, &dp)
    }

    /// Angle step: `d alpha . omega0 = e_x - <e_x>`, `D_x du = -<e_x>`.
    fn step_angle(&mut self) -> Result<()> {
        let (n, q) = (self.layout.n, self.layout.q);
        let ex = self.residuals()?.ex.clone();
        let alpha = solve_scalar(&ex.without_average(), &self.layout.omega0, &self.dioph)?;
        let avg = DVector::from_vec(ex.average());
        let freq: Vec<usize> = self.layout.omega_params.clone().collect();
        let mut cols = Vec::with_capacity(freq.len());
        for &j in &freq {
            cols.push(DVector::from_vec(self.derivative_averages(j)?.1));
        }
        let dx = from_columns(n, &cols);
        let du = least_squares(&dx, &(-&avg));
        let res = (&dx * &du + &avg).amax();
        if to_f64(res) > SOLVE_RESIDUAL * to_f64(avg.amax()) + SOLVE_FLOOR {
            return Err(Error::ZeroModeObstruction(to_f64(res)));
        }
        let dp: Vec<(usize, T)> = freq.iter().enumerate().map(|(i, &j)| (j, du[i])).collect();
        let mut inc = Transform::identity(n, q, self.order);
        inc.a = alpha;
        self.apply(&inc, &dp)
    }

    /// Linear-part step: `(i nu + ad) X_k = E_k` with `ad X = X M0 - M0 X`,
    /// and at `k = 0` `ad X - sum dp_j D_j = E_0` with `X` in `gl_{+S}`.
    fn step_linear(&mut self) -> Result<()> {
        let (n, q) = (self.layout.n, self.layout.q);
        let e = self.residuals()?.e.clone();
        let m0 = self.layout.m0.clone();
        let mut beta1 = FourierSeries::zeros(n, q * q, self.order);
        for (k, _) in e.series.modes() {
            if k.is_zero() || !k.is_canonical() {
                continue;
            }
            let nu = k.dot(&self.layout.omega0);
            let ek = e.mode_matrix(k);
            let x = solve_commutator_mode(nu, &m0, &ek);
            let mc = m0.map(creal);
            let lhs = &x * Complex::new(T::zero(), nu) + &x * &mc - &mc * &x;
            let res = (lhs - &ek).iter().fold(T::zero(), |m, &v| m.max(cabs(v)));
            let scale = ek.iter().fold(T::zero(), |m, &v| m.max(cabs(v)));
            if to_f64(res) > SOLVE_RESIDUAL * to_f64(scale) + SOLVE_FLOOR {
                return Err(Error::SingularMode {
                    k: k.0.clone(),
                    condition: f64::INFINITY,
                });
            }
            beta1.set_mode(k, x.transpose().iter().copied().collect());
        }
        let e0 = e.average();
        let s = &self.layout.s;
        let parity = to_f64(linalg::max_abs(&(s * &e0 * s + &e0)));
        self.diag.obstruction_parity_defect = self.diag.obstruction_parity_defect.max(parity);
        let basis = self.layout.inv.gl_plus_basis();
        let versal: Vec<usize> = self.layout.versal_params.clone().collect();
        let mut cols: Vec<DVector<T>> = basis
            .iter()
            .map(|g| flatten(&(&m0 * g - g * &m0)))
            .collect();
        for &j in &versal {
            cols.push(flatten(&self.derivative_averages(j)?.2));
        }
        let a = from_columns(q * q, &cols);
        let rhs = -flatten(&e0);
        let sol = least_squares(&a, &rhs);
        let res = (&a * &sol - &rhs).amax();
        if to_f64(res) > SOLVE_RESIDUAL * to_f64(rhs.amax()) + SOLVE_FLOOR {
            return Err(Error::VersalObstruction(to_f64(res)));
        }
        let mut x0 = DMatrix::zeros(q, q);
        for (g, &c) in basis.iter().zip(sol.iter()) {
            x0 += g * c;
        }
        let x0c: Vec<Complex<T>> = x0.transpose().iter().map(|&v| creal(v)).collect();
        beta1.set_mode(&MultiIndex::zero(n), x0c);
        let nb = basis.len();
        let dp: Vec<(usize, T)> = versal.iter().enumerate().map(|(i, &j)| (j, sol[nb + i])).collect();
        let mut inc = Transform::identity(n, q, self.order);
        inc.b1 = MatrixSeries::from_series(q, q, beta1);
        self.apply(&inc, &dp)
    }

    /// One full sweep; returns the residual after it.
    pub fn sweep(&mut self) -> Result<T> {
        self.step_translation()?;
        self.step_angle()?;
        self.step_linear()?;
        self.residual_norm()
    }
}

/// Min-norm least squares, treating a roundoff-level matrix as zero.
fn least_squares<T: Real>(a: &DMatrix<T>, b: &DVector<T>) -> DVector<T> {
    if a.ncols() == 0 || to_f64(a.amax()) <= MATRIX_FLOOR {
        return DVector::zeros(a.ncols());
    }
    linalg::lstsq_min_norm(a, b, SOLVE_RCOND)
}

fn from_columns<T: Real>(rows: usize, cols: &[DVector<T>]) -> DMatrix<T> {
    if cols.is_empty() {
        DMatrix::zeros(rows, 0)
    } else {
        DMatrix::from_columns(cols)
    }
}

fn flatten<T: Real>(m: &DMatrix<T>) -> DVector<T> {
    DVector::from_vec(linalg::flatten_row_major(m))
}
