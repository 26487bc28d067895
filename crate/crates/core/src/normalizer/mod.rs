//! Newton normalization of a perturbed reversible family to the form
//! `xb' = omega0 + O(Yb)`, `yb' = O2(Yb)`, `zb' = Q(omega0, mu0) zb + O2(Yb)`,
//! directly and through the parameter augmentation.

pub mod conjugate;
mod newton;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::diophantine::{is_diophantine_pair, DiophantineParams};
use crate::error::{Error, Result};
use crate::fourier::{FourierSeries, MatrixSeries, MultiIndex};
use crate::grid::TorusGrid;
use crate::linalg;
use crate::revmat::{is_versal, InvolutionStructure, RevMatrix, Unfolding};
use crate::revsystem::integrate::{integrate, sample_times, IntegrateOptions};
use crate::revsystem::{augment, ReversibleFamily};
use crate::scalar::{cabs, lit, to_f64, Real};
use crate::taylor::{FtField, TermField};

pub use conjugate::{check_truncation, conjugate, ft_reversibility_defect, Transform};
pub use newton::StepDiagnostics;

use newton::{Engine, Layout};

/// Relative coefficient tolerance of the transform parity identities.
pub const COMMUTE_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizerConfig {
    pub tau: f64,
    pub gamma: f64,
    /// Diophantine horizon; `0` means `2 * order`.
    pub horizon: u64,
    /// Fourier order `N`.
    pub order: usize,
    /// Taylor degree `D` accepted in the input family.
    pub degree: u32,
    pub tol: f64,
    pub max_iter: usize,
    /// Derivative order `L` of the smallness check.
    pub deriv_order: u32,
    /// Bound `eps` of the smallness check.
    pub eps: f64,
    pub cancel_tol: f64,
    /// Agreement of the direct and augmented routes, and of the averaged `W`.
    pub agreement_tol: f64,
    pub truncation_bound: f64,
    /// Run the direct route inside `normalize_augmented` for comparison.
    pub compare_direct: bool,
}

impl Default for NormalizerConfig {
    fn default() -> Self {
        NormalizerConfig {
            tau: 1.5,
            gamma: 1e-3,
            horizon: 0,
            order: 16,
            degree: 3,
            tol: 1e-10,
            max_iter: 12,
            deriv_order: 2,
            eps: 0.1,
            cancel_tol: 1e-9,
            agreement_tol: 1e-8,
            truncation_bound: 1e-6,
            compare_direct: true,
        }
    }
}

impl NormalizerConfig {
    pub fn horizon(&self) -> u64 {
        if self.horizon == 0 {
            2 * self.order as u64
        } else {
            self.horizon
        }
    }

    fn dioph<T: Real>(&self) -> DiophantineParams<T> {
        DiophantineParams::new(lit(self.tau), lit(self.gamma), self.horizon())
    }
}

/// Block structure of a block-diagonal phase involution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PhaseBlocks {
    pub sizes: Vec<usize>,
    /// Row-block letters: the translation block `i` is `{letter}0`, the
    /// linear block `(i, j)` is `{letter}{j + 1}`.
    pub letters: Vec<char>,
}

impl PhaseBlocks {
    /// `Y = (y, z)`.
    pub fn direct(m: usize, p: usize) -> Self {
        PhaseBlocks { sizes: vec![m, 2 * p], letters: vec!['b', 'c'] }
    }

    /// `Y = (y, sigma, z)`.
    pub fn augmented(m: usize, p: usize) -> Self {
        PhaseBlocks { sizes: vec![m, m, 2 * p], letters: vec!['b', 'c', 'd'] }
    }

    fn offsets(&self) -> Vec<usize> {
        let mut o = vec![0];
        for s in &self.sizes {
            o.push(o.last().unwrap() + s);
        }
        o
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CommuteViolation {
    pub identity: String,
    pub defect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TransformReport {
    /// Largest relative defect over all identities.
    pub max_defect: f64,
    pub violations: Vec<CommuteViolation>,
}

impl TransformReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn sign_label<T: Real>(s: &DMatrix<T>) -> &'static str {
    let n = s.nrows();
    if linalg::max_abs(&(s + DMatrix::identity(n, n))) == T::zero() {
        "-"
    } else if linalg::max_abs(&(s - DMatrix::identity(n, n))) == T::zero() {
        ""
    } else {
        "S "
    }
}

/// Checks that the transform commutes with `(x, Y) -> (-x, S Y)`:
/// `a` odd, `B0(-x) = S B0(x)`, `B1(-x) = S B1(x) S`, block by block.
pub fn check_transform_commutes<T: Real>(t: &Transform<T>, s: &DMatrix<T>, blocks: &PhaseBlocks) -> TransformReport {
    let off = blocks.offsets();
    let nb = blocks.sizes.len();
    let mut all = Vec::new();
    let rel = |d: T, scale: T| to_f64(d / (T::one() + scale));
    all.push((
        "a(-x) = -a(x)".to_string(),
        rel(t.a.reflect().add(&t.a).max_coeff(), t.a.max_coeff()),
    ));
    let sb0 = t.b0.map_target(s);
    let d0 = t.b0.reflect().sub(&sb0);
    let sb1 = t.b1.sandwich(s, s);
    let d1 = t.b1.reflect().sub(&sb1);
    let full = MatrixSeries::from_series(t.q(), 1, t.b0.clone());
    let d0m = MatrixSeries::from_series(t.q(), 1, d0);
    for i in 0..nb {
        let si = s.view((off[i], off[i]), (blocks.sizes[i], blocks.sizes[i])).into_owned();
        let name = format!("{}0", blocks.letters[i]);
        let defect = d0m.block(off[i], 0, blocks.sizes[i], 1).max_coeff();
        let scale = full.block(off[i], 0, blocks.sizes[i], 1).max_coeff();
        all.push((format!("{name}(-x) = {}{name}(x)", sign_label(&si)), rel(defect, scale)));
        for j in 0..nb {
            let sj = s.view((off[j], off[j]), (blocks.sizes[j], blocks.sizes[j])).into_owned();
            let name = format!("{}{}", blocks.letters[i], j + 1);
            let defect = d1.block(off[i], off[j], blocks.sizes[i], blocks.sizes[j]).max_coeff();
            let scale = t.b1.block(off[i], off[j], blocks.sizes[i], blocks.sizes[j]).max_coeff();
            let (l, r) = (sign_label(&si), sign_label(&sj));
            all.push((format!("{name}(-x) = {l}{name}(x){}", right_label(r)), rel(defect, scale)));
        }
    }
    let max_defect = all.iter().fold(0.0f64, |m, (_, d)| m.max(*d));
    let violations = all
        .into_iter()
        .filter(|(_, d)| *d > COMMUTE_TOL)
        .map(|(identity, defect)| CommuteViolation { identity, defect })
        .collect();
    TransformReport { max_defect, violations }
}

fn right_label(l: &str) -> &'static str {
    match l {
        "-" => " (-1)",
        "" => "",
        _ => " S",
    }
}

/// `sum_k max|c_k| max(1, |k|^l)`: bounds the sup of all derivatives of
/// order at most `l`.
pub fn derivative_majorant<T: Real>(s: &FourierSeries<T>, l: u32) -> T {
    s.modes().fold(T::zero(), |acc, (k, c)| {
        let mag = c.iter().fold(T::zero(), |m, &v| m.max(cabs(v)));
        let w = lit::<T>((k.norm() as f64).powi(l as i32).max(1.0));
        acc + mag * w
    })
}

/// Shared outcome of one Newton run.
#[derive(Clone, Debug)]
struct Run<T: Real> {
    transform: Transform<T>,
    params: Vec<T>,
    history: Vec<f64>,
    diag: StepDiagnostics,
    normal_form: FtField<T>,
}

fn run_newton<T: Real>(
    field: &TermField<T>,
    layout: Layout<T>,
    params0: Vec<T>,
    cfg: &NormalizerConfig,
    sweeps: usize,
    require_convergence: bool,
) -> Result<Run<T>> {
    if field.max_phase_degree() > cfg.degree {
        return Err(Error::InvalidInput(format!(
            "family has Taylor degree {} above D = {}",
            field.max_phase_degree(),
            cfg.degree
        )));
    }
    let mut eng = Engine::new(field, layout, params0, cfg.order, cfg.dioph(), cfg.truncation_bound);
    let mut r = to_f64(eng.residual_norm()?);
    let mut history = vec![r];
    let mut done = 0;
    while done < sweeps && r > cfg.tol {
        r = to_f64(eng.sweep()?);
        if !r.is_finite() {
            return Err(Error::NoConvergence { history });
        }
        history.push(r);
        done += 1;
    }
    if require_convergence && r > cfg.tol {
        return Err(Error::NoConvergence { history });
    }
    let normal_form = eng.residuals()?.ft.clone();
    log::debug!("newton residuals {:?}", history);
    Ok(Run {
        transform: eng.transform,
        params: eng.params,
        history,
        diag: eng.diag,
        normal_form,
    })
}

/// Diophantine pair, `det Q != 0` and versality of `mu -> Q(omega0, mu)`.
fn precheck<T: Real>(family: &ReversibleFamily<T>, omega0: &[T], mu0: &[T], cfg: &NormalizerConfig) -> Result<RevMatrix<T>> {
    if omega0.len() != family.n() || mu0.len() != family.s() {
        return Err(Error::InvalidInput("omega0 or mu0 has the wrong length".into()));
    }
    let q = family.rev_matrix(omega0, mu0)?;
    if family.p() > 0 && linalg::condition_number(q.q()) > crate::cohomology::MAX_CONDITION {
        return Err(Error::InvalidInput("Q(omega0, mu0) is singular".into()));
    }
    let dp = cfg.dioph::<T>();
    let rep = is_diophantine_pair(omega0, &q, &dp)?;
    if !rep.holds {
        let k = MultiIndex(rep.worst_k.clone());
        let bound = dp.bound(&k);
        let divisor = (rep.margin + dp.gamma) * lit::<T>(k.norm() as f64).powf(-dp.tau);
        return Err(Error::SmallDivisor {
            k: rep.worst_k,
            divisor: to_f64(divisor),
            bound: to_f64(bound),
        });
    }
    let unf = Unfolding::new(q.clone(), family.q_mu_derivatives(omega0, mu0))?;
    if !is_versal(&unf).is_versal() {
        return Err(Error::VersalObstruction(f64::NAN));
    }
    Ok(q)
}

fn direct_layout<T: Real>(family: &ReversibleFamily<T>, q0: &RevMatrix<T>, omega0: &[T]) -> Result<Layout<T>> {
    let (n, m, s) = (family.n(), family.m(), family.s());
    let sm = family.phase_involution();
    let zero = DMatrix::zeros(m, m);
    Ok(Layout {
        n,
        q: family.phase_dim(),
        inv: InvolutionStructure::new(sm.clone())?,
        s: sm,
        m0: linalg::direct_sum(&[&zero, q0.q()]),
        omega0: omega0.to_vec(),
        omega_params: 0..n,
        drift_params: n..n + m,
        versal_params: n + m..n + m + s,
    })
}

fn split_vector<T: Real>(s: &FourierSeries<T>, sizes: &[usize]) -> Vec<FourierSeries<T>> {
    let mut o = 0;
    sizes
        .iter()
        .map(|&k| {
            let part = s.components(&(o..o + k).collect::<Vec<_>>());
            o += k;
            part
        })
        .collect()
}

fn split_matrix<T: Real>(m: &MatrixSeries<T>, sizes: &[usize]) -> Vec<Vec<MatrixSeries<T>>> {
    let mut off = vec![0];
    for s in sizes {
        off.push(off.last().unwrap() + s);
    }
    (0..sizes.len())
        .map(|i| (0..sizes.len()).map(|j| m.block(off[i], off[j], sizes[i], sizes[j])).collect())
        .collect()
}

fn join_matrix<T: Real>(blocks: &[Vec<&MatrixSeries<T>>]) -> MatrixSeries<T> {
    let rows: usize = blocks.iter().map(|r| r[0].rows).sum();
    let cols: usize = blocks[0].iter().map(|b| b.cols).sum();
    let mut parts = Vec::with_capacity(rows * cols);
    for row in blocks {
        for i in 0..row[0].rows {
            for b in row {
                for j in 0..b.cols {
                    parts.push(b.entry(i, j));
                }
            }
        }
    }
    MatrixSeries::from_series(rows, cols, FourierSeries::stack(&parts))
}

/// Post-hoc checks shared by both routes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormalizationDiagnostics {
    pub iterations: usize,
    pub steps: StepDiagnostics,
    pub transform_commute_defect: f64,
    /// Largest derivative majorant (order `L`) of the mappings and shifts.
    pub smallness: f64,
    pub smallness_ok: bool,
    pub truncation_loss: f64,
}

fn diagnostics<T: Real>(run: &Run<T>, shifts: &[T], s: &DMatrix<T>, blocks: &PhaseBlocks, cfg: &NormalizerConfig) -> NormalizationDiagnostics {
    let rep = check_transform_commutes(&run.transform, s, blocks);
    let l = cfg.deriv_order;
    let t = &run.transform;
    let smallness = [
        derivative_majorant(&t.a, l),
        derivative_majorant(&t.b0, l),
        derivative_majorant(&t.b1.series, l),
        linalg::max_abs_vec(shifts),
    ]
    .iter()
    .fold(0.0f64, |m, &v| m.max(to_f64(v)));
    NormalizationDiagnostics {
        iterations: run.history.len() - 1,
        steps: run.diag,
        transform_commute_defect: rep.max_defect,
        smallness,
        smallness_ok: smallness <= cfg.eps,
        truncation_loss: to_f64(t.truncation_loss()).max(run.normal_form.truncation_loss()),
    }
}

/// Transform and shifts of the direct route.
#[derive(Clone, Debug)]
pub struct NormalizationResult<T: Real> {
    pub a: FourierSeries<T>,
    pub b0: FourierSeries<T>,
    pub b1: MatrixSeries<T>,
    pub b2: MatrixSeries<T>,
    pub c0: FourierSeries<T>,
    pub c1: MatrixSeries<T>,
    pub c2: MatrixSeries<T>,
    /// `omega = omega0 + u`.
    pub u: Vec<T>,
    /// `sigma = v`.
    pub v: Vec<T>,
    /// `mu = mu0 + w`.
    pub w: Vec<T>,
    pub omega0: Vec<T>,
    pub mu0: Vec<T>,
    pub residual_history: Vec<f64>,
    pub config: NormalizerConfig,
    pub diagnostics: NormalizationDiagnostics,
    /// Push-forward at the shifted parameters, Taylor degree 1.
    pub normal_form: FtField<T>,
}

impl<T: Real> NormalizationResult<T> {
    pub fn transform(&self) -> Transform<T> {
        Transform {
            a: self.a.clone(),
            b0: FourierSeries::stack(&[self.b0.clone(), self.c0.clone()]),
            b1: join_matrix(&[vec![&self.b1, &self.b2], vec![&self.c1, &self.c2]]),
        }
    }

    /// `(omega0 + u, v, mu0 + w)`.
    pub fn shifted_params(&self) -> Vec<T> {
        let om: Vec<T> = self.omega0.iter().zip(&self.u).map(|(&a, &b)| a + b).collect();
        let mu: Vec<T> = self.mu0.iter().zip(&self.w).map(|(&a, &b)| a + b).collect();
        om.into_iter().chain(self.v.iter().copied()).chain(mu).collect()
    }

    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().expect("history is never empty")
    }

    /// Integrates the family from a point of the computed torus.
    pub fn verify_torus(&self, family: &ReversibleFamily<T>, opts: &TorusCheckOptions) -> Result<TorusCheck> {
        verify_torus(&family.field(), &self.shifted_params(), &self.transform(), &self.omega0, opts)
    }
}

fn direct_result<T: Real>(
    family: &ReversibleFamily<T>,
    omega0: &[T],
    mu0: &[T],
    run: Run<T>,
    cfg: &NormalizerConfig,
) -> NormalizationResult<T> {
    let (n, m, p) = (family.n(), family.m(), family.p());
    let u: Vec<T> = (0..n).map(|i| run.params[i] - omega0[i]).collect();
    let v: Vec<T> = run.params[n..n + m].to_vec();
    let w: Vec<T> = (0..family.s()).map(|j| run.params[n + m + j] - mu0[j]).collect();
    let shifts: Vec<T> = u.iter().chain(&v).chain(&w).copied().collect();
    let blocks = PhaseBlocks::direct(m, p);
    let diagnostics = diagnostics(&run, &shifts, &family.phase_involution(), &blocks, cfg);
    let b0s = split_vector(&run.transform.b0, &blocks.sizes);
    let mut b1s = split_matrix(&run.transform.b1, &blocks.sizes);
    let c_row = b1s.pop().unwrap();
    let b_row = b1s.pop().unwrap();
    let [b1, b2]: [MatrixSeries<T>; 2] = b_row.try_into().unwrap();
    let [c1, c2]: [MatrixSeries<T>; 2] = c_row.try_into().unwrap();
    NormalizationResult {
        a: run.transform.a.clone(),
        b0: b0s[0].clone(),
        c0: b0s[1].clone(),
        b1,
        b2,
        c1,
        c2,
        u,
        v,
        w,
        omega0: omega0.to_vec(),
        mu0: mu0.to_vec(),
        residual_history: run.history,
        config: cfg.clone(),
        diagnostics,
        normal_form: run.normal_form,
    }
}

/// Newton iteration to the normal form at `(omega0, mu0)`.
pub fn normalize<T: Real>(
    family: &ReversibleFamily<T>,
    omega0: &[T],
    mu0: &[T],
    cfg: &NormalizerConfig,
) -> Result<NormalizationResult<T>> {
    let q0 = precheck(family, omega0, mu0, cfg)?;
    let layout = direct_layout(family, &q0, omega0)?;
    let params0 = family.params(omega0, &vec![T::zero(); family.m()], mu0);
    let run = run_newton(&family.field(), layout, params0, cfg, cfg.max_iter, true)?;
    Ok(direct_result(family, omega0, mu0, run, cfg))
}

/// A single sweep from the identity: the increment and the residuals
/// before and after it. Nothing is done when the residual is already
/// below `cfg.tol`.
pub fn newton_step<T: Real>(
    family: &ReversibleFamily<T>,
    omega0: &[T],
    mu0: &[T],
    cfg: &NormalizerConfig,
) -> Result<(NormalizationResult<T>, f64, f64)> {
    let q0 = precheck(family, omega0, mu0, cfg)?;
    let layout = direct_layout(family, &q0, omega0)?;
    let params0 = family.params(omega0, &vec![T::zero(); family.m()], mu0);
    // already converged data only carries grid roundoff; no sweep then
    let run = run_newton(&family.field(), layout, params0, cfg, 1, false)?;
    let before = run.history[0];
    let after = *run.history.last().unwrap();
    Ok((direct_result(family, omega0, mu0, run, cfg), before, after))
}

/// The structural identities of the augmented route.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cancellations {
    /// `max |W_ij|`.
    pub w_norm: f64,
    pub c1_norm: f64,
    pub c3_norm: f64,
    pub c0_variation: f64,
    pub c2_variation: f64,
    /// `<(dc0/dx) chi1> (I + <b1>)^{-1}`, with `chi1 = d xb' / d yb`.
    pub w_formula: Vec<Vec<f64>>,
    pub w_formula_defect: f64,
}

/// Agreement of the augmented route restricted to `sigma_b = 0` with the
/// direct route.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DirectComparison {
    /// Grid sup of `a`, `b0` and the `z` translation differences.
    pub torus_defect: f64,
    /// `u` vs `u`, `mu` shifts, and `<c0>` vs the `sigma` shift.
    pub shift_defect: f64,
    /// Difference of the angle rows' `yb, zb` coefficients. These depend on
    /// the normalisation of `B1` on the centraliser of `M0` and are reported,
    /// not asserted.
    pub angle_coupling_defect: f64,
}

impl DirectComparison {
    pub fn normal_form_defect(&self) -> f64 {
        self.torus_defect.max(self.shift_defect)
    }
}

#[derive(Clone, Debug)]
pub struct AugmentedNormalizationResult<T: Real> {
    pub a: FourierSeries<T>,
    /// Translations of `y`, `sigma`, `z`.
    pub b0: FourierSeries<T>,
    pub c0: FourierSeries<T>,
    pub d0: FourierSeries<T>,
    pub b1: MatrixSeries<T>,
    pub b2: MatrixSeries<T>,
    pub b3: MatrixSeries<T>,
    pub c1: MatrixSeries<T>,
    pub c2: MatrixSeries<T>,
    pub c3: MatrixSeries<T>,
    pub d1: MatrixSeries<T>,
    pub d2: MatrixSeries<T>,
    pub d3: MatrixSeries<T>,
    /// `omega = omega0 + u`.
    pub u: Vec<T>,
    /// `mu = mu0 + v`.
    pub v: Vec<T>,
    /// `Lambda = W`.
    pub w: DMatrix<T>,
    pub omega0: Vec<T>,
    pub mu0: Vec<T>,
    pub residual_history: Vec<f64>,
    pub config: NormalizerConfig,
    pub diagnostics: NormalizationDiagnostics,
    pub normal_form: FtField<T>,
    pub cancellations: Cancellations,
    pub direct: Option<(NormalizationResult<T>, DirectComparison)>,
}

impl<T: Real> AugmentedNormalizationResult<T> {
    pub fn transform(&self) -> Transform<T> {
        Transform {
            a: self.a.clone(),
            b0: FourierSeries::stack(&[self.b0.clone(), self.c0.clone(), self.d0.clone()]),
            b1: join_matrix(&[
                vec![&self.b1, &self.b2, &self.b3],
                vec![&self.c1, &self.c2, &self.c3],
                vec![&self.d1, &self.d2, &self.d3],
            ]),
        }
    }

    /// `(omega0 + u, mu0 + v, W)` in the augmented layout.
    pub fn shifted_params(&self) -> Vec<T> {
        let mut p: Vec<T> = self.omega0.iter().zip(&self.u).map(|(&a, &b)| a + b).collect();
        p.extend(self.mu0.iter().zip(&self.v).map(|(&a, &b)| a + b));
        p.extend(linalg::flatten_row_major(&self.w));
        p
    }

    pub fn final_residual(&self) -> f64 {
        *self.residual_history.last().expect("history is never empty")
    }

    /// Every identity with its value and tolerance, in a fixed order.
    pub fn identities(&self) -> Vec<(&'static str, f64, f64)> {
        let c = &self.cancellations;
        let t = self.config.cancel_tol;
        let mut out = vec![
            ("W = 0", c.w_norm, t),
            ("c1 = 0", c.c1_norm, t),
            ("c3 = 0", c.c3_norm, t),
            ("c0 independent of x", c.c0_variation, t),
            ("c2 independent of x", c.c2_variation, t),
            ("W = <(dc0/dx) chi1> (I + <b1>)^-1", c.w_formula_defect, self.config.agreement_tol),
        ];
        if let Some((_, cmp)) = &self.direct {
            out.push(("augmented and direct normal forms agree", cmp.normal_form_defect(), self.config.agreement_tol));
        }
        out
    }

    /// `CancellationFailure` on the first identity above its tolerance.
    pub fn verify(&self) -> Result<()> {
        for (identity, value, tolerance) in self.identities() {
            if !(value <= tolerance) {
                return Err(Error::CancellationFailure {
                    identity: identity.to_string(),
                    value,
                    tolerance,
                });
            }
        }
        Ok(())
    }
}

/// Runs the augmented route without asserting the cancellations.
pub fn normalize_augmented_unchecked<T: Real>(
    family: &ReversibleFamily<T>,
    omega0: &[T],
    mu0: &[T],
    cfg: &NormalizerConfig,
) -> Result<AugmentedNormalizationResult<T>> {
    let q0 = precheck(family, omega0, mu0, cfg)?;
    let (n, m, p, s) = (family.n(), family.m(), family.p(), family.s());
    let lambda0 = DMatrix::zeros(m, m);
    let aug = augment(family, &lambda0)?;
    let sm = aug.phase_involution();
    let nil = DMatrix::from_fn(2 * m, 2 * m, |i, j| if j == i + m { T::one() } else { T::zero() });
    let layout = Layout {
        n,
        q: aug.phase_dim(),
        inv: InvolutionStructure::new(sm.clone())?,
        s: sm.clone(),
        m0: linalg::direct_sum(&[&nil, q0.q()]),
        omega0: omega0.to_vec(),
        omega_params: 0..n,
        drift_params: n..n,
        versal_params: n..n + s + m * m,
    };
    let params0 = aug.params(omega0, mu0, &lambda0);
    let run = run_newton(aug.field(), layout, params0, cfg, cfg.max_iter, true)?;
    let u: Vec<T> = (0..n).map(|i| run.params[i] - omega0[i]).collect();
    let v: Vec<T> = (0..s).map(|j| run.params[n + j] - mu0[j]).collect();
    let w = linalg::from_row_major(m, m, &run.params[n + s..]);
    let mut shifts: Vec<T> = u.iter().chain(&v).copied().collect();
    shifts.extend(linalg::flatten_row_major(&w));
    let blocks = PhaseBlocks::augmented(m, p);
    let diagnostics = diagnostics(&run, &shifts, &sm, &blocks, cfg);
    let b0s = split_vector(&run.transform.b0, &blocks.sizes);
    let b1s = split_matrix(&run.transform.b1, &blocks.sizes);
    let blk = |i: usize, j: usize| b1s[i][j].clone();
    let (c0, c1, c2, c3) = (b0s[1].clone(), blk(1, 0), blk(1, 1), blk(1, 2));
    let zero = T::zero();

    // <(dc0/dx) chi1> (I + <b1>)^{-1}
    let grid = TorusGrid::for_order(n, cfg.order);
    let chi = run.normal_form.linear_part(0..n).block(0, 0, n, m);
    let chi_vals = grid.synthesize(&chi.series);
    let dc0: Vec<Vec<Vec<T>>> = (0..n).map(|l| grid.synthesize(&c0.partial(l))).collect();
    let mut acc = DMatrix::<T>::zeros(m, m);
    for idx in 0..grid.len() {
        for i in 0..m {
            for j in 0..m {
                let mut v = zero;
                for l in 0..n {
                    v += dc0[l][i][idx] * chi_vals[l * m + j][idx];
                }
                acc[(i, j)] += v;
            }
        }
    }
    acc /= lit::<T>(grid.len() as f64);
    let ib1 = DMatrix::identity(m, m) + blk(0, 0).average();
    let w_formula = match ib1.try_inverse() {
        Some(inv) => acc * inv,
        None => return Err(Error::InvalidInput("I + <b1> is singular".into())),
    };
    let cancellations = Cancellations {
        w_norm: to_f64(linalg::max_abs(&w)),
        c1_norm: to_f64(c1.series.strip_norm(zero)),
        c3_norm: to_f64(c3.series.strip_norm(zero)),
        c0_variation: to_f64(c0.variation()),
        c2_variation: to_f64(c2.variation()),
        w_formula: linalg::to_rows(&w_formula),
        w_formula_defect: to_f64(linalg::max_abs(&(&w_formula - &w))),
    };
    let mut out = AugmentedNormalizationResult {
        a: run.transform.a.clone(),
        b0: b0s[0].clone(),
        c0,
        d0: b0s[2].clone(),
        b1: blk(0, 0),
        b2: blk(0, 1),
        b3: blk(0, 2),
        c1,
        c2,
        c3,
        d1: blk(2, 0),
        d2: blk(2, 1),
        d3: blk(2, 2),
        u,
        v,
        w,
        omega0: omega0.to_vec(),
        mu0: mu0.to_vec(),
        residual_history: run.history,
        config: cfg.clone(),
        diagnostics,
        normal_form: run.normal_form,
        cancellations,
        direct: None,
    };
    if cfg.compare_direct {
        let direct = normalize(family, omega0, mu0, cfg)?;
        let cmp = compare_routes(&out, &direct, &grid);
        out.direct = Some((direct, cmp));
    }
    Ok(out)
}

/// Augmented route with every structural identity asserted.
pub fn normalize_augmented<T: Real>(
    family: &ReversibleFamily<T>,
    omega0: &[T],
    mu0: &[T],
    cfg: &NormalizerConfig,
) -> Result<AugmentedNormalizationResult<T>> {
    let out = normalize_augmented_unchecked(family, omega0, mu0, cfg)?;
    out.verify()?;
    Ok(out)
}

fn grid_sup<T: Real>(s: &FourierSeries<T>, grid: &TorusGrid) -> f64 {
    grid.synthesize(s)
        .iter()
        .flat_map(|c| c.iter())
        .fold(0.0f64, |m, &v| m.max(to_f64(v).abs()))
}

fn compare_routes<T: Real>(aug: &AugmentedNormalizationResult<T>, dir: &NormalizationResult<T>, grid: &TorusGrid) -> DirectComparison {
    let torus_defect = grid_sup(&aug.a.sub(&dir.a), grid)
        .max(grid_sup(&aug.b0.sub(&dir.b0), grid))
        .max(grid_sup(&aug.d0.sub(&dir.c0), grid));
    let diff = |x: &[T], y: &[T]| x.iter().zip(y).fold(0.0f64, |m, (&a, &b)| m.max(to_f64(a - b).abs()));
    let shift_defect = diff(&aug.u, &dir.u)
        .max(diff(&aug.v, &dir.w))
        .max(diff(&aug.c0.average(), &dir.v));
    let (n, m) = (aug.a.n(), aug.b0.d());
    let la = aug.normal_form.linear_part(0..n);
    let ld = dir.normal_form.linear_part(0..n);
    let qa = la.cols;
    let ya = la.block(0, 0, n, m).sub(&ld.block(0, 0, n, m));
    let za = la.block(0, 2 * m, n, qa - 2 * m).sub(&ld.block(0, m, n, ld.cols - m));
    DirectComparison {
        torus_defect,
        shift_defect,
        angle_coupling_defect: grid_sup(&ya.series, grid).max(grid_sup(&za.series, grid)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TorusCheckOptions {
    pub t_end: f64,
    pub samples: usize,
    /// Starting angle on the torus; zeros when empty.
    pub theta0: Vec<f64>,
    pub rtol: f64,
}

impl Default for TorusCheckOptions {
    fn default() -> Self {
        TorusCheckOptions {
            t_end: 100.0,
            samples: 200,
            theta0: vec![],
            rtol: 1e-12,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TorusCheck {
    /// `max |Yb|` along the trajectory in normalized coordinates.
    pub max_deviation: f64,
    /// `(xb(T) - xb(0)) / T`.
    pub rotation_vector: Vec<f64>,
    pub rotation_error: f64,
    pub accepted_steps: usize,
}

/// Starts on `t(theta0, 0)`, integrates the field at `params` and maps each
/// sample back through the inverse transform.
pub fn verify_torus<T: Real>(
    field: &TermField<T>,
    params: &[T],
    t: &Transform<T>,
    omega0: &[T],
    opts: &TorusCheckOptions,
) -> Result<TorusCheck> {
    let (n, q) = (field.n, field.q);
    let frozen = field.freeze(params);
    let theta: Vec<T> = if opts.theta0.is_empty() {
        vec![T::zero(); n]
    } else if opts.theta0.len() == n {
        opts.theta0.iter().map(|&v| lit(v)).collect()
    } else {
        return Err(Error::InvalidInput("theta0 has the wrong length".into()));
    };
    let (x0, y0) = t.apply(&theta, &vec![T::zero(); q]);
    let w0: Vec<T> = x0.into_iter().chain(y0).collect();
    let times = sample_times(lit::<T>(opts.t_end), opts.samples);
    let iopts = IntegrateOptions {
        rtol: lit(opts.rtol),
        atol: lit(opts.rtol),
        ..IntegrateOptions::default()
    };
    let empty: Vec<T> = vec![];
    let traj = integrate(|w: &[T]| frozen.eval(&w[..n], &w[n..], &empty), &w0, &times, &iopts)?;
    let mut max_dev = 0.0f64;
    let mut last = theta.clone();
    for st in &traj.states {
        let (xb, yb) = t.invert(&st[..n], &st[n..])?;
        max_dev = max_dev.max(to_f64(DVector::from_vec(yb).amax()));
        last = xb;
    }
    let rotation_vector: Vec<f64> = (0..n)
        .map(|i| to_f64((last[i] - theta[i]) / lit::<T>(opts.t_end)))
        .collect();
    let rotation_error = rotation_vector
        .iter()
        .zip(omega0)
        .fold(0.0f64, |m, (&r, &w)| m.max((r - to_f64(w)).abs()));
    Ok(TorusCheck {
        max_deviation: max_dev,
        rotation_vector,
        rotation_error,
        accepted_steps: traj.accepted,
    })
}
