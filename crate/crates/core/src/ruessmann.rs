//! Nondegeneracy of frequency maps and persistence of tori along a
//! parameter domain, using the frequency itself as an auxiliary parameter.

use std::collections::HashMap;
use std::sync::Mutex;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diophantine::{check_pair, DiophantineParams};
use crate::error::{Error, Result};
use crate::linalg;
use crate::normalizer::{normalize, verify_torus, NormalizationResult, NormalizerConfig, TorusCheck, TorusCheckOptions};
use crate::revsystem::{check_reversibility, ReversibleFamily};
use crate::scalar::{lit, to_f64, Real};

/// Relative singular-value threshold of the rank test.
pub const RANK_TOL: f64 = 1e-9;

/// `coeff * prod_i u_i^exps[i]` added to output `component`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyTerm {
    pub component: usize,
    pub coeff: f64,
    #[serde(default)]
    pub exps: Vec<u32>,
}

/// Polynomial map `R^inputs -> R^outputs`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolyMap {
    pub inputs: usize,
    pub outputs: usize,
    pub terms: Vec<PolyTerm>,
}

impl PolyMap {
    pub fn eval<T: Real>(&self, u: &[T]) -> Vec<T> {
        assert_eq!(u.len(), self.inputs);
        let mut out = vec![T::zero(); self.outputs];
        for t in &self.terms {
            let mut v: T = lit(t.coeff);
            for (x, &e) in u.iter().zip(&t.exps) {
                v *= x.powi(e as i32);
            }
            out[t.component] += v;
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.terms {
            if t.component >= self.outputs || t.exps.len() > self.inputs {
                return Err(Error::InvalidInput("polynomial term out of range".into()));
            }
        }
        Ok(())
    }
}

/// Frequency map `F(sigma, mu)` on a box of `mu`; `sigma_dim = 0` gives a
/// plain curve `H(mu)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyCurve {
    pub map: PolyMap,
    #[serde(default)]
    pub sigma_dim: usize,
    /// `[lo, hi]` per `mu` coordinate.
    pub domain: Vec<(f64, f64)>,
}

impl FrequencyCurve {
    pub fn new(map: PolyMap, sigma_dim: usize, domain: Vec<(f64, f64)>) -> Result<Self> {
        map.validate()?;
        if map.inputs != sigma_dim + domain.len() {
            return Err(Error::InvalidInput("map inputs must be sigma_dim + dim(domain)".into()));
        }
        if domain.iter().any(|&(a, b)| !(a <= b)) {
            return Err(Error::InvalidInput("empty parameter box".into()));
        }
        Ok(FrequencyCurve { map, sigma_dim, domain })
    }

    /// Polynomial curve with no `sigma` dependence, from per-component
    /// `(coeff, exps)` lists.
    pub fn polynomial(components: &[Vec<(f64, Vec<u32>)>], domain: Vec<(f64, f64)>) -> Result<Self> {
        let terms = components
            .iter()
            .enumerate()
            .flat_map(|(c, ts)| ts.iter().map(move |(coeff, exps)| PolyTerm { component: c, coeff: *coeff, exps: exps.clone() }))
            .collect();
        let map = PolyMap { inputs: domain.len(), outputs: components.len(), terms };
        Self::new(map, 0, domain)
    }

    pub fn n(&self) -> usize {
        self.map.outputs
    }

    pub fn s(&self) -> usize {
        self.domain.len()
    }

    pub fn eval<T: Real>(&self, sigma: &[T], mu: &[T]) -> Vec<T> {
        let u: Vec<T> = sigma.iter().chain(mu).copied().collect();
        self.map.eval(&u)
    }

    /// `F(0, mu)`.
    pub fn eval_curve<T: Real>(&self, mu: &[T]) -> Vec<T> {
        self.eval(&vec![T::zero(); self.sigma_dim], mu)
    }

    /// `count` points per axis, endpoints included.
    pub fn grid(&self, count: usize) -> Vec<Vec<f64>> {
        let axes: Vec<Vec<f64>> = self
            .domain
            .iter()
            .map(|&(a, b)| {
                if count <= 1 {
                    vec![0.5 * (a + b)]
                } else {
                    (0..count).map(|i| a + (b - a) * i as f64 / (count - 1) as f64).collect()
                }
            })
            .collect();
        let mut out = vec![vec![]];
        for ax in &axes {
            out = out
                .into_iter()
                .flat_map(|p: Vec<f64>| ax.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                }))
                .collect();
        }
        out
    }

    fn random_point(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.domain
            .iter()
            .map(|&(a, b)| if a == b { a } else { rng.gen_range(a..b) })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Nondegeneracy {
    Nondegenerate { singular_values: Vec<f64> },
    /// Unit normal of a hyperplane through the origin containing the samples.
    Degenerate { rank: usize, normal: Vec<f64> },
}

impl Nondegeneracy {
    pub fn is_nondegenerate(&self) -> bool {
        matches!(self, Nondegeneracy::Nondegenerate { .. })
    }
}

/// Rank of the `n x samples` matrix of curve values. One-dimensional
/// domains are sampled uniformly, higher ones from ChaCha8 seeded with `seed`.
pub fn is_ruessmann_nondegenerate(curve: &FrequencyCurve, samples: usize, seed: u64) -> Result<Nondegeneracy> {
    let n = curve.n();
    if samples < n {
        return Err(Error::InvalidInput(format!("need at least {n} samples")));
    }
    let points = if curve.s() == 1 {
        curve.grid(samples)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..samples).map(|_| curve.random_point(&mut rng)).collect()
    };
    let mut m = DMatrix::<f64>::zeros(n, points.len());
    for (j, p) in points.iter().enumerate() {
        for (i, v) in curve.eval_curve(p).into_iter().enumerate() {
            m[(i, j)] = v;
        }
    }
    let svd = m.svd(true, false);
    let sv: Vec<f64> = svd.singular_values.iter().copied().collect();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    let rank = sv.iter().filter(|&&s| smax > 0.0 && s > RANK_TOL * smax).count();
    if rank == n {
        return Ok(Nondegeneracy::Nondegenerate { singular_values: sv });
    }
    let u = svd.u.expect("requested");
    let imin = (0..sv.len()).min_by(|&a, &b| sv[a].total_cmp(&sv[b])).unwrap_or(0);
    let mut normal: Vec<f64> = u.column(imin).iter().copied().collect();
    if let Some(first) = normal.iter().find(|v| v.abs() > 1e-12) {
        if *first < 0.0 {
            normal.iter_mut().for_each(|v| *v = -*v);
        }
    }
    Ok(Nondegeneracy::Degenerate { rank, normal })
}

/// `min |<k, omega>| |k|^tau` over `0 < |k| <= kmax`.
pub fn effective_gamma(omega: &[f64], tau: f64, kmax: u64) -> f64 {
    check_pair(omega, &[], &DiophantineParams::new(tau, 0.0, kmax)).margin
}

/// Monte-Carlo share of `mu` whose `F(0, mu)` fails the Diophantine
/// condition, for each of `gammas`. The same samples serve every gamma,
/// so the fractions are monotone in gamma.
pub fn diophantine_fractions(curve: &FrequencyCurve, tau: f64, gammas: &[f64], kmax: u64, samples: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..samples).map(|_| curve.random_point(&mut rng)).collect();
    let gstar: Vec<f64> = points
        .par_iter()
        .map(|mu| effective_gamma(&curve.eval_curve(mu), tau, kmax))
        .collect();
    gammas
        .iter()
        .map(|&g| gstar.iter().filter(|&&s| s < g).count() as f64 / samples.max(1) as f64)
        .collect()
}

pub fn diophantine_fraction(curve: &FrequencyCurve, tau: f64, gamma: f64, kmax: u64, samples: usize, seed: u64) -> f64 {
    diophantine_fractions(curve, tau, &[gamma], kmax, samples, seed)[0]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PersistenceConfig {
    pub tau: f64,
    /// Acceptance threshold for `F#(mu)`.
    pub gamma: f64,
    /// `0` means twice the normalizer order.
    pub horizon: u64,
    /// Grid points per `mu` axis.
    pub grid: usize,
    pub normalizer: NormalizerConfig,
    pub max_iter: usize,
    /// Fixed-point steps below this count as converged.
    pub step_tol: f64,
    /// Declared contraction factor.
    pub contraction: f64,
    pub max_halvings: usize,
    pub torus: TorusCheckOptions,
    pub deviation_tol: f64,
}

impl Default for PersistenceConfig {
    fn default() -> Self {
        PersistenceConfig {
            tau: 1.5,
            gamma: 1e-2,
            horizon: 0,
            grid: 20,
            normalizer: NormalizerConfig::default(),
            max_iter: 40,
            step_tol: 1e-11,
            contraction: 0.5,
            max_halvings: 4,
            torus: TorusCheckOptions::default(),
            deviation_tol: 1e-6,
        }
    }
}

impl PersistenceConfig {
    fn horizon(&self) -> u64 {
        if self.horizon == 0 {
            2 * self.normalizer.order as u64
        } else {
            self.horizon
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PointStatus {
    Accepted,
    /// `F#(mu)` misses the Diophantine condition at the configured gamma.
    NotDiophantine,
    Failed { error: String },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PersistencePoint {
    pub mu: Vec<f64>,
    pub status: PointStatus,
    pub upsilon: Vec<f64>,
    pub fsharp: Vec<f64>,
    pub theta: Vec<f64>,
    /// `min |<k, F#>| |k|^tau - gamma`.
    pub margin: f64,
    pub phi_residual: f64,
    pub upsilon_residual: f64,
    /// Largest parity defect of the final transform and of the conjugated
    /// fields met along the way.
    pub symmetry_defect: f64,
    pub torus: Option<TorusCheck>,
}

impl PersistencePoint {
    fn failed(mu: &[f64], e: &Error) -> Self {
        PersistencePoint {
            mu: mu.to_vec(),
            status: PointStatus::Failed { error: e.to_string() },
            upsilon: vec![],
            fsharp: vec![],
            theta: vec![],
            margin: f64::NAN,
            phi_residual: f64::NAN,
            upsilon_residual: f64::NAN,
            symmetry_defect: f64::NAN,
            torus: None,
        }
    }

    pub fn accepted(&self) -> bool {
        self.status == PointStatus::Accepted
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PersistenceReport {
    pub points: Vec<PersistencePoint>,
    /// Share of grid points not accepted.
    pub rejected_fraction: f64,
    pub horizon: u64,
}

impl PersistenceReport {
    pub fn accepted(&self) -> impl Iterator<Item = &PersistencePoint> {
        self.points.iter().filter(|p| p.accepted())
    }
}

type Key = Vec<u64>;

fn key<T: Real>(a: &[T], b: &[T]) -> Key {
    a.iter().chain(b).map(|&v| to_f64(v).to_bits()).collect()
}

/// Normalizer runs for one grid point, cached by exact `(omega, mu)`.
struct Solver<'a, T: Real> {
    family: &'a ReversibleFamily<T>,
    curve: &'a FrequencyCurve,
    cfg: &'a PersistenceConfig,
    cache: Mutex<HashMap<Key, NormalizationResult<T>>>,
}

impl<'a, T: Real> Solver<'a, T> {
    fn normal(&self, omega: &[T], mu: &[T]) -> Result<NormalizationResult<T>> {
        let k = key(omega, mu);
        if let Some(r) = self.cache.lock().expect("cache lock").get(&k) {
            return Ok(r.clone());
        }
        let r = normalize(self.family, omega, mu, &self.cfg.normalizer)?;
        self.cache.lock().expect("cache lock").insert(k, r.clone());
        Ok(r)
    }

    /// `G(omega) = F(v, mu + w) - u`; its fixed point solves the frequency equation.
    fn frequency_map(&self, omega: &[T], mu: &[T]) -> Result<Vec<T>> {
        let r = self.normal(omega, mu)?;
        let shifted: Vec<T> = mu.iter().zip(&r.w).map(|(&a, &b)| a + b).collect();
        let f = self.curve.eval(&r.v, &shifted);
        Ok(f.iter().zip(&r.u).map(|(&a, &b)| a - b).collect())
    }

    /// Damped fixed point `x <- x + lambda (G(x) - x)`, halving `lambda`
    /// whenever a step fails to contract by the declared factor.
    fn fixed_point<G>(&self, name: &str, x0: Vec<T>, g: G) -> Result<(Vec<T>, f64)>
    where
        G: Fn(&[T]) -> Result<Vec<T>>,
    {
        let mut x = x0;
        let mut lambda = 1.0;
        let mut halvings = 0;
        let mut prev = f64::INFINITY;
        for _ in 0..self.cfg.max_iter {
            let gx = g(&x)?;
            let step = gx.iter().zip(&x).fold(0.0f64, |m, (&a, &b)| m.max(to_f64(a - b).abs()));
            if step <= self.cfg.step_tol {
                return Ok((x, step));
            }
            if prev.is_finite() && prev > 100.0 * self.cfg.step_tol && step >= self.cfg.contraction * prev {
                halvings += 1;
                if halvings > self.cfg.max_halvings {
                    return Err(Error::ImplicitSolveFailure {
                        equation: name.into(),
                        reason: format!("step {step:e} after {prev:e}, contraction below {} not reached", self.cfg.contraction),
                    });
                }
                lambda *= 0.5;
            }
            prev = step;
            let l: T = lit(lambda);
            x = x.iter().zip(&gx).map(|(&a, &b)| a + l * (b - a)).collect();
        }
        Err(Error::ImplicitSolveFailure {
            equation: name.into(),
            reason: format!("no convergence in {} steps", self.cfg.max_iter),
        })
    }

    fn phi(&self, mu: &[T]) -> Result<(Vec<T>, f64)> {
        let start = self.curve.eval_curve(mu);
        self.fixed_point("Phi", start, |om| self.frequency_map(om, mu))
    }

    /// `mu0 = mu - w(Phi(mu0), mu0)`.
    fn upsilon(&self, mu: &[T]) -> Result<(Vec<T>, f64)> {
        self.fixed_point("Upsilon", mu.to_vec(), |mu0| {
            let (om, _) = self.phi(mu0)?;
            let r = self.normal(&om, mu0)?;
            Ok(mu.iter().zip(&r.w).map(|(&a, &b)| a - b).collect())
        })
    }

    fn point(&self, mu: &[f64]) -> Result<PersistencePoint> {
        let mu_t: Vec<T> = mu.iter().map(|&v| lit(v)).collect();
        let (mu0, upsilon_residual) = self.upsilon(&mu_t)?;
        let (fsharp, phi_residual) = self.phi(&mu0)?;
        let r = self.normal(&fsharp, &mu0)?;
        let theta = r.v.clone();
        let fs: Vec<f64> = fsharp.iter().map(|&v| to_f64(v)).collect();
        let margin = check_pair(&fs, &[], &DiophantineParams::new(self.cfg.tau, self.cfg.gamma, self.cfg.horizon())).margin;
        let mut out = PersistencePoint {
            mu: mu.to_vec(),
            status: PointStatus::NotDiophantine,
            upsilon: mu0.iter().map(|&v| to_f64(v)).collect(),
            fsharp: fs,
            theta: theta.iter().map(|&v| to_f64(v)).collect(),
            margin,
            phi_residual,
            upsilon_residual,
            symmetry_defect: r.diagnostics.transform_commute_defect.max(r.diagnostics.steps.reversibility_defect),
            torus: None,
        };
        if margin >= 0.0 {
            // the original system at sigma = Theta(mu), mu
            let mut params = self.curve.eval(&theta, &mu_t);
            params.extend(theta.iter().copied());
            params.extend(mu_t.iter().copied());
            let chk = verify_torus(&self.family.field(), &params, &r.transform(), &fsharp, &self.cfg.torus)?;
            out.status = if chk.max_deviation <= self.cfg.deviation_tol {
                PointStatus::Accepted
            } else {
                PointStatus::Failed {
                    error: format!("torus deviation {:e} above {:e}", chk.max_deviation, self.cfg.deviation_tol),
                }
            };
            out.torus = Some(chk);
        }
        Ok(out)
    }
}

/// Runs the frequency and parameter solves on every grid point of the
/// curve's domain. `family` is the extended system with `omega` as a
/// parameter; `curve` gives `F(sigma, mu)`.
pub fn persistence_pipeline<T: Real>(
    family: &ReversibleFamily<T>,
    curve: &FrequencyCurve,
    cfg: &PersistenceConfig,
) -> Result<PersistenceReport> {
    if curve.n() != family.n() || curve.sigma_dim != family.m() || curve.s() != family.s() {
        return Err(Error::InvalidInput("frequency map and family dimensions differ".into()));
    }
    let rep = check_reversibility(family);
    if !rep.ok() {
        return Err(Error::InvalidInput(format!("family is not reversible: {} violations", rep.violations.len())));
    }
    if !is_ruessmann_nondegenerate(curve, (4 * curve.n()).max(cfg.grid), 0)?.is_nondegenerate() {
        return Err(Error::InvalidInput("frequency curve is degenerate".into()));
    }
    let solver = Solver {
        family,
        curve,
        cfg,
        cache: Mutex::new(HashMap::new()),
    };
    let grid = curve.grid(cfg.grid);
    let points: Vec<PersistencePoint> = grid
        .par_iter()
        .map(|mu| solver.point(mu).unwrap_or_else(|e| PersistencePoint::failed(mu, &e)))
        .collect();
    let rejected = points.iter().filter(|p| !p.accepted()).count();
    Ok(PersistenceReport {
        rejected_fraction: rejected as f64 / points.len().max(1) as f64,
        points,
        horizon: cfg.horizon(),
    })
}

/// `max |F#(mu) - F(0, mu)|` over the evaluated points.
pub fn frequency_drift(report: &PersistenceReport, curve: &FrequencyCurve) -> f64 {
    report
        .points
        .iter()
        .filter(|p| !p.fsharp.is_empty())
        .map(|p| {
            let f = curve.eval_curve(&p.mu);
            linalg::max_abs_vec(&f.iter().zip(&p.fsharp).map(|(a, b)| a - b).collect::<Vec<_>>())
        })
        .fold(0.0, f64::max)
}
