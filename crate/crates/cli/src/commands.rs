//! One function per subcommand: typed config in, report fields out.

use std::fs;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use kamrev::cohomology::{solve_normal, solve_scalar, verify_estimate};
use kamrev::diophantine::{check_pair, classify_spectrum, effective_gammas, fit_linear_law, violation_fraction, DiophantineParams, SampleBox, SPECTRUM_TOL};
use kamrev::fourier::{FourierSeries, SeriesRecord};
use kamrev::linalg;
use kamrev::normalizer::{normalize as run_normalize, normalize_augmented_unchecked, NormalizerConfig, TorusCheckOptions};
use kamrev::revmat::{
    is_miniversal, is_versal, kernel_condition, miniversal_nilpotent as nilpotent, orbit_tangent, InvolutionStructure, RevMatrix,
    Unfolding, Versality,
};
use kamrev::revsystem::toys::{self, Poly2};
use kamrev::revsystem::{check_reversibility, random_perturbation, FamilySpec, PerturbationShape, ReversibleFamily};
use kamrev::ruessmann::{is_ruessmann_nondegenerate, persistence_pipeline, FrequencyCurve, PersistenceConfig};

use crate::report::{output, Failure, Outcome, Table};

pub struct Ctx {
    pub seed: u64,
    /// Directory of the config file; family paths are relative to it.
    pub config_dir: PathBuf,
}

type Run = Result<Outcome, Failure>;

fn parse<T: DeserializeOwned>(cfg: Value) -> Result<T, Failure> {
    serde_json::from_value(cfg).map_err(|e| Failure::Invalid(e.to_string()))
}

fn done(output: Value) -> Run {
    Ok(Outcome { output, table: None })
}

fn rows<T: Copy + serde::Serialize + nalgebra::Scalar>(m: &DMatrix<T>) -> Value {
    output(&(0..m.nrows()).map(|i| m.row(i).iter().copied().collect::<Vec<T>>()).collect::<Vec<_>>())
}

fn involution(r: &[Vec<f64>]) -> Result<InvolutionStructure<f64>, Failure> {
    Ok(InvolutionStructure::from_rows(r)?)
}

fn rev_matrix(q: &[Vec<f64>], inv: &InvolutionStructure<f64>) -> Result<RevMatrix<f64>, Failure> {
    if q.len() != inv.dim() || q.iter().any(|row| row.len() != inv.dim()) {
        return Err(Failure::Invalid("Q and R sizes differ".into()));
    }
    Ok(RevMatrix::new(linalg::from_rows(q), inv.clone())?)
}

fn fmt(v: f64) -> String {
    format!("{v:e}")
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DiophCheck {
    omega: Vec<f64>,
    #[serde(rename = "Q")]
    q: Option<Vec<Vec<f64>>>,
    #[serde(rename = "R")]
    r: Option<Vec<Vec<f64>>>,
    tau: f64,
    gamma: f64,
    horizon: u64,
}

pub fn dioph_check(cfg: Value, _: &Ctx) -> Run {
    let c: DiophCheck = parse(cfg)?;
    let params = DiophantineParams::new(c.tau, c.gamma, c.horizon);
    params.validate(c.omega.len())?;
    let spectrum = match (&c.q, &c.r) {
        (Some(q), Some(r)) => Some(classify_spectrum(&rev_matrix(q, &involution(r)?)?, SPECTRUM_TOL)?),
        (None, None) => None,
        _ => return Err(Failure::Invalid("Q and R must be given together".into())),
    };
    let beta = spectrum.as_ref().map(|s| s.beta.clone()).unwrap_or_default();
    let rep = check_pair(&c.omega, &beta, &params);
    done(json!({ "holds": rep.holds, "check": rep, "spectrum": spectrum }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct DiophMeasure {
    omega_box: Vec<(f64, f64)>,
    #[serde(default)]
    beta_box: Vec<(f64, f64)>,
    tau: f64,
    gammas: Vec<f64>,
    horizon: u64,
    samples: usize,
}

pub fn dioph_measure(cfg: Value, ctx: &Ctx) -> Run {
    let c: DiophMeasure = parse(cfg)?;
    for &g in &c.gammas {
        DiophantineParams::new(c.tau, g, c.horizon).validate(c.omega_box.len())?;
    }
    let sbox = SampleBox { omega: c.omega_box, beta: c.beta_box };
    let gstar = effective_gammas(&sbox, c.tau, c.samples, c.horizon, ctx.seed);
    let fractions: Vec<f64> = c.gammas.iter().map(|&g| violation_fraction(&gstar, g)).collect();
    let (slope, rel) = fit_linear_law(&c.gammas, &fractions);
    let table = Table {
        name: "fractions",
        header: vec!["gamma".into(), "fraction".into()],
        rows: c.gammas.iter().zip(&fractions).map(|(g, f)| vec![fmt(*g), fmt(*f)]).collect(),
    };
    let points: Vec<Value> = c.gammas.iter().zip(&fractions).map(|(g, f)| json!({ "gamma": g, "fraction": f })).collect();
    Ok(Outcome {
        output: json!({
            "samples": c.samples,
            "fractions": points,
            "linear_fit": { "slope": slope, "relative_residual": rel },
        }),
        table: Some(table),
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CohomologySolve {
    omega: Vec<f64>,
    tau: f64,
    gamma: f64,
    horizon: u64,
    data: SeriesRecord,
    #[serde(rename = "Q")]
    q: Option<Vec<Vec<f64>>>,
    #[serde(rename = "R")]
    r: Option<Vec<Vec<f64>>>,
    rho: Option<f64>,
    rho_prime: Option<f64>,
}

pub fn cohomology_solve(cfg: Value, _: &Ctx) -> Run {
    let c: CohomologySolve = parse(cfg)?;
    let f = FourierSeries::from_record(&c.data)?;
    if c.omega.len() != f.n() {
        return Err(Failure::Invalid("omega and data dimensions differ".into()));
    }
    let params = DiophantineParams::new(c.tau, c.gamma, c.horizon);
    params.validate(f.n())?;
    let (phi, lhs) = match (&c.q, &c.r) {
        (Some(q), Some(r)) => {
            let q = rev_matrix(q, &involution(r)?)?;
            if q.dim() != f.d() {
                return Err(Failure::Invalid("Q size differs from the data dimension".into()));
            }
            let phi = solve_normal(&f, &c.omega, &q, &params)?;
            let lhs = phi.directional_derivative(&c.omega).sub(&phi.map_target(q.q()));
            (phi, lhs)
        }
        (None, None) => {
            let phi = solve_scalar(&f, &c.omega, &params)?;
            let lhs = phi.directional_derivative(&c.omega);
            (phi, lhs)
        }
        _ => return Err(Failure::Invalid("Q and R must be given together".into())),
    };
    let residual = lhs.sub(&f).max_coeff();
    let estimate = match c.rho {
        Some(rho) => Some(verify_estimate(&f, &phi, &params, rho, c.rho_prime.unwrap_or(rho / 2.0))?),
        None => None,
    };
    done(json!({ "residual": residual, "estimate": estimate, "solution": phi.to_record() }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct VersalCheck {
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(default)]
    directions: Vec<Vec<Vec<f64>>>,
}

pub fn versal_check(cfg: Value, _: &Ctx) -> Run {
    let c: VersalCheck = parse(cfg)?;
    let inv = involution(&c.r)?;
    let q = rev_matrix(&c.q, &inv)?;
    let mut dirs = vec![];
    for d in &c.directions {
        dirs.push(rev_matrix(d, &inv)?.q().clone());
    }
    let u = Unfolding::new(q.clone(), dirs)?;
    let tangent = orbit_tangent(&q);
    let kc = kernel_condition(&q);
    let (versal, missing) = match is_versal(&u) {
        Versality::Versal { .. } => (true, Value::Null),
        Versality::NotVersal { missing } => (false, rows(&missing)),
    };
    done(json!({
        "versal": versal,
        "miniversal": is_miniversal(&u),
        "codimension": tangent.codim,
        "orbit_rank": tangent.rank,
        "parameters": u.len(),
        "missing_direction": missing,
        "kernel_condition": { "holds": kc.holds(), "epimorphism": kc.epimorphism() },
    }))
}

fn default_m() -> usize {
    2
}

fn default_samples() -> usize {
    20
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Nilpotent {
    #[serde(default = "default_m")]
    m: usize,
    #[serde(default = "default_samples")]
    samples: usize,
}

pub fn miniversal_nilpotent(cfg: Value, ctx: &Ctx) -> Run {
    let c: Nilpotent = parse(cfg)?;
    let nu = nilpotent(c.m)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let mut exact = true;
    let mut defect = 0.0f64;
    for _ in 0..c.samples {
        let lam = DMatrix::from_fn(c.m, c.m, |_, _| Ratio::new(rng.gen_range(-50i64..=50), rng.gen_range(1i64..=20)));
        exact &= nu.conjugation_exact(&lam);
        let lam = DMatrix::from_fn(c.m, c.m, |_, _| rng.gen_range(-1.0..1.0));
        defect = defect.max(nu.conjugation_defect(&lam));
    }
    done(json!({
        "m": c.m,
        "det_s": nu.det_s,
        "det_expected": nu.det_expected,
        "S": rows(&nu.s),
        "J_tilde": rows(&nu.j_tilde),
        "lambda_conjugation_defect": defect,
        "identities": {
            "det_formula": nu.det_s == nu.det_expected,
            "j_conjugation": nu.j_identity_exact,
            "lambda_conjugation_exact": exact,
            "lambda_conjugation_float": defect <= 1e-14,
        },
    }))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Ex1 {
    psi1: Poly2,
    psi2: Poly2,
}

pub fn toy_ex1(cfg: Value, _: &Ctx) -> Run {
    let c: Ex1 = parse(cfg)?;
    done(output(&toys::toy_ex1::<f64>(&c.psi1, &c.psi2)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Ex2 {
    psi2: Poly2,
}

pub fn toy_ex2(cfg: Value, _: &Ctx) -> Run {
    let c: Ex2 = parse(cfg)?;
    done(output(&toys::toy_ex2::<f64>(&c.psi2)?))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Grid {
    from: f64,
    to: f64,
    count: usize,
}

impl Grid {
    fn points(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.from];
        }
        (0..self.count)
            .map(|i| self.from + (self.to - self.from) * i as f64 / (self.count - 1) as f64)
            .collect()
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Linear {
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    #[serde(rename = "Q0")]
    q0: Vec<Vec<f64>>,
    #[serde(rename = "Q1", default)]
    q1: Option<Vec<Vec<f64>>>,
    psi0: Vec<f64>,
    #[serde(default)]
    psi1: Option<Vec<f64>>,
    mus: Grid,
}

pub fn toy_linear(cfg: Value, _: &Ctx) -> Run {
    let c: Linear = parse(cfg)?;
    let inv = involution(&c.r)?;
    let dim = inv.dim();
    let q0 = rev_matrix(&c.q0, &inv)?.q().clone();
    let q1 = match &c.q1 {
        Some(q) => rev_matrix(q, &inv)?.q().clone(),
        None => DMatrix::zeros(dim, dim),
    };
    let psi1 = c.psi1.clone().unwrap_or_else(|| vec![0.0; dim]);
    if c.psi0.len() != dim || psi1.len() != dim {
        return Err(Failure::Invalid("Psi and R sizes differ".into()));
    }
    let p0 = DVector::from_vec(c.psi0.clone());
    let p1 = DVector::from_vec(psi1);
    let mus = c.mus.points();
    let pts = toys::toy_linear(
        |mu: f64| RevMatrix::new(&q0 + &q1 * mu, inv.clone()),
        |mu: f64| &p0 + &p1 * mu,
        &mus,
    )?;
    let mut header = vec!["mu".to_string(), "residual".into(), "fix_defect".into()];
    header.extend((0..dim).map(|i| format!("delta_{i}")));
    let table_rows = pts
        .iter()
        .map(|p| {
            let mut r = vec![fmt(p.mu), fmt(p.residual), fmt(p.fix_defect)];
            r.extend(p.delta.iter().map(|&v| fmt(v)));
            r
        })
        .collect();
    let points: Vec<Value> = pts
        .iter()
        .map(|p| json!({ "mu": p.mu, "delta": p.delta.as_slice(), "residual": p.residual, "fix_defect": p.fix_defect }))
        .collect();
    Ok(Outcome {
        output: json!({ "points": points }),
        table: Some(Table { name: "points", header, rows: table_rows }),
    })
}

/// A family file path or an inline family.
#[derive(Deserialize)]
#[serde(untagged)]
enum FamilyRef {
    Path(String),
    Inline(FamilySpec),
}

fn load_family(r: &FamilyRef, pert: Option<&PerturbationShape>, ctx: &Ctx) -> Result<ReversibleFamily<f64>, Failure> {
    let spec = match r {
        FamilyRef::Inline(s) => s.clone(),
        FamilyRef::Path(p) => {
            let path = ctx.config_dir.join(p);
            let text = fs::read_to_string(&path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
            FamilySpec::from_json(&text)?
        }
    };
    let mut fam = ReversibleFamily::from_spec(&spec)?;
    if let Some(shape) = pert {
        fam = fam.with_perturbation(&random_perturbation(&fam, shape, ctx.seed));
    }
    let rep = check_reversibility(&fam);
    if !rep.ok() {
        return Err(Failure::Invalid(format!("family is not reversible ({} violations)", rep.violations.len())));
    }
    Ok(fam)
}

fn yes() -> bool {
    true
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Normalize {
    family: FamilyRef,
    omega0: Vec<f64>,
    mu0: Vec<f64>,
    #[serde(default)]
    normalizer: NormalizerConfig,
    perturbation: Option<PerturbationShape>,
    #[serde(default)]
    torus: TorusCheckOptions,
    #[serde(default = "yes")]
    verify_torus: bool,
    #[serde(default)]
    include_series: bool,
}

fn residual_table(h: &[f64]) -> Table {
    Table {
        name: "residuals",
        header: vec!["iteration".into(), "residual".into()],
        rows: h.iter().enumerate().map(|(i, r)| vec![i.to_string(), fmt(*r)]).collect(),
    }
}

pub fn normalize(cfg: Value, ctx: &Ctx) -> Run {
    let c: Normalize = parse(cfg)?;
    let fam = load_family(&c.family, c.perturbation.as_ref(), ctx)?;
    let res = run_normalize(&fam, &c.omega0, &c.mu0, &c.normalizer)?;
    log::info!("normalized in {} iterations", res.diagnostics.iterations);
    let mut out = json!({
        "omega0": res.omega0,
        "mu0": res.mu0,
        "u": res.u,
        "v": res.v,
        "w": res.w,
        "shifted_params": res.shifted_params(),
        "residual_history": res.residual_history,
        "final_residual": res.final_residual(),
        "diagnostics": res.diagnostics,
    });
    if c.include_series {
        let t = res.transform();
        out["transform"] = json!({ "a": t.a.to_record(), "b0": t.b0.to_record(), "b1": t.b1.series.to_record() });
    }
    let table = Some(residual_table(&res.residual_history));
    if c.verify_torus {
        match res.verify_torus(&fam, &c.torus) {
            Ok(chk) => out["torus"] = output(&chk),
            Err(error) => return Err(Failure::Compute { error, partial: Some(out) }),
        }
    }
    Ok(Outcome { output: out, table })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NormalizeAugmented {
    family: FamilyRef,
    omega0: Vec<f64>,
    mu0: Vec<f64>,
    #[serde(default)]
    normalizer: NormalizerConfig,
    perturbation: Option<PerturbationShape>,
    #[serde(default)]
    include_series: bool,
}

pub fn normalize_augmented(cfg: Value, ctx: &Ctx) -> Run {
    let c: NormalizeAugmented = parse(cfg)?;
    let fam = load_family(&c.family, c.perturbation.as_ref(), ctx)?;
    let res = normalize_augmented_unchecked(&fam, &c.omega0, &c.mu0, &c.normalizer)?;
    let identities: Vec<Value> = res
        .identities()
        .into_iter()
        .map(|(name, value, tol)| json!({ "identity": name, "value": value, "tolerance": tol, "holds": value <= tol }))
        .collect();
    let mut out = json!({
        "omega0": res.omega0,
        "mu0": res.mu0,
        "u": res.u,
        "v": res.v,
        "W": rows(&res.w),
        "shifted_params": res.shifted_params(),
        "residual_history": res.residual_history,
        "final_residual": res.final_residual(),
        "cancellations": res.cancellations,
        "identities": identities,
        "direct_comparison": res.direct.as_ref().map(|(_, d)| d),
        "diagnostics": res.diagnostics,
    });
    if c.include_series {
        let t = res.transform();
        out["transform"] = json!({ "a": t.a.to_record(), "b0": t.b0.to_record(), "b1": t.b1.series.to_record() });
    }
    let table = Some(residual_table(&res.residual_history));
    if let Err(error) = res.verify() {
        return Err(Failure::Compute { error, partial: Some(out) });
    }
    Ok(Outcome { output: out, table })
}

fn default_nondeg_samples() -> usize {
    64
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Ruessmann {
    family: FamilyRef,
    curve: FrequencyCurve,
    #[serde(default)]
    persistence: PersistenceConfig,
    perturbation: Option<PerturbationShape>,
    #[serde(default = "default_nondeg_samples")]
    nondegeneracy_samples: usize,
}

pub fn ruessmann(cfg: Value, ctx: &Ctx) -> Run {
    let c: Ruessmann = parse(cfg)?;
    let fam = load_family(&c.family, c.perturbation.as_ref(), ctx)?;
    let curve = FrequencyCurve::new(c.curve.map, c.curve.sigma_dim, c.curve.domain)?;
    let nondeg = is_ruessmann_nondegenerate(&curve, c.nondegeneracy_samples.max(curve.n()), ctx.seed)?;
    let rep = persistence_pipeline(&fam, &curve, &c.persistence)?;
    log::info!("{} of {} grid points accepted", rep.accepted().count(), rep.points.len());
    let (n, s) = (curve.n(), curve.s());
    let mut header: Vec<String> = (0..s).map(|i| format!("mu_{i}")).collect();
    header.push("accepted".into());
    header.extend((0..n).map(|i| format!("fsharp_{i}")));
    header.extend((0..curve.sigma_dim).map(|i| format!("theta_{i}")));
    header.extend(["margin".into(), "torus_deviation".into()]);
    let blank = |k: usize, v: &[f64]| -> Vec<String> { (0..k).map(|i| v.get(i).map(|&x| fmt(x)).unwrap_or_default()).collect() };
    let table_rows = rep
        .points
        .iter()
        .map(|p| {
            let mut r = blank(s, &p.mu);
            r.push(p.accepted().to_string());
            r.extend(blank(n, &p.fsharp));
            r.extend(blank(curve.sigma_dim, &p.theta));
            r.push(if p.margin.is_finite() { fmt(p.margin) } else { String::new() });
            r.push(p.torus.as_ref().map(|t| fmt(t.max_deviation)).unwrap_or_default());
            r
        })
        .collect();
    Ok(Outcome {
        output: json!({
            "nondegeneracy": nondeg,
            "accepted": rep.accepted().count(),
            "rejected_fraction": rep.rejected_fraction,
            "horizon": rep.horizon,
            "points": rep.points,
        }),
        table: Some(Table { name: "persistence", header, rows: table_rows }),
    })
}
