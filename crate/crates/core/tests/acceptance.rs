//! End-to-end acceptance checks, one test per criterion.

mod common;

use std::sync::OnceLock;
use std::time::{Duration, Instant};

use kamrev::cohomology::{solve_normal, solve_scalar, verify_estimate};
use kamrev::diophantine::{check_pair, effective_gammas, fit_linear_law, violation_fraction, DiophantineParams, SampleBox};
use kamrev::error::Error;
use kamrev::fourier::{FourierSeries, MultiIndex};
use kamrev::linalg;
use kamrev::normalizer::{
    ft_reversibility_defect, normalize, normalize_augmented, AugmentedNormalizationResult, NormalizationResult,
    NormalizerConfig, TorusCheckOptions,
};
use kamrev::revmat::{
    build_augmented, is_miniversal, is_versal, miniversal_nilpotent, nilpotent_block, orbit_tangent, solve_fix_range,
    transversal_directions, InvolutionStructure, RevMatrix, Unfolding,
};
use kamrev::revsystem::toys::{toy_ex1, toy_ex2, Ex2Outcome, Poly2};
use kamrev::revsystem::{check_reversibility, random_perturbation, FamilySpec, PerturbationShape, ReversibleFamily};
use kamrev::ruessmann::{is_ruessmann_nondegenerate, persistence_pipeline, FrequencyCurve, PersistenceConfig, PersistenceReport, PolyMap};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED: u64 = 7;
const DELTA: f64 = 1e-4;

fn report(id: usize, ok: bool, elapsed: Duration, detail: String) {
    eprintln!("criterion {id:2}: {} ({:.2} s) {detail}", if ok { "PASS" } else { "FAIL" }, elapsed.as_secs_f64());
    assert!(ok, "criterion {id} failed: {detail}");
}

fn instance_config() -> NormalizerConfig {
    NormalizerConfig { order: 16, ..NormalizerConfig::default() }
}

fn instance(delta: f64) -> ReversibleFamily<f64> {
    common::perturbed(delta, SEED)
}

fn direct_run() -> &'static (NormalizationResult<f64>, Duration) {
    static RUN: OnceLock<(NormalizationResult<f64>, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let t = Instant::now();
        let res = normalize(&instance(DELTA), &common::omega0(), &[0.0], &instance_config()).expect("normalize");
        (res, t.elapsed())
    })
}

fn augmented_run() -> &'static (AugmentedNormalizationResult<f64>, Duration) {
    static RUN: OnceLock<(AugmentedNormalizationResult<f64>, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let t = Instant::now();
        let res = normalize_augmented(&instance(DELTA), &common::omega0(), &[0.0], &instance_config())
            .expect("normalize_augmented");
        (res, t.elapsed())
    })
}

fn delta_scan() -> &'static Vec<NormalizationResult<f64>> {
    static RUN: OnceLock<Vec<NormalizationResult<f64>>> = OnceLock::new();
    RUN.get_or_init(|| {
        [1e-5, 1e-4, 1e-3]
            .iter()
            .map(|&d| normalize(&instance(d), &common::omega0(), &[0.0], &instance_config()).expect("normalize"))
            .collect()
    })
}

fn frequency_map() -> FrequencyCurve {
    let map: PolyMap = serde_json::from_str(
        r#"{"inputs": 2, "outputs": 2, "terms": [
            {"component": 0, "coeff": 1.0},
            {"component": 0, "coeff": 0.2, "exps": [1, 0]},
            {"component": 1, "coeff": 1.6},
            {"component": 1, "coeff": 0.3, "exps": [0, 1]},
            {"component": 1, "coeff": 0.1, "exps": [1, 0]}]}"#,
    )
    .unwrap();
    FrequencyCurve::new(map, 1, vec![(-0.5, 0.5)]).unwrap()
}

fn persistence_family() -> ReversibleFamily<f64> {
    let spec: FamilySpec = serde_json::from_str(
        r#"{
        "n": 2, "m": 1, "p": 0, "s": 1, "R": [], "Q": [],
        "xi": [{"component": 0, "coeff": 0.1, "y": [2]},
               {"component": 1, "coeff": 0.2, "y": [2]}],
        "eta": [{"component": 0, "coeff": 0.3, "y": [2]}]
    }"#,
    )
    .unwrap();
    let base = ReversibleFamily::from_spec(&spec).unwrap();
    let shape = PerturbationShape { max_mode: 3, degree: 2, magnitude: DELTA };
    base.with_perturbation(&random_perturbation(&base, &shape, SEED))
}

fn persistence_run() -> &'static (PersistenceReport, Duration) {
    static RUN: OnceLock<(PersistenceReport, Duration)> = OnceLock::new();
    RUN.get_or_init(|| {
        let t = Instant::now();
        let cfg = PersistenceConfig { normalizer: instance_config(), ..PersistenceConfig::default() };
        let rep = persistence_pipeline(&persistence_family(), &frequency_map(), &cfg).expect("pipeline");
        (rep, t.elapsed())
    })
}

#[test]
fn criterion_01_nilpotent_conjugator() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut ok = true;
    let mut worst = 0.0f64;
    for m in 1..=6 {
        let nu = miniversal_nilpotent(m).unwrap();
        let sign = if ((m - 1) * m / 2) % 2 == 0 { 1 } else { -1 };
        ok &= nu.det_s == sign && nu.j_identity_exact;
        for _ in 0..20 {
            let lam = DMatrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
            worst = worst.max(nu.conjugation_defect(&lam));
        }
    }
    let el = t.elapsed();
    report(1, ok && worst <= 1e-14 && el.as_secs_f64() < 1.0, el, format!("max conjugation defect {worst:.1e}"));
}

#[test]
fn criterion_02_planar_toys() {
    let t = Instant::now();
    let vals = [1e-2, -1e-2, 1e-3, -1e-3];
    let mut worst_shift = 0.0f64;
    let mut worst_nf = 0.0f64;
    for &eps in &vals {
        for &c in &vals {
            let r = toy_ex1::<f64>(&Poly2::constant(eps), &Poly2::constant(c)).unwrap();
            worst_shift = worst_shift.max((r.z + eps).abs()).max((r.w + c).abs());
            worst_nf = worst_nf.max(r.normal_form_defect);
        }
    }
    let mut ex2_ok = true;
    for &c in &vals {
        ex2_ok &= match toy_ex2::<f64>(&Poly2::constant(c)).unwrap() {
            Ex2Outcome::NoSolution { min_residual, .. } => min_residual >= 0.99 * c.abs(),
            Ex2Outcome::Solution { .. } => false,
        };
    }
    let el = t.elapsed();
    let ok = worst_shift <= 1e-12 && worst_nf <= 1e-10 && ex2_ok && el.as_secs_f64() < 1.0;
    report(2, ok, el, format!("shift error {worst_shift:.1e}, normal form defect {worst_nf:.1e}, ex2 ok {ex2_ok}"));
}

/// Random trigonometric data with exponential decay; returns the series and
/// its real amplitudes `(k, cos, sin)`.
fn random_data(n: usize, d: usize, order: usize, zero_avg: bool, rng: &mut ChaCha8Rng) -> (FourierSeries<f64>, Vec<(MultiIndex, Vec<f64>, Vec<f64>)>) {
    let mut s = FourierSeries::zeros(n, d, order);
    let mut amps = vec![];
    for k in MultiIndex::enumerate(n, order as u64) {
        if !(k.is_zero() || k.is_canonical()) || (zero_avg && k.is_zero()) {
            continue;
        }
        let decay = (-0.3 * k.norm() as f64).exp();
        let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0) * decay).collect();
        let b: Vec<f64> = if k.is_zero() { vec![0.0; d] } else { (0..d).map(|_| rng.gen_range(-1.0..1.0) * decay).collect() };
        s.add_trig(&k.0, &a, &b);
        amps.push((k, a, b));
    }
    (s, amps)
}

/// Dense real solve of `dPhi/dx . omega - Q Phi = F` in the cos/sin basis,
/// compared coefficientwise with `phi`.
fn oracle_error(phi: &FourierSeries<f64>, amps: &[(MultiIndex, Vec<f64>, Vec<f64>)], omega: &[f64], q: &DMatrix<f64>) -> f64 {
    let d = q.nrows();
    let mut err = 0.0f64;
    let mut scale = 0.0f64;
    for (k, fc, fs) in amps {
        let nu = k.dot(omega);
        let (ac, as_) = if k.is_zero() {
            let x = (-q).lu().solve(&DVector::from_column_slice(fc)).unwrap();
            (x.as_slice().to_vec(), vec![0.0; d])
        } else {
            // Phi = A cos + B sin: (nu B - Q A) cos + (-nu A - Q B) sin = Fc cos + Fs sin
            let mut m = DMatrix::zeros(2 * d, 2 * d);
            m.view_mut((0, 0), (d, d)).copy_from(&(-q));
            m.view_mut((d, d), (d, d)).copy_from(&(-q));
            for i in 0..d {
                m[(i, d + i)] = nu;
                m[(d + i, i)] = -nu;
            }
            let rhs = DVector::from_iterator(2 * d, fc.iter().chain(fs).copied());
            let x = m.lu().solve(&rhs).unwrap();
            (x.rows(0, d).as_slice().to_vec(), x.rows(d, d).as_slice().to_vec())
        };
        let got = phi.coeff(k).map(|c| c.to_vec()).unwrap_or_else(|| vec![Complex::new(0.0, 0.0); d]);
        for i in 0..d {
            // cos = (e + e*) / 2, sin = (e - e*) / 2i
            let want = if k.is_zero() { Complex::new(ac[i], 0.0) } else { Complex::new(ac[i] / 2.0, -as_[i] / 2.0) };
            err = err.max((got[i] - want).norm());
            scale = scale.max(want.norm());
        }
    }
    err / scale
}

#[test]
fn criterion_03_cohomological_solvers() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let golden = common::GOLDEN;
    let inv = InvolutionStructure::<f64>::diag(&[-1.0, 1.0]).unwrap();
    let mut worst = 0.0f64;
    let mut consts = vec![];
    for i in 0..50 {
        let n = 1 + i % 2;
        let order = rng.gen_range(4..=12);
        let omega: Vec<f64> = if n == 1 { vec![golden] } else { vec![1.0, golden] };
        let params = DiophantineParams::new(1.5, 1e-3, order as u64);
        if i % 4 < 2 {
            let (f, amps) = random_data(n, 1, order, true, &mut rng);
            let phi = solve_scalar(&f, &omega, &params).unwrap();
            worst = worst.max(oracle_error(&phi, &amps, &omega, &DMatrix::zeros(1, 1)));
            if n == 2 {
                consts.push(verify_estimate(&f, &phi, &params, 0.4, 0.2).unwrap().implied_c);
            }
        } else {
            // hyperbolic blocks keep every mode matrix invertible
            let a = rng.gen_range(0.5..2.0);
            let qm = linalg::from_rows(&[vec![0.0, 1.0], vec![a, 0.0]]);
            let q = RevMatrix::new(qm.clone(), inv.clone()).unwrap();
            let (f, amps) = random_data(n, 2, order, false, &mut rng);
            let phi = solve_normal(&f, &omega, &q, &params).unwrap();
            worst = worst.max(oracle_error(&phi, &amps, &omega, &qm));
        }
    }
    let (lo, hi) = consts.iter().fold((f64::INFINITY, 0.0f64), |(l, h), &c| (l.min(c), h.max(c)));
    let ratio = hi / lo;
    let el = t.elapsed();
    let ok = worst <= 1e-12 && ratio < 1e3 && el.as_secs_f64() < 10.0;
    report(3, ok, el, format!("max relative error {worst:.1e}, implied constant spread {ratio:.1}"));
}

#[test]
fn criterion_04_fix_range_solver() {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let p = 1 + i % 4;
        let mut diag = vec![1.0; p];
        diag.extend(vec![-1.0; p]);
        let inv = InvolutionStructure::<f64>::diag(&diag).unwrap();
        // Q = [[0, A], [B, 0]] with B invertible has ker Q inside Fix(-R); A may be singular
        let b = DMatrix::from_fn(p, p, |r, c| if r == c { 2.0 } else { 0.0 } + rng.gen_range(-0.5..0.5));
        let mut a = DMatrix::from_fn(p, p, |_, _| rng.gen_range(-1.0..1.0));
        if i % 3 == 0 {
            a.column_mut(0).fill(0.0);
        }
        let mut qm = DMatrix::zeros(2 * p, 2 * p);
        qm.view_mut((0, p), (p, p)).copy_from(&a);
        qm.view_mut((p, 0), (p, p)).copy_from(&b);
        let q = RevMatrix::new(qm.clone(), inv).unwrap();
        let mut psi = DVector::zeros(2 * p);
        for r in p..2 * p {
            psi[r] = rng.gen_range(-1.0..1.0);
        }
        let delta = solve_fix_range(&q, &psi).unwrap();
        worst = worst.max((&qm * &delta + &psi).amax());
    }
    // kernel meeting Fix R and data outside the range
    let mut obstructed = true;
    for p in 1..=4 {
        let mut diag = vec![1.0; p];
        diag.extend(vec![-1.0; p]);
        let inv = InvolutionStructure::<f64>::diag(&diag).unwrap();
        let mut b = DMatrix::<f64>::identity(p, p);
        b[(p - 1, p - 1)] = 0.0;
        let mut qm = DMatrix::zeros(2 * p, 2 * p);
        qm.view_mut((p, 0), (p, p)).copy_from(&b);
        qm.view_mut((0, p), (p, p)).copy_from(&DMatrix::identity(p, p));
        let q = RevMatrix::new(qm, inv).unwrap();
        let mut psi = DVector::zeros(2 * p);
        psi[2 * p - 1] = 1.0;
        obstructed &= matches!(solve_fix_range(&q, &psi), Err(Error::Obstruction(_)));
    }
    let el = t.elapsed();
    let ok = worst <= 1e-10 && obstructed && el.as_secs_f64() < 5.0;
    report(4, ok, el, format!("max residual {worst:.1e}, obstructions raised {obstructed}"));
}

#[test]
fn criterion_05_versality() {
    let t = Instant::now();
    let inv = InvolutionStructure::<f64>::diag(&[-1.0, 1.0]).unwrap();
    let base = RevMatrix::new(linalg::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]), inv).unwrap();
    let toy = Unfolding::new(base, vec![linalg::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]])]).unwrap();
    let toy_ok = is_miniversal(&toy);

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut sums = 0;
    let mut codims = 0;
    for i in 0..10 {
        let p = 1 + i % 3;
        let m = 1 + i % 2;
        let mut diag = vec![1.0; p];
        diag.extend(vec![-1.0; p]);
        let inv = InvolutionStructure::<f64>::diag(&diag).unwrap();
        let raw = DMatrix::from_fn(2 * p, 2 * p, |_, _| rng.gen_range(-1.0..1.0));
        let q = RevMatrix::new(inv.anti_commuting_part(&raw), inv.clone()).unwrap();
        if orbit_tangent(&q).codim == p {
            codims += 1;
        }
        let qh = build_augmented(&q, &DMatrix::zeros(m, m)).unwrap();
        let dim = 2 * m + 2 * p;
        let mut dirs = vec![];
        for r in 0..m {
            for c in 0..m {
                let mut e = DMatrix::zeros(m, m);
                e[(r, c)] = 1.0;
                let mut d = DMatrix::zeros(dim, dim);
                d.view_mut((0, 0), (2 * m, 2 * m)).copy_from(&(nilpotent_block(&e) - nilpotent_block(&DMatrix::zeros(m, m))));
                dirs.push(d);
            }
        }
        for t in transversal_directions(&q) {
            let mut d = DMatrix::zeros(dim, dim);
            d.view_mut((2 * m, 2 * m), (2 * p, 2 * p)).copy_from(&t);
            dirs.push(d);
        }
        if is_versal(&Unfolding::new(qh, dirs).unwrap()).is_versal() {
            sums += 1;
        }
    }
    let el = t.elapsed();
    let ok = toy_ok && sums == 10 && codims == 10 && el.as_secs_f64() < 5.0;
    report(5, ok, el, format!("toy miniversal {toy_ok}, direct sums versal {sums}/10, codimension p {codims}/10"));
}

#[test]
fn criterion_06_end_to_end_normalization() {
    let (res, el) = direct_run();
    let h = &res.residual_history;
    let steps = h.len() - 1;
    let quadratic = h.windows(2).all(|w| w[1] <= 1e6 * w[0] * w[0]);
    let t = Instant::now();
    let chk = res.verify_torus(&instance(DELTA), &TorusCheckOptions { t_end: 100.0, ..TorusCheckOptions::default() }).unwrap();
    let el = *el + t.elapsed();
    let ok = res.final_residual() <= 1e-10
        && steps <= 6
        && quadratic
        && chk.max_deviation <= 1e-6
        && chk.rotation_error <= 1e-8
        && el.as_secs_f64() < 60.0;
    report(
        6,
        ok,
        el,
        format!(
            "residuals [{}], torus deviation {:.1e}, rotation error {:.1e}",
            h.iter().map(|r| format!("{r:.1e}")).collect::<Vec<_>>().join(", "),
            chk.max_deviation, chk.rotation_error
        ),
    );
}

#[test]
fn criterion_07_augmented_cancellations() {
    let (aug, el) = augmented_run();
    let c = &aug.cancellations;
    let agreement = aug.direct.as_ref().map(|(_, d)| d.normal_form_defect()).unwrap_or(f64::INFINITY);
    let ok = c.w_norm <= 1e-9
        && c.c1_norm <= 1e-9
        && c.c3_norm <= 1e-9
        && c.c0_variation <= 1e-9
        && c.c2_variation <= 1e-9
        && agreement <= 1e-8
        && c.w_formula_defect <= 1e-8
        && el.as_secs_f64() < 120.0;
    report(
        7,
        ok,
        *el,
        format!(
            "|W| {:.1e}, |c1| {:.1e}, |c3| {:.1e}, var c0 {:.1e}, var c2 {:.1e}, agreement {agreement:.1e}, W formula {:.1e}",
            c.w_norm, c.c1_norm, c.c3_norm, c.c0_variation, c.c2_variation, c.w_formula_defect
        ),
    );
}

#[test]
fn criterion_08_shift_smallness() {
    let t = Instant::now();
    let runs = delta_scan();
    let size = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let mut ratios = vec![];
    for pick in [|r: &NormalizationResult<f64>| r.u.clone(), |r: &NormalizationResult<f64>| r.v.clone(), |r: &NormalizationResult<f64>| r.w.clone()] {
        for w in runs.windows(2) {
            ratios.push(size(&pick(&w[1])) / size(&pick(&w[0])));
        }
    }
    // one decade of delta: a linear law gives 10, accept within a factor 10
    let ok = ratios.iter().all(|&r| (1.0..=100.0).contains(&r));
    report(8, ok, t.elapsed(), format!("decade ratios of |u|, |v|, |w|: {ratios:.2?}"));
}

#[test]
fn criterion_09_diophantine_measure() {
    let t = Instant::now();
    let sbox = SampleBox { omega: vec![(1.0, 2.0), (1.0, 2.0)], beta: vec![] };
    let gstar = effective_gammas(&sbox, 1.5, 20_000, 50, 9);
    let gammas = [0.02, 0.04, 0.08];
    let fr: Vec<f64> = gammas.iter().map(|&g| violation_fraction(&gstar, g)).collect();
    let monotone = fr.windows(2).all(|w| w[0] <= w[1]);
    let (c, rel) = fit_linear_law(&gammas, &fr);
    let el = t.elapsed();
    let ok = monotone && rel < 0.3 && el.as_secs_f64() < 30.0;
    report(9, ok, el, format!("fractions {fr:.4?}, slope {c:.2}, relative fit residual {rel:.3}"));
}

#[test]
fn criterion_10_persistence_pipeline() {
    let t = Instant::now();
    let moment = FrequencyCurve::polynomial(
        &[vec![(1.0, vec![])], vec![(1.0, vec![1])], vec![(1.0, vec![2])], vec![(1.0, vec![3])]],
        vec![(0.0, 1.0)],
    )
    .unwrap();
    let constant = FrequencyCurve::polynomial(&[vec![(1.0, vec![])], vec![(1.0, vec![])]], vec![(0.0, 1.0)]).unwrap();
    let nondeg = is_ruessmann_nondegenerate(&moment, 20, 0).unwrap().is_nondegenerate();
    let deg = !is_ruessmann_nondegenerate(&constant, 20, 0).unwrap().is_nondegenerate();
    let checks = t.elapsed();
    let (rep, el) = persistence_run();
    let accepted: Vec<_> = rep.accepted().collect();
    let tori_ok = accepted.iter().all(|p| p.torus.as_ref().is_some_and(|c| c.max_deviation <= 1e-6));
    let worst_res = accepted.iter().fold(0.0f64, |m, p| m.max(p.phi_residual).max(p.upsilon_residual));
    let el = *el + checks;
    let ok = nondeg && deg && !accepted.is_empty() && tori_ok && worst_res <= 1e-9 && el.as_secs_f64() < 600.0;
    report(
        10,
        ok,
        el,
        format!(
            "accepted {}/{} points, worst implicit residual {worst_res:.1e}, tori verified {tori_ok}",
            accepted.len(),
            rep.points.len()
        ),
    );
}

#[test]
fn criterion_11_reversibility_preservation() {
    let t = Instant::now();
    let mut families_ok = true;
    for d in [1e-5, 1e-4, 1e-3] {
        families_ok &= check_reversibility(&instance(d)).ok();
    }
    families_ok &= check_reversibility(&persistence_family()).ok();
    let (res, _) = direct_run();
    let (aug, _) = augmented_run();
    let s = instance(DELTA).phase_involution();
    let mut worst = ft_reversibility_defect(&res.normal_form, &s);
    for r in delta_scan().iter().chain(std::iter::once(res)) {
        worst = worst.max(r.diagnostics.transform_commute_defect).max(r.diagnostics.steps.reversibility_defect);
    }
    worst = worst.max(aug.diagnostics.transform_commute_defect).max(aug.diagnostics.steps.reversibility_defect);
    let (rep, _) = persistence_run();
    for p in rep.points.iter().filter(|p| p.symmetry_defect.is_finite()) {
        worst = worst.max(p.symmetry_defect);
    }
    // stored frequencies reproduce the acceptance decision
    let horizon = rep.horizon;
    let consistent = rep.points.iter().filter(|p| !p.fsharp.is_empty()).all(|p| {
        check_pair(&p.fsharp, &[], &DiophantineParams::new(1.5, 1e-2, horizon)).margin.to_bits() == p.margin.to_bits()
    });
    let ok = families_ok && worst <= 1e-12 && consistent;
    report(11, ok, t.elapsed(), format!("families reversible {families_ok}, max parity defect {worst:.1e}"));
}
