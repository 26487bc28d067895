//! Spectrum classification of reversible matrices, `(tau, gamma)` checks for
//! pairs `(omega, Q)` and Monte-Carlo estimates of the non-Diophantine measure.

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::fourier::MultiIndex;
use crate::revmat::RevMatrix;
use crate::scalar::{cabs, lit, to_f64, Real};

/// Default relative tolerance of [`classify_spectrum`].
pub const SPECTRUM_TOL: f64 = 1e-9;

/// Eigenvalue structure of a matrix whose nonzero spectrum comes in pairs `(a, -a)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumClassification<T: Real> {
    /// Pairs `+-i beta` with `beta > 0`.
    pub ell: usize,
    /// Quadruplets `+-alpha +- i beta`.
    pub kappa: usize,
    /// Imaginary parts: the `ell` pure pairs first, then the quadruplets; ascending within each group.
    pub beta: Vec<T>,
    pub alpha: Vec<T>,
    pub real_pairs: usize,
    pub zero_count: usize,
}

impl<T: Real> SpectrumClassification<T> {
    pub fn dimension(&self) -> usize {
        2 * self.ell + 4 * self.kappa + 2 * self.real_pairs + self.zero_count
    }

    /// Blockwise union, as for a direct sum of matrices.
    pub fn merge(&self, other: &Self) -> Self {
        let sorted = |mut v: Vec<T>| {
            v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
            v
        };
        let pure = sorted(
            self.beta[..self.ell]
                .iter()
                .chain(&other.beta[..other.ell])
                .cloned()
                .collect(),
        );
        let mut quads: Vec<(T, T)> = self
            .alpha
            .iter()
            .zip(&self.beta[self.ell..])
            .chain(other.alpha.iter().zip(&other.beta[other.ell..]))
            .map(|(&a, &b)| (b, a))
            .collect();
        quads.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let mut beta = pure;
        beta.extend(quads.iter().map(|q| q.0));
        SpectrumClassification {
            ell: self.ell + other.ell,
            kappa: self.kappa + other.kappa,
            beta,
            alpha: quads.iter().map(|q| q.1).collect(),
            real_pairs: self.real_pairs + other.real_pairs,
            zero_count: self.zero_count + other.zero_count,
        }
    }
}

/// Classifies the spectrum of `Q`. The threshold is `sqrt(tol) * scale` with
/// `scale` the larger of the spectral radius and `max |Q_ij|`, so that the
/// `O(sqrt(eps))` splitting of a perturbed Jordan block still reads as zero.
pub fn classify_spectrum<T: Real>(q: &RevMatrix<T>, tol: T) -> Result<SpectrumClassification<T>> {
    let eigs: Vec<Complex<T>> = if q.q().is_empty() {
        vec![]
    } else {
        q.q().clone().complex_eigenvalues().iter().cloned().collect()
    };
    let radius = eigs.iter().fold(T::zero(), |m, e| m.max(cabs(*e)));
    let scale = radius.max(crate::linalg::max_abs(q.q()));
    classify_eigenvalues(&eigs, tol, scale)
}

/// Classification of a given eigenvalue list; see [`classify_spectrum`].
pub fn classify_eigenvalues<T: Real>(
    eigs: &[Complex<T>],
    tol: T,
    scale: T,
) -> Result<SpectrumClassification<T>> {
    let thr = tol.sqrt() * scale;
    let mut zero_count = 0;
    let mut rest: Vec<Complex<T>> = Vec::new();
    for &e in eigs {
        if cabs(e) <= thr {
            zero_count += 1;
        } else {
            rest.push(e);
        }
    }
    // greedy matching of a with -a
    let mut used = vec![false; rest.len()];
    for i in 0..rest.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        let target = -rest[i];
        let best = (0..rest.len())
            .filter(|&j| !used[j])
            .min_by(|&a, &b| {
                cabs(rest[a] - target)
                    .partial_cmp(&cabs(rest[b] - target))
                    .expect("finite")
            });
        match best {
            Some(j) if cabs(rest[j] - target) <= thr => used[j] = true,
            _ => {
                return Err(Error::UnpairedSpectrum {
                    re: to_f64(rest[i].re),
                    im: to_f64(rest[i].im),
                })
            }
        }
    }
    let mut pure = Vec::new();
    let mut quads: Vec<(T, T)> = Vec::new();
    let mut real_pairs = 0;
    let mut quad_members = 0;
    for e in &rest {
        let re_small = e.re.abs() <= thr;
        let im_small = e.im.abs() <= thr;
        if re_small {
            if e.im > T::zero() {
                pure.push(e.im);
            }
        } else if im_small {
            if e.re > T::zero() {
                real_pairs += 1;
            }
        } else {
            quad_members += 1;
            if e.re > T::zero() && e.im > T::zero() {
                quads.push((e.im, e.re));
            }
        }
    }
    let imag_members = rest.iter().filter(|e| e.re.abs() <= thr).count();
    let real_members = rest.len() - imag_members - quad_members;
    if imag_members != 2 * pure.len()
        || real_members != 2 * real_pairs
        || quad_members != 4 * quads.len()
    {
        let e = rest.first().cloned().unwrap_or_default();
        return Err(Error::UnpairedSpectrum {
            re: to_f64(e.re),
            im: to_f64(e.im),
        });
    }
    pure.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    quads.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let mut beta = pure.clone();
    beta.extend(quads.iter().map(|q| q.0));
    Ok(SpectrumClassification {
        ell: pure.len(),
        kappa: quads.len(),
        beta,
        alpha: quads.iter().map(|q| q.1).collect(),
        real_pairs,
        zero_count,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiophantineParams<T: Real> {
    pub tau: T,
    pub gamma: T,
    /// Horizon: only `0 < |k| <= kmax` is checked.
    pub kmax: u64,
}

impl<T: Real> DiophantineParams<T> {
    pub fn new(tau: T, gamma: T, kmax: u64) -> Self {
        DiophantineParams { tau, gamma, kmax }
    }

    /// `tau > n - 1`, `gamma > 0`, `kmax >= 1`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.tau > lit::<T>(n as f64 - 1.0)) {
            return Err(Error::InvalidInput(format!(
                "tau = {} must exceed n - 1 = {}",
                to_f64(self.tau),
                n as i64 - 1
            )));
        }
        if !(self.gamma > T::zero()) {
            return Err(Error::InvalidInput("gamma must be positive".into()));
        }
        if self.kmax == 0 {
            return Err(Error::InvalidInput("horizon must be positive".into()));
        }
        Ok(())
    }

    /// `gamma |k|^{-tau}`.
    pub fn bound(&self, k: &MultiIndex) -> T {
        self.gamma * lit::<T>(k.norm() as f64).powf(-self.tau)
    }
}

/// Result of a horizon-limited check; `margin >= 0` iff the inequality holds
/// for every checked `(k, K)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiophantineReport<T: Real> {
    pub holds: bool,
    pub worst_k: Vec<i64>,
    #[serde(rename = "worst_K")]
    pub worst_kk: Vec<i64>,
    /// `min |<k,omega> + <K,beta>| |k|^tau - gamma`.
    pub margin: T,
    pub horizon: u64,
}

/// One representative of each `+-k` pair with `0 < |k| <= kmax`.
pub fn canonical_modes(n: usize, kmax: u64) -> Vec<MultiIndex> {
    fn rec(n: usize, budget: i64, leading: bool, prefix: &mut Vec<i64>, out: &mut Vec<MultiIndex>) {
        if prefix.len() == n {
            if !leading {
                out.push(MultiIndex(prefix.clone()));
            }
            return;
        }
        // while all previous entries vanish the next one must be >= 0
        let lo = if leading { 0 } else { -budget };
        for k in lo..=budget {
            prefix.push(k);
            rec(n, budget - k.abs(), leading && k == 0, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, kmax as i64, true, &mut Vec::with_capacity(n), &mut out);
    out
}

/// All `K` in `Z^d` with `|K| <= 2`.
pub fn normal_multipliers(d: usize) -> Vec<Vec<i64>> {
    MultiIndex::enumerate(d, 2).into_iter().map(|k| k.0).collect()
}

/// Minimum of `|<k,omega> + <K,beta>| |k|^tau` over the horizon, with its witness.
fn scaled_minimum<T: Real>(
    omega: &[T],
    beta: &[T],
    modes: &[(MultiIndex, T)],
    multipliers: &[Vec<i64>],
) -> (T, usize, usize) {
    let shifts: Vec<T> = multipliers
        .iter()
        .map(|kk| {
            kk.iter()
                .zip(beta)
                .fold(T::zero(), |a, (&c, &b)| a + lit::<T>(c as f64) * b)
        })
        .collect();
    let mut best = (T::max_value().unwrap_or_else(|| lit(f64::MAX)), 0, 0);
    for (i, (k, weight)) in modes.iter().enumerate() {
        let base = k.dot(omega);
        for (j, &s) in shifts.iter().enumerate() {
            let v = (base + s).abs() * *weight;
            if v < best.0 {
                best = (v, i, j);
            }
        }
    }
    best
}

fn weighted_modes<T: Real>(n: usize, kmax: u64, tau: T) -> Vec<(MultiIndex, T)> {
    canonical_modes(n, kmax)
        .into_iter()
        .map(|k| {
            let w = lit::<T>(k.norm() as f64).powf(tau);
            (k, w)
        })
        .collect()
}

/// Checks `|<k,omega> + <K,beta>| >= gamma |k|^{-tau}` for `0 < |k| <= kmax`, `|K| <= 2`.
pub fn check_pair<T: Real>(omega: &[T], beta: &[T], params: &DiophantineParams<T>) -> DiophantineReport<T> {
    let modes = weighted_modes(omega.len(), params.kmax, params.tau);
    let mult = normal_multipliers(beta.len());
    if modes.is_empty() {
        return DiophantineReport {
            holds: true,
            worst_k: vec![],
            worst_kk: vec![0; beta.len()],
            margin: T::zero(),
            horizon: params.kmax,
        };
    }
    let (v, i, j) = scaled_minimum(omega, beta, &modes, &mult);
    let margin = v - params.gamma;
    DiophantineReport {
        holds: margin >= T::zero(),
        worst_k: modes[i].0 .0.clone(),
        worst_kk: mult[j].clone(),
        margin,
        horizon: params.kmax,
    }
}

/// [`check_pair`] with `beta` taken from the spectrum of `Q`.
pub fn is_diophantine_pair<T: Real>(
    omega: &[T],
    q: &RevMatrix<T>,
    params: &DiophantineParams<T>,
) -> Result<DiophantineReport<T>> {
    params.validate(omega.len())?;
    let spec = classify_spectrum(q, lit(SPECTRUM_TOL))?;
    Ok(check_pair(omega, &spec.beta, params))
}

/// Axis-aligned sampling box in `(omega, beta)` space.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SampleBox<T: Real> {
    pub omega: Vec<(T, T)>,
    pub beta: Vec<(T, T)>,
}

const BLOCK: usize = 512;

/// Per-sample effective `gamma*`: a sample violates the condition at `gamma`
/// iff `gamma* < gamma`. Samples are drawn in blocks of 512 from ChaCha8
/// streams indexed by block, so the values do not depend on the thread count.
pub fn effective_gammas<T: Real>(
    sbox: &SampleBox<T>,
    tau: T,
    samples: usize,
    kmax: u64,
    seed: u64,
) -> Vec<T> {
    let n = sbox.omega.len();
    let modes = weighted_modes(n, kmax, tau);
    let mult = normal_multipliers(sbox.beta.len());
    let blocks = samples.div_ceil(BLOCK);
    let per_block: Vec<Vec<T>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b as u64);
            let count = BLOCK.min(samples - b * BLOCK);
            let draw = |rng: &mut ChaCha8Rng, (lo, hi): (T, T)| -> T {
                let u: f64 = rng.gen();
                lo + (hi - lo) * lit::<T>(u)
            };
            (0..count)
                .map(|_| {
                    let omega: Vec<T> = sbox.omega.iter().map(|&iv| draw(&mut rng, iv)).collect();
                    let beta: Vec<T> = sbox.beta.iter().map(|&iv| draw(&mut rng, iv)).collect();
                    scaled_minimum(&omega, &beta, &modes, &mult).0
                })
                .collect()
        })
        .collect();
    per_block.into_iter().flatten().collect()
}

/// Fraction of `gamma*` values strictly below `gamma`.
pub fn violation_fraction<T: Real>(gstar: &[T], gamma: T) -> T {
    if gstar.is_empty() {
        return T::zero();
    }
    let bad = gstar.iter().filter(|&&g| g < gamma).count();
    lit::<T>(bad as f64) / lit::<T>(gstar.len() as f64)
}

/// Monte-Carlo fraction of the box violating the condition up to the horizon.
pub fn complement_measure_estimate<T: Real>(
    sbox: &SampleBox<T>,
    tau: T,
    gamma: T,
    samples: usize,
    kmax: u64,
    seed: u64,
) -> T {
    violation_fraction(&effective_gammas(sbox, tau, samples, kmax, seed), gamma)
}

/// Least-squares fit `f = c gamma` through the origin; returns `(c, |f - c gamma| / |f|)`.
pub fn fit_linear_law<T: Real>(gammas: &[T], fractions: &[T]) -> (T, T) {
    let sgg = gammas.iter().fold(T::zero(), |a, &g| a + g * g);
    let sfg = gammas
        .iter()
        .zip(fractions)
        .fold(T::zero(), |a, (&g, &f)| a + g * f);
    let c = if sgg > T::zero() { sfg / sgg } else { T::zero() };
    let res = gammas
        .iter()
        .zip(fractions)
        .fold(T::zero(), |a, (&g, &f)| a + (f - c * g).powi(2))
        .sqrt();
    let nf = fractions.iter().fold(T::zero(), |a, &f| a + f * f).sqrt();
    let rel = if nf > T::zero() { res / nf } else { T::zero() };
    (c, rel)
}

/// Builds a reversible matrix from its rows; convenience for callers that
/// hold plain `f64` data.
pub fn classify_rows(q: &[Vec<f64>], r: &[Vec<f64>]) -> Result<SpectrumClassification<f64>> {
    let inv = crate::revmat::InvolutionStructure::from_rows(r)?;
    let q = RevMatrix::new(crate::linalg::from_rows::<f64>(q), inv)?;
    classify_spectrum(&q, SPECTRUM_TOL)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::revmat::InvolutionStructure;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    const GOLDEN: f64 = 1.618_033_988_749_895;

    fn rev(q: &[Vec<f64>], r: &[f64]) -> RevMatrix<f64> {
        RevMatrix::new(crate::linalg::from_rows(q), InvolutionStructure::diag(r).unwrap()).unwrap()
    }

    #[test]
    fn rotation_block() {
        let s = classify_spectrum(&rev(&[vec![0.0, 1.0], vec![-1.0, 0.0]], &[-1.0, 1.0]), 1e-9).unwrap();
        assert_eq!((s.ell, s.kappa, s.real_pairs, s.zero_count), (1, 0, 0, 0));
        assert!((s.beta[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hyperbolic_block() {
        let s = classify_spectrum(&rev(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[-1.0, 1.0]), 1e-9).unwrap();
        assert_eq!((s.ell, s.real_pairs, s.zero_count), (0, 1, 0));
    }

    #[test]
    fn nilpotent_block() {
        let s = classify_spectrum(&rev(&[vec![0.0, 1.0], vec![0.0, 0.0]], &[-1.0, 1.0]), 1e-9).unwrap();
        assert_eq!(s.zero_count, 2);
        assert_eq!(s.dimension(), 2);
    }

    #[test]
    fn quadruplet() {
        // [[A, B], [B, -A]]-type 4x4 with eigenvalues +-1 +- 2i
        let inv = InvolutionStructure::<f64>::diag(&[1.0, 1.0, -1.0, -1.0]).unwrap();
        let c = crate::linalg::from_rows::<f64>(&[vec![1.0, 2.0], vec![-2.0, 1.0]]);
        let mut q = DMatrix::zeros(4, 4);
        q.view_mut((0, 2), (2, 2)).copy_from(&c);
        q.view_mut((2, 0), (2, 2)).copy_from(&c);
        // eigenvalues of [[0, C], [C, 0]] are +-eig(C) = +-(1 +- 2i)
        let s = classify_spectrum(&RevMatrix::new(q, inv).unwrap(), 1e-9).unwrap();
        assert_eq!((s.ell, s.kappa), (0, 1));
        assert!((s.alpha[0] - 1.0).abs() < 1e-10 && (s.beta[0] - 2.0).abs() < 1e-10);
        assert_eq!(s.dimension(), 4);
    }

    #[test]
    fn unpaired_rejected() {
        let eigs = [Complex::new(1.0, 0.0), Complex::new(-2.0, 0.0)];
        assert!(matches!(
            classify_eigenvalues(&eigs, 1e-9, 2.0),
            Err(Error::UnpairedSpectrum { .. })
        ));
    }

    #[test]
    fn block_merge() {
        let a = classify_spectrum(&rev(&[vec![0.0, 1.0], vec![-4.0, 0.0]], &[-1.0, 1.0]), 1e-9).unwrap();
        let b = classify_spectrum(&rev(&[vec![0.0, 1.0], vec![1.0, 0.0]], &[-1.0, 1.0]), 1e-9).unwrap();
        let inv = InvolutionStructure::<f64>::diag(&[-1.0, 1.0, -1.0, 1.0]).unwrap();
        let q = crate::linalg::from_rows::<f64>(&[
            vec![0.0, 1.0, 0.0, 0.0],
            vec![-4.0, 0.0, 0.0, 0.0],
            vec![0.0, 0.0, 0.0, 1.0],
            vec![0.0, 0.0, 1.0, 0.0],
        ]);
        let whole = classify_spectrum(&RevMatrix::new(q, inv).unwrap(), 1e-9).unwrap();
        let merged = a.merge(&b);
        assert_eq!((whole.ell, whole.real_pairs), (merged.ell, merged.real_pairs));
        assert!((whole.beta[0] - merged.beta[0]).abs() < 1e-12);
    }

    #[test]
    fn resonant_vector() {
        let r = check_pair(&[1.0, 1.0], &[], &DiophantineParams::new(1.5, 0.01, 10));
        assert!(!r.holds);
        assert_eq!(r.worst_k, vec![1, -1]);
        assert_eq!(r.worst_kk, Vec::<i64>::new());
    }

    #[test]
    fn normal_internal_resonance() {
        let r = check_pair(&[1.0], &[1.0], &DiophantineParams::new(0.5, 0.01, 5));
        assert!(!r.holds);
        assert_eq!(r.worst_k, vec![1]);
        assert_eq!(r.worst_kk, vec![-1]);
        assert!(r.margin <= -0.01 + 1e-15);
    }

    #[test]
    fn golden_mean_brute_force() {
        let params = DiophantineParams::new(1.2, 1e-2, 200);
        let omega = [1.0, GOLDEN];
        let r = check_pair(&omega, &[], &params);
        assert!(r.holds);
        // independent scan over every k in the box, both signs
        let mut worst = f64::INFINITY;
        for k1 in -200i64..=200 {
            for k2 in -200i64..=200 {
                let norm = k1.abs() + k2.abs();
                if norm == 0 || norm > 200 {
                    continue;
                }
                let d = (k1 as f64 + k2 as f64 * GOLDEN).abs();
                worst = worst.min(d * (norm as f64).powf(1.2));
            }
        }
        assert!(worst > 1e-2);
        assert!((r.margin - (worst - 1e-2)).abs() < 1e-12);
    }

    #[test]
    fn canonical_modes_cover_pairs() {
        let c = canonical_modes(2, 3);
        // 2*3*4 nonzero modes with |k| <= 3, halved
        assert_eq!(c.len(), 12);
        assert!(c.iter().all(|k| k.is_canonical()));
    }

    #[test]
    fn zero_gamma_never_violated() {
        let sbox = SampleBox { omega: vec![(1.0, 2.0), (1.0, 2.0)], beta: vec![] };
        assert_eq!(complement_measure_estimate(&sbox, 1.5, 0.0, 500, 20, 1), 0.0);
    }

    #[test]
    fn measure_monotone_and_thread_independent() {
        let sbox = SampleBox { omega: vec![(1.0, 2.0), (1.0, 2.0)], beta: vec![] };
        let g = effective_gammas(&sbox, 1.5, 2000, 30, 7);
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let g1 = pool.install(|| effective_gammas(&sbox, 1.5, 2000, 30, 7));
        assert_eq!(g, g1);
        assert!(violation_fraction(&g, 0.02) <= violation_fraction(&g, 0.04));
    }

    #[test]
    fn linear_fit_exact() {
        let (c, rel) = fit_linear_law::<f64>(&[1.0, 2.0, 4.0], &[3.0, 6.0, 12.0]);
        assert!((c - 3.0).abs() < 1e-14 && rel < 1e-14);
    }

    proptest! {
        #[test]
        fn scaling_law(w1 in 0.5f64..2.0, w2 in 0.5f64..2.0, b in 0.3f64..2.0, c in 0.2f64..5.0) {
            let p = DiophantineParams::new(1.5, 1e-3, 15);
            let a = check_pair(&[w1, w2], &[b], &p);
            let pc = DiophantineParams::new(1.5, c * 1e-3, 15);
            let s = check_pair(&[c * w1, c * w2], &[c * b], &pc);
            prop_assert_eq!(a.holds, s.holds);
            prop_assert!((s.margin - c * a.margin).abs() < 1e-9 * (1.0 + a.margin.abs()));
        }

        #[test]
        fn empty_beta_is_classical(w1 in 0.5f64..2.0, w2 in 0.5f64..2.0) {
            let p = DiophantineParams::new(1.5, 1e-2, 20);
            let r = check_pair(&[w1, w2], &[], &p);
            let mut worst = f64::INFINITY;
            for k in MultiIndex::enumerate(2, 20) {
                if k.is_zero() { continue; }
                worst = worst.min(k.dot(&[w1, w2]).abs() * (k.norm() as f64).powf(1.5));
            }
            prop_assert!((r.margin - (worst - 1e-2)).abs() < 1e-12);
        }
    }
}
