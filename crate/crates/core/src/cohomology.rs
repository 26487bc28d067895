//! Mode-wise solvers for `dPhi/dx . omega = F` and `dPhi/dx . omega - Q Phi = F`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::Serialize;

use crate::diophantine::DiophantineParams;
use crate::error::{Error, Result};
use crate::fourier::{FourierSeries, MultiIndex};
use crate::linalg;
use crate::revmat::{self, RevMatrix};
use crate::scalar::{cabs, creal, lit, to_f64, Real};

/// Relative tolerance on the average accepted by [`solve_scalar`].
pub const AVERAGE_TOL: f64 = 1e-12;
/// Mode matrices with a larger condition number are rejected.
pub const MAX_CONDITION: f64 = 1e12;

/// Solves `dPhi/dx . omega = F` componentwise; `Phi` has zero average.
pub fn solve_scalar<T: Real>(
    f: &FourierSeries<T>,
    omega: &[T],
    params: &DiophantineParams<T>,
) -> Result<FourierSeries<T>> {
    if omega.len() != f.n() {
        return Err(Error::InvalidInput("frequency dimension mismatch".into()));
    }
    let avg = f.average().iter().fold(T::zero(), |m, &v| m.max(v.abs()));
    if avg > lit::<T>(AVERAGE_TOL) * (T::one() + f.strip_norm(T::zero())) {
        return Err(Error::NonzeroAverage(to_f64(avg)));
    }
    let mut out = FourierSeries::zeros(f.n(), f.d(), f.order());
    for (k, c) in f.modes() {
        if !k.is_canonical() {
            continue;
        }
        let nu = k.dot(omega);
        let bound = params.bound(k);
        if nu.abs() < bound {
            return Err(Error::SmallDivisor {
                k: k.0.clone(),
                divisor: to_f64(nu.abs()),
                bound: to_f64(bound),
            });
        }
        let div = Complex::new(T::zero(), nu);
        out.set_mode(k, c.iter().map(|&v| v / div).collect());
    }
    Ok(out)
}

/// Solves `dPhi/dx . omega - Q Phi = F` mode by mode:
/// `(i<k,omega> I - Q) Phi_k = F_k`, and `-Q Phi_0 = F_0` through the
/// Fix-space restriction when `Q` is singular. Resonances show up as
/// ill-conditioned mode matrices rather than through `params`.
pub fn solve_normal<T: Real>(
    f: &FourierSeries<T>,
    omega: &[T],
    q: &RevMatrix<T>,
    _params: &DiophantineParams<T>,
) -> Result<FourierSeries<T>> {
    let dim = q.dim();
    if f.d() != dim || omega.len() != f.n() {
        return Err(Error::InvalidInput("dimension mismatch in solve_normal".into()));
    }
    let qc = linalg::to_complex(q.q());
    let mut out = FourierSeries::zeros(f.n(), dim, f.order());
    for (k, c) in f.modes() {
        if k.is_zero() {
            let rhs = DVector::from_iterator(dim, c.iter().map(|v| v.re));
            out.set_mode(k, zero_mode(q, &rhs)?.iter().map(|&v| creal(v)).collect());
            continue;
        }
        if !k.is_canonical() {
            continue;
        }
        let nu = k.dot(omega);
        let mut a = -qc.clone();
        for i in 0..dim {
            a[(i, i)] += Complex::new(T::zero(), nu);
        }
        let cond = linalg::condition_number(&a);
        if !(cond <= MAX_CONDITION) {
            return Err(Error::SingularMode {
                k: k.0.clone(),
                condition: cond,
            });
        }
        let b = DVector::from_column_slice(c);
        let x = a.lu().solve(&b).ok_or(Error::SingularMode {
            k: k.0.clone(),
            condition: f64::INFINITY,
        })?;
        out.set_mode(k, x.iter().cloned().collect());
    }
    Ok(out)
}

fn zero_mode<T: Real>(q: &RevMatrix<T>, rhs: &DVector<T>) -> Result<DVector<T>> {
    let dim = q.dim();
    if dim > 0 && linalg::condition_number(q.q()) <= MAX_CONDITION {
        if let Some(x) = q.q().clone().lu().solve(&(-rhs)) {
            return Ok(x);
        }
    }
    revmat::solve_fix_range(q, rhs).map_err(|e| match e {
        Error::Obstruction(r) | Error::NotAntiInvariant(r) => Error::ZeroModeObstruction(r),
        other => other,
    })
}

/// Largest `|F(x)|` over a sample of the distinguished boundary `|Im x_j| = rho`.
/// Each coordinate takes `per_axis` real parts and both signs of the imaginary part.
pub fn strip_sup<T: Real>(f: &FourierSeries<T>, rho: T, per_axis: usize) -> T {
    let n = f.n();
    let h = T::two_pi() / lit::<T>(per_axis as f64);
    let modes: Vec<(&MultiIndex, &Vec<Complex<T>>)> = f.modes().collect();
    let mut best = T::zero();
    let total = per_axis.pow(n as u32) << n;
    let mut x = vec![T::zero(); n];
    let mut y = vec![T::zero(); n];
    for idx in 0..total {
        let mut rem = idx;
        for j in 0..n {
            y[j] = if rem & 1 == 0 { rho } else { -rho };
            rem >>= 1;
        }
        for xj in x.iter_mut() {
            *xj = h * lit::<T>((rem % per_axis) as f64);
            rem /= per_axis;
        }
        let mut acc = vec![Complex::new(T::zero(), T::zero()); f.d()];
        for (k, c) in &modes {
            // e^{i<k, x + iy>} = e^{-<k,y>} e^{i<k,x>}
            let w = crate::scalar::cis(k.dot(&x)) * creal((-k.dot(&y)).exp());
            for (a, &v) in acc.iter_mut().zip(c.iter()) {
                *a += v * w;
            }
        }
        for a in acc {
            best = best.max(cabs(a));
        }
    }
    best
}

/// Empirical constant in `|Phi|_{rho'} <= C |F|_rho / (gamma (rho - rho')^{n + tau})`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EstimateReport<T: Real> {
    pub rho: T,
    pub rho_prime: T,
    /// Strip majorant of the solution at `rho'`.
    pub lhs: T,
    /// Sampled supremum of the data over the strip of width `rho`.
    pub rhs_factor: T,
    /// Majorant of the data at `rho`, for reference.
    pub rhs_majorant: T,
    pub implied_c: T,
}

pub fn verify_estimate<T: Real>(
    f: &FourierSeries<T>,
    phi: &FourierSeries<T>,
    params: &DiophantineParams<T>,
    rho: T,
    rho_prime: T,
) -> Result<EstimateReport<T>> {
    if !(rho_prime > T::zero() && rho_prime < rho) {
        return Err(Error::InvalidInput("need 0 < rho' < rho".into()));
    }
    let n = f.n();
    let per_axis = (4 * f.max_mode_norm() + 4).min(if n <= 2 { 128 } else { 16 });
    let lhs = phi.strip_norm(rho_prime);
    let rhs = strip_sup(f, rho, per_axis);
    let width = (rho - rho_prime).powf(lit::<T>(n as f64) + params.tau);
    let implied_c = if rhs > T::zero() {
        lhs * params.gamma * width / rhs
    } else {
        T::zero()
    };
    Ok(EstimateReport {
        rho,
        rho_prime,
        lhs,
        rhs_factor: rhs,
        rhs_majorant: f.strip_norm(rho),
        implied_c,
    })
}

/// Solves `(i nu I + ad) X = E` for a square matrix unknown where
/// `ad X = X M - M X`, returning the min-norm least-squares solution.
pub fn solve_commutator_mode<T: Real>(
    nu: T,
    m: &DMatrix<T>,
    e: &DMatrix<Complex<T>>,
) -> DMatrix<Complex<T>> {
    let d = m.nrows();
    let mut op = DMatrix::from_element(d * d, d * d, Complex::new(T::zero(), T::zero()));
    for i in 0..d {
        for j in 0..d {
            let row = i * d + j;
            op[(row, row)] += Complex::new(T::zero(), nu);
            for b in 0..d {
                // (X M)_ij = sum_b X_ib M_bj
                op[(row, i * d + b)] += creal(m[(b, j)]);
                // (M X)_ij = sum_a M_ia X_aj
                op[(row, b * d + j)] -= creal(m[(i, b)]);
            }
        }
    }
    let rhs = DVector::from_iterator(d * d, (0..d).flat_map(|i| (0..d).map(move |j| e[(i, j)])));
    let x = linalg::lstsq_min_norm(&op, &rhs, 1e-12);
    DMatrix::from_fn(d, d, |i, j| x[i * d + j])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::revmat::InvolutionStructure;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    type S = FourierSeries<f64>;
    const GOLDEN: f64 = 1.618_033_988_749_895;

    fn params() -> DiophantineParams<f64> {
        DiophantineParams::new(1.5, 1e-3, 64)
    }

    fn random_series(n: usize, d: usize, order: usize, rng: &mut ChaCha8Rng, zero_avg: bool) -> S {
        let mut s = S::zeros(n, d, order);
        for k in MultiIndex::enumerate(n, order as u64) {
            if !(k.is_zero() || k.is_canonical()) || (zero_avg && k.is_zero()) {
                continue;
            }
            let decay = (-0.3 * k.norm() as f64).exp();
            let a: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0) * decay).collect();
            let b: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0) * decay).collect();
            s.add_trig(&k.0, &a, &b);
        }
        s
    }

    /// Collocation oracle: expand the unknown in real cos/sin functions,
    /// differentiate them analytically and solve the dense system on a grid.
    fn oracle(f: &S, omega: &[f64], q: &DMatrix<f64>) -> S {
        let n = f.n();
        let d = f.d();
        let order = f.order();
        let mut funcs: Vec<(MultiIndex, bool)> = vec![(MultiIndex::zero(n), true)];
        for k in MultiIndex::enumerate(n, order as u64) {
            if k.is_canonical() {
                funcs.push((k.clone(), true));
                funcs.push((k, false));
            }
        }
        let g = crate::grid::TorusGrid::for_order(n, order);
        let pts: Vec<Vec<f64>> = g.points();
        let vals = g.synthesize(f);
        let nb = funcs.len();
        let mut a = DMatrix::zeros(pts.len() * d, nb * d);
        let mut b = DVector::zeros(pts.len() * d);
        for (pi, x) in pts.iter().enumerate() {
            for (fi, (k, is_cos)) in funcs.iter().enumerate() {
                let th = k.dot(x);
                let nu = k.dot(omega);
                let (val, der) = if *is_cos {
                    (th.cos(), -nu * th.sin())
                } else {
                    (th.sin(), nu * th.cos())
                };
                for r in 0..d {
                    a[(pi * d + r, fi * d + r)] += der;
                    for c in 0..d {
                        a[(pi * d + r, fi * d + c)] -= q[(r, c)] * val;
                    }
                }
            }
            for r in 0..d {
                b[pi * d + r] = vals[r][pi];
            }
        }
        let sol = a.svd(true, true).solve(&b, 1e-13).unwrap();
        let mut out = S::zeros(n, d, order);
        for (fi, (k, is_cos)) in funcs.iter().enumerate() {
            let amp: Vec<f64> = (0..d).map(|r| sol[fi * d + r]).collect();
            let zero = vec![0.0; d];
            if *is_cos {
                out.add_trig(&k.0, &amp, &zero);
            } else {
                out.add_trig(&k.0, &zero, &amp);
            }
        }
        out
    }

    fn rel_err(a: &S, b: &S) -> f64 {
        a.sub(b).max_coeff() / b.max_coeff().max(1e-300)
    }

    #[test]
    fn cosine_single_mode() {
        let f = S::cos(1, 4, &[1], &[1.0]);
        let phi = solve_scalar(&f, &[1.0], &params()).unwrap();
        assert!(phi.sub(&S::sin(1, 4, &[1], &[1.0])).max_coeff() < 1e-15);
        let phi2 = solve_scalar(&f, &[2.0], &params()).unwrap();
        assert!(phi2.sub(&S::sin(1, 4, &[1], &[0.5])).max_coeff() < 1e-15);
    }

    #[test]
    fn scalar_errors() {
        let f = S::constant(1, 2, &[1.0]);
        assert!(matches!(solve_scalar(&f, &[1.0], &params()), Err(Error::NonzeroAverage(_))));
        let g = S::cos(2, 3, &[1, -1], &[1.0]);
        match solve_scalar(&g, &[1.0, 1.0], &params()) {
            Err(Error::SmallDivisor { k, .. }) => assert_eq!(k, vec![1, -1]),
            other => panic!("expected small divisor, got {other:?}"),
        }
    }

    #[test]
    fn scalar_matches_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let omega = [1.0, GOLDEN];
        let f = random_series(2, 1, 12, &mut rng, true);
        let phi = solve_scalar(&f, &omega, &params()).unwrap();
        // the oracle's kernel (constants) is removed by min-norm
        let o = oracle(&f, &omega, &DMatrix::zeros(1, 1));
        assert!(rel_err(&phi, &o) < 1e-12);
        assert!(phi.directional_derivative(&omega).sub(&f).max_coeff() < 1e-12 * f.max_coeff());
    }

    #[test]
    fn normal_constant_mode() {
        let inv = InvolutionStructure::<f64>::diag(&[-1.0, 1.0]).unwrap();
        let q = RevMatrix::new(crate::linalg::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]), inv).unwrap();
        let f = S::constant(1, 2, &[0.3, -0.2]);
        let phi = solve_normal(&f, &[1.0], &q, &params()).unwrap();
        let v = phi.average();
        // -Q phi = f
        assert!((-v[1] - 0.3).abs() < 1e-15 && (-v[0] + 0.2).abs() < 1e-15);
    }

    #[test]
    fn normal_single_mode_rotation() {
        let inv = InvolutionStructure::<f64>::diag(&[-1.0, 1.0]).unwrap();
        let q = RevMatrix::new(crate::linalg::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]), inv).unwrap();
        let w = 2.0_f64.sqrt();
        let mut f = S::zeros(1, 2, 3);
        f.set_mode(&MultiIndex(vec![1]), vec![Complex::new(1.0, 0.5), Complex::new(-0.2, 0.0)]);
        let phi = solve_normal(&f, &[w], &q, &params()).unwrap();
        // explicit inverse of [[i w, -1], [1, i w]]: adj / (1 - w^2)
        let iw = Complex::new(0.0, w);
        let det = iw * iw + Complex::new(1.0, 0.0);
        let (a, b) = (Complex::new(1.0, 0.5), Complex::new(-0.2, 0.0));
        let x0 = (iw * a + b) / det;
        let x1 = (-a + iw * b) / det;
        let got = phi.coeff(&MultiIndex(vec![1])).unwrap();
        assert!((got[0] - x0).norm() < 1e-14 && (got[1] - x1).norm() < 1e-14);
        let lhs = phi.directional_derivative(&[w]).sub(&phi.map_target(q.q()));
        assert!(lhs.sub(&f).max_coeff() < 1e-14);
    }

    #[test]
    fn normal_matches_oracle() {
        let inv = InvolutionStructure::<f64>::diag(&[-1.0, 1.0]).unwrap();
        let qm = crate::linalg::from_rows(&[vec![0.0, 1.0], vec![-2.0, 0.0]]);
        let q = RevMatrix::new(qm.clone(), inv).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let omega = [1.0, GOLDEN];
        let f = random_series(2, 2, 8, &mut rng, false);
        let phi = solve_normal(&f, &omega, &q, &params()).unwrap();
        let o = oracle(&f, &omega, &qm);
        assert!(rel_err(&phi, &o) < 1e-12);
    }

    #[test]
    fn singular_mode_detected() {
        let inv = InvolutionStructure::<f64>::diag(&[-1.0, 1.0]).unwrap();
        let q = RevMatrix::new(crate::linalg::from_rows(&[vec![0.0, 1.0], vec![-1.0, 0.0]]), inv).unwrap();
        let f = S::cos(1, 2, &[1], &[1.0, 0.0]);
        assert!(matches!(
            solve_normal(&f, &[1.0], &q, &params()),
            Err(Error::SingularMode { .. })
        ));
    }

    #[test]
    fn zero_mode_obstruction() {
        // ker Q = Fix R; only zero is reachable from Fix R
        let inv = InvolutionStructure::<f64>::diag(&[1.0, -1.0]).unwrap();
        let q = RevMatrix::new(crate::linalg::from_rows(&[vec![0.0, 1.0], vec![0.0, 0.0]]), inv).unwrap();
        let f = S::constant(1, 2, &[0.0, 1.0]);
        assert!(matches!(
            solve_normal(&f, &[1.0], &q, &params()),
            Err(Error::ZeroModeObstruction(_))
        ));
    }

    #[test]
    fn estimate_for_cosine() {
        let f = S::cos(1, 4, &[1], &[1.0]);
        let p = DiophantineParams::new(1.2, 1.0, 10);
        let phi = solve_scalar(&f, &[1.0], &p).unwrap();
        let r = verify_estimate(&f, &phi, &p, 1.0, 0.5).unwrap();
        assert!((r.lhs - 0.5f64.exp()).abs() < 1e-14);
        // sup of |cos| on |Im x| = 1 is cosh(1)
        assert!((r.rhs_factor - 1.0f64.cosh()).abs() < 1e-12);
        assert!(r.implied_c.is_finite() && r.implied_c > 0.0);
    }

    #[test]
    fn commutator_mode_solves() {
        let m = crate::linalg::from_rows::<f64>(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let e = DMatrix::from_fn(2, 2, |i, j| Complex::new(i as f64 - 0.3, j as f64 * 0.2));
        let x = solve_commutator_mode(1.3, &m, &e);
        let mc = crate::linalg::to_complex(&m);
        let lhs = &x * Complex::new(0.0, 1.3) + &x * &mc - &mc * &x;
        assert!((lhs - e).iter().all(|v| v.norm() < 1e-12));
    }

    proptest! {
        #[test]
        fn exact_inverse_and_linearity(seed in 0u64..300, c in -2.0f64..2.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let omega = [1.0, GOLDEN];
            let f = random_series(2, 1, 6, &mut rng, true);
            let g = random_series(2, 1, 6, &mut rng, true);
            let pf = solve_scalar(&f, &omega, &params()).unwrap();
            let pg = solve_scalar(&g, &omega, &params()).unwrap();
            prop_assert!(pf.directional_derivative(&omega).sub(&f).max_coeff() < 1e-13);
            let pc = solve_scalar(&f.scale(c).add(&g), &omega, &params()).unwrap();
            prop_assert!(pc.sub(&pf.scale(c).add(&pg)).max_coeff() < 1e-13);
        }

        #[test]
        fn parity_flips(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let omega = [1.0, GOLDEN];
            let f = random_series(2, 1, 6, &mut rng, true);
            let (even, odd) = f.parity_decompose();
            let pe = solve_scalar(&even, &omega, &params()).unwrap();
            let po = solve_scalar(&odd, &omega, &params()).unwrap();
            prop_assert!(pe.parity_decompose().0.max_coeff() < 1e-14);
            prop_assert!(po.parity_decompose().1.max_coeff() < 1e-14);
        }

        #[test]
        fn zero_q_reduces_to_scalar(seed in 0u64..300) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let omega = [1.0, GOLDEN];
            let f = random_series(2, 2, 5, &mut rng, true);
            let inv = InvolutionStructure::<f64>::diag(&[-1.0, 1.0]).unwrap();
            let q = RevMatrix::new(DMatrix::zeros(2, 2), inv).unwrap();
            let a = solve_normal(&f, &omega, &q, &params()).unwrap();
            let b = solve_scalar(&f, &omega, &params()).unwrap();
            prop_assert!(a.sub(&b).max_coeff() < 1e-14);
        }
    }
}
