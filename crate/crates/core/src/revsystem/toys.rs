//! Planar toy families showing the role of `ker Q ⊂ Fix(-R)`.
//!
//! ex1: `z1' = z2 + psi1(z1^2, z2)`, `z2' = mu z1 + z1 psi2(z1^2, z2)`, `R = diag(-1, 1)`.
//! ex2: `z1' = z2 + z2 psi1(z1, z2^2)`, `z2' = mu z1 + psi2(z1, z2^2)`, `R = diag(1, -1)`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::revmat::{solve_fix_range, RevMatrix};
use crate::scalar::{lit, to_f64, Real};

/// Trust region `|z| <= TRUST_RADIUS` of the toy root finders.
pub const TRUST_RADIUS: f64 = 0.5;
/// Best residuals above this count as "no solution".
pub const NO_SOLUTION_RESIDUAL: f64 = 1e-6;
/// Share of starts that must reach a critical point before nonexistence is declared.
pub const CONVERGED_SHARE: f64 = 0.9;
pub const START_GRID: usize = 21;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monomial2 {
    pub coeff: f64,
    /// Exponent of the first argument.
    pub a: u32,
    /// Exponent of the second argument.
    pub b: u32,
}

/// Polynomial in two arguments, `sum coeff u^a v^b`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Poly2 {
    pub terms: Vec<Monomial2>,
}

impl Poly2 {
    pub fn constant(c: f64) -> Self {
        Poly2 {
            terms: vec![Monomial2 { coeff: c, a: 0, b: 0 }],
        }
    }

    pub fn monomial(coeff: f64, a: u32, b: u32) -> Self {
        Poly2 {
            terms: vec![Monomial2 { coeff, a, b }],
        }
    }

    pub fn eval<T: Real>(&self, u: T, v: T) -> T {
        self.terms.iter().fold(T::zero(), |acc, t| {
            acc + lit::<T>(t.coeff) * u.powi(t.a as i32) * v.powi(t.b as i32)
        })
    }

    /// `d^(da+db) / du^da dv^db`.
    pub fn derivative(&self, da: u32, db: u32) -> Poly2 {
        let falling = |e: u32, d: u32| (0..d).fold(1.0, |acc, i| acc * e.saturating_sub(i) as f64);
        Poly2 {
            terms: self
                .terms
                .iter()
                .filter(|t| t.a >= da && t.b >= db)
                .map(|t| Monomial2 {
                    coeff: t.coeff * falling(t.a, da) * falling(t.b, db),
                    a: t.a - da,
                    b: t.b - db,
                })
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ex1Result<T: Real> {
    /// Equilibrium `(0, z)`.
    pub z: T,
    /// Parameter value `mu = w`.
    pub w: T,
    /// `|vector field|` at the equilibrium.
    pub equilibrium_residual: T,
    /// Linear part after the coordinate change.
    pub linear_part: [[T; 2]; 2],
    /// Distance of `linear_part` from `[[0, 1], [0, 0]]`.
    pub normal_form_defect: T,
}

/// ex1 vector field at `(z1, z2)` and parameter `mu`.
pub fn ex1_field<T: Real>(psi1: &Poly2, psi2: &Poly2, z: [T; 2], mu: T) -> [T; 2] {
    let u = z[0] * z[0];
    [z[1] + psi1.eval(u, z[1]), mu * z[0] + z[0] * psi2.eval(u, z[1])]
}

/// Equilibrium `(0, z)` on `Fix R` with `z + psi1(0, z) = 0`, found by damped
/// Newton from 0, and `w = -psi2(0, z)`.
pub fn toy_ex1<T: Real>(psi1: &Poly2, psi2: &Poly2) -> Result<Ex1Result<T>> {
    let d1v = psi1.derivative(0, 1);
    let g = |z: T| z + psi1.eval(T::zero(), z);
    let radius: T = lit(TRUST_RADIUS);
    let mut z = T::zero();
    let mut gz = g(z);
    let tol: T = lit(1e-15);
    for _ in 0..100 {
        if gz.abs() <= tol {
            break;
        }
        let slope = T::one() + d1v.eval(T::zero(), z);
        if slope.abs() < lit(1e-12) {
            return Err(Error::RootFindFailure(format!("flat residual at z = {:e}", to_f64(z))));
        }
        let step = -gz / slope;
        let mut lam = T::one();
        loop {
            let cand = z + lam * step;
            let gc = g(cand);
            if cand.abs() <= radius && gc.abs() < gz.abs() {
                z = cand;
                gz = gc;
                break;
            }
            lam *= lit(0.5);
            if lam < lit(1e-10) {
                if gz.abs() <= lit(1e-13) {
                    break;
                }
                return Err(Error::RootFindFailure(format!(
                    "no descent inside |z| <= {TRUST_RADIUS} from z = {:e}",
                    to_f64(z)
                )));
            }
        }
        if (lam * step).abs() <= lit::<T>(1e-16) * (T::one() + z.abs()) {
            break;
        }
    }
    if gz.abs() > lit(1e-12) {
        return Err(Error::RootFindFailure(format!("residual {:e} after 100 iterations", to_f64(gz))));
    }
    let w = -psi2.eval(T::zero(), z);
    let eq = ex1_field(psi1, psi2, [T::zero(), z], w);
    let jac = ex1_jacobian(psi1, psi2, [T::zero(), z], w);
    // z1 = (1 + d psi1/dz2) zb1, z2 = zb2 + z
    let t1 = T::one() + d1v.eval(T::zero(), z);
    let a = [[jac[0][0], jac[0][1] / t1], [jac[1][0] * t1, jac[1][1]]];
    let target = [[T::zero(), T::one()], [T::zero(), T::zero()]];
    let mut defect = T::zero();
    for i in 0..2 {
        for j in 0..2 {
            defect = defect.max((a[i][j] - target[i][j]).abs());
        }
    }
    Ok(Ex1Result {
        z,
        w,
        equilibrium_residual: eq[0].abs().max(eq[1].abs()),
        linear_part: a,
        normal_form_defect: defect,
    })
}

/// Exact Jacobian of the ex1 field.
pub fn ex1_jacobian<T: Real>(psi1: &Poly2, psi2: &Poly2, z: [T; 2], mu: T) -> [[T; 2]; 2] {
    let u = z[0] * z[0];
    let two: T = lit(2.0);
    let p1u = psi1.derivative(1, 0).eval(u, z[1]);
    let p1v = psi1.derivative(0, 1).eval(u, z[1]);
    let p2u = psi2.derivative(1, 0).eval(u, z[1]);
    let p2v = psi2.derivative(0, 1).eval(u, z[1]);
    [
        [two * z[0] * p1u, T::one() + p1v],
        [mu + psi2.eval(u, z[1]) + two * u * p2u, z[0] * p2v],
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result")]
pub enum Ex2Outcome<T: Real> {
    Solution {
        z: T,
        w: T,
        residual: T,
    },
    NoSolution {
        min_residual: T,
        /// `(z, w)` where the minimum was attained.
        best: [T; 2],
        converged_fraction: f64,
    },
}

/// The equations `w z + psi2(z, 0) = 0`, `w + d psi2(z, 0)/dz1 = 0`.
pub fn ex2_equations<T: Real>(psi2: &Poly2, z: T, w: T) -> [T; 2] {
    [w * z + psi2.eval(z, T::zero()), w + psi2.derivative(1, 0).eval(z, T::zero())]
}

/// Residual of the ex2 system after eliminating `w` through the second
/// equation: `|psi2(z, 0) - z d psi2(z, 0)/dz1|`.
pub fn ex2_residual<T: Real>(psi2: &Poly2, z: T) -> T {
    let w = -psi2.derivative(1, 0).eval(z, T::zero());
    ex2_equations(psi2, z, w)[0].abs()
}

struct Start<T> {
    z: T,
    w: T,
    residual: T,
    converged: bool,
}

fn lm_solve<T: Real>(psi2: &Poly2, z0: T, w0: T) -> Start<T> {
    let d1 = psi2.derivative(1, 0);
    let d2 = psi2.derivative(2, 0);
    let r: T = lit(TRUST_RADIUS);
    let mut x = [z0, w0];
    let norm2 = |f: [T; 2]| f[0] * f[0] + f[1] * f[1];
    let mut f = ex2_equations(psi2, x[0], x[1]);
    let mut lam: T = lit(1e-3);
    let mut converged = false;
    for _ in 0..500 {
        let (z, w) = (x[0], x[1]);
        // J = [[w + psi2_u, z], [psi2_uu, 1]]
        let j = [[w + d1.eval(z, T::zero()), z], [d2.eval(z, T::zero()), T::one()]];
        let grad = [j[0][0] * f[0] + j[1][0] * f[1], j[0][1] * f[0] + j[1][1] * f[1]];
        // bound constraints that the descent direction pushes against
        let active: Vec<bool> = (0..2)
            .map(|i| (x[i] >= r && grad[i] < T::zero()) || (x[i] <= -r && grad[i] > T::zero()))
            .collect();
        let pg = (0..2).fold(T::zero(), |m, i| if active[i] { m } else { m.max(grad[i].abs()) });
        if norm2(f).sqrt() < lit(1e-15) || pg < lit(1e-14) {
            converged = true;
            break;
        }
        let jtj = [
            [j[0][0] * j[0][0] + j[1][0] * j[1][0], j[0][0] * j[0][1] + j[1][0] * j[1][1]],
            [j[0][1] * j[0][0] + j[1][1] * j[1][0], j[0][1] * j[0][1] + j[1][1] * j[1][1]],
        ];
        let mut improved = false;
        for _ in 0..60 {
            let step = match (active[0], active[1]) {
                (false, false) => {
                    let a = jtj[0][0] + lam;
                    let d = jtj[1][1] + lam;
                    let det = a * d - jtj[0][1] * jtj[1][0];
                    [-(d * grad[0] - jtj[0][1] * grad[1]) / det, -(a * grad[1] - jtj[1][0] * grad[0]) / det]
                }
                (true, false) => [T::zero(), -grad[1] / (jtj[1][1] + lam)],
                (false, true) => [-grad[0] / (jtj[0][0] + lam), T::zero()],
                (true, true) => [T::zero(), T::zero()],
            };
            let cand = [(x[0] + step[0]).max(-r).min(r), (x[1] + step[1]).max(-r).min(r)];
            let fc = ex2_equations(psi2, cand[0], cand[1]);
            if norm2(fc) < norm2(f) {
                let moved = (cand[0] - x[0]).abs().max((cand[1] - x[1]).abs());
                x = cand;
                f = fc;
                lam = (lam * lit(0.1)).max(lit(1e-12));
                improved = true;
                if moved < lit::<T>(1e-15) {
                    converged = true;
                }
                break;
            }
            lam *= lit(10.0);
        }
        if !improved || converged {
            // no descent left inside the box: a constrained critical point
            converged = true;
            break;
        }
    }
    Start {
        z: x[0],
        w: x[1],
        residual: ex2_residual(psi2, x[0]),
        converged,
    }
}

/// Levenberg-Marquardt confined to the box `[-0.5, 0.5]^2`, from a `21 x 21`
/// grid of starts. The infimum of `|F|` can sit at infinity (for constant
/// `psi2` it is approached along `w = -c/z`), so the box keeps every start
/// on a constrained critical point.
pub fn toy_ex2<T: Real>(psi2: &Poly2) -> Result<Ex2Outcome<T>> {
    let r = TRUST_RADIUS;
    let starts: Vec<(T, T)> = (0..START_GRID * START_GRID)
        .map(|idx| {
            let (i, j) = (idx / START_GRID, idx % START_GRID);
            let step = 2.0 * r / (START_GRID - 1) as f64;
            (lit(-r + step * i as f64), lit(-r + step * j as f64))
        })
        .collect();
    let results: Vec<Start<T>> = starts.par_iter().map(|&(z, w)| lm_solve(psi2, z, w)).collect();
    let converged = results.iter().filter(|s| s.converged).count();
    let mut best = 0;
    for (i, s) in results.iter().enumerate() {
        let b = &results[best];
        let key = |s: &Start<T>| (s.residual, s.z * s.z + s.w * s.w);
        let (ra, da) = key(s);
        let (rb, db) = key(b);
        if ra < rb || (ra == rb && da < db) {
            best = i;
        }
    }
    let b = &results[best];
    let w = -psi2.derivative(1, 0).eval(b.z, T::zero());
    if b.residual <= lit(NO_SOLUTION_RESIDUAL) {
        return Ok(Ex2Outcome::Solution {
            z: b.z,
            w,
            residual: b.residual,
        });
    }
    let frac = converged as f64 / results.len() as f64;
    if frac < CONVERGED_SHARE {
        return Err(Error::RootFindFailure(format!(
            "only {:.1}% of starts reached a critical point",
            100.0 * frac
        )));
    }
    Ok(Ex2Outcome::NoSolution {
        min_residual: b.residual,
        best: [b.z, w],
        converged_fraction: frac,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinearToyPoint<T: Real> {
    pub mu: T,
    /// Shift `Delta in Fix R` with `Q Delta = -Psi`.
    pub delta: DVector<T>,
    /// `|Q Delta + Psi|`, the inhomogeneity left after the shift.
    pub residual: T,
    /// `|R Delta - Delta|`.
    pub fix_defect: T,
}

/// Removes the inhomogeneity of `z' = Q(mu) z + Psi(mu)` pointwise.
pub fn toy_linear<T, Q, P>(q: Q, psi: P, mus: &[T]) -> Result<Vec<LinearToyPoint<T>>>
where
    T: Real,
    Q: Fn(T) -> Result<RevMatrix<T>>,
    P: Fn(T) -> DVector<T>,
{
    mus.iter()
        .map(|&mu| {
            let qm = q(mu)?;
            let ps = psi(mu);
            let delta = solve_fix_range(&qm, &ps)?;
            let res = qm.q() * &delta + &ps;
            let r: &DMatrix<T> = qm.involution().r();
            let fix = r * &delta - &delta;
            Ok(LinearToyPoint {
                mu,
                residual: res.amax(),
                fix_defect: fix.amax(),
                delta,
            })
        })
        .collect()
}
