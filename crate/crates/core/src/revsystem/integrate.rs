//! Adaptive Dormand-Prince 5(4) integration of autonomous fields.

use crate::error::{Error, Result};
use crate::scalar::{lit, to_f64, Real};

#[derive(Clone, Copy, Debug)]
pub struct IntegrateOptions<T: Real> {
    pub rtol: T,
    pub atol: T,
    /// Initial step; chosen from the field when `None`.
    pub h0: Option<T>,
    pub max_steps: usize,
}

impl<T: Real> Default for IntegrateOptions<T> {
    fn default() -> Self {
        IntegrateOptions {
            rtol: lit(1e-12),
            atol: lit(1e-12),
            h0: None,
            max_steps: 5_000_000,
        }
    }
}

/// States at the requested sample times.
#[derive(Clone, Debug)]
pub struct Trajectory<T: Real> {
    pub times: Vec<T>,
    pub states: Vec<Vec<T>>,
    pub accepted: usize,
    pub rejected: usize,
}

// Dormand-Prince tableau
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `w' = f(w)` from `times[0]` and records the state at every
/// entry of the nondecreasing `times`; steps are clipped to land on each
/// sample exactly.
pub fn integrate<T, F>(f: F, w0: &[T], times: &[T], opts: &IntegrateOptions<T>) -> Result<Trajectory<T>>
where
    T: Real,
    F: Fn(&[T]) -> Vec<T>,
{
    if times.is_empty() {
        return Err(Error::InvalidInput("no sample times".into()));
    }
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidInput("sample times must be nondecreasing".into()));
    }
    let dim = w0.len();
    let mut t = times[0];
    let mut w = w0.to_vec();
    let mut k1 = f(&w);
    let mut states = vec![w.clone()];
    let span = times[times.len() - 1] - t;
    let mut h = opts.h0.unwrap_or_else(|| {
        let scale = k1.iter().fold(T::zero(), |m, v| m.max(v.abs())) + T::one();
        (lit::<T>(0.01) / scale).min(span.max(lit(1e-3)))
    });
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut ks: Vec<Vec<T>> = vec![vec![T::zero(); dim]; 7];
    let mut stage = vec![T::zero(); dim];
    let eps = lit::<T>(f64::EPSILON);
    for &target in &times[1..] {
        while t < target {
            if accepted + rejected >= opts.max_steps {
                return Err(Error::StepFailure {
                    t: to_f64(t),
                    reason: "step budget exhausted".into(),
                });
            }
            let remaining = target - t;
            let last = h >= remaining;
            let step = if last { remaining } else { h };
            if step <= eps * (T::one() + t.abs()) * lit(16.0) {
                if remaining <= eps * (T::one() + t.abs()) * lit(16.0) {
                    t = target;
                    break;
                }
                return Err(Error::StepFailure {
                    t: to_f64(t),
                    reason: format!("step size {:e} underflow", to_f64(step)),
                });
            }
            ks[0].clone_from(&k1);
            for s in 1..7 {
                for i in 0..dim {
                    let mut acc = T::zero();
                    for j in 0..s {
                        let a = A[s][j];
                        if a != 0.0 {
                            acc += lit::<T>(a) * ks[j][i];
                        }
                    }
                    stage[i] = w[i] + step * acc;
                }
                ks[s] = f(&stage);
                if ks[s].iter().any(|v| !v.is_finite()) {
                    return Err(Error::StepFailure {
                        t: to_f64(t),
                        reason: "field is not finite".into(),
                    });
                }
            }
            // stage 6 was evaluated at the fifth-order solution
            let wnew = stage.clone();
            let mut err = T::zero();
            for i in 0..dim {
                let mut e = T::zero();
                for s in 0..7 {
                    e += lit::<T>(B5[s] - B4[s]) * ks[s][i];
                }
                let sc = opts.atol + opts.rtol * w[i].abs().max(wnew[i].abs());
                let r = step * e / sc;
                err += r * r;
            }
            err = (err / lit(dim.max(1) as f64)).sqrt();
            if !err.is_finite() {
                return Err(Error::StepFailure {
                    t: to_f64(t),
                    reason: "error estimate is not finite".into(),
                });
            }
            let fac = if err == T::zero() {
                lit(5.0)
            } else {
                (lit::<T>(0.9) * err.powf(lit(-0.2))).max(lit(0.2)).min(lit(5.0))
            };
            if err <= T::one() {
                accepted += 1;
                t = if last { target } else { t + step };
                w = wnew;
                k1.clone_from(&ks[6]);
                if !last || fac < T::one() {
                    h = step * fac;
                }
            } else {
                rejected += 1;
                h = step * fac.min(T::one());
            }
        }
        states.push(w.clone());
    }
    Ok(Trajectory {
        times: times.to_vec(),
        states,
        accepted,
        rejected,
    })
}

/// Largest deviation between `G` applied to the forward trajectory from `w0`
/// and the backward trajectory from `G w0`, over `samples + 1` equally spaced
/// times in `[0, t_end]`. Vanishes up to integration error for reversible
/// fields.
pub fn reversibility_diagnostic<T, F, G>(
    f: F,
    g: G,
    w0: &[T],
    t_end: T,
    samples: usize,
    opts: &IntegrateOptions<T>,
) -> Result<T>
where
    T: Real,
    F: Fn(&[T]) -> Vec<T>,
    G: Fn(&[T]) -> Vec<T>,
{
    let times = sample_times(t_end, samples);
    let fwd = integrate(&f, w0, &times, opts)?;
    let back = integrate(|w: &[T]| f(w).into_iter().map(|v| -v).collect(), &g(w0), &times, opts)?;
    let mut dev = T::zero();
    for (a, b) in fwd.states.iter().zip(&back.states) {
        let ga = g(a);
        for (x, y) in ga.iter().zip(b) {
            dev = dev.max((*x - *y).abs());
        }
    }
    Ok(dev)
}

/// `samples + 1` equally spaced times from 0 to `t_end`.
pub fn sample_times<T: Real>(t_end: T, samples: usize) -> Vec<T> {
    let s = samples.max(1);
    (0..=s)
        .map(|i| t_end * lit::<T>(i as f64) / lit::<T>(s as f64))
        .collect()
}
