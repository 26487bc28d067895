//! Uniform grids on the torus and separable discrete Fourier transforms
//! between grid values and [`FourierSeries`] coefficients.

use std::collections::BTreeMap;

use num_complex::Complex;

use crate::fourier::{FourierSeries, MultiIndex};
use crate::scalar::{cabs, cis, creal, czero, from_usize, lit, Real};

/// `m^n` equispaced points `2*pi*j/m` on the n-torus, last axis fastest.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TorusGrid {
    n: usize,
    m: usize,
}

impl TorusGrid {
    pub fn new(n: usize, m: usize) -> Self {
        assert!(m >= 1);
        TorusGrid { n, m }
    }

    /// Smallest odd grid with at least `3 * order + 2` points per axis.
    pub fn for_order(n: usize, order: usize) -> Self {
        let mut m = 3 * order + 2;
        if m % 2 == 0 {
            m += 1;
        }
        Self::new(n, m)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn points_per_axis(&self) -> usize {
        self.m
    }

    pub fn len(&self) -> usize {
        self.m.pow(self.n as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Highest `|k_j|` resolved without aliasing.
    pub fn max_wavenumber(&self) -> usize {
        (self.m - 1) / 2
    }

    pub fn point<T: Real>(&self, idx: usize) -> Vec<T> {
        let h = T::two_pi() / from_usize::<T>(self.m);
        let mut out = vec![T::zero(); self.n];
        let mut rem = idx;
        for j in (0..self.n).rev() {
            out[j] = h * from_usize::<T>(rem % self.m);
            rem /= self.m;
        }
        out
    }

    pub fn points<T: Real>(&self) -> Vec<Vec<T>> {
        (0..self.len()).map(|i| self.point(i)).collect()
    }

    /// Values of every component at every grid point, indexed `[component][point]`.
    pub fn synthesize<T: Real>(&self, s: &FourierSeries<T>) -> Vec<Vec<T>> {
        assert_eq!(s.n(), self.n);
        let kmax = s.max_mode_norm();
        let width = 2 * kmax + 1;
        let h = T::two_pi() / from_usize::<T>(self.m);
        // w[j][l] = e^{i (l - kmax) x_j}
        let w: Vec<Complex<T>> = (0..self.m)
            .flat_map(|j| {
                (0..width).map(move |l| {
                    let k = l as f64 - kmax as f64;
                    cis(lit::<T>(k) * h * from_usize::<T>(j))
                })
            })
            .collect();
        (0..s.d())
            .map(|c| {
                let mut data = vec![czero::<T>(); width.pow(self.n as u32)];
                for (k, v) in s.modes() {
                    data[box_index(k, kmax, width)] = v[c];
                }
                let mut dims = vec![width; self.n];
                for axis in 0..self.n {
                    data = apply_axis(&data, &dims, axis, &w, self.m, width);
                    dims[axis] = self.m;
                }
                data.into_iter().map(|z| z.re).collect()
            })
            .collect()
    }

    /// Least-squares Fourier coefficients of grid data `[component][point]`,
    /// keeping `|k| <= order`. Modes of the resolved box beyond `order` are
    /// dropped and reported as truncation loss.
    pub fn analyze<T: Real>(&self, data: &[Vec<T>], order: usize) -> FourierSeries<T> {
        let d = data.len();
        let kb = self.max_wavenumber();
        let width = 2 * kb + 1;
        let h = T::two_pi() / from_usize::<T>(self.m);
        let inv_m = T::one() / from_usize::<T>(self.m);
        // w[l][j] = e^{-i (l - kb) x_j} / m
        let w: Vec<Complex<T>> = (0..width)
            .flat_map(|l| {
                (0..self.m).map(move |j| {
                    let k = l as f64 - kb as f64;
                    cis(-lit::<T>(k) * h * from_usize::<T>(j)) * creal(inv_m)
                })
            })
            .collect();
        let mut boxes: Vec<Vec<Complex<T>>> = Vec::with_capacity(d);
        for comp in data {
            assert_eq!(comp.len(), self.len());
            let mut buf: Vec<Complex<T>> = comp.iter().map(|&v| creal(v)).collect();
            let mut dims = vec![self.m; self.n];
            for axis in 0..self.n {
                buf = apply_axis(&buf, &dims, axis, &w, width, self.m);
                dims[axis] = width;
            }
            boxes.push(buf);
        }
        let mut coeffs: BTreeMap<MultiIndex, Vec<Complex<T>>> = BTreeMap::new();
        let mut loss = T::zero();
        let total = width.pow(self.n as u32);
        let thr: T = lit(crate::fourier::PRUNE_THRESHOLD);
        for idx in 0..total {
            let k = box_multi_index(idx, self.n, kb, width);
            let v: Vec<Complex<T>> = boxes.iter().map(|b| b[idx]).collect();
            let mag = v.iter().fold(T::zero(), |m, &z| m.max(cabs(z)));
            if mag < thr {
                continue;
            }
            if k.norm() as usize > order {
                loss += mag;
            } else {
                coeffs.insert(k, v);
            }
        }
        let mut s = FourierSeries::from_coeffs(self.n, d, order, coeffs);
        s.add_truncation_loss(loss);
        s
    }

    /// Mean of grid data; the exact `k = 0` coefficient for band-limited data.
    pub fn mean<T: Real>(&self, values: &[T]) -> T {
        let sum = values.iter().fold(T::zero(), |a, &b| a + b);
        sum / from_usize::<T>(values.len())
    }
}

fn box_index(k: &MultiIndex, kmax: usize, width: usize) -> usize {
    k.0.iter()
        .fold(0usize, |acc, &kj| acc * width + (kj + kmax as i64) as usize)
}

fn box_multi_index(mut idx: usize, n: usize, kb: usize, width: usize) -> MultiIndex {
    let mut k = vec![0i64; n];
    for j in (0..n).rev() {
        k[j] = (idx % width) as i64 - kb as i64;
        idx /= width;
    }
    MultiIndex(k)
}

/// Applies `w` (`out_len x in_len`, row-major) along `axis` of a row-major array.
fn apply_axis<T: Real>(
    data: &[Complex<T>],
    dims: &[usize],
    axis: usize,
    w: &[Complex<T>],
    out_len: usize,
    in_len: usize,
) -> Vec<Complex<T>> {
    debug_assert_eq!(dims[axis], in_len);
    let outer: usize = dims[..axis].iter().product();
    let inner: usize = dims[axis + 1..].iter().product();
    let mut out = vec![czero::<T>(); outer * out_len * inner];
    for o in 0..outer {
        for j in 0..out_len {
            let row = &w[j * in_len..(j + 1) * in_len];
            let dst = (o * out_len + j) * inner;
            for (l, &wl) in row.iter().enumerate() {
                let src = (o * in_len + l) * inner;
                for i in 0..inner {
                    out[dst + i] += wl * data[src + i];
                }
            }
        }
    }
    out
}
