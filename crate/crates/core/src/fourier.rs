//! Truncated Fourier series on the n-torus.
//!
//! A [`FourierSeries`] stores complex coefficient vectors indexed by integer
//! multi-indices `k` with `|k| = |k_1| + ... + |k_n| <= N`. Both `k` and `-k`
//! are kept and every constructor maintains the reality invariant
//! `c(-k) = conj(c(k))`, so the represented function is real on real angles.

use std::collections::BTreeMap;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{cabs, cis, creal, czero, lit, times_i, to_f64, Real};

/// Coefficients below this magnitude are dropped.
pub const PRUNE_THRESHOLD: f64 = 1e-30;

/// Relative tolerance on the imaginary part returned by [`FourierSeries::eval`].
pub const IMAGINARY_TOLERANCE: f64 = 1e-10;

/// Integer frequency vector `k`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MultiIndex(pub Vec<i64>);

impl MultiIndex {
    pub fn zero(n: usize) -> Self {
        MultiIndex(vec![0; n])
    }

    pub fn unit(n: usize, j: usize) -> Self {
        let mut k = vec![0; n];
        k[j] = 1;
        MultiIndex(k)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    /// `|k_1| + ... + |k_n|`.
    pub fn norm(&self) -> u64 {
        self.0.iter().map(|k| k.unsigned_abs()).sum()
    }

    pub fn neg(&self) -> Self {
        MultiIndex(self.0.iter().map(|k| -k).collect())
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&k| k == 0)
    }

    /// True when the first nonzero entry is positive; exactly one of `k`, `-k`
    /// is canonical for `k != 0`.
    pub fn is_canonical(&self) -> bool {
        match self.0.iter().find(|&&k| k != 0) {
            Some(&k) => k > 0,
            None => false,
        }
    }

    pub fn dot<T: Real>(&self, w: &[T]) -> T {
        self.0
            .iter()
            .zip(w)
            .fold(T::zero(), |acc, (&k, &wj)| acc + lit::<T>(k as f64) * wj)
    }

    pub fn add(&self, other: &MultiIndex) -> MultiIndex {
        MultiIndex(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    /// All multi-indices of dimension `n` with `|k| <= max_norm`, in lexicographic order.
    pub fn enumerate(n: usize, max_norm: u64) -> Vec<MultiIndex> {
        fn rec(n: usize, budget: i64, prefix: &mut Vec<i64>, out: &mut Vec<MultiIndex>) {
            if prefix.len() == n {
                out.push(MultiIndex(prefix.clone()));
                return;
            }
            for k in -budget..=budget {
                prefix.push(k);
                rec(n, budget - k.abs(), prefix, out);
                prefix.pop();
            }
        }
        let mut out = Vec::new();
        rec(n, max_norm as i64, &mut Vec::with_capacity(n), &mut out);
        out
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

/// Vector-valued real function on the n-torus, truncated at `|k| <= order`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierSeries<T: Real> {
    n: usize,
    d: usize,
    order: usize,
    coeffs: BTreeMap<MultiIndex, Vec<Complex<T>>>,
    truncation_loss: T,
}

impl<T: Real> FourierSeries<T> {
    pub fn zeros(n: usize, d: usize, order: usize) -> Self {
        FourierSeries {
            n,
            d,
            order,
            coeffs: BTreeMap::new(),
            truncation_loss: T::zero(),
        }
    }

    pub fn constant(n: usize, order: usize, values: &[T]) -> Self {
        let mut s = Self::zeros(n, values.len(), order);
        s.set_mode(&MultiIndex::zero(n), values.iter().map(|&v| creal(v)).collect());
        s
    }

    /// `cos_amp * cos<k,x> + sin_amp * sin<k,x>`.
    pub fn trig(n: usize, order: usize, k: &[i64], cos_amp: &[T], sin_amp: &[T]) -> Self {
        let mut s = Self::zeros(n, cos_amp.len(), order);
        s.add_trig(k, cos_amp, sin_amp);
        s
    }

    pub fn cos(n: usize, order: usize, k: &[i64], amp: &[T]) -> Self {
        Self::trig(n, order, k, amp, &vec![T::zero(); amp.len()])
    }

    pub fn sin(n: usize, order: usize, k: &[i64], amp: &[T]) -> Self {
        Self::trig(n, order, k, &vec![T::zero(); amp.len()], amp)
    }

    /// Adds `cos_amp * cos<k,x> + sin_amp * sin<k,x>` in place.
    pub fn add_trig(&mut self, k: &[i64], cos_amp: &[T], sin_amp: &[T]) {
        assert_eq!(k.len(), self.n, "multi-index dimension");
        assert_eq!(cos_amp.len(), self.d);
        assert_eq!(sin_amp.len(), self.d);
        let k = MultiIndex(k.to_vec());
        if k.norm() as usize > self.order {
            let lost = cos_amp
                .iter()
                .zip(sin_amp)
                .fold(T::zero(), |m, (&a, &b)| m.max(a.abs() + b.abs()));
            self.truncation_loss += lost;
            return;
        }
        let half: T = lit(0.5);
        if k.is_zero() {
            let c: Vec<Complex<T>> = cos_amp.iter().map(|&a| creal(a)).collect();
            self.accumulate(&k, &c);
            return;
        }
        // a cos + b sin = (a - ib)/2 e^{ikx} + (a + ib)/2 e^{-ikx}
        let ck: Vec<Complex<T>> = cos_amp
            .iter()
            .zip(sin_amp)
            .map(|(&a, &b)| Complex::new(a * half, -b * half))
            .collect();
        self.accumulate_pair(&k, &ck);
    }

    fn accumulate(&mut self, k: &MultiIndex, c: &[Complex<T>]) {
        let entry = self
            .coeffs
            .entry(k.clone())
            .or_insert_with(|| vec![czero(); c.len()]);
        for (e, &v) in entry.iter_mut().zip(c) {
            *e += v;
        }
        self.prune_mode(k);
    }

    /// Adds `c` at `k` and `conj(c)` at `-k`.
    fn accumulate_pair(&mut self, k: &MultiIndex, c: &[Complex<T>]) {
        if k.is_zero() {
            let re: Vec<Complex<T>> = c.iter().map(|v| creal(v.re)).collect();
            self.accumulate(k, &re);
            return;
        }
        self.accumulate(k, c);
        let conj: Vec<Complex<T>> = c.iter().map(|v| v.conj()).collect();
        self.accumulate(&k.neg(), &conj);
    }

    fn prune_mode(&mut self, k: &MultiIndex) {
        let thr: T = lit(PRUNE_THRESHOLD);
        if let Some(c) = self.coeffs.get(k) {
            if c.iter().all(|&v| cabs(v) < thr) {
                self.coeffs.remove(k);
            }
        }
    }

    fn prune(&mut self) {
        let thr: T = lit(PRUNE_THRESHOLD);
        self.coeffs.retain(|_, c| c.iter().any(|&v| cabs(v) >= thr));
    }

    /// Sets the coefficient at `k` and its conjugate at `-k`.
    pub fn set_mode(&mut self, k: &MultiIndex, c: Vec<Complex<T>>) {
        assert_eq!(c.len(), self.d);
        if k.norm() as usize > self.order {
            let lost = c.iter().fold(T::zero(), |m, &v| m.max(cabs(v)));
            self.truncation_loss += lost;
            return;
        }
        self.coeffs.remove(k);
        self.coeffs.remove(&k.neg());
        self.accumulate_pair(k, &c);
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn order(&self) -> usize {
        self.order
    }

    /// Accumulated magnitude of coefficients dropped by truncation.
    pub fn truncation_loss(&self) -> T {
        self.truncation_loss
    }

    pub fn add_truncation_loss(&mut self, loss: T) {
        self.truncation_loss += loss;
    }

    pub fn coeff(&self, k: &MultiIndex) -> Option<&[Complex<T>]> {
        self.coeffs.get(k).map(|v| v.as_slice())
    }

    pub fn modes(&self) -> impl Iterator<Item = (&MultiIndex, &Vec<Complex<T>>)> {
        self.coeffs.iter()
    }

    pub fn num_modes(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Builds a series from a full coefficient map; the map must already be
    /// conjugate-symmetric (checked up to `1e-12` relative).
    pub fn from_coeffs(
        n: usize,
        d: usize,
        order: usize,
        coeffs: BTreeMap<MultiIndex, Vec<Complex<T>>>,
    ) -> Self {
        let mut s = Self::zeros(n, d, order);
        for (k, c) in coeffs {
            if k.norm() as usize > order {
                s.truncation_loss += c.iter().fold(T::zero(), |m, &v| m.max(cabs(v)));
                continue;
            }
            s.coeffs.insert(k, c);
        }
        s.symmetrize();
        s.prune();
        s
    }

    /// Replaces each pair by its conjugate-symmetric average.
    fn symmetrize(&mut self) {
        let half: T = lit(0.5);
        let keys: Vec<MultiIndex> = self.coeffs.keys().cloned().collect();
        for k in keys {
            if k.is_zero() {
                if let Some(c) = self.coeffs.get_mut(&k) {
                    for v in c.iter_mut() {
                        v.im = T::zero();
                    }
                }
                continue;
            }
            if !k.is_canonical() {
                continue;
            }
            let nk = k.neg();
            let a = self.coeffs.get(&k).cloned().unwrap_or_else(|| vec![czero(); self.d]);
            let b = self.coeffs.get(&nk).cloned().unwrap_or_else(|| vec![czero(); self.d]);
            let sym: Vec<Complex<T>> = a
                .iter()
                .zip(&b)
                .map(|(&x, &y)| (x + y.conj()) * creal(half))
                .collect();
            self.coeffs.insert(nk.clone(), sym.iter().map(|v| v.conj()).collect());
            self.coeffs.insert(k, sym);
        }
    }

    /// Largest deviation from conjugate symmetry.
    pub fn reality_defect(&self) -> T {
        let mut worst = T::zero();
        for (k, c) in &self.coeffs {
            let other = self.coeffs.get(&k.neg());
            for (i, &v) in c.iter().enumerate() {
                let w = other.map(|o| o[i]).unwrap_or_else(czero);
                worst = worst.max(cabs(v - w.conj()));
            }
        }
        worst
    }

    /// Complex value `sum_k c_k e^{i<k,x>}`.
    pub fn eval_complex(&self, x: &[T]) -> Vec<Complex<T>> {
        assert_eq!(x.len(), self.n, "angle dimension");
        let mut out = vec![czero(); self.d];
        for (k, c) in &self.coeffs {
            let e = cis(k.dot(x));
            for (o, &v) in out.iter_mut().zip(c) {
                *o += v * e;
            }
        }
        out
    }

    /// Real value at angles `x`.
    pub fn eval(&self, x: &[T]) -> Result<Vec<T>> {
        let z = self.eval_complex(x);
        let scale = T::one() + self.strip_norm(T::zero());
        let residue = z.iter().fold(T::zero(), |m, v| m.max(v.im.abs()));
        let tol = scale * lit(IMAGINARY_TOLERANCE);
        if residue > tol {
            return Err(Error::ImaginaryResidue {
                residue: to_f64(residue),
                tolerance: to_f64(tol),
            });
        }
        Ok(z.into_iter().map(|v| v.re).collect())
    }

    /// Real part of the value at `x`, without the residue check.
    pub fn eval_re(&self, x: &[T]) -> Vec<T> {
        self.eval_complex(x).into_iter().map(|v| v.re).collect()
    }

    /// `(dS/dx) w`: multiplies each coefficient by `i<k,w>`.
    pub fn directional_derivative(&self, w: &[T]) -> Self {
        assert_eq!(w.len(), self.n);
        let mut out = Self::zeros(self.n, self.d, self.order);
        for (k, c) in &self.coeffs {
            if k.is_zero() {
                continue;
            }
            let f = k.dot(w);
            out.coeffs
                .insert(k.clone(), c.iter().map(|&v| times_i(v) * creal(f)).collect());
        }
        out.prune();
        out
    }

    /// `dS/dx_j`.
    pub fn partial(&self, j: usize) -> Self {
        let mut w = vec![T::zero(); self.n];
        w[j] = T::one();
        self.directional_derivative(&w)
    }

    /// Coefficient majorant `sum_k |c_k| e^{|k| rho}` with `|c_k|` the max over
    /// components. Dominates the supremum over the strip `|Im x_j| < rho`.
    pub fn strip_norm(&self, rho: T) -> T {
        self.coeffs.iter().fold(T::zero(), |acc, (k, c)| {
            let mag = c.iter().fold(T::zero(), |m, &v| m.max(cabs(v)));
            acc + mag * (rho * lit::<T>(k.norm() as f64)).exp()
        })
    }

    /// Largest coefficient magnitude.
    pub fn max_coeff(&self) -> T {
        self.coeffs
            .values()
            .flat_map(|c| c.iter())
            .fold(T::zero(), |m, &v| m.max(cabs(v)))
    }

    /// The `k = 0` coefficient.
    pub fn average(&self) -> Vec<T> {
        match self.coeffs.get(&MultiIndex::zero(self.n)) {
            Some(c) => c.iter().map(|v| v.re).collect(),
            None => vec![T::zero(); self.d],
        }
    }

    pub fn without_average(&self) -> Self {
        let mut out = self.clone();
        out.coeffs.remove(&MultiIndex::zero(self.n));
        out
    }

    /// Majorant of `S - <S>`.
    pub fn variation(&self) -> T {
        self.without_average().strip_norm(T::zero())
    }

    /// `x -> S(-x)`.
    pub fn reflect(&self) -> Self {
        let mut out = Self::zeros(self.n, self.d, self.order);
        for (k, c) in &self.coeffs {
            out.coeffs.insert(k.neg(), c.clone());
        }
        out.truncation_loss = self.truncation_loss;
        out
    }

    /// `(even, odd)` with `even(-x) = even(x)`, `odd(-x) = -odd(x)`.
    pub fn parity_decompose(&self) -> (Self, Self) {
        let r = self.reflect();
        let half: T = lit(0.5);
        let even = self.add(&r).scale(half);
        let odd = self.sub(&r).scale(half);
        (even, odd)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(Complex<T>, Complex<T>) -> Complex<T>) -> Self {
        assert_eq!(self.n, other.n, "torus dimension");
        assert_eq!(self.d, other.d, "target dimension");
        let mut out = Self::zeros(self.n, self.d, self.order.max(other.order));
        let zero = vec![czero(); self.d];
        let keys: std::collections::BTreeSet<&MultiIndex> =
            self.coeffs.keys().chain(other.coeffs.keys()).collect();
        for k in keys {
            let a = self.coeffs.get(k).unwrap_or(&zero);
            let b = other.coeffs.get(k).unwrap_or(&zero);
            out.coeffs
                .insert(k.clone(), a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect());
        }
        out.truncation_loss = self.truncation_loss + other.truncation_loss;
        out.prune();
        out
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = self.clone();
        for c in out.coeffs.values_mut() {
            for v in c.iter_mut() {
                *v *= creal(s);
            }
        }
        out.prune();
        out
    }

    /// Applies a real `r x d` matrix to the target vectors.
    pub fn map_target(&self, m: &DMatrix<T>) -> Self {
        assert_eq!(m.ncols(), self.d);
        let mut out = Self::zeros(self.n, m.nrows(), self.order);
        for (k, c) in &self.coeffs {
            let v: Vec<Complex<T>> = (0..m.nrows())
                .map(|i| {
                    (0..self.d).fold(czero(), |acc, j| acc + c[j] * creal(m[(i, j)]))
                })
                .collect();
            out.coeffs.insert(k.clone(), v);
        }
        out.truncation_loss = self.truncation_loss;
        out.prune();
        out
    }

    pub fn component(&self, i: usize) -> Self {
        self.components(&[i])
    }

    pub fn components(&self, idx: &[usize]) -> Self {
        let mut out = Self::zeros(self.n, idx.len(), self.order);
        for (k, c) in &self.coeffs {
            out.coeffs.insert(k.clone(), idx.iter().map(|&i| c[i]).collect());
        }
        out.prune();
        out
    }

    /// Stacks series with equal `n` into one series.
    pub fn stack(parts: &[Self]) -> Self {
        assert!(!parts.is_empty());
        let n = parts[0].n;
        let order = parts.iter().map(|p| p.order).max().unwrap_or(0);
        let d: usize = parts.iter().map(|p| p.d).sum();
        let mut out = Self::zeros(n, d, order);
        let mut offset = 0;
        for p in parts {
            assert_eq!(p.n, n);
            for (k, c) in &p.coeffs {
                let e = out.coeffs.entry(k.clone()).or_insert_with(|| vec![czero(); d]);
                e[offset..offset + p.d].copy_from_slice(c);
            }
            out.truncation_loss += p.truncation_loss;
            offset += p.d;
        }
        out
    }

    /// Pointwise product with a scalar series (`other.d() == 1`) by direct
    /// convolution; modes beyond the larger operand order are dropped and their
    /// magnitude is recorded as truncation loss.
    pub fn mul_scalar(&self, other: &Self) -> Self {
        assert_eq!(other.d, 1, "scalar factor expected");
        assert_eq!(self.n, other.n);
        let order = self.order.max(other.order);
        let mut acc: BTreeMap<MultiIndex, Vec<Complex<T>>> = BTreeMap::new();
        for (ka, ca) in &self.coeffs {
            for (kb, cb) in &other.coeffs {
                let k = ka.add(kb);
                let e = acc.entry(k).or_insert_with(|| vec![czero(); self.d]);
                for (ei, &ai) in e.iter_mut().zip(ca) {
                    *ei += ai * cb[0];
                }
            }
        }
        let mut out = Self::zeros(self.n, self.d, order);
        for (k, c) in acc {
            if k.norm() as usize > order {
                out.truncation_loss += c.iter().fold(T::zero(), |m, &v| m.max(cabs(v)));
            } else {
                out.coeffs.insert(k, c);
            }
        }
        out.truncation_loss += self.truncation_loss + other.truncation_loss;
        out.prune();
        out
    }

    /// Drops modes with `|k| > order`.
    pub fn truncate(&self, order: usize) -> Self {
        let mut out = Self::zeros(self.n, self.d, order);
        out.truncation_loss = self.truncation_loss;
        for (k, c) in &self.coeffs {
            if k.norm() as usize > order {
                out.truncation_loss += c.iter().fold(T::zero(), |m, &v| m.max(cabs(v)));
            } else {
                out.coeffs.insert(k.clone(), c.clone());
            }
        }
        out
    }

    pub fn with_order(mut self, order: usize) -> Self {
        if order < self.order {
            return self.truncate(order);
        }
        self.order = order;
        self
    }

    /// Largest `|k|` carrying a coefficient.
    pub fn max_mode_norm(&self) -> usize {
        self.coeffs.keys().map(|k| k.norm() as usize).max().unwrap_or(0)
    }

    /// Evaluates at many points using per-dimension exponential tables.
    pub fn eval_many(&self, points: &[Vec<T>]) -> Vec<Vec<T>> {
        let kmax = self.max_mode_norm() as i64;
        let width = (2 * kmax + 1) as usize;
        let modes: Vec<(&MultiIndex, &Vec<Complex<T>>)> = self.coeffs.iter().collect();
        points
            .iter()
            .map(|x| {
                let mut table = vec![czero::<T>(); self.n * width];
                for (j, &xj) in x.iter().enumerate() {
                    for kk in -kmax..=kmax {
                        table[j * width + (kk + kmax) as usize] = cis(lit::<T>(kk as f64) * xj);
                    }
                }
                let mut out = vec![T::zero(); self.d];
                for (k, c) in &modes {
                    let mut e = creal(T::one());
                    for (j, &kj) in k.0.iter().enumerate() {
                        e *= table[j * width + (kj + kmax) as usize];
                    }
                    for (o, &v) in out.iter_mut().zip(c.iter()) {
                        *o += (v * e).re;
                    }
                }
                out
            })
            .collect()
    }

    pub fn to_record(&self) -> SeriesRecord {
        let coeffs = self
            .coeffs
            .iter()
            .filter(|(k, _)| k.is_zero() || k.is_canonical())
            .map(|(k, c)| CoeffRecord {
                k: k.0.clone(),
                re: c.iter().map(|v| to_f64(v.re)).collect(),
                im: c.iter().map(|v| to_f64(v.im)).collect(),
            })
            .collect();
        SeriesRecord {
            n: self.n,
            d: self.d,
            order: self.order,
            coeffs,
        }
    }

    pub fn from_record(rec: &SeriesRecord) -> Result<Self> {
        let mut s = Self::zeros(rec.n, rec.d, rec.order);
        for c in &rec.coeffs {
            if c.k.len() != rec.n || c.re.len() != rec.d || c.im.len() != rec.d {
                return Err(Error::Serialization(format!(
                    "coefficient record at k = {:?} has inconsistent dimensions",
                    c.k
                )));
            }
            let k = MultiIndex(c.k.clone());
            if !(k.is_zero() || k.is_canonical()) {
                return Err(Error::Serialization(format!(
                    "k = {:?} is not the canonical member of its +-k pair",
                    c.k
                )));
            }
            let v: Vec<Complex<T>> = c
                .re
                .iter()
                .zip(&c.im)
                .map(|(&re, &im)| Complex::new(lit(re), lit(im)))
                .collect();
            s.set_mode(&k, v);
        }
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_record()).expect("series record serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let rec: SeriesRecord =
            serde_json::from_str(text).map_err(|e| Error::Serialization(e.to_string()))?;
        Self::from_record(&rec)
    }
}

/// JSON form of a series; only one member of each `+-k` pair is stored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesRecord {
    pub n: usize,
    pub d: usize,
    #[serde(rename = "N")]
    pub order: usize,
    pub coeffs: Vec<CoeffRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoeffRecord {
    pub k: Vec<i64>,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

/// Matrix-valued series stored row-major in a [`FourierSeries`].
#[derive(Clone, Debug, PartialEq)]
pub struct MatrixSeries<T: Real> {
    pub rows: usize,
    pub cols: usize,
    pub series: FourierSeries<T>,
}

impl<T: Real> MatrixSeries<T> {
    pub fn zeros(n: usize, rows: usize, cols: usize, order: usize) -> Self {
        MatrixSeries {
            rows,
            cols,
            series: FourierSeries::zeros(n, rows * cols, order),
        }
    }

    pub fn from_series(rows: usize, cols: usize, series: FourierSeries<T>) -> Self {
        assert_eq!(series.d(), rows * cols);
        MatrixSeries { rows, cols, series }
    }

    pub fn constant(n: usize, order: usize, m: &DMatrix<T>) -> Self {
        let vals: Vec<T> = (0..m.nrows())
            .flat_map(|i| (0..m.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| m[(i, j)])
            .collect();
        MatrixSeries {
            rows: m.nrows(),
            cols: m.ncols(),
            series: FourierSeries::constant(n, order, &vals),
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> FourierSeries<T> {
        self.series.component(i * self.cols + j)
    }

    pub fn average(&self) -> DMatrix<T> {
        let avg = self.series.average();
        DMatrix::from_fn(self.rows, self.cols, |i, j| avg[i * self.cols + j])
    }

    pub fn mode_matrix(&self, k: &MultiIndex) -> DMatrix<Complex<T>> {
        match self.series.coeff(k) {
            Some(c) => DMatrix::from_fn(self.rows, self.cols, |i, j| c[i * self.cols + j]),
            None => DMatrix::from_element(self.rows, self.cols, czero()),
        }
    }

    pub fn eval(&self, x: &[T]) -> DMatrix<T> {
        let v = self.series.eval_re(x);
        DMatrix::from_fn(self.rows, self.cols, |i, j| v[i * self.cols + j])
    }

    /// Sub-block `rows r0..r0+nr`, `cols c0..c0+nc`.
    pub fn block(&self, r0: usize, c0: usize, nr: usize, nc: usize) -> Self {
        let idx: Vec<usize> = (0..nr)
            .flat_map(|i| (0..nc).map(move |j| (r0 + i) * self.cols + c0 + j))
            .collect();
        MatrixSeries {
            rows: nr,
            cols: nc,
            series: self.series.components(&idx),
        }
    }

    pub fn max_coeff(&self) -> T {
        self.series.max_coeff()
    }

    pub fn variation(&self) -> T {
        self.series.variation()
    }

    pub fn reflect(&self) -> Self {
        MatrixSeries {
            rows: self.rows,
            cols: self.cols,
            series: self.series.reflect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        MatrixSeries {
            rows: self.rows,
            cols: self.cols,
            series: self.series.sub(&other.series),
        }
    }

    /// `L * M(x) * Rm` with constant real matrices.
    pub fn sandwich(&self, left: &DMatrix<T>, right: &DMatrix<T>) -> Self {
        let mut out = MatrixSeries::zeros(self.series.n(), left.nrows(), right.ncols(), self.series.order());
        for (k, _) in self.series.modes() {
            let m = self.mode_matrix(k);
            let l = left.map(creal);
            let r = right.map(creal);
            let p = l * m * r;
            let c: Vec<Complex<T>> = (0..p.nrows())
                .flat_map(|i| (0..p.ncols()).map(move |j| (i, j)))
                .map(|(i, j)| p[(i, j)])
                .collect();
            out.series.coeffs.insert(k.clone(), c);
        }
        out.series.prune();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    type S = FourierSeries<f64>;

    fn random_series(n: usize, d: usize, order: usize, seed: u64) -> S {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut s = S::zeros(n, d, order);
        for k in MultiIndex::enumerate(n, order as u64) {
            if !(k.is_zero() || k.is_canonical()) {
                continue;
            }
            let decay = (-0.5 * k.norm() as f64).exp();
            let c: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0) * decay).collect();
            let sn: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0) * decay).collect();
            s.add_trig(&k.0, &c, &sn);
        }
        s
    }

    #[test]
    fn cosine_at_zero() {
        let s = S::cos(1, 4, &[1], &[1.0]);
        assert_abs_diff_eq!(s.eval(&[0.0]).unwrap()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn constant_everywhere() {
        let s = S::constant(2, 3, &[2.5, -1.0]);
        for x in [[0.0, 0.0], [1.0, 2.0], [-3.0, 0.5]] {
            assert_eq!(s.eval(&x).unwrap(), vec![2.5, -1.0]);
        }
    }

    #[test]
    fn sine_of_combination() {
        let s = S::sin(2, 4, &[1, 2], &[1.0]);
        assert_abs_diff_eq!(s.eval(&[FRAC_PI_2, 0.0]).unwrap()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn broken_reality_is_reported() {
        let mut coeffs = BTreeMap::new();
        coeffs.insert(MultiIndex(vec![1]), vec![Complex::new(0.5, 0.0)]);
        let mut s = S::zeros(1, 1, 3);
        s.coeffs = coeffs;
        assert!(matches!(
            s.eval(&[0.3]),
            Err(Error::ImaginaryResidue { .. })
        ));
    }

    #[test]
    fn derivative_of_sine() {
        let d = S::sin(1, 4, &[1], &[1.0]).directional_derivative(&[1.0]);
        let expected = S::cos(1, 4, &[1], &[1.0]);
        assert!(d.sub(&expected).max_coeff() < 1e-15);
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        let d = S::constant(2, 3, &[4.0]).directional_derivative(&[0.3, 0.7]);
        assert!(d.is_zero());
    }

    #[test]
    fn derivative_chain_rule() {
        let d = S::sin(2, 4, &[1, -1], &[1.0]).directional_derivative(&[2.0, 3.0]);
        let expected = S::cos(2, 4, &[1, -1], &[-1.0]);
        assert!(d.sub(&expected).max_coeff() < 1e-15);
    }

    #[test]
    fn strip_norm_of_cosine() {
        let rho = 0.7;
        let s = S::cos(1, 4, &[1], &[1.0]);
        assert_abs_diff_eq!(s.strip_norm(rho), rho.exp(), epsilon = 1e-14);
        assert_abs_diff_eq!(S::constant(1, 2, &[-3.0]).strip_norm(rho), 3.0);
    }

    #[test]
    fn average_and_parity() {
        assert_eq!(S::cos(1, 3, &[1], &[1.0]).average(), vec![0.0]);
        let s = S::sin(1, 3, &[1], &[1.0]).add(&S::constant(1, 3, &[2.0]));
        let (even, odd) = s.parity_decompose();
        assert!(even.sub(&S::constant(1, 3, &[2.0])).max_coeff() < 1e-15);
        assert!(odd.sub(&S::sin(1, 3, &[1], &[1.0])).max_coeff() < 1e-15);
    }

    #[test]
    fn parity_reconstruction_at_random_points() {
        use rand::{Rng, SeedableRng};
        let s = random_series(2, 2, 5, 11);
        let (even, odd) = s.parity_decompose();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x = [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)];
            let a = s.eval(&x).unwrap();
            let e = even.eval(&x).unwrap();
            let o = odd.eval(&x).unwrap();
            let mx = [-x[0], -x[1]];
            let em = even.eval(&mx).unwrap();
            let om = odd.eval(&mx).unwrap();
            for i in 0..2 {
                assert_abs_diff_eq!(a[i], e[i] + o[i], epsilon = 1e-13);
                assert_abs_diff_eq!(em[i], e[i], epsilon = 1e-13);
                assert_abs_diff_eq!(om[i], -o[i], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn product_truncates_and_reports() {
        let a = S::cos(1, 2, &[2], &[1.0]);
        let p = a.mul_scalar(&a);
        // cos^2(2x) = 1/2 + cos(4x)/2; the dropped part has sup norm 1/2
        assert_abs_diff_eq!(p.average()[0], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p.truncation_loss(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn json_round_trip() {
        let s = random_series(2, 3, 4, 3);
        let text = s.to_json();
        let back = S::from_json(&text).unwrap();
        assert!(back.sub(&s).max_coeff() < 1e-15);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["N"], 4);
        // one member of each +-k pair
        let stored = v["coeffs"].as_array().unwrap().len();
        assert_eq!(stored, (s.num_modes() + 1) / 2);
    }

    #[test]
    fn eval_many_matches_eval() {
        let s = random_series(2, 2, 6, 9);
        let pts = vec![vec![0.1, 0.2], vec![3.0, -1.0], vec![5.5, 2.2]];
        let many = s.eval_many(&pts);
        for (p, v) in pts.iter().zip(&many) {
            let direct = s.eval(p).unwrap();
            for i in 0..2 {
                assert_abs_diff_eq!(v[i], direct[i], epsilon = 1e-13);
            }
        }
    }

    #[test]
    fn generic_over_f32() {
        let s = FourierSeries::<f32>::cos(1, 2, &[1], &[2.0]);
        assert!((s.eval(&[0.0]).unwrap()[0] - 2.0).abs() < 1e-6);
    }

    proptest! {
        #[test]
        fn derivative_is_linear_and_commutes(seed in 0u64..1000, w1 in -2.0f64..2.0, w2 in -2.0f64..2.0, c in -3.0f64..3.0) {
            let a = random_series(2, 1, 5, seed);
            let b = random_series(2, 1, 5, seed + 7);
            let w = [w1, w2];
            let v = [w2, 0.5];
            let lhs = a.scale(c).add(&b).directional_derivative(&w);
            let rhs = a.directional_derivative(&w).scale(c).add(&b.directional_derivative(&w));
            prop_assert!(lhs.sub(&rhs).max_coeff() < 1e-12);
            let wv = a.directional_derivative(&w).directional_derivative(&v);
            let vw = a.directional_derivative(&v).directional_derivative(&w);
            prop_assert!(wv.sub(&vw).max_coeff() < 1e-12);
            prop_assert_eq!(a.directional_derivative(&w).average(), vec![0.0]);
        }

        #[test]
        fn strip_norm_dominates_samples(seed in 0u64..1000) {
            use rand::{Rng, SeedableRng};
            let s = random_series(2, 2, 6, seed);
            let bound = s.strip_norm(0.0);
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..1000 {
                let x = [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)];
                for v in s.eval(&x).unwrap() {
                    prop_assert!(v.abs() <= bound * (1.0 + 1e-12));
                }
            }
            prop_assert!(s.strip_norm(0.1) <= s.strip_norm(0.3));
        }

        #[test]
        fn reality_survives_operations(seed in 0u64..1000) {
            let a = random_series(2, 2, 5, seed);
            let b = random_series(2, 1, 5, seed + 1);
            let ops = [
                a.mul_scalar(&b),
                a.reflect(),
                a.directional_derivative(&[0.3, -1.1]),
                a.parity_decompose().1,
            ];
            for s in ops.iter() {
                prop_assert!(s.reality_defect() < 1e-15);
                prop_assert!(s.eval(&[0.4, 1.3]).is_ok());
            }
        }
    }
}
