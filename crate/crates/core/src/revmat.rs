//! Involutions, infinitesimally reversible matrices and their versal unfoldings.
//!
//! For an involution `R` the space `gl(N)` splits into `gl_{+R}` (matrices
//! commuting with `R`) and `gl_{-R}` (matrices anti-commuting with `R`).
//! Conjugation by `GL_{+R}` preserves `gl_{-R}`; its tangent at `Q` is the
//! image of `A -> AQ - QA` on `gl_{+R}`.

use nalgebra::{DMatrix, DVector, Scalar};
use num_traits::{One, Zero};

use crate::error::{Error, Result};
use crate::linalg::{self, RANK_TOL};
use crate::scalar::{lit, to_f64, Real};

/// Tolerance on `|R^2 - I|` accepted by [`InvolutionStructure::new`].
pub const INVOLUTION_TOL: f64 = 1e-8;
/// Relative tolerance on `|RQ + QR|` accepted by [`RevMatrix::new`].
pub const ANTICOMMUTE_TOL: f64 = 1e-12;
/// Relative residual tolerance of [`solve_fix_range`].
pub const FIX_RANGE_TOL: f64 = 1e-10;

/// An involution together with orthonormal bases of its two eigenspaces.
#[derive(Clone, Debug, PartialEq)]
pub struct InvolutionStructure<T: Real> {
    r: DMatrix<T>,
    fix_plus: DMatrix<T>,
    fix_minus: DMatrix<T>,
    // columns [fix_plus fix_minus] and its inverse
    frame: DMatrix<T>,
    frame_inv: DMatrix<T>,
}

impl<T: Real> InvolutionStructure<T> {
    /// Fix spaces of `R` from the ranges of the projectors `(I +- R)/2`.
    pub fn new(r: DMatrix<T>) -> Result<Self> {
        if !r.is_square() {
            return Err(Error::InvalidInput("involution must be square".into()));
        }
        let n = r.nrows();
        let id = DMatrix::<T>::identity(n, n);
        let defect = linalg::max_abs(&(&r * &r - &id));
        if defect > lit(INVOLUTION_TOL) {
            return Err(Error::NotInvolutive(to_f64(defect)));
        }
        let half: T = lit(0.5);
        let fix_plus = linalg::range_basis(&((&id + &r) * half), RANK_TOL);
        let fix_minus = linalg::range_basis(&((&id - &r) * half), RANK_TOL);
        if fix_plus.ncols() + fix_minus.ncols() != n {
            return Err(Error::NotInvolutive(to_f64(defect)));
        }
        let mut frame = DMatrix::zeros(n, n);
        frame.view_mut((0, 0), (n, fix_plus.ncols())).copy_from(&fix_plus);
        frame
            .view_mut((0, fix_plus.ncols()), (n, fix_minus.ncols()))
            .copy_from(&fix_minus);
        let frame_inv = frame
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::NotInvolutive(to_f64(defect)))?;
        Ok(InvolutionStructure {
            r,
            fix_plus,
            fix_minus,
            frame,
            frame_inv,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(linalg::from_rows(rows))
    }

    pub fn diag(entries: &[f64]) -> Result<Self> {
        let d = DVector::from_iterator(entries.len(), entries.iter().map(|&e| lit::<T>(e)));
        Self::new(DMatrix::from_diagonal(&d))
    }

    /// `(-I_m) + I_m + R`, the involution of the augmented phase space.
    pub fn augmented(&self, m: usize) -> Result<Self> {
        let minus = -DMatrix::<T>::identity(m, m);
        let plus = DMatrix::<T>::identity(m, m);
        Self::new(linalg::direct_sum(&[&minus, &plus, &self.r]))
    }

    /// `J = (-I_m) + I_m`.
    pub fn j(m: usize) -> Result<Self> {
        let minus = -DMatrix::<T>::identity(m, m);
        let plus = DMatrix::<T>::identity(m, m);
        Self::new(linalg::direct_sum(&[&minus, &plus]))
    }

    pub fn r(&self) -> &DMatrix<T> {
        &self.r
    }

    pub fn dim(&self) -> usize {
        self.r.nrows()
    }

    /// Orthonormal basis of `Fix R`, as columns.
    pub fn fix_plus(&self) -> &DMatrix<T> {
        &self.fix_plus
    }

    /// Orthonormal basis of `Fix(-R)`, as columns.
    pub fn fix_minus(&self) -> &DMatrix<T> {
        &self.fix_minus
    }

    pub fn dim_plus(&self) -> usize {
        self.fix_plus.ncols()
    }

    pub fn dim_minus(&self) -> usize {
        self.fix_minus.ncols()
    }

    pub fn dim_gl_plus(&self) -> usize {
        self.dim_plus().pow(2) + self.dim_minus().pow(2)
    }

    pub fn dim_gl_minus(&self) -> usize {
        2 * self.dim_plus() * self.dim_minus()
    }

    /// `(M + RMR)/2`.
    pub fn commuting_part(&self, m: &DMatrix<T>) -> DMatrix<T> {
        (m + &self.r * m * &self.r) * lit::<T>(0.5)
    }

    /// `(M - RMR)/2`.
    pub fn anti_commuting_part(&self, m: &DMatrix<T>) -> DMatrix<T> {
        (m - &self.r * m * &self.r) * lit::<T>(0.5)
    }

    /// `|RQ + QR|`.
    pub fn anti_commutation_defect(&self, q: &DMatrix<T>) -> T {
        linalg::max_abs(&(&self.r * q + q * &self.r))
    }

    pub fn commutation_defect(&self, q: &DMatrix<T>) -> T {
        linalg::max_abs(&(&self.r * q - q * &self.r))
    }

    /// Coordinates of `M` in `gl_{-R}`: the off-diagonal blocks of
    /// `F^{-1} M F` in the eigenframe `F`, flattened row-major.
    pub fn gl_minus_coords(&self, m: &DMatrix<T>) -> DVector<T> {
        let (a, b) = (self.dim_plus(), self.dim_minus());
        let c = &self.frame_inv * m * &self.frame;
        let mut v = Vec::with_capacity(2 * a * b);
        for i in 0..a {
            for j in 0..b {
                v.push(c[(i, a + j)]);
            }
        }
        for i in 0..b {
            for j in 0..a {
                v.push(c[(a + i, j)]);
            }
        }
        DVector::from_vec(v)
    }

    pub fn gl_minus_from_coords(&self, v: &DVector<T>) -> DMatrix<T> {
        let (a, b) = (self.dim_plus(), self.dim_minus());
        let mut c = DMatrix::zeros(a + b, a + b);
        let mut idx = 0;
        for i in 0..a {
            for j in 0..b {
                c[(i, a + j)] = v[idx];
                idx += 1;
            }
        }
        for i in 0..b {
            for j in 0..a {
                c[(a + i, j)] = v[idx];
                idx += 1;
            }
        }
        &self.frame * c * &self.frame_inv
    }

    /// Coordinates of `M` in `gl_{+R}`: the diagonal blocks in the eigenframe.
    pub fn gl_plus_coords(&self, m: &DMatrix<T>) -> DVector<T> {
        let (a, b) = (self.dim_plus(), self.dim_minus());
        let c = &self.frame_inv * m * &self.frame;
        let mut v = Vec::with_capacity(a * a + b * b);
        for i in 0..a {
            for j in 0..a {
                v.push(c[(i, j)]);
            }
        }
        for i in 0..b {
            for j in 0..b {
                v.push(c[(a + i, a + j)]);
            }
        }
        DVector::from_vec(v)
    }

    pub fn gl_plus_from_coords(&self, v: &DVector<T>) -> DMatrix<T> {
        let (a, b) = (self.dim_plus(), self.dim_minus());
        let mut c = DMatrix::zeros(a + b, a + b);
        let mut idx = 0;
        for i in 0..a {
            for j in 0..a {
                c[(i, j)] = v[idx];
                idx += 1;
            }
        }
        for i in 0..b {
            for j in 0..b {
                c[(a + i, a + j)] = v[idx];
                idx += 1;
            }
        }
        &self.frame * c * &self.frame_inv
    }

    pub fn gl_plus_basis(&self) -> Vec<DMatrix<T>> {
        let d = self.dim_gl_plus();
        (0..d)
            .map(|i| {
                let mut e = DVector::zeros(d);
                e[i] = T::one();
                self.gl_plus_from_coords(&e)
            })
            .collect()
    }

    pub fn gl_minus_basis(&self) -> Vec<DMatrix<T>> {
        let d = self.dim_gl_minus();
        (0..d)
            .map(|i| {
                let mut e = DVector::zeros(d);
                e[i] = T::one();
                self.gl_minus_from_coords(&e)
            })
            .collect()
    }
}

/// A matrix anti-commuting with its involution.
#[derive(Clone, Debug, PartialEq)]
pub struct RevMatrix<T: Real> {
    q: DMatrix<T>,
    inv: InvolutionStructure<T>,
}

impl<T: Real> RevMatrix<T> {
    pub fn new(q: DMatrix<T>, inv: InvolutionStructure<T>) -> Result<Self> {
        if q.nrows() != inv.dim() || q.ncols() != inv.dim() {
            return Err(Error::InvalidInput(format!(
                "matrix is {}x{}, involution has dimension {}",
                q.nrows(),
                q.ncols(),
                inv.dim()
            )));
        }
        let defect = inv.anti_commutation_defect(&q);
        let scale = T::one() + linalg::max_abs(&q);
        if defect > scale * lit(ANTICOMMUTE_TOL) {
            return Err(Error::NotReversible(to_f64(defect)));
        }
        Ok(RevMatrix { q, inv })
    }

    pub fn q(&self) -> &DMatrix<T> {
        &self.q
    }

    pub fn involution(&self) -> &InvolutionStructure<T> {
        &self.inv
    }

    pub fn dim(&self) -> usize {
        self.q.nrows()
    }
}

/// Outcome of [`kernel_condition`].
#[derive(Clone, Debug, PartialEq)]
pub enum KernelCondition<T: Real> {
    /// `ker Q` lies in `Fix(-R)`; equivalently `Q: Fix R -> Fix(-R)` is injective.
    KerInFixMinus { epimorphism: bool },
    /// A unit vector of `ker Q` inside `Fix R`.
    Violation { vector: DVector<T>, epimorphism: bool },
}

impl<T: Real> KernelCondition<T> {
    pub fn holds(&self) -> bool {
        matches!(self, KernelCondition::KerInFixMinus { .. })
    }

    /// Whether `Q` maps `Fix R` onto `Fix(-R)`.
    pub fn epimorphism(&self) -> bool {
        match self {
            KernelCondition::KerInFixMinus { epimorphism }
            | KernelCondition::Violation { epimorphism, .. } => *epimorphism,
        }
    }
}

/// Checks `ker Q ∩ Fix R = {0}` and whether `Q(Fix R) = Fix(-R)`.
pub fn kernel_condition<T: Real>(q: &RevMatrix<T>) -> KernelCondition<T> {
    let inv = q.involution();
    let restricted = q.q() * inv.fix_plus();
    let epimorphism = linalg::rank(&restricted, RANK_TOL) == inv.dim_minus();
    if restricted.ncols() == 0 {
        return KernelCondition::KerInFixMinus { epimorphism };
    }
    // scale-aware threshold: a zero block means everything is kernel
    let ker = if linalg::max_abs(&restricted) == T::zero() {
        DMatrix::identity(restricted.ncols(), restricted.ncols())
    } else {
        linalg::null_space(&restricted, RANK_TOL)
    };
    if ker.ncols() == 0 {
        KernelCondition::KerInFixMinus { epimorphism }
    } else {
        let v = inv.fix_plus() * ker.column(0);
        KernelCondition::Violation {
            vector: v.normalize(),
            epimorphism,
        }
    }
}

/// Minimal-norm `Delta ∈ Fix R` with `Q Delta = -Psi` for `Psi ∈ Fix(-R)`.
pub fn solve_fix_range<T: Real>(q: &RevMatrix<T>, psi: &DVector<T>) -> Result<DVector<T>> {
    let inv = q.involution();
    if psi.len() != inv.dim() {
        return Err(Error::InvalidInput("right-hand side has wrong dimension".into()));
    }
    let scale = T::one() + psi.amax();
    let anti = (inv.r() * psi + psi).amax();
    if anti > scale * lit(FIX_RANGE_TOL) {
        return Err(Error::NotAntiInvariant(to_f64(anti)));
    }
    let restricted = q.q() * inv.fix_plus();
    let coords = linalg::lstsq_min_norm(&restricted, &(-psi), RANK_TOL);
    let delta = inv.fix_plus() * coords;
    let residual = (q.q() * &delta + psi).amax();
    if residual > scale * lit(FIX_RANGE_TOL) {
        return Err(Error::Obstruction(to_f64(residual)));
    }
    Ok(delta)
}

/// Image of the commutator map `A -> AQ - QA` on `gl_{+R}`.
#[derive(Clone, Debug)]
pub struct OrbitTangent<T: Real> {
    /// Basis of the image, as matrices in `gl_{-R}`.
    pub basis: Vec<DMatrix<T>>,
    pub rank: usize,
    /// `dim gl_{-R} - rank`.
    pub codim: usize,
}

fn commutator_coords<T: Real>(q: &RevMatrix<T>) -> DMatrix<T> {
    let inv = q.involution();
    let cols: Vec<DVector<T>> = inv
        .gl_plus_basis()
        .iter()
        .map(|a| inv.gl_minus_coords(&(a * q.q() - q.q() * a)))
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(inv.dim_gl_minus(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

pub fn orbit_tangent<T: Real>(q: &RevMatrix<T>) -> OrbitTangent<T> {
    let inv = q.involution();
    let coords = commutator_coords(q);
    let range = if linalg::max_abs(&coords) == T::zero() {
        DMatrix::zeros(coords.nrows(), 0)
    } else {
        linalg::range_basis(&coords, RANK_TOL)
    };
    let basis = range
        .column_iter()
        .map(|c| inv.gl_minus_from_coords(&c.into_owned()))
        .collect();
    OrbitTangent {
        basis,
        rank: range.ncols(),
        codim: inv.dim_gl_minus() - range.ncols(),
    }
}

/// A complement of the orbit tangent in `gl_{-R}`; its span is a miniversal
/// set of unfolding directions.
pub fn transversal_directions<T: Real>(q: &RevMatrix<T>) -> Vec<DMatrix<T>> {
    let inv = q.involution();
    let coords = commutator_coords(q);
    let comp = if coords.ncols() == 0 || linalg::max_abs(&coords) == T::zero() {
        DMatrix::identity(inv.dim_gl_minus(), inv.dim_gl_minus())
    } else {
        linalg::null_space(&coords.transpose(), RANK_TOL)
    };
    comp.column_iter()
        .map(|c| inv.gl_minus_from_coords(&c.into_owned()))
        .collect()
}

/// `mu -> Q(mu)` through a matrix, recorded by its differential at the base.
#[derive(Clone, Debug)]
pub struct Unfolding<T: Real> {
    pub base: RevMatrix<T>,
    pub directions: Vec<DMatrix<T>>,
}

impl<T: Real> Unfolding<T> {
    pub fn new(base: RevMatrix<T>, directions: Vec<DMatrix<T>>) -> Result<Self> {
        let inv = base.involution();
        for d in &directions {
            let scale = T::one() + linalg::max_abs(d);
            let defect = inv.anti_commutation_defect(d);
            if defect > scale * lit(ANTICOMMUTE_TOL) {
                return Err(Error::NotReversible(to_f64(defect)));
            }
        }
        Ok(Unfolding { base, directions })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Versality<T: Real> {
    Versal { codim: usize },
    /// A direction of `gl_{-R}` missed by tangent plus unfolding directions.
    NotVersal { missing: DMatrix<T> },
}

impl<T: Real> Versality<T> {
    pub fn is_versal(&self) -> bool {
        matches!(self, Versality::Versal { .. })
    }
}

pub fn is_versal<T: Real>(u: &Unfolding<T>) -> Versality<T> {
    let inv = u.base.involution();
    let mut cols: Vec<DVector<T>> = commutator_coords(&u.base).column_iter().map(|c| c.into_owned()).collect();
    cols.extend(u.directions.iter().map(|d| inv.gl_minus_coords(d)));
    let dim = inv.dim_gl_minus();
    let codim = orbit_tangent(&u.base).codim;
    if dim == 0 {
        return Versality::Versal { codim };
    }
    let all = if cols.is_empty() {
        DMatrix::zeros(dim, 0)
    } else {
        DMatrix::from_columns(&cols)
    };
    let r = if all.ncols() == 0 || linalg::max_abs(&all) == T::zero() {
        0
    } else {
        linalg::rank(&all, RANK_TOL)
    };
    if r == dim {
        return Versality::Versal { codim };
    }
    let missing = if r == 0 {
        let mut e = DVector::zeros(dim);
        e[0] = T::one();
        e
    } else {
        linalg::null_space(&all.transpose(), RANK_TOL).column(0).into_owned()
    };
    Versality::NotVersal {
        missing: inv.gl_minus_from_coords(&missing),
    }
}

/// Versal with exactly `codim` parameters.
pub fn is_miniversal<T: Real>(u: &Unfolding<T>) -> bool {
    match is_versal(u) {
        Versality::Versal { codim } => codim == u.len(),
        Versality::NotVersal { .. } => false,
    }
}

/// `Q_hat = [[0, I, 0], [Lambda, 0, 0], [0, 0, Q]]` with `R_hat = (-I) + I + R`.
pub fn build_augmented<T: Real>(q: &RevMatrix<T>, lambda: &DMatrix<T>) -> Result<RevMatrix<T>> {
    let m = lambda.nrows();
    if !lambda.is_square() {
        return Err(Error::InvalidInput("Lambda must be square".into()));
    }
    let l = nilpotent_block(lambda);
    let qh = linalg::direct_sum(&[&l, q.q()]);
    RevMatrix::new(qh, q.involution().augmented(m)?)
}

/// `L(Lambda) = [[0, I], [Lambda, 0]]`.
pub fn nilpotent_block<E: Scalar + Zero + One>(lambda: &DMatrix<E>) -> DMatrix<E> {
    let m = lambda.nrows();
    let mut l = DMatrix::from_element(2 * m, 2 * m, E::zero());
    for i in 0..m {
        l[(i, m + i)] = E::one();
        for j in 0..m {
            l[(m + i, j)] = lambda[(i, j)].clone();
        }
    }
    l
}

/// `L~(lambda)`: odd rows carry a single one, even rows interleave `lambda_i*`.
pub fn nilpotent_block_interleaved<E: Scalar + Zero + One>(lambda: &DMatrix<E>) -> DMatrix<E> {
    let m = lambda.nrows();
    let mut l = DMatrix::from_element(2 * m, 2 * m, E::zero());
    for i in 0..m {
        l[(2 * i, 2 * i + 1)] = E::one();
        for j in 0..m {
            l[(2 * i + 1, 2 * j)] = lambda[(i, j)].clone();
        }
    }
    l
}

/// `J~ = diag(-1, 1, ..., -1, 1)`.
pub fn j_interleaved<E: Scalar + Zero + One + std::ops::Neg<Output = E>>(m: usize) -> DMatrix<E> {
    DMatrix::from_fn(2 * m, 2 * m, |i, j| {
        if i != j {
            E::zero()
        } else if i % 2 == 0 {
            -E::one()
        } else {
            E::one()
        }
    })
}

/// `J = (-I_m) + I_m`.
pub fn j_block<E: Scalar + Zero + One + std::ops::Neg<Output = E>>(m: usize) -> DMatrix<E> {
    DMatrix::from_fn(2 * m, 2 * m, |i, j| {
        if i != j {
            E::zero()
        } else if i < m {
            -E::one()
        } else {
            E::one()
        }
    })
}

/// The conjugator `S` with `S_{2i-1,i} = S_{2i,m+i} = 1` (one-based).
pub fn interleaving_matrix<E: Scalar + Zero + One>(m: usize) -> DMatrix<E> {
    let mut s = DMatrix::from_element(2 * m, 2 * m, E::zero());
    for i in 0..m {
        s[(2 * i, i)] = E::one();
        s[(2 * i + 1, m + i)] = E::one();
    }
    s
}

/// Exact determinant by fraction-free (Bareiss) elimination.
pub fn bareiss_det(m: &DMatrix<i64>) -> i64 {
    assert!(m.is_square());
    let n = m.nrows();
    if n == 0 {
        return 1;
    }
    let mut a: Vec<Vec<i128>> = (0..n).map(|i| (0..n).map(|j| m[(i, j)] as i128).collect()).collect();
    let mut sign = 1i128;
    let mut prev = 1i128;
    for k in 0..n - 1 {
        if a[k][k] == 0 {
            match (k + 1..n).find(|&i| a[i][k] != 0) {
                Some(i) => {
                    a.swap(i, k);
                    sign = -sign;
                }
                None => return 0,
            }
        }
        for i in k + 1..n {
            for j in k + 1..n {
                a[i][j] = (a[i][j] * a[k][k] - a[i][k] * a[k][j]) / prev;
            }
        }
        prev = a[k][k];
    }
    (sign * a[n - 1][n - 1]) as i64
}

/// The miniversal unfolding of the `2m x 2m` nilpotent block in interleaved
/// coordinates, with its exact checks.
#[derive(Clone, Debug, PartialEq)]
pub struct NilpotentUnfolding {
    pub m: usize,
    pub j_tilde: DMatrix<i64>,
    pub s: DMatrix<i64>,
    pub det_s: i64,
    /// `(-1)^{(m-1)m/2}`.
    pub det_expected: i64,
    pub j_identity_exact: bool,
}

pub fn miniversal_nilpotent(m: usize) -> Result<NilpotentUnfolding> {
    if m == 0 {
        return Err(Error::InvalidInput("m must be positive".into()));
    }
    let s = interleaving_matrix::<i64>(m);
    let j_tilde = j_interleaved::<i64>(m);
    let j = j_block::<i64>(m);
    let det_s = bareiss_det(&s);
    let det_expected = if ((m - 1) * m / 2) % 2 == 0 { 1 } else { -1 };
    Ok(NilpotentUnfolding {
        m,
        j_identity_exact: &j_tilde * &s == &s * &j,
        j_tilde,
        s,
        det_s,
        det_expected,
    })
}

impl NilpotentUnfolding {
    /// `max |L~(Lambda) S - S L(Lambda)|` in floating point.
    pub fn conjugation_defect<T: Real>(&self, lambda: &DMatrix<T>) -> T {
        let s = self.s.map(|v| lit::<T>(v as f64));
        let lhs = nilpotent_block_interleaved(lambda) * &s;
        let rhs = &s * nilpotent_block(lambda);
        linalg::max_abs(&(lhs - rhs))
    }

    /// Exact `L~(Lambda) S = S L(Lambda)` over any ring (integers, rationals).
    pub fn conjugation_exact<E>(&self, lambda: &DMatrix<E>) -> bool
    where
        E: Scalar + Zero + One + From<i64> + nalgebra::ClosedAddAssign + nalgebra::ClosedMulAssign,
    {
        let s = self.s.map(E::from);
        nilpotent_block_interleaved(lambda) * &s == &s * nilpotent_block(lambda)
    }

    /// The unfolding directions `d L~ / d lambda_ij`, row-major in `(i, j)`.
    pub fn directions<T: Real>(&self) -> Vec<DMatrix<T>> {
        let m = self.m;
        let mut out = Vec::with_capacity(m * m);
        for i in 0..m {
            for j in 0..m {
                let mut e = DMatrix::zeros(m, m);
                e[(i, j)] = T::one();
                out.push(nilpotent_block_interleaved(&e));
            }
        }
        out
    }
}
