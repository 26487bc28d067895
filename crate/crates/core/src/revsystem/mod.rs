//! Reversible families
//!
//! ```text
//! x' = omega + xi(y,z,.) + f(x,y,z,.)
//! y' = sigma + eta(y,z,.) + g(x,y,z,.)
//! z' = Q(omega,mu) z + zeta(y,z,.) + h(x,y,z,.)
//! ```
//!
//! on `T^n x R^m x R^{2p}` with parameters `(omega, sigma, mu)`, reversible
//! under `G(x,y,z) = (-x,-y,Rz)`, and the augmented families where `sigma`
//! becomes a phase variable with `sigma' = Lambda y`.

pub mod integrate;
pub mod toys;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::revmat::{InvolutionStructure, RevMatrix};
use crate::scalar::{lit, to_f64, Real};
use crate::taylor::{Term, TermField, TermKey, Trig};

/// Relative tolerance of the coefficient-wise reversibility checks.
pub const REVERSIBILITY_TOL: f64 = 1e-12;

fn default_trig() -> Trig {
    Trig::Cos
}

/// One monomial term of a family file. Omitted exponent lists are zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TermSpec {
    pub component: usize,
    pub coeff: f64,
    #[serde(default = "default_trig")]
    pub trig: Trig,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub k: Vec<i64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub y: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub z: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub omega: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub sigma: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mu: Vec<u32>,
}

/// `coeff * omega^omega * mu^mu` added to `Q[row][col]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QEntrySpec {
    pub row: usize,
    pub col: usize,
    pub coeff: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub omega: Vec<u32>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub mu: Vec<u32>,
}

/// Family definition file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FamilySpec {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub s: usize,
    #[serde(rename = "R", default)]
    pub r: Vec<Vec<f64>>,
    #[serde(rename = "Q", default)]
    pub q: Vec<QEntrySpec>,
    #[serde(default)]
    pub xi: Vec<TermSpec>,
    #[serde(default)]
    pub eta: Vec<TermSpec>,
    #[serde(default)]
    pub zeta: Vec<TermSpec>,
    #[serde(default)]
    pub f: Vec<TermSpec>,
    #[serde(default)]
    pub g: Vec<TermSpec>,
    #[serde(default)]
    pub h: Vec<TermSpec>,
}

impl FamilySpec {
    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialization(e.to_string()))
    }
}

/// The named pieces of a family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Block {
    Q,
    Xi,
    Eta,
    Zeta,
    F,
    G,
    H,
}

impl Block {
    pub const ALL: [Block; 7] = [Block::Q, Block::Xi, Block::Eta, Block::Zeta, Block::F, Block::G, Block::H];

    /// The reversibility identity the block has to satisfy.
    pub fn identity(self) -> &'static str {
        match self {
            Block::Q => "RQ = -QR",
            Block::Xi => "xi(-y,Rz) = xi(y,z)",
            Block::Eta => "eta(-y,Rz) = eta(y,z)",
            Block::Zeta => "zeta(-y,Rz) = -R zeta(y,z)",
            Block::F => "f(-x,-y,Rz) = f(x,y,z)",
            Block::G => "g(-x,-y,Rz) = g(x,y,z)",
            Block::H => "h(-x,-y,Rz) = -R h(x,y,z)",
        }
    }

    fn name(self) -> &'static str {
        match self {
            Block::Q => "Q",
            Block::Xi => "xi",
            Block::Eta => "eta",
            Block::Zeta => "zeta",
            Block::F => "f",
            Block::G => "g",
            Block::H => "h",
        }
    }
}

/// Reversible family in the direct layout: phase `Y = (y, z)`, parameters
/// `P = (omega, sigma, mu)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ReversibleFamily<T: Real> {
    n: usize,
    m: usize,
    p: usize,
    s: usize,
    r: DMatrix<T>,
    q: TermField<T>,
    xi: TermField<T>,
    eta: TermField<T>,
    zeta: TermField<T>,
    f: TermField<T>,
    g: TermField<T>,
    h: TermField<T>,
}

fn pad(v: &[u32], len: usize, what: &str) -> Result<Vec<u32>> {
    if v.is_empty() {
        Ok(vec![0; len])
    } else if v.len() == len {
        Ok(v.to_vec())
    } else {
        Err(Error::InvalidInput(format!("{what} has length {}, expected {len}", v.len())))
    }
}

impl<T: Real> ReversibleFamily<T> {
    pub fn from_spec(spec: &FamilySpec) -> Result<Self> {
        let (n, m, p, s) = (spec.n, spec.m, spec.p, spec.s);
        if m == 0 {
            return Err(Error::InvalidInput("m must be positive".into()));
        }
        let r: DMatrix<T> = if p == 0 {
            if !spec.r.is_empty() {
                return Err(Error::InvalidInput("R must be empty when p = 0".into()));
            }
            DMatrix::zeros(0, 0)
        } else {
            if spec.r.len() != 2 * p || spec.r.iter().any(|row| row.len() != 2 * p) {
                return Err(Error::InvalidInput(format!("R must be {0}x{0}", 2 * p)));
            }
            linalg::from_rows(&spec.r)
        };
        let mut fam = ReversibleFamily::empty(n, m, p, s, r)?;
        for e in &spec.q {
            if e.row >= 2 * p || e.col >= 2 * p {
                return Err(Error::InvalidInput(format!("Q entry ({}, {}) out of range", e.row, e.col)));
            }
            let mut param = pad(&e.omega, n, "Q.omega")?;
            param.extend(vec![0; m]);
            param.extend(pad(&e.mu, s, "Q.mu")?);
            let mut phase = vec![0; m + 2 * p];
            phase[m + e.col] = 1;
            fam.q.push(Term {
                target: n + m + e.row,
                coeff: lit(e.coeff),
                trig: Trig::Cos,
                k: vec![0; n],
                phase,
                param,
            });
        }
        for (block, terms) in [
            (Block::Xi, &spec.xi),
            (Block::Eta, &spec.eta),
            (Block::Zeta, &spec.zeta),
            (Block::F, &spec.f),
            (Block::G, &spec.g),
            (Block::H, &spec.h),
        ] {
            for t in terms {
                let term = fam.term_from_spec(block, t)?;
                fam.check_order(block, &term)?;
                fam.block_mut(block).push(term);
            }
        }
        Ok(fam)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_spec(&FamilySpec::from_json(s)?)
    }

    fn empty(n: usize, m: usize, p: usize, s: usize, r: DMatrix<T>) -> Result<Self> {
        if p > 0 {
            let inv = InvolutionStructure::new(r.clone())?;
            if inv.dim_plus() != p {
                return Err(Error::InvalidInput(format!(
                    "R must have eigenvalues +1 and -1 with multiplicity {p} each"
                )));
            }
        }
        let blank = TermField::new(n, m + 2 * p, n + m + s);
        Ok(ReversibleFamily {
            n,
            m,
            p,
            s,
            r,
            q: blank.clone(),
            xi: blank.clone(),
            eta: blank.clone(),
            zeta: blank.clone(),
            f: blank.clone(),
            g: blank.clone(),
            h: blank,
        })
    }

    fn term_from_spec(&self, block: Block, t: &TermSpec) -> Result<Term<T>> {
        let (n, m, p, s) = (self.n, self.m, self.p, self.s);
        let (offset, len) = match block {
            Block::Xi | Block::F => (0, n),
            Block::Eta | Block::G => (n, m),
            Block::Zeta | Block::H => (n + m, 2 * p),
            Block::Q => unreachable!(),
        };
        if t.component >= len {
            return Err(Error::InvalidInput(format!(
                "{} term component {} out of range",
                block.name(),
                t.component
            )));
        }
        let k = if t.k.is_empty() {
            vec![0; n]
        } else if t.k.len() == n {
            t.k.clone()
        } else {
            return Err(Error::InvalidInput(format!("{} term k has wrong length", block.name())));
        };
        if matches!(block, Block::Xi | Block::Eta | Block::Zeta) && k.iter().any(|&v| v != 0) {
            return Err(Error::InvalidInput(format!("{} must not depend on x", block.name())));
        }
        let mut phase = pad(&t.y, m, "y")?;
        phase.extend(pad(&t.z, 2 * p, "z")?);
        let mut param = pad(&t.omega, n, "omega")?;
        param.extend(pad(&t.sigma, m, "sigma")?);
        param.extend(pad(&t.mu, s, "mu")?);
        Ok(Term {
            target: offset + t.component,
            coeff: lit(t.coeff),
            trig: t.trig,
            k,
            phase,
            param,
        })
    }

    // xi = O(y,z), eta = O2(y,z), zeta = O2(y,z,sigma)
    fn check_order(&self, block: Block, t: &Term<T>) -> Result<()> {
        let deg = t.phase_degree();
        let sig: u32 = t.param[self.n..self.n + self.m].iter().sum();
        let ok = match block {
            Block::Xi => deg >= 1,
            Block::Eta => deg >= 2,
            Block::Zeta => deg + sig >= 2,
            _ => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidInput(format!("{} term violates its order condition", block.name())))
        }
    }

    pub fn to_spec(&self) -> FamilySpec {
        let (n, m, p) = (self.n, self.m, self.p);
        let split = |t: &Term<T>, offset: usize| TermSpec {
            component: t.target - offset,
            coeff: to_f64(t.coeff),
            trig: t.trig,
            k: t.k.clone(),
            y: t.phase[..m].to_vec(),
            z: t.phase[m..].to_vec(),
            omega: t.param[..n].to_vec(),
            sigma: t.param[n..n + m].to_vec(),
            mu: t.param[n + m..].to_vec(),
        };
        let list = |f: &TermField<T>, offset: usize| f.terms.iter().map(|t| split(t, offset)).collect();
        FamilySpec {
            n,
            m,
            p,
            s: self.s,
            r: linalg::to_rows(&self.r),
            q: self
                .q
                .terms
                .iter()
                .map(|t| QEntrySpec {
                    row: t.target - n - m,
                    col: t.phase[m..].iter().position(|&e| e == 1).unwrap_or(0),
                    coeff: to_f64(t.coeff),
                    omega: t.param[..n].to_vec(),
                    mu: t.param[n + m..].to_vec(),
                })
                .collect(),
            xi: list(&self.xi, 0),
            eta: list(&self.eta, n),
            zeta: list(&self.zeta, n + m),
            f: list(&self.f, 0),
            g: list(&self.g, n),
            h: list(&self.h, n + m),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn s(&self) -> usize {
        self.s
    }

    /// Dimension `m + 2p` of the phase variables `Y = (y, z)`.
    pub fn phase_dim(&self) -> usize {
        self.m + 2 * self.p
    }

    pub fn nparams(&self) -> usize {
        self.n + self.m + self.s
    }

    pub fn r(&self) -> &DMatrix<T> {
        &self.r
    }

    /// `S = (-I_m) + R` acting on `Y = (y, z)`.
    pub fn phase_involution(&self) -> DMatrix<T> {
        let minus = -DMatrix::<T>::identity(self.m, self.m);
        linalg::direct_sum(&[&minus, &self.r])
    }

    /// Packs `(omega, sigma, mu)`.
    pub fn params(&self, omega: &[T], sigma: &[T], mu: &[T]) -> Vec<T> {
        assert_eq!((omega.len(), sigma.len(), mu.len()), (self.n, self.m, self.s));
        omega.iter().chain(sigma).chain(mu).copied().collect()
    }

    pub fn block(&self, b: Block) -> &TermField<T> {
        match b {
            Block::Q => &self.q,
            Block::Xi => &self.xi,
            Block::Eta => &self.eta,
            Block::Zeta => &self.zeta,
            Block::F => &self.f,
            Block::G => &self.g,
            Block::H => &self.h,
        }
    }

    fn block_mut(&mut self, b: Block) -> &mut TermField<T> {
        match b {
            Block::Q => &mut self.q,
            Block::Xi => &mut self.xi,
            Block::Eta => &mut self.eta,
            Block::Zeta => &mut self.zeta,
            Block::F => &mut self.f,
            Block::G => &mut self.g,
            Block::H => &mut self.h,
        }
    }

    /// `Q(omega, mu)`.
    pub fn q_matrix(&self, omega: &[T], mu: &[T]) -> DMatrix<T> {
        let sigma = vec![T::zero(); self.m];
        let prm = self.params(omega, &sigma, mu);
        let mut q = DMatrix::zeros(2 * self.p, 2 * self.p);
        for t in &self.q.terms {
            let col = t.phase[self.m..].iter().position(|&e| e == 1).unwrap_or(0);
            q[(t.target - self.n - self.m, col)] += t.coeff * t.param_factor(&prm);
        }
        q
    }

    pub fn rev_matrix(&self, omega: &[T], mu: &[T]) -> Result<RevMatrix<T>> {
        RevMatrix::new(self.q_matrix(omega, mu), InvolutionStructure::new(self.r.clone())?)
    }

    /// `dQ/dmu_j` at `(omega, mu)`, the unfolding directions.
    pub fn q_mu_derivatives(&self, omega: &[T], mu: &[T]) -> Vec<DMatrix<T>> {
        let sigma = vec![T::zero(); self.m];
        let prm = self.params(omega, &sigma, mu);
        (0..self.s)
            .map(|j| {
                let d = self.q.param_derivative(self.n + self.m + j);
                let mut q = DMatrix::zeros(2 * self.p, 2 * self.p);
                for t in &d.terms {
                    let col = t.phase[self.m..].iter().position(|&e| e == 1).unwrap_or(0);
                    q[(t.target - self.n - self.m, col)] += t.coeff * t.param_factor(&prm);
                }
                q
            })
            .collect()
    }

    /// The full vector field on `(x, Y)` with parameters `(omega, sigma, mu)`.
    pub fn field(&self) -> TermField<T> {
        let (n, m, q, np) = (self.n, self.m, self.phase_dim(), self.nparams());
        let mut v = TermField::new(n, q, np);
        for i in 0..n {
            let mut param = vec![0; np];
            param[i] = 1;
            v.push(Term { target: i, coeff: T::one(), trig: Trig::Cos, k: vec![0; n], phase: vec![0; q], param });
        }
        for i in 0..m {
            let mut param = vec![0; np];
            param[n + i] = 1;
            v.push(Term { target: n + i, coeff: T::one(), trig: Trig::Cos, k: vec![0; n], phase: vec![0; q], param });
        }
        for b in Block::ALL {
            v.extend(self.block(b));
        }
        v
    }

    /// `f + g + h` alone.
    pub fn perturbation(&self) -> TermField<T> {
        let mut v = self.f.clone();
        v.extend(&self.g);
        v.extend(&self.h);
        v
    }

    pub fn unperturbed(&self) -> Self {
        let mut out = self.clone();
        let blank = TermField::new(self.n, self.phase_dim(), self.nparams());
        out.f = blank.clone();
        out.g = blank.clone();
        out.h = blank;
        out
    }

    /// Replaces `f, g, h` by the matching rows of `pert` (a field in the
    /// direct layout).
    pub fn with_perturbation(&self, pert: &TermField<T>) -> Self {
        let mut out = self.unperturbed();
        for t in &pert.terms {
            let b = if t.target < self.n {
                Block::F
            } else if t.target < self.n + self.m {
                Block::G
            } else {
                Block::H
            };
            out.block_mut(b).push(t.clone());
        }
        out
    }

    /// Multiplies `f, g, h` by `factor`.
    pub fn scale_perturbation(&self, factor: T) -> Self {
        let mut out = self.clone();
        for b in [Block::F, Block::G, Block::H] {
            for t in &mut out.block_mut(b).terms {
                t.coeff *= factor;
            }
        }
        out
    }
}

/// One violated coefficient.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub identity: String,
    pub target: usize,
    pub trig: Trig,
    pub k: Vec<i64>,
    pub phase: Vec<u32>,
    pub param: Vec<u32>,
    pub defect: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReversibilityReport {
    pub violations: Vec<Violation>,
}

impl ReversibilityReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }
}

fn violations<T: Real>(identity: &str, defects: Vec<(TermKey, T)>) -> Vec<Violation> {
    defects
        .into_iter()
        .map(|((target, trig, k, phase, param), d)| Violation {
            identity: identity.to_string(),
            target,
            trig,
            k,
            phase,
            param,
            defect: to_f64(d),
        })
        .collect()
}

/// Checks every identity of the family coefficient-wise.
pub fn check_reversibility<T: Real>(family: &ReversibleFamily<T>) -> ReversibilityReport {
    let s = family.phase_involution();
    let tol = lit(REVERSIBILITY_TOL);
    let mut out = Vec::new();
    for b in Block::ALL {
        out.extend(violations(b.identity(), family.block(b).reversibility_defects(&s, tol)));
    }
    ReversibilityReport { violations: out }
}

/// Reversibility of an arbitrary field under `(x, Y) -> (-x, S Y)`.
pub fn check_field_reversibility<T: Real>(field: &TermField<T>, s: &DMatrix<T>, tol: T) -> ReversibilityReport {
    ReversibilityReport {
        violations: violations("V(Gw) = -DG V(w)", field.reversibility_defects(s, tol)),
    }
}

/// Field averaged with its reversed image, hence reversible under `S`.
pub fn symmetrize<T: Real>(field: &TermField<T>, s: &DMatrix<T>) -> TermField<T> {
    let half: T = lit(0.5);
    let mut out = TermField::new(field.n, field.q, field.nparams);
    let img = field.reversed_image(s);
    for t in field.terms.iter().chain(&img.terms) {
        let mut t = t.clone();
        t.coeff *= half;
        out.push(t);
    }
    let merged = out.canonical();
    let mut clean = TermField::new(field.n, field.q, field.nparams);
    for ((target, trig, k, phase, param), c) in merged {
        if c.abs() > lit::<T>(1e-300) {
            clean.push(Term { target, coeff: c, trig, k, phase, param });
        }
    }
    clean
}

/// Shape of a random perturbation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerturbationShape {
    /// Largest `|k|_1`.
    pub max_mode: usize,
    /// Largest total degree in `(y, z)`.
    pub degree: u32,
    /// Coefficients are drawn uniformly from `[-magnitude, magnitude]`.
    pub magnitude: f64,
}

/// Random `f, g, h` of the given shape satisfying the family's identities,
/// deterministic in `seed`. Terms carry no parameter dependence.
pub fn random_perturbation<T: Real>(family: &ReversibleFamily<T>, shape: &PerturbationShape, seed: u64) -> TermField<T> {
    let (n, q, np) = (family.n(), family.phase_dim(), family.nparams());
    let s = family.phase_involution();
    let basis = crate::taylor::MonomialBasis::new(q, shape.degree);
    let modes: Vec<Vec<i64>> = crate::fourier::MultiIndex::enumerate(n, shape.max_mode as u64)
        .into_iter()
        .filter(|k| k.is_zero() || k.is_canonical())
        .map(|k| k.0)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut raw = TermField::new(n, q, np);
    for target in 0..n + q {
        for k in &modes {
            for mono in 0..basis.len() {
                for trig in [Trig::Cos, Trig::Sin] {
                    let c: f64 = rng.gen_range(-shape.magnitude..=shape.magnitude);
                    if trig == Trig::Sin && k.iter().all(|&v| v == 0) {
                        continue;
                    }
                    raw.push(Term {
                        target,
                        coeff: lit(c),
                        trig,
                        k: k.clone(),
                        phase: basis.exponents(mono).to_vec(),
                        param: vec![0; np],
                    });
                }
            }
        }
    }
    // for a diagonal S symmetrizing keeps each surviving coefficient intact
    symmetrize(&raw, &s)
}

/// Augmented family: phase `Y = (y, sigma, z)`, parameters
/// `(omega, mu, Lambda)` with `Lambda` row-major, and `sigma' = Lambda y`.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentedFamily<T: Real> {
    base: ReversibleFamily<T>,
    lambda: DMatrix<T>,
    field: TermField<T>,
}

impl<T: Real> AugmentedFamily<T> {
    pub fn base(&self) -> &ReversibleFamily<T> {
        &self.base
    }

    /// The `Lambda` the family was built with.
    pub fn lambda(&self) -> &DMatrix<T> {
        &self.lambda
    }

    /// Vector field with `Lambda` as a parameter.
    pub fn field(&self) -> &TermField<T> {
        &self.field
    }

    pub fn phase_dim(&self) -> usize {
        2 * self.base.m + 2 * self.base.p
    }

    pub fn nparams(&self) -> usize {
        self.base.n + self.base.s + self.base.m * self.base.m
    }

    /// `(-I_m) + I_m + R`.
    pub fn phase_involution(&self) -> DMatrix<T> {
        let m = self.base.m;
        let minus = -DMatrix::<T>::identity(m, m);
        let plus = DMatrix::<T>::identity(m, m);
        linalg::direct_sum(&[&minus, &plus, &self.base.r])
    }

    pub fn params(&self, omega: &[T], mu: &[T], lambda: &DMatrix<T>) -> Vec<T> {
        let m = self.base.m;
        assert_eq!((lambda.nrows(), lambda.ncols()), (m, m));
        let mut p: Vec<T> = omega.iter().chain(mu).copied().collect();
        for i in 0..m {
            for j in 0..m {
                p.push(lambda[(i, j)]);
            }
        }
        p
    }

    /// Linear part at `Y = 0` of the unperturbed augmented field.
    pub fn linear_part(&self, omega: &[T], mu: &[T], lambda: &DMatrix<T>) -> DMatrix<T> {
        let (n, q) = (self.base.n, self.phase_dim());
        let prm = self.params(omega, mu, lambda);
        let bare = augment(&self.base.unperturbed(), &self.lambda).expect("dimensions already checked");
        let mut out = DMatrix::zeros(q, q);
        for t in &bare.field.terms {
            if t.target < n || t.phase_degree() != 1 || t.k.iter().any(|&v| v != 0) {
                continue;
            }
            let col = t.phase.iter().position(|&e| e == 1).unwrap_or(0);
            out[(t.target - n, col)] += t.coeff * t.param_factor(&prm);
        }
        out
    }

    fn direct_target(&self, aug: usize) -> usize {
        let (n, m) = (self.base.n, self.base.m);
        if aug < n + m {
            aug
        } else if aug < n + 2 * m {
            usize::MAX
        } else {
            aug - m
        }
    }

    /// Restriction to a `sigma`-slice with `Lambda = 0`: the field in the
    /// direct layout, `sigma` back among the parameters.
    pub fn sigma_slice(&self) -> TermField<T> {
        let (n, m, s) = (self.base.n, self.base.m, self.base.s);
        let q = self.base.phase_dim();
        let mut out = TermField::new(n, q, n + m + s);
        for t in &self.field.terms {
            if t.param[n + s..].iter().any(|&e| e > 0) {
                continue;
            }
            let target = self.direct_target(t.target);
            if target == usize::MAX {
                continue;
            }
            let mut phase = t.phase[..m].to_vec();
            phase.extend_from_slice(&t.phase[2 * m..]);
            let mut param = t.param[..n].to_vec();
            param.extend_from_slice(&t.phase[m..2 * m]);
            param.extend_from_slice(&t.param[n..n + s]);
            out.push(Term { target, coeff: t.coeff, trig: t.trig, k: t.k.clone(), phase, param });
        }
        out
    }
}

/// Appends `sigma' = Lambda y`, turning `sigma` into a phase variable.
pub fn augment<T: Real>(family: &ReversibleFamily<T>, lambda: &DMatrix<T>) -> Result<AugmentedFamily<T>> {
    let (n, m, s) = (family.n, family.m, family.s);
    if (lambda.nrows(), lambda.ncols()) != (m, m) {
        return Err(Error::InvalidInput(format!("Lambda must be {m}x{m}")));
    }
    let q = 2 * m + 2 * family.p;
    let np = n + s + m * m;
    let mut field = TermField::new(n, q, np);
    let direct = family.field();
    for t in &direct.terms {
        let target = if t.target < n + m { t.target } else { t.target + m };
        let mut phase = t.phase[..m].to_vec();
        phase.extend_from_slice(&t.param[n..n + m]);
        phase.extend_from_slice(&t.phase[m..]);
        let mut param = t.param[..n].to_vec();
        param.extend_from_slice(&t.param[n + m..]);
        param.extend(vec![0; m * m]);
        field.push(Term { target, coeff: t.coeff, trig: t.trig, k: t.k.clone(), phase, param });
    }
    for i in 0..m {
        for j in 0..m {
            let mut phase = vec![0; q];
            phase[j] = 1;
            let mut param = vec![0; np];
            param[n + s + i * m + j] = 1;
            field.push(Term { target: n + m + i, coeff: T::one(), trig: Trig::Cos, k: vec![0; n], phase, param });
        }
    }
    Ok(AugmentedFamily { base: family.clone(), lambda: lambda.clone(), field })
}

/// Reversibility of the augmented field under `(x,y,sigma,z) -> (-x,-y,sigma,Rz)`.
pub fn check_augmented_reversibility<T: Real>(aug: &AugmentedFamily<T>) -> ReversibilityReport {
    check_field_reversibility(aug.field(), &aug.phase_involution(), lit(REVERSIBILITY_TOL))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Context {
    Context1,
    Context2,
    Invalid,
}

/// Reversible context of a torus of codimension `codim` under an
/// involution with `dim Fix G = dim_fix`.
pub fn classify_context(dim_fix: usize, codim: usize) -> Context {
    if dim_fix > codim {
        Context::Invalid
    } else if 2 * dim_fix < codim {
        Context::Context2
    } else {
        Context::Context1
    }
}

/// The `2^n` points of `T^n` fixed by `x -> -x`.
pub fn torus_fixed_points<T: Real>(n: usize) -> Vec<Vec<T>> {
    (0..1usize << n)
        .map(|bits| {
            (0..n)
                .map(|j| if bits >> j & 1 == 1 { T::pi() } else { T::zero() })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::revmat::build_augmented;

    pub(crate) fn sample_spec() -> FamilySpec {
        serde_json::from_str(
            r#"{
            "n": 2, "m": 1, "p": 1, "s": 1,
            "R": [[1, 0], [0, -1]],
            "Q": [{"row": 0, "col": 1, "coeff": 1.0},
                  {"row": 1, "col": 0, "coeff": -2.0},
                  {"row": 1, "col": 0, "coeff": -1.0, "mu": [1]}],
            "xi": [{"component": 0, "coeff": 0.5, "z": [1, 0]},
                   {"component": 1, "coeff": 0.3, "y": [2]}],
            "eta": [{"component": 0, "coeff": 0.2, "z": [2, 0]},
                    {"component": 0, "coeff": 0.1, "y": [1], "z": [0, 1]}],
            "zeta": [{"component": 0, "coeff": 0.3, "y": [1], "z": [1, 0]},
                     {"component": 0, "coeff": 0.2, "z": [0, 1], "sigma": [1]},
                     {"component": 1, "coeff": 0.25, "z": [2, 0]},
                     {"component": 1, "coeff": 0.1, "z": [1, 0], "sigma": [1]}],
            "f": [{"component": 0, "coeff": 1e-4, "k": [1, 0]}],
            "g": [{"component": 0, "coeff": 1e-4, "trig": "sin", "k": [0, 1], "y": [1]}],
            "h": [{"component": 0, "coeff": 1e-4, "trig": "sin", "k": [1, 1]},
                  {"component": 1, "coeff": 1e-4, "k": [0, 1], "y": [1], "z": [0, 1]}]
        }"#,
        )
        .unwrap()
    }

    fn family() -> ReversibleFamily<f64> {
        ReversibleFamily::from_spec(&sample_spec()).unwrap()
    }

    #[test]
    fn sample_family_is_reversible() {
        let fam = family();
        assert!(check_reversibility(&fam).ok());
        assert!(check_reversibility(&fam.unperturbed()).ok());
        let q = fam.q_matrix(&[1.0, 1.6], &[0.5]);
        assert_eq!(q, DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -2.5, 0.0]));
        assert!(fam.rev_matrix(&[1.0, 1.6], &[0.5]).is_ok());
    }

    #[test]
    fn odd_f_is_flagged() {
        let mut spec = sample_spec();
        spec.f.push(TermSpec {
            component: 0,
            coeff: 0.01,
            trig: Trig::Sin,
            k: vec![1, 0],
            y: vec![],
            z: vec![],
            omega: vec![],
            sigma: vec![],
            mu: vec![],
        });
        let rep = check_reversibility(&ReversibleFamily::<f64>::from_spec(&spec).unwrap());
        assert_eq!(rep.violations.len(), 1);
        assert_eq!(rep.violations[0].identity, Block::F.identity());
    }

    #[test]
    fn h_twist() {
        // odd in x along Fix R, or even in x along Fix(-R)
        let mut spec = sample_spec();
        let term = |component: usize, trig: Trig| TermSpec {
            component,
            coeff: 0.01,
            trig,
            k: vec![1, 0],
            y: vec![],
            z: vec![],
            omega: vec![],
            sigma: vec![],
            mu: vec![],
        };
        for (component, trig, ok) in [
            (0, Trig::Sin, true),
            (1, Trig::Cos, true),
            (0, Trig::Cos, false),
            (1, Trig::Sin, false),
        ] {
            spec.h = vec![term(component, trig)];
            let rep = check_reversibility(&ReversibleFamily::<f64>::from_spec(&spec).unwrap());
            assert_eq!(rep.ok(), ok);
            if !ok {
                assert_eq!(rep.violations[0].identity, Block::H.identity());
            }
        }
    }

    #[test]
    fn spec_round_trip_and_validation() {
        let fam = family();
        let again = ReversibleFamily::<f64>::from_spec(&fam.to_spec()).unwrap();
        assert_eq!(fam, again);
        let mut bad = sample_spec();
        bad.eta.push(TermSpec {
            component: 0,
            coeff: 1.0,
            trig: Trig::Cos,
            k: vec![],
            y: vec![1],
            z: vec![],
            omega: vec![],
            sigma: vec![],
            mu: vec![],
        });
        assert!(ReversibleFamily::<f64>::from_spec(&bad).is_err());
        let mut bad = sample_spec();
        bad.r = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(ReversibleFamily::<f64>::from_spec(&bad).is_err());
        assert!(FamilySpec::from_json(r#"{"n": 1}"#).is_err());
    }

    #[test]
    fn random_perturbations_conform() {
        let fam = family();
        let shape = PerturbationShape { max_mode: 3, degree: 2, magnitude: 1e-4 };
        let pert = random_perturbation(&fam, &shape, 7);
        assert!(!pert.terms.is_empty());
        assert!(pert.terms.iter().all(|t| t.coeff.abs() <= 1e-4));
        let full = fam.with_perturbation(&pert);
        assert!(check_reversibility(&full).ok());
        assert_eq!(pert, random_perturbation(&fam, &shape, 7));
    }

    #[test]
    fn augmentation() {
        let fam = family();
        let lam = DMatrix::from_element(1, 1, 0.3);
        let aug = augment(&fam, &lam).unwrap();
        assert!(check_augmented_reversibility(&aug).ok());
        let om = [1.0, 1.6];
        let mu = [0.2];
        let lin = aug.linear_part(&om, &mu, &lam);
        let qhat = build_augmented(&fam.rev_matrix(&om, &mu).unwrap(), &lam).unwrap();
        assert!(linalg::max_abs(&(&lin - qhat.q())) < 1e-15);
        // Lambda = 0 slice gives the original family back
        assert_eq!(aug.sigma_slice().canonical(), fam.field().canonical());
    }

    #[test]
    fn contexts() {
        assert_eq!(classify_context(3, 4), Context::Context1);
        assert_eq!(classify_context(1, 3), Context::Context2);
        assert_eq!(classify_context(5, 4), Context::Invalid);
    }

    #[test]
    fn fixed_points() {
        assert_eq!(torus_fixed_points::<f64>(1), vec![vec![0.0], vec![std::f64::consts::PI]]);
        assert_eq!(torus_fixed_points::<f64>(0), vec![Vec::<f64>::new()]);
        for n in 0..=10 {
            let pts = torus_fixed_points::<f64>(n);
            assert_eq!(pts.len(), 1 << n);
            for p in &pts {
                for &c in p {
                    // -c = c mod 2 pi
                    let d = (2.0 * c) / (2.0 * std::f64::consts::PI);
                    assert!((d - d.round()).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn reversibility_diagnostic_on_family() {
        let fam = family();
        let prm = fam.params(&[1.0, 1.618], &[0.0], &[0.0]);
        let v = fam.field().freeze(&prm);
        let n = fam.n();
        let s = fam.phase_involution();
        let f = |w: &[f64]| v.eval(&w[..n], &w[n..], &[]);
        let g = |w: &[f64]| {
            let mut out: Vec<f64> = w[..n].iter().map(|x| -x).collect();
            let y = nalgebra::DVector::from_column_slice(&w[n..]);
            out.extend((&s * y).iter());
            out
        };
        let d = integrate::reversibility_diagnostic(f, g, &[0.3, 0.1, 0.01, 0.02, -0.01], 10.0, 10, &Default::default())
            .unwrap();
        assert!(d < 1e-8, "{d}");
    }
}
