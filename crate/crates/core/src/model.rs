//! Spectral data of the control pair `(A, B)`, coefficient-space states and
//! Galerkin compressions.
//!
//! Basis indices start at 1: level `k` is the eigenvector `φ_k` of `A` with
//! `A φ_k = i λ_k φ_k`. In the torus model `φ_k(θ) = sin(kθ)/√π`, so there is
//! no level 0.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::{Error, Result, C64};

/// Tolerance used for the unit-norm bookkeeping of states.
pub const NORMALIZATION_TOL: f64 = 1e-10;

/// Tolerance on `b_jk + conj(b_kj)` when validating explicit coupling tables.
const SKEW_TOL: f64 = 1e-12;

/// `λ_k = k^{2α}` for the torus model.
pub fn eigenvalue(k: usize, alpha: f64) -> Result<f64> {
    if k < 1 {
        return Err(Error::domain("basis indices start at 1"));
    }
    Ok((k as f64).powf(2.0 * alpha))
}

/// `⟨φ_j, B φ_k⟩` for the torus model: `-i/2` on the first off-diagonals,
/// zero elsewhere.
pub fn coupling(j: usize, k: usize) -> C64 {
    if j.abs_diff(k) == 1 {
        C64::new(0.0, -0.5)
    } else {
        C64::new(0.0, 0.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Mode {
    /// `A = i|Δ|^α` and `B = -i cos θ` on the odd functions of the torus.
    ToyTorus,
    /// A finite system given by its spectrum and the matrix `⟨φ_j, B φ_k⟩`.
    ExplicitTable { lambda: Vec<f64>, coupling: Vec<Vec<C64>> },
}

/// The pair `(A, B)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModelSpec", into = "RawModelSpec")]
pub struct ModelSpec {
    pub alpha: f64,
    pub mode: Mode,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModelSpec {
    alpha: f64,
    mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    coupling: Option<Vec<Vec<[f64; 2]>>>,
}

impl TryFrom<RawModelSpec> for ModelSpec {
    type Error = Error;

    fn try_from(raw: RawModelSpec) -> Result<Self> {
        match raw.mode.as_str() {
            "toy-torus" => {
                if raw.lambda.is_some() || raw.coupling.is_some() {
                    return Err(Error::Config {
                        path: "mode".into(),
                        message: "toy-torus takes no `lambda` or `coupling` table".into(),
                    });
                }
                Ok(ModelSpec::toy(raw.alpha))
            }
            "explicit-table" => {
                let lambda = raw.lambda.ok_or_else(|| Error::Config {
                    path: "lambda".into(),
                    message: "explicit-table requires `lambda`".into(),
                })?;
                let coupling = raw.coupling.ok_or_else(|| Error::Config {
                    path: "coupling".into(),
                    message: "explicit-table requires `coupling`".into(),
                })?;
                let coupling = coupling
                    .into_iter()
                    .map(|row| row.into_iter().map(|[re, im]| C64::new(re, im)).collect())
                    .collect();
                ModelSpec::explicit(raw.alpha, lambda, coupling)
            }
            other => Err(Error::Config {
                path: "mode".into(),
                message: format!("unknown mode `{other}` (expected toy-torus or explicit-table)"),
            }),
        }
    }
}

impl From<ModelSpec> for RawModelSpec {
    fn from(spec: ModelSpec) -> Self {
        match spec.mode {
            Mode::ToyTorus => RawModelSpec {
                alpha: spec.alpha,
                mode: "toy-torus".into(),
                lambda: None,
                coupling: None,
            },
            Mode::ExplicitTable { lambda, coupling } => RawModelSpec {
                alpha: spec.alpha,
                mode: "explicit-table".into(),
                lambda: Some(lambda),
                coupling: Some(
                    coupling
                        .into_iter()
                        .map(|row| row.into_iter().map(|z| [z.re, z.im]).collect())
                        .collect(),
                ),
            },
        }
    }
}

impl ModelSpec {
    pub fn toy(alpha: f64) -> Self {
        ModelSpec {
            alpha,
            mode: Mode::ToyTorus,
        }
    }

    pub fn explicit(alpha: f64, lambda: Vec<f64>, coupling: Vec<Vec<C64>>) -> Result<Self> {
        let n = lambda.len();
        if n == 0 {
            return Err(Error::domain("explicit table needs at least one level"));
        }
        if lambda.iter().any(|l| !l.is_finite()) {
            return Err(Error::domain("eigenvalues must be finite"));
        }
        if coupling.len() != n || coupling.iter().any(|row| row.len() != n) {
            return Err(Error::domain(format!("coupling table must be {n}x{n} to match `lambda`")));
        }
        for j in 0..n {
            for k in 0..n {
                let defect = (coupling[j][k] + coupling[k][j].conj()).norm();
                if defect > SKEW_TOL {
                    return Err(Error::domain(format!(
                        "coupling is not skew-adjoint at ({}, {}): defect {defect:e}",
                        j + 1,
                        k + 1
                    )));
                }
            }
        }
        Ok(ModelSpec {
            alpha,
            mode: Mode::ExplicitTable { lambda, coupling },
        })
    }

    pub fn is_toy(&self) -> bool {
        matches!(self.mode, Mode::ToyTorus)
    }

    /// Number of levels, `None` for the (infinite) torus model.
    pub fn max_level(&self) -> Option<usize> {
        match &self.mode {
            Mode::ToyTorus => None,
            Mode::ExplicitTable { lambda, .. } => Some(lambda.len()),
        }
    }

    pub fn eigenvalue(&self, k: usize) -> Result<f64> {
        match &self.mode {
            Mode::ToyTorus => eigenvalue(k, self.alpha),
            Mode::ExplicitTable { lambda, .. } => {
                if k < 1 || k > lambda.len() {
                    return Err(Error::domain(format!("level {k} outside the table 1..={}", lambda.len())));
                }
                Ok(lambda[k - 1])
            }
        }
    }

    pub fn coupling(&self, j: usize, k: usize) -> C64 {
        match &self.mode {
            Mode::ToyTorus => coupling(j, k),
            Mode::ExplicitTable { coupling, .. } => {
                if j < 1 || k < 1 || j > coupling.len() || k > coupling.len() {
                    C64::new(0.0, 0.0)
                } else {
                    coupling[j - 1][k - 1]
                }
            }
        }
    }

    /// Compressions of order `n` of `A` and `B`.
    pub fn galerkin(&self, n: usize) -> Result<GalerkinPair> {
        if n < 2 {
            return Err(Error::domain("truncation order must be at least 2"));
        }
        if let Some(max) = self.max_level() {
            if n > max {
                return Err(Error::domain(format!(
                    "truncation {n} exceeds the {max} levels of the explicit table"
                )));
            }
        }
        let a_diag = (1..=n).map(|k| self.eigenvalue(k)).collect::<Result<Vec<_>>>()?;
        let b_mat = DMatrix::from_fn(n, n, |j, k| self.coupling(j + 1, k + 1));
        GalerkinPair::new(DVector::from_vec(a_diag), b_mat)
    }

    /// Operator norms of the compressions `B^{(n)}` over a range of orders.
    pub fn coupling_norm_report(&self, orders: std::ops::RangeInclusive<usize>) -> Result<CouplingNormReport> {
        let mut entries = Vec::new();
        for n in orders {
            let pair = self.galerkin(n)?;
            entries.push(CouplingNorm {
                truncation: n,
                norm: pair.b_norm(),
            });
        }
        let monotone = entries.windows(2).all(|w| w[1].norm >= w[0].norm - 1e-14);
        let max_norm = entries.iter().map(|e| e.norm).fold(0.0, f64::max);
        let mut discrepancies = Vec::new();
        if self.is_toy() {
            let claimed = std::f64::consts::FRAC_1_SQRT_2;
            let first_above = entries.iter().find(|e| e.norm > claimed + 1e-12);
            if let Some(e) = first_above {
                discrepancies.push(Discrepancy {
                    quantity: "coupling operator norm ‖B‖".into(),
                    claimed,
                    measured: max_norm,
                    note: format!(
                        "B is multiplication by -i cos θ, whose norm is 1; truncated norms exceed \
                         the claimed value √2/2 from order {} on, so bounds use measured ‖B^(N)‖",
                        e.truncation
                    ),
                });
            }
        }
        Ok(CouplingNormReport {
            entries,
            monotone,
            max_norm,
            discrepancies,
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CouplingNorm {
    pub truncation: usize,
    pub norm: f64,
}

/// A quantity whose commonly quoted value disagrees with what is measured.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Discrepancy {
    pub quantity: String,
    pub claimed: f64,
    pub measured: f64,
    pub note: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CouplingNormReport {
    pub entries: Vec<CouplingNorm>,
    pub monotone: bool,
    pub max_norm: f64,
    pub discrepancies: Vec<Discrepancy>,
}

/// Compressions `A^{(N)}`, `B^{(N)}`.
///
/// `a_diag[k-1] = λ_k` is the imaginary part of the `k`-th diagonal entry of
/// `A^{(N)}`; `b_mat` holds `⟨φ_j, B φ_k⟩`.
#[derive(Clone, Debug)]
pub struct GalerkinPair {
    a_diag: DVector<f64>,
    b_mat: DMatrix<C64>,
    b_norm: f64,
    real_generator: bool,
}

impl GalerkinPair {
    pub fn new(a_diag: DVector<f64>, b_mat: DMatrix<C64>) -> Result<Self> {
        let n = a_diag.len();
        if b_mat.nrows() != n || b_mat.ncols() != n {
            return Err(Error::domain("A and B compressions have different orders"));
        }
        let skew = (&b_mat + b_mat.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max);
        if skew > SKEW_TOL * (1.0 + b_mat.iter().map(|z| z.norm()).fold(0.0, f64::max)) {
            return Err(Error::domain(format!("B is not skew-Hermitian (defect {skew:e})")));
        }
        // i(A + uB) is real symmetric exactly when B is purely imaginary.
        let real_generator = b_mat.iter().all(|z| z.re == 0.0);
        let b_norm = linalg::hermitian_spectral_radius(&b_mat.map(|z| z * C64::i()));
        Ok(GalerkinPair {
            a_diag,
            b_mat,
            b_norm,
            real_generator,
        })
    }

    pub fn n(&self) -> usize {
        self.a_diag.len()
    }

    pub fn a_diag(&self) -> &DVector<f64> {
        &self.a_diag
    }

    pub fn b_mat(&self) -> &DMatrix<C64> {
        &self.b_mat
    }

    /// `λ_k` for `1 <= k <= n`.
    pub fn lambda(&self, k: usize) -> f64 {
        self.a_diag[k - 1]
    }

    /// `⟨φ_j, B φ_k⟩` for `1 <= j, k <= n`.
    pub fn b(&self, j: usize, k: usize) -> C64 {
        self.b_mat[(j - 1, k - 1)]
    }

    /// Operator norm of `B^{(N)}`.
    pub fn b_norm(&self) -> f64 {
        self.b_norm
    }

    /// Whether `A + uB = iH(u)` with `H(u)` real symmetric for every `u`.
    pub fn has_real_generator(&self) -> bool {
        self.real_generator
    }

    /// `H(u) = diag(λ) - i u B`, so that `A + uB = i H(u)`.
    pub fn generator(&self, u: f64) -> DMatrix<C64> {
        let n = self.n();
        let mut h = self.b_mat.map(|z| z * C64::new(0.0, -u));
        for k in 0..n {
            h[(k, k)] += C64::new(self.a_diag[k], 0.0);
        }
        h
    }

    /// Real form of [`GalerkinPair::generator`], when it exists.
    pub fn real_generator(&self, u: f64) -> Option<DMatrix<f64>> {
        if !self.real_generator {
            return None;
        }
        let n = self.n();
        // -i u (i y) = u y for a purely imaginary entry i y.
        let mut h = self.b_mat.map(|z| u * z.im);
        for k in 0..n {
            h[(k, k)] += self.a_diag[k];
        }
        Some(h)
    }

    /// The same pair with `A^{(N)}` shifted to zero trace.
    pub fn traceless_drift(&self) -> GalerkinPair {
        let mean = self.a_diag.mean();
        GalerkinPair {
            a_diag: self.a_diag.map(|l| l - mean),
            b_mat: self.b_mat.clone(),
            b_norm: self.b_norm,
            real_generator: self.real_generator,
        }
    }
}

/// Finitely supported state: `coeffs[i]` is the coefficient of
/// `φ_{offset+i}`; every other coefficient is exactly zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuantumState {
    offset: usize,
    coeffs: Vec<C64>,
}

impl QuantumState {
    pub fn new(offset: usize, coeffs: Vec<C64>) -> Result<Self> {
        if offset < 1 {
            return Err(Error::domain("state offset must be at least 1"));
        }
        if coeffs.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::domain("state coefficients must be finite"));
        }
        Ok(QuantumState { offset, coeffs })
    }

    /// The basis vector `φ_k`.
    pub fn basis(k: usize) -> Result<Self> {
        QuantumState::new(k, vec![C64::new(1.0, 0.0)])
    }

    /// Coefficients of `φ_1, φ_2, ...`.
    pub fn from_dense(coeffs: &[C64]) -> Self {
        QuantumState {
            offset: 1,
            coeffs: coeffs.to_vec(),
        }
    }

    pub fn from_dvector(v: &DVector<C64>) -> Self {
        QuantumState::from_dense(v.as_slice())
    }

    pub fn zero() -> Self {
        QuantumState {
            offset: 1,
            coeffs: Vec::new(),
        }
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    /// Last index of the stored window (`offset - 1` for an empty window).
    pub fn window_end(&self) -> usize {
        self.offset + self.coeffs.len() - 1
    }

    /// `⟨φ_k, ψ⟩`.
    pub fn coefficient(&self, k: usize) -> C64 {
        if k < self.offset || k > self.window_end() {
            C64::new(0.0, 0.0)
        } else {
            self.coeffs[k - self.offset]
        }
    }

    /// Lowest level carrying a nonzero coefficient.
    pub fn lowest_level(&self) -> Option<usize> {
        self.coeffs.iter().position(|z| z.norm_sqr() > 0.0).map(|i| i + self.offset)
    }

    /// Highest level carrying a nonzero coefficient.
    pub fn highest_level(&self) -> Option<usize> {
        self.coeffs.iter().rposition(|z| z.norm_sqr() > 0.0).map(|i| i + self.offset)
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= NORMALIZATION_TOL
    }

    pub fn normalized(&self) -> Result<Self> {
        let norm = self.norm();
        if norm == 0.0 {
            return Err(Error::domain("cannot normalize the zero state"));
        }
        Ok(QuantumState {
            offset: self.offset,
            coeffs: self.coeffs.iter().map(|z| z / norm).collect(),
        })
    }

    /// Errors unless the state has unit norm within [`NORMALIZATION_TOL`].
    pub fn require_normalized(&self, what: &str) -> Result<()> {
        if self.is_normalized() {
            Ok(())
        } else {
            Err(Error::domain(format!("{what} must have unit norm (found {})", self.norm())))
        }
    }

    /// `⟨self, other⟩`, antilinear in `self`.
    pub fn inner(&self, other: &QuantumState) -> C64 {
        let lo = self.offset.max(other.offset);
        let hi = self.window_end().min(other.window_end());
        (lo..=hi).map(|k| self.coefficient(k).conj() * other.coefficient(k)).sum()
    }

    pub fn distance(&self, other: &QuantumState) -> f64 {
        let lo = self.offset.min(other.offset);
        let hi = self.window_end().max(other.window_end());
        (lo..=hi)
            .map(|k| (self.coefficient(k) - other.coefficient(k)).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Complex conjugate of every coefficient.
    pub fn conj(&self) -> Self {
        QuantumState {
            offset: self.offset,
            coeffs: self.coeffs.iter().map(|z| z.conj()).collect(),
        }
    }

    /// Dense coefficient vector over levels `1..=n`.
    ///
    /// Fails if a nonzero coefficient lies above `n`.
    pub fn to_dense(&self, n: usize) -> Result<DVector<C64>> {
        if let Some(top) = self.highest_level() {
            if top > n {
                return Err(Error::domain(format!("state has support up to level {top}, beyond truncation {n}")));
            }
        }
        Ok(DVector::from_fn(n, |i, _| self.coefficient(i + 1)))
    }

    /// Mass (norm) carried by levels in `lo..=hi`.
    pub fn mass_in(&self, lo: usize, hi: usize) -> f64 {
        (lo.max(self.offset)..=hi.min(self.window_end()))
            .map(|k| self.coefficient(k).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Drops zero coefficients at both ends of the window.
    pub fn trimmed(&self) -> Self {
        match (self.lowest_level(), self.highest_level()) {
            (Some(lo), Some(hi)) => QuantumState {
                offset: lo,
                coeffs: (lo..=hi).map(|k| self.coefficient(k)).collect(),
            },
            _ => QuantumState::zero(),
        }
    }
}

/// `‖ψ‖_s = sqrt(Σ_k |λ_k|^{2s} |⟨φ_k, ψ⟩|²)`.
pub fn weighted_norm(psi: &QuantumState, spec: &ModelSpec, s: f64) -> Result<f64> {
    if !(s >= 0.0) {
        return Err(Error::domain("weight exponent must be nonnegative"));
    }
    let mut acc = 0.0;
    for (i, z) in psi.coeffs().iter().enumerate() {
        if z.norm_sqr() == 0.0 {
            continue;
        }
        let lambda = spec.eigenvalue(psi.offset() + i)?.abs();
        acc += lambda.powf(2.0 * s) * z.norm_sqr();
    }
    Ok(acc.sqrt())
}

/// Orthogonal projection `π_n` onto the span of `φ_1, ..., φ_n`.
pub fn project(psi: &QuantumState, n: usize) -> QuantumState {
    let coeffs = psi
        .coeffs()
        .iter()
        .enumerate()
        .map(|(i, z)| if psi.offset() + i <= n { *z } else { C64::new(0.0, 0.0) })
        .collect();
    QuantumState {
        offset: psi.offset(),
        coeffs,
    }
}
