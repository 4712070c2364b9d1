//! Finite-dimensional diagnostics: bracket closure, Killing geometry,
//! coupling-torus orbits and lower bounds on the temporal diameter.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::linalg;
use crate::model::GalerkinPair;
use crate::{Error, Result, C64};

/// Relative tolerance on `M + M†` for skew-Hermitian inputs.
pub const SKEW_TOL: f64 = 1e-12;

/// Default rank tolerance of the bracket closure.
pub const DEFAULT_RANK_TOL: f64 = 1e-9;

fn skew_defect(m: &DMatrix<C64>) -> f64 {
    let scale = m.iter().map(|z| z.norm()).fold(1.0, f64::max);
    (m + m.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max) / scale
}

/// Two skew-Hermitian matrices of the same order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawPair", into = "RawPair")]
pub struct MatrixPair {
    a: DMatrix<C64>,
    b: DMatrix<C64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPair {
    a: Vec<Vec<[f64; 2]>>,
    b: Vec<Vec<[f64; 2]>>,
}

fn from_rows(rows: &[Vec<[f64; 2]>], name: &str) -> Result<DMatrix<C64>> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(Error::domain(format!("matrix {name} must be square and non-empty")));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
}

fn to_rows(m: &DMatrix<C64>) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

impl TryFrom<RawPair> for MatrixPair {
    type Error = Error;

    fn try_from(raw: RawPair) -> Result<Self> {
        MatrixPair::new(from_rows(&raw.a, "a")?, from_rows(&raw.b, "b")?)
    }
}

impl From<MatrixPair> for RawPair {
    fn from(p: MatrixPair) -> Self {
        RawPair {
            a: to_rows(&p.a),
            b: to_rows(&p.b),
        }
    }
}

impl MatrixPair {
    pub fn new(a: DMatrix<C64>, b: DMatrix<C64>) -> Result<Self> {
        if !a.is_square() || a.shape() != b.shape() || a.nrows() == 0 {
            return Err(Error::domain("A and B must be square matrices of the same order"));
        }
        for (name, m) in [("A", &a), ("B", &b)] {
            let d = skew_defect(m);
            if d > SKEW_TOL {
                return Err(Error::domain(format!("{name} is not skew-Hermitian (defect {d:e})")));
            }
        }
        Ok(MatrixPair { a, b })
    }

    /// `A = i·diag(λ)` and `B` from a Galerkin compression.
    pub fn from_galerkin(pair: &GalerkinPair) -> Self {
        let a = DMatrix::from_diagonal(&pair.a_diag().map(|l| C64::new(0.0, l)));
        MatrixPair {
            a,
            b: pair.b_mat().clone(),
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn a(&self) -> &DMatrix<C64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<C64> {
        &self.b
    }

    /// Both generators shifted to zero trace.
    pub fn traceless(&self) -> MatrixPair {
        MatrixPair {
            a: normalize_traceless(&self.a),
            b: normalize_traceless(&self.b),
        }
    }

    /// `(U A U†, U B U†)`.
    pub fn conjugated(&self, u: &DMatrix<C64>) -> MatrixPair {
        MatrixPair {
            a: u * &self.a * u.adjoint(),
            b: u * &self.b * u.adjoint(),
        }
    }
}

/// `M − (tr M / n)·I`.
pub fn normalize_traceless(m: &DMatrix<C64>) -> DMatrix<C64> {
    let n = m.nrows();
    let mean = m.trace() / n as f64;
    let mut out = m.clone();
    for i in 0..n {
        out[(i, i)] -= mean;
    }
    out
}

fn commutator(x: &DMatrix<C64>, y: &DMatrix<C64>) -> DMatrix<C64> {
    x * y - y * x
}

/// Real coordinates of a complex matrix under `Re tr(X†Y)`.
fn vectorize(m: &DMatrix<C64>) -> DVector<f64> {
    DVector::from_iterator(2 * m.len(), m.iter().flat_map(|z| [z.re, z.im]))
}

/// Orthonormal basis of a real span, grown one candidate at a time.
struct Span {
    basis: Vec<DVector<f64>>,
    tol: f64,
}

impl Span {
    /// Adds the component of `v` orthogonal to the span if it exceeds the
    /// tolerance relative to `‖v‖`.
    fn try_add(&mut self, v: DVector<f64>) -> bool {
        let norm = v.norm();
        if norm == 0.0 {
            return false;
        }
        let mut r = v / norm;
        // Two Gram–Schmidt passes keep the basis orthonormal to roundoff.
        for _ in 0..2 {
            for q in &self.basis {
                let c = q.dot(&r);
                r.axpy(-c, q, 1.0);
            }
        }
        let rn = r.norm();
        if rn <= self.tol {
            return false;
        }
        self.basis.push(r / rn);
        true
    }
}

/// Dimension of the real Lie algebra generated by `A` and `B`.
pub fn lie_rank(pair: &MatrixPair) -> usize {
    lie_rank_with_tol(pair, DEFAULT_RANK_TOL)
}

pub fn lie_rank_with_tol(pair: &MatrixPair, tol: f64) -> usize {
    let n = pair.n();
    let cap = n * n;
    let mut span = Span { basis: Vec::new(), tol };
    let mut elements: Vec<DMatrix<C64>> = Vec::new();
    for g in [&pair.a, &pair.b] {
        let scale = g.norm();
        if scale > 0.0 && span.try_add(vectorize(g)) {
            elements.push(g / C64::new(scale, 0.0));
        }
    }
    // Bracket each new element with everything found so far until a pass
    // adds nothing.
    let mut fresh = 0;
    while fresh < elements.len() && elements.len() < cap {
        let end = elements.len();
        for i in fresh..end {
            for j in 0..i {
                let c = commutator(&elements[i], &elements[j]);
                let scale = c.norm();
                if scale > tol && span.try_add(vectorize(&c)) {
                    elements.push(c / C64::new(scale, 0.0));
                }
            }
        }
        fresh = end;
    }
    span.basis.len()
}

/// Whether the bracket closure fills `su(n)`.
pub fn is_controllable(pair: &MatrixPair) -> bool {
    let n = pair.n();
    lie_rank(&pair.traceless()) == n * n - 1
}

/// The standard Killing scale of `su(n)`.
pub fn default_killing_scale(n: usize) -> f64 {
    2.0 * n as f64
}

/// `sqrt(−c·Re tr(M²))` for skew-Hermitian `M`.
pub fn killing_norm(m: &DMatrix<C64>, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::domain("Killing scale must be positive"));
    }
    let radicand = -c * (m * m).trace().re;
    let scale = c * m.norm_squared();
    if radicand < -SKEW_TOL * scale.max(1.0) {
        return Err(Error::domain(format!(
            "matrix is not skew-Hermitian (Killing radicand {radicand:e})"
        )));
    }
    Ok(radicand.max(0.0).sqrt())
}

#[derive(Clone, Debug, Serialize)]
pub struct OrbitDistance {
    pub distance: f64,
    /// A grid pair `(K, K')` attaining the minimum.
    pub k0: f64,
    pub k1: f64,
}

fn hermitian_part(b: &DMatrix<C64>) -> SymmetricEigen<C64, nalgebra::Dyn> {
    // B = iH with H = −iB Hermitian.
    SymmetricEigen::new(b.map(|z| z * C64::new(0.0, -1.0)))
}

/// Smallest `‖e^{KB}ψ₀ − e^{K'B}ψ₁‖` over `K, K'` on the grid
/// `i·K_max/grid`, `i = 0..=grid`.
///
/// With `B = V·i·diag(μ)·V†` the distance only depends on `D = K' − K`, so
/// the search runs over the `2·grid + 1` grid differences.
pub fn torus_orbit_distance(b: &DMatrix<C64>, psi0: &DVector<C64>, psi1: &DVector<C64>, k_max: f64, grid: usize) -> Result<OrbitDistance> {
    let n = b.nrows();
    if !b.is_square() || psi0.len() != n || psi1.len() != n {
        return Err(Error::domain("orbit distance needs a square B and states of its order"));
    }
    if skew_defect(b) > SKEW_TOL {
        return Err(Error::domain("B is not skew-Hermitian"));
    }
    if grid == 0 || !(k_max >= 0.0) || !k_max.is_finite() {
        return Err(Error::domain("orbit scan needs a finite K_max >= 0 and a positive grid"));
    }
    let eig = hermitian_part(b);
    let a = eig.eigenvectors.ad_mul(psi0);
    let c = eig.eigenvectors.ad_mul(psi1);
    let mu = eig.eigenvalues;
    let h = k_max / grid as f64;
    let g = grid as i64;
    let (d, dist) = (-g..=g)
        .into_par_iter()
        .map(|j| {
            let d = j as f64 * h;
            let sq: f64 = (0..n).map(|r| (a[r] - c[r] * C64::from_polar(1.0, mu[r] * d)).norm_sqr()).sum();
            (j, sq.sqrt())
        })
        .reduce(
            || (0, f64::INFINITY),
            |x, y| if y.1 < x.1 || (y.1 == x.1 && y.0.abs() < x.0.abs()) { y } else { x },
        );
    let (k0, k1) = if d >= 0 { (0.0, d as f64 * h) } else { (-d as f64 * h, 0.0) };
    Ok(OrbitDistance { distance: dist, k0, k1 })
}

#[derive(Clone, Debug, Serialize)]
pub struct RhoBound {
    /// Upper estimate of the orbit distance from the grid scan.
    pub orbit_distance: f64,
    pub a_norm: f64,
    /// `orbit_distance / ‖A‖`.
    pub orbit_bound: f64,
    /// Largest `|(|⟨v,ψ₀⟩| − |⟨v,ψ₁⟩|)| / ‖Av‖` over unit eigenvectors `v`
    /// of `B` with `Av ≠ 0`.
    pub eigenvector_bound: Option<f64>,
    pub bound: f64,
    pub caveat: &'static str,
}

/// Lower-bound diagnostics for the time needed to steer `ψ₀` to `ψ₁`.
pub fn rho_lower_bound(pair: &MatrixPair, psi0: &DVector<C64>, psi1: &DVector<C64>, k_max: f64, grid: usize) -> Result<RhoBound> {
    let a_norm = linalg::operator_norm(&pair.a);
    if a_norm == 0.0 {
        return Err(Error::domain("A vanishes, so the bound degenerates"));
    }
    let orbit = torus_orbit_distance(&pair.b, psi0, psi1, k_max, grid)?;
    let eig = hermitian_part(&pair.b);
    let eigenvector_bound = eig
        .eigenvectors
        .column_iter()
        .filter_map(|v| {
            let av = (&pair.a * v).norm();
            (av > 0.0).then(|| (v.dotc(psi0).norm() - v.dotc(psi1).norm()).abs() / av)
        })
        .fold(None, |best: Option<f64>, x| Some(best.map_or(x, |b| b.max(x))));
    let orbit_bound = orbit.distance / a_norm;
    Ok(RhoBound {
        orbit_distance: orbit.distance,
        a_norm,
        orbit_bound,
        eigenvector_bound,
        bound: eigenvector_bound.map_or(orbit_bound, |e| e.max(orbit_bound)),
        caveat: "the orbit distance is a grid upper estimate, so the orbit bound is an estimate, not a certified lower bound",
    })
}

/// Smallest `c` with `|Re⟨|A|^k ψ, Bψ⟩| ≤ c·⟨|A|^k ψ, ψ⟩` on the compression.
///
/// With `D = |A|^k`, `Re⟨Dψ, Bψ⟩ = ψ†[D, B]ψ / 2`, so `c` is half the
/// spectral radius of `D^{-1/2}[D, B]D^{-1/2}`.
pub fn coupling_constant_estimate(pair: &GalerkinPair, k: f64) -> Result<f64> {
    let weights = pair.a_diag().map(|l| l.abs().powf(k));
    if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
        return Err(Error::domain("|A|^k must be positive definite on the compression"));
    }
    let n = pair.n();
    let b = pair.b_mat();
    let m = DMatrix::from_fn(n, n, |i, j| {
        b[(i, j)] * ((weights[i] - weights[j]) / (weights[i] * weights[j]).sqrt())
    });
    Ok(linalg::hermitian_spectral_radius(&m) / 2.0)
}
