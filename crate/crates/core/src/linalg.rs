//! Dense linear algebra helpers built on nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::C64;

/// Spectral decomposition `H = V diag(μ) V†` of a Hermitian generator.
#[derive(Clone, Debug)]
pub(crate) enum Spectral {
    /// `H` is already diagonal; `V = I`.
    Diagonal(DVector<f64>),
    Real {
        values: DVector<f64>,
        vectors: DMatrix<f64>,
    },
    Complex {
        values: DVector<f64>,
        vectors: DMatrix<C64>,
    },
}

impl Spectral {
    pub fn diagonal(values: DVector<f64>) -> Self {
        Spectral::Diagonal(values)
    }

    pub fn real(h: DMatrix<f64>) -> Self {
        let (values, vectors) = real_symmetric_eigen(h);
        Spectral::Real { values, vectors }
    }

    pub fn complex(h: DMatrix<C64>) -> Self {
        let eig = SymmetricEigen::new(h);
        Spectral::Complex {
            values: eig.eigenvalues,
            vectors: eig.eigenvectors,
        }
    }

    /// `e^{iHt} X` for a block of column states `X`.
    pub fn apply_exp(&self, t: f64, x: &DMatrix<C64>) -> DMatrix<C64> {
        match self {
            Spectral::Diagonal(mu) => {
                let mut out = x.clone();
                for k in 0..mu.len() {
                    let phase = C64::from_polar(1.0, mu[k] * t);
                    out.row_mut(k).iter_mut().for_each(|z| *z *= phase);
                }
                out
            }
            Spectral::Real { values, vectors } => {
                let cre = vectors.tr_mul(&x.map(|z| z.re));
                let cim = vectors.tr_mul(&x.map(|z| z.im));
                let mut rot_re = cre.clone();
                let mut rot_im = cim.clone();
                for k in 0..values.len() {
                    let (s, c) = (values[k] * t).sin_cos();
                    for j in 0..x.ncols() {
                        rot_re[(k, j)] = c * cre[(k, j)] - s * cim[(k, j)];
                        rot_im[(k, j)] = s * cre[(k, j)] + c * cim[(k, j)];
                    }
                }
                let out_re = vectors * rot_re;
                let out_im = vectors * rot_im;
                out_re.zip_map(&out_im, C64::new)
            }
            Spectral::Complex { values, vectors } => {
                let mut c = vectors.ad_mul(x);
                for k in 0..values.len() {
                    let phase = C64::from_polar(1.0, values[k] * t);
                    c.row_mut(k).iter_mut().for_each(|z| *z *= phase);
                }
                vectors * c
            }
        }
    }

    /// The matrix `e^{iHt}`.
    pub fn exp_matrix(&self, t: f64) -> DMatrix<C64> {
        match self {
            Spectral::Diagonal(mu) => DMatrix::from_diagonal(&mu.map(|m| C64::from_polar(1.0, m * t))),
            Spectral::Real { values, vectors } => {
                let n = values.len();
                let mut vc = vectors.clone();
                let mut vs = vectors.clone();
                for k in 0..n {
                    let (s, c) = (values[k] * t).sin_cos();
                    vc.column_mut(k).scale_mut(c);
                    vs.column_mut(k).scale_mut(s);
                }
                let re = vc * vectors.transpose();
                let im = vs * vectors.transpose();
                DMatrix::from_fn(n, n, |i, j| C64::new(re[(i, j)], im[(i, j)]))
            }
            Spectral::Complex { values, vectors } => {
                let mut scaled = vectors.clone();
                for k in 0..values.len() {
                    let phase = C64::from_polar(1.0, values[k] * t);
                    scaled.column_mut(k).iter_mut().for_each(|z| *z *= phase);
                }
                cmul(&scaled, &vectors.adjoint())
            }
        }
    }
}

fn is_tridiagonal(h: &DMatrix<f64>) -> bool {
    let n = h.nrows();
    (0..n).all(|j| (0..n).all(|i| i.abs_diff(j) <= 1 || h[(i, j)] == 0.0))
}

/// Eigenpairs of a symmetric tridiagonal matrix by LAPACK's MRRR solver.
fn tridiagonal_eigen(h: &DMatrix<f64>) -> Option<(DVector<f64>, DMatrix<f64>)> {
    let n = h.nrows();
    let ni = i32::try_from(n).ok()?;
    let mut d: Vec<f64> = (0..n).map(|k| h[(k, k)]).collect();
    let mut e: Vec<f64> = (0..n).map(|k| if k + 1 < n { h[(k + 1, k)] } else { 0.0 }).collect();
    let mut m = 0;
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n * n];
    let mut isuppz = vec![0; 2 * n];
    let mut tryrac = 1;
    let mut work = vec![0.0; 18 * n];
    let mut iwork = vec![0; 10 * n];
    let mut info = 0;
    // SAFETY: every buffer has the length dstemr documents for JOBZ = 'V', RANGE = 'A'.
    unsafe {
        lapack::dstemr(
            b'V',
            b'A',
            ni,
            &mut d,
            &mut e,
            0.0,
            0.0,
            0,
            0,
            &mut m,
            &mut w,
            &mut z,
            ni,
            &[ni],
            &mut isuppz,
            &mut tryrac,
            &mut work,
            18 * ni,
            &mut iwork,
            10 * ni,
            &mut info,
        );
    }
    (info == 0 && m == ni).then(|| (DVector::from_vec(w), DMatrix::from_vec(n, n, z)))
}

/// Eigenpairs of a real symmetric matrix, using the tridiagonal solver when
/// the structure allows.
pub(crate) fn real_symmetric_eigen(h: DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    if h.nrows() > 2 && is_tridiagonal(&h) {
        if let Some(pair) = tridiagonal_eigen(&h) {
            return pair;
        }
    }
    let eig = SymmetricEigen::new(h);
    (eig.eigenvalues, eig.eigenvectors)
}

/// Complex product through four real products, which use the blocked real kernel.
pub(crate) fn cmul(a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    if a.nrows() * a.ncols() * b.ncols() < 4096 {
        return a * b;
    }
    let (ar, ai) = (a.map(|z| z.re), a.map(|z| z.im));
    let (br, bi) = (b.map(|z| z.re), b.map(|z| z.im));
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    re.zip_map(&im, C64::new)
}

/// Largest eigenvalue modulus of a Hermitian matrix.
pub(crate) fn hermitian_spectral_radius(h: &DMatrix<C64>) -> f64 {
    if h.iter().all(|z| z.im == 0.0) {
        return real_symmetric_eigen(h.map(|z| z.re)).0.iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    SymmetricEigen::new(h.clone()).eigenvalues.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Operator 2-norm of an arbitrary complex matrix.
pub(crate) fn operator_norm(m: &DMatrix<C64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().fold(0.0, |a: f64, &b| a.max(b))
}

/// One Newton–Schulz step `X ← X(3I − X†X)/2` towards the nearest unitary.
pub(crate) fn newton_schulz(x: &DMatrix<C64>) -> DMatrix<C64> {
    let n = x.nrows();
    let mut g = cmul(&x.adjoint(), x) * C64::new(-1.0, 0.0);
    for k in 0..n {
        g[(k, k)] += C64::new(3.0, 0.0);
    }
    cmul(x, &g) * C64::new(0.5, 0.0)
}

/// `‖X†X − I‖_max`.
#[cfg(test)]
pub(crate) fn unitarity_defect(x: &DMatrix<C64>) -> f64 {
    let g = x.ad_mul(x);
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - C64::new(target, 0.0)).norm());
        }
    }
    worst
}

/// Matrix exponential of a skew-Hermitian matrix `S` via `S = iH`.
#[cfg(test)]
pub(crate) fn expm_skew_hermitian(s: &DMatrix<C64>) -> DMatrix<C64> {
    let h = s.map(|z| z * C64::new(0.0, -1.0));
    let h = (&h + h.adjoint()) * C64::new(0.5, 0.0);
    if h.iter().all(|z| z.im == 0.0) {
        Spectral::real(h.map(|z| z.re)).exp_matrix(1.0)
    } else {
        Spectral::complex(h).exp_matrix(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn real_and_complex_paths_agree() {
        let h = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.3, 4.0, -0.7, 0.0, -0.7, 9.0]);
        let real = Spectral::real(h.clone());
        let complex = Spectral::complex(h.map(|x| C64::new(x, 0.0)));
        let a = real.exp_matrix(0.37);
        let b = complex.exp_matrix(0.37);
        assert_abs_diff_eq!(operator_norm(&(a.clone() - b)), 0.0, epsilon = 1e-13);
        let psi = DMatrix::from_column_slice(3, 1, &[C64::new(0.2, 0.1), C64::new(-0.5, 0.3), C64::new(0.0, 0.9)]);
        let direct = &a * &psi;
        assert_abs_diff_eq!((real.apply_exp(0.37, &psi) - direct).norm(), 0.0, epsilon = 1e-13);
        assert!(unitarity_defect(&a) < 1e-13);
    }

    #[test]
    fn newton_schulz_repairs_perturbed_unitary() {
        let h = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let u = Spectral::real(h).exp_matrix(0.8) * C64::new(1.0 + 1e-6, 0.0);
        assert!(unitarity_defect(&u) > 1e-7);
        let fixed = newton_schulz(&u);
        assert!(unitarity_defect(&fixed) < 1e-11);
    }

    #[test]
    fn operator_norm_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![C64::new(0.0, -3.0), C64::new(2.0, 0.0)]));
        assert_abs_diff_eq!(operator_norm(&m), 3.0, epsilon = 1e-14);
    }
}
