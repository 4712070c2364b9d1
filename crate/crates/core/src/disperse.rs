//! Dispersal of low-mode mass by the coupling flow `e^{KB}`.
//!
//! For the torus model `B` is multiplication by `-i cos θ` on odd functions,
//! so `e^{KB}` multiplies by `e^{-iK cos θ}`: moduli are kept pointwise while
//! the phase oscillation pushes mass to high modes. The coefficient route
//! diagonalizes the compression of `-iB` once; the pointwise route samples
//! the function on a grid and serves as an independent check.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::engine::ControlSchedule;
use crate::linalg::Spectral;
use crate::model::{GalerkinPair, ModelSpec, QuantumState};
use crate::{Error, Result, C64};

/// Agreement required between a truncation and its double.
pub const MARGIN_TOL: f64 = 1e-8;

/// Grid size of the pointwise route.
pub const DEFAULT_POINTWISE_GRID: usize = 4096;

/// Default scan resolution for [`find_dispersal`].
pub const DEFAULT_SCAN_GRID: usize = 10_000;

/// Default `K_max` for a window topped at `p`.
pub fn default_k_max(p: usize) -> f64 {
    8.0 * p as f64
}

/// A truncation large enough for `e^{KB}` on a state supported up to `top`.
///
/// The coupling only links neighbours, so the mass spread past `top + m`
/// behaves like Bessel tails `J_m(|K|)`, negligible once `m` clears `|K|`
/// by a few multiples of `|K|^{1/3}`.
pub fn dispersal_truncation(top: usize, k: f64) -> usize {
    let k = k.abs();
    top + k.ceil() as usize + (6.0 * k.cbrt()).ceil() as usize + 32
}

fn coupling_spectral(pair: &GalerkinPair) -> Spectral {
    match pair.real_generator(0.0) {
        // H_B = -iB, real when B is purely imaginary.
        Some(_) => Spectral::real(pair.b_mat().map(|z| z.im)),
        None => Spectral::complex(pair.b_mat().map(|z| z * C64::new(0.0, -1.0))),
    }
}

fn apply_at(spec: &ModelSpec, psi: &QuantumState, k: f64, trunc: usize) -> Result<DVector<C64>> {
    let pair = spec.galerkin(trunc)?;
    let x = psi.to_dense(trunc)?;
    let out = coupling_spectral(&pair).apply_exp(k, &DMatrix::from_column_slice(trunc, 1, x.as_slice()));
    Ok(out.column(0).into_owned())
}

/// `e^{KB^{(trunc)}} ψ`, checked against the same computation at `2·trunc`.
pub fn apply_exp_kb(spec: &ModelSpec, psi: &QuantumState, k: f64, trunc: usize) -> Result<QuantumState> {
    if !k.is_finite() {
        return Err(Error::domain("K must be finite"));
    }
    let top = psi.highest_level().unwrap_or(1);
    if trunc < top.max(2) {
        return Err(Error::domain(format!(
            "truncation {trunc} does not cover the state support (top level {top})"
        )));
    }
    if k == 0.0 {
        return Ok(psi.clone());
    }
    let coarse = apply_at(spec, psi, k, trunc)?;
    let fine = apply_at(spec, psi, k, 2 * trunc)?;
    let gap = (0..2 * trunc)
        .map(|i| (fine[i] - if i < trunc { coarse[i] } else { C64::new(0.0, 0.0) }).norm_sqr())
        .sum::<f64>()
        .sqrt();
    if gap >= MARGIN_TOL {
        return Err(Error::TruncationInsufficient { truncation: trunc, gap });
    }
    Ok(QuantumState::from_dvector(&coarse))
}

/// `e^{KB}ψ` with the truncation chosen by [`dispersal_truncation`].
pub fn apply_exp_kb_auto(spec: &ModelSpec, psi: &QuantumState, k: f64) -> Result<QuantumState> {
    let top = psi.highest_level().unwrap_or(1);
    apply_exp_kb(spec, psi, k, dispersal_truncation(top, k))
}

/// Samples `ψ(θ) = Σ x_k sin(kθ)/√π` at `θ_i = iπ/m`, `i = 0..=m`.
pub fn sample_sine_series(psi: &QuantumState, m: usize) -> Vec<C64> {
    let norm = 1.0 / PI.sqrt();
    (0..=m)
        .map(|i| {
            let theta = i as f64 * PI / m as f64;
            psi.coeffs()
                .iter()
                .enumerate()
                .map(|(j, x)| x * ((psi.offset() + j) as f64 * theta).sin() * norm)
                .sum()
        })
        .collect()
}

/// Sine coefficients `1..=trunc` of grid values on `θ_i = iπ/m` by the
/// trapezoid rule, the inverse of [`sample_sine_series`].
pub fn project_sine_series(values: &[C64], trunc: usize) -> QuantumState {
    let m = values.len() - 1;
    let scale = 2.0 * PI.sqrt() / m as f64;
    let coeffs = (1..=trunc)
        .map(|k| {
            values[1..m]
                .iter()
                .enumerate()
                .map(|(i, v)| v * (k as f64 * (i + 1) as f64 * PI / m as f64).sin())
                .sum::<C64>()
                * scale
        })
        .collect::<Vec<_>>();
    QuantumState::from_dense(&coeffs)
}

/// `e^{KB}ψ` for the torus model by pointwise multiplication with
/// `e^{-iK cos θ}` on a grid of `m` intervals.
pub fn apply_exp_kb_pointwise(psi: &QuantumState, k: f64, trunc: usize, m: usize) -> QuantumState {
    let mut values = sample_sine_series(psi, m);
    for (i, v) in values.iter_mut().enumerate() {
        let theta = i as f64 * PI / m as f64;
        *v *= C64::from_polar(1.0, -k * theta.cos());
    }
    project_sine_series(&values, trunc)
}

#[derive(Clone, Debug, Serialize)]
pub struct DispersalResult {
    pub k: f64,
    /// `‖π_{N₀} e^{KB}ψ‖`, the mass on levels `1..=N₀`.
    pub low_mass: f64,
    /// Smallest `P` with `‖(1 − π_P) e^{KB}ψ‖ < ε`.
    pub tail_cut: usize,
    pub tail_mass: f64,
    /// `e^{KB}ψ` restricted to levels `1..=P`.
    #[serde(skip)]
    pub dispersed: QuantumState,
    /// Smallest low-mode mass over the whole scan and where it occurs.
    pub grid_min_k: f64,
    pub grid_min_mass: f64,
    pub truncation: usize,
}

/// Low-mode mass `‖π_{n0} e^{K_i B}ψ‖` at `K_i = i·K_max/grid`, `i = 0..=grid`.
pub fn dispersal_curve(spec: &ModelSpec, psi: &QuantumState, n0: usize, k_max: f64, grid: usize) -> Result<Vec<(f64, f64)>> {
    if !(k_max >= 0.0) || !k_max.is_finite() {
        return Err(Error::domain("K_max must be finite and non-negative"));
    }
    if grid == 0 {
        return Err(Error::domain("scan grid must have at least one interval"));
    }
    let top = psi.highest_level().unwrap_or(1).max(n0);
    let trunc = dispersal_truncation(top, k_max);
    let pair = spec.galerkin(trunc)?;
    let (values, vectors) = match coupling_spectral(&pair) {
        Spectral::Real { values, vectors } => (values, vectors.map(|v| C64::new(v, 0.0))),
        Spectral::Complex { values, vectors } => (values, vectors),
        Spectral::Diagonal(_) => unreachable!("coupling spectra are never built diagonal"),
    };
    // ψ in the eigenbasis, and the low rows of the eigenvector matrix.
    let c = vectors.ad_mul(&psi.to_dense(trunc)?);
    let low = vectors.rows(0, n0.min(trunc)).into_owned();
    let h = k_max / grid as f64;
    Ok((0..=grid)
        .into_par_iter()
        .map(|i| {
            let k = i as f64 * h;
            let rotated = DVector::from_fn(trunc, |r, _| c[r] * C64::from_polar(1.0, values[r] * k));
            (k, (&low * rotated).norm())
        })
        .collect())
}

/// Smallest grid `K` in `[0, K_max]` with low-mode mass below `eps`.
pub fn find_dispersal(spec: &ModelSpec, psi: &QuantumState, n0: usize, eps: f64, k_max: f64, grid: usize) -> Result<DispersalResult> {
    psi.require_normalized("dispersal input")?;
    if !(eps > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    if n0 < 1 {
        return Err(Error::domain("N0 must be at least 1"));
    }
    let curve = dispersal_curve(spec, psi, n0, k_max, grid)?;
    let (grid_min_k, grid_min_mass) = curve
        .iter()
        .copied()
        .fold((0.0, f64::INFINITY), |best, (k, m)| if m < best.1 { (k, m) } else { best });
    let Some(&(k, _)) = curve.iter().find(|(_, m)| *m < eps) else {
        return Err(Error::DispersalNotFound {
            k_max,
            best_k: grid_min_k,
            best_mass: grid_min_mass,
        });
    };
    let top = psi.highest_level().unwrap_or(1).max(n0);
    let truncation = dispersal_truncation(top, k);
    let full = apply_exp_kb(spec, psi, k, truncation)?;
    let low_mass = full.mass_in(1, n0);
    // Tail norms from the top down.
    let mut tail = 0.0;
    let mut tail_cut = truncation;
    for p in (1..=truncation).rev() {
        let next = tail + full.coefficient(p).norm_sqr();
        if next.sqrt() >= eps {
            break;
        }
        tail = next;
        tail_cut = p - 1;
    }
    let tail_cut = tail_cut.max(n0);
    let dispersed = crate::model::project(&full, tail_cut);
    let tail_mass = full.mass_in(tail_cut + 1, truncation);
    Ok(DispersalResult {
        k,
        low_mass,
        tail_cut,
        tail_mass,
        dispersed,
        grid_min_k,
        grid_min_mass,
        truncation,
    })
}

/// The constant control `K/η` on `[0, η]`.
pub fn impulsive_schedule(k: f64, eta: f64) -> Result<ControlSchedule> {
    if !(eta > 0.0) {
        return Err(Error::domain("impulse duration must be positive"));
    }
    let mut s = ControlSchedule::new(format!("impulse K = {k}"));
    s.push(k / eta, eta)?;
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Propagator;
    use crate::rng::Rng;
    use approx::assert_abs_diff_eq;

    fn toy() -> ModelSpec {
        ModelSpec::toy(3.0)
    }

    #[test]
    fn zero_k_is_identity() {
        let psi = Rng::new(1).unit_state(1, 5).unwrap();
        let out = apply_exp_kb(&toy(), &psi, 0.0, 10).unwrap();
        assert_abs_diff_eq!(out.distance(&psi), 0.0);
    }

    #[test]
    fn norm_is_preserved() {
        let mut rng = Rng::new(2);
        for _ in 0..5 {
            let psi = rng.unit_state(1, 6).unwrap();
            let k = rng.uniform_in(-30.0, 30.0);
            let out = apply_exp_kb_auto(&toy(), &psi, k).unwrap();
            assert_abs_diff_eq!(out.norm(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn tight_truncation_is_rejected() {
        let r = apply_exp_kb(&toy(), &QuantumState::basis(1).unwrap(), 40.0, 10);
        assert!(matches!(r, Err(Error::TruncationInsufficient { truncation: 10, .. })));
    }

    #[test]
    fn group_law() {
        let psi = Rng::new(3).unit_state(1, 4).unwrap();
        let a = apply_exp_kb_auto(&toy(), &psi, 3.5).unwrap();
        let ab = apply_exp_kb_auto(&toy(), &a, 4.25).unwrap();
        let direct = apply_exp_kb_auto(&toy(), &psi, 7.75).unwrap();
        assert!(ab.distance(&direct) < 1e-10);
    }

    #[test]
    fn pointwise_route_agrees() {
        let mut rng = Rng::new(4);
        for _ in 0..5 {
            let psi = rng.unit_state(1, 8).unwrap();
            let k = rng.uniform_in(-20.0, 20.0);
            let trunc = dispersal_truncation(8, k);
            let matrix = apply_exp_kb(&toy(), &psi, k, trunc).unwrap();
            let grid = apply_exp_kb_pointwise(&psi, k, trunc, DEFAULT_POINTWISE_GRID);
            assert!(matrix.distance(&grid) < 1e-8, "{}", matrix.distance(&grid));
        }
    }

    #[test]
    fn moduli_are_kept_pointwise() {
        let psi = Rng::new(5).unit_state(1, 6).unwrap();
        let before = sample_sine_series(&psi, 512);
        let mut after = before.clone();
        for (i, v) in after.iter_mut().enumerate() {
            *v *= C64::from_polar(1.0, -7.0 * (i as f64 * PI / 512.0).cos());
        }
        for (a, b) in before.iter().zip(&after) {
            assert!((a.norm() - b.norm()).abs() <= 4.0 * f64::EPSILON * a.norm());
        }
    }

    #[test]
    fn already_dispersed_state_needs_no_kick() {
        let psi = QuantumState::basis(5).unwrap();
        let r = find_dispersal(&toy(), &psi, 2, 0.1, 20.0, 100).unwrap();
        assert_eq!(r.k, 0.0);
        assert_eq!(r.low_mass, 0.0);
    }

    #[test]
    fn ground_state_disperses() {
        let psi = QuantumState::basis(1).unwrap();
        let r = find_dispersal(&toy(), &psi, 2, 0.3, 100.0, 10_000).unwrap();
        assert!(r.low_mass < 0.3);
        // The returned K is the first qualifying grid point.
        let curve = dispersal_curve(&toy(), &psi, 2, 100.0, 10_000).unwrap();
        let first = curve.iter().find(|(_, m)| *m < 0.3).unwrap();
        assert_eq!(first.0, r.k);
        // Recompute the masses from the stored state.
        assert_abs_diff_eq!(r.dispersed.mass_in(1, 2), r.low_mass, epsilon = 1e-8);
        assert_abs_diff_eq!((1.0 - r.dispersed.norm_sqr()).max(0.0).sqrt(), r.tail_mass, epsilon = 1e-8);
        assert!(r.tail_mass < 0.3);
    }

    #[test]
    fn refinement_never_raises_the_grid_minimum() {
        let psi = QuantumState::basis(1).unwrap();
        let coarse = find_dispersal(&toy(), &psi, 2, 0.3, 50.0, 500).unwrap();
        let fine = find_dispersal(&toy(), &psi, 2, 0.3, 50.0, 1000).unwrap();
        assert!(fine.grid_min_mass <= coarse.grid_min_mass);
    }

    #[test]
    fn not_found_reports_best_point() {
        let psi = QuantumState::basis(1).unwrap();
        match find_dispersal(&toy(), &psi, 2, 1e-6, 2.0, 20) {
            Err(Error::DispersalNotFound { best_mass, k_max, .. }) => {
                assert_eq!(k_max, 2.0);
                assert!(best_mass >= 1e-6);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn impulsive_limit() {
        let spec = toy();
        let psi = Rng::new(6).unit_state(1, 3).unwrap();
        let k = 5.0;
        let trunc = dispersal_truncation(3, k);
        let exact = apply_exp_kb(&spec, &psi, k, trunc).unwrap();
        let prop = Propagator::for_model(&spec, trunc).unwrap();
        let gap = |eta: f64| {
            let s = impulsive_schedule(k, eta).unwrap();
            prop.propagate(&s, &psi).unwrap().final_state.distance(&exact)
        };
        // The drift is negligible once η is far below 1/λ of the occupied levels.
        let mut last = gap(1e-8);
        for i in 1..5 {
            let g = gap(1e-8 / f64::powi(2.0, i));
            assert!(g <= 0.6 * last, "{g} vs {last}");
            last = g;
        }
    }

    #[test]
    fn impulse_bookkeeping() {
        let s = impulsive_schedule(-3.0, 0.25).unwrap();
        assert_eq!(s.l1_norm(), 3.0);
        let drift = impulsive_schedule(0.0, 0.5).unwrap();
        assert_eq!(drift.max_amplitude(), 0.0);
        assert!(impulsive_schedule(1.0, 0.0).is_err());
    }
}
