//! Resonant transfer pulses.
//!
//! A control `u(t) = (ω/n) cos(ωt + φ_c)` tuned to the gap `ω = |λ_k − λ_j|`
//! of a coupled pair acts, to first order in `1/n`, as the two-level rotation
//! `e^{K M†}` on that pair followed by free evolution, where `K` is the L¹ norm
//! of the control and `M†` has off-diagonal entries `π b_jk e^{iφ}/4` and its
//! negative conjugate. This module solves for `(K, φ)` given the pair of
//! coefficients to rotate, bounds the leakage constant `C`, and samples the
//! pulse into a piecewise-constant schedule with a certified error.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{DMatrix, Matrix2};
use serde::Serialize;

use crate::engine::{sample_cosine, ControlSchedule, Propagator};
use crate::linalg;
use crate::model::{GalerkinPair, ModelSpec};
use crate::{Error, Result, C64};

/// L¹ norm of `u*` over one period.
pub const PERIOD_L1: f64 = 4.0;

pub const DEFAULT_STEPS_PER_PERIOD: usize = 64;

/// Relative tolerance for deciding that two gaps are commensurate.
const RESONANCE_TOL: f64 = 1e-9;

/// Polar form `(a, b) = (cos θ e^{iα₁}, sin θ e^{iβ₁})` of a unit pair and the
/// rotation that annihilates its first coordinate.
///
/// `phi` and `k` are stated for the canonical coupling `b₁₂ = 1/2`; use
/// [`RotationTarget::for_coupling`] for any other coupling.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RotationTarget {
    pub theta: f64,
    pub alpha1: f64,
    pub beta1: f64,
    pub phi: f64,
    pub k: f64,
}

impl RotationTarget {
    /// `(K, φ)` producing the same rotation through the coupling `b12`.
    pub fn for_coupling(&self, b12: C64) -> Result<(f64, f64)> {
        let mag = b12.norm();
        if mag == 0.0 {
            return Err(Error::domain("the pair is not coupled"));
        }
        let k = (FRAC_PI_2 - self.theta) * 4.0 / (PI * mag);
        let phi = (self.phi - b12.arg()).rem_euclid(TAU);
        Ok((k, phi))
    }
}

/// Solves `e^{K M†}(a, b)ᵀ ∝ (0, 1)ᵀ` with the smallest `K ≥ 0`.
pub fn rotation_parameters(a: C64, b: C64) -> Result<RotationTarget> {
    let norm_sqr = a.norm_sqr() + b.norm_sqr();
    if norm_sqr == 0.0 {
        return Err(Error::domain("cannot rotate the zero vector"));
    }
    if (norm_sqr - 1.0).abs() > 1e-10 {
        return Err(Error::domain(format!(
            "rotation input must have unit norm (|a|²+|b|² = {norm_sqr})"
        )));
    }
    let theta = b.norm().atan2(a.norm());
    let alpha1 = a.arg();
    let beta1 = b.arg();
    let phi = (alpha1 - beta1 - PI).rem_euclid(TAU);
    // rem_euclid can round up to exactly 2π.
    let phi = if phi >= TAU { 0.0 } else { phi };
    Ok(RotationTarget {
        theta,
        alpha1,
        beta1,
        phi,
        k: 4.0 * (PI - 2.0 * theta) / PI,
    })
}

/// `e^{K M†}` with `M† = [[0, w], [−w̄, 0]]` and `w = π b12 e^{iφ}/4`.
pub fn effective_rotation(k: f64, phi: f64, b12: C64) -> Matrix2<C64> {
    let w = b12 * C64::from_polar(PI / 4.0, phi);
    let r = w.norm();
    if r == 0.0 {
        return Matrix2::identity();
    }
    let (s, c) = (r * k).sin_cos();
    let dir = w / r;
    Matrix2::new(C64::new(c, 0.0), dir * s, -dir.conj() * s, C64::new(c, 0.0))
}

/// Pairs `(l, m)`, `l ≠ m`, that touch `{j, k}`, are coupled, and are not
/// `{j, k}` itself, with their gap `λ_l − λ_m`.
fn leakage_pairs(pair: &GalerkinPair, j: usize, k: usize) -> Vec<(usize, usize, f64)> {
    let n = pair.n();
    let mut out = Vec::new();
    for l in 1..=n {
        for m in 1..=n {
            if l == m || !(l == j || l == k || m == j || m == k) {
                continue;
            }
            if (l == j && m == k) || (l == k && m == j) {
                continue;
            }
            if pair.b(l, m).norm() == 0.0 {
                continue;
            }
            out.push((l, m, pair.lambda(l) - pair.lambda(m)));
        }
    }
    out
}

fn check_transition(pair: &GalerkinPair, j: usize, k: usize) -> Result<f64> {
    let n = pair.n();
    if j < 1 || k < 1 || j > n || k > n || j == k {
        return Err(Error::domain(format!(
            "transition ({j}, {k}) is not a pair of distinct levels within truncation {n}"
        )));
    }
    if pair.b(j, k).norm() == 0.0 {
        return Err(Error::DegenerateTransition {
            j,
            k,
            reason: "the levels are not coupled".into(),
        });
    }
    let omega = (pair.lambda(k) - pair.lambda(j)).abs();
    if omega == 0.0 {
        return Err(Error::DegenerateTransition {
            j,
            k,
            reason: "the levels have equal energy".into(),
        });
    }
    for (l, m, gap) in leakage_pairs(pair, j, k) {
        let ratio = gap.abs() / omega;
        if (ratio - ratio.round()).abs() <= RESONANCE_TOL * ratio.max(1.0) {
            return Err(Error::DegenerateTransition {
                j,
                k,
                reason: format!("gap of ({l}, {m}) is {} times the driven gap", ratio.round()),
            });
        }
    }
    Ok(omega)
}

/// `|∫_0^T ω cos(ωt+φ) e^{iω't} dt / sin(π|ω'|/ω)|` with `T = 2π/ω`.
///
/// The primitive gives `(ω/2) e^{iπx} 2 sin(πx) [e^{iφ}/(ω+ω') + e^{−iφ}/(ω'−ω)]`
/// with `x = ω'/ω`, so the sine cancels.
pub fn leakage_ratio(omega: f64, omega_prime: f64, phase: f64) -> f64 {
    let plus = C64::from_polar(1.0, phase) / (omega + omega_prime);
    let minus = C64::from_polar(1.0, -phase) / (omega_prime - omega);
    omega * (plus + minus).norm()
}

/// Supremum of [`leakage_ratio`] over the phase.
pub fn leakage_ratio_sup(omega: f64, omega_prime: f64) -> f64 {
    omega * (1.0 / (omega + omega_prime).abs() + 1.0 / (omega_prime - omega).abs())
}

/// Leakage constant `C` of the transition `(j, k)` at truncation `n_trunc`,
/// maximized over the pulse phase.
///
/// Zero when no other coupled pair touches the transition.
pub fn compute_c(spec: &ModelSpec, n_trunc: usize, j: usize, k: usize) -> Result<f64> {
    let pair = spec.galerkin(n_trunc)?;
    compute_c_for(&pair, j, k, None)
}

/// Leakage constant for the control phase `phase`.
pub fn compute_c_at_phase(spec: &ModelSpec, n_trunc: usize, j: usize, k: usize, phase: f64) -> Result<f64> {
    let pair = spec.galerkin(n_trunc)?;
    compute_c_for(&pair, j, k, Some(phase))
}

pub(crate) fn compute_c_for(pair: &GalerkinPair, j: usize, k: usize, phase: Option<f64>) -> Result<f64> {
    let omega = check_transition(pair, j, k)?;
    Ok(leakage_pairs(pair, j, k)
        .into_iter()
        .map(|(_, _, gap)| match phase {
            Some(p) => leakage_ratio(omega, gap, p),
            None => leakage_ratio_sup(omega, gap),
        })
        .fold(0.0, f64::max))
}

/// `∫_a^b |cos x| dx`.
pub fn abs_cos_integral(a: f64, b: f64) -> f64 {
    // F(y) = ∫_0^y |sin s| ds = 2⌊y/π⌋ + 1 − cos(y mod π); |cos x| = |sin(x + π/2)|.
    let f = |y: f64| {
        let m = (y / PI).floor();
        2.0 * m + 1.0 - (y - m * PI).cos()
    };
    f(b + FRAC_PI_2) - f(a + FRAC_PI_2)
}

/// How the amplitude divisor `n` is chosen.
#[derive(Clone, Copy, Debug)]
pub enum Divisor {
    /// From an operator-norm error budget `η`.
    Budget(f64),
    /// Fixed value (at least 1).
    Fixed(f64),
}

#[derive(Clone, Copy, Debug)]
pub struct PulseOptions {
    pub steps_per_period: usize,
    /// Longest acceptable pulse; longer pulses are a budget error.
    pub max_duration: f64,
}

impl Default for PulseOptions {
    fn default() -> Self {
        PulseOptions {
            steps_per_period: DEFAULT_STEPS_PER_PERIOD,
            max_duration: f64::INFINITY,
        }
    }
}

/// A synthesized transfer pulse and its certificate.
#[derive(Clone, Debug, Serialize)]
pub struct TransitionPulse {
    /// Level whose population is moved.
    pub j: usize,
    /// Level receiving it.
    pub k: usize,
    /// Phase `φ` of `M†` for the actual coupling `b_jk`.
    pub phi: f64,
    /// Phase `φ_c` of the control cosine.
    pub control_phase: f64,
    /// Rotation angle parameter `θ` of the input pair.
    pub theta: f64,
    /// Divisor `n`.
    pub n: f64,
    /// Gap `|λ_k − λ_j|`, both the frequency and the nominal amplitude.
    pub amplitude: f64,
    /// Amplitude actually sampled, corrected for the zero-order hold.
    pub sampled_amplitude: f64,
    pub duration: f64,
    /// Planned L¹ norm, the `K` of the rotation `e^{K M†}`.
    pub k_target: f64,
    /// `(1/n)∫_0^τ |ω cos(ωt + φ_c)| dt`.
    pub k_continuous: f64,
    /// L¹ norm of the sampled schedule.
    pub k_schedule: f64,
    pub c: f64,
    pub c_sup: f64,
    pub b_norm: f64,
    /// `4(C+1)‖B‖(1 + 2K‖B‖)/n` with `K` the larger realized L¹ norm.
    pub bound: f64,
    /// Twice `bound`: the allowance for a non-integer divisor.
    pub certified_error: f64,
    pub eta: Option<f64>,
    pub steps_per_period: usize,
    #[serde(skip)]
    pub schedule: ControlSchedule,
}

impl TransitionPulse {
    /// The 2×2 block `e^{K M†}` in the `(j, k)` basis.
    pub fn rotation(&self, b_jk: C64) -> Matrix2<C64> {
        effective_rotation(self.k_target, self.phi, b_jk)
    }

    /// `e^{τA}e^{K M†}` on the whole Galerkin space of `pair`.
    pub fn ideal_propagator(&self, pair: &GalerkinPair) -> DMatrix<C64> {
        let n = pair.n();
        let mut m = DMatrix::<C64>::identity(n, n);
        if self.k_target > 0.0 {
            let r = self.rotation(pair.b(self.j, self.k));
            let (a, b) = (self.j - 1, self.k - 1);
            m[(a, a)] = r[(0, 0)];
            m[(a, b)] = r[(0, 1)];
            m[(b, a)] = r[(1, 0)];
            m[(b, b)] = r[(1, 1)];
        }
        for row in 0..n {
            let phase = C64::from_polar(1.0, pair.lambda(row + 1) * self.duration);
            m.row_mut(row).iter_mut().for_each(|z| *z *= phase);
        }
        m
    }
}

/// Builds the pulse moving the population of level `j` into level `k`.
///
/// `state2 = (x_j, x_k)` are the current coefficients of the two levels;
/// they are normalized internally and a zero pair yields an empty pulse.
pub fn synthesize_transition(
    spec: &ModelSpec,
    n_trunc: usize,
    j: usize,
    k: usize,
    state2: (C64, C64),
    eta: f64,
) -> Result<TransitionPulse> {
    let pair = spec.galerkin(n_trunc)?;
    synthesize_with(&pair, j, k, state2, Divisor::Budget(eta), &PulseOptions::default())
}

pub fn synthesize_with(
    pair: &GalerkinPair,
    j: usize,
    k: usize,
    state2: (C64, C64),
    divisor: Divisor,
    opts: &PulseOptions,
) -> Result<TransitionPulse> {
    let omega = check_transition(pair, j, k)?;
    let eta = match divisor {
        Divisor::Budget(eta) if !(eta > 0.0) || !eta.is_finite() => {
            return Err(Error::domain(format!("error budget must be positive, got {eta}")));
        }
        Divisor::Budget(eta) => Some(eta),
        Divisor::Fixed(n) if !(n >= 1.0) || !n.is_finite() => {
            return Err(Error::domain(format!("divisor must be at least 1, got {n}")));
        }
        Divisor::Fixed(_) => None,
    };
    let (a, b) = state2;
    let norm = (a.norm_sqr() + b.norm_sqr()).sqrt();
    let target = if norm == 0.0 {
        RotationTarget {
            theta: FRAC_PI_2,
            alpha1: 0.0,
            beta1: 0.0,
            phi: 0.0,
            k: 0.0,
        }
    } else {
        rotation_parameters(a / norm, b / norm)?
    };
    let b_jk = pair.b(j, k);
    let (k_target, phi) = target.for_coupling(b_jk)?;
    // Averaging the resonant term gives the (j, k) entry Kπ b_jk e^{∓iφ_c}/4,
    // with the minus sign when level j lies below level k.
    let control_phase = if pair.lambda(j) < pair.lambda(k) {
        (-phi).rem_euclid(TAU)
    } else {
        phi
    };
    let b_norm = pair.b_norm();
    let c = compute_c_for(pair, j, k, Some(control_phase))?;
    let c_sup = compute_c_for(pair, j, k, None)?;
    let n = match divisor {
        Divisor::Budget(eta) => (PERIOD_L1 * (1.0 + 2.0 * k_target * b_norm) * (c + 1.0) * b_norm / eta).max(1.0),
        Divisor::Fixed(n) => n,
    };
    let duration = PI * k_target * n / (2.0 * omega);
    if duration > opts.max_duration {
        return Err(Error::BudgetExceeded {
            stage: format!("pulse ({j}, {k})"),
            duration,
            budget: opts.max_duration,
        });
    }
    // The zero-order hold scales the resonant Fourier component by
    // sinc(π/M); the sampled amplitude compensates for it.
    let m = opts.steps_per_period;
    let x = PI / m as f64;
    let sampled_amplitude = omega * x / x.sin();
    let schedule = if k_target == 0.0 {
        ControlSchedule::new(format!("pulse ({j}, {k}) idle"))
    } else {
        let mut s = sample_cosine(sampled_amplitude, omega, control_phase, n, duration, m)?;
        s.label = format!("pulse ({j}, {k})");
        s
    };
    let duration = schedule.duration();
    let k_continuous = abs_cos_integral(control_phase, omega * duration + control_phase) / n;
    let k_schedule = schedule.l1_norm();
    let k_cert = k_continuous.max(k_schedule);
    let bound = PERIOD_L1 * (c + 1.0) * b_norm * (1.0 + 2.0 * k_cert * b_norm) / n;
    Ok(TransitionPulse {
        j,
        k,
        phi,
        control_phase,
        theta: target.theta,
        n,
        amplitude: omega,
        sampled_amplitude,
        duration,
        k_target,
        k_continuous,
        k_schedule,
        c,
        c_sup,
        b_norm,
        bound,
        certified_error: 2.0 * bound,
        eta,
        steps_per_period: m,
        schedule,
    })
}

/// `‖X(τ) − e^{τA}e^{K M†}‖` on the Galerkin space of `prop`.
pub fn averaging_deviation(prop: &Propagator, pulse: &TransitionPulse) -> f64 {
    let actual = prop.schedule_matrix(&pulse.schedule);
    let ideal = pulse.ideal_propagator(prop.pair());
    linalg::operator_norm(&(actual - ideal))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Propagator;
    use crate::model::QuantumState;
    use crate::rng::Rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn apply(m: &Matrix2<C64>, a: C64, b: C64) -> (C64, C64) {
        (m[(0, 0)] * a + m[(0, 1)] * b, m[(1, 0)] * a + m[(1, 1)] * b)
    }

    #[test]
    fn rotation_examples() {
        let t = rotation_parameters(c(1.0, 0.0), c(0.0, 0.0)).unwrap();
        assert_eq!(t.theta, 0.0);
        assert_abs_diff_eq!(t.k, 4.0, epsilon = 1e-15);
        let t = rotation_parameters(c(0.0, 0.0), c(1.0, 0.0)).unwrap();
        assert_abs_diff_eq!(t.theta, FRAC_PI_2, epsilon = 1e-15);
        assert_abs_diff_eq!(t.k, 0.0, epsilon = 1e-15);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let t = rotation_parameters(c(h, 0.0), c(h, 0.0)).unwrap();
        assert_abs_diff_eq!(t.theta, PI / 4.0, epsilon = 1e-15);
        assert_abs_diff_eq!(t.k, 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(t.phi, PI, epsilon = 1e-15);
        let (first, _) = apply(&effective_rotation(t.k, t.phi, c(0.5, 0.0)), c(h, 0.0), c(h, 0.0));
        assert!(first.norm() < 1e-12);
        assert!(rotation_parameters(c(0.0, 0.0), c(0.0, 0.0)).is_err());
        assert!(rotation_parameters(c(1.0, 0.0), c(1.0, 0.0)).is_err());
    }

    #[test]
    fn effective_rotation_examples() {
        let id = effective_rotation(0.0, 1.3, c(0.0, -0.5));
        assert_eq!(id, Matrix2::identity());
        let full = effective_rotation(4.0, 0.0, c(0.0, -0.5));
        assert!(full[(0, 0)].norm() < 1e-15);
    }

    #[test]
    fn c_constant_empty_and_closed_form() {
        let spec = ModelSpec::toy(3.0);
        assert_eq!(compute_c(&spec, 2, 1, 2).unwrap(), 0.0);
        // Λ = {(2,3), (3,2)} at truncation 3.
        let omega = 63.0;
        let gap = 729.0 - 64.0;
        let expected = leakage_ratio_sup(omega, gap).max(leakage_ratio_sup(omega, -gap));
        assert_abs_diff_eq!(compute_c(&spec, 3, 1, 2).unwrap(), expected, epsilon = 1e-15);
    }

    /// Composite Gauss–Legendre quadrature of `∫_0^T ω cos(ωt+φ) e^{iω't} dt`.
    fn quadrature(omega: f64, omega_prime: f64, phase: f64) -> C64 {
        let nodes = [
            (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
            (-0.538_469_310_105_683, 0.478_628_670_499_366_5),
            (0.0, 0.568_888_888_888_888_9),
            (0.538_469_310_105_683, 0.478_628_670_499_366_5),
            (0.906_179_845_938_664, 0.236_926_885_056_189_1),
        ];
        let period = TAU / omega;
        let panels = 4000;
        let h = period / panels as f64;
        let mut acc = c(0.0, 0.0);
        for p in 0..panels {
            let mid = (p as f64 + 0.5) * h;
            for (x, w) in nodes {
                let t = mid + x * h / 2.0;
                acc += C64::from_polar(w * h / 2.0 * omega * (omega * t + phase).cos(), omega_prime * t);
            }
        }
        acc
    }

    #[test]
    fn leakage_ratio_matches_quadrature() {
        for (omega, omega_prime, phase) in [(63.0, 665.0, 0.3), (63.0, -665.0, 2.0), (5.0, 7.5, -1.0), (3.0, -1.2, 0.0)] {
            let integral = quadrature(omega, omega_prime, phase);
            let ratio = integral.norm() / (PI * omega_prime.abs() / omega).sin().abs();
            let closed = leakage_ratio(omega, omega_prime, phase);
            assert!((ratio - closed).abs() < 1e-8 * closed, "{ratio} vs {closed}");
            assert!(closed <= leakage_ratio_sup(omega, omega_prime) + 1e-12);
        }
    }

    #[test]
    fn commensurate_gaps_are_degenerate() {
        // Gaps 1 and 2 around level 2: (2,3) resonates at twice the (1,2) gap.
        let b = |j: usize, k: usize| if j.abs_diff(k) == 1 { c(0.0, -0.5) } else { c(0.0, 0.0) };
        let table = (1..=3).map(|j| (1..=3).map(|k| b(j, k)).collect()).collect();
        let spec = ModelSpec::explicit(1.0, vec![0.0, 1.0, 3.0], table).unwrap();
        assert!(matches!(compute_c(&spec, 3, 1, 2), Err(Error::DegenerateTransition { .. })));
        assert!(matches!(
            compute_c(&ModelSpec::toy(3.0), 4, 1, 3),
            Err(Error::DegenerateTransition { .. })
        ));
    }

    #[test]
    fn abs_cos_integral_examples() {
        assert_abs_diff_eq!(abs_cos_integral(0.0, TAU), 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(abs_cos_integral(0.3, 0.3 + TAU), 4.0, epsilon = 1e-14);
        assert_abs_diff_eq!(abs_cos_integral(0.0, FRAC_PI_2), 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(
            abs_cos_integral(-1.0, 2.0),
            1.0f64.sin() + 1.0 + (1.0 - 2.0f64.sin()),
            epsilon = 1e-14
        );
    }

    #[test]
    fn empty_pulse_for_settled_pair() {
        let p = synthesize_transition(&ModelSpec::toy(3.0), 4, 1, 2, (c(0.0, 0.0), c(1.0, 0.0)), 0.05).unwrap();
        assert_eq!(p.k_target, 0.0);
        assert_eq!(p.duration, 0.0);
        assert!(p.schedule.is_empty());
    }

    #[test]
    fn full_transfer_pulse() {
        let spec = ModelSpec::toy(3.0);
        let p = synthesize_transition(&spec, 6, 1, 2, (c(1.0, 0.0), c(0.0, 0.0)), 0.05).unwrap();
        assert_abs_diff_eq!(p.k_target, 4.0, epsilon = 1e-12);
        assert!((p.k_continuous - p.k_target).abs() < 1e-3);
        let prop = Propagator::for_model(&spec, 6).unwrap();
        let out = prop.propagate(&p.schedule, &QuantumState::basis(1).unwrap()).unwrap().final_state;
        let pop = out.coefficient(2).norm_sqr();
        assert!(pop >= 1.0 - p.certified_error.powi(2), "population {pop}");
        assert!(averaging_deviation(&prop, &p) <= p.certified_error);
    }

    #[test]
    fn downward_transfer_uses_conjugate_phase() {
        // Moving population from level 3 down to level 2 with complex phases.
        let spec = ModelSpec::toy(3.0);
        let x3 = C64::from_polar(0.8, 1.1);
        let x2 = C64::from_polar(0.6, -2.4);
        let p = synthesize_transition(&spec, 7, 3, 2, (x3, x2), 0.02).unwrap();
        let prop = Propagator::for_model(&spec, 7).unwrap();
        let psi = QuantumState::new(2, vec![x2, x3]).unwrap();
        let out = prop.propagate(&p.schedule, &psi).unwrap().final_state;
        assert!(out.coefficient(2).norm() > 1.0 - p.certified_error, "{}", out.coefficient(2).norm());
    }

    #[test]
    fn deviation_scales_like_inverse_divisor() {
        let spec = ModelSpec::toy(3.0);
        let pair = spec.galerkin(4).unwrap();
        let prop = Propagator::new(pair.clone());
        let mut last = None;
        for n in [8.0, 16.0, 32.0] {
            let p = synthesize_with(&pair, 1, 2, (c(1.0, 0.0), c(0.0, 0.0)), Divisor::Fixed(n), &PulseOptions::default()).unwrap();
            let dev = averaging_deviation(&prop, &p);
            assert!(dev <= p.bound, "n={n}: {dev} > {}", p.bound);
            if let Some(prev) = last {
                let ratio: f64 = prev / dev;
                assert!((1.6..=2.4).contains(&ratio), "ratio {ratio}");
            }
            last = Some(dev);
        }
    }

    #[test]
    fn pulse_budget_is_enforced() {
        let pair = ModelSpec::toy(3.0).galerkin(4).unwrap();
        let opts = PulseOptions {
            max_duration: 1e-3,
            ..PulseOptions::default()
        };
        let err = synthesize_with(&pair, 1, 2, (c(1.0, 0.0), c(0.0, 0.0)), Divisor::Budget(1e-3), &opts).unwrap_err();
        assert!(matches!(err, Error::BudgetExceeded { .. }));
    }

    proptest! {
        #[test]
        fn rotation_is_unitary(k in -10.0f64..10.0, phi in -7.0f64..7.0, re in -2.0f64..2.0, im in -2.0f64..2.0) {
            let m = effective_rotation(k, phi, c(re, im));
            let g = m.adjoint() * m;
            prop_assert!((g - Matrix2::identity()).norm() < 1e-14);
            prop_assert!((m.determinant().norm() - 1.0).abs() < 1e-14);
        }

        #[test]
        fn rotation_annihilates_first_coordinate(seed in 0u64..100_000) {
            let mut rng = Rng::new(seed);
            let (a, b) = (rng.complex_normal(), rng.complex_normal());
            let norm = (a.norm_sqr() + b.norm_sqr()).sqrt();
            let (a, b) = (a / norm, b / norm);
            let t = rotation_parameters(a, b).unwrap();
            prop_assert!((0.0..=4.0).contains(&t.k));
            let (first, _) = apply(&effective_rotation(t.k, t.phi, c(0.5, 0.0)), a, b);
            prop_assert!(first.norm() <= 1e-10);
            let b12 = c(0.0, -0.5);
            let (k2, phi2) = t.for_coupling(b12).unwrap();
            let (first, _) = apply(&effective_rotation(k2, phi2, b12), a, b);
            prop_assert!(first.norm() <= 1e-10);
        }
    }
}
