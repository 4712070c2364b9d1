//! Window steering by ladder climbing.
//!
//! A state supported on levels `N₀..=P` is concentrated on `φ_{N₀}` by one
//! resonant pulse per rung, moving the population of level `N+1` down to
//! level `N` for `N = P−1, ..., N₀`. Steering `ψ₀` to `ψ₁` concentrates
//! `ψ₀`, drifts freely to match phases, then runs the time reverse of the
//! control concentrating `conj(ψ₁)`: since `A + uB = iH(u)` with `H(u)` real
//! in the sine basis, the reversed control carries `conj(e^{iϑ}φ_{N₀})` back
//! to `ψ₁`.

use std::f64::consts::{PI, TAU};

use serde::Serialize;

use crate::engine::{ControlSchedule, Propagator};
use crate::model::{ModelSpec, QuantumState};
use crate::pulse::{self, Divisor, PulseOptions};
use crate::{Error, Result};

/// The explicit steering-time bound for the torus model.
pub fn time_bound(alpha: f64, eps: f64, n0: usize) -> Result<f64> {
    if !(alpha > 2.5) {
        return Err(Error::domain(format!(
            "the time bound needs alpha > 5/2 (got {alpha}); it diverges otherwise"
        )));
    }
    if !(eps > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    if n0 < 2 {
        return Err(Error::domain("N0 must be at least 2"));
    }
    let n0f = n0 as f64;
    Ok(604.0 / (alpha * alpha * eps * (2.0 * alpha - 5.0)) * (n0f - 1.0).powf(-(2.0 * alpha - 4.0)) + TAU / n0f.powf(2.0 * alpha))
}

/// Per-rung error budget `η_N = N₀ ε / (4N²)`.
pub fn rung_budget(n0: usize, eps: f64, level: usize) -> f64 {
    n0 as f64 * eps / (4.0 * (level * level) as f64)
}

/// Default synthesis truncation `P + ⌈P/2⌉ + 2` for a window topped at `P`.
pub fn default_truncation(p: usize) -> usize {
    p + p.div_ceil(2) + 2
}

#[derive(Clone, Copy, Debug, Default)]
pub struct LadderOptions {
    /// Synthesis truncation; [`default_truncation`] when unset.
    pub truncation: Option<usize>,
    /// Verification truncation for [`steer_in_window`]; `⌈1.5·N₁⌉` when
    /// unset, no verification when `Some(0)`.
    pub verify_truncation: Option<usize>,
    pub pulse: PulseOptions,
}

/// One rung of the ladder: the pulse emptying level `level + 1` into `level`.
#[derive(Clone, Debug, Serialize)]
pub struct PlanStep {
    pub level: usize,
    pub theta: f64,
    pub phi: f64,
    pub k: f64,
    pub c: f64,
    pub eta: f64,
    pub n: f64,
    pub tau: f64,
    pub certified_error: f64,
    /// Norm of the part of the state outside levels `N₀..=level` after the pulse.
    pub leaked: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PulsePlan {
    pub n0: usize,
    pub p: usize,
    pub steps: Vec<PlanStep>,
}

impl PulsePlan {
    pub fn total_tau(&self) -> f64 {
        self.steps.iter().map(|s| s.tau).sum()
    }

    pub fn total_certified(&self) -> f64 {
        self.steps.iter().map(|s| s.certified_error).sum()
    }
}

/// Result of [`concentrate`].
#[derive(Clone, Debug, Serialize)]
pub struct Concentration {
    #[serde(skip)]
    pub schedule: ControlSchedule,
    /// Phase `ϑ₀` of the `φ_{N₀}` coefficient at the end.
    pub theta0: f64,
    pub plan: PulsePlan,
    #[serde(skip)]
    pub final_state: QuantumState,
    /// `|⟨φ_{N₀}, ψ⟩|²` at the end.
    pub population: f64,
    /// `‖ψ − e^{iϑ₀}φ_{N₀}‖` at the end.
    pub measured_error: f64,
    pub certified_error: f64,
    /// Whether the measured error stays within the summed certificates.
    pub within_budget: bool,
    pub truncation: usize,
}

fn window_bounds(psi: &QuantumState, n0: usize, what: &str) -> Result<usize> {
    psi.require_normalized(what)?;
    let lo = psi.lowest_level().unwrap_or(n0);
    if lo < n0 {
        return Err(Error::domain(format!(
            "{what} has weight on level {lo}, below the window start {n0}"
        )));
    }
    Ok(psi.highest_level().unwrap_or(n0).max(n0))
}

/// Moves the population of `psi0` (levels `n0..=P`) onto `φ_{n0}`.
///
/// Each rung's phase is read from the simulated state, not from the plan.
pub fn concentrate(spec: &ModelSpec, psi0: &QuantumState, n0: usize, eps: f64, opts: &LadderOptions) -> Result<Concentration> {
    if n0 < 1 {
        return Err(Error::domain("window start must be at least 1"));
    }
    if !(eps > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    let p = window_bounds(psi0, n0, "initial state")?;
    let truncation = opts.truncation.unwrap_or_else(|| default_truncation(p));
    if truncation <= p {
        return Err(Error::domain(format!("truncation {truncation} must exceed the window top {p}")));
    }
    let prop = Propagator::for_model(spec, truncation)?;
    concentrate_with(&prop, psi0, n0, p, eps, opts)
}

fn concentrate_with(prop: &Propagator, psi0: &QuantumState, n0: usize, p: usize, eps: f64, opts: &LadderOptions) -> Result<Concentration> {
    let truncation = prop.n();
    let mut state = QuantumState::from_dvector(&psi0.to_dense(truncation)?);
    let mut schedule = ControlSchedule::new(format!("concentrate onto level {n0}"));
    let mut steps = Vec::new();
    for level in (n0..p).rev() {
        let eta = rung_budget(n0, eps, level);
        let upper = state.coefficient(level + 1);
        let lower = state.coefficient(level);
        let pulse = pulse::synthesize_with(prop.pair(), level + 1, level, (upper, lower), Divisor::Budget(eta), &opts.pulse)
            .map_err(|e| e.in_stage(format!("rung {level}")))?;
        state = prop.propagate(&pulse.schedule, &state)?.final_state;
        let leaked = (state.mass_in(level + 1, truncation).powi(2) + state.mass_in(1, n0 - 1).powi(2)).sqrt();
        steps.push(PlanStep {
            level,
            theta: pulse.theta,
            phi: pulse.phi,
            k: pulse.k_target,
            c: pulse.c,
            eta,
            n: pulse.n,
            tau: pulse.duration,
            certified_error: pulse.certified_error,
            leaked,
        });
        schedule.append(&pulse.schedule);
    }
    let x = state.coefficient(n0);
    let theta0 = if x.norm() > 0.0 { x.arg() } else { 0.0 };
    let measured_error = (2.0 - 2.0 * x.norm()).max(0.0).sqrt();
    let plan = PulsePlan { n0, p, steps };
    let certified_error = plan.total_certified();
    Ok(Concentration {
        schedule,
        theta0,
        population: x.norm_sqr(),
        measured_error,
        within_budget: measured_error <= certified_error + 1e-9,
        certified_error,
        plan,
        final_state: state,
        truncation,
    })
}

/// Free drift advancing the phase of the `φ_{N₀}` coefficient from `theta0`
/// to `theta1` (modulo 2π).
pub fn phase_align(theta0: f64, theta1: f64, lambda_n0: f64) -> Result<ControlSchedule> {
    if !(lambda_n0 > 0.0) {
        return Err(Error::domain("phase alignment needs a positive eigenvalue"));
    }
    let mut delta = (theta1 - theta0).rem_euclid(TAU);
    if delta >= TAU {
        delta = 0.0;
    }
    let mut s = ControlSchedule::new("phase alignment");
    s.push(0.0, delta / lambda_n0)?;
    Ok(s)
}

/// Segments in reverse order with unchanged amplitudes.
pub fn reverse_schedule(sched: &ControlSchedule) -> ControlSchedule {
    sched.reversed()
}

#[derive(Clone, Debug, Serialize)]
pub struct StageLog {
    pub name: String,
    pub duration: f64,
    pub l1_norm: f64,
    pub eta: Option<f64>,
    pub certified_error: Option<f64>,
    pub measured_error: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SteeringReport {
    /// `|⟨ψ₁, ψ_final⟩|` at the verification truncation.
    pub fidelity: f64,
    /// `‖ψ_final − ψ₁‖` at the verification truncation.
    pub distance: f64,
    /// Fidelity at the synthesis truncation.
    pub synthesis_fidelity: f64,
    pub total_time: f64,
    /// Explicit time bound, when `α > 5/2`.
    pub bound_time: Option<f64>,
    pub stages: Vec<StageLog>,
    pub n0: usize,
    pub p: usize,
    pub truncation: usize,
    pub verification_truncation: Option<usize>,
    pub plans: Vec<PulsePlan>,
}

/// Steers `psi0` close to `psi1`, both supported on levels `n0..=P`.
pub fn steer_in_window(
    spec: &ModelSpec,
    psi0: &QuantumState,
    psi1: &QuantumState,
    n0: usize,
    eps: f64,
    opts: &LadderOptions,
) -> Result<(ControlSchedule, SteeringReport)> {
    if !(eps > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    let p = window_bounds(psi0, n0, "initial state")?.max(window_bounds(psi1, n0, "target state")?);
    let truncation = opts.truncation.unwrap_or_else(|| default_truncation(p));
    if truncation <= p {
        return Err(Error::domain(format!("truncation {truncation} must exceed the window top {p}")));
    }
    let prop = Propagator::for_model(spec, truncation)?;
    let target_conj = psi1.conj();
    let (first, second) = rayon::join(
        || concentrate_with(&prop, psi0, n0, p, eps / 2.0, opts),
        || concentrate_with(&prop, &target_conj, n0, p, eps / 2.0, opts),
    );
    let first = first.map_err(|e| e.in_stage("concentrate initial state"))?;
    let second = second.map_err(|e| e.in_stage("concentrate conjugated target"))?;

    // The reversed control maps conj(e^{iϑ'}φ_{N₀}) = e^{-iϑ'}φ_{N₀} to ψ₁.
    let theta1 = -second.theta0;
    let lambda = spec.eigenvalue(n0)?;
    let align = phase_align(first.theta0, theta1, lambda)?;
    let back = reverse_schedule(&second.schedule);

    let mut schedule = ControlSchedule::new(format!("steer within window {n0}..={p}"));
    schedule.append(&first.schedule);
    if align.duration() > 0.0 {
        schedule.append(&align);
    }
    schedule.append(&back);

    let synth = prop.propagate(&schedule, psi0)?.final_state;
    let synthesis_fidelity = psi1.inner(&synth).norm();
    let verify = match opts.verify_truncation {
        Some(0) => None,
        Some(n) => Some(n),
        None => Some((truncation * 3).div_ceil(2)),
    };
    let (fidelity, distance) = match verify {
        Some(nv) => {
            let out = Propagator::for_model(spec, nv)?.propagate(&schedule, psi0)?.final_state;
            (psi1.inner(&out).norm(), out.distance(psi1))
        }
        None => (synthesis_fidelity, synth.distance(psi1)),
    };

    let stages = vec![
        StageLog {
            name: "concentrate".into(),
            duration: first.schedule.duration(),
            l1_norm: first.schedule.l1_norm(),
            eta: Some(first.plan.steps.iter().map(|s| s.eta).sum()),
            certified_error: Some(first.certified_error),
            measured_error: Some(first.measured_error),
        },
        StageLog {
            name: "phase alignment".into(),
            duration: align.duration(),
            l1_norm: 0.0,
            eta: None,
            certified_error: None,
            measured_error: None,
        },
        StageLog {
            name: "reverse concentrate".into(),
            duration: back.duration(),
            l1_norm: back.l1_norm(),
            eta: Some(second.plan.steps.iter().map(|s| s.eta).sum()),
            certified_error: Some(second.certified_error),
            measured_error: Some(second.measured_error),
        },
    ];
    let bound_time = if n0 >= 2 { time_bound(spec.alpha, eps, n0).ok() } else { None };
    let report = SteeringReport {
        fidelity,
        distance,
        synthesis_fidelity,
        total_time: schedule.duration(),
        bound_time,
        stages,
        n0,
        p,
        truncation,
        verification_truncation: verify,
        plans: vec![first.plan, second.plan],
    };
    Ok((schedule, report))
}

/// Upper estimate of the time [`concentrate`] needs on levels `n0..=p`:
/// every rung is charged the full transfer `K = 4`, the phase-maximized
/// leakage constant and one extra period for the partial last step.
pub fn concentrate_time_estimate(spec: &ModelSpec, n0: usize, p: usize, eps: f64, truncation: usize) -> Result<f64> {
    let pair = spec.galerkin(truncation)?;
    let b_norm = pair.b_norm();
    let mut total = 0.0;
    for level in n0..p {
        let c = pulse::compute_c_for(&pair, level + 1, level, None)?;
        let eta = rung_budget(n0, eps, level);
        let n = (pulse::PERIOD_L1 * (1.0 + 8.0 * b_norm) * (c + 1.0) * b_norm / eta).max(1.0);
        let omega = (pair.lambda(level + 1) - pair.lambda(level)).abs();
        total += PI * 4.0 * n / (2.0 * omega) + TAU / omega;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::C64;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn time_bound_examples() {
        // 604/(9·0.1·1)/81 + 2π·10⁻⁶
        let expected = 604.0 / 0.9 / 81.0 + TAU * 1e-6;
        assert_abs_diff_eq!(time_bound(3.0, 0.1, 10).unwrap(), expected, epsilon = 1e-12);
        assert_abs_diff_eq!(time_bound(3.0, 0.1, 10).unwrap(), 8.2856, epsilon = 5e-4);
        let b = time_bound(2.6, 0.1, 100).unwrap();
        assert!(b.is_finite() && b > 0.0);
        assert!(time_bound(2.5, 0.1, 10).is_err());
        assert!(time_bound(2.0, 0.1, 10).is_err());
        let mut last = f64::INFINITY;
        for n0 in 3..60 {
            let b = time_bound(3.0, 0.1, n0).unwrap();
            assert!(b < last);
            last = b;
        }
    }

    #[test]
    fn phase_align_examples() {
        let s = phase_align(0.4, 0.4, 64.0).unwrap();
        assert_eq!(s.duration(), 0.0);
        let s = phase_align(0.0, PI, 64.0).unwrap();
        assert_abs_diff_eq!(s.duration(), PI / 64.0, epsilon = 1e-16);
        for (a, b) in [(3.0, -3.0), (-1.0, 5.0), (0.0, -1e-17)] {
            assert!(phase_align(a, b, 10.0).unwrap().duration() < TAU / 10.0);
        }
    }

    #[test]
    fn drift_advances_phase_exactly() {
        let spec = ModelSpec::toy(3.0);
        let prop = Propagator::for_model(&spec, 4).unwrap();
        let psi = QuantumState::basis(2).unwrap();
        let s = phase_align(0.0, 2.0, 64.0).unwrap();
        let out = prop.propagate(&s, &psi).unwrap().final_state;
        assert_abs_diff_eq!(out.coefficient(2).arg(), 2.0, epsilon = 1e-14);
    }

    #[test]
    fn concentrated_state_needs_nothing() {
        let spec = ModelSpec::toy(3.0);
        let r = concentrate(&spec, &QuantumState::basis(3).unwrap(), 3, 0.1, &LadderOptions::default()).unwrap();
        assert!(r.schedule.is_empty());
        assert_eq!(r.theta0, 0.0);
    }

    #[test]
    fn single_rung_transfer() {
        let spec = ModelSpec::toy(3.0);
        let opts = LadderOptions {
            truncation: Some(5),
            ..LadderOptions::default()
        };
        let r = concentrate(&spec, &QuantumState::basis(3).unwrap(), 2, 0.1, &opts).unwrap();
        assert_eq!(r.plan.steps.len(), 1);
        assert_abs_diff_eq!(r.plan.steps[0].k, 4.0, epsilon = 1e-12);
        assert!(r.population >= 0.9, "{}", r.population);
        assert!(r.within_budget);
    }

    #[test]
    fn three_level_concentration() {
        let spec = ModelSpec::toy(3.0);
        let s = 1.0 / 3f64.sqrt();
        let psi = QuantumState::new(2, vec![c(s, 0.0), c(s, 0.0), c(s, 0.0)]).unwrap();
        let r = concentrate(&spec, &psi, 2, 0.1, &LadderOptions::default()).unwrap();
        // The top rung sees (x_4, x_3) = (s, s).
        assert_abs_diff_eq!(r.plan.steps[0].theta, (1.0f64).atan(), epsilon = 1e-12);
        assert!(r.population.sqrt() >= 0.95);
        for w in r.plan.steps.windows(2) {
            assert!(w[1].level + 1 == w[0].level);
        }
    }

    #[test]
    fn reversal_undoes_forward_steering() {
        // A forward run takes φ₂ to ψ; the reversed control takes conj(ψ) back.
        let spec = ModelSpec::toy(3.0);
        let prop = Propagator::for_model(&spec, 8).unwrap();
        let pulse_a = pulse::synthesize_with(
            prop.pair(),
            2,
            3,
            (c(0.8, 0.0), c(0.0, 0.6)),
            Divisor::Fixed(6.0),
            &PulseOptions::default(),
        )
        .unwrap();
        let pulse_b = pulse::synthesize_with(
            prop.pair(),
            3,
            4,
            (c(0.3, 0.4), c(0.0, 0.5)),
            Divisor::Fixed(9.0),
            &PulseOptions::default(),
        )
        .unwrap();
        let forward = ControlSchedule::concat("fwd", &[&pulse_a.schedule, &pulse_b.schedule]);
        let start = QuantumState::basis(2).unwrap();
        let psi = prop.propagate(&forward, &start).unwrap().final_state;
        let back = prop.propagate(&reverse_schedule(&forward), &psi.conj()).unwrap().final_state;
        assert!(start.inner(&back).norm() >= 1.0 - 1e-9);
    }

    #[test]
    fn identical_endpoints_need_no_control() {
        let spec = ModelSpec::toy(3.0);
        let phi = QuantumState::basis(2).unwrap();
        let (s, r) = steer_in_window(&spec, &phi, &phi, 2, 0.1, &LadderOptions::default()).unwrap();
        assert!(s.is_empty());
        assert_abs_diff_eq!(r.fidelity, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn steer_between_neighbours() {
        let spec = ModelSpec::toy(3.0);
        let opts = LadderOptions {
            truncation: Some(6),
            verify_truncation: Some(9),
            ..LadderOptions::default()
        };
        let (s, r) = steer_in_window(
            &spec,
            &QuantumState::basis(3).unwrap(),
            &QuantumState::basis(2).unwrap(),
            2,
            0.1,
            &opts,
        )
        .unwrap();
        assert!(r.fidelity >= 0.9, "{}", r.fidelity);
        let stage_sum = r
            .stages
            .iter()
            .map(|s| crate::exact::ExactDuration::from_f64(s.duration).unwrap())
            .sum::<crate::exact::ExactDuration>();
        assert!((stage_sum.to_f64() - s.duration()).abs() <= 1e-15 * s.duration());
        assert!(r.bound_time.is_some());
    }

    #[test]
    fn random_window_pair() {
        let spec = ModelSpec::toy(3.0);
        let mut rng = Rng::new(5);
        let a = rng.unit_state(2, 4).unwrap();
        let b = rng.unit_state(2, 4).unwrap();
        let (_, r) = steer_in_window(&spec, &a, &b, 2, 0.1, &LadderOptions::default()).unwrap();
        assert!(r.fidelity >= 0.9, "{}", r.fidelity);
    }

    #[test]
    fn state_below_window_is_rejected() {
        let spec = ModelSpec::toy(3.0);
        let r = concentrate(&spec, &QuantumState::basis(1).unwrap(), 2, 0.1, &LadderOptions::default());
        assert!(matches!(r, Err(Error::Domain(_))));
    }
}
