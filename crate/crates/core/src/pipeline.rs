//! Small-time steering on the torus model: an impulsive kick disperses the
//! start state into a window of levels, the ladder steers within the window,
//! and a reversed kick gathers the state onto the target.
//!
//! Budget split: half of `T` goes to window steering and one eighth to each
//! impulse, the rest is slack. The tolerance `ε` is split four ways: `ε/4`
//! for each dispersal, `ε/4` for the ladder and `ε/4` for verification.

use std::f64::consts::TAU;

use rayon::prelude::*;
use serde::Serialize;

use crate::disperse::{self, DispersalResult};
use crate::engine::{ControlSchedule, Propagator};
use crate::exact::ExactDuration;
use crate::ladder::{self, LadderOptions, SteeringReport};
use crate::model::{ModelSpec, QuantumState};
use crate::{Error, Result};

pub const BUDGET_NOTE: &str =
    "time: T/2 window steering, T/8 per impulse, T/4 slack; tolerance: eps/4 per dispersal, eps/4 ladder, eps/4 verification";

#[derive(Clone, Copy, Debug)]
pub struct PipelineOptions {
    /// `K_max = k_max_factor · N₀` for the dispersal scans.
    pub k_max_factor: f64,
    pub scan_grid: usize,
    /// Largest synthesis truncation attempted; larger needs mark the plan infeasible.
    pub max_truncation: usize,
    /// Shortest impulse duration tried.
    pub impulse_floor: f64,
    pub ladder: LadderOptions,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            k_max_factor: 12.0,
            scan_grid: disperse::DEFAULT_SCAN_GRID,
            max_truncation: 320,
            impulse_floor: 1e-15,
            ladder: LadderOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ImpulseStage {
    pub k: f64,
    pub eta: f64,
    /// `‖impulse·ξ − e^{KB}ξ‖` on the dispersed endpoint.
    pub gap: f64,
    pub low_mass: f64,
    pub tail_mass: f64,
    pub tail_cut: usize,
    /// Norm dropped when the window state is cut to `N₀..=P`.
    pub window_drop: f64,
    #[serde(skip)]
    pub schedule: ControlSchedule,
}

#[derive(Clone, Debug, Serialize)]
pub struct SmallTimePlan {
    pub feasible: bool,
    /// Why the plan is infeasible, naming the limiting stage.
    pub diagnosis: Option<String>,
    pub limiting_stage: Option<String>,
    pub eps: f64,
    pub budget: f64,
    pub n0: usize,
    pub p: usize,
    /// Explicit time bound at `(α, ε/4, N₀)`.
    pub predicted_bound: Option<f64>,
    pub dispersal_in: Option<ImpulseStage>,
    pub window: Option<SteeringReport>,
    pub dispersal_out: Option<ImpulseStage>,
    pub total_time: f64,
    /// Exact rational total of the serialized segment durations.
    pub total_exact: String,
    pub synthesis_truncation: usize,
    pub budget_note: &'static str,
    #[serde(skip)]
    pub schedule: ControlSchedule,
}

impl SmallTimePlan {
    fn empty(eps: f64, budget: f64) -> Self {
        SmallTimePlan {
            feasible: true,
            diagnosis: None,
            limiting_stage: None,
            eps,
            budget,
            n0: 0,
            p: 0,
            predicted_bound: None,
            dispersal_in: None,
            window: None,
            dispersal_out: None,
            total_time: 0.0,
            total_exact: "0".into(),
            synthesis_truncation: 0,
            budget_note: BUDGET_NOTE,
            schedule: ControlSchedule::new("small-time steering"),
        }
    }

    fn infeasible(mut self, stage: &str, why: String) -> Self {
        self.feasible = false;
        self.limiting_stage = Some(stage.into());
        self.diagnosis = Some(why);
        self
    }
}

/// Smallest `N₀ ≥ 2` whose time bound at tolerance `eps` fits in `allowance`.
pub fn window_start(alpha: f64, eps: f64, allowance: f64, cap: usize) -> Result<Option<usize>> {
    for n0 in 2..=cap {
        if ladder::time_bound(alpha, eps, n0)? < allowance {
            return Ok(Some(n0));
        }
    }
    Ok(None)
}

struct Dispersals {
    d0: DispersalResult,
    d1: DispersalResult,
    p: usize,
    estimate: f64,
}

fn disperse_both(
    spec: &ModelSpec,
    psi0: &QuantumState,
    psi1: &QuantumState,
    n0: usize,
    eps: f64,
    opts: &PipelineOptions,
) -> Result<Dispersals> {
    let k_max = opts.k_max_factor * n0 as f64;
    let (d0, d1) = rayon::join(
        || disperse::find_dispersal(spec, psi0, n0, eps / 4.0, k_max, opts.scan_grid),
        || disperse::find_dispersal(spec, psi1, n0, eps / 4.0, k_max, opts.scan_grid),
    );
    let d0 = d0.map_err(|e| e.in_stage("dispersal of the initial state"))?;
    let d1 = d1.map_err(|e| e.in_stage("dispersal of the target state"))?;
    let p = d0.tail_cut.max(d1.tail_cut).max(n0 + 1);
    let lambda = spec.eigenvalue(n0)?;
    let estimate = 2.0 * ladder::concentrate_time_estimate(spec, n0, p, eps / 8.0, ladder::default_truncation(p))? + TAU / lambda;
    Ok(Dispersals { d0, d1, p, estimate })
}

/// Halves the impulse duration until the kick matches `e^{KB}` within `tol`.
fn choose_impulse(
    prop: &Propagator,
    spec: &ModelSpec,
    xi: &QuantumState,
    k: f64,
    tol: f64,
    start: f64,
    floor: f64,
) -> Result<(f64, f64, ControlSchedule, QuantumState)> {
    let exact = disperse::apply_exp_kb(spec, xi, k, prop.n())?;
    let mut eta = start;
    loop {
        let s = disperse::impulsive_schedule(k, eta)?;
        let out = prop.propagate(&s, xi)?.final_state;
        let gap = out.distance(&exact);
        if gap < tol {
            return Ok((eta, gap, s, out));
        }
        if eta / 2.0 < floor {
            return Err(Error::BudgetExceeded {
                stage: format!("impulse K = {k} (gap {gap:e} at duration {eta:e})"),
                duration: eta / 2.0,
                budget: floor,
            });
        }
        eta /= 2.0;
    }
}

fn window_cut(psi: &QuantumState, n0: usize, p: usize) -> Result<(QuantumState, f64)> {
    let coeffs = (n0..=p).map(|l| psi.coefficient(l)).collect::<Vec<_>>();
    let kept = QuantumState::new(n0, coeffs)?;
    let drop = (psi.norm_sqr() - kept.norm_sqr()).max(0.0).sqrt();
    Ok((kept.normalized()?, drop))
}

/// Builds a schedule steering `psi0` to within `eps` of `psi1` in time below `budget`.
pub fn plan_small_time(
    spec: &ModelSpec,
    psi0: &QuantumState,
    psi1: &QuantumState,
    eps: f64,
    budget: f64,
    opts: &PipelineOptions,
) -> Result<SmallTimePlan> {
    if !spec.is_toy() {
        return Err(Error::domain("small-time steering is built for the torus model only"));
    }
    if !(spec.alpha > 2.5) {
        return Err(Error::domain(format!(
            "small-time steering needs alpha > 5/2 (got {}); the construction is unavailable",
            spec.alpha
        )));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::domain("tolerance must lie in (0, 1)"));
    }
    if !(budget > 0.0) || !budget.is_finite() {
        return Err(Error::domain("time budget must be positive and finite"));
    }
    psi0.require_normalized("initial state")?;
    psi1.require_normalized("target state")?;

    let mut plan = SmallTimePlan::empty(eps, budget);
    if psi0.distance(psi1) < eps / 2.0 {
        return Ok(plan);
    }

    let cap = opts.max_truncation;
    let Some(start) = window_start(spec.alpha, eps / 4.0, budget / 2.0, cap)? else {
        return Ok(plan.infeasible("window steering", format!("no window start up to {cap} meets the time bound")));
    };

    // The explicit bound only seeds N₀; raise it until the ladder's own
    // time estimate fits the window allowance.
    let mut n0 = start;
    let found = loop {
        let d = disperse_both(spec, psi0, psi1, n0, eps, opts)?;
        let needed = [ladder::default_truncation(d.p), d.d0.truncation, d.d1.truncation]
            .into_iter()
            .max()
            .unwrap_or(0);
        if needed > cap {
            plan.n0 = n0;
            plan.p = d.p;
            return Ok(plan.infeasible(
                "dispersal",
                format!("window {n0}..={} needs truncation {needed} above the cap {cap}", d.p),
            ));
        }
        if d.estimate < budget / 2.0 {
            break d;
        }
        n0 += 1;
    };
    let Dispersals { d0, d1, p, .. } = found;
    plan.n0 = n0;
    plan.p = p;
    plan.predicted_bound = ladder::time_bound(spec.alpha, eps / 4.0, n0).ok();

    let top0 = psi0.highest_level().unwrap_or(1);
    let top1 = psi1.highest_level().unwrap_or(1);
    let n_sync = [
        ladder::default_truncation(p),
        disperse::dispersal_truncation(top0.max(p), d0.k),
        disperse::dispersal_truncation(top1.max(p), d1.k),
    ]
    .into_iter()
    .max()
    .unwrap_or(0)
    .min(cap.max(ladder::default_truncation(p)));
    plan.synthesis_truncation = n_sync;
    let prop = Propagator::for_model(spec, n_sync)?;

    // Kick in: χ₀ is the simulated image of ψ₀.
    let mut stage_in = None;
    let chi0 = if d0.k == 0.0 {
        psi0.clone()
    } else {
        match choose_impulse(&prop, spec, psi0, d0.k, eps / 8.0, budget / 8.0, opts.impulse_floor) {
            Ok((eta, gap, schedule, out)) => {
                stage_in = Some((eta, gap, schedule));
                out
            }
            Err(e) => return Ok(plan.infeasible("impulse in", e.to_string())),
        }
    };
    // Kick out by −K₁: χ₁ is the exact preimage of ψ₁ under the simulated kick.
    let mut stage_out = None;
    let chi1 = if d1.k == 0.0 {
        psi1.clone()
    } else {
        let xi = disperse::apply_exp_kb(spec, psi1, d1.k, n_sync)?;
        match choose_impulse(&prop, spec, &xi, -d1.k, eps / 8.0, budget / 8.0, opts.impulse_floor) {
            Ok((eta, gap, schedule, _)) => {
                // X† ψ = conj(X_rev conj ψ) for a real generator; one segment is its own reverse.
                let back = prop.propagate(&schedule, &psi1.conj())?.final_state.conj();
                stage_out = Some((eta, gap, schedule));
                back
            }
            Err(e) => return Ok(plan.infeasible("impulse out", e.to_string())),
        }
    };

    let (w0, drop0) = window_cut(&chi0, n0, p)?;
    let (w1, drop1) = window_cut(&chi1, n0, p)?;
    let impulse = |d: &DispersalResult, s: Option<(f64, f64, ControlSchedule)>, drop: f64, sign: f64| {
        let (eta, gap, schedule) = s.unwrap_or((0.0, 0.0, ControlSchedule::new("no impulse")));
        ImpulseStage {
            k: sign * d.k,
            eta,
            gap,
            low_mass: d.low_mass,
            tail_mass: d.tail_mass,
            tail_cut: d.tail_cut,
            window_drop: drop,
            schedule,
        }
    };
    let stage_in = impulse(&d0, stage_in, drop0, 1.0);
    let stage_out = impulse(&d1, stage_out, drop1, -1.0);

    let lopts = LadderOptions {
        truncation: Some(ladder::default_truncation(p)),
        verify_truncation: Some(0),
        ..opts.ladder
    };
    let (window_sched, window) = match ladder::steer_in_window(spec, &w0, &w1, n0, eps / 4.0, &lopts) {
        Ok(r) => r,
        Err(e) => return Ok(plan.infeasible("window steering", e.to_string())),
    };

    let schedule = ControlSchedule::concat(
        format!("small-time steering via window {n0}..={p}"),
        &[&stage_in.schedule, &window_sched, &stage_out.schedule],
    );
    let total = schedule.total_duration();
    plan.total_time = total.to_f64();
    plan.total_exact = total.to_string();
    plan.dispersal_in = Some(stage_in);
    plan.dispersal_out = Some(stage_out);
    plan.window = Some(window);
    plan.schedule = schedule;
    if !total.is_below(budget) {
        let over = plan
            .window
            .as_ref()
            .filter(|w| w.total_time >= budget / 2.0)
            .map_or("impulses", |_| "window steering");
        let why = format!("total time {} is not below the budget {budget}", plan.total_time);
        return Ok(plan.infeasible(over, why));
    }
    Ok(plan)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

#[derive(Clone, Debug, Serialize)]
pub struct PipelineReport {
    pub verdict: Verdict,
    /// `‖ψ_final − ψ₁‖` at the primary verification truncation.
    pub distance: f64,
    /// `|⟨ψ_final, ψ₁⟩|` at the primary verification truncation.
    pub fidelity: f64,
    /// Distance at the secondary verification truncation.
    pub distance_check: f64,
    /// `‖ψ_final − ψ_final'‖` between the two verification truncations.
    pub disagreement: f64,
    pub verification_truncations: [usize; 2],
    pub synthesis_truncation: usize,
    pub total_time: f64,
    pub total_exact: String,
    pub segment_count: u64,
    /// Per-stage error certificates, in order.
    pub certificates: Vec<(String, f64)>,
    pub certificate_sum: f64,
    /// Whether the distance stays within the certificates plus the disagreement.
    pub within_certificates: bool,
}

/// Verification truncations for a synthesis truncation `n`.
pub fn verification_levels(n: usize) -> [usize; 2] {
    [(3 * n).div_ceil(2), 2 * n]
}

/// Simulates a feasible plan at two truncations above the synthesis one.
pub fn execute_and_verify(spec: &ModelSpec, plan: &SmallTimePlan, psi0: &QuantumState, psi1: &QuantumState) -> Result<PipelineReport> {
    execute_and_verify_at(spec, plan, psi0, psi1, None)
}

/// Like [`execute_and_verify`], with the primary verification truncation
/// pinned to `primary` when given. The cross-check then runs at `⌈4n/3⌉`,
/// keeping the default 3:4 spacing between the two levels.
pub fn execute_and_verify_at(
    spec: &ModelSpec,
    plan: &SmallTimePlan,
    psi0: &QuantumState,
    psi1: &QuantumState,
    primary: Option<usize>,
) -> Result<PipelineReport> {
    if !plan.feasible {
        return Err(Error::domain(format!(
            "plan is infeasible: {}",
            plan.diagnosis.as_deref().unwrap_or("no diagnosis")
        )));
    }
    let base = plan
        .synthesis_truncation
        .max(psi0.highest_level().unwrap_or(1))
        .max(psi1.highest_level().unwrap_or(1))
        .max(2);
    let levels = match primary {
        Some(n) if n < 2 => return Err(Error::domain(format!("verification truncation {n} is below 2"))),
        Some(n) => [n, (4 * n).div_ceil(3)],
        None => verification_levels(base),
    };
    let run = |n: usize| -> Result<QuantumState> { Ok(Propagator::for_model(spec, n)?.propagate(&plan.schedule, psi0)?.final_state) };
    let (a, b) = rayon::join(|| run(levels[0]), || run(levels[1]));
    let (a, b) = (a?, b?);
    let distance = a.distance(psi1);
    let distance_check = b.distance(psi1);
    let disagreement = a.distance(&b);

    let mut certificates = Vec::new();
    for (name, stage) in [("dispersal in", &plan.dispersal_in), ("dispersal out", &plan.dispersal_out)] {
        if let Some(s) = stage {
            certificates.push((format!("{name} window cut"), s.window_drop));
        }
    }
    if let Some(w) = &plan.window {
        for (i, p) in w.plans.iter().enumerate() {
            certificates.push((format!("ladder concentrate {}", i + 1), p.total_certified()));
        }
    }
    if plan.schedule.is_empty() {
        certificates.push(("endpoint distance".into(), psi0.distance(psi1)));
    }
    let certificate_sum: f64 = certificates.iter().map(|(_, c)| c).sum();
    let verdict = if disagreement > plan.eps / 10.0 {
        Verdict::Inconclusive
    } else if distance < plan.eps && distance_check < plan.eps {
        Verdict::Pass
    } else {
        Verdict::Fail
    };
    let total = plan.schedule.total_duration();
    Ok(PipelineReport {
        verdict,
        fidelity: psi1.inner(&a).norm(),
        distance,
        distance_check,
        disagreement,
        verification_truncations: levels,
        synthesis_truncation: plan.synthesis_truncation,
        total_time: total.to_f64(),
        total_exact: total.to_string(),
        segment_count: plan.schedule.segment_count(),
        within_certificates: distance <= certificate_sum + disagreement + 1e-9,
        certificate_sum,
        certificates,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepEntry {
    pub budget: f64,
    pub feasible: bool,
    pub verdict: Option<Verdict>,
    pub achieved_time: Option<f64>,
    pub distance: Option<f64>,
    pub n0: Option<usize>,
    pub p: Option<usize>,
    pub synthesis_truncation: Option<usize>,
    pub failure: Option<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    /// Smallest achieved time among verified plans.
    pub best_time: Option<f64>,
    pub best_budget: Option<f64>,
}

fn sweep_one(spec: &ModelSpec, psi0: &QuantumState, psi1: &QuantumState, eps: f64, budget: f64, opts: &PipelineOptions) -> SweepEntry {
    let mut entry = SweepEntry {
        budget,
        feasible: false,
        verdict: None,
        achieved_time: None,
        distance: None,
        n0: None,
        p: None,
        synthesis_truncation: None,
        failure: None,
    };
    let plan = match plan_small_time(spec, psi0, psi1, eps, budget, opts) {
        Ok(plan) => plan,
        Err(e) => {
            entry.failure = Some(e.to_string());
            return entry;
        }
    };
    entry.n0 = Some(plan.n0);
    entry.p = Some(plan.p);
    entry.synthesis_truncation = Some(plan.synthesis_truncation);
    if !plan.feasible {
        entry.failure = Some(format!(
            "{}: {}",
            plan.limiting_stage.as_deref().unwrap_or("plan"),
            plan.diagnosis.as_deref().unwrap_or("infeasible")
        ));
        return entry;
    }
    entry.feasible = true;
    entry.achieved_time = Some(plan.total_time);
    match execute_and_verify(spec, &plan, psi0, psi1) {
        Ok(r) => {
            entry.verdict = Some(r.verdict);
            entry.distance = Some(r.distance);
        }
        Err(e) => entry.failure = Some(e.to_string()),
    }
    entry
}

/// Attempts each budget in turn and records the smallest verified time.
pub fn diameter_sweep(
    spec: &ModelSpec,
    psi0: &QuantumState,
    psi1: &QuantumState,
    eps: f64,
    budgets: &[f64],
    opts: &PipelineOptions,
) -> SweepReport {
    let entries: Vec<SweepEntry> = budgets.par_iter().map(|&t| sweep_one(spec, psi0, psi1, eps, t, opts)).collect();
    let best = entries
        .iter()
        .filter(|e| e.verdict == Some(Verdict::Pass))
        .filter_map(|e| e.achieved_time.map(|t| (t, e.budget)))
        .fold(None, |acc: Option<(f64, f64)>, x| match acc {
            Some(a) if a.0 <= x.0 => Some(a),
            _ => Some(x),
        });
    SweepReport {
        entries,
        best_time: best.map(|b| b.0),
        best_budget: best.map(|b| b.1),
    }
}

/// Exact total of a schedule's serialized durations.
pub fn serialized_total(sched: &ControlSchedule) -> Result<ExactDuration> {
    let text = crate::io::to_string(sched)?;
    let back: ControlSchedule = crate::io::from_str(&text)?;
    Ok(back.total_duration())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_endpoints_give_empty_plan() {
        let spec = ModelSpec::toy(3.0);
        let phi = QuantumState::basis(2).unwrap();
        let plan = plan_small_time(&spec, &phi, &phi, 0.3, 100.0, &PipelineOptions::default()).unwrap();
        assert!(plan.feasible && plan.schedule.is_empty());
        let r = execute_and_verify(&spec, &plan, &phi, &phi).unwrap();
        assert_eq!(r.distance, 0.0);
        assert_eq!(r.verdict, Verdict::Pass);
    }

    #[test]
    fn low_alpha_is_rejected() {
        let spec = ModelSpec::toy(2.0);
        let r = plan_small_time(
            &spec,
            &QuantumState::basis(1).unwrap(),
            &QuantumState::basis(2).unwrap(),
            0.3,
            100.0,
            &PipelineOptions::default(),
        );
        assert!(matches!(r, Err(Error::Domain(_))));
    }

    #[test]
    fn window_start_follows_the_bound() {
        let n0 = window_start(3.0, 0.075, 50.0, 100).unwrap().unwrap();
        assert!(ladder::time_bound(3.0, 0.075, n0).unwrap() < 50.0);
        assert!(ladder::time_bound(3.0, 0.075, n0 - 1).unwrap() >= 50.0);
        assert_eq!(window_start(3.0, 0.075, 1e-9, 10).unwrap(), None);
    }

    #[test]
    fn window_cut_reports_dropped_norm() {
        let psi = QuantumState::from_dense(&[crate::C64::new(0.6, 0.0), crate::C64::new(0.8, 0.0)]);
        let (w, drop) = window_cut(&psi, 2, 3).unwrap();
        assert!((drop - 0.6).abs() < 1e-15);
        assert!(w.is_normalized());
        assert_eq!(w.offset(), 2);
    }

    #[test]
    fn tiny_budget_is_infeasible_not_violated() {
        let spec = ModelSpec::toy(3.0);
        let opts = PipelineOptions {
            max_truncation: 64,
            ..PipelineOptions::default()
        };
        let plan = plan_small_time(
            &spec,
            &QuantumState::basis(1).unwrap(),
            &QuantumState::basis(2).unwrap(),
            0.3,
            0.5,
            &opts,
        )
        .unwrap();
        assert!(!plan.feasible);
        assert!(plan.limiting_stage.is_some());
        assert!(execute_and_verify(&spec, &plan, &QuantumState::basis(1).unwrap(), &QuantumState::basis(2).unwrap()).is_err());
    }
}
