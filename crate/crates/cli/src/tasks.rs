//! One runner per subcommand. Each writes its artifacts and returns whether
//! every asserted invariant held.

use std::path::PathBuf;

use ladderlab::disperse::{self, DEFAULT_POINTWISE_GRID, DEFAULT_SCAN_GRID};
use ladderlab::engine::{ControlSchedule, Propagator};
use ladderlab::findim::{self, MatrixPair};
use ladderlab::ladder::{self, LadderOptions};
use ladderlab::model::{ModelSpec, QuantumState};
use ladderlab::pipeline::{self, PipelineOptions, Verdict};
use ladderlab::pulse::{self, Divisor, PulseOptions};
use ladderlab::rng::Rng;
use ladderlab::{Error, C64};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{self, positive, require, tolerance, ExperimentConfig, StateConfig};
use crate::error::CliError;
use crate::output::{num, opt_num, Artifacts, Check};

/// Largest norm drift accepted from a simulation.
pub const NORM_DRIFT_TOL: f64 = 1e-9;
/// Agreement required between the matrix and pointwise dispersal routes.
pub const ROUTE_TOL: f64 = 1e-8;

pub struct Context {
    pub seed: u64,
    pub out: Artifacts,
    pub emit_schedule: bool,
    pub verify_truncation: Option<usize>,
}

impl Context {
    fn rng(&self) -> Rng {
        Rng::new(self.seed)
    }

    fn emit(&self, sched: &ControlSchedule) -> Result<Option<PathBuf>, CliError> {
        if self.emit_schedule {
            self.out.schedule(sched).map(Some)
        } else {
            Ok(None)
        }
    }
}

fn state(cfg: &Option<StateConfig>, path: &str, rng: &mut Rng) -> Result<QuantumState, CliError> {
    require(cfg.as_ref(), path)?.build(path, rng)
}

#[derive(Serialize)]
struct SimulateResult {
    truncation: usize,
    duration: f64,
    segment_count: u64,
    initial: QuantumState,
    final_state: QuantumState,
    norm_drift: f64,
    /// `e^{iλ_k T}` for a basis input under zero control.
    expected_phase: Option<[f64; 2]>,
    phase_error: Option<f64>,
}

pub fn simulate(cfg: &ExperimentConfig, ctx: &Context) -> Result<bool, CliError> {
    let spec = cfg.model()?;
    let sc = cfg.section(&cfg.simulate, "simulate")?;
    let psi = state(&sc.psi, "simulate.psi", &mut ctx.rng())?;
    let sched: ControlSchedule = match &sc.schedule {
        Some(path) => {
            if sc.u.is_some() || sc.duration.is_some() || sc.segments.is_some() {
                return Err(CliError::usage("simulate.schedule", "excludes `u`, `duration` and `segments`"));
            }
            ladderlab::io::read_json(path).map_err(|e| CliError::usage("simulate.schedule", e.to_string()))?
        }
        None => {
            let u = require(sc.u, "simulate.u")?;
            let duration = positive(sc.duration, "simulate.duration")?;
            let segments = sc.segments.unwrap_or(1);
            if segments == 0 {
                return Err(CliError::usage("simulate.segments", "must be at least 1"));
            }
            let mut s = ControlSchedule::new("constant");
            s.push_repeat(
                segments as u64,
                vec![ladderlab::engine::Segment::new(u, duration / segments as f64)?],
            )?;
            s
        }
    };
    let top = psi.highest_level().unwrap_or(1);
    let truncation = sc.truncation.unwrap_or((2 * top).max(top + 8));
    if truncation < top {
        return Err(CliError::usage("simulate.truncation", format!("must cover level {top}")));
    }
    let out = Propagator::for_model(&spec, truncation)?.propagate(&sched, &psi)?;
    let duration = sched.duration();
    let norm_drift = (out.final_state.norm() - psi.norm()).abs();
    let mut checks = vec![Check::new(
        "norm drift",
        norm_drift <= NORM_DRIFT_TOL,
        format!("{norm_drift:e} <= {NORM_DRIFT_TOL:e}"),
    )];

    let free = sched.iter_segments().all(|s| s.u == 0.0);
    let basis = (psi.coeffs().iter().filter(|z| z.norm() > 0.0).count() == 1)
        .then(|| psi.lowest_level())
        .flatten();
    let (mut expected_phase, mut phase_error) = (None, None);
    if let (true, Some(k)) = (free, basis) {
        let expected = psi.coefficient(k) * C64::from_polar(1.0, spec.eigenvalue(k)? * duration);
        let err = (out.final_state.coefficient(k) - expected).norm();
        checks.push(Check::new(
            "free phase",
            err <= 1e-9,
            format!("|x_k - e^(i lambda_k T) x_k(0)| = {err:e}"),
        ));
        expected_phase = Some([expected.re, expected.im]);
        phase_error = Some(err);
    }
    ctx.emit(&sched)?;
    let result = SimulateResult {
        truncation,
        duration,
        segment_count: sched.segment_count(),
        initial: psi,
        final_state: out.final_state,
        norm_drift,
        expected_phase,
        phase_error,
    };
    ctx.out.report("simulate", ctx.seed, &checks, &result)
}

#[derive(Serialize)]
struct PulseRow {
    pulse: pulse::TransitionPulse,
    deviation: f64,
    ratio: Option<f64>,
}

pub fn pulse(cfg: &ExperimentConfig, ctx: &Context) -> Result<bool, CliError> {
    let spec = cfg.model()?;
    let pc = cfg.section(&cfg.pulse, "pulse")?;
    let j = require(pc.j, "pulse.j")?;
    let k = require(pc.k, "pulse.k")?;
    let truncation = pc.truncation.unwrap_or(j.max(k) + 2);
    let [x, y] = pc.state.unwrap_or([[1.0, 0.0], [0.0, 0.0]]);
    let state2 = (C64::new(x[0], x[1]), C64::new(y[0], y[1]));
    let divisors: Vec<Divisor> = match (pc.eta, &pc.divisors) {
        (Some(_), Some(_)) => return Err(CliError::usage("pulse.eta", "excludes `divisors`")),
        (Some(eta), None) => vec![Divisor::Budget(positive(Some(eta), "pulse.eta")?)],
        (None, Some(list)) if list.is_empty() => return Err(CliError::usage("pulse.divisors", "must not be empty")),
        (None, Some(list)) => list.iter().map(|&n| Divisor::Fixed(n)).collect(),
        (None, None) => [8.0, 16.0, 32.0, 64.0].into_iter().map(Divisor::Fixed).collect(),
    };
    let pair = spec.galerkin(truncation)?;
    let prop = Propagator::new(pair.clone());
    let mut rows: Vec<PulseRow> = Vec::new();
    for d in divisors {
        let p = pulse::synthesize_with(&pair, j, k, state2, d, &PulseOptions::default())?;
        let deviation = pulse::averaging_deviation(&prop, &p);
        let ratio = rows.last().map(|r| r.deviation / deviation);
        rows.push(PulseRow {
            pulse: p,
            deviation,
            ratio,
        });
    }
    let checks: Vec<Check> = rows
        .iter()
        .map(|r| {
            Check::new(
                &format!("bound at n = {}", r.pulse.n),
                r.deviation <= r.pulse.bound,
                format!("{:e} <= {:e}", r.deviation, r.pulse.bound),
            )
        })
        .collect();
    let table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(r.pulse.n),
                num(r.pulse.duration),
                num(r.pulse.k_target),
                num(r.deviation),
                num(r.pulse.bound),
                opt_num(r.ratio),
            ]
        })
        .collect();
    ctx.out
        .csv("error_vs_n.csv", &["n", "duration", "k", "deviation", "bound", "ratio"], &table)?;
    if let Some(last) = rows.last() {
        ctx.emit(&last.pulse.schedule)?;
    }
    ctx.out.report("pulse", ctx.seed, &checks, &rows)
}

fn ladder_options(truncation: Option<usize>, verify: Option<usize>) -> Result<LadderOptions, CliError> {
    if verify.is_some_and(|n| n < 2) {
        return Err(CliError::usage("--verify-truncation", "must be at least 2"));
    }
    Ok(LadderOptions {
        truncation,
        verify_truncation: verify,
        ..LadderOptions::default()
    })
}

pub fn steer(cfg: &ExperimentConfig, ctx: &Context) -> Result<bool, CliError> {
    let spec = cfg.model()?;
    let sc = cfg.section(&cfg.steer, "steer")?;
    let mut rng = ctx.rng();
    let psi0 = state(&sc.psi0, "steer.psi0", &mut rng)?;
    let psi1 = state(&sc.psi1, "steer.psi1", &mut rng)?;
    let n0 = require(sc.n0, "steer.n0")?;
    let eps = tolerance(sc.eps, "steer.eps")?;
    let opts = ladder_options(sc.truncation, ctx.verify_truncation)?;
    let (sched, report) = ladder::steer_in_window(&spec, &psi0, &psi1, n0, eps, &opts)?;
    let checks = vec![Check::new(
        "final distance",
        report.distance < eps,
        format!("{:e} < {eps} at truncation {:?}", report.distance, report.verification_truncation),
    )];
    ctx.emit(&sched)?;
    ctx.out.report("steer", ctx.seed, &checks, &report)
}

#[derive(Serialize)]
struct SmallTimeResult<'a> {
    plan: &'a pipeline::SmallTimePlan,
    verification: Option<pipeline::PipelineReport>,
}

fn small_time_run(
    spec: &ModelSpec,
    psi0: &QuantumState,
    psi1: &QuantumState,
    eps: f64,
    budget: f64,
    opts: &PipelineOptions,
    ctx: &Context,
) -> Result<(bool, Option<pipeline::PipelineReport>, pipeline::SmallTimePlan), CliError> {
    let plan = pipeline::plan_small_time(spec, psi0, psi1, eps, budget, opts)?;
    let mut checks = vec![Check::new(
        "feasible plan",
        plan.feasible,
        plan.diagnosis
            .clone()
            .unwrap_or_else(|| format!("total time {} < {budget}", plan.total_time)),
    )];
    let mut verification = None;
    if plan.feasible {
        let r = pipeline::execute_and_verify_at(spec, &plan, psi0, psi1, ctx.verify_truncation)?;
        checks.push(Check::new(
            "verified distance",
            r.verdict == Verdict::Pass,
            format!(
                "{:?}: distance {:e} at truncations {:?}",
                r.verdict, r.distance, r.verification_truncations
            ),
        ));
        verification = Some(r);
        ctx.emit(&plan.schedule)?;
    }
    let passed = ctx.out.report(
        "small-time",
        ctx.seed,
        &checks,
        &SmallTimeResult {
            plan: &plan,
            verification: verification.clone(),
        },
    )?;
    Ok((passed, verification, plan))
}

pub fn small_time(cfg: &ExperimentConfig, ctx: &Context) -> Result<bool, CliError> {
    let spec = cfg.model()?;
    let sc = cfg.section(&cfg.small_time, "small_time")?;
    let mut rng = ctx.rng();
    let psi0 = state(&sc.psi0, "small_time.psi0", &mut rng)?;
    let psi1 = state(&sc.psi1, "small_time.psi1", &mut rng)?;
    let eps = tolerance(sc.eps, "small_time.eps")?;
    let budget = positive(sc.budget, "small_time.budget")?;
    let mut opts = PipelineOptions::default();
    if let Some(cap) = sc.max_truncation {
        opts.max_truncation = cap;
    }
    Ok(small_time_run(&spec, &psi0, &psi1, eps, budget, &opts, ctx)?.0)
}

#[derive(Serialize)]
struct DisperseResult {
    found: Option<disperse::DispersalResult>,
    failure: Option<String>,
    pointwise_mass: Option<f64>,
    route_gap: Option<f64>,
}

pub fn disperse(cfg: &ExperimentConfig, ctx: &Context) -> Result<bool, CliError> {
    let spec = cfg.model()?;
    let dc = cfg.section(&cfg.disperse, "disperse")?;
    let psi = state(&dc.psi, "disperse.psi", &mut ctx.rng())?;
    let n0 = require(dc.n0, "disperse.n0")?;
    let eps = tolerance(dc.eps, "disperse.eps")?;
    let k_max = positive(dc.k_max.or(Some(100.0)), "disperse.k_max")?;
    let grid = dc.grid.unwrap_or(DEFAULT_SCAN_GRID);
    if grid == 0 {
        return Err(CliError::usage("disperse.grid", "must be at least 1"));
    }
    let curve = disperse::dispersal_curve(&spec, &psi, n0, k_max, grid)?;
    let rows: Vec<Vec<String>> = curve.iter().map(|&(k, m)| vec![num(k), num(m)]).collect();
    ctx.out.csv("dispersal_curve.csv", &["k", "low_mass"], &rows)?;

    let mut checks = Vec::new();
    let result = match disperse::find_dispersal(&spec, &psi, n0, eps, k_max, grid) {
        Ok(found) => {
            let trunc = disperse::dispersal_truncation(psi.highest_level().unwrap_or(1), found.k);
            let image = disperse::apply_exp_kb_pointwise(&psi, found.k, trunc, DEFAULT_POINTWISE_GRID);
            let matrix = disperse::apply_exp_kb(&spec, &psi, found.k, trunc)?;
            let gap = image.distance(&matrix);
            let mass = image.mass_in(1, n0);
            checks.push(Check::new(
                "dispersal found",
                mass < eps,
                format!("K = {}, low-mode mass {mass:e} < {eps}", found.k),
            ));
            checks.push(Check::new("route agreement", gap <= ROUTE_TOL, format!("{gap:e} <= {ROUTE_TOL:e}")));
            DisperseResult {
                found: Some(found),
                failure: None,
                pointwise_mass: Some(mass),
                route_gap: Some(gap),
            }
        }
        Err(e @ Error::DispersalNotFound { .. }) => {
            checks.push(Check::new("dispersal found", false, e.to_string()));
            DisperseResult {
                found: None,
                failure: Some(e.to_string()),
                pointwise_mass: None,
                route_gap: None,
            }
        }
        Err(e) => return Err(e.into()),
    };
    ctx.out.report("disperse", ctx.seed, &checks, &result)
}

#[derive(Serialize)]
struct FindimResult {
    dimension: usize,
    lie_rank: usize,
    full_rank: usize,
    controllable: bool,
    a_operator_norm: f64,
    b_operator_norm: f64,
    a_killing_norm: f64,
    b_killing_norm: f64,
    rho_bound: Option<findim::RhoBound>,
}

fn complex_matrix(rows: &[Vec<[f64; 2]>], path: &str) -> Result<DMatrix<C64>, CliError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != n) {
        return Err(CliError::usage(path, "must be a non-empty square matrix"));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| C64::new(rows[i][j][0], rows[i][j][1])))
}

fn complex_vector(coeffs: &[[f64; 2]]) -> DVector<C64> {
    DVector::from_vec(config::complex_row(coeffs))
}

fn operator_norm(m: &DMatrix<C64>) -> f64 {
    m.singular_values().max()
}

pub fn findim(cfg: &ExperimentConfig, ctx: &Context) -> Result<bool, CliError> {
    let fc = cfg.section(&cfg.findim, "findim")?;
    let sources = [fc.a.is_some() || fc.b.is_some(), fc.pair_file.is_some(), fc.random.is_some()];
    if sources.iter().filter(|&&s| s).count() != 1 {
        return Err(CliError::usage("findim", "give exactly one of `a`/`b`, `pair_file` or `random`"));
    }
    let pair = if let Some(path) = &fc.pair_file {
        ladderlab::io::read_json::<MatrixPair>(path).map_err(|e| CliError::usage("findim.pair_file", e.to_string()))?
    } else if let Some(n) = fc.random {
        if n < 2 {
            return Err(CliError::usage("findim.random", "dimension must be at least 2"));
        }
        let mut rng = ctx.rng();
        let a = rng.traceless_skew_hermitian(n);
        MatrixPair::new(a, rng.traceless_skew_hermitian(n))?
    } else {
        let a = complex_matrix(require(fc.a.as_ref(), "findim.a")?, "findim.a")?;
        let b = complex_matrix(require(fc.b.as_ref(), "findim.b")?, "findim.b")?;
        MatrixPair::new(a, b).map_err(|e| CliError::usage("findim", e.to_string()))?
    };
    let n = pair.n();
    let scale = findim::default_killing_scale(n);
    let rho_bound = match (&fc.psi0, &fc.psi1) {
        (Some(p0), Some(p1)) => Some(findim::rho_lower_bound(
            &pair,
            &complex_vector(p0),
            &complex_vector(p1),
            fc.k_max.unwrap_or(100.0),
            fc.grid.unwrap_or(DEFAULT_SCAN_GRID),
        )?),
        (None, None) => None,
        _ => return Err(CliError::usage("findim.psi1", "`psi0` and `psi1` go together")),
    };
    let result = FindimResult {
        dimension: n,
        lie_rank: findim::lie_rank(&pair),
        full_rank: n * n - 1,
        controllable: findim::is_controllable(&pair),
        a_operator_norm: operator_norm(pair.a()),
        b_operator_norm: operator_norm(pair.b()),
        a_killing_norm: findim::killing_norm(pair.a(), scale)?,
        b_killing_norm: findim::killing_norm(pair.b(), scale)?,
        rho_bound,
    };
    let mut checks = Vec::new();
    if let Some(expected) = fc.expect_rank {
        checks.push(Check::new(
            "lie rank",
            result.lie_rank == expected,
            format!("{} (expected {expected})", result.lie_rank),
        ));
    }
    ctx.out.report("findim", ctx.seed, &checks, &result)
}

pub const SWEEP_HEADER: [&str; 12] = [
    "index",
    "kind",
    "alpha",
    "eps",
    "n0",
    "budget",
    "status",
    "time_bound",
    "achieved_time",
    "distance",
    "verdict",
    "message",
];

#[derive(Clone, Copy, Debug, PartialEq)]
enum SweepKind {
    TimeBound,
    Steer,
    SmallTime,
}

impl SweepKind {
    fn name(self) -> &'static str {
        match self {
            SweepKind::TimeBound => "time-bound",
            SweepKind::Steer => "steer",
            SweepKind::SmallTime => "small-time",
        }
    }
}

struct Run {
    alpha: f64,
    eps: f64,
    n0: Option<usize>,
    budget: Option<f64>,
}

#[derive(Default)]
struct RunOutcome {
    ok: bool,
    time_bound: Option<f64>,
    achieved: Option<f64>,
    distance: Option<f64>,
    verdict: String,
    message: String,
}

fn expand(kind: SweepKind, alpha: &[f64], eps: &[f64], n0: &[usize], budget: &[f64]) -> Vec<Run> {
    let mut runs = Vec::new();
    for &a in alpha {
        for &e in eps {
            match kind {
                SweepKind::TimeBound | SweepKind::Steer => runs.extend(n0.iter().map(|&n| Run {
                    alpha: a,
                    eps: e,
                    n0: Some(n),
                    budget: None,
                })),
                SweepKind::SmallTime => runs.extend(budget.iter().map(|&t| Run {
                    alpha: a,
                    eps: e,
                    n0: None,
                    budget: Some(t),
                })),
            }
        }
    }
    runs
}

fn sweep_run(kind: SweepKind, run: &Run, index: usize, sc: &config::SweepConfig, parent: &Context) -> Result<RunOutcome, CliError> {
    let spec = ModelSpec::toy(run.alpha);
    let mut out = RunOutcome::default();
    if kind == SweepKind::TimeBound {
        out.time_bound = Some(ladder::time_bound(run.alpha, run.eps, run.n0.expect("time-bound runs carry N0"))?);
        out.ok = true;
        return Ok(out);
    }
    // Each run draws from its own stream so rows do not depend on scheduling.
    let seed = parent.seed.wrapping_add(index as u64);
    let ctx = Context {
        seed,
        out: parent.out.child(&format!("run-{index:04}"))?,
        emit_schedule: parent.emit_schedule,
        verify_truncation: parent.verify_truncation,
    };
    let mut rng = Rng::new(seed);
    let default_pair = |lo: usize| {
        (
            StateConfig {
                basis: Some(lo),
                ..Default::default()
            },
            StateConfig {
                basis: Some(lo + 1),
                ..Default::default()
            },
        )
    };
    let fallback = default_pair(run.n0.unwrap_or(1));
    let psi0 = sc.psi0.as_ref().unwrap_or(&fallback.0).build("sweep.psi0", &mut rng)?;
    let psi1 = sc.psi1.as_ref().unwrap_or(&fallback.1).build("sweep.psi1", &mut rng)?;
    match kind {
        SweepKind::Steer => {
            let n0 = run.n0.expect("steer runs carry N0");
            let opts = ladder_options(None, ctx.verify_truncation)?;
            let (sched, report) = ladder::steer_in_window(&spec, &psi0, &psi1, n0, run.eps, &opts)?;
            let checks = vec![Check::new(
                "final distance",
                report.distance < run.eps,
                format!("{:e}", report.distance),
            )];
            ctx.emit(&sched)?;
            out.ok = ctx.out.report("steer", seed, &checks, &report)?;
            out.time_bound = report.bound_time;
            out.achieved = Some(sched.duration());
            out.distance = Some(report.distance);
        }
        SweepKind::SmallTime => {
            let budget = run.budget.expect("small-time runs carry a budget");
            let (ok, verification, plan) = small_time_run(&spec, &psi0, &psi1, run.eps, budget, &PipelineOptions::default(), &ctx)?;
            out.ok = ok;
            out.time_bound = plan.predicted_bound;
            if let Some(r) = verification {
                out.achieved = Some(r.total_time);
                out.distance = Some(r.distance);
                out.verdict = format!("{:?}", r.verdict).to_lowercase();
            }
            if let Some(d) = plan.diagnosis {
                out.message = d;
            }
        }
        SweepKind::TimeBound => unreachable!(),
    }
    Ok(out)
}

pub fn sweep(cfg: &ExperimentConfig, ctx: &Context) -> Result<bool, CliError> {
    let sc = cfg.section(&cfg.sweep, "sweep")?;
    let kind = match require(sc.kind.as_deref(), "sweep.kind")? {
        "time-bound" => SweepKind::TimeBound,
        "steer" => SweepKind::Steer,
        "small-time" => SweepKind::SmallTime,
        other => {
            return Err(CliError::usage(
                "sweep.kind",
                format!("unknown kind `{other}` (time-bound, steer or small-time)"),
            ))
        }
    };
    let runs = expand(kind, &sc.alpha, &sc.eps, &sc.n0, &sc.budget);
    let outcomes: Vec<RunOutcome> = runs
        .par_iter()
        .enumerate()
        .map(|(i, run)| {
            sweep_run(kind, run, i, sc, ctx).unwrap_or_else(|e| RunOutcome {
                message: e.to_string(),
                ..RunOutcome::default()
            })
        })
        .collect();
    let rows: Vec<Vec<String>> = runs
        .iter()
        .zip(&outcomes)
        .enumerate()
        .map(|(i, (run, o))| {
            vec![
                i.to_string(),
                kind.name().to_owned(),
                num(run.alpha),
                num(run.eps),
                run.n0.map_or(String::new(), |n| n.to_string()),
                opt_num(run.budget),
                if o.ok { "ok" } else { "failed" }.to_owned(),
                opt_num(o.time_bound),
                opt_num(o.achieved),
                opt_num(o.distance),
                o.verdict.clone(),
                o.message.clone(),
            ]
        })
        .collect();
    ctx.out.csv("sweep.csv", &SWEEP_HEADER, &rows)?;
    let failed = outcomes.iter().filter(|o| !o.ok).count();
    if failed > 0 {
        ctx.out.mark_failed(&format!("{failed} of {} runs failed", outcomes.len()))?;
    }
    Ok(failed == 0)
}
