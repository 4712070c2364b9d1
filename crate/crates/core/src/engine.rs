//! Exact propagation of Galerkin systems under piecewise-constant controls.
//!
//! A constant control `u` over a time `t` acts by `e^{t(A+uB)} = e^{itH(u)}`
//! with `H(u)` Hermitian, so each segment is applied through a cached
//! eigendecomposition of `H(u)`. Long periodic controls are stored
//! run-length compressed: a [`Piece::Repeat`] is propagated by building the
//! propagator of its body once and raising it to the repeat count by
//! squaring.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::exact::ExactDuration;
use crate::linalg::{self, Spectral};
use crate::model::{weighted_norm, GalerkinPair, ModelSpec, QuantumState};
use crate::rng::Rng;
use crate::{Error, Result, C64};

/// Constant control `u` held for time `dt`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Segment {
    pub u: f64,
    pub dt: f64,
}

impl Segment {
    pub fn new(u: f64, dt: f64) -> Result<Self> {
        if !u.is_finite() || !dt.is_finite() {
            return Err(Error::domain(format!("segment ({u}, {dt}) is not finite")));
        }
        if dt < 0.0 {
            return Err(Error::domain(format!("segment duration {dt} is negative")));
        }
        Ok(Segment { u, dt })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Piece {
    Single(Segment),
    /// `body` applied `repeat` times in a row.
    Repeat {
        repeat: u64,
        body: Vec<Segment>,
    },
}

impl Piece {
    fn segment_count(&self) -> u64 {
        match self {
            Piece::Single(_) => 1,
            Piece::Repeat { repeat, body } => repeat * body.len() as u64,
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Piece::Single(s) => Segment::new(s.u, s.dt).map(|_| ()),
            Piece::Repeat { body, .. } => body.iter().try_for_each(|s| Segment::new(s.u, s.dt).map(|_| ())),
        }
    }
}

/// A piecewise-constant control.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlSchedule {
    #[serde(default)]
    pub label: String,
    segments: Vec<Piece>,
}

impl ControlSchedule {
    pub fn new(label: impl Into<String>) -> Self {
        ControlSchedule {
            label: label.into(),
            segments: Vec::new(),
        }
    }

    pub fn from_segments(label: impl Into<String>, segments: &[Segment]) -> Result<Self> {
        let mut s = ControlSchedule::new(label);
        for seg in segments {
            s.push(seg.u, seg.dt)?;
        }
        Ok(s)
    }

    pub fn push(&mut self, u: f64, dt: f64) -> Result<()> {
        self.segments.push(Piece::Single(Segment::new(u, dt)?));
        Ok(())
    }

    pub fn push_repeat(&mut self, count: u64, body: Vec<Segment>) -> Result<()> {
        let piece = Piece::Repeat { repeat: count, body };
        piece.validate()?;
        if piece.segment_count() > 0 {
            self.segments.push(piece);
        }
        Ok(())
    }

    /// Appends `other` after `self`.
    pub fn append(&mut self, other: &ControlSchedule) {
        self.segments.extend(other.segments.iter().cloned());
    }

    pub fn concat(label: impl Into<String>, parts: &[&ControlSchedule]) -> Self {
        let mut s = ControlSchedule::new(label);
        for p in parts {
            s.append(p);
        }
        s
    }

    pub fn pieces(&self) -> &[Piece] {
        &self.segments
    }

    /// Checks every segment (after deserialization, for instance).
    pub fn validate(&self) -> Result<()> {
        self.segments.iter().try_for_each(Piece::validate)
    }

    /// Number of segments once repeats are expanded.
    pub fn segment_count(&self) -> u64 {
        self.segments.iter().map(Piece::segment_count).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.segment_count() == 0
    }

    /// Exact sum of all durations.
    pub fn total_duration(&self) -> ExactDuration {
        let mut total = ExactDuration::zero();
        for piece in &self.segments {
            match piece {
                Piece::Single(s) => total += exact(s.dt),
                Piece::Repeat { repeat, body } => {
                    let body_total: ExactDuration = body.iter().map(|s| exact(s.dt)).sum();
                    total += body_total * *repeat;
                }
            }
        }
        total
    }

    pub fn duration(&self) -> f64 {
        self.total_duration().to_f64()
    }

    /// `∫|u| dt`.
    pub fn l1_norm(&self) -> f64 {
        self.segments
            .iter()
            .map(|piece| match piece {
                Piece::Single(s) => s.u.abs() * s.dt,
                Piece::Repeat { repeat, body } => *repeat as f64 * body.iter().map(|s| s.u.abs() * s.dt).sum::<f64>(),
            })
            .sum()
    }

    /// Largest `|u|` over all segments.
    pub fn max_amplitude(&self) -> f64 {
        self.segments
            .iter()
            .flat_map(|piece| match piece {
                Piece::Single(s) => std::slice::from_ref(s).iter(),
                Piece::Repeat { body, .. } => body.iter(),
            })
            .fold(0.0, |m, s| m.max(s.u.abs()))
    }

    /// Segments in reverse order, amplitudes unchanged.
    pub fn reversed(&self) -> ControlSchedule {
        let segments = self
            .segments
            .iter()
            .rev()
            .map(|piece| match piece {
                Piece::Single(s) => Piece::Single(*s),
                Piece::Repeat { repeat, body } => Piece::Repeat {
                    repeat: *repeat,
                    body: body.iter().rev().copied().collect(),
                },
            })
            .collect();
        ControlSchedule {
            label: self.label.clone(),
            segments,
        }
    }

    /// All segments in order, repeats expanded.
    pub fn iter_segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.segments.iter().flat_map(|piece| {
            let (count, body): (u64, &[Segment]) = match piece {
                Piece::Single(s) => (1, std::slice::from_ref(s)),
                Piece::Repeat { repeat, body } => (*repeat, body.as_slice()),
            };
            (0..count).flat_map(move |_| body.iter().copied())
        })
    }
}

fn exact(t: f64) -> ExactDuration {
    // Segments are validated finite on construction.
    ExactDuration::from_f64(t).expect("finite segment duration")
}

/// Outcome of [`propagate`].
#[derive(Clone, Debug, Serialize)]
pub struct PropagationResult {
    pub final_state: QuantumState,
    pub truncation: usize,
    pub unitarity_defect: f64,
    pub step_count: u64,
}

const CACHE_CAPACITY: usize = 256;

/// Propagates one Galerkin system, caching spectral decompositions by
/// control value.
pub struct Propagator {
    pair: GalerkinPair,
    cache: Mutex<HashMap<u64, Arc<Spectral>>>,
}

impl Propagator {
    pub fn new(pair: GalerkinPair) -> Self {
        Propagator {
            pair,
            cache: Mutex::new(HashMap::new()),
        }
    }

    pub fn for_model(spec: &ModelSpec, n: usize) -> Result<Self> {
        Ok(Propagator::new(spec.galerkin(n)?))
    }

    pub fn pair(&self) -> &GalerkinPair {
        &self.pair
    }

    pub fn n(&self) -> usize {
        self.pair.n()
    }

    fn spectral(&self, u: f64) -> Arc<Spectral> {
        let key = u.to_bits();
        if let Some(s) = self.cache.lock().expect("cache lock").get(&key) {
            return Arc::clone(s);
        }
        let spectral = Arc::new(spectral_for(&self.pair, u));
        let mut cache = self.cache.lock().expect("cache lock");
        if cache.len() >= CACHE_CAPACITY {
            cache.clear();
        }
        cache.insert(key, Arc::clone(&spectral));
        spectral
    }

    /// `e^{t(A+uB)} X`.
    pub fn step_block(&self, u: f64, t: f64, x: &DMatrix<C64>) -> DMatrix<C64> {
        if t == 0.0 {
            return x.clone();
        }
        self.spectral(u).apply_exp(t, x)
    }

    /// The matrix `e^{t(A+uB)}`.
    pub fn step_matrix(&self, u: f64, t: f64) -> DMatrix<C64> {
        self.spectral(u).exp_matrix(t)
    }

    /// Applies a whole schedule to a block of column states.
    pub fn propagate_block(&self, sched: &ControlSchedule, x: &DMatrix<C64>) -> DMatrix<C64> {
        let mut x = x.clone();
        for piece in sched.pieces() {
            match piece {
                Piece::Single(s) => x = self.step_block(s.u, s.dt, &x),
                Piece::Repeat { repeat, body } => {
                    x = self.apply_repeat(*repeat, body, x);
                }
            }
        }
        x
    }

    fn apply_repeat(&self, count: u64, body: &[Segment], mut x: DMatrix<C64>) -> DMatrix<C64> {
        let n = self.n() as f64;
        let m = x.ncols() as f64;
        let len = body.len() as f64;
        let bits = 64.0 - count.leading_zeros() as f64;
        // Segment-by-segment costs about count·len·m·n² flops; building the
        // body propagator and squaring costs about (len + 3·bits)·n³.
        let stepwise = count as f64 * len * m;
        let powering = (len + 3.0 * bits) * n + bits * m;
        if stepwise <= powering {
            for _ in 0..count {
                for s in body {
                    x = self.step_block(s.u, s.dt, &x);
                }
            }
            return x;
        }
        let mut power = self.body_matrix(body);
        let mut remaining = count;
        while remaining > 0 {
            if remaining & 1 == 1 {
                x = linalg::cmul(&power, &x);
            }
            remaining >>= 1;
            if remaining > 0 {
                power = linalg::newton_schulz(&linalg::cmul(&power, &power));
            }
        }
        x
    }

    fn body_matrix(&self, body: &[Segment]) -> DMatrix<C64> {
        let n = self.n();
        let mut acc = DMatrix::<C64>::identity(n, n);
        for s in body {
            if s.dt == 0.0 {
                continue;
            }
            acc = linalg::cmul(&self.step_matrix(s.u, s.dt), &acc);
        }
        acc
    }

    /// The propagator `X^u_{(N)}(T, 0)` of a whole schedule.
    pub fn schedule_matrix(&self, sched: &ControlSchedule) -> DMatrix<C64> {
        let n = self.n();
        self.propagate_block(sched, &DMatrix::identity(n, n))
    }

    pub fn propagate(&self, sched: &ControlSchedule, psi0: &QuantumState) -> Result<PropagationResult> {
        let n = self.n();
        let v = psi0.to_dense(n)?;
        let x = DMatrix::from_column_slice(n, 1, v.as_slice());
        let out = self.propagate_block(sched, &x);
        let final_state = QuantumState::from_dense(out.as_slice());
        Ok(PropagationResult {
            unitarity_defect: (final_state.norm() - psi0.norm()).abs(),
            final_state,
            truncation: n,
            step_count: sched.segment_count(),
        })
    }
}

fn spectral_for(pair: &GalerkinPair, u: f64) -> Spectral {
    if u == 0.0 || pair.b_norm() == 0.0 {
        return Spectral::diagonal(pair.a_diag().clone());
    }
    match pair.real_generator(u) {
        Some(h) => Spectral::real(h),
        None => Spectral::complex(pair.generator(u)),
    }
}

/// `e^{t(A^{(N)}+uB^{(N)})} ψ` for a single segment.
pub fn step(pair: &GalerkinPair, u: f64, t: f64, psi: &QuantumState) -> Result<QuantumState> {
    Segment::new(u, t)?;
    let n = pair.n();
    let v = psi.to_dense(n)?;
    if t == 0.0 {
        return Ok(QuantumState::from_dvector(&v));
    }
    let x = DMatrix::from_column_slice(n, 1, v.as_slice());
    let out = spectral_for(pair, u).apply_exp(t, &x);
    Ok(QuantumState::from_dense(out.as_slice()))
}

/// Runs a schedule on the Galerkin system `pair`.
pub fn propagate(pair: &GalerkinPair, sched: &ControlSchedule, psi0: &QuantumState) -> Result<PropagationResult> {
    sched.validate()?;
    Propagator::new(pair.clone()).propagate(sched, psi0)
}

/// Midpoint sampling of `t ↦ (amplitude/divisor)·cos(frequency·t + phase)`
/// on `[0, duration]` with `steps_per_period` sub-intervals per period.
///
/// Whole periods are stored as one repeated body.
pub fn sample_cosine(
    amplitude: f64,
    frequency: f64,
    phase: f64,
    divisor: f64,
    duration: f64,
    steps_per_period: usize,
) -> Result<ControlSchedule> {
    if !(frequency > 0.0) || !frequency.is_finite() {
        return Err(Error::domain(format!("frequency must be positive, got {frequency}")));
    }
    if !(divisor >= 1.0) || !divisor.is_finite() {
        return Err(Error::domain(format!("divisor must be at least 1, got {divisor}")));
    }
    if steps_per_period < 4 {
        return Err(Error::domain("at least 4 steps per period are required"));
    }
    if !(duration >= 0.0) || !duration.is_finite() || !amplitude.is_finite() || !phase.is_finite() {
        return Err(Error::domain("amplitude, phase and duration must be finite, duration nonnegative"));
    }
    let m = steps_per_period as u64;
    let period = std::f64::consts::TAU / frequency;
    let h = period / steps_per_period as f64;
    let scale = amplitude / divisor;
    let value = |t: f64| scale * (frequency * t + phase).cos();

    let mut full = (duration / h + 1e-9).floor() as u64;
    while full > 0 && full as f64 * h > duration {
        full -= 1;
    }
    let mut tail = duration - full as f64 * h;
    if tail <= 1e-12 * h {
        tail = 0.0;
    }

    let mut sched = ControlSchedule::new(format!("cosine ω={frequency} φ={phase} n={divisor}"));
    let body: Vec<Segment> = (0..m)
        .map(|i| Segment {
            u: value((i as f64 + 0.5) * h),
            dt: h,
        })
        .collect();
    let periods = full / m;
    let rest = (full % m) as usize;
    match periods {
        0 => {}
        1 => {
            for s in &body {
                sched.push(s.u, s.dt)?;
            }
        }
        p => sched.push_repeat(p, body.clone())?,
    }
    for s in &body[..rest] {
        sched.push(s.u, s.dt)?;
    }
    if tail > 0.0 {
        sched.push(value(rest as f64 * h + tail / 2.0), tail)?;
    }
    Ok(sched)
}

/// Seeded stress control with L¹ norm `k_budget`: 32 segments of random
/// sign and magnitude over unit total time.
pub fn stress_schedule(k_budget: f64, seed: u64) -> Result<ControlSchedule> {
    let mut rng = Rng::new(seed);
    let raw: Vec<(f64, f64)> = (0..32).map(|_| (rng.uniform_in(-1.0, 1.0), rng.uniform_in(0.5, 1.5))).collect();
    let total_dt: f64 = raw.iter().map(|(_, dt)| dt).sum();
    let l1: f64 = raw.iter().map(|(u, dt)| u.abs() * dt / total_dt).sum();
    let mut sched = ControlSchedule::new(format!("stress K={k_budget} seed={seed}"));
    for (u, dt) in raw {
        sched.push(u * k_budget / l1, dt / total_dt)?;
    }
    Ok(sched)
}

#[derive(Clone, Debug, Serialize)]
pub struct TruncationChoice {
    pub truncation: usize,
    /// `(N, gap between N and 2N)` for every order tried.
    pub history: Vec<(usize, f64)>,
}

pub const DEFAULT_TRUNCATION_CAP: usize = 4096;

/// Smallest order on the ladder `N, 2N, 4N, ...` (starting from the highest
/// occupied level) at which doubling the order moves the final states of a
/// seeded stress schedule with L¹ norm `k_budget` by less than `eps/2`.
///
/// This is a self-consistency test, not a proof of convergence.
pub fn select_truncation(
    spec: &ModelSpec,
    psi_list: &[QuantumState],
    k_budget: f64,
    eps: f64,
    seed: u64,
    cap: usize,
) -> Result<TruncationChoice> {
    if !(eps > 0.0) {
        return Err(Error::domain("tolerance must be positive"));
    }
    if !(k_budget >= 0.0) {
        return Err(Error::domain("L¹ budget must be nonnegative"));
    }
    let cap = spec.max_level().map_or(cap, |m| m.min(cap));
    let support = psi_list.iter().filter_map(QuantumState::highest_level).max().unwrap_or(1);
    let sched = stress_schedule(k_budget, seed)?;
    let mut n = support.max(2);
    let mut history = Vec::new();
    let mut last_gap = f64::NAN;
    while 2 * n <= cap {
        let coarse = Propagator::for_model(spec, n)?;
        let fine = Propagator::for_model(spec, 2 * n)?;
        let mut gap: f64 = 0.0;
        for psi in psi_list {
            let a = coarse.propagate(&sched, psi)?.final_state;
            let b = fine.propagate(&sched, psi)?.final_state;
            gap = gap.max(a.distance(&b));
        }
        history.push((n, gap));
        last_gap = gap;
        if gap < eps / 2.0 {
            return Ok(TruncationChoice { truncation: n, history });
        }
        n *= 2;
    }
    Err(Error::TruncationCapExhausted { cap, last_gap })
}

#[derive(Clone, Debug, Serialize)]
pub struct NormGrowthReport {
    pub k: f64,
    pub c: f64,
    pub l1_norm: f64,
    pub initial_norm: f64,
    pub final_norm: f64,
    /// `‖ψ_T‖_{k/2} / ‖ψ_0‖_{k/2}`.
    pub ratio: f64,
    /// `e^{c·‖u‖_{L¹}}`.
    pub bound: f64,
    pub within_bound: bool,
    pub truncation: usize,
}

/// Compares the growth of `‖·‖_{k/2}` along a schedule with `e^{cK}`.
pub fn norm_growth_check(
    spec: &ModelSpec,
    sched: &ControlSchedule,
    psi0: &QuantumState,
    k: f64,
    c: f64,
    truncation: usize,
) -> Result<NormGrowthReport> {
    let prop = Propagator::for_model(spec, truncation)?;
    let result = prop.propagate(sched, psi0)?;
    let initial_norm = weighted_norm(psi0, spec, k / 2.0)?;
    let final_norm = weighted_norm(&result.final_state, spec, k / 2.0)?;
    let l1_norm = sched.l1_norm();
    let bound = (c * l1_norm).exp();
    let ratio = final_norm / initial_norm;
    Ok(NormGrowthReport {
        k,
        c,
        l1_norm,
        initial_norm,
        final_norm,
        ratio,
        bound,
        within_bound: ratio <= bound * (1.0 + 1e-12),
        truncation,
    })
}
