//! The MRM loop: schedules, algorithm presets, state updates and recording.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, GridPoint};
use crate::feedback::{self, Draws, FeedbackError, FeedbackMode, GradientSignal, NoiseKind, NoiseModel, RngStream, SignalContext};
use crate::games::{norm, GameSpec};
use crate::mirror::{MirrorError, MirrorKind, MirrorMap};

/// Divergence guard on the dual norm.
pub const DIVERGENCE_BOUND: f64 = 1e9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Mirror(#[from] MirrorError),
    #[error(transparent)]
    Feedback(#[from] FeedbackError),
    #[error("non-finite dual state at n = {0}")]
    NonFinite(u64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Sga,
    Seqga,
    Eg,
    Og,
    Ew,
    Mp,
    Spsa,
    Dga,
    Exp3,
}

impl Algorithm {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "sga" => Algorithm::Sga,
            "seqga" => Algorithm::Seqga,
            "eg" => Algorithm::Eg,
            "og" => Algorithm::Og,
            "ew" => Algorithm::Ew,
            "mp" => Algorithm::Mp,
            "spsa" => Algorithm::Spsa,
            "dga" => Algorithm::Dga,
            "exp3" => Algorithm::Exp3,
            _ => return None,
        })
    }

    pub fn id(&self) -> &'static str {
        match self {
            Algorithm::Sga => "sga",
            Algorithm::Seqga => "seqga",
            Algorithm::Eg => "eg",
            Algorithm::Og => "og",
            Algorithm::Ew => "ew",
            Algorithm::Mp => "mp",
            Algorithm::Spsa => "spsa",
            Algorithm::Dga => "dga",
            Algorithm::Exp3 => "exp3",
        }
    }

    pub fn default_mirror(&self) -> MirrorKind {
        match self {
            Algorithm::Ew | Algorithm::Exp3 => MirrorKind::Logit,
            Algorithm::Dga => MirrorKind::ExpOrthant,
            _ => MirrorKind::Euclidean,
        }
    }

    /// Methods that observe payoffs rather than gradients.
    pub fn payoff_based(&self) -> bool {
        matches!(self, Algorithm::Spsa | Algorithm::Dga | Algorithm::Exp3)
    }

    pub fn uses_sampling_schedule(&self) -> bool {
        matches!(self, Algorithm::Spsa | Algorithm::Exp3)
    }
}

/// γ_n = γ/n^p and optionally δ_n = δ/n^r.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub gamma: f64,
    pub p: f64,
    pub delta: Option<f64>,
    pub r: Option<f64>,
}

impl Schedule {
    pub fn new(gamma: f64, p: f64) -> Self {
        Schedule { gamma, p, delta: None, r: None }
    }

    pub fn with_sampling(mut self, delta: f64, r: f64) -> Self {
        self.delta = Some(delta);
        self.r = Some(r);
        self
    }

    pub fn gamma_n(&self, n: u64) -> f64 {
        if self.p == 0.0 {
            self.gamma
        } else {
            self.gamma / (n as f64).powf(self.p)
        }
    }

    pub fn delta_n(&self, n: u64) -> f64 {
        match (self.delta, self.r) {
            (Some(d), Some(r)) => d / (n as f64).powf(r),
            _ => 0.0,
        }
    }

    /// τ_n = Σ_{k ≤ n} γ_k.
    pub fn effective_time(&self, n: u64) -> f64 {
        (1..=n).map(|k| self.gamma_n(k)).sum()
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(format!("gamma must be positive, got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.p) {
            return Err(format!("p must lie in [0, 1], got {}", self.p));
        }
        if let Some(r) = self.r {
            if !(r > 0.0 && r < 0.5) {
                return Err(format!("r must lie in (0, 1/2), got {r}"));
            }
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d.is_finite()) {
                return Err(format!("delta must be positive, got {d}"));
            }
        }
        Ok(())
    }
}

/// Declared rate roles: bias B_n = O(n^{−ℓ_b}), magnitude M_n = O(n^{ℓ_σ}).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeclaredRates {
    pub ell_b: f64,
    pub ell_sigma: f64,
}

pub fn declared_rates(alg: Algorithm, s: &Schedule) -> DeclaredRates {
    let r = s.r.unwrap_or(0.0);
    match alg {
        Algorithm::Sga | Algorithm::Ew => DeclaredRates { ell_b: f64::INFINITY, ell_sigma: 0.0 },
        Algorithm::Seqga | Algorithm::Eg | Algorithm::Og | Algorithm::Mp => DeclaredRates { ell_b: s.p, ell_sigma: 0.0 },
        Algorithm::Spsa | Algorithm::Exp3 => DeclaredRates { ell_b: r, ell_sigma: r },
        Algorithm::Dga => DeclaredRates { ell_b: 1.0, ell_sigma: 0.0 },
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "ict")]
    Ict,
    #[serde(rename = "primal")]
    Primal,
    #[serde(rename = "coherent-local")]
    CoherentLocal,
}

impl Regime {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ict" => Some(Regime::Ict),
            "primal" => Some(Regime::Primal),
            "coherent-local" => Some(Regime::CoherentLocal),
            _ => None,
        }
    }

    /// Parameter windows of the convergence theorems.
    pub fn check(&self, alg: Algorithm, s: &Schedule, q: f64) -> Result<(), String> {
        let rates = declared_rates(alg, s);
        let p = s.p;
        match self {
            Regime::Ict => {
                if !(p > 0.5 && p <= 1.0) {
                    return Err(format!("regime ict needs p in (1/2, 1], got {p}"));
                }
                if alg.uses_sampling_schedule() {
                    let r = s.r.unwrap_or(0.0);
                    if !(1.0 - p < r && r < p - 0.5) {
                        return Err(format!("regime ict needs 1-p < r < p-1/2, got p={p}, r={r}"));
                    }
                }
                Ok(())
            }
            Regime::Primal => {
                if !(p + rates.ell_b > 1.0) {
                    return Err(format!("regime primal needs p + ell_b > 1, got {}", p + rates.ell_b));
                }
                if !(p - rates.ell_sigma > 0.5) {
                    return Err(format!("regime primal needs p - ell_sigma > 1/2, got {}", p - rates.ell_sigma));
                }
                Ok(())
            }
            Regime::CoherentLocal => {
                let a = p - rates.ell_sigma > 0.5;
                let ratio = if q.is_infinite() { 1.0 } else { q / (2.0 + q) };
                let b = p < ratio && rates.ell_sigma < 0.5 - 1.0 / q;
                if a || b {
                    Ok(())
                } else {
                    Err(format!("regime coherent-local needs p - ell_sigma > 1/2 or (p < q/(2+q) and ell_sigma < 1/2 - 1/q); got p={p}, ell_sigma={}, q={q}", rates.ell_sigma))
                }
            }
        }
    }
}

/// Which iterations are kept in the record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thinning {
    pub every: u64,
    pub head: u64,
    pub tail: usize,
    /// Effective-time windows [a, b] recorded densely.
    pub windows: Vec<(f64, f64)>,
}

impl Thinning {
    pub fn default_for(iters: u64) -> Self {
        Thinning { every: iters.div_ceil(10_000).max(1), head: 100, tail: 100, windows: Vec::new() }
    }

    pub fn dense() -> Self {
        Thinning { every: 1, head: 0, tail: 0, windows: Vec::new() }
    }

    pub fn every(k: u64) -> Self {
        Thinning { every: k.max(1), head: 100, tail: 100, windows: Vec::new() }
    }

    pub fn with_windows(mut self, w: Vec<(f64, f64)>) -> Self {
        self.windows = w;
        self
    }

    fn keep(&self, n: u64, tau: f64) -> bool {
        n <= self.head || n % self.every == 0 || self.windows.iter().any(|&(a, b)| tau >= a && tau <= b)
    }
}

/// Fully specified run.
#[derive(Clone, Debug)]
pub struct RunSpec {
    pub algorithm: Algorithm,
    pub feedback: FeedbackMode,
    pub game: GameSpec,
    pub map: MirrorMap,
    pub schedule: Schedule,
    pub noise: NoiseModel,
    pub seed: u64,
    pub iters: u64,
    pub thinning: Thinning,
    pub y0: Vec<f64>,
    pub log_half: bool,
    pub store_signals: bool,
    pub regime: Option<Regime>,
}

impl RunSpec {
    /// Spec with defaults: perfect oracle, zero initial dual state, default thinning.
    pub fn new(algorithm: Algorithm, game: GameSpec, map: MirrorMap, schedule: Schedule, iters: u64) -> Self {
        let d = game.dim();
        RunSpec {
            algorithm,
            feedback: FeedbackMode::Full,
            game,
            map,
            schedule,
            noise: NoiseModel::none(),
            seed: 0,
            iters,
            thinning: Thinning::default_for(iters),
            y0: vec![0.0; d],
            log_half: false,
            store_signals: false,
            regime: None,
        }
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_y0(mut self, y0: Vec<f64>) -> Self {
        self.y0 = y0;
        self
    }

    pub fn with_thinning(mut self, t: Thinning) -> Self {
        self.thinning = t;
        self
    }

    pub fn with_feedback(mut self, f: FeedbackMode) -> Self {
        self.feedback = f;
        self
    }

    pub fn with_signals(mut self) -> Self {
        self.store_signals = true;
        self
    }

    /// Preset/map/game compatibility and schedule windows.
    pub fn validate(&self) -> Result<(), EngineError> {
        let cfg = |m: String| Err(EngineError::Config(m));
        let alg = self.algorithm;
        let kind = self.map.kind();
        if self.map.action_sets() != self.game.action_sets.as_slice() {
            return cfg("mirror map was built for different action sets than the game".into());
        }
        if self.y0.len() != self.game.dim() {
            return cfg(format!("y0 has {} entries, the game has dimension {}", self.y0.len(), self.game.dim()));
        }
        if self.y0.iter().any(|v| !v.is_finite()) {
            return cfg("y0 must be finite".into());
        }
        self.schedule.validate().map_err(EngineError::Config)?;
        match alg {
            Algorithm::Ew | Algorithm::Exp3 => {
                if kind != MirrorKind::Logit {
                    return cfg(format!("algorithm {} requires the logit map on simplices, got mirror '{}'", alg.id(), kind.id()));
                }
                if self.game.finite().is_none() && (alg == Algorithm::Exp3 || self.feedback == FeedbackMode::Realized) {
                    return cfg(format!("algorithm {} with sampled feedback needs the mixed extension of a finite game", alg.id()));
                }
            }
            Algorithm::Dga => {
                if kind != MirrorKind::ExpOrthant {
                    return cfg(format!("algorithm dga requires the exp_orthant map, got mirror '{}'", kind.id()));
                }
                if self.schedule.gamma != 1.0 || self.schedule.p != 1.0 {
                    return cfg("algorithm dga fixes gamma_n = 1/n (gamma = 1, p = 1)".into());
                }
            }
            Algorithm::Spsa => {
                if self.game.action_sets.iter().any(|s| !matches!(s, crate::games::ActionSet::Full { .. })) {
                    return cfg("algorithm spsa is implemented for unconstrained action sets only".into());
                }
            }
            _ => {}
        }
        if alg.uses_sampling_schedule() && (self.schedule.delta.is_none() || self.schedule.r.is_none()) {
            return cfg(format!("algorithm {} needs delta and r", alg.id()));
        }
        if alg == Algorithm::Exp3 && self.schedule.delta.unwrap_or(0.0) > 1.0 {
            return cfg("exp3 exploration delta must lie in (0, 1]".into());
        }
        if alg.payoff_based() && !self.noise.is_none() {
            return cfg(format!("algorithm {} observes payoffs and takes no oracle noise", alg.id()));
        }
        if self.feedback == FeedbackMode::Realized && alg != Algorithm::Ew {
            return cfg("feedback = realized only applies to ew".into());
        }
        let needs_bounded = alg == Algorithm::Og || (alg == Algorithm::Ew && self.feedback == FeedbackMode::Realized);
        if needs_bounded && !self.noise.is_none() && self.noise.q != feedback::Moment::Inf {
            return cfg(format!("algorithm {} requires bounded noise (q = inf)", alg.id()));
        }
        if self.noise.kind == NoiseKind::Ball && self.noise.q != feedback::Moment::Inf {
            return cfg("ball noise certifies q = inf".into());
        }
        if self.noise.kind == NoiseKind::Gaussian && self.noise.q == feedback::Moment::Inf {
            return cfg("gaussian noise is unbounded; declare q = 2 or 4".into());
        }
        if let Some(reg) = self.regime {
            reg.check(alg, &self.schedule, self.noise.q.value()).map_err(EngineError::Config)?;
        }
        Ok(())
    }

    pub fn context<'a>(&'a self, st: &'a MrmState) -> SignalContext<'a> {
        SignalContext {
            game: &self.game,
            map: &self.map,
            n: st.n,
            y: &st.y,
            x: &st.x,
            gamma: self.schedule.gamma_n(st.n),
            delta: self.schedule.delta_n(st.n),
            noise: &self.noise,
            prev: st.prev.as_deref(),
        }
    }

    /// Build the stage-n signal from the given randomness.
    pub fn stage_signal(&self, st: &MrmState, draws: &mut dyn Draws) -> Result<GradientSignal, EngineError> {
        let ctx = self.context(st);
        Ok(match self.algorithm {
            Algorithm::Sga => feedback::signal_sga(&ctx, draws),
            Algorithm::Seqga => feedback::signal_seqga(&ctx, draws)?,
            Algorithm::Eg => feedback::signal_eg(&ctx, draws)?,
            Algorithm::Mp => feedback::signal_mp(&ctx, draws)?,
            Algorithm::Og => feedback::signal_og(&ctx, draws)?,
            Algorithm::Ew => feedback::signal_ew(&ctx, self.feedback, draws)?,
            Algorithm::Spsa => feedback::signal_spsa(&ctx, draws),
            Algorithm::Dga => feedback::signal_dga(&ctx, draws),
            Algorithm::Exp3 => feedback::signal_exp3(&ctx, draws)?,
        })
    }

    pub fn initial_state(&self) -> Result<MrmState, EngineError> {
        let x = self.map.mirror(&self.y0)?;
        Ok(MrmState { n: 1, y: self.y0.clone(), x, prev: None })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MrmState {
    pub n: u64,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    /// OG's stored oracle output.
    pub prev: Option<Vec<f64>>,
}

/// y ← y + γ v̂, x ← Q(y), n ← n + 1.
pub fn mrm_step(state: &mut MrmState, signal: &[f64], gamma: f64, map: &MirrorMap) -> Result<(), EngineError> {
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(EngineError::NonFinite(state.n));
    }
    state.y.iter_mut().zip(signal).for_each(|(y, v)| *y += gamma * v);
    if state.y.iter().any(|v| !v.is_finite()) {
        return Err(EngineError::NonFinite(state.n));
    }
    map.mirror_into(&state.y, &mut state.x)?;
    state.n += 1;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub n: u64,
    pub half: bool,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
    pub signal_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub signal: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub steps: u64,
    pub oracle_calls: u64,
    pub payoff_queries: u64,
    pub clips: u64,
}

impl Counters {
    pub fn clip_rate(&self) -> f64 {
        if self.steps == 0 {
            0.0
        } else {
            self.clips as f64 / self.steps as f64
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RunFailure {
    Diverged { n: u64, dual_norm: f64 },
    NonFinite { n: u64 },
    Overflow { n: u64, message: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMeta {
    pub algorithm: Algorithm,
    pub feedback: FeedbackMode,
    pub game: String,
    pub mirror: MirrorKind,
    pub strong_convexity: f64,
    pub restriction_radius: Option<f64>,
    pub schedule: Schedule,
    pub declared_rates: DeclaredRates,
    pub noise: NoiseModel,
    pub seed: u64,
    pub iters: u64,
    pub dim: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Terminal {
    pub n: u64,
    pub y: Vec<f64>,
    pub x: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub meta: RunMeta,
    pub rows: Vec<Row>,
    pub terminal: Terminal,
    pub counters: Counters,
    pub failure: Option<RunFailure>,
    pub warnings: Vec<String>,
    /// sup over all visited n of ‖y_n‖.
    pub sup_dual_norm: f64,
}

impl RunRecord {
    pub fn full_rows(&self) -> impl Iterator<Item = &Row> {
        self.rows.iter().filter(|r| !r.half)
    }
}

/// One completed step, as seen by an observer.
pub struct StepView<'a> {
    pub n: u64,
    pub gamma: f64,
    pub y: &'a [f64],
    pub x: &'a [f64],
    /// OG's stored signal before this step.
    pub prev: Option<&'a [f64]>,
    pub signal: &'a GradientSignal,
    pub y_next: &'a [f64],
    pub x_next: &'a [f64],
}

pub trait StepObserver {
    fn observe(&mut self, step: &StepView);
}

impl StepObserver for () {
    fn observe(&mut self, _: &StepView) {}
}

impl<F: FnMut(&StepView)> StepObserver for F {
    fn observe(&mut self, step: &StepView) {
        self(step)
    }
}

pub fn run(spec: &RunSpec) -> Result<RunRecord, EngineError> {
    run_observed(spec, &mut ())
}

/// Run the recursion, calling `observer` after every step.
pub fn run_observed(spec: &RunSpec, observer: &mut dyn StepObserver) -> Result<RunRecord, EngineError> {
    spec.validate()?;
    let stream = RngStream::new(spec.seed);
    let mut st = spec.initial_state()?;
    let mut counters = Counters::default();
    let mut failure = None;
    let mut sup = norm(&st.y);
    let mut tau = 0.0;
    let thin = &spec.thinning;

    let mut rec = Recorder::new(thin.tail);

    while st.n <= spec.iters {
        let n = st.n;
        let gamma = spec.schedule.gamma_n(n);
        let signal = {
            let mut draws = stream.stage(n);
            match spec.stage_signal(&st, &mut draws) {
                Ok(s) => s,
                Err(EngineError::Mirror(MirrorError::Overflow { value, bound })) => {
                    failure = Some(RunFailure::Overflow { n, message: format!("dual value {value} beyond {bound} in a leading state") });
                    break;
                }
                Err(e) => return Err(e),
            }
        };
        counters.steps += 1;
        counters.oracle_calls += signal.oracle_calls as u64;
        counters.payoff_queries += signal.payoff_queries as u64;
        counters.clips += signal.clips as u64;
        if !signal.is_finite() {
            failure = Some(RunFailure::NonFinite { n });
            break;
        }
        let keep = thin.keep(n, tau);
        let sn = norm(&signal.value);
        rec.push(Row { n, half: false, y: st.y.clone(), x: st.x.clone(), signal_norm: sn, signal: spec.store_signals.then(|| signal.value.clone()) }, keep);
        if spec.log_half {
            if let Some((yh, xh)) = &signal.half {
                rec.push(Row { n, half: true, y: yh.clone(), x: xh.clone(), signal_norm: f64::NAN, signal: None }, keep);
            }
        }
        let y_prev = st.y.clone();
        let x_prev = st.x.clone();
        let prev_signal = st.prev.clone();
        match mrm_step(&mut st, &signal.value, gamma, &spec.map) {
            Ok(()) => {}
            Err(EngineError::NonFinite(n)) => {
                failure = Some(RunFailure::NonFinite { n });
                break;
            }
            Err(EngineError::Mirror(MirrorError::Overflow { value, bound })) => {
                failure = Some(RunFailure::Overflow { n, message: format!("dual value {value} beyond {bound}") });
                // restore a consistent state
                st.y = y_prev;
                st.x = x_prev;
                break;
            }
            Err(e) => return Err(e),
        }
        tau += gamma;
        if spec.algorithm == Algorithm::Og {
            st.prev = Some(signal.value.clone());
        }
        observer.observe(&StepView { n, gamma, y: &y_prev, x: &x_prev, prev: prev_signal.as_deref(), signal: &signal, y_next: &st.y, x_next: &st.x });
        let yn = norm(&st.y);
        sup = sup.max(yn);
        if yn > DIVERGENCE_BOUND {
            failure = Some(RunFailure::Diverged { n: st.n, dual_norm: yn });
            break;
        }
    }
    let kept = rec.finish();

    let mut warnings = Vec::new();
    if counters.clip_rate() > 0.01 {
        warnings.push(format!("log-argument clipped on {} of {} steps ({:.2}%)", counters.clips, counters.steps, 100.0 * counters.clip_rate()));
    }
    Ok(RunRecord {
        meta: RunMeta {
            algorithm: spec.algorithm,
            feedback: spec.feedback,
            game: spec.game.id.clone(),
            mirror: spec.map.kind(),
            strong_convexity: spec.map.strong_convexity(),
            restriction_radius: spec.map.restriction_radius(),
            schedule: spec.schedule,
            declared_rates: declared_rates(spec.algorithm, &spec.schedule),
            noise: spec.noise,
            seed: spec.seed,
            iters: spec.iters,
            dim: spec.game.dim(),
        },
        rows: kept,
        terminal: Terminal { n: st.n, y: st.y, x: st.x },
        counters,
        failure,
        warnings,
        sup_dual_norm: sup,
    })
}

/// Thinned rows plus a ring buffer holding the most recent ones.
struct Recorder {
    cap: usize,
    kept: Vec<Row>,
    ring: VecDeque<(Row, bool)>,
    full_in_ring: usize,
}

impl Recorder {
    fn new(cap: usize) -> Self {
        Recorder { cap, kept: Vec::new(), ring: VecDeque::new(), full_in_ring: 0 }
    }

    fn push(&mut self, row: Row, keep: bool) {
        if self.cap == 0 {
            if keep {
                self.kept.push(row);
            }
            return;
        }
        if !row.half {
            self.full_in_ring += 1;
        }
        self.ring.push_back((row, keep));
        // evict a full row together with the half rows that follow it
        while self.full_in_ring > self.cap {
            let (r, k) = self.ring.pop_front().unwrap();
            if !r.half {
                self.full_in_ring -= 1;
            }
            if k {
                self.kept.push(r);
            }
            while self.ring.front().is_some_and(|(r, _)| r.half) {
                let (r, k) = self.ring.pop_front().unwrap();
                if k {
                    self.kept.push(r);
                }
            }
        }
    }

    fn finish(mut self) -> Vec<Row> {
        self.kept.extend(self.ring.into_iter().map(|(r, _)| r));
        self.kept
    }
}

/// How the conditional mean of a stage signal is computed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CondMethod {
    /// Exhaustive enumeration of discrete randomness; MC fallback if continuous noise enters nonlinearly.
    Auto { mc_draws: usize },
    MonteCarlo { draws: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct CondStats {
    pub mean: Vec<f64>,
    /// Essential supremum of ‖v̂‖ over outcomes with positive probability (exact methods only).
    pub ess_sup: Option<f64>,
    pub exact: bool,
}

/// E[v̂_n | state] for the run's algorithm at `st`.
pub fn conditional_signal(spec: &RunSpec, st: &MrmState, method: CondMethod, salt: u8) -> Result<CondStats, EngineError> {
    let affine_in_noise = matches!(spec.algorithm, Algorithm::Sga | Algorithm::Ew);
    let mc = |draws: usize| -> Result<CondStats, EngineError> {
        let stream = RngStream::probe(spec.seed ^ 0x9e37_79b9_7f4a_7c15, salt);
        let mut mean = vec![0.0; spec.game.dim()];
        for k in 0..draws {
            let mut d = stream.stage(st.n * 1_000_003 + k as u64);
            let s = spec.stage_signal(st, &mut d)?;
            mean.iter_mut().zip(&s.value).for_each(|(m, v)| *m += v / draws as f64);
        }
        Ok(CondStats { mean, ess_sup: None, exact: false })
    };
    match method {
        CondMethod::MonteCarlo { draws } => mc(draws),
        CondMethod::Auto { mc_draws } => {
            let zero_noise = affine_in_noise || spec.noise.is_none();
            match feedback::enumerate_outcomes(|d| spec.stage_signal(st, d).map_err(to_feedback), zero_noise) {
                Ok(outs) => {
                    let mut mean = vec![0.0; spec.game.dim()];
                    let mut sup: f64 = 0.0;
                    for (p, s) in &outs {
                        mean.iter_mut().zip(&s.value).for_each(|(m, v)| *m += p * v);
                        if *p > 0.0 {
                            sup = sup.max(norm(&s.value));
                        }
                    }
                    Ok(CondStats { mean, ess_sup: spec.noise.is_none().then_some(sup), exact: true })
                }
                Err(FeedbackError::NotEnumerable) => mc(mc_draws),
                Err(e) => Err(e.into()),
            }
        }
    }
}

fn to_feedback(e: EngineError) -> FeedbackError {
    match e {
        EngineError::Feedback(f) => f,
        EngineError::Mirror(m) => FeedbackError::Mirror(m),
        _ => FeedbackError::NotFinite,
    }
}

/// Outcome of one sweep entry.
#[derive(Clone, Debug)]
pub struct SweepItem {
    pub seed: u64,
    pub point: GridPoint,
    pub result: Result<RunRecord, String>,
}

/// Run every (grid point, seed) pair in parallel; failures are kept per entry.
pub fn sweep(base: &ExperimentConfig, seeds: &[u64], grid: &[GridPoint]) -> Vec<SweepItem> {
    let jobs: Vec<(GridPoint, u64)> = grid.iter().flat_map(|g| seeds.iter().map(move |&s| (g.clone(), s))).collect();
    jobs.into_par_iter()
        .map(|(point, seed)| {
            let result = (|| -> Result<RunRecord, String> {
                let cfg = base.with_overrides(&point).map_err(|e: ConfigError| e.to_string())?.with_seed(seed);
                let spec = cfg.build().map_err(|e| e.to_string())?;
                run(&spec).map_err(|e| e.to_string())
            })();
            SweepItem { seed, point, result }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games;

    fn euclid(g: &GameSpec) -> MirrorMap {
        MirrorMap::for_game(MirrorKind::Euclidean, g).unwrap()
    }

    #[test]
    fn zero_signal_is_identity() {
        let g = games::bilinear(None);
        let m = euclid(&g);
        let mut st = MrmState { n: 1, y: vec![0.3, -0.1], x: vec![0.3, -0.1], prev: None };
        mrm_step(&mut st, &[0.0, 0.0], 0.5, &m).unwrap();
        assert_eq!(st.y, vec![0.3, -0.1]);
        assert_eq!(st.x, vec![0.3, -0.1]);
        assert_eq!(st.n, 2);
    }

    #[test]
    fn step_arithmetic() {
        let g = games::bilinear(None);
        let m = euclid(&g);
        let mut st = MrmState { n: 1, y: vec![0.0, 0.0], x: vec![0.0, 0.0], prev: None };
        mrm_step(&mut st, &[1.0, -1.0], 0.1, &m).unwrap();
        assert_eq!(st.y, vec![0.1, -0.1]);
        assert_eq!(st.x, st.y);
    }

    #[test]
    fn logit_step_closed_form() {
        let g = games::matching_pennies();
        let m = MirrorMap::new(MirrorKind::Logit, &[games::ActionSet::Simplex { dim: 2 }]).unwrap();
        let _ = g;
        let mut st = MrmState { n: 1, y: vec![0.0, 0.0], x: vec![0.5, 0.5], prev: None };
        mrm_step(&mut st, &[1.0, 0.0], 1.0, &m).unwrap();
        let e = std::f64::consts::E;
        assert!((st.x[0] - e / (e + 1.0)).abs() < 1e-15 && (st.x[1] - 1.0 / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn nonfinite_signal_aborts() {
        let g = games::bilinear(None);
        let m = euclid(&g);
        let mut st = MrmState { n: 3, y: vec![0.0, 0.0], x: vec![0.0, 0.0], prev: None };
        assert_eq!(mrm_step(&mut st, &[f64::NAN, 0.0], 0.1, &m), Err(EngineError::NonFinite(3)));
    }

    #[test]
    fn sga_contracts_geometrically() {
        let g = games::quadratic(1.0);
        let spec = RunSpec::new(Algorithm::Sga, g.clone(), euclid(&g), Schedule::new(0.1, 0.0), 200).with_y0(vec![1.0]).with_thinning(Thinning::dense());
        let rec = run(&spec).unwrap();
        for r in &rec.rows {
            let expect = 0.9f64.powi(r.n as i32 - 1);
            assert!((r.x[0] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn ew_on_prisoners_dilemma_defects_monotonically() {
        let g = games::prisoners_dilemma();
        let m = MirrorMap::for_game(MirrorKind::Logit, &g).unwrap();
        let spec = RunSpec::new(Algorithm::Ew, g, m, Schedule::new(0.1, 0.0), 1000).with_thinning(Thinning::dense());
        let rec = run(&spec).unwrap();
        // strict until successive shares agree to the last ulp below 1
        let d: Vec<f64> = rec.rows.iter().map(|r| r.x[1]).collect();
        assert!(d.windows(2).all(|w| w[1] > w[0] || (w[1] == w[0] && 1.0 - w[0] < 1e-12)));
        assert!(rec.rows.iter().all(|r| r.x.iter().all(|&v| v > 0.0)));
        assert!(rec.terminal.x[1] >= 0.99 && rec.terminal.x[3] >= 0.99);
    }

    #[test]
    fn same_seed_same_bytes() {
        let g = games::almost_bilinear(2f64.powi(-6));
        let spec = RunSpec::new(Algorithm::Eg, g.clone(), euclid(&g), Schedule::new(0.1, 0.6), 3000).with_noise(NoiseModel::gaussian(0.2)).with_seed(9).with_y0(vec![0.4, 0.1]);
        let a = serde_json::to_string(&run(&spec).unwrap()).unwrap();
        let b = serde_json::to_string(&run(&spec).unwrap()).unwrap();
        assert_eq!(a, b);
        let c = serde_json::to_string(&run(&spec.clone().with_seed(10)).unwrap()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn incompatible_presets_are_config_errors() {
        let pd = games::prisoners_dilemma();
        let spec = RunSpec::new(Algorithm::Ew, pd.clone(), euclid(&pd), Schedule::new(0.1, 0.0), 10);
        assert!(matches!(run(&spec), Err(EngineError::Config(_))));
        let d = games::decay(1.0);
        let spec = RunSpec::new(Algorithm::Dga, d.clone(), euclid(&d), Schedule::new(1.0, 1.0), 10);
        assert!(matches!(run(&spec), Err(EngineError::Config(_))));
        let m = MirrorMap::for_game(MirrorKind::ExpOrthant, &d).unwrap();
        let spec = RunSpec::new(Algorithm::Dga, d.clone(), m, Schedule::new(0.5, 1.0), 10);
        assert!(matches!(run(&spec), Err(EngineError::Config(_))));
        let b = games::bilinear(None);
        let spec = RunSpec::new(Algorithm::Og, b.clone(), euclid(&b), Schedule::new(0.1, 0.5), 10).with_noise(NoiseModel::gaussian(0.1));
        assert!(matches!(run(&spec), Err(EngineError::Config(_))));
    }

    #[test]
    fn accounting_per_preset() {
        let b = games::bilinear(None);
        let fg = games::prisoners_dilemma();
        let d = games::decay(0.5);
        let q = games::quadratic(1.0);
        let cases: Vec<(RunSpec, u64, u64)> = vec![
            (RunSpec::new(Algorithm::Sga, b.clone(), euclid(&b), Schedule::new(0.1, 0.5), 10), 1, 0),
            (RunSpec::new(Algorithm::Seqga, b.clone(), euclid(&b), Schedule::new(0.1, 0.5), 10), 1, 0),
            (RunSpec::new(Algorithm::Og, b.clone(), euclid(&b), Schedule::new(0.1, 0.5), 10), 1, 0),
            (RunSpec::new(Algorithm::Eg, b.clone(), euclid(&b), Schedule::new(0.1, 0.5), 10), 2, 0),
            (RunSpec::new(Algorithm::Mp, b.clone(), euclid(&b), Schedule::new(0.1, 0.5), 10), 2, 0),
            (RunSpec::new(Algorithm::Ew, fg.clone(), MirrorMap::for_game(MirrorKind::Logit, &fg).unwrap(), Schedule::new(0.1, 0.5), 10), 1, 0),
            (RunSpec::new(Algorithm::Exp3, fg.clone(), MirrorMap::for_game(MirrorKind::Logit, &fg).unwrap(), Schedule::new(0.1, 0.5).with_sampling(0.2, 0.25), 10), 0, 1),
            (RunSpec::new(Algorithm::Spsa, q.clone(), euclid(&q), Schedule::new(0.1, 1.0).with_sampling(0.5, 0.25), 10), 0, 1),
            (RunSpec::new(Algorithm::Dga, d.clone(), MirrorMap::for_game(MirrorKind::ExpOrthant, &d).unwrap(), Schedule::new(1.0, 1.0), 10), 0, 2),
        ];
        for (spec, oracle, payoff) in cases {
            let rec = run(&spec).unwrap();
            assert_eq!(rec.counters.oracle_calls, 10 * oracle, "{:?}", spec.algorithm);
            assert_eq!(rec.counters.payoff_queries, 10 * payoff, "{:?}", spec.algorithm);
        }
    }

    #[test]
    fn primal_matches_mirror_of_dual_at_every_row() {
        let g = games::discoordination();
        let m = MirrorMap::for_game(MirrorKind::TanhInterval, &g).unwrap();
        let spec = RunSpec::new(Algorithm::Og, g, m.clone(), Schedule::new(0.1, 0.6), 2000).with_noise(NoiseModel::ball(0.1)).with_y0(vec![0.2, 0.1]).with_thinning(Thinning::dense());
        let rec = run(&spec).unwrap();
        for r in &rec.rows {
            assert_eq!(r.x, m.mirror(&r.y).unwrap());
        }
        assert_eq!(rec.terminal.x, m.mirror(&rec.terminal.y).unwrap());
    }

    #[test]
    fn thinning_keeps_head_tail_and_stride() {
        let g = games::quadratic(1.0);
        let spec = RunSpec::new(Algorithm::Sga, g.clone(), euclid(&g), Schedule::new(0.1, 0.5), 50_000);
        let rec = run(&spec).unwrap();
        let ns: Vec<u64> = rec.rows.iter().map(|r| r.n).collect();
        assert!(ns.windows(2).all(|w| w[1] > w[0]));
        assert!(ns.starts_with(&(1..=100).collect::<Vec<_>>()));
        assert!(ns.ends_with(&(49_901..=50_000).collect::<Vec<_>>()));
        assert!(ns.contains(&25_000) && !ns.contains(&25_001));
    }

    #[test]
    fn half_rows_are_flagged() {
        let g = games::bilinear(None);
        let mut spec = RunSpec::new(Algorithm::Eg, g.clone(), euclid(&g), Schedule::new(0.1, 0.5), 5).with_thinning(Thinning::dense()).with_y0(vec![1.0, 1.0]);
        spec.log_half = true;
        let rec = run(&spec).unwrap();
        assert_eq!(rec.rows.len(), 10);
        assert!(rec.rows[1].half && rec.rows[1].n == 1);
        assert!((rec.rows[1].x[0] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn divergence_guard_trips() {
        let g = games::quadratic(-1.0);
        let spec = RunSpec::new(Algorithm::Sga, g.clone(), euclid(&g), Schedule::new(1.0, 0.8), 100_000).with_y0(vec![1.0]);
        let rec = run(&spec).unwrap();
        assert!(matches!(rec.failure, Some(RunFailure::Diverged { .. })));
    }

    #[test]
    fn regime_windows() {
        let s = Schedule::new(1.0, 0.8).with_sampling(0.5, 0.25);
        assert!(Regime::Ict.check(Algorithm::Spsa, &s, 2.0).is_ok());
        assert!(Regime::Ict.check(Algorithm::Spsa, &Schedule::new(1.0, 0.7).with_sampling(0.5, 0.25), 2.0).is_err());
        assert!(Regime::Primal.check(Algorithm::Eg, &Schedule::new(1.0, 0.6), 2.0).is_ok());
        assert!(Regime::Primal.check(Algorithm::Eg, &Schedule::new(1.0, 0.45), 2.0).is_err());
        assert!(Regime::CoherentLocal.check(Algorithm::Sga, &Schedule::new(1.0, 0.3), f64::INFINITY).is_ok());
        assert!(Regime::CoherentLocal.check(Algorithm::Exp3, &Schedule::new(1.0, 0.6).with_sampling(0.2, 0.25), 2.0).is_err());
    }

    #[test]
    fn effective_time_is_prefix_sum() {
        let s = Schedule::new(0.3, 0.7);
        let direct: f64 = (1..=1000u64).map(|k| 0.3 / (k as f64).powf(0.7)).sum();
        assert_eq!(s.effective_time(1000), direct);
    }
}
