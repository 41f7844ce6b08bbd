//! Gradient signals: stochastic first-order oracles and payoff-based estimators.
//!
//! Builders pull all their randomness through [`Draws`], so the same code runs
//! against the seeded stream of a run, against exhaustive enumeration of the
//! stage's discrete randomness, or with the oracle noise switched off.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::games::{norm, GameSpec};
use crate::mirror::{MirrorError, MirrorMap};

/// Lower clip applied to the DGA log argument.
pub const DGA_CLIP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeedbackError {
    #[error(transparent)]
    Mirror(#[from] MirrorError),
    #[error("finite game structure required for this signal")]
    NotFinite,
    #[error("stage randomness includes continuous noise and cannot be enumerated")]
    NotEnumerable,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKind {
    None,
    Gaussian,
    Ball,
}

/// Declared moment order q.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Moment {
    Two,
    Four,
    Inf,
}

impl Moment {
    pub fn value(&self) -> f64 {
        match self {
            Moment::Two => 2.0,
            Moment::Four => 4.0,
            Moment::Inf => f64::INFINITY,
        }
    }
}

/// Zero-mean additive oracle noise with E‖U‖^q ≤ σ^q for the declared q.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub kind: NoiseKind,
    pub sigma: f64,
    pub q: Moment,
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel { kind: NoiseKind::None, sigma: 0.0, q: Moment::Inf }
    }

    pub fn gaussian(sigma: f64) -> Self {
        NoiseModel { kind: NoiseKind::Gaussian, sigma, q: Moment::Two }
    }

    /// Gaussian scaled so that the fourth moment bound holds.
    pub fn gaussian_q4(sigma: f64) -> Self {
        NoiseModel { kind: NoiseKind::Gaussian, sigma, q: Moment::Four }
    }

    pub fn ball(sigma: f64) -> Self {
        NoiseModel { kind: NoiseKind::Ball, sigma, q: Moment::Inf }
    }

    pub fn is_none(&self) -> bool {
        self.kind == NoiseKind::None || self.sigma == 0.0
    }

    /// Per-coordinate standard deviation of the gaussian model in dimension d.
    pub fn gaussian_scale(&self, d: usize) -> f64 {
        let d = d as f64;
        match self.q {
            Moment::Four => self.sigma / (d * (d + 2.0)).powf(0.25),
            _ => self.sigma / d.sqrt(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, d: usize, rng: &mut R) -> Vec<f64> {
        if self.is_none() {
            return vec![0.0; d];
        }
        match self.kind {
            NoiseKind::None => vec![0.0; d],
            NoiseKind::Gaussian => {
                let s = self.gaussian_scale(d);
                (0..d).map(|_| { let z: f64 = StandardNormal.sample(rng); s * z }).collect()
            }
            NoiseKind::Ball => {
                let g: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                let n = norm(&g);
                let r = self.sigma * rng.random::<f64>().powf(1.0 / d as f64);
                g.into_iter().map(|v| r * v / n).collect()
            }
        }
    }
}

/// Source of stage randomness.
pub trait Draws {
    /// Additive oracle noise for query `leg` of the stage.
    fn noise(&mut self, model: &NoiseModel, leg: u8, dim: usize) -> Vec<f64>;
    /// Index drawn from `probs`.
    fn choose(&mut self, player: usize, probs: &[f64]) -> usize;
    /// Uniform index in `0..count`.
    fn pick(&mut self, player: usize, count: usize) -> usize;
    /// Uniform sign.
    fn sign(&mut self, player: usize, coord: usize) -> f64;
}

const TAG_NOISE: u8 = 1;
const TAG_CHOOSE: u8 = 2;
const TAG_PICK: u8 = 3;
const TAG_SIGN: u8 = 4;
const JOINT: u32 = u32::MAX;

/// Seeded stream keyed by (seed, iteration, purpose, player).
#[derive(Clone, Debug)]
pub struct RngStream {
    pub seed: u64,
    salt: u8,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream { seed, salt: 0 }
    }

    /// Independent family of streams for diagnostics that must not disturb the run.
    pub fn probe(seed: u64, salt: u8) -> Self {
        RngStream { seed, salt: salt.max(1) }
    }

    pub fn key(&self, n: u64, tag: u8, leg: u8, player: u32) -> [u8; 32] {
        let mut k = [0u8; 32];
        k[0..8].copy_from_slice(&self.seed.to_le_bytes());
        k[8..16].copy_from_slice(&n.to_le_bytes());
        k[16] = tag;
        k[17] = leg;
        k[18] = self.salt;
        k[20..24].copy_from_slice(&player.to_le_bytes());
        k
    }

    pub fn rng(&self, n: u64, tag: u8, leg: u8, player: u32) -> ChaCha8Rng {
        ChaCha8Rng::from_seed(self.key(n, tag, leg, player))
    }

    pub fn stage(&self, n: u64) -> StageDraws<'_> {
        StageDraws { stream: self, n, cache: Vec::new() }
    }
}

/// Stage-n randomness drawn from an [`RngStream`].
pub struct StageDraws<'a> {
    stream: &'a RngStream,
    n: u64,
    cache: Vec<([u8; 32], ChaCha8Rng)>,
}

impl StageDraws<'_> {
    fn rng(&mut self, tag: u8, leg: u8, player: u32) -> &mut ChaCha8Rng {
        let key = self.stream.key(self.n, tag, leg, player);
        let pos = match self.cache.iter().position(|(k, _)| *k == key) {
            Some(p) => p,
            None => {
                self.cache.push((key, ChaCha8Rng::from_seed(key)));
                self.cache.len() - 1
            }
        };
        &mut self.cache[pos].1
    }
}

impl Draws for StageDraws<'_> {
    fn noise(&mut self, model: &NoiseModel, leg: u8, dim: usize) -> Vec<f64> {
        if model.is_none() {
            return vec![0.0; dim];
        }
        model.sample(dim, self.rng(TAG_NOISE, leg, JOINT))
    }

    fn choose(&mut self, player: usize, probs: &[f64]) -> usize {
        let u: f64 = self.rng(TAG_CHOOSE, 0, player as u32).random();
        let total: f64 = probs.iter().sum();
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p / total;
            if u < acc {
                return k;
            }
        }
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
    }

    fn pick(&mut self, player: usize, count: usize) -> usize {
        self.rng(TAG_PICK, 0, player as u32).random_range(0..count)
    }

    fn sign(&mut self, player: usize, coord: usize) -> f64 {
        let leg = coord.min(255) as u8;
        if self.rng(TAG_SIGN, leg, player as u32).random::<bool>() {
            1.0
        } else {
            -1.0
        }
    }
}

/// Replays a script of discrete choices, tracking the realized probability.
struct Scripted {
    script: Vec<usize>,
    arity: Vec<usize>,
    pos: usize,
    prob: f64,
    zero_noise: bool,
    noise_hit: bool,
}

impl Scripted {
    fn next(&mut self, arity: usize) -> usize {
        if self.pos == self.script.len() {
            self.script.push(0);
            self.arity.push(arity);
        }
        let c = self.script[self.pos];
        self.pos += 1;
        c
    }
}

impl Draws for Scripted {
    fn noise(&mut self, model: &NoiseModel, _leg: u8, dim: usize) -> Vec<f64> {
        if !model.is_none() && !self.zero_noise {
            self.noise_hit = true;
        }
        vec![0.0; dim]
    }

    fn choose(&mut self, _player: usize, probs: &[f64]) -> usize {
        let c = self.next(probs.len());
        let total: f64 = probs.iter().sum();
        self.prob *= probs[c] / total;
        c
    }

    fn pick(&mut self, _player: usize, count: usize) -> usize {
        let c = self.next(count);
        self.prob /= count as f64;
        c
    }

    fn sign(&mut self, _player: usize, _coord: usize) -> f64 {
        let c = self.next(2);
        self.prob *= 0.5;
        if c == 0 {
            1.0
        } else {
            -1.0
        }
    }
}

/// All outcomes of the stage's discrete randomness with their probabilities.
///
/// With `zero_noise`, additive oracle noise is replaced by zero; otherwise a
/// builder that asks for noise makes the enumeration fail.
pub fn enumerate_outcomes<T, F>(mut f: F, zero_noise: bool) -> Result<Vec<(f64, T)>, FeedbackError>
where
    F: FnMut(&mut dyn Draws) -> Result<T, FeedbackError>,
{
    let mut out = Vec::new();
    let mut prefix: Vec<usize> = Vec::new();
    let mut arity: Vec<usize> = Vec::new();
    loop {
        let mut s = Scripted { script: prefix.clone(), arity: arity.clone(), pos: 0, prob: 1.0, zero_noise, noise_hit: false };
        let value = f(&mut s)?;
        if s.noise_hit {
            return Err(FeedbackError::NotEnumerable);
        }
        out.push((s.prob, value));
        prefix = s.script;
        arity = s.arity;
        prefix.truncate(s.pos);
        arity.truncate(s.pos);
        // odometer increment from the last choice
        loop {
            match prefix.last_mut() {
                None => return Ok(out),
                Some(last) => {
                    *last += 1;
                    if *last < *arity.last().unwrap() {
                        break;
                    }
                    prefix.pop();
                    arity.pop();
                }
            }
        }
    }
}

/// The signal of one stage plus the half-step and accounting.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSignal {
    pub value: Vec<f64>,
    /// Leading state (y, x) for EG/OG/MP.
    pub half: Option<(Vec<f64>, Vec<f64>)>,
    /// Query point of payoff-based estimators.
    pub query: Option<Vec<f64>>,
    /// Sampled pure profile (EW realized, EXP3).
    pub profile: Option<Vec<usize>>,
    pub oracle_calls: u32,
    pub payoff_queries: u32,
    pub clips: u32,
}

impl GradientSignal {
    fn plain(value: Vec<f64>) -> Self {
        GradientSignal { value, half: None, query: None, profile: None, oracle_calls: 1, payoff_queries: 0, clips: 0 }
    }

    pub fn is_finite(&self) -> bool {
        self.value.iter().all(|v| v.is_finite())
    }
}

/// Everything a signal builder may look at when stage n begins.
#[derive(Clone, Copy)]
pub struct SignalContext<'a> {
    pub game: &'a GameSpec,
    pub map: &'a MirrorMap,
    pub n: u64,
    pub y: &'a [f64],
    pub x: &'a [f64],
    pub gamma: f64,
    /// Sampling radius δ_n (SPSA) or exploration ε_n (EXP3).
    pub delta: f64,
    pub noise: &'a NoiseModel,
    /// OG's stored oracle output from the previous stage.
    pub prev: Option<&'a [f64]>,
}

/// v(x) + U.
pub fn sfo(game: &GameSpec, x: &[f64], noise: &NoiseModel, leg: u8, draws: &mut dyn Draws) -> Vec<f64> {
    let mut v = game.field(x);
    let u = draws.noise(noise, leg, v.len());
    v.iter_mut().zip(u).for_each(|(a, b)| *a += b);
    v
}

pub fn signal_sga(ctx: &SignalContext, draws: &mut dyn Draws) -> GradientSignal {
    GradientSignal::plain(sfo(ctx.game, ctx.x, ctx.noise, 0, draws))
}

/// Players update in index order; player i is queried at the profile already
/// holding the new actions of players 0..i.
pub fn signal_seqga(ctx: &SignalContext, draws: &mut dyn Draws) -> Result<GradientSignal, FeedbackError> {
    let game = ctx.game;
    let u = draws.noise(ctx.noise, 0, game.dim());
    let mut z = ctx.x.to_vec();
    let mut yz = ctx.y.to_vec();
    let mut value = vec![0.0; game.dim()];
    for i in 0..game.n_players() {
        let r = game.block(i);
        let v = game.field(&z);
        for k in r.clone() {
            value[k] = v[k] + u[k];
            yz[k] = ctx.y[k] + ctx.gamma * value[k];
        }
        let x_new = ctx.map.mirror(&yz)?;
        z[r.clone()].copy_from_slice(&x_new[r]);
    }
    let mut s = GradientSignal::plain(value);
    s.oracle_calls = 1;
    Ok(s)
}

/// Extra-gradient (and mirror-prox for non-euclidean maps).
pub fn signal_eg(ctx: &SignalContext, draws: &mut dyn Draws) -> Result<GradientSignal, FeedbackError> {
    let lead = sfo(ctx.game, ctx.x, ctx.noise, 0, draws);
    let y_half: Vec<f64> = ctx.y.iter().zip(&lead).map(|(y, v)| y + ctx.gamma * v).collect();
    let x_half = ctx.map.mirror(&y_half)?;
    let value = sfo(ctx.game, &x_half, ctx.noise, 1, draws);
    let mut s = GradientSignal::plain(value);
    s.half = Some((y_half, x_half));
    s.oracle_calls = 2;
    Ok(s)
}

pub fn signal_mp(ctx: &SignalContext, draws: &mut dyn Draws) -> Result<GradientSignal, FeedbackError> {
    signal_eg(ctx, draws)
}

/// Optimistic gradient: the leading state reuses the previous stage's oracle output
/// (zero at n = 1).
pub fn signal_og(ctx: &SignalContext, draws: &mut dyn Draws) -> Result<GradientSignal, FeedbackError> {
    let y_half: Vec<f64> = match ctx.prev {
        Some(prev) => ctx.y.iter().zip(prev).map(|(y, v)| y + ctx.gamma * v).collect(),
        None => ctx.y.to_vec(),
    };
    let x_half = ctx.map.mirror(&y_half)?;
    let value = sfo(ctx.game, &x_half, ctx.noise, 1, draws);
    let mut s = GradientSignal::plain(value);
    s.half = Some((y_half, x_half));
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackMode {
    Full,
    Realized,
}

/// Exponential weights: mixed payoff vectors (full) or pure payoff vectors of a sampled profile.
pub fn signal_ew(ctx: &SignalContext, mode: FeedbackMode, draws: &mut dyn Draws) -> Result<GradientSignal, FeedbackError> {
    match mode {
        FeedbackMode::Full => Ok(signal_sga(ctx, draws)),
        FeedbackMode::Realized => {
            let fg = ctx.game.finite().ok_or(FeedbackError::NotFinite)?;
            let a: Vec<usize> = (0..fg.n_players()).map(|i| draws.choose(i, &ctx.x[ctx.game.block(i)])).collect();
            let mut value: Vec<f64> = (0..fg.n_players()).flat_map(|i| fg.pure_payoff_vector(i, &a)).collect();
            let u = draws.noise(ctx.noise, 0, value.len());
            value.iter_mut().zip(u).for_each(|(v, e)| *v += e);
            let mut s = GradientSignal::plain(value);
            s.profile = Some(a);
            Ok(s)
        }
    }
}

/// Simultaneous perturbation: w_i uniform on the signed basis of player i's block,
/// signal_i = (d_i/δ) u_i(x + δw) w_i.
pub fn signal_spsa(ctx: &SignalContext, draws: &mut dyn Draws) -> GradientSignal {
    let game = ctx.game;
    let delta = ctx.delta;
    let mut w = vec![0.0; game.dim()];
    for i in 0..game.n_players() {
        let r = game.block(i);
        let d = r.len();
        let c = draws.pick(i, 2 * d);
        w[r.start + c % d] = if c < d { 1.0 } else { -1.0 };
    }
    let q: Vec<f64> = ctx.x.iter().zip(&w).map(|(x, wk)| x + delta * wk).collect();
    let mut value = vec![0.0; game.dim()];
    for i in 0..game.n_players() {
        let r = game.block(i);
        let scale = r.len() as f64 / delta * game.payoff(i, &q);
        for k in r {
            value[k] = scale * w[k];
        }
    }
    GradientSignal { value, half: None, query: Some(q), profile: None, oracle_calls: 0, payoff_queries: 1, clips: 0 }
}

/// Dampened gradient approximation: X⁺ = X + Z/n, signal = n·log(1 + (u(X⁺) − u(X))·Z).
pub fn signal_dga(ctx: &SignalContext, draws: &mut dyn Draws) -> GradientSignal {
    let game = ctx.game;
    let n = ctx.n as f64;
    let z: Vec<f64> = (0..game.dim())
        .map(|k| {
            let i = (0..game.n_players()).find(|&i| game.block(i).contains(&k)).unwrap();
            draws.sign(i, k - game.block(i).start)
        })
        .collect();
    let plus: Vec<f64> = ctx.x.iter().zip(&z).map(|(x, zk)| x + zk / n).collect();
    let mut value = vec![0.0; game.dim()];
    let mut clips = 0;
    for i in 0..game.n_players() {
        let du = game.payoff(i, &plus) - game.payoff(i, ctx.x);
        for k in game.block(i) {
            let mut arg = 1.0 + du * z[k];
            if !(arg >= DGA_CLIP) {
                arg = DGA_CLIP;
                clips += 1;
            }
            value[k] = n * arg.ln();
        }
    }
    GradientSignal { value, half: None, query: Some(plus), profile: None, oracle_calls: 0, payoff_queries: 2, clips }
}

/// Mixing with uniform exploration: X̂ = (1−ε)x + ε·uniform, per player.
pub fn explore(game: &GameSpec, x: &[f64], eps: f64) -> Vec<f64> {
    let mut out = x.to_vec();
    for i in 0..game.n_players() {
        let r = game.block(i);
        let m = r.len() as f64;
        for k in r {
            out[k] = (1.0 - eps) * x[k] + eps / m;
        }
    }
    out
}

/// EXP3 importance-weighted estimate of the payoff vectors.
pub fn signal_exp3(ctx: &SignalContext, draws: &mut dyn Draws) -> Result<GradientSignal, FeedbackError> {
    let game = ctx.game;
    let fg = game.finite().ok_or(FeedbackError::NotFinite)?;
    let xh = explore(game, ctx.x, ctx.delta);
    let a: Vec<usize> = (0..fg.n_players()).map(|i| draws.choose(i, &xh[game.block(i)])).collect();
    let mut value = vec![0.0; game.dim()];
    for i in 0..fg.n_players() {
        let k = game.block(i).start + a[i];
        value[k] = fg.pure_payoff(i, &a) / xh[k];
    }
    Ok(GradientSignal { value, half: None, query: Some(xh), profile: Some(a), oracle_calls: 0, payoff_queries: 1, clips: 0 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::games::{self, ActionSet};
    use crate::mirror::MirrorKind;

    fn ctx<'a>(g: &'a GameSpec, m: &'a MirrorMap, y: &'a [f64], x: &'a [f64], noise: &'a NoiseModel) -> SignalContext<'a> {
        SignalContext { game: g, map: m, n: 1, y, x, gamma: 0.1, delta: 0.1, noise, prev: None }
    }

    #[test]
    fn perfect_oracle_is_exact() {
        let g = games::cournot(2.0, 1.0, 0.0, 1.0, 2);
        let s = RngStream::new(3);
        let v = sfo(&g, &[0.2, 0.4], &NoiseModel::none(), 0, &mut s.stage(1));
        assert_eq!(v, g.field(&[0.2, 0.4]));
    }

    #[test]
    fn gaussian_mean_is_unbiased() {
        let g = games::cournot(2.0, 1.0, 0.0, 1.0, 2);
        let sigma = 0.5;
        let noise = NoiseModel::gaussian(sigma);
        let s = RngStream::new(7);
        let x = [0.3, 0.1];
        let target = g.field(&x);
        let m = 100_000;
        let mut mean = [0.0; 2];
        for n in 0..m {
            let v = sfo(&g, &x, &noise, 0, &mut s.stage(n as u64 + 1));
            mean[0] += v[0] / m as f64;
            mean[1] += v[1] / m as f64;
        }
        let tol = 4.0 * sigma / (m as f64).sqrt();
        assert!((mean[0] - target[0]).abs() <= tol && (mean[1] - target[1]).abs() <= tol);
    }

    #[test]
    fn ball_noise_respects_radius() {
        let noise = NoiseModel::ball(0.3);
        let s = RngStream::new(11);
        for n in 1..5000 {
            let u = s.stage(n).noise(&noise, 0, 3);
            assert!(norm(&u) <= 0.3);
        }
    }

    #[test]
    fn eg_on_bilinear_by_hand() {
        let g = games::bilinear(None);
        let m = MirrorMap::for_game(MirrorKind::Euclidean, &g).unwrap();
        let noise = NoiseModel::none();
        let x = [1.0, 1.0];
        let c = ctx(&g, &m, &x, &x, &noise);
        let s = signal_eg(&c, &mut RngStream::new(0).stage(1)).unwrap();
        let (_, xh) = s.half.clone().unwrap();
        assert!((xh[0] - 0.9).abs() < 1e-15 && (xh[1] - 1.1).abs() < 1e-15);
        assert!((s.value[0] + 1.1).abs() < 1e-15 && (s.value[1] - 0.9).abs() < 1e-15);
        assert_eq!(s.oracle_calls, 2);
    }

    #[test]
    fn og_and_eg_differ_only_in_the_first_leg() {
        let g = games::almost_bilinear(2f64.powi(-6));
        let m = MirrorMap::for_game(MirrorKind::Euclidean, &g).unwrap();
        let noise = NoiseModel::ball(0.1);
        let y = [0.3, -0.2];
        let stream = RngStream::new(5);
        let c = ctx(&g, &m, &y, &y, &noise);
        let eg = signal_eg(&c, &mut stream.stage(4)).unwrap();
        // OG fed with EG's first-leg query gives the identical second leg
        let lead: Vec<f64> = eg.half.as_ref().unwrap().0.iter().zip(&y).map(|(h, y)| (h - y) / c.gamma).collect();
        let c_og = SignalContext { prev: Some(&lead), ..c };
        let og = signal_og(&c_og, &mut stream.stage(4)).unwrap();
        assert_eq!(og.half, eg.half);
        assert_eq!(og.value, eg.value);
        assert_eq!(og.oracle_calls, 1);
    }

    #[test]
    fn ew_realized_is_unbiased_by_enumeration_and_bounded() {
        let g = games::prisoners_dilemma();
        let m = MirrorMap::for_game(MirrorKind::Logit, &g).unwrap();
        let noise = NoiseModel::none();
        let x = [0.3, 0.7, 0.6, 0.4];
        let c = ctx(&g, &m, &x, &x, &noise);
        let outs = enumerate_outcomes(|d| signal_ew(&c, FeedbackMode::Realized, d), false).unwrap();
        assert_eq!(outs.len(), 4);
        let mut mean = vec![0.0; 4];
        for (p, s) in &outs {
            for k in 0..4 {
                mean[k] += p * s.value[k];
            }
            assert!(s.value.iter().all(|v| v.abs() <= 4.0));
        }
        let v = g.field(&x);
        assert!(mean.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn ew_realized_monte_carlo() {
        let g = games::matching_pennies();
        let m = MirrorMap::for_game(MirrorKind::Logit, &g).unwrap();
        let noise = NoiseModel::none();
        let x = [0.2, 0.8, 0.65, 0.35];
        let c = ctx(&g, &m, &x, &x, &noise);
        let s = RngStream::new(1);
        let draws = 100_000;
        let mut mean = vec![0.0; 4];
        for n in 0..draws {
            let v = signal_ew(&c, FeedbackMode::Realized, &mut s.stage(n + 1)).unwrap().value;
            mean.iter_mut().zip(v).for_each(|(a, b)| *a += b / draws as f64);
        }
        let v = g.field(&x);
        // each coordinate is ±1 valued, standard error ≤ 1/√draws
        assert!(mean.iter().zip(&v).all(|(a, b)| (a - b).abs() < 5.0 / (draws as f64).sqrt()));
    }

    #[test]
    fn spsa_expectations() {
        let quad = games::quadratic(1.0);
        let m = MirrorMap::for_game(MirrorKind::Euclidean, &quad).unwrap();
        let noise = NoiseModel::none();
        for &x0 in &[-1.3, 0.0, 0.7] {
            let x = [x0];
            let c = SignalContext { delta: 0.2, ..ctx(&quad, &m, &x, &x, &noise) };
            let outs = enumerate_outcomes(|d| Ok(signal_spsa(&c, d)), false).unwrap();
            let mean: f64 = outs.iter().map(|(p, s)| p * s.value[0]).sum();
            assert!((mean + x0).abs() < 1e-12);
        }
        let cubic = GameSpec::from_fn("cubic", vec![ActionSet::Full { dim: 1 }], |_, x| -x[0].powi(3) / 3.0, None::<fn(&[f64], &mut [f64])>);
        let delta = 0.3;
        let x = [0.8];
        let c = SignalContext { delta, ..ctx(&cubic, &m, &x, &x, &noise) };
        let outs = enumerate_outcomes(|d| Ok(signal_spsa(&c, d)), false).unwrap();
        let mean: f64 = outs.iter().map(|(p, s)| p * s.value[0]).sum();
        assert!((mean - (-0.64 - delta * delta / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn dga_examples() {
        let constant = GameSpec::from_fn("const", vec![ActionSet::Orthant { dim: 1 }], |_, _| 2.0, None::<fn(&[f64], &mut [f64])>);
        let m = MirrorMap::for_game(MirrorKind::ExpOrthant, &constant).unwrap();
        let noise = NoiseModel::none();
        let x = [1.0];
        let c = SignalContext { n: 10, ..ctx(&constant, &m, &x, &x, &noise) };
        let s = signal_dga(&c, &mut RngStream::new(1).stage(10));
        assert_eq!(s.value, vec![0.0]);
        assert_eq!(s.payoff_queries, 2);

        let log = GameSpec::from_fn("log", vec![ActionSet::Orthant { dim: 1 }], |_, x| x[0].ln(), None::<fn(&[f64], &mut [f64])>);
        let mut prev_bias = f64::INFINITY;
        for n in [10u64, 100, 1000, 10_000] {
            let c = SignalContext { n, ..ctx(&log, &m, &x, &x, &noise) };
            let outs = enumerate_outcomes(|d| Ok(signal_dga(&c, d)), false).unwrap();
            let mean: f64 = outs.iter().map(|(p, s)| p * s.value[0]).sum();
            let bias = (mean - 1.0).abs();
            assert!(bias < prev_bias && bias * n as f64 <= 2.0, "n={n} bias={bias}");
            prev_bias = bias;
        }
    }

    #[test]
    fn dga_clips_nonpositive_arguments() {
        let g = games::decay(5.0);
        let m = MirrorMap::for_game(MirrorKind::ExpOrthant, &g).unwrap();
        let noise = NoiseModel::none();
        let x = [1.0];
        let c = ctx(&g, &m, &x, &x, &noise);
        let outs = enumerate_outcomes(|d| Ok(signal_dga(&c, d)), false).unwrap();
        assert!(outs.iter().all(|(_, s)| s.clips == 1 && s.value[0] == DGA_CLIP.ln()));
    }

    #[test]
    fn exp3_unbiased_for_explored_strategy() {
        let g = games::prisoners_dilemma();
        let m = MirrorMap::for_game(MirrorKind::Logit, &g).unwrap();
        let noise = NoiseModel::none();
        let x = [0.1, 0.9, 0.35, 0.65];
        let eps = 0.2;
        let c = SignalContext { delta: eps, ..ctx(&g, &m, &x, &x, &noise) };
        let outs = enumerate_outcomes(|d| signal_exp3(&c, d), false).unwrap();
        let mut mean = vec![0.0; 4];
        let mut worst: f64 = 0.0;
        for (p, s) in &outs {
            mean.iter_mut().zip(&s.value).for_each(|(a, b)| *a += p * b);
            worst = worst.max(s.value.iter().fold(0.0, |m: f64, v| m.max(v.abs())));
        }
        let xh = explore(&g, &x, eps);
        let target = g.field(&xh);
        assert!(mean.iter().zip(&target).all(|(a, b)| (a - b).abs() < 1e-12));
        assert!(worst <= 4.0 * 2.0 / eps);
    }

    #[test]
    fn seqga_second_player_sees_the_first_update() {
        let g = games::bilinear(None);
        let m = MirrorMap::for_game(MirrorKind::Euclidean, &g).unwrap();
        let noise = NoiseModel::none();
        let x = [1.0, 1.0];
        let c = ctx(&g, &m, &x, &x, &noise);
        let s = signal_seqga(&c, &mut RngStream::new(0).stage(1)).unwrap();
        // player 1 moves to 0.9, player 2 then reads v₂ = x₁ = 0.9
        assert!((s.value[0] + 1.0).abs() < 1e-15 && (s.value[1] - 0.9).abs() < 1e-15);
    }

    #[test]
    fn enumeration_rejects_continuous_noise() {
        let g = games::quadratic(1.0);
        let noise = NoiseModel::gaussian(1.0);
        let r = enumerate_outcomes(|d| Ok(sfo(&g, &[0.0], &noise, 0, d)), false);
        assert_eq!(r.unwrap_err(), FeedbackError::NotEnumerable);
        let r = enumerate_outcomes(|d| Ok(sfo(&g, &[0.0], &noise, 0, d)), true).unwrap();
        assert_eq!(r, vec![(1.0, vec![0.0])]);
    }

    #[test]
    fn streams_are_deterministic_and_distinct() {
        let a = RngStream::new(42);
        let b = RngStream::new(42);
        let c = RngStream::new(43);
        let na = NoiseModel::gaussian(1.0);
        assert_eq!(a.stage(5).noise(&na, 0, 3), b.stage(5).noise(&na, 0, 3));
        assert_ne!(a.stage(5).noise(&na, 0, 3), a.stage(6).noise(&na, 0, 3));
        assert_ne!(a.stage(5).noise(&na, 0, 3), c.stage(5).noise(&na, 0, 3));
        assert_ne!(a.key(1, 2, 0, 0), a.key(1, 2, 0, 1));
    }
}
