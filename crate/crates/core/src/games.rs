//! Continuous games, mixed extensions of finite games, the example catalog,
//! and residual/structure checks on the individual gradient field.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Feasibility slack used when checking membership of sampled or computed points.
pub const FEAS_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GameError {
    #[error("infeasible action profile: {0}")]
    Infeasible(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("unknown game id: {0}")]
    UnknownGame(String),
    #[error("rejected: {0}")]
    Rejected(String),
}

/// Action set of one player.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ActionSet {
    Full { dim: usize },
    Box { dim: usize, lo: f64, hi: f64 },
    Simplex { dim: usize },
    Orthant { dim: usize },
}

impl ActionSet {
    pub fn dim(&self) -> usize {
        match *self {
            ActionSet::Full { dim }
            | ActionSet::Box { dim, .. }
            | ActionSet::Simplex { dim }
            | ActionSet::Orthant { dim } => dim,
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.dim() || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        match *self {
            ActionSet::Full { .. } => true,
            ActionSet::Box { lo, hi, .. } => x.iter().all(|&v| v >= lo - tol && v <= hi + tol),
            ActionSet::Orthant { .. } => x.iter().all(|&v| v >= -tol),
            ActionSet::Simplex { .. } => {
                x.iter().all(|&v| v >= -tol) && (x.iter().sum::<f64>() - 1.0).abs() <= tol * (1.0 + x.len() as f64)
            }
        }
    }

    pub fn is_bounded(&self) -> bool {
        matches!(self, ActionSet::Box { .. } | ActionSet::Simplex { .. })
    }

    /// Uniform sample; unbounded sets are truncated to `[-extent, extent]` per coordinate.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, extent: f64) -> Vec<f64> {
        match *self {
            ActionSet::Full { dim } => (0..dim).map(|_| rng.random_range(-extent..extent)).collect(),
            ActionSet::Box { dim, lo, hi } => (0..dim).map(|_| rng.random_range(lo..hi)).collect(),
            ActionSet::Orthant { dim } => (0..dim).map(|_| rng.random_range(0.0..extent)).collect(),
            ActionSet::Simplex { dim } => {
                let e: Vec<f64> = (0..dim).map(|_| Exp1.sample(rng)).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|v| v / s).collect()
            }
        }
    }

    /// Sample from the relative interior, keeping a margin away from the boundary.
    pub fn sample_interior<R: Rng + ?Sized>(&self, rng: &mut R, extent: f64, margin: f64) -> Vec<f64> {
        match *self {
            ActionSet::Box { dim, lo, hi } => {
                let m = margin * (hi - lo);
                (0..dim).map(|_| rng.random_range(lo + m..hi - m)).collect()
            }
            ActionSet::Orthant { dim } => (0..dim).map(|_| rng.random_range(margin..extent)).collect(),
            ActionSet::Simplex { dim } => {
                let u = self.sample(rng, extent);
                let w = 1.0 - margin * dim as f64;
                u.into_iter().map(|v| margin + w * v).collect()
            }
            ActionSet::Full { .. } => self.sample(rng, extent),
        }
    }

    /// Basis of the linear span of the tangent cone at `x`.
    pub fn tangent_basis(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let d = self.dim();
        let unit = |k: usize| {
            let mut e = vec![0.0; d];
            e[k] = 1.0;
            e
        };
        match *self {
            ActionSet::Full { .. } | ActionSet::Box { .. } | ActionSet::Orthant { .. } => (0..d).map(unit).collect(),
            ActionSet::Simplex { .. } => {
                // directions e_k - e_ref with ref an index in the support
                let r = (0..d).max_by(|&a, &b| x[a].total_cmp(&x[b])).unwrap_or(0);
                (0..d)
                    .filter(|&k| k != r)
                    .map(|k| {
                        let mut e = unit(k);
                        e[r] = -1.0;
                        e
                    })
                    .collect()
            }
        }
    }

    /// Generators of the tangent cone when `x` is a vertex, `None` otherwise.
    pub fn vertex_cone_generators(&self, x: &[f64], tol: f64) -> Option<Vec<Vec<f64>>> {
        let d = self.dim();
        match *self {
            ActionSet::Full { .. } => None,
            ActionSet::Box { lo, hi, .. } => {
                let mut gens = Vec::new();
                for k in 0..d {
                    let mut e = vec![0.0; d];
                    if (x[k] - lo).abs() <= tol {
                        e[k] = 1.0;
                    } else if (x[k] - hi).abs() <= tol {
                        e[k] = -1.0;
                    } else {
                        return None;
                    }
                    gens.push(e);
                }
                Some(gens)
            }
            ActionSet::Orthant { .. } => {
                let mut gens = Vec::new();
                for k in 0..d {
                    if x[k].abs() > tol {
                        return None;
                    }
                    let mut e = vec![0.0; d];
                    e[k] = 1.0;
                    gens.push(e);
                }
                Some(gens)
            }
            ActionSet::Simplex { .. } => {
                let star = (0..d).find(|&k| (x[k] - 1.0).abs() <= tol)?;
                Some(
                    (0..d)
                        .filter(|&k| k != star)
                        .map(|k| {
                            let mut e = vec![0.0; d];
                            e[k] = 1.0;
                            e[star] = -1.0;
                            e
                        })
                        .collect(),
                )
            }
        }
    }
}

/// Payoff functions of a game; gradients are optional and fall back to central differences.
pub trait PayoffModel: Send + Sync {
    fn payoff(&self, player: usize, x: &[f64]) -> f64;

    /// Write the stacked individual gradient into `out`; return false if unavailable.
    fn gradient(&self, _x: &[f64], _out: &mut [f64]) -> bool {
        false
    }
}

/// Closure-backed payoff model for ad hoc games.
pub struct FnModel {
    payoff: Box<dyn Fn(usize, &[f64]) -> f64 + Send + Sync>,
    grad: Option<Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>>,
}

impl PayoffModel for FnModel {
    fn payoff(&self, player: usize, x: &[f64]) -> f64 {
        (self.payoff)(player, x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        match &self.grad {
            Some(g) => {
                g(x, out);
                true
            }
            None => false,
        }
    }
}

#[derive(Clone)]
pub struct GameSpec {
    pub id: String,
    pub action_sets: Vec<ActionSet>,
    offsets: Vec<usize>,
    model: Arc<dyn PayoffModel>,
    pub lipschitz_g: Option<f64>,
    pub lipschitz_l: Option<f64>,
    finite: Option<Arc<FiniteGameSpec>>,
}

impl fmt::Debug for GameSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GameSpec").field("id", &self.id).field("action_sets", &self.action_sets).finish()
    }
}

impl GameSpec {
    pub fn new(id: impl Into<String>, action_sets: Vec<ActionSet>, model: Arc<dyn PayoffModel>) -> Self {
        let mut offsets = vec![0];
        for s in &action_sets {
            offsets.push(offsets.last().unwrap() + s.dim());
        }
        GameSpec { id: id.into(), action_sets, offsets, model, lipschitz_g: None, lipschitz_l: None, finite: None }
    }

    pub fn from_fn<P, G>(id: impl Into<String>, action_sets: Vec<ActionSet>, payoff: P, grad: Option<G>) -> Self
    where
        P: Fn(usize, &[f64]) -> f64 + Send + Sync + 'static,
        G: Fn(&[f64], &mut [f64]) + Send + Sync + 'static,
    {
        let model = FnModel {
            payoff: Box::new(payoff),
            grad: grad.map(|g| Box::new(g) as Box<dyn Fn(&[f64], &mut [f64]) + Send + Sync>),
        };
        Self::new(id, action_sets, Arc::new(model))
    }

    pub fn with_lipschitz(mut self, g: Option<f64>, l: Option<f64>) -> Self {
        self.lipschitz_g = g;
        self.lipschitz_l = l;
        self
    }

    pub fn n_players(&self) -> usize {
        self.action_sets.len()
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn block(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn block_dims(&self) -> Vec<usize> {
        self.action_sets.iter().map(|s| s.dim()).collect()
    }

    pub fn finite(&self) -> Option<&FiniteGameSpec> {
        self.finite.as_deref()
    }

    pub fn has_analytic_gradient(&self) -> bool {
        let x = vec![0.0; self.dim()];
        let mut out = vec![0.0; self.dim()];
        self.model.gradient(&x, &mut out)
    }

    pub fn is_feasible(&self, x: &[f64]) -> bool {
        x.len() == self.dim() && self.action_sets.iter().enumerate().all(|(i, s)| s.contains(&x[self.block(i)], FEAS_TOL))
    }

    pub fn check_feasible(&self, x: &[f64]) -> Result<(), GameError> {
        if x.len() != self.dim() {
            return Err(GameError::Dimension { expected: self.dim(), got: x.len() });
        }
        if !self.is_feasible(x) {
            return Err(GameError::Infeasible(format!("{x:?} not in the action set of {}", self.id)));
        }
        Ok(())
    }

    /// Payoff of `player`; evaluated without a feasibility check (payoff-based methods query outside X).
    pub fn payoff(&self, player: usize, x: &[f64]) -> f64 {
        self.model.payoff(player, x)
    }

    /// Stacked individual gradient at a feasible profile.
    pub fn gradient_field(&self, x: &[f64]) -> Result<Vec<f64>, GameError> {
        self.check_feasible(x)?;
        Ok(self.field(x))
    }

    /// Stacked individual gradient without the feasibility check.
    pub fn field(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.field_into(x, &mut out);
        out
    }

    pub fn field_into(&self, x: &[f64], out: &mut [f64]) {
        if !self.model.gradient(x, out) {
            self.fd_gradient_into(x, out);
        }
    }

    /// Central finite differences of each u_i in its own block.
    pub fn fd_gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.fd_gradient_into(x, &mut out);
        out
    }

    fn fd_gradient_into(&self, x: &[f64], out: &mut [f64]) {
        let mut z = x.to_vec();
        for i in 0..self.n_players() {
            for k in self.block(i) {
                let h = 1e-6 * x[k].abs().max(1.0);
                z[k] = x[k] + h;
                let up = self.payoff(i, &z);
                z[k] = x[k] - h;
                let dn = self.payoff(i, &z);
                z[k] = x[k];
                out[k] = (up - dn) / (2.0 * h);
            }
        }
    }

    /// Jacobian of the gradient field by central differences of `field`.
    pub fn jacobian(&self, x: &[f64]) -> DMatrix<f64> {
        let d = self.dim();
        let mut j = DMatrix::zeros(d, d);
        let mut z = x.to_vec();
        for c in 0..d {
            let h = 1e-5 * x[c].abs().max(1.0);
            z[c] = x[c] + h;
            let up = self.field(&z);
            z[c] = x[c] - h;
            let dn = self.field(&z);
            z[c] = x[c];
            for r in 0..d {
                j[(r, c)] = (up[r] - dn[r]) / (2.0 * h);
            }
        }
        j
    }

    /// Uniform sample of a profile; unbounded coordinates truncated to `extent`.
    pub fn sample_profile<R: Rng + ?Sized>(&self, rng: &mut R, extent: f64) -> Vec<f64> {
        self.action_sets.iter().flat_map(|s| s.sample(rng, extent)).collect()
    }

    pub fn sample_interior<R: Rng + ?Sized>(&self, rng: &mut R, extent: f64, margin: f64) -> Vec<f64> {
        self.action_sets.iter().flat_map(|s| s.sample_interior(rng, extent, margin)).collect()
    }
}

/// Finite game in normal form. Profiles are indexed row-major with player 0 most significant.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FiniteGameSpec {
    pub counts: Vec<usize>,
    /// `payoffs[i][profile]`.
    pub payoffs: Vec<Vec<f64>>,
}

impl FiniteGameSpec {
    pub fn new(counts: Vec<usize>, payoffs: Vec<Vec<f64>>) -> Result<Self, GameError> {
        if counts.is_empty() || counts.iter().any(|&c| c == 0) {
            return Err(GameError::Argument("every player needs at least one action".into()));
        }
        let total: usize = counts.iter().product();
        if payoffs.len() != counts.len() {
            return Err(GameError::Argument(format!("{} payoff tensors for {} players", payoffs.len(), counts.len())));
        }
        for (i, p) in payoffs.iter().enumerate() {
            if p.len() != total {
                return Err(GameError::Argument(format!("payoff tensor of player {i} has {} entries, expected {total}", p.len())));
            }
        }
        Ok(FiniteGameSpec { counts, payoffs })
    }

    pub fn n_players(&self) -> usize {
        self.counts.len()
    }

    pub fn n_profiles(&self) -> usize {
        self.counts.iter().product()
    }

    pub fn offsets(&self) -> Vec<usize> {
        let mut o = vec![0];
        for c in &self.counts {
            o.push(o.last().unwrap() + c);
        }
        o
    }

    pub fn index(&self, a: &[usize]) -> usize {
        a.iter().zip(&self.counts).fold(0, |acc, (&ai, &c)| acc * c + ai)
    }

    pub fn decode(&self, mut idx: usize) -> Vec<usize> {
        let mut a = vec![0; self.counts.len()];
        for i in (0..self.counts.len()).rev() {
            a[i] = idx % self.counts[i];
            idx /= self.counts[i];
        }
        a
    }

    pub fn pure_payoff(&self, player: usize, a: &[usize]) -> f64 {
        self.payoffs[player][self.index(a)]
    }

    /// u_i(b; a_{-i}) for every b in A_i.
    pub fn pure_payoff_vector(&self, player: usize, a: &[usize]) -> Vec<f64> {
        let mut b = a.to_vec();
        (0..self.counts[player])
            .map(|k| {
                b[player] = k;
                self.pure_payoff(player, &b)
            })
            .collect()
    }

    /// Expected payoff of `player` under the stacked mixed profile `x`.
    pub fn mixed_payoff(&self, player: usize, x: &[f64]) -> f64 {
        let off = self.offsets();
        (0..self.n_profiles())
            .map(|idx| {
                let a = self.decode(idx);
                let w: f64 = a.iter().enumerate().map(|(j, &aj)| x[off[j] + aj]).product();
                w * self.payoffs[player][idx]
            })
            .sum()
    }

    /// Stacked mixed payoff vectors v_i(x)_a = u_i(a; x_{-i}).
    pub fn payoff_vectors(&self, x: &[f64], out: &mut [f64]) {
        let off = self.offsets();
        out.iter_mut().for_each(|v| *v = 0.0);
        for idx in 0..self.n_profiles() {
            let a = self.decode(idx);
            for i in 0..self.n_players() {
                let w: f64 = a.iter().enumerate().filter(|&(j, _)| j != i).map(|(j, &aj)| x[off[j] + aj]).product();
                out[off[i] + a[i]] += w * self.payoffs[i][idx];
            }
        }
    }

    pub fn max_abs_payoff(&self) -> f64 {
        self.payoffs.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Pure profiles from which every unilateral pure deviation strictly lowers the deviator's payoff.
    pub fn is_strict_ne(&self, a: &[usize]) -> bool {
        (0..self.n_players()).all(|i| {
            let u = self.pure_payoff_vector(i, a);
            (0..self.counts[i]).all(|b| b == a[i] || u[b] < u[a[i]])
        })
    }

    /// Pairs (dominated, dominator) of pure strategies per player, found by exhaustive enumeration.
    pub fn dominated_pairs(&self, player: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        let others: Vec<Vec<usize>> = (0..self.n_profiles()).map(|i| self.decode(i)).filter(|a| a[player] == 0).collect();
        for a in 0..self.counts[player] {
            for b in 0..self.counts[player] {
                if a == b {
                    continue;
                }
                let dominated = others.iter().all(|prof| {
                    let u = self.pure_payoff_vector(player, prof);
                    u[a] < u[b]
                });
                if dominated {
                    out.push((a, b));
                    break;
                }
            }
        }
        out
    }
}

struct MixedModel(Arc<FiniteGameSpec>);

impl PayoffModel for MixedModel {
    fn payoff(&self, player: usize, x: &[f64]) -> f64 {
        self.0.mixed_payoff(player, x)
    }
    fn gradient(&self, x: &[f64], out: &mut [f64]) -> bool {
        self.0.payoff_vectors(x, out);
        true
    }
}

/// Mixed extension of a finite game: simplex action sets, multilinear payoffs.
pub fn mixed_extension(id: impl Into<String>, fg: FiniteGameSpec) -> GameSpec {
    let fg = Arc::new(fg);
    let sets = fg.counts.iter().map(|&dim| ActionSet::Simplex { dim }).collect();
    let mut g = GameSpec::new(id, sets, Arc::new(MixedModel(fg.clone())));
    let m = fg.max_abs_payoff();
    g.lipschitz_g = Some(m * (fg.n_profiles() as f64).sqrt());
    g.finite = Some(fg);
    g
}

/// Finite list of action profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetOfPoints {
    pub points: Vec<Vec<f64>>,
}

impl SetOfPoints {
    pub fn new(game: &GameSpec, points: Vec<Vec<f64>>) -> Result<Self, GameError> {
        for p in &points {
            game.check_feasible(p)?;
        }
        Ok(SetOfPoints { points })
    }

    pub fn distance(&self, x: &[f64]) -> f64 {
        self.points.iter().map(|p| dist(p, x)).fold(f64::INFINITY, f64::min)
    }
}

/// Target set for convergence diagnostics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum TargetSet {
    Points(SetOfPoints),
    /// Face of the action polytope cut out by fixing coordinates.
    Face { fixed: Vec<(usize, f64)> },
}

impl TargetSet {
    pub fn distance(&self, x: &[f64]) -> f64 {
        match self {
            TargetSet::Points(s) => s.distance(x),
            TargetSet::Face { fixed } => fixed.iter().map(|&(k, v)| (x[k] - v).powi(2)).sum::<f64>().sqrt(),
        }
    }

    pub fn contains_exactly(&self, x: &[f64]) -> bool {
        match self {
            TargetSet::Points(s) => s.points.iter().any(|p| p.as_slice() == x),
            TargetSet::Face { fixed } => fixed.iter().all(|&(k, v)| x[k] == v),
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// max of ⟨v(x), x' − x⟩ over the samples and x' = x itself, so the residual is never negative.
pub fn svi_residual(game: &GameSpec, x: &[f64], samples: &[Vec<f64>]) -> Result<f64, GameError> {
    if samples.is_empty() {
        return Err(GameError::Argument("empty sample set".into()));
    }
    let v = game.gradient_field(x)?;
    let mut worst: f64 = 0.0;
    for s in samples {
        game.check_feasible(s)?;
        worst = worst.max(dot(&v, &sub(s, x)));
    }
    Ok(worst)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonotoneVerdict {
    pub monotone: bool,
    /// Every pair of distinct points gives a strictly negative value.
    pub strict: bool,
    /// Largest value of ⟨v(x′)−v(x), x′−x⟩ seen.
    pub worst: f64,
}

pub fn check_monotone(game: &GameSpec, pairs: &[(Vec<f64>, Vec<f64>)]) -> MonotoneVerdict {
    let mut worst = f64::NEG_INFINITY;
    let mut strict = true;
    for (a, b) in pairs {
        let d = sub(b, a);
        let val = dot(&sub(&game.field(b), &game.field(a)), &d);
        worst = worst.max(val);
        if norm(&d) > 0.0 && val >= 0.0 {
            strict = false;
        }
    }
    MonotoneVerdict { monotone: worst <= 1e-12, strict, worst }
}

/// Random pairs of feasible profiles for monotonicity scans.
pub fn sample_pairs(game: &GameSpec, n: usize, extent: f64, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| (game.sample_profile(&mut rng, extent), game.sample_profile(&mut rng, extent))).collect()
}

/// Sampled test of ⟨v(x), x − x*⟩ < 0 on the radius-ball around x* intersected with X.
///
/// Each sample perturbs a random nonempty subset of players, so unilateral
/// deviations (faces of the local cone) are exercised with positive probability.
/// Strictness is measured relative to ‖x − x*‖².
pub fn check_variational_stability(game: &GameSpec, x_star: &[f64], radius: f64, n_samples: usize, seed: u64) -> Result<bool, GameError> {
    game.check_feasible(x_star)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = game.n_players();
    let mut accepted = 0usize;
    let mut attempts = 0usize;
    while accepted < n_samples {
        attempts += 1;
        if attempts > 200 * n_samples.max(1) {
            return Err(GameError::Argument("rejection sampling failed to find feasible neighbours".into()));
        }
        let mask: u64 = loop {
            let m = rng.random::<u64>() & ((1u64 << n.min(63)) - 1);
            if m != 0 {
                break m;
            }
        };
        let mut dir = vec![0.0; game.dim()];
        for i in 0..n {
            if mask >> i & 1 == 0 {
                continue;
            }
            let r = game.block(i);
            let mut g: Vec<f64> = r.clone().map(|_| StandardNormal.sample(&mut rng)).collect();
            if matches!(game.action_sets[i], ActionSet::Simplex { .. }) {
                let m = g.iter().sum::<f64>() / g.len() as f64;
                g.iter_mut().for_each(|v| *v -= m);
            }
            dir[r].copy_from_slice(&g);
        }
        let nd = norm(&dir);
        if nd == 0.0 {
            continue;
        }
        let eff: usize = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| effective_dim(&game.action_sets[i])).sum();
        let rad = radius * rng.random::<f64>().powf(1.0 / eff.max(1) as f64);
        let x: Vec<f64> = x_star.iter().zip(&dir).map(|(a, b)| a + rad * b / nd).collect();
        if !game.is_feasible(&x) {
            continue;
        }
        accepted += 1;
        let d = sub(&x, x_star);
        let d2 = dot(&d, &d);
        if d2 == 0.0 {
            continue;
        }
        let val = dot(&game.field(&x), &d);
        if !(val < -1e-9 * d2) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn effective_dim(s: &ActionSet) -> usize {
    match s {
        ActionSet::Simplex { dim } => dim.saturating_sub(1).max(1),
        other => other.dim(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SosVerdict {
    pub negative_definite: bool,
    pub max_eigenvalue: f64,
    pub warning: Option<String>,
}

/// Negative definiteness of the symmetrized Jacobian restricted to span(basis).
pub fn check_sos(game: &GameSpec, x_star: &[f64], tangent_basis: &[Vec<f64>]) -> SosVerdict {
    let d = game.dim();
    let j = game.jacobian(x_star);
    let s = (&j + j.transpose()) * 0.5;
    let k = tangent_basis.len();
    if k == 0 {
        return SosVerdict { negative_definite: false, max_eigenvalue: f64::NAN, warning: Some("empty tangent basis".into()) };
    }
    let b = DMatrix::from_fn(d, k, |r, c| tangent_basis[c][r]);
    // orthonormalize the basis so eigenvalues are on the tangent space with the ℓ2 metric
    let q = b.qr().q();
    let m = q.transpose() * s * q;
    let eig = SymmetricEigen::new(m);
    let max_eigenvalue = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let scale = j.norm().max(1.0);
    let warning = if max_eigenvalue.abs() <= 1e-7 * scale {
        Some(format!("symmetrized Jacobian is numerically singular on the tangent space (max eigenvalue {max_eigenvalue:.3e})"))
    } else {
        None
    };
    SosVerdict { negative_definite: max_eigenvalue < -1e-7 * scale, max_eigenvalue, warning }
}

/// Tangent basis of the whole profile at `x` (block diagonal).
pub fn tangent_basis(game: &GameSpec, x: &[f64]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for (i, s) in game.action_sets.iter().enumerate() {
        let r = game.block(i);
        for e in s.tangent_basis(&x[r.clone()]) {
            let mut full = vec![0.0; game.dim()];
            full[r.clone()].copy_from_slice(&e);
            out.push(full);
        }
    }
    out
}

/// Compact region used by the subcoercivity check.
#[derive(Clone)]
pub enum CompactSet {
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `{x : g(x) ≤ 0}`.
    Sublevel(Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>),
}

impl CompactSet {
    pub fn contains(&self, x: &[f64]) -> bool {
        match self {
            CompactSet::Ball { center, radius } => dist(center, x) <= *radius,
            CompactSet::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| v >= l && v <= h),
            CompactSet::Sublevel(g) => g(x) <= 0.0,
        }
    }

    /// Region {4x₁⁴ + 4x₂⁴ ≤ x₁² + x₂²} that contains the critical points of the almost-bilinear game.
    pub fn quartic() -> Self {
        CompactSet::Sublevel(Arc::new(|x: &[f64]| 4.0 * x[0].powi(4) + 4.0 * x[1].powi(4) - x[0] * x[0] - x[1] * x[1]))
    }
}

/// Sampled test of ⟨v(x), x − b⟩ ≤ 0 outside the compact set.
pub fn check_subcoercive(game: &GameSpec, base: &[f64], compact: &CompactSet, n_samples: usize, extent: f64, seed: u64) -> Result<bool, GameError> {
    game.check_feasible(base)?;
    if !compact.contains(base) {
        return Err(GameError::Argument("base point must lie inside the compact set".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checked = 0;
    let mut attempts = 0;
    while checked < n_samples {
        attempts += 1;
        if attempts > 100 * n_samples.max(1) {
            break;
        }
        let x = game.sample_profile(&mut rng, extent);
        if compact.contains(&x) {
            continue;
        }
        checked += 1;
        let val = dot(&game.field(&x), &sub(&x, base));
        if val > 1e-12 * (1.0 + dot(&x, &x)) {
            return Ok(false);
        }
    }
    Ok(true)
}

// ---------------------------------------------------------------- catalog

fn phi_prime(z: f64) -> f64 {
    4.0 * z - 16.0 * z * z * z
}

fn phi(z: f64) -> f64 {
    2.0 * z * z - 4.0 * z.powi(4)
}

/// Loss f = x₁x₂ + ε[φ(x₂) − φ(x₁)], φ(z) = 2z² − 4z⁴, on [−1,1]²; player 1 minimizes f.
pub fn almost_bilinear(eps: f64) -> GameSpec {
    let f = move |x: &[f64]| x[0] * x[1] + eps * (phi(x[1]) - phi(x[0]));
    let sets = vec![ActionSet::Box { dim: 1, lo: -1.0, hi: 1.0 }; 2];
    GameSpec::from_fn(
        format!("almost_bilinear:eps={eps}"),
        sets,
        move |i, x| if i == 0 { -f(x) } else { f(x) },
        Some(move |x: &[f64], out: &mut [f64]| {
            out[0] = -x[1] + eps * phi_prime(x[0]);
            out[1] = x[0] + eps * phi_prime(x[1]);
        }),
    )
    .with_lipschitz(Some(1.0 + 12.0 * eps), Some(1.0 + 44.0 * eps))
}

/// Bilinear min–max x₁x₂; `bound = Some(c)` restricts to [−c,c]².
pub fn bilinear(bound: Option<f64>) -> GameSpec {
    let sets = match bound {
        Some(c) => vec![ActionSet::Box { dim: 1, lo: -c, hi: c }; 2],
        None => vec![ActionSet::Full { dim: 1 }; 2],
    };
    let id = match bound {
        Some(c) => format!("bilinear:box={c}"),
        None => "bilinear".to_string(),
    };
    GameSpec::from_fn(
        id,
        sets,
        |i, x| if i == 0 { -x[0] * x[1] } else { x[0] * x[1] },
        Some(|x: &[f64], out: &mut [f64]| {
            out[0] = -x[1];
            out[1] = x[0];
        }),
    )
    .with_lipschitz(None, Some(1.0))
}

/// u₁ = (x₁−x₂)²/2, u₂ = (x₁+x₂)²/2 on [−1,1]².
pub fn discoordination() -> GameSpec {
    GameSpec::from_fn(
        "discoordination",
        vec![ActionSet::Box { dim: 1, lo: -1.0, hi: 1.0 }; 2],
        |i, x| if i == 0 { 0.5 * (x[0] - x[1]).powi(2) } else { 0.5 * (x[0] + x[1]).powi(2) },
        Some(|x: &[f64], out: &mut [f64]| {
            out[0] = x[0] - x[1];
            out[1] = x[0] + x[1];
        }),
    )
    .with_lipschitz(Some(2.0 * 2f64.sqrt()), Some(2f64.sqrt()))
}

/// Cournot oligopoly u_i = x_i(a − bΣx) − c·x_i on [0, cap]; an infinite cap gives the orthant.
pub fn cournot(a: f64, b: f64, c: f64, cap: f64, n: usize) -> GameSpec {
    let id = format!("cournot:a={a},b={b},c={c},cap={cap},n={n}");
    let set = if cap.is_infinite() { ActionSet::Orthant { dim: 1 } } else { ActionSet::Box { dim: 1, lo: 0.0, hi: cap } };
    GameSpec::from_fn(
        id,
        vec![set; n],
        move |i, x| {
            let s: f64 = x.iter().sum();
            x[i] * (a - b * s) - c * x[i]
        },
        Some(move |x: &[f64], out: &mut [f64]| {
            let s: f64 = x.iter().sum();
            for i in 0..out.len() {
                out[i] = a - c - b * s - b * x[i];
            }
        }),
    )
    .with_lipschitz(None, Some(b * (n as f64 + 1.0)))
}

/// Cournot symmetric equilibrium quantity (a − c)/((n+1)b).
pub fn cournot_equilibrium(a: f64, b: f64, c: f64, n: usize) -> f64 {
    (a - c) / ((n as f64 + 1.0) * b)
}

/// Shannon-rate power control. Player i splits P_max over K channels; the
/// action is the fraction vector p_i / P_max ∈ Δ(K). `gains[i][k]` is the
/// gain of user i on channel k and σ the noise floor.
pub fn power_control(gains: Vec<Vec<f64>>, sigma: f64, p_max: f64) -> Result<GameSpec, GameError> {
    let n = gains.len();
    let k = gains.first().map(|g| g.len()).unwrap_or(0);
    if n == 0 || k == 0 || gains.iter().any(|g| g.len() != k) || sigma <= 0.0 || p_max <= 0.0 {
        return Err(GameError::Argument("power_control needs a rectangular gain matrix, σ > 0 and P_max > 0".into()));
    }
    let g = Arc::new(gains);
    let g2 = g.clone();
    let id = format!("power_control:users={n},channels={k},sigma={sigma},pmax={p_max}");
    let interference = move |g: &Vec<Vec<f64>>, x: &[f64], ch: usize| -> f64 { (0..g.len()).map(|j| g[j][ch] * p_max * x[j * k + ch]).sum::<f64>() };
    let model = FnModel {
        payoff: Box::new(move |i, x| {
            (0..k)
                .map(|ch| {
                    let own = g[i][ch] * p_max * x[i * k + ch];
                    let total = interference(&g, x, ch);
                    (1.0 + own / (sigma + total - own)).ln()
                })
                .sum()
        }),
        grad: Some(Box::new(move |x, out| {
            for ch in 0..k {
                let total = interference(&g2, x, ch);
                for i in 0..g2.len() {
                    out[i * k + ch] = p_max * g2[i][ch] / (sigma + total);
                }
            }
        })),
    };
    Ok(GameSpec::new(id, vec![ActionSet::Simplex { dim: k }; n], Arc::new(model)))
}

pub fn matching_pennies_finite() -> FiniteGameSpec {
    // profiles (H,H) (H,T) (T,H) (T,T)
    FiniteGameSpec::new(vec![2, 2], vec![vec![1.0, -1.0, -1.0, 1.0], vec![-1.0, 1.0, 1.0, -1.0]]).unwrap()
}

pub fn matching_pennies() -> GameSpec {
    mixed_extension("matching_pennies", matching_pennies_finite())
}

/// Action 0 = C, action 1 = D.
pub fn prisoners_dilemma_finite() -> FiniteGameSpec {
    // profiles (C,C) (C,D) (D,C) (D,D)
    FiniteGameSpec::new(vec![2, 2], vec![vec![3.0, 0.0, 4.0, 1.0], vec![3.0, 4.0, 0.0, 1.0]]).unwrap()
}

pub fn prisoners_dilemma() -> GameSpec {
    mixed_extension("prisoners_dilemma", prisoners_dilemma_finite())
}

/// Single-player stochastic linear program: maximize ⟨c, x⟩ over a box or simplex.
/// Noise is supplied by the oracle, so the payoff here is the mean.
pub fn stochastic_lp(c: Vec<f64>, set: ActionSet) -> Result<GameSpec, GameError> {
    if c.len() != set.dim() || !set.is_bounded() {
        return Err(GameError::Argument("stochastic_lp needs a bounded polytope matching the payoff vector".into()));
    }
    let c2 = c.clone();
    let id = format!("slp:c={}", c.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"));
    Ok(GameSpec::from_fn(
        id,
        vec![set],
        move |_, x| dot(&c, x),
        Some(move |_x: &[f64], out: &mut [f64]| out.copy_from_slice(&c2)),
    ))
}

/// f = x₁x₂ + (μ/2)(x₁² − x₂²) on ℝ², player 1 minimizes; saddle at the origin.
pub fn minmax_interior(mu: f64) -> GameSpec {
    let f = move |x: &[f64]| x[0] * x[1] + 0.5 * mu * (x[0] * x[0] - x[1] * x[1]);
    GameSpec::from_fn(
        format!("minmax_interior:mu={mu}"),
        vec![ActionSet::Full { dim: 1 }; 2],
        move |i, x| if i == 0 { -f(x) } else { f(x) },
        Some(move |x: &[f64], out: &mut [f64]| {
            out[0] = -x[1] - mu * x[0];
            out[1] = x[0] - mu * x[1];
        }),
    )
    .with_lipschitz(None, Some((1.0 + mu * mu).sqrt()))
}

/// Single player u(x) = −k x²/2 on ℝ (k < 0 gives a repelling field).
pub fn quadratic(k: f64) -> GameSpec {
    GameSpec::from_fn(
        format!("quadratic:k={k}"),
        vec![ActionSet::Full { dim: 1 }],
        move |_, x| -0.5 * k * x[0] * x[0],
        Some(move |x: &[f64], out: &mut [f64]| out[0] = -k * x[0]),
    )
    .with_lipschitz(None, Some(k.abs()))
}

/// Single player u(x) = 1 − rate·x on [0, ∞).
pub fn decay(rate: f64) -> GameSpec {
    GameSpec::from_fn(
        format!("decay:rate={rate}"),
        vec![ActionSet::Orthant { dim: 1 }],
        move |_, x| 1.0 - rate * x[0],
        Some(move |_x: &[f64], out: &mut [f64]| out[0] = -rate),
    )
    .with_lipschitz(Some(rate.abs()), Some(0.0))
}

/// Single player u(x) = 1 − left·min(x,0)²/2 − right·max(x,0)²/2 on ℝ.
/// The gradient is Lipschitz with a kink at the maximizer 0.
pub fn kinked(left: f64, right: f64) -> GameSpec {
    GameSpec::from_fn(
        format!("kinked:left={left},right={right}"),
        vec![ActionSet::Full { dim: 1 }],
        move |_, x| {
            let z = x[0];
            if z < 0.0 {
                1.0 - 0.5 * left * z * z
            } else {
                1.0 - 0.5 * right * z * z
            }
        },
        Some(move |x: &[f64], out: &mut [f64]| out[0] = if x[0] < 0.0 { -left * x[0] } else { -right * x[0] }),
    )
    .with_lipschitz(None, Some(left.abs().max(right.abs())))
}

fn parse_params(spec: &str) -> Result<Vec<(String, String)>, GameError> {
    if spec.is_empty() {
        return Ok(Vec::new());
    }
    spec.split(',')
        .map(|kv| {
            let (k, v) = kv.split_once('=').ok_or_else(|| GameError::Argument(format!("malformed parameter '{kv}'")))?;
            Ok((k.trim().to_string(), v.trim().to_string()))
        })
        .collect()
}

fn num(params: &[(String, String)], key: &str, default: f64) -> Result<f64, GameError> {
    match params.iter().find(|(k, _)| k == key) {
        Some((_, v)) => v.parse().map_err(|_| GameError::Argument(format!("parameter {key}='{v}' is not a number"))),
        None => Ok(default),
    }
}

fn list(params: &[(String, String)], key: &str) -> Result<Option<Vec<f64>>, GameError> {
    match params.iter().find(|(k, _)| k == key) {
        Some((_, v)) => v
            .split(';')
            .map(|s| s.trim().parse::<f64>().map_err(|_| GameError::Argument(format!("parameter {key} has a bad entry '{s}'"))))
            .collect::<Result<Vec<_>, _>>()
            .map(Some),
        None => Ok(None),
    }
}

fn check_keys(params: &[(String, String)], allowed: &[&str], name: &str) -> Result<(), GameError> {
    for (k, _) in params {
        if !allowed.contains(&k.as_str()) {
            return Err(GameError::Argument(format!("game {name} has no parameter '{k}'")));
        }
    }
    Ok(())
}

/// Build a catalog game from an id such as `almost_bilinear:eps=0.015625`.
pub fn game_from_id(id: &str) -> Result<GameSpec, GameError> {
    let (name, rest) = id.split_once(':').unwrap_or((id, ""));
    let params = parse_params(rest)?;
    let name = name.trim();
    match name {
        "almost_bilinear" => {
            check_keys(&params, &["eps"], name)?;
            Ok(almost_bilinear(num(&params, "eps", 2f64.powi(-6))?))
        }
        "bilinear" => {
            check_keys(&params, &["box"], name)?;
            let b = params.iter().find(|(k, _)| k == "box").map(|_| num(&params, "box", 1.0)).transpose()?;
            Ok(bilinear(b))
        }
        "discoordination" => {
            check_keys(&params, &[], name)?;
            Ok(discoordination())
        }
        "cournot" => {
            check_keys(&params, &["a", "b", "c", "cap", "n"], name)?;
            let n = num(&params, "n", 2.0)?;
            if n < 1.0 || n.fract() != 0.0 {
                return Err(GameError::Argument("cournot n must be a positive integer".into()));
            }
            Ok(cournot(num(&params, "a", 2.0)?, num(&params, "b", 1.0)?, num(&params, "c", 0.0)?, num(&params, "cap", 1.0)?, n as usize))
        }
        "power_control" => {
            check_keys(&params, &["users", "channels", "gains", "sigma", "pmax"], name)?;
            let users = num(&params, "users", 2.0)? as usize;
            let channels = num(&params, "channels", 2.0)? as usize;
            let flat = match list(&params, "gains")? {
                Some(g) => g,
                None => (0..users * channels).map(|idx| if idx / channels == idx % channels { 1.0 } else { 0.5 }).collect(),
            };
            if flat.len() != users * channels {
                return Err(GameError::Argument("gains must have users×channels entries".into()));
            }
            let gains = flat.chunks(channels).map(|c| c.to_vec()).collect();
            power_control(gains, num(&params, "sigma", 0.1)?, num(&params, "pmax", 1.0)?)
        }
        "matching_pennies" => Ok(matching_pennies()),
        "prisoners_dilemma" => Ok(prisoners_dilemma()),
        "slp" => {
            check_keys(&params, &["c", "set", "lo", "hi"], name)?;
            let c = list(&params, "c")?.unwrap_or_else(|| vec![1.0]);
            let set_kind = params.iter().find(|(k, _)| k == "set").map(|(_, v)| v.as_str()).unwrap_or("box");
            let set = match set_kind {
                "box" => ActionSet::Box { dim: c.len(), lo: num(&params, "lo", 0.0)?, hi: num(&params, "hi", 1.0)? },
                "simplex" => ActionSet::Simplex { dim: c.len() },
                other => return Err(GameError::Argument(format!("slp set must be box or simplex, got '{other}'"))),
            };
            stochastic_lp(c, set)
        }
        "minmax_interior" => {
            check_keys(&params, &["mu"], name)?;
            Ok(minmax_interior(num(&params, "mu", 1.0)?))
        }
        "quadratic" => {
            check_keys(&params, &["k"], name)?;
            Ok(quadratic(num(&params, "k", 1.0)?))
        }
        "decay" => {
            check_keys(&params, &["rate"], name)?;
            Ok(decay(num(&params, "rate", 1.0)?))
        }
        "kinked" => {
            check_keys(&params, &["left", "right"], name)?;
            Ok(kinked(num(&params, "left", 1.0)?, num(&params, "right", 3.0)?))
        }
        _ => Err(GameError::UnknownGame(id.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn almost_bilinear_origin_is_critical() {
        let g = almost_bilinear(2f64.powi(-6));
        assert_eq!(g.gradient_field(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn discoordination_field_at_corner() {
        let g = discoordination();
        assert_eq!(g.gradient_field(&[1.0, 1.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn decay_field_is_constant() {
        let g = decay(1.0);
        for x in [0.0, 0.5, 3.0, 100.0] {
            assert_eq!(g.gradient_field(&[x]).unwrap(), vec![-1.0]);
        }
    }

    #[test]
    fn infeasible_profile_is_a_domain_error() {
        let g = discoordination();
        assert!(matches!(g.gradient_field(&[1.5, 0.0]), Err(GameError::Infeasible(_))));
        assert!(matches!(g.gradient_field(&[0.0]), Err(GameError::Dimension { .. })));
    }

    #[test]
    fn matching_pennies_uniform_is_balanced() {
        let g = matching_pennies();
        assert_eq!(g.gradient_field(&[0.5, 0.5, 0.5, 0.5]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn prisoners_dilemma_payoff_rows() {
        let g = prisoners_dilemma();
        let v = g.gradient_field(&[1.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(&v[0..2], &[3.0, 4.0]);
        assert_eq!(&v[2..4], &[3.0, 4.0]);
    }

    #[test]
    fn mixed_payoff_at_vertices_is_pure() {
        let fg = prisoners_dilemma_finite();
        let g = mixed_extension("pd", fg.clone());
        for idx in 0..fg.n_profiles() {
            let a = fg.decode(idx);
            let mut x = vec![0.0; 4];
            x[a[0]] = 1.0;
            x[2 + a[1]] = 1.0;
            for i in 0..2 {
                assert_eq!(g.payoff(i, &x), fg.pure_payoff(i, &a));
            }
        }
    }

    #[test]
    fn profile_index_roundtrip() {
        let fg = FiniteGameSpec::new(vec![2, 3, 2], vec![vec![0.0; 12]; 3]).unwrap();
        for idx in 0..12 {
            assert_eq!(fg.index(&fg.decode(idx)), idx);
        }
        assert!(FiniteGameSpec::new(vec![2, 2], vec![vec![0.0; 3]; 2]).is_err());
    }

    #[test]
    fn svi_residual_examples() {
        let g = discoordination();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let samples: Vec<_> = (0..2000).map(|_| g.sample_profile(&mut rng, 1.0)).collect();
        assert!(svi_residual(&g, &[1.0, 1.0], &samples).unwrap().abs() <= 1e-12);

        let c = cournot(2.0, 1.0, 0.0, 1.0, 2);
        let s2: Vec<_> = (0..2000).map(|_| c.sample_profile(&mut rng, 1.0)).collect();
        assert!(svi_residual(&c, &[2.0 / 3.0, 2.0 / 3.0], &s2).unwrap() <= 1e-8);

        let q = quadratic(1.0);
        let s3: Vec<_> = (0..100).map(|_| q.sample_profile(&mut rng, 5.0)).collect();
        assert_eq!(svi_residual(&q, &[0.0], &s3).unwrap(), 0.0);
        assert!(svi_residual(&q, &[0.0], &[]).is_err());
    }

    #[test]
    fn monotonicity_examples() {
        let c = cournot(2.0, 1.0, 0.0, 1.0, 2);
        let v = check_monotone(&c, &sample_pairs(&c, 10_000, 1.0, 3));
        assert!(v.monotone && v.strict);

        let b = bilinear(None);
        let v = check_monotone(&b, &sample_pairs(&b, 1000, 3.0, 4));
        assert!(v.monotone && !v.strict);
        assert!(v.worst.abs() < 1e-12);

        let a = almost_bilinear(2f64.powi(-6));
        let v = check_monotone(&a, &sample_pairs(&a, 10_000, 1.0, 5));
        assert!(!v.monotone && v.worst > 0.0);
    }

    #[test]
    fn variational_stability_examples() {
        let pd = prisoners_dilemma();
        assert!(check_variational_stability(&pd, &[0.0, 1.0, 0.0, 1.0], 0.1, 10_000, 1).unwrap());
        let mp = matching_pennies();
        assert!(!check_variational_stability(&mp, &[0.5, 0.5, 0.5, 0.5], 0.1, 10_000, 2).unwrap());
        let c = cournot(2.0, 1.0, 0.0, 1.0, 2);
        assert!(check_variational_stability(&c, &[2.0 / 3.0, 2.0 / 3.0], 0.1, 10_000, 3).unwrap());
    }

    #[test]
    fn sos_examples() {
        let q = quadratic(1.0);
        assert!(check_sos(&q, &[0.0], &tangent_basis(&q, &[0.0])).negative_definite);
        let b = bilinear(None);
        let v = check_sos(&b, &[0.0, 0.0], &tangent_basis(&b, &[0.0, 0.0]));
        assert!(!v.negative_definite && v.warning.is_some());
        let a = almost_bilinear(2f64.powi(-6));
        let v = check_sos(&a, &[0.0, 0.0], &tangent_basis(&a, &[0.0, 0.0]));
        assert!(!v.negative_definite);
        // symmetric part is 4ε·I at the origin
        assert!((v.max_eigenvalue - 4.0 * 2f64.powi(-6)).abs() < 1e-6);
    }

    #[test]
    fn subcoercivity_examples() {
        let a = almost_bilinear(2f64.powi(-6));
        assert!(check_subcoercive(&a, &[0.0, 0.0], &CompactSet::quartic(), 10_000, 1.0, 1).unwrap());
        let b = bilinear(Some(1.0));
        let small = CompactSet::Ball { center: vec![0.0, 0.0], radius: 0.1 };
        assert!(check_subcoercive(&b, &[0.0, 0.0], &small, 10_000, 1.0, 2).unwrap());
        let lp = stochastic_lp(vec![1.0], ActionSet::Box { dim: 1, lo: 0.0, hi: 1.0 }).unwrap();
        let mid = CompactSet::Box { lo: vec![0.4], hi: vec![0.6] };
        assert!(!check_subcoercive(&lp, &[0.5], &mid, 1000, 1.0, 3).unwrap());
    }

    #[test]
    fn catalog_ids_parse() {
        for id in [
            "almost_bilinear:eps=0.015625",
            "bilinear",
            "bilinear:box=1",
            "discoordination",
            "cournot:a=2,b=1,c=0,cap=1",
            "power_control",
            "matching_pennies",
            "prisoners_dilemma",
            "slp:c=1",
            "slp:c=1;0.5;0,set=simplex",
            "minmax_interior:mu=1",
            "quadratic:k=-1",
            "decay",
            "kinked",
        ] {
            let g = game_from_id(id).unwrap_or_else(|e| panic!("{id}: {e}"));
            assert_eq!(g.field(&vec![0.1; g.dim()]).len(), g.dim());
        }
        assert!(matches!(game_from_id("nope"), Err(GameError::UnknownGame(_))));
        assert!(game_from_id("cournot:z=1").is_err());
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let games = [
            almost_bilinear(2f64.powi(-6)),
            bilinear(None),
            discoordination(),
            cournot(2.0, 1.0, 0.0, 1.0, 3),
            game_from_id("power_control:users=3,channels=2,gains=1;0.2;0.4;1;0.3;0.7").unwrap(),
            matching_pennies(),
            prisoners_dilemma(),
            mixed_extension("rps3", FiniteGameSpec::new(vec![3, 3], vec![(0..9).map(|k| (k as f64 * 1.7).sin()).collect(), (0..9).map(|k| (k as f64 * 0.3).cos()).collect()]).unwrap()),
            stochastic_lp(vec![1.0, -2.0], ActionSet::Box { dim: 2, lo: 0.0, hi: 1.0 }).unwrap(),
            minmax_interior(1.0),
            quadratic(2.0),
            decay(1.0),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for g in &games {
            assert!(g.has_analytic_gradient(), "{}", g.id);
            for _ in 0..1000 {
                let x = g.sample_interior(&mut rng, 2.0, 0.01);
                let a = g.field(&x);
                let f = g.fd_gradient(&x);
                for (u, w) in a.iter().zip(&f) {
                    assert!((u - w).abs() <= 1e-5 * u.abs().max(1.0), "{}: {a:?} vs {f:?}", g.id);
                }
            }
        }
    }

    #[test]
    fn fd_fallback_without_analytic_gradient() {
        let g = GameSpec::from_fn("cubic", vec![ActionSet::Full { dim: 1 }], |_, x| -x[0].powi(3) / 3.0, None::<fn(&[f64], &mut [f64])>);
        assert!(!g.has_analytic_gradient());
        assert!(close(&g.field(&[2.0]), &[-4.0], 1e-6));
    }

    #[test]
    fn dominance_and_strict_ne_by_enumeration() {
        let pd = prisoners_dilemma_finite();
        assert_eq!(pd.dominated_pairs(0), vec![(0, 1)]);
        assert_eq!(pd.dominated_pairs(1), vec![(0, 1)]);
        assert!(pd.is_strict_ne(&[1, 1]));
        let mp = matching_pennies_finite();
        for idx in 0..4 {
            assert!(!mp.is_strict_ne(&mp.decode(idx)));
        }
        assert!(mp.dominated_pairs(0).is_empty());
    }

    #[test]
    fn cournot_equilibrium_formula() {
        assert!((cournot_equilibrium(2.0, 1.0, 0.0, 2) - 2.0 / 3.0).abs() < 1e-15);
        let g = cournot(2.0, 1.0, 0.0, 1.0, 2);
        let v = g.field(&[2.0 / 3.0, 2.0 / 3.0]);
        assert!(v.iter().all(|c| c.abs() < 1e-15));
    }

    #[test]
    fn vertex_generators() {
        let s = ActionSet::Simplex { dim: 3 };
        assert_eq!(s.vertex_cone_generators(&[0.0, 1.0, 0.0], 1e-12).unwrap(), vec![vec![1.0, -1.0, 0.0], vec![0.0, -1.0, 1.0]]);
        assert!(s.vertex_cone_generators(&[0.5, 0.5, 0.0], 1e-12).is_none());
        let b = ActionSet::Box { dim: 1, lo: 0.0, hi: 1.0 };
        assert_eq!(b.vertex_cone_generators(&[1.0], 1e-12).unwrap(), vec![vec![-1.0]]);
    }
}
