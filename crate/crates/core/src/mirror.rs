//! Regularizers, mirror maps, convex conjugates and the Fenchel coupling.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::games::{dist, dot, ActionSet, GameSpec, TargetSet, FEAS_TOL};

/// Largest dual magnitude accepted by the exponential map.
pub const EXP_DUAL_BOUND: f64 = 700.0;
/// Default restriction radius R for the exponential map (K = 1/R on [0, R]).
pub const EXP_DEFAULT_RADIUS: f64 = 10.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MirrorError {
    #[error("mirror map '{kind}' is incompatible with action set {set}")]
    Incompatible { kind: String, set: String },
    #[error("dual dimension {got} does not match map dimension {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("dual value {value} exceeds the exponential map bound {bound}")]
    Overflow { value: f64, bound: f64 },
    #[error("non-finite dual vector")]
    NonFinite,
    #[error("point outside the regularizer domain")]
    Domain,
    #[error("unknown mirror map id '{0}'")]
    Unknown(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MirrorKind {
    Euclidean,
    Logit,
    ExpOrthant,
    TanhInterval,
}

impl MirrorKind {
    pub fn parse(s: &str) -> Result<Self, MirrorError> {
        match s {
            "euclidean" => Ok(MirrorKind::Euclidean),
            "logit" | "entropic_simplex" => Ok(MirrorKind::Logit),
            "exp_orthant" => Ok(MirrorKind::ExpOrthant),
            "tanh_interval" => Ok(MirrorKind::TanhInterval),
            other => Err(MirrorError::Unknown(other.to_string())),
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            MirrorKind::Euclidean => "euclidean",
            MirrorKind::Logit => "logit",
            MirrorKind::ExpOrthant => "exp_orthant",
            MirrorKind::TanhInterval => "tanh_interval",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Block {
    Identity,
    Clamp { lo: f64, hi: f64 },
    SimplexProj,
    OrthantProj,
    Softmax,
    Exp,
    Tanh,
}

/// Product mirror map, one block per player.
#[derive(Clone, Debug, PartialEq)]
pub struct MirrorMap {
    kind: MirrorKind,
    blocks: Vec<(Block, std::ops::Range<usize>)>,
    sets: Vec<ActionSet>,
    dim: usize,
    radius: f64,
}

fn set_name(s: &ActionSet) -> String {
    match s {
        ActionSet::Full { dim } => format!("R^{dim}"),
        ActionSet::Box { dim, lo, hi } => format!("[{lo},{hi}]^{dim}"),
        ActionSet::Simplex { dim } => format!("simplex({dim})"),
        ActionSet::Orthant { dim } => format!("orthant({dim})"),
    }
}

impl MirrorMap {
    pub fn new(kind: MirrorKind, sets: &[ActionSet]) -> Result<Self, MirrorError> {
        let mut blocks = Vec::new();
        let mut off = 0;
        for s in sets {
            let b = match (kind, s) {
                (MirrorKind::Euclidean, ActionSet::Full { .. }) => Block::Identity,
                (MirrorKind::Euclidean, ActionSet::Box { lo, hi, .. }) => Block::Clamp { lo: *lo, hi: *hi },
                (MirrorKind::Euclidean, ActionSet::Simplex { .. }) => Block::SimplexProj,
                (MirrorKind::Euclidean, ActionSet::Orthant { .. }) => Block::OrthantProj,
                (MirrorKind::Logit, ActionSet::Simplex { .. }) => Block::Softmax,
                (MirrorKind::ExpOrthant, ActionSet::Orthant { .. }) => Block::Exp,
                (MirrorKind::TanhInterval, ActionSet::Box { lo, hi, .. }) if *lo == -1.0 && *hi == 1.0 => Block::Tanh,
                _ => return Err(MirrorError::Incompatible { kind: kind.id().into(), set: set_name(s) }),
            };
            blocks.push((b, off..off + s.dim()));
            off += s.dim();
        }
        Ok(MirrorMap { kind, blocks, sets: sets.to_vec(), dim: off, radius: EXP_DEFAULT_RADIUS })
    }

    pub fn for_game(kind: MirrorKind, game: &GameSpec) -> Result<Self, MirrorError> {
        Self::new(kind, &game.action_sets)
    }

    /// Restriction radius R used by the exponential map's strong-convexity constant.
    pub fn with_radius(mut self, radius: f64) -> Self {
        self.radius = radius;
        self
    }

    pub fn kind(&self) -> MirrorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn action_sets(&self) -> &[ActionSet] {
        &self.sets
    }

    pub fn restriction_radius(&self) -> Option<f64> {
        (self.kind == MirrorKind::ExpOrthant).then_some(self.radius)
    }

    /// Strong-convexity modulus K of h with respect to ℓ₂.
    pub fn strong_convexity(&self) -> f64 {
        match self.kind {
            MirrorKind::Euclidean | MirrorKind::Logit => 1.0,
            MirrorKind::ExpOrthant => 1.0 / self.radius,
            MirrorKind::TanhInterval => 2.0,
        }
    }

    /// True if every boundary point of X is in the image of Q.
    pub fn surjective(&self) -> bool {
        self.kind == MirrorKind::Euclidean
    }

    fn check_dual(&self, y: &[f64]) -> Result<(), MirrorError> {
        if y.len() != self.dim {
            return Err(MirrorError::Dimension { expected: self.dim, got: y.len() });
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(MirrorError::NonFinite);
        }
        if self.kind == MirrorKind::ExpOrthant {
            if let Some(v) = y.iter().find(|v| v.abs() > EXP_DUAL_BOUND) {
                return Err(MirrorError::Overflow { value: *v, bound: EXP_DUAL_BOUND });
            }
        }
        Ok(())
    }

    /// Q(y) = argmax ⟨y,x⟩ − h(x).
    pub fn mirror(&self, y: &[f64]) -> Result<Vec<f64>, MirrorError> {
        let mut x = vec![0.0; self.dim];
        self.mirror_into(y, &mut x)?;
        Ok(x)
    }

    pub fn mirror_into(&self, y: &[f64], x: &mut [f64]) -> Result<(), MirrorError> {
        self.check_dual(y)?;
        for (b, r) in &self.blocks {
            let (yb, xb) = (&y[r.clone()], &mut x[r.clone()]);
            match b {
                Block::Identity => xb.copy_from_slice(yb),
                Block::Clamp { lo, hi } => xb.iter_mut().zip(yb).for_each(|(o, v)| *o = v.clamp(*lo, *hi)),
                Block::OrthantProj => xb.iter_mut().zip(yb).for_each(|(o, v)| *o = v.max(0.0)),
                Block::SimplexProj => project_simplex(yb, xb),
                Block::Softmax => softmax(yb, xb),
                Block::Exp => xb.iter_mut().zip(yb).for_each(|(o, v)| *o = v.exp()),
                Block::Tanh => xb.iter_mut().zip(yb).for_each(|(o, v)| *o = (0.5 * v).tanh()),
            }
        }
        Ok(())
    }

    /// h(x); +∞ outside the action set.
    pub fn regularizer(&self, x: &[f64]) -> f64 {
        if x.len() != self.dim {
            return f64::INFINITY;
        }
        let mut total = 0.0;
        for ((b, r), s) in self.blocks.iter().zip(&self.sets) {
            let xb = &x[r.clone()];
            if !s.contains(xb, FEAS_TOL) {
                return f64::INFINITY;
            }
            total += match b {
                Block::Identity | Block::Clamp { .. } | Block::SimplexProj | Block::OrthantProj => 0.5 * dot(xb, xb),
                Block::Softmax => xb.iter().map(|&v| xlogx(v.max(0.0))).sum(),
                Block::Exp => xb.iter().map(|&v| xlogx(v.max(0.0)) - v).sum(),
                Block::Tanh => xb
                    .iter()
                    .map(|&v| {
                        let v = v.clamp(-1.0, 1.0);
                        xlogx(1.0 - v) + xlogx(1.0 + v)
                    })
                    .sum(),
            };
        }
        total
    }

    /// h*(y) = max ⟨y,x⟩ − h(x), in closed form per block.
    pub fn conjugate(&self, y: &[f64]) -> Result<f64, MirrorError> {
        self.check_dual(y)?;
        let mut total = 0.0;
        for (b, r) in &self.blocks {
            let yb = &y[r.clone()];
            total += match b {
                Block::Identity => 0.5 * dot(yb, yb),
                Block::Clamp { lo, hi } => yb
                    .iter()
                    .map(|v| {
                        let q = v.clamp(*lo, *hi);
                        v * q - 0.5 * q * q
                    })
                    .sum(),
                Block::OrthantProj => yb.iter().map(|v| 0.5 * v.max(0.0).powi(2)).sum(),
                Block::SimplexProj => {
                    let mut q = vec![0.0; yb.len()];
                    project_simplex(yb, &mut q);
                    dot(yb, &q) - 0.5 * dot(&q, &q)
                }
                Block::Softmax => logsumexp(yb),
                Block::Exp => yb.iter().map(|v| v.exp()).sum(),
                Block::Tanh => yb.iter().map(|v| 2.0 * log_cosh(0.5 * v)).sum(),
            };
        }
        Ok(total)
    }

    /// F(p, y) = h(p) + h*(y) − ⟨y, p⟩.
    pub fn fenchel_coupling(&self, p: &[f64], y: &[f64]) -> Result<f64, MirrorError> {
        let h = self.regularizer(p);
        if !h.is_finite() {
            return Err(MirrorError::Domain);
        }
        Ok(h + self.conjugate(y)? - dot(y, p))
    }

    /// A dual point with Q(y) = p for p in the relative interior (inverse of the closed form).
    pub fn dual_preimage(&self, p: &[f64]) -> Option<Vec<f64>> {
        if p.len() != self.dim {
            return None;
        }
        let mut y = vec![0.0; self.dim];
        for (b, r) in &self.blocks {
            let (pb, yb) = (&p[r.clone()], &mut y[r.clone()]);
            match b {
                Block::Identity | Block::Clamp { .. } | Block::OrthantProj | Block::SimplexProj => yb.copy_from_slice(pb),
                Block::Softmax | Block::Exp => {
                    if pb.iter().any(|&v| v <= 0.0) {
                        return None;
                    }
                    yb.iter_mut().zip(pb).for_each(|(o, v)| *o = v.ln());
                }
                Block::Tanh => {
                    if pb.iter().any(|&v| v.abs() >= 1.0) {
                        return None;
                    }
                    yb.iter_mut().zip(pb).for_each(|(o, v)| *o = 2.0 * v.atanh());
                }
            }
        }
        Some(y)
    }
}

fn xlogx(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v * v.ln()
    }
}

/// log cosh z = |z| + log1p(e^{−2|z|}) − ln 2.
pub fn log_cosh(z: f64) -> f64 {
    let a = z.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

pub fn logsumexp(y: &[f64]) -> f64 {
    let m = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + y.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(y: &[f64], out: &mut [f64]) {
    let m = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for (o, v) in out.iter_mut().zip(y) {
        *o = (v - m).exp();
        s += *o;
    }
    out.iter_mut().for_each(|o| *o /= s);
}

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_simplex(y: &[f64], out: &mut [f64]) {
    let mut u = y.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (k, &v) in u.iter().enumerate() {
        css += v;
        let t = (css - 1.0) / (k + 1) as f64;
        if v - t > 0.0 {
            theta = t;
        }
    }
    out.iter_mut().zip(y).for_each(|(o, v)| *o = (v - theta).max(0.0));
}

/// Largest ratio ‖Q(y′)−Q(y)‖/‖y′−y‖ over the given dual pairs; identical pairs are skipped.
pub fn verify_lipschitz(map: &MirrorMap, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64, MirrorError> {
    let mut worst: f64 = 0.0;
    for (a, b) in pairs {
        let d = dist(a, b);
        if d == 0.0 {
            continue;
        }
        worst = worst.max(dist(&map.mirror(a)?, &map.mirror(b)?) / d);
    }
    Ok(worst)
}

/// F(b,y′) − [F(b,y) + ⟨y′−y, Q(y)−b⟩ + ‖y′−y‖²/(2K)].
pub fn fenchel_smoothness_check(map: &MirrorMap, p: &[f64], y: &[f64], y2: &[f64]) -> Result<f64, MirrorError> {
    let k = map.strong_convexity();
    let q = map.mirror(y)?;
    let dy: Vec<f64> = y2.iter().zip(y).map(|(a, b)| a - b).collect();
    let qb: Vec<f64> = q.iter().zip(p).map(|(a, b)| a - b).collect();
    let lhs = map.fenchel_coupling(p, y2)?;
    let rhs = map.fenchel_coupling(p, y)? + dot(&dy, &qb) + dot(&dy, &dy) / (2.0 * k);
    Ok(lhs - rhs)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EscapeSample {
    pub t: f64,
    pub x: Vec<f64>,
    pub distance: f64,
}

/// Evaluate Q along y_t = base + t·direction and report the distance to `target` at each magnitude.
pub fn boundary_escape_check(map: &MirrorMap, base: &[f64], direction: &[f64], magnitudes: &[f64], target: &TargetSet) -> Result<Vec<EscapeSample>, MirrorError> {
    magnitudes
        .iter()
        .map(|&t| {
            let y: Vec<f64> = base.iter().zip(direction).map(|(b, d)| b + t * d).collect();
            let x = map.mirror(&y)?;
            Ok(EscapeSample { t, distance: target.distance(&x), x })
        })
        .collect()
}
