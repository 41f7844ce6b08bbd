//! Energy functions, deviation sets, error ledgers and convergence diagnostics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{flow, FlowConfig, FlowError};
use crate::engine::{conditional_signal, CondMethod, EngineError, MrmState, RunRecord, RunSpec};
use crate::games::{dist, dot, norm, ActionSet, GameError, GameSpec, TargetSet};
use crate::mirror::{boundary_escape_check, EscapeSample, MirrorError, MirrorMap};

/// θ(u) = u on [0,1], 2√u − 1 above.
fn vs_gauge(u: f64) -> (f64, f64) {
    if u <= 1.0 {
        (u, 1.0)
    } else {
        (2.0 * u.sqrt() - 1.0, 1.0 / u.sqrt())
    }
}

/// Quintic smootherstep S with S(0)=0, S(1)=1 and vanishing first and second derivatives at both ends.
fn smootherstep(w: f64) -> (f64, f64) {
    let w = w.clamp(0.0, 1.0);
    let s = w * w * w * (10.0 - 15.0 * w + 6.0 * w * w);
    let ds = 30.0 * w * w * (1.0 - w) * (1.0 - w);
    (s, ds)
}

/// 0 below c, √u above 2c, joined C² by θ(u) = S((u−c)/c)·√u.
fn subcoercive_gauge(u: f64, c: f64) -> (f64, f64) {
    if u <= c {
        return (0.0, 0.0);
    }
    if u >= 2.0 * c {
        return (u.sqrt(), 0.5 / u.sqrt());
    }
    let (s, ds) = smootherstep((u - c) / c);
    (s * u.sqrt(), ds / c * u.sqrt() + s * 0.5 / u.sqrt())
}

fn sech(z: f64) -> f64 {
    1.0 / z.cosh()
}

#[derive(Clone, Debug)]
pub enum EnergyKind {
    /// θ(F(x*, y)).
    FenchelVs { x_star: Vec<f64> },
    /// log(1 + Σ exp⟨y, z⟩).
    Coherent { z: Vec<Vec<f64>> },
    /// θ(F(b, y)) with the subcoercivity gauge at level c.
    SubcoercivityGauge { b: Vec<f64>, level: f64 },
    /// 2 sech(y₁/2) sech(y₂/2).
    Discoordination,
    /// ⟨y, z⟩; not bounded below, used for the coherent ledger.
    Linear { z: Vec<f64> },
}

#[derive(Clone, Debug)]
pub struct EnergyFunction {
    pub kind: EnergyKind,
    map: Option<MirrorMap>,
}

impl EnergyFunction {
    pub fn value(&self, y: &[f64]) -> Result<f64, MirrorError> {
        Ok(match &self.kind {
            EnergyKind::FenchelVs { x_star } => vs_gauge(self.coupling(x_star, y)?).0,
            EnergyKind::Coherent { z } => {
                let s: Vec<f64> = z.iter().map(|zz| dot(y, zz)).collect();
                let m = s.iter().cloned().fold(0.0, f64::max);
                let tail: f64 = s.iter().map(|v| (v - m).exp()).sum();
                if m == 0.0 {
                    tail.ln_1p()
                } else {
                    m + ((-m).exp() + tail).ln()
                }
            }
            EnergyKind::SubcoercivityGauge { b, level } => subcoercive_gauge(self.coupling(b, y)?, *level).0,
            EnergyKind::Discoordination => 2.0 * sech(y[0] / 2.0) * sech(y[1] / 2.0),
            EnergyKind::Linear { z } => dot(y, z),
        })
    }

    pub fn gradient(&self, y: &[f64]) -> Result<Vec<f64>, MirrorError> {
        Ok(match &self.kind {
            EnergyKind::FenchelVs { x_star } => {
                let (_, d) = vs_gauge(self.coupling(x_star, y)?);
                let q = self.map().mirror(y)?;
                q.iter().zip(x_star).map(|(a, b)| d * (a - b)).collect()
            }
            EnergyKind::Coherent { z } => {
                let s: Vec<f64> = std::iter::once(0.0).chain(z.iter().map(|zz| dot(y, zz))).collect();
                let mut w = vec![0.0; s.len()];
                crate::mirror::softmax(&s, &mut w);
                let mut g = vec![0.0; y.len()];
                for (wk, zz) in w[1..].iter().zip(z) {
                    g.iter_mut().zip(zz).for_each(|(gi, zi)| *gi += wk * zi);
                }
                g
            }
            EnergyKind::SubcoercivityGauge { b, level } => {
                let (_, d) = subcoercive_gauge(self.coupling(b, y)?, *level);
                let q = self.map().mirror(y)?;
                q.iter().zip(b).map(|(a, bb)| d * (a - bb)).collect()
            }
            EnergyKind::Discoordination => {
                let (a, b) = (y[0] / 2.0, y[1] / 2.0);
                let e = 2.0 * sech(a) * sech(b);
                vec![-0.5 * e * a.tanh(), -0.5 * e * b.tanh()]
            }
            EnergyKind::Linear { z } => z.clone(),
        })
    }

    /// Declared infimum.
    pub fn inf(&self) -> f64 {
        match self.kind {
            EnergyKind::Linear { .. } => f64::NEG_INFINITY,
            _ => 0.0,
        }
    }

    /// Analytic constant L_E with E(y') ≤ E(y) + ⟨∇E(y), y'−y⟩ + (L_E/2)‖y'−y‖², when one is known globally.
    pub fn smoothness(&self) -> Option<f64> {
        match &self.kind {
            EnergyKind::FenchelVs { .. } => {
                let m = self.map();
                // 1/K is a global Lipschitz constant of Q only for the unrestricted kinds
                (m.restriction_radius().is_none()).then(|| 1.0 / m.strong_convexity())
            }
            EnergyKind::Coherent { z } => Some(z.iter().map(|zz| dot(zz, zz)).fold(0.0, f64::max)),
            EnergyKind::SubcoercivityGauge { .. } => None,
            EnergyKind::Discoordination => Some(0.625),
            EnergyKind::Linear { .. } => Some(0.0),
        }
    }

    /// Bound G_E on ‖∇E‖.
    pub fn gradient_bound(&self) -> Option<f64> {
        match &self.kind {
            EnergyKind::FenchelVs { .. } => Some((2.0 / self.map().strong_convexity()).sqrt()),
            EnergyKind::Coherent { z } => Some(z.iter().map(|zz| norm(zz)).fold(0.0, f64::max)),
            EnergyKind::Linear { z } => Some(norm(z)),
            // max of sech²a sech²b (tanh²a + tanh²b) is 8/27
            EnergyKind::Discoordination => Some((8.0f64 / 27.0).sqrt()),
            _ => None,
        }
    }

    fn map(&self) -> &MirrorMap {
        self.map.as_ref().expect("coupling energies carry a mirror map")
    }

    fn coupling(&self, p: &[f64], y: &[f64]) -> Result<f64, MirrorError> {
        self.map().fenchel_coupling(p, y).map(|f| f.max(0.0))
    }
}

/// θ(F(x*, y)), G_E = √(2/K).
pub fn fenchel_vs_energy(map: &MirrorMap, x_star: &[f64]) -> EnergyFunction {
    EnergyFunction { kind: EnergyKind::FenchelVs { x_star: x_star.to_vec() }, map: Some(map.clone()) }
}

pub fn coherent_energy(dev: &DeviationSet) -> EnergyFunction {
    EnergyFunction { kind: EnergyKind::Coherent { z: dev.z.clone() }, map: None }
}

pub fn linear_energy(z: &[f64]) -> EnergyFunction {
    EnergyFunction { kind: EnergyKind::Linear { z: z.to_vec() }, map: None }
}

pub fn subcoercivity_energy(map: &MirrorMap, b: &[f64], level: f64) -> EnergyFunction {
    EnergyFunction { kind: EnergyKind::SubcoercivityGauge { b: b.to_vec(), level }, map: Some(map.clone()) }
}

pub fn discoordination_energy() -> EnergyFunction {
    EnergyFunction { kind: EnergyKind::Discoordination, map: None }
}

/// Largest sampled value of 2(E(y') − E(y) − ⟨∇E(y), y'−y⟩)/‖y'−y‖² over random nearby pairs.
pub fn empirical_smoothness(energy: &EnergyFunction, dim: usize, extent: f64, n: usize, seed: u64) -> Result<f64, MirrorError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let y: Vec<f64> = (0..dim).map(|_| rng.random_range(-extent..extent)).collect();
        let scale = 10f64.powf(rng.random_range(-3.0..0.0));
        let d: Vec<f64> = (0..dim).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
        let y2: Vec<f64> = y.iter().zip(&d).map(|(a, b)| a + b).collect();
        let g = energy.gradient(&y)?;
        let gap = energy.value(&y2)? - energy.value(&y)? - dot(&g, &d);
        let dd = dot(&d, &d);
        if dd > 0.0 {
            worst = worst.max(2.0 * gap / dd);
        }
    }
    Ok(worst)
}

/// Finite deviation directions plus the target set they certify.
#[derive(Clone, Debug)]
pub struct DeviationSet {
    pub z: Vec<Vec<f64>>,
    pub target: TargetSet,
}

impl DeviationSet {
    /// max over sampled target points and z of ⟨v(x), z⟩; coherence needs this negative.
    pub fn worst_pairing(&self, game: &GameSpec, points: &[Vec<f64>]) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for x in points {
            let v = game.field(x);
            for z in &self.z {
                worst = worst.max(dot(&v, z));
            }
        }
        worst
    }

    /// Sample points of the target: the points themselves, or random profiles pushed onto the face.
    pub fn sample_target(&self, game: &GameSpec, n: usize, seed: u64) -> Vec<Vec<f64>> {
        match &self.target {
            TargetSet::Points(p) => p.points.clone(),
            TargetSet::Face { fixed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n)
                    .map(|_| {
                        let mut x = game.sample_profile(&mut rng, 1.0);
                        for &(k, v) in fixed {
                            x[k] = v;
                        }
                        for (i, s) in game.action_sets.iter().enumerate() {
                            if let ActionSet::Simplex { .. } = s {
                                let r = game.block(i);
                                let tot: f64 = x[r.clone()].iter().sum();
                                r.for_each(|k| x[k] /= tot);
                            }
                        }
                        x
                    })
                    .collect()
            }
        }
    }

    /// Ramp y_t = base − t·Σz and report the distance of Q(y_t) to the target.
    pub fn escape(&self, map: &MirrorMap, base: &[f64], magnitudes: &[f64]) -> Result<Vec<EscapeSample>, MirrorError> {
        let mut dir = vec![0.0; base.len()];
        for z in &self.z {
            dir.iter_mut().zip(z).for_each(|(d, zz)| *d -= zz);
        }
        boundary_escape_check(map, base, &dir, magnitudes, &self.target)
    }
}

fn unit(dim: usize, k: usize) -> Vec<f64> {
    let mut e = vec![0.0; dim];
    e[k] = 1.0;
    e
}

/// {e_{i,b} − e_{i,a_i} : b ≠ a_i} at a strict NE a.
pub fn strict_ne_deviations(game: &GameSpec, profile: &[usize]) -> Result<DeviationSet, GameError> {
    let fg = game.finite().ok_or_else(|| GameError::Rejected("strict-NE deviations need a finite game".into()))?;
    if profile.len() != fg.n_players() || profile.iter().zip(&fg.counts).any(|(a, c)| a >= c) {
        return Err(GameError::Argument(format!("profile {profile:?} does not fit the game")));
    }
    if !fg.is_strict_ne(profile) {
        return Err(GameError::Rejected(format!("{profile:?} is not a strict NE")));
    }
    let d = game.dim();
    let mut z = Vec::new();
    let mut x = vec![0.0; d];
    for (i, &a) in profile.iter().enumerate() {
        let off = game.block(i).start;
        x[off + a] = 1.0;
        for b in 0..fg.counts[i] {
            if b != a {
                let mut v = unit(d, off + b);
                v[off + a] = -1.0;
                z.push(v);
            }
        }
    }
    let target = TargetSet::Points(crate::games::SetOfPoints::new(game, vec![x])?);
    Ok(DeviationSet { z, target })
}

/// Pure-strategy dominance only: z = e_{i,a} − e_{i,b} for a dominated by b; S = {x_{i,a} = 0}.
pub fn dominated_deviations(game: &GameSpec) -> Result<DeviationSet, GameError> {
    let fg = game.finite().ok_or_else(|| GameError::Rejected("dominance needs a finite game".into()))?;
    let d = game.dim();
    let mut z = Vec::new();
    let mut fixed = Vec::new();
    for i in 0..fg.n_players() {
        let off = game.block(i).start;
        for (a, b) in fg.dominated_pairs(i) {
            let mut v = unit(d, off + a);
            v[off + b] = -1.0;
            z.push(v);
            fixed.push((off + a, 0.0));
        }
    }
    if z.is_empty() {
        return Err(GameError::Rejected("no strictly dominated pure strategy".into()));
    }
    Ok(DeviationSet { z, target: TargetSet::Face { fixed } })
}

/// Tangent-cone generators at a vertex x*, accepted only if v(x*) pairs strictly negatively with each.
pub fn sharp_deviations(game: &GameSpec, x_star: &[f64]) -> Result<DeviationSet, GameError> {
    game.check_feasible(x_star)?;
    let v = game.field(x_star);
    let mut z = Vec::new();
    for i in 0..game.n_players() {
        let r = game.block(i);
        let gens = game.action_sets[i]
            .vertex_cone_generators(&x_star[r.clone()], 1e-12)
            .ok_or_else(|| GameError::Rejected(format!("player {i}'s action is not at a vertex, so x* is not sharp")))?;
        for g in gens {
            let mut full = vec![0.0; game.dim()];
            full[r.clone()].copy_from_slice(&g);
            if dot(&v, &full) >= 0.0 {
                return Err(GameError::Rejected(format!("v(x*) is not in the interior of the polar cone: direction {g:?} of player {i} is not strictly worse")));
            }
            z.push(full);
        }
    }
    let target = TargetSet::Points(crate::games::SetOfPoints::new(game, vec![x_star.to_vec()])?);
    Ok(DeviationSet { z, target })
}

/// Optimal face of a linear payoff ⟨c, x⟩ on a box or simplex, single player.
pub fn slp_face_deviations(game: &GameSpec, c: &[f64]) -> Result<DeviationSet, GameError> {
    if game.n_players() != 1 || c.len() != game.dim() {
        return Err(GameError::Argument("slp face deviations need one player with |c| = dim".into()));
    }
    let d = game.dim();
    let mut z = Vec::new();
    let mut fixed = Vec::new();
    match game.action_sets[0] {
        ActionSet::Box { lo, hi, .. } => {
            for (k, &ck) in c.iter().enumerate() {
                if ck > 0.0 {
                    fixed.push((k, hi));
                    z.push(unit(d, k).iter().map(|v| -v).collect());
                } else if ck < 0.0 {
                    fixed.push((k, lo));
                    z.push(unit(d, k));
                }
            }
        }
        ActionSet::Simplex { .. } => {
            let best = c.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let top: Vec<usize> = (0..d).filter(|&k| c[k] == best).collect();
            for b in (0..d).filter(|k| !top.contains(k)) {
                fixed.push((b, 0.0));
                for &a in &top {
                    let mut v = unit(d, b);
                    v[a] = -1.0;
                    z.push(v);
                }
            }
        }
        _ => return Err(GameError::Rejected("slp faces are implemented for boxes and simplices".into())),
    }
    if z.is_empty() {
        return Err(GameError::Rejected("the optimal face is the whole set".into()));
    }
    // a single optimal point is a point target, otherwise a face
    let target = if fixed.len() == d {
        let mut x = vec![0.0; d];
        for &(k, v) in &fixed {
            x[k] = v;
        }
        TargetSet::Points(crate::games::SetOfPoints::new(game, vec![x])?)
    } else {
        TargetSet::Face { fixed }
    };
    Ok(DeviationSet { z, target })
}

/// Per-step terms of the energy inequality and their prefix aggregates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorLedger {
    pub n: Vec<u64>,
    pub gamma: Vec<f64>,
    /// ψ = ⟨U, ∇E⟩
    pub psi: Vec<f64>,
    /// χ = ⟨b, ∇E⟩, realized
    pub chi: Vec<f64>,
    /// G_E‖b‖ when G_E is known
    pub chi_bound: Vec<f64>,
    /// ξ = (L_E/2)‖v̂‖²
    pub xi: Vec<f64>,
    pub s_agg: Vec<f64>,
    pub b_agg: Vec<f64>,
    pub t_agg: Vec<f64>,
    /// max over steps of LHS − RHS of the template inequality
    pub max_violation: f64,
    pub l_e: f64,
    pub l_e_empirical: bool,
}

/// Replay dense rows (with stored signals) and evaluate the energy inequality step by step.
pub fn error_ledger(spec: &RunSpec, rec: &RunRecord, energy: &EnergyFunction, cond: CondMethod) -> Result<ErrorLedger, EngineError> {
    let rows: Vec<_> = rec.full_rows().collect();
    if rows.windows(2).any(|w| w[1].n != w[0].n + 1) || rows.iter().any(|r| r.signal.is_none()) {
        return Err(EngineError::Config("error ledger needs dense rows with stored signals".into()));
    }
    let (l_e, emp) = match energy.smoothness() {
        Some(l) => (l, false),
        None => {
            let extent = rows.iter().map(|r| norm(&r.y)).fold(1.0, f64::max);
            (empirical_smoothness(energy, spec.game.dim(), extent, 20_000, 7).map_err(EngineError::Mirror)? * 1.01, true)
        }
    };
    let g_e = energy.gradient_bound();
    let mut led = ErrorLedger { l_e, l_e_empirical: emp, max_violation: f64::NEG_INFINITY, ..Default::default() };
    let (mut s, mut b, mut t) = (0.0, 0.0, 0.0);
    let mut prev: Option<Vec<f64>> = None;
    for (idx, r) in rows.iter().enumerate() {
        let vhat = r.signal.as_ref().unwrap();
        let y_next = match rows.get(idx + 1) {
            Some(nx) => nx.y.clone(),
            None if rec.terminal.n == r.n + 1 => rec.terminal.y.clone(),
            None => break,
        };
        let gamma = spec.schedule.gamma_n(r.n);
        let st = MrmState { n: r.n, y: r.y.clone(), x: r.x.clone(), prev: prev.clone() };
        let mean = conditional_signal(spec, &st, cond, 1)?.mean;
        let v = spec.game.field(&r.x);
        let grad = energy.gradient(&r.y)?;
        let u: Vec<f64> = vhat.iter().zip(&mean).map(|(a, m)| a - m).collect();
        let bias: Vec<f64> = mean.iter().zip(&v).map(|(m, vv)| m - vv).collect();
        let psi = dot(&u, &grad);
        let chi = dot(&bias, &grad);
        let xi = 0.5 * l_e * dot(vhat, vhat);
        let lhs = energy.value(&y_next)?;
        let rhs = energy.value(&r.y)? + gamma * dot(&v, &grad) + gamma * psi + gamma * chi + gamma * gamma * xi;
        // relative slack for rounding in the sums
        let slack = 1e-12 * (lhs.abs() + rhs.abs());
        led.max_violation = led.max_violation.max(lhs - rhs - slack);
        s += gamma * psi;
        b += gamma * chi;
        t += gamma * gamma * xi;
        led.n.push(r.n);
        led.gamma.push(gamma);
        led.psi.push(psi);
        led.chi.push(chi);
        led.chi_bound.push(g_e.map(|g| g * norm(&bias)).unwrap_or(f64::NAN));
        led.xi.push(xi);
        led.s_agg.push(s);
        led.b_agg.push(b);
        led.t_agg.push(t);
        if spec.algorithm == crate::engine::Algorithm::Og {
            prev = Some(vhat.clone());
        }
    }
    Ok(led)
}

/// max(LHS − RHS) of the template inequality along the run.
pub fn template_inequality_check(spec: &RunSpec, rec: &RunRecord, energy: &EnergyFunction) -> Result<f64, EngineError> {
    Ok(error_ledger(spec, rec, energy, CondMethod::Auto { mc_draws: 4000 })?.max_violation)
}

/// Largest level e such that ⟨v(Q(y)), ∇E(y)⟩ < 0 at every grid point with 0 < E(y) < e.
pub fn estimate_basin(energy: &EnergyFunction, map: &MirrorMap, game: &GameSpec, grid: &[Vec<f64>]) -> Result<f64, MirrorError> {
    let mut pts = Vec::with_capacity(grid.len());
    for y in grid {
        let e = energy.value(y)?;
        let g = energy.gradient(y)?;
        let drift = dot(&game.field(&map.mirror(y)?), &g);
        pts.push((e, drift, norm(&g)));
    }
    let mut e_max = f64::INFINITY;
    for (e, drift, gn) in pts {
        if gn > 1e-12 && drift >= 0.0 {
            e_max = e_max.min(e);
        }
    }
    Ok(e_max)
}

/// Regular grid on [−extent, extent]^d.
pub fn dual_grid(dim: usize, extent: f64, per_axis: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..per_axis).map(|k| -extent + 2.0 * extent * k as f64 / (per_axis - 1).max(1) as f64).collect();
    let mut out = vec![Vec::new()];
    for _ in 0..dim {
        out = out.into_iter().flat_map(|p| axis.iter().map(move |a| {
            let mut q = p.clone();
            q.push(*a);
            q
        })).collect();
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub final_distance: f64,
    /// First retained n with distance ≤ ρ.
    pub first_hit: Option<u64>,
    /// First retained n with x exactly in the target.
    pub exact_membership: Option<u64>,
    /// First retained n from which every later retained row is exactly in the target.
    pub absorbed_from: Option<u64>,
}

pub fn convergence_diagnostics(rec: &RunRecord, target: &TargetSet, rho: f64) -> ConvergenceReport {
    let mut first_hit = None;
    let mut exact = None;
    let mut absorbed = None;
    for r in rec.full_rows() {
        if first_hit.is_none() && target.distance(&r.x) <= rho {
            first_hit = Some(r.n);
        }
        if target.contains_exactly(&r.x) {
            exact.get_or_insert(r.n);
            absorbed.get_or_insert(r.n);
        } else {
            absorbed = None;
        }
    }
    let final_in = target.contains_exactly(&rec.terminal.x);
    if !final_in {
        absorbed = None;
    } else if absorbed.is_none() {
        absorbed = Some(rec.terminal.n);
        exact.get_or_insert(rec.terminal.n);
    }
    ConvergenceReport { final_distance: target.distance(&rec.terminal.x), first_hit, exact_membership: exact, absorbed_from: absorbed }
}

pub fn success_fraction(reports: &[ConvergenceReport], rho: f64) -> f64 {
    if reports.is_empty() {
        return 0.0;
    }
    reports.iter().filter(|r| r.final_distance <= rho).count() as f64 / reports.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub stderr: f64,
    pub intercept: f64,
    /// Some entries were zero and got offset by machine epsilon.
    pub zero_offset: bool,
    pub points: usize,
}

/// Least-squares slope of log|value| against log n over n in [lo, hi].
pub fn rate_estimator(series: &[(f64, f64)], n_range: (f64, f64)) -> Option<RateFit> {
    let mut zero = false;
    let pts: Vec<(f64, f64)> = series
        .iter()
        .filter(|(n, _)| *n >= n_range.0 && *n <= n_range.1)
        .map(|&(n, v)| {
            let a = v.abs();
            if a == 0.0 {
                zero = true;
            }
            (n.ln(), a.max(f64::EPSILON).ln())
        })
        .collect();
    let m = pts.len();
    if m < 3 {
        return None;
    }
    let mf = m as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / mf;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / mf;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let stderr = (rss / (mf - 2.0) / sxx).sqrt();
    Some(RateFit { slope, stderr, intercept, zero_offset: zero, points: m })
}

/// Empirical bias ‖E[v̂|state] − v(x)‖ and magnitude (ess-sup ‖v̂‖ when exact, else the realized ‖v̂‖) at chosen n.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignalProfile {
    pub n: Vec<u64>,
    pub bias: Vec<f64>,
    pub magnitude: Vec<f64>,
}

pub fn signal_profile(spec: &RunSpec, at: &[u64], cond: CondMethod) -> Result<SignalProfile, EngineError> {
    let mut states = Vec::new();
    let mut want = at.to_vec();
    want.sort_unstable();
    let mut realized = Vec::new();
    {
        let mut obs = |s: &crate::engine::StepView| {
            if want.binary_search(&s.n).is_ok() {
                states.push(MrmState { n: s.n, y: s.y.to_vec(), x: s.x.to_vec(), prev: s.prev.map(|p| p.to_vec()) });
                realized.push(norm(&s.signal.value));
            }
        };
        let mut short = spec.clone();
        short.iters = *want.last().unwrap_or(&0);
        short.thinning = crate::engine::Thinning { every: u64::MAX, head: 0, tail: 0, windows: Vec::new() };
        crate::engine::run_observed(&short, &mut obs)?;
    }
    let mut out = SignalProfile { n: Vec::new(), bias: Vec::new(), magnitude: Vec::new() };
    for (st, re) in states.iter().zip(realized) {
        let c = conditional_signal(spec, st, cond, 2)?;
        let v = spec.game.field(&st.x);
        out.n.push(st.n);
        out.bias.push(dist(&c.mean, &v));
        out.magnitude.push(c.ess_sup.unwrap_or(re));
    }
    Ok(out)
}

/// One period of the limit cycle reached by the mean dynamics from y0.
#[derive(Clone, Debug, PartialEq)]
pub struct ReferenceCycle {
    pub points: Vec<Vec<f64>>,
    pub period: f64,
    pub min_radius: f64,
}

/// Integrate for `horizon` and keep the last full turn between upward crossings of y₂ = 0 with y₁ > 0.
pub fn reference_cycle(map: &MirrorMap, game: &GameSpec, y0: &[f64], horizon: f64, dt: f64) -> Result<ReferenceCycle, FlowError> {
    let f = flow(map, game, y0, &FlowConfig::new(horizon).with_dt(dt).unchecked())?;
    let xs = &f.x;
    let mut crossings = Vec::new();
    for k in 1..xs.len() {
        let (a, b) = (&xs[k - 1], &xs[k]);
        if a[1] < 0.0 && b[1] >= 0.0 && b[0] > 0.0 {
            crossings.push(k);
        }
        if a[1] > 0.0 && b[1] <= 0.0 && b[0] > 0.0 {
            crossings.push(k);
        }
    }
    // the orbit may turn either way; use crossings of the same orientation
    let up: Vec<usize> = crossings.iter().copied().filter(|&k| xs[k - 1][1] < 0.0).collect();
    let down: Vec<usize> = crossings.iter().copied().filter(|&k| xs[k - 1][1] > 0.0).collect();
    let same = if up.len() >= down.len() { up } else { down };
    if same.len() < 2 {
        return Err(FlowError::Settings("no closed orbit detected within the horizon".into()));
    }
    let (s, e) = (same[same.len() - 2], same[same.len() - 1]);
    let points: Vec<Vec<f64>> = xs[s..=e].to_vec();
    let min_radius = points.iter().map(|p| norm(p)).fold(f64::INFINITY, f64::min);
    Ok(ReferenceCycle { period: f.t[e] - f.t[s], points, min_radius })
}

fn point_to_polyline(p: &[f64], poly: &[Vec<f64>]) -> f64 {
    let mut best = f64::INFINITY;
    for w in poly.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let ab: Vec<f64> = b.iter().zip(a).map(|(u, v)| u - v).collect();
        let ap: Vec<f64> = p.iter().zip(a).map(|(u, v)| u - v).collect();
        let l2 = dot(&ab, &ab);
        let t = if l2 > 0.0 { (dot(&ap, &ab) / l2).clamp(0.0, 1.0) } else { 0.0 };
        let proj: Vec<f64> = a.iter().zip(&ab).map(|(u, v)| u + t * v).collect();
        best = best.min(dist(p, &proj));
    }
    if poly.len() == 1 {
        best = dist(p, &poly[0]);
    }
    best
}

/// Hausdorff distances between a point cloud and a closed curve: (cloud → curve, curve → cloud).
pub fn hausdorff_to_cycle(points: &[Vec<f64>], cycle: &[Vec<f64>]) -> (f64, f64) {
    let forward = points.iter().map(|p| point_to_polyline(p, cycle)).fold(0.0, f64::max);
    let back = cycle.iter().map(|c| points.iter().map(|p| dist(p, c)).fold(f64::INFINITY, f64::min)).fold(0.0, f64::max);
    (forward, back)
}

/// Moving average with a trailing window.
pub fn moving_average(series: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || series.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(series.len() - window + 1);
    let mut acc: f64 = series[..window].iter().sum();
    out.push(acc / window as f64);
    for k in window..series.len() {
        acc += series[k] - series[k - window];
        out.push(acc / window as f64);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, Algorithm, RunSpec, Schedule, Thinning};
    use crate::feedback::NoiseModel;
    use crate::games;
    use crate::mirror::MirrorKind;

    fn fd_grad(e: &EnergyFunction, y: &[f64]) -> Vec<f64> {
        (0..y.len())
            .map(|k| {
                let h = 1e-6;
                let mut a = y.to_vec();
                let mut b = y.to_vec();
                a[k] += h;
                b[k] -= h;
                (e.value(&a).unwrap() - e.value(&b).unwrap()) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn fenchel_energy_examples() {
        let g = games::quadratic(1.0);
        let m = MirrorMap::for_game(MirrorKind::Euclidean, &g).unwrap();
        let e = fenchel_vs_energy(&m, &[0.0]);
        assert_eq!(e.value(&[0.0]).unwrap(), 0.0);
        assert!((e.value(&[0.3]).unwrap() - 0.045).abs() < 1e-15);
        assert!((e.value(&[4.0]).unwrap() - (2.0 * 8f64.sqrt() - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn fenchel_gradient_bound_and_fd() {
        let pd = games::prisoners_dilemma();
        let m = MirrorMap::for_game(MirrorKind::Logit, &pd).unwrap();
        let e = fenchel_vs_energy(&m, &[0.3, 0.7, 0.5, 0.5]);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let bound = (2.0 / m.strong_convexity()).sqrt();
        for _ in 0..2000 {
            let y: Vec<f64> = (0..4).map(|_| rng.random_range(-8.0..8.0)).collect();
            let g = e.gradient(&y).unwrap();
            assert!(norm(&g) <= bound + 1e-6);
            let fd = fd_grad(&e, &y);
            assert!(dist(&g, &fd) < 1e-5, "{g:?} {fd:?}");
        }
    }

    #[test]
    fn primal_bound_below_the_knee() {
        let b = games::bilinear(Some(1.0));
        let m = MirrorMap::for_game(MirrorKind::Euclidean, &b).unwrap();
        let xs = [0.2, -0.4];
        let e = fenchel_vs_energy(&m, &xs);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5000 {
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let en = e.value(&y).unwrap();
            if en <= 1.0 {
                assert!(dist(&m.mirror(&y).unwrap(), &xs) <= (2.0 * en / m.strong_convexity()).sqrt() + 1e-12);
            }
        }
    }

    #[test]
    fn coherent_energy_examples() {
        let e = EnergyFunction { kind: EnergyKind::Coherent { z: vec![vec![1.0, -1.0]] }, map: None };
        assert!((e.value(&[0.5, 0.5]).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(e.value(&[-400.0, 400.0]).unwrap() < 1e-300);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..2000 {
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-20.0..20.0)).collect();
            let eps = e.value(&y).unwrap();
            if eps > 0.0 && eps < 50.0 {
                let s = dot(&y, &[1.0, -1.0]);
                assert!(s <= eps.exp_m1().ln() + 1e-9 * s.abs().max(1.0), "{s} {eps}");
            }
            assert!(dist(&e.gradient(&y).unwrap(), &fd_grad(&e, &y)) < 1e-5);
        }
    }

    #[test]
    fn pd_strict_ne_set() {
        let pd = games::prisoners_dilemma();
        let dev = strict_ne_deviations(&pd, &[1, 1]).unwrap();
        assert_eq!(dev.z, vec![vec![1.0, -1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, -1.0]]);
        let x = dev.sample_target(&pd, 1, 0);
        let v = pd.field(&x[0]);
        // gaps 3 − 4 and 0 − 1 against D at (D, D)
        assert_eq!(dot(&v, &dev.z[0]), -1.0);
        assert!(dev.worst_pairing(&pd, &x) < 0.0);
        let mp = games::matching_pennies();
        for a in [[0, 0], [0, 1], [1, 0], [1, 1]] {
            assert!(matches!(strict_ne_deviations(&mp, &a), Err(GameError::Rejected(_))));
        }
    }

    #[test]
    fn pd_dominated_face() {
        let pd = games::prisoners_dilemma();
        let dev = dominated_deviations(&pd).unwrap();
        assert_eq!(dev.z.len(), 2);
        let pts = dev.sample_target(&pd, 200, 1);
        assert!(dev.worst_pairing(&pd, &pts) < 0.0);
        let m = MirrorMap::for_game(MirrorKind::Logit, &pd).unwrap();
        let esc = dev.escape(&m, &[0.0; 4], &[50.0]).unwrap();
        assert!(esc[0].distance <= 1e-6);
    }

    #[test]
    fn slp_interval_face() {
        let g = games::stochastic_lp(vec![1.0], ActionSet::Box { dim: 1, lo: 0.0, hi: 1.0 }).unwrap();
        let dev = slp_face_deviations(&g, &[1.0]).unwrap();
        assert_eq!(dev.z, vec![vec![-1.0]]);
        match &dev.target {
            TargetSet::Points(p) => assert_eq!(p.points, vec![vec![1.0]]),
            _ => panic!("expected a point"),
        }
        let m = MirrorMap::for_game(MirrorKind::Euclidean, &g).unwrap();
        assert_eq!(dev.escape(&m, &[0.0], &[1.0, 2.0]).unwrap()[0].distance, 0.0);
    }

    #[test]
    fn sharp_vertex_of_slp() {
        let g = games::stochastic_lp(vec![1.0, -2.0], ActionSet::Box { dim: 2, lo: 0.0, hi: 1.0 }).unwrap();
        let dev = sharp_deviations(&g, &[1.0, 0.0]).unwrap();
        assert_eq!(dev.z.len(), 2);
        assert!(sharp_deviations(&g, &[0.5, 0.0]).is_err());
        assert!(sharp_deviations(&g, &[0.0, 0.0]).is_err());
    }

    #[test]
    fn subcoercive_gauge_properties() {
        let g = games::minmax_interior(1.0);
        let m = MirrorMap::for_game(MirrorKind::Euclidean, &g).unwrap();
        let e = subcoercivity_energy(&m, &[0.0, 0.0], 1.0);
        assert_eq!(e.value(&[0.5, 0.5]).unwrap(), 0.0);
        let big = [300.0, -400.0];
        assert!((e.value(&big).unwrap() - 500.0 / 2f64.sqrt()).abs() < 1e-9);
        // C² across the bridge: second differences stay bounded
        let f = |u: f64| subcoercive_gauge(u, 1.0).0;
        let h = 1e-4;
        let mut prev: Option<f64> = None;
        let mut k = 0.9;
        while k < 2.1 {
            let d2 = (f(k + h) - 2.0 * f(k) + f(k - h)) / (h * h);
            if let Some(p) = prev {
                // θ''' ≤ 60 here, a C¹-only bridge would jump by about 6
                assert!((d2 - p).abs() < 0.2, "jump in θ'' near u = {k}");
            }
            prev = Some(d2);
            k += 1e-3;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            assert!(dist(&e.gradient(&y).unwrap(), &fd_grad(&e, &y)) < 1e-5);
        }
    }

    #[test]
    fn discoordination_energy_examples() {
        let e = discoordination_energy();
        assert_eq!(e.value(&[0.0, 0.0]).unwrap(), 2.0);
        assert!(e.value(&[80.0, 0.3]).unwrap() < 1e-16);
        let emp = empirical_smoothness(&e, 2, 10.0, 50_000, 1).unwrap();
        assert!(emp <= e.smoothness().unwrap(), "{emp}");
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let y: Vec<f64> = (0..2).map(|_| rng.random_range(-6.0..6.0)).collect();
            assert!(norm(&e.gradient(&y).unwrap()) <= e.gradient_bound().unwrap() + 1e-12);
        }
    }

    #[test]
    fn discoordination_energy_decreases_on_flow_orbits() {
        let g = games::discoordination();
        let m = MirrorMap::for_game(MirrorKind::TanhInterval, &g).unwrap();
        let e = discoordination_energy();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let y0: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let f = flow(&m, &g, &y0, &FlowConfig::new(5.0).storing_every(10).unchecked()).unwrap();
            let es: Vec<f64> = f.y.iter().map(|y| e.value(y).unwrap()).collect();
            assert!(es.windows(2).all(|w| w[1] < w[0]), "y0 = {y0:?}");
        }
    }

    #[test]
    fn coherent_and_fenchel_smoothness_are_honest() {
        let e = EnergyFunction { kind: EnergyKind::Coherent { z: vec![vec![1.0, -1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, -1.0]] }, map: None };
        assert!(empirical_smoothness(&e, 4, 10.0, 20_000, 3).unwrap() <= e.smoothness().unwrap());
        let pd = games::prisoners_dilemma();
        let m = MirrorMap::for_game(MirrorKind::Logit, &pd).unwrap();
        let f = fenchel_vs_energy(&m, &[0.0, 1.0, 0.0, 1.0]);
        assert!(empirical_smoothness(&f, 4, 10.0, 20_000, 3).unwrap() <= f.smoothness().unwrap() + 1e-9);
    }

    #[test]
    fn perfect_oracle_ledger_has_zero_martingale() {
        let g = games::minmax_interior(1.0);
        let m = MirrorMap::for_game(MirrorKind::Euclidean, &g).unwrap();
        let spec = RunSpec::new(Algorithm::Sga, g, m.clone(), Schedule::new(0.1, 0.5), 500).with_y0(vec![1.0, -1.0]).with_thinning(Thinning::dense()).with_signals();
        let rec = run(&spec).unwrap();
        let led = error_ledger(&spec, &rec, &fenchel_vs_energy(&m, &[0.0, 0.0]), CondMethod::Auto { mc_draws: 10 }).unwrap();
        assert!(led.s_agg.iter().all(|&s| s == 0.0));
        assert!(led.max_violation <= 1e-9);
    }

    #[test]
    fn linear_energy_has_no_second_order_term() {
        let pd = games::prisoners_dilemma();
        let m = MirrorMap::for_game(MirrorKind::Logit, &pd).unwrap();
        let spec = RunSpec::new(Algorithm::Ew, pd, m, Schedule::new(0.1, 0.0), 300).with_thinning(Thinning::dense()).with_signals();
        let rec = run(&spec).unwrap();
        let led = error_ledger(&spec, &rec, &linear_energy(&[1.0, -1.0, 0.0, 0.0]), CondMethod::Auto { mc_draws: 10 }).unwrap();
        assert!(led.t_agg.iter().all(|&t| t == 0.0));
    }

    #[test]
    fn sga_gaussian_martingale_is_sublinear() {
        let g = games::minmax_interior(1.0);
        let m = MirrorMap::for_game(MirrorKind::Euclidean, &g).unwrap();
        let spec = RunSpec::new(Algorithm::Sga, g, m.clone(), Schedule::new(1.0, 1.0), 20_000)
            .with_noise(NoiseModel::gaussian(1.0))
            .with_seed(4)
            .with_y0(vec![1.0, 1.0])
            .with_thinning(Thinning::dense())
            .with_signals();
        let rec = run(&spec).unwrap();
        let led = error_ledger(&spec, &rec, &fenchel_vs_energy(&m, &[0.0, 0.0]), CondMethod::Auto { mc_draws: 10 }).unwrap();
        let tau: Vec<f64> = led.gamma.iter().scan(0.0, |a, g| {
            *a += g;
            Some(*a)
        }).collect();
        let series: Vec<(f64, f64)> = (0..led.n.len()).map(|k| (tau[k], led.s_agg[k] / tau[k])).collect();
        let fit = rate_estimator(&series, (tau[999], f64::INFINITY)).unwrap();
        assert!(fit.slope < -0.5, "{fit:?}");
    }

    #[test]
    fn rate_of_exact_power_law() {
        let s: Vec<(f64, f64)> = (1..=200).map(|k| (k as f64 * 50.0, 3.0 / (k as f64 * 50.0))).collect();
        let f = rate_estimator(&s, (1.0, 1e9)).unwrap();
        assert!((f.slope + 1.0).abs() < 0.01);
        let z = rate_estimator(&[(1.0, 0.0), (2.0, 1.0), (3.0, 1.0)], (0.0, 10.0)).unwrap();
        assert!(z.zero_offset);
    }

    #[test]
    fn cycle_and_hausdorff() {
        let g = games::bilinear(None);
        let m = MirrorMap::for_game(MirrorKind::Euclidean, &g).unwrap();
        let c = reference_cycle(&m, &g, &[1.0, 0.0], 20.0, 1e-3).unwrap();
        assert!((c.period - 2.0 * std::f64::consts::PI).abs() < 1e-2);
        assert!((c.min_radius - 1.0).abs() < 1e-6);
        let ring: Vec<Vec<f64>> = (0..400).map(|k| {
            let t = k as f64 / 400.0 * std::f64::consts::TAU;
            vec![1.05 * t.cos(), 1.05 * t.sin()]
        }).collect();
        let (a, b) = hausdorff_to_cycle(&ring, &c.points);
        assert!((a - 0.05).abs() < 1e-3 && (b - 0.05).abs() < 2e-3, "{a} {b}");
    }

    #[test]
    fn basin_of_fenchel_energy_on_cournot_is_global_on_grid() {
        let g = games::cournot(2.0, 1.0, 0.0, 1.0, 2);
        let m = MirrorMap::for_game(MirrorKind::Euclidean, &g).unwrap();
        let xs = [2.0 / 3.0, 2.0 / 3.0];
        let e = fenchel_vs_energy(&m, &xs);
        let emax = estimate_basin(&e, &m, &g, &dual_grid(2, 3.0, 41)).unwrap();
        assert!(emax.is_infinite());
        let dg = games::discoordination();
        let tm = MirrorMap::for_game(MirrorKind::TanhInterval, &dg).unwrap();
        // the origin repels, so the Fenchel energy of 0 has no basin
        let e0 = fenchel_vs_energy(&tm, &[0.0, 0.0]);
        assert!(estimate_basin(&e0, &tm, &dg, &dual_grid(2, 3.0, 21)).unwrap() < 1.0);
    }

    #[test]
    fn moving_average_windows() {
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), vec![1.5, 2.5, 3.5]);
        assert!(moving_average(&[1.0], 2).is_empty());
    }
}
