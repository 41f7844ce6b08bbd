//! Mean dynamics ẏ = v(Q(y)) by fixed-step RK4, and APT deviation of runs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{RunRecord, DIVERGENCE_BOUND};
use crate::games::{dist, norm, ActionSet, GameSpec};
use crate::mirror::{MirrorError, MirrorKind, MirrorMap};

/// Endpoint tolerance of the step-halving check.
pub const HALVING_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FlowError {
    #[error(transparent)]
    Mirror(#[from] MirrorError),
    #[error("halving dt moved the endpoint by {diff:e} (> {HALVING_TOL:e}); reduce dt")]
    Accuracy { diff: f64 },
    #[error("invalid flow settings: {0}")]
    Settings(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Keep every k-th RK4 step in the trajectory.
    pub store_every: usize,
    pub check_halving: bool,
}

impl FlowConfig {
    pub fn new(horizon: f64) -> Self {
        FlowConfig { dt: 1e-3, horizon, store_every: 1, check_halving: true }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }

    pub fn storing_every(mut self, k: usize) -> Self {
        self.store_every = k.max(1);
        self
    }

    pub fn unchecked(mut self) -> Self {
        self.check_halving = false;
        self
    }

    fn steps(&self) -> Result<usize, FlowError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(FlowError::Settings(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(FlowError::Settings(format!("horizon must be finite and nonnegative, got {}", self.horizon)));
        }
        Ok((self.horizon / self.dt).round() as usize)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flow {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub x: Vec<Vec<f64>>,
    /// Set when ‖y‖ passed the divergence bound and the trajectory was cut.
    pub blown_up: bool,
    /// Endpoint change under dt/2, when checked.
    pub halving_diff: Option<f64>,
}

impl Flow {
    pub fn end_y(&self) -> &[f64] {
        self.y.last().unwrap()
    }

    pub fn end_x(&self) -> &[f64] {
        self.x.last().unwrap()
    }
}

/// v(Q(y)).
pub fn mean_field(map: &MirrorMap, game: &GameSpec, y: &[f64]) -> Result<Vec<f64>, MirrorError> {
    let x = map.mirror(y)?;
    Ok(game.field(&x))
}

/// One classical RK4 step of ż = f(z).
pub fn rk4_step<E>(f: &mut impl FnMut(&[f64]) -> Result<Vec<f64>, E>, z: &[f64], dt: f64) -> Result<Vec<f64>, E> {
    let axpy = |a: &[f64], s: f64, b: &[f64]| -> Vec<f64> { a.iter().zip(b).map(|(u, v)| u + s * v).collect() };
    let k1 = f(z)?;
    let k2 = f(&axpy(z, dt / 2.0, &k1))?;
    let k3 = f(&axpy(z, dt / 2.0, &k2))?;
    let k4 = f(&axpy(z, dt, &k3))?;
    Ok((0..z.len()).map(|i| z[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect())
}

fn integrate(map: &MirrorMap, game: &GameSpec, y0: &[f64], steps: usize, dt: f64, store_every: usize) -> Result<Flow, FlowError> {
    let mut f = |y: &[f64]| mean_field(map, game, y);
    let mut y = y0.to_vec();
    let mut flow = Flow { t: vec![0.0], y: vec![y.clone()], x: vec![map.mirror(&y)?], blown_up: false, halving_diff: None };
    for k in 1..=steps {
        y = rk4_step(&mut f, &y, dt)?;
        let blown = !y.iter().all(|v| v.is_finite()) || norm(&y) > DIVERGENCE_BOUND;
        if k % store_every == 0 || k == steps || blown {
            flow.t.push(k as f64 * dt);
            flow.x.push(if blown { vec![f64::NAN; y.len()] } else { map.mirror(&y)? });
            flow.y.push(y.clone());
        }
        if blown {
            flow.blown_up = true;
            break;
        }
    }
    Ok(flow)
}

/// Integrate the mean dynamics from y0 over [0, T]; with the check on, also at dt/2 and compare endpoints.
pub fn flow(map: &MirrorMap, game: &GameSpec, y0: &[f64], cfg: &FlowConfig) -> Result<Flow, FlowError> {
    let steps = cfg.steps()?;
    let mut out = integrate(map, game, y0, steps, cfg.dt, cfg.store_every)?;
    if cfg.check_halving && !out.blown_up {
        let fine = integrate(map, game, y0, steps * 2, cfg.dt / 2.0, usize::MAX)?;
        if !fine.blown_up {
            let diff = dist(out.end_y(), fine.end_y());
            out.halving_diff = Some(diff);
            if diff > HALVING_TOL {
                return Err(FlowError::Accuracy { diff });
            }
        }
    }
    Ok(out)
}

/// The direct primal dynamics corresponding to a mirror kind.
fn primal_velocity(kind: MirrorKind, sets: &[ActionSet], game: &GameSpec, x: &[f64]) -> Vec<f64> {
    let v = game.field(x);
    match kind {
        // replicator: ẋ_a = x_a (v_a − ⟨x, v⟩) per player
        MirrorKind::Logit => {
            let mut out = vec![0.0; x.len()];
            let mut off = 0;
            for s in sets {
                let r = off..off + s.dim();
                let avg: f64 = r.clone().map(|a| x[a] * v[a]).sum();
                for a in r {
                    out[a] = x[a] * (v[a] - avg);
                }
                off += s.dim();
            }
            out
        }
        // dampened gradient dynamics ẋ = x v
        MirrorKind::ExpOrthant => x.iter().zip(&v).map(|(a, b)| a * b).collect(),
        // x = tanh(y/2): ẋ = (1 − x²) v / 2
        MirrorKind::TanhInterval => x.iter().zip(&v).map(|(a, b)| 0.5 * (1.0 - a * a) * b).collect(),
        MirrorKind::Euclidean => v,
    }
}

/// sup_t ‖x_MD(t) − x_direct(t)‖ between dual-space MD and the primal ODE (RD, DGD, GD).
pub fn primal_flow_equivalence(game: &GameSpec, kind: MirrorKind, x0: &[f64], horizon: f64, dt: f64) -> Result<f64, FlowError> {
    let map = MirrorMap::for_game(kind, game)?;
    if kind == MirrorKind::Euclidean && game.action_sets.iter().any(|s| !matches!(s, ActionSet::Full { .. })) {
        return Err(FlowError::Settings("the gradient-dynamics comparison needs unconstrained action sets".into()));
    }
    let y0 = map.dual_preimage(x0).ok_or_else(|| FlowError::Settings("x0 is not in the image of the mirror map".into()))?;
    let steps = FlowConfig { dt, horizon, store_every: 1, check_halving: false }.steps()?;
    let sets = game.action_sets.clone();
    let mut fy = |y: &[f64]| mean_field(&map, game, y);
    let mut fx = |x: &[f64]| Ok::<_, MirrorError>(primal_velocity(kind, &sets, game, x));
    let mut y = y0;
    let mut x = x0.to_vec();
    let mut worst = dist(&map.mirror(&y)?, &x);
    for _ in 0..steps {
        y = rk4_step(&mut fy, &y, dt)?;
        x = rk4_step(&mut fx, &x, dt)?;
        worst = worst.max(dist(&map.mirror(&y)?, &x));
    }
    Ok(worst)
}

/// Piecewise-affine dual path through (τ_n, y_n), with y_n placed at τ = Σ_{k<n} γ_k.
#[derive(Clone, Debug, PartialEq)]
pub struct InterpolatedPath {
    pub tau: Vec<f64>,
    pub y: Vec<Vec<f64>>,
}

impl InterpolatedPath {
    pub fn from_record(rec: &RunRecord) -> Self {
        let s = rec.meta.schedule;
        let mut tau = Vec::new();
        let mut ys = Vec::new();
        let mut t = 0.0;
        let mut k = 1u64;
        let advance = |n: u64, t: &mut f64, k: &mut u64| {
            while *k < n {
                *t += s.gamma_n(*k);
                *k += 1;
            }
        };
        for r in rec.full_rows() {
            advance(r.n, &mut t, &mut k);
            tau.push(t);
            ys.push(r.y.clone());
        }
        if rec.rows.last().map(|r| r.n) < Some(rec.terminal.n) {
            advance(rec.terminal.n, &mut t, &mut k);
            tau.push(t);
            ys.push(rec.terminal.y.clone());
        }
        InterpolatedPath { tau, y: ys }
    }

    pub fn end_time(&self) -> f64 {
        *self.tau.last().unwrap_or(&0.0)
    }

    /// Linear interpolation; clamps outside the recorded range.
    pub fn at(&self, t: f64) -> Vec<f64> {
        let i = self.tau.partition_point(|&s| s <= t);
        if i == 0 {
            return self.y[0].clone();
        }
        if i == self.tau.len() {
            return self.y[i - 1].clone();
        }
        let (t0, t1) = (self.tau[i - 1], self.tau[i]);
        let w = (t - t0) / (t1 - t0);
        self.y[i - 1].iter().zip(&self.y[i]).map(|(a, b)| a + w * (b - a)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AptPoint {
    pub t: f64,
    pub deviation: Option<f64>,
    pub note: Option<String>,
}

/// For each probe t: sup_{0≤s≤T} ‖ŷ(t+s) − Φ_s(ŷ(t))‖, with a fresh RK4 flow per probe.
pub fn apt_deviation(rec: &RunRecord, game: &GameSpec, map: &MirrorMap, window: f64, probes: &[f64], dt: f64) -> Vec<AptPoint> {
    let path = InterpolatedPath::from_record(rec);
    probes
        .par_iter()
        .map(|&t| {
            if t + window > path.end_time() {
                return AptPoint { t, deviation: None, note: Some(format!("probe window ends at {} beyond final effective time {}", t + window, path.end_time())) };
            }
            let y0 = path.at(t);
            let cfg = FlowConfig::new(window).with_dt(dt).unchecked();
            match flow(map, game, &y0, &cfg) {
                Ok(f) => {
                    let dev = f.t.iter().zip(&f.y).map(|(s, y)| dist(&path.at(t + s), y)).fold(0.0, f64::max);
                    let note = f.blown_up.then(|| "flow blew up inside the window".to_string());
                    AptPoint { t, deviation: Some(dev), note }
                }
                Err(e) => AptPoint { t, deviation: None, note: Some(e.to_string()) },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{run, Algorithm, RunSpec, Schedule, Thinning};
    use crate::games;

    #[test]
    fn euclidean_orthant_hits_zero_at_y0() {
        let g = games::decay(1.0);
        let m = MirrorMap::for_game(MirrorKind::Euclidean, &g).unwrap();
        let f = flow(&m, &g, &[0.7], &FlowConfig::new(2.0)).unwrap();
        for (t, (y, x)) in f.t.iter().zip(f.y.iter().zip(&f.x)) {
            assert!((y[0] - (0.7 - t)).abs() < 1e-9);
            assert!((x[0] - (0.7 - t).max(0.0)).abs() < 1e-9);
        }
    }

    #[test]
    fn exp_orthant_decays_without_reaching_zero() {
        let g = games::decay(1.0);
        let m = MirrorMap::for_game(MirrorKind::ExpOrthant, &g).unwrap();
        let f = flow(&m, &g, &[0.2], &FlowConfig::new(10.0)).unwrap();
        assert!(f.x.iter().all(|x| x[0] > 0.0));
        assert!(f.end_x()[0] < 1e-3);
    }

    #[test]
    fn bilinear_orbits_conserve_norm() {
        let g = games::bilinear(None);
        let m = MirrorMap::for_game(MirrorKind::Euclidean, &g).unwrap();
        let f = flow(&m, &g, &[1.0, 0.5], &FlowConfig::new(30.0)).unwrap();
        let r0 = norm(&f.y[0]);
        assert!(f.y.iter().all(|y| (norm(y) - r0).abs() < 1e-9));
    }

    #[test]
    fn rk4_error_ratio_is_sixteen() {
        // ẏ = −y, y(1) = e^{-1}
        let mut f = |y: &[f64]| Ok::<_, ()>(vec![-y[0]]);
        let mut err = |n: usize| {
            let mut y = vec![1.0];
            for _ in 0..n {
                y = rk4_step(&mut f, &y, 1.0 / n as f64).unwrap();
            }
            (y[0] - (-1f64).exp()).abs()
        };
        let ratio = err(20) / err(40);
        assert!((ratio - 16.0).abs() < 0.5, "{ratio}");
    }

    #[test]
    fn matching_pennies_rd_equivalence() {
        let g = games::matching_pennies();
        let dev = primal_flow_equivalence(&g, MirrorKind::Logit, &[0.7, 0.3, 0.4, 0.6], 20.0, 1e-3).unwrap();
        assert!(dev <= 1e-4, "{dev}");
    }

    #[test]
    fn near_vertex_rd_stays_interior() {
        let g = games::matching_pennies();
        let x0 = [1.0 - 1e-6, 1e-6, 0.5, 0.5];
        let m = MirrorMap::for_game(MirrorKind::Logit, &g).unwrap();
        let y0 = m.dual_preimage(&x0).unwrap();
        let f = flow(&m, &g, &y0, &FlowConfig::new(5.0).unchecked()).unwrap();
        assert!(f.x.iter().all(|x| x.iter().all(|&v| v > 0.0 && v < 1.0)));
        assert!(primal_flow_equivalence(&g, MirrorKind::Logit, &x0, 5.0, 1e-3).unwrap() < 1e-4);
    }

    #[test]
    fn dgd_closed_form() {
        let g = games::decay(1.0);
        let m = MirrorMap::for_game(MirrorKind::ExpOrthant, &g).unwrap();
        let f = flow(&m, &g, &[0.5f64.ln()], &FlowConfig::new(3.0)).unwrap();
        for (t, x) in f.t.iter().zip(&f.x) {
            assert!((x[0] - 0.5 * (-t).exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn halving_check_flags_coarse_steps() {
        let g = games::bilinear(None);
        let m = MirrorMap::for_game(MirrorKind::Euclidean, &g).unwrap();
        let r = flow(&m, &g, &[1.0, 0.0], &FlowConfig::new(50.0).with_dt(0.5));
        assert!(matches!(r, Err(FlowError::Accuracy { .. })));
    }

    #[test]
    fn apt_zero_window_and_discretization_scale() {
        let g = games::quadratic(1.0);
        let m = MirrorMap::for_game(MirrorKind::Euclidean, &g).unwrap();
        let dev_for = |gamma: f64| {
            let spec = RunSpec::new(Algorithm::Sga, g.clone(), m.clone(), Schedule::new(gamma, 0.0), (20.0 / gamma) as u64).with_y0(vec![1.0]).with_thinning(Thinning::dense());
            let rec = run(&spec).unwrap();
            let pts = apt_deviation(&rec, &g, &m, 2.0, &[1.0, 5.0], 1e-3);
            assert_eq!(apt_deviation(&rec, &g, &m, 0.0, &[3.0], 1e-3)[0].deviation, Some(0.0));
            pts.iter().map(|p| p.deviation.unwrap()).fold(0.0, f64::max)
        };
        let a = dev_for(0.02);
        let b = dev_for(0.01);
        assert!(a > 0.0 && (a / b - 2.0).abs() < 0.3, "{a} {b}");
    }

    #[test]
    fn probe_past_the_end_is_skipped() {
        let g = games::quadratic(1.0);
        let m = MirrorMap::for_game(MirrorKind::Euclidean, &g).unwrap();
        let rec = run(&RunSpec::new(Algorithm::Sga, g.clone(), m.clone(), Schedule::new(0.1, 0.0), 10).with_y0(vec![1.0])).unwrap();
        let p = &apt_deviation(&rec, &g, &m, 1.0, &[5.0], 1e-3)[0];
        assert!(p.deviation.is_none() && p.note.is_some());
    }

    #[test]
    fn path_times_are_prefix_sums() {
        let g = games::quadratic(1.0);
        let m = MirrorMap::for_game(MirrorKind::Euclidean, &g).unwrap();
        let s = Schedule::new(0.3, 0.7);
        let rec = run(&RunSpec::new(Algorithm::Sga, g, m, s, 500).with_y0(vec![1.0])).unwrap();
        let path = InterpolatedPath::from_record(&rec);
        assert!(path.tau.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(*path.tau.last().unwrap(), s.effective_time(500));
    }
}
