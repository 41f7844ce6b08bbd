//! TOML experiment configs and parameter grids.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Algorithm, EngineError, Regime, RunSpec, Schedule, Thinning};
use crate::feedback::{FeedbackMode, Moment, NoiseKind, NoiseModel};
use crate::games::{game_from_id, GameError};
use crate::mirror::{MirrorError, MirrorKind, MirrorMap};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Game(#[from] GameError),
    #[error(transparent)]
    Mirror(#[from] MirrorError),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

/// q given as a number or as "inf".
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QSpec {
    Num(f64),
    Text(String),
}

impl QSpec {
    fn moment(&self) -> Result<Moment, ConfigError> {
        match self {
            QSpec::Num(v) if *v == 2.0 => Ok(Moment::Two),
            QSpec::Num(v) if *v == 4.0 => Ok(Moment::Four),
            QSpec::Num(v) if v.is_infinite() => Ok(Moment::Inf),
            QSpec::Text(s) if s == "inf" || s == "infinity" => Ok(Moment::Inf),
            QSpec::Text(s) if s == "2" => Ok(Moment::Two),
            QSpec::Text(s) if s == "4" => Ok(Moment::Four),
            other => Err(ConfigError::Invalid(format!("q must be 2, 4 or \"inf\", got {other:?}"))),
        }
    }
}

/// `thinning = 10`, `thinning = "dense"`, or a table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ThinSpec {
    Every(u64),
    Named(String),
    Table {
        every: Option<u64>,
        head: Option<u64>,
        tail: Option<usize>,
        #[serde(default)]
        windows: Vec<(f64, f64)>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub game: String,
    pub algorithm: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mirror: Option<String>,
    /// Restriction radius for exp_orthant.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    pub gamma: f64,
    #[serde(default)]
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<QSpec>,
    #[serde(default)]
    pub seed: u64,
    pub iters: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thinning: Option<ThinSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub regime: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y0: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub log_half: bool,
    /// Output file stem, relative to the output directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn minimal(game: &str, algorithm: &str, gamma: f64, p: f64, iters: u64) -> Self {
        ExperimentConfig {
            name: None,
            game: game.into(),
            algorithm: algorithm.into(),
            feedback: None,
            mirror: None,
            radius: None,
            gamma,
            p,
            delta: None,
            r: None,
            noise: None,
            sigma: None,
            q: None,
            seed: 0,
            iters,
            thinning: None,
            regime: None,
            y0: None,
            log_half: false,
            output: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn stem(&self) -> String {
        self.output.clone().or_else(|| self.name.clone()).unwrap_or_else(|| format!("{}_{}", self.algorithm, self.seed))
    }

    fn noise_model(&self) -> Result<NoiseModel, ConfigError> {
        let kind = match self.noise.as_deref() {
            None | Some("none") => NoiseKind::None,
            Some("gaussian") => NoiseKind::Gaussian,
            Some("ball") | Some("bounded_uniform_ball") => NoiseKind::Ball,
            Some(other) => return Err(ConfigError::Invalid(format!("unknown noise model '{other}'"))),
        };
        let sigma = self.sigma.unwrap_or(0.0);
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(ConfigError::Invalid(format!("sigma must be finite and nonnegative, got {sigma}")));
        }
        let default_q = match kind {
            NoiseKind::Gaussian => Moment::Two,
            _ => Moment::Inf,
        };
        let q = match &self.q {
            Some(q) => q.moment()?,
            None => default_q,
        };
        if kind == NoiseKind::None {
            return Ok(NoiseModel { q, ..NoiseModel::none() });
        }
        Ok(NoiseModel { kind, sigma, q })
    }

    fn thinning_for(&self) -> Result<Thinning, ConfigError> {
        Ok(match &self.thinning {
            None => Thinning::default_for(self.iters),
            Some(ThinSpec::Every(k)) => Thinning::every(*k),
            Some(ThinSpec::Named(s)) if s == "dense" => Thinning::dense(),
            Some(ThinSpec::Named(s)) if s == "default" => Thinning::default_for(self.iters),
            Some(ThinSpec::Named(s)) => return Err(ConfigError::Invalid(format!("unknown thinning '{s}'"))),
            Some(ThinSpec::Table { every, head, tail, windows }) => {
                let d = Thinning::default_for(self.iters);
                Thinning { every: every.unwrap_or(d.every).max(1), head: head.unwrap_or(d.head), tail: tail.unwrap_or(d.tail), windows: windows.clone() }
            }
        })
    }

    /// Resolve ids and validate the full compatibility matrix.
    pub fn build(&self) -> Result<RunSpec, ConfigError> {
        let algorithm = Algorithm::parse(&self.algorithm).ok_or_else(|| ConfigError::Invalid(format!("unknown algorithm '{}'", self.algorithm)))?;
        let game = game_from_id(&self.game)?;
        let kind = match &self.mirror {
            Some(m) => MirrorKind::parse(m)?,
            None => algorithm.default_mirror(),
        };
        let mut map = MirrorMap::for_game(kind, &game).map_err(|e| ConfigError::Invalid(format!("mirror '{}' does not fit game '{}': {e}", kind.id(), self.game)))?;
        if let Some(r) = self.radius {
            map = map.with_radius(r);
        }
        let feedback = match self.feedback.as_deref() {
            None | Some("full") => FeedbackMode::Full,
            Some("realized") => FeedbackMode::Realized,
            Some(other) => return Err(ConfigError::Invalid(format!("unknown feedback mode '{other}'"))),
        };
        let mut schedule = Schedule::new(self.gamma, self.p);
        schedule.delta = self.delta;
        schedule.r = self.r;
        if self.iters == 0 {
            return Err(ConfigError::Invalid("iters must be positive".into()));
        }
        let regime = match &self.regime {
            Some(r) => Some(Regime::parse(r).ok_or_else(|| ConfigError::Invalid(format!("unknown regime '{r}'")))?),
            None => None,
        };
        let y0 = match &self.y0 {
            Some(y) => y.clone(),
            None => vec![0.0; game.dim()],
        };
        let mut spec = RunSpec::new(algorithm, game, map, schedule, self.iters)
            .with_noise(self.noise_model()?)
            .with_seed(self.seed)
            .with_y0(y0)
            .with_thinning(self.thinning_for()?)
            .with_feedback(feedback);
        spec.log_half = self.log_half;
        spec.regime = regime;
        spec.validate()?;
        Ok(spec)
    }

    /// Apply numeric overrides from a grid point.
    pub fn with_overrides(&self, point: &GridPoint) -> Result<Self, ConfigError> {
        let mut c = self.clone();
        for (k, v) in &point.0 {
            match k.as_str() {
                "gamma" => c.gamma = *v,
                "p" => c.p = *v,
                "delta" => c.delta = Some(*v),
                "r" => c.r = Some(*v),
                "sigma" => c.sigma = Some(*v),
                "radius" => c.radius = Some(*v),
                "iters" => c.iters = *v as u64,
                "seed" => c.seed = *v as u64,
                other => return Err(ConfigError::Invalid(format!("grid key '{other}' is not a numeric config key"))),
            }
        }
        Ok(c)
    }
}

/// One assignment of grid keys.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GridPoint(pub Vec<(String, f64)>);

impl GridPoint {
    pub fn label(&self) -> String {
        self.0.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(",")
    }
}

pub struct ParamGrid;

impl ParamGrid {
    /// Cartesian product of the axes. No axes gives the single empty point; an empty axis gives no points.
    pub fn product(axes: &[(String, Vec<f64>)]) -> Vec<GridPoint> {
        let mut out = vec![GridPoint::default()];
        for (k, vals) in axes {
            out = out.into_iter().flat_map(|g| vals.iter().map(move |v| {
                let mut g = g.clone();
                g.0.push((k.clone(), *v));
                g
            })).collect();
        }
        out
    }

    /// "p=0.6,0.8,1.0;gamma=0.1,0.2"
    pub fn parse(text: &str) -> Result<Vec<(String, Vec<f64>)>, ConfigError> {
        let mut axes = Vec::new();
        for part in text.split(';').map(str::trim).filter(|s| !s.is_empty()) {
            let (k, vs) = part.split_once('=').ok_or_else(|| ConfigError::Invalid(format!("grid axis '{part}' lacks '='")))?;
            let vals = vs
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| s.parse::<f64>().map_err(|_| ConfigError::Invalid(format!("bad grid value '{s}'"))))
                .collect::<Result<Vec<_>, _>>()?;
            axes.push((k.trim().to_string(), vals));
        }
        Ok(axes)
    }
}
