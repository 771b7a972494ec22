//! Scenario configuration and its INI file form.
//!
//! ```ini
//! [scenario]
//! kind = track            ; track | track_no_estimator | obstacle
//! duration_s = 120
//! control_rate_hz = 30
//! horizon = 60
//! seed = 42
//!
//! [delay]                 ; loop delay, split across the two legs
//! kind = random_walk      ; constant | sinusoidal | random_walk | trace
//! base = 0.067
//! down_share = 0.5
//!
//! [obstacle.1]
//! time = 40
//! offset = 2.5, 0, 0      ; launch point relative to the vehicle
//! flight_time = 1.0
//! ```
//!
//! Every key is optional; `paced run --help` and the README list them all.

use std::path::{Path, PathBuf};

use ini::{Ini, Properties};

use super::HarnessError;
use crate::channel::{DelayKind, DelayModel};
use crate::model::{ControlInput, StateVector, UavParams, Vec3};
use crate::nmpc::{McpBounds, McpWeights, SolverSettings};
use crate::predictor::{AttitudeForm, PositionVelocity, PredictorOptions};
use crate::trajectory::{load_waypoints, ReferenceSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScenarioKind {
    Track,
    TrackNoEstimator,
    Obstacle,
}

impl ScenarioKind {
    pub fn parse(s: &str) -> Result<Self, HarnessError> {
        match s.trim() {
            "track" => Ok(Self::Track),
            "track_no_estimator" | "track-no-estimator" => Ok(Self::TrackNoEstimator),
            "obstacle" => Ok(Self::Obstacle),
            other => Err(HarnessError::Config(format!("unknown scenario `{other}`"))),
        }
    }

    pub fn uses_estimator(self) -> bool {
        self != Self::TrackNoEstimator
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Track => "track",
            Self::TrackNoEstimator => "track_no_estimator",
            Self::Obstacle => "obstacle",
        }
    }
}

/// A delay profile before it is bound to a seed and a scale.
#[derive(Debug, Clone, PartialEq)]
pub enum DelaySpec {
    Constant(f64),
    Sinusoidal {
        base: f64,
        amplitude: f64,
        period: f64,
    },
    /// `tick = None` means one control period.
    RandomWalk {
        base: f64,
        step: f64,
        min: f64,
        max: f64,
        reversion: f64,
        tick: Option<f64>,
    },
    Trace(PathBuf),
}

impl Default for DelaySpec {
    fn default() -> Self {
        Self::RandomWalk {
            base: 0.067,
            step: 0.003,
            min: 0.040,
            max: 0.100,
            reversion: 0.1,
            tick: None,
        }
    }
}

impl DelaySpec {
    fn build(&self, seed: u64, ts: f64, max_delay: f64) -> Result<DelayModel, HarnessError> {
        let model = match self {
            Self::Constant(c) => DelayModel::new(DelayKind::Constant(*c)),
            Self::Sinusoidal {
                base,
                amplitude,
                period,
            } => DelayModel::new(DelayKind::Sinusoidal {
                base: *base,
                amplitude: *amplitude,
                period: *period,
            }),
            Self::RandomWalk {
                base,
                step,
                min,
                max,
                reversion,
                tick,
            } => DelayModel::new(DelayKind::RandomWalk {
                base: *base,
                step: *step,
                min: *min,
                max: *max,
                reversion: *reversion,
                tick: tick.unwrap_or(ts),
                seed,
            }),
            Self::Trace(path) => DelayModel::trace_from_file(path),
        };
        Ok(model
            .map_err(|e| HarnessError::Config(e.to_string()))?
            .with_max_delay(max_delay))
    }

    /// Long-run mean of the profile, where it is known in closed form.
    pub fn nominal_mean(&self) -> Option<f64> {
        match self {
            Self::Constant(c) => Some(*c),
            Self::Sinusoidal { base, .. } | Self::RandomWalk { base, .. } => Some(*base),
            Self::Trace(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DelayConfig {
    /// Round-trip delay profile `L(t)`; the command leg sees
    /// `down_share * L(t)` and the return leg the rest.
    pub loop_delay: DelaySpec,
    pub down_share: f64,
    /// Explicit per-leg profiles, used instead of the split when set.
    pub down: Option<DelaySpec>,
    pub up: Option<DelaySpec>,
    pub max_delay: f64,
    /// `[start, end)` windows in which both legs drop every message.
    pub blackouts: Vec<(f64, f64)>,
}

impl Default for DelayConfig {
    fn default() -> Self {
        Self {
            loop_delay: DelaySpec::default(),
            down_share: 0.5,
            down: None,
            up: None,
            max_delay: crate::channel::DEFAULT_MAX_DELAY,
            blackouts: Vec::new(),
        }
    }
}

impl DelayConfig {
    pub fn constant(loop_delay: f64) -> Self {
        Self {
            loop_delay: DelaySpec::Constant(loop_delay),
            ..Self::default()
        }
    }

    /// `(command leg, return leg)`. Both legs of a split share one seeded
    /// profile, so their delays follow the same path.
    pub fn build(&self, seed: u64, ts: f64) -> Result<(DelayModel, DelayModel), HarnessError> {
        let down = match &self.down {
            Some(spec) => spec.build(seed, ts, self.max_delay)?,
            None => self
                .loop_delay
                .build(seed, ts, self.max_delay)?
                .with_scale(self.down_share),
        };
        let up = match &self.up {
            Some(spec) => spec.build(seed.wrapping_add(1), ts, self.max_delay)?,
            None => self
                .loop_delay
                .build(seed, ts, self.max_delay)?
                .with_scale(1.0 - self.down_share),
        };
        Ok((down, up))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LaunchPoint {
    /// Relative to the vehicle position at launch.
    Offset(Vec3),
    Origin(Vec3),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObstacleLaunch {
    pub time: f64,
    pub from: LaunchPoint,
    /// Fixed launch velocity. When absent the throw is aimed at where the
    /// vehicle will be after `flight_time` at its current velocity.
    pub velocity: Option<Vec3>,
    pub flight_time: f64,
    /// Collision-sphere radius `r_d`.
    pub radius: f64,
    /// Clearance `r_s`.
    pub safety_radius: f64,
    /// The obstacle is removed this long after launch, or when it reaches
    /// the ground.
    pub lifetime: f64,
}

impl ObstacleLaunch {
    pub fn aimed(time: f64, offset: Vec3, flight_time: f64) -> Self {
        Self {
            time,
            from: LaunchPoint::Offset(offset),
            velocity: None,
            flight_time,
            radius: 0.2,
            safety_radius: 0.3,
            lifetime: flight_time + 1.0,
        }
    }

    pub fn retire_at(&self) -> f64 {
        self.time + self.lifetime
    }

    /// Two throws mid-circle, 2.5 m out along +x with a one-second flight.
    pub fn default_pair() -> Vec<Self> {
        let offset = Vec3::new(2.5, 0.0, 0.0);
        vec![Self::aimed(40.0, offset, 1.0), Self::aimed(80.0, offset, 1.0)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    pub duration_s: f64,
    pub control_rate_hz: f64,
    pub horizon: usize,
    /// Plant integration steps per control period.
    pub substeps: usize,
    pub seed: u64,
    /// Start of the metric window, seconds.
    pub transient_s: f64,
    pub reference: ReferenceSpec,
    pub zero_velocity_reference: bool,
    pub delay: DelayConfig,
    /// Sliding window for the delay estimate; `None` keeps the running mean.
    pub estimator_window: Option<usize>,
    pub predictor: PredictorOptions,
    pub params: UavParams,
    pub weights: McpWeights,
    pub bounds: McpBounds,
    pub solver: SolverSettings,
    pub safety_enabled: bool,
    pub safety_timeout_s: f64,
    pub launches: Vec<ObstacleLaunch>,
    pub output_dir: Option<PathBuf>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            kind: ScenarioKind::Track,
            duration_s: 120.0,
            control_rate_hz: 30.0,
            horizon: 60,
            substeps: 4,
            seed: 42,
            transient_s: 3.0,
            reference: ReferenceSpec::default(),
            zero_velocity_reference: false,
            delay: DelayConfig::default(),
            estimator_window: None,
            predictor: PredictorOptions::default(),
            params: UavParams::default(),
            weights: McpWeights::default(),
            bounds: McpBounds::default(),
            solver: SolverSettings::default(),
            safety_enabled: true,
            safety_timeout_s: 0.5,
            launches: Vec::new(),
            output_dir: None,
        }
    }
}

impl ScenarioConfig {
    pub fn ts(&self) -> f64 {
        1.0 / self.control_rate_hz
    }

    pub fn ticks(&self) -> usize {
        (self.duration_s * self.control_rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: &str| Err(HarnessError::Config(m.into()));
        if !(self.duration_s > 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be positive");
        }
        if !(self.control_rate_hz > 0.0 && self.control_rate_hz.is_finite()) {
            return bad("control_rate_hz must be positive");
        }
        if self.horizon == 0 || self.substeps == 0 {
            return bad("horizon and substeps must be at least 1");
        }
        if !(self.transient_s >= 0.0) {
            return bad("transient_s must be >= 0");
        }
        if !(0.0..=1.0).contains(&self.delay.down_share) {
            return bad("down_share must lie in [0, 1]");
        }
        if !(self.safety_timeout_s > 0.0) {
            return bad("safety timeout must be positive");
        }
        if self.delay.blackouts.iter().any(|(a, b)| !(b > a)) {
            return bad("blackout windows need end > start");
        }
        if self.kind == ScenarioKind::Obstacle && self.launches.is_empty() {
            return bad("the obstacle scenario needs at least one [obstacle.*] launch");
        }
        for l in &self.launches {
            if !(l.time >= 0.0 && l.flight_time > 0.0 && l.lifetime > 0.0 && l.radius > 0.0 && l.safety_radius > 0.0) {
                return bad("obstacle launches need time >= 0 and positive flight_time, lifetime and radii");
            }
        }
        // The odometry message carries no obstacle id: one airborne at a time.
        if self.launches.windows(2).any(|w| w[1].time < w[0].retire_at()) {
            return bad("obstacle launches must be in time order and must not overlap");
        }
        self.reference
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.params
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.weights
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.bounds
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        Ok(())
    }

    pub fn from_ini_file(path: &Path) -> Result<Self, HarnessError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_ini_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Relative file paths inside the config resolve against `base_dir`.
    pub fn from_ini_str(text: &str, base_dir: &Path) -> Result<Self, HarnessError> {
        let ini = Ini::load_from_str(text).map_err(|e| HarnessError::Config(e.to_string()))?;
        let mut cfg = Self::default();
        let mut launches = Vec::new();

        for (name, props) in ini.iter() {
            let Some(name) = name else {
                if props.iter().next().is_some() {
                    return Err(HarnessError::Config("keys outside a section".into()));
                }
                continue;
            };
            let mut s = Section::new(name, props);
            match name {
                "scenario" => {
                    if let Some(v) = s.str("kind") {
                        cfg.kind = ScenarioKind::parse(v)?;
                    }
                    s.f64_into("duration_s", &mut cfg.duration_s)?;
                    s.f64_into("control_rate_hz", &mut cfg.control_rate_hz)?;
                    s.parse_into("horizon", &mut cfg.horizon)?;
                    s.parse_into("substeps", &mut cfg.substeps)?;
                    s.parse_into("seed", &mut cfg.seed)?;
                    s.f64_into("transient_s", &mut cfg.transient_s)?;
                    if let Some(v) = s.str("output_dir") {
                        cfg.output_dir = Some(base_dir.join(v));
                    }
                }
                "reference" => {
                    cfg.reference = s.reference(base_dir, &cfg.reference)?;
                    s.parse_into("zero_velocity", &mut cfg.zero_velocity_reference)?;
                }
                "delay" => {
                    cfg.delay.loop_delay = s.delay_spec(base_dir, &cfg.delay.loop_delay)?;
                    s.f64_into("down_share", &mut cfg.delay.down_share)?;
                    s.f64_into("max_delay", &mut cfg.delay.max_delay)?;
                    if let Some(v) = s.str("blackouts") {
                        cfg.delay.blackouts = parse_windows(v)?;
                    }
                }
                "delay.down" => cfg.delay.down = Some(s.delay_spec(base_dir, &DelaySpec::default())?),
                "delay.up" => cfg.delay.up = Some(s.delay_spec(base_dir, &DelaySpec::default())?),
                "estimator" => {
                    if let Some(w) = s.parsed::<usize>("window")? {
                        cfg.estimator_window = (w > 0).then_some(w);
                    }
                    match s.str("position_velocity") {
                        None => {}
                        Some("predicted") => cfg.predictor.position_velocity = PositionVelocity::Predicted,
                        Some("current") => cfg.predictor.position_velocity = PositionVelocity::Current,
                        Some(o) => return Err(HarnessError::Config(format!("position_velocity `{o}`"))),
                    }
                    match s.str("attitude") {
                        None => {}
                        Some("implicit") => cfg.predictor.attitude = AttitudeForm::Implicit,
                        Some("literal") => cfg.predictor.attitude = AttitudeForm::Literal,
                        Some(o) => return Err(HarnessError::Config(format!("attitude `{o}`"))),
                    }
                }
                "uav" => {
                    let p = &mut cfg.params;
                    s.f64_into("mass", &mut p.mass)?;
                    if let Some(d) = s.vec3("drag")? {
                        p.drag = d;
                    }
                    s.f64_into("alpha_phi", &mut p.alpha_phi)?;
                    s.f64_into("alpha_theta", &mut p.alpha_theta)?;
                    s.f64_into("k_phi", &mut p.k_phi)?;
                    s.f64_into("k_theta", &mut p.k_theta)?;
                }
                "nmpc" => s.nmpc(&mut cfg)?,
                "safety" => {
                    s.parse_into("enabled", &mut cfg.safety_enabled)?;
                    s.f64_into("timeout_s", &mut cfg.safety_timeout_s)?;
                }
                n if n.starts_with("obstacle.") => launches.push(s.launch()?),
                other => return Err(HarnessError::Config(format!("unknown section [{other}]"))),
            }
            s.finish()?;
        }
        launches.sort_by(|a, b| a.time.total_cmp(&b.time));
        cfg.launches = launches;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, HarnessError> {
    v.trim()
        .parse()
        .map_err(|_| HarnessError::Config(format!("`{key}`: `{v}` is not a number")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, HarnessError> {
    v.split(',').map(|x| parse_f64(key, x)).collect()
}

/// `"30:31, 50.5:51"`
fn parse_windows(v: &str) -> Result<Vec<(f64, f64)>, HarnessError> {
    v.split(',')
        .filter(|w| !w.trim().is_empty())
        .map(|w| {
            let (a, b) = w
                .split_once(':')
                .ok_or_else(|| HarnessError::Config(format!("blackout `{w}` must be start:end")))?;
            Ok((parse_f64("blackouts", a)?, parse_f64("blackouts", b)?))
        })
        .collect()
}

/// Tracks which keys of a section were read so that typos are reported.
struct Section<'a> {
    name: &'a str,
    props: &'a Properties,
    used: Vec<&'static str>,
}

impl<'a> Section<'a> {
    fn new(name: &'a str, props: &'a Properties) -> Self {
        Self {
            name,
            props,
            used: Vec::new(),
        }
    }

    fn str(&mut self, key: &'static str) -> Option<&'a str> {
        self.used.push(key);
        self.props.get(key).map(str::trim)
    }

    fn parsed<T: std::str::FromStr>(&mut self, key: &'static str) -> Result<Option<T>, HarnessError> {
        let name = self.name;
        self.str(key)
            .map(|v| {
                v.parse()
                    .map_err(|_| HarnessError::Config(format!("[{name}] `{key}`: cannot parse `{v}`")))
            })
            .transpose()
    }

    fn parse_into<T: std::str::FromStr>(&mut self, key: &'static str, out: &mut T) -> Result<(), HarnessError> {
        if let Some(v) = self.parsed(key)? {
            *out = v;
        }
        Ok(())
    }

    fn f64_into(&mut self, key: &'static str, out: &mut f64) -> Result<(), HarnessError> {
        self.parse_into(key, out)
    }

    fn list(&mut self, key: &'static str, len: usize) -> Result<Option<Vec<f64>>, HarnessError> {
        let name = self.name;
        let Some(v) = self.str(key) else { return Ok(None) };
        let xs = parse_list(key, v)?;
        if xs.len() != len {
            return Err(HarnessError::Config(format!("[{name}] `{key}` needs {len} values")));
        }
        Ok(Some(xs))
    }

    fn vec3(&mut self, key: &'static str) -> Result<Option<Vec3>, HarnessError> {
        Ok(self.list(key, 3)?.map(|x| Vec3::new(x[0], x[1], x[2])))
    }

    fn reference(&mut self, base_dir: &Path, current: &ReferenceSpec) -> Result<ReferenceSpec, HarnessError> {
        let kind = self.str("kind");
        let spec = match kind {
            None | Some("circle") => {
                let (mut radius, mut divisor, mut altitude) = match current {
                    ReferenceSpec::Circle {
                        radius,
                        divisor,
                        altitude,
                    } => (*radius, *divisor, *altitude),
                    _ => (1.0, 600.0, 0.8),
                };
                self.f64_into("radius", &mut radius)?;
                self.f64_into("divisor", &mut divisor)?;
                self.f64_into("altitude", &mut altitude)?;
                ReferenceSpec::Circle {
                    radius,
                    divisor,
                    altitude,
                }
            }
            Some("hover") => ReferenceSpec::Hover {
                point: self
                    .vec3("point")?
                    .ok_or_else(|| HarnessError::Config("hover reference needs `point`".into()))?,
            },
            Some("waypoints") => {
                let file = self
                    .str("file")
                    .ok_or_else(|| HarnessError::Config("waypoint reference needs `file`".into()))?;
                ReferenceSpec::Waypoints(
                    load_waypoints(&base_dir.join(file)).map_err(|e| HarnessError::Config(e.to_string()))?,
                )
            }
            Some(o) => return Err(HarnessError::Config(format!("reference kind `{o}`"))),
        };
        Ok(spec)
    }

    fn delay_spec(&mut self, base_dir: &Path, current: &DelaySpec) -> Result<DelaySpec, HarnessError> {
        let kind = self.str("kind");
        let spec = match kind {
            None => current.clone(),
            Some("constant") => {
                let mut d = current.nominal_mean().unwrap_or(0.067);
                self.f64_into("delay", &mut d)?;
                DelaySpec::Constant(d)
            }
            Some("sinusoidal") => {
                let (mut base, mut amplitude, mut period) = (0.067, 0.02, 10.0);
                self.f64_into("base", &mut base)?;
                self.f64_into("amplitude", &mut amplitude)?;
                self.f64_into("period", &mut period)?;
                DelaySpec::Sinusoidal {
                    base,
                    amplitude,
                    period,
                }
            }
            Some("random_walk") => {
                let DelaySpec::RandomWalk {
                    mut base,
                    mut step,
                    mut min,
                    mut max,
                    mut reversion,
                    ..
                } = DelaySpec::default()
                else {
                    unreachable!()
                };
                self.f64_into("base", &mut base)?;
                self.f64_into("step", &mut step)?;
                self.f64_into("min", &mut min)?;
                self.f64_into("max", &mut max)?;
                self.f64_into("reversion", &mut reversion)?;
                DelaySpec::RandomWalk {
                    base,
                    step,
                    min,
                    max,
                    reversion,
                    tick: self.parsed::<f64>("tick")?,
                }
            }
            Some("trace") => {
                let file = self
                    .str("file")
                    .ok_or_else(|| HarnessError::Config("trace delay needs `file`".into()))?;
                DelaySpec::Trace(base_dir.join(file))
            }
            Some(o) => return Err(HarnessError::Config(format!("delay kind `{o}`"))),
        };
        Ok(spec)
    }

    fn nmpc(&mut self, cfg: &mut ScenarioConfig) -> Result<(), HarnessError> {
        if let Some(q) = self.list("q_state", 8)? {
            cfg.weights.state = StateVector::from_column_slice(&q);
        }
        if let Some(r) = self.vec3("q_input")? {
            cfg.weights.input = r;
        }
        if let Some(r) = self.vec3("q_rate")? {
            cfg.weights.input_rate = r;
        }
        let b = &mut cfg.bounds;
        let (mut f_min, mut f_max) = (b.u_min.thrust, b.u_max.thrust);
        self.f64_into("thrust_min", &mut f_min)?;
        self.f64_into("thrust_max", &mut f_max)?;
        let mut angle = b.u_max.phi_d;
        self.f64_into("angle_max", &mut angle)?;
        b.u_min = ControlInput::new(f_min, -angle, -angle);
        b.u_max = ControlInput::new(f_max, angle, angle);
        if let Some(r) = self.parsed::<f64>("rate_max")? {
            b.d_phi_max = r;
            b.d_theta_max = r;
        }
        let s = &mut cfg.solver;
        self.f64_into("tol_grad", &mut s.tol_grad)?;
        self.parse_into("max_iterations", &mut s.max_iterations)?;
        self.parse_into("memory", &mut s.memory)?;
        self.f64_into("penalty_initial", &mut s.penalty_initial)?;
        self.f64_into("penalty_growth", &mut s.penalty_growth)?;
        self.parse_into("penalty_rounds", &mut s.penalty_rounds)?;
        self.f64_into("violation_tol", &mut s.violation_tol)?;
        Ok(())
    }

    fn launch(&mut self) -> Result<ObstacleLaunch, HarnessError> {
        let name = self.name;
        let time = self
            .parsed::<f64>("time")?
            .ok_or_else(|| HarnessError::Config(format!("[{name}] needs `time`")))?;
        let from = match (self.vec3("offset")?, self.vec3("origin")?) {
            (Some(o), None) => LaunchPoint::Offset(o),
            (None, Some(o)) => LaunchPoint::Origin(o),
            (None, None) => LaunchPoint::Offset(Vec3::new(2.5, 0.0, 0.0)),
            (Some(_), Some(_)) => {
                return Err(HarnessError::Config(format!(
                    "[{name}] takes `offset` or `origin`, not both"
                )))
            }
        };
        let mut l = ObstacleLaunch {
            from,
            ..ObstacleLaunch::aimed(time, Vec3::zeros(), 1.0)
        };
        l.velocity = self.vec3("velocity")?;
        self.f64_into("flight_time", &mut l.flight_time)?;
        l.lifetime = l.flight_time + 1.0;
        self.f64_into("lifetime", &mut l.lifetime)?;
        self.f64_into("radius", &mut l.radius)?;
        self.f64_into("safety_radius", &mut l.safety_radius)?;
        Ok(l)
    }

    fn finish(self) -> Result<(), HarnessError> {
        match self.props.iter().find(|(k, _)| !self.used.contains(k)) {
            Some((k, _)) => Err(HarnessError::Config(format!("[{}] unknown key `{k}`", self.name))),
            None => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ScenarioConfig, HarnessError> {
        ScenarioConfig::from_ini_str(text, Path::new("."))
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse("").unwrap(), ScenarioConfig::default());
    }

    #[test]
    fn full_file() {
        let cfg = parse(
            "[scenario]\nkind = obstacle\nduration_s = 60\nseed = 7\n\
             [delay]\nkind = constant\ndelay = 0.08\ndown_share = 0.25\nblackouts = 10:11, 20:20.5\n\
             [estimator]\nwindow = 50\nposition_velocity = current\n\
             [uav]\ndrag = 0.2, 0.2, 0.3\n\
             [nmpc]\nangle_max = 0.3\nrate_max = 0.05\nq_input = 1, 2, 3\nmax_iterations = 100\n\
             [obstacle.2]\ntime = 40\norigin = 3, 0, 1\nflight_time = 0.8\n\
             [obstacle.1]\ntime = 20\n",
        )
        .unwrap();
        assert_eq!(cfg.kind, ScenarioKind::Obstacle);
        assert_eq!((cfg.duration_s, cfg.seed), (60.0, 7));
        assert_eq!(cfg.delay.loop_delay, DelaySpec::Constant(0.08));
        assert_eq!(cfg.delay.down_share, 0.25);
        assert_eq!(cfg.delay.blackouts, vec![(10.0, 11.0), (20.0, 20.5)]);
        assert_eq!(cfg.estimator_window, Some(50));
        assert_eq!(cfg.predictor.position_velocity, PositionVelocity::Current);
        assert_eq!(cfg.params.drag, Vec3::new(0.2, 0.2, 0.3));
        assert_eq!(cfg.bounds.u_max.phi_d, 0.3);
        assert_eq!(cfg.bounds.d_theta_max, 0.05);
        assert_eq!(cfg.solver.max_iterations, 100);
        assert_eq!(cfg.launches.len(), 2);
        assert_eq!(cfg.launches[0].time, 20.0);
        assert_eq!(cfg.launches[1].from, LaunchPoint::Origin(Vec3::new(3.0, 0.0, 1.0)));
        assert!((cfg.launches[1].lifetime - 1.8).abs() < 1e-12);
    }

    #[test]
    fn typos_are_errors() {
        assert!(parse("[scenario]\nduraton_s = 3\n").is_err());
        assert!(parse("[scenaro]\n").is_err());
        assert!(parse("[scenario]\nduration_s = abc\n").is_err());
        assert!(parse("[nmpc]\nq_state = 1, 2\n").is_err());
    }

    #[test]
    fn invariants_are_checked() {
        assert!(parse("[scenario]\nkind = obstacle\n").is_err());
        assert!(parse("[scenario]\nduration_s = 0\n").is_err());
        assert!(parse("[scenario]\ncontrol_rate_hz = -1\n").is_err());
        assert!(parse("[obstacle.a]\ntime = 10\n[obstacle.b]\ntime = 10.5\n").is_err());
    }

    #[test]
    fn split_legs_share_one_profile() {
        let cfg = ScenarioConfig::default();
        let (mut down, mut up) = cfg.delay.build(3, cfg.ts()).unwrap();
        for i in 0..500 {
            let t = i as f64 * 0.013;
            assert_eq!(down.sample(t), up.sample(t));
        }
        let d = DelayConfig {
            down_share: 0.25,
            ..DelayConfig::constant(0.08)
        };
        let (mut down, mut up) = d.build(0, 0.1).unwrap();
        assert_eq!((down.sample(0.0), up.sample(0.0)), (0.02, 0.06));
    }
}
