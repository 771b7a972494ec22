//! Reference trajectories sampled over the prediction horizon.

use std::path::Path;

use thiserror::Error;

use crate::model::{StateVector, Vec3};

#[derive(Debug, Error)]
pub enum TrajectoryError {
    #[error("invalid reference: {0}")]
    Invalid(String),
    #[error("waypoint file: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub t: f64,
    pub p: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ReferenceSpec {
    /// `(r sin(k / divisor), r cos(k / divisor), altitude)` at controller step `k`.
    Circle {
        radius: f64,
        divisor: f64,
        altitude: f64,
    },
    Hover {
        point: Vec3,
    },
    /// Piecewise-linear in time, held at the ends.
    Waypoints(Vec<Waypoint>),
}

impl Default for ReferenceSpec {
    fn default() -> Self {
        Self::Circle {
            radius: 1.0,
            divisor: 600.0,
            altitude: 0.8,
        }
    }
}

impl ReferenceSpec {
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        match self {
            Self::Circle {
                radius,
                divisor,
                altitude,
            } => {
                if !(*radius > 0.0 && *altitude > 0.0 && *divisor > 0.0) {
                    return Err(TrajectoryError::Invalid(
                        "circle radius, divisor and altitude must be positive".into(),
                    ));
                }
            }
            Self::Hover { point } => {
                if !point.iter().all(|x| x.is_finite()) {
                    return Err(TrajectoryError::Invalid("hover point must be finite".into()));
                }
            }
            Self::Waypoints(w) => {
                if w.is_empty() {
                    return Err(TrajectoryError::Invalid("no waypoints".into()));
                }
                if w.windows(2).any(|p| !(p[1].t > p[0].t)) {
                    return Err(TrajectoryError::Invalid(
                        "waypoint times must be strictly increasing".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Reads a `time_s,x,y,z` CSV with a header row.
pub fn load_waypoints(path: &Path) -> Result<Vec<Waypoint>, TrajectoryError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let mut out = Vec::new();
    for row in reader.deserialize() {
        let (t, x, y, z): (f64, f64, f64, f64) = row?;
        out.push(Waypoint {
            t,
            p: Vec3::new(x, y, z),
        });
    }
    let spec = ReferenceSpec::Waypoints(out);
    spec.validate()?;
    match spec {
        ReferenceSpec::Waypoints(w) => Ok(w),
        _ => unreachable!(),
    }
}

/// A reference spec bound to the controller sampling period.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub spec: ReferenceSpec,
    pub ts: f64,
    /// Track position only, with zero velocity references.
    pub zero_velocity: bool,
}

impl Trajectory {
    pub fn new(spec: ReferenceSpec, ts: f64) -> Result<Self, TrajectoryError> {
        spec.validate()?;
        if !(ts > 0.0) {
            return Err(TrajectoryError::Invalid("sampling period must be positive".into()));
        }
        Ok(Self {
            spec,
            ts,
            zero_velocity: false,
        })
    }

    pub fn reference_at(&self, k: usize) -> StateVector {
        self.reference_at_step(k as f64)
    }

    /// Reference at a fractional controller step; used when the horizon is
    /// anchored at a predicted time between ticks.
    pub fn reference_at_step(&self, s: f64) -> StateVector {
        let (p, v) = match &self.spec {
            ReferenceSpec::Circle {
                radius,
                divisor,
                altitude,
            } => {
                let a = s / divisor;
                let (sa, ca) = a.sin_cos();
                let w = radius / divisor / self.ts;
                (
                    Vec3::new(radius * sa, radius * ca, *altitude),
                    Vec3::new(w * ca, -w * sa, 0.0),
                )
            }
            ReferenceSpec::Hover { point } => (*point, Vec3::zeros()),
            ReferenceSpec::Waypoints(w) => waypoint_at(w, s * self.ts),
        };
        let v = if self.zero_velocity { Vec3::zeros() } else { v };
        StateVector::from_column_slice(&[p.x, p.y, p.z, v.x, v.y, v.z, 0.0, 0.0])
    }

    /// `horizon + 1` references starting at step `k`.
    pub fn reference_window(&self, k: usize, horizon: usize) -> Vec<StateVector> {
        (0..=horizon).map(|j| self.reference_at(k + j)).collect()
    }

    /// `horizon + 1` references one controller step apart, starting at a
    /// fractional step.
    pub fn reference_window_from(&self, start: f64, horizon: usize) -> Vec<StateVector> {
        (0..=horizon)
            .map(|j| self.reference_at_step(start + j as f64))
            .collect()
    }
}

fn waypoint_at(w: &[Waypoint], t: f64) -> (Vec3, Vec3) {
    let first = &w[0];
    let last = &w[w.len() - 1];
    if t <= first.t {
        return (first.p, Vec3::zeros());
    }
    if t >= last.t {
        return (last.p, Vec3::zeros());
    }
    let i = w.partition_point(|p| p.t <= t);
    let (a, b) = (&w[i - 1], &w[i]);
    let slope = (b.p - a.p) / (b.t - a.t);
    (a.p + slope * (t - a.t), slope)
}
