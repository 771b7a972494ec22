//! Vehicle side of the simulated loop: the true plant, the command
//! receiver with its echo, odometry publishing, the safety watchdog and
//! thrown obstacles.

use super::config::{LaunchPoint, ObstacleLaunch};
use super::safety::{safety_monitor, LinkState, SafetyConfig};
use super::HarnessError;
use crate::channel::{Payload, SimChannel, StalenessFilter, TimestampedMessage};
use crate::model::{gravity, step_obstacle, step_uav, ControlInput, ObstacleState, UavParams, UavState, Vec3};

/// Closest approach of one obstacle, found on the linear interpolation
/// between integration nodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClosestApproach {
    pub launch_time: f64,
    pub t: f64,
    pub distance: f64,
    /// `r_s + r_d` for this obstacle.
    pub keep_out: f64,
}

#[derive(Debug, Clone, Copy)]
struct Airborne {
    state: ObstacleState,
    retire_at: f64,
    slot: usize,
}

#[derive(Debug)]
pub struct Plant {
    params: UavParams,
    ts: f64,
    substeps: usize,
    pub(super) state: UavState,
    applied: ControlInput,
    commands: StalenessFilter,
    last_command_at: f64,
    safety: SafetyConfig,
    link: LinkState,
    transitions: Vec<(f64, LinkState)>,
    launches: Vec<ObstacleLaunch>,
    next_launch: usize,
    obstacle: Option<Airborne>,
    closest: Vec<ClosestApproach>,
    next_node: u64,
    seq: u64,
    /// `(t, p)` at every integration node and event.
    trace: Vec<(f64, Vec3)>,
}

impl Plant {
    pub fn new(
        initial: UavState,
        params: UavParams,
        ts: f64,
        substeps: usize,
        safety: SafetyConfig,
        launches: Vec<ObstacleLaunch>,
    ) -> Self {
        Self {
            params,
            ts,
            substeps,
            state: initial,
            applied: ControlInput::hover(),
            commands: StalenessFilter::new(),
            last_command_at: initial.t,
            safety,
            link: LinkState::Normal,
            transitions: Vec::new(),
            launches,
            next_launch: 0,
            obstacle: None,
            closest: Vec::new(),
            next_node: 0,
            seq: 0,
            trace: vec![(initial.t, initial.p)],
        }
    }

    /// Node `j`; whole control periods are exact multiples of `ts`.
    fn node_time(&self, j: u64) -> f64 {
        let s = self.substeps as u64;
        (j / s) as f64 * self.ts + (j % s) as f64 * (self.ts / self.substeps as f64)
    }

    pub fn state(&self) -> &UavState {
        &self.state
    }

    pub fn obstacle(&self) -> Option<&ObstacleState> {
        self.obstacle.as_ref().map(|o| &o.state)
    }

    pub fn closest_approaches(&self) -> &[ClosestApproach] {
        &self.closest
    }

    pub fn transitions(&self) -> &[(f64, LinkState)] {
        &self.transitions
    }

    pub fn trace(&self) -> &[(f64, Vec3)] {
        &self.trace
    }

    /// Runs the plant up to and including the node at `t_end`, consuming
    /// commands from `down` and publishing on `up`.
    pub fn advance(&mut self, t_end: f64, down: &mut SimChannel, up: &mut SimChannel) -> Result<(), HarnessError> {
        loop {
            let node = self.node_time(self.next_node);
            let mut t = node;
            if let Some(r) = down.next_release() {
                t = t.min(r);
            }
            if let Some(l) = self.launches.get(self.next_launch) {
                t = t.min(l.time);
            }
            if t > t_end {
                return Ok(());
            }
            self.integrate_to(t)?;

            for d in down.poll(t) {
                if let Payload::Command(u) = d.message.payload {
                    self.echo(u, d.message.sent_at, t, up)?;
                    if self.commands.admit(d.message.sent_at) {
                        self.applied = u;
                        self.last_command_at = t;
                    }
                }
            }
            if self.launches.get(self.next_launch).is_some_and(|l| l.time <= t) {
                self.launch(t);
            }
            if t == node {
                self.on_node(t, up)?;
                self.next_node += 1;
            }
        }
    }

    fn integrate_to(&mut self, t: f64) -> Result<(), HarnessError> {
        let dt = t - self.state.t;
        if dt <= 0.0 {
            return Ok(());
        }
        let u = match self.link {
            LinkState::Normal => self.applied,
            LinkState::Hold => ControlInput::hover(),
        };
        let before = self.state.p;
        self.state = step_uav(&self.state, &u, &self.params, dt).map_err(|e| HarnessError::SimulationDiverged {
            t,
            reason: e.to_string(),
        })?;
        self.state.t = t;
        self.trace.push((t, self.state.p));

        if let Some(o) = &mut self.obstacle {
            let o_before = o.state.p;
            o.state = step_obstacle(&o.state, dt);
            o.state.t = t;
            let r0 = o_before - before;
            let r1 = o.state.p - self.state.p;
            let (s, d) = closest_on_segment(r0, r1);
            let c = &mut self.closest[o.slot];
            if d < c.distance {
                c.distance = d;
                c.t = t - dt + s * dt;
            }
        }
        Ok(())
    }

    fn echo(&mut self, input: ControlInput, echo_of: f64, now: f64, up: &mut SimChannel) -> Result<(), HarnessError> {
        self.publish(Payload::CommandEcho { input, echo_of }, now, up)
    }

    fn publish(&mut self, payload: Payload, now: f64, up: &mut SimChannel) -> Result<(), HarnessError> {
        let msg = TimestampedMessage {
            seq: self.seq,
            sent_at: now,
            payload,
        };
        self.seq += 1;
        up.send(msg, now).map_err(|e| HarnessError::Channel(e.to_string()))?;
        Ok(())
    }

    fn on_node(&mut self, t: f64, up: &mut SimChannel) -> Result<(), HarnessError> {
        let link = safety_monitor(true, t - self.last_command_at, &self.safety);
        if link != self.link {
            self.link = link;
            self.transitions.push((t, link));
        }
        if let Some(o) = self.obstacle {
            if t >= o.retire_at || o.state.p.z < 0.0 {
                self.obstacle = None;
            }
        }
        self.publish(Payload::UavOdometry(UavState { t, ..self.state }), t, up)?;
        if let Some(o) = self.obstacle {
            self.publish(
                Payload::ObstacleOdometry {
                    p: o.state.p,
                    v: o.state.v,
                },
                t,
                up,
            )?;
        }
        Ok(())
    }

    fn launch(&mut self, t: f64) {
        let l = self.launches[self.next_launch];
        self.next_launch += 1;
        let p0 = match l.from {
            LaunchPoint::Offset(d) => self.state.p + d,
            LaunchPoint::Origin(p) => p,
        };
        // Ballistic aim at the vehicle's position one flight time ahead.
        let v0 = l.velocity.unwrap_or_else(|| {
            let target = self.state.p + self.state.v * l.flight_time;
            (target - p0) / l.flight_time - gravity() * (0.5 * l.flight_time)
        });
        self.closest.push(ClosestApproach {
            launch_time: t,
            t,
            distance: (p0 - self.state.p).norm(),
            keep_out: l.radius + l.safety_radius,
        });
        self.obstacle = Some(Airborne {
            state: ObstacleState {
                p: p0,
                v: v0,
                radius: l.radius,
                t,
            },
            retire_at: l.retire_at(),
            slot: self.closest.len() - 1,
        });
    }
}

/// Minimum of `|r0 + s (r1 - r0)|` over `s` in `[0, 1]`: `(s, distance)`.
fn closest_on_segment(r0: Vec3, r1: Vec3) -> (f64, f64) {
    let d = r1 - r0;
    let dd = d.norm_squared();
    let s = if dd > 0.0 {
        (-r0.dot(&d) / dd).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (s, (r0 + d * s).norm())
}

/// Linear interpolation of a time-sorted `(t, p)` trace; `None` outside it.
pub fn interpolate(trace: &[(f64, Vec3)], t: f64) -> Option<Vec3> {
    let (first, last) = (trace.first()?, trace.last()?);
    if t < first.0 || t > last.0 {
        return None;
    }
    let i = trace.partition_point(|(ti, _)| *ti < t);
    if i == 0 {
        return Some(first.1);
    }
    let (t0, p0) = trace[i - 1];
    let (t1, p1) = trace[i];
    if t1 == t {
        return Some(p1);
    }
    Some(p0 + (p1 - p0) * ((t - t0) / (t1 - t0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::DelayModel;

    fn plant(launches: Vec<ObstacleLaunch>) -> Plant {
        Plant::new(
            UavState::hover_at(Vec3::new(0.0, 1.0, 0.8), 0.0),
            UavParams::default(),
            1.0 / 30.0,
            4,
            SafetyConfig::default(),
            launches,
        )
    }

    #[test]
    fn publishes_odometry_every_substep() {
        let mut p = plant(vec![]);
        let mut down = SimChannel::new(DelayModel::constant(0.0));
        let mut up = SimChannel::new(DelayModel::constant(0.0));
        p.advance(1.0, &mut down, &mut up).unwrap();
        let got = up.poll(1.0);
        assert_eq!(got.len(), 121);
        assert_eq!(got.last().unwrap().message.sent_at, 1.0);
        // Hovering with nothing received stays put.
        assert!((p.state().p - Vec3::new(0.0, 1.0, 0.8)).norm() < 1e-12);
    }

    #[test]
    fn commands_apply_at_release_and_are_echoed() {
        let mut p = plant(vec![]);
        let mut down = SimChannel::new(DelayModel::constant(0.01));
        let mut up = SimChannel::new(DelayModel::constant(0.0));
        p.advance(0.0, &mut down, &mut up).unwrap();
        let cmd = ControlInput::new(10.81, 0.0, 0.0);
        down.send(
            TimestampedMessage {
                seq: 0,
                sent_at: 0.0,
                payload: Payload::Command(cmd),
            },
            0.0,
        )
        .unwrap();
        p.advance(1.0 / 30.0, &mut down, &mut up).unwrap();
        let echoes: Vec<_> = up
            .poll(1.0)
            .into_iter()
            .filter_map(|d| match d.message.payload {
                Payload::CommandEcho { input, echo_of } => Some((input, echo_of, d.delivered_at)),
                _ => None,
            })
            .collect();
        assert_eq!(echoes, vec![(cmd, 0.0, 0.01)]);
        // One m/s^2 of net thrust from t = 0.01 to 1/30.
        let dt = 1.0 / 30.0 - 0.01;
        assert!((p.state().v.z - dt).abs() < 1e-3);
    }

    #[test]
    fn holds_after_timeout_and_recovers() {
        let mut p = plant(vec![]);
        let mut down = SimChannel::new(DelayModel::constant(0.0));
        let mut up = SimChannel::new(DelayModel::constant(0.0));
        p.advance(1.0, &mut down, &mut up).unwrap();
        assert_eq!(p.transitions().len(), 1);
        assert_eq!(p.transitions()[0].1, LinkState::Hold);
        assert!((p.transitions()[0].0 - 0.5083).abs() < 1e-3);
        let msg = TimestampedMessage {
            seq: 0,
            sent_at: 1.0,
            payload: Payload::Command(ControlInput::hover()),
        };
        down.send(msg, 1.0).unwrap();
        p.advance(1.1, &mut down, &mut up).unwrap();
        assert_eq!(p.transitions().last().unwrap().1, LinkState::Normal);
    }

    #[test]
    fn aimed_throw_passes_near_a_hovering_vehicle() {
        let mut p = plant(vec![ObstacleLaunch::aimed(0.5, Vec3::new(2.0, 0.0, 0.0), 0.8)]);
        let mut down = SimChannel::new(DelayModel::constant(0.0));
        let mut up = SimChannel::new(DelayModel::constant(0.0));
        p.safety.enabled = false;
        p.advance(2.0, &mut down, &mut up).unwrap();
        let c = p.closest_approaches()[0];
        // Euler on substeps against a ballistic aim: a few centimetres off.
        assert!(c.distance < 0.05, "{c:?}");
        assert!((c.t - 1.3).abs() < 0.02);
        assert!(p.obstacle().is_none());
    }

    #[test]
    fn closest_point_on_segment() {
        let (s, d) = closest_on_segment(Vec3::new(-1.0, 0.5, 0.0), Vec3::new(1.0, 0.5, 0.0));
        assert!((s - 0.5).abs() < 1e-15 && (d - 0.5).abs() < 1e-15);
        let (s, d) = closest_on_segment(Vec3::new(1.0, 0.0, 0.0), Vec3::new(2.0, 0.0, 0.0));
        assert_eq!((s, d), (0.0, 1.0));
    }

    #[test]
    fn interpolation() {
        let tr = vec![
            (0.0, Vec3::zeros()),
            (1.0, Vec3::new(1.0, 2.0, 0.0)),
            (3.0, Vec3::new(1.0, 2.0, 4.0)),
        ];
        assert_eq!(interpolate(&tr, 0.5), Some(Vec3::new(0.5, 1.0, 0.0)));
        assert_eq!(interpolate(&tr, 1.0), Some(Vec3::new(1.0, 2.0, 0.0)));
        assert_eq!(interpolate(&tr, 2.0), Some(Vec3::new(1.0, 2.0, 2.0)));
        assert_eq!(interpolate(&tr, 3.5), None);
    }
}
