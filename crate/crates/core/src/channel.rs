//! Virtual-clock message channels with injected, time-varying delay.
//!
//! A [`SimChannel`] carries one direction of the loop. Every message is
//! released at `send time + delay(send time)` and delivered by [`SimChannel::poll`]
//! in release order, so a falling delay can overtake earlier traffic. Receivers
//! use a [`StalenessFilter`] to consume only the freshest message of a kind.
//!
//! Channels never read wall time: the caller owns the clock.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::model::{ControlInput, UavState, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChannelError {
    #[error("channel closed")]
    ChannelClosed,
    #[error("message stamped at {sent_at} sent at earlier time {now}")]
    SentBeforeStamp { sent_at: f64, now: f64 },
    #[error("invalid delay model: {0}")]
    InvalidModel(String),
    #[error("delay trace: {0}")]
    Trace(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Payload {
    Command(ControlInput),
    /// Vehicle state; `t` equals the message stamp.
    UavOdometry(UavState),
    ObstacleOdometry {
        p: Vec3,
        v: Vec3,
    },
    /// A received command sent back with the stamp it arrived with.
    CommandEcho {
        input: ControlInput,
        echo_of: f64,
    },
    Heartbeat,
}

impl Payload {
    pub fn kind(&self) -> MessageKind {
        match self {
            Self::Command(_) => MessageKind::Command,
            Self::UavOdometry(_) => MessageKind::UavOdometry,
            Self::ObstacleOdometry { .. } => MessageKind::ObstacleOdometry,
            Self::CommandEcho { .. } => MessageKind::CommandEcho,
            Self::Heartbeat => MessageKind::Heartbeat,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MessageKind {
    Command,
    UavOdometry,
    ObstacleOdometry,
    CommandEcho,
    Heartbeat,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimestampedMessage {
    pub seq: u64,
    /// Sender's virtual clock, seconds.
    pub sent_at: f64,
    pub payload: Payload,
}

/// A message handed out by [`SimChannel::poll`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Delivery {
    pub message: TimestampedMessage,
    /// Release time; the receiver sees the message at this instant.
    pub delivered_at: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DelayKind {
    Constant(f64),
    /// `base + amplitude * sin(2 pi t / period)`.
    Sinusoidal {
        base: f64,
        amplitude: f64,
        period: f64,
    },
    /// Mean-reverting random walk on a fixed time grid: each tick moves by
    /// `+/- step` plus `reversion * (base - x)`, then clamps to `[min, max]`.
    RandomWalk {
        base: f64,
        step: f64,
        min: f64,
        max: f64,
        reversion: f64,
        tick: f64,
        seed: u64,
    },
    /// `(time_s, delay_s)` pairs held until the next entry.
    Trace(Vec<(f64, f64)>),
}

/// Time-varying one-way delay. The value is a pure function of the query
/// time, so channels built from equal models see equal delay profiles
/// regardless of how often they are sampled.
#[derive(Debug, Clone)]
pub struct DelayModel {
    kind: DelayKind,
    /// Multiplies the raw profile; splits one loop delay across legs.
    scale: f64,
    max_delay: f64,
    walk: Vec<f64>,
    rng: Option<ChaCha8Rng>,
}

pub const DEFAULT_MAX_DELAY: f64 = 0.5;

impl DelayModel {
    pub fn new(kind: DelayKind) -> Result<Self, ChannelError> {
        let bad = |m: &str| Err(ChannelError::InvalidModel(m.into()));
        match &kind {
            DelayKind::Constant(c) if !(*c >= 0.0 && c.is_finite()) => return bad("constant delay must be >= 0"),
            DelayKind::Sinusoidal {
                base,
                amplitude,
                period,
            } => {
                if !(base.is_finite() && amplitude.is_finite() && *period > 0.0) {
                    return bad("sinusoid needs finite base and amplitude and a positive period");
                }
            }
            DelayKind::RandomWalk {
                base,
                step,
                min,
                max,
                reversion,
                tick,
                ..
            } => {
                if !(*min >= 0.0 && min <= base && base <= max && *step >= 0.0 && *tick > 0.0) {
                    return bad("random walk needs 0 <= min <= base <= max, step >= 0 and tick > 0");
                }
                if !(0.0..=1.0).contains(reversion) {
                    return bad("random walk reversion must lie in [0, 1]");
                }
            }
            DelayKind::Trace(points) => {
                if points.is_empty() {
                    return bad("empty delay trace");
                }
                if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
                    return bad("trace times must be strictly increasing");
                }
                if points.iter().any(|(_, d)| !(*d >= 0.0 && d.is_finite())) {
                    return bad("trace delays must be finite and >= 0");
                }
            }
            _ => {}
        }
        let (walk, rng) = match &kind {
            DelayKind::RandomWalk { base, seed, .. } => (vec![*base], Some(ChaCha8Rng::seed_from_u64(*seed))),
            _ => (Vec::new(), None),
        };
        Ok(Self {
            kind,
            scale: 1.0,
            max_delay: DEFAULT_MAX_DELAY,
            walk,
            rng,
        })
    }

    pub fn constant(c: f64) -> Self {
        Self::new(DelayKind::Constant(c)).expect("constant delay must be >= 0")
    }

    /// The default loop profile: a walk around 67 ms, 3 ms steps on a
    /// 1/30 s grid, clamped to [40, 100] ms.
    pub fn default_walk(seed: u64) -> Self {
        Self::new(DelayKind::RandomWalk {
            base: 0.067,
            step: 0.003,
            min: 0.040,
            max: 0.100,
            reversion: 0.1,
            tick: 1.0 / 30.0,
            seed,
        })
        .expect("default walk is valid")
    }

    /// Reads a whitespace-separated `time_s delay_s` file. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn trace_from_file(path: &Path) -> Result<Self, ChannelError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ChannelError::Trace(format!("{}: {e}", path.display())))?;
        let mut points = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split_whitespace().map(str::parse::<f64>);
            match (cols.next(), cols.next(), cols.next()) {
                (Some(Ok(t)), Some(Ok(d)), None) => points.push((t, d)),
                _ => {
                    return Err(ChannelError::Trace(format!(
                        "line {}: expected `time_s delay_s`",
                        n + 1
                    )))
                }
            }
        }
        Self::new(DelayKind::Trace(points))
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }

    pub fn with_max_delay(mut self, max_delay: f64) -> Self {
        self.max_delay = max_delay;
        self
    }

    pub fn kind(&self) -> &DelayKind {
        &self.kind
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Delay for a message sent at `t`, in `[0, max_delay]`.
    pub fn sample(&mut self, t: f64) -> f64 {
        let raw = match &self.kind {
            DelayKind::Constant(c) => *c,
            DelayKind::Sinusoidal {
                base,
                amplitude,
                period,
            } => base + amplitude * (std::f64::consts::TAU * t / period).sin(),
            DelayKind::RandomWalk { tick, .. } => {
                let i = (t.max(0.0) / tick).floor() as usize;
                self.walk_at(i)
            }
            DelayKind::Trace(points) => {
                let i = points.partition_point(|(pt, _)| *pt <= t);
                points[i.saturating_sub(1)].1
            }
        };
        (raw * self.scale).clamp(0.0, self.max_delay)
    }

    fn walk_at(&mut self, i: usize) -> f64 {
        let DelayKind::RandomWalk {
            base,
            step,
            min,
            max,
            reversion,
            ..
        } = self.kind
        else {
            unreachable!()
        };
        let rng = self.rng.as_mut().expect("walk has an rng");
        while self.walk.len() <= i {
            let x = *self.walk.last().unwrap();
            let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
            self.walk
                .push((x + sign * step + reversion * (base - x)).clamp(min, max));
        }
        self.walk[i]
    }
}

#[derive(Debug, Clone, Copy)]
struct Pending {
    release: f64,
    order: u64,
    message: TimestampedMessage,
}

impl PartialEq for Pending {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Pending {}

impl PartialOrd for Pending {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// Reversed so that the max-heap pops the earliest release, then lowest seq.
impl Ord for Pending {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .release
            .total_cmp(&self.release)
            .then(other.message.seq.cmp(&self.message.seq))
            .then(other.order.cmp(&self.order))
    }
}

/// One direction of the loop.
#[derive(Debug, Clone)]
pub struct SimChannel {
    model: DelayModel,
    queue: BinaryHeap<Pending>,
    /// `[start, end)` windows in which sent messages are dropped.
    blackouts: Vec<(f64, f64)>,
    closed: bool,
    next_order: u64,
    sent: u64,
    delivered: u64,
    dropped: u64,
}

impl SimChannel {
    pub fn new(model: DelayModel) -> Self {
        Self {
            model,
            queue: BinaryHeap::new(),
            blackouts: Vec::new(),
            closed: false,
            next_order: 0,
            sent: 0,
            delivered: 0,
            dropped: 0,
        }
    }

    /// Messages sent inside any window are lost. Off by default.
    pub fn with_blackouts(mut self, windows: Vec<(f64, f64)>) -> Self {
        self.blackouts = windows;
        self
    }

    /// Enqueues `msg` and returns its release time, or `None` if a blackout
    /// dropped it.
    pub fn send(&mut self, msg: TimestampedMessage, now: f64) -> Result<Option<f64>, ChannelError> {
        if self.closed {
            return Err(ChannelError::ChannelClosed);
        }
        if now < msg.sent_at {
            return Err(ChannelError::SentBeforeStamp {
                sent_at: msg.sent_at,
                now,
            });
        }
        self.sent += 1;
        if self.blackouts.iter().any(|(a, b)| (*a..*b).contains(&now)) {
            self.dropped += 1;
            return Ok(None);
        }
        let release = now + self.model.sample(now);
        self.queue.push(Pending {
            release,
            order: self.next_order,
            message: msg,
        });
        self.next_order += 1;
        Ok(Some(release))
    }

    /// Removes and returns every message released at or before `now`.
    pub fn poll(&mut self, now: f64) -> Vec<Delivery> {
        let mut out = Vec::new();
        while self.queue.peek().is_some_and(|p| p.release <= now) {
            let p = self.queue.pop().unwrap();
            out.push(Delivery {
                message: p.message,
                delivered_at: p.release,
            });
        }
        self.delivered += out.len() as u64;
        out
    }

    pub fn next_release(&self) -> Option<f64> {
        self.queue.peek().map(|p| p.release)
    }

    pub fn in_flight(&self) -> usize {
        self.queue.len()
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    pub fn sent(&self) -> u64 {
        self.sent
    }

    pub fn delivered(&self) -> u64 {
        self.delivered
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }

    pub fn model_mut(&mut self) -> &mut DelayModel {
        &mut self.model
    }
}

/// Receiver-side freshness rule: accept a message only if its stamp is
/// strictly newer than every stamp accepted before.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StalenessFilter {
    latest: f64,
    dropped: u64,
}

impl Default for StalenessFilter {
    fn default() -> Self {
        Self {
            latest: f64::NEG_INFINITY,
            dropped: 0,
        }
    }
}

impl StalenessFilter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn admit(&mut self, sent_at: f64) -> bool {
        if staleness_filter(self.latest, sent_at) {
            self.latest = sent_at;
            true
        } else {
            self.dropped += 1;
            false
        }
    }

    /// Stamp of the newest accepted message.
    pub fn latest(&self) -> Option<f64> {
        (self.latest > f64::NEG_INFINITY).then_some(self.latest)
    }

    pub fn dropped(&self) -> u64 {
        self.dropped
    }
}

/// `true` when `incoming` is strictly newer than `latest_seen`.
pub fn staleness_filter(latest_seen: f64, incoming: f64) -> bool {
    incoming > latest_seen
}
