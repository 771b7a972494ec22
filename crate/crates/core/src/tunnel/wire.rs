//! Datagram layout, all fields little-endian:
//!
//! ```text
//! 0   magic "PC5G"
//! 4   version u8 (1)
//! 5   type u8
//! 6   seq u32
//! 10  sent_at_us u64
//! 18  payload_len u16
//! 20  payload: f64 fields, then a trailing u64 for echoes
//! ```

use thiserror::Error;

use crate::model::{ControlInput, Vec3};

pub const MAGIC: [u8; 4] = *b"PC5G";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 20;
/// Largest datagram we produce or accept.
pub const MAX_DATAGRAM: usize = 1472;

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
pub enum WireError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    BadVersion(u8),
    #[error("bad length: {got} bytes, expected {expected}")]
    BadLength { got: usize, expected: usize },
    #[error("unknown message type {0}")]
    UnknownType(u8),
    #[error("payload of {0} bytes does not fit a datagram")]
    OversizedPayload(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum MsgType {
    ControlCommand = 1,
    UavOdometry = 2,
    ObstacleOdometry = 3,
    CommandEcho = 4,
    Heartbeat = 5,
}

impl MsgType {
    pub const ALL: [MsgType; 5] = [
        MsgType::ControlCommand,
        MsgType::UavOdometry,
        MsgType::ObstacleOdometry,
        MsgType::CommandEcho,
        MsgType::Heartbeat,
    ];

    pub fn from_u8(b: u8) -> Result<Self, WireError> {
        Self::ALL
            .into_iter()
            .find(|t| *t as u8 == b)
            .ok_or(WireError::UnknownType(b))
    }

    pub fn payload_len(self) -> usize {
        match self {
            Self::ControlCommand => 24,
            Self::UavOdometry => 64,
            Self::ObstacleOdometry => 48,
            Self::CommandEcho => 32,
            Self::Heartbeat => 0,
        }
    }
}

/// Vehicle odometry as carried on the wire; the stamp lives in the header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UavOdom {
    pub p: Vec3,
    pub v: Vec3,
    pub phi: f64,
    pub theta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Message {
    ControlCommand(ControlInput),
    UavOdometry(UavOdom),
    ObstacleOdometry {
        p: Vec3,
        v: Vec3,
    },
    /// `echo_of_us` is the original command's `sent_at_us`, bit for bit.
    CommandEcho {
        input: ControlInput,
        echo_of_us: u64,
    },
    Heartbeat,
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Self::ControlCommand(_) => MsgType::ControlCommand,
            Self::UavOdometry(_) => MsgType::UavOdometry,
            Self::ObstacleOdometry { .. } => MsgType::ObstacleOdometry,
            Self::CommandEcho { .. } => MsgType::CommandEcho,
            Self::Heartbeat => MsgType::Heartbeat,
        }
    }

    fn write_payload(&self, out: &mut Vec<u8>) {
        let mut put = |x: f64| out.extend_from_slice(&x.to_le_bytes());
        match self {
            Self::ControlCommand(u) => [u.thrust, u.phi_d, u.theta_d].into_iter().for_each(&mut put),
            Self::UavOdometry(o) => [o.p.x, o.p.y, o.p.z, o.v.x, o.v.y, o.v.z, o.phi, o.theta]
                .into_iter()
                .for_each(&mut put),
            Self::ObstacleOdometry { p, v } => [p.x, p.y, p.z, v.x, v.y, v.z].into_iter().for_each(&mut put),
            Self::CommandEcho { input, echo_of_us } => {
                [input.thrust, input.phi_d, input.theta_d]
                    .into_iter()
                    .for_each(&mut put);
                out.extend_from_slice(&echo_of_us.to_le_bytes());
            }
            Self::Heartbeat => {}
        }
    }

    fn read_payload(ty: MsgType, b: &[u8]) -> Self {
        let f = |i: usize| f64::from_le_bytes(b[8 * i..8 * i + 8].try_into().unwrap());
        match ty {
            MsgType::ControlCommand => Self::ControlCommand(ControlInput::new(f(0), f(1), f(2))),
            MsgType::UavOdometry => Self::UavOdometry(UavOdom {
                p: Vec3::new(f(0), f(1), f(2)),
                v: Vec3::new(f(3), f(4), f(5)),
                phi: f(6),
                theta: f(7),
            }),
            MsgType::ObstacleOdometry => Self::ObstacleOdometry {
                p: Vec3::new(f(0), f(1), f(2)),
                v: Vec3::new(f(3), f(4), f(5)),
            },
            MsgType::CommandEcho => Self::CommandEcho {
                input: ControlInput::new(f(0), f(1), f(2)),
                echo_of_us: u64::from_le_bytes(b[24..32].try_into().unwrap()),
            },
            MsgType::Heartbeat => Self::Heartbeat,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Datagram {
    pub seq: u32,
    pub sent_at_us: u64,
    pub message: Message,
}

pub fn encode(message: &Message, seq: u32, sent_at_us: u64) -> Result<Vec<u8>, WireError> {
    let mut payload = Vec::with_capacity(message.msg_type().payload_len());
    message.write_payload(&mut payload);
    encode_raw(message.msg_type() as u8, seq, sent_at_us, &payload)
}

/// Frames an arbitrary payload; `encode` is the schema-checked entry point.
pub fn encode_raw(msg_type: u8, seq: u32, sent_at_us: u64, payload: &[u8]) -> Result<Vec<u8>, WireError> {
    if payload.len() > MAX_DATAGRAM - HEADER_LEN {
        return Err(WireError::OversizedPayload(payload.len()));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(msg_type);
    out.extend_from_slice(&seq.to_le_bytes());
    out.extend_from_slice(&sent_at_us.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u16).to_le_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Datagram, WireError> {
    if bytes.len() < HEADER_LEN {
        return Err(WireError::BadLength {
            got: bytes.len(),
            expected: HEADER_LEN,
        });
    }
    if bytes[..4] != MAGIC {
        return Err(WireError::BadMagic);
    }
    if bytes[4] != VERSION {
        return Err(WireError::BadVersion(bytes[4]));
    }
    let ty = MsgType::from_u8(bytes[5])?;
    let seq = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let sent_at_us = u64::from_le_bytes(bytes[10..18].try_into().unwrap());
    let declared = u16::from_le_bytes(bytes[18..20].try_into().unwrap()) as usize;
    let expected = ty.payload_len();
    if declared != expected || bytes.len() != HEADER_LEN + expected {
        return Err(WireError::BadLength {
            got: bytes.len(),
            expected: HEADER_LEN + expected,
        });
    }
    Ok(Datagram {
        seq,
        sent_at_us,
        message: Message::read_payload(ty, &bytes[HEADER_LEN..]),
    })
}
