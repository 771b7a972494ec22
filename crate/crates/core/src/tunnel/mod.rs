//! UDP tunnel between the edge controller and the vehicle.
//!
//! [`wire`] fixes the datagram layout. [`endpoint`] runs a socket with a
//! read thread and a write thread; the server side sends commands and turns
//! returning echoes into a loop-delay estimate, the client side publishes what
//! it receives and echoes every command with its original stamp.

pub mod endpoint;
pub mod wire;

pub use endpoint::{run_client, run_server, Endpoint, EndpointConfig, Received, Role, TunnelError, TunnelStats};
pub use wire::{decode, encode, Datagram, Message, MsgType, UavOdom, WireError};
