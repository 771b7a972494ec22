use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use crossbeam_channel::{Receiver, RecvTimeoutError, Sender};
use thiserror::Error;

use super::wire::{decode, encode, Datagram, Message, MsgType};
use crate::delay::DelayEstimate;

#[derive(Debug, Error)]
pub enum TunnelError {
    #[error("socket: {0}")]
    Socket(#[from] std::io::Error),
    #[error("endpoint is shut down")]
    Closed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Edge side: sends commands, measures loop delay from echoes.
    Server,
    /// Vehicle side: publishes what it receives and echoes commands.
    Client,
}

#[derive(Debug, Clone)]
pub struct EndpointConfig {
    pub role: Role,
    pub bind: SocketAddr,
    pub peer: SocketAddr,
    /// Re-send every received command as a `CommandEcho`.
    pub echo: bool,
    pub heartbeat_interval: Duration,
    /// Silence longer than this marks the link as down.
    pub link_timeout: Duration,
}

impl EndpointConfig {
    pub fn new(role: Role, bind: SocketAddr, peer: SocketAddr) -> Self {
        Self {
            role,
            bind,
            peer,
            echo: role == Role::Client,
            heartbeat_interval: Duration::from_secs(1),
            link_timeout: Duration::from_millis(500),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Received {
    pub datagram: Datagram,
    pub received_at_us: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TunnelStats {
    pub sent: u64,
    pub received: u64,
    pub dropped_stale: u64,
    pub decode_errors: u64,
    pub echoes_sent: u64,
    pub send_errors: u64,
}

/// Microseconds on a monotone clock anchored to the Unix epoch at start-up.
#[derive(Debug, Clone, Copy)]
struct Clock {
    start: Instant,
    start_us: u64,
}

impl Clock {
    fn new() -> Self {
        let start_us = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_micros() as u64)
            .unwrap_or(0);
        Self {
            start: Instant::now(),
            start_us,
        }
    }

    fn now_us(&self) -> u64 {
        self.start_us + self.start.elapsed().as_micros() as u64
    }
}

#[derive(Debug, Default)]
struct Counters {
    sent: AtomicU64,
    received: AtomicU64,
    dropped_stale: AtomicU64,
    decode_errors: AtomicU64,
    echoes_sent: AtomicU64,
    send_errors: AtomicU64,
}

struct Shared {
    clock: Clock,
    shutdown: AtomicBool,
    counters: Counters,
    last_rx_us: AtomicU64,
    estimator: Mutex<DelayEstimate>,
}

/// A running tunnel endpoint: one socket-read and one socket-write thread,
/// connected to the application only through queues.
pub struct Endpoint {
    outbound: Sender<Message>,
    inbound: Receiver<Received>,
    shared: Arc<Shared>,
    threads: Vec<JoinHandle<()>>,
    local_addr: SocketAddr,
    link_timeout: Duration,
}

pub fn run_server(cfg: EndpointConfig) -> Result<Endpoint, TunnelError> {
    Endpoint::spawn(EndpointConfig {
        role: Role::Server,
        ..cfg
    })
}

pub fn run_client(cfg: EndpointConfig) -> Result<Endpoint, TunnelError> {
    Endpoint::spawn(EndpointConfig {
        role: Role::Client,
        ..cfg
    })
}

const POLL: Duration = Duration::from_millis(20);
const SEND_RETRIES: u32 = 3;

impl Endpoint {
    pub fn spawn(cfg: EndpointConfig) -> Result<Self, TunnelError> {
        let socket = UdpSocket::bind(cfg.bind)?;
        socket.set_read_timeout(Some(POLL))?;
        let local_addr = socket.local_addr()?;
        let shared = Arc::new(Shared {
            clock: Clock::new(),
            shutdown: AtomicBool::new(false),
            counters: Counters::default(),
            last_rx_us: AtomicU64::new(0),
            estimator: Mutex::new(DelayEstimate::new()),
        });
        let (out_tx, out_rx) = crossbeam_channel::unbounded::<Message>();
        let (in_tx, in_rx) = crossbeam_channel::unbounded::<Received>();

        let reader = {
            let socket = socket.try_clone()?;
            let shared = Arc::clone(&shared);
            let echo_tx = cfg.echo.then(|| out_tx.clone());
            thread::Builder::new()
                .name("tunnel-read".into())
                .spawn(move || read_loop(socket, shared, in_tx, echo_tx))?
        };
        let writer = {
            let shared = Arc::clone(&shared);
            let (peer, hb) = (cfg.peer, cfg.heartbeat_interval);
            thread::Builder::new()
                .name("tunnel-write".into())
                .spawn(move || write_loop(socket, peer, hb, shared, out_rx))?
        };
        Ok(Self {
            outbound: out_tx,
            inbound: in_rx,
            shared,
            threads: vec![reader, writer],
            local_addr,
            link_timeout: cfg.link_timeout,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn send(&self, message: Message) -> Result<(), TunnelError> {
        if self.shared.shutdown.load(Ordering::Acquire) {
            return Err(TunnelError::Closed);
        }
        self.outbound.send(message).map_err(|_| TunnelError::Closed)
    }

    pub fn try_recv(&self) -> Option<Received> {
        self.inbound.try_recv().ok()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<Received> {
        self.inbound.recv_timeout(timeout).ok()
    }

    pub fn inbound(&self) -> &Receiver<Received> {
        &self.inbound
    }

    pub fn now_us(&self) -> u64 {
        self.shared.clock.now_us()
    }

    pub fn stats(&self) -> TunnelStats {
        let c = &self.shared.counters;
        TunnelStats {
            sent: c.sent.load(Ordering::Relaxed),
            received: c.received.load(Ordering::Relaxed),
            dropped_stale: c.dropped_stale.load(Ordering::Relaxed),
            decode_errors: c.decode_errors.load(Ordering::Relaxed),
            echoes_sent: c.echoes_sent.load(Ordering::Relaxed),
            send_errors: c.send_errors.load(Ordering::Relaxed),
        }
    }

    /// Running mean of echo round trips, seconds; zero before the first echo.
    pub fn rtt_estimate(&self) -> f64 {
        self.shared.estimator.lock().unwrap().current_estimate()
    }

    pub fn rtt_samples(&self) -> u64 {
        self.shared.estimator.lock().unwrap().k
    }

    /// `false` once nothing has arrived for longer than the link timeout.
    pub fn link_up(&self) -> bool {
        let last = self.shared.last_rx_us.load(Ordering::Acquire);
        last != 0 && self.now_us().saturating_sub(last) <= self.link_timeout.as_micros() as u64
    }

    /// Signals both threads and waits for them to finish.
    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.shared.shutdown.store(true, Ordering::Release);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

impl Drop for Endpoint {
    fn drop(&mut self) {
        self.stop();
    }
}

fn read_loop(socket: UdpSocket, shared: Arc<Shared>, inbound: Sender<Received>, echo: Option<Sender<Message>>) {
    let mut buf = [0u8; super::wire::MAX_DATAGRAM + 1];
    let mut latest = [0u64; MsgType::ALL.len()];
    let c = &shared.counters;
    while !shared.shutdown.load(Ordering::Acquire) {
        let n = match socket.recv_from(&mut buf) {
            Ok((n, _)) => n,
            Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => continue,
            // ICMP port-unreachable from a peer that is not up yet surfaces here.
            Err(_) => continue,
        };
        let now = shared.clock.now_us();
        let d = match decode(&buf[..n]) {
            Ok(d) => d,
            Err(_) => {
                c.decode_errors.fetch_add(1, Ordering::Relaxed);
                continue;
            }
        };
        c.received.fetch_add(1, Ordering::Relaxed);
        shared.last_rx_us.store(now, Ordering::Release);

        if let (Message::ControlCommand(input), Some(tx)) = (d.message, &echo) {
            let _ = tx.send(Message::CommandEcho {
                input,
                echo_of_us: d.sent_at_us,
            });
            c.echoes_sent.fetch_add(1, Ordering::Relaxed);
        }
        if let Message::CommandEcho { echo_of_us, .. } = d.message {
            let sent = echo_of_us as f64 * 1e-6;
            let _ = shared.estimator.lock().unwrap().record_sample(sent, now as f64 * 1e-6);
        }
        if d.message == Message::Heartbeat {
            continue;
        }
        let slot = &mut latest[d.message.msg_type() as usize - 1];
        if d.sent_at_us <= *slot {
            c.dropped_stale.fetch_add(1, Ordering::Relaxed);
            continue;
        }
        *slot = d.sent_at_us;
        if inbound
            .send(Received {
                datagram: d,
                received_at_us: now,
            })
            .is_err()
        {
            break;
        }
    }
}

fn write_loop(
    socket: UdpSocket,
    peer: SocketAddr,
    heartbeat: Duration,
    shared: Arc<Shared>,
    outbound: Receiver<Message>,
) {
    let mut seq = [0u32; MsgType::ALL.len()];
    // Stamps are kept strictly increasing per type so the receiver's
    // staleness filter never drops two messages sent within one microsecond.
    let mut last_stamp = [0u64; MsgType::ALL.len()];
    let mut last_send = Instant::now();
    while !shared.shutdown.load(Ordering::Acquire) {
        let message = match outbound.recv_timeout(POLL.min(heartbeat)) {
            Ok(m) => m,
            Err(RecvTimeoutError::Timeout) if last_send.elapsed() >= heartbeat => Message::Heartbeat,
            Err(RecvTimeoutError::Timeout) => continue,
            Err(RecvTimeoutError::Disconnected) => break,
        };
        let i = message.msg_type() as usize - 1;
        let stamp = shared.clock.now_us().max(last_stamp[i] + 1);
        last_stamp[i] = stamp;
        let bytes = encode(&message, seq[i], stamp).expect("schema messages always fit");
        seq[i] = seq[i].wrapping_add(1);
        if send_with_backoff(&socket, &bytes, peer) {
            shared.counters.sent.fetch_add(1, Ordering::Relaxed);
        } else {
            shared.counters.send_errors.fetch_add(1, Ordering::Relaxed);
        }
        last_send = Instant::now();
    }
}

fn send_with_backoff(socket: &UdpSocket, bytes: &[u8], peer: SocketAddr) -> bool {
    let mut wait = Duration::from_millis(5);
    for attempt in 0..SEND_RETRIES {
        if socket.send_to(bytes, peer).is_ok() {
            return true;
        }
        if attempt + 1 < SEND_RETRIES {
            thread::sleep(wait);
            wait *= 2;
        }
    }
    false
}
