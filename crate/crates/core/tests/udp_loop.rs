//! Edge and onboard halves of the loop in two threads over loopback UDP.

use std::net::{SocketAddr, UdpSocket};
use std::thread;

use paced_core::harness::udp::{run_edge, run_onboard};
use paced_core::harness::{ScenarioConfig, ScenarioKind};

fn free_addr() -> SocketAddr {
    UdpSocket::bind("127.0.0.1:0").unwrap().local_addr().unwrap()
}

#[test]
fn edge_and_onboard_close_the_loop_over_udp() {
    let cfg = ScenarioConfig {
        kind: ScenarioKind::Track,
        duration_s: 4.0,
        ..ScenarioConfig::default()
    };
    let (edge_addr, onboard_addr) = (free_addr(), free_addr());
    let onboard_cfg = cfg.clone();
    let onboard = thread::spawn(move || run_onboard(&onboard_cfg, onboard_addr, edge_addr));
    let run = run_edge(&cfg, edge_addr, onboard_addr).unwrap();
    let summary = onboard.join().unwrap().unwrap();

    assert!(summary.commands >= 90, "{summary:?}");
    assert!(summary.odometry_sent >= 4 * 120);
    let commanded: Vec<_> = run.rows.iter().filter(|r| r.command.is_some()).collect();
    assert!(commanded.len() >= 100, "{}", commanded.len());
    // Loopback round trips are well under a control period.
    let tau = commanded.last().unwrap().tau_hat;
    assert!(tau > 0.0 && tau < 0.02, "{tau}");
    let worst = commanded
        .iter()
        .filter(|r| r.t > 1.0)
        .map(|r| r.tracking_error().norm())
        .fold(0.0, f64::max);
    assert!(worst < 0.05, "{worst}");
    assert!(!run.predictions.is_empty());
}
