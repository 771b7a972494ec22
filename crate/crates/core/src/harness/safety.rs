//! Onboard link watchdog.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinkState {
    Normal,
    /// Commands are stale; the vehicle hovers in place.
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyConfig {
    pub enabled: bool,
    pub timeout_s: f64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            timeout_s: 0.5,
        }
    }
}

/// Hold when the link is reported down or the newest message is older than
/// the timeout.
pub fn safety_monitor(link_up: bool, last_msg_age: f64, cfg: &SafetyConfig) -> LinkState {
    if cfg.enabled && (!link_up || last_msg_age > cfg.timeout_s) {
        LinkState::Hold
    } else {
        LinkState::Normal
    }
}
