//! Closed-loop delay estimation from command echoes.
//!
//! Every echo carries the timestamp of the command it returns; the difference
//! to the arrival time is one sample of the full loop delay.

use std::collections::VecDeque;

use thiserror::Error;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum DelayError {
    #[error("echo received at {received_at} before it was sent at {sent_at}")]
    NegativeDelay { sent_at: f64, received_at: f64 },
    #[error("window must hold at least one sample")]
    EmptyWindow,
}

/// Running mean of loop-delay samples, `tau(k+1) = tau(k) + (tau_new - tau(k)) / (k + 1)`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DelayEstimate {
    pub tau_hat: f64,
    /// Accepted samples.
    pub k: u64,
    pub last_sample: f64,
    /// Samples rejected because of a negative delay (clock skew).
    pub rejected: u64,
}

impl DelayEstimate {
    pub fn new() -> Self {
        Self::default()
    }

    /// Folds one echo into the estimate. A negative sample is rejected: the
    /// estimate is left as is and only the rejection counter moves.
    pub fn record_sample(&mut self, sent_at: f64, received_at: f64) -> Result<f64, DelayError> {
        let sample = checked_sample(sent_at, received_at).inspect_err(|_| self.rejected += 1)?;
        self.tau_hat += (sample - self.tau_hat) / (self.k + 1) as f64;
        self.k += 1;
        self.last_sample = sample;
        Ok(self.tau_hat)
    }

    pub fn current_estimate(&self) -> f64 {
        self.tau_hat
    }
}

fn checked_sample(sent_at: f64, received_at: f64) -> Result<f64, DelayError> {
    if received_at < sent_at || !(received_at - sent_at).is_finite() {
        return Err(DelayError::NegativeDelay { sent_at, received_at });
    }
    Ok(received_at - sent_at)
}

/// Sliding-window mean over the most recent `window` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDelayEstimate {
    window: usize,
    samples: VecDeque<f64>,
    sum: f64,
    pub k: u64,
    pub rejected: u64,
}

impl WindowedDelayEstimate {
    pub fn new(window: usize) -> Result<Self, DelayError> {
        if window == 0 {
            return Err(DelayError::EmptyWindow);
        }
        Ok(Self {
            window,
            samples: VecDeque::with_capacity(window),
            sum: 0.0,
            k: 0,
            rejected: 0,
        })
    }

    pub fn record_sample(&mut self, sent_at: f64, received_at: f64) -> Result<f64, DelayError> {
        let sample = checked_sample(sent_at, received_at).inspect_err(|_| self.rejected += 1)?;
        if self.samples.len() == self.window {
            self.samples.pop_front();
        }
        self.samples.push_back(sample);
        // Re-summing keeps the window mean free of accumulated cancellation error.
        self.sum = self.samples.iter().sum();
        self.k += 1;
        Ok(self.current_estimate())
    }

    pub fn current_estimate(&self) -> f64 {
        if self.samples.is_empty() {
            0.0
        } else {
            self.sum / self.samples.len() as f64
        }
    }

    pub fn window(&self) -> usize {
        self.window
    }
}

/// Estimator selected by configuration: cumulative mean by default, sliding
/// window when a window length is given.
#[derive(Debug, Clone, PartialEq)]
pub enum DelayEstimator {
    Cumulative(DelayEstimate),
    Windowed(WindowedDelayEstimate),
}

impl DelayEstimator {
    pub fn new(window: Option<usize>) -> Result<Self, DelayError> {
        Ok(match window {
            None => Self::Cumulative(DelayEstimate::new()),
            Some(w) => Self::Windowed(WindowedDelayEstimate::new(w)?),
        })
    }

    pub fn record_sample(&mut self, sent_at: f64, received_at: f64) -> Result<f64, DelayError> {
        match self {
            Self::Cumulative(e) => e.record_sample(sent_at, received_at),
            Self::Windowed(e) => e.record_sample(sent_at, received_at),
        }
    }

    pub fn current_estimate(&self) -> f64 {
        match self {
            Self::Cumulative(e) => e.current_estimate(),
            Self::Windowed(e) => e.current_estimate(),
        }
    }

    pub fn samples(&self) -> u64 {
        match self {
            Self::Cumulative(e) => e.k,
            Self::Windowed(e) => e.k,
        }
    }

    pub fn rejected(&self) -> u64 {
        match self {
            Self::Cumulative(e) => e.rejected,
            Self::Windowed(e) => e.rejected,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feed(samples: &[f64]) -> DelayEstimate {
        let mut est = DelayEstimate::new();
        for &s in samples {
            est.record_sample(0.0, s).unwrap();
        }
        est
    }

    #[test]
    fn fresh_estimate_is_zero() {
        assert_eq!(DelayEstimate::new().current_estimate(), 0.0);
        assert_eq!(DelayEstimator::new(None).unwrap().current_estimate(), 0.0);
    }

    #[test]
    fn first_sample_is_taken_verbatim() {
        let mut est = DelayEstimate::new();
        est.record_sample(0.0, 0.067).unwrap();
        assert_eq!(est.tau_hat, 0.067);
        assert_eq!(est.k, 1);
        assert_eq!(feed(&[0.05]).current_estimate(), 0.05);
    }

    #[test]
    fn small_means() {
        assert!((feed(&[0.1, 0.2]).tau_hat - 0.15).abs() < 1e-15);
        assert!((feed(&[0.06, 0.07, 0.08]).current_estimate() - 0.07).abs() < 1e-15);
    }

    #[test]
    fn uniform_samples_match_arithmetic_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<f64> = (0..10_000).map(|_| rng.random_range(0.05..0.09)).collect();
        let oracle = samples.iter().sum::<f64>() / samples.len() as f64;
        let est = feed(&samples);
        assert!((est.tau_hat - oracle).abs() < 1e-12);
        assert!((est.tau_hat - 0.070).abs() < 0.001);
    }

    #[test]
    fn negative_sample_is_rejected_without_side_effects() {
        let mut est = feed(&[0.05, 0.07]);
        let before = est;
        let err = est.record_sample(2.0, 1.9).unwrap_err();
        assert!(matches!(err, DelayError::NegativeDelay { .. }));
        assert_eq!(
            (est.tau_hat, est.k, est.last_sample),
            (before.tau_hat, before.k, before.last_sample)
        );
        assert_eq!(est.rejected, 1);
    }

    #[test]
    fn window_examples() {
        let mut w = WindowedDelayEstimate::new(1).unwrap();
        w.record_sample(0.0, 0.1).unwrap();
        w.record_sample(0.0, 0.3).unwrap();
        assert_eq!(w.current_estimate(), 0.3);

        let mut w = WindowedDelayEstimate::new(2).unwrap();
        for s in [0.1, 0.2, 0.4] {
            w.record_sample(0.0, s).unwrap();
        }
        assert!((w.current_estimate() - 0.3).abs() < 1e-15);
        assert!(WindowedDelayEstimate::new(0).is_err());
    }

    #[test]
    fn window_tracks_a_drifting_delay() {
        // Delay ramps 50 -> 90 ms over one minute of 30 Hz echoes.
        let n = 1800;
        let ramp: Vec<f64> = (0..n).map(|i| 0.05 + 0.04 * i as f64 / (n - 1) as f64).collect();
        let mut windowed = WindowedDelayEstimate::new(64).unwrap();
        let mut cumulative = DelayEstimate::new();
        let mut worst_window = 0.0f64;
        let mut final_cumulative_lag = 0.0;
        for (i, &s) in ramp.iter().enumerate() {
            windowed.record_sample(0.0, s).unwrap();
            cumulative.record_sample(0.0, s).unwrap();
            let lo = i.saturating_sub(63);
            let oracle = ramp[lo..=i].iter().sum::<f64>() / (i - lo + 1) as f64;
            worst_window = worst_window.max((windowed.current_estimate() - oracle).abs());
            final_cumulative_lag = (cumulative.current_estimate() - s).abs();
        }
        let final_window_lag = (windowed.current_estimate() - ramp[n - 1]).abs();
        assert!(worst_window < 1e-12);
        assert!(final_window_lag < 0.01);
        assert!(final_cumulative_lag > final_window_lag);
    }

    proptest! {
        #[test]
        fn recursion_equals_arithmetic_mean(samples in prop::collection::vec(0.0f64..1.0, 1..400)) {
            let est = feed(&samples);
            let mean = samples.iter().sum::<f64>() / samples.len() as f64;
            prop_assert!((est.tau_hat - mean).abs() < 1e-12);
            let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            prop_assert!(est.tau_hat >= lo - 1e-15 && est.tau_hat <= hi + 1e-15);
        }

        #[test]
        fn order_does_not_matter(mut samples in prop::collection::vec(0.0f64..1.0, 1..100)) {
            let a = feed(&samples).tau_hat;
            samples.reverse();
            let b = feed(&samples).tau_hat;
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}
