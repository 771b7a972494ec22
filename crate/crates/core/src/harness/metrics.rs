use std::fmt;

use super::log::{LogRow, PredictionRecord};
use super::HarnessError;

/// Summary of one run over the post-transient window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunMetrics {
    pub rms_x: f64,
    pub rms_y: f64,
    pub rms_z: f64,
    pub rms_euclidean: f64,
    pub est_rms_x: f64,
    pub est_rms_y: f64,
    pub est_rms_z: f64,
    pub est_rms_euclidean: f64,
    /// Closest vehicle-obstacle centre distance; `None` without obstacles.
    pub min_obstacle_distance: Option<f64>,
    pub mean_delay_estimate: f64,
    pub mean_solver_iterations: f64,
    /// Fraction of solves that converged within the iteration cap.
    pub convergence_rate: f64,
    pub samples: usize,
    pub prediction_samples: usize,
    pub solves: usize,
}

pub fn rms(xs: impl IntoIterator<Item = f64>) -> f64 {
    let (sum, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x * x, n + 1));
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

/// Tracking and solver figures come from rows at or after `transient_s`;
/// the obstacle distance covers the whole log.
pub fn compute_metrics(
    rows: &[LogRow],
    predictions: &[PredictionRecord],
    transient_s: f64,
) -> Result<RunMetrics, HarnessError> {
    let window: Vec<&LogRow> = rows.iter().filter(|r| r.t >= transient_s).collect();
    if window.is_empty() {
        return Err(HarnessError::EmptyLog);
    }
    let errs: Vec<_> = window.iter().map(|r| r.tracking_error()).collect();
    let pred: Vec<_> = predictions
        .iter()
        .filter(|p| p.t >= transient_s)
        .map(|p| p.error())
        .collect();
    let solved: Vec<(usize, bool)> = window
        .iter()
        .filter_map(|r| Some((r.solver_iterations?, r.solver_converged?)))
        .collect();
    let mean = |xs: &mut dyn Iterator<Item = f64>| {
        let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
        if n == 0 {
            0.0
        } else {
            s / n as f64
        }
    };
    Ok(RunMetrics {
        rms_x: rms(errs.iter().map(|e| e.x)),
        rms_y: rms(errs.iter().map(|e| e.y)),
        rms_z: rms(errs.iter().map(|e| e.z)),
        rms_euclidean: rms(errs.iter().map(|e| e.norm())),
        est_rms_x: rms(pred.iter().map(|e| e.x)),
        est_rms_y: rms(pred.iter().map(|e| e.y)),
        est_rms_z: rms(pred.iter().map(|e| e.z)),
        est_rms_euclidean: rms(pred.iter().map(|e| e.norm())),
        min_obstacle_distance: rows.iter().filter_map(|r| r.obstacle_distance).reduce(f64::min),
        mean_delay_estimate: mean(&mut window.iter().map(|r| r.tau_hat)),
        mean_solver_iterations: mean(&mut solved.iter().map(|(i, _)| *i as f64)),
        convergence_rate: mean(&mut solved.iter().map(|(_, c)| if *c { 1.0 } else { 0.0 })),
        samples: window.len(),
        prediction_samples: pred.len(),
        solves: solved.len(),
    })
}

impl RunMetrics {
    pub fn fields(&self) -> Vec<(&'static str, String)> {
        let f = |x: f64| x.to_string();
        vec![
            ("rms_x", f(self.rms_x)),
            ("rms_y", f(self.rms_y)),
            ("rms_z", f(self.rms_z)),
            ("rms_euclidean", f(self.rms_euclidean)),
            ("est_rms_x", f(self.est_rms_x)),
            ("est_rms_y", f(self.est_rms_y)),
            ("est_rms_z", f(self.est_rms_z)),
            ("est_rms_euclidean", f(self.est_rms_euclidean)),
            (
                "min_obstacle_distance",
                self.min_obstacle_distance.map(f).unwrap_or_default(),
            ),
            ("mean_delay_estimate", f(self.mean_delay_estimate)),
            ("mean_solver_iterations", f(self.mean_solver_iterations)),
            ("convergence_rate", f(self.convergence_rate)),
            ("samples", self.samples.to_string()),
            ("prediction_samples", self.prediction_samples.to_string()),
            ("solves", self.solves.to_string()),
        ]
    }
}

impl fmt::Display for RunMetrics {
    /// `metric,value` lines.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "metric,value")?;
        for (k, v) in self.fields() {
            writeln!(f, "{k},{v}")?;
        }
        Ok(())
    }
}

/// How tracking recovered after one obstacle pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recovery {
    pub launch_time: f64,
    /// Time of closest approach.
    pub closest_t: f64,
    pub min_distance: f64,
    /// Euclidean tracking RMS over the window before launch.
    pub pre_event_rms: f64,
    /// First tick after closest approach with tracking error below twice
    /// the pre-event RMS.
    pub recovered_at: Option<f64>,
}

impl Recovery {
    pub fn recovery_time(&self) -> Option<f64> {
        self.recovered_at.map(|t| t - self.closest_t)
    }
}

pub fn avoidance_recovery(
    rows: &[LogRow],
    launch_time: f64,
    closest_t: f64,
    min_distance: f64,
    pre_window_s: f64,
) -> Recovery {
    let pre_event_rms = rms(rows
        .iter()
        .filter(|r| r.t >= launch_time - pre_window_s && r.t < launch_time)
        .map(|r| r.tracking_error().norm()));
    let recovered_at = rows
        .iter()
        .find(|r| r.t >= closest_t && r.tracking_error().norm() < 2.0 * pre_event_rms)
        .map(|r| r.t);
    Recovery {
        launch_time,
        closest_t,
        min_distance,
        pre_event_rms,
        recovered_at,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{UavState, Vec3};

    fn row(t: f64, err: Vec3) -> LogRow {
        let reference = Vec3::new(0.0, 1.0, 0.8);
        LogRow {
            t,
            state: UavState::hover_at(reference + err, t),
            reference,
            pred: None,
            command: None,
            tau_hat: 0.067,
            obstacle: None,
            obstacle_distance: None,
            solver_iterations: Some(4),
            solver_converged: Some(t < 5.0),
        }
    }

    #[test]
    fn constant_error() {
        let rows: Vec<_> = (0..100)
            .map(|i| row(i as f64 * 0.1, Vec3::new(0.03, 0.04, 0.0)))
            .collect();
        let m = compute_metrics(&rows, &[], 3.0).unwrap();
        assert!((m.rms_euclidean - 0.05).abs() < 1e-15);
        assert!((m.rms_x - 0.03).abs() < 1e-15);
        assert_eq!(m.samples, 70);
        assert!((m.mean_delay_estimate - 0.067).abs() < 1e-15);
        assert_eq!(m.min_obstacle_distance, None);
    }

    #[test]
    fn two_sample_rms() {
        let rows = [row(0.0, Vec3::new(0.03, 0.0, 0.0)), row(1.0, Vec3::new(0.04, 0.0, 0.0))];
        let m = compute_metrics(&rows, &[], 0.0).unwrap();
        assert!((m.rms_x - (12.5e-4f64).sqrt()).abs() < 1e-15);
        assert!((m.rms_x * 100.0 - 3.5355).abs() < 1e-4);
    }

    #[test]
    fn constant_table_magnitudes_pass_through() {
        // Per-axis errors held at one value: RMS equals that value.
        let (ex, ey, ez) = (0.0213, 0.0477, 0.0231);
        let rows: Vec<_> = (0..50).map(|i| row(i as f64, Vec3::new(ex, -ey, ez))).collect();
        let preds: Vec<_> = (0..50)
            .map(|i| PredictionRecord {
                t: i as f64,
                target_t: i as f64 + 0.067,
                predicted: Vec3::new(0.0069, 0.0, 0.0),
                actual: Vec3::zeros(),
            })
            .collect();
        let m = compute_metrics(&rows, &preds, 0.0).unwrap();
        let sig4 = |a: f64, b: f64| ((a - b) / b).abs() < 5e-5;
        assert!(sig4(m.rms_x, ex) && sig4(m.rms_y, ey) && sig4(m.rms_z, ez));
        assert!(sig4(m.rms_euclidean, (ex * ex + ey * ey + ez * ez).sqrt()));
        assert!(sig4(m.est_rms_euclidean, 0.0069));
    }

    #[test]
    fn solver_stats_and_empty_window() {
        let rows: Vec<_> = (0..10).map(|i| row(i as f64, Vec3::zeros())).collect();
        let m = compute_metrics(&rows, &[], 0.0).unwrap();
        assert_eq!(m.solves, 10);
        assert!((m.convergence_rate - 0.5).abs() < 1e-15);
        assert!(matches!(
            compute_metrics(&rows, &[], 100.0),
            Err(HarnessError::EmptyLog)
        ));
        assert!(matches!(compute_metrics(&[], &[], 0.0), Err(HarnessError::EmptyLog)));
    }

    #[test]
    fn recovery_finds_first_tick_below_twice_baseline() {
        let mut rows: Vec<_> = (0..100)
            .map(|i| row(i as f64 * 0.1, Vec3::new(0.01, 0.0, 0.0)))
            .collect();
        for r in rows.iter_mut().filter(|r| r.t >= 5.0 && r.t < 7.0) {
            r.state.p.x += 0.3;
        }
        let rec = avoidance_recovery(&rows, 4.5, 5.5, 0.45, 3.0);
        assert!((rec.pre_event_rms - 0.01).abs() < 1e-12);
        assert!((rec.recovered_at.unwrap() - 7.0).abs() < 1e-9);
        assert!((rec.recovery_time().unwrap() - 1.5).abs() < 1e-9);
    }
}
