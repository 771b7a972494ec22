//! Per-tick CSV log, prediction records, and the tidy plotting export.
//!
//! Floats are written in Rust's shortest round-trip form, so a log read
//! back reproduces the run exactly and equal runs give equal bytes.

use std::io::{Read, Write};
use std::path::Path;

use super::HarnessError;
use crate::model::{ControlInput, UavState, Vec3};

pub const LOG_COLUMNS: [&str; 25] = [
    "t",
    "px",
    "py",
    "pz",
    "vx",
    "vy",
    "vz",
    "phi",
    "theta",
    "refx",
    "refy",
    "refz",
    "predx",
    "predy",
    "predz",
    "F",
    "phid",
    "thetad",
    "tau_hat",
    "obs_x",
    "obs_y",
    "obs_z",
    "obs_dist",
    "solver_iters",
    "solver_converged",
];

pub const PREDICTION_COLUMNS: [&str; 8] = ["t", "target_t", "predx", "predy", "predz", "actx", "acty", "actz"];

/// One control tick. Optional fields are empty before the first
/// observation arrives and while no obstacle is airborne.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub t: f64,
    /// Vehicle state at `t`.
    pub state: UavState,
    pub reference: Vec3,
    /// Position handed to the controller as its initial state.
    pub pred: Option<Vec3>,
    pub command: Option<ControlInput>,
    pub tau_hat: f64,
    pub obstacle: Option<Vec3>,
    pub obstacle_distance: Option<f64>,
    pub solver_iterations: Option<usize>,
    pub solver_converged: Option<bool>,
}

impl LogRow {
    pub fn tracking_error(&self) -> Vec3 {
        self.state.p - self.reference
    }

    fn to_record(self) -> Vec<String> {
        let f = |x: f64| x.to_string();
        let opt = |x: Option<f64>| x.map(f).unwrap_or_default();
        let s = &self.state;
        let mut out = vec![
            f(self.t),
            f(s.p.x),
            f(s.p.y),
            f(s.p.z),
            f(s.v.x),
            f(s.v.y),
            f(s.v.z),
            f(s.phi),
            f(s.theta),
            f(self.reference.x),
            f(self.reference.y),
            f(self.reference.z),
        ];
        out.extend([0, 1, 2].map(|i| opt(self.pred.map(|p| p[i]))));
        out.push(opt(self.command.map(|u| u.thrust)));
        out.push(opt(self.command.map(|u| u.phi_d)));
        out.push(opt(self.command.map(|u| u.theta_d)));
        out.push(f(self.tau_hat));
        out.extend([0, 1, 2].map(|i| opt(self.obstacle.map(|p| p[i]))));
        out.push(opt(self.obstacle_distance));
        out.push(self.solver_iterations.map(|n| n.to_string()).unwrap_or_default());
        out.push(
            self.solver_converged
                .map(|c| u8::from(c).to_string())
                .unwrap_or_default(),
        );
        out
    }

    fn from_record(r: &csv::StringRecord, line: u64) -> Result<Self, HarnessError> {
        if r.len() != LOG_COLUMNS.len() {
            return Err(HarnessError::Log(format!(
                "line {line}: {} fields, expected 25",
                r.len()
            )));
        }
        let field = |i: usize| -> Result<Option<f64>, HarnessError> {
            let s = r[i].trim();
            if s.is_empty() {
                return Ok(None);
            }
            s.parse()
                .map(Some)
                .map_err(|_| HarnessError::Log(format!("line {line}: `{}` = `{s}`", LOG_COLUMNS[i])))
        };
        let req = |i: usize| {
            field(i)?.ok_or_else(|| HarnessError::Log(format!("line {line}: `{}` is empty", LOG_COLUMNS[i])))
        };
        let v3 = |i: usize| -> Result<Option<Vec3>, HarnessError> {
            Ok(match (field(i)?, field(i + 1)?, field(i + 2)?) {
                (Some(x), Some(y), Some(z)) => Some(Vec3::new(x, y, z)),
                _ => None,
            })
        };
        let t = req(0)?;
        Ok(Self {
            t,
            state: UavState {
                p: Vec3::new(req(1)?, req(2)?, req(3)?),
                v: Vec3::new(req(4)?, req(5)?, req(6)?),
                phi: req(7)?,
                theta: req(8)?,
                t,
            },
            reference: Vec3::new(req(9)?, req(10)?, req(11)?),
            pred: v3(12)?,
            command: v3(15)?.map(|u| ControlInput::new(u.x, u.y, u.z)),
            tau_hat: req(18)?,
            obstacle: v3(19)?,
            obstacle_distance: field(22)?,
            solver_iterations: field(23)?.map(|n| n as usize),
            solver_converged: field(24)?.map(|c| c != 0.0),
        })
    }
}

/// The controller's state prediction paired with the true state at the
/// time it targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionRecord {
    /// Control tick that made the prediction.
    pub t: f64,
    pub target_t: f64,
    pub predicted: Vec3,
    pub actual: Vec3,
}

impl PredictionRecord {
    pub fn error(&self) -> Vec3 {
        self.predicted - self.actual
    }
}

fn csv_err(e: csv::Error) -> HarnessError {
    HarnessError::Log(e.to_string())
}

pub fn write_log<W: Write>(out: W, rows: &[LogRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_COLUMNS).map_err(csv_err)?;
    for r in rows {
        w.write_record(r.to_record()).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::Log(e.to_string()))
}

pub fn read_log<R: Read>(input: R) -> Result<Vec<LogRow>, HarnessError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.iter().ne(LOG_COLUMNS) {
        return Err(HarnessError::Log(
            "log header does not match the expected columns".into(),
        ));
    }
    rd.records()
        .enumerate()
        .map(|(i, r)| LogRow::from_record(&r.map_err(csv_err)?, i as u64 + 2))
        .collect()
}

pub fn write_predictions<W: Write>(out: W, records: &[PredictionRecord]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(PREDICTION_COLUMNS).map_err(csv_err)?;
    for r in records {
        let vals = [
            r.t,
            r.target_t,
            r.predicted.x,
            r.predicted.y,
            r.predicted.z,
            r.actual.x,
            r.actual.y,
            r.actual.z,
        ];
        w.write_record(vals.map(|x| x.to_string())).map_err(csv_err)?;
    }
    w.flush().map_err(|e| HarnessError::Log(e.to_string()))
}

pub fn read_predictions<R: Read>(input: R) -> Result<Vec<PredictionRecord>, HarnessError> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(csv_err)?.clone();
    if header.iter().ne(PREDICTION_COLUMNS) {
        return Err(HarnessError::Log(
            "prediction header does not match the expected columns".into(),
        ));
    }
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let v: Vec<f64> = rec
            .iter()
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| HarnessError::Log(format!("predictions line {}: bad number", i + 2)))?;
        if v.len() != PREDICTION_COLUMNS.len() {
            return Err(HarnessError::Log(format!(
                "predictions line {}: wrong field count",
                i + 2
            )));
        }
        out.push(PredictionRecord {
            t: v[0],
            target_t: v[1],
            predicted: Vec3::new(v[2], v[3], v[4]),
            actual: Vec3::new(v[5], v[6], v[7]),
        });
    }
    Ok(out)
}

pub fn write_log_file(path: &Path, rows: &[LogRow]) -> Result<(), HarnessError> {
    write_log(create(path)?, rows)
}

pub fn read_log_file(path: &Path) -> Result<Vec<LogRow>, HarnessError> {
    read_log(open(path)?)
}

pub fn write_predictions_file(path: &Path, records: &[PredictionRecord]) -> Result<(), HarnessError> {
    write_predictions(create(path)?, records)
}

pub fn read_predictions_file(path: &Path) -> Result<Vec<PredictionRecord>, HarnessError> {
    read_predictions(open(path)?)
}

fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>, HarnessError> {
    std::fs::File::create(path)
        .map(std::io::BufWriter::new)
        .map_err(|e| HarnessError::Log(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<std::fs::File, HarnessError> {
    std::fs::File::open(path).map_err(|e| HarnessError::Log(format!("{}: {e}", path.display())))
}

/// Long-format `t,series,value` rows: position, reference, prediction,
/// tracking error, inputs, delay estimate and obstacle distance.
pub fn write_plotdata<W: Write>(out: W, rows: &[LogRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "series", "value"]).map_err(csv_err)?;
    for r in rows {
        let e = r.tracking_error();
        let mut series: Vec<(&str, f64)> = vec![
            ("px", r.state.p.x),
            ("py", r.state.p.y),
            ("pz", r.state.p.z),
            ("refx", r.reference.x),
            ("refy", r.reference.y),
            ("refz", r.reference.z),
            ("err_x", e.x),
            ("err_y", e.y),
            ("err_z", e.z),
            ("err_norm", e.norm()),
            ("tau_hat", r.tau_hat),
        ];
        if let Some(p) = r.pred {
            series.extend([("predx", p.x), ("predy", p.y), ("predz", p.z)]);
        }
        if let Some(u) = r.command {
            series.extend([("F", u.thrust), ("phid", u.phi_d), ("thetad", u.theta_d)]);
        }
        if let Some(d) = r.obstacle_distance {
            series.push(("obs_dist", d));
        }
        let t = r.t.to_string();
        for (name, v) in series {
            w.write_record([t.as_str(), name, &v.to_string()]).map_err(csv_err)?;
        }
    }
    w.flush().map_err(|e| HarnessError::Log(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64) -> LogRow {
        LogRow {
            t,
            state: UavState {
                p: Vec3::new(0.1, 1.0 / 3.0, 0.8),
                v: Vec3::new(0.05, -1e-17, 0.0),
                phi: 0.01,
                theta: -0.02,
                t,
            },
            reference: Vec3::new(0.0, 1.0, 0.8),
            pred: Some(Vec3::new(0.1, 0.3, 0.8)),
            command: Some(ControlInput::new(9.81, 0.001, -0.002)),
            tau_hat: 0.067,
            obstacle: None,
            obstacle_distance: None,
            solver_iterations: Some(7),
            solver_converged: Some(true),
        }
    }

    #[test]
    fn header_and_round_trip() {
        let mut rows = vec![row(0.0), row(1.0 / 30.0)];
        rows[0].pred = None;
        rows[0].command = None;
        rows[0].solver_iterations = None;
        rows[0].solver_converged = None;
        rows[1].obstacle = Some(Vec3::new(2.0, 1.0, 0.9));
        rows[1].obstacle_distance = Some(1.5);
        let mut buf = Vec::new();
        write_log(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().next().unwrap(), LOG_COLUMNS.join(","));
        assert_eq!(read_log(buf.as_slice()).unwrap(), rows);
    }

    #[test]
    fn predictions_round_trip() {
        let recs = vec![PredictionRecord {
            t: 1.0,
            target_t: 1.067,
            predicted: Vec3::new(0.1, 0.2, 0.3),
            actual: Vec3::new(0.1, 0.2, 0.30000000000000004),
        }];
        let mut buf = Vec::new();
        write_predictions(&mut buf, &recs).unwrap();
        assert_eq!(read_predictions(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn malformed_logs_are_rejected() {
        assert!(read_log("a,b\n1,2\n".as_bytes()).is_err());
        let mut text = LOG_COLUMNS.join(",");
        text.push_str("\n1,2\n");
        assert!(read_log(text.as_bytes()).is_err());
    }

    #[test]
    fn plotdata_is_long_format() {
        let mut buf = Vec::new();
        write_plotdata(&mut buf, &[row(0.5)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,series,value\n"));
        assert!(text.contains("0.5,err_norm,"));
        assert!(text.contains("0.5,F,9.81"));
    }
}
