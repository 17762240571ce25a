//! CSV persistence of sensor logs and estimate traces.
//!
//! Every float is written with 17 significant digits, so a log read back is
//! bit-identical to the one written.

use std::path::{Path, PathBuf};

use grfmhe::sim::{ContactSample, EffortSample, EncoderSample, ImuSample, SensorLog, TruthSample, VoIncrement};
use nalgebra::{DVector, Vector2};

use crate::error::{HarnessError, Result};
use crate::trace::{RowStatus, Trace, TraceRow};

pub const IMU: &str = "imu.csv";
pub const ENCODERS: &str = "encoders.csv";
pub const EFFORT: &str = "effort.csv";
pub const CONTACTS: &str = "contacts.csv";
pub const VO: &str = "vo.csv";
pub const TRUTH: &str = "truth.csv";

pub fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn trace_file(name: &str) -> String {
    format!("estimate_{name}.csv")
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
    let err = |source| HarnessError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(header).map_err(err)?;
    for row in rows {
        w.write_record(&row).map_err(err)?;
    }
    w.flush().map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// A CSV table with its header, fields kept as text.
pub struct Table {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn read(path: &Path) -> Result<Self> {
        let err = |source| HarnessError::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut r = csv::Reader::from_path(path).map_err(err)?;
        let header = r.headers().map_err(err)?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()
            .map_err(err)?;
        Ok(Self {
            path: path.to_path_buf(),
            header,
            rows,
        })
    }

    pub fn format_error(&self, reason: impl Into<String>) -> HarnessError {
        HarnessError::Format {
            path: self.path.clone(),
            reason: reason.into(),
        }
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| self.format_error(format!("missing column '{name}'")))
    }

    /// Number of columns whose names start with `prefix` followed by a digit.
    pub fn count_prefixed(&self, prefix: &str) -> usize {
        self.header
            .iter()
            .filter(|h| h.strip_prefix(prefix).is_some_and(|rest| rest.starts_with(|c: char| c.is_ascii_digit())))
            .count()
    }

    pub fn float(&self, row: usize, col: usize) -> Result<f64> {
        let s = &self.rows[row][col];
        s.parse()
            .map_err(|_| self.format_error(format!("row {}: '{s}' is not a number", row + 1)))
    }

    pub fn flag(&self, row: usize, col: usize) -> Result<bool> {
        match self.rows[row][col].as_str() {
            "1" => Ok(true),
            "0" => Ok(false),
            s => Err(self.format_error(format!("row {}: '{s}' is not 0 or 1", row + 1))),
        }
    }

    pub fn floats(&self, row: usize, cols: std::ops::Range<usize>) -> Result<Vec<f64>> {
        cols.map(|c| self.float(row, c)).collect()
    }
}

fn names(prefix: &str, n: usize, suffix: &str) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}{suffix}")).collect()
}

fn flag(b: bool) -> String {
    if b { "1" } else { "0" }.to_string()
}

fn header(parts: &[&[String]]) -> Vec<String> {
    parts.concat()
}

fn s(v: &str) -> Vec<String> {
    vec![v.to_string()]
}

fn truth_header(dof: usize, n_feet: usize) -> Vec<String> {
    let nj = dof - 3;
    let force: Vec<String> = (1..=n_feet).flat_map(|i| [format!("f{i}x"), format!("f{i}z")]).collect();
    header(&[
        &["t", "x", "z", "pitch"].map(String::from),
        &names("a", nj, ""),
        &["vx", "vz", "w"].map(String::from),
        &names("ad", nj, ""),
        &names("c", n_feet, ""),
        &force,
        &["bax", "baz"].map(String::from),
    ])
}

/// Writes the six log files into `dir`.
pub fn write_log(dir: &Path, log: &SensorLog) -> Result<()> {
    create_dir(dir)?;
    let n = log.encoders.first().map_or(0, |e| e.position.len());
    let m = log.contacts.first().map_or(0, |c| c.flags.len());
    write_csv(
        &dir.join(IMU),
        &["t", "ax", "az", "w"].map(String::from),
        log.imu.iter().map(|s| vec![fmt(s.t), fmt(s.accel.x), fmt(s.accel.y), fmt(s.gyro)]),
    )?;
    write_csv(
        &dir.join(ENCODERS),
        &header(&[&s("t"), &names("a", n, ""), &names("ad", n, "")]),
        log.encoders
            .iter()
            .map(|e| std::iter::once(e.t).chain(e.position.iter().copied()).chain(e.velocity.iter().copied()).map(fmt).collect()),
    )?;
    write_csv(
        &dir.join(EFFORT),
        &header(&[&s("t"), &names("u", n, "")]),
        log.efforts
            .iter()
            .map(|e| std::iter::once(e.t).chain(e.torque.iter().copied()).map(fmt).collect()),
    )?;
    write_csv(
        &dir.join(CONTACTS),
        &header(&[&s("t"), &names("c", m, "")]),
        log.contacts
            .iter()
            .map(|c| std::iter::once(fmt(c.t)).chain(c.flags.iter().map(|b| flag(*b))).collect()),
    )?;
    write_csv(
        &dir.join(VO),
        &["ti", "tj", "dx", "dz", "dth"].map(String::from),
        log.vo
            .iter()
            .map(|v| vec![fmt(v.t_i), fmt(v.t_j), fmt(v.translation.x), fmt(v.translation.y), fmt(v.rotation)]),
    )?;
    let dof = log.truth.first().map_or(3, |t| t.q.len());
    let feet = log.truth.first().map_or(0, |t| t.contact.len());
    write_csv(
        &dir.join(TRUTH),
        &truth_header(dof, feet),
        log.truth.iter().map(|t| {
            let mut row: Vec<String> = std::iter::once(t.t).chain(t.q.iter().copied()).chain(t.qdot.iter().copied()).map(fmt).collect();
            row.extend(t.contact.iter().map(|b| flag(*b)));
            row.extend(t.grf.iter().flat_map(|f| [fmt(f.x), fmt(f.y)]));
            row.extend([fmt(t.accel_bias.x), fmt(t.accel_bias.y)]);
            row
        }),
    )
}

fn check_width(t: &Table, width: usize) -> Result<()> {
    if t.header.len() != width {
        return Err(t.format_error(format!("expected {width} columns, found {}", t.header.len())));
    }
    Ok(())
}

/// Reads a log written by [`write_log`]. Gravity is not part of the files.
pub fn read_log(dir: &Path, gravity: f64) -> Result<SensorLog> {
    let imu = Table::read(&dir.join(IMU))?;
    check_width(&imu, 4)?;
    let enc = Table::read(&dir.join(ENCODERS))?;
    let n = enc.count_prefixed("a");
    check_width(&enc, 1 + 2 * n)?;
    let eff = Table::read(&dir.join(EFFORT))?;
    check_width(&eff, 1 + n)?;
    let con = Table::read(&dir.join(CONTACTS))?;
    let m = con.count_prefixed("c");
    check_width(&con, 1 + m)?;
    let vo = Table::read(&dir.join(VO))?;
    check_width(&vo, 5)?;
    let tr = Table::read(&dir.join(TRUTH))?;
    check_width(&tr, truth_header(3 + n, m).len())?;

    let mut log = SensorLog {
        imu: Vec::with_capacity(imu.rows.len()),
        encoders: Vec::with_capacity(enc.rows.len()),
        efforts: Vec::with_capacity(eff.rows.len()),
        contacts: Vec::with_capacity(con.rows.len()),
        vo: Vec::with_capacity(vo.rows.len()),
        truth: Vec::with_capacity(tr.rows.len()),
        gravity,
    };
    for r in 0..imu.rows.len() {
        let v = imu.floats(r, 0..4)?;
        log.imu.push(ImuSample {
            t: v[0],
            accel: Vector2::new(v[1], v[2]),
            gyro: v[3],
        });
    }
    for r in 0..enc.rows.len() {
        log.encoders.push(EncoderSample {
            t: enc.float(r, 0)?,
            position: DVector::from_vec(enc.floats(r, 1..1 + n)?),
            velocity: DVector::from_vec(enc.floats(r, 1 + n..1 + 2 * n)?),
        });
    }
    for r in 0..eff.rows.len() {
        log.efforts.push(EffortSample {
            t: eff.float(r, 0)?,
            torque: DVector::from_vec(eff.floats(r, 1..1 + n)?),
        });
    }
    for r in 0..con.rows.len() {
        log.contacts.push(ContactSample {
            t: con.float(r, 0)?,
            flags: (1..=m).map(|c| con.flag(r, c)).collect::<Result<_>>()?,
        });
    }
    for r in 0..vo.rows.len() {
        let v = vo.floats(r, 0..5)?;
        log.vo.push(VoIncrement {
            t_i: v[0],
            t_j: v[1],
            translation: Vector2::new(v[2], v[3]),
            rotation: v[4],
        });
    }
    let dof = 3 + n;
    for r in 0..tr.rows.len() {
        let c0 = 1 + 2 * dof;
        let f0 = c0 + m;
        let b0 = f0 + 2 * m;
        log.truth.push(TruthSample {
            t: tr.float(r, 0)?,
            q: DVector::from_vec(tr.floats(r, 1..1 + dof)?),
            qdot: DVector::from_vec(tr.floats(r, 1 + dof..c0)?),
            contact: (c0..f0).map(|c| tr.flag(r, c)).collect::<Result<_>>()?,
            grf: (0..m)
                .map(|i| Ok(Vector2::new(tr.float(r, f0 + 2 * i)?, tr.float(r, f0 + 2 * i + 1)?)))
                .collect::<Result<_>>()?,
            accel_bias: Vector2::new(tr.float(r, b0)?, tr.float(r, b0 + 1)?),
        });
    }
    Ok(log)
}

const TRACE_TAIL: [&str; 6] = ["status", "iterations", "kkt", "window_min_fz", "window_max_swing_f", "step_ms"];

fn trace_header(n_feet: usize) -> Vec<String> {
    let force: Vec<String> = (1..=n_feet).flat_map(|i| [format!("f{i}x"), format!("f{i}z")]).collect();
    header(&[
        &["t", "px", "pz", "vx", "vz", "bax", "baz"].map(String::from),
        &force,
        &names("c", n_feet, ""),
        &TRACE_TAIL.map(String::from),
    ])
}

pub fn write_trace(path: &Path, trace: &Trace) -> Result<()> {
    let feet = trace.rows.first().map_or(0, |r| r.forces.len());
    write_csv(
        path,
        &trace_header(feet),
        trace.rows.iter().map(|r| {
            let mut row: Vec<String> = [r.t, r.position.x, r.position.y, r.velocity.x, r.velocity.y, r.bias.x, r.bias.y]
                .into_iter()
                .map(fmt)
                .collect();
            row.extend(r.forces.iter().flat_map(|f| [fmt(f.x), fmt(f.y)]));
            row.extend(r.contacts.iter().map(|b| flag(*b)));
            row.extend([
                r.status.as_str().to_string(),
                r.iterations.to_string(),
                fmt(r.kkt),
                fmt(r.window_min_fz),
                fmt(r.window_max_swing_f),
                fmt(r.step_ms),
            ]);
            row
        }),
    )
}

pub fn read_trace(path: &Path, name: &str) -> Result<Trace> {
    let t = Table::read(path)?;
    let m = t.count_prefixed("c");
    check_width(&t, trace_header(m).len())?;
    let f0 = 7;
    let c0 = f0 + 2 * m;
    let s0 = c0 + m;
    let mut rows = Vec::with_capacity(t.rows.len());
    for r in 0..t.rows.len() {
        let v = t.floats(r, 0..7)?;
        let status = RowStatus::parse(&t.rows[r][s0]).ok_or_else(|| t.format_error(format!("row {}: unknown status", r + 1)))?;
        let iterations = t.rows[r][s0 + 1]
            .parse()
            .map_err(|_| t.format_error(format!("row {}: bad iteration count", r + 1)))?;
        rows.push(TraceRow {
            t: v[0],
            position: Vector2::new(v[1], v[2]),
            velocity: Vector2::new(v[3], v[4]),
            bias: Vector2::new(v[5], v[6]),
            forces: (0..m)
                .map(|i| Ok(Vector2::new(t.float(r, f0 + 2 * i)?, t.float(r, f0 + 2 * i + 1)?)))
                .collect::<Result<_>>()?,
            contacts: (c0..s0).map(|c| t.flag(r, c)).collect::<Result<_>>()?,
            status,
            iterations,
            kkt: t.float(r, s0 + 2)?,
            window_min_fz: t.float(r, s0 + 3)?,
            window_max_swing_f: t.float(r, s0 + 4)?,
            step_ms: t.float(r, s0 + 5)?,
        });
    }
    Ok(Trace {
        name: name.to_string(),
        rows,
        fault: None,
    })
}

fn fault_file(dir: &Path, name: &str) -> PathBuf {
    dir.join(format!("estimate_{name}.fault"))
}

/// Writes `estimate_<name>.csv`, plus a `.fault` note when the run stopped early.
pub fn save_trace(dir: &Path, trace: &Trace) -> Result<()> {
    create_dir(dir)?;
    write_trace(&dir.join(trace_file(&trace.name)), trace)?;
    let fault = fault_file(dir, &trace.name);
    let res = match &trace.fault {
        Some(msg) => std::fs::write(&fault, msg),
        None if fault.exists() => std::fs::remove_file(&fault),
        None => Ok(()),
    };
    res.map_err(|source| HarnessError::Io { path: fault, source })
}

pub fn load_trace(dir: &Path, name: &str) -> Result<Trace> {
    let mut trace = read_trace(&dir.join(trace_file(name)), name)?;
    let fault = fault_file(dir, name);
    if fault.exists() {
        trace.fault = Some(std::fs::read_to_string(&fault).map_err(|source| HarnessError::Io { path: fault, source })?);
    }
    Ok(trace)
}
