//! Line-oriented text logs.
//!
//! Sensor log: header `# aiekf-log v1 N=<legs> dt=<dt>`, then one row per
//! tick: `t, gyro(3), accel(3)` and per leg `relpos(3), relvel(3), force`.
//! Truth log: header `# aiekf-truth v1 N=<legs> dt=<dt>`, rows
//! `t, R(9, row-major), v(3), p(3)` and per leg `footpos(3), contact`.
//! Floats use 17 significant digits, so values roundtrip exactly.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use aiekf_core::legged::{ImuSample, LegKinSample};
use aiekf_core::liegroup::{GroupState, LegVecs, Mat3, Vec3};
use aiekf_core::SensorFrame;
use smallvec::SmallVec;

use crate::generate::TruthFrame;

const SENSOR_MAGIC: &str = "aiekf-log";
const TRUTH_MAGIC: &str = "aiekf-truth";
const VERSION: &str = "v1";

#[derive(Debug, thiserror::Error)]
pub enum LogError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("line {line}: {msg}")]
    Header { line: usize, msg: String },
    #[error("unsupported log version '{found}' (expected {expected})")]
    Version { found: String, expected: &'static str },
    #[error("line {line}: expected {expected} columns, found {found}")]
    Columns { line: usize, expected: usize, found: usize },
    #[error("line {line}, column {column}: cannot parse '{text}'")]
    Parse { line: usize, column: usize, text: String },
    #[error("log has no data rows")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensorLog {
    pub n_legs: usize,
    pub dt: f64,
    pub frames: Vec<SensorFrame>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruthLog {
    pub n_legs: usize,
    pub dt: f64,
    pub frames: Vec<TruthFrame>,
}

fn push(row: &mut String, x: f64) {
    if !row.is_empty() {
        row.push(',');
    }
    let _ = write!(row, "{x:.16e}");
}

fn push_vec(row: &mut String, v: &Vec3) {
    v.iter().for_each(|&x| push(row, x));
}

pub fn write_sensor_log<W: Write>(mut w: W, log: &SensorLog) -> io::Result<()> {
    writeln!(w, "# {SENSOR_MAGIC} {VERSION} N={} dt={:.16e}", log.n_legs, log.dt)?;
    let mut row = String::new();
    for f in &log.frames {
        row.clear();
        push(&mut row, f.t);
        push_vec(&mut row, &f.imu.gyro);
        push_vec(&mut row, &f.imu.accel);
        for leg in 0..log.n_legs {
            push_vec(&mut row, &f.kin.rel_pos[leg]);
            push_vec(&mut row, &f.kin.rel_vel[leg]);
            push(&mut row, f.force[leg]);
        }
        writeln!(w, "{row}")?;
    }
    w.flush()
}

pub fn write_truth_log<W: Write>(mut w: W, log: &TruthLog) -> io::Result<()> {
    writeln!(w, "# {TRUTH_MAGIC} {VERSION} N={} dt={:.16e}", log.n_legs, log.dt)?;
    let mut row = String::new();
    for f in &log.frames {
        row.clear();
        push(&mut row, f.t);
        let r = &f.state.rot;
        for i in 0..3 {
            for j in 0..3 {
                push(&mut row, r[(i, j)]);
            }
        }
        push_vec(&mut row, &f.state.vel);
        push_vec(&mut row, &f.state.pos);
        for leg in 0..log.n_legs {
            push_vec(&mut row, &f.state.feet[leg]);
            row.push_str(if f.contact[leg] { ",1" } else { ",0" });
        }
        writeln!(w, "{row}")?;
    }
    w.flush()
}

fn parse_header(line: &str, magic: &str) -> Result<(usize, f64), LogError> {
    let bad = |msg: String| LogError::Header { line: 1, msg };
    let mut parts = line.split_whitespace();
    if parts.next() != Some("#") {
        return Err(bad("missing '#' header".into()));
    }
    match parts.next() {
        Some(m) if m == magic => {}
        other => {
            return Err(bad(format!(
                "expected '{magic}' header, found '{}'",
                other.unwrap_or("")
            )))
        }
    }
    match parts.next() {
        Some(VERSION) => {}
        other => {
            return Err(LogError::Version {
                found: other.unwrap_or("").to_string(),
                expected: VERSION,
            })
        }
    }
    let mut n = None;
    let mut dt = None;
    for p in parts {
        if let Some(v) = p.strip_prefix("N=") {
            n = v.parse::<usize>().ok();
        } else if let Some(v) = p.strip_prefix("dt=") {
            dt = v.parse::<f64>().ok().filter(|d| *d > 0.0);
        }
    }
    match (n, dt) {
        (Some(n), Some(dt)) => Ok((n, dt)),
        _ => Err(bad("header needs N=<legs> and dt=<seconds>".into())),
    }
}

/// Reads rows of exactly `cols` floats, calling `f` with each parsed row.
fn read_rows<R: BufRead>(
    reader: R,
    magic: &str,
    cols: impl Fn(usize) -> usize,
    mut f: impl FnMut(usize, &[f64]) -> Result<(), LogError>,
) -> Result<(usize, f64), LogError> {
    let mut lines = reader.lines();
    let header = lines.next().ok_or(LogError::Empty)??;
    let (n_legs, dt) = parse_header(&header, magic)?;
    let expected = cols(n_legs);
    let mut values = Vec::with_capacity(expected);
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        let lineno = i + 2;
        if line.trim().is_empty() {
            continue;
        }
        values.clear();
        for (c, field) in line.split(',').enumerate() {
            let v = field.trim().parse::<f64>().map_err(|_| LogError::Parse {
                line: lineno,
                column: c + 1,
                text: field.to_string(),
            })?;
            values.push(v);
        }
        if values.len() != expected {
            return Err(LogError::Columns {
                line: lineno,
                expected,
                found: values.len(),
            });
        }
        f(lineno, &values)?;
        rows += 1;
    }
    if rows == 0 {
        return Err(LogError::Empty);
    }
    Ok((n_legs, dt))
}

fn v3(s: &[f64]) -> Vec3 {
    Vec3::new(s[0], s[1], s[2])
}

pub fn read_sensor_log<R: BufRead>(reader: R) -> Result<SensorLog, LogError> {
    let mut frames = Vec::new();
    let (n_legs, dt) = read_rows(
        reader,
        SENSOR_MAGIC,
        |n| 7 + 7 * n,
        |_, v| {
            let t = v[0];
            let n = (v.len() - 7) / 7;
            let mut rel_pos = LegVecs::new();
            let mut rel_vel = LegVecs::new();
            let mut force = SmallVec::new();
            for leg in 0..n {
                let o = 7 + 7 * leg;
                rel_pos.push(v3(&v[o..]));
                rel_vel.push(v3(&v[o + 3..]));
                force.push(v[o + 6]);
            }
            frames.push(SensorFrame {
                t,
                imu: ImuSample {
                    t,
                    gyro: v3(&v[1..]),
                    accel: v3(&v[4..]),
                },
                kin: LegKinSample { rel_pos, rel_vel },
                force,
            });
            Ok(())
        },
    )?;
    Ok(SensorLog { n_legs, dt, frames })
}

/// Foot velocities, forces and biases are not part of the format and come
/// back as zeros.
pub fn read_truth_log<R: BufRead>(reader: R) -> Result<TruthLog, LogError> {
    let mut frames = Vec::new();
    let (n_legs, dt) = read_rows(
        reader,
        TRUTH_MAGIC,
        |n| 16 + 4 * n,
        |line, v| {
            let n = (v.len() - 16) / 4;
            let rot = Mat3::from_row_slice(&v[1..10]);
            let mut feet = LegVecs::new();
            let mut contact = SmallVec::new();
            for leg in 0..n {
                let o = 16 + 4 * leg;
                feet.push(v3(&v[o..]));
                contact.push(match v[o + 3] {
                    x if x == 1.0 => true,
                    x if x == 0.0 => false,
                    _ => {
                        return Err(LogError::Parse {
                            line,
                            column: o + 4,
                            text: v[o + 3].to_string(),
                        })
                    }
                });
            }
            frames.push(TruthFrame {
                t: v[0],
                state: GroupState {
                    rot,
                    vel: v3(&v[10..]),
                    pos: v3(&v[13..]),
                    feet,
                },
                foot_vel: smallvec::smallvec![Vec3::zeros(); n],
                contact,
                force: smallvec::smallvec![0.0; n],
                bias: [Vec3::zeros(); 2],
            });
            Ok(())
        },
    )?;
    Ok(TruthLog { n_legs, dt, frames })
}

pub fn save_sensor_log(path: &Path, log: &SensorLog) -> Result<(), LogError> {
    Ok(write_sensor_log(BufWriter::new(File::create(path)?), log)?)
}

pub fn save_truth_log(path: &Path, log: &TruthLog) -> Result<(), LogError> {
    Ok(write_truth_log(BufWriter::new(File::create(path)?), log)?)
}

pub fn load_sensor_log(path: &Path) -> Result<SensorLog, LogError> {
    read_sensor_log(BufReader::new(File::open(path)?))
}

pub fn load_truth_log(path: &Path) -> Result<TruthLog, LogError> {
    read_truth_log(BufReader::new(File::open(path)?))
}
