//! Time grids and sampled trajectories, with CSV and binary export.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::SystemParams;

/// Uniform grid `t_i = i * dt`, `i = 0..=steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, steps: usize) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || steps == 0 {
            return Err(Error::Parameter("time grid needs dt > 0 and at least one step".into()));
        }
        Ok(TimeGrid { dt, steps })
    }

    /// Smallest uniform grid on `[0, horizon]` with spacing at most `max_dt`.
    pub fn covering(horizon: f64, max_dt: f64) -> Result<Self> {
        if !(horizon > 0.0) || !(max_dt > 0.0) {
            return Err(Error::Parameter("horizon and step must be positive".into()));
        }
        let steps = (horizon / max_dt).ceil().max(1.0) as usize;
        TimeGrid::new(horizon / steps as f64, steps)
    }

    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn horizon(&self) -> f64 {
        self.dt * self.steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        self.dt * i as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }
}

/// Deviations `y_k = x_k - x_k(0) - V t` and `u_k = v_k - V` per sample.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DeviationTrajectory {
    pub times: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
}

impl DeviationTrajectory {
    pub fn particles(&self) -> usize {
        self.y.first().map_or(0, Vec::len)
    }

    pub fn max_abs_y(&self) -> f64 {
        self.y.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max_abs_u(&self) -> f64 {
        self.u.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// `max |y - other.y| / max |other.y|` over common samples.
    pub fn relative_linf_error(&self, reference: &DeviationTrajectory) -> Result<f64> {
        if self.y.len() != reference.y.len() || self.particles() != reference.particles() {
            return Err(Error::Shape {
                expected: reference.y.len() * reference.particles(),
                got: self.y.len() * self.particles(),
            });
        }
        let scale = reference.max_abs_y();
        let err = self
            .y
            .iter()
            .zip(&reference.y)
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .fold(0.0, f64::max);
        Ok(if scale == 0.0 { err } else { err / scale })
    }

    /// Keeps every `stride`-th sample (always including the last).
    pub fn subsample(&self, stride: usize) -> DeviationTrajectory {
        let idx = sample_indices(self.times.len(), stride);
        DeviationTrajectory {
            times: idx.iter().map(|&i| self.times[i]).collect(),
            y: idx.iter().map(|&i| self.y[i].clone()).collect(),
            u: idx.iter().map(|&i| self.u[i].clone()).collect(),
        }
    }

    /// Long-format CSV `t, k, y, u`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,k,y,u\n");
        for (i, t) in self.times.iter().enumerate() {
            for k in 0..self.y[i].len() {
                out.push_str(&format!("{:e},{},{:e},{:e}\n", t, k, self.y[i][k], self.u[i][k]));
            }
        }
        out
    }
}

pub(crate) fn sample_indices(len: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut idx: Vec<usize> = (0..len).step_by(stride).collect();
    if len > 0 && *idx.last().unwrap() != len - 1 {
        idx.push(len - 1);
    }
    idx
}

/// Run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub integrator: String,
    /// Nominal (or last accepted) step size.
    pub step: f64,
    pub steps_taken: usize,
    pub params_hash: String,
    /// Some `|v_k - V|` exceeded `Delta` during the run.
    pub window_exit: bool,
    pub max_velocity_deviation: f64,
    /// `min_k,t Delta_k(t) / Delta`.
    pub min_gap_ratio: f64,
}

/// Sampled positions (unwrapped) and velocities of a full simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub positions: Vec<Vec<f64>>,
    pub velocities: Vec<Vec<f64>>,
    /// The same run in deviation variables, integrated directly.
    pub deviations: DeviationTrajectory,
    pub meta: TrajectoryMeta,
}

impl Trajectory {
    pub fn particles(&self) -> usize {
        self.positions.first().map_or(0, Vec::len)
    }

    /// Long-format CSV `t, k, x, v`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,k,x,v\n");
        for (i, t) in self.times.iter().enumerate() {
            for k in 0..self.positions[i].len() {
                out.push_str(&format!(
                    "{:e},{},{:.17e},{:.17e}\n",
                    t, k, self.positions[i][k], self.velocities[i][k]
                ));
            }
        }
        out
    }

    /// Binary layout: `u64` N, `u64` sample count, then all times, then
    /// positions and velocities row-major (samples x particles), all
    /// little-endian `f64`.
    pub fn write_binary<W: Write>(&self, mut out: W) -> Result<()> {
        let n = self.particles() as u64;
        let s = self.times.len() as u64;
        out.write_all(&n.to_le_bytes())?;
        out.write_all(&s.to_le_bytes())?;
        for t in &self.times {
            out.write_all(&t.to_le_bytes())?;
        }
        for block in [&self.positions, &self.velocities] {
            for row in block.iter() {
                for v in row {
                    out.write_all(&v.to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    /// Reads the layout written by [`write_binary`](Self::write_binary);
    /// returns `(times, positions, velocities)`.
    #[allow(clippy::type_complexity)]
    pub fn read_binary(bytes: &[u8]) -> Result<(Vec<f64>, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let bad = || Error::Config("truncated trajectory file".into());
        let word = |i: usize| -> Result<[u8; 8]> {
            bytes
                .get(8 * i..8 * i + 8)
                .map(|b| b.try_into().expect("8 bytes"))
                .ok_or_else(bad)
        };
        let n = u64::from_le_bytes(word(0)?) as usize;
        let s = u64::from_le_bytes(word(1)?) as usize;
        if bytes.len() != 8 * (2 + s + 2 * s * n) {
            return Err(bad());
        }
        let f = |i: usize| f64::from_le_bytes(word(i).expect("length checked"));
        let times = (0..s).map(|i| f(2 + i)).collect();
        let block = |start: usize| -> Vec<Vec<f64>> {
            (0..s).map(|r| (0..n).map(|k| f(start + r * n + k)).collect()).collect()
        };
        Ok((times, block(2 + s), block(2 + s + s * n)))
    }
}

/// FNV-1a of the JSON form of the parameters.
pub fn params_hash(p: &SystemParams) -> String {
    let json = serde_json::to_string(p).unwrap_or_default();
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in json.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    format!("{h:016x}")
}
