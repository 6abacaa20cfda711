use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Sampled trajectory of one simulation run.
///
/// All series share the same length. `ud` holds the DC reference deviations
/// (p.u. on the grid base) as commanded; `dc_applied` the lagged,
/// ramp-limited injections actually delivered by the converters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub dt: f64,
    /// Sample index at which the disturbance became active.
    pub disturbance_index: usize,
    pub omega: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub ul: Vec<Vec<f64>>,
    pub ud: Vec<Vec<f64>>,
    #[serde(default)]
    pub dc_applied: Vec<Vec<f64>>,
}

impl TrajectoryRecord {
    pub(crate) fn with_capacity(dt: f64, disturbance_index: usize, n: usize) -> Self {
        TrajectoryRecord {
            dt,
            disturbance_index,
            omega: Vec::with_capacity(n),
            y: Vec::with_capacity(n),
            ul: Vec::with_capacity(n),
            ud: Vec::with_capacity(n),
            dc_applied: Vec::with_capacity(n),
        }
    }

    pub fn len(&self) -> usize {
        self.omega.len()
    }

    pub fn is_empty(&self) -> bool {
        self.omega.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn n_monitored(&self) -> usize {
        self.y.first().map_or(0, Vec::len)
    }

    pub fn n_loads(&self) -> usize {
        self.ul.first().map_or(0, Vec::len)
    }

    pub fn n_links(&self) -> usize {
        self.ud.first().map_or(0, Vec::len)
    }

    /// Lowest frequency deviation in the record (p.u.).
    pub fn nadir(&self) -> f64 {
        self.omega.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Mean ω over the trailing `seconds` of the record (p.u.).
    pub fn steady_state(&self, seconds: f64) -> f64 {
        tail_mean(&self.omega, (seconds / self.dt).round() as usize)
    }

    /// Σ_k Σ_links |u_d| · dt, in p.u.·s.
    pub fn cumulative_dc(&self) -> f64 {
        self.ud.iter().flatten().map(|v| v.abs()).sum::<f64>() * self.dt
    }

    pub fn csv_header(&self) -> Vec<String> {
        let mut h = vec!["t".to_string(), "omega".to_string()];
        h.extend((1..=self.n_monitored()).map(|i| format!("y_{i}")));
        h.extend((1..=self.n_loads()).map(|i| format!("ul_{i}")));
        h.extend((1..=self.n_links()).map(|i| format!("ud_{i}")));
        h
    }

    /// Writes `t,omega,y_1..y_m,ul_1..ul_p,ud_1..ud_q`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(self.csv_header())?;
        let mut row = Vec::new();
        for k in 0..self.len() {
            row.clear();
            row.push(self.time(k).to_string());
            row.push(self.omega[k].to_string());
            row.extend(self.y[k].iter().map(f64::to_string));
            row.extend(self.ul[k].iter().map(f64::to_string));
            row.extend(self.ud[k].iter().map(f64::to_string));
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Reads a record written by [`write_csv`](Self::write_csv). The converter
    /// injections are not part of the CSV and come back empty.
    pub fn read_csv<R: Read>(r: R, disturbance_index: usize) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        let count = |prefix: &str| header.iter().filter(|h| h.starts_with(prefix)).count();
        let (m, p, q) = (count("y_"), count("ul_"), count("ud_"));
        if header.len() != 2 + m + p + q || header.get(1) != Some("omega") {
            return Err(Error::Config(format!(
                "unexpected trajectory header: {header:?}"
            )));
        }
        let mut times = Vec::new();
        let mut rec = TrajectoryRecord::with_capacity(0.0, disturbance_index, 0);
        for row in rdr.records() {
            let row = row?;
            let vals = row
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("bad number in trajectory csv: {e}")))?;
            times.push(vals[0]);
            rec.omega.push(vals[1]);
            rec.y.push(vals[2..2 + m].to_vec());
            rec.ul.push(vals[2 + m..2 + m + p].to_vec());
            rec.ud.push(vals[2 + m + p..].to_vec());
        }
        rec.dt = match times.as_slice() {
            [t0, t1, ..] => t1 - t0,
            _ => {
                return Err(Error::Config(
                    "trajectory csv needs at least two rows".into(),
                ))
            }
        };
        Ok(rec)
    }
}

pub(crate) fn tail_mean(xs: &[f64], n: usize) -> f64 {
    let n = n.clamp(1, xs.len().max(1));
    let tail = &xs[xs.len().saturating_sub(n)..];
    tail.iter().sum::<f64>() / tail.len().max(1) as f64
}
