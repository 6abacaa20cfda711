use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Gaussian radial basis features `exp(−‖(z − c) ⊘ s‖² / w²)` on the
/// (optionally standardized) base vector `z`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfSet {
    pub count: usize,
    /// Empty until placed from training data by the fit.
    #[serde(default)]
    pub centers: Vec<Vec<f64>>,
    #[serde(default)]
    pub widths: Vec<f64>,
    /// Per-component scale of the base vector; empty means unit scale.
    #[serde(default)]
    pub scale: Vec<f64>,
}

impl RbfSet {
    pub fn unplaced(count: usize) -> Self {
        RbfSet {
            count,
            centers: Vec::new(),
            widths: Vec::new(),
            scale: Vec::new(),
        }
    }

    pub fn is_placed(&self) -> bool {
        self.centers.len() == self.count && self.widths.len() == self.count
    }

    fn eval(&self, z: &[f64], out: &mut Vec<f64>) {
        for (c, w) in self.centers.iter().zip(&self.widths) {
            let d2: f64 = z
                .iter()
                .zip(c)
                .enumerate()
                .map(|(i, (zi, ci))| {
                    let s = self.scale.get(i).copied().unwrap_or(1.0);
                    let d = (zi - ci) / s;
                    d * d
                })
                .sum();
            out.push((-d2 / (w * w)).exp());
        }
    }

    /// Places centers on training samples taken at evenly spaced quantiles
    /// of the first component (the current ω), and sets every width to the
    /// median inter-center distance in standardized units.
    pub fn place(&mut self, samples: &[Vec<f64>]) -> Result<()> {
        if self.count == 0 {
            return Err(Error::Config("rbf count must be > 0".into()));
        }
        let dim = samples.first().map(Vec::len).ok_or_else(|| {
            Error::Config("cannot place rbf centers without training samples".into())
        })?;
        let n = samples.len() as f64;
        self.scale = (0..dim)
            .map(|i| {
                let mean = samples.iter().map(|s| s[i]).sum::<f64>() / n;
                let var = samples.iter().map(|s| (s[i] - mean).powi(2)).sum::<f64>() / n;
                if var > 0.0 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by(|&a, &b| samples[a][0].total_cmp(&samples[b][0]));
        self.centers = (0..self.count)
            .map(|k| {
                let q = (k as f64 + 0.5) / self.count as f64;
                samples[order[(q * (samples.len() - 1) as f64).round() as usize]].clone()
            })
            .collect();
        let width = if self.count > 1 {
            let mut dists = Vec::with_capacity(self.count * (self.count - 1) / 2);
            for a in 0..self.count {
                for b in a + 1..self.count {
                    let d2: f64 = (0..dim)
                        .map(|i| {
                            ((self.centers[a][i] - self.centers[b][i]) / self.scale[i]).powi(2)
                        })
                        .sum();
                    dists.push(d2.sqrt());
                }
            }
            dists.sort_by(f64::total_cmp);
            dists[dists.len() / 2]
        } else {
            1.0
        };
        let width = if width > 0.0 { width } else { 1.0 };
        self.widths = vec![width; self.count];
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dictionary {
    /// Current measurements only (DMD).
    Identity,
    /// Delay coordinates only.
    DelayOnly,
    /// Current measurements plus RBFs of the current measurements (EDMD).
    Rbf(RbfSet),
    /// Delay coordinates plus RBFs of the whole delay vector.
    DelayRbf(RbfSet),
}

impl Dictionary {
    pub fn uses_delays(&self) -> bool {
        matches!(self, Dictionary::DelayOnly | Dictionary::DelayRbf(_))
    }

    pub fn rbf(&self) -> Option<&RbfSet> {
        match self {
            Dictionary::Rbf(r) | Dictionary::DelayRbf(r) => Some(r),
            _ => None,
        }
    }

    pub fn rbf_mut(&mut self) -> Option<&mut RbfSet> {
        match self {
            Dictionary::Rbf(r) | Dictionary::DelayRbf(r) => Some(r),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableConfig {
    /// Delay span τ, s.
    pub delay: f64,
    /// Sample step Δt, s.
    pub dt: f64,
    pub dictionary: Dictionary,
    /// Include the voltage proxies (as deviations from 1 p.u.).
    pub include_voltage: bool,
}

impl ObservableConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.delay >= 0.0) {
            return Err(Error::Config("need dt > 0 and delay >= 0".into()));
        }
        let ratio = self.delay / self.dt;
        if (ratio - ratio.round()).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "delay {} s is not an integer multiple of dt {} s",
                self.delay, self.dt
            )));
        }
        if let Some(r) = self.dictionary.rbf() {
            if r.count == 0 {
                return Err(Error::Config("rbf count must be > 0".into()));
            }
        }
        Ok(())
    }

    /// Number of past samples in the window, τ/Δt.
    pub fn lags(&self) -> usize {
        (self.delay / self.dt).round() as usize
    }

    /// Samples each window must contain.
    pub fn window_len(&self) -> usize {
        self.lags() + 1
    }

    fn used_lags(&self) -> usize {
        if self.dictionary.uses_delays() {
            self.lags()
        } else {
            0
        }
    }

    /// Dimension of the lifted state for `n_monitored` voltage channels.
    pub fn dim(&self, n_monitored: usize) -> usize {
        let lags = self.used_lags();
        let volt = if self.include_voltage {
            n_monitored * (lags + 1)
        } else {
            0
        };
        1 + lags + volt + self.dictionary.rbf().map_or(0, |r| r.count)
    }

    /// The vector the RBFs are evaluated on: the ω window followed by the
    /// voltage-deviation window (only the current sample without delays).
    pub(crate) fn base_vector(&self, window: &Window<'_>) -> Vec<f64> {
        let lags = self.used_lags();
        let n = window.omega.len();
        let mut z = Vec::with_capacity((lags + 1) * (1 + window.n_monitored()));
        z.extend_from_slice(&window.omega[n - 1 - lags..]);
        if self.include_voltage {
            for y in &window.y[n - 1 - lags..] {
                z.extend(y.iter().map(|v| v - 1.0));
            }
        }
        z
    }
}

/// Trailing measurement window, oldest sample first.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub omega: &'a [f64],
    pub y: &'a [Vec<f64>],
}

impl<'a> Window<'a> {
    /// The window of length `len` ending at sample `k` (inclusive).
    pub fn ending_at(omega: &'a [f64], y: &'a [Vec<f64>], k: usize, len: usize) -> Result<Self> {
        if k + 1 < len || k >= omega.len() {
            return Err(Error::InsufficientHistory {
                needed: len,
                available: (k + 1).min(omega.len()),
            });
        }
        let start = k + 1 - len;
        Ok(Window {
            omega: &omega[start..=k],
            y: if y.is_empty() { y } else { &y[start..=k] },
        })
    }

    pub fn n_monitored(&self) -> usize {
        self.y.first().map_or(0, Vec::len)
    }
}

/// Lifted state g: first entry is the raw ω_t, the rest are observables.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedState(pub DVector<f64>);

impl LiftedState {
    pub fn omega(&self) -> f64 {
        self.0[0]
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

/// Evaluates the observables on a trailing window.
pub fn lift(window: &Window<'_>, config: &ObservableConfig) -> Result<LiftedState> {
    let needed = config.window_len();
    let n = window.omega.len();
    if n < needed {
        return Err(Error::InsufficientHistory {
            needed,
            available: n,
        });
    }
    if config.include_voltage && window.y.len() != n {
        return Err(Error::InsufficientHistory {
            needed,
            available: window.y.len(),
        });
    }
    let lags = config.used_lags();
    let mut g = Vec::with_capacity(config.dim(window.n_monitored()));
    g.push(window.omega[n - 1]);
    g.extend_from_slice(&window.omega[n - 1 - lags..n - 1]);
    if config.include_voltage {
        for y in &window.y[n - 1 - lags..] {
            g.extend(y.iter().map(|v| v - 1.0));
        }
    }
    if let Some(rbf) = config.dictionary.rbf() {
        if !rbf.is_placed() {
            return Err(Error::Config("rbf centers have not been placed".into()));
        }
        let z = config.base_vector(window);
        rbf.eval(&z, &mut g);
    }
    Ok(LiftedState(DVector::from_vec(g)))
}
