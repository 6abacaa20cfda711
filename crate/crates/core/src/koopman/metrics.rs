use serde::{Deserialize, Serialize};

use super::dataset::Sample;
use super::model::{predict_rollout, KoopmanModel};
use super::observables::Window;
use crate::gridsim::{Control, TrajectoryRecord};
use crate::units::pu_to_hz;
use crate::Result;

/// Measurements become available this long after the disturbance.
pub const MEASUREMENT_DELAY_S: f64 = 0.4;

/// Averaging span for the steady-state value.
pub const STEADY_STATE_SPAN_S: f64 = 5.0;

/// Mean absolute prediction errors over a test set, in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub nadir_hz: f64,
    pub steady_state_hz: f64,
    pub mean_hz: f64,
}

/// Errors of one trajectory, p.u.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryErrors {
    pub nadir: f64,
    pub steady_state: f64,
    pub mean: f64,
}

/// First prediction sample: the disturbance plus the measurement delay, and
/// never before a full window is available.
pub fn prediction_start(rec: &TrajectoryRecord, model: &KoopmanModel) -> usize {
    let delay = (MEASUREMENT_DELAY_S / rec.dt).round() as usize;
    (rec.disturbance_index + delay).max(model.config.window_len() - 1)
}

pub fn record_controls(rec: &TrajectoryRecord, from: usize) -> Vec<Control> {
    (from..rec.len())
        .map(|k| Control {
            shed: rec.ul[k].clone(),
            dc: rec.ud[k].clone(),
        })
        .collect()
}

/// Rolls the model out over the remainder of `rec` using the recorded inputs.
pub fn predict_record(model: &KoopmanModel, rec: &TrajectoryRecord) -> Result<(usize, Vec<f64>)> {
    let k0 = prediction_start(rec, model);
    let window = Window::ending_at(&rec.omega, &rec.y, k0, model.config.window_len())?;
    let controls = record_controls(rec, k0);
    let steps = rec.len() - k0;
    Ok((k0, predict_rollout(model, &window, &controls, steps)?))
}

pub fn trajectory_errors(model: &KoopmanModel, rec: &TrajectoryRecord) -> Result<TrajectoryErrors> {
    let (k0, pred) = predict_record(model, rec)?;
    let truth = &rec.omega[k0..];
    let min = |xs: &[f64]| xs.iter().copied().fold(f64::INFINITY, f64::min);
    let tail = ((STEADY_STATE_SPAN_S / rec.dt).round() as usize).clamp(1, truth.len());
    let ss = |xs: &[f64]| xs[xs.len() - tail..].iter().sum::<f64>() / tail as f64;
    let mean = truth
        .iter()
        .zip(&pred)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / truth.len() as f64;
    Ok(TrajectoryErrors {
        nadir: (min(truth) - min(&pred)).abs(),
        steady_state: (ss(truth) - ss(&pred)).abs(),
        mean,
    })
}

/// Table-style metrics: per-trajectory absolute errors averaged over `test`.
pub fn eval_metrics(model: &KoopmanModel, test: &[Sample]) -> Result<Metrics> {
    let mut sum = (0.0, 0.0, 0.0);
    for s in test {
        let e = trajectory_errors(model, &s.record)?;
        sum.0 += e.nadir;
        sum.1 += e.steady_state;
        sum.2 += e.mean;
    }
    let n = test.len().max(1) as f64;
    Ok(Metrics {
        nadir_hz: pu_to_hz(sum.0 / n),
        steady_state_hz: pu_to_hz(sum.1 / n),
        mean_hz: pu_to_hz(sum.2 / n),
    })
}

/// Mean absolute one-step-ahead and `horizon`-step-ahead ω errors (p.u.)
/// over every prediction origin of the test records.
pub fn horizon_errors(model: &KoopmanModel, test: &[Sample], horizon: usize) -> Result<(f64, f64)> {
    let wl = model.config.window_len();
    let (mut one, mut multi, mut n) = (0.0, 0.0, 0usize);
    for s in test {
        let rec = &s.record;
        let k0 = prediction_start(rec, model);
        for k in k0..rec.len().saturating_sub(horizon) {
            let g = model.lift(&Window::ending_at(&rec.omega, &rec.y, k, wl)?)?;
            let controls = record_controls(rec, k);
            let states = model.rollout_states(&g.0, &controls, horizon + 1)?;
            one += (states[1][0] - rec.omega[k + 1]).abs();
            multi += (states[horizon][0] - rec.omega[k + horizon]).abs();
            n += 1;
        }
    }
    let n = n.max(1) as f64;
    Ok((one / n, multi / n))
}
