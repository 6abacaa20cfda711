use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::qp::solve_qp;
use super::{max_dc_controls, quantize, ControlLimits};
use crate::koopman::{KoopmanModel, Window};
use crate::{Error, Result};

/// Sensitivities below this are treated as "shedding cannot reach this step".
const ZERO_SENSITIVITY: f64 = 1e-14;
/// Proximal weight that keeps the linear-objective mode strictly convex.
const LINEAR_PROXIMAL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShedObjective {
    /// `Σ_t u_tᵀ Q1 u_t` with `Q1 = diag(node size)²`.
    #[default]
    Quadratic,
    /// `Σ_t q1ᵀ u_t`: total shed power.
    Linear,
}

/// The shedding problem with the lifted dynamics substituted:
/// `ω̂_t(s) = free_t + sensitivity_tᵀ s` for the one-shot ratio vector `s`
/// applied from the second step on.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedProblem {
    pub free: Vec<f64>,
    pub sensitivity: Vec<Vec<f64>>,
}

impl CondensedProblem {
    pub fn horizon(&self) -> usize {
        self.free.len()
    }

    pub fn predict(&self, s: &[f64]) -> Vec<f64> {
        self.free
            .iter()
            .zip(&self.sensitivity)
            .map(|(f, c)| f + c.iter().zip(s).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }
}

/// Condenses the rollout from `g1` over `horizon` steps with the DC
/// references held at `dc`.
pub fn condense(
    model: &KoopmanModel,
    g1: &DVector<f64>,
    dc: &[f64],
    horizon: usize,
) -> CondensedProblem {
    let p = model.n_loads();
    let mut free = Vec::with_capacity(horizon);
    let mut sensitivity = Vec::with_capacity(horizon);
    let mut g = g1.clone();
    let mut h = DMatrix::zeros(model.dim(), p);
    let no_shed = vec![0.0; p];
    for t in 1..=horizon {
        free.push(g[0]);
        sensitivity.push(h.row(0).iter().copied().collect());
        g = model.step(&g, &no_shed, dc);
        // u_{l,1} = 0: the shedding enters from the transition out of step 2.
        h = &model.a * &h;
        if t >= 2 {
            h += &model.b_l;
        }
    }
    CondensedProblem { free, sensitivity }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SheddingPlan {
    /// Continuous optimum as shedding ratios.
    pub ratios: Vec<f64>,
    /// Continuous optimum, MW.
    pub continuous_mw: Vec<f64>,
    /// Feeder-quantized amount actually executed, MW.
    pub quantized_mw: Vec<f64>,
    /// Time the shedding is applied, s (set when scheduled).
    pub shed_time: Option<f64>,
    /// False when the nadir floor cannot be met within the shedding limits;
    /// the plan then sheds the maximum everywhere.
    pub feasible: bool,
}

impl SheddingPlan {
    fn from_ratios(ratios: Vec<f64>, limits: &ControlLimits, feasible: bool) -> Self {
        let continuous_mw: Vec<f64> = ratios
            .iter()
            .zip(&limits.node_mw)
            .map(|(s, p)| s * p)
            .collect();
        let quantized_mw = quantize(&continuous_mw, limits.quantum_mw)
            .into_iter()
            .zip(limits.node_max_mw())
            .map(|(q, max)| q.min((max / limits.quantum_mw + 1e-9).floor() * limits.quantum_mw))
            .collect();
        SheddingPlan {
            ratios,
            continuous_mw,
            quantized_mw,
            shed_time: None,
            feasible,
        }
    }

    /// Quantized amounts as shedding ratios of each node.
    pub fn quantized_ratios(&self, limits: &ControlLimits) -> Vec<f64> {
        self.quantized_mw
            .iter()
            .zip(&limits.node_mw)
            .map(|(q, p)| if *p > 0.0 { (q / p).min(1.0) } else { 0.0 })
            .collect()
    }

    pub fn total_quantized_mw(&self) -> f64 {
        self.quantized_mw.iter().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.quantized_mw.iter().all(|q| *q == 0.0)
    }
}

/// One-shot shedding from the measurement window, with every DC link at its
/// support limit.
pub fn solve_shedding(
    model: &KoopmanModel,
    window: &Window<'_>,
    limits: &ControlLimits,
    horizon: usize,
    objective: ShedObjective,
) -> Result<SheddingPlan> {
    limits.check_model(model)?;
    let g1 = model.lift(window)?;
    let dc = max_dc_controls(limits, 1).remove(0).dc;
    let problem = condense(model, &g1.0, &dc, horizon);
    solve_condensed(&problem, limits, objective)
}

/// Solves the condensed problem `min (T−1)·J(s)` subject to
/// `ω̂_t(s) ≥ ω_min` for every step and `0 ≤ s ≤ u^MAX_l`.
pub fn solve_condensed(
    problem: &CondensedProblem,
    limits: &ControlLimits,
    objective: ShedObjective,
) -> Result<SheddingPlan> {
    let p = limits.n_loads();
    if problem.sensitivity.iter().any(|c| c.len() != p) {
        return Err(Error::Dimension(
            "sensitivity rows do not match the load nodes".into(),
        ));
    }
    let held = problem.horizon().saturating_sub(1) as f64;
    let weight: Vec<f64> = limits.node_mw.iter().map(|m| m / limits.base_mw).collect();
    if weight
        .iter()
        .zip(&limits.ul_max)
        .any(|(w, r)| *r > 0.0 && !(w.is_finite() && *w > 0.0))
    {
        return Err(Error::Config(
            "Q1 is singular: every sheddable node needs a positive size".into(),
        ));
    }
    // Nodes that cannot shed get a unit curvature and are pinned by bounds.
    let curvature = |j: usize| {
        if weight[j] > 0.0 {
            weight[j] * weight[j]
        } else {
            1.0
        }
    };
    let (h, f) = match objective {
        ShedObjective::Quadratic => (
            DMatrix::from_fn(p, p, |i, j| {
                if i == j {
                    2.0 * held.max(1.0) * curvature(i)
                } else {
                    0.0
                }
            }),
            DVector::zeros(p),
        ),
        ShedObjective::Linear => (
            DMatrix::from_fn(p, p, |i, j| {
                if i == j {
                    2.0 * LINEAR_PROXIMAL * held.max(1.0) * curvature(i)
                } else {
                    0.0
                }
            }),
            DVector::from_fn(p, |j, _| held * weight[j]),
        ),
    };

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut rhs = Vec::new();
    let mut reachable = true;
    for (free, c) in problem.free.iter().zip(&problem.sensitivity) {
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= ZERO_SENSITIVITY {
            if *free < limits.omega_min {
                reachable = false;
            }
            continue;
        }
        rows.push(c.clone());
        rhs.push(limits.omega_min - free);
    }
    for j in 0..p {
        let mut lo = vec![0.0; p];
        lo[j] = 1.0;
        rows.push(lo);
        rhs.push(0.0);
        let mut hi = vec![0.0; p];
        hi[j] = -1.0;
        rows.push(hi);
        rhs.push(-limits.ul_max[j]);
    }
    let clamp_all = || SheddingPlan::from_ratios(limits.ul_max.clone(), limits, false);
    if !reachable {
        return Ok(clamp_all());
    }
    let c = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
    let b = DVector::from_vec(rhs);
    match solve_qp(&h, &f, &c, &b) {
        Ok(sol) => {
            let ratios = sol
                .x
                .iter()
                .zip(&limits.ul_max)
                .map(|(s, max)| s.clamp(0.0, *max))
                .collect();
            Ok(SheddingPlan::from_ratios(ratios, limits, true))
        }
        Err(Error::Infeasible) => Ok(clamp_all()),
        Err(e) => Err(e),
    }
}
