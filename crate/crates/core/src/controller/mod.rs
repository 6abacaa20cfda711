//! Coordinated emergency frequency control on a fitted lifted model.
//!
//! Pipeline: activation on a frequency dead zone, nadir prediction with every
//! DC link held at its support limit, a one-shot load-shedding decision
//! (condensed QP plus feeder quantization) when that prediction violates the
//! nadir floor, and LQR modulation of the DC references afterwards.

mod coordinate;
pub mod qp;
mod riccati;
mod shedding;

pub use coordinate::{
    coordinate, coordinate_with, CoordinationSettings, CoordinationSummary, CoordinationTrace,
    DcCommand, DcMode,
};
pub use riccati::{
    dare_residual, solve_dare, solve_dare_model, LqrWeights, RiccatiSolution, DEFAULT_DISCOUNT,
    DEFAULT_Q_OMEGA, DEFAULT_Q_REST, DEFAULT_R,
};
pub use shedding::{
    condense, solve_condensed, solve_shedding, CondensedProblem, ShedObjective, SheddingPlan,
};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::gridsim::{Control, GridModel};
use crate::koopman::{predict_rollout, KoopmanModel, Window};
use crate::units::hz_to_pu;
use crate::{Error, Result};

/// Default dead zone of the DC support, Hz.
pub const DEFAULT_ACTIVATION_HZ: f64 = 0.2;
/// Default nadir floor, Hz below nominal.
pub const DEFAULT_NADIR_FLOOR_HZ: f64 = 0.5;
/// Default steady-state floor, Hz below nominal (49.5 Hz).
pub const DEFAULT_STEADY_STATE_FLOOR_HZ: f64 = 0.5;
/// Default feeder quantum, MW.
pub const DEFAULT_QUANTUM_MW: f64 = 2.0;
/// Default largest shedding ratio per load node.
pub const DEFAULT_MAX_SHED_RATIO: f64 = 0.2;
/// Default prediction horizon, samples.
pub const DEFAULT_HORIZON: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlLimits {
    /// Base of the per-unit DC references the model and plant use, MW.
    pub base_mw: f64,
    pub ud_min_mw: Vec<f64>,
    pub ud_max_mw: Vec<f64>,
    /// Reference deviation of maximal support per link (the upper limit at a
    /// receiving end, the lower limit at a sending end), MW.
    pub support_mw: Vec<f64>,
    /// Load of each node, MW; shedding ratios refer to it.
    pub node_mw: Vec<f64>,
    /// Largest shedding ratio per node.
    pub ul_max: Vec<f64>,
    /// Feeder quantum d, MW.
    pub quantum_mw: f64,
    /// Dead zone, Hz of deviation.
    pub activation_hz: f64,
    /// Nadir floor ω_min, p.u. deviation.
    pub omega_min: f64,
    /// Steady-state floor, p.u. deviation.
    pub steady_state_floor: f64,
}

impl ControlLimits {
    /// Defaults for `grid`: link limits and support direction from the link
    /// data, node sizes from the load data.
    pub fn for_grid(grid: &GridModel) -> Self {
        ControlLimits {
            base_mw: grid.base_mw,
            ud_min_mw: grid.hvdc.iter().map(|h| h.ud_min_mw).collect(),
            ud_max_mw: grid.hvdc.iter().map(|h| h.ud_max_mw).collect(),
            support_mw: grid.hvdc.iter().map(|h| h.support_limit_mw()).collect(),
            node_mw: grid.loads.iter().map(|l| l.base_mw).collect(),
            ul_max: vec![DEFAULT_MAX_SHED_RATIO; grid.n_loads()],
            quantum_mw: DEFAULT_QUANTUM_MW,
            activation_hz: DEFAULT_ACTIVATION_HZ,
            omega_min: hz_to_pu(-DEFAULT_NADIR_FLOOR_HZ),
            steady_state_floor: hz_to_pu(-DEFAULT_STEADY_STATE_FLOOR_HZ),
        }
    }

    pub fn n_links(&self) -> usize {
        self.support_mw.len()
    }

    pub fn n_loads(&self) -> usize {
        self.node_mw.len()
    }

    pub fn ud_bounds_pu(&self, k: usize) -> (f64, f64) {
        (
            self.ud_min_mw[k] / self.base_mw,
            self.ud_max_mw[k] / self.base_mw,
        )
    }

    /// DC references of maximal support, p.u.
    pub fn support_pu(&self) -> Vec<f64> {
        self.support_mw.iter().map(|v| v / self.base_mw).collect()
    }

    /// Largest shedding per node, MW.
    pub fn node_max_mw(&self) -> Vec<f64> {
        self.node_mw
            .iter()
            .zip(&self.ul_max)
            .map(|(p, r)| p * r)
            .collect()
    }

    pub fn activation_pu(&self) -> f64 {
        hz_to_pu(self.activation_hz)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        let q = self.support_mw.len();
        if self.ud_min_mw.len() != q || self.ud_max_mw.len() != q {
            return bad("limits: ud_min_mw, ud_max_mw and support_mw lengths differ".into());
        }
        if self.ul_max.len() != self.node_mw.len() {
            return bad("limits: ul_max and node_mw lengths differ".into());
        }
        if !(self.base_mw > 0.0) {
            return bad("limits: base_mw must be > 0".into());
        }
        for k in 0..q {
            let (lo, hi, s) = (self.ud_min_mw[k], self.ud_max_mw[k], self.support_mw[k]);
            if !(lo <= 0.0 && 0.0 <= hi && lo <= s && s <= hi) {
                return bad(format!(
                    "limits: link {k} needs ud_min <= 0 <= ud_max and support within"
                ));
            }
        }
        if self.ul_max.iter().any(|r| !(0.0..=1.0).contains(r))
            || self.node_mw.iter().any(|p| !(*p >= 0.0))
        {
            return bad("limits: ul_max must be in [0, 1] and node sizes >= 0".into());
        }
        if !(self.quantum_mw > 0.0) {
            return bad("limits: feeder quantum must be > 0".into());
        }
        if !(self.omega_min < 0.0) {
            return bad("limits: omega_min must be negative (deviation form)".into());
        }
        if !(self.activation_hz >= 0.0 && -self.activation_pu() > self.omega_min) {
            return bad("limits: activation threshold must be less severe than omega_min".into());
        }
        if !self.steady_state_floor.is_finite() {
            return bad("limits: steady-state floor must be finite".into());
        }
        Ok(())
    }

    pub(crate) fn check_model(&self, model: &KoopmanModel) -> Result<()> {
        if model.n_loads() != self.n_loads() || model.n_links() != self.n_links() {
            return Err(Error::Dimension(format!(
                "limits cover {} nodes / {} links, model has {} / {}",
                self.n_loads(),
                self.n_links(),
                model.n_loads(),
                model.n_links()
            )));
        }
        Ok(())
    }
}

/// True once the deviation reaches the dead zone (the boundary activates).
pub fn check_activation(omega: f64, limits: &ControlLimits) -> bool {
    omega <= -limits.activation_pu()
}

/// Controls with every link at its support limit and no shedding.
pub fn max_dc_controls(limits: &ControlLimits, steps: usize) -> Vec<Control> {
    let dc = limits.support_pu();
    vec![
        Control {
            shed: vec![0.0; limits.n_loads()],
            dc,
        };
        steps
    ]
}

/// ω̂_1..ω̂_T with every link held at its support limit and no shedding.
pub fn predict_max_dc(
    model: &KoopmanModel,
    window: &Window<'_>,
    limits: &ControlLimits,
    horizon: usize,
) -> Result<Vec<f64>> {
    limits.check_model(model)?;
    predict_rollout(model, window, &max_dc_controls(limits, horizon), horizon)
}

/// Step at which the shedding decision is made: the activation step, or the
/// first step whose `window_len` window lies entirely after the disturbance
/// at `k_dist` when that is later. Windows straddling the disturbance are
/// outside the data the model was fitted on.
pub fn decision_step(k_act: usize, k_dist: usize, window_len: usize) -> usize {
    k_act.max(k_dist + window_len.max(1) - 1)
}

/// True iff the predicted nadir is strictly below ω_min.
pub fn needs_shedding(prediction: &[f64], limits: &ControlLimits) -> bool {
    prediction.iter().any(|&w| w < limits.omega_min)
}

/// Rounds each amount to the nearest multiple of `d`, ties upward.
pub fn quantize(amounts: &[f64], d: f64) -> Vec<f64> {
    amounts.iter().map(|&u| (u / d + 0.5).floor() * d).collect()
}

/// Saturated LQR command `clamp(−K (g − g_ref))`, p.u.
pub fn lqr_step(
    g: &DVector<f64>,
    g_ref: &DVector<f64>,
    sol: &RiccatiSolution,
    limits: &ControlLimits,
) -> Vec<f64> {
    let u = -(&sol.k * (g - g_ref));
    u.iter()
        .enumerate()
        .map(|(k, &v)| {
            let (lo, hi) = limits.ud_bounds_pu(k);
            v.clamp(lo, hi)
        })
        .collect()
}
