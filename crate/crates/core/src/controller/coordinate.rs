use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{
    check_activation, decision_step, lqr_step, needs_shedding, predict_max_dc, solve_dare_model,
    solve_shedding, ControlLimits, LqrWeights, RiccatiSolution, ShedObjective, SheddingPlan,
    DEFAULT_HORIZON,
};
use crate::gridsim::{simulate, Control, GridModel, Observation, Scenario, TrajectoryRecord};
use crate::koopman::{KoopmanModel, Window, STEADY_STATE_SPAN_S};
use crate::units::absolute_hz;
use crate::{Error, Result};

/// DC support law after the shedding decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DcMode {
    /// Saturated LQR on the lifted state.
    #[default]
    Lqr,
    /// Every link held at its support limit.
    ConstantMax,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinationSettings {
    pub horizon: usize,
    pub objective: ShedObjective,
    pub dc_mode: DcMode,
}

impl Default for CoordinationSettings {
    fn default() -> Self {
        CoordinationSettings {
            horizon: DEFAULT_HORIZON,
            objective: ShedObjective::Quadratic,
            dc_mode: DcMode::Lqr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcCommand {
    pub step: usize,
    /// Reference deviation per link, p.u.
    pub ud: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoordinationTrace {
    pub record: TrajectoryRecord,
    pub activation_step: Option<usize>,
    /// Step whose window fed the max-DC prediction and the shedding decision.
    pub decision_step: Option<usize>,
    pub shed_required: bool,
    pub plan: Option<SheddingPlan>,
    /// DC commands from activation on.
    pub commands: Vec<DcCommand>,
    /// One-step-ahead model prediction of ω per sample (NaN where none).
    pub predicted: Vec<f64>,
    /// Max-DC forecast made at the decision step, aligned to samples (NaN
    /// outside the forecast).
    pub forecast: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinationSummary {
    pub activation_time_s: Option<f64>,
    pub decision_time_s: Option<f64>,
    pub shed_required: bool,
    pub shed_time_s: Option<f64>,
    pub shed_feasible: Option<bool>,
    pub shed_continuous_mw: Vec<f64>,
    pub shed_quantized_mw: Vec<f64>,
    pub shed_total_mw: f64,
    pub nadir_pu: f64,
    pub nadir_hz: f64,
    pub steady_state_pu: f64,
    pub steady_state_hz: f64,
    /// Σ_k Σ_links |u_d| Δt, p.u.·s.
    pub cumulative_dc_pu_s: f64,
    pub nadir_ok: bool,
    pub steady_state_ok: bool,
}

impl CoordinationTrace {
    pub fn activation_time(&self) -> Option<f64> {
        self.activation_step.map(|k| self.record.time(k))
    }

    pub fn nadir(&self) -> f64 {
        self.record.nadir()
    }

    pub fn steady_state(&self) -> f64 {
        self.record.steady_state(STEADY_STATE_SPAN_S)
    }

    /// Number of sample steps at which any shedding ratio changes.
    pub fn shed_changes(&self) -> usize {
        self.record.ul.windows(2).filter(|w| w[0] != w[1]).count()
            + usize::from(
                self.record
                    .ul
                    .first()
                    .is_some_and(|u| u.iter().any(|v| *v != 0.0)),
            )
    }

    pub fn summary(&self, limits: &ControlLimits) -> CoordinationSummary {
        let plan = self.plan.as_ref();
        let nadir = self.nadir();
        let ss = self.steady_state();
        CoordinationSummary {
            activation_time_s: self.activation_time(),
            decision_time_s: self.decision_step.map(|k| self.record.time(k)),
            shed_required: self.shed_required,
            shed_time_s: plan.and_then(|p| p.shed_time),
            shed_feasible: plan.map(|p| p.feasible),
            shed_continuous_mw: plan.map_or_else(Vec::new, |p| p.continuous_mw.clone()),
            shed_quantized_mw: plan.map_or_else(Vec::new, |p| p.quantized_mw.clone()),
            shed_total_mw: plan.map_or(0.0, |p| p.total_quantized_mw()),
            nadir_pu: nadir,
            nadir_hz: absolute_hz(nadir),
            steady_state_pu: ss,
            steady_state_hz: absolute_hz(ss),
            cumulative_dc_pu_s: self.record.cumulative_dc(),
            nadir_ok: nadir >= limits.omega_min,
            steady_state_ok: ss >= limits.steady_state_floor,
        }
    }

    /// `t,omega,omega_pred,omega_forecast,active,ul_1..ul_p,ud_1..ud_q`;
    /// missing predictions are empty cells.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rec = &self.record;
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t", "omega", "omega_pred", "omega_forecast", "active"]
            .into_iter()
            .map(String::from)
            .collect::<Vec<_>>();
        header.extend((1..=rec.n_loads()).map(|i| format!("ul_{i}")));
        header.extend((1..=rec.n_links()).map(|i| format!("ud_{i}")));
        out.write_record(&header)?;
        let cell = |v: f64| {
            if v.is_nan() {
                String::new()
            } else {
                v.to_string()
            }
        };
        for k in 0..rec.len() {
            let active = self.activation_step.is_some_and(|a| k >= a);
            let mut row = vec![
                rec.time(k).to_string(),
                rec.omega[k].to_string(),
                cell(self.predicted[k]),
                cell(self.forecast[k]),
                u8::from(active).to_string(),
            ];
            row.extend(rec.ul[k].iter().map(f64::to_string));
            row.extend(rec.ud[k].iter().map(f64::to_string));
            out.write_record(&row)?;
        }
        out.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }
}

pub fn coordinate(
    grid: &GridModel,
    scenario: &Scenario,
    model: &KoopmanModel,
    limits: &ControlLimits,
    weights: &LqrWeights,
) -> Result<CoordinationTrace> {
    coordinate_with(
        grid,
        scenario,
        model,
        limits,
        weights,
        &CoordinationSettings::default(),
    )
}

/// Runs the plant under the coordinated policy.
///
/// Before activation nothing is commanded. At activation every link jumps to
/// its support limit. Once the measurement window lies entirely after the
/// disturbance (the activation step itself when it already does), the max-DC
/// forecast decides whether to shed; a plan is executed one sample later and
/// held. From the decision on, DC references follow the selected [`DcMode`].
pub fn coordinate_with(
    grid: &GridModel,
    scenario: &Scenario,
    model: &KoopmanModel,
    limits: &ControlLimits,
    weights: &LqrWeights,
    settings: &CoordinationSettings,
) -> Result<CoordinationTrace> {
    limits.validate()?;
    limits.check_model(model)?;
    if limits.n_loads() != grid.n_loads() || limits.n_links() != grid.n_links() {
        return Err(Error::Dimension("limits do not match the grid".into()));
    }
    if settings.horizon < 2 {
        return Err(Error::Config(
            "prediction horizon must be >= 2 steps".into(),
        ));
    }
    let riccati = match settings.dc_mode {
        DcMode::Lqr => Some(solve_dare_model(model, weights)?),
        DcMode::ConstantMax => None,
    };
    let n = scenario.n_samples();
    let mut policy = CoordinatingPolicy {
        model,
        limits,
        riccati,
        settings,
        g_ref: model.equilibrium().0,
        support: limits.support_pu(),
        k_dist: scenario.disturbance_index(),
        dt: scenario.dt,
        activation_step: None,
        decision_step: None,
        shed_required: false,
        plan: None,
        shed_ratios: None,
        shed_step: None,
        commands: Vec::new(),
        predicted: vec![f64::NAN; n],
        forecast: vec![f64::NAN; n],
    };
    let record = simulate(
        grid,
        scenario,
        Some(&mut |obs: &Observation<'_>| policy.act(obs)),
    )?;
    Ok(CoordinationTrace {
        record,
        activation_step: policy.activation_step,
        decision_step: policy.decision_step,
        shed_required: policy.shed_required,
        plan: policy.plan,
        commands: policy.commands,
        predicted: policy.predicted,
        forecast: policy.forecast,
    })
}

struct CoordinatingPolicy<'a> {
    model: &'a KoopmanModel,
    limits: &'a ControlLimits,
    riccati: Option<RiccatiSolution>,
    settings: &'a CoordinationSettings,
    g_ref: nalgebra::DVector<f64>,
    support: Vec<f64>,
    k_dist: usize,
    dt: f64,
    activation_step: Option<usize>,
    decision_step: Option<usize>,
    shed_required: bool,
    plan: Option<SheddingPlan>,
    shed_ratios: Option<Vec<f64>>,
    shed_step: Option<usize>,
    commands: Vec<DcCommand>,
    predicted: Vec<f64>,
    forecast: Vec<f64>,
}

impl CoordinatingPolicy<'_> {
    fn act(&mut self, obs: &Observation<'_>) -> Result<Control> {
        let k = obs.step;
        let p = self.limits.n_loads();
        if self.activation_step.is_none() {
            if !check_activation(obs.omega[k], self.limits) {
                return Ok(Control::zeros(p, self.support.len()));
            }
            self.activation_step = Some(k);
        }
        let wl = self.model.config.window_len();
        let clean = k >= decision_step(0, self.k_dist, wl);
        let window = if clean {
            Some(Window::ending_at(obs.omega, obs.y, k, wl)?)
        } else {
            None
        };

        if self.decision_step.is_none() {
            if let Some(window) = &window {
                self.decide(k, window)?;
            }
        }

        let shed = match (&self.shed_ratios, self.shed_step) {
            (Some(r), Some(s)) if k >= s => r.clone(),
            _ => vec![0.0; p],
        };
        let dc = match (self.decision_step, &self.riccati, &window) {
            (Some(_), Some(sol), Some(window)) if self.settings.dc_mode == DcMode::Lqr => {
                let g = self.model.lift(window)?.0;
                let ud = lqr_step(&g, &self.g_ref, sol, self.limits);
                if k + 1 < self.predicted.len() {
                    self.predicted[k + 1] = self.model.step(&g, &shed, &ud)[0];
                }
                ud
            }
            _ => {
                if let Some(window) = &window {
                    let g = self.model.lift(window)?.0;
                    if k + 1 < self.predicted.len() {
                        self.predicted[k + 1] = self.model.step(&g, &shed, &self.support)[0];
                    }
                }
                self.support.clone()
            }
        };
        self.commands.push(DcCommand {
            step: k,
            ud: dc.clone(),
        });
        Ok(Control { shed, dc })
    }

    fn decide(&mut self, k: usize, window: &Window<'_>) -> Result<()> {
        self.decision_step = Some(k);
        let horizon = self.settings.horizon;
        let forecast = predict_max_dc(self.model, window, self.limits, horizon)?;
        for (t, w) in forecast.iter().enumerate() {
            if let Some(slot) = self.forecast.get_mut(k + t) {
                *slot = *w;
            }
        }
        if needs_shedding(&forecast, self.limits) {
            self.shed_required = true;
            let mut plan = solve_shedding(
                self.model,
                window,
                self.limits,
                horizon,
                self.settings.objective,
            )?;
            if !plan.is_empty() {
                // Applied at the second step of the decision horizon.
                self.shed_step = Some(k + 1);
                plan.shed_time = Some((k + 1) as f64 * self.dt);
                self.shed_ratios = Some(plan.quantized_ratios(self.limits));
            }
            self.plan = Some(plan);
        }
        Ok(())
    }
}
