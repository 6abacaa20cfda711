//! Switched-mode view of feeder shedding and the mode-selection agreement
//! check between a learned and an accurate lifted model.
//!
//! Every combination of feeder levels is a mode `S_i: g' = A g + B_i`. Modes
//! are ranked by the Hamiltonian values `a_i = λᵀ(A g + B_i) + P_i`; the check
//! compares the selection made with the learned matrices (k*) against the one
//! made with the oracle matrices (i*), and reports the brute-force ranking on
//! the plant alongside.
//!
//! Mode indices are 1-based throughout this module.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::controller::{
    check_activation, condense, decision_step, ControlLimits, DEFAULT_HORIZON,
};
use crate::gridsim::{simulate, Control, GridModel, Observation, Scenario};
use crate::koopman::{
    fit_records, generate_dataset_with, DatasetOptions, KoopmanModel, ObservableConfig, Window,
};
use crate::{Error, Result};

/// Largest number of modes [`enumerate_modes`] will build.
pub const MODE_CAP: usize = 4096;
/// Default feeder count of the robustness check.
pub const DEFAULT_FEEDERS: usize = 3;
/// Default feeder quantum of the robustness check, MW.
pub const DEFAULT_FEEDER_QUANTUM_MW: f64 = 15.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Mode {
    /// 1-based.
    pub index: usize,
    /// Level of each feeder, `0..levels`.
    pub levels: Vec<usize>,
    /// Shed per load node, MW.
    pub shed_mw: Vec<f64>,
    /// Shed per load node as a ratio of the node load (the vector u^i).
    pub ratios: Vec<f64>,
    /// `B_l u^i`.
    pub b: DVector<f64>,
    /// `(T − 1) u^iᵀ Q1 u^i`: the one-shot shedding cost held from the second
    /// step to T.
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    pub n_feeders: usize,
    pub levels: usize,
    pub quanta_mw: Vec<f64>,
    /// Load node of each feeder.
    pub feeder_nodes: Vec<usize>,
    pub horizon: usize,
    /// State matrix of the model the mode inputs were built from.
    pub a: DMatrix<f64>,
    pub modes: Vec<Mode>,
}

impl ModeSet {
    pub fn len(&self) -> usize {
        self.modes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.modes.is_empty()
    }

    /// Mode `i` (1-based).
    pub fn mode(&self, i: usize) -> Result<&Mode> {
        i.checked_sub(1)
            .and_then(|j| self.modes.get(j))
            .ok_or_else(|| Error::Config(format!("mode {i} outside 1..={}", self.modes.len())))
    }

    pub fn costs(&self) -> Vec<f64> {
        self.modes.iter().map(|m| m.cost).collect()
    }
}

/// Builds every combination of feeder levels for `model`.
///
/// Feeder `j` sits at load node `j mod p` and level `ℓ` sheds
/// `ℓ / (levels − 1)` of its quantum, so there are `levels^N` modes, ordered
/// lexicographically with the first feeder as the most significant digit
/// (mode 1 sheds nothing, mode `levels^N` sheds everything).
pub fn enumerate_modes(
    quanta_mw: &[f64],
    levels: usize,
    model: &KoopmanModel,
    limits: &ControlLimits,
    horizon: usize,
) -> Result<ModeSet> {
    limits.validate()?;
    if model.n_loads() != limits.n_loads() {
        return Err(Error::Dimension(format!(
            "limits cover {} nodes, model has {}",
            limits.n_loads(),
            model.n_loads()
        )));
    }
    if levels < 2 {
        return Err(Error::Config("feeders need at least 2 levels".into()));
    }
    if horizon < 2 {
        return Err(Error::Config("horizon must be >= 2 steps".into()));
    }
    if quanta_mw.iter().any(|q| !(*q >= 0.0 && q.is_finite())) {
        return Err(Error::Config(
            "feeder quanta must be finite and >= 0".into(),
        ));
    }
    let n = quanta_mw.len();
    let count = u32::try_from(n)
        .ok()
        .and_then(|e| levels.checked_pow(e))
        .filter(|c| *c <= MODE_CAP)
        .ok_or(Error::ModeCount {
            modes: levels.saturating_pow(n.min(64) as u32),
            cap: MODE_CAP,
        })?;
    let p = limits.n_loads();
    if n > 0 && p == 0 {
        return Err(Error::Config("feeders need at least one load node".into()));
    }
    let feeder_nodes: Vec<usize> = (0..n).map(|j| j % p.max(1)).collect();

    let mut full = vec![0.0; p];
    for (j, q) in quanta_mw.iter().enumerate() {
        full[feeder_nodes[j]] += q;
    }
    for (node, (f, size)) in full.iter().zip(&limits.node_mw).enumerate() {
        if *f > *size {
            return Err(Error::Config(format!(
                "feeders at node {node} shed {f} MW, more than its {size} MW load"
            )));
        }
    }

    let top = (levels - 1) as f64;
    let mut modes = Vec::with_capacity(count);
    for index in 0..count {
        let mut digits = vec![0; n];
        let mut r = index;
        for d in digits.iter_mut().rev() {
            *d = r % levels;
            r /= levels;
        }
        let mut shed_mw = vec![0.0; p];
        for (j, &d) in digits.iter().enumerate() {
            shed_mw[feeder_nodes[j]] += d as f64 / top * quanta_mw[j];
        }
        let ratios: Vec<f64> = shed_mw
            .iter()
            .zip(&limits.node_mw)
            .map(|(s, size)| if *s > 0.0 { s / size } else { 0.0 })
            .collect();
        let b = &model.b_l * DVector::from_column_slice(&ratios);
        let cost = (horizon - 1) as f64
            * ratios
                .iter()
                .zip(&limits.node_mw)
                .map(|(u, size)| (u * size / limits.base_mw).powi(2))
                .sum::<f64>();
        modes.push(Mode {
            index: index + 1,
            levels: digits,
            shed_mw,
            ratios,
            b,
            cost,
        });
    }
    Ok(ModeSet {
        n_feeders: n,
        levels,
        quanta_mw: quanta_mw.to_vec(),
        feeder_nodes,
        horizon,
        a: model.a.clone(),
        modes,
    })
}

/// `A g + B_i` for mode `i` (1-based).
pub fn switched_step(g: &DVector<f64>, i: usize, modes: &ModeSet) -> Result<DVector<f64>> {
    let mode = modes.mode(i)?;
    if g.len() != modes.a.nrows() {
        return Err(Error::Dimension(format!(
            "state has {} entries, A is {}",
            g.len(),
            modes.a.nrows()
        )));
    }
    Ok(&modes.a * g + &mode.b)
}

/// Weights `w_i = v_i Π_{n<i} (1 − v_n)` for `i < 𝒩` and
/// `w_𝒩 = Π_{n<𝒩} (1 − v_n)` of the product form. `v_𝒩` is not used.
pub fn mode_weights(v: &[f64]) -> Vec<f64> {
    let mut w = Vec::with_capacity(v.len());
    let mut rest = 1.0;
    for (i, &vi) in v.iter().enumerate() {
        if i + 1 == v.len() {
            w.push(rest);
        } else {
            w.push(vi * rest);
            rest *= 1.0 - vi;
        }
    }
    w
}

/// The product form `Σ_i w_i(v) (A g + B_i)` with one switching input per
/// mode.
pub fn product_form_step(g: &DVector<f64>, v: &[f64], modes: &ModeSet) -> Result<DVector<f64>> {
    if v.len() != modes.len() {
        return Err(Error::Dimension(format!(
            "{} switching inputs for {} modes",
            v.len(),
            modes.len()
        )));
    }
    if v.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::Bounds("switching inputs must lie in [0, 1]".into()));
    }
    let ag = &modes.a * g;
    let mut out = DVector::zeros(ag.len());
    for (w, mode) in mode_weights(v).iter().zip(&modes.modes) {
        if *w != 0.0 {
            out += (&ag + &mode.b) * *w;
        }
    }
    Ok(out)
}

/// Terminal condition of the costate recursion.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum CostateBoundary {
    /// λ(T) = 0.
    #[default]
    Zero,
    /// λ(T) = c, a diagnostic that keeps the recursion from vanishing.
    Terminal(DVector<f64>),
}

impl CostateBoundary {
    pub fn name(&self) -> &'static str {
        match self {
            CostateBoundary::Zero => "zero",
            CostateBoundary::Terminal(_) => "terminal",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostateTrajectory {
    /// `lambda[t − 1]` is λ(t), t = 1..T.
    pub lambda: Vec<DVector<f64>>,
}

impl CostateTrajectory {
    pub fn horizon(&self) -> usize {
        self.lambda.len()
    }

    /// λ(t), 1-based.
    pub fn at(&self, t: usize) -> &DVector<f64> {
        &self.lambda[t - 1]
    }

    pub fn is_zero(&self) -> bool {
        self.lambda.iter().all(|l| l.iter().all(|v| *v == 0.0))
    }
}

/// Backward recursion `λ(t) = −Aᵀ λ(t+1) · Σ_i w_i(v(t))` from the boundary at
/// T, where `v(t)` is the one-hot switching input of `schedule[t − 1]`
/// (1-based modes among `n_modes`). The schedule needs at least T − 1
/// entries.
pub fn solve_costate(
    a: &DMatrix<f64>,
    horizon: usize,
    schedule: &[usize],
    n_modes: usize,
    boundary: &CostateBoundary,
) -> Result<CostateTrajectory> {
    if horizon == 0 {
        return Err(Error::Config("costate horizon must be >= 1".into()));
    }
    if schedule.len() + 1 < horizon {
        return Err(Error::Length {
            needed: horizon - 1,
            available: schedule.len(),
        });
    }
    if let Some(bad) = schedule.iter().find(|&&i| i == 0 || i > n_modes) {
        return Err(Error::Config(format!(
            "scheduled mode {bad} outside 1..={n_modes}"
        )));
    }
    let n = a.nrows();
    let terminal = match boundary {
        CostateBoundary::Zero => DVector::zeros(n),
        CostateBoundary::Terminal(c) if c.len() == n => c.clone(),
        CostateBoundary::Terminal(c) => {
            return Err(Error::Dimension(format!(
                "terminal costate has {} entries, A is {n}",
                c.len()
            )))
        }
    };
    let neg_at = -a.transpose();
    let mut lambda = vec![DVector::zeros(n); horizon];
    lambda[horizon - 1] = terminal;
    for t in (1..horizon).rev() {
        let mut v = vec![0.0; n_modes];
        v[schedule[t - 1] - 1] = 1.0;
        let factor: f64 = mode_weights(&v).iter().sum();
        lambda[t - 1] = &neg_at * &lambda[t] * factor;
    }
    Ok(CostateTrajectory { lambda })
}

/// `a_i = λᵀ(A g + B_i) + P_i` for every mode.
pub fn mode_hamiltonian_values(
    lambda: &DVector<f64>,
    g: &DVector<f64>,
    modes: &ModeSet,
) -> Result<Vec<f64>> {
    let n = modes.a.nrows();
    if lambda.len() != n || g.len() != n {
        return Err(Error::Dimension(format!(
            "costate {} and state {} entries, A is {n}",
            lambda.len(),
            g.len()
        )));
    }
    let base = lambda.dot(&(&modes.a * g));
    Ok(modes
        .modes
        .iter()
        .map(|m| base + lambda.dot(&m.b) + m.cost)
        .collect())
}

/// 1-based argmin; ties go to the lowest index. `None` when `values` is
/// empty or all NaN.
pub fn select_mode(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if v.is_nan() {
            continue;
        }
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i + 1)
}

/// Argmin restricted to the modes flagged in `allowed`.
fn select_among(values: &[f64], allowed: &[bool]) -> Option<usize> {
    let masked: Vec<f64> = values
        .iter()
        .zip(allowed)
        .map(|(v, ok)| if *ok { *v } else { f64::NAN })
        .collect();
    select_mode(&masked)
}

/// Which recursion supplies λ for the oracle values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostateSource {
    /// The learned model's λ is reused against the oracle matrices.
    #[default]
    Learned,
    /// λ is recomputed from the oracle A.
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prop1Settings {
    pub horizon: usize,
    pub boundary: CostateBoundary,
    pub costate_source: CostateSource,
    /// Skip the plant simulation of every mode.
    pub skip_brute_force: bool,
}

impl Default for Prop1Settings {
    fn default() -> Self {
        Prop1Settings {
            horizon: DEFAULT_HORIZON,
            boundary: CostateBoundary::Zero,
            costate_source: CostateSource::Learned,
            skip_brute_force: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSummary {
    pub index: usize,
    pub levels: Vec<usize>,
    pub shed_mw: Vec<f64>,
    pub cost: f64,
    /// a_i at t = 1 with the learned matrices.
    pub learned_value: f64,
    /// a_i at t = 1 with the oracle matrices.
    pub oracle_value: f64,
    /// Learned-model forecast keeps ω̂ ≥ ω_min.
    pub learned_feasible: bool,
    pub oracle_feasible: bool,
    /// Nadir on the plant, p.u.; absent when brute force was skipped.
    pub simulated_nadir: Option<f64>,
    pub simulated_feasible: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prop1Report {
    pub n_feeders: usize,
    pub n_modes: usize,
    pub boundary: String,
    pub costate_source: CostateSource,
    pub activation_step: Option<usize>,
    pub decision_step: usize,
    /// Selection with the learned matrices (1-based).
    pub k_star: usize,
    /// Selection with the oracle matrices (1-based).
    pub i_star: usize,
    /// Selections agree at every t of the horizon.
    pub k_uniform: bool,
    pub i_uniform: bool,
    pub holds: bool,
    /// Cheapest plant-feasible mode; absent when skipped or infeasible.
    pub brute_force: Option<usize>,
    /// No mode keeps the plant above ω_min.
    pub infeasible_scenario: bool,
    /// k* equals the brute-force mode; undefined for infeasible scenarios.
    pub learned_matches_brute_force: Option<bool>,
    pub modes: Vec<ModeSummary>,
}

/// Measurement context at the shedding decision of `scenario`: the plant runs
/// with DC support from activation, and the decision follows the timing of
/// the coordinated controller (activation at the latest, disturbance step
/// when the dead zone is never reached).
struct DecisionContext {
    activation_step: Option<usize>,
    decision_step: usize,
    omega: Vec<f64>,
    y: Vec<Vec<f64>>,
}

fn decision_context(
    grid: &GridModel,
    scenario: &Scenario,
    limits: &ControlLimits,
    window_len: usize,
) -> Result<DecisionContext> {
    let support = limits.support_pu();
    let p = limits.n_loads();
    let mut k_act = None;
    let mut policy = |obs: &Observation<'_>| -> Result<Control> {
        if k_act.is_none() && check_activation(obs.omega[obs.step], limits) {
            k_act = Some(obs.step);
        }
        Ok(match k_act {
            Some(_) => Control {
                shed: vec![0.0; p],
                dc: support.clone(),
            },
            None => Control::zeros(p, support.len()),
        })
    };
    let rec = simulate(grid, scenario, Some(&mut policy))?;
    let k_dist = scenario.disturbance_index();
    let k_dec = decision_step(k_act.unwrap_or(k_dist), k_dist, window_len);
    if k_dec >= rec.len() {
        return Err(Error::InsufficientHistory {
            needed: k_dec + 1,
            available: rec.len(),
        });
    }
    Ok(DecisionContext {
        activation_step: k_act,
        decision_step: k_dec,
        omega: rec.omega,
        y: rec.y,
    })
}

/// Plant nadir with DC support from activation and mode shedding held from
/// one step after the decision.
fn simulate_mode(
    grid: &GridModel,
    scenario: &Scenario,
    limits: &ControlLimits,
    k_dec: usize,
    ratios: &[f64],
) -> Result<f64> {
    let support = limits.support_pu();
    let p = limits.n_loads();
    let mut active = false;
    let mut policy = |obs: &Observation<'_>| -> Result<Control> {
        active = active || check_activation(obs.omega[obs.step], limits);
        let shed = if obs.step > k_dec {
            ratios.to_vec()
        } else {
            vec![0.0; p]
        };
        let dc = if active {
            support.clone()
        } else {
            vec![0.0; support.len()]
        };
        Ok(Control { shed, dc })
    };
    Ok(simulate(grid, scenario, Some(&mut policy))?.nadir())
}

/// Forecast feasibility of every mode on `model` from `g1`, DC at support.
fn model_feasibility(
    model: &KoopmanModel,
    g1: &DVector<f64>,
    modes: &ModeSet,
    limits: &ControlLimits,
) -> Vec<bool> {
    let problem = condense(model, g1, &limits.support_pu(), modes.horizon);
    modes
        .modes
        .iter()
        .map(|m| {
            problem
                .predict(&m.ratios)
                .iter()
                .all(|w| *w >= limits.omega_min)
        })
        .collect()
}

/// Values a_i(t) for t = 1..T, each mode rolled out under its own input.
fn value_table(
    costate: &CostateTrajectory,
    g1: &DVector<f64>,
    modes: &ModeSet,
) -> Result<Vec<Vec<f64>>> {
    let horizon = costate.horizon();
    let mut table = vec![vec![0.0; modes.len()]; horizon];
    for (i, mode) in modes.modes.iter().enumerate() {
        let mut g = g1.clone();
        for (t, row) in table.iter_mut().enumerate() {
            let lam = &costate.lambda[t];
            let next = &modes.a * &g + &mode.b;
            row[i] = lam.dot(&next) + mode.cost;
            g = next;
        }
    }
    Ok(table)
}

/// Selection at t = 1 among the allowed modes and whether it is the same at
/// every t. Falls back to the last (largest) mode when none is allowed.
fn select_over_horizon(table: &[Vec<f64>], allowed: &[bool]) -> (usize, bool) {
    let fallback = allowed.len();
    let pick = |row: &[f64]| select_among(row, allowed).unwrap_or(fallback);
    let first = pick(&table[0]);
    let uniform = table.iter().all(|row| pick(row) == first);
    (first, uniform)
}

/// Compares the mode selected with the learned matrices (k*) against the one
/// selected with the oracle matrices (i*) for `scenario`.
///
/// Both selections minimize the Hamiltonian values over the modes whose own
/// forecast keeps ω̂ ≥ ω_min; with λ ≡ 0 the unrestricted minimum would always
/// be the mode that sheds nothing. The plant ranking (cheapest mode whose
/// simulated nadir stays above ω_min) is reported alongside.
pub fn check_prop1(
    grid: &GridModel,
    scenario: &Scenario,
    learned: &KoopmanModel,
    oracle: &KoopmanModel,
    quanta_mw: &[f64],
    levels: usize,
    limits: &ControlLimits,
    settings: &Prop1Settings,
) -> Result<Prop1Report> {
    if learned.dim() != oracle.dim()
        || learned.n_loads() != oracle.n_loads()
        || learned.n_links() != oracle.n_links()
        || learned.config.window_len() != oracle.config.window_len()
    {
        return Err(Error::Dimension(
            "learned and oracle models must share observable dimensions".into(),
        ));
    }
    let horizon = settings.horizon;
    let learned_modes = enumerate_modes(quanta_mw, levels, learned, limits, horizon)?;
    let oracle_modes = enumerate_modes(quanta_mw, levels, oracle, limits, horizon)?;
    let n_modes = learned_modes.len();

    let wl = learned.config.window_len();
    let ctx = decision_context(grid, scenario, limits, wl)?;
    let window = Window::ending_at(&ctx.omega, &ctx.y, ctx.decision_step, wl)?;
    let g_learned = learned.lift(&window)?.0;
    let g_oracle = oracle.lift(&window)?.0;

    let schedule = vec![n_modes; horizon];
    let lam_learned = solve_costate(&learned.a, horizon, &schedule, n_modes, &settings.boundary)?;
    let lam_oracle = match settings.costate_source {
        CostateSource::Learned => lam_learned.clone(),
        CostateSource::Oracle => {
            solve_costate(&oracle.a, horizon, &schedule, n_modes, &settings.boundary)?
        }
    };
    let learned_table = value_table(&lam_learned, &g_learned, &learned_modes)?;
    let oracle_table = value_table(&lam_oracle, &g_oracle, &oracle_modes)?;
    let learned_ok = model_feasibility(learned, &g_learned, &learned_modes, limits);
    let oracle_ok = model_feasibility(oracle, &g_oracle, &oracle_modes, limits);
    let (k_star, k_uniform) = select_over_horizon(&learned_table, &learned_ok);
    let (i_star, i_uniform) = select_over_horizon(&oracle_table, &oracle_ok);

    let simulated: Vec<Option<f64>> = if settings.skip_brute_force {
        vec![None; n_modes]
    } else {
        learned_modes
            .modes
            .iter()
            .map(|m| simulate_mode(grid, scenario, limits, ctx.decision_step, &m.ratios).map(Some))
            .collect::<Result<_>>()?
    };
    let sim_ok: Vec<Option<bool>> = simulated
        .iter()
        .map(|n| n.map(|v| v >= limits.omega_min))
        .collect();
    let brute_force = if settings.skip_brute_force {
        None
    } else {
        let costs: Vec<f64> = learned_modes.costs();
        let allowed: Vec<bool> = sim_ok.iter().map(|f| f.unwrap_or(false)).collect();
        select_among(&costs, &allowed)
    };
    let infeasible_scenario = !settings.skip_brute_force && brute_force.is_none();

    let modes = learned_modes
        .modes
        .iter()
        .enumerate()
        .map(|(i, m)| ModeSummary {
            index: m.index,
            levels: m.levels.clone(),
            shed_mw: m.shed_mw.clone(),
            cost: m.cost,
            learned_value: learned_table[0][i],
            oracle_value: oracle_table[0][i],
            learned_feasible: learned_ok[i],
            oracle_feasible: oracle_ok[i],
            simulated_nadir: simulated[i],
            simulated_feasible: sim_ok[i],
        })
        .collect();
    Ok(Prop1Report {
        n_feeders: learned_modes.n_feeders,
        n_modes,
        boundary: settings.boundary.name().to_string(),
        costate_source: settings.costate_source,
        activation_step: ctx.activation_step,
        decision_step: ctx.decision_step,
        k_star,
        i_star,
        k_uniform,
        i_uniform,
        holds: k_star == i_star,
        brute_force,
        infeasible_scenario,
        learned_matches_brute_force: brute_force.map(|b| b == k_star),
        modes,
    })
}

/// Accurate reference model: same observable configuration (and placed
/// features) as `like`, fitted on `n` trajectories without white-noise
/// excitation.
pub fn fit_oracle(
    grid: &GridModel,
    like: &KoopmanModel,
    n: usize,
    seed: u64,
    ridge: f64,
) -> Result<KoopmanModel> {
    let opts = DatasetOptions {
        load_noise_mw: 0.0,
        dc_noise_mw: 0.0,
        dc_step_probability: 0.9,
        shed_probability: 0.7,
        dt: like.config.dt,
        ..DatasetOptions::default()
    };
    let data = generate_dataset_with(grid, n.max(1), 1, seed, &opts)?;
    let records: Vec<_> = data.train.iter().map(|s| &s.record).collect();
    let config: ObservableConfig = like.config.clone();
    fit_records(&records, &config, ridge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::koopman::Dictionary;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_model(dim: usize, p: usize, seed: u64) -> KoopmanModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-0.4..0.4));
        let b_l = DMatrix::from_fn(dim, p, |_, _| rng.random_range(-1.0..1.0));
        let b_d = DMatrix::from_fn(dim, 2, |_, _| rng.random_range(-1.0..1.0));
        let config = ObservableConfig {
            delay: 0.1 * (dim - 1) as f64,
            dt: 0.1,
            dictionary: Dictionary::DelayOnly,
            include_voltage: false,
        };
        KoopmanModel::new(a, b_l, b_d, config, 0).unwrap()
    }

    fn limits() -> ControlLimits {
        ControlLimits::for_grid(&GridModel::desk_scale())
    }

    #[test]
    fn no_feeders_give_one_empty_mode() {
        let m = toy_model(3, 3, 1);
        let set = enumerate_modes(&[], 2, &m, &limits(), 10).unwrap();
        assert_eq!(set.len(), 1);
        assert!(set.modes[0].b.iter().all(|v| *v == 0.0));
        assert_eq!(set.modes[0].cost, 0.0);
    }

    #[test]
    fn two_feeders_enumerate_lexicographically() {
        let m = toy_model(3, 3, 1);
        let set = enumerate_modes(&[10.0, 20.0], 2, &m, &limits(), 10).unwrap();
        let levels: Vec<Vec<usize>> = set.modes.iter().map(|m| m.levels.clone()).collect();
        assert_eq!(levels, vec![vec![0, 0], vec![0, 1], vec![1, 0], vec![1, 1]]);
        assert_eq!(
            set.modes.iter().map(|m| m.index).collect::<Vec<_>>(),
            vec![1, 2, 3, 4]
        );
        assert_eq!(set.modes[1].shed_mw, vec![0.0, 20.0, 0.0]);
    }

    #[test]
    fn all_ones_mode_matches_direct_product() {
        let m = toy_model(4, 3, 2);
        let l = limits();
        let q = [6.0, 8.0, 4.0];
        let set = enumerate_modes(&q, 2, &m, &l, 10).unwrap();
        let last = set.modes.last().unwrap();
        let u: Vec<f64> = q.iter().zip(&l.node_mw).map(|(q, p)| q / p).collect();
        let direct = &m.b_l * DVector::from_vec(u.clone());
        assert!((&last.b - direct).norm() < 1e-14);
        let cost: f64 = q.iter().map(|q| (q / l.base_mw).powi(2)).sum::<f64>() * 9.0;
        assert!((last.cost - cost).abs() < 1e-14);
    }

    #[test]
    fn multi_level_feeders() {
        let m = toy_model(3, 3, 1);
        let set = enumerate_modes(&[9.0, 9.0], 4, &m, &limits(), 10).unwrap();
        assert_eq!(set.len(), 16);
        assert_eq!(set.modes[1].shed_mw, vec![0.0, 3.0, 0.0]);
        assert_eq!(set.modes[15].shed_mw, vec![9.0, 9.0, 0.0]);
    }

    #[test]
    fn too_many_feeders_are_rejected() {
        let m = toy_model(3, 3, 1);
        let q = vec![0.1; 13];
        assert!(matches!(
            enumerate_modes(&q, 2, &m, &limits(), 10),
            Err(Error::ModeCount { cap: MODE_CAP, .. })
        ));
        assert_eq!(
            enumerate_modes(&vec![0.1; 12], 2, &m, &limits(), 10)
                .unwrap()
                .len(),
            4096
        );
    }

    #[test]
    fn switched_step_examples() {
        let m = toy_model(3, 3, 3);
        let set = enumerate_modes(&[10.0, 20.0], 2, &m, &limits(), 10).unwrap();
        let g = DVector::from_vec(vec![0.3, -0.1, 0.2]);
        assert!((switched_step(&g, 1, &set).unwrap() - &m.a * &g).norm() < 1e-15);
        let zero = DVector::zeros(3);
        assert!((switched_step(&zero, 4, &set).unwrap() - &set.modes[3].b).norm() < 1e-15);
        assert!(switched_step(&g, 0, &set).is_err());
        assert!(switched_step(&g, 5, &set).is_err());
    }

    #[test]
    fn product_form_with_two_modes_expands_by_hand() {
        // Two modes: f = (A g + B_1) v_1 + (A g + B_2)(1 − v_1).
        let m = toy_model(3, 3, 4);
        let set = enumerate_modes(&[10.0], 2, &m, &limits(), 10).unwrap();
        let g = DVector::from_vec(vec![0.1, 0.2, -0.3]);
        let ag = &m.a * &g;
        let by_hand = |v1: f64| (&ag + &set.modes[0].b) * v1 + (&ag + &set.modes[1].b) * (1.0 - v1);
        let f = product_form_step(&g, &[0.0, 1.0], &set).unwrap();
        assert!((&f - by_hand(0.0)).norm() < 1e-15);
        assert!((&f - (&ag + &set.modes[1].b)).norm() < 1e-15);
        let f = product_form_step(&g, &[0.3, 0.0], &set).unwrap();
        assert!((&f - by_hand(0.3)).norm() < 1e-14);
    }

    #[test]
    fn product_form_is_exact_on_one_hot_inputs() {
        let m = toy_model(4, 3, 5);
        let g = DVector::from_vec(vec![0.1, -0.2, 0.05, 0.4]);
        for n in 0..=3 {
            let q = vec![3.0; n];
            let set = enumerate_modes(&q, 2, &m, &limits(), 10).unwrap();
            for i in 1..=set.len() {
                let mut v = vec![0.0; set.len()];
                v[i - 1] = 1.0;
                let f = product_form_step(&g, &v, &set).unwrap();
                assert!(
                    (&f - switched_step(&g, i, &set).unwrap()).norm() < 1e-14,
                    "n = {n}, i = {i}"
                );
            }
        }
    }

    proptest! {
        #[test]
        fn weights_lie_on_the_simplex(v in proptest::collection::vec(0.0f64..=1.0, 1..10)) {
            let w = mode_weights(&v);
            prop_assert!(w.iter().all(|x| (0.0..=1.0).contains(x)));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn relaxed_minimum_is_attained_at_a_vertex(
            a in proptest::collection::vec(-10.0f64..10.0, 2..8),
            seed in 0u64..1000,
        ) {
            let best = a.iter().copied().fold(f64::INFINITY, f64::min);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..200 {
                let v: Vec<f64> = (0..a.len()).map(|_| rng.random_range(0.0..=1.0)).collect();
                let h: f64 = mode_weights(&v).iter().zip(&a).map(|(w, a)| w * a).sum();
                prop_assert!(h >= best - 1e-12);
            }
            let k = select_mode(&a).unwrap();
            let mut v = vec![0.0; a.len()];
            v[k - 1] = 1.0;
            let h: f64 = mode_weights(&v).iter().zip(&a).map(|(w, a)| w * a).sum();
            prop_assert!((h - best).abs() < 1e-12);
        }

        #[test]
        fn argmin_is_shift_invariant(
            a in proptest::collection::vec(-10.0f64..10.0, 1..8),
            c in -100.0f64..100.0,
        ) {
            let shifted: Vec<f64> = a.iter().map(|x| x + c).collect();
            let k = select_mode(&a).unwrap();
            let ks = select_mode(&shifted).unwrap();
            prop_assert!(k == ks || (shifted[k - 1] - shifted[ks - 1]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_boundary_gives_zero_costate() {
        for seed in 0..5 {
            let m = toy_model(5, 3, seed);
            let sched = vec![2; 20];
            let lam = solve_costate(&m.a, 20, &sched, 4, &CostateBoundary::Zero).unwrap();
            assert_eq!(lam.horizon(), 20);
            assert!(lam.is_zero());
        }
    }

    #[test]
    fn terminal_boundary_matches_closed_form() {
        let m = toy_model(4, 3, 7);
        let c = DVector::from_vec(vec![1.0, -0.5, 0.25, 2.0]);
        let t_end = 8;
        let sched = vec![3; t_end];
        let lam = solve_costate(
            &m.a,
            t_end,
            &sched,
            4,
            &CostateBoundary::Terminal(c.clone()),
        )
        .unwrap();
        let neg_at = -m.a.transpose();
        for t in 1..=t_end {
            let mut expect = c.clone();
            for _ in 0..(t_end - t) {
                expect = &neg_at * expect;
            }
            assert!(
                (lam.at(t) - &expect).norm() <= 1e-12 * (1.0 + expect.norm()),
                "t = {t}"
            );
        }
    }

    #[test]
    fn costate_rejects_bad_schedules() {
        let m = toy_model(3, 3, 1);
        assert!(solve_costate(&m.a, 0, &[], 2, &CostateBoundary::Zero).is_err());
        assert!(solve_costate(&m.a, 5, &[1, 1], 2, &CostateBoundary::Zero).is_err());
        assert!(solve_costate(&m.a, 3, &[1, 3], 2, &CostateBoundary::Zero).is_err());
        let c = DVector::zeros(2);
        assert!(solve_costate(&m.a, 3, &[1, 1], 2, &CostateBoundary::Terminal(c)).is_err());
    }

    #[test]
    fn zero_costate_values_are_the_costs() {
        let m = toy_model(4, 3, 8);
        let set = enumerate_modes(&[5.0, 7.0, 3.0], 2, &m, &limits(), 50).unwrap();
        let g = DVector::from_vec(vec![0.2, 0.1, -0.3, 0.05]);
        let a = mode_hamiltonian_values(&DVector::zeros(4), &g, &set).unwrap();
        assert_eq!(a, set.costs());
        for i in 0..a.len() {
            for j in 0..a.len() {
                assert_eq!(a[i] - a[j], set.modes[i].cost - set.modes[j].cost);
            }
        }
    }

    #[test]
    fn identical_inputs_give_identical_values() {
        let mut m = toy_model(3, 3, 9);
        m.b_l.fill(0.0);
        let mut set = enumerate_modes(&[5.0, 5.0], 2, &m, &limits(), 10).unwrap();
        for mode in &mut set.modes {
            mode.cost = 1.5;
        }
        let lam = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let g = DVector::from_vec(vec![1.0, 2.0, 3.0]);
        let a = mode_hamiltonian_values(&lam, &g, &set).unwrap();
        assert!(a.iter().all(|v| (v - a[0]).abs() < 1e-15));
    }

    #[test]
    fn diagnostic_values_match_hand_minimized_hamiltonian() {
        // Four modes from two binary feeders; the Hamiltonian
        // Σ_i w_i(v) (λᵀ(A g + B_i) + P_i) is minimized over a grid of
        // relaxed inputs and compared with the best mode value.
        let m = toy_model(3, 3, 10);
        let set = enumerate_modes(&[20.0, 30.0], 2, &m, &limits(), 10).unwrap();
        let lam = DVector::from_vec(vec![0.8, -0.4, 0.6]);
        let g = DVector::from_vec(vec![-0.2, 0.1, 0.3]);
        let a = mode_hamiltonian_values(&lam, &g, &set).unwrap();
        let ham = |v: &[f64]| -> f64 {
            let f = product_form_step(&g, v, &set).unwrap();
            let cost: f64 = mode_weights(v)
                .iter()
                .zip(&set.modes)
                .map(|(w, m)| w * m.cost)
                .sum();
            lam.dot(&f) + cost
        };
        for (i, ai) in a.iter().enumerate() {
            let mut v = vec![0.0; 4];
            v[i] = 1.0;
            assert!((ham(&v) - ai).abs() < 1e-12);
        }
        let mut best = f64::INFINITY;
        let steps = 10;
        for i in 0..=steps {
            for j in 0..=steps {
                for k in 0..=steps {
                    let v = [
                        i as f64 / steps as f64,
                        j as f64 / steps as f64,
                        k as f64 / steps as f64,
                        0.0,
                    ];
                    best = best.min(ham(&v));
                }
            }
        }
        let k = select_mode(&a).unwrap();
        assert!((best - a[k - 1]).abs() < 1e-12, "{best} vs {}", a[k - 1]);
    }

    #[test]
    fn select_mode_examples() {
        assert_eq!(select_mode(&[3.0, 1.0, 2.0]), Some(2));
        assert_eq!(select_mode(&[1.0, 1.0, 2.0]), Some(1));
        assert_eq!(select_mode(&[]), None);
        assert_eq!(select_mode(&[f64::NAN, 4.0]), Some(2));
        let shifted: Vec<f64> = [3.0, 1.0, 2.0].iter().map(|v| v + 7.5).collect();
        assert_eq!(select_mode(&shifted), Some(2));
    }

    #[test]
    fn restricted_selection_falls_back_to_the_largest_mode() {
        let table = vec![vec![0.0, 1.0, 2.0]; 3];
        assert_eq!(select_over_horizon(&table, &[false, true, true]), (2, true));
        assert_eq!(
            select_over_horizon(&table, &[false, false, false]),
            (3, true)
        );
    }
}
