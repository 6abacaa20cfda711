use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{GridModel, Scenario, TrajectoryRecord};
use crate::{Error, Result};

/// Measurements available to a policy at sample `step`: the full history of
/// ω and y up to and including the current sample.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub step: usize,
    pub t: f64,
    pub omega: &'a [f64],
    pub y: &'a [Vec<f64>],
}

/// Control held over one sample interval: shedding ratios per load node and
/// DC reference deviations per link (p.u. on the grid base).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Control {
    pub shed: Vec<f64>,
    pub dc: Vec<f64>,
}

impl Control {
    pub fn zeros(n_loads: usize, n_links: usize) -> Self {
        Control {
            shed: vec![0.0; n_loads],
            dc: vec![0.0; n_links],
        }
    }
}

pub trait Policy {
    fn act(&mut self, obs: &Observation<'_>) -> Result<Control>;
}

impl<F> Policy for F
where
    F: FnMut(&Observation<'_>) -> Result<Control>,
{
    fn act(&mut self, obs: &Observation<'_>) -> Result<Control> {
        self(obs)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimOptions {
    /// RK4 substeps per sample interval.
    pub substeps: usize,
}

impl Default for SimOptions {
    fn default() -> Self {
        SimOptions { substeps: 4 }
    }
}

/// Per-scenario plant parameters in p.u. (after inertia scaling and trips).
///
/// State layout: `[ω, ΔPm_1..n, z_1..p, p_dc_1..q]` where `z_j` is the
/// low-pass filtered frequency seen by the motor share of load node j.
#[derive(Debug, Clone)]
pub struct Plant {
    pub inertia: f64,
    pub damping: f64,
    gain: Vec<f64>,
    gov_tc: Vec<f64>,
    headroom_lo: Vec<f64>,
    headroom_hi: Vec<f64>,
    /// Generation lost per machine once the disturbance is active.
    lost: Vec<f64>,
    step_deficit: f64,
    load: Vec<f64>,
    motor: Vec<f64>,
    motor_tc: Vec<f64>,
    link_sign: Vec<f64>,
    link_lag: Vec<f64>,
    link_ramp: Vec<f64>,
    sensitivity: Vec<Vec<f64>>,
    n_machines: usize,
    n_loads: usize,
    n_links: usize,
}

/// Inputs held constant over one integration interval.
#[derive(Debug, Clone)]
pub(crate) struct Inputs<'a> {
    pub disturbed: bool,
    pub shed: &'a [f64],
    pub dc: &'a [f64],
    pub load_noise: &'a [f64],
}

impl Plant {
    pub fn new(grid: &GridModel, scenario: &Scenario) -> Self {
        let base = grid.base_mw;
        let n = grid.n_machines();
        let mut remaining = vec![1.0; n];
        let mut lost = vec![0.0; n];
        for &i in &scenario.trips {
            let m = &grid.machines[i];
            remaining[i] = 1.0 - m.unit_mw / m.capacity_mw;
            lost[i] = m.unit_mw / base;
        }
        let machines = grid.machines.iter().zip(&remaining);
        Plant {
            inertia: scenario.inertia_scale
                * machines.clone().map(|(m, r)| m.inertia * r).sum::<f64>(),
            damping: machines.clone().map(|(m, r)| m.damping * r).sum(),
            gain: machines.clone().map(|(m, r)| m.governor_gain * r).collect(),
            gov_tc: grid
                .machines
                .iter()
                .map(|m| m.governor_time_constant)
                .collect(),
            headroom_lo: machines
                .clone()
                .map(|(m, r)| -m.dispatch_mw * r / base)
                .collect(),
            headroom_hi: machines
                .map(|(m, r)| (m.capacity_mw - m.dispatch_mw) * r / base)
                .collect(),
            lost,
            step_deficit: scenario.step_deficit_mw / base,
            load: grid.loads.iter().map(|l| l.base_mw / base).collect(),
            motor: grid
                .loads
                .iter()
                .map(|l| l.base_mw / base * l.dynamic_fraction * l.motor_damping)
                .collect(),
            motor_tc: grid.loads.iter().map(|l| l.motor_time_constant).collect(),
            link_sign: grid.hvdc.iter().map(|h| h.end.injection_sign()).collect(),
            link_lag: grid.hvdc.iter().map(|h| h.lag_s).collect(),
            link_ramp: grid.hvdc.iter().map(|h| h.ramp_mw_per_s / base).collect(),
            sensitivity: grid.voltage_sensitivity.clone(),
            n_machines: n,
            n_loads: grid.n_loads(),
            n_links: grid.n_links(),
        }
    }

    pub fn state_dim(&self) -> usize {
        1 + self.n_machines + self.n_loads + self.n_links
    }

    fn deficit(&self, disturbed: bool) -> f64 {
        if disturbed {
            self.lost.iter().sum::<f64>() + self.step_deficit
        } else {
            0.0
        }
    }

    fn motor_deviation(&self, x: &[f64], shed: &[f64], j: usize) -> f64 {
        let z = x[1 + self.n_machines + j];
        (1.0 - shed[j]) * self.motor[j] * (x[0] - z)
    }

    /// Net accelerating power (p.u.) in state `x`; equals `M·dω/dt`.
    pub(crate) fn accelerating_power(&self, x: &[f64], u: &Inputs<'_>) -> f64 {
        let nm = self.n_machines;
        let nl = self.n_loads;
        let mech: f64 = x[1..1 + nm].iter().sum();
        let dc: f64 = (0..self.n_links)
            .map(|k| self.link_sign[k] * x[1 + nm + nl + k])
            .sum();
        let shed: f64 = (0..nl).map(|j| u.shed[j] * self.load[j]).sum();
        let motor: f64 = (0..nl).map(|j| self.motor_deviation(x, u.shed, j)).sum();
        let noise: f64 = u.load_noise.iter().sum();
        mech + dc + shed - self.deficit(u.disturbed) - motor - noise - self.damping * x[0]
    }

    pub(crate) fn derivative(&self, x: &[f64], u: &Inputs<'_>, dx: &mut [f64]) {
        let nm = self.n_machines;
        let nl = self.n_loads;
        let omega = x[0];
        dx[0] = self.accelerating_power(x, u) / self.inertia;
        for i in 0..nm {
            let pm = x[1 + i];
            let mut d = (-pm - self.gain[i] * omega) / self.gov_tc[i];
            if (pm >= self.headroom_hi[i] && d > 0.0) || (pm <= self.headroom_lo[i] && d < 0.0) {
                d = 0.0;
            }
            dx[1 + i] = d;
        }
        for j in 0..nl {
            let z = x[1 + nm + j];
            dx[1 + nm + j] = (omega - z) / self.motor_tc[j];
        }
        for k in 0..self.n_links {
            let p = x[1 + nm + nl + k];
            let rate = (u.dc[k] - p) / self.link_lag[k];
            dx[1 + nm + nl + k] = rate.clamp(-self.link_ramp[k], self.link_ramp[k]);
        }
    }

    /// Voltage proxies for the current state.
    pub(crate) fn voltages(&self, x: &[f64], u: &Inputs<'_>) -> Vec<f64> {
        let nm = self.n_machines;
        let nl = self.n_loads;
        let mut injection = Vec::with_capacity(nm + self.n_links + nl);
        for i in 0..nm {
            let lost = if u.disturbed { self.lost[i] } else { 0.0 };
            injection.push(x[1 + i] - lost);
        }
        for k in 0..self.n_links {
            injection.push(self.link_sign[k] * x[1 + nm + nl + k]);
        }
        for j in 0..nl {
            injection.push(
                u.shed[j] * self.load[j] - self.motor_deviation(x, u.shed, j) - u.load_noise[j],
            );
        }
        self.sensitivity
            .iter()
            .map(|row| 1.0 + row.iter().zip(&injection).map(|(s, p)| s * p).sum::<f64>())
            .collect()
    }

    /// Headroom-limited governor outputs are kept inside their band after
    /// each integration step.
    fn clamp_governors(&self, x: &mut [f64]) {
        for i in 0..self.n_machines {
            x[1 + i] = x[1 + i].clamp(self.headroom_lo[i], self.headroom_hi[i]);
        }
    }

    pub(crate) fn rk4_step(&self, x: &mut [f64], u: &Inputs<'_>, h: f64, work: &mut Rk4Work) {
        let n = x.len();
        let Rk4Work {
            k1,
            k2,
            k3,
            k4,
            tmp,
        } = work;
        self.derivative(x, u, k1);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k1[i];
        }
        self.derivative(tmp, u, k2);
        for i in 0..n {
            tmp[i] = x[i] + 0.5 * h * k2[i];
        }
        self.derivative(tmp, u, k3);
        for i in 0..n {
            tmp[i] = x[i] + h * k3[i];
        }
        self.derivative(tmp, u, k4);
        for i in 0..n {
            x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        self.clamp_governors(x);
    }
}

pub(crate) struct Rk4Work {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4Work {
    pub(crate) fn new(n: usize) -> Self {
        Rk4Work {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
        }
    }
}

pub fn simulate(
    grid: &GridModel,
    scenario: &Scenario,
    policy: Option<&mut dyn Policy>,
) -> Result<TrajectoryRecord> {
    simulate_with(grid, scenario, policy, SimOptions::default())
}

/// Fixed-step RK4 simulation of `scenario`, sampled every `scenario.dt`.
///
/// Row k of the record holds ω and y at `t_k = k·dt` and the control held
/// over `[t_k, t_{k+1})`. The disturbance and the noise start at
/// [`Scenario::disturbance_index`].
pub fn simulate_with(
    grid: &GridModel,
    scenario: &Scenario,
    mut policy: Option<&mut dyn Policy>,
    options: SimOptions,
) -> Result<TrajectoryRecord> {
    grid.validate()?;
    scenario.validate(grid)?;
    if options.substeps == 0 {
        return Err(Error::Config("substeps must be >= 1".into()));
    }
    let plant = Plant::new(grid, scenario);
    let n_samples = scenario.n_samples();
    let k_dist = scenario.disturbance_index();
    let nl = grid.n_loads();
    let nd = grid.n_links();
    let ud_bounds: Vec<(f64, f64)> = (0..nd).map(|k| grid.ud_bounds_pu(k)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(scenario.noise.as_ref().map_or(0, |n| n.seed));
    let noise = scenario.noise.as_ref().filter(|n| n.is_active());
    let load_noise_dist = noise
        .map(|n| Normal::new(0.0, n.load_amplitude_mw / grid.base_mw))
        .transpose()
        .map_err(|e| Error::Config(format!("noise: {e}")))?;
    let dc_noise_dist = noise
        .map(|n| Normal::new(0.0, n.dc_amplitude_mw / grid.base_mw))
        .transpose()
        .map_err(|e| Error::Config(format!("noise: {e}")))?;

    let mut x = vec![0.0; plant.state_dim()];
    let mut work = Rk4Work::new(x.len());
    let mut rec = TrajectoryRecord::with_capacity(scenario.dt, k_dist, n_samples);
    let mut shed_prev = vec![0.0; nl];
    let mut load_noise = vec![0.0; nl];
    let h = scenario.dt / options.substeps as f64;
    let dc_offset = 1 + grid.n_machines() + nl;

    for k in 0..n_samples {
        let t = k as f64 * scenario.dt;
        let disturbed = k >= k_dist;
        if disturbed {
            if let Some(dist) = &load_noise_dist {
                for v in load_noise.iter_mut() {
                    *v = dist.sample(&mut rng);
                }
            }
        }
        // Measurements at t_k use the shedding already in effect.
        let inputs = Inputs {
            disturbed,
            shed: &shed_prev,
            dc: &[],
            load_noise: &load_noise,
        };
        let y = plant.voltages(&x, &inputs);
        rec.omega.push(x[0]);
        rec.y.push(y);
        rec.dc_applied.push(x[dc_offset..dc_offset + nd].to_vec());

        let mut control = match policy.as_deref_mut() {
            Some(p) => p.act(&Observation {
                step: k,
                t,
                omega: &rec.omega,
                y: &rec.y,
            })?,
            None => Control::zeros(nl, nd),
        };
        check_control(&control, &shed_prev, &ud_bounds, t)?;
        if disturbed {
            if let Some(dist) = &dc_noise_dist {
                for (k, c) in control.dc.iter_mut().enumerate() {
                    let (lo, hi) = ud_bounds[k];
                    *c = (*c + dist.sample(&mut rng)).clamp(lo, hi);
                }
            }
        }
        rec.ul.push(control.shed.clone());
        rec.ud.push(control.dc.clone());
        shed_prev.clone_from(&control.shed);

        if k + 1 == n_samples {
            break;
        }
        // The disturbance becomes active from t_{k_dist} onward, so the
        // interval ending at sample k_dist is still undisturbed.
        let inputs = Inputs {
            disturbed,
            shed: &control.shed,
            dc: &control.dc,
            load_noise: &load_noise,
        };
        for _ in 0..options.substeps {
            plant.rk4_step(&mut x, &inputs, h, &mut work);
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { t: t + scenario.dt });
        }
    }
    Ok(rec)
}

fn check_control(c: &Control, shed_prev: &[f64], ud: &[(f64, f64)], t: f64) -> Result<()> {
    if c.shed.len() != shed_prev.len() || c.dc.len() != ud.len() {
        return Err(Error::Dimension(format!(
            "policy returned {} shed / {} dc entries, expected {} / {}",
            c.shed.len(),
            c.dc.len(),
            shed_prev.len(),
            ud.len()
        )));
    }
    for (j, (&s, &prev)) in c.shed.iter().zip(shed_prev).enumerate() {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Bounds(format!(
                "t = {t:.2}: shed ratio {s} at node {j} outside [0, 1]"
            )));
        }
        if s < prev {
            return Err(Error::Bounds(format!(
                "t = {t:.2}: shed ratio at node {j} decreased from {prev} to {s}"
            )));
        }
    }
    for (k, (&d, &(lo, hi))) in c.dc.iter().zip(ud).enumerate() {
        if !(d >= lo - 1e-12 && d <= hi + 1e-12) {
            return Err(Error::Bounds(format!(
                "t = {t:.2}: dc reference {d} on link {k} outside [{lo}, {hi}]"
            )));
        }
    }
    Ok(())
}
