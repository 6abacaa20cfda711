//! Nonlinear center-of-inertia (COI) frequency simulator.
//!
//! The plant is an aggregated swing equation
//!
//! ```text
//! M·dω/dt = ΣΔPm + ΔP_dc + ΔP_shed − ΔP_deficit − ΔP_motor − ΔP_noise − D·ω
//! ```
//!
//! with first-order governors (headroom-limited), first-order motor-load
//! recovery on the dynamic share of each load node, and first-order-lag,
//! ramp-limited HVDC injections. Voltage proxies are algebraic functions of the
//! net injections through a sensitivity matrix.
//!
//! All dynamic quantities are per unit on [`GridModel::base_mw`]; the grid
//! description itself is in MW.

mod record;
mod sim;

pub use record::TrajectoryRecord;
pub use sim::{simulate, simulate_with, Control, Observation, Plant, Policy, SimOptions};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Machine {
    /// Inertia constant M_i on the system base, s.
    pub inertia: f64,
    /// Damping D_i, p.u. power per p.u. frequency.
    pub damping: f64,
    /// Governor gain K_i (inverse droop), p.u./p.u.
    pub governor_gain: f64,
    /// Governor time constant T_i, s.
    pub governor_time_constant: f64,
    pub capacity_mw: f64,
    /// Pre-disturbance output; `capacity_mw - dispatch_mw` is the governor headroom.
    pub dispatch_mw: f64,
    /// Size of the unit lost when this machine trips. A trip removes the same
    /// fraction of inertia, damping and governor gain.
    pub unit_mw: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadNode {
    pub node: usize,
    pub base_mw: f64,
    /// Share of the node load that is motor (dynamic) load, in [0, 1].
    pub dynamic_fraction: f64,
    pub motor_time_constant: f64,
    /// Transient frequency sensitivity of the motor share, p.u./p.u.
    #[serde(default = "default_motor_damping")]
    pub motor_damping: f64,
}

fn default_motor_damping() -> f64 {
    2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkEnd {
    /// The converter exports power from this grid; support means lowering u_d.
    Sending,
    /// The converter imports power into this grid; support means raising u_d.
    Receiving,
}

impl LinkEnd {
    /// Sign of the injection into this grid for a positive reference change.
    pub fn injection_sign(self) -> f64 {
        match self {
            LinkEnd::Sending => -1.0,
            LinkEnd::Receiving => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HvdcLink {
    pub base_setpoint_mw: f64,
    pub ud_min_mw: f64,
    pub ud_max_mw: f64,
    pub ramp_mw_per_s: f64,
    pub lag_s: f64,
    pub end: LinkEnd,
}

impl HvdcLink {
    /// Reference deviation (MW) giving maximal frequency support.
    pub fn support_limit_mw(&self) -> f64 {
        match self.end {
            LinkEnd::Receiving => self.ud_max_mw,
            LinkEnd::Sending => self.ud_min_mw,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridModel {
    pub base_mw: f64,
    #[serde(default = "default_nominal_hz")]
    pub nominal_hz: f64,
    pub machines: Vec<Machine>,
    pub loads: Vec<LoadNode>,
    pub hvdc: Vec<HvdcLink>,
    /// One row per monitored bus; columns are machines, then links, then load
    /// nodes (p.u. voltage change per p.u. injection change).
    pub voltage_sensitivity: Vec<Vec<f64>>,
}

fn default_nominal_hz() -> f64 {
    crate::units::NOMINAL_HZ
}

impl GridModel {
    /// Desk-scale test grid: three machines, three load nodes, one receiving
    /// and one sending HVDC link. Voltage proxies are taken at four points of
    /// common coupling (the two converter buses and two wind-farm buses), all
    /// electrically remote from the load nodes, so their load columns are zero.
    pub fn desk_scale() -> Self {
        let machine = |inertia, damping, gain, tc, cap, dispatch, unit| Machine {
            inertia,
            damping,
            governor_gain: gain,
            governor_time_constant: tc,
            capacity_mw: cap,
            dispatch_mw: dispatch,
            unit_mw: unit,
        };
        let load = |node, base, tc| LoadNode {
            node,
            base_mw: base,
            dynamic_fraction: 0.4,
            motor_time_constant: tc,
            motor_damping: 2.0,
        };
        GridModel {
            base_mw: 1000.0,
            nominal_hz: 50.0,
            machines: vec![
                machine(4.0, 0.5, 8.0, 7.0, 500.0, 400.0, 70.0),
                machine(3.5, 0.4, 7.0, 6.0, 420.0, 330.0, 60.0),
                machine(2.5, 0.3, 5.0, 5.0, 300.0, 270.0, 40.0),
            ],
            loads: vec![
                load(1, 400.0, 0.8),
                load(2, 350.0, 0.6),
                load(3, 250.0, 1.0),
            ],
            hvdc: vec![
                HvdcLink {
                    base_setpoint_mw: 200.0,
                    ud_min_mw: -60.0,
                    ud_max_mw: 60.0,
                    ramp_mw_per_s: 200.0,
                    lag_s: 0.2,
                    end: LinkEnd::Receiving,
                },
                HvdcLink {
                    base_setpoint_mw: 200.0,
                    ud_min_mw: -50.0,
                    ud_max_mw: 50.0,
                    ramp_mw_per_s: 200.0,
                    lag_s: 0.25,
                    end: LinkEnd::Sending,
                },
            ],
            voltage_sensitivity: vec![
                vec![0.10, 0.06, 0.03, 0.09, 0.03, 0.0, 0.0, 0.0],
                vec![0.02, 0.06, 0.09, 0.03, 0.09, 0.0, 0.0, 0.0],
                vec![0.05, 0.02, 0.08, 0.02, 0.06, 0.0, 0.0, 0.0],
                vec![0.03, 0.08, 0.02, 0.05, 0.02, 0.0, 0.0, 0.0],
            ],
        }
    }

    /// Single machine, single load node, no links, no monitored buses.
    pub fn single_machine(inertia: f64, damping: f64, gain: f64, time_constant: f64) -> Self {
        GridModel {
            base_mw: 1000.0,
            nominal_hz: 50.0,
            machines: vec![Machine {
                inertia,
                damping,
                governor_gain: gain,
                governor_time_constant: time_constant,
                capacity_mw: 2000.0,
                dispatch_mw: 1000.0,
                unit_mw: 100.0,
            }],
            loads: vec![LoadNode {
                node: 1,
                base_mw: 1000.0,
                dynamic_fraction: 0.0,
                motor_time_constant: 1.0,
                motor_damping: 0.0,
            }],
            hvdc: vec![],
            voltage_sensitivity: vec![],
        }
    }

    pub fn n_machines(&self) -> usize {
        self.machines.len()
    }

    pub fn n_loads(&self) -> usize {
        self.loads.len()
    }

    pub fn n_links(&self) -> usize {
        self.hvdc.len()
    }

    pub fn n_monitored(&self) -> usize {
        self.voltage_sensitivity.len()
    }

    pub fn total_damping(&self) -> f64 {
        self.machines.iter().map(|m| m.damping).sum()
    }

    pub fn total_governor_gain(&self) -> f64 {
        self.machines.iter().map(|m| m.governor_gain).sum()
    }

    pub fn total_load_mw(&self) -> f64 {
        self.loads.iter().map(|l| l.base_mw).sum()
    }

    /// Reference deviation bounds of link `k` in p.u.
    pub fn ud_bounds_pu(&self, k: usize) -> (f64, f64) {
        let link = &self.hvdc[k];
        (link.ud_min_mw / self.base_mw, link.ud_max_mw / self.base_mw)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.base_mw > 0.0) {
            return bad(format!("base_mw must be positive, got {}", self.base_mw));
        }
        if self.machines.is_empty() {
            return bad("grid needs at least one machine".into());
        }
        for (i, m) in self.machines.iter().enumerate() {
            if !(m.inertia > 0.0) {
                return bad(format!("machine {i}: inertia must be > 0"));
            }
            if !(m.damping >= 0.0) {
                return bad(format!("machine {i}: damping must be >= 0"));
            }
            if !(m.governor_gain >= 0.0) {
                return bad(format!("machine {i}: governor gain must be >= 0"));
            }
            if !(m.governor_time_constant > 0.0) {
                return bad(format!("machine {i}: governor time constant must be > 0"));
            }
            if !(m.capacity_mw > 0.0 && m.dispatch_mw >= 0.0 && m.dispatch_mw <= m.capacity_mw) {
                return bad(format!("machine {i}: need 0 <= dispatch <= capacity"));
            }
            if !(m.unit_mw >= 0.0 && m.unit_mw < m.capacity_mw) {
                return bad(format!("machine {i}: unit size must be in [0, capacity)"));
            }
        }
        for (j, l) in self.loads.iter().enumerate() {
            if !(0.0..=1.0).contains(&l.dynamic_fraction) {
                return bad(format!("load {j}: dynamic fraction must be in [0, 1]"));
            }
            if !(l.base_mw >= 0.0) || !(l.motor_time_constant > 0.0) || !(l.motor_damping >= 0.0) {
                return bad(format!("load {j}: invalid base power or motor parameters"));
            }
        }
        for (k, h) in self.hvdc.iter().enumerate() {
            if !(h.ud_min_mw <= 0.0 && 0.0 <= h.ud_max_mw) {
                return bad(format!("link {k}: need ud_min <= 0 <= ud_max"));
            }
            if !(h.ramp_mw_per_s > 0.0) || !(h.lag_s > 0.0) {
                return bad(format!("link {k}: ramp rate and lag must be > 0"));
            }
        }
        let cols = self.n_machines() + self.n_links() + self.n_loads();
        for (r, row) in self.voltage_sensitivity.iter().enumerate() {
            if row.len() != cols {
                return bad(format!(
                    "voltage sensitivity row {r} has {} columns, expected {cols}",
                    row.len()
                ));
            }
        }
        Ok(())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let grid: GridModel = serde_json::from_str(s)?;
        grid.validate()?;
        Ok(grid)
    }
}

/// Closed-form steady-state frequency deviation (p.u.) after a power deficit
/// (p.u.): `−deficit / (D_total + ΣK_i)`.
pub fn steady_state_deviation(grid: &GridModel, deficit_pu: f64) -> f64 {
    -deficit_pu / (grid.total_damping() + grid.total_governor_gain())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Noise {
    /// Standard deviation of the white disturbance on each load node, MW.
    #[serde(default)]
    pub load_amplitude_mw: f64,
    /// Standard deviation of the white excitation on each DC reference, MW.
    #[serde(default)]
    pub dc_amplitude_mw: f64,
    pub seed: u64,
}

impl Noise {
    pub fn is_active(&self) -> bool {
        self.load_amplitude_mw > 0.0 || self.dc_amplitude_mw > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default = "one")]
    pub inertia_scale: f64,
    /// Machines losing one unit at `trip_time` (at most three).
    #[serde(default)]
    pub trips: Vec<usize>,
    /// Additional step load increase at `trip_time`, MW.
    #[serde(default)]
    pub step_deficit_mw: f64,
    pub trip_time: f64,
    #[serde(default)]
    pub noise: Option<Noise>,
    /// Simulated duration after the disturbance, s.
    pub horizon: f64,
    pub dt: f64,
}

fn one() -> f64 {
    1.0
}

pub const MAX_SIMULTANEOUS_TRIPS: usize = 3;

impl Scenario {
    pub fn new(trips: Vec<usize>, inertia_scale: f64) -> Self {
        Scenario {
            inertia_scale,
            trips,
            step_deficit_mw: 0.0,
            trip_time: 1.0,
            noise: None,
            horizon: 60.0,
            dt: 0.1,
        }
    }

    /// Sample index at which the disturbance is applied.
    pub fn disturbance_index(&self) -> usize {
        (self.trip_time / self.dt - 1e-9).ceil().max(0.0) as usize
    }

    pub fn n_samples(&self) -> usize {
        self.disturbance_index() + (self.horizon / self.dt).round() as usize + 1
    }

    /// Total power deficit (p.u.) caused by the disturbance.
    pub fn deficit_pu(&self, grid: &GridModel) -> f64 {
        let lost: f64 = self.trips.iter().map(|&i| grid.machines[i].unit_mw).sum();
        (lost + self.step_deficit_mw) / grid.base_mw
    }

    pub fn validate(&self, grid: &GridModel) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.inertia_scale > 0.0) {
            return bad("inertia scale must be > 0".into());
        }
        if self.trips.len() > MAX_SIMULTANEOUS_TRIPS {
            return bad(format!(
                "at most {MAX_SIMULTANEOUS_TRIPS} simultaneous trips"
            ));
        }
        let mut seen = vec![false; grid.n_machines()];
        for &i in &self.trips {
            if i >= grid.n_machines() {
                return bad(format!("trip index {i} out of range"));
            }
            if seen[i] {
                return bad(format!("machine {i} listed twice in trip set"));
            }
            seen[i] = true;
        }
        if !(self.dt > 0.0) || !(self.horizon > 0.0) || !(self.trip_time >= 0.0) {
            return bad("dt and horizon must be > 0, trip time >= 0".into());
        }
        if !self.step_deficit_mw.is_finite() {
            return bad("step deficit must be finite".into());
        }
        if let Some(noise) = &self.noise {
            if !(noise.load_amplitude_mw >= 0.0 && noise.dc_amplitude_mw >= 0.0) {
                return bad("noise amplitudes must be >= 0".into());
            }
        }
        Ok(())
    }
}
