//! Run configuration: one JSON document whose sections mirror the module
//! types. Every section is optional; missing sections take the desk-scale
//! defaults. `grid` and `scenario` may be given inline or as a path to a
//! separate JSON file, resolved relative to the configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::controller::{
    ControlLimits, CoordinationSettings, DcMode, LqrWeights, ShedObjective, DEFAULT_DISCOUNT,
    DEFAULT_HORIZON, DEFAULT_Q_OMEGA, DEFAULT_Q_REST, DEFAULT_R,
};
use crate::gridsim::{GridModel, Scenario};
use crate::koopman::{DatasetOptions, KoopmanModel, Method, ObservableConfig, DEFAULT_RIDGE};
use crate::robustness::{
    CostateBoundary, CostateSource, Prop1Settings, DEFAULT_FEEDERS, DEFAULT_FEEDER_QUANTUM_MW,
};
use crate::{Error, Result};

/// A section given inline or as a path to its own JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Path(PathBuf),
    Inline(T),
}

impl<T: serde::de::DeserializeOwned + Clone> Source<T> {
    fn resolve(&self, base: &Path) -> Result<T> {
        match self {
            Source::Inline(v) => Ok(v.clone()),
            Source::Path(p) => {
                let path = base.join(p);
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                serde_json::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub n_train: usize,
    pub n_test: usize,
    /// Directory of a generated dataset, relative to the output directory
    /// unless absolute.
    pub dir: PathBuf,
    pub options: DatasetOptions,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            n_train: 300,
            n_test: 200,
            dir: PathBuf::from("data"),
            options: DatasetOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    /// Weight on the frequency coordinates of the lifted state.
    pub q_omega: f64,
    /// Weight on the remaining lifted coordinates.
    pub q_rest: f64,
    pub r: f64,
    pub discount: f64,
}

impl Default for WeightsConfig {
    fn default() -> Self {
        WeightsConfig {
            q_omega: DEFAULT_Q_OMEGA,
            q_rest: DEFAULT_Q_REST,
            r: DEFAULT_R,
            discount: DEFAULT_DISCOUNT,
        }
    }
}

impl WeightsConfig {
    pub fn for_model(&self, model: &KoopmanModel) -> Result<LqrWeights> {
        let mut w = LqrWeights::for_model(model, self.q_omega, self.q_rest, self.r);
        w.discount = self.discount;
        w.validate(model.dim(), model.n_links())?;
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    pub horizon: usize,
    pub objective: ShedObjective,
    pub dc_mode: DcMode,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        let s = CoordinationSettings::default();
        ControllerConfig {
            horizon: s.horizon,
            objective: s.objective,
            dc_mode: s.dc_mode,
        }
    }
}

impl ControllerConfig {
    pub fn settings(&self) -> CoordinationSettings {
        CoordinationSettings {
            horizon: self.horizon,
            objective: self.objective,
            dc_mode: self.dc_mode,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Prop1Config {
    pub feeders: usize,
    /// Quantum of every feeder, MW.
    pub quantum_mw: f64,
    /// Per-feeder quanta, MW; overrides `feeders` and `quantum_mw`.
    pub quanta_mw: Option<Vec<f64>>,
    pub levels: usize,
    pub horizon: usize,
    /// Terminal costate; `None` keeps λ(T) = 0.
    pub terminal_costate: Option<Vec<f64>>,
    pub costate_source: CostateSource,
    /// Random scenarios checked by the `prop1` command.
    pub scenarios: usize,
    /// Noise-free trajectories fitted for the oracle model.
    pub oracle_trajectories: usize,
    pub skip_brute_force: bool,
}

impl Default for Prop1Config {
    fn default() -> Self {
        Prop1Config {
            feeders: DEFAULT_FEEDERS,
            quantum_mw: DEFAULT_FEEDER_QUANTUM_MW,
            quanta_mw: None,
            levels: 2,
            horizon: DEFAULT_HORIZON,
            terminal_costate: None,
            costate_source: CostateSource::Learned,
            scenarios: 20,
            oracle_trajectories: 300,
            skip_brute_force: false,
        }
    }
}

impl Prop1Config {
    pub fn quanta(&self) -> Vec<f64> {
        self.quanta_mw
            .clone()
            .unwrap_or_else(|| vec![self.quantum_mw; self.feeders])
    }

    pub fn settings(&self) -> Prop1Settings {
        Prop1Settings {
            horizon: self.horizon,
            boundary: match &self.terminal_costate {
                Some(c) => CostateBoundary::Terminal(nalgebra::DVector::from_column_slice(c)),
                None => CostateBoundary::Zero,
            },
            costate_source: self.costate_source,
            skip_brute_force: self.skip_brute_force,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub methods: Vec<Method>,
    /// Inertia scales of the coordinated subcases.
    pub scales: Vec<f64>,
    /// Machines tripped in every subcase and in the comparison run.
    pub trips: Vec<usize>,
    /// Inertia scale of the closed-loop vs constant-max comparison.
    pub comparison_scale: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            methods: Method::ALL.to_vec(),
            scales: crate::bench::SUBCASE_SCALES.to_vec(),
            trips: vec![0, 1, 2],
            comparison_scale: crate::bench::COMPARISON_SCALE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `None` selects the built-in desk-scale grid.
    pub grid: Option<Source<GridModel>>,
    /// Scenario of the `control` and `predict` commands.
    pub scenario: Option<Source<Scenario>>,
    pub method: Method,
    /// Overrides the observable configuration implied by `method`.
    pub observable: Option<ObservableConfig>,
    pub ridge: f64,
    /// `None` derives the limits from the grid.
    pub limits: Option<ControlLimits>,
    pub weights: WeightsConfig,
    pub controller: ControllerConfig,
    pub dataset: DatasetConfig,
    pub prop1: Prop1Config,
    pub bench: BenchConfig,
    /// Required by every command that draws random numbers.
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    /// Directory relative paths are resolved against (the configuration
    /// file's directory when loaded from disk).
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            grid: None,
            scenario: None,
            method: Method::Cefc,
            observable: None,
            ridge: DEFAULT_RIDGE,
            limits: None,
            weights: WeightsConfig::default(),
            controller: ControllerConfig::default(),
            dataset: DatasetConfig::default(),
            prop1: Prop1Config::default(),
            bench: BenchConfig::default(),
            seed: None,
            output_dir: PathBuf::from("out"),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            e => e,
        })?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn dataset_dir(&self) -> PathBuf {
        if self.dataset.dir.is_absolute() {
            self.dataset.dir.clone()
        } else {
            self.output_dir().join(&self.dataset.dir)
        }
    }

    pub fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::Config("this command needs a `seed` in the configuration".into()))
    }

    pub fn grid(&self) -> Result<GridModel> {
        let grid = match &self.grid {
            None => GridModel::desk_scale(),
            Some(src) => src.resolve(&self.base_dir)?,
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Configured scenario, or the three-machine trip at 0.85 inertia.
    pub fn scenario(&self, grid: &GridModel) -> Result<Scenario> {
        let sc = match &self.scenario {
            None => Scenario::new(self.bench.trips.clone(), crate::bench::COMPARISON_SCALE),
            Some(src) => src.resolve(&self.base_dir)?,
        };
        sc.validate(grid)?;
        Ok(sc)
    }

    pub fn observable_config(&self, method: Method, dt: f64) -> ObservableConfig {
        match (&self.observable, method == self.method) {
            (Some(cfg), true) => cfg.clone(),
            _ => method.observable_config(dt),
        }
    }

    pub fn limits(&self, grid: &GridModel) -> Result<ControlLimits> {
        let limits = self
            .limits
            .clone()
            .unwrap_or_else(|| ControlLimits::for_grid(grid));
        limits.validate()?;
        Ok(limits)
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        self.limits(&grid)?;
        if self.scenario.is_some() {
            self.scenario(&grid)?;
        }
        if !(self.ridge >= 0.0) {
            return Err(Error::Config("ridge must be >= 0".into()));
        }
        if self.bench.scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("bench scales must be > 0".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_defaults() {
        let cfg = RunConfig::from_json_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
        assert!(cfg.seed().is_err());
        assert_eq!(cfg.grid().unwrap(), GridModel::desk_scale());
    }

    #[test]
    fn defaults_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.seed = Some(7);
        cfg.scenario = Some(Source::Inline(Scenario::new(vec![1], 0.9)));
        let back = RunConfig::from_json_str(&cfg.to_json_string().unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(matches!(
            RunConfig::from_json_str(r#"{"sede": 1}"#),
            Err(Error::Config(_))
        ));
        assert!(RunConfig::from_json_str(r#"{"method": "koopman"}"#).is_err());
    }

    #[test]
    fn sections_load_from_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let sc = Scenario::new(vec![0, 2], 0.8);
        std::fs::write(
            dir.path().join("sc.json"),
            serde_json::to_string(&sc).unwrap(),
        )
        .unwrap();
        std::fs::write(
            dir.path().join("run.json"),
            r#"{"scenario": "sc.json", "seed": 3, "method": "dmd"}"#,
        )
        .unwrap();
        let cfg = RunConfig::load(&dir.path().join("run.json")).unwrap();
        let grid = cfg.grid().unwrap();
        assert_eq!(cfg.scenario(&grid).unwrap(), sc);
        assert_eq!(cfg.method, Method::Dmd);
        assert_eq!(cfg.output_dir(), dir.path().join("out"));
        assert_eq!(cfg.dataset_dir(), dir.path().join("out").join("data"));
    }

    #[test]
    fn missing_section_file_is_an_io_error() {
        let cfg = RunConfig::from_json_str(r#"{"grid": "/nonexistent/grid.json"}"#).unwrap();
        assert!(matches!(cfg.grid(), Err(Error::Io { .. })));
    }

    #[test]
    fn prop1_quanta() {
        let p = Prop1Config::default();
        assert_eq!(p.quanta(), vec![DEFAULT_FEEDER_QUANTUM_MW; 3]);
        let p = Prop1Config {
            quanta_mw: Some(vec![1.0, 10.0]),
            ..Prop1Config::default()
        };
        assert_eq!(p.quanta().len(), 2);
    }
}
