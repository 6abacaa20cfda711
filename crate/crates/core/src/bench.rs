//! Desk-scale experiments: the prediction-error table of the four
//! identification configurations, coordinated control over inertia-scaled
//! subcases, and closed-loop against constant-max DC support.
//!
//! Every run writes CSV files under the suite's output directory. Outputs
//! depend only on the dataset, the configuration and the seeds.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, WeightsConfig};
use crate::controller::{
    coordinate_with, ControlLimits, CoordinationSettings, CoordinationSummary, CoordinationTrace,
    DcMode,
};
use crate::gridsim::{GridModel, Scenario};
use crate::koopman::{eval_metrics, fit, Dataset, KoopmanModel, Method, Metrics, ObservableConfig};
use crate::units::absolute_hz;
use crate::{Error, Result};

/// Inertia scales of the coordinated subcases, in run order.
pub const SUBCASE_SCALES: [f64; 5] = [0.80, 0.85, 0.94, 0.89, 0.82];
/// Inertia scale of the closed-loop vs constant-max comparison.
pub const COMPARISON_SCALE: f64 = 0.85;

#[derive(Debug, Clone)]
pub struct BenchSuite {
    pub grid: GridModel,
    pub dataset: Option<Dataset>,
    /// Identification configurations; they differ only in the observables.
    pub methods: Vec<(Method, ObservableConfig)>,
    pub ridge: f64,
    pub scales: Vec<f64>,
    pub trips: Vec<usize>,
    pub comparison_scale: f64,
    pub limits: ControlLimits,
    pub weights: WeightsConfig,
    pub settings: CoordinationSettings,
    pub output_dir: PathBuf,
}

impl BenchSuite {
    pub fn from_config(cfg: &RunConfig, dataset: Option<Dataset>) -> Result<Self> {
        let grid = cfg.grid()?;
        let dt = dataset
            .as_ref()
            .and_then(|d| d.train.first())
            .map_or(cfg.dataset.options.dt, |s| s.record.dt);
        Ok(BenchSuite {
            limits: cfg.limits(&grid)?,
            grid,
            dataset,
            methods: cfg
                .bench
                .methods
                .iter()
                .map(|&m| (m, cfg.observable_config(m, dt)))
                .collect(),
            ridge: cfg.ridge,
            scales: cfg.bench.scales.clone(),
            trips: cfg.bench.trips.clone(),
            comparison_scale: cfg.bench.comparison_scale,
            weights: cfg.weights.clone(),
            settings: cfg.controller.settings(),
            output_dir: cfg.output_dir(),
        })
    }

    fn dataset(&self) -> Result<&Dataset> {
        self.dataset
            .as_ref()
            .ok_or_else(|| Error::Dependency("no dataset; run `gen-data` first".into()))
    }

    /// Fits the CEFC configuration on the training split.
    pub fn fit_cefc(&self) -> Result<KoopmanModel> {
        let config = self
            .methods
            .iter()
            .find(|(m, _)| *m == Method::Cefc)
            .map_or_else(
                || Method::Cefc.observable_config(self.dt()),
                |(_, c)| c.clone(),
            );
        fit(&self.dataset()?.train, &config, self.ridge)
    }

    fn dt(&self) -> f64 {
        self.dataset
            .as_ref()
            .and_then(|d| d.train.first())
            .map_or(0.1, |s| s.record.dt)
    }

    fn scenario(&self, scale: f64) -> Scenario {
        let mut sc = Scenario::new(self.trips.clone(), scale);
        sc.dt = self.dt();
        sc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub method: Method,
    pub metrics: Metrics,
}

/// Fits every method on the training split and evaluates it on the test
/// split. Writes `table1.csv`, `table1_long.csv` and `models/<method>.json`.
pub fn run_prediction_table(suite: &BenchSuite) -> Result<Vec<PredictionRow>> {
    let data = suite.dataset()?;
    let fitted = suite
        .methods
        .par_iter()
        .map(|(method, config)| {
            let model = fit(&data.train, config, suite.ridge)?;
            let metrics = eval_metrics(&model, &data.test)?;
            Ok((
                PredictionRow {
                    method: *method,
                    metrics,
                },
                model,
            ))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut table = String::from("method,nadir_error_hz,steady_state_error_hz,mean_error_hz\n");
    let mut long = String::from("method,metric,value_hz\n");
    for (row, model) in &fitted {
        let m = &row.metrics;
        let name = row.method.name();
        writeln!(
            table,
            "{name},{},{},{}",
            m.nadir_hz, m.steady_state_hz, m.mean_hz
        )
        .unwrap();
        for (metric, v) in [
            ("nadir", m.nadir_hz),
            ("steady_state", m.steady_state_hz),
            ("mean", m.mean_hz),
        ] {
            writeln!(long, "{name},{metric},{v}").unwrap();
        }
        write_file(
            &suite.output_dir.join("models").join(format!("{name}.json")),
            &model.to_json_string()?,
        )?;
    }
    write_file(&suite.output_dir.join("table1.csv"), &table)?;
    write_file(&suite.output_dir.join("table1_long.csv"), &long)?;
    Ok(fitted.into_iter().map(|(row, _)| row).collect())
}

#[derive(Debug, Clone)]
pub struct SubcaseResult {
    pub scale: f64,
    pub trace: CoordinationTrace,
    pub summary: CoordinationSummary,
}

/// Coordinated runs at every subcase inertia scale. Writes
/// `subcases/scale_<s>.csv`, `subcases/summary.csv` and `subcases_long.csv`.
pub fn run_control_subcases(
    suite: &BenchSuite,
    model: &KoopmanModel,
) -> Result<Vec<SubcaseResult>> {
    let weights = suite.weights.for_model(model)?;
    let results = suite
        .scales
        .par_iter()
        .map(|&scale| {
            let trace = coordinate_with(
                &suite.grid,
                &suite.scenario(scale),
                model,
                &suite.limits,
                &weights,
                &suite.settings,
            )?;
            let summary = trace.summary(&suite.limits);
            Ok(SubcaseResult {
                scale,
                trace,
                summary,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let dir = suite.output_dir.join("subcases");
    let mut summary = String::from(
        "scale,activation_time_s,decision_time_s,shed_required,shed_time_s,shed_total_mw,shed_changes,\
         nadir_hz,steady_state_hz,cumulative_dc_pu_s,nadir_ok,steady_state_ok\n",
    );
    let mut long = String::from("scale,t,variable,value\n");
    for r in &results {
        let s = &r.summary;
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
        writeln!(
            summary,
            "{:.2},{},{},{},{},{},{},{},{},{},{},{}",
            r.scale,
            opt(s.activation_time_s),
            opt(s.decision_time_s),
            s.shed_required,
            opt(s.shed_time_s),
            s.shed_total_mw,
            r.trace.shed_changes(),
            s.nadir_hz,
            s.steady_state_hz,
            s.cumulative_dc_pu_s,
            s.nadir_ok,
            s.steady_state_ok
        )
        .unwrap();
        let mut csv = Vec::new();
        r.trace.write_csv(&mut csv)?;
        write_file(
            &dir.join(format!("scale_{:.2}.csv", r.scale)),
            &String::from_utf8_lossy(&csv),
        )?;
        long_rows(&mut long, &format!("{:.2}", r.scale), &r.trace);
    }
    write_file(&dir.join("summary.csv"), &summary)?;
    write_file(&suite.output_dir.join("subcases_long.csv"), &long)?;
    Ok(results)
}

#[derive(Debug, Clone)]
pub struct EdcpsComparison {
    pub scale: f64,
    pub lqr: CoordinationTrace,
    pub constant: CoordinationTrace,
    pub lqr_summary: CoordinationSummary,
    pub constant_summary: CoordinationSummary,
}

/// The comparison scenario run with the LQR law and with every link held at
/// its support limit. Writes `edcps_compare.csv` (paired traces with running
/// `Σ|u_d|Δt`), `edcps_summary.csv` and `edcps_long.csv`.
pub fn run_edcps_comparison(suite: &BenchSuite, model: &KoopmanModel) -> Result<EdcpsComparison> {
    let weights = suite.weights.for_model(model)?;
    let scenario = suite.scenario(suite.comparison_scale);
    let run = |mode: DcMode| {
        let settings = CoordinationSettings {
            dc_mode: mode,
            ..suite.settings
        };
        coordinate_with(
            &suite.grid,
            &scenario,
            model,
            &suite.limits,
            &weights,
            &settings,
        )
    };
    let lqr = run(DcMode::Lqr)?;
    let constant = run(DcMode::ConstantMax)?;

    let q = suite.limits.n_links();
    let mut csv = String::from("t,omega_hz_lqr,omega_hz_const");
    for i in 1..=q {
        write!(csv, ",ud_{i}_lqr,ud_{i}_const").unwrap();
    }
    csv.push_str(",cumulative_dc_lqr,cumulative_dc_const\n");
    let (a, b) = (&lqr.record, &constant.record);
    let (mut cum_a, mut cum_b) = (0.0, 0.0);
    for k in 0..a.len().min(b.len()) {
        write!(
            csv,
            "{},{},{}",
            a.time(k),
            absolute_hz(a.omega[k]),
            absolute_hz(b.omega[k])
        )
        .unwrap();
        for i in 0..q {
            write!(csv, ",{},{}", a.ud[k][i], b.ud[k][i]).unwrap();
        }
        cum_a += a.ud[k].iter().map(|v| v.abs()).sum::<f64>() * a.dt;
        cum_b += b.ud[k].iter().map(|v| v.abs()).sum::<f64>() * b.dt;
        writeln!(csv, ",{cum_a},{cum_b}").unwrap();
    }
    let lqr_summary = lqr.summary(&suite.limits);
    let constant_summary = constant.summary(&suite.limits);
    let mut summary = String::from(
        "run,nadir_hz,steady_state_hz,cumulative_dc_pu_s,shed_total_mw,nadir_ok,steady_state_ok\n",
    );
    let mut long = String::from("run,t,variable,value\n");
    for (name, s, trace) in [
        ("lqr", &lqr_summary, &lqr),
        ("constant_max", &constant_summary, &constant),
    ] {
        writeln!(
            summary,
            "{name},{},{},{},{},{},{}",
            s.nadir_hz,
            s.steady_state_hz,
            s.cumulative_dc_pu_s,
            s.shed_total_mw,
            s.nadir_ok,
            s.steady_state_ok
        )
        .unwrap();
        long_rows(&mut long, name, trace);
    }
    write_file(&suite.output_dir.join("edcps_compare.csv"), &csv)?;
    write_file(&suite.output_dir.join("edcps_summary.csv"), &summary)?;
    write_file(&suite.output_dir.join("edcps_long.csv"), &long)?;
    Ok(EdcpsComparison {
        scale: suite.comparison_scale,
        lqr,
        constant,
        lqr_summary,
        constant_summary,
    })
}

/// `label,t,variable,value` rows: absolute frequency, shedding ratios and DC
/// references.
fn long_rows(out: &mut String, label: &str, trace: &CoordinationTrace) {
    let rec = &trace.record;
    for k in 0..rec.len() {
        let t = rec.time(k);
        writeln!(out, "{label},{t},omega_hz,{}", absolute_hz(rec.omega[k])).unwrap();
        for (i, v) in rec.ul[k].iter().enumerate() {
            writeln!(out, "{label},{t},ul_{},{v}", i + 1).unwrap();
        }
        for (i, v) in rec.ud[k].iter().enumerate() {
            writeln!(out, "{label},{t},ud_{},{v}", i + 1).unwrap();
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::koopman::generate_dataset;

    #[test]
    fn prediction_table_needs_a_dataset() {
        let suite = BenchSuite::from_config(&RunConfig::default(), None).unwrap();
        assert!(matches!(
            run_prediction_table(&suite),
            Err(Error::Dependency(_))
        ));
        assert!(matches!(suite.fit_cefc(), Err(Error::Dependency(_))));
    }

    #[test]
    fn small_suite_writes_its_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            output_dir: dir.path().to_path_buf(),
            ..RunConfig::default()
        };
        let grid = cfg.grid().unwrap();
        let data = generate_dataset(&grid, 12, 3, 5).unwrap();
        let mut suite = BenchSuite::from_config(&cfg, Some(data)).unwrap();
        suite
            .methods
            .retain(|(m, _)| *m == Method::Dmd || *m == Method::Cefc);
        suite.scales = vec![0.9];
        let rows = run_prediction_table(&suite).unwrap();
        assert_eq!(rows.len(), 2);
        let table = std::fs::read_to_string(dir.path().join("table1.csv")).unwrap();
        assert_eq!(table.lines().count(), 3);
        assert!(dir.path().join("models/dmd.json").exists());

        let model = suite.fit_cefc().unwrap();
        let sub = run_control_subcases(&suite, &model).unwrap();
        assert_eq!(sub.len(), 1);
        assert!(dir.path().join("subcases/scale_0.90.csv").exists());
        let summary = std::fs::read_to_string(dir.path().join("subcases/summary.csv")).unwrap();
        assert_eq!(summary.lines().count(), 2);

        let cmp = run_edcps_comparison(&suite, &model).unwrap();
        assert_eq!(cmp.lqr.record.len(), cmp.constant.record.len());
        let paired = std::fs::read_to_string(dir.path().join("edcps_compare.csv")).unwrap();
        assert_eq!(paired.lines().count(), cmp.lqr.record.len() + 1);
    }
}
