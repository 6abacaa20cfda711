use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cefc::bench::{run_control_subcases, run_edcps_comparison, run_prediction_table, BenchSuite};
use cefc::config::RunConfig;
use cefc::controller::{coordinate_with, DcMode};
use cefc::gridsim::simulate;
use cefc::koopman::{
    derive_seed, eval_metrics, fit, generate_dataset_with, predict_record, random_scenario,
    Dataset, KoopmanModel, Method,
};
use cefc::robustness::{check_prop1, fit_oracle, Prop1Report};
use cefc::Error;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

/// `println!` that ignores a closed stdout.
macro_rules! emit {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

#[derive(Parser)]
#[command(
    name = "cefc",
    version,
    about = "Coordinated emergency frequency control on a desk-scale grid"
)]
struct Cli {
    /// Worker threads for scenario-parallel work.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (JSON).
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate training and test trajectories into the dataset directory.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        train: Option<usize>,
        #[arg(long)]
        test: Option<usize>,
    },
    /// Fit a lifted model on the training split and report test metrics.
    Fit {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Option<Method>,
        /// Output path (default `<output>/models/<method>.json`).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Roll a fitted model along the configured scenario.
    Predict {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Run the coordinated controller on the configured scenario.
    Control {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Option<Method>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, value_enum)]
        dc_mode: Option<DcModeArg>,
    },
    /// Compare learned and oracle mode selections on random scenarios.
    Prop1 {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        feeders: Option<usize>,
        #[arg(long)]
        scenarios: Option<usize>,
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Prediction table, coordinated subcases and the DC support comparison.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Part::All)]
        only: Part,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum DcModeArg {
    Lqr,
    ConstantMax,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Part {
    All,
    Table,
    Subcases,
    Edcps,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.jobs.max(1))
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    match pool.install(|| run(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 1 })
        }
    }
}

type Result<T> = cefc::Result<T>;

fn run(command: Command) -> Result<()> {
    match command {
        Command::GenData {
            common,
            train,
            test,
        } => {
            let cfg = load(&common)?;
            let grid = cfg.grid()?;
            let (n_train, n_test) = (
                train.unwrap_or(cfg.dataset.n_train),
                test.unwrap_or(cfg.dataset.n_test),
            );
            let data =
                generate_dataset_with(&grid, n_train, n_test, cfg.seed()?, &cfg.dataset.options)?;
            let dir = cfg.dataset_dir();
            data.save(&dir)?;
            emit!("wrote {} trajectories to {}", data.len(), dir.display());
        }
        Command::Fit {
            common,
            method,
            model,
        } => {
            let cfg = load(&common)?;
            let method = method.unwrap_or(cfg.method);
            let data = load_dataset(&cfg)?;
            let dt = data.train[0].record.dt;
            let fitted = fit(&data.train, &cfg.observable_config(method, dt), cfg.ridge)?;
            let path = model.unwrap_or_else(|| default_model_path(&cfg, method));
            ensure_parent(&path)?;
            fitted.save(&path)?;
            let metrics = eval_metrics(&fitted, &data.test)?;
            print_json(&serde_json::json!({
                "method": method,
                "model": path,
                "dim": fitted.dim(),
                "test_metrics_hz": metrics,
            }))?;
        }
        Command::Predict {
            common,
            method,
            model,
        } => {
            let cfg = load(&common)?;
            let (method, model) = load_model(&cfg, method, model)?;
            let grid = cfg.grid()?;
            let scenario = cfg.scenario(&grid)?;
            let rec = simulate(&grid, &scenario, None)?;
            let (k0, pred) = predict_record(&model, &rec)?;
            let mut out = String::from("t,omega,omega_pred\n");
            for k in 0..rec.len() {
                let p = k
                    .checked_sub(k0)
                    .map_or_else(String::new, |i| pred[i].to_string());
                out.push_str(&format!("{},{},{p}\n", rec.time(k), rec.omega[k]));
            }
            let path = cfg
                .output_dir()
                .join(format!("predict_{}.csv", method.name()));
            write(&path, &out)?;
            emit!("wrote {}", path.display());
        }
        Command::Control {
            common,
            method,
            model,
            dc_mode,
        } => {
            let cfg = load(&common)?;
            let (_, model) = load_model(&cfg, method, model)?;
            let grid = cfg.grid()?;
            let scenario = cfg.scenario(&grid)?;
            let limits = cfg.limits(&grid)?;
            let weights = cfg.weights.for_model(&model)?;
            let mut settings = cfg.controller.settings();
            if let Some(m) = dc_mode {
                settings.dc_mode = match m {
                    DcModeArg::Lqr => DcMode::Lqr,
                    DcModeArg::ConstantMax => DcMode::ConstantMax,
                };
            }
            let trace = coordinate_with(&grid, &scenario, &model, &limits, &weights, &settings)?;
            let dir = cfg.output_dir().join("control");
            let mut csv = Vec::new();
            trace.write_csv(&mut csv)?;
            write(&dir.join("trace.csv"), &String::from_utf8_lossy(&csv))?;
            let summary = serde_json::to_string_pretty(&trace.summary(&limits))?;
            write(&dir.join("summary.json"), &summary)?;
            emit!("{summary}");
        }
        Command::Prop1 {
            common,
            feeders,
            scenarios,
            model,
        } => {
            let cfg = load(&common)?;
            let seed = cfg.seed()?;
            let grid = cfg.grid()?;
            let limits = cfg.limits(&grid)?;
            let (_, learned) = load_model(&cfg, None, model)?;
            let oracle = fit_oracle(
                &grid,
                &learned,
                cfg.prop1.oracle_trajectories,
                derive_seed(seed, 1),
                cfg.ridge,
            )?;
            let mut p1 = cfg.prop1.clone();
            if let Some(n) = feeders {
                p1.feeders = n;
                p1.quanta_mw = None;
            }
            let quanta = p1.quanta();
            let settings = p1.settings();
            let n = scenarios.unwrap_or(p1.scenarios);
            let mut opts = cfg.dataset.options.clone();
            opts.dt = learned.config.dt;
            let mut runs = Vec::with_capacity(n);
            for i in 0..n {
                let (mut scenario, _) =
                    random_scenario(&grid, &opts, derive_seed(seed, 1000 + i as u64));
                scenario.noise = None;
                let report = check_prop1(
                    &grid, &scenario, &learned, &oracle, &quanta, p1.levels, &limits, &settings,
                )?;
                runs.push(Prop1Run { scenario, report });
            }
            let summary = Prop1Summary::new(quanta.len(), runs);
            let text = serde_json::to_string_pretty(&summary)?;
            write(&cfg.output_dir().join("prop1.json"), &text)?;
            emit!(
                "{} modes, {} scenarios: k* = i* on {}, k* = brute force on {}, {} infeasible",
                summary.n_modes,
                n,
                summary.holds,
                summary.matches_brute_force,
                summary.infeasible
            );
        }
        Command::Bench { common, only } => {
            let cfg = load(&common)?;
            let suite = BenchSuite::from_config(&cfg, Some(load_dataset(&cfg)?))?;
            if matches!(only, Part::All | Part::Table) {
                for row in run_prediction_table(&suite)? {
                    let m = row.metrics;
                    emit!(
                        "{:<9} nadir {:.4} Hz  steady state {:.4} Hz  mean {:.4} Hz",
                        row.method.name(),
                        m.nadir_hz,
                        m.steady_state_hz,
                        m.mean_hz
                    );
                }
            }
            if matches!(only, Part::All | Part::Subcases | Part::Edcps) {
                let model = suite.fit_cefc()?;
                if matches!(only, Part::All | Part::Subcases) {
                    for r in run_control_subcases(&suite, &model)? {
                        emit!(
                            "scale {:.2}: nadir {:.3} Hz, shed {} MW, steady state {:.3} Hz",
                            r.scale,
                            r.summary.nadir_hz,
                            r.summary.shed_total_mw,
                            r.summary.steady_state_hz
                        );
                    }
                }
                if matches!(only, Part::All | Part::Edcps) {
                    let c = run_edcps_comparison(&suite, &model)?;
                    emit!(
                        "cumulative |u_d| dt: lqr {:.4}, constant max {:.4} (p.u. s)",
                        c.lqr_summary.cumulative_dc_pu_s,
                        c.constant_summary.cumulative_dc_pu_s
                    );
                }
            }
            emit!("outputs in {}", suite.output_dir.display());
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct Prop1Run {
    scenario: cefc::gridsim::Scenario,
    report: Prop1Report,
}

#[derive(Serialize)]
struct Prop1Summary {
    n_feeders: usize,
    n_modes: usize,
    holds: usize,
    matches_brute_force: usize,
    infeasible: usize,
    runs: Vec<Prop1Run>,
}

impl Prop1Summary {
    fn new(n_feeders: usize, runs: Vec<Prop1Run>) -> Self {
        Prop1Summary {
            n_feeders,
            n_modes: runs.first().map_or(1 << n_feeders, |r| r.report.n_modes),
            holds: runs.iter().filter(|r| r.report.holds).count(),
            matches_brute_force: runs
                .iter()
                .filter(|r| r.report.learned_matches_brute_force == Some(true))
                .count(),
            infeasible: runs.iter().filter(|r| r.report.infeasible_scenario).count(),
            runs,
        }
    }
}

fn load(common: &Common) -> Result<RunConfig> {
    let cfg = RunConfig::load(&common.config)?;
    cfg.validate()?;
    Ok(cfg)
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.dataset_dir();
    if !dir.join("manifest.json").exists() {
        return Err(Error::Dependency(format!(
            "no dataset at {}; run `gen-data` first",
            dir.display()
        )));
    }
    Dataset::load(&dir)
}

fn default_model_path(cfg: &RunConfig, method: Method) -> PathBuf {
    cfg.output_dir()
        .join("models")
        .join(format!("{}.json", method.name()))
}

fn load_model(
    cfg: &RunConfig,
    method: Option<Method>,
    path: Option<PathBuf>,
) -> Result<(Method, KoopmanModel)> {
    let method = method.unwrap_or(cfg.method);
    let path = path.unwrap_or_else(|| default_model_path(cfg, method));
    if !path.exists() {
        return Err(Error::Dependency(format!(
            "no model at {}; run `fit` first",
            path.display()
        )));
    }
    Ok((method, KoopmanModel::load(&path)?))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
        }
        _ => Ok(()),
    }
}

fn write(path: &Path, contents: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<()> {
    emit!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}
