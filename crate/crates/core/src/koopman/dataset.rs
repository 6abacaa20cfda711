use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gridsim::{
    simulate, Control, GridModel, Noise, Observation, Policy, Scenario, TrajectoryRecord,
    MAX_SIMULTANEOUS_TRIPS,
};
use crate::{Error, Result};

/// One trajectory together with the scenario that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub seed: u64,
    pub scenario: Scenario,
    pub excitation: Excitation,
    pub record: TrajectoryRecord,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Randomization ranges for dataset generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DatasetOptions {
    pub inertia_scale: (f64, f64),
    pub max_trips: usize,
    pub trip_time: f64,
    pub horizon: f64,
    pub dt: f64,
    pub load_noise_mw: f64,
    pub dc_noise_mw: f64,
    /// Probability of a random DC reference step in the support direction.
    pub dc_step_probability: f64,
    /// Latest DC step time after the disturbance, s.
    pub dc_step_window: f64,
    /// Probability of a random one-shot shedding step.
    pub shed_probability: f64,
    pub max_shed_ratio: f64,
    pub shed_window: (f64, f64),
    pub retry_cap: usize,
}

impl Default for DatasetOptions {
    fn default() -> Self {
        DatasetOptions {
            inertia_scale: (0.8, 0.95),
            max_trips: 3,
            trip_time: 1.0,
            horizon: 60.0,
            dt: 0.1,
            load_noise_mw: 1.0,
            dc_noise_mw: 4.0,
            dc_step_probability: 0.7,
            dc_step_window: 2.0,
            shed_probability: 0.5,
            max_shed_ratio: 0.12,
            shed_window: (0.3, 3.0),
            retry_cap: 10,
        }
    }
}

/// Open-loop control schedule applied on top of the white-noise excitation.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Excitation {
    pub dc_step: Option<(f64, Vec<f64>)>,
    pub shed_step: Option<(f64, Vec<f64>)>,
}

impl Excitation {
    fn control_at(&self, t: f64, n_loads: usize, n_links: usize) -> Control {
        let mut c = Control::zeros(n_loads, n_links);
        if let Some((t0, v)) = &self.dc_step {
            if t >= *t0 - 1e-9 {
                c.dc.clone_from(v);
            }
        }
        if let Some((t0, v)) = &self.shed_step {
            if t >= *t0 - 1e-9 {
                c.shed.clone_from(v);
            }
        }
        c
    }

    pub fn policy(&self, n_loads: usize, n_links: usize) -> impl Policy + '_ {
        move |obs: &Observation<'_>| Ok(self.control_at(obs.t, n_loads, n_links))
    }
}

/// Well-mixed per-trajectory seed so neighbouring indices are unrelated.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Random scenario and excitation schedule for one trajectory.
pub fn random_scenario(
    grid: &GridModel,
    opts: &DatasetOptions,
    seed: u64,
) -> (Scenario, Excitation) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.n_machines();
    let max_trips = opts.max_trips.min(n).min(MAX_SIMULTANEOUS_TRIPS).max(1);
    let n_trips = rng.random_range(1..=max_trips);
    let mut trips: Vec<usize> = rand::seq::index::sample(&mut rng, n, n_trips).into_vec();
    trips.sort_unstable();
    let scenario = Scenario {
        inertia_scale: rng.random_range(opts.inertia_scale.0..=opts.inertia_scale.1),
        trips,
        step_deficit_mw: 0.0,
        trip_time: opts.trip_time,
        noise: Some(Noise {
            load_amplitude_mw: opts.load_noise_mw,
            dc_amplitude_mw: opts.dc_noise_mw,
            seed: rng.random(),
        }),
        horizon: opts.horizon,
        dt: opts.dt,
    };
    let mut excitation = Excitation::default();
    let t_dist = scenario.disturbance_index() as f64 * opts.dt;
    let snap = |t: f64| (t / opts.dt).round() * opts.dt;
    if rng.random_bool(opts.dc_step_probability) {
        let t = snap(t_dist + rng.random_range(0.0..=opts.dc_step_window));
        let values = grid
            .hvdc
            .iter()
            .map(|h| rng.random_range(0.0..=1.0) * h.support_limit_mw() / grid.base_mw)
            .collect();
        excitation.dc_step = Some((t, values));
    }
    if rng.random_bool(opts.shed_probability) {
        let t = snap(t_dist + rng.random_range(opts.shed_window.0..=opts.shed_window.1));
        let values = (0..grid.n_loads())
            .map(|_| {
                if rng.random_bool(0.6) {
                    rng.random_range(0.0..=opts.max_shed_ratio)
                } else {
                    0.0
                }
            })
            .collect();
        excitation.shed_step = Some((t, values));
    }
    (scenario, excitation)
}

fn generate_one(grid: &GridModel, opts: &DatasetOptions, seed: u64) -> Result<Sample> {
    let mut last_err = None;
    for attempt in 0..opts.retry_cap.max(1) {
        let s = if attempt == 0 {
            seed
        } else {
            derive_seed(seed, attempt as u64)
        };
        let (scenario, excitation) = random_scenario(grid, opts, s);
        let result = {
            let mut policy = excitation.policy(grid.n_loads(), grid.n_links());
            simulate(grid, &scenario, Some(&mut policy))
        };
        match result {
            Ok(record) => {
                return Ok(Sample {
                    seed: s,
                    scenario,
                    excitation,
                    record,
                })
            }
            Err(e @ Error::Divergence { .. }) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or(Error::Divergence { t: 0.0 }))
}

/// Generates `n_train + n_test` trajectories with distinct derived seeds;
/// train uses indices `0..n_train`, test the following `n_test`.
pub fn generate_dataset(
    grid: &GridModel,
    n_train: usize,
    n_test: usize,
    seed: u64,
) -> Result<Dataset> {
    generate_dataset_with(grid, n_train, n_test, seed, &DatasetOptions::default())
}

pub fn generate_dataset_with(
    grid: &GridModel,
    n_train: usize,
    n_test: usize,
    seed: u64,
    opts: &DatasetOptions,
) -> Result<Dataset> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::Config("n_train and n_test must be > 0".into()));
    }
    grid.validate()?;
    // Each trajectory depends only on its own seed, so the parallel map is
    // deterministic.
    let samples = (0..(n_train + n_test) as u64)
        .into_par_iter()
        .map(|i| generate_one(grid, opts, derive_seed(seed, i)))
        .collect::<Result<Vec<_>>>()?;
    let mut samples = samples;
    let test = samples.split_off(n_train);
    Ok(Dataset {
        train: samples,
        test,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dt: f64,
    n_train: usize,
    n_test: usize,
    entries: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    split: String,
    file: String,
    seed: u64,
    disturbance_index: usize,
    scenario: Scenario,
    excitation: Excitation,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Writes `manifest.json` plus one CSV per trajectory under `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut entries = Vec::with_capacity(self.len());
        for (split, samples) in [("train", &self.train), ("test", &self.test)] {
            for (i, s) in samples.iter().enumerate() {
                let file = format!("{split}_{i:04}.csv");
                let path = dir.join(&file);
                let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
                s.record.write_csv(BufWriter::new(f))?;
                entries.push(ManifestEntry {
                    split: split.to_string(),
                    file,
                    seed: s.seed,
                    disturbance_index: s.record.disturbance_index,
                    scenario: s.scenario.clone(),
                    excitation: s.excitation.clone(),
                });
            }
        }
        let manifest = Manifest {
            dt: self.train.first().map_or(0.0, |s| s.record.dt),
            n_train: self.train.len(),
            n_test: self.test.len(),
            entries,
        };
        let path = dir.join("manifest.json");
        std::fs::write(&path, serde_json::to_string_pretty(&manifest)?)
            .map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("manifest.json");
        if !path.exists() {
            return Err(Error::Dependency(format!(
                "no dataset manifest at {} (run gen-data first)",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        let mut ds = Dataset::default();
        for e in manifest.entries {
            let p = dir.join(&e.file);
            let f = File::open(&p).map_err(|err| Error::io(&p, err))?;
            let record = TrajectoryRecord::read_csv(f, e.disturbance_index)?;
            let sample = Sample {
                seed: e.seed,
                scenario: e.scenario,
                excitation: e.excitation,
                record,
            };
            match e.split.as_str() {
                "train" => ds.train.push(sample),
                "test" => ds.test.push(sample),
                other => {
                    return Err(Error::Config(format!(
                        "unknown split {other:?} in manifest"
                    )))
                }
            }
        }
        Ok(ds)
    }
}
