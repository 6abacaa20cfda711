use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::dataset::Sample;
use super::observables::{lift, LiftedState, ObservableConfig, Window};
use crate::gridsim::{Control, TrajectoryRecord};
use crate::linalg::StreamingLeastSquares;
use crate::{Error, Result};

pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Lifted linear model `g_{t+1} = A g_t + B_l u_{l,t} + B_d u_{d,t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct KoopmanModel {
    pub a: DMatrix<f64>,
    pub b_l: DMatrix<f64>,
    pub b_d: DMatrix<f64>,
    pub config: ObservableConfig,
    pub ridge: f64,
    pub n_monitored: usize,
}

impl KoopmanModel {
    pub fn new(
        a: DMatrix<f64>,
        b_l: DMatrix<f64>,
        b_d: DMatrix<f64>,
        config: ObservableConfig,
        n_monitored: usize,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b_l.nrows() != n || b_d.nrows() != n {
            return Err(Error::Dimension(format!(
                "A is {}x{}, B_l has {} rows, B_d has {} rows",
                a.nrows(),
                a.ncols(),
                b_l.nrows(),
                b_d.nrows()
            )));
        }
        if config.dim(n_monitored) != n {
            return Err(Error::Dimension(format!(
                "observable config lifts to {} entries but A is {n}x{n}",
                config.dim(n_monitored)
            )));
        }
        Ok(KoopmanModel {
            a,
            b_l,
            b_d,
            config,
            ridge: 0.0,
            n_monitored,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_loads(&self) -> usize {
        self.b_l.ncols()
    }

    pub fn n_links(&self) -> usize {
        self.b_d.ncols()
    }

    /// `[B_l B_d]`.
    pub fn b(&self) -> DMatrix<f64> {
        let mut b = DMatrix::zeros(self.dim(), self.n_loads() + self.n_links());
        b.columns_mut(0, self.n_loads()).copy_from(&self.b_l);
        b.columns_mut(self.n_loads(), self.n_links())
            .copy_from(&self.b_d);
        b
    }

    pub fn lift(&self, window: &Window<'_>) -> Result<LiftedState> {
        lift(window, &self.config)
    }

    /// Lifted state of the undisturbed operating point (ω ≡ 0, y ≡ 1).
    pub fn equilibrium(&self) -> LiftedState {
        let n = self.config.window_len();
        let omega = vec![0.0; n];
        let y = vec![vec![1.0; self.n_monitored]; n];
        lift(
            &Window {
                omega: &omega,
                y: &y,
            },
            &self.config,
        )
        .expect("equilibrium window has the configured length")
    }

    pub fn step(&self, g: &DVector<f64>, shed: &[f64], dc: &[f64]) -> DVector<f64> {
        let mut next = &self.a * g;
        for (j, &u) in shed.iter().enumerate() {
            if u != 0.0 {
                next.axpy(u, &self.b_l.column(j), 1.0);
            }
        }
        for (k, &u) in dc.iter().enumerate() {
            if u != 0.0 {
                next.axpy(u, &self.b_d.column(k), 1.0);
            }
        }
        next
    }

    /// Lifted states g_1..g_T starting from `g1`, driven by `u_1..u_{T−1}`.
    pub fn rollout_states(
        &self,
        g1: &DVector<f64>,
        controls: &[Control],
        steps: usize,
    ) -> Result<Vec<DVector<f64>>> {
        if controls.len() < steps {
            return Err(Error::Length {
                needed: steps,
                available: controls.len(),
            });
        }
        let mut states = Vec::with_capacity(steps);
        let mut g = g1.clone();
        for u in controls.iter().take(steps) {
            self.check_control(u)?;
            let next = self.step(&g, &u.shed, &u.dc);
            states.push(std::mem::replace(&mut g, next));
        }
        Ok(states)
    }

    fn check_control(&self, u: &Control) -> Result<()> {
        if u.shed.len() != self.n_loads() || u.dc.len() != self.n_links() {
            return Err(Error::Dimension(format!(
                "control has {} shed / {} dc entries, model expects {} / {}",
                u.shed.len(),
                u.dc.len(),
                self.n_loads(),
                self.n_links()
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&ModelFile::from(self))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelFile::from(self))?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str::<ModelFile>(s)?.try_into()
    }
}

/// On-disk model layout: dimensions, observable config and row-major matrices.
#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    dim: usize,
    n_loads: usize,
    n_links: usize,
    n_monitored: usize,
    ridge: f64,
    config: ObservableConfig,
    a: Vec<Vec<f64>>,
    b_l: Vec<Vec<f64>>,
    b_d: Vec<Vec<f64>>,
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], nrows: usize, ncols: usize, name: &str) -> Result<DMatrix<f64>> {
    if rows.len() != nrows || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Dimension(format!("{name} must be {nrows}x{ncols}")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!("{name} has non-finite entries")));
    }
    Ok(DMatrix::from_row_slice(nrows, ncols, &flat))
}

impl From<&KoopmanModel> for ModelFile {
    fn from(m: &KoopmanModel) -> Self {
        ModelFile {
            dim: m.dim(),
            n_loads: m.n_loads(),
            n_links: m.n_links(),
            n_monitored: m.n_monitored,
            ridge: m.ridge,
            config: m.config.clone(),
            a: rows(&m.a),
            b_l: rows(&m.b_l),
            b_d: rows(&m.b_d),
        }
    }
}

impl TryFrom<ModelFile> for KoopmanModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        let a = from_rows(&f.a, f.dim, f.dim, "A")?;
        let b_l = from_rows(&f.b_l, f.dim, f.n_loads, "B_l")?;
        let b_d = from_rows(&f.b_d, f.dim, f.n_links, "B_d")?;
        let mut m = KoopmanModel::new(a, b_l, b_d, f.config, f.n_monitored)?;
        m.ridge = f.ridge;
        Ok(m)
    }
}

/// Consecutive sample pairs (k, k+1) used for identification: every k with a
/// full window, except the pair straddling the disturbance instant.
pub(crate) fn training_pairs(
    rec: &TrajectoryRecord,
    window_len: usize,
) -> impl Iterator<Item = usize> + '_ {
    // Skip every pair whose windows mix pre- and post-disturbance samples: the
    // jump is not generated by the dynamics being fitted.
    let dist = rec.disturbance_index;
    let mixed = dist.saturating_sub(1)..dist + window_len - 1;
    (window_len - 1..rec.len().saturating_sub(1)).filter(move |k| !mixed.contains(k))
}

/// Fits `[A B]` by ridge least squares over all consecutive lifted pairs.
pub fn fit(samples: &[Sample], config: &ObservableConfig, ridge: f64) -> Result<KoopmanModel> {
    let records: Vec<&TrajectoryRecord> = samples.iter().map(|s| &s.record).collect();
    fit_records(&records, config, ridge)
}

pub fn fit_records(
    records: &[&TrajectoryRecord],
    config: &ObservableConfig,
    ridge: f64,
) -> Result<KoopmanModel> {
    config.validate()?;
    let first = records
        .first()
        .ok_or_else(|| Error::Config("cannot fit on an empty dataset".into()))?;
    let (m, p, q) = (first.n_monitored(), first.n_loads(), first.n_links());
    if records
        .iter()
        .any(|r| r.n_monitored() != m || r.n_loads() != p || r.n_links() != q)
    {
        return Err(Error::Dimension(
            "records disagree on channel counts".into(),
        ));
    }
    if (first.dt - config.dt).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "record dt {} differs from observable dt {}",
            first.dt, config.dt
        )));
    }
    let window_len = config.window_len();

    let mut config = config.clone();
    if let Some(rbf) = config.dictionary.rbf() {
        if !rbf.is_placed() {
            let base: Vec<Vec<f64>> = records
                .iter()
                .flat_map(|rec| {
                    let cfg = &config;
                    training_pairs(rec, window_len).map(move |k| {
                        let w = Window::ending_at(&rec.omega, &rec.y, k, window_len)
                            .expect("training pairs have full windows");
                        cfg.base_vector(&w)
                    })
                })
                .collect();
            let mut rbf = rbf.clone();
            rbf.place(&base)?;
            *config.dictionary.rbf_mut().expect("rbf dictionary") = rbf;
        }
    }

    let dim = config.dim(m);
    let mut ls = StreamingLeastSquares::new(dim + p + q, dim);
    let mut x = Vec::with_capacity(dim + p + q);
    for rec in records {
        let mut prev: Option<(usize, DVector<f64>)> = None;
        for k in training_pairs(rec, window_len) {
            let g = match prev.take() {
                Some((pk, g)) if pk == k => g,
                _ => {
                    lift(
                        &Window::ending_at(&rec.omega, &rec.y, k, window_len)?,
                        &config,
                    )?
                    .0
                }
            };
            let g_next = lift(
                &Window::ending_at(&rec.omega, &rec.y, k + 1, window_len)?,
                &config,
            )?
            .0;
            x.clear();
            x.extend_from_slice(g.as_slice());
            x.extend_from_slice(&rec.ul[k]);
            x.extend_from_slice(&rec.ud[k]);
            ls.push(&x, g_next.as_slice());
            prev = Some((k + 1, g_next));
        }
    }
    if ls.rows() == 0 {
        return Err(Error::Config(
            "records are too short to form any training pair".into(),
        ));
    }
    let w = ls.solve(ridge)?;
    let wt = w.transpose();
    let a = wt.columns(0, dim).into_owned();
    let b_l = wt.columns(dim, p).into_owned();
    let b_d = wt.columns(dim + p, q).into_owned();
    if a.iter()
        .chain(b_l.iter())
        .chain(b_d.iter())
        .any(|v| !v.is_finite())
    {
        return Err(Error::Singular { column: 0 });
    }
    let mut model = KoopmanModel::new(a, b_l, b_d, config, m)?;
    model.ridge = ridge;
    Ok(model)
}

/// Predicted ω̂_1..ω̂_T from the window at t = 1, driven by `controls[t−1]`
/// (`controls` must hold at least T entries).
pub fn predict_rollout(
    model: &KoopmanModel,
    window: &Window<'_>,
    controls: &[Control],
    steps: usize,
) -> Result<Vec<f64>> {
    let g1 = model.lift(window)?;
    Ok(model
        .rollout_states(&g1.0, controls, steps)?
        .iter()
        .map(|g| g[0])
        .collect())
}
