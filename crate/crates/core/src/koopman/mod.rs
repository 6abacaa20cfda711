//! Lifted linear (Koopman) models of the COI frequency dynamics.
//!
//! The lifted state is `g_t = [ω_t, φ(ω_{t−τ:t}, y_{t−τ:t})]` with a fixed
//! dictionary φ of delay coordinates and Gaussian radial basis features, and
//! evolves as `g_{t+1} = A g_t + B_l u_{l,t} + B_d u_{d,t}`.

mod dataset;
mod metrics;
mod model;
mod observables;

pub use dataset::{
    derive_seed, generate_dataset, generate_dataset_with, random_scenario, Dataset, DatasetOptions,
    Excitation, Sample,
};
pub use metrics::{
    eval_metrics, horizon_errors, predict_record, prediction_start, record_controls,
    trajectory_errors, Metrics, TrajectoryErrors, MEASUREMENT_DELAY_S, STEADY_STATE_SPAN_S,
};
pub use model::{fit, fit_records, predict_rollout, KoopmanModel, DEFAULT_RIDGE};
pub use observables::{lift, Dictionary, LiftedState, ObservableConfig, RbfSet, Window};

use serde::{Deserialize, Serialize};

/// Default delay span, s (four delays at 0.1 s).
pub const DEFAULT_DELAY_S: f64 = 0.4;
/// RBF count of the delay-embedded dictionary.
pub const CEFC_RBF_COUNT: usize = 30;
/// RBF count of the EDMD baseline.
pub const EDMD_RBF_COUNT: usize = 100;

/// Identification configurations compared in the prediction table. They
/// differ only in their [`ObservableConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Delay coordinates plus RBFs on the delay vector.
    Cefc,
    /// Same dictionary without delays (τ = 0).
    CefcNtd,
    /// 100 RBFs on the current measurements.
    Edmd,
    /// Linear in the current measurements.
    Dmd,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Cefc, Method::CefcNtd, Method::Edmd, Method::Dmd];

    pub fn name(self) -> &'static str {
        match self {
            Method::Cefc => "cefc",
            Method::CefcNtd => "cefc-ntd",
            Method::Edmd => "edmd",
            Method::Dmd => "dmd",
        }
    }

    pub fn observable_config(self, dt: f64) -> ObservableConfig {
        let (delay, dictionary) = match self {
            Method::Cefc => (
                DEFAULT_DELAY_S,
                Dictionary::DelayRbf(RbfSet::unplaced(CEFC_RBF_COUNT)),
            ),
            Method::CefcNtd => (0.0, Dictionary::DelayRbf(RbfSet::unplaced(CEFC_RBF_COUNT))),
            Method::Edmd => (0.0, Dictionary::Rbf(RbfSet::unplaced(EDMD_RBF_COUNT))),
            Method::Dmd => (0.0, Dictionary::Identity),
        };
        ObservableConfig {
            delay,
            dt,
            dictionary,
            include_voltage: true,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = crate::Error;

    fn from_str(s: &str) -> crate::Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| {
                crate::Error::Config(format!("unknown method {s:?} (cefc|cefc-ntd|edmd|dmd)"))
            })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}
