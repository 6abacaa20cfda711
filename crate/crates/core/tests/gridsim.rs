use cefc::gridsim::{
    simulate, steady_state_deviation, Control, GridModel, Machine, Observation, Policy, Scenario,
};
use cefc::Result;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn step_scenario(deficit_mw: f64) -> Scenario {
    Scenario {
        step_deficit_mw: deficit_mw,
        ..Scenario::new(vec![], 1.0)
    }
}

/// Two-state frequency response `M ω' = Pm − ΔP − D ω`, `T Pm' = −Pm − K ω`
/// integrated by RK4 at `dt / 100`, sampled every `dt`.
fn reference_omega(m: f64, d: f64, k: f64, tc: f64, deficit: f64, sc: &Scenario) -> Vec<f64> {
    let f = |x: [f64; 2], dp: f64| [(x[1] - dp - d * x[0]) / m, (-x[1] - k * x[0]) / tc];
    let fine = 100;
    let h = sc.dt / fine as f64;
    let k_dist = sc.disturbance_index();
    let mut x = [0.0, 0.0];
    let mut out = Vec::new();
    for s in 0..sc.n_samples() {
        out.push(x[0]);
        let dp = if s >= k_dist { deficit } else { 0.0 };
        for _ in 0..fine {
            let k1 = f(x, dp);
            let k2 = f([x[0] + 0.5 * h * k1[0], x[1] + 0.5 * h * k1[1]], dp);
            let k3 = f([x[0] + 0.5 * h * k2[0], x[1] + 0.5 * h * k2[1]], dp);
            let k4 = f([x[0] + h * k3[0], x[1] + h * k3[1]], dp);
            for i in 0..2 {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }
    out
}

#[test]
fn single_machine_nadir_matches_fine_step_reference() {
    let grid = GridModel::single_machine(6.0, 1.0, 20.0, 8.0);
    let sc = step_scenario(100.0);
    let rec = simulate(&grid, &sc, None).unwrap();
    let reference = reference_omega(6.0, 1.0, 20.0, 8.0, 0.1, &sc);
    let ref_nadir = reference.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(
        (rec.nadir() - ref_nadir).abs() < 1e-5,
        "{} vs {ref_nadir}",
        rec.nadir()
    );
    for (a, b) in rec.omega.iter().zip(&reference) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn steady_state_matches_closed_form_on_random_grids() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..10 {
        let mut grid = GridModel::single_machine(1.0, 1.0, 1.0, 1.0);
        let n = rng.random_range(1..=4);
        grid.machines = (0..n)
            .map(|_| Machine {
                inertia: rng.random_range(2.0..8.0),
                damping: rng.random_range(0.5..2.0),
                governor_gain: rng.random_range(5.0..20.0),
                governor_time_constant: rng.random_range(0.5..6.0),
                capacity_mw: 2000.0,
                dispatch_mw: 1000.0,
                unit_mw: 50.0,
            })
            .collect();
        let deficit = rng.random_range(0.02..0.2);
        let rec = simulate(&grid, &step_scenario(deficit * grid.base_mw), None).unwrap();
        let expected = steady_state_deviation(&grid, deficit);
        let tail = *rec.omega.last().unwrap();
        assert!((tail - expected).abs() < 1e-4, "{tail} vs {expected}");
    }
    assert_eq!(steady_state_deviation(&GridModel::desk_scale(), 0.0), 0.0);
}

#[test]
fn steady_state_formula_example() {
    let grid = GridModel::single_machine(5.0, 1.0, 20.0, 4.0);
    assert!((steady_state_deviation(&grid, 0.21) + 0.01).abs() < 1e-15);
}

/// Holds every link at `dc` from the disturbance on.
struct Hold {
    k_dist: usize,
    dc: Vec<f64>,
    n_loads: usize,
}

impl Policy for Hold {
    fn act(&mut self, obs: &Observation<'_>) -> Result<Control> {
        let dc = if obs.step >= self.k_dist {
            self.dc.clone()
        } else {
            vec![0.0; self.dc.len()]
        };
        Ok(Control {
            shed: vec![0.0; self.n_loads],
            dc,
        })
    }
}

#[test]
fn receiving_end_support_never_lowers_the_nadir() {
    let grid = GridModel::desk_scale();
    let receiving = grid
        .hvdc
        .iter()
        .position(|h| h.end.injection_sign() > 0.0)
        .expect("desk grid has a receiving link");
    let (_, hi) = grid.ud_bounds_pu(receiving);
    for trips in [vec![0], vec![1, 2], vec![0, 1, 2]] {
        let sc = Scenario::new(trips, 0.85);
        let mut last = f64::NEG_INFINITY;
        for i in 0..=5 {
            let mut dc = vec![0.0; grid.n_links()];
            dc[receiving] = hi * i as f64 / 5.0;
            let mut hold = Hold {
                k_dist: sc.disturbance_index(),
                dc,
                n_loads: grid.n_loads(),
            };
            let nadir = simulate(&grid, &sc, Some(&mut hold)).unwrap().nadir();
            assert!(nadir >= last - 1e-12, "support {i}/5 lowered the nadir");
            last = nadir;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn applied_dc_respects_ramp_limits(seed in 0u64..1000, trips in prop::sample::subsequence(vec![0usize, 1, 2], 0..=3)) {
        let grid = GridModel::desk_scale();
        let sc = Scenario::new(trips, 0.9);
        let bounds: Vec<(f64, f64)> = (0..grid.n_links()).map(|k| grid.ud_bounds_pu(k)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut random_steps = |_: &Observation<'_>| -> Result<Control> {
            Ok(Control {
                shed: vec![0.0; 3],
                dc: bounds.iter().map(|(lo, hi)| if rng.random_bool(0.2) { rng.random_range(*lo..=*hi) } else { 0.0 }).collect(),
            })
        };
        let rec = simulate(&grid, &sc, Some(&mut random_steps)).unwrap();
        for (k, link) in grid.hvdc.iter().enumerate() {
            let max_step = link.ramp_mw_per_s / grid.base_mw * sc.dt;
            for w in rec.dc_applied.windows(2) {
                prop_assert!((w[1][k] - w[0][k]).abs() <= max_step * (1.0 + 1e-9));
            }
        }
    }

    #[test]
    fn quiet_grid_stays_at_equilibrium(scale in 0.5f64..1.5) {
        let rec = simulate(&GridModel::desk_scale(), &Scenario::new(vec![], scale), None).unwrap();
        prop_assert!(rec.omega.iter().all(|w| w.abs() < 1e-9));
    }
}
