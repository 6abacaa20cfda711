use std::sync::OnceLock;

use cefc::controller::{
    coordinate, coordinate_with, decision_step, max_dc_controls, predict_max_dc, ControlLimits,
    CoordinationSettings, CoordinationTrace, DcMode, LqrWeights, DEFAULT_HORIZON,
};
use cefc::gridsim::{simulate, Control, GridModel, Observation, Scenario};
use cefc::koopman::{
    fit, generate_dataset, predict_rollout, KoopmanModel, Method, Window, DEFAULT_RIDGE,
};
use cefc::units::hz_to_pu;
use cefc::Result;

struct Bed {
    grid: GridModel,
    model: KoopmanModel,
    limits: ControlLimits,
}

fn bed() -> &'static Bed {
    static B: OnceLock<Bed> = OnceLock::new();
    B.get_or_init(|| {
        let grid = GridModel::desk_scale();
        let ds = generate_dataset(&grid, 120, 1, 5).unwrap();
        let model = fit(
            &ds.train,
            &Method::Cefc.observable_config(0.1),
            DEFAULT_RIDGE,
        )
        .unwrap();
        let limits = ControlLimits::for_grid(&grid);
        Bed {
            grid,
            model,
            limits,
        }
    })
}

fn run(sc: &Scenario, dc_mode: DcMode) -> CoordinationTrace {
    let b = bed();
    let st = CoordinationSettings {
        dc_mode,
        ..CoordinationSettings::default()
    };
    coordinate_with(
        &b.grid,
        sc,
        &b.model,
        &b.limits,
        &LqrWeights::default_for_model(&b.model),
        &st,
    )
    .unwrap()
}

fn moderate() -> Scenario {
    Scenario::new(vec![0, 1], 0.8)
}

fn large() -> Scenario {
    Scenario::new(vec![0, 1, 2], 0.8)
}

#[test]
fn small_disturbance_stays_in_the_dead_zone() {
    let sc = Scenario {
        step_deficit_mw: 10.0,
        ..Scenario::new(vec![], 1.0)
    };
    let trace = run(&sc, DcMode::Lqr);
    assert_eq!(trace.activation_step, None);
    assert!(trace.commands.is_empty());
    assert!(trace.plan.is_none());
    assert!(trace.record.ud.iter().flatten().all(|v| *v == 0.0));
}

#[test]
fn moderate_trip_is_handled_by_dc_support_alone() {
    let b = bed();
    let sc = moderate();
    assert!(simulate(&b.grid, &sc, None).unwrap().nadir() < b.limits.omega_min);
    let trace = run(&sc, DcMode::Lqr);
    assert!(trace.activation_step.is_some());
    assert!(!trace.shed_required);
    assert!(trace.plan.is_none());
    assert!(trace.nadir() >= b.limits.omega_min);
}

#[test]
fn large_trip_sheds_once_and_recovers() {
    let b = bed();
    let trace = run(&large(), DcMode::Lqr);
    assert!(trace.shed_required);
    let plan = trace.plan.as_ref().unwrap();
    assert!(plan.feasible && !plan.is_empty());
    assert_eq!(trace.shed_changes(), 1);
    assert!(trace.nadir() >= b.limits.omega_min - hz_to_pu(0.02));
    assert!(trace.steady_state() >= b.limits.steady_state_floor);
}

#[test]
fn commands_stay_within_limits_and_shedding_is_one_shot() {
    let b = bed();
    for sc in [moderate(), large(), Scenario::new(vec![0, 2], 0.9)] {
        for mode in [DcMode::Lqr, DcMode::ConstantMax] {
            let trace = run(&sc, mode);
            for cmd in &trace.commands {
                for (k, u) in cmd.ud.iter().enumerate() {
                    let (lo, hi) = b.limits.ud_bounds_pu(k);
                    assert!(
                        *u >= lo && *u <= hi,
                        "step {}: {u} outside [{lo}, {hi}]",
                        cmd.step
                    );
                }
            }
            assert!(trace.shed_changes() <= 1);
            if let Some(plan) = &trace.plan {
                let d = b.limits.quantum_mw;
                let over: f64 = plan
                    .quantized_mw
                    .iter()
                    .zip(&plan.continuous_mw)
                    .map(|(q, c)| q - c)
                    .sum();
                assert!(over <= b.limits.n_loads() as f64 * d / 2.0 + 1e-9);
                for ((q, c), max) in plan
                    .quantized_mw
                    .iter()
                    .zip(&plan.continuous_mw)
                    .zip(b.limits.node_max_mw())
                {
                    assert!(*q <= max + 1e-9);
                    assert!((q - c).abs() <= d / 2.0 + 1e-9 || *q == (max / d).floor() * d);
                }
            }
        }
    }
}

#[test]
fn default_coordinate_uses_lqr() {
    let b = bed();
    let sc = moderate();
    let w = LqrWeights::default_for_model(&b.model);
    let a = coordinate(&b.grid, &sc, &b.model, &b.limits, &w).unwrap();
    assert_eq!(a.record, run(&sc, DcMode::Lqr).record);
}

#[test]
fn max_dc_prediction_degenerates_to_the_free_rollout() {
    let b = bed();
    let sc = moderate();
    let rec = simulate(&b.grid, &sc, None).unwrap();
    let wl = b.model.config.window_len();
    let k = decision_step(0, sc.disturbance_index(), wl);
    let window = Window::ending_at(&rec.omega, &rec.y, k, wl).unwrap();
    let free_controls = vec![Control::zeros(b.model.n_loads(), b.model.n_links()); DEFAULT_HORIZON];
    let free = predict_rollout(&b.model, &window, &free_controls, DEFAULT_HORIZON).unwrap();

    let mut zero = b.limits.clone();
    zero.support_mw.iter_mut().for_each(|v| *v = 0.0);
    assert_eq!(
        predict_max_dc(&b.model, &window, &zero, DEFAULT_HORIZON).unwrap(),
        free
    );

    let mut no_dc = b.model.clone();
    no_dc.b_d.fill(0.0);
    let pred = predict_max_dc(&no_dc, &window, &b.limits, DEFAULT_HORIZON).unwrap();
    assert_eq!(
        pred,
        predict_rollout(&no_dc, &window, &free_controls, DEFAULT_HORIZON).unwrap()
    );
}

#[test]
fn max_dc_prediction_agrees_with_the_plant() {
    let b = bed();
    let sc = moderate();
    let wl = b.model.config.window_len();
    let k_dec = decision_step(0, sc.disturbance_index(), wl);
    let support = max_dc_controls(&b.limits, 1).remove(0);
    let mut max_dc = |obs: &Observation<'_>| -> Result<Control> {
        Ok(if obs.step >= k_dec {
            support.clone()
        } else {
            Control::zeros(3, 2)
        })
    };
    let rec = simulate(&b.grid, &sc, Some(&mut max_dc)).unwrap();
    assert!(rec.nadir() >= b.limits.omega_min);
    let window = Window::ending_at(&rec.omega, &rec.y, k_dec, wl).unwrap();
    let pred = predict_max_dc(&b.model, &window, &b.limits, DEFAULT_HORIZON).unwrap();
    let pred_nadir = pred.iter().copied().fold(f64::INFINITY, f64::min);
    // Within the prediction accuracy the identification targets.
    assert!(
        pred_nadir >= b.limits.omega_min - hz_to_pu(0.1),
        "{pred_nadir}"
    );
    let truth = &rec.omega[k_dec..k_dec + DEFAULT_HORIZON];
    let err = pred
        .iter()
        .zip(truth)
        .map(|(p, t)| (p - t).abs())
        .sum::<f64>()
        / truth.len() as f64;
    assert!(err < hz_to_pu(0.1), "mean error {err}");
}
