use gpmpc_core::mpc::ZeroDisturbance;
use gpmpc_core::planner::{segment_free, Circle, PlannerConfig, World};
use gpmpc_core::sim::{self, GroundTruthModel, ReferenceSpec, ScenarioConfig, Sweep};
use gpmpc_core::sysid::{self, ModelBundle, SysIdConfig, TrainingConfig};
use gpmpc_core::Vec2;

fn light_training() -> TrainingConfig {
    TrainingConfig {
        max_train_points: 700,
        hyperopt_points: 150,
        ..TrainingConfig::default()
    }
}

fn quick_bundle(gt: &GroundTruthModel, stride: usize, seed: u64) -> ModelBundle {
    let sweep = Sweep {
        stride,
        ..Sweep::default()
    };
    let traj = sim::generate_training_run(gt, &sweep, 0.1, seed).unwrap();
    let cfg = SysIdConfig {
        training: light_training(),
        ..SysIdConfig::default()
    };
    sysid::identify(&traj, &cfg, seed).unwrap()
}

#[test]
fn noiseless_undisturbed_sweep_recovers_gain_exactly() {
    let gt = GroundTruthModel::constant(1.5, Vec2::zeros(), 0.0);
    let traj = sim::generate_training_run(
        &gt,
        &Sweep {
            stride: 4,
            ..Sweep::default()
        },
        0.1,
        0,
    )
    .unwrap();
    let cfg = SysIdConfig {
        lowpass_cutoff_hz: None,
        training: light_training(),
    };
    let bundle = sysid::identify(&traj, &cfg, 0).unwrap();
    assert!((bundle.a0_hat / 1.5 - 1.0).abs() < 1e-6, "a0_hat {}", bundle.a0_hat);
    // residuals are zero up to rounding, so the held-out error is negligible
    assert!(bundle.mae.x.mae_abs < 1e-6 && bundle.mae.y.mae_abs < 1e-6);
}

#[test]
fn bundle_survives_serialisation() {
    let bundle = quick_bundle(&GroundTruthModel::default(), 9, 2);
    let back = ModelBundle::from_json(&bundle.to_json().unwrap()).unwrap();
    use gpmpc_core::mpc::DisturbanceModel;
    for (a, f) in [(0.1, 3.0), (2.0, 17.5), (5.9, 39.0)] {
        let d1 = bundle.gps.estimate(a, f);
        let d2 = back.gps.estimate(a, f);
        assert!((d1 - d2).norm() < 1e-9);
    }
    assert_eq!(back.a0_hat, bundle.a0_hat);
}

#[test]
fn learned_model_beats_baseline_on_every_seed() {
    let gt = GroundTruthModel::default();
    let bundle = quick_bundle(&gt, 3, 11);
    let scenario = ScenarioConfig {
        reference: ReferenceSpec::Circle {
            radius: 50.0,
            angular_speed: 0.05,
            duration: 30.0,
        },
        ground_truth: gt,
        ..ScenarioConfig::default()
    }
    .build(bundle.a0_hat)
    .unwrap();
    let (mut gp_sum, mut base_sum) = (0.0, 0.0);
    for seed in 0..10 {
        let gp = sim::simulate_closed_loop(&scenario, bundle.a0_hat, &bundle.gps, seed).unwrap();
        let base = sim::simulate_closed_loop(&scenario, bundle.a0_hat, &ZeroDisturbance, seed).unwrap();
        let (g, b) = (sim::metrics(&gp).unwrap(), sim::metrics(&base).unwrap());
        assert!(
            g.rms_error < b.rms_error,
            "seed {seed}: {} vs {}",
            g.rms_error,
            b.rms_error
        );
        assert!(g.mean_abs_dhat_error < b.mean_abs_dhat_error);
        gp_sum += g.rms_error;
        base_sum += b.rms_error;
    }
    assert!(gp_sum < base_sum);
}

#[test]
fn planned_reference_is_collision_free_and_trackable() {
    let world = World::new(
        [0.0, 0.0, 80.0, 80.0],
        vec![
            Circle::new(Vec2::new(25.0, 25.0), 8.0),
            Circle::new(Vec2::new(50.0, 45.0), 9.0),
            Circle::new(Vec2::new(20.0, 60.0), 7.0),
        ],
        2.0,
    )
    .unwrap();
    let gt = GroundTruthModel::constant(1.5, Vec2::new(3.0, -2.0), 0.0);
    let cfg = ScenarioConfig {
        reference: ReferenceSpec::PlannerPath {
            world: world.clone(),
            start: [5.0, 5.0],
            goal: [75.0, 75.0],
            planner: PlannerConfig {
                max_iters: 2000,
                seed: 4,
                ..PlannerConfig::default()
            },
            nominal_freq: 5.0,
        },
        ground_truth: gt,
        ..ScenarioConfig::default()
    };
    let scenario = cfg.build(1.5).unwrap();
    for pair in scenario.reference.windows(2) {
        assert!(segment_free(pair[0], pair[1], &world));
    }
    let known = gpmpc_core::mpc::ConstantDisturbance(Vec2::new(3.0, -2.0));
    let log = sim::simulate_closed_loop(&scenario, 1.5, &known, 0).unwrap();
    let m = sim::metrics(&log).unwrap();
    assert!(m.max_error < 0.5 * world.clearance, "max deviation {}", m.max_error);
}
