//! Acceptance suite. Runs every criterion in sequence (timings are measured
//! on whatever cores are available, so nothing else runs concurrently),
//! prints one PASS/FAIL line per criterion and exits non-zero on any failure.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use gpmpc_core::dynamics::{self, ControlU, ModelParams};
use gpmpc_core::gp::{self, KernelParams};
use gpmpc_core::mpc::{self, MpcConfig, ZeroDisturbance};
use gpmpc_core::planner::{self, segment_free, Circle, PlannerConfig, World};
use gpmpc_core::sim::{self, GroundTruthModel, ReferenceSpec, ScenarioConfig, Sweep};
use gpmpc_core::sysid::{self, ModelBundle, SysIdConfig};
use gpmpc_core::Vec2;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.2} s", d.as_secs_f64())
}

// ---------------------------------------------------------------- GP oracles

/// Squared-exponential kernel written out independently of the library.
fn se(a: &[f64], b: &[f64], p: &KernelParams) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        let d = (a[k] - b[k]) / p.length_scales[k];
        s += d * d;
    }
    p.scale * (-0.5 * s).exp()
}

/// Conditions the joint Gaussian of (y, f*) on y using a dense LU inverse.
fn block_conditioning(
    x: &[Vec<f64>],
    y: &[f64],
    xs: &[Vec<f64>],
    p: &KernelParams,
    diag_extra: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let m = xs.len();
    let all: Vec<&Vec<f64>> = x.iter().chain(xs.iter()).collect();
    let mut joint = DMatrix::from_fn(n + m, n + m, |i, j| se(all[i], all[j], p));
    for i in 0..n {
        joint[(i, i)] += diag_extra;
    }
    let kxx = joint.view((0, 0), (n, n)).into_owned();
    let ksx = joint.view((n, 0), (m, n)).into_owned();
    let kss = joint.view((n, n), (m, m)).into_owned();
    let inv = kxx.lu().try_inverse().expect("invertible");
    let ybar = y.iter().sum::<f64>() / n as f64;
    let yc = DVector::from_iterator(n, y.iter().map(|v| v - ybar));
    let mean = &ksx * &inv * yc;
    let cov = &kss - &ksx * &inv * ksx.transpose();
    (
        mean.iter().map(|v| v + ybar).collect(),
        (0..m).map(|i| cov[(i, i)]).collect(),
    )
}

fn rows(x: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(x.len(), x[0].len(), |i, j| x[i][j])
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo.ln()..hi.ln()).exp()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1001);
    let (mut dm, mut dv) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let d = rng.random_range(1..=3);
        let n = rng.random_range(1..=5);
        let m = rng.random_range(1..=3);
        let x: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let xs: Vec<Vec<f64>> = (0..m)
            .map(|_| (0..d).map(|_| rng.random_range(-3.0..3.0)).collect())
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let p = KernelParams::new(
            log_uniform(&mut rng, 0.1, 10.0),
            (0..d).map(|_| log_uniform(&mut rng, 0.3, 3.0)).collect(),
            log_uniform(&mut rng, 1e-4, 1.0),
        )
        .unwrap();
        let gp = gp::fit(&rows(&x), &y, &p).unwrap();
        let (mean, var) = block_conditioning(&x, &y, &xs, &p, p.noise_var + gp.jitter());
        for (k, q) in xs.iter().enumerate() {
            let pred = gp.predict(q).unwrap();
            dm = dm.max((pred.mean - mean[k]).abs());
            dv = dv.max((pred.variance - var[k].max(0.0)).abs());
        }
    }
    let t = start.elapsed();
    outcome(
        dm <= 1e-9 && dv <= 1e-9 && t < Duration::from_secs(5),
        format!("200 instances: max |dmean| {dm:.2e}, max |dvar| {dv:.2e}, {}", secs(t)),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1002);
    let (mut de, mut vmax) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let d = rng.random_range(1..=2);
        let n = rng.random_range(2..=12);
        let ell = rng.random_range(0.3..1.0);
        // inputs on a lattice with spacing >= 2 length scales keep the Gram matrix well conditioned
        let x: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                (0..d)
                    .map(|k| {
                        if k == 0 {
                            2.0 * i as f64
                        } else {
                            rng.random_range(-0.5..0.5)
                        }
                    })
                    .collect()
            })
            .collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let p = KernelParams::isotropic(rng.random_range(0.5..5.0), ell, 0.0, d).unwrap();
        let gp = gp::fit(&rows(&x), &y, &p).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let pred = gp.predict(xi).unwrap();
            de = de.max((pred.mean - yi).abs());
            vmax = vmax.max(pred.variance);
        }
    }
    outcome(
        de <= 1e-8 && vmax <= 1e-8,
        format!("100 noiseless fits: max |mean - y| {de:.2e}, max variance {vmax:.2e}"),
    )
}

// ------------------------------------------------------------ identification

fn a0_from_sweep(gt: &GroundTruthModel, seed: u64) -> f64 {
    let traj = sim::generate_training_run(gt, &Sweep::default(), 0.1, seed).unwrap();
    let data = sysid::velocity_dataset(&traj, SysIdConfig::default().lowpass_cutoff_hz).unwrap();
    sysid::effective_radius(&sysid::fit_linear(&data).unwrap())
}

fn criterion_3() -> Outcome {
    let mut gt = GroundTruthModel {
        bias: [0.0, 0.0],
        brownian_sigma: 0.0,
        ..GroundTruthModel::default()
    };
    let clean = a0_from_sweep(&gt, 0);
    gt.brownian_sigma = 0.5;
    let noisy = a0_from_sweep(&gt, 1);
    let (ec, en) = ((clean / 1.5 - 1.0).abs(), (noisy / 1.5 - 1.0).abs());
    outcome(
        ec <= 0.02 && en <= 0.05,
        format!(
            "a0_true 1.5: noiseless a0_hat {clean:.6} ({:.4}% err), sigma 0.5 a0_hat {noisy:.6} ({:.4}% err)",
            100.0 * ec,
            100.0 * en
        ),
    )
}

fn criterion_4() -> (Outcome, ModelBundle) {
    let gt = GroundTruthModel::default();
    let traj = sim::generate_training_run(&gt, &Sweep::default(), 0.1, 7).unwrap();
    let start = Instant::now();
    let bundle = sysid::identify(&traj, &SysIdConfig::default(), 7).unwrap();
    let t = start.elapsed();
    let (x, y) = (bundle.mae.x, bundle.mae.y);
    let px = x.mae_pct.unwrap_or(f64::INFINITY);
    let py = y.mae_pct.unwrap_or(f64::INFINITY);
    (
        outcome(
            px <= 5.0 && py <= 5.0 && x.n_train <= 2000 && t < Duration::from_secs(60),
            format!(
                "MAE x {px:.2}% y {py:.2}% of test range ({} train / {} test points), {}",
                x.n_train,
                x.n_test,
                secs(t)
            ),
        ),
        bundle,
    )
}

// ---------------------------------------------------------------------- QP

/// Horizon cost by explicit rollout, independent of the condensed form.
fn rollout_cost(u: &[f64], p0: Vec2, refs: &[Vec2], d: Vec2, a0: f64, cfg: &MpcConfig) -> f64 {
    let q = cfg.q_matrix();
    let r = cfg.r_matrix();
    let params = ModelParams { a0, dt: cfg.dt };
    let mut p = p0;
    let mut cost = 0.0;
    for (t, r_t) in refs.iter().enumerate() {
        let ut = ControlU::new(u[2 * t], u[2 * t + 1]);
        p = dynamics::step(p, ut, d, &params);
        let e = p - r_t;
        cost += e.dot(&(q * e)) + ut.as_vec().dot(&(r * ut.as_vec()));
    }
    cost
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1005);
    let (mut inactive, mut active) = (0, 0);
    let mut worst_match = 0.0f64;
    let mut worst_kkt = 0.0f64;
    let mut failures = Vec::new();
    for case in 0..500 {
        let horizon = rng.random_range(1..=6);
        let qd: [f64; 2] = [rng.random_range(0.1..5.0), rng.random_range(0.1..5.0)];
        let qo = rng.random_range(-0.9..0.9) * (qd[0] * qd[1]).sqrt();
        let rd = [rng.random_range(1e-3..1.0), rng.random_range(1e-3..1.0)];
        let tight = case % 2 == 1;
        let lim = if tight { rng.random_range(0.5..5.0) } else { 1e4 };
        let cfg = MpcConfig {
            q: [[qd[0], qo], [qo, qd[1]]],
            r: [[rd[0], 0.0], [0.0, rd[1]]],
            horizon,
            dt: rng.random_range(0.01..0.2),
            u_min: [-lim, -lim],
            u_max: [lim, lim],
            ..MpcConfig::default()
        };
        let a0 = rng.random_range(0.5..3.0);
        let p0 = Vec2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0));
        let d = Vec2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
        let refs: Vec<Vec2> = (0..horizon)
            .map(|_| Vec2::new(rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0)))
            .collect();
        let qp = mpc::build_qp(p0, &refs, d, a0, &cfg).unwrap();
        let sol = mpc::solve_qp(&qp, &cfg);
        let cost = |u: &[f64]| rollout_cost(u, p0, &refs, d, a0, &cfg);
        let j_sol = cost(sol.u.as_slice());
        if !sol.converged || sol.kkt_residual > 1e-8 {
            failures.push(format!(
                "case {case}: converged {} kkt {:.1e}",
                sol.converged, sol.kkt_residual
            ));
        }
        worst_kkt = worst_kkt.max(sol.kkt_residual);

        // recover the quadratic from rollout costs alone, then solve it densely
        let n = 2 * horizon;
        let j0 = cost(&vec![0.0; n]);
        let unit = |i: usize, s: f64| {
            let mut v = vec![0.0; n];
            v[i] = s;
            v
        };
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        for i in 0..n {
            let (jp, jm) = (cost(&unit(i, 1.0)), cost(&unit(i, -1.0)));
            h[(i, i)] = jp + jm - 2.0 * j0;
            g[i] = 0.5 * (jp - jm);
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let mut v = vec![0.0; n];
                v[i] = 1.0;
                v[j] = 1.0;
                let hij = cost(&v) - j0 - g[i] - g[j] - 0.5 * (h[(i, i)] + h[(j, j)]);
                h[(i, j)] = hij;
                h[(j, i)] = hij;
            }
        }
        let u_star = h.clone().lu().solve(&(-&g)).expect("positive definite");
        let clipped: Vec<f64> = u_star.iter().map(|v| v.clamp(-lim, lim)).collect();
        if clipped.iter().zip(u_star.iter()).all(|(a, b)| a == b) {
            inactive += 1;
            let j_star = cost(&clipped);
            let gap = (j_sol - j_star).abs() / j_star.abs().max(1.0);
            worst_match = worst_match.max(gap);
            if gap > 1e-6 {
                failures.push(format!("case {case}: cost {j_sol} vs dense {j_star}"));
            }
        } else {
            active += 1;
            for _ in 0..1000 {
                let v: Vec<f64> = (0..n).map(|_| rng.random_range(-lim..=lim)).collect();
                if cost(&v) < j_sol - 1e-9 * j_sol.abs().max(1.0) {
                    failures.push(format!("case {case}: random feasible point beats solver"));
                    break;
                }
            }
        }
    }
    outcome(
        failures.is_empty() && inactive > 0 && active > 0,
        format!(
            "{inactive} box-inactive (worst rel. gap {worst_match:.1e}), {active} box-active vs 1000 random points each, worst KKT {worst_kkt:.1e}{}",
            failures.first().map(|f| format!("; first failure: {f}")).unwrap_or_default()
        ),
    )
}

// -------------------------------------------------------------- closed loop

fn circle_config(gt: GroundTruthModel) -> ScenarioConfig {
    ScenarioConfig {
        reference: ReferenceSpec::Circle {
            radius: 50.0,
            angular_speed: 0.05,
            duration: TAU / 0.05,
        },
        dt: 0.03,
        mpc: MpcConfig::default(),
        ground_truth: gt,
    }
}

fn criterion_6(bundle: &ModelBundle) -> Outcome {
    let start = Instant::now();
    let cfg = circle_config(GroundTruthModel::default());
    assert_eq!((cfg.mpc.horizon, cfg.mpc.dt, cfg.mpc.r[0][0]), (5, 0.03, 0.01));
    let scenario = cfg.build(bundle.a0_hat).unwrap();
    let mut worst_ratio = 0.0f64;
    for seed in 0..10 {
        let gp_log = sim::simulate_closed_loop(&scenario, bundle.a0_hat, &bundle.gps, seed).unwrap();
        let base_log = sim::simulate_closed_loop(&scenario, bundle.a0_hat, &ZeroDisturbance, seed).unwrap();
        let ratio = sim::metrics(&gp_log).unwrap().rms_error / sim::metrics(&base_log).unwrap().rms_error;
        worst_ratio = worst_ratio.max(ratio);
    }

    let bias = Vec2::new(8.0, -6.0);
    let constant = GroundTruthModel::constant(1.5, bias, GroundTruthModel::default().brownian_sigma);
    let traj = sim::generate_training_run(&constant, &Sweep::default(), 0.1, 21).unwrap();
    let cbundle = sysid::identify(&traj, &SysIdConfig::default(), 21).unwrap();
    let scenario = circle_config(constant).build(cbundle.a0_hat).unwrap();
    let log = sim::simulate_closed_loop(&scenario, cbundle.a0_hat, &cbundle.gps, 0).unwrap();
    let tail = sim::metrics_from(&log, log.len() / 2).unwrap();
    let t = start.elapsed();
    outcome(
        worst_ratio <= 0.25 && tail.max_error < 0.01 * 50.0 && t < Duration::from_secs(30),
        format!(
            "worst paired GP/baseline RMS ratio {worst_ratio:.3} over 10 seeds; constant disturbance steady-state max error {:.3} um (< 0.5 um); {}",
            tail.max_error,
            secs(t)
        ),
    )
}

fn cluttered_world() -> World {
    let obstacles = [
        ((25.0, 20.0), 8.0),
        ((55.0, 30.0), 10.0),
        ((30.0, 60.0), 9.0),
        ((70.0, 65.0), 8.0),
        ((80.0, 25.0), 6.0),
        ((50.0, 85.0), 6.0),
    ];
    World::new(
        [0.0, 0.0, 100.0, 100.0],
        obstacles
            .iter()
            .map(|&((x, y), r)| Circle::new(Vec2::new(x, y), r))
            .collect(),
        3.0,
    )
    .unwrap()
}

fn criterion_7(bundle: &ModelBundle) -> Outcome {
    let world = cluttered_world();
    let mut worst_dev = 0.0f64;
    let mut collisions = 0;
    for seed in 0..10 {
        let cfg = ScenarioConfig {
            reference: ReferenceSpec::PlannerPath {
                world: world.clone(),
                start: [5.0, 5.0],
                goal: [95.0, 95.0],
                planner: PlannerConfig {
                    seed,
                    ..PlannerConfig::default()
                },
                nominal_freq: 5.0,
            },
            ground_truth: GroundTruthModel::default(),
            ..ScenarioConfig::default()
        };
        let res = planner::plan(
            Vec2::new(5.0, 5.0),
            Vec2::new(95.0, 95.0),
            &world,
            &PlannerConfig {
                seed,
                ..PlannerConfig::default()
            },
        )
        .unwrap();
        collisions += res
            .path
            .waypoints
            .windows(2)
            .filter(|w| !segment_free(w[0], w[1], &world))
            .count();
        let scenario = cfg.build(bundle.a0_hat).unwrap();
        let log = sim::simulate_closed_loop(&scenario, bundle.a0_hat, &bundle.gps, seed).unwrap();
        worst_dev = worst_dev.max(sim::metrics(&log).unwrap().max_error);
    }
    let limit = 0.5 * world.clearance;
    outcome(
        collisions == 0 && worst_dev < limit && world.obstacles.len() >= 5,
        format!(
            "{} obstacles, {collisions} colliding segments, worst max deviation {worst_dev:.3} um over 10 seeds (limit {limit} um)",
            world.obstacles.len()
        ),
    )
}

fn criterion_8() -> Outcome {
    let world = World::new([-20.0, -60.0, 120.0, 60.0], vec![], 0.0).unwrap();
    let mut worst = 0.0f64;
    let mut monotone = true;
    for seed in 0..10 {
        let cfg = PlannerConfig {
            max_iters: 5000,
            seed,
            ..PlannerConfig::default()
        };
        let res = planner::plan(Vec2::zeros(), Vec2::new(100.0, 0.0), &world, &cfg).unwrap();
        worst = worst.max(res.path.cost);
        monotone &= res.cost_history.windows(2).all(|w| w[1] <= w[0]);
    }
    outcome(
        worst <= 105.0 && monotone,
        format!(
            "worst empty-world cost {worst:.4} for straight line 100 over 10 seeds; incumbent monotone: {monotone}"
        ),
    )
}

// -------------------------------------------------------------- determinism

fn snapshot(dir: &Path, out: &mut Vec<(String, Vec<u8>)>) {
    let mut entries: Vec<_> = fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            snapshot(&p, out);
        } else {
            out.push((p.display().to_string(), fs::read(&p).unwrap()));
        }
    }
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::TempDir::new().unwrap();
    let root = tmp.path();
    fs::write(
        root.join("cfg.toml"),
        "seed = 5\n[sweep]\nstride = 7\n[sysid]\nmax_train_points = 500\nhyperopt_points = 120\n\
         [scenario.reference]\nkind = \"circle\"\nradius = 30.0\nangular_speed = 0.1\nduration = 10.0\n",
    )
    .unwrap();
    fs::write(
        root.join("world.json"),
        serde_json::to_string(&cluttered_world()).unwrap(),
    )
    .unwrap();
    let cfg = root.join("cfg.toml").display().to_string();
    let out = root.join("out").display().to_string();
    let model = root.join("out/model.json").display().to_string();
    let data = root.join("out/sweep.csv").display().to_string();
    let world = root.join("world.json").display().to_string();
    let commands: Vec<Vec<&str>> = vec![
        vec!["generate"],
        vec!["sysid", "--data", &data],
        vec!["plan", "--world", &world, "--start", "5,5", "--goal", "95,95"],
        vec![
            "track",
            "--model",
            &model,
            "--baseline",
            "--diagnostics",
            "--seeds",
            "0..3",
        ],
    ];
    let mut runs = Vec::new();
    for _ in 0..2 {
        let _ = fs::remove_dir_all(root.join("out"));
        for c in &commands {
            let mut args = vec!["gpmpc", "--config", &cfg, "--output-dir", &out];
            args.extend(c.iter());
            let code = gpmpc_cli::main_with_args(args);
            if code != 0 {
                return outcome(false, format!("`{}` exited with {code}", c.join(" ")));
            }
        }
        let mut files = Vec::new();
        snapshot(&root.join("out"), &mut files);
        runs.push(files);
    }
    let data_files = runs[0]
        .iter()
        .filter(|(p, _)| p.ends_with(".csv") || p.ends_with(".json") || p.ends_with(".jsonl"))
        .count();
    let identical = runs[0] == runs[1];
    outcome(
        identical && data_files > 10,
        format!("generate, sysid, plan, track x2: {data_files} CSV/JSON files (plus SVGs) byte-identical: {identical}"),
    )
}

// -------------------------------------------------------------- performance

fn criterion_10(bundle: &ModelBundle) -> Outcome {
    let cfg = MpcConfig::experiment();
    assert_eq!((cfg.horizon, cfg.dt), (6, 0.1));
    let reference = sim::circle_reference(50.0, 0.05, cfg.dt, 60.0).unwrap();
    let mut worst_step = Duration::ZERO;
    let mut u = ControlU::ZERO;
    let mut p = reference[0] + Vec2::new(0.5, -0.5);
    for k in 0..200 {
        let t = Instant::now();
        let (u_next, _) = mpc::mpc_step(p, &reference, k, &bundle.gps, bundle.a0_hat, &cfg, u).unwrap();
        let e = t.elapsed();
        if k >= 5 {
            worst_step = worst_step.max(e);
        }
        p = dynamics::step(
            p,
            u_next,
            Vec2::zeros(),
            &ModelParams {
                a0: bundle.a0_hat,
                dt: cfg.dt,
            },
        );
        u = u_next;
    }

    let scenario = ScenarioConfig {
        reference: ReferenceSpec::Circle {
            radius: 50.0,
            angular_speed: 0.05,
            duration: 60.0,
        },
        dt: 0.1,
        mpc: cfg,
        ground_truth: GroundTruthModel::default(),
    }
    .build(bundle.a0_hat)
    .unwrap();
    let t = Instant::now();
    let log = sim::simulate_closed_loop(&scenario, bundle.a0_hat, &bundle.gps, 0).unwrap();
    let run = t.elapsed();
    outcome(
        worst_step < Duration::from_millis(10) && run < Duration::from_secs(5) && log.len() == 601,
        format!(
            "worst single T=6 step {:.3} ms (2000-point GPs); 60 s at 10 Hz ({} steps) in {}",
            worst_step.as_secs_f64() * 1e3,
            log.len(),
            secs(run)
        ),
    )
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut report = |id: u32, name: &'static str, o: Outcome| {
        println!(
            "[{}] {id:>2}. {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        results.push((id, name, o));
    };
    report(1, "GP oracle equivalence", criterion_1());
    report(2, "GP interpolation", criterion_2());
    report(3, "identification recovery", criterion_3());
    let (o4, bundle) = criterion_4();
    report(4, "disturbance-learning quality", o4);
    report(5, "QP correctness", criterion_5());
    report(6, "closed-loop improvement", criterion_6(&bundle));
    report(7, "cluttered environment", criterion_7(&bundle));
    report(8, "planner optimality trend", criterion_8());
    report(9, "determinism", criterion_9());
    report(10, "performance", criterion_10(&bundle));

    let failed: Vec<u32> = results.iter().filter(|r| !r.2.pass).map(|r| r.0).collect();
    println!(
        "acceptance: {} passed, {} failed",
        results.len() - failed.len(),
        failed.len()
    );
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
