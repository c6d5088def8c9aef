mod common;

use std::sync::Arc;

use common::{fitted_poly, reference_env, sample_state};
use greenhouse_core::coupling::{ExperiencePool, ReplacementConfig, Strategy};
use greenhouse_core::eval::*;
use greenhouse_core::mpc::MpcConfig;
use greenhouse_core::ppo::{train, ActorCritic, NoHooks, PpoConfig};
use greenhouse_core::reward::{RewardBreakdown, RewardWeights};
use greenhouse_core::state::{Action, N_FEATURES};
use greenhouse_core::util::rng_from;
use greenhouse_core::Error;
use proptest::prelude::*;
use rand::Rng;

fn at_temp(t: f64) -> greenhouse_core::state::GreenhouseState {
    let mut s = sample_state(3);
    s.t_air = t;
    s
}

// ---- PID ----

#[test]
fn pid_zero_error_closes() {
    let cfg = PidConfig::default();
    let mut mem = PidMemory::default();
    for _ in 0..50 {
        let (a, m) = pid_step(&cfg, &at_temp(22.0), mem);
        assert_eq!(a.level(), 0);
        mem = m;
    }
    assert_eq!(mem.integral, 0.0);
}

#[test]
fn pid_proportional_only() {
    let cfg = PidConfig {
        kp: 5.0,
        ki: 0.0,
        kd: 0.0,
        ..PidConfig::default()
    };
    let (a, _) = pid_step(&cfg, &at_temp(32.0), PidMemory::default());
    assert_eq!(a.level(), 5);
}

#[test]
fn pid_saturation_freezes_integral() {
    let cfg = PidConfig::default();
    let start = PidMemory {
        integral: 12.5,
        prev_error: Some(28.0),
    };
    let mut mem = start;
    for _ in 0..20 {
        let (a, m) = pid_step(&cfg, &at_temp(50.0), mem);
        assert_eq!(a.level(), 10);
        mem = m;
    }
    assert_eq!(mem.integral, start.integral);

    // Cold side: output pinned at zero, integral held as well.
    let (a, m) = pid_step(&cfg, &at_temp(5.0), PidMemory::default());
    assert_eq!(a.level(), 0);
    assert_eq!(m.integral, 0.0);
}

#[test]
fn pid_integrates_when_unsaturated() {
    let cfg = PidConfig {
        kp: 1.0,
        ki: 0.1,
        kd: 0.0,
        ..PidConfig::default()
    };
    let (_, m) = pid_step(&cfg, &at_temp(24.0), PidMemory::default());
    assert!((m.integral - 2.0 * cfg.dt).abs() < 1e-12);
    assert_eq!(m.prev_error, Some(2.0));
}

proptest! {
    #[test]
    fn pid_output_is_a_level(
        kp in -1e3f64..1e3, ki in -10f64..10.0, kd in -1e3f64..1e3,
        t in -5f64..50.0, integral in -1e4f64..1e4, prev in proptest::option::of(-30f64..30.0),
    ) {
        let cfg = PidConfig { kp, ki, kd, ..PidConfig::default() };
        let (a, _) = pid_step(&cfg, &at_temp(t), PidMemory { integral, prev_error: prev });
        prop_assert!(a.level() <= 10);
    }
}

// ---- controller harness ----

#[test]
fn hold_zero_scores_full_vent() {
    let run = run_controller(&ControllerKind::Hold(Action::from_index(0)), &reference_env(), 2, &[1, 2]).unwrap();
    assert_eq!(run.episodes.len(), 4);
    assert_eq!(run.row.vent_reward_mean, 100.0);
    assert_eq!(run.row.vent_reward_sd, 0.0);
    assert_eq!(run.row.method, "hold-0");
}

#[test]
fn runs_are_reproducible() {
    let env = reference_env();
    let a = run_controller(&ControllerKind::Random, &env, 2, &[5]).unwrap();
    let b = run_controller(&ControllerKind::Random, &env, 2, &[5]).unwrap();
    assert_eq!(a, b);
    let c = run_controller(&ControllerKind::Random, &env, 2, &[6]).unwrap();
    assert_ne!(a.row, c.row);
}

#[test]
fn mpc_beats_random() {
    let env = reference_env();
    let mpc = ControllerKind::Mpc {
        model: Arc::new(fitted_poly().clone()),
        config: MpcConfig::default(),
    };
    let m = run_controller(&mpc, &env, 1, &[1, 2]).unwrap();
    let r = run_controller(&ControllerKind::Random, &env, 1, &[1, 2]).unwrap();
    assert!(m.row.final_reward_mean > r.row.final_reward_mean);
}

#[test]
fn every_row_satisfies_weighting() {
    let env = reference_env();
    let w = env.reward_config().weights.clone();
    let mut report = EvalReport::default();
    for kind in [
        ControllerKind::Pid(PidConfig::default()),
        ControllerKind::Random,
        ControllerKind::Hold(Action::from_index(4)),
    ] {
        report.rows.push(run_controller(&kind, &env, 3, &[9]).unwrap().row);
    }
    report.check_identity(&w, 1e-6).unwrap();
    report.rows[1].final_reward_mean += 0.01;
    assert!(report.check_identity(&w, 1e-6).is_err());
}

#[test]
fn evaluation_days_are_seed_major() {
    let d = evaluation_days(3, &[1, 2]);
    assert_eq!(d.len(), 6);
    assert_eq!(&d[..3], &evaluation_days(3, &[1])[..]);
    assert_eq!(&d[3..], &evaluation_days(3, &[2])[..]);
}

// ---- reports ----

fn random_report(seed: u64, n: usize) -> EvalReport {
    let mut rng = rng_from(seed, &[1]);
    let w = RewardWeights::default();
    EvalReport {
        rows: (0..n)
            .map(|i| {
                let scores: Vec<RewardBreakdown> = (0..4)
                    .map(|_| {
                        let mut c = || rng.random_range(0.0..100.0) / 3.0;
                        RewardBreakdown::from_components(c(), c(), c(), c(), &w)
                    })
                    .collect();
                ReportRow::from_scores(format!("m{i}, \"q\""), &scores)
            })
            .collect(),
    }
}

#[test]
fn report_round_trips() {
    let r = random_report(1, 5);
    let csv = r.to_csv().unwrap();
    let json = r.to_json().unwrap();
    let from_csv = EvalReport::from_csv(&csv).unwrap();
    let from_json = EvalReport::from_json(&json).unwrap();
    for (a, b) in r.rows.iter().zip(&from_csv.rows) {
        assert_eq!(a.method, b.method);
        assert!((a.final_reward_sd - b.final_reward_sd).abs() <= 1e-12);
    }
    assert_eq!(from_csv, r);
    assert_eq!(from_json, from_csv);
}

#[test]
fn empty_report_is_header_only() {
    let csv = EvalReport::default().to_csv().unwrap();
    assert_eq!(csv.trim_end(), REPORT_COLUMNS.join(","));
    assert!(EvalReport::from_csv(&csv).unwrap().rows.is_empty());
}

#[test]
fn report_files() {
    let dir = tempfile::tempdir().unwrap();
    let r = random_report(2, 3);
    for name in ["r.csv", "r.json"] {
        let p = dir.path().join(name);
        let fmt = ReportFormat::from_path(&p);
        r.save(&p, fmt).unwrap();
        assert_eq!(EvalReport::load(&p, fmt).unwrap(), r);
    }
    let bad = dir.path().join("missing/r.csv");
    assert!(matches!(r.save(&bad, ReportFormat::Csv), Err(Error::Io { .. })));
    assert!(EvalReport::from_csv("method,x\nfoo,1\n").is_err());
}

// ---- Shapley values ----

/// Shapley values by averaging marginal contributions over every ordering.
fn permutation_shap(f: &dyn Fn(&[f64]) -> f64, x: &[f64], base: &[f64]) -> Vec<f64> {
    fn perms(n: usize) -> Vec<Vec<usize>> {
        if n == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in perms(n - 1) {
            for k in 0..=p.len() {
                let mut q = p.clone();
                q.insert(k, n - 1);
                out.push(q);
            }
        }
        out
    }
    let n = x.len();
    let all = perms(n);
    let mut phi = vec![0.0; n];
    for order in &all {
        let mut z = base.to_vec();
        let mut prev = f(&z);
        for &i in order {
            z[i] = x[i];
            let cur = f(&z);
            phi[i] += cur - prev;
            prev = cur;
        }
    }
    phi.iter().map(|p| p / all.len() as f64).collect()
}

/// Random quadratic model plus a smooth nonlinearity.
struct RandomModel {
    lin: Vec<f64>,
    quad: Vec<Vec<f64>>,
    amp: f64,
}

impl RandomModel {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = rng_from(seed, &[2]);
        let lin = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let quad = (0..n).map(|_| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        RandomModel {
            lin,
            quad,
            amp: rng.random_range(-1.0..1.0),
        }
    }

    fn eval(&self, z: &[f64]) -> f64 {
        let n = z.len();
        let mut v = self.amp * (z.iter().sum::<f64>()).sin();
        for i in 0..n {
            v += self.lin[i] * z[i];
            for j in 0..n {
                v += self.quad[i][j] * z[i] * z[j];
            }
        }
        v
    }
}

#[test]
fn shap_additive_example() {
    let f = |z: &[f64]| z[0] + z[1];
    let background = vec![vec![-1.0, 2.0], vec![1.0, -2.0]];
    let phi = shap_values(&f, &[3.0, -4.5], &background).unwrap();
    assert!((phi[0] - 3.0).abs() < 1e-12 && (phi[1] + 4.5).abs() < 1e-12);
}

#[test]
fn shap_symmetric_example() {
    let f = |z: &[f64]| z[0] * z[1];
    let phi = shap_values_at(&f, &[2.0, 2.0], &[0.5, 0.5]).unwrap();
    assert!((phi[0] - phi[1]).abs() < 1e-12);
    assert!((phi[0] + phi[1] - (4.0 - 0.25)).abs() < 1e-12);
}

#[test]
fn shap_axioms_on_random_models() {
    for trial in 0..20u64 {
        let mut rng = rng_from(trial, &[3]);
        let n = rng.random_range(2..=6);
        let mut model = RandomModel::new(n, trial);
        // Features 0 and 1 interchangeable, feature n-1 a dummy when n > 2.
        model.lin[1] = model.lin[0];
        for k in 0..n {
            model.quad[1][k] = model.quad[0][k];
            model.quad[k][1] = model.quad[k][0];
        }
        model.quad[1][1] = model.quad[0][0];
        model.quad[0][1] = model.quad[1][0];
        model.amp = 0.0;
        if n > 2 {
            model.lin[n - 1] = 0.0;
            for k in 0..n {
                model.quad[n - 1][k] = 0.0;
                model.quad[k][n - 1] = 0.0;
            }
        }
        let f = |z: &[f64]| model.eval(z);
        let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut base: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        x[1] = x[0];
        base[1] = base[0];
        let phi = shap_values_at(&f, &x, &base).unwrap();
        let sum: f64 = phi.iter().sum();
        assert!((sum - (f(&x) - f(&base))).abs() < 1e-9, "efficiency, trial {trial}");
        assert!((phi[0] - phi[1]).abs() < 1e-9, "symmetry, trial {trial}");
        if n > 2 {
            assert!(phi[n - 1].abs() < 1e-9, "dummy, trial {trial}");
        }
    }
}

#[test]
fn shap_matches_permutation_oracle() {
    for trial in 0..20u64 {
        let n = 1 + (trial as usize % 5);
        let model = RandomModel::new(n, 100 + trial);
        let f = |z: &[f64]| model.eval(z);
        let mut rng = rng_from(trial, &[4]);
        let x: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let background: Vec<Vec<f64>> = (0..7).map(|_| (0..n).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
        let base = column_means(&background).unwrap();
        let exact = shap_values(&f, &x, &background).unwrap();
        let oracle = permutation_shap(&f, &x, &base);
        for (a, b) in exact.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn shap_rejects_bad_input() {
    let f = |_: &[f64]| 0.0;
    assert!(matches!(shap_values_at(&f, &[0.0; 13], &[0.0; 13]), Err(Error::TooManyFeatures(13))));
    assert!(matches!(shap_values_at(&f, &[0.0; 3], &[0.0; 2]), Err(Error::Shape { .. })));
    assert!(shap_values(&f, &[0.0], &[]).is_err());
    assert!(shap_values_at(&f, &[0.0; 12], &[0.0; 12]).is_ok());
}

// ---- surrogate ----

#[test]
fn tree_fits_a_step() {
    let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, (i % 3) as f64]).collect();
    let y: Vec<f64> = (0..20).map(|i| if i < 7 { 1.0 } else { 4.0 }).collect();
    let t = RegressionTree::fit(&x, &y, 1, 1);
    assert_eq!(t.predict(&[3.0, 0.0]), 1.0);
    assert_eq!(t.predict(&[6.4, 0.0]), 1.0);
    assert_eq!(t.predict(&[6.6, 0.0]), 4.0);
}

#[test]
fn boosting_reduces_error() {
    let mut rng = rng_from(8, &[]);
    let x: Vec<Vec<f64>> = (0..60).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let y: Vec<f64> = x.iter().map(|r| 3.0 * r[0] - r[1] * r[1]).collect();
    let sse = |m: &StumpBoost| x.iter().zip(&y).map(|(r, t)| (m.predict(r) - t).powi(2)).sum::<f64>();
    let var: f64 = {
        let mean = y.iter().sum::<f64>() / y.len() as f64;
        y.iter().map(|v| (v - mean).powi(2)).sum()
    };
    for depth in [1, 3] {
        let m = StumpBoost::fit(&x, &y, &BoostConfig { depth, ..BoostConfig::default() }).unwrap();
        assert!(sse(&m) < 0.05 * var, "depth {depth}");
    }
    assert!(StumpBoost::fit(&x, &y, &BoostConfig { depth: 0, ..BoostConfig::default() }).is_err());
}

fn pid_days() -> Vec<greenhouse_core::episode::ScoredEpisode> {
    let kind = ControllerKind::Pid(PidConfig {
        kp: 2.0,
        ..PidConfig::default()
    });
    run_controller(&kind, &reference_env(), 12, &[4]).unwrap().episodes
}

#[test]
fn shap_report_shape_and_determinism() {
    let days = pid_days();
    let cfg = BoostConfig {
        n_trees: 50,
        ..BoostConfig::default()
    };
    let a = shap_report(&days, &cfg).unwrap();
    let b = shap_report(&days, &cfg).unwrap();
    assert_eq!(a.to_csv().unwrap(), b.to_csv().unwrap());
    assert_eq!(a.rows.len(), (SHAP_COMPONENTS.len() + 1) * N_FEATURES);
    for comp in SHAP_COMPONENTS.iter().chain(&["average"]) {
        let panel = a.panel(comp);
        assert_eq!(panel.len(), N_FEATURES);
        for (k, w) in panel.windows(2).enumerate() {
            assert_eq!(w[0].rank, k + 1);
            assert!(w[0].mean_abs_shap >= w[1].mean_abs_shap);
        }
    }
    // Hour-of-day averages to the same value every day.
    let hour = a.rows.iter().find(|r| r.component == "final" && r.feature == "hour").unwrap();
    assert_eq!(hour.mean_abs_shap, 0.0);
    assert!(a.panel("final")[0].mean_abs_shap > 0.0);
}

#[test]
fn constant_scores_give_zero_attribution() {
    let mut days = pid_days();
    for d in &mut days {
        d.score = RewardBreakdown::from_components(90.0, 80.0, 100.0, 95.0, &RewardWeights::default());
    }
    let report = shap_report(&days, &BoostConfig::default()).unwrap();
    assert!(report.rows.iter().all(|r| r.mean_abs_shap == 0.0));
    assert!(shap_report(&[], &BoostConfig::default()).is_err());
}

// ---- strategies, groups and sweeps ----

#[test]
fn strategy_specs() {
    let all = StrategySpec::standard();
    let labels: Vec<String> = all.iter().map(|s| s.to_string()).collect();
    assert_eq!(
        labels,
        [
            "dynamic-90", "dynamic-80", "dynamic-70", "dynamic-60", "dynamic-50", "fixed-90", "fixed-70", "fixed-50",
            "fixed-30", "none"
        ]
    );
    for (s, l) in all.iter().zip(&labels) {
        assert_eq!(&l.parse::<StrategySpec>().unwrap(), s);
    }
    let base = ReplacementConfig::default();
    let c = StrategySpec::fixed(30.0).apply(&base);
    assert_eq!((c.strategy, c.ratio), (Strategy::Fixed, 0.3));
    let c = StrategySpec::dynamic(70.0).apply(&base);
    assert_eq!((c.strategy, c.threshold), (Strategy::Dynamic, 70.0));
    for bad in ["dyn-90", "fixed-120", "fixed", "none-1"] {
        assert!(bad.parse::<StrategySpec>().is_err(), "{bad}");
    }
}

#[test]
fn feature_groups() {
    let groups = FeatureGroup::standard();
    let counts: Vec<usize> = groups.iter().map(|g| g.features.len()).collect();
    assert_eq!(counts, [10, 7, 5, 5, 3]);
    let fill = [0.5; N_FEATURES];
    assert!(groups[0].mask(&fill).unwrap().is_none());
    let g5 = groups[4].mask(&fill).unwrap().unwrap();
    assert_eq!(g5.n_active(), 3);
    assert_eq!(g5.active, [true, false, false, false, true, true, false, false, false, false]);
    let empty = FeatureGroup {
        features: vec![],
        ..groups[4].clone()
    };
    assert!(empty.mask(&fill).is_err());
    let dup = FeatureGroup {
        features: vec![0, 0],
        ..groups[4].clone()
    };
    assert!(dup.validate().is_err());
    assert_eq!(FeatureGroup::by_name("G3").unwrap(), groups[2]);
}

#[test]
fn masked_policy_ignores_hidden_features() {
    let fill = normalized_means(&[sample_state(1), sample_state(2)]).unwrap();
    let mask = FeatureGroup::by_name("G5").unwrap().mask(&fill).unwrap().unwrap();
    let policy = ActorCritic::new(&[16], 3).with_mask(mask);
    let s = sample_state(5);
    let mut t = s;
    t.t_soil += 7.0;
    t.t_bar -= 4.0;
    t.alpha_bar = 90.0;
    assert_eq!(policy.observe(&s), policy.observe(&t));
    let mut u = s;
    u.t_air += 3.0;
    assert_ne!(policy.observe(&s), policy.observe(&u));
    let json = serde_json::to_string(&policy).unwrap();
    assert_eq!(serde_json::from_str::<ActorCritic>(&json).unwrap(), policy);
}

fn tiny_setup() -> SweepSetup {
    let env = reference_env();
    let pool = ExperiencePool::from_episodes(pid_days(), 100).unwrap();
    SweepSetup {
        env,
        ppo: PpoConfig {
            total_steps: 11_520,
            ..PpoConfig::default()
        },
        coupling: ReplacementConfig::default(),
        pool: Arc::new(pool),
        eval_days: 2,
    }
}

#[test]
fn sweep_none_equals_plain_training() {
    let setup = tiny_setup();
    let out = strategy_sweep(&[StrategySpec::none()], &setup, &[11]).unwrap();
    assert_eq!(out.report.rows.len(), 1);
    assert_eq!(out.report.rows[0].method, "none");

    let cfg = PpoConfig {
        seed: 11,
        ..setup.ppo.clone()
    };
    let plain = train(&setup.env, ActorCritic::new(&cfg.hidden, 11), &cfg, &mut NoHooks).unwrap();
    assert_eq!(out.logs[0].2, plain.log);
    let (none, records) = train_policy(&setup, &StrategySpec::none().apply(&setup.coupling), 11, None).unwrap();
    assert_eq!(none.best, plain.best);
    assert!(records.iter().all(|r| r.replaced == 0));

    // Group G1 with coupling off is the same run.
    let off = SweepSetup {
        coupling: StrategySpec::none().apply(&setup.coupling),
        ..setup.clone()
    };
    let g = feature_group_eval(&FeatureGroup::standard()[..1], &off, &[0.5; N_FEATURES], &[11]).unwrap();
    assert_eq!(g.report.rows[0].method, "G1");
    assert_eq!(g.logs[0].2, plain.log);
    assert_eq!(
        ReportRow { method: "none".into(), ..g.report.rows[0].clone() },
        out.report.rows[0]
    );
}

#[test]
fn sweeps_are_reproducible() {
    let setup = tiny_setup();
    let specs = [StrategySpec::dynamic(90.0), StrategySpec::fixed(50.0)];
    let a = strategy_sweep(&specs, &setup, &[1, 2]).unwrap();
    let b = strategy_sweep(&specs, &setup, &[1, 2]).unwrap();
    assert_eq!(a.report.to_csv().unwrap(), b.report.to_csv().unwrap());
    assert_eq!(a.logs, b.logs);
    assert_eq!(a.logs.len(), 4);
    assert!(a.logs[0].2.rows[0].replaced > 0);

    let fill = [0.5; N_FEATURES];
    let groups = &FeatureGroup::standard()[3..];
    let g = feature_group_eval(groups, &setup, &fill, &[1]).unwrap();
    assert_eq!(g.report.rows.len(), 2);
    assert_eq!(g, feature_group_eval(groups, &setup, &fill, &[1]).unwrap());
}
