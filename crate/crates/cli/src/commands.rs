use std::path::{Path, PathBuf};
use std::sync::Arc;

use greenhouse_core::config::{RunConfig, TrainBackend};
use greenhouse_core::coupling::{ExperiencePool, RoundRecord, Strategy};
use greenhouse_core::data::{
    group_days, load_csv, preprocess, split_days, to_csv_string, generate_synthetic, DayDataset, NormalizationSpec,
};
use greenhouse_core::env::{fit_polynomial, one_step_mse, train_mlp, Backend, Dynamics, EnvModel, SimEnv, StartSource};
use greenhouse_core::episode::{load_episodes, save_episodes};
use greenhouse_core::eval::{
    feature_group_eval, normalized_means, run_controller, shap_report, strategy_sweep, train_policy, ControllerKind,
    EvalReport, ReportRow, StrategySpec, SweepOutput, SweepSetup,
};
use greenhouse_core::mpc::generate_expert_episodes;
use greenhouse_core::ppo::Checkpoint;
use greenhouse_core::reference::ReferenceModel;
use greenhouse_core::state::{Action, GreenhouseState};
use greenhouse_core::{Error, Result};
use serde_json::json;

use crate::manifest::Run;
use crate::{load_config, Cli, Command, ModelKind, SweepKind};

fn arg_err(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}

fn rel(run: &Run, p: &Path) -> String {
    p.strip_prefix(&run.out).unwrap_or(p).to_string_lossy().into_owned()
}

pub fn run(cli: &Cli) -> Result<()> {
    let mut cfg = load_config(cli)?;
    match &cli.command {
        Command::GenData { days, profile } => {
            if let Some(d) = days {
                cfg.data.days = *d;
            }
            if let Some(p) = profile {
                cfg.data.profile = p.clone();
            }
            cfg.check()?;
            gen_data(Run::new(cfg))
        }
        Command::Preprocess { input } => {
            cfg.check()?;
            cmd_preprocess(Run::new(cfg), input.as_deref())
        }
        Command::FitEnv { kind, data } => {
            cfg.check()?;
            fit_env(Run::new(cfg), *kind, data.as_deref())
        }
        Command::GenExpert { model, env_model, days } => {
            if let Some(d) = days {
                cfg.coupling.expert_days = *d;
            }
            cfg.check()?;
            gen_expert(Run::new(cfg), model.as_deref(), env_model.as_deref())
        }
        Command::Train {
            strategy,
            pool,
            env_model,
            steps,
        } => {
            if let Some(s) = steps {
                cfg.ppo.total_steps = *s;
            }
            let spec = resolve_strategy(&mut cfg, strategy.as_deref())?;
            cfg.check()?;
            train(Run::new(cfg), spec, pool.as_deref(), env_model.as_deref())
        }
        Command::Evaluate {
            checkpoint,
            controller,
            model,
            days,
        } => {
            if let Some(d) = days {
                cfg.eval.days = *d;
            }
            cfg.check()?;
            evaluate(Run::new(cfg), checkpoint, controller, model.as_deref())
        }
        Command::Sweep {
            kind,
            pool,
            env_model,
            data,
            steps,
        } => {
            if let Some(s) = steps {
                cfg.ppo.total_steps = *s;
            }
            cfg.check()?;
            sweep(Run::new(cfg), *kind, pool.as_deref(), env_model.as_deref(), data.as_deref())
        }
        Command::Shap {
            checkpoint,
            controller,
            model,
            days,
        } => {
            if let Some(d) = days {
                cfg.eval.shap_days = *d;
            }
            cfg.check()?;
            shap(Run::new(cfg), checkpoint.as_deref(), controller.as_deref(), model.as_deref())
        }
    }
}

fn reference_model(cfg: &RunConfig) -> Result<ReferenceModel> {
    Ok(ReferenceModel::new(cfg.data.climate()?))
}

fn reference_env(cfg: &RunConfig) -> Result<SimEnv> {
    Ok(SimEnv::reference(reference_model(cfg)?, cfg.reward.clone()))
}

/// Environment for training and expert runs, per `env_model.backend`.
fn training_env(run: &mut Run, env_model: Option<&Path>) -> Result<SimEnv> {
    match run.cfg.env_model.backend {
        TrainBackend::Reference => reference_env(&run.cfg),
        TrainBackend::Learned => {
            let path = run.input(env_model, "models/mlp.json");
            let model = EnvModel::load(&path)?;
            Ok(SimEnv::new(
                Backend::Learned(Arc::new(model)),
                StartSource::warmup(reference_model(&run.cfg)?),
                run.cfg.reward.clone(),
            ))
        }
    }
}

fn load_days(path: &Path) -> Result<Vec<greenhouse_core::data::Day>> {
    group_days(&load_csv(path)?)
}

fn split(cfg: &RunConfig, path: &Path) -> Result<(DayDataset, DayDataset)> {
    split_days(&load_days(path)?, cfg.seed, cfg.data.train_fraction)
}

fn gen_data(mut run: Run) -> Result<()> {
    let profile = run.cfg.data.climate()?;
    let records = generate_synthetic(&profile, run.cfg.data.days, run.cfg.seed);
    run.write("data/raw.csv", &to_csv_string(&records))?;
    println!("data/raw.csv: {} records, {} days ({})", records.len(), run.cfg.data.days, profile.name);
    let opts = json!({"days": run.cfg.data.days, "profile": profile.name});
    run.finish("gen-data", opts)
}

fn cmd_preprocess(mut run: Run, input: Option<&Path>) -> Result<()> {
    let input = run.input(input, "data/raw.csv");
    let pre = preprocess(&load_csv(&input)?, &run.cfg.data.preprocess)?;
    let (train, test) = split_days(&pre.days, run.cfg.seed, run.cfg.data.train_fraction)?;
    let norm = NormalizationSpec::fit(&train.days)?;
    run.write("data/clean.csv", &to_csv_string(&pre.records))?;
    let p = run.output("data/normalization.toml")?;
    norm.save(&p)?;
    let summary = json!({
        "records": pre.records.len(),
        "days": pre.days.len(),
        "train_days": train.days.len(),
        "test_days": test.days.len(),
        "out_of_range": pre.out_of_range,
        "interpolated": pre.interpolated,
        "spikes": pre.spikes,
    });
    run.write("data/preprocess.json", &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    println!(
        "data/clean.csv: {} days ({} train, {} test); {} out of range, {} filled, {} spikes",
        pre.days.len(),
        train.days.len(),
        test.days.len(),
        pre.out_of_range,
        pre.interpolated,
        pre.spikes
    );
    let opts = json!({"input": rel(&run, &input)});
    run.finish("preprocess", opts)
}

fn fit_env(mut run: Run, kind: ModelKind, data: Option<&Path>) -> Result<()> {
    let data = run.input(data, "data/clean.csv");
    let (train, test) = split(&run.cfg, &data)?;
    let model = match kind {
        ModelKind::Poly => EnvModel::Poly(fit_polynomial(&train, run.cfg.env_model.ridge)?.0),
        ModelKind::Mlp => EnvModel::Mlp(train_mlp(&train, &run.cfg.env_model.mlp)?.0),
    };
    let train_mse = one_step_mse(&model, &train)?;
    let test_mse = one_step_mse(&model, &test)?;
    let name = model.kind();
    let p = run.output(&format!("models/{name}.json"))?;
    model.save(&p)?;
    let report = json!({
        "kind": name,
        "channels": ["t_air", "t_soil", "t_water", "t_wall"],
        "train_days": train.days.len(),
        "test_days": test.days.len(),
        "train_mse": train_mse,
        "test_mse": test_mse,
        "test_mse_mean": test_mse.iter().sum::<f64>() / 4.0,
    });
    run.write(&format!("models/{name}_report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    println!(
        "models/{name}.json: test MSE (degC^2) air {:.4}, soil {:.4}, water {:.4}, wall {:.4}",
        test_mse[0], test_mse[1], test_mse[2], test_mse[3]
    );
    let opts = json!({"kind": name, "data": rel(&run, &data)});
    run.finish("fit-env", opts)
}

fn load_dynamics(run: &mut Run, given: Option<&Path>) -> Result<Arc<dyn Dynamics>> {
    let path = run.input(given, "models/poly.json");
    Ok(Arc::new(EnvModel::load(&path)?))
}

fn gen_expert(mut run: Run, model: Option<&Path>, env_model: Option<&Path>) -> Result<()> {
    let dynamics = load_dynamics(&mut run, model)?;
    let env = training_env(&mut run, env_model)?;
    let days = run.cfg.coupling.expert_days;
    let episodes = generate_expert_episodes(&env, dynamics, &run.cfg.mpc, days, run.cfg.seed)?;
    let p = run.output("experts.json")?;
    save_episodes(&p, &episodes)?;
    let scores: Vec<_> = episodes.iter().map(|e| e.score).collect();
    let report = EvalReport {
        rows: vec![ReportRow::from_scores("mpc-expert", &scores)],
    };
    run.write("experts_report.csv", &report.to_csv()?)?;
    println!("experts.json: {days} days, final reward {}", report.rows[0].final_reward());
    let opts = json!({"days": days});
    run.finish("gen-expert", opts)
}

/// Reads `--strategy` into the coupling section and returns the cell spec.
fn resolve_strategy(cfg: &mut RunConfig, given: Option<&str>) -> Result<StrategySpec> {
    let c = &mut cfg.coupling;
    match given {
        None => {}
        Some("dynamic") => c.strategy = Strategy::Dynamic,
        Some("fixed") => c.strategy = Strategy::Fixed,
        Some(s) => {
            let spec: StrategySpec = s.parse()?;
            *c = spec.apply(c);
        }
    }
    Ok(match c.strategy {
        Strategy::Dynamic => StrategySpec::dynamic(c.threshold),
        Strategy::Fixed => StrategySpec::fixed(c.ratio * 100.0),
        Strategy::None => StrategySpec::none(),
    })
}

fn load_pool(run: &mut Run, given: Option<&Path>, needed: bool) -> Result<Arc<ExperiencePool>> {
    let capacity = run.cfg.coupling.pool_capacity;
    if !needed {
        return Ok(Arc::new(ExperiencePool::new(capacity)));
    }
    let path = run.input(given, "experts.json");
    Ok(Arc::new(ExperiencePool::from_episodes(load_episodes(&path)?, capacity)?))
}

fn rounds_csv(records: &[RoundRecord]) -> String {
    let mut s = String::from("round,phase,replaced,below_threshold,weight_min,weight_max\n");
    for r in records {
        let (lo, hi) = r.weight_range.map_or((String::new(), String::new()), |(a, b)| (a.to_string(), b.to_string()));
        let phase = serde_json::to_value(r.phase).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default();
        s.push_str(&format!("{},{},{},{},{},{}\n", r.round, phase, r.replaced, r.below_threshold, lo, hi));
    }
    s
}

fn train(mut run: Run, spec: StrategySpec, pool: Option<&Path>, env_model: Option<&Path>) -> Result<()> {
    let pool = load_pool(&mut run, pool, spec.strategy != Strategy::None)?;
    let env = training_env(&mut run, env_model)?;
    let setup = SweepSetup {
        env,
        ppo: run.cfg.ppo.clone(),
        coupling: run.cfg.coupling.clone(),
        pool,
        eval_days: run.cfg.eval.days,
    };
    let (outcome, records) = train_policy(&setup, &run.cfg.coupling, run.cfg.seed, None)?;
    let dir = format!("train-{spec}");
    run.write(&format!("{dir}/train_log.csv"), &outcome.log.to_csv()?)?;
    run.write(&format!("{dir}/rounds.csv"), &rounds_csv(&records))?;
    let p = run.output(&format!("{dir}/best.json"))?;
    Checkpoint::new(outcome.best.clone(), outcome.steps, outcome.best_eval).save(&p)?;
    let p = run.output(&format!("{dir}/final.json"))?;
    Checkpoint::new(outcome.final_policy.clone(), outcome.steps, None).save(&p)?;
    let summary = json!({
        "strategy": spec.to_string(),
        "steps": outcome.steps,
        "rounds": outcome.rounds,
        "initial_eval": outcome.initial_eval,
        "best_eval": outcome.best_eval,
        "stopped_early": outcome.stopped_early,
        "replaced": records.iter().map(|r| r.replaced).sum::<usize>(),
    });
    run.write(&format!("{dir}/summary.json"), &(serde_json::to_string_pretty(&summary)? + "\n"))?;
    println!(
        "{dir}: {} steps, initial eval {:.2}, best eval {:.2}",
        outcome.steps,
        outcome.initial_eval.unwrap_or(f64::NAN),
        outcome.best_eval.unwrap_or(f64::NAN)
    );
    let opts = json!({"strategy": spec.to_string(), "steps": run.cfg.ppo.total_steps});
    run.finish("train", opts)
}

/// Builds a controller from a name: pid, mpc, random or hold-N.
fn controller(run: &mut Run, name: &str, model: Option<&Path>) -> Result<ControllerKind> {
    Ok(match name {
        "pid" => ControllerKind::Pid(run.cfg.eval.pid.clone()),
        "random" => ControllerKind::Random,
        "mpc" => ControllerKind::Mpc {
            model: load_dynamics(run, model)?,
            config: run.cfg.mpc.clone(),
        },
        _ => {
            let level = name
                .strip_prefix("hold-")
                .and_then(|l| l.parse::<u8>().ok())
                .ok_or_else(|| arg_err(format!("unknown controller `{name}` (expected pid, mpc, random or hold-N)")))?;
            ControllerKind::Hold(Action::new(level)?)
        }
    })
}

fn checkpoint_label(run: &Run, path: &Path) -> String {
    let r = rel(run, path);
    format!("ppo:{}", r.trim_end_matches(".json"))
}

fn evaluate(mut run: Run, checkpoints: &[PathBuf], controllers: &[String], model: Option<&Path>) -> Result<()> {
    if checkpoints.is_empty() && controllers.is_empty() {
        return Err(arg_err("evaluate needs at least one --checkpoint or --controller"));
    }
    let env = reference_env(&run.cfg)?;
    let (days, seeds) = (run.cfg.eval.days, run.cfg.eval.seeds.clone());
    let mut report = EvalReport::default();
    for path in checkpoints {
        let path = run.input(Some(path), "");
        let policy = Checkpoint::load(&path)?.policy;
        let mut row = run_controller(&ControllerKind::Policy(policy), &env, days, &seeds)?.row;
        row.method = checkpoint_label(&run, &path);
        report.rows.push(row);
    }
    for name in controllers {
        let kind = controller(&mut run, name, model)?;
        let mut row = run_controller(&kind, &env, days, &seeds)?.row;
        row.method = name.clone();
        report.rows.push(row);
    }
    report
        .check_identity(&run.cfg.reward.weights, 1e-6)
        .map_err(|e| Error::Serde(e.to_string()))?;
    run.write("eval/report.csv", &report.to_csv()?)?;
    run.write("eval/report.json", &(report.to_json()? + "\n"))?;
    print_report(&report);
    let opts = json!({
        "checkpoints": checkpoints.iter().map(|p| rel(&run, p)).collect::<Vec<_>>(),
        "controllers": controllers,
        "days": days,
        "seeds": seeds,
    });
    run.finish("evaluate", opts)
}

fn print_report(report: &EvalReport) {
    println!("{:<28} {:>14} {:>14} {:>14} {:>14} {:>14}", "method", "temp", "action", "change", "vent", "final");
    for r in &report.rows {
        let c = |m: f64, s: f64| format!("{m:.2} ± {s:.2}");
        println!(
            "{:<28} {:>14} {:>14} {:>14} {:>14} {:>14}",
            r.method,
            c(r.temp_reward_mean, r.temp_reward_sd),
            c(r.action_reward_mean, r.action_reward_sd),
            c(r.change_reward_mean, r.change_reward_sd),
            c(r.vent_reward_mean, r.vent_reward_sd),
            c(r.final_reward_mean, r.final_reward_sd)
        );
    }
}

fn training_fill(run: &mut Run, data: Option<&Path>) -> Result<[f64; 10]> {
    let path = run.input(data, "data/clean.csv");
    let (train, _) = split(&run.cfg, &path)?;
    let states: Vec<GreenhouseState> = train.days.iter().flat_map(|d| d.states()).collect();
    normalized_means(&states)
}

fn sweep(
    mut run: Run,
    kind: SweepKind,
    pool: Option<&Path>,
    env_model: Option<&Path>,
    data: Option<&Path>,
) -> Result<()> {
    let seeds = run.cfg.eval.seeds.clone();
    let (name, output): (&str, SweepOutput) = match kind {
        SweepKind::Strategy => {
            let specs = run.cfg.eval.strategy_specs()?;
            let needs_pool = specs.iter().any(|s| s.strategy != Strategy::None);
            let pool = load_pool(&mut run, pool, needs_pool)?;
            let setup = sweep_setup(&mut run, pool, env_model)?;
            ("strategy", strategy_sweep(&specs, &setup, &seeds)?)
        }
        SweepKind::Features => {
            let groups = run.cfg.eval.feature_groups()?;
            let fill = training_fill(&mut run, data)?;
            let needs_pool = run.cfg.coupling.strategy != Strategy::None;
            let pool = load_pool(&mut run, pool, needs_pool)?;
            let setup = sweep_setup(&mut run, pool, env_model)?;
            ("features", feature_group_eval(&groups, &setup, &fill, &seeds)?)
        }
    };
    let dir = format!("sweep-{name}");
    run.write(&format!("{dir}/report.csv"), &output.report.to_csv()?)?;
    run.write(&format!("{dir}/report.json"), &(output.report.to_json()? + "\n"))?;
    for (label, seed, log) in &output.logs {
        run.write(&format!("{dir}/logs/{label}-seed{seed}.csv"), &log.to_csv()?)?;
    }
    print_report(&output.report);
    let opts = json!({"kind": name, "seeds": seeds, "steps": run.cfg.ppo.total_steps});
    run.finish("sweep", opts)
}

fn sweep_setup(run: &mut Run, pool: Arc<ExperiencePool>, env_model: Option<&Path>) -> Result<SweepSetup> {
    Ok(SweepSetup {
        env: training_env(run, env_model)?,
        ppo: run.cfg.ppo.clone(),
        coupling: run.cfg.coupling.clone(),
        pool,
        eval_days: run.cfg.eval.days,
    })
}

fn shap(mut run: Run, checkpoint: Option<&Path>, name: Option<&str>, model: Option<&Path>) -> Result<()> {
    let (kind, label) = match (checkpoint, name) {
        (Some(p), None) => {
            let path = run.input(Some(p), "");
            let label = checkpoint_label(&run, &path);
            (ControllerKind::Policy(Checkpoint::load(&path)?.policy), label)
        }
        (None, Some(n)) => (controller(&mut run, n, model)?, n.to_string()),
        _ => return Err(arg_err("shap needs exactly one of --checkpoint or --controller")),
    };
    let env = reference_env(&run.cfg)?;
    let days = run.cfg.eval.shap_days;
    let episodes = run_controller(&kind, &env, days, &[run.cfg.seed])?.episodes;
    let report = shap_report(&episodes, &run.cfg.eval.shap)?;
    run.write("shap/shap.csv", &report.to_csv()?)?;
    println!("shap/shap.csv: {label} over {days} days; top features on the final reward:");
    for r in report.panel("final").iter().take(3) {
        println!("  {}. {} {:.4}", r.rank, r.feature, r.mean_abs_shap);
    }
    let opts = json!({"controller": label, "days": days});
    run.finish("shap", opts)
}
