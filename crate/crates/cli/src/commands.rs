//! Subcommand implementations: each one validates its configuration before
//! creating any output, then writes a self-contained run directory with a
//! resolved-config snapshot and a manifest.

use std::path::{Path, PathBuf};

use headway_core::adversary::AdvEpisodeLog;
use headway_core::ddpg::{self, EpisodeLog, TrainHooks};
use headway_core::harness::{self, ActorPolicy};
use headway_core::nn;
use headway_core::plot::{self, ChartOptions, Series, PALETTE};
use headway_core::{logs, safety_cage};

use crate::config::{sha256_file, sha256_hex, Manifest, ManifestInput, RunConfig};
use crate::CliError;

const GREY: [u8; 3] = PALETTE[5];
const BLUE: [u8; 3] = PALETTE[0];
const RED: [u8; 3] = PALETTE[1];
const GREEN: [u8; 3] = PALETTE[2];

fn create_run_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::new(format!("cannot create {}: {e}", dir.display())))
}

fn write_snapshot(dir: &Path, snapshot: &str) -> Result<(), CliError> {
    std::fs::write(dir.join("resolved-config.toml"), snapshot)
        .map_err(|e| CliError::new(format!("cannot write config snapshot: {e}")))
}

// ─── train ───────────────────────────────────────────────────────────────

pub fn cmd_train(cfg: &RunConfig, out_dir: &Path) -> Result<(), CliError> {
    cfg.validate()?;
    let snapshot = cfg.to_toml()?;
    create_run_dir(out_dir)?;
    create_run_dir(&out_dir.join("checkpoints"))?;
    write_snapshot(out_dir, &snapshot)?;

    let mut artifacts = vec!["resolved-config.toml".to_string()];
    let total = cfg.ddpg.episodes;
    let mut progress = |log: &EpisodeLog| {
        if log.episode == 0 || (log.episode + 1) % 25 == 0 || log.episode + 1 == total {
            eprintln!(
                "episode {:>4}/{} return {:8.1} breaches {:3} collisions {} min_th {:.2}",
                log.episode + 1,
                total,
                log.total_reward,
                log.breaches,
                log.collisions,
                log.min_th
            );
        }
    };

    let mut trace_writer = if cfg.campaign.trace {
        Some(logs::TraceWriter::create(&out_dir.join("trace.csv"))?)
    } else {
        None
    };
    let mut trace_err: Option<CliError> = None;
    let mut on_trace = |row: &ddpg::TraceRow| {
        if trace_err.is_none() {
            if let Some(w) = trace_writer.as_mut() {
                if let Err(e) = w.write_row(row) {
                    trace_err = Some(CliError::new(format!("trace write failed: {e}")));
                }
            }
        }
    };

    let every = cfg.campaign.checkpoint_every;
    let ckpt_root = out_dir.join("checkpoints");
    let mut periodic: Vec<String> = Vec::new();
    let mut on_snapshot = |episode: u32, learner: &ddpg::DdpgLearner| {
        if every > 0 && (episode + 1) % every == 0 && episode + 1 < total {
            let sub = format!("ep{:04}", episode + 1);
            learner.save_checkpoints(&ckpt_root.join(&sub))?;
            for name in ["actor", "critic", "actor_target", "critic_target"] {
                periodic.push(format!("checkpoints/{sub}/{name}.ckpt"));
            }
        }
        Ok(())
    };

    let mut hooks = TrainHooks {
        on_episode: Some(&mut progress),
        on_trace: cfg.campaign.trace.then_some(&mut on_trace as _),
        on_snapshot: Some(&mut on_snapshot),
    };
    let outcome = ddpg::train(&cfg.env, &cfg.ddpg, &mut hooks)?;
    if let Some(w) = trace_writer {
        w.finish()?;
    }
    if let Some(e) = trace_err {
        return Err(e);
    }

    logs::write_training_log(&out_dir.join("episodes.csv"), &outcome.episodes)?;
    artifacts.push("episodes.csv".into());
    if cfg.campaign.trace {
        artifacts.push("trace.csv".into());
    }

    outcome.learner.save_checkpoints(&out_dir.join("checkpoints"))?;
    artifacts.extend(periodic);
    for name in ["actor", "critic", "actor_target", "critic_target"] {
        artifacts.push(format!("checkpoints/{name}.ckpt"));
    }

    let returns: Vec<f64> = outcome.episodes.iter().map(|e| e.total_reward).collect();
    if returns.len() >= 2 {
        let ma = harness::moving_average(&returns, cfg.campaign.ma_window);
        plot::save_line_chart(
            &out_dir.join("reward_curve.png"),
            &[
                Series { values: &returns, color: GREY },
                Series { values: &ma, color: BLUE },
            ],
            &ChartOptions::default(),
        )?;
        artifacts.push("reward_curve.png".into());
    }

    Manifest {
        subcommand: "train".into(),
        seed: cfg.ddpg.seed,
        config_sha256: sha256_hex(snapshot.as_bytes()),
        inputs: vec![],
        artifacts,
    }
    .write(out_dir)?;

    let n = outcome.episodes.len();
    let tail = n.min(50);
    let tail_mean = returns[n - tail..].iter().sum::<f64>() / tail as f64;
    let collisions: u32 = outcome.episodes.iter().map(|e| e.collisions).sum();
    let breaches: u32 = outcome.episodes.iter().map(|e| e.breaches).sum();
    println!("trained {n} episodes ({:?}, cage {})", cfg.ddpg.variant, on_off(cfg.ddpg.cage_enabled));
    println!("collisions {collisions}  breaches {breaches}  mean return last {tail}: {tail_mean:.1}");
    println!("artifacts in {}", out_dir.display());
    Ok(())
}

fn on_off(v: bool) -> &'static str {
    if v {
        "on"
    } else {
        "off"
    }
}

// ─── eval ────────────────────────────────────────────────────────────────

pub fn cmd_eval(cfg: &RunConfig, model: &Path, out_dir: &Path) -> Result<(), CliError> {
    cfg.validate()?;
    let snapshot = cfg.to_toml()?;
    let model_hash = sha256_file(model)?;
    let mut policy = ActorPolicy::from_checkpoint(model)?;

    create_run_dir(out_dir)?;
    write_snapshot(out_dir, &snapshot)?;
    let campaign = harness::run_naturalistic(
        &cfg.env,
        &mut policy,
        cfg.campaign.episodes,
        cfg.campaign.seed,
        cfg.campaign.cage_enabled,
    )?;

    logs::write_eval_log(&out_dir.join("eval.csv"), &campaign.episodes)?;
    let table = harness::format_summary(&campaign.summary);
    std::fs::write(out_dir.join("summary.txt"), &table)
        .map_err(|e| CliError::new(format!("cannot write summary: {e}")))?;

    let mut artifacts =
        vec!["resolved-config.toml".to_string(), "eval.csv".into(), "summary.txt".into()];
    let min_th: Vec<f64> = campaign.episodes.iter().map(|e| e.min_th).collect();
    let mean_th: Vec<f64> = campaign.episodes.iter().map(|e| e.mean_th).collect();
    if min_th.len() >= 2 {
        plot::save_line_chart(
            &out_dir.join("eval_th.png"),
            &[
                Series { values: &min_th, color: BLUE },
                Series { values: &mean_th, color: GREEN },
            ],
            &ChartOptions::default(),
        )?;
        artifacts.push("eval_th.png".into());
    }

    Manifest {
        subcommand: "eval".into(),
        seed: cfg.campaign.seed,
        config_sha256: sha256_hex(snapshot.as_bytes()),
        inputs: vec![ManifestInput {
            role: "model".into(),
            path: model.display().to_string(),
            sha256: model_hash,
        }],
        artifacts,
    }
    .write(out_dir)?;

    print!("{table}");
    println!("artifacts in {}", out_dir.display());
    Ok(())
}

// ─── adv-eval ────────────────────────────────────────────────────────────

pub fn cmd_adv_eval(cfg: &RunConfig, model: &Path, out_dir: &Path) -> Result<(), CliError> {
    cfg.validate()?;
    let snapshot = cfg.to_toml()?;
    let model_hash = sha256_file(model)?;
    let host_params = nn::load_checkpoint(model)?;
    let (host_net, variant) = ddpg::actor_network_from_params(&host_params)?;

    create_run_dir(out_dir)?;
    write_snapshot(out_dir, &snapshot)?;
    eprintln!(
        "stress-testing {variant:?} host: {} adversary runs x {} episodes",
        cfg.campaign.adversary_runs, cfg.adversary.episodes
    );
    let campaign = harness::run_adversarial(
        &cfg.env,
        &host_net,
        &host_params,
        &cfg.adversary,
        cfg.campaign.adversary_runs,
    )?;

    let mut artifacts = vec!["resolved-config.toml".to_string()];
    for (k, episodes) in campaign.run_episodes.iter().enumerate() {
        let name = format!("adv_run{k}.csv");
        logs::write_adversary_log(&out_dir.join(&name), episodes)?;
        artifacts.push(name);
    }

    // per-episode min-headway curve: mean across runs with a +/- std band
    let n_ep = campaign.run_episodes.iter().map(|r| r.len()).min().unwrap_or(0);
    if n_ep >= 2 {
        let runs = campaign.run_episodes.len() as f64;
        let mut mean = Vec::with_capacity(n_ep);
        let mut std = Vec::with_capacity(n_ep);
        for i in 0..n_ep {
            let vals: Vec<f64> =
                campaign.run_episodes.iter().map(|r| r[i].min_th).collect();
            let m = vals.iter().sum::<f64>() / runs;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>()
                / (runs - 1.0).max(1.0);
            mean.push(m);
            std.push(var.sqrt());
        }
        let smoothed = harness::moving_average(&mean, cfg.campaign.ma_window);
        plot::save_band_chart(
            &out_dir.join("adv_min_th.png"),
            &smoothed,
            &std,
            RED,
            &ChartOptions::default(),
        )?;
        artifacts.push("adv_min_th.png".into());
    }

    let mut table = String::new();
    table.push_str(&format!(
        "adversarial campaign: {} runs x {} episodes (host: {variant:?})\n",
        campaign.runs.len(),
        campaign.run_episodes.first().map(|r| r.len()).unwrap_or(0)
    ));
    for (k, run) in campaign.runs.iter().enumerate() {
        table.push_str(&format!(
            "run {k}: min th {:.4} s  eval mean min th {:.4} s  collisions {}\n",
            run.min_th, run.eval_mean_min_th, run.collisions
        ));
    }
    table.push_str(&format!(
        "min th across runs: mean {:.4} s  std {:.4} s  worst {:.4} s  total collisions {}\n",
        campaign.mean_min_th, campaign.std_min_th, campaign.worst_min_th, campaign.total_collisions
    ));
    std::fs::write(out_dir.join("summary.txt"), &table)
        .map_err(|e| CliError::new(format!("cannot write summary: {e}")))?;
    artifacts.push("summary.txt".into());

    Manifest {
        subcommand: "adv-eval".into(),
        seed: cfg.adversary.seed,
        config_sha256: sha256_hex(snapshot.as_bytes()),
        inputs: vec![ManifestInput {
            role: "model".into(),
            path: model.display().to_string(),
            sha256: model_hash,
        }],
        artifacts,
    }
    .write(out_dir)?;

    print!("{table}");
    println!("artifacts in {}", out_dir.display());
    Ok(())
}

// ─── cage-check ──────────────────────────────────────────────────────────

pub fn cmd_cage_check(th: Option<f64>, ttc: Option<f64>) -> Result<(), CliError> {
    if th.is_none() && ttc.is_none() {
        return Err(CliError::usage("cage-check needs --th and/or --ttc"));
    }
    if let Some(th) = th {
        if !th.is_finite() {
            return Err(CliError::usage(format!("--th must be finite, got {th}")));
        }
        println!("th {th} s -> braking demand {}", safety_cage::cage_th_braking(th));
    }
    if let Some(ttc) = ttc {
        if !ttc.is_finite() {
            return Err(CliError::usage(format!("--ttc must be finite, got {ttc}")));
        }
        println!("ttc {ttc} s -> braking demand {}", safety_cage::cage_ttc_braking(ttc));
    }
    Ok(())
}

// ─── report ──────────────────────────────────────────────────────────────

pub fn cmd_report(logs_dir: &Path) -> Result<(), CliError> {
    if !logs_dir.is_dir() {
        return Err(CliError::new(format!("{} is not a directory", logs_dir.display())));
    }
    let mut found = false;

    let training = logs_dir.join("episodes.csv");
    if training.is_file() {
        found = true;
        let rows = logs::read_training_log(&training)?;
        print_training_report(&rows);
    }

    let eval = logs_dir.join("eval.csv");
    if eval.is_file() {
        found = true;
        let rows = logs::read_eval_log(&eval)?;
        let summary = harness::summarize(&rows)?;
        print!("{}", harness::format_summary(&summary));
    }

    let mut adv_runs: Vec<(usize, Vec<AdvEpisodeLog>)> = Vec::new();
    for k in 0..64 {
        let path = logs_dir.join(format!("adv_run{k}.csv"));
        if path.is_file() {
            adv_runs.push((k, logs::read_adversary_log(&path)?));
        }
    }
    if !adv_runs.is_empty() {
        found = true;
        print_adversary_report(&adv_runs);
    }

    if !found {
        return Err(CliError::new(format!(
            "no known log files (episodes.csv, eval.csv, adv_run*.csv) in {}",
            logs_dir.display()
        )));
    }
    Ok(())
}

fn print_training_report(rows: &[EpisodeLog]) {
    let n = rows.len();
    let tail = n.min(50);
    let tail_mean =
        rows[n - tail..].iter().map(|r| r.total_reward).sum::<f64>() / tail.max(1) as f64;
    let best = rows.iter().map(|r| r.total_reward).fold(f64::NEG_INFINITY, f64::max);
    let collisions: u32 = rows.iter().map(|r| r.collisions).sum();
    let breaches: u32 = rows.iter().map(|r| r.breaches).sum();
    let min_th = rows.iter().map(|r| r.min_th).fold(f64::INFINITY, f64::min);
    println!("training log over {n} episodes");
    println!("{:<28}{}", "total collisions", collisions);
    println!("{:<28}{}", "total cage breaches", breaches);
    println!("{:<28}{:.1}", format!("mean return (last {tail})"), tail_mean);
    println!("{:<28}{:.1}", "best episode return", best);
    println!("{:<28}{:.4}", "min time headway (s)", min_th);
}

fn print_adversary_report(runs: &[(usize, Vec<AdvEpisodeLog>)]) {
    println!("adversarial logs: {} runs", runs.len());
    let mut mins = Vec::new();
    for (k, rows) in runs {
        let min_th = rows.iter().map(|r| r.min_th).fold(f64::INFINITY, f64::min);
        let collisions = rows.iter().filter(|r| r.collision).count();
        println!("run {k}: {} episodes  min th {min_th:.4} s  collisions {collisions}", rows.len());
        mins.push(min_th);
    }
    let mean = mins.iter().sum::<f64>() / mins.len() as f64;
    let var = mins.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
        / (mins.len() as f64 - 1.0).max(1.0);
    println!("min th across runs: mean {mean:.4} s  std {:.4} s", var.sqrt());
}

// ─── plot ────────────────────────────────────────────────────────────────

pub fn cmd_plot(log: &Path, out: Option<PathBuf>, window: usize) -> Result<(), CliError> {
    let out = out.unwrap_or_else(|| log.with_extension("png"));
    if window == 0 {
        return Err(CliError::usage("--window must be at least 1"));
    }

    if let Ok(rows) = logs::read_training_log(log) {
        let returns: Vec<f64> = rows.iter().map(|r| r.total_reward).collect();
        require_points(&returns)?;
        let ma = harness::moving_average(&returns, window);
        plot::save_line_chart(
            &out,
            &[
                Series { values: &returns, color: GREY },
                Series { values: &ma, color: BLUE },
            ],
            &ChartOptions::default(),
        )?;
    } else if let Ok(rows) = logs::read_adversary_log(log) {
        let min_th: Vec<f64> = rows.iter().map(|r| r.min_th).collect();
        require_points(&min_th)?;
        let ma = harness::moving_average(&min_th, window);
        plot::save_line_chart(
            &out,
            &[
                Series { values: &min_th, color: GREY },
                Series { values: &ma, color: RED },
            ],
            &ChartOptions::default(),
        )?;
    } else if let Ok(rows) = logs::read_eval_log(log) {
        let min_th: Vec<f64> = rows.iter().map(|r| r.min_th).collect();
        let mean_th: Vec<f64> = rows.iter().map(|r| r.mean_th).collect();
        require_points(&min_th)?;
        plot::save_line_chart(
            &out,
            &[
                Series { values: &min_th, color: BLUE },
                Series { values: &mean_th, color: GREEN },
            ],
            &ChartOptions::default(),
        )?;
    } else {
        return Err(CliError::new(format!(
            "{}: not a recognized training, evaluation, or adversary log",
            log.display()
        )));
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn require_points(values: &[f64]) -> Result<(), CliError> {
    if values.len() < 2 {
        return Err(CliError::new("log has fewer than two episodes; nothing to plot"));
    }
    Ok(())
}
