//! Cross-module smoke test: train a tiny policy through the public API,
//! round-trip it through a checkpoint, evaluate it on a paired campaign,
//! and persist/render the logs.  Everything here is sized to finish in a
//! few seconds; the exhaustive checks live in the acceptance checklist.

use headway_core::ddpg::{self, DdpgConfig, TrainHooks, Variant};
use headway_core::env::EnvConfig;
use headway_core::harness::{run_naturalistic, ActorPolicy};
use headway_core::{logs, plot};

#[test]
fn train_checkpoint_eval_log_plot_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let env_cfg = EnvConfig { episode_max_steps: 100, ..EnvConfig::default() };
    let cfg = DdpgConfig {
        episodes: 5,
        batch_size: 16,
        hidden_width: 12,
        lstm_width: 6,
        warmup_steps: 120,
        seed: 42,
        ..DdpgConfig::default()
    };

    let out = ddpg::train(&env_cfg, &cfg, &mut TrainHooks::none()).unwrap();
    assert_eq!(out.episodes.len(), 5);
    out.learner.save_checkpoints(dir.path()).unwrap();

    // the checkpoint alone must reconstruct a working policy
    let mut policy = ActorPolicy::from_checkpoint(&dir.path().join("actor.ckpt")).unwrap();
    assert_eq!(policy.variant(), Variant::Deep);
    let campaign = run_naturalistic(&env_cfg, &mut policy, 3, 9, true).unwrap();
    assert_eq!(campaign.episodes.len(), 3);
    assert!(campaign.summary.min_th.is_finite());

    // logs round-trip exactly; the chart renders from the same rows
    let train_csv = dir.path().join("episodes.csv");
    logs::write_training_log(&train_csv, &out.episodes).unwrap();
    assert_eq!(logs::read_training_log(&train_csv).unwrap(), out.episodes);

    let eval_csv = dir.path().join("eval.csv");
    logs::write_eval_log(&eval_csv, &campaign.episodes).unwrap();
    assert_eq!(logs::read_eval_log(&eval_csv).unwrap(), campaign.episodes);

    let returns: Vec<f64> = out.episodes.iter().map(|e| e.total_reward).collect();
    let png = dir.path().join("curve.png");
    plot::save_line_chart(
        &png,
        &[plot::Series { values: &returns, color: plot::PALETTE[0] }],
        &plot::ChartOptions::default(),
    )
    .unwrap();
    let bytes = std::fs::read(&png).unwrap();
    assert_eq!(&bytes[..8], b"\x89PNG\r\n\x1a\n");
}
