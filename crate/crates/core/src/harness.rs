//! Evaluation harness: deterministic episode rollouts, paired scenario
//! campaigns, and adversarial stress campaigns.
//!
//! Campaign seeds fan out into per-episode seeds, so two policies evaluated
//! with the same campaign seed face byte-identical scenario sequences — the
//! basis for every paired comparison in this crate.

use crate::adversary::{adversary_train, AdversaryConfig, AdvEpisodeLog};
use crate::ddpg;
use crate::env::{Env, EnvConfig, Observation};
use crate::nn::{Network, ParameterSet, RecurrentState};
use crate::{derive_seed, CoreError, Result};

/// A deterministic control policy under evaluation.
pub trait Policy {
    /// Called at the start of every episode (clears recurrent state).
    fn reset(&mut self);
    /// Pedal command in [-1, 1] for the current observation.
    fn act(&mut self, obs: &Observation) -> f64;
}

/// A trained actor network acting greedily.
pub struct ActorPolicy {
    net: Network,
    params: ParameterSet,
    state: RecurrentState,
    variant: ddpg::Variant,
}

impl ActorPolicy {
    pub fn new(net: Network, params: ParameterSet) -> Result<Self> {
        net.check_params(&params)?;
        let (_, variant) = ddpg::actor_network_from_params(&params)?;
        Ok(ActorPolicy { state: net.zero_state(), net, params, variant })
    }

    /// Loads a checkpoint and reconstructs the matching network from it.
    pub fn from_checkpoint(path: &std::path::Path) -> Result<Self> {
        let params = crate::nn::load_checkpoint(path)?;
        let (net, variant) = ddpg::actor_network_from_params(&params)?;
        Ok(ActorPolicy { state: net.zero_state(), net, params, variant })
    }

    pub fn variant(&self) -> ddpg::Variant {
        self.variant
    }

    pub fn params(&self) -> &ParameterSet {
        &self.params
    }
}

impl Policy for ActorPolicy {
    fn reset(&mut self) {
        self.state.zero();
    }

    fn act(&mut self, obs: &Observation) -> f64 {
        ddpg::greedy_action(&self.net, &self.params, &obs.features(), &mut self.state)
    }
}

/// Constant full-throttle policy (hazard baseline for cage checks).
pub struct FullThrottle;

impl Policy for FullThrottle {
    fn reset(&mut self) {}
    fn act(&mut self, _obs: &Observation) -> f64 {
        1.0
    }
}

/// Hand-written proportional headway follower (sanity baseline): brakes when
/// below the target headway or while closing, accelerates when trailing far.
pub struct RuleFollower {
    pub target_th: f64,
}

impl Policy for RuleFollower {
    fn reset(&mut self) {}
    fn act(&mut self, obs: &Observation) -> f64 {
        let pedal = 0.5 * (obs.th - self.target_th) - 0.15 * obs.v_rel;
        pedal.clamp(-1.0, 1.0)
    }
}

// ─── Episode metrics ─────────────────────────────────────────────────────

/// Summary statistics of one evaluation episode.  Means are over all
/// observed samples (the initial observation plus one per step); `min`/`max`
/// are over the same samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeMetrics {
    pub episode: u32,
    pub seed: u64,
    pub steps: u32,
    pub total_reward: f64,
    pub collision: bool,
    /// Cage interventions (always 0 when the cage is disabled).
    pub breaches: u32,
    pub min_th: f64,
    pub mean_th: f64,
    pub min_x_rel: f64,
    pub mean_x_rel: f64,
    pub max_abs_v_rel: f64,
    pub mean_abs_v_rel: f64,
}

/// Runs one episode of `policy` in `env` from `seed` and collects metrics.
pub fn run_episode(
    env: &mut Env,
    policy: &mut dyn Policy,
    episode: u32,
    seed: u64,
    cage_enabled: bool,
) -> Result<EpisodeMetrics> {
    let mut obs = env.reset(seed);
    policy.reset();

    let mut m = EpisodeMetrics {
        episode,
        seed,
        steps: 0,
        total_reward: 0.0,
        collision: false,
        breaches: 0,
        min_th: obs.th,
        mean_th: obs.th,
        min_x_rel: env.x_rel(),
        mean_x_rel: env.x_rel(),
        max_abs_v_rel: obs.v_rel.abs(),
        mean_abs_v_rel: obs.v_rel.abs(),
    };

    loop {
        let pedal = policy.act(&obs);
        let r = env.step(pedal, cage_enabled)?;
        obs = r.observation;
        m.steps += 1;
        m.total_reward += r.reward_total;
        m.collision |= r.collision;
        m.breaches += r.breached as u32;
        let x_rel = env.x_rel();
        m.min_th = m.min_th.min(obs.th);
        m.mean_th += obs.th;
        m.min_x_rel = m.min_x_rel.min(x_rel);
        m.mean_x_rel += x_rel;
        m.max_abs_v_rel = m.max_abs_v_rel.max(obs.v_rel.abs());
        m.mean_abs_v_rel += obs.v_rel.abs();
        if r.done {
            break;
        }
    }
    let samples = (m.steps + 1) as f64;
    m.mean_th /= samples;
    m.mean_x_rel /= samples;
    m.mean_abs_v_rel /= samples;
    Ok(m)
}

// ─── Naturalistic campaigns ──────────────────────────────────────────────

/// Aggregate over a campaign's episodes.  Means are means of per-episode
/// means (episodes weighted equally regardless of length).
#[derive(Debug, Clone, PartialEq)]
pub struct CampaignSummary {
    pub episodes: u32,
    pub collisions: u32,
    pub total_breaches: u32,
    pub min_th: f64,
    pub mean_th: f64,
    pub min_x_rel: f64,
    pub mean_x_rel: f64,
    pub max_abs_v_rel: f64,
    pub mean_abs_v_rel: f64,
    pub mean_reward: f64,
}

/// Aggregates per-episode metrics into a campaign summary.
pub fn summarize(episodes: &[EpisodeMetrics]) -> Result<CampaignSummary> {
    if episodes.is_empty() {
        return Err(CoreError::Usage("cannot summarize an empty campaign".into()));
    }
    let n = episodes.len() as f64;
    Ok(CampaignSummary {
        episodes: episodes.len() as u32,
        collisions: episodes.iter().filter(|e| e.collision).count() as u32,
        total_breaches: episodes.iter().map(|e| e.breaches).sum(),
        min_th: episodes.iter().map(|e| e.min_th).fold(f64::INFINITY, f64::min),
        mean_th: episodes.iter().map(|e| e.mean_th).sum::<f64>() / n,
        min_x_rel: episodes.iter().map(|e| e.min_x_rel).fold(f64::INFINITY, f64::min),
        mean_x_rel: episodes.iter().map(|e| e.mean_x_rel).sum::<f64>() / n,
        max_abs_v_rel: episodes.iter().map(|e| e.max_abs_v_rel).fold(0.0, f64::max),
        mean_abs_v_rel: episodes.iter().map(|e| e.mean_abs_v_rel).sum::<f64>() / n,
        mean_reward: episodes.iter().map(|e| e.total_reward).sum::<f64>() / n,
    })
}

/// Renders the summary as a fixed-width seven-row metric table.
pub fn format_summary(s: &CampaignSummary) -> String {
    let mut out = String::new();
    out.push_str(&format!("campaign over {} episodes\n", s.episodes));
    out.push_str(&format!("{:<28}{}\n", "metric", "value"));
    for (label, value) in [
        ("min time headway (s)", format!("{:.4}", s.min_th)),
        ("mean time headway (s)", format!("{:.4}", s.mean_th)),
        ("min gap (m)", format!("{:.3}", s.min_x_rel)),
        ("mean gap (m)", format!("{:.3}", s.mean_x_rel)),
        ("max |closing speed| (m/s)", format!("{:.3}", s.max_abs_v_rel)),
        ("mean |closing speed| (m/s)", format!("{:.3}", s.mean_abs_v_rel)),
        ("collisions", format!("{} / {}", s.collisions, s.episodes)),
    ] {
        out.push_str(&format!("{label:<28}{value}\n"));
    }
    out
}

/// A whole evaluation campaign: per-episode metrics plus their summary.
#[derive(Debug, Clone)]
pub struct Campaign {
    pub episodes: Vec<EpisodeMetrics>,
    pub summary: CampaignSummary,
}

/// Runs `episodes` naturalistic episodes with per-episode seeds derived from
/// `campaign_seed`.  Two policies evaluated with the same campaign seed face
/// identical scenarios episode for episode.
pub fn run_naturalistic(
    env_cfg: &EnvConfig,
    policy: &mut dyn Policy,
    episodes: u32,
    campaign_seed: u64,
    cage_enabled: bool,
) -> Result<Campaign> {
    let mut env = Env::new(env_cfg.clone())?;
    let mut all = Vec::with_capacity(episodes as usize);
    for i in 0..episodes {
        let seed = derive_seed(campaign_seed, i as u64);
        all.push(run_episode(&mut env, policy, i, seed, cage_enabled)?);
    }
    let summary = summarize(&all)?;
    Ok(Campaign { episodes: all, summary })
}

// ─── Adversarial campaigns ───────────────────────────────────────────────

/// One adversary training run's worth of aggregate results.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialRun {
    pub adversary_seed: u64,
    /// Smallest host headway over every episode of the run (training and
    /// evaluation phases both count: the adversary probes throughout).
    pub min_th: f64,
    /// Mean over deterministic evaluation episodes of the per-episode min.
    pub eval_mean_min_th: f64,
    pub collisions: u32,
    pub episodes: u32,
}

/// Cross-run aggregate of an adversarial campaign.
#[derive(Debug, Clone)]
pub struct AdversarialCampaign {
    pub runs: Vec<AdversarialRun>,
    /// Per-run episode logs (training followed by evaluation phase).
    pub run_episodes: Vec<Vec<AdvEpisodeLog>>,
    /// Mean and sample standard deviation of per-run `min_th`.
    pub mean_min_th: f64,
    pub std_min_th: f64,
    pub worst_min_th: f64,
    pub total_collisions: u32,
}

/// Trains `runs` independent adversaries (seeds derived from
/// `cfg.seed`) against a frozen host and aggregates how low each drove the
/// host's time headway.
pub fn run_adversarial(
    env_cfg: &EnvConfig,
    host_net: &Network,
    host_params: &ParameterSet,
    cfg: &AdversaryConfig,
    runs: u32,
) -> Result<AdversarialCampaign> {
    if runs == 0 {
        return Err(CoreError::Usage("adversarial campaign needs at least one run".into()));
    }
    let mut run_summaries = Vec::with_capacity(runs as usize);
    let mut run_episodes = Vec::with_capacity(runs as usize);
    for k in 0..runs {
        let run_cfg =
            AdversaryConfig { seed: derive_seed(cfg.seed, 900_000 + k as u64), ..cfg.clone() };
        let out = adversary_train(env_cfg, host_net, host_params, &run_cfg, None)?;
        let min_th =
            out.episodes.iter().map(|e| e.min_th).fold(f64::INFINITY, f64::min);
        let eval_mins: Vec<f64> = out.evaluation().map(|e| e.min_th).collect();
        let eval_mean_min_th = if eval_mins.is_empty() {
            f64::NAN
        } else {
            eval_mins.iter().sum::<f64>() / eval_mins.len() as f64
        };
        let collisions = out.episodes.iter().filter(|e| e.collision).count() as u32;
        run_summaries.push(AdversarialRun {
            adversary_seed: run_cfg.seed,
            min_th,
            eval_mean_min_th,
            collisions,
            episodes: out.episodes.len() as u32,
        });
        run_episodes.push(out.episodes);
    }
    let n = run_summaries.len() as f64;
    let mean_min_th = run_summaries.iter().map(|r| r.min_th).sum::<f64>() / n;
    let var = run_summaries
        .iter()
        .map(|r| (r.min_th - mean_min_th).powi(2))
        .sum::<f64>()
        / (n - 1.0).max(1.0);
    Ok(AdversarialCampaign {
        mean_min_th,
        std_min_th: var.sqrt(),
        worst_min_th: run_summaries.iter().map(|r| r.min_th).fold(f64::INFINITY, f64::min),
        total_collisions: run_summaries.iter().map(|r| r.collisions).sum(),
        runs: run_summaries,
        run_episodes,
    })
}

// ─── Misc ────────────────────────────────────────────────────────────────

/// Trailing moving average with a truncated head: `out[i]` is the mean of
/// the last `window` values ending at `i` (fewer while `i + 1 < window`).
pub fn moving_average(xs: &[f64], window: usize) -> Vec<f64> {
    assert!(window > 0, "window must be positive");
    let mut out = Vec::with_capacity(xs.len());
    let mut sum = 0.0;
    for i in 0..xs.len() {
        sum += xs[i];
        if i >= window {
            sum -= xs[i - window];
        }
        out.push(sum / window.min(i + 1) as f64);
    }
    out
}
