//! Adversarial lead-vehicle policy trained with advantage actor-critic.
//!
//! The adversary drives the lead vehicle's acceleration directly (the
//! environment still clamps lead speed to its configured envelope) and is
//! rewarded for squeezing the host's time headway, so it learns to provoke
//! the most dangerous following situations the host's policy allows.  The
//! host runs its greedy policy with the safety cage *disabled* and is never
//! updated here — its parameters are read-only throughout.
//!
//! The network is a small two-head model: a shared ReLU trunk feeding a
//! policy-mean head and a value head, plus a single learnable log-std.
//! Actions are sampled in an unbounded space and squashed through `tanh`
//! onto the configured acceleration bounds.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::{Env, EnvConfig, SimState};
use crate::mat;
use crate::nn::{clip_global_norm, Network, Optimizer, ParameterSet, RecurrentState};
use crate::{derive_seed, CoreError, Result};

/// Adversary observation width: lead speed, host speed, gap, closing speed.
pub const ADV_STATE_DIM: usize = 4;

const NORM_VEL: f64 = 40.0;
const NORM_GAP: f64 = 100.0;
const NORM_VREL: f64 = 20.0;

const STREAM_INIT: u64 = 1;
const STREAM_ACT: u64 = 2;
const STREAM_EPISODE_BASE: u64 = 1000;
const STREAM_EVAL_BASE: u64 = 500_000;

/// Normalized adversary features from raw kinematics.
pub fn adversary_features(lead_vel: f64, host_vel: f64, x_rel: f64) -> [f64; ADV_STATE_DIM] {
    [
        lead_vel / NORM_VEL,
        host_vel / NORM_VEL,
        x_rel / NORM_GAP,
        (host_vel - lead_vel) / NORM_VREL,
    ]
}

/// Convenience overload reading straight from simulator state.
pub fn adversary_features_from_state(s: &SimState, x_rel: f64) -> [f64; ADV_STATE_DIM] {
    adversary_features(s.lead_vel, s.host_vel, x_rel)
}

/// Advantage actor-critic hyperparameters for the adversary.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct AdversaryConfig {
    pub episodes: u32,
    /// Deterministic (mean-action) evaluation episodes run after training.
    pub eval_episodes: u32,
    /// Window length for n-step returns.
    pub n_step: usize,
    pub gamma: f64,
    pub lr: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub hidden_width: usize,
    /// Commanded lead acceleration range after squashing, m/s².
    pub acc_bounds: [f64; 2],
    /// Initial policy standard deviation (in the unsquashed action space).
    pub init_std: f64,
    /// Clamp range for the learnable log-std.
    pub log_std_bounds: [f64; 2],
    pub grad_clip: f64,
    /// Per-step reward ceiling on `1 / headway`.
    pub reward_cap: f64,
    pub seed: u64,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        AdversaryConfig {
            episodes: 2500,
            eval_episodes: 50,
            n_step: 16,
            gamma: 0.99,
            lr: 3e-4,
            entropy_coef: 0.01,
            value_coef: 0.5,
            hidden_width: 64,
            acc_bounds: [-6.0, 2.0],
            init_std: 0.5,
            log_std_bounds: [-3.0, 1.0],
            grad_clip: 0.5,
            reward_cap: 100.0,
            seed: 0,
        }
    }
}

impl AdversaryConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(CoreError::Config("episodes must be at least 1".into()));
        }
        if self.n_step == 0 {
            return Err(CoreError::Config("n_step must be at least 1".into()));
        }
        if self.hidden_width == 0 {
            return Err(CoreError::Config("hidden_width must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(CoreError::Config(format!("gamma must be in [0, 1), got {}", self.gamma)));
        }
        for (name, v) in [
            ("lr", self.lr),
            ("grad_clip", self.grad_clip),
            ("init_std", self.init_std),
            ("reward_cap", self.reward_cap),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CoreError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return Err(CoreError::Config("loss coefficients must be non-negative".into()));
        }
        if !(self.acc_bounds[0] < self.acc_bounds[1]) {
            return Err(CoreError::Config(format!(
                "acc_bounds must be an increasing range, got {:?}",
                self.acc_bounds
            )));
        }
        if !(self.log_std_bounds[0] < self.log_std_bounds[1]) {
            return Err(CoreError::Config(format!(
                "log_std_bounds must be an increasing range, got {:?}",
                self.log_std_bounds
            )));
        }
        let ls = self.init_std.ln();
        if ls < self.log_std_bounds[0] || ls > self.log_std_bounds[1] {
            return Err(CoreError::Config(format!(
                "init_std {} lies outside log_std_bounds {:?}",
                self.init_std, self.log_std_bounds
            )));
        }
        Ok(())
    }
}

/// Per-step record inside one n-step window.
#[derive(Debug, Clone, Copy)]
pub struct AdvStep {
    pub state: [f64; ADV_STATE_DIM],
    /// Unsquashed sampled action.
    pub u: f64,
    pub reward: f64,
}

/// Loss decomposition returned by an update (values before the step).
#[derive(Debug, Clone, Copy, Default)]
pub struct AdvLoss {
    pub total: f64,
    pub policy: f64,
    pub value: f64,
    pub entropy: f64,
}

/// The adversary model: parameters plus optimizer and scratch buffers.
#[derive(Debug)]
pub struct Adversary {
    pub cfg: AdversaryConfig,
    pub params: ParameterSet,
    opt: Optimizer,
    // forward scratch (batch-major), reused across updates
    h1_pre: Vec<f64>,
    h1: Vec<f64>,
    h2_pre: Vec<f64>,
    h2: Vec<f64>,
    means: Vec<f64>,
    values: Vec<f64>,
    w_t: Vec<f64>,
}

impl Adversary {
    /// Fresh adversary; parameter draws are a pure function of `cfg.seed`.
    pub fn new(cfg: &AdversaryConfig) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden_width;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_INIT));
        let mut params = ParameterSet::new();
        let uniform = |n: usize, fan_in: usize, scale: f64, rng: &mut ChaCha8Rng| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            (0..n).map(|_| rng.gen_range(-bound..bound) * scale).collect::<Vec<f64>>()
        };
        params.add("trunk.l0.w", vec![ADV_STATE_DIM, h], uniform(ADV_STATE_DIM * h, ADV_STATE_DIM, 1.0, &mut rng))?;
        params.add("trunk.l0.b", vec![h], uniform(h, ADV_STATE_DIM, 1.0, &mut rng))?;
        params.add("trunk.l1.w", vec![h, h], uniform(h * h, h, 1.0, &mut rng))?;
        params.add("trunk.l1.b", vec![h], uniform(h, h, 1.0, &mut rng))?;
        // small policy head: early commands stay near the mid-range
        params.add("pi.w", vec![h, 1], uniform(h, h, 0.01, &mut rng))?;
        params.add("pi.b", vec![1], vec![0.0])?;
        params.add("v.w", vec![h, 1], uniform(h, h, 1.0, &mut rng))?;
        params.add("v.b", vec![1], vec![0.0])?;
        params.add("pi.log_std", vec![1], vec![cfg.init_std.ln()])?;
        Ok(Adversary {
            cfg: cfg.clone(),
            params,
            opt: Optimizer::adam(),
            h1_pre: Vec::new(),
            h1: Vec::new(),
            h2_pre: Vec::new(),
            h2: Vec::new(),
            means: Vec::new(),
            values: Vec::new(),
            w_t: Vec::new(),
        })
    }

    /// Current policy standard deviation (unsquashed space).
    pub fn std(&self) -> f64 {
        self.params.get("pi.log_std").unwrap().values[0].exp()
    }

    /// `tanh` squash from the unbounded action space onto `acc_bounds`.
    pub fn squash(&self, u: f64) -> f64 {
        let [lo, hi] = self.cfg.acc_bounds;
        lo + (u.tanh() + 1.0) / 2.0 * (hi - lo)
    }

    /// Batched forward through trunk and heads, filling the scratch buffers.
    fn forward_batch(&mut self, states: &[f64], n: usize) {
        let h = self.cfg.hidden_width;
        let p = &self.params;
        let (w0, b0) = (&p.get("trunk.l0.w").unwrap().values, &p.get("trunk.l0.b").unwrap().values);
        let (w1, b1) = (&p.get("trunk.l1.w").unwrap().values, &p.get("trunk.l1.b").unwrap().values);
        let (wpi, bpi) = (&p.get("pi.w").unwrap().values, &p.get("pi.b").unwrap().values);
        let (wv, bv) = (&p.get("v.w").unwrap().values, &p.get("v.b").unwrap().values);

        self.h1_pre.clear();
        self.h1_pre.resize(n * h, 0.0);
        mat::add_bias(&mut self.h1_pre, b0, n, h);
        mat::matmul_acc(&mut self.h1_pre, states, w0, n, ADV_STATE_DIM, h);
        self.h1.clear();
        self.h1.extend(self.h1_pre.iter().map(|&v| v.max(0.0)));

        self.h2_pre.clear();
        self.h2_pre.resize(n * h, 0.0);
        mat::add_bias(&mut self.h2_pre, b1, n, h);
        mat::matmul_acc(&mut self.h2_pre, &self.h1, w1, n, h, h);
        self.h2.clear();
        self.h2.extend(self.h2_pre.iter().map(|&v| v.max(0.0)));

        self.means.clear();
        self.means.resize(n, bpi[0]);
        mat::matmul_acc(&mut self.means, &self.h2, wpi, n, h, 1);
        self.values.clear();
        self.values.resize(n, bv[0]);
        mat::matmul_acc(&mut self.values, &self.h2, wv, n, h, 1);
    }

    /// Policy mean and value estimate for one observation.
    pub fn evaluate(&mut self, state: &[f64; ADV_STATE_DIM]) -> (f64, f64) {
        self.forward_batch(state, 1);
        (self.means[0], self.values[0])
    }

    /// Samples an unsquashed action for one observation; returns `(u, value)`.
    pub fn sample(&mut self, state: &[f64; ADV_STATE_DIM], rng: &mut impl Rng) -> (f64, f64) {
        let (mean, value) = self.evaluate(state);
        let eps: f64 = rng.sample(StandardNormal);
        (mean + self.std() * eps, value)
    }

    /// n-step returns for a window: `G_i = r_i + gamma * G_{i+1}` with
    /// `G_n = bootstrap`.
    pub fn returns(&self, rewards: &[f64], bootstrap: f64) -> Vec<f64> {
        let mut g = bootstrap;
        let mut out = vec![0.0; rewards.len()];
        for i in (0..rewards.len()).rev() {
            g = rewards[i] + self.cfg.gamma * g;
            out[i] = g;
        }
        out
    }

    /// One A2C update on a window of consecutive steps.  `bootstrap` is the
    /// value estimate beyond the window (0 for collision terminals).
    pub fn update(&mut self, window: &[AdvStep], bootstrap: f64) -> Result<AdvLoss> {
        let rewards: Vec<f64> = window.iter().map(|s| s.reward).collect();
        let returns = self.returns(&rewards, bootstrap);
        // advantages are frozen here: the policy term does not differentiate
        // through the value estimates
        let states: Vec<f64> = window.iter().flat_map(|s| s.state).collect();
        self.forward_batch(&states, window.len());
        let advantages: Vec<f64> =
            returns.iter().zip(&self.values).map(|(g, v)| g - v).collect();
        let loss = self.loss_inner(window, &returns, &advantages, true);
        clip_global_norm(&mut self.params, self.cfg.grad_clip);
        self.opt.step(&mut self.params, self.cfg.lr)?;
        // projected clamp keeps the policy spread inside its legal band
        let [lo, hi] = self.cfg.log_std_bounds;
        let ls = &mut self.params.get_mut("pi.log_std").unwrap().values[0];
        *ls = ls.clamp(lo, hi);
        Ok(loss)
    }

    /// Mean loss over the window for *fixed* returns and advantages (no
    /// gradients) — the finite-difference anchor for the hand-rolled
    /// backward pass.
    pub fn loss_only(&mut self, window: &[AdvStep], returns: &[f64], advantages: &[f64]) -> AdvLoss {
        self.loss_inner(window, returns, advantages, false)
    }

    fn loss_inner(
        &mut self,
        window: &[AdvStep],
        returns: &[f64],
        advantages: &[f64],
        want_grads: bool,
    ) -> AdvLoss {
        let n = window.len();
        assert!(n > 0, "empty update window");
        let h = self.cfg.hidden_width;
        let states: Vec<f64> = window.iter().flat_map(|s| s.state).collect();
        self.forward_batch(&states, n);

        let sigma = self.std();
        let log_sigma = sigma.ln();
        let inv_n = 1.0 / n as f64;

        let mut policy_loss = 0.0;
        let mut value_loss = 0.0;
        let mut d_mean = vec![0.0; n];
        let mut d_value = vec![0.0; n];
        let mut d_log_sigma = 0.0;
        for i in 0..n {
            let adv = advantages[i];
            let z = (window[i].u - self.means[i]) / sigma;
            let log_prob = -0.5 * z * z - log_sigma - 0.5 * (2.0 * std::f64::consts::PI).ln();
            policy_loss += -adv * log_prob;
            let verr = self.values[i] - returns[i];
            value_loss += verr * verr;
            d_mean[i] = inv_n * (-adv * z / sigma);
            d_value[i] = inv_n * self.cfg.value_coef * 2.0 * verr;
            d_log_sigma += inv_n * (-adv * (z * z - 1.0));
        }
        let entropy = log_sigma + 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
        d_log_sigma -= self.cfg.entropy_coef;
        let loss = AdvLoss {
            policy: policy_loss * inv_n,
            value: value_loss * inv_n,
            entropy,
            total: policy_loss * inv_n - self.cfg.entropy_coef * entropy
                + self.cfg.value_coef * value_loss * inv_n,
        };
        if !want_grads {
            return loss;
        }

        self.params.zero_grads();
        self.params.get_mut("pi.log_std").unwrap().grad[0] = d_log_sigma;

        // heads: a [h, 1] weight is laid out identically to its transpose
        {
            let mut g = std::mem::take(&mut self.params.get_mut("pi.w").unwrap().grad);
            mat::matmul_at_b_acc(&mut g, &self.h2, &d_mean, n, h, 1);
            self.params.get_mut("pi.w").unwrap().grad = g;
            self.params.get_mut("pi.b").unwrap().grad[0] = d_mean.iter().sum();
            let mut g = std::mem::take(&mut self.params.get_mut("v.w").unwrap().grad);
            mat::matmul_at_b_acc(&mut g, &self.h2, &d_value, n, h, 1);
            self.params.get_mut("v.w").unwrap().grad = g;
            self.params.get_mut("v.b").unwrap().grad[0] = d_value.iter().sum();
        }

        let mut d_h2 = vec![0.0; n * h];
        mat::matmul_acc(&mut d_h2, &d_mean, &self.params.get("pi.w").unwrap().values, n, 1, h);
        mat::matmul_acc(&mut d_h2, &d_value, &self.params.get("v.w").unwrap().values, n, 1, h);
        for (d, &pre) in d_h2.iter_mut().zip(&self.h2_pre) {
            if pre <= 0.0 {
                *d = 0.0;
            }
        }
        {
            let mut g = std::mem::take(&mut self.params.get_mut("trunk.l1.w").unwrap().grad);
            mat::matmul_at_b_acc(&mut g, &self.h1, &d_h2, n, h, h);
            self.params.get_mut("trunk.l1.w").unwrap().grad = g;
            let mut g = std::mem::take(&mut self.params.get_mut("trunk.l1.b").unwrap().grad);
            mat::col_sum_acc(&mut g, &d_h2, n, h);
            self.params.get_mut("trunk.l1.b").unwrap().grad = g;
        }

        let mut d_h1 = vec![0.0; n * h];
        mat::transpose_into(&mut self.w_t, &self.params.get("trunk.l1.w").unwrap().values, h, h);
        mat::matmul_acc(&mut d_h1, &d_h2, &self.w_t, n, h, h);
        for (d, &pre) in d_h1.iter_mut().zip(&self.h1_pre) {
            if pre <= 0.0 {
                *d = 0.0;
            }
        }
        {
            let mut g = std::mem::take(&mut self.params.get_mut("trunk.l0.w").unwrap().grad);
            mat::matmul_at_b_acc(&mut g, &states, &d_h1, n, ADV_STATE_DIM, h);
            self.params.get_mut("trunk.l0.w").unwrap().grad = g;
            let mut g = std::mem::take(&mut self.params.get_mut("trunk.l0.b").unwrap().grad);
            mat::col_sum_acc(&mut g, &d_h1, n, h);
            self.params.get_mut("trunk.l0.b").unwrap().grad = g;
        }
        loss
    }
}

// ─── Training and evaluation against a frozen host ───────────────────────

/// Per-episode adversary telemetry.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvEpisodeLog {
    pub episode: u32,
    /// True for deterministic evaluation episodes appended after training.
    pub eval: bool,
    pub total_reward: f64,
    pub steps: u32,
    /// Smallest host time headway reached during the episode.
    pub min_th: f64,
    pub collision: bool,
    /// Policy std at episode end (constant during eval).
    pub policy_std: f64,
}

/// Outcome of one adversary run against a frozen host.
pub struct AdvOutcome {
    pub adversary: Adversary,
    /// Training episodes followed by deterministic evaluation episodes.
    pub episodes: Vec<AdvEpisodeLog>,
}

impl AdvOutcome {
    /// Training-phase episode logs.
    pub fn training(&self) -> impl Iterator<Item = &AdvEpisodeLog> {
        self.episodes.iter().filter(|e| !e.eval)
    }

    /// Deterministic evaluation-phase episode logs.
    pub fn evaluation(&self) -> impl Iterator<Item = &AdvEpisodeLog> {
        self.episodes.iter().filter(|e| e.eval)
    }
}

/// Reward for the adversary after a step: inverse headway, capped.  Zero or
/// negative headway (contact) earns the cap outright.
pub fn adversary_reward(th: f64, cap: f64) -> f64 {
    if th <= 0.0 {
        cap
    } else {
        (1.0 / th).min(cap)
    }
}

/// Trains an adversary against a frozen host policy, then runs deterministic
/// (mean-action) evaluation episodes.  The host acts greedily with the cage
/// disabled and its parameters are never modified.
pub fn adversary_train(
    env_cfg: &EnvConfig,
    host_net: &Network,
    host_params: &ParameterSet,
    cfg: &AdversaryConfig,
    mut on_episode: Option<&mut dyn FnMut(&AdvEpisodeLog)>,
) -> Result<AdvOutcome> {
    cfg.validate()?;
    let mut env = Env::new(env_cfg.clone())?;
    let mut adversary = Adversary::new(cfg)?;
    let mut act_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_ACT));
    let mut host_state = host_net.zero_state();
    let mut episodes = Vec::new();

    for episode in 0..cfg.episodes {
        let seed = derive_seed(cfg.seed, STREAM_EPISODE_BASE + episode as u64);
        let log = run_adversary_episode(
            &mut env,
            host_net,
            host_params,
            &mut host_state,
            &mut adversary,
            seed,
            episode,
            EpisodeMode::Train(&mut act_rng),
        )?;
        if let Some(cb) = on_episode.as_deref_mut() {
            cb(&log);
        }
        episodes.push(log);
    }
    for k in 0..cfg.eval_episodes {
        let seed = derive_seed(cfg.seed, STREAM_EVAL_BASE + k as u64);
        let log = run_adversary_episode(
            &mut env,
            host_net,
            host_params,
            &mut host_state,
            &mut adversary,
            seed,
            cfg.episodes + k,
            EpisodeMode::Eval,
        )?;
        if let Some(cb) = on_episode.as_deref_mut() {
            cb(&log);
        }
        episodes.push(log);
    }
    Ok(AdvOutcome { adversary, episodes })
}

enum EpisodeMode<'a> {
    /// Sample actions and learn.
    Train(&'a mut ChaCha8Rng),
    /// Mean actions, no learning.
    Eval,
}

#[allow(clippy::too_many_arguments)]
fn run_adversary_episode(
    env: &mut Env,
    host_net: &Network,
    host_params: &ParameterSet,
    host_state: &mut RecurrentState,
    adversary: &mut Adversary,
    seed: u64,
    episode: u32,
    mut mode: EpisodeMode,
) -> Result<AdvEpisodeLog> {
    let cfg_n_step = adversary.cfg.n_step;
    let reward_cap = adversary.cfg.reward_cap;
    let mut obs = env.reset(seed);
    host_state.zero();
    let mut window: Vec<AdvStep> = Vec::with_capacity(cfg_n_step);
    let mut log = AdvEpisodeLog {
        episode,
        eval: matches!(mode, EpisodeMode::Eval),
        total_reward: 0.0,
        steps: 0,
        min_th: obs.th,
        collision: false,
        policy_std: adversary.std(),
    };

    loop {
        let host_pedal = crate::ddpg::greedy_action(host_net, host_params, &obs.features(), host_state);
        let adv_state = adversary_features_from_state(env.state(), env.x_rel());
        let u = match &mut mode {
            EpisodeMode::Train(rng) => adversary.sample(&adv_state, rng).0,
            EpisodeMode::Eval => adversary.evaluate(&adv_state).0,
        };
        let lead_acc = adversary.squash(u);

        // safety cage off: the adversary probes the bare policy
        let r = env.step_with_lead(host_pedal, lead_acc, false)?;
        let reward = adversary_reward(r.observation.th, reward_cap);
        log.total_reward += reward;
        log.steps += 1;
        log.min_th = log.min_th.min(r.observation.th);
        log.collision |= r.collision;

        if let EpisodeMode::Train(_) = mode {
            window.push(AdvStep { state: adv_state, u, reward });
            let flush = window.len() == cfg_n_step || r.done;
            if flush {
                // collision ends the return; timeout and mid-episode windows
                // bootstrap from the value beyond the window
                let bootstrap = if r.collision {
                    0.0
                } else {
                    let next =
                        adversary_features_from_state(env.state(), env.x_rel());
                    adversary.evaluate(&next).1
                };
                adversary
                    .update(&window, bootstrap)
                    .map_err(|e| CoreError::Numeric(format!("episode {episode}: {e}")))?;
                window.clear();
            }
        }

        obs = r.observation;
        if r.done {
            break;
        }
    }
    log.policy_std = adversary.std();
    Ok(log)
}
