//! Longitudinal vehicle-following simulation.
//!
//! A point-mass host vehicle follows a scripted lead on a straight road.
//! The host is driven through a single pedal in `[-1, 1]` (throttle
//! positive, braking negative) behind a first-order actuator lag; braking
//! authority is friction-limited by the per-episode road coefficient `mu`.
//! The lead cruises through piecewise-constant acceleration segments and
//! occasionally performs an emergency braking event drawn from a per-step
//! hazard rate.  Integration is explicit Euler at a fixed control period.
//!
//! The lead is open loop: its trace depends only on the episode seed, never
//! on anything the host does, so two different policies evaluated on the
//! same seed face byte-identical lead behavior.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::safety_cage::{self, CageVerdict};
use crate::{CoreError, Result};

/// Gravitational acceleration, m/s².
pub const GRAVITY: f64 = 9.81;
/// Peak engine acceleration at full throttle, m/s².
pub const ENGINE_ACCEL_CAP: f64 = 4.0;
/// First-order actuator lag time constant, s.
pub const ACTUATOR_LAG_S: f64 = 0.2;
/// Emergency braking never aims below this lead speed, m/s.
pub const EMERGENCY_MIN_VEL: f64 = 12.0;

/// Feature scales used when observations are fed to a network.
const NORM_VEL: f64 = 40.0;
const NORM_ACC: f64 = 6.0;
const NORM_VREL: f64 = 20.0;
// Headway is scaled so the 2 s target sits mid-range and the +-0.25 s target
// band keeps usable width in feature space; the sentinel still maps inside
// the clamp below.
const NORM_TH: f64 = 4.0;

/// Simulation configuration.  Every field has a sensible default; ranges are
/// `[lo, hi]` with `lo <= hi`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Control period, s.
    pub dt: f64,
    /// Hard episode cap in steps (5 minutes at 25 Hz by default).
    pub episode_max_steps: u32,
    /// Lead cruising speed envelope, m/s.
    pub lead_vel_range: [f64; 2],
    /// Lead segment acceleration draw, m/s².
    pub lead_acc_range: [f64; 2],
    /// Emergency braking acceleration draw, m/s².
    pub emergency_acc_range: [f64; 2],
    /// Expected emergency events per simulated hour.
    pub emergency_rate_per_hour: f64,
    /// Road friction coefficient draw (per episode).
    pub mu_range: [f64; 2],
    /// Desired time headway, s.
    pub target_th: f64,
    /// Initial time headway draw, s.
    pub init_th_range: [f64; 2],
    /// Additive host speed offset draw at reset, m/s.
    pub host_vel_jitter: [f64; 2],
    /// Default scenario seed (commonly overridden per episode).
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            dt: 0.04,
            episode_max_steps: 7500,
            lead_vel_range: [17.0, 40.0],
            lead_acc_range: [-2.0, 2.0],
            emergency_acc_range: [-6.0, -3.0],
            emergency_rate_per_hour: 1.0,
            mu_range: [0.4, 1.0],
            target_th: 2.0,
            init_th_range: [1.5, 3.0],
            host_vel_jitter: [-2.0, 2.0],
            seed: 0,
        }
    }
}

impl EnvConfig {
    /// Validates ranges and physical plausibility; names the offending field.
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(CoreError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.episode_max_steps == 0 {
            return Err(CoreError::Config("episode_max_steps must be at least 1".into()));
        }
        for (name, r) in [
            ("lead_vel_range", &self.lead_vel_range),
            ("lead_acc_range", &self.lead_acc_range),
            ("emergency_acc_range", &self.emergency_acc_range),
            ("mu_range", &self.mu_range),
            ("init_th_range", &self.init_th_range),
            ("host_vel_jitter", &self.host_vel_jitter),
        ] {
            if !(r[0].is_finite() && r[1].is_finite() && r[0] <= r[1]) {
                return Err(CoreError::Config(format!("{name} must be an ordered finite range, got {r:?}")));
            }
        }
        if self.lead_vel_range[0] < 0.0 {
            return Err(CoreError::Config("lead_vel_range must be non-negative".into()));
        }
        if self.emergency_acc_range[0] < -6.0 || self.emergency_acc_range[1] > -3.0 {
            return Err(CoreError::Config(format!(
                "emergency_acc_range must lie within [-6, -3], got {:?}",
                self.emergency_acc_range
            )));
        }
        if self.emergency_rate_per_hour < 0.0 {
            return Err(CoreError::Config("emergency_rate_per_hour must be non-negative".into()));
        }
        if self.mu_range[0] <= 0.0 || self.mu_range[1] > 1.0 {
            return Err(CoreError::Config(format!("mu_range must lie within (0, 1], got {:?}", self.mu_range)));
        }
        if self.target_th <= 0.0 {
            return Err(CoreError::Config("target_th must be positive".into()));
        }
        if self.init_th_range[0] <= 0.0 {
            return Err(CoreError::Config("init_th_range must be positive".into()));
        }
        Ok(())
    }

    /// Per-step probability of an emergency event starting.
    pub fn hazard_per_step(&self) -> f64 {
        self.dt / 3600.0 * self.emergency_rate_per_hour
    }
}

/// What currently drives the lead vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeadMode {
    /// Scripted cruise/emergency behavior from the episode seed.
    Naturalistic,
    /// Mid-emergency (still scripted, stops at the drawn target speed).
    EmergencyBraking,
    /// Acceleration supplied externally each step (adversarial evaluation).
    External,
}

#[derive(Debug, Clone)]
enum LeadPhase {
    Cruise { acc: f64, steps_left: u32 },
    Emergency { acc: f64, target_vel: f64 },
    /// Climb back into the cruising envelope after an emergency dropped the
    /// lead below it.
    Recovery { acc: f64 },
}

/// Full simulation state.  Positions are along-track meters; `x_rel` is
/// `lead_pos - host_pos`.
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub host_pos: f64,
    pub host_vel: f64,
    /// Actuator acceleration state (lagged, clamped), m/s².
    pub host_acc: f64,
    pub lead_pos: f64,
    pub lead_vel: f64,
    pub lead_acc: f64,
    /// Road friction coefficient for this episode.
    pub mu: f64,
    pub episode_step: u32,
    pub lead_mode: LeadMode,
    lead_phase: LeadPhase,
    lead_rng: ChaCha8Rng,
}

/// Raw kinematic observation handed to policies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    /// Host speed, m/s.
    pub v: f64,
    /// Host acceleration, m/s².
    pub v_dot: f64,
    /// Closing speed `v - v_lead`, m/s.
    pub v_rel: f64,
    /// Time headway, s (sentinel-clamped near standstill).
    pub th: f64,
}

impl Observation {
    /// Normalized feature vector for network input.  The headway channel is
    /// clamped to the sentinel before scaling so every feature stays finite.
    pub fn features(&self) -> [f64; 4] {
        [
            self.v / NORM_VEL,
            self.v_dot / NORM_ACC,
            self.v_rel / NORM_VREL,
            self.th.min(safety_cage::TH_SENTINEL_S) / NORM_TH,
        ]
    }
}

/// Notable events raised by a single step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepEvent {
    EmergencyBrakeStart,
    CageBreach,
}

/// Outcome of one control cycle.
#[derive(Debug, Clone)]
pub struct StepResult {
    pub observation: Observation,
    /// Headway-tracking reward component.
    pub reward_th: f64,
    /// Headway reward plus the cage-breach penalty (when the cage is active).
    pub reward_total: f64,
    /// Pedal actually applied after arbitration.
    pub executed_pedal: f64,
    /// Cage arbitration details for this cycle (also filled when the cage is
    /// disabled, for telemetry; `breached`/penalty only apply when enabled).
    pub verdict: CageVerdict,
    /// True when a cage intervention happened this step.
    pub breached: bool,
    pub collision: bool,
    pub done: bool,
    pub events: Vec<StepEvent>,
}

/// Headway-tracking reward on a single transition.
///
/// Inside the quarter-second band around the 2 s target the reward is 1.
/// Outside the band the sign of progress decides between a small bonus and a
/// penalty; far outside the band the penalty for drifting away grows to -0.5.
pub fn reward_headway(th: f64, th_prev: f64) -> f64 {
    let dev = (th - 2.0).abs();
    if dev <= 0.25 {
        return 1.0;
    }
    // Strictly positive product means the headway moved toward the target
    // (f64::signum would misclassify a stalled headway, since signum(0) = 1).
    let toward = (th - th_prev) * (2.0 - th_prev) > 0.0;
    if dev <= 1.0 {
        if toward { 0.1 } else { -0.1 }
    } else if toward {
        -0.05
    } else {
        -0.5
    }
}

/// Total per-step reward: headway term plus a fixed -0.1 penalty whenever the
/// safety cage had to intervene.
pub fn reward_total(r_th: f64, breached: bool) -> f64 {
    if breached {
        r_th - 0.1
    } else {
        r_th
    }
}

/// Advances the host actuator and kinematics by one step.
///
/// Throttle maps to engine acceleration, braking to friction-limited
/// deceleration; the actuator state chases the command through a first-order
/// lag and is clamped to the physical envelope `[-mu*g, min(engine_cap,
/// mu*g)]`.  Velocity is clamped at zero (no reversing), and position
/// integrates the post-update velocity.
pub fn host_dynamics(state: &mut SimState, pedal: f64, dt: f64) {
    let pedal = pedal.clamp(-1.0, 1.0);
    let a_cmd = if pedal >= 0.0 {
        pedal * ENGINE_ACCEL_CAP
    } else {
        pedal * state.mu * GRAVITY
    };
    let mut a = state.host_acc + dt * (a_cmd - state.host_acc) / ACTUATOR_LAG_S;
    let a_min = -state.mu * GRAVITY;
    let a_max = ENGINE_ACCEL_CAP.min(state.mu * GRAVITY);
    a = a.clamp(a_min, a_max);
    state.host_acc = a;
    state.host_vel = (state.host_vel + a * dt).max(0.0);
    state.host_pos += state.host_vel * dt;
}

/// The simulation environment: owns config and state, enforces the episode
/// protocol (reset, step until done).
#[derive(Debug, Clone)]
pub struct Env {
    config: EnvConfig,
    state: SimState,
    done: bool,
    collision: bool,
    prev_th: f64,
}

impl Env {
    /// Builds an environment after validating the configuration.  The
    /// environment is unusable until the first [`Env::reset`].
    pub fn new(config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Env {
            config,
            state: SimState {
                t: 0.0,
                host_pos: 0.0,
                host_vel: 0.0,
                host_acc: 0.0,
                lead_pos: 1.0,
                lead_vel: 0.0,
                lead_acc: 0.0,
                mu: 1.0,
                episode_step: 0,
                lead_mode: LeadMode::Naturalistic,
                lead_phase: LeadPhase::Cruise { acc: 0.0, steps_left: 0 },
                lead_rng: ChaCha8Rng::seed_from_u64(0),
            },
            done: true,
            collision: false,
            prev_th: 0.0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn state(&self) -> &SimState {
        &self.state
    }

    pub fn x_rel(&self) -> f64 {
        self.state.lead_pos - self.state.host_pos
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn collided(&self) -> bool {
        self.collision
    }

    /// Starts a fresh episode from the given seed and returns the initial
    /// observation.  All initial-condition draws and the whole lead trace are
    /// functions of this seed alone.
    pub fn reset(&mut self, seed: u64) -> Observation {
        let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
        let lead_seed = init_rng.next_u64();

        let c = &self.config;
        let lead_vel = sample_range(&mut init_rng, c.lead_vel_range);
        let mu = sample_range(&mut init_rng, c.mu_range);
        let th0 = sample_range(&mut init_rng, c.init_th_range);
        let jitter = sample_range(&mut init_rng, c.host_vel_jitter);
        let host_vel = (lead_vel + jitter).max(0.0);
        // Gap consistent with the drawn headway; floor of 1 m guards the
        // degenerate standstill case.
        let x_rel = (th0 * host_vel).max(1.0);

        self.state = SimState {
            t: 0.0,
            host_pos: 0.0,
            host_vel,
            host_acc: 0.0,
            lead_pos: x_rel,
            lead_vel,
            lead_acc: 0.0,
            mu,
            episode_step: 0,
            lead_mode: LeadMode::Naturalistic,
            lead_phase: LeadPhase::Cruise { acc: 0.0, steps_left: 0 },
            lead_rng: ChaCha8Rng::seed_from_u64(lead_seed),
        };
        self.done = false;
        self.collision = false;
        let obs = self.observation();
        self.prev_th = obs.th;
        obs
    }

    /// Current observation (valid any time after a reset).
    pub fn observation(&self) -> Observation {
        let x_rel = self.x_rel();
        let th = if x_rel <= 0.0 {
            0.0
        } else {
            // x_rel > 0 here, so the only error path is unreachable
            safety_cage::time_headway(x_rel, self.state.host_vel).unwrap()
        };
        Observation {
            v: self.state.host_vel,
            v_dot: self.state.host_acc,
            v_rel: self.state.host_vel - self.state.lead_vel,
            th,
        }
    }

    /// Steps with the scripted (naturalistic) lead.
    pub fn step(&mut self, pedal: f64, cage_enabled: bool) -> Result<StepResult> {
        self.step_inner(pedal, cage_enabled, None)
    }

    /// Steps with an externally commanded lead acceleration (adversarial
    /// evaluation).  The commanded value is clamped so the lead speed stays
    /// inside `lead_vel_range`.
    pub fn step_with_lead(
        &mut self,
        pedal: f64,
        lead_acc: f64,
        cage_enabled: bool,
    ) -> Result<StepResult> {
        self.step_inner(pedal, cage_enabled, Some(lead_acc))
    }

    fn step_inner(
        &mut self,
        pedal: f64,
        cage_enabled: bool,
        external_lead_acc: Option<f64>,
    ) -> Result<StepResult> {
        if self.done {
            return Err(CoreError::Usage(
                "step called on a finished episode; call reset first".into(),
            ));
        }
        let pedal = pedal.clamp(-1.0, 1.0);
        let mut events = Vec::new();

        // Arbitrate on the pre-step state.
        let x_rel = self.x_rel();
        let v_rel = self.state.host_vel - self.state.lead_vel;
        let verdict = safety_cage::arbitrate(x_rel, self.state.host_vel, v_rel, pedal)?;
        let breached = cage_enabled && verdict.breached;
        let executed = if cage_enabled { verdict.executed_pedal } else { pedal };
        if breached {
            events.push(StepEvent::CageBreach);
        }

        // Advance the lead.
        let dt = self.config.dt;
        match external_lead_acc {
            Some(acc) => {
                self.state.lead_mode = LeadMode::External;
                self.state.lead_acc = acc;
                let [lo, hi] = self.config.lead_vel_range;
                self.state.lead_vel = (self.state.lead_vel + acc * dt).clamp(lo, hi);
            }
            None => {
                let was_emergency = matches!(self.state.lead_phase, LeadPhase::Emergency { .. });
                self.lead_scripted_step();
                if !was_emergency && matches!(self.state.lead_phase, LeadPhase::Emergency { .. }) {
                    events.push(StepEvent::EmergencyBrakeStart);
                }
            }
        }
        self.state.lead_pos += self.state.lead_vel * dt;

        // Advance the host with the executed pedal.
        host_dynamics(&mut self.state, executed, dt);

        self.state.t += dt;
        self.state.episode_step += 1;

        let collision = self.x_rel() <= 0.0;
        let timeout = self.state.episode_step >= self.config.episode_max_steps;
        self.collision = collision;
        self.done = collision || timeout;

        let observation = self.observation();
        let r_th = reward_headway(observation.th, self.prev_th);
        let r_total = reward_total(r_th, breached);
        self.prev_th = observation.th;

        Ok(StepResult {
            observation,
            reward_th: r_th,
            reward_total: r_total,
            executed_pedal: executed,
            verdict,
            breached,
            collision,
            done: self.done,
            events,
        })
    }

    /// One step of the scripted lead behavior: piecewise-constant cruise
    /// segments, hazard-drawn emergencies, and a recovery climb when an
    /// emergency left the lead below its cruising envelope.
    fn lead_scripted_step(&mut self) {
        let dt = self.config.dt;
        let [lo, hi] = self.config.lead_vel_range;
        let hazard = self.config.hazard_per_step();

        // Hazard draw happens every cruising step so the event rate is a
        // property of time, not of segment structure.
        if matches!(self.state.lead_phase, LeadPhase::Cruise { .. })
            && self.state.lead_rng.gen::<f64>() < hazard
            && self.state.lead_vel > EMERGENCY_MIN_VEL
        {
            let acc = sample_range(&mut self.state.lead_rng, self.config.emergency_acc_range);
            let target_vel = self
                .state
                .lead_rng
                .gen_range(EMERGENCY_MIN_VEL..self.state.lead_vel);
            self.state.lead_phase = LeadPhase::Emergency { acc, target_vel };
            self.state.lead_mode = LeadMode::EmergencyBraking;
        }

        match self.state.lead_phase {
            LeadPhase::Cruise { acc, steps_left } => {
                let (acc, steps_left) = if steps_left == 0 {
                    let dur_s = self.state.lead_rng.gen_range(2.0..10.0);
                    let steps = (dur_s / dt).round().max(1.0) as u32;
                    let acc = sample_range(&mut self.state.lead_rng, self.config.lead_acc_range);
                    (acc, steps)
                } else {
                    (acc, steps_left)
                };
                self.state.lead_acc = acc;
                self.state.lead_vel = (self.state.lead_vel + acc * dt).clamp(lo, hi);
                self.state.lead_phase = LeadPhase::Cruise { acc, steps_left: steps_left - 1 };
                self.state.lead_mode = LeadMode::Naturalistic;
            }
            LeadPhase::Emergency { acc, target_vel } => {
                self.state.lead_acc = acc;
                let v = self.state.lead_vel + acc * dt;
                if v <= target_vel {
                    self.state.lead_vel = target_vel;
                    self.end_emergency(lo);
                } else {
                    self.state.lead_vel = v;
                }
            }
            LeadPhase::Recovery { acc } => {
                self.state.lead_acc = acc;
                let v = self.state.lead_vel + acc * dt;
                if v >= lo {
                    self.state.lead_vel = v.min(hi);
                    self.state.lead_phase = LeadPhase::Cruise { acc: 0.0, steps_left: 0 };
                } else {
                    self.state.lead_vel = v;
                }
                self.state.lead_mode = LeadMode::Naturalistic;
            }
        }
    }

    fn end_emergency(&mut self, range_lo: f64) {
        if self.state.lead_vel < range_lo {
            let acc = self.state.lead_rng.gen_range(0.5..2.0);
            self.state.lead_phase = LeadPhase::Recovery { acc };
        } else {
            self.state.lead_phase = LeadPhase::Cruise { acc: 0.0, steps_left: 0 };
        }
        self.state.lead_mode = LeadMode::Naturalistic;
    }
}

fn sample_range(rng: &mut ChaCha8Rng, range: [f64; 2]) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..range[1])
    }
}
