//! Rule-based braking envelopes ("safety cages") over the agent's pedal.
//!
//! Two independent cages watch the host vehicle: one keyed on time headway
//! (TH), one on time to collision (TTC).  Each maps its risk metric to a
//! minimum braking demand in `[0, 1]` through a fixed piecewise-linear
//! schedule, and the executed command is the most conservative of the two
//! demands and whatever the agent proposed.  A *breach* is the event where a
//! cage demands more braking than the agent did — i.e. the cage actually
//! intervenes.
//!
//! Pedal convention throughout the crate: `+1` = full throttle, `-1` = full
//! braking, so a braking demand `b` corresponds to the pedal value `-b`.

use crate::{CoreError, Result};

/// Reported time headway when the host is at or below walking pace and the
/// ratio `x_rel / v` stops being meaningful.
pub const TH_SENTINEL_S: f64 = 10.0;

/// Host speed below which time headway falls back to [`TH_SENTINEL_S`].
pub const LOW_SPEED_CUTOFF_MPS: f64 = 0.1;

/// Risk bands shared by both cages: `Low` demands nothing, `R1`/`R2` ramp the
/// demand linearly, `R3` demands maximum braking.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RiskLevel {
    Low,
    R1,
    R2,
    R3,
}

/// Everything the arbitration step decided for one control cycle.
#[derive(Debug, Clone, Copy)]
pub struct CageVerdict {
    /// Time headway at decision time, seconds (sentinel when near-stationary).
    pub th: f64,
    /// Time to collision at decision time, seconds (`+inf` when opening).
    pub ttc: f64,
    /// Braking demanded by the TH cage, `[0, 1]`.
    pub b_th: f64,
    /// Braking demanded by the TTC cage, `[0, 1]`.
    pub b_ttc: f64,
    /// Braking contained in the agent's pedal proposal, `[0, 1]`.
    pub b_agent: f64,
    /// Arbitrated braking: `max(b_th, b_ttc, b_agent)`.
    pub b_final: f64,
    /// Pedal to execute after arbitration.
    pub executed_pedal: f64,
    /// True when a cage demanded more braking than the agent proposed.
    pub breached: bool,
    /// TH cage risk band.
    pub risk_th: RiskLevel,
    /// TTC cage risk band.
    pub risk_ttc: RiskLevel,
}

/// Time headway `x_rel / v` in seconds.
///
/// Near-stationary hosts (`v <= 0.1 m/s`) report the sentinel value instead
/// of a divergent ratio.  A negative gap means the caller let the vehicles
/// overlap, which is a domain error here.
pub fn time_headway(x_rel: f64, v: f64) -> Result<f64> {
    if x_rel < 0.0 {
        return Err(CoreError::Domain(format!(
            "time_headway: negative relative distance {x_rel}"
        )));
    }
    if v <= LOW_SPEED_CUTOFF_MPS {
        return Ok(TH_SENTINEL_S);
    }
    Ok(x_rel / v)
}

/// Time to collision `x_rel / v_rel` in seconds, where `v_rel = v_host -
/// v_lead` is the closing speed.  A non-closing pair never collides, which is
/// represented as `+inf`.
pub fn time_to_collision(x_rel: f64, v_rel: f64) -> f64 {
    debug_assert!(x_rel >= 0.0, "time_to_collision called with overlapping vehicles");
    if v_rel <= 0.0 {
        f64::INFINITY
    } else {
        x_rel / v_rel
    }
}

/// Minimum braking demanded by the TH cage.
///
/// Piecewise linear in `th` with a deliberate jump at the outer threshold:
/// no demand above 1.6 s, then two linear ramps, then full braking at or
/// below 0.5 s.
pub fn cage_th_braking(th: f64) -> f64 {
    if th > 1.6 {
        0.0
    } else if th > 1.0 {
        -0.5 * th + 1.0
    } else if th > 0.5 {
        -1.0 * th + 1.5
    } else {
        1.0
    }
}

/// Minimum braking demanded by the TTC cage.
///
/// Same shape as the TH cage but continuous at its outer threshold: zero
/// above 2.5 s, two linear ramps, full braking at or below 1.0 s.
pub fn cage_ttc_braking(ttc: f64) -> f64 {
    if ttc > 2.5 {
        0.0
    } else if ttc > 1.5 {
        -0.5 * ttc + 1.25
    } else if ttc > 1.0 {
        -1.0 * ttc + 2.0
    } else {
        1.0
    }
}

/// Risk band of the TH cage at a given headway.
pub fn risk_th(th: f64) -> RiskLevel {
    if th > 1.6 {
        RiskLevel::Low
    } else if th > 1.0 {
        RiskLevel::R1
    } else if th > 0.5 {
        RiskLevel::R2
    } else {
        RiskLevel::R3
    }
}

/// Risk band of the TTC cage at a given time to collision.
pub fn risk_ttc(ttc: f64) -> RiskLevel {
    if ttc > 2.5 {
        RiskLevel::Low
    } else if ttc > 1.5 {
        RiskLevel::R1
    } else if ttc > 1.0 {
        RiskLevel::R2
    } else {
        RiskLevel::R3
    }
}

/// Arbitrates one control cycle: computes both cage demands from the current
/// kinematic state and overrides the agent whenever a cage demands more
/// braking than the agent's pedal contains.
///
/// `agent_pedal` is expected in `[-1, 1]`; values outside are clamped.
pub fn arbitrate(x_rel: f64, v: f64, v_rel: f64, agent_pedal: f64) -> Result<CageVerdict> {
    let pedal = agent_pedal.clamp(-1.0, 1.0);
    let th = time_headway(x_rel, v)?;
    let ttc = time_to_collision(x_rel, v_rel);
    let b_th = cage_th_braking(th);
    let b_ttc = cage_ttc_braking(ttc);
    let b_agent = (-pedal).max(0.0);
    let b_cage = b_th.max(b_ttc);
    let breached = b_cage > b_agent;
    let b_final = b_cage.max(b_agent);
    let executed_pedal = if breached { -b_cage } else { pedal };
    Ok(CageVerdict {
        th,
        ttc,
        b_th,
        b_ttc,
        b_agent,
        b_final,
        executed_pedal,
        breached,
        risk_th: risk_th(th),
        risk_ttc: risk_ttc(ttc),
    })
}
