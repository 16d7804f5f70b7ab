//! Duty-cycle lock detector.
//!
//! Node `v_x` is charged toward VDD through R1 while the PFD is idle and
//! discharged through R2 while UP or DN is asserted. A Schmitt trigger with
//! thresholds `alpha·VDD` (rising) and `alpha_low·VDD` (falling) produces
//! LOCK. In steady state `v_x = VDD / (D/(1−D)·R1/R2 + 1)`, so lock is
//! indicated when the PFD activity duty cycle `D` is at most
//! `D_min = 1 / (alpha/(1−alpha)·R1/R2 + 1)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::units::{Seconds, Volts};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LockDetError {
    #[error("duty cycle {0} must lie in [0, 1)")]
    Duty(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LockDetectorParams {
    /// Positive-going Schmitt threshold as a fraction of VDD.
    pub alpha: f64,
    /// Negative-going threshold fraction.
    pub alpha_low: f64,
    /// R1/R2.
    pub r_ratio: f64,
    /// R1·C of the averaging node.
    pub tau: Seconds,
    pub vdd: Volts,
}

impl Default for LockDetectorParams {
    fn default() -> Self {
        Self {
            alpha: 2.0 / 3.0,
            alpha_low: 1.0 / 3.0,
            r_ratio: 8.0,
            tau: Seconds(10e-6),
            vdd: Volts(1.2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LockDetectorState {
    pub v_x: Volts,
    pub locked: bool,
}

/// Steady-state `v_x` for a PFD activity duty cycle.
pub fn steady_state_vx(duty: f64, params: &LockDetectorParams) -> Result<Volts, LockDetError> {
    if !(0.0..1.0).contains(&duty) {
        return Err(LockDetError::Duty(duty));
    }
    Ok(Volts(params.vdd.0 / (duty / (1.0 - duty) * params.r_ratio + 1.0)))
}

/// Largest duty cycle still reported as locked.
pub fn d_min(params: &LockDetectorParams) -> f64 {
    1.0 / (params.alpha / (1.0 - params.alpha) * params.r_ratio + 1.0)
}

/// Where `v_x` is heading and how fast, for a fixed PFD state.
fn target_and_tau(active: bool, params: &LockDetectorParams) -> (f64, f64) {
    if active {
        (0.0, params.tau.0 / params.r_ratio)
    } else {
        (params.vdd.0, params.tau.0)
    }
}

/// Result of one interval: the new state and, if the Schmitt output
/// changed, the time offset within the interval at which it did.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LockDetStep {
    pub state: LockDetectorState,
    pub toggled_at: Option<f64>,
}

/// Integrate the node over `dt` with the PFD activity held at `active`.
pub fn lockdet_advance(
    state: LockDetectorState,
    active: bool,
    dt: Seconds,
    params: &LockDetectorParams,
) -> LockDetStep {
    let dt = dt.0.max(0.0);
    let (v_inf, tau) = target_and_tau(active, params);
    let v0 = state.v_x.0;
    let v1 = v_inf + (v0 - v_inf) * (-dt / tau).exp();
    let hi = params.alpha * params.vdd.0;
    let lo = params.alpha_low * params.vdd.0;
    let crossing = |th: f64| -> f64 {
        // time for v0 → th along the exponential toward v_inf
        (tau * ((v0 - v_inf) / (th - v_inf)).ln()).clamp(0.0, dt)
    };
    let mut next = LockDetectorState {
        v_x: Volts(v1.clamp(0.0, params.vdd.0)),
        locked: state.locked,
    };
    let mut toggled_at = None;
    if !state.locked && v1 >= hi {
        next.locked = true;
        toggled_at = Some(if v0 >= hi { 0.0 } else { crossing(hi) });
    } else if state.locked && v1 <= lo {
        next.locked = false;
        toggled_at = Some(if v0 <= lo { 0.0 } else { crossing(lo) });
    }
    LockDetStep {
        state: next,
        toggled_at,
    }
}
