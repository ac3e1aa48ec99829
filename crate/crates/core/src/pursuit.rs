//! Pure-pursuit baseline: a PD pull toward the shared look-ahead target with
//! limits enforced only after the fact by clipping.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::path::LookaheadTarget;
use crate::plant::PlantState;
use crate::qp::Limits;
use crate::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PpGains {
    /// Position gain (1/s²).
    pub k_p: f64,
    /// Velocity gain (1/s).
    pub k_d: f64,
    /// Also rescale the command so the next-step speed stays within `v_max`.
    pub clip_speed: bool,
}

impl Default for PpGains {
    fn default() -> Self {
        PpGains {
            k_p: 400.0,
            k_d: 40.0,
            clip_speed: true,
        }
    }
}

impl PpGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_p > 0.0 && self.k_p.is_finite()) {
            return Err(config_err("pp_gains.k_p must be positive"));
        }
        if !(self.k_d >= 0.0 && self.k_d.is_finite()) {
            return Err(config_err("pp_gains.k_d must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PpCommand {
    pub u: Vec2,
    /// Norm of the PD command before any clipping.
    pub u_raw_norm: f64,
}

pub fn pp_step(state: &PlantState, target: &LookaheadTarget, gains: &PpGains, limits: &Limits) -> PpCommand {
    let u_raw = (target.p_la - state.p) * gains.k_p + (target.v_la - state.v) * gains.k_d;
    let raw_norm = u_raw.norm();
    let mut u = if raw_norm > limits.a_max {
        u_raw * (limits.a_max / raw_norm)
    } else {
        u_raw
    };
    if gains.clip_speed {
        u *= speed_clip_factor(&state.v, &u, limits);
    }
    PpCommand { u, u_raw_norm: raw_norm }
}

/// Largest `λ ∈ [0, 1]` with `‖v + λ t_s u‖ ≤ v_max`; if none exists, the
/// `λ` that minimises the next-step speed.
fn speed_clip_factor(v: &Vec2, u: &Vec2, limits: &Limits) -> f64 {
    let w = u * limits.t_s;
    if (v + w).norm() <= limits.v_max {
        return 1.0;
    }
    let a = w.norm_squared();
    if a == 0.0 {
        return 1.0;
    }
    let b = 2.0 * v.dot(&w);
    let c = v.norm_squared() - limits.v_max * limits.v_max;
    let disc = b * b - 4.0 * a * c;
    if disc >= 0.0 {
        let hi = (-b + disc.sqrt()) / (2.0 * a);
        if hi >= 0.0 {
            return hi.min(1.0);
        }
    }
    (-b / (2.0 * a)).clamp(0.0, 1.0)
}
