//! Per-sample orchestration of the reachability-guided QP tracker.
//!
//! Each sample: project onto the path, form the look-ahead target, compute the
//! required axial acceleration and the robust margin `δ`, solve the QP with the
//! current weight, then update the weight from the post-solve residuals. A
//! freeze request overrides all of this with a brake-to-rest.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::path::{LookaheadTarget, ReferencePath};
use crate::plant::PlantState;
use crate::qp::{self, ActiveSet, Limits};
use crate::screen::SpeedCaps;
use crate::Vec2;

/// `‖e_v‖` below which the KKT weight ratio is treated as undefined.
pub const KKT_EV_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseBounds {
    /// Bound on the velocity-level noise entering the position equation (m/s).
    pub eps_p: f64,
    /// Bound on the acceleration noise (m/s²).
    pub eps_v: f64,
}

impl Default for NoiseBounds {
    fn default() -> Self {
        NoiseBounds {
            eps_p: 1e-3,
            eps_v: 1e-2,
        }
    }
}

impl NoiseBounds {
    pub const ZERO: NoiseBounds = NoiseBounds { eps_p: 0.0, eps_v: 0.0 };

    /// Check the bounds and that the buffer leaves some acceleration budget.
    pub fn validate(&self, limits: &Limits) -> Result<()> {
        if !(self.eps_p >= 0.0 && self.eps_p.is_finite()) {
            return Err(config_err("noise.eps_p must be non-negative"));
        }
        if !(self.eps_v >= 0.0 && self.eps_v.is_finite()) {
            return Err(config_err("noise.eps_v must be non-negative"));
        }
        let sigma = sigma_buffer(self, limits.t_s).sigma;
        if sigma >= limits.a_max {
            return Err(config_err(format!(
                "disturbance buffer sigma = 2*eps_p/t_s + eps_v = {sigma} must be below a_max = {}",
                limits.a_max
            )));
        }
        Ok(())
    }
}

/// One-step disturbance buffer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisturbanceBuffer {
    /// Acceleration headroom `2 ε_p / t_s + ε_v`.
    pub sigma: f64,
    /// Worst-case one-step position shift `ε_p t_s + ½ ε_v t_s²`.
    pub dp_max: f64,
}

pub fn sigma_buffer(nb: &NoiseBounds, t_s: f64) -> DisturbanceBuffer {
    DisturbanceBuffer {
        sigma: 2.0 * nb.eps_p / t_s + nb.eps_v,
        dp_max: nb.eps_p * t_s + 0.5 * nb.eps_v * t_s * t_s,
    }
}

/// Axial acceleration that lands on the look-ahead point in one step, `2‖r‖/t_s²`.
pub fn required_accel(r: &Vec2, t_s: f64) -> f64 {
    2.0 * r.norm() / (t_s * t_s)
}

/// Robust one-step margin `|u_req| − (a_max − σ)`; reachable when `≤ 0`.
pub fn reach_margin(u_req: f64, a_max: f64, sigma: f64) -> f64 {
    u_req.abs() - (a_max - sigma)
}

/// `t_s ‖e_p‖ / (2 ‖e_v‖)`, or `None` when `e_v` vanishes and the previous
/// weight should be kept.
pub fn kkt_weight(e_p: &Vec2, e_v: &Vec2, t_s: f64) -> Option<f64> {
    let ev = e_v.norm();
    if ev <= KKT_EV_FLOOR {
        None
    } else {
        Some(t_s * e_p.norm() / (2.0 * ev))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightPolicy {
    /// Bias applied to the KKT weight when the target is unreachable.
    pub rho_unreachable: f64,
    /// Exponential smoothing rate.
    pub beta: f64,
    pub c_max: f64,
    pub c_min: f64,
    pub c_0: f64,
}

impl Default for WeightPolicy {
    fn default() -> Self {
        WeightPolicy {
            rho_unreachable: 0.5,
            beta: 0.2,
            c_max: 10.0,
            c_min: 0.0,
            c_0: 0.0,
        }
    }
}

impl WeightPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(config_err("policy.beta must lie in (0, 1]"));
        }
        if !(self.rho_unreachable > 0.0 && self.rho_unreachable <= 1.0) {
            return Err(config_err("policy.rho_unreachable must lie in (0, 1]"));
        }
        if !(self.c_min >= 0.0 && self.c_min <= self.c_0 && self.c_0 <= self.c_max && self.c_max.is_finite()) {
            return Err(config_err("policy weights must satisfy 0 <= c_min <= c_0 <= c_max < inf"));
        }
        Ok(())
    }
}

/// Smoothed, capped weight for the next sample.
pub fn update_weight(c_prev: f64, c_kkt: Option<f64>, delta: f64, pol: &WeightPolicy) -> f64 {
    let Some(c_kkt) = c_kkt else {
        return c_prev.clamp(pol.c_min, pol.c_max);
    };
    let rho = if delta > 0.0 { pol.rho_unreachable } else { 1.0 };
    let blended = (1.0 - pol.beta) * c_prev + pol.beta * rho * c_kkt;
    blended.min(pol.c_max).clamp(pol.c_min, pol.c_max)
}

/// Maximum deceleration along `−v`, finishing with an exact stop.
pub fn brake_command(v: &Vec2, limits: &Limits) -> Vec2 {
    let speed = v.norm();
    if speed > limits.a_max * limits.t_s {
        v * (-limits.a_max / speed)
    } else {
        -v / limits.t_s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Tracking,
    Braking,
    Frozen,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Tracking => "tracking",
            Mode::Braking => "braking",
            Mode::Frozen => "frozen",
        })
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "tracking" => Ok(Mode::Tracking),
            "braking" => Ok(Mode::Braking),
            "frozen" => Ok(Mode::Frozen),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

/// One-step reachability of the look-ahead target from a state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reachability {
    pub target: LookaheadTarget,
    /// Drift-predicted gap `p_LA − p − t_s v`.
    pub r: Vec2,
    pub u_req: f64,
    pub delta: f64,
}

/// Closest point, look-ahead, `u_req` and `δ` for state `(p, v)`.
///
/// Both the online tracker and the offline screen go through this function.
pub fn assess(
    path: &ReferencePath,
    p: &Vec2,
    v: &Vec2,
    limits: &Limits,
    sigma: f64,
    caps: Option<&SpeedCaps>,
) -> Reachability {
    let s_c = path.closest_point(p);
    let cap = caps.and_then(|c| c.cap_at(s_c));
    let target = path.lookahead_capped(s_c, limits.t_s, cap);
    let r = target.p_la - p - v * limits.t_s;
    let u_req = required_accel(&r, limits.t_s);
    Reachability {
        target,
        r,
        u_req,
        delta: reach_margin(u_req, limits.a_max, sigma),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecision {
    /// Commanded acceleration.
    pub u: Vec2,
    pub u_req: f64,
    /// Reachability margin; NaN while braking or frozen.
    pub delta: f64,
    pub c_used: f64,
    /// Weight carried to the next sample.
    pub c_next: f64,
    pub reachable: bool,
    pub mode: Mode,
    pub active_set: Option<ActiveSet>,
    pub target: Option<LookaheadTarget>,
    pub e_p: Vec2,
    pub e_v: Vec2,
    /// The QP feasible set was empty and the command is a maximum brake.
    pub infeasible: bool,
}

impl StepDecision {
    fn hold(u: Vec2, mode: Mode, c: f64) -> Self {
        StepDecision {
            u,
            u_req: 0.0,
            delta: f64::NAN,
            c_used: c,
            c_next: c,
            reachable: false,
            mode,
            active_set: None,
            target: None,
            e_p: Vec2::zeros(),
            e_v: Vec2::zeros(),
            infeasible: false,
        }
    }
}

/// Everything the tracker needs besides the path and the state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackerParams {
    pub limits: Limits,
    pub noise: NoiseBounds,
    pub policy: WeightPolicy,
}

/// Stateless tracker step; see [`QpTracker`] for the stateful wrapper.
pub fn control_step(
    state: &PlantState,
    path: &ReferencePath,
    params: &TrackerParams,
    c_prev: f64,
    freeze_active: bool,
    caps: Option<&SpeedCaps>,
) -> StepDecision {
    let limits = &params.limits;
    if freeze_active {
        return if state.v == Vec2::zeros() {
            StepDecision::hold(Vec2::zeros(), Mode::Frozen, c_prev)
        } else {
            StepDecision::hold(brake_command(&state.v, limits), Mode::Braking, c_prev)
        };
    }

    let sigma = sigma_buffer(&params.noise, limits.t_s).sigma;
    let reach = assess(path, &state.p, &state.v, limits, sigma, caps);
    let reachable = reach.delta <= 0.0;
    match qp::solve_step(&state.p, &state.v, &reach.target, c_prev, limits) {
        Ok(sol) => {
            let c_kkt = kkt_weight(&sol.e_p, &sol.e_v, limits.t_s);
            StepDecision {
                u: sol.u,
                u_req: reach.u_req,
                delta: reach.delta,
                c_used: c_prev,
                c_next: update_weight(c_prev, c_kkt, reach.delta, &params.policy),
                reachable,
                mode: Mode::Tracking,
                active_set: Some(sol.active_set),
                target: Some(reach.target),
                e_p: sol.e_p,
                e_v: sol.e_v,
                infeasible: false,
            }
        }
        Err(err) => StepDecision {
            u: err.brake,
            u_req: reach.u_req,
            delta: reach.delta,
            c_used: c_prev,
            c_next: c_prev,
            reachable,
            mode: Mode::Braking,
            active_set: None,
            target: Some(reach.target),
            e_p: reach.r - err.brake * (0.5 * limits.t_s * limits.t_s),
            e_v: reach.target.v_la - state.v - err.brake * limits.t_s,
            infeasible: true,
        },
    }
}

/// Tracker owning its adaptive weight across samples.
#[derive(Debug, Clone)]
pub struct QpTracker {
    params: TrackerParams,
    caps: Option<SpeedCaps>,
    c: f64,
}

impl QpTracker {
    pub fn new(params: TrackerParams) -> Result<Self> {
        params.limits.validate()?;
        params.noise.validate(&params.limits)?;
        params.policy.validate()?;
        Ok(QpTracker {
            c: params.policy.c_0,
            params,
            caps: None,
        })
    }

    /// Enable the local speed caps derived from an offline screen.
    pub fn with_speed_caps(mut self, caps: SpeedCaps) -> Self {
        self.caps = Some(caps);
        self
    }

    pub fn weight(&self) -> f64 {
        self.c
    }

    pub fn params(&self) -> &TrackerParams {
        &self.params
    }

    pub fn step(&mut self, state: &PlantState, path: &ReferencePath, freeze_active: bool) -> StepDecision {
        let decision = control_step(state, path, &self.params, self.c, freeze_active, self.caps.as_ref());
        self.c = decision.c_next;
        decision
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::fit_spline;
    use crate::plant::{self, NoiseSample};

    #[test]
    fn required_accel_examples() {
        assert_eq!(required_accel(&Vec2::zeros(), 0.1), 0.0);
        assert!((required_accel(&Vec2::new(0.01, 0.0), 0.1) - 2.0).abs() < 1e-12);
        let r = Vec2::new(0.003, -0.004);
        assert!((required_accel(&(r * 3.0), 0.1) - 3.0 * required_accel(&r, 0.1)).abs() < 1e-12);
    }

    #[test]
    fn sigma_examples() {
        let b = sigma_buffer(&NoiseBounds { eps_p: 0.001, eps_v: 0.01 }, 0.01);
        assert!((b.sigma - 0.21).abs() < 1e-12);
        assert!((b.sigma * 0.01 * 0.01 / 2.0 - b.dp_max).abs() < 1e-18);
        assert_eq!(sigma_buffer(&NoiseBounds::ZERO, 0.01).sigma, 0.0);
    }

    #[test]
    fn margin_examples() {
        assert!((reach_margin(4.0, 5.0, 0.21) + 0.79).abs() < 1e-12);
        assert_eq!(reach_margin(5.0 - 0.21, 5.0, 0.21), 0.0);
        assert_eq!(reach_margin(0.0, 5.0, 0.0), -5.0);
    }

    #[test]
    fn kkt_weight_examples() {
        let w = kkt_weight(&Vec2::new(0.01, 0.0), &Vec2::new(0.1, 0.0), 0.1).unwrap();
        assert!((w - 0.005).abs() < 1e-15);
        assert_eq!(kkt_weight(&Vec2::zeros(), &Vec2::new(0.1, 0.0), 0.1), Some(0.0));
        assert_eq!(kkt_weight(&Vec2::new(0.01, 0.0), &Vec2::zeros(), 0.1), None);
    }

    #[test]
    fn update_weight_examples() {
        let pol = WeightPolicy { beta: 0.2, rho_unreachable: 0.5, c_max: 10.0, c_min: 0.0, c_0: 0.0 };
        assert!((update_weight(0.1, Some(0.005), 1.0, &pol) - 0.0805).abs() < 1e-15);
        assert!((update_weight(0.1, Some(0.1), -1.0, &pol) - 0.1).abs() < 1e-15);
        assert_eq!(update_weight(0.1, Some(1e9), -1.0, &pol), 10.0);
        assert_eq!(update_weight(0.1, None, 1.0, &pol), 0.1);
    }

    #[test]
    fn brake_examples() {
        let l = Limits::new(0.1, 1.0, 5.0).unwrap();
        assert_eq!(brake_command(&Vec2::new(1.0, 0.0), &l), Vec2::new(-5.0, 0.0));
        let v = Vec2::new(0.2, 0.0);
        let u = brake_command(&v, &l);
        assert_eq!(u, Vec2::new(-2.0, 0.0));
        assert_eq!(v + u * 0.1, Vec2::zeros());
        assert_eq!(brake_command(&Vec2::zeros(), &l), Vec2::zeros());
    }

    #[test]
    fn policy_validation() {
        assert!(WeightPolicy::default().validate().is_ok());
        assert!(WeightPolicy { beta: 0.0, ..Default::default() }.validate().is_err());
        assert!(WeightPolicy { c_0: 20.0, ..Default::default() }.validate().is_err());
        let l = Limits::default();
        assert!(NoiseBounds { eps_p: 0.03, eps_v: 0.0 }.validate(&l).is_err());
    }

    fn gentle_path() -> ReferencePath {
        let pts = [
            Vec2::new(0.0, 0.0),
            Vec2::new(0.3, 0.2),
            Vec2::new(0.6, 0.1),
            Vec2::new(0.9, 0.3),
        ];
        fit_spline(&pts, 6.0).unwrap()
    }

    fn params(noise: NoiseBounds) -> TrackerParams {
        TrackerParams {
            limits: Limits::default(),
            noise,
            policy: WeightPolicy::default(),
        }
    }

    #[test]
    fn on_path_step_lands_exactly() {
        let path = gentle_path();
        let s = path.sample(2.0);
        let state = PlantState::new(s.p, s.v);
        let d = control_step(&state, &path, &params(NoiseBounds::ZERO), 0.0, false, None);
        assert!(d.reachable);
        assert_eq!(d.mode, Mode::Tracking);
        assert!(d.e_p.norm() <= 1e-9);
    }

    #[test]
    fn frozen_at_rest_is_idempotent() {
        let path = gentle_path();
        let mut tracker = QpTracker::new(params(NoiseBounds::ZERO)).unwrap();
        let mut state = PlantState::new(Vec2::new(0.1, 0.3), Vec2::zeros());
        for _ in 0..5 {
            let d = tracker.step(&state, &path, true);
            assert_eq!(d.mode, Mode::Frozen);
            assert_eq!(d.u, Vec2::zeros());
            let next = plant::step(&state, &d.u, &NoiseSample::ZERO, 0.01);
            assert_eq!(next.p, state.p);
            assert_eq!(next.v, state.v);
            state = next;
        }
    }

    #[test]
    fn braking_reaches_rest() {
        let path = gentle_path();
        let mut tracker = QpTracker::new(params(NoiseBounds::ZERO)).unwrap();
        let mut state = PlantState::new(Vec2::zeros(), Vec2::new(0.6, 0.3));
        let mut modes = Vec::new();
        for _ in 0..30 {
            let d = tracker.step(&state, &path, true);
            assert!(d.u.norm() <= 5.0 * (1.0 + 1e-9));
            modes.push(d.mode);
            state = plant::step(&state, &d.u, &NoiseSample::ZERO, 0.01);
        }
        assert_eq!(modes[0], Mode::Braking);
        assert_eq!(*modes.last().unwrap(), Mode::Frozen);
        assert_eq!(state.v, Vec2::zeros());
    }

    #[test]
    fn infeasible_speed_brakes() {
        let path = gentle_path();
        let state = PlantState::new(Vec2::zeros(), Vec2::new(2.0, 0.0));
        let d = control_step(&state, &path, &params(NoiseBounds::ZERO), 0.0, false, None);
        assert!(d.infeasible);
        assert_eq!(d.mode, Mode::Braking);
        assert_eq!(d.u, Vec2::new(-5.0, 0.0));
    }
}
