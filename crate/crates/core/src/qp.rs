//! Exact solver for the per-sample tracking QP
//!
//! ```text
//! min_u  ‖r − ½ t_s² u‖² + C ‖d_v − t_s u‖²
//! s.t.   ‖u‖ ≤ a_max,   ‖v_k + t_s u‖ ≤ v_max
//! ```
//!
//! The Hessian is `(t_s⁴/2 + 2 C t_s²) I`, so the constrained minimiser is the
//! Euclidean projection of the unconstrained minimiser onto the intersection
//! of two balls. The projection is resolved by case analysis: interior, a
//! single active ball, or the sphere-sphere intersection. Dykstra's
//! alternating projection is kept as a flagged fallback for near-degenerate
//! geometry.

use std::fmt;

use nalgebra::SVector;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::path::LookaheadTarget;
use crate::Vec2;

/// Relative slack accepted on either constraint.
pub const FEASIBILITY_SLACK: f64 = 1e-9;
/// Convergence tolerance of the alternating-projection fallback.
pub const FALLBACK_TOL: f64 = 1e-12;
pub const FALLBACK_MAX_ITERS: usize = 200;

/// Relative slack used when classifying a point as inside a ball.
const CLASSIFY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Limits {
    /// Sampling period (s).
    pub t_s: f64,
    /// Speed bound (m/s).
    pub v_max: f64,
    /// Acceleration bound (m/s²).
    pub a_max: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Limits {
            t_s: 0.01,
            v_max: 1.0,
            a_max: 5.0,
        }
    }
}

impl Limits {
    pub fn new(t_s: f64, v_max: f64, a_max: f64) -> Result<Self> {
        let limits = Limits { t_s, v_max, a_max };
        limits.validate()?;
        Ok(limits)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, value) in [
            ("limits.t_s", self.t_s),
            ("limits.v_max", self.v_max),
            ("limits.a_max", self.a_max),
        ] {
            if !(value > 0.0 && value.is_finite()) {
                return Err(config_err(format!("{name} must be positive and finite")));
            }
        }
        Ok(())
    }
}

/// Data of one QP instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpInput<const D: usize> {
    /// Drift-predicted position gap `p_LA − p_k − t_s v_k`.
    pub r: SVector<f64, D>,
    /// Velocity gap `v_LA − v_k`.
    pub d_v: SVector<f64, D>,
    pub v_k: SVector<f64, D>,
    /// Velocity weight `C ≥ 0`.
    pub c: f64,
}

impl<const D: usize> QpInput<D> {
    /// Cost `J(u)`.
    pub fn objective(&self, u: &SVector<f64, D>, t_s: f64) -> f64 {
        let (e_p, e_v) = self.residuals(u, t_s);
        e_p.norm_squared() + self.c * e_v.norm_squared()
    }

    /// Gradient of `J` at `u`.
    pub fn gradient(&self, u: &SVector<f64, D>, t_s: f64) -> SVector<f64, D> {
        let (e_p, e_v) = self.residuals(u, t_s);
        e_p * (-t_s * t_s) - e_v * (2.0 * self.c * t_s)
    }

    /// One-step residuals `(e_p, e_v)` for command `u`.
    pub fn residuals(&self, u: &SVector<f64, D>, t_s: f64) -> (SVector<f64, D>, SVector<f64, D>) {
        (self.r - u * (0.5 * t_s * t_s), self.d_v - u * t_s)
    }

    /// Scalar Hessian factor `t_s⁴/2 + 2 C t_s²`.
    pub fn curvature(&self, t_s: f64) -> f64 {
        let t2 = t_s * t_s;
        t2 * (0.5 * t2 + 2.0 * self.c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActiveSet {
    None,
    Accel,
    Speed,
    Both,
}

impl ActiveSet {
    fn from_flags(accel: bool, speed: bool) -> Self {
        match (accel, speed) {
            (false, false) => ActiveSet::None,
            (true, false) => ActiveSet::Accel,
            (false, true) => ActiveSet::Speed,
            (true, true) => ActiveSet::Both,
        }
    }

    pub fn accel(self) -> bool {
        matches!(self, ActiveSet::Accel | ActiveSet::Both)
    }

    pub fn speed(self) -> bool {
        matches!(self, ActiveSet::Speed | ActiveSet::Both)
    }
}

impl fmt::Display for ActiveSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ActiveSet::None => "none",
            ActiveSet::Accel => "accel",
            ActiveSet::Speed => "speed",
            ActiveSet::Both => "both",
        })
    }
}

/// Projection of a point onto the feasible set.
///
/// `mu_accel` and `mu_speed` are multipliers for the distance objective
/// `½‖u − u*‖²`: `(u − u*) + μ₁ u + μ₂ t_s (v_k + t_s u) = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection<const D: usize> {
    pub u: SVector<f64, D>,
    pub active_set: ActiveSet,
    pub mu_accel: f64,
    pub mu_speed: f64,
    /// The alternating-projection fallback produced this point.
    pub fallback: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QpSolution<const D: usize> {
    pub u: SVector<f64, D>,
    pub active_set: ActiveSet,
    /// Multiplier of `‖u‖² ≤ a_max²` in `∇J + 2λ₁u + 2λ₂t_s(v_k + t_s u) = 0`.
    pub lambda_accel: f64,
    /// Multiplier of `‖v_k + t_s u‖² ≤ v_max²`.
    pub lambda_speed: f64,
    pub objective: f64,
    pub e_p: SVector<f64, D>,
    pub e_v: SVector<f64, D>,
    pub fallback: bool,
}

/// The two balls do not intersect: `‖v_k‖ > v_max + a_max t_s`.
#[derive(Debug, Clone, Copy, PartialEq, thiserror::Error)]
#[error("empty feasible set: speed {speed} exceeds v_max + a_max·t_s = {reach}")]
pub struct Infeasible<const D: usize> {
    pub speed: f64,
    pub reach: f64,
    /// Maximum-braking command `−a_max v_k / ‖v_k‖`.
    pub brake: SVector<f64, D>,
}

/// `u*(C) = (r + (2C/t_s) d_v) / (t_s²/2 + 2C)`.
pub fn unconstrained_minimizer<const D: usize>(input: &QpInput<D>, limits: &Limits) -> SVector<f64, D> {
    let t = limits.t_s;
    (input.r + input.d_v * (2.0 * input.c / t)) / (0.5 * t * t + 2.0 * input.c)
}

#[inline]
fn inside(norm: f64, radius: f64) -> bool {
    norm <= radius * (1.0 + CLASSIFY_SLACK)
}

#[inline]
fn on_boundary(norm: f64, radius: f64) -> bool {
    (norm - radius).abs() <= radius * 1e-10
}

/// Euclidean projection of `u_star` onto `{‖u‖ ≤ a_max} ∩ {‖v_k + t_s u‖ ≤ v_max}`.
pub fn project_feasible<const D: usize>(
    u_star: &SVector<f64, D>,
    v_k: &SVector<f64, D>,
    limits: &Limits,
) -> Result<Projection<D>, Infeasible<D>> {
    let t = limits.t_s;
    let a = limits.a_max;
    // Speed ball in acceleration coordinates: centre −v_k/t_s, radius v_max/t_s.
    let centre = -v_k / t;
    let radius = limits.v_max / t;
    let gap = centre.norm();
    if gap > (a + radius) * (1.0 + CLASSIFY_SLACK) {
        let speed = v_k.norm();
        return Err(Infeasible {
            speed,
            reach: limits.v_max + a * t,
            brake: brake_direction(v_k) * a,
        });
    }

    let in_accel = |u: &SVector<f64, D>| inside(u.norm(), a);
    let in_speed = |u: &SVector<f64, D>| inside((u - centre).norm(), radius);

    if in_accel(u_star) && in_speed(u_star) {
        return Ok(Projection {
            u: *u_star,
            active_set: ActiveSet::None,
            mu_accel: 0.0,
            mu_speed: 0.0,
            fallback: false,
        });
    }

    let mut single: Option<Projection<D>> = None;
    let norm_star = u_star.norm();
    if !in_accel(u_star) {
        let p = u_star * (a / norm_star);
        if in_speed(&p) {
            single = Some(Projection {
                u: p,
                active_set: ActiveSet::Accel,
                mu_accel: (norm_star - a) / a,
                mu_speed: 0.0,
                fallback: false,
            });
        }
    }
    let off = u_star - centre;
    let off_norm = off.norm();
    if !in_speed(u_star) {
        let p = centre + off * (radius / off_norm);
        if in_accel(&p) {
            let cand = Projection {
                u: p,
                active_set: ActiveSet::Speed,
                mu_accel: 0.0,
                mu_speed: (off_norm - radius) / (t * t * radius),
                fallback: false,
            };
            single = match single {
                Some(prev) if (prev.u - u_star).norm() <= (cand.u - u_star).norm() => Some(prev),
                _ => Some(cand),
            };
        }
    }
    if let Some(p) = single {
        return Ok(p);
    }

    if let Some(u) = project_on_intersection_sphere(u_star, &centre, a, radius) {
        if inside(u.norm(), a) && inside((u - centre).norm(), radius) {
            let (mu_accel, mu_speed) = multipliers(u_star, &u, v_k, t, true, true);
            return Ok(Projection {
                u,
                active_set: ActiveSet::Both,
                mu_accel,
                mu_speed,
                fallback: false,
            });
        }
    }

    Ok(dykstra(u_star, v_k, &centre, a, radius, t))
}

/// Closest point to `x` on the intersection of the sphere `‖u‖ = ra` and the
/// sphere `‖u − centre‖ = rb`. In the plane this is the nearer of two points.
fn project_on_intersection_sphere<const D: usize>(
    x: &SVector<f64, D>,
    centre: &SVector<f64, D>,
    ra: f64,
    rb: f64,
) -> Option<SVector<f64, D>> {
    let dist = centre.norm();
    if dist <= f64::EPSILON * (ra + rb) {
        return None;
    }
    let axis = centre / dist;
    let along = (dist * dist + ra * ra - rb * rb) / (2.0 * dist);
    let h2 = ra * ra - along * along;
    if h2 < 0.0 {
        return None;
    }
    let mid = axis * along;
    let rel = x - mid;
    let mut perp = rel - axis * rel.dot(&axis);
    let pn = perp.norm();
    if pn <= 1e-15 * (1.0 + rel.norm()) {
        perp = any_perpendicular(&axis);
    } else {
        perp /= pn;
    }
    Some(mid + perp * h2.sqrt())
}

/// Deterministic unit vector orthogonal to the unit vector `axis`.
fn any_perpendicular<const D: usize>(axis: &SVector<f64, D>) -> SVector<f64, D> {
    let k = axis.iamin();
    let mut e = SVector::<f64, D>::zeros();
    e[k] = 1.0;
    let p = e - axis * axis.dot(&e);
    p / p.norm()
}

/// Multipliers for a boundary point `u` from least squares on the stationarity
/// condition restricted to the active constraints.
fn multipliers<const D: usize>(
    u_star: &SVector<f64, D>,
    u: &SVector<f64, D>,
    v_k: &SVector<f64, D>,
    t: f64,
    accel: bool,
    speed: bool,
) -> (f64, f64) {
    let g = u - u_star;
    let n1 = *u;
    let n2 = (v_k + u * t) * t;
    match (accel, speed) {
        (true, true) => {
            let (a11, a12, a22) = (n1.dot(&n1), n1.dot(&n2), n2.dot(&n2));
            let (b1, b2) = (-n1.dot(&g), -n2.dot(&g));
            let det = a11 * a22 - a12 * a12;
            if det.abs() > 1e-14 * a11 * a22 {
                ((b1 * a22 - b2 * a12) / det, (a11 * b2 - a12 * b1) / det)
            } else {
                // Parallel normals: attribute everything to the acceleration ball.
                (b1 / a11, 0.0)
            }
        }
        (true, false) => (-n1.dot(&g) / n1.dot(&n1), 0.0),
        (false, true) => (0.0, -n2.dot(&g) / n2.dot(&n2)),
        (false, false) => (0.0, 0.0),
    }
}

fn dykstra<const D: usize>(
    u_star: &SVector<f64, D>,
    v_k: &SVector<f64, D>,
    centre: &SVector<f64, D>,
    a: f64,
    radius: f64,
    t: f64,
) -> Projection<D> {
    let proj_a = |u: SVector<f64, D>| {
        let n = u.norm();
        if n > a {
            u * (a / n)
        } else {
            u
        }
    };
    let proj_b = |u: SVector<f64, D>| {
        let off = u - centre;
        let n = off.norm();
        if n > radius {
            centre + off * (radius / n)
        } else {
            u
        }
    };
    let mut x = *u_star;
    let mut pa = SVector::<f64, D>::zeros();
    let mut pb = SVector::<f64, D>::zeros();
    for _ in 0..FALLBACK_MAX_ITERS {
        let prev = x;
        let y = proj_b(x + pb);
        pb = x + pb - y;
        x = proj_a(y + pa);
        pa = y + pa - x;
        if (x - prev).norm() <= FALLBACK_TOL * (1.0 + x.norm()) {
            break;
        }
    }
    let accel = on_boundary(x.norm(), a);
    let speed = on_boundary((x - centre).norm(), radius);
    let (mu_accel, mu_speed) = multipliers(u_star, &x, v_k, t, accel, speed);
    Projection {
        u: x,
        active_set: ActiveSet::from_flags(accel, speed),
        mu_accel,
        mu_speed,
        fallback: true,
    }
}

/// Unit vector opposing `v`, or zero at rest.
pub(crate) fn brake_direction<const D: usize>(v: &SVector<f64, D>) -> SVector<f64, D> {
    let n = v.norm();
    if n > 0.0 {
        -v / n
    } else {
        SVector::zeros()
    }
}

/// Minimise the blended cost over the feasible set.
pub fn solve<const D: usize>(input: &QpInput<D>, limits: &Limits) -> Result<QpSolution<D>, Infeasible<D>> {
    let u_star = unconstrained_minimizer(input, limits);
    let proj = project_feasible(&u_star, &input.v_k, limits)?;
    let half_k = 0.5 * input.curvature(limits.t_s);
    let (e_p, e_v) = input.residuals(&proj.u, limits.t_s);
    Ok(QpSolution {
        u: proj.u,
        active_set: proj.active_set,
        lambda_accel: half_k * proj.mu_accel,
        lambda_speed: half_k * proj.mu_speed,
        objective: e_p.norm_squared() + input.c * e_v.norm_squared(),
        e_p,
        e_v,
        fallback: proj.fallback,
    })
}

/// Build the QP from the state and look-ahead target, then solve it.
pub fn solve_step(
    p_k: &Vec2,
    v_k: &Vec2,
    target: &LookaheadTarget,
    c: f64,
    limits: &Limits,
) -> Result<QpSolution<2>, Infeasible<2>> {
    let input = QpInput {
        r: target.p_la - p_k - v_k * limits.t_s,
        d_v: target.v_la - v_k,
        v_k: *v_k,
        c,
    };
    solve(&input, limits)
}
