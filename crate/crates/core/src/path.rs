//! Reference paths: random waypoints, chord-length timed natural cubic splines,
//! closest-point projection and one-step look-ahead.
//!
//! The spline is parameterised by time over `[0, T]`. Velocities and
//! accelerations are time derivatives, so the look-ahead shift of one sample
//! period is a plain time shift along the reference time law.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::Vec2;

/// Default number of dense-grid samples per path.
pub const DEFAULT_GRID_POINTS: usize = 2000;

/// Parameter tolerance for the golden-section refinement of the closest point.
pub const CLOSEST_POINT_TOL: f64 = 1e-9;

/// Random stream used for waypoint generation.
pub(crate) const PATH_STREAM: u64 = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Workspace {
    /// Half-extent along x (m).
    pub lx: f64,
    /// Half-extent along y (m).
    pub ly: f64,
    /// Number of random waypoints after the origin.
    pub n_wp: usize,
}

impl Default for Workspace {
    fn default() -> Self {
        Workspace {
            lx: 0.5,
            ly: 0.5,
            n_wp: 6,
        }
    }
}

impl Workspace {
    pub fn validate(&self) -> Result<()> {
        if !(self.lx > 0.0 && self.lx.is_finite()) {
            return Err(config_err("workspace.lx must be positive"));
        }
        if !(self.ly > 0.0 && self.ly.is_finite()) {
            return Err(config_err("workspace.ly must be positive"));
        }
        if self.n_wp < 2 {
            return Err(config_err("workspace.n_wp must be at least 2"));
        }
        Ok(())
    }

    /// Waypoint for direction angle `theta`.
    pub fn point_at(&self, theta: f64) -> Vec2 {
        Vec2::new(self.lx * theta.cos(), self.ly * theta.sin())
    }
}

/// Origin followed by `n_wp` points at uniformly random direction angles.
pub fn generate_waypoints(seed: u64, ws: &Workspace) -> Result<Vec<Vec2>> {
    ws.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(PATH_STREAM);
    let mut points = Vec::with_capacity(ws.n_wp + 1);
    points.push(Vec2::zeros());
    for _ in 0..ws.n_wp {
        let theta = rng.random::<f64>() * TAU;
        points.push(ws.point_at(theta));
    }
    Ok(points)
}

/// Segment durations proportional to chord length, summing to `total_time`.
pub fn chord_durations(waypoints: &[Vec2], total_time: f64) -> Result<Vec<f64>> {
    if waypoints.len() < 2 {
        return Err(config_err("a path needs at least two waypoints"));
    }
    if !(total_time > 0.0 && total_time.is_finite()) {
        return Err(config_err("path duration must be positive"));
    }
    let chords: Vec<f64> = waypoints.windows(2).map(|w| (w[1] - w[0]).norm()).collect();
    let scale = waypoints.iter().map(|w| w.amax()).fold(1.0, f64::max);
    if let Some(index) = chords.iter().position(|&d| d.is_nan() || d <= 1e-12 * scale) {
        return Err(Error::DegenerateSegment { index });
    }
    let total: f64 = chords.iter().sum();
    Ok(chords.iter().map(|d| total_time * d / total).collect())
}

/// Position, velocity and acceleration of the reference at one time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefSample {
    pub t: f64,
    pub p: Vec2,
    pub v: Vec2,
    pub a: Vec2,
    /// The requested time fell outside `[0, T]` and was clamped.
    pub clamped: bool,
}

/// Cubic `a + b τ + c τ² + d τ³` on one segment, vector valued.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Cubic {
    a: Vec2,
    b: Vec2,
    c: Vec2,
    d: Vec2,
}

impl Cubic {
    #[inline]
    fn position(&self, tau: f64) -> Vec2 {
        self.a + (self.b + (self.c + self.d * tau) * tau) * tau
    }

    #[inline]
    fn velocity(&self, tau: f64) -> Vec2 {
        self.b + (self.c * 2.0 + self.d * (3.0 * tau)) * tau
    }

    #[inline]
    fn acceleration(&self, tau: f64) -> Vec2 {
        self.c * 2.0 + self.d * (6.0 * tau)
    }
}

/// One-step look-ahead target on the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LookaheadTarget {
    /// Parameter of the closest point.
    pub s_c: f64,
    /// Parameter of the look-ahead point.
    pub s_la: f64,
    pub p_la: Vec2,
    pub v_la: Vec2,
}

/// Fixed C² reference path. Immutable once built.
#[derive(Debug, Clone)]
pub struct ReferencePath {
    waypoints: Vec<Vec2>,
    break_times: Vec<f64>,
    segments: Vec<Cubic>,
    grid: Vec<RefSample>,
    arc_table: Vec<f64>,
    max_cell: f64,
}

/// Fit with the default dense-grid resolution.
pub fn fit_spline(waypoints: &[Vec2], total_time: f64) -> Result<ReferencePath> {
    ReferencePath::fit(waypoints, total_time, DEFAULT_GRID_POINTS)
}

impl ReferencePath {
    /// Natural cubic spline through `waypoints` with chord-length break times.
    pub fn fit(waypoints: &[Vec2], total_time: f64, grid_points: usize) -> Result<Self> {
        if grid_points < 2 {
            return Err(config_err("dense grid needs at least two points"));
        }
        let durations = chord_durations(waypoints, total_time)?;
        let mut break_times = Vec::with_capacity(waypoints.len());
        break_times.push(0.0);
        let mut acc = 0.0;
        for d in &durations {
            acc += d;
            break_times.push(acc);
        }
        *break_times.last_mut().unwrap() = total_time;

        let segments = natural_spline(waypoints, &break_times);
        let mut path = ReferencePath {
            waypoints: waypoints.to_vec(),
            break_times,
            segments,
            grid: Vec::new(),
            arc_table: Vec::new(),
            max_cell: 0.0,
        };
        path.build_grid(grid_points);
        Ok(path)
    }

    fn build_grid(&mut self, n: usize) {
        let total = self.total_time();
        self.grid = (0..n)
            .map(|j| {
                let t = if j + 1 == n {
                    total
                } else {
                    total * j as f64 / (n - 1) as f64
                };
                self.sample(t)
            })
            .collect();
        self.arc_table = Vec::with_capacity(n);
        self.arc_table.push(0.0);
        let mut length = 0.0;
        let mut max_cell: f64 = 0.0;
        for w in self.grid.windows(2) {
            let cell = (w[1].p - w[0].p).norm();
            max_cell = max_cell.max(cell);
            length += cell;
            self.arc_table.push(length);
        }
        self.max_cell = max_cell;
    }

    pub fn waypoints(&self) -> &[Vec2] {
        &self.waypoints
    }

    pub fn break_times(&self) -> &[f64] {
        &self.break_times
    }

    pub fn total_time(&self) -> f64 {
        *self.break_times.last().unwrap()
    }

    pub fn segment_count(&self) -> usize {
        self.segments.len()
    }

    /// Dense samples `(t, p, v, a)` on a uniform time grid.
    pub fn dense_grid(&self) -> &[RefSample] {
        &self.grid
    }

    /// Cumulative arc length at each dense-grid sample.
    pub fn arc_table(&self) -> &[f64] {
        &self.arc_table
    }

    pub fn length(&self) -> f64 {
        *self.arc_table.last().unwrap()
    }

    /// Arc length travelled up to time `t`, interpolated on the dense grid.
    pub fn arc_length_at(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, self.total_time());
        let j = self.grid.partition_point(|g| g.t <= t).clamp(1, self.grid.len() - 1);
        let (g0, g1) = (&self.grid[j - 1], &self.grid[j]);
        let w = if g1.t > g0.t { (t - g0.t) / (g1.t - g0.t) } else { 0.0 };
        self.arc_table[j - 1] + w * (self.arc_table[j] - self.arc_table[j - 1])
    }

    #[inline]
    fn locate(&self, t: f64) -> (usize, f64) {
        let last = self.segments.len() - 1;
        let i = self
            .break_times
            .partition_point(|&b| b <= t)
            .saturating_sub(1)
            .min(last);
        (i, t - self.break_times[i])
    }

    /// Exact polynomial evaluation at `t`, clamped to `[0, T]`.
    pub fn sample(&self, t: f64) -> RefSample {
        let total = self.total_time();
        let clamped = !(0.0..=total).contains(&t);
        let t = t.clamp(0.0, total);
        let (i, tau) = self.locate(t);
        let seg = &self.segments[i];
        RefSample {
            t,
            p: seg.position(tau),
            v: seg.velocity(tau),
            a: seg.acceleration(tau),
            clamped,
        }
    }

    #[inline]
    pub fn position(&self, t: f64) -> Vec2 {
        let (i, tau) = self.locate(t.clamp(0.0, self.total_time()));
        self.segments[i].position(tau)
    }

    #[inline]
    pub fn velocity(&self, t: f64) -> Vec2 {
        let (i, tau) = self.locate(t.clamp(0.0, self.total_time()));
        self.segments[i].velocity(tau)
    }

    /// Third derivative; piecewise constant.
    pub fn jerk(&self, t: f64) -> Vec2 {
        let (i, _) = self.locate(t.clamp(0.0, self.total_time()));
        self.segments[i].d * 6.0
    }

    /// Largest jump in value, first and second derivative over all interior breakpoints.
    pub fn continuity_residual(&self) -> [f64; 3] {
        let mut worst = [0.0f64; 3];
        for i in 1..self.segments.len() {
            let h = self.break_times[i] - self.break_times[i - 1];
            let (left, right) = (&self.segments[i - 1], &self.segments[i]);
            let jumps = [
                (left.position(h) - right.position(0.0)).amax(),
                (left.velocity(h) - right.velocity(0.0)).amax(),
                (left.acceleration(h) - right.acceleration(0.0)).amax(),
            ];
            for (w, j) in worst.iter_mut().zip(jumps) {
                *w = w.max(j);
            }
        }
        worst
    }

    /// Parameter of the point on the path closest to `query`.
    ///
    /// Every coarse local minimum that could still hold the global minimum is
    /// refined by golden-section search; ties go to the smallest parameter.
    pub fn closest_point(&self, query: &Vec2) -> f64 {
        let n = self.grid.len();
        let dist2 = |j: usize| (self.grid[j].p - query).norm_squared();

        let mut best_coarse = f64::INFINITY;
        for j in 0..n {
            best_coarse = best_coarse.min(dist2(j));
        }
        let reach = best_coarse.sqrt() + 2.0 * self.max_cell;
        let reach2 = reach * reach;

        let f = |t: f64| (self.position(t) - query).norm_squared();
        let mut best = (f64::INFINITY, 0.0);
        let mut prev = f64::INFINITY;
        let mut cur = dist2(0);
        for j in 0..n {
            let next = if j + 1 < n { dist2(j + 1) } else { f64::INFINITY };
            if cur <= reach2 && cur <= prev && cur <= next {
                let lo = self.grid[j.saturating_sub(1)].t;
                let hi = self.grid[(j + 1).min(n - 1)].t;
                let (t, ft) = golden_section_min(&f, lo, hi, CLOSEST_POINT_TOL);
                let cand = if cur < ft { (cur, self.grid[j].t) } else { (ft, t) };
                if cand.0 < best.0 || (cand.0 == best.0 && cand.1 < best.1) {
                    best = cand;
                }
            }
            prev = cur;
            cur = next;
        }
        best.1
    }

    /// Look-ahead pair one sample period beyond `s_c`, clamped at the path end.
    pub fn lookahead(&self, s_c: f64, t_s: f64) -> LookaheadTarget {
        self.lookahead_capped(s_c, t_s, None)
    }

    /// Look-ahead with an optional local speed cap: when the reference speed at
    /// `s_c` exceeds `cap`, the shift is shortened to cover `cap · t_s` and the
    /// target velocity is scaled down to the cap.
    pub fn lookahead_capped(&self, s_c: f64, t_s: f64, cap: Option<f64>) -> LookaheadTarget {
        let total = self.total_time();
        let s_c = s_c.clamp(0.0, total);
        let mut shift = t_s;
        let mut scale = 1.0;
        if let Some(cap) = cap {
            let speed = self.velocity(s_c).norm();
            if speed > cap && speed > 0.0 {
                scale = cap / speed;
                shift *= scale;
            }
        }
        let s_la = (s_c + shift).min(total);
        let (i, tau) = self.locate(s_la);
        let seg = &self.segments[i];
        LookaheadTarget {
            s_c,
            s_la,
            p_la: seg.position(tau),
            v_la: seg.velocity(tau) * scale,
        }
    }
}

/// Natural cubic spline (zero end curvature) through `points` at `knots`.
fn natural_spline(points: &[Vec2], knots: &[f64]) -> Vec<Cubic> {
    let n = points.len() - 1;
    let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
    let slope: Vec<Vec2> = (0..n).map(|i| (points[i + 1] - points[i]) / h[i]).collect();

    // Second derivatives at the knots, M_0 = M_n = 0; Thomas algorithm on the interior.
    let mut m = vec![Vec2::zeros(); n + 1];
    if n >= 2 {
        let interior = n - 1;
        let mut diag = vec![0.0; interior];
        let mut upper = vec![0.0; interior];
        let mut rhs = vec![Vec2::zeros(); interior];
        for k in 0..interior {
            let i = k + 1;
            diag[k] = 2.0 * (h[i - 1] + h[i]);
            upper[k] = h[i];
            rhs[k] = (slope[i] - slope[i - 1]) * 6.0;
        }
        for k in 1..interior {
            let w = h[k] / diag[k - 1];
            diag[k] -= w * upper[k - 1];
            let prev = rhs[k - 1];
            rhs[k] -= prev * w;
        }
        m[interior] = rhs[interior - 1] / diag[interior - 1];
        for k in (0..interior - 1).rev() {
            m[k + 1] = (rhs[k] - m[k + 2] * upper[k]) / diag[k];
        }
    }

    (0..n)
        .map(|i| Cubic {
            a: points[i],
            b: slope[i] - (m[i] * 2.0 + m[i + 1]) * (h[i] / 6.0),
            c: m[i] * 0.5,
            d: (m[i + 1] - m[i]) / (6.0 * h[i]),
        })
        .collect()
}

/// Golden-section search for the minimum of `f` on `[a, b]`.
///
/// Returns the best evaluated `(x, f(x))`, including the interval ends.
pub fn golden_section_min(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let (mut a, mut b) = (a, b);
    let fa0 = (a, f(a));
    let fb0 = (b, f(b));
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    let mut best = if fc <= fd { (c, fc) } else { (d, fd) };
    for cand in [fa0, fb0] {
        if cand.1 < best.1 || (cand.1 == best.1 && cand.0 < best.0) {
            best = cand;
        }
    }
    best
}
