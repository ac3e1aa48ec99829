//! Seeded closed-loop trials, moving-window metrics and batch aggregation.
//!
//! A trial is a pure function of its [`TrialConfig`]. The path, the freeze
//! schedule and the noise come from three independent streams of the same
//! seed, so QP and pure-pursuit trials with equal seeds see identical
//! references, freezes and disturbances.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{config_err, Error, Result};
use crate::path::{generate_waypoints, ReferencePath, Workspace, DEFAULT_GRID_POINTS};
use crate::plant::{self, sample_noise, PlantState};
use crate::pursuit::{pp_step, PpGains};
use crate::qp::Limits;
use crate::screen::{screen_path, DEFAULT_SCREEN_SAMPLES};
use crate::tracker::{
    assess, brake_command, sigma_buffer, Mode, NoiseBounds, QpTracker, TrackerParams, WeightPolicy,
};
use crate::Vec2;

const FREEZE_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

/// Default number of points on the normalised moving-time grid.
pub const DEFAULT_RESAMPLE_POINTS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Controller {
    Qp,
    Pp,
}

impl Controller {
    pub fn name(self) -> &'static str {
        match self {
            Controller::Qp => "qp",
            Controller::Pp => "pp",
        }
    }
}

impl fmt::Display for Controller {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Controller {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "qp" => Ok(Controller::Qp),
            "pp" => Ok(Controller::Pp),
            other => Err(format!("unknown controller `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RandomStart {
    #[serde(rename = "uniform-random")]
    UniformRandom,
}

/// Freeze onset: a fixed time or uniformly random within the trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FreezeStart {
    At(f64),
    Random(RandomStart),
}

impl Default for FreezeStart {
    fn default() -> Self {
        FreezeStart::Random(RandomStart::UniformRandom)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialConfig {
    pub seed: u64,
    pub controller: Controller,
    /// Simulated time (s).
    pub duration: f64,
    /// Duration of the reference time law (s).
    pub path_duration: f64,
    pub grid_points: usize,
    pub freeze_duration: f64,
    pub freeze_start: FreezeStart,
    /// Count braking samples of a freeze as part of the freeze window.
    pub mask_braking: bool,
    /// Feed the offline screen's speed caps into the look-ahead.
    pub speed_caps: bool,
    pub screen_samples: usize,
    pub workspace: Workspace,
    pub limits: Limits,
    pub noise: NoiseBounds,
    pub policy: WeightPolicy,
    pub pp_gains: PpGains,
}

impl Default for TrialConfig {
    fn default() -> Self {
        TrialConfig {
            seed: 0,
            controller: Controller::Qp,
            duration: 10.0,
            path_duration: 10.0,
            grid_points: DEFAULT_GRID_POINTS,
            freeze_duration: 1.0,
            freeze_start: FreezeStart::default(),
            mask_braking: true,
            speed_caps: false,
            screen_samples: DEFAULT_SCREEN_SAMPLES,
            workspace: Workspace::default(),
            limits: Limits::default(),
            noise: NoiseBounds::default(),
            policy: WeightPolicy::default(),
            pp_gains: PpGains::default(),
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        self.workspace.validate()?;
        self.limits.validate()?;
        self.noise.validate(&self.limits)?;
        self.policy.validate()?;
        self.pp_gains.validate()?;
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(config_err("experiment.duration must be positive"));
        }
        if !(self.path_duration > 0.0 && self.path_duration.is_finite()) {
            return Err(config_err("experiment.path_duration must be positive"));
        }
        if self.grid_points < 2 {
            return Err(config_err("experiment.grid_points must be at least 2"));
        }
        if self.screen_samples < 2 {
            return Err(config_err("experiment.screen_samples must be at least 2"));
        }
        if !(self.freeze_duration >= 0.0 && self.freeze_duration <= self.duration) {
            return Err(config_err("freeze window must fit inside the trial: 0 <= freeze_duration <= duration"));
        }
        if let FreezeStart::At(start) = self.freeze_start {
            if !(start >= 0.0 && start + self.freeze_duration <= self.duration) {
                return Err(config_err("freeze window must fit inside the trial: freeze_start + freeze_duration <= duration"));
            }
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.duration / self.limits.t_s).round() as usize
    }

    /// Freeze window as `[start, end)` sample indices; empty when there is no freeze.
    pub fn freeze_window(&self) -> std::ops::Range<usize> {
        let n = self.steps();
        let len = ((self.freeze_duration / self.limits.t_s).round() as usize).min(n);
        if len == 0 {
            return 0..0;
        }
        let start = match self.freeze_start {
            FreezeStart::At(t) => ((t / self.limits.t_s).round() as usize).min(n - len),
            FreezeStart::Random(_) => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(FREEZE_STREAM);
                rng.random_range(0..=n - len)
            }
        };
        start..start + len
    }

    pub fn tracker_params(&self) -> TrackerParams {
        TrackerParams {
            limits: self.limits,
            noise: self.noise,
            policy: self.policy,
        }
    }

    /// Reference path for this trial's seed.
    pub fn build_path(&self) -> Result<ReferencePath> {
        let waypoints = generate_waypoints(self.seed, &self.workspace)?;
        ReferencePath::fit(&waypoints, self.path_duration, self.grid_points)
    }
}

/// One logged sample.
///
/// `p_la` and `v_la` are the look-ahead target chosen at the previous sample,
/// i.e. the point this sample was commanded to land on. The first row has no
/// earlier command and refers to its own state. `delta` is evaluated at this
/// sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    pub p: Vec2,
    pub v: Vec2,
    pub u: Vec2,
    pub p_la: Vec2,
    pub v_la: Vec2,
    pub delta: f64,
    pub c: f64,
    pub mode: Mode,
    pub moving: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub seed: u64,
    pub controller: Controller,
    pub trace: Vec<TraceRow>,
    pub rmse_p: f64,
    pub rmse_v: f64,
    pub mean_delta: f64,
    /// Samples whose pre-limit demand exceeded `a_max`: the PD norm for
    /// pure pursuit, an active acceleration ball for the QP.
    pub saturated_samples: usize,
}

impl TrialResult {
    /// Rebuild a result from a stored trace, recomputing its metrics.
    pub fn from_trace(seed: u64, controller: Controller, trace: Vec<TraceRow>) -> Result<Self> {
        let mask = moving_mask(&trace);
        let (rmse_p, rmse_v) = rmse(&trace, &mask)?;
        let mean_delta = mean_margin(&trace, &mask)?;
        Ok(TrialResult {
            seed,
            controller,
            trace,
            rmse_p,
            rmse_v,
            mean_delta,
            saturated_samples: 0,
        })
    }

    pub fn moving_mask(&self) -> Vec<bool> {
        moving_mask(&self.trace)
    }

    /// Times of the moving samples with the frozen stretch removed.
    pub fn moving_time(&self) -> Vec<f64> {
        let dt = if self.trace.len() > 1 {
            self.trace[1].t - self.trace[0].t
        } else {
            0.0
        };
        self.trace
            .iter()
            .filter(|r| r.moving)
            .enumerate()
            .map(|(i, _)| i as f64 * dt)
            .collect()
    }
}

pub fn moving_mask(trace: &[TraceRow]) -> Vec<bool> {
    trace.iter().map(|r| r.moving).collect()
}

/// Root mean square of `‖p − p_LA‖` and `‖v − v_LA‖` over masked samples.
pub fn rmse(trace: &[TraceRow], mask: &[bool]) -> Result<(f64, f64)> {
    let (mut sp, mut sv, mut n) = (0.0, 0.0, 0usize);
    for (row, _) in trace.iter().zip(mask).filter(|(_, &m)| m) {
        sp += (row.p - row.p_la).norm_squared();
        sv += (row.v - row.v_la).norm_squared();
        n += 1;
    }
    if n == 0 {
        return Err(Error::UndefinedMetric);
    }
    Ok(((sp / n as f64).sqrt(), (sv / n as f64).sqrt()))
}

/// Mean reachability margin over masked samples.
pub fn mean_margin(trace: &[TraceRow], mask: &[bool]) -> Result<f64> {
    let (sum, n) = trace
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, n), (row, _)| (s + row.delta, n + 1));
    if n == 0 {
        return Err(Error::UndefinedMetric);
    }
    Ok(sum / n as f64)
}

/// Brake-to-rest command during a freeze.
fn freeze_command(v: &Vec2, limits: &Limits) -> (Vec2, Mode) {
    if *v == Vec2::zeros() {
        (Vec2::zeros(), Mode::Frozen)
    } else {
        (brake_command(v, limits), Mode::Braking)
    }
}

pub fn run_trial(cfg: &TrialConfig) -> Result<TrialResult> {
    cfg.validate()?;
    let path = cfg.build_path()?;
    run_trial_on(cfg, &path)
}

/// Simulate `cfg` on a given path (the seed still drives freeze and noise).
pub fn run_trial_on(cfg: &TrialConfig, path: &ReferencePath) -> Result<TrialResult> {
    cfg.validate()?;
    let limits = cfg.limits;
    let t_s = limits.t_s;
    let sigma = sigma_buffer(&cfg.noise, t_s).sigma;
    let caps = if cfg.speed_caps {
        let report = screen_path(path, &limits, &cfg.noise, cfg.screen_samples)?;
        Some(report.speed_caps(path, &limits))
    } else {
        None
    };

    let mut tracker = QpTracker::new(cfg.tracker_params())?;
    if let Some(caps) = &caps {
        tracker = tracker.with_speed_caps(caps.clone());
    }
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    noise_rng.set_stream(NOISE_STREAM);

    let n = cfg.steps();
    let window = cfg.freeze_window();
    let mut state = PlantState::new(path.position(0.0), Vec2::zeros());
    let mut trace = Vec::with_capacity(n);
    let mut saturated = 0;
    let mut aimed: Option<(Vec2, Vec2)> = None;

    for k in 0..n {
        let freeze = window.contains(&k);
        state.frozen = freeze;
        let (u, delta, c, mode, p_la, v_la) = if freeze {
            let (u, mode) = freeze_command(&state.v, &limits);
            let diag = assess(path, &state.p, &state.v, &limits, sigma, caps.as_ref());
            let c = match cfg.controller {
                Controller::Qp => tracker.weight(),
                Controller::Pp => 0.0,
            };
            (u, diag.delta, c, mode, diag.target.p_la, diag.target.v_la)
        } else {
            match cfg.controller {
                Controller::Qp => {
                    let c = tracker.weight();
                    let d = tracker.step(&state, path, false);
                    if d.active_set.is_some_and(|a| a.accel()) || d.infeasible {
                        saturated += 1;
                    }
                    let target = d.target.expect("tracking decisions carry a target");
                    (d.u, d.delta, c, d.mode, target.p_la, target.v_la)
                }
                Controller::Pp => {
                    let reach = assess(path, &state.p, &state.v, &limits, sigma, caps.as_ref());
                    let cmd = pp_step(&state, &reach.target, &cfg.pp_gains, &limits);
                    if cmd.u_raw_norm > limits.a_max {
                        saturated += 1;
                    }
                    (cmd.u, reach.delta, 0.0, Mode::Tracking, reach.target.p_la, reach.target.v_la)
                }
            }
        };
        let moving = !(freeze && (cfg.mask_braking || mode == Mode::Frozen));
        let (aim_p, aim_v) = aimed.unwrap_or((state.p, state.v));
        trace.push(TraceRow {
            t: k as f64 * t_s,
            p: state.p,
            v: state.v,
            u,
            p_la: aim_p,
            v_la: aim_v,
            delta,
            c,
            mode,
            moving,
        });
        aimed = Some((p_la, v_la));
        let noise = sample_noise(&mut noise_rng, &cfg.noise);
        state = plant::step(&state, &u, &noise, t_s);
    }

    let mut result = TrialResult::from_trace(cfg.seed, cfg.controller, trace)?;
    result.saturated_samples = saturated;
    Ok(result)
}

/// Run `trials` consecutive seeds starting at `base.seed` for each controller.
///
/// Results are ordered by trial index, then by controller order, regardless
/// of `parallel`.
pub fn run_batch(
    base: &TrialConfig,
    trials: usize,
    controllers: &[Controller],
    parallel: bool,
) -> Result<Vec<TrialResult>> {
    base.validate()?;
    let jobs: Vec<TrialConfig> = (0..trials as u64)
        .flat_map(|i| {
            controllers.iter().map(move |&controller| TrialConfig {
                seed: base.seed.wrapping_add(i),
                controller,
                ..base.clone()
            })
        })
        .collect();
    if parallel {
        jobs.par_iter().map(run_trial).collect()
    } else {
        jobs.iter().map(run_trial).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation; zero spread for a single value.
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over the data range; `ceil(sqrt(n))` bins, at most 20.
    pub fn of(values: &[f64]) -> Histogram {
        let bins = ((values.len() as f64).sqrt().ceil() as usize).clamp(1, 20);
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let width = (hi - lo) / bins as f64;
        let edges = (0..=bins).map(|i| lo + width * i as f64).collect();
        let mut counts = vec![0; bins];
        for &v in values {
            let i = (((v - lo) / width) as usize).min(bins - 1);
            counts[i] += 1;
        }
        Histogram { edges, counts }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerSummary {
    pub controller: Controller,
    pub runs: usize,
    pub rmse_p: Stat,
    pub rmse_v: Stat,
    pub mean_delta: Stat,
    /// Per-run mean margin, in run order.
    pub run_mean_deltas: Vec<f64>,
    /// Mean margin across runs on the normalised moving-time grid.
    pub delta_curve: Vec<f64>,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub grid_points: usize,
    pub controllers: Vec<ControllerSummary>,
}

impl Summary {
    pub fn get(&self, controller: Controller) -> Option<&ControllerSummary> {
        self.controllers.iter().find(|c| c.controller == controller)
    }
}

/// Linear resampling of the moving-sample margin series onto `points`
/// uniformly spaced normalised times in `[0, 1]`.
pub fn resample_moving_delta(trace: &[TraceRow], points: usize) -> Vec<f64> {
    let series: Vec<f64> = trace.iter().filter(|r| r.moving).map(|r| r.delta).collect();
    resample(&series, points)
}

pub fn resample(series: &[f64], points: usize) -> Vec<f64> {
    match (series.len(), points) {
        (0, _) | (_, 0) => Vec::new(),
        (1, _) => vec![series[0]; points],
        (_, 1) => vec![series[0]],
        (m, _) => (0..points)
            .map(|j| {
                if j + 1 == points {
                    return series[m - 1];
                }
                let x = j as f64 / (points - 1) as f64 * (m - 1) as f64;
                let i = (x.floor() as usize).min(m - 2);
                let w = x - i as f64;
                series[i] * (1.0 - w) + series[i + 1] * w
            })
            .collect(),
    }
}

/// Per-controller statistics, margin curves and histograms.
pub fn aggregate(results: &[TrialResult], grid_points: usize) -> Result<Summary> {
    if results.is_empty() {
        return Err(config_err("nothing to aggregate"));
    }
    let mut controllers: Vec<Controller> = results.iter().map(|r| r.controller).collect();
    controllers.sort();
    controllers.dedup();

    let summaries = controllers
        .into_iter()
        .map(|controller| {
            let runs: Vec<&TrialResult> = results.iter().filter(|r| r.controller == controller).collect();
            let pick = |f: fn(&TrialResult) -> f64| runs.iter().map(|r| f(r)).collect::<Vec<_>>();
            let run_mean_deltas = pick(|r| r.mean_delta);
            let mut delta_curve = vec![0.0; grid_points];
            for r in &runs {
                for (acc, v) in delta_curve.iter_mut().zip(resample_moving_delta(&r.trace, grid_points)) {
                    *acc += v;
                }
            }
            for v in &mut delta_curve {
                *v /= runs.len() as f64;
            }
            ControllerSummary {
                controller,
                runs: runs.len(),
                rmse_p: Stat::of(&pick(|r| r.rmse_p)),
                rmse_v: Stat::of(&pick(|r| r.rmse_v)),
                mean_delta: Stat::of(&run_mean_deltas),
                histogram: Histogram::of(&run_mean_deltas),
                run_mean_deltas,
                delta_curve,
            }
        })
        .collect();
    Ok(Summary {
        grid_points,
        controllers: summaries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(p: Vec2, p_la: Vec2, delta: f64, moving: bool) -> TraceRow {
        TraceRow {
            t: 0.0,
            p,
            v: Vec2::zeros(),
            u: Vec2::zeros(),
            p_la,
            v_la: Vec2::zeros(),
            delta,
            c: 0.0,
            mode: Mode::Tracking,
            moving,
        }
    }

    #[test]
    fn rmse_examples() {
        let e = Vec2::new(0.3, -0.4);
        let trace: Vec<_> = (0..5).map(|_| row(e, Vec2::zeros(), 0.0, true)).collect();
        let (rp, rv) = rmse(&trace, &moving_mask(&trace)).unwrap();
        assert!((rp - 0.5).abs() < 1e-15);
        assert_eq!(rv, 0.0);

        let zero = vec![row(Vec2::zeros(), Vec2::zeros(), 0.0, true)];
        assert_eq!(rmse(&zero, &[true]).unwrap(), (0.0, 0.0));

        let two = vec![
            row(Vec2::zeros(), Vec2::zeros(), 0.0, true),
            row(Vec2::new(3.0, 4.0), Vec2::zeros(), 0.0, true),
        ];
        let (rp, _) = rmse(&two, &[true, true]).unwrap();
        assert!((rp - 5.0 / 2f64.sqrt()).abs() < 1e-12);
        assert!((rp - 3.5355).abs() < 1e-4);
    }

    #[test]
    fn empty_mask_is_undefined() {
        let trace = vec![row(Vec2::zeros(), Vec2::zeros(), 0.0, false)];
        assert!(matches!(rmse(&trace, &[false]), Err(Error::UndefinedMetric)));
        assert!(matches!(mean_margin(&trace, &[false]), Err(Error::UndefinedMetric)));
    }

    #[test]
    fn mean_margin_examples() {
        let all: Vec<_> = (0..4).map(|_| row(Vec2::zeros(), Vec2::zeros(), -1.0, true)).collect();
        assert_eq!(mean_margin(&all, &moving_mask(&all)).unwrap(), -1.0);
        let mut sym: Vec<_> = [-2.0, 0.0, 2.0]
            .iter()
            .map(|&d| row(Vec2::zeros(), Vec2::zeros(), d, true))
            .collect();
        assert_eq!(mean_margin(&sym, &moving_mask(&sym)).unwrap(), 0.0);
        sym.push(row(Vec2::zeros(), Vec2::zeros(), 1e6, false));
        assert_eq!(mean_margin(&sym, &moving_mask(&sym)).unwrap(), 0.0);
    }

    #[test]
    fn resample_keeps_endpoints() {
        let series = [1.0, 3.0, -2.0, 5.0];
        let out = resample(&series, 7);
        assert_eq!(out[0], 1.0);
        assert_eq!(out[6], 5.0);
        assert_eq!(out[2], 3.0);
        assert_eq!(resample(&[2.0], 3), vec![2.0; 3]);
    }

    #[test]
    fn stats_and_histogram() {
        let s = Stat::of(&[-1.0, -3.0]);
        assert_eq!(s.mean, -2.0);
        assert_eq!(Stat::of(&[4.0]).std, 0.0);
        let h = Histogram::of(&[0.5]);
        assert_eq!(h.counts, vec![1]);
        let h = Histogram::of(&[0.0, 1.0, 2.0, 3.0]);
        assert_eq!(h.counts.iter().sum::<usize>(), 4);
    }

    #[test]
    fn freeze_window_validation() {
        let cfg = TrialConfig {
            freeze_start: FreezeStart::At(9.5),
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = TrialConfig {
            freeze_start: FreezeStart::At(2.0),
            ..Default::default()
        };
        assert_eq!(cfg.freeze_window(), 200..300);
        let none = TrialConfig {
            freeze_duration: 0.0,
            ..Default::default()
        };
        assert!(none.freeze_window().is_empty());
    }

    #[test]
    fn random_freeze_fits() {
        for seed in 0..50 {
            let cfg = TrialConfig { seed, ..Default::default() };
            let w = cfg.freeze_window();
            assert_eq!(w.len(), 100);
            assert!(w.end <= cfg.steps());
        }
    }

    #[test]
    fn freeze_start_serde() {
        let r: FreezeStart = serde_json::from_str("\"uniform-random\"").unwrap();
        assert_eq!(r, FreezeStart::default());
        let a: FreezeStart = serde_json::from_str("2.5").unwrap();
        assert_eq!(a, FreezeStart::At(2.5));
        assert!(serde_json::from_str::<FreezeStart>("\"later\"").is_err());
    }
}
