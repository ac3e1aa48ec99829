//! Offline one-step reachability screen of a fixed path.
//!
//! Every sample puts the state exactly on the reference and evaluates the same
//! margin the online tracker uses; consecutive samples with a positive margin
//! are merged into unsafe intervals. The grid stops one sampling period before
//! the end, where the look-ahead would be clamped to a terminal target the
//! one-step model cannot describe.

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};
use crate::path::ReferencePath;
use crate::qp::Limits;
use crate::tracker::{assess, sigma_buffer, NoiseBounds};

pub const DEFAULT_SCREEN_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreenSample {
    pub s: f64,
    pub u_req: f64,
    pub delta: f64,
}

impl ScreenSample {
    pub fn is_unsafe(&self) -> bool {
        self.delta > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreenReport {
    pub samples: Vec<ScreenSample>,
    /// Maximal runs of unsafe samples as `[s_start, s_end]`.
    pub unsafe_intervals: Vec<[f64; 2]>,
    pub sigma_used: f64,
    pub passed: bool,
}

/// Scan `n_samples` parameter-uniform points of `path`.
pub fn screen_path(
    path: &ReferencePath,
    limits: &Limits,
    nb: &NoiseBounds,
    n_samples: usize,
) -> Result<ScreenReport> {
    limits.validate()?;
    if n_samples < 2 {
        return Err(config_err("screen needs at least two samples"));
    }
    nb.validate(limits)?;
    let sigma = sigma_buffer(nb, limits.t_s).sigma;
    let last = (path.total_time() - limits.t_s).max(0.0);

    let samples: Vec<ScreenSample> = (0..n_samples)
        .map(|j| {
            let s = if j + 1 == n_samples {
                last
            } else {
                last * j as f64 / (n_samples - 1) as f64
            };
            let reference = path.sample(s);
            let reach = assess(path, &reference.p, &reference.v, limits, sigma, None);
            ScreenSample {
                s,
                u_req: reach.u_req,
                delta: reach.delta,
            }
        })
        .collect();

    let unsafe_intervals = merge_unsafe(&samples);
    Ok(ScreenReport {
        passed: unsafe_intervals.is_empty(),
        samples,
        unsafe_intervals,
        sigma_used: sigma,
    })
}

fn merge_unsafe(samples: &[ScreenSample]) -> Vec<[f64; 2]> {
    let mut out = Vec::new();
    let mut open: Option<[f64; 2]> = None;
    for sample in samples {
        match (&mut open, sample.is_unsafe()) {
            (Some(iv), true) => iv[1] = sample.s,
            (None, true) => open = Some([sample.s, sample.s]),
            (Some(_), false) => out.push(open.take().unwrap()),
            (None, false) => {}
        }
    }
    out.extend(open);
    out
}

impl ScreenReport {
    /// Local speed caps for the unsafe intervals.
    ///
    /// On the reference, `u_req` scales with the square of the traversal
    /// speed, so each flagged sample is capped at `‖v_ref‖ · sqrt((a_max − σ) / u_req)`;
    /// an interval takes the smallest cap among its samples.
    pub fn speed_caps(&self, path: &ReferencePath, limits: &Limits) -> SpeedCaps {
        let budget = limits.a_max - self.sigma_used;
        let intervals = self
            .unsafe_intervals
            .iter()
            .map(|&[start, end]| {
                let cap = self
                    .samples
                    .iter()
                    .filter(|s| s.s >= start && s.s <= end && s.u_req > 0.0)
                    .map(|s| path.velocity(s.s).norm() * (budget / s.u_req).sqrt())
                    .fold(f64::INFINITY, f64::min);
                SpeedCap { start, end, cap }
            })
            .collect();
        SpeedCaps { intervals }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedCap {
    pub start: f64,
    pub end: f64,
    pub cap: f64,
}

/// Piecewise speed caps over path parameter intervals.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SpeedCaps {
    pub intervals: Vec<SpeedCap>,
}

impl SpeedCaps {
    pub fn cap_at(&self, s: f64) -> Option<f64> {
        self.intervals
            .iter()
            .find(|iv| s >= iv.start && s <= iv.end)
            .map(|iv| iv.cap)
            .filter(|c| c.is_finite())
    }
}
