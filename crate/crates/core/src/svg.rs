//! Static SVG figures written by hand: axes, polylines, bars and labels.
//!
//! Output depends only on the data, so identical inputs give identical files.

use std::fmt::Write;

use crate::experiment::{Controller, Summary, TraceRow, TrialResult};
use crate::Vec2;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

pub fn controller_color(c: Controller) -> &'static str {
    match c {
        Controller::Qp => "#1f77b4",
        Controller::Pp => "#d62728",
    }
}

fn label(c: Controller) -> &'static str {
    match c {
        Controller::Qp => "QP",
        Controller::Pp => "PP",
    }
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Data-to-pixel mapping for one panel.
#[derive(Debug, Clone, Copy)]
struct Frame {
    x0: f64,
    y0: f64,
    w: f64,
    h: f64,
    xr: (f64, f64),
    yr: (f64, f64),
}

impl Frame {
    fn new(x0: f64, y0: f64, w: f64, h: f64, xr: (f64, f64), yr: (f64, f64)) -> Self {
        Frame {
            x0,
            y0,
            w,
            h,
            xr: widen(xr),
            yr: widen(yr),
        }
    }

    fn px(&self, x: f64) -> f64 {
        self.x0 + (x - self.xr.0) / (self.xr.1 - self.xr.0) * self.w
    }

    fn py(&self, y: f64) -> f64 {
        self.y0 + self.h - (y - self.yr.0) / (self.yr.1 - self.yr.0) * self.h
    }
}

fn widen((lo, hi): (f64, f64)) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    if hi - lo > 1e-12 {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn range(values: impl IntoIterator<Item = f64>) -> (f64, f64) {
    values
        .into_iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

struct Doc {
    body: String,
    width: f64,
    height: f64,
}

impl Doc {
    fn new(width: f64, height: f64, title: &str) -> Self {
        let mut doc = Doc {
            body: String::new(),
            width,
            height,
        };
        doc.text(width / 2.0, 22.0, title, "middle", 15.0);
        doc
    }

    fn text(&mut self, x: f64, y: f64, s: &str, anchor: &str, size: f64) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" text-anchor="{anchor}" font-family="sans-serif">{}</text>"#,
            esc(s)
        );
    }

    fn line(&mut self, a: (f64, f64), b: (f64, f64), stroke: &str, dash: Option<&str>) {
        let dash = dash.map(|d| format!(r#" stroke-dasharray="{d}""#)).unwrap_or_default();
        let _ = writeln!(
            self.body,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{stroke}" stroke-width="1"{dash}/>"#,
            a.0, a.1, b.0, b.1
        );
    }

    fn polyline(&mut self, f: &Frame, pts: impl IntoIterator<Item = (f64, f64)>, stroke: &str, width: f64, dash: Option<&str>) {
        let mut coords = String::new();
        for (x, y) in pts {
            if x.is_finite() && y.is_finite() {
                let _ = write!(coords, "{:.2},{:.2} ", f.px(x), f.py(y));
            }
        }
        let dash = dash.map(|d| format!(r#" stroke-dasharray="{d}""#)).unwrap_or_default();
        let _ = writeln!(
            self.body,
            r#"<polyline fill="none" stroke="{stroke}" stroke-width="{width}"{dash} points="{}"/>"#,
            coords.trim_end()
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, opacity: f64) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}" fill-opacity="{opacity}" stroke="{fill}"/>"#
        );
    }

    fn axes(&mut self, f: &Frame, xlabel: &str, ylabel: &str) {
        let (l, r, t, b) = (f.x0, f.x0 + f.w, f.y0, f.y0 + f.h);
        self.line((l, b), (r, b), "#000", None);
        self.line((l, t), (l, b), "#000", None);
        for i in 0..=4 {
            let fx = i as f64 / 4.0;
            let xv = f.xr.0 + fx * (f.xr.1 - f.xr.0);
            let x = f.px(xv);
            self.line((x, b), (x, b + 4.0), "#000", None);
            self.text(x, b + 16.0, &tick(xv), "middle", 10.0);
            let yv = f.yr.0 + fx * (f.yr.1 - f.yr.0);
            let y = f.py(yv);
            self.line((l - 4.0, y), (l, y), "#000", None);
            self.text(l - 6.0, y + 3.0, &tick(yv), "end", 10.0);
        }
        self.text((l + r) / 2.0, b + 34.0, xlabel, "middle", 12.0);
        let _ = writeln!(
            self.body,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle" font-family="sans-serif" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
            l - 50.0,
            (t + b) / 2.0,
            l - 50.0,
            (t + b) / 2.0,
            esc(ylabel)
        );
    }

    fn legend(&mut self, x: f64, y: f64, entries: &[(&str, &str)]) {
        for (i, (name, color)) in entries.iter().enumerate() {
            let yy = y + 16.0 * i as f64;
            self.line((x, yy), (x + 20.0, yy), color, None);
            self.text(x + 26.0, yy + 4.0, name, "start", 11.0);
        }
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{}</svg>\n",
            self.body,
            w = self.width,
            h = self.height
        )
    }
}

fn tick(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e4).contains(&a) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn main_frame(xr: (f64, f64), yr: (f64, f64)) -> Frame {
    Frame::new(
        MARGIN_L,
        MARGIN_T,
        WIDTH - MARGIN_L - MARGIN_R,
        HEIGHT - MARGIN_T - MARGIN_B,
        xr,
        yr,
    )
}

/// Reference path with the executed paths of one seed overlaid.
pub fn path_overlay(reference: &[Vec2], runs: &[&TrialResult]) -> String {
    let all = reference.iter().chain(runs.iter().flat_map(|r| r.trace.iter().map(|row| &row.p)));
    let pts: Vec<&Vec2> = all.collect();
    let mut xr = range(pts.iter().map(|p| p.x));
    let mut yr = range(pts.iter().map(|p| p.y));
    // Equal aspect: grow the narrower range around its centre.
    let span = (xr.1 - xr.0).max(yr.1 - yr.0) * 0.5;
    let (cx, cy) = ((xr.0 + xr.1) / 2.0, (yr.0 + yr.1) / 2.0);
    xr = (cx - span, cx + span);
    yr = (cy - span, cy + span);
    let side = HEIGHT - MARGIN_T - MARGIN_B;
    let frame = Frame::new(MARGIN_L, MARGIN_T, side, side, xr, yr);

    let seed = runs.first().map(|r| r.seed).unwrap_or(0);
    let mut doc = Doc::new(MARGIN_L + side + 170.0, HEIGHT, &format!("Executed paths, seed {seed}"));
    doc.axes(&frame, "x (m)", "y (m)");
    doc.polyline(&frame, reference.iter().map(|p| (p.x, p.y)), "#555", 1.5, Some("5,3"));
    let mut legend = vec![("reference", "#555")];
    for r in runs {
        let color = controller_color(r.controller);
        doc.polyline(&frame, r.trace.iter().map(|row| (row.p.x, row.p.y)), color, 1.2, None);
        legend.push((label(r.controller), color));
    }
    doc.legend(MARGIN_L + side + 20.0, MARGIN_T + 10.0, &legend);
    doc.finish()
}

/// Histogram of per-run mean margins for each controller.
pub fn margin_histogram(summary: &Summary) -> String {
    let xr = range(summary.controllers.iter().flat_map(|c| c.histogram.edges.iter().copied()));
    let ymax = summary
        .controllers
        .iter()
        .flat_map(|c| c.histogram.counts.iter().copied())
        .max()
        .unwrap_or(1) as f64;
    let frame = main_frame(xr, (0.0, ymax));
    let mut doc = Doc::new(WIDTH, HEIGHT, "Per-run mean reachability margin");
    doc.axes(&frame, "mean margin (m/s²)", "runs");
    let base = frame.py(0.0);
    for c in &summary.controllers {
        let color = controller_color(c.controller);
        let h = &c.histogram;
        for (i, &count) in h.counts.iter().enumerate() {
            if count == 0 {
                continue;
            }
            let (x0, x1) = (frame.px(h.edges[i]), frame.px(h.edges[i + 1]));
            let top = frame.py(count as f64);
            doc.rect(x0, top, (x1 - x0).max(1.0), base - top, color, 0.5);
        }
    }
    if frame.xr.0 < 0.0 && frame.xr.1 > 0.0 {
        let x = frame.px(0.0);
        doc.line((x, frame.y0), (x, base), "#000", Some("3,3"));
    }
    let legend: Vec<_> = summary
        .controllers
        .iter()
        .map(|c| (label(c.controller), controller_color(c.controller)))
        .collect();
    doc.legend(WIDTH - 120.0, MARGIN_T + 10.0, &legend);
    doc.finish()
}

/// Mean margin against normalised moving time.
pub fn margin_curve(summary: &Summary) -> String {
    let yr = range(summary.controllers.iter().flat_map(|c| c.delta_curve.iter().copied()));
    let frame = main_frame((0.0, 1.0), (yr.0.min(0.0), yr.1.max(0.0)));
    let mut doc = Doc::new(WIDTH, HEIGHT, "Mean reachability margin over normalised time");
    doc.axes(&frame, "normalised moving time", "mean margin (m/s²)");
    let y0 = frame.py(0.0);
    doc.line((frame.x0, y0), (frame.x0 + frame.w, y0), "#888", Some("3,3"));
    for c in &summary.controllers {
        let n = c.delta_curve.len();
        let denom = (n.max(2) - 1) as f64;
        let pts = c.delta_curve.iter().enumerate().map(|(i, &d)| (i as f64 / denom, d));
        doc.polyline(&frame, pts, controller_color(c.controller), 1.5, None);
    }
    let legend: Vec<_> = summary
        .controllers
        .iter()
        .map(|c| (label(c.controller), controller_color(c.controller)))
        .collect();
    doc.legend(WIDTH - 120.0, MARGIN_T + 10.0, &legend);
    doc.finish()
}

/// Per-axis position and velocity with the frozen stretch removed.
///
/// The time axis covers the moving samples only and a vertical line marks
/// where the freeze was cut out.
pub fn freeze_excised(result: &TrialResult, t_s: f64) -> String {
    let moving: Vec<_> = result.trace.iter().filter(|r| r.moving).collect();
    let span = moving.len() as f64 * t_s;
    let cut = result
        .trace
        .iter()
        .position(|r| !r.moving)
        .map(|k| result.trace[..k].iter().filter(|r| r.moving).count() as f64 * t_s);

    let panel_h = (HEIGHT - MARGIN_T - MARGIN_B - 30.0) / 2.0;
    let w = WIDTH - MARGIN_L - MARGIN_R;
    let height = HEIGHT + 40.0;
    let mut doc = Doc::new(
        WIDTH,
        height,
        &format!("{} run, seed {}, freeze removed", label(result.controller), result.seed),
    );
    type Axes = fn(&TraceRow) -> (f64, f64);
    let panels: [(&str, Axes, (&str, &str)); 2] = [
        ("position (m)", |r| (r.p.x, r.p.y), ("x", "y")),
        ("velocity (m/s)", |r| (r.v.x, r.v.y), ("vx", "vy")),
    ];
    let colors = ["#1f77b4", "#ff7f0e"];
    for (i, (ylabel, get, names)) in panels.iter().enumerate() {
        let y0 = MARGIN_T + i as f64 * (panel_h + 50.0);
        let yr = range(moving.iter().flat_map(|r| {
            let (a, b) = get(r);
            [a, b]
        }));
        let frame = Frame::new(MARGIN_L, y0, w, panel_h, (0.0, span), yr);
        doc.axes(&frame, "moving time (s)", ylabel);
        for (axis, color) in colors.iter().enumerate() {
            let pts = moving.iter().enumerate().map(|(k, r)| {
                let (a, b) = get(r);
                (k as f64 * t_s, if axis == 0 { a } else { b })
            });
            doc.polyline(&frame, pts, color, 1.2, None);
        }
        if let Some(tc) = cut {
            let x = frame.px(tc);
            doc.line((x, frame.y0), (x, frame.y0 + frame.h), "#000", Some("4,3"));
        }
        doc.legend(WIDTH - 90.0, y0 + 10.0, &[(names.0, colors[0]), (names.1, colors[1])]);
    }
    doc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_maps_corners() {
        let f = Frame::new(10.0, 20.0, 100.0, 50.0, (0.0, 1.0), (0.0, 1.0));
        let (lo, hi) = f.xr;
        assert!((f.px(lo) - 10.0).abs() < 1e-12);
        assert!((f.px(hi) - 110.0).abs() < 1e-12);
        assert!((f.py(f.yr.0) - 70.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_range_widens() {
        assert_eq!(widen((2.0, 2.0)), (1.5, 2.5));
        assert_eq!(widen((f64::INFINITY, f64::NEG_INFINITY)), (0.0, 1.0));
    }

    #[test]
    fn text_is_escaped() {
        assert_eq!(esc("a<b&c"), "a&lt;b&amp;c");
    }
}
