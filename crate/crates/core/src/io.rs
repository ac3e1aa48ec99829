//! CSV and JSON export, trace read-back and figure emission.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a trace
//! read back from disk reproduces the in-memory values exactly.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{Controller, Summary, TraceRow, TrialResult};
use crate::path::{RefSample, ReferencePath};
use crate::screen::ScreenReport;
use crate::svg;
use crate::tracker::Mode;
use crate::Vec2;

pub const TRACE_HEADER: [&str; 15] = [
    "t", "px", "py", "vx", "vy", "ux", "uy", "plax", "play", "vlax", "vlay", "delta", "C", "mode", "moving",
];
pub const PATH_HEADER: [&str; 7] = ["t", "px", "py", "vx", "vy", "ax", "ay"];
pub const TRACES_DIR: &str = "traces";

pub fn trace_file_name(controller: Controller, seed: u64) -> String {
    format!("trace_{controller}_{seed}.csv")
}

pub fn path_file_name(seed: u64) -> String {
    format!("path_{seed}.csv")
}

fn f(x: f64) -> String {
    format!("{x}")
}

/// Create `dir` if needed and prove it accepts new files.
pub fn ensure_writable(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let probe = dir.join(".write_probe");
    fs::write(&probe, b"").map_err(|e| Error::io(&probe, e))?;
    fs::remove_file(&probe).map_err(|e| Error::io(&probe, e))
}

fn writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::Writer::from_writer(file))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_trace(path: &Path, trace: &[TraceRow]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(TRACE_HEADER)?;
    for r in trace {
        w.write_record([
            f(r.t),
            f(r.p.x),
            f(r.p.y),
            f(r.v.x),
            f(r.v.y),
            f(r.u.x),
            f(r.u.y),
            f(r.p_la.x),
            f(r.p_la.y),
            f(r.v_la.x),
            f(r.v_la.y),
            f(r.delta),
            f(r.c),
            r.mode.to_string(),
            r.moving.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn data_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Data {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

fn check_header(path: &Path, got: &csv::StringRecord, want: &[&str]) -> Result<()> {
    if got.iter().ne(want.iter().copied()) {
        return Err(data_err(path, format!("expected header {}", want.join(","))));
    }
    Ok(())
}

fn floats<const N: usize>(path: &Path, line: usize, rec: &csv::StringRecord) -> Result<[f64; N]> {
    let mut out = [0.0; N];
    for (i, slot) in out.iter_mut().enumerate() {
        let cell = rec.get(i).ok_or_else(|| data_err(path, format!("line {line}: missing column {i}")))?;
        *slot = cell
            .parse()
            .map_err(|_| data_err(path, format!("line {line}: `{cell}` is not a number")))?;
    }
    Ok(out)
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    check_header(path, rdr.headers()?, &TRACE_HEADER)?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let v: [f64; 13] = floats(path, line, &rec)?;
        let mode: Mode = rec[13].parse().map_err(|e: String| data_err(path, format!("line {line}: {e}")))?;
        let moving: bool = rec[14]
            .parse()
            .map_err(|_| data_err(path, format!("line {line}: `{}` is not a boolean", &rec[14])))?;
        rows.push(TraceRow {
            t: v[0],
            p: Vec2::new(v[1], v[2]),
            v: Vec2::new(v[3], v[4]),
            u: Vec2::new(v[5], v[6]),
            p_la: Vec2::new(v[7], v[8]),
            v_la: Vec2::new(v[9], v[10]),
            delta: v[11],
            c: v[12],
            mode,
            moving,
        });
    }
    Ok(rows)
}

/// Dense-grid samples of a reference path.
pub fn write_path(path: &Path, reference: &[RefSample]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(PATH_HEADER)?;
    for s in reference {
        w.write_record([f(s.t), f(s.p.x), f(s.p.y), f(s.v.x), f(s.v.y), f(s.a.x), f(s.a.y)])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_path(path: &Path) -> Result<Vec<RefSample>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    check_header(path, rdr.headers()?, &PATH_HEADER)?;
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let v: [f64; 7] = floats(path, i + 2, &rec?)?;
            Ok(RefSample {
                t: v[0],
                p: Vec2::new(v[1], v[2]),
                v: Vec2::new(v[3], v[4]),
                a: Vec2::new(v[5], v[6]),
                clamped: false,
            })
        })
        .collect()
}

pub fn write_screen(dir: &Path, report: &ScreenReport) -> Result<Vec<PathBuf>> {
    let csv_path = dir.join("screen.csv");
    let mut w = writer(&csv_path)?;
    w.write_record(["s", "u_req", "delta", "unsafe_flag"])?;
    for s in &report.samples {
        w.write_record([f(s.s), f(s.u_req), f(s.delta), u8::from(s.is_unsafe()).to_string()])?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    #[derive(Serialize)]
    struct ScreenSummary<'a> {
        passed: bool,
        sigma: f64,
        unsafe_intervals: &'a [[f64; 2]],
    }
    let json_path = dir.join("screen.json");
    write_json(
        &json_path,
        &ScreenSummary {
            passed: report.passed,
            sigma: report.sigma_used,
            unsafe_intervals: &report.unsafe_intervals,
        },
    )?;
    Ok(vec![csv_path, json_path])
}

fn write_runs(path: &Path, results: &[TrialResult]) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(["seed", "controller", "rmse_p", "rmse_v", "mean_delta"])?;
    for r in results {
        w.write_record([
            r.seed.to_string(),
            r.controller.to_string(),
            f(r.rmse_p),
            f(r.rmse_v),
            f(r.mean_delta),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_summary_csv(path: &Path, summary: &Summary) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record([
        "controller",
        "runs",
        "rmse_p_mean",
        "rmse_p_std",
        "rmse_v_mean",
        "rmse_v_std",
        "mean_delta_mean",
        "mean_delta_std",
    ])?;
    for c in &summary.controllers {
        w.write_record([
            c.controller.to_string(),
            c.runs.to_string(),
            f(c.rmse_p.mean),
            f(c.rmse_p.std),
            f(c.rmse_v.mean),
            f(c.rmse_v.std),
            f(c.mean_delta.mean),
            f(c.mean_delta.std),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_delta_curve(path: &Path, summary: &Summary) -> Result<()> {
    let mut w = writer(path)?;
    let mut header = vec!["T".to_string()];
    header.extend(summary.controllers.iter().map(|c| c.controller.to_string()));
    w.write_record(&header)?;
    let n = summary.grid_points;
    for i in 0..n {
        let mut rec = vec![f(i as f64 / (n.max(2) - 1) as f64)];
        rec.extend(summary.controllers.iter().map(|c| f(c.delta_curve[i])));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_reference(dir: &Path, seed: u64, path: &ReferencePath) -> Result<PathBuf> {
    let file = dir.join(path_file_name(seed));
    write_path(&file, path.dense_grid())?;
    Ok(file)
}

/// Write traces, run and summary tables, and the four figures.
///
/// `reference` is the dense reference of the first result's seed; the path
/// overlay and the freeze figure use that seed.
pub fn emit_outputs(
    dir: &Path,
    results: &[TrialResult],
    summary: &Summary,
    reference: &[RefSample],
    t_s: f64,
) -> Result<Vec<PathBuf>> {
    ensure_writable(dir)?;
    let first = results.first().ok_or_else(|| crate::error::config_err("no results to emit"))?;
    let traces = dir.join(TRACES_DIR);
    fs::create_dir_all(&traces).map_err(|e| Error::io(&traces, e))?;

    let mut files = Vec::new();
    for r in results {
        let p = traces.join(trace_file_name(r.controller, r.seed));
        write_trace(&p, &r.trace)?;
        files.push(p);
    }
    let p = dir.join(path_file_name(first.seed));
    write_path(&p, reference)?;
    files.push(p);
    files.extend(write_tables(dir, results, summary)?);
    files.extend(write_figures(dir, results, summary, reference, t_s)?);
    Ok(files)
}

pub fn write_tables(dir: &Path, results: &[TrialResult], summary: &Summary) -> Result<Vec<PathBuf>> {
    let runs = dir.join("runs.csv");
    write_runs(&runs, results)?;
    let csv_path = dir.join("summary.csv");
    write_summary_csv(&csv_path, summary)?;
    let json_path = dir.join("summary.json");
    write_json(&json_path, summary)?;
    let curve = dir.join("delta_curve.csv");
    write_delta_curve(&curve, summary)?;
    Ok(vec![runs, csv_path, json_path, curve])
}

pub fn write_figures(
    dir: &Path,
    results: &[TrialResult],
    summary: &Summary,
    reference: &[RefSample],
    t_s: f64,
) -> Result<Vec<PathBuf>> {
    let Some(first) = results.first() else {
        return Ok(Vec::new());
    };
    let seed_runs: Vec<&TrialResult> = results.iter().filter(|r| r.seed == first.seed).collect();
    let ref_pts: Vec<Vec2> = reference.iter().map(|s| s.p).collect();
    let focus = seed_runs
        .iter()
        .find(|r| r.controller == Controller::Qp)
        .copied()
        .unwrap_or(first);

    let figures = [
        ("fig1_paths.svg", svg::path_overlay(&ref_pts, &seed_runs)),
        ("fig2_margin_histogram.svg", svg::margin_histogram(summary)),
        ("fig3_margin_curve.svg", svg::margin_curve(summary)),
        ("fig4_freeze_excised.svg", svg::freeze_excised(focus, t_s)),
    ];
    figures
        .into_iter()
        .map(|(name, body)| {
            let p = dir.join(name);
            write_text(&p, &body)?;
            Ok(p)
        })
        .collect()
}

/// Parse `trace_{controller}_{seed}.csv`.
pub fn parse_trace_name(name: &str) -> Option<(Controller, u64)> {
    let stem = name.strip_prefix("trace_")?.strip_suffix(".csv")?;
    let (ctrl, seed) = stem.split_once('_')?;
    Some((ctrl.parse().ok()?, seed.parse().ok()?))
}

/// Read every trace under `dir/traces`, ordered by seed then controller.
pub fn read_results(dir: &Path) -> Result<Vec<TrialResult>> {
    let traces = dir.join(TRACES_DIR);
    let entries = fs::read_dir(&traces).map_err(|e| Error::io(&traces, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(&traces, e))?;
        let name = entry.file_name();
        if let Some((ctrl, seed)) = name.to_str().and_then(parse_trace_name) {
            found.push((seed, ctrl, entry.path()));
        }
    }
    if found.is_empty() {
        return Err(data_err(&traces, "no trace files found"));
    }
    found.sort();
    found
        .into_iter()
        .map(|(seed, ctrl, p)| TrialResult::from_trace(seed, ctrl, read_trace(&p)?))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trace_names_round_trip() {
        let name = trace_file_name(Controller::Pp, 17);
        assert_eq!(name, "trace_pp_17.csv");
        assert_eq!(parse_trace_name(&name), Some((Controller::Pp, 17)));
        assert_eq!(parse_trace_name("trace_xx_1.csv"), None);
        assert_eq!(parse_trace_name("path_1.csv"), None);
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.1 + 0.2, -1e-300, 1.0 / 3.0, f64::MAX] {
            assert_eq!(f(x).parse::<f64>().unwrap(), x);
        }
        assert!(f(f64::NAN).parse::<f64>().unwrap().is_nan());
    }

    #[test]
    fn bad_header_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_trace(&p), Err(Error::Data { .. })));
        assert!(matches!(read_path(&p), Err(Error::Data { .. })));
    }
}
