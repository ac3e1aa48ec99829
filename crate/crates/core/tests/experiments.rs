use std::fs;

use reachtrack::config::{load_config, Config};
use reachtrack::experiment::{
    aggregate, run_batch, run_trial, run_trial_on, Controller, FreezeStart, TrialConfig, TrialResult,
};
use reachtrack::io::{emit_outputs, read_results, read_trace, write_trace};
use reachtrack::path::{fit_spline, ReferencePath};
use reachtrack::tracker::{Mode, NoiseBounds};
use reachtrack::{Error, Vec2};

fn short(controller: Controller) -> TrialConfig {
    TrialConfig {
        controller,
        duration: 3.0,
        path_duration: 10.0,
        freeze_duration: 0.5,
        freeze_start: FreezeStart::At(1.0),
        ..Default::default()
    }
}

fn landing_error(r: &reachtrack::experiment::TraceRow) -> f64 {
    (r.p - r.p_la).norm()
}

#[test]
fn rerun_is_bit_identical() {
    for c in [Controller::Qp, Controller::Pp] {
        let cfg = TrialConfig { seed: 11, ..short(c) };
        assert_eq!(run_trial(&cfg).unwrap(), run_trial(&cfg).unwrap());
    }
}

#[test]
fn zero_freeze_keeps_every_sample() {
    let cfg = TrialConfig {
        freeze_duration: 0.0,
        ..short(Controller::Qp)
    };
    let res = run_trial(&cfg).unwrap();
    assert!(res.trace.iter().all(|r| r.moving && r.mode == Mode::Tracking));
}

#[test]
fn mask_covers_freeze_exactly() {
    let cfg = TrialConfig {
        noise: NoiseBounds::ZERO,
        ..short(Controller::Qp)
    };
    let window = cfg.freeze_window();
    let res = run_trial(&cfg).unwrap();
    for (k, r) in res.trace.iter().enumerate() {
        assert_eq!(r.moving, !window.contains(&k), "sample {k}");
        assert_eq!(r.mode != Mode::Tracking, window.contains(&k), "sample {k}");
    }
    let held = res.trace[window.clone()].iter().filter(|r| r.mode == Mode::Frozen).count();
    assert!(held > 0);
    assert_eq!(res.trace[window.end - 1].v, Vec2::zeros());

    let unmasked = TrialConfig {
        mask_braking: false,
        ..cfg.clone()
    };
    let res = run_trial(&unmasked).unwrap();
    for (k, r) in res.trace.iter().enumerate() {
        assert_eq!(r.moving, !(window.contains(&k) && r.mode == Mode::Frozen));
    }
}

#[test]
fn paired_seeds_share_path_freeze_and_noise() {
    let qp = short(Controller::Qp);
    let pp = short(Controller::Pp);
    assert_eq!(qp.freeze_window(), pp.freeze_window());
    assert_eq!(qp.build_path().unwrap().waypoints(), pp.build_path().unwrap().waypoints());

    // The acceleration noise of each step is (v' − v)/t_s − u.
    let t = qp.limits.t_s;
    let noise = |res: &TrialResult| -> Vec<Vec2> {
        res.trace
            .windows(2)
            .map(|w| (w[1].v - w[0].v) / t - w[0].u)
            .collect()
    };
    let a = noise(&run_trial(&qp).unwrap());
    let b = noise(&run_trial(&pp).unwrap());
    assert!(a.iter().any(|n| n.norm() > 1e-3));
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).norm() < 1e-9, "{x} vs {y}");
    }
}

#[test]
fn sequential_and_parallel_agree() {
    let base = short(Controller::Qp);
    let both = [Controller::Qp, Controller::Pp];
    let seq = run_batch(&base, 4, &both, false).unwrap();
    let par = run_batch(&base, 4, &both, true).unwrap();
    assert_eq!(seq, par);
    assert_eq!(aggregate(&seq, 200).unwrap(), aggregate(&par, 200).unwrap());
    let order: Vec<_> = seq.iter().map(|r| (r.seed, r.controller)).collect();
    assert_eq!(order[..3], [(0, Controller::Qp), (0, Controller::Pp), (1, Controller::Qp)]);
}

#[test]
fn zero_noise_gentle_path_lands_on_target() {
    let cfg = TrialConfig {
        seed: 0,
        duration: 10.0,
        path_duration: 20.0,
        noise: NoiseBounds::ZERO,
        freeze_start: FreezeStart::At(4.0),
        ..Default::default()
    };
    let res = run_trial(&cfg).unwrap();
    let resume = cfg.freeze_window().end;
    let transient = (0.2 / cfg.limits.t_s) as usize;
    for (k, r) in res.trace.iter().enumerate() {
        let settled = k >= transient && !(resume..resume + transient).contains(&k);
        if r.moving && settled {
            assert!(landing_error(r) <= 1e-6, "sample {k}: {}", landing_error(r));
        }
    }
}

#[test]
fn pursuit_saturates_on_tight_curves() {
    let square: Vec<Vec2> = [(0.0, 0.0), (0.5, 0.0), (0.5, 0.5), (0.0, 0.5), (0.0, 0.05)]
        .iter()
        .map(|&(x, y)| Vec2::new(x, y))
        .collect();
    let path = fit_spline(&square, 3.0).unwrap();
    let cfg = TrialConfig {
        controller: Controller::Pp,
        duration: 3.0,
        freeze_duration: 0.0,
        ..Default::default()
    };
    let res = run_trial_on(&cfg, &path).unwrap();
    assert!(res.saturated_samples > 0);
    assert!(res.trace.iter().all(|r| r.u.norm() <= cfg.limits.a_max * (1.0 + 1e-12)));
}

#[test]
fn aggregate_examples() {
    let single = run_trial(&short(Controller::Qp)).unwrap();
    let s = aggregate(std::slice::from_ref(&single), 200).unwrap();
    let c = s.get(Controller::Qp).unwrap();
    assert_eq!((c.rmse_p.mean, c.rmse_p.std), (single.rmse_p, 0.0));
    assert_eq!(c.histogram.counts, vec![1]);
    assert!(s.get(Controller::Pp).is_none());

    let mut a = single.clone();
    let mut b = single;
    a.mean_delta = -1.0;
    b.mean_delta = -3.0;
    let s = aggregate(&[a, b], 200).unwrap();
    assert_eq!(s.get(Controller::Qp).unwrap().mean_delta.mean, -2.0);
}

#[test]
fn csv_round_trip_preserves_metrics() {
    let dir = tempfile::tempdir().unwrap();
    for c in [Controller::Qp, Controller::Pp] {
        let res = run_trial(&TrialConfig { seed: 5, ..short(c) }).unwrap();
        let p = dir.path().join("t.csv");
        write_trace(&p, &res.trace).unwrap();
        let back = TrialResult::from_trace(res.seed, c, read_trace(&p).unwrap()).unwrap();
        for (x, y) in [
            (res.rmse_p, back.rmse_p),
            (res.rmse_v, back.rmse_v),
            (res.mean_delta, back.mean_delta),
        ] {
            assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
        }
        assert_eq!(back.trace, res.trace);
    }
}

fn emit(dir: &std::path::Path, trials: usize) -> Vec<std::path::PathBuf> {
    let base = short(Controller::Qp);
    let results = run_batch(&base, trials, &[Controller::Qp, Controller::Pp], true).unwrap();
    let summary = aggregate(&results, 200).unwrap();
    let path: ReferencePath = base.build_path().unwrap();
    emit_outputs(dir, &results, &summary, path.dense_grid(), base.limits.t_s).unwrap()
}

#[test]
fn batch_of_one_emits_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let files = emit(dir.path(), 1);
    for name in [
        "fig1_paths.svg",
        "fig2_margin_histogram.svg",
        "fig3_margin_curve.svg",
        "fig4_freeze_excised.svg",
        "summary.csv",
        "summary.json",
        "runs.csv",
        "path_0.csv",
        "traces/trace_qp_0.csv",
        "traces/trace_pp_0.csv",
    ] {
        assert!(files.contains(&dir.path().join(name)), "{name} missing");
    }
    let hist = fs::read_to_string(dir.path().join("fig2_margin_histogram.svg")).unwrap();
    assert_eq!(hist.matches("<rect x=").count(), 2);

    let results = read_results(dir.path()).unwrap();
    assert_eq!(results.len(), 2);
}

#[test]
fn freeze_figure_spans_moving_time() {
    let cfg = short(Controller::Qp);
    let res = run_trial(&cfg).unwrap();
    let moving = res.trace.iter().filter(|r| r.moving).count() as f64 * cfg.limits.t_s;
    assert!((moving - (cfg.duration - cfg.freeze_duration)).abs() < 1e-9);
    assert!((res.moving_time().len() as f64 * cfg.limits.t_s - moving).abs() < 1e-12);
}

#[test]
fn rerun_writes_identical_files() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = emit(a.path(), 2);
    emit(b.path(), 2);
    for f in fa {
        let rel = f.strip_prefix(a.path()).unwrap();
        assert_eq!(fs::read(&f).unwrap(), fs::read(b.path().join(rel)).unwrap(), "{rel:?}");
    }
}

#[test]
fn unwritable_output_is_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let err = reachtrack::io::ensure_writable(&blocker.join("sub")).unwrap_err();
    assert!(err.is_io());
}

#[test]
fn config_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("cfg.json");
    fs::write(&p, serde_json::to_string_pretty(&Config::default()).unwrap()).unwrap();
    let cfg = load_config(Some(&p), &["limits.a_max=3.0".into()]).unwrap();
    assert_eq!(cfg.limits.a_max, 3.0);
    let missing = load_config(Some(&dir.path().join("none.json")), &[]).unwrap_err();
    assert!(matches!(missing, Error::Io { .. }));
    assert_eq!(load_config(None, &[]).unwrap(), Config::default());
}

#[test]
fn invalid_trial_rejected_before_simulation() {
    let cfg = TrialConfig {
        noise: NoiseBounds { eps_p: 0.05, eps_v: 0.0 },
        ..Default::default()
    };
    assert!(matches!(run_trial(&cfg), Err(Error::Config(_))));
}
