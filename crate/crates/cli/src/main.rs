use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use reachtrack::config::{load_config, Config, ControllerChoice};
use reachtrack::experiment::{aggregate, run_batch, Controller};
use reachtrack::io::{self, emit_outputs, ensure_writable, path_file_name, read_path, read_results};
use reachtrack::screen::screen_path;
use reachtrack::{Error, Result};

/// Reachability-guided QP tracking experiments.
#[derive(Debug, Parser)]
#[command(name = "reachtrack", version)]
struct Cli {
    /// JSON configuration file; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Base seed (experiment.seed).
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Controller selection (experiment.controller).
    #[arg(long, global = true)]
    controller: Option<ControllerChoice>,

    /// Number of trials for `batch` (experiment.trials).
    #[arg(long, global = true)]
    trials: Option<usize>,

    /// Override a configuration key, e.g. `--set limits.a_max=3.0`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Screen the seed's reference path for one-step unreachable intervals.
    Screen,
    /// Run one trial per selected controller and write traces and figures.
    Run,
    /// Run a Monte-Carlo batch and write traces, summaries and figures.
    Batch,
    /// Re-render figures and summaries from traces stored in the output directory.
    Plot,
}

impl Cli {
    fn config(&self) -> Result<Config> {
        let mut overrides = Vec::new();
        if let Some(seed) = self.seed {
            overrides.push(format!("experiment.seed={seed}"));
        }
        if let Some(c) = self.controller {
            let name = match c {
                ControllerChoice::Qp => "qp",
                ControllerChoice::Pp => "pp",
                ControllerChoice::Both => "both",
            };
            overrides.push(format!("experiment.controller=\"{name}\""));
        }
        if let Some(n) = self.trials {
            overrides.push(format!("experiment.trials={n}"));
        }
        overrides.extend(self.overrides.iter().cloned());
        load_config(self.config.as_deref(), &overrides)
    }
}

fn simulate(cfg: &Config, out: &Path, trials: usize) -> Result<()> {
    ensure_writable(out)?;
    let base = cfg.trial(Controller::Qp);
    let controllers = cfg.experiment.controller.controllers();
    let results = run_batch(&base, trials, &controllers, cfg.experiment.parallel)?;
    let summary = aggregate(&results, cfg.experiment.resample_points)?;
    let reference = base.build_path()?;
    let files = emit_outputs(out, &results, &summary, reference.dense_grid(), cfg.limits.t_s)?;

    for c in &summary.controllers {
        println!(
            "{}: runs={} rmse_p={:.6}±{:.6} m rmse_v={:.6}±{:.6} m/s mean_delta={:.4}±{:.4} m/s²",
            c.controller, c.runs, c.rmse_p.mean, c.rmse_p.std, c.rmse_v.mean, c.rmse_v.std, c.mean_delta.mean, c.mean_delta.std
        );
    }
    println!("wrote {} files to {}", files.len(), out.display());
    Ok(())
}

fn screen(cfg: &Config, out: &Path) -> Result<()> {
    ensure_writable(out)?;
    let trial = cfg.trial(Controller::Qp);
    let path = trial.build_path()?;
    let report = screen_path(&path, &cfg.limits, &cfg.noise, cfg.experiment.screen_samples)?;
    io::write_screen(out, &report)?;
    io::write_reference(out, trial.seed, &path)?;
    println!(
        "seed {}: {} ({} unsafe intervals, sigma = {})",
        trial.seed,
        if report.passed { "passed" } else { "failed" },
        report.unsafe_intervals.len(),
        report.sigma_used
    );
    for [a, b] in &report.unsafe_intervals {
        println!("  unsafe s in [{a:.4}, {b:.4}]");
    }
    Ok(())
}

fn plot(cfg: &Config, out: &Path) -> Result<()> {
    let results = read_results(out)?;
    let reference = read_path(&out.join(path_file_name(results[0].seed)))?;
    let summary = aggregate(&results, cfg.experiment.resample_points)?;
    let mut files = io::write_tables(out, &results, &summary)?;
    files.extend(io::write_figures(out, &results, &summary, &reference, cfg.limits.t_s)?);
    println!("re-rendered {} files from {} traces", files.len(), results.len());
    Ok(())
}

fn execute(cli: &Cli) -> Result<()> {
    let cfg = cli.config()?;
    match cli.command {
        Command::Screen => screen(&cfg, &cli.out),
        Command::Run => simulate(&cfg, &cli.out, 1),
        Command::Batch => simulate(&cfg, &cli.out, cfg.experiment.trials),
        Command::Plot => plot(&cfg, &cli.out),
    }
}

fn exit_code(err: &Error) -> u8 {
    if err.is_io() {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
