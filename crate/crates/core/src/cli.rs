//! The `qpulse` command line.
//!
//! Exit codes: 0 on success, 1 for usage and configuration errors, 2 for
//! failures during a run.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::dynamics::{solve_master_equation, MasterEquationOptions};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::model::{Model, JUMP_PROBABILITY_WARNING};
use crate::record::MeasurementRecord;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Parser, Debug)]
#[command(name = "qpulse", version, about = "Quantum pulse scattering: trajectories and Bayesian readout")]
struct Cli {
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Run configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Positivity check cadence in steps (0 disables).
    #[arg(long)]
    validate_every: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one record and filter it.
    Trajectory {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        /// Posterior CSV (stdout if omitted).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Where to save the record (defaults to OUT with a `.record` extension).
        #[arg(long)]
        record: Option<PathBuf>,
    },
    /// Mean error probability over many trajectories.
    Ensemble {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        trajectories: Option<usize>,
        /// Error curve CSV (stdout if omitted); extra outputs go next to it.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Unconditional evolution and its observables.
    MasterEquation {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Filter a saved record.
    Replay {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        record: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the resolved configuration and check the time step.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            EXIT_USAGE
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            EXIT_RUNTIME
        }
    }
}

enum Failure {
    Usage(Error),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Usage(e)
        } else {
            Failure::Runtime(e)
        }
    }
}

/// Reading and checking the config is always a usage-class failure.
fn load(common: &Common) -> Result<RunConfig, Failure> {
    let mut cfg = RunConfig::load(&common.config).map_err(Failure::Usage)?;
    if let Some(k) = common.validate_every {
        cfg.validate_every = k;
    }
    Ok(cfg)
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Comment block of a posterior CSV; depends only on the config and record,
/// so a replay reproduces the file.
pub fn posterior_header(config_hash: &str, record: &MeasurementRecord) -> Vec<String> {
    let opt = |x: Option<u64>| x.map_or_else(|| "none".to_string(), |v| v.to_string());
    vec![
        format!("qpulse {}", env!("CARGO_PKG_VERSION")),
        format!("config_hash {config_hash}"),
        format!("scheme {}", record.scheme()),
        format!("seed {} stream {}", opt(record.seed), opt(record.stream)),
        format!("dt {} steps {}", record.dt, record.steps),
    ]
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn dispatch(command: Command) -> Result<(), Failure> {
    match command {
        Command::Trajectory {
            common,
            seed,
            out,
            record,
        } => {
            let mut cfg = load(&common)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            let hash = cfg.hash();
            let ensemble = Ensemble::new(cfg.ensemble_spec())?;
            let start = Instant::now();
            let outcome = ensemble.trajectory(0)?;
            let csv = outcome.posteriors.to_csv(&posterior_header(&hash, &outcome.record));
            write_output(out.as_deref(), &csv)?;
            if let Some(path) = record.or_else(|| out.as_deref().map(|o| o.with_extension("record"))) {
                outcome.record.save(&path)?;
                log::info!("record written to {}", path.display());
            }
            let final_p = outcome.posteriors.final_posteriors().unwrap_or(&[]);
            eprintln!(
                "truth {} | clicks {} | final posteriors {:?} | {:.2?}",
                cfg.hypotheses[outcome.truth].label,
                outcome.record.click_count(),
                final_p,
                start.elapsed()
            );
        }
        Command::Ensemble {
            common,
            seed,
            trajectories,
            out,
            threads,
        } => {
            let mut cfg = load(&common)?;
            if let Some(s) = seed {
                cfg.master_seed = s;
            }
            if let Some(n) = trajectories {
                cfg.n_trajectories = n;
            }
            let ensemble = Ensemble::new(cfg.ensemble_spec())?;
            eprintln!("running {} trajectories", cfg.n_trajectories);
            let result = ensemble.run(threads)?;
            write_output(out.as_deref(), &result.to_csv())?;
            if let Some(out) = out.as_deref() {
                write_extras(out, &result)?;
            } else if cfg.outputs != Default::default() {
                log::warn!("extra outputs need --out; skipped");
            }
            let d = &result.diagnostics;
            eprintln!(
                "final Q_e {:.4} ± {:.4} | truths {:?} | max drift {:.1e} | max hermiticity {:.1e} | min eig ratio {:.1e} | wall {:.2?}",
                result.final_mean_qe(),
                result.final_sem_qe(),
                result.truth_counts,
                d.max_trace_drift,
                d.max_hermiticity,
                d.min_eigen_ratio,
                result.wall_time
            );
        }
        Command::MasterEquation { common, out } => {
            let cfg = load(&common)?;
            let model = Model::with_representation(cfg.model.clone(), cfg.representation)?;
            let opts = MasterEquationOptions {
                stride: cfg.output_stride,
                checkpoints: Vec::new(),
                validate_every: cfg.validate_every,
            };
            let sol = solve_master_equation(&model, &opts)?;
            let header = vec![
                format!("qpulse {}", env!("CARGO_PKG_VERSION")),
                format!("config_hash {}", cfg.hash()),
                format!("pulse {}", cfg.model.pulse),
            ];
            write_output(out.as_deref(), &sol.series.to_csv(&header))?;
            let s = &sol.series;
            eprintln!(
                "detected {:.6} | side loss {:.6} | max drift {:.1e} | max jump probability {:.3e}",
                s.integrated_flux.last().copied().unwrap_or(0.0),
                s.side_loss.last().copied().unwrap_or(0.0),
                sol.diagnostics.max_trace_drift,
                sol.diagnostics.max_jump_probability
            );
        }
        Command::Replay {
            common,
            record,
            out,
        } => {
            let mut cfg = load(&common)?;
            let rec = MeasurementRecord::load(&record).map_err(|e| match e {
                Error::Io(io) => Failure::Usage(Error::Record(format!("{}: {io}", record.display()))),
                e => Failure::Usage(e),
            })?;
            // the seed is part of the record's provenance
            if let Some(seed) = rec.seed {
                cfg.master_seed = seed;
            }
            let hash = cfg.hash();
            if let Some(h) = &rec.config_hash {
                if h != &hash {
                    log::warn!("record was made with config {h}, replaying with {hash}");
                }
            }
            let ensemble = Ensemble::new(cfg.ensemble_spec())?;
            let (series, _) = ensemble.filter_record(&rec)?;
            write_output(out.as_deref(), &series.to_csv(&posterior_header(&hash, &rec)))?;
        }
        Command::ValidateConfig { config } => {
            let cfg = RunConfig::load(&config).map_err(Failure::Usage)?;
            cfg.validate().map_err(Failure::Usage)?;
            print!("# config_hash {}\n{}", cfg.hash(), cfg.render());
            check_step(&cfg)?;
        }
    }
    Ok(())
}

/// Worst per-step jump probability over the hypotheses' unconditional
/// evolutions; too large a value is a configuration error.
fn check_step(cfg: &RunConfig) -> Result<(), Failure> {
    let mut worst: f64 = 0.0;
    for h in &cfg.hypotheses {
        let model = Model::with_representation(h.apply(&cfg.model), cfg.representation)?;
        let opts = MasterEquationOptions {
            stride: model.config().steps(),
            ..Default::default()
        };
        match solve_master_equation(&model, &opts) {
            Ok(sol) => worst = worst.max(sol.diagnostics.max_jump_probability),
            // the integrator itself failed at this step size
            Err(e @ (Error::TraceDrift { .. } | Error::StepTooLarge { .. })) => {
                return Err(Failure::Usage(Error::config(format!(
                    "hypothesis `{}`: {e}; use dt <= {}",
                    h.label,
                    grid_step(&cfg.model, cfg.model.dt / 4.0)
                ))));
            }
            Err(e) => return Err(e.into()),
        }
    }
    let m = &cfg.model;
    eprintln!("max jump probability per step: {worst:.4}");
    if worst > JUMP_PROBABILITY_WARNING {
        return Err(Failure::Usage(Error::config(format!(
            "dt = {} gives jump probability {worst:.3} > {JUMP_PROBABILITY_WARNING}; use dt <= {}",
            m.dt,
            grid_step(m, m.dt * JUMP_PROBABILITY_WARNING / worst)
        ))));
    }
    Ok(())
}

/// Largest step at most `target` that divides the window evenly.
fn grid_step(m: &crate::model::ModelConfig, target: f64) -> f64 {
    m.t_final / (m.t_final / target).ceil()
}

fn write_extras(out: &Path, result: &crate::ensemble::EnsembleResult) -> Result<()> {
    if let Some(csv) = result.posterior_samples_csv() {
        std::fs::write(with_suffix(out, ".posteriors.csv"), csv)?;
    }
    if let Some(records) = &result.records {
        let dir = with_suffix(out, ".records");
        std::fs::create_dir_all(&dir)?;
        for (i, r) in records.iter().enumerate() {
            r.save(&dir.join(format!("{i:06}.record")))?;
        }
    }
    if let Some(series) = &result.state_series {
        let dir = with_suffix(out, ".states");
        std::fs::create_dir_all(&dir)?;
        for (i, s) in series.iter().enumerate() {
            std::fs::write(dir.join(format!("{i:06}.csv")), s.to_csv(&result.metadata))?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["qpulse", "frobnicate"]), EXIT_USAGE);
        assert_eq!(run(["qpulse", "trajectory"]), EXIT_USAGE);
        assert_eq!(run(["qpulse", "--version"]), EXIT_OK);
    }

    #[test]
    fn missing_config_exits_one() {
        assert_eq!(
            run(["qpulse", "validate-config", "--config", "/nonexistent/run.cfg"]),
            EXIT_USAGE
        );
    }

    #[test]
    fn suffix_appends() {
        assert_eq!(with_suffix(Path::new("a/b.csv"), ".x"), PathBuf::from("a/b.csv.x"));
    }
}
