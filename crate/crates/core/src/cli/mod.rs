//! `ddmpc` command line: config ingestion, dispatch and output files.
//!
//! Exit codes: 0 success, 2 configuration error, 3 numerical failure
//! (rank deficiency, degenerate input, QP failure), 1 anything else.

mod config;

pub use config::{parse_config, serialize_config, ConfigFile};

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::error::{Error, Result};
use crate::runner::{self, ExperimentConfig, ExperimentOutcome, RunOptions};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Bundled two-tank reactor fixture used by `demo cstr`.
pub const CSTR_FIXTURE: &str = include_str!("../../fixtures/cstr.json");

#[derive(Debug, Parser)]
#[command(name = "ddmpc", version, about = "Data-driven MPC for continuous-time LTI plants")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Excite, identify and run the closed loop; writes log.csv and report.txt.
    Run {
        config: PathBuf,
        #[arg(long, env = "DDMPC_OUT", default_value = "ddmpc-out")]
        out: PathBuf,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        /// Also write every QP (H, g, c) to qp.csv.
        #[arg(long)]
        dump_qp: bool,
    },
    /// Excitation and estimation only; prints the estimate.
    Identify {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Write estimate.csv and batch.csv to the output directory.
        #[arg(long)]
        csv: bool,
        #[arg(long, env = "DDMPC_OUT", default_value = "ddmpc-out")]
        out: PathBuf,
    },
    /// Bundled demonstrations.
    Demo {
        #[command(subcommand)]
        which: Demo,
    },
}

#[derive(Debug, Subcommand)]
enum Demo {
    /// Four-state, two-input linearized reactor pair.
    Cstr {
        #[arg(long, env = "DDMPC_OUT", default_value = "ddmpc-out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Runs the CLI on `args` (including the program name) and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run {
            config,
            out,
            seed,
            dump_qp,
        } => load(&config, seed).and_then(|cfg| run_and_write(&cfg, &out, dump_qp)),
        Command::Identify {
            config,
            seed,
            csv,
            out,
        } => load(&config, seed).and_then(|cfg| identify(cfg, csv.then_some(out.as_path()))),
        Command::Demo {
            which: Demo::Cstr { out, seed },
        } => load_text(CSTR_FIXTURE.as_bytes(), seed).and_then(|cfg| run_and_write(&cfg, &out, false)),
    }
    .unwrap_or_else(|failure| failure.report())
}

/// An error tagged with the exit code it maps to.
struct Failure {
    code: i32,
    error: Error,
}

impl Failure {
    fn config(error: Error) -> Self {
        Failure {
            code: EXIT_CONFIG,
            error,
        }
    }

    fn runtime(error: Error) -> Self {
        let code = if error.is_numerical() {
            EXIT_NUMERICAL
        } else {
            EXIT_FAILURE
        };
        Failure { code, error }
    }

    fn report(self) -> i32 {
        eprintln!("ddmpc: {}", self.error);
        self.code
    }
}

fn load(path: &Path, seed: Option<u64>) -> std::result::Result<ExperimentConfig, Failure> {
    let text = fs::read(path).map_err(|e| {
        Failure::config(Error::config(
            "config",
            format!("cannot read {}: {e}", path.display()),
        ))
    })?;
    load_text(&text, seed)
}

fn load_text(text: &[u8], seed: Option<u64>) -> std::result::Result<ExperimentConfig, Failure> {
    let mut cfg = parse_config(text).map_err(Failure::config)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run_and_write(cfg: &ExperimentConfig, out: &Path, dump_qp: bool) -> std::result::Result<i32, Failure> {
    let outcome = runner::run_experiment_with(cfg, RunOptions { keep_qp: dump_qp }).map_err(Failure::runtime)?;
    let report = runner::render_report(&outcome).map_err(Failure::runtime)?;
    write_outputs(&outcome, &report, out, dump_qp).map_err(Failure::runtime)?;
    print!("{report}");
    Ok(EXIT_OK)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn write_outputs(outcome: &ExperimentOutcome, report: &str, out: &Path, dump_qp: bool) -> Result<()> {
    fs::create_dir_all(out)?;
    runner::write_log_csv(&outcome.log, create(out, "log.csv")?)?;
    fs::write(out.join("report.txt"), report)?;
    outcome.trajectory.write_csv(create(out, "trajectory.csv")?)?;
    outcome.final_estimate.write_csv(create(out, "estimate.csv")?)?;
    if dump_qp {
        write_qp_csv(outcome, create(out, "qp.csv")?)?;
    }
    Ok(())
}

/// Columns `step, t, block, row, col, value` with `block` one of `H`, `g`,
/// `c`.
fn write_qp_csv<W: std::io::Write>(outcome: &ExperimentOutcome, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["step", "t", "block", "row", "col", "value"])?;
    for step in &outcome.steps {
        let Some(qp) = &step.qp else { continue };
        let (k, t) = (step.index.to_string(), step.t.to_string());
        for ((i, j), v) in (0..qp.h.nrows())
            .flat_map(|i| (0..qp.h.ncols()).map(move |j| (i, j)))
            .map(|(i, j)| ((i, j), qp.h[(i, j)]))
        {
            w.write_record([&k, &t, "H", &i.to_string(), &j.to_string(), &v.to_string()])?;
        }
        for (i, v) in qp.g.iter().enumerate() {
            w.write_record([&k, &t, "g", &i.to_string(), "0", &v.to_string()])?;
        }
        w.write_record([&k, &t, "c", "0", "0", &qp.c.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn identify(mut cfg: ExperimentConfig, csv_dir: Option<&Path>) -> std::result::Result<i32, Failure> {
    cfg.use_true_model = false;
    let id = runner::identify(&cfg).map_err(Failure::runtime)?;
    if let Some(ex) = &id.excitation {
        println!(
            "excitation: {} samples, condition {:.8e}, min singular value {:.8e}",
            id.batch.samples(),
            ex.condition_estimate,
            ex.min_singular_value
        );
    }
    print!("{}", id.estimate.report_block());
    if let Some(dir) = csv_dir {
        let write = || -> Result<()> {
            fs::create_dir_all(dir)?;
            id.estimate.write_csv(create(dir, "estimate.csv")?)?;
            id.batch.write_csv(create(dir, "batch.csv")?)?;
            Ok(())
        };
        write().map_err(Failure::runtime)?;
    }
    Ok(EXIT_OK)
}
