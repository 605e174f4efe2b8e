//! `cpf`: run, validate, diagnose and compare cooperative path-following
//! scenarios.
//!
//! Exit codes: 0 success, 1 other errors, 2 invalid scenario, 3 solver
//! infeasibility (the partial trace is still written).

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cpf_core::scenario::{bundled_text, parse_scenario, Mode, Scenario, BUNDLED};
use cpf_core::sim::{run, Trace};
use cpf_core::trace::{diagnose, export, read_samples_csv, summarize, Summary};
use cpf_core::Error;
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "cpf",
    version,
    about = "Distributed MPC cooperative path-following simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the trace.
    Run {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Output directory for trace, plot data and summary.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a scenario and report every problem found.
    Check {
        #[arg(long)]
        scenario: String,
    },
    /// Value-decrease and ISS reports from a stored run directory.
    Diag {
        /// Directory written by `run --out`.
        #[arg(long)]
        trace: PathBuf,
        /// Scenario to check against; defaults to the copy stored with the run.
        #[arg(long)]
        scenario: Option<String>,
    },
    /// Run two configurations and report paired metrics.
    Compare {
        #[command(flatten)]
        input: Input,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Second scenario; defaults to the first.
        #[arg(long)]
        against: Option<String>,
        #[arg(long, value_enum)]
        against_mode: Option<ModeArg>,
        /// Writes both runs into `<out>/a` and `<out>/b`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Input {
    /// Scenario file, or the name of a bundled scenario.
    #[arg(long)]
    scenario: String,
    /// Overrides the scenario duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Reserved; the simulator is deterministic.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Cpf,
    Decoupled,
    Consensus,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Cpf => Mode::Cpf,
            ModeArg::Decoupled => Mode::Decoupled,
            ModeArg::Consensus => Mode::Consensus,
        }
    }
}

enum Failure {
    Validation(String),
    Infeasible(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Invalid(_) | Error::Malformed(_) => Failure::Validation(e.to_string()),
            Error::Infeasible(_) => Failure::Infeasible(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Validation(m)) => {
            eprintln!("{m}");
            ExitCode::from(2)
        }
        Err(Failure::Infeasible(m)) => {
            eprintln!("{m}");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::Run { input, mode, out } => {
            let sc = load(&input.scenario, input.duration)?;
            let mode = mode.map_or(sc.mode, Mode::from);
            let trace = run(&sc, mode);
            let summary = finish(&sc, &trace, out.as_deref())?;
            print_json(&summary);
            abort_status(&trace)
        }
        Command::Check { scenario } => {
            let sc = load(&scenario, None)?;
            println!(
                "ok: {} agents, {} samples over [{}, {}]",
                sc.n_agents(),
                sc.samples.len(),
                sc.t0,
                sc.t_end
            );
            Ok(())
        }
        Command::Diag { trace, scenario } => {
            let sc = match scenario {
                Some(s) => load(&s, None)?,
                None => load(&trace.join("scenario.json").to_string_lossy(), None)?,
            };
            let samples = read_samples_csv(&trace.join("samples.csv"))?;
            print_json(&diagnose(&samples, &sc)?);
            Ok(())
        }
        Command::Compare {
            input,
            mode,
            against,
            against_mode,
            out,
        } => {
            let a = load(&input.scenario, input.duration)?;
            let b = match &against {
                Some(s) => load(s, input.duration)?,
                None => a.clone(),
            };
            let mode_a = mode.map_or(a.mode, Mode::from);
            let mode_b = against_mode.map_or(b.mode, Mode::from);
            let (ta, tb) = (run(&a, mode_a), run(&b, mode_b));
            let (sa, sb) = match &out {
                Some(dir) => (
                    finish(&a, &ta, Some(&dir.join("a")))?,
                    finish(&b, &tb, Some(&dir.join("b")))?,
                ),
                None => (finish(&a, &ta, None)?, finish(&b, &tb, None)?),
            };
            print_json(&paired(&ta, &tb, &sa, &sb));
            abort_status(&ta).and(abort_status(&tb))
        }
    }
}

fn load(spec: &str, duration: Option<f64>) -> Result<Scenario, Failure> {
    let path = Path::new(spec);
    let text = if path.exists() {
        fs::read_to_string(path).map_err(|e| Failure::Other(format!("{spec}: {e}")))?
    } else if let Some(t) = bundled_text(spec) {
        t.to_string()
    } else {
        let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
        return Err(Failure::Other(format!(
            "{spec}: no such file or bundled scenario (bundled: {})",
            names.join(", ")
        )));
    };
    let sc = parse_scenario(&text)?;
    Ok(match duration {
        Some(d) => sc.with_duration(d)?,
        None => sc,
    })
}

fn finish(sc: &Scenario, trace: &Trace, out: Option<&Path>) -> Result<Summary, Failure> {
    if let Some(dir) = out {
        export(trace, sc, dir)?;
    }
    Ok(summarize(&sc.name, trace)?)
}

fn abort_status(trace: &Trace) -> Result<(), Failure> {
    match &trace.abort {
        None => Ok(()),
        Some(a) => Err(Failure::Infeasible(format!(
            "run aborted at t = {} (agent {}): {}",
            a.t, a.agent, a.message
        ))),
    }
}

fn paired(ta: &Trace, tb: &Trace, sa: &Summary, sb: &Summary) -> serde_json::Value {
    let gamma_equal = ta.rows.len() == tb.rows.len()
        && ta
            .rows
            .iter()
            .zip(&tb.rows)
            .all(|(x, y)| x.state.gamma.to_bits() == y.state.gamma.to_bits());
    json!({
        "a": sa,
        "b": sb,
        "gamma_bitwise_equal": gamma_equal,
        "max_phi_ratio": sb.max_phi / sa.max_phi,
        "integrated_y2_ratio": sb.integrated_y2_total / sa.integrated_y2_total,
    })
}

fn print_json<T: serde::Serialize>(v: &T) {
    // A closed pipe downstream is not an error worth reporting.
    let _ = writeln!(
        io::stdout().lock(),
        "{}",
        serde_json::to_string_pretty(v).expect("serializable")
    );
}
