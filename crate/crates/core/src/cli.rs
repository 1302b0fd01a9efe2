//! Command-line front end.
//!
//! Exit codes: 0 no attack, 10 attack found, 2 bad input, 3 inconclusive,
//! 1 internal failure (a decoded witness that does not replay).

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::encode::{encode, BmcProblem};
use crate::library;
use crate::model::{build_model, TiisModel};
use crate::oracle::{explicit_reach, OracleOutcome};
use crate::protocol::{parse_protocol, parse_scenario, ProtocolSpec, Scenario};
use crate::solver::{iterate_bounds, Outcome, SolverConfig};
use crate::witness::{decode, render_html, render_json, render_text, replay, Trace};

pub const EXIT_SAFE: i32 = 0;
pub const EXIT_INTERNAL: i32 = 1;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;
pub const EXIT_ATTACK: i32 = 10;

#[derive(Parser, Debug)]
#[command(name = "tspbmc", version, about = "Bounded model checking of timed security protocols")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Search for an attack with the SMT solver, deepening the bound.
    Check(CheckArgs),
    /// Write the SMT-LIB2 script for one bound.
    Encode(EncodeArgs),
    /// Search for an attack by explicit enumeration.
    Oracle(OracleArgs),
    /// List the built-in protocols and scenarios.
    List {
        /// Write the library files into this directory.
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Print the instantiated model as JSON.
    DumpModel(DumpArgs),
}

#[derive(Args, Debug)]
struct Input {
    /// Protocol file or library name.
    protocol: String,
    /// Scenario JSON file or scenario name.
    scenario: String,
    /// Number of sessions (default: from the scenario).
    #[arg(long)]
    sessions: Option<u32>,
    /// Whether the intruder observes honest traffic.
    #[arg(long, value_name = "BOOL")]
    eavesdrop: Option<bool>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Format {
    Text,
    Json,
    Html,
}

#[derive(Args, Debug)]
struct Report {
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Write the witness here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CheckArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    max_bound: Option<usize>,
    /// Solver command line (default: $TSPBMC_SOLVER, then `z3 -in`).
    #[arg(long)]
    solver: Option<String>,
    /// Seconds per bound.
    #[arg(long, default_value_t = 60)]
    timeout: u64,
    #[command(flatten)]
    report: Report,
}

#[derive(Args, Debug)]
struct EncodeArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    bound: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct OracleArgs {
    #[command(flatten)]
    input: Input,
    /// Search depth (default: twice the number of exec steps).
    #[arg(long)]
    depth: Option<usize>,
    #[command(flatten)]
    report: Report,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[command(flatten)]
    input: Input,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Error carrying its exit code.
struct Fail(i32, String);

fn input_err(msg: impl std::fmt::Display) -> Fail {
    Fail(EXIT_INPUT, msg.to_string())
}

fn load_protocol(arg: &str) -> Result<(ProtocolSpec, Option<&'static library::LibraryEntry>), Fail> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = fs::read_to_string(path).map_err(|e| input_err(format!("{arg}: {e}")))?;
        let spec = parse_protocol(&text).map_err(|e| input_err(format!("{arg}: {e}")))?;
        return Ok((spec, None));
    }
    let entry = library::find(arg)
        .ok_or_else(|| input_err(format!("{arg}: no such file or library protocol")))?;
    let spec = parse_protocol(entry.protocol).map_err(|e| input_err(format!("{arg}: {e}")))?;
    Ok((spec, Some(entry)))
}

fn load_scenario(
    arg: &str,
    spec: &ProtocolSpec,
    entry: Option<&library::LibraryEntry>,
) -> Result<Scenario, Fail> {
    let path = Path::new(arg);
    let text = if path.is_file() {
        fs::read_to_string(path).map_err(|e| input_err(format!("{arg}: {e}")))?
    } else if let Some(text) = entry.and_then(|e| e.scenario(arg)) {
        text.to_string()
    } else if arg == "fair" {
        return Ok(Scenario::fair());
    } else {
        return Err(input_err(format!("{arg}: no such file or scenario")));
    };
    parse_scenario(&text, &spec.signature()).map_err(|e| input_err(format!("{arg}: {e}")))
}

fn load_model(input: &Input) -> Result<TiisModel, Fail> {
    let (spec, entry) = load_protocol(&input.protocol)?;
    let mut scenario = load_scenario(&input.scenario, &spec, entry)?;
    if let Some(e) = input.eavesdrop {
        scenario.eavesdrop = e;
    }
    let k = input.sessions.unwrap_or_else(|| scenario.default_sessions());
    if k == 0 {
        return Err(input_err("--sessions must be at least 1"));
    }
    let model = build_model(&spec, &scenario, k).map_err(input_err)?;
    for w in model.honest_warnings() {
        eprintln!("warning: {w}");
    }
    Ok(model)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Fail> {
    match out {
        Some(p) => fs::write(p, text).map_err(|e| input_err(format!("{}: {e}", p.display()))),
        None => {
            let mut so = std::io::stdout().lock();
            so.write_all(text.as_bytes())
                .and_then(|_| so.flush())
                .map_err(|e| Fail(EXIT_INTERNAL, e.to_string()))
        }
    }
}

fn report_attack(model: &TiisModel, trace: &Trace, headline: String, report: &Report) -> Result<i32, Fail> {
    if let Err(v) = replay(trace, model) {
        return Err(Fail(EXIT_INTERNAL, format!("witness failed replay: {v}")));
    }
    let body = match report.format {
        Format::Text => render_text(trace),
        Format::Json => render_json(trace),
        Format::Html => render_html(trace),
    };
    match (&report.out, report.format) {
        (Some(p), _) => {
            emit(Some(p), &body)?;
            println!("{headline}; witness written to {}", p.display());
        }
        (None, Format::Text) => {
            println!("{headline}");
            emit(None, &body)?;
        }
        (None, _) => {
            eprintln!("{headline}");
            emit(None, &body)?;
        }
    }
    Ok(EXIT_ATTACK)
}

fn cmd_check(a: &CheckArgs) -> Result<i32, Fail> {
    let model = load_model(&a.input)?;
    let mut config = SolverConfig::with_command(a.solver.as_deref());
    config.timeout = Duration::from_secs(a.timeout);
    config.max_bound = a.max_bound;
    config.validate().map_err(input_err)?;
    let verdict = iterate_bounds(&model, &config).map_err(input_err)?;
    for l in &verdict.log {
        eprintln!("bound {}: {} ({:.2}s)", l.bound, l.status, l.wall.as_secs_f64());
    }
    match verdict.outcome {
        Outcome::NoAttackUpTo(n) => {
            println!("no attack up to bound {n}");
            Ok(EXIT_SAFE)
        }
        Outcome::Inconclusive(reason) => {
            println!("inconclusive: {reason}");
            Ok(EXIT_INCONCLUSIVE)
        }
        Outcome::AttackFound { bound, result, script } => {
            let trace = decode(&result, &script, &model)
                .map_err(|e| Fail(EXIT_INTERNAL, format!("cannot decode solver model: {e}")))?;
            report_attack(&model, &trace, format!("attack found at bound {bound}"), &a.report)
        }
    }
}

fn cmd_oracle(a: &OracleArgs) -> Result<i32, Fail> {
    let model = load_model(&a.input)?;
    let depth = a.depth.unwrap_or(2 * model.exec_steps.len());
    match explicit_reach(&model, depth).map_err(input_err)? {
        OracleOutcome::NoAttackUpTo(d) => {
            println!("no attack up to depth {d}");
            Ok(EXIT_SAFE)
        }
        OracleOutcome::AttackFound { depth, trace } => {
            report_attack(&model, &trace, format!("attack found at depth {depth}"), &a.report)
        }
    }
}

fn cmd_encode(a: &EncodeArgs) -> Result<i32, Fail> {
    let model = load_model(&a.input)?;
    let script = encode(&BmcProblem { model: &model, bound: a.bound }).map_err(input_err)?;
    emit(a.out.as_deref(), &script.text)?;
    Ok(EXIT_SAFE)
}

fn cmd_dump(a: &DumpArgs) -> Result<i32, Fail> {
    let model = load_model(&a.input)?;
    emit(a.out.as_deref(), &model.dump_json())?;
    Ok(EXIT_SAFE)
}

fn cmd_list(export: Option<&Path>) -> Result<i32, Fail> {
    let mut out = String::new();
    for e in library::LIBRARY {
        let names: Vec<&str> = e.scenarios.iter().map(|(n, _)| *n).collect();
        out.push_str(&format!("{}: {}\n    {}\n", e.name, names.join(", "), e.notes));
    }
    emit(None, &out)?;
    if let Some(dir) = export {
        library::export(dir).map_err(|e| input_err(format!("{}: {e}", dir.display())))?;
        println!("library written to {}", dir.display());
    }
    Ok(EXIT_SAFE)
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_SAFE };
        }
    };
    let res = match &cli.cmd {
        Cmd::Check(a) => cmd_check(a),
        Cmd::Encode(a) => cmd_encode(a),
        Cmd::Oracle(a) => cmd_oracle(a),
        Cmd::List { export } => cmd_list(export.as_deref()),
        Cmd::DumpModel(a) => cmd_dump(a),
    };
    match res {
        Ok(code) => code,
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            code
        }
    }
}
