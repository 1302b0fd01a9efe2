//! Driving an external SMT-LIB2 solver and the bound-deepening loop.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::process::{Child, Command, Stdio};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::encode::{encode, BmcProblem, EncodeError, SmtScript};
use crate::model::TiisModel;
use crate::sexp::{parse_get_value, Value};

pub const DEFAULT_COMMAND: &str = "z3 -in";
pub const SOLVER_ENV: &str = "TSPBMC_SOLVER";

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver config: {0}")]
    Config(String),
    #[error("cannot start solver `{command}`: {source}")]
    Spawn {
        command: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Encode(#[from] EncodeError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolverConfig {
    pub command: Vec<String>,
    pub timeout: Duration,
    /// `None` means twice the number of exec steps.
    pub max_bound: Option<usize>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            command: split_command(DEFAULT_COMMAND),
            timeout: Duration::from_secs(60),
            max_bound: None,
        }
    }
}

fn split_command(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

impl SolverConfig {
    /// Explicit command first, then `$TSPBMC_SOLVER`, then `z3 -in`.
    pub fn with_command(explicit: Option<&str>) -> Self {
        let cmd = explicit
            .map(str::to_string)
            .or_else(|| std::env::var(SOLVER_ENV).ok().filter(|s| !s.trim().is_empty()))
            .unwrap_or_else(|| DEFAULT_COMMAND.to_string());
        SolverConfig {
            command: split_command(&cmd),
            ..SolverConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), SolverError> {
        if self.command.is_empty() {
            return Err(SolverError::Config("empty solver command".into()));
        }
        if self.timeout.is_zero() {
            return Err(SolverError::Config("timeout must be positive".into()));
        }
        if self.max_bound == Some(0) {
            return Err(SolverError::Config("max bound must be at least 1".into()));
        }
        Ok(())
    }

    pub fn effective_max_bound(&self, model: &TiisModel) -> usize {
        self.max_bound.unwrap_or(2 * model.exec_steps.len()).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Sat,
    Unsat,
    Unknown,
    Timeout,
    Error,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Status::Sat => "sat",
            Status::Unsat => "unsat",
            Status::Unknown => "unknown",
            Status::Timeout => "timeout",
            Status::Error => "error",
        })
    }
}

#[derive(Debug, Clone)]
pub struct RawResult {
    pub status: Status,
    pub values: BTreeMap<String, Value>,
    /// stderr plus any unexpected stdout text.
    pub stderr: String,
}

impl RawResult {
    fn failed(status: Status, stderr: String) -> Self {
        RawResult {
            status,
            values: BTreeMap::new(),
            stderr,
        }
    }
}

struct Running {
    child: Child,
    lines: mpsc::Receiver<String>,
    err: thread::JoinHandle<String>,
}

impl Running {
    fn finish(mut self, kill: bool) -> String {
        if kill {
            let _ = self.child.kill();
        }
        let _ = self.child.wait();
        self.err.join().unwrap_or_default()
    }
}

fn spawn(config: &SolverConfig) -> Result<Running, SolverError> {
    let mut child = Command::new(&config.command[0])
        .args(&config.command[1..])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|source| SolverError::Spawn {
            command: config.command.join(" "),
            source,
        })?;
    let out = child.stdout.take().expect("piped stdout");
    let mut err = child.stderr.take().expect("piped stderr");
    let (tx, lines) = mpsc::channel();
    thread::spawn(move || {
        for line in BufReader::new(out).lines() {
            let Ok(line) = line else { break };
            if tx.send(line).is_err() {
                break;
            }
        }
    });
    let err = thread::spawn(move || {
        let mut s = String::new();
        let _ = err.read_to_string(&mut s);
        s
    });
    Ok(Running { child, lines, err })
}

/// Runs one script to completion. On `sat`, all symbols of the script are
/// requested with `get-value`.
pub fn run_solver(script: &SmtScript, config: &SolverConfig) -> Result<RawResult, SolverError> {
    config.validate()?;
    let deadline = Instant::now() + config.timeout;
    let mut run = spawn(config)?;
    let mut stdin = run.child.stdin.take().expect("piped stdin");
    if stdin.write_all(script.text.as_bytes()).and_then(|_| stdin.flush()).is_err() {
        drop(stdin);
        let stderr = run.finish(true);
        return Ok(RawResult::failed(Status::Error, stderr));
    }

    let next_line = |run: &Running| -> Result<Option<String>, ()> {
        let left = deadline.saturating_duration_since(Instant::now());
        match run.lines.recv_timeout(left) {
            Ok(l) => Ok(Some(l)),
            Err(RecvTimeoutError::Disconnected) => Ok(None),
            Err(RecvTimeoutError::Timeout) => Err(()),
        }
    };

    let status = loop {
        match next_line(&run) {
            Err(()) => {
                drop(stdin);
                let stderr = run.finish(true);
                return Ok(RawResult::failed(Status::Timeout, stderr));
            }
            Ok(None) => {
                drop(stdin);
                let stderr = run.finish(true);
                return Ok(RawResult::failed(Status::Error, stderr));
            }
            Ok(Some(l)) => match l.trim() {
                "" => continue,
                "sat" => break Status::Sat,
                "unsat" => break Status::Unsat,
                "unknown" => break Status::Unknown,
                other => {
                    drop(stdin);
                    let mut stderr = run.finish(true);
                    stderr.push_str(other);
                    return Ok(RawResult::failed(Status::Error, stderr));
                }
            },
        }
    };

    if status != Status::Sat {
        let _ = writeln!(stdin, "(exit)");
        drop(stdin);
        let stderr = run.finish(false);
        return Ok(RawResult::failed(status, stderr));
    }

    let symbols = script.symbols();
    let mut req = String::from("(get-value (");
    req.push_str(&symbols.join(" "));
    req.push_str("))\n(exit)\n");
    let wrote = stdin.write_all(req.as_bytes()).and_then(|_| stdin.flush());
    drop(stdin);
    if wrote.is_err() {
        let stderr = run.finish(true);
        return Ok(RawResult::failed(Status::Error, stderr));
    }
    let mut reply = String::new();
    loop {
        match next_line(&run) {
            Err(()) => {
                let stderr = run.finish(true);
                return Ok(RawResult::failed(Status::Timeout, stderr));
            }
            Ok(None) => break,
            Ok(Some(l)) => {
                reply.push_str(&l);
                reply.push('\n');
            }
        }
    }
    let stderr = run.finish(false);
    let values = match parse_get_value(&reply) {
        Ok(v) => v.into_iter().collect::<BTreeMap<_, _>>(),
        Err(e) => {
            return Ok(RawResult::failed(
                Status::Error,
                format!("{stderr}{e}\n{reply}"),
            ))
        }
    };
    if let Some(missing) = symbols.iter().find(|s| !values.contains_key(**s)) {
        return Ok(RawResult::failed(
            Status::Error,
            format!("{stderr}solver omitted value for {missing}"),
        ));
    }
    Ok(RawResult {
        status,
        values,
        stderr,
    })
}

#[derive(Debug, Clone)]
pub struct BoundLog {
    pub bound: usize,
    pub status: Status,
    pub wall: Duration,
}

#[derive(Debug, Clone)]
pub enum Outcome {
    AttackFound {
        bound: usize,
        result: RawResult,
        script: SmtScript,
    },
    NoAttackUpTo(usize),
    Inconclusive(String),
}

#[derive(Debug, Clone)]
pub struct Verdict {
    pub outcome: Outcome,
    pub log: Vec<BoundLog>,
}

/// Encodes and solves bounds 1, 2, ... and stops at the first `sat`.
pub fn iterate_bounds(model: &TiisModel, config: &SolverConfig) -> Result<Verdict, SolverError> {
    config.validate()?;
    let max = config.effective_max_bound(model);
    let mut log = Vec::new();
    for bound in 1..=max {
        let script = encode(&BmcProblem { model, bound })?;
        let start = Instant::now();
        let result = match run_solver(&script, config) {
            Ok(r) => r,
            Err(e @ SolverError::Spawn { .. }) => {
                return Ok(Verdict {
                    outcome: Outcome::Inconclusive(e.to_string()),
                    log,
                })
            }
            Err(e) => return Err(e),
        };
        log.push(BoundLog {
            bound,
            status: result.status,
            wall: start.elapsed(),
        });
        match result.status {
            Status::Sat => {
                return Ok(Verdict {
                    outcome: Outcome::AttackFound {
                        bound,
                        result,
                        script,
                    },
                    log,
                })
            }
            Status::Unsat => {}
            other => {
                let detail = result.stderr.trim();
                let reason = if detail.is_empty() {
                    format!("solver returned {other} at bound {bound}")
                } else {
                    format!("solver returned {other} at bound {bound}: {detail}")
                };
                return Ok(Verdict {
                    outcome: Outcome::Inconclusive(reason),
                    log,
                });
            }
        }
    }
    Ok(Verdict {
        outcome: Outcome::NoAttackUpTo(max),
        log,
    })
}
