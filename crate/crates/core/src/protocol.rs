//! Alice-Bob protocol files, JSON scenarios, and session replication.
//!
//! A protocol file is line based; `#` starts a comment when it begins a line
//! or follows whitespace (so `Ta#1` inside a message is not a comment):
//!
//! ```text
//! name: NSPK_T
//! roles: A B
//! fresh: Ta by A class nonce lifetime 10
//! fresh: Tb by B class nonce lifetime 10
//! goal: secrecy Tb sid any
//! step 1: A -> B : <KB, Ta | A> delay 1
//! step 2: B -> A : <KA, Ta | Tb> delay 1
//! step 3: A -> B : <KB, Tb> delay 1
//! ```

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;
use thiserror::Error;

use crate::term::{parse_term, AgentId, Fresh, FreshClass, Signature, Term, TermError};
use crate::time::{parse_time, Time};

#[derive(Debug, Error)]
pub enum FrontendError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Term {
        line: usize,
        #[source]
        source: TermError,
    },
    #[error("step index gap: expected step {expected}")]
    StepGap { expected: usize },
    #[error("line {line}: duplicate step index {index}")]
    DuplicateStep { line: usize, index: usize },
    #[error("fresh atom {name} is first sent by {sender} in step {step}, but is declared by {owner}")]
    GenerationPoint {
        name: String,
        owner: String,
        sender: String,
        step: usize,
    },
    #[error("`I` is reserved for the intruder and cannot be a role")]
    IntruderRole,
    #[error("undeclared fresh atom or agent: {0}")]
    Undeclared(String),
    #[error("invalid protocol: {0}")]
    Invalid(String),
    #[error("malformed scenario JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("override ({sid},{step}): unknown kind `{kind}`")]
    UnknownKind { sid: u32, step: usize, kind: String },
    #[error("override ({sid},{step}): bad edge `{edge}`")]
    BadEdge { sid: u32, step: usize, edge: String },
    #[error("override ({sid},{step}): {msg}")]
    BadOverride { sid: u32, step: usize, msg: String },
    #[error("override ({sid},{step}): message `L`: {source}")]
    OverrideTerm {
        sid: u32,
        step: usize,
        #[source]
        source: TermError,
    },
    #[error("duplicate override for ({sid},{step})")]
    DuplicateOverride { sid: u32, step: usize },
    #[error("override ({sid},{step}) is out of range for {sessions} session(s) of {steps} step(s)")]
    OutOfRange {
        sid: u32,
        step: usize,
        sessions: u32,
        steps: usize,
    },
    #[error("override ({sid},{step}): edge names undeclared agent {agent}")]
    UnknownAgent { sid: u32, step: usize, agent: String },
    #[error("session count must be at least 1")]
    NoSessions,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FreshDecl {
    pub name: String,
    pub owner: AgentId,
    pub class: FreshClass,
    pub lifetime: Option<Time>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolStep {
    pub index: usize,
    pub sender: AgentId,
    pub receiver: AgentId,
    pub message: Term,
    pub min_delay: Time,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum GoalTarget {
    Any,
    Session(u32),
}

/// Secrecy goal as written in the protocol file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalSpec {
    pub secret: String,
    pub target: GoalTarget,
    /// Explicit `complete:` list; `None` selects the default.
    pub require_complete: Option<BTreeSet<u32>>,
}

/// Goal resolved against a concrete session count and override set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Goal {
    pub secret: String,
    pub target: GoalTarget,
    pub require_complete: BTreeSet<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolSpec {
    pub name: String,
    pub roles: Vec<AgentId>,
    pub fresh_decls: Vec<FreshDecl>,
    pub steps: Vec<ProtocolStep>,
    pub goal: GoalSpec,
}

impl ProtocolSpec {
    pub fn signature(&self) -> Signature {
        let mut sig = Signature::new(self.roles.iter().cloned());
        for d in &self.fresh_decls {
            sig.declare_fresh(&d.name, d.owner.clone(), d.class);
        }
        sig
    }

    pub fn fresh_decl(&self, name: &str) -> Option<&FreshDecl> {
        self.fresh_decls.iter().find(|d| d.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverrideKind {
    Replace,
    Intruder,
    Retime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Override {
    pub sid: u32,
    pub step: usize,
    pub kind: OverrideKind,
    pub edge: Option<(AgentId, AgentId)>,
    pub message: Option<Term>,
    pub delay: Option<Time>,
    /// Lifetime bounds by fresh name, applied to this step's checks.
    pub lifetimes: BTreeMap<String, Time>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub overrides: Vec<Override>,
    pub sessions: Option<u32>,
    pub eavesdrop: bool,
    /// Terms the intruder knows from the start (key-compromise scenarios).
    pub compromised: Vec<Term>,
    /// Replaces the protocol goal's target session.
    pub target_sid: Option<u32>,
}

impl Scenario {
    pub fn fair() -> Self {
        Scenario {
            name: "fair".into(),
            overrides: Vec::new(),
            sessions: None,
            eavesdrop: true,
            compromised: Vec::new(),
            target_sid: None,
        }
    }

    /// Session count used when none is given on the command line.
    pub fn default_sessions(&self) -> u32 {
        self.sessions
            .or_else(|| self.overrides.iter().map(|o| o.sid).max())
            .unwrap_or(1)
            .max(self.target_sid.unwrap_or(1))
    }
}

/// Reference to an exec step: (session, step index).
pub type StepRef = (u32, usize);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecStep {
    pub sid: u32,
    pub index: usize,
    pub sender: AgentId,
    pub receiver: AgentId,
    pub message: Term,
    pub min_delay: Time,
    pub gated: bool,
    pub lifetime_checks: Vec<(Term, Time)>,
}

impl ExecStep {
    pub fn id(&self) -> StepRef {
        (self.sid, self.index)
    }
}

fn strip_comment(line: &str) -> &str {
    let bytes = line.as_bytes();
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'#' && (i == 0 || bytes[i - 1].is_ascii_whitespace()) {
            return &line[..i];
        }
    }
    line
}

fn agent_at(line: usize, name: &str) -> Result<AgentId, FrontendError> {
    AgentId::new(name).map_err(|source| FrontendError::Term { line, source })
}

fn time_at(line: usize, s: &str) -> Result<Time, FrontendError> {
    parse_time(s).ok_or_else(|| FrontendError::Syntax {
        line,
        msg: format!("bad number `{s}`"),
    })
}

pub fn parse_protocol(text: &str) -> Result<ProtocolSpec, FrontendError> {
    let mut name = None;
    let mut roles: Option<Vec<AgentId>> = None;
    let mut fresh_decls: Vec<FreshDecl> = Vec::new();
    let mut goal = None;
    let mut complete = None;
    // Step bodies are parsed once all declarations are known.
    let mut raw_steps: Vec<(usize, usize, String)> = Vec::new();

    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let body = strip_comment(raw).trim();
        if body.is_empty() {
            continue;
        }
        let syntax = |msg: &str| FrontendError::Syntax {
            line,
            msg: msg.to_string(),
        };
        if let Some(rest) = body.strip_prefix("step") {
            let (idx, rest) = rest
                .split_once(':')
                .ok_or_else(|| syntax("expected `step N: S -> R : message`"))?;
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|_| syntax("bad step index"))?;
            if idx == 0 {
                return Err(syntax("step indices start at 1"));
            }
            if raw_steps.iter().any(|(_, i, _)| *i == idx) {
                return Err(FrontendError::DuplicateStep { line, index: idx });
            }
            raw_steps.push((line, idx, rest.trim().to_string()));
            continue;
        }
        let (key, value) = body
            .split_once(':')
            .ok_or_else(|| syntax("expected `key: value`"))?;
        let value = value.trim();
        match key.trim() {
            "name" => name = Some(value.to_string()),
            "roles" => {
                let mut rs = Vec::new();
                for r in value.split_whitespace() {
                    let a = agent_at(line, r)?;
                    if a.is_intruder() {
                        return Err(FrontendError::IntruderRole);
                    }
                    if rs.contains(&a) {
                        return Err(syntax(&format!("duplicate role {a}")));
                    }
                    rs.push(a);
                }
                roles = Some(rs);
            }
            "fresh" => {
                let toks: Vec<&str> = value.split_whitespace().collect();
                let bad = || syntax("expected `fresh: N by X class C [lifetime L|none]`");
                if toks.len() < 5 || toks[1] != "by" || toks[3] != "class" {
                    return Err(bad());
                }
                let class = FreshClass::parse(toks[4])
                    .ok_or_else(|| syntax(&format!("unknown fresh class `{}`", toks[4])))?;
                let lifetime = match &toks[5..] {
                    [] | ["lifetime", "none"] => None,
                    ["lifetime", l] => {
                        let l = time_at(line, l)?;
                        if l <= Time::from_integer(0) {
                            return Err(syntax("lifetime must be positive"));
                        }
                        Some(l)
                    }
                    _ => return Err(bad()),
                };
                let fname = toks[0];
                if !fname.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                    return Err(syntax(&format!("bad fresh name `{fname}`")));
                }
                if fresh_decls.iter().any(|d| d.name == fname) {
                    return Err(syntax(&format!("duplicate fresh atom {fname}")));
                }
                fresh_decls.push(FreshDecl {
                    name: fname.to_string(),
                    owner: agent_at(line, toks[2])?,
                    class,
                    lifetime,
                });
            }
            "goal" => {
                let toks: Vec<&str> = value.split_whitespace().collect();
                let target = match toks.as_slice() {
                    ["secrecy", _] | ["secrecy", _, "sid", "any"] => GoalTarget::Any,
                    ["secrecy", _, "sid", s] => GoalTarget::Session(
                        s.parse()
                            .ok()
                            .filter(|&n| n >= 1)
                            .ok_or_else(|| syntax("bad goal session"))?,
                    ),
                    _ => return Err(syntax("expected `goal: secrecy NAME [sid N|any]`")),
                };
                goal = Some((toks[1].to_string(), target));
            }
            "complete" => {
                let mut set = BTreeSet::new();
                if value != "none" {
                    for s in value.split_whitespace() {
                        let n: u32 = s
                            .parse()
                            .ok()
                            .filter(|&n| n >= 1)
                            .ok_or_else(|| syntax("bad session index in `complete`"))?;
                        set.insert(n);
                    }
                }
                complete = Some(set);
            }
            other => return Err(syntax(&format!("unknown key `{other}`"))),
        }
    }

    let name = name.ok_or_else(|| FrontendError::Invalid("missing `name:`".into()))?;
    let roles = roles.ok_or_else(|| FrontendError::Invalid("missing `roles:`".into()))?;
    let (secret, target) = goal.ok_or_else(|| FrontendError::Invalid("missing `goal:`".into()))?;

    let mut spec = ProtocolSpec {
        name,
        roles,
        fresh_decls,
        steps: Vec::new(),
        goal: GoalSpec {
            secret,
            target,
            require_complete: complete,
        },
    };
    let sig = spec.signature();
    for d in &spec.fresh_decls {
        if !spec.roles.contains(&d.owner) {
            return Err(FrontendError::Invalid(format!(
                "owner {} of {} is not a role",
                d.owner, d.name
            )));
        }
        if sig.collides(&d.name) {
            return Err(FrontendError::Invalid(format!(
                "fresh name {} clashes with an agent or key name",
                d.name
            )));
        }
    }
    if spec.fresh_decl(&spec.goal.secret).is_none() {
        return Err(FrontendError::Undeclared(spec.goal.secret.clone()));
    }

    raw_steps.sort_by_key(|(_, i, _)| *i);
    for (expected, (line, idx, rest)) in raw_steps.into_iter().enumerate() {
        if idx != expected + 1 {
            return Err(FrontendError::StepGap {
                expected: expected + 1,
            });
        }
        spec.steps.push(parse_step_body(line, idx, &rest, &spec, &sig)?);
    }
    if spec.steps.is_empty() {
        return Err(FrontendError::Invalid("protocol has no steps".into()));
    }

    // Generation point: first sender of every fresh atom is its owner.
    for d in &spec.fresh_decls {
        let first = spec.steps.iter().find(|s| {
            s.message
                .fresh_atoms()
                .iter()
                .any(|f| f.name == d.name)
        });
        if let Some(s) = first {
            if s.sender != d.owner {
                return Err(FrontendError::GenerationPoint {
                    name: d.name.clone(),
                    owner: d.owner.to_string(),
                    sender: s.sender.to_string(),
                    step: s.index,
                });
            }
        }
    }
    Ok(spec)
}

fn parse_step_body(
    line: usize,
    index: usize,
    rest: &str,
    spec: &ProtocolSpec,
    sig: &Signature,
) -> Result<ProtocolStep, FrontendError> {
    let syntax = |msg: &str| FrontendError::Syntax {
        line,
        msg: msg.to_string(),
    };
    let (edge, message) = rest
        .split_once(':')
        .ok_or_else(|| syntax("expected `S -> R : message`"))?;
    let (s, r) = edge
        .split_once("->")
        .ok_or_else(|| syntax("expected `S -> R`"))?;
    let sender = agent_at(line, s.trim())?;
    let receiver = agent_at(line, r.trim())?;
    for a in [&sender, &receiver] {
        if !spec.roles.contains(a) {
            return Err(FrontendError::Undeclared(a.to_string()));
        }
    }
    if sender == receiver {
        return Err(syntax("sender and receiver must differ"));
    }
    let mut message = message.trim();
    let mut min_delay = Time::from_integer(0);
    let toks: Vec<&str> = message.split_whitespace().collect();
    if toks.len() >= 2 && toks[toks.len() - 2] == "delay" {
        min_delay = time_at(line, toks[toks.len() - 1])?;
        if min_delay < Time::from_integer(0) {
            return Err(syntax("delay must be non-negative"));
        }
        let cut = message.rfind("delay").expect("token present");
        message = message[..cut].trim_end();
    }
    let message = parse_term(message, sig).map_err(|e| match e {
        TermError::UnknownAtom { name, .. } => FrontendError::Undeclared(name),
        source => FrontendError::Term { line, source },
    })?;
    if message.fresh_atoms().iter().any(|f| f.sid.is_some()) {
        return Err(syntax("protocol steps may not carry session suffixes"));
    }
    Ok(ProtocolStep {
        index,
        sender,
        receiver,
        message,
        min_delay,
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: String,
    overrides: Vec<RawOverride>,
    #[serde(default)]
    sessions: Option<u32>,
    #[serde(default)]
    eavesdrop: Option<bool>,
    #[serde(default)]
    compromised: Vec<String>,
    #[serde(default)]
    target_sid: Option<u32>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOverride {
    sid: u32,
    step: usize,
    kind: String,
    #[serde(default)]
    edge: Option<String>,
    #[serde(default, rename = "L")]
    l: Option<String>,
    #[serde(default)]
    delay: Option<serde_json::Value>,
    #[serde(default)]
    lifetime: Option<BTreeMap<String, serde_json::Value>>,
}

fn json_time(v: &serde_json::Value) -> Option<Time> {
    match v {
        serde_json::Value::Number(n) => parse_time(&n.to_string()),
        serde_json::Value::String(s) => parse_time(s),
        _ => None,
    }
}

/// Decodes a scenario file. Terms in `L` and `compromised` are read against `sig`.
pub fn parse_scenario(json_text: &str, sig: &Signature) -> Result<Scenario, FrontendError> {
    let raw: RawScenario = serde_json::from_str(json_text)?;
    let mut overrides: Vec<Override> = Vec::new();
    for o in raw.overrides {
        let (sid, step) = (o.sid, o.step);
        let bad = |msg: &str| FrontendError::BadOverride {
            sid,
            step,
            msg: msg.to_string(),
        };
        if sid == 0 || step == 0 {
            return Err(bad("sid and step start at 1"));
        }
        if overrides.iter().any(|x| x.sid == sid && x.step == step) {
            return Err(FrontendError::DuplicateOverride { sid, step });
        }
        let kind = match o.kind.as_str() {
            "replace" => OverrideKind::Replace,
            "intruder" => OverrideKind::Intruder,
            "retime" => OverrideKind::Retime,
            other => {
                return Err(FrontendError::UnknownKind {
                    sid,
                    step,
                    kind: other.to_string(),
                })
            }
        };
        let edge = match &o.edge {
            Some(e) => {
                let bad_edge = || FrontendError::BadEdge {
                    sid,
                    step,
                    edge: e.clone(),
                };
                let (s, r) = e.split_once("->").ok_or_else(bad_edge)?;
                let s = AgentId::new(s.trim()).map_err(|_| bad_edge())?;
                let r = AgentId::new(r.trim()).map_err(|_| bad_edge())?;
                if s == r {
                    return Err(bad_edge());
                }
                Some((s, r))
            }
            None => None,
        };
        let message = match &o.l {
            Some(text) => Some(
                parse_term(text, sig)
                    .map_err(|source| FrontendError::OverrideTerm { sid, step, source })?,
            ),
            None => None,
        };
        match kind {
            OverrideKind::Replace | OverrideKind::Intruder => {
                let (s, _) = edge.as_ref().ok_or_else(|| bad("missing `edge`"))?;
                if message.is_none() {
                    return Err(bad("missing `L`"));
                }
                if kind == OverrideKind::Intruder && !s.is_intruder() {
                    return Err(bad("intruder overrides must be sent by I"));
                }
                if kind == OverrideKind::Replace && s.is_intruder() {
                    return Err(bad("steps sent by I must use kind `intruder`"));
                }
            }
            OverrideKind::Retime => {
                if edge.is_some() || message.is_some() {
                    return Err(bad("`retime` takes no `edge` or `L`"));
                }
            }
        }
        let delay = match &o.delay {
            Some(v) => {
                let d = json_time(v).ok_or_else(|| bad("bad `delay`"))?;
                if d < Time::from_integer(0) {
                    return Err(bad("delay must be non-negative"));
                }
                Some(d)
            }
            None => None,
        };
        let mut lifetimes = BTreeMap::new();
        for (name, v) in o.lifetime.unwrap_or_default() {
            if sig.fresh_decl(&name).is_none() {
                return Err(bad(&format!("lifetime for undeclared fresh atom {name}")));
            }
            let l = json_time(&v).ok_or_else(|| bad("bad lifetime value"))?;
            if l <= Time::from_integer(0) {
                return Err(bad("lifetime must be positive"));
            }
            lifetimes.insert(name, l);
        }
        overrides.push(Override {
            sid,
            step,
            kind,
            edge,
            message,
            delay,
            lifetimes,
        });
    }
    let mut compromised = Vec::new();
    for text in &raw.compromised {
        let t = parse_term(text, sig).map_err(|source| FrontendError::Term { line: 0, source })?;
        if t.fresh_atoms().iter().any(|f| f.sid.is_none()) {
            return Err(FrontendError::Invalid(format!(
                "compromised term {text} needs session suffixes on fresh atoms"
            )));
        }
        compromised.push(t);
    }
    if raw.sessions == Some(0) || raw.target_sid == Some(0) {
        return Err(FrontendError::NoSessions);
    }
    Ok(Scenario {
        name: raw.name,
        overrides,
        sessions: raw.sessions,
        eavesdrop: raw.eavesdrop.unwrap_or(true),
        compromised,
        target_sid: raw.target_sid,
    })
}

/// Step (in session-major order) that generates `f`: the first one sent by
/// its owner, or failing that the first one mentioning it at all.
pub fn generation_step(steps: &[ExecStep], f: &Term) -> Option<StepRef> {
    let owner = f.as_fresh().map(|x| &x.owner);
    steps
        .iter()
        .find(|s| Some(&s.sender) == owner && s.message.contains(f))
        .or_else(|| steps.iter().find(|s| s.message.contains(f)))
        .map(ExecStep::id)
}

/// Replicates the protocol over `k` sessions and substitutes the scenario's
/// overrides in place.
pub fn apply_overrides(
    spec: &ProtocolSpec,
    scenario: &Scenario,
    k: u32,
) -> Result<Vec<ExecStep>, FrontendError> {
    if k == 0 {
        return Err(FrontendError::NoSessions);
    }
    let n = spec.steps.len();
    let mut out: Vec<ExecStep> = Vec::with_capacity(k as usize * n);
    for sid in 1..=k {
        for st in &spec.steps {
            out.push(ExecStep {
                sid,
                index: st.index,
                sender: st.sender.clone(),
                receiver: st.receiver.clone(),
                message: st.message.instantiate(sid),
                min_delay: st.min_delay,
                gated: false,
                lifetime_checks: Vec::new(),
            });
        }
    }

    let mut step_lifetimes: BTreeMap<StepRef, &BTreeMap<String, Time>> = BTreeMap::new();
    for o in &scenario.overrides {
        if o.sid > k || o.step > n {
            return Err(FrontendError::OutOfRange {
                sid: o.sid,
                step: o.step,
                sessions: k,
                steps: n,
            });
        }
        let slot = &mut out[(o.sid as usize - 1) * n + (o.step - 1)];
        if let (Some((s, r)), Some(m)) = (&o.edge, &o.message) {
            for a in [s, r] {
                if !a.is_intruder() && !spec.roles.contains(a) {
                    return Err(FrontendError::UnknownAgent {
                        sid: o.sid,
                        step: o.step,
                        agent: a.to_string(),
                    });
                }
            }
            slot.sender = s.clone();
            slot.receiver = r.clone();
            slot.message = m.instantiate(o.sid);
            slot.gated = s.is_intruder();
        }
        if let Some(d) = o.delay {
            slot.min_delay = d;
        }
        step_lifetimes.insert((o.sid, o.step), &o.lifetimes);
    }

    // Every use of a lifetime-bounded fresh term other than its generation
    // step is checked against the generation time.
    let mut generation: BTreeMap<Term, StepRef> = BTreeMap::new();
    for s in &out {
        for f in s.message.fresh_atoms() {
            let t = Term::Fresh(f.clone());
            if !generation.contains_key(&t) {
                let g = generation_step(&out, &t).expect("term occurs in a step");
                generation.insert(t, g);
            }
        }
    }
    for s in &mut out {
        let overrides = step_lifetimes.get(&s.id());
        let mut checks = Vec::new();
        for f in s.message.fresh_atoms() {
            let t = Term::Fresh(f.clone());
            if generation.get(&t) == Some(&(s.sid, s.index)) {
                continue;
            }
            let bound = overrides
                .and_then(|m| m.get(&f.name).copied())
                .or_else(|| spec.fresh_decl(&f.name).and_then(|d| d.lifetime));
            if let Some(l) = bound {
                checks.push((t, l));
            }
        }
        s.lifetime_checks = checks;
    }
    Ok(out)
}

/// Resolves the goal for `k` sessions. Without an explicit `complete:` list,
/// every session that keeps at least one honest receiving step must finish.
pub fn resolve_goal(
    spec: &ProtocolSpec,
    scenario: &Scenario,
    steps: &[ExecStep],
    k: u32,
) -> Result<Goal, FrontendError> {
    let target = match scenario.target_sid {
        Some(s) => GoalTarget::Session(s),
        None => spec.goal.target,
    };
    if let GoalTarget::Session(s) = target {
        if s > k {
            return Err(FrontendError::Invalid(format!(
                "goal targets session {s} but only {k} session(s) exist"
            )));
        }
    }
    let require_complete = match &spec.goal.require_complete {
        Some(set) => {
            if let Some(&bad) = set.iter().find(|&&s| s > k) {
                return Err(FrontendError::Invalid(format!(
                    "`complete` names session {bad} but only {k} session(s) exist"
                )));
            }
            set.clone()
        }
        None => steps
            .iter()
            .filter(|s| !s.receiver.is_intruder())
            .map(|s| s.sid)
            .collect(),
    };
    Ok(Goal {
        secret: spec.goal.secret.clone(),
        target,
        require_complete,
    })
}

/// Instances of the goal's secret for `k` sessions.
pub fn secret_instances(spec: &ProtocolSpec, goal: &Goal, k: u32) -> Vec<Term> {
    let Some(d) = spec.fresh_decl(&goal.secret) else {
        return Vec::new();
    };
    let sids: Vec<u32> = match goal.target {
        GoalTarget::Any => (1..=k).collect(),
        GoalTarget::Session(s) => vec![s],
    };
    sids.into_iter()
        .map(|sid| {
            Term::Fresh(Fresh {
                name: d.name.clone(),
                owner: d.owner.clone(),
                sid: Some(sid),
                class: d.class,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const NSPK: &str = "\
name: NSPK_T
roles: A B
fresh: Ta by A class nonce lifetime 10
fresh: Tb by B class nonce lifetime 10
goal: secrecy Tb sid any
complete: 1
step 1: A -> B : <KB, Ta | A> delay 1
step 2: B -> A : <KA, Ta | Tb> delay 1
step 3: A -> B : <KB, Tb> delay 1
";

    const LISTING: &str = r#"{
      "name": "mitm1_lowe",
      "overrides": [
        { "sid": 1, "step": 1, "kind": "replace", "edge": "A->I", "L": "<KB,Ta#1|A>" },
        { "sid": 1, "step": 2, "kind": "intruder", "edge": "I->A", "L": "<KA,Ta#1|Tb#1>" },
        { "sid": 1, "step": 3, "kind": "replace", "edge": "A->I", "L": "<KB,Tb#1>" },
        { "sid": 2, "step": 1, "kind": "intruder", "edge": "I->B", "L": "<KB,Ta#1|A>" }
      ]
    }"#;

    fn t(spec: &ProtocolSpec, s: &str) -> Term {
        parse_term(s, &spec.signature()).unwrap()
    }

    fn a(s: &str) -> AgentId {
        AgentId::new(s).unwrap()
    }

    #[test]
    fn parses_nspk() {
        let spec = parse_protocol(NSPK).unwrap();
        assert_eq!(spec.name, "NSPK_T");
        assert_eq!(spec.roles, vec![a("A"), a("B")]);
        assert_eq!(spec.steps.len(), 3);
        assert_eq!(spec.goal.secret, "Tb");
        assert_eq!(spec.goal.target, GoalTarget::Any);
        assert_eq!(spec.goal.require_complete, Some(BTreeSet::from([1])));
        assert_eq!(spec.steps[0].message, t(&spec, "<KB,Ta|A>"));
        assert_eq!(spec.steps[2].min_delay, Time::from_integer(1));
        assert_eq!(spec.fresh_decls[0].lifetime, Some(Time::from_integer(10)));
    }

    #[test]
    fn protocol_errors() {
        let gap = NSPK.replace("step 2: B -> A : <KA, Ta | Tb> delay 1\n", "");
        assert!(matches!(
            parse_protocol(&gap),
            Err(FrontendError::StepGap { expected: 2 })
        ));
        let dup = format!("{NSPK}step 3: A -> B : <KB, Tb>\n");
        assert!(matches!(
            parse_protocol(&dup),
            Err(FrontendError::DuplicateStep { index: 3, .. })
        ));
        let gen = NSPK.replace("step 1: A -> B : <KB, Ta | A>", "step 1: A -> B : <KB, Ta | Tb>");
        assert!(matches!(
            parse_protocol(&gen),
            Err(FrontendError::GenerationPoint { .. })
        ));
        let intr = NSPK.replace("roles: A B", "roles: A B I");
        assert!(matches!(parse_protocol(&intr), Err(FrontendError::IntruderRole)));
        let undeclared = NSPK.replace("<KB, Tb>", "<KB, Nx>");
        assert!(matches!(
            parse_protocol(&undeclared),
            Err(FrontendError::Undeclared(_))
        ));
        let syntax = NSPK.replace("step 3: A -> B", "step 3 A -> B");
        assert!(matches!(
            parse_protocol(&syntax),
            Err(FrontendError::Syntax { line: 9, .. })
        ));
    }

    #[test]
    fn comments_are_stripped() {
        let text = format!("# header\n{NSPK}  # trailing\n");
        assert_eq!(parse_protocol(&text).unwrap(), parse_protocol(NSPK).unwrap());
    }

    #[test]
    fn parses_listing_scenario() {
        let spec = parse_protocol(NSPK).unwrap();
        let sc = parse_scenario(LISTING, &spec.signature()).unwrap();
        assert_eq!(sc.name, "mitm1_lowe");
        let shape: Vec<_> = sc
            .overrides
            .iter()
            .map(|o| (o.sid, o.step, o.kind, o.edge.clone().unwrap()))
            .collect();
        assert_eq!(
            shape,
            vec![
                (1, 1, OverrideKind::Replace, (a("A"), a("I"))),
                (1, 2, OverrideKind::Intruder, (a("I"), a("A"))),
                (1, 3, OverrideKind::Replace, (a("A"), a("I"))),
                (2, 1, OverrideKind::Intruder, (a("I"), a("B"))),
            ]
        );
        assert_eq!(sc.overrides[0].message, Some(t(&spec, "<KB,Ta#1|A>")));
        assert!(sc.eavesdrop);
    }

    #[test]
    fn scenario_errors() {
        let sig = parse_protocol(NSPK).unwrap().signature();
        let fair = parse_scenario(r#"{"name":"fair","overrides":[]}"#, &sig).unwrap();
        assert!(fair.overrides.is_empty());
        let cases = [
            (r#"{"name":"x","overrides":[{"sid":1,"step":1,"kind":"delete"}]}"#, "unknown kind"),
            (r#"{"name":"x","overrides":[{"sid":1,"step":1,"kind":"replace","edge":"A-B","L":"A"}]}"#, "bad edge"),
            (r#"{"name":"x","overrides":[{"sid":1,"step":1,"kind":"replace","edge":"A->I","L":"<A,B>"}]}"#, "message"),
            (r#"{"name":"x","overrides":[{"sid":1,"step":1,"kind":"retime","delay":2},{"sid":1,"step":1,"kind":"retime"}]}"#, "duplicate"),
            (r#"{"name":"x","overrides":[{"sid":1,"step":1,"kind":"intruder","edge":"A->B","L":"A"}]}"#, "sent by I"),
            (r#"{"name":"x","overrides":[],"extra":1}"#, "malformed"),
            (r#"{"name":"x""#, "malformed"),
        ];
        for (json, needle) in cases {
            let err = parse_scenario(json, &sig).unwrap_err().to_string();
            assert!(err.contains(needle), "{json}: {err}");
        }
    }

    #[test]
    fn replication_and_overrides() {
        let spec = parse_protocol(NSPK).unwrap();
        let sig = spec.signature();
        let fair = Scenario::fair();
        let one = apply_overrides(&spec, &fair, 1).unwrap();
        assert_eq!(one.len(), 3);
        for (e, s) in one.iter().zip(&spec.steps) {
            assert_eq!(e.message, s.message.instantiate(1));
            assert!(!e.gated);
        }
        let two = apply_overrides(&spec, &fair, 2).unwrap();
        assert_eq!(two[3].message, t(&spec, "<KB,Ta#2|A>"));

        let sc = parse_scenario(LISTING, &sig).unwrap();
        let steps = apply_overrides(&spec, &sc, 2).unwrap();
        assert_eq!(steps.len(), 6);
        assert_eq!((steps[0].sender.as_str(), steps[0].receiver.as_str()), ("A", "I"));
        assert_eq!(steps[0].message, t(&spec, "<KB,Ta#1|A>"));
        assert!(steps[1].gated);
        assert_eq!(steps[1].message, t(&spec, "<KA,Ta#1|Tb#1>"));
        assert!(steps[3].gated && steps[3].sender.is_intruder());
        assert_eq!(steps[3].message, t(&spec, "<KB,Ta#1|A>"));
        assert!(steps.iter().all(|s| s.gated == s.sender.is_intruder()));

        assert!(matches!(
            apply_overrides(&spec, &sc, 1),
            Err(FrontendError::OutOfRange { sid: 2, .. })
        ));
    }

    #[test]
    fn lifetime_checks_skip_generation() {
        let spec = parse_protocol(NSPK).unwrap();
        let steps = apply_overrides(&spec, &Scenario::fair(), 1).unwrap();
        assert!(steps[0].lifetime_checks.is_empty());
        let ta = t(&spec, "Ta#1");
        let tb = t(&spec, "Tb#1");
        assert_eq!(steps[1].lifetime_checks, vec![(ta, Time::from_integer(10))]);
        assert_eq!(steps[2].lifetime_checks, vec![(tb, Time::from_integer(10))]);
    }

    #[test]
    fn retime_changes_delay_and_lifetime() {
        let spec = parse_protocol(NSPK).unwrap();
        let sc = parse_scenario(
            r#"{"name":"r","overrides":[{"sid":1,"step":2,"kind":"retime","delay":"5/2","lifetime":{"Ta":3}}]}"#,
            &spec.signature(),
        )
        .unwrap();
        let steps = apply_overrides(&spec, &sc, 1).unwrap();
        assert_eq!(steps[1].min_delay, Time::new(5, 2));
        assert_eq!(steps[1].lifetime_checks[0].1, Time::from_integer(3));
        assert_eq!(steps[1].message, t(&spec, "<KA,Ta#1|Tb#1>"));
    }

    #[test]
    fn default_completion_set() {
        let mut spec = parse_protocol(NSPK).unwrap();
        spec.goal.require_complete = None;
        let sc = parse_scenario(LISTING, &spec.signature()).unwrap();
        let steps = apply_overrides(&spec, &sc, 2).unwrap();
        let goal = resolve_goal(&spec, &sc, &steps, 2).unwrap();
        assert_eq!(goal.require_complete, BTreeSet::from([1, 2]));
        assert_eq!(secret_instances(&spec, &goal, 2).len(), 2);
    }
}
