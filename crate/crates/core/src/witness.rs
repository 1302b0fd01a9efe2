//! Attack traces: decoding solver models, concrete replay, and reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encode::{done_sym, fire_sym, know_sym, tau_sym, top_stratum, SmtScript};
use crate::model::{closure, constructible_closed, Knowledge, TiisModel};
use crate::protocol::StepRef;
use crate::sexp::Value;
use crate::solver::{RawResult, Status};
use crate::term::{parse_term, AgentId, Signature, Term, TermError};
use crate::time::{format_pq, parse_time, Time};

#[derive(Debug, Error)]
pub enum WitnessError {
    #[error("solver result is {0}, not sat")]
    NotSat(Status),
    #[error("no value for {0}")]
    MissingValue(String),
    #[error("{count} steps fire at position {position}")]
    ExactlyOne { position: usize, count: usize },
    #[error("model never reaches the goal")]
    NoGoal,
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("bad term `{text}`: {source}")]
    Term {
        text: String,
        #[source]
        source: TermError,
    },
    #[error("bad agent name `{0}`")]
    Agent(String),
    #[error("bad time `{0}`")]
    Time(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub position: usize,
    pub sid: u32,
    pub step: usize,
    pub sender: AgentId,
    pub receiver: AgentId,
    pub message: Term,
    pub time: Time,
    /// Terms newly known per agent after this event; empty lists omitted.
    pub deltas: BTreeMap<AgentId, Vec<Term>>,
}

impl TraceEvent {
    pub fn id(&self) -> StepRef {
        (self.sid, self.step)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoalWitness {
    pub secret: Term,
    pub known_by_intruder: bool,
    pub completed_sessions: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trace {
    pub protocol: String,
    pub scenario: String,
    pub sessions: u32,
    pub bound: usize,
    pub events: Vec<TraceEvent>,
    pub goal: GoalWitness,
}

fn bool_of(values: &BTreeMap<String, Value>, name: &str) -> Result<bool, WitnessError> {
    values
        .get(name)
        .and_then(Value::as_bool)
        .ok_or_else(|| WitnessError::MissingValue(name.to_string()))
}

fn real_of(values: &BTreeMap<String, Value>, name: &str) -> Result<Time, WitnessError> {
    values
        .get(name)
        .and_then(Value::as_real)
        .ok_or_else(|| WitnessError::MissingValue(name.to_string()))
}

/// Sessions whose last step is done, sorted.
fn completed(model: &TiisModel, done: impl Fn(u32, usize) -> bool) -> Vec<u32> {
    (1..=model.sessions)
        .filter(|&sid| {
            let n = model.session_len(sid);
            n > 0 && done(sid, n)
        })
        .collect()
}

/// Turns a sat model into a trace ending at the first position where the
/// goal holds.
pub fn decode(result: &RawResult, script: &SmtScript, model: &TiisModel) -> Result<Trace, WitnessError> {
    if result.status != Status::Sat {
        return Err(WitnessError::NotSat(result.status));
    }
    let v = &result.values;
    let top = top_stratum(model);
    let intruder = model.intruder();
    let mut events = Vec::new();
    for j in 1..=script.bound {
        let mut fired = Vec::new();
        for s in &model.exec_steps {
            if bool_of(v, &fire_sym(j, s.sid, s.index))? {
                fired.push(s);
            }
        }
        if fired.len() != 1 {
            return Err(WitnessError::ExactlyOne {
                position: j,
                count: fired.len(),
            });
        }
        let s = fired[0];
        let mut deltas = BTreeMap::new();
        for a in &model.agents {
            let mut new = Vec::new();
            for tid in 0..model.universe.len() {
                if bool_of(v, &know_sym(a, tid, j, top))? && !bool_of(v, &know_sym(a, tid, j - 1, top))? {
                    new.push(model.universe.term(tid).clone());
                }
            }
            if !new.is_empty() {
                deltas.insert(a.clone(), new);
            }
        }
        events.push(TraceEvent {
            position: j,
            sid: s.sid,
            step: s.index,
            sender: s.sender.clone(),
            receiver: s.receiver.clone(),
            message: s.message.clone(),
            time: real_of(v, &tau_sym(j))?,
            deltas,
        });

        let mut sessions_ok = true;
        for &sid in &model.goal.require_complete {
            sessions_ok &= bool_of(v, &done_sym(j, sid, model.session_len(sid)))?;
        }
        let mut secret = None;
        for &tid in &model.secret_ids {
            if bool_of(v, &know_sym(intruder, tid, j, top))? {
                secret = Some(tid);
                break;
            }
        }
        if let (true, Some(tid)) = (sessions_ok, secret) {
            let mut done = BTreeSet::new();
            for s in &model.exec_steps {
                if bool_of(v, &done_sym(j, s.sid, s.index))? {
                    done.insert(s.id());
                }
            }
            return Ok(Trace {
                protocol: model.protocol.clone(),
                scenario: model.scenario.clone(),
                sessions: model.sessions,
                bound: script.bound,
                events,
                goal: GoalWitness {
                    secret: model.universe.term(tid).clone(),
                    known_by_intruder: true,
                    completed_sessions: completed(model, |sid, i| done.contains(&(sid, i))),
                },
            });
        }
    }
    Err(WitnessError::NoGoal)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViolationKind {
    /// Event does not match the model (unknown step, wrong agents or message, positions).
    Mismatch,
    SessionOrder,
    TimeOrder,
    Gating,
    Delay,
    Lifetime,
    Knowledge,
    Goal,
}

impl fmt::Display for ViolationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ViolationKind::Mismatch => "mismatch",
            ViolationKind::SessionOrder => "session order",
            ViolationKind::TimeOrder => "time order",
            ViolationKind::Gating => "gating",
            ViolationKind::Delay => "delay",
            ViolationKind::Lifetime => "lifetime",
            ViolationKind::Knowledge => "knowledge",
            ViolationKind::Goal => "goal",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} violation at position {position}: {detail}")]
pub struct Violation {
    pub kind: ViolationKind,
    pub position: usize,
    pub detail: String,
}

/// Re-executes a trace under the concrete semantics with unbounded closure
/// and exact time arithmetic. Returns the first violation found.
pub fn replay(trace: &Trace, model: &TiisModel) -> Result<(), Violation> {
    let fail = |kind, position, detail: String| Err(Violation { kind, position, detail });
    let mut times: BTreeMap<StepRef, Time> = BTreeMap::new();
    for e in &trace.events {
        times.entry(e.id()).or_insert(e.time);
    }
    let mut knowledge: BTreeMap<AgentId, Knowledge> = model
        .agents
        .iter()
        .map(|a| (a.clone(), closure(&model.initial_knowledge[a], &model.rules)))
        .collect();
    let mut pc: BTreeMap<u32, usize> = (1..=model.sessions).map(|s| (s, 0)).collect();
    let mut prev_pos = 0;
    let mut prev_time = Time::from_integer(0);

    for e in &trace.events {
        let p = e.position;
        if p <= prev_pos {
            return fail(ViolationKind::Mismatch, p, format!("position {p} after {prev_pos}"));
        }
        prev_pos = p;
        let Some(s) = model.step(e.id()) else {
            return fail(ViolationKind::Mismatch, p, format!("no step ({}.{})", e.sid, e.step));
        };
        if s.sender != e.sender || s.receiver != e.receiver || s.message != e.message {
            return fail(
                ViolationKind::Mismatch,
                p,
                format!("event differs from step ({}.{})", e.sid, e.step),
            );
        }
        let done = pc.get_mut(&e.sid).expect("sid checked by step lookup");
        if *done + 1 != e.step {
            return fail(
                ViolationKind::SessionOrder,
                p,
                format!("step ({}.{}) fired after {} steps of its session", e.sid, e.step, done),
            );
        }
        *done += 1;
        if e.time < prev_time {
            return fail(
                ViolationKind::TimeOrder,
                p,
                format!("time {} before {}", e.time, prev_time),
            );
        }
        prev_time = e.time;
        let earliest = if e.step == 1 {
            s.min_delay
        } else {
            times[&(e.sid, e.step - 1)] + s.min_delay
        };
        if e.time < earliest {
            return fail(
                ViolationKind::Delay,
                p,
                format!("fired at {} but earliest is {}", e.time, earliest),
            );
        }
        let intruder = model.intruder();
        if s.gated && !constructible_closed(&knowledge[intruder], &model.universe, &s.message) {
            return fail(
                ViolationKind::Gating,
                p,
                format!("{} cannot construct {}", intruder, s.message),
            );
        }
        for (f, life) in &s.lifetime_checks {
            let Some(fid) = model.universe.id(f) else { continue };
            let Some(g) = model.generation.get(&fid) else { continue };
            // Vacuous when the generating step is not part of the trace.
            if let Some(tg) = times.get(g) {
                if e.time > *tg + *life {
                    return fail(
                        ViolationKind::Lifetime,
                        p,
                        format!("{f} used at {} but expired at {}", e.time, *tg + *life),
                    );
                }
            }
        }

        let root = model.universe.id(&s.message).expect("messages are in the universe");
        let mut actual: BTreeMap<AgentId, BTreeSet<usize>> = BTreeMap::new();
        for a in model.observers(s) {
            let k = knowledge.get_mut(&a).expect("observer is an agent");
            if k.contains(&root) {
                continue;
            }
            let mut next = k.clone();
            next.insert(root);
            let next = closure(&next, &model.rules);
            let gained: BTreeSet<usize> = next.difference(k).copied().collect();
            *k = next;
            actual.insert(a, gained);
        }
        let reported = delta_ids(e, model).map_err(|detail| Violation {
            kind: ViolationKind::Knowledge,
            position: p,
            detail,
        })?;
        if reported != actual {
            let show = |m: &BTreeMap<AgentId, BTreeSet<usize>>| {
                m.iter()
                    .map(|(a, ids)| {
                        let ts: Vec<String> =
                            ids.iter().map(|&i| model.universe.term(i).to_string()).collect();
                        format!("{a}: [{}]", ts.join(", "))
                    })
                    .collect::<Vec<_>>()
                    .join("; ")
            };
            return fail(
                ViolationKind::Knowledge,
                p,
                format!("reported {{{}}}, recomputed {{{}}}", show(&reported), show(&actual)),
            );
        }
    }

    let last = trace.events.last().map_or(0, |e| e.position);
    let intruder = model.intruder();
    for &sid in &model.goal.require_complete {
        if pc.get(&sid).copied() != Some(model.session_len(sid)) {
            return fail(ViolationKind::Goal, last, format!("session {sid} is not complete"));
        }
    }
    let secret_id = model.universe.id(&trace.goal.secret);
    if !secret_id.is_some_and(|id| model.secret_ids.contains(&id)) {
        return fail(
            ViolationKind::Goal,
            last,
            format!("{} is not a secret instance", trace.goal.secret),
        );
    }
    if !knowledge[intruder].contains(&secret_id.expect("checked")) {
        return fail(
            ViolationKind::Goal,
            last,
            format!("{intruder} does not know {}", trace.goal.secret),
        );
    }
    let complete = completed(model, |sid, i| pc.get(&sid).copied() == Some(i));
    if !trace.goal.known_by_intruder || complete != trace.goal.completed_sessions {
        return fail(
            ViolationKind::Goal,
            last,
            format!(
                "reported completed sessions {:?}, recomputed {:?}",
                trace.goal.completed_sessions, complete
            ),
        );
    }
    Ok(())
}

/// Delta terms as universe ids; agents with no new terms are dropped.
fn delta_ids(e: &TraceEvent, model: &TiisModel) -> Result<BTreeMap<AgentId, BTreeSet<usize>>, String> {
    let mut out = BTreeMap::new();
    for (a, ts) in &e.deltas {
        let mut ids = BTreeSet::new();
        for t in ts {
            ids.insert(model.universe.id(t).ok_or_else(|| format!("{t} is outside the universe"))?);
        }
        if !ids.is_empty() {
            out.insert(a.clone(), ids);
        }
    }
    Ok(out)
}

pub fn render_text(trace: &Trace) -> String {
    let mut out = String::new();
    for e in &trace.events {
        writeln!(
            out,
            "[{}] t={} ({}.{}) {} -> {} : {}",
            e.position, e.time, e.sid, e.step, e.sender, e.receiver, e.message
        )
        .unwrap();
        for (a, ts) in &e.deltas {
            for t in ts {
                writeln!(out, "    +K({a}): {t}").unwrap();
            }
        }
    }
    let sessions: Vec<String> = trace.goal.completed_sessions.iter().map(u32::to_string).collect();
    writeln!(
        out,
        "goal: {} knows {}; completed sessions: {}",
        AgentId::intruder(),
        trace.goal.secret,
        if sessions.is_empty() { "none".to_string() } else { sessions.join(", ") }
    )
    .unwrap();
    out
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EventJson {
    position: usize,
    sid: u32,
    step: usize,
    sender: String,
    receiver: String,
    message: String,
    time: String,
    deltas: BTreeMap<String, Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GoalJson {
    secret: String,
    known_by_intruder: bool,
    completed_sessions: Vec<u32>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TraceJson {
    protocol: String,
    scenario: String,
    sessions: u32,
    bound: usize,
    events: Vec<EventJson>,
    goal: GoalJson,
}

pub fn render_json(trace: &Trace) -> String {
    let doc = TraceJson {
        protocol: trace.protocol.clone(),
        scenario: trace.scenario.clone(),
        sessions: trace.sessions,
        bound: trace.bound,
        events: trace
            .events
            .iter()
            .map(|e| EventJson {
                position: e.position,
                sid: e.sid,
                step: e.step,
                sender: e.sender.to_string(),
                receiver: e.receiver.to_string(),
                message: e.message.to_string(),
                time: format_pq(&e.time),
                deltas: e
                    .deltas
                    .iter()
                    .map(|(a, ts)| (a.to_string(), ts.iter().map(Term::to_string).collect()))
                    .collect(),
            })
            .collect(),
        goal: GoalJson {
            secret: trace.goal.secret.to_string(),
            known_by_intruder: trace.goal.known_by_intruder,
            completed_sessions: trace.goal.completed_sessions.clone(),
        },
    };
    let mut s = serde_json::to_string_pretty(&doc).expect("trace serializes");
    s.push('\n');
    s
}

pub fn parse_json(text: &str, sig: &Signature) -> Result<Trace, WitnessError> {
    let doc: TraceJson = serde_json::from_str(text)?;
    let term = |t: &str| {
        parse_term(t, sig).map_err(|source| WitnessError::Term {
            text: t.to_string(),
            source,
        })
    };
    let agent = |a: &str| AgentId::new(a).map_err(|_| WitnessError::Agent(a.to_string()));
    let mut events = Vec::with_capacity(doc.events.len());
    for e in doc.events {
        let mut deltas = BTreeMap::new();
        for (a, ts) in e.deltas {
            let ts = ts.iter().map(|t| term(t)).collect::<Result<Vec<_>, _>>()?;
            deltas.insert(agent(&a)?, ts);
        }
        events.push(TraceEvent {
            position: e.position,
            sid: e.sid,
            step: e.step,
            sender: agent(&e.sender)?,
            receiver: agent(&e.receiver)?,
            message: term(&e.message)?,
            time: parse_time(&e.time).ok_or(WitnessError::Time(e.time.clone()))?,
            deltas,
        });
    }
    Ok(Trace {
        protocol: doc.protocol,
        scenario: doc.scenario,
        sessions: doc.sessions,
        bound: doc.bound,
        events,
        goal: GoalWitness {
            secret: term(&doc.goal.secret)?,
            known_by_intruder: doc.goal.known_by_intruder,
            completed_sessions: doc.goal.completed_sessions,
        },
    })
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '&' => out.push_str("&amp;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

/// Static single-file report: one row per event, one knowledge column per agent.
pub fn render_html(trace: &Trace) -> String {
    let mut agents: BTreeSet<AgentId> = BTreeSet::new();
    for e in &trace.events {
        agents.insert(e.sender.clone());
        agents.insert(e.receiver.clone());
        agents.extend(e.deltas.keys().cloned());
    }
    // Intruder column last.
    let mut cols: Vec<AgentId> = agents.iter().filter(|a| !a.is_intruder()).cloned().collect();
    cols.push(AgentId::intruder());

    let title = escape(&format!("{} / {} (k={}, bound {})", trace.protocol, trace.scenario, trace.sessions, trace.bound));
    let mut h = String::new();
    h.push_str("<!DOCTYPE html>\n<html>\n<head>\n<meta charset=\"utf-8\">\n");
    writeln!(h, "<title>{title}</title>").unwrap();
    h.push_str(
        "<style>\nbody{font-family:sans-serif;margin:1.5em}\ntable{border-collapse:collapse}\n\
         th,td{border:1px solid #999;padding:4px 8px;vertical-align:top}\n\
         th{background:#eee}\ntd.msg,td.k{font-family:monospace}\ntr.goal td{background:#fde2e2}\n</style>\n",
    );
    h.push_str("</head>\n<body>\n");
    writeln!(h, "<h1>{title}</h1>").unwrap();
    h.push_str("<table>\n<tr><th>#</th><th>time</th><th>step</th><th>edge</th><th>message</th>");
    for a in &cols {
        write!(h, "<th>K({})</th>", escape(a.as_str())).unwrap();
    }
    h.push_str("</tr>\n");
    let n = trace.events.len();
    for (i, e) in trace.events.iter().enumerate() {
        let class = if i + 1 == n { " class=\"goal\"" } else { "" };
        write!(
            h,
            "<tr{class}><td>{}</td><td>{}</td><td>({}.{})</td><td>{} &rarr; {}</td><td class=\"msg\">{}</td>",
            e.position,
            escape(&e.time.to_string()),
            e.sid,
            e.step,
            escape(e.sender.as_str()),
            escape(e.receiver.as_str()),
            escape(&e.message.to_string())
        )
        .unwrap();
        for a in &cols {
            let cell: Vec<String> = e
                .deltas
                .get(a)
                .into_iter()
                .flatten()
                .map(|t| format!("+{}", escape(&t.to_string())))
                .collect();
            write!(h, "<td class=\"k\">{}</td>", cell.join("<br>")).unwrap();
        }
        h.push_str("</tr>\n");
    }
    h.push_str("</table>\n");
    let sessions: Vec<String> = trace.goal.completed_sessions.iter().map(u32::to_string).collect();
    writeln!(
        h,
        "<p>Goal reached: {} knows <code>{}</code>; completed sessions: {}.</p>",
        escape(AgentId::intruder().as_str()),
        escape(&trace.goal.secret.to_string()),
        if sessions.is_empty() { "none".to_string() } else { sessions.join(", ") }
    )
    .unwrap();
    h.push_str("</body>\n</html>\n");
    h
}
