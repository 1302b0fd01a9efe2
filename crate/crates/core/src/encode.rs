//! SMT-LIB2 encoding of bounded reachability of a secrecy violation.
//!
//! Symbols (decimal indices, no padding):
//!
//! | symbol                       | sort | meaning                                        |
//! |------------------------------|------|------------------------------------------------|
//! | `fire_<j>_<sid>_<i>`         | Bool | step (sid,i) fires at position j               |
//! | `done_<j>_<sid>_<i>`         | Bool | step (sid,i) fired at some position ≤ j        |
//! | `t_<sid>_<i>`                | Real | fire time of step (sid,i)                      |
//! | `tau_<j>`                    | Real | time of position j                             |
//! | `k_<agent>_<tid>_<j>_<d>`    | Bool | agent knows term tid at position j, stratum d  |
//!
//! Sections are emitted in a fixed order: declarations, interleaving, time,
//! lifetimes, knowledge, gating, goal.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::model::TiisModel;
use crate::protocol::ExecStep;
use crate::term::{AgentId, Term};
use crate::time::smt_real;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("bound must be at least 1")]
    ZeroBound,
}

pub fn fire_sym(j: usize, sid: u32, i: usize) -> String {
    format!("fire_{j}_{sid}_{i}")
}

pub fn done_sym(j: usize, sid: u32, i: usize) -> String {
    format!("done_{j}_{sid}_{i}")
}

pub fn time_sym(sid: u32, i: usize) -> String {
    format!("t_{sid}_{i}")
}

pub fn tau_sym(j: usize) -> String {
    format!("tau_{j}")
}

pub fn know_sym(agent: &AgentId, tid: usize, j: usize, d: usize) -> String {
    format!("k_{agent}_{tid}_{j}_{d}")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Sort {
    Bool,
    Real,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Var {
    Fire { j: usize, sid: u32, i: usize },
    Done { j: usize, sid: u32, i: usize },
    StepTime { sid: u32, i: usize },
    PosTime { j: usize },
    Know { agent: AgentId, tid: usize, j: usize, d: usize },
}

impl Var {
    pub fn symbol(&self) -> String {
        match self {
            Var::Fire { j, sid, i } => fire_sym(*j, *sid, *i),
            Var::Done { j, sid, i } => done_sym(*j, *sid, *i),
            Var::StepTime { sid, i } => time_sym(*sid, *i),
            Var::PosTime { j } => tau_sym(*j),
            Var::Know { agent, tid, j, d } => know_sym(agent, *tid, *j, *d),
        }
    }

    pub fn sort(&self) -> Sort {
        match self {
            Var::StepTime { .. } | Var::PosTime { .. } => Sort::Real,
            _ => Sort::Bool,
        }
    }
}

pub struct BmcProblem<'a> {
    pub model: &'a TiisModel,
    pub bound: usize,
}

#[derive(Debug, Clone)]
pub struct SmtScript {
    pub text: String,
    pub var_index: BTreeMap<Var, String>,
    pub goal_positions: Vec<usize>,
    pub bound: usize,
}

impl SmtScript {
    /// Declared symbol names in declaration order.
    pub fn symbols(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.var_index.values().map(String::as_str).collect();
        v.sort_unstable();
        v
    }
}

fn or(items: impl IntoIterator<Item = String>) -> String {
    let items: Vec<String> = items.into_iter().collect();
    match items.len() {
        0 => "false".into(),
        1 => items.into_iter().next().expect("one item"),
        _ => format!("(or {})", items.join(" ")),
    }
}

fn and(items: impl IntoIterator<Item = String>) -> String {
    let items: Vec<String> = items.into_iter().collect();
    match items.len() {
        0 => "true".into(),
        1 => items.into_iter().next().expect("one item"),
        _ => format!("(and {})", items.join(" ")),
    }
}

/// Index of the last knowledge stratum.
pub fn top_stratum(model: &TiisModel) -> usize {
    model.strata.top()
}

/// ψ at position `j`: required sessions complete and the intruder knows a
/// secret instance.
pub fn goal_formula(model: &TiisModel, j: usize) -> String {
    let top = top_stratum(model);
    let intruder = model.intruder();
    let mut parts: Vec<String> = model
        .goal
        .require_complete
        .iter()
        .map(|&sid| done_sym(j, sid, model.session_len(sid)))
        .collect();
    parts.push(or(model
        .secret_ids
        .iter()
        .map(|&tid| know_sym(intruder, tid, j, top))));
    and(parts)
}

/// The constructibility recursion unfolded over intruder knowledge literals.
fn constructible_formula(model: &TiisModel, t: &Term, j: usize) -> String {
    let top = top_stratum(model);
    let lit = |t: &Term| {
        know_sym(
            model.intruder(),
            model.universe.id(t).expect("message subterms are in the universe"),
            j,
            top,
        )
    };
    match t {
        Term::Pair(l, r) => and([
            constructible_formula(model, l, j),
            constructible_formula(model, r, j),
        ]),
        Term::Cipher(k, b) => or([
            lit(t),
            and([
                constructible_formula(model, k, j),
                constructible_formula(model, b, j),
            ]),
        ]),
        _ => lit(t),
    }
}

pub fn encode(problem: &BmcProblem<'_>) -> Result<SmtScript, EncodeError> {
    let n = problem.bound;
    if n == 0 {
        return Err(EncodeError::ZeroBound);
    }
    let m = problem.model;
    let steps: &[ExecStep] = &m.exec_steps;
    let top = top_stratum(m);
    let ids = |s: &ExecStep| (s.sid, s.index);

    let mut vars: Vec<Var> = Vec::new();
    for j in 0..=n {
        vars.push(Var::PosTime { j });
        for s in steps {
            if j >= 1 {
                vars.push(Var::Fire { j, sid: s.sid, i: s.index });
            }
            vars.push(Var::Done { j, sid: s.sid, i: s.index });
        }
        for a in &m.agents {
            for tid in 0..m.universe.len() {
                for d in 0..=top {
                    vars.push(Var::Know { agent: a.clone(), tid, j, d });
                }
            }
        }
    }
    for s in steps {
        vars.push(Var::StepTime { sid: s.sid, i: s.index });
    }
    let var_index: BTreeMap<Var, String> = vars.into_iter().map(|v| {
        let s = v.symbol();
        (v, s)
    }).collect();

    let mut out = String::new();
    let w = &mut out;
    writeln!(w, "; bounded reachability, bound {n}").unwrap();
    writeln!(w, "(set-logic QF_LRA)").unwrap();

    writeln!(w, "; declarations").unwrap();
    let mut decls: Vec<(&String, Sort)> = var_index.iter().map(|(v, s)| (s, v.sort())).collect();
    decls.sort();
    for (name, sort) in decls {
        let sort = match sort {
            Sort::Bool => "Bool",
            Sort::Real => "Real",
        };
        writeln!(w, "(declare-const {name} {sort})").unwrap();
    }

    writeln!(w, "; interleaving").unwrap();
    for s in steps {
        writeln!(w, "(assert (not {}))", done_sym(0, s.sid, s.index)).unwrap();
    }
    for j in 1..=n {
        let fires: Vec<String> = steps.iter().map(|s| fire_sym(j, s.sid, s.index)).collect();
        // Idle positions are only allowed once the goal has been reached.
        let at_least = if j == 1 {
            or(fires.clone())
        } else {
            or(std::iter::once(goal_formula(m, j - 1)).chain(fires.iter().cloned()))
        };
        writeln!(w, "(assert {at_least})").unwrap();
        for a in 0..fires.len() {
            for b in a + 1..fires.len() {
                writeln!(w, "(assert (not (and {} {})))", fires[a], fires[b]).unwrap();
            }
        }
        for s in steps {
            let (sid, i) = ids(s);
            writeln!(
                w,
                "(assert (= {} (or {} {})))",
                done_sym(j, sid, i),
                done_sym(j - 1, sid, i),
                fire_sym(j, sid, i)
            )
            .unwrap();
            let mut pre = vec![format!("(not {})", done_sym(j - 1, sid, i))];
            if i > 1 {
                pre.insert(0, done_sym(j - 1, sid, i - 1));
            }
            writeln!(w, "(assert (=> {} {}))", fire_sym(j, sid, i), and(pre)).unwrap();
        }
    }

    writeln!(w, "; time").unwrap();
    writeln!(w, "(assert (= {} 0.0))", tau_sym(0)).unwrap();
    for j in 1..=n {
        writeln!(w, "(assert (>= {} {}))", tau_sym(j), tau_sym(j - 1)).unwrap();
        for s in steps {
            writeln!(
                w,
                "(assert (=> {} (= {} {})))",
                fire_sym(j, s.sid, s.index),
                time_sym(s.sid, s.index),
                tau_sym(j)
            )
            .unwrap();
        }
    }
    for s in steps {
        let delay = smt_real(&s.min_delay);
        if s.index == 1 {
            writeln!(w, "(assert (>= {} {delay}))", time_sym(s.sid, 1)).unwrap();
        } else {
            writeln!(
                w,
                "(assert (>= {} (+ {} {delay})))",
                time_sym(s.sid, s.index),
                time_sym(s.sid, s.index - 1)
            )
            .unwrap();
        }
    }

    writeln!(w, "; lifetimes").unwrap();
    for s in steps {
        for (f, life) in &s.lifetime_checks {
            let fid = m.universe.id(f).expect("checked terms are in the universe");
            let (gs, gi) = m.generation[&fid];
            writeln!(
                w,
                "(assert (=> {} (<= {} (+ {} {}))))",
                done_sym(n, s.sid, s.index),
                time_sym(s.sid, s.index),
                time_sym(gs, gi),
                smt_real(life)
            )
            .unwrap();
        }
    }

    writeln!(w, "; knowledge").unwrap();
    let mut by_conclusion: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (r, rule) in m.rules.iter().enumerate() {
        by_conclusion.entry(rule.conclusion).or_default().push(r);
    }
    for a in &m.agents {
        let init = &m.initial_knowledge[a];
        // Steps whose message root this agent absorbs.
        let mut gains: BTreeMap<usize, Vec<&ExecStep>> = BTreeMap::new();
        for s in steps {
            if m.observers(s).contains(a) {
                let root = m.universe.id(&s.message).expect("messages are in the universe");
                gains.entry(root).or_default().push(s);
            }
        }
        for j in 0..=n {
            for tid in 0..m.universe.len() {
                let k0 = know_sym(a, tid, j, 0);
                if j == 0 {
                    if init.contains(&tid) {
                        writeln!(w, "(assert {k0})").unwrap();
                    } else {
                        writeln!(w, "(assert (not {k0}))").unwrap();
                    }
                } else {
                    let mut alts = vec![know_sym(a, tid, j - 1, top)];
                    if let Some(ss) = gains.get(&tid) {
                        alts.extend(ss.iter().map(|s| fire_sym(j, s.sid, s.index)));
                    }
                    writeln!(w, "(assert (= {k0} {}))", or(alts)).unwrap();
                }
                for d in 1..=top {
                    let decompose = m.strata.decomposes(d);
                    let mut alts = vec![know_sym(a, tid, j, d - 1)];
                    for &r in by_conclusion.get(&tid).into_iter().flatten() {
                        let rule = &m.rules[r];
                        if rule.kind.is_decomposition() == decompose {
                            alts.push(and(rule.premises.iter().map(|&p| know_sym(a, p, j, d - 1))));
                        }
                    }
                    writeln!(w, "(assert (= {} {}))", know_sym(a, tid, j, d), or(alts)).unwrap();
                }
            }
        }
    }

    writeln!(w, "; gating").unwrap();
    for s in steps.iter().filter(|s| s.gated) {
        for j in 1..=n {
            writeln!(
                w,
                "(assert (=> {} {}))",
                fire_sym(j, s.sid, s.index),
                constructible_formula(m, &s.message, j - 1)
            )
            .unwrap();
        }
    }

    writeln!(w, "; goal").unwrap();
    let goal_positions: Vec<usize> = (1..=n).collect();
    writeln!(
        w,
        "(assert {})",
        or(goal_positions.iter().map(|&j| goal_formula(m, j)))
    )
    .unwrap();
    writeln!(w, "(check-sat)").unwrap();

    Ok(SmtScript {
        text: out,
        var_index,
        goal_positions,
        bound: n,
    })
}
