//! Explicit-state bounded reachability, used as ground truth for the SMT path.
//!
//! Timing is checked exactly: a fired sequence induces a system of difference
//! constraints (delays, lifetimes, monotone positions) whose least solution is
//! computed by relaxation. Because lifetime bounds can relate a step to one
//! fired later, states are not merged on (pc, knowledge) alone; the search
//! keeps whole sequences, which is fine at the sizes this is meant for.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use thiserror::Error;

use crate::model::{closure, constructible_closed, Knowledge, TiisModel};
use crate::protocol::StepRef;
use crate::term::AgentId;
use crate::time::Time;
use crate::witness::{GoalWitness, Trace, TraceEvent};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("search depth must be at least 1")]
    ZeroDepth,
}

#[derive(Debug, Clone)]
pub enum OracleOutcome {
    AttackFound { depth: usize, trace: Trace },
    NoAttackUpTo(usize),
}

impl OracleOutcome {
    pub fn attack_depth(&self) -> Option<usize> {
        match self {
            OracleOutcome::AttackFound { depth, .. } => Some(*depth),
            OracleOutcome::NoAttackUpTo(_) => None,
        }
    }
}

/// `x[a] >= x[b] + c`
type Edge = (usize, usize, Time);

/// Least non-negative times for the positions of `seq` (index 0 is position
/// 1), or `None` when no timing satisfies delays, lifetimes and monotone
/// positions.
pub fn schedule(model: &TiisModel, seq: &[StepRef]) -> Option<Vec<Time>> {
    let m = seq.len();
    // Variables: 0 = tau_0, 1..=m = tau_j, then one per exec step.
    let slot: BTreeMap<StepRef, usize> = model
        .exec_steps
        .iter()
        .enumerate()
        .map(|(k, s)| (s.id(), m + 1 + k))
        .collect();
    let nvars = m + 1 + model.exec_steps.len();
    let zero = Time::from_integer(0);
    let mut edges: Vec<Edge> = Vec::new();
    for j in 1..=m {
        edges.push((j, j - 1, zero));
        let t = slot[&seq[j - 1]];
        edges.push((t, j, zero));
        edges.push((j, t, zero));
    }
    for s in &model.exec_steps {
        let t = slot[&s.id()];
        if s.index == 1 {
            edges.push((t, 0, s.min_delay));
        } else {
            edges.push((t, slot[&(s.sid, s.index - 1)], s.min_delay));
        }
    }
    let fired: BTreeSet<StepRef> = seq.iter().copied().collect();
    for s in model.exec_steps.iter().filter(|s| fired.contains(&s.id())) {
        for (f, life) in &s.lifetime_checks {
            let fid = model.universe.id(f).expect("checked terms are in the universe");
            let g = model.generation[&fid];
            // t_use <= t_gen + L  <=>  t_gen >= t_use - L
            edges.push((slot[&g], slot[&s.id()], -*life));
        }
    }
    let mut x = vec![zero; nvars];
    for _ in 0..=nvars {
        let mut changed = false;
        for &(a, b, c) in &edges {
            let need = x[b] + c;
            if x[a] < need {
                x[a] = need;
                changed = true;
            }
        }
        if !changed {
            // tau_0 is pinned to zero.
            return (x[0] == zero).then(|| x[1..=m].to_vec());
        }
    }
    None
}

#[derive(Clone)]
struct Node {
    seq: Vec<StepRef>,
    pc: BTreeMap<u32, usize>,
    knowledge: BTreeMap<AgentId, Knowledge>,
}

fn goal_secret(model: &TiisModel, node: &Node) -> Option<usize> {
    let sessions_ok = model
        .goal
        .require_complete
        .iter()
        .all(|sid| node.pc.get(sid).copied() == Some(model.session_len(*sid)));
    if !sessions_ok {
        return None;
    }
    let k = &node.knowledge[model.intruder()];
    model.secret_ids.iter().copied().find(|id| k.contains(id))
}

fn fire(model: &TiisModel, node: &Node, r: StepRef) -> Node {
    let s = model.step(r).expect("enabled step exists");
    let mut next = node.clone();
    next.seq.push(r);
    *next.pc.get_mut(&r.0).expect("known session") += 1;
    let root = model.universe.id(&s.message).expect("messages are in the universe");
    for a in model.observers(s) {
        let k = next.knowledge.get_mut(&a).expect("observer is an agent");
        if k.insert(root) {
            *k = closure(k, &model.rules);
        }
    }
    next
}

fn enabled(model: &TiisModel, node: &Node) -> Vec<StepRef> {
    let mut out = Vec::new();
    for s in &model.exec_steps {
        if node.pc[&s.sid] + 1 != s.index {
            continue;
        }
        if s.gated && !constructible_closed(&node.knowledge[model.intruder()], &model.universe, &s.message) {
            continue;
        }
        let mut seq = node.seq.clone();
        seq.push(s.id());
        if schedule(model, &seq).is_some() {
            out.push(s.id());
        }
    }
    out
}

fn initial(model: &TiisModel) -> Node {
    Node {
        seq: Vec::new(),
        pc: (1..=model.sessions).map(|s| (s, 0)).collect(),
        knowledge: model
            .agents
            .iter()
            .map(|a| (a.clone(), closure(&model.initial_knowledge[a], &model.rules)))
            .collect(),
    }
}

/// Builds the witness trace for a goal-reaching sequence, with least times.
pub fn trace_of(model: &TiisModel, seq: &[StepRef]) -> Option<Trace> {
    let times = schedule(model, seq)?;
    let mut node = initial(model);
    let mut events = Vec::new();
    for (j, &r) in seq.iter().enumerate() {
        let next = fire(model, &node, r);
        let mut deltas = BTreeMap::new();
        for a in &model.agents {
            let gained: Vec<_> = next.knowledge[a]
                .difference(&node.knowledge[a])
                .map(|&id| model.universe.term(id).clone())
                .collect();
            if !gained.is_empty() {
                deltas.insert(a.clone(), gained);
            }
        }
        let s = model.step(r)?;
        events.push(TraceEvent {
            position: j + 1,
            sid: s.sid,
            step: s.index,
            sender: s.sender.clone(),
            receiver: s.receiver.clone(),
            message: s.message.clone(),
            time: times[j],
            deltas,
        });
        node = next;
    }
    let secret = goal_secret(model, &node)?;
    let completed = (1..=model.sessions)
        .filter(|sid| node.pc[sid] == model.session_len(*sid) && model.session_len(*sid) > 0)
        .collect();
    Some(Trace {
        protocol: model.protocol.clone(),
        scenario: model.scenario.clone(),
        sessions: model.sessions,
        bound: seq.len(),
        events,
        goal: GoalWitness {
            secret: model.universe.term(secret).clone(),
            known_by_intruder: true,
            completed_sessions: completed,
        },
    })
}

/// Steps enabled after executing `seq`, or `None` if `seq` itself is not
/// executable.
pub fn enabled_after(model: &TiisModel, seq: &[StepRef]) -> Option<Vec<StepRef>> {
    let mut node = initial(model);
    for &r in seq {
        if !enabled(model, &node).contains(&r) {
            return None;
        }
        node = fire(model, &node, r);
    }
    Some(enabled(model, &node))
}

/// Whether the goal holds after executing `seq` (assumed executable).
pub fn goal_holds(model: &TiisModel, seq: &[StepRef]) -> bool {
    let mut node = initial(model);
    for &r in seq {
        node = fire(model, &node, r);
    }
    goal_secret(model, &node).is_some()
}

/// Breadth-first search for the shortest goal-reaching interleaving.
pub fn explicit_reach(model: &TiisModel, depth: usize) -> Result<OracleOutcome, OracleError> {
    if depth == 0 {
        return Err(OracleError::ZeroDepth);
    }
    let mut frontier = VecDeque::from([initial(model)]);
    for d in 1..=depth {
        let mut next_frontier = VecDeque::new();
        while let Some(node) = frontier.pop_front() {
            for r in enabled(model, &node) {
                let child = fire(model, &node, r);
                if goal_secret(model, &child).is_some() {
                    let trace = trace_of(model, &child.seq).expect("goal sequence has a trace");
                    return Ok(OracleOutcome::AttackFound { depth: d, trace });
                }
                next_frontier.push_back(child);
            }
        }
        frontier = next_frontier;
    }
    Ok(OracleOutcome::NoAttackUpTo(depth))
}
