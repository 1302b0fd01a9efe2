//! The verification model: term universe, Dolev-Yao rules, initial knowledge
//! and the instantiated execution steps.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::protocol::{
    apply_overrides, generation_step, resolve_goal, secret_instances, ExecStep, FrontendError,
    Goal, ProtocolSpec, Scenario, StepRef,
};
use crate::term::{AgentId, Signature, Term};
use crate::time::format_pq;

/// Set of universe ids.
pub type Knowledge = BTreeSet<usize>;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Frontend(#[from] FrontendError),
    #[error("orphan fresh term {0}: it appears in no step")]
    OrphanFresh(String),
    #[error("secret {0} does not occur in the model")]
    SecretNotInUniverse(String),
}

/// Finite, subterm-closed carrier of all terms the model can talk about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TermUniverse {
    terms: Vec<Term>,
    index: BTreeMap<Term, usize>,
    depth: usize,
}

impl TermUniverse {
    /// Builds a universe from arbitrary seed terms; ids follow rendered text order.
    pub fn from_terms(seeds: impl IntoIterator<Item = Term>) -> Self {
        let mut all = BTreeSet::new();
        for t in seeds {
            all.extend(t.subterms());
        }
        let inverses: Vec<Term> = all
            .iter()
            .filter(|t| t.is_key())
            .filter_map(|t| t.inverse_key().ok())
            .collect();
        all.extend(inverses);
        let mut terms: Vec<(String, Term)> = all.into_iter().map(|t| (t.to_string(), t)).collect();
        terms.sort();
        let terms: Vec<Term> = terms.into_iter().map(|(_, t)| t).collect();
        let index = terms.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let depth = terms.iter().map(Term::depth).max().unwrap_or(0);
        TermUniverse {
            terms,
            index,
            depth,
        }
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn id(&self, t: &Term) -> Option<usize> {
        self.index.get(t).copied()
    }

    pub fn term(&self, id: usize) -> &Term {
        &self.terms[id]
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn contains(&self, t: &Term) -> bool {
        self.index.contains_key(t)
    }
}

/// Universe for a set of exec steps: subterms of every message, every
/// agent identity, long-term keys, `extra` terms, closed under key inversion.
pub fn build_universe(steps: &[ExecStep], agents: &[AgentId], extra: &[Term]) -> TermUniverse {
    let mut seeds: Vec<Term> = steps.iter().map(|s| s.message.clone()).collect();
    seeds.extend(extra.iter().cloned());
    seeds.extend(agents.iter().map(|a| Term::Ident(a.clone())));
    let public_key = seeds.iter().any(|m| {
        m.subterms()
            .iter()
            .any(|t| matches!(t, Term::PubKey(_) | Term::PrivKey(_)))
    });
    for a in agents {
        if public_key || a.is_intruder() {
            seeds.push(Term::PubKey(a.clone()));
        }
    }
    TermUniverse::from_terms(seeds)
}

/// Initial knowledge of `agent`: every identity and public key, its own
/// private key and shared keys; the intruder also holds `compromised`.
pub fn initial_knowledge(agent: &AgentId, universe: &TermUniverse, compromised: &[Term]) -> Knowledge {
    let mut out = Knowledge::new();
    for (id, t) in universe.terms().iter().enumerate() {
        let known = match t {
            Term::Ident(_) | Term::PubKey(_) => true,
            Term::PrivKey(a) => a == agent,
            Term::SymKey(a, b) => a == agent || b == agent,
            Term::Fresh(f) => agent.is_intruder() && f.owner.is_intruder(),
            _ => false,
        };
        if known {
            out.insert(id);
        }
    }
    if agent.is_intruder() {
        out.extend(compromised.iter().filter_map(|t| universe.id(t)));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleKind {
    SplitLeft,
    SplitRight,
    Decrypt,
    Pair,
    Encrypt,
}

impl RuleKind {
    pub fn is_decomposition(self) -> bool {
        matches!(self, RuleKind::SplitLeft | RuleKind::SplitRight | RuleKind::Decrypt)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DerivationRule {
    pub kind: RuleKind,
    pub premises: Vec<usize>,
    pub conclusion: usize,
}

pub fn compile_rules(universe: &TermUniverse) -> Vec<DerivationRule> {
    let id = |t: &Term| universe.id(t).expect("universe is subterm-closed");
    let mut rules = Vec::new();
    for (c, t) in universe.terms().iter().enumerate() {
        match t {
            Term::Pair(l, r) => {
                let (l, r) = (id(l), id(r));
                rules.push(DerivationRule {
                    kind: RuleKind::SplitLeft,
                    premises: vec![c],
                    conclusion: l,
                });
                rules.push(DerivationRule {
                    kind: RuleKind::SplitRight,
                    premises: vec![c],
                    conclusion: r,
                });
                rules.push(DerivationRule {
                    kind: RuleKind::Pair,
                    premises: vec![l, r],
                    conclusion: c,
                });
            }
            Term::Cipher(k, body) => {
                let inv = k.inverse_key().ok().and_then(|i| universe.id(&i));
                if let Some(inv) = inv {
                    rules.push(DerivationRule {
                        kind: RuleKind::Decrypt,
                        premises: vec![c, inv],
                        conclusion: id(body),
                    });
                }
                rules.push(DerivationRule {
                    kind: RuleKind::Encrypt,
                    premises: vec![id(k), id(body)],
                    conclusion: c,
                });
            }
            _ => {}
        }
    }
    rules
}

/// Least fixpoint of rule application over `known`.
pub fn closure(known: &Knowledge, rules: &[DerivationRule]) -> Knowledge {
    let mut out = known.clone();
    loop {
        let mut changed = false;
        for r in rules {
            if !out.contains(&r.conclusion) && r.premises.iter().all(|p| out.contains(p)) {
                out.insert(r.conclusion);
                changed = true;
            }
        }
        if !changed {
            return out;
        }
    }
}

/// Round schedule of the bounded closure used by the encoding: a block of
/// decomposition rounds followed by a block of composition rounds.
///
/// Any derivation can be reordered so that all splitting and decryption
/// happens before any pairing or encryption (composing something only to take
/// it apart again yields nothing new). Within `depth - 1` decomposition rounds
/// everything reachable with the keys known at the start of those rounds is
/// extracted; a further block is needed only when a new key surfaced, which
/// happens at most once per extractable key. Composition needs at most
/// `depth - 1` rounds to rebuild any universe term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Strata {
    pub decompose: usize,
    pub compose: usize,
}

impl Strata {
    pub fn for_universe(universe: &TermUniverse) -> Self {
        let layer = universe.depth().saturating_sub(1);
        // Keys that can be pulled out of a pair or a cipher body.
        let mut extractable = BTreeSet::new();
        for t in universe.terms() {
            let parts: Vec<&Term> = match t {
                Term::Pair(l, r) => vec![l, r],
                Term::Cipher(_, b) => vec![b],
                _ => vec![],
            };
            extractable.extend(parts.into_iter().filter(|p| p.is_key()));
        }
        Strata {
            decompose: (extractable.len() + 1) * layer,
            compose: layer,
        }
    }

    /// Index of the last stratum.
    pub fn top(&self) -> usize {
        self.decompose + self.compose
    }

    /// Whether stratum `d` (1-based) applies decomposition rules.
    pub fn decomposes(&self, d: usize) -> bool {
        d <= self.decompose
    }
}

/// Bounded closure following `strata`: each round applies every admissible
/// rule of its kind once to the previous round's set.
pub fn stratified_closure(known: &Knowledge, rules: &[DerivationRule], strata: Strata) -> Knowledge {
    let mut cur = known.clone();
    for d in 1..=strata.top() {
        let decompose = strata.decomposes(d);
        let mut next = cur.clone();
        for r in rules.iter().filter(|r| r.kind.is_decomposition() == decompose) {
            if r.premises.iter().all(|p| cur.contains(p)) {
                next.insert(r.conclusion);
            }
        }
        cur = next;
    }
    cur
}

/// Whether `t` can be sent given an already closed knowledge set: atoms must
/// be known, pairs need both halves, ciphers are either known whole (replay)
/// or built from key and body.
pub fn constructible_closed(closed: &Knowledge, universe: &TermUniverse, t: &Term) -> bool {
    let known = universe.id(t).is_some_and(|id| closed.contains(&id));
    match t {
        Term::Pair(l, r) => {
            constructible_closed(closed, universe, l) && constructible_closed(closed, universe, r)
        }
        Term::Cipher(k, b) => {
            known
                || (constructible_closed(closed, universe, k)
                    && constructible_closed(closed, universe, b))
        }
        _ => known,
    }
}

pub fn constructible(
    known: &Knowledge,
    rules: &[DerivationRule],
    universe: &TermUniverse,
    t: &Term,
) -> bool {
    constructible_closed(&closure(known, rules), universe, t)
}

/// Instantiated multi-session model ready for encoding or explicit search.
#[derive(Debug, Clone)]
pub struct TiisModel {
    pub protocol: String,
    pub scenario: String,
    pub sessions: u32,
    pub signature: Signature,
    /// Roles followed by the intruder.
    pub agents: Vec<AgentId>,
    pub exec_steps: Vec<ExecStep>,
    pub universe: TermUniverse,
    pub rules: Vec<DerivationRule>,
    pub depth: usize,
    pub strata: Strata,
    pub initial_knowledge: BTreeMap<AgentId, Knowledge>,
    /// Generation step of every fresh term, keyed by universe id.
    pub generation: BTreeMap<usize, StepRef>,
    pub eavesdrop: bool,
    pub goal: Goal,
    /// Universe ids of the secret instances named by the goal.
    pub secret_ids: Vec<usize>,
}

impl TiisModel {
    pub fn step(&self, r: StepRef) -> Option<&ExecStep> {
        self.exec_steps.iter().find(|s| s.id() == r)
    }

    /// Number of steps of session `sid`.
    pub fn session_len(&self, sid: u32) -> usize {
        self.exec_steps.iter().filter(|s| s.sid == sid).count()
    }

    pub fn intruder(&self) -> &AgentId {
        self.agents.last().expect("intruder is always present")
    }

    /// Agents that absorb the root of a message sent in `step`.
    pub fn observers(&self, step: &ExecStep) -> Vec<AgentId> {
        let mut out = vec![step.receiver.clone()];
        if self.eavesdrop && !step.receiver.is_intruder() && !step.sender.is_intruder() {
            out.push(AgentId::intruder());
        }
        out
    }

    pub fn dump_json(&self) -> String {
        #[derive(Serialize)]
        struct Dump<'a> {
            protocol: &'a str,
            scenario: &'a str,
            sessions: u32,
            depth: usize,
            strata: Strata,
            eavesdrop: bool,
            agents: Vec<&'a str>,
            universe: Vec<UniverseEntry>,
            rules: &'a [DerivationRule],
            exec_steps: Vec<StepDump>,
            initial_knowledge: BTreeMap<&'a str, Vec<usize>>,
            generation: Vec<GenDump>,
            goal: GoalDump,
        }
        #[derive(Serialize)]
        struct UniverseEntry {
            id: usize,
            term: String,
            depth: usize,
        }
        #[derive(Serialize)]
        struct StepDump {
            sid: u32,
            step: usize,
            sender: String,
            receiver: String,
            message: String,
            min_delay: String,
            gated: bool,
            lifetime_checks: Vec<(String, String)>,
        }
        #[derive(Serialize)]
        struct GenDump {
            term: usize,
            sid: u32,
            step: usize,
        }
        #[derive(Serialize)]
        struct GoalDump {
            secret: String,
            secret_ids: Vec<usize>,
            require_complete: Vec<u32>,
        }
        let dump = Dump {
            protocol: &self.protocol,
            scenario: &self.scenario,
            sessions: self.sessions,
            depth: self.depth,
            strata: self.strata,
            eavesdrop: self.eavesdrop,
            agents: self.agents.iter().map(AgentId::as_str).collect(),
            universe: self
                .universe
                .terms()
                .iter()
                .enumerate()
                .map(|(id, t)| UniverseEntry {
                    id,
                    term: t.to_string(),
                    depth: t.depth(),
                })
                .collect(),
            rules: &self.rules,
            exec_steps: self
                .exec_steps
                .iter()
                .map(|s| StepDump {
                    sid: s.sid,
                    step: s.index,
                    sender: s.sender.to_string(),
                    receiver: s.receiver.to_string(),
                    message: s.message.to_string(),
                    min_delay: format_pq(&s.min_delay),
                    gated: s.gated,
                    lifetime_checks: s
                        .lifetime_checks
                        .iter()
                        .map(|(t, l)| (t.to_string(), format_pq(l)))
                        .collect(),
                })
                .collect(),
            initial_knowledge: self
                .initial_knowledge
                .iter()
                .map(|(a, k)| (a.as_str(), k.iter().copied().collect()))
                .collect(),
            generation: self
                .generation
                .iter()
                .map(|(&term, &(sid, step))| GenDump { term, sid, step })
                .collect(),
            goal: GoalDump {
                secret: self.goal.secret.clone(),
                secret_ids: self.secret_ids.clone(),
                require_complete: self.goal.require_complete.iter().copied().collect(),
            },
        };
        serde_json::to_string_pretty(&dump).expect("model dump serializes")
    }

    /// Ciphers addressed to honest receivers that they cannot open when the
    /// steps run in plain session order.
    pub fn honest_warnings(&self) -> Vec<String> {
        let mut know: BTreeMap<&AgentId, Knowledge> = self
            .initial_knowledge
            .iter()
            .map(|(a, k)| (a, closure(k, &self.rules)))
            .collect();
        let mut out = Vec::new();
        for s in &self.exec_steps {
            // Senders composed what they send.
            if let (Some(id), Some(k)) = (self.universe.id(&s.message), know.get_mut(&s.sender)) {
                k.insert(id);
                *k = closure(k, &self.rules);
            }
            if s.receiver.is_intruder() {
                continue;
            }
            let k = know.get_mut(&s.receiver).expect("receiver is an agent");
            if let Some(id) = self.universe.id(&s.message) {
                k.insert(id);
            }
            *k = closure(k, &self.rules);
            let mut stack = vec![&s.message];
            while let Some(t) = stack.pop() {
                match t {
                    Term::Pair(l, r) => {
                        stack.push(l);
                        stack.push(r);
                    }
                    Term::Cipher(..) if !opens(k, &self.universe, t) => {
                        out.push(format!(
                            "step ({},{}): {} cannot decrypt {}",
                            s.sid, s.index, s.receiver, t
                        ));
                    }
                    _ => {}
                }
            }
        }
        out
    }
}

fn opens(k: &Knowledge, universe: &TermUniverse, cipher: &Term) -> bool {
    match cipher {
        Term::Cipher(key, _) => key
            .inverse_key()
            .ok()
            .and_then(|i| universe.id(&i))
            .is_some_and(|i| k.contains(&i)),
        _ => false,
    }
}

/// Replicates, overrides and compiles a protocol into a [`TiisModel`].
pub fn build_model(spec: &ProtocolSpec, scenario: &Scenario, k: u32) -> Result<TiisModel, ModelError> {
    let exec_steps = apply_overrides(spec, scenario, k)?;
    let goal = resolve_goal(spec, scenario, &exec_steps, k)?;
    let mut agents = spec.roles.clone();
    agents.push(AgentId::intruder());
    let universe = build_universe(&exec_steps, &agents, &scenario.compromised);

    let mut generation = BTreeMap::new();
    for (id, t) in universe.terms().iter().enumerate() {
        if t.as_fresh().is_some() {
            let g = generation_step(&exec_steps, t).ok_or_else(|| ModelError::OrphanFresh(t.to_string()))?;
            generation.insert(id, g);
        }
    }

    let initial_knowledge = agents
        .iter()
        .map(|a| (a.clone(), initial_knowledge(a, &universe, &scenario.compromised)))
        .collect();
    let rules = compile_rules(&universe);
    let secret_ids: Vec<usize> = secret_instances(spec, &goal, k)
        .iter()
        .filter_map(|t| universe.id(t))
        .collect();
    if secret_ids.is_empty() {
        return Err(ModelError::SecretNotInUniverse(goal.secret.clone()));
    }
    Ok(TiisModel {
        protocol: spec.name.clone(),
        scenario: scenario.name.clone(),
        sessions: k,
        signature: spec.signature(),
        agents,
        depth: universe.depth(),
        strata: Strata::for_universe(&universe),
        exec_steps,
        universe,
        rules,
        initial_knowledge,
        generation,
        eavesdrop: scenario.eavesdrop,
        goal,
        secret_ids,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::{parse_protocol, parse_scenario};
    use crate::term::parse_term;

    const NSPK: &str = "\
name: NSPK_T
roles: A B
fresh: Ta by A class nonce lifetime 10
fresh: Tb by B class nonce lifetime 10
goal: secrecy Tb sid any
step 1: A -> B : <KB, Ta | A> delay 1
step 2: B -> A : <KA, Ta | Tb> delay 1
step 3: A -> B : <KB, Tb> delay 1
";

    fn fair(k: u32) -> (ProtocolSpec, TiisModel) {
        let spec = parse_protocol(NSPK).unwrap();
        let m = build_model(&spec, &Scenario::fair(), k).unwrap();
        (spec, m)
    }

    fn ids(m: &TiisModel, terms: &[&str]) -> Knowledge {
        terms
            .iter()
            .map(|s| m.universe.id(&parse_term(s, &m.signature).unwrap()).unwrap())
            .collect()
    }

    #[test]
    fn universe_of_fair_nspk() {
        let (_, m) = fair(1);
        for s in [
            "<KB,Ta#1|A>", "Ta#1|A", "Ta#1", "A", "KB", "KB'", "KA", "KA'", "<KA,Ta#1|Tb#1>",
            "Tb#1", "<KB,Tb#1>", "B", "I", "KI", "KI'",
        ] {
            assert!(m.universe.contains(&parse_term(s, &m.signature).unwrap()), "{s}");
        }
        for t in m.universe.terms() {
            for s in t.subterms() {
                assert!(m.universe.contains(&s));
            }
            if t.is_key() {
                assert!(m.universe.contains(&t.inverse_key().unwrap()));
            }
        }
        assert_eq!(m.depth, 3);
    }

    #[test]
    fn empty_universe_has_identities_and_intruder_keys() {
        let agents = vec![AgentId::new("A").unwrap(), AgentId::intruder()];
        let u = build_universe(&[], &agents, &[]);
        let names: Vec<String> = u.terms().iter().map(|t| t.to_string()).collect();
        assert_eq!(names, vec!["A", "I", "KI", "KI'"]);
    }

    #[test]
    fn initial_knowledge_per_agent() {
        let (_, m) = fair(1);
        let a = AgentId::new("A").unwrap();
        assert_eq!(m.initial_knowledge[&a], ids(&m, &["A", "B", "I", "KA", "KB", "KI", "KA'"]));
        assert_eq!(
            m.initial_knowledge[&AgentId::intruder()],
            ids(&m, &["A", "B", "I", "KA", "KB", "KI", "KI'"])
        );
        let ta = ids(&m, &["Ta#1"]);
        assert!(m.initial_knowledge.values().all(|k| k.is_disjoint(&ta)));
    }

    #[test]
    fn rule_counts_follow_schema() {
        let (_, m) = fair(1);
        let pairs = m.universe.terms().iter().filter(|t| matches!(t, Term::Pair(..))).count();
        let ciphers: Vec<&Term> = m
            .universe
            .terms()
            .iter()
            .filter(|t| matches!(t, Term::Cipher(..)))
            .collect();
        let with_inv = ciphers
            .iter()
            .filter(|c| match c {
                Term::Cipher(k, _) => m.universe.contains(&k.inverse_key().unwrap()),
                _ => false,
            })
            .count();
        assert_eq!(
            m.rules.len(),
            3 * pairs + 2 * with_inv + (ciphers.len() - with_inv)
        );
        let u = TermUniverse::from_terms([Term::ident("A")]);
        assert!(compile_rules(&u).is_empty());

        let tb = m.universe.id(&parse_term("Tb#1", &m.signature).unwrap()).unwrap();
        let dec = m
            .rules
            .iter()
            .find(|r| r.kind == RuleKind::Decrypt && r.conclusion == tb)
            .unwrap();
        let c = m.universe.id(&parse_term("<KB,Tb#1>", &m.signature).unwrap()).unwrap();
        let kb = m.universe.id(&parse_term("KB'", &m.signature).unwrap()).unwrap();
        assert_eq!(dec.premises, vec![c, kb]);
    }

    #[test]
    fn closure_examples() {
        let (_, m) = fair(1);
        let got = closure(&ids(&m, &["<KB,Tb#1>", "KB'"]), &m.rules);
        assert!(got.is_superset(&ids(&m, &["Tb#1"])));
        assert!(closure(&Knowledge::new(), &m.rules).is_empty());
        let s = ids(&m, &["<KB,Ta#1|A>", "KB'"]);
        assert_eq!(closure(&closure(&s, &m.rules), &m.rules), closure(&s, &m.rules));
    }

    #[test]
    fn constructibility() {
        let (_, m) = fair(1);
        let t = parse_term("<KB,Ta#1|A>", &m.signature).unwrap();
        assert!(constructible(&ids(&m, &["KB", "Ta#1", "A"]), &m.rules, &m.universe, &t));
        assert!(constructible(&ids(&m, &["<KB,Ta#1|A>"]), &m.rules, &m.universe, &t));
        assert!(!constructible(&ids(&m, &["KB", "A"]), &m.rules, &m.universe, &t));
        let ta = parse_term("Ta#1", &m.signature).unwrap();
        assert!(!constructible(&Knowledge::new(), &m.rules, &m.universe, &ta));
    }

    #[test]
    fn generation_points() {
        let (_, m) = fair(1);
        let g = |s: &str| m.generation[&ids(&m, &[s]).into_iter().next().unwrap()];
        assert_eq!(g("Ta#1"), (1, 1));
        assert_eq!(g("Tb#1"), (1, 2));
        assert_eq!(m.exec_steps.len(), 3);
        let (_, m2) = fair(2);
        let ta2 = m2.universe.id(&parse_term("Ta#2", &m2.signature).unwrap()).unwrap();
        assert_eq!(m2.generation[&ta2], (2, 1));
    }

    #[test]
    fn cross_session_generation() {
        let spec = parse_protocol(NSPK).unwrap();
        let sc = parse_scenario(
            r#"{"name":"m","overrides":[
                {"sid":1,"step":1,"kind":"replace","edge":"A->I","L":"<KI,Ta#1|A>"},
                {"sid":2,"step":1,"kind":"intruder","edge":"I->B","L":"<KB,Ta#1|A>"}]}"#,
            &spec.signature(),
        )
        .unwrap();
        let m = build_model(&spec, &sc, 2).unwrap();
        let ta1 = m.universe.id(&parse_term("Ta#1", &m.signature).unwrap()).unwrap();
        assert_eq!(m.generation[&ta1], (1, 1));
        assert!(m.exec_steps[3].message.contains(m.universe.term(ta1)));
    }

    #[test]
    fn orphan_compromised_fresh() {
        let spec = parse_protocol(NSPK).unwrap();
        let sc = parse_scenario(r#"{"name":"c","overrides":[],"compromised":["Ta#5"]}"#, &spec.signature()).unwrap();
        assert!(matches!(build_model(&spec, &sc, 1), Err(ModelError::OrphanFresh(_))));
    }

    #[test]
    fn fair_nspk_is_well_formed() {
        let (_, m) = fair(2);
        assert!(m.honest_warnings().is_empty());
        let dump = m.dump_json();
        assert_eq!(dump, fair(2).1.dump_json());
        assert!(dump.contains("\"exec_steps\""));
    }
}
