//! Cryptographic message terms and their textual syntax.
//!
//! Concrete syntax (whitespace between tokens is ignored):
//!
//! ```text
//! Term    := Primary ("|" Term)?
//! Primary := "<" Term "," Term ">" | "(" Term ")" | Atom
//! Atom    := ident | "K" agent | "K" agent "'" | "K" agent agent | fresh ("#" digits)?
//! ```
//!
//! `|` is right-associative, so `x|y|z` is `Pair(x, Pair(y, z))`. Parentheses
//! are only needed (and only rendered) for a pair in left position.
//! Classifying an identifier needs the protocol's [`Signature`]: the declared
//! agents and fresh atoms.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Name of the implicit intruder agent.
pub const INTRUDER: &str = "I";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AgentId(String);

impl AgentId {
    pub fn new(name: &str) -> Result<Self, TermError> {
        if name.is_empty()
            || !name
                .chars()
                .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit())
            || !name.starts_with(|c: char| c.is_ascii_uppercase())
        {
            return Err(TermError::BadAgentName(name.to_string()));
        }
        Ok(AgentId(name.to_string()))
    }

    pub fn intruder() -> Self {
        AgentId(INTRUDER.to_string())
    }

    pub fn is_intruder(&self) -> bool {
        self.0 == INTRUDER
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for AgentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FreshClass {
    Nonce,
    Timestamp,
    Sesskey,
}

impl FreshClass {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "nonce" => Some(FreshClass::Nonce),
            "timestamp" => Some(FreshClass::Timestamp),
            "sesskey" => Some(FreshClass::Sesskey),
            _ => None,
        }
    }
}

/// A fresh atom (nonce, timestamp or session key), optionally bound to a session.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Fresh {
    pub name: String,
    pub owner: AgentId,
    pub sid: Option<u32>,
    pub class: FreshClass,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Term {
    Ident(AgentId),
    PubKey(AgentId),
    PrivKey(AgentId),
    /// Shared key; the agent pair is kept sorted.
    SymKey(AgentId, AgentId),
    Fresh(Fresh),
    Pair(Box<Term>, Box<Term>),
    Cipher(Box<Term>, Box<Term>),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TermError {
    #[error("syntax error at byte {offset}: {msg}")]
    Syntax { offset: usize, msg: String },
    #[error("cipher key at byte {offset} is not a key: {key}")]
    KeyPosition { offset: usize, key: String },
    #[error("malformed session suffix at byte {offset}")]
    SessionSuffix { offset: usize },
    #[error("unknown atom `{name}` at byte {offset}")]
    UnknownAtom { offset: usize, name: String },
    #[error("invalid agent name `{0}`")]
    BadAgentName(String),
    #[error("not a key: {0}")]
    NotAKey(String),
}

/// Declarations needed to classify identifiers in term text.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Signature {
    agents: BTreeSet<AgentId>,
    fresh: BTreeMap<String, (AgentId, FreshClass)>,
}

impl Signature {
    /// Builds a signature over the given roles; the intruder is always included.
    pub fn new(roles: impl IntoIterator<Item = AgentId>) -> Self {
        let mut agents: BTreeSet<AgentId> = roles.into_iter().collect();
        agents.insert(AgentId::intruder());
        Signature {
            agents,
            fresh: BTreeMap::new(),
        }
    }

    pub fn declare_fresh(&mut self, name: &str, owner: AgentId, class: FreshClass) {
        self.fresh.insert(name.to_string(), (owner, class));
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentId> {
        self.agents.iter()
    }

    pub fn has_agent(&self, name: &str) -> bool {
        self.agents.iter().any(|a| a.as_str() == name)
    }

    pub fn fresh_decl(&self, name: &str) -> Option<&(AgentId, FreshClass)> {
        self.fresh.get(name)
    }

    fn agent(&self, name: &str) -> Option<AgentId> {
        self.agents.iter().find(|a| a.as_str() == name).cloned()
    }

    /// Interprets a bare identifier (no suffix).
    fn classify(&self, ident: &str, primed: bool) -> Option<Term> {
        if let Some((owner, class)) = self.fresh.get(ident) {
            if primed {
                return None;
            }
            return Some(Term::Fresh(Fresh {
                name: ident.to_string(),
                owner: owner.clone(),
                sid: None,
                class: *class,
            }));
        }
        if let Some(a) = self.agent(ident) {
            return (!primed).then_some(Term::Ident(a));
        }
        let rest = ident.strip_prefix('K')?;
        if let Some(a) = self.agent(rest) {
            return Some(if primed {
                Term::PrivKey(a)
            } else {
                Term::PubKey(a)
            });
        }
        if primed {
            return None;
        }
        // Shared key: split the remainder into two distinct agent names.
        for cut in 1..rest.len() {
            if !rest.is_char_boundary(cut) {
                continue;
            }
            let (l, r) = rest.split_at(cut);
            if let (Some(a), Some(b)) = (self.agent(l), self.agent(r)) {
                if a != b {
                    return Some(Term::sym_key(a, b));
                }
            }
        }
        None
    }

    /// True when `name` could be read as an agent or key name.
    pub fn collides(&self, name: &str) -> bool {
        let bare = Signature {
            agents: self.agents.clone(),
            fresh: BTreeMap::new(),
        };
        bare.classify(name, false).is_some()
    }
}

impl Term {
    pub fn ident(name: &str) -> Self {
        Term::Ident(AgentId(name.to_string()))
    }

    pub fn sym_key(a: AgentId, b: AgentId) -> Self {
        if a <= b {
            Term::SymKey(a, b)
        } else {
            Term::SymKey(b, a)
        }
    }

    pub fn pair(l: Term, r: Term) -> Self {
        Term::Pair(Box::new(l), Box::new(r))
    }

    pub fn cipher(k: Term, body: Term) -> Self {
        Term::Cipher(Box::new(k), Box::new(body))
    }

    pub fn is_key(&self) -> bool {
        match self {
            Term::PubKey(_) | Term::PrivKey(_) | Term::SymKey(..) => true,
            Term::Fresh(f) => f.class == FreshClass::Sesskey,
            _ => false,
        }
    }

    pub fn is_atom(&self) -> bool {
        !matches!(self, Term::Pair(..) | Term::Cipher(..))
    }

    /// Constructor nesting depth; atoms have depth 1.
    pub fn depth(&self) -> usize {
        match self {
            Term::Pair(a, b) | Term::Cipher(a, b) => 1 + a.depth().max(b.depth()),
            _ => 1,
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            Term::Pair(a, b) | Term::Cipher(a, b) => 1 + a.node_count() + b.node_count(),
            _ => 1,
        }
    }

    pub fn as_fresh(&self) -> Option<&Fresh> {
        match self {
            Term::Fresh(f) => Some(f),
            _ => None,
        }
    }

    /// This term together with all of its transitive components.
    pub fn subterms(&self) -> BTreeSet<Term> {
        let mut out = BTreeSet::new();
        self.collect_subterms(&mut out);
        out
    }

    fn collect_subterms(&self, out: &mut BTreeSet<Term>) {
        if !out.insert(self.clone()) {
            return;
        }
        if let Term::Pair(a, b) | Term::Cipher(a, b) = self {
            a.collect_subterms(out);
            b.collect_subterms(out);
        }
    }

    pub fn contains(&self, needle: &Term) -> bool {
        self == needle
            || match self {
                Term::Pair(a, b) | Term::Cipher(a, b) => a.contains(needle) || b.contains(needle),
                _ => false,
            }
    }

    /// Fresh atoms occurring in this term, in first-occurrence order.
    pub fn fresh_atoms(&self) -> Vec<&Fresh> {
        let mut out = Vec::new();
        self.walk_fresh(&mut out);
        out
    }

    fn walk_fresh<'a>(&'a self, out: &mut Vec<&'a Fresh>) {
        match self {
            Term::Fresh(f) => {
                if !out.contains(&f) {
                    out.push(f);
                }
            }
            Term::Pair(a, b) | Term::Cipher(a, b) => {
                a.walk_fresh(out);
                b.walk_fresh(out);
            }
            _ => {}
        }
    }

    /// Binds every session-less fresh atom to `sid`; explicit sessions are kept.
    pub fn instantiate(&self, sid: u32) -> Term {
        match self {
            Term::Fresh(f) if f.sid.is_none() => Term::Fresh(Fresh {
                sid: Some(sid),
                ..f.clone()
            }),
            Term::Pair(a, b) => Term::pair(a.instantiate(sid), b.instantiate(sid)),
            Term::Cipher(k, b) => Term::cipher(k.instantiate(sid), b.instantiate(sid)),
            t => t.clone(),
        }
    }

    /// Decryption key for a key-form term under perfect cryptography.
    pub fn inverse_key(&self) -> Result<Term, TermError> {
        match self {
            Term::PubKey(a) => Ok(Term::PrivKey(a.clone())),
            Term::PrivKey(a) => Ok(Term::PubKey(a.clone())),
            t if t.is_key() => Ok(t.clone()),
            t => Err(TermError::NotAKey(t.to_string())),
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Ident(a) => write!(f, "{a}"),
            Term::PubKey(a) => write!(f, "K{a}"),
            Term::PrivKey(a) => write!(f, "K{a}'"),
            Term::SymKey(a, b) => write!(f, "K{a}{b}"),
            Term::Fresh(x) => match x.sid {
                Some(s) => write!(f, "{}#{s}", x.name),
                None => f.write_str(&x.name),
            },
            Term::Pair(l, r) => {
                if matches!(**l, Term::Pair(..)) {
                    write!(f, "({l})|{r}")
                } else {
                    write!(f, "{l}|{r}")
                }
            }
            Term::Cipher(k, b) => write!(f, "<{k},{b}>"),
        }
    }
}

pub fn parse_term(text: &str, sig: &Signature) -> Result<Term, TermError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
        sig,
    };
    p.skip_ws();
    if p.pos == p.src.len() {
        return Err(p.err("empty term"));
    }
    let t = p.term()?;
    p.skip_ws();
    if p.pos != p.src.len() {
        return Err(p.err("trailing input"));
    }
    Ok(t)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    sig: &'a Signature,
}

impl Parser<'_> {
    fn err(&self, msg: &str) -> TermError {
        TermError::Syntax {
            offset: self.pos,
            msg: msg.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), TermError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(&format!("expected `{}`", c as char)))
        }
    }

    fn term(&mut self) -> Result<Term, TermError> {
        let left = self.primary()?;
        if self.peek() == Some(b'|') {
            self.pos += 1;
            let right = self.term()?;
            Ok(Term::pair(left, right))
        } else {
            Ok(left)
        }
    }

    fn primary(&mut self) -> Result<Term, TermError> {
        match self.peek() {
            Some(b'<') => {
                self.pos += 1;
                self.skip_ws();
                let key_at = self.pos;
                let key = self.term()?;
                if !key.is_key() {
                    return Err(TermError::KeyPosition {
                        offset: key_at,
                        key: key.to_string(),
                    });
                }
                self.expect(b',')?;
                let body = self.term()?;
                self.expect(b'>')?;
                Ok(Term::cipher(key, body))
            }
            Some(b'(') => {
                self.pos += 1;
                let t = self.term()?;
                self.expect(b')')?;
                Ok(t)
            }
            Some(c) if c.is_ascii_alphanumeric() || c == b'_' => self.atom(),
            Some(_) => Err(self.err("unexpected character")),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn atom(&mut self) -> Result<Term, TermError> {
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || self.src[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let ident = std::str::from_utf8(&self.src[start..self.pos]).expect("ascii");
        let primed = self.src.get(self.pos) == Some(&b'\'');
        if primed {
            self.pos += 1;
        }
        let mut sid = None;
        if self.src.get(self.pos) == Some(&b'#') {
            let hash = self.pos;
            self.pos += 1;
            let ds = self.pos;
            while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            let digits = std::str::from_utf8(&self.src[ds..self.pos]).expect("ascii");
            match digits.parse::<u32>() {
                Ok(n) if n >= 1 => sid = Some(n),
                _ => return Err(TermError::SessionSuffix { offset: hash }),
            }
        }
        let term = self
            .sig
            .classify(ident, primed)
            .ok_or_else(|| TermError::UnknownAtom {
                offset: start,
                name: ident.to_string(),
            })?;
        match (term, sid) {
            (Term::Fresh(f), Some(s)) => Ok(Term::Fresh(Fresh { sid: Some(s), ..f })),
            (_, Some(_)) => Err(TermError::SessionSuffix { offset: start }),
            (t, None) => Ok(t),
        }
    }
}
