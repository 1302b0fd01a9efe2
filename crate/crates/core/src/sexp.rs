//! Minimal S-expression reader for solver replies.

use std::fmt;

use thiserror::Error;

use crate::time::{parse_time, Time};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Sexp {
    Atom(String),
    List(Vec<Sexp>),
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("s-expression error at byte {offset}: {msg}")]
pub struct SexpError {
    pub offset: usize,
    pub msg: String,
}

impl fmt::Display for Sexp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sexp::Atom(a) => f.write_str(a),
            Sexp::List(items) => {
                f.write_str("(")?;
                for (i, x) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(" ")?;
                    }
                    write!(f, "{x}")?;
                }
                f.write_str(")")
            }
        }
    }
}

/// Parses every top-level expression in `text`; `;` comments are skipped.
pub fn parse_all(text: &str) -> Result<Vec<Sexp>, SexpError> {
    let b = text.as_bytes();
    let mut pos = 0;
    let mut stack: Vec<Vec<Sexp>> = vec![Vec::new()];
    let err = |offset: usize, msg: &str| SexpError {
        offset,
        msg: msg.to_string(),
    };
    while pos < b.len() {
        match b[pos] {
            c if c.is_ascii_whitespace() => pos += 1,
            b';' => {
                while pos < b.len() && b[pos] != b'\n' {
                    pos += 1;
                }
            }
            b'(' => {
                stack.push(Vec::new());
                pos += 1;
            }
            b')' => {
                if stack.len() == 1 {
                    return Err(err(pos, "unbalanced `)`"));
                }
                let done = stack.pop().expect("non-empty");
                stack.last_mut().expect("non-empty").push(Sexp::List(done));
                pos += 1;
            }
            b'"' | b'|' => {
                let close = b[pos];
                let start = pos;
                pos += 1;
                loop {
                    match b.get(pos) {
                        None => return Err(err(start, "unterminated literal")),
                        // `""` escapes a quote inside SMT-LIB strings.
                        Some(&c) if c == close && close == b'"' && b.get(pos + 1) == Some(&b'"') => pos += 2,
                        Some(&c) if c == close => {
                            pos += 1;
                            break;
                        }
                        Some(_) => pos += 1,
                    }
                }
                stack
                    .last_mut()
                    .expect("non-empty")
                    .push(Sexp::Atom(text[start..pos].to_string()));
            }
            _ => {
                let start = pos;
                while pos < b.len()
                    && !b[pos].is_ascii_whitespace()
                    && !matches!(b[pos], b'(' | b')' | b';' | b'"')
                {
                    pos += 1;
                }
                stack
                    .last_mut()
                    .expect("non-empty")
                    .push(Sexp::Atom(text[start..pos].to_string()));
            }
        }
    }
    if stack.len() != 1 {
        return Err(err(b.len(), "unbalanced `(`"));
    }
    Ok(stack.pop().expect("root"))
}

/// A model value reported by the solver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Value {
    Bool(bool),
    Real(Time),
}

impl Value {
    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            Value::Real(_) => None,
        }
    }

    pub fn as_real(&self) -> Option<Time> {
        match self {
            Value::Real(r) => Some(*r),
            Value::Bool(_) => None,
        }
    }
}

/// Reads `true`/`false`, integers, decimals, `(/ p q)` and `(- x)`.
pub fn value_of(e: &Sexp) -> Option<Value> {
    match e {
        Sexp::Atom(a) if a == "true" => Some(Value::Bool(true)),
        Sexp::Atom(a) if a == "false" => Some(Value::Bool(false)),
        _ => rational_of(e).map(Value::Real),
    }
}

fn rational_of(e: &Sexp) -> Option<Time> {
    match e {
        Sexp::Atom(a) if a.starts_with(|c: char| c.is_ascii_digit()) => parse_time(a),
        Sexp::List(items) => match items.as_slice() {
            [Sexp::Atom(op), x] if op == "-" => rational_of(x).map(|v| -v),
            [Sexp::Atom(op), p, q] if op == "/" => {
                let q = rational_of(q)?;
                if q == Time::from_integer(0) {
                    return None;
                }
                Some(rational_of(p)? / q)
            }
            _ => None,
        },
        _ => None,
    }
}

/// SMT-LIB rendering of a rational, for round-trip checks.
pub fn print_rational(q: &Time) -> String {
    crate::time::smt_real(q)
}

/// Decodes a `(get-value ...)` reply into (symbol, value) pairs.
pub fn parse_get_value(text: &str) -> Result<Vec<(String, Value)>, SexpError> {
    let top = parse_all(text)?;
    let [Sexp::List(pairs)] = top.as_slice() else {
        return Err(SexpError {
            offset: 0,
            msg: "expected a single list".into(),
        });
    };
    let mut out = Vec::with_capacity(pairs.len());
    for p in pairs {
        match p {
            Sexp::List(kv) if kv.len() == 2 => {
                let Sexp::Atom(name) = &kv[0] else {
                    return Err(SexpError {
                        offset: 0,
                        msg: format!("bad binding {p}"),
                    });
                };
                let v = value_of(&kv[1]).ok_or_else(|| SexpError {
                    offset: 0,
                    msg: format!("unsupported value {}", kv[1]),
                })?;
                out.push((name.clone(), v));
            }
            other => {
                return Err(SexpError {
                    offset: 0,
                    msg: format!("bad binding {other}"),
                })
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_nested() {
        let e = parse_all("(a (b c) \"x y\" |q r|) ; tail\nz").unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e[0].to_string(), "(a (b c) \"x y\" |q r|)");
        assert!(parse_all("(a").is_err());
        assert!(parse_all("a)").is_err());
    }

    #[test]
    fn reads_get_value() {
        let v = parse_get_value("((x true)\n (y (/ 3.0 2.0))\n (z (- 4.0)) (w 7) (u 0.25))").unwrap();
        assert_eq!(v[0], ("x".into(), Value::Bool(true)));
        assert_eq!(v[1].1, Value::Real(Time::new(3, 2)));
        assert_eq!(v[2].1, Value::Real(Time::from_integer(-4)));
        assert_eq!(v[3].1, Value::Real(Time::from_integer(7)));
        assert_eq!(v[4].1, Value::Real(Time::new(1, 4)));
        assert_eq!(
            parse_get_value("((y (- (/ 1.0 3.0))))").unwrap()[0].1,
            Value::Real(Time::new(-1, 3))
        );
        assert!(parse_get_value("((x (foo)))").is_err());
    }

    proptest! {
        #[test]
        fn rationals_round_trip(p in -100_000i64..100_000, q in 1i64..10_000) {
            let r = Time::new(p, q);
            let e = parse_all(&print_rational(&r)).unwrap();
            prop_assert_eq!(value_of(&e[0]), Some(Value::Real(r)));
        }
    }
}
