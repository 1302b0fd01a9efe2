//! Exact rational time values.

use num_rational::Rational64;
use num_traits::Zero;

pub type Time = Rational64;

/// Parses `7`, `3/2` or `1.25` into an exact rational.
pub fn parse_time(s: &str) -> Option<Time> {
    let s = s.trim();
    if let Some((p, q)) = s.split_once('/') {
        let p = parse_time(p)?;
        let q = parse_time(q)?;
        if q.is_zero() {
            return None;
        }
        return Some(p / q);
    }
    let (neg, body) = match s.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, s),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) {
        return None;
    }
    let digits = format!("{int}{frac}");
    let numer: i64 = if digits.is_empty() { 0 } else { digits.parse().ok()? };
    let denom = 10i64.checked_pow(frac.len() as u32)?;
    let mut v = Time::new(numer, denom);
    if neg {
        v = -v;
    }
    Some(v)
}

/// `p/q` with the denominator always written.
pub fn format_pq(t: &Time) -> String {
    format!("{}/{}", t.numer(), t.denom())
}

/// SMT-LIB2 real literal (`2.0`, `(/ 3.0 2.0)`, `(- 1.0)`).
pub fn smt_real(t: &Time) -> String {
    let mag = |n: i64| format!("{}.0", n.unsigned_abs());
    let body = if *t.denom() == 1 {
        mag(*t.numer())
    } else {
        format!("(/ {} {})", mag(*t.numer()), mag(*t.denom()))
    };
    if *t.numer() < 0 {
        format!("(- {body})")
    } else {
        body
    }
}
