//! Acceptance gate: one PASS/FAIL line per criterion, non-zero exit on any failure.

use std::collections::{BTreeMap, BTreeSet};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use sha2::{Digest, Sha256};

use tspbmc::library;
use tspbmc::model::{build_model, closure, stratified_closure, Knowledge, TiisModel};
use tspbmc::oracle::{explicit_reach, OracleOutcome};
use tspbmc::protocol::{parse_protocol, parse_scenario};
use tspbmc::solver::{iterate_bounds, Outcome, SolverConfig};
use tspbmc::term::{parse_term, AgentId, Fresh, FreshClass, Signature, Term};
use tspbmc::witness::{decode, parse_json, render_json, replay, Trace, ViolationKind};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
    wall: Duration,
}

fn tspbmc(args: &[&str]) -> Run {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_tspbmc"))
        .args(args)
        .output()
        .expect("binary runs");
    Run {
        code: out.status.code().unwrap_or(-1),
        stdout: String::from_utf8_lossy(&out.stdout).into_owned(),
        stderr: String::from_utf8_lossy(&out.stderr).into_owned(),
        wall: start.elapsed(),
    }
}

fn model(p: &str, s: &str, k: u32) -> TiisModel {
    let e = library::find(p).unwrap();
    let spec = parse_protocol(e.protocol).unwrap();
    let sc = parse_scenario(e.scenario(s).unwrap(), &spec.signature()).unwrap();
    build_model(&spec, &sc, k).unwrap()
}

/// Every library (protocol, scenario, k) that instantiates, k in 1..=2.
fn library_instances() -> Vec<(String, String, u32, TiisModel)> {
    let mut out = Vec::new();
    for e in library::LIBRARY {
        let spec = parse_protocol(e.protocol).unwrap();
        for (name, text) in e.scenarios {
            let sc = parse_scenario(text, &spec.signature()).unwrap();
            for k in 1..=2 {
                if let Ok(m) = build_model(&spec, &sc, k) {
                    out.push((e.name.to_string(), name.to_string(), k, m));
                }
            }
        }
    }
    out
}

fn oracle_depth(m: &TiisModel, depth: usize) -> Option<usize> {
    explicit_reach(m, depth).unwrap().attack_depth()
}

/// Shared tally of every sat result seen and whether it replayed.
#[derive(Default)]
struct SatLog {
    total: usize,
    invalid: Vec<String>,
}

impl SatLog {
    fn record(&mut self, label: &str, m: &TiisModel, trace: &Trace) {
        self.total += 1;
        if let Err(v) = replay(trace, m) {
            self.invalid.push(format!("{label}: {v}"));
        }
    }
}

fn c1_fair_safety() -> Check {
    let r = tspbmc(&["check", "nspkt", "fair", "--sessions", "1", "--max-bound", "6"]);
    ensure!(r.code == 0, "check exit {} ({})", r.code, r.stderr.trim());
    ensure!(r.stdout.contains("no attack up to bound 6"), "stdout: {}", r.stdout.trim());
    ensure!(r.wall < Duration::from_secs(5), "check took {:?}", r.wall);
    let o = tspbmc(&["oracle", "nspkt", "fair", "--sessions", "1", "--depth", "6"]);
    ensure!(o.code == 0, "oracle exit {}", o.code);
    Ok(format!("check exit 0 in {:.2}s, oracle depth 6 agrees", r.wall.as_secs_f64()))
}

fn c2_mitm(sat: &mut SatLog) -> Check {
    let m = model("nspkt", "mitm1_lowe", 2);
    let pinned = oracle_depth(&m, 12).ok_or("oracle finds no attack")?;
    let r = tspbmc(&["check", "nspkt", "mitm1_lowe", "--sessions", "2", "--format", "json"]);
    ensure!(r.code == 10, "check exit {} ({})", r.code, r.stderr.trim());
    ensure!(r.wall < Duration::from_secs(30), "check took {:?}", r.wall);
    let trace = parse_json(&r.stdout, &m.signature).map_err(|e| e.to_string())?;
    ensure!(trace.bound == pinned, "attack bound {} but oracle minimum {pinned}", trace.bound);
    sat.record("mitm1_lowe cli", &m, &trace);
    replay(&trace, &m).map_err(|v| v.to_string())?;
    let intruder = AgentId::intruder();
    ensure!(
        trace
            .events
            .iter()
            .any(|e| e.deltas.get(&intruder).is_some_and(|d| d.contains(&trace.goal.secret))),
        "no event shows I gaining {}",
        trace.goal.secret
    );
    let required: Vec<u32> = m.goal.require_complete.iter().copied().collect();
    ensure!(
        required.iter().all(|s| trace.goal.completed_sessions.contains(s)),
        "required sessions {required:?} not all complete"
    );
    Ok(format!(
        "exit 10 at bound {} = oracle minimum, replay valid, I learns {}, sessions {:?} complete, {:.2}s",
        trace.bound,
        trace.goal.secret,
        trace.goal.completed_sessions,
        r.wall.as_secs_f64()
    ))
}

fn c3_lowe_fix() -> Check {
    let r = tspbmc(&["check", "nspkt_lowe_fixed", "mitm1_lowe_adapted", "--sessions", "2", "--max-bound", "8"]);
    ensure!(r.code == 0, "check exit {} ({})", r.code, r.stderr.trim());
    let m = model("nspkt_lowe_fixed", "mitm1_lowe_adapted", 2);
    ensure!(oracle_depth(&m, 8).is_none(), "oracle finds an attack");
    Ok("exit 0 up to bound 8, oracle agrees".into())
}

fn c4_wmf_lifetime(sat: &mut SatLog) -> Check {
    // The two scenarios must differ only in the lifetime override.
    let e = library::find("wmf").unwrap();
    let strip = |name: &str| {
        let mut v: serde_json::Value = serde_json::from_str(e.scenario(name).unwrap()).unwrap();
        v.as_object_mut().unwrap().remove("name");
        for o in v["overrides"].as_array_mut().unwrap() {
            o.as_object_mut().unwrap().remove("lifetime");
        }
        v
    };
    ensure!(strip("replay_stale") == strip("replay_longlife"), "scenarios differ beyond lifetimes");

    let mut notes = Vec::new();
    for (scenario, want) in [("replay_longlife", 10), ("replay_stale", 0)] {
        let m = model("wmf", scenario, 2);
        let limit = 2 * m.exec_steps.len();
        let pinned = oracle_depth(&m, limit);
        let r = tspbmc(&["check", "wmf", scenario, "--sessions", "2", "--format", "json"]);
        ensure!(r.code == want, "{scenario}: exit {} want {want} ({})", r.code, r.stderr.trim());
        ensure!(r.wall < Duration::from_secs(30), "{scenario} took {:?}", r.wall);
        if want == 10 {
            let t = parse_json(&r.stdout, &m.signature).map_err(|e| e.to_string())?;
            sat.record("wmf cli", &m, &t);
            ensure!(pinned == Some(t.bound), "{scenario}: bound {} vs oracle {pinned:?}", t.bound);
        } else {
            ensure!(pinned.is_none(), "{scenario}: oracle finds depth {pinned:?}");
        }
        notes.push(format!("{scenario} exit {} ({:.2}s)", r.code, r.wall.as_secs_f64()));
    }
    Ok(format!("{}; oracle agrees", notes.join(", ")))
}

fn c5_sweep(instances: &[(String, String, u32, TiisModel)], sat: &mut SatLog) -> Check {
    let start = Instant::now();
    let cfg = SolverConfig { max_bound: Some(8), ..SolverConfig::default() };
    let mut disagreements = Vec::new();
    let mut attacks = 0;
    for (p, s, k, m) in instances {
        let label = format!("{p}/{s} k={k}");
        let oracle = oracle_depth(m, 8);
        let smt = match iterate_bounds(m, &cfg).map_err(|e| e.to_string())?.outcome {
            Outcome::AttackFound { bound, result, script } => {
                match decode(&result, &script, m) {
                    Ok(t) => sat.record(&label, m, &t),
                    Err(e) => sat.invalid.push(format!("{label}: decode: {e}")),
                }
                Some(bound)
            }
            Outcome::NoAttackUpTo(_) => None,
            Outcome::Inconclusive(r) => return Err(format!("{label}: inconclusive: {r}")),
        };
        attacks += usize::from(smt.is_some());
        if smt != oracle {
            disagreements.push(format!("{label}: smt {smt:?} oracle {oracle:?}"));
        }
    }
    let wall = start.elapsed();
    ensure!(disagreements.is_empty(), "{}", disagreements.join("; "));
    ensure!(wall < Duration::from_secs(600), "sweep took {wall:?}");
    Ok(format!(
        "{} instances, {attacks} attacks, 0 disagreements, {:.1}s",
        instances.len(),
        wall.as_secs_f64()
    ))
}

fn random_subset(rng: &mut StdRng, n: usize) -> Knowledge {
    let take = rng.gen_range(0..=n.min(12));
    (0..take).map(|_| rng.gen_range(0..n)).collect()
}

fn c6_closure(instances: &[(String, String, u32, TiisModel)]) -> Check {
    let mut rng = StdRng::seed_from_u64(6);
    let cases = 1000;
    for law in ["idempotence", "extensivity", "monotonicity"] {
        for _ in 0..cases {
            let (_, _, _, m) = &instances[rng.gen_range(0..instances.len())];
            let n = m.universe.len();
            let s = random_subset(&mut rng, n);
            let c = closure(&s, &m.rules);
            let ok = match law {
                "idempotence" => closure(&c, &m.rules) == c,
                "extensivity" => s.is_subset(&c),
                _ => {
                    let mut big = s.clone();
                    big.extend(random_subset(&mut rng, n));
                    c.is_subset(&closure(&big, &m.rules))
                }
            };
            ensure!(ok, "{law} fails on {}/{}", m.protocol, m.scenario);
        }
    }
    // Stratified closure against the fixpoint: exhaustively over every
    // agent's initial knowledge plus any subset of message roots, and on
    // random arbitrary sets.
    let mut exhaustive = 0usize;
    for (p, s, k, m) in instances {
        let roots: Vec<usize> = m
            .exec_steps
            .iter()
            .map(|st| m.universe.id(&st.message).unwrap())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        for a in &m.agents {
            for mask in 0u32..(1 << roots.len()) {
                let mut kn = m.initial_knowledge[a].clone();
                kn.extend(roots.iter().enumerate().filter(|(b, _)| mask >> b & 1 == 1).map(|(_, r)| *r));
                ensure!(
                    stratified_closure(&kn, &m.rules, m.strata) == closure(&kn, &m.rules),
                    "stratified closure short of fixpoint on {p}/{s} k={k} for {a}"
                );
                exhaustive += 1;
            }
        }
        for _ in 0..200 {
            let kn = random_subset(&mut rng, m.universe.len());
            ensure!(
                stratified_closure(&kn, &m.rules, m.strata) == closure(&kn, &m.rules),
                "stratified closure short of fixpoint on {p}/{s} k={k} (random set)"
            );
        }
    }
    Ok(format!(
        "{cases} cases each for idempotence/extensivity/monotonicity; stratified = fixpoint on {exhaustive} state-shaped and {} random sets over {} universes",
        200 * instances.len(),
        instances.len()
    ))
}

fn renumber(mut t: Trace) -> Trace {
    for (i, e) in t.events.iter_mut().enumerate() {
        e.position = i + 1;
    }
    t
}

fn c7_witness(sat: &SatLog) -> Check {
    ensure!(sat.total > 0, "no sat results recorded");
    ensure!(sat.invalid.is_empty(), "{}", sat.invalid.join("; "));
    let m = model("nspkt", "mitm1_lowe", 2);
    let OracleOutcome::AttackFound { trace, .. } = explicit_reach(&m, 8).unwrap() else {
        return Err("no mitm trace".into());
    };
    let pos = |r| trace.events.iter().position(|e| e.id() == r).unwrap();

    let mut swapped = trace.clone();
    swapped.events.swap(pos((1, 1)), pos((1, 2)));
    let v = replay(&renumber(swapped), &m).err().ok_or("swapped order accepted")?;
    ensure!(v.kind == ViolationKind::SessionOrder, "swap gave {v}");

    let mut prefix = trace.clone();
    prefix.events = vec![trace.events[pos((1, 1))].clone(), trace.events[pos((1, 2))].clone()];
    let v = replay(&renumber(prefix), &m).err().ok_or("gating-violating prefix accepted")?;
    ensure!(v.kind == ViolationKind::Gating, "prefix gave {v}");

    Ok(format!(
        "{}/{} sat results replay valid; swapped order -> session order, premature forward -> gating",
        sat.total, sat.total
    ))
}

fn c8_determinism(instances: &[(String, String, u32, TiisModel)]) -> Check {
    for (p, s, k, _) in instances {
        let k = k.to_string();
        let enc = ["encode", p.as_str(), s.as_str(), "--sessions", &k, "--bound", "3"];
        let dump = ["dump-model", p.as_str(), s.as_str(), "--sessions", &k];
        for args in [&enc[..], &dump[..]] {
            let a = tspbmc(args);
            let b = tspbmc(args);
            ensure!(a.code == 0, "{args:?} exit {}", a.code);
            ensure!(a.stdout == b.stdout, "{args:?} differs between runs");
        }
    }
    // Pinned digests catch any platform- or build-dependent output.
    let pinned = [
        (
            &["encode", "nspkt", "fair", "--sessions", "1", "--bound", "3"][..],
            "25be73263af4a3cab0684992d65825872a8549d247587a74aa3bedc3668b7345",
        ),
        (&["dump-model", "nspkt", "fair", "--sessions", "1"][..], "10128531a527e4f0d57c8ec631d0e8ca40eb4aa41d722a0e4510494c19d9e0a1"),
    ];
    for (args, want) in pinned {
        let got = hex(&Sha256::digest(tspbmc(args).stdout.as_bytes()));
        ensure!(got == want, "{args:?} digest {got}, pinned {want}");
    }
    Ok(format!("encode and dump-model byte-identical for {} instances; pinned digests match", instances.len()))
}

fn hex(b: &[u8]) -> String {
    b.iter().map(|x| format!("{x:02x}")).collect()
}

fn random_term(rng: &mut StdRng, depth: usize) -> Term {
    let agents = ["A", "B", "S", "I"];
    let agent = |rng: &mut StdRng| AgentId::new(agents[rng.gen_range(0..4)]).unwrap();
    let key = |rng: &mut StdRng| match rng.gen_range(0..3) {
        0 => Term::PubKey(agent(rng)),
        1 => Term::PrivKey(agent(rng)),
        _ => loop {
            let (a, b) = (agent(rng), agent(rng));
            if a != b {
                break Term::sym_key(a, b);
            }
        },
    };
    if depth == 0 || rng.gen_bool(0.3) {
        return match rng.gen_range(0..3) {
            0 => Term::Ident(agent(rng)),
            1 => key(rng),
            _ => Term::Fresh(Fresh {
                name: "Na".into(),
                owner: AgentId::new("A").unwrap(),
                sid: Some(rng.gen_range(0..4)).filter(|s| *s > 0),
                class: FreshClass::Nonce,
            }),
        };
    }
    if rng.gen_bool(0.5) {
        Term::pair(random_term(rng, depth - 1), random_term(rng, depth - 1))
    } else {
        Term::cipher(key(rng), random_term(rng, depth - 1))
    }
}

fn c9_round_trips(instances: &[(String, String, u32, TiisModel)]) -> Check {
    let mut sig = Signature::new(["A", "B", "S"].map(|a| AgentId::new(a).unwrap()));
    sig.declare_fresh("Na", AgentId::new("A").unwrap(), FreshClass::Nonce);
    let mut rng = StdRng::seed_from_u64(9);
    let n = 2000;
    for _ in 0..n {
        let t = random_term(&mut rng, 5);
        let text = t.to_string();
        let back = parse_term(&text, &sig).map_err(|e| format!("`{text}`: {e}"))?;
        ensure!(back == t, "`{text}` re-parses differently");
    }
    let mut traces = 0;
    for (p, s, k, m) in instances {
        if let OracleOutcome::AttackFound { trace, .. } = explicit_reach(m, 8).unwrap() {
            let back = parse_json(&render_json(&trace), &m.signature).map_err(|e| e.to_string())?;
            ensure!(back == trace, "witness JSON round trip differs for {p}/{s} k={k}");
            traces += 1;
        }
    }
    ensure!(traces > 0, "no traces to round-trip");
    Ok(format!("{n}/{n} random terms round-trip; {traces} witness traces round-trip through JSON"))
}

fn main() {
    let instances = library_instances();
    let mut sat = SatLog::default();
    let mut results: BTreeMap<u8, (&str, Check)> = BTreeMap::new();
    results.insert(1, ("fair-run safety", c1_fair_safety()));
    results.insert(2, ("MITM reproduction", c2_mitm(&mut sat)));
    results.insert(3, ("fix resists the attack", c3_lowe_fix()));
    results.insert(4, ("lifetime-gated replay", c4_wmf_lifetime(&mut sat)));
    results.insert(5, ("SMT/oracle equivalence sweep", c5_sweep(&instances, &mut sat)));
    results.insert(6, ("closure properties", c6_closure(&instances)));
    results.insert(7, ("witness soundness", c7_witness(&sat)));
    results.insert(8, ("determinism", c8_determinism(&instances)));
    results.insert(9, ("parser round-trips", c9_round_trips(&instances)));

    let mut failed = 0;
    for (n, (name, r)) in &results {
        match r {
            Ok(detail) => println!("criterion {n} ({name}): PASS - {detail}"),
            Err(why) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL - {why}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
