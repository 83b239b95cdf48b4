//! Attacker and template distinguishability of test cases.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::cores::attacker_trace;
use crate::contracts::{eval_contract, ContractAtom, ContractTemplate};
use crate::cores::{Core, CoreError};
use crate::isa::{records_for_horizon, RetirementRecord};
use crate::testgen::TestCase;

/// Characterization of one test case.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistRecord {
    /// Attacker distinguishable.
    pub d_t: bool,
    /// Strongly-distinguishing atoms (sorted template indices).
    pub sd: Vec<usize>,
    /// Xor-distinguishing pairs `(a, b)` with `a < b`, sorted.
    pub xor: Vec<(usize, usize)>,
    /// Distinguishing atoms: singleton contracts that distinguish the case.
    pub d: Vec<usize>,
}

/// Number of retirements compared for a generated test case.
pub fn arch_horizon(t: &TestCase) -> usize {
    t.left.imem.len().max(t.right.imem.len()) + 2
}

/// Number of simulated cycles for a generated test case.
pub fn cycle_horizon(core: &Core, t: &TestCase) -> usize {
    let len = t.left.imem.len().max(t.right.imem.len());
    core.max_retire_interval() as usize * (len + 1) + 4
}

pub fn attacker_distinguishable(core: &Core, t: &TestCase, n: usize) -> Result<bool, CoreError> {
    Ok(attacker_trace(core, &t.left, n)? != attacker_trace(core, &t.right, n)?)
}

/// Whether the contract made of `atoms` tells the two executions apart
/// within `horizon` retirements, by comparing contract traces directly.
pub fn contract_distinguishable(atoms: &[ContractAtom], t: &TestCase, horizon: usize) -> bool {
    let l = records_for_horizon(&t.left, horizon);
    let r = records_for_horizon(&t.right, horizon);
    eval_contract(atoms, &l) != eval_contract(atoms, &r)
}

/// SD, XOR and D sets from two aligned record sequences.
pub fn characterize_records(
    tmpl: &ContractTemplate,
    left: &[RetirementRecord],
    right: &[RetirementRecord],
) -> DistRecord {
    let n = tmpl.len();
    let mut sd = vec![false; n];
    let mut d = vec![false; n];
    let mut xor = std::collections::BTreeSet::new();
    let groups: Vec<Vec<usize>> = tmpl.groups().into_values().collect();
    for (l, r) in left.iter().zip(right) {
        for g in &groups {
            // Same-id atoms have disjoint classes, so at most one applies on
            // each side.
            let al = g.iter().copied().find(|&a| tmpl.atoms[a].applies(l));
            let ar = g.iter().copied().find(|&a| tmpl.atoms[a].applies(r));
            let expr = &tmpl.atoms[g[0]].leak.expr;
            match (al, ar) {
                (None, None) => {}
                (Some(a), None) => {
                    sd[a] = true;
                    d[a] = true;
                }
                (None, Some(b)) => {
                    sd[b] = true;
                    d[b] = true;
                }
                (Some(a), Some(b)) => {
                    let equal = expr.eval(l) == expr.eval(r);
                    if !equal {
                        sd[a] = true;
                        sd[b] = true;
                    }
                    if a == b {
                        d[a] |= !equal;
                    } else {
                        d[a] = true;
                        d[b] = true;
                        if equal {
                            xor.insert((a.min(b), a.max(b)));
                        }
                    }
                }
            }
        }
    }
    let pick = |v: &[bool]| (0..n).filter(|&i| v[i]).collect();
    DistRecord {
        d_t: false,
        sd: pick(&sd),
        xor: xor.into_iter().collect(),
        d: pick(&d),
    }
}

/// Template characterization over `horizon` retirements (no attacker part).
pub fn characterize_template(tmpl: &ContractTemplate, t: &TestCase, horizon: usize) -> DistRecord {
    let l = records_for_horizon(&t.left, horizon);
    let r = records_for_horizon(&t.right, horizon);
    characterize_records(tmpl, &l, &r)
}

/// Full characterization: template part over `horizon` retirements and the
/// attacker part over `cycles` cycles.
pub fn characterize(
    core: &Core,
    tmpl: &ContractTemplate,
    t: &TestCase,
    horizon: usize,
    cycles: usize,
) -> Result<DistRecord, CoreError> {
    let mut rec = characterize_template(tmpl, t, horizon);
    rec.d_t = attacker_distinguishable(core, t, cycles)?;
    Ok(rec)
}

/// Characterizes generated test cases with the default horizons, in
/// parallel.
pub fn classify_corpus(
    core: &Core,
    tmpl: &ContractTemplate,
    cases: &[TestCase],
) -> Result<Vec<DistRecord>, CoreError> {
    cases
        .par_iter()
        .map(|t| characterize(core, tmpl, t, arch_horizon(t), cycle_horizon(core, t)))
        .collect()
}

/// Whether the contract `s` (template indices) distinguishes a case with
/// this characterization: it contains a strongly-distinguishing atom or
/// exactly one atom of a xor-distinguishing pair.
pub fn distinguishes(rec: &DistRecord, in_s: &[bool]) -> bool {
    rec.sd.iter().any(|&a| in_s[a]) || rec.xor.iter().any(|&(a, b)| in_s[a] != in_s[b])
}

fn fmt_list<T>(items: &[T], f: impl Fn(&T) -> String) -> String {
    items.iter().map(f).collect::<Vec<_>>().join(",")
}

/// One line per case: `idx d_t SD=[..] XOR=[a-b,..]`.
pub fn write_classification(recs: &[DistRecord]) -> String {
    let mut out = String::new();
    for (i, r) in recs.iter().enumerate() {
        let _ = writeln!(
            out,
            "{i} {} SD=[{}] XOR=[{}]",
            r.d_t as u8,
            fmt_list(&r.sd, |a| a.to_string()),
            fmt_list(&r.xor, |(a, b)| format!("{a}-{b}")),
        );
    }
    out
}

#[derive(Debug, Error)]
#[error("line {line}: {msg}")]
pub struct ClassificationParseError {
    pub line: usize,
    pub msg: String,
}

/// Parses a classification file. `D` sets are not stored and come back empty.
pub fn parse_classification(text: &str) -> Result<Vec<DistRecord>, ClassificationParseError> {
    let mut out = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let err = |msg: &str| ClassificationParseError {
            line: ln + 1,
            msg: msg.to_string(),
        };
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(err("expected `idx d_t SD=[..] XOR=[..]`"));
        }
        if toks[0].parse::<usize>().ok() != Some(out.len()) {
            return Err(err("indices must be consecutive from 0"));
        }
        let d_t = match toks[1] {
            "0" => false,
            "1" => true,
            _ => return Err(err("d_t must be 0 or 1")),
        };
        let body = |t: &str, key: &str| -> Result<Vec<String>, ClassificationParseError> {
            let inner = t
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix("=["))
                .and_then(|r| r.strip_suffix(']'))
                .ok_or_else(|| err(&format!("malformed {key} list")))?;
            Ok(inner
                .split(',')
                .filter(|s| !s.is_empty())
                .map(str::to_string)
                .collect())
        };
        let num = |s: &str| s.parse::<usize>().map_err(|_| err(&format!("bad index `{s}`")));
        let sd = body(toks[2], "SD")?
            .iter()
            .map(|s| num(s))
            .collect::<Result<_, _>>()?;
        let xor = body(toks[3], "XOR")?
            .iter()
            .map(|p| {
                let (a, b) = p.split_once('-').ok_or_else(|| err("pair must be a-b"))?;
                Ok((num(a)?, num(b)?))
            })
            .collect::<Result<_, ClassificationParseError>>()?;
        out.push(DistRecord {
            d_t,
            sd,
            xor,
            d: Vec::new(),
        });
    }
    Ok(out)
}
