//! Unbounded verification with Houdini-style invariant inference.
//!
//! Candidates are predicates over the product state: `L.r == R.r` for every
//! state element `r` of the core, and for every 32-bit (instruction word)
//! element, that its opcode field stays in the opcode universe or at its
//! reset value. Candidates that can fail in an initial state, or after one
//! product step from a state where all retained candidates hold, are
//! dropped until a fixpoint is reached.
//! The retained conjunction is then checked to imply equal attacker
//! observations.
//!
//! Contract observations appear only at retirement, so the step check
//! assumes contract equivalence on a window of `lookahead` frames after the
//! pre-state. Contract-indistinguishable executions satisfy it on every
//! frame, which keeps the check sound.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::expr::{PredicateError, StatePredicate};
use super::product::{build_product, ProductDesign};
use super::property::{relational_builder, PropertyError};
use crate::contracts::ContractAtom;
use crate::cores::{Core, CoreError};
use crate::hwir::{Design, SigId, Unroller};
use crate::isa::Opcode;
use crate::sat::{Lit, SolveStatus, Solver};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoudiniConfig {
    /// Frames of contract equivalence assumed after the pre-state; defaults
    /// to the core's maximum retirement interval.
    #[serde(default)]
    pub lookahead: Option<usize>,
    #[serde(default)]
    pub conflict_budget: Option<u64>,
    /// Candidates added to the built-in ones.
    #[serde(default)]
    pub extra: Vec<StatePredicate>,
    /// Opcodes allowed in instruction words; all opcodes if unset.
    #[serde(default)]
    pub universe: Option<Vec<Opcode>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailReason {
    InvariantTooWeak,
    CandidateQueryResourceLimit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Verified,
    Failed(FailReason),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HoudiniResult {
    pub candidates: Vec<String>,
    pub retained: Vec<String>,
    /// Retained-set size after each iteration.
    pub history: Vec<usize>,
    pub verdict: Verdict,
}

impl HoudiniResult {
    pub fn verified(&self) -> bool {
        self.verdict == Verdict::Verified
    }
}

#[derive(Debug, Error)]
pub enum HoudiniError {
    #[error(transparent)]
    Property(#[from] PropertyError),
    #[error(transparent)]
    Predicate(#[from] PredicateError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("unknown candidate `{0}`")]
    UnknownCandidate(String),
}

/// The relational design with one 1-bit signal per candidate.
struct Setup {
    product: ProductDesign,
    design: Design,
    ctr_equiv: SigId,
    invariant: SigId,
    atk_equiv: SigId,
    names: Vec<String>,
    cands: Vec<SigId>,
    lookahead: usize,
}

fn setup(
    core: &Core,
    atoms: &[ContractAtom],
    invariant: &[StatePredicate],
    cfg: &HoudiniConfig,
) -> Result<Setup, HoudiniError> {
    let product = build_product(core)?;
    let (mut b, ctr, inv, atk) = relational_builder(&product, atoms, invariant)?;
    let mut names = Vec::new();
    let mut cands = Vec::new();
    for (&li, &ri) in product.left.state.iter().zip(&product.right.state) {
        let ls = b.sig(product.design.state()[li].sig);
        let rs = b.sig(product.design.state()[ri].sig);
        let name = product.design.signal_name(ls.id).unwrap_or("?").to_string();
        let name = format!("{name} == R.{}", name.trim_start_matches("L."));
        cands.push(b.eq(ls, rs).id);
        names.push(name);
    }
    let universe = cfg.universe.clone().unwrap_or_else(|| Opcode::ALL.to_vec());
    for copy in product.copies() {
        for &i in &copy.state {
            let st = &product.design.state()[i];
            if product.design.width(st.sig) != 32 {
                continue;
            }
            let name = product.design.signal_name(st.sig).unwrap_or("?").to_string();
            let mut ops: Vec<&str> = universe.iter().map(|o| o.mnemonic()).collect();
            if let Ok(reset) = Opcode::from_ordinal((st.init >> 28) as u32) {
                if !universe.contains(&reset) {
                    ops.push(reset.mnemonic());
                }
            }
            let e: StatePredicate = format!("opcode({name}) in {{{}}}", ops.join(", ")).parse()?;
            cands.push(e.build(&mut b, &product)?.id);
            names.push(e.to_string());
        }
    }
    for e in &cfg.extra {
        cands.push(e.build(&mut b, &product)?.id);
        names.push(e.to_string());
    }
    Ok(Setup {
        design: b.build().map_err(PropertyError::from)?,
        product,
        ctr_equiv: ctr.id,
        invariant: inv.id,
        atk_equiv: atk.id,
        names,
        cands,
        lookahead: cfg.lookahead.unwrap_or(core.max_retire_interval() as usize),
    })
}

/// SAT context over an unrolling; clauses are loaded once, queries run
/// under assumptions.
struct Query {
    solver: Solver,
}

impl Query {
    fn new(u: &Unroller<'_>, budget: Option<u64>) -> Self {
        let mut solver = Solver::new();
        solver.ensure_vars(u.cnf.num_vars());
        for c in u.cnf.clauses() {
            solver.add_clause(c);
        }
        solver.set_conflict_budget(budget);
        Query { solver }
    }

    fn sat(&mut self, assumptions: &[Lit]) -> SolveStatus {
        self.solver.solve_with_assumptions(assumptions)
    }
}

/// Candidate literals at frame 0 of an unrolling from free architectural
/// inputs and µ0, with the state invariant assumed.
fn init_unrolling<'d>(s: &'d Setup) -> (Unroller<'d>, Vec<Lit>) {
    let free: HashSet<usize> = s.product.free_elements().into_iter().collect();
    let mut u = Unroller::with_free_init(&s.design, &free);
    let inv = u.bit(0, s.invariant);
    u.cnf.assert_lit(inv);
    let lits = s.cands.iter().map(|&c| u.bit(0, c)).collect();
    (u, lits)
}

/// Candidate literals at frames 0 and 1 of an unrolling from an arbitrary
/// state, with the invariant and contract equivalence assumed on frames
/// `0..=lookahead`. Also returns `atk_equiv` at frame 0.
fn step_unrolling<'d>(s: &'d Setup) -> (Unroller<'d>, Vec<Lit>, Vec<Lit>, Lit) {
    let all: HashSet<usize> = (0..s.design.state().len()).collect();
    let mut u = Unroller::with_free_init(&s.design, &all);
    for f in 0..=s.lookahead.max(1) {
        let inv = u.bit(f, s.invariant);
        u.cnf.assert_lit(inv);
        let ctr = u.bit(f, s.ctr_equiv);
        u.cnf.assert_lit(ctr);
    }
    let pre = s.cands.iter().map(|&c| u.bit(0, c)).collect();
    let post = s.cands.iter().map(|&c| u.bit(1, c)).collect();
    let atk = u.bit(0, s.atk_equiv);
    (u, pre, post, atk)
}

/// Runs Houdini for the contract `atoms`.
pub fn houdini_verify(
    core: &Core,
    atoms: &[ContractAtom],
    invariant: &[StatePredicate],
    cfg: &HoudiniConfig,
) -> Result<HoudiniResult, HoudiniError> {
    let s = setup(core, atoms, invariant, cfg)?;
    let n = s.cands.len();
    let mut keep = vec![true; n];
    let fail = |keep: &[bool], history: Vec<usize>, reason| HoudiniResult {
        candidates: s.names.clone(),
        retained: (0..n).filter(|&i| keep[i]).map(|i| s.names[i].clone()).collect(),
        history,
        verdict: Verdict::Failed(reason),
    };

    let (u0, init) = init_unrolling(&s);
    let mut q0 = Query::new(&u0, cfg.conflict_budget);
    for c in 0..n {
        match q0.sat(&[!init[c]]) {
            SolveStatus::Sat => keep[c] = false,
            SolveStatus::Unsat => {}
            SolveStatus::Unknown => return Ok(fail(&keep, vec![], FailReason::CandidateQueryResourceLimit)),
        }
    }
    let mut history = vec![keep.iter().filter(|&&k| k).count()];

    let (u1, pre, post, atk) = step_unrolling(&s);
    let mut q1 = Query::new(&u1, cfg.conflict_budget);
    loop {
        let assumed: Vec<Lit> = (0..n).filter(|&i| keep[i]).map(|i| pre[i]).collect();
        let mut dropped = vec![false; n];
        for c in 0..n {
            if !keep[c] || dropped[c] {
                continue;
            }
            let mut a = assumed.clone();
            a.push(!post[c]);
            match q1.sat(&a) {
                SolveStatus::Sat => {
                    // Every candidate falsified by this model fails too.
                    for d in 0..n {
                        if keep[d] && !q1.solver.model_value(post[d]) {
                            dropped[d] = true;
                        }
                    }
                }
                SolveStatus::Unsat => {}
                SolveStatus::Unknown => return Ok(fail(&keep, history, FailReason::CandidateQueryResourceLimit)),
            }
        }
        if !dropped.iter().any(|&d| d) {
            break;
        }
        for d in 0..n {
            keep[d] &= !dropped[d];
        }
        history.push(keep.iter().filter(|&&k| k).count());
    }

    let mut a: Vec<Lit> = (0..n).filter(|&i| keep[i]).map(|i| pre[i]).collect();
    a.push(!atk);
    let verdict = match q1.sat(&a) {
        SolveStatus::Unsat => Verdict::Verified,
        SolveStatus::Sat => Verdict::Failed(FailReason::InvariantTooWeak),
        SolveStatus::Unknown => Verdict::Failed(FailReason::CandidateQueryResourceLimit),
    };
    Ok(HoudiniResult {
        candidates: s.names.clone(),
        retained: (0..n).filter(|&i| keep[i]).map(|i| s.names[i].clone()).collect(),
        history,
        verdict,
    })
}

/// Post-hoc checks of a retained set with fresh solvers: for each candidate,
/// `(holds initially, preserved by a step under the retained set)`.
pub fn recheck_candidates(
    core: &Core,
    atoms: &[ContractAtom],
    invariant: &[StatePredicate],
    cfg: &HoudiniConfig,
    retained: &[String],
) -> Result<Vec<(String, bool, bool)>, HoudiniError> {
    let s = setup(core, atoms, invariant, cfg)?;
    let idx: Vec<usize> = retained
        .iter()
        .map(|r| {
            s.names
                .iter()
                .position(|n| n == r)
                .ok_or_else(|| HoudiniError::UnknownCandidate(r.clone()))
        })
        .collect::<Result<_, _>>()?;
    let mut out = Vec::new();
    for &c in &idx {
        let (u0, init) = init_unrolling(&s);
        let init_ok = Query::new(&u0, None).sat(&[!init[c]]) == SolveStatus::Unsat;
        let (u1, pre, post, _) = step_unrolling(&s);
        let mut a: Vec<Lit> = idx.iter().map(|&i| pre[i]).collect();
        a.push(!post[c]);
        let step_ok = Query::new(&u1, None).sat(&a) == SolveStatus::Unsat;
        out.push((s.names[c].clone(), init_ok, step_ok));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::{builtin_template, Family};
    use crate::cores::{build_core, CoreKind, CoreSpec};
    use crate::isa::Opcode::{Div, Li};
    use crate::verify::default_invariant;

    #[test]
    fn div_core_contracts() {
        let core = build_core(&CoreSpec::new(CoreKind::DivCore, 4, 2, 4, 4)).unwrap();
        let tmpl = builtin_template(&[Family::LiDiv, Family::EqK(vec![0, 1])], &[Li, Div]);
        let inv = default_invariant(&core, &[Li, Div]);
        let cfg = HoudiniConfig {
            universe: Some(vec![Li, Div]),
            ..HoudiniConfig::default()
        };
        let ctr3 = tmpl.subset(&[
            tmpl.find("DIV:Reg[RS2]=0?").unwrap(),
            tmpl.find("DIV:Reg[RS2]=1?").unwrap(),
        ]);
        let r = houdini_verify(&core, &ctr3, &inv, &cfg).unwrap();
        assert!(r.verified(), "{r:?}");
        assert!(r.retained.iter().any(|c| c == "L.ex_cnt == R.ex_cnt"));
        assert!(r.history.windows(2).all(|w| w[1] < w[0]));
        for (name, i, s) in recheck_candidates(&core, &ctr3, &inv, &cfg, &r.retained).unwrap() {
            assert!(i && s, "{name}");
        }
        let ctr1 = tmpl.subset(&[tmpl.find("LI:li").unwrap()]);
        let r1 = houdini_verify(&core, &ctr1, &inv, &cfg).unwrap();
        assert_eq!(r1.verdict, Verdict::Failed(FailReason::InvariantTooWeak));
    }
}
