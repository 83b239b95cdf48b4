//! Bounded model checking of contract satisfaction.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::expr::StatePredicate;
use super::product::{build_product, ProductDesign};
use super::property::{encode_property, PropertyDesign, PropertyError};
use super::BmcConfig;
use crate::contracts::{eval_contract, ContractAtom};
use crate::cores::{attacker_trace, Core, CoreError, CycleObs};
use crate::hwir::{Simulator, Unroller};
use crate::isa::{records_for_horizon, ArchState};
use crate::sat::{Lit, SolveStatus, Solver};
use crate::testgen::{Provenance, TestCase};

#[derive(Debug, Error)]
pub enum BmcError {
    #[error(transparent)]
    Property(#[from] PropertyError),
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("counterexample failed concrete replay: {0}")]
    ReplayMismatch(String),
    #[error("SAT conflict budget exhausted")]
    ResourceLimit,
}

/// Concrete evidence for a counterexample.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Witness {
    /// Standalone cycle observations of each copy over `k` cycles.
    #[serde(skip)]
    pub left: Vec<CycleObs>,
    #[serde(skip)]
    pub right: Vec<CycleObs>,
    /// First cycle (0-based) with different attacker observations.
    pub first_atk_diff: usize,
    /// First product frame where the assertion fails.
    pub violation_frame: usize,
    /// Retirements on which the contract traces are known to agree.
    pub prefix: usize,
    /// Joint retirements the monitor compared before the violation; the
    /// contract traces agree on all of them.
    pub compared: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Counterexample {
    pub test: TestCase,
    pub witness: Witness,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BmcResult {
    Proved { k: usize, b: usize, i: usize },
    Counterexample(Box<Counterexample>),
}

impl BmcResult {
    pub fn is_proved(&self) -> bool {
        matches!(self, BmcResult::Proved { .. })
    }

    pub fn counterexample(&self) -> Option<&Counterexample> {
        match self {
            BmcResult::Counterexample(c) => Some(c),
            BmcResult::Proved { .. } => None,
        }
    }
}

struct Encoded<'d> {
    unroller: Unroller<'d>,
    bad: Vec<Lit>,
}

fn encode<'d>(pd: &'d PropertyDesign, p: &ProductDesign, cfg: &BmcConfig) -> Encoded<'d> {
    let free: HashSet<usize> = p.free_elements().into_iter().collect();
    let mut u = Unroller::with_free_init(&pd.design, &free);
    for f in 0..=cfg.k {
        let a = u.bit(f, pd.assume);
        u.cnf.assert_lit(a);
    }
    let bad: Vec<Lit> = (1..=cfg.k).map(|f| !u.bit(f, pd.assert)).collect();
    u.cnf.add_clause(&bad);
    Encoded { unroller: u, bad }
}

/// The BMC query in DIMACS form.
pub fn bmc_cnf(
    core: &Core,
    atoms: &[ContractAtom],
    cfg: &BmcConfig,
    invariant: &[StatePredicate],
) -> Result<String, BmcError> {
    let p = build_product(core)?;
    let pd = encode_property(&p, atoms, cfg, invariant)?;
    let e = encode(&pd, &p, cfg);
    debug_assert!(!e.bad.is_empty());
    Ok(e.unroller.cnf.to_dimacs())
}

/// Searches for two executions whose contract traces agree (under the
/// monitor's instruction budget) while their attacker traces differ within
/// `b` cycles. Counterexamples are replayed concretely before being
/// returned.
pub fn bmc_check(
    core: &Core,
    atoms: &[ContractAtom],
    cfg: &BmcConfig,
    invariant: &[StatePredicate],
) -> Result<BmcResult, BmcError> {
    let p = build_product(core)?;
    let pd = encode_property(&p, atoms, cfg, invariant)?;
    let mut e = encode(&pd, &p, cfg);
    let cnf = &e.unroller.cnf;
    let mut solver = Solver::new();
    solver.ensure_vars(cnf.num_vars());
    for c in cnf.clauses() {
        solver.add_clause(c);
    }
    solver.set_conflict_budget(cfg.conflict_budget);
    match solver.solve() {
        SolveStatus::Unsat => {
            return Ok(BmcResult::Proved {
                k: cfg.k,
                b: cfg.b,
                i: cfg.i,
            })
        }
        SolveStatus::Unknown => return Err(BmcError::ResourceLimit),
        SolveStatus::Sat => {}
    }
    let model = solver.model().to_vec();
    let mut init = pd.design.initial_state().values;
    for idx in p.free_elements() {
        let sig = pd.design.state()[idx].sig;
        init[idx] = e.unroller.value(&model, 0, sig);
    }
    let arch = |copy: &super::product::CopyView| {
        core.arch_state_from(|i| init[copy.state[i]])
            .map_err(|err| BmcError::ReplayMismatch(format!("initial state does not decode: {err}")))
    };
    let raw = TestCase {
        left: arch(&p.left)?,
        right: arch(&p.right)?,
        provenance: Provenance::Random,
    };
    let replay = |t: &TestCase, check_assume| -> Result<Option<(usize, usize)>, BmcError> {
        let mut st = pd.design.initial_state().values;
        for (copy, s) in [(&p.left, &t.left), (&p.right, &t.right)] {
            let vals = core.load(s)?.values;
            for (i, &idx) in copy.state.iter().enumerate() {
                st[idx] = vals[i];
            }
        }
        replay_product(&pd, &p, cfg, st, check_assume)
    };
    if replay(&raw, true)?.is_none() {
        return Err(BmcError::ReplayMismatch(format!("no assertion failure within {} frames", cfg.k)));
    }
    let test = minimize(raw, |t| matches!(replay(t, true), Ok(Some(_))));
    let (violation_frame, compared) = replay(&test, true)?.expect("minimization keeps the violation");
    let mut witness = check_counterexample(core, atoms, cfg, &test, violation_frame)?;
    witness.compared = compared;
    Ok(BmcResult::Counterexample(Box::new(Counterexample { test, witness })))
}

/// Parts of an architectural state that [`minimize`] equalizes one at a
/// time: pc, registers, data words, then instruction fields.
fn part_count(s: &ArchState) -> usize {
    1 + s.regs.len() + s.dmem.len() + 5 * s.imem.len()
}

/// Copies part `k` of `src` into `dst`; returns whether anything changed.
fn copy_part(dst: &mut ArchState, src: &ArchState, k: usize) -> bool {
    let before = dst.clone();
    let (nr, nd) = (src.regs.len(), src.dmem.len());
    match k {
        0 => dst.pc = src.pc,
        k if k <= nr => dst.regs[k - 1] = src.regs[k - 1],
        k if k <= nr + nd => dst.dmem[k - 1 - nr] = src.dmem[k - 1 - nr],
        k => {
            let j = k - 1 - nr - nd;
            let (slot, field) = (j / 5, j % 5);
            if slot >= dst.imem.len() || slot >= src.imem.len() {
                return false;
            }
            let (d, s) = (&mut dst.imem[slot], &src.imem[slot]);
            match field {
                0 => d.opcode = s.opcode,
                1 => d.rd = s.rd,
                2 => d.rs1 = s.rs1,
                3 => d.rs2 = s.rs2,
                _ => d.imm = s.imm,
            }
        }
    }
    *dst != before
}

/// Greedily removes differences between the two sides of a counterexample:
/// each part that differs is copied across (right from left, else left from
/// right) as long as `still_fails` holds. The result is a counterexample
/// whose executions differ in as few places as this search finds, which
/// keeps the evidence handed to the synthesis loop focused on the leak.
fn minimize(mut t: TestCase, still_fails: impl Fn(&TestCase) -> bool) -> TestCase {
    let n = part_count(&t.left).min(part_count(&t.right));
    loop {
        let mut changed = false;
        for k in 0..n {
            for left_to_right in [true, false] {
                let mut cand = t.clone();
                let moved = if left_to_right {
                    copy_part(&mut cand.right, &t.left, k)
                } else {
                    copy_part(&mut cand.left, &t.right, k)
                };
                if moved && still_fails(&cand) {
                    t = cand;
                    changed = true;
                    break;
                }
            }
        }
        if !changed {
            return t;
        }
    }
}

/// Runs the monitored product from `init` and returns the first frame where
/// the assertion fails, with the number of joint retirements before it. With
/// `check_assume`, every frame up to the failure must satisfy the
/// assumption.
fn replay_product(
    pd: &PropertyDesign,
    p: &ProductDesign,
    cfg: &BmcConfig,
    mut st: Vec<u64>,
    check_assume: bool,
) -> Result<Option<(usize, usize)>, BmcError> {
    let mut sim = Simulator::new(&pd.design);
    let mut joint = 0;
    for f in 0..=cfg.k {
        sim.settle(&st, &[]);
        if check_assume && sim.value(pd.assume) != 1 {
            return Err(BmcError::ReplayMismatch(format!("assumption fails at frame {f}")));
        }
        if sim.value(pd.assert) != 1 {
            return Ok(Some((f, joint)));
        }
        if sim.value(p.left.obs.retire) == 1 && sim.value(p.right.obs.retire) == 1 {
            joint += 1;
        }
        sim.latch(&mut st);
    }
    Ok(None)
}

/// Replays a test case through the monitored product. Returns the violation
/// frame and the number of joint retirements before it, or `None` if the
/// monitor's assertion holds for all `k` frames. The result does not depend
/// on the contract.
pub fn monitor_window(core: &Core, cfg: &BmcConfig, test: &TestCase) -> Result<Option<(usize, usize)>, BmcError> {
    let p = build_product(core)?;
    let pd = encode_property(&p, &[], cfg, &[])?;
    let mut init = pd.design.initial_state().values;
    for (copy, s) in [(&p.left, &test.left), (&p.right, &test.right)] {
        let vals = core.load(s)?.values;
        for (i, &idx) in copy.state.iter().enumerate() {
            init[idx] = vals[i];
        }
    }
    replay_product(&pd, &p, cfg, init, false)
}

/// Checks the counterexample property directly on the test case: attacker
/// traces differ within `b` cycles and contract traces agree on the first
/// `min(floor(k / K), i)` retirements.
pub fn check_counterexample(
    core: &Core,
    atoms: &[ContractAtom],
    cfg: &BmcConfig,
    test: &TestCase,
    violation_frame: usize,
) -> Result<Witness, BmcError> {
    let al = attacker_trace(core, &test.left, cfg.b)?;
    let ar = attacker_trace(core, &test.right, cfg.b)?;
    let first_atk_diff = al
        .iter()
        .zip(&ar)
        .position(|(a, b)| a != b)
        .ok_or_else(|| BmcError::ReplayMismatch(format!("attacker traces agree on the first {} cycles", cfg.b)))?;
    let n = cfg.prefix();
    let trace = |s: &ArchState| eval_contract(atoms, &records_for_horizon(s, n));
    if trace(&test.left) != trace(&test.right) {
        return Err(BmcError::ReplayMismatch(format!(
            "contract traces differ within the first {n} retirements"
        )));
    }
    let run = |s: &ArchState| -> Result<Vec<CycleObs>, CoreError> {
        let mut sim = core.simulate(s)?;
        Ok((0..cfg.k).map(|_| sim.step()).collect())
    };
    Ok(Witness {
        left: run(&test.left)?,
        right: run(&test.right)?,
        first_atk_diff,
        violation_frame,
        prefix: n,
        compared: n,
    })
}
