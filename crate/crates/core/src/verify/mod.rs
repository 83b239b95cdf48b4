//! Bounded and unbounded verification of contracts.
//!
//! [`product`] builds the stuttering self-composition, [`property`] adds the
//! contract-equivalence circuit and the monitor, [`bmc`] searches for
//! counterexamples with the SAT solver and replays them concretely, and
//! [`houdini`] attempts an unbounded proof with an inductive invariant made
//! of relational equalities.

pub mod bmc;
pub mod expr;
pub mod houdini;
pub mod product;
pub mod property;

use serde::{Deserialize, Serialize};

pub use bmc::{bmc_check, bmc_cnf, monitor_window, BmcError, BmcResult, Counterexample, Witness};
pub use expr::{PredicateError, StatePredicate};
pub use houdini::{
    houdini_verify, recheck_candidates, FailReason, HoudiniConfig, HoudiniError, HoudiniResult, Verdict,
};
pub use product::{build_product, ProductDesign};
pub use property::{encode_property, PropertyDesign};

use crate::cores::Core;
use crate::isa::Opcode;

/// Bounds of one BMC run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BmcConfig {
    /// Total cycle bound.
    pub k: usize,
    /// Attacker bound: attacker observations are compared on the first `b`
    /// cycles.
    pub b: usize,
    /// Instruction bound.
    pub i: usize,
    /// Maximum cycles between retirements of the core under verification.
    pub max_retire: u32,
    /// Optional SAT conflict budget; exceeding it is an error.
    #[serde(default)]
    pub conflict_budget: Option<u64>,
}

impl BmcConfig {
    pub fn new(k: usize, b: usize, i: usize, max_retire: u32) -> Self {
        BmcConfig {
            k,
            b,
            i,
            max_retire,
            conflict_budget: None,
        }
    }

    /// Bounds for a core with at most two instructions in flight:
    /// `k = 2 * K`, instruction bound 1 and `b = k - K`.
    pub fn for_core(core: &Core) -> Self {
        let kk = core.max_retire_interval();
        let in_flight = 2;
        let k = in_flight * kk as usize;
        BmcConfig::new(k, (k - kk as usize).max(1), in_flight - 1, kk)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.b < 1 || self.b > self.k {
            return Err(format!("need 1 <= b <= k, got b = {}, k = {}", self.b, self.k));
        }
        if self.i < 1 {
            return Err("instruction bound must be at least 1".into());
        }
        if self.max_retire < 1 {
            return Err("maximum retirement interval must be at least 1".into());
        }
        Ok(())
    }

    /// Length of the contract-trace prefix a counterexample agrees on:
    /// `min(floor(k / K), i)`.
    pub fn prefix(&self) -> usize {
        (self.k / self.max_retire as usize).min(self.i)
    }
}

/// Default `state_invariant`: instruction words decode to opcodes in
/// `universe`, both programs have the same length, and the length fits the
/// instruction memory.
pub fn default_invariant(core: &Core, universe: &[Opcode]) -> Vec<StatePredicate> {
    let ops: Vec<&str> = universe.iter().map(|o| o.mnemonic()).collect();
    [
        format!("opcode(imem*) in {{{}}}", ops.join(", ")),
        "L.prog_len == R.prog_len".to_string(),
        format!("prog_len <= {}", core.spec.imem_cap),
    ]
    .iter()
    .map(|s| s.parse().expect("well-formed default predicate"))
    .collect()
}
