use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Design, OpKind, SigId};
use crate::isa::mask;

/// Current values of a design's state elements, indexed like
/// [`Design::state`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SimState {
    pub values: Vec<u64>,
}

impl SimState {
    pub fn new(values: Vec<u64>) -> Self {
        SimState { values }
    }

    pub fn get(&self, d: &Design, name: &str) -> Option<u64> {
        d.state_index_by_name(name).ok().map(|i| self.values[i])
    }

    pub fn set(&mut self, d: &Design, name: &str, v: u64) -> bool {
        match d.state_index_by_name(name) {
            Ok(i) => {
                self.values[i] = v & mask(d.width(d.state()[i].sig));
                true
            }
            Err(_) => false,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("no value supplied for input signal {0}")]
    MissingInput(SigId),
    #[error("state has {0} values, design has {1} state elements")]
    StateShape(usize, usize),
}

#[derive(Clone)]
struct FlatOp {
    out: u32,
    kind: OpKind,
    a: u32,
    b: u32,
    c: u32,
    /// Shift amount: `lo` for SLICE, low-operand width for CONCAT.
    sh: u32,
    mask: u64,
}

/// Cycle simulator with a precomputed, flattened evaluation order.
#[derive(Clone)]
pub struct Simulator {
    ops: Vec<FlatOp>,
    state_sigs: Vec<u32>,
    next_sigs: Vec<u32>,
    input_sigs: Vec<u32>,
    values: Vec<u64>,
}

impl Simulator {
    pub fn new(d: &Design) -> Self {
        let ops = d
            .topo_order()
            .iter()
            .map(|&i| {
                let n = &d.nodes()[i];
                let arg = |k: usize| n.args.get(k).copied().unwrap_or(0) as u32;
                FlatOp {
                    out: n.out as u32,
                    kind: n.kind,
                    a: arg(0),
                    b: arg(1),
                    c: arg(2),
                    sh: match n.kind {
                        OpKind::Slice { lo, .. } => lo,
                        OpKind::Concat => d.width(n.args[1]),
                        _ => 0,
                    },
                    mask: mask(d.width(n.out)),
                }
            })
            .collect();
        Simulator {
            ops,
            state_sigs: d.state().iter().map(|s| s.sig as u32).collect(),
            next_sigs: d.state().iter().map(|s| s.next as u32).collect(),
            input_sigs: d.inputs().iter().map(|&s| s as u32).collect(),
            values: vec![0; d.num_signals()],
        }
    }

    /// Evaluates the combinational network for the current state and inputs
    /// (given in [`Design::inputs`] order). Signal values stay readable via
    /// [`Simulator::value`] until the next call.
    pub fn settle(&mut self, state: &[u64], inputs: &[u64]) {
        for (&s, &v) in self.state_sigs.iter().zip(state) {
            self.values[s as usize] = v;
        }
        for (&s, &v) in self.input_sigs.iter().zip(inputs) {
            self.values[s as usize] = v;
        }
        let vals = &mut self.values;
        for op in &self.ops {
            let a = vals[op.a as usize];
            let b = vals[op.b as usize];
            let r = match op.kind {
                OpKind::Const(v) => v,
                OpKind::Not => !a,
                OpKind::And => a & b,
                OpKind::Or => a | b,
                OpKind::Xor => a ^ b,
                OpKind::Add => a.wrapping_add(b),
                OpKind::Sub => a.wrapping_sub(b),
                OpKind::Mul => a.wrapping_mul(b),
                OpKind::Eq => (a == b) as u64,
                OpKind::Ult => (a < b) as u64,
                OpKind::Mux => {
                    if a & 1 == 1 {
                        b
                    } else {
                        vals[op.c as usize]
                    }
                }
                OpKind::Slice { .. } => a >> op.sh,
                OpKind::Concat => (a << op.sh) | b,
            } & op.mask;
            vals[op.out as usize] = r;
        }
    }

    pub fn value(&self, s: SigId) -> u64 {
        self.values[s]
    }

    /// Writes the latched next state into `state`.
    pub fn latch(&self, state: &mut [u64]) {
        for (v, &n) in state.iter_mut().zip(&self.next_sigs) {
            *v = self.values[n as usize];
        }
    }

    /// One clock cycle: settle, then latch.
    pub fn step(&mut self, state: &mut [u64], inputs: &[u64]) {
        self.settle(state, inputs);
        self.latch(state);
    }
}

/// Evaluates one cycle: returns the successor state and the value of every
/// named output during this cycle.
pub fn eval_cycle(
    d: &Design,
    st: &SimState,
    inputs: &HashMap<SigId, u64>,
) -> Result<(SimState, BTreeMap<String, u64>), EvalError> {
    if st.values.len() != d.state().len() {
        return Err(EvalError::StateShape(st.values.len(), d.state().len()));
    }
    let ins: Vec<u64> = d
        .inputs()
        .iter()
        .map(|&s| {
            inputs
                .get(&s)
                .map(|v| v & mask(d.width(s)))
                .ok_or(EvalError::MissingInput(s))
        })
        .collect::<Result<_, _>>()?;
    let mut sim = Simulator::new(d);
    sim.settle(&st.values, &ins);
    let outs = d
        .outputs()
        .iter()
        .map(|(n, &s)| (n.clone(), sim.value(s)))
        .collect();
    let mut next = st.values.clone();
    sim.latch(&mut next);
    Ok((SimState::new(next), outs))
}
