//! Synchronous-circuit IR: signals, combinational nodes, state elements.
//!
//! A [`DesignParts`] is the raw, unchecked description; [`Design::new`]
//! validates it and fixes a topological evaluation order. Designs are
//! immutable afterwards. [`DesignBuilder`] is the ergonomic way to write one.

mod builder;
pub mod cnf;
mod eval;
pub mod netlist;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use builder::{DesignBuilder, Sig};
pub use cnf::{unroll_to_cnf, Cnf, CnfFormula, Pin, Unroller};
pub use eval::{eval_cycle, SimState, Simulator};

use crate::isa::mask;

pub type SigId = usize;

pub const MAX_WIDTH: u32 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OpKind {
    Const(u64),
    Not,
    And,
    Or,
    Xor,
    Add,
    Sub,
    Mul,
    Eq,
    Ult,
    /// `args = [sel, a, b]`; selects `a` when `sel` is 1.
    Mux,
    Slice { hi: u32, lo: u32 },
    /// `args = [hi, lo]`.
    Concat,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::Const(_) => "CONST",
            OpKind::Not => "NOT",
            OpKind::And => "AND",
            OpKind::Or => "OR",
            OpKind::Xor => "XOR",
            OpKind::Add => "ADD",
            OpKind::Sub => "SUB",
            OpKind::Mul => "MUL",
            OpKind::Eq => "EQ",
            OpKind::Ult => "ULT",
            OpKind::Mux => "MUX",
            OpKind::Slice { .. } => "SLICE",
            OpKind::Concat => "CONCAT",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            OpKind::Const(_) => 0,
            OpKind::Not | OpKind::Slice { .. } => 1,
            OpKind::Mux => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Signal {
    pub width: u32,
    pub name: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub out: SigId,
    pub kind: OpKind,
    pub args: Vec<SigId>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateElem {
    pub sig: SigId,
    pub init: u64,
    pub next: SigId,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignParts {
    pub signals: Vec<Signal>,
    pub nodes: Vec<Node>,
    pub state: Vec<StateElem>,
    pub inputs: Vec<SigId>,
    pub outputs: BTreeMap<String, SigId>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DesignError {
    #[error("signal {0} has width {1}, outside 1..={MAX_WIDTH}")]
    BadWidth(SigId, u32),
    #[error("reference to undeclared signal {0}")]
    UnknownSignal(SigId),
    #[error("signal {0} is defined more than once")]
    MultipleDefinitions(SigId),
    #[error("signal {0} is never defined")]
    Undefined(SigId),
    #[error("node driving signal {0} ({1}): {2}")]
    WidthMismatch(SigId, &'static str, String),
    #[error("node driving signal {0} expects {1} arguments, got {2}")]
    Arity(SigId, usize, usize),
    #[error("combinational cycle through signal {0}")]
    Cycle(SigId),
    #[error("state element {0}: init {1:#x} does not fit width {2}")]
    BadInit(SigId, u64, u32),
    #[error("state element {0}: next signal {1} has width {2}, expected {3}")]
    NextWidth(SigId, SigId, u32, u32),
    #[error("duplicate signal name `{0}`")]
    DuplicateName(String),
    #[error("no signal named `{0}`")]
    NoSuchName(String),
    #[error("register `{0}` has no next-state signal")]
    MissingNext(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Driver {
    Node(usize),
    State(usize),
    Input(usize),
}

fn check_widths(parts: &DesignParts, n: &Node) -> Result<(), DesignError> {
    let w = |s: SigId| parts.signals[s].width;
    let out_w = w(n.out);
    let bad = |msg: String| Err(DesignError::WidthMismatch(n.out, n.kind.name(), msg));
    match n.kind {
        OpKind::Const(v) => {
            if v & !mask(out_w) != 0 {
                return bad(format!("constant {v:#x} exceeds width {out_w}"));
            }
        }
        OpKind::Not => {
            if w(n.args[0]) != out_w {
                return bad(format!("operand {} vs output {}", w(n.args[0]), out_w));
            }
        }
        OpKind::And | OpKind::Or | OpKind::Xor | OpKind::Add | OpKind::Sub | OpKind::Mul => {
            let (a, b) = (w(n.args[0]), w(n.args[1]));
            if a != b || a != out_w {
                return bad(format!("operands {a} and {b}, output {out_w}"));
            }
        }
        OpKind::Eq | OpKind::Ult => {
            let (a, b) = (w(n.args[0]), w(n.args[1]));
            if a != b || out_w != 1 {
                return bad(format!("operands {a} and {b}, output {out_w}"));
            }
        }
        OpKind::Mux => {
            let (s, a, b) = (w(n.args[0]), w(n.args[1]), w(n.args[2]));
            if s != 1 || a != b || a != out_w {
                return bad(format!("select {s}, arms {a} and {b}, output {out_w}"));
            }
        }
        OpKind::Slice { hi, lo } => {
            let a = w(n.args[0]);
            if lo > hi || hi >= a || hi - lo + 1 != out_w {
                return bad(format!("[{hi}:{lo}] of width {a} into {out_w}"));
            }
        }
        OpKind::Concat => {
            let (a, b) = (w(n.args[0]), w(n.args[1]));
            if a + b != out_w {
                return bad(format!("{a} + {b} != {out_w}"));
            }
        }
    }
    Ok(())
}

/// Checks single assignment, widths and acyclicity. On success returns each
/// signal's driver and a topological order of the nodes.
fn analyze(parts: &DesignParts) -> Result<(Vec<Driver>, Vec<usize>), DesignError> {
    let n_sig = parts.signals.len();
    for (i, s) in parts.signals.iter().enumerate() {
        if s.width == 0 || s.width > MAX_WIDTH {
            return Err(DesignError::BadWidth(i, s.width));
        }
    }
    let in_range = |s: SigId| {
        if s < n_sig {
            Ok(())
        } else {
            Err(DesignError::UnknownSignal(s))
        }
    };
    let mut driver: Vec<Option<Driver>> = vec![None; n_sig];
    let mut define = |s: SigId, d: Driver| -> Result<(), DesignError> {
        in_range(s)?;
        if driver[s].is_some() {
            return Err(DesignError::MultipleDefinitions(s));
        }
        driver[s] = Some(d);
        Ok(())
    };
    for (i, n) in parts.nodes.iter().enumerate() {
        define(n.out, Driver::Node(i))?;
    }
    for (i, st) in parts.state.iter().enumerate() {
        define(st.sig, Driver::State(i))?;
    }
    for (i, &s) in parts.inputs.iter().enumerate() {
        define(s, Driver::Input(i))?;
    }
    let driver: Vec<Driver> = driver
        .into_iter()
        .enumerate()
        .map(|(i, d)| d.ok_or(DesignError::Undefined(i)))
        .collect::<Result<_, _>>()?;

    for n in &parts.nodes {
        if n.args.len() != n.kind.arity() {
            return Err(DesignError::Arity(n.out, n.kind.arity(), n.args.len()));
        }
        for &a in &n.args {
            in_range(a)?;
        }
        check_widths(parts, n)?;
    }
    for st in &parts.state {
        in_range(st.next)?;
        let w = parts.signals[st.sig].width;
        if st.init & !mask(w) != 0 {
            return Err(DesignError::BadInit(st.sig, st.init, w));
        }
        let nw = parts.signals[st.next].width;
        if nw != w {
            return Err(DesignError::NextWidth(st.sig, st.next, nw, w));
        }
    }
    for &s in parts.outputs.values() {
        in_range(s)?;
    }
    let mut seen_names = std::collections::HashSet::new();
    for s in &parts.signals {
        if let Some(name) = &s.name {
            if !seen_names.insert(name.as_str()) {
                return Err(DesignError::DuplicateName(name.clone()));
            }
        }
    }

    // Iterative DFS topological sort over node dependencies.
    let n_nodes = parts.nodes.len();
    let mut mark = vec![0u8; n_nodes]; // 0 new, 1 on stack, 2 done
    let mut order = Vec::with_capacity(n_nodes);
    for root in 0..n_nodes {
        if mark[root] != 0 {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        mark[root] = 1;
        while let Some(&mut (node, ref mut next_arg)) = stack.last_mut() {
            let args = &parts.nodes[node].args;
            if *next_arg < args.len() {
                let a = args[*next_arg];
                *next_arg += 1;
                if let Driver::Node(dep) = driver[a] {
                    match mark[dep] {
                        0 => {
                            mark[dep] = 1;
                            stack.push((dep, 0));
                        }
                        1 => return Err(DesignError::Cycle(parts.nodes[dep].out)),
                        _ => {}
                    }
                }
            } else {
                mark[node] = 2;
                order.push(node);
                stack.pop();
            }
        }
    }
    Ok((driver, order))
}

/// Validates raw design parts.
pub fn validate_design(parts: &DesignParts) -> Result<(), DesignError> {
    analyze(parts).map(|_| ())
}

/// A validated, immutable design.
#[derive(Debug, Clone)]
pub struct Design {
    parts: DesignParts,
    driver: Vec<Driver>,
    topo: Vec<usize>,
    names: BTreeMap<String, SigId>,
}

impl Design {
    pub fn new(parts: DesignParts) -> Result<Design, DesignError> {
        let (driver, topo) = analyze(&parts)?;
        let names = parts
            .signals
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.name.clone().map(|n| (n, i)))
            .collect();
        Ok(Design {
            parts,
            driver,
            topo,
            names,
        })
    }

    pub fn parts(&self) -> &DesignParts {
        &self.parts
    }

    pub fn into_parts(self) -> DesignParts {
        self.parts
    }

    pub fn num_signals(&self) -> usize {
        self.parts.signals.len()
    }

    pub fn width(&self, s: SigId) -> u32 {
        self.parts.signals[s].width
    }

    pub fn signal_name(&self, s: SigId) -> Option<&str> {
        self.parts.signals[s].name.as_deref()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.parts.nodes
    }

    pub fn state(&self) -> &[StateElem] {
        &self.parts.state
    }

    pub fn inputs(&self) -> &[SigId] {
        &self.parts.inputs
    }

    pub fn outputs(&self) -> &BTreeMap<String, SigId> {
        &self.parts.outputs
    }

    pub fn output(&self, name: &str) -> Option<SigId> {
        self.parts.outputs.get(name).copied()
    }

    pub fn driver(&self, s: SigId) -> Driver {
        self.driver[s]
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    /// Looks a signal up by its name or, failing that, its output name.
    pub fn lookup(&self, name: &str) -> Result<SigId, DesignError> {
        self.names
            .get(name)
            .or_else(|| self.parts.outputs.get(name))
            .copied()
            .ok_or_else(|| DesignError::NoSuchName(name.to_string()))
    }

    /// Index into [`Design::state`] of the state element driving `s`.
    pub fn state_index(&self, s: SigId) -> Option<usize> {
        match self.driver[s] {
            Driver::State(i) => Some(i),
            _ => None,
        }
    }

    pub fn state_index_by_name(&self, name: &str) -> Result<usize, DesignError> {
        let s = self.lookup(name)?;
        self.state_index(s)
            .ok_or_else(|| DesignError::NoSuchName(format!("{name} (not a state element)")))
    }

    /// Reopens the design for extension; existing signal ids are preserved.
    pub fn extend(&self) -> DesignBuilder {
        DesignBuilder::from_parts(self.parts.clone())
    }

    pub fn initial_state(&self) -> SimState {
        SimState::new(self.parts.state.iter().map(|s| s.init).collect())
    }
}

impl fmt::Display for Design {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&netlist::write_netlist(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sig(width: u32) -> Signal {
        Signal { width, name: None }
    }

    #[test]
    fn empty_design_is_valid() {
        assert!(validate_design(&DesignParts::default()).is_ok());
    }

    #[test]
    fn self_reference_is_a_cycle() {
        let parts = DesignParts {
            signals: vec![sig(1)],
            nodes: vec![Node {
                out: 0,
                kind: OpKind::Not,
                args: vec![0],
            }],
            ..Default::default()
        };
        assert_eq!(validate_design(&parts), Err(DesignError::Cycle(0)));
    }

    #[test]
    fn width_mismatch_is_reported() {
        let parts = DesignParts {
            signals: vec![sig(8), sig(4), sig(8)],
            nodes: vec![Node {
                out: 2,
                kind: OpKind::Add,
                args: vec![0, 1],
            }],
            inputs: vec![0, 1],
            ..Default::default()
        };
        assert!(matches!(
            validate_design(&parts),
            Err(DesignError::WidthMismatch(2, "ADD", _))
        ));
    }

    #[test]
    fn double_definition_and_undefined() {
        let parts = DesignParts {
            signals: vec![sig(1), sig(1)],
            inputs: vec![0, 0],
            ..Default::default()
        };
        assert_eq!(
            validate_design(&parts),
            Err(DesignError::MultipleDefinitions(0))
        );
        let parts = DesignParts {
            signals: vec![sig(1), sig(1)],
            inputs: vec![0],
            ..Default::default()
        };
        assert_eq!(validate_design(&parts), Err(DesignError::Undefined(1)));
    }

    #[test]
    fn registers_break_cycles() {
        let mut b = DesignBuilder::new();
        let r = b.reg("r", 4, 0);
        let one = b.konst(1, 4);
        let n = b.add(r, one);
        b.set_next(r, n);
        let d = b.build().unwrap();
        assert_eq!(d.topo_order().len(), 2);
        assert_eq!(d.state_index_by_name("r").unwrap(), 0);
    }

    #[test]
    fn topo_order_respects_dependencies() {
        let mut b = DesignBuilder::new();
        let x = b.input("x", 8);
        let mut cur = x;
        for _ in 0..50 {
            cur = b.not(cur);
        }
        b.output("y", cur);
        let d = b.build().unwrap();
        let mut pos = vec![usize::MAX; d.num_signals()];
        for (i, &n) in d.topo_order().iter().enumerate() {
            pos[d.nodes()[n].out] = i;
        }
        for &n in d.topo_order() {
            for &a in &d.nodes()[n].args {
                if let Driver::Node(_) = d.driver(a) {
                    assert!(pos[a] < pos[d.nodes()[n].out]);
                }
            }
        }
    }
}
