//! Textual netlist format, one declaration per line:
//!
//! ```text
//! sig <id> <width> [name]
//! reg <id> <init> <next-id>
//! op <id> <KIND> <arg-ids...>     # CONST <value>, SLICE <arg> <hi> <lo>
//! in <id>
//! out <name> <id>
//! ```
//!
//! `#` starts a comment. Signals must be declared with `sig` before use.

use std::fmt::Write;

use thiserror::Error;

use super::{Design, DesignError, DesignParts, Node, OpKind, Signal, StateElem};
use crate::isa::parse_int;

#[derive(Debug, Error)]
pub enum NetlistError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error(transparent)]
    Design(#[from] DesignError),
}

pub fn write_netlist(d: &Design) -> String {
    let p = d.parts();
    let mut out = String::new();
    for (i, s) in p.signals.iter().enumerate() {
        match &s.name {
            Some(n) => writeln!(out, "sig {i} {} {n}", s.width),
            None => writeln!(out, "sig {i} {}", s.width),
        }
        .unwrap();
    }
    for &i in &p.inputs {
        writeln!(out, "in {i}").unwrap();
    }
    for st in &p.state {
        writeln!(out, "reg {} {:#x} {}", st.sig, st.init, st.next).unwrap();
    }
    for &ni in d.topo_order() {
        let n = &p.nodes[ni];
        let _ = write!(out, "op {} {}", n.out, n.kind.name());
        match n.kind {
            OpKind::Const(v) => write!(out, " {v:#x}").unwrap(),
            OpKind::Slice { hi, lo } => write!(out, " {} {hi} {lo}", n.args[0]).unwrap(),
            _ => {
                for a in &n.args {
                    write!(out, " {a}").unwrap();
                }
            }
        }
        out.push('\n');
    }
    for (name, s) in &p.outputs {
        writeln!(out, "out {name} {s}").unwrap();
    }
    out
}

pub fn parse_netlist(text: &str) -> Result<Design, NetlistError> {
    let mut parts = DesignParts::default();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| NetlistError::Syntax { line: ln + 1, msg };
        let toks: Vec<&str> = line.split_whitespace().collect();
        let num = |i: usize| -> Result<u64, NetlistError> {
            let t = toks
                .get(i)
                .ok_or_else(|| err(format!("missing field {i}")))?;
            parse_int(t)
                .ok()
                .filter(|v| *v >= 0)
                .map(|v| v as u64)
                .ok_or_else(|| err(format!("bad number `{t}`")))
        };
        match toks[0] {
            "sig" => {
                let id = num(1)? as usize;
                if id != parts.signals.len() {
                    return Err(err(format!(
                        "signal ids must be dense and ordered; expected {}",
                        parts.signals.len()
                    )));
                }
                parts.signals.push(Signal {
                    width: num(2)? as u32,
                    name: toks.get(3).map(|s| s.to_string()),
                });
            }
            "reg" => parts.state.push(StateElem {
                sig: num(1)? as usize,
                init: num(2)?,
                next: num(3)? as usize,
            }),
            "in" => parts.inputs.push(num(1)? as usize),
            "out" => {
                let name = toks.get(1).ok_or_else(|| err("missing name".into()))?;
                parts.outputs.insert(name.to_string(), num(2)? as usize);
            }
            "op" => {
                let out = num(1)? as usize;
                let kname = toks.get(2).ok_or_else(|| err("missing op kind".into()))?;
                let (kind, args) = match *kname {
                    "CONST" => (OpKind::Const(num(3)?), vec![]),
                    "SLICE" => (
                        OpKind::Slice {
                            hi: num(4)? as u32,
                            lo: num(5)? as u32,
                        },
                        vec![num(3)? as usize],
                    ),
                    k => {
                        let kind = match k {
                            "NOT" => OpKind::Not,
                            "AND" => OpKind::And,
                            "OR" => OpKind::Or,
                            "XOR" => OpKind::Xor,
                            "ADD" => OpKind::Add,
                            "SUB" => OpKind::Sub,
                            "MUL" => OpKind::Mul,
                            "EQ" => OpKind::Eq,
                            "ULT" => OpKind::Ult,
                            "MUX" => OpKind::Mux,
                            "CONCAT" => OpKind::Concat,
                            other => return Err(err(format!("unknown op `{other}`"))),
                        };
                        let args = (3..toks.len())
                            .map(|i| num(i).map(|v| v as usize))
                            .collect::<Result<_, _>>()?;
                        (kind, args)
                    }
                };
                parts.nodes.push(Node { out, kind, args });
            }
            other => return Err(err(format!("unknown declaration `{other}`"))),
        }
    }
    Ok(Design::new(parts)?)
}
