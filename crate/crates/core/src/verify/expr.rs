//! Relational predicates over the product's state elements and signals.
//!
//! Used for `state_invariant` assumptions and extra Houdini candidates:
//!
//! ```text
//! L.prog_len == R.prog_len       both sides named explicitly
//! prog_len <= 3                  no side: holds for each copy
//! L.imem* == R.imem*             `*` expands over matching core state names
//! opcode(imem*) in {LI, DIV}     opcode field of instruction words
//! ```

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::product::{ProductDesign, LEFT, RIGHT};
use crate::hwir::{DesignBuilder, Sig};
use crate::isa::Opcode;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PredicateError {
    #[error("cannot parse predicate `{0}`: {1}")]
    Parse(String, String),
    #[error("predicate `{0}`: no signal named `{1}`")]
    Unknown(String, String),
    #[error("predicate `{0}`: wildcard `{1}` matches no state element")]
    EmptyWildcard(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    L,
    R,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Operand {
    Ref { side: Option<Side>, name: String },
    Const(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Pred {
    Cmp(Operand, CmpOp, Operand),
    OpcodeIn(Operand, Vec<Opcode>),
}

/// A parsed predicate; serializes as its source text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct StatePredicate {
    text: String,
    pred: Pred,
}

impl fmt::Display for StatePredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.text)
    }
}

impl From<StatePredicate> for String {
    fn from(p: StatePredicate) -> String {
        p.text
    }
}

impl TryFrom<String> for StatePredicate {
    type Error = PredicateError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

fn parse_operand(tok: &str) -> Result<Operand, String> {
    let t = tok.trim();
    if t.is_empty() {
        return Err("missing operand".into());
    }
    if t.starts_with(|c: char| c.is_ascii_digit()) {
        let v = match t.strip_prefix("0x") {
            Some(h) => u64::from_str_radix(h, 16),
            None => t.parse(),
        };
        return v.map(Operand::Const).map_err(|_| format!("bad number `{t}`"));
    }
    let (side, name) = if let Some(n) = t.strip_prefix(LEFT) {
        (Some(Side::L), n)
    } else if let Some(n) = t.strip_prefix(RIGHT) {
        (Some(Side::R), n)
    } else {
        (None, t)
    };
    let ok = name
        .trim_end_matches('*')
        .chars()
        .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.');
    if name.is_empty() || !ok || name[..name.len() - 1].contains('*') {
        return Err(format!("bad signal reference `{t}`"));
    }
    Ok(Operand::Ref {
        side,
        name: name.to_string(),
    })
}

impl FromStr for StatePredicate {
    type Err = PredicateError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let text = s.trim().to_string();
        let err = |m: String| PredicateError::Parse(text.clone(), m);
        let pred = if let Some(rest) = text.strip_prefix("opcode(") {
            let (arg, tail) = rest.split_once(')').ok_or_else(|| err("missing `)`".into()))?;
            let set = tail
                .trim()
                .strip_prefix("in")
                .map(str::trim)
                .and_then(|t| t.strip_prefix('{'))
                .and_then(|t| t.strip_suffix('}'))
                .ok_or_else(|| err("expected `in {OP, ...}`".into()))?;
            let ops = set
                .split(',')
                .map(|o| {
                    let o = o.trim();
                    Opcode::ALL
                        .into_iter()
                        .find(|x| x.mnemonic().eq_ignore_ascii_case(o))
                        .ok_or_else(|| err(format!("unknown opcode `{o}`")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            let arg = parse_operand(arg).map_err(err)?;
            if matches!(arg, Operand::Const(_)) {
                return Err(err("opcode() needs a signal".into()));
            }
            Pred::OpcodeIn(arg, ops)
        } else {
            let ops = [
                ("==", CmpOp::Eq),
                ("!=", CmpOp::Ne),
                ("<=", CmpOp::Le),
                (">=", CmpOp::Ge),
                ("<", CmpOp::Lt),
                (">", CmpOp::Gt),
            ];
            let (pos, tok, op) = ops
                .iter()
                .filter_map(|&(tok, op)| text.find(tok).map(|p| (p, tok, op)))
                .min_by_key(|&(p, tok, _)| (p, std::cmp::Reverse(tok.len())))
                .ok_or_else(|| err("expected a comparison".into()))?;
            let a = parse_operand(&text[..pos]).map_err(err)?;
            let b = parse_operand(&text[pos + tok.len()..]).map_err(err)?;
            Pred::Cmp(a, op, b)
        };
        Ok(StatePredicate { text, pred })
    }
}

/// A resolved operand: product signal name or constant.
#[derive(Debug, Clone)]
enum Leaf {
    Sig(String),
    Const(u64),
}

impl StatePredicate {
    fn operands(&self) -> Vec<&Operand> {
        match &self.pred {
            Pred::Cmp(a, _, b) => vec![a, b],
            Pred::OpcodeIn(a, _) => vec![a],
        }
    }

    /// Concrete instances as product-level leaf operands.
    fn instances(&self, core_names: &[String]) -> Result<Vec<Vec<Leaf>>, PredicateError> {
        let ops = self.operands();
        let sided = ops
            .iter()
            .any(|o| matches!(o, Operand::Ref { side: Some(_), .. }));
        let sides: Vec<Option<Side>> = if sided {
            vec![None]
        } else {
            vec![Some(Side::L), Some(Side::R)]
        };
        let wild: Option<&str> = ops.iter().find_map(|o| match o {
            Operand::Ref { name, .. } => name.strip_suffix('*'),
            _ => None,
        });
        let names: Vec<Option<&str>> = match wild {
            None => vec![None],
            Some(stem) => {
                let m: Vec<Option<&str>> = core_names
                    .iter()
                    .filter(|n| {
                        n.strip_prefix(stem)
                            .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
                    })
                    .map(|n| Some(n.as_str()))
                    .collect();
                if m.is_empty() {
                    return Err(PredicateError::EmptyWildcard(self.text.clone(), format!("{stem}*")));
                }
                m
            }
        };
        let mut out = Vec::new();
        for &default_side in &sides {
            for &expand in &names {
                let leaves = ops
                    .iter()
                    .map(|o| match o {
                        Operand::Const(v) => Leaf::Const(*v),
                        Operand::Ref { side, name } => {
                            let side = side.or(default_side).unwrap();
                            let prefix = if side == Side::L { LEFT } else { RIGHT };
                            let name = match (name.strip_suffix('*'), expand) {
                                (Some(_), Some(e)) => e,
                                _ => name.as_str(),
                            };
                            Leaf::Sig(format!("{prefix}{name}"))
                        }
                    })
                    .collect();
                out.push(leaves);
            }
        }
        Ok(out)
    }

    /// Builds the predicate as a 1-bit signal over the product's signals.
    pub fn build(&self, b: &mut DesignBuilder, p: &ProductDesign) -> Result<Sig, PredicateError> {
        let core_names = core_state_names(p);
        let mut parts = Vec::new();
        for leaves in self.instances(&core_names)? {
            let mut sigs = Vec::new();
            for l in &leaves {
                sigs.push(match l {
                    Leaf::Sig(n) => Some(
                        b.lookup(n)
                            .ok_or_else(|| PredicateError::Unknown(self.text.clone(), n.clone()))?,
                    ),
                    Leaf::Const(_) => None,
                });
            }
            let bit = match &self.pred {
                Pred::OpcodeIn(_, ops) => {
                    let w = sigs[0].unwrap();
                    let field = if w.width >= 32 { b.slice(w, 31, 28) } else { w };
                    let hits: Vec<Sig> = ops
                        .iter()
                        .map(|o| b.eq_const(field, o.ordinal() as u64))
                        .collect();
                    b.or_all(&hits)
                }
                Pred::Cmp(_, op, _) => {
                    let width = leaves
                        .iter()
                        .zip(&sigs)
                        .map(|(l, s)| match (l, s) {
                            (_, Some(s)) => s.width,
                            (Leaf::Const(v), None) => 64 - v.leading_zeros().min(63),
                            _ => unreachable!(),
                        })
                        .max()
                        .unwrap();
                    let mut vals = Vec::new();
                    for (l, s) in leaves.iter().zip(&sigs) {
                        vals.push(match (l, s) {
                            (_, Some(s)) => b.resize(*s, width),
                            (Leaf::Const(v), None) => b.konst(*v, width),
                            _ => unreachable!(),
                        });
                    }
                    let (x, y) = (vals[0], vals[1]);
                    match op {
                        CmpOp::Eq => b.eq(x, y),
                        CmpOp::Ne => b.ne(x, y),
                        CmpOp::Lt => b.ult(x, y),
                        CmpOp::Le => b.ule(x, y),
                        CmpOp::Gt => b.ult(y, x),
                        CmpOp::Ge => b.ule(y, x),
                    }
                }
            };
            parts.push(bit);
        }
        Ok(b.and_all(&parts))
    }

    /// Evaluates the predicate on concrete values looked up by product
    /// signal name (used by tests and replay).
    pub fn eval(&self, p: &ProductDesign, value: impl Fn(&str) -> Option<u64>) -> Result<bool, PredicateError> {
        let core_names = core_state_names(p);
        for leaves in self.instances(&core_names)? {
            let vals = leaves
                .iter()
                .map(|l| match l {
                    Leaf::Const(v) => Ok(*v),
                    Leaf::Sig(n) => value(n).ok_or_else(|| PredicateError::Unknown(self.text.clone(), n.clone())),
                })
                .collect::<Result<Vec<u64>, _>>()?;
            let ok = match &self.pred {
                Pred::OpcodeIn(_, ops) => {
                    let field = (vals[0] >> 28) as u32 & 0xF;
                    ops.iter().any(|o| o.ordinal() == field)
                }
                Pred::Cmp(_, op, _) => {
                    let (x, y) = (vals[0], vals[1]);
                    match op {
                        CmpOp::Eq => x == y,
                        CmpOp::Ne => x != y,
                        CmpOp::Lt => x < y,
                        CmpOp::Le => x <= y,
                        CmpOp::Gt => x > y,
                        CmpOp::Ge => x >= y,
                    }
                }
            };
            if !ok {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Names of the core's state elements (without copy prefix).
pub fn core_state_names(p: &ProductDesign) -> Vec<String> {
    p.left
        .state
        .iter()
        .filter_map(|&i| p.design.signal_name(p.design.state()[i].sig))
        .map(|n| n.strip_prefix(LEFT).unwrap_or(n).to_string())
        .collect()
}

/// Conjunction of predicates as one signal.
pub fn build_all(
    b: &mut DesignBuilder,
    p: &ProductDesign,
    preds: &[StatePredicate],
) -> Result<Sig, PredicateError> {
    let mut bits = Vec::new();
    for q in preds {
        bits.push(q.build(b, p)?);
    }
    Ok(b.and_all(&bits))
}
