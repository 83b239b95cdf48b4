//! Contract atoms, templates and contract traces.
//!
//! An atom pairs an applicability predicate (membership of the retired
//! instruction's opcode in a class) with a tagged leakage function. Atoms that
//! share a tag must have disjoint classes, which keeps at most one observation
//! per tag in every step.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::isa::{floor_log2, Opcode, RetirementRecord};

/// A retirement-record field usable in leakage expressions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Field {
    Pc,
    Opcode,
    Rd,
    Rs1,
    Rs2,
    Imm,
    Rs1Val,
    Rs2Val,
    RdVal,
    MemAddr,
    MemRdata,
    MemWdata,
    BranchTaken,
}

impl Field {
    pub const ALL: [Field; 13] = [
        Field::Pc,
        Field::Opcode,
        Field::Rd,
        Field::Rs1,
        Field::Rs2,
        Field::Imm,
        Field::Rs1Val,
        Field::Rs2Val,
        Field::RdVal,
        Field::MemAddr,
        Field::MemRdata,
        Field::MemWdata,
        Field::BranchTaken,
    ];

    /// Name of the matching record field (and core output `rec.<name>`).
    pub fn record_name(self) -> &'static str {
        match self {
            Field::Pc => "pc",
            Field::Opcode => "opcode",
            Field::Rd => "rd",
            Field::Rs1 => "rs1",
            Field::Rs2 => "rs2",
            Field::Imm => "imm",
            Field::Rs1Val => "rs1_val",
            Field::Rs2Val => "rs2_val",
            Field::RdVal => "rd_val",
            Field::MemAddr => "mem_addr",
            Field::MemRdata => "mem_rdata",
            Field::MemWdata => "mem_wdata",
            Field::BranchTaken => "branch_taken",
        }
    }

    pub fn get(self, r: &RetirementRecord) -> u64 {
        match self {
            Field::Pc => r.pc,
            Field::Opcode => r.opcode.ordinal() as u64,
            Field::Rd => r.rd as u64,
            Field::Rs1 => r.rs1 as u64,
            Field::Rs2 => r.rs2 as u64,
            Field::Imm => r.imm,
            Field::Rs1Val => r.rs1_val,
            Field::Rs2Val => r.rs2_val,
            Field::RdVal => r.rd_val,
            Field::MemAddr => r.mem_addr,
            Field::MemRdata => r.mem_rdata,
            Field::MemWdata => r.mem_wdata,
            Field::BranchTaken => r.branch_taken as u64,
        }
    }
}

/// Leakage expression over one retirement record.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LeakExpr {
    Field(Field),
    Const(u64),
    Eq(Box<LeakExpr>, Box<LeakExpr>),
    Ne(Box<LeakExpr>, Box<LeakExpr>),
    /// The `n` least significant bits.
    LowBits(Box<LeakExpr>, u32),
    /// floor(log2(x)), with log2(0) = 0.
    Log2(Box<LeakExpr>),
    /// Constant observation: only applicability is exposed.
    One,
}

impl LeakExpr {
    pub fn field(f: Field) -> Self {
        LeakExpr::Field(f)
    }

    pub fn eq_const(f: Field, k: u64) -> Self {
        LeakExpr::Eq(Box::new(LeakExpr::Field(f)), Box::new(LeakExpr::Const(k)))
    }

    pub fn eval(&self, r: &RetirementRecord) -> u64 {
        match self {
            LeakExpr::Field(f) => f.get(r),
            LeakExpr::Const(k) => *k,
            LeakExpr::Eq(a, b) => (a.eval(r) == b.eval(r)) as u64,
            LeakExpr::Ne(a, b) => (a.eval(r) != b.eval(r)) as u64,
            LeakExpr::LowBits(a, n) => a.eval(r) & crate::isa::mask(*n),
            LeakExpr::Log2(a) => floor_log2(a.eval(r)),
            LeakExpr::One => 1,
        }
    }

    /// Record fields the expression reads.
    pub fn fields(&self, out: &mut BTreeSet<Field>) {
        match self {
            LeakExpr::Field(f) => {
                out.insert(*f);
            }
            LeakExpr::Eq(a, b) | LeakExpr::Ne(a, b) => {
                a.fields(out);
                b.fields(out);
            }
            LeakExpr::LowBits(a, _) | LeakExpr::Log2(a) => a.fields(out),
            LeakExpr::Const(_) | LeakExpr::One => {}
        }
    }
}

impl fmt::Display for LeakExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LeakExpr::Field(x) => f.write_str(x.record_name()),
            LeakExpr::Const(k) => write!(f, "{k}"),
            LeakExpr::Eq(a, b) => write!(f, "{a} == {b}"),
            LeakExpr::Ne(a, b) => write!(f, "{a} != {b}"),
            LeakExpr::LowBits(a, n) => write!(f, "{a}[{}:0]", n - 1),
            LeakExpr::Log2(a) => write!(f, "log2({a})"),
            LeakExpr::One => f.write_str("-"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LeakageFunction {
    pub id: String,
    pub expr: LeakExpr,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ContractAtom {
    /// Opcodes the atom applies to (sorted, non-empty).
    pub class: Vec<Opcode>,
    pub leak: LeakageFunction,
}

impl ContractAtom {
    pub fn new(class: impl IntoIterator<Item = Opcode>, id: &str, expr: LeakExpr) -> Self {
        let set: BTreeSet<Opcode> = class.into_iter().collect();
        ContractAtom {
            class: set.into_iter().collect(),
            leak: LeakageFunction {
                id: id.to_string(),
                expr,
            },
        }
    }

    pub fn applies(&self, r: &RetirementRecord) -> bool {
        self.class.contains(&r.opcode)
    }

    pub fn id(&self) -> &str {
        &self.leak.id
    }

    /// Observation value on `r` when applicable.
    pub fn observe(&self, r: &RetirementRecord) -> Option<u64> {
        self.applies(r).then(|| self.leak.expr.eval(r))
    }
}

impl fmt::Display for ContractAtom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = self.class.iter().map(|o| o.mnemonic()).collect();
        write!(f, "{}:{}", names.join(","), self.leak.id)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContractError {
    #[error("atom {0} has an empty opcode class")]
    EmptyClass(String),
    #[error("atoms {0} and {1} share leakage id but both apply to {2}")]
    Overlap(String, String, Opcode),
    #[error("atoms {0} and {1} share leakage id but have different expressions")]
    Inconsistent(String, String),
    #[error("unknown template family `{0}`")]
    UnknownFamily(String),
    #[error("no atom `{0}` in the template")]
    UnknownAtom(String),
}

/// An ordered set of candidate atoms.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContractTemplate {
    pub atoms: Vec<ContractAtom>,
}

impl ContractTemplate {
    pub fn new(atoms: Vec<ContractAtom>) -> Result<Self, ContractError> {
        let t = ContractTemplate { atoms };
        validate_template(&t)?;
        Ok(t)
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// The atoms at the given indices.
    pub fn subset(&self, idx: &[usize]) -> Vec<ContractAtom> {
        idx.iter().map(|&i| self.atoms[i].clone()).collect()
    }

    /// Index of the atom whose display form is `name` (e.g. `DIV:rs2_val`).
    pub fn find(&self, name: &str) -> Result<usize, ContractError> {
        let name = name.trim();
        self.atoms
            .iter()
            .position(|a| a.to_string() == name)
            .ok_or_else(|| ContractError::UnknownAtom(name.to_string()))
    }

    /// Indices of atoms grouped by leakage id.
    pub fn groups(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut g: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, a) in self.atoms.iter().enumerate() {
            g.entry(a.id()).or_default().push(i);
        }
        g
    }

    /// Distinct leakage functions (by id) in template order.
    pub fn leakage_functions(&self) -> Vec<&LeakageFunction> {
        let mut seen = BTreeSet::new();
        self.atoms
            .iter()
            .filter(|a| seen.insert(a.id()))
            .map(|a| &a.leak)
            .collect()
    }
}

/// Atoms sharing a leakage id must have disjoint opcode classes and the same
/// expression. Different ids may share an expression.
pub fn validate_template(t: &ContractTemplate) -> Result<(), ContractError> {
    for a in &t.atoms {
        if a.class.is_empty() {
            return Err(ContractError::EmptyClass(a.to_string()));
        }
    }
    for (i, a) in t.atoms.iter().enumerate() {
        for b in &t.atoms[i + 1..] {
            if a.id() != b.id() {
                continue;
            }
            if let Some(op) = a.class.iter().find(|o| b.class.contains(o)) {
                return Err(ContractError::Overlap(a.to_string(), b.to_string(), *op));
            }
            if a.leak.expr != b.leak.expr {
                return Err(ContractError::Inconsistent(a.to_string(), b.to_string()));
            }
        }
    }
    Ok(())
}

/// One contract observation: leakage id and value.
pub type Observation = (String, u64);

/// Observation sets (sorted by id) for each retirement.
pub type ContractTrace = Vec<Vec<Observation>>;

/// Observations of `atoms` on each record.
pub fn eval_contract(atoms: &[ContractAtom], recs: &[RetirementRecord]) -> ContractTrace {
    recs.iter()
        .map(|r| {
            let set: BTreeSet<Observation> = atoms
                .iter()
                .filter_map(|a| a.observe(r).map(|v| (a.id().to_string(), v)))
                .collect();
            set.into_iter().collect()
        })
        .collect()
}

/// Template families.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    /// Instruction encoding: opcode, register indices, immediate.
    I,
    /// Register values and the pc.
    R,
    /// Memory address and data.
    M,
    /// Alignment of memory accesses.
    A,
    /// Branch outcomes.
    BT,
    /// Zero tests and log2 of register values.
    V,
    /// rs2 value equal to each constant.
    EqK(Vec<u64>),
    /// The LI/DIV example template with nine atoms.
    LiDiv,
}

impl FromStr for Family {
    type Err = ContractError;
    fn from_str(s: &str) -> Result<Self, ContractError> {
        let s = s.trim();
        if let Some(rest) = s.strip_prefix("EQk:").or_else(|| s.strip_prefix("EQK:")) {
            let ks = rest
                .split(',')
                .map(|k| crate::isa::parse_int(k.trim()).ok().filter(|v| *v >= 0))
                .collect::<Option<Vec<_>>>()
                .ok_or_else(|| ContractError::UnknownFamily(s.to_string()))?;
            return Ok(Family::EqK(ks.into_iter().map(|v| v as u64).collect()));
        }
        match s {
            "I" => Ok(Family::I),
            "R" => Ok(Family::R),
            "M" => Ok(Family::M),
            "A" => Ok(Family::A),
            "BT" => Ok(Family::BT),
            "V" => Ok(Family::V),
            "LIDIV" => Ok(Family::LiDiv),
            _ => Err(ContractError::UnknownFamily(s.to_string())),
        }
    }
}

/// Expands `B` into `I`, `R`, `M` and parses the rest.
pub fn parse_families(names: &[String]) -> Result<Vec<Family>, ContractError> {
    let mut out = Vec::new();
    for n in names {
        if n.trim() == "B" {
            out.extend([Family::I, Family::R, Family::M]);
        } else {
            out.push(n.parse()?);
        }
    }
    Ok(out)
}

/// Union of the atoms of `families`, restricted to the opcode universe.
/// Duplicate atoms are dropped.
pub fn builtin_template(families: &[Family], universe: &[Opcode]) -> ContractTemplate {
    let u: Vec<Opcode> = Opcode::ALL
        .into_iter()
        .filter(|o| universe.contains(o) && *o != Opcode::Nop)
        .collect();
    let mut atoms: Vec<ContractAtom> = Vec::new();
    let per_op = |atoms: &mut Vec<ContractAtom>, pred: fn(Opcode) -> bool, id: &str, e: LeakExpr| {
        for &op in u.iter().filter(|&&o| pred(o)) {
            atoms.push(ContractAtom::new([op], id, e.clone()));
        }
    };
    let f = LeakExpr::field;
    let zero = |x: Field| LeakExpr::eq_const(x, 0);
    let log2 = |x: Field| LeakExpr::Log2(Box::new(f(x)));
    for fam in families {
        match fam {
            Family::I => {
                per_op(&mut atoms, |_| true, "opcode", f(Field::Opcode));
                per_op(&mut atoms, Opcode::uses_rd, "rd", f(Field::Rd));
                per_op(&mut atoms, Opcode::uses_rs1, "rs1", f(Field::Rs1));
                per_op(&mut atoms, Opcode::uses_rs2, "rs2", f(Field::Rs2));
                per_op(&mut atoms, Opcode::uses_imm, "imm", f(Field::Imm));
            }
            Family::R => {
                per_op(&mut atoms, Opcode::uses_rs1, "rs1_val", f(Field::Rs1Val));
                per_op(&mut atoms, Opcode::uses_rs2, "rs2_val", f(Field::Rs2Val));
                per_op(&mut atoms, Opcode::writes_rd, "rd_val", f(Field::RdVal));
                per_op(&mut atoms, |_| true, "pc", f(Field::Pc));
            }
            Family::M => {
                per_op(&mut atoms, Opcode::is_memory, "mem_addr", f(Field::MemAddr));
                per_op(&mut atoms, |o| o == Opcode::Lw, "mem_rdata", f(Field::MemRdata));
                per_op(&mut atoms, |o| o == Opcode::Sw, "mem_wdata", f(Field::MemWdata));
            }
            Family::A => {
                let mem: Vec<Opcode> = u.iter().copied().filter(|o| o.is_memory()).collect();
                if !mem.is_empty() {
                    let low = || Box::new(LeakExpr::LowBits(Box::new(f(Field::MemAddr)), 2));
                    atoms.push(ContractAtom::new(
                        mem.clone(),
                        "IS_ALIGNED",
                        LeakExpr::Eq(low(), Box::new(LeakExpr::Const(0))),
                    ));
                    atoms.push(ContractAtom::new(
                        mem,
                        "IS_HALF_ALIGNED",
                        LeakExpr::Ne(low(), Box::new(LeakExpr::Const(3))),
                    ));
                }
            }
            Family::BT => {
                // JAL is always taken, so the shared expression is the
                // constant 1 on JAL.
                per_op(
                    &mut atoms,
                    |o| matches!(o, Opcode::Beq | Opcode::Jal),
                    "branch_taken",
                    f(Field::BranchTaken),
                );
            }
            Family::V => {
                per_op(&mut atoms, Opcode::uses_rs1, "rs1_val==0", zero(Field::Rs1Val));
                per_op(&mut atoms, Opcode::uses_rs1, "log2(rs1_val)", log2(Field::Rs1Val));
                per_op(&mut atoms, Opcode::uses_rs2, "rs2_val==0", zero(Field::Rs2Val));
                per_op(&mut atoms, Opcode::uses_rs2, "log2(rs2_val)", log2(Field::Rs2Val));
                per_op(&mut atoms, Opcode::writes_rd, "rd_val==0", zero(Field::RdVal));
                per_op(&mut atoms, Opcode::writes_rd, "log2(rd_val)", log2(Field::RdVal));
            }
            Family::EqK(ks) => {
                for &k in ks {
                    let id = format!("Reg[RS2]={k}?");
                    for &op in u.iter().filter(|o| o.uses_rs2()) {
                        atoms.push(ContractAtom::new(
                            [op],
                            &id,
                            LeakExpr::eq_const(Field::Rs2Val, k),
                        ));
                    }
                }
            }
            Family::LiDiv => {
                use Opcode::{Div, Li};
                atoms.push(ContractAtom::new([Li], "li", LeakExpr::One));
                atoms.push(ContractAtom::new([Div], "div", LeakExpr::One));
                atoms.push(ContractAtom::new([Li], "imm", f(Field::Imm)));
                atoms.push(ContractAtom::new([Div], "RD", f(Field::Rd)));
                atoms.push(ContractAtom::new([Div], "Reg[RD]", f(Field::RdVal)));
                atoms.push(ContractAtom::new([Div], "RS1", f(Field::Rs1)));
                atoms.push(ContractAtom::new([Div], "Reg[RS1]", f(Field::Rs1Val)));
                atoms.push(ContractAtom::new([Div], "RS2", f(Field::Rs2)));
                atoms.push(ContractAtom::new([Div], "Reg[RS2]", f(Field::Rs2Val)));
            }
        }
    }
    let mut seen = BTreeSet::new();
    atoms.retain(|a| seen.insert((a.class.clone(), a.leak.id.clone())));
    ContractTemplate { atoms }
}
