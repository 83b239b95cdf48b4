//! TinyRV: the mini-ISA, its reference interpreter and the retirement records
//! the interpreter emits for every executed instruction.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of architectural registers. Register 0 is hard-wired to zero.
pub const NUM_REGS: usize = 8;
/// Width of the immediate field in the 32-bit encoding.
pub const IMM_BITS: u32 = 19;
pub const IMM_MIN: i32 = -(1 << (IMM_BITS - 1));
pub const IMM_MAX: i32 = (1 << (IMM_BITS - 1)) - 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IsaError {
    #[error("invalid opcode ordinal {0}")]
    BadOpcode(u32),
    #[error("unknown mnemonic `{0}`")]
    BadMnemonic(String),
    #[error("register index {0} out of range")]
    BadRegister(u32),
    #[error("immediate {0} does not fit in {IMM_BITS} bits")]
    BadImmediate(i64),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Opcode {
    Li = 0,
    Add = 1,
    Sub = 2,
    Mul = 3,
    Div = 4,
    Rem = 5,
    Lw = 6,
    Sw = 7,
    Beq = 8,
    Jal = 9,
    Nop = 10,
}

impl Opcode {
    pub const ALL: [Opcode; 11] = [
        Opcode::Li,
        Opcode::Add,
        Opcode::Sub,
        Opcode::Mul,
        Opcode::Div,
        Opcode::Rem,
        Opcode::Lw,
        Opcode::Sw,
        Opcode::Beq,
        Opcode::Jal,
        Opcode::Nop,
    ];

    pub fn ordinal(self) -> u32 {
        self as u32
    }

    pub fn from_ordinal(v: u32) -> Result<Opcode, IsaError> {
        Opcode::ALL
            .get(v as usize)
            .copied()
            .ok_or(IsaError::BadOpcode(v))
    }

    pub fn mnemonic(self) -> &'static str {
        match self {
            Opcode::Li => "LI",
            Opcode::Add => "ADD",
            Opcode::Sub => "SUB",
            Opcode::Mul => "MUL",
            Opcode::Div => "DIV",
            Opcode::Rem => "REM",
            Opcode::Lw => "LW",
            Opcode::Sw => "SW",
            Opcode::Beq => "BEQ",
            Opcode::Jal => "JAL",
            Opcode::Nop => "NOP",
        }
    }

    pub fn uses_rd(self) -> bool {
        self.writes_rd()
    }

    pub fn writes_rd(self) -> bool {
        matches!(
            self,
            Opcode::Li
                | Opcode::Add
                | Opcode::Sub
                | Opcode::Mul
                | Opcode::Div
                | Opcode::Rem
                | Opcode::Lw
                | Opcode::Jal
        )
    }

    pub fn uses_rs1(self) -> bool {
        matches!(
            self,
            Opcode::Add
                | Opcode::Sub
                | Opcode::Mul
                | Opcode::Div
                | Opcode::Rem
                | Opcode::Lw
                | Opcode::Sw
                | Opcode::Beq
        )
    }

    pub fn uses_rs2(self) -> bool {
        matches!(
            self,
            Opcode::Add
                | Opcode::Sub
                | Opcode::Mul
                | Opcode::Div
                | Opcode::Rem
                | Opcode::Sw
                | Opcode::Beq
        )
    }

    pub fn uses_imm(self) -> bool {
        matches!(
            self,
            Opcode::Li | Opcode::Lw | Opcode::Sw | Opcode::Beq | Opcode::Jal
        )
    }

    pub fn is_memory(self) -> bool {
        matches!(self, Opcode::Lw | Opcode::Sw)
    }

    /// Opcodes that take the same operand fields. Used by opcode-substituting
    /// test-case modifiers.
    pub fn shape_class(self) -> u8 {
        match self {
            Opcode::Add | Opcode::Sub | Opcode::Mul | Opcode::Div | Opcode::Rem => 0,
            Opcode::Li | Opcode::Jal => 1,
            Opcode::Lw => 2,
            Opcode::Sw | Opcode::Beq => 3,
            Opcode::Nop => 4,
        }
    }
}

impl fmt::Display for Opcode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.mnemonic())
    }
}

impl FromStr for Opcode {
    type Err = IsaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let up = s.trim().to_ascii_uppercase();
        Opcode::ALL
            .iter()
            .copied()
            .find(|o| o.mnemonic() == up)
            .ok_or(IsaError::BadMnemonic(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Instruction {
    pub opcode: Opcode,
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    /// Signed immediate, within the 19-bit encodable range.
    pub imm: i32,
}

impl Instruction {
    pub fn new(opcode: Opcode, rd: u8, rs1: u8, rs2: u8, imm: i32) -> Result<Self, IsaError> {
        for r in [rd, rs1, rs2] {
            if r as usize >= NUM_REGS {
                return Err(IsaError::BadRegister(r as u32));
            }
        }
        if !(IMM_MIN..=IMM_MAX).contains(&imm) {
            return Err(IsaError::BadImmediate(imm as i64));
        }
        Ok(Instruction {
            opcode,
            rd,
            rs1,
            rs2,
            imm,
        })
    }

    pub fn li(rd: u8, imm: i32) -> Self {
        Self::new(Opcode::Li, rd, 0, 0, imm).expect("valid LI")
    }

    pub fn rrr(opcode: Opcode, rd: u8, rs1: u8, rs2: u8) -> Self {
        Self::new(opcode, rd, rs1, rs2, 0).expect("valid register instruction")
    }

    pub fn nop() -> Self {
        Self::new(Opcode::Nop, 0, 0, 0, 0).expect("valid NOP")
    }

    /// bits[31:28]=opcode, [27:25]=rd, [24:22]=rs1, [21:19]=rs2, [18:0]=imm.
    pub fn encode(&self) -> u32 {
        (self.opcode.ordinal() << 28)
            | ((self.rd as u32) << 25)
            | ((self.rs1 as u32) << 22)
            | ((self.rs2 as u32) << 19)
            | ((self.imm as u32) & ((1 << IMM_BITS) - 1))
    }

    pub fn decode(word: u32) -> Result<Self, IsaError> {
        let opcode = Opcode::from_ordinal(word >> 28)?;
        let raw = word & ((1 << IMM_BITS) - 1);
        let imm = ((raw << (32 - IMM_BITS)) as i32) >> (32 - IMM_BITS);
        Ok(Instruction {
            opcode,
            rd: ((word >> 25) & 7) as u8,
            rs1: ((word >> 22) & 7) as u8,
            rs2: ((word >> 19) & 7) as u8,
            imm,
        })
    }

    /// Immediate as a `width`-bit value.
    pub fn imm_value(&self, width: u32) -> u64 {
        (self.imm as i64 as u64) & mask(width)
    }
}

impl fmt::Display for Instruction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}, {}, {}, {}",
            self.opcode, self.rd, self.rs1, self.rs2, self.imm
        )
    }
}

fn parse_reg(tok: &str) -> Result<u8, String> {
    let t = tok.trim();
    let t = t
        .strip_prefix('R')
        .or_else(|| t.strip_prefix('r'))
        .or_else(|| t.strip_prefix('x'))
        .unwrap_or(t);
    let v: u32 = t.parse().map_err(|_| format!("bad register `{tok}`"))?;
    if v as usize >= NUM_REGS {
        return Err(format!("register `{tok}` out of range"));
    }
    Ok(v as u8)
}

pub fn parse_int(tok: &str) -> Result<i64, String> {
    let t = tok.trim();
    let (neg, body) = match t.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, t),
    };
    let v = if let Some(h) = body.strip_prefix("0x").or_else(|| body.strip_prefix("0X")) {
        i64::from_str_radix(h, 16)
    } else {
        body.parse::<i64>()
    }
    .map_err(|_| format!("bad integer `{tok}`"))?;
    Ok(if neg { -v } else { v })
}

/// Parses program text: one `OPC rd, rs1, rs2, imm` per line, `#` comments.
pub fn parse_program(text: &str) -> Result<Vec<Instruction>, IsaError> {
    let mut prog = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| IsaError::Parse { line: i + 1, msg };
        let (mn, rest) = line.split_once(char::is_whitespace).unwrap_or((line, ""));
        let opcode: Opcode = mn.parse().map_err(|e: IsaError| err(e.to_string()))?;
        let fields: Vec<&str> = rest
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        if fields.len() != 4 && !(opcode == Opcode::Nop && fields.is_empty()) {
            return Err(err(format!("expected 4 operands, found {}", fields.len())));
        }
        let insn = if fields.is_empty() {
            Instruction::nop()
        } else {
            let rd = parse_reg(fields[0]).map_err(err)?;
            let rs1 = parse_reg(fields[1]).map_err(err)?;
            let rs2 = parse_reg(fields[2]).map_err(err)?;
            let imm = parse_int(fields[3]).map_err(err)?;
            if imm < IMM_MIN as i64 || imm > IMM_MAX as i64 {
                return Err(err(format!("immediate {imm} out of range")));
            }
            Instruction::new(opcode, rd, rs1, rs2, imm as i32).map_err(|e| err(e.to_string()))?
        };
        prog.push(insn);
    }
    Ok(prog)
}

pub fn format_program(prog: &[Instruction]) -> String {
    prog.iter().map(|i| format!("{i}\n")).collect()
}

pub fn mask(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

pub fn to_signed(v: u64, width: u32) -> i64 {
    let shift = 64 - width;
    ((v << shift) as i64) >> shift
}

/// RISC-V style signed division: x/0 = -1, MIN/-1 = MIN.
pub fn div_signed(a: u64, b: u64, width: u32) -> u64 {
    let m = mask(width);
    if b & m == 0 {
        return m;
    }
    let (sa, sb) = (to_signed(a, width), to_signed(b, width));
    (sa.wrapping_div(sb) as u64) & m
}

/// RISC-V style signed remainder: x%0 = x, MIN%-1 = 0.
pub fn rem_signed(a: u64, b: u64, width: u32) -> u64 {
    let m = mask(width);
    if b & m == 0 {
        return a & m;
    }
    let (sa, sb) = (to_signed(a, width), to_signed(b, width));
    (sa.wrapping_rem(sb) as u64) & m
}

pub fn floor_log2(v: u64) -> u64 {
    if v <= 1 {
        0
    } else {
        63 - v.leading_zeros() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArchState {
    pub width: u32,
    pub pc: u64,
    pub regs: [u64; NUM_REGS],
    pub dmem: Vec<u64>,
    pub imem: Vec<Instruction>,
}

impl ArchState {
    pub fn new(width: u32, imem: Vec<Instruction>, dmem_words: usize) -> Self {
        assert!(dmem_words.is_power_of_two(), "dmem size must be a power of two");
        ArchState {
            width,
            pc: 0,
            regs: [0; NUM_REGS],
            dmem: vec![0; dmem_words],
            imem,
        }
    }

    pub fn is_halted(&self) -> bool {
        self.pc >= self.imem.len() as u64
    }

    pub fn reg(&self, r: u8) -> u64 {
        if r == 0 {
            0
        } else {
            self.regs[r as usize]
        }
    }

    pub fn set_reg(&mut self, r: u8, v: u64) {
        if r != 0 {
            self.regs[r as usize] = v & mask(self.width);
        }
    }

    /// Word index addressed by a byte address.
    pub fn word_index(&self, byte_addr: u64) -> usize {
        ((byte_addr >> 2) as usize) & (self.dmem.len() - 1)
    }

    /// Executes one instruction in place and returns its retirement record.
    pub fn step_in_place(&mut self) -> RetirementRecord {
        if self.is_halted() {
            return RetirementRecord::halted(self.pc);
        }
        let w = self.width;
        let m = mask(w);
        let insn = self.imem[self.pc as usize];
        let (a, b) = (self.reg(insn.rs1), self.reg(insn.rs2));
        let imm = insn.imm_value(w);
        let mut rec = RetirementRecord {
            pc: self.pc,
            insn_word: insn.encode(),
            opcode: insn.opcode,
            rd: insn.rd,
            rs1: insn.rs1,
            rs2: insn.rs2,
            imm,
            rs1_val: a,
            rs2_val: b,
            ..RetirementRecord::default()
        };
        let mut next_pc = (self.pc + 1) & m;
        let result = match insn.opcode {
            Opcode::Li => Some(imm),
            Opcode::Add => Some(a.wrapping_add(b) & m),
            Opcode::Sub => Some(a.wrapping_sub(b) & m),
            Opcode::Mul => Some(a.wrapping_mul(b) & m),
            Opcode::Div => Some(div_signed(a, b, w)),
            Opcode::Rem => Some(rem_signed(a, b, w)),
            Opcode::Lw => {
                let ea = a.wrapping_add(imm) & m;
                let v = self.dmem[self.word_index(ea)];
                rec.mem_addr = ea;
                rec.mem_addr_valid = true;
                rec.mem_rdata = v;
                rec.mem_rdata_valid = true;
                Some(v)
            }
            Opcode::Sw => {
                let ea = a.wrapping_add(imm) & m;
                let idx = self.word_index(ea);
                self.dmem[idx] = b;
                rec.mem_addr = ea;
                rec.mem_addr_valid = true;
                rec.mem_wdata = b;
                rec.mem_wdata_valid = true;
                None
            }
            Opcode::Beq => {
                rec.is_branch = true;
                if a == b {
                    rec.branch_taken = true;
                    next_pc = self.pc.wrapping_add(imm) & m;
                }
                None
            }
            Opcode::Jal => {
                rec.is_branch = true;
                rec.branch_taken = true;
                let link = (self.pc + 1) & m;
                next_pc = self.pc.wrapping_add(imm) & m;
                Some(link)
            }
            Opcode::Nop => None,
        };
        if let Some(v) = result {
            self.set_reg(insn.rd, v);
            if insn.rd != 0 {
                rec.rd_val = v;
            }
        }
        self.pc = next_pc;
        rec
    }
}

/// Per-retired-instruction observation record, modeled on the RISC-V formal
/// interface. Fields whose valid flag is clear are zero.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RetirementRecord {
    pub pc: u64,
    pub insn_word: u32,
    pub opcode: Opcode,
    pub rd: u8,
    pub rs1: u8,
    pub rs2: u8,
    pub imm: u64,
    pub rs1_val: u64,
    pub rs2_val: u64,
    pub rd_val: u64,
    pub mem_addr: u64,
    pub mem_addr_valid: bool,
    pub mem_rdata: u64,
    pub mem_rdata_valid: bool,
    pub mem_wdata: u64,
    pub mem_wdata_valid: bool,
    pub is_branch: bool,
    pub branch_taken: bool,
}

impl Default for RetirementRecord {
    fn default() -> Self {
        RetirementRecord {
            pc: 0,
            insn_word: Instruction::nop().encode(),
            opcode: Opcode::Nop,
            rd: 0,
            rs1: 0,
            rs2: 0,
            imm: 0,
            rs1_val: 0,
            rs2_val: 0,
            rd_val: 0,
            mem_addr: 0,
            mem_addr_valid: false,
            mem_rdata: 0,
            mem_rdata_valid: false,
            mem_wdata: 0,
            mem_wdata_valid: false,
            is_branch: false,
            branch_taken: false,
        }
    }
}

impl RetirementRecord {
    /// The record produced by stepping a halted state.
    pub fn halted(pc: u64) -> Self {
        RetirementRecord {
            pc,
            ..RetirementRecord::default()
        }
    }
}

/// One architectural step: the successor state and the executed instruction's
/// record. Halted states map to themselves with a NOP record.
pub fn isa_step(s: &ArchState) -> (ArchState, RetirementRecord) {
    let mut next = s.clone();
    let rec = next.step_in_place();
    (next, rec)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchTrace {
    /// `(state before, record of the instruction executed from it)`.
    pub steps: Vec<(ArchState, RetirementRecord)>,
    pub final_state: ArchState,
}

impl ArchTrace {
    pub fn records(&self) -> impl Iterator<Item = &RetirementRecord> {
        self.steps.iter().map(|(_, r)| r)
    }
}

/// Runs at most `n` steps, stopping early once the state halts.
pub fn run_arch(s: &ArchState, n: usize) -> ArchTrace {
    let mut cur = s.clone();
    let mut steps = Vec::new();
    while steps.len() < n && !cur.is_halted() {
        let (next, rec) = isa_step(&cur);
        steps.push((cur, rec));
        cur = next;
    }
    ArchTrace {
        steps,
        final_state: cur,
    }
}

/// Exactly `n` records, padding with halted records once the program stops.
pub fn records_for_horizon(s: &ArchState, n: usize) -> Vec<RetirementRecord> {
    let mut cur = s.clone();
    (0..n).map(|_| cur.step_in_place()).collect()
}

/// Which ISA-compliance condition a core violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ViolationKind {
    /// A retirement record, or the architectural state right after it,
    /// disagrees with the reference interpreter.
    Record,
    /// The register file or data memory changed on a cycle without a
    /// retirement.
    UnretiredChange,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ComplianceVerdict {
    Ok,
    Violation {
        /// 1-based cycle.
        cycle: u64,
        kind: ViolationKind,
        reason: String,
    },
}

impl ComplianceVerdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, ComplianceVerdict::Ok)
    }
}

/// Simulates `core` from `(s0, µ0)` for `cycles` cycles and checks it against
/// the reference interpreter: every retirement record must match the next
/// reference record (with the register file and data memory matching the
/// reference state afterwards), and those architectural parts may change only
/// on retirement cycles.
pub fn check_isa_compliance(
    core: &crate::cores::Core,
    s0: &ArchState,
    cycles: usize,
) -> Result<ComplianceVerdict, crate::cores::CoreError> {
    let layout = &core.layout;
    let project = |st: &[u64]| -> Vec<u64> {
        layout
            .regs
            .iter()
            .chain(&layout.dmem)
            .map(|&i| st[i])
            .collect()
    };
    let arch_of = |s: &ArchState| -> Vec<u64> {
        s.regs[1..].iter().chain(&s.dmem).copied().collect()
    };
    let mut reference = s0.clone();
    let mut sim = core.simulate(s0)?;
    let mut prev = project(sim.state());
    let violation = |cycle, kind, reason: String| {
        Ok(ComplianceVerdict::Violation {
            cycle,
            kind,
            reason,
        })
    };
    for _ in 0..cycles {
        let obs = sim.step();
        let now = project(sim.state());
        match obs.record {
            Some(rec) => {
                if reference.is_halted() {
                    return violation(
                        obs.cycle,
                        ViolationKind::Record,
                        format!("retired {:?} after the program halted", rec.opcode),
                    );
                }
                let expected = reference.step_in_place();
                if rec != expected {
                    return violation(
                        obs.cycle,
                        ViolationKind::Record,
                        format!("record {rec:?} differs from reference {expected:?}"),
                    );
                }
                if now != arch_of(&reference) {
                    return violation(
                        obs.cycle,
                        ViolationKind::Record,
                        "architectural state after retirement differs from reference".into(),
                    );
                }
            }
            None => {
                if now != prev {
                    return violation(
                        obs.cycle,
                        ViolationKind::UnretiredChange,
                        "register file or data memory changed without a retirement".into(),
                    );
                }
            }
        }
        prev = now;
    }
    Ok(ComplianceVerdict::Ok)
}
