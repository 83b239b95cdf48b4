//! Random architectural states and minimally differing test-case pairs.
//!
//! A test case starts from one random state and applies a modifier for a
//! chosen leakage function at a chosen instruction, so that the function
//! evaluates differently there. The modifier is checked against the
//! reference interpreter and retried with other mutations when a dependent
//! instruction masks the change.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contracts::{ContractTemplate, Field, LeakageFunction};
use crate::isa::{
    format_program, mask, parse_program, to_signed, ArchState, Instruction, Opcode, RetirementRecord,
    IMM_MAX, IMM_MIN, NUM_REGS,
};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    /// Produced by the modifier of this leakage id.
    Generated(String),
    /// Bounded-verification counterexample found in this iteration.
    Counterexample(usize),
    /// Two unrelated random states, used when no modifier applies.
    Random,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TestCase {
    pub left: ArchState,
    pub right: ArchState,
    pub provenance: Provenance,
}

impl TestCase {
    pub fn swapped(&self) -> TestCase {
        TestCase {
            left: self.right.clone(),
            right: self.left.clone(),
            provenance: self.provenance.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    pub seed: u64,
    pub count: usize,
    pub len_min: usize,
    pub len_max: usize,
    pub width: u32,
    pub dmem_words: usize,
    /// Relative opcode weights; opcodes missing from the list never occur.
    pub mix: Vec<(Opcode, u32)>,
    /// Instruction-memory capacity; modifiers never grow a program past it.
    pub imem_cap: Option<usize>,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            seed: 1,
            count: 100,
            len_min: 1,
            len_max: 6,
            width: 32,
            dmem_words: 256,
            mix: Opcode::ALL.iter().map(|&o| (o, 1)).collect(),
            imem_cap: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum GenError {
    #[error("invalid generator config: {0}")]
    Config(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let bad = |m: &str| Err(GenError::Config(m.to_string()));
        if self.len_min == 0 || self.len_min > self.len_max {
            return bad("program length range must satisfy 1 <= len_min <= len_max");
        }
        if !self.dmem_words.is_power_of_two() {
            return bad("dmem size must be a power of two");
        }
        if !(2..=32).contains(&self.width) {
            return bad("width must be in 2..=32");
        }
        if self.mix.iter().all(|&(_, w)| w == 0) {
            return bad("instruction mix has no positive weight");
        }
        if self.imem_cap.is_some_and(|c| c < self.len_max) {
            return bad("len_max exceeds the instruction-memory capacity");
        }
        Ok(())
    }

    /// Opcodes with positive weight.
    pub fn universe(&self) -> Vec<Opcode> {
        let set: BTreeSet<Opcode> = self
            .mix
            .iter()
            .filter(|&&(_, w)| w > 0)
            .map(|&(o, _)| o)
            .collect();
        set.into_iter().collect()
    }

    /// Restricts the mix to the given opcodes.
    pub fn with_universe(mut self, ops: &[Opcode]) -> Self {
        self.mix.retain(|(o, _)| ops.contains(o));
        for &o in ops {
            if !self.mix.iter().any(|(m, _)| *m == o) {
                self.mix.push((o, 1));
            }
        }
        self
    }
}

/// A W-bit value biased toward 0, 1, 2, powers of two and all-ones.
pub fn pool_value(rng: &mut impl Rng, width: u32) -> u64 {
    let m = mask(width);
    match rng.gen_range(0..100) {
        0..=14 => 0,
        15..=29 => 1,
        30..=39 => 2,
        40..=64 => 1u64 << rng.gen_range(0..width),
        65..=69 => m,
        _ => rng.gen::<u64>() & m,
    }
}

fn pool_value_except(rng: &mut impl Rng, width: u32, old: u64) -> u64 {
    for _ in 0..16 {
        let v = pool_value(rng, width);
        if v != old {
            return v;
        }
    }
    (old + 1) & mask(width)
}

fn imm_from_value(v: u64, width: u32) -> i32 {
    let s = to_signed(v, width);
    if (IMM_MIN as i64..=IMM_MAX as i64).contains(&s) {
        s as i32
    } else {
        // Keep the low 19 bits, sign-extended.
        (((v as u32) << 13) as i32) >> 13
    }
}

fn random_reg(rng: &mut impl Rng) -> u8 {
    if rng.gen_range(0..10) == 0 {
        0
    } else {
        rng.gen_range(1..NUM_REGS as u8)
    }
}

fn random_imm(rng: &mut impl Rng, op: Opcode, width: u32) -> i32 {
    match op {
        Opcode::Li => imm_from_value(rng.gen::<u64>() & mask(width), width),
        Opcode::Lw | Opcode::Sw => rng.gen_range(-4..=12),
        // Forward control flow only, so every program halts.
        Opcode::Beq | Opcode::Jal => rng.gen_range(1..=3),
        _ => 0,
    }
}

pub fn random_instruction(rng: &mut impl Rng, op: Opcode, width: u32) -> Instruction {
    let rd = if op.uses_rd() { random_reg(rng) } else { 0 };
    let rs1 = if op.uses_rs1() { random_reg(rng) } else { 0 };
    let rs2 = if op.uses_rs2() { random_reg(rng) } else { 0 };
    let imm = random_imm(rng, op, width);
    Instruction::new(op, rd, rs1, rs2, imm).expect("generated operands are in range")
}

fn pick_opcode(rng: &mut impl Rng, mix: &[(Opcode, u32)]) -> Opcode {
    mix.choose_weighted(rng, |&(_, w)| w)
        .expect("mix validated")
        .0
}

/// Random program and uniformly random initial valuation; deterministic in
/// the generator. Edge-case values come only from the modifiers.
pub fn random_state(cfg: &GenConfig, rng: &mut impl Rng) -> ArchState {
    let len = rng.gen_range(cfg.len_min..=cfg.len_max);
    let prog = (0..len)
        .map(|_| {
            let op = pick_opcode(rng, &cfg.mix);
            random_instruction(rng, op, cfg.width)
        })
        .collect();
    let mut s = ArchState::new(cfg.width, prog, cfg.dmem_words);
    let m = mask(cfg.width);
    for r in 1..NUM_REGS {
        s.regs[r] = rng.gen::<u64>() & m;
    }
    for w in s.dmem.iter_mut() {
        *w = rng.gen::<u64>() & m;
    }
    s
}

/// `gen_random_state`: the state drawn from `cfg.seed`.
pub fn gen_random_state(cfg: &GenConfig) -> ArchState {
    random_state(cfg, &mut ChaCha8Rng::seed_from_u64(cfg.seed))
}

/// A leakage function together with the opcodes it applies to in a template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LeakTarget {
    pub leak: LeakageFunction,
    pub class: Vec<Opcode>,
}

impl LeakTarget {
    pub fn observe(&self, r: &RetirementRecord) -> Option<u64> {
        self.class
            .contains(&r.opcode)
            .then(|| self.leak.expr.eval(r))
    }
}

/// One target per leakage id of the template.
pub fn leak_targets(t: &ContractTemplate) -> Vec<LeakTarget> {
    t.groups()
        .into_values()
        .map(|idx| {
            let class: BTreeSet<Opcode> = idx
                .iter()
                .flat_map(|&i| t.atoms[i].class.iter().copied())
                .collect();
            LeakTarget {
                leak: t.atoms[idx[0]].leak.clone(),
                class: class.into_iter().collect(),
            }
        })
        .collect()
}

/// Record of the first execution of instruction `site`, if any.
fn record_at(s: &ArchState, site: usize) -> Option<RetirementRecord> {
    let mut cur = s.clone();
    let limit = 4 * s.imem.len() + 8;
    for _ in 0..limit {
        if cur.is_halted() {
            return None;
        }
        let pc = cur.pc;
        let rec = cur.step_in_place();
        if pc == site as u64 {
            return Some(rec);
        }
    }
    None
}

#[derive(Debug, Clone, Copy)]
enum Mutation {
    Opcode { same_shape: bool },
    Rd,
    Rs1,
    Rs2,
    Imm,
    Rs1Value,
    Rs2Value,
    CopyRs2IntoRs1,
    MemWord,
    PrependNop,
}

fn mutations_for(fields: &BTreeSet<Field>, constant: bool) -> Vec<Mutation> {
    use Mutation::*;
    let mut v = Vec::new();
    if constant {
        v.push(Opcode { same_shape: false });
    }
    for f in fields {
        match f {
            Field::Opcode => v.push(Opcode { same_shape: true }),
            Field::Rd => v.push(Rd),
            Field::Rs1 => v.push(Rs1),
            Field::Rs2 => v.push(Rs2),
            Field::Imm => v.push(Imm),
            Field::Rs1Val => v.push(Rs1Value),
            Field::Rs2Val | Field::MemWdata => v.push(Rs2Value),
            Field::RdVal => v.extend([Rs1Value, Rs2Value, Imm, MemWord]),
            Field::MemAddr => v.extend([Imm, Rs1Value]),
            Field::MemRdata => v.push(MemWord),
            Field::BranchTaken => v.extend([CopyRs2IntoRs1, Rs1Value, Rs2Value]),
            Field::Pc => v.push(PrependNop),
        }
    }
    v
}

fn mutate(
    s: &ArchState,
    site: usize,
    m: Mutation,
    universe: &[Opcode],
    rng: &mut impl Rng,
) -> Option<(ArchState, usize)> {
    let w = s.width;
    let insn = s.imem[site];
    let mut r = s.clone();
    let mut rsite = site;
    let other_reg = |rng: &mut ChaCha8Rng, old: u8| loop {
        let x = rng.gen_range(0..NUM_REGS as u8);
        if x != old {
            break x;
        }
    };
    let mut local = ChaCha8Rng::seed_from_u64(rng.gen());
    match m {
        Mutation::Opcode { same_shape } => {
            let cands: Vec<Opcode> = universe
                .iter()
                .copied()
                .filter(|&o| o != insn.opcode && (!same_shape || o.shape_class() == insn.opcode.shape_class()))
                .collect();
            let op = *cands.choose(&mut local)?;
            let mut ni = random_instruction(&mut local, op, w);
            if op.uses_rd() && insn.opcode.uses_rd() {
                ni.rd = insn.rd;
            }
            if op.uses_rs1() && insn.opcode.uses_rs1() {
                ni.rs1 = insn.rs1;
            }
            if op.uses_rs2() && insn.opcode.uses_rs2() {
                ni.rs2 = insn.rs2;
            }
            if op.uses_imm() && insn.opcode.uses_imm() && same_shape {
                ni.imm = insn.imm;
            }
            r.imem[site] = ni;
        }
        Mutation::Rd if insn.opcode.uses_rd() => {
            r.imem[site].rd = other_reg(&mut local, insn.rd);
        }
        Mutation::Rs1 if insn.opcode.uses_rs1() => {
            r.imem[site].rs1 = other_reg(&mut local, insn.rs1);
        }
        Mutation::Rs2 if insn.opcode.uses_rs2() => {
            r.imem[site].rs2 = other_reg(&mut local, insn.rs2);
        }
        Mutation::Imm if insn.opcode.uses_imm() => {
            let old = insn.imm_value(w);
            let new = match insn.opcode {
                Opcode::Li => imm_from_value(pool_value_except(&mut local, w, old), w),
                Opcode::Lw | Opcode::Sw => {
                    let d = local.gen_range(1..=7);
                    if local.gen() {
                        insn.imm + d
                    } else {
                        insn.imm - d
                    }
                }
                _ => {
                    let mut v = insn.imm;
                    while v == insn.imm {
                        v = local.gen_range(1..=3);
                    }
                    v
                }
            };
            r.imem[site].imm = new.clamp(IMM_MIN, IMM_MAX);
        }
        Mutation::Rs1Value if insn.opcode.uses_rs1() && insn.rs1 != 0 => {
            let x = insn.rs1 as usize;
            r.regs[x] = pool_value_except(&mut local, w, s.regs[x]);
        }
        Mutation::Rs2Value if insn.opcode.uses_rs2() && insn.rs2 != 0 => {
            let x = insn.rs2 as usize;
            r.regs[x] = pool_value_except(&mut local, w, s.regs[x]);
        }
        Mutation::CopyRs2IntoRs1 if insn.opcode.uses_rs2() && insn.rs1 != 0 => {
            let rec = record_at(s, site)?;
            r.regs[insn.rs1 as usize] = rec.rs2_val;
        }
        Mutation::MemWord if insn.opcode == Opcode::Lw => {
            let rec = record_at(s, site)?;
            let idx = s.word_index(rec.mem_addr);
            r.dmem[idx] = pool_value_except(&mut local, w, s.dmem[idx]);
        }
        Mutation::PrependNop => {
            r.imem.insert(0, Instruction::nop());
            rsite = site + 1;
        }
        _ => return None,
    }
    (r != *s).then_some((r, rsite))
}

/// Builds a pair differing in `target` at instruction `site`, or `None` if
/// the function does not apply there or no mutation changes it.
pub fn apply_modifier(
    s: &ArchState,
    target: &LeakTarget,
    site: usize,
    universe: &[Opcode],
    rng: &mut impl Rng,
) -> Option<TestCase> {
    assert!(site < s.imem.len(), "site out of range");
    if !target.class.contains(&s.imem[site].opcode) {
        return None;
    }
    let left_rec = record_at(s, site)?;
    let left_obs = target.observe(&left_rec);
    let mut fields = BTreeSet::new();
    target.leak.expr.fields(&mut fields);
    let constant = fields.is_empty();
    let mut muts = mutations_for(&fields, constant);
    if muts.is_empty() {
        return None;
    }
    for attempt in 0..3 * muts.len() {
        if attempt % muts.len() == 0 {
            muts.shuffle(rng);
        }
        let m = muts[attempt % muts.len()];
        let Some((right, rsite)) = mutate(s, site, m, universe, rng) else {
            continue;
        };
        let changed = match record_at(&right, rsite) {
            Some(rec) => target.observe(&rec) != left_obs,
            None => left_obs.is_some(),
        };
        if changed {
            return Some(TestCase {
                left: s.clone(),
                right,
                provenance: Provenance::Generated(target.leak.id.clone()),
            });
        }
    }
    None
}

/// `count` test cases: a random state plus a modifier for a uniformly chosen
/// site and applicable leakage function. After 8 failed picks a fresh state
/// is drawn.
pub fn gen_test_cases(cfg: &GenConfig, tmpl: &ContractTemplate) -> Vec<TestCase> {
    let targets = leak_targets(tmpl);
    let universe = cfg.universe();
    (0..cfg.count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ i as u64);
            gen_one(cfg, &targets, &universe, &mut rng)
        })
        .collect()
}

fn gen_one(
    cfg: &GenConfig,
    targets: &[LeakTarget],
    universe: &[Opcode],
    rng: &mut ChaCha8Rng,
) -> TestCase {
    for _ in 0..64 {
        let s = random_state(cfg, rng);
        for _ in 0..8 {
            let site = rng.gen_range(0..s.imem.len());
            let op = s.imem[site].opcode;
            let applicable: Vec<&LeakTarget> =
                targets.iter().filter(|t| t.class.contains(&op)).collect();
            let Some(t) = applicable.choose(rng) else {
                continue;
            };
            if let Some(tc) = apply_modifier(&s, t, site, universe, rng) {
                if cfg.imem_cap.map_or(true, |cap| tc.right.imem.len() <= cap) {
                    return tc;
                }
            }
        }
    }
    TestCase {
        left: random_state(cfg, rng),
        right: random_state(cfg, rng),
        provenance: Provenance::Random,
    }
}

fn write_state(out: &mut String, tag: &str, s: &ArchState) {
    let _ = writeln!(out, "{tag}");
    out.push_str(&format_program(&s.imem));
    let _ = writeln!(out, "end");
    let regs: Vec<String> = s.regs.iter().map(|v| format!("{v:#x}")).collect();
    let _ = writeln!(out, "regs {}", regs.join(" "));
    let mem: Vec<String> = s
        .dmem
        .iter()
        .enumerate()
        .filter(|(_, &v)| v != 0)
        .map(|(i, v)| format!("{i}={v:#x}"))
        .collect();
    let _ = writeln!(out, "mem {}", mem.join(" "));
}

/// Serializes a corpus. Each case lists both programs, registers and the
/// non-zero memory words.
pub fn write_corpus(cases: &[TestCase]) -> String {
    let mut out = String::new();
    for (i, t) in cases.iter().enumerate() {
        let prov = match &t.provenance {
            Provenance::Generated(id) => format!("generated {id}"),
            Provenance::Counterexample(it) => format!("counterexample {it}"),
            Provenance::Random => "random".to_string(),
        };
        let _ = writeln!(out, "case {i} {prov}");
        let _ = writeln!(out, "width {} dmem {}", t.left.width, t.left.dmem.len());
        write_state(&mut out, "left", &t.left);
        write_state(&mut out, "right", &t.right);
        out.push('\n');
    }
    out
}

pub fn parse_corpus(text: &str) -> Result<Vec<TestCase>, GenError> {
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
        .collect();
    let mut pos = 0;
    let mut cases = Vec::new();
    let err = |line: usize, msg: &str| GenError::Parse {
        line,
        msg: msg.to_string(),
    };
    let num = |line: usize, t: &str| {
        crate::isa::parse_int(t)
            .ok()
            .filter(|v| *v >= 0)
            .map(|v| v as u64)
            .ok_or_else(|| err(line, &format!("bad number `{t}`")))
    };
    while pos < lines.len() {
        let (ln, head) = lines[pos];
        let toks: Vec<&str> = head.split_whitespace().collect();
        if toks.first() != Some(&"case") || toks.len() < 3 {
            return Err(err(ln, "expected `case <idx> <provenance>`"));
        }
        let provenance = match toks[2] {
            "generated" => Provenance::Generated(toks.get(3).unwrap_or(&"").to_string()),
            "counterexample" => Provenance::Counterexample(num(ln, toks.get(3).unwrap_or(&""))? as usize),
            "random" => Provenance::Random,
            _ => return Err(err(ln, "unknown provenance")),
        };
        pos += 1;
        let (ln, dims) = *lines.get(pos).ok_or_else(|| err(ln, "missing dimensions"))?;
        let d: Vec<&str> = dims.split_whitespace().collect();
        if d.len() != 4 || d[0] != "width" || d[2] != "dmem" {
            return Err(err(ln, "expected `width <w> dmem <n>`"));
        }
        let width = num(ln, d[1])? as u32;
        let dmem = num(ln, d[3])? as usize;
        if !dmem.is_power_of_two() || !(2..=32).contains(&width) {
            return Err(err(ln, "bad dimensions"));
        }
        pos += 1;
        let mut states = Vec::new();
        for tag in ["left", "right"] {
            let (ln, l) = *lines.get(pos).ok_or_else(|| err(ln, "truncated case"))?;
            if l != tag {
                return Err(err(ln, &format!("expected `{tag}`")));
            }
            pos += 1;
            let start = pos;
            while pos < lines.len() && lines[pos].1 != "end" {
                pos += 1;
            }
            if pos == lines.len() {
                return Err(err(ln, "missing `end`"));
            }
            let prog_text: Vec<&str> = lines[start..pos].iter().map(|(_, l)| *l).collect();
            let prog = parse_program(&prog_text.join("\n")).map_err(|e| {
                err(lines.get(start).map(|x| x.0).unwrap_or(ln), &e.to_string())
            })?;
            pos += 1;
            let mut s = ArchState::new(width, prog, dmem);
            let (ln, rl) = *lines.get(pos).ok_or_else(|| err(ln, "missing regs"))?;
            let rt: Vec<&str> = rl.split_whitespace().collect();
            if rt.first() != Some(&"regs") || rt.len() != NUM_REGS + 1 {
                return Err(err(ln, "expected `regs` with 8 values"));
            }
            for (i, t) in rt[1..].iter().enumerate() {
                s.regs[i] = num(ln, t)? & mask(width);
            }
            s.regs[0] = 0;
            pos += 1;
            let (ln, ml) = *lines.get(pos).ok_or_else(|| err(ln, "missing mem"))?;
            let mt: Vec<&str> = ml.split_whitespace().collect();
            if mt.first() != Some(&"mem") {
                return Err(err(ln, "expected `mem`"));
            }
            for t in &mt[1..] {
                let (i, v) = t.split_once('=').ok_or_else(|| err(ln, "expected idx=value"))?;
                let i = num(ln, i)? as usize;
                if i >= dmem {
                    return Err(err(ln, "memory index out of range"));
                }
                s.dmem[i] = num(ln, v)? & mask(width);
            }
            pos += 1;
            states.push(s);
        }
        let right = states.pop().unwrap();
        let left = states.pop().unwrap();
        cases.push(TestCase {
            left,
            right,
            provenance,
        });
    }
    Ok(cases)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::{builtin_template, Family};
    use crate::isa::Instruction as I;
    use Opcode::*;

    fn target(t: &ContractTemplate, id: &str) -> LeakTarget {
        leak_targets(t).into_iter().find(|x| x.leak.id == id).unwrap()
    }

    #[test]
    fn deterministic_states() {
        let cfg = GenConfig {
            len_min: 1,
            len_max: 1,
            ..GenConfig::default()
        };
        assert_eq!(gen_random_state(&cfg), gen_random_state(&cfg));
        assert_eq!(gen_random_state(&cfg).imem.len(), 1);
        let no_mem = GenConfig {
            mix: vec![(Add, 1), (Lw, 0), (Sw, 0), (Div, 2)],
            len_min: 20,
            len_max: 20,
            ..GenConfig::default()
        };
        let s = gen_random_state(&no_mem);
        assert!(s.imem.iter().all(|i| !i.opcode.is_memory()));
    }

    #[test]
    fn imm_modifier_rewrites_immediate() {
        let t = builtin_template(&[Family::LiDiv], &Opcode::ALL);
        let s = ArchState::new(32, vec![I::li(1, 0x1234)], 256);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tc = apply_modifier(&s, &target(&t, "imm"), 0, &[Li, Div], &mut rng).unwrap();
        assert_eq!(tc.right.imem[0].opcode, Li);
        assert_ne!(tc.right.imem[0].imm, 0x1234);
        assert_eq!(tc.right.regs, tc.left.regs);
    }

    #[test]
    fn rd_modifier_swaps_register() {
        let t = builtin_template(&[Family::LiDiv], &Opcode::ALL);
        let s = ArchState::new(32, vec![I::rrr(Div, 1, 2, 3)], 256);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let tc = apply_modifier(&s, &target(&t, "RD"), 0, &[Li, Div], &mut rng).unwrap();
        let (l, r) = (tc.left.imem[0], tc.right.imem[0]);
        assert_ne!(l.rd, r.rd);
        assert_eq!((l.opcode, l.rs1, l.rs2), (r.opcode, r.rs1, r.rs2));
        assert!(apply_modifier(&s, &target(&t, "imm"), 0, &[Li, Div], &mut rng).is_none());
    }

    #[test]
    fn value_modifier_changes_only_registers() {
        let t = builtin_template(&[Family::LiDiv], &Opcode::ALL);
        let mut s = ArchState::new(32, vec![I::rrr(Div, 1, 2, 3)], 256);
        s.regs[2] = 9;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tc = apply_modifier(&s, &target(&t, "Reg[RS1]"), 0, &[Li, Div], &mut rng).unwrap();
        assert_eq!(tc.left.imem, tc.right.imem);
        let diff: Vec<usize> = (0..8).filter(|&r| tc.left.regs[r] != tc.right.regs[r]).collect();
        assert_eq!(diff, vec![2]);
    }

    #[test]
    fn generated_pairs_are_single_site() {
        let tmpl = builtin_template(
            &[Family::I, Family::R, Family::M, Family::A, Family::BT, Family::V],
            &Opcode::ALL,
        );
        let cfg = GenConfig {
            count: 300,
            ..GenConfig::default()
        };
        let cases = gen_test_cases(&cfg, &tmpl);
        assert_eq!(cases, gen_test_cases(&cfg, &tmpl));
        for t in &cases {
            let (l, r) = (&t.left, &t.right);
            if l.imem.len() != r.imem.len() {
                assert_eq!(r.imem[0], I::nop());
                assert_eq!(&r.imem[1..], &l.imem[..]);
                continue;
            }
            let insn_diffs = l.imem.iter().zip(&r.imem).filter(|(a, b)| a != b).count();
            let reg_diffs = (0..8).filter(|&i| l.regs[i] != r.regs[i]).count();
            let mem_diffs = l.dmem.iter().zip(&r.dmem).filter(|(a, b)| a != b).count();
            assert_eq!(insn_diffs + reg_diffs + mem_diffs, 1, "{t:?}");
        }
        assert!(gen_test_cases(&GenConfig { count: 0, ..cfg }, &tmpl).is_empty());
    }

    #[test]
    fn imm_only_template_changes_immediates() {
        let tmpl = ContractTemplate::new(vec![crate::contracts::ContractAtom::new(
            [Li],
            "imm",
            crate::contracts::LeakExpr::field(Field::Imm),
        )])
        .unwrap();
        let cfg = GenConfig {
            count: 50,
            ..GenConfig::default()
        };
        for t in gen_test_cases(&cfg, &tmpl) {
            assert_eq!(t.left.regs, t.right.regs);
            let d: Vec<(&I, &I)> = t.left.imem.iter().zip(&t.right.imem).filter(|(a, b)| a != b).collect();
            assert_eq!(d.len(), 1);
            assert_eq!(d[0].0.opcode, Li);
            assert_ne!(d[0].0.imm, d[0].1.imm);
        }
    }

    #[test]
    fn corpus_roundtrip() {
        let tmpl = builtin_template(&[Family::I, Family::R], &Opcode::ALL);
        let mut cases = gen_test_cases(
            &GenConfig {
                count: 20,
                width: 8,
                dmem_words: 4,
                ..GenConfig::default()
            },
            &tmpl,
        );
        cases[0].provenance = Provenance::Counterexample(4);
        let text = write_corpus(&cases);
        assert_eq!(parse_corpus(&text).unwrap(), cases);
        assert!(parse_corpus("").unwrap().is_empty());
        assert!(matches!(
            parse_corpus("case 0 random\nwidth 8 dmem 3\n"),
            Err(GenError::Parse { line: 2, .. })
        ));
    }
}
