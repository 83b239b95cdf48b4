//! Three toy two-stage TinyRV cores written in the circuit IR.
//!
//! All cores share one skeleton: a fetch/decode stage that loads the next
//! instruction into the execute stage, and an execute stage that holds it for
//! a data-dependent number of cycles before retiring it. Register-file and
//! memory writes happen only on the retirement cycle.
//!
//! * `DivCore`: DIV/REM take `div_latency` cycles unless the divisor is 0 or 1.
//! * `BrCore`: adds a one-cycle bubble after taken branches/jumps, an extra
//!   cycle for unaligned memory accesses, and `1 + floor(log2(max(rs2, 1)))`
//!   cycle multiplies.
//! * `CacheCore`: adds a single-line data cache; a load hits when its byte
//!   address equals the address of the previous memory access.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hwir::{Design, DesignBuilder, DesignError, Sig, SigId, SimState, Simulator};
use crate::isa::{mask, ArchState, Instruction, Opcode, RetirementRecord, NUM_REGS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CoreKind {
    DivCore,
    BrCore,
    CacheCore,
}

impl fmt::Display for CoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoreKind::DivCore => "DivCore",
            CoreKind::BrCore => "BrCore",
            CoreKind::CacheCore => "CacheCore",
        })
    }
}

impl FromStr for CoreKind {
    type Err = CoreError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "divcore" | "div" => Ok(CoreKind::DivCore),
            "brcore" | "br" => Ok(CoreKind::BrCore),
            "cachecore" | "cache" => Ok(CoreKind::CacheCore),
            _ => Err(CoreError::Spec(format!("unknown core `{s}`"))),
        }
    }
}

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid core spec: {0}")]
    Spec(String),
    #[error("program has {0} instructions but instruction memory holds {1}")]
    ProgramTooLong(usize, usize),
    #[error("state shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Design(#[from] DesignError),
}

/// Timing and sizing parameters of a core.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoreSpec {
    pub kind: CoreKind,
    /// Datapath width W.
    pub width: u32,
    /// Instruction memory capacity in instructions.
    pub imem_cap: usize,
    /// Data memory size in words (a power of two).
    pub dmem_words: usize,
    /// Slow-path DIV/REM latency in execute cycles; must be at least W.
    pub div_latency: u32,
    /// Bubble cycles after a taken branch or jump (0 or 1).
    pub branch_penalty: u32,
    /// Extra cycles for an unaligned LW/SW.
    pub unaligned_penalty: u32,
    /// Multiplies take `1 + floor(log2(max(rs2, 1)))` cycles.
    pub mul_log: bool,
    /// Load latency on a cache hit and miss; `None` means no cache.
    pub cache: Option<(u32, u32)>,
}

impl CoreSpec {
    /// The kind's timing behavior at the given sizes, with the slow divider
    /// taking `div_latency` cycles.
    pub fn new(
        kind: CoreKind,
        width: u32,
        imem_cap: usize,
        dmem_words: usize,
        div_latency: u32,
    ) -> Self {
        let (branch_penalty, unaligned_penalty, mul_log, cache) = match kind {
            CoreKind::DivCore => (0, 0, false, None),
            CoreKind::BrCore => (1, 1, true, None),
            CoreKind::CacheCore => (1, 1, true, Some((1, 2))),
        };
        CoreSpec {
            kind,
            width,
            imem_cap,
            dmem_words,
            div_latency,
            branch_penalty,
            unaligned_penalty,
            mul_log,
            cache,
        }
    }

    /// Simulation-scale preset: W = 32, 256 data words, 32-cycle divider.
    pub fn simulation(kind: CoreKind) -> Self {
        Self::new(kind, 32, 32, 256, 32)
    }

    /// Verification-scale preset: W = 8, 4 data words, 3 instructions,
    /// 16-cycle divider.
    pub fn verification(kind: CoreKind) -> Self {
        Self::new(kind, 8, 3, 4, 16)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let bad = |m: String| Err(CoreError::Spec(m));
        if !(2..=32).contains(&self.width) {
            return bad(format!("width {} outside 2..=32", self.width));
        }
        if !self.dmem_words.is_power_of_two() {
            return bad(format!("dmem size {} is not a power of two", self.dmem_words));
        }
        let idx_bits = self.dmem_words.trailing_zeros();
        if idx_bits + 2 > self.width {
            return bad(format!(
                "{} data words need byte addresses wider than {} bits",
                self.dmem_words, self.width
            ));
        }
        if self.imem_cap == 0 || (self.imem_cap as u64) >= (1u64 << self.width) {
            return bad(format!(
                "instruction memory of {} does not fit {}-bit addresses",
                self.imem_cap, self.width
            ));
        }
        if self.div_latency < self.width {
            return bad(format!(
                "divider latency {} is below the width {}",
                self.div_latency, self.width
            ));
        }
        if self.branch_penalty > 1 {
            return bad("branch penalty must be 0 or 1".into());
        }
        if let Some((h, m)) = self.cache {
            if h == 0 || m == 0 {
                return bad("cache latencies must be at least 1".into());
            }
        }
        if self.max_latency() > 120 {
            return bad("latencies too large".into());
        }
        Ok(())
    }

    /// Largest number of execute cycles any instruction can take.
    pub fn max_latency(&self) -> u32 {
        let mul = if self.mul_log { self.width } else { 1 };
        let load = self.cache.map(|(h, m)| h.max(m)).unwrap_or(1) + self.unaligned_penalty;
        let store = 1 + self.unaligned_penalty;
        [self.div_latency, mul, load, store, 1]
            .into_iter()
            .max()
            .unwrap()
    }

    /// Maximum number of cycles between consecutive retirements (and from
    /// reset to the first retirement).
    pub fn max_retire_interval(&self) -> u32 {
        self.max_latency() + self.branch_penalty.max(1)
    }
}

/// Output names of the retirement-record signals.
pub const RECORD_FIELDS: [&str; 18] = [
    "pc",
    "insn_word",
    "opcode",
    "rd",
    "rs1",
    "rs2",
    "imm",
    "rs1_val",
    "rs2_val",
    "rd_val",
    "mem_addr",
    "mem_addr_valid",
    "mem_rdata",
    "mem_rdata_valid",
    "mem_wdata",
    "mem_wdata_valid",
    "is_branch",
    "branch_taken",
];

/// The RVFI-style view of a core: retirement predicate, attacker observation
/// and one signal per record field (meaningful only while `retire` is 1).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservationInterface {
    pub retire: SigId,
    pub atk_obs: SigId,
    pub fields: HashMap<&'static str, SigId>,
}

impl ObservationInterface {
    /// Finds the interface among `d`'s outputs, with names under `prefix`.
    pub fn locate(d: &Design, prefix: &str) -> Result<Self, DesignError> {
        let get = |n: &str| {
            d.output(&format!("{prefix}{n}"))
                .ok_or_else(|| DesignError::NoSuchName(format!("{prefix}{n}")))
        };
        let mut fields = HashMap::new();
        for f in RECORD_FIELDS {
            fields.insert(f, get(&format!("rec.{f}"))?);
        }
        Ok(ObservationInterface {
            retire: get("retire")?,
            atk_obs: get("atk_obs")?,
            fields,
        })
    }

    pub fn field(&self, name: &str) -> SigId {
        self.fields[name]
    }
}

/// State-element indices of the architectural part of a core.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchLayout {
    pub imem: Vec<usize>,
    pub prog_len: usize,
    /// Registers x1..x7 (x0 is hard-wired to zero).
    pub regs: Vec<usize>,
    pub dmem: Vec<usize>,
    pub pc: usize,
}

impl ArchLayout {
    pub fn locate(d: &Design, prefix: &str, spec: &CoreSpec) -> Result<Self, DesignError> {
        let idx = |n: String| d.state_index_by_name(&format!("{prefix}{n}"));
        Ok(ArchLayout {
            imem: (0..spec.imem_cap)
                .map(|i| idx(format!("imem{i}")))
                .collect::<Result<_, _>>()?,
            prog_len: idx("prog_len".into())?,
            regs: (1..NUM_REGS)
                .map(|i| idx(format!("x{i}")))
                .collect::<Result<_, _>>()?,
            dmem: (0..spec.dmem_words)
                .map(|i| idx(format!("dmem{i}")))
                .collect::<Result<_, _>>()?,
            pc: idx("pc".into())?,
        })
    }

    /// State elements that make up the initial architectural state (free in
    /// bounded model checking). The pc is excluded: it starts at 0.
    pub fn free_elements(&self) -> Vec<usize> {
        let mut v = self.imem.clone();
        v.push(self.prog_len);
        v.extend(&self.regs);
        v.extend(&self.dmem);
        v
    }
}

#[derive(Debug, Clone)]
pub struct Core {
    pub spec: CoreSpec,
    pub design: Design,
    pub obs: ObservationInterface,
    pub layout: ArchLayout,
}

impl Core {
    /// Maximum retirement interval, written 𝕂 in the bounds.
    pub fn max_retire_interval(&self) -> u32 {
        self.spec.max_retire_interval()
    }

    pub fn width(&self) -> u32 {
        self.spec.width
    }

    /// Initial simulation state for `s` with µ0 in all non-architectural
    /// state elements.
    pub fn load(&self, s: &ArchState) -> Result<SimState, CoreError> {
        let spec = &self.spec;
        if s.width != spec.width {
            return Err(CoreError::Shape(format!(
                "state width {} vs core width {}",
                s.width, spec.width
            )));
        }
        if s.dmem.len() != spec.dmem_words {
            return Err(CoreError::Shape(format!(
                "{} data words vs {} in the core",
                s.dmem.len(),
                spec.dmem_words
            )));
        }
        if s.imem.len() > spec.imem_cap {
            return Err(CoreError::ProgramTooLong(s.imem.len(), spec.imem_cap));
        }
        let mut st = self.design.initial_state();
        let m = mask(spec.width);
        for (i, &e) in self.layout.imem.iter().enumerate() {
            st.values[e] = s.imem.get(i).map(|x| x.encode() as u64).unwrap_or(0);
        }
        st.values[self.layout.prog_len] = s.imem.len() as u64;
        for (i, &e) in self.layout.regs.iter().enumerate() {
            st.values[e] = s.regs[i + 1] & m;
        }
        for (i, &e) in self.layout.dmem.iter().enumerate() {
            st.values[e] = s.dmem[i] & m;
        }
        st.values[self.layout.pc] = s.pc & m;
        Ok(st)
    }

    /// Reads the architectural state back out of a simulation state. The pc
    /// is the fetch pc, which equals the architectural pc only when the
    /// pipeline is empty.
    pub fn arch_state(&self, st: &SimState) -> Result<ArchState, CoreError> {
        self.arch_state_from(|i| st.values[i])
    }

    /// Builds an architectural state from arbitrary state-element values.
    pub fn arch_state_from(&self, value: impl Fn(usize) -> u64) -> Result<ArchState, CoreError> {
        let len = (value(self.layout.prog_len) as usize).min(self.spec.imem_cap);
        let imem = self.layout.imem[..len]
            .iter()
            .map(|&e| Instruction::decode(value(e) as u32))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CoreError::Shape(e.to_string()))?;
        let mut s = ArchState::new(self.spec.width, imem, self.spec.dmem_words);
        for (i, &e) in self.layout.regs.iter().enumerate() {
            s.regs[i + 1] = value(e);
        }
        for (i, &e) in self.layout.dmem.iter().enumerate() {
            s.dmem[i] = value(e);
        }
        s.pc = value(self.layout.pc);
        Ok(s)
    }

    pub fn simulate(&self, s: &ArchState) -> Result<CoreSim<'_>, CoreError> {
        Ok(CoreSim {
            core: self,
            sim: Simulator::new(&self.design),
            state: self.load(s)?.values,
            cycle: 0,
        })
    }
}

/// A running simulation of a core.
pub struct CoreSim<'c> {
    core: &'c Core,
    sim: Simulator,
    state: Vec<u64>,
    cycle: u64,
}

/// What happened during one cycle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CycleObs {
    /// 1-based cycle number.
    pub cycle: u64,
    pub atk: bool,
    pub record: Option<RetirementRecord>,
}

impl<'c> CoreSim<'c> {
    pub fn state(&self) -> &[u64] {
        &self.state
    }

    pub fn cycle(&self) -> u64 {
        self.cycle
    }

    /// Simulates one cycle.
    pub fn step(&mut self) -> CycleObs {
        self.sim.settle(&self.state, &[]);
        self.cycle += 1;
        let obs = &self.core.obs;
        let retire = self.sim.value(obs.retire) == 1;
        let record = retire.then(|| read_record(&self.sim, obs));
        let atk = self.sim.value(obs.atk_obs) == 1;
        self.sim.latch(&mut self.state);
        CycleObs {
            cycle: self.cycle,
            atk,
            record,
        }
    }

    /// Simulates one cycle, returning only the attacker bit.
    pub fn step_atk(&mut self) -> bool {
        self.sim.settle(&self.state, &[]);
        self.cycle += 1;
        let atk = self.sim.value(self.core.obs.atk_obs) == 1;
        self.sim.latch(&mut self.state);
        atk
    }
}

fn read_record(sim: &Simulator, obs: &ObservationInterface) -> RetirementRecord {
    let v = |n: &str| sim.value(obs.field(n));
    let opcode = Opcode::from_ordinal(v("opcode") as u32).unwrap_or(Opcode::Nop);
    RetirementRecord {
        pc: v("pc"),
        insn_word: v("insn_word") as u32,
        opcode,
        rd: v("rd") as u8,
        rs1: v("rs1") as u8,
        rs2: v("rs2") as u8,
        imm: v("imm"),
        rs1_val: v("rs1_val"),
        rs2_val: v("rs2_val"),
        rd_val: v("rd_val"),
        mem_addr: v("mem_addr"),
        mem_addr_valid: v("mem_addr_valid") == 1,
        mem_rdata: v("mem_rdata"),
        mem_rdata_valid: v("mem_rdata_valid") == 1,
        mem_wdata: v("mem_wdata"),
        mem_wdata_valid: v("mem_wdata_valid") == 1,
        is_branch: v("is_branch") == 1,
        branch_taken: v("branch_taken") == 1,
    }
}

/// Per-cycle attacker observations for `n` cycles from `(s, µ0)`.
pub fn attacker_trace(core: &Core, s: &ArchState, n: usize) -> Result<Vec<bool>, CoreError> {
    let mut sim = core.simulate(s)?;
    Ok((0..n).map(|_| sim.step_atk()).collect())
}

/// Cycles (1-based) at which instructions retire within the first `n`.
pub fn retire_cycles(core: &Core, s: &ArchState, n: usize) -> Result<Vec<u64>, CoreError> {
    Ok(attacker_trace(core, s, n)?
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| i as u64 + 1)
        .collect())
}

fn bits_for(v: u64) -> u32 {
    (64 - v.leading_zeros()).max(1)
}

/// Mux chain selecting `items[idx]` (or zero when out of range).
fn select(b: &mut DesignBuilder, idx: Sig, items: &[Sig], width: u32) -> Sig {
    let mut acc = b.zero(width);
    for (i, &it) in items.iter().enumerate() {
        if (i as u64) >> idx.width.min(63) != 0 {
            break;
        }
        let hit = b.eq_const(idx, i as u64);
        acc = b.mux(hit, it, acc);
    }
    acc
}

/// floor(log2(x)) with log2(0) = 0, as a `width`-bit value.
fn floor_log2(b: &mut DesignBuilder, x: Sig, width: u32) -> Sig {
    let mut acc = b.zero(width);
    for i in 1..x.width {
        let bit = b.bit(x, i);
        let k = b.konst(i as u64, width);
        acc = b.mux(bit, k, acc);
    }
    acc
}

fn negate(b: &mut DesignBuilder, x: Sig) -> Sig {
    let z = b.zero(x.width);
    b.sub(z, x)
}

/// Builds and validates a core.
pub fn build_core(spec: &CoreSpec) -> Result<Core, CoreError> {
    spec.validate()?;
    let w = spec.width;
    let mut b = DesignBuilder::new();

    // Architectural state.
    let imem: Vec<Sig> = (0..spec.imem_cap)
        .map(|i| b.reg(&format!("imem{i}"), 32, 0))
        .collect();
    let prog_len = b.reg("prog_len", w, 0);
    let x0 = b.zero(w);
    let mut regs = vec![x0];
    for i in 1..NUM_REGS {
        regs.push(b.reg(&format!("x{i}"), w, 0));
    }
    let dmem: Vec<Sig> = (0..spec.dmem_words)
        .map(|i| b.reg(&format!("dmem{i}"), w, 0))
        .collect();

    // Microarchitectural state (µ0 = all zeros).
    let cnt_w = bits_for(spec.max_latency() as u64);
    let pc = b.reg("pc", w, 0);
    let ex_valid = b.reg("ex_valid", 1, 0);
    let ex_insn = b.reg("ex_insn", 32, 0);
    let ex_pc = b.reg("ex_pc", w, 0);
    let ex_cnt = b.reg("ex_cnt", cnt_w, 0);
    let div_rem = b.reg("div_rem", w, 0);
    let div_quo = b.reg("div_quo", w, 0);
    let line = spec
        .cache
        .map(|_| (b.reg("line_valid", 1, 0), b.reg("line_addr", w, 0)));

    // Decode.
    let opcode = b.slice(ex_insn, 31, 28);
    let rd = b.slice(ex_insn, 27, 25);
    let rs1 = b.slice(ex_insn, 24, 22);
    let rs2 = b.slice(ex_insn, 21, 19);
    let imm19 = b.slice(ex_insn, 18, 0);
    let imm = if w <= 19 {
        b.slice(imm19, w - 1, 0)
    } else {
        let sign = b.bit(imm19, 18);
        let ext = b.replicate(sign, w - 19);
        b.concat(ext, imm19)
    };
    let is = |b: &mut DesignBuilder, op: Opcode| b.eq_const(opcode, op.ordinal() as u64);
    let is_li = is(&mut b, Opcode::Li);
    let is_add = is(&mut b, Opcode::Add);
    let is_sub = is(&mut b, Opcode::Sub);
    let is_mul = is(&mut b, Opcode::Mul);
    let is_div = is(&mut b, Opcode::Div);
    let is_rem = is(&mut b, Opcode::Rem);
    let is_lw = is(&mut b, Opcode::Lw);
    let is_sw = is(&mut b, Opcode::Sw);
    let is_beq = is(&mut b, Opcode::Beq);
    let is_jal = is(&mut b, Opcode::Jal);

    let a = select(&mut b, rs1, &regs, w);
    let bv = select(&mut b, rs2, &regs, w);

    // Memory.
    let ea = b.add(a, imm);
    let idx_bits = spec.dmem_words.trailing_zeros();
    let word_idx = if idx_bits == 0 {
        b.zero(1)
    } else {
        b.slice(ea, idx_bits + 1, 2)
    };
    let mem_rdata_raw = select(&mut b, word_idx, &dmem, w);
    let low2 = b.slice(ea, 1, 0);
    let aligned = b.eq_const(low2, 0);
    let unaligned = b.not(aligned);
    let is_mem = b.or(is_lw, is_sw);

    // Divider: restoring, one quotient bit per cycle on magnitudes.
    let is_divrem = b.or(is_div, is_rem);
    let sa = b.bit(a, w - 1);
    let sb = b.bit(bv, w - 1);
    let neg_a = negate(&mut b, a);
    let neg_b = negate(&mut b, bv);
    let ua = b.mux(sa, neg_a, a);
    let ub = b.mux(sb, neg_b, bv);
    let cnt_zero = b.eq_const(ex_cnt, 0);
    let zero_w = b.zero(w);
    let r_in = b.mux(cnt_zero, zero_w, div_rem);
    let q_in = b.mux(cnt_zero, ua, div_quo);
    let q_msb = b.bit(q_in, w - 1);
    let r_shift = b.concat(r_in, q_msb); // W+1 bits
    let zero1 = b.zero(1);
    let ub_ext = b.concat(zero1, ub);
    let lt = b.ult(r_shift, ub_ext);
    let ge = b.not(lt);
    let r_sub = b.sub(r_shift, ub_ext);
    let r_next_ext = b.mux(ge, r_sub, r_shift);
    let r_next = b.slice(r_next_ext, w - 1, 0);
    let q_low = if w > 1 {
        b.slice(q_in, w - 2, 0)
    } else {
        unreachable!("width >= 2")
    };
    let q_next = b.concat(q_low, ge);
    let w_const = b.konst(w as u64, cnt_w.max(bits_for(w as u64)));
    let cnt_ext = b.resize(ex_cnt, w_const.width);
    let stepping = b.ult(cnt_ext, w_const);
    let quo_mag = b.mux(stepping, q_next, div_quo);
    let rem_mag = b.mux(stepping, r_next, div_rem);
    let sign_q = b.xor(sa, sb);
    let neg_quo = negate(&mut b, quo_mag);
    let neg_rem = negate(&mut b, rem_mag);
    let slow_quo = b.mux(sign_q, neg_quo, quo_mag);
    let slow_rem = b.mux(sa, neg_rem, rem_mag);
    let div_by0 = b.eq_const(bv, 0);
    let div_by1 = b.eq_const(bv, 1);
    let div_fast = b.or(div_by0, div_by1);
    let all_ones = b.konst(mask(w), w);
    let fast_quo = b.mux(div_by0, all_ones, a);
    let fast_rem = b.mux(div_by0, a, zero_w);
    let quo = b.mux(div_fast, fast_quo, slow_quo);
    let rem = b.mux(div_fast, fast_rem, slow_rem);
    let div_update = {
        let t = b.and(ex_valid, is_divrem);
        b.and(t, stepping)
    };
    let div_rem_n = b.mux(div_update, r_next, div_rem);
    let div_quo_n = b.mux(div_update, q_next, div_quo);
    b.set_next(div_rem, div_rem_n);
    b.set_next(div_quo, div_quo_n);

    // Latency.
    let lat_const = |b: &mut DesignBuilder, v: u32| b.konst(v as u64, cnt_w);
    let one_lat = lat_const(&mut b, 1);
    let mut lat = one_lat;
    let div_slow = lat_const(&mut b, spec.div_latency);
    let div_lat = b.mux(div_fast, one_lat, div_slow);
    lat = b.mux(is_divrem, div_lat, lat);
    if spec.mul_log {
        let l2 = floor_log2(&mut b, bv, cnt_w);
        let mul_lat = b.add(l2, one_lat);
        lat = b.mux(is_mul, mul_lat, lat);
    }
    let penalty = if spec.unaligned_penalty > 0 {
        let p = lat_const(&mut b, spec.unaligned_penalty);
        let z = b.zero(cnt_w);
        b.mux(unaligned, p, z)
    } else {
        b.zero(cnt_w)
    };
    let load_base = match (spec.cache, line) {
        (Some((hit_l, miss_l)), Some((lv, la))) => {
            let same = b.eq(la, ea);
            let hit = b.and(lv, same);
            let h = lat_const(&mut b, hit_l);
            let m = lat_const(&mut b, miss_l);
            b.mux(hit, h, m)
        }
        _ => one_lat,
    };
    let load_lat = b.add(load_base, penalty);
    let store_lat = b.add(one_lat, penalty);
    lat = b.mux(is_lw, load_lat, lat);
    lat = b.mux(is_sw, store_lat, lat);
    let lat = b.name(lat, "ex_lat");

    // Execute-stage control.
    let one_cnt = b.konst(1, cnt_w);
    let cnt_inc = b.add(ex_cnt, one_cnt);
    let not_done = b.ult(cnt_inc, lat);
    let done_raw = b.not(not_done);
    let retire = b.and(ex_valid, done_raw);
    let retire = b.name(retire, "retire");

    // Branches.
    let eq_ab = b.eq(a, bv);
    let beq_taken = b.and(is_beq, eq_ab);
    let taken = b.or(beq_taken, is_jal);
    let is_branch = b.or(is_beq, is_jal);
    let target = b.add(ex_pc, imm);
    let one_w = b.konst(1, w);
    let link = b.add(ex_pc, one_w);

    // Results and write-back.
    let sum = b.add(a, bv);
    let diff = b.sub(a, bv);
    let prod = b.mul(a, bv);
    let mut result = b.zero(w);
    for (sel, val) in [
        (is_li, imm),
        (is_add, sum),
        (is_sub, diff),
        (is_mul, prod),
        (is_div, quo),
        (is_rem, rem),
        (is_lw, mem_rdata_raw),
        (is_jal, link),
    ] {
        result = b.mux(sel, val, result);
    }
    let result = b.name(result, "ex_result");
    let writes = b.or_all(&[is_li, is_add, is_sub, is_mul, is_divrem, is_lw, is_jal]);
    let writes = b.name(writes, "ex_writes");
    let rd = b.name(rd, "ex_rd");
    let rd_nonzero = {
        let z = b.eq_const(rd, 0);
        b.not(z)
    };
    let wen = b.and_all(&[retire, writes, rd_nonzero]);
    for i in 1..NUM_REGS {
        let hit = b.eq_const(rd, i as u64);
        let we = b.and(wen, hit);
        let n = b.mux(we, result, regs[i]);
        b.set_next(regs[i], n);
    }
    let store_en = b.and(retire, is_sw);
    for (j, &word) in dmem.iter().enumerate() {
        let hit = if idx_bits == 0 {
            b.one()
        } else {
            b.eq_const(word_idx, j as u64)
        };
        let we = b.and(store_en, hit);
        let n = b.mux(we, bv, word);
        b.set_next(word, n);
    }
    for &word in &imem {
        b.set_next(word, word);
    }
    b.set_next(prog_len, prog_len);
    if let Some((lv, la)) = line {
        let upd = b.and(retire, is_mem);
        let one = b.one();
        let lv_n = b.mux(upd, one, lv);
        let la_n = b.mux(upd, ea, la);
        b.set_next(lv, lv_n);
        b.set_next(la, la_n);
    }

    // Fetch.
    let redirect = b.and(retire, taken);
    let fetch_pc = b.mux(redirect, target, pc);
    let stage_free = {
        let nv = b.not(ex_valid);
        b.or(nv, retire)
    };
    let in_prog = b.ult(fetch_pc, prog_len);
    let cap = b.konst(spec.imem_cap as u64, w);
    let in_cap = b.ult(fetch_pc, cap);
    let mut fetch_conds = vec![stage_free, in_prog, in_cap];
    if spec.branch_penalty > 0 {
        let no_bubble = b.not(redirect);
        fetch_conds.push(no_bubble);
    }
    let fetch_en = b.and_all(&fetch_conds);
    let fetch_en = b.name(fetch_en, "fetch_en");
    let fetch_idx_w = bits_for(spec.imem_cap.saturating_sub(1) as u64).min(w);
    let fetch_idx = b.resize(fetch_pc, fetch_idx_w);
    let fetched = select(&mut b, fetch_idx, &imem, 32);
    let pc_inc = b.add(fetch_pc, one_w);
    let pc_n = b.mux(fetch_en, pc_inc, fetch_pc);
    b.set_next(pc, pc_n);
    let zero_b = b.zero(1);
    let valid_hold = b.mux(retire, zero_b, ex_valid);
    let one_b = b.one();
    let ex_valid_n = b.mux(fetch_en, one_b, valid_hold);
    b.set_next(ex_valid, ex_valid_n);
    let ex_insn_n = b.mux(fetch_en, fetched, ex_insn);
    b.set_next(ex_insn, ex_insn_n);
    let ex_pc_n = b.mux(fetch_en, fetch_pc, ex_pc);
    b.set_next(ex_pc, ex_pc_n);
    let zero_cnt = b.zero(cnt_w);
    let cnt_run = b.mux(ex_valid, cnt_inc, zero_cnt);
    let ex_cnt_n = b.mux(retire, zero_cnt, cnt_run);
    b.set_next(ex_cnt, ex_cnt_n);

    // Observation interface. Fields follow the reference interpreter: values
    // that do not apply to the instruction are zero.
    b.output("retire", retire);
    b.output("atk_obs", retire);
    let gate = |b: &mut DesignBuilder, en: Sig, v: Sig| {
        let z = b.zero(v.width);
        b.mux(en, v, z)
    };
    let rd_written = b.and(writes, rd_nonzero);
    let rd_val = gate(&mut b, rd_written, result);
    let mem_addr = gate(&mut b, is_mem, ea);
    let mem_rdata = gate(&mut b, is_lw, mem_rdata_raw);
    let mem_wdata = gate(&mut b, is_sw, bv);
    let fields: [(&str, Sig); 18] = [
        ("pc", ex_pc),
        ("insn_word", ex_insn),
        ("opcode", opcode),
        ("rd", rd),
        ("rs1", rs1),
        ("rs2", rs2),
        ("imm", imm),
        ("rs1_val", a),
        ("rs2_val", bv),
        ("rd_val", rd_val),
        ("mem_addr", mem_addr),
        ("mem_addr_valid", is_mem),
        ("mem_rdata", mem_rdata),
        ("mem_rdata_valid", is_lw),
        ("mem_wdata", mem_wdata),
        ("mem_wdata_valid", is_sw),
        ("is_branch", is_branch),
        ("branch_taken", taken),
    ];
    for (n, s) in fields {
        b.output(&format!("rec.{n}"), s);
    }

    let design = b.build()?;
    let obs = ObservationInterface::locate(&design, "")?;
    let layout = ArchLayout::locate(&design, "", spec)?;
    Ok(Core {
        spec: spec.clone(),
        design,
        obs,
        layout,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::isa::{Instruction as I, Opcode::*};

    fn div_state(width: u32, divisor: u64) -> ArchState {
        let mut s = ArchState::new(width, vec![I::rrr(Div, 1, 2, 3)], 256);
        s.regs[2] = 100;
        s.regs[3] = divisor;
        s
    }

    #[test]
    fn divcore_golden_timing() {
        let core = build_core(&CoreSpec::simulation(CoreKind::DivCore)).unwrap();
        assert_eq!(core.max_retire_interval(), 33);
        let li = ArchState::new(32, vec![I::li(1, 0)], 256);
        assert_eq!(retire_cycles(&core, &li, 4).unwrap(), vec![2]);
        assert_eq!(retire_cycles(&core, &div_state(32, 2), 40).unwrap(), vec![33]);
        assert_eq!(retire_cycles(&core, &div_state(32, 1), 40).unwrap(), vec![2]);
        assert_eq!(retire_cycles(&core, &div_state(32, 0), 40).unwrap(), vec![2]);
    }

    #[test]
    fn empty_program_never_retires() {
        let core = build_core(&CoreSpec::verification(CoreKind::BrCore)).unwrap();
        let s = ArchState::new(8, vec![], 4);
        assert!(attacker_trace(&core, &s, 50).unwrap().iter().all(|b| !b));
    }

    #[test]
    fn load_projects_back() {
        let core = build_core(&CoreSpec::verification(CoreKind::CacheCore)).unwrap();
        let mut s = ArchState::new(8, vec![I::li(1, 5), I::rrr(Div, 2, 1, 3)], 4);
        s.regs[3] = 7;
        s.dmem[2] = 9;
        let st = core.load(&s).unwrap();
        assert_eq!(core.arch_state(&st).unwrap(), s);
        assert_eq!(core.load(&s).unwrap(), st);
        let long = ArchState::new(8, vec![I::nop(); 4], 4);
        assert!(matches!(
            core.load(&long),
            Err(CoreError::ProgramTooLong(4, 3))
        ));
    }

    #[test]
    fn cache_hit_is_faster() {
        let core = build_core(&CoreSpec::simulation(CoreKind::CacheCore)).unwrap();
        let lw = |rd, off| I::new(Lw, rd, 2, 0, off).unwrap();
        let mut same = ArchState::new(32, vec![lw(1, 0), lw(3, 0)], 256);
        same.regs[2] = 16;
        let mut diff = same.clone();
        diff.imem[1] = lw(3, 4);
        let a = retire_cycles(&core, &same, 20).unwrap();
        let b = retire_cycles(&core, &diff, 20).unwrap();
        assert_eq!(a[0], b[0]);
        assert_eq!(a[1] + 1, b[1]);
    }

    #[test]
    fn brcore_timing_features() {
        let core = build_core(&CoreSpec::simulation(CoreKind::BrCore)).unwrap();
        // Taken branch adds a bubble before the next instruction.
        let mut s = ArchState::new(
            32,
            vec![I::new(Beq, 0, 1, 2, 1).unwrap(), I::li(1, 1)],
            256,
        );
        let taken = retire_cycles(&core, &s, 10).unwrap();
        s.regs[1] = 1;
        let not_taken = retire_cycles(&core, &s, 10).unwrap();
        assert_eq!(taken, vec![2, 4]);
        assert_eq!(not_taken, vec![2, 3]);
        // MUL latency grows with log2 of rs2.
        let mut m = ArchState::new(32, vec![I::rrr(Mul, 1, 2, 3)], 256);
        m.regs[3] = 8;
        assert_eq!(retire_cycles(&core, &m, 10).unwrap(), vec![5]);
        // Unaligned store takes one extra cycle.
        let mut st = ArchState::new(32, vec![I::new(Sw, 0, 0, 1, 2).unwrap()], 256);
        assert_eq!(retire_cycles(&core, &st, 10).unwrap(), vec![3]);
        st.imem[0] = I::new(Sw, 0, 0, 1, 4).unwrap();
        assert_eq!(retire_cycles(&core, &st, 10).unwrap(), vec![2]);
    }

    #[test]
    fn specs_validate() {
        let mut s = CoreSpec::verification(CoreKind::DivCore);
        s.div_latency = 4;
        assert!(s.validate().is_err());
        let s = CoreSpec::new(CoreKind::DivCore, 4, 1, 4, 4);
        assert!(s.validate().is_ok());
        assert_eq!(s.max_retire_interval(), 5);
        assert_eq!(CoreSpec::verification(CoreKind::DivCore).max_retire_interval(), 17);
    }
    /// DivCore whose write to x1 lands while the instruction is still
    /// executing instead of at retirement.
    fn early_write_core() -> Core {
        let core = build_core(&CoreSpec::simulation(CoreKind::DivCore)).unwrap();
        let mut b = DesignBuilder::from_parts(core.design.parts().clone());
        let get = |b: &DesignBuilder, n: &str| b.lookup(n).unwrap();
        let (x1, ex_valid) = (get(&b, "x1"), get(&b, "ex_valid"));
        let (result, writes, rd) = (get(&b, "ex_result"), get(&b, "ex_writes"), get(&b, "ex_rd"));
        let to_x1 = b.eq_const(rd, 1);
        let en = b.and_all(&[ex_valid, writes, to_x1]);
        let n = b.mux(en, result, x1);
        b.set_next(x1, n);
        Core {
            design: b.build().unwrap(),
            ..core
        }
    }

    fn compliance_program() -> ArchState {
        let prog = vec![
            I::li(2, 100),
            I::li(3, 7),
            I::rrr(Div, 1, 2, 3),
            I::rrr(Rem, 4, 2, 3),
            I::new(Sw, 0, 0, 4, 8).unwrap(),
            I::new(Lw, 5, 0, 0, 8).unwrap(),
            I::new(Beq, 0, 5, 4, 2).unwrap(),
            I::li(6, 1),
            I::new(Jal, 7, 0, 0, 1).unwrap(),
            I::rrr(Mul, 6, 1, 3),
        ];
        ArchState::new(32, prog, 256)
    }

    #[test]
    fn cores_comply_on_mixed_program() {
        let s = compliance_program();
        for kind in [CoreKind::DivCore, CoreKind::BrCore, CoreKind::CacheCore] {
            let core = build_core(&CoreSpec::simulation(kind)).unwrap();
            let v = crate::isa::check_isa_compliance(&core, &s, 200).unwrap();
            assert!(v.is_ok(), "{kind}: {v:?}");
            assert!(crate::isa::check_isa_compliance(&core, &s, 0).unwrap().is_ok());
        }
    }

    #[test]
    fn early_write_is_caught() {
        use crate::isa::{check_isa_compliance, ComplianceVerdict, ViolationKind};
        let v = check_isa_compliance(&early_write_core(), &compliance_program(), 200).unwrap();
        match v {
            ComplianceVerdict::Violation { kind, cycle, .. } => {
                assert_eq!(kind, ViolationKind::UnretiredChange);
                // The DIV enters execute at cycle 3.
                assert_eq!(cycle, 4);
            }
            ComplianceVerdict::Ok => panic!("broken core passed"),
        }
    }
}
