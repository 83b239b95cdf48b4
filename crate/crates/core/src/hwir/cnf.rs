//! Bit-blasting to CNF.
//!
//! [`Cnf`] is a Tseitin gate builder with constant folding and structural
//! hashing; variable 0 is the constant TRUE. [`Unroller`] lazily encodes the
//! cone of influence of requested (frame, signal) pairs over a time-unrolled
//! design, so callers only pay for logic they actually constrain.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write;

use thiserror::Error;

use super::{Design, Driver, OpKind, SigId};
use crate::sat::{Lit, SatResult};

pub const TRUE: Lit = Lit::pos(0);
pub const FALSE: Lit = Lit::new(0, true);

#[derive(Debug, Clone)]
pub struct Cnf {
    num_vars: u32,
    clauses: Vec<Vec<Lit>>,
    and_cache: HashMap<(Lit, Lit), Lit>,
    xor_cache: HashMap<(Lit, Lit), Lit>,
    mux_cache: HashMap<(Lit, Lit, Lit), Lit>,
    nary_cache: HashMap<Vec<Lit>, Lit>,
}

impl Default for Cnf {
    fn default() -> Self {
        Self::new()
    }
}

fn is_const(l: Lit) -> bool {
    l.var() == 0
}

impl Cnf {
    pub fn new() -> Self {
        Cnf {
            num_vars: 1,
            clauses: vec![vec![TRUE]],
            and_cache: HashMap::new(),
            xor_cache: HashMap::new(),
            mux_cache: HashMap::new(),
            nary_cache: HashMap::new(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars as usize
    }

    pub fn clauses(&self) -> &[Vec<Lit>] {
        &self.clauses
    }

    pub fn fresh(&mut self) -> Lit {
        let v = self.num_vars;
        self.num_vars += 1;
        Lit::pos(v)
    }

    pub fn konst(b: bool) -> Lit {
        if b {
            TRUE
        } else {
            FALSE
        }
    }

    /// Adds a clause after dropping FALSE literals. A clause that folds to
    /// nothing is kept as the unit clause `FALSE`, never as an empty clause.
    pub fn add_clause(&mut self, lits: &[Lit]) {
        if lits.contains(&TRUE) {
            return;
        }
        let c: Vec<Lit> = lits.iter().copied().filter(|&l| l != FALSE).collect();
        if c.is_empty() {
            self.clauses.push(vec![FALSE]);
        } else {
            self.clauses.push(c);
        }
    }

    pub fn assert_lit(&mut self, l: Lit) {
        self.add_clause(&[l]);
    }

    pub fn and(&mut self, a: Lit, b: Lit) -> Lit {
        if a == FALSE || b == FALSE || a == !b {
            return FALSE;
        }
        if a == TRUE || a == b {
            return b;
        }
        if b == TRUE {
            return a;
        }
        let key = if a < b { (a, b) } else { (b, a) };
        if let Some(&g) = self.and_cache.get(&key) {
            return g;
        }
        let g = self.fresh();
        self.clauses.push(vec![!g, a]);
        self.clauses.push(vec![!g, b]);
        self.clauses.push(vec![g, !a, !b]);
        self.and_cache.insert(key, g);
        g
    }

    pub fn or(&mut self, a: Lit, b: Lit) -> Lit {
        !self.and(!a, !b)
    }

    pub fn implies(&mut self, a: Lit, b: Lit) -> Lit {
        self.or(!a, b)
    }

    pub fn xor(&mut self, a: Lit, b: Lit) -> Lit {
        if is_const(a) {
            return if a == TRUE { !b } else { b };
        }
        if is_const(b) {
            return if b == TRUE { !a } else { a };
        }
        if a == b {
            return FALSE;
        }
        if a == !b {
            return TRUE;
        }
        // Normalize polarity: xor(!a, b) = !xor(a, b).
        let flip = a.is_neg() ^ b.is_neg();
        let (pa, pb) = (Lit::pos(a.var()), Lit::pos(b.var()));
        let key = if pa < pb { (pa, pb) } else { (pb, pa) };
        let g = match self.xor_cache.get(&key) {
            Some(&g) => g,
            None => {
                let g = self.fresh();
                let (x, y) = key;
                self.clauses.push(vec![!g, x, y]);
                self.clauses.push(vec![!g, !x, !y]);
                self.clauses.push(vec![g, !x, y]);
                self.clauses.push(vec![g, x, !y]);
                self.xor_cache.insert(key, g);
                g
            }
        };
        if flip {
            !g
        } else {
            g
        }
    }

    pub fn xnor(&mut self, a: Lit, b: Lit) -> Lit {
        !self.xor(a, b)
    }

    /// `s ? a : b`.
    pub fn mux(&mut self, s: Lit, a: Lit, b: Lit) -> Lit {
        if s == TRUE || a == b {
            return a;
        }
        if s == FALSE {
            return b;
        }
        if a == TRUE || s == a {
            return self.or(s, b);
        }
        if a == FALSE || s == !a {
            return self.and(!s, b);
        }
        if b == TRUE || s == !b {
            return self.or(!s, a);
        }
        if b == FALSE || s == b {
            return self.and(s, a);
        }
        let (s, a, b) = if s.is_neg() { (!s, b, a) } else { (s, a, b) };
        if let Some(&g) = self.mux_cache.get(&(s, a, b)) {
            return g;
        }
        let g = self.fresh();
        self.clauses.push(vec![!s, !a, g]);
        self.clauses.push(vec![!s, a, !g]);
        self.clauses.push(vec![s, !b, g]);
        self.clauses.push(vec![s, b, !g]);
        self.clauses.push(vec![!a, !b, g]);
        self.clauses.push(vec![a, b, !g]);
        self.mux_cache.insert((s, a, b), g);
        g
    }

    pub fn and_many(&mut self, xs: &[Lit]) -> Lit {
        let mut v: Vec<Lit> = Vec::with_capacity(xs.len());
        for &x in xs {
            if x == FALSE {
                return FALSE;
            }
            if x != TRUE {
                v.push(x);
            }
        }
        v.sort();
        v.dedup();
        if v.windows(2).any(|w| w[0] == !w[1]) {
            return FALSE;
        }
        match v.len() {
            0 => TRUE,
            1 => v[0],
            2 => self.and(v[0], v[1]),
            _ => {
                if let Some(&g) = self.nary_cache.get(&v) {
                    return g;
                }
                let g = self.fresh();
                let mut big = vec![g];
                for &x in &v {
                    self.clauses.push(vec![!g, x]);
                    big.push(!x);
                }
                self.clauses.push(big);
                self.nary_cache.insert(v, g);
                g
            }
        }
    }

    pub fn or_many(&mut self, xs: &[Lit]) -> Lit {
        let neg: Vec<Lit> = xs.iter().map(|&x| !x).collect();
        !self.and_many(&neg)
    }

    pub fn const_bits(v: u64, width: u32) -> Vec<Lit> {
        (0..width).map(|i| Cnf::konst(v >> i & 1 == 1)).collect()
    }

    pub fn fresh_bits(&mut self, width: u32) -> Vec<Lit> {
        (0..width).map(|_| self.fresh()).collect()
    }

    /// Ripple-carry addition; returns the sum and the carry out.
    pub fn add_bits(&mut self, a: &[Lit], b: &[Lit], cin: Lit) -> (Vec<Lit>, Lit) {
        let mut c = cin;
        let mut sum = Vec::with_capacity(a.len());
        for (&x, &y) in a.iter().zip(b) {
            let t = self.xor(x, y);
            sum.push(self.xor(t, c));
            let g = self.and(x, y);
            let p = self.and(t, c);
            c = self.or(g, p);
        }
        (sum, c)
    }

    pub fn sub_bits(&mut self, a: &[Lit], b: &[Lit]) -> (Vec<Lit>, Lit) {
        let nb: Vec<Lit> = b.iter().map(|&l| !l).collect();
        self.add_bits(a, &nb, TRUE)
    }

    /// Shift-add multiplication, truncated to the operand width.
    pub fn mul_bits(&mut self, a: &[Lit], b: &[Lit]) -> Vec<Lit> {
        let w = a.len();
        let mut acc = vec![FALSE; w];
        for i in 0..w {
            if b[i] == FALSE {
                continue;
            }
            let partial: Vec<Lit> = (i..w).map(|j| self.and(a[j - i], b[i])).collect();
            let (s, _) = self.add_bits(&acc[i..], &partial, FALSE);
            acc[i..].copy_from_slice(&s);
        }
        acc
    }

    pub fn eq_bits(&mut self, a: &[Lit], b: &[Lit]) -> Lit {
        let xs: Vec<Lit> = a.iter().zip(b).map(|(&x, &y)| self.xnor(x, y)).collect();
        self.and_many(&xs)
    }

    /// Unsigned less-than from the borrow of `a - b`.
    pub fn ult_bits(&mut self, a: &[Lit], b: &[Lit]) -> Lit {
        let (_, carry) = self.sub_bits(a, b);
        !carry
    }

    pub fn mux_bits(&mut self, s: Lit, a: &[Lit], b: &[Lit]) -> Vec<Lit> {
        a.iter().zip(b).map(|(&x, &y)| self.mux(s, x, y)).collect()
    }

    pub fn to_dimacs(&self) -> String {
        dimacs(self.num_vars as usize, &self.clauses)
    }
}

pub fn dimacs(num_vars: usize, clauses: &[Vec<Lit>]) -> String {
    let mut s = format!("p cnf {} {}\n", num_vars, clauses.len());
    for c in clauses {
        for l in c {
            write!(s, "{} ", l.to_dimacs()).unwrap();
        }
        s.push_str("0\n");
    }
    s
}

/// Reads a model value for a bit vector.
pub fn bits_value(model: &[bool], bits: &[Lit]) -> u64 {
    bits.iter().enumerate().fold(0u64, |acc, (i, &l)| {
        let v = if is_const(l) {
            l == TRUE
        } else {
            model[l.var() as usize] != l.is_neg()
        };
        acc | (v as u64) << i
    })
}

/// Time-unrolled encoding of a design with lazy, memoized bit-blasting.
pub struct Unroller<'d> {
    design: &'d Design,
    pub cnf: Cnf,
    frames: Vec<Vec<Option<Vec<Lit>>>>,
    free_init: Vec<bool>,
}

impl<'d> Unroller<'d> {
    /// All state elements start at their init values.
    pub fn new(design: &'d Design) -> Self {
        Self::with_free_init(design, &HashSet::new())
    }

    /// State elements whose index is in `free` start unconstrained.
    pub fn with_free_init(design: &'d Design, free: &HashSet<usize>) -> Self {
        let free_init = (0..design.state().len()).map(|i| free.contains(&i)).collect();
        Unroller {
            design,
            cnf: Cnf::new(),
            frames: Vec::new(),
            free_init,
        }
    }

    pub fn design(&self) -> &'d Design {
        self.design
    }

    fn slot(&mut self, frame: usize, s: SigId) -> &mut Option<Vec<Lit>> {
        while self.frames.len() <= frame {
            self.frames.push(vec![None; self.design.num_signals()]);
        }
        &mut self.frames[frame][s]
    }

    fn get(&self, frame: usize, s: SigId) -> Option<&Vec<Lit>> {
        self.frames.get(frame).and_then(|f| f[s].as_ref())
    }

    /// The dependencies of (frame, s) that are not yet encoded.
    fn missing_deps(&self, frame: usize, s: SigId, out: &mut Vec<(usize, SigId)>) {
        match self.design.driver(s) {
            Driver::Node(n) => {
                for &a in &self.design.nodes()[n].args {
                    if self.get(frame, a).is_none() {
                        out.push((frame, a));
                    }
                }
            }
            Driver::State(i) => {
                if frame > 0 {
                    let next = self.design.state()[i].next;
                    if self.get(frame - 1, next).is_none() {
                        out.push((frame - 1, next));
                    }
                }
            }
            Driver::Input(_) => {}
        }
    }

    fn encode_one(&mut self, frame: usize, s: SigId) -> Vec<Lit> {
        let d = self.design;
        let w = d.width(s);
        match d.driver(s) {
            Driver::Input(_) => self.cnf.fresh_bits(w),
            Driver::State(i) => {
                if frame > 0 {
                    self.get(frame - 1, d.state()[i].next).unwrap().clone()
                } else if self.free_init[i] {
                    self.cnf.fresh_bits(w)
                } else {
                    Cnf::const_bits(d.state()[i].init, w)
                }
            }
            Driver::Node(n) => {
                let node = &d.nodes()[n];
                let args: Vec<Vec<Lit>> = node
                    .args
                    .iter()
                    .map(|&a| self.get(frame, a).unwrap().clone())
                    .collect();
                let arg = |k: usize| args[k].clone();
                let c = &mut self.cnf;
                match node.kind {
                    OpKind::Const(v) => Cnf::const_bits(v, w),
                    OpKind::Not => arg(0).iter().map(|&l| !l).collect(),
                    OpKind::And => {
                        let (a, b) = (arg(0), arg(1));
                        a.iter().zip(&b).map(|(&x, &y)| c.and(x, y)).collect()
                    }
                    OpKind::Or => {
                        let (a, b) = (arg(0), arg(1));
                        a.iter().zip(&b).map(|(&x, &y)| c.or(x, y)).collect()
                    }
                    OpKind::Xor => {
                        let (a, b) = (arg(0), arg(1));
                        a.iter().zip(&b).map(|(&x, &y)| c.xor(x, y)).collect()
                    }
                    OpKind::Add => c.add_bits(&arg(0), &arg(1), FALSE).0,
                    OpKind::Sub => c.sub_bits(&arg(0), &arg(1)).0,
                    OpKind::Mul => c.mul_bits(&arg(0), &arg(1)),
                    OpKind::Eq => vec![c.eq_bits(&arg(0), &arg(1))],
                    OpKind::Ult => vec![c.ult_bits(&arg(0), &arg(1))],
                    OpKind::Mux => {
                        let sel = arg(0)[0];
                        c.mux_bits(sel, &arg(1), &arg(2))
                    }
                    OpKind::Slice { hi, lo } => arg(0)[lo as usize..=hi as usize].to_vec(),
                    OpKind::Concat => {
                        let mut v = arg(1);
                        v.extend(arg(0));
                        v
                    }
                }
            }
        }
    }

    /// Literals for every bit of signal `s` at `frame` (LSB first).
    pub fn bits(&mut self, frame: usize, s: SigId) -> Vec<Lit> {
        if let Some(b) = self.get(frame, s) {
            return b.clone();
        }
        let mut stack = vec![(frame, s)];
        let mut deps = Vec::new();
        while let Some(&(f, x)) = stack.last() {
            if self.get(f, x).is_some() {
                stack.pop();
                continue;
            }
            deps.clear();
            self.missing_deps(f, x, &mut deps);
            if deps.is_empty() {
                let v = self.encode_one(f, x);
                *self.slot(f, x) = Some(v);
                stack.pop();
            } else {
                stack.extend(deps.iter().copied());
            }
        }
        self.get(frame, s).unwrap().clone()
    }

    /// The single literal of a 1-bit signal.
    pub fn bit(&mut self, frame: usize, s: SigId) -> Lit {
        debug_assert_eq!(self.design.width(s), 1);
        self.bits(frame, s)[0]
    }

    /// Value of `s` at `frame` under a model; encodes the signal if needed.
    pub fn value(&mut self, model: &[bool], frame: usize, s: SigId) -> u64 {
        let b = self.bits(frame, s);
        bits_value(model, &b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pin {
    pub frame: usize,
    pub sig: SigId,
    pub value: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CnfError {
    #[error("cannot pin signal {0}: width {1} is not 1")]
    PinWidth(SigId, u32),
    #[error("pin at frame {0} is outside the {1} unrolled frames")]
    PinFrame(usize, usize),
    #[error("at least one frame is required")]
    NoFrames,
}

/// An eagerly unrolled design: clauses plus the literal map needed to read
/// signal values back out of a model.
#[derive(Debug, Clone)]
pub struct CnfFormula {
    pub num_vars: usize,
    pub clauses: Vec<Vec<Lit>>,
    pub map: BTreeMap<(usize, SigId), Vec<Lit>>,
}

impl CnfFormula {
    pub fn solve(&self) -> SatResult {
        crate::sat::solve_clauses(self.num_vars, &self.clauses)
    }

    pub fn value(&self, model: &[bool], frame: usize, s: SigId) -> u64 {
        bits_value(model, &self.map[&(frame, s)])
    }

    pub fn to_dimacs(&self) -> String {
        dimacs(self.num_vars, &self.clauses)
    }
}

/// Encodes frames `0..k` of `d` from its initial state, with single-bit pins.
pub fn unroll_to_cnf(d: &Design, k: usize, pins: &[Pin]) -> Result<CnfFormula, CnfError> {
    if k == 0 {
        return Err(CnfError::NoFrames);
    }
    for p in pins {
        if d.width(p.sig) != 1 {
            return Err(CnfError::PinWidth(p.sig, d.width(p.sig)));
        }
        if p.frame >= k {
            return Err(CnfError::PinFrame(p.frame, k));
        }
    }
    let mut u = Unroller::new(d);
    let mut map = BTreeMap::new();
    for f in 0..k {
        for s in 0..d.num_signals() {
            map.insert((f, s), u.bits(f, s));
        }
    }
    for p in pins {
        let l = u.bit(p.frame, p.sig);
        u.cnf.assert_lit(if p.value { l } else { !l });
    }
    Ok(CnfFormula {
        num_vars: u.cnf.num_vars(),
        clauses: u.cnf.clauses().to_vec(),
        map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hwir::DesignBuilder;
    use crate::sat::solve_clauses;

    fn toggler() -> (Design, SigId) {
        let mut b = DesignBuilder::new();
        let r = b.reg("t", 1, 0);
        let n = b.not(r);
        b.set_next(r, n);
        let d = b.build().unwrap();
        (d, r.id)
    }

    #[test]
    fn toggling_register_cannot_hold_init_after_one_cycle() {
        let (d, t) = toggler();
        let pin = |frame, value| Pin {
            frame,
            sig: t,
            value,
        };
        let f = unroll_to_cnf(&d, 3, &[pin(1, false)]).unwrap();
        assert_eq!(f.solve(), SatResult::Unsat);
        let f = unroll_to_cnf(&d, 3, &[pin(2, false)]).unwrap();
        assert!(f.solve().is_sat());
    }

    #[test]
    fn single_frame_is_satisfiable() {
        let (d, _) = toggler();
        assert!(unroll_to_cnf(&d, 1, &[]).unwrap().solve().is_sat());
    }

    #[test]
    fn counter_reaches_two() {
        let mut b = DesignBuilder::new();
        let r = b.reg("c", 4, 0);
        let one = b.konst(1, 4);
        let n = b.add(r, one);
        b.set_next(r, n);
        let is2 = b.eq_const(r, 2);
        let d = b.build().unwrap();
        let pin = Pin {
            frame: 2,
            sig: is2.id,
            value: true,
        };
        let f = unroll_to_cnf(&d, 3, &[pin]).unwrap();
        match f.solve() {
            SatResult::Sat(m) => assert_eq!(f.value(&m, 2, r.id), 2),
            SatResult::Unsat => panic!("counter must reach 2"),
        }
        let bad = Pin { frame: 1, ..pin };
        assert_eq!(unroll_to_cnf(&d, 3, &[bad]).unwrap().solve(), SatResult::Unsat);
        assert_eq!(
            unroll_to_cnf(&d, 3, &[Pin { sig: r.id, ..pin }]).unwrap_err(),
            CnfError::PinWidth(r.id, 4)
        );
    }

    #[test]
    fn gate_folding() {
        let mut c = Cnf::new();
        let x = c.fresh();
        assert_eq!(c.and(x, TRUE), x);
        assert_eq!(c.and(x, !x), FALSE);
        assert_eq!(c.xor(x, x), FALSE);
        assert_eq!(c.xor(x, TRUE), !x);
        let y = c.fresh();
        let g1 = c.xor(x, y);
        assert_eq!(c.xor(!x, y), !g1);
        assert_eq!(c.and(y, x), c.and(x, y));
    }

    #[test]
    fn arithmetic_matches_integers() {
        for (a, b) in [(0u64, 0u64), (3, 5), (15, 1), (7, 9), (12, 12), (1, 15)] {
            let mut c = Cnf::new();
            let ab = Cnf::const_bits(a, 4);
            let bb = Cnf::const_bits(b, 4);
            let m = [true];
            let (s, _) = c.add_bits(&ab, &bb, FALSE);
            assert_eq!(bits_value(&m, &s), (a + b) & 15);
            let (d, _) = c.sub_bits(&ab, &bb);
            assert_eq!(bits_value(&m, &d), a.wrapping_sub(b) & 15);
            assert_eq!(bits_value(&m, &c.mul_bits(&ab, &bb)), (a * b) & 15);
            assert_eq!(c.ult_bits(&ab, &bb) == TRUE, a < b);
            assert_eq!(c.eq_bits(&ab, &bb) == TRUE, a == b);
        }
    }

    #[test]
    fn symbolic_multiply_inverts() {
        // x * 3 == 9 over 4 bits has the unique solution x = 3.
        let mut c = Cnf::new();
        let x = c.fresh_bits(4);
        let p = c.mul_bits(&x, &Cnf::const_bits(3, 4));
        let e = c.eq_bits(&p, &Cnf::const_bits(9, 4));
        c.assert_lit(e);
        match solve_clauses(c.num_vars(), c.clauses()) {
            SatResult::Sat(m) => assert_eq!(bits_value(&m, &x), 3),
            SatResult::Unsat => panic!(),
        }
    }

    #[test]
    fn dimacs_header() {
        let (d, _) = toggler();
        let f = unroll_to_cnf(&d, 2, &[]).unwrap();
        assert!(f.to_dimacs().starts_with(&format!("p cnf {} ", f.num_vars)));
    }
}
