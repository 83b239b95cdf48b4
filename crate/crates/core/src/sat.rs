//! A deterministic CDCL SAT solver in the MiniSat mould: two watched literals
//! with blockers, first-UIP learning with local minimization, a VSIDS heap,
//! phase saving, Luby restarts and LBD-guided learnt-clause deletion.
//! Supports incremental clause addition and solving under assumptions.

use std::fmt;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Lit(u32);

impl Lit {
    pub const fn new(var: u32, negated: bool) -> Lit {
        Lit(var << 1 | negated as u32)
    }
    pub const fn pos(var: u32) -> Lit {
        Lit::new(var, false)
    }
    pub const fn var(self) -> u32 {
        self.0 >> 1
    }
    pub const fn is_neg(self) -> bool {
        self.0 & 1 == 1
    }
    pub fn code(self) -> usize {
        self.0 as usize
    }
    /// DIMACS literal (variables are 1-based there).
    pub fn to_dimacs(self) -> i64 {
        let v = self.var() as i64 + 1;
        if self.is_neg() {
            -v
        } else {
            v
        }
    }
    pub fn from_dimacs(d: i64) -> Lit {
        assert!(d != 0);
        Lit::new((d.unsigned_abs() - 1) as u32, d < 0)
    }
}

impl std::ops::Not for Lit {
    type Output = Lit;
    fn not(self) -> Lit {
        Lit(self.0 ^ 1)
    }
}

impl fmt::Debug for Lit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_dimacs())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SatResult {
    /// Model indexed by variable.
    Sat(Vec<bool>),
    Unsat,
}

impl SatResult {
    pub fn is_sat(&self) -> bool {
        matches!(self, SatResult::Sat(_))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Sat,
    Unsat,
    /// The conflict budget ran out.
    Unknown,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
enum LBool {
    True,
    False,
    Undef,
}

type CRef = u32;

struct Clause {
    lits: Vec<Lit>,
    learnt: bool,
    lbd: u32,
    activity: f64,
    deleted: bool,
}

#[derive(Clone, Copy)]
struct Watcher {
    cref: CRef,
    blocker: Lit,
}

#[derive(Default)]
struct VarHeap {
    heap: Vec<u32>,
    index: Vec<i32>,
}

impl VarHeap {
    fn grow(&mut self, n: usize) {
        self.index.resize(n, -1);
    }
    fn contains(&self, v: u32) -> bool {
        self.index[v as usize] >= 0
    }
    fn better(act: &[f64], a: u32, b: u32) -> bool {
        let (x, y) = (act[a as usize], act[b as usize]);
        x > y || (x == y && a < b)
    }
    fn up(&mut self, mut i: usize, act: &[f64]) {
        let v = self.heap[i];
        while i > 0 {
            let p = (i - 1) / 2;
            if !Self::better(act, v, self.heap[p]) {
                break;
            }
            self.heap[i] = self.heap[p];
            self.index[self.heap[i] as usize] = i as i32;
            i = p;
        }
        self.heap[i] = v;
        self.index[v as usize] = i as i32;
    }
    fn down(&mut self, mut i: usize, act: &[f64]) {
        let v = self.heap[i];
        let n = self.heap.len();
        loop {
            let l = 2 * i + 1;
            if l >= n {
                break;
            }
            let r = l + 1;
            let c = if r < n && Self::better(act, self.heap[r], self.heap[l]) {
                r
            } else {
                l
            };
            if !Self::better(act, self.heap[c], v) {
                break;
            }
            self.heap[i] = self.heap[c];
            self.index[self.heap[i] as usize] = i as i32;
            i = c;
        }
        self.heap[i] = v;
        self.index[v as usize] = i as i32;
    }
    fn insert(&mut self, v: u32, act: &[f64]) {
        if self.contains(v) {
            return;
        }
        self.heap.push(v);
        let i = self.heap.len() - 1;
        self.index[v as usize] = i as i32;
        self.up(i, act);
    }
    fn bumped(&mut self, v: u32, act: &[f64]) {
        if self.contains(v) {
            self.up(self.index[v as usize] as usize, act);
        }
    }
    fn pop(&mut self, act: &[f64]) -> Option<u32> {
        let top = *self.heap.first()?;
        let last = self.heap.pop().unwrap();
        self.index[top as usize] = -1;
        if !self.heap.is_empty() {
            self.heap[0] = last;
            self.index[last as usize] = 0;
            self.down(0, act);
        }
        Some(top)
    }
}

fn luby(y: f64, mut x: u64) -> f64 {
    let mut size = 1u64;
    let mut seq = 0u32;
    while size < x + 1 {
        seq += 1;
        size = 2 * size + 1;
    }
    while size - 1 != x {
        size = (size - 1) >> 1;
        seq -= 1;
        x %= size;
    }
    y.powi(seq as i32)
}

pub struct Solver {
    clauses: Vec<Clause>,
    watches: Vec<Vec<Watcher>>,
    assigns: Vec<LBool>,
    level: Vec<u32>,
    reason: Vec<Option<CRef>>,
    trail: Vec<Lit>,
    trail_lim: Vec<usize>,
    qhead: usize,
    activity: Vec<f64>,
    var_inc: f64,
    cla_inc: f64,
    heap: VarHeap,
    polarity: Vec<bool>,
    seen: Vec<bool>,
    ok: bool,
    model: Vec<bool>,
    num_learnts: usize,
    max_learnts: f64,
    conflict_budget: Option<u64>,
    pub stats: SolverStats,
}

#[derive(Debug, Clone, Default)]
pub struct SolverStats {
    pub conflicts: u64,
    pub decisions: u64,
    pub propagations: u64,
    pub restarts: u64,
}

impl Default for Solver {
    fn default() -> Self {
        Self::new()
    }
}

impl Solver {
    pub fn new() -> Self {
        Solver {
            clauses: Vec::new(),
            watches: Vec::new(),
            assigns: Vec::new(),
            level: Vec::new(),
            reason: Vec::new(),
            trail: Vec::new(),
            trail_lim: Vec::new(),
            qhead: 0,
            activity: Vec::new(),
            var_inc: 1.0,
            cla_inc: 1.0,
            heap: VarHeap::default(),
            polarity: Vec::new(),
            seen: Vec::new(),
            ok: true,
            model: Vec::new(),
            num_learnts: 0,
            max_learnts: 0.0,
            conflict_budget: None,
            stats: SolverStats::default(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.assigns.len()
    }

    pub fn new_var(&mut self) -> u32 {
        let v = self.assigns.len() as u32;
        self.assigns.push(LBool::Undef);
        self.level.push(0);
        self.reason.push(None);
        self.activity.push(0.0);
        self.polarity.push(true);
        self.seen.push(false);
        self.watches.push(Vec::new());
        self.watches.push(Vec::new());
        self.heap.grow(self.assigns.len());
        self.heap.insert(v, &self.activity);
        v
    }

    pub fn ensure_vars(&mut self, n: usize) {
        while self.assigns.len() < n {
            self.new_var();
        }
    }

    /// Limits the number of conflicts per `solve*` call; `None` is unlimited.
    pub fn set_conflict_budget(&mut self, budget: Option<u64>) {
        self.conflict_budget = budget;
    }

    pub fn is_ok(&self) -> bool {
        self.ok
    }

    fn value(&self, l: Lit) -> LBool {
        match self.assigns[l.var() as usize] {
            LBool::Undef => LBool::Undef,
            LBool::True => {
                if l.is_neg() {
                    LBool::False
                } else {
                    LBool::True
                }
            }
            LBool::False => {
                if l.is_neg() {
                    LBool::True
                } else {
                    LBool::False
                }
            }
        }
    }

    fn decision_level(&self) -> u32 {
        self.trail_lim.len() as u32
    }

    /// Adds a clause. Must be called between solves (the solver sits at level 0
    /// then). Returns false once the clause set is known to be unsatisfiable.
    pub fn add_clause(&mut self, lits: &[Lit]) -> bool {
        debug_assert_eq!(self.decision_level(), 0);
        if !self.ok {
            return false;
        }
        let max_var = lits.iter().map(|l| l.var() as usize + 1).max().unwrap_or(0);
        self.ensure_vars(max_var);
        let mut c: Vec<Lit> = lits.to_vec();
        c.sort();
        c.dedup();
        let mut out = Vec::with_capacity(c.len());
        for (i, &l) in c.iter().enumerate() {
            if i + 1 < c.len() && c[i + 1] == !l {
                return true;
            }
            match self.value(l) {
                LBool::True => return true,
                LBool::False => {}
                LBool::Undef => out.push(l),
            }
        }
        match out.len() {
            0 => {
                self.ok = false;
                false
            }
            1 => {
                self.enqueue(out[0], None);
                if self.propagate().is_some() {
                    self.ok = false;
                }
                self.ok
            }
            _ => {
                self.attach(out, false, 0);
                true
            }
        }
    }

    fn attach(&mut self, lits: Vec<Lit>, learnt: bool, lbd: u32) -> CRef {
        let cref = self.clauses.len() as CRef;
        self.watches[lits[0].code()].push(Watcher {
            cref,
            blocker: lits[1],
        });
        self.watches[lits[1].code()].push(Watcher {
            cref,
            blocker: lits[0],
        });
        if learnt {
            self.num_learnts += 1;
        }
        self.clauses.push(Clause {
            lits,
            learnt,
            lbd,
            activity: 0.0,
            deleted: false,
        });
        cref
    }

    fn enqueue(&mut self, l: Lit, reason: Option<CRef>) {
        let v = l.var() as usize;
        debug_assert_eq!(self.assigns[v], LBool::Undef);
        self.assigns[v] = if l.is_neg() {
            LBool::False
        } else {
            LBool::True
        };
        self.level[v] = self.decision_level();
        self.reason[v] = reason;
        self.trail.push(l);
    }

    /// Unit propagation. Returns a conflicting clause, if any.
    fn propagate(&mut self) -> Option<CRef> {
        while self.qhead < self.trail.len() {
            let p = self.trail[self.qhead];
            self.qhead += 1;
            self.stats.propagations += 1;
            let false_lit = !p;
            let mut ws = std::mem::take(&mut self.watches[false_lit.code()]);
            let mut i = 0;
            let mut j = 0;
            let mut conflict = None;
            while i < ws.len() {
                let w = ws[i];
                i += 1;
                if self.value(w.blocker) == LBool::True {
                    ws[j] = w;
                    j += 1;
                    continue;
                }
                let cref = w.cref as usize;
                if self.clauses[cref].deleted {
                    continue;
                }
                {
                    let lits = &mut self.clauses[cref].lits;
                    if lits[0] == false_lit {
                        lits.swap(0, 1);
                    }
                }
                let first = self.clauses[cref].lits[0];
                let nw = Watcher {
                    cref: w.cref,
                    blocker: first,
                };
                if first != w.blocker && self.value(first) == LBool::True {
                    ws[j] = nw;
                    j += 1;
                    continue;
                }
                let len = self.clauses[cref].lits.len();
                let mut moved = false;
                for k in 2..len {
                    let lk = self.clauses[cref].lits[k];
                    if self.value(lk) != LBool::False {
                        self.clauses[cref].lits.swap(1, k);
                        self.watches[lk.code()].push(nw);
                        moved = true;
                        break;
                    }
                }
                if moved {
                    continue;
                }
                ws[j] = nw;
                j += 1;
                if self.value(first) == LBool::False {
                    conflict = Some(w.cref);
                    self.qhead = self.trail.len();
                    while i < ws.len() {
                        ws[j] = ws[i];
                        j += 1;
                        i += 1;
                    }
                } else {
                    self.enqueue(first, Some(w.cref));
                }
            }
            ws.truncate(j);
            // New watches only ever go to non-false literals, so nothing was
            // pushed onto this list while it was taken.
            debug_assert!(self.watches[false_lit.code()].is_empty());
            self.watches[false_lit.code()] = ws;
            if conflict.is_some() {
                return conflict;
            }
        }
        None
    }

    fn bump_var(&mut self, v: u32) {
        let a = &mut self.activity[v as usize];
        *a += self.var_inc;
        if *a > 1e100 {
            for x in self.activity.iter_mut() {
                *x *= 1e-100;
            }
            self.var_inc *= 1e-100;
        }
        self.heap.bumped(v, &self.activity);
    }

    fn bump_clause(&mut self, c: CRef) {
        let cl = &mut self.clauses[c as usize];
        if !cl.learnt {
            return;
        }
        cl.activity += self.cla_inc;
        if cl.activity > 1e20 {
            for cl in self.clauses.iter_mut().filter(|c| c.learnt) {
                cl.activity *= 1e-20;
            }
            self.cla_inc *= 1e-20;
        }
    }

    fn analyze(&mut self, mut confl: CRef) -> (Vec<Lit>, u32) {
        let mut learnt = vec![Lit(0)];
        let mut path = 0;
        let mut p: Option<Lit> = None;
        let mut idx = self.trail.len();
        let dl = self.decision_level();
        loop {
            self.bump_clause(confl);
            let lits = self.clauses[confl as usize].lits.clone();
            let start = if p.is_some() { 1 } else { 0 };
            for &q in &lits[start..] {
                let v = q.var() as usize;
                if !self.seen[v] && self.level[v] > 0 {
                    self.bump_var(q.var());
                    self.seen[v] = true;
                    if self.level[v] >= dl {
                        path += 1;
                    } else {
                        learnt.push(q);
                    }
                }
            }
            loop {
                idx -= 1;
                if self.seen[self.trail[idx].var() as usize] {
                    break;
                }
            }
            let pl = self.trail[idx];
            p = Some(pl);
            self.seen[pl.var() as usize] = false;
            path -= 1;
            if path == 0 {
                break;
            }
            confl = self.reason[pl.var() as usize].expect("implied literal has a reason");
        }
        learnt[0] = !p.unwrap();

        // Local minimization: drop literals implied by others in the clause.
        let mut keep = vec![learnt[0]];
        for &q in &learnt[1..] {
            let redundant = match self.reason[q.var() as usize] {
                None => false,
                Some(r) => self.clauses[r as usize].lits[1..].iter().all(|l| {
                    let v = l.var() as usize;
                    self.seen[v] || self.level[v] == 0
                }),
            };
            if !redundant {
                keep.push(q);
            }
        }
        for &q in &learnt {
            self.seen[q.var() as usize] = false;
        }
        let mut learnt = keep;

        let bt = if learnt.len() == 1 {
            0
        } else {
            let mut max_i = 1;
            for i in 2..learnt.len() {
                if self.level[learnt[i].var() as usize] > self.level[learnt[max_i].var() as usize] {
                    max_i = i;
                }
            }
            learnt.swap(1, max_i);
            self.level[learnt[1].var() as usize]
        };
        (learnt, bt)
    }

    fn lbd(&mut self, lits: &[Lit]) -> u32 {
        let mut levels: Vec<u32> = lits.iter().map(|l| self.level[l.var() as usize]).collect();
        levels.sort_unstable();
        levels.dedup();
        levels.len() as u32
    }

    fn cancel_until(&mut self, lvl: u32) {
        if self.decision_level() <= lvl {
            return;
        }
        let lim = self.trail_lim[lvl as usize];
        for i in (lim..self.trail.len()).rev() {
            let l = self.trail[i];
            let v = l.var() as usize;
            self.assigns[v] = LBool::Undef;
            self.reason[v] = None;
            self.polarity[v] = l.is_neg();
            self.heap.insert(l.var(), &self.activity);
        }
        self.trail.truncate(lim);
        self.trail_lim.truncate(lvl as usize);
        self.qhead = lim;
    }

    fn pick_branch(&mut self) -> Option<Lit> {
        while let Some(v) = self.heap.pop(&self.activity) {
            if self.assigns[v as usize] == LBool::Undef {
                return Some(Lit::new(v, self.polarity[v as usize]));
            }
        }
        None
    }

    fn locked(&self, cref: usize) -> bool {
        let l0 = self.clauses[cref].lits[0];
        self.reason[l0.var() as usize] == Some(cref as CRef) && self.value(l0) == LBool::True
    }

    fn reduce_db(&mut self) {
        let mut cands: Vec<usize> = (0..self.clauses.len())
            .filter(|&i| {
                let c = &self.clauses[i];
                c.learnt && !c.deleted && c.lbd > 2 && c.lits.len() > 2
            })
            .collect();
        cands.sort_by(|&a, &b| {
            let (x, y) = (&self.clauses[a], &self.clauses[b]);
            y.lbd
                .cmp(&x.lbd)
                .then(x.activity.partial_cmp(&y.activity).unwrap())
                .then(a.cmp(&b))
        });
        let n = cands.len() / 2;
        for &i in &cands[..n] {
            if !self.locked(i) {
                self.clauses[i].deleted = true;
                self.num_learnts -= 1;
            }
        }
        self.compact();
    }

    /// Drops deleted clauses from the arena and rebuilds the watch lists.
    fn compact(&mut self) {
        let mut remap = vec![u32::MAX; self.clauses.len()];
        let old = std::mem::take(&mut self.clauses);
        for (i, c) in old.into_iter().enumerate() {
            if !c.deleted {
                remap[i] = self.clauses.len() as u32;
                self.clauses.push(c);
            }
        }
        for r in self.reason.iter_mut() {
            if let Some(c) = r {
                *c = remap[*c as usize];
                debug_assert!(*c != u32::MAX);
            }
        }
        for w in self.watches.iter_mut() {
            w.clear();
        }
        for (i, c) in self.clauses.iter().enumerate() {
            self.watches[c.lits[0].code()].push(Watcher {
                cref: i as CRef,
                blocker: c.lits[1],
            });
            self.watches[c.lits[1].code()].push(Watcher {
                cref: i as CRef,
                blocker: c.lits[0],
            });
        }
    }

    pub fn solve(&mut self) -> SolveStatus {
        self.solve_with_assumptions(&[])
    }

    pub fn solve_with_assumptions(&mut self, assumptions: &[Lit]) -> SolveStatus {
        if !self.ok {
            return SolveStatus::Unsat;
        }
        let max_var = assumptions
            .iter()
            .map(|l| l.var() as usize + 1)
            .max()
            .unwrap_or(0);
        self.ensure_vars(max_var);
        let n_orig = self.clauses.iter().filter(|c| !c.learnt).count();
        if self.max_learnts == 0.0 {
            self.max_learnts = (n_orig as f64 / 3.0).max(2000.0);
        }
        let start_conflicts = self.stats.conflicts;
        let mut curr_restarts = 0u64;
        let status = loop {
            let budget = (luby(2.0, curr_restarts) * 100.0) as u64;
            match self.search(budget, assumptions, start_conflicts) {
                Some(s) => break s,
                None => {
                    curr_restarts += 1;
                    self.stats.restarts += 1;
                }
            }
        };
        if status == SolveStatus::Sat {
            self.model = self.assigns.iter().map(|a| *a == LBool::True).collect();
        }
        self.cancel_until(0);
        status
    }

    /// Returns `None` when the restart budget is used up.
    fn search(
        &mut self,
        nof_conflicts: u64,
        assumptions: &[Lit],
        start_conflicts: u64,
    ) -> Option<SolveStatus> {
        let mut conflicts = 0u64;
        loop {
            if let Some(confl) = self.propagate() {
                self.stats.conflicts += 1;
                conflicts += 1;
                if self.decision_level() == 0 {
                    self.ok = false;
                    return Some(SolveStatus::Unsat);
                }
                let (learnt, bt) = self.analyze(confl);
                self.cancel_until(bt);
                if learnt.len() == 1 {
                    self.enqueue(learnt[0], None);
                } else {
                    let lbd = self.lbd(&learnt);
                    let first = learnt[0];
                    let cref = self.attach(learnt, true, lbd);
                    self.bump_clause(cref);
                    self.enqueue(first, Some(cref));
                }
                self.var_inc /= 0.95;
                self.cla_inc /= 0.999;
            } else {
                if let Some(b) = self.conflict_budget {
                    if self.stats.conflicts - start_conflicts >= b {
                        self.cancel_until(0);
                        return Some(SolveStatus::Unknown);
                    }
                }
                if conflicts >= nof_conflicts {
                    self.cancel_until(0);
                    return None;
                }
                if self.num_learnts as f64 >= self.max_learnts + self.trail.len() as f64 {
                    self.reduce_db();
                    self.max_learnts *= 1.1;
                }
                let mut next = None;
                while (self.decision_level() as usize) < assumptions.len() {
                    let p = assumptions[self.decision_level() as usize];
                    match self.value(p) {
                        LBool::True => self.trail_lim.push(self.trail.len()),
                        LBool::False => {
                            self.cancel_until(0);
                            return Some(SolveStatus::Unsat);
                        }
                        LBool::Undef => {
                            next = Some(p);
                            break;
                        }
                    }
                }
                let lit = match next {
                    Some(l) => l,
                    None => match self.pick_branch() {
                        Some(l) => {
                            self.stats.decisions += 1;
                            l
                        }
                        None => return Some(SolveStatus::Sat),
                    },
                };
                self.trail_lim.push(self.trail.len());
                self.enqueue(lit, None);
            }
        }
    }

    /// Value of a variable in the last satisfying assignment.
    pub fn model_value(&self, l: Lit) -> bool {
        let v = self.model.get(l.var() as usize).copied().unwrap_or(false);
        v != l.is_neg()
    }

    pub fn model(&self) -> &[bool] {
        &self.model
    }
}

/// Solves a clause list over `num_vars` variables from scratch.
pub fn solve_clauses(num_vars: usize, clauses: &[Vec<Lit>]) -> SatResult {
    let mut s = Solver::new();
    s.ensure_vars(num_vars);
    for c in clauses {
        if !s.add_clause(c) {
            return SatResult::Unsat;
        }
    }
    match s.solve() {
        SolveStatus::Sat => SatResult::Sat(s.model().to_vec()),
        SolveStatus::Unsat => SatResult::Unsat,
        SolveStatus::Unknown => unreachable!("no budget set"),
    }
}

pub fn model_satisfies(model: &[bool], clauses: &[Vec<Lit>]) -> bool {
    clauses
        .iter()
        .all(|c| c.iter().any(|l| model[l.var() as usize] != l.is_neg()))
}

/// Pigeonhole principle PHP(p, h): p pigeons into h holes. Unsatisfiable iff p > h.
pub fn pigeonhole(pigeons: u32, holes: u32) -> (usize, Vec<Vec<Lit>>) {
    let var = |p: u32, h: u32| Lit::pos(p * holes + h);
    let mut cls = Vec::new();
    for p in 0..pigeons {
        cls.push((0..holes).map(|h| var(p, h)).collect());
    }
    for h in 0..holes {
        for p in 0..pigeons {
            for q in p + 1..pigeons {
                cls.push(vec![!var(p, h), !var(q, h)]);
            }
        }
    }
    ((pigeons * holes) as usize, cls)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute(n: usize, cls: &[Vec<Lit>]) -> bool {
        (0u32..1 << n).any(|m| {
            let model: Vec<bool> = (0..n).map(|i| m >> i & 1 == 1).collect();
            model_satisfies(&model, cls)
        })
    }

    #[test]
    fn trivial_cases() {
        let x = Lit::pos(0);
        assert_eq!(solve_clauses(1, &[vec![x], vec![!x]]), SatResult::Unsat);
        let y = Lit::pos(1);
        match solve_clauses(2, &[vec![x, y]]) {
            SatResult::Sat(m) => assert!(model_satisfies(&m, &[vec![x, y]])),
            SatResult::Unsat => panic!(),
        }
        assert!(solve_clauses(0, &[]).is_sat());
    }

    #[test]
    fn pigeonhole_unsat() {
        let (n, c) = pigeonhole(4, 3);
        assert_eq!(solve_clauses(n, &c), SatResult::Unsat);
        let (n, c) = pigeonhole(3, 3);
        assert!(solve_clauses(n, &c).is_sat());
    }

    #[test]
    fn random_against_truth_table() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let n = rng.gen_range(1..=10);
            let m = rng.gen_range(1..=45);
            let cls: Vec<Vec<Lit>> = (0..m)
                .map(|_| {
                    let len = rng.gen_range(1..=3);
                    (0..len)
                        .map(|_| Lit::new(rng.gen_range(0..n as u32), rng.gen()))
                        .collect()
                })
                .collect();
            let r = solve_clauses(n, &cls);
            assert_eq!(r.is_sat(), brute(n, &cls));
            if let SatResult::Sat(m) = r {
                assert!(model_satisfies(&m, &cls));
            }
        }
    }

    #[test]
    fn assumptions_are_temporary() {
        let mut s = Solver::new();
        let (a, b) = (Lit::pos(0), Lit::pos(1));
        s.add_clause(&[a, b]);
        assert_eq!(s.solve_with_assumptions(&[!a, !b]), SolveStatus::Unsat);
        assert_eq!(s.solve_with_assumptions(&[!a]), SolveStatus::Sat);
        assert!(s.model_value(b));
        assert_eq!(s.solve(), SolveStatus::Sat);
        s.add_clause(&[!b]);
        assert_eq!(s.solve_with_assumptions(&[!a]), SolveStatus::Unsat);
        assert_eq!(s.solve(), SolveStatus::Sat);
        assert!(s.model_value(a));
    }

    #[test]
    fn budget_reports_unknown() {
        let (n, c) = pigeonhole(8, 7);
        let mut s = Solver::new();
        s.ensure_vars(n);
        for cl in &c {
            s.add_clause(cl);
        }
        s.set_conflict_budget(Some(10));
        assert_eq!(s.solve(), SolveStatus::Unknown);
    }

    #[test]
    fn luby_sequence() {
        let seq: Vec<u32> = (0..9).map(|i| luby(2.0, i) as u32).collect();
        assert_eq!(seq, [1, 1, 2, 1, 1, 2, 4, 1, 1]);
    }
}
