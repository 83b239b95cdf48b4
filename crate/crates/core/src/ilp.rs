//! The 0/1 program behind contract synthesis, and exact solvers for it.
//!
//! Variables: one `s_A` per template atom, one `fp_t` per attacker
//! indistinguishable test case and one `x_{A,B}` per xor-distinguishing pair.
//! Constraints force `x = s_A xor s_B`, cover every attacker-distinguishable
//! case, and raise `fp_t` whenever the contract distinguishes case `t`. The
//! objective `(|T|+1) * sum fp + sum s` ranks false positives first.
//!
//! Two exact solvers are provided. [`solve_bnb`] is a plain depth-first
//! branch and bound over the atom variables. [`solve_sat`] tightens bounds
//! with the CDCL solver and scales to templates with a hundred atoms or more.
//! Among optima both prefer atoms listed earlier in the template (the
//! lexicographically largest `s`), so they return the same solution.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contracts::{eval_contract, ContractAtom, ContractTemplate};
use crate::distinguish::DistRecord;
use crate::isa::RetirementRecord;
use crate::sat::{Lit, SolveStatus, Solver};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IlpError {
    #[error("test case {0} is attacker distinguishable but no contract in the template distinguishes it")]
    Inexpressible(usize),
    #[error("the coverage constraints cannot be satisfied together")]
    Infeasible,
    #[error("template has {0} atoms; brute force is limited to 20")]
    TooLarge(usize),
}

/// Coverage rule: the xor-aware characterization, or the distinguishing
/// atom sets alone (the earlier formulation without xor variables).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IlpVariant {
    Xor,
    Mohr,
}

/// Constraints contributed by one test case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseTerm {
    /// Corpus index.
    pub case: usize,
    pub d_t: bool,
    /// Atom indices whose inclusion alone distinguishes the case.
    pub atoms: Vec<usize>,
    /// Indices into [`IlpInstance::pairs`].
    pub pairs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IlpInstance {
    pub n_atoms: usize,
    pub atom_names: Vec<String>,
    pub variant: IlpVariant,
    /// Xor-distinguishing pairs with `a < b`.
    pub pairs: Vec<(usize, usize)>,
    /// Coverage terms of attacker-distinguishable cases.
    pub covers: Vec<CaseTerm>,
    /// False-positive terms, one per attacker-indistinguishable case.
    pub fps: Vec<CaseTerm>,
}

/// Variables of the linear form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Var {
    S(usize),
    Fp(usize),
    X(usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Constraint {
    pub terms: Vec<(i64, Var)>,
    /// `sum terms >= rhs`.
    pub rhs: i64,
}

impl IlpInstance {
    /// Weight of one false positive.
    pub fn fp_weight(&self) -> u64 {
        self.n_atoms as u64 + 1
    }

    /// The linear constraints, all in `>=` form.
    pub fn constraints(&self) -> Vec<Constraint> {
        let mut out = Vec::new();
        for (p, &(a, b)) in self.pairs.iter().enumerate() {
            let (x, sa, sb) = (Var::X(p), Var::S(a), Var::S(b));
            // x <= sa + sb ; x >= sa - sb ; x >= sb - sa ; x <= 2 - sa - sb
            out.push(Constraint {
                terms: vec![(1, sa), (1, sb), (-1, x)],
                rhs: 0,
            });
            out.push(Constraint {
                terms: vec![(1, x), (-1, sa), (1, sb)],
                rhs: 0,
            });
            out.push(Constraint {
                terms: vec![(1, x), (1, sa), (-1, sb)],
                rhs: 0,
            });
            out.push(Constraint {
                terms: vec![(-1, x), (-1, sa), (-1, sb)],
                rhs: -2,
            });
        }
        for c in &self.covers {
            let mut terms: Vec<(i64, Var)> = c.atoms.iter().map(|&a| (1, Var::S(a))).collect();
            terms.extend(c.pairs.iter().map(|&p| (1, Var::X(p))));
            out.push(Constraint { terms, rhs: 1 });
        }
        for (k, c) in self.fps.iter().enumerate() {
            for &a in &c.atoms {
                out.push(Constraint {
                    terms: vec![(1, Var::Fp(k)), (-1, Var::S(a))],
                    rhs: 0,
                });
            }
            for &p in &c.pairs {
                out.push(Constraint {
                    terms: vec![(1, Var::Fp(k)), (-1, Var::X(p))],
                    rhs: 0,
                });
            }
        }
        out
    }

    /// Whether the contract `s` distinguishes the case described by `c`.
    pub fn hits(&self, c: &CaseTerm, s: &[bool]) -> bool {
        c.atoms.iter().any(|&a| s[a])
            || c.pairs.iter().any(|&p| {
                let (a, b) = self.pairs[p];
                s[a] != s[b]
            })
    }

    /// Completes an atom assignment with the smallest consistent `fp` and
    /// the implied `x` values, or `None` if a coverage constraint fails.
    pub fn complete(&self, s: &[bool]) -> Option<IlpSolution> {
        if !self.covers.iter().all(|c| self.hits(c, s)) {
            return None;
        }
        let fp: Vec<bool> = self.fps.iter().map(|c| self.hits(c, s)).collect();
        let x: Vec<bool> = self.pairs.iter().map(|&(a, b)| s[a] != s[b]).collect();
        let fp_count = fp.iter().filter(|&&b| b).count();
        let atom_count = s.iter().filter(|&&b| b).count();
        Some(IlpSolution {
            s: s.to_vec(),
            x,
            fp,
            fp_count,
            atom_count,
            objective: self.fp_weight() * fp_count as u64 + atom_count as u64,
            optimal: false,
        })
    }

    /// Checks every linear constraint against a full assignment.
    pub fn satisfied_by(&self, sol: &IlpSolution) -> bool {
        let val = |v: Var| -> i64 {
            match v {
                Var::S(i) => sol.s[i] as i64,
                Var::Fp(i) => sol.fp[i] as i64,
                Var::X(i) => sol.x[i] as i64,
            }
        };
        self.constraints()
            .iter()
            .all(|c| c.terms.iter().map(|&(k, v)| k * val(v)).sum::<i64>() >= c.rhs)
    }

    /// LP-style text dump.
    pub fn to_lp(&self) -> String {
        let name = |v: Var| match v {
            Var::S(i) => format!("s{i}"),
            Var::Fp(i) => format!("fp{i}"),
            Var::X(i) => format!("x{i}"),
        };
        let mut out = String::new();
        for (i, n) in self.atom_names.iter().enumerate() {
            let _ = writeln!(out, "\\ s{i} = {n}");
        }
        for (p, (a, b)) in self.pairs.iter().enumerate() {
            let _ = writeln!(out, "\\ x{p} = s{a} xor s{b}");
        }
        let w = self.fp_weight();
        let mut obj: Vec<String> = (0..self.fps.len()).map(|k| format!("{w} fp{k}")).collect();
        obj.extend((0..self.n_atoms).map(|i| format!("s{i}")));
        let _ = writeln!(out, "min");
        let _ = writeln!(out, " obj: {}", if obj.is_empty() { "0".into() } else { obj.join(" + ") });
        let _ = writeln!(out, "st");
        for (i, c) in self.constraints().iter().enumerate() {
            let lhs: Vec<String> = c
                .terms
                .iter()
                .map(|&(k, v)| match k {
                    1 => format!("+ {}", name(v)),
                    -1 => format!("- {}", name(v)),
                    _ => format!("{k:+} {}", name(v)),
                })
                .collect();
            let _ = writeln!(out, " c{i}: {} >= {}", lhs.join(" "), c.rhs);
        }
        let _ = writeln!(out, "binary");
        let mut vars: Vec<String> = (0..self.n_atoms).map(|i| format!("s{i}")).collect();
        vars.extend((0..self.fps.len()).map(|k| format!("fp{k}")));
        vars.extend((0..self.pairs.len()).map(|p| format!("x{p}")));
        let _ = writeln!(out, " {}", vars.join(" "));
        let _ = writeln!(out, "end");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IlpSolution {
    pub s: Vec<bool>,
    pub x: Vec<bool>,
    pub fp: Vec<bool>,
    pub fp_count: usize,
    pub atom_count: usize,
    pub objective: u64,
    pub optimal: bool,
}

impl IlpSolution {
    /// Selected atom indices.
    pub fn atoms(&self) -> Vec<usize> {
        (0..self.s.len()).filter(|&i| self.s[i]).collect()
    }
}

/// Builds the program from characterized test cases (indexed like the
/// corpus).
pub fn build_ilp(
    records: &[DistRecord],
    tmpl: &ContractTemplate,
    variant: IlpVariant,
) -> Result<IlpInstance, IlpError> {
    let mut pair_idx: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    if variant == IlpVariant::Xor {
        for r in records {
            for &p in &r.xor {
                let n = pair_idx.len();
                pair_idx.entry(p).or_insert(n);
            }
        }
    }
    // Renumber pairs in sorted order so the instance does not depend on the
    // order in which pairs were first seen.
    for (i, v) in pair_idx.values_mut().enumerate() {
        *v = i;
    }
    let mut covers = Vec::new();
    let mut fps = Vec::new();
    for (case, r) in records.iter().enumerate() {
        let (atoms, pairs) = match variant {
            IlpVariant::Xor => (r.sd.clone(), r.xor.iter().map(|p| pair_idx[p]).collect()),
            IlpVariant::Mohr => (r.d.clone(), Vec::new()),
        };
        let term = CaseTerm {
            case,
            d_t: r.d_t,
            atoms,
            pairs,
        };
        if r.d_t {
            if term.atoms.is_empty() && term.pairs.is_empty() {
                return Err(IlpError::Inexpressible(case));
            }
            covers.push(term);
        } else {
            fps.push(term);
        }
    }
    Ok(IlpInstance {
        n_atoms: tmpl.len(),
        atom_names: tmpl.atoms.iter().map(|a| a.to_string()).collect(),
        variant,
        pairs: pair_idx.into_keys().collect(),
        covers,
        fps,
    })
}

/// Exact solution; uses branch and bound on small instances and the
/// SAT-based search otherwise.
pub fn solve_exact(inst: &IlpInstance) -> Result<IlpSolution, IlpError> {
    if inst.n_atoms <= 16 {
        solve_bnb(inst)
    } else {
        solve_sat(inst)
    }
}

/// Depth-first branch and bound over atoms in index order, trying 1 before
/// 0 and keeping only strictly better incumbents.
pub fn solve_bnb(inst: &IlpInstance) -> Result<IlpSolution, IlpError> {
    struct Search<'a> {
        inst: &'a IlpInstance,
        s: Vec<Option<bool>>,
        best: Option<IlpSolution>,
    }
    impl Search<'_> {
        fn pair_state(&self, p: usize) -> Option<bool> {
            let (a, b) = self.inst.pairs[p];
            Some(self.s[a]? != self.s[b]?)
        }
        /// Definitely distinguished under the partial assignment.
        fn surely_hit(&self, c: &CaseTerm) -> bool {
            c.atoms.iter().any(|&a| self.s[a] == Some(true))
                || c.pairs.iter().any(|&p| self.pair_state(p) == Some(true))
        }
        fn dead(&self, c: &CaseTerm) -> bool {
            c.atoms.iter().all(|&a| self.s[a] == Some(false))
                && c.pairs.iter().all(|&p| self.pair_state(p) == Some(false))
        }
        fn go(&mut self, depth: usize) {
            let inst = self.inst;
            if inst.covers.iter().any(|c| self.dead(c)) {
                return;
            }
            let fp_lb = inst.fps.iter().filter(|c| self.surely_hit(c)).count() as u64;
            let ones = self.s.iter().filter(|v| **v == Some(true)).count() as u64;
            let lb = fp_lb * inst.fp_weight() + ones;
            if let Some(b) = &self.best {
                if lb >= b.objective {
                    return;
                }
            }
            if depth == inst.n_atoms {
                let s: Vec<bool> = self.s.iter().map(|v| v.unwrap()).collect();
                self.best = inst.complete(&s);
                return;
            }
            for v in [true, false] {
                self.s[depth] = Some(v);
                self.go(depth + 1);
            }
            self.s[depth] = None;
        }
    }
    let mut search = Search {
        inst,
        s: vec![None; inst.n_atoms],
        best: None,
    };
    search.go(0);
    let mut sol = search.best.ok_or(IlpError::Infeasible)?;
    sol.optimal = true;
    Ok(sol)
}

/// Unary counter over `inputs`: `out[j]` is forced true whenever at least
/// `j + 1` inputs are true, for `j <= bound`.
fn totalizer(solver: &mut Solver, inputs: &[Lit], bound: usize) -> Vec<Lit> {
    if inputs.len() <= 1 {
        return inputs.to_vec();
    }
    let mid = inputs.len() / 2;
    let a = totalizer(solver, &inputs[..mid], bound);
    let b = totalizer(solver, &inputs[mid..], bound);
    let n = (a.len() + b.len()).min(bound + 1);
    let out: Vec<Lit> = (0..n).map(|_| Lit::pos(solver.new_var())).collect();
    for i in 0..=a.len() {
        for j in 0..=b.len() {
            let k = i + j;
            if k == 0 || k > n {
                continue;
            }
            let mut c = vec![out[k - 1]];
            if i > 0 {
                c.push(!a[i - 1]);
            }
            if j > 0 {
                c.push(!b[j - 1]);
            }
            solver.add_clause(&c);
        }
    }
    out
}

/// Minimizes the number of true literals among `inputs` under the current
/// clauses, given a model with `start` of them true. Returns the optimum
/// and leaves it enforced.
fn minimize_count(
    solver: &mut Solver,
    inputs: &[Lit],
    start: usize,
    count: impl Fn(&Solver) -> usize,
) -> usize {
    if start == 0 {
        for &l in inputs {
            solver.add_clause(&[!l]);
        }
        return 0;
    }
    let out = totalizer(solver, inputs, start);
    let (mut lo, mut hi) = (0usize, start);
    while lo < hi {
        let mid = (lo + hi) / 2;
        // At most `mid` true: the (mid+1)-th output must be false.
        match solver.solve_with_assumptions(&[!out[mid]]) {
            SolveStatus::Sat => hi = count(solver).min(mid),
            _ => lo = mid + 1,
        }
    }
    if hi < out.len() {
        solver.add_clause(&[!out[hi]]);
    }
    hi
}

/// Exact solution by bound tightening with the CDCL solver: minimize the
/// false-positive count, then the atom count, then fix atoms to 1 in index
/// order where possible.
pub fn solve_sat(inst: &IlpInstance) -> Result<IlpSolution, IlpError> {
    let mut solver = Solver::new();
    let s: Vec<Lit> = (0..inst.n_atoms).map(|_| Lit::pos(solver.new_var())).collect();
    let x: Vec<Lit> = inst
        .pairs
        .iter()
        .map(|&(a, b)| {
            let x = Lit::pos(solver.new_var());
            let (sa, sb) = (s[a], s[b]);
            solver.add_clause(&[!x, sa, sb]);
            solver.add_clause(&[!x, !sa, !sb]);
            solver.add_clause(&[x, !sa, sb]);
            solver.add_clause(&[x, sa, !sb]);
            x
        })
        .collect();
    let lits_of = |c: &CaseTerm| -> Vec<Lit> {
        c.atoms
            .iter()
            .map(|&a| s[a])
            .chain(c.pairs.iter().map(|&p| x[p]))
            .collect()
    };
    for c in &inst.covers {
        solver.add_clause(&lits_of(c));
    }
    // Identical false-positive terms share one variable; it is counted once
    // per case by repeating it in the counter inputs.
    let mut fp_vars: BTreeMap<Vec<Lit>, Lit> = BTreeMap::new();
    let mut fp_inputs = Vec::new();
    for c in &inst.fps {
        let mut lits = lits_of(c);
        if lits.is_empty() {
            continue;
        }
        lits.sort();
        let v = *fp_vars.entry(lits.clone()).or_insert_with(|| {
            let f = Lit::pos(solver.new_var());
            for &l in &lits {
                solver.add_clause(&[!l, f]);
            }
            f
        });
        fp_inputs.push(v);
    }
    if solver.solve() != SolveStatus::Sat {
        return Err(IlpError::Infeasible);
    }
    let assignment = |solver: &Solver| -> Vec<bool> { s.iter().map(|&l| solver.model_value(l)).collect() };
    let fp_of = |solver: &Solver| inst.complete(&assignment(solver)).map(|c| c.fp_count).unwrap();
    let start = fp_of(&solver);
    minimize_count(&mut solver, &fp_inputs, start, fp_of);
    let atoms_of = |solver: &Solver| assignment(solver).iter().filter(|&&b| b).count();
    if solver.solve() != SolveStatus::Sat {
        unreachable!("optimum was witnessed");
    }
    let start = atoms_of(&solver);
    minimize_count(&mut solver, &s, start, atoms_of);
    for &l in &s {
        let v = match solver.solve_with_assumptions(&[l]) {
            SolveStatus::Sat => l,
            _ => !l,
        };
        solver.add_clause(&[v]);
    }
    assert_eq!(solver.solve(), SolveStatus::Sat);
    let mut sol = inst.complete(&assignment(&solver)).expect("coverage holds");
    sol.optimal = true;
    Ok(sol)
}

/// Exhaustive search over subsets of a small template, judging contract
/// distinguishability by comparing contract traces directly. Returns
/// `(fp count, atom count)` of the optimum, or `None` if no subset
/// distinguishes every attacker-distinguishable case.
pub fn brute_force_optimum(
    traces: &[(Vec<RetirementRecord>, Vec<RetirementRecord>)],
    d_t: &[bool],
    tmpl: &ContractTemplate,
) -> Result<Option<(usize, usize)>, IlpError> {
    let n = tmpl.len();
    if n > 20 {
        return Err(IlpError::TooLarge(n));
    }
    let mut best: Option<(usize, usize)> = None;
    for mask in 0u32..(1 << n) {
        let atoms: Vec<ContractAtom> = (0..n)
            .filter(|&i| mask >> i & 1 == 1)
            .map(|i| tmpl.atoms[i].clone())
            .collect();
        let mut fp = 0;
        let mut ok = true;
        for ((l, r), &d) in traces.iter().zip(d_t) {
            let dist = eval_contract(&atoms, l) != eval_contract(&atoms, r);
            if d && !dist {
                ok = false;
                break;
            }
            if !d && dist {
                fp += 1;
            }
        }
        if ok {
            let cand = (fp, atoms.len());
            if best.map_or(true, |b| cand < b) {
                best = Some(cand);
            }
        }
    }
    Ok(best)
}
