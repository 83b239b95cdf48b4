//! Contract equivalence as a circuit and the bounded-satisfaction monitor.

use std::collections::BTreeMap;

use super::expr::{build_all, PredicateError, StatePredicate};
use super::product::{CopyView, ProductDesign};
use super::BmcConfig;
use crate::contracts::{ContractAtom, LeakExpr};
use crate::hwir::{Design, DesignBuilder, DesignError, Sig, SigId};

#[derive(Debug, thiserror::Error)]
pub enum PropertyError {
    #[error(transparent)]
    Predicate(#[from] PredicateError),
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error("invalid bounds: {0}")]
    Bounds(String),
}

fn bits_for(v: u64) -> u32 {
    (64 - v.leading_zeros()).max(1)
}

/// Builds a leakage expression over one copy's record signals.
pub fn build_leak_expr(b: &mut DesignBuilder, copy: &CopyView, e: &LeakExpr) -> Sig {
    match e {
        LeakExpr::Field(f) => b.sig(copy.obs.field(f.record_name())),
        LeakExpr::Const(k) => b.konst(*k, bits_for(*k)),
        LeakExpr::Eq(x, y) | LeakExpr::Ne(x, y) => {
            let x = build_leak_expr(b, copy, x);
            let y = build_leak_expr(b, copy, y);
            let w = x.width.max(y.width);
            let x = b.resize(x, w);
            let y = b.resize(y, w);
            if matches!(e, LeakExpr::Eq(..)) {
                b.eq(x, y)
            } else {
                b.ne(x, y)
            }
        }
        LeakExpr::LowBits(x, n) => {
            let x = build_leak_expr(b, copy, x);
            if *n == 0 {
                b.zero(1)
            } else if *n >= x.width {
                x
            } else {
                b.slice(x, n - 1, 0)
            }
        }
        LeakExpr::Log2(x) => {
            let x = build_leak_expr(b, copy, x);
            let w = bits_for(x.width as u64);
            let mut acc = b.zero(w);
            for i in 1..x.width {
                let bit = b.bit(x, i);
                let k = b.konst(i as u64, w);
                acc = b.mux(bit, k, acc);
            }
            acc
        }
        LeakExpr::One => b.one(),
    }
}

/// `ctr_equiv`: if both copies retire, then for every leakage id of the
/// contract, either no atom with that id applies on either side, or atoms
/// apply on both sides and the values agree.
pub fn build_ctr_equiv(b: &mut DesignBuilder, p: &ProductDesign, atoms: &[ContractAtom]) -> Sig {
    let mut groups: BTreeMap<&str, Vec<&ContractAtom>> = BTreeMap::new();
    for a in atoms {
        groups.entry(a.id()).or_default().push(a);
    }
    let mut same = Vec::new();
    for group in groups.values() {
        let mut per_side = Vec::new();
        for copy in p.copies() {
            let opcode = b.sig(copy.obs.field("opcode"));
            let mut hits = Vec::new();
            for a in group {
                for op in &a.class {
                    hits.push(b.eq_const(opcode, op.ordinal() as u64));
                }
            }
            let applies = b.or_all(&hits);
            let value = build_leak_expr(b, copy, &group[0].leak.expr);
            per_side.push((applies, value));
        }
        let (al, vl) = per_side[0];
        let (ar, vr) = per_side[1];
        let app_eq = b.eq(al, ar);
        let val_eq = b.eq(vl, vr);
        let neither = b.not(al);
        let ok_val = b.or(neither, val_eq);
        same.push(b.and(app_eq, ok_val));
    }
    let all = b.and_all(&same);
    let rl = b.sig(p.left.obs.retire);
    let rr = b.sig(p.right.obs.retire);
    let both = b.and(rl, rr);
    b.implies(both, all)
}

/// Product plus contract-equivalence and state-invariant signals, without
/// the bounded monitor (Houdini works on this).
#[derive(Debug, Clone)]
pub struct Relational {
    pub design: Design,
    pub ctr_equiv: SigId,
    pub invariant: SigId,
    pub atk_equiv: SigId,
}

pub(crate) fn relational_builder(
    p: &ProductDesign,
    atoms: &[ContractAtom],
    invariant: &[StatePredicate],
) -> Result<(DesignBuilder, Sig, Sig, Sig), PropertyError> {
    let mut b = p.design.extend();
    let ctr = build_ctr_equiv(&mut b, p, atoms);
    let ctr = b.name(ctr, "prop.ctr_equiv");
    let inv = build_all(&mut b, p, invariant)?;
    let inv = b.name(inv, "prop.state_invariant");
    let al = b.sig(p.left.obs.atk_obs);
    let ar = b.sig(p.right.obs.atk_obs);
    let atk = b.eq(al, ar);
    let atk = b.name(atk, "prop.atk_equiv");
    Ok((b, ctr, inv, atk))
}

pub fn build_relational(
    p: &ProductDesign,
    atoms: &[ContractAtom],
    invariant: &[StatePredicate],
) -> Result<Relational, PropertyError> {
    let (b, ctr, inv, atk) = relational_builder(p, atoms, invariant)?;
    Ok(Relational {
        design: b.build()?,
        ctr_equiv: ctr.id,
        invariant: inv.id,
        atk_equiv: atk.id,
    })
}

/// The product with the monitor registers and the per-frame assumption and
/// assertion signals.
#[derive(Debug, Clone)]
pub struct PropertyDesign {
    pub design: Design,
    /// `(instr_counter == 0 || ctr_equiv) && state_invariant`.
    pub assume: SigId,
    /// `instr_counter != 0 || state_atk_equiv`.
    pub assert: SigId,
    pub ctr_equiv: SigId,
    pub atk_equiv: SigId,
    pub counter: SigId,
    pub instr_counter: SigId,
    pub state_atk_equiv: SigId,
}

/// Adds the monitor:
///
/// ```text
/// counter = b; instr_counter = i; state_atk_equiv = 1
/// if counter > 0: counter -= 1; state_atk_equiv &= atk_equiv
/// if !state_atk_equiv && retire_l && retire_r && instr_counter > 0:
///     instr_counter -= 1
/// ```
///
/// The decrement saturates at zero so that the assumption stays released
/// once the instruction budget is spent.
pub fn encode_property(
    p: &ProductDesign,
    atoms: &[ContractAtom],
    cfg: &BmcConfig,
    invariant: &[StatePredicate],
) -> Result<PropertyDesign, PropertyError> {
    cfg.validate().map_err(PropertyError::Bounds)?;
    let (mut b, ctr, inv, atk) = relational_builder(p, atoms, invariant)?;
    let cw = bits_for(cfg.b as u64);
    let iw = bits_for(cfg.i as u64);
    let counter = b.reg("mon.counter", cw, cfg.b as u64);
    let ic = b.reg("mon.instr_counter", iw, cfg.i as u64);
    let sae = b.reg("mon.state_atk_equiv", 1, 1);

    let one_c = b.konst(1, cw);
    let c_zero = b.eq_const(counter, 0);
    let c_pos = b.not(c_zero);
    let c_dec = b.sub(counter, one_c);
    let c_next = b.mux(c_pos, c_dec, counter);
    b.set_next(counter, c_next);
    let acc = b.and(sae, atk);
    let sae_next = b.mux(c_pos, acc, sae);
    b.set_next(sae, sae_next);

    let rl = b.sig(p.left.obs.retire);
    let rr = b.sig(p.right.obs.retire);
    let both = b.and(rl, rr);
    let conflict = b.not(sae);
    let ic_zero = b.eq_const(ic, 0);
    let ic_pos = b.not(ic_zero);
    let dec = b.and_all(&[conflict, both, ic_pos]);
    let one_i = b.konst(1, iw);
    let ic_dec = b.sub(ic, one_i);
    let ic_next = b.mux(dec, ic_dec, ic);
    b.set_next(ic, ic_next);

    let released = b.or(ic_zero, ctr);
    let assume = b.and(released, inv);
    let assume = b.name(assume, "prop.assume");
    let assert = b.or(ic_pos, sae);
    let assert = b.name(assert, "prop.assert");
    Ok(PropertyDesign {
        design: b.build()?,
        assume: assume.id,
        assert: assert.id,
        ctr_equiv: ctr.id,
        atk_equiv: atk.id,
        counter: counter.id,
        instr_counter: ic.id,
        state_atk_equiv: sae.id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contracts::{builtin_template, ContractTemplate, Family};
    use crate::cores::{build_core, CoreKind, CoreSpec};
    use crate::distinguish::contract_distinguishable;
    use crate::hwir::Simulator;
    use crate::isa::{ArchState, Instruction as I, Opcode};
    use crate::testgen::{gen_random_state, GenConfig, Provenance, TestCase};
    use crate::verify::product::build_product;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// On random same-length pairs, the circuit's contract equivalence over
    /// joint retirements agrees with direct trace comparison of the
    /// retired prefix.
    #[test]
    fn ctr_equiv_matches_traces() {
        let core = build_core(&CoreSpec::new(CoreKind::BrCore, 8, 3, 4, 8)).unwrap();
        let p = build_product(&core).unwrap();
        let tmpl = builtin_template(
            &[Family::I, Family::R, Family::M, Family::A, Family::BT, Family::V],
            &Opcode::ALL,
        );
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = GenConfig {
            width: 8,
            dmem_words: 4,
            len_min: 1,
            len_max: 3,
            ..GenConfig::default()
        };
        for round in 0..40 {
            let idx: Vec<usize> = (0..tmpl.len()).filter(|_| rng.gen_bool(0.1)).collect();
            let atoms = tmpl.subset(&idx);
            let rel = build_relational(&p, &atoms, &[]).unwrap();
            let mut c = cfg.clone();
            c.seed = round;
            let l = gen_random_state(&c);
            let mut r = l.clone();
            if rng.gen_bool(0.5) {
                c.seed = round + 1000;
                let o = gen_random_state(&c);
                r.regs = o.regs;
            }
            let mut st = rel.design.initial_state().values;
            for (copy, s) in [(&p.left, &l), (&p.right, &r)] {
                let v = core.load(s).unwrap().values;
                for (i, &pi) in copy.state.iter().enumerate() {
                    st[pi] = v[i];
                }
            }
            let mut sim = Simulator::new(&rel.design);
            let mut joint = 0;
            let mut all_equal = true;
            for _ in 0..80 {
                sim.settle(&st, &[]);
                if sim.value(p.left.obs.retire) == 1 && sim.value(p.right.obs.retire) == 1 {
                    joint += 1;
                    all_equal &= sim.value(rel.ctr_equiv) == 1;
                    let t = TestCase {
                        left: l.clone(),
                        right: r.clone(),
                        provenance: Provenance::Random,
                    };
                    assert_eq!(all_equal, !contract_distinguishable(&atoms, &t, joint));
                } else {
                    assert_eq!(sim.value(rel.ctr_equiv), 1);
                }
                sim.latch(&mut st);
            }
        }
    }

    #[test]
    fn monitor_counts() {
        let core = build_core(&CoreSpec::new(CoreKind::DivCore, 4, 1, 4, 4)).unwrap();
        let p = build_product(&core).unwrap();
        let cfg = BmcConfig::new(10, 5, 1, core.max_retire_interval());
        let tmpl = ContractTemplate::default();
        let pd = encode_property(&p, &tmpl.atoms, &cfg, &[]).unwrap();
        let prog = |d: u64| {
            let mut s = ArchState::new(4, vec![I::rrr(Opcode::Div, 1, 2, 3)], 4);
            s.regs[2] = 9;
            s.regs[3] = d;
            s
        };
        let mut st = pd.design.initial_state().values;
        for (copy, s) in [(&p.left, prog(1)), (&p.right, prog(2))] {
            let v = core.load(&s).unwrap().values;
            for (i, &pi) in copy.state.iter().enumerate() {
                st[pi] = v[i];
            }
        }
        let mut sim = Simulator::new(&pd.design);
        let mut trace = Vec::new();
        for _ in 0..10 {
            sim.settle(&st, &[]);
            trace.push((
                sim.value(pd.counter),
                sim.value(pd.state_atk_equiv),
                sim.value(pd.instr_counter),
                sim.value(pd.assert),
            ));
            sim.latch(&mut st);
        }
        // Left retires in frame 1, right (4-cycle divide) in frame 4.
        assert_eq!(
            trace,
            vec![
                (5, 1, 1, 1),
                (4, 1, 1, 1),
                (3, 0, 1, 1),
                (2, 0, 1, 1),
                (1, 0, 1, 1),
                (0, 0, 0, 0),
                (0, 0, 0, 0),
                (0, 0, 0, 0),
                (0, 0, 0, 0),
                (0, 0, 0, 0),
            ]
        );
    }
}
