//! The CNF unrolling and the cycle simulator agree on random designs.

use ctrsynth_core::hwir::{cnf::bits_value, Cnf, Design, DesignBuilder, Sig, Simulator, Unroller};
use ctrsynth_core::isa::mask;
use ctrsynth_core::sat::{solve_clauses, SatResult};
use proptest::prelude::*;

const W: u32 = 4;

#[derive(Debug, Clone)]
enum Op {
    Not(usize),
    And(usize, usize),
    Or(usize, usize),
    Xor(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Eq(usize, usize),
    Ult(usize, usize),
    Mux(usize, usize, usize),
    SliceConcat(usize, usize),
    Const(u64),
}

fn op() -> impl Strategy<Value = Op> {
    let i = || 0usize..64;
    prop_oneof![
        i().prop_map(Op::Not),
        (i(), i()).prop_map(|(a, b)| Op::And(a, b)),
        (i(), i()).prop_map(|(a, b)| Op::Or(a, b)),
        (i(), i()).prop_map(|(a, b)| Op::Xor(a, b)),
        (i(), i()).prop_map(|(a, b)| Op::Add(a, b)),
        (i(), i()).prop_map(|(a, b)| Op::Sub(a, b)),
        (i(), i()).prop_map(|(a, b)| Op::Mul(a, b)),
        (i(), i()).prop_map(|(a, b)| Op::Eq(a, b)),
        (i(), i()).prop_map(|(a, b)| Op::Ult(a, b)),
        (i(), i(), i()).prop_map(|(s, a, b)| Op::Mux(s, a, b)),
        (i(), i()).prop_map(|(a, b)| Op::SliceConcat(a, b)),
        (0u64..16).prop_map(Op::Const),
    ]
}

/// Two inputs and three registers, all `W` bits wide; every node result is
/// widened back to `W` so any earlier signal can feed any later node.
fn build(ops: &[Op], inits: &[u64; 3], nexts: &[usize; 3]) -> Design {
    let mut b = DesignBuilder::new();
    let mut pool: Vec<Sig> = vec![b.input("i0", W), b.input("i1", W)];
    let regs: Vec<Sig> = (0..3).map(|k| b.reg(&format!("r{k}"), W, inits[k])).collect();
    pool.extend(&regs);
    for o in ops {
        let p = |k: usize| pool[k % pool.len()];
        let s = match *o {
            Op::Not(a) => b.not(p(a)),
            Op::And(x, y) => b.and(p(x), p(y)),
            Op::Or(x, y) => b.or(p(x), p(y)),
            Op::Xor(x, y) => b.xor(p(x), p(y)),
            Op::Add(x, y) => b.add(p(x), p(y)),
            Op::Sub(x, y) => b.sub(p(x), p(y)),
            Op::Mul(x, y) => b.mul(p(x), p(y)),
            Op::Eq(x, y) => {
                let e = b.eq(p(x), p(y));
                b.resize(e, W)
            }
            Op::Ult(x, y) => {
                let e = b.ult(p(x), p(y));
                b.resize(e, W)
            }
            Op::Mux(s, x, y) => {
                let sel = b.bit(p(s), 0);
                b.mux(sel, p(x), p(y))
            }
            Op::SliceConcat(x, y) => {
                let hi = b.slice(p(x), 1, 0);
                let lo = b.slice(p(y), 3, 2);
                b.concat(hi, lo)
            }
            Op::Const(v) => b.konst(v, W),
        };
        pool.push(s);
    }
    for (k, &r) in regs.iter().enumerate() {
        let n = pool[nexts[k] % pool.len()];
        b.set_next(r, n);
    }
    b.build().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn unrolling_matches_simulation(
        ops in prop::collection::vec(op(), 1..24),
        inits in prop::array::uniform3(0u64..16),
        nexts in prop::array::uniform3(0usize..64),
        inputs in prop::collection::vec(prop::array::uniform2(0u64..16), 1..6),
    ) {
        let d = build(&ops, &inits, &nexts);
        let k = inputs.len();
        let mut u = Unroller::new(&d);
        for (f, ins) in inputs.iter().enumerate() {
            for (j, &s) in d.inputs().iter().enumerate() {
                let bits = u.bits(f, s);
                let want = Cnf::const_bits(ins[j], W);
                let eq = u.cnf.eq_bits(&bits, &want);
                u.cnf.assert_lit(eq);
            }
        }
        let all: Vec<Vec<_>> = (0..k)
            .flat_map(|f| (0..d.num_signals()).map(move |s| (f, s)))
            .map(|(f, s)| u.bits(f, s))
            .collect();
        let model = match solve_clauses(u.cnf.num_vars(), u.cnf.clauses()) {
            SatResult::Sat(m) => m,
            SatResult::Unsat => panic!("pinned inputs leave the unrolling unsatisfiable"),
        };

        let mut sim = Simulator::new(&d);
        let mut st = d.initial_state().values;
        for (f, ins) in inputs.iter().enumerate() {
            sim.settle(&st, ins);
            for s in 0..d.num_signals() {
                let got = bits_value(&model, &all[f * d.num_signals() + s]);
                prop_assert_eq!(got, sim.value(s) & mask(d.width(s)), "frame {} signal {}", f, s);
            }
            sim.latch(&mut st);
        }
    }
}
