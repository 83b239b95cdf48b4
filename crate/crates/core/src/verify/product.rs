//! Stuttering self-composition of a core.

use crate::cores::{ArchLayout, Core, CoreError, ObservationInterface};
use crate::hwir::{Design, DesignBuilder, SigId};

pub const LEFT: &str = "L.";
pub const RIGHT: &str = "R.";

/// One copy of the core inside a product.
#[derive(Debug, Clone)]
pub struct CopyView {
    pub prefix: &'static str,
    pub obs: ObservationInterface,
    pub layout: ArchLayout,
    /// Product state index of each core state element.
    pub state: Vec<usize>,
    /// Update enable: low while the copy is paused.
    pub enable: SigId,
}

/// Two copies of a core. A copy that retires while the other does not holds
/// its state until the other one retires too.
#[derive(Debug, Clone)]
pub struct ProductDesign {
    pub design: Design,
    pub left: CopyView,
    pub right: CopyView,
}

impl ProductDesign {
    pub fn copies(&self) -> [&CopyView; 2] {
        [&self.left, &self.right]
    }

    /// Product state indices of both copies' initial architectural state.
    pub fn free_elements(&self) -> Vec<usize> {
        let mut v = self.left.layout.free_elements();
        v.extend(self.right.layout.free_elements());
        v
    }
}

pub fn build_product(core: &Core) -> Result<ProductDesign, CoreError> {
    let mut b = DesignBuilder::new();
    let l = b.import(&core.design, LEFT);
    let r = b.import(&core.design, RIGHT);
    let ret_l = l.map[core.obs.retire];
    let ret_r = r.map[core.obs.retire];
    let nr_l = b.not(ret_l);
    let nr_r = b.not(ret_r);
    let hold_l = b.and(ret_l, nr_r);
    let hold_r = b.and(ret_r, nr_l);
    let en_l = b.not(hold_l);
    let en_l = b.name(en_l, "L.enable");
    let en_r = b.not(hold_r);
    let en_r = b.name(en_r, "R.enable");
    for (imp, en) in [(&l, en_l), (&r, en_r)] {
        for &(reg, next) in &imp.regs {
            let gated = b.mux(en, next, reg);
            b.set_next(reg, gated);
        }
    }
    let design = b.build()?;
    let n = core.design.state().len();
    let view = |prefix: &'static str, offset: usize, enable: SigId| -> Result<CopyView, CoreError> {
        Ok(CopyView {
            prefix,
            obs: ObservationInterface::locate(&design, prefix)?,
            layout: ArchLayout::locate(&design, prefix, &core.spec)?,
            state: (offset..offset + n).collect(),
            enable,
        })
    };
    let left = view(LEFT, 0, en_l.id)?;
    let right = view(RIGHT, n, en_r.id)?;
    Ok(ProductDesign {
        design,
        left,
        right,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cores::{build_core, CoreKind, CoreSpec};
    use crate::hwir::Simulator;
    use crate::isa::{ArchState, Instruction as I, Opcode::*};

    /// Product state holding `l` and `r` with µ0 everywhere else.
    fn load(core: &Core, p: &ProductDesign, l: &ArchState, r: &ArchState) -> Vec<u64> {
        let mut st = p.design.initial_state().values;
        for (copy, s) in [(&p.left, l), (&p.right, r)] {
            let v = core.load(s).unwrap().values;
            for (i, &pi) in copy.state.iter().enumerate() {
                st[pi] = v[i];
            }
        }
        st
    }

    fn prog(div_by: u64) -> ArchState {
        let mut s = ArchState::new(32, vec![I::rrr(Div, 1, 2, 3), I::li(4, 7)], 256);
        s.regs[2] = 100;
        s.regs[3] = div_by;
        s
    }

    #[test]
    fn stutter_and_projection() {
        let core = build_core(&CoreSpec::simulation(CoreKind::DivCore)).unwrap();
        let p = build_product(&core).unwrap();
        let (ls, rs) = (prog(1), prog(2));
        let mut st = load(&core, &p, &ls, &rs);
        let mut sim = Simulator::new(&p.design);
        let mut lsim = core.simulate(&ls).unwrap();
        let mut rsim = core.simulate(&rs).unwrap();
        let mut held = Vec::new();
        let (mut lcur, mut rcur) = (lsim.step(), rsim.step());
        for cycle in 1..=40u64 {
            sim.settle(&st, &[]);
            let en_l = sim.value(p.left.enable) == 1;
            let en_r = sim.value(p.right.enable) == 1;
            // Each copy's retire output matches its standalone run at the
            // same point of its own timeline.
            assert_eq!(sim.value(p.left.obs.retire) == 1, lcur.atk, "cycle {cycle}");
            assert_eq!(sim.value(p.right.obs.retire) == 1, rcur.atk, "cycle {cycle}");
            if !en_l {
                held.push(cycle);
            }
            assert!(en_r, "the slow copy never stutters");
            sim.latch(&mut st);
            if en_l {
                lcur = lsim.step();
            }
            rcur = rsim.step();
        }
        // The left DIV retires at cycle 2, the right one at cycle 33: the left
        // copy holds for cycles 2..=32.
        assert_eq!(held, (2..=32).collect::<Vec<_>>());
    }

    #[test]
    fn identical_copies_never_stutter() {
        let core = build_core(&CoreSpec::simulation(CoreKind::BrCore)).unwrap();
        let p = build_product(&core).unwrap();
        let s = prog(5);
        let mut st = load(&core, &p, &s, &s);
        let mut sim = Simulator::new(&p.design);
        for _ in 0..60 {
            sim.settle(&st, &[]);
            assert_eq!(sim.value(p.left.enable), 1);
            assert_eq!(sim.value(p.right.enable), 1);
            sim.latch(&mut st);
        }
    }
}
