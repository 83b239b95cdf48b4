use std::collections::HashMap;

use super::{Design, DesignError, DesignParts, Node, OpKind, SigId, Signal, StateElem};

/// Handle to a signal under construction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Sig {
    pub id: SigId,
    pub width: u32,
}

const UNSET: SigId = usize::MAX;

/// Incremental design construction. Registers are declared first and get
/// their next-state signal later via [`DesignBuilder::set_next`].
#[derive(Debug, Default, Clone)]
pub struct DesignBuilder {
    parts: DesignParts,
    consts: HashMap<(u64, u32), SigId>,
}

/// Result of copying one design into another.
#[derive(Debug, Clone)]
pub struct Imported {
    /// Old signal id to new signal.
    pub map: Vec<Sig>,
    /// For each state element of the source: the new register and the copied
    /// next-state signal, which the caller must wire with `set_next`.
    pub regs: Vec<(Sig, Sig)>,
}

impl DesignBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_parts(parts: DesignParts) -> Self {
        DesignBuilder {
            parts,
            consts: HashMap::new(),
        }
    }

    pub fn sig(&self, id: SigId) -> Sig {
        Sig {
            id,
            width: self.parts.signals[id].width,
        }
    }

    pub fn lookup(&self, name: &str) -> Option<Sig> {
        self.parts
            .signals
            .iter()
            .position(|s| s.name.as_deref() == Some(name))
            .or_else(|| self.parts.outputs.get(name).copied())
            .map(|id| self.sig(id))
    }

    fn fresh(&mut self, width: u32, name: Option<String>) -> Sig {
        let id = self.parts.signals.len();
        self.parts.signals.push(Signal { width, name });
        Sig { id, width }
    }

    fn node(&mut self, kind: OpKind, args: &[Sig], width: u32) -> Sig {
        let out = self.fresh(width, None);
        self.parts.nodes.push(Node {
            out: out.id,
            kind,
            args: args.iter().map(|a| a.id).collect(),
        });
        out
    }

    pub fn input(&mut self, name: &str, width: u32) -> Sig {
        let s = self.fresh(width, Some(name.to_string()));
        self.parts.inputs.push(s.id);
        s
    }

    pub fn reg(&mut self, name: &str, width: u32, init: u64) -> Sig {
        let s = self.fresh(width, Some(name.to_string()));
        self.parts.state.push(StateElem {
            sig: s.id,
            init,
            next: UNSET,
        });
        s
    }

    pub fn set_next(&mut self, reg: Sig, next: Sig) {
        let st = self
            .parts
            .state
            .iter_mut()
            .find(|s| s.sig == reg.id)
            .expect("set_next on a non-register");
        st.next = next.id;
    }

    /// Attaches a name to an existing signal.
    pub fn name(&mut self, s: Sig, name: &str) -> Sig {
        self.parts.signals[s.id].name = Some(name.to_string());
        s
    }

    pub fn output(&mut self, name: &str, s: Sig) {
        self.parts.outputs.insert(name.to_string(), s.id);
    }

    pub fn konst(&mut self, v: u64, width: u32) -> Sig {
        let v = v & crate::isa::mask(width);
        if let Some(&id) = self.consts.get(&(v, width)) {
            return self.sig(id);
        }
        let s = self.node(OpKind::Const(v), &[], width);
        self.consts.insert((v, width), s.id);
        s
    }

    pub fn zero(&mut self, width: u32) -> Sig {
        self.konst(0, width)
    }

    pub fn one(&mut self) -> Sig {
        self.konst(1, 1)
    }

    pub fn not(&mut self, a: Sig) -> Sig {
        self.node(OpKind::Not, &[a], a.width)
    }
    pub fn and(&mut self, a: Sig, b: Sig) -> Sig {
        self.node(OpKind::And, &[a, b], a.width)
    }
    pub fn or(&mut self, a: Sig, b: Sig) -> Sig {
        self.node(OpKind::Or, &[a, b], a.width)
    }
    pub fn xor(&mut self, a: Sig, b: Sig) -> Sig {
        self.node(OpKind::Xor, &[a, b], a.width)
    }
    pub fn add(&mut self, a: Sig, b: Sig) -> Sig {
        self.node(OpKind::Add, &[a, b], a.width)
    }
    pub fn sub(&mut self, a: Sig, b: Sig) -> Sig {
        self.node(OpKind::Sub, &[a, b], a.width)
    }
    pub fn mul(&mut self, a: Sig, b: Sig) -> Sig {
        self.node(OpKind::Mul, &[a, b], a.width)
    }
    pub fn eq(&mut self, a: Sig, b: Sig) -> Sig {
        self.node(OpKind::Eq, &[a, b], 1)
    }
    pub fn ne(&mut self, a: Sig, b: Sig) -> Sig {
        let e = self.eq(a, b);
        self.not(e)
    }
    pub fn ult(&mut self, a: Sig, b: Sig) -> Sig {
        self.node(OpKind::Ult, &[a, b], 1)
    }
    pub fn ule(&mut self, a: Sig, b: Sig) -> Sig {
        let gt = self.ult(b, a);
        self.not(gt)
    }
    pub fn eq_const(&mut self, a: Sig, v: u64) -> Sig {
        let c = self.konst(v, a.width);
        self.eq(a, c)
    }
    pub fn mux(&mut self, sel: Sig, a: Sig, b: Sig) -> Sig {
        self.node(OpKind::Mux, &[sel, a, b], a.width)
    }
    pub fn slice(&mut self, a: Sig, hi: u32, lo: u32) -> Sig {
        self.node(OpKind::Slice { hi, lo }, &[a], hi - lo + 1)
    }
    pub fn bit(&mut self, a: Sig, i: u32) -> Sig {
        self.slice(a, i, i)
    }
    pub fn concat(&mut self, hi: Sig, lo: Sig) -> Sig {
        self.node(OpKind::Concat, &[hi, lo], hi.width + lo.width)
    }

    /// Zero-extends or truncates to `width`.
    pub fn resize(&mut self, a: Sig, width: u32) -> Sig {
        use std::cmp::Ordering::*;
        match a.width.cmp(&width) {
            Equal => a,
            Greater => self.slice(a, width - 1, 0),
            Less => {
                let z = self.zero(width - a.width);
                self.concat(z, a)
            }
        }
    }

    /// Replicates a 1-bit signal `width` times.
    pub fn replicate(&mut self, b: Sig, width: u32) -> Sig {
        let mut acc = b;
        while acc.width < width {
            let take = (width - acc.width).min(acc.width);
            let part = self.slice(acc, take - 1, 0);
            acc = self.concat(part, acc);
        }
        acc
    }

    pub fn and_all(&mut self, xs: &[Sig]) -> Sig {
        match xs.split_first() {
            None => self.one(),
            Some((&f, rest)) => rest.iter().fold(f, |acc, &x| self.and(acc, x)),
        }
    }

    pub fn or_all(&mut self, xs: &[Sig]) -> Sig {
        match xs.split_first() {
            None => self.zero(1),
            Some((&f, rest)) => rest.iter().fold(f, |acc, &x| self.or(acc, x)),
        }
    }

    pub fn implies(&mut self, a: Sig, b: Sig) -> Sig {
        let na = self.not(a);
        self.or(na, b)
    }

    /// Copies `src` into this builder with every name prefixed. Inputs stay
    /// inputs; state elements become registers whose next-state signal is
    /// left for the caller to connect.
    pub fn import(&mut self, src: &Design, prefix: &str) -> Imported {
        let mut map = Vec::with_capacity(src.num_signals());
        for s in &src.parts().signals {
            let name = s.name.as_ref().map(|n| format!("{prefix}{n}"));
            map.push(self.fresh(s.width, name));
        }
        for n in src.nodes() {
            self.parts.nodes.push(Node {
                out: map[n.out].id,
                kind: n.kind,
                args: n.args.iter().map(|&a| map[a].id).collect(),
            });
        }
        let mut regs = Vec::new();
        for st in src.state() {
            self.parts.state.push(StateElem {
                sig: map[st.sig].id,
                init: st.init,
                next: UNSET,
            });
            regs.push((map[st.sig], map[st.next]));
        }
        for &i in src.inputs() {
            self.parts.inputs.push(map[i].id);
        }
        for (name, &s) in src.outputs() {
            self.parts
                .outputs
                .insert(format!("{prefix}{name}"), map[s].id);
        }
        Imported { map, regs }
    }

    pub fn build(self) -> Result<Design, DesignError> {
        for st in &self.parts.state {
            if st.next == UNSET {
                let name = self.parts.signals[st.sig]
                    .name
                    .clone()
                    .unwrap_or_else(|| st.sig.to_string());
                return Err(DesignError::MissingNext(name));
            }
        }
        Design::new(self.parts)
    }
}
