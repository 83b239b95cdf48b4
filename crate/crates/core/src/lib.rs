//! Leakage-contract synthesis for toy pipelined CPUs.
//!
//! The crate covers the whole flow: a mini-ISA and its interpreter ([`isa`]),
//! a synchronous-circuit IR with simulation and bit-blasting ([`hwir`]), a
//! CDCL SAT solver ([`sat`]), three toy cores ([`cores`]), contract templates
//! ([`contracts`]), test generation and classification ([`testgen`],
//! [`distinguish`]), the synthesis ILP ([`ilp`]), bounded and unbounded
//! verification ([`verify`]) and the driver gluing them together
//! ([`pipeline`]).

pub mod contracts;
pub mod cores;
pub mod distinguish;
pub mod hwir;
pub mod ilp;
pub mod isa;
pub mod pipeline;
pub mod sat;
pub mod testgen;
pub mod verify;
