//! Multi-fidelity Bayesian architecture search over tabular benchmarks.
//!
//! Cheap low-fidelity evaluations and expensive high-fidelity ones are fused
//! by an autoregressive co-kriging model, and new architectures are picked by
//! an upper-confidence-bound rule until the evaluation budget is spent.

pub mod cokriging;
pub mod gp;
pub mod harness;
pub mod kd;
pub mod search;
pub mod space;
