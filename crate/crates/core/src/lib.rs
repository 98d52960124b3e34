//! Stochastic superoptimization of loop-free programs over a small x86-like
//! register ISA.
//!
//! The pipeline: [`testgen`] records testcases from a target, [`mcmc`]
//! explores rewrites under the cost functions in [`cost`], [`verify`]
//! checks candidates exactly, and [`search`] runs the synthesis and
//! optimization phases across worker threads.

pub mod isa;
pub mod machine;
pub mod mcmc;
pub mod search;
pub mod cost;
pub mod testgen;
pub mod verify;
