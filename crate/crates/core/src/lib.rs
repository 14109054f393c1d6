#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod engine;
pub mod error;
pub mod game;
pub mod harness;
pub mod identification;
pub mod lp;
pub mod outcome;
pub mod polytope;
pub mod report;
pub mod solution;
