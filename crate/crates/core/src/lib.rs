#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clifford;
pub mod config;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod io;
pub mod qp;
pub mod rb;
pub mod run;
pub mod sequencer;
pub mod state;
pub mod transmon;
pub mod units;
