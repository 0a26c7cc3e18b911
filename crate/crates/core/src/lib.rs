// `!(x > 0.0)` style checks are there to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod encoders;
pub mod env;
pub mod gradcheck;
pub mod numerics;
pub mod parallel;
pub mod plot;
pub mod ppo;
pub mod render;
pub mod sim;
pub mod train;
