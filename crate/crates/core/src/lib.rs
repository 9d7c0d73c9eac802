#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod data;
pub mod datasim;
pub mod dual;
pub mod grfn;
pub mod loss;
pub mod metrics;
pub mod model;
pub mod normal;
pub mod train;
