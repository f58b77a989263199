// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod catalog;
pub mod experiments;
pub mod flux;
pub mod geometry;
pub mod kinetic;
pub mod noise;
pub mod solver;
pub mod stats;
