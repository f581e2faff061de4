//! Engine of a transrectal prostate-biopsy training simulator.
//!
//! The crate generates synthetic ultrasound phantoms, reslices them under
//! probe control, partitions the gland into twelve equal-volume sectors,
//! scores 12-core procedures, records sessions, and computes the reliability
//! and construct-validity statistics used to evaluate the simulator.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod anatomy;
pub mod case;
pub mod cohort;
pub mod error;
pub mod geometry;
pub mod probe;
pub mod scoring;
pub mod session;
pub mod stats;
pub mod volume;

pub use error::{Error, Result};
