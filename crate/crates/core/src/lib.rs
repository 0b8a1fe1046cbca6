//! Periodic-ray length spectrum of open planar billiards with disk obstacles.
//!
//! Pipeline: [`geometry`] validates a scene and derives its constants,
//! [`symbolic`] enumerates cyclic obstacle words, [`orbit`] solves each word
//! for its periodic ray, [`linearization`] weights it, [`spectrum`] collects
//! periods up to a cutoff, and [`zeta`] / [`separation`] analyse the result.

// `!(x > 0.0)` is used on purpose so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod geometry;
pub mod linearization;
pub mod orbit;
pub mod persistence;
pub mod precision;
pub mod separation;
pub mod spectrum;
pub mod symbolic;
pub mod zeta;
