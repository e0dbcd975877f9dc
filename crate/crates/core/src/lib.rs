//! Synthetic training-data engine for single-image 3D human pose estimation.
//!
//! The crate covers the whole generation chain: a compositional pose prior,
//! a skinned template body, clothing-texture transfer from garment photos,
//! a software renderer with background compositing, a toy two-stage
//! adversarial domain-adaptation trainer and an evaluation harness.

// Negated float comparisons are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod skeleton;
pub mod prior;
pub mod body;
pub mod render;
pub mod texture;
pub mod adapt;
pub mod eval;
pub mod pipeline;
