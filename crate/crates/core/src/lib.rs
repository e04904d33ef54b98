//! Compositional articulated neural fields for rendering posable humans.
//!
//! A procedural body model drives sixteen part-local FiLM-SIREN networks that
//! predict a signed-distance offset from a template surface plus color. Rays
//! are culled against posed part boxes, sampled, mapped back to the rest pose
//! by inverse skinning, and volume rendered. An adversarial trainer fits the
//! fields to 2D image collections.

pub mod autodiff;
pub mod body;
pub mod canonical_json;
pub mod error;
pub mod fields;
pub mod geometry;
pub mod io;
pub mod math;
pub mod raster;
pub mod render;
pub mod sampler;
pub mod train;

pub use error::{Error, Result};
