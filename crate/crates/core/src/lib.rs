//! Two-step whole-slide image registration.
//!
//! Step one finds the integer translation and the 0°/180° orientation that
//! maximize normalized cross-correlation between a fixed and a moving slide
//! image. Step two refines the alignment with a dense displacement field
//! optimized by Adam under a mean-squared-error objective. Landmark
//! distances are summarized by the median over image pairs of the
//! per-pair 90th percentile, in micrometers.

pub mod deform;
pub mod landmarks;
pub mod pipeline;
pub mod raster;
pub mod rigid;
pub mod synth;
