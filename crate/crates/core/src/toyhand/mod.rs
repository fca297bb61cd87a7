//! Procedural two-domain, multi-view depth data of an articulated toy hand.
//!
//! The synthetic domain is an orthographic capsule rendering of a
//! [`KinematicChain`]; the "real" domain is the same rendering passed through
//! [`corrupt`]. Both domains of a sample therefore share one pose exactly.

mod chain;
mod corrupt;
mod generate;
mod render;

pub use chain::{Capsule, Finger, KinematicChain, Segment};
pub use corrupt::{corrupt, CorruptionParams};
pub use generate::{default_views, generate_dataset, GenConfig, HandSampler};
pub use render::{
    check_resolution, normalize_depth, rasterize, render_depth, render_view, CameraView, RawDepth, RenderedView,
};
