//! 3D Gaussian splatting reconstruction with uncertainty-guided,
//! concept-conditioned inpainting of occluded and distracting content.

pub mod distractor;
pub mod error;
pub mod inpaint;
pub mod metrics;
pub mod par;
pub mod pipeline;
pub mod render;
pub mod scene;
pub mod train;
pub mod visibility;

pub use error::{Error, Result};
pub use par::Exec;
