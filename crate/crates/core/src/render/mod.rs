//! Forward rendering of splat clouds.

pub mod project;
pub mod raster;
pub mod sample;
pub mod sh;

pub use project::{project_splat, Projected2D, BLUR_FLOOR, CUTOFF_SQ, NEAR_PLANE};
pub use raster::{render, render_naive, render_with, RenderOutput, TILE_SIZE};
pub use sample::{sample_bilinear, sample_bilinear_scalar};
