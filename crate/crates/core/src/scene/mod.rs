//! Scene loading and persistence: cameras, images, masks, SfM points and
//! splat clouds.

pub mod camera;
pub mod cloud;
pub mod colmap;
pub mod dataset;
pub mod image;
pub mod ply;

pub use camera::CameraView;
pub use cloud::{init_cloud, GaussianCloud, InitConfig, ParamGroup, ParamLayout, SfmPoint, Splat};
pub use colmap::{export_colmap, import_colmap};
pub use dataset::{load_dataset, save_dataset, SceneDataset, SceneView};
pub use image::{ImageBuffer, MaskMap, ScalarMap};
pub use ply::{load_cloud, save_cloud};
