//! Supervised data: annotation files, rasters, the toy world, and datasets.

pub mod annotations;
pub mod raster;
pub mod toy;

mod dataset;

pub use annotations::{load_annotations, parse_annotations, AnnotationFile, AnnotationRecord};
pub use dataset::{Dataset, SampleRef, SceneData, ANNOTATION_FILE};
pub use raster::crop_head;
pub use toy::{gen_toy_scene, ToyParams, ToyScene};
