//! On-disk formats: OME-TIFF stacks, annotation JSON and PNG renderings.

mod annotations;
mod png;
mod stack;

pub use annotations::{
    annotations_from_json, annotations_to_json, detections_to_json, load_annotations,
    save_annotations, save_detections, AnnotationDoc, CellRecord, ImageDims,
};
pub use png::save_png;
pub use stack::{load_stack, save_stack};
