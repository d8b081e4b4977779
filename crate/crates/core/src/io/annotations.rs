use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{rasterize_polygon, trace_boundary};
use crate::seghead::DetectionSet;
use crate::types::{AnnotationSet, CellAnnotation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageDims {
    pub depth: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub id: u64,
    pub z_centroid: f64,
    pub z_range: [usize; 2],
    /// Closed boundary as (x, y) pixel coordinates; the last vertex connects
    /// back to the first.
    pub vertices: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<usize>,
}

/// The annotation document: `{"image": {...}, "cells": [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationDoc {
    pub image: ImageDims,
    pub cells: Vec<CellRecord>,
}

/// Reads an annotation document, rasterizing each polygon against the image
/// size it declares. `dims`, when given, must agree with that declaration.
pub fn load_annotations(
    path: impl AsRef<Path>,
    dims: Option<(usize, usize, usize)>,
) -> Result<AnnotationSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let doc: AnnotationDoc =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    annotations_from_doc(&doc, dims)
}

pub fn annotations_from_json(text: &str, dims: Option<(usize, usize, usize)>) -> Result<AnnotationSet> {
    let doc: AnnotationDoc =
        serde_json::from_str(text).map_err(|e| Error::Validation(format!("annotation json: {e}")))?;
    annotations_from_doc(&doc, dims)
}

fn annotations_from_doc(doc: &AnnotationDoc, dims: Option<(usize, usize, usize)>) -> Result<AnnotationSet> {
    let declared = (doc.image.depth, doc.image.height, doc.image.width);
    if let Some(expected) = dims {
        if expected != declared {
            return Err(Error::Validation(format!(
                "annotation image dims {declared:?} do not match stack dims {expected:?}"
            )));
        }
    }
    let (_, h, w) = declared;
    let mut cells = Vec::with_capacity(doc.cells.len());
    for record in &doc.cells {
        if record.vertices.len() < 3 {
            return Err(Error::Validation(format!(
                "cell {} has {} vertices, need at least 3",
                record.id,
                record.vertices.len()
            )));
        }
        for &[x, y] in &record.vertices {
            if !(x >= 0.0 && x < w as f64 && y >= 0.0 && y < h as f64) {
                return Err(Error::Validation(format!(
                    "cell {} vertex ({x}, {y}) outside the {w}x{h} image",
                    record.id
                )));
            }
        }
        let poly: Vec<(f64, f64)> = record.vertices.iter().map(|v| (v[0], v[1])).collect();
        let mask = rasterize_polygon(&poly, h, w);
        cells.push(CellAnnotation {
            id: record.id,
            mask,
            z_centroid: record.z_centroid,
            z_range: (record.z_range[0], record.z_range[1]),
        });
    }
    AnnotationSet::new(cells, declared)
}

fn vertices_of(mask: &ndarray::Array2<bool>) -> Vec<[f64; 2]> {
    trace_boundary(mask)
        .into_iter()
        .map(|(x, y)| [x as f64, y as f64])
        .collect()
}

pub fn annotations_to_doc(set: &AnnotationSet) -> AnnotationDoc {
    let (depth, height, width) = set.dims;
    AnnotationDoc {
        image: ImageDims {
            depth,
            height,
            width,
        },
        cells: set
            .cells
            .iter()
            .map(|cell| CellRecord {
                id: cell.id,
                z_centroid: cell.z_centroid,
                z_range: [cell.z_range.0, cell.z_range.1],
                vertices: vertices_of(&cell.mask),
                channel: None,
            })
            .collect(),
    }
}

pub fn annotations_to_json(set: &AnnotationSet) -> String {
    let mut text = serde_json::to_string(&annotations_to_doc(set)).expect("serializable");
    text.push('\n');
    text
}

/// Writes masks as traced boundary polygons. Output is deterministic.
pub fn save_annotations(set: &AnnotationSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, annotations_to_json(set)).map_err(|e| Error::io(path, e))
}

/// Detections use the annotation schema plus a `channel` field. Axial
/// statistics are unknown for predictions and written as slice 0.
pub fn detections_to_json(detections: &DetectionSet, depth: usize) -> String {
    let (height, width) = detections.dims;
    let doc = AnnotationDoc {
        image: ImageDims {
            depth: depth.max(1),
            height,
            width,
        },
        cells: detections
            .detections
            .iter()
            .enumerate()
            .map(|(i, det)| CellRecord {
                id: i as u64,
                z_centroid: 0.0,
                z_range: [0, 0],
                vertices: vertices_of(&det.mask),
                channel: Some(det.channel),
            })
            .collect(),
    };
    let mut text = serde_json::to_string(&doc).expect("serializable");
    text.push('\n');
    text
}

pub fn save_detections(detections: &DetectionSet, depth: usize, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, detections_to_json(detections, depth)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_annotation() {
        let json = r#"{"image":{"depth":3,"height":8,"width":8},
            "cells":[{"id":7,"z_centroid":1.0,"z_range":[0,2],"vertices":[[1,1],[5,1],[5,5],[1,5]]}]}"#;
        let set = annotations_from_json(json, Some((3, 8, 8))).unwrap();
        assert_eq!(set.cells.len(), 1);
        assert_eq!(set.cells[0].area(), 25);
        assert_eq!(set.cells[0].z_range, (0, 2));
    }

    #[test]
    fn empty_cells() {
        let json = r#"{"image":{"depth":3,"height":8,"width":8},"cells":[]}"#;
        assert!(annotations_from_json(json, None).unwrap().is_empty());
    }

    #[test]
    fn rejects_out_of_bounds_vertex() {
        let json = r#"{"image":{"depth":1,"height":8,"width":8},
            "cells":[{"id":1,"z_centroid":0.0,"z_range":[0,0],"vertices":[[1,1],[8,1],[5,5]]}]}"#;
        assert!(matches!(annotations_from_json(json, None), Err(Error::Validation(_))));
    }

    #[test]
    fn rejects_degenerate_polygon() {
        let json = r#"{"image":{"depth":1,"height":8,"width":8},
            "cells":[{"id":1,"z_centroid":0.0,"z_range":[0,0],"vertices":[[1,1],[5,1]]}]}"#;
        assert!(matches!(annotations_from_json(json, None), Err(Error::Validation(_))));
    }

    #[test]
    fn rejects_dims_mismatch() {
        let json = r#"{"image":{"depth":1,"height":8,"width":8},"cells":[]}"#;
        assert!(annotations_from_json(json, Some((2, 8, 8))).is_err());
    }
}
