//! Visual graph construction from detector output.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bbox::{iou, BoundingBox};
use crate::error::{GmaError, Result};
use crate::numeric::{count_valid, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub feature: Vec<f64>,
}

/// Detections for one image, as read from a detection JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionSet {
    pub image_id: String,
    pub image_size: [f64; 2],
    pub detections: Vec<Detection>,
}

impl DetectionSet {
    pub fn from_json(text: &str) -> Result<Self> {
        let set: DetectionSet = serde_json::from_str(text)?;
        set.validate()?;
        Ok(set)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| GmaError::io(path, e))?;
        DetectionSet::from_json(&text)
    }

    pub fn feature_dim(&self) -> usize {
        self.detections.first().map_or(0, |d| d.feature.len())
    }

    pub fn validate(&self) -> Result<()> {
        let [w, h] = self.image_size;
        if !(w > 0.0 && h > 0.0) {
            return Err(GmaError::InvalidArgument(format!(
                "image {}: size {w}x{h} must be positive",
                self.image_id
            )));
        }
        if self.detections.is_empty() {
            return Err(GmaError::InvalidArgument(format!("image {}: no detections", self.image_id)));
        }
        let dim = self.feature_dim();
        if let Some(i) = self.detections.iter().position(|d| d.feature.len() != dim) {
            return Err(GmaError::InvalidArgument(format!(
                "image {}: detection {i} has a {}-dim feature, expected {dim}",
                self.image_id,
                self.detections[i].feature.len()
            )));
        }
        Ok(())
    }
}

/// Node features, binary edges and validity mask of an image graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualGraph {
    pub nodes: Tensor,
    pub edges: Tensor,
    pub mask: Vec<bool>,
}

impl VisualGraph {
    pub fn num_nodes(&self) -> usize {
        self.mask.len()
    }

    pub fn num_valid(&self) -> usize {
        count_valid(&self.mask)
    }

    pub fn feature_dim(&self) -> usize {
        self.nodes.cols()
    }

    /// Reorders nodes: new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> VisualGraph {
        VisualGraph {
            nodes: self.nodes.permute_rows(perm),
            edges: self.edges.permute_square(perm),
            mask: perm.iter().map(|&p| self.mask[p]).collect(),
        }
    }
}

/// Builds the `k1`-node visual graph. Node `i` carries its region feature
/// followed by the normalized box; `e_ij = 1` when `iou > iou_threshold`,
/// every real node has a self-loop, and rows past the detection count are
/// zero padding.
pub fn build_visual_graph(set: &DetectionSet, iou_threshold: f64, k1: usize) -> Result<VisualGraph> {
    if !(0.0..=1.0).contains(&iou_threshold) {
        return Err(GmaError::InvalidArgument(format!("IoU threshold {iou_threshold} not in [0,1]")));
    }
    set.validate()?;
    let n = set.detections.len();
    if n > k1 {
        return Err(GmaError::InvalidArgument(format!(
            "image {}: {n} detections exceed K1 = {k1}",
            set.image_id
        )));
    }
    let d_roi = set.feature_dim();
    let width = d_roi + 4;
    let [w, h] = set.image_size;
    let mut nodes = Tensor::zeros(k1, width);
    let mut edges = Tensor::zeros(k1, k1);
    for (i, det) in set.detections.iter().enumerate() {
        let row = &mut nodes.data_mut()[i * width..(i + 1) * width];
        row[..d_roi].copy_from_slice(&det.feature);
        row[d_roi..].copy_from_slice(&det.bbox.normalized(w, h));
        edges.set(i, i, 1.0);
        for j in (i + 1)..n {
            if iou(&det.bbox, &set.detections[j].bbox) > iou_threshold {
                edges.set(i, j, 1.0);
                edges.set(j, i, 1.0);
            }
        }
    }
    let mask = (0..k1).map(|i| i < n).collect();
    Ok(VisualGraph { nodes, edges, mask })
}
