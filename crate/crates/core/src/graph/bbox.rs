use serde::{Deserialize, Serialize};

use crate::error::{GmaError, Result};

/// Axis-aligned box in pixel coordinates, `x1 ≤ x2` and `y1 ≤ y2`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    pub x1: f64,
    pub y1: f64,
    pub x2: f64,
    pub y2: f64,
}

impl BoundingBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(GmaError::InvalidArgument("bounding box has non-finite coordinates".into()));
        }
        if x1 > x2 || y1 > y2 {
            return Err(GmaError::InvalidArgument(format!(
                "bounding box ({x1}, {y1}, {x2}, {y2}) has inverted corners"
            )));
        }
        Ok(BoundingBox { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    /// Coordinates divided by image width and height.
    pub fn normalized(&self, width: f64, height: f64) -> [f64; 4] {
        [self.x1 / width, self.y1 / height, self.x2 / width, self.y2 / height]
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = GmaError;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x1, b.y1, b.x2, b.y2]
    }
}

/// Intersection over union. Zero when the union has no area.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let ih = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}
