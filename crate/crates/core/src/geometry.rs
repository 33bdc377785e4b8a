//! Box algebra in normalized image coordinates.
//!
//! Everything in this module works on fractions of the image width/height;
//! pixel conversion happens only at I/O boundaries (dataset files, results
//! files, template cropping).

use crate::error::{Error, Result};

/// 2-D point in normalized coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub fn new(x: f64, y: f64) -> Self {
        Point2 { x, y }
    }

    /// L1 (taxicab) distance to another point.
    pub fn l1_dist(&self, other: &Point2) -> f64 {
        (self.x - other.x).abs() + (self.y - other.y).abs()
    }
}

/// Axis-aligned box in center form, normalized coordinates.
///
/// Construction clamps the center into `[0,1]` and the extent into `(0,1]`;
/// zero-extent and non-finite boxes are rejected so overlap metrics stay
/// well-defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
}

/// Axis-aligned box in corner form `(x0, y0, x1, y1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Result<Self> {
        for v in [cx, cy, w, h] {
            if !v.is_finite() {
                return Err(Error::InvalidBox(format!(
                    "non-finite component in ({cx}, {cy}, {w}, {h})"
                )));
            }
        }
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidBox(format!("zero or negative extent ({w}, {h})")));
        }
        Ok(BBox {
            cx: cx.clamp(0.0, 1.0),
            cy: cy.clamp(0.0, 1.0),
            w: w.min(1.0),
            h: h.min(1.0),
        })
    }

    pub fn cx(&self) -> f64 {
        self.cx
    }
    pub fn cy(&self) -> f64 {
        self.cy
    }
    pub fn w(&self) -> f64 {
        self.w
    }
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn center(&self) -> Point2 {
        Point2::new(self.cx, self.cy)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_corners(&self) -> CornerBox {
        CornerBox {
            x0: self.cx - self.w / 2.0,
            y0: self.cy - self.h / 2.0,
            x1: self.cx + self.w / 2.0,
            y1: self.cy + self.h / 2.0,
        }
    }

    /// L1 distance between the `(cx, cy, w, h)` tuples of two boxes.
    pub fn l1_dist(&self, other: &BBox) -> f64 {
        (self.cx - other.cx).abs()
            + (self.cy - other.cy).abs()
            + (self.w - other.w).abs()
            + (self.h - other.h).abs()
    }
}

impl CornerBox {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        for v in [x0, y0, x1, y1] {
            if !v.is_finite() {
                return Err(Error::InvalidBox(format!(
                    "non-finite component in ({x0}, {y0}, {x1}, {y1})"
                )));
            }
        }
        if x1 < x0 || y1 < y0 {
            return Err(Error::InvalidBox(format!(
                "inverted corners ({x0}, {y0}, {x1}, {y1})"
            )));
        }
        Ok(CornerBox { x0, y0, x1, y1 })
    }

    pub fn to_center(&self) -> Result<BBox> {
        BBox::new(
            (self.x0 + self.x1) / 2.0,
            (self.y0 + self.y1) / 2.0,
            self.x1 - self.x0,
            self.y1 - self.y0,
        )
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }
    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }
    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }
}

/// Intersection-over-union and generalized IoU of two boxes.
///
/// GIoU extends IoU with an enclosing-box penalty: `iou - (|C| - |U|) / |C|`
/// where `C` is the smallest box containing both inputs and `U` their union.
/// Always `giou <= iou`, with equality when the enclosing box equals the
/// union region.
pub fn box_overlap_metrics(a: &BBox, b: &BBox) -> (f64, f64) {
    let ca = a.to_corners();
    let cb = b.to_corners();
    corner_overlap_metrics(&ca, &cb)
}

pub fn corner_overlap_metrics(ca: &CornerBox, cb: &CornerBox) -> (f64, f64) {
    let ix = (ca.x1.min(cb.x1) - ca.x0.max(cb.x0)).max(0.0);
    let iy = (ca.y1.min(cb.y1) - ca.y0.max(cb.y0)).max(0.0);
    let inter = ix * iy;
    let union = ca.area() + cb.area() - inter;
    let iou = if union > 0.0 { inter / union } else { 0.0 };

    let ex = ca.x1.max(cb.x1) - ca.x0.min(cb.x0);
    let ey = ca.y1.max(cb.y1) - ca.y0.min(cb.y0);
    let enclose = ex * ey;
    let giou = if enclose > 0.0 {
        iou - (enclose - union) / enclose
    } else {
        iou
    };
    (iou, giou)
}

/// Plain IoU, used by the evaluation metrics.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    box_overlap_metrics(a, b).0
}

pub fn box_center(b: &BBox) -> Point2 {
    b.center()
}
