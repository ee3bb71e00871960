use std::fmt;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned box: top-left corner plus extent, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Self {
        Self { x, y, w, h }
    }

    pub fn from_center(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self::new(cx - w / 2.0, cy - h / 2.0, w, h)
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + self.w / 2.0, self.y + self.h / 2.0)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite()
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_valid() && self.w.is_finite() && self.h.is_finite() {
            Ok(())
        } else {
            Err(Error::DegenerateBox(self.to_string()))
        }
    }

    pub fn center_distance(&self, other: &BBox) -> f64 {
        let (ax, ay) = self.center();
        let (bx, by) = other.center();
        ((ax - bx).powi(2) + (ay - by).powi(2)).sqrt()
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Self {
        Self::new(self.x + dx, self.y + dy, self.w, self.h)
    }

    pub fn scale_coords(&self, sx: f64, sy: f64) -> Self {
        Self::new(self.x * sx, self.y * sy, self.w * sx, self.h * sy)
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}x{})", self.x, self.y, self.w, self.h)
    }
}

/// Intersection over union of two boxes; 0 for disjoint or degenerate boxes.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let iw = a.right().min(b.right()) - a.x.max(b.x);
    let ih = a.bottom().min(b.bottom()) - a.y.max(b.y);
    if iw <= 0.0 || ih <= 0.0 {
        return 0.0;
    }
    let inter = iw * ih;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Target state: center, scale relative to the first-frame size, and that size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxState {
    pub cx: f64,
    pub cy: f64,
    pub s: f64,
    pub base_w: f64,
    pub base_h: f64,
}

impl BoxState {
    /// State with scale 1 whose base size is the size of `b`.
    pub fn from_box(b: &BBox) -> Self {
        let (cx, cy) = b.center();
        Self {
            cx,
            cy,
            s: 1.0,
            base_w: b.w,
            base_h: b.h,
        }
    }

    pub fn to_box(&self) -> BBox {
        BBox::from_center(self.cx, self.cy, self.s * self.base_w, self.s * self.base_h)
    }

    /// Fixed `h / w` ratio of the initial target.
    pub fn aspect(&self) -> f64 {
        self.base_h / self.base_w
    }

    pub fn with_center(&self, cx: f64, cy: f64) -> Self {
        Self { cx, cy, ..*self }
    }

    /// Mean of the current box width and height.
    pub fn mean_size(&self) -> f64 {
        0.5 * self.s * (self.base_w + self.base_h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Positive,
    Negative,
    Ignore,
}

/// `iou > pos_thresh` is positive, `iou < neg_thresh` negative, anything else ignored.
pub fn label_by_iou(candidates: &[BBox], gt: &BBox, pos_thresh: f64, neg_thresh: f64) -> Result<Vec<Label>> {
    if !(0.0 <= neg_thresh && neg_thresh <= pos_thresh && pos_thresh <= 1.0) {
        return Err(Error::Config(format!(
            "label thresholds must satisfy 0 <= neg <= pos <= 1 (neg={neg_thresh}, pos={pos_thresh})"
        )));
    }
    Ok(candidates
        .iter()
        .map(|c| {
            let o = iou(c, gt);
            if o > pos_thresh {
                Label::Positive
            } else if o < neg_thresh {
                Label::Negative
            } else {
                Label::Ignore
            }
        })
        .collect())
}

/// Parses one `x,y,w,h` line per frame.
pub fn read_ground_truth<R: BufRead>(reader: R) -> Result<Vec<BBox>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("ground truth line {}: {e}", lineno + 1)))?;
        if vals.len() != 4 {
            return Err(Error::Parse(format!(
                "ground truth line {}: expected 4 values, got {}",
                lineno + 1,
                vals.len()
            )));
        }
        out.push(BBox::new(vals[0], vals[1], vals[2], vals[3]));
    }
    Ok(out)
}

pub fn write_ground_truth<W: Write>(mut w: W, boxes: &[BBox]) -> Result<()> {
    for b in boxes {
        writeln!(w, "{},{},{},{}", b.x, b.y, b.w, b.h)?;
    }
    Ok(())
}
