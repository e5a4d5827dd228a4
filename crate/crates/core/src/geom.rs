//! Page-space geometry. All coordinates are PDF points with the origin at the
//! bottom-left corner of the page.

use serde::{Deserialize, Serialize};

/// Axis-aligned rectangle `(x0, y0, x1, y1)`. Serialized as a 4-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<[f64; 4]> for BBox {
    fn from(v: [f64; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        [b.x0, b.y0, b.x1, b.y1]
    }
}

impl BBox {
    pub const fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        BBox { x0, y0, x1, y1 }
    }

    /// Positive width and height.
    pub fn is_proper(&self) -> bool {
        self.x0 < self.x1 && self.y0 < self.y1 && self.x0.is_finite() && self.y1.is_finite()
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn center(&self) -> (f64, f64) {
        ((self.x0 + self.x1) / 2.0, (self.y0 + self.y1) / 2.0)
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }

    pub fn contains(&self, other: &BBox) -> bool {
        other.x0 >= self.x0 && other.x1 <= self.x1 && other.y0 >= self.y0 && other.y1 <= self.y1
    }

    /// Positive-area intersection test; touching edges do not count.
    pub fn overlaps(&self, other: &BBox) -> bool {
        self.x0 < other.x1 && other.x0 < self.x1 && self.y0 < other.y1 && other.y0 < self.y1
    }

    pub fn union(&self, other: &BBox) -> BBox {
        BBox::new(
            self.x0.min(other.x0),
            self.y0.min(other.y0),
            self.x1.max(other.x1),
            self.y1.max(other.y1),
        )
    }

    pub fn expand(&self, by: f64) -> BBox {
        BBox::new(self.x0 - by, self.y0 - by, self.x1 + by, self.y1 + by)
    }

    /// Clamp into `[0,w]x[0,h]`. Returns `None` if nothing proper remains.
    pub fn clamp_to(&self, w: f64, h: f64) -> Option<BBox> {
        let b = BBox::new(
            self.x0.clamp(0.0, w),
            self.y0.clamp(0.0, h),
            self.x1.clamp(0.0, w),
            self.y1.clamp(0.0, h),
        );
        b.is_proper().then_some(b)
    }
}

/// A straight line segment `(x0, y0, x1, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
pub struct Segment {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl From<[f64; 4]> for Segment {
    fn from(v: [f64; 4]) -> Self {
        Segment { x0: v[0], y0: v[1], x1: v[2], y1: v[3] }
    }
}

impl From<Segment> for [f64; 4] {
    fn from(s: Segment) -> Self {
        [s.x0, s.y0, s.x1, s.y1]
    }
}

/// Axis classification of a ruling segment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Horizontal,
    Vertical,
}

impl Segment {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Segment { x0, y0, x1, y1 }
    }

    pub fn length(&self) -> f64 {
        (self.x1 - self.x0).hypot(self.y1 - self.y0)
    }

    /// Orientation if the segment is axis-aligned within `tol`.
    pub fn orientation(&self, tol: f64) -> Option<Orientation> {
        let dx = (self.x1 - self.x0).abs();
        let dy = (self.y1 - self.y0).abs();
        if dy <= tol && dx > tol {
            Some(Orientation::Horizontal)
        } else if dx <= tol && dy > tol {
            Some(Orientation::Vertical)
        } else {
            None
        }
    }

    /// Returns the segment with endpoints ordered and the minor axis snapped to
    /// its mean, so horizontal segments run left to right and vertical ones
    /// bottom to top.
    pub fn normalized(&self, tol: f64) -> Option<(Orientation, Segment)> {
        let o = self.orientation(tol)?;
        Some(match o {
            Orientation::Horizontal => {
                let y = (self.y0 + self.y1) / 2.0;
                (o, Segment::new(self.x0.min(self.x1), y, self.x0.max(self.x1), y))
            }
            Orientation::Vertical => {
                let x = (self.x0 + self.x1) / 2.0;
                (o, Segment::new(x, self.y0.min(self.y1), x, self.y0.max(self.y1)))
            }
        })
    }

    pub fn bbox(&self) -> BBox {
        BBox::new(
            self.x0.min(self.x1),
            self.y0.min(self.y1),
            self.x0.max(self.x1),
            self.y0.max(self.y1),
        )
    }
}

/// Median of a slice; `None` when empty. NaNs sort last.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 })
}

/// Groups sorted-or-unsorted scalar values into clusters where neighbours are
/// at most `tol` apart, returning each cluster's mean in increasing order.
pub fn cluster_values(values: &[f64], tol: f64) -> Vec<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    v.sort_by(|a, b| a.total_cmp(b));
    let mut out = Vec::new();
    let mut group: Vec<f64> = Vec::new();
    for x in v {
        if let Some(&last) = group.last() {
            if x - last > tol {
                out.push(group.iter().sum::<f64>() / group.len() as f64);
                group.clear();
            }
        }
        group.push(x);
    }
    if !group.is_empty() {
        out.push(group.iter().sum::<f64>() / group.len() as f64);
    }
    out
}
