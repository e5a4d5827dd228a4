//! Cell lattice: row/column boundaries plus a span partition of the base
//! cells. Every operation is copy-on-write and re-checks the partition.
//!
//! Rows are numbered top to bottom while `row_bounds` holds y coordinates in
//! increasing order (PDF y grows upward), so row `r` of `R` occupies
//! `[row_bounds[R-1-r], row_bounds[R-r]]`.

use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geom::{median, BBox};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionSource {
    Detected,
    UserDrawn,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub page_index: usize,
    pub bbox: BBox,
    pub source: RegionSource,
}

impl Region {
    pub fn new(page_index: usize, bbox: BBox, source: RegionSource) -> Self {
        Region { page_index, bbox, source }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellSpan {
    pub row0: usize,
    pub col0: usize,
    pub row_extent: usize,
    pub col_extent: usize,
    #[serde(default)]
    pub content: String,
}

impl CellSpan {
    pub fn unit(row: usize, col: usize) -> Self {
        CellSpan { row0: row, col0: col, row_extent: 1, col_extent: 1, content: String::new() }
    }

    pub fn is_unit(&self) -> bool {
        self.row_extent == 1 && self.col_extent == 1
    }

    pub fn rows(&self) -> RangeInclusive<usize> {
        self.row0..=self.row0 + self.row_extent - 1
    }

    pub fn cols(&self) -> RangeInclusive<usize> {
        self.col0..=self.col0 + self.col_extent - 1
    }

    pub fn covers(&self, row: usize, col: usize) -> bool {
        self.rows().contains(&row) && self.cols().contains(&col)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("rectangle partially overlaps a larger span")]
    PartialSpanOverlap,
    #[error("span is already a single cell")]
    AlreadyUnit,
    #[error("index {index} out of range (limit {limit})")]
    IndexOutOfRange { index: usize, limit: usize },
    #[error("a grid must keep at least one row and one column")]
    CannotDeleteLast,
    #[error("invalid lattice: {0}")]
    InvalidLattice(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub region: Region,
    pub row_bounds: Vec<f64>,
    pub col_bounds: Vec<f64>,
    pub spans: Vec<CellSpan>,
}

impl CellGrid {
    /// Unit-span grid over the given boundaries. Bounds must be strictly
    /// increasing with at least two entries each; the region bbox is set to
    /// their extent.
    pub fn from_bounds(region: Region, row_bounds: Vec<f64>, col_bounds: Vec<f64>) -> Result<Self, GridError> {
        check_bounds("row", &row_bounds)?;
        check_bounds("column", &col_bounds)?;
        let (rows, cols) = (row_bounds.len() - 1, col_bounds.len() - 1);
        let spans = (0..rows).flat_map(|r| (0..cols).map(move |c| CellSpan::unit(r, c))).collect();
        let mut g = CellGrid { region, row_bounds, col_bounds, spans };
        g.sync_region();
        Ok(g)
    }

    /// One cell covering the whole region.
    pub fn single(region: Region) -> Self {
        let b = region.bbox;
        CellGrid::from_bounds(region, vec![b.y0, b.y1], vec![b.x0, b.x1])
            .expect("region bbox must be proper")
    }

    pub fn rows(&self) -> usize {
        self.row_bounds.len() - 1
    }

    pub fn cols(&self) -> usize {
        self.col_bounds.len() - 1
    }

    /// `(bottom, top)` of row `r` (top-down numbering).
    pub fn row_interval(&self, r: usize) -> (f64, f64) {
        let n = self.rows();
        (self.row_bounds[n - 1 - r], self.row_bounds[n - r])
    }

    pub fn col_interval(&self, c: usize) -> (f64, f64) {
        (self.col_bounds[c], self.col_bounds[c + 1])
    }

    pub fn span_rect(&self, span: &CellSpan) -> BBox {
        let (bottom, _) = self.row_interval(span.row0 + span.row_extent - 1);
        let (_, top) = self.row_interval(span.row0);
        let (left, _) = self.col_interval(span.col0);
        let (_, right) = self.col_interval(span.col0 + span.col_extent - 1);
        BBox::new(left, bottom, right, top)
    }

    /// Index of the span covering base cell `(row, col)`.
    pub fn span_at(&self, row: usize, col: usize) -> Option<usize> {
        self.spans.iter().position(|s| s.covers(row, col))
    }

    /// Verifies the lattice and span partition invariants.
    pub fn validate(&self) -> Result<(), GridError> {
        check_bounds("row", &self.row_bounds)?;
        check_bounds("column", &self.col_bounds)?;
        let b = self.region.bbox;
        if b.y0 != self.row_bounds[0]
            || b.y1 != *self.row_bounds.last().unwrap()
            || b.x0 != self.col_bounds[0]
            || b.x1 != *self.col_bounds.last().unwrap()
        {
            return Err(GridError::InvalidLattice("bounds do not tile the region".into()));
        }
        let (rows, cols) = (self.rows(), self.cols());
        let mut owner = vec![false; rows * cols];
        for s in &self.spans {
            if s.row_extent == 0 || s.col_extent == 0 || s.row0 + s.row_extent > rows || s.col0 + s.col_extent > cols {
                return Err(GridError::InvalidLattice(format!("span {s:?} outside {rows}x{cols} grid")));
            }
            for r in s.rows() {
                for c in s.cols() {
                    let cell = &mut owner[r * cols + c];
                    if *cell {
                        return Err(GridError::InvalidLattice(format!("cell ({r},{c}) covered twice")));
                    }
                    *cell = true;
                }
            }
        }
        if owner.iter().any(|o| !o) {
            return Err(GridError::InvalidLattice("uncovered base cell".into()));
        }
        Ok(())
    }

    fn sync_region(&mut self) {
        self.region.bbox = BBox::new(
            self.col_bounds[0],
            self.row_bounds[0],
            *self.col_bounds.last().unwrap(),
            *self.row_bounds.last().unwrap(),
        );
    }

    fn canonicalize(mut self) -> Result<Self, GridError> {
        self.spans.sort_by_key(|s| (s.row0, s.col0));
        self.sync_region();
        self.validate()?;
        Ok(self)
    }

    /// Merge every span inside the rectangle into one. The rectangle must be
    /// covered by whole spans. Non-empty contents are joined in reading order
    /// with single spaces.
    pub fn merge_cells(&self, rows: RangeInclusive<usize>, cols: RangeInclusive<usize>) -> Result<Self, GridError> {
        let (r0, r1, c0, c1) = (*rows.start(), *rows.end(), *cols.start(), *cols.end());
        if r1 < r0 || r1 >= self.rows() {
            return Err(GridError::IndexOutOfRange { index: r1.max(r0), limit: self.rows() });
        }
        if c1 < c0 || c1 >= self.cols() {
            return Err(GridError::IndexOutOfRange { index: c1.max(c0), limit: self.cols() });
        }
        let inside = |s: &CellSpan| s.row0 >= r0 && s.row0 + s.row_extent - 1 <= r1 && s.col0 >= c0 && s.col0 + s.col_extent - 1 <= c1;
        let touches = |s: &CellSpan| s.row0 <= r1 && s.row0 + s.row_extent - 1 >= r0 && s.col0 <= c1 && s.col0 + s.col_extent - 1 >= c0;
        let mut merged_content = Vec::new();
        let mut keep = Vec::with_capacity(self.spans.len());
        for s in &self.spans {
            if touches(s) {
                if !inside(s) {
                    return Err(GridError::PartialSpanOverlap);
                }
                if !s.content.is_empty() {
                    merged_content.push(s.content.clone());
                }
            } else {
                keep.push(s.clone());
            }
        }
        keep.push(CellSpan {
            row0: r0,
            col0: c0,
            row_extent: r1 - r0 + 1,
            col_extent: c1 - c0 + 1,
            content: merged_content.join(" "),
        });
        CellGrid { spans: keep, ..self.clone() }.canonicalize()
    }

    /// Replace span `index` with its unit cells; the content stays in the
    /// top-left cell.
    pub fn split_cell(&self, index: usize) -> Result<Self, GridError> {
        let s = self.spans.get(index).ok_or(GridError::IndexOutOfRange { index, limit: self.spans.len() })?;
        if s.is_unit() {
            return Err(GridError::AlreadyUnit);
        }
        let mut spans = self.spans.clone();
        let s = spans.remove(index);
        for r in s.rows() {
            for c in s.cols() {
                let mut u = CellSpan::unit(r, c);
                if r == s.row0 && c == s.col0 {
                    u.content = s.content.clone();
                }
                spans.push(u);
            }
        }
        CellGrid { spans, ..self.clone() }.canonicalize()
    }

    fn median_row_height(&self) -> f64 {
        let h: Vec<f64> = self.row_bounds.windows(2).map(|w| w[1] - w[0]).collect();
        median(&h).unwrap_or(1.0)
    }

    fn median_col_width(&self) -> f64 {
        let w: Vec<f64> = self.col_bounds.windows(2).map(|w| w[1] - w[0]).collect();
        median(&w).unwrap_or(1.0)
    }

    /// Insert a row. For `at < rows()` row `at` is split at its vertical
    /// midpoint and the lower half becomes the new row `at + 1`; for
    /// `at == rows()` a row of median height is appended below the table.
    pub fn add_row(&self, at: usize) -> Result<Self, GridError> {
        let n = self.rows();
        if at > n {
            return Err(GridError::IndexOutOfRange { index: at, limit: n });
        }
        let mut g = self.clone();
        if at == n {
            let y = self.row_bounds[0] - self.median_row_height();
            g.row_bounds.insert(0, y);
            g.spans.extend((0..self.cols()).map(|c| CellSpan::unit(n, c)));
            return g.canonicalize();
        }
        let (bottom, top) = self.row_interval(at);
        g.row_bounds.insert(n - at, (bottom + top) / 2.0);
        let mut fresh = Vec::new();
        for s in &mut g.spans {
            if s.row0 > at {
                s.row0 += 1;
            } else if s.rows().contains(&at) {
                if s.row_extent > 1 {
                    s.row_extent += 1;
                } else {
                    fresh.push(CellSpan { row0: at + 1, col0: s.col0, row_extent: 1, col_extent: s.col_extent, content: String::new() });
                }
            }
        }
        g.spans.extend(fresh);
        g.canonicalize()
    }

    /// Remove row `row`. An edge row shrinks the region; an interior row's
    /// area goes to the row above. Spans crossing the row shrink by one.
    pub fn delete_row(&self, row: usize) -> Result<Self, GridError> {
        let n = self.rows();
        if row >= n {
            return Err(GridError::IndexOutOfRange { index: row, limit: n });
        }
        if n == 1 {
            return Err(GridError::CannotDeleteLast);
        }
        let mut g = self.clone();
        if row == n - 1 {
            g.row_bounds.remove(0);
        } else {
            // Top edge for row 0, otherwise the boundary above `row`.
            g.row_bounds.remove(n - row);
        }
        g.spans = shrink_axis(&self.spans, row, |s| (&mut s.row0, &mut s.row_extent));
        g.canonicalize()
    }

    /// Column analogue of [`CellGrid::add_row`]: the right half of a split
    /// becomes column `at + 1`; `at == cols()` appends on the right.
    pub fn add_column(&self, at: usize) -> Result<Self, GridError> {
        let n = self.cols();
        if at > n {
            return Err(GridError::IndexOutOfRange { index: at, limit: n });
        }
        let mut g = self.clone();
        if at == n {
            let x = self.col_bounds[n] + self.median_col_width();
            g.col_bounds.push(x);
            g.spans.extend((0..self.rows()).map(|r| CellSpan::unit(r, n)));
            return g.canonicalize();
        }
        let (left, right) = self.col_interval(at);
        g.col_bounds.insert(at + 1, (left + right) / 2.0);
        let mut fresh = Vec::new();
        for s in &mut g.spans {
            if s.col0 > at {
                s.col0 += 1;
            } else if s.cols().contains(&at) {
                if s.col_extent > 1 {
                    s.col_extent += 1;
                } else {
                    fresh.push(CellSpan { row0: s.row0, col0: at + 1, row_extent: s.row_extent, col_extent: 1, content: String::new() });
                }
            }
        }
        g.spans.extend(fresh);
        g.canonicalize()
    }

    /// Column analogue of [`CellGrid::delete_row`]; interior columns are
    /// absorbed by their left neighbour.
    pub fn delete_column(&self, col: usize) -> Result<Self, GridError> {
        let n = self.cols();
        if col >= n {
            return Err(GridError::IndexOutOfRange { index: col, limit: n });
        }
        if n == 1 {
            return Err(GridError::CannotDeleteLast);
        }
        let mut g = self.clone();
        if col == 0 {
            g.col_bounds.remove(0);
        } else {
            g.col_bounds.remove(col + usize::from(col == n - 1));
        }
        g.spans = shrink_axis(&self.spans, col, |s| (&mut s.col0, &mut s.col_extent));
        g.canonicalize()
    }

    pub fn with_content(&self, index: usize, text: impl Into<String>) -> Result<Self, GridError> {
        let mut g = self.clone();
        let limit = g.spans.len();
        g.spans.get_mut(index).ok_or(GridError::IndexOutOfRange { index, limit })?.content = text.into();
        Ok(g)
    }

    pub fn clear_contents(&mut self) {
        for s in &mut self.spans {
            s.content.clear();
        }
    }

    /// `R x C` matrix where each span's content fills every base cell it covers.
    pub fn to_matrix(&self) -> Vec<Vec<String>> {
        let mut m = vec![vec![String::new(); self.cols()]; self.rows()];
        for s in &self.spans {
            for r in s.rows() {
                for c in s.cols() {
                    m[r][c] = s.content.clone();
                }
            }
        }
        m
    }
}

/// Drops the unit-extent spans on line `index` of one axis, shrinks the spans
/// crossing it, and shifts later spans back by one.
fn shrink_axis(spans: &[CellSpan], index: usize, axis: impl Fn(&mut CellSpan) -> (&mut usize, &mut usize)) -> Vec<CellSpan> {
    spans
        .iter()
        .filter_map(|s| {
            let mut s = s.clone();
            let (start, extent) = axis(&mut s);
            if *start > index {
                *start -= 1;
            } else if *start + *extent > index {
                if *extent == 1 {
                    return None;
                }
                *extent -= 1;
            }
            Some(s)
        })
        .collect()
}

fn check_bounds(kind: &str, b: &[f64]) -> Result<(), GridError> {
    if b.len() < 2 {
        return Err(GridError::InvalidLattice(format!("{kind} bounds need at least two entries")));
    }
    if b.iter().any(|v| !v.is_finite()) || b.windows(2).any(|w| w[1] <= w[0]) {
        return Err(GridError::InvalidLattice(format!("{kind} bounds must be strictly increasing")));
    }
    Ok(())
}
