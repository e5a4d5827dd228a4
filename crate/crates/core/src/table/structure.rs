//! Rule-based cell structure recognition inside a table region.

use crate::config::TableConfig;
use crate::document::{PageContent, TextBox};
use crate::geom::{cluster_values, median, BBox, Orientation};

use super::grid::{CellGrid, Region};
use super::TableError;

/// Axis-aligned rulings that run through `region`, split by orientation.
/// Horizontal entries are y values, vertical entries x values.
pub(crate) fn rulings_in(page: &PageContent, region: &BBox, cfg: &TableConfig) -> (Vec<f64>, Vec<f64>) {
    let outer = region.expand(cfg.region_slack_pt);
    let (mut hs, mut vs) = (Vec::new(), Vec::new());
    for seg in &page.ruling_segments {
        let Some((o, s)) = seg.normalized(cfg.axis_tolerance_pt) else { continue };
        match o {
            Orientation::Horizontal => {
                let inside = s.x1.min(outer.x1) - s.x0.max(outer.x0);
                if s.y0 >= outer.y0 && s.y0 <= outer.y1 && inside > cfg.region_slack_pt {
                    hs.push(s.y0);
                }
            }
            Orientation::Vertical => {
                let inside = s.y1.min(outer.y1) - s.y0.max(outer.y0);
                if s.x0 >= outer.x0 && s.x0 <= outer.x1 && inside > cfg.region_slack_pt {
                    vs.push(s.x0);
                }
            }
        }
    }
    (hs, vs)
}

/// Text boxes whose center lies inside the region.
pub(crate) fn boxes_in<'a>(page: &'a PageContent, region: &BBox) -> Vec<&'a TextBox> {
    page.text_boxes
        .iter()
        .filter(|b| {
            let (cx, cy) = b.bbox.center();
            region.contains_point(cx, cy)
        })
        .collect()
}

/// Turns candidate boundary positions into a strictly increasing lattice that
/// starts and ends on the region edges. Candidates within `merge` of each
/// other or of an edge collapse into it.
fn lattice(candidates: &[f64], lo: f64, hi: f64, merge: f64) -> Vec<f64> {
    let mut out = vec![lo];
    for v in cluster_values(candidates, merge) {
        if v - lo > merge && hi - v > merge && v - out.last().unwrap() > merge {
            out.push(v);
        }
    }
    out.push(hi);
    out
}

/// Borderless rows: boundaries between groups of text lines whose baselines
/// are more than `row_gap_factor` median box heights apart.
fn text_row_bounds(boxes: &[&TextBox], cfg: &TableConfig) -> Vec<f64> {
    if boxes.is_empty() {
        return Vec::new();
    }
    let heights: Vec<f64> = boxes.iter().map(|b| b.bbox.height()).collect();
    let h = median(&heights).unwrap_or(1.0);
    // Each line: (baseline, lowest bottom, highest top).
    let mut sorted: Vec<&TextBox> = boxes.to_vec();
    sorted.sort_by(|a, b| baseline(b).total_cmp(&baseline(a)));
    let mut lines: Vec<(f64, f64, f64)> = Vec::new();
    for b in sorted {
        let bl = baseline(b);
        match lines.last_mut() {
            Some(line) if (line.0 - bl).abs() < h / 2.0 => {
                line.1 = line.1.min(b.bbox.y0);
                line.2 = line.2.max(b.bbox.y1);
            }
            _ => lines.push((bl, b.bbox.y0, b.bbox.y1)),
        }
    }
    let mut bounds = Vec::new();
    // Track the lowest extent of the current row to place the boundary.
    let mut row_bottom = lines[0].1;
    for w in lines.windows(2) {
        let (upper, lower) = (w[0], w[1]);
        if upper.0 - lower.0 > cfg.row_gap_factor * h {
            let gap_mid = (row_bottom + lower.2) / 2.0;
            bounds.push(if row_bottom > lower.2 { gap_mid } else { (upper.0 + lower.0) / 2.0 });
            row_bottom = lower.1;
        } else {
            row_bottom = row_bottom.min(lower.1);
        }
    }
    bounds
}

fn baseline(b: &TextBox) -> f64 {
    b.bbox.y0 + 0.2 * b.font_size_pt
}

/// Borderless columns: midpoints of whitespace valleys in the horizontal
/// projection of all boxes that are wider than `col_valley_factor` median
/// character widths.
fn text_col_bounds(boxes: &[&TextBox], region: &BBox, cfg: &TableConfig) -> Vec<f64> {
    let widths: Vec<f64> = boxes
        .iter()
        .map(|b| b.bbox.width() / b.text.chars().count().max(1) as f64)
        .collect();
    let Some(char_w) = median(&widths) else { return Vec::new() };
    let mut spans: Vec<(f64, f64)> = boxes
        .iter()
        .map(|b| (b.bbox.x0.max(region.x0), b.bbox.x1.min(region.x1)))
        .collect();
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut bounds = Vec::new();
    let mut reach = spans[0].1;
    for &(x0, x1) in &spans[1..] {
        if x0 - reach > cfg.col_valley_factor * char_w {
            bounds.push((reach + x0) / 2.0);
        }
        reach = reach.max(x1);
    }
    bounds
}

/// Recognize the cell lattice of `region`. Each axis uses rulings when at
/// least two distinct ones run through the region and falls back to text
/// layout otherwise. Spans start as the full unit grid.
pub fn recognize_structure(page: &PageContent, region: &Region, cfg: &TableConfig) -> Result<CellGrid, TableError> {
    let bbox = region.bbox;
    if !bbox.is_proper() || !page.bounds().expand(cfg.region_slack_pt).contains(&bbox) {
        return Err(TableError::RegionOutsidePage);
    }
    let (hs, vs) = rulings_in(page, &bbox, cfg);
    let boxes = boxes_in(page, &bbox);
    if hs.is_empty() && vs.is_empty() && boxes.is_empty() {
        return Err(TableError::EmptyRegion);
    }
    let merge = cfg.ruling_merge_pt;
    let row_candidates = if cluster_values(&hs, merge).len() >= 2 { hs } else { text_row_bounds(&boxes, cfg) };
    let col_candidates = if cluster_values(&vs, merge).len() >= 2 { vs } else { text_col_bounds(&boxes, &bbox, cfg) };
    let rows = lattice(&row_candidates, bbox.y0, bbox.y1, merge);
    let cols = lattice(&col_candidates, bbox.x0, bbox.x1, merge);
    Ok(CellGrid::from_bounds(*region, rows, cols)?)
}
