//! Table region detection behind a pluggable detector interface.

use std::collections::BTreeMap;

use crate::config::TableConfig;
use crate::document::PageContent;
use crate::geom::{cluster_values, BBox, Orientation, Segment};

use super::grid::{Region, RegionSource};
use super::TableError;

pub trait TableDetector: Send + Sync {
    fn id(&self) -> &str;
    fn detect(&self, page: &PageContent) -> Vec<Region>;
}

/// Finds connected groups of rulings containing at least two distinct
/// horizontal and two distinct vertical lines.
#[derive(Debug, Clone, Default)]
pub struct RulingDetector {
    pub cfg: TableConfig,
}

impl TableDetector for RulingDetector {
    fn id(&self) -> &str {
        "ruling"
    }

    fn detect(&self, page: &PageContent) -> Vec<Region> {
        let cfg = &self.cfg;
        let segs: Vec<(Orientation, Segment)> = page
            .ruling_segments
            .iter()
            .filter_map(|s| s.normalized(cfg.axis_tolerance_pt))
            .collect();
        let mut parent: Vec<usize> = (0..segs.len()).collect();
        for i in 0..segs.len() {
            for j in i + 1..segs.len() {
                if touches(&segs[i], &segs[j], cfg.region_slack_pt) {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..segs.len() {
            let root = find(&mut parent, i);
            groups.entry(root).or_default().push(i);
        }
        let mut boxes: Vec<BBox> = Vec::new();
        for members in groups.values() {
            let ys: Vec<f64> = members.iter().filter(|&&i| segs[i].0 == Orientation::Horizontal).map(|&i| segs[i].1.y0).collect();
            let xs: Vec<f64> = members.iter().filter(|&&i| segs[i].0 == Orientation::Vertical).map(|&i| segs[i].1.x0).collect();
            if cluster_values(&ys, cfg.ruling_merge_pt).len() < 2 || cluster_values(&xs, cfg.ruling_merge_pt).len() < 2 {
                continue;
            }
            let bbox = members.iter().map(|&i| segs[i].1.bbox()).reduce(|a, b| a.union(&b)).unwrap();
            if let Some(b) = bbox.clamp_to(page.width_pt, page.height_pt) {
                boxes.push(b);
            }
        }
        // Union overlapping candidates until the set is pairwise disjoint.
        let mut merged = true;
        while merged {
            merged = false;
            'outer: for i in 0..boxes.len() {
                for j in i + 1..boxes.len() {
                    if boxes[i].overlaps(&boxes[j]) {
                        boxes[i] = boxes[i].union(&boxes[j]);
                        boxes.remove(j);
                        merged = true;
                        break 'outer;
                    }
                }
            }
        }
        boxes.sort_by(|a, b| b.y1.total_cmp(&a.y1).then(a.x0.total_cmp(&b.x0)));
        boxes.into_iter().map(|b| Region::new(page.page_index, b, RegionSource::Detected)).collect()
    }
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn touches(a: &(Orientation, Segment), b: &(Orientation, Segment), tol: f64) -> bool {
    let (sa, sb) = (a.1, b.1);
    match (a.0, b.0) {
        (Orientation::Horizontal, Orientation::Vertical) => cross(&sa, &sb, tol),
        (Orientation::Vertical, Orientation::Horizontal) => cross(&sb, &sa, tol),
        (Orientation::Horizontal, Orientation::Horizontal) => {
            (sa.y0 - sb.y0).abs() <= tol && sa.x0 <= sb.x1 + tol && sb.x0 <= sa.x1 + tol
        }
        (Orientation::Vertical, Orientation::Vertical) => {
            (sa.x0 - sb.x0).abs() <= tol && sa.y0 <= sb.y1 + tol && sb.y0 <= sa.y1 + tol
        }
    }
}

fn cross(h: &Segment, v: &Segment, tol: f64) -> bool {
    v.x0 >= h.x0 - tol && v.x0 <= h.x1 + tol && h.y0 >= v.y0 - tol && h.y0 <= v.y1 + tol
}

/// Named detectors; `baseline()` holds the ruling detector under `"ruling"`.
pub struct DetectorRegistry {
    detectors: BTreeMap<String, Box<dyn TableDetector>>,
}

impl DetectorRegistry {
    pub fn empty() -> Self {
        DetectorRegistry { detectors: BTreeMap::new() }
    }

    pub fn baseline(cfg: TableConfig) -> Self {
        let mut r = Self::empty();
        r.register(Box::new(RulingDetector { cfg }));
        r
    }

    pub fn register(&mut self, d: Box<dyn TableDetector>) {
        self.detectors.insert(d.id().to_string(), d);
    }

    pub fn ids(&self) -> Vec<String> {
        self.detectors.keys().cloned().collect()
    }
}

/// Runs detector `detector` over `page`.
pub fn detect_table_regions(page: &PageContent, detector: &str, registry: &DetectorRegistry) -> Result<Vec<Region>, TableError> {
    let d = registry
        .detectors
        .get(detector)
        .ok_or_else(|| TableError::UnknownDetector(detector.to_string()))?;
    Ok(d.detect(page))
}
