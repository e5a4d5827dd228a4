//! Cell content recognition from embedded text, with an optional OCR
//! adapter for cells that received no text.

use std::collections::BTreeMap;

use crate::document::PageContent;
use crate::geom::BBox;

use super::grid::CellGrid;
use super::TableError;

pub trait OcrAdapter: Send + Sync {
    fn id(&self) -> &str;
    /// Text found inside `rect`, if any.
    fn recognize(&self, page: &PageContent, rect: &BBox) -> Option<String>;
}

/// Stand-in OCR that reads embedded text boxes overlapping the rectangle,
/// which catches strings that spill across a cell edge.
#[derive(Debug, Clone, Default)]
pub struct EmbeddedTextOcr;

impl OcrAdapter for EmbeddedTextOcr {
    fn id(&self) -> &str {
        "embedded"
    }

    fn recognize(&self, page: &PageContent, rect: &BBox) -> Option<String> {
        let hits: Vec<String> = page
            .reading_order()
            .into_iter()
            .filter(|b| b.bbox.overlaps(rect))
            .map(|b| b.text)
            .collect();
        (!hits.is_empty()).then(|| hits.join(" "))
    }
}

pub struct OcrRegistry {
    adapters: BTreeMap<String, Box<dyn OcrAdapter>>,
}

impl OcrRegistry {
    pub fn empty() -> Self {
        OcrRegistry { adapters: BTreeMap::new() }
    }

    pub fn baseline() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(EmbeddedTextOcr));
        r
    }

    pub fn register(&mut self, a: Box<dyn OcrAdapter>) {
        self.adapters.insert(a.id().to_string(), a);
    }

    pub fn get(&self, id: &str) -> Result<&dyn OcrAdapter, TableError> {
        self.adapters
            .get(id)
            .map(|a| a.as_ref())
            .ok_or_else(|| TableError::UnknownAdapter(id.to_string()))
    }
}

/// Base cell `(row, col)` holding point `(x, y)`. Points on a shared
/// boundary go to the upper row and the left column.
pub fn cell_at(grid: &CellGrid, x: f64, y: f64) -> Option<(usize, usize)> {
    let col = (0..grid.cols()).find(|&c| {
        let (l, r) = grid.col_interval(c);
        l <= x && x <= r
    })?;
    let row = (0..grid.rows()).find(|&r| {
        let (b, t) = grid.row_interval(r);
        b <= y && y <= t
    })?;
    Some((row, col))
}

/// Fill every span with the text boxes centered inside it, in reading order.
/// Existing content is replaced. When `ocr` is given it runs only for spans
/// that got no box.
pub fn recognize_content(page: &PageContent, grid: &CellGrid, ocr: Option<&dyn OcrAdapter>) -> CellGrid {
    let mut texts: Vec<Vec<String>> = vec![Vec::new(); grid.spans.len()];
    for b in page.reading_order() {
        let (cx, cy) = b.bbox.center();
        if let Some(idx) = cell_at(grid, cx, cy).and_then(|(r, c)| grid.span_at(r, c)) {
            texts[idx].push(b.text);
        }
    }
    let mut out = grid.clone();
    for (i, span) in out.spans.iter_mut().enumerate() {
        span.content = if texts[i].is_empty() {
            ocr.and_then(|o| o.recognize(page, &grid.span_rect(span))).unwrap_or_default()
        } else {
            texts[i].join(" ")
        };
    }
    out
}
