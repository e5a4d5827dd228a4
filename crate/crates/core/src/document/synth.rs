//! Synthetic PDF generator.
//!
//! Writes single-font (Courier, WinAnsi) PDFs with text placed at known
//! positions and straight ruling lines. Because Courier is monospaced, the
//! generator knows the exact box every string occupies, which makes its
//! layout an independent oracle for the parser and the recognizers.

use lopdf::content::{Content, Operation};
use lopdf::{dictionary, Document, Object, Stream, StringFormat};
use thiserror::Error;

use crate::geom::{BBox, Segment};

/// Courier advance width as a fraction of the font size.
pub const COURIER_ADVANCE: f64 = 0.6;

#[derive(Debug, Error, PartialEq)]
pub enum SynthError {
    #[error("character {0:?} cannot be encoded in WinAnsi")]
    Unencodable(char),
    #[error("text must be non-empty and free of surrounding whitespace: {0:?}")]
    BadText(String),
    #[error("pdf writer failed: {0}")]
    Writer(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlacedText {
    pub x: f64,
    pub baseline: f64,
    pub size: f64,
    pub text: String,
}

impl PlacedText {
    /// The box the parser is expected to report for this string.
    pub fn expected_bbox(&self) -> BBox {
        let w = COURIER_ADVANCE * self.size * self.text.chars().count() as f64;
        BBox::new(self.x, self.baseline - 0.2 * self.size, self.x + w, self.baseline + 0.8 * self.size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PageSpec {
    pub width: f64,
    pub height: f64,
    pub texts: Vec<PlacedText>,
    pub lines: Vec<Segment>,
}

impl PageSpec {
    pub fn text(&mut self, x: f64, baseline: f64, size: f64, text: impl Into<String>) -> &mut Self {
        self.texts.push(PlacedText { x, baseline, size, text: text.into() });
        self
    }

    /// Places `text` so that its box is centered on `(cx, cy)`.
    pub fn centered_text(&mut self, cx: f64, cy: f64, size: f64, text: impl Into<String>) -> &mut Self {
        let text = text.into();
        let w = COURIER_ADVANCE * size * text.chars().count() as f64;
        self.text(cx - w / 2.0, cy - 0.3 * size, size, text)
    }

    pub fn line(&mut self, x0: f64, y0: f64, x1: f64, y1: f64) -> &mut Self {
        self.lines.push(Segment::new(x0, y0, x1, y1));
        self
    }
}

/// Cell geometry of a generated table. Rows are numbered top to bottom.
#[derive(Debug, Clone, PartialEq)]
pub struct TableLayout {
    pub outer: BBox,
    /// Increasing y coordinates of the horizontal boundaries.
    pub row_bounds: Vec<f64>,
    /// Increasing x coordinates of the vertical boundaries.
    pub col_bounds: Vec<f64>,
    pub cells: Vec<Vec<String>>,
}

impl PageSpec {
    /// Fully ruled table with its top-left corner at `(x, top)`.
    pub fn ruled_table(
        &mut self,
        x: f64,
        top: f64,
        col_widths: &[f64],
        row_height: f64,
        font_size: f64,
        cells: &[Vec<String>],
    ) -> TableLayout {
        let rows = cells.len();
        let mut col_bounds = vec![x];
        for w in col_widths {
            col_bounds.push(col_bounds.last().unwrap() + w);
        }
        let bottom = top - row_height * rows as f64;
        let row_bounds: Vec<f64> = (0..=rows).map(|i| bottom + row_height * i as f64).collect();
        let right = *col_bounds.last().unwrap();
        for &y in &row_bounds {
            self.line(x, y, right, y);
        }
        for &cx in &col_bounds {
            self.line(cx, bottom, cx, top);
        }
        for (r, row) in cells.iter().enumerate() {
            let cy = top - row_height * (r as f64 + 0.5);
            for (c, s) in row.iter().enumerate() {
                if s.is_empty() {
                    continue;
                }
                let cx = (col_bounds[c] + col_bounds[c + 1]) / 2.0;
                self.centered_text(cx, cy, font_size, s.clone());
            }
        }
        TableLayout {
            outer: BBox::new(x, bottom, right, top),
            row_bounds,
            col_bounds,
            cells: cells.to_vec(),
        }
    }

    /// Table without any rulings; cells left-aligned in their column, columns
    /// separated by `gap` points of whitespace beyond the widest cell.
    pub fn borderless_table(&mut self, x: f64, top: f64, gap: f64, row_pitch: f64, font_size: f64, cells: &[Vec<String>]) -> TableLayout {
        let ncols = cells.iter().map(Vec::len).max().unwrap_or(0);
        let char_w = COURIER_ADVANCE * font_size;
        let mut col_x = vec![x];
        for c in 0..ncols {
            let widest = cells.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0);
            col_x.push(col_x[c] + widest as f64 * char_w + gap);
        }
        for (r, row) in cells.iter().enumerate() {
            let baseline = top - row_pitch * r as f64 - 0.8 * font_size;
            for (c, s) in row.iter().enumerate() {
                if !s.is_empty() {
                    self.text(col_x[c], baseline, font_size, s.clone());
                }
            }
        }
        let bottom = top - row_pitch * (cells.len().max(1) as f64 - 1.0) - font_size;
        TableLayout {
            outer: BBox::new(x, bottom, col_x[ncols] - gap, top),
            row_bounds: Vec::new(),
            col_bounds: col_x,
            cells: cells.to_vec(),
        }
    }
}

impl PageSpec {
    /// Map frame with tick labels centered in the 8% margin bands: longitude
    /// labels `(x, text)` below the frame, latitude labels `(y, text)` left of it.
    pub fn map_frame(&mut self, frame: BBox, lon_labels: &[(f64, String)], lat_labels: &[(f64, String)], size: f64) -> &mut Self {
        self.line(frame.x0, frame.y0, frame.x1, frame.y0)
            .line(frame.x0, frame.y1, frame.x1, frame.y1)
            .line(frame.x0, frame.y0, frame.x0, frame.y1)
            .line(frame.x1, frame.y0, frame.x1, frame.y1);
        let below = frame.y0 - 0.04 * frame.height();
        let left = frame.x0 - 0.04 * frame.width();
        for (x, s) in lon_labels {
            self.centered_text(*x, below, size, s.clone());
        }
        for (y, s) in lat_labels {
            self.centered_text(left, *y, size, s.clone());
        }
        self
    }
}

/// Builder for a multi-page synthetic document.
#[derive(Debug, Clone, Default)]
pub struct PdfBuilder {
    pub pages: Vec<PageSpec>,
    pub title: Option<String>,
    pub author: Option<String>,
}

impl PdfBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn page(&mut self, width: f64, height: f64) -> &mut PageSpec {
        self.pages.push(PageSpec { width, height, texts: Vec::new(), lines: Vec::new() });
        self.pages.last_mut().unwrap()
    }

    pub fn info(&mut self, title: Option<&str>, author: Option<&str>) -> &mut Self {
        self.title = title.map(str::to_string);
        self.author = author.map(str::to_string);
        self
    }

    pub fn build(&self) -> Result<Vec<u8>, SynthError> {
        let mut doc = Document::with_version("1.5");
        let pages_id = doc.new_object_id();
        let font_id = doc.add_object(dictionary! {
            "Type" => "Font",
            "Subtype" => "Type1",
            "BaseFont" => "Courier",
            "Encoding" => "WinAnsiEncoding",
        });
        let resources_id = doc.add_object(dictionary! {
            "Font" => dictionary! { "F1" => font_id },
        });
        let mut kids = Vec::new();
        for spec in &self.pages {
            let mut ops = Vec::new();
            if !spec.lines.is_empty() {
                ops.push(Operation::new("w", vec![real(0.5)]));
                for s in &spec.lines {
                    ops.push(Operation::new("m", vec![real(s.x0), real(s.y0)]));
                    ops.push(Operation::new("l", vec![real(s.x1), real(s.y1)]));
                    ops.push(Operation::new("S", vec![]));
                }
            }
            for t in &spec.texts {
                if t.text.is_empty() || t.text.trim() != t.text {
                    return Err(SynthError::BadText(t.text.clone()));
                }
                let bytes = win_ansi(&t.text)?;
                ops.push(Operation::new("BT", vec![]));
                ops.push(Operation::new("Tf", vec!["F1".into(), real(t.size)]));
                ops.push(Operation::new("Td", vec![real(t.x), real(t.baseline)]));
                ops.push(Operation::new("Tj", vec![Object::String(bytes, StringFormat::Literal)]));
                ops.push(Operation::new("ET", vec![]));
            }
            let content = Content { operations: ops }.encode().map_err(|e| SynthError::Writer(e.to_string()))?;
            let content_id = doc.add_object(Stream::new(dictionary! {}, content));
            let page_id = doc.add_object(dictionary! {
                "Type" => "Page",
                "Parent" => pages_id,
                "Contents" => content_id,
                "Resources" => resources_id,
                "MediaBox" => vec![0.into(), 0.into(), real(spec.width), real(spec.height)],
            });
            kids.push(page_id.into());
        }
        let count = kids.len() as i64;
        doc.objects.insert(
            pages_id,
            Object::Dictionary(dictionary! { "Type" => "Pages", "Kids" => kids, "Count" => count }),
        );
        let catalog_id = doc.add_object(dictionary! { "Type" => "Catalog", "Pages" => pages_id });
        doc.trailer.set("Root", catalog_id);
        if self.title.is_some() || self.author.is_some() {
            let mut info = lopdf::Dictionary::new();
            if let Some(t) = &self.title {
                info.set("Title", Object::String(win_ansi(t)?, StringFormat::Literal));
            }
            if let Some(a) = &self.author {
                info.set("Author", Object::String(win_ansi(a)?, StringFormat::Literal));
            }
            let info_id = doc.add_object(info);
            doc.trailer.set("Info", info_id);
        }
        let mut out = Vec::new();
        doc.save_to(&mut out).map_err(|e| SynthError::Writer(e.to_string()))?;
        Ok(out)
    }
}

fn real(v: f64) -> Object {
    Object::Real(v as f32)
}

/// Latin-1 subset of WinAnsi. Control characters are rejected.
fn win_ansi(s: &str) -> Result<Vec<u8>, SynthError> {
    s.chars()
        .map(|c| match c as u32 {
            0x20..=0x7E | 0xA0..=0xFF => Ok(c as u32 as u8),
            _ => Err(SynthError::Unencodable(c)),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_unencodable_text() {
        let mut b = PdfBuilder::new();
        b.page(200.0, 200.0).text(10.0, 10.0, 10.0, "snow ☃");
        assert_eq!(b.build(), Err(SynthError::Unencodable('☃')));
    }

    #[test]
    fn rejects_padded_text() {
        let mut b = PdfBuilder::new();
        b.page(200.0, 200.0).text(10.0, 10.0, 10.0, " x");
        assert!(matches!(b.build(), Err(SynthError::BadText(_))));
    }

    #[test]
    fn ruled_table_layout() {
        let mut b = PdfBuilder::new();
        let cells = vec![vec!["a".to_string(), "b".to_string()]; 3];
        let layout = b.page(600.0, 800.0).ruled_table(100.0, 700.0, &[50.0, 80.0], 20.0, 10.0, &cells);
        assert_eq!(layout.outer, BBox::new(100.0, 640.0, 230.0, 700.0));
        assert_eq!(layout.row_bounds, vec![640.0, 660.0, 680.0, 700.0]);
        assert_eq!(b.pages[0].lines.len(), 4 + 3);
        assert_eq!(b.pages[0].texts.len(), 6);
    }
}
