use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::geom::{BBox, Segment};

pub type UserId = String;

/// A positioned run of text on a page.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextBox {
    pub bbox: BBox,
    pub text: String,
    pub font_size_pt: f64,
}

impl TextBox {
    pub fn new(bbox: BBox, text: impl Into<String>, font_size_pt: f64) -> Self {
        TextBox { bbox, text: text.into(), font_size_pt }
    }

    pub fn is_valid(&self) -> bool {
        self.bbox.is_proper() && !self.text.is_empty() && self.font_size_pt > 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageContent {
    pub page_index: usize,
    pub width_pt: f64,
    pub height_pt: f64,
    pub text_boxes: Vec<TextBox>,
    pub ruling_segments: Vec<Segment>,
}

impl PageContent {
    pub fn blank(page_index: usize, width_pt: f64, height_pt: f64) -> Self {
        PageContent {
            page_index,
            width_pt,
            height_pt,
            text_boxes: Vec::new(),
            ruling_segments: Vec::new(),
        }
    }

    pub fn bounds(&self) -> BBox {
        BBox::new(0.0, 0.0, self.width_pt, self.height_pt)
    }

    /// Text boxes grouped into lines, top line first, each line left to right.
    ///
    /// Two boxes share a line when their vertical centers differ by less than
    /// half the smaller box height.
    pub fn lines(&self) -> Vec<Vec<&TextBox>> {
        let mut boxes: Vec<&TextBox> = self.text_boxes.iter().collect();
        boxes.sort_by(|a, b| {
            b.bbox
                .center()
                .1
                .total_cmp(&a.bbox.center().1)
                .then(a.bbox.x0.total_cmp(&b.bbox.x0))
        });
        let mut lines: Vec<Vec<&TextBox>> = Vec::new();
        for b in boxes {
            let cy = b.bbox.center().1;
            let joins = lines.last().is_some_and(|line| {
                let anchor = line[0];
                let tol = anchor.bbox.height().min(b.bbox.height()) / 2.0;
                (anchor.bbox.center().1 - cy).abs() < tol
            });
            if joins {
                lines.last_mut().unwrap().push(b);
            } else {
                lines.push(vec![b]);
            }
        }
        for line in &mut lines {
            line.sort_by(|a, b| a.bbox.x0.total_cmp(&b.bbox.x0));
        }
        lines
    }

    /// Text boxes in reading order: top to bottom, then left to right.
    pub fn reading_order(&self) -> Vec<TextBox> {
        self.lines().into_iter().flatten().cloned().collect()
    }

    /// Concatenated reading-order text: boxes on one line joined by a space,
    /// lines joined by a newline. Annotation offsets index into this string
    /// by `char`.
    pub fn text(&self) -> String {
        self.lines()
            .iter()
            .map(|line| line.iter().map(|b| b.text.as_str()).collect::<Vec<_>>().join(" "))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

/// Bibliographic fields of a document.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MetaInfo {
    pub title: String,
    pub authors: Vec<String>,
    pub venue: String,
    pub year: Option<i32>,
    #[serde(rename = "abstract")]
    pub abstract_text: String,
}

pub const MIN_YEAR: i32 = 1500;
pub const MAX_YEAR: i32 = 2100;

impl MetaInfo {
    pub fn year_in_range(year: i32) -> bool {
        (MIN_YEAR..=MAX_YEAR).contains(&year)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocStatus {
    Parsing,
    Ready,
    Failed,
}

/// An ingested PDF and its bookkeeping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentRecord {
    pub doc_id: String,
    pub project_id: String,
    pub page_count: usize,
    pub pages: Vec<PageContent>,
    pub meta: MetaInfo,
    pub import_user: UserId,
    pub import_time: DateTime<Utc>,
    pub last_editor: Option<UserId>,
    pub last_edit_time: Option<DateTime<Utc>>,
    pub principal: Option<UserId>,
    pub status: DocStatus,
    /// Original upload name, if known.
    #[serde(default)]
    pub file_name: Option<String>,
}

impl DocumentRecord {
    pub fn touch(&mut self, user: &str, now: DateTime<Utc>) {
        self.last_editor = Some(user.to_string());
        self.last_edit_time = Some(now.max(self.import_time));
    }
}
