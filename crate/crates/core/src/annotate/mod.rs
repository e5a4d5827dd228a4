//! Keyword highlighting from project label sets (dictionaries and regex
//! rules) plus manual annotations.
//!
//! Spans are `char` offsets into [`PageContent::text`].

use std::collections::HashSet;

use aho_corasick::AhoCorasick;
use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::csvout;
use crate::document::{DocumentRecord, PageContent, UserId};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "lowercase")]
pub enum Matcher {
    Dictionary(Vec<String>),
    Regex(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelDef {
    pub label_id: String,
    pub display_name: String,
    #[serde(default = "default_color")]
    pub color: String,
    #[serde(default = "default_visible")]
    pub visible: bool,
    #[serde(default)]
    pub matchers: Vec<Matcher>,
}

fn default_color() -> String {
    "#ffd54f".into()
}

fn default_visible() -> bool {
    true
}

impl LabelDef {
    pub fn dictionary(label_id: &str, entries: &[&str]) -> Self {
        LabelDef {
            label_id: label_id.into(),
            display_name: label_id.into(),
            color: default_color(),
            visible: true,
            matchers: vec![Matcher::Dictionary(entries.iter().map(|s| s.to_string()).collect())],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Auto,
    Manual,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Auto => "auto",
            Origin::Manual => "manual",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub annotation_id: String,
    pub doc_id: String,
    pub page_index: usize,
    /// `[start, end)` in chars of the page text.
    pub char_span: [usize; 2],
    pub surface_text: String,
    pub label_id: String,
    pub origin: Origin,
    pub author: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnnotateError {
    #[error("invalid pattern for label {label}: {message}")]
    InvalidPattern { label: String, message: String },
    #[error("invalid label definition: {0}")]
    InvalidLabel(String),
    #[error("span {start}..{end} outside page text of {len} chars")]
    SpanOutOfRange { start: usize, end: usize, len: usize },
    #[error("page {0} does not exist")]
    PageOutOfRange(usize),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("annotation {0} does not match the page text")]
    IntegrityViolation(String),
}

/// Compiled form of a project's label set.
#[derive(Debug, Clone)]
pub struct CompiledLabels {
    labels: Vec<String>,
    dict: Option<AhoCorasick>,
    /// Label index for each dictionary pattern.
    dict_label: Vec<usize>,
    rules: Vec<(usize, Regex)>,
}

/// Lowercases one char at a time, keeping chars whose lowercase form is not
/// a single char, so char offsets survive folding.
fn fold(s: &str) -> String {
    s.chars()
        .map(|c| {
            let mut l = c.to_lowercase();
            match (l.next(), l.next()) {
                (Some(x), None) => x,
                _ => c,
            }
        })
        .collect()
}

pub fn compile_labelset(labels: &[LabelDef]) -> Result<CompiledLabels, AnnotateError> {
    let mut seen = HashSet::new();
    let mut patterns = Vec::new();
    let mut dict_label = Vec::new();
    let mut rules = Vec::new();
    for (i, l) in labels.iter().enumerate() {
        if l.label_id.is_empty() || !seen.insert(l.label_id.as_str()) {
            return Err(AnnotateError::InvalidLabel(format!("label id {:?} is empty or repeated", l.label_id)));
        }
        for m in &l.matchers {
            match m {
                Matcher::Dictionary(entries) => {
                    if entries.is_empty() || entries.iter().any(|e| e.trim().is_empty()) {
                        return Err(AnnotateError::InvalidLabel(format!("label {} has an empty dictionary entry", l.label_id)));
                    }
                    for e in entries {
                        patterns.push(fold(e.trim()));
                        dict_label.push(i);
                    }
                }
                Matcher::Regex(p) => {
                    let re = Regex::new(p).map_err(|e| AnnotateError::InvalidPattern { label: l.label_id.clone(), message: e.to_string() })?;
                    rules.push((i, re));
                }
            }
        }
    }
    let dict = if patterns.is_empty() {
        None
    } else {
        Some(AhoCorasick::new(&patterns).map_err(|e| AnnotateError::InvalidLabel(e.to_string()))?)
    };
    Ok(CompiledLabels { labels: labels.iter().map(|l| l.label_id.clone()).collect(), dict, dict_label, rules })
}

/// A resolved match: char span plus label id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Hit {
    pub start: usize,
    pub end: usize,
    pub label_id: String,
}

/// Byte offset to char index for every char boundary of `s`.
fn char_index(s: &str) -> Vec<usize> {
    let mut idx = vec![usize::MAX; s.len() + 1];
    for (ci, (bi, _)) in s.char_indices().enumerate() {
        idx[bi] = ci;
    }
    idx[s.len()] = s.chars().count();
    idx
}

impl CompiledLabels {
    pub fn is_empty(&self) -> bool {
        self.dict.is_none() && self.rules.is_empty()
    }

    /// Non-overlapping matches in `text`, ordered by start. Overlaps resolve
    /// to the longest match, then the earliest start, then label order.
    pub fn find(&self, text: &str) -> Vec<Hit> {
        let chars: Vec<char> = text.chars().collect();
        let mut cands: Vec<(usize, usize, usize)> = Vec::new();
        if let Some(ac) = &self.dict {
            let folded = fold(text);
            let map = char_index(&folded);
            let word = |i: usize| chars.get(i).is_some_and(|c| c.is_alphanumeric());
            for m in ac.find_overlapping_iter(&folded) {
                let (s, e) = (map[m.start()], map[m.end()]);
                let bounded = (s == 0 || !word(s - 1)) && !word(e);
                if s < e && bounded {
                    cands.push((s, e, self.dict_label[m.pattern().as_usize()]));
                }
            }
        }
        if !self.rules.is_empty() {
            let map = char_index(text);
            for (label, re) in &self.rules {
                for m in re.find_iter(text) {
                    let (s, e) = (map[m.start()], map[m.end()]);
                    if s < e {
                        cands.push((s, e, *label));
                    }
                }
            }
        }
        cands.sort_by(|a, b| (b.1 - b.0).cmp(&(a.1 - a.0)).then(a.0.cmp(&b.0)).then(a.2.cmp(&b.2)));
        cands.dedup();
        let mut taken: Vec<(usize, usize, usize)> = Vec::new();
        for c in cands {
            if taken.iter().all(|t| c.1 <= t.0 || c.0 >= t.1) {
                taken.push(c);
            }
        }
        taken.sort();
        taken
            .into_iter()
            .map(|(start, end, l)| Hit { start, end, label_id: self.labels[l].clone() })
            .collect()
    }
}

fn substring(chars: &[char], start: usize, end: usize) -> String {
    chars[start..end].iter().collect()
}

/// Auto annotations for every page of `doc`. Ids are derived from the span
/// and label so re-runs produce the same set.
pub fn auto_annotate(doc: &DocumentRecord, labels: &CompiledLabels, now: DateTime<Utc>) -> Vec<Annotation> {
    let mut out = Vec::new();
    for page in &doc.pages {
        let text = page.text();
        let chars: Vec<char> = text.chars().collect();
        for h in labels.find(&text) {
            out.push(Annotation {
                annotation_id: format!("{}-auto-{}-{}-{}-{}", doc.doc_id, page.page_index, h.start, h.end, h.label_id),
                doc_id: doc.doc_id.clone(),
                page_index: page.page_index,
                char_span: [h.start, h.end],
                surface_text: substring(&chars, h.start, h.end),
                label_id: h.label_id,
                origin: Origin::Auto,
                author: "system".into(),
                created_at: now,
            });
        }
    }
    out
}

/// Replace the auto annotations in `existing` with `fresh`; manual ones stay.
pub fn replace_auto(existing: &[Annotation], fresh: Vec<Annotation>) -> Vec<Annotation> {
    let mut out: Vec<Annotation> = existing.iter().filter(|a| a.origin == Origin::Manual).cloned().collect();
    out.extend(fresh);
    out
}

#[allow(clippy::too_many_arguments)]
pub fn add_manual_annotation(
    doc: &DocumentRecord,
    labels: &[LabelDef],
    page_index: usize,
    start: usize,
    end: usize,
    label_id: &str,
    user: &UserId,
    annotation_id: String,
    now: DateTime<Utc>,
) -> Result<Annotation, AnnotateError> {
    let page: &PageContent = doc.pages.get(page_index).ok_or(AnnotateError::PageOutOfRange(page_index))?;
    if !labels.iter().any(|l| l.label_id == label_id) {
        return Err(AnnotateError::UnknownLabel(label_id.to_string()));
    }
    let chars: Vec<char> = page.text().chars().collect();
    if start >= end || end > chars.len() {
        return Err(AnnotateError::SpanOutOfRange { start, end, len: chars.len() });
    }
    Ok(Annotation {
        annotation_id,
        doc_id: doc.doc_id.clone(),
        page_index,
        char_span: [start, end],
        surface_text: substring(&chars, start, end),
        label_id: label_id.to_string(),
        origin: Origin::Manual,
        author: user.clone(),
        created_at: now,
    })
}

/// Annotations whose label is visible (all of them with `include_hidden`),
/// sorted by page then start.
pub fn list_annotations(anns: &[Annotation], labels: &[LabelDef], include_hidden: bool) -> Vec<Annotation> {
    let visible: HashSet<&str> = labels.iter().filter(|l| l.visible).map(|l| l.label_id.as_str()).collect();
    let mut out: Vec<Annotation> = anns
        .iter()
        .filter(|a| include_hidden || visible.contains(a.label_id.as_str()))
        .cloned()
        .collect();
    out.sort_by(|a, b| {
        (a.page_index, a.char_span, &a.label_id, &a.annotation_id).cmp(&(b.page_index, b.char_span, &b.label_id, &b.annotation_id))
    });
    out
}

/// Every annotation's surface text must equal the page text at its span.
pub fn check_integrity(doc: &DocumentRecord, anns: &[Annotation]) -> Result<(), AnnotateError> {
    for a in anns {
        let ok = doc.pages.get(a.page_index).is_some_and(|p| {
            let chars: Vec<char> = p.text().chars().collect();
            let [s, e] = a.char_span;
            s < e && e <= chars.len() && substring(&chars, s, e) == a.surface_text
        });
        if !ok {
            return Err(AnnotateError::IntegrityViolation(a.annotation_id.clone()));
        }
    }
    Ok(())
}

pub const ANNOTATION_COLUMNS: [&str; 8] = ["doc_id", "page", "start", "end", "text", "label", "origin", "author"];

pub fn annotations_csv(anns: &[Annotation]) -> String {
    let rows: Vec<Vec<String>> = anns
        .iter()
        .map(|a| {
            vec![
                a.doc_id.clone(),
                a.page_index.to_string(),
                a.char_span[0].to_string(),
                a.char_span[1].to_string(),
                a.surface_text.clone(),
                a.label_id.clone(),
                a.origin.as_str().to_string(),
                a.author.clone(),
            ]
        })
        .collect();
    csvout::to_csv(&ANNOTATION_COLUMNS, &rows)
}
