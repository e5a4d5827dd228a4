//! Meta-information extraction.
//!
//! Several independent adapters each propose a partial [`MetaInfo`]; the
//! proposals are merged field by field with [`vote_fields`].

use std::collections::HashMap;
use std::hash::Hash;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::model::{MetaInfo, PageContent, TextBox};
use super::pdf::ParsedPdf;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetaError {
    #[error("no meta adapters registered")]
    NoAdapters,
    #[error("candidate from unknown adapter {0:?}")]
    UnknownAdapter(String),
}

/// Any subset of the meta fields.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaFields {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub title: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub authors: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub venue: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub year: Option<i32>,
    #[serde(default, rename = "abstract", skip_serializing_if = "Option::is_none")]
    pub abstract_text: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaCandidate {
    pub adapter_id: String,
    pub fields: MetaFields,
}

/// Lowercase, trim, and collapse internal whitespace runs to one space.
pub fn normalize_text(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

/// Merge candidate fields by per-field majority.
///
/// Empty strings, empty author lists, and out-of-range years do not vote. The
/// value with the most votes wins; ties go to the class containing the value
/// from the adapter listed earliest in `priority`. Within the winning class
/// the earliest adapter's spelling is returned.
pub fn vote_fields(candidates: &[MetaCandidate], priority: &[String]) -> Result<MetaInfo, MetaError> {
    let mut ranked = Vec::with_capacity(candidates.len());
    for c in candidates {
        let rank = priority
            .iter()
            .position(|p| *p == c.adapter_id)
            .ok_or_else(|| MetaError::UnknownAdapter(c.adapter_id.clone()))?;
        ranked.push((rank, &c.fields));
    }

    let text_field = |get: fn(&MetaFields) -> Option<&String>| -> String {
        let votes = ranked
            .iter()
            .filter_map(|(rank, f)| get(f).filter(|s| !s.trim().is_empty()).map(|s| (*rank, s.clone())));
        modal(votes, |s| normalize_text(s)).unwrap_or_default()
    };

    let title = text_field(|f| f.title.as_ref());
    let venue = text_field(|f| f.venue.as_ref());
    let abstract_text = text_field(|f| f.abstract_text.as_ref());
    let authors = modal(
        ranked.iter().filter_map(|(rank, f)| {
            f.authors
                .as_ref()
                .map(|a| a.iter().filter(|s| !s.trim().is_empty()).cloned().collect::<Vec<_>>())
                .filter(|a| !a.is_empty())
                .map(|a| (*rank, a))
        }),
        |a| a.iter().map(|s| normalize_text(s)).collect::<Vec<_>>(),
    )
    .unwrap_or_default();
    let year = modal(
        ranked
            .iter()
            .filter_map(|(rank, f)| f.year.filter(|y| MetaInfo::year_in_range(*y)).map(|y| (*rank, y))),
        |y| *y,
    );

    Ok(MetaInfo { title, authors, venue, year, abstract_text })
}

/// Modal value under `key` equality, ties broken by lowest rank.
fn modal<T, K: Eq + Hash>(values: impl Iterator<Item = (usize, T)>, key: impl Fn(&T) -> K) -> Option<T> {
    // key -> (count, best rank, value at best rank)
    let mut classes: HashMap<K, (usize, usize, T)> = HashMap::new();
    for (rank, v) in values {
        let entry = classes.entry(key(&v));
        match entry {
            std::collections::hash_map::Entry::Occupied(mut o) => {
                let slot = o.get_mut();
                slot.0 += 1;
                if rank < slot.1 {
                    slot.1 = rank;
                    slot.2 = v;
                }
            }
            std::collections::hash_map::Entry::Vacant(e) => {
                e.insert((1, rank, v));
            }
        }
    }
    classes
        .into_values()
        .min_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)))
        .map(|(_, _, v)| v)
}

/// A pluggable meta extractor.
pub trait MetaAdapter: Send + Sync {
    fn id(&self) -> &str;
    fn extract(&self, bytes: &[u8], parsed: &ParsedPdf) -> Result<MetaFields, String>;
}

/// Adapters in priority order (first = highest).
#[derive(Default)]
pub struct MetaRegistry {
    adapters: Vec<Box<dyn MetaAdapter>>,
}

impl MetaRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// The shipped baselines: first-page heuristic, then the info dictionary.
    pub fn baseline() -> Self {
        let mut r = Self::new();
        r.register(Box::new(FirstPageAdapter));
        r.register(Box::new(InfoDictAdapter));
        r
    }

    pub fn register(&mut self, adapter: Box<dyn MetaAdapter>) {
        self.adapters.push(adapter);
    }

    pub fn is_empty(&self) -> bool {
        self.adapters.is_empty()
    }

    pub fn priority(&self) -> Vec<String> {
        self.adapters.iter().map(|a| a.id().to_string()).collect()
    }

    pub fn retain(&mut self, keep: impl Fn(&str) -> bool) {
        self.adapters.retain(|a| keep(a.id()));
    }
}

/// Runs every adapter; individual failures are skipped.
pub fn extract_meta(bytes: &[u8], parsed: &ParsedPdf, registry: &MetaRegistry) -> Result<MetaInfo, MetaError> {
    if registry.is_empty() {
        return Err(MetaError::NoAdapters);
    }
    let candidates: Vec<MetaCandidate> = registry
        .adapters
        .iter()
        .filter_map(|a| match a.extract(bytes, parsed) {
            Ok(fields) => Some(MetaCandidate { adapter_id: a.id().to_string(), fields }),
            Err(e) => {
                tracing::warn!(adapter = a.id(), error = %e, "meta adapter failed");
                None
            }
        })
        .collect();
    vote_fields(&candidates, &registry.priority())
}

// ---------------------------------------------------------------------------
// Baseline adapters

static YEAR_RE: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)(?:©|\(c\)|copyright)\s*((?:1[5-9]|20)\d\d)").unwrap());
static AUTHOR_SPLIT_RE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\s*(?:,|;|&|\band\b)\s*").unwrap());

fn split_authors(s: &str) -> Vec<String> {
    AUTHOR_SPLIT_RE
        .split(s)
        .map(|a| a.trim_matches(|c: char| c.is_ascii_digit() || "*†‡§ ".contains(c)).to_string())
        .filter(|a| !a.is_empty())
        .collect()
}

/// Largest-font line on the first page is the title; the lines under it, up
/// to the first blank gap, are the authors.
pub struct FirstPageAdapter;

struct Line {
    text: String,
    size: f64,
    top: f64,
    bottom: f64,
}

fn page_lines(page: &PageContent) -> Vec<Line> {
    page.lines()
        .into_iter()
        .map(|boxes: Vec<&TextBox>| Line {
            text: boxes.iter().map(|b| b.text.as_str()).collect::<Vec<_>>().join(" "),
            size: boxes.iter().map(|b| b.font_size_pt).fold(0.0, f64::max),
            top: boxes.iter().map(|b| b.bbox.y1).fold(f64::NEG_INFINITY, f64::max),
            bottom: boxes.iter().map(|b| b.bbox.y0).fold(f64::INFINITY, f64::min),
        })
        .collect()
}

/// Whitespace between two consecutive lines larger than this fraction of the
/// font size counts as a blank line.
const BLANK_GAP: f64 = 0.8;

fn blank_between(upper: &Line, lower: &Line) -> bool {
    upper.bottom - lower.top > BLANK_GAP * lower.size.max(upper.size)
}

impl MetaAdapter for FirstPageAdapter {
    fn id(&self) -> &str {
        "first_page"
    }

    fn extract(&self, _bytes: &[u8], parsed: &ParsedPdf) -> Result<MetaFields, String> {
        let page = parsed.pages.first().ok_or("no pages")?;
        let lines = page_lines(page);
        if lines.is_empty() {
            return Ok(MetaFields::default());
        }
        let max_size = lines.iter().map(|l| l.size).fold(0.0, f64::max);
        let start = lines.iter().position(|l| (l.size - max_size).abs() < 0.5).unwrap_or(0);
        let mut end = start + 1;
        while end < lines.len() && (lines[end].size - max_size).abs() < 0.5 && !blank_between(&lines[end - 1], &lines[end]) {
            end += 1;
        }
        let title = lines[start..end].iter().map(|l| l.text.as_str()).collect::<Vec<_>>().join(" ");

        let mut author_text = Vec::new();
        let mut i = end;
        while i < lines.len() && (i == end || !blank_between(&lines[i - 1], &lines[i])) {
            if lines[i].text.to_lowercase().starts_with("abstract") {
                break;
            }
            author_text.push(lines[i].text.clone());
            i += 1;
        }
        let authors = split_authors(&author_text.join(", "));

        let abstract_text = lines.iter().position(|l| l.text.to_lowercase().starts_with("abstract")).map(|k| {
            let head = lines[k].text["abstract".len()..].trim_start_matches([':', '.', ' ', '-', '—']).to_string();
            let mut parts = vec![head];
            let mut j = k + 1;
            while j < lines.len() && !blank_between(&lines[j - 1], &lines[j]) {
                parts.push(lines[j].text.clone());
                j += 1;
            }
            parts.into_iter().filter(|p| !p.is_empty()).collect::<Vec<_>>().join(" ")
        });

        let full = page.text();
        let year = YEAR_RE.captures(&full).and_then(|c| c[1].parse().ok());

        Ok(MetaFields {
            title: Some(title).filter(|t| !t.is_empty()),
            authors: Some(authors).filter(|a| !a.is_empty()),
            venue: None,
            year,
            abstract_text: abstract_text.filter(|a| !a.is_empty()),
        })
    }
}

/// Reads the PDF document information dictionary.
pub struct InfoDictAdapter;

impl MetaAdapter for InfoDictAdapter {
    fn id(&self) -> &str {
        "info_dict"
    }

    fn extract(&self, _bytes: &[u8], parsed: &ParsedPdf) -> Result<MetaFields, String> {
        let info = &parsed.info;
        Ok(MetaFields {
            title: info.title.clone(),
            authors: info.author.as_deref().map(split_authors).filter(|a| !a.is_empty()),
            ..MetaFields::default()
        })
    }
}
