//! Fusing per-document fragments (meta, tables, annotations, geo-points)
//! into file- and project-level summary tables.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::Annotation;
use crate::csvout;
use crate::document::DocumentRecord;
use crate::map::GeoPoint;
use crate::table::{Stage, TableArtifact};

/// Meta fields that can be mapped onto headers.
pub const META_FIELDS: [&str; 5] = ["title", "authors", "venue", "year", "abstract"];

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ProjectSchema {
    pub headers: Vec<String>,
    /// Alias → header.
    pub aliases: BTreeMap<String, String>,
    pub label_to_header: BTreeMap<String, String>,
    /// Meta field name (see [`META_FIELDS`]) → header.
    pub meta_to_header: BTreeMap<String, String>,
}

/// Header list edit applied in one step: removals, then renames, then
/// additions. Mappings follow renamed headers and drop removed ones.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct HeaderBatch {
    pub remove: Vec<String>,
    pub rename: BTreeMap<String, String>,
    pub add: Vec<String>,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegrateError {
    #[error("schema has no headers")]
    NoHeaders,
    #[error("file summaries do not share the schema headers")]
    SchemaMismatch,
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
}

/// Lowercase, drop parenthesized or bracketed parts, turn punctuation into
/// spaces and collapse whitespace.
pub fn normalize(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut depth = 0usize;
    for c in s.chars() {
        match c {
            '(' | '[' => depth += 1,
            ')' | ']' => depth = depth.saturating_sub(1),
            _ if depth > 0 => {}
            c if c.is_alphanumeric() => out.extend(c.to_lowercase()),
            _ => out.push(' '),
        }
    }
    out.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl ProjectSchema {
    pub fn new(headers: &[&str]) -> Self {
        ProjectSchema { headers: headers.iter().map(|s| s.to_string()).collect(), ..Default::default() }
    }

    pub fn validate(&self) -> Result<(), IntegrateError> {
        let mut seen = HashSet::new();
        for h in &self.headers {
            let n = normalize(h);
            if n.is_empty() || !seen.insert(n) {
                return Err(IntegrateError::InvalidSchema(format!("header {h:?} is empty or duplicates another")));
            }
        }
        let known: HashSet<&str> = self.headers.iter().map(String::as_str).collect();
        let targets = self.aliases.values().chain(self.label_to_header.values()).chain(self.meta_to_header.values());
        for t in targets {
            if !known.contains(t.as_str()) {
                return Err(IntegrateError::InvalidSchema(format!("mapping target {t:?} is not a header")));
            }
        }
        if let Some(f) = self.meta_to_header.keys().find(|k| !META_FIELDS.contains(&k.as_str())) {
            return Err(IntegrateError::InvalidSchema(format!("unknown meta field {f:?}")));
        }
        Ok(())
    }

    pub fn apply_batch(&self, batch: &HeaderBatch) -> Result<ProjectSchema, IntegrateError> {
        let mut s = self.clone();
        let removed: HashSet<&str> = batch.remove.iter().map(String::as_str).collect();
        s.headers.retain(|h| !removed.contains(h.as_str()));
        for h in &mut s.headers {
            if let Some(n) = batch.rename.get(h) {
                *h = n.clone();
            }
        }
        s.headers.extend(batch.add.iter().cloned());
        let fix = |m: &mut BTreeMap<String, String>| {
            m.retain(|_, v| !removed.contains(v.as_str()));
            for v in m.values_mut() {
                if let Some(n) = batch.rename.get(v) {
                    *v = n.clone();
                }
            }
        };
        fix(&mut s.aliases);
        fix(&mut s.label_to_header);
        fix(&mut s.meta_to_header);
        s.validate()?;
        Ok(s)
    }

    fn index_of(&self, header: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == header)
    }
}

/// Header for `candidate`: normalized exact match first, then the alias map.
pub fn match_header(candidate: &str, schema: &ProjectSchema) -> Option<String> {
    let n = normalize(candidate);
    if n.is_empty() {
        return None;
    }
    if let Some(h) = schema.headers.iter().find(|h| normalize(h) == n) {
        return Some(h.clone());
    }
    schema.aliases.iter().find(|(alias, _)| normalize(alias) == n).map(|(_, h)| h.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceKind {
    Table,
    Meta,
    Text,
    Map,
}

impl SourceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceKind::Table => "table",
            SourceKind::Meta => "meta",
            SourceKind::Text => "text",
            SourceKind::Map => "map",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub doc_id: String,
    pub kind: SourceKind,
    pub source_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    File,
    Project,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub level: Level,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub provenance: Vec<Vec<Option<Provenance>>>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BindingKind {
    Point,
    Annotation,
}

/// Pins one geo-point or annotation to summary rows `[rows[0], rows[1])`,
/// overriding the broadcast value there.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Binding {
    pub kind: BindingKind,
    pub source_id: String,
    pub rows: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct DocOverrides {
    pub bindings: Vec<Binding>,
}

/// Everything integration reads for one document.
pub struct FileInputs<'a> {
    pub doc: &'a DocumentRecord,
    /// Tables in creation order; only confirmed ones contribute.
    pub tables: &'a [TableArtifact],
    pub annotations: &'a [Annotation],
    /// Geo-points in creation order.
    pub geo_points: &'a [GeoPoint],
    pub overrides: &'a DocOverrides,
}

type Cell = (String, Provenance);

fn prov(doc: &str, kind: SourceKind, id: &str) -> Provenance {
    Provenance { doc_id: doc.to_string(), kind, source_id: id.to_string() }
}

fn point_cells(schema: &ProjectSchema, doc: &str, p: &GeoPoint) -> Vec<(usize, Cell)> {
    let mut out = Vec::new();
    for (name, v) in [("longitude", p.longitude), ("latitude", p.latitude)] {
        if let Some(col) = match_header(name, schema).and_then(|h| schema.index_of(&h)) {
            out.push((col, (v.to_string(), prov(doc, SourceKind::Map, &p.point_id))));
        }
    }
    out
}

fn annotation_cell(schema: &ProjectSchema, a: &Annotation) -> Option<(usize, Cell)> {
    let col = schema.label_to_header.get(&a.label_id).and_then(|h| schema.index_of(h))?;
    Some((col, (a.surface_text.clone(), prov(&a.doc_id, SourceKind::Text, &a.annotation_id))))
}

/// Row-constant values for one document: mapped meta fields, the first
/// geo-point and the first annotation of every mapped label.
fn broadcast(schema: &ProjectSchema, inp: &FileInputs<'_>) -> Vec<(usize, Cell)> {
    let doc = &inp.doc.doc_id;
    let meta = &inp.doc.meta;
    let mut out = Vec::new();
    for (field, header) in &schema.meta_to_header {
        let value = match field.as_str() {
            "title" => meta.title.clone(),
            "authors" => meta.authors.join("; "),
            "venue" => meta.venue.clone(),
            "year" => meta.year.map(|y| y.to_string()).unwrap_or_default(),
            "abstract" => meta.abstract_text.clone(),
            _ => String::new(),
        };
        if let (false, Some(col)) = (value.is_empty(), schema.index_of(header)) {
            out.push((col, (value, prov(doc, SourceKind::Meta, doc))));
        }
    }
    if let Some(p) = inp.geo_points.first() {
        out.extend(point_cells(schema, doc, p));
    }
    let mut anns: Vec<&Annotation> = inp.annotations.iter().collect();
    anns.sort_by_key(|a| (a.page_index, a.char_span));
    let mut done = HashSet::new();
    for a in anns {
        if !done.contains(&a.label_id) {
            if let Some(c) = annotation_cell(schema, a) {
                done.insert(a.label_id.clone());
                out.push(c);
            }
        }
    }
    out
}

fn empty_row(n: usize) -> (Vec<String>, Vec<Option<Provenance>>) {
    (vec![String::new(); n], vec![None; n])
}

/// File-level summary for one document.
///
/// Each confirmed table contributes its data rows: the header row is the
/// first row where more than half of the non-empty cells match a schema
/// header; tables without one are skipped with a warning. Broadcast values
/// fill their column in every row unless the table already did. A document
/// contributing no table rows yields one broadcast-only row.
pub fn integrate_file(inp: &FileInputs<'_>, schema: &ProjectSchema) -> Result<SummaryTable, IntegrateError> {
    if schema.headers.is_empty() {
        return Err(IntegrateError::NoHeaders);
    }
    let n = schema.headers.len();
    let doc = &inp.doc.doc_id;
    let mut rows = Vec::new();
    let mut provs = Vec::new();
    let mut warnings = Vec::new();
    for t in inp.tables.iter().filter(|t| t.stage == Stage::Confirmed) {
        let m = t.grid.to_matrix();
        let matched: Vec<Vec<Option<usize>>> = m
            .iter()
            .map(|row| row.iter().map(|c| match_header(c, schema).and_then(|h| schema.index_of(&h))).collect())
            .collect();
        let header_row = m.iter().zip(&matched).position(|(row, hits)| {
            let non_empty = row.iter().filter(|c| !c.trim().is_empty()).count();
            let hit = hits.iter().filter(|h| h.is_some()).count();
            non_empty > 0 && 2 * hit > non_empty
        });
        let Some(hr) = header_row else {
            warnings.push(format!("{doc}: table {} has no header row matching the schema; skipped", t.table_id));
            continue;
        };
        // First column wins when two columns match the same header.
        let mut col_map = vec![None; m[hr].len()];
        let mut used = HashSet::new();
        for (c, h) in matched[hr].iter().enumerate() {
            if let Some(h) = h {
                if used.insert(*h) {
                    col_map[c] = Some(*h);
                } else {
                    warnings.push(format!("{doc}: table {} maps column {c} to {:?} twice; extra column ignored", t.table_id, schema.headers[*h]));
                }
            }
        }
        for row in &m[hr + 1..] {
            if row.iter().all(|c| c.trim().is_empty()) {
                continue;
            }
            let (mut r, mut p) = empty_row(n);
            for (c, v) in row.iter().enumerate() {
                if let (Some(h), false) = (col_map[c], v.is_empty()) {
                    r[h] = v.clone();
                    p[h] = Some(prov(doc, SourceKind::Table, &t.table_id));
                }
            }
            rows.push(r);
            provs.push(p);
        }
    }
    if rows.is_empty() {
        let (r, p) = empty_row(n);
        rows.push(r);
        provs.push(p);
    }
    for (col, (v, pv)) in broadcast(schema, inp) {
        for (r, p) in rows.iter_mut().zip(provs.iter_mut()) {
            if r[col].is_empty() {
                r[col] = v.clone();
                p[col] = Some(pv.clone());
            }
        }
    }
    for b in &inp.overrides.bindings {
        let cells: Vec<(usize, Cell)> = match b.kind {
            BindingKind::Point => inp.geo_points.iter().find(|p| p.point_id == b.source_id).map(|p| point_cells(schema, doc, p)).unwrap_or_default(),
            BindingKind::Annotation => inp
                .annotations
                .iter()
                .find(|a| a.annotation_id == b.source_id)
                .and_then(|a| annotation_cell(schema, a))
                .into_iter()
                .collect(),
        };
        if cells.is_empty() {
            warnings.push(format!("{doc}: binding source {} not found or unmapped", b.source_id));
            continue;
        }
        for i in b.rows[0]..b.rows[1].min(rows.len()) {
            for (col, (v, pv)) in &cells {
                rows[i][*col] = v.clone();
                provs[i][*col] = Some(pv.clone());
            }
        }
    }
    Ok(SummaryTable { level: Level::File, headers: schema.headers.clone(), rows, provenance: provs, warnings })
}

/// Concatenate file summaries in the given order.
pub fn integrate_project(files: &[SummaryTable], schema: &ProjectSchema) -> Result<SummaryTable, IntegrateError> {
    let mut out = SummaryTable { level: Level::Project, headers: schema.headers.clone(), rows: Vec::new(), provenance: Vec::new(), warnings: Vec::new() };
    for f in files {
        if f.headers != schema.headers {
            return Err(IntegrateError::SchemaMismatch);
        }
        out.rows.extend(f.rows.iter().cloned());
        out.provenance.extend(f.provenance.iter().cloned());
        out.warnings.extend(f.warnings.iter().cloned());
    }
    Ok(out)
}

pub fn export_csv(t: &SummaryTable) -> String {
    let headers: Vec<&str> = t.headers.iter().map(String::as_str).collect();
    csvout::to_csv(&headers, &t.rows)
}

pub const PROVENANCE_COLUMNS: [&str; 5] = ["row", "column", "doc_id", "kind", "source_id"];

/// One line per non-empty cell naming the artifact it came from.
pub fn export_provenance_csv(t: &SummaryTable) -> String {
    let mut rows = Vec::new();
    for (i, (r, p)) in t.rows.iter().zip(&t.provenance).enumerate() {
        for (c, (v, pv)) in r.iter().zip(p).enumerate() {
            if let (false, Some(pv)) = (v.is_empty(), pv) {
                rows.push(vec![i.to_string(), t.headers[c].clone(), pv.doc_id.clone(), pv.kind.as_str().to_string(), pv.source_id.clone()]);
            }
        }
    }
    csvout::to_csv(&PROVENANCE_COLUMNS, &rows)
}
