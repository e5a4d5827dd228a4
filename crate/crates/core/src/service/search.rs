//! In-process inverted index over document meta fields.

use std::collections::{BTreeSet, HashMap};

use crate::document::MetaInfo;

/// Lowercased alphanumeric runs.
pub fn tokenize(s: &str) -> Vec<String> {
    s.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn meta_tokens(meta: &MetaInfo) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for field in [meta.title.as_str(), meta.venue.as_str(), meta.abstract_text.as_str()] {
        out.extend(tokenize(field));
    }
    for a in &meta.authors {
        out.extend(tokenize(a));
    }
    if let Some(y) = meta.year {
        out.insert(y.to_string());
    }
    out
}

#[derive(Debug, Default)]
pub struct SearchIndex {
    postings: HashMap<String, BTreeSet<String>>,
    by_doc: HashMap<String, BTreeSet<String>>,
}

impl SearchIndex {
    pub fn upsert(&mut self, doc_id: &str, meta: &MetaInfo) {
        self.remove(doc_id);
        let tokens = meta_tokens(meta);
        for t in &tokens {
            self.postings.entry(t.clone()).or_default().insert(doc_id.to_string());
        }
        self.by_doc.insert(doc_id.to_string(), tokens);
    }

    pub fn remove(&mut self, doc_id: &str) {
        if let Some(tokens) = self.by_doc.remove(doc_id) {
            for t in tokens {
                if let Some(p) = self.postings.get_mut(&t) {
                    p.remove(doc_id);
                    if p.is_empty() {
                        self.postings.remove(&t);
                    }
                }
            }
        }
    }

    /// Documents containing every query token; `None` for an empty query,
    /// meaning no restriction.
    pub fn lookup(&self, query: &str) -> Option<BTreeSet<String>> {
        let tokens = tokenize(query);
        if tokens.is_empty() {
            return None;
        }
        let mut acc: Option<BTreeSet<String>> = None;
        for t in tokens {
            let hits = self.postings.get(&t).cloned().unwrap_or_default();
            acc = Some(match acc {
                None => hits,
                Some(a) => a.intersection(&hits).cloned().collect(),
            });
        }
        acc
    }
}
