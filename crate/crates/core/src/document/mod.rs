//! Document ingestion: PDF parsing into positioned text and rulings, meta
//! extraction with field-wise voting, and page access.

mod meta;
mod model;
pub mod pdf;
pub mod synth;

pub use meta::{
    extract_meta, normalize_text, vote_fields, FirstPageAdapter, InfoDictAdapter, MetaAdapter,
    MetaCandidate, MetaError, MetaFields, MetaRegistry,
};
pub use model::{DocStatus, DocumentRecord, MetaInfo, PageContent, TextBox, UserId, MAX_YEAR, MIN_YEAR};
pub use pdf::{parse_pdf, ParsedPdf, PdfError};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PageError {
    #[error("page {index} out of range (document has {count} pages)")]
    PageOutOfRange { index: usize, count: usize },
}

/// Stored text boxes of one page in reading order.
pub fn get_page_text(doc: &DocumentRecord, page_index: usize) -> Result<Vec<TextBox>, PageError> {
    doc.pages
        .get(page_index)
        .map(PageContent::reading_order)
        .ok_or(PageError::PageOutOfRange { index: page_index, count: doc.page_count })
}

/// Parse PDF bytes into pages and run the meta adapters over them.
///
/// This is the pure half of ingestion; the service wraps it with permission
/// checks and persistence.
pub fn analyze_pdf(bytes: &[u8], adapters: &MetaRegistry) -> Result<(Vec<PageContent>, MetaInfo), IngestError> {
    let parsed = parse_pdf(bytes)?;
    let meta = extract_meta(bytes, &parsed, adapters)?;
    Ok((parsed.pages, meta))
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IngestError {
    #[error(transparent)]
    Pdf(#[from] PdfError),
    #[error(transparent)]
    Meta(#[from] MetaError),
}
