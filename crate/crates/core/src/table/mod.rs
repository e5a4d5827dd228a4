//! Table extraction: locate regions, recognize the cell lattice, fill cell
//! content, and the human correction operations on top.

mod artifact;
mod content;
mod detect;
mod grid;
mod structure;

pub use artifact::{export_table, EditOp, EditRecord, Recognizers, Stage, Structure, TableArtifact};
pub use content::{cell_at, recognize_content, EmbeddedTextOcr, OcrAdapter, OcrRegistry};
pub use detect::{detect_table_regions, DetectorRegistry, RulingDetector, TableDetector};
pub use grid::{CellGrid, CellSpan, GridError, Region, RegionSource};
pub use structure::recognize_structure;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TableError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("region contains no rulings and no text")]
    EmptyRegion,
    #[error("region is degenerate or outside the page")]
    RegionOutsidePage,
    #[error("unknown detector {0:?}")]
    UnknownDetector(String),
    #[error("unknown OCR adapter {0:?}")]
    UnknownAdapter(String),
    #[error("cannot move from {} to {}", from.as_str(), to.as_str())]
    InvalidTransition { from: Stage, to: Stage },
    #[error("operation {op} not allowed at stage {}", stage.as_str())]
    WrongStage { op: String, stage: Stage },
    #[error("table has not been filled")]
    NotFilled,
    #[error("invalid edit log: {0}")]
    InvalidLog(String),
}
