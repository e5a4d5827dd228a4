//! Table artifacts: the staged locate/structure/fill workflow with an
//! append-only, replayable edit log.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::config::TableConfig;
use crate::document::{PageContent, UserId};

use super::content::{recognize_content, OcrAdapter};
use super::grid::{CellGrid, Region};
use super::structure::recognize_structure;
use super::TableError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Located,
    Structured,
    Filled,
    Confirmed,
}

impl Stage {
    pub fn next(self) -> Option<Stage> {
        match self {
            Stage::Located => Some(Stage::Structured),
            Stage::Structured => Some(Stage::Filled),
            Stage::Filled => Some(Stage::Confirmed),
            Stage::Confirmed => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Located => "located",
            Stage::Structured => "structured",
            Stage::Filled => "filled",
            Stage::Confirmed => "confirmed",
        }
    }
}

/// Lattice produced by the structure recognizer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Structure {
    pub row_bounds: Vec<f64>,
    pub col_bounds: Vec<f64>,
}

/// One logged edit. Stage moves carry the recognizer output they produced
/// so the log replays without re-running recognition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", content = "params", rename_all = "snake_case")]
pub enum EditOp {
    Create { region: Region },
    SetRegion { region: Region },
    Stage {
        to: Stage,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        structure: Option<Structure>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        contents: Option<Vec<String>>,
    },
    Merge { rows: [usize; 2], cols: [usize; 2] },
    Split { span: usize },
    AddRow { at: usize },
    DeleteRow { row: usize },
    AddColumn { at: usize },
    DeleteColumn { col: usize },
    EditCell { row: usize, col: usize, text: String },
}

impl EditOp {
    pub fn name(&self) -> &'static str {
        match self {
            EditOp::Create { .. } => "create",
            EditOp::SetRegion { .. } => "set_region",
            EditOp::Stage { .. } => "stage",
            EditOp::Merge { .. } => "merge",
            EditOp::Split { .. } => "split",
            EditOp::AddRow { .. } => "add_row",
            EditOp::DeleteRow { .. } => "delete_row",
            EditOp::AddColumn { .. } => "add_column",
            EditOp::DeleteColumn { .. } => "delete_column",
            EditOp::EditCell { .. } => "edit_cell",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditRecord {
    #[serde(flatten)]
    pub op: EditOp,
    pub user: UserId,
    pub ts: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableArtifact {
    pub table_id: String,
    pub doc_id: String,
    pub grid: CellGrid,
    pub stage: Stage,
    pub edit_log: Vec<EditRecord>,
}

/// What the forward transitions need to run the recognizers.
pub struct Recognizers<'a> {
    pub page: &'a PageContent,
    pub cfg: &'a TableConfig,
    pub ocr: Option<&'a dyn OcrAdapter>,
}

impl TableArtifact {
    pub fn new(table_id: impl Into<String>, doc_id: impl Into<String>, region: Region, user: &str, ts: DateTime<Utc>) -> Result<Self, TableError> {
        if !region.bbox.is_proper() {
            return Err(TableError::RegionOutsidePage);
        }
        let mut a = TableArtifact {
            table_id: table_id.into(),
            doc_id: doc_id.into(),
            grid: CellGrid::single(region),
            stage: Stage::Located,
            edit_log: Vec::new(),
        };
        a.edit_log.push(EditRecord { op: EditOp::Create { region }, user: user.to_string(), ts });
        Ok(a)
    }

    pub fn region(&self) -> &Region {
        &self.grid.region
    }

    /// Apply `op` and append it to the log. Nothing changes on error.
    pub fn apply(&mut self, op: EditOp, user: &str, ts: DateTime<Utc>) -> Result<(), TableError> {
        let (grid, stage) = self.step(&op)?;
        self.grid = grid;
        self.stage = stage;
        self.edit_log.push(EditRecord { op, user: user.to_string(), ts });
        Ok(())
    }

    fn step(&self, op: &EditOp) -> Result<(CellGrid, Stage), TableError> {
        let g = &self.grid;
        let stage = self.stage;
        let wrong = || TableError::WrongStage { op: op.name().to_string(), stage };
        let structural = matches!(stage, Stage::Structured | Stage::Filled);
        Ok(match op {
            EditOp::Create { .. } => return Err(TableError::InvalidLog("create must be the first entry".into())),
            EditOp::SetRegion { region } => {
                if stage != Stage::Located {
                    return Err(wrong());
                }
                if !region.bbox.is_proper() {
                    return Err(TableError::RegionOutsidePage);
                }
                (CellGrid::single(*region), stage)
            }
            EditOp::Stage { to, structure, contents } => {
                let to = *to;
                if to < stage {
                    let mut grid = g.clone();
                    if to == Stage::Located {
                        grid = CellGrid::single(g.region);
                    } else if to == Stage::Structured {
                        grid.clear_contents();
                    }
                    (grid, to)
                } else if stage.next() == Some(to) {
                    let grid = match to {
                        Stage::Structured => {
                            let s = structure.as_ref().ok_or_else(|| TableError::InvalidLog("structure snapshot missing".into()))?;
                            CellGrid::from_bounds(g.region, s.row_bounds.clone(), s.col_bounds.clone())?
                        }
                        Stage::Filled => {
                            let c = contents.as_ref().ok_or_else(|| TableError::InvalidLog("content snapshot missing".into()))?;
                            if c.len() != g.spans.len() {
                                return Err(TableError::InvalidLog("content snapshot does not match spans".into()));
                            }
                            let mut grid = g.clone();
                            for (s, text) in grid.spans.iter_mut().zip(c) {
                                s.content = text.clone();
                            }
                            grid
                        }
                        _ => g.clone(),
                    };
                    (grid, to)
                } else {
                    return Err(TableError::InvalidTransition { from: stage, to });
                }
            }
            EditOp::Merge { rows, cols } if structural => (g.merge_cells(rows[0]..=rows[1], cols[0]..=cols[1])?, stage),
            EditOp::Split { span } if structural => (g.split_cell(*span)?, stage),
            EditOp::AddRow { at } if structural => (g.add_row(*at)?, stage),
            EditOp::DeleteRow { row } if structural => (g.delete_row(*row)?, stage),
            EditOp::AddColumn { at } if structural => (g.add_column(*at)?, stage),
            EditOp::DeleteColumn { col } if structural => (g.delete_column(*col)?, stage),
            EditOp::EditCell { row, col, text } if stage == Stage::Filled => {
                let idx = g.span_at(*row, *col).ok_or(super::GridError::IndexOutOfRange {
                    index: (*row).max(*col),
                    limit: g.rows().min(g.cols()),
                })?;
                (g.with_content(idx, text.clone())?, stage)
            }
            _ => return Err(wrong()),
        })
    }

    /// Move to `target`. Forward moves run the recognizer for the new stage
    /// when its data is absent and log the result; backward moves clear the
    /// data of every later stage.
    pub fn advance_stage(&mut self, target: Stage, user: &str, ts: DateTime<Utc>, rec: &Recognizers<'_>) -> Result<(), TableError> {
        let op = if target > self.stage && self.stage.next() == Some(target) {
            match target {
                Stage::Structured => {
                    let g = recognize_structure(rec.page, &self.grid.region, rec.cfg)?;
                    EditOp::Stage {
                        to: target,
                        structure: Some(Structure { row_bounds: g.row_bounds, col_bounds: g.col_bounds }),
                        contents: None,
                    }
                }
                Stage::Filled => {
                    let contents = if self.grid.spans.iter().any(|s| !s.content.is_empty()) {
                        self.grid.spans.iter().map(|s| s.content.clone()).collect()
                    } else {
                        recognize_content(rec.page, &self.grid, rec.ocr).spans.into_iter().map(|s| s.content).collect()
                    };
                    EditOp::Stage { to: target, structure: None, contents: Some(contents) }
                }
                _ => EditOp::Stage { to: target, structure: None, contents: None },
            }
        } else {
            EditOp::Stage { to: target, structure: None, contents: None }
        };
        self.apply(op, user, ts)
    }

    /// Rebuild an artifact from its log alone.
    pub fn replay(table_id: &str, doc_id: &str, log: &[EditRecord]) -> Result<Self, TableError> {
        let first = log.first().ok_or_else(|| TableError::InvalidLog("empty log".into()))?;
        let EditOp::Create { region } = &first.op else {
            return Err(TableError::InvalidLog("log must start with create".into()));
        };
        let mut a = TableArtifact::new(table_id, doc_id, *region, &first.user, first.ts)?;
        for rec in &log[1..] {
            a.apply(rec.op.clone(), &rec.user, rec.ts)?;
        }
        Ok(a)
    }

    /// The edit log as JSON lines, one `{op, params, user, ts}` object each.
    pub fn edit_log_jsonl(&self) -> String {
        self.edit_log
            .iter()
            .map(|r| serde_json::to_string(r).expect("edit records serialize") + "\n")
            .collect()
    }
}

/// Flat `R x C` matrix of a filled table; merged spans repeat their content.
pub fn export_table(artifact: &TableArtifact) -> Result<Vec<Vec<String>>, TableError> {
    if artifact.stage < Stage::Filled {
        return Err(TableError::NotFilled);
    }
    Ok(artifact.grid.to_matrix())
}
