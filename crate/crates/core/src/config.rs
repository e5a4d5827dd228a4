//! Tunable constants for the rule-based recognizers.

use serde::{Deserialize, Serialize};

/// Table recognition thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableConfig {
    /// Ruling segments closer than this (points) collapse into one boundary.
    pub ruling_merge_pt: f64,
    /// Borderless rows: a new row starts when the baseline distance between
    /// consecutive text lines exceeds this multiple of the median line height.
    pub row_gap_factor: f64,
    /// Borderless columns: a whitespace valley wider than this multiple of the
    /// median character width separates two columns.
    pub col_valley_factor: f64,
    /// Slack (points) when testing whether rulings lie inside a region.
    pub region_slack_pt: f64,
    /// Segments whose minor-axis extent is within this tolerance count as
    /// axis-aligned rulings.
    pub axis_tolerance_pt: f64,
}

impl Default for TableConfig {
    fn default() -> Self {
        TableConfig {
            ruling_merge_pt: 1.5,
            row_gap_factor: 1.5,
            col_valley_factor: 1.0,
            region_slack_pt: 2.0,
            axis_tolerance_pt: 0.5,
        }
    }
}

/// Map geo-referencing constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MapConfig {
    /// Width of the label search band outside each region edge, as a fraction
    /// of the region extent perpendicular to that edge.
    pub margin_band_frac: f64,
}

impl Default for MapConfig {
    fn default() -> Self {
        MapConfig { margin_band_frac: 0.08 }
    }
}

/// All pipeline thresholds in one place.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub table: TableConfig,
    pub map: MapConfig,
}

impl PipelineConfig {
    /// Every threshold must be strictly positive and finite.
    pub fn validate(&self) -> Result<(), String> {
        let checks = [
            ("table.ruling_merge_pt", self.table.ruling_merge_pt),
            ("table.row_gap_factor", self.table.row_gap_factor),
            ("table.col_valley_factor", self.table.col_valley_factor),
            ("table.region_slack_pt", self.table.region_slack_pt),
            ("table.axis_tolerance_pt", self.table.axis_tolerance_pt),
            ("map.margin_band_frac", self.map.margin_band_frac),
        ];
        for (name, v) in checks {
            if !(v.is_finite() && v > 0.0) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }
}
