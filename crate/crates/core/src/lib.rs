//! Core library: PDF ingestion, table/map/text extraction, data integration,
//! and the collaborative service layer.

pub mod annotate;
pub mod config;
pub mod csvout;
pub mod document;
pub mod geom;
pub mod integrate;
pub mod map;
pub mod service;
pub mod table;
