//! Hand-built three-document project whose expected summary lives in
//! `golden/project_summary.csv`.

use chrono::{TimeZone, Utc};
use quarry_core::annotate::{Annotation, Origin};
use quarry_core::document::{DocStatus, DocumentRecord, MetaInfo};
use quarry_core::geom::BBox;
use quarry_core::integrate::{Binding, BindingKind, DocOverrides, ProjectSchema};
use quarry_core::map::GeoPoint;
use quarry_core::table::{EditOp, Region, RegionSource, Stage, Structure, TableArtifact};

pub struct Fixture {
    pub docs: Vec<DocumentRecord>,
    pub tables: Vec<Vec<TableArtifact>>,
    pub annotations: Vec<Vec<Annotation>>,
    pub points: Vec<Vec<GeoPoint>>,
    pub overrides: Vec<DocOverrides>,
    pub schema: ProjectSchema,
}

fn doc(id: &str, title: &str) -> DocumentRecord {
    DocumentRecord {
        doc_id: id.into(),
        project_id: "proj".into(),
        page_count: 0,
        pages: vec![],
        meta: MetaInfo { title: title.into(), ..Default::default() },
        import_user: "u".into(),
        import_time: Utc.timestamp_opt(1_700_000_000, 0).unwrap(),
        last_editor: None,
        last_edit_time: None,
        principal: None,
        status: DocStatus::Ready,
        file_name: None,
    }
}

/// Table at `stage` holding `cells` as a unit grid.
pub fn table(id: &str, doc_id: &str, cells: &[&[&str]], stage: Stage) -> TableArtifact {
    let t = Utc.timestamp_opt(1_700_000_000, 0).unwrap();
    let (rows, cols) = (cells.len(), cells[0].len());
    let region = Region::new(0, BBox::new(0.0, 0.0, 10.0 * cols as f64, 10.0 * rows as f64), RegionSource::UserDrawn);
    let mut a = TableArtifact::new(id, doc_id, region, "u", t).unwrap();
    let structure = Structure {
        row_bounds: (0..=rows).map(|i| 10.0 * i as f64).collect(),
        col_bounds: (0..=cols).map(|i| 10.0 * i as f64).collect(),
    };
    a.apply(EditOp::Stage { to: Stage::Structured, structure: Some(structure), contents: None }, "u", t).unwrap();
    if stage >= Stage::Filled {
        let contents = cells.iter().flat_map(|r| r.iter().map(|s| s.to_string())).collect();
        a.apply(EditOp::Stage { to: Stage::Filled, structure: None, contents: Some(contents) }, "u", t).unwrap();
    }
    if stage == Stage::Confirmed {
        a.apply(EditOp::Stage { to: Stage::Confirmed, structure: None, contents: None }, "u", t).unwrap();
    }
    a
}

fn point(id: &str, doc_id: &str, lon: f64, lat: f64) -> GeoPoint {
    GeoPoint {
        point_id: id.into(),
        doc_id: doc_id.into(),
        map_id: "map-1".into(),
        pixel: [1.0, 2.0],
        longitude: lon,
        latitude: lat,
        out_of_range: false,
        table_row_hint: None,
        created_by: "u".into(),
        created_at: Utc.timestamp_opt(1_700_000_000, 0).unwrap(),
    }
}

fn ann(id: &str, page: usize, start: usize, text: &str) -> Annotation {
    Annotation {
        annotation_id: id.into(),
        doc_id: "doc-a".into(),
        page_index: page,
        char_span: [start, start + text.chars().count()],
        surface_text: text.into(),
        label_id: "era".into(),
        origin: Origin::Manual,
        author: "u".into(),
        created_at: Utc.timestamp_opt(1_700_000_000, 0).unwrap(),
    }
}

pub fn fixture() -> Fixture {
    let mut schema = ProjectSchema::new(&["Reference", "Sample", "SiO2", "Zr", "Longitude", "Latitude", "Era"]);
    schema.aliases.insert("zr ppm".into(), "Zr".into());
    schema.meta_to_header.insert("title".into(), "Reference".into());
    schema.label_to_header.insert("era".into(), "Era".into());
    let a_tables = vec![
        table("t-a", "doc-a", &[&["Sample", "SiO2 (wt%)", "Notes"], &["S1", "72.1", "fresh"], &["S2", "70.4", ""]], Stage::Confirmed),
        table("t-b", "doc-a", &[&["Zr ppm"], &["180"], &["175"]], Stage::Confirmed),
        table("t-c", "doc-a", &[&["Sample"], &["S9"]], Stage::Filled),
        table("t-d", "doc-a", &[&["x", "y"], &["1", "2"]], Stage::Confirmed),
    ];
    Fixture {
        docs: vec![doc("doc-a", "Granites of the north, revisited"), doc("doc-b", "Basalt notes"), doc("doc-c", "")],
        tables: vec![a_tables, vec![], vec![table("t-e", "doc-c", &[&["sample", "ZR"], &["C1", "90"]], Stage::Confirmed)]],
        annotations: vec![vec![ann("ann-2", 1, 0, "Triassic"), ann("ann-1", 0, 5, "Late Jurassic")], vec![], vec![]],
        points: vec![
            vec![point("pt-1", "doc-a", 101.5, 35.25), point("pt-2", "doc-a", 102.0, 36.5)],
            vec![],
            vec![point("pt-3", "doc-c", -20.75, -10.5)],
        ],
        overrides: vec![
            DocOverrides { bindings: vec![Binding { kind: BindingKind::Point, source_id: "pt-2".into(), rows: [3, 4] }] },
            DocOverrides::default(),
            DocOverrides::default(),
        ],
        schema,
    }
}
