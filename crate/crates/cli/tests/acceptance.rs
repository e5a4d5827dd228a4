//! Acceptance suite. Each criterion prints one PASS/FAIL line; the test fails
//! if any criterion does. Run with `--nocapture` to see the report.

mod common;

#[path = "../../core/tests/fixtures/integration.rs"]
mod fixture;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Barrier};
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use rand::rngs::StdRng;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use serde_json::json;

use quarry_cli::{cmd_export, cmd_import, EXIT_OK};
use quarry_core::config::{MapConfig, TableConfig};
use quarry_core::document::synth::PdfBuilder;
use quarry_core::document::{normalize_text, parse_pdf, vote_fields, MetaCandidate, MetaFields, MetaInfo};
use quarry_core::geom::BBox;
use quarry_core::integrate::{export_csv, export_provenance_csv, integrate_file, integrate_project, FileInputs};
use quarry_core::map::{calibrate, detect_ticks, format_label, locate_point, Axis, AxisTick};
use quarry_core::service::{Role, Service, ServiceConfig, ServiceError, SystemClock};
use quarry_core::table::{
    detect_table_regions, recognize_content, recognize_structure, CellGrid, DetectorRegistry, EditOp, Region, RegionSource, Stage,
    Structure, TableArtifact,
};

const GOLDEN: &str = include_str!("../../core/tests/golden/project_summary.csv");

/// Courier glyph advance, in em.
const ADVANCE: f64 = 0.6;

fn random_cell(rng: &mut StdRng) -> String {
    const ALPHABET: &[u8] = b"ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz0123456789.-%()";
    if rng.random_bool(0.05) {
        return String::new();
    }
    let word = |rng: &mut StdRng, n: usize| -> String { (0..n).map(|_| *ALPHABET.choose(rng).unwrap() as char).collect() };
    let first = rng.random_range(1..=7);
    if rng.random_bool(0.15) {
        let second = rng.random_range(1..=4);
        format!("{} {}", word(rng, first), word(rng, second))
    } else {
        word(rng, first)
    }
}

fn ruled_tables() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(11);
    let cfg = TableConfig::default();
    let detectors = DetectorRegistry::baseline(cfg);
    let started = Instant::now();
    let (mut cells_total, mut bad) = (0usize, Vec::new());
    for n in 0..200 {
        let (rows, cols) = (rng.random_range(1..=8), rng.random_range(1..=8));
        let cells: Vec<Vec<String>> = (0..rows).map(|_| (0..cols).map(|_| random_cell(&mut rng)).collect()).collect();
        let font = 8.0;
        let widths: Vec<f64> = (0..cols)
            .map(|c| cells.iter().map(|r| r[c].chars().count()).max().unwrap().max(1) as f64 * ADVANCE * font + 12.0)
            .collect();
        let mut b = PdfBuilder::new();
        b.page(612.0, 792.0).ruled_table(40.0, 700.0, &widths, 18.0, font, &cells);
        let page = parse_pdf(&b.build().unwrap()).map_err(|e| e.to_string())?.pages.remove(0);
        let regions = detect_table_regions(&page, "ruling", &detectors).map_err(|e| e.to_string())?;
        let got = match regions.as_slice() {
            [r] => recognize_structure(&page, r, &cfg).map(|g| recognize_content(&page, &g, None).to_matrix()),
            _ => {
                bad.push(format!("table {n}: {} regions", regions.len()));
                continue;
            }
        };
        cells_total += rows * cols;
        match got {
            Ok(m) if m == cells => {}
            Ok(m) => bad.push(format!("table {n}: {cells:?} -> {m:?}")),
            Err(e) => bad.push(format!("table {n}: {e}")),
        }
    }
    let elapsed = started.elapsed();
    if !bad.is_empty() {
        return Err(format!("{} of 200 tables differ; first: {}", bad.len(), bad[0]));
    }
    if elapsed > Duration::from_secs(10) {
        return Err(format!("took {elapsed:.2?}"));
    }
    Ok(format!("200/200 tables, {cells_total} cells exact in {elapsed:.2?}"))
}

fn borderless_tables() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(12);
    let cfg = TableConfig::default();
    let mut failures = Vec::new();
    for n in 0..50 {
        let cols = rng.random_range(2..=4);
        let rows = rng.random_range(3..=8);
        let font = 10.0;
        let char_w = ADVANCE * font;
        let gap = char_w * rng.random_range(2.0..5.0);
        let cells: Vec<Vec<String>> = (0..rows)
            .map(|_| {
                (0..cols)
                    .map(|_| {
                        let n = rng.random_range(1..=9);
                        (0..n).map(|_| *b"abcdefghijklmnopqrstuvwxyz0123456789.".choose(&mut rng).unwrap() as char).collect()
                    })
                    .collect()
            })
            .collect();
        let mut b = PdfBuilder::new();
        let layout = b.page(612.0, 792.0).borderless_table(60.0, 700.0, gap, 1.8 * font, font, &cells);
        let page = parse_pdf(&b.build().unwrap()).map_err(|e| e.to_string())?.pages.remove(0);
        let region = Region::new(0, layout.outer.expand(1.0), RegionSource::UserDrawn);
        match recognize_structure(&page, &region, &cfg) {
            Ok(g) if g.cols() == cols => {}
            Ok(g) => failures.push(format!("table {n}: gap {:.1} chars, {cols} cols -> {}", gap / char_w, g.cols())),
            Err(e) => failures.push(format!("table {n}: {e}")),
        }
    }
    let ok = 50 - failures.len();
    if ok * 100 < 95 * 50 {
        return Err(format!("{ok}/50 correct; {failures:?}"));
    }
    for f in &failures {
        println!("      borderless miss: {f}");
    }
    Ok(format!("{ok}/50 column counts correct"))
}

fn lattice_fuzz() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(13);
    let ts = |s: i64| Utc.timestamp_opt(1_700_000_000 + s, 0).unwrap();
    let mut applied = 0usize;
    for run in 0..10_000 {
        let region = Region::new(0, BBox::new(0.0, 0.0, 300.0, 200.0), RegionSource::UserDrawn);
        let mut a = TableArtifact::new("tbl-f", "doc-f", region, "u", ts(0)).map_err(|e| e.to_string())?;
        let nr = rng.random_range(1..=5);
        let nc = rng.random_range(1..=5);
        let structure = Structure {
            row_bounds: (0..=nr).map(|i| 200.0 * i as f64 / nr as f64).collect(),
            col_bounds: (0..=nc).map(|i| 300.0 * i as f64 / nc as f64).collect(),
        };
        a.apply(EditOp::Stage { to: Stage::Structured, structure: Some(structure), contents: None }, "u", ts(1))
            .map_err(|e| format!("run {run}: {e}"))?;
        for step in 0..rng.random_range(1..40) {
            let (r, c) = (a.grid.rows(), a.grid.cols());
            let op = match rng.random_range(0..6) {
                0 => {
                    let r0 = rng.random_range(0..r + 1);
                    let c0 = rng.random_range(0..c + 1);
                    EditOp::Merge { rows: [r0, r0 + rng.random_range(0..3)], cols: [c0, c0 + rng.random_range(0..3)] }
                }
                1 => EditOp::Split { span: rng.random_range(0..a.grid.spans.len() + 2) },
                2 => EditOp::AddRow { at: rng.random_range(0..r + 2) },
                3 => EditOp::DeleteRow { row: rng.random_range(0..r + 1) },
                4 => EditOp::AddColumn { at: rng.random_range(0..c + 2) },
                _ => EditOp::DeleteColumn { col: rng.random_range(0..c + 1) },
            };
            let before = a.clone();
            match a.apply(op.clone(), "u", ts(2 + step)) {
                Ok(()) => {
                    applied += 1;
                    a.grid.validate().map_err(|e| format!("run {run}: {op:?} broke the grid: {e}"))?;
                    let area: usize = a.grid.spans.iter().map(|s| s.row_extent * s.col_extent).sum();
                    if area != a.grid.rows() * a.grid.cols() {
                        return Err(format!("run {run}: spans cover {area} of {} cells", a.grid.rows() * a.grid.cols()));
                    }
                }
                Err(_) if a == before => {}
                Err(e) => return Err(format!("run {run}: rejected {op:?} ({e}) but changed state")),
            }
        }
        let replayed = TableArtifact::replay("tbl-f", "doc-f", &a.edit_log).map_err(|e| format!("run {run}: replay {e}"))?;
        if replayed != a {
            return Err(format!("run {run}: replay differs"));
        }
        // Independent check of the final grid from a fresh lattice.
        CellGrid::from_bounds(region, a.grid.row_bounds.clone(), a.grid.col_bounds.clone()).map_err(|e| e.to_string())?;
    }
    Ok(format!("10000 sequences, {applied} accepted ops, replay exact"))
}

fn maps() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(14);
    let (mut queries, mut worst, mut two_tick) = (0usize, 0.0f64, 0usize);
    for n in 0..100 {
        let frame = BBox::new(120.0, 150.0, rng.random_range(400.0..560.0), rng.random_range(380.0..500.0));
        let lon0 = rng.random_range(-170i32..100) as f64;
        let lon_span = rng.random_range(4i32..60) as f64;
        let lat0 = rng.random_range(-80i32..40) as f64;
        let lat_span = rng.random_range(4i32..40) as f64;
        let nlon = rng.random_range(2usize..=5);
        let nlat = rng.random_range(2usize..=5);
        let lon_at = |d: f64| frame.x0 + (d - lon0) / lon_span * frame.width();
        let lat_at = |d: f64| frame.y0 + (d - lat0) / lat_span * frame.height();
        let marks = |start: f64, span: f64, k: usize| -> Vec<f64> {
            let step = (span as usize / k).max(1) as f64;
            (0..k).map(|i| start + step * i as f64).collect()
        };
        let lon_ticks: Vec<(f64, String)> =
            marks(lon0, lon_span, nlon).into_iter().map(|d| (lon_at(d), format_label(Axis::Longitude, d))).collect();
        let lat_ticks: Vec<(f64, String)> =
            marks(lat0, lat_span, nlat).into_iter().map(|d| (lat_at(d), format_label(Axis::Latitude, d))).collect();
        let mut b = PdfBuilder::new();
        b.page(640.0, 600.0).map_frame(frame, &lon_ticks, &lat_ticks, 7.0);
        let page = parse_pdf(&b.build().unwrap()).map_err(|e| e.to_string())?.pages.remove(0);
        let region = Region::new(0, frame, RegionSource::UserDrawn);
        let ticks = detect_ticks(&page, &region, &MapConfig::default());
        if ticks.len() != nlon + nlat {
            return Err(format!("map {n}: {} of {} ticks found", ticks.len(), nlon + nlat));
        }
        let cal = calibrate(&region, &ticks).map_err(|e| format!("map {n}: {e}"))?;
        for _ in 0..20 {
            let (qx, qy) = (rng.random_range(0.0..1.0), rng.random_range(0.0..1.0));
            let p = locate_point(&cal, frame.x0 + qx * frame.width(), frame.y0 + qy * frame.height()).map_err(|e| e.to_string())?;
            let el = (p.longitude - (lon0 + qx * lon_span)).abs() / lon_span;
            let ea = (p.latitude - (lat0 + qy * lat_span)).abs() / lat_span;
            worst = worst.max(el).max(ea);
            queries += 1;
        }

        // Two explicit ticks per axis: the mapping is the exact line through them.
        let tick = |axis, pixel, degrees| AxisTick { axis, pixel, degrees, label_text: String::new() };
        let (x0, x1) = (rng.random_range(-300.0..300.0), rng.random_range(301.0..900.0));
        let (y0, y1) = (rng.random_range(-300.0..300.0), rng.random_range(301.0..900.0));
        let (a0, a1) = (rng.random_range(-180.0..0.0), rng.random_range(0.5..180.0));
        let (b0, b1) = (rng.random_range(-90.0..0.0), rng.random_range(0.5..90.0));
        let ticks = vec![tick(Axis::Longitude, x0, a0), tick(Axis::Longitude, x1, a1), tick(Axis::Latitude, y0, b0), tick(Axis::Latitude, y1, b1)];
        let region = Region::new(0, BBox::new(-400.0, -400.0, 1000.0, 1000.0), RegionSource::UserDrawn);
        let cal = calibrate(&region, &ticks).map_err(|e| format!("two-tick {n}: {e}"))?;
        for _ in 0..10 {
            let (x, y) = (rng.random_range(x0..x1), rng.random_range(y0..y1));
            let p = locate_point(&cal, x, y).map_err(|e| e.to_string())?;
            let want_lon = a0 + (x - x0) / (x1 - x0) * (a1 - a0);
            let want_lat = b0 + (y - y0) / (y1 - y0) * (b1 - b0);
            if (p.longitude - want_lon).abs() > 1e-9 || (p.latitude - want_lat).abs() > 1e-9 {
                return Err(format!("two-tick {n}: ({x}, {y}) -> {p:?}, want ({want_lon}, {want_lat})"));
            }
            two_tick += 1;
        }
    }
    if worst >= 1e-3 {
        return Err(format!("worst relative error {worst:.2e}"));
    }
    Ok(format!("{queries} queries, worst error {:.2e} of span; {two_tick} two-tick queries within 1e-9", worst))
}

/// Expected permissions, written out independently of the implementation.
const MATRIX: [(&str, [bool; 5]); 3] =
    [("owner", [true, true, true, true, true]), ("manager", [false, true, true, true, true]), ("member", [false, false, false, true, false])];
const ACTIONS: [&str; 5] = ["add_remove_manager", "add_remove_member", "add_delete_project", "import_file", "project_settings"];

async fn register(api: &common::Api, name: String) -> (String, String) {
    let (_, v) = api.call("POST", "/auth/register", None, Some(json!({"username": name, "password": common::PASSWORD}))).await;
    (v["user_id"].as_str().unwrap().to_string(), api.login(&name).await)
}

fn permissions() -> Result<String, String> {
    let rt = tokio::runtime::Runtime::new().unwrap();
    rt.block_on(async {
        let data = tempfile::tempdir().unwrap();
        let api = common::Api::open(data.path());
        let pdf = common::corpus().remove(1).1;
        let mut cases = Vec::new();
        for (role, row) in MATRIX {
            for (i, action) in ACTIONS.iter().enumerate() {
                cases.push((Some(role), *action, row[i]));
            }
        }
        for action in ["add_delete_project", "import_file", "project_settings"] {
            cases.push((None, action, false));
        }
        let mut passed = 0;
        for (n, (role, action, want)) in cases.iter().enumerate() {
            let (_, owner) = register(&api, format!("own{n}")).await;
            let (actor_id, actor) = register(&api, format!("act{n}")).await;
            let (victim_id, _) = register(&api, format!("vic{n}")).await;
            let team = api.ok("POST", "/teams", &owner, Some(json!({"name": "T"}))).await["team_id"].as_str().unwrap().to_string();
            let proj = api.ok("POST", "/projects", &owner, Some(json!({"team_id": team, "name": "P"}))).await["project_id"]
                .as_str()
                .unwrap()
                .to_string();
            match *role {
                Some("owner") => {
                    api.ok("POST", &format!("/teams/{team}/members"), &owner, Some(json!({"user_id": actor_id, "role": "manager"}))).await;
                    api.ok("PATCH", &format!("/teams/{team}/members/{actor_id}"), &owner, Some(json!({"role": "owner"}))).await;
                }
                Some(r) => {
                    api.ok("POST", &format!("/teams/{team}/members"), &owner, Some(json!({"user_id": actor_id, "role": r}))).await;
                }
                None => {}
            }
            let (status, body) = match *action {
                "add_remove_manager" => {
                    api.call("POST", &format!("/teams/{team}/members"), Some(&actor), Some(json!({"user_id": victim_id, "role": "manager"}))).await
                }
                "add_remove_member" => {
                    api.call("POST", &format!("/teams/{team}/members"), Some(&actor), Some(json!({"user_id": victim_id, "role": "member"}))).await
                }
                "add_delete_project" => api.call("POST", "/projects", Some(&actor), Some(json!({"team_id": team, "name": "Q"}))).await,
                "import_file" => api.upload(&actor, &proj, "a.pdf", pdf.clone()).await,
                _ => api.call("PATCH", &format!("/projects/{proj}/settings"), Some(&actor), Some(json!({"description": "d"}))).await,
            };
            let ok = if *want { status.is_success() } else { status == 403 && body["code"] == "permission_denied" };
            if !ok {
                return Err(format!("{role:?} {action}: got {status} {body}"));
            }
            passed += 1;
        }
        Ok(format!("{passed}/{} cases", cases.len()))
    })
}

fn locks() -> Result<String, String> {
    const THREADS: usize = 64;
    const ROUNDS: usize = 100;
    let s = Service::in_memory(ServiceConfig { bcrypt_cost: 4, ..Default::default() }, Box::new(SystemClock)).unwrap();
    let ids: Vec<String> = (0..THREADS).map(|i| s.register(&format!("u{i}"), "pw").unwrap().user_id).collect();
    let team = s.create_team(&ids[0], "T").unwrap().team_id;
    for id in &ids[1..] {
        s.add_member(&ids[0], &team, id, Role::Member).unwrap();
    }
    let proj = s.create_project(&ids[0], &team, "P").unwrap().project_id;
    let doc = s.import_file(&ids[0], &proj, "a.pdf", common::corpus().remove(1).1).unwrap().doc_id;

    let barrier = Barrier::new(THREADS);
    let winners: Vec<AtomicUsize> = (0..ROUNDS).map(|_| AtomicUsize::new(0)).collect();
    let holding = AtomicUsize::new(0);
    let overlap = AtomicUsize::new(0);
    std::thread::scope(|sc| {
        for id in &ids {
            let (s, barrier, winners, doc, holding, overlap) = (&s, &barrier, &winners, &doc, &holding, &overlap);
            sc.spawn(move || {
                for w in winners.iter() {
                    barrier.wait();
                    if s.acquire_lock(id, doc).is_ok() {
                        w.fetch_add(1, Ordering::SeqCst);
                        if holding.fetch_add(1, Ordering::SeqCst) != 0 {
                            overlap.fetch_add(1, Ordering::SeqCst);
                        }
                        holding.fetch_sub(1, Ordering::SeqCst);
                    }
                    barrier.wait();
                    let _ = s.release_lock(id, doc);
                    barrier.wait();
                }
            });
        }
    });
    let violations = winners.iter().filter(|w| w.load(Ordering::SeqCst) != 1).count() + overlap.load(Ordering::SeqCst);
    if violations > 0 {
        return Err(format!("{violations} violations"));
    }

    s.take_charge(&ids[5], &doc).map_err(|e| e.to_string())?;
    let s = Arc::new(s);
    let rejected = AtomicUsize::new(0);
    std::thread::scope(|sc| {
        for id in &ids {
            let (s, doc, rejected, principal) = (&s, &doc, &rejected, &ids[5]);
            sc.spawn(move || match s.acquire_lock(id, doc) {
                Err(ServiceError::NotPrincipal { principal: Some(p) }) if &p == principal && id != principal => {
                    rejected.fetch_add(1, Ordering::SeqCst);
                }
                Ok(_) if id == principal => {}
                other => panic!("{id}: {other:?}"),
            });
        }
    });
    let rejected = rejected.load(Ordering::SeqCst);
    if rejected != THREADS - 1 {
        return Err(format!("{rejected} of {} non-principals rejected", THREADS - 1));
    }
    Ok(format!("{ROUNDS} rounds x {THREADS} threads, 0 violations; {rejected} non-principals rejected"))
}

/// Brute force: compare every value against every other and count.
fn oracle_pick<T: Clone, K: PartialEq>(votes: &[(usize, T)], key: impl Fn(&T) -> K) -> Option<T> {
    let mut best: Option<(usize, usize, T)> = None;
    for (_, v) in votes {
        let k = key(v);
        let count = votes.iter().filter(|(_, o)| key(o) == k).count();
        let (class_rank, rep) = votes.iter().filter(|(_, o)| key(o) == k).min_by_key(|(r, _)| *r).map(|(r, o)| (*r, o.clone())).unwrap();
        let better = match &best {
            None => true,
            Some((c, r, _)) => count > *c || (count == *c && class_rank < *r),
        };
        if better {
            best = Some((count, class_rank, rep));
        }
    }
    best.map(|(_, _, v)| v)
}

fn oracle(cands: &[MetaCandidate], priority: &[String]) -> MetaInfo {
    let rank = |c: &MetaCandidate| priority.iter().position(|p| *p == c.adapter_id).unwrap();
    let text = |get: fn(&MetaFields) -> &Option<String>| -> String {
        let votes: Vec<(usize, String)> =
            cands.iter().filter_map(|c| get(&c.fields).clone().filter(|s| !s.trim().is_empty()).map(|s| (rank(c), s))).collect();
        oracle_pick(&votes, |s| normalize_text(s)).unwrap_or_default()
    };
    let authors: Vec<(usize, Vec<String>)> = cands
        .iter()
        .filter_map(|c| {
            let list: Vec<String> = c.fields.authors.clone()?.into_iter().filter(|a| !a.trim().is_empty()).collect();
            (!list.is_empty()).then(|| (rank(c), list))
        })
        .collect();
    let years: Vec<(usize, i32)> =
        cands.iter().filter_map(|c| c.fields.year.filter(|y| (1500..=2100).contains(y)).map(|y| (rank(c), y))).collect();
    MetaInfo {
        title: text(|f| &f.title),
        authors: oracle_pick(&authors, |a| a.iter().map(|s| normalize_text(s)).collect::<Vec<_>>()).unwrap_or_default(),
        venue: text(|f| &f.venue),
        year: oracle_pick(&years, |y| *y),
        abstract_text: text(|f| &f.abstract_text),
    }
}

fn respell(rng: &mut StdRng, s: &str) -> String {
    match rng.random_range(0..4) {
        0 => s.to_uppercase(),
        1 => format!("  {}  ", s.replace(' ', "   ")),
        2 => s.to_lowercase(),
        _ => s.to_string(),
    }
}

fn meta_voting() -> Result<String, String> {
    let mut rng = StdRng::seed_from_u64(17);
    let titles = ["Granite suites", "Basalt flows", "Zircon ages in basalt"];
    let venues = ["J. Petrology", "Lithos", ""];
    let people = ["A. Rivera", "B. Okafor", "C. Lindqvist"];
    let (mut planted, mut tied) = (0, 0);
    for set in 0..1000 {
        let k = rng.random_range(3..=5);
        let mut priority: Vec<String> = (0..k).map(|i| format!("adapter{i}")).collect();
        priority.shuffle(&mut rng);
        let mode = set % 3;
        // mode 0: planted majority, 1: planted two-way tie, 2: free random
        let (maj, alt) = (rng.random_range(0..titles.len()), rng.random_range(0..titles.len()));
        let mut cands = Vec::new();
        for (i, id) in priority.iter().enumerate() {
            let pick = match mode {
                0 if i < k / 2 + 1 => maj,
                1 if k % 2 == 0 => [maj, alt][i % 2],
                1 => [maj, alt, (maj + 1) % titles.len()][i.min(2) % 3],
                _ => rng.random_range(0..titles.len()),
            };
            let title = match rng.random_range(0..10) {
                0 => None,
                1 => Some("   ".to_string()),
                _ => Some(respell(&mut rng, titles[pick])),
            };
            let authors = match rng.random_range(0..6) {
                0 => None,
                1 => Some(vec![]),
                2 => Some(vec!["".to_string(), "  ".to_string()]),
                _ => {
                    let n = if mode == 0 && i < k / 2 + 1 { 2 } else { rng.random_range(1..=2) };
                    Some(people[..n].iter().map(|p| respell(&mut rng, p)).collect())
                }
            };
            let year = match rng.random_range(0..6) {
                0 => None,
                1 => Some(*[1200, 2500, 0].choose(&mut rng).unwrap()),
                _ => Some(*[2001, 2015, 2023].choose(&mut rng).unwrap()),
            };
            let venue = *venues.choose(&mut rng).unwrap();
            let venue = Some(respell(&mut rng, venue));
            let abstract_text = rng.random_bool(0.5).then(|| respell(&mut rng, titles[pick]));
            cands.push(MetaCandidate { adapter_id: id.clone(), fields: MetaFields { title, authors, venue, year, abstract_text } });
        }
        cands.shuffle(&mut rng);
        match mode {
            0 => planted += 1,
            1 => tied += 1,
            _ => {}
        }
        let got = vote_fields(&cands, &priority).map_err(|e| e.to_string())?;
        let want = oracle(&cands, &priority);
        if got != want {
            return Err(format!("set {set}: got {got:?}, oracle {want:?}"));
        }
    }
    Ok(format!("1000/1000 sets agree ({planted} planted majorities, {tied} planted ties)"))
}

fn integration() -> Result<String, String> {
    let f = fixture::fixture();
    let files = (0..f.docs.len())
        .map(|i| {
            integrate_file(
                &FileInputs {
                    doc: &f.docs[i],
                    tables: &f.tables[i],
                    annotations: &f.annotations[i],
                    geo_points: &f.points[i],
                    overrides: &f.overrides[i],
                },
                &f.schema,
            )
        })
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let project = integrate_project(&files, &f.schema).map_err(|e| e.to_string())?;
    let csv = export_csv(&project);
    if csv != GOLDEN {
        return Err(format!("CSV differs from golden:\n{csv}"));
    }
    let sum: usize = files.iter().map(|s| s.rows.len()).sum();
    if project.rows.len() != sum {
        return Err(format!("{} rows, files sum to {sum}", project.rows.len()));
    }
    let mut known = BTreeSet::new();
    for i in 0..f.docs.len() {
        known.insert(f.docs[i].doc_id.clone());
        known.extend(f.tables[i].iter().map(|t| t.table_id.clone()));
        known.extend(f.points[i].iter().map(|p| p.point_id.clone()));
        known.extend(f.annotations[i].iter().map(|a| a.annotation_id.clone()));
    }
    let mut filled = 0;
    for (r, row) in project.rows.iter().enumerate() {
        for (c, cell) in row.iter().enumerate() {
            if cell.is_empty() {
                continue;
            }
            filled += 1;
            match &project.provenance[r][c] {
                Some(p) if known.contains(&p.source_id) && known.contains(&p.doc_id) => {}
                other => return Err(format!("cell ({r}, {c}) {cell:?}: provenance {other:?}")),
            }
        }
    }
    let side = export_provenance_csv(&project);
    if side.lines().count() != filled + 1 {
        return Err(format!("provenance sidecar has {} records for {filled} cells", side.lines().count() - 1));
    }
    Ok(format!("golden match, {sum} rows, {filled} cells with provenance"))
}

fn end_to_end_once() -> Result<(String, String), String> {
    let data = tempfile::tempdir().unwrap();
    let papers = tempfile::tempdir().unwrap();
    common::provision(data.path());
    common::write_corpus(papers.path());
    let d = data.path().to_str().unwrap().to_string();
    let (code, out) = common::cli(&["import", "--data-dir", &d, "--project", "Crust", "--dir", papers.path().to_str().unwrap(), "--user", "bob", "--password", common::PASSWORD, "--json"]);
    if code != EXIT_OK {
        return Err(format!("import exit {code}: {out}"));
    }
    let report: serde_json::Value = serde_json::from_str(&out).map_err(|e| e.to_string())?;
    let project = report["project_id"].as_str().unwrap().to_string();
    let tables = tokio::runtime::Runtime::new().unwrap().block_on(async {
        let api = common::Api::open(data.path());
        common::extract_all(&api, "alice", &project).await
    });
    if tables != 3 {
        return Err(format!("{tables} tables extracted"));
    }
    let out_path = data.path().join("export.csv");
    let (code, out) = common::cli(&["export", "--data-dir", &d, "--project", "Crust", "--out", out_path.to_str().unwrap()]);
    if code != EXIT_OK {
        return Err(format!("export exit {code}: {out}"));
    }
    let csv = std::fs::read_to_string(&out_path).unwrap();
    let prov = std::fs::read_to_string(data.path().join("export.provenance.csv")).unwrap();

    // The library entry points agree with the command.
    let svc = Service::open(data.path(), ServiceConfig::default()).map_err(|e| e.to_string())?;
    let again = data.path().join("again.csv");
    let r = cmd_export(&svc, "Crust", &again).map_err(|e| e.to_string())?;
    if std::fs::read_to_string(&again).unwrap() != csv || r.rows != 5 {
        return Err("library export differs".into());
    }
    let empty = tempfile::tempdir().unwrap();
    cmd_import(&svc, "Crust", empty.path(), 1, "bob", common::PASSWORD).map_err(|e| e.to_string())?;
    Ok((csv, prov))
}

fn end_to_end() -> Result<String, String> {
    let (a, pa) = end_to_end_once()?;
    let (b, pb) = end_to_end_once()?;
    if a != b || pa != pb {
        return Err(format!("runs differ:\n{a}\n---\n{b}"));
    }
    let rows = a.lines().count() - 1;
    if rows != 5 {
        return Err(format!("{rows} rows exported:\n{a}"));
    }
    Ok(format!("import, extraction and export exit 0; {rows} rows identical across two runs"))
}

#[test]
fn acceptance() {
    let criteria: [(&str, fn() -> Result<String, String>); 9] = [
        ("ruled table round-trip", ruled_tables),
        ("borderless column recovery", borderless_tables),
        ("lattice invariant and replay", lattice_fuzz),
        ("map geo-referencing", maps),
        ("permission matrix", permissions),
        ("lock mutual exclusion", locks),
        ("meta voting oracle", meta_voting),
        ("integration golden round-trip", integration),
        ("end-to-end headless", end_to_end),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_else(|| "panic".into()))
        });
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(why) => {
                println!("FAIL  {name}: {why}");
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed: {failed:?}");
}
