use super::*;
use crate::document::synth::PdfBuilder;
use crate::table::GridError;
use chrono::TimeZone;

fn cfg() -> ServiceConfig {
    ServiceConfig { bcrypt_cost: 4, ..Default::default() }
}

struct Clocked {
    svc: Service,
    clock: std::sync::Arc<ManualClock>,
}

struct Shared(std::sync::Arc<ManualClock>);

impl Clock for Shared {
    fn now(&self) -> DateTime<Utc> {
        self.0.now()
    }
}

fn service() -> Clocked {
    let clock = std::sync::Arc::new(ManualClock::new(Utc.timestamp_opt(1_700_000_000, 0).unwrap()));
    let svc = Service::in_memory(cfg(), Box::new(Shared(clock.clone()))).unwrap();
    Clocked { svc, clock }
}

fn pdf(title: &str) -> Vec<u8> {
    let mut b = PdfBuilder::new();
    let p = b.page(612.0, 792.0);
    p.text(72.0, 720.0, 18.0, title);
    p.text(72.0, 696.0, 10.0, "A. Author");
    p.text(72.0, 600.0, 10.0, "Samples of granite and basalt");
    let cells: Vec<Vec<String>> = vec![vec!["Sample".into(), "SiO2".into()], vec!["S1".into(), "72.1".into()]];
    p.ruled_table(72.0, 500.0, &[100.0, 80.0], 20.0, 10.0, &cells);
    b.build().unwrap()
}

/// Owner `own`, manager `man`, member `mem`, outsider `out`; one project.
struct World {
    c: Clocked,
    own: String,
    man: String,
    mem: String,
    out: String,
    team: String,
    proj: String,
}

fn world() -> World {
    let c = service();
    let s = &c.svc;
    let own = s.register("owner", "pw").unwrap().user_id;
    let man = s.register("manager", "pw").unwrap().user_id;
    let mem = s.register("member", "pw").unwrap().user_id;
    let out = s.register("outsider", "pw").unwrap().user_id;
    let team = s.create_team(&own, "Lab").unwrap().team_id;
    s.add_member(&own, &team, &man, Role::Manager).unwrap();
    s.add_member(&own, &team, &mem, Role::Member).unwrap();
    let proj = s.create_project(&own, &team, "Granites").unwrap().project_id;
    World { c, own, man, mem, out, team, proj }
}

impl World {
    fn s(&self) -> &Service {
        &self.c.svc
    }

    fn import(&self, title: &str) -> String {
        self.s().import_file(&self.mem, &self.proj, &format!("{title}.pdf"), pdf(title)).unwrap().doc_id
    }
}

#[test]
fn passwords_are_hashed_and_sessions_expire() {
    let w = world();
    let digest = w.s().password_digest(&w.own).unwrap();
    assert!(digest.starts_with("$2"));
    assert_ne!(digest, "pw");
    assert_eq!(w.s().login("owner", "nope").unwrap_err(), ServiceError::InvalidCredentials);
    assert_eq!(w.s().login("nobody", "pw").unwrap_err(), ServiceError::InvalidCredentials);
    let sess = w.s().login("owner", "pw").unwrap();
    assert_eq!(w.s().authenticate(&sess.token).unwrap(), w.own);
    w.c.clock.advance(cfg().session_ttl_secs + 1);
    assert_eq!(w.s().authenticate(&sess.token).unwrap_err(), ServiceError::Unauthenticated);
    assert!(matches!(w.s().register("owner", "x"), Err(ServiceError::DuplicateUsername(_))));
}

#[test]
fn role_changes_follow_the_matrix() {
    let w = world();
    let s = w.s();
    // Manager cannot touch managers, can manage members.
    let extra = s.register("extra", "pw").unwrap().user_id;
    assert!(matches!(s.add_member(&w.man, &w.team, &extra, Role::Manager), Err(ServiceError::PermissionDenied(_))));
    s.add_member(&w.man, &w.team, &extra, Role::Member).unwrap();
    assert!(matches!(s.set_role(&w.man, &w.team, &extra, Role::Manager), Err(ServiceError::PermissionDenied(_))));
    s.set_role(&w.own, &w.team, &extra, Role::Manager).unwrap();
    assert!(matches!(s.remove_member(&w.man, &w.team, &extra), Err(ServiceError::PermissionDenied(_))));
    s.remove_member(&w.own, &w.team, &extra).unwrap();
    // The owner cannot be removed; ownership moves only by transfer.
    assert!(s.remove_member(&w.own, &w.team, &w.own).is_err());
    assert!(matches!(s.add_member(&w.own, &w.team, &extra, Role::Owner), Err(ServiceError::BadRequest(_))));
    s.set_role(&w.own, &w.team, &w.man, Role::Owner).unwrap();
    let t = s.get_team(&w.man, &w.team).unwrap();
    assert_eq!(t.owner(), Some(&w.man));
    assert_eq!(t.members[&w.own], Role::Manager);
    assert_eq!(t.members.values().filter(|r| **r == Role::Owner).count(), 1);
}

#[test]
fn members_import_but_cannot_manage_projects() {
    let w = world();
    let s = w.s();
    assert!(matches!(s.create_project(&w.mem, &w.team, "x"), Err(ServiceError::PermissionDenied(_))));
    assert!(matches!(s.update_settings(&w.mem, &w.proj, SettingsPatch::default()), Err(ServiceError::PermissionDenied(_))));
    assert!(matches!(s.import_file(&w.out, &w.proj, "a.pdf", pdf("A")), Err(ServiceError::PermissionDenied(_))));
    let doc = w.import("A");
    assert!(matches!(s.get_meta(&w.out, &doc), Err(ServiceError::PermissionDenied(_))));
    assert!(matches!(s.list_files(&w.out, &w.proj, &SearchQuery::default()), Err(ServiceError::PermissionDenied(_))));
}

#[test]
fn import_reports_each_file() {
    let w = world();
    let files = vec![
        ("good.pdf".to_string(), pdf("Good one")),
        ("bad.pdf".to_string(), b"%PDF-1.4 not really".to_vec()),
        ("also.pdf".to_string(), pdf("Also good")),
    ];
    let out = w.s().import_files(&w.mem, &w.proj, files, 3).unwrap();
    assert_eq!(out.len(), 3);
    assert_eq!(out[0].doc_id.as_deref(), Some("doc-000001"));
    assert_eq!(out[1].error.as_ref().unwrap().code, "malformed_pdf");
    assert_eq!(out[2].doc_id.as_deref(), Some("doc-000002"));
    let meta = w.s().get_meta(&w.mem, "doc-000001").unwrap();
    assert_eq!(meta.title, "Good one");
    assert_eq!(w.s().pdf_bytes(&w.own, "doc-000002").unwrap(), pdf("Also good"));
}

#[test]
fn locks_are_exclusive_and_expire() {
    let w = world();
    let s = w.s();
    let doc = w.import("A");
    assert_eq!(s.put_meta(&w.mem, &doc, MetaInfo::default()).unwrap_err(), ServiceError::LockNotHeld);
    s.acquire_lock(&w.mem, &doc).unwrap();
    assert_eq!(s.acquire_lock(&w.man, &doc).unwrap_err(), ServiceError::LockHeldByOther { holder: w.mem.clone() });
    assert_eq!(s.put_meta(&w.man, &doc, MetaInfo::default()).unwrap_err(), ServiceError::LockNotHeld);
    assert!(s.release_lock(&w.man, &doc).is_err());
    let m = MetaInfo { title: "Edited".into(), ..Default::default() };
    s.put_meta(&w.mem, &doc, m).unwrap();
    let f = s.file_summary(&w.own, &doc).unwrap();
    assert_eq!(f.last_editor.as_deref(), Some(w.mem.as_str()));
    assert_eq!(f.lock_holder.as_deref(), Some(w.mem.as_str()));
    // Lease runs out; another member may take over.
    w.c.clock.advance(cfg().lock_lease_secs + 1);
    assert_eq!(s.put_meta(&w.mem, &doc, MetaInfo::default()).unwrap_err(), ServiceError::LockNotHeld);
    s.acquire_lock(&w.man, &doc).unwrap();
    s.release_lock(&w.man, &doc).unwrap();
    assert!(s.lock_status(&w.own, &doc).unwrap().is_none());
}

#[test]
fn principal_blocks_everyone_else() {
    let w = world();
    let s = w.s();
    let doc = w.import("A");
    s.take_charge(&w.mem, &doc).unwrap();
    assert_eq!(s.take_charge(&w.man, &doc).unwrap_err(), ServiceError::AlreadyAssigned { principal: w.mem.clone() });
    assert_eq!(s.acquire_lock(&w.man, &doc).unwrap_err(), ServiceError::NotPrincipal { principal: Some(w.mem.clone()) });
    s.acquire_lock(&w.mem, &doc).unwrap();
    s.put_meta(&w.mem, &doc, MetaInfo { title: "Mine".into(), ..Default::default() }).unwrap();
    assert_eq!(s.my_files(&w.mem).len(), 1);
    // A plain member cannot release someone else's charge; a manager can.
    let other = s.register("other", "pw").unwrap().user_id;
    s.add_member(&w.own, &w.team, &other, Role::Member).unwrap();
    assert!(matches!(s.release_charge(&other, &doc), Err(ServiceError::NotPrincipal { .. })));
    s.release_charge(&w.man, &doc).unwrap();
    assert!(s.my_files(&w.mem).is_empty());
    assert!(s.file_summary(&w.mem, &doc).unwrap().principal.is_none());
}

#[test]
fn search_filters_sorts_and_pages() {
    let w = world();
    let s = w.s();
    let a = w.import("Zircon ages");
    w.c.clock.advance(10);
    let b = w.import("Basalt zircon");
    w.c.clock.advance(10);
    let c = s.import_file(&w.own, &w.proj, "c.pdf", pdf("Apatite")).unwrap().doc_id;
    let q = |q: SearchQuery| s.list_files(&w.mem, &w.proj, &q).unwrap();
    let ids = |p: Page<FileSummary>| p.items.into_iter().map(|f| f.doc_id).collect::<Vec<_>>();
    assert_eq!(ids(q(SearchQuery { q: Some("ZIRCON".into()), sort: Some("title".into()), ..Default::default() })), vec![b.clone(), a.clone()]);
    assert_eq!(ids(q(SearchQuery { import_user: Some(w.own.clone()), ..Default::default() })), vec![c.clone()]);
    assert_eq!(ids(q(SearchQuery::default())), vec![c.clone(), b.clone(), a.clone()]);
    assert_eq!(ids(q(SearchQuery { order: Some("asc".into()), ..Default::default() })), vec![a.clone(), b.clone(), c.clone()]);
    let p2 = q(SearchQuery { per_page: Some(2), page: Some(2), ..Default::default() });
    assert_eq!((p2.total, ids(p2)), (3, vec![a.clone()]));
    // Editing bumps update_time.
    s.acquire_lock(&w.mem, &a).unwrap();
    w.c.clock.advance(10);
    s.put_meta(&w.mem, &a, MetaInfo { title: "Zircon ages".into(), ..Default::default() }).unwrap();
    assert_eq!(ids(q(SearchQuery { sort: Some("update_time".into()), ..Default::default() }))[0], a);
    assert_eq!(
        s.list_files(&w.mem, &w.proj, &SearchQuery { sort: Some("size".into()), ..Default::default() }).unwrap_err(),
        ServiceError::InvalidSortKey("size".into())
    );
    s.take_charge(&w.man, &b).unwrap();
    assert_eq!(ids(q(SearchQuery { principal: Some(w.man.clone()), ..Default::default() })), vec![b]);
    assert_eq!(s.search_documents(&w.mem, &w.team, &SearchQuery { q: Some("apatite".into()), ..Default::default() }).unwrap().total, 1);
}

#[test]
fn recent_list_is_bounded_and_deduplicated() {
    let w = world();
    let s = w.s();
    let docs: Vec<String> = (0..25).map(|i| w.import(&format!("Doc {i}"))).collect();
    for d in &docs {
        s.get_meta(&w.mem, d).unwrap();
    }
    s.get_page(&w.mem, &docs[10], 0).unwrap();
    let r = s.recent_files(&w.mem);
    assert_eq!(r.len(), 20);
    assert_eq!(r[0].doc_id, docs[10]);
    assert_eq!(r.iter().filter(|f| f.doc_id == docs[10]).count(), 1);
}

#[test]
fn deleted_projects_restore_within_retention() {
    let w = world();
    let s = w.s();
    let doc = w.import("A");
    assert!(matches!(s.delete_project(&w.mem, &w.proj), Err(ServiceError::PermissionDenied(_))));
    s.delete_project(&w.man, &w.proj).unwrap();
    assert!(matches!(s.get_meta(&w.mem, &doc), Err(ServiceError::NotFound(_))));
    w.c.clock.advance(29 * 86400);
    s.restore_project(&w.own, &w.proj).unwrap();
    assert_eq!(s.get_meta(&w.mem, &doc).unwrap().title, "A");
    s.delete_project(&w.own, &w.proj).unwrap();
    w.c.clock.advance(31 * 86400);
    assert!(matches!(s.restore_project(&w.own, &w.proj), Err(ServiceError::NotFound(_))));
    assert!(matches!(s.file_summary(&w.own, &doc), Err(ServiceError::NotFound(_))));
}

#[test]
fn table_workflow_through_the_service() {
    let w = world();
    let s = w.s();
    let doc = w.import("A");
    s.acquire_lock(&w.mem, &doc).unwrap();
    let tables = s.create_tables(&w.mem, &doc, CreateTables { page: 0, detector: Some("ruling".into()), bbox: None }).unwrap();
    assert_eq!(tables.len(), 1);
    let id = tables[0].table_id.clone();
    s.table_stage(&w.mem, &id, Stage::Structured, None).unwrap();
    let t = s.table_stage(&w.mem, &id, Stage::Filled, Some("embedded")).unwrap();
    assert_eq!(t.grid.to_matrix(), vec![vec!["Sample", "SiO2"], vec!["S1", "72.1"]]);
    let t = s.table_edit(&w.mem, &id, EditOp::EditCell { row: 1, col: 1, text: "72.4".into() }).unwrap();
    assert_eq!(t.grid.to_matrix()[1][1], "72.4");
    let err = s.table_edit(&w.mem, &id, EditOp::Split { span: 0 }).unwrap_err();
    assert_eq!(err, ServiceError::Table(TableError::Grid(GridError::AlreadyUnit)));
    assert_eq!(err.code(), "already_unit");
    assert!(matches!(s.export_table(&w.mem, &id), Ok(m) if m.len() == 2));
    let jsonl = s.training_data(&w.own, &w.proj).unwrap();
    assert_eq!(jsonl.lines().count(), 4);
    assert!(jsonl.lines().all(|l| l.contains(&id)));
    assert!(s.store_versions(&doc, "tables").unwrap() >= 4);
    let replayed = TableArtifact::replay(&id, &doc, &t.edit_log).unwrap();
    assert_eq!(replayed, t);
}

#[test]
fn annotations_maps_and_summary() {
    let w = world();
    let s = w.s();
    let doc = w.import("A");
    let labels = vec![LabelDef::dictionary("rock", &["granite", "basalt"])];
    let schema = ProjectSchema::new(&["Sample", "SiO2", "Rock"]);
    let mut schema = schema;
    schema.label_to_header.insert("rock".into(), "Rock".into());
    s.update_settings(&w.own, &w.proj, SettingsPatch { labels: Some(labels), schema: Some(schema), ..Default::default() }).unwrap();
    s.acquire_lock(&w.mem, &doc).unwrap();
    let anns = s.auto_annotate(&w.mem, &doc).unwrap();
    assert_eq!(anns.iter().map(|a| a.surface_text.as_str()).collect::<Vec<_>>(), vec!["granite", "basalt"]);
    let again = s.auto_annotate(&w.mem, &doc).unwrap();
    assert_eq!(anns, again);
    let err = s.add_annotation(&w.mem, &doc, ManualAnnotation { page: 0, start: 0, end: 9999, label: "rock".into() }).unwrap_err();
    assert_eq!(err.code(), "span_out_of_range");
    assert!(s.annotations_csv(&w.mem, &doc).unwrap().starts_with("doc_id,page,start,end,"));

    let bbox = BBox::new(300.0, 100.0, 500.0, 300.0);
    use crate::map::Axis;
    let tick = |axis, pixel, degrees| AxisTick { axis, pixel, degrees, label_text: String::new() };
    let ticks = vec![
        tick(Axis::Longitude, 300.0, 100.0),
        tick(Axis::Longitude, 500.0, 110.0),
        tick(Axis::Latitude, 100.0, 30.0),
        tick(Axis::Latitude, 300.0, 40.0),
    ];
    let m = s.calibrate_map(&w.mem, &doc, CalibrateRequest { page: 0, bbox, ticks: Some(ticks) }).unwrap();
    let p = s.add_point(&w.mem, &doc, PointRequest { map_id: None, x: 400.0, y: 200.0, table_row_hint: None }).unwrap();
    assert_eq!(p.map_id, m.map_id);
    assert!((p.longitude - 105.0).abs() < 1e-9 && (p.latitude - 35.0).abs() < 1e-9);
    let err = s.add_point(&w.mem, &doc, PointRequest { map_id: None, x: 10.0, y: 10.0, table_row_hint: None }).unwrap_err();
    assert_eq!(err.code(), "pixel_outside_region");

    let t = s.create_tables(&w.mem, &doc, CreateTables { page: 0, detector: Some("ruling".into()), bbox: None }).unwrap();
    let id = &t[0].table_id;
    s.table_stage(&w.mem, id, Stage::Structured, None).unwrap();
    s.table_stage(&w.mem, id, Stage::Filled, Some("embedded")).unwrap();
    s.table_stage(&w.mem, id, Stage::Confirmed, None).unwrap();
    let sum = s.integrate_project(&w.mem, &w.proj).unwrap();
    assert_eq!(sum.headers, vec!["Sample", "SiO2", "Rock"]);
    assert_eq!(sum.rows.len(), 1);
    assert_eq!(sum.rows[0][0], "S1");
    assert!(sum.rows[0][2].contains("granite"));
}

#[test]
fn state_survives_reopen() {
    let dir = tempfile::tempdir().unwrap();
    let (user, doc) = {
        let s = Service::open(dir.path(), cfg()).unwrap();
        let u = s.register("ann", "pw").unwrap().user_id;
        let team = s.create_team(&u, "T").unwrap().team_id;
        let proj = s.create_project(&u, &team, "P").unwrap().project_id;
        let doc = s.import_file(&u, &proj, "a.pdf", pdf("Persisted")).unwrap().doc_id;
        s.acquire_lock(&u, &doc).unwrap();
        s.take_charge(&u, &doc).unwrap();
        s.create_tables(&u, &doc, CreateTables { page: 0, detector: Some("ruling".into()), bbox: None }).unwrap();
        (u, doc)
    };
    let s = Service::open(dir.path(), cfg()).unwrap();
    s.verify_password("ann", "pw").unwrap();
    assert_eq!(s.get_meta(&user, &doc).unwrap().title, "Persisted");
    assert_eq!(s.list_tables(&user, &doc).unwrap().len(), 1);
    assert_eq!(s.file_summary(&user, &doc).unwrap().principal.as_deref(), Some(user.as_str()));
    // Locks are not persisted.
    assert!(s.lock_status(&user, &doc).unwrap().is_none());
    // Ids continue after the reload.
    let team = s.create_team(&user, "T2").unwrap();
    assert_eq!(team.team_id, "team-000002");
}

#[test]
fn error_codes_and_statuses() {
    assert_eq!(ServiceError::LockHeldByOther { holder: "u".into() }.status(), 409);
    assert_eq!(ServiceError::NotPrincipal { principal: None }.status(), 403);
    assert_eq!(ServiceError::EncryptedPdf.status(), 422);
    let b = ServiceError::LockHeldByOther { holder: "u".into() }.body();
    assert_eq!(b.code, "lock_held_by_other");
    assert_eq!(b.details["holder"], "u");
}

#[test]
fn config_validation() {
    assert!(ServiceConfig::default().validate().is_ok());
    assert!(ServiceConfig { bcrypt_cost: 2, ..Default::default() }.validate().is_err());
    assert!(ServiceConfig { lock_lease_secs: 0, ..Default::default() }.validate().is_err());
    assert!(ServiceConfig { disabled_meta_adapters: vec!["info_dict".into()], ..Default::default() }.validate().is_ok());
    assert!(ServiceConfig { disabled_meta_adapters: vec!["nope".into()], ..Default::default() }.validate().is_err());
    let all = MetaRegistry::baseline().priority();
    assert!(ServiceConfig { disabled_meta_adapters: all, ..Default::default() }.validate().is_err());
}
