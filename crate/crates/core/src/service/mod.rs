//! The multi-user service: accounts, teams and permissions, projects and
//! files, the lock and principal mechanism, search, and every document
//! operation the HTTP layer exposes.
//!
//! All state lives in memory behind one mutex and is written through to the
//! store, so lock and principal changes are atomic check-and-set.

pub mod http;
mod perm;
mod search;
mod store;

pub use perm::{allowed, check_permission, Action, Role};
pub use search::{tokenize, SearchIndex};
pub use store::Store;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Mutex, MutexGuard};

use chrono::{DateTime, Duration, Utc};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::annotate::{self, AnnotateError, Annotation, LabelDef};
use crate::config::PipelineConfig;
use crate::document::{
    analyze_pdf, DocStatus, DocumentRecord, IngestError, MetaError, MetaInfo, MetaRegistry, PageContent, PageError, PdfError, UserId,
};
use crate::geom::BBox;
use crate::integrate::{self, DocOverrides, FileInputs, HeaderBatch, IntegrateError, ProjectSchema, SummaryTable};
use crate::map::{self, AxisTick, GeoPoint, MapCalibration, MapError};
use crate::table::{self, DetectorRegistry, EditOp, OcrRegistry, Recognizers, Region, RegionSource, Stage, TableArtifact, TableError};

pub trait Clock: Send + Sync {
    fn now(&self) -> DateTime<Utc>;
}

pub struct SystemClock;

impl Clock for SystemClock {
    fn now(&self) -> DateTime<Utc> {
        Utc::now()
    }
}

/// Settable clock for tests.
pub struct ManualClock(Mutex<DateTime<Utc>>);

impl ManualClock {
    pub fn new(t: DateTime<Utc>) -> Self {
        ManualClock(Mutex::new(t))
    }

    pub fn advance(&self, secs: i64) {
        let mut t = self.0.lock().unwrap();
        *t += Duration::seconds(secs);
    }
}

impl Clock for ManualClock {
    fn now(&self) -> DateTime<Utc> {
        *self.0.lock().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub pipeline: PipelineConfig,
    pub lock_lease_secs: i64,
    pub session_ttl_secs: i64,
    pub bcrypt_cost: u32,
    pub recent_len: usize,
    pub tombstone_days: i64,
    /// Meta adapter ids to switch off.
    pub disabled_meta_adapters: Vec<String>,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            pipeline: PipelineConfig::default(),
            lock_lease_secs: 300,
            session_ttl_secs: 12 * 3600,
            bcrypt_cost: 12,
            recent_len: 20,
            tombstone_days: 30,
            disabled_meta_adapters: Vec::new(),
        }
    }
}

impl ServiceConfig {
    pub fn validate(&self) -> Result<(), String> {
        self.pipeline.validate()?;
        if self.lock_lease_secs <= 0 || self.session_ttl_secs <= 0 || self.recent_len == 0 || self.tombstone_days <= 0 {
            return Err("lease, session ttl, recent length and tombstone days must be positive".into());
        }
        if !(4..=31).contains(&self.bcrypt_cost) {
            return Err("bcrypt_cost must be within 4..=31".into());
        }
        let known = MetaRegistry::baseline().priority();
        if let Some(d) = self.disabled_meta_adapters.iter().find(|d| !known.contains(d)) {
            return Err(format!("unknown meta adapter {d:?}; known: {}", known.join(", ")));
        }
        if known.iter().all(|k| self.disabled_meta_adapters.contains(k)) {
            return Err("at least one meta adapter must stay enabled".into());
        }
        Ok(())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ServiceError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("permission denied: {0}")]
    PermissionDenied(String),
    #[error("missing or expired session")]
    Unauthenticated,
    #[error("invalid username or password")]
    InvalidCredentials,
    #[error("username {0:?} is taken")]
    DuplicateUsername(String),
    #[error("document is locked by {holder}")]
    LockHeldByOther { holder: UserId },
    #[error("caller does not hold the document lock")]
    LockNotHeld,
    #[error("document is in the charge of another user")]
    NotPrincipal { principal: Option<UserId> },
    #[error("document already has a principal: {principal}")]
    AlreadyAssigned { principal: UserId },
    #[error("invalid sort key {0:?}")]
    InvalidSortKey(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("malformed pdf: {0}")]
    MalformedPdf(String),
    #[error("pdf is encrypted")]
    EncryptedPdf,
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Annotate(#[from] AnnotateError),
    #[error(transparent)]
    Integrate(#[from] IntegrateError),
    #[error(transparent)]
    Page(#[from] PageError),
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error("storage failure: {0}")]
    Storage(String),
}

impl From<IngestError> for ServiceError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Pdf(PdfError::Malformed(m)) => ServiceError::MalformedPdf(m),
            IngestError::Pdf(PdfError::Encrypted) => ServiceError::EncryptedPdf,
            IngestError::Meta(m) => ServiceError::Meta(m),
        }
    }
}

/// Wire form of an error.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    #[serde(default)]
    pub details: serde_json::Value,
}

impl ServiceError {
    pub fn code(&self) -> &'static str {
        use ServiceError::*;
        match self {
            NotFound(_) => "not_found",
            PermissionDenied(_) => "permission_denied",
            Unauthenticated => "unauthenticated",
            InvalidCredentials => "invalid_credentials",
            DuplicateUsername(_) => "duplicate_username",
            LockHeldByOther { .. } => "lock_held_by_other",
            LockNotHeld => "lock_not_held",
            NotPrincipal { .. } => "not_principal",
            AlreadyAssigned { .. } => "already_assigned",
            InvalidSortKey(_) => "invalid_sort_key",
            BadRequest(_) => "bad_request",
            MalformedPdf(_) => "malformed_pdf",
            EncryptedPdf => "encrypted_pdf",
            Table(e) => match e {
                TableError::Grid(g) => match g {
                    table::GridError::PartialSpanOverlap => "partial_span_overlap",
                    table::GridError::AlreadyUnit => "already_unit",
                    table::GridError::IndexOutOfRange { .. } => "index_out_of_range",
                    table::GridError::CannotDeleteLast => "cannot_delete_last",
                    table::GridError::InvalidLattice(_) => "invalid_lattice",
                },
                TableError::EmptyRegion => "empty_region",
                TableError::RegionOutsidePage => "region_outside_page",
                TableError::UnknownDetector(_) => "unknown_detector",
                TableError::UnknownAdapter(_) => "unknown_adapter",
                TableError::InvalidTransition { .. } => "invalid_transition",
                TableError::WrongStage { .. } => "wrong_stage",
                TableError::NotFilled => "not_filled",
                TableError::InvalidLog(_) => "invalid_log",
            },
            Map(e) => match e {
                MapError::UnparsableLabel(_) => "unparsable_label",
                MapError::InsufficientTicks(_) => "insufficient_ticks",
                MapError::DegenerateTicks(_) => "degenerate_ticks",
                MapError::PixelOutsideRegion => "pixel_outside_region",
            },
            Annotate(e) => match e {
                AnnotateError::InvalidPattern { .. } => "invalid_pattern",
                AnnotateError::InvalidLabel(_) => "invalid_label",
                AnnotateError::SpanOutOfRange { .. } => "span_out_of_range",
                AnnotateError::PageOutOfRange(_) => "page_out_of_range",
                AnnotateError::UnknownLabel(_) => "unknown_label",
                AnnotateError::IntegrityViolation(_) => "integrity_violation",
            },
            Integrate(e) => match e {
                IntegrateError::NoHeaders => "no_headers",
                IntegrateError::SchemaMismatch => "schema_mismatch",
                IntegrateError::InvalidSchema(_) => "invalid_schema",
            },
            Page(_) => "page_out_of_range",
            Meta(e) => match e {
                MetaError::NoAdapters => "no_adapters",
                MetaError::UnknownAdapter(_) => "unknown_adapter",
            },
            Storage(_) => "storage",
        }
    }

    pub fn status(&self) -> u16 {
        use ServiceError::*;
        match self {
            NotFound(_) | Page(_) => 404,
            PermissionDenied(_) | NotPrincipal { .. } => 403,
            Unauthenticated | InvalidCredentials => 401,
            DuplicateUsername(_) | LockHeldByOther { .. } | LockNotHeld | AlreadyAssigned { .. } => 409,
            InvalidSortKey(_) | BadRequest(_) => 400,
            MalformedPdf(_) | EncryptedPdf | Table(_) | Map(_) | Annotate(_) | Integrate(_) | Meta(_) => 422,
            Storage(_) => 500,
        }
    }

    pub fn body(&self) -> ErrorBody {
        let details = match self {
            ServiceError::LockHeldByOther { holder } => serde_json::json!({ "holder": holder }),
            ServiceError::NotPrincipal { principal } => serde_json::json!({ "principal": principal }),
            ServiceError::AlreadyAssigned { principal } => serde_json::json!({ "principal": principal }),
            _ => serde_json::json!({}),
        };
        ErrorBody { code: self.code().to_string(), message: self.to_string(), details }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct User {
    pub user_id: UserId,
    pub username: String,
    pub password_digest: String,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Membership {
    pub team_id: String,
    pub role: Role,
}

/// A user as shown to clients; never carries the digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserView {
    pub user_id: UserId,
    pub username: String,
    pub team_memberships: Vec<Membership>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Team {
    pub team_id: String,
    pub name: String,
    pub members: BTreeMap<UserId, Role>,
    pub created_at: DateTime<Utc>,
}

impl Team {
    pub fn owner(&self) -> Option<&UserId> {
        self.members.iter().find(|(_, r)| **r == Role::Owner).map(|(u, _)| u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Project {
    pub project_id: String,
    pub team_id: String,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub schema: ProjectSchema,
    #[serde(default)]
    pub labels: Vec<LabelDef>,
    pub created_by: UserId,
    pub created_at: DateTime<Utc>,
    #[serde(default)]
    pub deleted_at: Option<DateTime<Utc>>,
}

/// Partial project settings update; absent fields stay unchanged.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SettingsPatch {
    pub name: Option<String>,
    pub description: Option<String>,
    pub schema: Option<ProjectSchema>,
    pub header_batch: Option<HeaderBatch>,
    pub labels: Option<Vec<LabelDef>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileLock {
    pub doc_id: String,
    pub holder: UserId,
    pub acquired_at: DateTime<Utc>,
    pub lease_expiry: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrincipalAssignment {
    pub doc_id: String,
    pub principal: UserId,
    pub since: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub token: String,
    pub user_id: UserId,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapArtifact {
    pub map_id: String,
    pub doc_id: String,
    pub page_index: usize,
    pub calibration: MapCalibration,
    pub created_by: UserId,
    pub created_at: DateTime<Utc>,
}

/// Row of a file list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileSummary {
    pub doc_id: String,
    pub project_id: String,
    pub file_name: Option<String>,
    pub title: String,
    pub authors: Vec<String>,
    pub year: Option<i32>,
    pub page_count: usize,
    pub status: DocStatus,
    pub import_user: UserId,
    pub import_time: DateTime<Utc>,
    pub last_editor: Option<UserId>,
    pub last_edit_time: Option<DateTime<Utc>>,
    pub principal: Option<UserId>,
    pub lock_holder: Option<UserId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Page<T> {
    pub total: usize,
    pub page: usize,
    pub per_page: usize,
    pub items: Vec<T>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchQuery {
    pub q: Option<String>,
    pub principal: Option<String>,
    pub import_user: Option<String>,
    /// `title`, `import_time` or `update_time`.
    pub sort: Option<String>,
    /// `asc` or `desc`.
    pub order: Option<String>,
    /// 1-based.
    pub page: Option<usize>,
    pub per_page: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportOutcome {
    pub file_name: String,
    pub doc_id: Option<String>,
    pub error: Option<ErrorBody>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PageView {
    pub page: PageContent,
    /// Reading-order text that annotation offsets index into.
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateTables {
    pub page: usize,
    /// Run this detector and create one table per region found.
    #[serde(default)]
    pub detector: Option<String>,
    /// User-drawn region.
    #[serde(default)]
    pub bbox: Option<BBox>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManualAnnotation {
    pub page: usize,
    pub start: usize,
    pub end: usize,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateRequest {
    pub page: usize,
    pub bbox: BBox,
    /// Explicit ticks; detected from the margins when absent.
    #[serde(default)]
    pub ticks: Option<Vec<AxisTick>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointRequest {
    /// Defaults to the latest calibration of the document.
    #[serde(default)]
    pub map_id: Option<String>,
    pub x: f64,
    pub y: f64,
    #[serde(default)]
    pub table_row_hint: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
struct DocData {
    tables: Vec<TableArtifact>,
    annotations: Vec<Annotation>,
    maps: Vec<MapArtifact>,
    points: Vec<GeoPoint>,
    overrides: DocOverrides,
}

struct State {
    store: Store,
    users: BTreeMap<UserId, User>,
    usernames: HashMap<String, UserId>,
    teams: BTreeMap<String, Team>,
    projects: BTreeMap<String, Project>,
    docs: BTreeMap<String, DocumentRecord>,
    data: BTreeMap<String, DocData>,
    charges: BTreeMap<String, PrincipalAssignment>,
    locks: HashMap<String, FileLock>,
    sessions: HashMap<String, Session>,
    recent: HashMap<UserId, VecDeque<String>>,
    index: SearchIndex,
    counters: BTreeMap<String, u64>,
}

const K_USER: &str = "user";
const K_TEAM: &str = "team";
const K_PROJECT: &str = "project";
const K_DOC: &str = "doc";
const K_CHARGE: &str = "charge";
const K_COUNTER: &str = "counter";

impl State {
    fn load(store: Store) -> Result<Self> {
        let mut s = State {
            users: BTreeMap::new(),
            usernames: HashMap::new(),
            teams: BTreeMap::new(),
            projects: BTreeMap::new(),
            docs: BTreeMap::new(),
            data: BTreeMap::new(),
            charges: BTreeMap::new(),
            locks: HashMap::new(),
            sessions: HashMap::new(),
            recent: HashMap::new(),
            index: SearchIndex::default(),
            counters: BTreeMap::new(),
            store,
        };
        for u in s.store.all::<User>(K_USER)? {
            s.usernames.insert(u.username.clone(), u.user_id.clone());
            s.users.insert(u.user_id.clone(), u);
        }
        for t in s.store.all::<Team>(K_TEAM)? {
            s.teams.insert(t.team_id.clone(), t);
        }
        for p in s.store.all::<Project>(K_PROJECT)? {
            s.projects.insert(p.project_id.clone(), p);
        }
        for d in s.store.all::<DocumentRecord>(K_DOC)? {
            s.index.upsert(&d.doc_id, &d.meta);
            s.docs.insert(d.doc_id.clone(), d);
        }
        for c in s.store.all::<PrincipalAssignment>(K_CHARGE)? {
            s.charges.insert(c.doc_id.clone(), c);
        }
        for (name, v) in s.store.all::<(String, u64)>(K_COUNTER)? {
            s.counters.insert(name, v);
        }
        for (doc, v) in s.store.latest_artifacts::<Vec<TableArtifact>>("tables")? {
            s.data.entry(doc).or_default().tables = v;
        }
        for (doc, v) in s.store.latest_artifacts::<Vec<Annotation>>("annotations")? {
            s.data.entry(doc).or_default().annotations = v;
        }
        for (doc, v) in s.store.latest_artifacts::<Vec<MapArtifact>>("maps")? {
            s.data.entry(doc).or_default().maps = v;
        }
        for (doc, v) in s.store.latest_artifacts::<Vec<GeoPoint>>("points")? {
            s.data.entry(doc).or_default().points = v;
        }
        for (doc, v) in s.store.latest_artifacts::<DocOverrides>("overrides")? {
            s.data.entry(doc).or_default().overrides = v;
        }
        // Annotations must still match their page text.
        for (doc_id, d) in &s.data {
            if let Some(doc) = s.docs.get(doc_id) {
                annotate::check_integrity(doc, &d.annotations)?;
            }
        }
        Ok(s)
    }

    fn next_id(&mut self, prefix: &str) -> Result<String> {
        let n = self.counters.entry(prefix.to_string()).or_insert(0);
        *n += 1;
        let v = *n;
        self.store.put(K_COUNTER, prefix, &(prefix.to_string(), v))?;
        Ok(format!("{prefix}-{v:06}"))
    }

    fn role(&self, team_id: &str, user: &str) -> Option<Role> {
        self.teams.get(team_id).and_then(|t| t.members.get(user)).copied()
    }

    fn team_member(&self, team_id: &str, user: &str) -> Result<Role> {
        if !self.teams.contains_key(team_id) {
            return Err(ServiceError::NotFound(format!("team {team_id}")));
        }
        self.role(team_id, user).ok_or_else(|| ServiceError::PermissionDenied("not a member of this team".into()))
    }

    fn permit(&self, team_id: &str, user: &str, action: Action) -> Result<Role> {
        let role = self.team_member(team_id, user)?;
        if allowed(role, action) {
            Ok(role)
        } else {
            Err(ServiceError::PermissionDenied(format!("{role:?} may not {action:?}")))
        }
    }

    fn live_project(&self, project_id: &str) -> Result<&Project> {
        self.projects
            .get(project_id)
            .filter(|p| p.deleted_at.is_none())
            .ok_or_else(|| ServiceError::NotFound(format!("project {project_id}")))
    }

    /// Document visible to `user`: exists, its project is live and the user
    /// belongs to the project's team.
    fn doc_for(&self, user: &str, doc_id: &str) -> Result<(&DocumentRecord, &Project, Role)> {
        let doc = self.docs.get(doc_id).ok_or_else(|| ServiceError::NotFound(format!("document {doc_id}")))?;
        let project = self.live_project(&doc.project_id).map_err(|_| ServiceError::NotFound(format!("document {doc_id}")))?;
        let role = self.team_member(&project.team_id, user)?;
        Ok((doc, project, role))
    }

    fn live_lock(&self, doc_id: &str, now: DateTime<Utc>) -> Option<&FileLock> {
        self.locks.get(doc_id).filter(|l| l.lease_expiry > now)
    }

    /// Every document mutation goes through here: the caller must be a team
    /// member, the principal (when one is set) and the live lock holder.
    fn writer(&self, user: &str, doc_id: &str, now: DateTime<Utc>) -> Result<()> {
        let (doc, _, _) = self.doc_for(user, doc_id)?;
        if let Some(p) = &doc.principal {
            if p != user {
                return Err(ServiceError::NotPrincipal { principal: Some(p.clone()) });
            }
        }
        match self.live_lock(doc_id, now) {
            Some(l) if l.holder == user => Ok(()),
            _ => Err(ServiceError::LockNotHeld),
        }
    }

    fn touch(&mut self, doc_id: &str, user: &str, now: DateTime<Utc>) -> Result<()> {
        let doc = self.docs.get_mut(doc_id).expect("checked by caller");
        doc.touch(user, now);
        self.store.put(K_DOC, doc_id, &*doc)?;
        Ok(())
    }

    fn save_data(&self, doc_id: &str, kinds: &[&str]) -> Result<()> {
        let empty = DocData::default();
        let d = self.data.get(doc_id).unwrap_or(&empty);
        for k in kinds {
            match *k {
                "tables" => self.store.put_artifact(doc_id, k, &d.tables)?,
                "annotations" => self.store.put_artifact(doc_id, k, &d.annotations)?,
                "maps" => self.store.put_artifact(doc_id, k, &d.maps)?,
                "points" => self.store.put_artifact(doc_id, k, &d.points)?,
                "overrides" => self.store.put_artifact(doc_id, k, &d.overrides)?,
                other => unreachable!("unknown artifact kind {other}"),
            };
        }
        Ok(())
    }

    fn summary(&self, doc: &DocumentRecord, now: DateTime<Utc>) -> FileSummary {
        FileSummary {
            doc_id: doc.doc_id.clone(),
            project_id: doc.project_id.clone(),
            file_name: doc.file_name.clone(),
            title: doc.meta.title.clone(),
            authors: doc.meta.authors.clone(),
            year: doc.meta.year,
            page_count: doc.page_count,
            status: doc.status,
            import_user: doc.import_user.clone(),
            import_time: doc.import_time,
            last_editor: doc.last_editor.clone(),
            last_edit_time: doc.last_edit_time,
            principal: doc.principal.clone(),
            lock_holder: self.live_lock(&doc.doc_id, now).map(|l| l.holder.clone()),
        }
    }

    fn table_doc(&self, table_id: &str) -> Result<(String, usize)> {
        for (doc_id, d) in &self.data {
            if let Some(i) = d.tables.iter().position(|t| t.table_id == table_id) {
                return Ok((doc_id.clone(), i));
            }
        }
        Err(ServiceError::NotFound(format!("table {table_id}")))
    }

    fn view(&mut self, user: &str, doc_id: &str, keep: usize) {
        let list = self.recent.entry(user.to_string()).or_default();
        list.retain(|d| d != doc_id);
        list.push_front(doc_id.to_string());
        list.truncate(keep);
    }

    fn integrate_doc(&self, doc_id: &str, schema: &ProjectSchema) -> Result<SummaryTable> {
        let doc = &self.docs[doc_id];
        let empty = DocData::default();
        let d = self.data.get(doc_id).unwrap_or(&empty);
        let inp = FileInputs { doc, tables: &d.tables, annotations: &d.annotations, geo_points: &d.points, overrides: &d.overrides };
        Ok(integrate::integrate_file(&inp, schema)?)
    }

    fn project_docs(&self, project_id: &str) -> Vec<&DocumentRecord> {
        self.docs.values().filter(|d| d.project_id == project_id).collect()
    }

    fn purge_expired(&mut self, now: DateTime<Utc>, days: i64) -> Result<()> {
        let expired: Vec<String> = self
            .projects
            .values()
            .filter(|p| p.deleted_at.is_some_and(|t| now - t > Duration::days(days)))
            .map(|p| p.project_id.clone())
            .collect();
        for pid in expired {
            let docs: Vec<String> = self.project_docs(&pid).iter().map(|d| d.doc_id.clone()).collect();
            for doc_id in docs {
                self.docs.remove(&doc_id);
                self.data.remove(&doc_id);
                self.charges.remove(&doc_id);
                self.locks.remove(&doc_id);
                self.index.remove(&doc_id);
                self.store.delete(K_DOC, &doc_id)?;
                self.store.delete(K_CHARGE, &doc_id)?;
                self.store.purge_doc(&doc_id)?;
            }
            self.projects.remove(&pid);
            self.store.delete(K_PROJECT, &pid)?;
        }
        Ok(())
    }
}

pub struct Service {
    state: Mutex<State>,
    clock: Box<dyn Clock>,
    cfg: ServiceConfig,
    metas: MetaRegistry,
    detectors: DetectorRegistry,
    ocr: OcrRegistry,
}

fn random_token() -> String {
    let bytes: [u8; 32] = rand::rng().random();
    hex::encode(bytes)
}

impl Service {
    pub fn new(store: Store, cfg: ServiceConfig, clock: Box<dyn Clock>) -> Result<Self> {
        cfg.validate().map_err(ServiceError::BadRequest)?;
        let mut state = State::load(store)?;
        state.purge_expired(clock.now(), cfg.tombstone_days)?;
        let mut metas = MetaRegistry::baseline();
        metas.retain(|id| !cfg.disabled_meta_adapters.iter().any(|d| d == id));
        Ok(Service {
            state: Mutex::new(state),
            detectors: DetectorRegistry::baseline(cfg.pipeline.table),
            metas,
            ocr: OcrRegistry::baseline(),
            clock,
            cfg,
        })
    }

    /// Service backed by `data_dir/quarry.db`.
    pub fn open(data_dir: &Path, cfg: ServiceConfig) -> Result<Self> {
        let store = Store::open(&data_dir.join("quarry.db"))?;
        Service::new(store, cfg, Box::new(SystemClock))
    }

    pub fn in_memory(cfg: ServiceConfig, clock: Box<dyn Clock>) -> Result<Self> {
        Service::new(Store::in_memory()?, cfg, clock)
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.cfg
    }

    pub fn now(&self) -> DateTime<Utc> {
        self.clock.now()
    }

    fn st(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    // ---- accounts ----

    pub fn register(&self, username: &str, password: &str) -> Result<UserView> {
        let username = username.trim();
        if username.is_empty() || username.len() > 64 || password.is_empty() {
            return Err(ServiceError::BadRequest("username and password are required".into()));
        }
        if self.st().usernames.contains_key(username) {
            return Err(ServiceError::DuplicateUsername(username.to_string()));
        }
        let digest = bcrypt::hash(password, self.cfg.bcrypt_cost).map_err(|e| ServiceError::Storage(e.to_string()))?;
        let mut st = self.st();
        if st.usernames.contains_key(username) {
            return Err(ServiceError::DuplicateUsername(username.to_string()));
        }
        let user = User { user_id: st.next_id("user")?, username: username.to_string(), password_digest: digest, created_at: self.now() };
        st.store.put(K_USER, &user.user_id, &user)?;
        st.usernames.insert(user.username.clone(), user.user_id.clone());
        st.users.insert(user.user_id.clone(), user.clone());
        Ok(UserView { user_id: user.user_id, username: user.username, team_memberships: vec![] })
    }

    pub fn verify_password(&self, username: &str, password: &str) -> Result<UserId> {
        let (id, digest) = {
            let st = self.st();
            let id = st.usernames.get(username.trim()).ok_or(ServiceError::InvalidCredentials)?.clone();
            let digest = st.users[&id].password_digest.clone();
            (id, digest)
        };
        match bcrypt::verify(password, &digest) {
            Ok(true) => Ok(id),
            _ => Err(ServiceError::InvalidCredentials),
        }
    }

    pub fn login(&self, username: &str, password: &str) -> Result<Session> {
        let user_id = self.verify_password(username, password)?;
        let s = Session { token: random_token(), user_id, expires_at: self.now() + Duration::seconds(self.cfg.session_ttl_secs) };
        self.st().sessions.insert(s.token.clone(), s.clone());
        Ok(s)
    }

    pub fn logout(&self, token: &str) {
        self.st().sessions.remove(token);
    }

    pub fn authenticate(&self, token: &str) -> Result<UserId> {
        let now = self.now();
        let mut st = self.st();
        match st.sessions.get(token) {
            Some(s) if s.expires_at > now => Ok(s.user_id.clone()),
            Some(_) => {
                st.sessions.remove(token);
                Err(ServiceError::Unauthenticated)
            }
            None => Err(ServiceError::Unauthenticated),
        }
    }

    pub fn user_view(&self, user: &str) -> Result<UserView> {
        let st = self.st();
        let u = st.users.get(user).ok_or_else(|| ServiceError::NotFound(format!("user {user}")))?;
        let team_memberships = st
            .teams
            .values()
            .filter_map(|t| t.members.get(user).map(|r| Membership { team_id: t.team_id.clone(), role: *r }))
            .collect();
        Ok(UserView { user_id: u.user_id.clone(), username: u.username.clone(), team_memberships })
    }

    pub fn user_id_by_name(&self, username: &str) -> Result<UserId> {
        self.st().usernames.get(username).cloned().ok_or_else(|| ServiceError::NotFound(format!("user {username}")))
    }

    /// Stored digest, for tests of the hashing scheme.
    pub fn password_digest(&self, user: &str) -> Option<String> {
        self.st().users.get(user).map(|u| u.password_digest.clone())
    }

    // ---- teams ----

    pub fn create_team(&self, user: &str, name: &str) -> Result<Team> {
        if name.trim().is_empty() {
            return Err(ServiceError::BadRequest("team name is required".into()));
        }
        let mut st = self.st();
        if !st.users.contains_key(user) {
            return Err(ServiceError::NotFound(format!("user {user}")));
        }
        let team = Team {
            team_id: st.next_id("team")?,
            name: name.trim().to_string(),
            members: [(user.to_string(), Role::Owner)].into(),
            created_at: self.now(),
        };
        st.store.put(K_TEAM, &team.team_id, &team)?;
        st.teams.insert(team.team_id.clone(), team.clone());
        Ok(team)
    }

    pub fn list_teams(&self, user: &str) -> Vec<Team> {
        self.st().teams.values().filter(|t| t.members.contains_key(user)).cloned().collect()
    }

    pub fn get_team(&self, user: &str, team_id: &str) -> Result<Team> {
        let st = self.st();
        st.team_member(team_id, user)?;
        Ok(st.teams[team_id].clone())
    }

    fn action_for(role: Role) -> Result<Action> {
        match role {
            Role::Manager => Ok(Action::AddRemoveManager),
            Role::Member => Ok(Action::AddRemoveMember),
            Role::Owner => Err(ServiceError::BadRequest("a team has exactly one owner; transfer ownership with a role change".into())),
        }
    }

    pub fn add_member(&self, user: &str, team_id: &str, target: &str, role: Role) -> Result<Team> {
        let mut st = self.st();
        st.permit(team_id, user, Self::action_for(role)?)?;
        Self::insert_member(&mut st, team_id, target, role)
    }

    fn insert_member(st: &mut State, team_id: &str, target: &str, role: Role) -> Result<Team> {
        if !st.users.contains_key(target) {
            return Err(ServiceError::NotFound(format!("user {target}")));
        }
        let team = st.teams.get_mut(team_id).ok_or_else(|| ServiceError::NotFound(format!("team {team_id}")))?;
        if team.members.contains_key(target) {
            return Err(ServiceError::BadRequest(format!("{target} is already a member")));
        }
        team.members.insert(target.to_string(), role);
        let team = team.clone();
        st.store.put(K_TEAM, team_id, &team)?;
        Ok(team)
    }

    /// Changing a role needs the permission for both the old and the new
    /// role. Making someone Owner transfers ownership (Owner only); the old
    /// owner becomes a Manager.
    pub fn set_role(&self, user: &str, team_id: &str, target: &str, role: Role) -> Result<Team> {
        let mut st = self.st();
        let caller = st.team_member(team_id, user)?;
        let current = st.role(team_id, target).ok_or_else(|| ServiceError::NotFound(format!("member {target}")))?;
        if current == Role::Owner {
            return Err(ServiceError::BadRequest("transfer ownership by making another member Owner".into()));
        }
        let team = st.teams.get_mut(team_id).unwrap();
        if role == Role::Owner {
            if caller != Role::Owner {
                return Err(ServiceError::PermissionDenied("only the owner can transfer ownership".into()));
            }
            team.members.insert(user.to_string(), Role::Manager);
        } else {
            for r in [current, role] {
                let action = Self::action_for(r)?;
                if !allowed(caller, action) {
                    return Err(ServiceError::PermissionDenied(format!("{caller:?} may not {action:?}")));
                }
            }
        }
        team.members.insert(target.to_string(), role);
        let team = team.clone();
        st.store.put(K_TEAM, team_id, &team)?;
        Ok(team)
    }

    /// Removing a member leaves everything they authored in place.
    pub fn remove_member(&self, user: &str, team_id: &str, target: &str) -> Result<Team> {
        let mut st = self.st();
        let current = st.role(team_id, target).ok_or_else(|| ServiceError::NotFound(format!("member {target}")))?;
        st.permit(team_id, user, Self::action_for(current)?)?;
        let team = st.teams.get_mut(team_id).unwrap();
        team.members.remove(target);
        let team = team.clone();
        st.store.put(K_TEAM, team_id, &team)?;
        Ok(team)
    }

    // ---- projects ----

    pub fn create_project(&self, user: &str, team_id: &str, name: &str) -> Result<Project> {
        let mut st = self.st();
        st.permit(team_id, user, Action::AddDeleteProject)?;
        Self::insert_project(&mut st, team_id, name, user, self.now())
    }

    fn insert_project(st: &mut State, team_id: &str, name: &str, user: &str, now: DateTime<Utc>) -> Result<Project> {
        if name.trim().is_empty() {
            return Err(ServiceError::BadRequest("project name is required".into()));
        }
        if !st.teams.contains_key(team_id) {
            return Err(ServiceError::NotFound(format!("team {team_id}")));
        }
        let p = Project {
            project_id: st.next_id("proj")?,
            team_id: team_id.to_string(),
            name: name.trim().to_string(),
            description: String::new(),
            schema: ProjectSchema::default(),
            labels: Vec::new(),
            created_by: user.to_string(),
            created_at: now,
            deleted_at: None,
        };
        st.store.put(K_PROJECT, &p.project_id, &p)?;
        st.projects.insert(p.project_id.clone(), p.clone());
        Ok(p)
    }

    pub fn list_projects(&self, user: &str, team: Option<&str>) -> Result<Vec<Project>> {
        let st = self.st();
        if let Some(t) = team {
            st.team_member(t, user)?;
        }
        Ok(st
            .projects
            .values()
            .filter(|p| p.deleted_at.is_none() && st.role(&p.team_id, user).is_some() && team.is_none_or(|t| t == p.team_id))
            .cloned()
            .collect())
    }

    pub fn get_project(&self, user: &str, project_id: &str) -> Result<Project> {
        let st = self.st();
        let p = st.live_project(project_id)?;
        st.team_member(&p.team_id, user)?;
        Ok(p.clone())
    }

    /// Tombstone; restorable for `tombstone_days`.
    pub fn delete_project(&self, user: &str, project_id: &str) -> Result<()> {
        let now = self.now();
        let mut st = self.st();
        let team = st.live_project(project_id)?.team_id.clone();
        st.permit(&team, user, Action::AddDeleteProject)?;
        let p = st.projects.get_mut(project_id).unwrap();
        p.deleted_at = Some(now);
        let p = p.clone();
        st.store.put(K_PROJECT, project_id, &p)?;
        Ok(())
    }

    pub fn restore_project(&self, user: &str, project_id: &str) -> Result<Project> {
        let now = self.now();
        let mut st = self.st();
        st.purge_expired(now, self.cfg.tombstone_days)?;
        let p = st.projects.get(project_id).ok_or_else(|| ServiceError::NotFound(format!("project {project_id}")))?;
        if p.deleted_at.is_none() {
            return Err(ServiceError::BadRequest("project is not deleted".into()));
        }
        let team = p.team_id.clone();
        st.permit(&team, user, Action::AddDeleteProject)?;
        let p = st.projects.get_mut(project_id).unwrap();
        p.deleted_at = None;
        let p = p.clone();
        st.store.put(K_PROJECT, project_id, &p)?;
        Ok(p)
    }

    pub fn update_settings(&self, user: &str, project_id: &str, patch: SettingsPatch) -> Result<Project> {
        let mut st = self.st();
        let team = st.live_project(project_id)?.team_id.clone();
        st.permit(&team, user, Action::ProjectSettings)?;
        Self::apply_settings(&mut st, project_id, patch)
    }

    fn apply_settings(st: &mut State, project_id: &str, patch: SettingsPatch) -> Result<Project> {
        let mut p = st.live_project(project_id)?.clone();
        if let Some(n) = patch.name {
            if n.trim().is_empty() {
                return Err(ServiceError::BadRequest("project name is required".into()));
            }
            p.name = n.trim().to_string();
        }
        if let Some(d) = patch.description {
            p.description = d;
        }
        if let Some(s) = patch.schema {
            s.validate()?;
            p.schema = s;
        }
        if let Some(b) = patch.header_batch {
            p.schema = p.schema.apply_batch(&b)?;
        }
        if let Some(l) = patch.labels {
            annotate::compile_labelset(&l)?;
            p.labels = l;
        }
        st.store.put(K_PROJECT, project_id, &p)?;
        st.projects.insert(p.project_id.clone(), p.clone());
        Ok(p)
    }

    // ---- files ----

    /// Parse `files` with up to `jobs` threads, then commit successes in the
    /// given order so ids are assigned deterministically.
    pub fn import_files(&self, user: &str, project_id: &str, files: Vec<(String, Vec<u8>)>, jobs: usize) -> Result<Vec<ImportOutcome>> {
        {
            let st = self.st();
            let team = st.live_project(project_id)?.team_id.clone();
            st.permit(&team, user, Action::ImportFile)?;
        }
        let results: Vec<Mutex<Option<Result<(Vec<PageContent>, MetaInfo), ServiceError>>>> = files.iter().map(|_| Mutex::new(None)).collect();
        let next = AtomicUsize::new(0);
        std::thread::scope(|s| {
            for _ in 0..jobs.clamp(1, files.len().max(1)) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some((_, bytes)) = files.get(i) else { break };
                    let r = analyze_pdf(bytes, &self.metas).map_err(ServiceError::from);
                    *results[i].lock().unwrap() = Some(r);
                });
            }
        });
        let now = self.now();
        let mut st = self.st();
        let mut out = Vec::new();
        for ((name, bytes), r) in files.iter().zip(results) {
            let r = r.into_inner().unwrap().expect("every file parsed");
            let outcome = match r {
                Ok((pages, meta)) => {
                    let doc_id = st.next_id("doc")?;
                    let doc = DocumentRecord {
                        doc_id: doc_id.clone(),
                        project_id: project_id.to_string(),
                        page_count: pages.len(),
                        pages,
                        meta,
                        import_user: user.to_string(),
                        import_time: now,
                        last_editor: None,
                        last_edit_time: None,
                        principal: None,
                        status: DocStatus::Ready,
                        file_name: Some(name.clone()),
                    };
                    st.store.atomically(|s| {
                        s.put(K_DOC, &doc_id, &doc)?;
                        s.put_blob(&doc_id, bytes)
                    })?;
                    st.index.upsert(&doc_id, &doc.meta);
                    st.docs.insert(doc_id.clone(), doc);
                    ImportOutcome { file_name: name.clone(), doc_id: Some(doc_id), error: None }
                }
                Err(e) => ImportOutcome { file_name: name.clone(), doc_id: None, error: Some(e.body()) },
            };
            out.push(outcome);
        }
        Ok(out)
    }

    pub fn import_file(&self, user: &str, project_id: &str, name: &str, bytes: Vec<u8>) -> Result<FileSummary> {
        let mut r = self.import_files(user, project_id, vec![(name.to_string(), bytes)], 1)?;
        let o = r.remove(0);
        match (o.doc_id, o.error) {
            (Some(id), _) => self.file_summary(user, &id),
            (None, Some(e)) => Err(match e.code.as_str() {
                "encrypted_pdf" => ServiceError::EncryptedPdf,
                "no_adapters" => ServiceError::Meta(MetaError::NoAdapters),
                _ => ServiceError::MalformedPdf(e.message),
            }),
            (None, None) => unreachable!("outcome without result"),
        }
    }

    fn search(&self, st: &State, user: &str, project_ids: &[String], q: &SearchQuery) -> Result<Page<FileSummary>> {
        let now = self.now();
        let sort = q.sort.as_deref().unwrap_or("import_time");
        if !["title", "import_time", "update_time"].contains(&sort) {
            return Err(ServiceError::InvalidSortKey(sort.to_string()));
        }
        let desc = match q.order.as_deref() {
            None => sort != "title",
            Some("asc") => false,
            Some("desc") => true,
            Some(o) => return Err(ServiceError::BadRequest(format!("order must be asc or desc, not {o:?}"))),
        };
        let hits = st.index.lookup(q.q.as_deref().unwrap_or(""));
        let mut docs: Vec<&DocumentRecord> = st
            .docs
            .values()
            .filter(|d| project_ids.contains(&d.project_id))
            .filter(|d| hits.as_ref().is_none_or(|h| h.contains(&d.doc_id)))
            .filter(|d| q.principal.as_ref().is_none_or(|p| d.principal.as_ref() == Some(p)))
            .filter(|d| q.import_user.as_ref().is_none_or(|u| &d.import_user == u))
            .collect();
        docs.sort_by(|a, b| {
            let o = match sort {
                "title" => a.meta.title.to_lowercase().cmp(&b.meta.title.to_lowercase()),
                "import_time" => a.import_time.cmp(&b.import_time),
                _ => a.last_edit_time.unwrap_or(a.import_time).cmp(&b.last_edit_time.unwrap_or(b.import_time)),
            };
            let o = if desc { o.reverse() } else { o };
            o.then_with(|| a.doc_id.cmp(&b.doc_id))
        });
        let per_page = q.per_page.unwrap_or(50).clamp(1, 500);
        let page = q.page.unwrap_or(1).max(1);
        let total = docs.len();
        let items = docs.into_iter().skip((page - 1) * per_page).take(per_page).map(|d| st.summary(d, now)).collect();
        let _ = user;
        Ok(Page { total, page, per_page, items })
    }

    pub fn list_files(&self, user: &str, project_id: &str, q: &SearchQuery) -> Result<Page<FileSummary>> {
        let st = self.st();
        let team = st.live_project(project_id)?.team_id.clone();
        st.team_member(&team, user)?;
        self.search(&st, user, &[project_id.to_string()], q)
    }

    /// Search across every live project of a team.
    pub fn search_documents(&self, user: &str, team_id: &str, q: &SearchQuery) -> Result<Page<FileSummary>> {
        let st = self.st();
        st.team_member(team_id, user)?;
        let projects: Vec<String> = st.projects.values().filter(|p| p.team_id == team_id && p.deleted_at.is_none()).map(|p| p.project_id.clone()).collect();
        self.search(&st, user, &projects, q)
    }

    /// Documents the user has taken charge of, across all teams.
    pub fn my_files(&self, user: &str) -> Vec<FileSummary> {
        let now = self.now();
        let st = self.st();
        st.docs
            .values()
            .filter(|d| d.principal.as_deref() == Some(user) && st.doc_for(user, &d.doc_id).is_ok())
            .map(|d| st.summary(d, now))
            .collect()
    }

    /// Recently viewed documents, newest first.
    pub fn recent_files(&self, user: &str) -> Vec<FileSummary> {
        let now = self.now();
        let st = self.st();
        st.recent
            .get(user)
            .map(|l| l.iter().filter_map(|id| st.doc_for(user, id).ok()).map(|(d, _, _)| st.summary(d, now)).collect())
            .unwrap_or_default()
    }

    pub fn file_summary(&self, user: &str, doc_id: &str) -> Result<FileSummary> {
        let st = self.st();
        let (doc, _, _) = st.doc_for(user, doc_id)?;
        Ok(st.summary(doc, self.now()))
    }

    pub fn get_meta(&self, user: &str, doc_id: &str) -> Result<MetaInfo> {
        let mut st = self.st();
        let meta = st.doc_for(user, doc_id)?.0.meta.clone();
        st.view(user, doc_id, self.cfg.recent_len);
        Ok(meta)
    }

    pub fn put_meta(&self, user: &str, doc_id: &str, meta: MetaInfo) -> Result<MetaInfo> {
        if meta.year.is_some_and(|y| !MetaInfo::year_in_range(y)) {
            return Err(ServiceError::BadRequest("year outside 1500..=2100".into()));
        }
        let now = self.now();
        let mut st = self.st();
        st.writer(user, doc_id, now)?;
        st.docs.get_mut(doc_id).unwrap().meta = meta.clone();
        st.index.upsert(doc_id, &meta);
        st.touch(doc_id, user, now)?;
        Ok(meta)
    }

    pub fn get_page(&self, user: &str, doc_id: &str, n: usize) -> Result<PageView> {
        let mut st = self.st();
        let doc = st.doc_for(user, doc_id)?.0;
        let page = doc.pages.get(n).cloned().ok_or(PageError::PageOutOfRange { index: n, count: doc.page_count })?;
        st.view(user, doc_id, self.cfg.recent_len);
        let text = page.text();
        Ok(PageView { page, text })
    }

    pub fn pdf_bytes(&self, user: &str, doc_id: &str) -> Result<Vec<u8>> {
        let st = self.st();
        st.doc_for(user, doc_id)?;
        st.store.blob(doc_id)?.ok_or_else(|| ServiceError::NotFound(format!("pdf of {doc_id}")))
    }

    // ---- lock and principal ----

    /// Check-and-set under the state mutex. The holder calling again renews
    /// the lease.
    pub fn acquire_lock(&self, user: &str, doc_id: &str) -> Result<FileLock> {
        let now = self.now();
        let mut st = self.st();
        let (doc, _, _) = st.doc_for(user, doc_id)?;
        if let Some(p) = &doc.principal {
            if p != user {
                return Err(ServiceError::NotPrincipal { principal: Some(p.clone()) });
            }
        }
        let acquired_at = match st.live_lock(doc_id, now) {
            Some(l) if l.holder != user => return Err(ServiceError::LockHeldByOther { holder: l.holder.clone() }),
            Some(l) => l.acquired_at,
            None => now,
        };
        let lock = FileLock {
            doc_id: doc_id.to_string(),
            holder: user.to_string(),
            acquired_at,
            lease_expiry: now + Duration::seconds(self.cfg.lock_lease_secs),
        };
        st.locks.insert(doc_id.to_string(), lock.clone());
        Ok(lock)
    }

    pub fn release_lock(&self, user: &str, doc_id: &str) -> Result<()> {
        let now = self.now();
        let mut st = self.st();
        st.doc_for(user, doc_id)?;
        match st.live_lock(doc_id, now) {
            Some(l) if l.holder != user => Err(ServiceError::LockHeldByOther { holder: l.holder.clone() }),
            _ => {
                st.locks.remove(doc_id);
                Ok(())
            }
        }
    }

    pub fn lock_status(&self, user: &str, doc_id: &str) -> Result<Option<FileLock>> {
        let st = self.st();
        st.doc_for(user, doc_id)?;
        Ok(st.live_lock(doc_id, self.now()).cloned())
    }

    pub fn take_charge(&self, user: &str, doc_id: &str) -> Result<PrincipalAssignment> {
        let now = self.now();
        let mut st = self.st();
        let (doc, _, _) = st.doc_for(user, doc_id)?;
        match &doc.principal {
            Some(p) if p == user => return Ok(st.charges[doc_id].clone()),
            Some(p) => return Err(ServiceError::AlreadyAssigned { principal: p.clone() }),
            None => {}
        }
        let a = PrincipalAssignment { doc_id: doc_id.to_string(), principal: user.to_string(), since: now };
        let doc = st.docs.get_mut(doc_id).unwrap();
        doc.principal = Some(user.to_string());
        let doc = doc.clone();
        st.store.atomically(|s| {
            s.put(K_DOC, doc_id, &doc)?;
            s.put(K_CHARGE, doc_id, &a)
        })?;
        st.charges.insert(doc_id.to_string(), a.clone());
        Ok(a)
    }

    /// The principal may release; Owners and Managers may force it.
    pub fn release_charge(&self, user: &str, doc_id: &str) -> Result<()> {
        let mut st = self.st();
        let (doc, _, role) = st.doc_for(user, doc_id)?;
        let Some(p) = doc.principal.clone() else { return Ok(()) };
        if p != user && !matches!(role, Role::Owner | Role::Manager) {
            return Err(ServiceError::NotPrincipal { principal: Some(p) });
        }
        let doc = st.docs.get_mut(doc_id).unwrap();
        doc.principal = None;
        let doc = doc.clone();
        st.store.atomically(|s| {
            s.put(K_DOC, doc_id, &doc)?;
            s.delete(K_CHARGE, doc_id)
        })?;
        st.charges.remove(doc_id);
        Ok(())
    }

    // ---- tables ----

    pub fn list_tables(&self, user: &str, doc_id: &str) -> Result<Vec<TableArtifact>> {
        let st = self.st();
        st.doc_for(user, doc_id)?;
        Ok(st.data.get(doc_id).map(|d| d.tables.clone()).unwrap_or_default())
    }

    pub fn get_table(&self, user: &str, table_id: &str) -> Result<TableArtifact> {
        let st = self.st();
        let (doc_id, i) = st.table_doc(table_id)?;
        st.doc_for(user, &doc_id)?;
        Ok(st.data[&doc_id].tables[i].clone())
    }

    pub fn create_tables(&self, user: &str, doc_id: &str, req: CreateTables) -> Result<Vec<TableArtifact>> {
        let now = self.now();
        let mut st = self.st();
        st.writer(user, doc_id, now)?;
        let doc = &st.docs[doc_id];
        let page = doc.pages.get(req.page).ok_or(PageError::PageOutOfRange { index: req.page, count: doc.page_count })?;
        let regions = match (req.detector, req.bbox) {
            (Some(d), None) => table::detect_table_regions(page, &d, &self.detectors)?,
            (None, Some(b)) => {
                if !b.is_proper() || !page.bounds().contains(&b) {
                    return Err(TableError::RegionOutsidePage.into());
                }
                vec![Region::new(req.page, b, RegionSource::UserDrawn)]
            }
            _ => return Err(ServiceError::BadRequest("give exactly one of detector or bbox".into())),
        };
        let mut created = Vec::new();
        for r in regions {
            let id = st.next_id("tbl")?;
            created.push(TableArtifact::new(id, doc_id, r, user, now)?);
        }
        st.data.entry(doc_id.to_string()).or_default().tables.extend(created.iter().cloned());
        st.save_data(doc_id, &["tables"])?;
        st.touch(doc_id, user, now)?;
        Ok(created)
    }

    fn with_table<R>(&self, user: &str, table_id: &str, f: impl FnOnce(&mut TableArtifact, &PageContent, DateTime<Utc>) -> Result<R>) -> Result<R> {
        let now = self.now();
        let mut st = self.st();
        let (doc_id, i) = st.table_doc(table_id)?;
        st.writer(user, &doc_id, now)?;
        let mut t = st.data[&doc_id].tables[i].clone();
        let page = st.docs[&doc_id].pages.get(t.region().page_index).cloned().unwrap_or_else(|| PageContent::blank(0, 1.0, 1.0));
        let r = f(&mut t, &page, now)?;
        st.data.get_mut(&doc_id).unwrap().tables[i] = t;
        st.save_data(&doc_id, &["tables"])?;
        st.touch(&doc_id, user, now)?;
        Ok(r)
    }

    pub fn table_stage(&self, user: &str, table_id: &str, to: Stage, ocr: Option<&str>) -> Result<TableArtifact> {
        let ocr = ocr.map(|id| self.ocr.get(id)).transpose()?;
        let cfg = self.cfg.pipeline.table;
        self.with_table(user, table_id, |t, page, now| {
            t.advance_stage(to, user, now, &Recognizers { page, cfg: &cfg, ocr })?;
            Ok(t.clone())
        })
    }

    pub fn table_edit(&self, user: &str, table_id: &str, op: EditOp) -> Result<TableArtifact> {
        if matches!(op, EditOp::Create { .. } | EditOp::Stage { .. }) {
            return Err(ServiceError::BadRequest("use the stage endpoint for stage changes".into()));
        }
        if let EditOp::SetRegion { region } = &op {
            let st = self.st();
            let (doc_id, _) = st.table_doc(table_id)?;
            let doc = &st.docs[&doc_id];
            let ok = doc.pages.get(region.page_index).is_some_and(|p| p.bounds().contains(&region.bbox));
            if !ok {
                return Err(TableError::RegionOutsidePage.into());
            }
        }
        self.with_table(user, table_id, |t, _, now| {
            t.apply(op, user, now)?;
            Ok(t.clone())
        })
    }

    pub fn delete_table(&self, user: &str, table_id: &str) -> Result<()> {
        let now = self.now();
        let mut st = self.st();
        let (doc_id, i) = st.table_doc(table_id)?;
        st.writer(user, &doc_id, now)?;
        st.data.get_mut(&doc_id).unwrap().tables.remove(i);
        st.save_data(&doc_id, &["tables"])?;
        st.touch(&doc_id, user, now)
    }

    pub fn export_table(&self, user: &str, table_id: &str) -> Result<Vec<Vec<String>>> {
        Ok(table::export_table(&self.get_table(user, table_id)?)?)
    }

    /// Edit logs of every table in a project as JSON lines, each record
    /// tagged with its table and document.
    pub fn training_data(&self, user: &str, project_id: &str) -> Result<String> {
        let st = self.st();
        let team = st.live_project(project_id)?.team_id.clone();
        st.team_member(&team, user)?;
        let mut out = String::new();
        for d in st.project_docs(project_id) {
            for t in st.data.get(&d.doc_id).map(|x| x.tables.as_slice()).unwrap_or_default() {
                for r in &t.edit_log {
                    let mut v = serde_json::to_value(r)?;
                    v["table_id"] = t.table_id.clone().into();
                    v["doc_id"] = t.doc_id.clone().into();
                    out.push_str(&serde_json::to_string(&v)?);
                    out.push('\n');
                }
            }
        }
        Ok(out)
    }

    // ---- annotations ----

    pub fn list_annotations(&self, user: &str, doc_id: &str, include_hidden: bool) -> Result<Vec<Annotation>> {
        let st = self.st();
        let (_, project, _) = st.doc_for(user, doc_id)?;
        let anns = st.data.get(doc_id).map(|d| d.annotations.as_slice()).unwrap_or_default();
        Ok(annotate::list_annotations(anns, &project.labels, include_hidden))
    }

    pub fn add_annotation(&self, user: &str, doc_id: &str, req: ManualAnnotation) -> Result<Annotation> {
        let now = self.now();
        let mut st = self.st();
        st.writer(user, doc_id, now)?;
        let (doc, project, _) = st.doc_for(user, doc_id)?;
        let labels = project.labels.clone();
        // Validate before spending an id.
        annotate::add_manual_annotation(doc, &labels, req.page, req.start, req.end, &req.label, &user.to_string(), String::new(), now)?;
        let id = st.next_id("ann")?;
        let doc = &st.docs[doc_id];
        let a = annotate::add_manual_annotation(doc, &labels, req.page, req.start, req.end, &req.label, &user.to_string(), id, now)?;
        st.data.entry(doc_id.to_string()).or_default().annotations.push(a.clone());
        st.save_data(doc_id, &["annotations"])?;
        st.touch(doc_id, user, now)?;
        Ok(a)
    }

    /// Re-run the project's label set; manual annotations are kept.
    pub fn auto_annotate(&self, user: &str, doc_id: &str) -> Result<Vec<Annotation>> {
        let now = self.now();
        let mut st = self.st();
        st.writer(user, doc_id, now)?;
        let (doc, project, _) = st.doc_for(user, doc_id)?;
        let compiled = annotate::compile_labelset(&project.labels)?;
        let fresh = annotate::auto_annotate(doc, &compiled, now);
        let data = st.data.entry(doc_id.to_string()).or_default();
        data.annotations = annotate::replace_auto(&data.annotations, fresh);
        let out = data.annotations.clone();
        st.save_data(doc_id, &["annotations"])?;
        st.touch(doc_id, user, now)?;
        Ok(out)
    }

    pub fn annotations_csv(&self, user: &str, doc_id: &str) -> Result<String> {
        Ok(annotate::annotations_csv(&self.list_annotations(user, doc_id, true)?))
    }

    // ---- maps ----

    pub fn calibrate_map(&self, user: &str, doc_id: &str, req: CalibrateRequest) -> Result<MapArtifact> {
        let now = self.now();
        let mut st = self.st();
        st.writer(user, doc_id, now)?;
        let doc = &st.docs[doc_id];
        let page = doc.pages.get(req.page).ok_or(PageError::PageOutOfRange { index: req.page, count: doc.page_count })?;
        if !req.bbox.is_proper() || !page.bounds().contains(&req.bbox) {
            return Err(ServiceError::BadRequest("map region must lie within the page".into()));
        }
        let region = Region::new(req.page, req.bbox, RegionSource::UserDrawn);
        let ticks = req.ticks.unwrap_or_else(|| map::detect_ticks(page, &region, &self.cfg.pipeline.map));
        let calibration = map::calibrate(&region, &ticks)?;
        let m = MapArtifact { map_id: st.next_id("map")?, doc_id: doc_id.to_string(), page_index: req.page, calibration, created_by: user.to_string(), created_at: now };
        st.data.entry(doc_id.to_string()).or_default().maps.push(m.clone());
        st.save_data(doc_id, &["maps"])?;
        st.touch(doc_id, user, now)?;
        Ok(m)
    }

    pub fn list_maps(&self, user: &str, doc_id: &str) -> Result<Vec<MapArtifact>> {
        let st = self.st();
        st.doc_for(user, doc_id)?;
        Ok(st.data.get(doc_id).map(|d| d.maps.clone()).unwrap_or_default())
    }

    pub fn add_point(&self, user: &str, doc_id: &str, req: PointRequest) -> Result<GeoPoint> {
        let now = self.now();
        let mut st = self.st();
        st.writer(user, doc_id, now)?;
        let maps = st.data.get(doc_id).map(|d| d.maps.as_slice()).unwrap_or_default();
        let m = match &req.map_id {
            Some(id) => maps.iter().find(|m| &m.map_id == id),
            None => maps.last(),
        }
        .ok_or_else(|| ServiceError::NotFound("map calibration".into()))?;
        let loc = map::locate_point(&m.calibration, req.x, req.y)?;
        let map_id = m.map_id.clone();
        let p = GeoPoint {
            point_id: st.next_id("pt")?,
            doc_id: doc_id.to_string(),
            map_id,
            pixel: [req.x, req.y],
            longitude: loc.longitude,
            latitude: loc.latitude,
            out_of_range: loc.out_of_range,
            table_row_hint: req.table_row_hint,
            created_by: user.to_string(),
            created_at: now,
        };
        st.data.entry(doc_id.to_string()).or_default().points.push(p.clone());
        st.save_data(doc_id, &["points"])?;
        st.touch(doc_id, user, now)?;
        Ok(p)
    }

    pub fn list_points(&self, user: &str, doc_id: &str) -> Result<Vec<GeoPoint>> {
        let st = self.st();
        st.doc_for(user, doc_id)?;
        Ok(st.data.get(doc_id).map(|d| d.points.clone()).unwrap_or_default())
    }

    // ---- integration ----

    pub fn set_overrides(&self, user: &str, doc_id: &str, o: DocOverrides) -> Result<DocOverrides> {
        let now = self.now();
        let mut st = self.st();
        st.writer(user, doc_id, now)?;
        if o.bindings.iter().any(|b| b.rows[0] > b.rows[1]) {
            return Err(ServiceError::BadRequest("binding row range is reversed".into()));
        }
        st.data.entry(doc_id.to_string()).or_default().overrides = o.clone();
        st.save_data(doc_id, &["overrides"])?;
        st.touch(doc_id, user, now)?;
        Ok(o)
    }

    pub fn get_overrides(&self, user: &str, doc_id: &str) -> Result<DocOverrides> {
        let st = self.st();
        st.doc_for(user, doc_id)?;
        Ok(st.data.get(doc_id).map(|d| d.overrides.clone()).unwrap_or_default())
    }

    /// File-level summary; computed on demand, never stored.
    pub fn integrate_file(&self, user: &str, doc_id: &str) -> Result<SummaryTable> {
        let st = self.st();
        let (_, project, _) = st.doc_for(user, doc_id)?;
        st.integrate_doc(doc_id, &project.schema)
    }

    /// Project summary over all documents in import order.
    pub fn integrate_project(&self, user: &str, project_id: &str) -> Result<SummaryTable> {
        let st = self.st();
        let team = st.live_project(project_id)?.team_id.clone();
        st.team_member(&team, user)?;
        Self::project_summary(&st, project_id)
    }

    /// Project summary without a caller, for local administration.
    pub fn integrate_project_local(&self, project_id: &str) -> Result<SummaryTable> {
        let st = self.st();
        st.live_project(project_id)?;
        Self::project_summary(&st, project_id)
    }

    fn project_summary(st: &State, project_id: &str) -> Result<SummaryTable> {
        let schema = &st.projects[project_id].schema;
        let files = st
            .project_docs(project_id)
            .iter()
            .map(|d| st.integrate_doc(&d.doc_id, schema))
            .collect::<Result<Vec<_>>>()?;
        Ok(integrate::integrate_project(&files, schema)?)
    }

    // ---- local administration (no caller; used by the CLI) ----

    pub fn admin_add_member(&self, team_id: &str, target: &str, role: Role) -> Result<Team> {
        let mut st = self.st();
        Self::action_for(role)?;
        Self::insert_member(&mut st, team_id, target, role)
    }

    pub fn admin_create_project(&self, team_id: &str, name: &str) -> Result<Project> {
        let mut st = self.st();
        Self::insert_project(&mut st, team_id, name, "system", self.now())
    }

    pub fn admin_update_settings(&self, project_id: &str, patch: SettingsPatch) -> Result<Project> {
        Self::apply_settings(&mut self.st(), project_id, patch)
    }

    pub fn find_project(&self, name_or_id: &str) -> Option<Project> {
        let st = self.st();
        st.projects
            .values()
            .filter(|p| p.deleted_at.is_none())
            .find(|p| p.project_id == name_or_id)
            .or_else(|| st.projects.values().find(|p| p.deleted_at.is_none() && p.name == name_or_id))
            .cloned()
    }

    pub fn find_team(&self, name_or_id: &str) -> Option<Team> {
        let st = self.st();
        st.teams.get(name_or_id).or_else(|| st.teams.values().find(|t| t.name == name_or_id)).cloned()
    }

    pub fn store_versions(&self, doc_id: &str, kind: &str) -> Result<i64> {
        self.st().store.artifact_versions(doc_id, kind)
    }
}

#[cfg(test)]
mod tests;
