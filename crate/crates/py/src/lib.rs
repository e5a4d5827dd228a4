//! Python bindings. Structured values cross the boundary as plain dicts and
//! lists (through JSON), so the Python side sees the same shapes as the HTTP
//! API.

use std::path::PathBuf;

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use quarry_core::config::{MapConfig, TableConfig};
use quarry_core::document::{analyze_pdf, vote_fields as core_vote, MetaCandidate, MetaInfo, MetaRegistry, PageContent};
use quarry_core::geom::BBox;
use quarry_core::integrate;
use quarry_core::map::{calibrate, detect_ticks, locate_point};
use quarry_core::service::{self, ServiceConfig, ServiceError, SystemClock};
use quarry_core::table::{detect_table_regions, recognize_content, recognize_structure, DetectorRegistry, Region, RegionSource};

create_exception!(quarry, QuarryError, PyException, "Raised with (code, message) for every library error.");

fn err(code: &str, message: impl ToString) -> PyErr {
    QuarryError::new_err((code.to_string(), message.to_string()))
}

fn svc_err(e: ServiceError) -> PyErr {
    let b = e.body();
    err(&b.code, b.message)
}

fn to_py<'py, T: Serialize>(py: Python<'py>, v: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| err("internal", e))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn from_py<T: DeserializeOwned>(obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = obj.py().import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| err("bad_request", e))
}

/// A parsed PDF with its voted metadata.
#[pyclass(frozen)]
struct Document {
    pages: Vec<PageContent>,
    meta: MetaInfo,
}

impl Document {
    fn page(&self, index: usize) -> PyResult<&PageContent> {
        self.pages
            .get(index)
            .ok_or_else(|| err("page_out_of_range", format!("page {index} of {}", self.pages.len())))
    }
}

#[pymethods]
impl Document {
    #[new]
    fn new(py: Python<'_>, data: Vec<u8>) -> PyResult<Self> {
        let (pages, meta) = py
            .detach(|| analyze_pdf(&data, &MetaRegistry::baseline()))
            .map_err(|e| svc_err(ServiceError::from(e)))?;
        Ok(Document { pages, meta })
    }

    #[getter]
    fn page_count(&self) -> usize {
        self.pages.len()
    }

    #[getter]
    fn meta<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.meta)
    }

    fn page_text(&self, index: usize) -> PyResult<String> {
        Ok(self.page(index)?.text())
    }

    /// Text boxes of one page as dicts.
    fn text_boxes<'py>(&self, py: Python<'py>, index: usize) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.page(index)?.text_boxes)
    }

    /// Detect, structure and fill every table on a page; one matrix each.
    #[pyo3(signature = (index, detector = "ruling"))]
    fn tables(&self, index: usize, detector: &str) -> PyResult<Vec<Vec<Vec<String>>>> {
        let page = self.page(index)?;
        let cfg = TableConfig::default();
        let regions = detect_table_regions(page, detector, &DetectorRegistry::baseline(cfg)).map_err(|e| svc_err(e.into()))?;
        regions
            .iter()
            .map(|r| {
                let grid = recognize_structure(page, r, &cfg).map_err(|e| svc_err(e.into()))?;
                Ok(recognize_content(page, &grid, None).to_matrix())
            })
            .collect()
    }

    /// Table inside a user-drawn box `(x0, y0, x1, y1)`, e.g. a borderless one.
    fn table_in(&self, index: usize, bbox: [f64; 4]) -> PyResult<Vec<Vec<String>>> {
        let page = self.page(index)?;
        let region = Region::new(index, BBox::from(bbox), RegionSource::UserDrawn);
        let grid = recognize_structure(page, &region, &TableConfig::default()).map_err(|e| svc_err(e.into()))?;
        Ok(recognize_content(page, &grid, None).to_matrix())
    }

    /// Geo-reference the map framed by `bbox` from its margin labels and
    /// return `(longitude, latitude)` for each pixel.
    fn locate(&self, index: usize, bbox: [f64; 4], pixels: Vec<(f64, f64)>) -> PyResult<Vec<(f64, f64)>> {
        let page = self.page(index)?;
        let region = Region::new(index, BBox::from(bbox), RegionSource::UserDrawn);
        let ticks = detect_ticks(page, &region, &MapConfig::default());
        let cal = calibrate(&region, &ticks).map_err(|e| svc_err(e.into()))?;
        pixels
            .into_iter()
            .map(|(x, y)| {
                let p = locate_point(&cal, x, y).map_err(|e| svc_err(e.into()))?;
                Ok((p.longitude, p.latitude))
            })
            .collect()
    }
}

/// Per-field majority over candidate dicts `{"adapter_id": .., "fields": {..}}`.
#[pyfunction]
fn vote_fields<'py>(py: Python<'py>, candidates: &Bound<'py, PyAny>, priority: Vec<String>) -> PyResult<Bound<'py, PyAny>> {
    let cands: Vec<MetaCandidate> = from_py(candidates)?;
    let meta = core_vote(&cands, &priority).map_err(|e| svc_err(e.into()))?;
    to_py(py, &meta)
}

/// The collaboration service over a data directory, without HTTP. Every
/// method takes the acting user id first, as the HTTP handlers do.
#[pyclass(frozen, name = "Service")]
struct PyService(service::Service);

macro_rules! call {
    ($self:ident, $py:ident, $e:expr) => {{
        let s = &$self.0;
        let out = $py.detach(|| $e(s)).map_err(svc_err)?;
        to_py($py, &out)
    }};
}

#[pymethods]
impl PyService {
    #[new]
    #[pyo3(signature = (data_dir = None, bcrypt_cost = 12))]
    fn new(data_dir: Option<PathBuf>, bcrypt_cost: u32) -> PyResult<Self> {
        let cfg = ServiceConfig { bcrypt_cost, ..Default::default() };
        cfg.validate().map_err(|m| err("bad_config", m))?;
        let s = match data_dir {
            Some(d) => service::Service::open(&d, cfg),
            None => service::Service::in_memory(cfg, Box::new(SystemClock)),
        };
        Ok(PyService(s.map_err(svc_err)?))
    }

    fn register<'py>(&self, py: Python<'py>, username: &str, password: &str) -> PyResult<Bound<'py, PyAny>> {
        call!(self, py, |s: &service::Service| s.register(username, password))
    }

    /// Returns the session token.
    fn login(&self, py: Python<'_>, username: &str, password: &str) -> PyResult<String> {
        Ok(py.detach(|| self.0.login(username, password)).map_err(svc_err)?.token)
    }

    fn authenticate(&self, token: &str) -> PyResult<String> {
        self.0.authenticate(token).map_err(svc_err)
    }

    fn create_team<'py>(&self, py: Python<'py>, user: &str, name: &str) -> PyResult<Bound<'py, PyAny>> {
        call!(self, py, |s: &service::Service| s.create_team(user, name))
    }

    fn add_member<'py>(&self, py: Python<'py>, user: &str, team_id: &str, target: &str, role: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let role = from_py(role)?;
        call!(self, py, |s: &service::Service| s.add_member(user, team_id, target, role))
    }

    fn create_project<'py>(&self, py: Python<'py>, user: &str, team_id: &str, name: &str) -> PyResult<Bound<'py, PyAny>> {
        call!(self, py, |s: &service::Service| s.create_project(user, team_id, name))
    }

    fn update_settings<'py>(&self, py: Python<'py>, user: &str, project_id: &str, patch: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let patch = from_py(patch)?;
        call!(self, py, |s: &service::Service| s.update_settings(user, project_id, patch))
    }

    fn import_file<'py>(&self, py: Python<'py>, user: &str, project_id: &str, name: &str, data: Vec<u8>) -> PyResult<Bound<'py, PyAny>> {
        call!(self, py, |s: &service::Service| s.import_file(user, project_id, name, data))
    }

    #[pyo3(signature = (user, project_id, query = None))]
    fn list_files<'py>(&self, py: Python<'py>, user: &str, project_id: &str, query: Option<&Bound<'py, PyAny>>) -> PyResult<Bound<'py, PyAny>> {
        let q = match query {
            Some(q) => from_py(q)?,
            None => Default::default(),
        };
        call!(self, py, |s: &service::Service| s.list_files(user, project_id, &q))
    }

    fn acquire_lock<'py>(&self, py: Python<'py>, user: &str, doc_id: &str) -> PyResult<Bound<'py, PyAny>> {
        call!(self, py, |s: &service::Service| s.acquire_lock(user, doc_id))
    }

    fn release_lock(&self, user: &str, doc_id: &str) -> PyResult<()> {
        self.0.release_lock(user, doc_id).map(|_| ()).map_err(svc_err)
    }

    fn take_charge<'py>(&self, py: Python<'py>, user: &str, doc_id: &str) -> PyResult<Bound<'py, PyAny>> {
        call!(self, py, |s: &service::Service| s.take_charge(user, doc_id))
    }

    fn create_tables<'py>(&self, py: Python<'py>, user: &str, doc_id: &str, request: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let req = from_py(request)?;
        call!(self, py, |s: &service::Service| s.create_tables(user, doc_id, req))
    }

    #[pyo3(signature = (user, table_id, to, ocr = None))]
    fn table_stage<'py>(&self, py: Python<'py>, user: &str, table_id: &str, to: &Bound<'py, PyAny>, ocr: Option<&str>) -> PyResult<Bound<'py, PyAny>> {
        let to = from_py(to)?;
        call!(self, py, |s: &service::Service| s.table_stage(user, table_id, to, ocr))
    }

    fn table_edit<'py>(&self, py: Python<'py>, user: &str, table_id: &str, op: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let op = from_py(op)?;
        call!(self, py, |s: &service::Service| s.table_edit(user, table_id, op))
    }

    fn export_table<'py>(&self, py: Python<'py>, user: &str, table_id: &str) -> PyResult<Bound<'py, PyAny>> {
        call!(self, py, |s: &service::Service| s.export_table(user, table_id))
    }

    fn auto_annotate<'py>(&self, py: Python<'py>, user: &str, doc_id: &str) -> PyResult<Bound<'py, PyAny>> {
        call!(self, py, |s: &service::Service| s.auto_annotate(user, doc_id))
    }

    fn calibrate_map<'py>(&self, py: Python<'py>, user: &str, doc_id: &str, request: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let req = from_py(request)?;
        call!(self, py, |s: &service::Service| s.calibrate_map(user, doc_id, req))
    }

    fn add_point<'py>(&self, py: Python<'py>, user: &str, doc_id: &str, request: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
        let req = from_py(request)?;
        call!(self, py, |s: &service::Service| s.add_point(user, doc_id, req))
    }

    /// Project summary as CSV text.
    fn summary_csv(&self, py: Python<'_>, user: &str, project_id: &str) -> PyResult<String> {
        let t = py.detach(|| self.0.integrate_project(user, project_id)).map_err(svc_err)?;
        Ok(integrate::export_csv(&t))
    }
}

#[pymodule]
pub fn quarry(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Document>()?;
    m.add_class::<PyService>()?;
    m.add_function(wrap_pyfunction!(vote_fields, m)?)?;
    m.add("QuarryError", m.py().get_type::<QuarryError>())?;
    Ok(())
}
