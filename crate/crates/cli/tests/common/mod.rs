//! Shared helpers: a generated PDF corpus, a CLI runner and scripted API
//! extraction against a data directory.

#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use quarry_core::document::synth::PdfBuilder;
use quarry_core::geom::BBox;
use quarry_core::map::{format_label, Axis};
use quarry_core::service::{http::router, Service, ServiceConfig};

pub const PASSWORD: &str = "s3cret";

/// Runs the CLI in-process; returns the exit code and stdout.
pub fn cli(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let code = quarry_cli::run(std::iter::once("quarry").chain(args.iter().copied()), &mut out);
    (code, String::from_utf8(out).unwrap())
}

fn strings(rows: &[&[&str]]) -> Vec<Vec<String>> {
    rows.iter().map(|r| r.iter().map(|s| s.to_string()).collect()).collect()
}

/// Three papers: one with a table, prose and a map; one with a table only;
/// one with a table and prose.
pub fn corpus() -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();

    let mut b = PdfBuilder::new();
    let p = b.page(612.0, 792.0);
    p.text(72.0, 720.0, 16.0, "Granite suites of the northern belt");
    p.text(72.0, 700.0, 10.0, "A. Rivera, B. Okafor");
    p.text(72.0, 660.0, 10.0, "We sampled granite from three quarries.");
    p.ruled_table(72.0, 600.0, &[80.0, 70.0, 70.0], 20.0, 9.0, &strings(&[&["Sample", "SiO2", "Zr"], &["G1", "72.1", "180"], &["G2", "70.4", "175"]]));
    let frame = BBox::new(150.0, 200.0, 450.0, 500.0);
    let lon = [(150.0, format_label(Axis::Longitude, 100.0)), (450.0, format_label(Axis::Longitude, 110.0))];
    let lat = [(200.0, format_label(Axis::Latitude, 30.0)), (500.0, format_label(Axis::Latitude, 40.0))];
    b.page(612.0, 792.0).map_frame(frame, &lon, &lat, 8.0);
    out.push(("a_granite.pdf".to_string(), b.build().unwrap()));

    let mut b = PdfBuilder::new();
    let p = b.page(612.0, 792.0);
    p.text(72.0, 720.0, 16.0, "Basalt flows revisited");
    p.text(72.0, 700.0, 10.0, "C. Lindqvist");
    p.ruled_table(72.0, 600.0, &[80.0, 70.0], 20.0, 9.0, &strings(&[&["Sample", "SiO2"], &["B7", "49.8"]]));
    out.push(("b_basalt.pdf".to_string(), b.build().unwrap()));

    let mut b = PdfBuilder::new();
    let p = b.page(612.0, 792.0);
    p.text(72.0, 720.0, 16.0, "Zircon ages from basalt and granite");
    p.text(72.0, 700.0, 10.0, "D. Mensah");
    p.text(72.0, 660.0, 10.0, "Both basalt and granite carry zircon.");
    p.ruled_table(72.0, 600.0, &[80.0, 70.0], 20.0, 9.0, &strings(&[&["Sample", "Zr (ppm)"], &["Z1", "210"], &["Z2", "198"]]));
    out.push(("c_zircon.pdf".to_string(), b.build().unwrap()));
    out
}

pub fn write_corpus(dir: &Path) {
    for (name, bytes) in corpus() {
        std::fs::write(dir.join(name), bytes).unwrap();
    }
}

pub fn settings_json() -> Value {
    json!({
        "schema": {
            "headers": ["Reference", "Sample", "SiO2", "Zr", "Rock", "Longitude", "Latitude"],
            "aliases": {"zr ppm": "Zr"},
            "label_to_header": {"rock": "Rock"},
            "meta_to_header": {"title": "Reference"}
        },
        "labels": [
            {"label_id": "rock", "display_name": "Rock", "color": "#aa5500", "visible": true,
             "matchers": [{"kind": "dictionary", "payload": ["granite", "basalt"]}]}
        ]
    })
}

/// Users, team, project and settings through the admin commands.
pub fn provision(data: &Path) {
    let d = data.to_str().unwrap();
    let ok = |args: &[&str]| {
        let (code, out) = cli(args);
        assert_eq!(code, 0, "{args:?}: {out}");
        out
    };
    ok(&["admin", "--data-dir", d, "add-user", "--username", "alice", "--password", PASSWORD]);
    ok(&["admin", "--data-dir", d, "add-user", "--username", "bob", "--password", PASSWORD]);
    ok(&["admin", "--data-dir", d, "create-team", "--owner", "alice", "--name", "Petrology"]);
    ok(&["admin", "--data-dir", d, "add-member", "--team", "Petrology", "--username", "bob", "--role", "member"]);
    ok(&["admin", "--data-dir", d, "create-project", "--team", "Petrology", "--name", "Crust"]);
    let settings = data.join("settings.json");
    std::fs::write(&settings, settings_json().to_string()).unwrap();
    ok(&["admin", "--data-dir", d, "settings", "--project", "Crust", "--file", settings.to_str().unwrap()]);
}

pub struct Api {
    app: Router,
}

impl Api {
    /// Fast hashing in tests; the cost is stored in each digest so existing
    /// accounts verify either way.
    pub fn open(data: &Path) -> Api {
        let cfg = ServiceConfig { bcrypt_cost: 4, ..Default::default() };
        Api { app: router(Arc::new(Service::open(data, cfg).unwrap())) }
    }

    pub async fn call(&self, method: &str, uri: &str, token: Option<&str>, body: Option<Value>) -> (StatusCode, Value) {
        let mut b = Request::builder().method(method).uri(uri);
        if let Some(t) = token {
            b = b.header("authorization", format!("Bearer {t}"));
        }
        let req = match body {
            Some(v) => b.header("content-type", "application/json").body(Body::from(v.to_string())).unwrap(),
            None => b.body(Body::empty()).unwrap(),
        };
        self.send(req).await
    }

    /// Multipart import of one file.
    pub async fn upload(&self, token: &str, project: &str, name: &str, bytes: Vec<u8>) -> (StatusCode, Value) {
        let boundary = "QUARRYBOUNDARY";
        let mut body = format!("--{boundary}\r\nContent-Disposition: form-data; name=\"file\"; filename=\"{name}\"\r\nContent-Type: application/pdf\r\n\r\n").into_bytes();
        body.extend(bytes);
        body.extend(format!("\r\n--{boundary}--\r\n").as_bytes());
        let req = Request::builder()
            .method("POST")
            .uri(format!("/projects/{project}/files"))
            .header("authorization", format!("Bearer {token}"))
            .header("content-type", format!("multipart/form-data; boundary={boundary}"))
            .body(Body::from(body))
            .unwrap();
        self.send(req).await
    }

    async fn send(&self, req: Request<Body>) -> (StatusCode, Value) {
        let resp = self.app.clone().oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let v = serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
        (status, v)
    }

    pub async fn ok(&self, method: &str, uri: &str, token: &str, body: Option<Value>) -> Value {
        let (s, v) = self.call(method, uri, Some(token), body).await;
        assert!(s.is_success(), "{method} {uri} -> {s}: {v}");
        v
    }

    pub async fn login(&self, user: &str) -> String {
        let v = self.call("POST", "/auth/login", None, Some(json!({"username": user, "password": PASSWORD}))).await.1;
        v["token"].as_str().unwrap().to_string()
    }
}

/// For every imported document: lock, detect and confirm tables, run the
/// label set, geo-reference any map page and place one point, unlock.
pub async fn extract_all(api: &Api, user: &str, project_id: &str) -> usize {
    let t = api.login(user).await;
    let files = api.ok("GET", &format!("/projects/{project_id}/files?sort=title&order=asc"), &t, None).await;
    let mut tables = 0;
    for f in files["items"].as_array().unwrap() {
        let doc = f["doc_id"].as_str().unwrap();
        api.ok("POST", &format!("/files/{doc}/lock"), &t, None).await;
        let created = api.ok("POST", &format!("/files/{doc}/tables"), &t, Some(json!({"page": 0, "detector": "ruling"}))).await;
        for tb in created.as_array().unwrap() {
            let id = tb["table_id"].as_str().unwrap();
            api.ok("POST", &format!("/tables/{id}/stage"), &t, Some(json!({"to": "structured"}))).await;
            api.ok("POST", &format!("/tables/{id}/stage"), &t, Some(json!({"to": "filled", "ocr": "embedded"}))).await;
            api.ok("POST", &format!("/tables/{id}/stage"), &t, Some(json!({"to": "confirmed"}))).await;
            tables += 1;
        }
        api.ok("POST", &format!("/files/{doc}/annotations/auto"), &t, None).await;
        if f["page_count"].as_u64().unwrap() > 1 {
            let frame = json!([150.0, 200.0, 450.0, 500.0]);
            api.ok("POST", &format!("/files/{doc}/maps"), &t, Some(json!({"page": 1, "bbox": frame}))).await;
            api.ok("POST", &format!("/files/{doc}/points"), &t, Some(json!({"x": 225.0, "y": 350.0}))).await;
        }
        api.ok("DELETE", &format!("/files/{doc}/lock"), &t, None).await;
    }
    tables
}
