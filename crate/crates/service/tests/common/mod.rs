#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use biopsim::case::{CaseBundle, ClinicalInfo};
use biopsim::geometry::Vec3;
use biopsim::scoring::ExtendedWeights;
use biopsim::volume::{generate_phantom, PhantomSpec, VoxelVolume};
use biopsim_service::{router, AppState, ServiceConfig};
use http_body_util::BodyExt;
use serde_json::Value;
use tower::ServiceExt;

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub state: Arc<AppState>,
}

fn small_case(id: &str) -> CaseBundle {
    let spec = PhantomSpec {
        dims: [66, 66, 66],
        spacing_mm: [1.0; 3],
        ..Default::default()
    };
    CaseBundle::from_phantom(id, generate_phantom(&spec, 11).unwrap(), ClinicalInfo::default()).unwrap()
}

/// Writes a speckled case `"phantom"` and a constant-100 case `"flat"`.
pub fn write_cases(root: &Path) {
    small_case("phantom").save(&root.join("phantom")).unwrap();
    let mut flat = small_case("flat");
    let v = &flat.volume;
    let constant = VoxelVolume::from_fn(v.dims(), v.spacing(), v.origin(), |_: Vec3| 100u8).unwrap();
    flat.volume = Arc::new(constant);
    flat.save(&root.join("flat")).unwrap();
}

pub fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    write_cases(&dir.path().join("cases"));
    let config = ServiceConfig {
        cases_dir: dir.path().join("cases"),
        sessions_dir: dir.path().join("sessions"),
        weights: ExtendedWeights::default(),
    };
    let state = Arc::new(AppState::load(&config).unwrap());
    Fixture { dir, state }
}

impl Fixture {
    pub async fn call(&self, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
        let req = Request::builder().method(method).uri(uri);
        let req = match body {
            Some(b) => req
                .header("content-type", "application/json")
                .body(Body::from(b.to_string()))
                .unwrap(),
            None => req.body(Body::empty()).unwrap(),
        };
        let resp = router(self.state.clone()).oneshot(req).await.unwrap();
        let status = resp.status();
        let bytes = resp.into_body().collect().await.unwrap().to_bytes();
        let value = if bytes.is_empty() {
            Value::Null
        } else {
            serde_json::from_slice(&bytes).unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()))
        };
        (status, value)
    }

    pub async fn get(&self, uri: &str) -> (StatusCode, Value) {
        self.call("GET", uri, None).await
    }

    pub async fn post(&self, uri: &str, body: Value) -> (StatusCode, Value) {
        self.call("POST", uri, Some(body)).await
    }

    pub async fn add_user(&self, id: &str, cohort: &str) {
        let body = serde_json::json!({"id": id, "name": id, "cohort": cohort, "handedness": "right"});
        let (status, _) = self.post("/api/users", body).await;
        assert_eq!(status, StatusCode::CREATED);
    }

    /// Creates a procedure and completes its checklist; returns its id.
    pub async fn ready_procedure(&self, user: &str, case: &str) -> String {
        let (status, v) = self
            .post("/api/procedures", serde_json::json!({"user_id": user, "case_id": case}))
            .await;
        assert_eq!(status, StatusCode::CREATED, "{v}");
        let id = v["procedure_id"].as_str().unwrap().to_string();
        for item in biopsim::session::DEFAULT_CHECKLIST {
            let (status, _) = self
                .post(&format!("/api/procedures/{id}/checklist"), serde_json::json!({"item": item}))
                .await;
            assert_eq!(status, StatusCode::OK);
        }
        id
    }
}
