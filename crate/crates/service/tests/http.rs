mod common;

use axum::http::StatusCode;
use biopsim::anatomy::SectorLabel;
use biopsim::case::CaseBundle;
use biopsim::cohort::{persist_cohort, run_cohort, AimPolicy};
use biopsim::session::{ProcedureRecord, SessionStore, UserRegistry};
use biopsim::stats::{study_report, StudyReport};
use serde_json::{json, Value};

use common::fixture;

const FORBIDDEN: [&str; 6] = ["hit", "points", "percentage", "score", "reached", "distance"];

fn assert_no_feedback(v: &Value) {
    let text = v.to_string();
    for word in FORBIDDEN {
        assert!(!text.contains(word), "'{word}' exposed before finish: {text}");
    }
}

#[tokio::test]
async fn users_are_created_listed_and_validated() {
    let f = fixture();
    f.add_user("alice", "expert").await;
    let (status, _) = f
        .post("/api/users", json!({"id": "alice", "name": "A", "cohort": "novice"}))
        .await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = f
        .post("/api/users", json!({"id": "../x", "name": "bad", "cohort": "novice"}))
        .await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    let (status, _) = f.post("/api/users", json!({"id": "bob"})).await;
    assert!(status.is_client_error());
    let (status, users) = f.get("/api/users").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(users.as_array().unwrap().len(), 1);
    assert_eq!(users[0]["cohort"], "expert");
    // Persisted for the next service start.
    let saved = UserRegistry::load(&f.dir.path().join("sessions/users.json")).unwrap();
    assert_eq!(saved.users().len(), 1);
}

#[tokio::test]
async fn cases_are_listed_with_metadata() {
    let f = fixture();
    let (status, cases) = f.get("/api/cases").await;
    assert_eq!(status, StatusCode::OK);
    let ids: Vec<&str> = cases.as_array().unwrap().iter().map(|c| c["id"].as_str().unwrap()).collect();
    assert_eq!(ids, ["flat", "phantom"]);
    assert_eq!(cases[0]["metadata"]["age_years"], 64);
}

#[tokio::test]
async fn procedure_creation_checks_user_and_case() {
    let f = fixture();
    f.add_user("u1", "novice").await;
    let (status, _) = f
        .post("/api/procedures", json!({"user_id": "u1", "case_id": "missing"}))
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = f
        .post("/api/procedures", json!({"user_id": "ghost", "case_id": "phantom"}))
        .await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (s1, a) = f
        .post("/api/procedures", json!({"user_id": "u1", "case_id": "phantom"}))
        .await;
    let (s2, b) = f
        .post("/api/procedures", json!({"user_id": "u1", "case_id": "phantom"}))
        .await;
    assert_eq!((s1, s2), (StatusCode::CREATED, StatusCode::CREATED));
    assert_ne!(a["procedure_id"], b["procedure_id"]);
    assert_eq!(a["state"], "checklist");
    let (status, _) = f.get("/api/procedures/nope").await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (_, list) = f.get("/api/procedures").await;
    assert_eq!(list.as_array().unwrap().len(), 2);
}

#[tokio::test]
async fn full_procedure_over_http_without_early_feedback() {
    let f = fixture();
    f.add_user("u1", "expert").await;
    let (_, created) = f
        .post("/api/procedures", json!({"user_id": "u1", "case_id": "phantom"}))
        .await;
    let id = created["procedure_id"].as_str().unwrap().to_string();
    let base = format!("/api/procedures/{id}");

    let (status, body) = f.post(&format!("{base}/biopsy"), json!({})).await;
    assert_eq!(status, StatusCode::CONFLICT, "checklist must come first: {body}");
    let (status, _) = f.post(&format!("{base}/checklist"), json!({"item": "bogus"})).await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
    for item in biopsim::session::DEFAULT_CHECKLIST {
        let (status, v) = f.post(&format!("{base}/checklist"), json!({"item": item})).await;
        assert_eq!(status, StatusCode::OK);
        assert_no_feedback(&v);
    }

    let mut responses = Vec::new();
    for i in 0..12 {
        let target = SectorLabel::from_index(i).to_string();
        if i % 2 == 0 {
            let (status, ack) = f
                .post(&format!("{base}/biopsy"), json!({"declared_target": target}))
                .await;
            assert_eq!(status, StatusCode::OK, "{ack}");
            assert_eq!(ack, json!({"core_index": i + 1, "cores_fired": i + 1, "awaiting_declaration": false}));
            responses.push(ack);
        } else {
            let (status, ack) = f.call("POST", &format!("{base}/biopsy"), None).await;
            assert_eq!(status, StatusCode::OK, "{ack}");
            assert_eq!(ack["awaiting_declaration"], true);
            let (status, _) = f.post(&format!("{base}/biopsy"), json!({})).await;
            assert_eq!(status, StatusCode::CONFLICT, "must declare before firing again");
            let (status, d) = f.post(&format!("{base}/declare"), json!({"target": target})).await;
            assert_eq!(status, StatusCode::OK);
            assert_eq!(d["core_index"], i + 1);
            responses.push(ack);
            responses.push(d);
        }
        if i == 10 {
            let (status, _) = f.call("POST", &format!("{base}/finish"), None).await;
            assert_eq!(status, StatusCode::CONFLICT, "11 cores cannot finish");
        }
        let (_, st) = f.get(&base).await;
        responses.push(st);
    }
    let (status, _) = f.get(&format!("{base}/feedback")).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = f
        .post(&format!("{base}/biopsy"), json!({"declared_target": "right-base-medial"}))
        .await;
    assert_eq!(status, StatusCode::CONFLICT, "13th core is rejected");
    let (status, _) = f.post(&format!("{base}/declare"), json!({"target": "left-apex-lateral"})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    for r in &responses {
        assert_no_feedback(r);
    }

    let (status, fb) = f.call("POST", &format!("{base}/finish"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(fb["cores"].as_array().unwrap().len(), 12);
    assert_eq!(fb["mesh"], "mesh.json");
    let pct = fb["percentage"].as_f64().unwrap();
    assert!((0.0..=100.0).contains(&pct));
    let (_, again) = f.call("POST", &format!("{base}/finish"), None).await;
    assert_eq!(again, fb);
    let (_, fetched) = f.get(&format!("{base}/feedback")).await;
    assert_eq!(fetched, fb);
    let (status, _) = f.post(&format!("{base}/abandon"), json!({"reason": "late"})).await;
    assert_eq!(status, StatusCode::CONFLICT);

    // The persisted log replays to the served payload.
    let store = SessionStore::new(f.dir.path().join("sessions"));
    let record = ProcedureRecord::load(&store.procedure_path("u1", &id)).unwrap();
    let case = CaseBundle::load(&f.dir.path().join("cases/phantom")).unwrap();
    let replay = biopsim::scoring::feedback_payload(&record, &case.partition, "mesh.json", &Default::default()).unwrap();
    assert_eq!(serde_json::to_value(&replay).unwrap(), fb);
    assert_eq!(replay.percentage, pct);
}

#[tokio::test]
async fn abandon_ends_a_procedure() {
    let f = fixture();
    f.add_user("u1", "novice").await;
    let id = f.ready_procedure("u1", "phantom").await;
    let (status, v) = f
        .post(&format!("/api/procedures/{id}/abandon"), json!({"reason": "patient moved"}))
        .await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["state"], "abandoned");
    let (status, _) = f.call("POST", &format!("/api/procedures/{id}/finish"), None).await;
    assert_eq!(status, StatusCode::CONFLICT);
    let (status, _) = f.call("POST", &format!("/api/procedures/{id}/abandon"), None).await;
    assert_eq!(status, StatusCode::OK);
}

#[tokio::test]
async fn assistance_flags_are_recorded() {
    let f = fixture();
    f.add_user("u1", "novice").await;
    let id = f.ready_procedure("u1", "phantom").await;
    let flags = json!({"plane_3d": true, "needle_trajectory": false, "previous_biopsies": true});
    let (status, v) = f.post(&format!("/api/procedures/{id}/assistance"), flags.clone()).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["assistance"], flags);
}

#[tokio::test]
async fn cohort_stats_match_the_engine_report() {
    let f = fixture();
    let (status, empty) = f.get("/api/stats/cohort").await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(empty["procedures"], json!([]));
    assert!(empty["construct"].is_null());

    let case = CaseBundle::load(&f.dir.path().join("cases/phantom")).unwrap();
    let run = run_cohort(&case, &AimPolicy::expert(), &AimPolicy::novice(), 7, 14, 5).unwrap();
    let store = SessionStore::new(f.dir.path().join("sessions"));
    persist_cohort(&run, &store).unwrap();
    let registry = UserRegistry::load(&store.users_path()).unwrap();
    let expected = study_report(&store.load_procedures().unwrap(), &registry, None);

    // The service reads users at start; restart it on the same directories.
    let config = biopsim_service::ServiceConfig {
        cases_dir: f.dir.path().join("cases"),
        sessions_dir: f.dir.path().join("sessions"),
        weights: Default::default(),
    };
    let f2 = common::Fixture {
        state: std::sync::Arc::new(biopsim_service::AppState::load(&config).unwrap()),
        dir: f.dir,
    };
    let (status, v) = f2.get("/api/stats/cohort").await;
    assert_eq!(status, StatusCode::OK);
    let got: StudyReport = serde_json::from_value(v.clone()).unwrap();
    assert_eq!(got, expected);
    assert_eq!(got.procedures.len(), 21);
    assert!(v["reliability"]["correlation"]["r"].is_number());
    assert!(v["construct"]["mann_whitney"]["u"].is_number());
    assert!(v["construct"]["mann_whitney"]["p"].is_number());

    let (_, experts) = f2.get("/api/stats/cohort?cohort=expert").await;
    assert_eq!(experts["procedures"].as_array().unwrap().len(), 7);
    assert_eq!(experts["construct"], v["construct"]);
    let (status, _) = f2.get("/api/stats/cohort?cohort=martian").await;
    assert_eq!(status, StatusCode::BAD_REQUEST);
}
