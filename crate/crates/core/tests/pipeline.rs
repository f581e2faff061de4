//! Public-API round trips: phantom to case bundle on disk, simulated
//! procedure to event log, and replay of the stored feedback.

use biopsim::case::{CaseBundle, ClinicalInfo};
use biopsim::cohort::{simulate_procedure, AimPolicy};
use biopsim::scoring::{feedback_payload, ExtendedWeights};
use biopsim::session::{load_procedure, save_procedure, ProcedureStatus};
use biopsim::volume::{generate_phantom, PhantomSpec};

fn small_case() -> CaseBundle {
    let spec = PhantomSpec { dims: [66, 66, 66], spacing_mm: [1.0, 1.0, 1.0], ..PhantomSpec::default() };
    CaseBundle::from_phantom("small", generate_phantom(&spec, 11).unwrap(), ClinicalInfo::default()).unwrap()
}

#[test]
fn case_bundle_survives_a_disk_round_trip() {
    let case = small_case();
    let dir = tempfile::tempdir().unwrap();
    case.save(dir.path()).unwrap();
    let back = CaseBundle::load(dir.path()).unwrap();
    assert_eq!(back.case_file(), case.case_file());
    assert_eq!(back.volume.data(), case.volume.data());
    assert_eq!(back.partition.planes(), case.partition.planes());
}

#[test]
fn noiseless_procedure_replays_to_its_stored_feedback() {
    let case = small_case();
    let record = simulate_procedure(&case, &AimPolicy::noiseless(), 5).unwrap();
    assert_eq!(record.status, ProcedureStatus::Finished);
    assert_eq!(record.cores.len(), 12);
    let score = record.score.as_ref().unwrap();
    assert_eq!((score.points, score.percentage), (48, 100.0));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    save_procedure(&record, &path).unwrap();
    let back = load_procedure(&path).unwrap();
    assert_eq!(back, record);
    let replayed = feedback_payload(&back, &case.partition, "mesh.json", &ExtendedWeights::default()).unwrap();
    assert_eq!(Some(replayed), record.feedback);
}

#[test]
fn a_log_cut_before_finish_loads_as_in_progress() {
    let case = small_case();
    let record = simulate_procedure(&case, &AimPolicy::noiseless(), 6).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("p.jsonl");
    save_procedure(&record, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    std::fs::write(&path, lines[..lines.len() - 1].join("\n") + "\n").unwrap();
    let back = load_procedure(&path).unwrap();
    assert_eq!(back.status, ProcedureStatus::InProgress);
    assert!(back.score.is_none() && back.feedback.is_none());
    assert_eq!(back.cores.len(), 12);
}
