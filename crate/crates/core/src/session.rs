//! Users, procedure event logs, questionnaires and their on-disk layout.
//!
//! A procedure is persisted as one JSON object per line
//! (`{"t_ms":…,"kind":…,"payload":…}`); the in-memory [`ProcedureRecord`] is
//! a fold over those events, so saving a record writes its events back out
//! and load → save is byte-stable.
//!
//! Directory layout under a data root:
//!
//! ```text
//! users.json
//! questionnaires.jsonl
//! sessions/<user-id>/<procedure-id>.jsonl
//! ```

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::anatomy::SectorLabel;
use crate::error::{io_err, json_err, Error, Result};
use crate::geometry::Segment;
use crate::probe::{ProbeControls, ProbePose};
use crate::scoring::{BiopsyCore, MappingFeedback, ProcedureScore, CORES_PER_PROCEDURE};
use crate::stats::{median_iqr, Quartiles};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    Expert,
    Novice,
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Handedness {
    #[default]
    Right,
    Left,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserProfile {
    pub id: String,
    pub name: String,
    pub cohort: Cohort,
    #[serde(default)]
    pub handedness: Handedness,
}

/// Contents of `users.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UserRegistry {
    users: Vec<UserProfile>,
}

impl UserRegistry {
    /// Loads the registry; a missing file is an empty registry.
    pub fn load(path: &Path) -> Result<Self> {
        match fs::read_to_string(path) {
            Ok(text) => {
                let reg: Self = serde_json::from_str(&text).map_err(json_err(path))?;
                let mut ids: Vec<_> = reg.users.iter().map(|u| &u.id).collect();
                ids.sort();
                if ids.windows(2).any(|w| w[0] == w[1]) {
                    return Err(Error::InvalidLog(format!("{}: duplicate user id", path.display())));
                }
                Ok(reg)
            }
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Self::default()),
            Err(e) => Err(io_err(path)(e)),
        }
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(json_err(path))?;
        write_atomic(path, text.as_bytes())
    }

    pub fn add(&mut self, user: UserProfile) -> Result<()> {
        if user.id.is_empty() {
            return Err(Error::InvalidLog("user id must not be empty".into()));
        }
        if self.get(&user.id).is_some() {
            return Err(Error::InvalidLog(format!("user '{}' already exists", user.id)));
        }
        self.users.push(user);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&UserProfile> {
        self.users.iter().find(|u| u.id == id)
    }

    pub fn users(&self) -> &[UserProfile] {
        &self.users
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EventKind {
    Start,
    Pose,
    Checklist,
    Assistance,
    Biopsy,
    Declare,
    Finish,
    Abandon,
    Questionnaire,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub t_ms: u64,
    pub kind: EventKind,
    pub payload: Value,
}

impl Event {
    pub fn new<P: Serialize>(t_ms: u64, kind: EventKind, payload: &P) -> Self {
        Self {
            t_ms,
            kind,
            payload: serde_json::to_value(payload).expect("payloads are always serializable"),
        }
    }

    fn decode<P: for<'de> Deserialize<'de>>(&self) -> Result<P> {
        P::deserialize(&self.payload)
            .map_err(|e| Error::InvalidLog(format!("bad {:?} payload at t={}: {e}", self.kind, self.t_ms)))
    }
}

/// Overlays the trainee may switch on while scanning.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AssistanceFlags {
    pub plane_3d: bool,
    pub needle_trajectory: bool,
    pub previous_biopsies: bool,
}

pub const DEFAULT_CHECKLIST: [&str; 5] = [
    "patient_identity",
    "consent",
    "anticoagulants_stopped",
    "antibiotic_prophylaxis",
    "rectal_exam_done",
];

pub fn default_checklist() -> Vec<String> {
    DEFAULT_CHECKLIST.iter().map(|s| s.to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartPayload {
    pub procedure_id: String,
    pub user_id: String,
    pub case_id: String,
    pub checklist: Vec<String>,
    pub assistance: AssistanceFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChecklistPayload {
    pub item: String,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosePayload {
    pub controls: ProbeControls,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiopsyPayload {
    /// 1-based core number.
    pub index: usize,
    pub segment: Segment,
    pub pose: ProbePose,
    pub assistance: AssistanceFlags,
    #[serde(default)]
    pub declared_target: Option<SectorLabel>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeclarePayload {
    pub index: usize,
    pub target: SectorLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinishPayload {
    pub score: ProcedureScore,
    pub feedback: MappingFeedback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbandonPayload {
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChecklistItem {
    pub key: String,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProcedureStatus {
    InProgress,
    Finished,
    Abandoned,
}

/// One user's procedure, reconstructed from its event log.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcedureRecord {
    pub procedure_id: String,
    pub user_id: String,
    pub case_id: String,
    pub checklist: Vec<ChecklistItem>,
    /// Current assistance overlays; each core keeps its own fire-time copy.
    pub assistance: AssistanceFlags,
    pub events: Vec<Event>,
    pub cores: Vec<BiopsyCore>,
    pub duration_ms: u64,
    pub status: ProcedureStatus,
    pub score: Option<ProcedureScore>,
    pub feedback: Option<MappingFeedback>,
}

impl ProcedureRecord {
    /// A new record holding only its `start` event.
    pub fn start(t_ms: u64, start: StartPayload) -> Self {
        let event = Event::new(t_ms, EventKind::Start, &start);
        Self::from_events(vec![event]).expect("a lone start event is always valid")
    }

    pub fn from_events(events: Vec<Event>) -> Result<Self> {
        let first = events
            .first()
            .ok_or_else(|| Error::InvalidLog("empty procedure log".into()))?;
        if first.kind != EventKind::Start {
            return Err(Error::InvalidLog("procedure log must begin with a start event".into()));
        }
        let start: StartPayload = first.decode()?;
        let mut record = Self {
            procedure_id: start.procedure_id,
            user_id: start.user_id,
            case_id: start.case_id,
            checklist: start
                .checklist
                .into_iter()
                .map(|key| ChecklistItem { key, done: false })
                .collect(),
            assistance: start.assistance,
            events: vec![first.clone()],
            cores: Vec::new(),
            duration_ms: 0,
            status: ProcedureStatus::InProgress,
            score: None,
            feedback: None,
        };
        for event in events.into_iter().skip(1) {
            record.push(event)?;
        }
        Ok(record)
    }

    fn last_t(&self) -> u64 {
        self.events.last().map_or(0, |e| e.t_ms)
    }

    /// Validates and applies one event.
    pub fn push(&mut self, event: Event) -> Result<()> {
        let last = self.last_t();
        if event.t_ms < last {
            return Err(Error::TimestampRegression { last, got: event.t_ms });
        }
        if self.status != ProcedureStatus::InProgress && event.kind != EventKind::Questionnaire {
            return Err(Error::InvalidLog(format!(
                "{:?} event after the procedure ended",
                event.kind
            )));
        }
        match event.kind {
            EventKind::Start => return Err(Error::InvalidLog("duplicate start event".into())),
            EventKind::Pose => {
                event.decode::<PosePayload>()?;
            }
            EventKind::Questionnaire => {
                event.decode::<QuestionnaireResponse>()?.validate()?;
            }
            EventKind::Checklist => {
                let c: ChecklistPayload = event.decode()?;
                let item = self
                    .checklist
                    .iter_mut()
                    .find(|i| i.key == c.item)
                    .ok_or_else(|| Error::InvalidLog(format!("unknown checklist item '{}'", c.item)))?;
                item.done = c.done;
            }
            EventKind::Assistance => self.assistance = event.decode()?,
            EventKind::Biopsy => {
                let b: BiopsyPayload = event.decode()?;
                if self.cores.len() >= CORES_PER_PROCEDURE {
                    return Err(Error::InvalidLog("more than 12 cores fired".into()));
                }
                if b.index != self.cores.len() + 1 {
                    return Err(Error::InvalidLog(format!(
                        "core index {} out of sequence (expected {})",
                        b.index,
                        self.cores.len() + 1
                    )));
                }
                if self.cores.last().is_some_and(|c| c.declared_target.is_none()) {
                    return Err(Error::InvalidLog("previous core was never declared".into()));
                }
                self.cores.push(BiopsyCore {
                    segment: b.segment,
                    declared_target: b.declared_target,
                    fired_at_ms: event.t_ms,
                    pose: b.pose,
                    assistance: b.assistance,
                });
            }
            EventKind::Declare => {
                let d: DeclarePayload = event.decode()?;
                let core = d
                    .index
                    .checked_sub(1)
                    .and_then(|i| self.cores.get_mut(i))
                    .ok_or_else(|| Error::InvalidLog(format!("declaration for unknown core {}", d.index)))?;
                if core.declared_target.is_some() {
                    return Err(Error::InvalidLog(format!("core {} declared twice", d.index)));
                }
                core.declared_target = Some(d.target);
            }
            EventKind::Finish => {
                if !self.is_complete() {
                    return Err(Error::IncompleteProcedure(self.declared_count()));
                }
                let f: FinishPayload = event.decode()?;
                self.score = Some(f.score);
                self.feedback = Some(f.feedback);
                self.status = ProcedureStatus::Finished;
            }
            EventKind::Abandon => {
                event.decode::<AbandonPayload>()?;
                self.status = ProcedureStatus::Abandoned;
            }
        }
        self.duration_ms = event.t_ms - self.events[0].t_ms;
        self.events.push(event);
        Ok(())
    }

    pub fn declared_count(&self) -> usize {
        self.cores.iter().filter(|c| c.declared_target.is_some()).count()
    }

    /// Twelve fired and declared cores.
    pub fn is_complete(&self) -> bool {
        self.cores.len() == CORES_PER_PROCEDURE && self.declared_count() == CORES_PER_PROCEDURE
    }

    pub fn checklist_done(&self) -> bool {
        self.checklist.iter().all(|i| i.done)
    }

    /// The event log as written to disk.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.events {
            out.push_str(&serde_json::to_string(e).expect("events are always serializable"));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_events(read_events(path)?)
    }
}

pub fn load_procedure(path: &Path) -> Result<ProcedureRecord> {
    ProcedureRecord::load(path)
}

pub fn save_procedure(record: &ProcedureRecord, path: &Path) -> Result<()> {
    record.save(path)
}

/// Reads a line-delimited event log. Errors carry the 1-based line number.
pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut events = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let event: Event = serde_json::from_str(&line).map_err(|e| Error::MalformedLog {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        events.push(event);
    }
    Ok(events)
}

/// Append-only writer for a procedure log. Each event is written as one
/// line with a single `write` call and flushed before returning.
#[derive(Debug)]
pub struct EventLog {
    path: PathBuf,
    file: File,
    last_t: Option<u64>,
    len: usize,
}

impl EventLog {
    /// Creates (or truncates) the log file.
    pub fn create(path: &Path) -> Result<Self> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(io_err(dir))?;
        }
        let file = File::create(path).map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            last_t: None,
            len: 0,
        })
    }

    /// Opens an existing log for appending.
    pub fn open(path: &Path) -> Result<Self> {
        let events = read_events(path)?;
        let file = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            file,
            last_t: events.last().map(|e| e.t_ms),
            len: events.len(),
        })
    }

    pub fn append(&mut self, event: &Event) -> Result<()> {
        if let Some(last) = self.last_t {
            if event.t_ms < last {
                return Err(Error::TimestampRegression { last, got: event.t_ms });
            }
        }
        let mut line = serde_json::to_vec(event).map_err(json_err(&self.path))?;
        line.push(b'\n');
        self.file.write_all(&line).map_err(io_err(&self.path))?;
        self.file.flush().map_err(io_err(&self.path))?;
        self.last_t = Some(event.t_ms);
        self.len += 1;
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VasItem {
    OverallRealism,
    InterfaceQuality,
    ImageRealism,
    RangeOfMotionRealism,
    ForceFeedbackRealism,
    TrainingUsefulness,
}

impl VasItem {
    pub const ALL: [VasItem; 6] = [
        VasItem::OverallRealism,
        VasItem::InterfaceQuality,
        VasItem::ImageRealism,
        VasItem::RangeOfMotionRealism,
        VasItem::ForceFeedbackRealism,
        VasItem::TrainingUsefulness,
    ];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionnaireResponse {
    pub user_id: String,
    pub items: BTreeMap<VasItem, f64>,
}

impl QuestionnaireResponse {
    /// Rounds every value to 0.1 and checks it lies in `[0, 10]`.
    pub fn new(user_id: impl Into<String>, items: BTreeMap<VasItem, f64>) -> Result<Self> {
        let r = Self {
            user_id: user_id.into(),
            items: items.into_iter().map(|(k, v)| (k, (v * 10.0).round() / 10.0)).collect(),
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        for (item, v) in &self.items {
            if !(0.0..=10.0).contains(v) {
                return Err(Error::InvalidQuestionnaire(format!("{item:?} = {v} outside [0, 10]")));
            }
        }
        Ok(())
    }
}

/// Appends one response line to `questionnaires.jsonl`.
pub fn record_questionnaire(path: &Path, response: &QuestionnaireResponse) -> Result<()> {
    response.validate()?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut line = serde_json::to_vec(response).map_err(json_err(path))?;
    line.push(b'\n');
    file.write_all(&line).map_err(io_err(path))?;
    file.flush().map_err(io_err(path))
}

pub fn load_questionnaires(path: &Path) -> Result<Vec<QuestionnaireResponse>> {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(io_err(path)(e)),
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: QuestionnaireResponse = serde_json::from_str(line).map_err(|e| Error::MalformedLog {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

/// Median and quartiles of one VAS item per cohort. Responses from unknown
/// users or without the item are skipped.
pub fn aggregate_vas(
    responses: &[QuestionnaireResponse],
    users: &UserRegistry,
    item: VasItem,
) -> Result<BTreeMap<Cohort, Quartiles>> {
    let mut groups: BTreeMap<Cohort, Vec<f64>> = BTreeMap::new();
    for r in responses {
        if let (Some(user), Some(v)) = (users.get(&r.user_id), r.items.get(&item)) {
            groups.entry(user.cohort).or_default().push(*v);
        }
    }
    if groups.is_empty() {
        return Err(Error::InvalidQuestionnaire(format!("no responses for {item:?}")));
    }
    groups
        .into_iter()
        .map(|(cohort, values)| Ok((cohort, median_iqr(&values)?)))
        .collect()
}

/// Paths of a data root.
#[derive(Debug, Clone)]
pub struct SessionStore {
    root: PathBuf,
}

impl SessionStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn users_path(&self) -> PathBuf {
        self.root.join("users.json")
    }

    pub fn questionnaires_path(&self) -> PathBuf {
        self.root.join("questionnaires.jsonl")
    }

    pub fn procedure_path(&self, user_id: &str, procedure_id: &str) -> PathBuf {
        self.root.join("sessions").join(user_id).join(format!("{procedure_id}.jsonl"))
    }

    /// All procedure logs, sorted by path.
    pub fn procedure_paths(&self) -> Result<Vec<PathBuf>> {
        let sessions = self.root.join("sessions");
        let mut out = Vec::new();
        let users = match fs::read_dir(&sessions) {
            Ok(d) => d,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(out),
            Err(e) => return Err(io_err(&sessions)(e)),
        };
        for user in users {
            let user = user.map_err(io_err(&sessions))?.path();
            if !user.is_dir() {
                continue;
            }
            for entry in fs::read_dir(&user).map_err(io_err(&user))? {
                let p = entry.map_err(io_err(&user))?.path();
                if p.extension().is_some_and(|e| e == "jsonl") {
                    out.push(p);
                }
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn load_procedures(&self) -> Result<Vec<ProcedureRecord>> {
        self.procedure_paths()?.iter().map(|p| ProcedureRecord::load(p)).collect()
    }
}
