//! One trainee's in-progress procedure.
//!
//! Every accepted action becomes an event that is validated against the
//! procedure record and appended to the on-disk log before it is
//! acknowledged, so the log always replays to the live state.

use std::path::Path;
use std::sync::Arc;

use biopsim::anatomy::SectorLabel;
use biopsim::case::CaseBundle;
use biopsim::geometry::Segment;
use biopsim::probe::{image_frame, needle_segment, pose_from_controls, ImageFrame, ProbeControls, ProbePose};
use biopsim::scoring::{finish_procedure, ExtendedWeights, MappingFeedback, CORES_PER_PROCEDURE};
use biopsim::session::{
    AbandonPayload, AssistanceFlags, BiopsyPayload, ChecklistItem, ChecklistPayload, DeclarePayload, Event,
    EventKind, EventLog, PosePayload, ProcedureRecord, StartPayload,
};
use biopsim::volume::extract_slice;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::frame::SliceFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LiveState {
    Checklist,
    Scanning,
    /// A core was fired without a declaration; only `declare` is accepted.
    Declaring,
    Finished,
    Abandoned,
}

#[derive(Debug, Error)]
pub enum LiveError {
    #[error("cannot {action} while the procedure is {state:?}")]
    WrongState { action: &'static str, state: LiveState },
    #[error("checklist incomplete: {0} item(s) outstanding")]
    ChecklistIncomplete(usize),
    #[error("all {CORES_PER_PROCEDURE} cores have been fired")]
    TooManyCores,
    #[error("incomplete procedure: {0} of {CORES_PER_PROCEDURE} cores fired and declared")]
    Incomplete(usize),
    #[error("unknown checklist item '{0}'")]
    UnknownChecklistItem(String),
    #[error(transparent)]
    Engine(#[from] biopsim::Error),
    #[error("frame encoding: {0}")]
    Frame(#[from] crate::frame::FrameError),
}

/// Acknowledgement of a fired core. Carries no accuracy information.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BiopsyAck {
    pub core_index: usize,
    pub cores_fired: usize,
    pub awaiting_declaration: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeclareAck {
    pub core_index: usize,
    pub cores_declared: usize,
}

/// Vector overlays sent alongside a frame; each part is present only when
/// its assistance flag is on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlay {
    pub frame_id: u64,
    /// Clamped controls the frame was rendered with.
    pub controls: ProbeControls,
    pub plane: Option<ImageFrame>,
    pub needle: Option<Segment>,
    pub previous_cores: Option<Vec<Segment>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFrame {
    pub frame: SliceFrame,
    pub overlay: Overlay,
}

/// Public view of a live procedure. Never includes scores before finish.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveStatus {
    pub procedure_id: String,
    pub user_id: String,
    pub case_id: String,
    pub state: LiveState,
    pub checklist: Vec<ChecklistItem>,
    pub assistance: AssistanceFlags,
    pub cores_fired: usize,
    pub cores_declared: usize,
}

pub struct LiveProcedure {
    case: Arc<CaseBundle>,
    record: ProcedureRecord,
    log: EventLog,
    state: LiveState,
    pose: ProbePose,
    next_frame_id: u64,
    weights: ExtendedWeights,
    feedback: Option<MappingFeedback>,
}

impl LiveProcedure {
    /// Starts a procedure at `t_ms`, creating its log at `log_path`.
    pub fn start(
        case: Arc<CaseBundle>,
        start: StartPayload,
        log_path: &Path,
        weights: ExtendedWeights,
        t_ms: u64,
    ) -> Result<Self, LiveError> {
        let record = ProcedureRecord::start(t_ms, start);
        let mut log = EventLog::create(log_path)?;
        log.append(&record.events[0])?;
        let pose = pose_from_controls(&ProbeControls::default(), &case.limits, case.fulcrum);
        Ok(Self {
            case,
            record,
            log,
            state: LiveState::Checklist,
            pose,
            next_frame_id: 1,
            weights,
            feedback: None,
        })
    }

    pub fn state(&self) -> LiveState {
        self.state
    }

    pub fn record(&self) -> &ProcedureRecord {
        &self.record
    }

    pub fn pose(&self) -> &ProbePose {
        &self.pose
    }

    pub fn status(&self) -> LiveStatus {
        LiveStatus {
            procedure_id: self.record.procedure_id.clone(),
            user_id: self.record.user_id.clone(),
            case_id: self.record.case_id.clone(),
            state: self.state,
            checklist: self.record.checklist.clone(),
            assistance: self.record.assistance,
            cores_fired: self.record.cores.len(),
            cores_declared: self.record.declared_count(),
        }
    }

    /// Feedback of a finished procedure.
    pub fn feedback(&self) -> Option<&MappingFeedback> {
        self.feedback.as_ref()
    }

    fn record_event(&mut self, event: Event) -> Result<(), LiveError> {
        // Timestamps never run backwards even if the caller's clock does.
        let t = event.t_ms.max(self.record.events.last().map_or(0, |e| e.t_ms));
        let event = Event { t_ms: t, ..event };
        self.record.push(event.clone())?;
        self.log.append(&event)?;
        Ok(())
    }

    fn ensure_active(&self, action: &'static str) -> Result<(), LiveError> {
        match self.state {
            LiveState::Finished | LiveState::Abandoned => Err(LiveError::WrongState { action, state: self.state }),
            _ => Ok(()),
        }
    }

    /// Moves from the checklist to scanning once every item is done.
    fn ensure_scanning(&mut self, action: &'static str) -> Result<(), LiveError> {
        if self.state == LiveState::Checklist {
            let outstanding = self.record.checklist.iter().filter(|i| !i.done).count();
            if outstanding > 0 {
                return Err(LiveError::ChecklistIncomplete(outstanding));
            }
            self.state = LiveState::Scanning;
        }
        if self.state != LiveState::Scanning {
            return Err(LiveError::WrongState { action, state: self.state });
        }
        Ok(())
    }

    pub fn check_item(&mut self, item: &str, done: bool, t_ms: u64) -> Result<LiveStatus, LiveError> {
        if self.state != LiveState::Checklist {
            return Err(LiveError::WrongState {
                action: "update the checklist",
                state: self.state,
            });
        }
        if !self.record.checklist.iter().any(|i| i.key == item) {
            return Err(LiveError::UnknownChecklistItem(item.to_string()));
        }
        let payload = ChecklistPayload {
            item: item.to_string(),
            done,
        };
        self.record_event(Event::new(t_ms, EventKind::Checklist, &payload))?;
        Ok(self.status())
    }

    pub fn set_assistance(&mut self, flags: AssistanceFlags, t_ms: u64) -> Result<LiveStatus, LiveError> {
        self.ensure_active("change assistance")?;
        self.record_event(Event::new(t_ms, EventKind::Assistance, &flags))?;
        Ok(self.status())
    }

    /// Stores the clamped pose and renders its slice.
    pub fn pose_update(&mut self, controls: &ProbeControls, t_ms: u64) -> Result<RenderedFrame, LiveError> {
        self.ensure_scanning("move the probe")?;
        let pose = pose_from_controls(controls, &self.case.limits, self.case.fulcrum);
        let payload = PosePayload {
            controls: pose.controls,
        };
        self.record_event(Event::new(t_ms, EventKind::Pose, &payload))?;
        self.pose = pose;
        self.render()
    }

    /// Renders the current pose without logging anything.
    pub fn render(&mut self) -> Result<RenderedFrame, LiveError> {
        let frame_id = self.next_frame_id;
        self.next_frame_id += 1;
        let image_frame = image_frame(&self.pose, &self.case.fan);
        let img = extract_slice(&self.case.volume, &image_frame, &self.case.fan);
        let frame = SliceFrame::from_image(&img, frame_id)?;
        let flags = self.record.assistance;
        let overlay = Overlay {
            frame_id,
            controls: self.pose.controls,
            plane: flags.plane_3d.then_some(image_frame),
            needle: flags
                .needle_trajectory
                .then(|| needle_segment(&self.pose, &self.case.gun)),
            previous_cores: flags
                .previous_biopsies
                .then(|| self.record.cores.iter().map(|c| c.segment).collect()),
        };
        Ok(RenderedFrame { frame, overlay })
    }

    /// Fires a core from the current pose. With no declaration the procedure
    /// waits in `Declaring` until [`declare`](Self::declare).
    pub fn submit_biopsy(&mut self, declared: Option<SectorLabel>, t_ms: u64) -> Result<BiopsyAck, LiveError> {
        self.ensure_scanning("fire a biopsy")?;
        if self.record.cores.len() >= CORES_PER_PROCEDURE {
            return Err(LiveError::TooManyCores);
        }
        let index = self.record.cores.len() + 1;
        let payload = BiopsyPayload {
            index,
            segment: needle_segment(&self.pose, &self.case.gun),
            pose: self.pose,
            assistance: self.record.assistance,
            declared_target: declared,
        };
        self.record_event(Event::new(t_ms, EventKind::Biopsy, &payload))?;
        if declared.is_none() {
            self.state = LiveState::Declaring;
        }
        Ok(BiopsyAck {
            core_index: index,
            cores_fired: index,
            awaiting_declaration: declared.is_none(),
        })
    }

    pub fn declare(&mut self, target: SectorLabel, t_ms: u64) -> Result<DeclareAck, LiveError> {
        if self.state != LiveState::Declaring {
            return Err(LiveError::WrongState {
                action: "declare a core",
                state: self.state,
            });
        }
        let index = self.record.cores.len();
        self.record_event(Event::new(t_ms, EventKind::Declare, &DeclarePayload { index, target }))?;
        self.state = LiveState::Scanning;
        Ok(DeclareAck {
            core_index: index,
            cores_declared: self.record.declared_count(),
        })
    }

    /// Scores the procedure and logs the result. Finishing again returns the
    /// same payload.
    pub fn finish(&mut self, t_ms: u64) -> Result<MappingFeedback, LiveError> {
        if let Some(f) = &self.feedback {
            return Ok(f.clone());
        }
        self.ensure_active("finish")?;
        if !self.record.is_complete() {
            return Err(LiveError::Incomplete(self.record.declared_count()));
        }
        let t = t_ms.max(self.record.events.last().map_or(0, |e| e.t_ms));
        let mesh_ref = self.case.mesh_file.clone();
        let feedback = finish_procedure(&mut self.record, t, &self.case.partition, &mesh_ref, &self.weights)?;
        let event = self.record.events.last().expect("finish event was just pushed").clone();
        self.log.append(&event)?;
        self.state = LiveState::Finished;
        self.feedback = Some(feedback.clone());
        Ok(feedback)
    }

    pub fn abandon(&mut self, reason: &str, t_ms: u64) -> Result<LiveStatus, LiveError> {
        if self.state == LiveState::Abandoned {
            return Ok(self.status());
        }
        self.ensure_active("abandon")?;
        let payload = AbandonPayload {
            reason: reason.to_string(),
        };
        self.record_event(Event::new(t_ms, EventKind::Abandon, &payload))?;
        self.state = LiveState::Abandoned;
        Ok(self.status())
    }
}
