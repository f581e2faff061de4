//! Core and procedure scoring, the extended score, and the end-of-procedure
//! feedback payload.
//!
//! A core "reaches" its declared sector when more than
//! [`HIT_THRESHOLD_MM`] of it lies inside that sector. A reached core earns
//! 4 points, a core that is inside the gland but misses its target earns 1,
//! and a core that never enters the gland earns 0.

use serde::{Deserialize, Serialize};

use crate::anatomy::{SectorLabel, SectorPartition};
use crate::error::{Error, Result};
use crate::geometry::Segment;
use crate::probe::ProbePose;
use crate::session::{AssistanceFlags, Event, EventKind, FinishPayload, ProcedureRecord};

pub const HIT_THRESHOLD_MM: f64 = 0.1;
pub const CORES_PER_PROCEDURE: usize = 12;
pub const MAX_POINTS: u32 = 48;
pub const FEEDBACK_VERSION: u32 = 1;

/// A fired core. `declared_target` is `None` until the trainee declares it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiopsyCore {
    pub segment: Segment,
    pub declared_target: Option<SectorLabel>,
    pub fired_at_ms: u64,
    pub pose: ProbePose,
    /// Assistance overlays active when the core was fired.
    pub assistance: AssistanceFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectorLength {
    pub sector: SectorLabel,
    pub mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreResult {
    pub declared_target: SectorLabel,
    pub core_length_mm: f64,
    /// Sectors the core passes through, in label order.
    pub sector_lengths: Vec<SectorLength>,
    pub target_mm: f64,
    pub inside_mm: f64,
    pub outside_mm: f64,
    pub hit: bool,
    pub points: u32,
    pub distance_to_target_mm: f64,
}

pub fn core_points(hit: bool, inside_mm: f64) -> u32 {
    if hit {
        4
    } else if inside_mm > 0.0 {
        1
    } else {
        0
    }
}

/// Scores a core against an explicit target sector.
pub fn score_segment(partition: &SectorPartition, segment: &Segment, target: SectorLabel) -> CoreResult {
    let lengths = partition.segment_lengths(segment);
    let target_mm = lengths.get(target);
    let hit = target_mm > HIT_THRESHOLD_MM;
    let distance = if target_mm > 0.0 {
        0.0
    } else {
        partition.distance_to_sector(segment, target)
    };
    CoreResult {
        declared_target: target,
        core_length_mm: segment.length(),
        sector_lengths: lengths
            .reached()
            .into_iter()
            .map(|(sector, mm)| SectorLength { sector, mm })
            .collect(),
        target_mm,
        inside_mm: lengths.inside(),
        outside_mm: lengths.outside,
        hit,
        points: core_points(hit, lengths.inside()),
        distance_to_target_mm: distance,
    }
}

/// Fails if the core has not been declared yet.
pub fn score_core(partition: &SectorPartition, core: &BiopsyCore) -> Result<CoreResult> {
    let target = core
        .declared_target
        .ok_or_else(|| Error::InvalidLog("core has no declared target".into()))?;
    Ok(score_segment(partition, &core.segment, target))
}

/// `100·points/48` rounded half-up to one decimal.
pub fn percentage(points: u32) -> f64 {
    ((250 * points as u64 + 6) / 12) as f64 / 10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureScore {
    pub points: u32,
    pub percentage: f64,
    pub cores: Vec<CoreResult>,
    pub duration_ms: u64,
}

pub fn score_procedure(cores: Vec<CoreResult>, duration_ms: u64) -> Result<ProcedureScore> {
    if cores.len() != CORES_PER_PROCEDURE {
        return Err(Error::IncompleteProcedure(cores.len()));
    }
    let points = cores.iter().map(|c| c.points).sum();
    Ok(ProcedureScore {
        points,
        percentage: percentage(points),
        cores,
        duration_ms,
    })
}

/// Weights of the extended score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExtendedWeights {
    pub length: f64,
    pub distance: f64,
    pub time: f64,
    pub time_threshold_s: f64,
}

impl Default for ExtendedWeights {
    fn default() -> Self {
        Self {
            length: 20.0,
            distance: 2.0,
            time: 1.0,
            time_threshold_s: 300.0,
        }
    }
}

/// Percentage score adjusted by core placement quality and duration:
///
/// `pct + w_len·mean(target_mm / core_mm) − w_dist·mean(miss distance) − w_time·max(0, t − t₀)/60 s`,
/// clamped to `[0, 100]`. The miss-distance mean runs over missed cores only.
pub fn extended_score(cores: &[CoreResult], duration_ms: u64, weights: &ExtendedWeights) -> Result<f64> {
    if cores.len() != CORES_PER_PROCEDURE {
        return Err(Error::IncompleteProcedure(cores.len()));
    }
    let points: u32 = cores.iter().map(|c| c.points).sum();
    let n = cores.len() as f64;
    let length_fraction = cores
        .iter()
        .map(|c| if c.core_length_mm > 0.0 { c.target_mm / c.core_length_mm } else { 0.0 })
        .sum::<f64>()
        / n;
    let misses: Vec<f64> = cores.iter().filter(|c| !c.hit).map(|c| c.distance_to_target_mm).collect();
    let miss_distance = if misses.is_empty() {
        0.0
    } else {
        misses.iter().sum::<f64>() / misses.len() as f64
    };
    let overtime_min = (duration_ms as f64 / 1000.0 - weights.time_threshold_s).max(0.0) / 60.0;
    let raw = percentage(points) + weights.length * length_fraction
        - weights.distance * miss_distance
        - weights.time * overtime_min;
    Ok(raw.clamp(0.0, 100.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedbackCore {
    /// 1-based firing order.
    pub index: usize,
    pub segment: Segment,
    pub declared_target: SectorLabel,
    pub reached: Vec<SectorLength>,
    pub hit: bool,
    pub points: u32,
    pub distance_to_target_mm: f64,
}

/// End-of-procedure payload shared by the trainer UI and CLI replay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingFeedback {
    pub version: u32,
    pub procedure_id: String,
    pub case_id: String,
    /// Mesh file inside the case bundle.
    pub mesh: String,
    pub cores: Vec<FeedbackCore>,
    pub points: u32,
    pub percentage: f64,
    pub extended_score: f64,
    pub duration_ms: u64,
}

impl MappingFeedback {
    /// Canonical serialization; replay compares these bytes.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("feedback is always serializable");
        s.push('\n');
        s
    }
}

/// Scores a completed procedure over its recorded duration.
pub fn procedure_score(procedure: &ProcedureRecord, partition: &SectorPartition) -> Result<ProcedureScore> {
    score_with_duration(procedure, partition, procedure.duration_ms)
}

fn score_with_duration(
    procedure: &ProcedureRecord,
    partition: &SectorPartition,
    duration_ms: u64,
) -> Result<ProcedureScore> {
    if !procedure.is_complete() {
        return Err(Error::IncompleteProcedure(procedure.declared_count()));
    }
    let cores = procedure
        .cores
        .iter()
        .map(|c| score_core(partition, c))
        .collect::<Result<Vec<_>>>()?;
    score_procedure(cores, duration_ms)
}

pub fn feedback_from_score(
    procedure: &ProcedureRecord,
    score: &ProcedureScore,
    mesh_ref: &str,
    weights: &ExtendedWeights,
) -> Result<MappingFeedback> {
    let cores = procedure
        .cores
        .iter()
        .zip(&score.cores)
        .enumerate()
        .map(|(i, (core, r))| FeedbackCore {
            index: i + 1,
            segment: core.segment,
            declared_target: r.declared_target,
            reached: r.sector_lengths.clone(),
            hit: r.hit,
            points: r.points,
            distance_to_target_mm: r.distance_to_target_mm,
        })
        .collect();
    Ok(MappingFeedback {
        version: FEEDBACK_VERSION,
        procedure_id: procedure.procedure_id.clone(),
        case_id: procedure.case_id.clone(),
        mesh: mesh_ref.to_string(),
        cores,
        points: score.points,
        percentage: score.percentage,
        extended_score: extended_score(&score.cores, score.duration_ms, weights)?,
        duration_ms: score.duration_ms,
    })
}

pub fn feedback_payload(
    procedure: &ProcedureRecord,
    partition: &SectorPartition,
    mesh_ref: &str,
    weights: &ExtendedWeights,
) -> Result<MappingFeedback> {
    let score = procedure_score(procedure, partition)?;
    feedback_from_score(procedure, &score, mesh_ref, weights)
}

/// Scores the procedure as ending at `t_ms`, appends the `finish` event and
/// returns the feedback. Replaying the finished record with
/// [`feedback_payload`] reproduces the same payload.
pub fn finish_procedure(
    procedure: &mut ProcedureRecord,
    t_ms: u64,
    partition: &SectorPartition,
    mesh_ref: &str,
    weights: &ExtendedWeights,
) -> Result<MappingFeedback> {
    let start = procedure.events.first().map_or(t_ms, |e| e.t_ms);
    let duration = t_ms.checked_sub(start).ok_or(Error::TimestampRegression { last: start, got: t_ms })?;
    let score = score_with_duration(procedure, partition, duration)?;
    let feedback = feedback_from_score(procedure, &score, mesh_ref, weights)?;
    let payload = FinishPayload { score, feedback: feedback.clone() };
    procedure.push(Event::new(t_ms, EventKind::Finish, &payload))?;
    Ok(feedback)
}
