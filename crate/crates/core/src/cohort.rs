//! Scripted trainees for desk-scale replication of the expert/novice study.
//!
//! A simulated user aims each of the twelve cores at its sector centroid
//! (inverse kinematics by coordinate descent), perturbs the aim with
//! policy noise, fires, and declares the target, sometimes wrongly.
//!
//! Skill varies between users of one cohort: each user draws a noise
//! multiplier `exp(skill_spread·N(0,1))`, and a `talent_rate` fraction of
//! users aim with `talent_noise_deg` instead of the cohort noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anatomy::SectorLabel;
use crate::case::CaseBundle;
use crate::error::{Error, Result};
use crate::geometry::{point_segment_distance, Vec3};
use crate::probe::{needle_segment, pose_from_controls, ProbeControls, ProbePose};
use crate::scoring::{finish_procedure, ExtendedWeights};
use crate::session::{
    default_checklist, AssistanceFlags, BiopsyPayload, ChecklistPayload, Cohort, DeclarePayload, Event, EventKind,
    Handedness, PosePayload, ProcedureRecord, SessionStore, StartPayload, UserProfile, UserRegistry,
};
use crate::stats::{construct_report, split_halves_report, ConstructReport, ReliabilityReport};

/// Aiming accuracy of a simulated user population.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AimPolicy {
    /// Standard deviation of the pitch and yaw aiming error.
    pub angular_noise_deg: f64,
    /// Systematic aim offset along the lateral axis (+x, patient-left).
    pub lateral_bias_mm: f64,
    pub insertion_noise_mm: f64,
    pub declaration_error_rate: f64,
    pub time_mean_s: f64,
    pub time_sd_s: f64,
    /// Log-normal sigma of the per-user noise multiplier.
    pub skill_spread: f64,
    /// Fraction of users who aim with `talent_noise_deg` instead.
    pub talent_rate: f64,
    pub talent_noise_deg: f64,
    pub seed: u64,
}

impl Default for AimPolicy {
    fn default() -> Self {
        Self::expert()
    }
}

impl AimPolicy {
    pub fn noiseless() -> Self {
        Self {
            angular_noise_deg: 0.0,
            lateral_bias_mm: 0.0,
            insertion_noise_mm: 0.0,
            declaration_error_rate: 0.0,
            time_mean_s: 20.0,
            time_sd_s: 0.0,
            skill_spread: 0.0,
            talent_rate: 0.0,
            talent_noise_deg: 0.0,
            seed: 0,
        }
    }

    /// Calibrated expert default.
    pub fn expert() -> Self {
        Self {
            angular_noise_deg: 10.5,
            lateral_bias_mm: 0.0,
            insertion_noise_mm: 2.0,
            declaration_error_rate: 0.0,
            time_mean_s: 20.0,
            time_sd_s: 5.0,
            skill_spread: 0.1,
            talent_rate: 0.0,
            talent_noise_deg: 0.0,
            seed: 1,
        }
    }

    /// Calibrated novice default.
    pub fn novice() -> Self {
        Self {
            angular_noise_deg: 16.0,
            lateral_bias_mm: 2.0,
            insertion_noise_mm: 4.0,
            declaration_error_rate: 0.05,
            time_mean_s: 32.0,
            time_sd_s: 10.0,
            skill_spread: 0.1,
            talent_rate: 0.25,
            talent_noise_deg: 7.5,
            seed: 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            self.angular_noise_deg,
            self.insertion_noise_mm,
            self.time_sd_s,
            self.skill_spread,
            self.talent_noise_deg,
        ];
        if nonneg.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidStatsInput("policy standard deviations must be >= 0".into()));
        }
        for r in [self.declaration_error_rate, self.talent_rate] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::InvalidStatsInput("policy rates must lie in [0, 1]".into()));
            }
        }
        if !(self.time_mean_s > 0.0) || !self.lateral_bias_mm.is_finite() {
            return Err(Error::InvalidStatsInput("policy time mean must be positive".into()));
        }
        Ok(())
    }
}

pub const IK_TOLERANCE_MM: f64 = 0.5;

/// Noise-free aim for one sector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aim {
    pub target: SectorLabel,
    pub point: Vec3,
    pub controls: ProbeControls,
    /// Distance from `point` to the resulting core segment.
    pub miss_mm: f64,
}

fn midpoint_error(case: &CaseBundle, controls: &ProbeControls, point: &Vec3) -> f64 {
    let pose = pose_from_controls(controls, &case.limits, case.fulcrum);
    (needle_segment(&pose, &case.gun).midpoint() - point).norm()
}

/// Controls whose core midpoint lands on `point`, as nearly as the limits allow.
///
/// Seeds pitch/yaw/insertion from the straight line fulcrum → point (exact
/// for a zero guide angle), then refines by coordinate descent over pitch,
/// yaw, insertion and roll with step halving.
pub fn aim_at(case: &CaseBundle, point: &Vec3) -> (ProbeControls, f64) {
    let d = point - case.fulcrum;
    let dist = d.norm();
    let axis = if dist > 0.0 { d / dist } else { Vec3::y() };
    let seed = ProbeControls {
        pitch_deg: axis.z.atan2(axis.y).to_degrees(),
        yaw_deg: axis.x.clamp(-1.0, 1.0).asin().to_degrees(),
        roll_deg: 0.0,
        insertion_mm: dist - case.gun.throw_mm - case.gun.core_length_mm / 2.0,
    };
    let mut best = seed.clamped(&case.limits);
    let mut err = midpoint_error(case, &best, point);
    let mut steps = [4.0, 4.0, 8.0, 4.0];
    for _ in 0..200 {
        if err < 1e-9 || steps.iter().all(|s| *s < 1e-7) {
            break;
        }
        for k in 0..4 {
            let mut improved = false;
            for sign in [1.0, -1.0] {
                let mut c = best;
                match k {
                    0 => c.pitch_deg += sign * steps[k],
                    1 => c.yaw_deg += sign * steps[k],
                    2 => c.insertion_mm += sign * steps[k],
                    _ => c.roll_deg += sign * steps[k],
                }
                let c = c.clamped(&case.limits);
                let e = midpoint_error(case, &c, point);
                if e < err {
                    best = c;
                    err = e;
                    improved = true;
                    break;
                }
            }
            if !improved {
                steps[k] /= 2.0;
            }
        }
    }
    let pose = pose_from_controls(&best, &case.limits, case.fulcrum);
    (best, point_segment_distance(point, &needle_segment(&pose, &case.gun)))
}

/// Noise-free aims at every sector centroid, in label order.
pub fn plan_aims(case: &CaseBundle) -> Vec<Aim> {
    SectorLabel::all()
        .into_par_iter()
        .map(|target| {
            let point = case.partition.cell_centroid(target);
            let (controls, miss_mm) = aim_at(case, &point);
            Aim {
                target,
                point,
                controls,
                miss_mm,
            }
        })
        .collect()
}

/// Simulated procedure for a user identity; see [`simulate_procedure`].
pub fn simulate_user_procedure(
    case: &CaseBundle,
    aims: &[Aim],
    policy: &AimPolicy,
    user_id: &str,
    procedure_id: &str,
    seed: u64,
) -> Result<ProcedureRecord> {
    policy.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let talented = rng.random::<f64>() < policy.talent_rate;
    let base_noise = if talented {
        policy.talent_noise_deg
    } else {
        policy.angular_noise_deg
    };
    let skill = (policy.skill_spread * std_normal.sample(&mut rng)).exp();
    let angular_sd = base_noise * skill;
    let insertion_sd = policy.insertion_noise_mm * skill;

    let mut record = ProcedureRecord::start(
        0,
        StartPayload {
            procedure_id: procedure_id.to_string(),
            user_id: user_id.to_string(),
            case_id: case.id.clone(),
            checklist: default_checklist(),
            assistance: AssistanceFlags::default(),
        },
    );
    let mut t = 0u64;
    for item in default_checklist() {
        t += 2000;
        record.push(Event::new(t, EventKind::Checklist, &ChecklistPayload { item, done: true }))?;
    }

    for (i, aim) in aims.iter().enumerate() {
        let gap_s = (policy.time_mean_s + policy.time_sd_s * std_normal.sample(&mut rng)).max(1.0);
        t += (gap_s * 1000.0).round() as u64;

        let aimed = if policy.lateral_bias_mm != 0.0 {
            aim_at(case, &(aim.point + Vec3::x() * policy.lateral_bias_mm)).0
        } else {
            aim.controls
        };
        let controls = ProbeControls {
            pitch_deg: aimed.pitch_deg + angular_sd * std_normal.sample(&mut rng),
            yaw_deg: aimed.yaw_deg + angular_sd * std_normal.sample(&mut rng),
            roll_deg: aimed.roll_deg,
            insertion_mm: aimed.insertion_mm + insertion_sd * std_normal.sample(&mut rng),
        };
        let pose: ProbePose = pose_from_controls(&controls, &case.limits, case.fulcrum);
        let segment = needle_segment(&pose, &case.gun);
        let declared = if rng.random::<f64>() < policy.declaration_error_rate {
            let other = rng.random_range(0..11);
            let idx = aim.target.index();
            SectorLabel::from_index(if other >= idx { other + 1 } else { other })
        } else {
            aim.target
        };
        record.push(Event::new(t, EventKind::Pose, &PosePayload { controls: pose.controls }))?;
        record.push(Event::new(
            t,
            EventKind::Biopsy,
            &BiopsyPayload {
                index: i + 1,
                segment,
                pose,
                assistance: AssistanceFlags::default(),
                declared_target: None,
            },
        ))?;
        t += 1500;
        record.push(Event::new(
            t,
            EventKind::Declare,
            &DeclarePayload {
                index: i + 1,
                target: declared,
            },
        ))?;
    }
    t += 1000;
    finish_procedure(&mut record, t, &case.partition, &case.mesh_file, &ExtendedWeights::default())?;
    Ok(record)
}

/// One scripted 12-core procedure, deterministic in `seed`.
pub fn simulate_procedure(case: &CaseBundle, policy: &AimPolicy, seed: u64) -> Result<ProcedureRecord> {
    let aims = plan_aims(case);
    simulate_user_procedure(case, &aims, policy, "simulated", &format!("sim-{seed:016x}"), seed)
}

#[derive(Debug, Clone)]
pub struct SimulatedUser {
    pub profile: UserProfile,
    pub record: ProcedureRecord,
}

#[derive(Debug, Clone)]
pub struct CohortRun {
    pub users: Vec<SimulatedUser>,
    pub construct: ConstructReport,
    pub reliability: ReliabilityReport,
}

impl CohortRun {
    pub fn scores(&self, cohort: Cohort) -> Vec<f64> {
        self.users
            .iter()
            .filter(|u| u.profile.cohort == cohort)
            .filter_map(|u| u.record.score.as_ref().map(|s| s.percentage))
            .collect()
    }
}

/// Simulates `n_expert` + `n_novice` users on one case and computes the
/// construct and reliability reports. Reproducible in `seed`; the users
/// are generated in parallel.
pub fn run_cohort(
    case: &CaseBundle,
    expert: &AimPolicy,
    novice: &AimPolicy,
    n_expert: usize,
    n_novice: usize,
    seed: u64,
) -> Result<CohortRun> {
    let aims = plan_aims(case);
    run_cohort_with_aims(case, &aims, expert, novice, n_expert, n_novice, seed)
}

/// [`run_cohort`] with precomputed aims, for repeated runs on one case.
pub fn run_cohort_with_aims(
    case: &CaseBundle,
    aims: &[Aim],
    expert: &AimPolicy,
    novice: &AimPolicy,
    n_expert: usize,
    n_novice: usize,
    seed: u64,
) -> Result<CohortRun> {
    if n_expert == 0 || n_novice == 0 {
        return Err(Error::InvalidStatsInput("each cohort needs at least one user".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let plan: Vec<(Cohort, usize, u64)> = (0..n_expert)
        .map(|i| (Cohort::Expert, i, 0))
        .chain((0..n_novice).map(|i| (Cohort::Novice, i, 0)))
        .map(|(c, i, _)| (c, i, rng.random::<u64>()))
        .collect();
    let users = plan
        .par_iter()
        .map(|&(cohort, i, user_seed)| {
            let (policy, tag) = match cohort {
                Cohort::Expert => (expert, "expert"),
                _ => (novice, "novice"),
            };
            let id = format!("{tag}-{:02}", i + 1);
            let seed = user_seed ^ policy.seed;
            let record = simulate_user_procedure(case, aims, policy, &id, &format!("{id}-{seed:016x}"), seed)?;
            Ok(SimulatedUser {
                profile: UserProfile {
                    id: id.clone(),
                    name: format!("Simulated {tag} {}", i + 1),
                    cohort,
                    handedness: Handedness::Right,
                },
                record,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pct = |c: Cohort| -> Vec<f64> {
        users
            .iter()
            .filter(|u| u.profile.cohort == c)
            .filter_map(|u| u.record.score.as_ref().map(|s| s.percentage))
            .collect()
    };
    let construct = construct_report(&pct(Cohort::Expert), &pct(Cohort::Novice))?;
    let records: Vec<ProcedureRecord> = users.iter().map(|u| u.record.clone()).collect();
    let reliability = split_halves_report(&records);
    Ok(CohortRun {
        users,
        construct,
        reliability,
    })
}

/// Writes users and procedure logs of a run under a data root.
pub fn persist_cohort(run: &CohortRun, store: &SessionStore) -> Result<()> {
    let mut registry = UserRegistry::load(&store.users_path())?;
    for u in &run.users {
        if registry.get(&u.profile.id).is_none() {
            registry.add(u.profile.clone())?;
        }
        u.record
            .save(&store.procedure_path(&u.profile.id, &u.record.procedure_id))?;
    }
    registry.save(&store.users_path())
}
