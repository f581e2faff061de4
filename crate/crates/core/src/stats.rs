//! Validation statistics: Pearson correlation with Fisher interval,
//! Mann–Whitney U, quartiles, two-sample size, split-halves reliability and
//! expert/novice construct comparison.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::anatomy::Side;
use crate::error::{Error, Result};
use crate::session::{Cohort, ProcedureRecord, ProcedureStatus, UserRegistry};

/// Smallest p-value ever reported.
pub const P_FLOOR: f64 = 1e-12;
/// Pooled sample size up to which tie-free Mann–Whitney p-values are exact.
pub const EXACT_MW_MAX_N: usize = 25;

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal")
}

/// Median and quartiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quartiles {
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
}

/// Linear interpolation between closest ranks: the `p` quantile of sorted
/// `xs` sits at position `(n − 1)·p` (Hyndman–Fan type 7).
fn quantile_sorted(xs: &[f64], p: f64) -> f64 {
    let h = (xs.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(xs.len() - 1);
    xs[lo] + (h - lo as f64) * (xs[hi] - xs[lo])
}

pub fn median_iqr(xs: &[f64]) -> Result<Quartiles> {
    if xs.is_empty() {
        return Err(Error::InvalidStatsInput("median of an empty sample".into()));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidStatsInput("sample contains a non-finite value".into()));
    }
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(Quartiles {
        median: quantile_sorted(&v, 0.5),
        q1: quantile_sorted(&v, 0.25),
        q3: quantile_sorted(&v, 0.75),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub r: f64,
    pub ci95: (f64, f64),
    /// Two-sided p of `t = r·√(n−2)/√(1−r²)` on `n − 2` degrees of freedom.
    pub p: f64,
    pub n: usize,
}

/// Fisher interval and t-test p for a given `r` and sample size.
pub fn correlation_inference(r: f64, n: usize) -> Result<Correlation> {
    if n < 4 {
        return Err(Error::InvalidStatsInput(format!("correlation needs n >= 4, got {n}")));
    }
    if !(-1.0..=1.0).contains(&r) {
        return Err(Error::InvalidStatsInput(format!("r = {r} outside [-1, 1]")));
    }
    let z = r.atanh();
    let se = 1.0 / ((n - 3) as f64).sqrt();
    let zc = std_normal().inverse_cdf(0.975);
    let ci95 = ((z - zc * se).tanh(), (z + zc * se).tanh());
    let p = if r.abs() >= 1.0 {
        P_FLOOR
    } else {
        let df = (n - 2) as f64;
        let t = r * df.sqrt() / (1.0 - r * r).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("df > 0");
        (2.0 * dist.sf(t.abs())).clamp(P_FLOOR, 1.0)
    };
    Ok(Correlation { r, ci95, p, n })
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<Correlation> {
    if x.len() != y.len() {
        return Err(Error::InvalidStatsInput("pearson inputs differ in length".into()));
    }
    let n = x.len();
    if n < 4 {
        return Err(Error::InvalidStatsInput(format!("correlation needs n >= 4, got {n}")));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("an input has zero variance".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
    correlation_inference(r, n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// `min(u_a, u_b)`.
    pub u: f64,
    pub u_a: f64,
    pub u_b: f64,
    /// Two-sided.
    pub p: f64,
    pub exact: bool,
}

/// Midranks (1-based) of the pooled sample and the tie-group sizes.
fn midranks(pooled: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && pooled[order[j + 1]] == pooled[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Number of arrangements with each value of `U` for sample sizes
/// `(n1, n2)`, i.e. `counts[u]` for `u ∈ 0..=n1·n2`.
pub fn mann_whitney_null_counts(n1: usize, n2: usize) -> Vec<u64> {
    // f[i][j] is the U distribution for sizes (i, j), built by asking whether
    // the largest pooled observation belongs to the first sample.
    let mut f: Vec<Vec<Vec<u64>>> = vec![vec![Vec::new(); n2 + 1]; n1 + 1];
    for i in 0..=n1 {
        for j in 0..=n2 {
            let mut d = vec![0u64; i * j + 1];
            if i == 0 || j == 0 {
                d[0] = 1;
            } else {
                for (u, c) in f[i - 1][j].iter().enumerate() {
                    d[u + j] += c;
                }
                for (u, c) in f[i][j - 1].iter().enumerate() {
                    d[u] += c;
                }
            }
            f[i][j] = d;
        }
    }
    std::mem::take(&mut f[n1][n2])
}

pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidStatsInput("Mann–Whitney needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|x| !x.is_finite()) {
        return Err(Error::InvalidStatsInput("sample contains a non-finite value".into()));
    }
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let r_a: f64 = ranks[..n1].iter().sum();
    let u_a = r_a - (n1 * (n1 + 1)) as f64 / 2.0;
    let u_b = (n1 * n2) as f64 - u_a;
    let u = u_a.min(u_b);
    let has_ties = ties.iter().any(|&t| t > 1);
    let n = n1 + n2;

    if n <= EXACT_MW_MAX_N && !has_ties {
        let counts = mann_whitney_null_counts(n1, n2);
        let total: u64 = counts.iter().sum();
        let below: u64 = counts[..=(u as usize)].iter().sum();
        let p = (2.0 * below as f64 / total as f64).clamp(P_FLOOR, 1.0);
        return Ok(MannWhitney { u, u_a, u_b, p, exact: true });
    }

    let nf = n as f64;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (nf * (nf - 1.0));
    let var = (n1 * n2) as f64 / 12.0 * ((nf + 1.0) - tie_term);
    let mean = (n1 * n2) as f64 / 2.0;
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u_a - mean).abs() - 0.5).max(0.0) / var.sqrt();
        (2.0 * std_normal().sf(z)).clamp(P_FLOOR, 1.0)
    };
    Ok(MannWhitney { u, u_a, u_b, p, exact: false })
}

/// Per-group size of a two-sample comparison detecting a mean difference
/// `delta` with common standard deviation `sd`:
/// `ceil(2·((z_{1−α/2} + z_power)·sd/delta)²)`.
pub fn required_sample_size(delta: f64, sd: f64, alpha: f64, power: f64) -> Result<u64> {
    if !(delta > 0.0 && sd > 0.0) {
        return Err(Error::InvalidStatsInput("delta and sd must be positive".into()));
    }
    if !(alpha > 0.0 && alpha < 1.0 && power > 0.0 && power < 1.0) {
        return Err(Error::InvalidStatsInput("alpha and power must lie in (0, 1)".into()));
    }
    let norm = std_normal();
    let z = norm.inverse_cdf(1.0 - alpha / 2.0) + norm.inverse_cdf(power);
    Ok((2.0 * (z * sd / delta).powi(2)).ceil() as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanCi {
    pub mean: f64,
    /// t-based; absent when fewer than two values.
    pub ci95: Option<(f64, f64)>,
}

pub fn mean_ci(xs: &[f64]) -> Result<MeanCi> {
    if xs.is_empty() {
        return Err(Error::InvalidStatsInput("mean of an empty sample".into()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return Ok(MeanCi { mean, ci95: None });
    }
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let t = StudentsT::new(0.0, 1.0, n - 1.0).expect("df > 0").inverse_cdf(0.975);
    let h = t * sd / n.sqrt();
    Ok(MeanCi {
        mean,
        ci95: Some((mean - h, mean + h)),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideCounts {
    pub procedure_id: String,
    pub user_id: String,
    pub right_correct: u32,
    pub left_correct: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityReport {
    pub per_user: Vec<SideCounts>,
    pub n: usize,
    /// `None` when the correlation is undefined; see `degenerate`.
    pub correlation: Option<Correlation>,
    pub degenerate: Option<String>,
    pub right: Option<MeanCi>,
    pub left: Option<MeanCi>,
    /// Procedures left out, with the reason.
    pub excluded: Vec<String>,
}

/// Correct cores on each side of the gland, correlated across users.
/// Only finished, scored procedures contribute.
pub fn split_halves_report(procedures: &[ProcedureRecord]) -> ReliabilityReport {
    let mut per_user = Vec::new();
    let mut excluded = Vec::new();
    for p in procedures {
        let score = match (&p.score, p.status) {
            (Some(s), ProcedureStatus::Finished) if s.cores.len() == 12 => s,
            _ => {
                excluded.push(format!("{}: incomplete procedure ({} cores)", p.procedure_id, p.declared_count()));
                continue;
            }
        };
        let count = |side: Side| {
            score
                .cores
                .iter()
                .filter(|c| c.hit && c.declared_target.side == side)
                .count() as u32
        };
        per_user.push(SideCounts {
            procedure_id: p.procedure_id.clone(),
            user_id: p.user_id.clone(),
            right_correct: count(Side::Right),
            left_correct: count(Side::Left),
        });
    }
    reliability_from_counts(per_user, excluded)
}

pub fn reliability_from_counts(per_user: Vec<SideCounts>, excluded: Vec<String>) -> ReliabilityReport {
    let right: Vec<f64> = per_user.iter().map(|u| u.right_correct as f64).collect();
    let left: Vec<f64> = per_user.iter().map(|u| u.left_correct as f64).collect();
    let (correlation, degenerate) = match pearson(&right, &left) {
        Ok(c) => (Some(c), None),
        Err(e) => (None, Some(e.to_string())),
    };
    ReliabilityReport {
        n: per_user.len(),
        per_user,
        correlation,
        degenerate,
        right: mean_ci(&right).ok(),
        left: mean_ci(&left).ok(),
        excluded,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub n: usize,
    pub scores: Vec<f64>,
    pub quartiles: Quartiles,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstructReport {
    pub expert: CohortSummary,
    pub novice: CohortSummary,
    pub mann_whitney: MannWhitney,
}

pub fn construct_report(expert: &[f64], novice: &[f64]) -> Result<ConstructReport> {
    let summary = |s: &[f64]| -> Result<CohortSummary> {
        Ok(CohortSummary {
            n: s.len(),
            scores: s.to_vec(),
            quartiles: median_iqr(s)?,
        })
    };
    Ok(ConstructReport {
        expert: summary(expert)?,
        novice: summary(novice)?,
        mann_whitney: mann_whitney(expert, novice)?,
    })
}

/// One scored procedure in a study report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcedureSummary {
    pub procedure_id: String,
    pub user_id: String,
    /// `None` for users missing from the registry.
    pub cohort: Option<Cohort>,
    pub case_id: String,
    pub points: u32,
    pub percentage: f64,
    pub duration_ms: u64,
}

/// Everything the instructor dashboard and `stats` command show.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub procedures: Vec<ProcedureSummary>,
    pub reliability: ReliabilityReport,
    /// `None` when either cohort has no scored procedure; see `construct_error`.
    pub construct: Option<ConstructReport>,
    pub construct_error: Option<String>,
    /// Procedures not counted, with the reason.
    pub excluded: Vec<String>,
}

/// Builds the study report from procedure logs. Each user contributes their
/// first finished procedure in procedure-id order; `filter` restricts the
/// listed procedures and the reliability analysis to one cohort, while the
/// construct comparison always uses both.
pub fn study_report(procedures: &[ProcedureRecord], registry: &UserRegistry, filter: Option<Cohort>) -> StudyReport {
    let mut sorted: Vec<&ProcedureRecord> = procedures.iter().collect();
    sorted.sort_by(|a, b| a.procedure_id.cmp(&b.procedure_id));
    let mut seen = std::collections::BTreeSet::new();
    let mut chosen = Vec::new();
    let mut excluded = Vec::new();
    for p in sorted {
        if p.status != ProcedureStatus::Finished || p.score.is_none() {
            excluded.push(format!("{}: not finished", p.procedure_id));
        } else if !seen.insert(p.user_id.as_str()) {
            excluded.push(format!("{}: user {} already counted", p.procedure_id, p.user_id));
        } else {
            chosen.push(p);
        }
    }
    let cohort_of = |p: &ProcedureRecord| registry.get(&p.user_id).map(|u| u.cohort);
    let scores = |c: Cohort| -> Vec<f64> {
        chosen
            .iter()
            .filter(|p| cohort_of(p) == Some(c))
            .filter_map(|p| p.score.as_ref().map(|s| s.percentage))
            .collect()
    };
    let (construct, construct_error) = match construct_report(&scores(Cohort::Expert), &scores(Cohort::Novice)) {
        Ok(r) => (Some(r), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let listed: Vec<ProcedureRecord> = chosen
        .iter()
        .filter(|p| filter.is_none() || cohort_of(p) == filter)
        .map(|p| (*p).clone())
        .collect();
    let summaries = listed
        .iter()
        .map(|p| {
            let s = p.score.as_ref().expect("only scored procedures are chosen");
            ProcedureSummary {
                procedure_id: p.procedure_id.clone(),
                user_id: p.user_id.clone(),
                cohort: cohort_of(p),
                case_id: p.case_id.clone(),
                points: s.points,
                percentage: s.percentage,
                duration_ms: p.duration_ms,
            }
        })
        .collect();
    StudyReport {
        procedures: summaries,
        reliability: split_halves_report(&listed),
        construct,
        construct_error,
        excluded,
    }
}
