use std::fs;
use std::net::SocketAddr;
use std::path::Path;

use anyhow::{bail, Context, Result};
use biopsim::anatomy::{ellipsoid_estimate, PartitionFile, SectorLabel, SectorPartition};
use biopsim::case::{CaseBundle, ClinicalInfo};
use biopsim::cohort::{persist_cohort, run_cohort};
use biopsim::geometry::Vec3;
use biopsim::scoring::{feedback_payload, MappingFeedback};
use biopsim::session::{Cohort, ProcedureRecord, SessionStore, UserRegistry};
use biopsim::stats::{study_report, Correlation, Quartiles, StudyReport};
use biopsim::volume::{generate_phantom, PhantomSpec};
use biopsim_service::ServiceConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::SimConfig;
use crate::{GenPhantomArgs, PartitionArgs, ReplayArgs, ServeArgs, SimulateArgs, StatsArgs};

fn write_report<T: Serialize>(path: &Path, report: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report)?;
    text.push('\n');
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn gen_phantom(args: &GenPhantomArgs, config: &SimConfig) -> Result<()> {
    let spec: PhantomSpec = match &args.spec {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => PhantomSpec::default(),
    };
    let id = args.id.clone().unwrap_or_else(|| format!("phantom-{}", args.seed));
    let phantom = generate_phantom(&spec, args.seed)?;
    let mut case = CaseBundle::from_phantom(id, phantom, ClinicalInfo::default())?;
    case.gun = config.gun;
    case.fan = config.fan;
    case.limits = config.limits;
    case.save(&args.out)?;

    let [a, b, c] = spec.semi_axes_mm;
    println!("case            {}", case.id);
    println!("directory       {}", args.out.display());
    println!("grid            {:?} voxels at {:?} mm", spec.dims, spec.spacing_mm);
    println!("mesh triangles  {}", case.mesh.triangles().len());
    println!("mesh volume     {:.1} mm3", case.mesh.volume());
    println!("ellipsoid est.  {:.1} mm3", ellipsoid_estimate(2.0 * a, 2.0 * b, 2.0 * c));
    println!("sector volume   {:.1} mm3", case.partition.planes().total_volume / 12.0);
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SectorVolume {
    pub sector: SectorLabel,
    pub exact_mm3: f64,
    pub monte_carlo_mm3: f64,
    pub exact_rel_error: f64,
    pub monte_carlo_rel_error: f64,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PartitionReport {
    pub case_id: String,
    pub total_volume_mm3: f64,
    pub partition: PartitionFile,
    pub samples: u64,
    pub seed: u64,
    pub tolerance: f64,
    pub sectors: Vec<SectorVolume>,
    pub pass: bool,
}

/// Sector volumes from one jittered sample per cell of an `m³` grid over
/// the mesh bounding box.
fn monte_carlo_volumes(part: &SectorPartition, m: usize, seed: u64) -> [f64; 12] {
    let b = part.mesh().bounds();
    let ext = b.extent();
    let cell = ext / m as f64;
    let counts = (0..m)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add((k as u64) << 32));
            let mut c = [0u64; 12];
            for j in 0..m {
                for i in 0..m {
                    let jitter = Vec3::new(rng.random(), rng.random(), rng.random());
                    let p = b.min + (Vec3::new(i as f64, j as f64, k as f64) + jitter).component_mul(&cell);
                    if let Some(l) = part.classify(&p) {
                        c[l.index()] += 1;
                    }
                }
            }
            c
        })
        .reduce(
            || [0u64; 12],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let scale = ext.x * ext.y * ext.z / (m * m * m) as f64;
    counts.map(|c| c as f64 * scale)
}

pub fn partition(args: &PartitionArgs) -> Result<()> {
    let case = CaseBundle::load(&args.case)?;
    let part = &case.partition;
    let m = ((args.samples as f64).cbrt().round() as usize).max(1);
    let mc = monte_carlo_volumes(part, m, args.seed);
    let target = part.planes().total_volume / 12.0;
    let sectors: Vec<SectorVolume> = SectorLabel::all()
        .into_iter()
        .map(|l| {
            let exact = part.cell_volume(l);
            let mcv = mc[l.index()];
            SectorVolume {
                sector: l,
                exact_mm3: exact,
                monte_carlo_mm3: mcv,
                exact_rel_error: exact / target - 1.0,
                monte_carlo_rel_error: mcv / target - 1.0,
            }
        })
        .collect();
    let pass = sectors
        .iter()
        .all(|s| s.exact_rel_error.abs() <= args.tolerance && s.monte_carlo_rel_error.abs() <= args.tolerance);
    let report = PartitionReport {
        case_id: case.id.clone(),
        total_volume_mm3: part.planes().total_volume,
        partition: part.planes().to_file(),
        samples: (m * m * m) as u64,
        seed: args.seed,
        tolerance: args.tolerance,
        sectors,
        pass,
    };

    println!("case {}  volume {:.1} mm3  target per sector {:.1} mm3", case.id, report.total_volume_mm3, target);
    println!("{:<24} {:>10}", "cut", "offset");
    for c in &report.partition.cuts {
        println!("{:<24} {:>10.4}", c.name, c.offset);
    }
    println!();
    println!("{:<22} {:>10} {:>9} {:>12} {:>9}", "sector", "exact", "err %", "monte-carlo", "err %");
    for s in &report.sectors {
        println!(
            "{:<22} {:>10.2} {:>9.4} {:>12.2} {:>9.4}",
            s.sector.to_string(),
            s.exact_mm3,
            100.0 * s.exact_rel_error,
            s.monte_carlo_mm3,
            100.0 * s.monte_carlo_rel_error
        );
    }
    println!(
        "equal-volume check ({} samples, tolerance {}%): {}",
        report.samples,
        100.0 * args.tolerance,
        if pass { "PASS" } else { "FAIL" }
    );
    if let Some(out) = &args.out {
        write_report(out, &report)?;
    }
    if !pass {
        bail!("a sector deviates from V/12 by more than {}%", 100.0 * args.tolerance);
    }
    Ok(())
}

fn fmt_quartiles(q: &Quartiles) -> String {
    format!("{:.1} [{:.1}, {:.1}]", q.median, q.q1, q.q3)
}

fn fmt_correlation(c: &Option<Correlation>, degenerate: &Option<String>) -> String {
    match c {
        Some(c) => format!(
            "r={:.3} 95% CI ({:.3}, {:.3}) p={:.4} n={}",
            c.r, c.ci95.0, c.ci95.1, c.p, c.n
        ),
        None => format!("undefined ({})", degenerate.as_deref().unwrap_or("no data")),
    }
}

fn print_study(report: &StudyReport) {
    println!("{:<24} {:<8} {:>7} {:>9} {:>10}", "procedure", "cohort", "points", "score %", "time s");
    for p in &report.procedures {
        let cohort = p.cohort.map_or("-".to_string(), |c| format!("{c:?}").to_lowercase());
        println!(
            "{:<24} {:<8} {:>7} {:>9.1} {:>10.1}",
            p.procedure_id,
            cohort,
            p.points,
            p.percentage,
            p.duration_ms as f64 / 1000.0
        );
    }
    println!();
    match &report.construct {
        Some(c) => {
            println!("expert  n={:<3} median [IQR] {}", c.expert.n, fmt_quartiles(&c.expert.quartiles));
            println!("novice  n={:<3} median [IQR] {}", c.novice.n, fmt_quartiles(&c.novice.quartiles));
            let mw = &c.mann_whitney;
            println!(
                "Mann-Whitney U={} p={:.4} ({})",
                mw.u,
                mw.p,
                if mw.exact { "exact" } else { "normal approximation" }
            );
        }
        None => println!(
            "construct: not available ({})",
            report.construct_error.as_deref().unwrap_or("no data")
        ),
    }
    let r = &report.reliability;
    println!("split-halves reliability: {}", fmt_correlation(&r.correlation, &r.degenerate));
    if !report.excluded.is_empty() {
        println!("excluded: {}", report.excluded.len());
    }
}

pub fn simulate(args: &SimulateArgs, config: &SimConfig) -> Result<()> {
    let mut case = CaseBundle::load(&args.case)?;
    case.gun = config.gun;
    case.limits = config.limits;
    let store = SessionStore::new(&args.sessions_dir);
    if !store.procedure_paths()?.is_empty() {
        bail!("{} already holds procedure logs; use an empty directory", args.sessions_dir.display());
    }
    let run = run_cohort(&case, &config.expert, &config.novice, args.experts, args.novices, args.seed)?;
    persist_cohort(&run, &store)?;
    let registry = UserRegistry::load(&store.users_path())?;
    let records: Vec<ProcedureRecord> = run.users.iter().map(|u| u.record.clone()).collect();
    let report = study_report(&records, &registry, None);
    print_study(&report);
    if let Some(out) = &args.out {
        write_report(out, &report)?;
    }
    Ok(())
}

pub fn replay(args: &ReplayArgs, config: &SimConfig) -> Result<()> {
    let case = CaseBundle::load(&args.case)?;
    let record = ProcedureRecord::load(&args.log)?;
    if record.case_id != case.id {
        bail!("log is for case '{}' but '{}' was given", record.case_id, case.id);
    }
    let feedback: MappingFeedback = feedback_payload(&record, &case.partition, &case.mesh_file, &config.weights)?;

    println!("procedure {}  user {}  case {}", record.procedure_id, record.user_id, record.case_id);
    println!("{:<5} {:<22} {:<5} {:>6} {:>9}  reached", "core", "declared", "hit", "points", "dist mm");
    for c in &feedback.cores {
        let reached: Vec<String> = c.reached.iter().map(|r| format!("{} {:.1}", r.sector, r.mm)).collect();
        println!(
            "{:<5} {:<22} {:<5} {:>6} {:>9.2}  {}",
            c.index,
            c.declared_target.to_string(),
            if c.hit { "yes" } else { "no" },
            c.points,
            c.distance_to_target_mm,
            reached.join(", ")
        );
    }
    println!("points {}/48  duration {:.1} s  extended {:.2}", feedback.points, feedback.duration_ms as f64 / 1000.0, feedback.extended_score);
    println!("score {:.1}%", feedback.percentage);

    if let Some(out) = &args.out {
        fs::write(out, feedback.to_json()).with_context(|| format!("writing {}", out.display()))?;
    }
    match &record.feedback {
        Some(stored) if stored.to_json() != feedback.to_json() => {
            bail!("replayed feedback differs from the payload stored in the log")
        }
        Some(_) => println!("matches stored feedback: yes"),
        None => println!("log has no stored feedback (procedure not finished)"),
    }
    Ok(())
}

pub fn stats(args: &StatsArgs) -> Result<()> {
    let store = SessionStore::new(&args.sessions_dir);
    let registry = UserRegistry::load(&store.users_path())?;
    let procedures = store.load_procedures()?;
    if procedures.is_empty() {
        bail!("no procedure logs under {}", args.sessions_dir.display());
    }
    let report = study_report(&procedures, &registry, args.cohort);
    print_study(&report);
    if let Some(out) = &args.out {
        write_report(out, &report)?;
    }
    if let Some(path) = &args.csv {
        let mut w = csv::Writer::from_path(path).with_context(|| format!("writing {}", path.display()))?;
        w.write_record(["procedure_id", "user_id", "cohort", "case_id", "points", "percentage", "duration_ms"])?;
        for p in &report.procedures {
            let cohort = match p.cohort {
                Some(Cohort::Expert) => "expert",
                Some(Cohort::Novice) => "novice",
                Some(Cohort::Simulated) => "simulated",
                None => "",
            };
            w.write_record([
                p.procedure_id.clone(),
                p.user_id.clone(),
                cohort.to_string(),
                p.case_id.clone(),
                p.points.to_string(),
                format!("{:.1}", p.percentage),
                p.duration_ms.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(())
}

pub fn serve(args: &ServeArgs, config: &SimConfig) -> Result<()> {
    let service = ServiceConfig {
        cases_dir: args.cases_dir.clone(),
        sessions_dir: args.sessions_dir.clone(),
        weights: config.weights,
    };
    let addr = SocketAddr::new(args.host, args.port);
    biopsim_service::run_blocking(&service, addr, |bound| println!("listening on http://{bound}"))
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    Ok(())
}
