//! Twelve-sector equal-volume partition of the gland.
//!
//! Cuts are planes perpendicular to two anatomical axes: the lateral axis
//! (toward patient-left) and the axial axis (toward the base). The sagittal
//! cut splits Right/Left; per side, two axial cuts split Apex/Mid/Base; per
//! side and level, one lateral cut splits Medial/Lateral. Every cut is placed
//! by bisection on the exact clipped volume.
//!
//! Points exactly on a cut go to the lesser side along the cut axis, except
//! for the medial/lateral cut where they go to Medial. Concretely the tie
//! order is Right, Apex (and Mid at the mid/base cut), Medial.

use std::cell::Cell;
use std::sync::{Arc, OnceLock};

use nalgebra::Isometry3;
use serde::{Deserialize, Serialize};

use super::mesh::ProstateMesh;
use super::sector::{Level, SectorLabel, Side, Zone};
use crate::error::{Error, Result};
use crate::geometry::{clip_polygon, segment_triangle_distance, Aabb, HalfSpace, Segment, Vec3};

/// Default relative volume tolerance of every bisection.
pub const DEFAULT_BISECTION_TOLERANCE: f64 = 1e-5;
/// Hard cap on bisection steps before the mesh is declared degenerate.
pub const MAX_BISECTION_STEPS: usize = 200;
/// Grid spacing (mm) used to sample cut faces for distance queries.
const CAP_SAMPLE_SPACING: f64 = 0.5;

/// Cut-plane positions of a partition. Offsets are coordinates along the
/// unit `lateral_axis` / `axial_axis`.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorPlanes {
    pub lateral_axis: Vec3,
    pub axial_axis: Vec3,
    pub sagittal: f64,
    /// Per side (Right, Left): `[apex|mid, mid|base]`.
    pub axial: [[f64; 2]; 2],
    /// Per side (Right, Left) and level (Base, Mid, Apex): medial|lateral cut.
    pub medial: [[f64; 3]; 2],
    pub total_volume: f64,
}

/// A cut in the serialized form: `{ p : normal · p = offset }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cut {
    pub name: String,
    pub normal: [f64; 3],
    pub offset: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionFile {
    pub total_volume_mm3: f64,
    pub cuts: Vec<Cut>,
}

fn level_name(l: Level) -> &'static str {
    match l {
        Level::Base => "base",
        Level::Mid => "mid",
        Level::Apex => "apex",
    }
}

fn side_name(s: Side) -> &'static str {
    match s {
        Side::Right => "right",
        Side::Left => "left",
    }
}

impl SectorPlanes {
    pub fn to_file(&self) -> PartitionFile {
        let lat = [self.lateral_axis.x, self.lateral_axis.y, self.lateral_axis.z];
        let ax = [self.axial_axis.x, self.axial_axis.y, self.axial_axis.z];
        let mut cuts = vec![Cut {
            name: "sagittal".into(),
            normal: lat,
            offset: self.sagittal,
        }];
        for side in Side::ALL {
            let s = side as usize;
            cuts.push(Cut {
                name: format!("{}-apex-mid", side_name(side)),
                normal: ax,
                offset: self.axial[s][0],
            });
            cuts.push(Cut {
                name: format!("{}-mid-base", side_name(side)),
                normal: ax,
                offset: self.axial[s][1],
            });
            for level in Level::ALL {
                cuts.push(Cut {
                    name: format!("{}-{}-medial-lateral", side_name(side), level_name(level)),
                    normal: lat,
                    offset: self.medial[s][level as usize],
                });
            }
        }
        PartitionFile {
            total_volume_mm3: self.total_volume,
            cuts,
        }
    }

    pub fn from_file(file: &PartitionFile) -> Result<Self> {
        let find = |name: &str| -> Result<&Cut> {
            file.cuts
                .iter()
                .find(|c| c.name == name)
                .ok_or_else(|| Error::InvalidCase(format!("partition is missing cut '{name}'")))
        };
        let sag = find("sagittal")?;
        let lateral_axis = Vec3::from(sag.normal);
        let first_axial = find("right-apex-mid")?;
        let axial_axis = Vec3::from(first_axial.normal);
        let mut axial = [[0.0; 2]; 2];
        let mut medial = [[0.0; 3]; 2];
        for side in Side::ALL {
            let s = side as usize;
            axial[s][0] = find(&format!("{}-apex-mid", side_name(side)))?.offset;
            axial[s][1] = find(&format!("{}-mid-base", side_name(side)))?.offset;
            for level in Level::ALL {
                medial[s][level as usize] =
                    find(&format!("{}-{}-medial-lateral", side_name(side), level_name(level)))?.offset;
            }
        }
        let planes = Self {
            lateral_axis,
            axial_axis,
            sagittal: sag.offset,
            axial,
            medial,
            total_volume: file.total_volume_mm3,
        };
        planes.validate()?;
        Ok(planes)
    }

    fn validate(&self) -> Result<()> {
        let unit = |v: &Vec3| (v.norm() - 1.0).abs() < 1e-9;
        if !unit(&self.lateral_axis) || !unit(&self.axial_axis) {
            return Err(Error::InvalidCase("partition axes must be unit vectors".into()));
        }
        if self.lateral_axis.dot(&self.axial_axis).abs() > 1e-9 {
            return Err(Error::InvalidCase("partition axes must be orthogonal".into()));
        }
        for s in 0..2 {
            if !(self.axial[s][0] <= self.axial[s][1]) {
                return Err(Error::InvalidCase("axial cuts out of order".into()));
            }
        }
        Ok(())
    }

    /// Lower/upper bounds of a cell along the lateral and axial axes.
    /// `None` means unbounded.
    fn cell_bounds(&self, label: SectorLabel) -> [(Option<f64>, Option<f64>); 2] {
        let s = label.side as usize;
        let m = self.medial[s][label.level as usize];
        let lateral = match (label.side, label.zone) {
            (Side::Right, Zone::Medial) => (Some(m), Some(self.sagittal)),
            (Side::Right, Zone::Lateral) => (None, Some(m)),
            (Side::Left, Zone::Medial) => (Some(self.sagittal), Some(m)),
            (Side::Left, Zone::Lateral) => (Some(m), None),
        };
        let [z1, z2] = self.axial[s];
        let axial = match label.level {
            Level::Apex => (None, Some(z1)),
            Level::Mid => (Some(z1), Some(z2)),
            Level::Base => (Some(z2), None),
        };
        [lateral, axial]
    }

    /// The cell as an intersection of half-spaces (at most four).
    pub fn cell_halfspaces(&self, label: SectorLabel) -> Vec<HalfSpace> {
        let axes = [self.lateral_axis, self.axial_axis];
        let mut out = Vec::with_capacity(4);
        for (axis, (lo, hi)) in axes.iter().zip(self.cell_bounds(label)) {
            if let Some(hi) = hi {
                out.push(HalfSpace::new(*axis, hi));
            }
            if let Some(lo) = lo {
                out.push(HalfSpace::new(-axis, -lo));
            }
        }
        out
    }

    /// Sector of a point already known to be inside the gland.
    pub fn label_of(&self, p: &Vec3) -> SectorLabel {
        let lat = self.lateral_axis.dot(p);
        let ax = self.axial_axis.dot(p);
        let side = if lat <= self.sagittal { Side::Right } else { Side::Left };
        let s = side as usize;
        let level = if ax <= self.axial[s][0] {
            Level::Apex
        } else if ax <= self.axial[s][1] {
            Level::Mid
        } else {
            Level::Base
        };
        let m = self.medial[s][level as usize];
        let zone = match side {
            Side::Right if lat >= m => Zone::Medial,
            Side::Left if lat <= m => Zone::Medial,
            _ => Zone::Lateral,
        };
        SectorLabel::new(side, level, zone)
    }

    /// Offsets along each axis where some cut lies.
    fn cut_offsets(&self) -> (Vec<f64>, Vec<f64>) {
        let mut lat = vec![self.sagittal];
        lat.extend(self.medial.iter().flatten());
        let ax = self.axial.iter().flatten().copied().collect();
        (lat, ax)
    }

    /// Same partition after a rigid motion of the anatomy.
    pub fn transformed(&self, iso: &Isometry3<f64>) -> Self {
        let lat = iso.rotation * self.lateral_axis;
        let ax = iso.rotation * self.axial_axis;
        let t = iso.translation.vector;
        let (dl, da) = (lat.dot(&t), ax.dot(&t));
        Self {
            lateral_axis: lat,
            axial_axis: ax,
            sagittal: self.sagittal + dl,
            axial: self.axial.map(|a| a.map(|z| z + da)),
            medial: self.medial.map(|a| a.map(|m| m + dl)),
            total_volume: self.total_volume,
        }
    }
}

/// Per-sector length of a segment, plus the part outside the gland.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SectorLengths {
    pub per_sector: [f64; 12],
    pub outside: f64,
}

impl SectorLengths {
    pub fn get(&self, label: SectorLabel) -> f64 {
        self.per_sector[label.index()]
    }

    pub fn inside(&self) -> f64 {
        self.per_sector.iter().sum()
    }

    pub fn total(&self) -> f64 {
        self.inside() + self.outside
    }

    /// Sectors with positive length, in label order.
    pub fn reached(&self) -> Vec<(SectorLabel, f64)> {
        SectorLabel::all()
            .into_iter()
            .filter_map(|l| {
                let v = self.get(l);
                (v > 0.0).then_some((l, v))
            })
            .collect()
    }
}

/// A gland mesh together with its twelve-sector partition.
#[derive(Debug)]
pub struct SectorPartition {
    mesh: Arc<ProstateMesh>,
    planes: SectorPlanes,
    cap_samples: [OnceLock<Vec<Vec3>>; 12],
}

impl Clone for SectorPartition {
    fn clone(&self) -> Self {
        Self::from_planes(self.mesh.clone(), self.planes.clone())
    }
}

/// Solves `volume(t) = target` for a cut `axis · p <= t` added to `fixed`.
fn bisect_cut(
    mesh: &ProstateMesh,
    fixed: &[HalfSpace],
    axis: Vec3,
    target: f64,
    tolerance: f64,
    what: &str,
) -> Result<f64> {
    let (mut lo, mut hi) = mesh
        .vertices()
        .iter()
        .map(|v| axis.dot(v))
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let mut planes = fixed.to_vec();
    planes.push(HalfSpace::new(axis, 0.0));
    for _ in 0..MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        planes.last_mut().unwrap().offset = mid;
        let v = mesh.clipped_volume(&planes);
        if (v - target).abs() <= tolerance * target {
            return Ok(mid);
        }
        if v < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence {
        what: what.to_string(),
        steps: MAX_BISECTION_STEPS,
    })
}

/// Equal-volume partition in the default anatomical frame (+x lateral, +z axial).
pub fn partition_equal_sectors(mesh: Arc<ProstateMesh>) -> Result<SectorPartition> {
    SectorPartition::compute(mesh, Vec3::x(), Vec3::z(), DEFAULT_BISECTION_TOLERANCE)
}

impl SectorPartition {
    pub fn compute(
        mesh: Arc<ProstateMesh>,
        lateral_axis: Vec3,
        axial_axis: Vec3,
        tolerance: f64,
    ) -> Result<Self> {
        let lat = lateral_axis.normalize();
        let ax = axial_axis.normalize();
        if lat.dot(&ax).abs() > 1e-9 {
            return Err(Error::InvalidMesh("partition axes must be orthogonal".into()));
        }
        let total = mesh.volume();
        if !(total > 0.0) {
            return Err(Error::InvalidMesh("mesh has no volume".into()));
        }
        let sagittal = bisect_cut(&mesh, &[], lat, total / 2.0, tolerance, "sagittal cut")?;
        let sides = [
            vec![HalfSpace::new(lat, sagittal)],
            vec![HalfSpace::new(-lat, -sagittal)],
        ];
        let mut axial = [[0.0; 2]; 2];
        let mut medial = [[0.0; 3]; 2];
        for side in Side::ALL {
            let s = side as usize;
            let side_volume = mesh.clipped_volume(&sides[s]);
            for k in 0..2 {
                axial[s][k] = bisect_cut(
                    &mesh,
                    &sides[s],
                    ax,
                    side_volume * (k + 1) as f64 / 3.0,
                    tolerance,
                    &format!("{} axial cut {}", side_name(side), k + 1),
                )?;
            }
            for level in Level::ALL {
                let mut cell = sides[s].clone();
                match level {
                    Level::Apex => cell.push(HalfSpace::new(ax, axial[s][0])),
                    Level::Mid => {
                        cell.push(HalfSpace::new(-ax, -axial[s][0]));
                        cell.push(HalfSpace::new(ax, axial[s][1]));
                    }
                    Level::Base => cell.push(HalfSpace::new(-ax, -axial[s][1])),
                }
                // Right: volume(lat <= m) is the lateral half; Left: the medial half.
                let level_volume = mesh.clipped_volume(&cell);
                medial[s][level as usize] = bisect_cut(
                    &mesh,
                    &cell,
                    lat,
                    level_volume / 2.0,
                    tolerance,
                    &format!("{} {} medial cut", side_name(side), level_name(level)),
                )?;
            }
        }
        let planes = SectorPlanes {
            lateral_axis: lat,
            axial_axis: ax,
            sagittal,
            axial,
            medial,
            total_volume: total,
        };
        Ok(Self::from_planes(mesh, planes))
    }

    pub fn from_planes(mesh: Arc<ProstateMesh>, planes: SectorPlanes) -> Self {
        Self {
            mesh,
            planes,
            cap_samples: Default::default(),
        }
    }

    pub fn mesh(&self) -> &Arc<ProstateMesh> {
        &self.mesh
    }

    pub fn planes(&self) -> &SectorPlanes {
        &self.planes
    }

    /// Partition of the rigidly moved anatomy.
    pub fn transformed(&self, iso: &Isometry3<f64>) -> Self {
        Self::from_planes(Arc::new(self.mesh.transformed(iso)), self.planes.transformed(iso))
    }

    /// `None` when the point is outside the gland.
    pub fn classify(&self, p: &Vec3) -> Option<SectorLabel> {
        self.mesh.contains(p).then(|| self.planes.label_of(p))
    }

    /// Exact volume of one sector.
    pub fn cell_volume(&self, label: SectorLabel) -> f64 {
        self.mesh.clipped_volume(&self.planes.cell_halfspaces(label))
    }

    /// Centre of mass of one sector.
    pub fn cell_centroid(&self, label: SectorLabel) -> Vec3 {
        use crate::geometry::{clipped_tet_moments, tet_signed_volume};
        let planes = self.planes.cell_halfspaces(label);
        let apex = self.mesh.bounds().center();
        let (mut vol, mut moment) = (0.0, Vec3::zeros());
        for i in 0..self.mesh.triangles().len() {
            let [a, b, c] = self.mesh.triangle(i);
            let sign = tet_signed_volume(&apex, &a, &b, &c).signum();
            let (v, m) = clipped_tet_moments([apex, a, b, c], &planes);
            vol += sign * v;
            moment += m * sign;
        }
        moment / vol
    }

    /// Splits the segment at every surface crossing and cut plane and sums
    /// sub-segment lengths by the sector of their midpoints.
    pub fn segment_lengths(&self, seg: &Segment) -> SectorLengths {
        let mut out = SectorLengths::default();
        let len = seg.length();
        if len == 0.0 {
            return out;
        }
        let mut ts = vec![0.0, 1.0];
        ts.extend(self.mesh.segment_crossings(seg));
        let (lat_cuts, ax_cuts) = self.planes.cut_offsets();
        let d = seg.p1 - seg.p0;
        for (axis, cuts) in [(self.planes.lateral_axis, lat_cuts), (self.planes.axial_axis, ax_cuts)] {
            let (a0, da) = (axis.dot(&seg.p0), axis.dot(&d));
            if da != 0.0 {
                ts.extend(cuts.iter().map(|c| (c - a0) / da).filter(|t| *t > 0.0 && *t < 1.0));
            }
        }
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        for w in ts.windows(2) {
            let piece = (w[1] - w[0]) * len;
            if piece <= 0.0 {
                continue;
            }
            match self.classify(&seg.at(0.5 * (w[0] + w[1]))) {
                Some(label) => out.per_sector[label.index()] += piece,
                None => out.outside += piece,
            }
        }
        out
    }

    /// Distance from the segment to a sector (0 when it enters the sector).
    ///
    /// The gland-surface part of the sector boundary is handled exactly; the
    /// flat cut faces are sampled on a 0.5 mm grid, so results carry at most
    /// ~0.35 mm of discretization error.
    pub fn distance_to_sector(&self, seg: &Segment, label: SectorLabel) -> f64 {
        if self.segment_lengths(seg).get(label) > 0.0 {
            return 0.0;
        }
        let cell = self.planes.cell_halfspaces(label);
        let sb = seg.bounds();
        let best = Cell::new(f64::INFINITY);
        for p in self.cap_samples(label) {
            let d = crate::geometry::point_segment_distance(p, seg);
            if d < best.get() {
                best.set(d);
            }
        }
        self.mesh.bvh().traverse(
            |b| b.distance_to(&sb) < best.get() && !box_outside_any(b, &cell),
            |t| {
                let mut poly = self.mesh.triangle(t).to_vec();
                for h in &cell {
                    poly = clip_polygon(&poly, h);
                    if poly.len() < 3 {
                        return;
                    }
                }
                for k in 1..poly.len() - 1 {
                    let d = segment_triangle_distance(seg, &poly[0], &poly[k], &poly[k + 1]);
                    if d < best.get() {
                        best.set(d);
                    }
                }
            },
        );
        best.get()
    }

    /// Grid samples on the flat (cut-plane) faces of a sector.
    fn cap_samples(&self, label: SectorLabel) -> &[Vec3] {
        self.cap_samples[label.index()].get_or_init(|| {
            let cell = self.planes.cell_halfspaces(label);
            let lat = self.planes.lateral_axis;
            let ax = self.planes.axial_axis;
            let third = ax.cross(&lat);
            let mut samples = Vec::new();
            for (k, face) in cell.iter().enumerate() {
                let n = face.normal;
                let (e1, e2) = if n.dot(&lat).abs() > 0.5 { (ax, third) } else { (lat, third) };
                let range = |e: &Vec3| {
                    self.mesh
                        .vertices()
                        .iter()
                        .map(|v| e.dot(v))
                        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)))
                };
                let (a0, a1) = range(&e1);
                let (b0, b1) = range(&e2);
                let origin = n * face.offset;
                let na = ((a1 - a0) / CAP_SAMPLE_SPACING).ceil() as usize;
                let nb = ((b1 - b0) / CAP_SAMPLE_SPACING).ceil() as usize;
                for i in 0..=na {
                    for j in 0..=nb {
                        let p = origin
                            + e1 * (a0 + i as f64 * CAP_SAMPLE_SPACING)
                            + e2 * (b0 + j as f64 * CAP_SAMPLE_SPACING);
                        let in_cell = cell
                            .iter()
                            .enumerate()
                            .all(|(m, h)| m == k || h.eval(&p) <= 0.0);
                        if in_cell && self.mesh.contains(&p) {
                            samples.push(p);
                        }
                    }
                }
            }
            samples
        })
    }
}

fn box_outside_any(b: &Aabb, planes: &[HalfSpace]) -> bool {
    planes.iter().any(|h| {
        let min_dot: f64 = (0..3)
            .map(|k| h.normal[k] * if h.normal[k] > 0.0 { b.min[k] } else { b.max[k] })
            .sum();
        min_dot > h.offset
    })
}

pub fn classify_point(partition: &SectorPartition, p: &Vec3) -> Option<SectorLabel> {
    partition.classify(p)
}

pub fn segment_lengths_by_sector(partition: &SectorPartition, seg: &Segment) -> SectorLengths {
    partition.segment_lengths(seg)
}

pub fn distance_segment_to_sector(partition: &SectorPartition, seg: &Segment, label: SectorLabel) -> f64 {
    partition.distance_to_sector(seg, label)
}
