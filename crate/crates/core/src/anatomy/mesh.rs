//! Closed triangle mesh of the gland: volume, containment and plane clipping.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::Isometry3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    clipped_tet_volume, edge_side, segment_triangle_hit, tet_signed_volume, Aabb, Bvh, HalfSpace,
    Segment, Vec3,
};

/// On-disk mesh representation (`mesh.json`): flat coordinate and index lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshFile {
    /// `x0, y0, z0, x1, ...` in millimetres.
    pub vertices: Vec<f64>,
    /// Zero-based vertex indices, three per triangle.
    pub triangles: Vec<u32>,
}

/// Closed, outward-oriented triangle mesh of the prostate surface in the
/// anatomical frame (+x patient-left, +y anterior, +z toward the base).
#[derive(Debug, Clone)]
pub struct ProstateMesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[u32; 3]>,
    bvh: Bvh,
    volume: f64,
}

const PAR_CHUNK: usize = 1024;

/// Divergence-theorem volume of a closed oriented triangle soup.
///
/// Fails with the offending edge when the surface has a boundary or a
/// non-manifold edge, and with [`Error::InwardMesh`] when the orientation is
/// reversed.
pub fn mesh_volume(vertices: &[Vec3], triangles: &[[u32; 3]]) -> Result<f64> {
    check_closed(vertices.len(), triangles)?;
    let v = signed_volume(vertices, triangles);
    if v <= 0.0 {
        return Err(Error::InwardMesh(v));
    }
    Ok(v)
}

fn signed_volume(vertices: &[Vec3], triangles: &[[u32; 3]]) -> f64 {
    let origin = vertices.iter().fold(Vec3::zeros(), |acc, v| acc + v) / vertices.len().max(1) as f64;
    triangles
        .iter()
        .map(|t| {
            tet_signed_volume(
                &origin,
                &vertices[t[0] as usize],
                &vertices[t[1] as usize],
                &vertices[t[2] as usize],
            )
        })
        .sum()
}

fn check_closed(n_vertices: usize, triangles: &[[u32; 3]]) -> Result<()> {
    if triangles.is_empty() {
        return Err(Error::InvalidMesh("no triangles".into()));
    }
    let mut directed: HashMap<(u32, u32), usize> = HashMap::with_capacity(triangles.len() * 3);
    for t in triangles {
        for k in 0..3 {
            let (a, b) = (t[k], t[(k + 1) % 3]);
            if a as usize >= n_vertices || b as usize >= n_vertices {
                return Err(Error::InvalidMesh(format!("vertex index {} out of range", a.max(b))));
            }
            if a == b {
                return Err(Error::InvalidMesh(format!("degenerate triangle {t:?}")));
            }
            *directed.entry((a, b)).or_default() += 1;
        }
    }
    let mut edges: Vec<_> = directed.iter().collect();
    edges.sort();
    for (&(a, b), &count) in edges {
        let reverse = directed.get(&(b, a)).copied().unwrap_or(0);
        if count + reverse != 2 {
            let (lo, hi) = (a.min(b), a.max(b));
            return Err(Error::OpenMesh(lo, hi, count + reverse));
        }
        if count != 1 {
            return Err(Error::InvalidMesh(format!(
                "inconsistent orientation at edge ({a}, {b})"
            )));
        }
    }
    Ok(())
}

impl ProstateMesh {
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[u32; 3]>) -> Result<Self> {
        let volume = mesh_volume(&vertices, &triangles)?;
        let bvh = Bvh::build(&vertices, &triangles);
        Ok(Self {
            vertices,
            triangles,
            bvh,
            volume,
        })
    }

    /// Latitude/longitude tessellation of an axis-aligned ellipsoid with all
    /// vertices on the analytic surface. Produces `2·n_lon·(n_lat − 1)` triangles.
    pub fn ellipsoid(center: Vec3, semi_axes: Vec3, n_lat: usize, n_lon: usize) -> Result<Self> {
        if n_lat < 2 || n_lon < 3 {
            return Err(Error::InvalidMesh("ellipsoid needs n_lat >= 2 and n_lon >= 3".into()));
        }
        if semi_axes.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidMesh("semi-axes must be positive".into()));
        }
        let point = |theta: f64, phi: f64| {
            center
                + Vec3::new(
                    semi_axes.x * theta.sin() * phi.cos(),
                    semi_axes.y * theta.sin() * phi.sin(),
                    semi_axes.z * theta.cos(),
                )
        };
        let mut vertices = vec![center + Vec3::new(0.0, 0.0, semi_axes.z)];
        for i in 1..n_lat {
            let theta = PI * i as f64 / n_lat as f64;
            for j in 0..n_lon {
                vertices.push(point(theta, 2.0 * PI * j as f64 / n_lon as f64));
            }
        }
        vertices.push(center - Vec3::new(0.0, 0.0, semi_axes.z));
        let south = (vertices.len() - 1) as u32;
        let ring = |i: usize, j: usize| (1 + (i - 1) * n_lon + j % n_lon) as u32;

        let mut triangles = Vec::with_capacity(2 * n_lon * (n_lat - 1));
        for j in 0..n_lon {
            triangles.push([0, ring(1, j), ring(1, j + 1)]);
        }
        for i in 1..n_lat - 1 {
            for j in 0..n_lon {
                triangles.push([ring(i, j), ring(i + 1, j), ring(i + 1, j + 1)]);
                triangles.push([ring(i, j), ring(i + 1, j + 1), ring(i, j + 1)]);
            }
        }
        for j in 0..n_lon {
            triangles.push([south, ring(n_lat - 1, j + 1), ring(n_lat - 1, j)]);
        }
        Self::new(vertices, triangles)
    }

    pub fn from_file(file: &MeshFile) -> Result<Self> {
        if !file.vertices.len().is_multiple_of(3) || !file.triangles.len().is_multiple_of(3) {
            return Err(Error::InvalidMesh("flat lists must have a multiple of 3 entries".into()));
        }
        let vertices = file
            .vertices
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect();
        let triangles = file.triangles.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        Self::new(vertices, triangles)
    }

    pub fn to_file(&self) -> MeshFile {
        MeshFile {
            vertices: self.vertices.iter().flat_map(|v| [v.x, v.y, v.z]).collect(),
            triangles: self.triangles.iter().flatten().copied().collect(),
        }
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, i: usize) -> [Vec3; 3] {
        let t = self.triangles[i];
        [
            self.vertices[t[0] as usize],
            self.vertices[t[1] as usize],
            self.vertices[t[2] as usize],
        ]
    }

    pub fn volume(&self) -> f64 {
        self.volume
    }

    pub fn bounds(&self) -> Aabb {
        self.bvh.bounds()
    }

    pub(crate) fn bvh(&self) -> &Bvh {
        &self.bvh
    }

    /// Centre of mass of the enclosed solid.
    pub fn centroid(&self) -> Vec3 {
        let o = self.bounds().center();
        let mut acc = Vec3::zeros();
        for i in 0..self.triangles.len() {
            let [a, b, c] = self.triangle(i);
            acc += (o + a + b + c) * (tet_signed_volume(&o, &a, &b, &c) / 4.0);
        }
        acc / self.volume
    }

    /// Applies a rigid transform to every vertex.
    pub fn transformed(&self, iso: &Isometry3<f64>) -> Self {
        let vertices: Vec<Vec3> = self
            .vertices
            .iter()
            .map(|v| iso.transform_point(&(*v).into()).coords)
            .collect();
        let bvh = Bvh::build(&vertices, &self.triangles);
        let volume = signed_volume(&vertices, &self.triangles);
        Self {
            vertices,
            triangles: self.triangles.clone(),
            bvh,
            volume,
        }
    }

    /// Membership by the winding number of an upward (+z) ray.
    ///
    /// Edge and vertex hits are resolved by a consistent symbolic perturbation
    /// of the query point, so rays through shared edges are counted exactly
    /// once. Points lying exactly on the surface may be reported either way.
    pub fn contains(&self, p: &Vec3) -> bool {
        let bounds = self.bounds();
        if (0..3).any(|k| p[k] < bounds.min[k] || p[k] > bounds.max[k]) {
            return false;
        }
        let q = [p.x, p.y];
        let mut winding = 0i32;
        self.bvh.traverse(
            |b| b.min.x <= p.x && p.x <= b.max.x && b.min.y <= p.y && p.y <= b.max.y && b.max.z >= p.z,
            |t| {
                let [a, b, c] = self.triangle(t);
                let (a2, b2, c2) = ([a.x, a.y], [b.x, b.y], [c.x, c.y]);
                let s = edge_side(a2, b2, q);
                if s == 0 || edge_side(b2, c2, q) != s || edge_side(c2, a2, q) != s {
                    return;
                }
                let n = (b - a).cross(&(c - a));
                if n.z == 0.0 {
                    return;
                }
                // Height of the triangle's plane above the query column.
                let z = a.z - (n.x * (p.x - a.x) + n.y * (p.y - a.y)) / n.z;
                if z > p.z {
                    winding += s as i32;
                }
            },
        );
        winding != 0
    }

    /// Exact volume of the mesh interior intersected with all `planes`.
    ///
    /// Each surface triangle spans a signed tetrahedron with a fixed apex;
    /// the tetrahedra are clipped against the half-spaces and their signed
    /// volumes summed.
    pub fn clipped_volume(&self, planes: &[HalfSpace]) -> f64 {
        let apex = self.bounds().center();
        let partial: Vec<f64> = (0..self.triangles.len())
            .collect::<Vec<_>>()
            .par_chunks(PAR_CHUNK)
            .map(|chunk| {
                chunk
                    .iter()
                    .map(|&i| {
                        let [a, b, c] = self.triangle(i);
                        let signed = tet_signed_volume(&apex, &a, &b, &c);
                        if signed == 0.0 {
                            return 0.0;
                        }
                        signed.signum() * clipped_tet_volume([apex, a, b, c], planes)
                    })
                    .sum::<f64>()
            })
            .collect();
        partial.iter().sum()
    }

    /// Segment parameters in `[0, 1]` where the segment crosses the surface,
    /// sorted ascending.
    pub fn segment_crossings(&self, seg: &Segment) -> Vec<f64> {
        let sb = seg.bounds();
        let mut hits = Vec::new();
        self.bvh.traverse(
            |b| b.overlaps(&sb),
            |t| {
                let [a, b, c] = self.triangle(t);
                if let Some(h) = segment_triangle_hit(seg, &a, &b, &c) {
                    hits.push(h);
                }
            },
        );
        hits.sort_by(f64::total_cmp);
        hits
    }
}

/// Volume of `{ p : normal · p <= offset } ∩ interior`.
pub fn clipped_volume(mesh: &ProstateMesh, normal: Vec3, offset: f64) -> f64 {
    mesh.clipped_volume(&[HalfSpace::new(normal, offset)])
}

pub fn point_in_mesh(mesh: &ProstateMesh, p: &Vec3) -> bool {
    mesh.contains(p)
}

/// Prolate-ellipsoid volume estimate `π/6 · d1·d2·d3` from three diameters.
pub fn ellipsoid_estimate(d1: f64, d2: f64, d3: f64) -> f64 {
    PI / 6.0 * d1 * d2 * d3
}
