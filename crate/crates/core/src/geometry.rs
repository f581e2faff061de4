//! Low-level geometric primitives shared by the anatomy, probe and scoring code.
//!
//! Everything here works in millimetres on `f64`. Points and vectors are both
//! represented as [`Vec3`].

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// A closed half-space `{ p : normal · p <= offset }`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HalfSpace {
    pub normal: Vec3,
    pub offset: f64,
}

impl HalfSpace {
    pub fn new(normal: Vec3, offset: f64) -> Self {
        Self { normal, offset }
    }

    /// Signed distance-like value; `<= 0` means inside.
    #[inline]
    pub fn eval(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.offset
    }

    pub fn flipped(&self) -> Self {
        Self::new(-self.normal, -self.offset)
    }
}

/// A directed line segment `p0 -> p1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub p0: Vec3,
    pub p1: Vec3,
}

impl Segment {
    pub fn new(p0: Vec3, p1: Vec3) -> Self {
        Self { p0, p1 }
    }

    pub fn length(&self) -> f64 {
        (self.p1 - self.p0).norm()
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.p0 + (self.p1 - self.p0) * t
    }

    pub fn midpoint(&self) -> Vec3 {
        (self.p0 + self.p1) * 0.5
    }

    pub fn bounds(&self) -> Aabb {
        let mut b = Aabb::empty();
        b.grow(&self.p0);
        b.grow(&self.p1);
        b
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec3,
    pub max: Vec3,
}

impl Aabb {
    pub fn empty() -> Self {
        Self {
            min: Vec3::repeat(f64::INFINITY),
            max: Vec3::repeat(f64::NEG_INFINITY),
        }
    }

    pub fn grow(&mut self, p: &Vec3) {
        self.min = self.min.inf(p);
        self.max = self.max.sup(p);
    }

    pub fn merge(&self, other: &Aabb) -> Aabb {
        Aabb {
            min: self.min.inf(&other.min),
            max: self.max.sup(&other.max),
        }
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn extent(&self) -> Vec3 {
        self.max - self.min
    }

    pub fn overlaps(&self, other: &Aabb) -> bool {
        (0..3).all(|k| self.min[k] <= other.max[k] && other.min[k] <= self.max[k])
    }

    /// Euclidean gap between two boxes (0 when they overlap).
    pub fn distance_to(&self, other: &Aabb) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let gap = (other.min[k] - self.max[k]).max(self.min[k] - other.max[k]);
            if gap > 0.0 {
                d2 += gap * gap;
            }
        }
        d2.sqrt()
    }

    pub fn inflated(&self, margin: f64) -> Aabb {
        Aabb {
            min: self.min - Vec3::repeat(margin),
            max: self.max + Vec3::repeat(margin),
        }
    }
}

#[derive(Debug, Clone)]
struct BvhNode {
    bounds: Aabb,
    // Leaf: first..first+count into `order`. Interior: count == 0, children at `first` and `first + 1`.
    first: u32,
    count: u32,
}

/// Bounding-volume hierarchy over a set of triangles.
#[derive(Debug, Clone)]
pub struct Bvh {
    nodes: Vec<BvhNode>,
    order: Vec<u32>,
}

const BVH_LEAF_SIZE: usize = 4;

impl Bvh {
    pub fn build(vertices: &[Vec3], triangles: &[[u32; 3]]) -> Self {
        let boxes: Vec<Aabb> = triangles
            .iter()
            .map(|t| {
                let mut b = Aabb::empty();
                for &i in t {
                    b.grow(&vertices[i as usize]);
                }
                b
            })
            .collect();
        let centers: Vec<Vec3> = boxes.iter().map(Aabb::center).collect();
        let mut order: Vec<u32> = (0..triangles.len() as u32).collect();
        let mut nodes = vec![BvhNode {
            bounds: Aabb::empty(),
            first: 0,
            count: 0,
        }];
        if !triangles.is_empty() {
            Self::split(&mut nodes, 0, &mut order, 0, &boxes, &centers);
        }
        Self { nodes, order }
    }

    fn split(
        nodes: &mut Vec<BvhNode>,
        node: usize,
        order: &mut [u32],
        offset: usize,
        boxes: &[Aabb],
        centers: &[Vec3],
    ) {
        let mut bounds = Aabb::empty();
        let mut cbounds = Aabb::empty();
        for &i in order.iter() {
            bounds = bounds.merge(&boxes[i as usize]);
            cbounds.grow(&centers[i as usize]);
        }
        nodes[node].bounds = bounds;
        if order.len() <= BVH_LEAF_SIZE {
            nodes[node].first = offset as u32;
            nodes[node].count = order.len() as u32;
            return;
        }
        let ext = cbounds.extent();
        let axis = if ext.x >= ext.y && ext.x >= ext.z {
            0
        } else if ext.y >= ext.z {
            1
        } else {
            2
        };
        let mid = order.len() / 2;
        order.select_nth_unstable_by(mid, |a, b| {
            centers[*a as usize][axis].total_cmp(&centers[*b as usize][axis])
        });
        let left = nodes.len();
        nodes.push(BvhNode {
            bounds: Aabb::empty(),
            first: 0,
            count: 0,
        });
        nodes.push(BvhNode {
            bounds: Aabb::empty(),
            first: 0,
            count: 0,
        });
        nodes[node].first = left as u32;
        nodes[node].count = 0;
        let (lo, hi) = order.split_at_mut(mid);
        Self::split(nodes, left, lo, offset, boxes, centers);
        Self::split(nodes, left + 1, hi, offset + mid, boxes, centers);
    }

    pub fn bounds(&self) -> Aabb {
        self.nodes[0].bounds
    }

    /// Calls `visit` for every triangle in a leaf whose box passes `accept`.
    /// `accept` is re-evaluated for every node, so it may read state that
    /// `visit` tightens (branch and bound).
    pub fn traverse(&self, mut accept: impl FnMut(&Aabb) -> bool, mut visit: impl FnMut(usize)) {
        if self.order.is_empty() {
            return;
        }
        let mut stack = vec![0usize];
        while let Some(n) = stack.pop() {
            let node = &self.nodes[n];
            if !accept(&node.bounds) {
                continue;
            }
            if node.count > 0 {
                let start = node.first as usize;
                for &t in &self.order[start..start + node.count as usize] {
                    visit(t as usize);
                }
            } else {
                stack.push(node.first as usize + 1);
                stack.push(node.first as usize);
            }
        }
    }
}

/// Signed volume of the tetrahedron `(a, b, c, d)`.
#[inline]
pub fn tet_signed_volume(a: &Vec3, b: &Vec3, c: &Vec3, d: &Vec3) -> f64 {
    (b - a).dot(&(c - a).cross(&(d - a))) / 6.0
}

/// Unsigned volume of `tet ∩ planes`.
pub fn clipped_tet_volume(tet: [Vec3; 4], planes: &[HalfSpace]) -> f64 {
    clipped_tet_moments(tet, planes).0
}

/// Unsigned volume and first moment (volume × centroid) of `tet ∩ planes`.
///
/// The clipped region is decomposed recursively into tetrahedra: one plane
/// at a time, a tetrahedron splits into a smaller tetrahedron (one vertex
/// kept) or a triangular prism of three tetrahedra (two or three kept).
pub fn clipped_tet_moments(tet: [Vec3; 4], planes: &[HalfSpace]) -> (f64, Vec3) {
    let Some((plane, rest)) = planes.split_first() else {
        let v = tet_signed_volume(&tet[0], &tet[1], &tet[2], &tet[3]).abs();
        return (v, (tet[0] + tet[1] + tet[2] + tet[3]) * (v / 4.0));
    };
    let s: [f64; 4] = std::array::from_fn(|i| plane.eval(&tet[i]));
    let mut inside = [0usize; 4];
    let mut outside = [0usize; 4];
    let (mut ni, mut no) = (0, 0);
    for (i, &si) in s.iter().enumerate() {
        if si <= 0.0 {
            inside[ni] = i;
            ni += 1;
        } else {
            outside[no] = i;
            no += 1;
        }
    }
    let cut = |i: usize, o: usize| -> Vec3 {
        let t = s[i] / (s[i] - s[o]);
        tet[i] + (tet[o] - tet[i]) * t
    };
    match ni {
        0 => (0.0, Vec3::zeros()),
        4 => clipped_tet_moments(tet, rest),
        1 => {
            let a = inside[0];
            let [b, c, d] = [outside[0], outside[1], outside[2]];
            clipped_tet_moments([tet[a], cut(a, b), cut(a, c), cut(a, d)], rest)
        }
        3 => {
            let [a, b, c] = [inside[0], inside[1], inside[2]];
            let d = outside[0];
            prism_moments(
                [tet[a], tet[b], tet[c]],
                [cut(a, d), cut(b, d), cut(c, d)],
                rest,
            )
        }
        _ => {
            let [a, b] = [inside[0], inside[1]];
            let [c, d] = [outside[0], outside[1]];
            prism_moments(
                [tet[a], cut(a, c), cut(a, d)],
                [tet[b], cut(b, c), cut(b, d)],
                rest,
            )
        }
    }
}

fn prism_moments(bottom: [Vec3; 3], top: [Vec3; 3], planes: &[HalfSpace]) -> (f64, Vec3) {
    let [a, b, c] = bottom;
    let [a2, b2, c2] = top;
    let parts = [
        clipped_tet_moments([a, b, c, c2], planes),
        clipped_tet_moments([a, b, c2, b2], planes),
        clipped_tet_moments([a, b2, c2, a2], planes),
    ];
    parts
        .iter()
        .fold((0.0, Vec3::zeros()), |(v, m), (pv, pm)| (v + pv, m + pm))
}

/// Clips a convex planar polygon against a half-space (Sutherland–Hodgman).
pub fn clip_polygon(poly: &[Vec3], plane: &HalfSpace) -> Vec<Vec3> {
    let mut out = Vec::with_capacity(poly.len() + 2);
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        let (sa, sb) = (plane.eval(&a), plane.eval(&b));
        if sa <= 0.0 {
            out.push(a);
        }
        if (sa <= 0.0) != (sb <= 0.0) {
            let t = sa / (sa - sb);
            out.push(a + (b - a) * t);
        }
    }
    out
}

/// Sign of the 2-D orientation of `p` relative to the edge `a -> b`, with a
/// symbolic perturbation of `p` so that the result is never zero for a
/// non-degenerate edge. The expression is evaluated on the lexicographically
/// ordered edge so that `(a, b)` and `(b, a)` always give opposite signs.
pub fn edge_side(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> i8 {
    let (lo, hi, flip) = if (a[0], a[1]) <= (b[0], b[1]) {
        (a, b, 1)
    } else {
        (b, a, -1)
    };
    let dx = hi[0] - lo[0];
    let dy = hi[1] - lo[1];
    let v = dx * (p[1] - lo[1]) - dy * (p[0] - lo[0]);
    let s = if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else if dy != 0.0 {
        if -dy > 0.0 {
            1
        } else {
            -1
        }
    } else if dx > 0.0 {
        1
    } else if dx < 0.0 {
        -1
    } else {
        0
    };
    s * flip
}

/// Möller–Trumbore segment/triangle intersection. Returns the segment
/// parameter `t ∈ [0, 1]` of the hit. The barycentric test is inflated by a
/// tiny epsilon so hits through shared edges are duplicated rather than lost.
pub fn segment_triangle_hit(seg: &Segment, a: &Vec3, b: &Vec3, c: &Vec3) -> Option<f64> {
    const EPS: f64 = 1e-9;
    let dir = seg.p1 - seg.p0;
    let e1 = b - a;
    let e2 = c - a;
    let h = dir.cross(&e2);
    let det = e1.dot(&h);
    if det.abs() < 1e-14 * e1.norm() * e2.norm() * dir.norm() {
        return None;
    }
    let inv = 1.0 / det;
    let s = seg.p0 - a;
    let u = inv * s.dot(&h);
    if !(-EPS..=1.0 + EPS).contains(&u) {
        return None;
    }
    let q = s.cross(&e1);
    let v = inv * dir.dot(&q);
    if v < -EPS || u + v > 1.0 + EPS {
        return None;
    }
    let t = inv * e2.dot(&q);
    (0.0..=1.0).contains(&t).then_some(t)
}

/// Closest point on triangle `abc` to `p` (Ericson, Real-Time Collision Detection 5.1.5).
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return a + ab * v;
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return a + ac * w;
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return b + (c - b) * w;
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    a + ab * v + ac * w
}

pub fn point_segment_distance(p: &Vec3, seg: &Segment) -> f64 {
    let d = seg.p1 - seg.p0;
    let len2 = d.norm_squared();
    let t = if len2 > 0.0 {
        ((p - seg.p0).dot(&d) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p - seg.at(t)).norm()
}

/// Distance between two segments (Ericson 5.1.9).
pub fn segment_segment_distance(s1: &Segment, s2: &Segment) -> f64 {
    let d1 = s1.p1 - s1.p0;
    let d2 = s2.p1 - s2.p0;
    let r = s1.p0 - s2.p0;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let (s, t);
    if a <= f64::EPSILON && e <= f64::EPSILON {
        return r.norm();
    }
    if a <= f64::EPSILON {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= f64::EPSILON {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > 0.0 {
                ((b * f - c * e) / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    ((s1.p0 + d1 * s) - (s2.p0 + d2 * t)).norm()
}

pub fn segment_triangle_distance(seg: &Segment, a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    if seg.length() > 0.0 && segment_triangle_hit(seg, a, b, c).is_some() {
        return 0.0;
    }
    let mut best = (seg.p0 - closest_point_on_triangle(&seg.p0, a, b, c)).norm();
    best = best.min((seg.p1 - closest_point_on_triangle(&seg.p1, a, b, c)).norm());
    for (u, v) in [(a, b), (b, c), (c, a)] {
        best = best.min(segment_segment_distance(seg, &Segment::new(*u, *v)));
    }
    best
}
