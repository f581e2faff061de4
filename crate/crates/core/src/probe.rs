//! Fulcrum-constrained probe kinematics, image-plane frames and needle-guide geometry.
//!
//! Angles follow the anatomical frame (+x patient-left, +y anterior, +z base).
//! At rest the probe axis points anterior (+y). Yaw swings the axis toward +x,
//! then pitch tilts it toward +z, both about the fulcrum; roll finally spins
//! the image plane about the axis (roll +90° turns the lateral image
//! direction from +x to +z).

use nalgebra::{Rotation3, Unit};
use serde::{Deserialize, Serialize};

use crate::geometry::{Segment, Vec3};
use crate::volume::FanGeometry;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ProbeControls {
    pub pitch_deg: f64,
    pub yaw_deg: f64,
    pub roll_deg: f64,
    pub insertion_mm: f64,
}

/// Inclusive `[min, max]` ranges for each control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbeLimits {
    pub pitch_deg: [f64; 2],
    pub yaw_deg: [f64; 2],
    pub roll_deg: [f64; 2],
    pub insertion_mm: [f64; 2],
}

impl Default for ProbeLimits {
    fn default() -> Self {
        Self {
            pitch_deg: [-45.0, 45.0],
            yaw_deg: [-45.0, 45.0],
            roll_deg: [-180.0, 180.0],
            insertion_mm: [0.0, 60.0],
        }
    }
}

fn clamp_finite(v: f64, [lo, hi]: [f64; 2]) -> f64 {
    if v.is_finite() {
        v.clamp(lo, hi)
    } else {
        0.0f64.clamp(lo, hi)
    }
}

impl ProbeControls {
    /// Clamps each control into its range; non-finite inputs fall back to 0.
    pub fn clamped(&self, limits: &ProbeLimits) -> Self {
        Self {
            pitch_deg: clamp_finite(self.pitch_deg, limits.pitch_deg),
            yaw_deg: clamp_finite(self.yaw_deg, limits.yaw_deg),
            roll_deg: clamp_finite(self.roll_deg, limits.roll_deg),
            insertion_mm: clamp_finite(self.insertion_mm, limits.insertion_mm),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbePose {
    pub fulcrum: Vec3,
    /// Clamped controls this pose was built from.
    pub controls: ProbeControls,
    /// Unit probe axis; the tip is `fulcrum + insertion·axis`.
    pub axis: Vec3,
    /// Unit lateral image direction after roll, perpendicular to `axis`.
    pub lateral: Vec3,
}

impl ProbePose {
    pub fn tip(&self) -> Vec3 {
        self.fulcrum + self.axis * self.controls.insertion_mm
    }
}

pub fn pose_from_controls(controls: &ProbeControls, limits: &ProbeLimits, fulcrum: Vec3) -> ProbePose {
    let c = controls.clamped(limits);
    let yaw = Rotation3::from_axis_angle(&Vec3::z_axis(), -c.yaw_deg.to_radians());
    let pitch = Rotation3::from_axis_angle(&Vec3::x_axis(), c.pitch_deg.to_radians());
    let aim = pitch * yaw;
    let axis = (aim * Vec3::y()).normalize();
    let lateral0 = aim * Vec3::x();
    let roll = c.roll_deg.to_radians();
    let lateral = (lateral0 * roll.cos() + lateral0.cross(&axis) * roll.sin()).normalize();
    ProbePose {
        fulcrum,
        controls: c,
        axis,
        lateral,
    }
}

/// Orthonormal right-handed image frame: `u` lateral, `v` depth, `w = u × v`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImageFrame {
    pub origin: Vec3,
    pub u: Vec3,
    pub v: Vec3,
    pub w: Vec3,
}

impl ImageFrame {
    /// Signed distance of `p` from the image plane.
    pub fn plane_distance(&self, p: &Vec3) -> f64 {
        self.w.dot(&(p - self.origin))
    }
}

/// End-fire frame: depth along the probe axis from the fan apex.
pub fn image_frame(pose: &ProbePose, fan: &FanGeometry) -> ImageFrame {
    let v = pose.axis;
    let u = pose.lateral;
    ImageFrame {
        origin: pose.tip() + v * fan.apex_offset_mm,
        u,
        v,
        w: u.cross(&v),
    }
}

/// Spring-loaded biopsy gun mounted on the probe's needle guide.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiopsyGun {
    /// Needle angle from the probe axis, within the image plane (toward +u).
    pub guide_angle_deg: f64,
    /// Tip-to-core-start distance.
    pub throw_mm: f64,
    pub core_length_mm: f64,
}

impl Default for BiopsyGun {
    fn default() -> Self {
        Self {
            guide_angle_deg: 0.0,
            throw_mm: 22.0,
            core_length_mm: 17.0,
        }
    }
}

impl BiopsyGun {
    pub fn direction(&self, pose: &ProbePose) -> Vec3 {
        let g = self.guide_angle_deg.to_radians();
        (pose.axis * g.cos() + pose.lateral * g.sin()).normalize()
    }
}

/// Core segment sampled when the gun fires at `pose`.
pub fn needle_segment(pose: &ProbePose, gun: &BiopsyGun) -> Segment {
    let dir = gun.direction(pose);
    let p0 = pose.tip() + dir * gun.throw_mm;
    Segment::new(p0, p0 + dir * gun.core_length_mm)
}

/// Rotation of `p` about the line through `origin` along `axis`.
pub fn rotate_about(p: &Vec3, origin: &Vec3, axis: &Vec3, angle_rad: f64) -> Vec3 {
    let r = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle_rad);
    origin + r * (p - origin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn controls(pitch: f64, yaw: f64, roll: f64, ins: f64) -> ProbeControls {
        ProbeControls {
            pitch_deg: pitch,
            yaw_deg: yaw,
            roll_deg: roll,
            insertion_mm: ins,
        }
    }

    #[test]
    fn rest_pose() {
        let f = Vec3::new(1.0, -30.0, 2.0);
        let pose = pose_from_controls(&ProbeControls::default(), &ProbeLimits::default(), f);
        assert_relative_eq!(pose.axis, Vec3::y(), epsilon = 1e-15);
        assert_eq!(pose.tip(), f);
        let frame = image_frame(&pose, &FanGeometry::default());
        assert_relative_eq!(frame.u, Vec3::x(), epsilon = 1e-15);
        assert_relative_eq!(frame.v, Vec3::y(), epsilon = 1e-15);
        assert_relative_eq!(frame.w, Vec3::z(), epsilon = 1e-15);
    }

    #[test]
    fn yaw_is_clamped() {
        let pose = pose_from_controls(&controls(0.0, 90.0, 0.0, 0.0), &ProbeLimits::default(), Vec3::zeros());
        assert_eq!(pose.controls.yaw_deg, 45.0);
        let s = 45f64.to_radians().sin();
        assert_relative_eq!(pose.axis, Vec3::new(s, s, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn pitch_tilts_toward_base() {
        let pose = pose_from_controls(&controls(30.0, 0.0, 0.0, 0.0), &ProbeLimits::default(), Vec3::zeros());
        assert!(pose.axis.z > 0.0);
        assert_relative_eq!(pose.axis.x, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn insertion_moves_tip_along_axis() {
        let f = Vec3::new(0.0, -30.0, 0.0);
        let pose = pose_from_controls(&controls(0.0, 0.0, 0.0, 30.0), &ProbeLimits::default(), f);
        assert_relative_eq!(pose.tip(), f + Vec3::new(0.0, 30.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn roll_quarter_turn() {
        let pose = pose_from_controls(&controls(0.0, 0.0, 90.0, 0.0), &ProbeLimits::default(), Vec3::zeros());
        let frame = image_frame(&pose, &FanGeometry::default());
        assert_relative_eq!(frame.u, Vec3::z(), epsilon = 1e-12);
    }

    #[test]
    fn default_gun_at_rest() {
        let f = Vec3::new(0.0, -30.0, 0.0);
        let pose = pose_from_controls(&ProbeControls::default(), &ProbeLimits::default(), f);
        let seg = needle_segment(&pose, &BiopsyGun::default());
        assert_relative_eq!(seg.p0, f + Vec3::new(0.0, 22.0, 0.0), epsilon = 1e-12);
        assert_relative_eq!(seg.p1, f + Vec3::new(0.0, 39.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn non_finite_controls_fall_back_to_rest() {
        let c = controls(f64::NAN, f64::INFINITY, 0.0, f64::NAN).clamped(&ProbeLimits::default());
        assert_eq!(c, ProbeControls::default());
    }

    fn arb_controls() -> impl Strategy<Value = ProbeControls> {
        (-90.0..90.0f64, -90.0..90.0f64, -270.0..270.0f64, -10.0..80.0f64)
            .prop_map(|(p, y, r, i)| controls(p, y, r, i))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(2000))]

        #[test]
        fn frame_is_orthonormal(c in arb_controls(), apex in 0.0..10.0f64) {
            let pose = pose_from_controls(&c, &ProbeLimits::default(), Vec3::new(3.0, -30.0, 1.0));
            let fan = FanGeometry { apex_offset_mm: apex, ..Default::default() };
            let f = image_frame(&pose, &fan);
            prop_assert!(f.u.dot(&f.v).abs() < 1e-9);
            prop_assert!(f.u.dot(&f.w).abs() < 1e-9);
            prop_assert!(f.v.dot(&f.w).abs() < 1e-9);
            for n in [f.u.norm(), f.v.norm(), f.w.norm()] {
                prop_assert!((n - 1.0).abs() < 1e-9);
            }
            prop_assert!((f.u.cross(&f.v) - f.w).norm() < 1e-12);
        }

        #[test]
        fn axis_passes_through_fulcrum(c in arb_controls()) {
            let fulcrum = Vec3::new(-2.0, -31.0, 4.0);
            let pose = pose_from_controls(&c, &ProbeLimits::default(), fulcrum);
            let d = pose.tip() - fulcrum;
            prop_assert!(d.cross(&pose.axis).norm() < 1e-9);
        }

        #[test]
        fn clamping_is_idempotent(c in arb_controls()) {
            let limits = ProbeLimits::default();
            let once = pose_from_controls(&c, &limits, Vec3::zeros());
            let twice = pose_from_controls(&once.controls, &limits, Vec3::zeros());
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn needle_lies_in_image_plane(c in arb_controls(), g in -30.0..30.0f64, throw in 0.0..40.0f64, core in 1.0..30.0f64) {
            let pose = pose_from_controls(&c, &ProbeLimits::default(), Vec3::new(0.0, -30.0, 0.0));
            let gun = BiopsyGun { guide_angle_deg: g, throw_mm: throw, core_length_mm: core };
            let seg = needle_segment(&pose, &gun);
            let frame = image_frame(&pose, &FanGeometry::default());
            prop_assert!(frame.plane_distance(&seg.p0).abs() < 1e-9);
            prop_assert!(frame.plane_distance(&seg.p1).abs() < 1e-9);
            prop_assert!((seg.length() - core).abs() < 1e-9);
        }

        #[test]
        fn needle_rolls_rigidly_with_probe(p in -40.0..40.0f64, y in -40.0..40.0f64, r in -90.0..90.0f64, dr in -60.0..60.0f64, g in -20.0..20.0f64) {
            let limits = ProbeLimits::default();
            let fulcrum = Vec3::new(0.0, -30.0, 0.0);
            let gun = BiopsyGun { guide_angle_deg: g, ..Default::default() };
            let a = pose_from_controls(&controls(p, y, r, 10.0), &limits, fulcrum);
            let b = pose_from_controls(&controls(p, y, r + dr, 10.0), &limits, fulcrum);
            let sa = needle_segment(&a, &gun);
            let sb = needle_segment(&b, &gun);
            // Roll turns the lateral direction by -dr about the axis (u → u cos + (u × axis) sin).
            let angle = -dr.to_radians();
            let ra0 = rotate_about(&sa.p0, &fulcrum, &a.axis, angle);
            let ra1 = rotate_about(&sa.p1, &fulcrum, &a.axis, angle);
            prop_assert!((ra0 - sb.p0).norm() < 1e-9);
            prop_assert!((ra1 - sb.p1).norm() < 1e-9);
        }
    }
}
