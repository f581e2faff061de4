//! Voxel volumes, synthetic phantoms and fan-shaped slice extraction.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::anatomy::ProstateMesh;
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::probe::ImageFrame;

/// Regular scalar grid with physical spacing. Voxel `(i, j, k)` is centred at
/// `origin + (i·sx, j·sy, k·sz)` and stored at `i + nx·(j + ny·k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelVolume<T = u8> {
    dims: [usize; 3],
    spacing: Vec3,
    origin: Vec3,
    data: Vec<T>,
}

/// Result of a trilinear lookup. Out-of-bounds lookups carry `value == 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub value: f64,
    pub in_bounds: bool,
}

impl<T: Copy + Into<f64>> VoxelVolume<T> {
    pub fn new(dims: [usize; 3], spacing: Vec3, origin: Vec3, data: Vec<T>) -> Result<Self> {
        if dims.iter().any(|&n| n < 2) {
            return Err(Error::InvalidVolume(format!("dims {dims:?}: need at least 2 voxels per axis")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidVolume(format!("spacing {spacing:?} must be positive")));
        }
        let n = dims[0] * dims[1] * dims[2];
        if data.len() != n {
            return Err(Error::InvalidVolume(format!(
                "{} intensities for {}×{}×{} grid",
                data.len(),
                dims[0],
                dims[1],
                dims[2]
            )));
        }
        Ok(Self {
            dims,
            spacing,
            origin,
            data,
        })
    }

    /// Builds a grid by evaluating `f` at every voxel centre.
    pub fn from_fn(dims: [usize; 3], spacing: Vec3, origin: Vec3, f: impl Fn(Vec3) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for k in 0..dims[2] {
            for j in 0..dims[1] {
                for i in 0..dims[0] {
                    data.push(f(origin + Vec3::new(i as f64, j as f64, k as f64).component_mul(&spacing)));
                }
            }
        }
        Self::new(dims, spacing, origin, data)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn spacing(&self) -> Vec3 {
        self.spacing
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> T {
        self.data[i + self.dims[0] * (j + self.dims[1] * k)]
    }

    pub fn voxel_center(&self, i: usize, j: usize, k: usize) -> Vec3 {
        self.origin + Vec3::new(i as f64, j as f64, k as f64).component_mul(&self.spacing)
    }

    /// Box spanned by the outermost voxel centres; the region where
    /// trilinear interpolation is defined.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        let last = Vec3::new(
            (self.dims[0] - 1) as f64,
            (self.dims[1] - 1) as f64,
            (self.dims[2] - 1) as f64,
        );
        (self.origin, self.origin + last.component_mul(&self.spacing))
    }

    /// Trilinear interpolation of the eight voxels around `p` (mm).
    pub fn sample_trilinear(&self, p: &Vec3) -> Sample {
        let g = (p - self.origin).component_div(&self.spacing);
        let mut idx = [0usize; 3];
        let mut frac = [0.0; 3];
        for k in 0..3 {
            let hi = (self.dims[k] - 1) as f64;
            if !(g[k] >= 0.0 && g[k] <= hi) {
                return Sample {
                    value: 0.0,
                    in_bounds: false,
                };
            }
            let i = (g[k].floor() as usize).min(self.dims[k] - 2);
            idx[k] = i;
            frac[k] = g[k] - i as f64;
        }
        let [i, j, k] = idx;
        let [fx, fy, fz] = frac;
        let v = |di, dj, dk| -> f64 { self.get(i + di, j + dj, k + dk).into() };
        let c00 = v(0, 0, 0) * (1.0 - fx) + v(1, 0, 0) * fx;
        let c10 = v(0, 1, 0) * (1.0 - fx) + v(1, 1, 0) * fx;
        let c01 = v(0, 0, 1) * (1.0 - fx) + v(1, 0, 1) * fx;
        let c11 = v(0, 1, 1) * (1.0 - fx) + v(1, 1, 1) * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        Sample {
            value: c0 * (1.0 - fz) + c1 * fz,
            in_bounds: true,
        }
    }
}

pub fn sample_trilinear<T: Copy + Into<f64>>(vol: &VoxelVolume<T>, p: &Vec3) -> Sample {
    vol.sample_trilinear(p)
}

/// Shape of the end-fire imaging fan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FanGeometry {
    pub apex_offset_mm: f64,
    pub angular_extent_deg: f64,
    pub depth_mm: f64,
    pub image_width_px: usize,
    pub image_height_px: usize,
}

impl Default for FanGeometry {
    fn default() -> Self {
        Self {
            apex_offset_mm: 0.0,
            angular_extent_deg: 120.0,
            depth_mm: 70.0,
            image_width_px: 512,
            image_height_px: 512,
        }
    }
}

impl FanGeometry {
    pub fn validate(&self) -> Result<()> {
        if !(self.angular_extent_deg > 0.0 && self.angular_extent_deg <= 180.0) {
            return Err(Error::InvalidVolume("fan angle must be in (0, 180] degrees".into()));
        }
        if !(self.depth_mm > 0.0) {
            return Err(Error::InvalidVolume("fan depth must be positive".into()));
        }
        if self.image_width_px < 16 || self.image_height_px < 16 {
            return Err(Error::InvalidVolume("fan image must be at least 16×16 px".into()));
        }
        if self.image_width_px > u16::MAX as usize || self.image_height_px > u16::MAX as usize {
            return Err(Error::InvalidVolume("fan image dimension exceeds 65535 px".into()));
        }
        Ok(())
    }

    /// In-plane coordinates `(lateral, depth)` in mm of a pixel centre, and
    /// whether that point lies inside the fan.
    ///
    /// Columns map linearly onto `[-L, L]` with `L = depth·sin(min(half angle, 90°))`,
    /// rows onto `[0, depth]` starting at the apex. The lateral coordinate of
    /// column `c` is the exact negation of that of column `width − 1 − c`.
    pub fn pixel_to_plane(&self, col: usize, row: usize) -> (f64, f64, bool) {
        let half = (self.angular_extent_deg / 2.0).to_radians();
        let lateral_extent = self.depth_mm * half.min(std::f64::consts::FRAC_PI_2).sin();
        let w = self.image_width_px as f64;
        let x = (2.0 * col as f64 + 1.0 - w) / w * lateral_extent;
        let y = (row as f64 + 0.5) / self.image_height_px as f64 * self.depth_mm;
        let inside = x * x + y * y <= self.depth_mm * self.depth_mm && x.abs().atan2(y) <= half;
        (x, y, inside)
    }
}

/// A rendered 2-D ultrasound image. Masked-out pixels are always 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
    /// `true` where the pixel is inside the fan and inside the volume.
    pub mask: Vec<bool>,
    pub frame_id: u64,
    pub frame: ImageFrame,
}

/// 8-bit quantization with round-half-up.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Renders the fan-shaped slice in the plane of `frame`.
/// Row 0 is nearest the apex; depth grows with the row index.
pub fn extract_slice<T: Copy + Into<f64> + Sync>(
    vol: &VoxelVolume<T>,
    frame: &ImageFrame,
    fan: &FanGeometry,
) -> SliceImage {
    let (w, h) = (fan.image_width_px, fan.image_height_px);
    let rows: Vec<(Vec<u8>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|row| {
            let mut px = vec![0u8; w];
            let mut mk = vec![false; w];
            for col in 0..w {
                let (x, y, in_fan) = fan.pixel_to_plane(col, row);
                if !in_fan {
                    continue;
                }
                let p = frame.origin + frame.u * x + frame.v * y;
                let s = vol.sample_trilinear(&p);
                if s.in_bounds {
                    px[col] = quantize(s.value);
                    mk[col] = true;
                }
            }
            (px, mk)
        })
        .collect();
    let mut pixels = Vec::with_capacity(w * h);
    let mut mask = Vec::with_capacity(w * h);
    for (p, m) in rows {
        pixels.extend(p);
        mask.extend(m);
    }
    SliceImage {
        width: w,
        height: h,
        pixels,
        mask,
        frame_id: 0,
        frame: *frame,
    }
}

/// Hypoechoic sphere inside the gland.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    pub center: [f64; 3],
    pub radius_mm: f64,
    /// Fractional intensity drop in `[0, 1]`.
    pub contrast: f64,
}

/// Recipe for a synthetic ellipsoidal gland phantom centred at the origin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PhantomSpec {
    pub semi_axes_mm: [f64; 3],
    pub capsule_intensity: f64,
    pub capsule_thickness_mm: f64,
    pub interior_intensity: f64,
    pub background_intensity: f64,
    /// Relative standard deviation of the multiplicative speckle.
    pub speckle_amplitude: f64,
    pub lesions: Vec<Lesion>,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub mesh_latitudes: usize,
    pub mesh_longitudes: usize,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            semi_axes_mm: [22.0, 18.0, 20.0],
            capsule_intensity: 200.0,
            capsule_thickness_mm: 1.5,
            interior_intensity: 90.0,
            background_intensity: 12.0,
            speckle_amplitude: 0.25,
            lesions: Vec::new(),
            dims: [144, 144, 144],
            spacing_mm: [0.5, 0.5, 0.5],
            mesh_latitudes: 64,
            mesh_longitudes: 128,
        }
    }
}

/// Margin between the gland and the grid edge required by [`generate_phantom`].
pub const PHANTOM_MARGIN_MM: f64 = 10.0;

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        let [a, b, c] = self.semi_axes_mm;
        if !(a > 0.0 && b > 0.0 && c > 0.0) {
            return Err(Error::InvalidPhantom("semi-axes must be positive".into()));
        }
        if self.dims.iter().any(|&n| n < 2) {
            return Err(Error::InvalidPhantom("grid needs at least 2 voxels per axis".into()));
        }
        if self.spacing_mm.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidPhantom("spacing must be positive".into()));
        }
        if self.mesh_latitudes * self.mesh_longitudes * 2 < 5000 {
            return Err(Error::InvalidPhantom("mesh resolution below 5000 triangles".into()));
        }
        for k in 0..3 {
            let half_extent = (self.dims[k] - 1) as f64 * self.spacing_mm[k] / 2.0;
            let need = self.semi_axes_mm[k] + PHANTOM_MARGIN_MM;
            if half_extent < need {
                return Err(Error::InvalidPhantom(format!(
                    "ellipsoid exceeds grid on axis {}: semi-axis {} mm + {} mm margin > half-extent {:.2} mm",
                    ["x", "y", "z"][k],
                    self.semi_axes_mm[k],
                    PHANTOM_MARGIN_MM,
                    half_extent
                )));
            }
        }
        for l in &self.lesions {
            if !(l.radius_mm > 0.0) || !(0.0..=1.0).contains(&l.contrast) {
                return Err(Error::InvalidPhantom("lesion radius must be positive and contrast in [0,1]".into()));
            }
            // The lesion sphere is inside the ellipsoid iff the ellipsoid
            // shrunk by the radius (conservatively: semi-axes minus r)
            // contains the centre.
            let q: f64 = (0..3)
                .map(|k| (l.center[k] / (self.semi_axes_mm[k] - l.radius_mm)).powi(2))
                .sum();
            if self.semi_axes_mm.iter().any(|&s| s <= l.radius_mm) || q > 1.0 {
                return Err(Error::InvalidPhantom(format!(
                    "lesion at {:?} r={} mm is not fully inside the gland",
                    l.center, l.radius_mm
                )));
            }
        }
        Ok(())
    }
}

/// A generated phantom: intensities plus the matching surface mesh.
#[derive(Debug, Clone)]
pub struct Phantom {
    pub volume: VoxelVolume<u8>,
    pub mesh: ProstateMesh,
}

/// Generates an ellipsoidal phantom: dark background, speckled interior,
/// bright capsule ring, optional hypoechoic lesions. Deterministic in `seed`.
pub fn generate_phantom(spec: &PhantomSpec, seed: u64) -> Result<Phantom> {
    spec.validate()?;
    let axes = Vec3::from(spec.semi_axes_mm);
    let spacing = Vec3::from(spec.spacing_mm);
    let half = Vec3::new(
        (spec.dims[0] - 1) as f64,
        (spec.dims[1] - 1) as f64,
        (spec.dims[2] - 1) as f64,
    )
    .component_mul(&spacing)
        / 2.0;
    let origin = -half;
    let mesh = ProstateMesh::ellipsoid(Vec3::zeros(), axes, spec.mesh_latitudes, spec.mesh_longitudes)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let speckle = Normal::new(0.0, spec.speckle_amplitude.max(0.0)).map_err(|e| Error::InvalidPhantom(e.to_string()))?;
    let n: usize = spec.dims.iter().product();
    let mut data = Vec::with_capacity(n);
    for k in 0..spec.dims[2] {
        for j in 0..spec.dims[1] {
            for i in 0..spec.dims[0] {
                let p = origin + Vec3::new(i as f64, j as f64, k as f64).component_mul(&spacing);
                let rho = p.component_div(&axes).norm();
                // Approximate distance to the surface along the ray from the centre.
                let dist = if rho > 0.0 { (rho - 1.0) * p.norm() / rho } else { -axes.min() };
                let noise = 1.0 + speckle.sample(&mut rng);
                let base = if dist.abs() <= spec.capsule_thickness_mm / 2.0 {
                    spec.capsule_intensity
                } else if dist < 0.0 {
                    let mut v = spec.interior_intensity;
                    for l in &spec.lesions {
                        if (p - Vec3::from(l.center)).norm() <= l.radius_mm {
                            v *= 1.0 - l.contrast;
                        }
                    }
                    v
                } else {
                    spec.background_intensity
                };
                data.push(quantize(base * noise.max(0.0)));
            }
        }
    }
    let volume = VoxelVolume::new(spec.dims, spacing, origin, data)?;
    Ok(Phantom { volume, mesh })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::ImageFrame;
    use approx::assert_relative_eq;

    fn small_spec(a: f64, b: f64, c: f64) -> PhantomSpec {
        PhantomSpec {
            semi_axes_mm: [a, b, c],
            dims: [66, 66, 66],
            spacing_mm: [1.0, 1.0, 1.0],
            ..Default::default()
        }
    }

    #[test]
    fn sphere_phantom_mesh_volume() {
        let ph = generate_phantom(&small_spec(20.0, 20.0, 20.0), 42).unwrap();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 8000.0;
        assert_relative_eq!(exact, 33510.32, max_relative = 1e-6);
        assert!((ph.mesh.volume() - exact).abs() / exact < 0.005);
        assert!(ph.mesh.triangles().len() >= 5000);
    }

    #[test]
    fn ellipsoid_phantom_mesh_volume() {
        let ph = generate_phantom(&small_spec(22.0, 18.0, 20.0), 1).unwrap();
        let exact = 4.0 / 3.0 * std::f64::consts::PI * 22.0 * 18.0 * 20.0;
        assert!((ph.mesh.volume() - exact).abs() / exact < 0.005);
    }

    #[test]
    fn phantom_is_deterministic_per_seed() {
        let spec = small_spec(20.0, 20.0, 20.0);
        let a = generate_phantom(&spec, 42).unwrap();
        let b = generate_phantom(&spec, 42).unwrap();
        let c = generate_phantom(&spec, 43).unwrap();
        assert_eq!(a.volume, b.volume);
        assert_ne!(a.volume, c.volume);
    }

    #[test]
    fn phantom_intensity_layout() {
        let spec = PhantomSpec {
            speckle_amplitude: 0.0,
            ..small_spec(20.0, 20.0, 20.0)
        };
        let ph = generate_phantom(&spec, 0).unwrap();
        let at = |p: Vec3| ph.volume.sample_trilinear(&p).value;
        assert!(at(Vec3::new(29.0, 0.0, 0.0)) < 30.0);
        assert!(at(Vec3::new(0.0, 0.0, 0.0)) > 60.0);
        assert!(at(Vec3::new(20.0, 0.0, 0.0)) > 150.0);
    }

    #[test]
    fn oversized_ellipsoid_is_rejected() {
        let err = generate_phantom(&small_spec(30.0, 18.0, 20.0), 0).unwrap_err();
        assert!(err.to_string().contains("exceeds grid"), "{err}");
    }

    #[test]
    fn lesion_outside_gland_is_rejected() {
        let spec = PhantomSpec {
            lesions: vec![Lesion {
                center: [18.0, 0.0, 0.0],
                radius_mm: 5.0,
                contrast: 0.5,
            }],
            ..small_spec(20.0, 20.0, 20.0)
        };
        assert!(generate_phantom(&spec, 0).is_err());
    }

    #[test]
    fn trilinear_identities() {
        let vol = VoxelVolume::from_fn([5, 6, 7], Vec3::new(0.5, 1.0, 2.0), Vec3::new(-1.0, 2.0, 3.0), |p| {
            (p.x * 3.0 + p.y) as f32
        })
        .unwrap();
        let c = vol.voxel_center(2, 3, 4);
        assert_eq!(vol.sample_trilinear(&c).value, vol.get(2, 3, 4) as f64);

        let constant = VoxelVolume::new([4, 4, 4], Vec3::repeat(1.0), Vec3::zeros(), vec![100u8; 64]).unwrap();
        let s = constant.sample_trilinear(&Vec3::new(1.3, 2.7, 0.1));
        assert!(s.in_bounds);
        assert_relative_eq!(s.value, 100.0, epsilon = 1e-12);

        let ramp = VoxelVolume::from_fn([8, 8, 8], Vec3::repeat(1.0), Vec3::zeros(), |p| p.x).unwrap();
        assert_relative_eq!(ramp.sample_trilinear(&Vec3::new(3.25, 1.5, 6.9)).value, 3.25, epsilon = 1e-12);

        let out = ramp.sample_trilinear(&Vec3::new(7.5, 1.0, 1.0));
        assert_eq!(out, Sample { value: 0.0, in_bounds: false });
    }

    #[test]
    fn invalid_volumes() {
        assert!(VoxelVolume::new([1, 4, 4], Vec3::repeat(1.0), Vec3::zeros(), vec![0u8; 16]).is_err());
        assert!(VoxelVolume::new([2, 2, 2], Vec3::new(1.0, 0.0, 1.0), Vec3::zeros(), vec![0u8; 8]).is_err());
        assert!(VoxelVolume::new([2, 2, 2], Vec3::repeat(1.0), Vec3::zeros(), vec![0u8; 7]).is_err());
    }

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize(99.5), 100);
        assert_eq!(quantize(99.49), 99);
        assert_eq!(quantize(-3.0), 0);
        assert_eq!(quantize(300.0), 255);
    }

    fn frame_at(origin: Vec3) -> ImageFrame {
        ImageFrame {
            origin,
            u: Vec3::x(),
            v: Vec3::y(),
            w: Vec3::z(),
        }
    }

    #[test]
    fn slice_of_constant_volume_is_uniform() {
        let vol = VoxelVolume::new([40, 40, 40], Vec3::repeat(1.0), Vec3::repeat(-20.0), vec![100u8; 64000]).unwrap();
        let fan = FanGeometry {
            image_width_px: 64,
            image_height_px: 64,
            depth_mm: 15.0,
            ..Default::default()
        };
        let img = extract_slice(&vol, &frame_at(Vec3::zeros()), &fan);
        assert!(img.mask.iter().any(|&m| m));
        for (p, m) in img.pixels.iter().zip(&img.mask) {
            assert_eq!(*p, if *m { 100 } else { 0 });
        }
    }

    #[test]
    fn slice_outside_volume_is_empty() {
        let vol = VoxelVolume::new([4, 4, 4], Vec3::repeat(1.0), Vec3::zeros(), vec![100u8; 64]).unwrap();
        let img = extract_slice(&vol, &frame_at(Vec3::new(500.0, 0.0, 0.0)), &FanGeometry {
            image_width_px: 32,
            image_height_px: 32,
            ..Default::default()
        });
        assert!(img.pixels.iter().all(|&p| p == 0));
        assert!(img.mask.iter().all(|&m| !m));
    }

    #[test]
    fn masked_pixels_back_project_inside_volume() {
        let vol = VoxelVolume::new([20, 20, 20], Vec3::repeat(1.0), Vec3::zeros(), vec![7u8; 8000]).unwrap();
        let fan = FanGeometry {
            image_width_px: 48,
            image_height_px: 40,
            depth_mm: 30.0,
            ..Default::default()
        };
        let frame = frame_at(Vec3::new(10.0, 2.0, 10.0));
        let img = extract_slice(&vol, &frame, &fan);
        let (lo, hi) = vol.bounds();
        for row in 0..img.height {
            for col in 0..img.width {
                if img.mask[row * img.width + col] {
                    let (x, y, _) = fan.pixel_to_plane(col, row);
                    let p = frame.origin + frame.u * x + frame.v * y;
                    assert!((0..3).all(|k| p[k] >= lo[k] && p[k] <= hi[k]));
                }
            }
        }
    }

    #[test]
    fn fan_validation() {
        assert!(FanGeometry::default().validate().is_ok());
        assert!(FanGeometry { angular_extent_deg: 181.0, ..Default::default() }.validate().is_err());
        assert!(FanGeometry { image_width_px: 8, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn half_turn_roll_leaves_symmetric_phantom_unchanged() {
        use crate::probe::{image_frame, pose_from_controls, ProbeControls, ProbeLimits};
        let spec = PhantomSpec {
            speckle_amplitude: 0.0,
            ..small_spec(15.0, 15.0, 15.0)
        };
        let phantom = generate_phantom(&spec, 3).unwrap();
        let fan = FanGeometry {
            image_width_px: 96,
            image_height_px: 96,
            depth_mm: 40.0,
            ..Default::default()
        };
        let fulcrum = Vec3::new(0.0, -30.0, 0.0);
        let limits = ProbeLimits::default();
        let render = |roll: f64| {
            let controls = ProbeControls {
                roll_deg: roll,
                insertion_mm: 8.0,
                ..Default::default()
            };
            let pose = pose_from_controls(&controls, &limits, fulcrum);
            extract_slice(&phantom.volume, &image_frame(&pose, &fan), &fan)
        };
        for roll in [0.0, 37.0, 90.0] {
            let a = render(roll);
            let b = render(roll - 180.0);
            assert!(a.mask.iter().filter(|&&m| m).count() > 1000);
            assert_eq!(a.pixels, b.pixels, "roll {roll}");
            assert_eq!(a.mask, b.mask);
        }
    }

    #[test]
    fn slice_extraction_is_deterministic() {
        let phantom = generate_phantom(&small_spec(20.0, 20.0, 20.0), 1).unwrap();
        let fan = FanGeometry {
            image_width_px: 64,
            image_height_px: 64,
            ..Default::default()
        };
        let frame = frame_at(Vec3::new(0.0, -25.0, 3.0));
        assert_eq!(
            extract_slice(&phantom.volume, &frame, &fan),
            extract_slice(&phantom.volume, &frame, &fan)
        );
    }

    #[test]
    fn default_spec_is_valid() {
        assert!(PhantomSpec::default().validate().is_ok());
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]
        #[test]
        fn trilinear_reproduces_affine_fields(
            coef in proptest::array::uniform4(-5.0f64..5.0),
            seed in 0u64..1000,
        ) {
            use rand::{Rng, SeedableRng};
            let f = |p: Vec3| coef[0] + coef[1] * p.x + coef[2] * p.y + coef[3] * p.z + 50.0;
            let vol = VoxelVolume::from_fn([9, 7, 11], Vec3::new(0.7, 1.3, 0.4), Vec3::new(-2.0, 1.0, 5.0), f).unwrap();
            let (lo, hi) = vol.bounds();
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..200 {
                let p = Vec3::new(
                    rng.random_range(lo.x..hi.x),
                    rng.random_range(lo.y..hi.y),
                    rng.random_range(lo.z..hi.z),
                );
                let s = vol.sample_trilinear(&p);
                proptest::prop_assert!(s.in_bounds);
                let want = f(p);
                proptest::prop_assert!((s.value - want).abs() <= 1e-6 * want.abs().max(1.0));
            }
        }
    }
}
