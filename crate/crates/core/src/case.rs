//! Case bundles on disk.
//!
//! A case is a directory holding `case.json`, the 8-bit `volume.raw`
//! (x fastest, then y, then z) and `mesh.json`. The sector partition, probe
//! fulcrum, limits, gun and fan live in `case.json` so sectors and aiming
//! stay stable across runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::anatomy::{partition_equal_sectors, MeshFile, PartitionFile, ProstateMesh, SectorPartition, SectorPlanes};
use crate::error::{io_err, json_err, Error, Result};
use crate::geometry::Vec3;
use crate::probe::{BiopsyGun, ProbeLimits};
use crate::session::write_atomic;
use crate::volume::{FanGeometry, Phantom, VoxelVolume};

pub const CASE_FILE: &str = "case.json";
pub const VOLUME_FILE: &str = "volume.raw";
pub const MESH_FILE: &str = "mesh.json";
/// Default fulcrum distance posterior (−y) of the gland centroid.
pub const DEFAULT_FULCRUM_OFFSET_MM: f64 = 30.0;

/// Pertinent clinical information shown with the case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClinicalInfo {
    pub age_years: u32,
    pub psa_ng_ml: f64,
    pub dre: String,
}

impl Default for ClinicalInfo {
    fn default() -> Self {
        Self {
            age_years: 64,
            psa_ng_ml: 6.2,
            dre: "normal".into(),
        }
    }
}

/// Contents of `case.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseFile {
    pub id: String,
    pub dims: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    pub volume_file: String,
    pub mesh_file: String,
    #[serde(default)]
    pub metadata: ClinicalInfo,
    /// Computed from the mesh when absent.
    #[serde(default)]
    pub partition: Option<PartitionFile>,
    /// Defaults to 30 mm posterior of the mesh centroid.
    #[serde(default)]
    pub fulcrum_mm: Option<[f64; 3]>,
    #[serde(default)]
    pub limits: ProbeLimits,
    #[serde(default)]
    pub gun: BiopsyGun,
    #[serde(default)]
    pub fan: FanGeometry,
}

#[derive(Debug, Clone)]
pub struct CaseBundle {
    pub id: String,
    pub volume: Arc<VoxelVolume<u8>>,
    pub mesh: Arc<ProstateMesh>,
    pub partition: Arc<SectorPartition>,
    pub fulcrum: Vec3,
    pub limits: ProbeLimits,
    pub gun: BiopsyGun,
    pub fan: FanGeometry,
    pub metadata: ClinicalInfo,
    pub mesh_file: String,
}

pub fn default_fulcrum(mesh: &ProstateMesh) -> Vec3 {
    mesh.centroid() - Vec3::new(0.0, DEFAULT_FULCRUM_OFFSET_MM, 0.0)
}

impl CaseBundle {
    /// Wraps a generated phantom, computing its partition and default fulcrum.
    pub fn from_phantom(id: impl Into<String>, phantom: Phantom, metadata: ClinicalInfo) -> Result<Self> {
        let mesh = Arc::new(phantom.mesh);
        let partition = partition_equal_sectors(mesh.clone())?;
        Ok(Self {
            id: id.into(),
            volume: Arc::new(phantom.volume),
            fulcrum: default_fulcrum(&mesh),
            mesh,
            partition: Arc::new(partition),
            limits: ProbeLimits::default(),
            gun: BiopsyGun::default(),
            fan: FanGeometry::default(),
            metadata,
            mesh_file: MESH_FILE.into(),
        })
    }

    pub fn case_file(&self) -> CaseFile {
        CaseFile {
            id: self.id.clone(),
            dims: self.volume.dims(),
            spacing_mm: self.volume.spacing().into(),
            origin_mm: self.volume.origin().into(),
            volume_file: VOLUME_FILE.into(),
            mesh_file: self.mesh_file.clone(),
            metadata: self.metadata.clone(),
            partition: Some(self.partition.planes().to_file()),
            fulcrum_mm: Some(self.fulcrum.into()),
            limits: self.limits,
            gun: self.gun,
            fan: self.fan,
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let case = serde_json::to_string_pretty(&self.case_file()).map_err(json_err(dir.join(CASE_FILE)))?;
        write_atomic(&dir.join(VOLUME_FILE), self.volume.data())?;
        let mesh = serde_json::to_string(&self.mesh.to_file()).map_err(json_err(dir.join(&self.mesh_file)))?;
        write_atomic(&dir.join(&self.mesh_file), mesh.as_bytes())?;
        write_atomic(&dir.join(CASE_FILE), case.as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let case_path = dir.join(CASE_FILE);
        let text = fs::read_to_string(&case_path).map_err(io_err(&case_path))?;
        let case: CaseFile = serde_json::from_str(&text).map_err(json_err(&case_path))?;
        case.fan.validate()?;

        let raw_path = dir.join(&case.volume_file);
        let data = fs::read(&raw_path).map_err(io_err(&raw_path))?;
        let volume = VoxelVolume::new(case.dims, case.spacing_mm.into(), case.origin_mm.into(), data)?;

        let mesh_path = dir.join(&case.mesh_file);
        let text = fs::read_to_string(&mesh_path).map_err(io_err(&mesh_path))?;
        let mesh_file: MeshFile = serde_json::from_str(&text).map_err(json_err(&mesh_path))?;
        let mesh = Arc::new(ProstateMesh::from_file(&mesh_file)?);

        let partition = match &case.partition {
            Some(p) => SectorPartition::from_planes(mesh.clone(), SectorPlanes::from_file(p)?),
            None => partition_equal_sectors(mesh.clone())?,
        };
        let fulcrum = case.fulcrum_mm.map(Vec3::from).unwrap_or_else(|| default_fulcrum(&mesh));
        Ok(Self {
            id: case.id,
            volume: Arc::new(volume),
            mesh,
            partition: Arc::new(partition),
            fulcrum,
            limits: case.limits,
            gun: case.gun,
            fan: case.fan,
            metadata: case.metadata,
            mesh_file: case.mesh_file,
        })
    }
}

/// Summary of a case directory for listings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseSummary {
    pub id: String,
    pub dir: PathBuf,
    pub metadata: ClinicalInfo,
}

/// Case directories (those containing `case.json`) directly under `root`,
/// sorted by id.
pub fn list_cases(root: &Path) -> Result<Vec<CaseSummary>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(io_err(root))? {
        let dir = entry.map_err(io_err(root))?.path();
        let case_path = dir.join(CASE_FILE);
        if !case_path.is_file() {
            continue;
        }
        let text = fs::read_to_string(&case_path).map_err(io_err(&case_path))?;
        let case: CaseFile = serde_json::from_str(&text).map_err(json_err(&case_path))?;
        out.push(CaseSummary {
            id: case.id,
            dir,
            metadata: case.metadata,
        });
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    let dup = out.windows(2).find(|w| w[0].id == w[1].id);
    if let Some(w) = dup {
        return Err(Error::InvalidCase(format!("duplicate case id '{}'", w[0].id)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volume::{generate_phantom, PhantomSpec};

    fn small_case() -> CaseBundle {
        let spec = PhantomSpec {
            semi_axes_mm: [12.0, 10.0, 11.0],
            dims: [48, 48, 48],
            spacing_mm: [1.0; 3],
            mesh_latitudes: 40,
            mesh_longitudes: 80,
            ..Default::default()
        };
        CaseBundle::from_phantom("c1", generate_phantom(&spec, 7).unwrap(), ClinicalInfo::default()).unwrap()
    }

    #[test]
    fn bundle_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let case = small_case();
        let path = dir.path().join("c1");
        case.save(&path).unwrap();
        let back = CaseBundle::load(&path).unwrap();
        assert_eq!(back.id, "c1");
        assert_eq!(back.volume.data(), case.volume.data());
        assert_eq!(back.mesh.vertices(), case.mesh.vertices());
        assert_eq!(back.partition.planes(), case.partition.planes());
        assert_eq!(back.fulcrum, case.fulcrum);
        assert_eq!(back.case_file(), case.case_file());
        assert_eq!(fs::read(path.join(VOLUME_FILE)).unwrap().len(), 48 * 48 * 48);
        let listed = list_cases(dir.path()).unwrap();
        assert_eq!(listed.len(), 1);
        assert_eq!(listed[0].id, "c1");
    }

    #[test]
    fn missing_optional_fields_take_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let case = small_case();
        case.save(dir.path()).unwrap();
        let mut file = case.case_file();
        file.partition = None;
        file.fulcrum_mm = None;
        fs::write(dir.path().join(CASE_FILE), serde_json::to_string(&file).unwrap()).unwrap();
        let back = CaseBundle::load(dir.path()).unwrap();
        assert_eq!(back.fulcrum, default_fulcrum(&case.mesh));
        assert!((back.fulcrum.y - (case.mesh.centroid().y - 30.0)).abs() < 1e-9);
        assert!((back.partition.planes().sagittal - case.partition.planes().sagittal).abs() < 1e-9);
        assert_eq!(back.gun, BiopsyGun::default());
    }

    #[test]
    fn truncated_volume_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        small_case().save(dir.path()).unwrap();
        fs::write(dir.path().join(VOLUME_FILE), [0u8; 10]).unwrap();
        assert!(CaseBundle::load(dir.path()).is_err());
    }
}
