//! Gland geometry: the surface mesh, its equal-volume sector partition, and
//! segment measurements against the sectors.

mod mesh;
mod partition;
mod sector;

pub use mesh::{clipped_volume, ellipsoid_estimate, mesh_volume, point_in_mesh, MeshFile, ProstateMesh};
pub use partition::{
    classify_point, distance_segment_to_sector, partition_equal_sectors, segment_lengths_by_sector, Cut,
    PartitionFile, SectorLengths, SectorPartition, SectorPlanes, DEFAULT_BISECTION_TOLERANCE,
    MAX_BISECTION_STEPS,
};
pub use sector::{Level, ParseLabelError, SectorLabel, Side, Zone};
