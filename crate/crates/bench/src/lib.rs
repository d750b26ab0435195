//! Fixtures shared by the pipeline benchmarks.

use qsurf_core::geometry::{build_cross_section, CrossSectionSpec, RegionSet};
use qsurf_core::meshing::Mesh;
use qsurf_core::studies::{convergence_mesh_settings, MeshSettings};
use qsurf_core::FieldSolution;

/// Default cross-section with the coarse convergence settings, so one
/// iteration stays well under a second.
pub fn reference_regions() -> RegionSet {
    build_cross_section(&CrossSectionSpec::default()).expect("default cross-section")
}

pub fn bench_settings() -> MeshSettings {
    convergence_mesh_settings()
}

pub fn reference_mesh(order: u8) -> Mesh {
    bench_settings()
        .mesh(&reference_regions(), order)
        .expect("reference mesh")
}

pub fn reference_solution(mesh: &Mesh) -> FieldSolution {
    qsurf_core::fem::solve_mesh(mesh, 1.0, 1e-10).expect("reference solve")
}
