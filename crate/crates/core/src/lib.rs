//! Electrostatic cross-section solver and surface-loss analysis for planar
//! transmon qubits.
//!
//! The pipeline is `geometry` → `meshing` → `fem` → `analysis`, with
//! `circuit` tying per-unit-length participations to qubit-level budgets and
//! `studies` orchestrating thickness, permittivity, trench and convergence
//! sweeps over the whole chain.

pub mod analysis;
pub mod circuit;
pub mod fem;
pub mod geometry;
pub mod meshing;
pub mod studies;

pub use analysis::{EdgeFit, EdgeProfile, EnergyReport, GFactorReport};
pub use circuit::{EnergyBudget, LossBudget, LumpedQubit};
pub use fem::{FieldSolution, LinearSystem};
pub use geometry::{
    BoundaryMarker, CrossSection, CrossSectionSpec, MaterialKind, MaterialTag, OxideLayer,
    PlanarRegion, Point, RegionSet,
};
pub use meshing::{Mesh, SizeField};
pub use studies::{ConvergenceReport, ExtrapolationResult, SweepResult, SweepSpec};

/// Crate version, echoed in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Vacuum permittivity, F/m.
pub const EPSILON_0: f64 = 8.854_187_812_8e-12;
/// Vacuum permeability, H/m.
pub const MU_0: f64 = 1.256_637_062_12e-6;

/// Hex-encoded SHA-256 of a byte slice.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

/// Formats a float with 9 significant digits, the precision used by every
/// textual artifact.
pub fn fmt_sig9(v: f64) -> String {
    let v = if v == 0.0 { 0.0 } else { v };
    if v.is_nan() {
        "nan".to_string()
    } else if v.is_infinite() {
        if v > 0.0 {
            "inf".to_string()
        } else {
            "-inf".to_string()
        }
    } else {
        format!("{:.8e}", v)
    }
}
