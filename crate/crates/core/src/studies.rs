//! Parameter sweeps over the geometry → mesh → solve → analysis chain.
//!
//! Oxide-thickness and trench-depth sweeps can run on a single moving mesh:
//! the geometry is built once with virtual shells/slabs and each sweep point
//! only reassigns their materials.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{flat_surface_epr, linear_fit, region_energies, EnergyReport};
use crate::fem::{assemble, solve, FemError};
use crate::fmt_sig9;
use crate::geometry::{
    build_cross_section, build_virtual_layers, CrossSectionSpec, GeometryError, MaterialKind,
    MaterialTag, RegionSet, VirtualLayer,
};
use crate::meshing::{generate_mesh_with, Mesh, MeshError, MeshOptions, SizeField};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StudyError {
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("mesh generation failed at point {index}: {source}")]
    Mesh { index: usize, source: MeshError },
    #[error("solve failed at point {index}: {source}")]
    Fem { index: usize, source: FemError },
    #[error("need at least 3 points at or above the threshold (found {found})")]
    InsufficientPoints { found: usize },
    #[error("expected a permittivity sweep")]
    WrongVariable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    OxideThickness,
    Permittivity,
    TrenchDepth,
    RefinementLevel,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::OxideThickness => "oxide_thickness",
            SweepVariable::Permittivity => "permittivity",
            SweepVariable::TrenchDepth => "trench_depth",
            SweepVariable::RefinementLevel => "refinement_level",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    MovingMesh,
    Remesh,
}

/// Size-field parameters for cross-section meshes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshSettings {
    pub h_max_nm: f64,
    pub h_corner_nm: f64,
    pub grading: f64,
    pub min_shell_nm: f64,
}

impl Default for MeshSettings {
    fn default() -> Self {
        MeshSettings {
            h_max_nm: 800.0,
            h_corner_nm: 1.0,
            grading: 0.25,
            min_shell_nm: 3.0,
        }
    }
}

impl MeshSettings {
    pub fn mesh(&self, regions: &RegionSet, order: u8) -> Result<Mesh, MeshError> {
        let size = SizeField::for_regions(regions, self.h_max_nm, self.h_corner_nm, self.grading)?;
        let opts = MeshOptions {
            min_shell_nm: self.min_shell_nm,
            ..MeshOptions::default()
        };
        generate_mesh_with(regions, &size, order, &opts)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub base: CrossSectionSpec,
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    pub order: u8,
    pub strategy: Strategy,
    pub mesh: MeshSettings,
    pub rel_tol: f64,
}

impl SweepSpec {
    pub fn new(
        base: CrossSectionSpec,
        variable: SweepVariable,
        values: Vec<f64>,
        strategy: Strategy,
    ) -> Self {
        SweepSpec {
            base,
            variable,
            values,
            order: 2,
            strategy,
            mesh: MeshSettings::default(),
            rel_tol: 1e-10,
        }
    }

    pub fn validate(&self) -> Result<(), StudyError> {
        if self.values.is_empty() {
            return Err(StudyError::Precondition(
                "sweep needs at least one value".into(),
            ));
        }
        if self.values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(StudyError::Precondition(
                "values must be strictly increasing".into(),
            ));
        }
        if self.strategy == Strategy::MovingMesh
            && !matches!(
                self.variable,
                SweepVariable::OxideThickness | SweepVariable::TrenchDepth
            )
        {
            return Err(StudyError::Precondition(
                "moving_mesh is only valid for oxide_thickness and trench_depth".into(),
            ));
        }
        if self.order != 1 && self.order != 2 {
            return Err(StudyError::Precondition("order must be 1 or 2".into()));
        }
        match self.variable {
            SweepVariable::OxideThickness if self.values[0] <= 0.0 => {
                Err(StudyError::Precondition("thicknesses must be > 0".into()))
            }
            SweepVariable::TrenchDepth if self.values[0] < 0.0 => Err(StudyError::Precondition(
                "trench depths must be >= 0".into(),
            )),
            SweepVariable::Permittivity if self.values[0] < 1.0 => Err(StudyError::Precondition(
                "permittivities must be >= 1".into(),
            )),
            SweepVariable::Permittivity if self.base.oxide_layers.is_empty() => Err(
                StudyError::Precondition("permittivity sweep needs an oxide layer".into()),
            ),
            SweepVariable::RefinementLevel
                if self.values.iter().any(|v| v.fract() != 0.0 || *v < 0.0) =>
            {
                Err(StudyError::Precondition(
                    "refinement levels must be non-negative integers".into(),
                ))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub report: EnergyReport,
    pub mesh_hash: String,
    pub dof: usize,
    pub iterations: usize,
    /// Summed participation of all oxide regions.
    pub oxide_epr: f64,
    /// Oxide participation on the flat top surface only.
    pub top_surface_epr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub variable: SweepVariable,
    pub strategy: Strategy,
    pub order: u8,
    pub points: Vec<SweepPoint>,
    /// Wall-clock seconds per point; kept out of exported artifacts.
    #[serde(skip)]
    pub timings_s: Vec<f64>,
}

impl SweepResult {
    pub fn values(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.value).collect()
    }

    pub fn oxide_eprs(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.oxide_epr).collect()
    }

    /// CSV `variable,value,region_id,epr,W_E_per_m,C_per_m`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variable,value,region_id,epr,W_E_per_m,C_per_m\n");
        for p in &self.points {
            for r in &p.report.regions {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{}",
                    self.variable.name(),
                    fmt_sig9(p.value),
                    r.region_id,
                    fmt_sig9(r.epr),
                    fmt_sig9(r.w_e_per_m),
                    fmt_sig9(p.report.capacitance_per_m)
                );
            }
        }
        s
    }
}

fn oxide_summary(report: &EnergyReport) -> (f64, Option<f64>) {
    let ids: Vec<usize> = report
        .regions
        .iter()
        .filter(|r| matches!(r.material.kind, MaterialKind::Oxide(_)))
        .map(|r| r.region_id)
        .collect();
    let epr = ids.iter().map(|&i| report.epr(i)).sum();
    let top = report
        .regions
        .first()
        .and_then(|r| r.top_surface_w_e_per_m)
        .map(|_| report.top_surface_epr(&ids));
    (epr, top)
}

/// Solves one mesh state and summarizes it.
pub fn evaluate_mesh(
    mesh: &Mesh,
    voltage: f64,
    rel_tol: f64,
    value: f64,
) -> Result<SweepPoint, FemError> {
    let materials = mesh.materials();
    let sys = assemble(mesh, &materials, voltage)?;
    let sol = solve(&sys, rel_tol)?;
    let report = region_energies(&sol, mesh, &materials);
    let (oxide_epr, top_surface_epr) = oxide_summary(&report);
    Ok(SweepPoint {
        value,
        report,
        mesh_hash: mesh.topology_hash(),
        dof: sol.diagnostics.dof,
        iterations: sol.diagnostics.iterations,
        oxide_epr,
        top_surface_epr,
    })
}

fn oxide_tag(spec: &CrossSectionSpec) -> MaterialTag {
    let (eps, tand) = spec
        .oxide_layers
        .first()
        .map(|l| (l.permittivity, l.loss_tangent))
        .unwrap_or((10.0, 0.0));
    MaterialTag::oxide(0, eps, tand)
}

/// Cumulative values → individual layer thicknesses.
fn increments(values: &[f64], start: f64) -> Vec<f64> {
    let mut prev = start;
    let mut out = Vec::new();
    for &v in values {
        if v > prev {
            out.push(v - prev);
        }
        prev = v;
    }
    out
}

/// Builds the single moving mesh for a thickness or trench sweep together
/// with the material mapping for each sweep value.
pub fn moving_mesh_states(
    spec: &SweepSpec,
) -> Result<(Mesh, Vec<BTreeMap<VirtualLayer, MaterialTag>>), StudyError> {
    spec.validate()?;
    let base = &spec.base;
    let vac = MaterialTag::vacuum();
    let sub = MaterialTag::substrate(base.substrate_permittivity, base.substrate_loss_tangent);
    match spec.variable {
        SweepVariable::OxideThickness => {
            let shells = increments(&spec.values, 0.0);
            let bare = CrossSectionSpec {
                oxide_layers: Vec::new(),
                ..base.clone()
            };
            let rs = build_virtual_layers(&bare, &shells, &[])?;
            let mesh = spec
                .mesh
                .mesh(&rs, spec.order)
                .map_err(|source| StudyError::Mesh { index: 0, source })?;
            let ox = oxide_tag(base);
            let states = (0..spec.values.len())
                .map(|k| {
                    (0..shells.len())
                        .map(|j| {
                            (
                                VirtualLayer::Shell(j),
                                if j <= k {
                                    MaterialTag::oxide(j, ox.permittivity, ox.loss_tangent)
                                } else {
                                    vac
                                },
                            )
                        })
                        .collect()
                })
                .collect();
            Ok((mesh, states))
        }
        SweepVariable::TrenchDepth => {
            let slabs = increments(&spec.values, 0.0);
            let flat = CrossSectionSpec {
                trench_depth_nm: 0.0,
                ..base.clone()
            };
            let rs = build_virtual_layers(&flat, &[], &slabs)?;
            let mesh = spec
                .mesh
                .mesh(&rs, spec.order)
                .map_err(|source| StudyError::Mesh { index: 0, source })?;
            let mut cum = Vec::new();
            let mut acc = 0.0;
            for s in &slabs {
                acc += s;
                cum.push(acc);
            }
            let states = spec
                .values
                .iter()
                .map(|&depth| {
                    cum.iter()
                        .enumerate()
                        .map(|(j, &c)| {
                            (
                                VirtualLayer::Slab(j),
                                if c <= depth * (1.0 + 1e-12) { vac } else { sub },
                            )
                        })
                        .collect()
                })
                .collect();
            Ok((mesh, states))
        }
        _ => Err(StudyError::Precondition(
            "moving mesh needs a thickness or trench sweep".into(),
        )),
    }
}

/// Geometry for one remeshed sweep point.
fn point_spec(spec: &SweepSpec, value: f64) -> CrossSectionSpec {
    let mut s = spec.base.clone();
    match spec.variable {
        SweepVariable::OxideThickness => s = s.with_single_oxide(value),
        SweepVariable::TrenchDepth => s.trench_depth_nm = value,
        SweepVariable::Permittivity => s.oxide_layers[0].permittivity = value,
        SweepVariable::RefinementLevel => {}
    }
    s
}

/// Runs every sweep point, in parallel where possible. Output order and
/// content follow `spec.values` regardless of scheduling.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult, StudyError> {
    spec.validate()?;
    let v = spec.base.electrode_voltage_v;
    let timed =
        |f: &dyn Fn() -> Result<SweepPoint, StudyError>| -> Result<(SweepPoint, f64), StudyError> {
            let t0 = Instant::now();
            f().map(|p| (p, t0.elapsed().as_secs_f64()))
        };
    let results: Vec<Result<(SweepPoint, f64), StudyError>> = match (spec.strategy, spec.variable) {
        (Strategy::MovingMesh, _) => {
            let (mesh, states) = moving_mesh_states(spec)?;
            states
                .par_iter()
                .enumerate()
                .map(|(index, map)| {
                    timed(&|| {
                        let m = mesh
                            .reassign_materials(map)
                            .map_err(|source| StudyError::Mesh { index, source })?;
                        evaluate_mesh(&m, v, spec.rel_tol, spec.values[index])
                            .map_err(|source| StudyError::Fem { index, source })
                    })
                })
                .collect()
        }
        (_, SweepVariable::Permittivity) => {
            // Permittivity does not change the geometry: mesh once, retag.
            let rs = build_cross_section(&spec.base)?;
            let mesh = spec
                .mesh
                .mesh(&rs, spec.order)
                .map_err(|source| StudyError::Mesh { index: 0, source })?;
            spec.values
                .par_iter()
                .enumerate()
                .map(|(index, &eps)| {
                    timed(&|| {
                        let mut m = mesh.clone();
                        for r in &mut m.regions {
                            if r.material.kind == MaterialKind::Oxide(0) {
                                r.material.permittivity = eps;
                            }
                        }
                        evaluate_mesh(&m, v, spec.rel_tol, eps)
                            .map_err(|source| StudyError::Fem { index, source })
                    })
                })
                .collect()
        }
        (_, SweepVariable::RefinementLevel) => {
            let rs = build_cross_section(&spec.base)?;
            let base = spec
                .mesh
                .mesh(&rs, 1)
                .map_err(|source| StudyError::Mesh { index: 0, source })?;
            spec.values
                .par_iter()
                .enumerate()
                .map(|(index, &lvl)| {
                    timed(&|| {
                        let mut m = base.clone();
                        for _ in 0..(lvl as usize) {
                            m = m.refine_curved();
                        }
                        let m = m.with_order(spec.order);
                        evaluate_mesh(&m, v, spec.rel_tol, lvl)
                            .map_err(|source| StudyError::Fem { index, source })
                    })
                })
                .collect()
        }
        (Strategy::Remesh, _) => spec
            .values
            .par_iter()
            .enumerate()
            .map(|(index, &val)| {
                timed(&|| {
                    let s = point_spec(spec, val);
                    let rs = build_cross_section(&s)?;
                    let m = spec
                        .mesh
                        .mesh(&rs, spec.order)
                        .map_err(|source| StudyError::Mesh { index, source })?;
                    evaluate_mesh(&m, v, spec.rel_tol, val)
                        .map_err(|source| StudyError::Fem { index, source })
                })
            })
            .collect(),
    };
    let mut points = Vec::with_capacity(results.len());
    let mut timings_s = Vec::with_capacity(results.len());
    for r in results {
        let (p, t) = r?;
        points.push(p);
        timings_s.push(t);
    }
    Ok(SweepResult {
        variable: spec.variable,
        strategy: spec.strategy,
        order: spec.order,
        points,
        timings_s,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtrapolationResult {
    pub slope: f64,
    pub intercept: f64,
    pub threshold_used: f64,
    pub target: f64,
    pub predicted: f64,
    /// Root-sum-square residual of the fit.
    pub residual: f64,
    pub points_used: usize,
}

/// Least-squares line through points with `t >= threshold`, evaluated at
/// `target`.
pub fn extrapolate_linear(
    points: &[(f64, f64)],
    threshold: f64,
    target: f64,
) -> Result<ExtrapolationResult, StudyError> {
    let used: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|p| p.0 >= threshold)
        .collect();
    if used.len() < 3 {
        return Err(StudyError::InsufficientPoints { found: used.len() });
    }
    let tmin = used.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    if !(target < tmin) {
        return Err(StudyError::Precondition(format!(
            "target {target} must lie below the smallest fitted thickness {tmin}"
        )));
    }
    let (slope, intercept, _) = linear_fit(&used);
    let residual = used
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(ExtrapolationResult {
        slope,
        intercept,
        threshold_used: threshold,
        target,
        predicted: slope * target + intercept,
        residual,
        points_used: used.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceSeries {
    pub order: u8,
    pub dofs: Vec<usize>,
    pub eprs: Vec<f64>,
    /// `|epr_{k+1} − epr_k| / |epr_{k+1}|`.
    pub deltas: Vec<f64>,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub series: Vec<ConvergenceSeries>,
    pub tolerance: f64,
    pub refinements: usize,
}

impl ConvergenceReport {
    pub fn order(&self, order: u8) -> Option<&ConvergenceSeries> {
        self.series.iter().find(|s| s.order == order)
    }
}

/// Nested uniform-refinement series of the oxide participation for P1 and
/// P2 on one base mesh. Each series stops at the first successive delta
/// below `tolerance`, or after `max_refinements` refinements.
pub fn run_convergence_study(
    spec: &CrossSectionSpec,
    max_refinements: usize,
    tolerance: f64,
    settings: &MeshSettings,
) -> Result<ConvergenceReport, StudyError> {
    if max_refinements < 2 {
        return Err(StudyError::Precondition(
            "max_refinements must be >= 2".into(),
        ));
    }
    if !(tolerance > 0.0) {
        return Err(StudyError::Precondition("tolerance must be > 0".into()));
    }
    let rs = build_cross_section(spec)?;
    let base = settings
        .mesh(&rs, 1)
        .map_err(|source| StudyError::Mesh { index: 0, source })?;
    let v = spec.electrode_voltage_v;
    let series_for = |order: u8| -> Result<ConvergenceSeries, StudyError> {
        let mut dofs = Vec::new();
        let mut eprs: Vec<f64> = Vec::new();
        let mut deltas = Vec::new();
        let mut mesh = base.clone();
        for lvl in 0..=max_refinements {
            if lvl > 0 {
                mesh = mesh.refine_curved();
            }
            let p = evaluate_mesh(&mesh.with_order(order), v, 1e-10, lvl as f64)
                .map_err(|source| StudyError::Fem { index: lvl, source })?;
            dofs.push(p.dof);
            if let Some(prev) = eprs.last() {
                deltas.push(((p.oxide_epr - prev) / p.oxide_epr).abs());
            }
            eprs.push(p.oxide_epr);
            if deltas.last().is_some_and(|d| *d < tolerance) {
                break;
            }
        }
        let converged = deltas.last().is_some_and(|d| *d < tolerance);
        Ok(ConvergenceSeries {
            order,
            dofs,
            eprs,
            deltas,
            converged,
        })
    };
    let (p1, p2) = rayon::join(|| series_for(1), || series_for(2));
    Ok(ConvergenceReport {
        series: vec![p1?, p2?],
        tolerance,
        refinements: max_refinements,
    })
}

/// Coarse base-mesh settings for convergence studies.
pub fn convergence_mesh_settings() -> MeshSettings {
    MeshSettings {
        h_max_nm: 1500.0,
        h_corner_nm: 2.0,
        grading: 0.5,
        min_shell_nm: 3.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitRatio {
    pub permittivity: f64,
    pub epr: f64,
    pub flat_limit: f64,
    pub ratio: f64,
}

/// Ratio of the swept oxide participation to the series-capacitor limit at
/// each permittivity.
pub fn compare_to_limit(
    sweep: &SweepResult,
    gap_nm: f64,
    t_nm: f64,
) -> Result<Vec<LimitRatio>, StudyError> {
    if sweep.variable != SweepVariable::Permittivity {
        return Err(StudyError::WrongVariable);
    }
    sweep
        .points
        .iter()
        .map(|p| {
            let lim = flat_surface_epr(t_nm, p.value, gap_nm)
                .map_err(|e| StudyError::Precondition(e.to_string()))?;
            Ok(LimitRatio {
                permittivity: p.value,
                epr: p.oxide_epr,
                flat_limit: lim,
                ratio: p.oxide_epr / lim,
            })
        })
        .collect()
}

/// Gap for which the series-capacitor model reproduces the sweep's ε = 1
/// participation exactly, `g = t / epr(ε=1)`.
pub fn effective_gap(sweep: &SweepResult, t_nm: f64) -> Result<f64, StudyError> {
    if sweep.variable != SweepVariable::Permittivity {
        return Err(StudyError::WrongVariable);
    }
    let p = sweep
        .points
        .iter()
        .find(|p| p.value == 1.0)
        .ok_or_else(|| StudyError::Precondition("sweep has no eps = 1 point".into()))?;
    Ok(t_nm / p.oxide_epr)
}

/// Default moving-mesh shell stack (cumulative 5, 25, 50, 100 nm).
pub const DEFAULT_SHELLS_NM: [f64; 4] = [5.0, 20.0, 25.0, 50.0];
/// Default trench sweep depths.
pub const DEFAULT_TRENCH_NM: [f64; 7] = [0.0, 5.0, 10.0, 20.0, 50.0, 100.0, 200.0];
/// Default extrapolation threshold.
pub const DEFAULT_THRESHOLD_NM: f64 = 30.0;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_extrapolates_exactly() {
        let pts: Vec<(f64, f64)> = [30.0, 50.0, 100.0]
            .iter()
            .map(|&t| (t, 2e-6 * t + 3e-6))
            .collect();
        let r = extrapolate_linear(&pts, 30.0, 5.0).unwrap();
        assert!((r.slope - 2e-6).abs() < 1e-12 && (r.intercept - 3e-6).abs() < 1e-12);
        assert!(r.residual < 1e-15);
    }

    #[test]
    fn hand_ols() {
        let pts = [(30.0, 3.0e-5), (50.0, 5.0e-5), (100.0, 1.0e-4)];
        let r = extrapolate_linear(&pts, 30.0, 5.0).unwrap();
        assert!((r.predicted - 5.0e-6).abs() < 1e-15);
        assert!(matches!(
            extrapolate_linear(&pts, 40.0, 5.0),
            Err(StudyError::InsufficientPoints { found: 2 })
        ));
    }

    #[test]
    fn sweep_spec_checks() {
        let base = CrossSectionSpec::default();
        let s = SweepSpec::new(
            base.clone(),
            SweepVariable::Permittivity,
            vec![1.0, 10.0],
            Strategy::MovingMesh,
        );
        assert!(s.validate().is_err());
        let s = SweepSpec::new(
            base,
            SweepVariable::OxideThickness,
            vec![10.0, 5.0],
            Strategy::Remesh,
        );
        assert!(s.validate().is_err());
    }

    #[test]
    fn convergence_needs_two_refinements() {
        let r = run_convergence_study(
            &CrossSectionSpec::default(),
            1,
            0.01,
            &MeshSettings::default(),
        );
        assert!(matches!(r, Err(StudyError::Precondition(_))));
    }

    #[test]
    fn increments_from_cumulative() {
        assert_eq!(
            increments(&[5.0, 25.0, 50.0, 100.0], 0.0),
            vec![5.0, 20.0, 25.0, 50.0]
        );
        assert_eq!(increments(&[0.0, 10.0, 50.0], 0.0), vec![10.0, 40.0]);
    }
}
