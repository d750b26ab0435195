//! Energies, participation ratios, G-factor and edge-field profiles.
//!
//! Energies use the peak-phasor quarter convention `W′ = ¼ε₀Σε∫|E|²dA`, so
//! `C′ = 4W′/V²`. All ratios are independent of that convention.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::fem::{boundary_field_samples, evaluate_field, FemError, FieldSolution};
use crate::geometry::{BoundaryMarker, CornerSite, MaterialTag, Point};
use crate::meshing::Mesh;
use crate::{fmt_sig9, EPSILON_0, MU_0};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AnalysisError {
    #[error("domain error: {0}")]
    DomainError(String),
    #[error("only {found} samples in the fit window (need {needed})")]
    InsufficientSamples { found: usize, needed: usize },
    #[error("G-factor requires a vacuum solve; region {0} has permittivity != 1")]
    NonVacuumSolve(usize),
    #[error(transparent)]
    Fem(#[from] FemError),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegionEnergy {
    pub region_id: usize,
    pub material: MaterialTag,
    /// J/m.
    pub w_e_per_m: f64,
    pub epr: f64,
    /// `f64::INFINITY` when the loss tangent is zero.
    pub q: f64,
    /// Part of `w_e_per_m` lying left of the top-surface cut, if any.
    pub top_surface_w_e_per_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyReport {
    pub regions: Vec<RegionEnergy>,
    pub total_w_e_per_m: f64,
    pub capacitance_per_m: f64,
    pub voltage: f64,
    pub g_factor: Option<GFactorReport>,
}

impl EnergyReport {
    pub fn region(&self, id: usize) -> Option<&RegionEnergy> {
        self.regions.iter().find(|r| r.region_id == id)
    }

    pub fn epr(&self, id: usize) -> f64 {
        self.region(id).map(|r| r.epr).unwrap_or(0.0)
    }

    pub fn epr_sum(&self) -> f64 {
        self.regions.iter().map(|r| r.epr).sum()
    }

    /// Summed participation of all regions in an energy class
    /// (`vacuum`, `oxide`, `substrate`).
    pub fn class_epr(&self, class: &str) -> f64 {
        self.regions
            .iter()
            .filter(|r| r.material.kind.class() == class)
            .map(|r| r.epr)
            .sum()
    }

    /// Participation in the top-surface part of the given regions.
    pub fn top_surface_epr(&self, ids: &[usize]) -> f64 {
        ids.iter()
            .filter_map(|id| self.region(*id))
            .filter_map(|r| r.top_surface_w_e_per_m)
            .sum::<f64>()
            / self.total_w_e_per_m
    }

    pub fn to_json(&self) -> String {
        let num = |v: f64| {
            if v.is_finite() {
                fmt_sig9(v)
            } else {
                format!("\"{}\"", fmt_sig9(v))
            }
        };
        let mut s = String::from("{\n  \"regions\": {\n");
        for (i, r) in self.regions.iter().enumerate() {
            let _ = write!(
                s,
                "    \"{}\": {{\"material\": \"{}\", \"W_E_per_m\": {}, \"epr\": {}, \"Q\": {}}}",
                r.region_id,
                r.material.kind,
                num(r.w_e_per_m),
                num(r.epr),
                num(r.q)
            );
            s.push_str(if i + 1 < self.regions.len() {
                ",\n"
            } else {
                "\n"
            });
        }
        let _ = write!(
            s,
            "  }},\n  \"total_W_E_per_m\": {},\n  \"C_per_m\": {},\n  \"voltage_V\": {}",
            num(self.total_w_e_per_m),
            num(self.capacitance_per_m),
            num(self.voltage)
        );
        if let Some(g) = &self.g_factor {
            let _ = write!(s, ",\n  \"G_ohm\": {}", num(g.g_total));
        }
        s.push_str("\n}\n");
        s
    }
}

/// Per-region energies and participations from a solved field.
pub fn region_energies(
    solution: &FieldSolution,
    mesh: &Mesh,
    materials: &BTreeMap<usize, MaterialTag>,
) -> EnergyReport {
    let mut integral: BTreeMap<usize, (f64, f64)> =
        materials.keys().map(|&k| (k, (0.0, 0.0))).collect();
    for k in 0..mesh.elements.len() {
        let region = mesh.element_region[k];
        let (mut all, mut top) = (0.0, 0.0);
        let left_of_cut = mesh.top_cut_x.map(|xc| {
            let [a, b, c] = mesh.elements[k].map(|i| mesh.nodes[i]);
            (a.x + b.x + c.x) / 3.0 < xc
        });
        for smp in solution.element_samples(k) {
            all += smp.weight_nm2 * smp.e.dot(smp.e);
        }
        if left_of_cut == Some(true) {
            top = all;
        }
        let e = integral.entry(region).or_insert((0.0, 0.0));
        e.0 += all;
        e.1 += top;
    }
    // E in V/nm and areas in nm² give ∫|E|²dA directly in V².
    let mut regions: Vec<RegionEnergy> = integral
        .iter()
        .map(|(&id, &(all, top))| {
            let m = materials
                .get(&id)
                .copied()
                .unwrap_or_else(MaterialTag::vacuum);
            RegionEnergy {
                region_id: id,
                material: m,
                w_e_per_m: 0.25 * EPSILON_0 * m.permittivity * all,
                epr: 0.0,
                q: f64::INFINITY,
                top_surface_w_e_per_m: mesh
                    .top_cut_x
                    .map(|_| 0.25 * EPSILON_0 * m.permittivity * top),
            }
        })
        .collect();
    let total: f64 = regions.iter().map(|r| r.w_e_per_m).sum();
    for r in &mut regions {
        r.epr = if total > 0.0 {
            r.w_e_per_m / total
        } else {
            0.0
        };
        r.q = quality_factor(r.epr, r.material.loss_tangent).unwrap_or(f64::INFINITY);
    }
    let v = solution.voltage;
    EnergyReport {
        regions,
        total_w_e_per_m: total,
        capacitance_per_m: if v != 0.0 { 4.0 * total / (v * v) } else { 0.0 },
        voltage: v,
        g_factor: None,
    }
}

/// `Q = 1/(epr·tanδ)`.
pub fn quality_factor(epr: f64, tan_delta: f64) -> Result<f64, AnalysisError> {
    if !(epr > 0.0) || !(tan_delta > 0.0) {
        return Err(AnalysisError::DomainError(format!(
            "epr and tan delta must be > 0 (got {epr}, {tan_delta})"
        )));
    }
    Ok(1.0 / (epr * tan_delta))
}

/// Series-capacitor participation of a dielectric layer of thickness `t`
/// and permittivity `eps` in a vacuum gap `gap`.
pub fn flat_surface_epr(t: f64, eps: f64, gap: f64) -> Result<f64, AnalysisError> {
    if !(t > 0.0 && t < gap) || !(eps >= 1.0) {
        return Err(AnalysisError::DomainError(format!(
            "need 0 < t < gap and eps >= 1 (got t={t}, eps={eps}, gap={gap})"
        )));
    }
    let a = t / eps;
    Ok(a / ((gap - t) + a))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum ProfileMode {
    /// Log-spaced radial samples along the exterior bisector from the apex.
    Ray {
        rho_min: f64,
        rho_max: f64,
        samples: usize,
    },
    /// Uniform arc-length samples along a path at fixed offset from the metal.
    Perimeter { path: Vec<Point>, samples: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeProfile {
    pub corner: String,
    pub path: String,
    pub rho: Vec<f64>,
    pub e: Vec<f64>,
}

impl EdgeProfile {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("rho_nm,E_V_per_nm\n");
        for (r, e) in self.rho.iter().zip(&self.e) {
            let _ = writeln!(s, "{},{}", fmt_sig9(*r), fmt_sig9(*e));
        }
        s
    }
}

/// Samples |E| near a corner.
pub fn sample_edge_field(
    solution: &FieldSolution,
    mesh: &Mesh,
    corner: &CornerSite,
    mode: &ProfileMode,
) -> Result<EdgeProfile, AnalysisError> {
    let (points, rho, path) = match mode {
        ProfileMode::Ray {
            rho_min,
            rho_max,
            samples,
        } => {
            if !(*rho_min > 0.0 && rho_max > rho_min && *samples >= 2) {
                return Err(AnalysisError::DomainError(
                    "ray needs 0 < rho_min < rho_max and >= 2 samples".into(),
                ));
            }
            let n = *samples;
            let rho: Vec<f64> = (0..n)
                .map(|i| rho_min * (rho_max / rho_min).powf(i as f64 / (n - 1) as f64))
                .collect();
            let pts = rho
                .iter()
                .map(|&r| corner.apex + corner.bisector * r)
                .collect();
            (
                pts,
                rho,
                format!(
                    "ray from ({:.3}, {:.3}) along ({:.6}, {:.6})",
                    corner.apex.x, corner.apex.y, corner.bisector.x, corner.bisector.y
                ),
            )
        }
        ProfileMode::Perimeter { path, samples } => {
            if path.len() < 2 || *samples < 2 {
                return Err(AnalysisError::DomainError(
                    "perimeter path needs >= 2 points and samples".into(),
                ));
            }
            let (pts, s) = resample(path, *samples);
            (
                pts,
                s,
                format!("perimeter path with {} vertices", path.len()),
            )
        }
    };
    let e = evaluate_field(solution, mesh, &points)?;
    Ok(EdgeProfile {
        corner: corner.label.clone(),
        path,
        rho,
        e: e.iter().map(|v| v.norm()).collect(),
    })
}

/// Uniform arc-length resampling; returns points and their arc lengths.
fn resample(path: &[Point], n: usize) -> (Vec<Point>, Vec<f64>) {
    let mut cum = vec![0.0];
    for w in path.windows(2) {
        cum.push(cum.last().unwrap() + w[0].dist(w[1]));
    }
    let total = *cum.last().unwrap();
    let mut pts = Vec::with_capacity(n);
    let mut s_out = Vec::with_capacity(n);
    let mut seg = 0;
    for i in 0..n {
        let s = total * i as f64 / (n - 1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let f = if len > 0.0 {
            ((s - cum[seg]) / len).clamp(0.0, 1.0)
        } else {
            0.0
        };
        pts.push(path[seg].lerp(path[seg + 1], f));
        s_out.push(s);
    }
    (pts, s_out)
}

/// Local maxima (endpoints included) whose topographic prominence is at
/// least `min_prominence_frac` of the profile maximum. Returns indices.
pub fn local_maxima(values: &[f64], min_prominence_frac: f64) -> Vec<usize> {
    let n = values.len();
    let vmax = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = Vec::new();
    for i in 0..n {
        let v = values[i];
        let left_ok = i == 0 || v > values[i - 1];
        let right_ok = i + 1 == n || v >= values[i + 1];
        if !(left_ok && right_ok) || n < 2 {
            continue;
        }
        // Lowest point on each side before reaching a higher value.
        let side = |range: &mut dyn Iterator<Item = usize>| -> Option<f64> {
            let mut lo = f64::INFINITY;
            let mut any = false;
            for j in range {
                any = true;
                if values[j] > v {
                    break;
                }
                lo = lo.min(values[j]);
            }
            any.then_some(lo)
        };
        let l = side(&mut (0..i).rev());
        let r = side(&mut (i + 1..n));
        let base = match (l, r) {
            (Some(a), Some(b)) => a.max(b),
            (Some(a), None) | (None, Some(a)) => a,
            (None, None) => continue,
        };
        if v - base >= min_prominence_frac * vmax {
            out.push(i);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdgeFit {
    pub exponent: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub r_squared: f64,
    pub samples: usize,
}

/// Least-squares slope of log|E| against log ρ inside `[rho_min, rho_max]`.
pub fn fit_edge_exponent(
    profile: &EdgeProfile,
    window: (f64, f64),
) -> Result<EdgeFit, AnalysisError> {
    let (lo, hi) = window;
    let pts: Vec<(f64, f64)> = profile
        .rho
        .iter()
        .zip(&profile.e)
        .filter(|(r, e)| **r >= lo * (1.0 - 1e-12) && **r <= hi * (1.0 + 1e-12) && **e > 0.0)
        .map(|(r, e)| (r.ln(), e.ln()))
        .collect();
    if pts.len() < 10 {
        return Err(AnalysisError::InsufficientSamples {
            found: pts.len(),
            needed: 10,
        });
    }
    let (slope, _, r2) = linear_fit(&pts);
    Ok(EdgeFit {
        exponent: slope,
        rho_min: lo,
        rho_max: hi,
        r_squared: r2,
        samples: pts.len(),
    })
}

/// Ordinary least squares; returns (slope, intercept, R²).
pub fn linear_fit(pts: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = pts
        .iter()
        .map(|p| (p.1 - slope * p.0 - intercept).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    (slope, intercept, r2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConductorG {
    pub marker: BoundaryMarker,
    pub g_ohm: f64,
    /// ∮|H|²dl over this conductor, A²/m.
    pub h2_integral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GFactorReport {
    pub conductors: Vec<ConductorG>,
    pub g_total: f64,
    pub h2_integral: f64,
    pub current_a: f64,
    pub frequency_hz: f64,
    /// 2·W_H′ of the dual magnetic field, J/m.
    pub w0_per_m: f64,
}

/// G-factor from a vacuum electrostatic solve using TEM duality.
///
/// The magnetic field is `H = κ|E|` with κ fixed so that the surface current
/// on the metal conductor integrates to `current`.
pub fn g_factor(
    solution: &FieldSolution,
    mesh: &Mesh,
    frequency: f64,
    current: f64,
) -> Result<GFactorReport, AnalysisError> {
    if !(frequency > 0.0) || !(current > 0.0) {
        return Err(AnalysisError::DomainError(
            "frequency and current must be > 0".into(),
        ));
    }
    if let Some((&id, _)) = solution
        .materials
        .iter()
        .find(|(id, m)| m.permittivity != 1.0 && mesh.element_region.contains(id))
    {
        return Err(AnalysisError::NonVacuumSolve(id));
    }
    let edge = boundary_field_samples(solution, mesh);
    // SI: |E|[V/m] = 1e9·|E|[V/nm], dl[m] = 1e-9·dl[nm].
    let mut line_e = 0.0;
    let mut per: BTreeMap<BoundaryMarker, f64> = BTreeMap::new();
    for s in &edge {
        let e2 = s.e.dot(s.e) * s.weight_nm * 1e9;
        *per.entry(s.marker).or_default() += e2;
        if s.marker == BoundaryMarker::DirichletMetal {
            line_e += s.e.norm() * s.weight_nm;
        }
    }
    if !(line_e > 0.0) {
        return Err(AnalysisError::DomainError(
            "no field on the metal conductor".into(),
        ));
    }
    let kappa = current / line_e;
    let area_e2: f64 = solution
        .samples
        .iter()
        .map(|s| s.weight_nm2 * s.e.dot(s.e))
        .sum();
    let w_h = 0.25 * MU_0 * kappa * kappa * area_e2;
    let w0 = 2.0 * w_h;
    let omega = 2.0 * std::f64::consts::PI * frequency;
    let conductors: Vec<ConductorG> = per
        .iter()
        .map(|(&marker, &e2)| {
            let h2 = kappa * kappa * e2;
            ConductorG {
                marker,
                g_ohm: 2.0 * omega * w0 / h2,
                h2_integral: h2,
            }
        })
        .collect();
    let h2: f64 = conductors.iter().map(|c| c.h2_integral).sum();
    Ok(GFactorReport {
        g_total: 2.0 * omega * w0 / h2,
        conductors,
        h2_integral: h2,
        current_a: current,
        frequency_hz: frequency,
        w0_per_m: w0,
    })
}
