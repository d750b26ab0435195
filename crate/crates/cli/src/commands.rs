//! Subcommands. Each one computes all of its artifacts in memory; writing
//! them is left to [`crate::output`].

use std::fmt::Write as _;

use qsurf_core::analysis::{
    fit_edge_exponent, g_factor, local_maxima, region_energies, sample_edge_field, EnergyReport,
    ProfileMode,
};
use qsurf_core::circuit::{
    energy_balance, loss_budget_with_provenance, resonant_frequency, LumpedQubit,
};
use qsurf_core::fem::{fields_csv, solve_mesh, FieldSolution};
use qsurf_core::fmt_sig9 as f9;
use qsurf_core::geometry::{build_cross_section, fixtures, CrossSection, MaterialKind, RegionSet};
use qsurf_core::meshing::{generate_mesh, Mesh, SizeField};
use qsurf_core::studies::{
    compare_to_limit, effective_gap, extrapolate_linear, run_convergence_study, run_sweep,
    SweepVariable,
};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{ConfigError, CornerChoice, Fixture, Format, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Solve,
    Epr,
    EdgeFit,
    Sweep,
    Converge,
    Budget,
    MeshDump,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Epr => "epr",
            Command::EdgeFit => "edge-fit",
            Command::Sweep => "sweep",
            Command::Converge => "converge",
            Command::Budget => "budget",
            Command::MeshDump => "mesh-dump",
        }
    }
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid configuration")]
    Config(Vec<ConfigError>),
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Validation(_) => 2,
            RunError::Numerical(_) => 3,
        }
    }

    pub fn to_json(&self) -> Value {
        let (kind, details) = match self {
            RunError::Config(errs) => ("validation", serde_json::to_value(errs).unwrap()),
            RunError::Validation(_) => ("validation", Value::Null),
            RunError::Numerical(_) => ("numerical", Value::Null),
        };
        json!({
            "status": "error",
            "exit_code": self.exit_code(),
            "kind": kind,
            "message": self.to_string(),
            "errors": details,
        })
    }
}

fn numerical(e: impl std::fmt::Display) -> RunError {
    RunError::Numerical(e.to_string())
}

pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Default)]
pub struct Outcome {
    pub artifacts: Vec<Artifact>,
    pub mesh_hashes: Vec<String>,
}

impl Outcome {
    fn push(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.artifacts.push(Artifact {
            name: name.into(),
            bytes: bytes.into(),
        });
    }
}

/// Rounds every float in `v` to 9 significant digits.
fn round9(v: Value) -> Value {
    match v {
        Value::Number(n) if n.is_f64() => {
            let r: f64 = f9(n.as_f64().unwrap()).parse().unwrap();
            serde_json::Number::from_f64(r)
                .map(Value::Number)
                .unwrap_or(Value::Null)
        }
        Value::Array(a) => Value::Array(a.into_iter().map(round9).collect()),
        Value::Object(o) => Value::Object(o.into_iter().map(|(k, v)| (k, round9(v))).collect()),
        other => other,
    }
}

/// Pretty JSON with 9-significant-digit floats.
pub fn json_bytes(v: &impl Serialize) -> Vec<u8> {
    let mut s =
        serde_json::to_string_pretty(&round9(serde_json::to_value(v).expect("serializable")))
            .unwrap();
    s.push('\n');
    s.into_bytes()
}

fn region_set(cfg: &RunConfig) -> Result<RegionSet, RunError> {
    let g = &cfg.geometry;
    Ok(match g.fixture {
        Fixture::CrossSection => build_cross_section(&cfg.cross_section())
            .map_err(|e| RunError::Validation(e.to_string()))?,
        Fixture::ParallelPlate => {
            let shells: Vec<(f64, f64)> = g
                .oxide_thickness_nm
                .iter()
                .zip(&cfg.materials.oxide)
                .map(|(&t, d)| (t, d.permittivity))
                .collect();
            fixtures::parallel_plate(g.plate_width_nm, g.plate_gap_nm, &shells)
        }
        Fixture::Coax => fixtures::coax_quarter(g.coax_inner_um * 1e3, g.coax_outer_um * 1e3, 96),
    })
}

/// Meshes the configured geometry, or adopts `seed`.
pub fn build_mesh(cfg: &RunConfig, seed: Option<&Mesh>) -> Result<Mesh, RunError> {
    let order = cfg.solver.order;
    let mut mesh = match seed {
        Some(m) => m.with_order(1),
        None => {
            let rs = region_set(cfg)?;
            let g = &cfg.geometry;
            let m = match g.fixture {
                Fixture::CrossSection => cfg.solver.mesh_settings().mesh(&rs, 1),
                Fixture::ParallelPlate => generate_mesh(
                    &rs,
                    &SizeField::uniform(cfg.solver.h_max_nm.min(g.plate_gap_nm / 10.0)),
                    1,
                ),
                // The coax is millimetre-scale; a fixed relative size keeps it tractable.
                Fixture::Coax => generate_mesh(
                    &rs,
                    &SizeField::uniform((g.coax_outer_um - g.coax_inner_um) * 50.0),
                    1,
                ),
            };
            m.map_err(numerical)?
        }
    };
    for _ in 0..cfg.solver.refinement_levels {
        mesh = mesh.refine_curved();
    }
    let mut mesh = mesh.with_order(order);
    if seed.is_none() && cfg.geometry.fixture == Fixture::ParallelPlate {
        for r in &mut mesh.regions {
            if let MaterialKind::Oxide(i) = r.material.kind {
                r.material.loss_tangent = cfg.materials.oxide[i].loss_tangent;
            }
        }
    }
    Ok(mesh)
}

struct Solved {
    mesh: Mesh,
    sol: FieldSolution,
    report: EnergyReport,
}

fn frequency_hz(cfg: &RunConfig) -> Result<f64, RunError> {
    match cfg.circuit.frequency_ghz {
        Some(f) => Ok(f * 1e9),
        None => resonant_frequency(&qubit(cfg)).map_err(|e| RunError::Validation(e.to_string())),
    }
}

fn qubit(cfg: &RunConfig) -> LumpedQubit {
    let c = &cfg.circuit;
    LumpedQubit {
        josephson_inductance: c.josephson_inductance_nh * 1e-9,
        junction_aspect_ratio: c.junction_aspect_ratio,
        capacitance: c.capacitance_ff * 1e-15,
        voltage: c.voltage_v,
    }
}

fn solve(cfg: &RunConfig, seed: Option<&Mesh>) -> Result<Solved, RunError> {
    let mesh = build_mesh(cfg, seed)?;
    let sol = solve_mesh(&mesh, cfg.geometry.electrode_voltage_v, cfg.solver.rel_tol)
        .map_err(numerical)?;
    let mut report = region_energies(&sol, &mesh, &mesh.materials());
    if mesh.regions.iter().all(|r| r.material.permittivity == 1.0) {
        let f = frequency_hz(cfg)?;
        report.g_factor = Some(g_factor(&sol, &mesh, f, 1.0).map_err(numerical)?);
    }
    Ok(Solved { mesh, sol, report })
}

fn oxide_ids(report: &EnergyReport) -> Vec<usize> {
    report
        .regions
        .iter()
        .filter(|r| matches!(r.material.kind, MaterialKind::Oxide(_)))
        .map(|r| r.region_id)
        .collect()
}

fn epr_csv(report: &EnergyReport) -> String {
    let mut s = String::from("quantity,value\n");
    for r in &report.regions {
        let _ = writeln!(s, "epr_region_{},{}", r.region_id, f9(r.epr));
    }
    for class in ["oxide", "substrate", "vacuum"] {
        let _ = writeln!(s, "epr_{class},{}", f9(report.class_epr(class)));
    }
    if report
        .regions
        .iter()
        .any(|r| r.top_surface_w_e_per_m.is_some())
    {
        let _ = writeln!(
            s,
            "epr_top_surface,{}",
            f9(report.top_surface_epr(&oxide_ids(report)))
        );
    }
    let _ = writeln!(s, "W_E_per_m,{}", f9(report.total_w_e_per_m));
    let _ = writeln!(s, "C_per_m,{}", f9(report.capacitance_per_m));
    if let Some(g) = &report.g_factor {
        let _ = writeln!(s, "G_ohm,{}", f9(g.g_total));
    }
    s
}

fn cross_section_only(cfg: &RunConfig, cmd: Command) -> Result<CrossSection, RunError> {
    if cfg.geometry.fixture != Fixture::CrossSection {
        return Err(RunError::Validation(format!(
            "`{}` needs the cross_section fixture",
            cmd.name()
        )));
    }
    CrossSection::new(&cfg.cross_section()).map_err(|e| RunError::Validation(e.to_string()))
}

/// Runs one subcommand and returns its artifacts.
pub fn run_command(
    cmd: Command,
    cfg: &RunConfig,
    seed: Option<&Mesh>,
) -> Result<Outcome, RunError> {
    if seed.is_some() && matches!(cmd, Command::Sweep | Command::Converge) {
        return Err(RunError::Validation(format!(
            "--seed-mesh does not apply to `{}`",
            cmd.name()
        )));
    }
    let csv = cfg.wants(Format::Csv);
    let js = cfg.wants(Format::Json);
    let mut out = Outcome::default();
    match cmd {
        Command::Solve => {
            let s = solve(cfg, seed)?;
            out.mesh_hashes.push(s.mesh.topology_hash());
            if csv {
                out.push("fields.csv", fields_csv(&s.sol, &s.mesh));
            }
            if js {
                out.push("diagnostics.json", json_bytes(&s.sol.diagnostics));
                out.push("energy.json", s.report.to_json());
            }
        }
        Command::Epr => {
            let s = solve(cfg, seed)?;
            out.mesh_hashes.push(s.mesh.topology_hash());
            if csv {
                out.push("epr.csv", epr_csv(&s.report));
            }
            if js {
                out.push("energy.json", s.report.to_json());
            }
        }
        Command::EdgeFit => {
            let xs = cross_section_only(cfg, cmd)?;
            let s = solve(cfg, seed)?;
            out.mesh_hashes.push(s.mesh.topology_hash());
            let st = &cfg.study;
            let corner = match st.edge_corner {
                CornerChoice::Top => xs.top_corner(),
                CornerChoice::Bottom => xs.bottom_corner(),
            };
            let ray = ProfileMode::Ray {
                rho_min: st.edge_rho_min_nm,
                rho_max: st.edge_rho_max_nm,
                samples: st.edge_samples,
            };
            let prof = sample_edge_field(&s.sol, &s.mesh, &corner, &ray)
                .map_err(|e| RunError::Validation(e.to_string()))?;
            let window = st.edge_window_nm.unwrap_or([
                2.0 * corner.rounding_radius_nm,
                0.2 * cfg.geometry.film_thickness_nm,
            ]);
            let fit = fit_edge_exponent(&prof, (window[0], window[1]))
                .map_err(|e| RunError::Validation(e.to_string()))?;
            let path = xs.perimeter_path(st.perimeter_offset_nm, st.perimeter_lead_nm);
            let per = sample_edge_field(
                &s.sol,
                &s.mesh,
                &corner,
                &ProfileMode::Perimeter {
                    path,
                    samples: st.perimeter_samples,
                },
            )
            .map_err(|e| RunError::Validation(e.to_string()))?;
            let maxima: Vec<f64> = local_maxima(&per.e, 0.05)
                .iter()
                .map(|&i| per.rho[i])
                .collect();
            if csv {
                out.push("edge_profile.csv", prof.to_csv());
                out.push(
                    "perimeter_profile.csv",
                    per.to_csv().replacen("rho_nm", "s_nm", 1),
                );
            }
            if js {
                out.push(
                    "edge_fit.json",
                    json_bytes(&json!({
                        "corner": corner.label,
                        "apex_nm": [corner.apex.x, corner.apex.y],
                        "fit": fit,
                        "perimeter_maxima_s_nm": maxima,
                    })),
                );
            }
        }
        Command::Sweep => {
            cross_section_only(cfg, cmd)?;
            let spec = cfg.sweep_spec();
            let r = run_sweep(&spec).map_err(|e| match e {
                qsurf_core::studies::StudyError::Precondition(m) => RunError::Validation(m),
                qsurf_core::studies::StudyError::Geometry(g) => RunError::Validation(g.to_string()),
                other => numerical(other),
            })?;
            out.mesh_hashes = r.points.iter().map(|p| p.mesh_hash.clone()).collect();
            out.mesh_hashes.dedup();
            if csv {
                out.push("sweep.csv", r.to_csv());
            }
            if js {
                let points: Vec<Value> = r
                    .points
                    .iter()
                    .map(|p| {
                        json!({
                            "value": p.value,
                            "oxide_epr": p.oxide_epr,
                            "top_surface_epr": p.top_surface_epr,
                            "C_per_m": p.report.capacitance_per_m,
                            "dof": p.dof,
                            "iterations": p.iterations,
                            "mesh_hash": p.mesh_hash,
                        })
                    })
                    .collect();
                let mut doc = json!({
                    "variable": r.variable,
                    "strategy": r.strategy,
                    "order": r.order,
                    "points": points,
                });
                let st = &cfg.study;
                match r.variable {
                    SweepVariable::OxideThickness => {
                        let pts: Vec<(f64, f64)> =
                            r.points.iter().map(|p| (p.value, p.oxide_epr)).collect();
                        doc["extrapolation"] = match extrapolate_linear(
                            &pts,
                            st.extrapolation_threshold_nm,
                            st.extrapolation_target_nm,
                        ) {
                            Ok(x) => serde_json::to_value(x).unwrap(),
                            Err(e) => json!({ "skipped": e.to_string() }),
                        };
                    }
                    SweepVariable::Permittivity => {
                        let t = spec.base.total_oxide_nm();
                        let gap = match st.limit_gap_nm {
                            Some(g) => Ok(g),
                            None => effective_gap(&r, t),
                        };
                        doc["limit"] = match gap
                            .and_then(|g| compare_to_limit(&r, g, t).map(|l| (g, l)))
                        {
                            Ok((g, l)) => json!({ "gap_nm": g, "thickness_nm": t, "ratios": l }),
                            Err(e) => json!({ "skipped": e.to_string() }),
                        };
                    }
                    _ => {}
                }
                out.push("sweep.json", json_bytes(&doc));
            }
        }
        Command::Converge => {
            cross_section_only(cfg, cmd)?;
            let st = &cfg.study;
            let rep = run_convergence_study(
                &cfg.cross_section(),
                st.max_refinements,
                st.convergence_tolerance,
                &cfg.solver.mesh_settings(),
            )
            .map_err(|e| match e {
                qsurf_core::studies::StudyError::Precondition(m) => RunError::Validation(m),
                other => numerical(other),
            })?;
            if csv {
                let mut s = String::from("order,level,dof,epr,delta\n");
                for series in &rep.series {
                    for (i, (d, e)) in series.dofs.iter().zip(&series.eprs).enumerate() {
                        let delta = if i == 0 {
                            String::new()
                        } else {
                            f9(series.deltas[i - 1])
                        };
                        let _ = writeln!(s, "{},{},{},{},{}", series.order, i, d, f9(*e), delta);
                    }
                }
                out.push("convergence.csv", s);
            }
            if js {
                out.push("convergence.json", json_bytes(&rep));
            }
        }
        Command::Budget => {
            let s = solve(cfg, seed)?;
            out.mesh_hashes.push(s.mesh.topology_hash());
            let q = qubit(cfg);
            let f0 = resonant_frequency(&q).map_err(|e| RunError::Validation(e.to_string()))?;
            let f = frequency_hz(cfg)?;
            let balance = energy_balance(&q).map_err(|e| RunError::Validation(e.to_string()))?;
            let provenance = format!("epr solve, mesh {}", &s.mesh.topology_hash()[..12]);
            let layers: Vec<(String, f64, f64, Option<String>)> = s
                .report
                .regions
                .iter()
                .filter(|r| r.material.loss_tangent > 0.0 && r.epr > 0.0)
                .map(|r| {
                    (
                        format!("region_{}_{}", r.region_id, r.material.kind),
                        r.epr,
                        r.material.loss_tangent,
                        Some(provenance.clone()),
                    )
                })
                .collect();
            let budget = loss_budget_with_provenance(&layers, f)
                .map_err(|e| RunError::Validation(e.to_string()))?;
            if csv {
                let mut t = String::from("label,epr,tan_delta,Q\n");
                for c in &budget.contributions {
                    let _ = writeln!(
                        t,
                        "{},{},{},{}",
                        c.label,
                        f9(c.epr),
                        f9(c.tan_delta),
                        f9(c.q)
                    );
                }
                let _ = writeln!(t, "total,,,{}", f9(budget.q_total));
                out.push("budget.csv", t);
            }
            if js {
                out.push(
                    "budget.json",
                    json_bytes(&json!({
                        "resonant_frequency_hz": f0,
                        "frequency_hz": f,
                        "energy_balance": balance,
                        "q_total": if budget.q_total.is_finite() { json!(budget.q_total) } else { json!("inf") },
                        "t1_s": if budget.t1_s.is_finite() { json!(budget.t1_s) } else { json!("inf") },
                        "contributions": budget.contributions.iter().map(|c| json!({
                            "label": c.label,
                            "epr": c.epr,
                            "tan_delta": c.tan_delta,
                            "q": if c.q.is_finite() { json!(c.q) } else { json!("inf") },
                            "provenance": c.provenance,
                        })).collect::<Vec<_>>(),
                    })),
                );
            }
        }
        Command::MeshDump => {
            let mesh = build_mesh(cfg, seed)?;
            out.mesh_hashes.push(mesh.topology_hash());
            out.push("mesh.txt", mesh.to_text());
            if js {
                out.push("quality.json", json_bytes(&mesh.quality()));
                if seed.is_none() {
                    out.push("geometry.json", region_set(cfg)?.to_echo_json());
                }
            }
        }
    }
    Ok(out)
}
