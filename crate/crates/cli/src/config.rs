//! JSON run configuration.
//!
//! Every dimensioned key carries its unit as a suffix. Unknown keys are
//! rejected; a key that matches a known one up to its unit suffix is reported
//! as a unit mismatch so that `oxide_thickness` does not silently pass as a
//! typo.

use qsurf_core::geometry::{validate_spec, CrossSectionSpec, OxideLayer};
use qsurf_core::studies::{MeshSettings, Strategy, SweepSpec, SweepVariable};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

const UNIT_SUFFIXES: &[&str] = &[
    "_nm", "_um", "_mm", "_m", "_ghz", "_hz", "_nh", "_h", "_ff", "_f", "_v", "_deg", "_s",
];

#[derive(Debug, Clone, PartialEq, Error, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("unknown key `{key}` (line {line})")]
    UnknownKey { key: String, line: usize },
    #[error("key `{key}` (line {line}) has the wrong unit; expected `{expected}`")]
    UnitMismatch {
        key: String,
        expected: String,
        line: usize,
    },
    #[error("invalid value for `{key}`: {message}")]
    Invalid { key: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fixture {
    CrossSection,
    ParallelPlate,
    Coax,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeometryConfig {
    pub fixture: Fixture,
    pub film_thickness_nm: f64,
    pub sidewall_angle_deg: f64,
    pub r_top_nm: f64,
    pub r_bottom_nm: f64,
    pub trench_depth_nm: f64,
    /// One entry per oxide shell, outward from the metal.
    pub oxide_thickness_nm: Vec<f64>,
    pub substrate_depth_um: f64,
    pub gap_halfwidth_um: f64,
    pub domain_width_um: f64,
    pub domain_height_um: f64,
    pub electrode_voltage_v: f64,
    pub plate_width_nm: f64,
    pub plate_gap_nm: f64,
    pub coax_inner_um: f64,
    pub coax_outer_um: f64,
}

impl Default for GeometryConfig {
    fn default() -> Self {
        let s = CrossSectionSpec::default();
        GeometryConfig {
            fixture: Fixture::CrossSection,
            film_thickness_nm: s.film_thickness_nm,
            sidewall_angle_deg: s.sidewall_angle_deg,
            r_top_nm: s.r_top_nm,
            r_bottom_nm: s.r_bottom_nm,
            trench_depth_nm: s.trench_depth_nm,
            oxide_thickness_nm: s.oxide_layers.iter().map(|l| l.thickness_nm).collect(),
            substrate_depth_um: s.substrate_depth_um,
            gap_halfwidth_um: s.gap_halfwidth_um,
            domain_width_um: s.domain_width_um,
            domain_height_um: s.domain_height_um,
            electrode_voltage_v: s.electrode_voltage_v,
            plate_width_nm: 200.0,
            plate_gap_nm: 10_000.0,
            coax_inner_um: 1000.0,
            coax_outer_um: 2300.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Dielectric {
    pub permittivity: f64,
    pub loss_tangent: f64,
}

impl Default for Dielectric {
    fn default() -> Self {
        Dielectric {
            permittivity: 10.0,
            loss_tangent: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaterialsConfig {
    /// Paired with `geometry.oxide_thickness_nm`.
    pub oxide: Vec<Dielectric>,
    pub substrate: Dielectric,
}

impl Default for MaterialsConfig {
    fn default() -> Self {
        let s = CrossSectionSpec::default();
        MaterialsConfig {
            oxide: s
                .oxide_layers
                .iter()
                .map(|l| Dielectric {
                    permittivity: l.permittivity,
                    loss_tangent: l.loss_tangent,
                })
                .collect(),
            substrate: Dielectric {
                permittivity: s.substrate_permittivity,
                loss_tangent: s.substrate_loss_tangent,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub order: u8,
    pub rel_tol: f64,
    /// Uniform refinements applied after meshing.
    pub refinement_levels: usize,
    pub h_max_nm: f64,
    pub h_corner_nm: f64,
    pub grading: f64,
    pub min_shell_nm: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let m = MeshSettings::default();
        SolverConfig {
            order: 2,
            rel_tol: 1e-10,
            refinement_levels: 0,
            h_max_nm: m.h_max_nm,
            h_corner_nm: m.h_corner_nm,
            grading: m.grading,
            min_shell_nm: m.min_shell_nm,
        }
    }
}

impl SolverConfig {
    pub fn mesh_settings(&self) -> MeshSettings {
        MeshSettings {
            h_max_nm: self.h_max_nm,
            h_corner_nm: self.h_corner_nm,
            grading: self.grading,
            min_shell_nm: self.min_shell_nm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CornerChoice {
    Top,
    Bottom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub variable: SweepVariable,
    /// Values for thickness and trench sweeps.
    pub values_nm: Option<Vec<f64>>,
    /// Values for permittivity and refinement-level sweeps.
    pub values: Option<Vec<f64>>,
    pub strategy: Strategy,
    pub extrapolation_threshold_nm: f64,
    pub extrapolation_target_nm: f64,
    /// Gap of the flat-surface limit; the effective gap when absent.
    pub limit_gap_nm: Option<f64>,
    pub max_refinements: usize,
    pub convergence_tolerance: f64,
    pub edge_corner: CornerChoice,
    pub edge_rho_min_nm: f64,
    pub edge_rho_max_nm: f64,
    pub edge_samples: usize,
    /// Fit window; `[2·r, 0.2·film]` when absent.
    pub edge_window_nm: Option<[f64; 2]>,
    pub perimeter_offset_nm: f64,
    pub perimeter_lead_nm: f64,
    pub perimeter_samples: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            variable: SweepVariable::OxideThickness,
            values_nm: None,
            values: None,
            strategy: Strategy::Remesh,
            extrapolation_threshold_nm: qsurf_core::studies::DEFAULT_THRESHOLD_NM,
            extrapolation_target_nm: 5.0,
            limit_gap_nm: None,
            max_refinements: 3,
            convergence_tolerance: 0.01,
            edge_corner: CornerChoice::Top,
            edge_rho_min_nm: 5.0,
            edge_rho_max_nm: 200.0,
            edge_samples: 80,
            edge_window_nm: None,
            perimeter_offset_nm: 7.5,
            perimeter_lead_nm: 100.0,
            perimeter_samples: 400,
        }
    }
}

impl StudyConfig {
    /// Sweep values with per-variable defaults.
    pub fn sweep_values(&self) -> Vec<f64> {
        let given = match self.variable {
            SweepVariable::OxideThickness | SweepVariable::TrenchDepth => &self.values_nm,
            _ => &self.values,
        };
        given.clone().unwrap_or_else(|| match self.variable {
            SweepVariable::OxideThickness => vec![5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 75.0, 100.0],
            SweepVariable::TrenchDepth => qsurf_core::studies::DEFAULT_TRENCH_NM.to_vec(),
            SweepVariable::Permittivity => vec![1.0, 3.0, 10.0, 20.0, 33.0],
            SweepVariable::RefinementLevel => vec![0.0, 1.0, 2.0],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CircuitConfig {
    pub josephson_inductance_nh: f64,
    pub junction_aspect_ratio: f64,
    pub capacitance_ff: f64,
    pub voltage_v: f64,
    /// Resonant frequency of the lumped circuit when absent.
    pub frequency_ghz: Option<f64>,
}

impl Default for CircuitConfig {
    fn default() -> Self {
        CircuitConfig {
            josephson_inductance_nh: 10.0,
            junction_aspect_ratio: 1.0,
            capacitance_ff: 101.32,
            voltage_v: 1.0,
            frequency_ghz: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputConfig {
    pub directory: Option<String>,
    pub formats: Vec<Format>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            directory: None,
            formats: vec![Format::Csv, Format::Json],
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub geometry: GeometryConfig,
    pub materials: MaterialsConfig,
    pub solver: SolverConfig,
    pub study: StudyConfig,
    pub circuit: CircuitConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    pub fn cross_section(&self) -> CrossSectionSpec {
        let g = &self.geometry;
        let m = &self.materials;
        CrossSectionSpec {
            film_thickness_nm: g.film_thickness_nm,
            sidewall_angle_deg: g.sidewall_angle_deg,
            r_top_nm: g.r_top_nm,
            r_bottom_nm: g.r_bottom_nm,
            trench_depth_nm: g.trench_depth_nm,
            oxide_layers: g
                .oxide_thickness_nm
                .iter()
                .zip(&m.oxide)
                .map(|(&t, d)| OxideLayer {
                    thickness_nm: t,
                    permittivity: d.permittivity,
                    loss_tangent: d.loss_tangent,
                })
                .collect(),
            substrate_permittivity: m.substrate.permittivity,
            substrate_loss_tangent: m.substrate.loss_tangent,
            substrate_depth_um: g.substrate_depth_um,
            gap_halfwidth_um: g.gap_halfwidth_um,
            domain_width_um: g.domain_width_um,
            domain_height_um: g.domain_height_um,
            electrode_voltage_v: g.electrode_voltage_v,
        }
    }

    pub fn sweep_spec(&self) -> SweepSpec {
        let st = &self.study;
        let mut s = SweepSpec::new(
            self.cross_section(),
            st.variable,
            st.sweep_values(),
            st.strategy,
        );
        s.order = self.solver.order;
        s.mesh = self.solver.mesh_settings();
        s.rel_tol = self.solver.rel_tol;
        s
    }

    pub fn wants(&self, f: Format) -> bool {
        self.output.formats.contains(&f)
    }

    /// Pretty JSON echo with every default made explicit.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    fn check(&self) -> Vec<ConfigError> {
        let mut errs = Vec::new();
        let mut bad = |key: &str, message: String| {
            errs.push(ConfigError::Invalid {
                key: key.into(),
                message,
            })
        };
        let g = &self.geometry;
        if g.oxide_thickness_nm.len() != self.materials.oxide.len() {
            bad(
                "materials.oxide",
                format!(
                    "{} oxide materials for {} oxide thicknesses",
                    self.materials.oxide.len(),
                    g.oxide_thickness_nm.len()
                ),
            );
        }
        if !matches!(self.solver.order, 1 | 2) {
            bad(
                "solver.order",
                format!("must be 1 or 2 (got {})", self.solver.order),
            );
        }
        if !(self.solver.rel_tol > 0.0 && self.solver.rel_tol <= 1e-6) {
            bad(
                "solver.rel_tol",
                format!("must lie in (0, 1e-6] (got {})", self.solver.rel_tol),
            );
        }
        match g.fixture {
            Fixture::CrossSection => {
                for v in validate_spec(&self.cross_section()) {
                    bad(&format!("geometry.{}", v.field), v.message);
                }
            }
            Fixture::ParallelPlate => {
                let used: f64 = g.oxide_thickness_nm.iter().sum();
                if !(g.plate_width_nm > 0.0 && g.plate_gap_nm > used) {
                    bad(
                        "geometry.plate_gap_nm",
                        "plate width must be > 0 and the gap must exceed the oxide stack".into(),
                    );
                }
            }
            Fixture::Coax => {
                if !(g.coax_inner_um > 0.0 && g.coax_outer_um > g.coax_inner_um) {
                    bad("geometry.coax_outer_um", "need 0 < inner < outer".into());
                }
            }
        }
        let c = &self.circuit;
        if !(c.josephson_inductance_nh > 0.0 && c.capacitance_ff > 0.0) {
            bad("circuit", "inductance and capacitance must be > 0".into());
        }
        if c.frequency_ghz.is_some_and(|f| !(f > 0.0)) {
            bad("circuit.frequency_ghz", "must be > 0".into());
        }
        let st = &self.study;
        let (want, other) = match st.variable {
            SweepVariable::OxideThickness | SweepVariable::TrenchDepth => ("values_nm", &st.values),
            _ => ("values", &st.values_nm),
        };
        if other.is_some() {
            bad(
                "study",
                format!(
                    "`{}` sweeps take their values from `{want}`",
                    st.variable.name()
                ),
            );
        }
        if !(st.convergence_tolerance > 0.0) {
            bad("study.convergence_tolerance", "must be > 0".into());
        }
        errs
    }
}

fn line_of(text: &str, key: &str) -> usize {
    let needle = format!("\"{key}\"");
    text.lines()
        .position(|l| l.contains(&needle))
        .map(|i| i + 1)
        .unwrap_or(0)
}

fn stem(key: &str) -> &str {
    UNIT_SUFFIXES
        .iter()
        .find_map(|s| key.strip_suffix(s))
        .unwrap_or(key)
}

/// Compares `given` against the keys of `template`, recursing into objects
/// and arrays of objects.
fn check_keys(
    text: &str,
    path: &str,
    given: &Map<String, Value>,
    template: &Map<String, Value>,
    errs: &mut Vec<ConfigError>,
) {
    for (k, v) in given {
        let full = if path.is_empty() {
            k.clone()
        } else {
            format!("{path}.{k}")
        };
        match template.get(k) {
            Some(t) => match (v, t) {
                (Value::Object(g), Value::Object(t)) => check_keys(text, &full, g, t, errs),
                (Value::Array(items), Value::Array(t)) => {
                    if let Some(Value::Object(t0)) = t.first() {
                        for item in items {
                            if let Value::Object(g) = item {
                                check_keys(text, &full, g, t0, errs);
                            }
                        }
                    }
                }
                _ => {}
            },
            None => {
                let line = line_of(text, k);
                match template
                    .keys()
                    .find(|t| stem(t) == stem(k) && t.as_str() != k)
                {
                    Some(expected) => errs.push(ConfigError::UnitMismatch {
                        key: full,
                        expected: expected.clone(),
                        line,
                    }),
                    None => errs.push(ConfigError::UnknownKey { key: full, line }),
                }
            }
        }
    }
}

/// Parses and validates a JSON run configuration.
pub fn parse_config(text: &str) -> Result<RunConfig, Vec<ConfigError>> {
    let value: Value = serde_json::from_str(text).map_err(|e| {
        vec![ConfigError::ParseError {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }]
    })?;
    let Value::Object(root) = &value else {
        return Err(vec![ConfigError::ParseError {
            line: 1,
            column: 1,
            message: "top level must be an object".into(),
        }]);
    };
    // Templates carry every key, including the default-absent optional ones.
    let mut template = serde_json::to_value(RunConfig::default()).expect("defaults serialize");
    template["materials"]["oxide"] = serde_json::to_value(vec![Dielectric::default()]).unwrap();
    let mut errs = Vec::new();
    check_keys(text, "", root, template.as_object().unwrap(), &mut errs);
    if !errs.is_empty() {
        return Err(errs);
    }
    let cfg: RunConfig = serde_json::from_value(value).map_err(|e| {
        vec![ConfigError::ParseError {
            line: 0,
            column: 0,
            message: e.to_string(),
        }]
    })?;
    let errs = cfg.check();
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(errs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let cfg = parse_config(r#"{"geometry": {"film_thickness_nm": 200}, "materials": {"substrate": {"permittivity": 11.7}}}"#).unwrap();
        assert_eq!(cfg.solver.order, 2);
        assert_eq!(cfg.materials.substrate.permittivity, 11.7);
        assert_eq!(
            cfg.materials.substrate.loss_tangent,
            Dielectric::default().loss_tangent
        );
        assert!(cfg.to_json().contains("\"rel_tol\": 1e-10"));
    }

    #[test]
    fn missing_unit_is_a_mismatch() {
        let errs =
            parse_config("{\n  \"geometry\": {\n    \"oxide_thickness\": [5]\n  }\n}").unwrap_err();
        assert_eq!(
            errs,
            vec![ConfigError::UnitMismatch {
                key: "geometry.oxide_thickness".into(),
                expected: "oxide_thickness_nm".into(),
                line: 3
            }]
        );
        let errs = parse_config(r#"{"geometry": {"film_thickness_um": 0.2}}"#).unwrap_err();
        assert!(
            matches!(&errs[0], ConfigError::UnitMismatch { expected, .. } if expected == "film_thickness_nm")
        );
    }

    #[test]
    fn unknown_keys_are_listed() {
        let errs = parse_config(r#"{"geometry": {"colour": 1}, "extras": {}, "materials": {"oxide": [{"permittivity": 3, "grain": 1}]}}"#).unwrap_err();
        let keys: Vec<String> = errs
            .iter()
            .map(|e| match e {
                ConfigError::UnknownKey { key, .. } => key.clone(),
                other => panic!("{other:?}"),
            })
            .collect();
        assert_eq!(keys, ["extras", "geometry.colour", "materials.oxide.grain"]);
    }

    #[test]
    fn syntax_errors_carry_position() {
        let errs = parse_config("{\n  \"geometry\": {,}\n}").unwrap_err();
        assert!(matches!(errs[0], ConfigError::ParseError { line: 2, .. }));
    }

    #[test]
    fn round_trip() {
        let mut cfg = RunConfig::default();
        cfg.study.values_nm = Some(vec![5.0, 25.0]);
        cfg.circuit.frequency_ghz = Some(4.5);
        cfg.geometry.fixture = Fixture::ParallelPlate;
        assert_eq!(parse_config(&cfg.to_json()).unwrap(), cfg);
        assert_eq!(
            parse_config(&RunConfig::default().to_json()).unwrap(),
            RunConfig::default()
        );
    }

    #[test]
    fn semantic_errors() {
        let errs = parse_config(
            r#"{"solver": {"order": 3, "rel_tol": 1e-3}, "geometry": {"film_thickness_nm": -1}}"#,
        )
        .unwrap_err();
        let keys: Vec<&str> = errs
            .iter()
            .filter_map(|e| match e {
                ConfigError::Invalid { key, .. } => Some(key.as_str()),
                _ => None,
            })
            .collect();
        assert!(keys.contains(&"solver.order") && keys.contains(&"solver.rel_tol"));
        assert!(
            keys.iter().any(|k| k.starts_with("geometry.film")),
            "{keys:?}"
        );
        let errs = parse_config(r#"{"study": {"variable": "permittivity", "values_nm": [1]}}"#)
            .unwrap_err();
        assert!(matches!(&errs[0], ConfigError::Invalid { key, .. } if key == "study"));
    }
}
