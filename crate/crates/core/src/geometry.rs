//! Parametrized 2D cross-section of a superconducting film edge.
//!
//! The film occupies `x < 0`, `0 < y < film_thickness` (the origin is where
//! the unrounded sidewall meets the substrate plane). Its exposed contour runs
//! along the top face, around the rounded top corner, down the sidewall and
//! through a partial rounding at the base that meets the substrate plane at a
//! finite angle. Oxide shells are exact conformal offsets of that contour,
//! clipped at the substrate plane. The counter-electrode is the antisymmetry
//! plane `x = gap_halfwidth`.
//!
//! All geometry is in nanometres. Arcs are discretized to chords; every
//! shared boundary between two regions is built from the same vertex list so
//! the regions tile the box exactly.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};
use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest allowed chord sagitta when discretizing arcs.
pub const MAX_SAGITTA_NM: f64 = 0.2;
/// Largest angular step per chord, radians.
pub const MAX_ARC_STEP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dot(self, o: Point) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Point) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, o: Point) -> f64 {
        (self - o).norm()
    }

    pub fn normalized(self) -> Point {
        let n = self.norm();
        Point::new(self.x / n, self.y / n)
    }

    pub fn polar(r: f64, angle: f64) -> Point {
        Point::new(r * angle.cos(), r * angle.sin())
    }

    pub fn lerp(self, o: Point, s: f64) -> Point {
        Point::new(self.x + (o.x - self.x) * s, self.y + (o.y - self.y) * s)
    }
}

impl Add for Point {
    type Output = Point;
    fn add(self, o: Point) -> Point {
        Point::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Point {
    type Output = Point;
    fn sub(self, o: Point) -> Point {
        Point::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Point {
    type Output = Point;
    fn mul(self, s: f64) -> Point {
        Point::new(self.x * s, self.y * s)
    }
}

/// Distance from `p` to the segment `[a, b]`.
pub fn point_segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let ab = b - a;
    let len2 = ab.dot(ab);
    if len2 == 0.0 {
        return p.dist(a);
    }
    let s = ((p - a).dot(ab) / len2).clamp(0.0, 1.0);
    p.dist(a.lerp(b, s))
}

/// Distance from `p` to an open polyline.
pub fn point_polyline_distance(p: Point, line: &[Point]) -> f64 {
    match line.len() {
        0 => f64::INFINITY,
        1 => p.dist(line[0]),
        _ => line
            .windows(2)
            .map(|w| point_segment_distance(p, w[0], w[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

/// Signed shoelace area of a closed polygon (counter-clockwise positive).
pub fn polygon_signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    let mut acc = 0.0;
    for i in 0..n {
        acc += poly[i].cross(poly[(i + 1) % n]);
    }
    0.5 * acc
}

pub fn polygon_area(poly: &[Point]) -> f64 {
    polygon_signed_area(poly).abs()
}

/// Crossing-number point-in-polygon test.
pub fn point_in_polygon(p: Point, poly: &[Point]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// True when two closed polygons' edges properly cross somewhere (touching
/// at shared vertices does not count).
fn polygon_self_intersects(poly: &[Point]) -> bool {
    let n = poly.len();
    for i in 0..n {
        let (a0, a1) = (poly[i], poly[(i + 1) % n]);
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let (b0, b1) = (poly[j], poly[(j + 1) % n]);
            if segments_cross(a0, a1, b0, b1) {
                return true;
            }
        }
    }
    false
}

fn segments_cross(a0: Point, a1: Point, b0: Point, b1: Point) -> bool {
    let d1 = (a1 - a0).cross(b0 - a0);
    let d2 = (a1 - a0).cross(b1 - a0);
    let d3 = (b1 - b0).cross(a0 - b0);
    let d4 = (b1 - b0).cross(a1 - b0);
    d1 * d2 < 0.0 && d3 * d4 < 0.0
}

/// Which virtual moving-mesh layer a region belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VirtualLayer {
    /// Conformal shell above the metal, counted outward from the innermost
    /// virtual shell.
    Shell(usize),
    /// Substrate slab below the interface, counted downward.
    Slab(usize),
}

impl fmt::Display for VirtualLayer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            VirtualLayer::Shell(i) => write!(f, "shell{i}"),
            VirtualLayer::Slab(i) => write!(f, "slab{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MaterialKind {
    Vacuum,
    Oxide(usize),
    Substrate,
    /// Unassigned moving-mesh layer; behaves as its default fill until a
    /// mapping reassigns it.
    Virtual(VirtualLayer),
}

impl MaterialKind {
    /// Energy-accounting class name (`vacuum`, `oxide`, `substrate`).
    pub fn class(&self) -> &'static str {
        match self {
            MaterialKind::Vacuum => "vacuum",
            MaterialKind::Oxide(_) => "oxide",
            MaterialKind::Substrate => "substrate",
            MaterialKind::Virtual(VirtualLayer::Shell(_)) => "vacuum",
            MaterialKind::Virtual(VirtualLayer::Slab(_)) => "substrate",
        }
    }
}

impl fmt::Display for MaterialKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaterialKind::Vacuum => write!(f, "vacuum"),
            MaterialKind::Oxide(i) => write!(f, "oxide{i}"),
            MaterialKind::Substrate => write!(f, "substrate"),
            MaterialKind::Virtual(v) => write!(f, "virtual_{v}"),
        }
    }
}

/// Dielectric assignment of a region. `loss_tangent` is tan Δ = ε″/ε′.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaterialTag {
    pub kind: MaterialKind,
    pub permittivity: f64,
    pub loss_tangent: f64,
}

impl MaterialTag {
    pub fn vacuum() -> Self {
        MaterialTag {
            kind: MaterialKind::Vacuum,
            permittivity: 1.0,
            loss_tangent: 0.0,
        }
    }

    pub fn oxide(index: usize, permittivity: f64, loss_tangent: f64) -> Self {
        MaterialTag {
            kind: MaterialKind::Oxide(index),
            permittivity,
            loss_tangent,
        }
    }

    pub fn substrate(permittivity: f64, loss_tangent: f64) -> Self {
        MaterialTag {
            kind: MaterialKind::Substrate,
            permittivity,
            loss_tangent,
        }
    }

    pub fn is_valid(&self) -> bool {
        self.permittivity >= 1.0 && self.loss_tangent >= 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BoundaryMarker {
    DirichletMetal,
    DirichletGround,
    NeumannSymmetry,
    Outer,
}

impl BoundaryMarker {
    pub fn is_dirichlet(self) -> bool {
        matches!(
            self,
            BoundaryMarker::DirichletMetal | BoundaryMarker::DirichletGround
        )
    }

    pub fn code(self) -> u8 {
        match self {
            BoundaryMarker::DirichletMetal => 0,
            BoundaryMarker::DirichletGround => 1,
            BoundaryMarker::NeumannSymmetry => 2,
            BoundaryMarker::Outer => 3,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        Some(match c {
            0 => BoundaryMarker::DirichletMetal,
            1 => BoundaryMarker::DirichletGround,
            2 => BoundaryMarker::NeumannSymmetry,
            3 => BoundaryMarker::Outer,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanarRegion {
    pub region_id: usize,
    /// Closed polygon, implicitly closed (last vertex connects to first).
    pub boundary: Vec<Point>,
    pub material: MaterialTag,
    pub virtual_layer: Option<VirtualLayer>,
    /// Nominal thickness for conformal shell layers.
    pub layer_thickness_nm: Option<f64>,
}

impl PlanarRegion {
    pub fn area(&self) -> f64 {
        polygon_area(&self.boundary)
    }
}

/// A constraint polyline the mesher must respect, with an optional cap on
/// edge length along it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub points: Vec<Point>,
    pub max_spacing_nm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkedPolyline {
    pub marker: BoundaryMarker,
    pub points: Vec<Point>,
}

/// A true circular arc underlying part of a Dirichlet boundary, used to place
/// P2 midside nodes on the arc instead of the chord.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryArc {
    pub center: Point,
    pub radius: f64,
    /// Start angle and signed sweep, radians.
    pub start_angle: f64,
    pub sweep: f64,
}

impl BoundaryArc {
    /// Whether `p` lies on this arc within `tol`.
    pub fn contains(&self, p: Point, tol: f64) -> bool {
        let d = p - self.center;
        if (d.norm() - self.radius).abs() > tol {
            return false;
        }
        let (lo, hi) = if self.sweep >= 0.0 {
            (self.start_angle, self.start_angle + self.sweep)
        } else {
            (self.start_angle + self.sweep, self.start_angle)
        };
        let mut a = d.y.atan2(d.x);
        let slack = tol / self.radius.max(tol);
        while a < lo - slack {
            a += std::f64::consts::TAU;
        }
        while a > hi + slack {
            a -= std::f64::consts::TAU;
        }
        a >= lo - slack && a <= hi + slack
    }

    pub fn project(&self, p: Point) -> Point {
        self.center + (p - self.center).normalized() * self.radius
    }
}

/// A rounded (or sharp) corner of the metal contour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CornerSite {
    pub label: String,
    /// Apex of the unrounded corner; edge-law distances are measured from here.
    pub apex: Point,
    /// Unit vector along the bisector of the exterior (field) side.
    pub bisector: Point,
    pub rounding_radius_nm: f64,
    /// A point on the discretized contour closest to the corner, used as the
    /// size-field anchor.
    pub anchor: Point,
}

/// Regions tiling the box minus the metal, plus everything a mesher needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSet {
    pub regions: Vec<PlanarRegion>,
    /// Metal (excluded) polygons.
    pub excluded: Vec<Vec<Point>>,
    pub curves: Vec<Curve>,
    pub boundaries: Vec<MarkedPolyline>,
    pub arcs: Vec<BoundaryArc>,
    pub corner_sites: Vec<CornerSite>,
    pub bbox_min: Point,
    pub bbox_max: Point,
    /// Abscissa separating the flat top-surface part of the shells from the
    /// corner/sidewall part, if the geometry has one.
    pub top_cut_x: Option<f64>,
}

impl RegionSet {
    pub fn box_area(&self) -> f64 {
        (self.bbox_max.x - self.bbox_min.x) * (self.bbox_max.y - self.bbox_min.y)
    }

    pub fn excluded_area(&self) -> f64 {
        self.excluded.iter().map(|p| polygon_area(p)).sum()
    }

    pub fn region_area_sum(&self) -> f64 {
        self.regions.iter().map(|r| r.area()).sum()
    }

    pub fn region(&self, id: usize) -> Option<&PlanarRegion> {
        self.regions.iter().find(|r| r.region_id == id)
    }

    /// Region containing `p`, `None` for metal or outside the box.
    pub fn locate(&self, p: Point) -> Option<usize> {
        if self.excluded.iter().any(|m| point_in_polygon(p, m)) {
            return None;
        }
        self.regions
            .iter()
            .find(|r| point_in_polygon(p, &r.boundary))
            .map(|r| r.region_id)
    }

    /// Geometry echo: regions as vertex arrays (nm, 6 decimals) with tags.
    pub fn to_echo_json(&self) -> String {
        fn poly(points: &[Point]) -> String {
            let items: Vec<String> = points
                .iter()
                .map(|p| format!("[{:.6},{:.6}]", p.x, p.y))
                .collect();
            format!("[{}]", items.join(","))
        }
        let mut out = String::from("{\n  \"units\": \"nm\",\n  \"regions\": [\n");
        for (i, r) in self.regions.iter().enumerate() {
            let virt = match r.virtual_layer {
                Some(v) => format!("\"{v}\""),
                None => "null".to_string(),
            };
            out.push_str(&format!(
                "    {{\"region_id\": {}, \"material\": \"{}\", \"class\": \"{}\", \"permittivity\": {}, \"loss_tangent\": {}, \"virtual\": {}, \"vertices\": {}}}{}\n",
                r.region_id,
                r.material.kind,
                r.material.kind.class(),
                crate::fmt_sig9(r.material.permittivity),
                crate::fmt_sig9(r.material.loss_tangent),
                virt,
                poly(&r.boundary),
                if i + 1 < self.regions.len() { "," } else { "" }
            ));
        }
        out.push_str("  ],\n  \"metal\": [");
        let metal: Vec<String> = self.excluded.iter().map(|m| poly(m)).collect();
        out.push_str(&metal.join(","));
        out.push_str("]\n}\n");
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OxideLayer {
    pub thickness_nm: f64,
    pub permittivity: f64,
    pub loss_tangent: f64,
}

/// Parametric description of the film, oxide and substrate cross-section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossSectionSpec {
    pub film_thickness_nm: f64,
    /// Degrees from vertical; positive means the film widens toward its base.
    pub sidewall_angle_deg: f64,
    pub r_top_nm: f64,
    pub r_bottom_nm: f64,
    pub trench_depth_nm: f64,
    /// Conformal shells ordered outward from the metal.
    pub oxide_layers: Vec<OxideLayer>,
    pub substrate_permittivity: f64,
    pub substrate_loss_tangent: f64,
    pub substrate_depth_um: f64,
    pub gap_halfwidth_um: f64,
    pub domain_width_um: f64,
    pub domain_height_um: f64,
    pub electrode_voltage_v: f64,
}

impl Default for CrossSectionSpec {
    fn default() -> Self {
        CrossSectionSpec {
            film_thickness_nm: 200.0,
            sidewall_angle_deg: 0.0,
            r_top_nm: 10.0,
            r_bottom_nm: 10.0,
            trench_depth_nm: 0.0,
            oxide_layers: vec![OxideLayer {
                thickness_nm: 5.0,
                permittivity: 10.0,
                loss_tangent: 1e-3,
            }],
            substrate_permittivity: 10.0,
            substrate_loss_tangent: 0.0,
            substrate_depth_um: 5.0,
            gap_halfwidth_um: 5.0,
            domain_width_um: 10.0,
            domain_height_um: 10.0,
            electrode_voltage_v: 1.0,
        }
    }
}

impl CrossSectionSpec {
    pub fn total_oxide_nm(&self) -> f64 {
        self.oxide_layers.iter().map(|l| l.thickness_nm).sum()
    }

    pub fn with_single_oxide(&self, thickness_nm: f64) -> Self {
        let mut s = self.clone();
        let (eps, tand) = s
            .oxide_layers
            .first()
            .map(|l| (l.permittivity, l.loss_tangent))
            .unwrap_or((10.0, 0.0));
        s.oxide_layers = vec![OxideLayer {
            thickness_nm,
            permittivity: eps,
            loss_tangent: tand,
        }];
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("invalid cross-section: {}", join_violations(.0))]
    Invalid(Vec<Violation>),
    #[error("offset overlap: {0}")]
    Overlap(String),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Checks every [`CrossSectionSpec`] invariant. Empty iff the spec is valid.
pub fn validate_spec(spec: &CrossSectionSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut bad = |field: &str, message: String| {
        out.push(Violation {
            field: field.to_string(),
            message,
        })
    };
    let positive = [
        ("film_thickness_nm", spec.film_thickness_nm),
        ("substrate_depth_um", spec.substrate_depth_um),
        ("gap_halfwidth_um", spec.gap_halfwidth_um),
        ("domain_width_um", spec.domain_width_um),
        ("domain_height_um", spec.domain_height_um),
    ];
    for (name, v) in positive {
        if !(v > 0.0 && v.is_finite()) {
            bad(name, format!("must be > 0 (got {v})"));
        }
    }
    for (name, v) in [
        ("r_top_nm", spec.r_top_nm),
        ("r_bottom_nm", spec.r_bottom_nm),
    ] {
        if !(v >= 0.0 && v.is_finite()) {
            bad(name, format!("must be >= 0 (got {v})"));
        }
    }
    if !(spec.trench_depth_nm >= 0.0 && spec.trench_depth_nm.is_finite()) {
        bad(
            "trench_depth_nm",
            format!("trench_depth >= 0 violated (got {})", spec.trench_depth_nm),
        );
    }
    if !(spec.sidewall_angle_deg >= 0.0 && spec.sidewall_angle_deg < 60.0) {
        bad(
            "sidewall_angle_deg",
            format!("must lie in [0, 60) (got {})", spec.sidewall_angle_deg),
        );
    }
    if !(spec.electrode_voltage_v.is_finite() && spec.electrode_voltage_v != 0.0) {
        bad(
            "electrode_voltage_v",
            "must be finite and non-zero".to_string(),
        );
    }
    if !(spec.substrate_permittivity >= 1.0) {
        bad(
            "substrate_permittivity",
            format!("must be >= 1 (got {})", spec.substrate_permittivity),
        );
    }
    if !(spec.substrate_loss_tangent >= 0.0) {
        bad("substrate_loss_tangent", "must be >= 0".to_string());
    }
    for (i, l) in spec.oxide_layers.iter().enumerate() {
        if !(l.thickness_nm > 0.0 && l.thickness_nm.is_finite()) {
            bad(
                &format!("oxide_layers[{i}].thickness_nm"),
                format!("must be > 0 (got {})", l.thickness_nm),
            );
        }
        if !(l.permittivity >= 1.0) {
            bad(
                &format!("oxide_layers[{i}].permittivity"),
                format!("must be >= 1 (got {})", l.permittivity),
            );
        }
        if !(l.loss_tangent >= 0.0) {
            bad(
                &format!("oxide_layers[{i}].loss_tangent"),
                "must be >= 0".to_string(),
            );
        }
    }
    if !out.is_empty() {
        return out;
    }

    let alpha = spec.sidewall_angle_deg.to_radians();
    let t = spec.film_thickness_nm;
    if spec.r_top_nm + spec.r_bottom_nm > t / alpha.cos() {
        out.push(Violation {
            field: "r_top_nm+r_bottom_nm".into(),
            message: format!(
                "rounding overlap: {} + {} > {:.6}",
                spec.r_top_nm,
                spec.r_bottom_nm,
                t / alpha.cos()
            ),
        });
        return out;
    }
    let edge = EdgeFrame::new(spec);
    if edge.top_wall_point(0.0).y < edge.bottom_wall_point(0.0).y {
        out.push(Violation {
            field: "r_top_nm+r_bottom_nm".into(),
            message: "rounding overlap: corner arcs leave no straight sidewall".into(),
        });
    }
    let total = spec.total_oxide_nm();
    let gap_nm = spec.gap_halfwidth_um * 1e3;
    if total >= gap_nm {
        out.push(Violation {
            field: "oxide_layers".into(),
            message: format!(
                "total shell thickness {total} nm must be < gap_halfwidth {gap_nm} nm"
            ),
        });
    }
    let (x_l, x_r, y_b, y_t) = edge.bbox();
    if spec.substrate_depth_um >= spec.domain_height_um {
        out.push(Violation {
            field: "substrate_depth_um".into(),
            message: "substrate must leave room for the film inside the box".into(),
        });
    }
    if t + total >= y_t {
        out.push(Violation {
            field: "domain_height_um".into(),
            message: "box must strictly contain the film and its shells".into(),
        });
    }
    let right_extent = edge
        .offset_curve(total)
        .iter()
        .map(|p| p.x)
        .fold(f64::MIN, f64::max);
    if right_extent >= x_r {
        out.push(Violation {
            field: "gap_halfwidth_um".into(),
            message: "shells reach the symmetry plane".into(),
        });
    }
    if edge.x_cut <= x_l {
        out.push(Violation {
            field: "domain_width_um".into(),
            message: "box must extend at least one film thickness left of the corner".into(),
        });
    }
    if spec.trench_depth_nm >= -y_b {
        out.push(Violation {
            field: "trench_depth_nm".into(),
            message: "trench must stay inside the modeled substrate".into(),
        });
    }
    out
}

/// Precomputed edge frame: arc centres, angles and the box, all in nm.
#[derive(Debug, Clone)]
struct EdgeFrame {
    film: f64,
    alpha: f64,
    r_top: f64,
    r_bottom: f64,
    c_top: Point,
    c_bottom: Point,
    /// Outward wall normal.
    normal: Point,
    x_left: f64,
    x_right: f64,
    y_bottom: f64,
    y_top: f64,
    x_cut: f64,
}

impl EdgeFrame {
    fn new(spec: &CrossSectionSpec) -> Self {
        let film = spec.film_thickness_nm;
        let alpha = spec.sidewall_angle_deg.to_radians();
        let (s, c) = alpha.sin_cos();
        let normal = Point::new(c, s);
        let r_top = spec.r_top_nm;
        let r_bottom = spec.r_bottom_nm;
        // Centres sit at distance r inside the wall line n·p = 0.
        let cy_top = film - r_top;
        let c_top = Point::new((-r_top - s * cy_top) / c, cy_top);
        let cy_bot = r_bottom * (FRAC_PI_4 - alpha / 2.0).sin();
        let c_bottom = Point::new((-r_bottom - s * cy_bot) / c, cy_bot);
        let x_right = spec.gap_halfwidth_um * 1e3;
        let x_left = x_right - spec.domain_width_um * 1e3;
        let y_bottom = -spec.substrate_depth_um * 1e3;
        let y_top = y_bottom + spec.domain_height_um * 1e3;
        EdgeFrame {
            film,
            alpha,
            r_top,
            r_bottom,
            c_top,
            c_bottom,
            normal,
            x_left,
            x_right,
            y_bottom,
            y_top,
            x_cut: c_top.x - film,
        }
    }

    fn bbox(&self) -> (f64, f64, f64, f64) {
        (self.x_left, self.x_right, self.y_bottom, self.y_top)
    }

    fn top_wall_point(&self, t: f64) -> Point {
        self.c_top + self.normal * (self.r_top + t)
    }

    fn bottom_wall_point(&self, t: f64) -> Point {
        self.c_bottom + self.normal * (self.r_bottom + t)
    }

    /// End angle of the base arc at offset `t`, where it meets `y = 0`.
    fn bottom_end_angle(&self, t: f64) -> f64 {
        let radius = self.r_bottom + t;
        if radius == 0.0 {
            return self.alpha / 2.0 - FRAC_PI_4;
        }
        -(self.c_bottom.y / radius).asin()
    }

    fn apex_top(&self) -> Point {
        Point::new(-self.film * self.alpha.tan(), self.film)
    }

    /// Contour offset by `t` (0 = the metal contour itself), from the left box
    /// edge to the substrate plane. Top-face vertices at `x_left`, `x_cut` and
    /// the arc start are always present.
    fn offset_curve(&self, t: f64) -> Vec<Point> {
        let mut pts = vec![
            Point::new(self.x_left, self.film + t),
            Point::new(self.x_cut, self.film + t),
            Point::new(self.c_top.x, self.film + t),
        ];
        let rt = self.r_top + t;
        push_arc(&mut pts, self.c_top, rt, FRAC_PI_2, self.alpha);
        let wall_end = self.bottom_wall_point(t);
        push_unique(&mut pts, self.top_wall_point(t));
        push_unique(&mut pts, wall_end);
        let rb = self.r_bottom + t;
        let end = self.bottom_end_angle(t);
        push_arc(&mut pts, self.c_bottom, rb, self.alpha, end);
        let last = pts.len() - 1;
        // The end point sits exactly on the substrate plane.
        pts[last].y = 0.0;
        if rb == 0.0 {
            pts[last] = Point::new(self.c_bottom.x, 0.0);
        }
        pts
    }
}

fn push_unique(pts: &mut Vec<Point>, p: Point) {
    if pts.last() != Some(&p) {
        pts.push(p);
    }
}

fn arc_segments(radius: f64, sweep: f64) -> usize {
    if radius <= 0.0 || sweep == 0.0 {
        return 0;
    }
    let sag = MAX_SAGITTA_NM.min(radius / 50.0);
    let step = (2.0 * (1.0 - sag / radius).acos()).min(MAX_ARC_STEP);
    ((sweep.abs() / step).ceil() as usize).max(1)
}

/// Appends arc points after the (already present) start point, ending at
/// `a1`.
fn push_arc(pts: &mut Vec<Point>, center: Point, radius: f64, a0: f64, a1: f64) {
    let n = arc_segments(radius, a1 - a0);
    for i in 1..=n {
        let a = if i == n {
            a1
        } else {
            a0 + (a1 - a0) * (i as f64) / (n as f64)
        };
        push_unique(pts, center + Point::polar(radius, a));
    }
}

/// Computed cross-section geometry derived from a validated spec.
#[derive(Debug, Clone)]
pub struct CrossSection {
    pub spec: CrossSectionSpec,
    frame: EdgeFrame,
}

impl CrossSection {
    pub fn new(spec: &CrossSectionSpec) -> Result<Self, GeometryError> {
        let v = validate_spec(spec);
        if !v.is_empty() {
            return Err(GeometryError::Invalid(v));
        }
        Ok(CrossSection {
            spec: spec.clone(),
            frame: EdgeFrame::new(spec),
        })
    }

    /// Metal contour offset by `t` nm.
    pub fn offset_curve(&self, t: f64) -> Vec<Point> {
        self.frame.offset_curve(t)
    }

    pub fn metal_contour(&self) -> Vec<Point> {
        self.frame.offset_curve(0.0)
    }

    /// Point where the metal contour meets the substrate plane.
    pub fn foot(&self) -> Point {
        *self.metal_contour().last().expect("contour is never empty")
    }

    pub fn top_cut_x(&self) -> f64 {
        self.frame.x_cut
    }

    /// Abscissa where the top-face rounding begins.
    pub fn top_arc_start_x(&self) -> f64 {
        self.frame.c_top.x
    }

    pub fn top_corner(&self) -> CornerSite {
        let f = &self.frame;
        let apex = f.apex_top();
        let along_top = Point::new(-1.0, 0.0);
        let along_wall = Point::new(f.alpha.sin(), -f.alpha.cos());
        let bisector = (along_top + along_wall).normalized() * -1.0;
        let mid = (FRAC_PI_2 + f.alpha) / 2.0;
        CornerSite {
            label: "top".into(),
            apex,
            bisector,
            rounding_radius_nm: f.r_top,
            anchor: f.c_top + Point::polar(f.r_top, mid),
        }
    }

    pub fn bottom_corner(&self) -> CornerSite {
        let f = &self.frame;
        let up_wall = Point::new(-f.alpha.sin(), f.alpha.cos());
        let under = Point::new(-1.0, 0.0);
        let bisector = (up_wall + under).normalized() * -1.0;
        CornerSite {
            label: "bottom".into(),
            apex: Point::new(0.0, 0.0),
            bisector,
            rounding_radius_nm: f.r_bottom,
            anchor: self.foot(),
        }
    }

    /// Path at fixed offset `d` from the metal surface, starting `lead_nm`
    /// before the top rounding and following the contour around both corners
    /// down to height `d` above the substrate plane.
    pub fn perimeter_path(&self, d: f64, lead_nm: f64) -> Vec<Point> {
        let full = self.offset_curve(d);
        let x0 = self.frame.c_top.x - lead_nm;
        let mut out = vec![Point::new(x0, self.frame.film + d)];
        let mut seen_wall = false;
        for w in full.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b.x <= x0 && !seen_wall {
                continue;
            }
            if b.y < self.frame.film {
                seen_wall = true;
            }
            if seen_wall && b.y <= d {
                let s = (a.y - d) / (a.y - b.y);
                push_unique(&mut out, a.lerp(b, s));
                break;
            }
            push_unique(&mut out, b);
        }
        out
    }
}

/// Builds the region tiling with the configured oxide layers as real shells.
pub fn build_cross_section(spec: &CrossSectionSpec) -> Result<RegionSet, GeometryError> {
    build_virtual_layers(spec, &[], &[])
}

/// Builds the tiling with additional virtual shells stacked outside the
/// configured oxide layers and virtual slabs stacked below the substrate
/// interface (beneath any trench). Virtual shells default to vacuum and
/// slabs to substrate until reassigned in the mesh.
pub fn build_virtual_layers(
    spec: &CrossSectionSpec,
    shell_thicknesses: &[f64],
    trench_slabs: &[f64],
) -> Result<RegionSet, GeometryError> {
    let mut violations = validate_spec(spec);
    for (i, &t) in shell_thicknesses.iter().enumerate() {
        if !(t > 0.0 && t.is_finite()) {
            violations.push(Violation {
                field: format!("shell_thicknesses[{i}]"),
                message: "must be > 0".into(),
            });
        }
    }
    for (i, &t) in trench_slabs.iter().enumerate() {
        if !(t > 0.0 && t.is_finite()) {
            violations.push(Violation {
                field: format!("trench_slabs[{i}]"),
                message: "must be > 0".into(),
            });
        }
    }
    if !violations.is_empty() {
        return Err(GeometryError::Invalid(violations));
    }
    let xs = CrossSection::new(spec)?;
    let f = &xs.frame;

    // Layer stack: real oxide shells first, then virtual ones.
    struct Layer {
        thickness: f64,
        material: MaterialTag,
        virt: Option<VirtualLayer>,
    }
    let mut layers: Vec<Layer> = spec
        .oxide_layers
        .iter()
        .enumerate()
        .map(|(i, l)| Layer {
            thickness: l.thickness_nm,
            material: MaterialTag::oxide(i, l.permittivity, l.loss_tangent),
            virt: None,
        })
        .collect();
    for (j, &t) in shell_thicknesses.iter().enumerate() {
        let v = VirtualLayer::Shell(j);
        layers.push(Layer {
            thickness: t,
            material: MaterialTag {
                kind: MaterialKind::Virtual(v),
                permittivity: 1.0,
                loss_tangent: 0.0,
            },
            virt: Some(v),
        });
    }
    let mut offsets = vec![0.0];
    for l in &layers {
        offsets.push(offsets.last().unwrap() + l.thickness);
    }
    let total = *offsets.last().unwrap();
    let (x_l, x_r, y_b, y_t) = f.bbox();
    if total >= y_t - f.film {
        return Err(GeometryError::Overlap(
            "shells reach the top of the box".into(),
        ));
    }
    let outer_extent = f
        .offset_curve(total)
        .iter()
        .map(|p| p.x)
        .fold(f64::MIN, f64::max);
    if outer_extent >= x_r {
        return Err(GeometryError::Overlap(
            "shells reach the symmetry plane".into(),
        ));
    }
    let trench = spec.trench_depth_nm;
    let slab_total: f64 = trench_slabs.iter().sum();
    if trench + slab_total >= -y_b {
        return Err(GeometryError::Overlap(
            "trench slabs reach the bottom of the box".into(),
        ));
    }

    let curves_k: Vec<Vec<Point>> = offsets.iter().map(|&t| f.offset_curve(t)).collect();
    for c in &curves_k {
        let mut closed = c.clone();
        closed.push(Point::new(c.last().unwrap().x, -1.0));
        closed.push(Point::new(x_l, -1.0));
        if polygon_self_intersects(&closed) {
            return Err(GeometryError::Overlap(
                "offset contour self-intersects".into(),
            ));
        }
    }
    let foot = curves_k[0].last().copied().unwrap();
    let x_foot = foot.x;
    let ends: Vec<Point> = curves_k.iter().map(|c| *c.last().unwrap()).collect();
    let n = layers.len();

    let mut regions = Vec::new();
    let mut next_id = 0usize;
    let mut new_id = || {
        let id = next_id;
        next_id += 1;
        id
    };

    // Vacuum above the substrate (including any trench).
    let mut vac = vec![
        Point::new(x_l, f.film + total),
        Point::new(x_l, y_t),
        Point::new(x_r, y_t),
    ];
    if trench > 0.0 {
        vac.push(Point::new(x_r, -trench));
        vac.push(Point::new(x_foot, -trench));
        vac.push(foot);
    } else {
        vac.push(Point::new(x_r, 0.0));
    }
    vac.extend(
        curves_k[n]
            .iter()
            .rev()
            .take(curves_k[n].len() - 1)
            .copied(),
    );
    let vacuum_id = new_id();
    regions.push(PlanarRegion {
        region_id: vacuum_id,
        boundary: vac,
        material: MaterialTag::vacuum(),
        virtual_layer: None,
        layer_thickness_nm: None,
    });

    // Substrate below the interface and any trench/slabs.
    let sub_top = trench + slab_total;
    let mut sub = vec![Point::new(x_l, y_b), Point::new(x_r, y_b)];
    if sub_top > 0.0 {
        sub.push(Point::new(x_r, -sub_top));
        sub.push(Point::new(x_foot, -sub_top));
        sub.push(foot);
    } else {
        sub.push(Point::new(x_r, 0.0));
    }
    sub.push(Point::new(x_l, 0.0));
    let substrate_id = new_id();
    regions.push(PlanarRegion {
        region_id: substrate_id,
        boundary: sub,
        material: MaterialTag::substrate(spec.substrate_permittivity, spec.substrate_loss_tangent),
        virtual_layer: None,
        layer_thickness_nm: None,
    });

    for (k, layer) in layers.iter().enumerate() {
        let mut poly = curves_k[k + 1].clone();
        poly.extend(curves_k[k].iter().rev().copied());
        regions.push(PlanarRegion {
            region_id: new_id(),
            boundary: poly,
            material: layer.material,
            virtual_layer: layer.virt,
            layer_thickness_nm: Some(layer.thickness),
        });
    }

    let mut slab_depths = vec![trench];
    for &d in trench_slabs {
        slab_depths.push(slab_depths.last().unwrap() + d);
    }
    for j in 0..trench_slabs.len() {
        let (top, bot) = (-slab_depths[j], -slab_depths[j + 1]);
        let v = VirtualLayer::Slab(j);
        regions.push(PlanarRegion {
            region_id: new_id(),
            boundary: vec![
                Point::new(x_foot, bot),
                Point::new(x_r, bot),
                Point::new(x_r, top),
                if top == 0.0 {
                    foot
                } else {
                    Point::new(x_foot, top)
                },
            ],
            material: MaterialTag {
                kind: MaterialKind::Virtual(v),
                permittivity: spec.substrate_permittivity,
                loss_tangent: spec.substrate_loss_tangent,
            },
            virtual_layer: Some(v),
            layer_thickness_nm: None,
        });
    }

    let mut metal = curves_k[0].clone();
    metal.push(Point::new(x_l, 0.0));

    // Constraint curves.
    let default_cap = f64::INFINITY;
    let mut curves = Vec::new();
    let layer_cap = |k: usize| layers.get(k).map(|l| l.thickness).unwrap_or(f64::INFINITY);
    for (k, c) in curves_k.iter().enumerate() {
        let cap = if k == 0 {
            layer_cap(0)
        } else {
            layer_cap(k - 1).min(layer_cap(k))
        };
        curves.push(Curve {
            points: c.clone(),
            max_spacing_nm: cap,
        });
    }
    // Midlines guarantee two elements across each shell.
    let mut mid_ends = Vec::new();
    for k in 0..n {
        let tm = 0.5 * (offsets[k] + offsets[k + 1]);
        let c = f.offset_curve(tm);
        mid_ends.push((tm, *c.last().unwrap()));
        curves.push(Curve {
            points: c,
            max_spacing_nm: layers[k].thickness,
        });
    }
    // Left box edge, split at every layer and midline.
    let mut left_pts = vec![
        Point::new(x_l, y_b),
        Point::new(x_l, 0.0),
        Point::new(x_l, f.film),
    ];
    for k in 0..n {
        left_pts.push(Point::new(x_l, f.film + mid_ends[k].0));
        left_pts.push(Point::new(x_l, f.film + offsets[k + 1]));
    }
    left_pts.push(Point::new(x_l, y_t));
    curves.push(Curve {
        points: left_pts[..2].to_vec(),
        max_spacing_nm: default_cap,
    });
    curves.push(Curve {
        points: left_pts[1..3].to_vec(),
        max_spacing_nm: default_cap,
    });
    curves.push(Curve {
        points: left_pts[2..].to_vec(),
        max_spacing_nm: default_cap,
    });
    // Top-cut line through the shells.
    if n > 0 {
        let mut cut = vec![Point::new(f.x_cut, f.film)];
        for k in 0..n {
            cut.push(Point::new(f.x_cut, f.film + mid_ends[k].0));
            cut.push(Point::new(f.x_cut, f.film + offsets[k + 1]));
        }
        curves.push(Curve {
            points: cut,
            max_spacing_nm: default_cap,
        });
    }
    // Substrate plane: metal footprint, shell bottoms, then the open gap.
    curves.push(Curve {
        points: vec![Point::new(x_l, 0.0), foot],
        max_spacing_nm: layer_cap(0),
    });
    let mut plane = vec![foot];
    for k in 0..n {
        push_unique(&mut plane, mid_ends[k].1);
        push_unique(&mut plane, ends[k + 1]);
    }
    if plane.len() > 1 {
        curves.push(Curve {
            points: plane.clone(),
            max_spacing_nm: layer_cap(0),
        });
    }
    let plane_end = *plane.last().unwrap();
    if sub_top == 0.0 {
        curves.push(Curve {
            points: vec![plane_end, Point::new(x_r, 0.0)],
            max_spacing_nm: default_cap,
        });
    }
    // Trench wall/floor and slab interfaces.
    let mut right_pts = vec![Point::new(x_r, y_b)];
    if sub_top > 0.0 {
        let mut wall = vec![foot];
        for &d in slab_depths.iter() {
            if d > 0.0 {
                wall.push(Point::new(x_foot, -d));
            }
        }
        curves.push(Curve {
            points: wall,
            max_spacing_nm: default_cap,
        });
        for &d in slab_depths.iter().rev() {
            if d > 0.0 {
                curves.push(Curve {
                    points: vec![Point::new(x_foot, -d), Point::new(x_r, -d)],
                    max_spacing_nm: default_cap,
                });
                right_pts.push(Point::new(x_r, -d));
            }
        }
        if trench == 0.0 {
            // Topmost slab boundary is the original interface.
            curves.push(Curve {
                points: vec![plane_end, Point::new(x_r, 0.0)],
                max_spacing_nm: default_cap,
            });
            right_pts.push(Point::new(x_r, 0.0));
        }
    } else {
        right_pts.push(Point::new(x_r, 0.0));
    }
    right_pts.push(Point::new(x_r, y_t));
    curves.push(Curve {
        points: right_pts.clone(),
        max_spacing_nm: default_cap,
    });
    curves.push(Curve {
        points: vec![Point::new(x_l, y_b), Point::new(x_r, y_b)],
        max_spacing_nm: default_cap,
    });
    curves.push(Curve {
        points: vec![Point::new(x_l, y_t), Point::new(x_r, y_t)],
        max_spacing_nm: default_cap,
    });

    let boundaries = vec![
        MarkedPolyline {
            marker: BoundaryMarker::DirichletMetal,
            points: curves_k[0].clone(),
        },
        MarkedPolyline {
            marker: BoundaryMarker::DirichletMetal,
            points: vec![Point::new(x_l, 0.0), foot],
        },
        MarkedPolyline {
            marker: BoundaryMarker::DirichletGround,
            points: vec![Point::new(x_r, y_b), Point::new(x_r, y_t)],
        },
        MarkedPolyline {
            marker: BoundaryMarker::NeumannSymmetry,
            points: vec![Point::new(x_l, y_b), Point::new(x_l, 0.0)],
        },
        MarkedPolyline {
            marker: BoundaryMarker::NeumannSymmetry,
            points: vec![Point::new(x_l, f.film), Point::new(x_l, y_t)],
        },
        MarkedPolyline {
            marker: BoundaryMarker::Outer,
            points: vec![Point::new(x_l, y_b), Point::new(x_r, y_b)],
        },
        MarkedPolyline {
            marker: BoundaryMarker::Outer,
            points: vec![Point::new(x_l, y_t), Point::new(x_r, y_t)],
        },
    ];

    let mut arcs = Vec::new();
    if f.r_top > 0.0 {
        arcs.push(BoundaryArc {
            center: f.c_top,
            radius: f.r_top,
            start_angle: FRAC_PI_2,
            sweep: f.alpha - FRAC_PI_2,
        });
    }
    if f.r_bottom > 0.0 {
        let end = f.bottom_end_angle(0.0);
        arcs.push(BoundaryArc {
            center: f.c_bottom,
            radius: f.r_bottom,
            start_angle: f.alpha,
            sweep: end - f.alpha,
        });
    }
    let mut corner_sites = vec![xs.top_corner(), xs.bottom_corner()];
    if sub_top > 0.0 {
        corner_sites.push(CornerSite {
            label: "trench".into(),
            apex: Point::new(x_foot, -sub_top),
            bisector: Point::new(1.0, 1.0).normalized(),
            rounding_radius_nm: 0.0,
            anchor: Point::new(x_foot, -sub_top),
        });
    }

    Ok(RegionSet {
        regions,
        excluded: vec![metal],
        curves,
        boundaries,
        arcs,
        corner_sites,
        bbox_min: Point::new(x_l, y_b),
        bbox_max: Point::new(x_r, y_t),
        top_cut_x: if n > 0 { Some(f.x_cut) } else { None },
    })
}

/// Simple analytic test geometries with known solutions.
pub mod fixtures {
    use super::*;

    /// Builds a [`RegionSet`] for an axis-aligned rectangle partitioned into
    /// horizontal bands. `bands` lists (thickness, material) from the bottom.
    /// The bottom edge carries `bottom`, the top edge `top`, the sides
    /// `sides`. Bands flagged in `midline` get a mid-thickness constraint.
    pub fn banded_rectangle(
        width: f64,
        bands: &[(f64, MaterialTag)],
        bottom: BoundaryMarker,
        top: BoundaryMarker,
        sides: BoundaryMarker,
    ) -> RegionSet {
        let mut ys = vec![0.0];
        for (t, _) in bands {
            ys.push(ys.last().unwrap() + t);
        }
        let height = *ys.last().unwrap();
        let mut regions = Vec::new();
        let mut curves = Vec::new();
        for (k, (t, m)) in bands.iter().enumerate() {
            let (y0, y1) = (ys[k], ys[k + 1]);
            regions.push(PlanarRegion {
                region_id: k,
                boundary: vec![
                    Point::new(0.0, y0),
                    Point::new(width, y0),
                    Point::new(width, y1),
                    Point::new(0.0, y1),
                ],
                material: *m,
                virtual_layer: None,
                layer_thickness_nm: if bands.len() > 1 && k < bands.len() - 1 {
                    Some(*t)
                } else {
                    None
                },
            });
            let cap = if k == bands.len() - 1 && bands.len() > 1 {
                f64::INFINITY
            } else {
                *t
            };
            curves.push(Curve {
                points: vec![Point::new(0.0, y0), Point::new(width, y0)],
                max_spacing_nm: cap.min(if k > 0 { bands[k - 1].0 } else { f64::INFINITY }),
            });
            if bands.len() > 1 && k < bands.len() - 1 {
                let ym = 0.5 * (y0 + y1);
                curves.push(Curve {
                    points: vec![Point::new(0.0, ym), Point::new(width, ym)],
                    max_spacing_nm: *t,
                });
            }
        }
        curves.push(Curve {
            points: vec![Point::new(0.0, height), Point::new(width, height)],
            max_spacing_nm: f64::INFINITY,
        });
        let mut side_ys = vec![];
        for k in 0..bands.len() {
            side_ys.push(ys[k]);
            if bands.len() > 1 && k < bands.len() - 1 {
                side_ys.push(0.5 * (ys[k] + ys[k + 1]));
            }
        }
        side_ys.push(height);
        for x in [0.0, width] {
            curves.push(Curve {
                points: side_ys.iter().map(|&y| Point::new(x, y)).collect(),
                max_spacing_nm: f64::INFINITY,
            });
        }
        RegionSet {
            regions,
            excluded: vec![],
            curves,
            boundaries: vec![
                MarkedPolyline {
                    marker: bottom,
                    points: vec![Point::new(0.0, 0.0), Point::new(width, 0.0)],
                },
                MarkedPolyline {
                    marker: top,
                    points: vec![Point::new(0.0, height), Point::new(width, height)],
                },
                MarkedPolyline {
                    marker: sides,
                    points: vec![Point::new(0.0, 0.0), Point::new(0.0, height)],
                },
                MarkedPolyline {
                    marker: sides,
                    points: vec![Point::new(width, 0.0), Point::new(width, height)],
                },
            ],
            arcs: vec![],
            corner_sites: vec![],
            bbox_min: Point::new(0.0, 0.0),
            bbox_max: Point::new(width, height),
            top_cut_x: None,
        }
    }

    /// Parallel-plate capacitor: metal at `y = 0`, ground at `y = gap`,
    /// dielectric shells on the metal electrode, symmetric sides.
    pub fn parallel_plate(width_nm: f64, gap_nm: f64, shells: &[(f64, f64)]) -> RegionSet {
        let mut bands: Vec<(f64, MaterialTag)> = shells
            .iter()
            .enumerate()
            .map(|(i, &(t, eps))| (t, MaterialTag::oxide(i, eps, 0.0)))
            .collect();
        let used: f64 = shells.iter().map(|s| s.0).sum();
        bands.push((gap_nm - used, MaterialTag::vacuum()));
        banded_rectangle(
            width_nm,
            &bands,
            BoundaryMarker::DirichletMetal,
            BoundaryMarker::DirichletGround,
            BoundaryMarker::NeumannSymmetry,
        )
    }

    /// Quarter of a coaxial line (inner radius `a`, outer `b`, nm) with the
    /// inner conductor as metal, the outer as ground and Neumann symmetry
    /// cuts along the axes. Each arc gets `segments` chords.
    pub fn coax_quarter(a: f64, b: f64, segments: usize) -> RegionSet {
        let arc = |r: f64| -> Vec<Point> {
            (0..=segments)
                .map(|i| {
                    let ang = FRAC_PI_2 * i as f64 / segments as f64;
                    if i == 0 {
                        Point::new(r, 0.0)
                    } else if i == segments {
                        Point::new(0.0, r)
                    } else {
                        Point::polar(r, ang)
                    }
                })
                .collect()
        };
        let inner = arc(a);
        let outer = arc(b);
        let mut poly = outer.clone();
        poly.extend(inner.iter().rev().copied());
        let inner_poly = {
            let mut p = vec![Point::new(0.0, 0.0)];
            p.extend(inner.iter().copied());
            p
        };
        let x_axis = vec![Point::new(a, 0.0), Point::new(b, 0.0)];
        let y_axis = vec![Point::new(0.0, a), Point::new(0.0, b)];
        let mut corner_poly = outer.clone();
        corner_poly.push(Point::new(b, b));
        RegionSet {
            regions: vec![PlanarRegion {
                region_id: 0,
                boundary: poly,
                material: MaterialTag::vacuum(),
                virtual_layer: None,
                layer_thickness_nm: None,
            }],
            excluded: vec![inner_poly, corner_poly],
            curves: vec![
                Curve {
                    points: inner.clone(),
                    max_spacing_nm: f64::INFINITY,
                },
                Curve {
                    points: outer.clone(),
                    max_spacing_nm: f64::INFINITY,
                },
                Curve {
                    points: x_axis.clone(),
                    max_spacing_nm: f64::INFINITY,
                },
                Curve {
                    points: y_axis.clone(),
                    max_spacing_nm: f64::INFINITY,
                },
                Curve {
                    points: vec![Point::new(0.0, 0.0), Point::new(a, 0.0)],
                    max_spacing_nm: f64::INFINITY,
                },
                Curve {
                    points: vec![Point::new(0.0, 0.0), Point::new(0.0, a)],
                    max_spacing_nm: f64::INFINITY,
                },
            ],
            boundaries: vec![
                MarkedPolyline {
                    marker: BoundaryMarker::DirichletMetal,
                    points: inner,
                },
                MarkedPolyline {
                    marker: BoundaryMarker::DirichletGround,
                    points: outer,
                },
                MarkedPolyline {
                    marker: BoundaryMarker::NeumannSymmetry,
                    points: x_axis,
                },
                MarkedPolyline {
                    marker: BoundaryMarker::NeumannSymmetry,
                    points: y_axis,
                },
            ],
            arcs: vec![
                BoundaryArc {
                    center: Point::new(0.0, 0.0),
                    radius: a,
                    start_angle: 0.0,
                    sweep: FRAC_PI_2,
                },
                BoundaryArc {
                    center: Point::new(0.0, 0.0),
                    radius: b,
                    start_angle: 0.0,
                    sweep: FRAC_PI_2,
                },
            ],
            corner_sites: vec![],
            bbox_min: Point::new(0.0, 0.0),
            bbox_max: Point::new(b, b),
            top_cut_x: None,
        }
    }

    /// Square `[0, side]²` with a marker per edge (bottom, right, top, left).
    pub fn square(side: f64, markers: [BoundaryMarker; 4], material: MaterialTag) -> RegionSet {
        let c = [
            Point::new(0.0, 0.0),
            Point::new(side, 0.0),
            Point::new(side, side),
            Point::new(0.0, side),
        ];
        let mut curves = Vec::new();
        let mut boundaries = Vec::new();
        for i in 0..4 {
            let seg = vec![c[i], c[(i + 1) % 4]];
            curves.push(Curve {
                points: seg.clone(),
                max_spacing_nm: f64::INFINITY,
            });
            boundaries.push(MarkedPolyline {
                marker: markers[i],
                points: seg,
            });
        }
        RegionSet {
            regions: vec![PlanarRegion {
                region_id: 0,
                boundary: c.to_vec(),
                material,
                virtual_layer: None,
                layer_thickness_nm: None,
            }],
            excluded: vec![],
            curves,
            boundaries,
            arcs: vec![],
            corner_sites: vec![CornerSite {
                label: "origin".into(),
                apex: c[0],
                bisector: Point::new(1.0, 1.0).normalized(),
                rounding_radius_nm: 0.0,
                anchor: c[0],
            }],
            bbox_min: c[0],
            bbox_max: c[2],
            top_cut_x: None,
        }
    }

    /// Square split vertically at `x = side/2` into two materials.
    pub fn split_square(
        side: f64,
        left: MaterialTag,
        right: MaterialTag,
        markers: [BoundaryMarker; 4],
    ) -> RegionSet {
        let h = side / 2.0;
        let mut rs = square(side, markers, left);
        rs.regions = vec![
            PlanarRegion {
                region_id: 0,
                boundary: vec![
                    Point::new(0.0, 0.0),
                    Point::new(h, 0.0),
                    Point::new(h, side),
                    Point::new(0.0, side),
                ],
                material: left,
                virtual_layer: None,
                layer_thickness_nm: None,
            },
            PlanarRegion {
                region_id: 1,
                boundary: vec![
                    Point::new(h, 0.0),
                    Point::new(side, 0.0),
                    Point::new(side, side),
                    Point::new(h, side),
                ],
                material: right,
                virtual_layer: None,
                layer_thickness_nm: None,
            },
        ];
        rs.curves.push(Curve {
            points: vec![Point::new(h, 0.0), Point::new(h, side)],
            max_spacing_nm: f64::INFINITY,
        });
        rs
    }
}
