//! Graded conforming triangulations of a [`RegionSet`].
//!
//! Triangulation is a constrained Delaunay mesh (via `spade`) seeded with the
//! subdivided region curves, refined for angle quality and then driven down
//! to the size field by centroid insertion. Elements inherit the region of
//! the constraint-bounded component they fall in.

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt::Write as _;

use log::debug;
use serde::{Deserialize, Serialize};
use spade::handles::FixedVertexHandle;
use spade::{
    AngleLimit, ConstrainedDelaunayTriangulation, Point2, RefinementParameters, Triangulation,
};
use thiserror::Error;

use crate::geometry::{
    point_in_polygon, point_segment_distance, BoundaryArc, BoundaryMarker, CornerSite,
    MaterialKind, MaterialTag, Point, RegionSet, VirtualLayer,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MeshError {
    #[error("mesh failure{}: {reason}", region.map(|r| format!(" in region {r}")).unwrap_or_default())]
    MeshFailure {
        region: Option<usize>,
        reason: String,
    },
    #[error("unknown virtual layer {0}")]
    UnknownLayer(String),
    #[error("invalid size field: {0}")]
    InvalidSizeField(String),
    #[error("mesh parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Target element size `h(x) = min(h_max, min_i(h_local_i + g·|x - site_i|))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeField {
    pub h_max: f64,
    pub corner_sites: Vec<(Point, f64)>,
    pub grading_rate: f64,
}

impl SizeField {
    pub fn new(
        h_max: f64,
        corner_sites: Vec<(Point, f64)>,
        grading_rate: f64,
    ) -> Result<Self, MeshError> {
        let sf = SizeField {
            h_max,
            corner_sites,
            grading_rate,
        };
        sf.validate()?;
        Ok(sf)
    }

    pub fn uniform(h: f64) -> Self {
        SizeField {
            h_max: h,
            corner_sites: Vec::new(),
            grading_rate: 1.0,
        }
    }

    /// Anchors `h_local` at every corner site of the region set.
    pub fn for_regions(
        regions: &RegionSet,
        h_max: f64,
        h_local: f64,
        grading_rate: f64,
    ) -> Result<Self, MeshError> {
        let sites = regions
            .corner_sites
            .iter()
            .map(|c| (c.anchor, h_local))
            .collect();
        SizeField::new(h_max, sites, grading_rate)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        if !(self.h_max > 0.0 && self.h_max.is_finite()) {
            return Err(MeshError::InvalidSizeField(format!(
                "h_max must be > 0 (got {})",
                self.h_max
            )));
        }
        if !(self.grading_rate > 0.0 && self.grading_rate <= 1.0) {
            return Err(MeshError::InvalidSizeField(format!(
                "grading rate must lie in (0, 1] (got {})",
                self.grading_rate
            )));
        }
        if let Some((_, h)) = self.corner_sites.iter().find(|(_, h)| !(*h > 0.0)) {
            return Err(MeshError::InvalidSizeField(format!(
                "h_local must be > 0 (got {h})"
            )));
        }
        Ok(())
    }

    pub fn h(&self, p: Point) -> f64 {
        self.corner_sites
            .iter()
            .map(|(s, hl)| hl + self.grading_rate * p.dist(*s))
            .fold(self.h_max, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeshOptions {
    /// Angle bound requested from Delaunay refinement.
    pub refine_angle_deg: f64,
    /// Post-condition on the finished mesh.
    pub min_angle_deg: f64,
    /// Shells thinner than this are rejected outright.
    pub min_shell_nm: f64,
    /// Maximum allowed diameter-to-size ratio.
    pub max_size_ratio: f64,
    /// Maximum adjacent-element diameter ratio.
    pub max_grading: f64,
    pub max_vertices: usize,
    pub max_passes: usize,
}

impl Default for MeshOptions {
    fn default() -> Self {
        MeshOptions {
            refine_angle_deg: 28.0,
            min_angle_deg: 15.0,
            min_shell_nm: 3.0,
            max_size_ratio: 1.5,
            max_grading: 2.0,
            max_vertices: 2_000_000,
            max_passes: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionInfo {
    pub region_id: usize,
    pub material: MaterialTag,
    pub virtual_layer: Option<VirtualLayer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BoundaryEdge {
    /// Vertex indices, smaller first.
    pub nodes: [usize; 2],
    pub marker: BoundaryMarker,
}

/// Conforming triangulation with region tags and boundary markers.
///
/// `nodes` holds the element vertices first (`num_vertices` of them), then
/// for order 2 one midside node per edge in sorted edge order.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<Point>,
    pub num_vertices: usize,
    /// Counter-clockwise vertex triples.
    pub elements: Vec<[usize; 3]>,
    /// Midside node of the edge opposite each local vertex (order 2 only).
    pub midside: Vec<[usize; 3]>,
    pub element_region: Vec<usize>,
    pub order: u8,
    pub boundary_edges: Vec<BoundaryEdge>,
    pub regions: Vec<RegionInfo>,
    pub arcs: Vec<BoundaryArc>,
    pub corner_sites: Vec<CornerSite>,
    pub top_cut_x: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MeshQuality {
    pub min_angle_deg: f64,
    pub mean_angle_deg: f64,
    pub element_count: usize,
    pub vertex_count: usize,
    pub node_count: usize,
    pub dof_count: usize,
    /// `(lower bound nm, count)` for log2-spaced element diameter bins.
    pub h_histogram: Vec<(f64, usize)>,
}

fn mid(a: Point, b: Point) -> Point {
    Point::new(0.5 * (a.x + b.x), 0.5 * (a.y + b.y))
}

fn key(p: Point) -> (u64, u64) {
    ((p.x + 0.0).to_bits(), (p.y + 0.0).to_bits())
}

pub fn triangle_angles(a: Point, b: Point, c: Point) -> [f64; 3] {
    let ang = |p: Point, q: Point, r: Point| {
        let (u, v) = (q - p, r - p);
        u.cross(v).abs().atan2(u.dot(v))
    };
    [ang(a, b, c), ang(b, c, a), ang(c, a, b)]
}

fn diameter(a: Point, b: Point, c: Point) -> f64 {
    a.dist(b).max(b.dist(c)).max(c.dist(a))
}

fn centroid(a: Point, b: Point, c: Point) -> Point {
    Point::new((a.x + b.x + c.x) / 3.0, (a.y + b.y + c.y) / 3.0)
}

fn subdivide(a: Point, b: Point, cap: f64, size: &SizeField, out: &mut Vec<Point>) {
    let m = mid(a, b);
    let len = a.dist(b);
    if len <= cap.min(size.h(m)) || len < 1e-6 {
        out.push(b);
    } else {
        subdivide(a, m, cap, size, out);
        subdivide(m, b, cap, size, out);
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Class {
    Metal,
    Region(usize),
    Outside,
}

type Cdt = ConstrainedDelaunayTriangulation<Point2<f64>>;

fn p2(p: Point2<f64>) -> Point {
    Point::new(p.x, p.y)
}

/// Flood-fills faces across non-constraint edges and classifies each
/// component by its largest face. Indexed by spade face index.
fn classify_faces(cdt: &Cdt, regions: &RegionSet) -> Vec<Class> {
    let n = cdt.all_faces().len();
    let mut class = vec![Class::Outside; n];
    let mut seen = vec![false; n];
    for face in cdt.inner_faces() {
        let start = face.fix().index();
        if seen[start] {
            continue;
        }
        let mut members = Vec::new();
        let mut queue = VecDeque::from([face.fix()]);
        seen[start] = true;
        while let Some(f) = queue.pop_front() {
            members.push(f);
            for e in cdt.face(f).adjacent_edges() {
                if e.is_constraint_edge() {
                    continue;
                }
                if let Some(nb) = e.rev().face().as_inner() {
                    let idx = nb.fix().index();
                    if !seen[idx] {
                        seen[idx] = true;
                        queue.push_back(nb.fix());
                    }
                }
            }
        }
        let rep = members
            .iter()
            .map(|&f| {
                let [a, b, c] = cdt.face(f).vertices().map(|v| p2(v.position()));
                (f, (b - a).cross(c - a).abs(), centroid(a, b, c))
            })
            .fold(None::<(_, f64, Point)>, |acc, x| match acc {
                Some(best) if best.1 >= x.1 => Some(best),
                _ => Some(x),
            })
            .map(|x| x.2)
            .expect("component is non-empty");
        let c = if regions.excluded.iter().any(|m| point_in_polygon(rep, m)) {
            Class::Metal
        } else {
            match regions.locate(rep) {
                Some(id) => Class::Region(id),
                None => Class::Outside,
            }
        };
        for f in members {
            class[f.index()] = c;
        }
    }
    class
}

/// Replaces the constraint edge `a`-`b` by two halves through its midpoint,
/// moved onto the arc when the edge is a chord of one.
fn split_constraint(
    cdt: &mut Cdt,
    a: FixedVertexHandle,
    b: FixedVertexHandle,
    arcs: &[BoundaryArc],
) -> Result<(), MeshError> {
    let Some(edge) = cdt
        .get_edge_from_neighbors(a, b)
        .map(|e| e.as_undirected().fix())
    else {
        return Ok(());
    };
    if !cdt.remove_constraint_edge(edge) {
        return Ok(());
    }
    let (pa, pb) = (p2(cdt.vertex(a).position()), p2(cdt.vertex(b).position()));
    let mut m = mid(pa, pb);
    let tol = 1e-9 * pa.dist(pb).max(1.0);
    if let Some(arc) = arcs
        .iter()
        .find(|arc| arc.contains(pa, tol) && arc.contains(pb, tol))
    {
        m = arc.project(m);
    }
    let h = cdt
        .insert(Point2::new(m.x, m.y))
        .map_err(|e| MeshError::MeshFailure {
            region: None,
            reason: format!("vertex insertion failed: {e:?}"),
        })?;
    if !(cdt.can_add_constraint(a, h) && cdt.can_add_constraint(h, b)) {
        return Err(MeshError::MeshFailure {
            region: None,
            reason: format!("constraint split crossed near ({:.3}, {:.3})", m.x, m.y),
        });
    }
    cdt.add_constraint(a, h);
    cdt.add_constraint(h, b);
    Ok(())
}

/// Moves Dirichlet vertices that refinement left on an arc's chord onto the
/// arc itself.
fn snap_to_arcs(nodes: &mut [Point], edges: &[BoundaryEdge], arcs: &[BoundaryArc]) {
    for be in edges.iter().filter(|b| b.marker.is_dirichlet()) {
        let [a, b] = be.nodes;
        let l = nodes[a].dist(nodes[b]);
        for arc in arcs.iter().filter(|arc| l <= 0.2 * arc.radius) {
            let tol = 1.01 * l * l / (2.0 * arc.radius) + 1e-9;
            if arc.contains(nodes[a], tol) && arc.contains(nodes[b], tol) {
                for n in [a, b] {
                    if !arc.contains(nodes[n], 1e-9 * l.max(1.0)) {
                        nodes[n] = arc.project(nodes[n]);
                    }
                }
                break;
            }
        }
    }
}

/// Builds a graded triangulation of `regions`.
pub fn generate_mesh(regions: &RegionSet, size: &SizeField, order: u8) -> Result<Mesh, MeshError> {
    generate_mesh_with(regions, size, order, &MeshOptions::default())
}

pub fn generate_mesh_with(
    regions: &RegionSet,
    size: &SizeField,
    order: u8,
    opts: &MeshOptions,
) -> Result<Mesh, MeshError> {
    size.validate()?;
    if order != 1 && order != 2 {
        return Err(MeshError::MeshFailure {
            region: None,
            reason: format!("element order must be 1 or 2 (got {order})"),
        });
    }
    for r in &regions.regions {
        if let Some(t) = r.layer_thickness_nm {
            if t < opts.min_shell_nm {
                return Err(MeshError::MeshFailure {
                    region: Some(r.region_id),
                    reason: format!(
                        "shell thickness {t} nm is below the {} nm sliver limit",
                        opts.min_shell_nm
                    ),
                });
            }
        }
    }

    let mut cdt = Cdt::new();
    let mut handles: HashMap<(u64, u64), FixedVertexHandle> = HashMap::new();
    let mut insert = |cdt: &mut Cdt, p: Point| -> Result<FixedVertexHandle, MeshError> {
        if let Some(h) = handles.get(&key(p)) {
            return Ok(*h);
        }
        let h = cdt
            .insert(Point2::new(p.x, p.y))
            .map_err(|e| MeshError::MeshFailure {
                region: None,
                reason: format!("vertex insertion failed: {e:?}"),
            })?;
        handles.insert(key(p), h);
        Ok(h)
    };
    for curve in &regions.curves {
        if curve.points.len() < 2 {
            continue;
        }
        let mut pts = vec![curve.points[0]];
        for w in curve.points.windows(2) {
            subdivide(w[0], w[1], curve.max_spacing_nm, size, &mut pts);
        }
        let ids: Vec<_> = pts
            .iter()
            .map(|&p| insert(&mut cdt, p))
            .collect::<Result<_, _>>()?;
        for w in ids.windows(2) {
            if w[0] == w[1] || cdt.exists_constraint(w[0], w[1]) {
                continue;
            }
            if !cdt.can_add_constraint(w[0], w[1]) {
                let a = p2(cdt.vertex(w[0]).position());
                return Err(MeshError::MeshFailure {
                    region: regions.locate(a),
                    reason: format!("crossing constraints near ({:.3}, {:.3})", a.x, a.y),
                });
            }
            cdt.add_constraint(w[0], w[1]);
        }
    }

    let refine = |cdt: &mut Cdt| -> Result<(), MeshError> {
        let budget = opts.max_vertices.saturating_sub(cdt.num_vertices());
        let res = cdt.refine(
            RefinementParameters::new()
                .with_angle_limit(AngleLimit::from_deg(opts.refine_angle_deg))
                .with_max_additional_vertices(budget),
        );
        if !res.refinement_complete {
            let worst = cdt
                .inner_faces()
                .map(|f| {
                    let [a, b, c] = f.vertices().map(|v| p2(v.position()));
                    (diameter(a, b, c), centroid(a, b, c))
                })
                .min_by(|a, b| a.0.total_cmp(&b.0))
                .map(|x| x.1)
                .unwrap_or_default();
            return Err(MeshError::MeshFailure {
                region: regions.locate(worst),
                reason: format!(
                    "vertex budget exhausted during refinement near ({:.4}, {:.4})",
                    worst.x, worst.y
                ),
            });
        }
        Ok(())
    };
    refine(&mut cdt)?;

    let mut class;
    let mut pass = 0;
    loop {
        class = classify_faces(&cdt, regions);
        let mut diam = vec![0.0; class.len()];
        let mut cent = vec![Point::default(); class.len()];
        for f in cdt.inner_faces() {
            let [a, b, c] = f.vertices().map(|v| p2(v.position()));
            diam[f.fix().index()] = diameter(a, b, c);
            cent[f.fix().index()] = centroid(a, b, c);
        }
        let mut new_pts: Vec<Point> = Vec::new();
        let mut splits: Vec<(FixedVertexHandle, FixedVertexHandle)> = Vec::new();
        for f in cdt.inner_faces() {
            let i = f.fix().index();
            if !matches!(class[i], Class::Region(_)) {
                continue;
            }
            let mut split = diam[i] > size.h(cent[i]);
            if !split {
                for e in f.adjacent_edges() {
                    if let Some(nb) = e.rev().face().as_inner() {
                        let j = nb.fix().index();
                        if matches!(class[j], Class::Region(_))
                            && diam[i] > 0.95 * opts.max_grading * diam[j]
                        {
                            split = true;
                        }
                    }
                }
            }
            if split {
                // A long constraint edge cannot shrink by centroid insertion; split it instead.
                let longest = f
                    .adjacent_edges()
                    .into_iter()
                    .max_by(|a, b| a.length_2().total_cmp(&b.length_2()))
                    .expect("triangle has edges");
                if longest.is_constraint_edge() {
                    let [a, b] = longest.vertices().map(|v| v.fix());
                    splits.push((a.min(b), a.max(b)));
                } else {
                    new_pts.push(cent[i]);
                }
            }
        }
        splits.sort();
        splits.dedup();
        debug!(
            "mesh pass {pass}: {} vertices, {} insertions, {} splits",
            cdt.num_vertices(),
            new_pts.len(),
            splits.len()
        );
        if new_pts.is_empty() && splits.is_empty() {
            break;
        }
        pass += 1;
        if pass > opts.max_passes
            || cdt.num_vertices() + new_pts.len() + splits.len() > opts.max_vertices
        {
            let p = new_pts
                .first()
                .copied()
                .unwrap_or_else(|| p2(cdt.vertex(splits[0].0).position()));
            return Err(MeshError::MeshFailure {
                region: regions.locate(p),
                reason: format!("size field could not be met near ({:.3}, {:.3})", p.x, p.y),
            });
        }
        for (a, b) in splits {
            split_constraint(&mut cdt, a, b, &regions.arcs)?;
        }
        new_pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        new_pts.dedup();
        for p in new_pts {
            cdt.insert(Point2::new(p.x, p.y))
                .map_err(|e| MeshError::MeshFailure {
                    region: None,
                    reason: format!("vertex insertion failed: {e:?}"),
                })?;
        }
        refine(&mut cdt)?;
    }

    // Collect kept faces and compact vertices in spade order.
    let mut used = vec![usize::MAX; cdt.num_vertices()];
    let mut raw = Vec::new();
    for f in cdt.inner_faces() {
        if let Class::Region(id) = class[f.fix().index()] {
            let v = f.vertices().map(|v| v.fix().index());
            raw.push((v, id));
            for &x in &v {
                used[x] = 0;
            }
        }
    }
    let mut nodes = Vec::new();
    for (i, v) in cdt.vertices().enumerate() {
        debug_assert_eq!(v.fix().index(), i);
        if used[i] == 0 {
            used[i] = nodes.len();
            nodes.push(p2(v.position()));
        }
    }
    let mut elements = Vec::with_capacity(raw.len());
    let mut element_region = Vec::with_capacity(raw.len());
    for (v, id) in raw {
        let mut e = v.map(|x| used[x]);
        if (nodes[e[1]] - nodes[e[0]]).cross(nodes[e[2]] - nodes[e[0]]) < 0.0 {
            e.swap(1, 2);
        }
        elements.push(e);
        element_region.push(id);
    }
    if elements.is_empty() {
        return Err(MeshError::MeshFailure {
            region: None,
            reason: "no elements produced".into(),
        });
    }

    let boundary_edges = mark_boundary(&nodes, &elements, regions);
    snap_to_arcs(&mut nodes, &boundary_edges, &regions.arcs);
    let region_infos = regions
        .regions
        .iter()
        .map(|r| RegionInfo {
            region_id: r.region_id,
            material: r.material,
            virtual_layer: r.virtual_layer,
        })
        .collect::<Vec<_>>();
    let mut mesh = Mesh {
        num_vertices: nodes.len(),
        nodes,
        elements,
        midside: Vec::new(),
        element_region,
        order: 1,
        boundary_edges,
        regions: region_infos,
        arcs: regions.arcs.clone(),
        corner_sites: regions.corner_sites.clone(),
        top_cut_x: regions.top_cut_x,
    };
    mesh.regions.sort_by_key(|r| r.region_id);
    post_check(&mesh, size, opts)?;
    if order == 2 {
        mesh = mesh.with_order(2);
    }
    Ok(mesh)
}

fn post_check(mesh: &Mesh, size: &SizeField, opts: &MeshOptions) -> Result<(), MeshError> {
    let min_angle = opts.min_angle_deg.to_radians();
    let mut diam = Vec::with_capacity(mesh.elements.len());
    for (k, e) in mesh.elements.iter().enumerate() {
        let [a, b, c] = e.map(|i| mesh.nodes[i]);
        let worst = triangle_angles(a, b, c)
            .into_iter()
            .fold(f64::INFINITY, f64::min);
        if worst < min_angle - 1e-12 {
            return Err(MeshError::MeshFailure {
                region: Some(mesh.element_region[k]),
                reason: format!(
                    "element angle {:.2} deg below {:.1} at ({:.3}, {:.3})",
                    worst.to_degrees(),
                    opts.min_angle_deg,
                    centroid(a, b, c).x,
                    centroid(a, b, c).y
                ),
            });
        }
        let d = diameter(a, b, c);
        if d > opts.max_size_ratio * size.h(centroid(a, b, c)) {
            return Err(MeshError::MeshFailure {
                region: Some(mesh.element_region[k]),
                reason: format!("element diameter {d:.3} nm exceeds the size field"),
            });
        }
        diam.push(d);
    }
    for (a, b) in mesh.element_adjacency() {
        let r = diam[a].max(diam[b]) / diam[a].min(diam[b]);
        if r > opts.max_grading {
            return Err(MeshError::MeshFailure {
                region: Some(mesh.element_region[a]),
                reason: format!(
                    "adjacent diameter ratio {r:.3} exceeds {}",
                    opts.max_grading
                ),
            });
        }
    }
    Ok(())
}

fn mark_boundary(
    nodes: &[Point],
    elements: &[[usize; 3]],
    regions: &RegionSet,
) -> Vec<BoundaryEdge> {
    let mut count: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for e in elements {
        for j in 0..3 {
            let (a, b) = (e[(j + 1) % 3], e[(j + 2) % 3]);
            *count.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    let diag = regions.bbox_min.dist(regions.bbox_max);
    let tol = 1e-9 * diag;
    let mut out = Vec::new();
    for (&(a, b), &n) in &count {
        if n != 1 {
            continue;
        }
        let (pa, pb) = (nodes[a], nodes[b]);
        let pm = mid(pa, pb);
        let mut best: Option<(f64, BoundaryMarker)> = None;
        for line in &regions.boundaries {
            let d = |p: Point| {
                line.points
                    .windows(2)
                    .map(|w| point_segment_distance(p, w[0], w[1]))
                    .fold(f64::INFINITY, f64::min)
            };
            let dm = d(pm);
            if dm <= tol && d(pa) <= tol && d(pb) <= tol {
                let cand = (dm, line.marker);
                best = match best {
                    Some(bst) if (bst.0, bst.1) <= (cand.0, cand.1) => Some(bst),
                    _ => Some(cand),
                };
            }
        }
        let marker = match best {
            Some((_, m)) => m,
            None => {
                debug!(
                    "unmarked boundary edge at ({:.3}, {:.3}); treating as outer",
                    pm.x, pm.y
                );
                BoundaryMarker::Outer
            }
        };
        out.push(BoundaryEdge {
            nodes: [a, b],
            marker,
        });
    }
    out
}

impl Mesh {
    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn vertices(&self) -> &[Point] {
        &self.nodes[..self.num_vertices]
    }

    /// Nodes of element `k` in local order: vertices, then (order 2) midside
    /// nodes opposite vertex 0, 1, 2.
    pub fn element_nodes(&self, k: usize) -> Vec<usize> {
        let mut v = self.elements[k].to_vec();
        if self.order == 2 {
            v.extend_from_slice(&self.midside[k]);
        }
        v
    }

    pub fn element_area(&self, k: usize) -> f64 {
        let [a, b, c] = self.elements[k].map(|i| self.nodes[i]);
        0.5 * (b - a).cross(c - a)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.elements.len()).map(|k| self.element_area(k)).sum()
    }

    pub fn region_area(&self, region_id: usize) -> f64 {
        (0..self.elements.len())
            .filter(|&k| self.element_region[k] == region_id)
            .map(|k| self.element_area(k))
            .sum()
    }

    /// Sorted unique vertex edges.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .elements
            .iter()
            .flat_map(|t| {
                (0..3).map(move |j| {
                    let (a, b) = (t[(j + 1) % 3], t[(j + 2) % 3]);
                    (a.min(b), a.max(b))
                })
            })
            .collect();
        e.sort_unstable();
        e.dedup();
        e
    }

    /// Pairs of elements sharing an edge, `(lower id, higher id)`, sorted.
    pub fn element_adjacency(&self) -> Vec<(usize, usize)> {
        let mut owner: HashMap<(usize, usize), usize> = HashMap::new();
        let mut out = Vec::new();
        for (k, t) in self.elements.iter().enumerate() {
            for j in 0..3 {
                let (a, b) = (t[(j + 1) % 3], t[(j + 2) % 3]);
                let key = (a.min(b), a.max(b));
                if let Some(&o) = owner.get(&key) {
                    out.push((o.min(k), o.max(k)));
                } else {
                    owner.insert(key, k);
                }
            }
        }
        out.sort_unstable();
        out
    }

    pub fn material(&self, region_id: usize) -> Option<&MaterialTag> {
        self.regions
            .iter()
            .find(|r| r.region_id == region_id)
            .map(|r| &r.material)
    }

    pub fn materials(&self) -> BTreeMap<usize, MaterialTag> {
        self.regions
            .iter()
            .map(|r| (r.region_id, r.material))
            .collect()
    }

    pub fn region_of_layer(&self, layer: VirtualLayer) -> Option<usize> {
        self.regions
            .iter()
            .find(|r| r.virtual_layer == Some(layer))
            .map(|r| r.region_id)
    }

    /// Dirichlet node → marker. Metal wins over ground where both touch.
    pub fn dirichlet_nodes(&self) -> BTreeMap<usize, BoundaryMarker> {
        let mut out: BTreeMap<usize, BoundaryMarker> = BTreeMap::new();
        let mids = self.midside_lookup();
        for be in &self.boundary_edges {
            if !be.marker.is_dirichlet() {
                continue;
            }
            let mut ns = vec![be.nodes[0], be.nodes[1]];
            if let Some(m) = mids
                .as_ref()
                .and_then(|m| m.get(&(be.nodes[0], be.nodes[1])))
            {
                ns.push(*m);
            }
            for n in ns {
                let e = out.entry(n).or_insert(be.marker);
                if be.marker < *e {
                    *e = be.marker;
                }
            }
        }
        out
    }

    fn midside_lookup(&self) -> Option<HashMap<(usize, usize), usize>> {
        if self.order != 2 {
            return None;
        }
        let mut m = HashMap::new();
        for (k, t) in self.elements.iter().enumerate() {
            for j in 0..3 {
                let (a, b) = (t[(j + 1) % 3], t[(j + 2) % 3]);
                m.insert((a.min(b), a.max(b)), self.midside[k][j]);
            }
        }
        Some(m)
    }

    /// Whether element `k` has a midside node off its chord.
    pub fn is_curved(&self, k: usize) -> bool {
        if self.order != 2 {
            return false;
        }
        let t = self.elements[k];
        (0..3).any(|j| {
            let m = mid(self.nodes[t[(j + 1) % 3]], self.nodes[t[(j + 2) % 3]]);
            self.nodes[self.midside[k][j]] != m
        })
    }

    /// Same vertex topology at the requested order. Order-2 midside nodes on
    /// Dirichlet arcs are placed on the true arc.
    fn boundary_map(&self) -> HashMap<(usize, usize), BoundaryMarker> {
        self.boundary_edges
            .iter()
            .map(|b| ((b.nodes[0], b.nodes[1]), b.marker))
            .collect()
    }

    /// Midpoint of edge `a`-`b`, on the arc when both ends lie on a Dirichlet
    /// arc.
    fn edge_point(
        &self,
        a: usize,
        b: usize,
        boundary: &HashMap<(usize, usize), BoundaryMarker>,
    ) -> Point {
        let (pa, pb) = (self.nodes[a], self.nodes[b]);
        let pm = mid(pa, pb);
        if boundary
            .get(&(a.min(b), a.max(b)))
            .is_some_and(|m| m.is_dirichlet())
        {
            let len = pa.dist(pb);
            let tol = 1e-9 * len.max(1.0);
            if let Some(arc) = self
                .arcs
                .iter()
                .find(|arc| arc.contains(pa, tol) && arc.contains(pb, tol))
            {
                let q = arc.project(pm);
                if q.dist(pm) <= 0.25 * len && arc.contains(q, tol) {
                    return q;
                }
            }
        }
        pm
    }

    pub fn with_order(&self, order: u8) -> Mesh {
        let mut out = self.clone();
        out.nodes.truncate(self.num_vertices);
        out.midside.clear();
        out.order = order;
        if order == 1 {
            return out;
        }
        let edges = self.edges();
        let boundary = self.boundary_map();
        for &(a, b) in &edges {
            out.nodes.push(self.edge_point(a, b, &boundary));
        }
        let nv = self.num_vertices;
        out.midside = self
            .elements
            .iter()
            .map(|t| {
                let mut m = [0; 3];
                for j in 0..3 {
                    let (a, b) = (t[(j + 1) % 3], t[(j + 2) % 3]);
                    let k = (a.min(b), a.max(b));
                    m[j] = nv + edges.binary_search(&k).expect("edge present");
                }
                m
            })
            .collect();
        out
    }

    /// Splits every triangle into four congruent children at its chord
    /// midpoints. Area and angles are preserved exactly.
    pub fn refine_uniform(&self) -> Mesh {
        self.split(false)
    }

    /// Like [`Mesh::refine_uniform`], but new vertices on Dirichlet arcs are
    /// projected onto the arc, so a refinement series converges to the
    /// curved boundary instead of the coarse chord polygon.
    pub fn refine_curved(&self) -> Mesh {
        self.split(true)
    }

    fn split(&self, curved: bool) -> Mesh {
        let edges = self.edges();
        let nv = self.num_vertices;
        let mut nodes: Vec<Point> = self.nodes[..nv].to_vec();
        let boundary = self.boundary_map();
        for &(a, b) in &edges {
            nodes.push(if curved {
                self.edge_point(a, b, &boundary)
            } else {
                mid(self.nodes[a], self.nodes[b])
            });
        }
        let m = |a: usize, b: usize| {
            nv + edges
                .binary_search(&(a.min(b), a.max(b)))
                .expect("edge present")
        };
        let mut elements = Vec::with_capacity(4 * self.elements.len());
        let mut element_region = Vec::with_capacity(4 * self.elements.len());
        for (k, &[a, b, c]) in self.elements.iter().enumerate() {
            let (mab, mbc, mca) = (m(a, b), m(b, c), m(c, a));
            elements.extend_from_slice(&[
                [a, mab, mca],
                [mab, b, mbc],
                [mca, mbc, c],
                [mbc, mca, mab],
            ]);
            element_region.extend_from_slice(&[self.element_region[k]; 4]);
        }
        let mut boundary_edges = Vec::with_capacity(2 * self.boundary_edges.len());
        for be in &self.boundary_edges {
            let [a, b] = be.nodes;
            let mm = m(a, b);
            boundary_edges.push(BoundaryEdge {
                nodes: [a.min(mm), a.max(mm)],
                marker: be.marker,
            });
            boundary_edges.push(BoundaryEdge {
                nodes: [b.min(mm), b.max(mm)],
                marker: be.marker,
            });
        }
        boundary_edges.sort();
        let fine = Mesh {
            num_vertices: nodes.len(),
            nodes,
            elements,
            midside: Vec::new(),
            element_region,
            order: 1,
            boundary_edges,
            regions: self.regions.clone(),
            arcs: self.arcs.clone(),
            corner_sites: self.corner_sites.clone(),
            top_cut_x: self.top_cut_x,
        };
        fine.with_order(self.order)
    }

    /// Changes only the material tags of virtual layers.
    pub fn reassign_materials(
        &self,
        mapping: &BTreeMap<VirtualLayer, MaterialTag>,
    ) -> Result<Mesh, MeshError> {
        let mut out = self.clone();
        for (layer, tag) in mapping {
            let r = out
                .regions
                .iter_mut()
                .find(|r| r.virtual_layer == Some(*layer))
                .ok_or_else(|| MeshError::UnknownLayer(layer.to_string()))?;
            r.material = *tag;
        }
        Ok(out)
    }

    /// Same as [`Mesh::reassign_materials`] but keyed by region id.
    pub fn reassign_regions(
        &self,
        mapping: &BTreeMap<usize, MaterialTag>,
    ) -> Result<Mesh, MeshError> {
        let mut out = self.clone();
        for (id, tag) in mapping {
            let r = out
                .regions
                .iter_mut()
                .find(|r| r.region_id == *id)
                .ok_or_else(|| MeshError::UnknownLayer(format!("region {id}")))?;
            if r.virtual_layer.is_none() {
                return Err(MeshError::UnknownLayer(format!(
                    "region {id} is not virtual"
                )));
            }
            r.material = *tag;
        }
        Ok(out)
    }

    pub fn quality(&self) -> MeshQuality {
        mesh_quality(self)
    }

    /// SHA-256 of node coordinates, connectivity, region ids and boundary
    /// markers. Material tags are excluded, so moving-mesh states share it.
    pub fn topology_hash(&self) -> String {
        let mut buf: Vec<u8> = Vec::with_capacity(self.nodes.len() * 16 + self.elements.len() * 40);
        buf.push(self.order);
        for p in &self.nodes {
            buf.extend_from_slice(&p.x.to_le_bytes());
            buf.extend_from_slice(&p.y.to_le_bytes());
        }
        for (k, e) in self.elements.iter().enumerate() {
            for &i in e {
                buf.extend_from_slice(&(i as u64).to_le_bytes());
            }
            if self.order == 2 {
                for &i in &self.midside[k] {
                    buf.extend_from_slice(&(i as u64).to_le_bytes());
                }
            }
            buf.extend_from_slice(&(self.element_region[k] as u64).to_le_bytes());
        }
        for b in &self.boundary_edges {
            buf.extend_from_slice(&(b.nodes[0] as u64).to_le_bytes());
            buf.extend_from_slice(&(b.nodes[1] as u64).to_le_bytes());
            buf.push(b.marker.code());
        }
        crate::sha256_hex(&buf)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "QSURF-MESH 1");
        let _ = writeln!(s, "order {}", self.order);
        let _ = writeln!(s, "vertices {}", self.num_vertices);
        for p in &self.nodes[..self.num_vertices] {
            let _ = writeln!(s, "{:?} {:?}", p.x, p.y);
        }
        let _ = writeln!(s, "midside_nodes {}", self.nodes.len() - self.num_vertices);
        for p in &self.nodes[self.num_vertices..] {
            let _ = writeln!(s, "{:?} {:?}", p.x, p.y);
        }
        let _ = writeln!(s, "elements {}", self.elements.len());
        for (k, e) in self.elements.iter().enumerate() {
            let _ = write!(s, "{} {} {} {}", e[0], e[1], e[2], self.element_region[k]);
            if self.order == 2 {
                let m = self.midside[k];
                let _ = write!(s, " {} {} {}", m[0], m[1], m[2]);
            }
            s.push('\n');
        }
        let _ = writeln!(s, "boundary {}", self.boundary_edges.len());
        for b in &self.boundary_edges {
            let _ = writeln!(s, "{} {} {}", b.nodes[0], b.nodes[1], b.marker.code());
        }
        let _ = writeln!(s, "regions {}", self.regions.len());
        for r in &self.regions {
            let virt = r
                .virtual_layer
                .map(layer_code)
                .unwrap_or_else(|| "-".into());
            let _ = writeln!(
                s,
                "{} {} {:?} {:?} {}",
                r.region_id,
                kind_code(r.material.kind),
                r.material.permittivity,
                r.material.loss_tangent,
                virt
            );
        }
        let _ = writeln!(s, "arcs {}", self.arcs.len());
        for a in &self.arcs {
            let _ = writeln!(
                s,
                "{:?} {:?} {:?} {:?} {:?}",
                a.center.x, a.center.y, a.radius, a.start_angle, a.sweep
            );
        }
        let _ = writeln!(s, "corners {}", self.corner_sites.len());
        for c in &self.corner_sites {
            let _ = writeln!(
                s,
                "{} {:?} {:?} {:?} {:?} {:?} {:?} {:?}",
                c.label,
                c.apex.x,
                c.apex.y,
                c.bisector.x,
                c.bisector.y,
                c.rounding_radius_nm,
                c.anchor.x,
                c.anchor.y
            );
        }
        match self.top_cut_x {
            Some(x) => {
                let _ = writeln!(s, "top_cut {x:?}");
            }
            None => {
                let _ = writeln!(s, "top_cut -");
            }
        }
        s.push_str("end\n");
        s
    }

    pub fn from_text(text: &str) -> Result<Mesh, MeshError> {
        let mut lines = text.lines().enumerate().peekable();
        let mut next = |what: &str| -> Result<(usize, Vec<&str>), MeshError> {
            let (i, l) = lines.next().ok_or(MeshError::Parse {
                line: 0,
                message: format!("unexpected end of input, expected {what}"),
            })?;
            Ok((i + 1, l.split_whitespace().collect()))
        };
        fn perr(line: usize, m: impl Into<String>) -> MeshError {
            MeshError::Parse {
                line,
                message: m.into(),
            }
        }
        fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, MeshError> {
            s.parse()
                .map_err(|_| perr(line, format!("invalid number '{s}'")))
        }
        fn section(line: usize, t: &[&str], name: &str) -> Result<usize, MeshError> {
            if t.len() != 2 || t[0] != name {
                return Err(perr(line, format!("expected section '{name}'")));
            }
            num(line, t[1])
        }
        let (l, t) = next("header")?;
        if t != ["QSURF-MESH", "1"] {
            return Err(perr(l, "missing 'QSURF-MESH 1' header"));
        }
        let (l, t) = next("order")?;
        let order: u8 = section(l, &t, "order")? as u8;
        if order != 1 && order != 2 {
            return Err(perr(l, "order must be 1 or 2"));
        }
        let mut nodes = Vec::new();
        let (l, t) = next("vertices")?;
        let nv = section(l, &t, "vertices")?;
        for _ in 0..nv {
            let (l, t) = next("vertex")?;
            if t.len() != 2 {
                return Err(perr(l, "vertex needs 2 coordinates"));
            }
            nodes.push(Point::new(num(l, t[0])?, num(l, t[1])?));
        }
        let (l, t) = next("midside_nodes")?;
        let nm = section(l, &t, "midside_nodes")?;
        for _ in 0..nm {
            let (l, t) = next("node")?;
            if t.len() != 2 {
                return Err(perr(l, "node needs 2 coordinates"));
            }
            nodes.push(Point::new(num(l, t[0])?, num(l, t[1])?));
        }
        let (l, t) = next("elements")?;
        let ne = section(l, &t, "elements")?;
        let (mut elements, mut element_region, mut midside) = (Vec::new(), Vec::new(), Vec::new());
        let want = if order == 2 { 7 } else { 4 };
        for _ in 0..ne {
            let (l, t) = next("element")?;
            if t.len() != want {
                return Err(perr(l, format!("element needs {want} fields")));
            }
            let v: Vec<usize> = t.iter().map(|x| num(l, x)).collect::<Result<_, _>>()?;
            if v.iter()
                .enumerate()
                .any(|(i, &x)| i != 3 && x >= nodes.len())
            {
                return Err(perr(l, "node index out of range"));
            }
            elements.push([v[0], v[1], v[2]]);
            element_region.push(v[3]);
            if order == 2 {
                midside.push([v[4], v[5], v[6]]);
            }
        }
        let (l, t) = next("boundary")?;
        let nb = section(l, &t, "boundary")?;
        let mut boundary_edges = Vec::new();
        for _ in 0..nb {
            let (l, t) = next("boundary edge")?;
            if t.len() != 3 {
                return Err(perr(l, "boundary edge needs 3 fields"));
            }
            let marker =
                BoundaryMarker::from_code(num(l, t[2])?).ok_or_else(|| perr(l, "bad marker"))?;
            boundary_edges.push(BoundaryEdge {
                nodes: [num(l, t[0])?, num(l, t[1])?],
                marker,
            });
        }
        let (l, t) = next("regions")?;
        let nr = section(l, &t, "regions")?;
        let mut regions = Vec::new();
        for _ in 0..nr {
            let (l, t) = next("region")?;
            if t.len() != 5 {
                return Err(perr(l, "region needs 5 fields"));
            }
            let kind =
                parse_kind(t[1]).ok_or_else(|| perr(l, format!("bad material kind '{}'", t[1])))?;
            let virtual_layer = if t[4] == "-" {
                None
            } else {
                Some(parse_layer(t[4]).ok_or_else(|| perr(l, "bad virtual layer"))?)
            };
            regions.push(RegionInfo {
                region_id: num(l, t[0])?,
                material: MaterialTag {
                    kind,
                    permittivity: num(l, t[2])?,
                    loss_tangent: num(l, t[3])?,
                },
                virtual_layer,
            });
        }
        let (l, t) = next("arcs")?;
        let na = section(l, &t, "arcs")?;
        let mut arcs = Vec::new();
        for _ in 0..na {
            let (l, t) = next("arc")?;
            if t.len() != 5 {
                return Err(perr(l, "arc needs 5 fields"));
            }
            let f: Vec<f64> = t.iter().map(|x| num(l, x)).collect::<Result<_, _>>()?;
            arcs.push(BoundaryArc {
                center: Point::new(f[0], f[1]),
                radius: f[2],
                start_angle: f[3],
                sweep: f[4],
            });
        }
        let (l, t) = next("corners")?;
        let nc = section(l, &t, "corners")?;
        let mut corner_sites = Vec::new();
        for _ in 0..nc {
            let (l, t) = next("corner")?;
            if t.len() != 8 {
                return Err(perr(l, "corner needs 8 fields"));
            }
            let f: Vec<f64> = t[1..].iter().map(|x| num(l, x)).collect::<Result<_, _>>()?;
            corner_sites.push(CornerSite {
                label: t[0].to_string(),
                apex: Point::new(f[0], f[1]),
                bisector: Point::new(f[2], f[3]),
                rounding_radius_nm: f[4],
                anchor: Point::new(f[5], f[6]),
            });
        }
        let (l, t) = next("top_cut")?;
        if t.len() != 2 || t[0] != "top_cut" {
            return Err(perr(l, "expected 'top_cut'"));
        }
        let top_cut_x = if t[1] == "-" {
            None
        } else {
            Some(num(l, t[1])?)
        };
        let (l, t) = next("end")?;
        if t != ["end"] {
            return Err(perr(l, "expected 'end'"));
        }
        Ok(Mesh {
            num_vertices: nv,
            nodes,
            elements,
            midside,
            element_region,
            order,
            boundary_edges,
            regions,
            arcs,
            corner_sites,
            top_cut_x,
        })
    }
}

fn kind_code(k: MaterialKind) -> String {
    match k {
        MaterialKind::Vacuum => "vacuum".into(),
        MaterialKind::Oxide(i) => format!("oxide:{i}"),
        MaterialKind::Substrate => "substrate".into(),
        MaterialKind::Virtual(v) => format!("virtual:{}", layer_code(v)),
    }
}

fn layer_code(v: VirtualLayer) -> String {
    match v {
        VirtualLayer::Shell(i) => format!("shell.{i}"),
        VirtualLayer::Slab(i) => format!("slab.{i}"),
    }
}

fn parse_layer(s: &str) -> Option<VirtualLayer> {
    let (kind, idx) = s.split_once('.')?;
    let i = idx.parse().ok()?;
    match kind {
        "shell" => Some(VirtualLayer::Shell(i)),
        "slab" => Some(VirtualLayer::Slab(i)),
        _ => None,
    }
}

fn parse_kind(s: &str) -> Option<MaterialKind> {
    match s {
        "vacuum" => Some(MaterialKind::Vacuum),
        "substrate" => Some(MaterialKind::Substrate),
        _ => {
            if let Some(i) = s.strip_prefix("oxide:") {
                i.parse().ok().map(MaterialKind::Oxide)
            } else {
                s.strip_prefix("virtual:")
                    .and_then(parse_layer)
                    .map(MaterialKind::Virtual)
            }
        }
    }
}

/// Angle, size and DOF statistics.
pub fn mesh_quality(mesh: &Mesh) -> MeshQuality {
    let mut min_a = f64::INFINITY;
    let mut sum_a = 0.0;
    let mut bins: BTreeMap<i32, usize> = BTreeMap::new();
    for e in &mesh.elements {
        let [a, b, c] = e.map(|i| mesh.nodes[i]);
        for ang in triangle_angles(a, b, c) {
            min_a = min_a.min(ang);
            sum_a += ang;
        }
        let d = diameter(a, b, c);
        *bins.entry(d.log2().floor() as i32).or_default() += 1;
    }
    let dirichlet = mesh.dirichlet_nodes().len();
    MeshQuality {
        min_angle_deg: min_a.to_degrees(),
        mean_angle_deg: (sum_a / (3 * mesh.elements.len()).max(1) as f64).to_degrees(),
        element_count: mesh.elements.len(),
        vertex_count: mesh.num_vertices,
        node_count: mesh.nodes.len(),
        dof_count: mesh.nodes.len() - dirichlet,
        h_histogram: bins.into_iter().map(|(k, n)| (2f64.powi(k), n)).collect(),
    }
}

/// Builds a mesh directly from explicit vertices and triangles (for tests
/// and fixtures). Boundary edges get markers from `regions` when given,
/// otherwise `Outer`.
pub fn mesh_from_triangles(
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    region_of: Vec<usize>,
    regions: &RegionSet,
) -> Mesh {
    let mut elements = triangles;
    for e in &mut elements {
        if (vertices[e[1]] - vertices[e[0]]).cross(vertices[e[2]] - vertices[e[0]]) < 0.0 {
            e.swap(1, 2);
        }
    }
    let boundary_edges = mark_boundary(&vertices, &elements, regions);
    let mut infos: Vec<RegionInfo> = regions
        .regions
        .iter()
        .map(|r| RegionInfo {
            region_id: r.region_id,
            material: r.material,
            virtual_layer: r.virtual_layer,
        })
        .collect();
    infos.sort_by_key(|r| r.region_id);
    Mesh {
        num_vertices: vertices.len(),
        nodes: vertices,
        elements,
        midside: Vec::new(),
        element_region: region_of,
        order: 1,
        boundary_edges,
        regions: infos,
        arcs: regions.arcs.clone(),
        corner_sites: regions.corner_sites.clone(),
        top_cut_x: regions.top_cut_x,
    }
}
