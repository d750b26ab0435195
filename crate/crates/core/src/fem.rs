//! Lagrange P1/P2 finite elements for `∇·(ε∇φ) = 0`.
//!
//! Assembly runs in micrometres; fields come back in V/nm at nm
//! coordinates. Dirichlet nodes are eliminated symmetrically, leaving an SPD
//! system that is solved by Jacobi-preconditioned conjugate gradients.
//! Every reduction runs in a fixed order so results do not depend on the
//! worker count.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{BoundaryMarker, MaterialTag, Point};
use crate::meshing::Mesh;

/// nm per assembly length unit.
const UNIT_NM: f64 = 1000.0;
/// Fixed block size for deterministic parallel reductions.
const BLOCK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FemError {
    #[error("region {0} has no material")]
    MissingMaterial(usize),
    #[error("material of region {0} is invalid (permittivity >= 1, loss tangent >= 0)")]
    InvalidMaterial(usize),
    #[error("relative tolerance must lie in (0, 1e-6] (got {0})")]
    InvalidTolerance(f64),
    #[error(
        "conjugate gradients did not converge in {iterations} iterations (residual {residual:e})"
    )]
    NonConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
    #[error("system has no Dirichlet node")]
    SingularSystem,
    #[error("point {index} at ({x}, {y}) nm lies outside the domain")]
    PointOutsideDomain { index: usize, x: f64, y: f64 },
}

/// Compressed sparse row matrix with sorted column indices.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl CsrMatrix {
    /// Sums duplicate entries in triplet order (stable sort), so the result
    /// depends only on the triplet sequence.
    pub fn from_triplets(n: usize, mut t: Vec<(usize, usize, f64)>) -> Self {
        t.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0; n + 1];
        let mut col_idx = Vec::with_capacity(t.len() / 4);
        let mut values: Vec<f64> = Vec::with_capacity(t.len() / 4);
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for i in 0..n {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        let cols = &self.col_idx[self.row_ptr[r]..self.row_ptr[r + 1]];
        match cols.binary_search(&c) {
            Ok(k) => self.values[self.row_ptr[r] + k],
            Err(_) => 0.0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|r| {
            (self.row_ptr[r]..self.row_ptr[r + 1])
                .all(|k| self.get(self.col_idx[k], r) == self.values[k])
        })
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.par_chunks_mut(BLOCK).enumerate().for_each(|(b, chunk)| {
            for (i, yi) in chunk.iter_mut().enumerate() {
                let r = b * BLOCK + i;
                let mut s = 0.0;
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    s += self.values[k] * x[self.col_idx[k]];
                }
                *yi = s;
            }
        });
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|r| self.get(r, r)).collect()
    }
}

/// Reduced SPD system over free nodes.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub matrix: CsrMatrix,
    pub rhs: Vec<f64>,
    pub dof_to_node: Vec<usize>,
    pub node_to_dof: Vec<Option<usize>>,
    /// Prescribed node values, sorted by node.
    pub dirichlet: Vec<(usize, f64)>,
    pub materials: BTreeMap<usize, MaterialTag>,
    pub mesh: Arc<Mesh>,
}

impl LinearSystem {
    pub fn dof(&self) -> usize {
        self.dof_to_node.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FieldSample {
    pub element: usize,
    pub point: Point,
    /// Quadrature weight, nm².
    pub weight_nm2: f64,
    /// E = −∇φ, V/nm.
    pub e: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub residual: f64,
    pub dof: usize,
    pub rel_tol: f64,
}

#[derive(Debug, Clone)]
pub struct FieldSolution {
    pub potentials: Vec<f64>,
    pub order: u8,
    pub samples: Vec<FieldSample>,
    /// Start of each element's samples in `samples` (length = elements + 1).
    pub sample_offsets: Vec<usize>,
    pub diagnostics: SolveDiagnostics,
    pub residual_history: Vec<f64>,
    pub materials: BTreeMap<usize, MaterialTag>,
    /// Potential difference between metal and ground markers.
    pub voltage: f64,
}

impl FieldSolution {
    pub fn element_samples(&self, k: usize) -> &[FieldSample] {
        &self.samples[self.sample_offsets[k]..self.sample_offsets[k + 1]]
    }
}

/// Quadrature rule on the reference triangle; weights sum to 1/2.
struct Rule {
    points: &'static [(f64, f64)],
    weights: &'static [f64],
}

const RULE_1: Rule = Rule {
    points: &[(1.0 / 3.0, 1.0 / 3.0)],
    weights: &[0.5],
};
const RULE_3: Rule = Rule {
    points: &[
        (1.0 / 6.0, 1.0 / 6.0),
        (2.0 / 3.0, 1.0 / 6.0),
        (1.0 / 6.0, 2.0 / 3.0),
    ],
    weights: &[1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0],
};
const D4_A: f64 = 0.445_948_490_915_965;
const D4_B: f64 = 0.091_576_213_509_771;
const D4_WA: f64 = 0.5 * 0.223_381_589_678_011;
const D4_WB: f64 = 0.5 * 0.109_951_743_655_322;
const RULE_6: Rule = Rule {
    points: &[
        (D4_A, D4_A),
        (1.0 - 2.0 * D4_A, D4_A),
        (D4_A, 1.0 - 2.0 * D4_A),
        (D4_B, D4_B),
        (1.0 - 2.0 * D4_B, D4_B),
        (D4_B, 1.0 - 2.0 * D4_B),
    ],
    weights: &[D4_WA, D4_WA, D4_WA, D4_WB, D4_WB, D4_WB],
};

/// Shape functions and reference gradients at (ξ, η).
fn shape(order: u8, xi: f64, eta: f64) -> (Vec<f64>, Vec<(f64, f64)>) {
    let l = [1.0 - xi - eta, xi, eta];
    let dl = [(-1.0, -1.0), (1.0, 0.0), (0.0, 1.0)];
    if order == 1 {
        return (l.to_vec(), dl.to_vec());
    }
    let mut n = Vec::with_capacity(6);
    let mut d = Vec::with_capacity(6);
    for i in 0..3 {
        n.push(l[i] * (2.0 * l[i] - 1.0));
        let s = 4.0 * l[i] - 1.0;
        d.push((s * dl[i].0, s * dl[i].1));
    }
    for j in 0..3 {
        let (a, b) = ((j + 1) % 3, (j + 2) % 3);
        n.push(4.0 * l[a] * l[b]);
        d.push((
            4.0 * (l[a] * dl[b].0 + l[b] * dl[a].0),
            4.0 * (l[a] * dl[b].1 + l[b] * dl[a].1),
        ));
    }
    (n, d)
}

/// Geometry of one element: node coordinates and whether the map is curved.
struct ElementGeom {
    x: Vec<Point>,
    curved: bool,
}

impl ElementGeom {
    fn new(mesh: &Mesh, k: usize, scale: f64) -> Self {
        let nodes = mesh.element_nodes(k);
        ElementGeom {
            x: nodes.iter().map(|&i| mesh.nodes[i] * scale).collect(),
            curved: mesh.is_curved(k),
        }
    }

    /// Physical point, Jacobian determinant and inverse-transpose applied to
    /// reference gradients.
    fn map(&self, order: u8, xi: f64, eta: f64) -> (Point, f64, Vec<Point>) {
        let (n, d) = shape(order, xi, eta);
        let (pos, jac) = if self.curved {
            let mut p = Point::default();
            let (mut j00, mut j01, mut j10, mut j11) = (0.0, 0.0, 0.0, 0.0);
            for i in 0..n.len() {
                p = p + self.x[i] * n[i];
                j00 += self.x[i].x * d[i].0;
                j01 += self.x[i].x * d[i].1;
                j10 += self.x[i].y * d[i].0;
                j11 += self.x[i].y * d[i].1;
            }
            (p, [j00, j01, j10, j11])
        } else {
            let (a, b, c) = (self.x[0], self.x[1], self.x[2]);
            let p = a + (b - a) * xi + (c - a) * eta;
            (p, [b.x - a.x, c.x - a.x, b.y - a.y, c.y - a.y])
        };
        let det = jac[0] * jac[3] - jac[1] * jac[2];
        let grads = d
            .iter()
            .map(|&(dx, de)| {
                Point::new(
                    (jac[3] * dx - jac[2] * de) / det,
                    (-jac[1] * dx + jac[0] * de) / det,
                )
            })
            .collect();
        (pos, det, grads)
    }

    fn rule(&self, order: u8) -> &'static Rule {
        match (order, self.curved) {
            (1, _) => &RULE_1,
            (_, false) => &RULE_3,
            (_, true) => &RULE_6,
        }
    }
}

/// Closed-form P1 stiffness `ε/2 · cot` weights for triangle `a, b, c`.
pub fn element_stiffness_p1(a: Point, b: Point, c: Point, eps: f64) -> [[f64; 3]; 3] {
    let p = [a, b, c];
    let area2 = (b - a).cross(c - a);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let ei = p[(i + 2) % 3] - p[(i + 1) % 3];
            let ej = p[(j + 2) % 3] - p[(j + 1) % 3];
            k[i][j] = eps * ei.dot(ej) / (2.0 * area2.abs());
        }
    }
    k
}

fn element_matrix(mesh: &Mesh, k: usize, eps: f64) -> Vec<f64> {
    let g = ElementGeom::new(mesh, k, 1.0 / UNIT_NM);
    let nloc = if mesh.order == 2 { 6 } else { 3 };
    let mut ke = vec![0.0; nloc * nloc];
    let rule = g.rule(mesh.order);
    for (q, &(xi, eta)) in rule.points.iter().enumerate() {
        let (_, det, grads) = g.map(mesh.order, xi, eta);
        let w = rule.weights[q] * det.abs() * eps;
        for i in 0..nloc {
            for j in 0..nloc {
                ke[i * nloc + j] += w * grads[i].dot(grads[j]);
            }
        }
    }
    // Exact symmetry.
    for i in 0..nloc {
        for j in (i + 1)..nloc {
            let s = 0.5 * (ke[i * nloc + j] + ke[j * nloc + i]);
            ke[i * nloc + j] = s;
            ke[j * nloc + i] = s;
        }
    }
    ke
}

fn check_materials(
    mesh: &Mesh,
    materials: &BTreeMap<usize, MaterialTag>,
) -> Result<Vec<f64>, FemError> {
    mesh.element_region
        .iter()
        .map(|r| {
            let m = materials.get(r).ok_or(FemError::MissingMaterial(*r))?;
            if !m.is_valid() {
                return Err(FemError::InvalidMaterial(*r));
            }
            Ok(m.permittivity)
        })
        .collect()
}

/// Full node-by-node stiffness matrix (no boundary conditions).
pub fn assemble_stiffness(
    mesh: &Mesh,
    materials: &BTreeMap<usize, MaterialTag>,
) -> Result<CsrMatrix, FemError> {
    let eps = check_materials(mesh, materials)?;
    let triplets: Vec<(usize, usize, f64)> = (0..mesh.elements.len())
        .into_par_iter()
        .flat_map_iter(|k| {
            let ke = element_matrix(mesh, k, eps[k]);
            let nodes = mesh.element_nodes(k);
            let n = nodes.len();
            (0..n * n).map(move |ij| (nodes[ij / n], nodes[ij % n], ke[ij]))
        })
        .collect();
    Ok(CsrMatrix::from_triplets(mesh.num_nodes(), triplets))
}

/// Assembles with metal at `voltage` and ground at 0.
pub fn assemble(
    mesh: &Mesh,
    materials: &BTreeMap<usize, MaterialTag>,
    voltage: f64,
) -> Result<LinearSystem, FemError> {
    assemble_with_dirichlet(mesh, materials, &|_, m| match m {
        BoundaryMarker::DirichletMetal => voltage,
        _ => 0.0,
    })
}

/// Assembles with Dirichlet values given per node by `bc(point, marker)`.
pub fn assemble_with_dirichlet(
    mesh: &Mesh,
    materials: &BTreeMap<usize, MaterialTag>,
    bc: &(dyn Fn(Point, BoundaryMarker) -> f64 + Sync),
) -> Result<LinearSystem, FemError> {
    let full = assemble_stiffness(mesh, materials)?;
    let dn = mesh.dirichlet_nodes();
    let dirichlet: Vec<(usize, f64)> = dn
        .iter()
        .map(|(&n, &m)| (n, bc(mesh.nodes[n], m)))
        .collect();
    let mut value = vec![None; mesh.num_nodes()];
    for &(n, v) in &dirichlet {
        value[n] = Some(v);
    }
    let mut node_to_dof = vec![None; mesh.num_nodes()];
    let mut dof_to_node = Vec::new();
    for n in 0..mesh.num_nodes() {
        if value[n].is_none() {
            node_to_dof[n] = Some(dof_to_node.len());
            dof_to_node.push(n);
        }
    }
    let nd = dof_to_node.len();
    let mut row_ptr = Vec::with_capacity(nd + 1);
    row_ptr.push(0);
    let mut col_idx = Vec::new();
    let mut values = Vec::new();
    let mut rhs = vec![0.0; nd];
    for (i, &n) in dof_to_node.iter().enumerate() {
        for k in full.row_ptr[n]..full.row_ptr[n + 1] {
            let c = full.col_idx[k];
            match (node_to_dof[c], value[c]) {
                (Some(j), _) => {
                    col_idx.push(j);
                    values.push(full.values[k]);
                }
                (None, Some(v)) => rhs[i] -= full.values[k] * v,
                (None, None) => unreachable!(),
            }
        }
        row_ptr.push(col_idx.len());
    }
    Ok(LinearSystem {
        matrix: CsrMatrix {
            n: nd,
            row_ptr,
            col_idx,
            values,
        },
        rhs,
        dof_to_node,
        node_to_dof,
        dirichlet,
        materials: materials.clone(),
        mesh: Arc::new(mesh.clone()),
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let partial: Vec<f64> = a
        .par_chunks(BLOCK)
        .zip(b.par_chunks(BLOCK))
        .map(|(x, y)| x.iter().zip(y).map(|(p, q)| p * q).sum::<f64>())
        .collect();
    partial.iter().sum()
}

/// Jacobi-preconditioned CG. Returns nodal potentials and field samples.
pub fn solve(system: &LinearSystem, rel_tol: f64) -> Result<FieldSolution, FemError> {
    if !(rel_tol > 0.0 && rel_tol <= 1e-6) {
        return Err(FemError::InvalidTolerance(rel_tol));
    }
    if system.dirichlet.is_empty() {
        return Err(FemError::SingularSystem);
    }
    let a = &system.matrix;
    let b = &system.rhs;
    let n = system.dof();
    let mut x = vec![0.0; n];
    let bnorm = dot(b, b).sqrt();
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut residual = 0.0;
    if bnorm > 0.0 && n > 0 {
        let cap = ((50.0 * (n as f64).sqrt()).ceil() as usize).max(50);
        let dinv: Vec<f64> = a.diagonal().iter().map(|d| 1.0 / d).collect();
        let mut r = b.clone();
        let mut z: Vec<f64> = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
        let mut p = z.clone();
        let mut ap = vec![0.0; n];
        let mut rz = dot(&r, &z);
        loop {
            a.mul_vec(&p, &mut ap);
            let alpha = rz / dot(&p, &ap);
            x.par_iter_mut().zip(&p).for_each(|(x, p)| *x += alpha * p);
            r.par_iter_mut().zip(&ap).for_each(|(r, q)| *r -= alpha * q);
            iterations += 1;
            residual = dot(&r, &r).sqrt() / bnorm;
            history.push(residual);
            if residual <= rel_tol {
                // Confirm against the true residual before stopping.
                a.mul_vec(&x, &mut ap);
                let mut rt: Vec<f64> = b.iter().zip(&ap).map(|(b, q)| b - q).collect();
                let true_res = dot(&rt, &rt).sqrt() / bnorm;
                if true_res <= rel_tol {
                    residual = true_res;
                    break;
                }
                std::mem::swap(&mut r, &mut rt);
                z = r.iter().zip(&dinv).map(|(r, d)| r * d).collect();
                p = z.clone();
                rz = dot(&r, &z);
                continue;
            }
            if iterations >= cap {
                return Err(FemError::NonConvergence {
                    iterations,
                    residual,
                    history,
                });
            }
            z.par_iter_mut()
                .zip(&r)
                .zip(&dinv)
                .for_each(|((z, r), d)| *z = r * d);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            p.par_iter_mut()
                .zip(&z)
                .for_each(|(p, z)| *p = z + beta * *p);
        }
    }
    let mesh = &system.mesh;
    let mut potentials = vec![0.0; mesh.num_nodes()];
    for &(nd, v) in &system.dirichlet {
        potentials[nd] = v;
    }
    for (i, &nd) in system.dof_to_node.iter().enumerate() {
        potentials[nd] = x[i];
    }
    let voltage = voltage_span(system);
    let (samples, sample_offsets) = field_samples(mesh, &potentials);
    Ok(FieldSolution {
        potentials,
        order: mesh.order,
        samples,
        sample_offsets,
        diagnostics: SolveDiagnostics {
            iterations,
            residual,
            dof: n,
            rel_tol,
        },
        residual_history: history,
        materials: system.materials.clone(),
        voltage,
    })
}

fn voltage_span(system: &LinearSystem) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(_, v) in &system.dirichlet {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    hi - lo
}

fn field_samples(mesh: &Mesh, phi: &[f64]) -> (Vec<FieldSample>, Vec<usize>) {
    let per: Vec<Vec<FieldSample>> = (0..mesh.elements.len())
        .into_par_iter()
        .map(|k| {
            let g = ElementGeom::new(mesh, k, 1.0);
            let nodes = mesh.element_nodes(k);
            let rule = g.rule(mesh.order);
            rule.points
                .iter()
                .zip(rule.weights)
                .map(|(&(xi, eta), &w)| {
                    let (pos, det, grads) = g.map(mesh.order, xi, eta);
                    let mut e = Point::default();
                    for (i, &nd) in nodes.iter().enumerate() {
                        e = e - grads[i] * phi[nd];
                    }
                    FieldSample {
                        element: k,
                        point: pos,
                        weight_nm2: w * det.abs(),
                        e,
                    }
                })
                .collect()
        })
        .collect();
    let mut offsets = Vec::with_capacity(per.len() + 1);
    offsets.push(0);
    let mut samples = Vec::with_capacity(per.iter().map(|v| v.len()).sum());
    for v in per {
        samples.extend(v);
        offsets.push(samples.len());
    }
    (samples, offsets)
}

/// Uniform-grid point locator over element bounding boxes.
pub struct PointLocator<'a> {
    mesh: &'a Mesh,
    origin: Point,
    cell: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<usize>>,
}

impl<'a> PointLocator<'a> {
    pub fn new(mesh: &'a Mesh) -> Self {
        let (mut lo, mut hi) = (
            Point::new(f64::INFINITY, f64::INFINITY),
            Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
        );
        for p in &mesh.nodes {
            lo = Point::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Point::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let w = (hi.x - lo.x).max(1e-12);
        let h = (hi.y - lo.y).max(1e-12);
        let target = (mesh.elements.len() as f64).sqrt().clamp(1.0, 1024.0);
        let cell = (w.max(h) / target).max(1e-12);
        let nx = ((w / cell).ceil() as usize).max(1);
        let ny = ((h / cell).ceil() as usize).max(1);
        let mut cells = vec![Vec::new(); nx * ny];
        for k in 0..mesh.elements.len() {
            let nodes = mesh.element_nodes(k);
            let (mut a, mut b) = (
                Point::new(f64::INFINITY, f64::INFINITY),
                Point::new(f64::NEG_INFINITY, f64::NEG_INFINITY),
            );
            for &n in &nodes {
                let p = mesh.nodes[n];
                a = Point::new(a.x.min(p.x), a.y.min(p.y));
                b = Point::new(b.x.max(p.x), b.y.max(p.y));
            }
            let pad = 1e-9 * cell;
            let i0 = (((a.x - pad - lo.x) / cell).floor().max(0.0) as usize).min(nx - 1);
            let i1 = (((b.x + pad - lo.x) / cell).floor().max(0.0) as usize).min(nx - 1);
            let j0 = (((a.y - pad - lo.y) / cell).floor().max(0.0) as usize).min(ny - 1);
            let j1 = (((b.y + pad - lo.y) / cell).floor().max(0.0) as usize).min(ny - 1);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    cells[j * nx + i].push(k);
                }
            }
        }
        PointLocator {
            mesh,
            origin: lo,
            cell,
            nx,
            ny,
            cells,
        }
    }

    /// Lowest-id element containing `p`, with reference coordinates.
    pub fn locate(&self, p: Point) -> Option<(usize, f64, f64)> {
        let fx = (p.x - self.origin.x) / self.cell;
        let fy = (p.y - self.origin.y) / self.cell;
        if fx < -1e-9 || fy < -1e-9 || fx > self.nx as f64 + 1e-9 || fy > self.ny as f64 + 1e-9 {
            return None;
        }
        let i = (fx.floor().max(0.0) as usize).min(self.nx - 1);
        let j = (fy.floor().max(0.0) as usize).min(self.ny - 1);
        // Candidate lists are in increasing element id.
        for &k in &self.cells[j * self.nx + i] {
            if let Some((xi, eta)) = self.reference_coords(k, p) {
                return Some((k, xi, eta));
            }
        }
        None
    }

    fn reference_coords(&self, k: usize, p: Point) -> Option<(f64, f64)> {
        let m = self.mesh;
        let [a, b, c] = m.elements[k].map(|i| m.nodes[i]);
        let det = (b - a).cross(c - a);
        let d = p - a;
        let mut xi = d.cross(c - a) / det;
        let mut eta = (b - a).cross(d) / det;
        let tol = 1e-10;
        if m.is_curved(k) {
            let g = ElementGeom::new(m, k, 1.0);
            for _ in 0..30 {
                let (n, dn) = shape(2, xi, eta);
                let mut x = Point::default();
                let (mut j00, mut j01, mut j10, mut j11) = (0.0, 0.0, 0.0, 0.0);
                for i in 0..6 {
                    x = x + g.x[i] * n[i];
                    j00 += g.x[i].x * dn[i].0;
                    j01 += g.x[i].x * dn[i].1;
                    j10 += g.x[i].y * dn[i].0;
                    j11 += g.x[i].y * dn[i].1;
                }
                let r = p - x;
                let dt = j00 * j11 - j01 * j10;
                let dxi = (j11 * r.x - j01 * r.y) / dt;
                let deta = (-j10 * r.x + j00 * r.y) / dt;
                xi += dxi;
                eta += deta;
                if dxi.abs() + deta.abs() < 1e-14 {
                    break;
                }
            }
        }
        if xi >= -tol && eta >= -tol && xi + eta <= 1.0 + tol {
            Some((xi.clamp(0.0, 1.0), eta.clamp(0.0, 1.0)))
        } else {
            None
        }
    }
}

/// E (V/nm) at each point from the containing element.
pub fn evaluate_field(
    solution: &FieldSolution,
    mesh: &Mesh,
    points: &[Point],
) -> Result<Vec<Point>, FemError> {
    let loc = PointLocator::new(mesh);
    evaluate_with(&loc, solution, mesh, points, |g, nodes, xi, eta| {
        let (_, _, grads) = g.map(mesh.order, xi, eta);
        let mut e = Point::default();
        for (i, &nd) in nodes.iter().enumerate() {
            e = e - grads[i] * solution.potentials[nd];
        }
        e
    })
}

/// Interpolated potential (V) at each point.
pub fn evaluate_potential(
    solution: &FieldSolution,
    mesh: &Mesh,
    points: &[Point],
) -> Result<Vec<f64>, FemError> {
    let loc = PointLocator::new(mesh);
    evaluate_with(&loc, solution, mesh, points, |_, nodes, xi, eta| {
        let (n, _) = shape(mesh.order, xi, eta);
        nodes
            .iter()
            .enumerate()
            .map(|(i, &nd)| n[i] * solution.potentials[nd])
            .sum()
    })
}

/// Field evaluation reusing a prebuilt locator.
pub fn evaluate_field_located(
    loc: &PointLocator<'_>,
    solution: &FieldSolution,
    mesh: &Mesh,
    points: &[Point],
) -> Result<Vec<Point>, FemError> {
    evaluate_with(loc, solution, mesh, points, |g, nodes, xi, eta| {
        let (_, _, grads) = g.map(mesh.order, xi, eta);
        let mut e = Point::default();
        for (i, &nd) in nodes.iter().enumerate() {
            e = e - grads[i] * solution.potentials[nd];
        }
        e
    })
}

fn evaluate_with<T: Send>(
    loc: &PointLocator<'_>,
    _solution: &FieldSolution,
    mesh: &Mesh,
    points: &[Point],
    f: impl Fn(&ElementGeom, &[usize], f64, f64) -> T + Sync,
) -> Result<Vec<T>, FemError> {
    points
        .iter()
        .enumerate()
        .map(|(index, &p)| {
            let (k, xi, eta) = loc.locate(p).ok_or(FemError::PointOutsideDomain {
                index,
                x: p.x,
                y: p.y,
            })?;
            let g = ElementGeom::new(mesh, k, 1.0);
            Ok(f(&g, &mesh.element_nodes(k), xi, eta))
        })
        .collect()
}

/// Field sample on a Dirichlet conductor edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdgeSample {
    pub marker: BoundaryMarker,
    pub point: Point,
    pub e: Point,
    /// Line quadrature weight, nm.
    pub weight_nm: f64,
}

/// Three-point Gauss-Legendre samples of E along every Dirichlet edge,
/// taken from the adjacent element.
pub fn boundary_field_samples(solution: &FieldSolution, mesh: &Mesh) -> Vec<EdgeSample> {
    let mut owner: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for (k, t) in mesh.elements.iter().enumerate() {
        for j in 0..3 {
            let (a, b) = (t[(j + 1) % 3], t[(j + 2) % 3]);
            owner.entry((a.min(b), a.max(b))).or_insert((k, j));
        }
    }
    let refv = [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0)];
    let s = (0.6f64).sqrt();
    let gauss = [
        (0.5 * (1.0 - s), 5.0 / 18.0),
        (0.5, 8.0 / 18.0),
        (0.5 * (1.0 + s), 5.0 / 18.0),
    ];
    let mut out = Vec::new();
    for be in &mesh.boundary_edges {
        if !be.marker.is_dirichlet() {
            continue;
        }
        let Some(&(k, j)) = owner.get(&(be.nodes[0], be.nodes[1])) else {
            continue;
        };
        let g = ElementGeom::new(mesh, k, 1.0);
        let nodes = mesh.element_nodes(k);
        let (ra, rb) = (refv[(j + 1) % 3], refv[(j + 2) % 3]);
        let dir = (rb.0 - ra.0, rb.1 - ra.1);
        for &(t, w) in &gauss {
            let (xi, eta) = (ra.0 + t * dir.0, ra.1 + t * dir.1);
            let (pos, _, grads) = g.map(mesh.order, xi, eta);
            let (_, dn) = shape(mesh.order, xi, eta);
            let mut tangent = Point::default();
            if g.curved {
                for i in 0..nodes.len() {
                    tangent = tangent + g.x[i] * (dn[i].0 * dir.0 + dn[i].1 * dir.1);
                }
            } else {
                tangent = (g.x[1] - g.x[0]) * dir.0 + (g.x[2] - g.x[0]) * dir.1;
            }
            let mut e = Point::default();
            for (i, &nd) in nodes.iter().enumerate() {
                e = e - grads[i] * solution.potentials[nd];
            }
            out.push(EdgeSample {
                marker: be.marker,
                point: pos,
                e,
                weight_nm: w * tangent.norm(),
            });
        }
    }
    out
}

/// Field samples as CSV `x_nm,y_nm,Ex_V_per_nm,Ey_V_per_nm,region_id`.
pub fn fields_csv(solution: &FieldSolution, mesh: &Mesh) -> String {
    use crate::fmt_sig9 as f;
    let mut s = String::from("x_nm,y_nm,Ex_V_per_nm,Ey_V_per_nm,region_id\n");
    for smp in &solution.samples {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            f(smp.point.x),
            f(smp.point.y),
            f(smp.e.x),
            f(smp.e.y),
            mesh.element_region[smp.element]
        ));
    }
    s
}

/// Convenience: assemble with the mesh's own materials and solve.
pub fn solve_mesh(mesh: &Mesh, voltage: f64, rel_tol: f64) -> Result<FieldSolution, FemError> {
    let sys = assemble(mesh, &mesh.materials(), voltage)?;
    solve(&sys, rel_tol)
}
