use std::f64::consts::FRAC_PI_2;

use qsurf_core::analysis::region_energies;
use qsurf_core::fem::*;
use qsurf_core::geometry::*;
use qsurf_core::meshing::*;
use qsurf_core::EPSILON_0;

const TIGHT: f64 = 1e-13;

fn plate(order: u8, shells: &[(f64, f64)]) -> Mesh {
    let rs = fixtures::parallel_plate(200.0, 10_000.0, shells);
    generate_mesh(&rs, &SizeField::uniform(400.0), order).unwrap()
}

fn coax(order: u8, h: f64) -> Mesh {
    let rs = fixtures::coax_quarter(1000.0, 2300.0, 48);
    generate_mesh(&rs, &SizeField::uniform(h), order).unwrap()
}

fn coax_phi(p: Point) -> f64 {
    (2300.0 / p.norm()).ln() / 2.3f64.ln()
}

fn grid(lo: Point, hi: Point, n: usize) -> Vec<Point> {
    let mut v = Vec::new();
    for i in 0..=n {
        for j in 0..=n {
            let (s, t) = (i as f64 / n as f64, j as f64 / n as f64);
            v.push(Point::new(
                lo.x + s * (hi.x - lo.x),
                lo.y + t * (hi.y - lo.y),
            ));
        }
    }
    v
}

#[test]
fn parallel_plate_field_is_linear() {
    for order in [1, 2] {
        let m = plate(order, &[]);
        let sol = solve_mesh(&m, 1.0, TIGHT).unwrap();
        for (p, phi) in m.nodes.iter().zip(&sol.potentials) {
            assert!(
                (phi - (1.0 - p.y / 10_000.0)).abs() <= 1e-12,
                "order {order} at {p:?}: {phi}"
            );
        }
        for s in &sol.samples {
            assert!(
                (s.e.y - 1e-4).abs() <= 1e-12 * 1e4 * 1e-4 && s.e.x.abs() <= 1e-15,
                "{:?}",
                s.e
            );
        }
    }
}

#[test]
fn layered_plate_keeps_normal_displacement() {
    let m = plate(1, &[(5.0, 10.0)]);
    let sol = solve_mesh(&m, 1.0, TIGHT).unwrap();
    let e_vac = 1.0 / (9995.0 + 0.5);
    for k in 0..m.elements.len() {
        let eps = m.material(m.element_region[k]).unwrap().permittivity;
        for s in sol.element_samples(k) {
            assert!((eps * s.e.y - e_vac).abs() <= 1e-7 * e_vac);
        }
    }
}

#[test]
fn patch_test_reproduces_linear_potential() {
    let rs = fixtures::square(
        100.0,
        [BoundaryMarker::DirichletMetal; 4],
        MaterialTag::vacuum(),
    );
    let exact = |p: Point| 0.3 + 2e-3 * p.x - 5e-3 * p.y;
    for order in [1, 2] {
        let m = generate_mesh(&rs, &SizeField::uniform(12.0), order).unwrap();
        let sys = assemble_with_dirichlet(&m, &m.materials(), &|p, _| exact(p)).unwrap();
        assert!(sys.matrix.is_symmetric());
        let sol = solve(&sys, TIGHT).unwrap();
        for (p, phi) in m.nodes.iter().zip(&sol.potentials) {
            assert!((phi - exact(*p)).abs() < 1e-12);
        }
        for s in &sol.samples {
            assert!((s.e.x + 2e-3).abs() < 1e-12 && (s.e.y - 5e-3).abs() < 1e-12);
        }
    }
}

#[test]
fn split_square_parallel_to_field_is_exact() {
    let rs = fixtures::split_square(
        100.0,
        MaterialTag::vacuum(),
        MaterialTag::oxide(0, 11.7, 0.0),
        [
            BoundaryMarker::DirichletMetal,
            BoundaryMarker::NeumannSymmetry,
            BoundaryMarker::DirichletGround,
            BoundaryMarker::NeumannSymmetry,
        ],
    );
    let m = generate_mesh(&rs, &SizeField::uniform(10.0), 2).unwrap();
    let sol = solve_mesh(&m, 2.0, TIGHT).unwrap();
    for (p, phi) in m.nodes.iter().zip(&sol.potentials) {
        assert!((phi - 2.0 * (1.0 - p.y / 100.0)).abs() < 1e-11);
    }
    let rep = region_energies(&sol, &m, &m.materials());
    let (w0, w1) = (
        rep.region(0).unwrap().w_e_per_m,
        rep.region(1).unwrap().w_e_per_m,
    );
    assert!((w1 / w0 - 11.7).abs() < 1e-9);
}

#[test]
fn coax_potential_and_field() {
    let m = coax(2, 120.0).refine_curved();
    let sol = solve_mesh(&m, 1.0, 1e-11).unwrap();
    let pts: Vec<Point> = (1..20)
        .flat_map(|i| {
            let r = 1000.0 + 1300.0 * i as f64 / 20.0;
            (0..9).map(move |j| Point::polar(r, FRAC_PI_2 * (0.05 + 0.9 * j as f64 / 8.0)))
        })
        .collect();
    let phi = evaluate_potential(&sol, &m, &pts).unwrap();
    for (p, v) in pts.iter().zip(&phi) {
        assert!((v - coax_phi(*p)).abs() <= 5e-3, "{p:?}");
    }
    let at: Vec<Point> = (0..5)
        .map(|j| Point::polar(1500.0, FRAC_PI_2 * (0.1 + 0.2 * j as f64)))
        .collect();
    let e_exact = 1.0 / (1500.0 * 2.3f64.ln());
    for e in evaluate_field(&sol, &m, &at).unwrap() {
        assert!(
            (e.norm() - e_exact).abs() <= 0.01 * e_exact,
            "{}",
            e.norm() / e_exact
        );
    }
}

#[test]
fn coax_solution_is_symmetric_about_the_diagonal() {
    let m = coax(2, 150.0);
    let sol = solve_mesh(&m, 1.0, 1e-11).unwrap();
    let pts: Vec<Point> = (0..30)
        .map(|i| Point::polar(1100.0 + 35.0 * i as f64, 0.2 + 0.02 * i as f64))
        .collect();
    let mirrored: Vec<Point> = pts.iter().map(|p| Point::new(p.y, p.x)).collect();
    let a = evaluate_potential(&sol, &m, &pts).unwrap();
    let b = evaluate_potential(&sol, &m, &mirrored).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 2e-3);
    }
}

#[test]
fn field_on_the_metal_is_normal() {
    let m = coax(2, 150.0);
    let sol = solve_mesh(&m, 1.0, 1e-12).unwrap();
    let edge = boundary_field_samples(&sol, &m);
    assert!(edge
        .iter()
        .any(|s| s.marker == BoundaryMarker::DirichletMetal));
    for s in edge {
        let radial = s.point.normalized();
        let tangential = s.e.cross(radial).abs();
        assert!(
            tangential <= 1e-6 * s.e.norm(),
            "{tangential} vs {}",
            s.e.norm()
        );
    }
}

#[test]
fn response_is_linear_in_voltage() {
    let m = coax(1, 200.0);
    let a = solve_mesh(&m, 1.0, 1e-12).unwrap();
    let b = solve_mesh(&m, 3.0, 1e-12).unwrap();
    for (x, y) in a.potentials.iter().zip(&b.potentials) {
        assert!((3.0 * x - y).abs() < 1e-9);
    }
    let wa = region_energies(&a, &m, &m.materials()).total_w_e_per_m;
    let wb = region_energies(&b, &m, &m.materials()).total_w_e_per_m;
    assert!((wb / wa - 9.0).abs() < 1e-9);
}

#[test]
fn energy_decreases_under_nested_refinement() {
    let mut m = coax(1, 250.0);
    let mut last = f64::INFINITY;
    for _ in 0..3 {
        let sol = solve_mesh(&m, 1.0, 1e-12).unwrap();
        let w = region_energies(&sol, &m, &m.materials()).total_w_e_per_m;
        assert!(w < last, "{w} !< {last}");
        last = w;
        m = m.refine_uniform();
    }
}

#[test]
fn quadratic_elements_beat_linear_at_matched_dof() {
    let exact_c = FRAC_PI_2 * EPSILON_0 / 2.3f64.ln();
    let base = coax(1, 200.0);
    let p1 = base.refine_curved();
    let p2 = base.with_order(2);
    let d1 = p1.quality().dof_count;
    let d2 = p2.quality().dof_count;
    assert!((d1 as f64 / d2 as f64 - 1.0).abs() < 0.05);
    let c = |m: &Mesh| {
        let s = solve_mesh(m, 1.0, 1e-12).unwrap();
        region_energies(&s, m, &m.materials()).capacitance_per_m
    };
    let (e1, e2) = ((c(&p1) - exact_c).abs(), (c(&p2) - exact_c).abs());
    assert!(e2 <= e1, "P2 {e2} vs P1 {e1}");
}

#[test]
fn solver_failures_are_reported() {
    let m = coax(1, 300.0);
    let sys = assemble(&m, &m.materials(), 1.0).unwrap();
    for tol in [0.0, -1e-8, 1e-5, f64::NAN] {
        assert!(matches!(
            solve(&sys, tol),
            Err(FemError::InvalidTolerance(_))
        ));
    }
    match solve(&sys, 1e-300) {
        Err(FemError::NonConvergence {
            iterations,
            history,
            ..
        }) => {
            let cap = (50.0 * (sys.dof() as f64).sqrt()).ceil() as usize;
            assert_eq!(iterations, cap.max(50));
            assert_eq!(history.len(), iterations);
        }
        other => panic!(
            "expected non-convergence, got {:?}",
            other.map(|s| s.diagnostics)
        ),
    }
    let sol = solve(&sys, 1e-10).unwrap();
    assert!(matches!(
        evaluate_field(&sol, &m, &[Point::new(10.0, 10.0)]),
        Err(FemError::PointOutsideDomain { index: 0, .. })
    ));
}

#[test]
fn stiffness_rows_sum_to_zero() {
    let m = coax(2, 300.0);
    let k = assemble_stiffness(&m, &m.materials()).unwrap();
    assert!(k.is_symmetric());
    let ones = vec![1.0; k.n];
    let mut y = vec![0.0; k.n];
    k.mul_vec(&ones, &mut y);
    let scale = k.diagonal().iter().cloned().fold(0.0, f64::max);
    assert!(y.iter().all(|v| v.abs() < 1e-11 * scale));
    let g = grid(Point::new(0.0, 0.0), Point::new(10.0, 10.0), 2);
    assert_eq!(g.len(), 9);
}
