use std::f64::consts::PI;
use std::sync::OnceLock;

use qsurf_core::analysis::*;
use qsurf_core::fem::*;
use qsurf_core::geometry::*;
use qsurf_core::meshing::*;
use qsurf_core::studies::MeshSettings;

struct Solved {
    spec: CrossSectionSpec,
    mesh: Mesh,
    sol: FieldSolution,
}

fn reference() -> &'static Solved {
    static CELL: OnceLock<Solved> = OnceLock::new();
    CELL.get_or_init(|| {
        let spec = CrossSectionSpec::default();
        let rs = build_cross_section(&spec).unwrap();
        let mesh = MeshSettings::default().mesh(&rs, 2).unwrap();
        let sol = solve_mesh(&mesh, 1.0, 1e-10).unwrap();
        Solved { spec, mesh, sol }
    })
}

fn polyline(points: &[Point]) -> Curve {
    Curve {
        points: points.to_vec(),
        max_spacing_nm: f64::INFINITY,
    }
}

/// Vacuum square of half-width `l` with the metal filling the first
/// quadrant; the field sees a 270° exterior wedge at the origin.
fn right_angle_metal(l: f64) -> RegionSet {
    let o = Point::new(0.0, 0.0);
    let (px, py) = (Point::new(l, 0.0), Point::new(0.0, l));
    let outer = [
        px,
        Point::new(l, -l),
        Point::new(-l, -l),
        Point::new(-l, l),
        py,
    ];
    let mut boundary = outer.to_vec();
    boundary.push(o);
    RegionSet {
        regions: vec![PlanarRegion {
            region_id: 0,
            boundary,
            material: MaterialTag::vacuum(),
            virtual_layer: None,
            layer_thickness_nm: None,
        }],
        excluded: vec![vec![o, px, Point::new(l, l), py]],
        curves: vec![polyline(&outer), polyline(&[py, o, px])],
        boundaries: vec![
            MarkedPolyline {
                marker: BoundaryMarker::DirichletMetal,
                points: vec![py, o, px],
            },
            MarkedPolyline {
                marker: BoundaryMarker::DirichletGround,
                points: outer.to_vec(),
            },
        ],
        arcs: vec![],
        corner_sites: vec![CornerSite {
            label: "re-entrant".into(),
            apex: o,
            bisector: Point::new(-1.0, -1.0).normalized(),
            rounding_radius_nm: 0.0,
            anchor: o,
        }],
        bbox_min: Point::new(-l, -l),
        bbox_max: Point::new(l, l),
        top_cut_x: None,
    }
}

#[test]
fn participations_close_to_one() {
    let r = reference();
    let rep = region_energies(&r.sol, &r.mesh, &r.mesh.materials());
    assert!((rep.epr_sum() - 1.0).abs() < 1e-12);
    let by_class = rep.class_epr("vacuum") + rep.class_epr("oxide") + rep.class_epr("substrate");
    assert!((by_class - 1.0).abs() < 1e-12);
    let w: f64 = rep.regions.iter().map(|x| x.w_e_per_m).sum();
    assert!((w - rep.total_w_e_per_m).abs() <= 1e-12 * w);
    assert!(
        (rep.capacitance_per_m - 4.0 * rep.total_w_e_per_m).abs() <= 1e-12 * rep.capacitance_per_m
    );
}

#[test]
fn participations_do_not_depend_on_voltage() {
    let r = reference();
    let sol7 = solve_mesh(&r.mesh, 7.0, 1e-10).unwrap();
    let a = region_energies(&r.sol, &r.mesh, &r.mesh.materials());
    let b = region_energies(&sol7, &r.mesh, &r.mesh.materials());
    for (x, y) in a.regions.iter().zip(&b.regions) {
        assert!(
            (x.epr - y.epr).abs() <= 1e-9 * x.epr.max(1e-30),
            "{} vs {}",
            x.epr,
            y.epr
        );
        assert!((y.w_e_per_m / x.w_e_per_m - 49.0).abs() < 1e-6);
    }
    assert!((a.capacitance_per_m - b.capacitance_per_m).abs() <= 1e-9 * a.capacitance_per_m);
}

#[test]
fn oxide_q_follows_loss_tangent() {
    let r = reference();
    let rep = region_energies(&r.sol, &r.mesh, &r.mesh.materials());
    for reg in &rep.regions {
        if reg.material.loss_tangent > 0.0 {
            assert!((reg.q * reg.epr * reg.material.loss_tangent - 1.0).abs() < 1e-12);
        } else {
            assert!(reg.q.is_infinite());
        }
    }
    assert!(quality_factor(0.0, 1e-3).is_err());
    assert!(quality_factor(1e-3, 0.0).is_err());
}

#[test]
fn top_surface_share_is_part_of_the_oxide() {
    let r = reference();
    let rep = region_energies(&r.sol, &r.mesh, &r.mesh.materials());
    let ox: Vec<usize> = rep
        .regions
        .iter()
        .filter(|x| matches!(x.material.kind, MaterialKind::Oxide(_)))
        .map(|x| x.region_id)
        .collect();
    let top = rep.top_surface_epr(&ox);
    let all: f64 = ox.iter().map(|&i| rep.epr(i)).sum();
    assert!(top > 0.0 && top < all);
    assert!(r.spec.oxide_layers.len() == ox.len());
}

#[test]
fn flat_plate_matches_series_capacitor() {
    let rs = fixtures::parallel_plate(200.0, 10_000.0, &[(5.0, 10.0)]);
    for order in [1, 2] {
        let m = generate_mesh(&rs, &SizeField::uniform(400.0), order).unwrap();
        let sol = solve_mesh(&m, 1.0, 1e-12).unwrap();
        let rep = region_energies(&sol, &m, &m.materials());
        let exact = flat_surface_epr(5.0, 10.0, 10_000.0).unwrap();
        assert!((exact - 0.5 / 9995.5).abs() < 1e-18);
        assert!(
            (rep.epr(0) - exact).abs() <= 1e-8 * exact,
            "{} vs {exact}",
            rep.epr(0)
        );
    }
    assert!(flat_surface_epr(0.0, 10.0, 100.0).is_err());
    assert!(flat_surface_epr(5.0, 0.5, 100.0).is_err());
    assert!(flat_surface_epr(100.0, 2.0, 100.0).is_err());
}

#[test]
fn identical_halves_share_energy_equally() {
    let rs = fixtures::split_square(
        100.0,
        MaterialTag::vacuum(),
        MaterialTag::vacuum(),
        [
            BoundaryMarker::DirichletMetal,
            BoundaryMarker::NeumannSymmetry,
            BoundaryMarker::DirichletGround,
            BoundaryMarker::NeumannSymmetry,
        ],
    );
    let m = generate_mesh(&rs, &SizeField::uniform(9.0), 2).unwrap();
    let sol = solve_mesh(&m, 1.0, 1e-12).unwrap();
    let rep = region_energies(&sol, &m, &m.materials());
    assert!((rep.epr(0) - 0.5).abs() < 1e-10 && (rep.epr(1) - 0.5).abs() < 1e-10);
}

#[test]
fn re_entrant_right_angle_follows_the_edge_law() {
    let rs = right_angle_metal(1000.0);
    let size = SizeField::new(100.0, vec![(Point::new(0.0, 0.0), 0.05)], 0.25).unwrap();
    let m = generate_mesh(&rs, &size, 2).unwrap();
    let sol = solve_mesh(&m, 1.0, 1e-11).unwrap();
    let prof = sample_edge_field(
        &sol,
        &m,
        &rs.corner_sites[0],
        &ProfileMode::Ray {
            rho_min: 0.5,
            rho_max: 50.0,
            samples: 60,
        },
    )
    .unwrap();
    let fit = fit_edge_exponent(&prof, (1.0, 20.0)).unwrap();
    assert!((fit.exponent + 1.0 / 3.0).abs() <= 0.03, "{fit:?}");
    assert!(fit.r_squared > 0.999);
}

#[test]
fn interior_right_angle_field_grows_linearly() {
    let rs = fixtures::square(
        1000.0,
        [
            BoundaryMarker::DirichletMetal,
            BoundaryMarker::DirichletGround,
            BoundaryMarker::DirichletGround,
            BoundaryMarker::DirichletMetal,
        ],
        MaterialTag::vacuum(),
    );
    let size = SizeField::new(100.0, vec![(Point::new(0.0, 0.0), 1.0)], 0.25).unwrap();
    let m = generate_mesh(&rs, &size, 2).unwrap();
    let sol = solve_mesh(&m, 1.0, 1e-11).unwrap();
    let prof = sample_edge_field(
        &sol,
        &m,
        &rs.corner_sites[0],
        &ProfileMode::Ray {
            rho_min: 5.0,
            rho_max: 100.0,
            samples: 40,
        },
    )
    .unwrap();
    let fit = fit_edge_exponent(&prof, (5.0, 100.0)).unwrap();
    assert!((fit.exponent - 1.0).abs() <= 0.1, "{fit:?}");
}

#[test]
fn reference_profiles() {
    let r = reference();
    let xs = CrossSection::new(&r.spec).unwrap();
    let top = xs.top_corner();
    let ray = sample_edge_field(
        &r.sol,
        &r.mesh,
        &top,
        &ProfileMode::Ray {
            rho_min: 5.0,
            rho_max: 200.0,
            samples: 80,
        },
    )
    .unwrap();
    assert!(ray.rho.len() >= 20);
    assert!(ray.rho.last().unwrap() / ray.rho[0] >= 10.0);
    assert!(ray.to_csv().starts_with("rho_nm,E_V_per_nm\n"));
    let fit = fit_edge_exponent(&ray, (20.0, 40.0)).unwrap();
    assert!(fit.exponent < 0.0 && fit.r_squared > 0.99);
    let path = xs.perimeter_path(7.5, 100.0);
    let per = sample_edge_field(
        &r.sol,
        &r.mesh,
        &top,
        &ProfileMode::Perimeter { path, samples: 400 },
    )
    .unwrap();
    assert_eq!(local_maxima(&per.e, 0.05).len(), 2);
    assert!(matches!(
        fit_edge_exponent(&ray, (1000.0, 2000.0)),
        Err(AnalysisError::InsufficientSamples {
            found: 0,
            needed: 10
        })
    ));
}

fn coax_g(frequency: f64, current: f64) -> GFactorReport {
    let rs = fixtures::coax_quarter(1e6, 2.3e6, 96);
    let m = generate_mesh(&rs, &SizeField::uniform(6e4), 2).unwrap();
    let sol = solve_mesh(&m, 1.0, 1e-11).unwrap();
    g_factor(&sol, &m, frequency, current).unwrap()
}

#[test]
fn coax_g_factor_matches_closed_form() {
    let (a, b) = (1e-3f64, 2.3e-3);
    let omega = 2.0 * PI * 5e9;
    let exact = omega * qsurf_core::MU_0 * (b / a).ln() * a * b / (a + b);
    let g = coax_g(5e9, 1.0);
    assert!(
        (g.g_total - exact).abs() <= 1e-3 * exact,
        "{} vs {exact}",
        g.g_total
    );
    let g10 = coax_g(5e9, 10.0);
    assert!((g10.g_total - g.g_total).abs() <= 1e-12 * g.g_total);
    let g2f = coax_g(1e10, 1.0);
    assert!((g2f.g_total / g.g_total - 2.0).abs() < 1e-12);
    assert_eq!(g.conductors.len(), 2);
}

#[test]
fn g_factor_needs_a_vacuum_solve() {
    let r = reference();
    assert!(matches!(
        g_factor(&r.sol, &r.mesh, 5e9, 1.0),
        Err(AnalysisError::NonVacuumSolve(_))
    ));
}
