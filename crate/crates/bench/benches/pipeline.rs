use criterion::{black_box, criterion_group, criterion_main, Criterion};

use qsurf_bench::{bench_settings, reference_mesh, reference_regions, reference_solution};
use qsurf_core::analysis::region_energies;
use qsurf_core::fem::{assemble, solve_mesh};
use qsurf_core::geometry::CrossSectionSpec;
use qsurf_core::studies::{moving_mesh_states, Strategy, SweepSpec, SweepVariable};

fn meshing(c: &mut Criterion) {
    let rs = reference_regions();
    let settings = bench_settings();
    c.bench_function("mesh_p2", |b| {
        b.iter(|| settings.mesh(black_box(&rs), 2).unwrap())
    });
}

fn solving(c: &mut Criterion) {
    let mut g = c.benchmark_group("solve");
    g.sample_size(10);
    for order in [1u8, 2] {
        let mesh = reference_mesh(order);
        let mats = mesh.materials();
        g.bench_function(format!("assemble_p{order}"), |b| {
            b.iter(|| assemble(black_box(&mesh), &mats, 1.0).unwrap())
        });
        g.bench_function(format!("solve_p{order}"), |b| {
            b.iter(|| solve_mesh(black_box(&mesh), 1.0, 1e-10).unwrap())
        });
    }
    g.finish();
}

fn energies(c: &mut Criterion) {
    let mesh = reference_mesh(2);
    let sol = reference_solution(&mesh);
    let mats = mesh.materials();
    c.bench_function("region_energies_p2", |b| {
        b.iter(|| region_energies(black_box(&sol), &mesh, &mats))
    });
}

fn moving_mesh(c: &mut Criterion) {
    let mut spec = SweepSpec::new(
        CrossSectionSpec::default(),
        SweepVariable::OxideThickness,
        vec![5.0, 10.0, 20.0, 40.0],
        Strategy::MovingMesh,
    );
    spec.mesh = bench_settings();
    let (mesh, states) = moving_mesh_states(&spec).unwrap();
    c.bench_function("reassign_materials", |b| {
        b.iter(|| {
            for s in &states {
                black_box(mesh.reassign_materials(s).unwrap());
            }
        })
    });
}

criterion_group!(benches, meshing, solving, energies, moving_mesh);
criterion_main!(benches);
