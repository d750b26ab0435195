use proptest::prelude::*;
use qsurf_core::geometry::*;

fn spec_strategy() -> impl Strategy<Value = CrossSectionSpec> {
    (
        100.0..400.0f64,
        0.0..50.0f64,
        0.0..30.0f64,
        0.0..30.0f64,
        prop_oneof![Just(0.0), 1.0..100.0f64],
        prop::collection::vec((3.0..30.0f64, 1.0..40.0f64), 0..3),
    )
        .prop_map(|(film, alpha, rt, rb, trench, ox)| CrossSectionSpec {
            film_thickness_nm: film,
            sidewall_angle_deg: alpha,
            r_top_nm: rt,
            r_bottom_nm: rb,
            trench_depth_nm: trench,
            oxide_layers: ox
                .into_iter()
                .map(|(t, e)| OxideLayer {
                    thickness_nm: t,
                    permittivity: e,
                    loss_tangent: 1e-3,
                })
                .collect(),
            ..CrossSectionSpec::default()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn regions_tile_the_box(spec in spec_strategy()) {
        let rs = build_cross_section(&spec).unwrap();
        let box_area = rs.box_area();
        let covered = rs.region_area_sum() + rs.excluded_area();
        prop_assert!((covered - box_area).abs() <= 1e-9 * box_area, "covered {covered} box {box_area}");
    }

    #[test]
    fn shells_are_conformal(spec in spec_strategy(), probe in 0.05..0.95f64) {
        let xs = CrossSection::new(&spec).unwrap();
        let metal = xs.metal_contour();
        let mut t = 0.0;
        for layer in &spec.oxide_layers {
            t += layer.thickness_nm;
            let outer = xs.offset_curve(t);
            // A vertex partway along the outer curve sits at distance t from the metal,
            // up to the chord sagitta of the discretized arcs.
            let i = ((outer.len() - 1) as f64 * probe) as usize;
            let p = outer[i];
            if p.y > 1e-9 {
                let d = point_polyline_distance(p, &metal);
                prop_assert!((d - t).abs() <= MAX_SAGITTA_NM + 1e-9, "d {d} t {t}");
            }
        }
    }

    #[test]
    fn every_region_is_positive(spec in spec_strategy()) {
        let rs = build_cross_section(&spec).unwrap();
        for r in &rs.regions {
            prop_assert!(r.area() > 0.0, "region {} area {}", r.region_id, r.area());
            prop_assert!(r.material.is_valid());
        }
    }

    #[test]
    fn virtual_shells_add_regions_not_area(spec in spec_strategy(), extra in prop::collection::vec(3.0..30.0f64, 1..4)) {
        let plain = build_cross_section(&spec).unwrap();
        let with = build_virtual_layers(&spec, &extra, &[]).unwrap();
        prop_assert_eq!(with.regions.len(), plain.regions.len() + extra.len());
        prop_assert!((with.region_area_sum() - plain.region_area_sum()).abs() <= 1e-9 * plain.box_area());
    }
}

#[test]
fn validation_lists_all_violations() {
    let bad = CrossSectionSpec {
        film_thickness_nm: -1.0,
        trench_depth_nm: -5.0,
        ..CrossSectionSpec::default()
    };
    let v = validate_spec(&bad);
    assert!(v.len() >= 2, "{v:?}");
    assert!(v.iter().any(|x| x.message.contains("trench_depth >= 0")));
}

#[test]
fn roundings_larger_than_the_film_overlap() {
    let spec = CrossSectionSpec {
        r_top_nm: 150.0,
        r_bottom_nm: 150.0,
        ..CrossSectionSpec::default()
    };
    let v = validate_spec(&spec);
    assert!(
        v.iter().any(|x| x.message.contains("rounding overlap")),
        "{v:?}"
    );
    assert!(build_cross_section(&spec).is_err());
}

#[test]
fn default_box_is_large_against_the_film() {
    let spec = CrossSectionSpec::default();
    let rs = build_cross_section(&spec).unwrap();
    let w = rs.bbox_max.x - rs.bbox_min.x;
    let h = rs.bbox_max.y - rs.bbox_min.y;
    assert!(w.min(h) >= 50.0 * spec.film_thickness_nm);
}
