use std::f64::consts::PI;

use proptest::prelude::*;
use qsurf_core::circuit::*;

fn layers() -> impl Strategy<Value = Vec<(String, f64, f64)>> {
    prop::collection::vec((1e-8..0.9f64, 0.0..1e-2f64), 1..8).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (e, t))| (format!("layer{i}"), e, t))
            .collect()
    })
}

proptest! {
    #[test]
    fn energy_budget_balances(l in 1e-10..1e-7f64, c in 1e-15..1e-12f64, v in -1e-3..1e-3f64) {
        let q = LumpedQubit::new(l, c, v);
        let b = energy_balance(&q).unwrap();
        prop_assert!((b.w_0 - 2.0 * (b.w_h + b.w_q)).abs() <= 1e-12 * b.w_0.abs().max(1e-300));
        prop_assert!((b.w_0 - 2.0 * b.w_e).abs() <= 1e-12 * b.w_0.abs().max(1e-300));
        let f = resonant_frequency(&q).unwrap();
        prop_assert!(((2.0 * PI * f).powi(2) * l * c - 1.0).abs() < 1e-12);
    }

    #[test]
    fn budget_ignores_layer_order(mut ls in layers(), f in 1e8..2e10f64, seed in any::<u64>()) {
        let a = loss_budget(&ls, f).unwrap();
        let n = ls.len();
        ls.rotate_left((seed as usize) % n);
        ls.reverse();
        let b = loss_budget(&ls, f).unwrap();
        prop_assert_eq!(a.q_total.to_bits(), b.q_total.to_bits());
        prop_assert_eq!(a.t1_s.to_bits(), b.t1_s.to_bits());
    }

    #[test]
    fn lifetime_times_omega_is_q(ls in layers(), f in 1e8..2e10f64) {
        let b = loss_budget(&ls, f).unwrap();
        if b.q_total.is_finite() {
            prop_assert!((b.t1_s * 2.0 * PI * f / b.q_total - 1.0).abs() < 1e-12);
            let inv: f64 = b.contributions.iter().map(|c| 1.0 / c.q).sum();
            prop_assert!((inv * b.q_total - 1.0).abs() < 1e-12);
        }
        for c in &b.contributions {
            prop_assert!(c.q >= b.q_total);
        }
    }
}

#[test]
fn invalid_inputs_are_domain_errors() {
    assert!(resonant_frequency(&LumpedQubit::new(0.0, 1e-13, 1.0)).is_err());
    assert!(resonant_frequency(&LumpedQubit::new(1e-8, -1e-13, 1.0)).is_err());
    assert!(energy_balance(&LumpedQubit::new(1e-8, 1e-13, f64::NAN)).is_err());
    assert!(loss_budget(&[("a".into(), 0.1, -1.0)], 5e9).is_err());
    assert!(loss_budget(&[("a".into(), 0.1, 1e-3)], 0.0).is_err());
}

#[test]
fn provenance_is_carried_through() {
    let b = loss_budget_with_provenance(&[("oxide".into(), 2e-4, 1e-3, Some("solve".into()))], 5e9)
        .unwrap();
    assert_eq!(b.contributions[0].provenance.as_deref(), Some("solve"));
    assert!((b.q_total - 5e6).abs() < 1e-6);
}
