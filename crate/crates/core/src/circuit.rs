//! Lumped transmon: resonance, energy balance and loss budget.
//!
//! The junction is a lumped linear inductor, so the surface-current term of
//! the magnetic energy collapses to `¼·L_J·I²`. The aspect ratio is carried
//! as metadata only.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CircuitError {
    #[error("domain error: {0}")]
    DomainError(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LumpedQubit {
    /// H.
    pub josephson_inductance: f64,
    /// Junction aspect ratio; not used in any computation.
    pub junction_aspect_ratio: f64,
    /// F.
    pub capacitance: f64,
    /// V.
    pub voltage: f64,
}

impl LumpedQubit {
    pub fn new(josephson_inductance: f64, capacitance: f64, voltage: f64) -> Self {
        LumpedQubit {
            josephson_inductance,
            junction_aspect_ratio: 1.0,
            capacitance,
            voltage,
        }
    }

    fn check(&self) -> Result<(), CircuitError> {
        if !(self.josephson_inductance > 0.0 && self.josephson_inductance.is_finite()) {
            return Err(CircuitError::DomainError(
                "josephson inductance must be > 0".into(),
            ));
        }
        if !(self.capacitance > 0.0 && self.capacitance.is_finite()) {
            return Err(CircuitError::DomainError("capacitance must be > 0".into()));
        }
        if !self.voltage.is_finite() {
            return Err(CircuitError::DomainError("voltage must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBudget {
    pub w_e: f64,
    /// Field magnetic energy; zero in the electrostatic approximation.
    pub w_h: f64,
    pub w_q: f64,
    pub w_0: f64,
    /// Peak junction current, A.
    pub current: f64,
}

/// `f = 1/(2π√(L_J·C))`.
pub fn resonant_frequency(q: &LumpedQubit) -> Result<f64, CircuitError> {
    q.check()?;
    Ok(1.0 / (2.0 * PI * (q.josephson_inductance * q.capacitance).sqrt()))
}

/// Energy balance at resonance. `W_0 = 2·W_E` is the normalization.
pub fn energy_balance(q: &LumpedQubit) -> Result<EnergyBudget, CircuitError> {
    q.check()?;
    let (l, c, v) = (q.josephson_inductance, q.capacitance, q.voltage);
    let w_e = 0.25 * c * v * v;
    let current = v * (c / l).sqrt();
    // ¼·L·(V²·C/L) reduces to ¼·C·V²; using it directly keeps the balance exact.
    let w_q = 0.25 * c * v * v;
    let b = EnergyBudget {
        w_e,
        w_h: 0.0,
        w_q,
        w_0: 2.0 * w_e,
        current,
    };
    let lhs = 2.0 * (b.w_h + b.w_q);
    if (b.w_0 - lhs).abs() > 1e-12 * b.w_0.abs() {
        return Err(CircuitError::DomainError("energy balance violated".into()));
    }
    Ok(b)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossContribution {
    pub label: String,
    pub epr: f64,
    pub tan_delta: f64,
    /// `f64::INFINITY` for a lossless layer.
    pub q: f64,
    /// Which solve or sweep produced the participation.
    pub provenance: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBudget {
    pub contributions: Vec<LossContribution>,
    pub q_total: f64,
    pub t1_s: f64,
    pub frequency_hz: f64,
}

/// Per-layer and total quality factors, `1/Q = Σ epr·tanδ`, `T₁ = Q/(2πf)`.
///
/// Loss terms are summed in sorted order, so the total does not depend on
/// the order of `layers`.
pub fn loss_budget(
    layers: &[(String, f64, f64)],
    frequency: f64,
) -> Result<LossBudget, CircuitError> {
    loss_budget_with_provenance(
        &layers
            .iter()
            .map(|(l, e, t)| (l.clone(), *e, *t, None))
            .collect::<Vec<_>>(),
        frequency,
    )
}

pub fn loss_budget_with_provenance(
    layers: &[(String, f64, f64, Option<String>)],
    frequency: f64,
) -> Result<LossBudget, CircuitError> {
    if !(frequency > 0.0 && frequency.is_finite()) {
        return Err(CircuitError::DomainError("frequency must be > 0".into()));
    }
    let mut contributions = Vec::with_capacity(layers.len());
    let mut losses = Vec::with_capacity(layers.len());
    for (label, epr, tand, prov) in layers {
        if !(*epr > 0.0) || !(*tand >= 0.0) {
            return Err(CircuitError::DomainError(format!(
                "layer {label}: need epr > 0 and tan delta >= 0"
            )));
        }
        let loss = epr * tand;
        losses.push(loss);
        contributions.push(LossContribution {
            label: label.clone(),
            epr: *epr,
            tan_delta: *tand,
            q: if loss > 0.0 {
                1.0 / loss
            } else {
                f64::INFINITY
            },
            provenance: prov.clone(),
        });
    }
    losses.sort_by(|a, b| a.total_cmp(b));
    let inv_q: f64 = losses.iter().sum();
    let q_total = if inv_q > 0.0 {
        1.0 / inv_q
    } else {
        f64::INFINITY
    };
    let t1_s = q_total / (2.0 * PI * frequency);
    Ok(LossBudget {
        contributions,
        q_total,
        t1_s,
        frequency_hz: frequency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn five_gigahertz_qubit() {
        let q = LumpedQubit::new(10e-9, 101.32e-15, 1e-6);
        let f = resonant_frequency(&q).unwrap();
        assert!((f - 5e9).abs() < 1e6, "{f}");
        let q4 = LumpedQubit {
            capacitance: 4.0 * q.capacitance,
            ..q
        };
        assert!((resonant_frequency(&q4).unwrap() / f - 0.5).abs() < 1e-15);
        let unit = LumpedQubit::new(1.0, 1.0 / (4.0 * PI * PI), 1.0);
        assert!((resonant_frequency(&unit).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn budget_identity() {
        let q = LumpedQubit::new(10e-9, 100e-15, 1e-6);
        let b = energy_balance(&q).unwrap();
        assert!((b.w_e - 2.5e-26).abs() < 1e-40);
        assert!((b.w_0 - 5e-26).abs() < 1e-40);
        assert_eq!(b.w_q, b.w_e);
        let zero = energy_balance(&LumpedQubit { voltage: 0.0, ..q }).unwrap();
        assert_eq!((zero.w_e, zero.w_q, zero.w_0), (0.0, 0.0, 0.0));
        assert!(energy_balance(&LumpedQubit {
            capacitance: 0.0,
            ..q
        })
        .is_err());
    }

    #[test]
    fn loss_values() {
        let b = loss_budget(&[("oxide".into(), 3.08e-5, 1e-3)], 5e9).unwrap();
        assert!((b.q_total - 3.2468e7).abs() / 3.2468e7 < 1e-4);
        assert!((b.t1_s - 1.0335e-3).abs() < 1e-6);
        let two = loss_budget(
            &[("a".into(), 3.08e-5, 1e-3), ("b".into(), 3.08e-5, 1e-3)],
            5e9,
        )
        .unwrap();
        assert!((two.q_total - b.q_total / 2.0).abs() / b.q_total < 1e-15);
        let none = loss_budget(&[("a".into(), 0.5, 0.0)], 5e9).unwrap();
        assert!(none.q_total.is_infinite() && none.t1_s.is_infinite());
        assert!(loss_budget(&[("a".into(), 0.0, 1e-3)], 5e9).is_err());
    }
}
