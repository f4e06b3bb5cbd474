use serde::{Deserialize, Serialize};

use crate::scalar::Real;

/// Gaussian bump added to the base value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anomaly<T> {
    pub x: T,
    pub y: T,
    /// Meters; must be positive.
    pub radius: T,
    pub amplitude: T,
}

/// Synthetic scalar field over the horizontal plane (e.g. water temperature).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarField<T> {
    pub base: T,
    #[serde(default)]
    pub anomalies: Vec<Anomaly<T>>,
}

impl<T: Real> ScalarField<T> {
    pub fn uniform(base: T) -> Self {
        Self { base, anomalies: Vec::new() }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !self.base.is_finite() {
            return Err("field base must be finite".into());
        }
        for a in &self.anomalies {
            if !(a.radius > T::zero()) {
                return Err("anomaly radius must be positive".into());
            }
            if !(a.x.is_finite() && a.y.is_finite() && a.amplitude.is_finite()) {
                return Err("anomaly parameters must be finite".into());
            }
        }
        Ok(())
    }

    pub fn sample(&self, x: T, y: T) -> T {
        sample_field(self, x, y)
    }
}

/// `base + Σ amplitude·exp(−d²/radius²)`.
pub fn sample_field<T: Real>(field: &ScalarField<T>, x: T, y: T) -> T {
    field.anomalies.iter().fold(field.base, |acc, a| {
        let dx = x - a.x;
        let dy = y - a.y;
        let d2 = dx * dx + dy * dy;
        acc + a.amplitude * (-d2 / (a.radius * a.radius)).exp()
    })
}
