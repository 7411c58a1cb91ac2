//! Interim alpha spending.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{std_normal_sf, upper_z};

/// Error spending function used for the interim look.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpendingFunction {
    /// Lan–DeMets O'Brien–Fleming type: `2 − 2Φ(z_{α/2} / √t)`.
    #[default]
    Ldof,
}

impl SpendingFunction {
    pub fn spend(self, t: f64, alpha: f64) -> Result<f64> {
        match self {
            SpendingFunction::Ldof => spend_alpha1(t, alpha),
        }
    }
}

/// Stage-one level of the O'Brien–Fleming type spending function.
pub fn spend_alpha1(t: f64, alpha: f64) -> Result<f64> {
    if !(t > 0.0 && t <= 1.0) {
        return Err(Error::OutOfRange {
            name: "information fraction",
            range: "(0, 1]",
            value: t,
        });
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::OutOfRange {
            name: "alpha",
            range: "(0, 1)",
            value: alpha,
        });
    }
    Ok(2.0 * std_normal_sf(upper_z(alpha / 2.0) / t.sqrt()))
}
