//! Random power-law disturbance of the value channel.
//!
//! A disturbed copy `V' = V^gamma` simulates the same scene under another
//! exposure. Dark inputs (mean below 0.5) get `gamma` in `(0, 1]`, which
//! brightens; bright inputs get `gamma` in `[1, 5]`, which darkens.

use rand::Rng;

use crate::color::Plane;

/// Smallest exponent drawn in the dark regime; `gamma = 0` would flatten every
/// nonzero pixel to 1.
pub const MIN_DARK_GAMMA: f64 = 1e-3;
pub const MAX_BRIGHT_GAMMA: f64 = 5.0;
pub const REGIME_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Dark,
    Bright,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaSample {
    pub gamma: f64,
    pub regime: Regime,
}

/// Draws an exponent uniformly from the range selected by `mean_v`.
pub fn sample_gamma<R: Rng + ?Sized>(mean_v: f64, rng: &mut R) -> GammaSample {
    if mean_v < REGIME_THRESHOLD {
        GammaSample {
            gamma: rng.random_range(MIN_DARK_GAMMA..=1.0),
            regime: Regime::Dark,
        }
    } else {
        GammaSample {
            gamma: rng.random_range(1.0..=MAX_BRIGHT_GAMMA),
            regime: Regime::Bright,
        }
    }
}

/// Elementwise `v^gamma`.
pub fn disturb(v: &Plane, gamma: f64) -> Plane {
    assert!(gamma > 0.0, "disturbance exponent must be positive");
    if gamma == 1.0 {
        return v.clone();
    }
    v.map(|x| x.clamp(0.0, 1.0).powf(gamma))
}
