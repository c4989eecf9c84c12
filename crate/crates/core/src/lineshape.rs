//! Resonance line model and the field/frequency conversion.
//!
//! All frequencies are baseband offsets in Hz relative to an arbitrary
//! carrier; the absolute microwave frequency never enters the math.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gyromagnetic ratio of the electron spin, expressed as frequency per field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GyromagneticRatio {
    pub hz_per_tesla: f64,
}

impl GyromagneticRatio {
    /// γ_e/2π = 28 GHz/T.
    pub const ELECTRON: GyromagneticRatio = GyromagneticRatio {
        hz_per_tesla: 28.0e9,
    };

    /// Angular value γ_e in rad/(s·T).
    pub fn angular(&self) -> f64 {
        2.0 * PI * self.hz_per_tesla
    }

    pub fn field_to_shift(&self, field: f64) -> f64 {
        field * self.hz_per_tesla
    }

    pub fn shift_to_field(&self, shift: f64) -> f64 {
        shift / self.hz_per_tesla
    }
}

/// Shorthand for `GyromagneticRatio::ELECTRON.hz_per_tesla`.
pub const GAMMA_E_HZ_PER_T: f64 = GyromagneticRatio::ELECTRON.hz_per_tesla;

/// Resonance frequency for a field `field` (T) on top of `zero_field_freq`.
pub fn field_to_frequency(field: f64, zero_field_freq: f64) -> f64 {
    zero_field_freq + GyromagneticRatio::ELECTRON.field_to_shift(field)
}

/// Inverse of [`field_to_frequency`].
pub fn frequency_to_field(freq: f64, zero_field_freq: f64) -> f64 {
    GyromagneticRatio::ELECTRON.shift_to_field(freq - zero_field_freq)
}

/// Parameters of a single resonance line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceParams {
    /// Resonance frequency at zero applied field (Hz, baseband).
    pub f0: f64,
    /// Half-linewidth Γ (Hz).
    pub gamma: f64,
    /// Fractional contrast ε of the dip.
    pub epsilon: f64,
    /// Off-resonant photon rate R₀ (counts/s).
    pub r0: f64,
}

impl ResonanceParams {
    pub fn new(f0: f64, gamma: f64, epsilon: f64, r0: f64) -> Result<Self> {
        let p = ResonanceParams {
            f0,
            gamma,
            epsilon,
            r0,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0) || !self.gamma.is_finite() {
            return Err(Error::InvalidParams(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.r0 > 0.0) || !self.r0.is_finite() {
            return Err(Error::InvalidParams(format!("r0 must be > 0, got {}", self.r0)));
        }
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::InvalidParams(format!(
                "epsilon must lie in [0, 1), got {}",
                self.epsilon
            )));
        }
        if !self.f0.is_finite() {
            return Err(Error::InvalidParams("f0 must be finite".into()));
        }
        Ok(())
    }

    /// Same line shifted by a magnetic field `field` (T).
    pub fn shifted_by_field(&self, field: f64) -> Self {
        ResonanceParams {
            f0: self.f0 + GyromagneticRatio::ELECTRON.field_to_shift(field),
            ..*self
        }
    }
}

/// A line-shape model for the photoluminescence rate versus drive frequency.
pub trait LineShape: Sync {
    fn rate(&self, f: f64, p: &ResonanceParams) -> f64;

    /// Rate of a comb of replicas of the line spaced `spacing` Hz apart.
    ///
    /// This is the signal whose harmonics ignore the truncation at the sweep
    /// edges. The default sums replicas explicitly.
    fn periodized_rate(&self, f: f64, p: &ResonanceParams, spacing: f64) -> f64 {
        const REPLICAS: i32 = 256;
        let dip: f64 = (-REPLICAS..=REPLICAS)
            .map(|m| p.r0 - self.rate(f - m as f64 * spacing, p))
            .sum();
        p.r0 - dip
    }
}

/// R(f) = R₀·[1 − ε·(1 + (f−f₀)²/Γ²)⁻¹]
#[derive(Debug, Clone, Copy, Default)]
pub struct Lorentzian;

impl LineShape for Lorentzian {
    #[inline]
    fn rate(&self, f: f64, p: &ResonanceParams) -> f64 {
        lorentzian_rate(f, p)
    }

    fn periodized_rate(&self, f: f64, p: &ResonanceParams, spacing: f64) -> f64 {
        // Σ_m Γ²/(Γ² + (x − mD)²) = (πΓ/D)·sinh(2πΓ/D) / (cosh(2πΓ/D) − cos(2πx/D))
        let x = f - p.f0;
        let w = 2.0 * PI * p.gamma / spacing;
        let comb = (PI * p.gamma / spacing) * w.sinh() / (w.cosh() - (2.0 * PI * x / spacing).cos());
        p.r0 * (1.0 - p.epsilon * comb)
    }
}

#[inline]
pub fn lorentzian_rate(f: f64, p: &ResonanceParams) -> f64 {
    let u = (f - p.f0) / p.gamma;
    p.r0 * (1.0 - p.epsilon / (1.0 + u * u))
}
