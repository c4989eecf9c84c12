//! Synthetic domain-pattern field maps standing in for a real sample.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::stream_rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FieldMapConfig {
    /// Typical domain size (m).
    pub length_scale: f64,
    /// Peak-to-peak field of the pattern (T).
    pub peak_to_peak: f64,
    pub seed: u64,
    /// Number of plane-wave modes in the underlying band-limited noise.
    pub modes: usize,
    /// Width of the soft threshold, in units of the noise standard deviation.
    /// Sets the domain-wall thickness relative to the domain size.
    pub wall_width: f64,
}

impl Default for FieldMapConfig {
    fn default() -> Self {
        FieldMapConfig {
            length_scale: 1.0e-6,
            peak_to_peak: 500.0e-6,
            seed: 1,
            modes: 32,
            wall_width: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Mode {
    kx: f64,
    ky: f64,
    phase: f64,
}

/// Band-limited Gaussian noise pushed through a soft sign function, giving
/// smooth ± domains with walls on the scale of `length_scale`.
#[derive(Debug, Clone)]
pub struct FieldMap {
    config: FieldMapConfig,
    modes: Vec<Mode>,
    norm: f64,
}

impl FieldMap {
    pub fn new(config: FieldMapConfig) -> Self {
        let mut rng = stream_rng(config.seed, 0x6d61_70);
        let modes = (0..config.modes)
            .map(|_| {
                let k = 2.0 * PI / config.length_scale * rng.random_range(0.5..1.5);
                let dir = rng.random_range(0.0..2.0 * PI);
                Mode {
                    kx: k * dir.cos(),
                    ky: k * dir.sin(),
                    phase: rng.random_range(0.0..2.0 * PI),
                }
            })
            .collect::<Vec<_>>();
        let norm = if modes.is_empty() {
            0.0
        } else {
            (2.0 / modes.len() as f64).sqrt()
        };
        FieldMap {
            config,
            modes,
            norm,
        }
    }

    pub fn config(&self) -> &FieldMapConfig {
        &self.config
    }

    /// Field (T) at position (x, y) in metres.
    pub fn sample_field_map(&self, x: f64, y: f64) -> f64 {
        if self.config.peak_to_peak == 0.0 || self.modes.is_empty() {
            return 0.0;
        }
        let g: f64 = self
            .modes
            .iter()
            .map(|m| (m.kx * x + m.ky * y + m.phase).cos())
            .sum::<f64>()
            * self.norm;
        0.5 * self.config.peak_to_peak * (g / self.config.wall_width).tanh()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_per_seed() {
        let a = FieldMap::new(FieldMapConfig::default());
        let b = FieldMap::new(FieldMapConfig::default());
        let c = FieldMap::new(FieldMapConfig {
            seed: 2,
            ..Default::default()
        });
        let (x, y) = (3.1e-6, -0.7e-6);
        assert_eq!(a.sample_field_map(x, y), b.sample_field_map(x, y));
        assert_ne!(a.sample_field_map(x, y), c.sample_field_map(x, y));
    }

    #[test]
    fn zero_amplitude_is_flat() {
        let m = FieldMap::new(FieldMapConfig {
            peak_to_peak: 0.0,
            ..Default::default()
        });
        assert!((0..100).all(|k| m.sample_field_map(k as f64 * 1e-7, 0.0) == 0.0));
    }

    #[test]
    fn histogram_spans_peak_to_peak() {
        let cfg = FieldMapConfig::default();
        let m = FieldMap::new(cfg);
        let pitch = 100e-9;
        let values: Vec<f64> = (0..100)
            .flat_map(|j| (0..100).map(move |i| (i, j)))
            .map(|(i, j)| m.sample_field_map(i as f64 * pitch, j as f64 * pitch))
            .collect();
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = hi - lo;
        assert!(span > 0.95 * cfg.peak_to_peak && span <= cfg.peak_to_peak, "{span}");
        // both polarities are well populated
        let pos = values.iter().filter(|&&v| v > 0.4 * cfg.peak_to_peak).count();
        let neg = values.iter().filter(|&&v| v < -0.4 * cfg.peak_to_peak).count();
        assert!(pos > 1000 && neg > 1000, "{pos} {neg}");
    }

    #[test]
    fn smooth_on_sub_domain_scale() {
        let m = FieldMap::new(FieldMapConfig::default());
        let step = 1e-9;
        let max_jump = (0..5000)
            .map(|k| {
                let x = k as f64 * step;
                (m.sample_field_map(x + step, 0.3e-6) - m.sample_field_map(x, 0.3e-6)).abs()
            })
            .fold(0.0, f64::max);
        assert!(max_jump < 0.05 * 500e-6, "{max_jump}");
    }
}
