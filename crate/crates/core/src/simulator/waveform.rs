use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// A magnetic field along the NV axis as a function of time (T).
pub trait FieldWaveform: Sync {
    fn field(&self, t: f64) -> f64;
}

impl<F> FieldWaveform for F
where
    F: Fn(f64) -> f64 + Sync,
{
    fn field(&self, t: f64) -> f64 {
        self(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StaticField(pub f64);

impl FieldWaveform for StaticField {
    fn field(&self, _t: f64) -> f64 {
        self.0
    }
}

/// B(t) = offset + slope·t
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FieldRamp {
    pub offset: f64,
    /// T/s
    pub slope: f64,
}

impl FieldWaveform for FieldRamp {
    fn field(&self, t: f64) -> f64 {
        self.offset + self.slope * t
    }
}

/// Two superimposed sine tones of equal amplitude, switched on at `start`.
///
/// This is the coil drive used for the dynamic-range experiments:
/// B(t) = A·[sin(2πf₁(t−start)) + sin(2πf₂(t−start))] for t ≥ start, else 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoilWaveform {
    /// Amplitude A of each tone (T). The composite peak is at most 2A.
    pub amplitude: f64,
    pub tones: [f64; 2],
    pub start: f64,
}

impl Default for CoilWaveform {
    fn default() -> Self {
        CoilWaveform {
            amplitude: 0.5e-3,
            tones: [0.8, 4.0],
            start: 0.0,
        }
    }
}

impl CoilWaveform {
    pub fn with_amplitude(amplitude: f64) -> Self {
        CoilWaveform {
            amplitude,
            ..Default::default()
        }
    }
}

impl FieldWaveform for CoilWaveform {
    fn field(&self, t: f64) -> f64 {
        coil_waveform(t, self)
    }
}

pub fn coil_waveform(t: f64, w: &CoilWaveform) -> f64 {
    if t < w.start {
        return 0.0;
    }
    let s = t - w.start;
    w.amplitude * w.tones.iter().map(|f| (2.0 * PI * f * s).sin()).sum::<f64>()
}
