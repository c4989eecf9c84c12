//! Synthetic photon-count traces of a periodically swept resonance.
//!
//! The drive is a saw-tooth: it starts at `f_c − Δf_win/2` at every multiple
//! of the period `T = 1/f_mod`, ramps linearly to `f_c + Δf_win/2`, and flies
//! back instantaneously. Each bin's expected count is the line rate at the
//! drive frequency of the bin midpoint times the dwell.

mod fieldmap;
mod waveform;

use std::f64::consts::PI;

use bitflags::bitflags;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

pub use fieldmap::{FieldMap, FieldMapConfig};
pub use waveform::{coil_waveform, CoilWaveform, FieldRamp, FieldWaveform, StaticField};

use crate::error::{Error, Result};
use crate::lineshape::{GyromagneticRatio, LineShape, Lorentzian, ResonanceParams};
use crate::rng::stream_rng;

/// Below this sweep period the spin no longer follows the drive adiabatically.
pub const MIN_SWEEP_PERIOD: f64 = 100e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    /// Window centre f_c (Hz).
    pub f_c: f64,
    /// Window span Δf_win (Hz).
    pub delta_f_win: f64,
    /// Saw-tooth repetition rate (Hz).
    pub f_mod: f64,
}

impl SweepConfig {
    pub fn new(f_c: f64, delta_f_win: f64, f_mod: f64) -> Result<Self> {
        let s = SweepConfig {
            f_c,
            delta_f_win,
            f_mod,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_f_win > 0.0) || !self.delta_f_win.is_finite() {
            return Err(Error::InvalidParams(format!(
                "delta_f_win must be > 0, got {}",
                self.delta_f_win
            )));
        }
        if !(self.f_mod > 0.0) || !self.f_mod.is_finite() {
            return Err(Error::InvalidParams(format!("f_mod must be > 0, got {}", self.f_mod)));
        }
        if !self.f_c.is_finite() {
            return Err(Error::InvalidParams("f_c must be finite".into()));
        }
        Ok(())
    }

    pub fn period(&self) -> f64 {
        1.0 / self.f_mod
    }

    /// Sweep rate v = f_mod·Δf_win (Hz/s).
    pub fn sweep_rate(&self) -> f64 {
        self.f_mod * self.delta_f_win
    }

    /// Relative window size α = Δf_win/(2Γ).
    pub fn alpha(&self, p: &ResonanceParams) -> f64 {
        self.delta_f_win / (2.0 * p.gamma)
    }

    pub fn recentered(&self, f_c: f64) -> Self {
        SweepConfig { f_c, ..*self }
    }

    pub fn lower_edge(&self) -> f64 {
        self.f_c - 0.5 * self.delta_f_win
    }

    pub fn upper_edge(&self) -> f64 {
        self.f_c + 0.5 * self.delta_f_win
    }

    /// Warning text when the sweep is too fast for the spin response time.
    pub fn response_time_warning(&self) -> Option<String> {
        (self.period() < MIN_SWEEP_PERIOD).then(|| {
            format!(
                "sweep period {:.3e} s is below {:.0e} s; the spin response time is no longer negligible",
                self.period(),
                MIN_SWEEP_PERIOD
            )
        })
    }
}

/// Drive frequency at time `t`: f_c − Δf_win/2 + v·(t mod T).
pub fn instantaneous_drive_frequency(t: f64, sweep: &SweepConfig) -> f64 {
    let mut frac = (t * sweep.f_mod).rem_euclid(1.0);
    if frac >= 1.0 {
        frac = 0.0;
    }
    sweep.lower_edge() + sweep.delta_f_win * frac
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    #[default]
    Shot,
    None,
}

/// How the line is folded into the sweep window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LineModel {
    /// The physical signal: the line is seen only through the window and is
    /// cut off at its edges.
    #[default]
    Truncated,
    /// A comb of replicas spaced Δf_win apart. Its Fourier coefficients are
    /// exactly the closed-form harmonics in [`crate::theory`]; useful as a
    /// truncation-free reference.
    Periodized,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceRequest {
    /// Requested duration (s); rounded down to whole sweep periods.
    pub duration: f64,
    /// Bin width (s).
    pub dwell: f64,
    /// Time stamp of the first bin's leading edge (s).
    pub t0: f64,
    pub noise: NoiseMode,
    pub seed: u64,
    /// Independent random stream index, e.g. a pixel or trial number.
    pub stream: u64,
    pub line: LineModel,
}

impl Default for TraceRequest {
    fn default() -> Self {
        TraceRequest {
            duration: 10e-3,
            dwell: 20e-6,
            t0: 0.0,
            noise: NoiseMode::Shot,
            seed: 0,
            stream: 0,
            line: LineModel::Truncated,
        }
    }
}

impl TraceRequest {
    pub fn noiseless(duration: f64) -> Self {
        TraceRequest {
            duration,
            noise: NoiseMode::None,
            ..Default::default()
        }
    }

    pub fn shot(duration: f64, seed: u64, stream: u64) -> Self {
        TraceRequest {
            duration,
            seed,
            stream,
            ..Default::default()
        }
    }
}

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
    pub struct TraceFlags: u8 {
        /// The requested duration was rounded down to whole sweep periods.
        const DURATION_ROUNDED = 1;
        /// The sweep period is shorter than [`MIN_SWEEP_PERIOD`].
        const FAST_SWEEP = 1 << 1;
    }
}

/// Time-binned photon counts.
#[derive(Debug, Clone, PartialEq)]
pub struct PhotonTrace {
    pub dwell: f64,
    pub t0: f64,
    /// Counts per bin. Integers under shot noise, expectations when noiseless.
    pub counts: Vec<f64>,
    pub flags: TraceFlags,
}

impl PhotonTrace {
    pub fn new(dwell: f64, t0: f64, counts: Vec<f64>) -> Self {
        PhotonTrace {
            dwell,
            t0,
            counts,
            flags: TraceFlags::empty(),
        }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.counts.len() as f64 * self.dwell
    }

    pub fn bin_start(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dwell
    }

    pub fn bin_mid(&self, k: usize) -> f64 {
        self.t0 + (k as f64 + 0.5) * self.dwell
    }

    pub fn mean_rate(&self) -> f64 {
        if self.counts.is_empty() {
            return 0.0;
        }
        self.counts.iter().sum::<f64>() / self.duration()
    }

    /// Splits into consecutive segments of `bins` bins; a trailing partial
    /// segment is dropped.
    pub fn segments(&self, bins: usize) -> impl Iterator<Item = PhotonTrace> + '_ {
        self.counts
            .chunks_exact(bins.max(1))
            .enumerate()
            .map(move |(i, c)| PhotonTrace::new(self.dwell, self.bin_start(i * bins), c.to_vec()))
    }
}

/// Tuning-fork gradiometry: the probe oscillates with amplitude `x0` at
/// `f_tf` in a gradient `db_dx`, adding a field B₁·cos(2πf_TF t).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradiometryConfig {
    pub f_tf: f64,
    /// Oscillation amplitude (m).
    pub x0: f64,
    /// Field gradient along the oscillation axis (T/m).
    pub db_dx: f64,
}

impl GradiometryConfig {
    /// Builds the configuration that produces modulation depth `delta_phi`.
    pub fn from_delta_phi(f_tf: f64, x0: f64, delta_phi: f64, sweep: &SweepConfig) -> Result<Self> {
        if x0 == 0.0 {
            return Err(Error::ZeroAmplitude);
        }
        let b1 = delta_phi * sweep.delta_f_win / GyromagneticRatio::ELECTRON.angular();
        Ok(GradiometryConfig {
            f_tf,
            x0,
            db_dx: b1 / x0,
        })
    }

    /// B₁ = x₀·∂B/∂x (T).
    pub fn b1(&self) -> f64 {
        self.x0 * self.db_dx
    }

    /// Phase-modulation depth Δφ = γ_e·B₁/Δf_win.
    pub fn delta_phi(&self, sweep: &SweepConfig) -> f64 {
        GyromagneticRatio::ELECTRON.angular() * self.b1() / sweep.delta_f_win
    }
}

/// Synthesizes a trace of the Lorentzian line under `field`.
pub fn synthesize_trace(
    p: &ResonanceParams,
    sweep: &SweepConfig,
    field: &dyn FieldWaveform,
    req: &TraceRequest,
) -> Result<PhotonTrace> {
    synthesize_with(&Lorentzian, p, sweep, field, req, |t| t)
}

/// Same as [`synthesize_trace`] with an arbitrary line shape.
pub fn synthesize_trace_with_shape(
    shape: &dyn LineShape,
    p: &ResonanceParams,
    sweep: &SweepConfig,
    field: &dyn FieldWaveform,
    req: &TraceRequest,
) -> Result<PhotonTrace> {
    synthesize_with(shape, p, sweep, field, req, |t| t)
}

/// Synthesizes a trace whose sweep phase is modulated by the oscillating
/// probe: the periodic signal is evaluated at t + [Δφ/(2πf_mod)]·cos(2πf_TF t).
///
/// The modulation is applied exactly, not in the small-angle expansion.
pub fn apply_gradient_modulation(
    p: &ResonanceParams,
    sweep: &SweepConfig,
    grad: &GradiometryConfig,
    field: &dyn FieldWaveform,
    req: &TraceRequest,
) -> Result<PhotonTrace> {
    sweep.validate()?;
    if !(grad.f_tf > sweep.f_mod) {
        return Err(Error::SidebandAlias {
            f_tf: grad.f_tf,
            f_mod: sweep.f_mod,
        });
    }
    if grad.f_tf < 10.0 * sweep.f_mod {
        return Err(Error::InvalidParams(format!(
            "oscillator frequency {} Hz must be at least 10·f_mod",
            grad.f_tf
        )));
    }
    let tau = grad.delta_phi(sweep) / (2.0 * PI * sweep.f_mod);
    let w = 2.0 * PI * grad.f_tf;
    synthesize_with(&Lorentzian, p, sweep, field, req, move |t| t + tau * (w * t).cos())
}

fn synthesize_with(
    shape: &dyn LineShape,
    p: &ResonanceParams,
    sweep: &SweepConfig,
    field: &dyn FieldWaveform,
    req: &TraceRequest,
    warp: impl Fn(f64) -> f64,
) -> Result<PhotonTrace> {
    p.validate()?;
    sweep.validate()?;
    if req.duration < 0.0 || req.duration.is_nan() {
        return Err(Error::NegativeDuration(req.duration));
    }
    if !(req.dwell > 0.0) {
        return Err(Error::InvalidParams(format!("dwell must be > 0, got {}", req.dwell)));
    }
    let period = sweep.period();
    if req.dwell > period / 10.0 * (1.0 + 1e-12) {
        return Err(Error::UndersampledSweep {
            dwell: req.dwell,
            period,
        });
    }

    let periods = (req.duration / period + 1e-9).floor();
    let span = periods * period;
    let bins = (span / req.dwell).round() as usize;

    let mut flags = TraceFlags::empty();
    if req.duration - span > 1e-9 * period {
        flags |= TraceFlags::DURATION_ROUNDED;
    }
    if period < MIN_SWEEP_PERIOD {
        flags |= TraceFlags::FAST_SWEEP;
    }

    let gamma = GyromagneticRatio::ELECTRON;
    let mut rng = stream_rng(req.seed, req.stream);
    let mut counts = Vec::with_capacity(bins);
    for k in 0..bins {
        let t = req.t0 + (k as f64 + 0.5) * req.dwell;
        let f = instantaneous_drive_frequency(warp(t), sweep);
        let line = ResonanceParams {
            f0: p.f0 + gamma.field_to_shift(field.field(t)),
            ..*p
        };
        let rate = match req.line {
            LineModel::Truncated => shape.rate(f, &line),
            LineModel::Periodized => shape.periodized_rate(f, &line, sweep.delta_f_win),
        };
        let mean = rate * req.dwell;
        let c = match req.noise {
            NoiseMode::None => mean,
            NoiseMode::Shot if mean > 0.0 => Poisson::new(mean)
                .map_err(|e| Error::InvalidParams(format!("Poisson mean {mean}: {e}")))?
                .sample(&mut rng),
            NoiseMode::Shot => 0.0,
        };
        counts.push(c);
    }

    Ok(PhotonTrace {
        dwell: req.dwell,
        t0: req.t0,
        counts,
        flags,
    })
}
