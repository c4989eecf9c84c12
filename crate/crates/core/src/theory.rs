//! Closed-form reference values: analytic harmonics, sensitivities, the
//! SNR-limited maximum sampling rate and the random-phase floor.
//!
//! The analytic harmonics treat the swept line as a comb of replicas spaced
//! one window apart, which is accurate for α ≳ 1. Sensitivities η are in
//! Hz·√s; divide by γ_e/2π for T·√s.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::demod::HarmonicSet;
use crate::lineshape::{GyromagneticRatio, ResonanceParams};
use crate::simulator::{SweepConfig, MIN_SWEEP_PERIOD};

/// Below this α the analytic harmonics are not a reliable approximation.
pub const MIN_VALID_ALPHA: f64 = 1.0;

/// Constant of the single-point slope-detection sensitivity.
pub const AMPLITUDE_POINT_FACTOR: f64 = 0.77;

/// Expected harmonics a₀…a_{n_max} of a resonance in the given window.
///
/// a₀ = R₀ − πR₀εΓ/Δf_win and a_n = (πR₀εΓ/Δf_win)·e^{−2πnΓ/Δf_win}·e^{inφ}
/// with φ = 2π(f₀ − f_c)/Δf_win, in the sign convention of
/// [`crate::demod::demodulate`].
pub fn analytic_harmonics(p: &ResonanceParams, sweep: &SweepConfig, n_max: usize) -> HarmonicSet {
    let amp = PI * p.r0 * p.epsilon * p.gamma / sweep.delta_f_win;
    let q = (-2.0 * PI * p.gamma / sweep.delta_f_win).exp();
    let phi = 2.0 * PI * (p.f0 - sweep.f_c) / sweep.delta_f_win;
    let a = (0..=n_max)
        .map(|n| match n {
            0 => Complex64::new(p.r0 - amp, 0.0),
            n => Complex64::from_polar(amp * q.powi(n as i32), n as f64 * phi),
        })
        .collect();
    HarmonicSet {
        a,
        f_mod: sweep.f_mod,
        t_int: f64::INFINITY,
        dwell: 0.0,
    }
}

pub fn approximation_valid(alpha: f64) -> bool {
    alpha >= MIN_VALID_ALPHA
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SensitivityMethod {
    /// Phase of the first harmonic.
    DemodPhase,
    /// Single-point amplitude detection on the steepest slope.
    AmplitudePoint,
    /// Least-squares fit of f₀ alone over the full window.
    LstsqFull,
    /// Large-window limit of [`SensitivityMethod::LstsqFull`].
    LstsqLargeAlpha,
}

impl SensitivityMethod {
    pub const ALL: [SensitivityMethod; 4] = [
        SensitivityMethod::DemodPhase,
        SensitivityMethod::AmplitudePoint,
        SensitivityMethod::LstsqFull,
        SensitivityMethod::LstsqLargeAlpha,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SensitivityMethod::DemodPhase => "demod_phase",
            SensitivityMethod::AmplitudePoint => "amplitude_point",
            SensitivityMethod::LstsqFull => "lstsq_full",
            SensitivityMethod::LstsqLargeAlpha => "lstsq_largealpha",
        }
    }

    /// The α-dependent factor multiplying 2Γ/(ε√R₀).
    pub fn factor(&self, alpha: f64) -> f64 {
        match self {
            SensitivityMethod::DemodPhase => demod_phase_factor(alpha),
            SensitivityMethod::AmplitudePoint => AMPLITUDE_POINT_FACTOR,
            SensitivityMethod::LstsqFull => lstsq_full_factor(alpha),
            SensitivityMethod::LstsqLargeAlpha => (2.0 * alpha / PI).sqrt(),
        }
    }
}

/// α²e^{π/α}/(√2π²); minimal at α = π/2.
pub fn demod_phase_factor(alpha: f64) -> f64 {
    alpha * alpha * (PI / alpha).exp() / (2f64.sqrt() * PI * PI)
}

/// √(α / [(α⁵ + 8α³/3 − α)/(1+α²)³ + arctan α]).
pub fn lstsq_full_factor(alpha: f64) -> f64 {
    let a2 = alpha * alpha;
    let denom = (alpha.powi(5) + 8.0 / 3.0 * alpha.powi(3) - alpha) / (1.0 + a2).powi(3) + alpha.atan();
    (alpha / denom).sqrt()
}

/// The window size that minimizes the phase-method sensitivity.
pub fn optimal_phase_alpha() -> f64 {
    PI / 2.0
}

/// Shared prefactor 2Γ/(ε√R₀) (Hz·√s).
pub fn sensitivity_prefactor(p: &ResonanceParams) -> f64 {
    2.0 * p.gamma / (p.epsilon * p.r0.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensitivity {
    /// Hz·√s
    pub hz: f64,
    /// T·√s
    pub tesla: f64,
}

pub fn sensitivity(method: SensitivityMethod, p: &ResonanceParams, alpha: f64) -> Sensitivity {
    let hz = sensitivity_prefactor(p) * method.factor(alpha);
    Sensitivity {
        hz,
        tesla: GyromagneticRatio::ELECTRON.shift_to_field(hz),
    }
}

/// Expected phase-method frequency uncertainty for one integration window.
pub fn phase_uncertainty(p: &ResonanceParams, sweep: &SweepConfig, t_int: f64) -> f64 {
    sensitivity(SensitivityMethod::DemodPhase, p, sweep.alpha(p)).hz / t_int.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateLimit {
    /// Shot noise: the phase uncertainty reaches the random-phase floor.
    ShotNoise,
    /// The spin response time demands a sweep period of at least 100 µs.
    ResponseTime,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaxRate {
    /// t_int⁻¹ at which the phase uncertainty equals the random-phase floor (1/s).
    pub shot_noise: f64,
    /// Cap from the spin response time (1/s).
    pub response_time: f64,
    pub binding: RateLimit,
}

impl MaxRate {
    pub fn rate(&self) -> f64 {
        self.shot_noise.min(self.response_time)
    }
}

/// t_int⁻¹ = ε²R₀π⁴/(6α²e^{2π/α}), and the response-time cap.
pub fn max_rate(p: &ResonanceParams, sweep: &SweepConfig) -> MaxRate {
    let alpha = sweep.alpha(p);
    let shot_noise = p.epsilon.powi(2) * p.r0 * PI.powi(4) / (6.0 * alpha * alpha * (2.0 * PI / alpha).exp());
    let response_time = 1.0 / MIN_SWEEP_PERIOD;
    MaxRate {
        shot_noise,
        response_time,
        binding: if shot_noise <= response_time {
            RateLimit::ShotNoise
        } else {
            RateLimit::ResponseTime
        },
    }
}

/// Standard deviation of f₀ when φ is uniform on [−π, π): Δf_win/(2√3).
pub fn random_phase_floor(sweep: &SweepConfig) -> f64 {
    sweep.delta_f_win / (2.0 * 3f64.sqrt())
}

/// Slowest field change the tracker can follow: Δf_win/(2·t_int) (Hz/s).
pub fn slew_rate(sweep: &SweepConfig, t_int: f64) -> f64 {
    sweep.delta_f_win / (2.0 * t_int)
}
