//! Harmonic demodulation of swept photon traces and the phase-method
//! estimates of f₀, Γ, ε and R₀.
//!
//! Coefficients are a_n = (1/N)·Σ_k R(t_k)·e^{+2πi·n·f_mod·t_k} with t_k the
//! bin midpoints and R = counts/dwell. The sweep starts at the lower window
//! edge, so a resonance at the window centre sits at mid-period and raw
//! harmonics carry a factor e^{iπn}; together with the dip sign this is
//! removed by multiplying a_n (n ≥ 1) by (−1)^{n+1}. After the correction a
//! centred resonance has real, positive a_n and a detuning δ rotates a_n by
//! n·2πδ/Δf_win.

use std::cell::RefCell;
use std::f64::consts::PI;

use bitflags::bitflags;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::simulator::{PhotonTrace, SweepConfig};

/// Multiple of the per-quadrature noise floor below which |a₁| means no lock.
pub const NO_LOCK_SIGMAS: f64 = 3.0;

/// Complex harmonic coefficients a₀…a_N of one integration window (counts/s).
#[derive(Debug, Clone, PartialEq)]
pub struct HarmonicSet {
    pub a: Vec<Complex64>,
    pub f_mod: f64,
    /// Integration time (s). Infinite for noiseless analytic sets.
    pub t_int: f64,
    /// Bin width of the source trace (s); zero for analytic sets.
    pub dwell: f64,
}

impl HarmonicSet {
    pub fn n_max(&self) -> usize {
        self.a.len().saturating_sub(1)
    }

    pub fn a0(&self) -> f64 {
        self.a.first().map_or(0.0, |c| c.re)
    }

    pub fn get(&self, n: usize) -> Option<Complex64> {
        self.a.get(n).copied()
    }

    /// Shot-noise standard deviation of each quadrature of a_n, n ≥ 1.
    pub fn quadrature_sigma(&self) -> f64 {
        (self.a0().max(0.0) / (2.0 * self.t_int)).sqrt()
    }

    /// Shot-noise standard deviation of a₀.
    pub fn dc_sigma(&self) -> f64 {
        (self.a0().max(0.0) / self.t_int).sqrt()
    }

    pub fn no_lock_threshold(&self) -> f64 {
        NO_LOCK_SIGMAS * self.quadrature_sigma()
    }

    pub fn is_locked(&self) -> bool {
        match self.get(1) {
            Some(a1) => a1.norm() > 0.0 && a1.norm() >= self.no_lock_threshold(),
            None => false,
        }
    }

    /// Multiplies every coefficient by `c`, as if every count were scaled.
    pub fn scaled(&self, c: f64) -> Self {
        HarmonicSet {
            a: self.a.iter().map(|z| z * c).collect(),
            ..self.clone()
        }
    }
}

/// A value with its 1σ uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Quantity {
    pub value: f64,
    pub sigma: f64,
}

impl Quantity {
    pub fn new(value: f64, sigma: f64) -> Self {
        Quantity { value, sigma }
    }

    pub fn exact(value: f64) -> Self {
        Quantity { value, sigma: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Phase,
    HarmonicLstsq,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Phase => "phase",
            Method::HarmonicLstsq => "harmonic_lstsq",
        }
    }
}

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
    pub struct EstimateFlags: u8 {
        /// |a₁| is below the noise-floor threshold; the resonance is probably
        /// outside the window.
        const NO_LOCK = 1;
        /// |a₁| ≤ |a₂|, so the line width cannot be inferred.
        const ILL_CONDITIONED = 1 << 1;
        /// The least-squares fit ran out of iterations.
        const NOT_CONVERGED = 1 << 2;
        /// The least-squares normal equations were singular.
        const SINGULAR = 1 << 3;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateRecord {
    pub f0: Quantity,
    /// Phase of a₁ in [−π, π), or the fitted phase for least squares.
    pub phi: f64,
    pub gamma: Option<Quantity>,
    pub epsilon: Option<Quantity>,
    pub r0: Option<Quantity>,
    pub method: Method,
    pub flags: EstimateFlags,
}

impl EstimateRecord {
    pub fn is_locked(&self) -> bool {
        !self.flags.contains(EstimateFlags::NO_LOCK)
    }

    /// Compact textual form of the flags, e.g. `no_lock|ill_conditioned`.
    pub fn flag_string(&self) -> String {
        let names: Vec<&str> = [
            (EstimateFlags::NO_LOCK, "no_lock"),
            (EstimateFlags::ILL_CONDITIONED, "ill_conditioned"),
            (EstimateFlags::NOT_CONVERGED, "not_converged"),
            (EstimateFlags::SINGULAR, "singular"),
        ]
        .iter()
        .filter(|(f, _)| self.flags.contains(*f))
        .map(|(_, n)| *n)
        .collect();
        if names.is_empty() {
            "ok".to_string()
        } else {
            names.join("|")
        }
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

/// Number of bins per modulation period, if it is an integer.
pub fn bins_per_period(dwell: f64, f_mod: f64) -> Result<usize> {
    let exact = 1.0 / (f_mod * dwell);
    let p = exact.round();
    if !exact.is_finite() || p < 1.0 || (exact - p).abs() > 1e-6 * exact {
        return Err(Error::PeriodMisaligned {
            bins: 0,
            bins_per_period: exact,
        });
    }
    Ok(p as usize)
}

/// Reduces a trace to its harmonics a₀…a_{n_max} at multiples of `f_mod`.
///
/// The trace is folded onto one period and transformed with an FFT; bin n of
/// the folded spectrum is bin n·(periods) of the full-length spectrum.
pub fn demodulate(trace: &PhotonTrace, f_mod: f64, n_max: usize) -> Result<HarmonicSet> {
    if !(f_mod > 0.0) || !(trace.dwell > 0.0) {
        return Err(Error::InvalidParams(format!(
            "f_mod and dwell must be positive, got {} Hz and {} s",
            f_mod, trace.dwell
        )));
    }
    let nyquist = 0.5 / trace.dwell;
    if n_max as f64 * f_mod >= nyquist {
        return Err(Error::AboveNyquist {
            frequency: n_max as f64 * f_mod,
            nyquist,
        });
    }
    let n = trace.len();
    let p = bins_per_period(trace.dwell, f_mod).map_err(|_| Error::PeriodMisaligned {
        bins: n,
        bins_per_period: 1.0 / (f_mod * trace.dwell),
    })?;
    if n == 0 || n % p != 0 {
        return Err(Error::PeriodMisaligned {
            bins: n,
            bins_per_period: p as f64,
        });
    }

    let mut folded = vec![Complex64::new(0.0, 0.0); p];
    for chunk in trace.counts.chunks_exact(p) {
        for (acc, &c) in folded.iter_mut().zip(chunk) {
            acc.re += c;
        }
    }
    PLANNER.with(|pl| pl.borrow_mut().plan_fft_forward(p).process(&mut folded));

    let t_int = n as f64 * trace.dwell;
    let scale = 1.0 / t_int;
    let start = (f_mod * trace.t0).rem_euclid(1.0);
    let a = (0..=n_max)
        .map(|h| {
            let shift = 2.0 * PI * h as f64 * (0.5 / p as f64 + start);
            let raw = folded[h].conj() * Complex64::from_polar(scale, shift);
            match h {
                0 => Complex64::new(raw.re, 0.0),
                h if h % 2 == 1 => raw,
                _ => -raw,
            }
        })
        .collect();

    Ok(HarmonicSet {
        a,
        f_mod,
        t_int,
        dwell: trace.dwell,
    })
}

/// Wraps an angle to [−π, π).
pub fn wrap_phase(phi: f64) -> f64 {
    let w = (phi + PI).rem_euclid(2.0 * PI) - PI;
    if w >= PI {
        -PI
    } else {
        w
    }
}

/// Phase-method estimate of f₀: φ = arg a₁, f̂₀ = f_c + φ·Δf_win/2π.
pub fn phase_to_frequency(h: &HarmonicSet, sweep: &SweepConfig) -> EstimateRecord {
    let a1 = h.get(1).unwrap_or_default();
    let phi = wrap_phase(a1.im.atan2(a1.re));
    let mut flags = EstimateFlags::empty();
    if !h.is_locked() {
        flags |= EstimateFlags::NO_LOCK;
    }
    EstimateRecord {
        f0: Quantity::new(
            sweep.f_c + phi * sweep.delta_f_win / (2.0 * PI),
            estimate_uncertainty(h, sweep, h.t_int),
        ),
        phi,
        gamma: None,
        epsilon: None,
        r0: None,
        method: Method::Phase,
        flags,
    }
}

/// δf₀ = δφ·Δf_win/2π with δφ = sqrt(a₀/(2·t_int))/|a₁|.
pub fn estimate_uncertainty(h: &HarmonicSet, sweep: &SweepConfig, t_int: f64) -> f64 {
    let a1 = h.get(1).map_or(0.0, |z| z.norm());
    let dphi = (h.a0().max(0.0) / (2.0 * t_int)).sqrt() / a1;
    dphi * sweep.delta_f_win / (2.0 * PI)
}

/// Phase-method f₀ plus the closed-form Γ, ε and R₀ estimates from |a₀|,
/// |a₁|, |a₂|.
///
/// Γ̂ = (Δf_win/2π)·ln|a₁/a₂|, ε̂ = (2α̂/π)·e^{π/α̂}·|a₁/a₀| with α̂ built
/// from Γ̂, R̂₀ = a₀. Uncertainties are first-order shot-noise propagation.
pub fn estimate_params(h: &HarmonicSet, sweep: &SweepConfig) -> EstimateRecord {
    let mut rec = phase_to_frequency(h, sweep);
    let a0 = h.a0();
    rec.r0 = Some(Quantity::new(a0, h.dc_sigma()));

    let (Some(a1), Some(a2)) = (h.get(1), h.get(2)) else {
        rec.flags |= EstimateFlags::ILL_CONDITIONED;
        return rec;
    };
    let (m1, m2) = (a1.norm(), a2.norm());
    if !(m1 > m2) || m2 == 0.0 || !(a0 > 0.0) {
        rec.flags |= EstimateFlags::ILL_CONDITIONED;
        return rec;
    }

    let sigma = h.quadrature_sigma();
    let u = (m1 / m2).ln();
    let gamma = sweep.delta_f_win / (2.0 * PI) * u;
    let dl1 = sigma / m1;
    let dl2 = sigma / m2;
    let dl0 = h.dc_sigma() / a0;
    let d_gamma = sweep.delta_f_win / (2.0 * PI) * dl1.hypot(dl2);

    // ln ε̂ = ln 2 − ln u + u + ln|a₁| − ln a₀ with u = ln|a₁/a₂| = π/α̂
    let alpha = PI / u;
    let epsilon = 2.0 * alpha / PI * (PI / alpha).exp() * m1 / a0;
    let d_ln_eps = ((2.0 - 1.0 / u) * dl1).hypot((1.0 / u - 1.0) * dl2).hypot(dl0);

    rec.gamma = Some(Quantity::new(gamma, d_gamma));
    rec.epsilon = Some(Quantity::new(epsilon, epsilon * d_ln_eps));
    rec
}
