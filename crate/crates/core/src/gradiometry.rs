//! Field-gradient readout from tuning-fork sidebands.
//!
//! Oscillating the probe at f_TF in a gradient modulates the sweep phase by
//! Δφ·cos(2πf_TF·t). The signal then carries components at f_TF + k·f_mod
//! whose coefficients, in the sign convention of [`crate::demod`], are
//! b_k = −i·J₁(kΔφ)·a_k exactly, with a₋ₖ = conj(aₖ). To first order
//! b_k ≈ −i·(kΔφ/2)·a_k, which is linear in Δφ.

use std::f64::consts::PI;

use bitflags::bitflags;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::demod::{bins_per_period, demodulate, EstimateRecord, HarmonicSet, Quantity};
use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::lineshape::GyromagneticRatio;
use crate::simulator::{PhotonTrace, SweepConfig};

/// Sideband orders used by default; higher orders are exponentially weaker.
pub const DEFAULT_SIDEBAND_ORDER: usize = 2;

/// Above this value of k_max·Δφ̂ the first-order model is no longer accurate.
pub const SMALL_ANGLE_LIMIT: f64 = 0.5;

/// Coefficients b_k at f_TF + k·f_mod for k = −n_max…n_max.
#[derive(Debug, Clone, PartialEq)]
pub struct SidebandSet {
    b: Vec<Complex64>,
    pub n_max: usize,
    pub f_tf: f64,
    pub f_mod: f64,
    pub t_int: f64,
}

impl SidebandSet {
    pub fn get(&self, k: i32) -> Option<Complex64> {
        let idx = k + self.n_max as i32;
        usize::try_from(idx).ok().and_then(|i| self.b.get(i)).copied()
    }

    /// (k, b_k) pairs in ascending k.
    pub fn iter(&self) -> impl Iterator<Item = (i32, Complex64)> + '_ {
        self.b
            .iter()
            .enumerate()
            .map(move |(i, z)| (i as i32 - self.n_max as i32, *z))
    }
}

fn check_frequency(freq: f64, duration: f64) -> Result<usize> {
    let cycles = freq * duration;
    let m = cycles.round();
    if (cycles - m).abs() > 1e-6 * cycles.max(1.0) {
        return Err(Error::Incommensurate {
            frequency: freq,
            duration,
        });
    }
    Ok(m as usize)
}

/// Projects the trace onto e^{+2πi(f_TF + k·f_mod)t} for |k| ≤ n_max.
///
/// The trace must span whole modulation periods and every sideband frequency
/// must complete a whole number of cycles in it, so each falls exactly on an
/// FFT bin.
pub fn demodulate_sidebands(trace: &PhotonTrace, f_mod: f64, f_tf: f64, n_max: usize) -> Result<SidebandSet> {
    if !(f_tf > f_mod) || f_tf <= 2.0 * n_max as f64 * f_mod {
        return Err(Error::SidebandAlias { f_tf, f_mod });
    }
    let nyquist = 0.5 / trace.dwell;
    let top = f_tf + n_max as f64 * f_mod;
    if top >= nyquist {
        return Err(Error::AboveNyquist { frequency: top, nyquist });
    }
    let n = trace.len();
    let p = bins_per_period(trace.dwell, f_mod)?;
    if n == 0 || n % p != 0 {
        return Err(Error::PeriodMisaligned {
            bins: n,
            bins_per_period: p as f64,
        });
    }
    let duration = trace.duration();
    let nm = n_max as i32;
    let bins = (-nm..=nm)
        .map(|k| check_frequency(f_tf + k as f64 * f_mod, duration))
        .collect::<Result<Vec<_>>>()?;

    let mut spec: Vec<Complex64> = trace.counts.iter().map(|&c| Complex64::new(c, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut spec);

    let b = (-nm..=nm)
        .zip(bins)
        .map(|(k, m)| {
            let freq = f_tf + k as f64 * f_mod;
            let shift = 2.0 * PI * (freq * (trace.t0 + 0.5 * trace.dwell)).rem_euclid(1.0);
            let raw = spec[m].conj() * Complex64::from_polar(1.0 / duration, shift);
            if k.rem_euclid(2) == 1 {
                raw
            } else {
                -raw
            }
        })
        .collect();

    Ok(SidebandSet {
        b,
        n_max,
        f_tf,
        f_mod,
        t_int: duration,
    })
}

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
    pub struct GradientFlags: u8 {
        /// k_max·Δφ̂ exceeds [`SMALL_ANGLE_LIMIT`]; the linear model
        /// underestimates Δφ.
        const BEYOND_SMALL_ANGLE = 1;
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientEstimate {
    /// Phase-modulation depth (rad).
    pub delta_phi: Quantity,
    /// Field modulation amplitude x₀·∂B/∂x (T).
    pub b1: Quantity,
    /// Field gradient (T/m).
    pub db_dx: Quantity,
    pub flags: GradientFlags,
}

/// First-order sideband model m_k = −i·(k/2)·a_k, so that b_k ≈ m_k·Δφ.
fn first_order(h: &HarmonicSet, k: i32) -> Option<Complex64> {
    let a = h.get(k.unsigned_abs() as usize)?;
    let a = if k < 0 { a.conj() } else { a };
    Some(Complex64::new(0.0, -0.5 * k as f64) * a)
}

/// Least-squares Δφ̂ over sideband orders 1…k_max on both sides of f_TF,
/// then B̂₁ = Δφ̂·Δf_win/γ_e and ∂B/∂x = B̂₁/x₀.
pub fn estimate_gradient(s: &SidebandSet, h: &HarmonicSet, sweep: &SweepConfig, x0: f64) -> Result<GradientEstimate> {
    if !h.is_locked() {
        return Err(Error::NoLock);
    }
    if x0 == 0.0 {
        return Err(Error::ZeroAmplitude);
    }
    let k_max = DEFAULT_SIDEBAND_ORDER.min(s.n_max).min(h.n_max()) as i32;
    if k_max < 1 {
        return Err(Error::InvalidParams("need at least one sideband order".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for k in (-k_max..=k_max).filter(|&k| k != 0) {
        let (Some(m), Some(b)) = (first_order(h, k), s.get(k)) else {
            continue;
        };
        num += (m.conj() * b).re;
        den += m.norm_sqr();
    }
    if !(den > 0.0) {
        return Err(Error::NoLock);
    }
    let dphi = num / den;
    let sigma = if s.t_int.is_finite() {
        (h.a0().max(0.0) / (2.0 * s.t_int) / den).sqrt()
    } else {
        0.0
    };

    let mut flags = GradientFlags::empty();
    if k_max as f64 * dphi.abs() > SMALL_ANGLE_LIMIT {
        flags |= GradientFlags::BEYOND_SMALL_ANGLE;
    }
    let to_field = sweep.delta_f_win / GyromagneticRatio::ELECTRON.angular();
    Ok(GradientEstimate {
        delta_phi: Quantity::new(dphi, sigma),
        b1: Quantity::new(dphi * to_field, sigma * to_field),
        db_dx: Quantity::new(dphi * to_field / x0, (sigma * to_field / x0).abs()),
        flags,
    })
}

/// Carrier estimate and gradient estimate from one trace.
pub fn analyze(
    trace: &PhotonTrace,
    sweep: &SweepConfig,
    f_tf: f64,
    x0: f64,
    estimator: &Estimator,
) -> Result<(EstimateRecord, GradientEstimate)> {
    let n = estimator.n_max().max(DEFAULT_SIDEBAND_ORDER);
    let h = demodulate(trace, sweep.f_mod, n)?;
    let carrier = estimator.estimate(&h, sweep);
    let s = demodulate_sidebands(trace, sweep.f_mod, f_tf, DEFAULT_SIDEBAND_ORDER)?;
    let g = estimate_gradient(&s, &h, sweep, x0)?;
    Ok((carrier, g))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lineshape::ResonanceParams;
    use crate::simulator::{apply_gradient_modulation, GradiometryConfig, StaticField, TraceRequest};

    fn probe(f0: f64) -> ResonanceParams {
        ResonanceParams::new(f0, 5e6, 0.15, 5e5).unwrap()
    }

    fn sweep() -> SweepConfig {
        SweepConfig::new(0.0, 30e6, 1e3).unwrap()
    }

    const F_TF: f64 = 32.5e3;

    fn trace(f0: f64, dphi: f64, req: TraceRequest) -> PhotonTrace {
        let g = GradiometryConfig::from_delta_phi(F_TF, 20e-9, dphi, &sweep()).unwrap();
        apply_gradient_modulation(&probe(f0), &sweep(), &g, &StaticField(0.0), &req).unwrap()
    }

    fn clean(f0: f64, dphi: f64) -> PhotonTrace {
        trace(
            f0,
            dphi,
            TraceRequest {
                dwell: 5e-6,
                ..TraceRequest::noiseless(0.1)
            },
        )
    }

    // Series J₁(x) = Σ (−1)^m (x/2)^{2m+1} / (m!(m+1)!)
    fn bessel_j1(x: f64) -> f64 {
        let mut term = x / 2.0;
        let mut sum = term;
        for m in 1..30 {
            term *= -(x * x / 4.0) / (m as f64 * (m + 1) as f64);
            sum += term;
        }
        sum
    }

    #[test]
    fn sideband_matches_direct_projection() {
        let tr = clean(3e6, 0.1);
        let s = demodulate_sidebands(&tr, 1e3, F_TF, 2).unwrap();
        for k in -2i32..=2 {
            let f = F_TF + k as f64 * 1e3;
            let direct: Complex64 = tr
                .counts
                .iter()
                .enumerate()
                .map(|(i, &c)| Complex64::from_polar(c / tr.dwell, 2.0 * PI * f * tr.bin_mid(i)))
                .sum::<Complex64>()
                / tr.len() as f64;
            let want = if k.rem_euclid(2) == 1 { direct } else { -direct };
            assert!((s.get(k).unwrap() - want).norm() < 1e-6 * s.get(k).unwrap().norm().max(1.0), "k={k}");
        }
    }

    #[test]
    fn exact_bessel_relation() {
        for dphi in [0.05, 0.5] {
            let tr = clean(2e6, dphi);
            let s = demodulate_sidebands(&tr, 1e3, F_TF, 2).unwrap();
            // carrier without modulation, same line
            let plain = crate::simulator::synthesize_trace(
                &probe(2e6),
                &sweep(),
                &StaticField(0.0),
                &TraceRequest {
                    dwell: 5e-6,
                    ..TraceRequest::noiseless(0.1)
                },
            )
            .unwrap();
            let h = demodulate(&plain, 1e3, 2).unwrap();
            for k in [-2i32, -1, 1, 2] {
                let a = h.get(k.unsigned_abs() as usize).unwrap();
                let a = if k < 0 { a.conj() } else { a };
                let want = Complex64::new(0.0, -bessel_j1(k as f64 * dphi)) * a;
                let got = s.get(k).unwrap();
                assert!((got - want).norm() < 0.01 * want.norm(), "dphi={dphi} k={k} {got} {want}");
            }
        }
    }

    #[test]
    fn small_angle_ratio() {
        let tr = clean(0.0, 0.05);
        let s = demodulate_sidebands(&tr, 1e3, F_TF, 2).unwrap();
        let h = demodulate(&tr, 1e3, 2).unwrap();
        for k in [1i32, 2] {
            let ratio = s.get(k).unwrap().norm() / h.a[k as usize].norm();
            let want = k as f64 * 0.05 / 2.0;
            assert!((ratio / want - 1.0).abs() < 0.05, "k={k} {ratio} {want}");
        }
    }

    #[test]
    fn no_modulation_leaves_sidebands_empty() {
        let tr = clean(1e6, 0.0);
        let s = demodulate_sidebands(&tr, 1e3, F_TF, 2).unwrap();
        let h = demodulate(&tr, 1e3, 2).unwrap();
        assert!(s.iter().all(|(_, b)| b.norm() < 1e-6 * h.a[1].norm()));
    }

    #[test]
    fn recovers_modulation_depth() {
        for dphi in [0.01, 0.05, 0.1, 0.2] {
            let tr = clean(0.0, dphi);
            let (_, g) = analyze(&tr, &sweep(), F_TF, 20e-9, &Estimator::phase()).unwrap();
            assert!((g.delta_phi.value / dphi - 1.0).abs() < 0.02, "{dphi} {}", g.delta_phi.value);
            assert!(g.flags.is_empty());
        }
    }

    #[test]
    fn large_modulation_is_flagged() {
        let tr = clean(0.0, 0.5);
        let (_, g) = analyze(&tr, &sweep(), F_TF, 20e-9, &Estimator::phase()).unwrap();
        assert!(g.flags.contains(GradientFlags::BEYOND_SMALL_ANGLE));
        // the carrier measured on the same trace shrinks by J₀(kΔφ), which
        // pushes the linear estimate up
        assert!(g.delta_phi.value > 0.5 * 1.03, "{}", g.delta_phi.value);
    }

    #[test]
    fn gradient_round_trip() {
        let cfg = GradiometryConfig {
            f_tf: F_TF,
            x0: 25e-9,
            db_dx: 1.5e3,
        };
        let req = TraceRequest {
            dwell: 5e-6,
            ..TraceRequest::noiseless(0.1)
        };
        let tr = apply_gradient_modulation(&probe(0.0), &sweep(), &cfg, &StaticField(0.0), &req).unwrap();
        let (_, g) = analyze(&tr, &sweep(), F_TF, cfg.x0, &Estimator::phase()).unwrap();
        assert!((g.db_dx.value / cfg.db_dx - 1.0).abs() < 0.02);
        assert!((g.b1.value / cfg.b1() - 1.0).abs() < 0.02);
    }

    #[test]
    fn zero_amplitude_is_an_error() {
        let tr = clean(0.0, 0.1);
        assert!(matches!(
            analyze(&tr, &sweep(), F_TF, 0.0, &Estimator::phase()),
            Err(Error::ZeroAmplitude)
        ));
    }

    #[test]
    fn refuses_without_carrier_lock() {
        let flat = PhotonTrace::new(5e-6, 0.0, vec![2.5; 20_000]);
        assert!(matches!(
            analyze(&flat, &sweep(), F_TF, 1e-8, &Estimator::phase()),
            Err(Error::NoLock)
        ));
    }

    #[test]
    fn rejects_bad_frequencies() {
        let tr = clean(0.0, 0.1);
        assert!(matches!(demodulate_sidebands(&tr, 1e3, 900.0, 2), Err(Error::SidebandAlias { .. })));
        assert!(matches!(
            demodulate_sidebands(&tr, 1e3, 32.123e3, 2),
            Err(Error::Incommensurate { .. })
        ));
        let coarse = PhotonTrace::new(20e-6, 0.0, vec![10.0; 5000]);
        assert!(matches!(
            demodulate_sidebands(&coarse, 1e3, F_TF, 2),
            Err(Error::AboveNyquist { .. })
        ));
    }

    #[test]
    fn carrier_is_untouched_by_gradient_readout() {
        let tr = trace(
            4e6,
            0.1,
            TraceRequest {
                dwell: 5e-6,
                ..TraceRequest::shot(0.1, 3, 0)
            },
        );
        let plain = Estimator::phase().estimate_trace(&tr, &sweep()).unwrap();
        let (carrier, _) = analyze(&tr, &sweep(), F_TF, 20e-9, &Estimator::phase()).unwrap();
        assert_eq!(plain.f0, carrier.f0);
        assert_eq!(plain.phi, carrier.phi);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(12))]

            #[test]
            fn ratio_is_independent_of_rate(c in 0.1f64..10.0) {
                let tr = clean(1e6, 0.1);
                let scaled = PhotonTrace { counts: tr.counts.iter().map(|x| x * c).collect(), ..tr.clone() };
                let (_, g) = analyze(&tr, &sweep(), F_TF, 1e-8, &Estimator::phase()).unwrap();
                let (_, gs) = analyze(&scaled, &sweep(), F_TF, 1e-8, &Estimator::phase()).unwrap();
                prop_assert!((g.delta_phi.value - gs.delta_phi.value).abs() < 1e-9);
            }

            #[test]
            fn linear_in_modulation_depth(dphi in 0.01f64..0.2) {
                let (_, g) = analyze(&clean(0.0, dphi), &sweep(), F_TF, 1e-8, &Estimator::phase()).unwrap();
                prop_assert!((g.delta_phi.value / dphi - 1.0).abs() < 0.03);
            }
        }
    }
}
