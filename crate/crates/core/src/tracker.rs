//! Resonance tracking: after every sample the sweep window is re-centred on
//! the latest estimate, subject to a fixed feedback latency.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::demod::{demodulate, EstimateRecord};
use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::lineshape::{GyromagneticRatio, ResonanceParams};
use crate::simulator::{synthesize_trace, FieldWaveform, LineModel, NoiseMode, SweepConfig, TraceRequest};

/// Times closer than this are treated as the same instant (s).
const TIME_EPS: f64 = 1e-9;

/// Largest window expansion used while searching for a lost resonance.
pub const MAX_EXPANSION: f64 = 4.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlewRate {
    pub hz_per_s: f64,
    pub tesla_per_s: f64,
}

/// SR = Δf_win/(2·t_int).
pub fn slew_rate(sweep: &SweepConfig, t_int: f64) -> SlewRate {
    let hz_per_s = crate::theory::slew_rate(sweep, t_int);
    SlewRate {
        hz_per_s,
        tesla_per_s: GyromagneticRatio::ELECTRON.shift_to_field(hz_per_s),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryRow {
    pub t: f64,
    pub f0_hat: f64,
    pub f_c: f64,
    pub lock: bool,
}

/// Single-owner tracking state machine.
#[derive(Debug, Clone)]
pub struct TrackerState {
    pub f_c: f64,
    pub lock: bool,
    pub latency: f64,
    pending: VecDeque<(f64, f64)>,
    history: Vec<HistoryRow>,
}

impl TrackerState {
    pub fn new(f_c: f64, latency: f64) -> Self {
        TrackerState {
            f_c,
            lock: true,
            latency,
            pending: VecDeque::new(),
            history: Vec::new(),
        }
    }

    /// Queued (apply-time, centre) pairs.
    pub fn pending(&self) -> impl Iterator<Item = &(f64, f64)> {
        self.pending.iter()
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.history
    }

    /// Applies every queued update due at or before `now`.
    pub fn apply_due(&mut self, now: f64) {
        while let Some(&(at, f)) = self.pending.front() {
            if at > now + TIME_EPS {
                break;
            }
            self.f_c = f;
            self.pending.pop_front();
        }
    }

    /// Takes an estimate available at `now`: a locked estimate is queued for
    /// `now + latency`, a no-lock estimate leaves the centre alone. Due
    /// updates are applied and a history row is recorded.
    pub fn tracker_step(&mut self, estimate: &EstimateRecord, now: f64) {
        self.lock = estimate.is_locked();
        if self.lock {
            self.pending.push_back((now + self.latency, estimate.f0.value));
        }
        self.apply_due(now);
        self.history.push(HistoryRow {
            t: now,
            f0_hat: estimate.f0.value,
            f_c: self.f_c,
            lock: self.lock,
        });
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrackConfig {
    /// Integration time per sample (s).
    pub t_int: f64,
    /// Sample rate (Hz); rate·t_int must not exceed 1.
    pub rate: f64,
    /// Dead time between an estimate and its application (s).
    pub latency: f64,
    pub tracking: bool,
    /// Widen the window (×2 per failed sample, up to ×4) after losing lock.
    pub recovery: bool,
    pub dwell: f64,
    pub noise: NoiseMode,
    pub line: LineModel,
    pub seed: u64,
    pub estimator: Estimator,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            t_int: 10e-3,
            rate: 50.0,
            latency: 10e-3,
            tracking: true,
            recovery: false,
            dwell: 20e-6,
            noise: NoiseMode::Shot,
            line: LineModel::Truncated,
            seed: 0,
            estimator: Estimator::phase(),
        }
    }
}

impl TrackConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_int > 0.0) || !(self.rate > 0.0) {
            return Err(Error::InvalidParams("t_int and rate must be positive".into()));
        }
        if self.rate * self.t_int > 1.0 + 1e-9 {
            return Err(Error::InvalidParams(format!(
                "rate·t_int = {} > 1: consecutive integration windows would overlap",
                self.rate * self.t_int
            )));
        }
        if !(self.latency >= 0.0) {
            return Err(Error::InvalidParams("latency must be non-negative".into()));
        }
        Ok(())
    }
}

/// One closed-loop sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackSample {
    /// Start of the integration window (s).
    pub t: f64,
    /// True field at the window midpoint (T).
    pub b_true: f64,
    /// Estimated field (T).
    pub b_est: f64,
    pub db_est: f64,
    /// True and estimated resonance frequency (Hz).
    pub f0_true: f64,
    pub f0_est: f64,
    /// Window used for this sample (Hz).
    pub f_c: f64,
    pub window_lo: f64,
    pub window_hi: f64,
    pub lock: bool,
}

impl TrackSample {
    /// Window edges in field units (T).
    pub fn field_window(&self, p: &ResonanceParams) -> (f64, f64) {
        let g = GyromagneticRatio::ELECTRON;
        (g.shift_to_field(self.window_lo - p.f0), g.shift_to_field(self.window_hi - p.f0))
    }

    /// Whether the true resonance was inside the window at mid-sample.
    pub fn truth_in_window(&self) -> bool {
        self.f0_true > self.window_lo && self.f0_true < self.window_hi
    }
}

/// Simulates acquisition and tracking of `field` for `duration` seconds.
///
/// Sample j integrates over [j/rate, j/rate + t_int) with the window that is
/// active at its start. Its estimate becomes available at the end of the
/// integration and is applied `latency` later, at the next sample boundary.
/// `p.f0` is the zero-field resonance; the window starts centred on
/// `sweep.f_c` and stays there when tracking is off.
pub fn run_closed_loop(
    p: &ResonanceParams,
    sweep: &SweepConfig,
    field: &dyn FieldWaveform,
    duration: f64,
    cfg: &TrackConfig,
) -> Result<Vec<TrackSample>> {
    cfg.validate()?;
    sweep.validate()?;
    p.validate()?;
    let g = GyromagneticRatio::ELECTRON;
    let samples = (duration * cfg.rate + 1e-9).floor() as usize;
    let mut state = TrackerState::new(sweep.f_c, cfg.latency);
    let mut expansion = 1.0;
    let mut out = Vec::with_capacity(samples);

    for j in 0..samples {
        let t = j as f64 / cfg.rate;
        state.apply_due(t);
        let window = SweepConfig {
            f_c: if cfg.tracking { state.f_c } else { sweep.f_c },
            delta_f_win: sweep.delta_f_win * expansion,
            f_mod: sweep.f_mod,
        };
        let req = TraceRequest {
            duration: cfg.t_int,
            dwell: cfg.dwell,
            t0: t,
            noise: cfg.noise,
            seed: cfg.seed,
            stream: j as u64,
            line: cfg.line,
        };
        let trace = synthesize_trace(p, &window, field, &req)?;
        let h = demodulate(&trace, window.f_mod, cfg.estimator.n_max())?;
        let est = cfg.estimator.estimate(&h, &window);

        let mid = t + 0.5 * trace.duration();
        let b_true = field.field(mid);
        out.push(TrackSample {
            t,
            b_true,
            b_est: g.shift_to_field(est.f0.value - p.f0),
            db_est: g.shift_to_field(est.f0.sigma),
            f0_true: p.f0 + g.field_to_shift(b_true),
            f0_est: est.f0.value,
            f_c: window.f_c,
            window_lo: window.lower_edge(),
            window_hi: window.upper_edge(),
            lock: est.is_locked(),
        });

        if cfg.recovery {
            expansion = if est.is_locked() {
                1.0
            } else {
                (expansion * 2.0).min(MAX_EXPANSION)
            };
        }
        if cfg.tracking {
            state.tracker_step(&est, t + trace.duration());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demod::{EstimateFlags, Method, Quantity};
    use crate::simulator::{FieldRamp, StaticField};

    fn record(f0: f64, lock: bool) -> EstimateRecord {
        EstimateRecord {
            f0: Quantity::exact(f0),
            phi: 0.0,
            gamma: None,
            epsilon: None,
            r0: None,
            method: Method::Phase,
            flags: if lock { EstimateFlags::empty() } else { EstimateFlags::NO_LOCK },
        }
    }

    fn probe() -> ResonanceParams {
        ResonanceParams::new(0.0, 5e6, 0.15, 5e6).unwrap()
    }

    fn sweep() -> SweepConfig {
        SweepConfig::new(0.0, 30e6, 1e3).unwrap()
    }

    #[test]
    fn slew_rate_values() {
        let sr = slew_rate(&sweep(), 10e-3);
        assert_eq!(sr.hz_per_s, 1.5e9);
        assert!((sr.tesla_per_s - 0.05357).abs() < 1e-4);
        assert_eq!(slew_rate(&sweep(), 20e-3).hz_per_s, 0.75e9);
    }

    #[test]
    fn zero_latency_recentres_immediately() {
        let mut s = TrackerState::new(0.0, 0.0);
        s.tracker_step(&record(3e6, true), 0.01);
        assert_eq!(s.f_c, 3e6);
        assert!(s.lock);
    }

    #[test]
    fn latency_delays_application() {
        let mut s = TrackerState::new(0.0, 10e-3);
        s.tracker_step(&record(3e6, true), 0.02);
        assert_eq!(s.f_c, 0.0);
        assert_eq!(s.pending().count(), 1);
        s.apply_due(0.025);
        assert_eq!(s.f_c, 0.0);
        s.apply_due(0.03);
        assert_eq!(s.f_c, 3e6);
        assert_eq!(s.pending().count(), 0);
    }

    #[test]
    fn no_lock_keeps_centre() {
        let mut s = TrackerState::new(1e6, 0.0);
        s.tracker_step(&record(9e6, false), 0.01);
        assert_eq!(s.f_c, 1e6);
        assert!(!s.lock);
        assert_eq!(s.history().len(), 1);
        assert!(!s.history()[0].lock);
    }

    #[test]
    fn rejects_overlapping_windows() {
        let cfg = TrackConfig {
            t_int: 30e-3,
            rate: 50.0,
            ..Default::default()
        };
        assert!(run_closed_loop(&probe(), &sweep(), &StaticField(0.0), 0.1, &cfg).is_err());
    }

    fn noiseless(latency: f64) -> TrackConfig {
        TrackConfig {
            t_int: 10e-3,
            rate: 100.0,
            latency,
            noise: NoiseMode::None,
            line: LineModel::Periodized,
            ..Default::default()
        }
    }

    #[test]
    fn constant_field_is_a_fixed_point() {
        let b = 0.3e-3;
        let run = run_closed_loop(&probe(), &sweep(), &StaticField(b), 0.1, &noiseless(0.0)).unwrap();
        let f0 = 28e9 * b;
        assert_eq!(run[0].f_c, 0.0);
        for s in &run[1..] {
            assert!((s.f_c - f0).abs() < 1.0, "{}", s.f_c);
            assert!((s.b_est - b).abs() < 1e-9);
        }
    }

    #[test]
    fn one_step_follower_on_a_ramp() {
        // change of f₀ over one sample: 0.3·Δf_win
        let slope = 0.3 * 30e6 / 10e-3 / 28e9;
        let ramp = FieldRamp { offset: 0.0, slope };
        let run = run_closed_loop(&probe(), &sweep(), &ramp, 0.1, &noiseless(0.0)).unwrap();
        for w in run.windows(2) {
            let lag = w[1].f0_true - w[1].f_c;
            let step = w[1].f0_true - w[0].f0_true;
            // the line drifts within each sample, so the estimate is the
            // mid-sample value only approximately
            assert!((lag - step).abs() < 0.02 * step, "{lag} {step}");
        }
    }

    #[test]
    fn tracking_off_keeps_window() {
        let cfg = TrackConfig {
            tracking: false,
            ..noiseless(0.0)
        };
        let run = run_closed_loop(&probe(), &sweep(), &StaticField(0.2e-3), 0.05, &cfg).unwrap();
        assert!(run.iter().all(|s| s.f_c == 0.0));
        assert!(run.iter().all(|s| (s.b_est - 0.2e-3).abs() < 1e-9));
    }

    #[test]
    fn window_bounds_in_field_units() {
        let run = run_closed_loop(&probe(), &sweep(), &StaticField(0.0), 0.01, &noiseless(0.0)).unwrap();
        let (lo, hi) = run[0].field_window(&probe());
        assert!((hi - 0.5357e-3).abs() < 1e-6);
        assert!((lo + 0.5357e-3).abs() < 1e-6);
    }

    #[test]
    fn recovery_expands_window_after_loss() {
        // resonance 0.8 windows away: invisible to the base window
        let b = 0.8 * 30e6 / 28e9;
        let cfg = TrackConfig {
            recovery: true,
            noise: NoiseMode::None,
            line: LineModel::Truncated,
            ..noiseless(0.0)
        };
        let run = run_closed_loop(&probe(), &sweep(), &StaticField(b), 0.1, &cfg).unwrap();
        assert!(!run[0].lock || (run[0].f0_est - run[0].f0_true).abs() > 1e6);
        let last = run.last().unwrap();
        assert!((last.window_hi - last.window_lo - 30e6).abs() < 1.0);
        assert!((last.f0_est - last.f0_true).abs() < 0.01 * 30e6, "{}", last.f0_est - last.f0_true);
    }

    #[test]
    fn far_resonance_is_flagged_no_lock() {
        let b = 0.8 * 30e6 / 28e9;
        let p = ResonanceParams::new(0.0, 5e6, 0.15, 5e5).unwrap();
        let cfg = TrackConfig {
            tracking: false,
            rate: 100.0,
            ..Default::default()
        };
        let run = run_closed_loop(&p, &sweep(), &StaticField(b), 2.0, &cfg).unwrap();
        let flagged = run.iter().filter(|s| !s.lock).count();
        assert!(flagged as f64 >= 0.95 * run.len() as f64, "{flagged}/{}", run.len());
    }

    #[test]
    fn locked_estimates_stay_in_window() {
        let cfg = TrackConfig {
            tracking: true,
            latency: 0.0,
            rate: 100.0,
            ..Default::default()
        };
        let wave = crate::simulator::CoilWaveform::with_amplitude(0.4e-3);
        let run = run_closed_loop(&probe(), &sweep(), &wave, 1.0, &cfg).unwrap();
        for s in run.iter().filter(|s| s.lock) {
            assert!(s.f0_est >= s.window_lo && s.f0_est < s.window_hi);
        }
    }
}
