//! Monte-Carlo sensitivity sweeps over window size and integration time.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::lineshape::{GyromagneticRatio, ResonanceParams};
use crate::simulator::{synthesize_trace, LineModel, StaticField, SweepConfig, TraceRequest};
use crate::theory::{sensitivity, SensitivityMethod};

pub const MIN_TRIALS: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepGrid {
    /// Window sizes Δf_win (Hz).
    pub windows: Vec<f64>,
    /// Integration times (s).
    pub t_ints: Vec<f64>,
    pub n_trials: usize,
    pub f_mod: f64,
    pub dwell: f64,
    pub seed: u64,
    pub line: LineModel,
    pub estimator: Estimator,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            windows: vec![30e6],
            t_ints: vec![1e-3, 3e-3, 10e-3, 30e-3, 100e-3],
            n_trials: 200,
            f_mod: 1e3,
            dwell: 20e-6,
            seed: 0,
            line: LineModel::Truncated,
            estimator: Estimator::phase(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityRow {
    pub delta_f_win: f64,
    pub alpha: f64,
    pub t_int: f64,
    pub n_trials: usize,
    pub n_locked: usize,
    /// Mean estimate minus the true resonance (Hz).
    pub bias: f64,
    /// Sample standard deviation of the estimates (Hz).
    pub std: f64,
    /// Phase-method prediction for this cell (Hz).
    pub predicted_std: f64,
    /// std·√t_int (Hz·√s).
    pub eta: f64,
    /// Closed-form η for each of [`SensitivityMethod::ALL`] (Hz·√s).
    pub eta_theory: [f64; 4],
}

/// Sample mean and standard deviation (n − 1 normalization).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Least-squares slope of log y against log x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (mx, _) = mean_std(&lx);
    let (my, _) = mean_std(&ly);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Estimates f₀ from `n_trials` shot-noise traces with the window centred
/// on the resonance. Trials run in parallel; trial k of cell c uses random
/// stream c·n_trials + k, so results do not depend on the thread count.
pub fn run_cell(
    p: &ResonanceParams,
    grid: &SweepGrid,
    delta_f_win: f64,
    t_int: f64,
    cell: usize,
) -> Result<(Vec<f64>, usize)> {
    let sweep = SweepConfig::new(p.f0, delta_f_win, grid.f_mod)?;
    let results: Result<Vec<(f64, bool)>> = (0..grid.n_trials)
        .into_par_iter()
        .map(|k| {
            let req = TraceRequest {
                dwell: grid.dwell,
                line: grid.line,
                ..TraceRequest::shot(t_int, grid.seed, (cell * grid.n_trials + k) as u64)
            };
            let trace = synthesize_trace(p, &sweep, &StaticField(0.0), &req)?;
            let rec = grid.estimator.estimate_trace(&trace, &sweep)?;
            Ok((rec.f0.value, rec.is_locked()))
        })
        .collect();
    let results = results?;
    let locked = results.iter().filter(|r| r.1).count();
    Ok((results.into_iter().map(|r| r.0).collect(), locked))
}

pub fn run_sensitivity_sweep(p: &ResonanceParams, grid: &SweepGrid) -> Result<Vec<SensitivityRow>> {
    p.validate()?;
    if grid.n_trials < MIN_TRIALS {
        return Err(Error::InvalidParams(format!(
            "at least {MIN_TRIALS} trials per cell are needed, got {}",
            grid.n_trials
        )));
    }
    let mut rows = Vec::with_capacity(grid.windows.len() * grid.t_ints.len());
    for (wi, &win) in grid.windows.iter().enumerate() {
        for (ti, &t_int) in grid.t_ints.iter().enumerate() {
            let cell = wi * grid.t_ints.len() + ti;
            let (f0s, n_locked) = run_cell(p, grid, win, t_int, cell)?;
            let (mean, std) = mean_std(&f0s);
            let alpha = win / (2.0 * p.gamma);
            let eta_theory = SensitivityMethod::ALL.map(|m| sensitivity(m, p, alpha).hz);
            rows.push(SensitivityRow {
                delta_f_win: win,
                alpha,
                t_int,
                n_trials: grid.n_trials,
                n_locked,
                bias: mean - p.f0,
                std,
                predicted_std: eta_theory[0] / t_int.sqrt(),
                eta: std * t_int.sqrt(),
                eta_theory,
            });
        }
    }
    Ok(rows)
}

/// One row per cell. Field-unit columns use the electron gyromagnetic ratio.
pub fn write_sensitivity_csv(path: &Path, rows: &[SensitivityRow]) -> Result<()> {
    let g = GyromagneticRatio::ELECTRON;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = vec![
        "delta_f_win_hz".to_string(),
        "alpha".into(),
        "t_int_s".into(),
        "n_trials".into(),
        "n_locked".into(),
        "bias_hz".into(),
        "std_hz".into(),
        "predicted_std_hz".into(),
        "eta_hz_rts".into(),
        "eta_t_rts".into(),
    ];
    header.extend(SensitivityMethod::ALL.iter().map(|m| format!("eta_{}_hz_rts", m.name())));
    let werr = |e: csv::Error| Error::Parse(format!("{}: {e}", path.display()));
    w.write_record(&header).map_err(werr)?;
    for r in rows {
        let mut rec = vec![
            r.delta_f_win.to_string(),
            r.alpha.to_string(),
            r.t_int.to_string(),
            r.n_trials.to_string(),
            r.n_locked.to_string(),
            r.bias.to_string(),
            r.std.to_string(),
            r.predicted_std.to_string(),
            r.eta.to_string(),
            g.shift_to_field(r.eta).to_string(),
        ];
        rec.extend(r.eta_theory.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(werr)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
