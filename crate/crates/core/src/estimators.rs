//! Least-squares estimation of (f₀, ε, Γ, R₀) from several harmonics.
//!
//! Minimizes Σ_j |ã_j − a_j|² over j = 0…n_max, where ã_j are the expected
//! coefficients of a [`CoefficientModel`], with a Levenberg-damped
//! Gauss–Newton iteration warm-started from the phase method. The frequency
//! is carried as the phase φ = 2π(f₀ − f_c)/Δf_win during the iteration.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::demod::{
    bins_per_period, demodulate, estimate_params, wrap_phase, EstimateFlags, EstimateRecord, HarmonicSet, Method,
    Quantity,
};
use crate::error::{Error, Result};
use crate::lineshape::ResonanceParams;
use crate::simulator::{PhotonTrace, SweepConfig};

/// How the expected coefficients ã_j are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoefficientModel {
    /// Closed-form harmonics of the periodized line,
    /// ã₀ = R₀ − πR₀εΓ/Δf_win, ã_j = (πR₀εΓ/Δf_win)·e^{−2πjΓ/Δf_win}·e^{ijφ}.
    #[default]
    Analytic,
    /// Discrete Fourier coefficients of the line as actually sampled: one
    /// sweep of bin-midpoint Lorentzian values, cut off at the window edges.
    /// Needs the bin width of the source trace and bins aligned to the sweep
    /// start.
    Sampled,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LstsqConfig {
    pub n_max: usize,
    pub model: CoefficientModel,
    pub max_iter: usize,
    /// Relative step size below which the iteration stops.
    pub step_tol: f64,
}

impl Default for LstsqConfig {
    fn default() -> Self {
        LstsqConfig {
            n_max: 3,
            model: CoefficientModel::Analytic,
            max_iter: 50,
            step_tol: 1e-9,
        }
    }
}

/// Expected coefficients ã₀…ã_{n_max} and their derivatives with respect to
/// (f₀, ε, Γ, R₀).
pub fn model_coefficients(
    model: CoefficientModel,
    p: &ResonanceParams,
    sweep: &SweepConfig,
    n_max: usize,
    dwell: f64,
) -> Result<(Vec<Complex64>, Vec<[Complex64; 4]>)> {
    match model {
        CoefficientModel::Analytic => Ok(analytic_model(p, sweep, n_max)),
        CoefficientModel::Sampled => {
            if !(dwell > 0.0) {
                return Err(Error::InvalidParams(
                    "the sampled coefficient model needs the trace bin width".into(),
                ));
            }
            let bins = bins_per_period(dwell, sweep.f_mod)?;
            Ok(sampled_model(p, sweep, n_max, bins))
        }
    }
}

fn analytic_model(p: &ResonanceParams, sweep: &SweepConfig, n_max: usize) -> (Vec<Complex64>, Vec<[Complex64; 4]>) {
    let df = sweep.delta_f_win;
    let base = PI * p.gamma / df;
    let amp = base * p.r0 * p.epsilon;
    let phi = 2.0 * PI * (p.f0 - sweep.f_c) / df;
    let q = (-2.0 * PI * p.gamma / df).exp();
    let re = |x: f64| Complex64::new(x, 0.0);

    let mut val = Vec::with_capacity(n_max + 1);
    let mut jac = Vec::with_capacity(n_max + 1);
    val.push(re(p.r0 - amp));
    jac.push([
        re(0.0),
        re(-base * p.r0),
        re(-PI * p.r0 * p.epsilon / df),
        re(1.0 - base * p.epsilon),
    ]);
    for j in 1..=n_max {
        let jf = j as f64;
        let rot = Complex64::from_polar(q.powi(j as i32), jf * phi);
        let a = rot * amp;
        val.push(a);
        jac.push([
            a * Complex64::new(0.0, jf * 2.0 * PI / df),
            rot * (base * p.r0),
            rot * (PI * p.r0 * p.epsilon / df * (1.0 - 2.0 * PI * jf * p.gamma / df)),
            rot * (base * p.epsilon),
        ]);
    }
    (val, jac)
}

fn sampled_model(
    p: &ResonanceParams,
    sweep: &SweepConfig,
    n_max: usize,
    bins: usize,
) -> (Vec<Complex64>, Vec<[Complex64; 4]>) {
    let zero = Complex64::new(0.0, 0.0);
    let mut val = vec![zero; n_max + 1];
    let mut jac = vec![[zero; 4]; n_max + 1];
    let inv = 1.0 / bins as f64;
    for k in 0..bins {
        let frac = (k as f64 + 0.5) * inv;
        let f = sweep.lower_edge() + sweep.delta_f_win * frac;
        let u = (f - p.f0) / p.gamma;
        let l = 1.0 / (1.0 + u * u);
        let l2 = l * l;
        let rate = p.r0 * (1.0 - p.epsilon * l);
        let d = [
            -2.0 * p.r0 * p.epsilon * u * l2 / p.gamma,
            -p.r0 * l,
            -2.0 * p.r0 * p.epsilon * u * u * l2 / p.gamma,
            1.0 - p.epsilon * l,
        ];
        for j in 0..=n_max {
            let w = Complex64::from_polar(inv, 2.0 * PI * j as f64 * frac);
            val[j] += w * rate;
            for (acc, dk) in jac[j].iter_mut().zip(d) {
                *acc += w * dk;
            }
        }
    }
    for j in 0..=n_max {
        let sign = match j {
            0 => 1.0,
            j if j % 2 == 1 => 1.0,
            _ => -1.0,
        };
        val[j] *= sign;
        for d in jac[j].iter_mut() {
            *d *= sign;
        }
    }
    val[0].im = 0.0;
    for d in jac[0].iter_mut() {
        d.im = 0.0;
    }
    (val, jac)
}

/// Residuals ã_j − a_j stacked as [Re₀, Re₁, Im₁, …, Re_n, Im_n] and the
/// Jacobian rows with columns (f₀, ε, Γ, R₀).
pub fn residual_and_jacobian(
    params: &ResonanceParams,
    h: &HarmonicSet,
    sweep: &SweepConfig,
    model: CoefficientModel,
    n_max: usize,
) -> Result<(Vec<f64>, Vec<[f64; 4]>)> {
    if n_max > h.n_max() {
        return Err(Error::InvalidParams(format!(
            "model order {n_max} exceeds the {} measured harmonics",
            h.n_max()
        )));
    }
    let (val, jac) = model_coefficients(model, params, sweep, n_max, h.dwell)?;
    let mut r = Vec::with_capacity(2 * n_max + 1);
    let mut j = Vec::with_capacity(2 * n_max + 1);
    r.push(val[0].re - h.a[0].re);
    j.push(jac[0].map(|d| d.re));
    for n in 1..=n_max {
        let diff = val[n] - h.a[n];
        r.push(diff.re);
        r.push(diff.im);
        j.push(jac[n].map(|d| d.re));
        j.push(jac[n].map(|d| d.im));
    }
    Ok((r, j))
}

/// Diagnostics of one least-squares run.
#[derive(Debug, Clone, PartialEq)]
pub struct LstsqReport {
    pub record: EstimateRecord,
    pub iterations: usize,
    /// Objective after the initial point and after every accepted step.
    pub costs: Vec<f64>,
    pub converged: bool,
}

/// Fits the coefficient model to `h`, starting from a phase-method record.
///
/// Returns [`Error::NoLock`] when `init` has no lock. A singular or
/// non-converging fit returns `init` with the corresponding flag set.
pub fn harmonic_lstsq(
    h: &HarmonicSet,
    sweep: &SweepConfig,
    init: &EstimateRecord,
    cfg: &LstsqConfig,
) -> Result<EstimateRecord> {
    harmonic_lstsq_report(h, sweep, init, cfg).map(|r| r.record)
}

// Scaled coordinates: [φ, ε, Γ/Δf_win, R₀/s].
struct Scaling {
    f_c: f64,
    df: f64,
    s: f64,
}

impl Scaling {
    fn to_params(&self, x: &[f64; 4]) -> ResonanceParams {
        ResonanceParams {
            f0: self.f_c + x[0] * self.df / (2.0 * PI),
            epsilon: x[1],
            gamma: x[2] * self.df,
            r0: x[3] * self.s,
        }
    }

    fn column_scale(&self) -> [f64; 4] {
        [self.df / (2.0 * PI), 1.0, self.df, self.s]
    }
}

fn in_bounds(x: &[f64; 4]) -> bool {
    x.iter().all(|v| v.is_finite()) && x[1] > 0.0 && x[1] < 1.0 && x[2] > 0.0 && x[3] > 0.0
}

pub fn harmonic_lstsq_report(
    h: &HarmonicSet,
    sweep: &SweepConfig,
    init: &EstimateRecord,
    cfg: &LstsqConfig,
) -> Result<LstsqReport> {
    if !init.is_locked() {
        return Err(Error::NoLock);
    }
    if cfg.n_max < 2 || h.n_max() < cfg.n_max {
        return Err(Error::InvalidParams(format!(
            "least squares needs n_max ≥ 2 and that many harmonics (n_max = {}, measured {})",
            cfg.n_max,
            h.n_max()
        )));
    }
    let df = sweep.delta_f_win;
    let a0 = h.a0();
    let sc = Scaling {
        f_c: sweep.f_c,
        df,
        s: if a0 > 0.0 { a0 } else { 1.0 },
    };

    let r0 = init.r0.map_or(a0, |q| q.value).max(f64::MIN_POSITIVE);
    let gamma = init
        .gamma
        .map(|q| q.value)
        .filter(|g| *g > 1e-3 * df && *g < 10.0 * df)
        .unwrap_or(df / 6.0);
    let epsilon = init.epsilon.map(|q| q.value).unwrap_or_else(|| {
        let a1 = h.get(1).map_or(0.0, |z| z.norm());
        a1 * df / (PI * r0 * gamma * (-2.0 * PI * gamma / df).exp())
    });
    let x0 = [
        2.0 * PI * (init.f0.value - sweep.f_c) / df,
        epsilon.clamp(1e-4, 0.95),
        gamma / df,
        r0 / sc.s,
    ];

    let colscale = sc.column_scale();
    let eval = |x: &[f64; 4]| -> Result<(Vec<f64>, Vec<[f64; 4]>, f64)> {
        let (mut r, mut j) = residual_and_jacobian(&sc.to_params(x), h, sweep, cfg.model, cfg.n_max)?;
        for (ri, row) in r.iter_mut().zip(j.iter_mut()) {
            *ri /= sc.s;
            for (c, s) in row.iter_mut().zip(colscale) {
                *c *= s / sc.s;
            }
        }
        let cost = r.iter().map(|v| v * v).sum();
        Ok((r, j, cost))
    };

    let fallback = |flag: EstimateFlags, iterations, costs| LstsqReport {
        record: EstimateRecord {
            flags: init.flags | flag,
            ..init.clone()
        },
        iterations,
        costs,
        converged: false,
    };

    let mut x = x0;
    let (mut r, mut jac, mut cost) = eval(&x)?;
    let mut costs = vec![cost];
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let (jtj, jtr) = normal_equations(&jac, &r);
        let mut damped = jtj;
        for i in 0..4 {
            damped[i][i] += lambda * jtj[i][i].max(1e-12);
        }
        let Some(step) = solve4(damped, jtr.map(|v| -v)) else {
            return Ok(fallback(EstimateFlags::SINGULAR, iterations, costs));
        };
        let small = step
            .iter()
            .zip(&x)
            .enumerate()
            .all(|(i, (d, xi))| d.abs() <= cfg.step_tol * (xi.abs() + if i == 0 { 1.0 } else { 0.0 }));

        let trial = [x[0] + step[0], x[1] + step[1], x[2] + step[2], x[3] + step[3]];
        if in_bounds(&trial) {
            let (rt, jt, ct) = eval(&trial)?;
            if ct <= cost {
                x = trial;
                r = rt;
                jac = jt;
                cost = ct;
                costs.push(cost);
                lambda = (lambda * 0.1).max(1e-12);
                if small {
                    converged = true;
                    break;
                }
                continue;
            }
        }
        if small || lambda > 1e12 {
            // no downhill step remains at working precision
            converged = true;
            break;
        }
        lambda *= 10.0;
    }

    if !converged {
        return Ok(fallback(EstimateFlags::NOT_CONVERGED, iterations, costs));
    }

    let (jtj, _) = normal_equations(&jac, &r);
    let Some(cov) = invert4(jtj) else {
        return Ok(fallback(EstimateFlags::SINGULAR, iterations, costs));
    };
    let var = h.a0().max(0.0) / (2.0 * h.t_int) / (sc.s * sc.s);
    let sigma = |i: usize| {
        if var == 0.0 {
            0.0
        } else {
            (cov[i][i].max(0.0) * var).sqrt() * colscale[i]
        }
    };

    let phi = wrap_phase(x[0]);
    let p = sc.to_params(&x);
    Ok(LstsqReport {
        record: EstimateRecord {
            f0: Quantity::new(sweep.f_c + phi * df / (2.0 * PI), sigma(0)),
            phi,
            gamma: Some(Quantity::new(p.gamma, sigma(2))),
            epsilon: Some(Quantity::new(p.epsilon, sigma(1))),
            r0: Some(Quantity::new(p.r0, sigma(3))),
            method: Method::HarmonicLstsq,
            flags: init.flags & !EstimateFlags::ILL_CONDITIONED,
        },
        iterations,
        costs,
        converged: true,
    })
}

fn normal_equations(jac: &[[f64; 4]], r: &[f64]) -> ([[f64; 4]; 4], [f64; 4]) {
    let mut jtj = [[0.0; 4]; 4];
    let mut jtr = [0.0; 4];
    for (row, ri) in jac.iter().zip(r) {
        for a in 0..4 {
            jtr[a] += row[a] * ri;
            for b in 0..4 {
                jtj[a][b] += row[a] * row[b];
            }
        }
    }
    (jtj, jtr)
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn solve4(mut m: [[f64; 4]; 4], mut b: [f64; 4]) -> Option<[f64; 4]> {
    let scale = (0..4).map(|i| m[i][i].abs()).fold(0.0, f64::max);
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    for col in 0..4 {
        let piv = (col..4).max_by(|&a, &c| m[a][col].abs().total_cmp(&m[c][col].abs()))?;
        if m[piv][col].abs() <= 1e-14 * scale {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..4 {
            let f = m[row][col] / m[col][col];
            for k in col..4 {
                m[row][k] -= f * m[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 4];
    for row in (0..4).rev() {
        let s: f64 = (row + 1..4).map(|k| m[row][k] * x[k]).sum();
        x[row] = (b[row] - s) / m[row][row];
    }
    Some(x)
}

fn invert4(m: [[f64; 4]; 4]) -> Option<[[f64; 4]; 4]> {
    let mut inv = [[0.0; 4]; 4];
    for c in 0..4 {
        let mut e = [0.0; 4];
        e[c] = 1.0;
        let col = solve4(m, e)?;
        for r in 0..4 {
            inv[r][c] = col[r];
        }
    }
    Some(inv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    #[default]
    Phase,
    Lstsq,
}

/// A complete trace-to-estimate pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Estimator {
    pub kind: EstimatorKind,
    pub lstsq: LstsqConfig,
}

impl Estimator {
    pub fn phase() -> Self {
        Estimator::default()
    }

    pub fn lstsq(model: CoefficientModel) -> Self {
        Estimator {
            kind: EstimatorKind::Lstsq,
            lstsq: LstsqConfig {
                model,
                ..Default::default()
            },
        }
    }

    /// Number of harmonics the estimator consumes.
    pub fn n_max(&self) -> usize {
        match self.kind {
            EstimatorKind::Phase => 2,
            EstimatorKind::Lstsq => self.lstsq.n_max.max(2),
        }
    }

    /// Estimates from harmonics. A no-lock phase estimate is returned as is
    /// by the least-squares variant.
    pub fn estimate(&self, h: &HarmonicSet, sweep: &SweepConfig) -> EstimateRecord {
        let init = estimate_params(h, sweep);
        match self.kind {
            EstimatorKind::Phase => init,
            EstimatorKind::Lstsq => match harmonic_lstsq(h, sweep, &init, &self.lstsq) {
                Ok(rec) => rec,
                Err(_) => init,
            },
        }
    }

    pub fn estimate_trace(&self, trace: &PhotonTrace, sweep: &SweepConfig) -> Result<EstimateRecord> {
        let h = demodulate(trace, sweep.f_mod, self.n_max())?;
        Ok(self.estimate(&h, sweep))
    }
}
