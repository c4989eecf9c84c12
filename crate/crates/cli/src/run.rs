//! Subcommand bodies. Each writes its tables into the output directory and
//! a short summary to stdout.

use std::fmt::Display;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use sweepdemod::bench::{loglog_slope, run_sensitivity_sweep, write_sensitivity_csv};
use sweepdemod::demod::{demodulate, EstimateRecord};
use sweepdemod::gradiometry::analyze;
use sweepdemod::io::{export_image, read_trace_binary, read_trace_csv, write_trace_binary, write_trace_csv, ImageFormat};
use sweepdemod::lineshape::GyromagneticRatio;
use sweepdemod::scan::run_scan;
use sweepdemod::simulator::{
    apply_gradient_modulation, synthesize_trace, FieldRamp, GradiometryConfig, NoiseMode, StaticField,
    TraceRequest,
};
use sweepdemod::theory::{max_rate, optimal_phase_alpha, random_phase_floor, sensitivity, SensitivityMethod};
use sweepdemod::tracker::{run_closed_loop, slew_rate};
use sweepdemod::Error;

use crate::config::{Config, Waveform};

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Io(String),
    Core(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration: {m}"),
            CliError::Io(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    /// 1 for I/O, 2 for configuration, 3 for numerical failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Core(e) => match e {
                Error::Io { .. } | Error::Image { .. } => 1,
                Error::NoLock | Error::ZeroAmplitude => 3,
                _ => 2,
            },
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

/// Writes a header and rows of already formatted cells.
fn write_table(path: &Path, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = header.join(",");
    body.push('\n');
    for row in rows {
        body.push_str(&row.join(","));
        body.push('\n');
    }
    w.write_all(body.as_bytes())
        .and_then(|_| w.flush())
        .map_err(|e| io_err(path, e))
}

fn cells<const N: usize>(values: [&dyn Display; N]) -> Vec<String> {
    values.iter().map(|v| v.to_string()).collect()
}

fn flag_names<'a>(names: impl Iterator<Item = &'a str>) -> String {
    let v: Vec<String> = names.map(str::to_lowercase).collect();
    if v.is_empty() {
        "ok".into()
    } else {
        v.join("|")
    }
}

pub fn write_resolved(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let text = toml::to_string(cfg).map_err(|e| CliError::Config(e.to_string()))?;
    let path = out.join("resolved_config.toml");
    std::fs::write(&path, text).map_err(|e| io_err(&path, e))
}

pub fn simulate(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let p = cfg.probe.params()?;
    let sweep = cfg.sweep.resolve(&p, 0.0)?;
    let t = cfg.trace;
    let req = TraceRequest {
        duration: t.duration,
        dwell: t.dwell,
        t0: 0.0,
        noise: t.noise,
        seed: cfg.seed,
        stream: t.stream,
        line: t.line,
    };
    let trace = synthesize_trace(&p, &sweep, &StaticField(t.field), &req)?;
    write_trace_csv(&out.join("trace.csv"), &trace)?;
    if t.noise == NoiseMode::Shot {
        write_trace_binary(&out.join("trace.bin"), &trace)?;
    }
    if let Some(w) = sweep.response_time_warning() {
        eprintln!("warning: {w}");
    }
    println!(
        "{} bins of {} s ({} s), mean rate {:.1} cps, flags {:?}",
        trace.len(),
        trace.dwell,
        trace.duration(),
        trace.mean_rate(),
        trace.flags
    );
    Ok(())
}

fn record_row(t: f64, r: &EstimateRecord) -> Vec<String> {
    let opt = |q: Option<sweepdemod::demod::Quantity>| q.map(|q| q.value.to_string()).unwrap_or_default();
    vec![
        t.to_string(),
        r.f0.value.to_string(),
        r.f0.sigma.to_string(),
        opt(r.gamma),
        opt(r.epsilon),
        opt(r.r0),
        r.phi.to_string(),
        r.flag_string(),
    ]
}

pub fn demod(cfg: &Config, out: &Path, input: &Path) -> Result<(), CliError> {
    let trace = if input.extension().is_some_and(|e| e == "bin") {
        read_trace_binary(input)?
    } else {
        read_trace_csv(input, None)?
    };
    let p = cfg.probe.params()?;
    let sweep = cfg.sweep.resolve(&p, 0.0)?;
    let bins = (cfg.trace.t_int / trace.dwell).round() as usize;
    if bins == 0 {
        return Err(CliError::Config("trace.t_int is shorter than one bin".into()));
    }
    let mut rows = Vec::new();
    let mut locked = 0;
    for seg in trace.segments(bins) {
        let h = demodulate(&seg, sweep.f_mod, cfg.estimator.n_max())?;
        let rec = cfg.estimator.estimate(&h, &sweep);
        locked += rec.is_locked() as usize;
        rows.push(record_row(seg.t0, &rec));
    }
    let n = rows.len();
    write_table(
        &out.join("estimates.csv"),
        &["t_start_s", "f0_hz", "df0_hz", "gamma_hz", "epsilon", "r0_cps", "phi_rad", "flags"],
        rows,
    )?;
    println!("{n} segments of {} s, {locked} locked", bins as f64 * trace.dwell);
    Ok(())
}

pub fn track(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let p = cfg.probe.params()?;
    let sweep = cfg.sweep.resolve(&p, 0.0)?;
    let tc = cfg.track.config(cfg.seed, cfg.estimator);
    let run = match cfg.track.waveform {
        Waveform::Coil(w) => run_closed_loop(&p, &sweep, &w, cfg.track.duration, &tc)?,
        Waveform::Ramp { offset, slope } => {
            run_closed_loop(&p, &sweep, &FieldRamp { offset, slope }, cfg.track.duration, &tc)?
        }
        Waveform::Static { field } => run_closed_loop(&p, &sweep, &StaticField(field), cfg.track.duration, &tc)?,
    };
    let rows = run.iter().map(|s| {
        let (lo, hi) = s.field_window(&p);
        cells([
            &s.t,
            &s.b_true,
            &s.b_est,
            &s.db_est,
            &s.f0_true,
            &s.f0_est,
            &s.f_c,
            &lo,
            &hi,
            &(s.lock as u8),
        ])
    });
    write_table(
        &out.join("track.csv"),
        &[
            "t_s",
            "b_true_t",
            "b_est_t",
            "db_est_t",
            "f0_true_hz",
            "f0_est_hz",
            "f_c_hz",
            "window_lo_t",
            "window_hi_t",
            "lock",
        ],
        rows,
    )?;
    let sr = slew_rate(&sweep, tc.t_int);
    let slipped = run.iter().filter(|s| !s.truth_in_window()).count();
    let unlocked = run.iter().filter(|s| !s.lock).count();
    println!(
        "{} samples, {unlocked} flagged no-lock, {slipped} with the resonance outside the window; slew rate {:.3e} Hz/s ({:.1} mT/s)",
        run.len(),
        sr.hz_per_s,
        sr.tesla_per_s * 1e3
    );
    Ok(())
}

pub fn scan(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let p = cfg.probe.params()?;
    let sc = cfg.scan.config(cfg.seed, cfg.estimator);
    let sweep = cfg.sweep.resolve(&p, sc.bias)?;
    let (nx, _) = sc.dims()?;
    let x_mid = sc.origin[0] + 0.5 * (nx - 1) as f64 * sc.pitch;
    let spec = cfg.scan.map;
    let map = move |x: f64, y: f64| spec.field(x, y, x_mid);
    let img = run_scan(&sc, &p, &sweep, &map)?;
    export_image(&img, ImageFormat::Csv, &out.join("image.csv"))?;
    if cfg.scan.png {
        export_image(&img, ImageFormat::Png, &out.join("image.png"))?;
    }
    if cfg.scan.pgm {
        export_image(&img, ImageFormat::Pgm16, &out.join("image.pgm"))?;
    }
    println!(
        "{}×{} pixels, {} flagged no-lock; simulated acquisition time {:.1} s (pixels/rate, no move or settling overhead)",
        img.nx,
        img.ny,
        img.unlocked(),
        img.wall_time
    );
    Ok(())
}

pub fn bench(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let p = cfg.probe.params()?;
    let rows = run_sensitivity_sweep(&p, &cfg.bench)?;
    write_sensitivity_csv(&out.join("sensitivity.csv"), &rows)?;
    theory_curves(cfg, out)?;
    for &win in &cfg.bench.windows {
        let cell: Vec<_> = rows.iter().filter(|r| r.delta_f_win == win).collect();
        let t: Vec<f64> = cell.iter().map(|r| r.t_int).collect();
        let s: Vec<f64> = cell.iter().map(|r| r.std).collect();
        let slope = if t.len() >= 2 { loglog_slope(&t, &s) } else { f64::NAN };
        let ratio: Vec<String> = cell.iter().map(|r| format!("{:.2}", r.eta / r.eta_theory[0])).collect();
        println!(
            "window {} MHz (α = {:.2}): log-log slope {slope:.3}, η/η_theory [{}]",
            win / 1e6,
            win / (2.0 * p.gamma),
            ratio.join(", ")
        );
    }
    Ok(())
}

fn theory_curves(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let p = cfg.probe.params()?;
    let g = GyromagneticRatio::ELECTRON;
    let rows = cfg.theory.alphas.iter().map(|&a| {
        let mut row = vec![a.to_string()];
        for m in SensitivityMethod::ALL {
            row.push(sensitivity(m, &p, a).hz.to_string());
        }
        row.push(g.shift_to_field(sensitivity(SensitivityMethod::DemodPhase, &p, a).hz).to_string());
        row
    });
    let mut header = vec!["alpha".to_string()];
    header.extend(SensitivityMethod::ALL.iter().map(|m| format!("eta_{}_hz_rts", m.name())));
    header.push("eta_demod_phase_t_rts".into());
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_table(&out.join("theory_curves.csv"), &header, rows)
}

pub fn gradient(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let p = cfg.probe.params()?;
    let sweep = cfg.sweep.resolve(&p, 0.0)?;
    let gs = cfg.gradient;
    let grad = GradiometryConfig::from_delta_phi(gs.f_tf, gs.x0, gs.delta_phi, &sweep)?;
    let mut rows = Vec::new();
    let mut sum = 0.0;
    for k in 0..gs.trials {
        let req = TraceRequest {
            duration: gs.duration,
            dwell: gs.dwell,
            t0: 0.0,
            noise: gs.noise,
            seed: cfg.seed,
            stream: k,
            line: gs.line,
        };
        let trace = apply_gradient_modulation(&p, &sweep, &grad, &StaticField(0.0), &req)?;
        let (carrier, g) = analyze(&trace, &sweep, gs.f_tf, gs.x0, &cfg.estimator)?;
        sum += g.delta_phi.value;
        rows.push(vec![
            k.to_string(),
            carrier.f0.value.to_string(),
            carrier.f0.sigma.to_string(),
            g.delta_phi.value.to_string(),
            g.delta_phi.sigma.to_string(),
            g.b1.value.to_string(),
            g.db_dx.value.to_string(),
            g.db_dx.sigma.to_string(),
            flag_names(g.flags.iter_names().map(|(n, _)| n)),
        ]);
    }
    write_table(
        &out.join("gradient.csv"),
        &[
            "trial",
            "f0_hz",
            "df0_hz",
            "delta_phi",
            "delta_phi_sigma",
            "b1_t",
            "db_dx_t_per_m",
            "db_dx_sigma_t_per_m",
            "flags",
        ],
        rows,
    )?;
    println!(
        "true Δφ {} (∂B/∂x {:.4e} T/m); mean estimate over {} trials {:.5}",
        gs.delta_phi,
        grad.db_dx,
        gs.trials,
        sum / gs.trials.max(1) as f64
    );
    Ok(())
}

pub fn theory(cfg: &Config, out: &Path) -> Result<(), CliError> {
    let p = cfg.probe.params()?;
    let sweep = cfg.sweep.resolve(&p, 0.0)?;
    theory_curves(cfg, out)?;
    let alpha = sweep.alpha(&p);
    let mr = max_rate(&p, &sweep);
    let sr = slew_rate(&sweep, cfg.theory.t_int);
    let eta = sensitivity(SensitivityMethod::DemodPhase, &p, alpha);
    let summary: Vec<(&str, String)> = vec![
        ("alpha", alpha.to_string()),
        ("eta_demod_phase_hz_rts", eta.hz.to_string()),
        ("eta_demod_phase_t_rts", eta.tesla.to_string()),
        ("optimal_alpha", optimal_phase_alpha().to_string()),
        ("max_rate_shot_noise_hz", mr.shot_noise.to_string()),
        ("max_rate_response_time_hz", mr.response_time.to_string()),
        ("max_rate_binding", format!("{:?}", mr.binding)),
        ("slew_rate_hz_per_s", sr.hz_per_s.to_string()),
        ("slew_rate_t_per_s", sr.tesla_per_s.to_string()),
        ("random_phase_std_hz", random_phase_floor(&sweep).to_string()),
    ];
    for (k, v) in &summary {
        println!("{k} = {v}");
    }
    write_table(
        &out.join("theory_summary.csv"),
        &["quantity", "value"],
        summary.into_iter().map(|(k, v)| vec![k.to_string(), v]),
    )
}
