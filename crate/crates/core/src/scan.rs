//! Raster scans of a probe over a field map.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demod::demodulate;
use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::lineshape::{GyromagneticRatio, ResonanceParams};
use crate::simulator::{synthesize_trace, LineModel, NoiseMode, StaticField, SweepConfig, TraceRequest};
use crate::tracker::TrackerState;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScanConfig {
    /// Position of the first pixel (m).
    pub origin: [f64; 2],
    /// Scanned area (m).
    pub extent: [f64; 2],
    /// Pixel spacing (m).
    pub pitch: f64,
    /// Pixel rate (Hz).
    pub rate: f64,
    /// Integration time per pixel (s), at most 1/rate.
    pub t_int: f64,
    pub dwell: f64,
    pub estimator: Estimator,
    pub tracking: bool,
    /// Reverse every other row, as a scanner does.
    pub serpentine: bool,
    /// Tracker latency (s); one pixel period when absent.
    pub latency: Option<f64>,
    pub seed: u64,
    /// Uniform bias field added to the map (T).
    pub bias: f64,
    pub noise: NoiseMode,
    pub line: LineModel,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            origin: [0.0, 0.0],
            extent: [2e-6, 2e-6],
            pitch: 20e-9,
            rate: 100.0,
            t_int: 10e-3,
            dwell: 20e-6,
            estimator: Estimator::phase(),
            tracking: false,
            serpentine: true,
            latency: None,
            seed: 0,
            bias: 2.75e-3,
            noise: NoiseMode::Shot,
            line: LineModel::Truncated,
        }
    }
}

impl ScanConfig {
    /// Pixels along x and y.
    pub fn dims(&self) -> Result<(usize, usize)> {
        if !(self.pitch > 0.0) {
            return Err(Error::InvalidParams(format!("pitch must be > 0, got {}", self.pitch)));
        }
        let nx = (self.extent[0] / self.pitch).round();
        let ny = (self.extent[1] / self.pitch).round();
        if !(nx >= 1.0 && ny >= 1.0) {
            return Err(Error::InvalidParams(format!(
                "extent {:?} m at pitch {} m gives no pixels",
                self.extent, self.pitch
            )));
        }
        Ok((nx as usize, ny as usize))
    }

    pub fn validate(&self) -> Result<()> {
        self.dims()?;
        if !(self.rate > 0.0) || !(self.t_int > 0.0) {
            return Err(Error::InvalidParams("rate and t_int must be positive".into()));
        }
        if self.t_int * self.rate > 1.0 + 1e-9 {
            return Err(Error::InvalidParams(format!(
                "t_int {} s exceeds the pixel period {} s",
                self.t_int,
                1.0 / self.rate
            )));
        }
        Ok(())
    }

    /// Simulated acquisition time: pixel count over pixel rate, without
    /// move or settling overheads.
    pub fn wall_time(&self) -> Result<f64> {
        let (nx, ny) = self.dims()?;
        Ok((nx * ny) as f64 / self.rate)
    }

    /// Grid index (i, j) of the n-th acquired pixel.
    pub fn raster_position(&self, n: usize, nx: usize) -> (usize, usize) {
        let j = n / nx;
        let i = n % nx;
        if self.serpentine && j % 2 == 1 {
            (nx - 1 - i, j)
        } else {
            (i, j)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pixel {
    /// Estimated total field including the bias (T).
    pub b: f64,
    pub db: f64,
    pub lock: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FieldImage {
    pub nx: usize,
    pub ny: usize,
    pub origin: [f64; 2],
    pub pitch: f64,
    /// Row-major, `pixels[j * nx + i]`.
    pub pixels: Vec<Pixel>,
    pub config: Option<ScanConfig>,
    /// Simulated acquisition time (s).
    pub wall_time: f64,
}

impl FieldImage {
    pub fn at(&self, i: usize, j: usize) -> &Pixel {
        &self.pixels[j * self.nx + i]
    }

    pub fn x(&self, i: usize) -> f64 {
        self.origin[0] + i as f64 * self.pitch
    }

    pub fn y(&self, j: usize) -> f64 {
        self.origin[1] + j as f64 * self.pitch
    }

    pub fn unlocked(&self) -> usize {
        self.pixels.iter().filter(|p| !p.lock).count()
    }
}

/// Scans `map` (field in T at (x, y) in m), adding `cfg.bias`.
///
/// Without tracking every pixel is independent and pixels are processed in
/// parallel; each draws from its own random stream, so the image does not
/// depend on the thread count. With tracking the raster is walked in
/// acquisition order and the window follows the previous estimates.
pub fn run_scan(
    cfg: &ScanConfig,
    p: &ResonanceParams,
    sweep: &SweepConfig,
    map: &(dyn Fn(f64, f64) -> f64 + Sync),
) -> Result<FieldImage> {
    cfg.validate()?;
    sweep.validate()?;
    p.validate()?;
    let (nx, ny) = cfg.dims()?;
    let g = GyromagneticRatio::ELECTRON;
    let origin = cfg.origin;
    let pitch = cfg.pitch;

    let measure = |n: usize, window: &SweepConfig| -> Result<(usize, crate::demod::EstimateRecord)> {
        let (i, j) = cfg.raster_position(n, nx);
        let field = map(origin[0] + i as f64 * pitch, origin[1] + j as f64 * pitch) + cfg.bias;
        let req = TraceRequest {
            duration: cfg.t_int,
            dwell: cfg.dwell,
            t0: n as f64 / cfg.rate,
            noise: cfg.noise,
            seed: cfg.seed,
            stream: (j * nx + i) as u64,
            line: cfg.line,
        };
        let trace = synthesize_trace(p, window, &StaticField(field), &req)?;
        let h = demodulate(&trace, window.f_mod, cfg.estimator.n_max())?;
        Ok((j * nx + i, cfg.estimator.estimate(&h, window)))
    };
    let to_pixel = |rec: &crate::demod::EstimateRecord| Pixel {
        b: g.shift_to_field(rec.f0.value - p.f0),
        db: g.shift_to_field(rec.f0.sigma),
        lock: rec.is_locked(),
    };

    let total = nx * ny;
    let mut pixels = vec![Pixel::default(); total];
    if cfg.tracking {
        let mut state = TrackerState::new(sweep.f_c, cfg.latency.unwrap_or(1.0 / cfg.rate));
        for n in 0..total {
            let t = n as f64 / cfg.rate;
            state.apply_due(t);
            let (idx, rec) = measure(n, &sweep.recentered(state.f_c))?;
            pixels[idx] = to_pixel(&rec);
            state.tracker_step(&rec, t + cfg.t_int);
        }
    } else {
        let results: Vec<(usize, Pixel)> = (0..total)
            .into_par_iter()
            .map(|n| measure(n, sweep).map(|(idx, rec)| (idx, to_pixel(&rec))))
            .collect::<Result<_>>()?;
        for (idx, px) in results {
            pixels[idx] = px;
        }
    }

    Ok(FieldImage {
        nx,
        ny,
        origin,
        pitch,
        pixels,
        config: Some(*cfg),
        wall_time: total as f64 / cfg.rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{FieldMap, FieldMapConfig};

    fn probe() -> ResonanceParams {
        ResonanceParams::new(0.0, 5e6, 0.15, 5e5).unwrap()
    }

    fn small(rate: f64, t_int: f64) -> ScanConfig {
        ScanConfig {
            extent: [200e-9, 100e-9],
            rate,
            t_int,
            bias: 0.0,
            ..Default::default()
        }
    }

    fn sweep() -> SweepConfig {
        SweepConfig::new(0.0, 30e6, 1e3).unwrap()
    }

    #[test]
    fn wall_time_is_pixels_over_rate() {
        let cfg = ScanConfig {
            extent: [2e-6, 2e-6],
            pitch: 20e-9,
            rate: 100.0,
            ..Default::default()
        };
        assert_eq!(cfg.dims().unwrap(), (100, 100));
        assert_eq!(cfg.wall_time().unwrap(), 100.0);
        let slow = ScanConfig { rate: 2.0, t_int: 0.5, ..cfg };
        assert_eq!(slow.wall_time().unwrap(), 5000.0);
    }

    #[test]
    fn rejects_bad_geometry() {
        let cfg = ScanConfig {
            extent: [1e-9, 1e-6],
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = ScanConfig {
            t_int: 20e-3,
            rate: 100.0,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn serpentine_order() {
        let cfg = ScanConfig::default();
        assert_eq!(cfg.raster_position(0, 4), (0, 0));
        assert_eq!(cfg.raster_position(3, 4), (3, 0));
        assert_eq!(cfg.raster_position(4, 4), (3, 1));
        assert_eq!(cfg.raster_position(7, 4), (0, 1));
        let plain = ScanConfig {
            serpentine: false,
            ..cfg
        };
        assert_eq!(plain.raster_position(4, 4), (0, 1));
    }

    #[test]
    fn scan_is_deterministic() {
        let map = FieldMap::new(FieldMapConfig::default());
        let f = |x: f64, y: f64| map.sample_field_map(x, y);
        let a = run_scan(&small(100.0, 10e-3), &probe(), &sweep(), &f).unwrap();
        let b = run_scan(&small(100.0, 10e-3), &probe(), &sweep(), &f).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.pixels.len(), 50);
    }

    #[test]
    fn thread_count_does_not_matter() {
        let map = FieldMap::new(FieldMapConfig::default());
        let f = |x: f64, y: f64| map.sample_field_map(x, y);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_scan(&small(100.0, 10e-3), &probe(), &sweep(), &f).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn flat_map_with_bias_is_recovered() {
        let cfg = ScanConfig {
            bias: 0.2e-3,
            noise: NoiseMode::None,
            line: LineModel::Periodized,
            ..small(100.0, 10e-3)
        };
        let img = run_scan(&cfg, &probe(), &sweep(), &|_, _| 0.0).unwrap();
        assert!(img.pixels.iter().all(|p| (p.b - 0.2e-3).abs() < 1e-9));
    }

    #[test]
    fn tracking_extends_the_range() {
        // 0.45 mT bias plus a gradient reaching 0.63 mT, beyond the ±0.536 mT window
        let p = ResonanceParams { r0: 5e6, ..probe() };
        let map = |x: f64, _: f64| x * 1e3;
        let tracked = ScanConfig {
            bias: 0.45e-3,
            tracking: true,
            ..small(10.0, 100e-3)
        };
        let img = run_scan(&tracked, &p, &sweep(), &map).unwrap();
        assert!(img.pixels.iter().all(|px| px.lock));
        for j in 0..img.ny {
            // the first pixels pull the window in from the far edge
            for i in (0..img.nx).filter(|&i| j > 0 || i >= 3) {
                let want = 0.45e-3 + img.x(i) * 1e3;
                assert!((img.at(i, j).b - want).abs() < 30e-6, "{} {}", img.at(i, j).b, want);
            }
        }
        let fixed = ScanConfig { tracking: false, ..tracked };
        let img = run_scan(&fixed, &p, &sweep(), &map).unwrap();
        let worst = (0..img.ny)
            .map(|j| (img.at(img.nx - 1, j).b - (0.45e-3 + img.x(img.nx - 1) * 1e3)).abs())
            .fold(0.0, f64::max);
        assert!(worst > 100e-6, "{worst}");
    }
}
