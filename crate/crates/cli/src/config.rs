//! Run configuration: one TOML file with a section per stage. Every key is
//! optional; absent keys take the defaults below.

use serde::{Deserialize, Serialize};

use sweepdemod::bench::SweepGrid;
use sweepdemod::estimators::Estimator;
use sweepdemod::lineshape::{GyromagneticRatio, ResonanceParams};
use sweepdemod::scan::ScanConfig;
use sweepdemod::simulator::{CoilWaveform, LineModel, NoiseMode, SweepConfig};
use sweepdemod::tracker::TrackConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    pub estimator: Estimator,
    pub probe: ProbeSection,
    pub sweep: SweepSection,
    pub trace: TraceSection,
    pub track: TrackSection,
    pub scan: ScanSection,
    pub bench: SweepGrid,
    pub gradient: GradientSection,
    pub theory: TheorySection,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 0,
            estimator: Estimator::phase(),
            probe: ProbeSection::default(),
            sweep: SweepSection::default(),
            trace: TraceSection::default(),
            track: TrackSection::default(),
            scan: ScanSection::default(),
            bench: SweepGrid::default(),
            gradient: GradientSection::default(),
            theory: TheorySection::default(),
        }
    }
}

/// Resonance line of the probe; `f0` is the zero-field resonance (Hz).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub f0: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub r0: f64,
}

impl Default for ProbeSection {
    fn default() -> Self {
        ProbeSection {
            f0: 2.87e9,
            gamma: 5e6,
            epsilon: 0.15,
            r0: 5e5,
        }
    }
}

impl ProbeSection {
    pub fn params(&self) -> sweepdemod::Result<ResonanceParams> {
        ResonanceParams::new(self.f0, self.gamma, self.epsilon, self.r0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    /// Window centre (Hz); defaults to the zero-field resonance shifted by
    /// the bias field of the run.
    pub f_c: Option<f64>,
    pub delta_f_win: f64,
    pub f_mod: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            f_c: None,
            delta_f_win: 30e6,
            f_mod: 1e3,
        }
    }
}

impl SweepSection {
    pub fn resolve(&self, probe: &ResonanceParams, bias: f64) -> sweepdemod::Result<SweepConfig> {
        let f_c = self
            .f_c
            .unwrap_or(probe.f0 + GyromagneticRatio::ELECTRON.field_to_shift(bias));
        SweepConfig::new(f_c, self.delta_f_win, self.f_mod)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TraceSection {
    pub duration: f64,
    pub dwell: f64,
    /// Static field during the trace (T).
    pub field: f64,
    pub noise: NoiseMode,
    pub line: LineModel,
    pub stream: u64,
    /// Segment length for `demod` (s).
    pub t_int: f64,
}

impl Default for TraceSection {
    fn default() -> Self {
        TraceSection {
            duration: 0.1,
            dwell: 20e-6,
            field: 0.0,
            noise: NoiseMode::Shot,
            line: LineModel::Truncated,
            stream: 0,
            t_int: 10e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Waveform {
    Coil(CoilWaveform),
    Ramp { offset: f64, slope: f64 },
    Static { field: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackSection {
    pub duration: f64,
    #[serde(rename = "loop")]
    pub loop_: TrackLoop,
    pub waveform: Waveform,
}

/// The tracking loop without the estimator, which is shared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackLoop {
    pub t_int: f64,
    pub rate: f64,
    pub latency: f64,
    pub tracking: bool,
    pub recovery: bool,
    pub dwell: f64,
    pub noise: NoiseMode,
    pub line: LineModel,
}

impl Default for TrackLoop {
    fn default() -> Self {
        let d = TrackConfig::default();
        TrackLoop {
            t_int: d.t_int,
            rate: d.rate,
            latency: d.latency,
            tracking: d.tracking,
            recovery: d.recovery,
            dwell: d.dwell,
            noise: d.noise,
            line: d.line,
        }
    }
}

impl Default for TrackSection {
    fn default() -> Self {
        TrackSection {
            duration: 5.0,
            loop_: TrackLoop::default(),
            waveform: Waveform::Coil(CoilWaveform::default()),
        }
    }
}

impl TrackSection {
    pub fn config(&self, seed: u64, estimator: Estimator) -> TrackConfig {
        let l = self.loop_;
        TrackConfig {
            t_int: l.t_int,
            rate: l.rate,
            latency: l.latency,
            tracking: l.tracking,
            recovery: l.recovery,
            dwell: l.dwell,
            noise: l.noise,
            line: l.line,
            seed,
            estimator,
        }
    }
}

/// Synthetic sample field maps (T, without the bias).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FieldMapSpec {
    /// Smooth µm-scale domains plus fine stripes; `amplitude` is the domain
    /// contrast (T), `scale` the domain size (m).
    Domains { amplitude: f64, scale: f64 },
    /// Linear in x: B = gradient·(x − x_mid).
    Ramp { gradient: f64 },
    Flat,
}

impl FieldMapSpec {
    pub fn field(&self, x: f64, y: f64, x_mid: f64) -> f64 {
        match *self {
            FieldMapSpec::Domains { amplitude, scale } => {
                let (u, v) = (x / scale, y / scale);
                let d = (2.1 * u + 0.3).sin() * (1.7 * v).cos() + 0.5 * (4.3 * (u + v)).sin();
                amplitude * (d + 0.12 * (31.0 * (u - v)).sin())
            }
            FieldMapSpec::Ramp { gradient } => gradient * (x - x_mid),
            FieldMapSpec::Flat => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanSection {
    pub grid: ScanGrid,
    pub map: FieldMapSpec,
    /// Also render a 16-bit PNG heat map next to the CSV.
    pub png: bool,
    pub pgm: bool,
}

/// The raster without seed and estimator, which are shared.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanGrid {
    pub origin: [f64; 2],
    pub extent: [f64; 2],
    pub pitch: f64,
    pub rate: f64,
    pub t_int: f64,
    pub dwell: f64,
    pub tracking: bool,
    pub serpentine: bool,
    pub latency: Option<f64>,
    pub bias: f64,
    pub noise: NoiseMode,
    pub line: LineModel,
}

impl Default for ScanGrid {
    fn default() -> Self {
        let d = ScanConfig::default();
        ScanGrid {
            origin: d.origin,
            extent: d.extent,
            pitch: d.pitch,
            rate: d.rate,
            t_int: d.t_int,
            dwell: d.dwell,
            tracking: d.tracking,
            serpentine: d.serpentine,
            latency: d.latency,
            bias: d.bias,
            noise: d.noise,
            line: d.line,
        }
    }
}

impl Default for ScanSection {
    fn default() -> Self {
        ScanSection {
            grid: ScanGrid::default(),
            map: FieldMapSpec::Domains {
                amplitude: 1.7e-4,
                scale: 0.5e-6,
            },
            png: true,
            pgm: false,
        }
    }
}

impl ScanSection {
    pub fn config(&self, seed: u64, estimator: Estimator) -> ScanConfig {
        let g = self.grid;
        ScanConfig {
            origin: g.origin,
            extent: g.extent,
            pitch: g.pitch,
            rate: g.rate,
            t_int: g.t_int,
            dwell: g.dwell,
            estimator,
            tracking: g.tracking,
            serpentine: g.serpentine,
            latency: g.latency,
            seed,
            bias: g.bias,
            noise: g.noise,
            line: g.line,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientSection {
    pub f_tf: f64,
    /// Oscillation amplitude (m).
    pub x0: f64,
    /// Modulation depth to simulate.
    pub delta_phi: f64,
    pub duration: f64,
    pub dwell: f64,
    pub trials: u64,
    pub noise: NoiseMode,
    pub line: LineModel,
}

impl Default for GradientSection {
    fn default() -> Self {
        GradientSection {
            f_tf: 32.5e3,
            x0: 50e-9,
            delta_phi: 0.1,
            duration: 0.1,
            dwell: 5e-6,
            trials: 20,
            noise: NoiseMode::Shot,
            line: LineModel::Truncated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    pub alphas: Vec<f64>,
    /// Integration time for the slew-rate figure (s).
    pub t_int: f64,
}

impl Default for TheorySection {
    fn default() -> Self {
        TheorySection {
            alphas: (0..=38).map(|k| 1.0 + 0.25 * k as f64).collect(),
            t_int: 10e-3,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_survive_a_toml_round_trip() {
        let cfg = Config::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<Config>(&text).unwrap(), cfg);
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(toml::from_str::<Config>("").unwrap(), Config::default());
    }

    #[test]
    fn tagged_sections_parse() {
        let cfg: Config = toml::from_str(
            "[track.waveform]\nkind = \"ramp\"\noffset = 0.0\nslope = 1e-3\n\
             [scan.map]\nkind = \"ramp\"\ngradient = 100.0\n",
        )
        .unwrap();
        assert_eq!(cfg.track.waveform, Waveform::Ramp { offset: 0.0, slope: 1e-3 });
        assert_eq!(cfg.scan.map, FieldMapSpec::Ramp { gradient: 100.0 });
    }

    #[test]
    fn window_centre_follows_the_bias() {
        let s = SweepSection::default();
        let p = ProbeSection::default().params().unwrap();
        let sweep = s.resolve(&p, 1e-3).unwrap();
        assert!((sweep.f_c - p.f0 - 28e6).abs() < 1.0);
        let fixed = SweepSection { f_c: Some(2.9e9), ..s }.resolve(&p, 1e-3).unwrap();
        assert_eq!(fixed.f_c, 2.9e9);
    }

    #[test]
    fn ramp_map_is_zero_mid_scan() {
        let m = FieldMapSpec::Ramp { gradient: 50.0 };
        assert_eq!(m.field(1e-6, 3e-7, 1e-6), 0.0);
        assert_eq!(m.field(2e-6, 0.0, 1e-6), 50.0 * 1e-6);
    }
}
