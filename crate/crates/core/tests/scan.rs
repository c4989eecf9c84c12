use sweepdemod::lineshape::{GyromagneticRatio, ResonanceParams};
use sweepdemod::scan::{run_scan, FieldImage, ScanConfig};
use sweepdemod::simulator::SweepConfig;

fn probe(r0: f64) -> ResonanceParams {
    ResonanceParams::new(2.87e9, 5e6, 0.15, r0).unwrap()
}

fn flat_rms(rate: f64) -> f64 {
    let p = probe(5e6);
    let g = GyromagneticRatio::ELECTRON;
    let cfg = ScanConfig {
        extent: [20.0 * 50e-9, 20.0 * 50e-9],
        pitch: 50e-9,
        rate,
        t_int: 1.0 / rate,
        seed: 8,
        ..Default::default()
    };
    let sweep = SweepConfig::new(p.f0 + g.field_to_shift(cfg.bias), 30e6, 1e3).unwrap();
    let img = run_scan(&cfg, &p, &sweep, &|_, _| 0.0).unwrap();
    let n = img.pixels.len() as f64;
    (img.pixels.iter().map(|px| (px.b - cfg.bias).powi(2)).sum::<f64>() / n).sqrt()
}

#[test]
fn pixel_noise_scales_with_rate() {
    let ratio = flat_rms(100.0) / flat_rms(2.0);
    assert!((ratio / 50f64.sqrt() - 1.0).abs() < 0.15, "ratio {ratio}");
}

#[test]
fn untracked_scan_fails_exactly_beyond_the_window() {
    let p = probe(5e7);
    let g = GyromagneticRatio::ELECTRON;
    let half = g.shift_to_field(15e6);
    let cfg = ScanConfig {
        extent: [60.0 * 50e-9, 4.0 * 50e-9],
        pitch: 50e-9,
        bias: 0.0,
        seed: 2,
        ..Default::default()
    };
    let sweep = SweepConfig::new(p.f0, 30e6, 1e3).unwrap();
    // Linear in x from −2·half to +2·half.
    let map = move |x: f64, _y: f64| half * (4.0 * x / (59.0 * 50e-9) - 2.0);
    let img: FieldImage = run_scan(&cfg, &p, &sweep, &map).unwrap();
    for j in 0..img.ny {
        for i in 0..img.nx {
            let truth = map(img.x(i), img.y(j));
            let px = img.at(i, j);
            let faithful = px.lock && (px.b - truth).abs() < 40e-6;
            assert!(px.b.abs() <= half * (1.0 + 1e-12));
            if truth.abs() <= 0.4 * half {
                assert!(faithful, "pixel ({i},{j}) at {truth} T: {px:?}");
            }
            if truth.abs() > half + 40e-6 {
                assert!(!faithful, "pixel ({i},{j}) at {truth} T reported {px:?}");
            }
        }
    }
    assert!(img.unlocked() > 0);
}
