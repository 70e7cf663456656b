mod common;

use common::{acquisition, round_trip};
use orca_core::detection::{fit_gaussian, synthesize_histogram, DetectionChain, NoiseLevel, FWHM_PER_SIGMA};
use orca_core::pulse::{SampledEnvelope, SignalEnvelope};

const NOISE: NoiseLevel = NoiseLevel {
    per_window: 9e-7,
    window: 500e-12,
};

#[test]
fn estimator_error_shrinks_with_acquisition_time() {
    let mut prev = f64::INFINITY;
    for time in [0.5, 8.0, 128.0] {
        let e = round_trip(0.084, 0.69, 0.3, NOISE, 11, time);
        assert!(e.eta_mem_err < prev);
        assert!((e.eta_mem - 0.69 * 0.3).abs() < 4.0 * e.eta_mem_err, "{e:?}");
        prev = e.eta_mem_err;
    }
    // sixteen-fold exposure: error down by about four
    let a = round_trip(0.084, 0.69, 0.3, NOISE, 5, 8.0).eta_mem_err;
    let b = round_trip(0.084, 0.69, 0.3, NOISE, 5, 128.0).eta_mem_err;
    assert!((a / b - 4.0).abs() < 0.2, "{}", a / b);
}

#[test]
fn mean_over_seeds_is_unbiased() {
    let n = 40;
    let runs: Vec<_> = (0..n).map(|s| round_trip(0.084, 0.5, 0.4, NOISE, 100 + s, 2.0)).collect();
    let mean = runs.iter().map(|e| e.eta_mem).sum::<f64>() / n as f64;
    let se = runs[0].eta_mem_err / (n as f64).sqrt();
    assert!((mean - 0.2).abs() < 4.0 * se, "mean {mean} se {se}");
    let spread = (runs.iter().map(|e| (e.eta_mem - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    // quoted errors describe the scatter
    assert!((spread / runs[0].eta_mem_err - 1.0).abs() < 0.35, "{spread}");
}

#[test]
fn quoted_noise_matches_the_generator() {
    let e = round_trip(0.084, 0.69, 0.3, NOISE, 2, 120.0);
    assert!((e.noise - 9e-7).abs() < 4.0 * e.noise_err, "{e:?}");
    assert!(e.consistent);
}

/// The 1σ interval from the fit covariance contains the true centre in
/// about 68 % of Poisson realisations.
#[test]
fn gaussian_fit_interval_coverage() {
    let s = SignalEnvelope {
        mu_in: 1e-4,
        ..Default::default()
    };
    let env = SampledEnvelope::from_signal(&s, -1.5e-9, 0.5e-12, 8000);
    let chain = DetectionChain {
        bin_width: 10e-12,
        ..Default::default()
    };
    let n = 200;
    let mut inside = 0;
    let mut width_inside = 0;
    let sigma_true = s.fwhm / FWHM_PER_SIGMA;
    for seed in 0..n {
        let h = synthesize_histogram(&env, &chain, NoiseLevel::NONE, &acquisition(seed, 0, 2.0)).unwrap();
        let f = fit_gaussian(&h, (-0.8e-9, 0.8e-9)).unwrap();
        if (f.center - 0.0).abs() <= f.stderr(1) {
            inside += 1;
        }
        if (f.sigma - sigma_true).abs() <= 2.0 * f.stderr(2) {
            width_inside += 1;
        }
    }
    let frac = inside as f64 / n as f64;
    assert!((0.58..=0.78).contains(&frac), "centre coverage {frac}");
    assert!(width_inside as f64 / n as f64 >= 0.88, "width coverage {width_inside}");
}
