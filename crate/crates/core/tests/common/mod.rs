#![allow(dead_code)]

use num_complex::Complex64;
use orca_core::detection::{
    extract_efficiencies, synthesize_histogram, Acquisition, DetectionChain, Efficiencies,
    NoiseLevel, Windows,
};
use orca_core::pulse::{SampledEnvelope, SignalEnvelope};

/// Storage time used by the analytic generator; long enough that the
/// read-in and read-out windows do not overlap.
pub const GEN_STORAGE: f64 = 1.5e-9;

fn pulse(mu: f64, center: f64) -> Vec<Complex64> {
    let s = SignalEnvelope {
        mu_in: mu,
        center_time: center,
        ..Default::default()
    };
    let e = SampledEnvelope::from_signal(&s, -1.5e-9, 0.5e-12, 8000);
    e.values
}

/// Control-off input and memory-run envelopes for known efficiencies:
/// the unabsorbed part keeps the input shape, the retrieved pulse has the
/// same shape delayed by the storage time.
pub fn generator(mu: f64, eta_in: f64, eta_out: f64) -> (SampledEnvelope, SampledEnvelope) {
    let input = pulse(mu, 0.0);
    let late = pulse(mu * eta_in * eta_out, GEN_STORAGE);
    let memory = input
        .iter()
        .zip(&late)
        .map(|(a, b)| a * (1.0 - eta_in).sqrt() + b)
        .collect();
    let env = |values| SampledEnvelope {
        t0: -1.5e-9,
        dt: 0.5e-12,
        values,
    };
    (env(input), env(memory))
}

pub fn acquisition(seed: u64, stream: u64, time: f64) -> Acquisition {
    Acquisition {
        start: -1e-9,
        stop: 2e-9,
        acquisition_time: time,
        repetition_rate: 1e7,
        seed,
        stream,
    }
}

pub fn gen_windows() -> Windows {
    Windows {
        read_in_center: 0.0,
        read_out_center: GEN_STORAGE,
        width: 500e-12,
    }
}

/// Synthesize the three histograms for one seed and analyse them.
pub fn round_trip(
    mu: f64,
    eta_in: f64,
    eta_out: f64,
    noise: NoiseLevel,
    seed: u64,
    time: f64,
) -> Efficiencies {
    let chain = DetectionChain::default();
    let (input, memory) = generator(mu, eta_in, eta_out);
    let empty = SampledEnvelope {
        t0: input.t0,
        dt: input.dt,
        values: Vec::new(),
    };
    let hi = synthesize_histogram(&input, &chain, NoiseLevel::NONE, &acquisition(seed, 0, time)).unwrap();
    let hm = synthesize_histogram(&memory, &chain, noise, &acquisition(seed, 1, time)).unwrap();
    let hn = synthesize_histogram(&empty, &chain, noise, &acquisition(seed, 2, time)).unwrap();
    extract_efficiencies(&hi, &hm, &hn, &chain, &gen_windows()).unwrap()
}
