use approx::assert_relative_eq;
use orca_core::experiment::{fit_gaussian_decay, run_sequence, PulseSequence};
use orca_core::physics::{
    doppler_envelope, doppler_lifetime, spinwave_wavelength, spinwave_wavevector,
    thermal_velocity_sigma, HyperfinePathwaySet, LadderScheme, VaporEnsemble,
};
use orca_core::pulse::{ControlPulse, SignalEnvelope};
use orca_core::solver::{MemoryModel, SolverConfig};
use proptest::prelude::*;

const KB: f64 = 1.380_649e-23;
const AMU: f64 = 1.660_539_066_6e-27;

#[test]
fn spin_wave_wavelength_from_wavenumbers() {
    // counter-propagating beams: the spin wave carries k_s - k_c
    let expected = 1.0 / (1.0 / 780.3e-9 - 1.0 / 1529.3e-9);
    let s = LadderScheme::default();
    assert_relative_eq!(spinwave_wavelength(&s), expected, max_relative = 1e-9);
    assert_relative_eq!(spinwave_wavelength(&s), 1.593e-6, max_relative = 1e-3);
    assert_relative_eq!(
        spinwave_wavevector(&s).abs(),
        std::f64::consts::TAU / expected,
        max_relative = 1e-9
    );
}

#[test]
fn thermal_spread_of_rb87() {
    let sigma = (KB * 393.15 / (86.909_180 * AMU)).sqrt();
    let got = thermal_velocity_sigma(&VaporEnsemble::default()).unwrap();
    assert_relative_eq!(got, sigma, max_relative = 1e-4);
    assert_relative_eq!(got, 193.9, max_relative = 1e-3);
}

#[test]
fn doppler_lifetime_value() {
    let s = LadderScheme::default();
    let sigma = thermal_velocity_sigma(&VaporEnsemble::default()).unwrap();
    let tau = doppler_lifetime(spinwave_wavevector(&s), sigma);
    assert_relative_eq!(tau, 1.307e-9, max_relative = 2e-3);
}

proptest! {
    #[test]
    fn doppler_envelope_decays(t in 0.0f64..5e-9, dt in 1e-12f64..1e-9) {
        let p = HyperfinePathwaySet::trivial();
        let a = doppler_envelope(-3.944e6, 193.9, t, &p).unwrap().norm_sqr();
        let b = doppler_envelope(-3.944e6, 193.9, t + dt, &p).unwrap().norm_sqr();
        prop_assert!(b < a);
        prop_assert!(a <= 1.0);
        let tau = doppler_lifetime(-3.944e6, 193.9);
        prop_assert!((a - (-(t / tau).powi(2)).exp()).abs() < 1e-12);
    }
}

/// With the Stark shift off and pulses much shorter than the Doppler time,
/// storage multiplies the retrieved light by |A(T - d)|², where the small
/// offset d reflects where in each control pulse the exchange happens. An
/// offset does not change the curvature of ln η(T), so the fitted Gaussian
/// lifetime is the Doppler one.
#[test]
fn short_pulse_readout_has_doppler_lifetime() {
    let cfg = SolverConfig {
        include_stark: false,
        include_decay: false,
        ..Default::default()
    };
    let model = MemoryModel {
        cfg,
        ..Default::default()
    };
    let seq = |t: f64| PulseSequence {
        signal: SignalEnvelope {
            fwhm: 35e-12,
            ..Default::default()
        },
        control_in: ControlPulse::gaussian(0.57, 0.0, 10e9),
        control_out: ControlPulse::gaussian(3.6, t, 10e9),
        storage_time: t,
        ..Default::default()
    };
    let times = [0.2e-9, 0.5e-9, 0.8e-9, 1.1e-9, 1.4e-9];
    let eta: Vec<f64> = times
        .iter()
        .map(|&t| run_sequence(&model, &seq(t)).unwrap().eta_read_out)
        .collect();
    let fit = fit_gaussian_decay(&times, &eta).unwrap();
    let s = LadderScheme::default();
    let sigma = thermal_velocity_sigma(&VaporEnsemble::default()).unwrap();
    let tau = doppler_lifetime(spinwave_wavevector(&s), sigma);
    assert_relative_eq!(fit.lifetime, tau, max_relative = 0.02);
    assert!(fit.center.abs() < 0.1e-9, "offset {}", fit.center);
}
