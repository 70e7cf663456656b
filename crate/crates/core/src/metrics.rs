//! Figures of merit for a memory under a weak coherent input.
//!
//! Uncertainties are first-order: each output error is the quadrature sum
//! of partial derivatives times input errors, treating inputs as
//! independent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A value with its symmetric standard uncertainty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Measured {
    pub value: f64,
    pub err: f64,
}

impl Measured {
    pub fn new(value: f64, err: f64) -> Self {
        Self { value, err }
    }

    pub fn exact(value: f64) -> Self {
        Self { value, err: 0.0 }
    }
}

fn propagate(partials: &[(f64, f64)]) -> f64 {
    partials
        .iter()
        .map(|(d, e)| (d * e).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Signal-to-noise ratio; `infinite` marks a positive signal over zero noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Snr {
    pub value: f64,
    pub infinite: bool,
}

pub fn snr(signal_out: f64, noise: f64) -> Result<Snr> {
    if !(signal_out >= 0.0 && noise >= 0.0) {
        return Err(Error::Domain(format!(
            "signal ({signal_out}) and noise ({noise}) must be >= 0"
        )));
    }
    if signal_out == 0.0 {
        return Ok(Snr {
            value: 0.0,
            infinite: false,
        });
    }
    if noise == 0.0 {
        return Ok(Snr {
            value: f64::INFINITY,
            infinite: true,
        });
    }
    Ok(Snr {
        value: signal_out / noise,
        infinite: false,
    })
}

/// Input photon number giving unit SNR at the output, μ₁ = N/η_mem.
pub fn mu_one(noise: f64, eta_mem: f64) -> Result<f64> {
    if !(eta_mem > 0.0) {
        return Err(Error::Domain(format!("eta_mem must be positive, got {eta_mem}")));
    }
    if !(noise >= 0.0) {
        return Err(Error::Domain(format!("noise must be >= 0, got {noise}")));
    }
    Ok(noise / eta_mem)
}

/// g²_out = 2/(μ_in/μ₁ + 1) for thermal noise admixed to the retrieved signal.
pub fn g2_out(mu_in: f64, mu1: f64) -> Result<f64> {
    if !(mu_in >= 0.0 && mu1 >= 0.0) || (mu_in == 0.0 && mu1 == 0.0) {
        return Err(Error::Domain(format!(
            "g2 needs mu_in, mu1 >= 0 and not both zero (got {mu_in}, {mu1})"
        )));
    }
    Ok(2.0 * mu1 / (mu_in + mu1))
}

/// F = (μ_in + μ₁)/(μ_in + 2μ₁).
pub fn fidelity(mu_in: f64, mu1: f64) -> Result<f64> {
    if !(mu_in >= 0.0 && mu1 >= 0.0) || mu_in + 2.0 * mu1 <= 0.0 {
        return Err(Error::Domain(format!(
            "fidelity needs mu_in + 2 mu1 > 0 (got {mu_in}, {mu1})"
        )));
    }
    Ok((mu_in + mu1) / (mu_in + 2.0 * mu1))
}

/// End-to-end probability η_mem·η_trans·η_det with propagated uncertainty.
pub fn throughput(eta_mem: Measured, eta_trans: Measured, eta_det: Measured) -> Result<Measured> {
    for (name, m) in [("eta_mem", eta_mem), ("eta_trans", eta_trans), ("eta_det", eta_det)] {
        if !(0.0..=1.0).contains(&m.value) {
            return Err(Error::Domain(format!("{name} must lie in [0, 1], got {}", m.value)));
        }
    }
    let (a, b, c) = (eta_mem.value, eta_trans.value, eta_det.value);
    Ok(Measured::new(
        a * b * c,
        propagate(&[(b * c, eta_mem.err), (a * c, eta_trans.err), (a * b, eta_det.err)]),
    ))
}

/// Quantities the figures are computed from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FigureInputs {
    pub mu_in: Measured,
    /// Noise photons per window at the memory output.
    pub noise: Measured,
    pub eta_mem: Measured,
    pub eta_trans: Measured,
    pub eta_det: Measured,
}

impl Default for FigureInputs {
    fn default() -> Self {
        Self {
            mu_in: Measured::exact(0.084),
            noise: Measured::new(9e-7, 1e-7),
            eta_mem: Measured::exact(0.209),
            eta_trans: Measured::new(0.56, 0.04),
            eta_det: Measured::new(0.80, 0.08),
        }
    }
}

/// Flat, stable JSON record of the memory figures of merit.
///
/// `g2_out_pred` and `fidelity_pred` are predictions for a single-photon
/// input (μ_in = 1); the other entries refer to the measured μ_in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MemoryFigures {
    pub mu_in: f64,
    pub mu_in_err: f64,
    pub n_noise: f64,
    pub n_noise_err: f64,
    pub eta_mem: f64,
    pub eta_mem_err: f64,
    pub snr: f64,
    pub snr_err: f64,
    pub snr_infinite: bool,
    pub mu1: f64,
    pub mu1_err: f64,
    pub g2_out_pred: f64,
    pub g2_out_pred_err: f64,
    pub fidelity_pred: f64,
    pub fidelity_pred_err: f64,
    pub throughput: f64,
    pub throughput_err: f64,
}

impl MemoryFigures {
    pub fn compute(inp: &FigureInputs) -> Result<Self> {
        let (mu, n, eta) = (inp.mu_in, inp.noise, inp.eta_mem);
        let s = snr(eta.value * mu.value, n.value)?;
        let snr_err = if s.infinite || s.value == 0.0 {
            0.0
        } else {
            propagate(&[
                (mu.value / n.value, eta.err),
                (eta.value / n.value, mu.err),
                (-s.value / n.value, n.err),
            ])
        };
        let (mu1, mu1_err) = if eta.value > 0.0 {
            let m = mu_one(n.value, eta.value)?;
            (m, propagate(&[(1.0 / eta.value, n.err), (-m / eta.value, eta.err)]))
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
        let single = 1.0;
        let (g2, g2_err, f, f_err) = if mu1.is_finite() {
            let g2 = g2_out(single, mu1)?;
            let f = fidelity(single, mu1)?;
            let dg = 2.0 * single / (single + mu1).powi(2);
            let df = single / (single + 2.0 * mu1).powi(2);
            (g2, dg * mu1_err, f, df * mu1_err)
        } else {
            (2.0, 0.0, 0.5, 0.0)
        };
        let t = throughput(eta, inp.eta_trans, inp.eta_det)?;
        Ok(Self {
            mu_in: mu.value,
            mu_in_err: mu.err,
            n_noise: n.value,
            n_noise_err: n.err,
            eta_mem: eta.value,
            eta_mem_err: eta.err,
            snr: s.value,
            snr_err,
            snr_infinite: s.infinite,
            mu1,
            mu1_err,
            g2_out_pred: g2,
            g2_out_pred_err: g2_err,
            fidelity_pred: f,
            fidelity_pred_err: f_err,
            throughput: t.value,
            throughput_err: t.err,
        })
    }

    /// JSON object; non-finite values are written as null.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("figures serialise")
    }
}
