//! Atomic, thermal and geometric quantities of the ladder ensemble.
//!
//! Everything here is a pure function of immutable inputs. The default
//! values describe the telecom ORCA ladder in ⁸⁷Rb: a 780.3 nm control on
//! the lower transition and a 1529.3 nm signal on the upper transition,
//! both detuned by 6 GHz from the intermediate 5P₃/₂ manifold, with the
//! 4D₅/₂ level as the storage state.

use std::f64::consts::{PI, TAU};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Boltzmann constant (J/K), CODATA 2018 exact.
pub const BOLTZMANN: f64 = 1.380_649e-23;
/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Mass of a ⁸⁷Rb atom (kg).
pub const RB87_MASS: f64 = 1.443_160_648e-25;
/// Melting point of rubidium (K).
pub const RB_MELTING_POINT: f64 = 312.46;
/// One torr in pascal.
pub const TORR: f64 = 101_325.0 / 760.0;

/// Temperature range over which the vapour-pressure correlation is trusted.
pub const VAPOR_PRESSURE_RANGE: (f64, f64) = (250.0, 550.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    #[default]
    CounterPropagating,
    CoPropagating,
}

/// The g → e → s ladder driven by a control on g–e and the signal on e–s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LadderScheme {
    /// Signal wavelength (m).
    pub lambda_signal: f64,
    /// Control wavelength (m).
    pub lambda_control: f64,
    /// Detuning from the intermediate state (rad/s).
    pub delta_intermediate: f64,
    /// Intermediate-state decay rate (rad/s). Only enters through adiabatic elimination.
    pub gamma_e: f64,
    /// Natural lifetime of the storage state (s).
    pub tau_storage: f64,
    pub geometry: Geometry,
}

impl Default for LadderScheme {
    fn default() -> Self {
        Self {
            lambda_signal: 1529.3e-9,
            lambda_control: 780.3e-9,
            delta_intermediate: TAU * 6.0e9,
            gamma_e: TAU * 6.065e6,
            tau_storage: 90e-9,
            geometry: Geometry::CounterPropagating,
        }
    }
}

impl LadderScheme {
    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.lambda_signal,
            self.lambda_control,
            self.delta_intermediate,
            self.gamma_e,
            self.tau_storage,
        ]
        .iter()
        .all(|x| x.is_finite());
        if !finite {
            return Err(Error::Config("ladder scheme contains non-finite values".into()));
        }
        if self.lambda_signal <= 0.0 || self.lambda_control <= 0.0 {
            return Err(Error::Config("wavelengths must be positive".into()));
        }
        if self.delta_intermediate == 0.0 {
            return Err(Error::Config(
                "intermediate detuning must be non-zero for the far-detuned model".into(),
            ));
        }
        if self.tau_storage <= 0.0 {
            return Err(Error::Config("storage lifetime must be positive".into()));
        }
        if self.gamma_e < 0.0 {
            return Err(Error::Config("intermediate decay rate must be non-negative".into()));
        }
        Ok(())
    }

    /// Signal wavenumber 2π/λ_s (rad/m).
    pub fn k_signal(&self) -> f64 {
        TAU / self.lambda_signal
    }

    /// Control wavenumber 2π/λ_c (rad/m).
    pub fn k_control(&self) -> f64 {
        TAU / self.lambda_control
    }

    /// Storage-state amplitude decay rate 1/(2τ) (1/s).
    pub fn storage_decay_rate(&self) -> f64 {
        0.5 / self.tau_storage
    }
}

/// Net wavevector of the stored spin wave along the signal axis (rad/m).
///
/// Counter-propagating beams give `k_s − k_c`, co-propagating beams give
/// `k_s + k_c`, so the sign flips with the geometry for the default scheme
/// and `2π/|Δk|` is the spatial period of the excitation.
pub fn spinwave_wavevector(scheme: &LadderScheme) -> f64 {
    let ks = scheme.k_signal();
    let kc = scheme.k_control();
    match scheme.geometry {
        Geometry::CounterPropagating => ks - kc,
        Geometry::CoPropagating => ks + kc,
    }
}

/// Spatial period of the spin wave (m); infinite when the wavevectors cancel.
pub fn spinwave_wavelength(scheme: &LadderScheme) -> f64 {
    let dk = spinwave_wavevector(scheme);
    if dk == 0.0 {
        f64::INFINITY
    } else {
        TAU / dk.abs()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaporEnsemble {
    /// Cell length (m).
    pub cell_length: f64,
    /// Cell temperature (K).
    pub temperature: f64,
    pub isotope_fraction_87: f64,
    /// Atomic mass (kg).
    pub atomic_mass: f64,
}

impl Default for VaporEnsemble {
    fn default() -> Self {
        Self {
            cell_length: 0.08,
            temperature: 393.15,
            isotope_fraction_87: 0.969,
            atomic_mass: RB87_MASS,
        }
    }
}

impl VaporEnsemble {
    pub fn validate(&self) -> Result<()> {
        if !(self.cell_length.is_finite() && self.cell_length > 0.0) {
            return Err(Error::Config("cell_length must be positive".into()));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.isotope_fraction_87) {
            return Err(Error::Config("isotope_fraction_87 must lie in [0, 1]".into()));
        }
        if !(self.atomic_mass.is_finite() && self.atomic_mass > 0.0) {
            return Err(Error::Config("atomic_mass must be positive".into()));
        }
        Ok(())
    }
}

/// One-dimensional rms thermal velocity sqrt(k_B T / m) (m/s).
pub fn thermal_velocity_sigma(ensemble: &VaporEnsemble) -> Result<f64> {
    if !(ensemble.temperature > 0.0) {
        return Err(Error::Domain(format!(
            "temperature must be positive, got {} K",
            ensemble.temperature
        )));
    }
    if !(ensemble.atomic_mass > 0.0) {
        return Err(Error::Domain("atomic mass must be positive".into()));
    }
    Ok((BOLTZMANN * ensemble.temperature / ensemble.atomic_mass).sqrt())
}

/// Discrete velocity classes approximating the Maxwell–Boltzmann distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGrid {
    pub velocities: Vec<f64>,
    pub weights: Vec<f64>,
}

impl VelocityGrid {
    pub fn len(&self) -> usize {
        self.velocities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.velocities.is_empty()
    }

    /// A single stationary class, used when Doppler dephasing is switched off.
    pub fn stationary() -> Self {
        Self {
            velocities: vec![0.0],
            weights: vec![1.0],
        }
    }

    /// Weighted sum Σ w g(v).
    pub fn expectation<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        self.velocities
            .iter()
            .zip(&self.weights)
            .map(|(&v, &w)| w * g(v))
            .sum()
    }

    /// Σ w e^{i dk v t}: the velocity-averaged phase factor of the spin wave.
    pub fn coherence(&self, dk: f64, t: f64) -> Complex64 {
        self.velocities
            .iter()
            .zip(&self.weights)
            .map(|(&v, &w)| Complex64::from_polar(w, dk * v * t))
            .sum()
    }
}

/// Gauss–Hermite nodes and weights for ∫ f(x) e^{−x²} dx.
///
/// Newton iteration on the normalised Hermite recurrence, seeded with the
/// usual asymptotic guesses. Nodes are returned in descending order.
pub(crate) fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    const MAX_ITER: usize = 100;
    let pim4 = PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..MAX_ITER {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        if n % 2 == 1 && i == m - 1 {
            z = 0.0;
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Gauss–Hermite discretisation of the 1D Maxwell–Boltzmann distribution.
///
/// `n_points` must be odd and at least 3 so the zero-velocity class is a node.
pub fn build_velocity_grid(ensemble: &VaporEnsemble, n_points: usize) -> Result<VelocityGrid> {
    if n_points < 3 || n_points % 2 == 0 {
        return Err(Error::Config(format!(
            "velocity grid needs an odd number of points >= 3, got {n_points}"
        )));
    }
    let sigma = thermal_velocity_sigma(ensemble)?;
    let (x, w) = gauss_hermite(n_points);
    let scale = std::f64::consts::SQRT_2 * sigma;
    let velocities: Vec<f64> = x.iter().map(|&xi| xi * scale).collect();
    let total: f64 = w.iter().sum();
    let weights: Vec<f64> = w.iter().map(|&wi| wi / total).collect();
    Ok(VelocityGrid {
        velocities,
        weights,
    })
}

/// Excitation pathways through distinct hyperfine levels of the storage manifold.
///
/// Each pathway contributes a non-negative amplitude weight and a detuning
/// offset; the weights are rescaled to sum to one so the collective
/// amplitude starts at unity. An empty set is the single trivial pathway.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperfinePathwaySet {
    pub pathways: Vec<Pathway>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pathway {
    /// Detuning offset (rad/s).
    pub detuning_offset: f64,
    pub amplitude_weight: f64,
}

impl HyperfinePathwaySet {
    pub fn trivial() -> Self {
        Self::default()
    }

    /// Builds a normalised set from `(detuning_offset, weight)` pairs.
    pub fn new(pathways: &[(f64, f64)]) -> Result<Self> {
        let set = Self {
            pathways: pathways
                .iter()
                .map(|&(detuning_offset, amplitude_weight)| Pathway {
                    detuning_offset,
                    amplitude_weight,
                })
                .collect(),
        };
        set.normalized()
    }

    pub fn normalized(&self) -> Result<Self> {
        if self.pathways.is_empty() {
            return Ok(Self::trivial());
        }
        for p in &self.pathways {
            if !(p.amplitude_weight.is_finite() && p.amplitude_weight >= 0.0)
                || !p.detuning_offset.is_finite()
            {
                return Err(Error::Config(
                    "pathway weights must be finite and non-negative".into(),
                ));
            }
        }
        let total: f64 = self.pathways.iter().map(|p| p.amplitude_weight).sum();
        if total <= 0.0 {
            return Err(Error::Config("pathway weights sum to zero".into()));
        }
        Ok(Self {
            pathways: self
                .pathways
                .iter()
                .map(|p| Pathway {
                    detuning_offset: p.detuning_offset,
                    amplitude_weight: p.amplitude_weight / total,
                })
                .collect(),
        })
    }

    /// `(offset, weight)` pairs after normalisation, with the trivial set expanded.
    pub fn components(&self) -> Result<Vec<(f64, f64)>> {
        let norm = self.normalized()?;
        if norm.pathways.is_empty() {
            return Ok(vec![(0.0, 1.0)]);
        }
        Ok(norm
            .pathways
            .iter()
            .map(|p| (p.detuning_offset, p.amplitude_weight))
            .collect())
    }

    /// Σ_p w_p e^{i δ_p t}.
    pub fn beat(&self, t: f64) -> Result<Complex64> {
        Ok(self
            .components()?
            .into_iter()
            .map(|(d, w)| Complex64::from_polar(w, d * t))
            .sum())
    }
}

/// Collective amplitude of the stored excitation after a free evolution time `t`.
///
/// Product of the hyperfine beat and the Gaussian Doppler envelope
/// exp(−(Δk σ_v t)²/2). The retrieval efficiency scales as |A(t)|².
pub fn doppler_envelope(
    dk: f64,
    sigma_v: f64,
    t: f64,
    pathways: &HyperfinePathwaySet,
) -> Result<Complex64> {
    if t < 0.0 {
        return Err(Error::Domain(format!("elapsed time must be >= 0, got {t}")));
    }
    let x = dk * sigma_v * t;
    Ok(pathways.beat(t)? * (-0.5 * x * x).exp())
}

/// 1/e time of |A(t)|² for pure Doppler dephasing: 1/(|Δk| σ_v).
pub fn doppler_lifetime(dk: f64, sigma_v: f64) -> f64 {
    1.0 / (dk.abs() * sigma_v)
}

/// Saturated vapour pressure of rubidium (Pa).
///
/// Extended Antoine correlation
/// log₁₀(P/torr) = A + B/T + C·T + D·log₁₀T with separate solid and liquid
/// coefficient sets joined at the melting point.
pub fn rubidium_vapor_pressure(temperature: f64) -> Result<f64> {
    let (lo, hi) = VAPOR_PRESSURE_RANGE;
    if !(lo..=hi).contains(&temperature) {
        return Err(Error::Domain(format!(
            "temperature {temperature} K outside vapour-pressure correlation range [{lo}, {hi}] K"
        )));
    }
    let t = temperature;
    let log10_torr = if t < RB_MELTING_POINT {
        -94.04826 - 1961.258 / t - 0.03771687 * t + 42.57526 * t.log10()
    } else {
        15.88253 - 4529.635 / t + 0.00058663 * t - 2.99138 * t.log10()
    };
    Ok(10f64.powf(log10_torr) * TORR)
}

/// Number density of rubidium atoms in the saturated vapour (1/m³).
pub fn vapor_number_density(temperature: f64) -> Result<f64> {
    Ok(rubidium_vapor_pressure(temperature)? / (BOLTZMANN * temperature))
}

/// Atoms of all isotopes inside a beam of cross-section `beam_area` spanning the cell.
pub fn vapor_atom_count(ensemble: &VaporEnsemble, beam_area: f64) -> Result<f64> {
    if !(beam_area.is_finite() && beam_area > 0.0) {
        return Err(Error::Domain(format!("beam area must be positive, got {beam_area}")));
    }
    Ok(vapor_number_density(ensemble.temperature)? * beam_area * ensemble.cell_length)
}
