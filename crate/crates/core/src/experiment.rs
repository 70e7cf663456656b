//! Pulse sequences, sweeps and the empirical noise model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pulse::{ControlPulse, SignalEnvelope};
use crate::solver::{MemoryModel, MemoryRunResult};

/// Signal plus read-in and read-out controls.
///
/// The read-in control is centred on `control_in.center_time` and the
/// read-out control follows it by `storage_time`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PulseSequence {
    pub signal: SignalEnvelope,
    pub control_in: ControlPulse,
    pub control_out: ControlPulse,
    /// Control centre separation (s).
    pub storage_time: f64,
    pub repetition_rate_signal: f64,
    pub repetition_rate_control: f64,
}

impl Default for PulseSequence {
    fn default() -> Self {
        Self::new(0.57, 3.6, 660e-12)
    }
}

impl PulseSequence {
    /// Default signal with 1 GHz Gaussian controls of the given energies (nJ).
    pub fn new(energy_in: f64, energy_out: f64, storage_time: f64) -> Self {
        Self {
            signal: SignalEnvelope::default(),
            control_in: ControlPulse::gaussian(energy_in, 0.0, 1e9),
            control_out: ControlPulse::gaussian(energy_out, storage_time, 1e9),
            storage_time,
            repetition_rate_signal: 1e7,
            repetition_rate_control: 8e7,
        }
    }

    /// Read-out to read-in energy ratio R.
    pub fn ratio_r(&self) -> f64 {
        self.control_out.energy_nj / self.control_in.energy_nj
    }

    pub fn total_energy(&self) -> f64 {
        self.control_in.energy_nj + self.control_out.energy_nj
    }

    pub fn validate(&self) -> Result<()> {
        self.signal.validate()?;
        self.control_in.validate()?;
        self.control_out.validate()?;
        if !(self.storage_time.is_finite() && self.storage_time >= 0.0) {
            return Err(Error::Config("storage_time must be finite and >= 0".into()));
        }
        let gap = self.control_out.center_time - self.control_in.center_time;
        if (gap - self.storage_time).abs() > 1e-15 + 1e-9 * self.storage_time {
            return Err(Error::Config(format!(
                "control_out is centred {gap:e} s after control_in, storage_time is {:e} s",
                self.storage_time
            )));
        }
        for (name, rate) in [
            ("repetition_rate_signal", self.repetition_rate_signal),
            ("repetition_rate_control", self.repetition_rate_control),
        ] {
            if !(rate.is_finite() && rate > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        Ok(())
    }

    /// Same sequence with the read-out control moved to `storage_time`.
    pub fn with_storage_time(&self, storage_time: f64) -> Self {
        let mut s = self.clone();
        s.storage_time = storage_time;
        s.control_out.center_time = s.control_in.center_time + storage_time;
        s
    }

    pub fn with_energies(&self, energy_in: f64, energy_out: f64) -> Self {
        let mut s = self.clone();
        s.control_in.energy_nj = energy_in;
        s.control_out.energy_nj = energy_out;
        s
    }

    /// Splits `total` as E_in = E/(1+R), E_out = E·R/(1+R).
    pub fn with_total_energy(&self, total: f64, ratio_r: f64) -> Self {
        let e_in = total / (1.0 + ratio_r);
        self.with_energies(e_in, total - e_in)
    }

    /// Shots per second used to convert acquisition time into trials.
    pub fn trials(&self, acquisition_time: f64) -> u64 {
        (acquisition_time * self.repetition_rate_signal).floor() as u64
    }
}

pub fn run_sequence(model: &MemoryModel, seq: &PulseSequence) -> Result<MemoryRunResult> {
    seq.validate()?;
    model.run_memory(&seq.signal, &seq.control_in, &seq.control_out, seq.storage_time)
}

/// Affine noise model N(E) = n0 + n1·E per detection window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseModel {
    /// Control-independent floor (photons per window).
    pub n0: f64,
    /// Photons per window per nJ of total control energy.
    pub n1: f64,
    /// Integration window the counts refer to (s).
    pub window: f64,
}

/// Total control energy of the reference operating point (nJ).
const NOISE_REFERENCE_ENERGY: f64 = 0.57 + 3.6;
const NOISE_REFERENCE_LEVEL: f64 = 9e-7;

impl Default for NoiseModel {
    fn default() -> Self {
        let n0 = 5e-7;
        Self {
            n0,
            n1: (NOISE_REFERENCE_LEVEL - n0) / NOISE_REFERENCE_ENERGY,
            window: 500e-12,
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.n0.is_finite() && self.n0 >= 0.0 && self.n1.is_finite() && self.n1 >= 0.0) {
            return Err(Error::Config("noise n0 and n1 must be finite and >= 0".into()));
        }
        if !(self.window.is_finite() && self.window > 0.0) {
            return Err(Error::Config("noise window must be positive".into()));
        }
        Ok(())
    }

    /// Expected noise photons in one window at total control energy `energy_nj`.
    pub fn per_window(&self, energy_nj: f64) -> f64 {
        self.n0 + self.n1 * energy_nj
    }
}

/// Expected noise photons summed over `n_trials` windows.
pub fn noise_counts(model: &NoiseModel, control_total_energy: f64, n_trials: u64) -> Result<f64> {
    model.validate()?;
    if n_trials == 0 {
        return Err(Error::Config("n_trials must be >= 1".into()));
    }
    if !(control_total_energy.is_finite() && control_total_energy >= 0.0) {
        return Err(Error::Config("control energy must be finite and >= 0".into()));
    }
    Ok(model.per_window(control_total_energy) * n_trials as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoragePoint {
    pub storage_time: f64,
    pub eta_read_in: f64,
    pub eta_read_out: f64,
    pub eta_mem: f64,
}

/// Gaussian decay η(T) = A·exp(−(T − T₀)²/τ²) of the read-out efficiency.
///
/// `lifetime` is the 1/e time τ; it is infinite when the data show no
/// decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifetimeFit {
    pub amplitude: f64,
    pub center: f64,
    pub lifetime: f64,
    pub lifetime_err: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StorageSweep {
    pub points: Vec<StoragePoint>,
    pub fit: Option<LifetimeFit>,
}

/// Runs `f` over `items` in parallel and returns the results in input order.
fn ordered<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    items.par_iter().map(f).collect()
}

/// One solver run per storage time; failures stay in their slot.
pub fn storage_time_points(
    model: &MemoryModel,
    base: &PulseSequence,
    times: &[f64],
) -> Vec<Result<StoragePoint>> {
    ordered(times, |&t| {
        if !(t.is_finite() && t >= 0.0) {
            return Err(Error::Config(format!("storage time {t:e} s must be >= 0")));
        }
        let r = run_sequence(model, &base.with_storage_time(t))
            .map_err(|e| e.context(format_args!("storage time {t:e} s")))?;
        Ok(StoragePoint {
            storage_time: t,
            eta_read_in: r.eta_read_in,
            eta_read_out: r.eta_read_out,
            eta_mem: r.eta_mem,
        })
    })
}

/// Read-out efficiency against storage time with its Gaussian lifetime fit.
pub fn storage_time_sweep(
    model: &MemoryModel,
    base: &PulseSequence,
    times: &[f64],
) -> Result<StorageSweep> {
    if times.is_empty() {
        return Err(Error::Config("storage-time sweep needs at least one time".into()));
    }
    let points = storage_time_points(model, base, times)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let fit = lifetime_fit(base, &points).ok();
    Ok(StorageSweep { points, fit })
}

/// Gaussian lifetime of the read-out efficiency over `points`.
///
/// While the controls overlap the read-out also depends on how much of the
/// read-in pulse has passed, so only separated pulses enter the fit
/// whenever three or more of them exist.
pub fn lifetime_fit(base: &PulseSequence, points: &[StoragePoint]) -> Result<LifetimeFit> {
    let separation = base.control_in.duration() + base.control_out.duration();
    let mut used: Vec<&StoragePoint> =
        points.iter().filter(|p| p.storage_time >= separation).collect();
    if used.len() < 3 {
        used = points.iter().collect();
    }
    let t: Vec<f64> = used.iter().map(|p| p.storage_time).collect();
    let eta: Vec<f64> = used.iter().map(|p| p.eta_read_out).collect();
    fit_gaussian_decay(&t, &eta)
}

/// Fits ln η = a₀ + a₁T + a₂T², i.e. a Gaussian in T, by weighted least squares.
///
/// Weights η² make the residuals match those of a direct fit of η near
/// the solution. Requires three or more points with η > 0.
pub fn fit_gaussian_decay(times: &[f64], eta: &[f64]) -> Result<LifetimeFit> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(eta)
        .filter(|(t, e)| t.is_finite() && e.is_finite() && **e > 0.0)
        .map(|(t, e)| (*t, *e))
        .collect();
    if pts.len() < 3 {
        return Err(Error::Fit("lifetime fit needs >= 3 points with positive efficiency".into()));
    }
    // Centre and scale T for conditioning.
    let mean = pts.iter().map(|p| p.0).sum::<f64>() / pts.len() as f64;
    let scale = pts.iter().map(|p| (p.0 - mean).abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Err(Error::Fit("lifetime fit needs distinct storage times".into()));
    }
    let mut ata = nalgebra::Matrix3::<f64>::zeros();
    let mut atb = nalgebra::Vector3::<f64>::zeros();
    for &(t, e) in &pts {
        let x = (t - mean) / scale;
        let row = nalgebra::Vector3::new(1.0, x, x * x);
        let w = e * e;
        ata += row * row.transpose() * w;
        atb += row * (w * e.ln());
    }
    let cov = ata
        .try_inverse()
        .ok_or_else(|| Error::Fit("singular lifetime fit".into()))?;
    let a = cov * atb;
    let dof = pts.len().saturating_sub(3).max(1) as f64;
    let chi2: f64 = pts
        .iter()
        .map(|&(t, e)| {
            let x = (t - mean) / scale;
            e * e * (e.ln() - a[0] - a[1] * x - a[2] * x * x).powi(2)
        })
        .sum();
    let var_a2 = cov[(2, 2)] * chi2 / dof;
    // Physical curvature c = −a₂/scale², τ = 1/sqrt(c).
    let c = -a[2] / (scale * scale);
    if !(c > 0.0) {
        return Ok(LifetimeFit {
            amplitude: pts.iter().map(|p| p.1).fold(0.0, f64::max),
            center: f64::NAN,
            lifetime: f64::INFINITY,
            lifetime_err: f64::INFINITY,
        });
    }
    let center_x = -a[1] / (2.0 * a[2]);
    let lifetime = 1.0 / c.sqrt();
    Ok(LifetimeFit {
        amplitude: (a[0] - a[1] * a[1] / (4.0 * a[2])).exp(),
        center: mean + center_x * scale,
        lifetime,
        lifetime_err: 0.5 * lifetime * var_a2.sqrt() / a[2].abs(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyPoint {
    pub total_energy: f64,
    pub energy_in: f64,
    pub energy_out: f64,
    pub eta_read_in: f64,
    pub eta_read_out: f64,
    pub eta_mem: f64,
}

/// One solver run per total control energy at fixed R; failures stay in their slot.
pub fn energy_points(
    model: &MemoryModel,
    base: &PulseSequence,
    total_energies: &[f64],
    ratio_r: f64,
) -> Vec<Result<EnergyPoint>> {
    ordered(total_energies, |&e| {
        if !(e.is_finite() && e >= 0.0) {
            return Err(Error::Config(format!("total energy {e} nJ must be >= 0")));
        }
        if !(ratio_r.is_finite() && ratio_r > 0.0) {
            return Err(Error::Config(format!("ratio R must be positive, got {ratio_r}")));
        }
        let seq = base.with_total_energy(e, ratio_r);
        let r = run_sequence(model, &seq).map_err(|err| err.context(format_args!("energy {e} nJ")))?;
        Ok(EnergyPoint {
            total_energy: e,
            energy_in: seq.control_in.energy_nj,
            energy_out: seq.control_out.energy_nj,
            eta_read_in: r.eta_read_in,
            eta_read_out: r.eta_read_out,
            eta_mem: r.eta_mem,
        })
    })
}

pub fn energy_sweep(
    model: &MemoryModel,
    base: &PulseSequence,
    total_energies: &[f64],
    ratio_r: f64,
) -> Result<Vec<EnergyPoint>> {
    energy_points(model, base, total_energies, ratio_r)
        .into_iter()
        .collect()
}

/// Expected photons per window for one mean input photon number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonNumberRow {
    pub mu_in: f64,
    pub input: f64,
    pub memory: f64,
    pub noise: f64,
}

/// Input, retrieved and noise photons per window against μ_in.
///
/// The signal equation is linear, so a single solver run fixes η_mem for
/// every μ_in.
pub fn photon_number_series(
    model: &MemoryModel,
    base: &PulseSequence,
    noise: &NoiseModel,
    mu_values: &[f64],
) -> Result<Vec<PhotonNumberRow>> {
    noise.validate()?;
    if let Some(bad) = mu_values.iter().find(|m| !(m.is_finite() && **m >= 0.0)) {
        return Err(Error::Config(format!("mu_in {bad} must be >= 0")));
    }
    if mu_values.is_empty() {
        return Ok(Vec::new());
    }
    let mut seq = base.clone();
    if seq.signal.mu_in == 0.0 {
        seq.signal.mu_in = 1.0;
    }
    let eta_mem = run_sequence(model, &seq)?.eta_mem;
    let n = noise.per_window(base.total_energy());
    Ok(mu_values
        .iter()
        .map(|&mu| PhotonNumberRow {
            mu_in: mu,
            input: mu,
            memory: eta_mem * mu,
            noise: n,
        })
        .collect())
}
