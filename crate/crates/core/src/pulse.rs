//! Signal and control pulse envelopes.

use std::f64::consts::{LN_2, PI};
use std::sync::OnceLock;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Intensity FWHM time-bandwidth product of a transform-limited Gaussian.
pub const GAUSSIAN_TBP: f64 = 0.441_271_2;

/// Gaussian envelopes are set to exactly zero beyond this many amplitude sigmas.
const SUPPORT_SIGMAS: f64 = 5.0;

fn fwhm_to_sigma(fwhm: f64) -> f64 {
    fwhm / (2.0 * (2.0 * LN_2).sqrt())
}

/// Weak coherent input pulse with a Gaussian intensity profile.
///
/// The amplitude is normalised so that ∫|E(t)|² dt equals the mean photon
/// number `mu_in`; `phase` is a global phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SignalEnvelope {
    pub mu_in: f64,
    /// Intensity FWHM (s).
    pub fwhm: f64,
    /// Centre time (s).
    pub center_time: f64,
    /// Global phase (rad).
    pub phase: f64,
}

impl Default for SignalEnvelope {
    fn default() -> Self {
        Self {
            mu_in: 0.084,
            fwhm: 350e-12,
            center_time: 0.0,
            phase: 0.0,
        }
    }
}

impl SignalEnvelope {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu_in.is_finite() && self.mu_in >= 0.0) {
            return Err(Error::Config("mu_in must be finite and non-negative".into()));
        }
        if !(self.fwhm.is_finite() && self.fwhm > 0.0) {
            return Err(Error::Config("signal fwhm must be positive".into()));
        }
        if !self.center_time.is_finite() || !self.phase.is_finite() {
            return Err(Error::Config("signal centre and phase must be finite".into()));
        }
        Ok(())
    }

    /// Intensity standard deviation (s).
    pub fn sigma(&self) -> f64 {
        fwhm_to_sigma(self.fwhm)
    }

    /// Time interval outside of which the envelope is identically zero.
    pub fn support(&self) -> (f64, f64) {
        let half = SUPPORT_SIGMAS * std::f64::consts::SQRT_2 * self.sigma();
        (self.center_time - half, self.center_time + half)
    }

    /// Field amplitude in sqrt(photons/s).
    pub fn amplitude(&self, t: f64) -> Complex64 {
        let (lo, hi) = self.support();
        if t < lo || t > hi || self.mu_in == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        let s = self.sigma();
        let x = t - self.center_time;
        let a = (self.mu_in / (s * (2.0 * PI).sqrt())).sqrt() * (-x * x / (4.0 * s * s)).exp();
        Complex64::from_polar(a, self.phase)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControlShape {
    /// Transform-limited Gaussian whose intensity FWHM follows from the bandwidth,
    /// optionally with a linear frequency chirp (rad/s²).
    #[default]
    Gaussian,
    ChirpedGaussian { chirp_rate: f64 },
    /// Complex amplitude knots at absolute times, linearly interpolated and
    /// zero outside the table. Only the shape matters; the scale is fixed by
    /// the pulse energy.
    UserTable { times: Vec<f64>, re: Vec<f64>, im: Vec<f64> },
    /// Transform-limited Gaussian multiplied by a real, piecewise-linear
    /// modulation m(t) ≥ 0 with equally spaced `knots` across `span` seconds
    /// centred on the pulse (held constant beyond the end knots). All knots
    /// equal to one reproduce the plain Gaussian exactly.
    Modulated {
        knots: Vec<f64>,
        span: f64,
        #[serde(skip)]
        norm: NormCache,
    },
}

/// Lazily computed energy normalisation; ignored by comparisons.
#[derive(Debug, Clone, Default)]
pub struct NormCache(OnceLock<f64>);

impl PartialEq for NormCache {
    fn eq(&self, _: &Self) -> bool {
        true
    }
}

const MODULATION_QUADRATURE: usize = 4096;

impl ControlShape {
    pub fn modulated(knots: Vec<f64>, span: f64) -> Self {
        ControlShape::Modulated {
            knots,
            span,
            norm: NormCache::default(),
        }
    }
}

/// Piecewise-linear modulation value at offset `x` from the pulse centre.
fn modulation(knots: &[f64], span: f64, x: f64) -> f64 {
    if knots.len() == 1 {
        return knots[0];
    }
    let n = knots.len() - 1;
    let u = ((x / span + 0.5) * n as f64).clamp(0.0, n as f64);
    let k = (u.floor() as usize).min(n - 1);
    let f = u - k as f64;
    knots[k] * (1.0 - f) + knots[k + 1] * f
}

/// A control pulse, described by its energy and temporal mode.
///
/// The squared Rabi frequency integrates to `rabi_area_per_nj · energy_nj`
/// (rad²/s), so ∫|Ω|² dt is linear in the energy for a fixed shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControlPulse {
    /// Pulse energy (nJ).
    pub energy_nj: f64,
    /// Centre time (s).
    pub center_time: f64,
    /// Spectral intensity FWHM (Hz).
    pub bandwidth: f64,
    pub shape: ControlShape,
}

impl Default for ControlPulse {
    fn default() -> Self {
        Self {
            energy_nj: 0.57,
            center_time: 0.0,
            bandwidth: 1e9,
            shape: ControlShape::Gaussian,
        }
    }
}

impl ControlPulse {
    pub fn gaussian(energy_nj: f64, center_time: f64, bandwidth: f64) -> Self {
        Self {
            energy_nj,
            center_time,
            bandwidth,
            shape: ControlShape::Gaussian,
        }
    }

    /// Energy in joules.
    pub fn energy(&self) -> f64 {
        self.energy_nj * 1e-9
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.energy_nj.is_finite() && self.energy_nj >= 0.0) {
            return Err(Error::Config("control energy must be finite and non-negative".into()));
        }
        if !self.center_time.is_finite() {
            return Err(Error::Config("control centre must be finite".into()));
        }
        match &self.shape {
            ControlShape::Gaussian | ControlShape::ChirpedGaussian { .. } => {
                if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
                    return Err(Error::Config("control bandwidth must be positive".into()));
                }
                if let ControlShape::ChirpedGaussian { chirp_rate } = self.shape {
                    if !chirp_rate.is_finite() {
                        return Err(Error::Config("chirp rate must be finite".into()));
                    }
                }
            }
            ControlShape::Modulated { knots, span, .. } => {
                if !(self.bandwidth.is_finite() && self.bandwidth > 0.0) {
                    return Err(Error::Config("control bandwidth must be positive".into()));
                }
                if knots.is_empty() || knots.iter().any(|k| !(k.is_finite() && *k >= 0.0)) {
                    return Err(Error::Config(
                        "modulation knots must be finite, non-negative and non-empty".into(),
                    ));
                }
                if !(span.is_finite() && *span > 0.0) {
                    return Err(Error::Config("modulation span must be positive".into()));
                }
                if self.energy_nj > 0.0 && self.modulation_norm() <= 0.0 {
                    return Err(Error::Config(
                        "modulation vanishes on the pulse but energy is positive".into(),
                    ));
                }
            }
            ControlShape::UserTable { times, re, im } => {
                if times.len() < 2 || times.len() != re.len() || times.len() != im.len() {
                    return Err(Error::Config(
                        "control table needs >= 2 rows with matching columns".into(),
                    ));
                }
                if times.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::Config("control table times must increase".into()));
                }
                if re.iter().chain(im).chain(times).any(|x| !x.is_finite()) {
                    return Err(Error::Config("control table contains non-finite values".into()));
                }
                if self.energy_nj > 0.0 && table_norm(times, re, im) <= 0.0 {
                    return Err(Error::Config(
                        "control table is identically zero but energy is positive".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Intensity FWHM duration (s).
    pub fn duration(&self) -> f64 {
        match &self.shape {
            ControlShape::Gaussian
            | ControlShape::ChirpedGaussian { .. }
            | ControlShape::Modulated { .. } => GAUSSIAN_TBP / self.bandwidth,
            ControlShape::UserTable { times, re, im } => {
                // Width of the region above half the peak intensity.
                let peak = re
                    .iter()
                    .zip(im)
                    .map(|(r, i)| r * r + i * i)
                    .fold(0.0, f64::max);
                let above: Vec<f64> = times
                    .iter()
                    .zip(re.iter().zip(im))
                    .filter(|(_, (r, i))| *r * *r + *i * *i >= 0.5 * peak)
                    .map(|(t, _)| *t)
                    .collect();
                match (above.first(), above.last()) {
                    (Some(a), Some(b)) if b > a => b - a,
                    _ => times[times.len() - 1] - times[0],
                }
            }
        }
    }

    /// Interval outside of which Ω(t) is identically zero.
    pub fn support(&self) -> (f64, f64) {
        match &self.shape {
            ControlShape::Gaussian
            | ControlShape::ChirpedGaussian { .. }
            | ControlShape::Modulated { .. } => {
                let sigma = fwhm_to_sigma(self.duration());
                let half = SUPPORT_SIGMAS * std::f64::consts::SQRT_2 * sigma;
                (self.center_time - half, self.center_time + half)
            }
            ControlShape::UserTable { times, .. } => (times[0], times[times.len() - 1]),
        }
    }

    /// Rabi frequency Ω(t) in rad/s.
    pub fn rabi(&self, t: f64, rabi_area_per_nj: f64) -> Complex64 {
        let zero = Complex64::new(0.0, 0.0);
        if self.energy_nj == 0.0 {
            return zero;
        }
        let (lo, hi) = self.support();
        if t < lo || t > hi {
            return zero;
        }
        let area = rabi_area_per_nj * self.energy_nj;
        match &self.shape {
            ControlShape::Gaussian | ControlShape::ChirpedGaussian { .. } => {
                let s = fwhm_to_sigma(self.duration());
                let x = t - self.center_time;
                let peak_sq = area / (s * (2.0 * PI).sqrt());
                let a = peak_sq.sqrt() * (-x * x / (4.0 * s * s)).exp();
                let phase = match self.shape {
                    ControlShape::ChirpedGaussian { chirp_rate } => 0.5 * chirp_rate * x * x,
                    _ => 0.0,
                };
                Complex64::from_polar(a, phase)
            }
            ControlShape::Modulated { knots, span, .. } => {
                let norm = self.modulation_norm();
                if norm <= 0.0 {
                    return zero;
                }
                let s = fwhm_to_sigma(self.duration());
                let x = t - self.center_time;
                let peak_sq = area / (s * (2.0 * PI).sqrt());
                let a = peak_sq.sqrt() * (-x * x / (4.0 * s * s)).exp();
                Complex64::new(a * modulation(knots, *span, x) / norm.sqrt(), 0.0)
            }
            ControlShape::UserTable { times, re, im } => {
                let norm = table_norm(times, re, im);
                if norm <= 0.0 {
                    return zero;
                }
                let k = match times.partition_point(|&x| x <= t) {
                    0 => 0,
                    p if p >= times.len() => times.len() - 2,
                    p => p - 1,
                };
                let f = (t - times[k]) / (times[k + 1] - times[k]);
                let a = Complex64::new(re[k], im[k]);
                let b = Complex64::new(re[k + 1], im[k + 1]);
                (a + (b - a) * f) * (area / norm).sqrt()
            }
        }
    }

    /// Peak |Ω|² (rad²/s²).
    pub fn peak_rabi_sq(&self, rabi_area_per_nj: f64) -> f64 {
        match &self.shape {
            ControlShape::Gaussian | ControlShape::ChirpedGaussian { .. } => {
                let s = fwhm_to_sigma(self.duration());
                rabi_area_per_nj * self.energy_nj / (s * (2.0 * PI).sqrt())
            }
            ControlShape::UserTable { times, .. } => times
                .iter()
                .map(|&t| self.rabi(t, rabi_area_per_nj).norm_sqr())
                .fold(0.0, f64::max),
            ControlShape::Modulated { knots, span, .. } => {
                // Extrema of Gaussian × piecewise-linear lie between knots; sample densely.
                let (lo, hi) = self.support();
                let n = 64 * knots.len().max(8);
                let mut best = 0.0_f64;
                for i in 0..=n {
                    let t = lo + (hi - lo) * i as f64 / n as f64;
                    best = best.max(self.rabi(t, rabi_area_per_nj).norm_sqr());
                }
                for k in 0..knots.len() {
                    let t = self.center_time
                        + span * (k as f64 / (knots.len().max(2) - 1) as f64 - 0.5);
                    best = best.max(self.rabi(t, rabi_area_per_nj).norm_sqr());
                }
                best
            }
        }
    }

    /// ∫g²m² / ∫g² for a modulated Gaussian g; one for every other shape.
    ///
    /// Both integrals use the same midpoint rule, so a unit modulation gives
    /// exactly one.
    fn modulation_norm(&self) -> f64 {
        let ControlShape::Modulated { knots, span, norm } = &self.shape else {
            return 1.0;
        };
        *norm.0.get_or_init(|| {
            let s = fwhm_to_sigma(GAUSSIAN_TBP / self.bandwidth);
            let half = SUPPORT_SIGMAS * std::f64::consts::SQRT_2 * s;
            let h = 2.0 * half / MODULATION_QUADRATURE as f64;
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..MODULATION_QUADRATURE {
                let x = -half + (i as f64 + 0.5) * h;
                let g2 = (-x * x / (2.0 * s * s)).exp();
                let m = modulation(knots, *span, x);
                num += g2 * (m * m);
                den += g2;
            }
            num / den
        })
    }
}

/// Exact ∫|Ω|² dt of the linearly interpolated table.
fn table_norm(times: &[f64], re: &[f64], im: &[f64]) -> f64 {
    (0..times.len() - 1)
        .map(|k| {
            let a = Complex64::new(re[k], im[k]);
            let b = Complex64::new(re[k + 1], im[k + 1]);
            (times[k + 1] - times[k]) / 3.0 * (a.norm_sqr() + (a * b.conj()).re + b.norm_sqr())
        })
        .sum()
}

/// A field envelope sampled on a uniform time grid.
///
/// Samples sit at the cell midpoints of the solver grid, so the photon
/// number is the midpoint sum Σ|E|² dt.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SampledEnvelope {
    pub t0: f64,
    pub dt: f64,
    pub values: Vec<Complex64>,
}

impl SampledEnvelope {
    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.values.len()).map(|i| self.time(i))
    }

    pub fn photon_number(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum::<f64>() * self.dt
    }

    /// Photon flux |E|² at time `t`, linearly interpolated, zero outside the grid.
    pub fn intensity_at(&self, t: f64) -> f64 {
        if self.values.is_empty() || self.dt <= 0.0 {
            return 0.0;
        }
        let x = (t - self.t0) / self.dt;
        if x < -0.5 || x > self.values.len() as f64 - 0.5 {
            return 0.0;
        }
        let x = x.clamp(0.0, (self.values.len() - 1) as f64);
        let i = (x.floor() as usize).min(self.values.len() - 1);
        let j = (i + 1).min(self.values.len() - 1);
        let f = x - i as f64;
        self.values[i].norm_sqr() * (1.0 - f) + self.values[j].norm_sqr() * f
    }

    /// Mean arrival time weighted by |E|².
    pub fn centroid(&self) -> f64 {
        let total: f64 = self.values.iter().map(|v| v.norm_sqr()).sum();
        if total == 0.0 {
            return f64::NAN;
        }
        self.times()
            .zip(&self.values)
            .map(|(t, v)| t * v.norm_sqr())
            .sum::<f64>()
            / total
    }

    /// Samples `signal` at `n` points starting at `t0`.
    pub fn from_signal(signal: &SignalEnvelope, t0: f64, dt: f64, n: usize) -> Self {
        Self {
            t0,
            dt,
            values: (0..n).map(|i| signal.amplitude(t0 + i as f64 * dt)).collect(),
        }
    }

    /// ∫|E|² dt over [a, b), each sample holding its value across its cell.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        if self.values.is_empty() || !(b > a) {
            return 0.0;
        }
        let start = self.t0 - 0.5 * self.dt;
        let n = self.values.len();
        let lo = ((a - start) / self.dt).floor().max(0.0) as usize;
        let hi = (((b - start) / self.dt).ceil().max(0.0) as usize).min(n);
        let mut sum = 0.0;
        for i in lo.min(n)..hi {
            let c0 = start + i as f64 * self.dt;
            let overlap = (c0 + self.dt).min(b) - c0.max(a);
            if overlap > 0.0 {
                sum += self.values[i].norm_sqr() * overlap;
            }
        }
        sum
    }

    /// Same grid, with `f` applied to every sample.
    pub fn map<F: Fn(Complex64) -> Complex64>(&self, f: F) -> Self {
        Self {
            t0: self.t0,
            dt: self.dt,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_modulation_is_the_gaussian() {
        let g = ControlPulse::gaussian(0.8, 1e-10, 1e9);
        let m = ControlPulse {
            shape: ControlShape::modulated(vec![1.0; 8], 1.2e-9),
            ..g.clone()
        };
        let (lo, hi) = g.support();
        for i in 0..=500 {
            let t = lo + (hi - lo) * i as f64 / 500.0;
            assert_eq!(g.rabi(t, 5e11), m.rabi(t, 5e11));
        }
    }

    #[test]
    fn modulated_pulse_keeps_its_energy() {
        let p = ControlPulse {
            shape: ControlShape::modulated(vec![2.0, 0.3, 0.0, 1.5, 2.5], 1.0e-9),
            ..ControlPulse::gaussian(1.3, 0.0, 1e9)
        };
        p.validate().unwrap();
        let (lo, hi) = p.support();
        let area = integrate(|t| p.rabi(t, 1e12).norm_sqr(), lo, hi, 200_000);
        assert_relative_eq!(area, 1.3e12, max_relative = 1e-6);
        let sampled = (0..=1000)
            .map(|i| p.rabi(lo + (hi - lo) * i as f64 / 1000.0, 1e12).norm_sqr())
            .fold(0.0, f64::max);
        assert!(p.peak_rabi_sq(1e12) >= sampled);
    }

    #[test]
    fn modulation_rejects_negative_knots() {
        let p = ControlPulse {
            shape: ControlShape::modulated(vec![1.0, -0.1], 1e-9),
            ..ControlPulse::default()
        };
        assert!(p.validate().is_err());
    }

    #[test]
    fn cell_integral_matches_photon_number() {
        let s = SignalEnvelope::default();
        let e = SampledEnvelope::from_signal(&s, -2e-9, 0.7e-12, 6000);
        assert_relative_eq!(e.integral(-3e-9, 3e-9), e.photon_number(), max_relative = 1e-12);
        let split = e.integral(-3e-9, 1.234e-11) + e.integral(1.234e-11, 3e-9);
        assert_relative_eq!(split, e.photon_number(), max_relative = 1e-12);
        assert_relative_eq!(e.photon_number(), s.mu_in, max_relative = 1e-9);
    }

    fn integrate<F: Fn(f64) -> f64>(f: F, lo: f64, hi: f64, n: usize) -> f64 {
        let h = (hi - lo) / n as f64;
        (0..n).map(|i| f(lo + (i as f64 + 0.5) * h)).sum::<f64>() * h
    }

    #[test]
    fn signal_normalisation() {
        let s = SignalEnvelope {
            mu_in: 0.3,
            ..Default::default()
        };
        let (lo, hi) = s.support();
        let n = integrate(|t| s.amplitude(t).norm_sqr(), lo - 1e-10, hi + 1e-10, 200_000);
        assert_relative_eq!(n, 0.3, max_relative = 1e-9);
        // FWHM of |E|²
        let half = s.amplitude(s.fwhm / 2.0).norm_sqr() / s.amplitude(0.0).norm_sqr();
        assert_relative_eq!(half, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn control_area_linear_in_energy() {
        let k = 1e12;
        for shape in [
            ControlShape::Gaussian,
            ControlShape::ChirpedGaussian { chirp_rate: 3e19 },
        ] {
            let p = ControlPulse {
                energy_nj: 0.57,
                shape,
                ..Default::default()
            };
            let (lo, hi) = p.support();
            let a1 = integrate(|t| p.rabi(t, k).norm_sqr(), lo, hi, 100_000);
            assert_relative_eq!(a1, k * 0.57, max_relative = 1e-9);
            let p2 = ControlPulse {
                energy_nj: 1.14,
                ..p.clone()
            };
            assert_relative_eq!(
                p2.peak_rabi_sq(k),
                2.0 * p.peak_rabi_sq(k),
                max_relative = 1e-15
            );
        }
        let zero = ControlPulse {
            energy_nj: 0.0,
            ..Default::default()
        };
        assert_eq!(zero.rabi(0.0, k), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn control_duration_from_bandwidth() {
        let p = ControlPulse::default();
        assert_relative_eq!(p.duration(), 441.2712e-12, max_relative = 1e-6);
        let half = p.rabi(p.duration() / 2.0, 1.0).norm_sqr() / p.rabi(0.0, 1.0).norm_sqr();
        assert_relative_eq!(half, 0.5, max_relative = 1e-9);
    }

    #[test]
    fn table_pulse_normalised() {
        let times: Vec<f64> = (0..9).map(|i| -0.8e-9 + 0.2e-9 * i as f64).collect();
        let re = vec![0.0, 0.2, 1.0, 0.7, 0.9, 0.3, 0.1, 0.05, 0.0];
        let im = vec![0.0, 0.1, 0.0, -0.2, 0.0, 0.0, 0.3, 0.0, 0.0];
        let p = ControlPulse {
            energy_nj: 2.0,
            shape: ControlShape::UserTable { times, re, im },
            ..Default::default()
        };
        p.validate().unwrap();
        let (lo, hi) = p.support();
        let a = integrate(|t| p.rabi(t, 5e11).norm_sqr(), lo, hi, 400_000);
        assert_relative_eq!(a, 1e12, max_relative = 1e-6);
    }

    #[test]
    fn table_validation() {
        let p = ControlPulse {
            shape: ControlShape::UserTable {
                times: vec![0.0, 0.0],
                re: vec![1.0, 1.0],
                im: vec![0.0, 0.0],
            },
            ..Default::default()
        };
        assert!(p.validate().is_err());
        let z = ControlPulse {
            shape: ControlShape::UserTable {
                times: vec![0.0, 1.0],
                re: vec![0.0, 0.0],
                im: vec![0.0, 0.0],
            },
            ..Default::default()
        };
        assert!(z.validate().is_err());
    }
}
