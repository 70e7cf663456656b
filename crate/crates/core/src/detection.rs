//! Synthetic start-stop histograms and their analysis.
//!
//! Counts are Poisson per bin with no dead time or afterpulsing, which is
//! adequate far below one detected photon per trial.

use std::fmt::Write as _;

use nalgebra::{Matrix4, Vector4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pulse::SampledEnvelope;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionChain {
    pub eta_det: f64,
    pub eta_trans: f64,
    /// Gaussian timing jitter (s), forward-modelled only.
    pub timing_jitter_sigma: f64,
    pub bin_width: f64,
}

impl Default for DetectionChain {
    fn default() -> Self {
        Self {
            eta_det: 0.80,
            eta_trans: 0.56,
            timing_jitter_sigma: 0.0,
            bin_width: 1e-12,
        }
    }
}

impl DetectionChain {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("eta_det", self.eta_det), ("eta_trans", self.eta_trans)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        if !(self.timing_jitter_sigma.is_finite() && self.timing_jitter_sigma >= 0.0) {
            return Err(Error::Config("timing_jitter_sigma must be >= 0".into()));
        }
        if !(self.bin_width.is_finite() && self.bin_width > 0.0) {
            return Err(Error::Config("bin_width must be positive".into()));
        }
        Ok(())
    }

    /// Probability that a photon at the memory output is counted.
    pub fn efficiency(&self) -> f64 {
        self.eta_det * self.eta_trans
    }
}

/// Expected noise photons per window at the memory output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseLevel {
    pub per_window: f64,
    pub window: f64,
}

impl NoiseLevel {
    pub const NONE: NoiseLevel = NoiseLevel {
        per_window: 0.0,
        window: 500e-12,
    };
}

/// Time span, duration and random stream of one synthetic acquisition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Acquisition {
    pub start: f64,
    pub stop: f64,
    pub acquisition_time: f64,
    pub repetition_rate: f64,
    pub seed: u64,
    /// Independent stream of `seed`; histograms sharing a seed use distinct streams.
    pub stream: u64,
}

impl Acquisition {
    pub fn trials(&self) -> u64 {
        (self.acquisition_time * self.repetition_rate).floor() as u64
    }
}

/// Start-stop histogram on uniform bins [t0 + i·w, t0 + (i+1)·w).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub t0: f64,
    pub bin_width: f64,
    pub counts: Vec<u64>,
    pub acquisition_time: f64,
    pub trials: u64,
    pub rng_seed: u64,
    pub stream: u64,
}

impl Histogram {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn bin_start(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.bin_width
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        (0..=self.counts.len()).map(|i| self.bin_start(i)).collect()
    }

    pub fn end(&self) -> f64 {
        self.bin_start(self.counts.len())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn same_binning(&self, other: &Histogram) -> bool {
        self.t0 == other.t0
            && self.bin_width == other.bin_width
            && self.counts.len() == other.counts.len()
            && self.trials == other.trials
    }

    /// CSV with `# key=value` metadata lines, then `bin_start_ps,counts` rows.
    ///
    /// The bin layout is rebuilt from the exact `t0_s` and `bin_width_s`
    /// values, so reading returns an identical histogram.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# t0_s={}", self.t0);
        let _ = writeln!(s, "# bin_width_s={}", self.bin_width);
        let _ = writeln!(s, "# bins={}", self.counts.len());
        let _ = writeln!(s, "# trials={}", self.trials);
        let _ = writeln!(s, "# acquisition_time_s={}", self.acquisition_time);
        let _ = writeln!(s, "# rng_seed={}", self.rng_seed);
        let _ = writeln!(s, "# stream={}", self.stream);
        s.push_str("bin_start_ps,counts\n");
        for (i, c) in self.counts.iter().enumerate() {
            let _ = writeln!(s, "{},{}", self.bin_start(i) * 1e12, c);
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut meta = std::collections::HashMap::new();
        let mut rows = Vec::new();
        let mut header = false;
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some((k, v)) = rest.trim().split_once('=') {
                    meta.insert(k.trim().to_string(), v.trim().to_string());
                }
                continue;
            }
            if !header {
                if line != "bin_start_ps,counts" {
                    return Err(Error::Format(format!(
                        "line {}: expected header 'bin_start_ps,counts', found '{line}'",
                        n + 1
                    )));
                }
                header = true;
                continue;
            }
            let (t, c) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("line {}: expected two columns", n + 1)))?;
            let t: f64 = t
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad bin start '{t}'", n + 1)))?;
            let c: u64 = c
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("line {}: bad count '{c}'", n + 1)))?;
            rows.push((t, c));
        }
        fn field<T: std::str::FromStr>(
            meta: &std::collections::HashMap<String, String>,
            key: &str,
        ) -> Result<T> {
            meta.get(key)
                .ok_or_else(|| Error::Format(format!("missing metadata '{key}'")))?
                .parse()
                .map_err(|_| Error::Format(format!("unparsable metadata '{key}'")))
        }
        let h = Histogram {
            t0: field(&meta, "t0_s")?,
            bin_width: field(&meta, "bin_width_s")?,
            counts: rows.iter().map(|r| r.1).collect(),
            acquisition_time: field(&meta, "acquisition_time_s")?,
            trials: field(&meta, "trials")?,
            rng_seed: field(&meta, "rng_seed")?,
            stream: field(&meta, "stream")?,
        };
        let bins: usize = field(&meta, "bins")?;
        if bins != rows.len() {
            return Err(Error::Format(format!(
                "metadata declares {bins} bins but {} rows follow",
                rows.len()
            )));
        }
        if !(h.bin_width > 0.0) {
            return Err(Error::Format("bin width must be positive".into()));
        }
        for (i, (t, _)) in rows.iter().enumerate() {
            let expect = h.bin_start(i) * 1e12;
            if (t - expect).abs() > 1e-6 * h.bin_width * 1e12 {
                return Err(Error::Format(format!(
                    "row {i}: bin start {t} ps does not match the declared layout ({expect} ps)"
                )));
            }
        }
        Ok(h)
    }
}

/// Mean counts per bin for `trials` repetitions.
///
/// The signal part is convolved with the timing jitter; noise is spread
/// uniformly in time.
pub fn expected_counts(
    envelope: &SampledEnvelope,
    chain: &DetectionChain,
    noise: NoiseLevel,
    t0: f64,
    n_bins: usize,
    trials: u64,
) -> Result<Vec<f64>> {
    chain.validate()?;
    if !(noise.per_window.is_finite() && noise.per_window >= 0.0 && noise.window > 0.0) {
        return Err(Error::Synthesis("noise level must be finite and >= 0".into()));
    }
    let w = chain.bin_width;
    let mut signal: Vec<f64> = (0..n_bins)
        .map(|i| {
            let a = t0 + i as f64 * w;
            envelope.integral(a, a + w)
        })
        .collect();
    if chain.timing_jitter_sigma > 0.0 {
        signal = jitter(&signal, chain.timing_jitter_sigma / w);
    }
    let scale = trials as f64 * chain.efficiency();
    let noise_bin = noise.per_window * w / noise.window;
    let out: Vec<f64> = signal.iter().map(|s| scale * (s + noise_bin)).collect();
    if let Some(i) = out.iter().position(|x| !x.is_finite()) {
        return Err(Error::Synthesis(format!("non-finite expected count in bin {i}")));
    }
    Ok(out)
}

/// Discrete convolution with a normalised Gaussian of `sigma_bins` bins.
fn jitter(values: &[f64], sigma_bins: f64) -> Vec<f64> {
    let half = (5.0 * sigma_bins).ceil() as isize;
    let kernel: Vec<f64> = (-half..=half)
        .map(|k| (-0.5 * (k as f64 / sigma_bins).powi(2)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();
    let n = values.len() as isize;
    (0..n)
        .map(|i| {
            kernel
                .iter()
                .enumerate()
                .map(|(j, k)| {
                    let src = i - (j as isize - half);
                    if (0..n).contains(&src) {
                        values[src as usize] * k
                    } else {
                        0.0
                    }
                })
                .sum::<f64>()
                / norm
        })
        .collect()
}

/// Poisson-sampled histogram of `envelope` plus uniform noise.
pub fn synthesize_histogram(
    envelope: &SampledEnvelope,
    chain: &DetectionChain,
    noise: NoiseLevel,
    acq: &Acquisition,
) -> Result<Histogram> {
    chain.validate()?;
    if !(acq.acquisition_time.is_finite() && acq.acquisition_time > 0.0) {
        return Err(Error::Config("acquisition_time must be positive".into()));
    }
    if !(acq.repetition_rate.is_finite() && acq.repetition_rate > 0.0) {
        return Err(Error::Config("repetition_rate must be positive".into()));
    }
    if !(acq.stop > acq.start) {
        return Err(Error::Config("histogram stop must follow start".into()));
    }
    let n_bins = ((acq.stop - acq.start) / chain.bin_width).round() as usize;
    let trials = acq.trials();
    let mean = expected_counts(envelope, chain, noise, acq.start, n_bins, trials)?;
    let mut rng = ChaCha8Rng::seed_from_u64(acq.seed);
    rng.set_stream(acq.stream);
    let counts = mean
        .iter()
        .map(|&m| {
            if m > 0.0 {
                Poisson::new(m)
                    .map(|p| p.sample(&mut rng) as u64)
                    .map_err(|e| Error::Synthesis(format!("Poisson mean {m}: {e}")))
            } else {
                Ok(0)
            }
        })
        .collect::<Result<Vec<u64>>>()?;
    Ok(Histogram {
        t0: acq.start,
        bin_width: chain.bin_width,
        counts,
        acquisition_time: acq.acquisition_time,
        trials,
        rng_seed: acq.seed,
        stream: acq.stream,
    })
}

/// A·exp(−(t−t₀)²/(2σ²)) + b with parameter covariance in the order (A, t₀, σ, b).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub amplitude: f64,
    pub center: f64,
    pub sigma: f64,
    pub baseline: f64,
    pub fwhm: f64,
    pub covariance: [[f64; 4]; 4],
    pub chi2_per_dof: f64,
    pub iterations: usize,
}

impl GaussianFit {
    pub fn stderr(&self, k: usize) -> f64 {
        self.covariance[k][k].max(0.0).sqrt()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit report serialises")
    }
}

pub const FWHM_PER_SIGMA: f64 = 2.354_820_045_030_949_3;

const FIT_MAX_ITER: usize = 500;
const FIT_STEP_TOL: f64 = 1e-6;

/// Poisson maximum-likelihood fit over bins whose left edge lies in `window`.
///
/// Levenberg–Marquardt on the Poisson deviance with Fisher-scoring
/// weights 1/model, so low-count bins are treated without the bias of
/// count-weighted least squares. The covariance is the inverse Fisher
/// information and `chi2_per_dof` is Pearson's statistic. Starting values
/// come from the moments of the counts above a baseline taken as the mean
/// of the lowest tenth of the bins.
pub fn fit_gaussian(h: &Histogram, window: (f64, f64)) -> Result<GaussianFit> {
    let (lo, hi) = window;
    let idx: Vec<usize> = (0..h.len())
        .filter(|&i| {
            let e = h.bin_start(i);
            e >= lo && e < hi
        })
        .collect();
    let nonzero = idx.iter().filter(|&&i| h.counts[i] > 0).count();
    if nonzero == 0 {
        return Err(Error::Fit("window holds no counts".into()));
    }
    if nonzero < 20 {
        return Err(Error::Fit(format!(
            "window holds only {nonzero} non-empty bins, need >= 20"
        )));
    }
    let mid = 0.5 * (lo + hi);
    let scale = 0.5 * (hi - lo);
    let x: Vec<f64> = idx
        .iter()
        .map(|&i| (h.bin_start(i) + 0.5 * h.bin_width - mid) / scale)
        .collect();
    let y: Vec<f64> = idx.iter().map(|&i| h.counts[i] as f64).collect();

    let mut sorted = y.clone();
    sorted.sort_by(f64::total_cmp);
    let low = (sorted.len() / 10).max(1);
    let b0 = sorted[..low].iter().sum::<f64>() / low as f64;
    let excess: Vec<f64> = y.iter().map(|v| (v - b0).max(0.0)).collect();
    let mass: f64 = excess.iter().sum();
    let a0 = excess.iter().cloned().fold(0.0, f64::max);
    if mass <= 0.0 || a0 <= 0.0 {
        return Err(Error::Fit("degenerate amplitude: window is flat".into()));
    }
    let c0 = x.iter().zip(&excess).map(|(x, e)| x * e).sum::<f64>() / mass;
    let s0 = (x.iter().zip(&excess).map(|(x, e)| (x - c0).powi(2) * e).sum::<f64>() / mass)
        .sqrt()
        .max(0.5 * (x[1] - x[0]).abs());

    let model = |p: &Vector4<f64>, x: f64| -> (f64, Vector4<f64>) {
        let d = x - p[1];
        let g = (-0.5 * d * d / (p[2] * p[2])).exp();
        let f = p[0] * g + p[3];
        let jac = Vector4::new(
            g,
            p[0] * g * d / (p[2] * p[2]),
            p[0] * g * d * d / (p[2] * p[2] * p[2]),
            1.0,
        );
        (f, jac)
    };
    let deviance = |p: &Vector4<f64>| -> f64 {
        let mut d = 0.0;
        for (&x, &y) in x.iter().zip(&y) {
            let f = model(p, x).0;
            if f < 0.0 || (f == 0.0 && y > 0.0) {
                return f64::INFINITY;
            }
            d += if y > 0.0 { f - y + y * (y / f).ln() } else { f };
        }
        2.0 * d
    };
    let normal = |p: &Vector4<f64>| -> (Matrix4<f64>, Vector4<f64>) {
        let mut info = Matrix4::zeros();
        let mut score = Vector4::zeros();
        for (&x, &y) in x.iter().zip(&y) {
            let (f, j) = model(p, x);
            let w = 1.0 / f.max(1e-12);
            info += j * j.transpose() * w;
            score += j * (w * (y - f));
        }
        (info, score)
    };
    let pearson = |p: &Vector4<f64>| -> f64 {
        x.iter()
            .zip(&y)
            .map(|(&x, &y)| {
                let f = model(p, x).0.max(1e-12);
                (y - f).powi(2) / f
            })
            .sum()
    };

    // keep the start strictly positive so the likelihood is defined
    let mut p = Vector4::new(a0, c0, s0, b0.max(1e-3 * a0));
    let mut cost = deviance(&p);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < FIT_MAX_ITER {
        iterations += 1;
        let (jtj, jtr) = normal(&p);
        let mut damped = jtj;
        for k in 0..4 {
            damped[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
        }
        let Some(step) = damped.lu().solve(&jtr) else {
            lambda *= 10.0;
            continue;
        };
        let mut trial = p + step;
        trial[2] = trial[2].abs();
        let c = deviance(&trial);
        if c.is_finite() && c <= cost {
            let refs = [p[0].abs(), 1.0, p[2].abs(), p[0].abs()];
            let small = (0..4).all(|k| step[k].abs() <= FIT_STEP_TOL * (trial[k].abs() + refs[k]));
            p = trial;
            cost = c;
            lambda = (lambda / 10.0).max(1e-12);
            if small {
                converged = true;
                break;
            }
        } else {
            lambda *= 10.0;
            if lambda > 1e16 {
                // No downhill step exists at working precision.
                converged = true;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::Fit(format!(
            "no convergence after {FIT_MAX_ITER} iterations (last A={:e}, t0={:e}, sigma={:e}, b={:e})",
            p[0],
            mid + p[1] * scale,
            p[2] * scale,
            p[3]
        )));
    }
    let (jtj, _) = normal(&p);
    let cov_u = jtj
        .try_inverse()
        .ok_or_else(|| Error::Fit("singular normal matrix at solution".into()))?;
    let units = [1.0, scale, scale, 1.0];
    let mut covariance = [[0.0; 4]; 4];
    for (i, row) in covariance.iter_mut().enumerate() {
        for (j, c) in row.iter_mut().enumerate() {
            *c = cov_u[(i, j)] * units[i] * units[j];
        }
    }
    if !(p[0] > 3.0 * covariance[0][0].max(0.0).sqrt()) {
        return Err(Error::Fit(format!(
            "degenerate amplitude: A = {:e} is not significant",
            p[0]
        )));
    }
    let sigma = p[2] * scale;
    let dof = (x.len() as f64 - 4.0).max(1.0);
    Ok(GaussianFit {
        amplitude: p[0],
        center: mid + p[1] * scale,
        sigma,
        baseline: p[3],
        fwhm: FWHM_PER_SIGMA * sigma,
        covariance,
        chi2_per_dof: pearson(&p) / dof,
        iterations,
    })
}

/// Counts in bins whose left edge lies in [center − width/2, center + width/2).
pub fn window_integrate(h: &Histogram, center: f64, width: f64) -> Result<u64> {
    let lo = center - 0.5 * width;
    let hi = center + 0.5 * width;
    let slack = 1e-9 * h.bin_width;
    if !(width > 0.0) || lo < h.t0 - slack || hi > h.end() + slack {
        return Err(Error::Range(format!(
            "window [{lo:e}, {hi:e}) s outside histogram span [{:e}, {:e}) s",
            h.t0,
            h.end()
        )));
    }
    Ok((0..h.len())
        .filter(|&i| {
            let e = h.bin_start(i);
            e >= lo && e < hi
        })
        .map(|i| h.counts[i])
        .sum())
}

/// Read-in and read-out integration windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Windows {
    pub read_in_center: f64,
    pub read_out_center: f64,
    pub width: f64,
}

impl Default for Windows {
    fn default() -> Self {
        Self {
            read_in_center: 0.0,
            read_out_center: 660e-12,
            width: 500e-12,
        }
    }
}

/// Efficiencies recovered from counts, with Poisson standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Efficiencies {
    pub mu_in: f64,
    pub mu_in_err: f64,
    pub eta_read_in: f64,
    pub eta_read_in_err: f64,
    pub eta_read_out: f64,
    pub eta_read_out_err: f64,
    pub eta_mem: f64,
    pub eta_mem_err: f64,
    /// Noise photons per window at the memory output.
    pub noise: f64,
    pub noise_err: f64,
    /// False when an efficiency lies outside [0, 1 + 3σ].
    pub consistent: bool,
}

/// Extracts μ_in and the three efficiencies from a control-off reference,
/// a memory run and a noise-only histogram.
///
/// The read-in efficiency compares the read-in window with and without
/// control; η_mem is the noise-subtracted read-out window over the input
/// window. Errors are first order in the four independent Poisson counts.
pub fn extract_efficiencies(
    input_h: &Histogram,
    memory_h: &Histogram,
    noise_h: &Histogram,
    chain: &DetectionChain,
    windows: &Windows,
) -> Result<Efficiencies> {
    chain.validate()?;
    if !input_h.same_binning(memory_h) || !input_h.same_binning(noise_h) {
        return Err(Error::Extraction(
            "histograms differ in binning or trial count".into(),
        ));
    }
    let c0 = window_integrate(input_h, windows.read_in_center, windows.width)? as f64;
    let cw = window_integrate(memory_h, windows.read_in_center, windows.width)? as f64;
    let m = window_integrate(memory_h, windows.read_out_center, windows.width)? as f64;
    let nz = window_integrate(noise_h, windows.read_out_center, windows.width)? as f64;
    if c0 == 0.0 {
        return Err(Error::Extraction("reference read-in window holds no counts".into()));
    }
    let norm = input_h.trials as f64 * chain.efficiency();
    if norm <= 0.0 {
        return Err(Error::Extraction("zero trials or zero detection efficiency".into()));
    }
    let mu_in = c0 / norm;
    let eta_read_in = 1.0 - cw / c0;
    let eta_read_in_err = (cw / c0) * (1.0 / cw.max(1.0) + 1.0 / c0).sqrt();
    let eta_mem = (m - nz) / c0;
    let eta_mem_err = ((m + nz) / (c0 * c0) + eta_mem * eta_mem / c0).sqrt();
    let absorbed = c0 - cw;
    let (eta_read_out, eta_read_out_err) = if absorbed > 0.0 {
        let r = (m - nz) / absorbed;
        (r, ((m + nz) + r * r * (c0 + cw)).sqrt() / absorbed)
    } else {
        (0.0, f64::INFINITY)
    };
    let inside = |v: f64, e: f64| v >= -3.0 * e && v <= 1.0 + 3.0 * e;
    Ok(Efficiencies {
        mu_in,
        mu_in_err: c0.sqrt() / norm,
        eta_read_in,
        eta_read_in_err,
        eta_read_out,
        eta_read_out_err,
        eta_mem,
        eta_mem_err,
        noise: nz / norm,
        noise_err: nz.sqrt() / norm,
        consistent: inside(eta_read_in, eta_read_in_err)
            && inside(eta_mem, eta_mem_err)
            && inside(eta_read_out, eta_read_out_err),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pulse::SignalEnvelope;
    use approx::assert_relative_eq;

    fn pulse(mu: f64, center: f64) -> SampledEnvelope {
        let s = SignalEnvelope {
            mu_in: mu,
            center_time: center,
            ..Default::default()
        };
        SampledEnvelope::from_signal(&s, -1.5e-9, 0.25e-12, 14_000)
    }

    fn acq(seed: u64, stream: u64) -> Acquisition {
        Acquisition {
            start: -1e-9,
            stop: 2e-9,
            acquisition_time: 120.0,
            repetition_rate: 1e7,
            seed,
            stream,
        }
    }

    #[test]
    fn expected_input_counts_match_bookkeeping() {
        let chain = DetectionChain::default();
        let mean = expected_counts(&pulse(0.084, 0.0), &chain, NoiseLevel::NONE, -1e-9, 3000, 1_200_000_000)
            .unwrap();
        let total: f64 = mean.iter().sum();
        assert_relative_eq!(total, 0.084 * 0.56 * 0.80 * 1.2e9, max_relative = 1e-6);
    }

    #[test]
    fn zero_input_gives_empty_histogram() {
        let h = synthesize_histogram(&pulse(0.0, 0.0), &DetectionChain::default(), NoiseLevel::NONE, &acq(3, 0))
            .unwrap();
        assert_eq!(h.total(), 0);
        assert_eq!(h.len(), 3000);
        assert_eq!(h.trials, 1_200_000_000);
    }

    #[test]
    fn seeding_is_deterministic() {
        let chain = DetectionChain::default();
        let e = pulse(1e-4, 0.0);
        let a = synthesize_histogram(&e, &chain, NoiseLevel::NONE, &acq(7, 1)).unwrap();
        let b = synthesize_histogram(&e, &chain, NoiseLevel::NONE, &acq(7, 1)).unwrap();
        let c = synthesize_histogram(&e, &chain, NoiseLevel::NONE, &acq(7, 2)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.counts, c.counts);
        let (ta, tc) = (a.total() as f64, c.total() as f64);
        assert!((ta - tc).abs() < 5.0 * (ta + tc).sqrt());
    }

    #[test]
    fn jitter_preserves_counts() {
        let e = pulse(0.01, 0.0);
        let sharp = DetectionChain::default();
        let blurred = DetectionChain {
            timing_jitter_sigma: 30e-12,
            ..Default::default()
        };
        let a: f64 = expected_counts(&e, &sharp, NoiseLevel::NONE, -1e-9, 3000, 1000).unwrap().iter().sum();
        let b = expected_counts(&e, &blurred, NoiseLevel::NONE, -1e-9, 3000, 1000).unwrap();
        assert_relative_eq!(a, b.iter().sum::<f64>(), max_relative = 1e-9);
        let peak = b.iter().cloned().fold(0.0, f64::max);
        let sharp_peak = expected_counts(&e, &sharp, NoiseLevel::NONE, -1e-9, 3000, 1000)
            .unwrap()
            .iter()
            .cloned()
            .fold(0.0, f64::max);
        assert!(peak < sharp_peak);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let chain = DetectionChain::default();
        let mut h = synthesize_histogram(&pulse(1e-3, 0.1e-9), &chain, NoiseLevel::NONE, &acq(11, 0)).unwrap();
        h.t0 = -1.000_000_000_000_1e-9;
        let back = Histogram::from_csv(&h.to_csv()).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn csv_rejects_damaged_files() {
        let h = Histogram {
            t0: 0.0,
            bin_width: 1e-12,
            counts: vec![1, 2, 3],
            acquisition_time: 1.0,
            trials: 10,
            rng_seed: 0,
            stream: 0,
        };
        let text = h.to_csv();
        assert!(matches!(Histogram::from_csv(&text.replace("# bins=3", "# bins=4")), Err(Error::Format(_))));
        assert!(matches!(Histogram::from_csv(&text.replace("2,3", "2,x")), Err(Error::Format(_))));
        assert!(matches!(Histogram::from_csv(&text.replace("# trials=10\n", "")), Err(Error::Format(_))));
    }

    fn exact_gaussian(a: f64, c: f64, s: f64, b: f64) -> Histogram {
        let n = 4000;
        let counts = (0..n)
            .map(|i| {
                let t = -2e-9 + (i as f64 + 0.5) * 1e-12;
                (a * (-(t - c) * (t - c) / (2.0 * s * s)).exp() + b).round() as u64
            })
            .collect();
        Histogram {
            t0: -2e-9,
            bin_width: 1e-12,
            counts,
            acquisition_time: 1.0,
            trials: 1,
            rng_seed: 0,
            stream: 0,
        }
    }

    #[test]
    fn noiseless_fit_recovers_fwhm() {
        let s = 350e-12 / FWHM_PER_SIGMA;
        let h = exact_gaussian(1e6, 0.1e-9, s, 0.0);
        let f = fit_gaussian(&h, (-1e-9, 1.2e-9)).unwrap();
        assert_relative_eq!(f.fwhm, 350e-12, max_relative = 1e-3);
        assert_relative_eq!(f.fwhm, FWHM_PER_SIGMA * f.sigma, max_relative = 1e-12);
        assert!((f.center - 0.1e-9).abs() < 1e-14);
    }

    #[test]
    fn fit_with_baseline() {
        let h = exact_gaussian(5e5, -0.3e-9, 80e-12, 2e4);
        let f = fit_gaussian(&h, (-1e-9, 0.4e-9)).unwrap();
        assert_relative_eq!(f.sigma, 80e-12, max_relative = 1e-4);
        assert_relative_eq!(f.baseline, 2e4, max_relative = 1e-3);
    }

    #[test]
    fn flat_and_empty_windows_fail() {
        let mut h = exact_gaussian(0.0, 0.0, 1e-10, 50.0);
        assert!(matches!(fit_gaussian(&h, (-1e-9, 1e-9)), Err(Error::Fit(_))));
        h.counts.iter_mut().for_each(|c| *c = 0);
        assert!(matches!(fit_gaussian(&h, (-1e-9, 1e-9)), Err(Error::Fit(_))));
    }

    #[test]
    fn window_boundaries_are_left_closed() {
        let h = Histogram {
            t0: 0.0,
            bin_width: 1.0,
            counts: (1..=10).collect(),
            acquisition_time: 1.0,
            trials: 1,
            rng_seed: 0,
            stream: 0,
        };
        assert_eq!(window_integrate(&h, 5.0, 10.0).unwrap(), 55);
        // [2, 4) holds the bins starting at 2 and 3
        assert_eq!(window_integrate(&h, 3.0, 2.0).unwrap(), 3 + 4);
        let a = window_integrate(&h, 2.0, 4.0).unwrap();
        let b = window_integrate(&h, 6.0, 4.0).unwrap();
        assert_eq!(a + b, window_integrate(&h, 4.0, 8.0).unwrap());
        assert!(matches!(window_integrate(&h, 9.0, 4.0), Err(Error::Range(_))));
    }

    #[test]
    fn identical_histograms_give_zero_read_in() {
        let chain = DetectionChain::default();
        let h = synthesize_histogram(&pulse(0.084, 0.0), &chain, NoiseLevel::NONE, &acq(5, 0)).unwrap();
        let z = synthesize_histogram(&pulse(0.0, 0.0), &chain, NoiseLevel::NONE, &acq(5, 1)).unwrap();
        let e = extract_efficiencies(&h, &h, &z, &chain, &Windows::default()).unwrap();
        assert_eq!(e.eta_read_in, 0.0);
        let mut other = h.clone();
        other.trials += 1;
        assert!(matches!(
            extract_efficiencies(&h, &other, &z, &chain, &Windows::default()),
            Err(Error::Extraction(_))
        ));
    }
}
