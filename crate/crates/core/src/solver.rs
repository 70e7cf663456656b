//! Integrator for the far-detuned ladder-memory equations.
//!
//! In the frame co-moving with the signal and with the intermediate state
//! adiabatically eliminated, the signal envelope E(z, t) and the spin wave
//! B_c(z, t) of every atomic class c obey
//!
//! ```text
//! ∂_z E   = i β̄ E + i G(t) Σ_c w_c B_c
//! ∂_t B_c = i G*(t) E − [γ_s + i(Δk·v_c + δ_p + δ_S(t))] B_c
//! ```
//!
//! with z normalised to the cell length, G(t) = sqrt(d₂/|Δ|)·Ω(t) and the
//! light shift δ_S = |Ω|²/(4Δ). A class is one velocity node of the
//! Maxwell–Boltzmann quadrature, optionally split further over hyperfine
//! pathways with detuning offsets δ_p.
//!
//! Each time step is a Strang split: an exact exponential half step for the
//! class rotations and decay, an implicit-midpoint step for the light–atom
//! coupling, and a second exponential half step. The coupling step uses
//! cell-centred spin waves and the midpoint rule along z, which makes the
//! discrete photon balance
//! `Σ dt |E_in|² = Σ dt |E_out|² + Σ_j h Σ_c w_c |B_c,j|²` hold to round-off
//! when decay is off.

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{
    build_velocity_grid, spinwave_wavevector, HyperfinePathwaySet, LadderScheme, VaporEnsemble,
    VelocityGrid,
};
use crate::pulse::{ControlPulse, SampledEnvelope, SignalEnvelope};

/// Minimum number of time steps across the FWHM of the shortest pulse.
pub const MIN_POINTS_PER_PULSE: f64 = 20.0;

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalDirection {
    #[default]
    Forward,
    Backward,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub n_z: usize,
    pub n_t: usize,
    pub n_v: usize,
    /// Length of the time grid (s); derived from the pulse supports when absent.
    pub time_span: Option<f64>,
    /// Dimensionless two-photon coupling; the single calibrated model parameter.
    pub coupling_d2: f64,
    /// ∫|Ω|² dt per nJ of control energy (rad²/s per nJ).
    pub rabi_area_per_nj: f64,
    pub include_stark: bool,
    pub include_doppler: bool,
    pub include_dispersion: bool,
    pub include_decay: bool,
    pub retrieval_direction: RetrievalDirection,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            n_z: 200,
            n_t: 4096,
            n_v: 65,
            time_span: None,
            coupling_d2: DEFAULT_COUPLING_D2,
            rabi_area_per_nj: DEFAULT_RABI_AREA_PER_NJ,
            include_stark: true,
            include_doppler: true,
            include_dispersion: true,
            include_decay: true,
            retrieval_direction: RetrievalDirection::Forward,
        }
    }
}

/// Coupling obtained by calibrating the default configuration to the
/// 69.13 % read-in point.
pub const DEFAULT_COUPLING_D2: f64 = 1.131_291_093_350_896;

/// Energy to Rabi-area conversion of the default beam geometry.
pub const DEFAULT_RABI_AREA_PER_NJ: f64 = 5.5e11;

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_z < 16 {
            return Err(Error::Config(format!("n_z must be >= 16, got {}", self.n_z)));
        }
        if self.n_t < 256 {
            return Err(Error::Config(format!("n_t must be >= 256, got {}", self.n_t)));
        }
        if self.n_v < 3 || self.n_v % 2 == 0 {
            return Err(Error::Config(format!("n_v must be odd and >= 3, got {}", self.n_v)));
        }
        if !(self.coupling_d2.is_finite() && self.coupling_d2 >= 0.0) {
            return Err(Error::Config("coupling_d2 must be finite and non-negative".into()));
        }
        if !(self.rabi_area_per_nj.is_finite() && self.rabi_area_per_nj > 0.0) {
            return Err(Error::Config("rabi_area_per_nj must be positive".into()));
        }
        if let Some(span) = self.time_span {
            if !(span.is_finite() && span > 0.0) {
                return Err(Error::Config("time_span must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Light shift of the two-photon resonance, |Ω(t)|²/(4Δ) (rad/s).
pub fn stark_shift(
    control: &ControlPulse,
    scheme: &LadderScheme,
    rabi_area_per_nj: f64,
    t: f64,
) -> f64 {
    control.rabi(t, rabi_area_per_nj).norm_sqr() / (4.0 * scheme.delta_intermediate)
}

/// One atomic class: a velocity node, possibly split over hyperfine pathways.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomClass {
    pub velocity: f64,
    pub weight: f64,
    /// Free-evolution angular frequency Δk·v + δ_p (rad/s).
    pub rotation: f64,
}

/// Spin-wave amplitudes B_c(z_j) on cell centres, z-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpinWave {
    pub n_z: usize,
    pub classes: Vec<AtomClass>,
    pub time: f64,
    pub data: Vec<Complex64>,
}

impl SpinWave {
    pub fn zeros(n_z: usize, classes: Vec<AtomClass>, time: f64) -> Self {
        let n = n_z * classes.len();
        Self {
            n_z,
            classes,
            time,
            data: vec![ZERO; n],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn get(&self, j: usize, c: usize) -> Complex64 {
        self.data[j * self.classes.len() + c]
    }

    pub fn set(&mut self, j: usize, c: usize, value: Complex64) {
        let nc = self.classes.len();
        self.data[j * nc + c] = value;
    }

    /// ∫|B_c|² dz for every class (normalised length).
    pub fn class_norms(&self) -> Vec<f64> {
        let nc = self.classes.len();
        let h = 1.0 / self.n_z as f64;
        let mut out = vec![0.0; nc];
        for row in self.data.chunks_exact(nc) {
            for (o, b) in out.iter_mut().zip(row) {
                *o += b.norm_sqr() * h;
            }
        }
        out
    }

    /// Stored excitation in photons: Σ_c w_c ∫|B_c|² dz.
    pub fn stored_photons(&self) -> f64 {
        self.class_norms()
            .iter()
            .zip(&self.classes)
            .map(|(n, c)| n * c.weight)
            .sum()
    }

    /// Class-averaged amplitude Σ_c w_c B_c at every cell.
    pub fn collective(&self) -> Vec<Complex64> {
        let nc = self.classes.len();
        self.data
            .chunks_exact(nc)
            .map(|row| {
                row.iter()
                    .zip(&self.classes)
                    .map(|(b, c)| b * c.weight)
                    .sum()
            })
            .collect()
    }

    /// Mirror image along the cell, z → L − z.
    pub fn reversed(&self) -> Self {
        let nc = self.classes.len();
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks_exact(nc).rev() {
            data.extend_from_slice(row);
        }
        Self {
            data,
            ..self.clone()
        }
    }
}

/// Mutable medium state advanced by [`Medium::step`].
#[derive(Debug, Clone)]
pub struct Medium {
    wave: SpinWave,
    decay: f64,
    beta: f64,
    half_dt: f64,
    half_factors: Vec<Complex64>,
}

/// Drive values for one time step.
#[derive(Debug, Clone, Copy)]
pub struct StepDrive {
    /// Coupling G at the step midpoint (sqrt(1/s)).
    pub coupling: Complex64,
    /// Light shift at the centres of the two half steps (rad/s).
    pub stark: (f64, f64),
    /// Input field at the step midpoint.
    pub input: Complex64,
}

impl Medium {
    /// `decay` is the amplitude decay rate, `beta` the class-averaged dispersion phase per unit length.
    pub fn new(wave: SpinWave, decay: f64, beta: f64) -> Self {
        Self {
            wave,
            decay,
            beta,
            half_dt: f64::NAN,
            half_factors: Vec::new(),
        }
    }

    pub fn wave(&self) -> &SpinWave {
        &self.wave
    }

    pub fn into_wave(self) -> SpinWave {
        self.wave
    }

    fn free_half(&mut self, half_dt: f64, stark: f64) {
        if half_dt != self.half_dt {
            self.half_dt = half_dt;
            self.half_factors = self
                .wave
                .classes
                .iter()
                .map(|c| (-(self.decay + I * c.rotation) * half_dt).exp())
                .collect();
        }
        let nc = self.wave.classes.len();
        if stark == 0.0 {
            for row in self.wave.data.chunks_exact_mut(nc) {
                for (b, f) in row.iter_mut().zip(&self.half_factors) {
                    *b *= f;
                }
            }
        } else {
            let s = Complex64::from_polar(1.0, -stark * half_dt);
            for row in self.wave.data.chunks_exact_mut(nc) {
                for (b, f) in row.iter_mut().zip(&self.half_factors) {
                    *b *= f * s;
                }
            }
        }
        self.wave.time += half_dt;
    }

    /// Implicit-midpoint coupling step; returns the output field at the cell exit.
    fn couple(&mut self, dt: f64, g: Complex64, e_in: Complex64) -> Complex64 {
        let n_z = self.wave.n_z;
        let h = 1.0 / n_z as f64;
        let a = Complex64::new(1.0, 0.0) / (Complex64::new(1.0, 0.0) - I * (0.5 * h * self.beta));
        if g == ZERO {
            // Field passes through; spin waves untouched.
            let ratio = (Complex64::new(1.0, 0.0) + I * (0.5 * h * self.beta)) * a;
            return e_in * ratio.powu(n_z as u32);
        }
        let nc = self.wave.classes.len();
        let c0_fac = I * g.conj() * a * (0.5 * dt);
        let kappa = a * (0.25 * dt * h * g.norm_sqr());
        let inv = Complex64::new(1.0, 0.0) / (Complex64::new(1.0, 0.0) + kappa);
        let ihg = I * g * (0.5 * h);
        let mut e = e_in;
        for row in self.wave.data.chunks_exact_mut(nc) {
            let mut s_n = ZERO;
            for (b, c) in row.iter().zip(&self.wave.classes) {
                s_n += b * c.weight;
            }
            let c0 = c0_fac * e;
            let s = (s_n + c0) * inv;
            let inc = (c0 - kappa * s) * 2.0;
            for b in row.iter_mut() {
                *b += inc;
            }
            let e_cell = a * (e + ihg * s);
            e = e_cell * 2.0 - e;
        }
        e
    }

    /// Advances by `dt` and returns the output field at the step midpoint.
    pub fn step(&mut self, dt: f64, drive: StepDrive) -> Complex64 {
        self.free_half(0.5 * dt, drive.stark.0);
        let out = self.couple(dt, drive.coupling, drive.input);
        self.free_half(0.5 * dt, drive.stark.1);
        out
    }

    fn first_non_finite(&self) -> Option<(usize, usize)> {
        let nc = self.wave.classes.len();
        self.wave
            .data
            .iter()
            .position(|b| !(b.re.is_finite() && b.im.is_finite()))
            .map(|i| (i / nc, i % nc))
    }
}

/// Uniform time grid; step k covers [t0 + k·dt, t0 + (k+1)·dt].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub n_t: usize,
}

impl TimeGrid {
    pub fn start(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt
    }

    pub fn mid(&self, k: usize) -> f64 {
        self.t0 + (k as f64 + 0.5) * self.dt
    }

    pub fn end(&self) -> f64 {
        self.start(self.n_t)
    }

    /// Number of steps completed before `t`.
    pub fn steps_before(&self, t: f64) -> usize {
        (((t - self.t0) / self.dt).ceil().max(0.0) as usize).min(self.n_t)
    }
}

/// Outcome of one storage and retrieval.
///
/// The time grid is split midway between the control centres. After the
/// split the evolution is linear in the stored spin wave and in the input
/// still arriving, so the output separates exactly into light radiated by
/// the stored excitation (`retrieved_envelope`) and signal that keeps
/// arriving late (`late_leak_envelope`). Leak-through is everything the
/// input contributes directly: the output before the split plus the late
/// leak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryRunResult {
    pub grid: TimeGrid,
    pub input_envelope: SampledEnvelope,
    /// Output before the split time.
    pub transmitted_envelope: SampledEnvelope,
    /// Output after the split driven by input that arrives after it.
    pub late_leak_envelope: SampledEnvelope,
    /// Output after the split radiated by the stored spin wave.
    pub retrieved_envelope: SampledEnvelope,
    /// Spin wave at the split time.
    pub spinwave_snapshot: SpinWave,
    pub split_time: f64,
    pub split_step: usize,
    /// Excitation left in the medium at the end of the grid (photons).
    pub residual_stored: f64,
    pub mu_in: f64,
    pub eta_read_in: f64,
    pub eta_read_out: f64,
    pub eta_mem: f64,
    pub direction: RetrievalDirection,
    pub control_in: ControlPulse,
    pub control_out: ControlPulse,
}

impl MemoryRunResult {
    /// Fraction of the input that is not absorbed.
    pub fn leak_fraction(&self) -> f64 {
        ratio(
            self.transmitted_envelope.photon_number() + self.late_leak_envelope.photon_number(),
            self.mu_in,
        )
    }

    /// Field seen by a detector that collects the retrieved light whichever
    /// way it leaves the cell, together with the forward leak-through.
    pub fn detected_envelope(&self) -> SampledEnvelope {
        let mut values = self.transmitted_envelope.values.clone();
        values.extend(
            self.retrieved_envelope
                .values
                .iter()
                .zip(&self.late_leak_envelope.values)
                .map(|(a, b)| a + b),
        );
        SampledEnvelope {
            t0: self.transmitted_envelope.t0,
            dt: self.transmitted_envelope.dt,
            values,
        }
    }

    /// Physical forward output, leak and retrieval superposed.
    pub fn output_envelope(&self) -> SampledEnvelope {
        let mut values = self.transmitted_envelope.values.clone();
        match self.direction {
            RetrievalDirection::Forward => values.extend(
                self.retrieved_envelope
                    .values
                    .iter()
                    .zip(&self.late_leak_envelope.values)
                    .map(|(a, b)| a + b),
            ),
            RetrievalDirection::Backward => {
                values.extend_from_slice(&self.late_leak_envelope.values)
            }
        }
        SampledEnvelope {
            t0: self.transmitted_envelope.t0,
            dt: self.transmitted_envelope.dt,
            values,
        }
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        0.0
    }
}

/// Scheme, vapour and numerics of one memory configuration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MemoryModel {
    pub scheme: LadderScheme,
    pub ensemble: VaporEnsemble,
    pub pathways: HyperfinePathwaySet,
    pub cfg: SolverConfig,
}

impl MemoryModel {
    pub fn new(
        scheme: LadderScheme,
        ensemble: VaporEnsemble,
        pathways: HyperfinePathwaySet,
        cfg: SolverConfig,
    ) -> Self {
        Self {
            scheme,
            ensemble,
            pathways,
            cfg,
        }
    }

    pub fn with_coupling(&self, coupling_d2: f64) -> Self {
        let mut m = self.clone();
        m.cfg.coupling_d2 = coupling_d2;
        m
    }

    pub fn validate(&self) -> Result<()> {
        self.scheme.validate()?;
        self.ensemble.validate()?;
        self.cfg.validate()?;
        self.pathways.normalized()?;
        Ok(())
    }

    pub fn velocity_grid(&self) -> Result<VelocityGrid> {
        if self.cfg.include_doppler {
            build_velocity_grid(&self.ensemble, self.cfg.n_v)
        } else {
            Ok(VelocityGrid::stationary())
        }
    }

    /// Velocity nodes crossed with hyperfine pathways.
    pub fn atom_classes(&self) -> Result<Vec<AtomClass>> {
        let grid = self.velocity_grid()?;
        let dk = spinwave_wavevector(&self.scheme);
        let pathways = self.pathways.components()?;
        let mut classes = Vec::with_capacity(grid.len() * pathways.len());
        for (&v, &w) in grid.velocities.iter().zip(&grid.weights) {
            for &(offset, pw) in &pathways {
                classes.push(AtomClass {
                    velocity: v,
                    weight: w * pw,
                    rotation: dk * v + offset,
                });
            }
        }
        Ok(classes)
    }

    fn decay_rate(&self) -> f64 {
        if self.cfg.include_decay {
            self.scheme.storage_decay_rate()
        } else {
            0.0
        }
    }

    /// Class-averaged dispersion phase per cell length, d₂·Σ_c w_c Δ/(Δ + k_s v_c).
    pub fn dispersion_beta(&self, classes: &[AtomClass]) -> f64 {
        if !self.cfg.include_dispersion {
            return 0.0;
        }
        let delta = self.scheme.delta_intermediate;
        let ks = self.scheme.k_signal();
        self.cfg.coupling_d2
            * classes
                .iter()
                .map(|c| c.weight * delta / (delta + ks * c.velocity))
                .sum::<f64>()
    }

    fn coupling_scale(&self) -> f64 {
        (self.cfg.coupling_d2 / self.scheme.delta_intermediate.abs()).sqrt()
    }

    fn stark_at(&self, controls: &[&ControlPulse], t: f64) -> f64 {
        if !self.cfg.include_stark {
            return 0.0;
        }
        let omega = total_rabi(controls, t, self.cfg.rabi_area_per_nj);
        omega.norm_sqr() / (4.0 * self.scheme.delta_intermediate)
    }

    fn drive(
        &self,
        grid: &TimeGrid,
        k: usize,
        signal: Option<&SignalEnvelope>,
        controls: &[&ControlPulse],
    ) -> StepDrive {
        let mid = grid.mid(k);
        let omega = total_rabi(controls, mid, self.cfg.rabi_area_per_nj);
        StepDrive {
            coupling: omega * self.coupling_scale(),
            stark: (
                self.stark_at(controls, grid.start(k) + 0.25 * grid.dt),
                self.stark_at(controls, grid.start(k) + 0.75 * grid.dt),
            ),
            input: signal.map_or(ZERO, |s| s.amplitude(mid)),
        }
    }

    /// Time grid covering the signal and both controls.
    pub fn time_grid(
        &self,
        signal: &SignalEnvelope,
        control_in: &ControlPulse,
        control_out: &ControlPulse,
    ) -> Result<TimeGrid> {
        let mut lo = signal.support().0;
        let mut hi = signal.support().1;
        let mut shortest = signal.fwhm;
        for c in [control_in, control_out] {
            let (a, b) = c.support();
            lo = lo.min(a);
            hi = hi.max(b);
            if c.energy_nj > 0.0 {
                shortest = shortest.min(c.duration());
            }
        }
        let span = match self.cfg.time_span {
            Some(span) => {
                if lo + span < hi * (1.0 - 1e-12) {
                    return Err(Error::Config(format!(
                        "time_span {span:e} s does not cover the pulse supports ({:e} s)",
                        hi - lo
                    )));
                }
                span
            }
            None => hi - lo,
        };
        let dt = span / self.cfg.n_t as f64;
        if shortest / dt < MIN_POINTS_PER_PULSE {
            return Err(Error::Config(format!(
                "time grid resolves the shortest pulse ({shortest:e} s) with only {:.1} points; need >= {MIN_POINTS_PER_PULSE}",
                shortest / dt
            )));
        }
        Ok(TimeGrid {
            t0: lo,
            dt,
            n_t: self.cfg.n_t,
        })
    }

    fn integrate(
        &self,
        medium: &mut Medium,
        grid: &TimeGrid,
        steps: std::ops::Range<usize>,
        signal: Option<&SignalEnvelope>,
        controls: &[&ControlPulse],
        out: &mut Vec<Complex64>,
    ) -> Result<()> {
        for k in steps {
            let drive = self.drive(grid, k, signal, controls);
            let e = medium.step(grid.dt, drive);
            if !(e.re.is_finite() && e.im.is_finite()) {
                let (z_index, class_index) = medium.first_non_finite().unwrap_or((0, 0));
                return Err(Error::Numerical {
                    step: k,
                    z_index,
                    class_index,
                    detail: "non-finite field value".into(),
                });
            }
            out.push(e);
        }
        Ok(())
    }

    fn check_sequence(
        &self,
        signal: &SignalEnvelope,
        control_in: &ControlPulse,
        control_out: &ControlPulse,
        storage_time: f64,
    ) -> Result<()> {
        self.validate()?;
        signal.validate()?;
        control_in.validate()?;
        control_out.validate()?;
        if !(storage_time.is_finite() && storage_time >= 0.0) {
            return Err(Error::Config("storage time must be finite and >= 0".into()));
        }
        let gap = control_out.center_time - control_in.center_time;
        if (gap - storage_time).abs() > 1e-15 + 1e-9 * storage_time.abs() {
            return Err(Error::Config(format!(
                "control separation {gap:e} s does not match storage time {storage_time:e} s"
            )));
        }
        Ok(())
    }

    fn empty_wave(&self, grid: &TimeGrid) -> Result<SpinWave> {
        Ok(SpinWave::zeros(self.cfg.n_z, self.atom_classes()?, grid.t0))
    }

    fn medium(&self, wave: SpinWave) -> Medium {
        let beta = self.dispersion_beta(&wave.classes);
        Medium::new(wave, self.decay_rate(), beta)
    }

    /// Read-in stage: output before the split and the spin wave at the split.
    fn read_in_stage(
        &self,
        grid: &TimeGrid,
        split_step: usize,
        signal: &SignalEnvelope,
        controls: &[&ControlPulse],
    ) -> Result<(Vec<Complex64>, SpinWave)> {
        let mut medium = self.medium(self.empty_wave(grid)?);
        let mut out = Vec::with_capacity(split_step);
        self.integrate(&mut medium, grid, 0..split_step, Some(signal), controls, &mut out)?;
        Ok((out, medium.into_wave()))
    }

    /// Input arriving after the split, propagated through an initially empty medium.
    fn late_leak_stage(
        &self,
        grid: &TimeGrid,
        split_step: usize,
        signal: &SignalEnvelope,
        controls: &[&ControlPulse],
    ) -> Result<(Vec<Complex64>, SpinWave)> {
        let mut wave = self.empty_wave(grid)?;
        wave.time = grid.start(split_step);
        let n = grid.n_t - split_step;
        if signal.support().1 < grid.start(split_step) || signal.mu_in == 0.0 {
            return Ok((vec![ZERO; n], wave));
        }
        let mut medium = self.medium(wave);
        let mut out = Vec::with_capacity(n);
        let steps = split_step..grid.n_t;
        self.integrate(&mut medium, grid, steps, Some(signal), controls, &mut out)?;
        Ok((out, medium.into_wave()))
    }

    /// Stored spin wave radiating with no input; mirrored along the cell for backward emission.
    fn read_out_stage(
        &self,
        grid: &TimeGrid,
        split_step: usize,
        snapshot: &SpinWave,
        direction: RetrievalDirection,
        controls: &[&ControlPulse],
    ) -> Result<(Vec<Complex64>, SpinWave)> {
        let wave = match direction {
            RetrievalDirection::Forward => snapshot.clone(),
            RetrievalDirection::Backward => snapshot.reversed(),
        };
        let mut medium = self.medium(wave);
        let mut out = Vec::with_capacity(grid.n_t - split_step);
        self.integrate(&mut medium, grid, split_step..grid.n_t, None, controls, &mut out)?;
        let mut wave = medium.into_wave();
        if direction == RetrievalDirection::Backward {
            wave = wave.reversed();
        }
        Ok((out, wave))
    }

    /// Read-in efficiency alone, without integrating the retrieval.
    pub fn read_in_efficiency(
        &self,
        signal: &SignalEnvelope,
        control_in: &ControlPulse,
        control_out: &ControlPulse,
        storage_time: f64,
    ) -> Result<f64> {
        self.check_sequence(signal, control_in, control_out, storage_time)?;
        let grid = self.time_grid(signal, control_in, control_out)?;
        let split_step = grid.steps_before(control_in.center_time + 0.5 * storage_time);
        let controls = [control_in, control_out];
        let (pre, _) = self.read_in_stage(&grid, split_step, signal, &controls)?;
        let (late, _) = self.late_leak_stage(&grid, split_step, signal, &controls)?;
        let leak: f64 = pre.iter().chain(&late).map(|e| e.norm_sqr()).sum::<f64>() * grid.dt;
        Ok(1.0 - ratio(leak, input_photons(signal, &grid)))
    }

    /// Full storage and retrieval of `signal`.
    pub fn run_memory(
        &self,
        signal: &SignalEnvelope,
        control_in: &ControlPulse,
        control_out: &ControlPulse,
        storage_time: f64,
    ) -> Result<MemoryRunResult> {
        self.check_sequence(signal, control_in, control_out, storage_time)?;
        let grid = self.time_grid(signal, control_in, control_out)?;
        let split_time = control_in.center_time + 0.5 * storage_time;
        let split_step = grid.steps_before(split_time);
        let controls = [control_in, control_out];
        let direction = self.cfg.retrieval_direction;

        let (pre, snapshot) = self.read_in_stage(&grid, split_step, signal, &controls)?;
        let (late, late_wave) = self.late_leak_stage(&grid, split_step, signal, &controls)?;
        let (retrieved, out_wave) =
            self.read_out_stage(&grid, split_step, &snapshot, direction, &controls)?;

        let envelope = |t0: f64, values: Vec<Complex64>| SampledEnvelope {
            t0,
            dt: grid.dt,
            values,
        };
        let input_envelope = envelope(
            grid.mid(0),
            (0..grid.n_t).map(|k| signal.amplitude(grid.mid(k))).collect(),
        );
        let mu_in = input_envelope.photon_number();
        let transmitted_envelope = envelope(grid.mid(0), pre);
        let late_leak_envelope = envelope(grid.mid(split_step), late);
        let retrieved_envelope = envelope(grid.mid(split_step), retrieved);
        let leak = transmitted_envelope.photon_number() + late_leak_envelope.photon_number();
        let eta_read_in = 1.0 - ratio(leak, mu_in);
        let eta_mem = ratio(retrieved_envelope.photon_number(), mu_in);
        let mut residual = out_wave;
        for (r, l) in residual.data.iter_mut().zip(&late_wave.data) {
            *r += l;
        }
        Ok(MemoryRunResult {
            grid,
            input_envelope,
            transmitted_envelope,
            late_leak_envelope,
            retrieved_envelope,
            spinwave_snapshot: snapshot,
            split_time,
            split_step,
            residual_stored: residual.stored_photons(),
            mu_in,
            eta_read_in,
            eta_read_out: ratio(eta_mem, eta_read_in),
            eta_mem,
            direction,
            control_in: control_in.clone(),
            control_out: control_out.clone(),
        })
    }

    /// Re-runs the read-out stage of `result` from its stored spin wave.
    ///
    /// The read-in control's tail is kept; `control_out` replaces the
    /// original read-out pulse.
    pub fn retrieve_from_snapshot(
        &self,
        result: &MemoryRunResult,
        control_out: &ControlPulse,
        direction: RetrievalDirection,
    ) -> Result<MemoryRunResult> {
        control_out.validate()?;
        let grid = result.grid;
        let controls = [&result.control_in, control_out];
        let (retrieved, wave) = self.read_out_stage(
            &grid,
            result.split_step,
            &result.spinwave_snapshot,
            direction,
            &controls,
        )?;
        let retrieved_envelope = SampledEnvelope {
            t0: grid.mid(result.split_step),
            dt: grid.dt,
            values: retrieved,
        };
        let eta_mem = ratio(retrieved_envelope.photon_number(), result.mu_in);
        Ok(MemoryRunResult {
            retrieved_envelope,
            residual_stored: wave.stored_photons(),
            eta_mem,
            eta_read_out: ratio(eta_mem, result.eta_read_in),
            direction,
            control_out: control_out.clone(),
            ..result.clone()
        })
    }

    /// Read-out with the stored spin wave mirrored along the cell (z → L − z)
    /// and emission towards the entrance face.
    pub fn retrieve_backward(
        &self,
        result: &MemoryRunResult,
        control_out: &ControlPulse,
    ) -> Result<MemoryRunResult> {
        self.retrieve_from_snapshot(result, control_out, RetrievalDirection::Backward)
    }

    /// Finds the coupling d₂ that reproduces `target_read_in` for the given sequence.
    ///
    /// The read-in efficiency grows monotonically with the coupling at fixed
    /// fields, so the root is bracketed by doubling and then refined with
    /// the Illinois variant of regula falsi.
    pub fn calibrate_coupling(
        &self,
        target_read_in: f64,
        signal: &SignalEnvelope,
        control_in: &ControlPulse,
        control_out: &ControlPulse,
        storage_time: f64,
    ) -> Result<f64> {
        const MAX_DOUBLINGS: usize = 40;
        const MAX_ITER: usize = 100;
        const TOL: f64 = 1e-7;
        if !(target_read_in > 0.0 && target_read_in < 1.0) {
            return Err(Error::Calibration(format!(
                "target read-in efficiency must lie in (0, 1), got {target_read_in}"
            )));
        }
        let eval = |d2: f64| -> Result<f64> {
            self.with_coupling(d2)
                .read_in_efficiency(signal, control_in, control_out, storage_time)
        };
        let (mut lo, mut f_lo) = (0.0, -target_read_in);
        let mut hi = if self.cfg.coupling_d2 > 0.0 {
            self.cfg.coupling_d2
        } else {
            1.0
        };
        let mut best = 0.0_f64;
        let mut f_hi = eval(hi)? - target_read_in;
        best = best.max(f_hi + target_read_in);
        let mut n = 0;
        while f_hi < 0.0 {
            if n == MAX_DOUBLINGS {
                return Err(Error::Calibration(format!(
                    "target {target_read_in} unreachable: read-in efficiency stays within [0, {best:.6}] for coupling up to {hi:e}"
                )));
            }
            lo = hi;
            f_lo = f_hi;
            hi *= 2.0;
            f_hi = eval(hi)? - target_read_in;
            best = best.max(f_hi + target_read_in);
            n += 1;
        }
        if f_hi.abs() <= TOL {
            return Ok(hi);
        }
        let mut side = 0i8;
        for _ in 0..MAX_ITER {
            let x = (lo * f_hi - hi * f_lo) / (f_hi - f_lo);
            let f = eval(x)? - target_read_in;
            if f.abs() <= TOL || (hi - lo) <= 1e-12 * hi {
                return Ok(x);
            }
            if f < 0.0 {
                lo = x;
                f_lo = f;
                if side == -1 {
                    f_hi *= 0.5;
                }
                side = -1;
            } else {
                hi = x;
                f_hi = f;
                if side == 1 {
                    f_lo *= 0.5;
                }
                side = 1;
            }
        }
        Err(Error::Calibration(format!(
            "coupling root-find did not converge in bracket [{lo:e}, {hi:e}]"
        )))
    }
}

fn total_rabi(controls: &[&ControlPulse], t: f64, rabi_area_per_nj: f64) -> Complex64 {
    controls
        .iter()
        .map(|c| c.rabi(t, rabi_area_per_nj))
        .sum()
}

/// Midpoint-rule photon number of the input on the solver grid.
fn input_photons(signal: &SignalEnvelope, grid: &TimeGrid) -> f64 {
    (0..grid.n_t)
        .map(|k| signal.amplitude(grid.mid(k)).norm_sqr())
        .sum::<f64>()
        * grid.dt
}

/// Rabi-frequency magnitude corresponding to a light shift of `frequency` Hz.
pub fn rabi_for_stark(scheme: &LadderScheme, frequency: f64) -> f64 {
    (4.0 * scheme.delta_intermediate.abs() * TAU * frequency).sqrt()
}
