use std::path::{Path, PathBuf};

use orca_core::detection::{Acquisition, DetectionChain, Windows};
use orca_core::experiment::{NoiseModel, PulseSequence};
use orca_core::optimizer::{Objective, SearchSettings};
use orca_core::physics::{HyperfinePathwaySet, LadderScheme, VaporEnsemble};
use orca_core::solver::{MemoryModel, SolverConfig};
use orca_core::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Complete run description. Every section defaults to the reference
/// operating point, so an empty file is a valid config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub output_dir: PathBuf,
    pub scheme: LadderScheme,
    pub ensemble: VaporEnsemble,
    pub pathways: HyperfinePathwaySet,
    pub solver: SolverConfig,
    pub sequence: PulseSequence,
    pub noise: NoiseModel,
    pub detection: DetectionSection,
    pub windows: Windows,
    pub sweep: SweepSection,
    pub optimizer: OptimizerSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            output_dir: PathBuf::from("out"),
            scheme: LadderScheme::default(),
            ensemble: VaporEnsemble::default(),
            pathways: HyperfinePathwaySet::trivial(),
            solver: SolverConfig::default(),
            sequence: PulseSequence::default(),
            noise: NoiseModel::default(),
            detection: DetectionSection::default(),
            windows: Windows::default(),
            sweep: SweepSection::default(),
            optimizer: OptimizerSection::default(),
        }
    }
}

/// Detector chain plus the time span and duration of synthetic histograms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionSection {
    pub eta_det: f64,
    pub eta_trans: f64,
    pub timing_jitter_sigma: f64,
    pub bin_width: f64,
    pub acquisition_time: f64,
    pub histogram_start: f64,
    pub histogram_stop: f64,
}

impl Default for DetectionSection {
    fn default() -> Self {
        let c = DetectionChain::default();
        Self {
            eta_det: c.eta_det,
            eta_trans: c.eta_trans,
            timing_jitter_sigma: c.timing_jitter_sigma,
            bin_width: c.bin_width,
            acquisition_time: 120.0,
            histogram_start: -1e-9,
            histogram_stop: 2e-9,
        }
    }
}

impl DetectionSection {
    pub fn chain(&self) -> DetectionChain {
        DetectionChain {
            eta_det: self.eta_det,
            eta_trans: self.eta_trans,
            timing_jitter_sigma: self.timing_jitter_sigma,
            bin_width: self.bin_width,
        }
    }

    pub fn acquisition(&self, repetition_rate: f64, seed: u64, stream: u64) -> Acquisition {
        Acquisition {
            start: self.histogram_start,
            stop: self.histogram_stop,
            acquisition_time: self.acquisition_time,
            repetition_rate,
            seed,
            stream,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    #[default]
    StorageTime,
    Energy,
    MuIn,
}

/// Grid for `sweep`: either explicit `values` or `start`/`stop`/`points`.
/// Storage times are in s, energies are total control energies in nJ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub axis: SweepAxis,
    pub values: Option<Vec<f64>>,
    pub start: Option<f64>,
    pub stop: Option<f64>,
    pub points: Option<usize>,
    /// Read-out to read-in ratio for energy sweeps; the sequence's own if unset.
    pub ratio_r: Option<f64>,
}

impl SweepSection {
    pub fn grid(&self) -> Result<Vec<f64>> {
        let range = (self.start, self.stop, self.points);
        match (&self.values, range) {
            (Some(v), (None, None, None)) => Ok(v.clone()),
            (Some(_), _) => Err(Error::Config(
                "sweep: give either values or start/stop/points, not both".into(),
            )),
            (None, (Some(a), Some(b), Some(n))) => Ok(match n {
                0 => Vec::new(),
                1 => vec![a],
                _ => (0..n)
                    .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
                    .collect(),
            }),
            (None, (None, None, None)) => Err(Error::Config(
                "sweep: no grid given (values, or start/stop/points)".into(),
            )),
            (None, _) => Err(Error::Config(
                "sweep: start, stop and points must be given together".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerMode {
    #[default]
    Control,
    Ratio,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BasisChoice {
    Gaussian,
    EnergyOnly,
    ChirpedGaussian,
    #[default]
    Piecewise,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSection {
    pub mode: OptimizerMode,
    pub objective: Objective,
    pub basis: BasisChoice,
    pub n_knots: usize,
    /// Read-in energy budget (nJ); the sequence's read-in energy if unset.
    pub energy_budget: Option<f64>,
    pub energy_lower: f64,
    pub energy_upper: f64,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub budget: usize,
    pub initial_step: f64,
    pub tolerance: f64,
    pub patience: usize,
    /// Trace CSV from an earlier run whose points are reused.
    pub resume: Option<PathBuf>,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let s = SearchSettings::default();
        Self {
            mode: OptimizerMode::Control,
            objective: Objective::EtaMem,
            basis: BasisChoice::Piecewise,
            n_knots: 8,
            energy_budget: None,
            energy_lower: 0.05,
            energy_upper: 2.0,
            ratio_min: 0.5,
            ratio_max: 20.0,
            budget: s.budget,
            initial_step: s.initial_step,
            tolerance: s.tolerance,
            patience: s.patience,
            resume: None,
        }
    }
}

impl OptimizerSection {
    pub fn settings(&self, seed: u64) -> SearchSettings {
        SearchSettings {
            budget: self.budget,
            seed,
            initial_step: self.initial_step,
            tolerance: self.tolerance,
            patience: self.patience,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| e.context(path.display()))
    }

    /// Parses `text` as overrides of the default config: tables merge key
    /// by key, so a partial `[sequence.control_out]` keeps the default
    /// timing. Setting only `sequence.storage_time` moves the read-out
    /// pulse with it.
    pub fn parse(text: &str) -> Result<Self> {
        let user: toml::Table = text.parse().map_err(|e: toml::de::Error| {
            Error::Config(e.to_string().trim_end().to_string())
        })?;
        let moves_readout = user
            .get("sequence")
            .and_then(|s| s.as_table())
            .is_some_and(|s| {
                s.contains_key("storage_time")
                    && !s
                        .get("control_out")
                        .and_then(|c| c.as_table())
                        .is_some_and(|c| c.contains_key("center_time"))
            });
        let mut merged = toml::Table::try_from(Self::default()).expect("defaults serialise");
        merge(&mut merged, user);
        let mut cfg: Self = merged
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string().trim_end().to_string()))?;
        if moves_readout {
            let seq = &mut cfg.sequence;
            seq.control_out.center_time = seq.control_in.center_time + seq.storage_time;
        }
        Ok(cfg)
    }

    pub fn model(&self) -> MemoryModel {
        MemoryModel::new(
            self.scheme.clone(),
            self.ensemble.clone(),
            self.pathways.clone(),
            self.solver.clone(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.sequence.validate()?;
        self.noise.validate()?;
        self.detection.chain().validate()?;
        let d = &self.detection;
        if !(d.acquisition_time > 0.0 && d.histogram_stop > d.histogram_start) {
            return Err(Error::Config(
                "detection: acquisition_time must be positive and histogram_stop follow histogram_start".into(),
            ));
        }
        Ok(())
    }

    /// Canonical TOML of the effective config.
    pub fn canonical(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::parse("").unwrap(), RunConfig::default());
    }

    #[test]
    fn canonical_form_round_trips() {
        let c = RunConfig::default();
        assert_eq!(RunConfig::parse(&c.canonical()).unwrap(), c);
    }

    #[test]
    fn misspelled_key_is_named() {
        let e = RunConfig::parse("[sequence]\nstorage_tme = 1e-9\n").unwrap_err();
        assert!(e.to_string().contains("storage_tme"), "{e}");
        let e = RunConfig::parse("sed = 3\n").unwrap_err();
        assert!(e.to_string().contains("sed"), "{e}");
    }

    #[test]
    fn partial_tables_keep_defaults() {
        let c = RunConfig::parse("[sequence.control_out]\nenergy_nj = 2.0\n").unwrap();
        assert_eq!(c.sequence.control_out.energy_nj, 2.0);
        assert_eq!(c.sequence.control_out.center_time, 660e-12);
        let c = RunConfig::parse("[sequence]\nstorage_time = 1.5e-9\n").unwrap();
        assert_eq!(c.sequence.control_out.center_time, 1.5e-9);
        c.sequence.validate().unwrap();
    }

    #[test]
    fn sweep_grid_forms() {
        let mut s = SweepSection {
            values: Some(vec![1.0, 2.0]),
            ..Default::default()
        };
        assert_eq!(s.grid().unwrap(), vec![1.0, 2.0]);
        s.start = Some(0.0);
        assert!(s.grid().is_err());
        assert!(SweepSection::default().grid().is_err());
        let r = SweepSection {
            start: Some(0.0),
            stop: Some(3e-9),
            points: Some(31),
            ..Default::default()
        };
        assert_eq!(r.grid().unwrap().len(), 31);
        let empty = SweepSection {
            values: Some(vec![]),
            ..Default::default()
        };
        assert!(empty.grid().unwrap().is_empty());
    }
}
