use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use orca_core::detection::{extract_efficiencies, synthesize_histogram, Histogram, NoiseLevel};
use orca_core::experiment::{
    energy_points, lifetime_fit, photon_number_series, run_sequence, storage_time_points,
    NoiseModel, StoragePoint,
};
use orca_core::metrics::{FigureInputs, Measured, MemoryFigures};
use orca_core::optimizer::{
    optimize_control, optimize_ratio, trace_from_csv, trace_to_csv, ControlParameterization,
};
use orca_core::pulse::SampledEnvelope;
use orca_core::solver::MemoryRunResult;
use orca_core::{Error, Result};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::config::{BasisChoice, OptimizerMode, RunConfig, SweepAxis};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Identifies the config, seed and program version behind an output file.
#[derive(Debug, Clone, Serialize)]
pub struct Provenance {
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
}

impl Provenance {
    pub fn of(cfg: &RunConfig) -> Self {
        Self {
            config_sha256: cfg.hash(),
            seed: cfg.seed,
            version: format!("orca {VERSION}"),
        }
    }

    fn csv_header(&self) -> String {
        format!(
            "# config_sha256={}\n# seed={}\n# version={}\n",
            self.config_sha256, self.seed, self.version
        )
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Config(format!("{}: {e}", path.display()))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| io_err(&path, e))?;
    Ok(path)
}

/// Pretty JSON of `body` with a `provenance` object added.
fn with_provenance(prov: &Provenance, body: Value) -> String {
    let mut m = Map::new();
    m.insert("provenance".into(), json!(prov));
    if let Value::Object(fields) = body {
        m.extend(fields);
    }
    serde_json::to_string_pretty(&Value::Object(m)).expect("json") + "\n"
}

/// Figures plus the efficiency triplet as one flat object. When the
/// figures cannot be formed (e.g. a negative measured η_mem) their
/// fields are null and `figures_error` says why.
fn figures_object(inputs: &FigureInputs, eta_read_in: Measured, eta_read_out: Measured) -> Value {
    let mut m = Map::new();
    m.insert("eta_read_in".into(), json!(eta_read_in.value));
    m.insert("eta_read_in_err".into(), json!(eta_read_in.err));
    m.insert("eta_read_out".into(), json!(eta_read_out.value));
    m.insert("eta_read_out_err".into(), json!(eta_read_out.err));
    match MemoryFigures::compute(inputs) {
        Ok(f) => {
            if let Value::Object(fields) = json!(f) {
                m.extend(fields);
            }
            m.insert("figures_error".into(), Value::Null);
        }
        Err(e) => {
            m.insert("mu_in".into(), json!(inputs.mu_in.value));
            m.insert("n_noise".into(), json!(inputs.noise.value));
            m.insert("eta_mem".into(), json!(inputs.eta_mem.value));
            m.insert("eta_mem_err".into(), json!(inputs.eta_mem.err));
            m.insert("figures_error".into(), json!(e.to_string()));
        }
    }
    Value::Object(m)
}

fn noise_level(noise: &NoiseModel, total_energy: f64) -> NoiseLevel {
    NoiseLevel {
        per_window: noise.per_window(total_energy),
        window: noise.window,
    }
}

fn envelopes_csv(prov: &Provenance, r: &MemoryRunResult) -> String {
    let detected = r.detected_envelope();
    let n = r.input_envelope.values.len();
    let pad = |e: &SampledEnvelope, k: usize| -> f64 {
        let offset = ((e.t0 - r.input_envelope.t0) / e.dt).round() as isize;
        let i = k as isize - offset;
        if i >= 0 && (i as usize) < e.values.len() {
            e.values[i as usize].norm_sqr()
        } else {
            0.0
        }
    };
    let mut s = prov.csv_header();
    s.push_str("time_s,input_flux,detected_flux,transmitted_flux,late_leak_flux,retrieved_flux\n");
    for k in 0..n {
        let _ = writeln!(
            s,
            "{:e},{:e},{:e},{:e},{:e},{:e}",
            r.input_envelope.time(k),
            r.input_envelope.values[k].norm_sqr(),
            pad(&detected, k),
            pad(&r.transmitted_envelope, k),
            pad(&r.late_leak_envelope, k),
            pad(&r.retrieved_envelope, k),
        );
    }
    s
}

pub struct Histograms {
    pub input: Histogram,
    pub memory: Histogram,
    pub noise: Histogram,
}

/// Synthetic control-off reference, memory run and noise-only histograms.
pub fn synthesize(cfg: &RunConfig, r: &MemoryRunResult) -> Result<Histograms> {
    let d = &cfg.detection;
    let chain = d.chain();
    let rate = cfg.sequence.repetition_rate_signal;
    let noise = noise_level(&cfg.noise, cfg.sequence.total_energy());
    let empty = SampledEnvelope {
        t0: r.input_envelope.t0,
        dt: r.input_envelope.dt,
        values: Vec::new(),
    };
    Ok(Histograms {
        input: synthesize_histogram(&r.input_envelope, &chain, NoiseLevel::NONE, &d.acquisition(rate, cfg.seed, 0))?,
        memory: synthesize_histogram(&r.detected_envelope(), &chain, noise, &d.acquisition(rate, cfg.seed, 1))?,
        noise: synthesize_histogram(&empty, &chain, noise, &d.acquisition(rate, cfg.seed, 2))?,
    })
}

/// Model figures for the configured point: solver efficiencies and the
/// noise model, without counting statistics.
pub fn predicted_figures(cfg: &RunConfig, r: &MemoryRunResult) -> Value {
    let d = &cfg.detection;
    let inputs = FigureInputs {
        mu_in: Measured::exact(r.mu_in),
        noise: Measured::exact(cfg.noise.per_window(cfg.sequence.total_energy())),
        eta_mem: Measured::exact(r.eta_mem),
        eta_trans: Measured::exact(d.eta_trans),
        eta_det: Measured::exact(d.eta_det),
    };
    figures_object(
        &inputs,
        Measured::exact(r.eta_read_in),
        Measured::exact(r.eta_read_out),
    )
}

pub fn simulate(cfg: &RunConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    let prov = Provenance::of(cfg);
    let model = cfg.model();
    let r = run_sequence(&model, &cfg.sequence)?;
    let h = synthesize(cfg, &r)?;
    write(out, "envelopes.csv", &envelopes_csv(&prov, &r))?;
    for (name, hist) in [
        ("histogram_input.csv", &h.input),
        ("histogram_memory.csv", &h.memory),
        ("histogram_noise.csv", &h.noise),
    ] {
        write(out, name, &(prov.csv_header() + &hist.to_csv()))?;
    }
    write(out, "figures.json", &with_provenance(&prov, predicted_figures(cfg, &r)))?;
    write(out, "analysis.json", &with_provenance(&prov, analysis_body(cfg, &h)?))?;
    let run = json!({
        "mu_in": r.mu_in,
        "eta_read_in": r.eta_read_in,
        "eta_read_out": r.eta_read_out,
        "eta_mem": r.eta_mem,
        "leak_fraction": r.leak_fraction(),
        "residual_stored": r.residual_stored,
        "split_time_s": r.split_time,
        "direction": r.direction,
        "coupling_d2": model.cfg.coupling_d2,
        "noise_per_window": cfg.noise.per_window(cfg.sequence.total_energy()),
    });
    write(out, "run.json", &with_provenance(&prov, run))?;
    Ok(())
}

fn read_histogram(path: &Path) -> Result<Histogram> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    Histogram::from_csv(&text).map_err(|e| e.context(path.display()))
}

/// Efficiencies and figures recovered from three histograms.
pub fn analysis_body(cfg: &RunConfig, hs: &Histograms) -> Result<Value> {
    let chain = cfg.detection.chain();
    let e = extract_efficiencies(&hs.input, &hs.memory, &hs.noise, &chain, &cfg.windows)?;
    let inputs = FigureInputs {
        mu_in: Measured::new(e.mu_in, e.mu_in_err),
        noise: Measured::new(e.noise, e.noise_err),
        eta_mem: Measured::new(e.eta_mem, e.eta_mem_err),
        eta_trans: Measured::exact(chain.eta_trans),
        eta_det: Measured::exact(chain.eta_det),
    };
    let mut body = figures_object(
        &inputs,
        Measured::new(e.eta_read_in, e.eta_read_in_err),
        Measured::new(e.eta_read_out, e.eta_read_out_err),
    );
    if let Value::Object(m) = &mut body {
        m.insert("consistent".into(), json!(e.consistent));
    }
    Ok(body)
}

/// Figures recovered from three histogram files.
pub fn analyze(cfg: &RunConfig, input: &Path, memory: &Path, noise: &Path) -> Result<String> {
    cfg.detection.chain().validate()?;
    let paths = [input, memory, noise];
    let hs = Histograms {
        input: read_histogram(input)?,
        memory: read_histogram(memory)?,
        noise: read_histogram(noise)?,
    };
    for (i, other) in [&hs.memory, &hs.noise].into_iter().enumerate() {
        if !hs.input.same_binning(other) {
            return Err(Error::Extraction(format!(
                "binning mismatch between {} and {}",
                paths[0].display(),
                paths[i + 1].display()
            )));
        }
    }
    Ok(with_provenance(&Provenance::of(cfg), analysis_body(cfg, &hs)?))
}

fn error_cell(e: &Error) -> String {
    format!("\"{}\"", e.to_string().replace('"', "'"))
}

pub fn sweep(cfg: &RunConfig, out: &Path) -> Result<PathBuf> {
    cfg.validate()?;
    let grid = cfg.sweep.grid()?;
    let model = cfg.model();
    let base = &cfg.sequence;
    let mut s = Provenance::of(cfg).csv_header();
    match cfg.sweep.axis {
        SweepAxis::StorageTime => {
            s.push_str("row,storage_time_s,eta_read_in,eta_read_out,eta_mem,lifetime_s,lifetime_err_s,error\n");
            let points = storage_time_points(&model, base, &grid);
            let mut ok: Vec<StoragePoint> = Vec::new();
            for (t, p) in grid.iter().zip(&points) {
                match p {
                    Ok(p) => {
                        ok.push(*p);
                        let _ = writeln!(
                            s,
                            "point,{t:e},{:e},{:e},{:e},,,",
                            p.eta_read_in, p.eta_read_out, p.eta_mem
                        );
                    }
                    Err(e) => {
                        let _ = writeln!(s, "point,{t:e},,,,,,{}", error_cell(e));
                    }
                }
            }
            if !grid.is_empty() {
                match lifetime_fit(base, &ok) {
                    Ok(f) => {
                        let _ = writeln!(s, "fit,,,,,{:e},{:e},", f.lifetime, f.lifetime_err);
                    }
                    Err(e) => {
                        let _ = writeln!(s, "fit,,,,,,,{}", error_cell(&e));
                    }
                }
            }
        }
        SweepAxis::Energy => {
            s.push_str("total_energy_nj,energy_in_nj,energy_out_nj,eta_read_in,eta_read_out,eta_mem,error\n");
            let r = cfg.sweep.ratio_r.unwrap_or_else(|| base.ratio_r());
            for (e, p) in grid.iter().zip(energy_points(&model, base, &grid, r)) {
                let _ = match p {
                    Ok(p) => writeln!(
                        s,
                        "{e:e},{:e},{:e},{:e},{:e},{:e},",
                        p.energy_in, p.energy_out, p.eta_read_in, p.eta_read_out, p.eta_mem
                    ),
                    Err(err) => writeln!(s, "{e:e},,,,,,{}", error_cell(&err)),
                };
            }
        }
        SweepAxis::MuIn => {
            s.push_str("mu_in,input,memory,noise,error\n");
            match photon_number_series(&model, base, &cfg.noise, &grid) {
                Ok(rows) => {
                    for r in rows {
                        let _ = writeln!(s, "{:e},{:e},{:e},{:e},", r.mu_in, r.input, r.memory, r.noise);
                    }
                }
                Err(e) => {
                    for m in &grid {
                        let _ = writeln!(s, "{m:e},,,,{}", error_cell(&e));
                    }
                }
            }
        }
    }
    write(out, "sweep.csv", &s)
}

pub fn optimize(cfg: &RunConfig, out: &Path, resume: Option<&Path>) -> Result<()> {
    cfg.validate()?;
    let o = &cfg.optimizer;
    let model = cfg.model();
    let base = &cfg.sequence;
    let prov = Provenance::of(cfg);
    match o.mode {
        OptimizerMode::Ratio => {
            let r = optimize_ratio(&model, base, (o.ratio_min, o.ratio_max), o.budget)?;
            let mut s = prov.csv_header() + "eval,ratio_r,objective\n";
            for (i, (ratio, v)) in r.evaluations.iter().enumerate() {
                let _ = writeln!(s, "{i},{ratio},{v}");
            }
            write(out, "trace.csv", &s)?;
            let body = json!({
                "mode": "ratio",
                "total_energy_nj": base.total_energy(),
                "best_ratio_r": r.best_r,
                "best_value": r.best_value,
                "evaluations": r.evaluations.len(),
            });
            write(out, "best.json", &with_provenance(&prov, body))?;
        }
        OptimizerMode::Control => {
            let budget = o.energy_budget.unwrap_or(base.control_in.energy_nj);
            let param = match o.basis {
                BasisChoice::Gaussian => ControlParameterization::gaussian(base, budget),
                BasisChoice::EnergyOnly => {
                    ControlParameterization::energy_only(base, o.energy_lower, o.energy_upper)
                }
                BasisChoice::ChirpedGaussian => ControlParameterization::chirped_gaussian(base, budget),
                BasisChoice::Piecewise => ControlParameterization::piecewise(base, o.n_knots, budget),
            };
            let resume_path = resume.map(Path::to_path_buf).or_else(|| o.resume.clone());
            let cached = match &resume_path {
                Some(p) => {
                    let text = fs::read_to_string(p).map_err(|e| io_err(p, e))?;
                    let (names, rows) = trace_from_csv(&text).map_err(|e| e.context(p.display()))?;
                    if names != param.names() {
                        return Err(Error::Config(format!(
                            "{}: trace parameters {names:?} do not match {:?}",
                            p.display(),
                            param.names()
                        )));
                    }
                    Some(rows)
                }
                None => None,
            };
            let r = optimize_control(
                &model,
                base,
                o.objective,
                &param,
                &o.settings(cfg.seed),
                cached.as_deref(),
            )?;
            write(out, "trace.csv", &(prov.csv_header() + &trace_to_csv(&r.names, &r.trace)))?;
            let best_seq = param.build(base, &r.best_params);
            let body = json!({
                "mode": "control",
                "objective": o.objective,
                "parameterization": param,
                "best_params": r.names.iter().zip(&r.best_params).map(|(n, v)| (n.clone(), json!(v))).collect::<Map<String, Value>>(),
                "best_value": r.best_value,
                "initial_value": r.initial_value,
                "converged": r.converged,
                "evaluations": r.evaluations,
                "failures": r.failures,
                "best_control_in": best_seq.control_in,
                "storage_time_s": best_seq.storage_time,
            });
            write(out, "best.json", &with_provenance(&prov, body))?;
        }
    }
    Ok(())
}
