//! Derivative-free optimisation of the read-in control pulse.
//!
//! The search runs a bounded Nelder–Mead simplex on parameters scaled to
//! the unit cube, restarting around the incumbent with seeded random
//! perturbations until the budget runs out or restarts stop improving.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiment::{run_sequence, PulseSequence};
use crate::pulse::{ControlShape, GAUSSIAN_TBP};
use crate::solver::MemoryModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    #[default]
    EtaMem,
    EtaReadIn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Basis {
    Gaussian,
    ChirpedGaussian,
    /// Gaussian times a piecewise-linear modulation with `n_knots` knots over `span` s.
    Piecewise { n_knots: usize, span: f64 },
}

/// One search coordinate. Equal bounds fix the parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamBound {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub initial: f64,
}

impl ParamBound {
    fn new(name: impl Into<String>, lower: f64, upper: f64, initial: f64) -> Self {
        Self {
            name: name.into(),
            lower,
            upper,
            initial,
        }
    }

    fn free(&self) -> bool {
        self.upper > self.lower
    }
}

/// Maps a parameter vector onto the read-in control of a pulse sequence.
///
/// Recognised names: `center` (shift of the read-in centre, s; the
/// read-out pulse stays put), `duration` (intensity FWHM, s), `energy`
/// (nJ), `chirp` (rad/s²) and `knot0`, `knot1`, … for the modulation.
/// Without an `energy` parameter the pulse carries the full budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlParameterization {
    pub basis: Basis,
    pub params: Vec<ParamBound>,
    pub total_energy_budget: f64,
}

impl ControlParameterization {
    /// Centre, duration and energy of a plain Gaussian.
    pub fn gaussian(base: &PulseSequence, budget: f64) -> Self {
        let c = &base.control_in;
        let d = c.duration();
        Self {
            basis: Basis::Gaussian,
            params: vec![
                ParamBound::new("center", -d, d, 0.0),
                ParamBound::new("duration", 0.5 * d, 2.5 * d, d),
                ParamBound::new("energy", 0.05 * budget, budget, c.energy_nj.min(budget)),
            ],
            total_energy_budget: budget,
        }
    }

    /// Energy of the base pulse only.
    pub fn energy_only(base: &PulseSequence, lower: f64, upper: f64) -> Self {
        let init = base.control_in.energy_nj.clamp(lower, upper);
        Self {
            basis: Basis::Gaussian,
            params: vec![ParamBound::new("energy", lower, upper, init)],
            total_energy_budget: upper,
        }
    }

    /// Duration and linear chirp at the full energy budget.
    pub fn chirped_gaussian(base: &PulseSequence, budget: f64) -> Self {
        let d = base.control_in.duration();
        // Chirp that sweeps about one bandwidth across the pulse.
        let c = 2.0 * std::f64::consts::TAU * GAUSSIAN_TBP / (d * d);
        Self {
            basis: Basis::ChirpedGaussian,
            params: vec![
                ParamBound::new("duration", 0.5 * d, 2.5 * d, d),
                ParamBound::new("chirp", -c, c, 0.0),
            ],
            total_energy_budget: budget,
        }
    }

    /// `n_knots` modulation amplitudes in [0, 3] over three pulse widths,
    /// at the full energy budget; starts from the plain Gaussian.
    pub fn piecewise(base: &PulseSequence, n_knots: usize, budget: f64) -> Self {
        let span = 3.0 * base.control_in.duration();
        Self {
            basis: Basis::Piecewise { n_knots, span },
            params: (0..n_knots)
                .map(|k| ParamBound::new(format!("knot{k}"), 0.0, 3.0, 1.0))
                .collect(),
            total_energy_budget: budget,
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_energy_budget.is_finite() && self.total_energy_budget > 0.0) {
            return Err(Error::Config("total_energy_budget must be positive".into()));
        }
        for p in &self.params {
            if !(p.lower.is_finite() && p.upper.is_finite() && p.lower <= p.upper) {
                return Err(Error::Config(format!("bad bounds for '{}'", p.name)));
            }
            if !(p.lower..=p.upper).contains(&p.initial) {
                return Err(Error::Config(format!("initial '{}' outside its bounds", p.name)));
            }
            let known = matches!(p.name.as_str(), "center" | "duration" | "energy" | "chirp")
                || p.name
                    .strip_prefix("knot")
                    .and_then(|k| k.parse::<usize>().ok())
                    .is_some();
            if !known {
                return Err(Error::Config(format!("unknown control parameter '{}'", p.name)));
            }
            if p.name == "energy" && p.lower < 0.0 {
                return Err(Error::Config("energy bounds must be >= 0".into()));
            }
            if p.name == "duration" && p.lower <= 0.0 {
                return Err(Error::Config("duration bounds must be > 0".into()));
            }
            if p.name.starts_with("knot") && p.lower < 0.0 {
                return Err(Error::Config("modulation knots must be >= 0".into()));
            }
        }
        if let Basis::Piecewise { n_knots, span } = self.basis {
            if n_knots == 0 || !(span > 0.0) {
                return Err(Error::Config("piecewise basis needs knots and a positive span".into()));
            }
            for k in 0..n_knots {
                if !self.params.iter().any(|p| p.name == format!("knot{k}")) {
                    return Err(Error::Config(format!("missing parameter 'knot{k}'")));
                }
            }
        }
        Ok(())
    }

    pub fn initial(&self) -> Vec<f64> {
        self.params.iter().map(|p| p.initial).collect()
    }

    /// Pulse sequence for the full physical parameter vector `x`.
    pub fn build(&self, base: &PulseSequence, x: &[f64]) -> PulseSequence {
        let mut seq = base.clone();
        let c = &mut seq.control_in;
        c.energy_nj = self.total_energy_budget;
        let mut knots = Vec::new();
        let mut chirp = 0.0;
        for (p, &v) in self.params.iter().zip(x) {
            let v = v.clamp(p.lower, p.upper);
            match p.name.as_str() {
                "center" => c.center_time = base.control_in.center_time + v,
                "duration" => c.bandwidth = GAUSSIAN_TBP / v,
                "energy" => c.energy_nj = v.min(self.total_energy_budget),
                "chirp" => chirp = v,
                name => {
                    if let Some(k) = name.strip_prefix("knot").and_then(|k| k.parse::<usize>().ok()) {
                        if knots.len() <= k {
                            knots.resize(k + 1, 1.0);
                        }
                        knots[k] = v;
                    }
                }
            }
        }
        c.shape = match self.basis {
            Basis::Gaussian => ControlShape::Gaussian,
            Basis::ChirpedGaussian => ControlShape::ChirpedGaussian { chirp_rate: chirp },
            Basis::Piecewise { span, .. } => ControlShape::modulated(knots, span),
        };
        seq.storage_time = seq.control_out.center_time - seq.control_in.center_time;
        seq
    }
}

/// Objective value of one pulse sequence.
pub fn evaluate(model: &MemoryModel, seq: &PulseSequence, objective: Objective) -> Result<f64> {
    match objective {
        Objective::EtaMem => Ok(run_sequence(model, seq)?.eta_mem),
        Objective::EtaReadIn => {
            seq.validate()?;
            model.read_in_efficiency(&seq.signal, &seq.control_in, &seq.control_out, seq.storage_time)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub eval: usize,
    pub restart: usize,
    pub params: Vec<f64>,
    /// NaN when the evaluation failed.
    pub objective: f64,
    pub best: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub names: Vec<String>,
    pub best_params: Vec<f64>,
    pub best_value: f64,
    pub initial_value: f64,
    pub converged: bool,
    pub evaluations: usize,
    pub trace: Vec<TraceRow>,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchSettings {
    /// Maximum number of objective evaluations.
    pub budget: usize,
    pub seed: u64,
    /// Initial simplex edge in unit-cube coordinates.
    pub initial_step: f64,
    /// Relative spread of simplex values that ends a restart.
    pub tolerance: f64,
    /// Consecutive restarts without improvement before stopping.
    pub patience: usize,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            budget: 300,
            seed: 0,
            initial_step: 0.1,
            tolerance: 1e-4,
            patience: 2,
        }
    }
}

fn key(x: &[f64]) -> Vec<u64> {
    x.iter().map(|v| v.to_bits()).collect()
}

/// Bookkeeping shared by every evaluation of one search.
struct Evaluator<'a, F> {
    f: F,
    lower: Vec<f64>,
    upper: Vec<f64>,
    free: Vec<usize>,
    fixed: Vec<f64>,
    cache: HashMap<Vec<u64>, f64>,
    trace: Vec<TraceRow>,
    failures: Vec<String>,
    budget: usize,
    best: f64,
    best_x: Vec<f64>,
    restart: usize,
    _p: std::marker::PhantomData<&'a ()>,
}

impl<F: Fn(&[f64]) -> Result<f64> + Sync> Evaluator<'_, F> {
    fn physical(&self, u: &[f64]) -> Vec<f64> {
        let mut x = self.fixed.clone();
        for (&i, &ui) in self.free.iter().zip(u) {
            let ui = ui.clamp(0.0, 1.0);
            x[i] = self.lower[i] + ui * (self.upper[i] - self.lower[i]);
        }
        x
    }

    fn remaining(&self) -> usize {
        self.budget - self.trace.len()
    }

    /// Evaluates a batch in parallel and records it in submission order.
    /// Returns −objective for minimisation, +∞ on failure.
    fn batch(&mut self, us: &[Vec<f64>]) -> Vec<f64> {
        let xs: Vec<Vec<f64>> = us.iter().map(|u| self.physical(u)).collect();
        let cache = &self.cache;
        let f = &self.f;
        let results: Vec<Result<f64>> = xs
            .par_iter()
            .map(|x| match cache.get(&key(x)) {
                Some(v) if v.is_nan() => Err(Error::Optimization("failed in resumed trace".into())),
                Some(v) => Ok(*v),
                None => f(x),
            })
            .collect();
        let mut out = Vec::with_capacity(us.len());
        for (x, r) in xs.into_iter().zip(results) {
            let value = match r {
                Ok(v) if v.is_finite() => v,
                Ok(v) => {
                    self.failures.push(format!("{x:?}: non-finite objective {v}"));
                    f64::NAN
                }
                Err(e) => {
                    self.failures.push(format!("{x:?}: {e}"));
                    f64::NAN
                }
            };
            if value > self.best || (self.best.is_nan() && !value.is_nan()) {
                self.best = value;
                self.best_x = x.clone();
            }
            self.trace.push(TraceRow {
                eval: self.trace.len(),
                restart: self.restart,
                params: x,
                objective: value,
                best: self.best,
            });
            out.push(if value.is_nan() { f64::INFINITY } else { -value });
        }
        out
    }

    fn one(&mut self, u: &[f64]) -> f64 {
        self.batch(&[u.to_vec()])[0]
    }
}

/// Maximises `f` over the box `bounds` starting from the bounds' initial values.
///
/// Every requested point is looked up in `resume` first, so replaying a
/// trace reproduces the search without re-running the objective.
pub fn maximize<F>(
    f: F,
    bounds: &[ParamBound],
    settings: &SearchSettings,
    resume: Option<&[TraceRow]>,
) -> Result<OptimizationResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let free: Vec<usize> = (0..bounds.len()).filter(|&i| bounds[i].free()).collect();
    let d = free.len();
    if settings.budget < (10 * d).max(1) {
        return Err(Error::Config(format!(
            "budget {} below 10 evaluations per free parameter ({d})",
            settings.budget
        )));
    }
    let mut ev = Evaluator {
        f,
        lower: bounds.iter().map(|b| b.lower).collect(),
        upper: bounds.iter().map(|b| b.upper).collect(),
        free: free.clone(),
        fixed: bounds.iter().map(|b| b.initial).collect(),
        cache: resume
            .unwrap_or(&[])
            .iter()
            .map(|r| (key(&r.params), r.objective))
            .collect(),
        trace: Vec::new(),
        failures: Vec::new(),
        budget: settings.budget,
        best: f64::NAN,
        best_x: bounds.iter().map(|b| b.initial).collect(),
        restart: 0,
        _p: std::marker::PhantomData,
    };
    let to_unit = |x: &[f64]| -> Vec<f64> {
        free.iter()
            .map(|&i| (x[i] - bounds[i].lower) / (bounds[i].upper - bounds[i].lower))
            .collect()
    };
    let x0: Vec<f64> = bounds.iter().map(|b| b.initial).collect();
    let g0 = ev.one(&to_unit(&x0));
    let initial_value = -g0;
    let mut converged = d == 0;
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    let mut stale = 0;

    while d > 0 && ev.remaining() > d {
        let centre = to_unit(&ev.best_x);
        let mut simplex = vec![centre.clone()];
        for k in 0..d {
            let mut v = centre.clone();
            let mut step = settings.initial_step;
            if ev.restart > 0 {
                step *= rng.random_range(0.5..1.5);
                if rng.random_bool(0.5) {
                    step = -step;
                }
            }
            if !(0.0..=1.0).contains(&(v[k] + step)) {
                step = -step;
            }
            v[k] = (v[k] + step).clamp(0.0, 1.0);
            simplex.push(v);
        }
        let before = ev.best;
        let mut values = vec![if ev.restart == 0 { g0 } else { -ev.best }];
        values.extend(ev.batch(&simplex[1..]));
        let done = nelder_mead(&mut ev, &mut simplex, &mut values, settings.tolerance);
        let improved = ev.best > before + settings.tolerance * before.abs().max(1e-12);
        if done && !improved {
            stale += 1;
        } else {
            stale = 0;
        }
        converged = done && stale >= 1;
        if stale >= settings.patience {
            break;
        }
        ev.restart += 1;
    }
    if ev.best.is_nan() {
        return Err(Error::Optimization(format!(
            "all {} evaluations failed: {}",
            ev.trace.len(),
            ev.failures.join("; ")
        )));
    }
    Ok(OptimizationResult {
        names: bounds.iter().map(|b| b.name.clone()).collect(),
        best_params: ev.best_x.clone(),
        best_value: ev.best,
        initial_value,
        converged,
        evaluations: ev.trace.len(),
        trace: ev.trace,
        failures: ev.failures,
    })
}

/// Runs simplex iterations until the values agree within `tol` (returns
/// true) or the budget runs out (returns false).
fn nelder_mead<F: Fn(&[f64]) -> Result<f64> + Sync>(
    ev: &mut Evaluator<'_, F>,
    simplex: &mut [Vec<f64>],
    values: &mut [f64],
    tol: f64,
) -> bool {
    let n = simplex.len() - 1;
    let clamp = |v: Vec<f64>| -> Vec<f64> { v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect() };
    let along = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> {
        a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect()
    };
    loop {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
        let sorted_s: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let sorted_v: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        simplex.clone_from_slice(&sorted_s);
        values.copy_from_slice(&sorted_v);

        let (best, worst) = (values[0], values[n]);
        if best.is_finite() && worst.is_finite() && (worst - best) <= tol * best.abs().max(1e-12) {
            return true;
        }
        let diameter = simplex[1..]
            .iter()
            .map(|v| v.iter().zip(&simplex[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        if diameter < 1e-10 {
            return true;
        }
        if ev.remaining() == 0 {
            return false;
        }
        let centroid: Vec<f64> = (0..simplex[0].len())
            .map(|k| simplex[..n].iter().map(|v| v[k]).sum::<f64>() / n as f64)
            .collect();
        let xr = clamp(along(&centroid, &simplex[n], -1.0));
        let fr = ev.one(&xr);
        if fr < values[0] {
            if ev.remaining() == 0 {
                simplex[n] = xr;
                values[n] = fr;
                continue;
            }
            let xe = clamp(along(&centroid, &simplex[n], -2.0));
            let fe = ev.one(&xe);
            if fe < fr {
                simplex[n] = xe;
                values[n] = fe;
            } else {
                simplex[n] = xr;
                values[n] = fr;
            }
        } else if fr < values[n - 1] {
            simplex[n] = xr;
            values[n] = fr;
        } else {
            if ev.remaining() == 0 {
                return false;
            }
            let (xc, fc) = if fr < values[n] {
                let xc = clamp(along(&centroid, &xr, 0.5));
                let fc = ev.one(&xc);
                (xc, fc)
            } else {
                let xc = clamp(along(&centroid, &simplex[n], 0.5));
                let fc = ev.one(&xc);
                (xc, fc)
            };
            if fc < values[n].min(fr) {
                simplex[n] = xc;
                values[n] = fc;
            } else {
                // Shrink towards the best vertex.
                let shrunk: Vec<Vec<f64>> = simplex[1..]
                    .iter()
                    .map(|v| along(&simplex[0], v, 0.5))
                    .collect();
                let take = shrunk.len().min(ev.remaining());
                if take == 0 {
                    return false;
                }
                let fs = ev.batch(&shrunk[..take]);
                for (k, (v, f)) in shrunk.into_iter().zip(fs).enumerate() {
                    simplex[k + 1] = v;
                    values[k + 1] = f;
                }
                if take < n {
                    return false;
                }
            }
        }
    }
}

/// Optimises the read-in control of `base` for `objective`.
pub fn optimize_control(
    model: &MemoryModel,
    base: &PulseSequence,
    objective: Objective,
    param: &ControlParameterization,
    settings: &SearchSettings,
    resume: Option<&[TraceRow]>,
) -> Result<OptimizationResult> {
    param.validate()?;
    base.validate()?;
    let f = |x: &[f64]| evaluate(model, &param.build(base, x), objective);
    maximize(f, &param.params, settings, resume)
}

/// Trace as CSV: `eval,restart,<names>,objective,best`.
pub fn trace_to_csv(names: &[String], trace: &[TraceRow]) -> String {
    let mut s = format!("eval,restart,{},objective,best\n", names.join(","));
    for r in trace {
        let _ = write!(s, "{},{}", r.eval, r.restart);
        for p in &r.params {
            let _ = write!(s, ",{p}");
        }
        let _ = writeln!(s, ",{},{}", r.objective, r.best);
    }
    s
}

/// Parses a trace written by [`trace_to_csv`]; `#` lines are skipped.
pub fn trace_from_csv(text: &str) -> Result<(Vec<String>, Vec<TraceRow>)> {
    let mut lines = text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty trace file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[0] != "eval" || cols[1] != "restart" || cols[cols.len() - 2] != "objective" {
        return Err(Error::Format(format!("unexpected trace header '{header}'")));
    }
    let names: Vec<String> = cols[2..cols.len() - 2].iter().map(|s| s.to_string()).collect();
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Format(format!("trace row {n}: expected {} columns", cols.len())));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| Error::Format(format!("trace row {n}: bad number '{s}'")))
        };
        let int = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::Format(format!("trace row {n}: bad integer '{s}'")))
        };
        rows.push(TraceRow {
            eval: int(fields[0])?,
            restart: int(fields[1])?,
            params: fields[2..fields.len() - 2].iter().map(|s| num(s)).collect::<Result<_>>()?,
            objective: num(fields[fields.len() - 2])?,
            best: num(fields[fields.len() - 1])?,
        });
    }
    Ok((names, rows))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioResult {
    pub best_r: f64,
    pub best_value: f64,
    /// Every evaluated (R, objective) pair in evaluation order.
    pub evaluations: Vec<(f64, f64)>,
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Golden-section search of `f` over ln R in `range`.
///
/// Both endpoints are evaluated, and the returned point is the best of
/// everything evaluated, so it never loses to an endpoint.
pub fn golden_section<F: Fn(f64) -> Result<f64>>(
    f: F,
    range: (f64, f64),
    budget: usize,
) -> Result<RatioResult> {
    let (lo, hi) = range;
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(Error::Config(format!("ratio range must be a positive interval, got {range:?}")));
    }
    if budget < 4 {
        return Err(Error::Config("golden-section search needs a budget >= 4".into()));
    }
    let mut evals: Vec<(f64, f64)> = Vec::new();
    let mut failures = Vec::new();
    let mut eval = |r: f64, evals: &mut Vec<(f64, f64)>| -> f64 {
        let v = match f(r) {
            Ok(v) if v.is_finite() => v,
            Ok(v) => {
                failures.push(format!("R={r}: non-finite {v}"));
                f64::NEG_INFINITY
            }
            Err(e) => {
                failures.push(format!("R={r}: {e}"));
                f64::NEG_INFINITY
            }
        };
        evals.push((r, v));
        v
    };
    let (mut a, mut b) = (lo.ln(), hi.ln());
    eval(lo, &mut evals);
    eval(hi, &mut evals);
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = eval(c.exp(), &mut evals);
    let mut fd = eval(d.exp(), &mut evals);
    while evals.len() < budget && (b - a) > 1e-4 {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c.exp(), &mut evals);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d.exp(), &mut evals);
        }
    }
    let best = evals
        .iter()
        .cloned()
        .fold((f64::NAN, f64::NEG_INFINITY), |acc, e| if e.1 > acc.1 { e } else { acc });
    if !best.1.is_finite() {
        return Err(Error::Optimization(format!(
            "every ratio evaluation failed: {}",
            failures.join("; ")
        )));
    }
    Ok(RatioResult {
        best_r: best.0,
        best_value: best.1,
        evaluations: evals,
    })
}

/// Best read-out to read-in ratio for η_mem at the total energy of `base`.
pub fn optimize_ratio(
    model: &MemoryModel,
    base: &PulseSequence,
    r_range: (f64, f64),
    budget: usize,
) -> Result<RatioResult> {
    base.validate()?;
    let total = base.total_energy();
    golden_section(
        |r| Ok(run_sequence(model, &base.with_total_energy(total, r))?.eta_mem),
        r_range,
        budget,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn quad(x: &[f64]) -> Result<f64> {
        Ok(1.0 - (x[0] - 0.3).powi(2) - 2.0 * (x[1] + 0.2).powi(2))
    }

    fn bounds() -> Vec<ParamBound> {
        vec![
            ParamBound::new("a", -1.0, 1.0, 0.9),
            ParamBound::new("b", -1.0, 1.0, -0.9),
        ]
    }

    #[test]
    fn finds_interior_maximum() {
        let r = maximize(quad, &bounds(), &SearchSettings::default(), None).unwrap();
        assert_relative_eq!(r.best_params[0], 0.3, epsilon = 1e-2);
        assert_relative_eq!(r.best_params[1], -0.2, epsilon = 1e-2);
        assert!(r.best_value >= r.initial_value);
        assert!(r.evaluations <= 300);
    }

    #[test]
    fn monotone_objective_goes_to_the_bound() {
        let b = vec![ParamBound::new("e", 0.1, 2.0, 0.5)];
        let r = maximize(|x: &[f64]| Ok(x[0].sqrt()), &b, &SearchSettings::default(), None).unwrap();
        assert_relative_eq!(r.best_params[0], 2.0, epsilon = 1e-6);
    }

    #[test]
    fn trace_is_monotone_and_reproducible() {
        let s = SearchSettings {
            seed: 9,
            budget: 120,
            ..Default::default()
        };
        let a = maximize(quad, &bounds(), &s, None).unwrap();
        let b = maximize(quad, &bounds(), &s, None).unwrap();
        assert_eq!(a.trace, b.trace);
        assert!(a.trace.windows(2).all(|w| w[1].best >= w[0].best));
        for row in &a.trace {
            assert!(row.params.iter().all(|p| (-1.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn resume_replays_without_evaluating() {
        let s = SearchSettings {
            budget: 80,
            ..Default::default()
        };
        let a = maximize(quad, &bounds(), &s, None).unwrap();
        let names = vec!["a".to_string(), "b".to_string()];
        let (n, rows) = trace_from_csv(&trace_to_csv(&names, &a.trace)).unwrap();
        assert_eq!(n, names);
        let calls = std::sync::atomic::AtomicUsize::new(0);
        let counted = |x: &[f64]| {
            calls.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
            quad(x)
        };
        let b = maximize(counted, &bounds(), &s, Some(&rows)).unwrap();
        assert_eq!(calls.load(std::sync::atomic::Ordering::Relaxed), 0);
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn all_failures_are_reported() {
        let r = maximize(
            |_: &[f64]| Err(Error::Config("nope".into())),
            &bounds(),
            &SearchSettings::default(),
            None,
        );
        assert!(matches!(r, Err(Error::Optimization(_))));
    }

    #[test]
    fn small_budget_rejected() {
        let s = SearchSettings {
            budget: 15,
            ..Default::default()
        };
        assert!(matches!(maximize(quad, &bounds(), &s, None), Err(Error::Config(_))));
    }

    #[test]
    fn exhausted_budget_is_not_converged() {
        let s = SearchSettings {
            budget: 20,
            ..Default::default()
        };
        let r = maximize(quad, &bounds(), &s, None).unwrap();
        assert!(!r.converged);
        assert_eq!(r.evaluations, 20);
    }

    #[test]
    fn golden_section_on_symmetric_objective() {
        // f(R) = f(1/R), peaked at R = 1
        let r = golden_section(|r: f64| Ok(-(r.ln()).powi(2)), (0.2, 5.0), 60).unwrap();
        assert_relative_eq!(r.best_r, 1.0, epsilon = 1e-3);
        let ends: Vec<f64> = r.evaluations[..2].iter().map(|e| e.1).collect();
        assert!(ends.iter().all(|&e| r.best_value >= e));
    }

    #[test]
    fn golden_section_keeps_endpoint_optimum() {
        let r = golden_section(|r: f64| Ok(r), (0.5, 4.0), 30).unwrap();
        assert_eq!(r.best_r, 4.0);
    }

    #[test]
    fn parameterization_respects_budget() {
        let base = PulseSequence::default();
        let p = ControlParameterization::gaussian(&base, 1.2);
        p.validate().unwrap();
        let mut x = p.initial();
        x[2] = 5.0;
        let s = p.build(&base, &x);
        assert!(s.control_in.energy_nj <= 1.2 + 1e-9);
        s.validate().unwrap();
        let pw = ControlParameterization::piecewise(&base, 8, 0.9);
        pw.validate().unwrap();
        let s = pw.build(&base, &pw.initial());
        assert_eq!(s.control_in.energy_nj, 0.9);
        let plain = base.with_energies(0.9, base.control_out.energy_nj);
        let t = plain.control_in.center_time + 0.1e-9;
        assert_eq!(s.control_in.rabi(t, 5e11), plain.control_in.rabi(t, 5e11));
    }

    #[test]
    fn unknown_parameter_rejected() {
        let base = PulseSequence::default();
        let mut p = ControlParameterization::gaussian(&base, 1.0);
        p.params[0].name = "centre".into();
        assert!(p.validate().is_err());
    }
}
