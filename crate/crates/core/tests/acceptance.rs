//! End-to-end acceptance checks. Prints one PASS/FAIL line per check.
//!
//! Checks listed in `EXPECTED_FAIL` cannot be met by this model; they are
//! still run and reported, and only become fatal when they start passing
//! or when ORCA_ACCEPTANCE_STRICT=1 is set.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use orca_core::detection::NoiseLevel;
use orca_core::experiment::{run_sequence, storage_time_sweep, PulseSequence};
use orca_core::metrics::{fidelity, g2_out, mu_one, snr, throughput, Measured};
use orca_core::optimizer::{
    evaluate, optimize_control, ControlParameterization, Objective, SearchSettings,
};
use orca_core::physics::{
    doppler_lifetime, spinwave_wavelength, spinwave_wavevector, thermal_velocity_sigma,
    LadderScheme,
};
use orca_core::solver::{MemoryModel, SolverConfig};

const EXPECTED_FAIL: &[usize] = &[3];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn spinwave() -> Outcome {
    let l = spinwave_wavelength(&LadderScheme::default());
    let pass = within(l, 1.593e-6, 1e-3 * 1.593e-6) && within(l, 1.6e-6, 0.01 * 1.6e-6);
    outcome(pass, format!("lambda = {:.4} um (1.593 um; within 1% of 1.6 um)", l * 1e6))
}

fn lifetime() -> Outcome {
    let model = MemoryModel::default();
    let times: Vec<f64> = (0..=30).map(|k| k as f64 * 0.1e-9).collect();
    let sweep = match storage_time_sweep(&model, &PulseSequence::default(), &times) {
        Ok(s) => s,
        Err(e) => return outcome(false, format!("sweep failed: {e}")),
    };
    let Some(fit) = sweep.fit else {
        return outcome(false, "lifetime fit failed".into());
    };
    let sigma = thermal_velocity_sigma(&model.ensemble).unwrap();
    let tau = doppler_lifetime(spinwave_wavevector(&model.scheme), sigma);
    let pass = within(fit.lifetime, tau, 0.05 * tau) && within(fit.lifetime, 1.10e-9, 0.30 * 1.10e-9);
    outcome(
        pass,
        format!(
            "fitted tau = {:.3} ns, oracle 1/(dk sigma_v) = {:.3} ns (+-5%), measured 1.10 ns (+-30%)",
            fit.lifetime * 1e9,
            tau * 1e9
        ),
    )
}

fn headline() -> Outcome {
    let seq = PulseSequence::default();
    let base = MemoryModel::default();
    let d2 = match base.calibrate_coupling(
        0.6913,
        &seq.signal,
        &seq.control_in,
        &seq.control_out,
        seq.storage_time,
    ) {
        Ok(d) => d,
        Err(e) => return outcome(false, format!("calibration failed: {e}")),
    };
    let r = run_sequence(&base.with_coupling(d2), &seq).unwrap();
    let pass = within(r.eta_read_in, 0.6913, 1e-4)
        && within(r.eta_mem, 0.209, 0.05)
        && within(r.eta_read_out, 0.302, 0.07);
    outcome(
        pass,
        format!(
            "eta_read_in = {:.4}, eta_mem = {:.3} (0.209 +- 0.05), eta_read_out = {:.3} (0.302 +- 0.07)",
            r.eta_read_in, r.eta_mem, r.eta_read_out
        ),
    )
}

fn formulas() -> Outcome {
    let m1 = mu_one(9e-7, 0.209).unwrap();
    let s = snr(0.209 * 0.084, 9e-7).unwrap().value;
    let g2 = g2_out(1.0, m1).unwrap();
    let f = fidelity(1.0, m1).unwrap();
    let t = throughput(
        Measured::exact(0.209),
        Measured::exact(0.56),
        Measured::exact(0.80),
    )
    .unwrap()
    .value;
    let pass = within(m1, 4.5e-6, 0.6e-6)
        && within(s, 1.9e4, 0.1e4)
        && within(g2, 9e-6, 1e-6)
        && within(f, 0.999996, 1e-6)
        && within(t, 0.094, 0.012);
    outcome(
        pass,
        format!(
            "mu1 = {m1:.3e}, SNR = {s:.4e}, g2(1) = {g2:.3e}, F = {:.5}%, throughput = {:.2}%",
            f * 100.0,
            t * 100.0
        ),
    )
}

fn rollover() -> Outcome {
    let energies: Vec<f64> = (1..=15).map(|k| k as f64 * 0.1).collect();
    let curve = |stark: bool| -> Vec<f64> {
        let model = MemoryModel {
            cfg: SolverConfig {
                include_stark: stark,
                ..Default::default()
            },
            ..Default::default()
        };
        energies
            .iter()
            .map(|&e| {
                let s = PulseSequence::default().with_energies(e, 3.6);
                model
                    .read_in_efficiency(&s.signal, &s.control_in, &s.control_out, s.storage_time)
                    .unwrap()
            })
            .collect()
    };
    let on = curve(true);
    let off = curve(false);
    let k = (0..on.len()).max_by(|&a, &b| on[a].total_cmp(&on[b])).unwrap();
    let interior = k > 0 && k + 1 < on.len();
    let peak = energies[k];
    let monotone = off.windows(2).all(|w| w[1] >= w[0]);
    let pass = interior && within(peak, 0.7, 0.35) && monotone;
    outcome(
        pass,
        format!(
            "Stark on: peak {:.3} at {peak:.1} nJ (interior: {interior}); Stark off monotone: {monotone} ({:.3} -> {:.3})",
            on[k],
            off[0],
            off[off.len() - 1]
        ),
    )
}

fn detection() -> Outcome {
    let noise = NoiseLevel {
        per_window: 9e-7,
        window: 500e-12,
    };
    let mut report = Vec::new();
    let mut pass = true;
    for eta in [0.1, 0.5, 0.9] {
        let ok = (0..100)
            .filter(|&seed| {
                let e = common::round_trip(0.084, eta, eta, noise, 1000 + seed, 120.0);
                within(e.eta_read_in, eta, 3.0 * e.eta_read_in_err)
                    && within(e.eta_read_out, eta, 3.0 * e.eta_read_out_err)
                    && within(e.eta_mem, eta * eta, 3.0 * e.eta_mem_err)
            })
            .count();
        pass &= ok >= 95;
        report.push(format!("eta {eta}: {ok}/100"));
    }
    outcome(pass, format!("{} (need >= 95)", report.join(", ")))
}

fn conservation() -> Outcome {
    let lossless = MemoryModel {
        cfg: SolverConfig {
            include_decay: false,
            include_doppler: false,
            ..Default::default()
        },
        ..Default::default()
    };
    let r = run_sequence(&lossless, &PulseSequence::default()).unwrap();
    let so_far: f64 = r.input_envelope.values[..r.split_step]
        .iter()
        .map(|v| v.norm_sqr())
        .sum::<f64>()
        * r.grid.dt;
    let stored = r.spinwave_snapshot.stored_photons();
    let balance = (r.transmitted_envelope.photon_number() + stored) / so_far - 1.0;
    let whole = (r.output_envelope().photon_number() + r.residual_stored) / r.mu_in - 1.0;

    let base = MemoryModel::default();
    let fine = MemoryModel {
        cfg: SolverConfig {
            n_z: 2 * base.cfg.n_z,
            n_t: 2 * base.cfg.n_t,
            ..base.cfg.clone()
        },
        ..base.clone()
    };
    let a = run_sequence(&base, &PulseSequence::default()).unwrap().eta_mem;
    let b = run_sequence(&fine, &PulseSequence::default()).unwrap().eta_mem;
    let change = (b - a).abs() / a;
    let pass = balance.abs() < 1e-6 && whole.abs() < 1e-6 && change < 5e-3;
    outcome(
        pass,
        format!(
            "read-in balance {balance:.1e}, whole-run balance {whole:.1e} (< 1e-6); grid doubling changes eta_mem by {:.4}% (< 0.5%)",
            change * 100.0
        ),
    )
}

fn backward() -> Outcome {
    let model = MemoryModel::default();
    let seq = PulseSequence::default();
    let fwd = run_sequence(&model, &seq).unwrap();
    let bwd = model.retrieve_backward(&fwd, &seq.control_out).unwrap();
    outcome(
        bwd.eta_read_out > fwd.eta_read_out,
        format!(
            "eta_read_out backward {:.3} vs forward {:.3}",
            bwd.eta_read_out, fwd.eta_read_out
        ),
    )
}

fn optimizer() -> Outcome {
    let model = MemoryModel::default();
    // well past the read-in rollover
    let base = PulseSequence::default().with_energies(1.5, 3.6);
    let plain = run_sequence(&model, &base).unwrap().eta_mem;

    // coarse three-knot grid: a shaped pulse that beats the Gaussian exists
    let three = ControlParameterization::piecewise(&base, 3, 1.5);
    let levels = [0.0, 1.0, 3.0];
    let mut grid_best = f64::NEG_INFINITY;
    for &a in &levels {
        for &b in &levels {
            for &c in &levels {
                if let Ok(v) = evaluate(&model, &three.build(&base, &[a, b, c]), Objective::EtaMem) {
                    grid_best = grid_best.max(v);
                }
            }
        }
    }

    let p = ControlParameterization::piecewise(&base, 8, 1.5);
    let settings = SearchSettings {
        budget: 300,
        seed: 0,
        ..Default::default()
    };
    let r = match optimize_control(&model, &base, Objective::EtaMem, &p, &settings, None) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("optimizer failed: {e}")),
    };
    let pass = grid_best >= plain + 0.01 && r.best_value >= plain && r.best_value >= plain + 0.01;
    outcome(
        pass,
        format!(
            "Gaussian {plain:.4}, 3-knot grid {grid_best:.4}, 8-knot search {:.4} after {} evaluations (need >= Gaussian + 0.01)",
            r.best_value, r.evaluations
        ),
    )
}

fn main() -> ExitCode {
    let strict = std::env::var("ORCA_ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    let checks: [(usize, &str, Duration, fn() -> Outcome); 9] = [
        (1, "spin-wave wavelength", Duration::from_secs(1), spinwave),
        (2, "Doppler lifetime", Duration::from_secs(60), lifetime),
        (3, "headline efficiency", Duration::from_secs(60), headline),
        (4, "metric formulas", Duration::from_secs(1), formulas),
        (5, "AC-Stark rollover", Duration::from_secs(300), rollover),
        (6, "detection round trip", Duration::from_secs(300), detection),
        (7, "solver conservation", Duration::from_secs(120), conservation),
        (8, "backward retrieval ordering", Duration::from_secs(60), backward),
        (9, "optimizer dominance", Duration::from_secs(900), optimizer),
    ];
    let mut fatal = 0;
    for (id, name, limit, check) in checks {
        let start = Instant::now();
        let o = check();
        let took = start.elapsed();
        let in_time = took <= limit;
        let pass = o.pass && in_time;
        let expected = EXPECTED_FAIL.contains(&id);
        let tag = match (pass, expected) {
            (true, false) => "PASS",
            (false, false) => "FAIL",
            (false, true) => "FAIL (expected)",
            (true, true) => "PASS (unexpected)",
        };
        if pass == expected || (expected && strict) {
            fatal += 1;
        }
        let timing = if in_time { String::new() } else { format!(" [over time limit {limit:?}]") };
        println!(
            "acceptance {id}: {tag} {name}: {}; {:.1}s{timing}",
            o.detail,
            took.as_secs_f64()
        );
    }
    if fatal > 0 {
        println!("acceptance: {fatal} check(s) not as expected");
        ExitCode::FAILURE
    } else {
        println!("acceptance: all checks as expected");
        ExitCode::SUCCESS
    }
}
