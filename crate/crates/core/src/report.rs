//! Reproduction suite: runs each headline check with pinned seeds and
//! reports measured against expected values.

use std::fmt;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::config::Config;
use crate::device::{
    analytic_energy_levels, energy_levels, exchange_vs_vm, fit_exchange_law, transition_frequencies, DeviceParams,
    ExchangeFitParams,
};
use crate::error::Result;
use crate::experiments::{cnot_calibration, fit_t2_star, ramsey};
use crate::pulses::{
    calibrate_cnot, cnot_sequence, conditional_phase, evolve, ideal_cnot, measured_conditional_phase, NoiseConfig,
    PulseSegment, PulseSequence, DEFAULT_DT_MAX,
};
use crate::qcore::{c, BasisState, Qubit, Spin, TwoQubitState};
use crate::rb::{randomized_benchmarking, ErrorModel, RbConfig};
use crate::readout::{
    calibrate_white_noise, edge_times, fidelity_sweep, generate_trace, NoiseSpectrumConfig, ReadoutParams,
};
use crate::tomo::{bell_experiment, BellOptions, VisibilityModel};

/// Exchange at which the CNOT runs, `1/(204 ns)`.
pub const CNOT_J: f64 = 1.0 / 204e-9;

#[derive(Debug, Clone, Serialize)]
pub struct CriterionRow {
    pub id: usize,
    pub name: &'static str,
    pub measured: String,
    pub expected: String,
    pub passed: bool,
    pub seconds: f64,
}

impl fmt::Display for CriterionRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:>2}  {:<4}  {:<34} measured {}  expected {}  ({:.2} s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.measured,
            self.expected,
            self.seconds
        )
    }
}

struct Outcome {
    measured: String,
    expected: String,
    passed: bool,
}

fn row(id: usize, name: &'static str, budget: f64, f: impl FnOnce() -> Result<Outcome>) -> CriterionRow {
    let start = Instant::now();
    let out = f();
    let seconds = start.elapsed().as_secs_f64();
    match out {
        Ok(o) => CriterionRow {
            id,
            name,
            measured: o.measured,
            expected: format!("{} in < {budget} s", o.expected),
            passed: o.passed && seconds < budget,
            seconds,
        },
        Err(e) => CriterionRow {
            id,
            name,
            measured: format!("error: {e}"),
            expected: String::new(),
            passed: false,
            seconds,
        },
    }
}

fn random_device(base: &DeviceParams, rng: &mut impl Rng) -> (DeviceParams, f64) {
    let mut p = base.clone();
    p.e_z = rng.random_range(5e9..20e9);
    p.de_z = rng.random_range(50e6..500e6);
    p.b1_z_left = 0.0;
    p.b1_z_right = 0.0;
    let j = rng.random_range(1e-3..0.2) * p.de_z;
    (p, j)
}

pub fn splitting_identity(base: &DeviceParams, seed: u64) -> Result<(f64, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let (p, j) = random_device(base, &mut rng);
        let f = transition_frequencies(&p, j)?;
        worst = worst
            .max((f.exchange_splitting(Qubit::Left) - j).abs() / j)
            .max((f.exchange_splitting(Qubit::Right) - j).abs() / j);
    }
    Ok((worst, 1000))
}

/// Worst relative eigenvalue disagreement (with random `B¹` shifts) and
/// worst relative trace error (without them).
pub fn eigenvalue_oracle(base: &DeviceParams, seed: u64) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut eig, mut trace) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let (mut p, j) = random_device(base, &mut rng);
        let a = analytic_energy_levels(&p, j);
        trace = trace.max((a.sum() + j).abs() / j);
        p.b1_z_left = rng.random_range(-5e6..5e6);
        p.b1_z_right = rng.random_range(-5e6..5e6);
        let (a, n) = (analytic_energy_levels(&p, j).as_array(), energy_levels(&p, j)?.as_array());
        let scale = n.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for k in 0..4 {
            eig = eig.max((a[k] - n[k]).abs() / scale);
        }
    }
    Ok((eig, trace))
}

/// Population of the ideal output for each basis input, and gate fidelity.
pub fn cnot_truth_table(p: &DeviceParams) -> Result<([f64; 4], f64)> {
    let cal = calibrate_cnot(p, CNOT_J, DEFAULT_DT_MAX)?;
    let ideal = ideal_cnot();
    let mut pops = [0.0; 4];
    for b in BasisState::ALL {
        let input = TwoQubitState::basis(b);
        let out = evolve(&cnot_sequence(p, &cal.params, input)?, p, DEFAULT_DT_MAX)?;
        pops[b.index()] = out.overlap(&input.apply(&ideal));
    }
    Ok((pops, cal.fidelity))
}

/// Analytic and evolved conditional phase at `τ_dc = 1/J`.
pub fn conditional_phase_check(p: &DeviceParams) -> Result<(f64, f64)> {
    let tau = 1.0 / CNOT_J;
    let analytic = conditional_phase(p, CNOT_J, tau)?;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let plus = [c(h), c(h)];
    let seq = PulseSequence::new(TwoQubitState::product(plus, plus)?).then(PulseSegment::exchange(CNOT_J, tau));
    let evolved = measured_conditional_phase(&evolve(&seq, p, DEFAULT_DT_MAX)?);
    Ok((analytic, evolved))
}

/// Conditional Rabi data at `Ω = 1/(2·130 ns)`: first π-flip time of the
/// `|↓↑⟩` input, grid step, and worst deviation from anti-correlation with
/// the `|↑↑⟩` input.
pub fn conditional_rabi(p: &DeviceParams) -> Result<(f64, f64, f64)> {
    let step = 2e-9;
    let grid: Vec<f64> = (0..=200).map(|k| k as f64 * step).collect();
    let run = |b| cnot_calibration(p, 20e6, &grid, b, 1.0 / (2.0 * 130e-9), 1e-6);
    let du = run(BasisState::DownUp)?;
    let uu = run(BasisState::UpUp)?;
    let a = du.column("p_up_left").unwrap();
    let b = uu.column("p_up_left").unwrap();
    let anti = a.iter().zip(b).map(|(x, y)| (x + y - 1.0).abs()).fold(0.0, f64::max);
    let k = (1..a.len() - 1)
        .find(|&k| a[k] >= a[k - 1] && a[k] > a[k + 1] && a[k] > 0.5)
        .unwrap_or(0);
    Ok((grid[k], step, anti))
}

pub fn bell_fidelity(p: &DeviceParams, v_left: f64, v_right: f64) -> Result<f64> {
    let vis = VisibilityModel::symmetric(v_left, v_right)?;
    Ok(bell_experiment(p, &vis, &NoiseConfig::noiseless(), &BellOptions::default())?.fidelity)
}

pub fn ramsey_t2_star(p: &DeviceParams, seed: u64) -> Result<f64> {
    let delays: Vec<f64> = (0..81).map(|k| k as f64 * 50e-9).collect();
    let noise = NoiseConfig::from_t2_star(p, 500, seed);
    let r = ramsey(p, Qubit::Left, &delays, &noise)?;
    fit_t2_star(&delays, r.column("p_up").unwrap())
}

/// `(F_c, σ)` for a depolarizing rate, measured with finite shots.
pub fn rb_depolarizing(p: &DeviceParams, r: f64, seed: u64) -> Result<(f64, f64)> {
    let cfg = RbConfig {
        target: Qubit::Left,
        lengths: vec![1, 2, 4, 8, 16, 32, 64, 128, 256],
        n_sequences: 20,
        model: ErrorModel::Depolarizing(r),
        shots: 1000,
        seed,
    };
    let fit = randomized_benchmarking(p, &cfg)?
        .fit
        .map_err(crate::error::Error::FitFailed)?;
    Ok((fit.f_c, fit.f_c_std))
}

pub fn rb_noiseless_pc(p: &DeviceParams, seed: u64) -> Result<f64> {
    let cfg = RbConfig {
        target: Qubit::Left,
        lengths: vec![1, 2, 4, 8, 16, 32, 64],
        n_sequences: 10,
        model: ErrorModel::None,
        shots: 0,
        seed,
    };
    Ok(randomized_benchmarking(p, &cfg)?
        .fit
        .map_err(crate::error::Error::FitFailed)?
        .p_c)
}

/// Mean rising-edge time and blip width of noise-free traces in a long window
/// with negligible relaxation.
pub fn tunneling_means(rp: &ReadoutParams, n: usize, seed: u64) -> (f64, f64) {
    let rp = ReadoutParams {
        t1: 1e3,
        t_read: 100.0 / rp.gamma_off_up.min(rp.gamma_on),
        sample_rate: 20.0 * rp.gamma_off_up.max(rp.gamma_on),
        noise: NoiseSpectrumConfig::silent(),
        filter_cutoff: f64::INFINITY,
        ..*rp
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut rise, mut width, mut count) = (0.0, 0.0, 0usize);
    for _ in 0..n {
        let t = generate_trace(&rp, Spin::Up, &mut rng);
        if let Some((a, b)) = edge_times(&rp, &t.samples) {
            rise += a;
            width += b - a;
            count += 1;
        }
    }
    (rise / count as f64, width / count as f64)
}

/// Simulated and analytic `F↑(0⁺)` without noise or filtering, with the
/// Monte-Carlo standard error.
pub fn readout_analytic(rp: &ReadoutParams, n: usize, seed: u64) -> Result<(f64, f64, f64)> {
    let rp = ReadoutParams {
        noise: NoiseSpectrumConfig::silent(),
        filter_cutoff: f64::INFINITY,
        ..*rp
    };
    let curve = fidelity_sweep(&rp, n, 0.0, seed)?;
    let analytic = rp.detection_probability();
    let se = (analytic * (1.0 - analytic) / n as f64).sqrt();
    Ok((curve.f_up[0], analytic, se))
}

fn synthetic_exchange_data(truth: &ExchangeFitParams, seed: u64) -> Result<Vec<(f64, f64)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.01).unwrap();
    (0..21)
        .map(|k| {
            let v = 0.375 + 0.035 * k as f64 / 20.0;
            Ok((v, exchange_vs_vm(truth, v)? * (1.0 + noise.sample(&mut rng))))
        })
        .collect()
}

/// Relative errors of `(c, V_M0, V_M1, V_on)` after refitting noisy
/// synthetic data on the operating window, and fitted `J` at 390 mV and
/// 410 mV.
pub fn exchange_roundtrip(truth: &ExchangeFitParams, seed: u64) -> Result<([f64; 4], f64, f64)> {
    let fit = fit_exchange_law(&synthetic_exchange_data(truth, seed)?)?.params;
    let rel = |a: f64, b: f64| ((a - b) / b).abs();
    let err = [
        rel(fit.c, truth.c),
        rel(fit.v_m0, truth.v_m0),
        rel(fit.v_m1, truth.v_m1),
        rel(fit.v_on, truth.v_on),
    ];
    Ok((err, exchange_vs_vm(&fit, 0.390)?, exchange_vs_vm(&fit, 0.410)?))
}

/// Runs every check and returns one row per criterion.
pub fn reproduce_all(cfg: &Config, seed: u64) -> Vec<CriterionRow> {
    let p = &cfg.device;
    let mut rows = Vec::new();
    rows.push(row(1, "exchange-splitting identity", 1.0, || {
        let (worst, n) = splitting_identity(p, seed)?;
        Ok(Outcome {
            measured: format!("worst relative error {worst:.2e} over {n} draws"),
            expected: "≤ 1e-9".into(),
            passed: worst <= 1e-9,
        })
    }));
    rows.push(row(2, "CNOT truth table", 10.0, || {
        let (pops, fid) = cnot_truth_table(p)?;
        let min = pops.iter().copied().fold(1.0, f64::min);
        Ok(Outcome {
            measured: format!("min population {min:.6}, gate fidelity {fid:.6}"),
            expected: "> 0.99 and > 0.999".into(),
            passed: min > 0.99 && fid > 0.999,
        })
    }));
    rows.push(row(3, "conditional-phase cancellation", 10.0, || {
        let (a, e) = conditional_phase_check(p)?;
        Ok(Outcome {
            measured: format!("analytic {a:.2e} rad, evolved {e:.2e} rad"),
            expected: "|φ| ≤ 1e-6 rad".into(),
            passed: a.abs() <= 1e-6 && e.abs() <= 1e-6,
        })
    }));
    rows.push(row(4, "conditional Rabi π-flip", 30.0, || {
        let (t, step, anti) = conditional_rabi(p)?;
        Ok(Outcome {
            measured: format!("π-flip at {:.0} ns, anti-correlation error {anti:.2e}", t * 1e9),
            expected: format!("130 ns ± {:.0} ns, anti-correlated", step * 1e9),
            passed: (t - 130e-9).abs() <= step + 1e-15 && anti < 0.05,
        })
    }));
    rows.push(row(5, "visibility-limited Bell fidelity", 5.0, || {
        let f = bell_fidelity(p, 0.76, 0.70)?;
        Ok(Outcome {
            measured: format!("F = {f:.4}"),
            expected: "0.805 ± 0.01".into(),
            passed: (f - 0.805).abs() <= 0.01,
        })
    }));
    rows.push(row(6, "Ramsey T2*", 30.0, || {
        let t2 = ramsey_t2_star(p, seed)?;
        Ok(Outcome {
            measured: format!("T2* = {:.3} μs", t2 * 1e6),
            expected: format!("{:.3} μs ± 10%", p.t2_star_left * 1e6),
            passed: (t2 / p.t2_star_left - 1.0).abs() <= 0.1,
        })
    }));
    rows.push(row(7, "RB depolarizing oracle", 60.0, || {
        let mut parts = Vec::new();
        let mut ok = true;
        for r in [0.002, 0.01] {
            let (f, s) = rb_depolarizing(p, r, seed)?;
            ok &= (f - (1.0 - r / 2.0)).abs() <= 2.0 * s;
            parts.push(format!("r={r}: F_c={f:.5}±{s:.5}"));
        }
        let pc = rb_noiseless_pc(p, seed)?;
        ok &= (pc - 1.0).abs() <= 1e-6;
        parts.push(format!("noiseless p_c={pc:.8}"));
        Ok(Outcome {
            measured: parts.join(", "),
            expected: "F_c = 1 − r/2 within 2σ, p_c = 1 ± 1e-6".into(),
            passed: ok,
        })
    }));
    rows.push(row(8, "readout Monte Carlo", 120.0, || {
        let ro = &cfg.readout;
        let (rise, width) = tunneling_means(&ro.left, 100_000, seed);
        let rise_err = (rise * ro.left.gamma_off_up - 1.0).abs();
        let width_err = (width * ro.left.gamma_on - 1.0).abs();
        let (sim, analytic, se) = readout_analytic(&ro.left, 100_000, seed)?;
        let curves = ro.fidelity_curves(20_000, seed)?;
        let (vl, vr) = (curves[0].best().1, curves[1].best().1);
        let (_, cal_l) = calibrate_white_noise(&ro.left, 0.0, 0.85, 10_000, seed)?;
        let (_, cal_r) = calibrate_white_noise(&ro.right, ro.partner_delay, 0.78, 10_000, seed)?;
        Ok(Outcome {
            measured: format!(
                "edge/width error {:.2}%/{:.2}%, F↑(0⁺) {sim:.4} vs {analytic:.4}, V {vl:.3}/{vr:.3}, calibrated {cal_l:.3}/{cal_r:.3}",
                rise_err * 100.0,
                width_err * 100.0
            ),
            expected: "≤ 2%, within 3σ, 0.85/0.78 ± 0.03".into(),
            passed: rise_err <= 0.02
                && width_err <= 0.02
                && (sim - analytic).abs() <= 3.0 * se
                && (vl - 0.85).abs() <= 0.03
                && (vr - 0.78).abs() <= 0.03
                && (cal_l - 0.85).abs() <= 0.03
                && (cal_r - 0.78).abs() <= 0.03,
        })
    }));
    rows.push(row(9, "exchange-law fit roundtrip", 30.0, || {
        let (err, j390, j410) = exchange_roundtrip(&p.exchange_fit, seed)?;
        let within = |x: f64, target: f64| x / target <= 1.5 && target / x <= 1.5;
        Ok(Outcome {
            measured: format!(
                "errors c {:.1}%, V_M0 {:.2}%, V_M1 {:.2}%, V_on {:.1}%; J(390 mV) {:.3} MHz, J(410 mV) {:.2} MHz",
                err[0] * 100.0,
                err[1] * 100.0,
                err[2] * 100.0,
                err[3] * 100.0,
                j390 * 1e-6,
                j410 * 1e-6
            ),
            expected: "each ≤ 5%, 0.3 MHz and 10 MHz within ×1.5".into(),
            passed: err.iter().all(|&e| e <= 0.05) && within(j390, 0.3e6) && within(j410, 10e6),
        })
    }));
    rows.push(row(10, "eigenvalue oracle", 5.0, || {
        let (eig, trace) = eigenvalue_oracle(p, seed)?;
        Ok(Outcome {
            measured: format!("eigenvalue error {eig:.2e}, trace error {trace:.2e}"),
            expected: "≤ 1e-9 relative".into(),
            passed: eig <= 1e-9 && trace <= 1e-9,
        })
    }));
    rows
}
