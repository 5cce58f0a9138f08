//! Measurement protocols run as parameter sweeps over the pulse engine.
//!
//! Every driver starts from `|↓↓⟩` (ideal initialization) unless an input
//! state is given, and reports spin-up probabilities in an
//! [`ExperimentResult`].

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::{fit_exchange_law, transition_frequencies, DeviceParams, ExchangeFit};
use crate::error::{Error, Result};
use crate::fit::{fit_gaussian_decay, fit_sinusoid, linear_fit};
use crate::pulses::{
    cnot_segments, evolve, evolve_ensemble, rotation, Axis, CnotCalibration, CnotParams, Drive, NoiseConfig,
    PulseSegment, PulseSequence, DEFAULT_DT_MAX,
};
use crate::qcore::{p_up_from_populations, BasisState, Qubit, Spin};
use crate::rb::{randomized_benchmarking, RbConfig, RbData};
use crate::result::{ExperimentResult, SweepSpec};

fn ensemble_p_up(seq: &PulseSequence, p: &DeviceParams, noise: &NoiseConfig, q: Qubit) -> Result<f64> {
    Ok(p_up_from_populations(&evolve_ensemble(seq, p, noise, DEFAULT_DT_MAX)?, q))
}

fn basis_with(target: Qubit, target_spin: Spin, other_spin: Spin) -> BasisState {
    match target {
        Qubit::Left => BasisState::from_spins(target_spin, other_spin),
        Qubit::Right => BasisState::from_spins(other_spin, target_spin),
    }
}

fn burst(p: &DeviceParams, target: Qubit, frequency: f64, duration: f64) -> PulseSegment {
    PulseSegment::MicrowaveBurst {
        drive: Drive {
            target,
            frequency,
            rabi_amplitude: p.rabi_frequency,
            phase: -PI / 2.0,
        },
        duration,
    }
}

fn check_nonempty(name: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(Error::param(name, "sweep has no values"));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::param(name, "sweep values must be finite"));
    }
    Ok(())
}

fn check_times(name: &str, v: &[f64]) -> Result<()> {
    check_nonempty(name, v)?;
    if v.iter().any(|&t| t < 0.0) {
        return Err(Error::param(name, "times must be ≥ 0"));
    }
    Ok(())
}

/// P↑ of `target` over microwave frequency × burst length, exchange off.
pub fn rabi_chevron(
    p: &DeviceParams,
    target: Qubit,
    frequencies: &[f64],
    times: &[f64],
    noise: &NoiseConfig,
) -> Result<ExperimentResult> {
    check_nonempty("frequency", frequencies)?;
    check_times("time", times)?;
    let grid: Vec<(f64, f64)> = frequencies
        .iter()
        .flat_map(|&f| times.iter().map(move |&t| (f, t)))
        .collect();
    let p_up: Vec<f64> = grid
        .par_iter()
        .map(|&(f, t)| {
            let seq = PulseSequence::from_basis(BasisState::DownDown).then(burst(p, target, f, t));
            ensemble_p_up(&seq, p, noise, target)
        })
        .collect::<Result<_>>()?;
    let mut r = ExperimentResult::new(
        "rabi_chevron",
        vec![
            SweepSpec::new("frequency", "Hz", frequencies.to_vec()).with_repeat(noise.n_samples),
            SweepSpec::new("burst_time", "s", times.to_vec()),
        ],
        p,
        Some(noise.seed),
    )?;
    r.push_column("p_up", "", p_up, true)?;
    r.set_meta("target", target)?;
    r.set_meta("rabi_amplitude", p.rabi_frequency)?;
    Ok(r)
}

/// Oscillation frequency of a Rabi trace.
pub fn fit_rabi_frequency(times: &[f64], p_up: &[f64]) -> Result<f64> {
    let span = times.last().copied().unwrap_or(0.0) - times.first().copied().unwrap_or(0.0);
    if !(span > 0.0) || times.len() < 8 {
        return Err(Error::FitFailed("Rabi trace needs at least 8 points over a nonzero span".into()));
    }
    let dt = span / (times.len() - 1) as f64;
    Ok(fit_sinusoid(times, p_up, 0.5 / span, 0.5 / dt)?.frequency)
}

/// `X90 – τ – X90` on `target`.
pub fn ramsey(p: &DeviceParams, target: Qubit, delays: &[f64], noise: &NoiseConfig) -> Result<ExperimentResult> {
    check_times("delay", delays)?;
    let x90 = rotation(p, target, Axis::X, PI / 2.0);
    let p_up: Vec<f64> = delays
        .par_iter()
        .map(|&tau| {
            let seq = PulseSequence::from_basis(BasisState::DownDown)
                .then(x90)
                .then(PulseSegment::idle(tau))
                .then(x90);
            ensemble_p_up(&seq, p, noise, target)
        })
        .collect::<Result<_>>()?;
    let mut r = ExperimentResult::new(
        "ramsey",
        vec![SweepSpec::new("delay", "s", delays.to_vec()).with_repeat(noise.n_samples)],
        p,
        Some(noise.seed),
    )?;
    r.push_column("p_up", "", p_up, true)?;
    r.set_meta("target", target)?;
    r.set_meta("sigma_f", noise.sigma_f)?;
    Ok(r)
}

/// Dephasing time from a Ramsey trace, `P↑ = B + A exp(−(τ/T₂*)²)`.
pub fn fit_t2_star(delays: &[f64], p_up: &[f64]) -> Result<f64> {
    Ok(fit_gaussian_decay(delays, p_up)?.time)
}

/// `X90 – τ/2 – X180 – τ/2 – X90` with the last pulse's axis reversed, so a
/// perfectly refocused echo returns `P↑ = 1`.
pub fn hahn_echo(p: &DeviceParams, target: Qubit, total_delays: &[f64], noise: &NoiseConfig) -> Result<ExperimentResult> {
    check_times("total_delay", total_delays)?;
    let p_up: Vec<f64> = total_delays
        .par_iter()
        .map(|&tau| {
            let seq = PulseSequence::from_basis(BasisState::DownDown)
                .then(rotation(p, target, Axis::X, PI / 2.0))
                .then(PulseSegment::idle(tau / 2.0))
                .then(rotation(p, target, Axis::X, PI))
                .then(PulseSegment::idle(tau / 2.0))
                .then(rotation(p, target, Axis::X, -PI / 2.0));
            ensemble_p_up(&seq, p, noise, target)
        })
        .collect::<Result<_>>()?;
    let mut r = ExperimentResult::new(
        "hahn_echo",
        vec![SweepSpec::new("total_delay", "s", total_delays.to_vec()).with_repeat(noise.n_samples)],
        p,
        Some(noise.seed),
    )?;
    r.push_column("p_up", "", p_up, true)?;
    r.set_meta("target", target)?;
    Ok(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectroscopyOptions {
    /// Rabi frequency of the weak probe on the left spin.
    pub probe_rabi: f64,
    /// Probe length; `None` uses ten times the left `T₂*`.
    pub probe_duration: Option<f64>,
}

impl Default for SpectroscopyOptions {
    fn default() -> Self {
        SpectroscopyOptions {
            probe_rabi: 10e3,
            probe_duration: None,
        }
    }
}

impl SpectroscopyOptions {
    pub fn linewidth(&self, p: &DeviceParams) -> f64 {
        let tau = self.probe_duration.unwrap_or(10.0 * p.t2_star_left);
        (1.0 / (PI * tau)).max(self.probe_rabi)
    }
}

/// Left-spin probe spectroscopy with exchange at barrier voltage `v_m`,
/// after a Rabi burst of length `τ_R` on the right spin.
///
/// A long weak probe saturates whichever conditional transition it hits:
/// on resonance (within the linewidth) the left spin ends up fully mixed in
/// that branch of the right spin.
pub fn exchange_spectroscopy(
    p: &DeviceParams,
    v_m: f64,
    tau_r: &[f64],
    probe_frequencies: &[f64],
    opts: &SpectroscopyOptions,
) -> Result<ExperimentResult> {
    check_times("tau_r", tau_r)?;
    check_nonempty("probe_frequency", probe_frequencies)?;
    if !(opts.probe_rabi > 0.0) {
        return Err(Error::param("probe_rabi", "must be > 0"));
    }
    let j = p.exchange_at(v_m)?;
    if opts.probe_rabi > j / 5.0 {
        log::warn!(
            "probe Rabi frequency {:.3e} Hz exceeds J/5 = {:.3e} Hz; the two branches will blur",
            opts.probe_rabi,
            j / 5.0
        );
    }
    let f = transition_frequencies(p, j)?;
    let (f_down, f_up) = (f.left_given_right_down, f.left_given_right_up);
    let lw = opts.linewidth(p);
    let right_up: Vec<f64> = tau_r
        .par_iter()
        .map(|&t| {
            let seq = PulseSequence::from_basis(BasisState::DownDown).then(burst(
                p,
                Qubit::Right,
                p.qubit_frequency(Qubit::Right),
                t,
            ));
            Ok(evolve(&seq, p, DEFAULT_DT_MAX)?.p_up(Qubit::Right))
        })
        .collect::<Result<_>>()?;
    let mut p_up = Vec::with_capacity(tau_r.len() * probe_frequencies.len());
    for &pr in &right_up {
        for &fp in probe_frequencies {
            let mut v = 0.0;
            if (fp - f_down).abs() < lw {
                v += 0.5 * (1.0 - pr);
            }
            if (fp - f_up).abs() < lw {
                v += 0.5 * pr;
            }
            p_up.push(v);
        }
    }
    let mut r = ExperimentResult::new(
        "exchange_spectroscopy",
        vec![
            SweepSpec::new("tau_r", "s", tau_r.to_vec()),
            SweepSpec::new("probe_frequency", "Hz", probe_frequencies.to_vec()),
        ],
        p,
        None,
    )?;
    r.push_column("p_up_left", "", p_up, true)?;
    r.set_meta("v_m", v_m)?;
    r.set_meta("j", j)?;
    r.set_meta("branch_right_down", f_down)?;
    r.set_meta("branch_right_up", f_up)?;
    r.set_meta("branch_splitting", f_up - f_down)?;
    r.set_meta("linewidth", lw)?;
    Ok(r)
}

/// Centers of the contiguous resonant regions of one spectroscopy row.
pub fn resonance_centers(frequencies: &[f64], p_up: &[f64]) -> Vec<f64> {
    let mut centers = Vec::new();
    let mut run: Vec<f64> = Vec::new();
    for (&f, &v) in frequencies.iter().zip(p_up) {
        if v > 0.0 {
            run.push(f);
        } else if !run.is_empty() {
            centers.push((run[0] + run[run.len() - 1]) / 2.0);
            run.clear();
        }
    }
    if !run.is_empty() {
        centers.push((run[0] + run[run.len() - 1]) / 2.0);
    }
    centers
}

#[derive(Debug, Clone)]
pub struct ExchangeLawMeasurement {
    pub result: ExperimentResult,
    /// `(V_M, J)` pairs extracted from the spectra.
    pub samples: Vec<(f64, f64)>,
    pub fit: Result<ExchangeFit, String>,
}

/// Measures `J` at each barrier voltage from the branch splitting of a
/// spectroscopy scan with the right spin in an equal superposition, then fits
/// the exchange law.
pub fn exchange_law_scan(
    p: &DeviceParams,
    voltages: &[f64],
    points_per_spectrum: usize,
    opts: &SpectroscopyOptions,
) -> Result<ExchangeLawMeasurement> {
    check_nonempty("v_m", voltages)?;
    if points_per_spectrum < 16 {
        return Err(Error::param("points_per_spectrum", "must be ≥ 16"));
    }
    let tau_half = 1.0 / (4.0 * p.rabi_frequency);
    let lw = opts.linewidth(p);
    let mut samples = Vec::new();
    let mut measured = Vec::new();
    let mut resolution = Vec::new();
    for &v in voltages {
        let j_expected = p.exchange_at(v)?;
        let center = p.qubit_frequency(Qubit::Left);
        let half_span = 0.75 * j_expected + 4.0 * lw;
        let n = points_per_spectrum;
        let freqs: Vec<f64> = (0..n)
            .map(|k| center - half_span + 2.0 * half_span * k as f64 / (n - 1) as f64)
            .collect();
        let spec = exchange_spectroscopy(p, v, &[tau_half], &freqs, opts)?;
        let centers = resonance_centers(&freqs, spec.column("p_up_left").unwrap());
        let j = match centers.as_slice() {
            [a, b] => b - a,
            _ => f64::NAN,
        };
        samples.push((v, j));
        measured.push(j);
        resolution.push(2.0 * half_span / (n - 1) as f64);
    }
    let good: Vec<(f64, f64)> = samples.iter().copied().filter(|s| s.1.is_finite() && s.1 > 0.0).collect();
    let fit = fit_exchange_law(&good).map_err(|e| e.to_string());
    let mut r = ExperimentResult::new(
        "exchange_law",
        vec![SweepSpec::new("v_m", "V", voltages.to_vec())],
        p,
        None,
    )?;
    r.push_column("j_measured", "Hz", measured, false)?;
    r.push_column("j_resolution", "Hz", resolution, false)?;
    let model: Vec<f64> = voltages.iter().map(|&v| p.exchange_at(v).unwrap_or(f64::NAN)).collect();
    r.push_column("j_configured", "Hz", model, false)?;
    if let Ok(f) = &fit {
        let fitted: Vec<f64> = voltages
            .iter()
            .map(|&v| crate::device::exchange_vs_vm(&f.params, v).unwrap_or(f64::NAN))
            .collect();
        r.push_column("j_fitted", "Hz", fitted, false)?;
        r.set_meta("fit", f.params)?;
    }
    Ok(ExchangeLawMeasurement { result: r, samples, fit })
}

/// Hahn echo of `target` with a dc exchange pulse of length `τ_dc` at the
/// start of the first free-evolution period. Two final-pulse quadratures give
/// the signed precession phase picked up during the exchange pulse.
pub fn echo_exchange_phase(
    p: &DeviceParams,
    target: Qubit,
    j_on: f64,
    tau_dc: &[f64],
    other_up: bool,
    echo_tau: f64,
    noise: &NoiseConfig,
) -> Result<ExperimentResult> {
    check_times("tau_dc", tau_dc)?;
    let longest = tau_dc.iter().fold(0.0f64, |m, &t| m.max(t));
    if longest > echo_tau / 2.0 {
        return Err(Error::param(
            "tau_dc",
            format!("longest exchange pulse {longest:e} s exceeds the echo half-period {:e} s", echo_tau / 2.0),
        ));
    }
    let other = if other_up { Spin::Up } else { Spin::Down };
    let initial = basis_with(target, Spin::Down, other);
    let quadratures = [
        rotation(p, target, Axis::X, -PI / 2.0),
        rotation(p, target, Axis::Y, PI / 2.0),
    ];
    let rows: Vec<[f64; 2]> = tau_dc
        .par_iter()
        .map(|&t| {
            let mut out = [0.0; 2];
            for (k, last) in quadratures.iter().enumerate() {
                let seq = PulseSequence::from_basis(initial)
                    .then(rotation(p, target, Axis::X, PI / 2.0))
                    .then(PulseSegment::exchange(j_on, t))
                    .then(PulseSegment::idle(echo_tau / 2.0 - t))
                    .then(rotation(p, target, Axis::X, PI))
                    .then(PulseSegment::idle(echo_tau / 2.0))
                    .then(*last);
                out[k] = ensemble_p_up(&seq, p, noise, target)?;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut phase = Vec::with_capacity(rows.len());
    let mut prev: Option<f64> = None;
    for r in &rows {
        let raw = (2.0 * r[1] - 1.0).atan2(2.0 * r[0] - 1.0);
        let unwrapped = match prev {
            None => raw,
            Some(q) => q + crate::qcore::wrap_phase_symmetric(raw - q),
        };
        phase.push(unwrapped);
        prev = Some(unwrapped);
    }
    let mut r = ExperimentResult::new(
        "echo_exchange_phase",
        vec![SweepSpec::new("tau_dc", "s", tau_dc.to_vec()).with_repeat(noise.n_samples)],
        p,
        Some(noise.seed),
    )?;
    r.push_column("p_up_x", "", rows.iter().map(|x| x[0]).collect(), true)?;
    r.push_column("p_up_y", "", rows.iter().map(|x| x[1]).collect(), true)?;
    r.push_column("phase", "rad", phase, false)?;
    r.set_meta("target", target)?;
    r.set_meta("j_on", j_on)?;
    r.set_meta("other_up", other_up)?;
    r.set_meta("echo_tau", echo_tau)?;
    Ok(r)
}

/// Precession frequency offset (Hz) during the exchange pulse, from the slope
/// of the unwrapped echo phase.
pub fn exchange_frequency_shift(result: &ExperimentResult) -> Result<f64> {
    let phase = result
        .column("phase")
        .ok_or_else(|| Error::FitFailed("result has no phase column".into()))?;
    let t = &result.axes[0].values;
    if t.len() < 2 {
        return Err(Error::FitFailed("need at least two exchange-pulse lengths".into()));
    }
    Ok(linear_fit(t, phase).0 / (2.0 * PI))
}

/// Conditional Rabi oscillations: P↑ of both spins against burst length with
/// the burst at the control-↑ frequency centered in an exchange pulse of
/// length `tau_dc`.
pub fn cnot_calibration(
    p: &DeviceParams,
    j_on: f64,
    tau_p: &[f64],
    input: BasisState,
    rabi_amplitude: f64,
    tau_dc: f64,
) -> Result<ExperimentResult> {
    check_times("tau_p", tau_p)?;
    let rows: Vec<(f64, f64)> = tau_p
        .par_iter()
        .map(|&t| {
            let cp = CnotParams {
                j_on,
                tau_p: t,
                tau_dc,
                rabi_amplitude,
                pre_phase_left: 0.0,
                post_phase: [0.0; 2],
            };
            let seq = PulseSequence::from_basis(input).extend(cnot_segments(p, &cp)?);
            let out = evolve(&seq, p, DEFAULT_DT_MAX)?;
            Ok((out.p_up(Qubit::Left), out.p_up(Qubit::Right)))
        })
        .collect::<Result<_>>()?;
    let mut r = ExperimentResult::new(
        "cnot_calibration",
        vec![SweepSpec::new("tau_p", "s", tau_p.to_vec())],
        p,
        None,
    )?;
    r.push_column("p_up_left", "", rows.iter().map(|x| x.0).collect(), true)?;
    r.push_column("p_up_right", "", rows.iter().map(|x| x.1).collect(), true)?;
    r.set_meta("input", input.label())?;
    r.set_meta("j_on", j_on)?;
    r.set_meta("tau_dc", tau_dc)?;
    r.set_meta("rabi_amplitude", rabi_amplitude)?;
    Ok(r)
}

/// Prepares `|↓⟩ ⊗ R_x(θ)|↓⟩`, applies the calibrated CNOT and reports P↑ of
/// both spins and the √-overlap with the ideal output.
pub fn cnot_superposition_scan(p: &DeviceParams, cal: &CnotCalibration, thetas: &[f64]) -> Result<ExperimentResult> {
    check_nonempty("theta", thetas)?;
    let segs = cnot_segments(p, &cal.params)?;
    let ideal = crate::pulses::ideal_cnot();
    let rows: Vec<[f64; 3]> = thetas
        .par_iter()
        .map(|&theta| {
            let prep = PulseSequence::from_basis(BasisState::DownDown).then(rotation(p, Qubit::Right, Axis::X, theta));
            let prepared = evolve(&prep, p, DEFAULT_DT_MAX)?;
            let seq = PulseSequence::new(prepared).extend(segs.iter().copied());
            let out = evolve(&seq, p, DEFAULT_DT_MAX)?;
            let target = prepared.apply(&ideal);
            Ok([out.p_up(Qubit::Left), out.p_up(Qubit::Right), out.overlap(&target).sqrt()])
        })
        .collect::<Result<_>>()?;
    let mut r = ExperimentResult::new(
        "cnot_superposition_scan",
        vec![SweepSpec::new("theta_r", "rad", thetas.to_vec())],
        p,
        None,
    )?;
    r.push_column("p_up_left", "", rows.iter().map(|x| x[0]).collect(), true)?;
    r.push_column("p_up_right", "", rows.iter().map(|x| x[1]).collect(), true)?;
    r.push_column("fidelity", "", rows.iter().map(|x| x[2]).collect(), true)?;
    r.set_meta("cnot", cal.params)?;
    r.set_meta("cnot_gate_fidelity", cal.fidelity)?;
    Ok(r)
}

/// Randomized benchmarking of one qubit; the fit (or the reason it failed)
/// is stored in the metadata next to the raw decay.
pub fn run_rb(p: &DeviceParams, cfg: &RbConfig) -> Result<(ExperimentResult, RbData)> {
    let data = randomized_benchmarking(p, cfg)?;
    let mut r = ExperimentResult::new(
        "randomized_benchmarking",
        vec![SweepSpec::new(
            "n_cliffords",
            "",
            cfg.lengths.iter().map(|&n| n as f64).collect(),
        )
        .with_repeat(cfg.n_sequences)],
        p,
        Some(cfg.seed),
    )?;
    r.push_column("p_up_mean", "", data.mean_p_up.clone(), true)?;
    r.push_column("p_up_sem", "", data.sem_p_up.clone(), false)?;
    r.set_meta("target", cfg.target)?;
    r.set_meta("error_model", cfg.model)?;
    r.set_meta("shots", cfg.shots)?;
    match &data.fit {
        Ok(f) => r.set_meta("fit", f)?,
        Err(e) => r.set_meta("fit_error", e)?,
    }
    Ok((r, data))
}
