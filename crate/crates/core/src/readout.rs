//! Monte-Carlo model of energy-selective single-shot spin readout.
//!
//! A spin-↑ electron tunnels out after `τ_off ~ Exp(Γ_off)` and a spin-↓
//! electron tunnels back in after `τ_on ~ Exp(Γ_on)`, giving a square current
//! blip. A spin-↓ electron gives a flat trace. The ↑ state relaxes before
//! tunneling with probability `1 − exp(−τ_off/T₁)`. Thermal mis-initialization
//! loads ↑ instead of ↓ with a Fermi probability.
//!
//! Each sample is the current averaged over its sampling bin, so even a blip
//! shorter than one bin leaves a nonzero sample. Traces are low-pass filtered
//! with a single-pole IIR filter and scored by their peak-to-peak current.

use std::f64::consts::PI;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use rayon::prelude::*;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qcore::{Qubit, Spin};

const PLANCK: f64 = 6.626_070_15e-34;
const BOLTZMANN: f64 = 1.380_649e-23;

/// Charge-sensor noise: one-sided density `S(f) = white + a/f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpectrumConfig {
    /// Current²/Hz.
    pub white_density: f64,
    /// Current² (density at 1 Hz).
    pub one_over_f_amplitude: f64,
}

impl NoiseSpectrumConfig {
    pub fn silent() -> Self {
        NoiseSpectrumConfig {
            white_density: 0.0,
            one_over_f_amplitude: 0.0,
        }
    }

    pub fn density(&self, f: f64) -> f64 {
        self.white_density + if f > 0.0 { self.one_over_f_amplitude / f } else { 0.0 }
    }

    pub fn is_silent(&self) -> bool {
        self.white_density == 0.0 && self.one_over_f_amplitude == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReadoutParams {
    /// Tunnel-out rate of a spin-↑ electron, 1/s.
    pub gamma_off_up: f64,
    /// Tunnel-in rate of a spin-↓ electron, 1/s.
    pub gamma_on: f64,
    pub t1: f64,
    /// Readout window, s.
    pub t_read: f64,
    pub sample_rate: f64,
    pub blip_amplitude: f64,
    pub noise: NoiseSpectrumConfig,
    /// Low-pass cutoff in Hz; infinite disables the filter.
    pub filter_cutoff: f64,
    /// Electron temperature, K.
    pub t_e: f64,
    /// Spin splitting that sets the thermal loading probability, Hz.
    pub e_z: f64,
}

/// Calibrated white-noise densities that give best visibilities of 0.85
/// (left) and 0.78 (right) with the other defaults.
pub const DEFAULT_WHITE_DENSITY: [f64; 2] = [1.53e-7, 2.1e-9];

impl Default for ReadoutParams {
    fn default() -> Self {
        ReadoutParams {
            gamma_off_up: 2e3,
            gamma_on: 1e3,
            t1: 22e-3,
            t_read: 2.5e-3,
            sample_rate: 50e3,
            blip_amplitude: 1.0,
            noise: NoiseSpectrumConfig {
                white_density: DEFAULT_WHITE_DENSITY[0],
                one_over_f_amplitude: 0.0,
            },
            filter_cutoff: 1e3,
            t_e: 0.150,
            e_z: 7.0e9,
        }
    }
}

impl ReadoutParams {
    /// Default parameters of one dot.
    pub fn for_dot(q: Qubit) -> Self {
        let mut rp = Self::default();
        rp.noise.white_density = match q {
            Qubit::Left => DEFAULT_WHITE_DENSITY[0],
            Qubit::Right => DEFAULT_WHITE_DENSITY[1],
        };
        rp
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("gamma_off_up", self.gamma_off_up),
            ("gamma_on", self.gamma_on),
            ("t1", self.t1),
            ("t_read", self.t_read),
            ("sample_rate", self.sample_rate),
            ("filter_cutoff", self.filter_cutoff),
        ] {
            if !(v > 0.0) {
                return Err(Error::param(name, format!("must be > 0, got {v}")));
            }
        }
        if !(self.t_e >= 0.0) || !(self.e_z >= 0.0) {
            return Err(Error::param("t_e", "temperature and splitting must be ≥ 0"));
        }
        if self.filter_cutoff.is_finite() && self.sample_rate < 20.0 * self.filter_cutoff {
            return Err(Error::param(
                "sample_rate",
                format!(
                    "must be at least 20× the filter cutoff ({} Hz < {} Hz)",
                    self.sample_rate,
                    20.0 * self.filter_cutoff
                ),
            ));
        }
        if !(self.noise.white_density >= 0.0) || !(self.noise.one_over_f_amplitude >= 0.0) {
            return Err(Error::param("noise", "densities must be ≥ 0"));
        }
        if self.n_samples() < 2 {
            return Err(Error::param("t_read", "window holds fewer than two samples"));
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        (self.t_read * self.sample_rate).round() as usize
    }

    /// Probability of loading ↑ when ↓ is intended.
    pub fn thermal_flip_probability(&self) -> f64 {
        if self.t_e == 0.0 {
            return 0.0;
        }
        1.0 / (1.0 + (PLANCK * self.e_z / (BOLTZMANN * self.t_e)).exp())
    }

    /// `F↑` at an infinitesimal threshold without noise:
    /// `Γ/(Γ + 1/T₁) · (1 − exp(−(Γ + 1/T₁) T_read))`.
    pub fn detection_probability(&self) -> f64 {
        let g = self.gamma_off_up + 1.0 / self.t1;
        self.gamma_off_up / g * (1.0 - (-g * self.t_read).exp())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutTrace {
    pub samples: Vec<f64>,
    pub truth: Spin,
    /// Tunnel-out and tunnel-in times of a blip that starts inside the window.
    pub events: Option<(f64, f64)>,
}

/// Noise-free trace for an electron that enters the readout window in `spin`.
pub fn generate_trace(rp: &ReadoutParams, spin: Spin, rng: &mut impl Rng) -> ReadoutTrace {
    let n = rp.n_samples();
    let mut samples = vec![0.0; n];
    let mut events = None;
    if spin == Spin::Up {
        let t_out = Exp::new(rp.gamma_off_up).unwrap().sample(rng);
        let relaxed = rng.random::<f64>() < 1.0 - (-t_out / rp.t1).exp();
        if !relaxed && t_out < rp.t_read {
            let t_in = t_out + Exp::new(rp.gamma_on).unwrap().sample(rng);
            let dt = 1.0 / rp.sample_rate;
            let end = t_in.min(rp.t_read);
            let first = (t_out * rp.sample_rate).floor() as usize;
            let last = ((end * rp.sample_rate).ceil() as usize).min(n);
            for (k, s) in samples.iter_mut().enumerate().take(last).skip(first) {
                let lo = (k as f64 * dt).max(t_out);
                let hi = ((k + 1) as f64 * dt).min(end);
                if hi > lo {
                    *s = rp.blip_amplitude * (hi - lo) / dt;
                }
            }
            events = Some((t_out, t_in));
        }
    }
    ReadoutTrace {
        samples,
        truth: spin,
        events,
    }
}

/// Thermal loading: an intended ↓ becomes ↑ with the Fermi probability.
pub fn apply_thermal_misinit(rp: &ReadoutParams, intended: Spin, rng: &mut impl Rng) -> Spin {
    match intended {
        Spin::Down if rng.random::<f64>() < rp.thermal_flip_probability() => Spin::Up,
        s => s,
    }
}

/// Rising and falling edge times recovered from a noise-free trace.
pub fn edge_times(rp: &ReadoutParams, samples: &[f64]) -> Option<(f64, f64)> {
    let dt = 1.0 / rp.sample_rate;
    let first = samples.iter().position(|&v| v > 0.0)?;
    let last = samples.iter().rposition(|&v| v > 0.0)?;
    let frac = |k: usize| samples[k] / rp.blip_amplitude;
    if first == last {
        let start = first as f64 * dt;
        return Some((start, start + frac(first) * dt));
    }
    let rise = (first as f64 + 1.0 - frac(first)) * dt;
    let fall = (last as f64 + frac(last)) * dt;
    Some((rise, fall))
}

/// Synthesizes noise traces of a fixed length from a one-sided spectrum.
pub struct NoiseGenerator {
    n: usize,
    sample_rate: f64,
    amplitude: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl NoiseGenerator {
    pub fn new(cfg: &NoiseSpectrumConfig, n: usize, sample_rate: f64) -> Self {
        let df = sample_rate / n as f64;
        // E|X_k|² = S(f_k) f_s N / 2 off the edges, S f_s N at Nyquist
        let amplitude = (0..=n / 2)
            .map(|k| {
                if k == 0 {
                    0.0
                } else if 2 * k == n {
                    (cfg.density(k as f64 * df) * sample_rate * n as f64).sqrt()
                } else {
                    (cfg.density(k as f64 * df) * sample_rate * n as f64 / 4.0).sqrt()
                }
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_inverse(n);
        NoiseGenerator {
            n,
            sample_rate,
            amplitude,
            fft,
        }
    }

    pub fn sample(&self, rng: &mut impl Rng) -> Vec<f64> {
        let n = self.n;
        let mut spec = vec![Complex::new(0.0, 0.0); n];
        for k in 1..=n / 2 {
            let a = self.amplitude[k];
            if 2 * k == n {
                spec[k] = Complex::new(a * rng.sample::<f64, _>(StandardNormal), 0.0);
            } else {
                let z = Complex::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * a;
                spec[k] = z;
                spec[n - k] = z.conj();
            }
        }
        self.fft.process(&mut spec);
        spec.iter().map(|z| z.re / n as f64).collect()
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }
}

/// Adds spectrum-shaped Gaussian noise to a trace.
pub fn add_noise(trace: &ReadoutTrace, cfg: &NoiseSpectrumConfig, sample_rate: f64, rng: &mut impl Rng) -> ReadoutTrace {
    let mut out = trace.clone();
    if cfg.is_silent() {
        return out;
    }
    let noise = NoiseGenerator::new(cfg, trace.samples.len(), sample_rate).sample(rng);
    for (s, n) in out.samples.iter_mut().zip(noise) {
        *s += n;
    }
    out
}

/// One-sided periodogram `2|X_k|²/(f_s N)` at `f_k = k f_s/N`, `k ≥ 1`.
pub fn periodogram(samples: &[f64], sample_rate: f64) -> Vec<(f64, f64)> {
    let n = samples.len();
    let mut buf: Vec<Complex<f64>> = samples.iter().map(|&x| Complex::new(x, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    (1..=n / 2)
        .map(|k| {
            let scale = if 2 * k == n { 1.0 } else { 2.0 };
            (k as f64 * sample_rate / n as f64, scale * buf[k].norm_sqr() / (sample_rate * n as f64))
        })
        .collect()
}

/// Single-pole low-pass, `y_k = y_{k−1} + α (x_k − y_{k−1})` with
/// `α = 1 − exp(−2π f_c / f_s)`, started at the first sample.
pub fn low_pass(samples: &[f64], cutoff: f64, sample_rate: f64) -> Vec<f64> {
    if !cutoff.is_finite() {
        return samples.to_vec();
    }
    let alpha = 1.0 - (-2.0 * PI * cutoff / sample_rate).exp();
    let mut y = samples.first().copied().unwrap_or(0.0);
    samples
        .iter()
        .map(|&x| {
            y += alpha * (x - y);
            y
        })
        .collect()
}

/// Peak-to-peak current of the filtered trace.
pub fn filter_and_score(trace: &ReadoutTrace, rp: &ReadoutParams) -> f64 {
    let y = low_pass(&trace.samples, rp.filter_cutoff, rp.sample_rate);
    let max = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = y.iter().copied().fold(f64::INFINITY, f64::min);
    if y.is_empty() {
        0.0
    } else {
        max - min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidelityCurve {
    pub thresholds: Vec<f64>,
    pub f_up: Vec<f64>,
    pub f_down: Vec<f64>,
    /// `F↑ + F↓ − 1`.
    pub visibility: Vec<f64>,
}

impl FidelityCurve {
    pub fn from_scores(up: &[f64], down: &[f64], thresholds: Vec<f64>) -> Self {
        let mut up = up.to_vec();
        let mut down = down.to_vec();
        up.sort_by(f64::total_cmp);
        down.sort_by(f64::total_cmp);
        let above = |sorted: &[f64], t: f64| sorted.len() - sorted.partition_point(|&s| s <= t);
        let f_up: Vec<f64> = thresholds
            .iter()
            .map(|&t| above(&up, t) as f64 / up.len() as f64)
            .collect();
        let f_down: Vec<f64> = thresholds
            .iter()
            .map(|&t| 1.0 - above(&down, t) as f64 / down.len() as f64)
            .collect();
        let visibility = f_up.iter().zip(&f_down).map(|(a, b)| a + b - 1.0).collect();
        FidelityCurve {
            thresholds,
            f_up,
            f_down,
            visibility,
        }
    }

    /// Index and value of the best visibility.
    pub fn best(&self) -> (usize, f64) {
        self.visibility
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |b, (i, v)| if v > b.1 { (i, v) } else { b })
    }

    pub fn best_threshold(&self) -> f64 {
        self.thresholds[self.best().0]
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["threshold", "f_up", "f_down", "visibility"])?;
        for i in 0..self.thresholds.len() {
            w.write_record([
                self.thresholds[i].to_string(),
                self.f_up[i].to_string(),
                self.f_down[i].to_string(),
                self.visibility[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Peak-to-peak scores of a readout simulation, split by intended spin.
#[derive(Debug, Clone, PartialEq)]
pub struct ReadoutScores {
    pub up: Vec<f64>,
    pub down: Vec<f64>,
}

fn trace_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Simulates `n_traces` intended-↑ and `n_traces` intended-↓ shots of one
/// dot. `partner_delay` is the time the spin waits while the other dot is
/// read first, during which it may relax.
pub fn simulate_scores(rp: &ReadoutParams, n_traces: usize, partner_delay: f64, seed: u64) -> Result<ReadoutScores> {
    rp.validate()?;
    if !(partner_delay >= 0.0) {
        return Err(Error::param("partner_delay", "must be ≥ 0"));
    }
    let generator = NoiseGenerator::new(&rp.noise, rp.n_samples(), rp.sample_rate);
    let survive = (-partner_delay / rp.t1).exp();
    let shot = |index: usize, intended: Spin| {
        let mut rng = trace_rng(seed, index);
        let mut spin = apply_thermal_misinit(rp, intended, &mut rng);
        if spin == Spin::Up && rng.random::<f64>() >= survive {
            spin = Spin::Down;
        }
        let mut trace = generate_trace(rp, spin, &mut rng);
        if !rp.noise.is_silent() {
            for (s, n) in trace.samples.iter_mut().zip(generator.sample(&mut rng)) {
                *s += n;
            }
        }
        filter_and_score(&trace, rp)
    };
    let up = (0..n_traces).into_par_iter().map(|i| shot(2 * i, Spin::Up)).collect();
    let down = (0..n_traces).into_par_iter().map(|i| shot(2 * i + 1, Spin::Down)).collect();
    Ok(ReadoutScores { up, down })
}

/// Default threshold grid: 0 to 1.5 blip amplitudes.
pub fn default_thresholds(rp: &ReadoutParams, n: usize) -> Vec<f64> {
    (0..n)
        .map(|k| 1.5 * rp.blip_amplitude * k as f64 / (n - 1).max(1) as f64)
        .collect()
}

pub fn fidelity_sweep(rp: &ReadoutParams, n_traces: usize, partner_delay: f64, seed: u64) -> Result<FidelityCurve> {
    let scores = simulate_scores(rp, n_traces, partner_delay, seed)?;
    Ok(FidelityCurve::from_scores(&scores.up, &scores.down, default_thresholds(rp, 301)))
}

/// Both dots read sequentially, left first; the right spin waits one
/// readout window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequentialReadout {
    pub left: ReadoutParams,
    pub right: ReadoutParams,
    pub partner_delay: f64,
}

impl Default for SequentialReadout {
    fn default() -> Self {
        let left = ReadoutParams::for_dot(Qubit::Left);
        SequentialReadout {
            left,
            right: ReadoutParams::for_dot(Qubit::Right),
            partner_delay: left.t_read,
        }
    }
}

impl SequentialReadout {
    pub fn dot(&self, q: Qubit) -> (&ReadoutParams, f64) {
        match q {
            Qubit::Left => (&self.left, 0.0),
            Qubit::Right => (&self.right, self.partner_delay),
        }
    }

    pub fn fidelity_curves(&self, n_traces: usize, seed: u64) -> Result<[FidelityCurve; 2]> {
        let l = fidelity_sweep(&self.left, n_traces, 0.0, seed)?;
        let r = fidelity_sweep(&self.right, n_traces, self.partner_delay, seed.wrapping_add(1))?;
        Ok([l, r])
    }
}

/// Contributions to the loss of best visibility, from noise-free analytic
/// expressions at an infinitesimal threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityBudget {
    /// Visibility lost to thermal loading.
    pub thermal: f64,
    /// Visibility lost to relaxation before tunneling, including the wait for
    /// the partner readout.
    pub relaxation: f64,
    /// Visibility lost to tunneling after the window closes.
    pub window: f64,
}

pub fn visibility_budget(rp: &ReadoutParams, partner_delay: f64) -> VisibilityBudget {
    let g = rp.gamma_off_up;
    let survive = (-partner_delay / rp.t1).exp();
    let no_relax = 1.0 - (-g * rp.t_read).exp();
    let detect = rp.detection_probability() * survive;
    VisibilityBudget {
        thermal: rp.thermal_flip_probability() * detect,
        relaxation: no_relax - detect,
        window: 1.0 - no_relax,
    }
}

/// Finds the white-noise density at which the best visibility equals
/// `target`, by bisection with common random numbers.
pub fn calibrate_white_noise(
    rp: &ReadoutParams,
    partner_delay: f64,
    target: f64,
    n_traces: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    let best_at = |w: f64| -> Result<f64> {
        let mut trial = *rp;
        trial.noise.white_density = w;
        Ok(fidelity_sweep(&trial, n_traces, partner_delay, seed)?.best().1)
    };
    let v0 = best_at(0.0)?;
    if v0 < target {
        return Err(Error::OutOfRegime(format!(
            "noise-free best visibility {v0:.4} is already below the target {target:.4}"
        )));
    }
    let mut lo = 0.0;
    let mut hi = 1e-6;
    while best_at(hi)? > target {
        lo = hi;
        hi *= 4.0;
        if hi > 1.0 {
            return Err(Error::FitFailed("white-noise calibration did not bracket the target".into()));
        }
    }
    for _ in 0..30 {
        let mid = 0.5 * (lo + hi);
        if best_at(mid)? > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = 0.5 * (lo + hi);
    Ok((w, best_at(w)?))
}

/// Writes a trace as `time [s], current` rows.
pub fn write_trace_csv<W: Write>(trace: &ReadoutTrace, sample_rate: f64, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["time [s]", "current"])?;
    for (k, v) in trace.samples.iter().enumerate() {
        w.write_record([(k as f64 / sample_rate).to_string(), v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
