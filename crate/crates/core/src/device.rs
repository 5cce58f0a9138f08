//! Static device model: spin Hamiltonian, energy levels, ESR transition
//! frequencies and the exchange coupling as a function of the barrier gate.
//!
//! Zeeman fields are expressed as frequencies. With mean splitting `E_Z` and
//! gradient `dE_Z` the per-dot fields are `E_Z ∓ dE_Z/2` (left, right) plus the
//! pulse-induced shifts `B1_zL`, `B1_zR`.
//!
//! The closed-form levels implemented by [`analytic_energy_levels`] use the
//! radical `√(J² + (dE_Z − (B1_zL − B1_zR))²)` and place the `B1` shifts
//! symmetrically on both parallel states. Numerical diagonalization is the
//! canonical route; the closed forms are a cross-check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{levenberg_marquardt, LmOptions};
use crate::qcore::{c, eig_hermitian, spin_operators, BasisState, ComplexMatrix4, Qubit};

/// Below this ratio `dE_Z / J` the resonant-CNOT picture degrades.
pub const REGIME_FACTOR: f64 = 5.0;

/// Parameters of the exchange law `J(V_M) = c (V_M0 − V_M)/(V_M − V_M1)² · exp(−√(|V_M − V_M0|/V_on))`.
///
/// Voltages are in volts and `c` in Hz·V, so `J` comes out in Hz.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExchangeFitParams {
    pub c: f64,
    pub v_m0: f64,
    pub v_m1: f64,
    pub v_on: f64,
}

impl Default for ExchangeFitParams {
    /// `V_M0`, `V_M1` at 412.8 mV and 451.8 mV; `V_on` and `c` solved so the
    /// curve passes through 0.3 MHz at 390 mV and 10 MHz at 410 mV.
    fn default() -> Self {
        ExchangeFitParams {
            c: 84_124_732.360_709_79,
            v_m0: 0.4128,
            v_m1: 0.4518,
            v_on: 4.137_880_782_992_88e-4,
        }
    }
}

impl ExchangeFitParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_on > 0.0) {
            return Err(Error::param("exchange_von", "must be > 0"));
        }
        if self.v_m0 == self.v_m1 {
            return Err(Error::param("exchange_vm1", "must differ from exchange_vm0"));
        }
        if !self.c.is_finite() {
            return Err(Error::param("exchange_c", "must be finite"));
        }
        Ok(())
    }

    /// Voltage window on which the default law is used: positive and
    /// increasing.
    pub fn operating_window(&self) -> (f64, f64) {
        (0.375, 0.410)
    }
}

/// Physical constants of the simulated device. Frequencies in Hz, times in s.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceParams {
    /// Mean Zeeman splitting.
    pub e_z: f64,
    /// Zeeman difference right − left.
    pub de_z: f64,
    /// Left-dot z-field shift while exchange is pulsed on.
    pub b1_z_left: f64,
    /// Right-dot z-field shift while exchange is pulsed on.
    pub b1_z_right: f64,
    pub e_c_left: f64,
    pub e_c_right: f64,
    pub t1: f64,
    pub t2_star_left: f64,
    pub t2_star_right: f64,
    pub t2_echo_left: f64,
    pub t2_echo_right: f64,
    pub exchange_fit: ExchangeFitParams,
    /// Rabi frequency used for single-qubit gates.
    pub rabi_frequency: f64,
    /// Drive amplitude seen by the non-addressed spin, relative to the target.
    pub drive_crosstalk: f64,
    /// Residual exchange while the barrier is closed.
    pub j_idle: f64,
}

/// 6 meV expressed as a frequency.
pub const SIX_MEV_HZ: f64 = 6e-3 * 2.417_989_242e14;

impl Default for DeviceParams {
    fn default() -> Self {
        DeviceParams {
            e_z: 14.0e9,
            de_z: 200e6,
            b1_z_left: 0.0,
            b1_z_right: 0.0,
            e_c_left: SIX_MEV_HZ,
            e_c_right: SIX_MEV_HZ,
            t1: 22e-3,
            t2_star_left: 1.2e-6,
            t2_star_right: 1.4e-6,
            t2_echo_left: 22e-6,
            t2_echo_right: 80e-6,
            exchange_fit: ExchangeFitParams::default(),
            rabi_frequency: 4.8e6,
            drive_crosstalk: 0.0,
            j_idle: 0.0,
        }
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("e_z", self.e_z),
            ("de_z", self.de_z),
            ("e_c_left", self.e_c_left),
            ("e_c_right", self.e_c_right),
            ("t1", self.t1),
            ("t2_star_left", self.t2_star_left),
            ("t2_star_right", self.t2_star_right),
            ("t2_echo_left", self.t2_echo_left),
            ("t2_echo_right", self.t2_echo_right),
            ("rabi_frequency", self.rabi_frequency),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::param(name, format!("must be > 0, got {v}")));
            }
        }
        for (name, v) in [
            ("b1_z_left", self.b1_z_left),
            ("b1_z_right", self.b1_z_right),
        ] {
            if !v.is_finite() {
                return Err(Error::param(name, "must be finite"));
            }
        }
        if !(self.drive_crosstalk >= 0.0) {
            return Err(Error::param("drive_crosstalk", "must be ≥ 0"));
        }
        if !(self.j_idle >= 0.0) {
            return Err(Error::param("j_idle", "must be ≥ 0"));
        }
        self.exchange_fit.validate()
    }

    /// Logs a warning when `J` is not small compared with the gradient.
    pub fn check_regime(&self, j: f64) -> bool {
        let ok = self.de_z >= REGIME_FACTOR * j;
        if !ok {
            log::warn!(
                "dE_Z = {:.4e} Hz is less than {REGIME_FACTOR}·J = {:.4e} Hz; conditional-ESR picture degrades",
                self.de_z,
                REGIME_FACTOR * j
            );
        }
        ok
    }

    /// Bare Zeeman frequency of a spin (no exchange, no pulse shifts). This
    /// defines the rotating frame of each qubit.
    pub fn qubit_frequency(&self, q: Qubit) -> f64 {
        match q {
            Qubit::Left => self.e_z - self.de_z / 2.0,
            Qubit::Right => self.e_z + self.de_z / 2.0,
        }
    }

    /// z-field on a dot including the pulse-induced shift.
    pub fn z_field(&self, q: Qubit) -> f64 {
        match q {
            Qubit::Left => self.qubit_frequency(q) + self.b1_z_left,
            Qubit::Right => self.qubit_frequency(q) + self.b1_z_right,
        }
    }

    pub fn t2_star(&self, q: Qubit) -> f64 {
        match q {
            Qubit::Left => self.t2_star_left,
            Qubit::Right => self.t2_star_right,
        }
    }

    pub fn t2_echo(&self, q: Qubit) -> f64 {
        match q {
            Qubit::Left => self.t2_echo_left,
            Qubit::Right => self.t2_echo_right,
        }
    }

    pub fn exchange_at(&self, v_m: f64) -> Result<f64> {
        exchange_vs_vm(&self.exchange_fit, v_m)
    }
}

/// `J(S_L·S_R − 1/4) + B_zL S_zL + B_zR S_zR` for explicit z-fields.
pub fn spin_hamiltonian(z_left: f64, z_right: f64, j: f64) -> ComplexMatrix4 {
    let s = spin_operators();
    let ident = ComplexMatrix4::identity();
    (s.exchange - ident * c(0.25)) * c(j) + s.left[2] * c(z_left) + s.right[2] * c(z_right)
}

/// Static two-spin Hamiltonian (Hz) at exchange `j`, including the `B1` shifts.
pub fn build_static_hamiltonian(p: &DeviceParams, j: f64) -> Result<ComplexMatrix4> {
    if !(j >= 0.0) {
        return Err(Error::param("J", format!("must be ≥ 0, got {j}")));
    }
    Ok(spin_hamiltonian(p.z_field(Qubit::Left), p.z_field(Qubit::Right), j))
}

/// Eigenvalues of the four spin states. The antiparallel entries refer to the
/// exchange-hybridized states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyLevels {
    pub e_uu: f64,
    pub e_ud: f64,
    pub e_du: f64,
    pub e_dd: f64,
}

impl EnergyLevels {
    pub fn get(&self, b: BasisState) -> f64 {
        match b {
            BasisState::UpUp => self.e_uu,
            BasisState::UpDown => self.e_ud,
            BasisState::DownUp => self.e_du,
            BasisState::DownDown => self.e_dd,
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.e_uu, self.e_ud, self.e_du, self.e_dd]
    }

    pub fn sum(&self) -> f64 {
        self.e_uu + self.e_ud + self.e_du + self.e_dd
    }
}

/// Eigenbasis labeled by computational state.
#[derive(Debug, Clone)]
pub struct LabeledEigenbasis {
    pub levels: EnergyLevels,
    /// Column `k` is the eigenvector adiabatically connected to basis state
    /// `k`, phased so its dominant component is real and positive.
    pub vectors: ComplexMatrix4,
}

/// Minimum squared overlap with a computational state for a label to be
/// considered meaningful.
const LABEL_WEIGHT_MIN: f64 = 0.75;

/// Diagonalizes `h` and labels each eigenvector by its dominant basis
/// component. Fails when the labeling is ambiguous (strong hybridization).
pub fn labeled_eigenbasis(h: &ComplexMatrix4) -> Result<LabeledEigenbasis> {
    let eig = eig_hermitian(h)?;
    let mut values = [f64::NAN; 4];
    let mut vectors = ComplexMatrix4::zeros();
    let mut taken = [false; 4];
    for k in 0..4 {
        let col = eig.vectors.column(k);
        let (dominant, weight) = (0..4)
            .map(|i| (i, col[i].norm_sqr()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        if weight < LABEL_WEIGHT_MIN || taken[dominant] {
            return Err(Error::OutOfRegime(format!(
                "eigenstate labeling is ambiguous (dominant weight {weight:.3}); exchange is not small compared with the Zeeman gradient"
            )));
        }
        taken[dominant] = true;
        let phase = col[dominant] / c(col[dominant].norm());
        vectors.set_column(dominant, &(col / phase));
        values[dominant] = eig.values[k];
    }
    Ok(LabeledEigenbasis {
        levels: EnergyLevels {
            e_uu: values[0],
            e_ud: values[1],
            e_du: values[2],
            e_dd: values[3],
        },
        vectors,
    })
}

pub fn energy_levels(p: &DeviceParams, j: f64) -> Result<EnergyLevels> {
    p.check_regime(j);
    let h = build_static_hamiltonian(p, j)?;
    Ok(labeled_eigenbasis(&h)?.levels)
}

/// Closed-form levels (cross-check for [`energy_levels`]).
pub fn analytic_energy_levels(p: &DeviceParams, j: f64) -> EnergyLevels {
    let sum_b1 = p.b1_z_left + p.b1_z_right;
    let gap = p.de_z - (p.b1_z_left - p.b1_z_right);
    let root = (j * j + gap * gap).sqrt();
    EnergyLevels {
        e_uu: p.e_z + sum_b1 / 2.0,
        e_ud: (-j - root) / 2.0,
        e_du: (-j + root) / 2.0,
        e_dd: -p.e_z - sum_b1 / 2.0,
    }
}

/// ESR frequencies of each spin conditioned on the other spin's state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionFrequencies {
    /// Left spin flip with right spin down: |↓↓⟩ ↔ |↑↓⟩.
    pub left_given_right_down: f64,
    /// Left spin flip with right spin up: |↓↑⟩ ↔ |↑↑⟩.
    pub left_given_right_up: f64,
    /// Right spin flip with left spin down: |↓↓⟩ ↔ |↓↑⟩.
    pub right_given_left_down: f64,
    /// Right spin flip with left spin up: |↑↓⟩ ↔ |↑↑⟩.
    pub right_given_left_up: f64,
}

impl TransitionFrequencies {
    pub fn from_levels(l: &EnergyLevels) -> Self {
        TransitionFrequencies {
            left_given_right_down: (l.e_ud - l.e_dd).abs(),
            left_given_right_up: (l.e_uu - l.e_du).abs(),
            right_given_left_down: (l.e_du - l.e_dd).abs(),
            right_given_left_up: (l.e_uu - l.e_ud).abs(),
        }
    }

    /// Frequency to flip `target` when the other spin is `other_up`.
    pub fn conditional(&self, target: Qubit, other_up: bool) -> f64 {
        match (target, other_up) {
            (Qubit::Left, false) => self.left_given_right_down,
            (Qubit::Left, true) => self.left_given_right_up,
            (Qubit::Right, false) => self.right_given_left_down,
            (Qubit::Right, true) => self.right_given_left_up,
        }
    }

    /// Shift of `target`'s resonance caused by flipping the other spin.
    pub fn exchange_splitting(&self, target: Qubit) -> f64 {
        self.conditional(target, true) - self.conditional(target, false)
    }
}

pub fn transition_frequencies(p: &DeviceParams, j: f64) -> Result<TransitionFrequencies> {
    if !(p.de_z > 0.0) {
        return Err(Error::param("de_z", "must be > 0"));
    }
    Ok(TransitionFrequencies::from_levels(&energy_levels(p, j)?))
}

pub fn analytic_transition_frequencies(p: &DeviceParams, j: f64) -> TransitionFrequencies {
    TransitionFrequencies::from_levels(&analytic_energy_levels(p, j))
}

/// Exchange from the Hubbard-model expression
/// `J = 2 t_c² (E_CL + E_CR) / ((E_CL + ε)(E_CR − ε))`. All arguments in Hz.
pub fn exchange_from_detuning(e_cl: f64, e_cr: f64, t_c: f64, eps: f64) -> Result<f64> {
    if !(e_cl > 0.0 && e_cr > 0.0) {
        return Err(Error::param("E_C", "charging energies must be > 0"));
    }
    let denom = (e_cl + eps) * (e_cr - eps);
    if !(denom > 0.0) || eps.abs() >= e_cl.min(e_cr) {
        return Err(Error::OutOfRegime(format!(
            "detuning {eps:.4e} Hz reaches a charge transition (E_CL = {e_cl:.4e}, E_CR = {e_cr:.4e})"
        )));
    }
    if t_c > 0.1 * e_cl.min(e_cr) {
        log::warn!("t_c = {t_c:.3e} Hz is not small compared with the charging energy; J is approximate");
    }
    Ok(2.0 * t_c * t_c * (e_cl + e_cr) / denom)
}

fn exchange_shape(fit: &ExchangeFitParams, v_m: f64) -> f64 {
    let d = v_m - fit.v_m1;
    (fit.v_m0 - v_m) / (d * d) * (-((v_m - fit.v_m0).abs() / fit.v_on).sqrt()).exp()
}

/// Exchange coupling (Hz) at barrier voltage `v_m` (V).
pub fn exchange_vs_vm(fit: &ExchangeFitParams, v_m: f64) -> Result<f64> {
    fit.validate()?;
    if (v_m - fit.v_m1).abs() < 1e-12 * fit.v_m1.abs().max(1.0) {
        return Err(Error::OutOfRegime(format!(
            "V_M = {v_m} V coincides with the zero-barrier voltage V_M1"
        )));
    }
    let j = fit.c * exchange_shape(fit, v_m);
    if j < 0.0 {
        return Err(Error::OutOfRegime(format!(
            "V_M = {v_m} V lies beyond V_M0 = {} V where the exchange law turns negative",
            fit.v_m0
        )));
    }
    Ok(j)
}

#[derive(Debug, Clone)]
pub struct ExchangeFit {
    pub params: ExchangeFitParams,
    /// Norm of the log-space residual vector.
    pub residual_norm: f64,
    pub iterations: usize,
}

fn log_residuals(x: &[f64], samples: &[(f64, f64)]) -> Vec<f64> {
    let fit = ExchangeFitParams {
        c: x[0].exp(),
        v_m0: x[1],
        v_m1: x[2],
        v_on: x[3].exp(),
    };
    samples
        .iter()
        .map(|&(v, j)| {
            let model = fit.c * exchange_shape(&fit, v);
            if model > 0.0 && model.is_finite() {
                model.ln() - j.ln()
            } else {
                1e3
            }
        })
        .collect()
}

/// Least-squares fit of the exchange law to `(V_M [V], J [Hz])` samples in
/// log-J space. Uses a small multi-start grid over the shape parameters with
/// the scale solved in closed form for each start.
pub fn fit_exchange_law(samples: &[(f64, f64)]) -> Result<ExchangeFit> {
    if samples.len() < 4 {
        return Err(Error::param(
            "samples",
            format!("need at least 4 (V_M, J) samples, got {}", samples.len()),
        ));
    }
    if samples.iter().any(|&(v, j)| !(j > 0.0) || !v.is_finite()) {
        return Err(Error::param("samples", "all J values must be positive and finite"));
    }
    let j_max = samples.iter().map(|s| s.1).fold(f64::MIN, f64::max);
    let j_min = samples.iter().map(|s| s.1).fold(f64::MAX, f64::min);
    if j_max / j_min < 100.0 {
        return Err(Error::param(
            "samples",
            format!("J must span at least two decades (spans {:.2})", (j_max / j_min).log10()),
        ));
    }
    let v_max = samples.iter().map(|s| s.0).fold(f64::MIN, f64::max);
    let v_min = samples.iter().map(|s| s.0).fold(f64::MAX, f64::min);
    let span = (v_max - v_min).max(1e-6);

    let mut starts: Vec<(f64, Vec<f64>)> = Vec::new();
    for d0 in [0.02, 0.05, 0.1, 0.2, 0.4] {
        for d1 in [0.5, 1.0, 2.0, 4.0] {
            for von in [0.003, 0.01, 0.03, 0.1] {
                let v_m0 = v_max + d0 * span;
                let v_m1 = v_m0 + d1 * span;
                let v_on = von * span;
                let shape = ExchangeFitParams {
                    c: 1.0,
                    v_m0,
                    v_m1,
                    v_on,
                };
                let ln_c = samples
                    .iter()
                    .map(|&(v, j)| j.ln() - exchange_shape(&shape, v).ln())
                    .sum::<f64>()
                    / samples.len() as f64;
                let x = vec![ln_c, v_m0, v_m1, v_on.ln()];
                let cost: f64 = log_residuals(&x, samples).iter().map(|r| r * r).sum();
                if cost.is_finite() {
                    starts.push((cost, x));
                }
            }
        }
    }
    starts.sort_by(|a, b| a.0.total_cmp(&b.0));

    let opts = LmOptions {
        max_iterations: 2000,
        ..LmOptions::default()
    };
    let mut best: Option<crate::fit::LmSolution> = None;
    for (_, x0) in starts.iter().take(8) {
        let sol = levenberg_marquardt(|x| log_residuals(x, samples), x0, &opts);
        if best
            .as_ref()
            .is_none_or(|b| sol.residual_norm < b.residual_norm)
        {
            best = Some(sol);
        }
    }
    let best = best.ok_or_else(|| Error::FitFailed("no admissible starting point".into()))?;
    if !best.converged {
        return Err(Error::FitDidNotConverge {
            iterations: best.iterations,
            residual_norm: best.residual_norm,
            best: best.params.clone(),
        });
    }
    Ok(ExchangeFit {
        params: ExchangeFitParams {
            c: best.params[0].exp(),
            v_m0: best.params[1],
            v_m1: best.params[2],
            v_on: best.params[3].exp(),
        },
        residual_norm: best.residual_norm,
        iterations: best.iterations,
    })
}
