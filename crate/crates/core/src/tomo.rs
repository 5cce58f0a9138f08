//! Two-qubit state tomography.
//!
//! Each setting applies a single-qubit pre-rotation to both spins and then
//! measures both in the z basis. A rotation `R` turns the z measurement into
//! a measurement of `R† σ_z R`: identity gives `Z`, `X90` gives `Y`, `Y90`
//! gives `−X` and `X180` gives `−Z`.
//!
//! Fidelities follow the square-root convention `F = √⟨ψ|ρ|ψ⟩`.

use std::f64::consts::PI;
use std::fmt;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::DeviceParams;
use crate::error::{Error, Result};
use crate::pulses::{
    calibrate_cnot, cnot_segments, evolve_ensemble, rotation, Axis, NoiseConfig, PulseSegment, PulseSequence,
};
use crate::qcore::{
    c, kron, BasisState, ComplexMatrix2, DensityMatrix, Pauli, PauliLabel, Qubit, TwoQubitState, C64, I, ONE, ZERO,
};

/// Pre-rotation applied before the z-basis measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TomoGate {
    I,
    X90,
    Y90,
    X180,
}

impl TomoGate {
    /// Pauli axis and sign measured after this gate.
    pub fn measured_axis(self) -> (Pauli, f64) {
        match self {
            TomoGate::I => (Pauli::Z, 1.0),
            TomoGate::X90 => (Pauli::Y, 1.0),
            TomoGate::Y90 => (Pauli::X, -1.0),
            TomoGate::X180 => (Pauli::Z, -1.0),
        }
    }

    /// `exp(−i θ σ/2)` for the gate's axis and angle.
    pub fn unitary(self) -> ComplexMatrix2 {
        let (axis, angle) = match self {
            TomoGate::I => return ComplexMatrix2::identity(),
            TomoGate::X90 => (Pauli::X, PI / 2.0),
            TomoGate::Y90 => (Pauli::Y, PI / 2.0),
            TomoGate::X180 => (Pauli::X, PI),
        };
        ComplexMatrix2::identity() * c((angle / 2.0).cos()) - axis.matrix() * (I * (angle / 2.0).sin())
    }

    fn segment(self, p: &DeviceParams, q: Qubit) -> Option<PulseSegment> {
        match self {
            TomoGate::I => None,
            TomoGate::X90 => Some(rotation(p, q, Axis::X, PI / 2.0)),
            TomoGate::Y90 => Some(rotation(p, q, Axis::Y, PI / 2.0)),
            TomoGate::X180 => Some(rotation(p, q, Axis::X, PI)),
        }
    }
}

impl fmt::Display for TomoGate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TomoGate::I => "I",
            TomoGate::X90 => "X90",
            TomoGate::Y90 => "Y90",
            TomoGate::X180 => "X180",
        })
    }
}

/// Outcome probabilities of one setting, indexed like [`BasisState::ALL`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TomographyRecord {
    pub prerotation: (TomoGate, TomoGate),
    pub probabilities: [f64; 4],
}

impl TomographyRecord {
    pub fn new(prerotation: (TomoGate, TomoGate), probabilities: [f64; 4]) -> Result<Self> {
        if probabilities.iter().any(|&p| !(-1e-12..=1.0 + 1e-12).contains(&p)) {
            return Err(Error::param("probabilities", format!("{probabilities:?} outside [0, 1]")));
        }
        let total: f64 = probabilities.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::param("probabilities", format!("sum to {total}, not 1")));
        }
        Ok(TomographyRecord {
            prerotation,
            probabilities,
        })
    }

    pub fn from_counts(prerotation: (TomoGate, TomoGate), counts: [u64; 4]) -> Result<Self> {
        let total: u64 = counts.iter().sum();
        if total == 0 {
            return Err(Error::param("counts", "no shots recorded"));
        }
        Self::new(prerotation, counts.map(|n| n as f64 / total as f64))
    }

    /// `(⟨Z⊗I⟩, ⟨I⊗Z⟩, ⟨Z⊗Z⟩)` of the measured populations.
    pub fn z_moments(&self) -> (f64, f64, f64) {
        let [uu, ud, du, dd] = self.probabilities;
        (uu + ud - du - dd, uu - ud + du - dd, uu - ud - du + dd)
    }

    /// Pauli labels this record determines, with their expectation values.
    pub fn expectations(&self) -> [(PauliLabel, f64); 3] {
        let (zl, zr, zz) = self.z_moments();
        let (pl, sl) = self.prerotation.0.measured_axis();
        let (pr, sr) = self.prerotation.1.measured_axis();
        [
            (PauliLabel::new(pl, Pauli::I), sl * zl),
            (PauliLabel::new(Pauli::I, pr), sr * zr),
            (PauliLabel::new(pl, pr), sl * sr * zz),
        ]
    }
}

/// The nine settings `{I, X90, Y90}²`, left gate major.
pub fn measurement_settings() -> Vec<(TomoGate, TomoGate)> {
    let gates = [TomoGate::I, TomoGate::X90, TomoGate::Y90];
    gates
        .iter()
        .flat_map(|&l| gates.iter().map(move |&r| (l, r)))
        .collect()
}

/// The setting designated for each non-identity Pauli label, with the sign
/// that converts the measured z moment into the label's expectation.
pub fn setting_plan() -> Vec<(PauliLabel, (TomoGate, TomoGate), f64)> {
    let gate_for = |p: Pauli| match p {
        Pauli::I | Pauli::Z => TomoGate::I,
        Pauli::Y => TomoGate::X90,
        Pauli::X => TomoGate::Y90,
    };
    PauliLabel::all()
        .into_iter()
        .filter(|l| !l.is_identity())
        .map(|l| {
            let setting = (gate_for(l.left), gate_for(l.right));
            let sign = |p: Pauli, g: TomoGate| if p == Pauli::I { 1.0 } else { g.measured_axis().1 };
            (l, setting, sign(l.left, setting.0) * sign(l.right, setting.1))
        })
        .collect()
}

/// Pauli vector from tomography records, averaging every record that
/// determines a label.
pub fn pauli_expectations(records: &[TomographyRecord]) -> Result<[f64; 16]> {
    let mut sum = [0.0; 16];
    let mut count = [0usize; 16];
    sum[0] = 1.0;
    count[0] = 1;
    for r in records {
        for (label, e) in r.expectations() {
            sum[label.index()] += e;
            count[label.index()] += 1;
        }
    }
    let missing: Vec<String> = PauliLabel::all()
        .iter()
        .filter(|l| count[l.index()] == 0)
        .map(|l| l.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::IncompleteTomography(missing));
    }
    let mut out = [0.0; 16];
    for k in 0..16 {
        out[k] = sum[k] / count[k] as f64;
    }
    Ok(out)
}

/// Linear inversion `ρ = (1/4) Σ ⟨P⟩ P`, not projected.
pub fn linear_inversion(records: &[TomographyRecord]) -> Result<DensityMatrix> {
    Ok(DensityMatrix::from_pauli_vector(&pauli_expectations(records)?))
}

/// Linear inversion followed by eigenvalue clipping.
pub fn reconstruct(records: &[TomographyRecord]) -> Result<DensityMatrix> {
    Ok(linear_inversion(records)?.project_physical())
}

/// `√⟨ψ|ρ|ψ⟩`.
pub fn fidelity(rho: &DensityMatrix, target: &TwoQubitState) -> f64 {
    rho.overlap(target).max(0.0).sqrt()
}

/// Readout imperfection of one dot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DotFidelity {
    pub f_up: f64,
    pub f_down: f64,
}

impl DotFidelity {
    pub fn visibility(&self) -> f64 {
        self.f_up + self.f_down - 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VisibilityModel {
    /// Single-spin expectations scale by `V_q`, correlators by `V_L V_R`.
    Symmetric { left: f64, right: f64 },
    /// Independent per-dot confusion matrices.
    Confusion { left: DotFidelity, right: DotFidelity },
}

impl VisibilityModel {
    pub fn ideal() -> Self {
        VisibilityModel::Symmetric { left: 1.0, right: 1.0 }
    }

    pub fn symmetric(left: f64, right: f64) -> Result<Self> {
        let m = VisibilityModel::Symmetric { left, right };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let check = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::param(name, format!("must lie in [0, 1], got {v}")))
            }
        };
        match *self {
            VisibilityModel::Symmetric { left, right } => {
                check("v_left", left)?;
                check("v_right", right)
            }
            VisibilityModel::Confusion { left, right } => {
                check("f_up_left", left.f_up)?;
                check("f_down_left", left.f_down)?;
                check("f_up_right", right.f_up)?;
                check("f_down_right", right.f_down)?;
                check("v_left", left.visibility())?;
                check("v_right", right.visibility())
            }
        }
    }

    pub fn visibility(&self, q: Qubit) -> f64 {
        match (*self, q) {
            (VisibilityModel::Symmetric { left, .. }, Qubit::Left) => left,
            (VisibilityModel::Symmetric { right, .. }, Qubit::Right) => right,
            (VisibilityModel::Confusion { left, .. }, Qubit::Left) => left.visibility(),
            (VisibilityModel::Confusion { right, .. }, Qubit::Right) => right.visibility(),
        }
    }

    fn confusion(&self, q: Qubit) -> [[f64; 2]; 2] {
        let d = match *self {
            VisibilityModel::Symmetric { .. } => {
                let f = (1.0 + self.visibility(q)) / 2.0;
                DotFidelity { f_up: f, f_down: f }
            }
            VisibilityModel::Confusion { left, right } => match q {
                Qubit::Left => left,
                Qubit::Right => right,
            },
        };
        // [measured][true], index 0 = up
        [[d.f_up, 1.0 - d.f_down], [1.0 - d.f_up, d.f_down]]
    }
}

/// Passes true outcome probabilities through the readout model.
pub fn apply_visibility(probabilities: &[f64; 4], model: &VisibilityModel) -> [f64; 4] {
    let ml = model.confusion(Qubit::Left);
    let mr = model.confusion(Qubit::Right);
    let mut out = [0.0; 4];
    for (m, o) in out.iter_mut().enumerate() {
        for (t, &p) in probabilities.iter().enumerate() {
            *o += ml[m / 2][t / 2] * mr[m % 2][t % 2] * p;
        }
    }
    out
}

/// Applies the symmetric model directly to a Pauli vector.
pub fn scale_pauli_vector(v: &[f64; 16], model: &VisibilityModel) -> [f64; 16] {
    let (vl, vr) = (model.visibility(Qubit::Left), model.visibility(Qubit::Right));
    let mut out = *v;
    for label in PauliLabel::all() {
        let k = label.index();
        out[k] *= match (label.left == Pauli::I, label.right == Pauli::I) {
            (true, true) => 1.0,
            (false, true) => vl,
            (true, false) => vr,
            (false, false) => vl * vr,
        };
    }
    out
}

/// Ideal records of `rho` for the given settings.
pub fn simulate_records(
    rho: &DensityMatrix,
    settings: &[(TomoGate, TomoGate)],
    model: &VisibilityModel,
) -> Vec<TomographyRecord> {
    settings
        .iter()
        .map(|&(l, r)| {
            let u = kron(&l.unitary(), &r.unitary());
            let rotated = DensityMatrix::from_raw(u * rho.matrix() * u.adjoint());
            let pops = rotated.populations().map(|p| p.clamp(0.0, 1.0));
            let total: f64 = pops.iter().sum();
            TomographyRecord {
                prerotation: (l, r),
                probabilities: apply_visibility(&pops.map(|p| p / total), model),
            }
        })
        .collect()
}

/// `(|↓↓⟩ − i|↑↑⟩)/√2`.
pub fn bell_target() -> TwoQubitState {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut a = nalgebra::Vector4::from_element(ZERO);
    a[BasisState::DownDown.index()] = ONE * s;
    a[BasisState::UpUp.index()] = C64::new(0.0, -s);
    TwoQubitState::from_raw(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BellOptions {
    /// Exchange during the CNOT, Hz.
    pub j_on: f64,
    pub dt_max: f64,
}

impl Default for BellOptions {
    fn default() -> Self {
        BellOptions {
            j_on: 1.0 / 204e-9,
            dt_max: crate::pulses::DEFAULT_DT_MAX,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BellResult {
    pub records: Vec<TomographyRecord>,
    pub rho_raw: DensityMatrix,
    pub rho: DensityMatrix,
    pub fidelity_raw: f64,
    pub fidelity: f64,
    pub cnot_fidelity: f64,
}

/// Prepares a Bell state with `X90` on the control (right) spin followed by
/// the calibrated CNOT, then runs the nine tomography settings.
pub fn bell_experiment(
    p: &DeviceParams,
    visibility: &VisibilityModel,
    noise: &NoiseConfig,
    opts: &BellOptions,
) -> Result<BellResult> {
    visibility.validate()?;
    noise.validate()?;
    let cal = calibrate_cnot(p, opts.j_on, opts.dt_max)?;
    let prep = PulseSequence::from_basis(BasisState::DownDown)
        .then(rotation(p, Qubit::Right, Axis::X, PI / 2.0))
        .extend(cnot_segments(p, &cal.params)?);
    let records = measurement_settings()
        .into_par_iter()
        .map(|(l, r)| {
            let seq = prep
                .clone()
                .extend(l.segment(p, Qubit::Left))
                .extend(r.segment(p, Qubit::Right));
            let pops = evolve_ensemble(&seq, p, noise, opts.dt_max)?;
            Ok(TomographyRecord {
                prerotation: (l, r),
                probabilities: apply_visibility(&pops, visibility),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let rho_raw = linear_inversion(&records)?;
    let rho = rho_raw.project_physical();
    let target = bell_target();
    Ok(BellResult {
        fidelity_raw: fidelity(&rho_raw, &target),
        fidelity: fidelity(&rho, &target),
        rho_raw,
        rho,
        records,
        cnot_fidelity: cal.fidelity,
    })
}

/// Writes `ρ` as 16 rows of `element, re, im`, element labels like `uu|dd`.
pub fn write_density_csv<W: Write>(rho: &DensityMatrix, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["element", "re", "im"])?;
    for r in BasisState::ALL {
        for k in BasisState::ALL {
            let z = rho.matrix()[(r.index(), k.index())];
            w.write_record([format!("{}|{}", r.label(), k.label()), z.re.to_string(), z.im.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn dist(a: &DensityMatrix, b: &DensityMatrix) -> f64 {
        (a.matrix() - b.matrix()).norm()
    }

    #[test]
    fn gate_axes_match_unitaries() {
        for g in [TomoGate::I, TomoGate::X90, TomoGate::Y90, TomoGate::X180] {
            let u = g.unitary();
            let heis = u.adjoint() * Pauli::Z.matrix() * u;
            let (axis, sign) = g.measured_axis();
            assert!((heis - axis.matrix() * c(sign)).norm() < 1e-12, "{g}");
        }
    }

    #[test]
    fn plan_covers_each_label_once() {
        let plan = setting_plan();
        assert_eq!(plan.len(), 15);
        let find = |s: &str| plan.iter().find(|e| e.0 == s.parse().unwrap()).unwrap().1;
        assert_eq!(find("ZZ"), (TomoGate::I, TomoGate::I));
        assert_eq!(find("YX"), (TomoGate::X90, TomoGate::Y90));
        let settings = measurement_settings();
        assert!(plan.iter().all(|e| settings.contains(&e.1)));
    }

    #[test]
    fn basis_state_roundtrip() {
        let rho = TwoQubitState::basis(BasisState::DownDown).density_matrix();
        let records = simulate_records(&rho, &measurement_settings(), &VisibilityModel::ideal());
        assert!(dist(&reconstruct(&records).unwrap(), &rho) < 1e-10);
    }

    #[test]
    fn bell_state_fidelity() {
        let rho = bell_target().density_matrix();
        let records = simulate_records(&rho, &measurement_settings(), &VisibilityModel::ideal());
        assert_relative_eq!(fidelity(&reconstruct(&records).unwrap(), &bell_target()), 1.0, epsilon = 1e-10);
        assert_relative_eq!(fidelity(&DensityMatrix::maximally_mixed(), &bell_target()), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn missing_settings_are_listed() {
        let rho = DensityMatrix::maximally_mixed();
        let records = simulate_records(&rho, &[(TomoGate::I, TomoGate::I)], &VisibilityModel::ideal());
        match linear_inversion(&records) {
            Err(Error::IncompleteTomography(missing)) => {
                assert_eq!(missing.len(), 12);
                assert!(missing.contains(&"XY".to_string()));
                assert!(!missing.contains(&"ZZ".to_string()));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn visibility_scaled_bell() {
        let model = VisibilityModel::symmetric(0.76, 0.70).unwrap();
        let rho = bell_target().density_matrix();
        let records = simulate_records(&rho, &measurement_settings(), &model);
        let raw = linear_inversion(&records).unwrap();
        let expected = scale_pauli_vector(&rho.pauli_vector(), &model);
        for (a, b) in raw.pauli_vector().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
        let corner = raw.matrix()[(BasisState::UpUp.index(), BasisState::DownDown.index())].norm();
        assert_relative_eq!(corner, 0.76 * 0.70 / 2.0, epsilon = 1e-12);
        let f = fidelity(&reconstruct(&records).unwrap(), &bell_target());
        assert_relative_eq!(f, ((1.0 + 3.0 * 0.76 * 0.70) / 4.0f64).sqrt(), epsilon = 1e-12);
        assert!((f - 0.805).abs() < 0.005);
    }

    #[test]
    fn zero_visibility_is_mixed() {
        let model = VisibilityModel::symmetric(0.0, 0.0).unwrap();
        let records = simulate_records(&bell_target().density_matrix(), &measurement_settings(), &model);
        assert!(dist(&reconstruct(&records).unwrap(), &DensityMatrix::maximally_mixed()) < 1e-12);
    }

    #[test]
    fn confusion_matches_symmetric_when_balanced() {
        let sym = VisibilityModel::symmetric(0.8, 0.6).unwrap();
        let conf = VisibilityModel::Confusion {
            left: DotFidelity { f_up: 0.9, f_down: 0.9 },
            right: DotFidelity { f_up: 0.8, f_down: 0.8 },
        };
        let p = [0.1, 0.2, 0.3, 0.4];
        let (a, b) = (apply_visibility(&p, &sym), apply_visibility(&p, &conf));
        for k in 0..4 {
            assert_relative_eq!(a[k], b[k], epsilon = 1e-14);
        }
        let asym = VisibilityModel::Confusion {
            left: DotFidelity { f_up: 0.95, f_down: 0.8 },
            right: DotFidelity { f_up: 0.7, f_down: 1.0 },
        };
        assert_relative_eq!(apply_visibility(&p, &asym).iter().sum::<f64>(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn density_csv_has_sixteen_rows() {
        let mut buf = Vec::new();
        write_density_csv(&bell_target().density_matrix(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 17);
        let row = text.lines().find(|l| l.starts_with("uu|dd,")).unwrap();
        let im: f64 = row.split(',').nth(2).unwrap().parse().unwrap();
        assert_relative_eq!(im, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn ideal_gate_pipeline() {
        let p = DeviceParams::default();
        let res = bell_experiment(&p, &VisibilityModel::ideal(), &NoiseConfig::noiseless(), &BellOptions::default())
            .unwrap();
        assert!(res.cnot_fidelity > 0.999);
        assert_relative_eq!(res.fidelity, 1.0, epsilon = 1e-6);
    }
}
