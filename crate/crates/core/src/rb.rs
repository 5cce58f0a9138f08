//! Single-qubit Clifford group and randomized benchmarking.
//!
//! The 24 Cliffords are generated by closure from `{±X90, ±Y90}`; each element
//! keeps a shortest word in those generators, which is how it is compiled into
//! pulses.

use std::collections::VecDeque;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::device::DeviceParams;
use crate::error::{Error, Result};
use crate::fit::fit_exponential_decay;
use crate::pulses::{rotation, segment_propagator, Axis, NoiseConfig, DEFAULT_DT_MAX};
use crate::qcore::{c, BasisState, ComplexMatrix2, ComplexMatrix4, Pauli, Qubit, Spin, TwoQubitState, I};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Generator {
    X90,
    MinusX90,
    Y90,
    MinusY90,
}

impl Generator {
    pub const ALL: [Generator; 4] = [Generator::X90, Generator::MinusX90, Generator::Y90, Generator::MinusY90];

    pub fn axis_angle(self) -> (Axis, f64) {
        match self {
            Generator::X90 => (Axis::X, PI / 2.0),
            Generator::MinusX90 => (Axis::X, -PI / 2.0),
            Generator::Y90 => (Axis::Y, PI / 2.0),
            Generator::MinusY90 => (Axis::Y, -PI / 2.0),
        }
    }

    /// `exp(−i θ σ/2)` in the `{↑, ↓}` basis.
    pub fn unitary(self) -> ComplexMatrix2 {
        let (axis, theta) = self.axis_angle();
        let sigma = match axis {
            Axis::X => Pauli::X.matrix(),
            Axis::Y => Pauli::Y.matrix(),
        };
        ComplexMatrix2::identity() * c((theta / 2.0).cos()) - sigma * (I * (theta / 2.0).sin())
    }
}

/// True when `a` and `b` agree up to a global phase.
pub fn equal_up_to_phase(a: &ComplexMatrix2, b: &ComplexMatrix2) -> bool {
    ((a.adjoint() * b).trace().norm() - 2.0).abs() < 1e-9
}

#[derive(Debug, Clone)]
pub struct Clifford {
    pub word: Vec<Generator>,
    pub unitary: ComplexMatrix2,
}

#[derive(Debug, Clone)]
pub struct CliffordGroup {
    pub elements: Vec<Clifford>,
    /// `table[a][b]` is the element equal to "apply `a`, then `b`".
    table: Vec<Vec<usize>>,
    inverse: Vec<usize>,
}

impl CliffordGroup {
    pub fn generate() -> Self {
        let mut elements = vec![Clifford {
            word: Vec::new(),
            unitary: ComplexMatrix2::identity(),
        }];
        let mut queue = VecDeque::from([0usize]);
        while let Some(k) = queue.pop_front() {
            for g in Generator::ALL {
                let u = g.unitary() * elements[k].unitary;
                if !elements.iter().any(|e| equal_up_to_phase(&e.unitary, &u)) {
                    let mut word = elements[k].word.clone();
                    word.push(g);
                    elements.push(Clifford { word, unitary: u });
                    queue.push_back(elements.len() - 1);
                }
            }
        }
        let find = |u: &ComplexMatrix2, els: &[Clifford]| els.iter().position(|e| equal_up_to_phase(&e.unitary, u));
        let n = elements.len();
        let table: Vec<Vec<usize>> = (0..n)
            .map(|a| {
                (0..n)
                    .map(|b| find(&(elements[b].unitary * elements[a].unitary), &elements).expect("group closure"))
                    .collect()
            })
            .collect();
        let inverse = (0..n).map(|a| table[a].iter().position(|&x| x == 0).expect("inverse")).collect();
        CliffordGroup {
            elements,
            table,
            inverse,
        }
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn find(&self, u: &ComplexMatrix2) -> Option<usize> {
        self.elements.iter().position(|e| equal_up_to_phase(&e.unitary, u))
    }

    /// Element equal to applying `first` and then `second`.
    pub fn compose(&self, first: usize, second: usize) -> usize {
        self.table[first][second]
    }

    pub fn inverse(&self, a: usize) -> usize {
        self.inverse[a]
    }

    /// Recovery element that brings the product of `sequence` to a π rotation
    /// about x, so the ideal outcome from `|↓⟩` is `|↑⟩`.
    pub fn recovery(&self, sequence: &[usize]) -> usize {
        let total = sequence.iter().fold(0, |acc, &k| self.compose(acc, k));
        let x180 = self
            .find(&(Generator::X90.unitary() * Generator::X90.unitary()))
            .expect("X180 is a Clifford");
        self.compose(self.inverse(total), x180)
    }

    pub fn mean_word_length(&self) -> f64 {
        self.elements.iter().map(|e| e.word.len()).sum::<usize>() as f64 / self.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ErrorModel {
    None,
    /// `ρ → (1 − r) ρ + r I/2` after every Clifford.
    Depolarizing(f64),
    /// Quasi-static frequency offset of standard deviation `σ_f` (Hz), drawn
    /// once per sequence.
    QuasiStatic(f64),
}

impl ErrorModel {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ErrorModel::Depolarizing(r) if !(0.0..=1.0).contains(&r) => {
                Err(Error::param("depolarizing", "rate must lie in [0, 1]"))
            }
            ErrorModel::QuasiStatic(s) if !(s >= 0.0) => Err(Error::param("sigma_f", "must be ≥ 0")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RbConfig {
    pub target: Qubit,
    pub lengths: Vec<usize>,
    pub n_sequences: usize,
    pub model: ErrorModel,
    /// Single-shot repetitions per sequence; 0 uses exact probabilities.
    pub shots: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbFit {
    pub a: f64,
    pub b: f64,
    pub p_c: f64,
    pub p_c_std: f64,
    /// Average Clifford fidelity `(1 + p_c)/2`.
    pub f_c: f64,
    pub f_c_std: f64,
    /// True when no decay was resolvable and the asymptote was held at 1/2.
    pub b_fixed: bool,
}

#[derive(Debug, Clone)]
pub struct RbData {
    pub lengths: Vec<usize>,
    pub mean_p_up: Vec<f64>,
    /// Standard error of the mean over sequences.
    pub sem_p_up: Vec<f64>,
    pub fit: Result<RbFit, String>,
}

/// 2×2 block of `u` acting on `target` with the other spin down.
fn block(u: &ComplexMatrix4, target: Qubit) -> ComplexMatrix2 {
    let idx = |s: Spin| match target {
        Qubit::Left => BasisState::from_spins(s, Spin::Down).index(),
        Qubit::Right => BasisState::from_spins(Spin::Down, s).index(),
    };
    let (up, down) = (idx(Spin::Up), idx(Spin::Down));
    ComplexMatrix2::new(u[(up, up)], u[(up, down)], u[(down, up)], u[(down, down)])
}

/// Engine propagators of the four generators on `target` with the given
/// frequency offsets.
fn generator_propagators(p: &DeviceParams, target: Qubit, offsets: [f64; 2]) -> Result<[ComplexMatrix4; 4]> {
    let mut out = [ComplexMatrix4::identity(); 4];
    for (k, g) in Generator::ALL.iter().enumerate() {
        let (axis, angle) = g.axis_angle();
        out[k] = segment_propagator(p, &rotation(p, target, axis, angle), DEFAULT_DT_MAX, offsets)?;
    }
    Ok(out)
}

fn generator_index(g: Generator) -> usize {
    Generator::ALL.iter().position(|&x| x == g).unwrap()
}

fn sequence_rng(seed: u64, length_index: usize, sequence: usize, n_sequences: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((length_index * n_sequences + sequence) as u64);
    rng
}

/// P(↑) of one random sequence of `n` Cliffords plus recovery.
fn run_sequence(
    p: &DeviceParams,
    group: &CliffordGroup,
    cfg: &RbConfig,
    gens: &[ComplexMatrix4; 4],
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<f64> {
    let mut seq: Vec<usize> = (0..n).map(|_| rng.random_range(0..group.len())).collect();
    seq.push(group.recovery(&seq));
    let prob = match cfg.model {
        ErrorModel::None => {
            let mut psi = *TwoQubitState::basis(BasisState::DownDown).amplitudes();
            for &k in &seq {
                for &g in &group.elements[k].word {
                    psi = gens[generator_index(g)] * psi;
                }
            }
            TwoQubitState::from_raw(psi).p_up(cfg.target)
        }
        ErrorModel::QuasiStatic(sigma) => {
            let mut offsets = [0.0; 2];
            let idx = match cfg.target {
                Qubit::Left => 0,
                Qubit::Right => 1,
            };
            offsets[idx] = sigma * rng.sample::<f64, _>(rand_distr::StandardNormal);
            let noisy = generator_propagators(p, cfg.target, offsets)?;
            let mut psi = *TwoQubitState::basis(BasisState::DownDown).amplitudes();
            for &k in &seq {
                for &g in &group.elements[k].word {
                    psi = noisy[generator_index(g)] * psi;
                }
            }
            TwoQubitState::from_raw(psi).p_up(cfg.target)
        }
        ErrorModel::Depolarizing(r) => {
            let blocks: Vec<ComplexMatrix2> = gens.iter().map(|u| block(u, cfg.target)).collect();
            let mut rho = ComplexMatrix2::new(c(0.0), c(0.0), c(0.0), c(1.0));
            let half = ComplexMatrix2::identity() * c(0.5);
            for &k in &seq {
                for &g in &group.elements[k].word {
                    let u = blocks[generator_index(g)];
                    rho = u * rho * u.adjoint();
                }
                rho = rho * c(1.0 - r) + half * c(r);
            }
            rho[(0, 0)].re
        }
    };
    let prob = prob.clamp(0.0, 1.0);
    if cfg.shots == 0 {
        Ok(prob)
    } else {
        let k = Binomial::new(cfg.shots, prob)
            .map_err(|e| Error::param("shots", e.to_string()))?
            .sample(rng);
        Ok(k as f64 / cfg.shots as f64)
    }
}

/// Runs Clifford randomized benchmarking on one qubit and fits
/// `P↑ = A p_c^N + B`.
pub fn randomized_benchmarking(p: &DeviceParams, cfg: &RbConfig) -> Result<RbData> {
    cfg.model.validate()?;
    if cfg.lengths.is_empty() || cfg.n_sequences == 0 {
        return Err(Error::param("lengths", "need at least one length and one sequence"));
    }
    let group = CliffordGroup::generate();
    let gens = generator_propagators(p, cfg.target, [0.0; 2])?;
    let per_length: Vec<(f64, f64)> = cfg
        .lengths
        .par_iter()
        .enumerate()
        .map(|(li, &n)| {
            let probs: Vec<f64> = (0..cfg.n_sequences)
                .map(|s| {
                    let mut rng = sequence_rng(cfg.seed, li, s, cfg.n_sequences);
                    run_sequence(p, &group, cfg, &gens, n, &mut rng)
                })
                .collect::<Result<_>>()?;
            let m = probs.len() as f64;
            let mean = probs.iter().sum::<f64>() / m;
            let var = if probs.len() > 1 {
                probs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (m - 1.0)
            } else {
                0.0
            };
            Ok((mean, (var / m).sqrt()))
        })
        .collect::<Result<_>>()?;
    let mean_p_up: Vec<f64> = per_length.iter().map(|x| x.0).collect();
    let sem_p_up: Vec<f64> = per_length.iter().map(|x| x.1).collect();
    let fit = fit_rb(&cfg.lengths, &mean_p_up).map_err(|e| e.to_string());
    Ok(RbData {
        lengths: cfg.lengths.clone(),
        mean_p_up,
        sem_p_up,
        fit,
    })
}

/// Fits the RB decay. Without a resolvable decay the three-parameter model
/// is degenerate, so the asymptote is then held at the fully mixed value 1/2.
pub fn fit_rb(lengths: &[usize], p_up: &[f64]) -> Result<RbFit> {
    let n: Vec<f64> = lengths.iter().map(|&k| k as f64).collect();
    let spread = p_up.iter().fold(f64::MIN, |m, &v| m.max(v)) - p_up.iter().fold(f64::MAX, |m, &v| m.min(v));
    let resolvable = spread > 1e-6 && lengths.len() >= 4;
    let fit = if resolvable {
        fit_exponential_decay(&n, p_up, None)?
    } else {
        fit_exponential_decay(&n, p_up, Some(0.5))?
    };
    let p_c_std = if fit.p_std.is_finite() { fit.p_std } else { 0.0 };
    Ok(RbFit {
        a: fit.a,
        b: fit.b,
        p_c: fit.p,
        p_c_std,
        f_c: (1.0 + fit.p) / 2.0,
        f_c_std: p_c_std / 2.0,
        b_fixed: !resolvable,
    })
}

/// Quasi-static noise strength of a qubit from its `T₂*`.
pub fn quasi_static_sigma(p: &DeviceParams, q: Qubit) -> f64 {
    let n = NoiseConfig::from_t2_star(p, 1, 0);
    match q {
        Qubit::Left => n.sigma_f[0],
        Qubit::Right => n.sigma_f[1],
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_has_24_elements_with_short_words() {
        let g = CliffordGroup::generate();
        assert_eq!(g.len(), 24);
        let longest = g.elements.iter().map(|e| e.word.len()).max().unwrap();
        assert!(longest <= 4, "longest word {longest}");
        assert!(g.elements[0].word.is_empty());
    }

    #[test]
    fn group_closure_and_inverses() {
        let g = CliffordGroup::generate();
        for a in 0..24 {
            for b in 0..24 {
                let u = g.elements[b].unitary * g.elements[a].unitary;
                assert!(equal_up_to_phase(&u, &g.elements[g.compose(a, b)].unitary));
            }
            let inv = g.inverse(a);
            let u = g.elements[inv].unitary * g.elements[a].unitary;
            assert!(equal_up_to_phase(&u, &ComplexMatrix2::identity()));
        }
    }

    #[test]
    fn recovery_gives_pi_rotation() {
        let g = CliffordGroup::generate();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for len in [0, 1, 5, 40] {
            let mut seq: Vec<usize> = (0..len).map(|_| rng.random_range(0..24)).collect();
            seq.push(g.recovery(&seq));
            let total = seq
                .iter()
                .fold(ComplexMatrix2::identity(), |acc, &k| g.elements[k].unitary * acc);
            // |↓⟩ is index 1 in the {↑, ↓} basis
            assert!((total[(0, 1)].norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn engine_generators_match_ideal_unitaries() {
        let p = DeviceParams::default();
        for q in [Qubit::Left, Qubit::Right] {
            let gens = generator_propagators(&p, q, [0.0; 2]).unwrap();
            for (k, g) in Generator::ALL.iter().enumerate() {
                assert!(equal_up_to_phase(&block(&gens[k], q), &g.unitary()));
            }
        }
    }

    #[test]
    fn noiseless_rb_has_unit_decay() {
        let cfg = RbConfig {
            target: Qubit::Left,
            lengths: vec![1, 4, 16, 64, 128],
            n_sequences: 5,
            model: ErrorModel::None,
            shots: 0,
            seed: 3,
        };
        let data = randomized_benchmarking(&DeviceParams::default(), &cfg).unwrap();
        let fit = data.fit.unwrap();
        assert!((fit.p_c - 1.0).abs() < 1e-6);
        assert!(fit.b_fixed);
    }

    #[test]
    fn exact_depolarizing_decay() {
        let r = 0.01;
        let cfg = RbConfig {
            target: Qubit::Right,
            lengths: vec![1, 2, 5, 10, 20, 50, 100, 200],
            n_sequences: 3,
            model: ErrorModel::Depolarizing(r),
            shots: 0,
            seed: 5,
        };
        let data = randomized_benchmarking(&DeviceParams::default(), &cfg).unwrap();
        for (n, y) in data.lengths.iter().zip(&data.mean_p_up) {
            let expected = 0.5 + 0.5 * (1.0 - r).powi(*n as i32 + 1);
            assert!((y - expected).abs() < 1e-9);
        }
        let fit = data.fit.unwrap();
        assert!((fit.f_c - (1.0 - r / 2.0)).abs() < 1e-8);
    }
}
