//! Small dense complex linear algebra and two-qubit quantum primitives.
//!
//! All Hamiltonians are stored as frequencies (E/h, in Hz) and times in
//! seconds, so propagators are `exp(-i 2π H t)`.
//!
//! The two-qubit basis is ordered `{|↑↑⟩, |↑↓⟩, |↓↑⟩, |↓↓⟩}` with the left
//! spin as the first tensor factor. `|↑⟩` is the +1 eigenstate of Pauli Z.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Matrix2, Matrix4, SymmetricEigen, Vector4};
use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type ComplexMatrix4 = Matrix4<C64>;
pub type ComplexMatrix2 = Matrix2<C64>;

/// Tolerance for algebraic identities.
pub const ALGEBRAIC_TOL: f64 = 1e-10;
/// Tolerance for eigen-decomposition and other iterative results.
pub const ITERATIVE_TOL: f64 = 1e-9;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

#[inline]
pub(crate) fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// One of the two spins of the double dot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Qubit {
    Left,
    Right,
}

impl Qubit {
    pub fn other(self) -> Qubit {
        match self {
            Qubit::Left => Qubit::Right,
            Qubit::Right => Qubit::Left,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Qubit::Left => "left",
            Qubit::Right => "right",
        }
    }
}

impl fmt::Display for Qubit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Qubit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "left" | "l" => Ok(Qubit::Left),
            "right" | "r" => Ok(Qubit::Right),
            other => Err(Error::param("qubit", format!("expected left/right, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spin {
    Up,
    Down,
}

impl Spin {
    /// Eigenvalue of S_z.
    pub fn sz(self) -> f64 {
        match self {
            Spin::Up => 0.5,
            Spin::Down => -0.5,
        }
    }

    pub fn flipped(self) -> Spin {
        match self {
            Spin::Up => Spin::Down,
            Spin::Down => Spin::Up,
        }
    }
}

/// Computational basis state, written `|left right⟩`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BasisState {
    UpUp,
    UpDown,
    DownUp,
    DownDown,
}

impl BasisState {
    pub const ALL: [BasisState; 4] = [
        BasisState::UpUp,
        BasisState::UpDown,
        BasisState::DownUp,
        BasisState::DownDown,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> BasisState {
        Self::ALL[i]
    }

    pub fn from_spins(left: Spin, right: Spin) -> BasisState {
        match (left, right) {
            (Spin::Up, Spin::Up) => BasisState::UpUp,
            (Spin::Up, Spin::Down) => BasisState::UpDown,
            (Spin::Down, Spin::Up) => BasisState::DownUp,
            (Spin::Down, Spin::Down) => BasisState::DownDown,
        }
    }

    pub fn spin(self, q: Qubit) -> Spin {
        let (l, r) = self.spins();
        match q {
            Qubit::Left => l,
            Qubit::Right => r,
        }
    }

    pub fn spins(self) -> (Spin, Spin) {
        match self {
            BasisState::UpUp => (Spin::Up, Spin::Up),
            BasisState::UpDown => (Spin::Up, Spin::Down),
            BasisState::DownUp => (Spin::Down, Spin::Up),
            BasisState::DownDown => (Spin::Down, Spin::Down),
        }
    }

    /// Short label such as `ud` (left up, right down).
    pub fn label(self) -> &'static str {
        match self {
            BasisState::UpUp => "uu",
            BasisState::UpDown => "ud",
            BasisState::DownUp => "du",
            BasisState::DownDown => "dd",
        }
    }
}

impl std::str::FromStr for BasisState {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "uu" => Ok(BasisState::UpUp),
            "ud" => Ok(BasisState::UpDown),
            "du" => Ok(BasisState::DownUp),
            "dd" => Ok(BasisState::DownDown),
            other => Err(Error::param(
                "basis state",
                format!("expected one of uu, ud, du, dd, got `{other}`"),
            )),
        }
    }
}

/// Normalized pure state of the two spins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TwoQubitState(Vector4<C64>);

impl TwoQubitState {
    pub fn new(amplitudes: Vector4<C64>) -> Result<Self> {
        let norm_sqr = amplitudes.norm_squared();
        if (norm_sqr - 1.0).abs() > ALGEBRAIC_TOL {
            return Err(Error::NotNormalized { norm_sqr });
        }
        Ok(TwoQubitState(amplitudes))
    }

    /// Rescales arbitrary non-zero amplitudes to unit norm.
    pub fn normalized(amplitudes: Vector4<C64>) -> Result<Self> {
        let n = amplitudes.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::NotNormalized { norm_sqr: n * n });
        }
        Ok(TwoQubitState(amplitudes / c(n)))
    }

    pub(crate) fn from_raw(amplitudes: Vector4<C64>) -> Self {
        TwoQubitState(amplitudes)
    }

    pub fn basis(b: BasisState) -> Self {
        let mut v = Vector4::zeros();
        v[b.index()] = ONE;
        TwoQubitState(v)
    }

    /// Product state `(α_L|↑⟩ + β_L|↓⟩) ⊗ (α_R|↑⟩ + β_R|↓⟩)` with each factor
    /// given as `[amp_up, amp_down]`.
    pub fn product(left: [C64; 2], right: [C64; 2]) -> Result<Self> {
        let v = Vector4::new(
            left[0] * right[0],
            left[0] * right[1],
            left[1] * right[0],
            left[1] * right[1],
        );
        Self::normalized(v)
    }

    pub fn amplitudes(&self) -> &Vector4<C64> {
        &self.0
    }

    pub fn amplitude(&self, b: BasisState) -> C64 {
        self.0[b.index()]
    }

    pub fn populations(&self) -> [f64; 4] {
        [
            self.0[0].norm_sqr(),
            self.0[1].norm_sqr(),
            self.0[2].norm_sqr(),
            self.0[3].norm_sqr(),
        ]
    }

    pub fn norm_sqr(&self) -> f64 {
        self.0.norm_squared()
    }

    /// Probability of finding `q` in spin-up.
    pub fn p_up(&self, q: Qubit) -> f64 {
        p_up_from_populations(&self.populations(), q)
    }

    /// |⟨self|other⟩|².
    pub fn overlap(&self, other: &TwoQubitState) -> f64 {
        self.0.dotc(&other.0).norm_sqr()
    }

    pub fn apply(&self, u: &ComplexMatrix4) -> TwoQubitState {
        TwoQubitState(u * self.0)
    }

    pub fn density_matrix(&self) -> DensityMatrix {
        DensityMatrix(self.0 * self.0.adjoint())
    }
}

/// Probability that `q` is up given the four basis populations.
pub fn p_up_from_populations(pops: &[f64; 4], q: Qubit) -> f64 {
    match q {
        Qubit::Left => pops[0] + pops[1],
        Qubit::Right => pops[0] + pops[2],
    }
}

/// Two-qubit density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityMatrix(ComplexMatrix4);

impl DensityMatrix {
    /// Validates hermiticity and unit trace. Positivity is not required here;
    /// use [`DensityMatrix::project_physical`] for that.
    pub fn new(rho: ComplexMatrix4) -> Result<Self> {
        let dev = hermiticity_error(&rho);
        if dev > ALGEBRAIC_TOL {
            return Err(Error::NotHermitian {
                deviation: dev,
                tolerance: ALGEBRAIC_TOL,
            });
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > ALGEBRAIC_TOL || tr.im.abs() > ALGEBRAIC_TOL {
            return Err(Error::InvalidDensityMatrix(format!("trace {tr} is not 1")));
        }
        Ok(DensityMatrix(rho))
    }

    pub(crate) fn from_raw(rho: ComplexMatrix4) -> Self {
        DensityMatrix(rho)
    }

    pub fn maximally_mixed() -> Self {
        DensityMatrix(ComplexMatrix4::identity() * c(0.25))
    }

    /// Builds ρ = (1/4) Σ ⟨P⟩ P from expectation values indexed like
    /// [`PauliLabel::all`]. The identity entry is forced to 1.
    pub fn from_pauli_vector(expectations: &[f64; 16]) -> Self {
        let mut rho = ComplexMatrix4::zeros();
        for (k, label) in PauliLabel::all().iter().enumerate() {
            let e = if k == 0 { 1.0 } else { expectations[k] };
            rho += label.matrix() * c(e);
        }
        DensityMatrix(rho * c(0.25))
    }

    pub fn matrix(&self) -> &ComplexMatrix4 {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace().re
    }

    pub fn eigenvalues(&self) -> [f64; 4] {
        eig_hermitian(&self.0)
            .map(|e| e.values)
            .unwrap_or([f64::NAN; 4])
    }

    pub fn is_physical(&self, tol: f64) -> bool {
        hermiticity_error(&self.0) <= tol
            && (self.trace() - 1.0).abs() <= tol
            && self.eigenvalues().iter().all(|&l| l >= -tol)
    }

    /// Clips negative eigenvalues to zero and renormalizes the trace.
    pub fn project_physical(&self) -> DensityMatrix {
        let herm = (self.0 + self.0.adjoint()) * c(0.5);
        let eig = match eig_hermitian(&herm) {
            Ok(e) => e,
            Err(_) => return DensityMatrix::maximally_mixed(),
        };
        let clipped: Vec<f64> = eig.values.iter().map(|&l| l.max(0.0)).collect();
        let total: f64 = clipped.iter().sum();
        if total <= 0.0 {
            return DensityMatrix::maximally_mixed();
        }
        let mut rho = ComplexMatrix4::zeros();
        for (k, &l) in clipped.iter().enumerate() {
            if l == 0.0 {
                continue;
            }
            let v = eig.vectors.column(k);
            rho += v * v.adjoint() * c(l / total);
        }
        DensityMatrix(rho)
    }

    pub fn populations(&self) -> [f64; 4] {
        [self.0[(0, 0)].re, self.0[(1, 1)].re, self.0[(2, 2)].re, self.0[(3, 3)].re]
    }

    /// ⟨ψ|ρ|ψ⟩.
    pub fn overlap(&self, psi: &TwoQubitState) -> f64 {
        let v = psi.amplitudes();
        (v.adjoint() * self.0 * v)[(0, 0)].re
    }

    /// Pauli vector, indexed like [`PauliLabel::all`].
    pub fn pauli_vector(&self) -> [f64; 16] {
        let mut out = [0.0; 16];
        for (k, label) in PauliLabel::all().iter().enumerate() {
            out[k] = pauli_expectation(self, *label);
        }
        out
    }
}

/// Single-qubit Pauli operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub const ALL: [Pauli; 4] = [Pauli::I, Pauli::X, Pauli::Y, Pauli::Z];

    pub fn matrix(self) -> ComplexMatrix2 {
        match self {
            Pauli::I => ComplexMatrix2::identity(),
            Pauli::X => ComplexMatrix2::new(ZERO, ONE, ONE, ZERO),
            Pauli::Y => ComplexMatrix2::new(ZERO, -I, I, ZERO),
            Pauli::Z => ComplexMatrix2::new(ONE, ZERO, ZERO, -ONE),
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// Two-qubit Pauli operator `left ⊗ right`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PauliLabel {
    pub left: Pauli,
    pub right: Pauli,
}

impl PauliLabel {
    pub fn new(left: Pauli, right: Pauli) -> Self {
        PauliLabel { left, right }
    }

    /// All 16 labels, `II` first, left index major.
    pub fn all() -> [PauliLabel; 16] {
        let mut out = [PauliLabel::new(Pauli::I, Pauli::I); 16];
        for (a, l) in Pauli::ALL.iter().enumerate() {
            for (b, r) in Pauli::ALL.iter().enumerate() {
                out[4 * a + b] = PauliLabel::new(*l, *r);
            }
        }
        out
    }

    pub fn index(self) -> usize {
        4 * (self.left as usize) + self.right as usize
    }

    pub fn is_identity(self) -> bool {
        self.left == Pauli::I && self.right == Pauli::I
    }

    pub fn matrix(self) -> ComplexMatrix4 {
        kron(&self.left.matrix(), &self.right.matrix())
    }
}

impl fmt::Display for PauliLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.left.symbol(), self.right.symbol())
    }
}

impl std::str::FromStr for PauliLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parse = |ch: char| match ch.to_ascii_uppercase() {
            'I' => Ok(Pauli::I),
            'X' => Ok(Pauli::X),
            'Y' => Ok(Pauli::Y),
            'Z' => Ok(Pauli::Z),
            _ => Err(Error::param("pauli label", format!("bad symbol `{ch}` in `{s}`"))),
        };
        let chars: Vec<char> = s.chars().collect();
        if chars.len() != 2 {
            return Err(Error::param("pauli label", format!("`{s}` is not two symbols")));
        }
        Ok(PauliLabel::new(parse(chars[0])?, parse(chars[1])?))
    }
}

/// Kronecker product of two 2×2 matrices, `a` acting on the left spin.
pub fn kron(a: &ComplexMatrix2, b: &ComplexMatrix2) -> ComplexMatrix4 {
    let mut out = ComplexMatrix4::zeros();
    for i in 0..2 {
        for j in 0..2 {
            for k in 0..2 {
                for l in 0..2 {
                    out[(2 * i + k, 2 * j + l)] = a[(i, j)] * b[(k, l)];
                }
            }
        }
    }
    out
}

/// Embeds a single-spin operator acting on `q`.
pub fn embed(op: &ComplexMatrix2, q: Qubit) -> ComplexMatrix4 {
    match q {
        Qubit::Left => kron(op, &ComplexMatrix2::identity()),
        Qubit::Right => kron(&ComplexMatrix2::identity(), op),
    }
}

/// Spin-1/2 operators (eigenvalues ±1/2) and their two-spin embeddings.
#[derive(Debug, Clone)]
pub struct SpinOperators {
    pub sx: ComplexMatrix2,
    pub sy: ComplexMatrix2,
    pub sz: ComplexMatrix2,
    /// `[S_x, S_y, S_z]` acting on the left spin.
    pub left: [ComplexMatrix4; 3],
    /// `[S_x, S_y, S_z]` acting on the right spin.
    pub right: [ComplexMatrix4; 3],
    /// S_L · S_R.
    pub exchange: ComplexMatrix4,
}

impl SpinOperators {
    pub fn on(&self, q: Qubit) -> &[ComplexMatrix4; 3] {
        match q {
            Qubit::Left => &self.left,
            Qubit::Right => &self.right,
        }
    }
}

pub fn spin_operators() -> SpinOperators {
    let half = c(0.5);
    let sx = Pauli::X.matrix() * half;
    let sy = Pauli::Y.matrix() * half;
    let sz = Pauli::Z.matrix() * half;
    let left = [embed(&sx, Qubit::Left), embed(&sy, Qubit::Left), embed(&sz, Qubit::Left)];
    let right = [
        embed(&sx, Qubit::Right),
        embed(&sy, Qubit::Right),
        embed(&sz, Qubit::Right),
    ];
    let exchange = left[0] * right[0] + left[1] * right[1] + left[2] * right[2];
    SpinOperators {
        sx,
        sy,
        sz,
        left,
        right,
        exchange,
    }
}

/// Frobenius norm of `M − M†`.
pub fn hermiticity_error(m: &ComplexMatrix4) -> f64 {
    (m - m.adjoint()).norm()
}

/// Frobenius norm of `U†U − I`.
pub fn unitarity_error(u: &ComplexMatrix4) -> f64 {
    (u.adjoint() * u - ComplexMatrix4::identity()).norm()
}

fn check_hermitian(h: &ComplexMatrix4) -> Result<()> {
    let dev = hermiticity_error(h);
    let tol = ITERATIVE_TOL * h.norm().max(1.0);
    if dev > tol || !dev.is_finite() {
        return Err(Error::NotHermitian {
            deviation: dev,
            tolerance: tol,
        });
    }
    Ok(())
}

/// Eigen-decomposition of a Hermitian matrix.
#[derive(Debug, Clone)]
pub struct HermitianEigen {
    /// Ascending.
    pub values: [f64; 4],
    /// Column `k` is the eigenvector of `values[k]`.
    pub vectors: ComplexMatrix4,
}

pub fn eig_hermitian(h: &ComplexMatrix4) -> Result<HermitianEigen> {
    check_hermitian(h)?;
    let sym = (h + h.adjoint()) * c(0.5);
    let eig = SymmetricEigen::new(sym);
    let mut order = [0usize, 1, 2, 3];
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let mut values = [0.0; 4];
    let mut vectors = ComplexMatrix4::zeros();
    for (k, &src) in order.iter().enumerate() {
        values[k] = eig.eigenvalues[src];
        vectors.set_column(k, &eig.eigenvectors.column(src));
    }
    Ok(HermitianEigen { values, vectors })
}

/// `U = exp(−i 2π H dt)` for Hermitian `H` given in Hz.
pub fn expm_skew_hermitian(h: &ComplexMatrix4, dt: f64) -> Result<ComplexMatrix4> {
    let eig = eig_hermitian(h)?;
    Ok(propagator_from_eigen(&eig, dt))
}

pub(crate) fn propagator_from_eigen(eig: &HermitianEigen, dt: f64) -> ComplexMatrix4 {
    let mut scaled = eig.vectors;
    for k in 0..4 {
        let phase = C64::from_polar(1.0, -2.0 * PI * eig.values[k] * dt);
        for r in 0..4 {
            scaled[(r, k)] *= phase;
        }
    }
    scaled * eig.vectors.adjoint()
}

/// tr(ρ P).
pub fn pauli_expectation(state: &DensityMatrix, label: PauliLabel) -> f64 {
    (state.matrix() * label.matrix()).trace().re
}

/// Entanglement (process) fidelity |tr(V†U)|²/16 between two 4×4 unitaries.
pub fn gate_fidelity(u: &ComplexMatrix4, ideal: &ComplexMatrix4) -> f64 {
    (ideal.adjoint() * u).trace().norm_sqr() / 16.0
}

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_phase(phi: f64) -> f64 {
    phi.rem_euclid(2.0 * PI)
}

/// Wraps an angle into `(−π, π]`.
pub fn wrap_phase_symmetric(phi: f64) -> f64 {
    let w = phi.rem_euclid(2.0 * PI);
    if w > PI {
        w - 2.0 * PI
    } else {
        w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_hermitian(rng: &mut impl Rng, scale: f64) -> ComplexMatrix4 {
        let mut m = ComplexMatrix4::zeros();
        for i in 0..4 {
            for j in 0..4 {
                m[(i, j)] = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
        }
        (m + m.adjoint()) * c(0.5 * scale)
    }

    // Taylor series with scaling and squaring; independent of the eigen route.
    fn expm_taylor(h: &ComplexMatrix4, dt: f64) -> ComplexMatrix4 {
        let a = h * C64::new(0.0, -2.0 * PI * dt);
        let norm = a.norm();
        let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as u32 } else { 0 };
        let a = a / c(2f64.powi(squarings as i32));
        let mut term = ComplexMatrix4::identity();
        let mut sum = ComplexMatrix4::identity();
        for k in 1..30 {
            term = term * a / c(k as f64);
            sum += term;
        }
        for _ in 0..squarings {
            sum = sum * sum;
        }
        sum
    }

    #[test]
    fn spin_operator_algebra() {
        let s = spin_operators();
        assert_abs_diff_eq!(s.sz.trace().norm(), 0.0);
        let comm = s.sx * s.sy - s.sy * s.sx;
        let expected = s.sz * I;
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!((comm[(i, j)] - expected[(i, j)]).norm(), 0.0, epsilon = 1e-15);
            }
        }
        for m in s.left.iter().chain(s.right.iter()).chain([&s.exchange]) {
            assert!(hermiticity_error(m) < 1e-15);
        }
    }

    #[test]
    fn exchange_operator_triplet_singlet() {
        let eig = eig_hermitian(&spin_operators().exchange).unwrap();
        assert_abs_diff_eq!(eig.values[0], -0.75, epsilon = 1e-12);
        for v in &eig.values[1..] {
            assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn expm_of_zero_is_identity() {
        let u = expm_skew_hermitian(&ComplexMatrix4::zeros(), 1e-6).unwrap();
        assert!((u - ComplexMatrix4::identity()).norm() < 1e-15);
    }

    #[test]
    fn expm_of_diagonal() {
        let d = [1.0e6, -2.5e6, 3.0e7, 0.0];
        let h = ComplexMatrix4::from_diagonal(&Vector4::new(c(d[0]), c(d[1]), c(d[2]), c(d[3])));
        let dt = 37e-9;
        let u = expm_skew_hermitian(&h, dt).unwrap();
        for k in 0..4 {
            let expected = C64::from_polar(1.0, -2.0 * PI * d[k] * dt);
            assert!((u[(k, k)] - expected).norm() < 1e-12);
        }
    }

    #[test]
    fn expm_matches_taylor_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let h = random_hermitian(&mut rng, 20e6);
            let dt = 25e-9;
            let u = expm_skew_hermitian(&h, dt).unwrap();
            // oracle at half step, squared
            let half = expm_taylor(&h, dt / 2.0);
            assert!((u - half * half).norm() < 1e-9);
        }
    }

    #[test]
    fn expm_rejects_non_hermitian() {
        let mut h = ComplexMatrix4::zeros();
        h[(0, 1)] = c(1.0);
        assert!(matches!(
            expm_skew_hermitian(&h, 1.0),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn eig_of_diagonal_is_sorted_diagonal() {
        let h = ComplexMatrix4::from_diagonal(&Vector4::new(c(3.0), c(-1.0), c(2.0), c(0.5)));
        let eig = eig_hermitian(&h).unwrap();
        assert_eq!(eig.values, [-1.0, 0.5, 2.0, 3.0]);
    }

    #[test]
    fn eig_two_level_block_closed_form() {
        // antiparallel block of the exchange Hamiltonian
        let (j, db) = (20e6, 200e6);
        let mut h = ComplexMatrix4::zeros();
        h[(1, 1)] = c(-db / 2.0 - j / 2.0);
        h[(2, 2)] = c(db / 2.0 - j / 2.0);
        h[(1, 2)] = c(j / 2.0);
        h[(2, 1)] = c(j / 2.0);
        let eig = eig_hermitian(&h).unwrap();
        // eigenvalues: two zeros (empty parallel block) and −J/2 ± √(J²+ΔB²)/2
        let r = (j * j + db * db).sqrt();
        let mut expected = [0.0, 0.0, -j / 2.0 - r / 2.0, -j / 2.0 + r / 2.0];
        expected.sort_by(f64::total_cmp);
        for (v, e) in eig.values.iter().zip(&expected) {
            assert!((v - e).abs() < 1e-9 * db);
        }
    }

    #[test]
    fn eig_residuals_and_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let h = random_hermitian(&mut rng, 1e9);
            let eig = eig_hermitian(&h).unwrap();
            let sum: f64 = eig.values.iter().sum();
            assert!((sum - h.trace().re).abs() < 1e-9 * h.norm());
            for k in 0..4 {
                let v = eig.vectors.column(k);
                let r = (h * v - v * c(eig.values[k])).norm();
                assert!(r < 1e-9 * h.norm());
            }
            assert!(eig.values.windows(2).all(|w| w[0] <= w[1]));
            assert!(unitarity_error(&eig.vectors) < 1e-10);
        }
    }

    #[test]
    fn pauli_expectation_examples() {
        let dd = TwoQubitState::basis(BasisState::DownDown).density_matrix();
        assert_abs_diff_eq!(
            pauli_expectation(&dd, "ZZ".parse().unwrap()),
            1.0,
            epsilon = 1e-12
        );
        assert_abs_diff_eq!(
            pauli_expectation(&dd, "ZI".parse().unwrap()),
            -1.0,
            epsilon = 1e-12
        );
        let mixed = DensityMatrix::maximally_mixed();
        for label in PauliLabel::all().iter().skip(1) {
            assert_abs_diff_eq!(pauli_expectation(&mixed, *label), 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn pauli_expectation_bell_contraction() {
        let s = 1.0 / 2f64.sqrt();
        let bell = TwoQubitState::new(Vector4::new(C64::new(0.0, -s), ZERO, ZERO, c(s))).unwrap();
        let rho = bell.density_matrix();
        // brute-force contraction ⟨ψ|X⊗Y|ψ⟩ written out element by element
        let x = Pauli::X.matrix();
        let y = Pauli::Y.matrix();
        let amp = bell.amplitudes();
        let mut brute = ZERO;
        for i in 0..4 {
            for j in 0..4 {
                let op = x[(i / 2, j / 2)] * y[(i % 2, j % 2)];
                brute += amp[i].conj() * op * amp[j];
            }
        }
        let value = pauli_expectation(&rho, "XY".parse().unwrap());
        assert_abs_diff_eq!(value, brute.re, epsilon = 1e-12);
        assert_abs_diff_eq!(value.abs(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn projection_clips_and_renormalizes() {
        let mut ev = [0.0; 16];
        ev[PauliLabel::new(Pauli::Z, Pauli::Z).index()] = 1.0;
        ev[PauliLabel::new(Pauli::X, Pauli::X).index()] = 1.0;
        ev[PauliLabel::new(Pauli::Y, Pauli::Y).index()] = 1.0;
        // ZZ=XX=YY=1 is unphysical (eigenvalue −1/2)
        let raw = DensityMatrix::from_pauli_vector(&ev);
        assert!(!raw.is_physical(1e-10));
        let proj = raw.project_physical();
        assert!(proj.is_physical(1e-10));
        let again = proj.project_physical();
        assert!((again.matrix() - proj.matrix()).norm() < 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn propagators_are_unitary_and_preserve_norm(seed in any::<u64>(), dt in 1e-10f64..1e-6) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let h = random_hermitian(&mut rng, 1e8);
            let u = expm_skew_hermitian(&h, dt).unwrap();
            prop_assert!(unitarity_error(&u) < 1e-10);
            let mut v = Vector4::zeros();
            for k in 0..4 {
                v[k] = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
            let psi = TwoQubitState::normalized(v).unwrap();
            prop_assert!((psi.apply(&u).norm_sqr() - 1.0).abs() < 1e-10);
        }

        #[test]
        fn pauli_vector_reconstructs_state(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut v = Vector4::zeros();
            for k in 0..4 {
                v[k] = C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            }
            let a = TwoQubitState::normalized(v).unwrap().density_matrix();
            let w: f64 = rng.random_range(0.0..1.0);
            let rho = DensityMatrix::new(a.matrix() * c(w) + DensityMatrix::maximally_mixed().matrix() * c(1.0 - w)).unwrap();
            let back = DensityMatrix::from_pauli_vector(&rho.pauli_vector());
            prop_assert!((back.matrix() - rho.matrix()).norm() < 1e-10);
        }
    }

    #[test]
    fn thousand_random_propagators_are_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..1000 {
            let h = random_hermitian(&mut rng, 5e9);
            let dt = rng.random_range(1e-12..1e-7);
            let u = expm_skew_hermitian(&h, dt).unwrap();
            assert!(unitarity_error(&u) < 1e-10);
        }
    }
}
