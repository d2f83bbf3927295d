//! Composite atom ⊗ truncated-Fock Hilbert space: canonical states, the ladder
//! and Pauli operators, and density matrices with partial traces.
//!
//! Joint basis vectors are laid out atom-major: index = atom × fock_dim + n,
//! with the ground state `|g⟩` as atom index 0 and `|e⟩` as atom index 1.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::SimParams;
use crate::error::{Result, SimError};
use crate::C64;

/// Largest tolerated deviation of a state norm from one.
pub const NORM_TOLERANCE: f64 = 1e-12;
/// Maximum population allowed outside (or at the edge of) the retained Fock levels.
pub const TRUNCATION_LIMIT: f64 = 1e-8;
/// Hermiticity, trace and positivity tolerance for density matrices.
pub const DENSITY_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpaceDescriptor {
    fock_dim: usize,
}

impl SpaceDescriptor {
    pub fn new(fock_dim: usize) -> Result<Self> {
        if fock_dim < 2 {
            return Err(SimError::InvalidParams(format!(
                "fock_dim must be at least 2, got {fock_dim}"
            )));
        }
        Ok(Self { fock_dim })
    }

    pub fn fock_dim(&self) -> usize {
        self.fock_dim
    }

    pub fn joint_dim(&self) -> usize {
        2 * self.fock_dim
    }

    #[inline]
    pub fn index(&self, atom: Atom, n: usize) -> usize {
        debug_assert!(n < self.fock_dim);
        atom.index() * self.fock_dim + n
    }

    /// Inverse of [`SpaceDescriptor::index`].
    #[inline]
    pub fn split(&self, index: usize) -> (Atom, usize) {
        let atom = if index < self.fock_dim {
            Atom::Ground
        } else {
            Atom::Excited
        };
        (atom, index % self.fock_dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Atom {
    Ground,
    Excited,
}

impl Atom {
    #[inline]
    pub fn index(self) -> usize {
        match self {
            Atom::Ground => 0,
            Atom::Excited => 1,
        }
    }
}

/// A normalized pure state of the atom-field system.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    amplitudes: DVector<C64>,
    space: SpaceDescriptor,
}

impl JointState {
    /// Wraps `amplitudes`, rescaling them to unit norm.
    pub fn new(space: SpaceDescriptor, amplitudes: DVector<C64>) -> Result<Self> {
        if amplitudes.len() != space.joint_dim() {
            return Err(SimError::DimensionMismatch {
                expected: space.joint_dim(),
                found: amplitudes.len(),
            });
        }
        let norm = amplitudes.norm();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(SimError::InvalidParams(format!(
                "cannot normalize a state of norm {norm}"
            )));
        }
        Ok(Self {
            amplitudes: amplitudes.unscale(norm),
            space,
        })
    }

    pub fn from_slice(space: SpaceDescriptor, amplitudes: &[C64]) -> Result<Self> {
        Self::new(space, DVector::from_column_slice(amplitudes))
    }

    /// `|atom, n⟩`.
    pub fn basis(space: SpaceDescriptor, atom: Atom, n: usize) -> Self {
        let mut amplitudes = DVector::zeros(space.joint_dim());
        amplitudes[space.index(atom, n)] = C64::new(1.0, 0.0);
        Self { amplitudes, space }
    }

    /// `(c_g |g⟩ + c_e |e⟩) ⊗ |field⟩`, normalized.
    pub fn product(space: SpaceDescriptor, atom: [C64; 2], field: &DVector<C64>) -> Result<Self> {
        if field.len() != space.fock_dim() {
            return Err(SimError::DimensionMismatch {
                expected: space.fock_dim(),
                found: field.len(),
            });
        }
        let mut amplitudes = DVector::zeros(space.joint_dim());
        for (a, &c) in atom.iter().enumerate() {
            for n in 0..space.fock_dim() {
                amplitudes[a * space.fock_dim() + n] = c * field[n];
            }
        }
        Self::new(space, amplitudes)
    }

    pub(crate) fn from_normalized(space: SpaceDescriptor, amplitudes: DVector<C64>) -> Self {
        debug_assert!((amplitudes.norm() - 1.0).abs() < 1e-9);
        Self { amplitudes, space }
    }

    pub fn space(&self) -> SpaceDescriptor {
        self.space
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amplitudes
    }

    pub fn as_slice(&self) -> &[C64] {
        self.amplitudes.as_slice()
    }

    pub fn amplitude(&self, atom: Atom, n: usize) -> C64 {
        self.amplitudes[self.space.index(atom, n)]
    }

    pub fn norm(&self) -> f64 {
        self.amplitudes.norm()
    }

    /// ⟨ψ|op|ψ⟩.
    pub fn expectation(&self, op: &Operator) -> C64 {
        let applied = op.apply(self.as_slice());
        self.amplitudes
            .iter()
            .zip(applied.iter())
            .map(|(l, r)| l.conj() * r)
            .sum()
    }

    /// `|⟨self|other⟩|²`.
    pub fn overlap_squared(&self, other: &JointState) -> f64 {
        self.amplitudes.dotc(&other.amplitudes).norm_sqr()
    }

    pub fn to_density(&self) -> DensityMatrix {
        let m = &self.amplitudes * self.amplitudes.adjoint();
        DensityMatrix::from_raw(m, Subsystem::Joint)
    }
}

/// A dense operator on the joint space, with its nonzero entries cached for
/// cheap matrix-vector products.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator {
    matrix: DMatrix<C64>,
    space: SpaceDescriptor,
    nonzeros: Vec<(usize, usize, C64)>,
}

impl Operator {
    pub fn from_matrix(space: SpaceDescriptor, matrix: DMatrix<C64>) -> Result<Self> {
        let dim = space.joint_dim();
        if matrix.nrows() != dim || matrix.ncols() != dim {
            return Err(SimError::DimensionMismatch {
                expected: dim,
                found: if matrix.nrows() != dim {
                    matrix.nrows()
                } else {
                    matrix.ncols()
                },
            });
        }
        Ok(Self::from_matrix_unchecked(space, matrix))
    }

    fn from_matrix_unchecked(space: SpaceDescriptor, matrix: DMatrix<C64>) -> Self {
        let mut nonzeros = Vec::new();
        for r in 0..matrix.nrows() {
            for c in 0..matrix.ncols() {
                let v = matrix[(r, c)];
                if v != C64::new(0.0, 0.0) {
                    nonzeros.push((r, c, v));
                }
            }
        }
        Self {
            matrix,
            space,
            nonzeros,
        }
    }

    pub fn zeros(space: SpaceDescriptor) -> Self {
        let dim = space.joint_dim();
        Self::from_matrix_unchecked(space, DMatrix::zeros(dim, dim))
    }

    pub fn identity(space: SpaceDescriptor) -> Self {
        let dim = space.joint_dim();
        Self::from_matrix_unchecked(space, DMatrix::identity(dim, dim))
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn space(&self) -> SpaceDescriptor {
        self.space
    }

    /// Nonzero entries as `(row, col, value)`, in row-major order.
    pub fn nonzeros(&self) -> &[(usize, usize, C64)] {
        &self.nonzeros
    }

    pub fn apply(&self, input: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.matrix.nrows()];
        self.apply_into(input, &mut out);
        out
    }

    /// `out = self · input`.
    pub fn apply_into(&self, input: &[C64], out: &mut [C64]) {
        debug_assert_eq!(input.len(), self.matrix.ncols());
        out.iter_mut().for_each(|x| *x = C64::new(0.0, 0.0));
        for &(r, c, v) in &self.nonzeros {
            out[r] += v * input[c];
        }
    }

    pub fn adjoint(&self) -> Self {
        Self::from_matrix_unchecked(self.space, self.matrix.adjoint())
    }

    pub fn compose(&self, rhs: &Operator) -> Self {
        Self::from_matrix_unchecked(self.space, &self.matrix * &rhs.matrix)
    }

    pub fn plus(&self, rhs: &Operator) -> Self {
        Self::from_matrix_unchecked(self.space, &self.matrix + &rhs.matrix)
    }

    pub fn minus(&self, rhs: &Operator) -> Self {
        Self::from_matrix_unchecked(self.space, &self.matrix - &rhs.matrix)
    }

    pub fn scaled(&self, factor: C64) -> Self {
        Self::from_matrix_unchecked(self.space, self.matrix.map(|v| v * factor))
    }

    /// Largest entry-wise modulus of `self - self†`.
    pub fn hermiticity_error(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint())
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }
}

/// Ladder and Pauli operators on the joint space.
#[derive(Debug, Clone)]
pub struct Operators {
    pub a: Operator,
    pub a_dag: Operator,
    pub number: Operator,
    pub sigma_plus: Operator,
    pub sigma_minus: Operator,
    pub sigma_x: Operator,
    pub sigma_y: Operator,
    pub sigma_z: Operator,
}

pub fn build_operators(space: SpaceDescriptor) -> Operators {
    let dim = space.joint_dim();
    let d = space.fock_dim();
    let zero = || DMatrix::<C64>::zeros(dim, dim);
    let one = C64::new(1.0, 0.0);
    let i = C64::new(0.0, 1.0);

    let mut a = zero();
    let mut number = zero();
    let mut sigma_plus = zero();
    let mut sigma_z = zero();
    for atom in [Atom::Ground, Atom::Excited] {
        for n in 0..d {
            let k = space.index(atom, n);
            if n > 0 {
                a[(space.index(atom, n - 1), k)] = C64::new((n as f64).sqrt(), 0.0);
            }
            number[(k, k)] = C64::new(n as f64, 0.0);
            sigma_z[(k, k)] = match atom {
                Atom::Ground => -one,
                Atom::Excited => one,
            };
        }
    }
    for n in 0..d {
        sigma_plus[(space.index(Atom::Excited, n), space.index(Atom::Ground, n))] = one;
    }
    let sigma_minus = sigma_plus.adjoint();
    let sigma_x = &sigma_plus + &sigma_minus;
    let sigma_y = sigma_plus.map(|v| -i * v) + sigma_minus.map(|v| i * v);
    let a_dag = a.adjoint();

    let op = |m| Operator::from_matrix_unchecked(space, m);
    Operators {
        a: op(a),
        a_dag: op(a_dag),
        number: op(number),
        sigma_plus: op(sigma_plus),
        sigma_minus: op(sigma_minus),
        sigma_x: op(sigma_x),
        sigma_y: op(sigma_y),
        sigma_z: op(sigma_z),
    }
}

/// Truncated coherent state `|α⟩` on the field factor, renormalized after
/// truncation.
pub fn coherent_state(alpha: C64, space: SpaceDescriptor) -> Result<DVector<C64>> {
    let d = space.fock_dim();
    let mut amps = DVector::<C64>::zeros(d);
    let mut c = C64::new((-alpha.norm_sqr() / 2.0).exp(), 0.0);
    for n in 0..d {
        amps[n] = c;
        c = c * alpha / ((n + 1) as f64).sqrt();
    }
    let kept = amps.norm_squared();
    let tail = (1.0 - kept).max(0.0);
    if tail > TRUNCATION_LIMIT || !tail.is_finite() {
        return Err(SimError::Truncation {
            weight: tail,
            limit: TRUNCATION_LIMIT,
            fock_dim: d,
        });
    }
    Ok(amps.unscale(kept.sqrt()))
}

/// `|g⟩ ⊗ |α⟩` with `α = 2F/(iγ)` unless overridden.
pub fn initial_state(params: &SimParams) -> Result<JointState> {
    let space = params.space();
    let field = coherent_state(params.alpha()?, space)?;
    let one = C64::new(1.0, 0.0);
    let zero = C64::new(0.0, 0.0);
    JointState::product(space, [one, zero], &field)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Subsystem {
    Joint,
    Atom,
    Field,
}

/// A Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    matrix: DMatrix<C64>,
    label: Subsystem,
}

impl DensityMatrix {
    /// Validates `matrix` against [`DENSITY_TOLERANCE`].
    pub fn new(matrix: DMatrix<C64>, label: Subsystem) -> Result<Self> {
        let rho = Self::from_raw(matrix, label);
        rho.validate(DENSITY_TOLERANCE)?;
        Ok(rho)
    }

    pub(crate) fn from_raw(matrix: DMatrix<C64>, label: Subsystem) -> Self {
        debug_assert!(matrix.is_square());
        Self { matrix, label }
    }

    pub fn validate(&self, tolerance: f64) -> Result<()> {
        if !self.matrix.is_square() {
            return Err(SimError::InvalidDensity(format!(
                "{}x{} matrix is not square",
                self.matrix.nrows(),
                self.matrix.ncols()
            )));
        }
        let herm = self.hermiticity_error();
        if herm > tolerance {
            return Err(SimError::InvalidDensity(format!(
                "not Hermitian (deviation {herm:e})"
            )));
        }
        let trace = self.trace();
        if (trace - 1.0).abs() > tolerance {
            return Err(SimError::InvalidDensity(format!("trace is {trace}")));
        }
        let min = self.eigenvalues().min();
        if min < -tolerance {
            return Err(SimError::InvalidDensity(format!(
                "negative eigenvalue {min:e}"
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn label(&self) -> Subsystem {
        self.label
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Real part of the trace.
    pub fn trace(&self) -> f64 {
        self.matrix.trace().re
    }

    pub fn hermiticity_error(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint())
            .iter()
            .map(|v| v.norm())
            .fold(0.0, f64::max)
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> DVector<f64> {
        hermitian_eigenvalues(&self.matrix)
    }
}

pub(crate) fn hermitian_eigenvalues(m: &DMatrix<C64>) -> DVector<f64> {
    let h = (m + m.adjoint()).map(|v| v * 0.5);
    let mut ev = h.symmetric_eigenvalues();
    ev.as_mut_slice().sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Reduced state of `keep` obtained by tracing out the other subsystem.
pub fn partial_trace(rho: &DensityMatrix, keep: Subsystem) -> Result<DensityMatrix> {
    if rho.label() != Subsystem::Joint {
        return Err(SimError::InvalidDensity(
            "partial trace needs a joint density matrix".into(),
        ));
    }
    let dim = rho.dim();
    if dim < 4 || !dim.is_multiple_of(2) {
        return Err(SimError::DimensionMismatch {
            expected: 2 * (dim / 2).max(2),
            found: dim,
        });
    }
    let d = dim / 2;
    let m = rho.matrix();
    let reduced = match keep {
        Subsystem::Atom => DMatrix::from_fn(2, 2, |a, b| (0..d).map(|n| m[(a * d + n, b * d + n)]).sum()),
        Subsystem::Field => DMatrix::from_fn(d, d, |n, k| m[(n, k)] + m[(d + n, d + k)]),
        Subsystem::Joint => {
            return Err(SimError::InvalidDensity(
                "partial trace must keep the atom or the field".into(),
            ))
        }
    };
    Ok(DensityMatrix::from_raw(reduced, keep))
}

/// Atom reduced matrix of a pure joint state, computed directly from the amplitudes.
pub(crate) fn atom_reduced(space: SpaceDescriptor, amps: &[C64]) -> [[C64; 2]; 2] {
    let d = space.fock_dim();
    let (g, e) = amps.split_at(d);
    let mut gg = 0.0;
    let mut ee = 0.0;
    let mut ge = C64::new(0.0, 0.0);
    for n in 0..d {
        gg += g[n].norm_sqr();
        ee += e[n].norm_sqr();
        ge += g[n] * e[n].conj();
    }
    [
        [C64::new(gg, 0.0), ge],
        [ge.conj(), C64::new(ee, 0.0)],
    ]
}
