//! Quantities reported from states, density matrices and trajectory records.

use serde::Serialize;

use crate::dynamics::{jump_step, no_jump_trajectory, SimParams, TrajectoryRecord};
use crate::ensemble::{run_ensemble_with, EnsembleResult, Execution};
use crate::error::{Result, SimError};
use crate::hilbert::{atom_reduced, coherent_state, hermitian_eigenvalues, DensityMatrix, JointState, SpaceDescriptor, Subsystem};
use crate::C64;

/// Minimum ensemble size accepted by [`leaked_information`].
pub const MIN_LEAK_ENSEMBLE: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlochVector {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl BlochVector {
    pub fn norm(&self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(&self, other: &BlochVector) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }
}

/// Entropy of the atom just before and just after a single detection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeapResult {
    pub entropy_before: f64,
    pub entropy_after: f64,
    pub delta_e: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LeapAnalysis {
    pub gamma: f64,
    pub t_star: f64,
    pub entropy_before: f64,
    pub entropy_after: f64,
    pub delta_e: f64,
    pub mean_jump_count: f64,
    pub jump_count_std_error: f64,
    /// `mean_jump_count × delta_e`.
    pub e_leak: f64,
}

/// `tr ρ²`.
pub fn purity(rho: &DensityMatrix) -> f64 {
    // For Hermitian ρ, tr ρ² = Σ |ρ_ij|².
    rho.matrix().iter().map(|v| v.norm_sqr()).sum()
}

/// `⟨α|ρ_f|α⟩` against the truncated, renormalized coherent state.
pub fn coherent_fidelity(rho_f: &DensityMatrix, alpha: C64) -> Result<f64> {
    if rho_f.label() != Subsystem::Field {
        return Err(SimError::InvalidDensity("fidelity needs a field density matrix".into()));
    }
    let space = SpaceDescriptor::new(rho_f.dim())?;
    let coherent = coherent_state(alpha, space)?;
    let value = coherent.dotc(&(rho_f.matrix() * &coherent));
    Ok(value.re)
}

/// `(tr ρσ_x, tr ρσ_y, tr ρσ_z)` for a 2×2 atom matrix in the `(g, e)` basis.
pub fn bloch_vector(rho_s: &DensityMatrix) -> BlochVector {
    assert_eq!(rho_s.dim(), 2, "Bloch vector needs a 2x2 atom matrix");
    let m = rho_s.matrix();
    bloch_from_reduced([[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]])
}

fn bloch_from_reduced(r: [[C64; 2]; 2]) -> BlochVector {
    // ρ_ge = r[0][1]; σ_x = σ₊ + σ₋, σ_y = -iσ₊ + iσ₋.
    let ge = r[0][1];
    BlochVector {
        x: 2.0 * ge.re,
        y: 2.0 * ge.im,
        z: r[1][1].re - r[0][0].re,
    }
}

/// Bloch vector of the atom in a pure joint state.
pub fn bloch_of_state(state: &JointState) -> BlochVector {
    bloch_from_reduced(atom_reduced(state.space(), state.as_slice()))
}

/// Binary entropy in bits with `0 log 0 = 0`.
fn entropy_bits(probabilities: impl IntoIterator<Item = f64>) -> f64 {
    probabilities
        .into_iter()
        .map(|p| p.clamp(0.0, 1.0))
        .filter(|&p| p > 0.0)
        .fold(0.0, |acc, p| acc - p * p.log2())
}

pub(crate) fn qubit_entropy(r: [[C64; 2]; 2]) -> f64 {
    let gg = r[0][0].re;
    let ee = r[1][1].re;
    let trace = gg + ee;
    let radius = ((gg - ee).powi(2) + 4.0 * r[0][1].norm_sqr()).sqrt();
    let upper = ((trace + radius) / 2.0).clamp(0.0, 1.0);
    entropy_bits([upper, 1.0 - upper])
}

/// Von Neumann entropy (bits) of the atom's reduced state.
pub fn entanglement_entropy(state: &JointState) -> f64 {
    qubit_entropy(atom_reduced(state.space(), state.as_slice()))
}

/// Von Neumann entropy (bits) of any density matrix, from its spectrum.
pub fn von_neumann_entropy(rho: &DensityMatrix) -> f64 {
    entropy_bits(rho.eigenvalues().iter().copied())
}

/// `½ ‖a − b‖₁`.
pub fn trace_distance(a: &DensityMatrix, b: &DensityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(SimError::DimensionMismatch {
            expected: a.dim(),
            found: b.dim(),
        });
    }
    let diff = a.matrix() - b.matrix();
    Ok(hermitian_eigenvalues(&diff).iter().map(|v| v.abs()).sum::<f64>() / 2.0)
}

/// Number of detections up to and including `t`.
pub fn jump_count(record: &TrajectoryRecord, t: f64) -> usize {
    let slack = 1e-12 * t.abs().max(1.0);
    record.jump_times.iter().filter(|&&s| s <= t + slack).count()
}

/// Entropy change caused by a single detection at `t_star` on the no-jump
/// trajectory.
pub fn entanglement_leap(params: &SimParams, t_star: f64) -> Result<LeapResult> {
    if t_star.is_nan() || t_star <= 0.0 {
        return Err(SimError::InvalidParams(format!("t_star must be positive, got {t_star}")));
    }
    let before = no_jump_trajectory(params, t_star)?;
    let (after, _) = jump_step(&before, params)?;
    let after = JointState::new(params.space(), after)?;
    let entropy_before = entanglement_entropy(&before);
    let entropy_after = entanglement_entropy(&after);
    Ok(LeapResult {
        entropy_before,
        entropy_after,
        delta_e: (entropy_after - entropy_before).abs(),
    })
}

/// Ensemble-mean number of detected photons up to a sampled time.
pub fn average_jump_count(result: &EnsembleResult, t: f64) -> Result<f64> {
    Ok(result.mean_jump_count[result.time_index(t)?])
}

/// Leap size times the ensemble-mean photon count at `t_star`.
pub fn leaked_information(params: &SimParams, t_star: f64, ensemble_size: usize, seed: u64) -> Result<LeapAnalysis> {
    leaked_information_with(params, t_star, ensemble_size, seed, Execution::default())
}

pub fn leaked_information_with(
    params: &SimParams,
    t_star: f64,
    ensemble_size: usize,
    seed: u64,
    execution: Execution,
) -> Result<LeapAnalysis> {
    if ensemble_size < MIN_LEAK_ENSEMBLE {
        return Err(SimError::InvalidParams(format!(
            "ensemble_size must be at least {MIN_LEAK_ENSEMBLE}, got {ensemble_size}"
        )));
    }
    let leap = entanglement_leap(params, t_star)?;
    let ensemble = run_ensemble_with(params, ensemble_size, seed, &[t_star], execution)?;
    let mean_jump_count = ensemble.mean_jump_count[0];
    Ok(LeapAnalysis {
        gamma: params.gamma(),
        t_star,
        entropy_before: leap.entropy_before,
        entropy_after: leap.entropy_after,
        delta_e: leap.delta_e,
        mean_jump_count,
        jump_count_std_error: ensemble.jump_count_std_error[0],
        e_leak: mean_jump_count * leap.delta_e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::{partial_trace, Atom};
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn atom_matrix(m: [[C64; 2]; 2]) -> DensityMatrix {
        DensityMatrix::new(DMatrix::from_fn(2, 2, |i, j| m[i][j]), Subsystem::Atom).unwrap()
    }

    fn bell(space: SpaceDescriptor) -> JointState {
        let mut v = DVector::zeros(space.joint_dim());
        v[space.index(Atom::Ground, 1)] = c(1.0, 0.0);
        v[space.index(Atom::Excited, 0)] = c(1.0, 0.0);
        JointState::new(space, v).unwrap()
    }

    #[test]
    fn purity_of_projector_and_mixed_qubit() {
        let s = SpaceDescriptor::new(6).unwrap();
        let psi = JointState::from_slice(s, &(0..12).map(|k| c(k as f64, 1.0)).collect::<Vec<_>>()).unwrap();
        assert_abs_diff_eq!(purity(&psi.to_density()), 1.0, epsilon = 1e-14);
        let mixed = atom_matrix([[c(0.5, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.5, 0.0)]]);
        assert_abs_diff_eq!(purity(&mixed), 0.5);
    }

    #[test]
    fn fidelity_values() {
        let s = SpaceDescriptor::new(16).unwrap();
        let alpha = c(0.0, -1.0);
        let field = coherent_state(alpha, s).unwrap();
        let rho = DensityMatrix::new(&field * field.adjoint(), Subsystem::Field).unwrap();
        assert_abs_diff_eq!(coherent_fidelity(&rho, alpha).unwrap(), 1.0, epsilon = 1e-10);

        let mut vac = DMatrix::zeros(16, 16);
        vac[(0, 0)] = c(1.0, 0.0);
        let vac = DensityMatrix::new(vac, Subsystem::Field).unwrap();
        assert_abs_diff_eq!(coherent_fidelity(&vac, alpha).unwrap(), (-1.0f64).exp(), epsilon = 1e-12);
    }

    #[test]
    fn fidelity_rejects_atom_matrix() {
        let m = atom_matrix([[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]]);
        assert!(coherent_fidelity(&m, c(0.0, -1.0)).is_err());
    }

    #[test]
    fn bloch_vectors_of_reference_states() {
        let ground = atom_matrix([[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]]);
        assert_eq!(bloch_vector(&ground), BlochVector { x: 0.0, y: 0.0, z: -1.0 });

        // (|g⟩ - |e⟩)/√2
        let s = SpaceDescriptor::new(4).unwrap();
        let mut v = DVector::zeros(8);
        v[s.index(Atom::Ground, 0)] = c(1.0, 0.0);
        v[s.index(Atom::Excited, 0)] = c(-1.0, 0.0);
        let psi = JointState::new(s, v).unwrap();
        let b = bloch_vector(&partial_trace(&psi.to_density(), Subsystem::Atom).unwrap());
        assert_abs_diff_eq!(b.x, -1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b.y, 0.0);
        assert_abs_diff_eq!(b.z, 0.0, epsilon = 1e-15);
        assert_eq!(bloch_of_state(&psi), b);

        let mixed = atom_matrix([[c(0.5, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.5, 0.0)]]);
        assert_eq!(bloch_vector(&mixed), BlochVector { x: 0.0, y: 0.0, z: 0.0 });
    }

    #[test]
    fn bloch_y_matches_sigma_y_operator() {
        let s = SpaceDescriptor::new(3).unwrap();
        let ops = crate::hilbert::build_operators(s);
        let amps: Vec<C64> = (0..6).map(|k| c((k as f64 * 1.3).cos(), (k as f64 * 0.4).sin())).collect();
        let psi = JointState::from_slice(s, &amps).unwrap();
        let b = bloch_of_state(&psi);
        assert_abs_diff_eq!(b.x, psi.expectation(&ops.sigma_x).re, epsilon = 1e-14);
        assert_abs_diff_eq!(b.y, psi.expectation(&ops.sigma_y).re, epsilon = 1e-14);
        assert_abs_diff_eq!(b.z, psi.expectation(&ops.sigma_z).re, epsilon = 1e-14);
    }

    #[test]
    fn entropy_of_product_and_bell_states() {
        let s = SpaceDescriptor::new(16).unwrap();
        let field = coherent_state(c(0.0, -1.0), s).unwrap();
        let product = JointState::product(s, [c(0.6, 0.0), c(0.0, 0.8)], &field).unwrap();
        assert!(entanglement_entropy(&product).abs() < 1e-10);
        assert_abs_diff_eq!(entanglement_entropy(&bell(s)), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn qubit_entropy_matches_spectral_entropy() {
        let s = SpaceDescriptor::new(4).unwrap();
        let amps: Vec<C64> = (0..8).map(|k| c((k as f64).sin(), (k as f64 * 0.3).cos())).collect();
        let psi = JointState::from_slice(s, &amps).unwrap();
        let reduced = partial_trace(&psi.to_density(), Subsystem::Atom).unwrap();
        assert_abs_diff_eq!(entanglement_entropy(&psi), von_neumann_entropy(&reduced), epsilon = 1e-12);
    }

    #[test]
    fn trace_distance_basics() {
        let a = atom_matrix([[c(1.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(0.0, 0.0)]]);
        let b = atom_matrix([[c(0.0, 0.0), c(0.0, 0.0)], [c(0.0, 0.0), c(1.0, 0.0)]]);
        assert_abs_diff_eq!(trace_distance(&a, &b).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(trace_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn jump_count_bounds() {
        let rec = TrajectoryRecord {
            times: vec![0.0, 1.0],
            states: Vec::new(),
            jump_times: vec![0.25, 0.5, 0.75],
            jump_count: 3,
            seed: 0,
        };
        assert_eq!(jump_count(&rec, 0.0), 0);
        assert_eq!(jump_count(&rec, 0.5), 2);
        assert_eq!(jump_count(&rec, 1.0), 3);
    }

    #[test]
    fn no_decay_no_jumps() {
        let p = SimParams::builder().drive(0.0).gamma(0.0).alpha_override(c(0.0, -1.0)).build().unwrap();
        let rec = crate::dynamics::run_trajectory(&p, 9, &[0.0, p.t_final()]).unwrap();
        assert_eq!(jump_count(&rec, p.t_final()), 0);
    }

    #[test]
    fn leap_vanishes_without_coupling() {
        let p = SimParams::builder().g(0.0).drive(1.0).gamma(2.0).build().unwrap();
        let leap = entanglement_leap(&p, std::f64::consts::FRAC_PI_4).unwrap();
        assert!(leap.delta_e < 1e-12);
        assert!(leap.entropy_before < 1e-10);
    }

    #[test]
    fn leap_rejects_non_positive_time() {
        let p = SimParams::builder().drive(1.0).gamma(2.0).build().unwrap();
        assert!(entanglement_leap(&p, 0.0).is_err());
    }

    #[test]
    fn leaked_information_small_ensemble_is_rejected() {
        let p = SimParams::builder().drive(1.0).gamma(2.0).build().unwrap();
        assert!(leaked_information(&p, 0.5, 10, 1).is_err());
    }

    #[test]
    fn leaked_information_identities() {
        let p = SimParams::builder().drive(1.0).gamma(2.0).build().unwrap();
        let la = leaked_information(&p, std::f64::consts::FRAC_PI_4, 100, 3).unwrap();
        assert_eq!(la.delta_e, (la.entropy_after - la.entropy_before).abs());
        assert_eq!(la.e_leak, la.mean_jump_count * la.delta_e);
    }

    #[test]
    fn leaked_information_vanishes_without_decay_channel() {
        let p = SimParams::builder().drive(1e-6).gamma(2e-6).build().unwrap();
        let la = leaked_information(&p, std::f64::consts::FRAC_PI_4, 100, 3).unwrap();
        assert_eq!(la.mean_jump_count, 0.0);
        assert_eq!(la.e_leak, 0.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn state(d: usize) -> impl Strategy<Value = JointState> {
            prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 2 * d)
                .prop_filter("nonzero", |v| v.iter().any(|(a, b)| a.abs() + b.abs() > 1e-3))
                .prop_map(move |v| {
                    let amps: Vec<C64> = v.into_iter().map(|(re, im)| C64::new(re, im)).collect();
                    JointState::from_slice(SpaceDescriptor::new(d).unwrap(), &amps).unwrap()
                })
        }

        proptest! {
            #[test]
            fn entropy_is_within_one_bit(psi in state(5)) {
                let e = entanglement_entropy(&psi);
                prop_assert!((0.0..=1.0).contains(&e));
            }

            #[test]
            fn bloch_norm_purity_identity(psi in state(5)) {
                let rho_s = partial_trace(&psi.to_density(), Subsystem::Atom).unwrap();
                let b = bloch_vector(&rho_s);
                let p = purity(&rho_s);
                prop_assert!(b.norm() <= 1.0 + 1e-10);
                prop_assert!((b.norm().powi(2) - (2.0 * p - 1.0)).abs() < 1e-12);
            }

            #[test]
            fn reduced_purities_agree_for_pure_states(psi in state(5)) {
                let rho = psi.to_density();
                let ps = purity(&partial_trace(&rho, Subsystem::Atom).unwrap());
                let pf = purity(&partial_trace(&rho, Subsystem::Field).unwrap());
                prop_assert!((ps - pf).abs() < 1e-8);
            }
        }
    }
}
