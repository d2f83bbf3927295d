//! Trajectory ensembles: density-matrix reconstruction and ensemble averages.
//!
//! Trajectory `i` of an ensemble with base seed `s` is driven by a ChaCha8
//! stream seeded with [`trajectory_seed`]`(s, i)`. Contributions are summed
//! over a binary tree whose shape depends only on the trajectory index range,
//! so every result is bit-identical for any worker count, including the
//! sequential path.

use serde::{Deserialize, Serialize};

use crate::dynamics::{MasterEquation, SimParams, Unraveling};
use crate::error::{Result, SimError};
use crate::exec;
use crate::hilbert::{atom_reduced, DensityMatrix, Subsystem};
use crate::observables::{qubit_entropy, trace_distance};
use crate::C64;
use nalgebra::DMatrix;

pub const DEFAULT_SAMPLE_COUNT: usize = 200;
/// Trajectories summed sequentially at each leaf of the reduction tree.
const LEAF_SIZE: u64 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Execution {
    Sequential,
    /// Rayon's global pool (sequential without the `parallel` feature).
    #[default]
    Parallel,
    /// A dedicated pool with this many workers.
    Threads(usize),
}

/// SplitMix64 output function applied to `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trajectory `index`: `splitmix64(base_seed ^ splitmix64(index))`.
pub fn trajectory_seed(base_seed: u64, index: u64) -> u64 {
    splitmix64(base_seed ^ splitmix64(index))
}

#[derive(Debug, Clone, PartialEq)]
struct Accumulator {
    dim: usize,
    /// Sample-major sums of `|φ⟩⟨φ|`, row-major within each sample.
    density: Vec<C64>,
    entropy: Vec<f64>,
    entropy_sq: Vec<f64>,
    jumps: Vec<f64>,
    jumps_sq: Vec<f64>,
    count: u64,
}

impl Accumulator {
    fn new(samples: usize, dim: usize) -> Self {
        Self {
            dim,
            density: vec![C64::new(0.0, 0.0); samples * dim * dim],
            entropy: vec![0.0; samples],
            entropy_sq: vec![0.0; samples],
            jumps: vec![0.0; samples],
            jumps_sq: vec![0.0; samples],
            count: 0,
        }
    }

    fn observe(&mut self, slot: usize, amps: &[C64], jumps: usize, entropy: f64) {
        let dim = self.dim;
        let block = &mut self.density[slot * dim * dim..(slot + 1) * dim * dim];
        for (r, row) in block.chunks_exact_mut(dim).enumerate() {
            let ar = amps[r];
            for (dst, ac) in row.iter_mut().zip(amps) {
                *dst += ar * ac.conj();
            }
        }
        self.entropy[slot] += entropy;
        self.entropy_sq[slot] += entropy * entropy;
        let j = jumps as f64;
        self.jumps[slot] += j;
        self.jumps_sq[slot] += j * j;
    }

    fn merge(mut self, other: Accumulator) -> Self {
        fn add<T: Copy + std::ops::AddAssign>(a: &mut [T], b: &[T]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        }
        add(&mut self.density, &other.density);
        add(&mut self.entropy, &other.entropy);
        add(&mut self.entropy_sq, &other.entropy_sq);
        add(&mut self.jumps, &other.jumps);
        add(&mut self.jumps_sq, &other.jumps_sq);
        self.count += other.count;
        self
    }
}

struct Job<'a> {
    unraveling: Unraveling,
    indices: &'a [usize],
    base_seed: u64,
    samples: usize,
    dim: usize,
}

impl Job<'_> {
    fn leaf(&self, lo: u64, hi: u64) -> Result<Accumulator> {
        let mut acc = Accumulator::new(self.samples, self.dim);
        let space = self.unraveling.params().space();
        let horizon = self.indices.last().copied().unwrap_or(0);
        for index in lo..hi {
            let seed = trajectory_seed(self.base_seed, index);
            self.unraveling
                .simulate(seed, self.indices, horizon, |slot, amps, jumps| {
                    let entropy = qubit_entropy(atom_reduced(space, amps));
                    acc.observe(slot, amps, jumps, entropy);
                })
                .map_err(|e| SimError::Trajectory {
                    index,
                    source: Box::new(e),
                })?;
            acc.count += 1;
        }
        Ok(acc)
    }

    fn range(&self, lo: u64, hi: u64, parallel: bool) -> Result<Accumulator> {
        if hi - lo <= LEAF_SIZE {
            return self.leaf(lo, hi);
        }
        let mid = lo + (hi - lo) / 2;
        let (left, right) = exec::join(
            parallel,
            || self.range(lo, mid, parallel),
            || self.range(mid, hi, parallel),
        );
        // Left first: the lowest failing trajectory index is reported.
        let left = left?;
        Ok(left.merge(right?))
    }
}

/// Averages over `size` trajectories sampled on a common time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleResult {
    pub params: SimParams,
    pub size: usize,
    pub base_seed: u64,
    /// Sample times after snapping onto the step grid.
    pub sample_times: Vec<f64>,
    pub mean_density: Vec<DensityMatrix>,
    pub mean_entropy: Vec<f64>,
    pub entropy_std_error: Vec<f64>,
    pub mean_jump_count: Vec<f64>,
    pub jump_count_std_error: Vec<f64>,
}

impl EnsembleResult {
    /// Position of `t` on the sample grid (within half a step).
    pub fn time_index(&self, t: f64) -> Result<usize> {
        let half = 0.5 * self.params.dt();
        self.sample_times
            .iter()
            .position(|&s| (s - t).abs() <= half)
            .ok_or(SimError::TimeNotSampled { t })
    }

    pub fn density_at(&self, t: f64) -> Result<&DensityMatrix> {
        Ok(&self.mean_density[self.time_index(t)?])
    }
}

fn mean_and_error(sum: f64, sum_sq: f64, n: usize) -> (f64, f64) {
    let n_f = n as f64;
    let mean = sum / n_f;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = ((sum_sq - n_f * mean * mean) / (n_f - 1.0)).max(0.0);
    (mean, (var / n_f).sqrt())
}

pub fn run_ensemble(params: &SimParams, size: usize, base_seed: u64, sample_times: &[f64]) -> Result<EnsembleResult> {
    run_ensemble_with(params, size, base_seed, sample_times, Execution::default())
}

/// Runs `size` independent trajectories and reconstructs the ensemble density
/// matrix and averages at `sample_times`.
pub fn run_ensemble_with(
    params: &SimParams,
    size: usize,
    base_seed: u64,
    sample_times: &[f64],
    execution: Execution,
) -> Result<EnsembleResult> {
    if size == 0 {
        return Err(SimError::InvalidParams("ensemble size must be at least 1".into()));
    }
    let indices = params.sample_indices(sample_times)?;
    let dim = params.space().joint_dim();
    let job = Job {
        unraveling: Unraveling::new(params),
        indices: &indices,
        base_seed,
        samples: indices.len(),
        dim,
    };
    let acc = exec::install(execution, |parallel| job.range(0, size as u64, parallel))?;
    debug_assert_eq!(acc.count, size as u64);

    let scale = 1.0 / size as f64;
    let mean_density = acc
        .density
        .chunks_exact(dim * dim)
        .map(|block| {
            DensityMatrix::from_raw(
                DMatrix::from_row_slice(dim, dim, block).map(|v| v * scale),
                Subsystem::Joint,
            )
        })
        .collect();
    let (mean_entropy, entropy_std_error) = (0..indices.len())
        .map(|k| mean_and_error(acc.entropy[k], acc.entropy_sq[k], size))
        .unzip();
    let (mean_jump_count, jump_count_std_error) = (0..indices.len())
        .map(|k| mean_and_error(acc.jumps[k], acc.jumps_sq[k], size))
        .unzip();
    Ok(EnsembleResult {
        params: *params,
        size,
        base_seed,
        sample_times: indices.iter().map(|&k| params.time_at(k)).collect(),
        mean_density,
        mean_entropy,
        entropy_std_error,
        mean_jump_count,
        jump_count_std_error,
    })
}

/// Trajectory-averaged atom-field entropy at a sampled time.
pub fn average_entropy(result: &EnsembleResult, t: f64) -> Result<f64> {
    Ok(result.mean_entropy[result.time_index(t)?])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    /// Per sample time, the larger of the entropy and jump-count standard errors.
    pub std_errors: Vec<f64>,
    /// Per sample time, trace distance between the ensemble and reference states.
    pub trace_distances: Vec<f64>,
    pub max_std_error: f64,
    pub max_trace_distance: f64,
}

/// Compares `result` with a fresh master-equation run on the same grid.
pub fn convergence_report(result: &EnsembleResult) -> Result<ConvergenceReport> {
    let oracle = MasterEquation::new(&result.params).evolve(&result.sample_times)?;
    convergence_report_against(result, &oracle)
}

pub fn convergence_report_against(result: &EnsembleResult, reference: &[DensityMatrix]) -> Result<ConvergenceReport> {
    if reference.len() != result.mean_density.len() {
        return Err(SimError::DimensionMismatch {
            expected: result.mean_density.len(),
            found: reference.len(),
        });
    }
    let std_errors: Vec<f64> = result
        .entropy_std_error
        .iter()
        .zip(&result.jump_count_std_error)
        .map(|(a, b)| a.max(*b))
        .collect();
    let trace_distances = result
        .mean_density
        .iter()
        .zip(reference)
        .map(|(a, b)| trace_distance(a, b))
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceReport {
        max_std_error: std_errors.iter().copied().fold(0.0, f64::max),
        max_trace_distance: trace_distances.iter().copied().fold(0.0, f64::max),
        std_errors,
        trace_distances,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{run_trajectory, uniform_sample_times};
    use crate::hilbert::initial_state;

    fn params(gamma: f64) -> SimParams {
        SimParams::builder().drive(gamma / 2.0).gamma(gamma).build().unwrap()
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        assert_eq!(trajectory_seed(42, 0), trajectory_seed(42, 0));
        let seeds: std::collections::HashSet<u64> = (0..1000).map(|i| trajectory_seed(42, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(trajectory_seed(0, 1), trajectory_seed(1, 0));
        // SplitMix64 reference value for input 0.
        assert_eq!(splitmix64(0), 0xE220_A839_7B1D_CDAF);
    }

    #[test]
    fn single_trajectory_ensemble_is_a_projector() {
        let p = params(2.0);
        let times = uniform_sample_times(p.t_final(), 7);
        let ens = run_ensemble(&p, 1, 5, &times).unwrap();
        let rec = run_trajectory(&p, trajectory_seed(5, 0), &times).unwrap();
        for (rho, psi) in ens.mean_density.iter().zip(&rec.states) {
            let expected = psi.to_density();
            assert!((rho.matrix() - expected.matrix()).iter().all(|v| v.norm() < 1e-15));
        }
        assert!(ens.entropy_std_error.iter().all(|&e| e == 0.0));
    }

    #[test]
    fn ensemble_rejects_empty() {
        assert!(run_ensemble(&params(2.0), 0, 1, &[0.0]).is_err());
    }

    #[test]
    fn steady_state_ensemble_is_exact() {
        let p = SimParams::builder().g(0.0).drive(1.0).gamma(2.0).fock_dim(24).build().unwrap();
        let times = uniform_sample_times(p.t_final(), 20);
        let ens = run_ensemble(&p, 40, 9, &times).unwrap();
        let target = initial_state(&p).unwrap().to_density();
        for rho in &ens.mean_density {
            assert!(trace_distance(rho, &target).unwrap() < 1e-8);
        }
        let report = convergence_report(&ens).unwrap();
        assert!(report.max_trace_distance < 1e-8);
    }

    #[test]
    fn entropy_at_start_is_zero_and_unsampled_time_errors() {
        let p = params(2.0);
        let times = uniform_sample_times(p.t_final(), 5);
        let ens = run_ensemble(&p, 20, 3, &times).unwrap();
        assert!(average_entropy(&ens, 0.0).unwrap().abs() < 1e-10);
        assert!(matches!(average_entropy(&ens, 0.3), Err(SimError::TimeNotSampled { .. })));
        for rho in &ens.mean_density {
            assert!(rho.validate(1e-8).is_ok());
        }
        assert!(ens.mean_entropy.iter().all(|e| (0.0..=1.0).contains(e)));
    }

    #[test]
    fn merge_grouping_is_reassociation_only() {
        let p = params(2.0);
        let times = uniform_sample_times(p.t_final(), 4);
        let indices = p.sample_indices(&times).unwrap();
        let job = Job {
            unraveling: Unraveling::new(&p),
            indices: &indices,
            base_seed: 11,
            samples: indices.len(),
            dim: p.space().joint_dim(),
        };
        let flat = job.leaf(0, 48).unwrap();
        let grouped = job.leaf(0, 7).unwrap().merge(job.leaf(7, 30).unwrap().merge(job.leaf(30, 48).unwrap()));
        let other = job.leaf(0, 20).unwrap().merge(job.leaf(20, 31).unwrap()).merge(job.leaf(31, 48).unwrap());
        for acc in [&grouped, &other] {
            assert_eq!(acc.count, flat.count);
            for (a, b) in acc.density.iter().zip(&flat.density) {
                assert!((a - b).norm() <= 1e-12);
            }
            for (a, b) in acc.entropy.iter().zip(&flat.entropy) {
                assert!((a - b).abs() <= 1e-12);
            }
            assert_eq!(acc.jumps, flat.jumps);
        }
    }

    #[test]
    fn results_independent_of_execution_mode() {
        let p = params(2.0);
        let times = uniform_sample_times(p.t_final(), 10);
        let seq = run_ensemble_with(&p, 70, 8, &times, Execution::Sequential).unwrap();
        for exec in [Execution::Parallel, Execution::Threads(1), Execution::Threads(3)] {
            assert_eq!(run_ensemble_with(&p, 70, 8, &times, exec).unwrap(), seq);
        }
    }

    #[test]
    fn failing_trajectory_reports_its_index() {
        let p = SimParams::builder()
            .drive(1.0)
            .gamma(2.0)
            .fock_dim(4)
            .alpha_override(C64::new(0.0, -1e-3))
            .build()
            .unwrap();
        let err = run_ensemble(&p, 40, 1, &[0.0, p.t_final()]).unwrap_err();
        match err {
            SimError::Trajectory { index, source } => {
                assert_eq!(index, 0);
                assert!(source.is_truncation());
            }
            other => panic!("unexpected {other}"),
        }
    }
}
