//! Photodetection unraveling of the driven, damped Jaynes-Cummings master
//! equation.
//!
//! A trajectory is advanced one step at a time with the two Kraus maps
//!
//! * `W0 = I - i H_eff dt` (no photon detected), with `H_eff = H - i (γ/2) a†a`
//! * `W1 = sqrt(γ dt) a` (one photon detected),
//!
//! choosing `W1` with probability `dp1 = γ dt ⟨a†a⟩` and renormalizing after
//! every step. [`MasterEquation`] integrates the Lindblad equation directly
//! with RK4 and serves as the reference the ensemble averages are checked
//! against.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::hilbert::{
    build_operators, initial_state, DensityMatrix, JointState, Operator, SpaceDescriptor,
    Subsystem, TRUNCATION_LIMIT,
};
use crate::C64;

pub const DEFAULT_FOCK_DIM: usize = 16;
/// Upper bound on `dt × max(g, F, γ)`.
pub const MAX_RATE_STEP: f64 = 0.05;
pub const TRACE_DRIFT_LIMIT: f64 = 1e-8;
/// Below this `⟨a†a⟩` a jump is not a valid sample.
pub const ZERO_JUMP_LIMIT: f64 = 1e-14;

const ZERO: C64 = C64::new(0.0, 0.0);

/// Physical and numerical configuration of a run.
///
/// Built through [`SimParamsBuilder`], which fills in defaults and enforces
/// the step-size rule. The step is resolved so that `t_final` is an exact
/// multiple of `dt`; the resolved step never exceeds the requested one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimParams {
    g: f64,
    drive: f64,
    gamma: f64,
    fock_dim: usize,
    dt: f64,
    t_final: f64,
    alpha_override: Option<C64>,
}

impl SimParams {
    pub fn builder() -> SimParamsBuilder {
        SimParamsBuilder::default()
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    /// Drive amplitude `F`.
    pub fn drive(&self) -> f64 {
        self.drive
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn fock_dim(&self) -> usize {
        self.fock_dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    pub fn alpha_override(&self) -> Option<C64> {
        self.alpha_override
    }

    pub fn space(&self) -> SpaceDescriptor {
        SpaceDescriptor::new(self.fock_dim).expect("validated at construction")
    }

    pub fn max_rate(&self) -> f64 {
        self.g.max(self.drive).max(self.gamma)
    }

    /// Initial coherent amplitude: the override, or `2F/(iγ)`.
    pub fn alpha(&self) -> Result<C64> {
        match self.alpha_override {
            Some(alpha) => Ok(alpha),
            None if self.gamma > 0.0 => Ok(C64::new(0.0, -2.0 * self.drive / self.gamma)),
            None => Err(SimError::InvalidParams(
                "gamma = 0 leaves 2F/(i gamma) undefined; supply an alpha override".into(),
            )),
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round() as usize
    }

    /// Time after `k` steps.
    pub fn time_at(&self, k: usize) -> f64 {
        if k == self.n_steps() {
            self.t_final
        } else {
            k as f64 * self.dt
        }
    }

    /// Nearest step index to `t`.
    pub fn step_index(&self, t: f64) -> Result<usize> {
        let slack = 1e-9 * self.t_final.max(1.0);
        if !t.is_finite() || t < -slack || t > self.t_final + slack {
            return Err(SimError::InvalidParams(format!(
                "time {t} outside [0, {}]",
                self.t_final
            )));
        }
        Ok(((t / self.dt).round().max(0.0) as usize).min(self.n_steps()))
    }

    /// Step indices of `times`, which must stay strictly increasing once
    /// snapped to the step grid.
    pub fn sample_indices(&self, times: &[f64]) -> Result<Vec<usize>> {
        let indices = times
            .iter()
            .map(|&t| self.step_index(t))
            .collect::<Result<Vec<_>>>()?;
        if indices.windows(2).any(|w| w[1] <= w[0]) {
            return Err(SimError::InvalidParams(
                "sample times must be strictly increasing and at least one step apart".into(),
            ));
        }
        Ok(indices)
    }

    pub fn to_builder(&self) -> SimParamsBuilder {
        SimParamsBuilder {
            g: Some(self.g),
            drive: Some(self.drive),
            gamma: Some(self.gamma),
            fock_dim: Some(self.fock_dim),
            dt: Some(self.dt),
            t_final: Some(self.t_final),
            alpha_override: self.alpha_override,
        }
    }
}

/// `min(1e-3/g, 1e-2/γ, 1e-2/F)` over the nonzero rates, `1e-3` if all vanish.
pub fn default_dt(g: f64, drive: f64, gamma: f64) -> f64 {
    let dt = [(g, 1e-3), (gamma, 1e-2), (drive, 1e-2)]
        .iter()
        .filter(|(rate, _)| *rate > 0.0)
        .map(|(rate, scale)| scale / rate)
        .fold(f64::INFINITY, f64::min);
    if dt.is_finite() {
        dt
    } else {
        1e-3
    }
}

/// `count` uniformly spaced times covering `[0, t_final]`, endpoints included.
pub fn uniform_sample_times(t_final: f64, count: usize) -> Vec<f64> {
    match count {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..count)
            .map(|k| {
                if k + 1 == count {
                    t_final
                } else {
                    t_final * k as f64 / (count - 1) as f64
                }
            })
            .collect(),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SimParamsBuilder {
    pub g: Option<f64>,
    pub drive: Option<f64>,
    pub gamma: Option<f64>,
    pub fock_dim: Option<usize>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub alpha_override: Option<C64>,
}

impl SimParamsBuilder {
    pub fn g(mut self, g: f64) -> Self {
        self.g = Some(g);
        self
    }

    pub fn drive(mut self, drive: f64) -> Self {
        self.drive = Some(drive);
        self
    }

    pub fn gamma(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }

    pub fn fock_dim(mut self, fock_dim: usize) -> Self {
        self.fock_dim = Some(fock_dim);
        self
    }

    pub fn dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }

    pub fn t_final(mut self, t_final: f64) -> Self {
        self.t_final = Some(t_final);
        self
    }

    pub fn alpha_override(mut self, alpha: C64) -> Self {
        self.alpha_override = Some(alpha);
        self
    }

    pub fn build(self) -> Result<SimParams> {
        let g = self.g.unwrap_or(1.0);
        let drive = self.drive.unwrap_or(0.0);
        let gamma = self.gamma.unwrap_or(0.0);
        for (name, v) in [("g", g), ("F", drive), ("gamma", gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(SimError::InvalidParams(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        let fock_dim = self.fock_dim.unwrap_or(DEFAULT_FOCK_DIM);
        if fock_dim < 2 {
            return Err(SimError::InvalidParams(format!(
                "fock_dim must be at least 2, got {fock_dim}"
            )));
        }
        let requested_dt = self.dt.unwrap_or_else(|| default_dt(g, drive, gamma));
        if !(requested_dt.is_finite() && requested_dt > 0.0) {
            return Err(SimError::InvalidParams(format!(
                "dt must be positive, got {requested_dt}"
            )));
        }
        let t_final = self
            .t_final
            .unwrap_or(if g > 0.0 { PI / g } else { PI });
        if !(t_final.is_finite() && t_final >= 0.0) {
            return Err(SimError::InvalidParams(format!(
                "t_final must be finite and non-negative, got {t_final}"
            )));
        }
        let max_rate = g.max(drive).max(gamma);
        if requested_dt * max_rate > MAX_RATE_STEP * (1.0 + 1e-12) {
            return Err(SimError::InvalidParams(format!(
                "dt: dt x max(g, F, gamma) = {} exceeds {MAX_RATE_STEP}",
                requested_dt * max_rate
            )));
        }
        if let Some(alpha) = self.alpha_override {
            if !(alpha.re.is_finite() && alpha.im.is_finite()) {
                return Err(SimError::InvalidParams("alpha override must be finite".into()));
            }
        }
        let dt = if t_final > 0.0 {
            let n = (t_final / requested_dt - 1e-9).ceil().max(1.0);
            t_final / n
        } else {
            requested_dt
        };
        Ok(SimParams {
            g,
            drive,
            gamma,
            fock_dim,
            dt,
            t_final,
            alpha_override: self.alpha_override,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: JointState,
    pub jumped: bool,
    /// `γ dt ⟨a†a⟩` of the pre-step state.
    pub jump_probability: f64,
}

/// One stochastic trajectory: snapshots at the sample times and every
/// detection time.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<JointState>,
    pub jump_times: Vec<f64>,
    pub jump_count: usize,
    pub seed: u64,
}

/// `g(σ₋a† + σ₊a) + F(a† + a)`.
pub fn build_hamiltonian(params: &SimParams) -> Operator {
    let ops = build_operators(params.space());
    let coupling = ops
        .sigma_minus
        .compose(&ops.a_dag)
        .plus(&ops.sigma_plus.compose(&ops.a))
        .scaled(C64::new(params.g(), 0.0));
    let drive = ops.a_dag.plus(&ops.a).scaled(C64::new(params.drive(), 0.0));
    coupling.plus(&drive)
}

/// `H - i(γ/2) a†a`.
pub fn build_effective_hamiltonian(params: &SimParams) -> Operator {
    let ops = build_operators(params.space());
    build_hamiltonian(params).plus(&ops.number.scaled(C64::new(0.0, -params.gamma() / 2.0)))
}

#[inline]
fn mean_photons(fock_dim: usize, amps: &[C64]) -> f64 {
    amps.iter()
        .enumerate()
        .map(|(k, v)| (k % fock_dim) as f64 * v.norm_sqr())
        .sum()
}

/// Population of the two highest retained Fock levels.
#[inline]
fn edge_population(fock_dim: usize, amps: &[C64]) -> f64 {
    let (g, e) = amps.split_at(fock_dim);
    g[fock_dim - 2..].iter().chain(&e[fock_dim - 2..]).map(|v| v.norm_sqr()).sum()
}

#[inline]
fn lower_into(fock_dim: usize, amps: &[C64], out: &mut [C64]) {
    for (src, dst) in amps.chunks_exact(fock_dim).zip(out.chunks_exact_mut(fock_dim)) {
        for n in 1..fock_dim {
            dst[n - 1] = src[n] * (n as f64).sqrt();
        }
        dst[fock_dim - 1] = ZERO;
    }
}

#[inline]
fn norm_sqr(amps: &[C64]) -> f64 {
    amps.iter().map(|v| v.norm_sqr()).sum()
}

#[inline]
fn rescale(amps: &mut [C64], factor: f64) {
    amps.iter_mut().for_each(|v| *v *= factor);
}

fn check_edge(fock_dim: usize, amps: &[C64]) -> Result<()> {
    let weight = edge_population(fock_dim, amps);
    if weight > TRUNCATION_LIMIT || !weight.is_finite() {
        return Err(SimError::Truncation {
            weight,
            limit: TRUNCATION_LIMIT,
            fock_dim,
        });
    }
    Ok(())
}

/// Kraus-step machinery for one parameter set.
#[derive(Debug, Clone)]
pub struct Unraveling {
    params: SimParams,
    heff: Operator,
    /// `√n` for `n = 0..=fock_dim`.
    sqrt_n: Vec<f64>,
}

impl Unraveling {
    pub fn new(params: &SimParams) -> Self {
        Self {
            params: *params,
            heff: build_effective_hamiltonian(params),
            sqrt_n: (0..=params.fock_dim()).map(|n| (n as f64).sqrt()).collect(),
        }
    }

    pub fn params(&self) -> &SimParams {
        &self.params
    }

    pub fn effective_hamiltonian(&self) -> &Operator {
        &self.heff
    }

    /// `out = (1 - i dt H_eff) amps`, written out on the Fock ladder.
    #[inline]
    fn w0_into(&self, amps: &[C64], out: &mut [C64]) {
        let d = self.params.fock_dim();
        let (g, f) = (self.params.g(), self.params.drive());
        let half_gamma = 0.5 * self.params.gamma();
        let dt = self.params.dt();
        let sq = &self.sqrt_n[..=d];
        let (ground, excited) = amps.split_at(d);
        let (out_g, out_e) = out.split_at_mut(d);
        for n in 0..d {
            let lower = |block: &[C64]| if n + 1 < d { block[n + 1] * sq[n + 1] } else { ZERO };
            let raise = |block: &[C64]| if n > 0 { block[n - 1] * sq[n] } else { ZERO };
            let (dg, de) = (lower(ground), lower(excited));
            let (rg, re) = (raise(ground), raise(excited));
            let damp = half_gamma * n as f64;
            let h_g = (dg + rg) * f + re * g;
            let h_e = (de + re) * f + dg * g;
            // ψ - i dt (h - i damp ψ) = ψ (1 - dt damp) - i dt h
            out_g[n] = ground[n] * (1.0 - dt * damp) + C64::new(h_g.im, -h_g.re) * dt;
            out_e[n] = excited[n] * (1.0 - dt * damp) + C64::new(h_e.im, -h_e.re) * dt;
        }
    }

    /// `γ dt ⟨a†a⟩`.
    pub fn jump_probability(&self, state: &JointState) -> f64 {
        self.params.gamma() * self.params.dt() * mean_photons(self.params.fock_dim(), state.as_slice())
    }

    /// `W0 |φ⟩` (unnormalized) and `dp0 = ⟨φ|W0†W0|φ⟩`.
    pub fn no_jump_step(&self, state: &JointState) -> (DVector<C64>, f64) {
        let mut out = vec![ZERO; state.as_slice().len()];
        self.w0_into(state.as_slice(), &mut out);
        let dp0 = norm_sqr(&out);
        (DVector::from_vec(out), dp0)
    }

    /// `W1 |φ⟩` (unnormalized) and `dp1 = γ dt ⟨a†a⟩`.
    pub fn jump_step(&self, state: &JointState) -> Result<(DVector<C64>, f64)> {
        let d = self.params.fock_dim();
        let photons = mean_photons(d, state.as_slice());
        if photons < ZERO_JUMP_LIMIT {
            return Err(SimError::ZeroNormJump {
                mean_photons: photons,
            });
        }
        let mut out = vec![ZERO; state.as_slice().len()];
        lower_into(d, state.as_slice(), &mut out);
        let scale = (self.params.gamma() * self.params.dt()).sqrt();
        rescale(&mut out, scale);
        Ok((DVector::from_vec(out), self.params.gamma() * self.params.dt() * photons))
    }

    /// Advances `psi` by one step using the uniform draw `u`, leaving the
    /// normalized result in `psi`. Returns whether a photon was detected and
    /// the pre-step jump probability.
    #[inline]
    fn advance(&self, psi: &mut Vec<C64>, scratch: &mut Vec<C64>, u: f64) -> Result<(bool, f64)> {
        let d = self.params.fock_dim();
        let photons = mean_photons(d, psi);
        let dp1 = self.params.gamma() * self.params.dt() * photons;
        let jumped = u < dp1;
        if jumped {
            if photons < ZERO_JUMP_LIMIT {
                return Err(SimError::ZeroNormJump {
                    mean_photons: photons,
                });
            }
            lower_into(d, psi, scratch);
        } else {
            self.w0_into(psi, scratch);
        }
        let n2 = norm_sqr(scratch);
        rescale(scratch, 1.0 / n2.sqrt());
        std::mem::swap(psi, scratch);
        check_edge(d, psi)?;
        Ok((jumped, dp1))
    }

    /// One stochastic step with a single uniform draw from `rng`.
    pub fn sample_step<R: Rng + ?Sized>(&self, state: &JointState, rng: &mut R) -> Result<StepOutcome> {
        let mut psi = state.as_slice().to_vec();
        let mut scratch = vec![ZERO; psi.len()];
        let u: f64 = rng.random();
        let (jumped, jump_probability) = self.advance(&mut psi, &mut scratch, u)?;
        Ok(StepOutcome {
            state: JointState::from_normalized(state.space(), DVector::from_vec(psi)),
            jumped,
            jump_probability,
        })
    }

    /// Runs one trajectory for `horizon` steps from the initial state, calling
    /// `observe(slot, amplitudes, jumps_so_far)` whenever the step index equals
    /// `sample_indices[slot]`. Returns the detection times.
    pub(crate) fn simulate<F>(
        &self,
        seed: u64,
        sample_indices: &[usize],
        horizon: usize,
        mut observe: F,
    ) -> Result<Vec<f64>>
    where
        F: FnMut(usize, &[C64], usize),
    {
        let mut psi = initial_state(&self.params)?.as_slice().to_vec();
        let mut scratch = vec![ZERO; psi.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut jumps = Vec::new();
        let mut slot = 0;
        for k in 0..=horizon {
            while slot < sample_indices.len() && sample_indices[slot] == k {
                observe(slot, &psi, jumps.len());
                slot += 1;
            }
            if k == horizon {
                break;
            }
            let u: f64 = rng.random();
            let (jumped, _) = self.advance(&mut psi, &mut scratch, u)?;
            if jumped {
                jumps.push(self.params.time_at(k + 1));
            }
        }
        Ok(jumps)
    }

    pub fn run_trajectory(&self, seed: u64, sample_times: &[f64]) -> Result<TrajectoryRecord> {
        let indices = self.params.sample_indices(sample_times)?;
        let space = self.params.space();
        let mut states = Vec::with_capacity(indices.len());
        let jump_times = self.simulate(seed, &indices, self.params.n_steps(), |_, amps, _| {
            states.push(JointState::from_normalized(
                space,
                DVector::from_column_slice(amps),
            ));
        })?;
        Ok(TrajectoryRecord {
            times: indices.iter().map(|&k| self.params.time_at(k)).collect(),
            states,
            jump_count: jump_times.len(),
            jump_times,
            seed,
        })
    }

    /// Deterministic evolution under repeated `W0`, normalized every step.
    pub fn no_jump_path(&self, sample_times: &[f64]) -> Result<NoJumpPath> {
        let indices = self.params.sample_indices(sample_times)?;
        let d = self.params.fock_dim();
        let space = self.params.space();
        let mut psi = initial_state(&self.params)?.as_slice().to_vec();
        let mut scratch = vec![ZERO; psi.len()];
        let mut survival = 1.0;
        let mut path = NoJumpPath::default();
        let horizon = indices.last().copied().unwrap_or(0);
        let mut slot = 0;
        for k in 0..=horizon {
            while slot < indices.len() && indices[slot] == k {
                path.times.push(self.params.time_at(k));
                path.states
                    .push(JointState::from_normalized(space, DVector::from_column_slice(&psi)));
                path.survival.push(survival);
                slot += 1;
            }
            if k == horizon {
                break;
            }
            self.w0_into(&psi, &mut scratch);
            let dp0 = norm_sqr(&scratch);
            survival *= dp0;
            rescale(&mut scratch, 1.0 / dp0.sqrt());
            std::mem::swap(&mut psi, &mut scratch);
            check_edge(d, &psi)?;
        }
        Ok(path)
    }
}

/// Samples of the no-jump trajectory.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NoJumpPath {
    pub times: Vec<f64>,
    pub states: Vec<JointState>,
    /// Accumulated product of the per-step no-jump probabilities.
    pub survival: Vec<f64>,
}

pub fn no_jump_step(state: &JointState, params: &SimParams) -> (DVector<C64>, f64) {
    Unraveling::new(params).no_jump_step(state)
}

pub fn jump_step(state: &JointState, params: &SimParams) -> Result<(DVector<C64>, f64)> {
    Unraveling::new(params).jump_step(state)
}

pub fn sample_step<R: Rng + ?Sized>(
    state: &JointState,
    params: &SimParams,
    rng: &mut R,
) -> Result<StepOutcome> {
    Unraveling::new(params).sample_step(state, rng)
}

/// Iterates stochastic steps from the initial state, recording normalized
/// snapshots at `sample_times` (snapped to the step grid) and every jump up to
/// `t_final`. Bit-reproducible for a fixed `seed`.
pub fn run_trajectory(params: &SimParams, seed: u64, sample_times: &[f64]) -> Result<TrajectoryRecord> {
    Unraveling::new(params).run_trajectory(seed, sample_times)
}

/// State of the trajectory in which no photon is detected up to `t`.
pub fn no_jump_trajectory(params: &SimParams, t: f64) -> Result<JointState> {
    let mut path = Unraveling::new(params).no_jump_path(&[t])?;
    Ok(path.states.pop().expect("one sample requested"))
}

/// RK4 integrator of `ρ' = -i(H_eff ρ - ρ H_eff†) + γ a ρ a†`.
#[derive(Debug, Clone)]
pub struct MasterEquation {
    params: SimParams,
    heff: Vec<(usize, usize, C64)>,
    lower: Vec<(usize, usize, C64)>,
}

impl MasterEquation {
    pub fn new(params: &SimParams) -> Self {
        let ops = build_operators(params.space());
        Self {
            params: *params,
            heff: build_effective_hamiltonian(params).nonzeros().to_vec(),
            lower: ops.a.nonzeros().to_vec(),
        }
    }

    /// Writes the Lindblad generator applied to the row-major `rho` into `out`.
    fn rhs(&self, rho: &[C64], out: &mut [C64], work: &mut [C64], work2: &mut [C64]) {
        let dim = 2 * self.params.fock_dim();
        // work = H_eff ρ
        work.iter_mut().for_each(|v| *v = ZERO);
        for &(r, c, v) in &self.heff {
            let src = &rho[c * dim..(c + 1) * dim];
            let dst = &mut work[r * dim..(r + 1) * dim];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += v * s;
            }
        }
        // ρ H_eff† = (H_eff ρ)† for Hermitian ρ
        let minus_i = C64::new(0.0, -1.0);
        for i in 0..dim {
            for j in 0..dim {
                out[i * dim + j] = minus_i * (work[i * dim + j] - work[j * dim + i].conj());
            }
        }
        let gamma = self.params.gamma();
        if gamma == 0.0 {
            return;
        }
        // work2 = a ρ, then out += γ (a ρ) a†
        work2.iter_mut().for_each(|v| *v = ZERO);
        for &(r, c, v) in &self.lower {
            let src = &rho[c * dim..(c + 1) * dim];
            let dst = &mut work2[r * dim..(r + 1) * dim];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += v * s;
            }
        }
        for &(r, c, v) in &self.lower {
            let w = gamma * v.conj();
            for i in 0..dim {
                out[i * dim + r] += w * work2[i * dim + c];
            }
        }
    }

    fn check(&self, rho: &[C64]) -> Result<()> {
        let dim = 2 * self.params.fock_dim();
        let d = self.params.fock_dim();
        let trace: f64 = (0..dim).map(|i| rho[i * dim + i].re).sum();
        if (trace - 1.0).abs() > TRACE_DRIFT_LIMIT || !trace.is_finite() {
            return Err(SimError::TraceDrift {
                trace,
                limit: TRACE_DRIFT_LIMIT,
            });
        }
        let edge: f64 = [d - 2, d - 1, 2 * d - 2, 2 * d - 1]
            .iter()
            .map(|&k| rho[k * dim + k].re)
            .sum();
        if edge > TRUNCATION_LIMIT {
            return Err(SimError::Truncation {
                weight: edge,
                limit: TRUNCATION_LIMIT,
                fock_dim: d,
            });
        }
        Ok(())
    }

    /// Joint density matrices at `sample_times` (snapped to the step grid).
    pub fn evolve(&self, sample_times: &[f64]) -> Result<Vec<DensityMatrix>> {
        let indices = self.params.sample_indices(sample_times)?;
        let dim = 2 * self.params.fock_dim();
        let psi = initial_state(&self.params)?;
        let amps = psi.as_slice();
        let mut rho: Vec<C64> = (0..dim * dim)
            .map(|k| amps[k / dim] * amps[k % dim].conj())
            .collect();
        let n = dim * dim;
        let (mut k1, mut k2, mut k3, mut k4) = (vec![ZERO; n], vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]);
        let (mut tmp, mut w1, mut w2) = (vec![ZERO; n], vec![ZERO; n], vec![ZERO; n]);
        let dt = self.params.dt();
        let horizon = indices.last().copied().unwrap_or(0);
        let mut out = Vec::with_capacity(indices.len());
        let mut slot = 0;
        for k in 0..=horizon {
            while slot < indices.len() && indices[slot] == k {
                self.check(&rho)?;
                let m = DMatrix::from_row_slice(dim, dim, &rho);
                out.push(DensityMatrix::from_raw(m, Subsystem::Joint));
                slot += 1;
            }
            if k == horizon {
                break;
            }
            self.rhs(&rho, &mut k1, &mut w1, &mut w2);
            axpy_into(&rho, &k1, 0.5 * dt, &mut tmp);
            self.rhs(&tmp, &mut k2, &mut w1, &mut w2);
            axpy_into(&rho, &k2, 0.5 * dt, &mut tmp);
            self.rhs(&tmp, &mut k3, &mut w1, &mut w2);
            axpy_into(&rho, &k3, dt, &mut tmp);
            self.rhs(&tmp, &mut k4, &mut w1, &mut w2);
            for i in 0..n {
                rho[i] += (k1[i] + (k2[i] + k3[i]) * 2.0 + k4[i]) * (dt / 6.0);
            }
            hermitize(&mut rho, dim);
            if k % 64 == 63 {
                self.check(&rho)?;
            }
        }
        Ok(out)
    }
}

// The generator above is only valid on Hermitian input; roundoff in the
// anti-Hermitian part would otherwise grow like exp(γ Δn t / 2).
fn hermitize(rho: &mut [C64], dim: usize) {
    for i in 0..dim {
        rho[i * dim + i].im = 0.0;
        for j in i + 1..dim {
            let avg = (rho[i * dim + j] + rho[j * dim + i].conj()) * 0.5;
            rho[i * dim + j] = avg;
            rho[j * dim + i] = avg.conj();
        }
    }
}

fn axpy_into(x: &[C64], y: &[C64], a: f64, out: &mut [C64]) {
    for ((o, x), y) in out.iter_mut().zip(x).zip(y) {
        *o = x + y * a;
    }
}

/// Density matrix at time `t` from the master equation.
pub fn master_equation_evolve(params: &SimParams, t: f64) -> Result<DensityMatrix> {
    let mut v = MasterEquation::new(params).evolve(&[t])?;
    Ok(v.pop().expect("one sample requested"))
}
