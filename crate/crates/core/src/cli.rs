//! Experiment presets, configuration resolution and CSV/JSON output.
//!
//! Every output document starts with the fully resolved configuration, so a
//! file can be regenerated from its own header. CSV documents carry it as a
//! `#`-prefixed JSON line followed by the column header; JSON documents carry
//! it under `"config"`.

use std::f64::consts::{FRAC_PI_4, PI};
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::dynamics::{uniform_sample_times, SimParams, Unraveling};
use crate::ensemble::{run_ensemble_with, EnsembleResult, Execution, DEFAULT_SAMPLE_COUNT};
use crate::error::SimError;
use crate::hilbert::{partial_trace, Subsystem};
use crate::observables::{
    bloch_of_state, bloch_vector, coherent_fidelity, entanglement_entropy, jump_count,
    leaked_information_with, purity, MIN_LEAK_ENSEMBLE,
};

pub const DEFAULT_GAMMAS: [f64; 5] = [0.02, 0.2, 2.0, 20.0, 200.0];
pub const DEFAULT_TRAJECTORIES: usize = 10_000;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_G_HZ: f64 = 10_000.0;
/// Seed of the single fig5 trajectory; it records six detections over one cycle.
pub const FIG5_SEED: u64 = 7;
const FIG5_GAMMA: f64 = 2.0;
const FIG5_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Fig1,
    Fig2,
    Fig3,
    Fig4,
    Fig5,
    Fig6,
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

/// User-facing request; unset fields take preset defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub preset: Preset,
    pub gamma_list: Option<Vec<f64>>,
    /// Drive amplitude; `γ/2` per rate when unset.
    pub drive: Option<f64>,
    pub trajectories: Option<usize>,
    pub seed: Option<u64>,
    pub fock_dim: Option<usize>,
    pub dt: Option<f64>,
    pub t_final: Option<f64>,
    pub t_star: Option<f64>,
    pub output_path: Option<PathBuf>,
    pub format: OutputFormat,
    pub g_hz: Option<f64>,
}

impl ExperimentConfig {
    pub fn new(preset: Preset) -> Self {
        Self {
            preset,
            gamma_list: None,
            drive: None,
            trajectories: None,
            seed: None,
            fock_dim: None,
            dt: None,
            t_final: None,
            t_star: None,
            output_path: None,
            format: OutputFormat::Csv,
            g_hz: None,
        }
    }
}

/// Parameters of one rate in the sweep, after defaults and step resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub gamma: f64,
    pub drive: f64,
    pub dt: f64,
    pub t_final: f64,
    pub fock_dim: usize,
}

impl RunSpec {
    fn params(&self) -> Result<SimParams, SimError> {
        SimParams::builder()
            .g(1.0)
            .drive(self.drive)
            .gamma(self.gamma)
            .fock_dim(self.fock_dim)
            .dt(self.dt)
            .t_final(self.t_final)
            .build()
    }
}

/// Everything needed to reproduce an output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub preset: Preset,
    pub gamma_list: Vec<f64>,
    pub drive_rule: String,
    pub trajectories: usize,
    pub seed: u64,
    pub fock_dim: usize,
    pub t_final: f64,
    pub t_star: Option<f64>,
    pub samples: usize,
    pub format: OutputFormat,
    pub g_hz: Option<f64>,
    pub runs: Vec<RunSpec>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical guard tripped at gamma = {gamma}: {source}")]
    Numerical { gamma: f64, source: SimError },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed document: {0}")]
    Document(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical { .. } => 3,
            CliError::Io(_) | CliError::Document(_) => 1,
        }
    }

    fn from_sim(gamma: f64, err: SimError) -> Self {
        match err.root() {
            SimError::InvalidParams(msg) => CliError::Config(format!("gamma = {gamma}: {msg}")),
            _ => CliError::Numerical { gamma, source: err },
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

/// Applies preset defaults and validates every field.
pub fn resolve(config: &ExperimentConfig) -> Result<ResolvedConfig, CliError> {
    let preset = config.preset;
    let gamma_list = match (&config.gamma_list, preset) {
        (Some(list), _) if list.is_empty() => return Err(config_err("gamma: list is empty")),
        (Some(list), _) => list.clone(),
        (None, Preset::Custom) => return Err(config_err("gamma: missing gamma (required for custom runs)")),
        (None, Preset::Fig5) => vec![FIG5_GAMMA],
        (None, _) => DEFAULT_GAMMAS.to_vec(),
    };
    for &gamma in &gamma_list {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(config_err(format!("gamma: values must be positive and finite, got {gamma}")));
        }
    }
    if let Some(f) = config.drive {
        if !(f.is_finite() && f >= 0.0) {
            return Err(config_err(format!("F: must be non-negative and finite, got {f}")));
        }
    }
    let trajectories = match preset {
        Preset::Fig5 => 1,
        _ => config.trajectories.unwrap_or(DEFAULT_TRAJECTORIES),
    };
    if trajectories == 0 {
        return Err(config_err("trajectories: must be at least 1"));
    }
    if preset == Preset::Fig6 && trajectories < MIN_LEAK_ENSEMBLE {
        return Err(config_err(format!(
            "trajectories: fig6 needs at least {MIN_LEAK_ENSEMBLE}, got {trajectories}"
        )));
    }
    let seed = config.seed.unwrap_or(match preset {
        Preset::Fig5 => FIG5_SEED,
        _ => DEFAULT_SEED,
    });
    let fock_dim = config.fock_dim.unwrap_or(crate::dynamics::DEFAULT_FOCK_DIM);
    if fock_dim < 2 {
        return Err(config_err(format!("fock-dim: must be at least 2, got {fock_dim}")));
    }
    let t_final = config.t_final.unwrap_or(PI);
    if !(t_final.is_finite() && t_final > 0.0) {
        return Err(config_err(format!("t-final: must be positive, got {t_final}")));
    }
    let t_star = match (config.t_star, preset) {
        (Some(t), _) => Some(t),
        (None, Preset::Fig6) => Some(FRAC_PI_4),
        (None, _) => None,
    };
    if let Some(t) = t_star {
        if !(t > 0.0 && t <= t_final) {
            return Err(config_err(format!("t-star: must lie in (0, {t_final}], got {t}")));
        }
    }
    if let Some(hz) = config.g_hz {
        if !(hz.is_finite() && hz > 0.0) {
            return Err(config_err(format!("g-hz: must be positive, got {hz}")));
        }
    }
    let samples = match preset {
        Preset::Fig5 => FIG5_SAMPLES,
        _ => DEFAULT_SAMPLE_COUNT,
    };

    let mut runs = Vec::with_capacity(gamma_list.len());
    for &gamma in &gamma_list {
        let drive = config.drive.unwrap_or(gamma / 2.0);
        let mut builder = SimParams::builder()
            .g(1.0)
            .drive(drive)
            .gamma(gamma)
            .fock_dim(fock_dim)
            .t_final(t_final);
        if let Some(dt) = config.dt {
            builder = builder.dt(dt);
        }
        let params = builder
            .build()
            .map_err(|e| config_err(format!("gamma = {gamma}: {}", e.root())))?;
        params
            .sample_indices(&uniform_sample_times(t_final, samples))
            .map_err(|e| config_err(format!("dt: gamma = {gamma}: {}", e.root())))?;
        runs.push(RunSpec {
            gamma,
            drive,
            dt: params.dt(),
            t_final,
            fock_dim,
        });
    }

    Ok(ResolvedConfig {
        preset,
        gamma_list,
        drive_rule: match config.drive {
            Some(f) => format!("F = {f}"),
            None => "F = gamma/2".into(),
        },
        trajectories,
        seed,
        fock_dim,
        t_final,
        t_star,
        samples,
        format: config.format,
        g_hz: config.g_hz,
        runs,
    })
}

/// Canonical JSON of the resolved configuration.
pub fn validate_and_echo(config: &ExperimentConfig) -> Result<String, CliError> {
    let resolved = resolve(config)?;
    Ok(serde_json::to_string(&resolved).expect("config serializes"))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(&'static str),
    Empty,
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Num(v) => format!("{v}"),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => (*s).to_string(),
            Cell::Empty => String::new(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(v) => json!(v),
            Cell::Int(v) => json!(v),
            Cell::Text(s) => json!(s),
            Cell::Empty => Value::Null,
        }
    }
}

/// Data section of an output document.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
    /// Detection times of single-trajectory runs, keyed by rate.
    pub jump_times: Vec<(f64, Vec<f64>)>,
}

impl Table {
    fn new(columns: &[&'static str], g_hz: Option<f64>) -> Self {
        let mut columns = columns.to_vec();
        if g_hz.is_some() {
            columns.push("t_seconds");
        }
        Self {
            columns,
            ..Self::default()
        }
    }

    fn push(&mut self, mut row: Vec<Cell>, t: Option<f64>, g_hz: Option<f64>) {
        if let Some(hz) = g_hz {
            row.push(t.map_or(Cell::Empty, |t| Cell::Num(t / hz)));
        }
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.columns.iter().position(|c| *c == name)?;
        Some(
            self.rows
                .iter()
                .filter_map(|r| match r[k] {
                    Cell::Num(v) => Some(v),
                    Cell::Int(v) => Some(v as f64),
                    _ => None,
                })
                .collect(),
        )
    }
}

/// Runs the resolved experiment. `progress(k, total, gamma)` is called before each rate.
pub fn run_resolved(
    resolved: &ResolvedConfig,
    execution: Execution,
    mut progress: impl FnMut(usize, usize, f64),
) -> Result<Table, CliError> {
    use Cell::{Int, Num};
    let g_hz = resolved.g_hz;
    let times = uniform_sample_times(resolved.t_final, resolved.samples);
    let ensemble = |params: &SimParams| -> Result<EnsembleResult, CliError> {
        run_ensemble_with(params, resolved.trajectories, resolved.seed, &times, execution)
            .map_err(|e| CliError::from_sim(params.gamma(), e))
    };
    let single = resolved.preset == Preset::Fig5
        || (resolved.preset == Preset::Custom && resolved.trajectories == 1);

    let mut table = match resolved.preset {
        Preset::Fig1 => Table::new(&["gamma", "t", "delta", "delta_s", "delta_f", "F_c"], g_hz),
        Preset::Fig2 | Preset::Fig4 => Table::new(&["gamma", "t", "x", "y", "z"], g_hz),
        Preset::Fig3 => Table::new(&["gamma", "t", "mean_entropy", "entropy_se"], g_hz),
        Preset::Fig5 => Table::new(&["gamma", "t", "entropy", "jump_count"], g_hz),
        Preset::Fig6 => Table::new(
            &[
                "gamma",
                "t_star",
                "entropy_before",
                "entropy_after",
                "delta_e",
                "mean_jump_count",
                "jump_count_se",
                "e_leak",
            ],
            g_hz,
        ),
        Preset::Custom if single => Table::new(
            &["gamma", "record", "t", "entropy", "jump_count", "x", "y", "z"],
            g_hz,
        ),
        Preset::Custom => Table::new(
            &[
                "gamma",
                "t",
                "delta",
                "delta_s",
                "delta_f",
                "F_c",
                "x",
                "y",
                "z",
                "mean_entropy",
                "mean_jump_count",
            ],
            g_hz,
        ),
    };

    let total = resolved.runs.len();
    for (k, run) in resolved.runs.iter().enumerate() {
        progress(k, total, run.gamma);
        let gamma = run.gamma;
        let params = run.params().map_err(|e| CliError::from_sim(gamma, e))?;
        let sim = |e| CliError::from_sim(gamma, e);
        match resolved.preset {
            Preset::Fig1 | Preset::Fig2 | Preset::Fig3 => {
                let ens = ensemble(&params)?;
                let alpha = params.alpha().map_err(sim)?;
                for (i, &t) in ens.sample_times.iter().enumerate() {
                    let row = match resolved.preset {
                        Preset::Fig1 => {
                            let rho = &ens.mean_density[i];
                            let rho_s = partial_trace(rho, Subsystem::Atom).map_err(sim)?;
                            let rho_f = partial_trace(rho, Subsystem::Field).map_err(sim)?;
                            let fid = coherent_fidelity(&rho_f, alpha).map_err(sim)?;
                            vec![Num(gamma), Num(t), Num(purity(rho)), Num(purity(&rho_s)), Num(purity(&rho_f)), Num(fid)]
                        }
                        Preset::Fig2 => {
                            let rho_s = partial_trace(&ens.mean_density[i], Subsystem::Atom).map_err(sim)?;
                            let b = bloch_vector(&rho_s);
                            vec![Num(gamma), Num(t), Num(b.x), Num(b.y), Num(b.z)]
                        }
                        _ => vec![Num(gamma), Num(t), Num(ens.mean_entropy[i]), Num(ens.entropy_std_error[i])],
                    };
                    table.push(row, Some(t), g_hz);
                }
            }
            Preset::Fig4 => {
                let path = Unraveling::new(&params).no_jump_path(&times).map_err(sim)?;
                for (t, state) in path.times.iter().zip(&path.states) {
                    let b = bloch_of_state(state);
                    table.push(vec![Num(gamma), Num(*t), Num(b.x), Num(b.y), Num(b.z)], Some(*t), g_hz);
                }
            }
            Preset::Fig5 => {
                let rec = Unraveling::new(&params).run_trajectory(resolved.seed, &times).map_err(sim)?;
                for (t, state) in rec.times.iter().zip(&rec.states) {
                    let count = jump_count(&rec, *t) as u64;
                    table.push(
                        vec![Num(gamma), Num(*t), Num(entanglement_entropy(state)), Int(count)],
                        Some(*t),
                        g_hz,
                    );
                }
                table.jump_times.push((gamma, rec.jump_times));
            }
            Preset::Fig6 => {
                let t_star = resolved.t_star.expect("fig6 resolves t_star");
                let la = leaked_information_with(&params, t_star, resolved.trajectories, resolved.seed, execution)
                    .map_err(sim)?;
                table.push(
                    vec![
                        Num(gamma),
                        Num(t_star),
                        Num(la.entropy_before),
                        Num(la.entropy_after),
                        Num(la.delta_e),
                        Num(la.mean_jump_count),
                        Num(la.jump_count_std_error),
                        Num(la.e_leak),
                    ],
                    Some(t_star),
                    g_hz,
                );
            }
            Preset::Custom if single => {
                let rec = Unraveling::new(&params).run_trajectory(resolved.seed, &times).map_err(sim)?;
                for (t, state) in rec.times.iter().zip(&rec.states) {
                    let b = bloch_of_state(state);
                    table.push(
                        vec![
                            Num(gamma),
                            Cell::Text("sample"),
                            Num(*t),
                            Num(entanglement_entropy(state)),
                            Int(jump_count(&rec, *t) as u64),
                            Num(b.x),
                            Num(b.y),
                            Num(b.z),
                        ],
                        Some(*t),
                        g_hz,
                    );
                }
                for (k, &t) in rec.jump_times.iter().enumerate() {
                    table.push(
                        vec![
                            Num(gamma),
                            Cell::Text("jump"),
                            Num(t),
                            Cell::Empty,
                            Int(k as u64 + 1),
                            Cell::Empty,
                            Cell::Empty,
                            Cell::Empty,
                        ],
                        Some(t),
                        g_hz,
                    );
                }
                table.jump_times.push((gamma, rec.jump_times));
            }
            Preset::Custom => {
                let ens = ensemble(&params)?;
                let alpha = params.alpha().map_err(sim)?;
                for (i, &t) in ens.sample_times.iter().enumerate() {
                    let rho = &ens.mean_density[i];
                    let rho_s = partial_trace(rho, Subsystem::Atom).map_err(sim)?;
                    let rho_f = partial_trace(rho, Subsystem::Field).map_err(sim)?;
                    let b = bloch_vector(&rho_s);
                    table.push(
                        vec![
                            Num(gamma),
                            Num(t),
                            Num(purity(rho)),
                            Num(purity(&rho_s)),
                            Num(purity(&rho_f)),
                            Num(coherent_fidelity(&rho_f, alpha).map_err(sim)?),
                            Num(b.x),
                            Num(b.y),
                            Num(b.z),
                            Num(ens.mean_entropy[i]),
                            Num(ens.mean_jump_count[i]),
                        ],
                        Some(t),
                        g_hz,
                    );
                }
            }
        }
    }
    Ok(table)
}

/// Serializes header and data in the requested format.
pub fn render(resolved: &ResolvedConfig, table: &Table) -> String {
    let header = serde_json::to_string(resolved).expect("config serializes");
    match resolved.format {
        OutputFormat::Csv => {
            let mut out = String::new();
            writeln!(out, "#{header}").unwrap();
            writeln!(out, "{}", table.columns.join(",")).unwrap();
            for row in &table.rows {
                let line: Vec<String> = row.iter().map(Cell::csv).collect();
                writeln!(out, "{}", line.join(",")).unwrap();
            }
            out
        }
        OutputFormat::Json => {
            let rows: Vec<Value> = table
                .rows
                .iter()
                .map(|r| Value::Array(r.iter().map(Cell::json).collect()))
                .collect();
            let jumps: Vec<Value> = table
                .jump_times
                .iter()
                .map(|(g, t)| json!({ "gamma": g, "times": t }))
                .collect();
            let doc = json!({
                "config": serde_json::from_str::<Value>(&header).expect("valid json"),
                "columns": table.columns,
                "rows": rows,
                "jump_times": jumps,
            });
            let mut s = serde_json::to_string_pretty(&doc).expect("document serializes");
            s.push('\n');
            s
        }
    }
}

/// Splits a rendered document into its configuration and data section.
pub fn split_document(doc: &str) -> Result<(ResolvedConfig, String), CliError> {
    let bad = |e: &dyn std::fmt::Display| CliError::Document(e.to_string());
    if let Some(rest) = doc.strip_prefix('#') {
        let (header, data) = rest.split_once('\n').ok_or_else(|| bad(&"missing data section"))?;
        let config = serde_json::from_str(header).map_err(|e| bad(&e))?;
        Ok((config, data.to_string()))
    } else {
        let mut value: Value = serde_json::from_str(doc).map_err(|e| bad(&e))?;
        let config = value
            .as_object_mut()
            .and_then(|o| o.remove("config"))
            .ok_or_else(|| bad(&"missing config"))?;
        let config = serde_json::from_value(config).map_err(|e| bad(&e))?;
        Ok((config, value.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn custom_without_gamma_names_the_field() {
        let err = resolve(&ExperimentConfig::new(Preset::Custom)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("gamma"), "{err}");
    }

    #[test]
    fn fig3_echoes_default_sweep() {
        let echo = validate_and_echo(&ExperimentConfig::new(Preset::Fig3)).unwrap();
        let resolved: ResolvedConfig = serde_json::from_str(&echo).unwrap();
        assert_eq!(resolved.gamma_list, DEFAULT_GAMMAS.to_vec());
        assert_eq!(resolved.drive_rule, "F = gamma/2");
        for run in &resolved.runs {
            assert_eq!(run.drive, run.gamma / 2.0);
            assert!(run.dt * run.gamma <= 0.05 + 1e-12);
        }
        assert_eq!(resolved.trajectories, DEFAULT_TRAJECTORIES);
        assert_eq!(resolved.samples, DEFAULT_SAMPLE_COUNT);
    }

    #[test]
    fn coarse_step_is_rejected() {
        let mut cfg = ExperimentConfig::new(Preset::Custom);
        cfg.gamma_list = Some(vec![200.0]);
        cfg.dt = Some(0.5);
        let err = resolve(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("dt"), "{err}");
    }

    #[test]
    fn invalid_fields_are_config_errors() {
        let mut cfg = ExperimentConfig::new(Preset::Fig6);
        cfg.trajectories = Some(10);
        assert_eq!(resolve(&cfg).unwrap_err().exit_code(), 2);
        let mut cfg = ExperimentConfig::new(Preset::Fig1);
        cfg.gamma_list = Some(vec![0.0]);
        assert_eq!(resolve(&cfg).unwrap_err().exit_code(), 2);
        let mut cfg = ExperimentConfig::new(Preset::Fig6);
        cfg.t_star = Some(10.0);
        assert_eq!(resolve(&cfg).unwrap_err().exit_code(), 2);
    }

    #[test]
    fn fig5_uses_documented_seed() {
        let resolved = resolve(&ExperimentConfig::new(Preset::Fig5)).unwrap();
        assert_eq!(resolved.seed, FIG5_SEED);
        assert_eq!(resolved.gamma_list, vec![FIG5_GAMMA]);
        assert_eq!(resolved.trajectories, 1);
    }

    #[test]
    fn run_spec_rebuild_is_stable() {
        let resolved = resolve(&ExperimentConfig::new(Preset::Fig1)).unwrap();
        for run in &resolved.runs {
            let p = run.params().unwrap();
            assert_eq!(p.dt(), run.dt);
        }
    }

    #[test]
    fn truncation_maps_to_exit_three() {
        let err = CliError::from_sim(
            2.0,
            SimError::Truncation {
                weight: 1.0,
                limit: 1e-8,
                fock_dim: 4,
            },
        );
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().contains("gamma = 2"));
    }
}
