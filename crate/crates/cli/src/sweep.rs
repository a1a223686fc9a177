//! Monte-Carlo sweeps over one experiment parameter.

use std::time::Instant;

use dbss::simulation::derive_seed;
use dbss::{evaluate, generate, run_method, ExperimentSpec, KernelSpec, Method, MethodConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::report::{summarize, CellSummary, RawRecord};

/// Experiment parameter varied along the sweep axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepVariable {
    ActiveFraction,
    NSources,
    SnrDb,
    ResolutionRatio,
}

impl SweepVariable {
    pub fn name(self) -> &'static str {
        match self {
            SweepVariable::ActiveFraction => "active_fraction",
            SweepVariable::NSources => "n_sources",
            SweepVariable::SnrDb => "snr_db",
            SweepVariable::ResolutionRatio => "resolution_ratio",
        }
    }

    /// Returns `base` with this parameter set to `value`.
    pub fn apply(self, base: &ExperimentSpec, value: f64) -> Result<ExperimentSpec> {
        let mut spec = base.clone();
        let mismatch = || {
            CliError::Config(format!(
                "cannot sweep {} with a {:?} kernel",
                self.name(),
                base.kernel.kind()
            ))
        };
        match self {
            SweepVariable::ActiveFraction => match &mut spec.kernel {
                KernelSpec::Mask { active_fraction }
                | KernelSpec::MaskedPsf {
                    active_fraction, ..
                } => *active_fraction = value,
                KernelSpec::Psf { .. } => return Err(mismatch()),
            },
            SweepVariable::ResolutionRatio => match &mut spec.kernel {
                KernelSpec::Psf { ratio, .. } | KernelSpec::MaskedPsf { ratio, .. } => {
                    *ratio = value
                }
                KernelSpec::Mask { .. } => return Err(mismatch()),
            },
            SweepVariable::NSources => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(CliError::Config(format!(
                        "n_sources must be a positive integer, got {value}"
                    )));
                }
                spec.n_sources = value as usize;
            }
            SweepVariable::SnrDb => spec.snr_db = value,
        }
        Ok(spec)
    }
}

fn default_channel_counts() -> Vec<usize> {
    vec![20]
}

fn default_methods() -> Vec<Method> {
    vec![Method::Decgmca]
}

fn default_realizations() -> usize {
    10
}

fn default_true() -> bool {
    true
}

/// A full sweep: every `(value, n_channels, realization)` triple generates one
/// instance, on which every listed method runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub variable: SweepVariable,
    pub values: Vec<f64>,
    #[serde(default)]
    pub fixed: ExperimentSpec,
    #[serde(default = "default_channel_counts")]
    pub channel_counts: Vec<usize>,
    #[serde(default = "default_methods")]
    pub methods: Vec<Method>,
    #[serde(default = "default_realizations")]
    pub n_realizations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub method_config: MethodConfig,
    /// Store wall-clock seconds; when off every `seconds` entry is 0 so the
    /// output is byte-reproducible.
    #[serde(default = "default_true")]
    pub record_timing: bool,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() {
            return Err(CliError::Config("sweep values must not be empty".into()));
        }
        if self.channel_counts.is_empty() {
            return Err(CliError::Config("channel_counts must not be empty".into()));
        }
        if self.methods.is_empty() {
            return Err(CliError::Config("methods must not be empty".into()));
        }
        if self.n_realizations == 0 {
            return Err(CliError::Config("n_realizations must be at least 1".into()));
        }
        self.method_config
            .validate()
            .map_err(|e| CliError::Config(e.to_string()))?;
        for &value in &self.values {
            for &n_c in &self.channel_counts {
                self.cell_spec(value, n_c)?
                    .validate()
                    .map_err(|e| CliError::Config(e.to_string()))?;
            }
        }
        Ok(())
    }

    fn cell_spec(&self, value: f64, n_channels: usize) -> Result<ExperimentSpec> {
        let base = ExperimentSpec {
            n_channels,
            ..self.fixed.clone()
        };
        self.variable.apply(&base, value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub spec: SweepSpec,
    /// One row per (value, n_channels, realization, method), in that nesting order.
    pub records: Vec<RawRecord>,
    pub summaries: Vec<CellSummary>,
}

#[derive(Debug, Clone, Copy)]
struct Job {
    value_index: usize,
    channel_index: usize,
    realization: usize,
}

/// Runs every cell of the sweep. Realizations run in parallel on the current
/// rayon pool; results come back in a fixed order whatever the scheduling.
/// A failing method is recorded as a row of NaN values, not as an error.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepResult> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for value_index in 0..spec.values.len() {
        for channel_index in 0..spec.channel_counts.len() {
            for realization in 0..spec.n_realizations {
                jobs.push(Job {
                    value_index,
                    channel_index,
                    realization,
                });
            }
        }
    }
    let records: Vec<RawRecord> = jobs
        .into_par_iter()
        .map(|job| run_job(spec, job))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let summaries = summarize(&records, spec.n_realizations);
    Ok(SweepResult {
        spec: spec.clone(),
        records,
        summaries,
    })
}

fn run_job(spec: &SweepSpec, job: Job) -> Result<Vec<RawRecord>> {
    let value = spec.values[job.value_index];
    let n_channels = spec.channel_counts[job.channel_index];
    let grid = [
        spec.seed,
        job.value_index as u64,
        job.channel_index as u64,
        job.realization as u64,
    ];
    let data_seed = derive_seed(&grid);
    let experiment = ExperimentSpec {
        seed: data_seed,
        ..spec.cell_spec(value, n_channels)?
    };
    let instance = generate(&experiment);
    let record = |method: Method, outcome: Option<(f64, f64, f64)>, seconds: f64| {
        let (delta_a, sdr_db, rel_err_pct) = outcome.unwrap_or((f64::NAN, f64::NAN, f64::NAN));
        RawRecord {
            method,
            n_channels,
            variable: spec.variable,
            value,
            realization: job.realization,
            delta_a,
            sdr_db,
            rel_err_pct,
            seconds: if spec.record_timing { seconds } else { 0.0 },
        }
    };
    let instance = match instance {
        Ok(i) => i,
        Err(e) => {
            log::warn!(
                "{} = {value}, N_c = {n_channels}, realization {}: {e}",
                spec.variable.name(),
                job.realization
            );
            return Ok(spec.methods.iter().map(|&m| record(m, None, 0.0)).collect());
        }
    };
    let rows = spec
        .methods
        .iter()
        .map(|&method| {
            let solver_seed =
                derive_seed(&[grid[0], 1 + method.index(), grid[1], grid[2], grid[3]]);
            let start = Instant::now();
            let outcome = run_method(
                method,
                &instance.observed,
                &instance.kernel,
                experiment.n_sources,
                &spec.method_config,
                solver_seed,
            )
            .and_then(|(a, s)| evaluate(&a, &s, &instance.mixing, &instance.sources));
            let seconds = start.elapsed().as_secs_f64();
            match outcome {
                Ok(ev) => record(
                    method,
                    Some((ev.delta_a, ev.sdr_db, ev.worst_relative_error())),
                    seconds,
                ),
                Err(e) => {
                    log::warn!(
                        "{method} at {} = {value}, N_c = {n_channels}, realization {}: {e}",
                        spec.variable.name(),
                        job.realization
                    );
                    record(method, None, seconds)
                }
            }
        })
        .collect();
    Ok(rows)
}
