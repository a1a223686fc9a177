//! The subcommands, callable without going through argument parsing.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use dbss::simulation::{derive_seed, read_dataset, write_dataset};
use dbss::{
    evaluate, generate, run_method, Evaluation, ExperimentSpec, Instance, Method, MethodConfig,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::report::{rerender, write_report};
use crate::sweep::{run_sweep, SweepSpec};

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    serde_json::from_str(&text).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

fn validated(spec: ExperimentSpec) -> Result<ExperimentSpec> {
    spec.validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    Ok(spec)
}

/// Writes `count` datasets `dataset_XXXX.dbss`; dataset `i` uses seed
/// `derive_seed([seed, i])`, or `seed` itself when `count == 1`.
pub fn simulate(
    spec: ExperimentSpec,
    seed: u64,
    count: usize,
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let spec = validated(spec)?;
    if count == 0 {
        return Err(CliError::Config("count must be at least 1".into()));
    }
    fs::create_dir_all(out_dir).map_err(CliError::io(out_dir))?;
    (0..count)
        .map(|i| {
            let seed = if count == 1 {
                seed
            } else {
                derive_seed(&[seed, i as u64])
            };
            let instance = generate(&ExperimentSpec {
                seed,
                ..spec.clone()
            })?;
            let path = out_dir.join(format!("dataset_{i:04}.dbss"));
            let file = File::create(&path).map_err(CliError::io(&path))?;
            write_dataset(&instance, BufWriter::new(file))?;
            Ok(path)
        })
        .collect()
}

/// Configuration of a single run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunSpec {
    pub experiment: ExperimentSpec,
    pub method: Method,
    pub method_config: MethodConfig,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            experiment: ExperimentSpec::default(),
            method: Method::Decgmca,
            method_config: MethodConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunReport {
    pub method: Method,
    pub n_channels: usize,
    pub n_sources: usize,
    pub seed: u64,
    pub evaluation: Evaluation,
    pub seconds: f64,
}

pub fn load_dataset(path: &Path) -> Result<Instance> {
    let file = File::open(path).map_err(CliError::io(path))?;
    read_dataset(BufReader::new(file)).map_err(|e| CliError::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Solves one instance, generated from `spec.experiment` unless `dataset` is given.
pub fn run(spec: &RunSpec, dataset: Option<&Instance>) -> Result<RunReport> {
    spec.method_config
        .validate()
        .map_err(|e| CliError::Config(e.to_string()))?;
    let generated;
    let instance = match dataset {
        Some(i) => i,
        None => {
            generated = generate(&validated(spec.experiment.clone())?)?;
            &generated
        }
    };
    let n_sources = instance.mixing.n_sources();
    let start = std::time::Instant::now();
    let seed = derive_seed(&[instance.spec.seed, 1 + spec.method.index()]);
    let (a, s) = run_method(
        spec.method,
        &instance.observed,
        &instance.kernel,
        n_sources,
        &spec.method_config,
        seed,
    )?;
    let seconds = start.elapsed().as_secs_f64();
    let evaluation = evaluate(&a, &s, &instance.mixing, &instance.sources)?;
    Ok(RunReport {
        method: spec.method,
        n_channels: instance.mixing.n_channels(),
        n_sources,
        seed: instance.spec.seed,
        evaluation,
        seconds,
    })
}

pub fn sweep(spec: &SweepSpec, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let result = run_sweep(spec)?;
    write_report(&result, out_dir)
}

pub fn report(raw_csv: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    rerender(raw_csv, out_dir)
}
