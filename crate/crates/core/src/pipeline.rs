//! One entry point per separation method, as used by the benchmark harness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{gmca, pipeline_forward_gmca, pipeline_mc_gmca, ForwardConfig, SvtConfig};
use crate::error::{DbssError, Result};
use crate::model::{KernelKind, KernelSet, MixingMatrix, SourceSet, SpectralData};
use crate::refinement::{condat_vu_refine, CondatVuParams};
use crate::solver::{decgmca, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Decgmca,
    Gmca,
    McGmca,
    ForwardGmca,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Decgmca,
        Method::Gmca,
        Method::McGmca,
        Method::ForwardGmca,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Decgmca => "decgmca",
            Method::Gmca => "gmca",
            Method::McGmca => "mc_gmca",
            Method::ForwardGmca => "forward_gmca",
        }
    }

    /// Stable small integer used in seed derivation.
    pub fn index(self) -> u64 {
        match self {
            Method::Decgmca => 0,
            Method::Gmca => 1,
            Method::McGmca => 2,
            Method::ForwardGmca => 3,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = DbssError;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| DbssError::InvalidConfig(format!("unknown method '{s}'")))
    }
}

/// Settings for every method. `solver: None` picks defaults matched to the
/// kernel kind; `refinement: None` skips the final refinement of DecGMCA.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodConfig {
    pub solver: Option<SolverConfig>,
    pub refinement: Option<CondatVuParams>,
    pub svt: SvtConfig,
    pub forward: ForwardConfig,
}

impl Default for MethodConfig {
    fn default() -> Self {
        Self {
            solver: None,
            refinement: Some(CondatVuParams::default()),
            svt: SvtConfig::default(),
            forward: ForwardConfig::default(),
        }
    }
}

impl MethodConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = &self.solver {
            s.validate()?;
        }
        self.forward.validate()
    }

    fn solver_for(&self, method: Method, kind: KernelKind, seed: u64) -> SolverConfig {
        let base = self.solver.clone().unwrap_or_else(|| match method {
            Method::Decgmca => SolverConfig::for_kernel(kind),
            _ => SolverConfig::for_mask(),
        });
        SolverConfig {
            rng_seed: seed,
            ..base
        }
    }
}

/// Runs `method` on one instance. `seed` drives any randomness of the solver.
pub fn run_method(
    method: Method,
    data: &SpectralData,
    kernel: &KernelSet,
    n_sources: usize,
    config: &MethodConfig,
    seed: u64,
) -> Result<(MixingMatrix, SourceSet)> {
    let solver = config.solver_for(method, kernel.kind(), seed);
    match method {
        Method::Decgmca => {
            let out = decgmca(data, kernel, n_sources, &solver)?;
            let state = out.state;
            match &config.refinement {
                None => Ok((state.mixing, state.sources)),
                Some(params) => {
                    let params = CondatVuParams {
                        n_wavelet_scales: solver.n_wavelet_scales,
                        ..params.clone()
                    };
                    let refined = condat_vu_refine(
                        data,
                        kernel,
                        &state.mixing,
                        &state.sources,
                        &state.thresholds,
                        &params,
                    )?;
                    Ok((state.mixing, refined.sources))
                }
            }
        }
        Method::Gmca => gmca(data, n_sources, &solver),
        Method::McGmca => {
            if kernel.kind() == KernelKind::Mask {
                pipeline_mc_gmca(data, kernel, n_sources, &config.svt, &solver)
            } else {
                Err(DbssError::InvalidKernel(format!(
                    "matrix completion needs a mask kernel, got {:?}",
                    kernel.kind()
                )))
            }
        }
        Method::ForwardGmca => {
            pipeline_forward_gmca(data, kernel, n_sources, &config.forward, &solver)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_roundtrip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(
                serde_json::to_string(&m).unwrap(),
                format!("\"{}\"", m.name())
            );
        }
        assert!("ica".parse::<Method>().is_err());
    }
}
