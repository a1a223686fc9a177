//! Joint deconvolution and blind source separation.
//!
//! Multichannel observations are modelled in the Fourier domain as
//! `Ŷ = Ĥ ⊙ (A Ŝ) + N̂`, with a per-channel kernel `Ĥ` (mask, PSF or both),
//! an unknown mixing matrix `A` and sources `S` sparse in the starlet
//! dictionary. [`solver::decgmca`] estimates `A` and `S` jointly and
//! [`refinement::condat_vu_refine`] polishes the sources. The
//! [`baselines`], [`simulation`] and [`metrics`] modules provide the
//! comparison methods, synthetic benchmarks and quality criteria.

pub mod baselines;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod refinement;
pub mod simulation;
pub mod solver;
pub mod transforms;

pub use error::{DbssError, Result};
pub use metrics::{evaluate, Evaluation};
pub use model::{
    add_noise, forward_observe, KernelKind, KernelSet, MixingMatrix, SourceSet, SpectralData,
    SpectralSourceSet,
};
pub use pipeline::{run_method, Method, MethodConfig};
pub use refinement::{condat_vu_refine, CondatVuParams};
pub use simulation::{generate, ExperimentSpec, Instance, KernelSpec};
pub use solver::{decgmca, SolverConfig};
pub use transforms::{Dft, ThresholdMode, WaveletCoeffs};
