//! Fixtures shared by the benchmarks.

use dbss::{generate, ExperimentSpec, Instance, KernelSpec};

/// Desk-scale masked instance with `n_sources` sources and `n_samples` samples.
pub fn masked_instance(n_sources: usize, n_samples: usize, seed: u64) -> Instance {
    let spec = ExperimentSpec {
        n_channels: 20,
        n_sources,
        n_samples,
        k_active: 20,
        kernel: KernelSpec::Mask {
            active_fraction: 0.5,
        },
        snr_db: 60.0,
        seed,
        ..Default::default()
    };
    generate(&spec).expect("benchmark instance is valid")
}
