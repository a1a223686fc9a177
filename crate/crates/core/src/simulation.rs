//! Synthetic DBSS instances: sparse Laplacian-smoothed sources, random mixing
//! matrices, Hermitian-symmetric Fourier masks, channel-dependent Gaussian
//! PSFs and their products, plus a binary dataset container.

use std::io::{Read, Write};

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DbssError, Result};
use crate::model::{
    add_noise, forward_observe, KernelKind, KernelSet, MixingMatrix, SourceSet, SpectralData,
};
use crate::solver::normalize_columns;
use crate::transforms::Dft;

/// Degradation applied to each channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum KernelSpec {
    Mask {
        active_fraction: f64,
    },
    Psf {
        ratio: f64,
        /// Width of the best channel; defaults to [`default_sigma_max`].
        #[serde(default)]
        sigma_max: Option<f64>,
    },
    MaskedPsf {
        active_fraction: f64,
        ratio: f64,
        #[serde(default)]
        sigma_max: Option<f64>,
    },
}

impl KernelSpec {
    pub fn kind(&self) -> KernelKind {
        match self {
            KernelSpec::Mask { .. } => KernelKind::Mask,
            KernelSpec::Psf { .. } => KernelKind::Psf,
            KernelSpec::MaskedPsf { .. } => KernelKind::MaskedPsf,
        }
    }
}

/// Best-channel PSF width: 1800 at 4096 samples, scaled with the sample count.
pub fn default_sigma_max(n_samples: usize) -> f64 {
    1800.0 * n_samples as f64 / 4096.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentSpec {
    pub n_channels: usize,
    pub n_sources: usize,
    pub n_samples: usize,
    /// Expected number of active spikes per source.
    pub k_active: usize,
    /// FWHM of the Laplacian smoothing kernel, in samples.
    pub source_fwhm: f64,
    pub kernel: KernelSpec,
    pub snr_db: f64,
    pub seed: u64,
    /// Draw exactly `k_active` spikes instead of Bernoulli(K/N_p) indicators.
    pub exact_k: bool,
    /// Orthogonal mixing (requires `n_channels == n_sources`).
    pub orthogonal_mixing: bool,
}

impl Default for ExperimentSpec {
    fn default() -> Self {
        Self {
            n_channels: 20,
            n_sources: 5,
            n_samples: 1024,
            k_active: 20,
            source_fwhm: 20.0,
            kernel: KernelSpec::Mask {
                active_fraction: 0.5,
            },
            snr_db: 60.0,
            seed: 0,
            exact_k: false,
            orthogonal_mixing: false,
        }
    }
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(DbssError::InvalidConfig(msg));
        if self.n_channels == 0 || self.n_sources == 0 {
            return fail("n_channels and n_sources must be positive".into());
        }
        if self.n_sources > self.n_channels {
            return fail(format!(
                "n_sources ({}) must not exceed n_channels ({})",
                self.n_sources, self.n_channels
            ));
        }
        if self.n_samples < 2 {
            return fail(format!(
                "n_samples must be at least 2, got {}",
                self.n_samples
            ));
        }
        if self.k_active > self.n_samples {
            return fail(format!(
                "k_active ({}) exceeds n_samples ({})",
                self.k_active, self.n_samples
            ));
        }
        if !(self.source_fwhm > 0.0 && self.source_fwhm.is_finite()) {
            return fail(format!(
                "source_fwhm must be positive, got {}",
                self.source_fwhm
            ));
        }
        if self.snr_db.is_nan() {
            return fail("snr_db must not be NaN".into());
        }
        if self.orthogonal_mixing && self.n_channels != self.n_sources {
            return fail("orthogonal mixing needs n_channels == n_sources".into());
        }
        let check_fraction = |f: f64| {
            if f > 0.0 && f <= 1.0 {
                Ok(())
            } else {
                Err(DbssError::InvalidConfig(format!(
                    "active_fraction must lie in (0, 1], got {f}"
                )))
            }
        };
        let check_psf = |ratio: f64, sigma: Option<f64>| {
            if !(ratio >= 1.0 && ratio.is_finite()) {
                return Err(DbssError::InvalidConfig(format!(
                    "ratio must be at least 1, got {ratio}"
                )));
            }
            match sigma {
                Some(s) if !(s > 0.0 && s.is_finite()) => Err(DbssError::InvalidConfig(format!(
                    "sigma_max must be positive, got {s}"
                ))),
                _ => Ok(()),
            }
        };
        match self.kernel {
            KernelSpec::Mask { active_fraction } => check_fraction(active_fraction),
            KernelSpec::Psf { ratio, sigma_max } => check_psf(ratio, sigma_max),
            KernelSpec::MaskedPsf {
                active_fraction,
                ratio,
                sigma_max,
            } => {
                check_fraction(active_fraction)?;
                check_psf(ratio, sigma_max)
            }
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a list of integers into one seed; distinct lists give independent streams.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5EED_u64, |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

const STREAM_SOURCES: u64 = 1;
const STREAM_MIXING: u64 = 2;
const STREAM_KERNEL: u64 = 3;
const STREAM_NOISE: u64 = 4;

/// Centered, unit-sum Laplacian kernel `exp(-|x|/b)`, `b = fwhm / (2 ln 2)`,
/// truncated at `|x| ≤ 8b`. Index `len/2` is lag zero.
pub fn laplacian_kernel(fwhm: f64) -> Vec<f64> {
    let b = fwhm / (2.0 * std::f64::consts::LN_2);
    let half = (8.0 * b).floor() as i64;
    let mut k: Vec<f64> = (-half..=half)
        .map(|x| (-(x.abs() as f64) / b).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Sparse spikes with standard Gaussian amplitudes, circularly smoothed by
/// [`laplacian_kernel`].
pub fn gen_sources(spec: &ExperimentSpec, rng: &mut impl Rng) -> Result<SourceSet> {
    let (n_s, n_p) = (spec.n_sources, spec.n_samples);
    if spec.k_active > n_p {
        return Err(DbssError::InvalidConfig(format!(
            "k_active ({}) exceeds n_samples ({n_p})",
            spec.k_active
        )));
    }
    let kernel = laplacian_kernel(spec.source_fwhm);
    let half = (kernel.len() / 2) as i64;
    let rho = spec.k_active as f64 / n_p as f64;
    let mut out = Array2::zeros((n_s, n_p));
    for mut row in out.outer_iter_mut() {
        let spikes: Vec<(usize, f64)> = if spec.exact_k {
            let mut idx = sample(rng, n_p, spec.k_active).into_vec();
            idx.sort_unstable();
            idx.into_iter()
                .map(|i| (i, rng.sample(StandardNormal)))
                .collect()
        } else {
            (0..n_p)
                .filter_map(|i| {
                    let active = rng.random::<f64>() < rho;
                    let amp: f64 = rng.sample(StandardNormal);
                    active.then_some((i, amp))
                })
                .collect()
        };
        for (pos, amp) in spikes {
            for (t, &w) in kernel.iter().enumerate() {
                let idx = (pos as i64 + t as i64 - half).rem_euclid(n_p as i64) as usize;
                row[idx] += amp * w;
            }
        }
    }
    SourceSet::new(out)
}

/// I.i.d. standard Gaussian entries with unit-norm columns.
pub fn gen_mixing(n_channels: usize, n_sources: usize, rng: &mut impl Rng) -> Result<MixingMatrix> {
    let a = Array2::from_shape_fn((n_channels, n_sources), |_| rng.sample(StandardNormal));
    let out = normalize_columns(&MixingMatrix::new(a)?)?;
    log::debug!("mixing condition number {:.3e}", condition_number(&out));
    Ok(out)
}

/// Ratio of extreme singular values.
pub fn condition_number(mixing: &MixingMatrix) -> f64 {
    let m = nalgebra::DMatrix::from_fn(mixing.n_channels(), mixing.n_sources(), |i, j| {
        mixing.data()[[i, j]]
    });
    let sv = m.singular_values();
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    max / min
}

/// Square orthogonal mixing matrix (Q factor of a Gaussian matrix).
pub fn gen_orthogonal_mixing(n: usize, rng: &mut impl Rng) -> Result<MixingMatrix> {
    let g = nalgebra::DMatrix::<f64>::from_fn(n, n, |_, _| rng.sample(StandardNormal));
    let q = g.qr().q();
    MixingMatrix::new(Array2::from_shape_fn((n, n), |(i, j)| q[(i, j)]))
}

/// Bernoulli(`active_fraction`) Fourier mask, symmetric under `k ↔ N_p - k`,
/// with the DC bin always active.
pub fn gen_mask(
    n_channels: usize,
    n_samples: usize,
    active_fraction: f64,
    rng: &mut impl Rng,
) -> Result<KernelSet> {
    if !(active_fraction > 0.0 && active_fraction <= 1.0) {
        return Err(DbssError::InvalidConfig(format!(
            "active_fraction must lie in (0, 1], got {active_fraction}"
        )));
    }
    let mut mask = Array2::zeros((n_channels, n_samples));
    for mut row in mask.outer_iter_mut() {
        row[0] = Complex64::new(1.0, 0.0);
        for k in 1..=n_samples / 2 {
            let on = active_fraction >= 1.0 || rng.random::<f64>() < active_fraction;
            let v = Complex64::new(if on { 1.0 } else { 0.0 }, 0.0);
            row[k] = v;
            row[n_samples - k] = v;
        }
    }
    KernelSet::new(mask, KernelKind::Mask)
}

/// Per-channel widths, linear from `sigma_max / ratio` (channel 0) to `sigma_max`.
pub fn psf_widths(n_channels: usize, ratio: f64, sigma_max: f64) -> Vec<f64> {
    let lo = sigma_max / ratio;
    (0..n_channels)
        .map(|nu| {
            if n_channels == 1 {
                sigma_max
            } else {
                lo + (sigma_max - lo) * nu as f64 / (n_channels - 1) as f64
            }
        })
        .collect()
}

/// Fourier-domain Gaussian PSFs `exp(-x²/2σ_ν²)` on the frequency grid
/// `x ∈ [-N_p/2 + 1, N_p/2]` (FFT ordering).
pub fn gen_psf(
    n_channels: usize,
    n_samples: usize,
    ratio: f64,
    sigma_max: f64,
) -> Result<KernelSet> {
    if !(ratio >= 1.0 && ratio.is_finite()) {
        return Err(DbssError::InvalidConfig(format!(
            "ratio must be at least 1, got {ratio}"
        )));
    }
    if !(sigma_max > 0.0 && sigma_max.is_finite()) {
        return Err(DbssError::InvalidConfig(format!(
            "sigma_max must be positive, got {sigma_max}"
        )));
    }
    let widths = psf_widths(n_channels, ratio, sigma_max);
    let data = Array2::from_shape_fn((n_channels, n_samples), |(nu, k)| {
        let x = frequency_coordinate(k, n_samples);
        Complex64::new((-x * x / (2.0 * widths[nu] * widths[nu])).exp(), 0.0)
    });
    KernelSet::new(data, KernelKind::Psf)
}

fn frequency_coordinate(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Elementwise product of [`gen_psf`] and [`gen_mask`].
pub fn gen_masked_psf(
    n_channels: usize,
    n_samples: usize,
    active_fraction: f64,
    ratio: f64,
    sigma_max: f64,
    rng: &mut impl Rng,
) -> Result<KernelSet> {
    let psf = gen_psf(n_channels, n_samples, ratio, sigma_max)?;
    let mask = gen_mask(n_channels, n_samples, active_fraction, rng)?;
    KernelSet::new(psf.data() * mask.data(), KernelKind::MaskedPsf)
}

/// Kernel described by `spec`, drawn from `rng` where random.
pub fn gen_kernel(spec: &ExperimentSpec, rng: &mut impl Rng) -> Result<KernelSet> {
    let (n_c, n_p) = (spec.n_channels, spec.n_samples);
    let sigma = |s: Option<f64>| s.unwrap_or_else(|| default_sigma_max(n_p));
    match spec.kernel {
        KernelSpec::Mask { active_fraction } => gen_mask(n_c, n_p, active_fraction, rng),
        KernelSpec::Psf { ratio, sigma_max } => gen_psf(n_c, n_p, ratio, sigma(sigma_max)),
        KernelSpec::MaskedPsf {
            active_fraction,
            ratio,
            sigma_max,
        } => gen_masked_psf(n_c, n_p, active_fraction, ratio, sigma(sigma_max), rng),
    }
}

/// A generated problem with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub spec: ExperimentSpec,
    pub mixing: MixingMatrix,
    pub sources: SourceSet,
    pub kernel: KernelSet,
    pub observed: SpectralData,
}

/// Draws every component of an instance from independent streams of `spec.seed`.
pub fn generate(spec: &ExperimentSpec) -> Result<Instance> {
    spec.validate()?;
    let stream = |s| ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, s]));
    let sources = gen_sources(spec, &mut stream(STREAM_SOURCES))?;
    let mixing = if spec.orthogonal_mixing {
        gen_orthogonal_mixing(spec.n_channels, &mut stream(STREAM_MIXING))?
    } else {
        gen_mixing(spec.n_channels, spec.n_sources, &mut stream(STREAM_MIXING))?
    };
    let kernel = gen_kernel(spec, &mut stream(STREAM_KERNEL))?;
    let dft = Dft::new(spec.n_samples);
    let clean = forward_observe(&mixing, &sources.to_spectral(&dft), &kernel)?;
    let observed = add_noise(&clean, spec.snr_db, derive_seed(&[spec.seed, STREAM_NOISE]));
    Ok(Instance {
        spec: spec.clone(),
        mixing,
        sources,
        kernel,
        observed,
    })
}

/// Magic bytes opening a dataset file.
pub const DATASET_MAGIC: &[u8; 4] = b"DBSS";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct DatasetHeader {
    n_channels: usize,
    n_sources: usize,
    n_samples: usize,
    kernel_kind: KernelKind,
    seed: u64,
    spec: ExperimentSpec,
}

/// Writes an instance as: magic `DBSS`, version (u32), header length (u32),
/// JSON header, then little-endian f64 arrays in row-major order: mixing
/// (N_c×N_s), sources (N_s×N_p), kernel and observations (N_c×N_p, each entry
/// as re, im) and the per-channel noise levels (N_c).
pub fn write_dataset(instance: &Instance, mut out: impl Write) -> Result<()> {
    let header = DatasetHeader {
        n_channels: instance.mixing.n_channels(),
        n_sources: instance.mixing.n_sources(),
        n_samples: instance.sources.n_samples(),
        kernel_kind: instance.kernel.kind(),
        seed: instance.spec.seed,
        spec: instance.spec.clone(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| DbssError::Format(e.to_string()))?;
    out.write_all(DATASET_MAGIC)?;
    out.write_all(&DATASET_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u32).to_le_bytes())?;
    out.write_all(&json)?;
    let mut buf = Vec::new();
    let mut put = |v: f64| buf.extend_from_slice(&v.to_le_bytes());
    instance.mixing.data().iter().for_each(|&v| put(v));
    instance.sources.data().iter().for_each(|&v| put(v));
    for c in instance
        .kernel
        .data()
        .iter()
        .chain(instance.observed.data.iter())
    {
        put(c.re);
        put(c.im);
    }
    instance.observed.noise_sigma.iter().for_each(|&v| put(v));
    out.write_all(&buf)?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`].
pub fn read_dataset(mut input: impl Read) -> Result<Instance> {
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    if &word != DATASET_MAGIC {
        return Err(DbssError::Format("bad magic bytes".into()));
    }
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != DATASET_VERSION {
        return Err(DbssError::Format(format!("unsupported version {version}")));
    }
    input.read_exact(&mut word)?;
    let mut json = vec![0u8; u32::from_le_bytes(word) as usize];
    input.read_exact(&mut json)?;
    let header: DatasetHeader =
        serde_json::from_slice(&json).map_err(|e| DbssError::Format(e.to_string()))?;
    let (n_c, n_s, n_p) = (header.n_channels, header.n_sources, header.n_samples);
    let total = n_c * n_s + n_s * n_p + 4 * n_c * n_p + n_c;
    let mut bytes = vec![0u8; total * 8];
    input
        .read_exact(&mut bytes)
        .map_err(|e| DbssError::Format(format!("truncated payload: {e}")))?;
    let mut values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |n: usize| values.by_ref().take(n).collect::<Vec<f64>>();
    let shape = |e: ndarray::ShapeError| DbssError::Format(e.to_string());
    let mixing =
        MixingMatrix::new(Array2::from_shape_vec((n_c, n_s), take(n_c * n_s)).map_err(shape)?)?;
    let sources =
        SourceSet::new(Array2::from_shape_vec((n_s, n_p), take(n_s * n_p)).map_err(shape)?)?;
    let mut complex = |n: usize| -> Vec<Complex64> {
        take(2 * n)
            .chunks_exact(2)
            .map(|c| Complex64::new(c[0], c[1]))
            .collect()
    };
    let kernel_data = Array2::from_shape_vec((n_c, n_p), complex(n_c * n_p)).map_err(shape)?;
    let observed = Array2::from_shape_vec((n_c, n_p), complex(n_c * n_p)).map_err(shape)?;
    let noise_sigma = Array1::from(take(n_c));
    let kernel = KernelSet::new(kernel_data, header.kernel_kind)?;
    Ok(Instance {
        spec: header.spec,
        mixing,
        sources,
        kernel,
        observed: SpectralData {
            data: observed,
            noise_sigma,
        },
    })
}
