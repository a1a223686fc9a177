//! Fourier-domain forward model `Ŷ[ν,k] = Ĥ[ν,k] a_ν ŝ^k + N̂[ν,k]` and the
//! matrix types it acts on.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{DbssError, Result};
use crate::transforms::Dft;

fn check_nonempty(rows: usize, cols: usize, what: &'static str) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(DbssError::EmptyInput(what));
    }
    Ok(())
}

/// Real source signals, one source per row (`N_s × N_p`).
#[derive(Debug, Clone, PartialEq)]
pub struct SourceSet {
    data: Array2<f64>,
}

impl SourceSet {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        check_nonempty(data.nrows(), data.ncols(), "source set")?;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(DbssError::NonFinite("source set"));
        }
        Ok(Self { data })
    }

    pub fn zeros(n_sources: usize, n_samples: usize) -> Self {
        Self {
            data: Array2::zeros((n_sources, n_samples)),
        }
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    pub fn n_sources(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub fn source(&self, j: usize) -> ArrayView1<'_, f64> {
        self.data.row(j)
    }

    /// Row-wise forward DFT.
    pub fn to_spectral(&self, dft: &Dft) -> SpectralSourceSet {
        let mut out = Array2::zeros(self.data.dim());
        for (row, mut dst) in self.data.outer_iter().zip(out.outer_iter_mut()) {
            let spec = dft.forward_real(row.as_slice().expect("row-major"));
            dst.assign(&Array1::from(spec));
        }
        SpectralSourceSet { data: out }
    }
}

/// Fourier coefficients of the sources, one source per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralSourceSet {
    data: Array2<Complex64>,
}

impl SpectralSourceSet {
    pub fn new(data: Array2<Complex64>) -> Result<Self> {
        check_nonempty(data.nrows(), data.ncols(), "spectral source set")?;
        Ok(Self { data })
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<Complex64> {
        self.data
    }

    pub fn n_sources(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    /// Real part of the row-wise inverse DFT.
    pub fn to_real(&self, dft: &Dft) -> SourceSet {
        let mut out = Array2::zeros(self.data.dim());
        let mut buf = vec![Complex64::new(0.0, 0.0); self.n_samples()];
        for (row, mut dst) in self.data.outer_iter().zip(out.outer_iter_mut()) {
            buf.iter_mut().zip(row.iter()).for_each(|(b, v)| *b = *v);
            dft.inverse_in_place(&mut buf);
            dst.iter_mut().zip(&buf).for_each(|(d, c)| *d = c.re);
        }
        SourceSet { data: out }
    }
}

/// Real mixing matrix `A` (`N_c × N_s`); row ν is the channel response `a_ν`.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingMatrix {
    data: Array2<f64>,
}

impl MixingMatrix {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        check_nonempty(data.nrows(), data.ncols(), "mixing matrix")?;
        if !data.iter().all(|v| v.is_finite()) {
            return Err(DbssError::NonFinite("mixing matrix"));
        }
        Ok(Self { data })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            data: Array2::eye(n),
        }
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.data
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_sources(&self) -> usize {
        self.data.ncols()
    }

    pub fn column_norms(&self) -> Vec<f64> {
        self.data
            .axis_iter(Axis(1))
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }
}

/// What a kernel models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Mask,
    Psf,
    MaskedPsf,
}

/// Fourier-domain operator `Ĥ` (`N_c × N_p`).
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    data: Array2<Complex64>,
    kind: KernelKind,
}

impl KernelSet {
    pub fn new(data: Array2<Complex64>, kind: KernelKind) -> Result<Self> {
        check_nonempty(data.nrows(), data.ncols(), "kernel set")?;
        if !data.iter().all(|c| c.re.is_finite() && c.im.is_finite()) {
            return Err(DbssError::NonFinite("kernel set"));
        }
        match kind {
            KernelKind::Mask => {
                if !data
                    .iter()
                    .all(|c| c.im == 0.0 && (c.re == 0.0 || c.re == 1.0))
                {
                    return Err(DbssError::InvalidKernel(
                        "mask entries must be 0 or 1".into(),
                    ));
                }
            }
            KernelKind::Psf | KernelKind::MaskedPsf => {
                if !data
                    .iter()
                    .all(|c| c.im == 0.0 && c.re.abs() <= 1.0 + 1e-12)
                {
                    return Err(DbssError::InvalidKernel(
                        "PSF entries must be real with magnitude at most 1".into(),
                    ));
                }
            }
        }
        Ok(Self { data, kind })
    }

    /// Operator without masking or blurring; an all-active mask.
    pub fn ones(n_channels: usize, n_samples: usize) -> Self {
        Self {
            data: Array2::from_elem((n_channels, n_samples), Complex64::new(1.0, 0.0)),
            kind: KernelKind::Mask,
        }
    }

    pub fn data(&self) -> &Array2<Complex64> {
        &self.data
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    /// Fraction of nonzero entries.
    pub fn active_fraction(&self) -> f64 {
        let active = self.data.iter().filter(|c| c.norm_sqr() > 0.0).count();
        active as f64 / self.data.len() as f64
    }
}

/// Fourier-domain observations with the per-channel noise level recorded at
/// generation time (sample-domain σ; zero for clean data).
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    pub data: Array2<Complex64>,
    pub noise_sigma: Array1<f64>,
}

impl SpectralData {
    pub fn new(data: Array2<Complex64>) -> Result<Self> {
        check_nonempty(data.nrows(), data.ncols(), "spectral data")?;
        let n_channels = data.nrows();
        Ok(Self {
            data,
            noise_sigma: Array1::zeros(n_channels),
        })
    }

    pub fn n_channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.data.ncols()
    }

    pub(crate) fn check_kernel(&self, kernel: &KernelSet) -> Result<()> {
        if self.data.dim() != kernel.data().dim() {
            return Err(DbssError::DimensionMismatch(format!(
                "data is {:?} but kernel is {:?}",
                self.data.dim(),
                kernel.data().dim()
            )));
        }
        Ok(())
    }
}

/// Largest `|X[k] - conj(X[N-k])|` over a spectrum; zero for the DFT of a real signal.
pub fn hermitian_asymmetry(spectrum: ArrayView1<'_, Complex64>) -> f64 {
    let n = spectrum.len();
    (0..n)
        .map(|k| (spectrum[k] - spectrum[(n - k) % n].conj()).norm())
        .fold(0.0, f64::max)
}

/// Noise-free forward model `Ŷ[ν,k] = Ĥ[ν,k] Σ_j A[ν,j] Ŝ[j,k]`.
pub fn forward_observe(
    mixing: &MixingMatrix,
    sources: &SpectralSourceSet,
    kernel: &KernelSet,
) -> Result<SpectralData> {
    let (n_c, n_s) = mixing.data().dim();
    if sources.n_sources() != n_s {
        return Err(DbssError::DimensionMismatch(format!(
            "mixing has {n_s} sources but spectral sources have {}",
            sources.n_sources()
        )));
    }
    if kernel.data().dim() != (n_c, sources.n_samples()) {
        return Err(DbssError::DimensionMismatch(format!(
            "kernel is {:?}, expected ({n_c}, {})",
            kernel.data().dim(),
            sources.n_samples()
        )));
    }
    let mixed = mixing
        .data()
        .mapv(|a| Complex64::new(a, 0.0))
        .dot(sources.data());
    let data = mixed * kernel.data();
    SpectralData::new(data)
}

/// Adds white Gaussian noise, drawn on `N_p` real samples per channel and then
/// transformed, so the noisy data of real signals stays Hermitian-symmetric.
///
/// The noise is rescaled so that `10 log10(‖Ŷ‖²_F / ‖N̂‖²_F) = snr_db` exactly
/// over the whole data cube. `snr_db = +∞` leaves the data untouched.
pub fn add_noise(observed: &SpectralData, snr_db: f64, rng_seed: u64) -> SpectralData {
    assert!(!snr_db.is_nan(), "SNR must not be NaN");
    if snr_db == f64::INFINITY {
        let mut out = observed.clone();
        out.noise_sigma.fill(0.0);
        return out;
    }
    let (n_c, n_p) = observed.data.dim();
    let dft = Dft::new(n_p);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let mut noise = Array2::<Complex64>::zeros((n_c, n_p));
    let mut sample_energy = Array1::<f64>::zeros(n_c);
    for (nu, mut row) in noise.outer_iter_mut().enumerate() {
        let samples: Vec<f64> = (0..n_p).map(|_| rng.sample(StandardNormal)).collect();
        sample_energy[nu] = samples.iter().map(|v| v * v).sum();
        row.assign(&Array1::from(dft.forward_real(&samples)));
    }
    let signal_energy: f64 = observed.data.iter().map(|c| c.norm_sqr()).sum();
    let noise_energy: f64 = noise.iter().map(|c| c.norm_sqr()).sum();
    let scale = if noise_energy > 0.0 {
        (signal_energy / (noise_energy * 10f64.powf(snr_db / 10.0))).sqrt()
    } else {
        0.0
    };
    let data = &observed.data + &noise.mapv(|c| c * scale);
    let noise_sigma = sample_energy.mapv(|e| scale * (e / n_p as f64).sqrt());
    SpectralData { data, noise_sigma }
}
