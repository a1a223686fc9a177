//! DecGMCA: alternating estimation of the sources (per-frequency
//! Tikhonov-regularized least squares followed by starlet thresholding) and of
//! the mixing matrix (per-channel least squares), under decreasing
//! regularization and threshold schedules.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Axis};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{svt_complete, SvtConfig};
use crate::error::{DbssError, Result};
use crate::model::{
    KernelKind, KernelSet, MixingMatrix, SourceSet, SpectralData, SpectralSourceSet,
};
use crate::refinement::fidelity_value;
use crate::transforms::{
    mad_sigma, starlet_decompose, starlet_highpass_response, starlet_reconstruct, Dft,
    ThresholdMode, WaveletCoeffs,
};

/// How the Tikhonov parameter ε moves from `eps_start` to `eps_final`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsDecay {
    Linear,
    Exponential,
}

/// Initialization of the mixing matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMethod {
    Random,
    Svd,
    /// Matrix completion by singular value thresholding, then SVD.
    McSvd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub n_iterations: usize,
    pub eps_start: f64,
    pub eps_final: f64,
    pub eps_decay: EpsDecay,
    /// Final threshold in units of the per-source noise level.
    pub tau_final: f64,
    /// Initial fraction of significant coefficients kept.
    pub p0: f64,
    pub n_wavelet_scales: usize,
    pub init: InitMethod,
    pub threshold_mode: ThresholdMode,
    pub rng_seed: u64,
    /// Completion settings used by [`InitMethod::McSvd`].
    pub svt: SvtConfig,
    /// Fit the mixing matrix on the starlet detail band only, leaving out
    /// the unthresholded coarse approximation.
    pub highpass_mixing_update: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self::for_mask()
    }
}

impl SolverConfig {
    /// Defaults for sub-sampled (masked) data: ε from 1 to 1e-3.
    pub fn for_mask() -> Self {
        Self {
            n_iterations: 50,
            eps_start: 1.0,
            eps_final: 1e-3,
            eps_decay: EpsDecay::Exponential,
            tau_final: 3.0,
            p0: 0.05,
            n_wavelet_scales: 5,
            init: InitMethod::Svd,
            threshold_mode: ThresholdMode::Hard,
            rng_seed: 0,
            svt: SvtConfig::default(),
            highpass_mixing_update: true,
        }
    }

    /// Defaults for blurred data: ε from 1 to 1e-5.
    pub fn for_psf() -> Self {
        Self {
            eps_final: 1e-5,
            ..Self::for_mask()
        }
    }

    /// Defaults matched to a kernel kind.
    pub fn for_kernel(kind: KernelKind) -> Self {
        match kind {
            KernelKind::Mask => Self {
                init: InitMethod::McSvd,
                ..Self::for_mask()
            },
            KernelKind::Psf | KernelKind::MaskedPsf => Self::for_psf(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(DbssError::InvalidConfig(msg));
        if self.n_iterations < 2 {
            return fail(format!(
                "n_iterations must be at least 2, got {}",
                self.n_iterations
            ));
        }
        if !(self.eps_final > 0.0 && self.eps_final.is_finite()) {
            return fail(format!(
                "eps_final must be positive, got {}",
                self.eps_final
            ));
        }
        if !(self.eps_start >= self.eps_final && self.eps_start.is_finite()) {
            return fail(format!(
                "eps_start ({}) must be at least eps_final ({})",
                self.eps_start, self.eps_final
            ));
        }
        if !(self.p0 > 0.0 && self.p0 <= 1.0) {
            return fail(format!("p0 must lie in (0, 1], got {}", self.p0));
        }
        if !(self.tau_final > 0.0 && self.tau_final.is_finite()) {
            return fail(format!(
                "tau_final must be positive, got {}",
                self.tau_final
            ));
        }
        if self.n_wavelet_scales == 0 {
            return fail("n_wavelet_scales must be positive".into());
        }
        Ok(())
    }
}

/// Iterate of the alternating loop.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub mixing: MixingMatrix,
    pub sources: SourceSet,
    pub spectral_sources: SpectralSourceSet,
    pub iteration: usize,
    pub thresholds: Vec<f64>,
    pub noise_levels: Vec<f64>,
    pub eps_current: f64,
}

/// One record per outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationDiagnostics {
    pub iteration: usize,
    pub eps: f64,
    pub thresholds: Vec<f64>,
    pub noise_levels: Vec<f64>,
    /// Scaled data misfit plus λ-weighted ℓ1 norm of the detail coefficients.
    pub objective: f64,
    /// Nonzero detail coefficients over all sources.
    pub l0_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecGmcaOutput {
    pub state: SolverState,
    pub diagnostics: Vec<IterationDiagnostics>,
}

impl DecGmcaOutput {
    pub fn mixing(&self) -> &MixingMatrix {
        &self.state.mixing
    }

    pub fn sources(&self) -> &SourceSet {
        &self.state.sources
    }
}

/// ε at outer iteration `iteration` (1-based).
pub fn eps_schedule(iteration: usize, config: &SolverConfig) -> f64 {
    let n = config.n_iterations;
    if iteration <= 1 {
        return config.eps_start;
    }
    if iteration >= n {
        return config.eps_final;
    }
    let t = (iteration - 1) as f64 / (n - 1) as f64;
    match config.eps_decay {
        EpsDecay::Linear => config.eps_start + (config.eps_final - config.eps_start) * t,
        EpsDecay::Exponential => config.eps_start * (config.eps_final / config.eps_start).powf(t),
    }
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix.
pub fn spectral_norm_psd(p: &DMatrix<f64>) -> Result<f64> {
    if !p.is_square() {
        return Err(DbssError::DimensionMismatch(format!(
            "expected a square matrix, got {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    let n = p.nrows();
    if n == 0 {
        return Ok(0.0);
    }
    let scale = p.amax().max(1.0);
    let mut asymmetry: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            asymmetry = asymmetry.max((p[(i, j)] - p[(j, i)]).abs());
        }
    }
    if asymmetry > 1e-10 * scale {
        return Err(DbssError::NotHermitian { asymmetry });
    }
    if n == 1 {
        return Ok(p[(0, 0)].abs());
    }
    let eig = p.clone().symmetric_eigenvalues();
    Ok(eig.iter().copied().fold(0.0, f64::max))
}

fn check_shapes(data: &SpectralData, mixing: &MixingMatrix, kernel: &KernelSet) -> Result<()> {
    data.check_kernel(kernel)?;
    if mixing.n_channels() != data.n_channels() {
        return Err(DbssError::DimensionMismatch(format!(
            "mixing has {} channels but data has {}",
            mixing.n_channels(),
            data.n_channels()
        )));
    }
    Ok(())
}

/// Per-frequency normal matrix `P(k) = Σ_ν |Ĥ[ν,k]|² a_νᵀ a_ν`.
pub(crate) fn normal_matrix(a: &Array2<f64>, kernel: &KernelSet, k: usize) -> DMatrix<f64> {
    let n_s = a.ncols();
    let mut p = DMatrix::zeros(n_s, n_s);
    for (nu, row) in a.outer_iter().enumerate() {
        let w = kernel.data()[[nu, k]].norm_sqr();
        if w == 0.0 {
            continue;
        }
        for i in 0..n_s {
            let wi = w * row[i];
            for j in i..n_s {
                p[(i, j)] += wi * row[j];
            }
        }
    }
    for i in 0..n_s {
        for j in 0..i {
            p[(i, j)] = p[(j, i)];
        }
    }
    p
}

/// Regularized per-frequency source estimate:
/// `(P(k) + ε‖P(k)‖₂ I) ŝ^k = Σ_ν conj(Ĥ[ν,k]) Ŷ[ν,k] a_νᵀ`.
pub fn update_sources(
    data: &SpectralData,
    mixing: &MixingMatrix,
    kernel: &KernelSet,
    eps: f64,
) -> Result<SpectralSourceSet> {
    check_shapes(data, mixing, kernel)?;
    if !(eps >= 0.0 && eps.is_finite()) {
        return Err(DbssError::InvalidConfig(format!(
            "eps must be nonnegative, got {eps}"
        )));
    }
    let a = mixing.data();
    let n_s = a.ncols();
    let n_p = data.n_samples();
    let columns: Vec<Vec<Complex64>> = (0..n_p)
        .into_par_iter()
        .map(|k| solve_frequency(data, a, kernel, eps, k))
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((n_s, n_p));
    for (k, col) in columns.into_iter().enumerate() {
        for (j, v) in col.into_iter().enumerate() {
            out[[j, k]] = v;
        }
    }
    SpectralSourceSet::new(out)
}

fn solve_frequency(
    data: &SpectralData,
    a: &Array2<f64>,
    kernel: &KernelSet,
    eps: f64,
    k: usize,
) -> Result<Vec<Complex64>> {
    let n_s = a.ncols();
    let mut p = normal_matrix(a, kernel, k);
    let mut rhs_re = DVector::zeros(n_s);
    let mut rhs_im = DVector::zeros(n_s);
    for (nu, row) in a.outer_iter().enumerate() {
        let v = kernel.data()[[nu, k]].conj() * data.data[[nu, k]];
        for j in 0..n_s {
            rhs_re[j] += v.re * row[j];
            rhs_im[j] += v.im * row[j];
        }
    }
    let norm = spectral_norm_psd(&p)?;
    if eps > 0.0 && norm == 0.0 {
        // Every channel is masked at this frequency: the right-hand side is zero too.
        return Ok(vec![Complex64::new(0.0, 0.0); n_s]);
    }
    let shift = eps * norm;
    for i in 0..n_s {
        p[(i, i)] += shift;
    }
    let chol = p
        .cholesky()
        .ok_or(DbssError::SingularSystem { frequency: k })?;
    let re = chol.solve(&rhs_re);
    let im = chol.solve(&rhs_im);
    Ok(re
        .iter()
        .zip(im.iter())
        .map(|(&r, &i)| Complex64::new(r, i))
        .collect())
}

/// Per-channel least-squares mixing update (columns not yet normalized):
/// `a_ν = Re(Σ_k conj(Ĥ) Ŷ ŝ^{k*}) · Re(Σ_k |Ĥ|² ŝ^k ŝ^{k*})⁻¹`.
pub fn update_mixing(
    data: &SpectralData,
    sources: &SpectralSourceSet,
    kernel: &KernelSet,
) -> Result<MixingMatrix> {
    mixing_least_squares(data, sources, kernel, None)
}

/// [`update_mixing`] with both sides of the regression filtered by a real
/// per-frequency weight, e.g. a high-pass response that removes the smooth
/// part of the sources from the fit.
pub fn update_mixing_weighted(
    data: &SpectralData,
    sources: &SpectralSourceSet,
    kernel: &KernelSet,
    weights: &[f64],
) -> Result<MixingMatrix> {
    if weights.len() != data.n_samples() {
        return Err(DbssError::DimensionMismatch(format!(
            "{} weights for {} frequencies",
            weights.len(),
            data.n_samples()
        )));
    }
    mixing_least_squares(data, sources, kernel, Some(weights))
}

fn mixing_least_squares(
    data: &SpectralData,
    sources: &SpectralSourceSet,
    kernel: &KernelSet,
    weights: Option<&[f64]>,
) -> Result<MixingMatrix> {
    data.check_kernel(kernel)?;
    if sources.n_samples() != data.n_samples() {
        return Err(DbssError::DimensionMismatch(format!(
            "sources have {} samples but data has {}",
            sources.n_samples(),
            data.n_samples()
        )));
    }
    let n_s = sources.n_sources();
    let s = sources.data();
    let rows: Vec<Vec<f64>> = (0..data.n_channels())
        .into_par_iter()
        .map(|nu| {
            let mut gram = DMatrix::<Complex64>::zeros(n_s, n_s);
            let mut cross = DVector::<Complex64>::zeros(n_s);
            for k in 0..data.n_samples() {
                let filter = weights.map_or(1.0, |w| w[k] * w[k]);
                let h = kernel.data()[[nu, k]];
                let w = h.norm_sqr() * filter;
                if w == 0.0 {
                    continue;
                }
                let y = h.conj() * data.data[[nu, k]] * filter;
                for i in 0..n_s {
                    let si = s[[i, k]];
                    cross[i] += y * si.conj();
                    let wsi = si * w;
                    for j in i..n_s {
                        gram[(i, j)] += wsi * s[[j, k]].conj();
                    }
                }
            }
            for i in 0..n_s {
                for j in 0..i {
                    gram[(i, j)] = gram[(j, i)].conj();
                }
            }
            let scale = gram
                .iter()
                .map(|c| c.norm())
                .fold(0.0, f64::max)
                .max(f64::MIN_POSITIVE);
            let residue = gram
                .iter()
                .chain(cross.iter())
                .map(|c| c.im.abs())
                .fold(0.0, f64::max)
                / scale;
            if residue > 1e-8 {
                log::warn!(
                    "channel {nu}: discarding imaginary residue {residue:e} in mixing update"
                );
            }
            let g = gram.map(|c| c.re);
            let c = cross.map(|c| c.re);
            let chol = g
                .cholesky()
                .ok_or(DbssError::DegenerateSources { channel: nu })?;
            let a = chol.solve(&c);
            Ok(a.iter().copied().collect())
        })
        .collect::<Result<_>>()?;
    let mut out = Array2::zeros((data.n_channels(), n_s));
    for (nu, row) in rows.into_iter().enumerate() {
        out.row_mut(nu).assign(&Array1::from(row));
    }
    MixingMatrix::new(out).map_err(|_| DbssError::Divergence { iteration: 0 })
}

/// Scales every column to unit ℓ2 norm.
pub fn normalize_columns(mixing: &MixingMatrix) -> Result<MixingMatrix> {
    let mut data = mixing.data().clone();
    for (j, mut col) in data.axis_iter_mut(Axis(1)).enumerate() {
        let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(DbssError::ZeroColumn { column: j });
        }
        col.mapv_inplace(|v| v / norm);
    }
    MixingMatrix::new(data)
}

fn threshold_coeffs(coeffs: &mut WaveletCoeffs, lambda: f64, mode: ThresholdMode) {
    for d in coeffs.detail_scales.iter_mut() {
        for v in d.iter_mut() {
            *v = mode.apply(*v, lambda);
        }
    }
}

/// Thresholds every detail scale of each source at its own λ_j; the coarse
/// scale is left untouched.
pub fn threshold_sources(
    sources: &SourceSet,
    thresholds: &[f64],
    mode: ThresholdMode,
    n_scales: usize,
) -> Result<SourceSet> {
    if thresholds.len() != sources.n_sources() {
        return Err(DbssError::DimensionMismatch(format!(
            "{} thresholds for {} sources",
            thresholds.len(),
            sources.n_sources()
        )));
    }
    if let Some(&bad) = thresholds.iter().find(|&&t| t.is_nan() || t < 0.0) {
        return Err(DbssError::InvalidConfig(format!(
            "threshold must be nonnegative, got {bad}"
        )));
    }
    let rows: Vec<Vec<f64>> = sources
        .data()
        .outer_iter()
        .zip(thresholds)
        .map(|(row, &lambda)| {
            let mut coeffs = starlet_decompose(&row.to_vec(), n_scales)?;
            threshold_coeffs(&mut coeffs, lambda, mode);
            starlet_reconstruct(&coeffs)
        })
        .collect::<Result<_>>()?;
    let n_p = sources.n_samples();
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    SourceSet::new(Array2::from_shape_vec((sources.n_sources(), n_p), flat).expect("shape"))
}

/// Percentage-decreasing thresholds.
///
/// With `M_j` the number of coefficients of source j above `τσ_j`, iteration
/// `i` keeps the `⌈((1-p0)(i-1)/(N_i-1) + p0) M_j⌉` largest of them, so the
/// kept fraction grows linearly from `p0` to 1 and the last iteration
/// thresholds at exactly `τσ_j`.
pub fn compute_threshold_schedule(
    coeff_magnitudes: &[Vec<f64>],
    noise_levels: &[f64],
    iteration: usize,
    config: &SolverConfig,
) -> Result<Vec<f64>> {
    if coeff_magnitudes.len() != noise_levels.len() {
        return Err(DbssError::DimensionMismatch(format!(
            "{} coefficient sets for {} noise levels",
            coeff_magnitudes.len(),
            noise_levels.len()
        )));
    }
    if iteration == 0 || iteration > config.n_iterations {
        return Err(DbssError::InvalidConfig(format!(
            "iteration {iteration} outside 1..={}",
            config.n_iterations
        )));
    }
    let fraction =
        (1.0 - config.p0) * (iteration - 1) as f64 / (config.n_iterations - 1) as f64 + config.p0;
    Ok(coeff_magnitudes
        .iter()
        .zip(noise_levels)
        .map(|(mags, &sigma)| {
            let floor = config.tau_final * sigma;
            if iteration == config.n_iterations {
                return floor;
            }
            let mut significant: Vec<f64> = mags
                .iter()
                .map(|v| v.abs())
                .filter(|&v| v >= floor)
                .collect();
            if significant.is_empty() {
                return floor;
            }
            let m = significant.len();
            let keep = ((fraction * m as f64 - 1e-9).ceil() as usize).clamp(1, m);
            let (_, kth, _) = significant.select_nth_unstable_by(keep - 1, |a, b| b.total_cmp(a));
            *kth
        })
        .collect())
}

/// Initial mixing matrix with unit-norm columns.
///
/// The SVD route takes the leading left singular vectors of `[Re Ŷ | Im Ŷ]`,
/// which coincide with the (real) left singular vectors of `Ŷ` whenever the
/// data are the spectra of real signals.
pub fn init_mixing(
    data: &SpectralData,
    kernel: &KernelSet,
    n_sources: usize,
    method: InitMethod,
    rng_seed: u64,
    svt: &SvtConfig,
) -> Result<MixingMatrix> {
    let n_c = data.n_channels();
    if n_sources == 0 || n_sources > n_c {
        return Err(DbssError::InvalidInit(format!(
            "need 1 <= n_sources <= n_channels, got {n_sources} sources for {n_c} channels"
        )));
    }
    match method {
        InitMethod::Random => {
            let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
            let a = Array2::from_shape_fn((n_c, n_sources), |_| rng.sample(StandardNormal));
            normalize_columns(&MixingMatrix::new(a)?)
        }
        InitMethod::Svd => leading_left_vectors(&data.data, n_sources),
        InitMethod::McSvd => {
            if kernel.kind() != KernelKind::Mask {
                return Err(DbssError::InvalidInit(format!(
                    "matrix-completion init needs a mask kernel, got {:?}",
                    kernel.kind()
                )));
            }
            let completed = svt_complete_with(data, kernel, svt)?;
            leading_left_vectors(&completed.data, n_sources)
        }
    }
}

fn svt_complete_with(
    data: &SpectralData,
    mask: &KernelSet,
    svt: &SvtConfig,
) -> Result<SpectralData> {
    let (step, threshold) = svt.resolve(data, mask);
    svt_complete(data, mask, step, threshold, svt.max_iter, svt.err_tol)
}

fn leading_left_vectors(y: &Array2<Complex64>, n_sources: usize) -> Result<MixingMatrix> {
    let n_c = y.nrows();
    let mut gram = DMatrix::<f64>::zeros(n_c, n_c);
    for i in 0..n_c {
        for j in i..n_c {
            let v: f64 = y
                .row(i)
                .iter()
                .zip(y.row(j).iter())
                .map(|(a, b)| a.re * b.re + a.im * b.im)
                .sum();
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let eig = gram.symmetric_eigen();
    let mut order: Vec<usize> = (0..n_c).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let mut a = Array2::zeros((n_c, n_sources));
    for (col, &idx) in order.iter().take(n_sources).enumerate() {
        let v = eig.eigenvectors.column(idx);
        // Sign convention: largest-magnitude entry positive.
        let pivot = v
            .iter()
            .copied()
            .fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n_c {
            a[[r, col]] = sign * v[r];
        }
    }
    normalize_columns(&MixingMatrix::new(a)?)
}

fn ensure_finite_state(a: &Array2<f64>, s: &Array2<f64>, iteration: usize) -> Result<()> {
    if a.iter().chain(s.iter()).all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(DbssError::Divergence { iteration })
    }
}

/// Runs the alternating DecGMCA loop and returns the last iterate. The final
/// proximal refinement is a separate step, see
/// [`crate::refinement::condat_vu_refine`].
pub fn decgmca(
    data: &SpectralData,
    kernel: &KernelSet,
    n_sources: usize,
    config: &SolverConfig,
) -> Result<DecGmcaOutput> {
    config.validate()?;
    data.check_kernel(kernel)?;
    if !data
        .data
        .iter()
        .all(|c| c.re.is_finite() && c.im.is_finite())
    {
        return Err(DbssError::NonFinite("observations"));
    }
    let n_p = data.n_samples();
    let n_scales = config.n_wavelet_scales;
    if n_scales >= usize::BITS as usize || (1usize << n_scales) > n_p {
        return Err(DbssError::ScaleTooDeep {
            n_scales,
            n_samples: n_p,
        });
    }
    let dft = Dft::new(n_p);
    let mut mixing = init_mixing(
        data,
        kernel,
        n_sources,
        config.init,
        config.rng_seed,
        &config.svt,
    )?;
    let highpass = config
        .highpass_mixing_update
        .then(|| starlet_highpass_response(n_p, n_scales));
    let mut diagnostics = Vec::with_capacity(config.n_iterations);
    let mut state = None;

    for iteration in 1..=config.n_iterations {
        let eps = eps_schedule(iteration, config);
        let spectral = update_sources(data, &mixing, kernel, eps)?;
        let sources = spectral.to_real(&dft);
        ensure_finite_state(mixing.data(), sources.data(), iteration)?;

        let mut coeffs: Vec<WaveletCoeffs> = sources
            .data()
            .outer_iter()
            .map(|row| starlet_decompose(row.as_slice().expect("row-major"), n_scales))
            .collect::<Result<_>>()?;
        let noise_levels: Vec<f64> = coeffs
            .iter()
            .map(|c| mad_sigma(&c.detail_scales[0]))
            .collect::<Result<_>>()?;
        let magnitudes: Vec<Vec<f64>> = coeffs
            .iter()
            .map(|c| c.details().map(|v| v.abs()).collect())
            .collect();
        let thresholds = compute_threshold_schedule(&magnitudes, &noise_levels, iteration, config)?;

        coeffs
            .par_iter_mut()
            .zip(thresholds.par_iter())
            .for_each(|(c, &lambda)| threshold_coeffs(c, lambda, config.threshold_mode));
        let l0_count = coeffs
            .iter()
            .map(|c| c.details().filter(|v| **v != 0.0).count())
            .sum();
        let l1_penalty: f64 = coeffs
            .iter()
            .zip(&thresholds)
            .map(|(c, lambda)| lambda * c.details().map(|v| v.abs()).sum::<f64>())
            .sum();
        let rows: Vec<f64> = coeffs
            .iter()
            .map(starlet_reconstruct)
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let sources =
            SourceSet::new(Array2::from_shape_vec((n_sources, n_p), rows).expect("shape"))
                .map_err(|_| DbssError::Divergence { iteration })?;
        let spectral = sources.to_spectral(&dft);

        let updated = match &highpass {
            Some(w) => update_mixing_weighted(data, &spectral, kernel, w),
            None => update_mixing(data, &spectral, kernel),
        };
        mixing = match updated {
            Err(DbssError::Divergence { .. }) => return Err(DbssError::Divergence { iteration }),
            other => normalize_columns(&other?)?,
        };
        ensure_finite_state(mixing.data(), sources.data(), iteration)?;

        let objective = fidelity_value(data, kernel, &mixing, &spectral)? + l1_penalty;
        diagnostics.push(IterationDiagnostics {
            iteration,
            eps,
            thresholds: thresholds.clone(),
            noise_levels: noise_levels.clone(),
            objective,
            l0_count,
        });
        state = Some(SolverState {
            mixing: mixing.clone(),
            sources,
            spectral_sources: spectral,
            iteration,
            thresholds,
            noise_levels,
            eps_current: eps,
        });
    }

    Ok(DecGmcaOutput {
        state: state.expect("at least two iterations"),
        diagnostics,
    })
}
