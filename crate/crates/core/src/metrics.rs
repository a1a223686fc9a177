//! Separation quality: mixing-matrix criterion Δ_A, source-to-distortion
//! ratio and per-source relative error, after resolving the permutation and
//! sign ambiguity of blind separation.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{DbssError, Result};
use crate::model::{MixingMatrix, SourceSet};

/// Reported value of Δ_A for a perfect estimate.
pub const DELTA_A_CAP: f64 = 16.0;
/// Reported SDR for a perfect estimate.
pub const SDR_CAP_DB: f64 = 160.0;
/// Largest source count for which every permutation is tried.
pub const EXHAUSTIVE_LIMIT: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    /// `permutation[j]` is the estimated source matched to reference source `j`.
    pub permutation: Vec<usize>,
    pub signs: Vec<f64>,
    pub aligned_mixing: MixingMatrix,
    pub aligned_sources: SourceSet,
}

fn column_cosines(a_est: &Array2<f64>, a_ref: &Array2<f64>) -> Array2<f64> {
    let unit = |a: &Array2<f64>| {
        let mut a = a.clone();
        for mut col in a.axis_iter_mut(Axis(1)) {
            let n = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                col.mapv_inplace(|v| v / n);
            }
        }
        a
    };
    // rows: reference index, columns: estimate index
    unit(a_ref).t().dot(&unit(a_est))
}

fn best_permutation(score: &Array2<f64>) -> Vec<usize> {
    let n = score.nrows();
    if n <= EXHAUSTIVE_LIMIT {
        let mut best = (f64::NEG_INFINITY, Vec::new());
        let mut current = Vec::with_capacity(n);
        let mut used = vec![false; n];
        search(score, &mut current, &mut used, 0.0, &mut best);
        return best.1;
    }
    // Greedy matching on the largest scores, then pairwise swaps until no gain.
    let mut perm = vec![usize::MAX; n];
    let mut free_est = vec![true; n];
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
    pairs.sort_by(|a, b| {
        score[[b.0, b.1]]
            .total_cmp(&score[[a.0, a.1]])
            .then(a.cmp(b))
    });
    for (r, e) in pairs {
        if perm[r] == usize::MAX && free_est[e] {
            perm[r] = e;
            free_est[e] = false;
        }
    }
    let mut improved = true;
    while improved {
        improved = false;
        for i in 0..n {
            for j in (i + 1)..n {
                let now = score[[i, perm[i]]] + score[[j, perm[j]]];
                let swapped = score[[i, perm[j]]] + score[[j, perm[i]]];
                if swapped > now + 1e-15 {
                    perm.swap(i, j);
                    improved = true;
                }
            }
        }
    }
    perm
}

fn search(
    score: &Array2<f64>,
    current: &mut Vec<usize>,
    used: &mut [bool],
    total: f64,
    best: &mut (f64, Vec<usize>),
) {
    let r = current.len();
    if r == score.nrows() {
        if total > best.0 {
            *best = (total, current.clone());
        }
        return;
    }
    for e in 0..score.ncols() {
        if !used[e] {
            used[e] = true;
            current.push(e);
            search(score, current, used, total + score[[r, e]], best);
            current.pop();
            used[e] = false;
        }
    }
}

/// Reorders and re-signs the estimated columns of `a_est` (and rows of
/// `s_est`) to best match `a_ref`, maximizing `Σ_j |⟨a_est^{π(j)}, a_ref^j⟩|`.
pub fn align(
    a_est: &MixingMatrix,
    s_est: &SourceSet,
    a_ref: &MixingMatrix,
) -> Result<AlignmentResult> {
    if a_est.data().dim() != a_ref.data().dim() {
        return Err(DbssError::DimensionMismatch(format!(
            "estimated mixing {:?} vs reference {:?}",
            a_est.data().dim(),
            a_ref.data().dim()
        )));
    }
    if s_est.n_sources() != a_est.n_sources() {
        return Err(DbssError::DimensionMismatch(format!(
            "{} estimated sources for {} mixing columns",
            s_est.n_sources(),
            a_est.n_sources()
        )));
    }
    let cos = column_cosines(a_est.data(), a_ref.data());
    let permutation = best_permutation(&cos.mapv(f64::abs));
    let signs: Vec<f64> = permutation
        .iter()
        .enumerate()
        .map(|(j, &e)| if cos[[j, e]] < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let n_s = permutation.len();
    let mut a = Array2::zeros(a_est.data().dim());
    let mut s = Array2::zeros(s_est.data().dim());
    for j in 0..n_s {
        let e = permutation[j];
        a.column_mut(j)
            .assign(&a_est.data().column(e).mapv(|v| v * signs[j]));
        s.row_mut(j)
            .assign(&s_est.data().row(e).mapv(|v| v * signs[j]));
    }
    Ok(AlignmentResult {
        permutation,
        signs,
        aligned_mixing: MixingMatrix::new(a)?,
        aligned_sources: SourceSet::new(s)?,
    })
}

/// `Δ_A = -log10(‖A_est⁺ A_ref - I‖₁ / N_s²)` with the entrywise ℓ1 norm, on
/// already aligned matrices. A residual within round-off of the
/// pseudo-inverse (machine epsilon times size and condition number) counts as
/// perfect and reports [`DELTA_A_CAP`]; `-∞` when `A_est` is rank deficient.
pub fn mixing_criterion(a_est: &MixingMatrix, a_ref: &MixingMatrix) -> Result<f64> {
    let (n_c, n_s) = a_est.data().dim();
    if a_ref.data().dim() != (n_c, n_s) {
        return Err(DbssError::DimensionMismatch(format!(
            "estimated mixing {:?} vs reference {:?}",
            a_est.data().dim(),
            a_ref.data().dim()
        )));
    }
    let est = DMatrix::from_fn(n_c, n_s, |i, j| a_est.data()[[i, j]]);
    let reference = DMatrix::from_fn(n_c, n_s, |i, j| a_ref.data()[[i, j]]);
    let svd = est.svd(true, true);
    let (smax, smin) = (svd.singular_values.max(), svd.singular_values.min());
    let tol = f64::EPSILON * n_c.max(n_s) as f64 * smax;
    if svd.singular_values.iter().any(|&s| s <= tol) {
        log::warn!("estimated mixing matrix is rank deficient; reporting -inf");
        return Ok(f64::NEG_INFINITY);
    }
    let pinv = svd
        .pseudo_inverse(tol)
        .map_err(|e| DbssError::InvalidConfig(e.to_string()))?;
    let gap = pinv * reference - DMatrix::identity(n_s, n_s);
    let norm: f64 = gap.iter().map(|v| v.abs()).sum::<f64>() / (n_s * n_s) as f64;
    if norm <= f64::EPSILON * n_c.max(n_s) as f64 * smax / smin {
        return Ok(DELTA_A_CAP);
    }
    Ok((-norm.log10()).min(DELTA_A_CAP))
}

/// SDR flavour: amplitude ratio (`10 log10` of norms) or energy ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdrVariant {
    #[default]
    Amplitude,
    Energy,
}

fn scale_fit(est: ArrayView1<'_, f64>, reference: ArrayView1<'_, f64>) -> f64 {
    let energy = est.dot(&est);
    if energy == 0.0 {
        0.0
    } else {
        est.dot(&reference) / energy
    }
}

fn fitted_error(est: &SourceSet, reference: &SourceSet) -> Result<(f64, f64)> {
    if est.data().dim() != reference.data().dim() {
        return Err(DbssError::DimensionMismatch(format!(
            "estimated sources {:?} vs reference {:?}",
            est.data().dim(),
            reference.data().dim()
        )));
    }
    let mut err = 0.0;
    let mut energy = 0.0;
    for (e, r) in est.data().outer_iter().zip(reference.data().outer_iter()) {
        let c = scale_fit(e, r);
        err += e
            .iter()
            .zip(r.iter())
            .map(|(a, b)| (c * a - b).powi(2))
            .sum::<f64>();
        energy += r.dot(&r);
    }
    if energy == 0.0 {
        return Err(DbssError::ZeroReference);
    }
    Ok((err.sqrt(), energy.sqrt()))
}

/// `10 log10(‖S_ref‖ / ‖S_est - S_ref‖)` over the whole (aligned) source
/// matrix after a per-source least-squares scale fit. Capped at [`SDR_CAP_DB`].
pub fn sdr(s_est: &SourceSet, s_ref: &SourceSet) -> Result<f64> {
    sdr_with(s_est, s_ref, SdrVariant::Amplitude)
}

pub fn sdr_with(s_est: &SourceSet, s_ref: &SourceSet, variant: SdrVariant) -> Result<f64> {
    let (err, reference) = fitted_error(s_est, s_ref)?;
    if err == 0.0 {
        return Ok(SDR_CAP_DB);
    }
    let ratio = reference / err;
    let db = match variant {
        SdrVariant::Amplitude => 10.0 * ratio.log10(),
        SdrVariant::Energy => 20.0 * ratio.log10(),
    };
    Ok(db.min(SDR_CAP_DB))
}

/// `100 ‖c s_est - s_ref‖ / ‖s_ref‖` with `c` the least-squares scale.
pub fn relative_error(s_est: ArrayView1<'_, f64>, s_ref: ArrayView1<'_, f64>) -> Result<f64> {
    if s_est.len() != s_ref.len() {
        return Err(DbssError::DimensionMismatch(format!(
            "estimate has {} samples, reference has {}",
            s_est.len(),
            s_ref.len()
        )));
    }
    let reference = s_ref.dot(&s_ref).sqrt();
    if reference == 0.0 {
        return Err(DbssError::ZeroReference);
    }
    let c = scale_fit(s_est, s_ref);
    let err = s_est
        .iter()
        .zip(s_ref.iter())
        .map(|(a, b)| (c * a - b).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(100.0 * err / reference)
}

/// All criteria for one estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub delta_a: f64,
    pub sdr_db: f64,
    /// Per reference source, in percent.
    pub relative_errors: Vec<f64>,
}

impl Evaluation {
    pub fn worst_relative_error(&self) -> f64 {
        self.relative_errors.iter().copied().fold(0.0, f64::max)
    }
}

/// Aligns the estimate to the reference and computes every criterion.
pub fn evaluate(
    a_est: &MixingMatrix,
    s_est: &SourceSet,
    a_ref: &MixingMatrix,
    s_ref: &SourceSet,
) -> Result<Evaluation> {
    let aligned = align(a_est, s_est, a_ref)?;
    let delta_a = mixing_criterion(&aligned.aligned_mixing, a_ref)?;
    let sdr_db = sdr(&aligned.aligned_sources, s_ref)?;
    let relative_errors = aligned
        .aligned_sources
        .data()
        .outer_iter()
        .zip(s_ref.data().outer_iter())
        .map(|(e, r)| relative_error(e, r))
        .collect::<Result<_>>()?;
    Ok(Evaluation {
        delta_a,
        sdr_db,
        relative_errors,
    })
}
