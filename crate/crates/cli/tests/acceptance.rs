//! Acceptance suite: every criterion prints one PASS/FAIL line with the
//! measured values; the process fails if any criterion fails.
//!
//! Run with `cargo test -p dbss-cli --test acceptance`.
#![allow(clippy::needless_range_loop)]

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use dbss::metrics::{align, mixing_criterion, sdr, DELTA_A_CAP};
use dbss::refinement::{condat_vu_refine, fidelity_gradient, fidelity_value, CondatVuParams};
use dbss::simulation::{derive_seed, gen_mask, gen_masked_psf};
use dbss::solver::{update_mixing, update_sources};
use dbss::transforms::{mad_sigma, starlet_decompose, starlet_reconstruct, Dft};
use dbss::{
    evaluate, forward_observe, generate, run_method, ExperimentSpec, KernelKind, KernelSet,
    KernelSpec, Method, MethodConfig, MixingMatrix, SourceSet, SpectralData, SpectralSourceSet,
};
use dbss_cli::report::write_raw_csv;
use dbss_cli::{run_sweep, CellSummary, SweepResult, SweepSpec, SweepVariable};
use nalgebra::DMatrix;
use ndarray::Array2;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| r.random_range(-1.0..1.0))
}

fn random_complex(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<Complex64> {
    Array2::from_shape_fn((rows, cols), |_| {
        c(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0))
    })
}

fn random_psf_kernel(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> KernelSet {
    KernelSet::new(
        Array2::from_shape_fn((rows, cols), |_| c(r.random_range(-1.0..1.0), 0.0)),
        KernelKind::Psf,
    )
    .unwrap()
}

/// Largest eigenvalue of a small symmetric matrix by cyclic Jacobi sweeps.
fn jacobi_max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut a = m.clone();
    for _ in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = if theta == 0.0 {
                    1.0
                } else {
                    theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
                };
                let (cs, sn) = (1.0 / (t * t + 1.0).sqrt(), t / (t * t + 1.0).sqrt());
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = cs * akp - sn * akq;
                    a[(k, q)] = sn * akp + cs * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = cs * apk - sn * aqk;
                    a[(q, k)] = sn * apk + cs * aqk;
                }
            }
        }
        if off < 1e-30 {
            break;
        }
    }
    (0..n).map(|i| a[(i, i)]).fold(f64::NEG_INFINITY, f64::max)
}

/// Solves a small real system with a complex right-hand side by explicit 2x2
/// inversion, or Gaussian elimination for larger systems.
fn solve_small(m: &DMatrix<f64>, b: &[Complex64]) -> Vec<Complex64> {
    let n = b.len();
    if n == 1 {
        return vec![b[0] / m[(0, 0)]];
    }
    if n == 2 {
        let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
        return vec![
            (b[0] * m[(1, 1)] - b[1] * m[(0, 1)]) / det,
            (b[1] * m[(0, 0)] - b[0] * m[(1, 0)]) / det,
        ];
    }
    let mut a = m.clone();
    let mut rhs = b.to_vec();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))
            .unwrap();
        a.swap_rows(col, pivot);
        rhs.swap(col, pivot);
        for row in (col + 1)..n {
            let f = a[(row, col)] / a[(col, col)];
            for k in col..n {
                a[(row, k)] -= f * a[(col, k)];
            }
            rhs[row] = rhs[row] - rhs[col] * f;
        }
    }
    let mut x = vec![c(0.0, 0.0); n];
    for row in (0..n).rev() {
        let mut acc = rhs[row];
        for k in (row + 1)..n {
            acc -= x[k] * a[(row, k)];
        }
        x[row] = acc / a[(row, row)];
    }
    x
}

fn max_abs(values: impl Iterator<Item = f64>) -> f64 {
    values.fold(0.0, f64::max)
}

fn source_update_oracle() -> Outcome {
    let start = Instant::now();
    let mut r = rng(101);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let (n_s, n_c, n_p) = (1 + trial % 3, 2 + trial % 4, 8);
        let mixing = MixingMatrix::new(random_matrix(&mut r, n_c, n_s)).unwrap();
        let kernel = random_psf_kernel(&mut r, n_c, n_p);
        let data = SpectralData::new(random_complex(&mut r, n_c, n_p)).unwrap();
        let eps = [0.0, 1e-3, 1.0][trial % 3];
        let got = update_sources(&data, &mixing, &kernel, eps).unwrap();
        for k in 0..n_p {
            let mut p = DMatrix::zeros(n_s, n_s);
            for i in 0..n_s {
                for j in 0..n_s {
                    for nu in 0..n_c {
                        p[(i, j)] += kernel.data()[[nu, k]].norm_sqr()
                            * mixing.data()[[nu, i]]
                            * mixing.data()[[nu, j]];
                    }
                }
            }
            let shift = eps * jacobi_max_eigenvalue(&p);
            for i in 0..n_s {
                p[(i, i)] += shift;
            }
            let rhs: Vec<Complex64> = (0..n_s)
                .map(|j| {
                    (0..n_c)
                        .map(|nu| {
                            kernel.data()[[nu, k]].conj()
                                * data.data[[nu, k]]
                                * mixing.data()[[nu, j]]
                        })
                        .sum()
                })
                .collect();
            let want = solve_small(&p, &rhs);
            let scale = max_abs(want.iter().map(|v| v.norm())).max(1e-300);
            for j in 0..n_s {
                worst = worst.max((got.data()[[j, k]] - want[j]).norm() / scale);
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-10 && elapsed < Duration::from_secs(5),
        format!(
            "max relative error {worst:.2e} over 100 instances in {:.2} s",
            elapsed.as_secs_f64()
        ),
    )
}

fn mixing_update_oracle() -> Outcome {
    let mut r = rng(102);
    let mut worst: f64 = 0.0;
    for trial in 0..100 {
        let (n_s, n_c, n_p) = (1 + trial % 3, 2 + trial % 4, 8);
        let kernel = random_psf_kernel(&mut r, n_c, n_p);
        let data = SpectralData::new(random_complex(&mut r, n_c, n_p)).unwrap();
        let sources = SpectralSourceSet::new(random_complex(&mut r, n_s, n_p)).unwrap();
        let got = update_mixing(&data, &sources, &kernel).unwrap();
        for nu in 0..n_c {
            let mut gram = DMatrix::zeros(n_s, n_s);
            let mut cross = vec![c(0.0, 0.0); n_s];
            for k in 0..n_p {
                let h = kernel.data()[[nu, k]];
                for i in 0..n_s {
                    let si = sources.data()[[i, k]];
                    cross[i] += (h.conj() * data.data[[nu, k]] * si.conj()).re;
                    for j in 0..n_s {
                        gram[(i, j)] += h.norm_sqr() * (si * sources.data()[[j, k]].conj()).re;
                    }
                }
            }
            let want = solve_small(&gram, &cross);
            let scale = max_abs(want.iter().map(|v| v.norm())).max(1.0);
            for j in 0..n_s {
                worst = worst.max((got.data()[[nu, j]] - want[j].re).abs() / scale);
            }
        }
    }
    let mut recovery: f64 = 0.0;
    let dft = Dft::new(32);
    for trial in 0..20 {
        let n_s = 1 + trial % 3;
        let n_c = n_s + 2;
        let mixing = MixingMatrix::new(random_matrix(&mut r, n_c, n_s)).unwrap();
        let spectral = SourceSet::new(random_matrix(&mut r, n_s, 32))
            .unwrap()
            .to_spectral(&dft);
        let mask = gen_mask(n_c, 32, 0.7, &mut r).unwrap();
        let observed = forward_observe(&mixing, &spectral, &mask).unwrap();
        let got = update_mixing(&observed, &spectral, &mask).unwrap();
        recovery = recovery.max(max_abs(
            (got.data() - mixing.data()).iter().map(|v| v.abs()),
        ));
    }
    outcome(
        worst <= 1e-10 && recovery <= 1e-10,
        format!("max relative error {worst:.2e}; noise-free recovery error {recovery:.2e}"),
    )
}

fn transform_exactness() -> Outcome {
    let mut r = rng(103);
    let (mut starlet, mut dft_err, mut parseval) = (0.0f64, 0.0f64, 0.0f64);
    for &n in &[64usize, 100, 1024] {
        let x: Vec<f64> = (0..n).map(|_| r.sample(StandardNormal)).collect();
        let back = starlet_reconstruct(&starlet_decompose(&x, 5).unwrap()).unwrap();
        starlet = starlet.max(max_abs(x.iter().zip(&back).map(|(a, b)| (a - b).abs())));
        let dft = Dft::new(n);
        let spectrum = dft.forward_real(&x);
        let back = dft.inverse_real(&spectrum);
        dft_err = dft_err.max(max_abs(x.iter().zip(&back).map(|(a, b)| (a - b).abs())));
        let time: f64 = x.iter().map(|v| v * v).sum();
        let freq: f64 = spectrum.iter().map(|v| v.norm_sqr()).sum::<f64>() / n as f64;
        parseval = parseval.max((time - freq).abs() / time);
    }
    let samples: Vec<f64> = (0..100_000).map(|_| r.sample(StandardNormal)).collect();
    let mad = mad_sigma(&samples).unwrap();
    outcome(
        starlet <= 1e-12 && dft_err <= 1e-12 && parseval <= 1e-10 && (mad - 1.0).abs() <= 0.02,
        format!(
            "starlet {starlet:.1e}, DFT {dft_err:.1e}, Parseval {parseval:.1e}, MAD sigma {mad:.4}"
        ),
    )
}

fn gradient_check() -> Outcome {
    let mut r = rng(104);
    let (n_c, n_s, n_p) = (4, 2, 32);
    let dft = Dft::new(n_p);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let mixing = MixingMatrix::new(random_matrix(&mut r, n_c, n_s)).unwrap();
        let kernel = gen_masked_psf(n_c, n_p, 0.7, 2.0, n_p as f64 / 4.0, &mut r).unwrap();
        let data = SpectralData::new(
            SourceSet::new(random_matrix(&mut r, n_c, n_p))
                .unwrap()
                .to_spectral(&dft)
                .into_inner(),
        )
        .unwrap();
        let sources = SourceSet::new(random_matrix(&mut r, n_s, n_p)).unwrap();
        let grad = fidelity_gradient(&data, &kernel, &mixing, &sources, &dft).unwrap();
        let f = |s: &Array2<f64>| {
            fidelity_value(
                &data,
                &kernel,
                &mixing,
                &SourceSet::new(s.clone()).unwrap().to_spectral(&dft),
            )
            .unwrap()
        };
        let h = 1e-6;
        let mut numeric = Array2::zeros((n_s, n_p));
        for j in 0..n_s {
            for k in 0..n_p {
                let mut up = sources.data().clone();
                let mut down = sources.data().clone();
                up[[j, k]] += h;
                down[[j, k]] -= h;
                numeric[[j, k]] = (f(&up) - f(&down)) / (2.0 * h);
            }
        }
        let err = (grad.data() - &numeric)
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
            / numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max(err);
    }
    outcome(
        worst <= 1e-5,
        format!("max relative error {worst:.2e} over 20 instances"),
    )
}

fn refinement_descent() -> Outcome {
    let mut r = rng(105);
    let dft = Dft::new(64);
    let mut worst_rise: f64 = 0.0;
    for _ in 0..10 {
        let (n_c, n_s) = (5, 3);
        let mixing = MixingMatrix::new(random_matrix(&mut r, n_c, n_s)).unwrap();
        let kernel = gen_masked_psf(n_c, 64, 0.6, 3.0, 20.0, &mut r).unwrap();
        let data = SpectralData::new(
            SourceSet::new(random_matrix(&mut r, n_c, 64))
                .unwrap()
                .to_spectral(&dft)
                .into_inner(),
        )
        .unwrap();
        let initial = SourceSet::new(random_matrix(&mut r, n_s, 64)).unwrap();
        let lambdas = vec![0.05; n_s];
        let params = CondatVuParams {
            n_iterations: 200,
            tolerance: 0.0,
            n_wavelet_scales: 3,
            ..Default::default()
        };
        let out = condat_vu_refine(&data, &kernel, &mixing, &initial, &lambdas, &params).unwrap();
        for w in out.objective_trace[10..].windows(2) {
            worst_rise = worst_rise.max((w[1] - w[0]) / w[0].abs().max(1e-300));
        }
    }
    let n_p = 64;
    let target = SourceSet::new(random_matrix(&mut r, 2, n_p)).unwrap();
    let data = SpectralData::new(target.to_spectral(&dft).into_inner()).unwrap();
    let params = CondatVuParams {
        n_iterations: 200,
        tolerance: 0.0,
        n_wavelet_scales: 3,
        ..Default::default()
    };
    let out = condat_vu_refine(
        &data,
        &KernelSet::ones(2, n_p),
        &MixingMatrix::identity(2),
        &SourceSet::zeros(2, n_p),
        &[0.0, 0.0],
        &params,
    )
    .unwrap();
    let gap = max_abs((out.sources.data() - target.data()).iter().map(|v| v.abs()));
    outcome(
        worst_rise <= 1e-12 && gap <= 1e-6,
        format!("largest relative objective rise after burn-in {worst_rise:.2e}; identity least-squares gap {gap:.2e}"),
    )
}

fn sweep(
    variable: SweepVariable,
    values: Vec<f64>,
    fixed: ExperimentSpec,
    methods: Vec<Method>,
    seed: u64,
) -> SweepResult {
    let spec = SweepSpec {
        variable,
        values,
        fixed,
        channel_counts: vec![20],
        methods,
        n_realizations: 10,
        seed,
        method_config: MethodConfig::default(),
        record_timing: true,
    };
    run_sweep(&spec).unwrap()
}

fn cell(result: &SweepResult, method: Method, value: f64) -> &CellSummary {
    result
        .summaries
        .iter()
        .find(|s| s.method == method && s.value == value)
        .expect("cell present")
}

fn mask_spec(n_sources: usize, active_fraction: f64) -> ExperimentSpec {
    ExperimentSpec {
        n_channels: 20,
        n_sources,
        n_samples: 1024,
        k_active: 20,
        kernel: KernelSpec::Mask { active_fraction },
        snr_db: 60.0,
        ..Default::default()
    }
}

fn easy_regime() -> Outcome {
    let start = Instant::now();
    let result = sweep(
        SweepVariable::ActiveFraction,
        vec![0.5],
        mask_spec(2, 0.5),
        vec![Method::Decgmca],
        6,
    );
    let elapsed = start.elapsed();
    let s = cell(&result, Method::Decgmca, 0.5);
    outcome(
        s.sdr_db_median >= 30.0 && s.delta_a_median >= 2.0 && elapsed < Duration::from_secs(120),
        format!(
            "median SDR {:.2} dB (need >= 30), median delta_A {:.3} (need >= 2), {:.0} s",
            s.sdr_db_median,
            s.delta_a_median,
            elapsed.as_secs_f64()
        ),
    )
}

fn mask_trend() -> Outcome {
    let start = Instant::now();
    let result = sweep(
        SweepVariable::ActiveFraction,
        vec![0.2, 0.5, 0.9],
        mask_spec(5, 0.5),
        vec![Method::Decgmca],
        7,
    );
    let elapsed = start.elapsed();
    let sdr_at = |v| cell(&result, Method::Decgmca, v).sdr_db_median;
    let (low, mid, high) = (sdr_at(0.2), sdr_at(0.5), sdr_at(0.9));
    outcome(
        high - low >= 10.0 && (high - mid).abs() <= 5.0 && elapsed < Duration::from_secs(600),
        format!(
            "median SDR 20%: {low:.2} dB, 50%: {mid:.2} dB, 90%: {high:.2} dB; gain {:.2} dB (need >= 10), plateau gap {:.2} dB (need <= 5), {:.0} s",
            high - low,
            (high - mid).abs(),
            elapsed.as_secs_f64()
        ),
    )
}

fn mask_ordering() -> Outcome {
    let result = sweep(
        SweepVariable::ActiveFraction,
        vec![0.3],
        mask_spec(5, 0.3),
        vec![Method::Decgmca, Method::McGmca],
        8,
    );
    let dec = cell(&result, Method::Decgmca, 0.3).sdr_db_median;
    let mc = cell(&result, Method::McGmca, 0.3).sdr_db_median;
    outcome(
        dec - mc >= 3.0,
        format!(
            "median SDR DecGMCA {dec:.2} dB, MC+GMCA {mc:.2} dB, margin {:.2} dB (need >= 3)",
            dec - mc
        ),
    )
}

fn psf_ordering() -> Outcome {
    let fixed = ExperimentSpec {
        kernel: KernelSpec::Psf {
            ratio: 3.0,
            sigma_max: None,
        },
        ..mask_spec(5, 0.5)
    };
    let result = sweep(
        SweepVariable::ResolutionRatio,
        vec![3.0],
        fixed,
        vec![Method::Decgmca, Method::ForwardGmca, Method::Gmca],
        9,
    );
    let dec = cell(&result, Method::Decgmca, 3.0).sdr_db_median;
    let fwd = cell(&result, Method::ForwardGmca, 3.0).sdr_db_median;
    let gmca = cell(&result, Method::Gmca, 3.0).sdr_db_median;
    outcome(
        dec > fwd && fwd > gmca && dec - gmca >= 5.0,
        format!(
            "median SDR DecGMCA {dec:.2} dB, ForWaRD+GMCA {fwd:.2} dB, GMCA {gmca:.2} dB; DecGMCA over GMCA {:.2} dB (need >= 5), over ForWaRD+GMCA {:.2} dB",
            dec - gmca,
            dec - fwd
        ),
    )
}

fn masked_psf_contrast() -> Outcome {
    let spec = ExperimentSpec {
        kernel: KernelSpec::MaskedPsf {
            active_fraction: 0.5,
            ratio: 3.0,
            sigma_max: None,
        },
        ..mask_spec(3, 0.5)
    };
    let config = MethodConfig::default();
    let mut per_source: Vec<Vec<f64>> = vec![Vec::new(); 3];
    let (mut dec_worst, mut fwd_worst) = (Vec::new(), Vec::new());
    for realization in 0..10u64 {
        let instance = generate(&ExperimentSpec {
            seed: derive_seed(&[10, realization]),
            ..spec.clone()
        })
        .unwrap();
        let score = |method: Method| {
            let seed = derive_seed(&[10, 1 + method.index(), realization]);
            run_method(
                method,
                &instance.observed,
                &instance.kernel,
                3,
                &config,
                seed,
            )
            .and_then(|(a, s)| evaluate(&a, &s, &instance.mixing, &instance.sources))
        };
        match score(Method::Decgmca) {
            Ok(ev) => {
                for (j, e) in ev.relative_errors.iter().enumerate() {
                    per_source[j].push(*e);
                }
                dec_worst.push(ev.worst_relative_error());
            }
            Err(_) => dec_worst.push(f64::INFINITY),
        }
        fwd_worst.push(
            score(Method::ForwardGmca)
                .map(|ev| ev.worst_relative_error())
                .unwrap_or(f64::INFINITY),
        );
    }
    let medians: Vec<f64> = per_source
        .iter()
        .map(|v| dbss_cli::report::median(v))
        .collect();
    let good = medians.iter().filter(|&&e| e <= 1.0).count();
    let (dec, fwd) = (
        dbss_cli::report::median(&dec_worst),
        dbss_cli::report::median(&fwd_worst),
    );
    outcome(
        good >= 2 && fwd >= 10.0 * dec,
        format!(
            "DecGMCA median per-source errors {:.3}% / {:.3}% / {:.3}% ({good} of 3 <= 1%); worst-source ForWaRD+GMCA {fwd:.2}% vs DecGMCA {dec:.2}% (ratio {:.1}, need >= 10)",
            medians[0],
            medians[1],
            medians[2],
            fwd / dec
        ),
    )
}

fn metric_consistency() -> Outcome {
    let mut r = rng(111);
    let mut worst: f64 = 0.0;
    let mut recovered = true;
    for _ in 0..20 {
        let (n_c, n_s, n_p) = (8, 3, 50);
        let a_ref = MixingMatrix::new(random_matrix(&mut r, n_c, n_s)).unwrap();
        let s_ref = SourceSet::new(random_matrix(&mut r, n_s, n_p)).unwrap();
        let a_est = a_ref.data() + &(random_matrix(&mut r, n_c, n_s) * 0.02);
        let s_est = s_ref.data() + &(random_matrix(&mut r, n_s, n_p) * 0.01);
        let score = |a: &Array2<f64>, s: &Array2<f64>| {
            let al = align(
                &MixingMatrix::new(a.clone()).unwrap(),
                &SourceSet::new(s.clone()).unwrap(),
                &a_ref,
            )
            .unwrap();
            (
                mixing_criterion(&al.aligned_mixing, &a_ref).unwrap(),
                sdr(&al.aligned_sources, &s_ref).unwrap(),
            )
        };
        let base = score(&a_est, &s_est);
        let mut perm: Vec<usize> = (0..n_s).collect();
        for i in (1..n_s).rev() {
            perm.swap(i, r.random_range(0..=i));
        }
        let signs: Vec<f64> = (0..n_s)
            .map(|_| if r.random_bool(0.5) { -1.0 } else { 1.0 })
            .collect();
        let mut a_perm = a_est.clone();
        let mut s_perm = s_est.clone();
        for j in 0..n_s {
            a_perm
                .column_mut(j)
                .assign(&a_est.column(perm[j]).mapv(|v| v * signs[j]));
            s_perm
                .row_mut(j)
                .assign(&s_est.row(perm[j]).mapv(|v| v * signs[j]));
        }
        let moved = score(&a_perm, &s_perm);
        worst = worst
            .max((base.0 - moved.0).abs())
            .max((base.1 - moved.1).abs());

        let exact = align(
            &MixingMatrix::new(a_perm.clone()).unwrap(),
            &SourceSet::new(s_perm).unwrap(),
            &a_ref,
        )
        .unwrap();
        let reordered: Vec<usize> = (0..n_s)
            .map(|j| perm.iter().position(|&p| p == j).unwrap())
            .collect();
        recovered &= exact.permutation == reordered;
    }
    let a = MixingMatrix::new(random_matrix(&mut r, 6, 3)).unwrap();
    let s = SourceSet::new(random_matrix(&mut r, 3, 10)).unwrap();
    for order in [
        [0, 1, 2],
        [0, 2, 1],
        [1, 0, 2],
        [1, 2, 0],
        [2, 0, 1],
        [2, 1, 0],
    ] {
        for bits in 0..8u32 {
            let signs: Vec<f64> = (0..3)
                .map(|j| if bits >> j & 1 == 1 { -1.0 } else { 1.0 })
                .collect();
            let moved = Array2::from_shape_fn((6, 3), |(i, j)| a.data()[[i, order[j]]] * signs[j]);
            let s_moved =
                Array2::from_shape_fn((3, 10), |(j, k)| s.data()[[order[j], k]] * signs[j]);
            let al = align(
                &MixingMatrix::new(moved).unwrap(),
                &SourceSet::new(s_moved).unwrap(),
                &a,
            )
            .unwrap();
            recovered &= al.aligned_mixing == a && al.aligned_sources == s;
        }
    }
    let perfect = mixing_criterion(&a, &a).unwrap();
    let pinv = DMatrix::from_fn(6, 3, |i, j| a.data()[[i, j]])
        .pseudo_inverse(1e-14)
        .unwrap();
    let gap = DMatrix::from_element(3, 3, 1e-3);
    let a_ref_mat =
        DMatrix::from_fn(6, 3, |i, j| a.data()[[i, j]]) * (DMatrix::identity(3, 3) + &gap);
    let a_ref =
        MixingMatrix::new(Array2::from_shape_fn((6, 3), |(i, j)| a_ref_mat[(i, j)])).unwrap();
    let three = mixing_criterion(&a, &a_ref).unwrap();
    let oracle = {
        let g = &pinv * &a_ref_mat - DMatrix::identity(3, 3);
        -(g.iter().map(|v| v.abs()).sum::<f64>() / 9.0).log10()
    };
    let cases =
        perfect == DELTA_A_CAP && (three - 3.0).abs() <= 1e-10 && (three - oracle).abs() <= 1e-8;
    outcome(
        worst <= 1e-10 && recovered && cases,
        format!(
            "signed-permutation drift {worst:.1e}, permutations recovered: {recovered}; perfect {perfect}, constructed {three:.12} (oracle {oracle:.12})"
        ),
    )
}

fn determinism() -> Outcome {
    let spec = SweepSpec {
        variable: SweepVariable::ActiveFraction,
        values: vec![0.5, 0.9],
        fixed: ExperimentSpec {
            n_samples: 256,
            k_active: 8,
            ..mask_spec(2, 0.5)
        },
        channel_counts: vec![6],
        methods: vec![Method::Decgmca, Method::McGmca, Method::Gmca],
        n_realizations: 3,
        seed: 12,
        method_config: MethodConfig::default(),
        record_timing: false,
    };
    let csv_with = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap();
        let result = pool.install(|| run_sweep(&spec)).unwrap();
        let mut buf = Vec::new();
        write_raw_csv(&result.records, &mut buf).unwrap();
        buf
    };
    let runs = [csv_with(1), csv_with(1), csv_with(4), csv_with(4)];
    let identical = runs.iter().all(|r| r == &runs[0]);
    outcome(
        identical,
        format!(
            "{} bytes of raw CSV, identical across runs and 1/4 threads: {identical}",
            runs[0].len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 12] = [
        ("source update oracle", source_update_oracle),
        ("mixing update oracle", mixing_update_oracle),
        ("transform exactness", transform_exactness),
        ("refinement gradient check", gradient_check),
        ("refinement descent", refinement_descent),
        ("easy-regime recovery", easy_regime),
        ("mask trend", mask_trend),
        ("method ordering, masks", mask_ordering),
        ("method ordering, PSFs", psf_ordering),
        ("masked-PSF contrast", masked_psf_contrast),
        ("metric self-consistency", metric_consistency),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let id = i + 1;
        if !filter.is_empty()
            && !filter
                .iter()
                .any(|f| f == &id.to_string() || name.contains(f.as_str()))
        {
            continue;
        }
        let result = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|_| outcome(false, "panicked".to_string()));
        if !result.passed {
            failed += 1;
        }
        println!(
            "[{}] {id:>2} {name}: {}",
            if result.passed { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    println!("acceptance: {failed} criteria failed");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
