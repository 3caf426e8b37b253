use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{frac_difference, FractionalModel};
use crate::error::{Error, Result};
use crate::mfdfa::{default_scales, dfa_exponent};
use crate::signal::MultichannelRecord;
use crate::stats;

/// Shortest series accepted by [`estimate_alpha`].
pub const MIN_ALPHA_LENGTH: usize = 1 << 8;
/// DFA fits with a mean squared log2 residual above this are flagged.
pub const ALPHA_MSE_THRESHOLD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaEstimate {
    pub alpha: f64,
    /// q = 2 DFA scaling exponent the order was derived from.
    pub hurst: f64,
    pub fit_mse: f64,
    pub low_confidence: bool,
}

/// Fractional order of one channel as `H_DFA - 0.5`, with `H_DFA` the
/// q = 2 DFA-1 exponent over the default scale grid.
pub fn estimate_alpha(x: &[f64]) -> Result<AlphaEstimate> {
    if x.len() < MIN_ALPHA_LENGTH {
        return Err(Error::invalid(format!(
            "order estimation needs at least {MIN_ALPHA_LENGTH} samples, got {}",
            x.len()
        )));
    }
    let fit = dfa_exponent(x, &default_scales(x.len(), 1), 1)?;
    Ok(AlphaEstimate {
        alpha: fit.slope - 0.5,
        hurst: fit.slope,
        fit_mse: fit.mse,
        low_confidence: fit.mse > ALPHA_MSE_THRESHOLD,
    })
}

/// Per-channel orders of a record, in channel order.
pub fn estimate_alphas(record: &MultichannelRecord) -> Result<Vec<AlphaEstimate>> {
    record
        .channels()
        .par_iter()
        .map(|c| estimate_alpha(c.samples()))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CouplingOptions {
    /// Grünwald–Letnikov memory horizon `J`.
    pub horizon: usize,
    /// Ridge factor relative to the mean diagonal of the Gram matrix.
    pub ridge: f64,
    /// Subtract each channel's mean before fitting.
    pub center: bool,
    /// Divide each channel by its standard deviation before fitting.
    pub normalize: bool,
}

impl Default for CouplingOptions {
    fn default() -> Self {
        Self {
            horizon: 50,
            ridge: 1e-6,
            center: true,
            normalize: true,
        }
    }
}

/// Regression problem `Z ≈ A X` assembled from a record.
pub(crate) struct Regression {
    /// Fractional differences `Δ^α x[k+1]`, n × m.
    pub z: DMatrix<f64>,
    /// Lagged states `x[k]`, n × m.
    pub x: DMatrix<f64>,
    /// Index `k` of the first regression column.
    pub first_step: usize,
}

pub(crate) fn min_coupling_length(n: usize, horizon: usize) -> usize {
    horizon + 10 * n + 1
}

pub(crate) fn build_regression(
    record: &MultichannelRecord,
    alpha: &[f64],
    opts: &CouplingOptions,
) -> Result<Regression> {
    let n = record.n_channels();
    let t = record.len();
    if alpha.len() != n {
        return Err(Error::invalid(format!("{} orders given for {n} channels", alpha.len())));
    }
    if !(opts.ridge >= 0.0 && opts.ridge.is_finite()) {
        return Err(Error::invalid("ridge must be finite and nonnegative"));
    }
    if t < min_coupling_length(n, opts.horizon) {
        return Err(Error::invalid(format!(
            "record of {t} samples too short: coupling estimation needs more than {} (J + 10 n)",
            opts.horizon + 10 * n
        )));
    }
    let prepared: Vec<Vec<f64>> = record
        .channels()
        .iter()
        .map(|ch| {
            let s = ch.samples();
            let mean = if opts.center { stats::mean(s) } else { 0.0 };
            let sd = if opts.normalize {
                let sd = stats::population_std(s);
                if sd <= 0.0 {
                    return Err(Error::invalid(format!("channel `{}` is constant", ch.label())));
                }
                sd
            } else {
                1.0
            };
            Ok(s.iter().map(|v| (v - mean) / sd).collect())
        })
        .collect::<Result<_>>()?;

    let first_step = opts.horizon.min(t - 2);
    let m = t - 1 - first_step;
    let mut z = DMatrix::zeros(n, m);
    let mut x = DMatrix::zeros(n, m);
    for (i, ch) in prepared.iter().enumerate() {
        let d = frac_difference(ch, alpha[i], opts.horizon);
        for c in 0..m {
            let k = first_step + c;
            z[(i, c)] = d[k + 1];
            x[(i, c)] = ch[k];
        }
    }
    Ok(Regression { z, x, first_step })
}

/// Ridge least squares `argmin_A |Y - A X|^2 + λ |A|^2` with
/// `λ = ridge * trace(X Xᵀ) / n`. Returns `A` and `λ`.
pub(crate) fn ridge_solve(y: &DMatrix<f64>, x: &DMatrix<f64>, ridge: f64) -> Result<(DMatrix<f64>, f64)> {
    let n = x.nrows();
    let mut gram = x * x.transpose();
    let lambda = ridge * gram.trace() / n as f64;
    for i in 0..n {
        gram[(i, i)] += lambda;
    }
    let rhs = x * y.transpose();
    let chol = gram.cholesky().ok_or_else(|| {
        Error::Singular(if ridge == 0.0 {
            "regressors are collinear; use ridge > 0".into()
        } else {
            "Gram matrix not positive definite".into()
        })
    })?;
    let pivots = chol.l_dirty().diagonal();
    let (lo, hi) = pivots
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo * lo > 1e-13 * hi * hi) {
        return Err(Error::Singular(if ridge == 0.0 {
            "regressors are collinear; use ridge > 0".into()
        } else {
            "Gram matrix is numerically singular".into()
        }));
    }
    let at = chol.solve(&rhs);
    if at.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("solution is not finite; use ridge > 0".into()));
    }
    Ok((at.transpose(), lambda))
}

/// Least-squares coupling matrix: each row `i` regresses `Δ^{α_i} x_i[k+1]`
/// on `x[k]`. The first `J` steps are skipped so every target sees the full
/// memory horizon.
pub fn estimate_coupling(record: &MultichannelRecord, alpha: &[f64], opts: &CouplingOptions) -> Result<DMatrix<f64>> {
    let reg = build_regression(record, alpha, opts)?;
    Ok(ridge_solve(&reg.z, &reg.x, opts.ridge)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnknownInputOptions {
    /// Number of unknown input channels `p` (< n).
    pub inputs: usize,
    pub max_iter: usize,
    /// Stop once `|A_new - A_old|_F / |A_old|_F` falls below this.
    pub tol: f64,
    /// Input samples smaller than this many robust noise deviations are
    /// attributed to noise.
    pub threshold_sigmas: f64,
    pub coupling: CouplingOptions,
}

impl Default for UnknownInputOptions {
    fn default() -> Self {
        Self {
            inputs: 1,
            max_iter: 50,
            tol: 1e-6,
            threshold_sigmas: 3.0,
            coupling: CouplingOptions::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EstimationReport {
    /// Estimated model; `input` has orthonormal columns and `noise_scale` is
    /// the RMS of the final residual.
    pub model: FractionalModel,
    /// Estimated input sequence, p × m, aligned with steps
    /// `first_step..first_step + m`.
    pub inputs: Vec<Vec<f64>>,
    pub first_step: usize,
    /// Square root of the penalized objective after each sweep; entry 0 is the
    /// input-blind fit.
    pub residual_norm: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Coupling estimation in the presence of `p` unknown sparse inputs.
///
/// Minimizes `|Z - A X - B U|^2 + λ|A|^2 + τ^2 nnz(U)` over `A`, `B`
/// (orthonormal columns) and `U` by block coordinate descent, starting from
/// the input-blind fit:
///
/// * `U = hard_threshold(Bᵀ R, τ)` with `R = Z - A X`,
/// * `B = polar(R Uᵀ)` (orthogonal Procrustes),
/// * `A` = ridge least squares of `Z - B U` on `X`.
///
/// Each step solves its block exactly, so the objective never increases.
/// `τ` is `threshold_sigmas` robust (MAD) deviations of `Bᵀ R` at the start.
/// With `p = 0` the result equals [`estimate_coupling`].
pub fn estimate_with_unknown_input(
    record: &MultichannelRecord,
    alpha: &[f64],
    opts: &UnknownInputOptions,
) -> Result<EstimationReport> {
    let n = record.n_channels();
    let p = opts.inputs;
    if p >= n {
        return Err(Error::invalid(format!(
            "input count {p} must be smaller than {n} channels"
        )));
    }
    let reg = build_regression(record, alpha, &opts.coupling)?;
    let (z, x) = (&reg.z, &reg.x);
    let m = z.ncols();
    let (mut a, lambda) = ridge_solve(z, x, opts.coupling.ridge)?;
    let mut r = z - &a * x;
    let objective = |fit_resid: &DMatrix<f64>, a: &DMatrix<f64>, nnz: usize, tau: f64| {
        (fit_resid.norm_squared() + lambda * a.norm_squared() + tau * tau * nnz as f64).sqrt()
    };

    if p == 0 {
        let res = objective(&r, &a, 0, 0.0);
        let noise = (r.norm_squared() / (n * m) as f64).sqrt();
        return Ok(EstimationReport {
            model: FractionalModel::new(alpha.to_vec(), a, DMatrix::zeros(n, 0), noise)?,
            inputs: Vec::new(),
            first_step: reg.first_step,
            residual_norm: vec![res],
            iterations: 0,
            converged: true,
        });
    }

    // leading eigenvectors of R Rᵀ span the dominant residual directions
    let eig = SymmetricEigen::new(&r * r.transpose());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut b = DMatrix::zeros(n, p);
    for (c, &i) in order[..p].iter().enumerate() {
        b.set_column(c, &eig.eigenvectors.column(i));
    }

    let projected = b.transpose() * &r;
    let abs: Vec<f64> = projected.iter().map(|v| v.abs()).collect();
    let mad = stats::quantile_sorted(&stats::sorted(&abs), 0.5);
    let tau = opts.threshold_sigmas * 1.4826 * mad;

    let mut u = DMatrix::zeros(p, m);
    let mut history = vec![objective(&r, &a, 0, tau)];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        let proj = b.transpose() * &r;
        u = proj.map(|v| if v.abs() > tau { v } else { 0.0 });
        let cross = &r * u.transpose();
        if cross.norm() > 0.0 {
            let svd = cross.svd(true, true);
            let (w, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v_t requested"));
            b = w * vt;
        }
        let bu = &b * &u;
        let (a_new, _) = ridge_solve(&(z - &bu), x, opts.coupling.ridge)?;
        let change = (&a_new - &a).norm() / a.norm().max(f64::MIN_POSITIVE);
        a = a_new;
        r = z - &a * x;
        let nnz = u.iter().filter(|v| **v != 0.0).count();
        let value = objective(&(&r - &bu), &a, nnz, tau);
        let prev = *history.last().expect("history starts nonempty");
        history.push(value);
        if value > prev * (1.0 + 1e-10) {
            break;
        }
        if change < opts.tol {
            converged = true;
            break;
        }
    }

    let final_fit = &r - &b * &u;
    let noise = (final_fit.norm_squared() / (n * m) as f64).sqrt();
    Ok(EstimationReport {
        model: FractionalModel::new(alpha.to_vec(), a, b, noise)?,
        inputs: (0..p).map(|c| u.row(c).iter().copied().collect()).collect(),
        first_step: reg.first_step,
        residual_norm: history,
        iterations,
        converged,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracdyn::{simulate, SimulationOptions};
    use crate::signal::synth::random_stable_model;

    fn simulate_model(model: &FractionalModel, steps: usize, seed: u64) -> MultichannelRecord {
        let opts = SimulationOptions {
            steps,
            horizon: 50,
            seed,
            rate_hz: 1.0,
        };
        simulate(model, &opts, None, None).unwrap()
    }

    fn raw() -> CouplingOptions {
        CouplingOptions {
            normalize: false,
            ..CouplingOptions::default()
        }
    }

    #[test]
    fn exact_trajectory_recovers_coupling() {
        let mut model = random_stable_model(4, 3).unwrap();
        model.noise_scale = 0.0;
        let opts = SimulationOptions {
            steps: 400,
            horizon: 50,
            seed: 0,
            rate_hz: 1.0,
        };
        let rec = simulate(&model, &opts, None, Some(&[1.0, -2.0, 0.5, 3.0])).unwrap();
        let est = estimate_coupling(
            &rec,
            &model.alpha,
            &CouplingOptions {
                center: false,
                normalize: false,
                ridge: 0.0,
                ..CouplingOptions::default()
            },
        );
        let est = est.unwrap();
        let rel = (&est - &model.coupling).norm() / model.coupling.norm();
        assert!(rel < 1e-8, "relative error {rel}");
    }

    #[test]
    fn singular_without_ridge() {
        let wave: Vec<f64> = (0..200).map(|v| (v as f64 * 0.3).sin()).collect();
        let dup = MultichannelRecord::from_columns(vec![wave.clone(), wave], 1.0).unwrap();
        let opts = CouplingOptions {
            ridge: 0.0,
            center: false,
            normalize: false,
            horizon: 10,
        };
        match estimate_coupling(&dup, &[0.5, 0.5], &opts) {
            Err(Error::Singular(msg)) => assert!(msg.contains("ridge")),
            other => panic!("unexpected {other:?}"),
        }
        let ridged = CouplingOptions { ridge: 1e-6, ..opts };
        assert!(estimate_coupling(&dup, &[0.5, 0.5], &ridged).is_ok());
    }

    #[test]
    fn too_short_record() {
        let rec = MultichannelRecord::from_columns(vec![vec![0.0; 60]; 2], 1.0).unwrap();
        assert!(estimate_coupling(&rec, &[0.5, 0.5], &CouplingOptions::default()).is_err());
    }

    #[test]
    fn permutation_equivariance() {
        let model = random_stable_model(5, 11).unwrap();
        let rec = simulate_model(&model, 3000, 2);
        let a = estimate_coupling(&rec, &model.alpha, &CouplingOptions::default()).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let prec = rec.permuted(&perm).unwrap();
        let palpha: Vec<f64> = perm.iter().map(|&i| model.alpha[i]).collect();
        let pa = estimate_coupling(&prec, &palpha, &CouplingOptions::default()).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert!((pa[(i, j)] - a[(perm[i], perm[j])]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn offset_invariance_under_centering() {
        let model = random_stable_model(3, 5).unwrap();
        let rec = simulate_model(&model, 2000, 9);
        let shifted = MultichannelRecord::from_columns(
            rec.channels()
                .iter()
                .map(|c| c.samples().iter().map(|v| v + 7.5).collect())
                .collect(),
            1.0,
        )
        .unwrap();
        for opts in [raw(), CouplingOptions::default()] {
            let a = estimate_coupling(&rec, &model.alpha, &opts).unwrap();
            let b = estimate_coupling(&shifted, &model.alpha, &opts).unwrap();
            assert!((&a - &b).norm() < 1e-9 * a.norm());
        }
    }

    #[test]
    fn normalization_is_a_similarity_transform() {
        let model = random_stable_model(4, 21).unwrap();
        let rec = simulate_model(&model, 3000, 4);
        let raw_a = estimate_coupling(&rec, &model.alpha, &CouplingOptions { ridge: 0.0, ..raw() }).unwrap();
        let norm_a = estimate_coupling(
            &rec,
            &model.alpha,
            &CouplingOptions {
                ridge: 0.0,
                ..CouplingOptions::default()
            },
        )
        .unwrap();
        let sd: Vec<f64> = rec
            .channels()
            .iter()
            .map(|c| stats::population_std(c.samples()))
            .collect();
        for i in 0..4 {
            for j in 0..4 {
                let expect = raw_a[(i, j)] * sd[j] / sd[i];
                assert!((norm_a[(i, j)] - expect).abs() < 1e-9, "{i},{j}");
            }
        }
    }

    #[test]
    fn zero_inputs_match_plain_estimate() {
        let model = random_stable_model(4, 8).unwrap();
        let rec = simulate_model(&model, 2000, 1);
        let plain = estimate_coupling(&rec, &model.alpha, &CouplingOptions::default()).unwrap();
        let rep = estimate_with_unknown_input(
            &rec,
            &model.alpha,
            &UnknownInputOptions {
                inputs: 0,
                ..UnknownInputOptions::default()
            },
        )
        .unwrap();
        assert_eq!(rep.model.coupling, plain);
        assert!(rep.converged);
        assert!(estimate_with_unknown_input(
            &rec,
            &model.alpha,
            &UnknownInputOptions {
                inputs: 4,
                ..UnknownInputOptions::default()
            }
        )
        .is_err());
    }

    #[test]
    fn residual_nonincreasing() {
        let model = random_stable_model(4, 8).unwrap();
        let rec = simulate_model(&model, 3000, 1);
        let rep = estimate_with_unknown_input(&rec, &model.alpha, &UnknownInputOptions::default()).unwrap();
        for w in rep.residual_norm.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-10), "{:?}", rep.residual_norm);
        }
        assert_eq!(rep.model.input.ncols(), 1);
        assert!((rep.model.input.column(0).norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn alpha_requires_length() {
        assert!(estimate_alpha(&[0.0; 100]).is_err());
    }
}
