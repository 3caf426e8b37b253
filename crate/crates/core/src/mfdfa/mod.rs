//! Multifractal detrended fluctuation analysis.
//!
//! The pipeline is: cumulative [`profile`] of the centered signal, per-window
//! detrended [`fluctuation`], q-order [`scaling_function`] over a grid of
//! scales, and log-log slopes ([`hurst_spectrum`]). Regressions use base-2
//! logarithms; slopes do not depend on the base but intercepts do.

mod export;
mod spectrum;

pub use export::{write_scaling_csv, write_spectrum_json, SpectrumReport};
pub use spectrum::{
    cohort_spectrum, focus_point, hq_distance, hurst_spectrum, scaling_diagnostics, single_window_focus,
    wasserstein_1d, CiMode, CohortSpectrum, FocusEstimate, HqDistanceMode, HurstSpectrum, ScalingDiagnostics,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats;

/// Moment orders used when none are given.
pub const DEFAULT_Q_GRID: [f64; 6] = [-5.0, -3.0, -1.0, 1.0, 3.0, 5.0];
/// Number of log-spaced scales in the default grid.
pub const DEFAULT_SCALE_COUNT: usize = 20;
/// Smallest scale in the default grid.
pub const DEFAULT_MIN_SCALE: usize = 16;
/// Squared relative residual below which a window counts as perfectly detrended.
const ROUNDING_FLOOR: f64 = 1e-26;

/// How the `q = 0` moment is treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum QZeroMode {
    /// Drop `q = 0` from the grid.
    #[default]
    Exclude,
    /// `exp(mean(ln F))`, the limit of the generalized mean as `q -> 0`.
    LogAverage,
}

/// Window placement along the profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum WindowMode {
    /// The first `floor(N / s)` blocks from the start.
    #[default]
    Forward,
    /// Blocks from the start and from the end, `2 floor(N / s)` in total.
    BothEnds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfdfaConfig {
    pub q_grid: Vec<f64>,
    pub scales: Vec<usize>,
    pub detrend_order: usize,
    pub q_zero: QZeroMode,
    pub windows: WindowMode,
}

impl MfdfaConfig {
    /// Default grids for a signal of `n` samples.
    pub fn for_length(n: usize) -> Self {
        Self {
            q_grid: DEFAULT_Q_GRID.to_vec(),
            scales: default_scales(n, 1),
            detrend_order: 1,
            q_zero: QZeroMode::Exclude,
            windows: WindowMode::Forward,
        }
    }

    pub fn with_q_grid(mut self, q: impl Into<Vec<f64>>) -> Self {
        self.q_grid = q.into();
        self
    }

    pub fn with_scales(mut self, scales: impl Into<Vec<usize>>) -> Self {
        self.scales = scales.into();
        self
    }

    /// q values actually evaluated after applying [`QZeroMode`].
    pub fn effective_q(&self) -> Vec<f64> {
        self.q_grid
            .iter()
            .copied()
            .filter(|&q| q != 0.0 || self.q_zero == QZeroMode::LogAverage)
            .collect()
    }

    /// Checks the grids against a signal length: scales strictly increasing,
    /// each in `[detrend_order + 2, n / 4]`, and a nonempty finite q grid.
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.effective_q().is_empty() {
            return Err(Error::invalid("q grid is empty"));
        }
        if self.q_grid.iter().any(|q| !q.is_finite()) {
            return Err(Error::invalid("q grid contains non-finite values"));
        }
        if self.scales.is_empty() {
            return Err(Error::invalid("scale grid is empty"));
        }
        if self.scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("scales must be strictly increasing"));
        }
        let lo = self.detrend_order + 2;
        if let Some(&s) = self.scales.iter().find(|&&s| s < lo || s > n / 4) {
            return Err(Error::invalid(format!(
                "scale {s} outside [{lo}, {}] for a signal of {n} samples",
                n / 4
            )));
        }
        Ok(())
    }
}

/// About [`DEFAULT_SCALE_COUNT`] log-spaced integer scales in `[16, n / 4]`
/// (duplicates after rounding removed).
pub fn default_scales(n: usize, detrend_order: usize) -> Vec<usize> {
    let hi = n / 4;
    let lo = DEFAULT_MIN_SCALE.min(hi).max(detrend_order + 2);
    if hi < lo {
        return Vec::new();
    }
    if hi == lo {
        return vec![lo];
    }
    let (llo, lhi) = ((lo as f64).ln(), (hi as f64).ln());
    let mut out: Vec<usize> = (0..DEFAULT_SCALE_COUNT)
        .map(|i| {
            let t = i as f64 / (DEFAULT_SCALE_COUNT - 1) as f64;
            (llo + t * (lhi - llo)).exp().round() as usize
        })
        .collect();
    out.dedup();
    out
}

/// Powers of two in `[16, n / 4]`. Boxes of these sizes line up with the
/// blocks of dyadic constructions such as the binomial cascade.
pub fn dyadic_scales(n: usize, detrend_order: usize) -> Vec<usize> {
    let lo = DEFAULT_MIN_SCALE.max(detrend_order + 2).next_power_of_two();
    std::iter::successors(Some(lo), |s| s.checked_mul(2))
        .take_while(|&s| s <= n / 4)
        .collect()
}

/// Cumulative sum of the mean-removed signal; same length as the input.
pub fn profile(x: &[f64]) -> Vec<f64> {
    let m = stats::mean(x);
    let mut acc = 0.0;
    x.iter()
        .map(|&v| {
            acc += v - m;
            acc
        })
        .collect()
}

/// Orthonormal polynomial basis (degrees `0..=order`) over `s` equispaced
/// points, built by modified Gram–Schmidt on a centered abscissa.
struct DetrendBasis {
    vectors: Vec<Vec<f64>>,
}

impl DetrendBasis {
    fn new(s: usize, order: usize) -> Self {
        let half = (s as f64 - 1.0) / 2.0;
        let scale = if half > 0.0 { 1.0 / half } else { 1.0 };
        let t: Vec<f64> = (0..s).map(|i| (i as f64 - half) * scale).collect();
        let mut vectors: Vec<Vec<f64>> = Vec::with_capacity(order + 1);
        for d in 0..=order {
            let mut v: Vec<f64> = t.iter().map(|&ti| ti.powi(d as i32)).collect();
            for _ in 0..2 {
                for b in &vectors {
                    let c: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                    v.iter_mut().zip(b).for_each(|(x, y)| *x -= c * y);
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= norm);
            vectors.push(v);
        }
        Self { vectors }
    }

    /// RMS of the least-squares residual of `y` against the basis.
    ///
    /// Residuals at rounding level relative to the window (an exact
    /// polynomial) are returned as exactly zero.
    fn rms_residual(&self, y: &[f64], scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        scratch.extend_from_slice(y);
        for b in &self.vectors {
            let c: f64 = scratch.iter().zip(b).map(|(x, q)| x * q).sum();
            scratch.iter_mut().zip(b).for_each(|(x, q)| *x -= c * q);
        }
        let ss: f64 = scratch.iter().map(|r| r * r).sum();
        let ss_y: f64 = y.iter().map(|v| v * v).sum();
        if ss <= ROUNDING_FLOOR * ss_y {
            return 0.0;
        }
        (ss / y.len() as f64).sqrt()
    }
}

fn check_scale(n: usize, s: usize, order: usize) -> Result<()> {
    if s < order + 2 {
        return Err(Error::invalid(format!(
            "scale {s} too small for detrending order {order} (need >= {})",
            order + 2
        )));
    }
    if s > n {
        return Err(Error::invalid(format!("scale {s} exceeds profile length {n}")));
    }
    Ok(())
}

/// Detrended fluctuation `F(v, s)` of each forward window of the profile.
pub fn fluctuation(profile: &[f64], scale: usize, order: usize) -> Result<Vec<f64>> {
    fluctuation_with(profile, scale, order, WindowMode::Forward)
}

pub fn fluctuation_with(profile: &[f64], scale: usize, order: usize, windows: WindowMode) -> Result<Vec<f64>> {
    check_scale(profile.len(), scale, order)?;
    let basis = DetrendBasis::new(scale, order);
    let ns = profile.len() / scale;
    let mut scratch = Vec::with_capacity(scale);
    let mut out: Vec<f64> = (0..ns)
        .map(|v| basis.rms_residual(&profile[v * scale..(v + 1) * scale], &mut scratch))
        .collect();
    if windows == WindowMode::BothEnds {
        let n = profile.len();
        out.extend((0..ns).map(|v| {
            let end = n - v * scale;
            basis.rms_residual(&profile[end - scale..end], &mut scratch)
        }));
    }
    Ok(out)
}

/// `S_F(q, s)` on a grid; `values[i][j]` is moment `q_grid[i]` at `scales[j]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFunction {
    pub q_grid: Vec<f64>,
    pub scales: Vec<usize>,
    pub values: Vec<Vec<f64>>,
    /// Windows averaged at each scale.
    pub n_windows: Vec<usize>,
    /// Length of the profile the function was computed from.
    pub signal_len: usize,
}

impl ScalingFunction {
    pub fn value(&self, qi: usize, si: usize) -> f64 {
        self.values[qi][si]
    }
}

/// Generalized mean of order `q` of positive-or-zero fluctuations, in log space.
fn log_moment(log_f: &[f64], q: f64, q_zero: QZeroMode) -> f64 {
    let n = log_f.len() as f64;
    if q == 0.0 {
        debug_assert_eq!(q_zero, QZeroMode::LogAverage);
        return stats::mean(log_f);
    }
    let scaled: Vec<f64> = log_f.iter().map(|&l| q * l).collect();
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let terms: Vec<f64> = scaled.iter().map(|&v| (v - max).exp()).collect();
    (max + (stats::pairwise_sum(&terms) / n).ln()) / q
}

/// Scaling function of a profile. Scales are checked against the hard
/// limits `order + 2 <= s <= N` only, so single-window evaluations at
/// `s = N` are allowed; use [`MfdfaConfig::validate`] for the `N / 4` rule.
pub fn scaling_function(profile: &[f64], cfg: &MfdfaConfig) -> Result<ScalingFunction> {
    let q_grid = cfg.effective_q();
    if q_grid.is_empty() {
        return Err(Error::invalid("q grid is empty"));
    }
    if cfg.scales.is_empty() {
        return Err(Error::invalid("scale grid is empty"));
    }
    for &s in &cfg.scales {
        check_scale(profile.len(), s, cfg.detrend_order)?;
    }
    let per_scale: Vec<Vec<f64>> = cfg
        .scales
        .par_iter()
        .map(|&s| fluctuation_with(profile, s, cfg.detrend_order, cfg.windows))
        .collect::<Result<_>>()?;

    let mut values = vec![vec![0.0; cfg.scales.len()]; q_grid.len()];
    for (si, f) in per_scale.iter().enumerate() {
        let log_f: Vec<f64> = f.iter().map(|v| v.ln()).collect();
        let zero = f.iter().position(|&v| v == 0.0);
        for (qi, &q) in q_grid.iter().enumerate() {
            if let Some(window) = zero {
                if q <= 0.0 {
                    return Err(Error::ZeroFluctuation {
                        window,
                        scale: cfg.scales[si],
                        q,
                    });
                }
            }
            let v = log_moment(&log_f, q, cfg.q_zero).exp();
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "scaling function is {v} at q = {q}, scale {}",
                    cfg.scales[si]
                )));
            }
            values[qi][si] = v;
        }
    }
    Ok(ScalingFunction {
        q_grid,
        scales: cfg.scales.clone(),
        values,
        n_windows: per_scale.iter().map(Vec::len).collect(),
        signal_len: profile.len(),
    })
}

/// Everything the MF-DFA pipeline produces for one signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfdfaResult {
    pub scaling: ScalingFunction,
    pub spectrum: HurstSpectrum,
    pub focus: FocusEstimate,
    pub diagnostics: ScalingDiagnostics,
}

/// Validates `cfg` for the signal and runs profile → scaling function →
/// spectrum → focus → diagnostics.
pub fn analyze(x: &[f64], cfg: &MfdfaConfig) -> Result<MfdfaResult> {
    if x.is_empty() || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("signal must be nonempty and finite"));
    }
    cfg.validate(x.len())?;
    let y = profile(x);
    let scaling = scaling_function(&y, cfg)?;
    let spectrum = hurst_spectrum(&scaling)?;
    let focus = focus_point(&scaling)?;
    let diagnostics = scaling_diagnostics(&scaling)?;
    Ok(MfdfaResult {
        scaling,
        spectrum,
        focus,
        diagnostics,
    })
}

/// Classical (q = 2) DFA scaling exponent over the given scales.
pub fn dfa_exponent(x: &[f64], scales: &[usize], order: usize) -> Result<stats::LineFit> {
    let cfg = MfdfaConfig {
        q_grid: vec![2.0],
        scales: scales.to_vec(),
        detrend_order: order,
        q_zero: QZeroMode::Exclude,
        windows: WindowMode::Forward,
    };
    cfg.validate(x.len())?;
    let sf = scaling_function(&profile(x), &cfg)?;
    let spec = hurst_spectrum(&sf)?;
    Ok(stats::LineFit {
        slope: spec.h[0],
        intercept: spec.intercepts[0],
        mse: spec.fit_mse[0],
    })
}
