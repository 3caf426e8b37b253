use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use super::{fluctuation, ScalingFunction};
use crate::error::{Error, Result};
use crate::stats;

/// Generalized Hurst exponents: per-q slope of `log2 S_F` against `log2 s`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HurstSpectrum {
    pub q_grid: Vec<f64>,
    pub h: Vec<f64>,
    pub intercepts: Vec<f64>,
    pub fit_mse: Vec<f64>,
}

impl HurstSpectrum {
    /// `H(q) > 0.5` for every q.
    pub fn long_range_dependent(&self) -> bool {
        self.h.iter().all(|&h| h > 0.5)
    }

    pub fn at(&self, q: f64) -> Option<f64> {
        self.q_grid.iter().position(|&x| x == q).map(|i| self.h[i])
    }
}

pub fn hurst_spectrum(sf: &ScalingFunction) -> Result<HurstSpectrum> {
    if sf.scales.len() < 3 {
        return Err(Error::invalid(format!(
            "need at least 3 scales for a spectrum, got {}",
            sf.scales.len()
        )));
    }
    let log_s: Vec<f64> = sf.scales.iter().map(|&s| (s as f64).log2()).collect();
    let mut out = HurstSpectrum {
        q_grid: sf.q_grid.clone(),
        h: Vec::with_capacity(sf.q_grid.len()),
        intercepts: Vec::with_capacity(sf.q_grid.len()),
        fit_mse: Vec::with_capacity(sf.q_grid.len()),
    };
    for row in &sf.values {
        let log_f: Vec<f64> = row.iter().map(|v| v.log2()).collect();
        let fit =
            stats::fit_line(&log_s, &log_f).ok_or_else(|| Error::invalid("degenerate scale grid: all scales equal"))?;
        out.h.push(fit.slope);
        out.intercepts.push(fit.intercept);
        out.fit_mse.push(fit.mse);
    }
    Ok(out)
}

/// Fitted scaling lines extrapolated to the full signal length `L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FocusEstimate {
    pub scale: usize,
    /// Extrapolated `S(q, L)` per q.
    pub values: Vec<f64>,
    /// `max / min` of `values`; close to 1 when the lines share a focus.
    pub spread: f64,
}

pub fn focus_point(sf: &ScalingFunction) -> Result<FocusEstimate> {
    let spec = hurst_spectrum(sf)?;
    let log_l = (sf.signal_len as f64).log2();
    let values: Vec<f64> = spec
        .h
        .iter()
        .zip(&spec.intercepts)
        .map(|(h, b)| (b + h * log_l).exp2())
        .collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(FocusEstimate {
        scale: sf.signal_len,
        values,
        spread: max / min,
    })
}

/// Exact scaling function at `s = L`: a single window, so every q gives
/// the same value `F(1, L)`.
pub fn single_window_focus(profile: &[f64], order: usize) -> Result<f64> {
    Ok(fluctuation(profile, profile.len(), order)?[0])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CiMode {
    /// Student-t with `n - 1` degrees of freedom.
    #[default]
    StudentT,
    /// Normal approximation, for large cohorts.
    Normal,
}

/// Per-q mean of a cohort's spectra with a two-sided 95% interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSpectrum {
    pub q_grid: Vec<f64>,
    pub mean: Vec<f64>,
    pub half_width: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub n: usize,
}

pub fn cohort_spectrum(spectra: &[HurstSpectrum], mode: CiMode) -> Result<CohortSpectrum> {
    let first = match spectra {
        [] | [_] => return Err(Error::invalid("cohort spectrum needs at least 2 spectra")),
        [first, ..] => first,
    };
    if spectra.iter().any(|s| s.q_grid != first.q_grid) {
        return Err(Error::invalid("spectra have mismatched q grids"));
    }
    let n = spectra.len();
    let crit = match mode {
        CiMode::StudentT => StudentsT::new(0.0, 1.0, (n - 1) as f64)
            .map_err(|e| Error::Numerical(e.to_string()))?
            .inverse_cdf(0.975),
        CiMode::Normal => Normal::standard().inverse_cdf(0.975),
    };
    let mut out = CohortSpectrum {
        q_grid: first.q_grid.clone(),
        mean: Vec::new(),
        half_width: Vec::new(),
        lower: Vec::new(),
        upper: Vec::new(),
        n,
    };
    for qi in 0..first.q_grid.len() {
        let vals: Vec<f64> = spectra.iter().map(|s| s.h[qi]).collect();
        let m = stats::mean(&vals);
        let hw = crit * stats::sample_std(&vals) / (n as f64).sqrt();
        out.mean.push(m);
        out.half_width.push(hw);
        out.lower.push(m - hw);
        out.upper.push(m + hw);
    }
    Ok(out)
}

/// First Wasserstein distance between two empirical distributions.
///
/// Computed exactly as the integral of `|F_a - F_b|` over the merged
/// support; for equal sample counts this is the mean absolute difference
/// of the sorted samples.
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("Wasserstein distance of an empty sample"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::invalid("Wasserstein distance of non-finite samples"));
    }
    let (sa, sb) = (stats::sorted(a), stats::sorted(b));
    if sa.len() == sb.len() {
        let d: Vec<f64> = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).collect();
        return Ok(stats::pairwise_sum(&d) / sa.len() as f64);
    }
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut total = 0.0;
    let mut prev = sa[0].min(sb[0]);
    while i < sa.len() || j < sb.len() {
        let next = match (sa.get(i), sb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < sa.len() && sa[i] == next {
            i += 1;
        }
        while j < sb.len() && sb[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// How two cohorts' H(q) curves are compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HqDistanceMode {
    /// The mean curves' H values across the shared q grid form the two
    /// distributions.
    #[default]
    QSamples,
    /// For each q, compare the distributions of H(q) over subjects, then
    /// average over q.
    Patients,
}

pub fn hq_distance(a: &[HurstSpectrum], b: &[HurstSpectrum], mode: HqDistanceMode) -> Result<f64> {
    let grid = &a.first().ok_or_else(|| Error::invalid("empty cohort"))?.q_grid;
    if b.is_empty() {
        return Err(Error::invalid("empty cohort"));
    }
    if a.iter().chain(b).any(|s| &s.q_grid != grid) {
        return Err(Error::invalid("spectra have mismatched q grids"));
    }
    let column = |set: &[HurstSpectrum], qi: usize| -> Vec<f64> { set.iter().map(|s| s.h[qi]).collect() };
    match mode {
        HqDistanceMode::QSamples => {
            let mean_curve = |set: &[HurstSpectrum]| -> Vec<f64> {
                (0..grid.len()).map(|qi| stats::mean(&column(set, qi))).collect()
            };
            wasserstein_1d(&mean_curve(a), &mean_curve(b))
        }
        HqDistanceMode::Patients => {
            let mut total = 0.0;
            for qi in 0..grid.len() {
                total += wasserstein_1d(&column(a, qi), &column(b, qi))?;
            }
            Ok(total / grid.len() as f64)
        }
    }
}

/// Spread of the scaling function across q and across scales.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingDiagnostics {
    /// Population std of `S_F(., s)` across q, one entry per scale.
    pub cross_q_std: Vec<f64>,
    /// Population std of `S_F(q, .)` across scales, one entry per q.
    pub cross_scale_std: Vec<f64>,
    /// Cross-q std of the fitted lines extrapolated to `s = L`.
    pub focus_cross_q_std: f64,
    pub fit_mse: Vec<f64>,
}

pub fn scaling_diagnostics(sf: &ScalingFunction) -> Result<ScalingDiagnostics> {
    let cross_q_std = (0..sf.scales.len())
        .map(|si| {
            let col: Vec<f64> = sf.values.iter().map(|row| row[si]).collect();
            stats::population_std(&col)
        })
        .collect();
    let cross_scale_std = sf.values.iter().map(|row| stats::population_std(row)).collect();
    let (focus_cross_q_std, fit_mse) = if sf.scales.len() >= 3 {
        let focus = focus_point(sf)?;
        (stats::population_std(&focus.values), hurst_spectrum(sf)?.fit_mse)
    } else {
        (0.0, Vec::new())
    };
    Ok(ScalingDiagnostics {
        cross_q_std,
        cross_scale_std,
        focus_cross_q_std,
        fit_mse,
    })
}
