use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::estimate::{build_regression, min_coupling_length, ridge_solve, CouplingOptions};
use crate::error::{Error, Result};
use crate::mfdfa::wasserstein_1d;
use crate::signal::MultichannelRecord;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergencePoint {
    /// Prefix duration in seconds.
    pub seconds: f64,
    /// W1 distance between the n² entries of `A(t)` and `A(t + step)`.
    pub distance: f64,
}

/// Tracks how the estimated coupling settles as the record grows.
///
/// Prefix lengths are multiples of `step_seconds`, starting from the first one
/// long enough to estimate `A`. The prefix one step beyond the record end is
/// clamped to the full record, which yields distance 0 at the last point
/// when the two coincide.
pub fn coupling_convergence(
    record: &MultichannelRecord,
    alpha: &[f64],
    opts: &CouplingOptions,
    step_seconds: f64,
) -> Result<Vec<ConvergencePoint>> {
    if !(step_seconds > 0.0 && step_seconds.is_finite()) {
        return Err(Error::invalid("convergence step must be positive"));
    }
    let rate = record.rate_hz();
    let step = (step_seconds * rate).round() as usize;
    if step == 0 {
        return Err(Error::invalid(format!(
            "convergence step of {step_seconds} s is shorter than one sample at {rate} Hz"
        )));
    }
    let t = record.len();
    let min_len = min_coupling_length(record.n_channels(), opts.horizon);
    let first = min_len.div_ceil(step).max(1) * step;
    if first > t {
        return Err(Error::invalid(format!(
            "record of {t} samples is shorter than the first usable prefix of {first}"
        )));
    }
    let mut lengths: Vec<usize> = (first..=t).step_by(step).collect();
    let tail = (lengths[lengths.len() - 1] + step).min(t);
    lengths.push(tail);
    lengths.dedup();

    let fits: Vec<Vec<f64>> = lengths
        .par_iter()
        .map(|&len| {
            let prefix = record.slice(0..len)?;
            let reg = build_regression(&prefix, alpha, opts)?;
            Ok(ridge_solve(&reg.z, &reg.x, opts.ridge)?.0.iter().copied().collect())
        })
        .collect::<Result<_>>()?;

    let mut out = Vec::with_capacity(lengths.len());
    for (i, &len) in lengths.iter().enumerate() {
        if len % step != 0 {
            // the clamped tail exists only as the partner of the last prefix
            break;
        }
        let next = fits.get(i + 1).unwrap_or(&fits[i]);
        out.push(ConvergencePoint {
            seconds: len as f64 / rate,
            distance: wasserstein_1d(&fits[i], next)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fracdyn::{simulate, SimulationOptions};
    use crate::signal::synth::random_stable_model;

    #[test]
    fn distances_shrink_and_end_at_zero() {
        let model = random_stable_model(3, 4).unwrap();
        let opts = SimulationOptions {
            steps: 4000,
            horizon: 50,
            seed: 6,
            rate_hz: 10.0,
        };
        let rec = simulate(&model, &opts, None, None).unwrap();
        let pts = coupling_convergence(&rec, &model.alpha, &CouplingOptions::default(), 10.0).unwrap();
        assert_eq!(pts.first().unwrap().seconds, 10.0);
        assert_eq!(pts.last().unwrap().seconds, 400.0);
        assert_eq!(pts.last().unwrap().distance, 0.0);
        assert!(pts.iter().all(|p| p.distance >= 0.0));
        let early = pts[0].distance;
        let late = pts[pts.len() - 2].distance;
        assert!(late < early, "{early} -> {late}");
    }

    #[test]
    fn partial_tail_is_used_as_partner() {
        let model = random_stable_model(2, 1).unwrap();
        let opts = SimulationOptions {
            steps: 1050,
            horizon: 50,
            seed: 2,
            rate_hz: 1.0,
        };
        let rec = simulate(&model, &opts, None, None).unwrap();
        let pts = coupling_convergence(&rec, &model.alpha, &CouplingOptions::default(), 100.0).unwrap();
        assert_eq!(pts.len(), 10);
        assert_eq!(pts.last().unwrap().seconds, 1000.0);
        assert!(pts.last().unwrap().distance > 0.0);
    }

    #[test]
    fn rejects_bad_step() {
        let model = random_stable_model(2, 1).unwrap();
        let opts = SimulationOptions {
            steps: 500,
            horizon: 50,
            seed: 2,
            rate_hz: 1.0,
        };
        let rec = simulate(&model, &opts, None, None).unwrap();
        assert!(coupling_convergence(&rec, &model.alpha, &CouplingOptions::default(), 0.0).is_err());
        assert!(coupling_convergence(&rec, &model.alpha, &CouplingOptions::default(), 0.2).is_err());
    }
}
