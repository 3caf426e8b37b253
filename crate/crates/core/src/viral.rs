//! Early detection of an infection from the drift of fractional orders.
//!
//! Each subject's record is cut at the (assumed) inoculation index. Sliding
//! windows on either side give samples of the per-channel fractional order
//! `α`, and the KL divergence between the pre- and post-split `α`
//! distributions is the single feature of a leave-one-out threshold
//! classifier.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, Normal};

use crate::error::{Error, Result};
use crate::fracdyn::{estimate_alpha, estimate_coupling, CouplingOptions};
use crate::signal::load_record;
use crate::signal::synth::{rng_from_seed, synth_fgn};
use crate::signal::{MultichannelRecord, TimeSeries};
use crate::stats;

/// Windows required on each side of the split.
pub const MIN_WINDOWS: usize = 5;
/// Points of the shared density grid.
pub const KL_GRID_POINTS: usize = 512;
/// Floor applied to discretized densities before taking logarithms.
pub const DENSITY_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub window_len: usize,
    pub stride: usize,
    /// Samples compared on each side of a split; `None` uses everything
    /// before and after it.
    pub side_len: Option<usize>,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            window_len: 3000,
            stride: 100,
            side_len: None,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.window_len < 1 << 8 {
            return Err(Error::invalid(format!(
                "window length {} is below 256",
                self.window_len
            )));
        }
        if self.stride == 0 || self.stride > self.window_len {
            return Err(Error::invalid("stride must lie in [1, window_len]"));
        }
        if self.side_len.is_some_and(|d| d < self.window_len) {
            return Err(Error::invalid("side length must hold at least one window"));
        }
        Ok(())
    }

    /// Windows that fit in `len` samples: `floor((len - L) / stride) + 1`.
    pub fn count(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            (len - self.window_len) / self.stride + 1
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectCase {
    pub subject_id: String,
    pub record: MultichannelRecord,
    pub inoculation_index: usize,
    pub infected: bool,
}

impl SubjectCase {
    pub fn new(
        subject_id: impl Into<String>,
        record: MultichannelRecord,
        inoculation_index: usize,
        infected: bool,
    ) -> Result<Self> {
        let subject_id = subject_id.into();
        if inoculation_index == 0 || inoculation_index >= record.len() {
            return Err(Error::invalid(format!(
                "subject `{subject_id}`: inoculation index {inoculation_index} not inside a record of {} samples",
                record.len()
            )));
        }
        Ok(Self {
            subject_id,
            record,
            inoculation_index,
            infected,
        })
    }
}

/// Per-channel `α` of every window, keyed by window start. Windows are
/// computed on demand and reused across split points.
#[derive(Debug, Default)]
pub struct AlphaCache {
    windows: BTreeMap<usize, Vec<f64>>,
}

impl AlphaCache {
    fn get(&mut self, record: &MultichannelRecord, start: usize, len: usize) -> Result<&[f64]> {
        if let std::collections::btree_map::Entry::Vacant(slot) = self.windows.entry(start) {
            let alphas = record
                .channels()
                .iter()
                .map(|c| Ok(estimate_alpha(&c.samples()[start..start + len])?.alpha))
                .collect::<Result<Vec<_>>>()?;
            slot.insert(alphas);
        }
        Ok(&self.windows[&start])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowAlphas {
    /// One `α` per channel per window, window-major.
    pub pre: Vec<f64>,
    pub post: Vec<f64>,
    pub pre_windows: usize,
    pub post_windows: usize,
}

fn side_starts(spec: &WindowSpec, from: usize, to: usize) -> Vec<usize> {
    (0..spec.count(to - from)).map(|i| from + i * spec.stride).collect()
}

fn window_alphas_cached(
    case: &SubjectCase,
    spec: &WindowSpec,
    split: usize,
    cache: &mut AlphaCache,
) -> Result<WindowAlphas> {
    spec.validate()?;
    let n = case.record.len();
    let (from, to) = match spec.side_len {
        None => (0, n),
        Some(d) => (split.wrapping_sub(d), split + d),
    };
    if split == 0 || split >= n || from > split || to > n {
        return Err(Error::invalid(format!(
            "subject `{}`: split {split} with side length {:?} does not fit a record of {n} samples",
            case.subject_id, spec.side_len
        )));
    }
    let pre_starts = side_starts(spec, from, split);
    let post_starts = side_starts(spec, split, to);
    if pre_starts.len() < MIN_WINDOWS || post_starts.len() < MIN_WINDOWS {
        return Err(Error::invalid(format!(
            "subject `{}`: {} windows before and {} after the split, need {MIN_WINDOWS} on each side",
            case.subject_id,
            pre_starts.len(),
            post_starts.len()
        )));
    }
    let mut collect = |starts: &[usize]| -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(starts.len() * case.record.n_channels());
        for &s in starts {
            out.extend_from_slice(cache.get(&case.record, s, spec.window_len)?);
        }
        Ok(out)
    };
    Ok(WindowAlphas {
        pre: collect(&pre_starts)?,
        post: collect(&post_starts)?,
        pre_windows: pre_starts.len(),
        post_windows: post_starts.len(),
    })
}

/// Sliding-window orders before and after `split`, over `spec.side_len`
/// samples on each side when set; windows never straddle the split.
pub fn window_alphas(case: &SubjectCase, spec: &WindowSpec, split: usize) -> Result<WindowAlphas> {
    window_alphas_cached(case, spec, split, &mut AlphaCache::default())
}

/// Coupling matrix of every window, with the window's own orders.
pub fn window_couplings(
    case: &SubjectCase,
    spec: &WindowSpec,
    opts: &CouplingOptions,
) -> Result<Vec<(usize, DMatrix<f64>)>> {
    spec.validate()?;
    side_starts(spec, 0, case.record.len())
        .into_par_iter()
        .map(|s| {
            let w = case.record.slice(s..s + spec.window_len)?;
            let alpha = w
                .channels()
                .iter()
                .map(|c| Ok(estimate_alpha(c.samples())?.alpha))
                .collect::<Result<Vec<_>>>()?;
            Ok((s, estimate_coupling(&w, &alpha, opts)?))
        })
        .collect()
}

/// Silverman's rule of thumb `0.9 min(sd, IQR / 1.34) n^(-1/5)`.
pub fn silverman_bandwidth(x: &[f64]) -> f64 {
    let sorted = stats::sorted(x);
    let iqr = stats::quantile_sorted(&sorted, 0.75) - stats::quantile_sorted(&sorted, 0.25);
    let sd = stats::sample_std(x);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    0.9 * spread * (x.len() as f64).powf(-0.2)
}

fn discretized_kde(x: &[f64], h: f64, grid: &[f64]) -> Vec<f64> {
    let kernel = Normal::new(0.0, h).expect("bandwidth is positive");
    let raw: Vec<f64> = grid
        .iter()
        .map(|&g| x.iter().map(|&v| kernel.pdf(g - v)).sum::<f64>())
        .collect();
    let total: f64 = raw.iter().sum();
    let floored: Vec<f64> = raw.iter().map(|v| (v / total).max(DENSITY_FLOOR)).collect();
    let total: f64 = floored.iter().sum();
    floored.iter().map(|v| v / total).collect()
}

/// `KL(pre || post)` between Gaussian kernel density estimates evaluated on a
/// shared grid spanning both samples plus four bandwidths. Each sample uses
/// its own Silverman bandwidth unless `bandwidth` overrides both.
pub fn kl_feature(pre: &[f64], post: &[f64], bandwidth: Option<f64>) -> Result<f64> {
    if pre.len() < MIN_WINDOWS || post.len() < MIN_WINDOWS {
        return Err(Error::invalid(format!(
            "KL feature needs at least {MIN_WINDOWS} samples per side, got {} and {}",
            pre.len(),
            post.len()
        )));
    }
    if pre.iter().chain(post).any(|v| !v.is_finite()) {
        return Err(Error::invalid("KL feature samples must be finite"));
    }
    let pick = |x: &[f64]| -> Result<f64> {
        let h = bandwidth.unwrap_or_else(|| silverman_bandwidth(x));
        if h > 0.0 && h.is_finite() {
            Ok(h)
        } else {
            Err(Error::invalid("zero-variance sample; pass an explicit bandwidth"))
        }
    };
    let (hp, hq) = (pick(pre)?, pick(post)?);
    let lo = pre.iter().chain(post).copied().fold(f64::INFINITY, f64::min) - 4.0 * hp.max(hq);
    let hi = pre.iter().chain(post).copied().fold(f64::NEG_INFINITY, f64::max) + 4.0 * hp.max(hq);
    let step = (hi - lo) / (KL_GRID_POINTS - 1) as f64;
    let grid: Vec<f64> = (0..KL_GRID_POINTS).map(|i| lo + i as f64 * step).collect();
    let p = discretized_kde(pre, hp, &grid);
    let q = discretized_kde(post, hq, &grid);
    let kl: f64 = p.iter().zip(&q).map(|(a, b)| a * (a / b).ln()).sum();
    Ok(kl.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LooResult {
    pub predicted_infected: Vec<bool>,
    /// Infected subjects predicted healthy.
    pub type_i: usize,
    /// Healthy subjects predicted infected.
    pub type_ii: usize,
}

impl LooResult {
    pub fn total_errors(&self) -> usize {
        self.type_i + self.type_ii
    }
}

/// Leave-one-out threshold classifier: each held-out subject is compared with
/// the midpoint of the class-mean features of the others and assigned to the
/// class whose mean lies on its side.
pub fn classify_loo(features: &[f64], infected: &[bool]) -> Result<LooResult> {
    let n = features.len();
    if n < 3 || infected.len() != n {
        return Err(Error::invalid("leave-one-out needs at least 3 labeled subjects"));
    }
    let mut predicted = Vec::with_capacity(n);
    for held in 0..n {
        let (mut sum, mut count) = ([0.0; 2], [0usize; 2]);
        for i in (0..n).filter(|&i| i != held) {
            let c = usize::from(infected[i]);
            sum[c] += features[i];
            count[c] += 1;
        }
        if count.contains(&0) {
            return Err(Error::invalid(format!(
                "leaving out subject {held} leaves a single class in training"
            )));
        }
        let healthy = sum[0] / count[0] as f64;
        let sick = sum[1] / count[1] as f64;
        let mid = 0.5 * (healthy + sick);
        let f = features[held];
        predicted.push(if sick >= healthy { f > mid } else { f < mid });
    }
    let type_i = (0..n).filter(|&i| infected[i] && !predicted[i]).count();
    let type_ii = (0..n).filter(|&i| !infected[i] && predicted[i]).count();
    Ok(LooResult {
        predicted_infected: predicted,
        type_i,
        type_ii,
    })
}

/// KL feature of every subject with the split moved by `shift` samples from
/// its inoculation index.
pub fn subject_features(
    cases: &[SubjectCase],
    spec: &WindowSpec,
    shift: isize,
    bandwidth: Option<f64>,
) -> Result<Vec<f64>> {
    cases
        .par_iter()
        .map(|c| {
            let split = shifted_split(c, shift)?;
            let w = window_alphas(c, spec, split)?;
            kl_feature(&w.pre, &w.post, bandwidth)
        })
        .collect()
}

fn shifted_split(case: &SubjectCase, shift: isize) -> Result<usize> {
    let split = case.inoculation_index as isize + shift;
    if split <= 0 || split as usize >= case.record.len() {
        return Err(Error::invalid(format!(
            "subject `{}`: shift {shift} moves the split outside the record",
            case.subject_id
        )));
    }
    Ok(split as usize)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub shift: isize,
    pub type_i: usize,
    pub type_ii: usize,
}

/// Leave-one-out errors with the assumed inoculation point moved by each
/// shift. Window orders are cached per subject, so shifts that are
/// multiples of the stride reuse every window.
pub fn shift_sweep(
    cases: &[SubjectCase],
    spec: &WindowSpec,
    shifts: &[isize],
    bandwidth: Option<f64>,
) -> Result<Vec<SweepPoint>> {
    let infected: Vec<bool> = cases.iter().map(|c| c.infected).collect();
    // features[subject][shift]
    let features: Vec<Vec<f64>> = cases
        .par_iter()
        .map(|c| {
            let mut cache = AlphaCache::default();
            shifts
                .iter()
                .map(|&s| {
                    let w = window_alphas_cached(c, spec, shifted_split(c, s)?, &mut cache)?;
                    kl_feature(&w.pre, &w.post, bandwidth)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    shifts
        .iter()
        .enumerate()
        .map(|(j, &shift)| {
            let column: Vec<f64> = features.iter().map(|f| f[j]).collect();
            let r = classify_loo(&column, &infected)?;
            Ok(SweepPoint {
                shift,
                type_i: r.type_i,
                type_ii: r.type_ii,
            })
        })
        .collect()
}

pub fn write_sweep_csv(points: &[SweepPoint], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "shift,typeI,typeII")?;
    for p in points {
        writeln!(w, "{},{},{}", p.shift, p.type_i, p.type_ii)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViralManifestEntry {
    pub subject: String,
    pub path: PathBuf,
    pub inoculation_index: usize,
    pub infected: bool,
}

/// Reads `[{subject, path, inoculation_index, infected}, ...]`; a missing key
/// is reported by name.
pub fn load_viral_manifest(path: impl AsRef<Path>) -> Result<Vec<ViralManifestEntry>> {
    let path = path.as_ref();
    let value: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    let items = value.as_array().ok_or_else(|| Error::Format {
        path: path.to_path_buf(),
        message: "manifest must be a JSON array".into(),
    })?;
    items
        .iter()
        .enumerate()
        .map(|(i, item)| {
            let context = format!("{} entry {i}", path.display());
            let field = |key: &str| {
                item.get(key).ok_or_else(|| Error::MissingField {
                    field: key.to_string(),
                    context: context.clone(),
                })
            };
            let bad = |key: &str| Error::Format {
                path: path.to_path_buf(),
                message: format!("entry {i}: `{key}` has the wrong type"),
            };
            Ok(ViralManifestEntry {
                subject: field("subject")?.as_str().ok_or_else(|| bad("subject"))?.to_string(),
                path: PathBuf::from(field("path")?.as_str().ok_or_else(|| bad("path"))?),
                inoculation_index: field("inoculation_index")?
                    .as_u64()
                    .ok_or_else(|| bad("inoculation_index"))? as usize,
                infected: field("infected")?.as_bool().ok_or_else(|| bad("infected"))?,
            })
        })
        .collect()
}

pub fn write_viral_manifest(entries: &[ViralManifestEntry], path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(entries)? + "\n")?;
    Ok(())
}

/// Loads every subject of a manifest; relative record paths resolve against
/// the manifest's directory.
pub fn load_viral_cases(manifest: impl AsRef<Path>, rate_hz: f64) -> Result<Vec<SubjectCase>> {
    let manifest = manifest.as_ref();
    let base = manifest.parent().unwrap_or_else(|| Path::new("."));
    load_viral_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let p = if e.path.is_absolute() {
                e.path.clone()
            } else {
                base.join(&e.path)
            };
            let mut record = load_record(&p, rate_hz)?;
            record.subject_id = e.subject.clone();
            SubjectCase::new(e.subject, record, e.inoculation_index, e.infected)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViralCohortSpec {
    pub subjects: usize,
    pub infected: usize,
    /// Samples before inoculation.
    pub baseline_len: usize,
    /// Duration of the response to the infection.
    pub response_len: usize,
    /// Samples after the response has subsided.
    pub recovery_len: usize,
    pub channels: usize,
    /// Range of the subject-level baseline order.
    pub baseline_range: (f64, f64),
    /// Half-width of the uniform per-channel offset from the baseline.
    pub channel_spread: f64,
    /// Range of the drop in `α` during the response of infected subjects.
    pub shift_range: (f64, f64),
    pub rate_hz: f64,
    pub seed: u64,
}

impl Default for ViralCohortSpec {
    fn default() -> Self {
        Self {
            subjects: 18,
            infected: 11,
            baseline_len: 1 << 14,
            response_len: 1 << 13,
            recovery_len: 1 << 13,
            channels: 3,
            baseline_range: (0.25, 0.35),
            channel_spread: 0.02,
            shift_range: (0.2, 0.3),
            rate_hz: 1.0,
            seed: 0,
        }
    }
}

/// Synthetic subjects whose channels are fractional Gaussian noise with
/// `H = α + 1/2`, generated segment by segment (baseline, response,
/// recovery; each length a power of two). Each subject draws a baseline
/// order from `baseline_range` and each channel offsets it by up to
/// `channel_spread`. In infected subjects every channel's order drops by a
/// draw from `shift_range` during the response and returns afterwards.
/// Inoculation sits at `baseline_len`.
pub fn synth_viral_cohort(spec: &ViralCohortSpec) -> Result<Vec<SubjectCase>> {
    use rand::Rng;
    if spec.infected > spec.subjects || spec.channels == 0 {
        return Err(Error::invalid(
            "viral cohort needs infected <= subjects and >= 1 channel",
        ));
    }
    let (lo, hi) = spec.shift_range;
    let (b_lo, b_hi) = spec.baseline_range;
    let valid = 0.0 <= lo && lo <= hi && b_lo < b_hi && spec.channel_spread >= 0.0;
    if !valid || b_lo - spec.channel_spread - hi <= -0.5 || b_hi + spec.channel_spread >= 0.5 {
        return Err(Error::invalid(
            "viral cohort orders must stay inside (-0.5, 0.5) so that H lies in (0, 1)",
        ));
    }
    let mut rng = rng_from_seed(spec.seed);
    (0..spec.subjects)
        .map(|s| {
            let infected = s < spec.infected;
            let baseline = rng.random_range(b_lo..b_hi);
            let channels = (0..spec.channels)
                .map(|c| {
                    let alpha = baseline + spec.channel_spread * rng.random_range(-1.0..=1.0);
                    let drop = if infected {
                        lo + (hi - lo) * rng.random::<f64>()
                    } else {
                        0.0
                    };
                    let mut x = Vec::with_capacity(spec.baseline_len + spec.response_len + spec.recovery_len);
                    for (len, a) in [
                        (spec.baseline_len, alpha),
                        (spec.response_len, alpha - drop),
                        (spec.recovery_len, alpha),
                    ] {
                        if len > 0 {
                            x.extend(synth_fgn(a + 0.5, len, rng.random())?.into_samples());
                        }
                    }
                    TimeSeries::new(x, spec.rate_hz, format!("ch{c}"))
                })
                .collect::<Result<Vec<_>>>()?;
            let id = format!("v{s:02}");
            let record = MultichannelRecord::new(channels, id.clone(), "", None)?;
            SubjectCase::new(id, record, spec.baseline_len, infected)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn window_count_formula() {
        let spec = WindowSpec::default();
        assert_eq!(spec.count(8192), (8192 - 3000) / 100 + 1);
        assert_eq!(spec.count(2999), 0);
        assert!(WindowSpec {
            window_len: 100,
            stride: 10,
            side_len: None
        }
        .validate()
        .is_err());
        assert!(WindowSpec {
            window_len: 300,
            stride: 301,
            side_len: None
        }
        .validate()
        .is_err());
    }

    #[test]
    fn identical_samples_zero_kl() {
        let x: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
        assert!(kl_feature(&x, &x, None).unwrap() < 1e-12);
        assert!(kl_feature(&[1.0; 10], &x, None).is_err());
        assert!(kl_feature(&[1.0; 10], &x, Some(0.1)).is_ok());
    }

    #[test]
    fn shifted_gaussians_match_closed_form() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mut draw = |m: f64| -> Vec<f64> {
            (0..4000)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    m + z
                })
                .collect()
        };
        let (p, q) = (draw(0.0), draw(1.0));
        let kl = kl_feature(&p, &q, None).unwrap();
        assert!((kl - 0.5).abs() < 0.1, "{kl}");
        let back = kl_feature(&q, &p, None).unwrap();
        assert_ne!(kl, back);
    }

    #[test]
    fn loo_on_separated_features() {
        let f = [0.1, 0.2, 0.15, 2.0, 2.2, 1.9];
        let y = [false, false, false, true, true, true];
        let r = classify_loo(&f, &y).unwrap();
        assert_eq!(r.total_errors(), 0);
        assert!(classify_loo(&f[..2], &y[..2]).is_err());
        assert!(classify_loo(&[1.0, 2.0, 3.0], &[true, false, false]).is_err());
    }

    #[test]
    fn swapping_labels_swaps_error_types() {
        let f = [0.1, 0.9, 0.15, 2.0, 0.3, 1.9, 1.1];
        let y = [false, true, false, true, true, false, false];
        let r = classify_loo(&f, &y).unwrap();
        let flipped: Vec<bool> = y.iter().map(|v| !v).collect();
        let s = classify_loo(&f, &flipped).unwrap();
        assert_eq!((r.type_i, r.type_ii), (s.type_ii, s.type_i));
    }

    #[test]
    fn cache_matches_direct() {
        let cohort = synth_viral_cohort(&ViralCohortSpec {
            subjects: 3,
            infected: 1,
            baseline_len: 1 << 11,
            response_len: 1 << 11,
            recovery_len: 0,
            ..ViralCohortSpec::default()
        })
        .unwrap();
        let spec = WindowSpec {
            window_len: 512,
            stride: 128,
            side_len: None,
        };
        let direct = window_alphas(&cohort[0], &spec, 2048).unwrap();
        assert_eq!(direct.pre_windows, spec.count(2048));
        assert_eq!(direct.pre.len(), 3 * direct.pre_windows);
        let mut cache = AlphaCache::default();
        window_alphas_cached(&cohort[0], &spec, 2048 + 256, &mut cache).unwrap();
        let cached = window_alphas_cached(&cohort[0], &spec, 2048, &mut cache).unwrap();
        assert_eq!(direct, cached);
        assert!(window_alphas(&cohort[0], &spec, 600).is_err());
    }

    #[test]
    fn manifest_round_trip_and_missing_field() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let entries = vec![ViralManifestEntry {
            subject: "a".into(),
            path: "a.csv".into(),
            inoculation_index: 10,
            infected: true,
        }];
        write_viral_manifest(&entries, &p).unwrap();
        assert_eq!(load_viral_manifest(&p).unwrap(), entries);
        std::fs::write(&p, r#"[{"subject": "a", "path": "a.csv", "infected": true}]"#).unwrap();
        match load_viral_manifest(&p) {
            Err(Error::MissingField { field, .. }) => assert_eq!(field, "inoculation_index"),
            other => panic!("unexpected {other:?}"),
        }
    }
}
