//! Time-series containers, CSV ingestion and synthetic ground-truth
//! generators.

mod io;
pub mod synth;

pub use io::{load_manifest, load_manifest_records, load_record, write_manifest, write_record, ManifestEntry};
pub use synth::{
    random_stable_model, synth_cascade, synth_cohort, synth_fgn, synth_fractional_system, synth_white, CohortMember,
    CohortSpec, InputSchedule, SyntheticKind, SyntheticSpec, SyntheticSystem,
};

use crate::error::{Error, Result};

/// Highest stage label accepted on a record.
pub const MAX_STAGE: u8 = 4;

/// A uniformly sampled, finite, nonempty signal.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    samples: Vec<f64>,
    rate_hz: f64,
    label: String,
}

impl TimeSeries {
    pub fn new(samples: Vec<f64>, rate_hz: f64, label: impl Into<String>) -> Result<Self> {
        let label = label.into();
        if samples.is_empty() {
            return Err(Error::invalid(format!("series `{label}` is empty")));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "series `{label}` has a non-finite value at sample {i}"
            )));
        }
        if !(rate_hz.is_finite() && rate_hz > 0.0) {
            return Err(Error::invalid(format!("sampling rate must be positive, got {rate_hz}")));
        }
        Ok(Self {
            samples,
            rate_hz,
            label,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_seconds(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz
    }
}

/// Equal-length channels sampled at a common rate, with subject metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct MultichannelRecord {
    channels: Vec<TimeSeries>,
    pub subject_id: String,
    pub institution: String,
    stage: Option<u8>,
}

impl MultichannelRecord {
    pub fn new(
        channels: Vec<TimeSeries>,
        subject_id: impl Into<String>,
        institution: impl Into<String>,
        stage: Option<u8>,
    ) -> Result<Self> {
        let first = channels
            .first()
            .ok_or_else(|| Error::invalid("record needs at least one channel"))?;
        let (len, rate) = (first.len(), first.rate_hz());
        for ch in &channels[1..] {
            if ch.len() != len {
                return Err(Error::invalid(format!(
                    "channel `{}` has {} samples, expected {len}",
                    ch.label(),
                    ch.len()
                )));
            }
            if ch.rate_hz() != rate {
                return Err(Error::invalid(format!(
                    "channel `{}` sampled at {} Hz, expected {rate} Hz",
                    ch.label(),
                    ch.rate_hz()
                )));
            }
        }
        for (i, a) in channels.iter().enumerate() {
            if channels[..i].iter().any(|b| b.label() == a.label()) {
                return Err(Error::invalid(format!("duplicate channel label `{}`", a.label())));
            }
        }
        if let Some(s) = stage {
            if s > MAX_STAGE {
                return Err(Error::invalid(format!("stage {s} outside 0..={MAX_STAGE}")));
            }
        }
        Ok(Self {
            channels,
            subject_id: subject_id.into(),
            institution: institution.into(),
            stage,
        })
    }

    /// Builds a record from per-channel sample vectors, labelling them `ch0`, `ch1`, ...
    pub fn from_columns(columns: Vec<Vec<f64>>, rate_hz: f64) -> Result<Self> {
        let channels = columns
            .into_iter()
            .enumerate()
            .map(|(i, c)| TimeSeries::new(c, rate_hz, format!("ch{i}")))
            .collect::<Result<Vec<_>>>()?;
        Self::new(channels, "", "", None)
    }

    pub fn channels(&self) -> &[TimeSeries] {
        &self.channels
    }

    pub fn channel(&self, i: usize) -> &TimeSeries {
        &self.channels[i]
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn rate_hz(&self) -> f64 {
        self.channels[0].rate_hz()
    }

    pub fn stage(&self) -> Option<u8> {
        self.stage
    }

    pub fn labels(&self) -> Vec<&str> {
        self.channels.iter().map(TimeSeries::label).collect()
    }

    pub fn with_stage(mut self, stage: Option<u8>) -> Result<Self> {
        if matches!(stage, Some(s) if s > MAX_STAGE) {
            return Err(Error::invalid(format!("stage outside 0..={MAX_STAGE}")));
        }
        self.stage = stage;
        Ok(self)
    }

    /// Samples `range` of every channel, keeping metadata.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(Error::invalid(format!(
                "slice {range:?} outside record of length {}",
                self.len()
            )));
        }
        let channels = self
            .channels
            .iter()
            .map(|c| TimeSeries::new(c.samples()[range.clone()].to_vec(), c.rate_hz(), c.label()))
            .collect::<Result<Vec<_>>>()?;
        Self::new(channels, self.subject_id.clone(), self.institution.clone(), self.stage)
    }

    /// Reorders channels so that new channel `i` is old channel `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_channels();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::invalid("channel permutation is not a bijection"));
        }
        let channels = perm.iter().map(|&p| self.channels[p].clone()).collect();
        Self::new(channels, self.subject_id.clone(), self.institution.clone(), self.stage)
    }
}
