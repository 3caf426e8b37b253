use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{MfdfaConfig, MfdfaResult, ScalingFunction};
use crate::error::Result;

/// JSON document describing the analysis of every channel of a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumReport {
    pub config: MfdfaConfig,
    pub channels: Vec<ChannelSpectrum>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSpectrum {
    pub label: String,
    #[serde(flatten)]
    pub result: MfdfaResult,
}

impl SpectrumReport {
    pub fn new(config: MfdfaConfig) -> Self {
        Self {
            config,
            channels: Vec::new(),
        }
    }

    pub fn push(&mut self, label: impl Into<String>, result: MfdfaResult) {
        self.channels.push(ChannelSpectrum {
            label: label.into(),
            result,
        });
    }
}

pub fn write_spectrum_json(report: &SpectrumReport, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, report)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Writes one two-column CSV (`log2_s,log2_sf`) per q into `dir`, named
/// `{prefix}_q{q}.csv`. Returns the paths in q-grid order.
pub fn write_scaling_csv(sf: &ScalingFunction, dir: impl AsRef<Path>, prefix: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths = Vec::with_capacity(sf.q_grid.len());
    for (qi, q) in sf.q_grid.iter().enumerate() {
        let path = dir.join(format!("{prefix}_q{q}.csv"));
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "log2_s,log2_sf")?;
        for (si, &s) in sf.scales.iter().enumerate() {
            writeln!(w, "{},{}", (s as f64).log2(), sf.values[qi][si].log2())?;
        }
        w.flush()?;
        paths.push(path);
    }
    Ok(paths)
}
