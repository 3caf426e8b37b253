mod logistic;
mod metrics;
mod mlp;
mod split;

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use logistic::{logistic_train, LogisticConfig};
pub use metrics::{auroc, evaluate, macro_auroc, Metrics};
pub use mlp::{
    loss_and_gradient, mlp_train, parameter_count, Gradients, MlpParams, TrainConfig, TrainCurves, HIDDEN_LAYERS,
};
pub use split::{balance, holdout, holdout_all, institutions, kfold, Split};

use crate::error::{Error, Result};
use crate::fracdyn::{estimate_alphas, estimate_coupling, CouplingOptions};
use crate::signal::{MultichannelRecord, MAX_STAGE};

/// Number of disease stages predicted by the classifiers.
pub const N_CLASSES: usize = MAX_STAGE as usize + 1;

/// Flattened coupling matrix of one record with its labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledCase {
    pub features: Vec<f64>,
    pub stage: u8,
    pub institution: String,
    pub subject_id: String,
}

impl LabeledCase {
    pub fn validate(&self) -> Result<()> {
        if self.stage > MAX_STAGE {
            return Err(Error::invalid(format!(
                "case `{}` has stage {}",
                self.subject_id, self.stage
            )));
        }
        if self.features.is_empty() || self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "case `{}` has empty or non-finite features",
                self.subject_id
            )));
        }
        Ok(())
    }
}

pub fn write_cases(cases: &[LabeledCase], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for c in cases {
        serde_json::to_writer(&mut w, c)?;
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads JSON-lines cases; blank lines are skipped and every case is
/// validated. All cases must have the same feature length.
pub fn read_cases(path: impl AsRef<Path>) -> Result<Vec<LabeledCase>> {
    let path = path.as_ref();
    let mut out: Vec<LabeledCase> = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            row: i + 1,
            column: 1,
            message,
        };
        let case: LabeledCase = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        case.validate().map_err(|e| parse_err(e.to_string()))?;
        if let Some(first) = out.first() {
            if first.features.len() != case.features.len() {
                return Err(parse_err(format!(
                    "{} features, expected {}",
                    case.features.len(),
                    first.features.len()
                )));
            }
        }
        out.push(case);
    }
    if out.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            message: "no cases".into(),
        });
    }
    Ok(out)
}

/// Per-channel orders, then the coupling matrix, flattened row-major.
pub fn extract_features(record: &MultichannelRecord, opts: &CouplingOptions) -> Result<LabeledCase> {
    let stage = record
        .stage()
        .ok_or_else(|| Error::invalid(format!("record `{}` has no stage label", record.subject_id)))?;
    let alpha: Vec<f64> = estimate_alphas(record)?.iter().map(|a| a.alpha).collect();
    let a = estimate_coupling(record, &alpha, opts)?;
    let case = LabeledCase {
        features: crate::fracdyn::CouplingExport::new(&alpha, &a).a,
        stage,
        institution: record.institution.clone(),
        subject_id: record.subject_id.clone(),
    };
    case.validate()?;
    Ok(case)
}

/// Probability model over the disease stages.
pub trait Classifier {
    fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>>;

    fn predict(&self, features: &[f64]) -> Result<usize> {
        Ok(metrics::argmax(&self.predict_proba(features)?))
    }
}

/// Per-feature min-max scaling fitted on a training set. Constant features
/// map to 0.5; values outside the fitted range are clamped to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl MinMax {
    pub fn fit(cases: &[LabeledCase]) -> Result<Self> {
        let d = cases
            .first()
            .ok_or_else(|| Error::invalid("cannot fit scaling on no cases"))?
            .features
            .len();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for c in cases {
            if c.features.len() != d {
                return Err(Error::invalid("cases differ in feature length"));
            }
            for (j, &v) in c.features.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn apply(&self, features: &[f64]) -> Result<Vec<f64>> {
        if features.len() != self.min.len() {
            return Err(Error::invalid(format!(
                "{} features, scaling fitted on {}",
                features.len(),
                self.min.len()
            )));
        }
        Ok(features
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| {
                if hi > lo {
                    ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
                } else {
                    0.5
                }
            })
            .collect())
    }

    pub fn apply_cases(&self, cases: &[LabeledCase]) -> Result<Vec<LabeledCase>> {
        cases
            .iter()
            .map(|c| {
                Ok(LabeledCase {
                    features: self.apply(&c.features)?,
                    ..c.clone()
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Mlp,
    Logistic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub mlp: TrainConfig,
    pub logistic: LogisticConfig,
}

/// A trained network together with the scaling of its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct Pipeline {
    pub kind: ModelKind,
    pub scaler: MinMax,
    pub params: MlpParams,
}

#[derive(Serialize, Deserialize)]
struct PipelineHeader {
    kind: ModelKind,
    scaler: MinMax,
}

impl Pipeline {
    /// Fits scaling on `train`, then trains the requested model.
    pub fn train(
        train: &[LabeledCase],
        spec: &ModelSpec,
        validation: Option<&[LabeledCase]>,
    ) -> Result<(Self, TrainCurves)> {
        let scaler = MinMax::fit(train)?;
        let scaled = scaler.apply_cases(train)?;
        let (params, curves) = match spec.kind {
            ModelKind::Mlp => {
                let val = validation.map(|v| scaler.apply_cases(v)).transpose()?;
                mlp_train(&scaled, &spec.mlp, val.as_deref())?
            }
            ModelKind::Logistic => {
                let (p, loss) = logistic_train(&scaled, &spec.logistic)?;
                (
                    p,
                    TrainCurves {
                        loss,
                        ..TrainCurves::default()
                    },
                )
            }
        };
        Ok((
            Self {
                kind: spec.kind,
                scaler,
                params,
            },
            curves,
        ))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let header = PipelineHeader {
            kind: self.kind,
            scaler: self.scaler.clone(),
        };
        self.params.save(path, serde_json::to_value(header)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (params, extra) = MlpParams::load(path)?;
        let header: PipelineHeader = serde_json::from_value(extra)?;
        if header.scaler.min.len() != params.input_dim() {
            return Err(Error::invalid("model scaling and input layer disagree"));
        }
        Ok(Self {
            kind: header.kind,
            scaler: header.scaler,
            params,
        })
    }
}

impl Classifier for Pipeline {
    fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.params.predict_proba(&self.scaler.apply(features)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub split: String,
    pub train_size: usize,
    pub test_size: usize,
    pub metrics: Metrics,
    pub curves: TrainCurves,
}

/// Trains and evaluates one model per split; splits run in parallel and each
/// training run is single-threaded, so results do not depend on scheduling.
pub fn run_splits(cases: &[LabeledCase], splits: &[Split], spec: &ModelSpec) -> Result<Vec<(FoldReport, Pipeline)>> {
    splits
        .par_iter()
        .map(|split| {
            let train = split.train_cases(cases);
            let test = split.test_cases(cases);
            let (model, curves) = Pipeline::train(&train, spec, Some(&test))?;
            let metrics = evaluate(&model, &test)?;
            Ok((
                FoldReport {
                    split: split.name.clone(),
                    train_size: train.len(),
                    test_size: test.len(),
                    metrics,
                    curves,
                },
                model,
            ))
        })
        .collect()
}

/// Mean and sample standard deviation of fold accuracies.
pub fn accuracy_summary(reports: &[FoldReport]) -> (f64, f64) {
    let acc: Vec<f64> = reports.iter().map(|r| r.metrics.accuracy).collect();
    let sd = if acc.len() > 1 {
        crate::stats::sample_std(&acc)
    } else {
        0.0
    };
    (crate::stats::mean(&acc), sd)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(features: Vec<f64>, stage: u8) -> LabeledCase {
        LabeledCase {
            features,
            stage,
            institution: "x".into(),
            subject_id: "s".into(),
        }
    }

    #[test]
    fn minmax_contract() {
        let train = vec![case(vec![1.0, 5.0, 2.0], 0), case(vec![3.0, 5.0, -2.0], 1)];
        let s = MinMax::fit(&train).unwrap();
        assert_eq!(s.apply(&[1.0, 5.0, 2.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(s.apply(&[3.0, 7.0, -2.0]).unwrap(), vec![1.0, 0.5, 0.0]);
        assert_eq!(s.apply(&[10.0, 0.0, -9.0]).unwrap(), vec![1.0, 0.5, 0.0]);
        assert!(s.apply(&[1.0]).is_err());
    }

    #[test]
    fn cases_round_trip_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.jsonl");
        let cases = vec![case(vec![0.1, -0.2], 3), case(vec![1.0 / 3.0, 2.0], 0)];
        write_cases(&cases, &p).unwrap();
        assert_eq!(read_cases(&p).unwrap(), cases);
        std::fs::write(
            &p,
            "{\"features\":[1.0],\"stage\":7,\"institution\":\"a\",\"subject_id\":\"b\"}\n",
        )
        .unwrap();
        assert!(matches!(read_cases(&p), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn pipeline_round_trip() {
        let train: Vec<_> = (0..20)
            .map(|i| case(vec![i as f64, (i % 3) as f64], (i % 2) as u8))
            .collect();
        let spec = ModelSpec {
            kind: ModelKind::Logistic,
            mlp: TrainConfig::default(),
            logistic: LogisticConfig {
                epochs: 50,
                ..LogisticConfig::default()
            },
        };
        let (model, _) = Pipeline::train(&train, &spec, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.txt");
        model.save(&p).unwrap();
        let back = Pipeline::load(&p).unwrap();
        assert_eq!(back, model);
        let probs = back.predict_proba(&[4.0, 1.0]).unwrap();
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
