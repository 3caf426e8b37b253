use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use fracsig::classify::{
    self, accuracy_summary, evaluate, holdout, holdout_all, kfold, read_cases, write_cases, LogisticConfig, ModelKind,
    ModelSpec, Pipeline, TrainConfig, TrainCurves,
};
use fracsig::fracdyn::{
    coupling_convergence, estimate_alphas, estimate_coupling, estimate_with_unknown_input, CouplingExport,
    FractionalModel, UnknownInputOptions,
};
use fracsig::mfdfa::{self, MfdfaConfig, QZeroMode, SpectrumReport, WindowMode};
use fracsig::signal::{
    self, load_manifest_records, load_record, random_stable_model, synth_cohort, write_manifest, write_record,
    CohortSpec, InputSchedule, ManifestEntry, SyntheticKind, SyntheticSpec,
};
use fracsig::viral::{self, ViralCohortSpec, ViralManifestEntry, WindowSpec};
use fracsig::MultichannelRecord;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use crate::{
    CohortArgs, Command, ConvergenceArgs, CouplingArgs, EvalArgs, ExtractArgs, MfdfaArgs, Mode, Model, QZero, Synth,
    SystemArgs, TrainArgs, ViralArgs, ViralCohortArgs, Windows,
};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(s) => synth(s),
        Command::Mfdfa(a) => mfdfa(a),
        Command::Coupling(a) => coupling(a),
        Command::Extract(a) => extract(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Convergence(a) => convergence(a),
        Command::Viral(a) => viral_sweep(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json(value: &impl Serialize, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn save_record(record: &MultichannelRecord, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_record(record, path).with_context(|| format!("writing {}", path.display()))
}

fn synth(s: Synth) -> Result<()> {
    let scalar = |kind, length, common: &crate::SynthCommon, out: &Path| -> Result<()> {
        let spec = SyntheticSpec {
            kind,
            length,
            seed: common.seed,
            rate_hz: common.rate,
        };
        save_record(&spec.generate()?, out)?;
        println!("wrote {length} samples to {}", out.display());
        Ok(())
    };
    match s {
        Synth::Fgn { hurst, n, common, out } => scalar(SyntheticKind::Fgn { hurst }, n, &common, &out),
        Synth::White { n, common, out } => scalar(SyntheticKind::WhiteNoise, n, &common, &out),
        Synth::Cascade { p, depth, common, out } => {
            if depth >= usize::BITS {
                bail!("cascade depth {depth} is too large");
            }
            scalar(SyntheticKind::BinomialCascade { p, depth }, 1 << depth, &common, &out)
        }
        Synth::System(a) => synth_system(a),
        Synth::Cohort(a) => synth_cohort_cmd(a),
        Synth::Viral(a) => synth_viral(a),
    }
}

fn synth_system(a: SystemArgs) -> Result<()> {
    let base = random_stable_model(a.channels, a.common.seed)?;
    if a.inputs >= a.channels {
        bail!("--inputs must be smaller than --channels");
    }
    let mut b = DMatrix::zeros(a.channels, a.inputs);
    for i in 0..a.inputs {
        b[(i, i)] = 1.0;
    }
    let model = FractionalModel::new(base.alpha, base.coupling, b, a.noise_scale)?;
    let inputs = if a.inputs == 0 {
        InputSchedule::None
    } else {
        InputSchedule::Bursts {
            count: a.bursts,
            duration: a.burst_duration,
            amplitude: a.burst_amplitude,
        }
    };
    let spec = SyntheticSpec {
        kind: SyntheticKind::FractionalSystem {
            model,
            inputs,
            x0: None,
            horizon: a.horizon,
        },
        length: a.length,
        seed: a.common.seed,
        rate_hz: a.common.rate,
    };
    let sys = signal::synth_fractional_system(&spec)?;
    create_dir(&a.out_dir)?;
    save_record(&sys.record, &a.out_dir.join("record.csv"))?;
    sys.model.to_export().write(a.out_dir.join("model.json"))?;
    if a.inputs > 0 {
        let columns: Vec<Vec<f64>> = sys.inputs.clone();
        let rec = MultichannelRecord::from_columns(columns, a.common.rate)?;
        save_record(&rec, &a.out_dir.join("inputs.csv"))?;
    }
    println!(
        "wrote {}-channel system of {} samples to {}",
        a.channels,
        a.length,
        a.out_dir.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TruthLine<'a> {
    subject_id: &'a str,
    stage: Option<u8>,
    #[serde(flatten)]
    model: CouplingExport,
}

fn synth_cohort_cmd(a: CohortArgs) -> Result<()> {
    let spec = CohortSpec {
        classes: a.classes,
        per_class: a.per_class,
        channels: a.channels,
        length: a.length,
        institutions: a.institutions,
        rate_hz: a.common.rate,
        horizon: a.horizon,
        seed: a.common.seed,
    };
    let members = synth_cohort(&spec)?;
    create_dir(&a.out_dir.join("records"))?;
    let mut manifest = Vec::with_capacity(members.len());
    let mut truth = BufWriter::new(File::create(a.out_dir.join("truth.jsonl"))?);
    for m in &members {
        let rel = Path::new("records").join(format!("{}.csv", m.record.subject_id));
        save_record(&m.record, &a.out_dir.join(&rel))?;
        manifest.push(ManifestEntry {
            path: rel,
            subject_id: m.record.subject_id.clone(),
            institution: m.record.institution.clone(),
            stage: m.record.stage(),
        });
        let line = TruthLine {
            subject_id: &m.record.subject_id,
            stage: m.record.stage(),
            model: m.model.to_export(),
        };
        serde_json::to_writer(&mut truth, &line)?;
        writeln!(truth)?;
    }
    truth.flush()?;
    write_manifest(&manifest, a.out_dir.join("manifest.json"))?;
    println!(
        "wrote {} records and manifest to {}",
        members.len(),
        a.out_dir.display()
    );
    Ok(())
}

fn synth_viral(a: ViralCohortArgs) -> Result<()> {
    let spec = ViralCohortSpec {
        subjects: a.subjects,
        infected: a.infected,
        channels: a.channels,
        baseline_len: a.baseline_len,
        response_len: a.response_len,
        recovery_len: a.recovery_len,
        rate_hz: a.common.rate,
        seed: a.common.seed,
        ..ViralCohortSpec::default()
    };
    let cases = viral::synth_viral_cohort(&spec)?;
    create_dir(&a.out_dir.join("records"))?;
    let mut manifest = Vec::with_capacity(cases.len());
    for c in &cases {
        let rel = Path::new("records").join(format!("{}.csv", c.subject_id));
        save_record(&c.record, &a.out_dir.join(&rel))?;
        manifest.push(ViralManifestEntry {
            subject: c.subject_id.clone(),
            path: rel,
            inoculation_index: c.inoculation_index,
            infected: c.infected,
        });
    }
    viral::write_viral_manifest(&manifest, a.out_dir.join("manifest.json"))?;
    println!("wrote {} subjects and manifest to {}", cases.len(), a.out_dir.display());
    Ok(())
}

fn file_safe(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn mfdfa(a: MfdfaArgs) -> Result<()> {
    let record = load_record(&a.input, a.rate).with_context(|| format!("reading {}", a.input.display()))?;
    let n = record.len();
    let cfg = MfdfaConfig {
        q_grid: a.q.clone(),
        scales: match (&a.scales, a.dyadic) {
            (Some(s), _) => s.clone(),
            (None, true) => mfdfa::dyadic_scales(n, a.order),
            (None, false) => mfdfa::default_scales(n, a.order),
        },
        detrend_order: a.order,
        q_zero: match a.q_zero {
            QZero::Exclude => QZeroMode::Exclude,
            QZero::LogAverage => QZeroMode::LogAverage,
        },
        windows: match a.windows {
            Windows::Forward => WindowMode::Forward,
            Windows::BothEnds => WindowMode::BothEnds,
        },
    };
    let results = record
        .channels()
        .par_iter()
        .map(|c| mfdfa::analyze(c.samples(), &cfg).with_context(|| format!("channel `{}`", c.label())))
        .collect::<Result<Vec<_>>>()?;
    create_dir(&a.out_dir)?;
    let mut report = SpectrumReport::new(cfg);
    for (c, res) in record.channels().iter().zip(results) {
        mfdfa::write_scaling_csv(&res.scaling, &a.out_dir, &file_safe(c.label()))?;
        let h: Vec<String> = res.spectrum.h.iter().map(|h| format!("{h:.4}")).collect();
        println!(
            "{}: H(q) = [{}], focus spread = {:.4}",
            c.label(),
            h.join(", "),
            res.focus.spread
        );
        report.push(c.label(), res);
    }
    mfdfa::write_spectrum_json(&report, a.out_dir.join("spectrum.json"))?;
    Ok(())
}

fn orders(record: &MultichannelRecord, given: Option<Vec<f64>>) -> Result<Vec<f64>> {
    match given {
        Some(alpha) => Ok(alpha),
        None => Ok(estimate_alphas(record)?.iter().map(|a| a.alpha).collect()),
    }
}

#[derive(Serialize)]
struct CouplingReport {
    first_step: usize,
    iterations: usize,
    converged: bool,
    residual_norm: Vec<f64>,
    /// Input matrix `B`, row-major n × p.
    input: Vec<f64>,
    inputs: Vec<Vec<f64>>,
}

fn coupling(a: CouplingArgs) -> Result<()> {
    let record = load_record(&a.input, a.rate).with_context(|| format!("reading {}", a.input.display()))?;
    let alpha = orders(&record, a.alpha)?;
    let opts = a.coupling.options();
    if a.unknown_inputs == 0 && a.report.is_none() {
        let coupling = estimate_coupling(&record, &alpha, &opts)?;
        CouplingExport::new(&alpha, &coupling).write(&a.out)?;
    } else {
        let uopts = UnknownInputOptions {
            inputs: a.unknown_inputs,
            max_iter: a.max_iter,
            tol: a.tol,
            threshold_sigmas: a.threshold_sigmas,
            coupling: opts,
        };
        let rep = estimate_with_unknown_input(&record, &alpha, &uopts)?;
        CouplingExport::new(&alpha, &rep.model.coupling).write(&a.out)?;
        if let Some(path) = &a.report {
            let b = &rep.model.input;
            let input = (0..b.nrows())
                .flat_map(|i| (0..b.ncols()).map(move |j| b[(i, j)]))
                .collect();
            write_json(
                &CouplingReport {
                    first_step: rep.first_step,
                    iterations: rep.iterations,
                    converged: rep.converged,
                    residual_norm: rep.residual_norm,
                    input,
                    inputs: rep.inputs,
                },
                path,
            )?;
        }
    }
    println!("wrote {}-channel coupling to {}", record.n_channels(), a.out.display());
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    let records =
        load_manifest_records(&a.manifest, a.rate).with_context(|| format!("loading {}", a.manifest.display()))?;
    let opts = a.coupling.options();
    let cases = records
        .par_iter()
        .map(|r| classify::extract_features(r, &opts).with_context(|| format!("record `{}`", r.subject_id)))
        .collect::<Result<Vec<_>>>()?;
    write_cases(&cases, &a.out)?;
    let dim = cases.first().map_or(0, |c| c.features.len());
    println!("wrote {} cases with {dim} features to {}", cases.len(), a.out.display());
    Ok(())
}

fn write_curves(curves: &TrainCurves, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "epoch,loss,accuracy,val_loss,val_accuracy")?;
    let cell = |v: &[f64], i: usize| v.get(i).map(f64::to_string).unwrap_or_default();
    for i in 0..curves.loss.len() {
        writeln!(
            w,
            "{},{},{},{},{}",
            i + 1,
            curves.loss[i],
            cell(&curves.accuracy, i),
            cell(&curves.val_loss, i),
            cell(&curves.val_accuracy, i)
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct FoldAccuracy {
    split: String,
    accuracy: f64,
}

#[derive(Serialize)]
struct TrainSummary {
    mode: &'static str,
    folds: Vec<FoldAccuracy>,
    mean_accuracy: f64,
    sd_accuracy: f64,
    spec: ModelSpec,
}

fn train(a: TrainArgs) -> Result<()> {
    let cases = read_cases(&a.features).with_context(|| format!("reading {}", a.features.display()))?;
    let spec = ModelSpec {
        kind: match a.model {
            Model::Mlp => ModelKind::Mlp,
            Model::Logistic => ModelKind::Logistic,
        },
        mlp: TrainConfig {
            epochs: a.epochs,
            batch_size: a.batch_size,
            learning_rate: a.learning_rate,
            rmsprop_decay: a.rmsprop_decay,
            epsilon: a.epsilon,
            dropout: a.dropout,
            hidden: a.hidden.clone(),
            seed: a.seed,
        },
        logistic: LogisticConfig {
            l2: a.l2,
            epochs: a.logistic_epochs,
            learning_rate: a.logistic_learning_rate,
        },
    };
    let splits = match (a.mode, &a.institution) {
        (Mode::Kfold, _) => kfold(&cases, a.folds, a.seed, a.group_by_subject)?,
        (Mode::Holdout, Some(inst)) => vec![holdout(&cases, inst, a.seed)?],
        (Mode::Holdout, None) => holdout_all(&cases, a.seed)?,
    };
    let results = classify::run_splits(&cases, &splits, &spec)?;
    create_dir(&a.out_dir)?;
    let mut folds = Vec::with_capacity(results.len());
    for (report, model) in &results {
        let name = file_safe(&report.split);
        write_json(report, &a.out_dir.join(format!("{name}.json")))?;
        write_curves(&report.curves, &a.out_dir.join(format!("{name}_curves.csv")))?;
        if a.save_models {
            model.save(a.out_dir.join(format!("{name}.model")))?;
        }
        println!(
            "{}: accuracy {:.4} on {} cases",
            report.split, report.metrics.accuracy, report.test_size
        );
        folds.push(FoldAccuracy {
            split: report.split.clone(),
            accuracy: report.metrics.accuracy,
        });
    }
    let reports: Vec<_> = results.into_iter().map(|(r, _)| r).collect();
    let (mean, sd) = accuracy_summary(&reports);
    println!("accuracy {:.2}% ± {:.2}%", 100.0 * mean, 100.0 * sd);
    let summary = TrainSummary {
        mode: match a.mode {
            Mode::Kfold => "kfold",
            Mode::Holdout => "holdout",
        },
        folds,
        mean_accuracy: mean,
        sd_accuracy: sd,
        spec,
    };
    write_json(&summary, &a.out_dir.join("summary.json"))
}

fn eval(a: EvalArgs) -> Result<()> {
    let cases = read_cases(&a.features).with_context(|| format!("reading {}", a.features.display()))?;
    let model = Pipeline::load(&a.model).with_context(|| format!("reading {}", a.model.display()))?;
    let metrics = evaluate(&model, &cases)?;
    write_json(&metrics, &a.out)?;
    println!("accuracy {:.4} on {} cases", metrics.accuracy, cases.len());
    Ok(())
}

#[derive(Serialize)]
struct ConvergenceSummary {
    points: usize,
    threshold: f64,
    final_distance: f64,
    below_threshold: bool,
    /// Earliest prefix from which every later distance stays below the threshold.
    settled_seconds: Option<f64>,
}

fn convergence(a: ConvergenceArgs) -> Result<()> {
    let record = load_record(&a.input, a.rate).with_context(|| format!("reading {}", a.input.display()))?;
    let alpha = orders(&record, a.alpha)?;
    let curve = coupling_convergence(&record, &alpha, &a.coupling.options(), a.step_seconds)?;
    let mut w = BufWriter::new(File::create(&a.out).with_context(|| format!("writing {}", a.out.display()))?);
    writeln!(w, "seconds,distance")?;
    for p in &curve {
        writeln!(w, "{},{}", p.seconds, p.distance)?;
    }
    w.flush()?;
    let settled = curve
        .iter()
        .rposition(|p| p.distance >= a.threshold)
        .map_or(Some(0), |i| (i + 1 < curve.len()).then_some(i + 1))
        .map(|i| curve[i].seconds);
    let last = curve.last().map_or(f64::NAN, |p| p.distance);
    let summary = ConvergenceSummary {
        points: curve.len(),
        threshold: a.threshold,
        final_distance: last,
        below_threshold: last < a.threshold,
        settled_seconds: settled,
    };
    match summary.settled_seconds {
        Some(s) => println!("distance stays below {} from {s} s", a.threshold),
        None => println!("distance not settled below {}", a.threshold),
    }
    if let Some(path) = &a.summary {
        write_json(&summary, path)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ViralSummary {
    subjects: usize,
    type_i: usize,
    type_ii: usize,
    total_errors: usize,
}

fn viral_sweep(a: ViralArgs) -> Result<()> {
    let cases =
        viral::load_viral_cases(&a.manifest, a.rate).with_context(|| format!("loading {}", a.manifest.display()))?;
    let spec = WindowSpec {
        window_len: a.window,
        stride: a.stride,
        side_len: a.side_len,
    };
    spec.validate()?;
    let step = isize::try_from(a.shift_step)?;
    let count = isize::try_from(a.shift_count)?;
    let shifts: Vec<isize> = (-count..=count).map(|k| k * step).collect();
    let sweep = viral::shift_sweep(&cases, &spec, &shifts, a.bandwidth)?;
    let features = viral::subject_features(&cases, &spec, 0, a.bandwidth)?;
    let infected: Vec<bool> = cases.iter().map(|c| c.infected).collect();
    let loo = viral::classify_loo(&features, &infected)?;

    create_dir(&a.out_dir)?;
    viral::write_sweep_csv(&sweep, a.out_dir.join("sweep.csv"))?;
    let mut w = BufWriter::new(File::create(a.out_dir.join("features.csv"))?);
    writeln!(w, "subject,infected,kl,predicted_infected")?;
    for (i, c) in cases.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{}",
            c.subject_id, c.infected, features[i], loo.predicted_infected[i]
        )?;
    }
    w.flush()?;
    let summary = ViralSummary {
        subjects: cases.len(),
        type_i: loo.type_i,
        type_ii: loo.type_ii,
        total_errors: loo.total_errors(),
    };
    write_json(&summary, &a.out_dir.join("summary.json"))?;
    println!(
        "leave-one-out errors: {} (type I {}, type II {}) of {} subjects",
        summary.total_errors, loo.type_i, loo.type_ii, summary.subjects
    );
    Ok(())
}
