use fracsig::classify::{kfold, Classifier, LabeledCase, MinMax, MlpParams};
use fracsig::fracdyn::frac_difference;
use fracsig::mfdfa::{profile, scaling_function, wasserstein_1d, MfdfaConfig};
use fracsig::signal::{load_record, write_record};
use fracsig::viral::{classify_loo, kl_feature};
use fracsig::MultichannelRecord;
use proptest::prelude::*;

fn finite(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, len)
}

/// Signals long enough for a few scales, with enough variation that no
/// window is exactly polynomial.
fn signal() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, 256..600)
}

fn small_cfg(n: usize) -> MfdfaConfig {
    MfdfaConfig::for_length(n).with_scales(vec![16, 24, 40, n / 4])
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn record_csv_round_trips(cols in prop::collection::vec(prop::collection::vec(any::<f64>().prop_filter("finite", |v| v.is_finite()), 5), 1..4)) {
        let record = MultichannelRecord::from_columns(cols, 2.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.csv");
        write_record(&record, &path).unwrap();
        let back = load_record(&path, 2.0).unwrap();
        prop_assert_eq!(back.n_channels(), record.n_channels());
        for (a, b) in back.channels().iter().zip(record.channels()) {
            prop_assert_eq!(a.samples(), b.samples());
            prop_assert_eq!(a.label(), b.label());
        }
    }

    #[test]
    fn wasserstein_is_a_metric(a in finite(1..30), b in finite(1..30), c in finite(1..30)) {
        let ab = wasserstein_1d(&a, &b).unwrap();
        let ba = wasserstein_1d(&b, &a).unwrap();
        let ac = wasserstein_1d(&a, &c).unwrap();
        let cb = wasserstein_1d(&c, &b).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!(wasserstein_1d(&a, &a).unwrap().abs() < 1e-9);
        prop_assert!(close(ab, ba, 1e-9) || (ab - ba).abs() < 1e-9);
        prop_assert!(ab <= ac + cb + 1e-9 * (1.0 + ab));
    }

    #[test]
    fn generalized_mean_is_nondecreasing_in_q(x in signal()) {
        let cfg = small_cfg(x.len()).with_q_grid(vec![-4.0, -2.0, -0.5, 0.5, 1.0, 2.0, 4.0]);
        let sf = scaling_function(&profile(&x), &cfg).unwrap();
        for si in 0..sf.scales.len() {
            for qi in 1..sf.q_grid.len() {
                prop_assert!(sf.values[qi][si] >= sf.values[qi - 1][si] * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn fluctuation_scales_with_amplitude_and_ignores_sign(x in signal(), c in 0.01f64..100.0) {
        let cfg = small_cfg(x.len());
        let base = scaling_function(&profile(&x), &cfg).unwrap();
        let scaled: Vec<f64> = x.iter().map(|v| c * v).collect();
        let flipped: Vec<f64> = x.iter().map(|v| -v).collect();
        let s = scaling_function(&profile(&scaled), &cfg).unwrap();
        let f = scaling_function(&profile(&flipped), &cfg).unwrap();
        for qi in 0..base.q_grid.len() {
            for si in 0..base.scales.len() {
                prop_assert!(close(s.values[qi][si], c * base.values[qi][si], 1e-8));
                prop_assert!(close(f.values[qi][si], base.values[qi][si], 1e-8));
            }
        }
    }

    #[test]
    fn fractional_difference_is_linear(x in finite(20..80), alpha in 0.05f64..1.95, a in -5.0f64..5.0, b in -5.0f64..5.0) {
        let y: Vec<f64> = x.iter().rev().copied().collect();
        let combo: Vec<f64> = x.iter().zip(&y).map(|(u, v)| a * u + b * v).collect();
        let dx = frac_difference(&x, alpha, 30);
        let dy = frac_difference(&y, alpha, 30);
        let dc = frac_difference(&combo, alpha, 30);
        for k in 0..x.len() {
            let expect = a * dx[k] + b * dy[k];
            prop_assert!((dc[k] - expect).abs() <= 1e-9 * (1.0 + expect.abs() + dc[k].abs()) * 1e3);
        }
    }

    #[test]
    fn network_outputs_are_distributions(seed in 0u64..1000, x in prop::collection::vec(-50.0f64..50.0, 7)) {
        let net = MlpParams::init(&[7, 9, 4], seed).unwrap();
        let p = net.predict_proba(&x).unwrap();
        prop_assert_eq!(p.len(), 4);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn kfold_partitions_the_cases(n in 10usize..60, k in 2usize..6, seed in 0u64..100) {
        let cases: Vec<LabeledCase> = (0..n)
            .map(|i| LabeledCase {
                features: vec![i as f64],
                stage: (i % 5) as u8,
                institution: "a".into(),
                subject_id: format!("s{i}"),
            })
            .collect();
        let splits = kfold(&cases, k, seed, false).unwrap();
        prop_assert_eq!(splits.len(), k);
        let mut seen = vec![0; n];
        for s in &splits {
            for &i in &s.test {
                seen[i] += 1;
                prop_assert!(!s.train.contains(&i));
            }
            prop_assert_eq!(s.train.len() + s.test.len(), n);
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn minmax_maps_training_data_into_unit_interval(rows in prop::collection::vec(finite(3..4), 2..20)) {
        let cases: Vec<LabeledCase> = rows
            .into_iter()
            .map(|features| LabeledCase { features, stage: 0, institution: "a".into(), subject_id: "s".into() })
            .collect();
        let scaler = MinMax::fit(&cases).unwrap();
        for c in scaler.apply_cases(&cases).unwrap() {
            prop_assert!(c.features.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn kl_feature_is_nonnegative(a in prop::collection::vec(-5.0f64..5.0, 12..40), b in prop::collection::vec(-5.0f64..5.0, 12..40)) {
        prop_assume!(fracsig::stats::sample_std(&a) > 1e-3 && fracsig::stats::sample_std(&b) > 1e-3);
        prop_assert!(kl_feature(&a, &b, None).unwrap() >= -1e-12);
        prop_assert!(kl_feature(&a, &a, None).unwrap().abs() < 1e-9);
    }

    #[test]
    fn swapping_labels_swaps_error_types(features in prop::collection::vec(-10.0f64..10.0, 6..20), mask in any::<u32>()) {
        let infected: Vec<bool> = (0..features.len()).map(|i| mask >> (i % 32) & 1 == 1).collect();
        let positives = infected.iter().filter(|&&v| v).count();
        prop_assume!(positives >= 2 && features.len() - positives >= 2);
        let swapped: Vec<bool> = infected.iter().map(|v| !v).collect();
        let r = classify_loo(&features, &infected).unwrap();
        let s = classify_loo(&features, &swapped).unwrap();
        prop_assert_eq!(r.type_i, s.type_ii);
        prop_assert_eq!(r.type_ii, s.type_i);
    }
}
