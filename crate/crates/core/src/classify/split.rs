use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledCase;
use crate::error::{Error, Result};

/// Train/test partition as indices into the case list. Balanced training
/// sets may repeat indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub name: String,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn train_cases(&self, cases: &[LabeledCase]) -> Vec<LabeledCase> {
        self.train.iter().map(|&i| cases[i].clone()).collect()
    }

    pub fn test_cases(&self, cases: &[LabeledCase]) -> Vec<LabeledCase> {
        self.test.iter().map(|&i| cases[i].clone()).collect()
    }
}

/// Shuffled k-fold partition. With `group_by_subject` whole subjects are
/// assigned to folds so no subject appears on both sides of a split.
pub fn kfold(cases: &[LabeledCase], k: usize, seed: u64, group_by_subject: bool) -> Result<Vec<Split>> {
    if k < 2 {
        return Err(Error::invalid("k-fold needs k >= 2"));
    }
    let groups: Vec<Vec<usize>> = if group_by_subject {
        let mut by_subject: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, c) in cases.iter().enumerate() {
            by_subject.entry(&c.subject_id).or_default().push(i);
        }
        by_subject.into_values().collect()
    } else {
        (0..cases.len()).map(|i| vec![i]).collect()
    };
    if groups.len() < k {
        return Err(Error::invalid(format!(
            "{} {} cannot fill {k} folds",
            groups.len(),
            if group_by_subject { "subjects" } else { "cases" }
        )));
    }
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let (base, extra) = (groups.len() / k, groups.len() % k);
    let mut start = 0;
    let mut folds = Vec::with_capacity(k);
    for f in 0..k {
        let size = base + usize::from(f < extra);
        let mut test: Vec<usize> = order[start..start + size]
            .iter()
            .flat_map(|&g| groups[g].clone())
            .collect();
        test.sort_unstable();
        start += size;
        let held: BTreeSet<usize> = test.iter().copied().collect();
        let train = (0..cases.len()).filter(|i| !held.contains(i)).collect();
        folds.push(Split {
            name: format!("fold{f}"),
            train,
            test,
        });
    }
    Ok(folds)
}

/// Random oversampling of minority classes up to the majority count.
pub fn balance(train: &[usize], cases: &[LabeledCase], seed: u64) -> Vec<usize> {
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for &i in train {
        by_class.entry(cases[i].stage).or_default().push(i);
    }
    let target = by_class.values().map(Vec::len).max().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = train.to_vec();
    for members in by_class.values() {
        for _ in members.len()..target {
            out.push(members[rng.random_range(0..members.len())]);
        }
    }
    out
}

pub fn institutions(cases: &[LabeledCase]) -> Vec<String> {
    cases
        .iter()
        .map(|c| c.institution.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Tests on one institution and trains on the rest, with the training side
/// balanced by [`balance`].
pub fn holdout(cases: &[LabeledCase], institution: &str, seed: u64) -> Result<Split> {
    let (test, train): (Vec<usize>, Vec<usize>) = (0..cases.len()).partition(|&i| cases[i].institution == institution);
    if test.is_empty() {
        return Err(Error::invalid(format!(
            "institution `{institution}` not found; available: {}",
            institutions(cases).join(", ")
        )));
    }
    if train.is_empty() {
        return Err(Error::invalid(format!(
            "holding out `{institution}` leaves no training data"
        )));
    }
    Ok(Split {
        name: institution.to_string(),
        train: balance(&train, cases, seed),
        test,
    })
}

/// One hold-out split per institution, in sorted institution order.
pub fn holdout_all(cases: &[LabeledCase], seed: u64) -> Result<Vec<Split>> {
    institutions(cases)
        .iter()
        .map(|inst| holdout(cases, inst, seed))
        .collect()
}
