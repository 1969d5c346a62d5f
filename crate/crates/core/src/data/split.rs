use std::collections::{HashMap, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{PairedDataset, Split};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Seeded split by subject. Pairs keep their original relative order inside
/// each split.
pub fn split_dataset<T: Scalar>(
    dataset: &PairedDataset<T>,
    n_train: usize,
    seed: u64,
) -> Result<(PairedDataset<T>, PairedDataset<T>)> {
    let total = dataset.len();
    if n_train == 0 || n_train >= total {
        return Err(Error::Config(format!(
            "n_train must satisfy 0 < n_train < {total}, got {n_train}"
        )));
    }

    let mut order: Vec<&str> = Vec::new();
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for (t1, _) in dataset.pairs() {
        let c = counts.entry(t1.subject_id()).or_insert(0);
        if *c == 0 {
            order.push(t1.subject_id());
        }
        *c += 1;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut train_subjects = HashSet::new();
    let mut taken = 0;
    for s in order {
        if taken >= n_train {
            break;
        }
        taken += counts[s];
        train_subjects.insert(s);
    }
    if taken != n_train {
        return Err(Error::Config(format!(
            "cannot place exactly {n_train} pairs in train without splitting a subject"
        )));
    }

    let (train, test): (Vec<_>, Vec<_>) = dataset
        .pairs()
        .iter()
        .cloned()
        .partition(|(t1, _)| train_subjects.contains(t1.subject_id()));
    Ok((
        PairedDataset::new(train, Split::Train)?,
        PairedDataset::new(test, Split::Test)?,
    ))
}
