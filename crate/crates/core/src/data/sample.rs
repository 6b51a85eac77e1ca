//! Deterministic splitting and k-shot episode sampling.

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use super::{Dataset, Episode, Splits};
use crate::error::{Error, Result};
use crate::rng::seeded;

const TRAIN_STREAM: u64 = 0x6b73_686f_7400;
const DEV_STREAM: u64 = 0x6b73_6465_7600;
const SPLIT_STREAM: u64 = 0x7370_6c69_7400;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitFractions {
    pub train: f64,
    pub dev: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        SplitFractions {
            train: 0.6,
            dev: 0.1,
        }
    }
}

/// Per-relation stratified split; the remainder after train and dev is test.
pub fn split_dataset(dataset: &Dataset, fractions: &SplitFractions, seed: u64) -> Result<Splits> {
    let (ft, fd) = (fractions.train, fractions.dev);
    if !(ft > 0.0 && fd >= 0.0 && ft + fd <= 1.0) {
        return Err(Error::validation(
            "split",
            "need train > 0, dev >= 0, train + dev <= 1",
        ));
    }
    let (mut train, mut dev, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for (ri, rel) in dataset.relations.iter().enumerate() {
        let mut idx: Vec<usize> = (0..dataset.len())
            .filter(|&i| &dataset.instances[i].label == rel)
            .collect();
        idx.shuffle(&mut seeded(seed, SPLIT_STREAM + ri as u64));
        let n = idx.len();
        let n_train = ((n as f64 * ft).round() as usize).min(n);
        let n_dev = ((n as f64 * fd).round() as usize).min(n - n_train);
        let parts = [&mut train, &mut dev, &mut test];
        for (pos, &i) in idx.iter().enumerate() {
            let which = if pos < n_train {
                0
            } else if pos < n_train + n_dev {
                1
            } else {
                2
            };
            parts[which].push(i);
        }
    }
    let take = |mut ids: Vec<usize>| {
        ids.sort_unstable();
        dataset.with_instances(
            ids.into_iter()
                .map(|i| dataset.instances[i].clone())
                .collect(),
        )
    };
    Ok(Splits {
        train: take(train),
        dev: take(dev),
        test: take(test),
    })
}

/// Draws `k` instances per relation without replacement from each of
/// `ids`, using one generator per relation so draws for one relation do not
/// depend on the others.
fn draw(ds: &Dataset, k: usize, seed: u64, stream: u64, require_all: bool) -> Result<Vec<usize>> {
    let mut chosen = Vec::new();
    for (ri, rel) in ds.relations.iter().enumerate() {
        let candidates: Vec<usize> = (0..ds.len())
            .filter(|&i| &ds.instances[i].label == rel)
            .collect();
        if candidates.is_empty() {
            if require_all {
                return Err(Error::Sampling {
                    relation: rel.clone(),
                    reason: "no training instances".into(),
                });
            }
            continue;
        }
        let mut rng = seeded(seed, stream ^ ((ri as u64) << 16));
        let take = k.min(candidates.len());
        let mut picked: Vec<usize> = index::sample(&mut rng, candidates.len(), take)
            .into_iter()
            .map(|j| candidates[j])
            .collect();
        picked.sort_unstable();
        chosen.extend(picked);
    }
    Ok(chosen)
}

/// k-shot episode: `k` train instances per relation, `k` dev instances per
/// relation (where dev has any), test unchanged.
pub fn sample_kshot(source: &Splits, k: usize, seed: u64) -> Result<Episode> {
    if k == 0 {
        return Err(Error::validation("k", "must be at least 1"));
    }
    if source.train.is_empty() {
        return Err(Error::validation("train", "source train split is empty"));
    }
    let pick = |ds: &Dataset, ids: Vec<usize>| {
        ds.with_instances(ids.into_iter().map(|i| ds.instances[i].clone()).collect())
    };
    let train_ids = draw(&source.train, k, seed, TRAIN_STREAM, true)?;
    let dev_ids = draw(&source.dev, k, seed, DEV_STREAM, false)?;
    Ok(Episode {
        train: pick(&source.train, train_ids),
        dev: pick(&source.dev, dev_ids),
        test: source.test.clone(),
        k,
        seed,
    })
}
