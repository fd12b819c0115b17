use serde::{Deserialize, Serialize};

use super::SetKey;
use crate::seed;
use crate::{Error, Result};

/// How a dataset is split into gallery and test sets, and how often.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitProtocol {
    pub gallery_sets_per_class: usize,
    /// Keep only the first `k` images of every set.
    pub set_image_cap: Option<usize>,
    /// Per-class gallery image cap after pooling; `None` means `floor(0.8 tau)`.
    pub gallery_image_cap: Option<usize>,
    pub folds: usize,
    pub master_seed: u64,
}

impl SplitProtocol {
    pub fn new(gallery_sets_per_class: usize, folds: usize, master_seed: u64) -> Self {
        Self {
            gallery_sets_per_class,
            set_image_cap: None,
            gallery_image_cap: None,
            folds,
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.folds == 0 {
            return Err(Error::Protocol("at least one fold is required".into()));
        }
        if self.gallery_sets_per_class == 0 {
            return Err(Error::Protocol("at least one gallery set per class is required".into()));
        }
        if self.set_image_cap == Some(0) || self.gallery_image_cap == Some(0) {
            return Err(Error::Protocol("image caps must be at least 1".into()));
        }
        Ok(())
    }

    pub fn fold_seed(&self, fold: usize) -> u64 {
        seed::derive_index(self.master_seed, fold as u64)
    }
}

/// Number of gallery sets per class for a count or a named rule
/// (`one-video`, `two-sets`, `three-videos`, `five-sets`).
pub fn parse_gallery_rule(rule: &str) -> Result<usize> {
    match rule.trim().to_ascii_lowercase().as_str() {
        "one-video" | "one-set" => Ok(1),
        "two-sets" | "two-videos" => Ok(2),
        "three-videos" | "three-sets" => Ok(3),
        "five-sets" | "five-videos" => Ok(5),
        other => other
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Protocol(format!("unknown gallery rule `{rule}`"))),
    }
}

/// One repetition of the split. Indices refer to the key list given to
/// [`make_splits`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub index: usize,
    pub seed: u64,
    pub gallery: Vec<usize>,
    pub test: Vec<usize>,
}

/// Per fold and class, a uniform seeded choice of gallery sets; every other
/// set becomes a test set. `keys` must be sorted by class then set.
pub fn make_splits(keys: &[SetKey], protocol: &SplitProtocol) -> Result<Vec<Fold>> {
    protocol.validate()?;
    let mut groups: Vec<(&str, Vec<usize>)> = Vec::new();
    for (i, k) in keys.iter().enumerate() {
        match groups.last_mut() {
            Some((c, idx)) if *c == k.class_id => idx.push(i),
            _ => groups.push((&k.class_id, vec![i])),
        }
    }
    for (class, idx) in &groups {
        if idx.len() <= protocol.gallery_sets_per_class {
            return Err(Error::Protocol(format!(
                "class `{class}` has {} sets, needs more than {} to leave a test set",
                idx.len(),
                protocol.gallery_sets_per_class
            )));
        }
    }
    Ok((0..protocol.folds)
        .map(|f| {
            let fold_seed = protocol.fold_seed(f);
            let mut gallery = Vec::new();
            let mut test = Vec::new();
            for (class, idx) in &groups {
                let mut rng = seed::rng(seed::derive(fold_seed, format!("split/{class}").as_bytes()));
                let mut chosen = rand::seq::index::sample(&mut rng, idx.len(), protocol.gallery_sets_per_class).into_vec();
                chosen.sort_unstable();
                for (pos, &i) in idx.iter().enumerate() {
                    if chosen.binary_search(&pos).is_ok() {
                        gallery.push(i);
                    } else {
                        test.push(i);
                    }
                }
            }
            Fold { index: f, seed: fold_seed, gallery, test }
        })
        .collect())
}
