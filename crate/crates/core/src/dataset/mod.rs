//! Image-set datasets: loading from disk, synthetic generation, fold
//! protocols and accuracy scoring.

mod evaluate;
mod manifest;
mod splits;
mod synthetic;

use crate::preprocess::{FeatureVector, Resolution};
use crate::ClassId;

pub use evaluate::{
    evaluate, format_table, ClassifiedSet, Confusion, EvalConfig, EvaluationReport, FoldTiming, StrategyReport,
};
pub use manifest::{load_manifest, DatasetManifest, ManifestEntry, IMAGE_EXTENSIONS};
pub use splits::{make_splits, parse_gallery_rule, Fold, SplitProtocol};
pub use synthetic::{generate_synthetic, SyntheticSpec};

/// Identifies one image set.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SetKey {
    pub class_id: ClassId,
    pub set_id: String,
}

/// One image set with its feature vectors, in manifest order.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub class_id: ClassId,
    pub set_id: String,
    pub vectors: Vec<FeatureVector>,
}

impl LabeledSet {
    pub fn key(&self) -> SetKey {
        SetKey { class_id: self.class_id.clone(), set_id: self.set_id.clone() }
    }

    /// The first `cap` images, or all of them.
    pub fn first(&self, cap: Option<usize>) -> &[FeatureVector] {
        match cap {
            Some(k) => &self.vectors[..k.min(self.vectors.len())],
            None => &self.vectors,
        }
    }
}

/// All sets of a dataset at one resolution, sorted by class then set.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSetCollection {
    pub resolution: Resolution,
    pub sets: Vec<LabeledSet>,
}

impl ImageSetCollection {
    pub fn new(resolution: Resolution, mut sets: Vec<LabeledSet>) -> Self {
        sets.sort_by(|a, b| (&a.class_id, &a.set_id).cmp(&(&b.class_id, &b.set_id)));
        Self { resolution, sets }
    }

    pub fn keys(&self) -> Vec<SetKey> {
        self.sets.iter().map(LabeledSet::key).collect()
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        let mut ids: Vec<ClassId> = self.sets.iter().map(|s| s.class_id.clone()).collect();
        ids.dedup();
        ids
    }
}
