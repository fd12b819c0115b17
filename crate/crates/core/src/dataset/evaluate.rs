use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::{make_splits, Fold, ImageSetCollection, SplitProtocol};
use crate::classify::{decide, residual_matrix_with, EwvParams, Mode, ProbeSet, Strategy};
use crate::gallery::{build_gallery, GalleryConfig};
use crate::preprocess::{FeatureVector, Resolution};
use crate::{ClassId, Error, Result};

/// Engine settings for [`evaluate`].
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub strategies: Vec<Strategy>,
    pub ewv: EwvParams,
    pub mode: Mode,
    /// Run folds and probe sets on the rayon pool.
    pub parallel: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            strategies: Strategy::ALL.to_vec(),
            ewv: EwvParams::default(),
            mode: Mode::Fast,
            parallel: false,
        }
    }
}

/// Confusion counts, `counts[true][predicted]` in class order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub classes: Vec<ClassId>,
    pub counts: Vec<Vec<usize>>,
}

impl Confusion {
    fn new(classes: Vec<ClassId>) -> Self {
        let n = classes.len();
        Self { classes, counts: vec![vec![0; n]; n] }
    }

    fn index(&self, class: &str) -> Result<usize> {
        self.classes
            .binary_search_by(|c| c.as_str().cmp(class))
            .map_err(|_| Error::Correctness(format!("class `{class}` missing from confusion matrix")))
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyReport {
    pub strategy: Strategy,
    pub per_fold: Vec<f64>,
    pub mean: f64,
    /// Summed over folds.
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoldTiming {
    pub fold: usize,
    pub build_seconds: f64,
    pub classify_seconds: f64,
}

/// Outcome for one test set of one fold.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifiedSet {
    pub fold: usize,
    pub class_id: ClassId,
    pub set_id: String,
    pub predictions: Vec<(Strategy, ClassId)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvaluationReport {
    pub resolution: Resolution,
    pub mode: Mode,
    pub folds: usize,
    pub test_sets_per_fold: Vec<usize>,
    pub strategies: Vec<StrategyReport>,
    pub sets: Vec<ClassifiedSet>,
    pub timing: Vec<FoldTiming>,
}

impl EvaluationReport {
    pub fn strategy(&self, s: Strategy) -> Option<&StrategyReport> {
        self.strategies.iter().find(|r| r.strategy == s)
    }

    pub fn mean_accuracy(&self, s: Strategy) -> Option<f64> {
        self.strategy(s).map(|r| r.mean)
    }

    /// The report with timings cleared, for determinism comparisons.
    pub fn without_timing(&self) -> Self {
        Self { timing: Vec::new(), ..self.clone() }
    }

    /// One JSON line per strategy, then one per fold timing.
    pub fn records(&self) -> Vec<String> {
        let mut out: Vec<String> = self
            .strategies
            .iter()
            .map(|s| {
                serde_json::json!({
                    "record": "accuracy",
                    "resolution": self.resolution.to_string(),
                    "mode": self.mode,
                    "strategy": s.strategy,
                    "mean": s.mean,
                    "per_fold": s.per_fold,
                    "confusion": s.confusion,
                })
                .to_string()
            })
            .collect();
        out.extend(self.timing.iter().map(|t| {
            serde_json::json!({
                "record": "timing",
                "resolution": self.resolution.to_string(),
                "fold": t.fold,
                "build_seconds": t.build_seconds,
                "classify_seconds": t.classify_seconds,
            })
            .to_string()
        }));
        out
    }
}

/// Mean accuracies as a table: one row per strategy, one column per report.
pub fn format_table(reports: &[EvaluationReport]) -> String {
    let mut out = String::from("Method    ");
    for r in reports {
        let _ = write!(out, " {:>9}", r.resolution.to_string());
    }
    out.push('\n');
    let mut strategies: Vec<Strategy> = Vec::new();
    for r in reports {
        for s in &r.strategies {
            if !strategies.contains(&s.strategy) {
                strategies.push(s.strategy);
            }
        }
    }
    for s in strategies {
        let _ = write!(out, "{:<10}", s.to_string().to_uppercase());
        for r in reports {
            match r.mean_accuracy(s) {
                Some(a) => {
                    let _ = write!(out, " {a:>9.2}");
                }
                None => out.push_str("         -"),
            }
        }
        out.push('\n');
    }
    out
}

struct FoldOutcome {
    sets: Vec<ClassifiedSet>,
    timing: FoldTiming,
}

fn run_fold(
    data: &ImageSetCollection,
    fold: &Fold,
    protocol: &SplitProtocol,
    config: &EvalConfig,
) -> Result<FoldOutcome> {
    let cap = protocol.set_image_cap;
    let start = Instant::now();
    let mut pooled: BTreeMap<ClassId, Vec<FeatureVector>> = BTreeMap::new();
    for &i in &fold.gallery {
        let set = &data.sets[i];
        pooled.entry(set.class_id.clone()).or_default().extend_from_slice(set.first(cap));
    }
    let gallery_config = GalleryConfig {
        resolution: data.resolution,
        gallery_cap: protocol.gallery_image_cap,
        seed: fold.seed,
        precompute_pinv: config.mode == Mode::Fast,
        parallel: false,
        preprocessing: None,
    };
    let gallery = build_gallery(&pooled, &gallery_config)?;
    let build_seconds = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let classify = |&i: &usize| -> Result<ClassifiedSet> {
        let set = &data.sets[i];
        let probes = ProbeSet::from_vectors(set.set_id.clone(), set.first(cap), Some(set.class_id.clone()))?;
        let r = residual_matrix_with(&gallery, &probes, config.mode, false)?;
        let predictions = config
            .strategies
            .iter()
            .map(|&s| decide(&r, s, config.ewv).map(|d| (s, d.predicted)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ClassifiedSet { fold: fold.index, class_id: set.class_id.clone(), set_id: set.set_id.clone(), predictions })
    };
    let sets = if config.parallel {
        fold.test.par_iter().map(classify).collect::<Result<Vec<_>>>()?
    } else {
        fold.test.iter().map(classify).collect::<Result<Vec<_>>>()?
    };
    let classify_seconds = start.elapsed().as_secs_f64();
    Ok(FoldOutcome { sets, timing: FoldTiming { fold: fold.index, build_seconds, classify_seconds } })
}

/// Splits, builds a gallery per fold, classifies every test set and scores
/// each strategy.
pub fn evaluate(data: &ImageSetCollection, protocol: &SplitProtocol, config: &EvalConfig) -> Result<EvaluationReport> {
    if config.strategies.is_empty() {
        return Err(Error::Configuration("no strategies selected".into()));
    }
    let folds = make_splits(&data.keys(), protocol)?;
    let outcomes = if config.parallel {
        folds.par_iter().map(|f| run_fold(data, f, protocol, config)).collect::<Result<Vec<_>>>()?
    } else {
        folds.iter().map(|f| run_fold(data, f, protocol, config)).collect::<Result<Vec<_>>>()?
    };

    let classes = data.class_ids();
    let mut strategies = Vec::new();
    for (k, &strategy) in config.strategies.iter().enumerate() {
        let mut confusion = Confusion::new(classes.clone());
        let mut per_fold = Vec::new();
        for o in &outcomes {
            let mut correct = 0;
            for s in &o.sets {
                let predicted = &s.predictions[k].1;
                let (t, p) = (confusion.index(&s.class_id)?, confusion.index(predicted)?);
                confusion.counts[t][p] += 1;
                correct += usize::from(t == p);
            }
            per_fold.push(100.0 * correct as f64 / o.sets.len() as f64);
        }
        let mean = per_fold.iter().sum::<f64>() / per_fold.len() as f64;
        strategies.push(StrategyReport { strategy, per_fold, mean, confusion });
    }

    let test_sets_per_fold = outcomes.iter().map(|o| o.sets.len()).collect();
    let mut sets = Vec::new();
    let mut timing = Vec::new();
    for o in outcomes {
        sets.extend(o.sets);
        timing.push(o.timing);
    }
    Ok(EvaluationReport {
        resolution: data.resolution,
        mode: config.mode,
        folds: folds.len(),
        test_sets_per_fold,
        strategies,
        sets,
        timing,
    })
}
