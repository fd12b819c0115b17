//! Residuals of probe images against gallery subspaces, and the three
//! set-level decision rules built on them.
//!
//! Two paths produce the residual matrix. The online path solves one least
//! squares problem per (class, image) pair straight from the regressor, the
//! way a system that sees images one at a time would. The fast path uses the
//! pseudoinverse cached at gallery time and reconstructs a whole probe set
//! with two matrix products per class.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::gallery::{Gallery, Regressor, SINGULAR_RATIO};
use crate::preprocess::FeatureVector;
use crate::{ClassId, Error, Result};

/// One image set to classify, as a `tau x N_P` matrix of column vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeSet {
    set_id: String,
    true_class: Option<ClassId>,
    matrix: DMatrix<f64>,
}

impl ProbeSet {
    pub fn from_matrix(set_id: impl Into<String>, matrix: DMatrix<f64>, true_class: Option<ClassId>) -> Result<Self> {
        if matrix.ncols() == 0 || matrix.nrows() == 0 {
            return Err(Error::invalid("probe set needs at least one image"));
        }
        Ok(Self { set_id: set_id.into(), true_class, matrix })
    }

    pub fn from_vectors(set_id: impl Into<String>, vectors: &[FeatureVector], true_class: Option<ClassId>) -> Result<Self> {
        let tau = vectors.first().map_or(0, FeatureVector::len);
        if vectors.iter().any(|v| v.len() != tau) {
            return Err(Error::invalid("probe images have different lengths"));
        }
        let matrix = DMatrix::from_fn(tau, vectors.len(), |i, j| vectors[j].values()[i]);
        Self::from_matrix(set_id, matrix, true_class)
    }

    pub fn set_id(&self) -> &str {
        &self.set_id
    }

    pub fn true_class(&self) -> Option<&str> {
        self.true_class.as_deref()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn tau(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn len(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.matrix.ncols() == 0
    }
}

/// Least-squares parameters `theta` minimising `|Z theta - rho|`, solved
/// through a Householder QR factorization of the regressor.
pub fn estimate_parameters(reg: &Regressor, probe: &[f64]) -> Result<DVector<f64>> {
    if probe.len() != reg.tau() {
        return Err(Error::invalid(format!(
            "probe length {} does not match regressor length {}",
            probe.len(),
            reg.tau()
        )));
    }
    let conditioning = || Error::Conditioning(format!("class `{}` is singular", reg.class_id()));
    if reg.matrix().iter().any(|v| !v.is_finite()) {
        return Err(conditioning());
    }
    let qr = reg.matrix().clone().qr();
    let r = qr.r();
    let diag = r.diagonal().abs();
    let max = diag.max();
    // |r_ii| >= sigma_min, so this never rejects a regressor the gallery accepted.
    if max == 0.0 || diag.min() <= SINGULAR_RATIO * max {
        return Err(conditioning());
    }
    let qt_rho = qr.q().tr_mul(&DVector::from_column_slice(probe));
    r.solve_upper_triangular(&qt_rho).ok_or_else(conditioning)
}

/// Reconstruction `Z theta`. Not clamped to the pixel range.
pub fn project(reg: &Regressor, theta: &DVector<f64>) -> Result<DVector<f64>> {
    if theta.len() != reg.n_images() {
        return Err(Error::invalid(format!(
            "parameter vector has length {}, regressor has {} columns",
            theta.len(),
            reg.n_images()
        )));
    }
    Ok(reg.matrix() * theta)
}

/// Euclidean distance between a probe and its reconstruction.
pub fn residual(probe: &[f64], reconstruction: &[f64]) -> Result<f64> {
    if probe.len() != reconstruction.len() {
        return Err(Error::invalid(format!(
            "residual of vectors with lengths {} and {}",
            probe.len(),
            reconstruction.len()
        )));
    }
    Ok(probe
        .iter()
        .zip(reconstruction)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Per-image least squares, no cached state.
    Online,
    /// Batch reconstruction through the cached pseudoinverse.
    Fast,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Online => "online",
            Mode::Fast => "fast",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "online" => Ok(Mode::Online),
            "fast" => Ok(Mode::Fast),
            _ => Err(Error::invalid(format!("unknown mode `{s}` (expected online or fast)"))),
        }
    }
}

/// `values[(y, j)]` is the residual of probe image `j` against class `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualMatrix {
    values: DMatrix<f64>,
    class_order: Vec<ClassId>,
}

impl ResidualMatrix {
    pub fn new(class_order: Vec<ClassId>, values: DMatrix<f64>) -> Result<Self> {
        if class_order.is_empty() || values.ncols() == 0 {
            return Err(Error::invalid("residual matrix needs at least one class and one image"));
        }
        if values.nrows() != class_order.len() {
            return Err(Error::invalid(format!(
                "{} residual rows for {} classes",
                values.nrows(),
                class_order.len()
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(Error::invalid(format!("residual {v} is negative or not finite")));
        }
        Ok(Self { values, class_order })
    }

    /// Builds from one row per class.
    pub fn from_rows(class_order: Vec<ClassId>, rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("ragged residual rows"));
        }
        let values = DMatrix::from_fn(rows.len(), n, |y, j| rows[y][j]);
        Self::new(class_order, values)
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn class_order(&self) -> &[ClassId] {
        &self.class_order
    }

    pub fn class_count(&self) -> usize {
        self.values.nrows()
    }

    pub fn probe_count(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, class: usize, image: usize) -> f64 {
        self.values[(class, image)]
    }

    /// Same residuals with probe images reordered; `order[k]` is the source column.
    pub fn permute_images(&self, order: &[usize]) -> Result<Self> {
        let values = DMatrix::from_fn(self.class_count(), order.len(), |y, k| self.values[(y, order[k])]);
        Self::new(self.class_order.clone(), values)
    }
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_difference(a: f64, b: f64, floor: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs()).max(floor)
    }
}

/// Largest entrywise [`relative_difference`] between two residual matrices of
/// the same probe set. The floor for column `j` is `1e-8 * |rho_j|`, so
/// residuals at round-off level are compared against the probe scale.
pub fn max_relative_difference(a: &ResidualMatrix, b: &ResidualMatrix, probes: &ProbeSet) -> f64 {
    assert_eq!(a.values.shape(), b.values.shape());
    let mut worst: f64 = 0.0;
    for j in 0..a.probe_count() {
        let floor = 1e-8 * probes.matrix.column(j).norm();
        for y in 0..a.class_count() {
            worst = worst.max(relative_difference(a.values[(y, j)], b.values[(y, j)], floor));
        }
    }
    worst
}

fn online_row(reg: &Regressor, probes: &ProbeSet) -> Result<Vec<f64>> {
    probes
        .matrix
        .column_iter()
        .map(|col| {
            let rho = col.as_slice();
            let theta = estimate_parameters(reg, rho)?;
            let rec = project(reg, &theta)?;
            residual(rho, rec.as_slice())
        })
        .collect()
}

fn fast_row(reg: &Regressor, probes: &ProbeSet) -> Result<Vec<f64>> {
    let pinv = reg.pinv().ok_or_else(|| {
        Error::Configuration(format!(
            "fast mode needs a cached pseudoinverse, class `{}` has none",
            reg.class_id()
        ))
    })?;
    let theta = pinv * &probes.matrix;
    let rec = reg.matrix() * theta;
    Ok((0..probes.len())
        .map(|j| (probes.matrix.column(j) - rec.column(j)).norm())
        .collect())
}

/// Residual matrix for `probes` against every gallery class.
pub fn residual_matrix(gallery: &Gallery, probes: &ProbeSet, mode: Mode) -> Result<ResidualMatrix> {
    residual_matrix_with(gallery, probes, mode, false)
}

/// As [`residual_matrix`], optionally spreading classes over the rayon pool.
pub fn residual_matrix_with(gallery: &Gallery, probes: &ProbeSet, mode: Mode, parallel: bool) -> Result<ResidualMatrix> {
    if probes.tau() != gallery.tau() {
        return Err(Error::Configuration(format!(
            "probe feature length {} does not match gallery length {}",
            probes.tau(),
            gallery.tau()
        )));
    }
    if mode == Mode::Fast && !gallery.has_pinv() {
        return Err(Error::Configuration(
            "fast mode needs cached pseudoinverses; rebuild the gallery in fast mode or use online".into(),
        ));
    }
    let row = |reg: &Regressor| match mode {
        Mode::Online => online_row(reg, probes),
        Mode::Fast => fast_row(reg, probes),
    }
    .map_err(|e| e.in_class(reg.class_id()));
    let rows: Vec<Vec<f64>> = if parallel {
        gallery.classes().par_iter().map(row).collect::<Result<_>>()?
    } else {
        gallery.classes().iter().map(row).collect::<Result<_>>()?
    };
    ResidualMatrix::from_rows(gallery.class_ids(), &rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Majority voting.
    Mv,
    /// Nearest neighbour.
    Nn,
    /// Exponential weighted voting.
    Ewv,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Mv, Strategy::Nn, Strategy::Ewv];
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Mv => "mv",
            Strategy::Nn => "nn",
            Strategy::Ewv => "ewv",
        })
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mv" => Ok(Strategy::Mv),
            "nn" => Ok(Strategy::Nn),
            "ewv" => Ok(Strategy::Ewv),
            _ => Err(Error::invalid(format!("unknown strategy `{s}` (expected mv, nn or ewv)"))),
        }
    }
}

/// Parameters of exponential weighted voting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EwvParams {
    pub beta: f64,
    /// Divide residuals by their overall mean before weighting.
    pub normalize: bool,
}

impl Default for EwvParams {
    fn default() -> Self {
        Self { beta: 2.0, normalize: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub predicted: ClassId,
    pub strategy: Strategy,
    /// Votes (MV), smallest residual (NN) or accumulated weight (EWV), in class order.
    pub per_class_score: Vec<(ClassId, f64)>,
    /// Winning class of each probe image (MV only).
    pub per_image_votes: Option<Vec<ClassId>>,
    pub tie_broken: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: ClassId,
    pub score: f64,
}

/// One line of classifier output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub set_id: String,
    pub predicted: ClassId,
    pub strategy: Strategy,
    pub tie_broken: bool,
    pub scores: Vec<ClassScore>,
}

impl Decision {
    pub fn record(&self, set_id: &str) -> DecisionRecord {
        DecisionRecord {
            set_id: set_id.to_string(),
            predicted: self.predicted.clone(),
            strategy: self.strategy,
            tie_broken: self.tie_broken,
            scores: self
                .per_class_score
                .iter()
                .map(|(class, score)| ClassScore { class: class.clone(), score: *score })
                .collect(),
        }
    }
}

impl DecisionRecord {
    /// Single-line JSON; floats are written with shortest round-trip digits.
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("record serializes")
    }

    pub fn from_line(line: &str) -> Result<Self> {
        serde_json::from_str(line).map_err(|e| Error::invalid(format!("bad decision record: {e}")))
    }
}

/// Index of the first minimum, and whether the minimum was shared.
fn argmin_first(values: impl Iterator<Item = f64>) -> (usize, bool) {
    let mut best = (0, f64::INFINITY);
    let mut tied = false;
    for (i, v) in values.enumerate() {
        if v < best.1 {
            best = (i, v);
            tied = false;
        } else if v == best.1 {
            tied = true;
        }
    }
    (best.0, tied)
}

fn scores(r: &ResidualMatrix, values: Vec<f64>) -> Vec<(ClassId, f64)> {
    r.class_order.iter().cloned().zip(values).collect()
}

/// Majority voting. Each image votes for its smallest-residual class; a tie
/// in vote count goes to the tied class with the smallest mean residual,
/// then to the lowest class index.
pub fn decide_mv(r: &ResidualMatrix) -> Decision {
    let classes = r.class_count();
    let images = r.probe_count();
    let mut votes = vec![0usize; classes];
    let mut per_image = Vec::with_capacity(images);
    for j in 0..images {
        let (y, _) = argmin_first(r.values.column(j).iter().copied());
        votes[y] += 1;
        per_image.push(r.class_order[y].clone());
    }
    let top = votes.iter().copied().max().unwrap_or(0);
    let contenders: Vec<usize> = (0..classes).filter(|&y| votes[y] == top).collect();
    let (predicted, tie_broken) = if contenders.len() == 1 {
        (contenders[0], false)
    } else {
        let means = contenders.iter().map(|&y| r.values.row(y).sum() / images as f64);
        (contenders[argmin_first(means).0], true)
    };
    Decision {
        predicted: r.class_order[predicted].clone(),
        strategy: Strategy::Mv,
        per_class_score: scores(r, votes.iter().map(|&v| v as f64).collect()),
        per_image_votes: Some(per_image),
        tie_broken,
    }
}

/// Nearest neighbour: the class owning the smallest single residual.
pub fn decide_nn(r: &ResidualMatrix) -> Decision {
    let minima: Vec<f64> = (0..r.class_count()).map(|y| r.values.row(y).min()).collect();
    let (predicted, tie_broken) = argmin_first(minima.iter().copied());
    Decision {
        predicted: r.class_order[predicted].clone(),
        strategy: Strategy::Nn,
        per_class_score: scores(r, minima),
        per_image_votes: None,
        tie_broken,
    }
}

/// Exponential weighted voting: class weight `sum_j exp(-beta r_yj)`,
/// largest wins. With `normalize`, residuals are first divided by their
/// overall mean (skipped when that mean is zero).
pub fn decide_ewv(r: &ResidualMatrix, beta: f64, normalize: bool) -> Result<Decision> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be positive, got {beta}")));
    }
    let mean = r.values.mean();
    let divisor = if normalize && mean > 0.0 { mean } else { 1.0 };
    let weights: Vec<f64> = (0..r.class_count())
        .map(|y| r.values.row(y).iter().map(|&v| (-beta * (v / divisor)).exp()).sum())
        .collect();
    let (predicted, tie_broken) = argmin_first(weights.iter().map(|w| -w));
    Ok(Decision {
        predicted: r.class_order[predicted].clone(),
        strategy: Strategy::Ewv,
        per_class_score: scores(r, weights),
        per_image_votes: None,
        tie_broken,
    })
}

pub fn decide(r: &ResidualMatrix, strategy: Strategy, ewv: EwvParams) -> Result<Decision> {
    match strategy {
        Strategy::Mv => Ok(decide_mv(r)),
        Strategy::Nn => Ok(decide_nn(r)),
        Strategy::Ewv => decide_ewv(r, ewv.beta, ewv.normalize),
    }
}

/// Residual matrix followed by the chosen decision rule.
pub fn classify_set(gallery: &Gallery, probes: &ProbeSet, strategy: Strategy, mode: Mode, ewv: EwvParams) -> Result<Decision> {
    let r = residual_matrix(gallery, probes, mode)?;
    decide(&r, strategy, ewv)
}
