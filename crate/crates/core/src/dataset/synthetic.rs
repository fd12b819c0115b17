use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{ImageSetCollection, LabeledSet};
use crate::preprocess::{FeatureVector, Resolution};
use crate::seed;
use crate::{Error, Result};

/// Each class is a random `subspace_dim`-dimensional subspace of R^tau;
/// images are random non-negative combinations of its basis plus Gaussian
/// noise in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub subspace_dim: usize,
    pub tau: usize,
    pub sets_per_class: usize,
    pub images_per_set: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subspace_dim == 0 || self.subspace_dim >= self.tau {
            return Err(Error::invalid(format!(
                "subspace dimension must be in 1..tau, got {} with tau {}",
                self.subspace_dim, self.tau
            )));
        }
        if self.classes == 0 || self.sets_per_class == 0 || self.images_per_set == 0 {
            return Err(Error::invalid("classes, sets and images per set must all be at least 1"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::invalid(format!("noise sigma must be finite and >= 0, got {}", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Generates a labelled collection at resolution `tau x 1`. Class ids are
/// `class00, class01, ..` and set ids `set00, set01, ..`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<ImageSetCollection> {
    spec.validate()?;
    let (tau, k) = (spec.tau, spec.subspace_dim);
    let mut rng = seed::rng(spec.seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::invalid(e.to_string()))?;
    let gain = 255.0 / k as f64;

    let mut raw: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    for c in 0..spec.classes {
        let basis: Vec<f64> = (0..tau * k).map(|_| rng.random::<f64>()).collect();
        for s in 0..spec.sets_per_class {
            for _ in 0..spec.images_per_set {
                let coef: Vec<f64> = (0..k).map(|_| rng.random::<f64>()).collect();
                let x = (0..tau)
                    .map(|i| {
                        let clean: f64 = (0..k).map(|j| basis[j * tau + i] * coef[j]).sum();
                        gain * clean + noise.sample(&mut rng)
                    })
                    .collect();
                raw.push((c, s, x));
            }
        }
    }

    // One affine map for the whole dataset keeps class geometry comparable.
    let (lo, hi) = raw
        .iter()
        .flat_map(|(_, _, x)| x.iter())
        .fold((0.0f64, 255.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let scale = 255.0 / (hi - lo);

    let width = |n: usize| (n.max(2) - 1).to_string().len().max(2);
    let (cw, sw) = (width(spec.classes), width(spec.sets_per_class));
    let resolution = Resolution::new(tau, 1)?;
    let mut sets: Vec<LabeledSet> = Vec::new();
    for (c, s, x) in raw {
        let values = x.into_iter().map(|v| ((v - lo) * scale).clamp(0.0, 255.0)).collect();
        let v = FeatureVector::new(values, resolution)?;
        match sets.last_mut() {
            Some(last) if last.vectors.len() < spec.images_per_set => last.vectors.push(v),
            _ => sets.push(LabeledSet {
                class_id: format!("class{c:0cw$}"),
                set_id: format!("set{s:0sw$}"),
                vectors: vec![v],
            }),
        }
    }
    Ok(ImageSetCollection::new(resolution, sets))
}
