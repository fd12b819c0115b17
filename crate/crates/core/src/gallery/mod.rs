//! Per-class regressors.
//!
//! A regressor is the `tau x N` matrix whose columns are one class's gallery
//! feature vectors. Construction enforces `tau >= N`; rank-deficient
//! regressors are perturbed with bounded uniform noise, and the fast path
//! caches a Moore-Penrose pseudoinverse next to the matrix.

mod format;

use std::collections::{BTreeMap, HashSet};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::preprocess::{FeatureVector, PreprocessConfig, Resolution};
use crate::{linalg, seed};
use crate::{ClassId, Error, Result};

pub use format::{deserialize, read_file, serialize, write_file, MAGIC, VERSION};

/// Smallest-to-largest singular value ratio at or below which a regressor is
/// treated as rank deficient.
pub const SINGULAR_RATIO: f64 = 1e-10;

/// Largest magnitude of a single perturbation entry, on the 0-255 scale.
pub const PERTURBATION_BOUND: f64 = 0.5;

/// Total perturbation attempts (each with a fresh derived seed) before giving up.
pub const MAX_PERTURB_ATTEMPTS: u64 = 3;

/// Relative Frobenius tolerance for the Moore-Penrose identities.
pub const PINV_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Regressor {
    class_id: ClassId,
    matrix: DMatrix<f64>,
    perturbed: bool,
    perturbation_seed: Option<u64>,
    pinv: Option<DMatrix<f64>>,
}

impl Regressor {
    /// Wraps an existing `tau x N` matrix. Requires `1 <= N <= tau`.
    pub fn from_matrix(class_id: impl Into<ClassId>, matrix: DMatrix<f64>) -> Result<Self> {
        let (tau, n) = matrix.shape();
        check_shape(tau, n)?;
        Ok(Self {
            class_id: class_id.into(),
            matrix,
            perturbed: false,
            perturbation_seed: None,
            pinv: None,
        })
    }

    pub(crate) fn from_parts(
        class_id: ClassId,
        matrix: DMatrix<f64>,
        perturbation_seed: Option<u64>,
        pinv: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let mut reg = Self::from_matrix(class_id, matrix)?;
        if let Some(p) = &pinv {
            if p.shape() != (reg.n_images(), reg.tau()) {
                return Err(Error::Format("pseudoinverse shape does not match regressor".into()));
            }
        }
        reg.perturbed = perturbation_seed.is_some();
        reg.perturbation_seed = perturbation_seed;
        reg.pinv = pinv;
        Ok(reg)
    }

    pub fn class_id(&self) -> &str {
        &self.class_id
    }

    /// The (possibly perturbed) regressor matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn is_perturbed(&self) -> bool {
        self.perturbed
    }

    pub fn perturbation_seed(&self) -> Option<u64> {
        self.perturbation_seed
    }

    pub fn pinv(&self) -> Option<&DMatrix<f64>> {
        self.pinv.as_ref()
    }

    pub fn tau(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn n_images(&self) -> usize {
        self.matrix.ncols()
    }
}

fn check_shape(tau: usize, n: usize) -> Result<()> {
    if n == 0 || tau == 0 {
        return Err(Error::invalid("regressor needs at least one non-empty column"));
    }
    if n > tau {
        return Err(Error::Constraint(format!(
            "{n} gallery images exceed feature dimension {tau}; the number of features must be \
             greater than or equal to the number of images (use subsample_gallery to cap the gallery)"
        )));
    }
    Ok(())
}

/// Horizontally concatenates `vectors` in order.
pub fn build_regressor(vectors: &[FeatureVector], class_id: impl Into<ClassId>) -> Result<Regressor> {
    let class_id = class_id.into();
    let tau = vectors
        .first()
        .map(FeatureVector::len)
        .ok_or_else(|| Error::invalid(format!("class `{class_id}` has no gallery images")))?;
    if vectors.iter().any(|v| v.len() != tau) {
        return Err(Error::invalid(format!("class `{class_id}` mixes feature lengths")));
    }
    check_shape(tau, vectors.len())?;
    let matrix = DMatrix::from_fn(tau, vectors.len(), |i, j| vectors[j].values()[i]);
    Regressor::from_matrix(class_id, matrix)
}

/// Uniform sample of `cap` vectors without replacement, original order kept.
/// Returns the input unchanged when it already fits.
pub fn subsample_gallery(vectors: &[FeatureVector], cap: usize, seed: u64) -> Result<Vec<FeatureVector>> {
    Ok(subsample_indices(vectors.len(), cap, seed)?
        .into_iter()
        .map(|i| vectors[i].clone())
        .collect())
}

/// The indices [`subsample_gallery`] keeps, ascending.
pub fn subsample_indices(len: usize, cap: usize, seed: u64) -> Result<Vec<usize>> {
    if cap == 0 {
        return Err(Error::invalid("gallery cap must be at least 1"));
    }
    if len <= cap {
        return Ok((0..len).collect());
    }
    let mut rng = seed::rng(seed);
    let mut keep = rand::seq::index::sample(&mut rng, len, cap).into_vec();
    keep.sort_unstable();
    Ok(keep)
}

fn singular_ratio_is_low(m: &DMatrix<f64>) -> bool {
    let Some(sv) = linalg::singular_values(m) else { return true };
    let max = sv.first().copied().unwrap_or(0.0);
    let min = sv.last().copied().unwrap_or(0.0);
    max == 0.0 || min <= SINGULAR_RATIO * max
}

/// True iff the column rank of the regressor is below its column count,
/// judged by the smallest-to-largest singular value ratio.
pub fn detect_singularity(reg: &Regressor) -> bool {
    singular_ratio_is_low(&reg.matrix)
}

fn add_uniform_noise(matrix: &DMatrix<f64>, seed: u64) -> DMatrix<f64> {
    let mut rng = seed::rng(seed);
    let mut out = matrix.clone();
    // nalgebra storage is column-major, so draws follow column-major order.
    for v in out.iter_mut() {
        *v += 2.0 * PERTURBATION_BOUND * seed::unit_f64(&mut rng) - PERTURBATION_BOUND;
    }
    out
}

/// Adds independent uniform noise in `[-0.5, 0.5]` to every entry.
///
/// If the result is still singular, the original matrix is perturbed again
/// with seeds derived from `seed`, up to [`MAX_PERTURB_ATTEMPTS`] attempts in
/// total. The seed that succeeded is recorded. Any cached pseudoinverse is
/// dropped.
pub fn perturb(reg: &Regressor, seed: u64) -> Result<Regressor> {
    for attempt in 0..MAX_PERTURB_ATTEMPTS {
        let s = if attempt == 0 { seed } else { seed::derive_index(seed, attempt) };
        let matrix = add_uniform_noise(&reg.matrix, s);
        if !singular_ratio_is_low(&matrix) {
            return Ok(Regressor {
                class_id: reg.class_id.clone(),
                matrix,
                perturbed: true,
                perturbation_seed: Some(s),
                pinv: None,
            });
        }
    }
    Err(Error::Conditioning(format!(
        "class `{}` is still singular after {MAX_PERTURB_ATTEMPTS} perturbations",
        reg.class_id
    )))
}

fn frobenius_ratio(residual: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    let scale = reference.norm();
    if scale == 0.0 {
        residual.norm()
    } else {
        residual.norm() / scale
    }
}

/// Caches the Moore-Penrose pseudoinverse, computed from the SVD.
///
/// The result is checked against `A A+ A = A` before it is stored.
pub fn precompute_pseudoinverse(reg: &Regressor) -> Result<Regressor> {
    let conditioning = || {
        Error::Conditioning(format!(
            "class `{}` is singular; perturb it before caching a pseudoinverse",
            reg.class_id
        ))
    };
    if detect_singularity(reg) {
        return Err(conditioning());
    }
    let pinv = linalg::pseudo_inverse(&reg.matrix, SINGULAR_RATIO).ok_or_else(conditioning)?;
    let a = &reg.matrix;
    if frobenius_ratio(&(a * &pinv * a - a), a) > PINV_TOLERANCE {
        return Err(conditioning());
    }
    let mut out = reg.clone();
    out.pinv = Some(pinv);
    Ok(out)
}

/// Knobs for [`build_gallery`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GalleryConfig {
    pub resolution: Resolution,
    /// Per-class image cap; `None` means `floor(0.8 * tau)`.
    pub gallery_cap: Option<usize>,
    pub seed: u64,
    /// Cache pseudoinverses for the fast classification path.
    pub precompute_pinv: bool,
    /// Build classes on the rayon pool. Results are identical either way.
    pub parallel: bool,
    pub preprocessing: Option<PreprocessConfig>,
}

impl GalleryConfig {
    pub fn new(resolution: Resolution, seed: u64) -> Self {
        Self {
            resolution,
            gallery_cap: None,
            seed,
            precompute_pinv: true,
            parallel: false,
            preprocessing: None,
        }
    }

    pub fn effective_cap(&self) -> usize {
        self.gallery_cap
            .unwrap_or_else(|| default_gallery_cap(self.resolution.tau()))
    }
}

/// `floor(0.8 * tau)`, at least 1.
pub fn default_gallery_cap(tau: usize) -> usize {
    (tau * 4 / 5).max(1)
}

/// Seed used to subsample class `class_id`.
pub fn subsample_seed(master: u64, class_id: &str) -> u64 {
    seed::derive(master, format!("subsample/{class_id}").as_bytes())
}

/// Seed used to perturb class `class_id`.
pub fn perturbation_seed(master: u64, class_id: &str) -> u64 {
    seed::derive(master, format!("perturb/{class_id}").as_bytes())
}

fn build_class(class_id: &str, vectors: &[FeatureVector], config: &GalleryConfig) -> Result<Regressor> {
    let tau = config.resolution.tau();
    if let Some(v) = vectors.iter().find(|v| v.len() != tau) {
        return Err(Error::invalid(format!(
            "feature length {} does not match resolution {}",
            v.len(),
            config.resolution
        )));
    }
    let kept = subsample_gallery(vectors, config.effective_cap(), subsample_seed(config.seed, class_id))?;
    let mut reg = build_regressor(&kept, class_id)?;
    if detect_singularity(&reg) {
        reg = perturb(&reg, perturbation_seed(config.seed, class_id))?;
    }
    if config.precompute_pinv {
        reg = precompute_pseudoinverse(&reg)?;
    }
    Ok(reg)
}

/// Subsample, build, conditionally perturb and optionally cache the
/// pseudoinverse for every class. Classes keep the map's (sorted) order.
pub fn build_gallery(sets: &BTreeMap<ClassId, Vec<FeatureVector>>, config: &GalleryConfig) -> Result<Gallery> {
    if sets.is_empty() {
        return Err(Error::invalid("gallery needs at least one class"));
    }
    let one = |(id, vectors): (&ClassId, &Vec<FeatureVector>)| {
        build_class(id, vectors, config).map_err(|e| e.in_class(id))
    };
    let classes = if config.parallel {
        sets.par_iter().map(one).collect::<Result<Vec<_>>>()?
    } else {
        sets.iter().map(one).collect::<Result<Vec<_>>>()?
    };
    let mut gallery = Gallery::new(config.resolution, classes)?;
    gallery.preprocessing = config.preprocessing;
    Ok(gallery)
}

/// The enrolled classes. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct Gallery {
    resolution: Resolution,
    classes: Vec<Regressor>,
    preprocessing: Option<PreprocessConfig>,
}

impl Gallery {
    pub fn new(resolution: Resolution, classes: Vec<Regressor>) -> Result<Self> {
        if classes.is_empty() {
            return Err(Error::invalid("gallery needs at least one class"));
        }
        let tau = resolution.tau();
        let mut seen = HashSet::new();
        for reg in &classes {
            if reg.tau() != tau {
                return Err(Error::invalid(format!(
                    "class `{}` has feature length {}, resolution {resolution} needs {tau}",
                    reg.class_id,
                    reg.tau()
                )));
            }
            if !seen.insert(reg.class_id.as_str()) {
                return Err(Error::invalid(format!("duplicate class `{}`", reg.class_id)));
            }
        }
        Ok(Self { resolution, classes, preprocessing: None })
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn tau(&self) -> usize {
        self.resolution.tau()
    }

    pub fn classes(&self) -> &[Regressor] {
        &self.classes
    }

    pub fn class_ids(&self) -> Vec<ClassId> {
        self.classes.iter().map(|r| r.class_id.clone()).collect()
    }

    /// Preprocessing used to build the gallery, when known. Not persisted in
    /// gallery files.
    pub fn preprocessing(&self) -> Option<&PreprocessConfig> {
        self.preprocessing.as_ref()
    }

    /// True when every class carries a cached pseudoinverse.
    pub fn has_pinv(&self) -> bool {
        self.classes.iter().all(|r| r.pinv.is_some())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use isrc_oracle as oracle;
    use rand::Rng;

    fn res(tau: usize) -> Resolution {
        Resolution::new(tau, 1).unwrap()
    }

    fn random_vectors(n: usize, tau: usize, seed: u64) -> Vec<FeatureVector> {
        let mut rng = seed::rng(seed);
        (0..n)
            .map(|_| FeatureVector::new((0..tau).map(|_| rng.random_range(0.0..=255.0)).collect(), res(tau)).unwrap())
            .collect()
    }

    fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.column_iter().map(|c| c.iter().copied().collect()).collect()
    }

    #[test]
    fn regressor_columns_follow_input_order() {
        let v = random_vectors(3, 100, 1);
        let reg = build_regressor(&v, "a").unwrap();
        assert_eq!(reg.matrix().shape(), (100, 3));
        for (j, vec) in v.iter().enumerate() {
            assert_eq!(reg.matrix().column(j).as_slice(), vec.values());
        }
        assert!(!reg.is_perturbed() && reg.pinv().is_none());
        assert_eq!(build_regressor(&v[..1], "a").unwrap().matrix().shape(), (100, 1));
    }

    #[test]
    fn too_many_images_is_a_constraint_error() {
        let v = random_vectors(101, 100, 2);
        let err = build_regressor(&v, "a").unwrap_err();
        assert!(matches!(err, Error::Constraint(ref m) if m.contains("greater than or equal") && m.contains("subsample_gallery")));
    }

    #[test]
    fn subsample_contract() {
        let v = random_vectors(10, 4, 3);
        assert_eq!(subsample_gallery(&v, 20, 9).unwrap(), v);
        let a = subsample_indices(500, 80, 42).unwrap();
        assert_eq!(a, subsample_indices(500, 80, 42).unwrap());
        assert_eq!(a.len(), 80);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(subsample_indices(5, 0, 1).is_err());
    }

    #[test]
    fn subsample_is_uniform() {
        let trials = 10_000u64;
        let mut hits = [0u32; 5];
        for t in 0..trials {
            for i in subsample_indices(5, 2, seed::derive_index(77, t)).unwrap() {
                hits[i] += 1;
            }
        }
        for h in hits {
            let freq = f64::from(h) / trials as f64;
            assert!((freq - 0.4).abs() <= 0.02, "{freq}");
        }
    }

    #[test]
    fn singularity_examples() {
        let v = random_vectors(1, 20, 4);
        let dup = build_regressor(&[v[0].clone(), v[0].clone()], "d").unwrap();
        assert!(detect_singularity(&dup));

        let mut eye = DMatrix::zeros(10, 4);
        for i in 0..4 {
            eye[(i, i)] = 1.0;
        }
        assert!(!detect_singularity(&Regressor::from_matrix("e", eye).unwrap()));

        let rand = build_regressor(&random_vectors(10, 100, 5), "r").unwrap();
        assert_eq!(oracle::rank(&columns(rand.matrix()), 1e-10), 10);
        assert!(!detect_singularity(&rand));
    }

    #[test]
    fn perturbation_is_bounded_deterministic_and_fixes_rank() {
        let v = random_vectors(1, 100, 6);
        let dup = build_regressor(&[v[0].clone(), v[0].clone()], "d").unwrap();
        let a = perturb(&dup, 11).unwrap();
        let b = perturb(&dup, 11).unwrap();
        assert_eq!(a, b);
        assert!(a.is_perturbed());
        assert_eq!(a.perturbation_seed(), Some(11));
        let max = (a.matrix() - dup.matrix()).amax();
        assert!(max <= PERTURBATION_BOUND);
        assert!(!detect_singularity(&a));
        assert_eq!(oracle::rank(&columns(a.matrix()), 1e-10), 2);
    }

    #[test]
    fn hopeless_matrix_fails_after_retries() {
        let m = DMatrix::from_element(3, 1, f64::INFINITY);
        let reg = Regressor::from_matrix("x", m).unwrap();
        assert!(matches!(perturb(&reg, 1), Err(Error::Conditioning(_))));
    }

    #[test]
    fn pinv_closed_forms() {
        let g = DMatrix::from_column_slice(4, 1, &[1.0, 2.0, 3.0, 4.0]);
        let reg = precompute_pseudoinverse(&Regressor::from_matrix("g", g.clone()).unwrap()).unwrap();
        let expected = g.transpose() / 30.0;
        assert!((reg.pinv().unwrap() - expected).norm() < 1e-12);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let q = DMatrix::from_column_slice(3, 2, &[s, s, 0.0, -s, s, 0.0]);
        let reg = precompute_pseudoinverse(&Regressor::from_matrix("q", q.clone()).unwrap()).unwrap();
        assert!((reg.pinv().unwrap() - q.transpose()).norm() < 1e-12);
    }

    #[test]
    fn pinv_matches_normal_equations_oracle() {
        let reg = build_regressor(&random_vectors(5, 50, 7), "r").unwrap();
        let reg = precompute_pseudoinverse(&reg).unwrap();
        let rows = oracle::pinv_normal(&columns(reg.matrix())).unwrap();
        let expected = DMatrix::from_fn(5, 50, |i, j| rows[i][j]);
        let pinv = reg.pinv().unwrap();
        assert!((pinv - &expected).norm() <= 1e-8 * expected.norm());

        // All four Penrose identities.
        let a = reg.matrix();
        assert!(frobenius_ratio(&(a * pinv * a - a), a) <= PINV_TOLERANCE);
        assert!(frobenius_ratio(&(pinv * a * pinv - pinv), pinv) <= PINV_TOLERANCE);
        let ap = a * pinv;
        assert!(frobenius_ratio(&(&ap - ap.transpose()), &ap) <= PINV_TOLERANCE);
        let pa = pinv * a;
        assert!(frobenius_ratio(&(&pa - pa.transpose()), &pa) <= PINV_TOLERANCE);
    }

    #[test]
    fn pinv_refuses_singular_input() {
        let v = random_vectors(1, 10, 8);
        let dup = build_regressor(&[v[0].clone(), v[0].clone()], "d").unwrap();
        assert!(matches!(precompute_pseudoinverse(&dup), Err(Error::Conditioning(_))));
    }

    #[test]
    fn gallery_build_examples() {
        let mut sets = BTreeMap::new();
        sets.insert("a".to_string(), random_vectors(3, 100, 9));
        sets.insert("b".to_string(), random_vectors(3, 100, 10));
        let g = build_gallery(&sets, &GalleryConfig::new(res(100), 1)).unwrap();
        assert_eq!(g.class_ids(), vec!["a", "b"]);
        assert!(g.classes().iter().all(|r| !r.is_perturbed()));
        assert!(g.has_pinv());
        for r in g.classes() {
            assert_eq!(oracle::rank(&columns(r.matrix()), 1e-10), 3);
        }

        let one = random_vectors(1, 100, 11);
        let mut dup = BTreeMap::new();
        dup.insert("same".to_string(), vec![one[0].clone(); 4]);
        let g = build_gallery(&dup, &GalleryConfig::new(res(100), 1)).unwrap();
        assert!(g.classes()[0].is_perturbed());

        assert!(matches!(build_gallery(&BTreeMap::new(), &GalleryConfig::new(res(100), 1)), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn gallery_errors_name_the_class() {
        let mut sets = BTreeMap::new();
        sets.insert("big".to_string(), random_vectors(12, 10, 12));
        let mut cfg = GalleryConfig::new(res(10), 1);
        cfg.gallery_cap = Some(11);
        match build_gallery(&sets, &cfg) {
            Err(Error::Class { class_id, source }) => {
                assert_eq!(class_id, "big");
                assert!(matches!(*source, Error::Constraint(_)));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn default_cap_subsamples_and_parallel_agrees() {
        let mut sets = BTreeMap::new();
        for c in 0..4 {
            sets.insert(format!("c{c}"), random_vectors(30, 25, 100 + c));
        }
        let mut cfg = GalleryConfig::new(res(25), 5);
        let serial = build_gallery(&sets, &cfg).unwrap();
        assert!(serial.classes().iter().all(|r| r.n_images() == 20));
        cfg.parallel = true;
        assert_eq!(build_gallery(&sets, &cfg).unwrap(), serial);
    }

    #[test]
    fn gallery_rejects_mixed_tau_and_duplicates() {
        let a = build_regressor(&random_vectors(2, 10, 1), "a").unwrap();
        let b = build_regressor(&random_vectors(2, 12, 2), "b").unwrap();
        assert!(Gallery::new(res(10), vec![a.clone(), b]).is_err());
        assert!(Gallery::new(res(10), vec![a.clone(), a]).is_err());
    }
}
