//! Build and test timing of the online and fast residual paths on synthetic
//! galleries.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::Serialize;

use crate::classify::{max_relative_difference, residual_matrix_with, Mode, ProbeSet};
use crate::dataset::{generate_synthetic, SyntheticSpec};
use crate::gallery::{build_gallery, Gallery, GalleryConfig};
use crate::preprocess::FeatureVector;
use crate::{ClassId, Error, Result};

/// Largest online/fast relative residual difference tolerated before timing.
pub const AGREEMENT_TOLERANCE: f64 = 1e-6;

pub const MIN_REPEATS: usize = 3;

pub const SINGLE_PROBE_NOTE: &str = "batch advantage not expected";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Scenario {
    pub classes: usize,
    pub gallery_images: usize,
    pub probe_images: usize,
    pub tau: usize,
    /// Probe sets classified per timed run.
    pub probe_sets: usize,
}

impl Scenario {
    pub fn new(classes: usize, gallery_images: usize, probe_images: usize, tau: usize) -> Self {
        Self { classes, gallery_images, probe_images, tau, probe_sets: 1 }
    }

    /// Rough peak working set in bytes: gallery matrices, their pseudoinverses and probes.
    pub fn estimated_bytes(&self) -> usize {
        let f = std::mem::size_of::<f64>();
        let gallery = self.classes * self.tau * self.gallery_images * 2;
        let data = self.classes * 2 * self.tau * self.gallery_images.max(self.probe_images);
        (gallery + data) * f
    }

    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.gallery_images == 0 || self.probe_images == 0 || self.probe_sets == 0 {
            return Err(Error::invalid(format!("scenario {self} has an empty dimension")));
        }
        if self.gallery_images > self.tau {
            return Err(Error::Constraint(format!(
                "scenario {self}: tau must be greater than or equal to the gallery size"
            )));
        }
        if self.tau < 2 {
            return Err(Error::invalid("scenario tau must be at least 2"));
        }
        Ok(())
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "classes={},gallery={},probes={},tau={}",
            self.classes, self.gallery_images, self.probe_images, self.tau
        )?;
        if self.probe_sets != 1 {
            write!(f, ",sets={}", self.probe_sets)?;
        }
        Ok(())
    }
}

/// Parses `classes=47,gallery=60,probes=20,tau=100[,sets=1]`.
impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut fields: BTreeMap<&str, usize> = BTreeMap::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("scenario field `{part}` is not key=value")))?;
            let v: usize = v.trim().parse().map_err(|_| Error::invalid(format!("scenario field `{part}` is not a count")))?;
            let key = match k.trim() {
                "classes" | "y" | "Y" => "classes",
                "gallery" | "n" => "gallery",
                "probes" | "p" => "probes",
                "tau" => "tau",
                "sets" => "sets",
                other => return Err(Error::invalid(format!("unknown scenario field `{other}`"))),
            };
            fields.insert(key, v);
        }
        let get = |k: &str| fields.get(k).copied().ok_or_else(|| Error::invalid(format!("scenario `{s}` lacks `{k}`")));
        Ok(Scenario {
            classes: get("classes")?,
            gallery_images: get("gallery")?,
            probe_images: get("probes")?,
            tau: get("tau")?,
            probe_sets: fields.get("sets").copied().unwrap_or(1),
        })
    }
}

/// The YTC-scale scenario: 47 classes, 60 gallery and 20 probe images at 10x10.
pub fn ytc_analog() -> Scenario {
    Scenario::new(47, 60, 20, 100)
}

pub fn default_grid() -> Vec<Scenario> {
    vec![
        Scenario::new(10, 20, 10, 100),
        ytc_analog(),
        Scenario::new(47, 60, 40, 100),
        Scenario::new(47, 60, 1, 100),
        Scenario::new(20, 100, 20, 400),
    ]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchConfig {
    pub repeats: usize,
    pub seed: u64,
    /// Scenarios whose [`Scenario::estimated_bytes`] exceed this are skipped.
    pub memory_budget_bytes: usize,
    /// Use the parallel residual kernel.
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { repeats: 5, seed: 0, memory_budget_bytes: 1 << 30, parallel: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchResult {
    pub scenario: Scenario,
    pub repeats: usize,
    /// Median seconds to build the gallery with cached pseudoinverses.
    pub build_seconds: f64,
    pub online_seconds: f64,
    pub fast_seconds: f64,
    /// `online_seconds / fast_seconds`.
    pub speedup: f64,
    pub max_relative_difference: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum BenchRecord {
    Measured(BenchResult),
    Skipped { scenario: Scenario, note: String },
}

impl BenchRecord {
    pub fn scenario(&self) -> &Scenario {
        match self {
            BenchRecord::Measured(r) => &r.scenario,
            BenchRecord::Skipped { scenario, .. } => scenario,
        }
    }

    pub fn measured(&self) -> Option<&BenchResult> {
        match self {
            BenchRecord::Measured(r) => Some(r),
            BenchRecord::Skipped { .. } => None,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("bench record serializes")
    }
}

pub fn format_bench_table(records: &[BenchRecord]) -> String {
    let mut out = format!(
        "{:>7} {:>7} {:>6} {:>5} {:>10} {:>10} {:>10} {:>8}  note\n",
        "classes", "gallery", "probes", "tau", "build_s", "online_s", "fast_s", "speedup"
    );
    for rec in records {
        let s = rec.scenario();
        let head = format!("{:>7} {:>7} {:>6} {:>5}", s.classes, s.gallery_images, s.probe_images, s.tau);
        match rec {
            BenchRecord::Measured(r) => out.push_str(&format!(
                "{head} {:>10.5} {:>10.5} {:>10.5} {:>8.2}  {}\n",
                r.build_seconds,
                r.online_seconds,
                r.fast_seconds,
                r.speedup,
                r.note.as_deref().unwrap_or("")
            )),
            BenchRecord::Skipped { note, .. } => {
                out.push_str(&format!("{head} {:>10} {:>10} {:>10} {:>8}  {note}\n", "-", "-", "-", "-"))
            }
        }
    }
    out
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Runs `f` once untimed, then `repeats` timed times; returns the median.
fn time_median(repeats: usize, mut f: impl FnMut() -> Result<()>) -> Result<f64> {
    f()?;
    let mut times = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        f()?;
        times.push(start.elapsed().as_secs_f64().max(f64::MIN_POSITIVE));
    }
    Ok(median(times))
}

struct Workload {
    gallery_sets: BTreeMap<ClassId, Vec<FeatureVector>>,
    probes: Vec<ProbeSet>,
    gallery_config: GalleryConfig,
}

fn workload(s: &Scenario, seed: u64) -> Result<Workload> {
    let spec = SyntheticSpec {
        classes: s.classes,
        subspace_dim: (s.tau / 10).clamp(1, s.tau - 1),
        tau: s.tau,
        sets_per_class: 2,
        images_per_set: s.gallery_images.max(s.probe_images),
        noise_sigma: 8.0,
        seed,
    };
    let data = generate_synthetic(&spec)?;
    let mut gallery_sets = BTreeMap::new();
    let mut probe_pool = Vec::new();
    for set in data.sets {
        if set.set_id == "set00" {
            gallery_sets.insert(set.class_id.clone(), set.vectors[..s.gallery_images].to_vec());
        } else {
            probe_pool.push(set);
        }
    }
    let probes = (0..s.probe_sets)
        .map(|i| {
            let set = &probe_pool[i % probe_pool.len()];
            ProbeSet::from_vectors(
                format!("{}-{i}", set.class_id),
                &set.vectors[..s.probe_images],
                Some(set.class_id.clone()),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut gallery_config = GalleryConfig::new(data.resolution, seed);
    gallery_config.gallery_cap = Some(s.gallery_images);
    Ok(Workload { gallery_sets, probes, gallery_config })
}

fn check_agreement(gallery: &Gallery, probes: &[ProbeSet], parallel: bool) -> Result<f64> {
    let mut worst = 0.0f64;
    for p in probes {
        let online = residual_matrix_with(gallery, p, Mode::Online, parallel)?;
        let fast = residual_matrix_with(gallery, p, Mode::Fast, parallel)?;
        worst = worst.max(max_relative_difference(&online, &fast, p));
    }
    if worst > AGREEMENT_TOLERANCE {
        return Err(Error::Correctness(format!(
            "online and fast residuals differ by {worst:e} relative, above {AGREEMENT_TOLERANCE:e}"
        )));
    }
    Ok(worst)
}

fn run_scenario(s: &Scenario, config: &BenchConfig) -> Result<BenchResult> {
    let w = workload(s, config.seed)?;
    let gallery = build_gallery(&w.gallery_sets, &w.gallery_config)?;
    let max_relative_difference = check_agreement(&gallery, &w.probes, config.parallel)?;

    let build_seconds = time_median(config.repeats, || build_gallery(&w.gallery_sets, &w.gallery_config).map(drop))?;
    let time_mode = |mode: Mode| {
        time_median(config.repeats, || {
            for p in &w.probes {
                std::hint::black_box(residual_matrix_with(&gallery, p, mode, config.parallel)?);
            }
            Ok(())
        })
    };
    let online_seconds = time_mode(Mode::Online)?;
    let fast_seconds = time_mode(Mode::Fast)?;
    Ok(BenchResult {
        scenario: *s,
        repeats: config.repeats,
        build_seconds,
        online_seconds,
        fast_seconds,
        speedup: online_seconds / fast_seconds,
        max_relative_difference,
        note: (s.probe_images == 1).then(|| SINGLE_PROBE_NOTE.to_string()),
    })
}

/// Times every scenario. Correctness failures abort the whole run.
pub fn run_bench(scenarios: &[Scenario], config: &BenchConfig) -> Result<Vec<BenchRecord>> {
    if config.repeats < MIN_REPEATS {
        return Err(Error::Configuration(format!(
            "benchmarks need at least {MIN_REPEATS} repeats, got {}",
            config.repeats
        )));
    }
    let mut out = Vec::with_capacity(scenarios.len());
    for s in scenarios {
        s.validate()?;
        let bytes = s.estimated_bytes();
        if bytes > config.memory_budget_bytes {
            log::warn!("skipping {s}: needs about {bytes} bytes");
            out.push(BenchRecord::Skipped {
                scenario: *s,
                note: format!(
                    "skipped: estimated {bytes} bytes exceeds the memory budget of {} bytes",
                    config.memory_budget_bytes
                ),
            });
            continue;
        }
        log::info!("benchmarking {s}");
        out.push(BenchRecord::Measured(run_scenario(s, config)?));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick() -> BenchConfig {
        BenchConfig { repeats: 3, ..BenchConfig::default() }
    }

    #[test]
    fn scenario_parsing() {
        let s: Scenario = "classes=47,gallery=60,probes=20,tau=100".parse().unwrap();
        assert_eq!(s, ytc_analog());
        assert_eq!(s.to_string().parse::<Scenario>().unwrap(), s);
        let t: Scenario = "y=2, n=3, p=4, tau=9, sets=5".parse().unwrap();
        assert_eq!(t.probe_sets, 5);
        assert!("classes=1,gallery=2".parse::<Scenario>().is_err());
        assert!("classes=1,gallery=2,probes=3,tau=4,colour=5".parse::<Scenario>().is_err());
    }

    #[test]
    fn single_probe_is_flagged() {
        let r = run_bench(&[Scenario::new(3, 5, 1, 36)], &quick()).unwrap();
        let m = r[0].measured().unwrap();
        assert_eq!(m.note.as_deref(), Some(SINGLE_PROBE_NOTE));
        assert!(m.online_seconds > 0.0 && m.fast_seconds > 0.0 && m.build_seconds > 0.0);
        assert!((m.speedup - m.online_seconds / m.fast_seconds).abs() < 1e-12);
        assert!(m.max_relative_difference <= AGREEMENT_TOLERANCE);
    }

    #[test]
    fn over_budget_scenarios_are_skipped() {
        let config = BenchConfig { memory_budget_bytes: 1000, ..quick() };
        let r = run_bench(&[Scenario::new(3, 5, 2, 36)], &config).unwrap();
        assert!(matches!(&r[0], BenchRecord::Skipped { note, .. } if note.contains("memory budget")));
        assert!(r[0].to_line().contains("\"status\":\"skipped\""));
        assert!(format_bench_table(&r).contains("skipped"));
    }

    #[test]
    fn too_few_repeats_and_bad_shapes_are_rejected() {
        let config = BenchConfig { repeats: 2, ..BenchConfig::default() };
        assert!(run_bench(&[Scenario::new(3, 5, 2, 36)], &config).is_err());
        assert!(run_bench(&[Scenario::new(3, 50, 2, 36)], &quick()).is_err());
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
