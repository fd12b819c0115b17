//! The `isrc` command line: build galleries, classify probe sets, run
//! evaluations and benchmarks.
//!
//! Every global flag can also be set through an `ISRC_`-prefixed environment
//! variable (`ISRC_RESOLUTION`, `ISRC_SEED`, ...). Flags win over the
//! environment, which wins over manifest settings and built-in defaults.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use isrc_core::bench::{self, BenchConfig, Scenario};
use isrc_core::classify::{classify_set, EwvParams, Mode, ProbeSet, Strategy};
use isrc_core::dataset::{
    self, evaluate, format_table, generate_synthetic, load_manifest, parse_gallery_rule, DatasetManifest,
    EvalConfig, EvaluationReport, SplitProtocol, SyntheticSpec,
};
use isrc_core::gallery::{self, build_gallery, GalleryConfig};
use isrc_core::preprocess::{FeatureVector, PreprocessConfig, Resolution};
use isrc_core::ClassId;

pub const DEFAULT_RESOLUTION: Resolution = Resolution { rows: 20, cols: 20 };
pub const DEFAULT_FOLDS: usize = 10;

#[derive(Debug, Parser)]
#[command(name = "isrc", version, about = "Image set classification by linear regression")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Working resolution as rows x cols, e.g. 20x20. `eval` accepts a comma-separated list.
    #[arg(long, global = true, env = "ISRC_RESOLUTION", value_delimiter = ',')]
    pub resolution: Vec<Resolution>,
    #[arg(long, global = true, env = "ISRC_STRATEGY", default_value = "ewv")]
    pub strategy: StrategyArg,
    /// Exponential voting constant.
    #[arg(long, global = true, env = "ISRC_BETA", default_value_t = 2.0)]
    pub beta: f64,
    /// Use raw instead of mean-normalized residuals for exponential voting.
    #[arg(long, global = true, env = "ISRC_NO_NORMALIZE")]
    pub no_normalize: bool,
    /// Default: fast when pseudoinverses are available, online otherwise.
    #[arg(long, global = true, env = "ISRC_MODE")]
    pub mode: Option<Mode>,
    /// Per-class gallery image cap (default 0.8 tau).
    #[arg(long, global = true, env = "ISRC_GALLERY_CAP")]
    pub gallery_cap: Option<usize>,
    #[arg(long, global = true, env = "ISRC_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, global = true, env = "ISRC_FOLDS", default_value_t = DEFAULT_FOLDS)]
    pub folds: usize,
    /// Manifest file or dataset directory.
    #[arg(long, global = true, env = "ISRC_MANIFEST")]
    pub manifest: Option<PathBuf>,
    /// Gallery file: written by `build`, read by `classify`.
    #[arg(long, global = true, env = "ISRC_GALLERY")]
    pub gallery: Option<PathBuf>,
    /// Write results here instead of standard output.
    #[arg(long, global = true, env = "ISRC_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, env = "ISRC_HISTEQ")]
    pub histeq: Option<OnOff>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StrategyArg {
    Mv,
    Nn,
    Ewv,
    All,
}

impl StrategyArg {
    pub fn strategies(self) -> Vec<Strategy> {
        match self {
            StrategyArg::Mv => vec![Strategy::Mv],
            StrategyArg::Nn => vec![Strategy::Nn],
            StrategyArg::Ewv => vec![Strategy::Ewv],
            StrategyArg::All => Strategy::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OnOff {
    On,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum OutputFormat {
    #[default]
    Table,
    Json,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a gallery file from a manifest.
    Build,
    /// Classify every set of a manifest against a gallery file.
    Classify,
    /// Split a dataset into folds and report accuracy per strategy.
    Eval(EvalArgs),
    /// Time the online and fast residual paths on synthetic data.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Generate data instead of reading a manifest, e.g.
    /// `classes=5,dim=3,tau=100,sets=10,images=20,sigma=8`.
    #[arg(long, env = "ISRC_SYNTHETIC")]
    pub synthetic: Option<SyntheticArg>,
    /// Gallery sets per class: a count or one-video, two-sets, three-videos, five-sets.
    #[arg(long, env = "ISRC_GALLERY_SETS", default_value = "1")]
    pub gallery_sets: String,
    /// Keep only the first K images of every set.
    #[arg(long, env = "ISRC_SET_CAP")]
    pub set_cap: Option<usize>,
    /// Run folds and probe sets in parallel.
    #[arg(long)]
    pub parallel: bool,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    /// Scenario `classes=47,gallery=60,probes=20,tau=100`; repeatable. Replaces the grid.
    #[arg(long = "scenario")]
    pub scenarios: Vec<Scenario>,
    #[arg(long, value_enum, default_value_t)]
    pub grid: Grid,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Skip scenarios estimated to need more memory than this.
    #[arg(long, default_value_t = 1024)]
    pub memory_budget_mb: usize,
    /// Use the parallel residual kernel.
    #[arg(long)]
    pub parallel: bool,
    #[arg(long, value_enum, default_value_t)]
    pub format: OutputFormat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Grid {
    #[default]
    Default,
    /// Only the 47-class, 60 gallery / 20 probe, 10x10 scenario.
    Ytc,
}

/// Synthetic dataset description; `tau` and `seed` default to the
/// resolution and global seed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticArg {
    pub classes: usize,
    pub dim: usize,
    pub tau: Option<usize>,
    pub sets: usize,
    pub images: usize,
    pub sigma: f64,
    pub seed: Option<u64>,
}

impl FromStr for SyntheticArg {
    type Err = anyhow::Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut fields = BTreeMap::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = part.split_once('=').with_context(|| format!("`{part}` is not key=value"))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut take = |k: &str| fields.remove(k);
        fn num<T: FromStr>(k: &str, v: Option<String>) -> Result<Option<T>> {
            v.map(|v| v.parse().map_err(|_| anyhow::anyhow!("bad value `{v}` for `{k}`"))).transpose()
        }
        let need = |k: &str, v: Option<usize>| v.with_context(|| format!("synthetic spec lacks `{k}`"));
        let arg = SyntheticArg {
            classes: need("classes", num("classes", take("classes"))?)?,
            dim: need("dim", num("dim", take("dim"))?)?,
            tau: num("tau", take("tau"))?,
            sets: need("sets", num("sets", take("sets"))?)?,
            images: need("images", num("images", take("images"))?)?,
            sigma: num("sigma", take("sigma"))?.unwrap_or(0.0),
            seed: num("seed", take("seed"))?,
        };
        if let Some(k) = fields.keys().next() {
            bail!("unknown synthetic field `{k}`");
        }
        Ok(arg)
    }
}

/// Settings shared by all commands after precedence is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub resolutions: Vec<Resolution>,
    pub strategies: Vec<Strategy>,
    pub ewv: EwvParams,
    pub mode: Option<Mode>,
    pub gallery_cap: Option<usize>,
    pub seed: u64,
    pub folds: usize,
    pub manifest: Option<PathBuf>,
    pub gallery: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub histeq: Option<bool>,
}

impl RunConfig {
    pub fn from_args(g: &GlobalArgs) -> Result<Self> {
        if !(g.beta > 0.0 && g.beta.is_finite()) {
            bail!("--beta must be positive, got {}", g.beta);
        }
        if g.folds == 0 {
            bail!("--folds must be at least 1");
        }
        if g.gallery_cap == Some(0) {
            bail!("--gallery-cap must be at least 1");
        }
        Ok(Self {
            resolutions: g.resolution.clone(),
            strategies: g.strategy.strategies(),
            ewv: EwvParams { beta: g.beta, normalize: !g.no_normalize },
            mode: g.mode,
            gallery_cap: g.gallery_cap,
            seed: g.seed,
            folds: g.folds,
            manifest: g.manifest.clone(),
            gallery: g.gallery.clone(),
            out: g.out.clone(),
            histeq: g.histeq.map(|h| h == OnOff::On),
        })
    }

    /// The single working resolution: flag, then manifest, then 20x20.
    fn resolution(&self, manifest: Option<&DatasetManifest>) -> Result<Resolution> {
        match self.resolutions.as_slice() {
            [] => Ok(manifest.and_then(|m| m.resolution).unwrap_or(DEFAULT_RESOLUTION)),
            [r] => Ok(*r),
            _ => bail!("this command takes a single --resolution"),
        }
    }

    fn preprocess(&self, manifest: &DatasetManifest, resolution: Resolution) -> PreprocessConfig {
        PreprocessConfig { resolution, histeq: self.histeq.or(manifest.histeq).unwrap_or(false) }
    }

    fn manifest(&self) -> Result<DatasetManifest> {
        let path = self.manifest.as_ref().context("--manifest is required")?;
        Ok(load_manifest(path)?)
    }
}

/// Output destination: `--out` if given, else `stdout`.
fn sink<'a>(out: &Option<PathBuf>, stdout: &'a mut dyn Write) -> Result<Box<dyn Write + 'a>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(stdout),
    })
}

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<()> {
    let config = RunConfig::from_args(&cli.global)?;
    match &cli.command {
        Command::Build => cmd_build(&config, stdout),
        Command::Classify => cmd_classify(&config, stdout),
        Command::Eval(args) => cmd_eval(&config, args, stdout),
        Command::Bench(args) => cmd_bench(&config, args, stdout),
    }
}

fn pooled_by_class(sets: dataset::ImageSetCollection) -> BTreeMap<ClassId, Vec<FeatureVector>> {
    let mut pooled: BTreeMap<ClassId, Vec<FeatureVector>> = BTreeMap::new();
    for s in sets.sets {
        pooled.entry(s.class_id).or_default().extend(s.vectors);
    }
    pooled
}

/// Builds a gallery from all images of every class and writes it to `--gallery`.
pub fn cmd_build(config: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let path = config.gallery.as_ref().context("--gallery (output path) is required")?;
    let manifest = config.manifest()?;
    let resolution = config.resolution(Some(&manifest))?;
    let pre = config.preprocess(&manifest, resolution);
    let pooled = pooled_by_class(manifest.load_sets(&pre)?);
    let counts: BTreeMap<ClassId, usize> = pooled.iter().map(|(c, v)| (c.clone(), v.len())).collect();

    let mut gc = GalleryConfig::new(resolution, config.seed);
    gc.gallery_cap = config.gallery_cap;
    gc.precompute_pinv = config.mode != Some(Mode::Online);
    gc.parallel = true;
    gc.preprocessing = Some(pre);
    let g = build_gallery(&pooled, &gc)?;
    gallery::write_file(&g, path).with_context(|| format!("writing {}", path.display()))?;

    let mut w = sink(&config.out, stdout)?;
    writeln!(w, "gallery {} resolution {} tau {}", path.display(), resolution, resolution.tau())?;
    writeln!(w, "{:<24} {:>8} {:>8} {:>9}", "class", "images", "kept", "perturbed")?;
    for reg in g.classes() {
        let total = counts.get(reg.class_id()).copied().unwrap_or(0);
        writeln!(w, "{:<24} {:>8} {:>8} {:>9}", reg.class_id(), total, reg.n_images(), reg.is_perturbed())?;
    }
    w.flush()?;
    Ok(())
}

/// One record per probe set and strategy, in manifest order.
pub fn cmd_classify(config: &RunConfig, stdout: &mut dyn Write) -> Result<()> {
    let path = config.gallery.as_ref().context("--gallery is required")?;
    let g = gallery::read_file(path)?;
    let manifest = config.manifest()?;
    let resolution = match config.resolutions.as_slice() {
        [] => manifest.resolution.unwrap_or(g.resolution()),
        [r] => *r,
        _ => bail!("this command takes a single --resolution"),
    };
    if resolution != g.resolution() {
        return Err(isrc_core::Error::Configuration(format!(
            "gallery was built at {} (tau {}), but the configured resolution is {} (tau {})",
            g.resolution(),
            g.tau(),
            resolution,
            resolution.tau()
        ))
        .into());
    }
    let mode = config.mode.unwrap_or(if g.has_pinv() { Mode::Fast } else { Mode::Online });
    let pre = config.preprocess(&manifest, resolution);
    let sets = manifest.load_sets(&pre)?;
    let mut w = sink(&config.out, stdout)?;
    for s in &sets.sets {
        let id = format!("{}/{}", s.class_id, s.set_id);
        let probes = ProbeSet::from_vectors(id.clone(), &s.vectors, Some(s.class_id.clone()))?;
        for &strategy in &config.strategies {
            let d = classify_set(&g, &probes, strategy, mode, config.ewv)?;
            writeln!(w, "{}", d.record(&id).to_line())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn synthetic_spec(arg: &SyntheticArg, config: &RunConfig) -> Result<SyntheticSpec> {
    let tau = match arg.tau {
        Some(t) => t,
        None => config.resolution(None)?.tau(),
    };
    Ok(SyntheticSpec {
        classes: arg.classes,
        subspace_dim: arg.dim,
        tau,
        sets_per_class: arg.sets,
        images_per_set: arg.images,
        noise_sigma: arg.sigma,
        seed: arg.seed.unwrap_or(config.seed),
    })
}

/// Evaluates at every configured resolution.
pub fn eval_reports(config: &RunConfig, args: &EvalArgs) -> Result<Vec<EvaluationReport>> {
    let mut protocol = SplitProtocol::new(parse_gallery_rule(&args.gallery_sets)?, config.folds, config.seed);
    protocol.set_image_cap = args.set_cap;
    protocol.gallery_image_cap = config.gallery_cap;
    let eval_config = EvalConfig {
        strategies: config.strategies.clone(),
        ewv: config.ewv,
        mode: config.mode.unwrap_or(Mode::Fast),
        parallel: args.parallel,
    };
    if let Some(syn) = &args.synthetic {
        let data = generate_synthetic(&synthetic_spec(syn, config)?)?;
        return Ok(vec![evaluate(&data, &protocol, &eval_config)?]);
    }
    let manifest = config.manifest()?;
    let resolutions = if config.resolutions.is_empty() {
        vec![manifest.resolution.unwrap_or(DEFAULT_RESOLUTION)]
    } else {
        config.resolutions.clone()
    };
    resolutions
        .into_iter()
        .map(|r| {
            let data = manifest.load_sets(&config.preprocess(&manifest, r))?;
            Ok(evaluate(&data, &protocol, &eval_config)?)
        })
        .collect()
}

pub fn cmd_eval(config: &RunConfig, args: &EvalArgs, stdout: &mut dyn Write) -> Result<()> {
    let reports = eval_reports(config, args)?;
    let mut w = sink(&config.out, stdout)?;
    match args.format {
        OutputFormat::Table => {
            write!(w, "{}", format_table(&reports))?;
            for r in &reports {
                for s in &r.strategies {
                    let folds: Vec<String> = s.per_fold.iter().map(|a| format!("{a:.2}")).collect();
                    writeln!(w, "{} {} per fold: {}", r.resolution, s.strategy, folds.join(" "))?;
                }
            }
        }
        OutputFormat::Json => {
            for line in reports.iter().flat_map(EvaluationReport::records) {
                writeln!(w, "{line}")?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn cmd_bench(config: &RunConfig, args: &BenchArgs, stdout: &mut dyn Write) -> Result<()> {
    let scenarios = if !args.scenarios.is_empty() {
        args.scenarios.clone()
    } else {
        match args.grid {
            Grid::Default => bench::default_grid(),
            Grid::Ytc => vec![bench::ytc_analog()],
        }
    };
    let bc = BenchConfig {
        repeats: args.repeats,
        seed: config.seed,
        memory_budget_bytes: args.memory_budget_mb.saturating_mul(1 << 20),
        parallel: args.parallel,
    };
    let records = bench::run_bench(&scenarios, &bc)?;
    let mut w = sink(&config.out, stdout)?;
    match args.format {
        OutputFormat::Table => write!(w, "{}", bench::format_bench_table(&records))?,
        OutputFormat::Json => {
            for r in &records {
                writeln!(w, "{}", r.to_line())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I, stdout: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    run(&cli, stdout)
}

