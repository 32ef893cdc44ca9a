//! Command-line front end: render reference sets, build and query indexes,
//! evaluate on labeled test sets, and benchmark search.

pub mod bench;
pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use refsearch::eval::ReportFormat;
use refsearch::synth::ImageRecord;
use refsearch::{
    classify, evaluate, generate_reference_set, load_dataset, Encoder, Execution, Prediction, Raster, ReferenceIndex,
};
use serde::Serialize;

pub use config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(name = "refsearch", version, about = "Reference-image rendering and nearest-neighbor classification")]
pub struct Cli {
    /// Pipeline configuration file (TOML)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the perturbation seed (render) or the data seed (bench)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides classifier.k
    #[arg(long, global = true)]
    pub k: Option<usize>,
    /// Worker threads for parallel stages
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// More log output (-v info, -vv debug)
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render labeled reference images for every configured class
    Render(RenderArgs),
    /// Encode a labeled image directory into a reference index
    Index(IndexArgs),
    /// Classify a single image
    Classify(ClassifyArgs),
    /// Classify a labeled test set and write per-class metrics
    Evaluate(EvaluateArgs),
    /// Time search on a synthetic or existing index
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Output directory (default: paths.references)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Images per class (default: scene.render.images_per_class)
    #[arg(long)]
    pub count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Labeled image directory (default: paths.references)
    #[arg(long)]
    pub references: Option<PathBuf>,
    /// Index file to write (default: paths.index)
    #[arg(long)]
    pub index: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    pub image: PathBuf,
    /// Index file (default: paths.index)
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Labeled test directory, laid out as <label>/<image>.png
    pub dataset: PathBuf,
    /// Index file (default: paths.index)
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Report directory (default: paths.reports)
    #[arg(long)]
    pub reports: Option<PathBuf>,
    /// Skip undecodable images instead of failing
    #[arg(long)]
    pub permissive: bool,
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Benchmark an existing index instead of a random one
    #[arg(long)]
    pub index: Option<PathBuf>,
    #[arg(long, default_value_t = 10_000)]
    pub count: usize,
    #[arg(long, default_value_t = 384)]
    pub dim: usize,
    #[arg(long, default_value_t = 1000)]
    pub queries: usize,
    /// Run the batch on the calling thread only
    #[arg(long)]
    pub sequential: bool,
    #[arg(long)]
    pub json: bool,
}

/// Command failure, split by exit code.
#[derive(Debug)]
pub enum Failure {
    /// Bad input, configuration or data: exit code 1.
    User(anyhow::Error),
    /// Broken internal invariant: exit code 2.
    Internal(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::User(_) => 1,
            Failure::Internal(_) => 2,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::User(e) | Failure::Internal(e) => e,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::User(e)
    }
}

impl From<refsearch::Error> for Failure {
    fn from(e: refsearch::Error) -> Self {
        Failure::User(e.into())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::User(e.into())
    }
}

pub type CmdResult = Result<(), Failure>;

/// Manifest written next to rendered images.
#[derive(Debug, Serialize, serde::Deserialize)]
pub struct RenderManifest {
    pub seed: u64,
    pub images_per_class: usize,
    pub images: Vec<ImageRecord>,
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> CmdResult {
    let config = match &cli.config {
        Some(p) => {
            if !p.exists() {
                return Err(anyhow!("config file {} does not exist", p.display()).into());
            }
            PipelineConfig::load(p)?
        }
        None => PipelineConfig::empty(),
    };
    match &cli.command {
        Command::Render(a) => render_cmd(cli, &config, a, out),
        Command::Index(a) => index_cmd(&config, a, out),
        Command::Classify(a) => classify_cmd(cli, &config, a, out),
        Command::Evaluate(a) => evaluate_cmd(cli, &config, a, out),
        Command::Bench(a) => bench_cmd(cli, &config, a, out),
    }
}

fn existing(path: PathBuf, what: &str) -> anyhow::Result<PathBuf> {
    if !path.exists() {
        bail!("{what} {} does not exist", path.display());
    }
    Ok(path)
}

fn pick(config: &PipelineConfig, flag: &Option<PathBuf>, key: &str, value: &Option<PathBuf>) -> anyhow::Result<PathBuf> {
    match flag {
        Some(p) => Ok(p.clone()),
        None => config.path(key, value),
    }
}

/// Removes PNGs left in class directories by an earlier run.
fn clear_stale(dir: &Path) -> anyhow::Result<usize> {
    let mut removed = 0;
    if dir.is_dir() {
        for entry in fs::read_dir(dir)? {
            let p = entry?.path();
            if p.extension().is_some_and(|e| e == "png") {
                fs::remove_file(&p)?;
                removed += 1;
            }
        }
    }
    Ok(removed)
}

fn render_cmd(cli: &Cli, config: &PipelineConfig, args: &RenderArgs, out: &mut dyn Write) -> CmdResult {
    let scene = config.scene()?;
    let meshes = scene.meshes(config)?;
    let base = scene.base_pose()?;
    let spec = scene.perturbation(cli.seed);
    let mut rc = scene.render_config();
    if let Some(n) = args.count {
        rc.images_per_class = n;
    }
    let dir = pick(config, &args.out, "references", &config.paths.references)?;

    let images = generate_reference_set(&meshes, &base, &spec, &rc)?;
    for label in meshes.keys() {
        let class_dir = dir.join(label);
        let removed = clear_stale(&class_dir)?;
        if removed > 0 {
            log::warn!("removed {removed} stale images from {}", class_dir.display());
        }
        fs::create_dir_all(&class_dir).with_context(|| format!("creating {}", class_dir.display()))?;
    }
    for img in &images {
        img.image.raster.write_png(dir.join(img.file_name()))?;
    }
    let manifest = RenderManifest {
        seed: spec.seed,
        images_per_class: rc.images_per_class,
        images: images.iter().map(|i| i.record()).collect(),
    };
    let manifest_path = dir.join("manifest.json");
    fs::write(&manifest_path, serde_json::to_string_pretty(&manifest).map_err(anyhow::Error::from)?)
        .with_context(|| format!("writing {}", manifest_path.display()))?;
    let redraws: usize = images.iter().map(|i| i.attempt).sum();
    writeln!(
        out,
        "rendered {} images ({} classes x {}) into {} ({} pose re-draws)",
        images.len(),
        meshes.len(),
        rc.images_per_class,
        dir.display(),
        redraws
    )?;
    Ok(())
}

fn index_cmd(config: &PipelineConfig, args: &IndexArgs, out: &mut dyn Write) -> CmdResult {
    let refs = existing(pick(config, &args.references, "references", &config.paths.references)?, "reference directory")?;
    let index_path = pick(config, &args.index, "index", &config.paths.index)?;
    let encoder = Encoder::from_manifest(config.encoder_manifest()?)?;
    let dataset = load_dataset(&refs, false)?;
    if dataset.is_empty() {
        return Err(anyhow!("no images found under {}", refs.display()).into());
    }
    let embeddings = encoder.encode_batch(&dataset.items)?;
    let mut index = ReferenceIndex::with_dim(encoder.dim());
    for (item, emb) in dataset.items.iter().zip(&embeddings) {
        let source = item.path.strip_prefix(&refs).unwrap_or(&item.path).to_string_lossy().replace('\\', "/");
        index.add(emb.as_slice(), &item.label, Some(&source))?;
    }
    if let Some(parent) = index_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    index.save(&index_path)?;
    let stats = index.stats();
    writeln!(out, "wrote {} ({} records, dim {})", index_path.display(), stats.count, stats.dim)?;
    for (label, n) in &stats.per_label {
        writeln!(out, "  {label}: {n}")?;
    }
    Ok(())
}

fn load_index_and_encoder(config: &PipelineConfig, flag: &Option<PathBuf>) -> Result<(ReferenceIndex, Encoder), Failure> {
    let path = existing(pick(config, flag, "index", &config.paths.index)?, "index file")?;
    let index = ReferenceIndex::load(&path)?;
    let encoder = Encoder::from_manifest(config.encoder_manifest()?)?;
    if encoder.dim() != index.dim() {
        return Err(anyhow!(
            "encoder produces {}-dim embeddings but index {} holds {}-dim vectors",
            encoder.dim(),
            path.display(),
            index.dim()
        )
        .into());
    }
    Ok((index, encoder))
}

/// Plain-text rendering of a prediction.
pub fn format_prediction(p: &Prediction, index: &ReferenceIndex) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "label: {}", p.label);
    let votes: Vec<String> = p.votes.iter().map(|(l, v)| format!("{l}={v}")).collect();
    let _ = writeln!(s, "votes: {}", votes.join(" "));
    let _ = writeln!(s, "margin: {:.6}", p.margin);
    for (rank, n) in p.neighbors.iter().enumerate() {
        let source = index.record(n.id).source.unwrap_or("-");
        let _ = writeln!(s, "  {:>2}  {:<16} {:.6}  #{} {}", rank + 1, n.label, n.similarity, n.id, source);
    }
    s
}

fn classify_cmd(cli: &Cli, config: &PipelineConfig, args: &ClassifyArgs, out: &mut dyn Write) -> CmdResult {
    let classifier = config.classifier(cli.k)?;
    let image_path = existing(args.image.clone(), "image")?;
    let (index, encoder) = load_index_and_encoder(config, &args.index)?;
    let image = Raster::read_png(&image_path)?;
    let prediction = classify(encoder.encode(&image)?.as_slice(), &index, &classifier)?;
    check_prediction(&prediction, classifier.k, index.len())?;
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&prediction).map_err(anyhow::Error::from)?)?;
    } else {
        write!(out, "{}", format_prediction(&prediction, &index))?;
    }
    Ok(())
}

/// Vote counts must add up to the neighbors actually used.
fn check_prediction(p: &Prediction, k: usize, len: usize) -> CmdResult {
    let total: usize = p.votes.values().sum();
    if total != p.effective_k || p.effective_k != k.min(len) || p.neighbors.len() != p.effective_k {
        return Err(Failure::Internal(anyhow!(
            "vote total {total} does not match effective k {} (k {k}, index size {len})",
            p.effective_k
        )));
    }
    Ok(())
}

fn evaluate_cmd(cli: &Cli, config: &PipelineConfig, args: &EvaluateArgs, out: &mut dyn Write) -> CmdResult {
    let classifier = config.classifier(cli.k)?;
    let dataset_dir = existing(args.dataset.clone(), "dataset directory")?;
    let reports = pick(config, &args.reports, "reports", &config.paths.reports)?;
    let (index, encoder) = load_index_and_encoder(config, &args.index)?;
    let dataset = load_dataset(&dataset_dir, args.permissive)?;
    for (path, err) in &dataset.skipped {
        log::warn!("skipped {}: {err}", path.display());
    }
    if dataset.is_empty() {
        return Err(anyhow!("no images found under {}", dataset_dir.display()).into());
    }
    let (report, outcomes) = evaluate(&dataset, &index, &encoder, &classifier, Execution::Parallel)?;
    if report.item_count != outcomes.len() as u64 {
        return Err(Failure::Internal(anyhow!("report covers {} of {} items", report.item_count, outcomes.len())));
    }
    fs::create_dir_all(&reports).with_context(|| format!("creating {}", reports.display()))?;
    report.write(reports.join("report.json"), ReportFormat::Json)?;
    report.write(reports.join("report.csv"), ReportFormat::Csv)?;
    let mut predictions = String::from("path,truth,predicted\n");
    for o in &outcomes {
        let rel = o.path.strip_prefix(&dataset_dir).unwrap_or(&o.path);
        let _ = writeln!(predictions, "{},{},{}", rel.display(), o.truth, o.predicted);
    }
    fs::write(reports.join("predictions.csv"), predictions)?;

    if args.json {
        writeln!(out, "{}", report.to_json()?)?;
    } else {
        writeln!(out, "{:<16} {:>9} {:>9} {:>9}", "label", "precision", "recall", "f1")?;
        for (label, m) in &report.per_class {
            writeln!(out, "{:<16} {:>9.4} {:>9.4} {:>9.4}", label, m.precision, m.recall, m.f1)?;
        }
        writeln!(out, "macro-F1: {:.4} over {} images", report.macro_f1, report.item_count)?;
        if !dataset.skipped.is_empty() {
            writeln!(out, "skipped: {}", dataset.skipped.len())?;
        }
    }
    Ok(())
}

fn bench_cmd(cli: &Cli, config: &PipelineConfig, args: &BenchArgs, out: &mut dyn Write) -> CmdResult {
    let k = config.classifier(cli.k)?.k;
    let seed = cli.seed.unwrap_or(0);
    let index = match &args.index {
        Some(p) => {
            let index = ReferenceIndex::load(existing(p.clone(), "index file")?)?;
            if index.dim() != args.dim {
                return Err(anyhow!("--dim {} does not match index dimension {}", args.dim, index.dim()).into());
            }
            index
        }
        None => {
            if args.count == 0 || args.dim == 0 {
                return Err(anyhow!("--count and --dim must be positive").into());
            }
            bench::random_index(args.count, args.dim, 10, seed)?
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let queries = bench::random_vectors(args.queries, index.dim(), &mut rng);
    let exec = if args.sequential { Execution::Sequential } else { Execution::Parallel };
    let report = bench::run(&index, &queries, k, exec)?;
    if args.json {
        writeln!(out, "{}", serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?)?;
    } else {
        writeln!(out, "index: {} x {} ({} mode, {} threads), k={}", report.count, report.dim, report.mode, report.threads, k)?;
        writeln!(out, "oracle: {} queries match the brute-force scan", report.oracle_checked)?;
        writeln!(out, "throughput: {:.0} queries/s over {} queries", report.throughput_qps, report.queries)?;
        writeln!(
            out,
            "latency: p50 {:.1} us, p90 {:.1} us, p99 {:.1} us",
            report.latency_p50_us, report.latency_p90_us, report.latency_p99_us
        )?;
    }
    Ok(())
}
