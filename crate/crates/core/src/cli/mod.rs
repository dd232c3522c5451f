//! Command-line driver.
//!
//! Exit codes: 0 success, 1 partial failure or bad data, 2 configuration or
//! usage error, 3 I/O error.

mod settings;

use std::collections::HashSet;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;

pub use settings::{PipelineArgs, ProjectionKind, ProjectionSource, Settings};

use crate::aggregator::{token_budget, tokenize_image, Segment, Tier, TokenSequence};
use crate::analytics::{parse_manifest, CdfFormat, ManifestRecord, ZoomAccumulator, ZoomRecord, ZoomTarget};
use crate::encoder::{CounterRng, ProjectionMap, ReferenceEncoder};
use crate::error::{Error, Result};
use crate::imaging::{decode_image, probe_dimensions, ImageBuffer};
use crate::tokenfile;

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_IO: i32 = 3;

pub const RUN_MANIFEST_NAME: &str = "manifest.json";
pub const TOKEN_EXT: &str = "dftk";

#[derive(Debug, Parser)]
#[command(name = "dragonfly", version, about = "Multi-resolution visual tokenizer")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Tokenize images into DFTK token files
    Tokenize(TokenizeArgs),
    /// Zoom-ratio statistics over a corpus manifest
    Stats(StatsArgs),
    /// Summarize a DFTK token file
    Inspect(InspectArgs),
    /// Measure throughput on a synthetic corpus
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Args)]
pub struct TokenizeArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Output directory for token files and the run manifest
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Input manifest of `id<TAB>path` lines
    #[arg(long, value_name = "PATH")]
    pub manifest: Option<PathBuf>,
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub workers: usize,
    /// Image files (PNG, JPEG or DFIM); the file stem is the image id
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct StatsArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    /// Corpus manifest: `id<TAB>width<TAB>height` or `id<TAB>path` lines
    #[arg(long, value_name = "PATH")]
    pub manifest: PathBuf,
    /// Directory for zoom_cdf.{csv,json} and zoom_summary.tsv
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "LIST", value_delimiter = ',', default_values_t = vec![1.0, 2.0, 4.0])]
    pub thresholds: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ZoomTarget::High)]
    pub target: ZoomTarget,
    #[arg(long, value_enum, default_value_t = CdfFormat::Csv)]
    pub format: CdfFormat,
}

#[derive(Debug, Clone, Args)]
pub struct InspectArgs {
    pub token_file: PathBuf,
    /// Print every segment instead of a per-tier summary
    #[arg(long)]
    pub segments: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub pipeline: PipelineArgs,
    #[arg(long, value_name = "N", default_value_t = 8)]
    pub images: usize,
    #[arg(long, value_name = "N", default_value_t = 1)]
    pub workers: usize,
    /// Largest side of the synthetic images
    #[arg(long, value_name = "PIXELS", default_value_t = 2000)]
    pub max_side: u32,
}

pub fn run(cli: Cli, out: &mut dyn Write) -> i32 {
    match cli.command {
        Command::Tokenize(args) => run_tokenize(&args, out).exit_code,
        Command::Stats(args) => run_stats(&args, out),
        Command::Inspect(args) => run_inspect(&args, out),
        Command::Bench(args) => run_bench(&args, out),
    }
}

fn report(e: &Error) {
    eprintln!("error: {e}");
}

fn exit_for(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_PARTIAL,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ManifestEntry {
    pub image_id: String,
    pub input: PathBuf,
    pub output: PathBuf,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub version: String,
    pub config_digest: String,
    pub settings: Settings,
    pub entries: Vec<ManifestEntry>,
}

impl RunManifest {
    pub fn all_ok(&self) -> bool {
        self.entries.iter().all(|e| e.status == Status::Ok)
    }
}

#[derive(Debug)]
pub struct TokenizeOutcome {
    pub exit_code: i32,
    pub manifest: Option<RunManifest>,
}

impl TokenizeOutcome {
    fn failed(exit_code: i32) -> Self {
        Self {
            exit_code,
            manifest: None,
        }
    }
}

fn collect_inputs(args: &TokenizeArgs) -> Result<Vec<(String, PathBuf)>> {
    let mut inputs = Vec::new();
    if let Some(path) = &args.manifest {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for rec in parse_manifest(&text, base).map_err(|e| Error::Config(e.to_string()))? {
            match rec {
                ManifestRecord::Path { image_id, path } => inputs.push((image_id, path)),
                ManifestRecord::Dims { image_id, .. } => {
                    return Err(Error::Config(format!(
                        "manifest entry {image_id} has dimensions, tokenize needs image paths"
                    )))
                }
            }
        }
    }
    for path in &args.inputs {
        let id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Config(format!("cannot derive an image id from {}", path.display())))?;
        inputs.push((id.to_string(), path.clone()));
    }
    if inputs.is_empty() {
        return Err(Error::Config("no input images".into()));
    }
    let mut seen = HashSet::new();
    if let Some((dup, _)) = inputs.iter().find(|(id, _)| !seen.insert(id.as_str())) {
        return Err(Error::Config(format!("duplicate image id {dup}")));
    }
    Ok(inputs)
}

fn tokenize_file(
    input: &Path,
    output: &Path,
    enc: &ReferenceEncoder,
    proj: &ProjectionMap,
    settings: &Settings,
) -> Result<()> {
    let bytes = std::fs::read(input).map_err(|e| Error::io(input, e))?;
    let img = decode_image(&bytes)?;
    let (seq, _) = tokenize_image(&img, enc, proj, &settings.pipeline)?;
    tokenfile::write(output, &seq)
}

/// Tokenizes every input, continuing past per-image failures.
pub fn run_tokenize(args: &TokenizeArgs, out: &mut dyn Write) -> TokenizeOutcome {
    let settings = match Settings::load(&args.pipeline) {
        Ok(s) => s,
        Err(e) => {
            report(&e);
            return TokenizeOutcome::failed(EXIT_CONFIG);
        }
    };
    let parts = settings.encoder().and_then(|enc| Ok((enc, settings.projection_map()?)));
    let (enc, proj) = match parts {
        Ok(p) => p,
        Err(e) => {
            report(&e);
            return TokenizeOutcome::failed(EXIT_CONFIG);
        }
    };
    let inputs = match collect_inputs(args) {
        Ok(i) => i,
        Err(e) => {
            report(&e);
            return TokenizeOutcome::failed(exit_for(&e));
        }
    };
    if args.workers == 0 {
        report(&Error::Config("--workers must be at least 1".into()));
        return TokenizeOutcome::failed(EXIT_CONFIG);
    }
    if let Err(e) = std::fs::create_dir_all(&args.out) {
        report(&Error::io(&args.out, e));
        return TokenizeOutcome::failed(EXIT_IO);
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(args.workers).build() {
        Ok(p) => p,
        Err(e) => {
            report(&Error::Config(e.to_string()));
            return TokenizeOutcome::failed(EXIT_CONFIG);
        }
    };

    let entries: Vec<ManifestEntry> = pool.install(|| {
        inputs
            .par_iter()
            .map(|(id, input)| {
                let output = args.out.join(format!("{id}.{TOKEN_EXT}"));
                let result = tokenize_file(input, &output, &enc, &proj, &settings);
                ManifestEntry {
                    image_id: id.clone(),
                    input: input.clone(),
                    output,
                    status: if result.is_ok() { Status::Ok } else { Status::Failed },
                    error: result.err().map(|e| format!("{}: {e}", e.name())),
                }
            })
            .collect()
    });

    let manifest = RunManifest {
        version: crate::VERSION.to_string(),
        config_digest: settings.digest(),
        settings,
        entries,
    };
    let manifest_path = args.out.join(RUN_MANIFEST_NAME);
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    if let Err(e) = std::fs::write(&manifest_path, json) {
        report(&Error::io(&manifest_path, e));
        return TokenizeOutcome {
            exit_code: EXIT_IO,
            manifest: Some(manifest),
        };
    }

    let ok = manifest.entries.iter().filter(|e| e.status == Status::Ok).count();
    let _ = writeln!(out, "tokenized {ok}/{} images into {}", manifest.entries.len(), args.out.display());
    for e in manifest.entries.iter().filter(|e| e.status == Status::Failed) {
        let _ = writeln!(out, "failed {}: {}", e.image_id, e.error.as_deref().unwrap_or(""));
    }
    TokenizeOutcome {
        exit_code: if manifest.all_ok() { EXIT_OK } else { EXIT_PARTIAL },
        manifest: Some(manifest),
    }
}

fn dims_of(rec: &ManifestRecord) -> Result<(u32, u32)> {
    match rec {
        ManifestRecord::Dims { width, height, .. } => Ok((*width, *height)),
        ManifestRecord::Path { path, .. } => {
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            probe_dimensions(&bytes)
        }
    }
}

fn stats_inner(args: &StatsArgs, out: &mut dyn Write) -> Result<()> {
    let settings = Settings::load(&args.pipeline)?;
    let text = std::fs::read_to_string(&args.manifest).map_err(|e| Error::io(&args.manifest, e))?;
    let records = parse_manifest(&text, args.manifest.parent().unwrap_or(Path::new("")))?;

    let mut acc = ZoomAccumulator::new();
    for rec in &records {
        let (w, h) = dims_of(rec)?;
        acc.push(&ZoomRecord::new(rec.image_id(), w, h, &settings.pipeline, args.target)?);
    }
    let stats = acc.finish(&args.thresholds)?;

    let mut summary = format!("n\t{}\n", stats.n);
    for &(t, f) in &stats.fraction_at_least {
        summary.push_str(&format!("at_least\t{t:?}\t{f:?}\t{}\n", stats.count_at_least(t)));
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let ext = match args.format {
            CdfFormat::Csv => "csv",
            CdfFormat::Json => "json",
        };
        let cdf_path = dir.join(format!("zoom_cdf.{ext}"));
        std::fs::write(&cdf_path, crate::analytics::emit_cdf(&stats, args.format))
            .map_err(|e| Error::io(&cdf_path, e))?;
        let summary_path = dir.join("zoom_summary.tsv");
        std::fs::write(&summary_path, &summary).map_err(|e| Error::io(&summary_path, e))?;
    }
    let _ = out.write_all(summary.as_bytes());
    Ok(())
}

pub fn run_stats(args: &StatsArgs, out: &mut dyn Write) -> i32 {
    match stats_inner(args, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            report(&e);
            exit_for(&e)
        }
    }
}

/// What `inspect` reports about a token file.
#[derive(Debug, Clone, PartialEq)]
pub struct InspectReport {
    pub version: u32,
    pub dim: usize,
    pub entries: usize,
    pub image_tokens: usize,
    pub separators: usize,
    pub segments: Vec<Segment>,
}

impl InspectReport {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let header = tokenfile::read_header(bytes)?;
        let seq: TokenSequence = tokenfile::decode(bytes)?;
        Ok(Self {
            version: header.version,
            dim: seq.dim(),
            entries: seq.len(),
            image_tokens: seq.image_token_count(),
            separators: seq.separator_count(),
            segments: seq.segments().to_vec(),
        })
    }

    pub fn render(&self, all_segments: bool) -> String {
        let mut s = format!(
            "version: {}\nd_lm: {}\nentries: {}\nimage tokens: {}\nseparators: {}\nsegments: {}\n",
            self.version,
            self.dim,
            self.entries,
            self.image_tokens,
            self.separators,
            self.segments.len()
        );
        if all_segments {
            for (i, seg) in self.segments.iter().enumerate() {
                s.push_str(&format!(
                    "  [{i}] {}#{} {}x{} ({} tokens)\n",
                    seg.kind,
                    seg.crop_index,
                    seg.rows,
                    seg.cols,
                    seg.token_count()
                ));
            }
        } else {
            for tier in [Tier::Low, Tier::Medium, Tier::High] {
                let segs: Vec<_> = self.segments.iter().filter(|s| s.kind == tier).collect();
                if let Some(first) = segs.first() {
                    let tokens: usize = segs.iter().map(|s| s.token_count()).sum();
                    s.push_str(&format!(
                        "  {tier}: {} crop(s) of {}x{}, {tokens} tokens\n",
                        segs.len(),
                        first.rows,
                        first.cols
                    ));
                }
            }
        }
        s
    }
}

pub fn run_inspect(args: &InspectArgs, out: &mut dyn Write) -> i32 {
    let report_result = std::fs::read(&args.token_file)
        .map_err(|e| Error::io(&args.token_file, e))
        .and_then(|bytes| InspectReport::from_bytes(&bytes));
    match report_result {
        Ok(r) => {
            let _ = out.write_all(r.render(args.segments).as_bytes());
            EXIT_OK
        }
        Err(e) => {
            report(&e);
            exit_for(&e)
        }
    }
}

fn synthetic_image(index: u64, max_side: u32) -> Result<ImageBuffer> {
    let rng = CounterRng::new(0xBE7C_4000 ^ index);
    let span = max_side.saturating_sub(49).max(1) as u64;
    let w = 50 + (rng.u64_at(0) % span) as u32;
    let h = 50 + (rng.u64_at(1) % span) as u32;
    ImageBuffer::from_fn(w, h, |x, y| {
        [(x ^ y) as u8, (x.wrapping_mul(3) + y) as u8, (y.wrapping_mul(5) + index as u32) as u8]
    })
}

pub fn run_bench(args: &BenchArgs, out: &mut dyn Write) -> i32 {
    let mut run = || -> Result<()> {
        let settings = Settings::load(&args.pipeline)?;
        let enc = settings.encoder()?;
        let proj = settings.projection_map()?;
        if args.workers == 0 || args.images == 0 {
            return Err(Error::Config("--workers and --images must be at least 1".into()));
        }
        let images = (0..args.images as u64)
            .map(|i| synthetic_image(i, args.max_side))
            .collect::<Result<Vec<_>>>()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(args.workers)
            .build()
            .map_err(|e| Error::Config(e.to_string()))?;
        let start = Instant::now();
        let tokens: usize = pool.install(|| {
            images
                .par_iter()
                .map(|img| tokenize_image(img, &enc, &proj, &settings.pipeline).map(|(s, _)| s.image_token_count()))
                .collect::<Result<Vec<_>>>()
        })?
        .into_iter()
        .sum();
        let secs = start.elapsed().as_secs_f64().max(1e-9);
        let budget = token_budget(&settings.pipeline);
        let _ = writeln!(out, "images: {}", images.len());
        let _ = writeln!(out, "workers: {}", args.workers);
        let _ = writeln!(out, "tokens per image: {}", budget.total);
        let _ = writeln!(out, "elapsed: {secs:.3}s");
        let _ = writeln!(out, "images/second: {:.3}", images.len() as f64 / secs);
        let _ = writeln!(out, "tokens/second: {:.1}", tokens as f64 / secs);
        Ok(())
    };
    match run() {
        Ok(()) => EXIT_OK,
        Err(e) => {
            report(&e);
            exit_for(&e)
        }
    }
}
