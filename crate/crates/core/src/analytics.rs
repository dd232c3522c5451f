//! Corpus zoom-in statistics.
//!
//! The zoom ratio of an image is the longest side of its high-resolution
//! target divided by its longest native side. Statistics are an exact
//! empirical CDF plus `P(ratio >= t)` for requested thresholds.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::gridplan::{select_grid, PipelineConfig};

/// Which planned target the ratio is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ZoomTarget {
    Medium,
    #[default]
    High,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoomRecord {
    pub image_id: String,
    pub native_w: u32,
    pub native_h: u32,
    pub target_w: u32,
    pub target_h: u32,
    pub ratio: f64,
}

impl ZoomRecord {
    pub fn new(image_id: impl Into<String>, w: u32, h: u32, config: &PipelineConfig, target: ZoomTarget) -> Result<Self> {
        if w == 0 || h == 0 {
            return Err(Error::InvalidDimension(format!("image size {w}x{h}")));
        }
        let grids = match target {
            ZoomTarget::Medium => &config.medium_grids,
            ZoomTarget::High => &config.high_grids,
        };
        let g = select_grid(w, h, grids)?;
        let (target_w, target_h) = (g.cols * config.resolution, g.rows * config.resolution);
        Ok(Self {
            image_id: image_id.into(),
            native_w: w,
            native_h: h,
            target_w,
            target_h,
            ratio: target_w.max(target_h) as f64 / w.max(h) as f64,
        })
    }
}

/// Partial summary over one shard of a corpus. Shards merge in any order.
#[derive(Debug, Clone, Default)]
pub struct ZoomAccumulator {
    ratios: Vec<f64>,
}

impl ZoomAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: &ZoomRecord) {
        self.ratios.push(record.ratio);
    }

    pub fn merge(&mut self, other: ZoomAccumulator) {
        self.ratios.extend(other.ratios);
    }

    pub fn len(&self) -> usize {
        self.ratios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ratios.is_empty()
    }

    pub fn finish(mut self, thresholds: &[f64]) -> Result<ZoomStats> {
        if self.ratios.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if let Some(t) = thresholds.iter().find(|t| !t.is_finite()) {
            return Err(Error::Config(format!("threshold {t} is not finite")));
        }
        self.ratios.sort_by(f64::total_cmp);
        let n = self.ratios.len();

        let mut cdf_points: Vec<(f64, f64)> = Vec::new();
        for (i, &r) in self.ratios.iter().enumerate() {
            let point = (r, (i + 1) as f64 / n as f64);
            match cdf_points.last_mut() {
                Some(last) if last.0 == r => *last = point,
                _ => cdf_points.push(point),
            }
        }

        let mut ts = thresholds.to_vec();
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        let fraction_at_least = ts
            .into_iter()
            .map(|t| {
                let below = self.ratios.partition_point(|&r| r < t);
                (t, (n - below) as f64 / n as f64)
            })
            .collect();

        Ok(ZoomStats {
            n,
            sorted_ratios: self.ratios,
            fraction_at_least,
            cdf_points,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ZoomStats {
    pub n: usize,
    pub sorted_ratios: Vec<f64>,
    /// `(threshold, fraction of ratios >= threshold)`, thresholds ascending.
    pub fraction_at_least: Vec<(f64, f64)>,
    /// `(ratio, fraction of ratios <= ratio)` at each distinct ratio.
    pub cdf_points: Vec<(f64, f64)>,
}

impl ZoomStats {
    pub fn fraction_at_least(&self, threshold: f64) -> f64 {
        let below = self.sorted_ratios.partition_point(|&r| r < threshold);
        (self.n - below) as f64 / self.n as f64
    }

    pub fn count_at_least(&self, threshold: f64) -> usize {
        self.n - self.sorted_ratios.partition_point(|&r| r < threshold)
    }
}

pub fn corpus_zoom_stats<I, S>(
    records: I,
    config: &PipelineConfig,
    thresholds: &[f64],
    target: ZoomTarget,
) -> Result<ZoomStats>
where
    I: IntoIterator<Item = (S, u32, u32)>,
    S: Into<String>,
{
    let mut acc = ZoomAccumulator::new();
    for (id, w, h) in records {
        acc.push(&ZoomRecord::new(id, w, h, config, target)?);
    }
    acc.finish(thresholds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum)]
pub enum CdfFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Serialize)]
struct CdfPoint {
    ratio: f64,
    cum_fraction: f64,
}

/// Renders the empirical CDF, ascending by ratio.
pub fn emit_cdf(stats: &ZoomStats, format: CdfFormat) -> Vec<u8> {
    match format {
        CdfFormat::Csv => {
            let mut out = String::from("ratio,cum_fraction\n");
            for (r, f) in &stats.cdf_points {
                out.push_str(&format!("{r:?},{f:?}\n"));
            }
            out.into_bytes()
        }
        CdfFormat::Json => {
            let points: Vec<_> = stats
                .cdf_points
                .iter()
                .map(|&(ratio, cum_fraction)| CdfPoint { ratio, cum_fraction })
                .collect();
            let mut out = serde_json::to_vec_pretty(&points).expect("CDF points serialize");
            out.push(b'\n');
            out
        }
    }
}

/// One line of a corpus manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ManifestRecord {
    Dims { image_id: String, width: u32, height: u32 },
    Path { image_id: String, path: PathBuf },
}

impl ManifestRecord {
    pub fn image_id(&self) -> &str {
        match self {
            ManifestRecord::Dims { image_id, .. } | ManifestRecord::Path { image_id, .. } => image_id,
        }
    }
}

/// Parses a tab-separated manifest: `id<TAB>width<TAB>height` or
/// `id<TAB>path`. Blank lines and `#` comments are skipped; relative paths
/// resolve against `base`.
pub fn parse_manifest(text: &str, base: &Path) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |msg: &str| Error::Format(format!("manifest line {}: {msg}", lineno + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        let image_id = fields[0].trim();
        if image_id.is_empty() {
            return Err(bad("empty image id"));
        }
        let record = match fields.as_slice() {
            [_, w, h] => {
                let parse = |s: &str| s.trim().parse::<u32>().ok().filter(|&v| v > 0);
                let (Some(width), Some(height)) = (parse(w), parse(h)) else {
                    return Err(bad("width and height must be positive integers"));
                };
                ManifestRecord::Dims {
                    image_id: image_id.to_string(),
                    width,
                    height,
                }
            }
            [_, p] if !p.trim().is_empty() => ManifestRecord::Path {
                image_id: image_id.to_string(),
                path: base.join(p.trim()),
            },
            _ => return Err(bad("expected id<TAB>width<TAB>height or id<TAB>path")),
        };
        out.push(record);
    }
    Ok(out)
}
