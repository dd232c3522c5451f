//! Token pooling and assembly of the final image token sequence.
//!
//! Segments are laid out low -> medium crops -> high crops, each crop
//! flattened row-major. Medium and high crops are mean-pooled over
//! non-overlapping `stride x stride` windows after projection; the
//! low-resolution view keeps every token.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{encode_crop, project, CropEncoder, ProjectionMap, TokenGrid};
use crate::error::{Error, Result};
use crate::gridplan::{plan_crops, CropPlan, PipelineConfig};
use crate::imaging::{extract_tile, normalize, resize, CropRect, ImageBuffer};

/// Resolution tier a segment was cut from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Low,
    Medium,
    High,
}

impl Tier {
    pub fn code(self) -> u8 {
        match self {
            Tier::Low => 0,
            Tier::Medium => 1,
            Tier::High => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Tier::Low),
            1 => Some(Tier::Medium),
            2 => Some(Tier::High),
            _ => None,
        }
    }
}

impl std::fmt::Display for Tier {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Tier::Low => "low",
            Tier::Medium => "medium",
            Tier::High => "high",
        })
    }
}

/// Where separators go between consecutive segments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum SeparatorPolicy {
    /// Between every pair of consecutive segments, low included.
    #[default]
    BetweenAll,
    /// Only between consecutive medium/high crops; the low segment is joined
    /// to the first crop directly.
    BetweenCropsOnly,
    None,
}

impl SeparatorPolicy {
    fn separator_before(self, index: usize) -> bool {
        match self {
            SeparatorPolicy::BetweenAll => index > 0,
            SeparatorPolicy::BetweenCropsOnly => index > 1,
            SeparatorPolicy::None => false,
        }
    }

    /// Separator count for a sequence of `segments` segments, the first low.
    pub fn separator_count(self, segments: usize) -> usize {
        (0..segments).filter(|&i| self.separator_before(i)).count()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Entry {
    Image { segment: usize, row: usize, col: usize },
    Separator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Segment {
    pub kind: Tier,
    pub crop_index: usize,
    pub rows: usize,
    pub cols: usize,
}

impl Segment {
    pub fn token_count(&self) -> usize {
        self.rows * self.cols
    }
}

/// Ordered image tokens and separators with their layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    dim: usize,
    vectors: Vec<f32>,
    entries: Vec<Entry>,
    segments: Vec<Segment>,
}

impl TokenSequence {
    /// Checks that entries, segments, and vectors agree with each other.
    pub fn from_parts(dim: usize, vectors: Vec<f32>, entries: Vec<Entry>, segments: Vec<Segment>) -> Result<Self> {
        if vectors.len() != entries.len() * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} entries of dim {dim} need {} values, got {}",
                entries.len(),
                entries.len() * dim,
                vectors.len()
            )));
        }
        let mut seen = vec![0usize; segments.len()];
        for e in &entries {
            if let Entry::Image { segment, row, col } = *e {
                let s = segments
                    .get(segment)
                    .ok_or_else(|| Error::DimensionMismatch(format!("entry references missing segment {segment}")))?;
                let i = seen[segment];
                if i >= s.token_count() || (row, col) != (i / s.cols, i % s.cols) {
                    return Err(Error::DimensionMismatch(format!(
                        "segment {segment} token {i} out of row-major order at ({row},{col})"
                    )));
                }
                seen[segment] += 1;
            }
        }
        if let Some((i, _)) = seen.iter().zip(&segments).enumerate().find(|(_, (n, s))| **n != s.token_count()) {
            return Err(Error::DimensionMismatch(format!("segment {i} is incomplete")));
        }
        Ok(Self {
            dim,
            vectors,
            entries,
            segments,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    /// All vectors in entry order, flattened.
    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }

    pub fn vector(&self, entry: usize) -> &[f32] {
        &self.vectors[entry * self.dim..(entry + 1) * self.dim]
    }

    pub fn image_token_count(&self) -> usize {
        self.entries.len() - self.separator_count()
    }

    pub fn separator_count(&self) -> usize {
        self.entries.iter().filter(|e| matches!(e, Entry::Separator)).count()
    }
}

/// Analytic token counts for a configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenBudget {
    pub low: usize,
    pub medium: usize,
    pub high: usize,
    pub total: usize,
    pub separators: usize,
}

impl TokenBudget {
    pub fn entries(&self) -> usize {
        self.total + self.separators
    }
}

pub fn token_budget(config: &PipelineConfig) -> TokenBudget {
    let side = config.token_side();
    let pooled = config.pooled_side();
    let low = side * side;
    let medium = config.medium_crop_count() * pooled * pooled;
    let high = config.high_crop_count() * pooled * pooled;
    let segments = 1 + config.medium_crop_count() + config.high_crop_count();
    TokenBudget {
        low,
        medium,
        high,
        total: low + medium + high,
        separators: config.separator_policy.separator_count(segments),
    }
}

/// Averages each non-overlapping `stride x stride` block of tokens.
pub fn mean_pool(grid: &TokenGrid, stride: usize) -> Result<TokenGrid> {
    let (rows, cols, dim) = (grid.rows(), grid.cols(), grid.dim());
    if stride == 0 || rows % stride != 0 || cols % stride != 0 {
        return Err(Error::IndivisibleGrid { rows, cols, stride });
    }
    let (out_rows, out_cols) = (rows / stride, cols / stride);
    let count = (stride * stride) as f64;
    let mut acc = vec![0f64; dim];
    let mut data = Vec::with_capacity(out_rows * out_cols * dim);
    for r in 0..out_rows {
        for c in 0..out_cols {
            acc.fill(0.0);
            for y in r * stride..(r + 1) * stride {
                for x in c * stride..(c + 1) * stride {
                    for (a, &v) in acc.iter_mut().zip(grid.token(y, x)) {
                        *a += v as f64;
                    }
                }
            }
            data.extend(acc.iter().map(|&s| (s / count) as f32));
        }
    }
    TokenGrid::new(out_rows, out_cols, dim, data)
}

fn check_grid(grid: &TokenGrid, side: usize, dim: usize, what: &str) -> Result<()> {
    if grid.rows() != side || grid.cols() != side || grid.dim() != dim {
        return Err(Error::DimensionMismatch(format!(
            "{what} grid is {}x{}x{}, expected {side}x{side}x{dim}",
            grid.rows(),
            grid.cols(),
            grid.dim()
        )));
    }
    Ok(())
}

/// Concatenates the unpooled low grid and the pooled medium/high crop grids
/// with separators according to the configured policy.
pub fn assemble_sequence(
    low: &TokenGrid,
    medium: &[TokenGrid],
    high: &[TokenGrid],
    config: &PipelineConfig,
) -> Result<TokenSequence> {
    for (tier, grids, expected) in [
        (Tier::Medium, medium, config.medium_crop_count()),
        (Tier::High, high, config.high_crop_count()),
    ] {
        if grids.len() != expected {
            return Err(Error::SegmentCountMismatch {
                tier,
                expected,
                got: grids.len(),
            });
        }
    }
    let dim = config.projection_dim;
    check_grid(low, config.token_side(), dim, "low")?;
    for g in medium.iter().chain(high) {
        check_grid(g, config.pooled_side(), dim, "pooled crop")?;
    }

    let budget = token_budget(config);
    let mut entries = Vec::with_capacity(budget.entries());
    let mut vectors = Vec::with_capacity(budget.entries() * dim);
    let mut segments = Vec::with_capacity(1 + medium.len() + high.len());
    let separator = vec![config.separator_value; dim];

    let tiers = std::iter::once((Tier::Low, 0, low))
        .chain(medium.iter().enumerate().map(|(i, g)| (Tier::Medium, i, g)))
        .chain(high.iter().enumerate().map(|(i, g)| (Tier::High, i, g)));
    for (index, (kind, crop_index, grid)) in tiers.enumerate() {
        if config.separator_policy.separator_before(index) {
            entries.push(Entry::Separator);
            vectors.extend_from_slice(&separator);
        }
        for t in 0..grid.len() {
            entries.push(Entry::Image {
                segment: index,
                row: t / grid.cols(),
                col: t % grid.cols(),
            });
        }
        vectors.extend_from_slice(grid.data());
        segments.push(Segment {
            kind,
            crop_index,
            rows: grid.rows(),
            cols: grid.cols(),
        });
    }
    Ok(TokenSequence {
        dim,
        vectors,
        entries,
        segments,
    })
}

/// Full pipeline for one image: plan, resize, crop, normalize, encode with
/// the shared encoder, project, pool medium/high crops, assemble.
///
/// Crops are encoded in parallel; output order follows crop order only.
pub fn tokenize_image(
    img: &ImageBuffer,
    enc: &dyn CropEncoder,
    proj: &ProjectionMap,
    config: &PipelineConfig,
) -> Result<(TokenSequence, CropPlan)> {
    config.validate()?;
    if enc.patch_size() != config.patch_size {
        return Err(Error::DimensionMismatch(format!(
            "encoder patch size {} differs from configured {}",
            enc.patch_size(),
            config.patch_size
        )));
    }
    if enc.dim() != proj.in_dim() || proj.out_dim() != config.projection_dim {
        return Err(Error::DimensionMismatch(format!(
            "encoder dim {} -> projection {}x{} -> configured {}",
            enc.dim(),
            proj.out_dim(),
            proj.in_dim(),
            config.projection_dim
        )));
    }

    let (w, h) = img.dims();
    let plan = plan_crops(w, h, config)?;
    let r = config.resolution;
    let low_img = resize(img, r, r)?;
    let medium_img = resize(img, plan.medium_target.0, plan.medium_target.1)?;
    let high_img = resize(img, plan.high_target.0, plan.high_target.1)?;

    let jobs: Vec<(&ImageBuffer, Option<CropRect>)> = std::iter::once((&low_img, None))
        .chain(plan.medium_rects.iter().map(|&rc| (&medium_img, Some(rc))))
        .chain(plan.high_rects.iter().map(|&rc| (&high_img, Some(rc))))
        .collect();
    let stride = config.pool_stride as usize;
    let grids = jobs
        .into_par_iter()
        .map(|(src, rect)| {
            let tile = match rect {
                Some(rc) => extract_tile(src, rc)?,
                None => src.clone(),
            };
            let pixels = normalize(&tile, &config.norm_mean, &config.norm_std)?;
            let tokens = project(&encode_crop(enc, &pixels, r)?, proj)?;
            match rect {
                Some(_) => mean_pool(&tokens, stride),
                None => Ok(tokens),
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let n_medium = plan.medium_rects.len();
    let seq = assemble_sequence(&grids[0], &grids[1..1 + n_medium], &grids[1 + n_medium..], config)?;
    Ok((seq, plan))
}
