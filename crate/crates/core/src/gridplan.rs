//! Grid selection and crop planning.
//!
//! An image is tokenized at three resolutions: a single `R x R` low-resolution
//! view, and medium/high views resized to `cols*R x rows*R` for a grid chosen
//! from a fixed set, then cut into `R x R` crops.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::aggregator::SeparatorPolicy;
use crate::error::{Error, Result};
use crate::imaging::CropRect;

/// CLIP image normalization constants.
pub const CLIP_MEAN: [f32; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
pub const CLIP_STD: [f32; 3] = [0.268_629_54, 0.261_302_6, 0.275_777_1];

/// A tiling choice: `cols` crops across, `rows` crops down.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "[u32; 2]", into = "[u32; 2]")]
pub struct GridSpec {
    pub cols: u32,
    pub rows: u32,
}

impl GridSpec {
    pub const fn new(cols: u32, rows: u32) -> Self {
        Self { cols, rows }
    }

    pub fn crop_count(&self) -> usize {
        self.cols as usize * self.rows as usize
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.rows, self.cols)
    }
}

impl From<[u32; 2]> for GridSpec {
    fn from([cols, rows]: [u32; 2]) -> Self {
        Self::new(cols, rows)
    }
}

impl From<GridSpec> for [u32; 2] {
    fn from(g: GridSpec) -> Self {
        [g.cols, g.rows]
    }
}

impl std::fmt::Display for GridSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{})", self.cols, self.rows)
    }
}

pub fn default_medium_grids() -> Vec<GridSpec> {
    vec![GridSpec::new(2, 2), GridSpec::new(1, 4), GridSpec::new(4, 1)]
}

pub fn default_high_grids() -> Vec<GridSpec> {
    vec![GridSpec::new(6, 6), GridSpec::new(3, 12), GridSpec::new(12, 3)]
}

/// Every knob of the tokenization pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Encoder input side length in pixels.
    pub resolution: u32,
    pub patch_size: u32,
    pub medium_grids: Vec<GridSpec>,
    pub high_grids: Vec<GridSpec>,
    pub pool_stride: u32,
    pub encoder_dim: usize,
    pub projection_dim: usize,
    pub norm_mean: [f32; 3],
    pub norm_std: [f32; 3],
    pub separator_policy: SeparatorPolicy,
    /// Every component of a separator vector takes this value.
    pub separator_value: f32,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            resolution: 336,
            patch_size: 14,
            medium_grids: default_medium_grids(),
            high_grids: default_high_grids(),
            pool_stride: 4,
            encoder_dim: 64,
            projection_dim: 128,
            norm_mean: CLIP_MEAN,
            norm_std: CLIP_STD,
            separator_policy: SeparatorPolicy::BetweenAll,
            separator_value: 0.0,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.resolution == 0 || self.patch_size == 0 {
            return Err(Error::Config("resolution and patch_size must be positive".into()));
        }
        if !self.resolution.is_multiple_of(self.patch_size) {
            return Err(Error::InvalidPatchSize {
                resolution: self.resolution,
                patch_size: self.patch_size,
            });
        }
        if self.pool_stride == 0 {
            return Err(Error::Config("pool_stride must be positive".into()));
        }
        let side = self.token_side();
        if !side.is_multiple_of(self.pool_stride as usize) {
            return Err(Error::IndivisibleGrid {
                rows: side,
                cols: side,
                stride: self.pool_stride as usize,
            });
        }
        if self.encoder_dim == 0 || self.projection_dim == 0 {
            return Err(Error::Config("encoder_dim and projection_dim must be positive".into()));
        }
        for (name, set) in [("medium_grids", &self.medium_grids), ("high_grids", &self.high_grids)] {
            if let Some(g) = set.iter().find(|g| g.cols == 0 || g.rows == 0) {
                return Err(Error::Config(format!("{name} contains degenerate grid {g}")));
            }
            if let Some(first) = set.first() {
                if set.iter().any(|g| g.crop_count() != first.crop_count()) {
                    return Err(Error::Config(format!(
                        "{name} grids must all yield the same crop count"
                    )));
                }
            }
            for g in set {
                let too_big = (g.cols.max(g.rows) as u64) * self.resolution as u64 > u32::MAX as u64;
                if too_big {
                    return Err(Error::Config(format!("{name} grid {g} overflows target size")));
                }
            }
        }
        if self.norm_std.iter().any(|&s| s == 0.0 || !s.is_finite())
            || self.norm_mean.iter().any(|m| !m.is_finite())
        {
            return Err(Error::InvalidNormalization(format!(
                "mean {:?} std {:?}",
                self.norm_mean, self.norm_std
            )));
        }
        if !self.separator_value.is_finite() {
            return Err(Error::Config("separator_value must be finite".into()));
        }
        Ok(())
    }

    /// Token grid side produced by the encoder for one crop (`R / patch`).
    pub fn token_side(&self) -> usize {
        (self.resolution / self.patch_size) as usize
    }

    /// Token grid side after pooling.
    pub fn pooled_side(&self) -> usize {
        self.token_side() / self.pool_stride as usize
    }

    pub fn medium_crop_count(&self) -> usize {
        self.medium_grids.first().map_or(0, GridSpec::crop_count)
    }

    pub fn high_crop_count(&self) -> usize {
        self.high_grids.first().map_or(0, GridSpec::crop_count)
    }
}

/// Aspect mismatch between an image and a grid, `|ln(w/h) - ln(cols/rows)|`.
pub fn aspect_distance(w: u32, h: u32, grid: GridSpec) -> f64 {
    ((w as f64 / h as f64).ln() - (grid.cols as f64 / grid.rows as f64).ln()).abs()
}

// `|ln(w*rows / (h*cols))|` is monotone in max(a,b)/min(a,b) with
// a = w*rows, b = h*cols, so fits can be compared exactly in integers.
fn fit_key(w: u32, h: u32, g: GridSpec) -> (u128, u128) {
    let a = w as u128 * g.rows as u128;
    let b = h as u128 * g.cols as u128;
    (a.max(b), a.min(b))
}

fn compare_fit(w: u32, h: u32, a: GridSpec, b: GridSpec) -> Ordering {
    let (an, ad) = fit_key(w, h, a);
    let (bn, bd) = fit_key(w, h, b);
    (an * bd)
        .cmp(&(bn * ad))
        .then_with(|| a.cols.abs_diff(a.rows).cmp(&b.cols.abs_diff(b.rows)))
        .then_with(|| b.cols.cmp(&a.cols))
}

/// Picks the grid whose aspect ratio is closest to `w:h` in log space.
///
/// Ties go to the most square grid, then to the one with more columns.
pub fn select_grid(w: u32, h: u32, grids: &[GridSpec]) -> Result<GridSpec> {
    if w == 0 || h == 0 {
        return Err(Error::InvalidDimension(format!("image size {w}x{h}")));
    }
    grids
        .iter()
        .copied()
        .min_by(|&a, &b| compare_fit(w, h, a, b))
        .ok_or(Error::EmptyGridSet)
}

/// Resize targets and crop rectangles for one image.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CropPlan {
    pub native_dims: (u32, u32),
    pub low_target: (u32, u32),
    pub medium_grid: GridSpec,
    pub medium_target: (u32, u32),
    pub medium_rects: Vec<CropRect>,
    pub high_grid: GridSpec,
    pub high_target: (u32, u32),
    pub high_rects: Vec<CropRect>,
}

/// Row-major `R x R` tiles covering a `cols*R x rows*R` image.
pub fn grid_rects(grid: GridSpec, resolution: u32) -> Vec<CropRect> {
    (0..grid.rows)
        .flat_map(|r| {
            (0..grid.cols).map(move |c| CropRect::new(c * resolution, r * resolution, resolution, resolution))
        })
        .collect()
}

pub fn plan_crops(w: u32, h: u32, config: &PipelineConfig) -> Result<CropPlan> {
    let r = config.resolution;
    let medium_grid = select_grid(w, h, &config.medium_grids)?;
    let high_grid = select_grid(w, h, &config.high_grids)?;
    Ok(CropPlan {
        native_dims: (w, h),
        low_target: (r, r),
        medium_grid,
        medium_target: (medium_grid.cols * r, medium_grid.rows * r),
        medium_rects: grid_rects(medium_grid, r),
        high_grid,
        high_target: (high_grid.cols * r, high_grid.rows * r),
        high_rects: grid_rects(high_grid, r),
    })
}

/// Longest side of the high-resolution target over the longest native side.
pub fn zoom_ratio(plan: &CropPlan) -> f64 {
    let (tw, th) = plan.high_target;
    let (nw, nh) = plan.native_dims;
    tw.max(th) as f64 / nw.max(nh) as f64
}
