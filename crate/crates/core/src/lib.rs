//! Multi-resolution visual tokenization.
//!
//! An image is viewed at three resolutions: one low-resolution crop, and
//! medium and high views resized to an aspect-matched grid and cut into
//! encoder-sized crops. Every crop goes through a shared encoder and a
//! linear projection; medium and high crops are then mean-pooled, and all
//! segments are joined with separators into a fixed-length token sequence
//! (2,016 image tokens under the default configuration).
//!
//! ```
//! use dragonfly_core::{token_budget, PipelineConfig};
//!
//! let budget = token_budget(&PipelineConfig::default());
//! assert_eq!((budget.low, budget.medium, budget.high), (576, 144, 1296));
//! assert_eq!(budget.total, 2016);
//! ```

pub mod aggregator;
pub mod analytics;
pub mod cli;
pub mod encoder;
mod error;
pub mod gridplan;
pub mod imaging;
pub mod tokenfile;

pub use aggregator::{
    assemble_sequence, mean_pool, token_budget, tokenize_image, Entry, Segment, SeparatorPolicy, Tier,
    TokenBudget, TokenSequence,
};
pub use analytics::{corpus_zoom_stats, emit_cdf, CdfFormat, ZoomRecord, ZoomStats, ZoomTarget};
pub use encoder::{encode_crop, make_reference_encoder, project, CropEncoder, ProjectionMap, TokenGrid};
pub use error::{Error, Result};
pub use gridplan::{plan_crops, select_grid, zoom_ratio, CropPlan, GridSpec, PipelineConfig};
pub use imaging::{decode_image, extract_tile, normalize, resize, CropRect, ImageBuffer, PixelTensor};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");
