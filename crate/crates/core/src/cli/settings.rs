//! Effective run settings: defaults, overlaid by a TOML config file, overlaid
//! by command-line flags.
//!
//! Config file keys (all optional):
//!
//! ```toml
//! resolution = 336
//! patch_size = 14
//! medium_grids = [[2, 2], [1, 4], [4, 1]]
//! high_grids = [[6, 6], [3, 12], [12, 3]]
//! pool_stride = 4
//! encoder_dim = 64
//! projection_dim = 128
//! norm_mean = [0.48145466, 0.4578275, 0.40821073]
//! norm_std = [0.26862954, 0.26130258, 0.27577711]
//! separator_policy = "between_all"   # or "between_crops_only", "none"
//! separator_value = 0.0
//! seed = 0
//! projection = "seeded"              # or "identity"
//! projection_file = "proj.dfpj"      # overrides `projection`
//! ```

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregator::SeparatorPolicy;
use crate::encoder::{make_reference_encoder, ProjectionMap, ReferenceEncoder};
use crate::error::{Error, Result};
use crate::gridplan::{GridSpec, PipelineConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionKind {
    Seeded,
    Identity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionSource {
    Seeded,
    Identity,
    File { path: PathBuf, sha256: String },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    resolution: Option<u32>,
    patch_size: Option<u32>,
    medium_grids: Option<Vec<GridSpec>>,
    high_grids: Option<Vec<GridSpec>>,
    pool_stride: Option<u32>,
    encoder_dim: Option<usize>,
    projection_dim: Option<usize>,
    norm_mean: Option<[f32; 3]>,
    norm_std: Option<[f32; 3]>,
    separator_policy: Option<SeparatorPolicy>,
    separator_value: Option<f32>,
    seed: Option<u64>,
    projection: Option<ProjectionKind>,
    projection_file: Option<PathBuf>,
}

/// Flags shared by every subcommand that builds a pipeline.
#[derive(Debug, Clone, Default, Args)]
pub struct PipelineArgs {
    /// TOML config file
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed for the reference encoder and seeded projection
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_name = "N")]
    pub encoder_dim: Option<usize>,
    #[arg(long, value_name = "N")]
    pub proj_dim: Option<usize>,
    /// Mean-pooling stride for medium/high crops
    #[arg(long, value_name = "N")]
    pub stride: Option<u32>,
    #[arg(long, value_enum)]
    pub separator_policy: Option<SeparatorPolicy>,
    #[arg(long, value_enum)]
    pub projection: Option<ProjectionKind>,
    /// DFPJ projection weights; overrides --projection
    #[arg(long, value_name = "PATH")]
    pub projection_file: Option<PathBuf>,
}

/// Everything that determines token output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Settings {
    pub pipeline: PipelineConfig,
    pub seed: u64,
    pub projection: ProjectionSource,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            seed: 0,
            projection: ProjectionSource::Seeded,
        }
    }
}

impl Settings {
    pub fn load(args: &PipelineArgs) -> Result<Self> {
        let file = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
                let parsed: ConfigFile = toml::from_str(&text)
                    .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
                Some((parsed, path.parent().unwrap_or(Path::new("")).to_path_buf()))
            }
            None => None,
        };

        let mut s = Settings::default();
        let mut kind = ProjectionKind::Seeded;
        let mut projection_file = None;
        if let Some((f, base)) = file {
            let p = &mut s.pipeline;
            macro_rules! take {
                ($($field:ident),*) => { $(if let Some(v) = f.$field { p.$field = v; })* };
            }
            take!(
                resolution,
                patch_size,
                medium_grids,
                high_grids,
                pool_stride,
                encoder_dim,
                projection_dim,
                norm_mean,
                norm_std,
                separator_policy,
                separator_value
            );
            if let Some(seed) = f.seed {
                s.seed = seed;
            }
            if let Some(k) = f.projection {
                kind = k;
            }
            projection_file = f.projection_file.map(|p| base.join(p));
        }

        if let Some(v) = args.seed {
            s.seed = v;
        }
        if let Some(v) = args.encoder_dim {
            s.pipeline.encoder_dim = v;
        }
        if let Some(v) = args.proj_dim {
            s.pipeline.projection_dim = v;
        }
        if let Some(v) = args.stride {
            s.pipeline.pool_stride = v;
        }
        if let Some(v) = args.separator_policy {
            s.pipeline.separator_policy = v;
        }
        if let Some(k) = args.projection {
            kind = k;
            projection_file = None;
        }
        if let Some(p) = &args.projection_file {
            projection_file = Some(p.clone());
        }

        s.projection = match projection_file {
            Some(path) => {
                let bytes = std::fs::read(&path)
                    .map_err(|e| Error::Config(format!("cannot read projection {}: {e}", path.display())))?;
                ProjectionSource::File {
                    sha256: hex::encode(Sha256::digest(&bytes)),
                    path,
                }
            }
            None => match kind {
                ProjectionKind::Seeded => ProjectionSource::Seeded,
                ProjectionKind::Identity => ProjectionSource::Identity,
            },
        };
        s.pipeline.validate().map_err(as_config_error)?;
        Ok(s)
    }

    /// SHA-256 over the canonical JSON form of these settings.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("settings serialize");
        hex::encode(Sha256::digest(&json))
    }

    pub fn encoder(&self) -> Result<ReferenceEncoder> {
        let p = &self.pipeline;
        make_reference_encoder(self.seed, p.encoder_dim, p.patch_size, p.resolution)
    }

    pub fn projection_map(&self) -> Result<ProjectionMap> {
        let p = &self.pipeline;
        let map = match &self.projection {
            ProjectionSource::Seeded => ProjectionMap::seeded(self.seed, p.encoder_dim, p.projection_dim)?,
            ProjectionSource::Identity => {
                if p.encoder_dim != p.projection_dim {
                    return Err(Error::Config(format!(
                        "identity projection needs encoder_dim == projection_dim, got {} and {}",
                        p.encoder_dim, p.projection_dim
                    )));
                }
                ProjectionMap::identity(p.encoder_dim)?
            }
            ProjectionSource::File { path, .. } => ProjectionMap::load(path).map_err(as_config_error)?,
        };
        if map.in_dim() != p.encoder_dim || map.out_dim() != p.projection_dim {
            return Err(Error::Config(format!(
                "projection is {}->{}, config expects {}->{}",
                map.in_dim(),
                map.out_dim(),
                p.encoder_dim,
                p.projection_dim
            )));
        }
        Ok(map)
    }
}

fn as_config_error(e: Error) -> Error {
    match e {
        Error::Config(_) => e,
        other => Error::Config(other.to_string()),
    }
}
