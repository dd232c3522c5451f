#![allow(dead_code)]

use std::path::{Path, PathBuf};

use dragonfly_core::cli::{PipelineArgs, ProjectionKind, TokenizeArgs};
use dragonfly_core::ImageBuffer;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests").join("fixtures")
}

pub fn golden_image_path() -> PathBuf {
    fixtures_dir().join("golden_64.dfim")
}

pub fn golden_tokens_path() -> PathBuf {
    fixtures_dir().join("golden_64.dftk")
}

/// The 64x64 pattern stored in `golden_64.dfim`.
pub fn golden_image() -> ImageBuffer {
    ImageBuffer::from_fn(64, 64, |x, y| {
        [(x * 4) as u8, (y * 4) as u8, ((x * 7 + y * 13) % 256) as u8]
    })
    .unwrap()
}

/// seed 7, encoder dim 8, identity projection into 8 dims.
pub fn golden_pipeline() -> PipelineArgs {
    PipelineArgs {
        seed: Some(7),
        encoder_dim: Some(8),
        proj_dim: Some(8),
        projection: Some(ProjectionKind::Identity),
        ..Default::default()
    }
}

pub fn small_pipeline() -> PipelineArgs {
    PipelineArgs {
        seed: Some(3),
        encoder_dim: Some(4),
        proj_dim: Some(4),
        ..Default::default()
    }
}

pub fn tokenize_args(pipeline: PipelineArgs, out: &Path, inputs: Vec<PathBuf>) -> TokenizeArgs {
    TokenizeArgs {
        pipeline,
        out: out.to_path_buf(),
        manifest: None,
        workers: 1,
        inputs,
    }
}

pub fn write_dfim(dir: &Path, name: &str, img: &ImageBuffer) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, img.to_raw_fixture()).unwrap();
    path
}
