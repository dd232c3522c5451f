//! Crop encoders and the projection into the language-model dimension.
//!
//! The real vision tower lives behind [`CropEncoder`]. [`ReferenceEncoder`] is
//! a deterministic linear patch embedding whose weights are reproducible from
//! `(seed, dim, patch_size)` alone, so every downstream stage can be checked
//! against exact oracles.

use std::path::Path;

use crate::error::{Error, Result};
use crate::imaging::{PixelTensor, CHANNELS};

/// Counter-based generator: the value at counter `i` is the `(i+1)`-th output
/// of SplitMix64 started from `seed`.
///
/// `mix(seed + (i + 1) * 0x9E3779B97F4A7C15)` with the SplitMix64 finalizer
/// (shifts 30/27/31, multipliers `0xBF58476D1CE4E5B9`, `0x94D049BB133111EB`).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CounterRng {
    seed: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// XORed into the seed to give projection weights their own stream.
pub const PROJECTION_STREAM: u64 = 0x5052_4F4A_4543_5400;

impl CounterRng {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn u64_at(&self, counter: u64) -> u64 {
        let mut z = self
            .seed
            .wrapping_add(counter.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[-scale, scale)` from the top 24 bits of the counter's value.
    pub fn uniform_at(&self, counter: u64, scale: f32) -> f32 {
        let unit = (self.u64_at(counter) >> 40) as f32 * (1.0 / (1u32 << 24) as f32);
        (unit * 2.0 - 1.0) * scale
    }
}

/// A `rows x cols` grid of `dim`-dimensional token vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenGrid {
    rows: usize,
    cols: usize,
    dim: usize,
    data: Vec<f32>,
}

impl TokenGrid {
    pub fn new(rows: usize, cols: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols * dim {
            return Err(Error::DimensionMismatch(format!(
                "{rows}x{cols}x{dim} grid needs {} values, got {}",
                rows * cols * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch("token grid contains non-finite values".into()));
        }
        Ok(Self {
            rows,
            cols,
            dim,
            data,
        })
    }

    pub fn zeros(rows: usize, cols: usize, dim: usize) -> Self {
        Self {
            rows,
            cols,
            dim,
            data: vec![0.0; rows * cols * dim],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, dim: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols * dim);
        for r in 0..rows {
            for c in 0..cols {
                for d in 0..dim {
                    data.push(f(r, c, d));
                }
            }
        }
        Self::new(rows, cols, dim, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn token(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.cols + col) * self.dim;
        &self.data[start..start + self.dim]
    }

    /// Tokens in row-major order.
    pub fn tokens(&self) -> std::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.dim.max(1))
    }
}

/// Maps a square normalized crop to a grid of visual tokens.
pub trait CropEncoder: Send + Sync {
    fn patch_size(&self) -> u32;

    fn dim(&self) -> usize;

    /// Encodes a square crop whose side is a multiple of the patch size into
    /// a `(side / patch) x (side / patch) x dim` grid.
    fn encode(&self, crop: &PixelTensor) -> Result<TokenGrid>;
}

/// Linear patch embedding with seeded weights and no bias.
///
/// Patch vectors are flattened channel-major (`c * p*p + y * p + x`). The
/// weight for patch element `k` and output component `d` is
/// `CounterRng::new(seed).uniform_at(k * dim + d, 1 / sqrt(p*p*3))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceEncoder {
    patch_size: u32,
    dim: usize,
    // [patch_len][dim]
    weights: Vec<f32>,
}

impl ReferenceEncoder {
    pub fn patch_len(&self) -> usize {
        self.patch_size as usize * self.patch_size as usize * CHANNELS
    }

    /// The `dim` weights multiplied by patch element `k`.
    pub fn weight_column(&self, k: usize) -> &[f32] {
        &self.weights[k * self.dim..(k + 1) * self.dim]
    }
}

pub fn make_reference_encoder(seed: u64, dim: usize, patch_size: u32, resolution: u32) -> Result<ReferenceEncoder> {
    if patch_size == 0 || !resolution.is_multiple_of(patch_size) {
        return Err(Error::InvalidPatchSize {
            resolution,
            patch_size,
        });
    }
    if dim == 0 {
        return Err(Error::Config("encoder dim must be positive".into()));
    }
    let patch_len = patch_size as usize * patch_size as usize * CHANNELS;
    let scale = 1.0 / (patch_len as f32).sqrt();
    let rng = CounterRng::new(seed);
    let weights = (0..(patch_len * dim) as u64).map(|i| rng.uniform_at(i, scale)).collect();
    Ok(ReferenceEncoder {
        patch_size,
        dim,
        weights,
    })
}

impl CropEncoder for ReferenceEncoder {
    fn patch_size(&self) -> u32 {
        self.patch_size
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, crop: &PixelTensor) -> Result<TokenGrid> {
        let (w, h) = (crop.width(), crop.height());
        let p = self.patch_size;
        if w != h || w % p != 0 {
            return Err(Error::DimensionMismatch(format!(
                "crop {w}x{h} is not a square multiple of patch size {p}"
            )));
        }
        let side = (w / p) as usize;
        let p = p as usize;
        let width = w as usize;
        let mut data = vec![0f32; side * side * self.dim];
        for (t, acc) in data.chunks_exact_mut(self.dim).enumerate() {
            let (gy, gx) = (t / side, t % side);
            let mut k = 0;
            for c in 0..CHANNELS {
                let plane = crop.plane(c);
                for py in 0..p {
                    let row = &plane[(gy * p + py) * width + gx * p..][..p];
                    for &x in row {
                        let col = &self.weights[k * self.dim..(k + 1) * self.dim];
                        for (a, &wt) in acc.iter_mut().zip(col) {
                            *a += wt * x;
                        }
                        k += 1;
                    }
                }
            }
        }
        TokenGrid::new(side, side, self.dim, data)
    }
}

/// Encodes one `R x R` crop, enforcing the pipeline's crop and grid shapes.
pub fn encode_crop(enc: &dyn CropEncoder, crop: &PixelTensor, resolution: u32) -> Result<TokenGrid> {
    if crop.width() != resolution || crop.height() != resolution {
        return Err(Error::DimensionMismatch(format!(
            "crop is {}x{}, encoder expects {resolution}x{resolution}",
            crop.width(),
            crop.height()
        )));
    }
    let p = enc.patch_size();
    if p == 0 || !resolution.is_multiple_of(p) {
        return Err(Error::InvalidPatchSize {
            resolution,
            patch_size: p,
        });
    }
    let side = (resolution / p) as usize;
    let grid = enc.encode(crop)?;
    if grid.rows() != side || grid.cols() != side || grid.dim() != enc.dim() {
        return Err(Error::DimensionMismatch(format!(
            "encoder returned {}x{}x{}, expected {side}x{side}x{}",
            grid.rows(),
            grid.cols(),
            grid.dim(),
            enc.dim()
        )));
    }
    Ok(grid)
}

/// Magic prefix of projection weight files.
pub const PROJECTION_MAGIC: &[u8; 4] = b"DFPJ";

/// Affine map `v -> W v + b` from encoder to language-model dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMap {
    in_dim: usize,
    out_dim: usize,
    // [out_dim][in_dim]
    weights: Vec<f32>,
    bias: Vec<f32>,
    // [in_dim][out_dim], for the inner loop
    weights_t: Vec<f32>,
}

impl ProjectionMap {
    pub fn new(in_dim: usize, out_dim: usize, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        if in_dim == 0 || out_dim == 0 {
            return Err(Error::DimensionMismatch("projection dims must be positive".into()));
        }
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::DimensionMismatch(format!(
                "{out_dim}x{in_dim} projection needs {} weights and {out_dim} biases, got {} and {}",
                in_dim * out_dim,
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch("projection has non-finite entries".into()));
        }
        let mut weights_t = vec![0f32; weights.len()];
        for o in 0..out_dim {
            for i in 0..in_dim {
                weights_t[i * out_dim + o] = weights[o * in_dim + i];
            }
        }
        Ok(Self {
            in_dim,
            out_dim,
            weights,
            bias,
            weights_t,
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut weights = vec![0f32; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        Self::new(dim, dim, weights, vec![0.0; dim])
    }

    /// Weights then biases drawn uniformly from `[-0.1, 0.1)` on the
    /// projection stream of `seed` (counters `0..out*in` row-major, then
    /// `out*in..out*in+out`).
    pub fn seeded(seed: u64, in_dim: usize, out_dim: usize) -> Result<Self> {
        let rng = CounterRng::new(seed ^ PROJECTION_STREAM);
        let n = (in_dim * out_dim) as u64;
        let weights = (0..n).map(|i| rng.uniform_at(i, 0.1)).collect();
        let bias = (n..n + out_dim as u64).map(|i| rng.uniform_at(i, 0.1)).collect();
        Self::new(in_dim, out_dim, weights, bias)
    }

    pub fn without_bias(mut self) -> Self {
        self.bias.iter_mut().for_each(|b| *b = 0.0);
        self
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    fn apply_into(&self, v: &[f32], out: &mut [f32]) {
        out.fill(0.0);
        for (&x, row) in v.iter().zip(self.weights_t.chunks_exact(self.out_dim)) {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * x;
            }
        }
        for (o, &b) in out.iter_mut().zip(&self.bias) {
            *o += b;
        }
    }

    /// `DFPJ`, u32 in_dim, u32 out_dim, row-major f32 weights, f32 bias; all
    /// little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * (self.weights.len() + self.bias.len()));
        out.extend_from_slice(PROJECTION_MAGIC);
        out.extend_from_slice(&(self.in_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.out_dim as u32).to_le_bytes());
        for v in self.weights.iter().chain(&self.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != PROJECTION_MAGIC {
            return Err(Error::Format("missing DFPJ header".into()));
        }
        let in_dim = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let out_dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let n = in_dim
            .checked_mul(out_dim)
            .and_then(|n| n.checked_add(out_dim))
            .ok_or_else(|| Error::Format("projection dims overflow".into()))?;
        let body = &bytes[12..];
        if body.len() != n * 4 {
            return Err(Error::Format(format!(
                "{out_dim}x{in_dim} projection needs {} payload bytes, found {}",
                n * 4,
                body.len()
            )));
        }
        let mut values: Vec<f32> = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let bias = values.split_off(in_dim * out_dim);
        Self::new(in_dim, out_dim, values, bias).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// Replaces every token `v` with `W v + b`.
pub fn project(tokens: &TokenGrid, p: &ProjectionMap) -> Result<TokenGrid> {
    if tokens.dim() != p.in_dim {
        return Err(Error::DimensionMismatch(format!(
            "token dim {} does not match projection input dim {}",
            tokens.dim(),
            p.in_dim
        )));
    }
    let mut data = vec![0f32; tokens.len() * p.out_dim];
    for (v, out) in tokens.tokens().zip(data.chunks_exact_mut(p.out_dim)) {
        p.apply_into(v, out);
    }
    TokenGrid::new(tokens.rows(), tokens.cols(), p.out_dim, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::{normalize, ImageBuffer};
    use rand::{Rng, SeedableRng};

    fn random_tensor(side: u32, seed: u64) -> PixelTensor {
        let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
        let data = (0..side * side * 3).map(|_| rng.gen_range(-2.0f32..2.0)).collect();
        PixelTensor::from_planar(side, side, data).unwrap()
    }

    #[test]
    fn splitmix_reference_outputs() {
        // Published SplitMix64 sequence for seed 0.
        let rng = CounterRng::new(0);
        assert_eq!(rng.u64_at(0), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.u64_at(1), 0x6E78_9E6A_A1B9_65F4);
        assert_eq!(rng.u64_at(2), 0x06C4_5D18_8009_454F);
    }

    #[test]
    fn uniform_stays_in_range() {
        let rng = CounterRng::new(42);
        for i in 0..10_000 {
            let v = rng.uniform_at(i, 0.1);
            assert!((-0.1..0.1).contains(&v), "{v}");
        }
    }

    #[test]
    fn reference_encoder_is_deterministic() {
        let a = make_reference_encoder(3, 16, 14, 112).unwrap();
        let b = make_reference_encoder(3, 16, 14, 112).unwrap();
        let crop = random_tensor(112, 1);
        assert_eq!(a.encode(&crop).unwrap(), b.encode(&crop).unwrap());
        let c = make_reference_encoder(4, 16, 14, 112).unwrap();
        assert_ne!(a.encode(&crop).unwrap(), c.encode(&crop).unwrap());
    }

    #[test]
    fn zero_input_gives_zero_tokens() {
        let enc = make_reference_encoder(9, 8, 14, 112).unwrap();
        let crop = PixelTensor::from_planar(112, 112, vec![0.0; 112 * 112 * 3]).unwrap();
        let grid = encode_crop(&enc, &crop, 112).unwrap();
        assert!(grid.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unit_pixel_selects_weight_column() {
        let (seed, dim, p) = (11u64, 5usize, 14u32);
        let enc = make_reference_encoder(seed, dim, p, 112).unwrap();
        let rng = CounterRng::new(seed);
        let scale = 1.0 / ((p * p * 3) as f32).sqrt();
        // channel 1, row 3, col 5 inside patch (0,0)
        let k = 196 + 3 * 14 + 5;
        let mut data = vec![0f32; 112 * 112 * 3];
        data[112 * 112 + 3 * 112 + 5] = 1.0;
        let crop = PixelTensor::from_planar(112, 112, data).unwrap();
        let grid = enc.encode(&crop).unwrap();
        let expected: Vec<f32> = (0..dim).map(|d| rng.uniform_at((k * dim + d) as u64, scale)).collect();
        assert_eq!(grid.token(0, 0), expected.as_slice());
        assert_eq!(enc.weight_column(k), expected.as_slice());
        for r in 0..8 {
            for c in 0..8 {
                if (r, c) != (0, 0) {
                    assert!(grid.token(r, c).iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn encoder_matches_naive_patch_matvec() {
        let enc = make_reference_encoder(5, 4, 14, 28).unwrap();
        let crop = random_tensor(28, 2);
        let grid = enc.encode(&crop).unwrap();
        for gy in 0..2 {
            for gx in 0..2 {
                for d in 0..4 {
                    let mut acc = 0f64;
                    for c in 0..3 {
                        for py in 0..14 {
                            for px in 0..14 {
                                let k = c * 196 + py * 14 + px;
                                let x = crop.get(c, (gx * 14 + px) as u32, (gy * 14 + py) as u32);
                                acc += enc.weight_column(k)[d] as f64 * x as f64;
                            }
                        }
                    }
                    assert!((grid.token(gy, gx)[d] as f64 - acc).abs() < 1e-4);
                }
            }
        }
    }

    #[test]
    fn encoder_is_linear() {
        let enc = make_reference_encoder(1, 8, 14, 56).unwrap();
        let a = random_tensor(56, 10);
        let b = random_tensor(56, 11);
        let (alpha, beta) = (0.7f32, -1.3f32);
        let mix: Vec<f32> = a.data().iter().zip(b.data()).map(|(x, y)| alpha * x + beta * y).collect();
        let mix = PixelTensor::from_planar(56, 56, mix).unwrap();
        let (ga, gb, gm) = (enc.encode(&a).unwrap(), enc.encode(&b).unwrap(), enc.encode(&mix).unwrap());
        for ((x, y), m) in ga.data().iter().zip(gb.data()).zip(gm.data()) {
            let expected = alpha * x + beta * y;
            assert!((m - expected).abs() <= 1e-5 * expected.abs().max(1.0), "{m} vs {expected}");
        }
    }

    #[test]
    fn encode_crop_shapes() {
        let enc = make_reference_encoder(0, 4, 14, 336).unwrap();
        let img = ImageBuffer::filled(336, 336, [10, 20, 30]).unwrap();
        let crop = normalize(&img, &[0.5; 3], &[0.5; 3]).unwrap();
        let grid = encode_crop(&enc, &crop, 336).unwrap();
        assert_eq!((grid.rows(), grid.cols(), grid.len()), (24, 24, 576));

        let small = normalize(&ImageBuffer::filled(112, 112, [1, 2, 3]).unwrap(), &[0.5; 3], &[0.5; 3]).unwrap();
        let grid = encode_crop(&enc, &small, 112).unwrap();
        assert_eq!((grid.rows(), grid.len()), (8, 64));

        let wrong = normalize(&ImageBuffer::filled(224, 224, [0; 3]).unwrap(), &[0.5; 3], &[0.5; 3]).unwrap();
        assert!(matches!(encode_crop(&enc, &wrong, 336), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn make_encoder_rejects_bad_patch() {
        assert!(matches!(make_reference_encoder(0, 4, 15, 336), Err(Error::InvalidPatchSize { .. })));
        assert!(matches!(make_reference_encoder(0, 4, 0, 336), Err(Error::InvalidPatchSize { .. })));
    }

    #[test]
    fn projection_identity_and_bias_only() {
        let grid = TokenGrid::from_fn(3, 2, 4, |r, c, d| (r * 10 + c) as f32 - d as f32 * 0.25).unwrap();
        assert_eq!(project(&grid, &ProjectionMap::identity(4).unwrap()).unwrap(), grid);

        let b = vec![0.5, -1.0, 2.0];
        let p = ProjectionMap::new(4, 3, vec![0.0; 12], b.clone()).unwrap();
        let out = project(&grid, &p).unwrap();
        assert_eq!(out.dim(), 3);
        assert!(out.tokens().all(|t| t == b.as_slice()));
    }

    #[test]
    fn projection_matches_naive_matvec() {
        let mut rng = rand::rngs::StdRng::seed_from_u64(99);
        let grid = TokenGrid::from_fn(2, 2, 3, |_, _, _| rng.gen_range(-1.0..1.0)).unwrap();
        let w: Vec<f32> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let b: Vec<f32> = (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let p = ProjectionMap::new(3, 4, w.clone(), b.clone()).unwrap();
        let out = project(&grid, &p).unwrap();
        for r in 0..2 {
            for c in 0..2 {
                let v = grid.token(r, c);
                for o in 0..4 {
                    let expected: f64 = (0..3).map(|i| w[o * 3 + i] as f64 * v[i] as f64).sum::<f64>() + b[o] as f64;
                    assert!((out.token(r, c)[o] as f64 - expected).abs() <= 1e-6);
                }
            }
        }
    }

    #[test]
    fn projection_dim_mismatch() {
        let grid = TokenGrid::zeros(2, 2, 5);
        let p = ProjectionMap::identity(4).unwrap();
        assert!(matches!(project(&grid, &p), Err(Error::DimensionMismatch(_))));
    }

    #[test]
    fn seeded_projection_range_and_bias() {
        let p = ProjectionMap::seeded(7, 8, 16).unwrap();
        assert!(p.weights().iter().chain(p.bias()).all(|v| (-0.1..0.1).contains(v)));
        assert!(p.bias().iter().any(|&b| b != 0.0));
        assert!(p.clone().without_bias().bias().iter().all(|&b| b == 0.0));
        assert_eq!(p, ProjectionMap::seeded(7, 8, 16).unwrap());
    }

    #[test]
    fn projection_file_roundtrip() {
        let p = ProjectionMap::seeded(3, 5, 2).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(&bytes[..4], b"DFPJ");
        assert_eq!(&bytes[4..12], &[5, 0, 0, 0, 2, 0, 0, 0]);
        assert_eq!(bytes.len(), 12 + 4 * 12);
        assert_eq!(&bytes[12..16], &p.weights()[0].to_le_bytes());
        assert_eq!(ProjectionMap::from_bytes(&bytes).unwrap(), p);
        assert!(matches!(ProjectionMap::from_bytes(&bytes[..bytes.len() - 2]), Err(Error::Format(_))));
        assert!(matches!(ProjectionMap::from_bytes(b"XXXX\x01\0\0\0\x01\0\0\0"), Err(Error::Format(_))));
    }
}
