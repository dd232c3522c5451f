//! Binary token file (`DFTK`, version 1). All integers little-endian.
//!
//! ```text
//! magic "DFTK" | u32 version | u32 d_lm | u32 n_entries | u32 n_image_tokens | u32 n_separators
//! n_entries x { u8 tag (0 image, 1 separator) | u8 kind | u16 crop_index | u8 grid_row | u8 grid_col }
//! n_entries x d_lm x f32
//! ```
//!
//! Separator entries carry zero for kind, crop index, row and column. Kind
//! codes are 0 low, 1 medium, 2 high.

use std::path::Path;

use crate::aggregator::{Entry, Segment, Tier, TokenSequence};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"DFTK";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;
pub const ENTRY_LEN: usize = 6;

const TAG_IMAGE: u8 = 0;
const TAG_SEPARATOR: u8 = 1;

fn field<T: TryFrom<usize>>(v: usize, what: &str) -> Result<T> {
    T::try_from(v).map_err(|_| Error::Format(format!("{what} {v} does not fit the token file field")))
}

pub fn encode(seq: &TokenSequence) -> Result<Vec<u8>> {
    let n = seq.len();
    let mut out = Vec::with_capacity(HEADER_LEN + n * (ENTRY_LEN + 4 * seq.dim()));
    out.extend_from_slice(MAGIC);
    for v in [
        VERSION,
        field(seq.dim(), "d_lm")?,
        field(n, "entry count")?,
        field(seq.image_token_count(), "image token count")?,
        field(seq.separator_count(), "separator count")?,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for e in seq.entries() {
        match *e {
            Entry::Image { segment, row, col } => {
                let s = &seq.segments()[segment];
                out.push(TAG_IMAGE);
                out.push(s.kind.code());
                out.extend_from_slice(&field::<u16>(s.crop_index, "crop index")?.to_le_bytes());
                out.push(field(row, "grid row")?);
                out.push(field(col, "grid col")?);
            }
            Entry::Separator => out.extend_from_slice(&[TAG_SEPARATOR, 0, 0, 0, 0, 0]),
        }
    }
    for v in seq.vectors() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

/// Header fields of a token file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub version: u32,
    pub dim: usize,
    pub entries: usize,
    pub image_tokens: usize,
    pub separators: usize,
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap())
}

pub fn read_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!("file is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::Format("bad magic, expected DFTK".into()));
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported version {version}")));
    }
    let h = Header {
        version,
        dim: read_u32(bytes, 8) as usize,
        entries: read_u32(bytes, 12) as usize,
        image_tokens: read_u32(bytes, 16) as usize,
        separators: read_u32(bytes, 20) as usize,
    };
    if h.image_tokens.checked_add(h.separators) != Some(h.entries) {
        return Err(Error::Format(format!(
            "{} image tokens + {} separators != {} entries",
            h.image_tokens, h.separators, h.entries
        )));
    }
    Ok(h)
}

/// Parses and validates a token file, rebuilding segment layout from the
/// entry table.
pub fn decode(bytes: &[u8]) -> Result<TokenSequence> {
    let h = read_header(bytes)?;
    let expected = h
        .entries
        .checked_mul(ENTRY_LEN + 4 * h.dim)
        .and_then(|n| n.checked_add(HEADER_LEN))
        .ok_or_else(|| Error::Format("declared sizes overflow".into()))?;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "expected {expected} bytes for {} entries of dim {}, found {}",
            h.entries,
            h.dim,
            bytes.len()
        )));
    }

    let table = &bytes[HEADER_LEN..HEADER_LEN + h.entries * ENTRY_LEN];
    let mut entries = Vec::with_capacity(h.entries);
    let mut segments: Vec<Segment> = Vec::new();
    let mut separators = 0usize;
    for raw in table.chunks_exact(ENTRY_LEN) {
        match raw[0] {
            TAG_SEPARATOR => {
                separators += 1;
                entries.push(Entry::Separator);
            }
            TAG_IMAGE => {
                let kind = Tier::from_code(raw[1]).ok_or_else(|| Error::Format(format!("unknown kind {}", raw[1])))?;
                let crop_index = u16::from_le_bytes([raw[2], raw[3]]) as usize;
                let (row, col) = (raw[4] as usize, raw[5] as usize);
                let starts_new = segments
                    .last()
                    .is_none_or(|s| (s.kind, s.crop_index) != (kind, crop_index));
                if starts_new {
                    if let Some(prev) = segments.last() {
                        if (prev.kind, prev.crop_index) >= (kind, crop_index) {
                            return Err(Error::Format(format!(
                                "segment {kind}#{crop_index} out of order after {}#{}",
                                prev.kind, prev.crop_index
                            )));
                        }
                    }
                    segments.push(Segment {
                        kind,
                        crop_index,
                        rows: 0,
                        cols: 0,
                    });
                }
                let s = segments.last_mut().unwrap();
                s.rows = s.rows.max(row + 1);
                s.cols = s.cols.max(col + 1);
                entries.push(Entry::Image {
                    segment: segments.len() - 1,
                    row,
                    col,
                });
            }
            t => return Err(Error::Format(format!("unknown entry tag {t}"))),
        }
    }
    if separators != h.separators {
        return Err(Error::Format(format!(
            "header declares {} separators, table has {separators}",
            h.separators
        )));
    }

    let vectors = bytes[HEADER_LEN + h.entries * ENTRY_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    TokenSequence::from_parts(h.dim, vectors, entries, segments).map_err(|e| Error::Format(e.to_string()))
}

pub fn write(path: &Path, seq: &TokenSequence) -> Result<()> {
    let bytes = encode(seq)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<TokenSequence> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}
