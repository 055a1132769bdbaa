//! Flat binary checkpoint format.
//!
//! ```text
//! offset  size      field
//! 0       7         magic "SEMENC1"
//! 7       1         activation tag: b'T' (tanh) or b'I' (identity)
//! 8       4         D, u32 little-endian
//! 12      4         H, u32 little-endian
//! 16      4         N, u32 little-endian
//! 20      8*count   parameters, f64 little-endian, W1 b1 W2 b2
//! ```

use std::path::Path;

use super::{param_count, Activation, EncoderParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC_PREFIX: &[u8; 7] = b"SEMENC1";
const HEADER_LEN: usize = 20;

impl EncoderParams {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 8 * self.values.len());
        out.extend_from_slice(CHECKPOINT_MAGIC_PREFIX);
        out.push(match self.activation {
            Activation::Tanh => b'T',
            Activation::Identity => b'I',
        });
        for dim in [self.input_dim, self.hidden_dim, self.output_dim] {
            out.extend_from_slice(&(dim as u32).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let format = |offset: usize, message: &str| Error::Format {
            offset: offset as u64,
            message: message.to_string(),
        };
        if bytes.len() < HEADER_LEN {
            return Err(format(bytes.len(), "truncated checkpoint header"));
        }
        if &bytes[..7] != CHECKPOINT_MAGIC_PREFIX {
            return Err(format(0, "bad checkpoint magic"));
        }
        let activation = match bytes[7] {
            b'T' => Activation::Tanh,
            b'I' => Activation::Identity,
            _ => return Err(format(7, "unknown activation tag")),
        };
        let dim_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (d, h, n) = (dim_at(8), dim_at(12), dim_at(16));
        if d == 0 || h == 0 || n == 0 {
            return Err(format(8, "zero dimension in checkpoint header"));
        }
        let count = param_count(d, h, n);
        let body = &bytes[HEADER_LEN..];
        if body.len() != 8 * count {
            return Err(format(
                HEADER_LEN + body.len().min(8 * count),
                &format!("expected {count} parameters, found {} bytes", body.len()),
            ));
        }
        let values = body
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        EncoderParams::from_flat(d, h, n, activation, values)
    }
}

pub fn write_checkpoint(path: &Path, params: &EncoderParams) -> Result<()> {
    std::fs::write(path, params.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<EncoderParams> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    EncoderParams::from_bytes(&bytes)
}
