//! EMB1: little-endian container for one `L x T x C` layer stack.
//!
//! | bytes  | field                      |
//! |--------|----------------------------|
//! | 0-3    | magic `EMB1`               |
//! | 4      | version, `1`               |
//! | 5      | dtype code, `1` = f32      |
//! | 6-7    | reserved, zero             |
//! | 8-11   | L (u32)                    |
//! | 12-15  | T (u32)                    |
//! | 16-19  | C (u32)                    |
//! | 20-27  | frame rate in Hz (f64)     |
//! | 28-35  | start time in s (f64)      |
//! | 36-    | L*T*C f32, layer-major then row-major |

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::fusion::LayerStack;

pub const MAGIC: &[u8; 4] = b"EMB1";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 36;

/// Parsed EMB1 header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Emb1Header {
    pub version: u8,
    pub dtype: u8,
    pub layers: u32,
    pub frames: u32,
    pub channels: u32,
    pub frame_rate_hz: f64,
    pub t_start_s: f64,
}

impl Emb1Header {
    pub fn payload_len(&self) -> u64 {
        u64::from(self.layers) * u64::from(self.frames) * u64::from(self.channels) * 4
    }

    pub fn file_len(&self) -> u64 {
        HEADER_LEN as u64 + self.payload_len()
    }
}

fn u32_at(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice"))
}

fn f64_at(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8-byte slice"))
}

/// Parses and checks the header of an in-memory EMB1 image.
pub fn decode_header(bytes: &[u8], path: &Path) -> Result<Emb1Header> {
    let format = |reason: String| Error::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < MAGIC.len() || &bytes[..4] != MAGIC {
        return Err(format(format!(
            "bad magic {:?}, expected \"EMB1\"",
            &bytes[..bytes.len().min(4)]
        )));
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Corruption {
            path: path.to_path_buf(),
            expected: HEADER_LEN as u64,
            actual: bytes.len() as u64,
        });
    }
    let header = Emb1Header {
        version: bytes[4],
        dtype: bytes[5],
        layers: u32_at(bytes, 8),
        frames: u32_at(bytes, 12),
        channels: u32_at(bytes, 16),
        frame_rate_hz: f64_at(bytes, 20),
        t_start_s: f64_at(bytes, 28),
    };
    if header.version != VERSION {
        return Err(format(format!("unsupported version {}", header.version)));
    }
    if header.dtype != DTYPE_F32 {
        return Err(format(format!("unsupported dtype code {}", header.dtype)));
    }
    if bytes[6] != 0 || bytes[7] != 0 {
        return Err(format("reserved bytes 6-7 are not zero".into()));
    }
    if header.layers == 0 || header.frames == 0 || header.channels == 0 {
        return Err(format(format!(
            "empty dimensions L={} T={} C={}",
            header.layers, header.frames, header.channels
        )));
    }
    Ok(header)
}

/// Canonical EMB1 bytes of a stack.
pub fn encode_embedding(stack: &LayerStack) -> Vec<u8> {
    let (l, t, c) = (stack.layer_count(), stack.frames(), stack.channels());
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * l * t * c);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[VERSION, DTYPE_F32, 0, 0]);
    for dim in [l, t, c] {
        out.extend_from_slice(&(dim as u32).to_le_bytes());
    }
    out.extend_from_slice(&stack.frame_rate_hz().to_le_bytes());
    out.extend_from_slice(&stack.t_start_s().to_le_bytes());
    for layer in stack.layers() {
        for &v in layer.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Parses an in-memory EMB1 image into a validated stack.
pub fn decode_embedding(bytes: &[u8], path: &Path) -> Result<LayerStack> {
    let header = decode_header(bytes, path)?;
    if bytes.len() as u64 != header.file_len() {
        return Err(Error::Corruption {
            path: path.to_path_buf(),
            expected: header.file_len(),
            actual: bytes.len() as u64,
        });
    }
    let (t, c) = (header.frames as usize, header.channels as usize);
    let per_layer = t * c * 4;
    let layers = bytes[HEADER_LEN..]
        .chunks_exact(per_layer)
        .map(|chunk| {
            let values: Vec<f32> = chunk
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().expect("4-byte chunk")))
                .collect();
            Array2::from_shape_vec((t, c), values).expect("chunk holds t*c values")
        })
        .collect();
    LayerStack::new(layers, header.frame_rate_hz, header.t_start_s).map_err(|e| match e {
        Error::Validation(reason) => Error::Validation(format!("{}: {reason}", path.display())),
        other => other,
    })
}

pub fn write_embedding(stack: &LayerStack, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_embedding(stack)).map_err(|e| Error::io(path, e))
}

pub fn load_embedding(path: impl AsRef<Path>) -> Result<LayerStack> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_embedding(&bytes, path)
}

/// Reads only the header.
pub fn read_header(path: impl AsRef<Path>) -> Result<Emb1Header> {
    use std::io::Read;
    let path = path.as_ref();
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(HEADER_LEN);
    file.by_ref()
        .take(HEADER_LEN as u64)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    decode_header(&buf, path)
}
