//! Binary checkpoint: magic, version, architecture JSON, parameter payload, CRC32.
//!
//! ```text
//! "SFNC" | u32 version | u32 json_len | json | u8 scalar width (4 or 8)
//! | learnable tensors in declaration order | BN running mean/var per layer | u32 crc32
//! ```

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ArchConfig, StaFlowNet};
use crate::binfmt::{append_crc, check_magic, check_version, verify_crc, Reader};
use crate::error::{Error, FormatError, Result};
use crate::scalar::{lit, Precision, Scalar};

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"SFNC";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn write_checkpoint<T: Scalar>(net: &StaFlowNet<T>) -> Vec<u8> {
    let json = serde_json::to_vec(&net.arch).expect("arch serializes");
    let mut out = Vec::with_capacity(16 + json.len() + net.params.n_scalars() * T::PRECISION.byte_width());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.push(T::PRECISION.byte_width() as u8);
    for (_, t) in net.params.named_tensors() {
        for &v in t.data() {
            v.write_le(&mut out);
        }
    }
    for (_, bn) in net.params.batch_norms() {
        let s = bn.running();
        for &v in s.mean.iter().chain(&s.var) {
            v.write_le(&mut out);
        }
    }
    append_crc(&mut out);
    out
}

fn read_values<T: Scalar>(r: &mut Reader<'_>, n: usize, width: Precision) -> Result<Vec<T>, FormatError> {
    let w = width.byte_width();
    let bytes = r.take(n.checked_mul(w).ok_or_else(|| FormatError::Header("payload size overflow".into()))?)?;
    Ok(bytes
        .chunks_exact(w)
        .map(|c| match width {
            Precision::Single => lit(f32::read_le(c) as f64),
            Precision::Double => lit(f64::read_le(c)),
        })
        .collect())
}

/// Decodes a checkpoint. Values stored at the other precision are converted.
pub fn read_checkpoint<T: Scalar>(buf: &[u8]) -> Result<StaFlowNet<T>, FormatError> {
    check_magic(buf, CHECKPOINT_MAGIC)?;
    check_version(buf, CHECKPOINT_VERSION)?;
    let body = verify_crc(buf)?;
    let mut r = Reader::new(body);
    r.take(8)?;
    let json_len = r.u32()? as usize;
    let arch: ArchConfig = serde_json::from_slice(r.take(json_len)?)
        .map_err(|e| FormatError::Header(format!("architecture: {e}")))?;
    let width_byte = r.u8()?;
    let width = Precision::from_byte_width(width_byte)
        .ok_or_else(|| FormatError::Header(format!("scalar width {width_byte}")))?;
    let mut net = StaFlowNet::<T>::new(arch, &mut ChaCha8Rng::seed_from_u64(0))
        .map_err(|e| FormatError::Header(e.to_string()))?;
    for t in net.params.tensors_mut() {
        let vals = read_values::<T>(&mut r, t.numel(), width)?;
        t.update_data(|d| d.copy_from_slice(&vals));
    }
    for (_, bn) in net.params.batch_norms() {
        let mut s = bn.stats.lock().expect("bn stats");
        let c = s.mean.len();
        s.mean = read_values(&mut r, c, width)?;
        s.var = read_values(&mut r, c, width)?;
    }
    if r.position() != body.len() {
        return Err(FormatError::Header(format!(
            "{} trailing bytes after parameter payload",
            body.len() - r.position()
        )));
    }
    Ok(net)
}

pub fn save_checkpoint<T: Scalar>(net: &StaFlowNet<T>, path: &Path) -> Result<()> {
    std::fs::write(path, write_checkpoint(net)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<StaFlowNet<T>> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(&buf).map_err(|source| Error::Format { path: path.to_path_buf(), source })
}
