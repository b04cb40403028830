//! EEGB trial container.
//!
//! ```text
//! "EEGB" | u32 version | u32 n_trials | u32 n_channels | u32 n_samples
//! | f32 sample_rate_hz | u32 n_classes | u8 has_channel_names
//! | [u16 len | utf-8 bytes] per channel (if has_channel_names)
//! | u16 labels[n_trials] | f32 data[n_trials][n_channels][n_samples] | u32 crc32
//! ```
//! All integers little-endian; the CRC covers every preceding byte.

use std::path::Path;

use super::TrialSet;
use crate::binfmt::{append_crc, check_magic, check_version, verify_crc, Reader};
use crate::error::{Error, FormatError, Result};

pub const EEGB_MAGIC: [u8; 4] = *b"EEGB";
pub const EEGB_VERSION: u32 = 1;

pub fn encode_eegb(set: &TrialSet) -> Result<Vec<u8>> {
    set.validate()?;
    let too_big = |what: &str, v: usize| Error::Data(format!("{what} {v} does not fit the file header"));
    let u32_of = |what: &str, v: usize| u32::try_from(v).map_err(|_| too_big(what, v));
    if set.n_classes > u16::MAX as usize + 1 {
        return Err(too_big("n_classes", set.n_classes));
    }
    let mut out = Vec::with_capacity(64 + set.labels.len() * 2 + set.data.len() * 4);
    out.extend_from_slice(&EEGB_MAGIC);
    out.extend_from_slice(&EEGB_VERSION.to_le_bytes());
    out.extend_from_slice(&u32_of("n_trials", set.n_trials())?.to_le_bytes());
    out.extend_from_slice(&u32_of("n_channels", set.n_channels)?.to_le_bytes());
    out.extend_from_slice(&u32_of("n_samples", set.n_samples)?.to_le_bytes());
    out.extend_from_slice(&set.sample_rate_hz.to_le_bytes());
    out.extend_from_slice(&u32_of("n_classes", set.n_classes)?.to_le_bytes());
    match &set.channel_names {
        Some(names) => {
            out.push(1);
            for n in names {
                let len = u16::try_from(n.len()).map_err(|_| too_big("channel name length", n.len()))?;
                out.extend_from_slice(&len.to_le_bytes());
                out.extend_from_slice(n.as_bytes());
            }
        }
        None => out.push(0),
    }
    for &l in &set.labels {
        out.extend_from_slice(&(l as u16).to_le_bytes());
    }
    for &v in &set.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    append_crc(&mut out);
    Ok(out)
}

pub fn decode_eegb(buf: &[u8]) -> Result<TrialSet, FormatError> {
    check_magic(buf, EEGB_MAGIC)?;
    check_version(buf, EEGB_VERSION)?;
    let mut r = Reader::new(buf);
    r.take(8)?;
    let n_trials = r.u32()? as usize;
    let n_channels = r.u32()? as usize;
    let n_samples = r.u32()? as usize;
    let sample_rate_hz = r.f32()?;
    let n_classes = r.u32()?;
    let channel_names = match r.u8()? {
        0 => None,
        1 => {
            let mut names = Vec::with_capacity(n_channels.min(4096));
            for i in 0..n_channels {
                let len = r.u16()? as usize;
                let bytes = r.take(len)?;
                let name = std::str::from_utf8(bytes)
                    .map_err(|_| FormatError::Header(format!("channel name {i} is not UTF-8")))?;
                names.push(name.to_string());
            }
            Some(names)
        }
        f => return Err(FormatError::Header(format!("has_channel_names flag {f}"))),
    };
    let expected = n_trials
        .checked_mul(n_channels)
        .and_then(|v| v.checked_mul(n_samples))
        .and_then(|v| v.checked_mul(4))
        .and_then(|v| v.checked_add(n_trials * 2 + 4 + r.position()))
        .ok_or_else(|| FormatError::Header("payload size overflow".into()))?;
    if buf.len() < expected {
        return Err(FormatError::Truncated { expected, actual: buf.len() });
    }
    if buf.len() > expected {
        return Err(FormatError::Header(format!("{} bytes after the checksum", buf.len() - expected)));
    }
    verify_crc(buf)?;
    if n_channels == 0 || n_samples == 0 || !(sample_rate_hz > 0.0 && sample_rate_hz.is_finite()) {
        return Err(FormatError::Header(format!(
            "invalid extents: {n_channels} channels, {n_samples} samples, {sample_rate_hz} Hz"
        )));
    }
    let mut labels = Vec::with_capacity(n_trials);
    for trial in 0..n_trials {
        let label = r.u16()? as u32;
        if label >= n_classes {
            return Err(FormatError::LabelOutOfRange { trial, label, n_classes });
        }
        labels.push(label as usize);
    }
    let data = r
        .take(n_trials * n_channels * n_samples * 4)?
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(TrialSet {
        n_channels,
        n_samples,
        sample_rate_hz,
        n_classes: n_classes as usize,
        labels,
        data,
        channel_names,
    })
}

pub fn save_eegb(set: &TrialSet, path: &Path) -> Result<()> {
    let bytes = encode_eegb(set)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_eegb(path: &Path) -> Result<TrialSet> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_eegb(&buf).map_err(|source| Error::Format { path: path.to_path_buf(), source })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(names: bool) -> TrialSet {
        TrialSet::new(
            3,
            4,
            250.0,
            2,
            vec![1, 0],
            (0..24).map(|v| v as f32 * 0.37 - 3.0).collect(),
            names.then(|| vec!["C3".into(), "Cz".into(), "C4".into()]),
        )
        .unwrap()
    }

    #[test]
    fn round_trip() {
        for names in [false, true] {
            let s = sample(names);
            let bytes = encode_eegb(&s).unwrap();
            assert_eq!(decode_eegb(&bytes).unwrap(), s);
        }
    }

    #[test]
    fn header_layout() {
        let bytes = encode_eegb(&sample(false)).unwrap();
        assert_eq!(&bytes[..4], b"EEGB");
        assert_eq!(bytes.len(), 29 + 2 * 2 + 24 * 4 + 4);
        assert_eq!(u16::from_le_bytes([bytes[29], bytes[30]]), 1);
    }

    #[test]
    fn distinct_diagnostics() {
        let good = encode_eegb(&sample(true)).unwrap();
        let mut b = good.clone();
        b[..4].copy_from_slice(b"XXXX");
        assert_eq!(decode_eegb(&b), Err(FormatError::BadMagic { expected: *b"EEGB", found: *b"XXXX" }));
        let mut b = good.clone();
        b[4] = 7;
        assert_eq!(decode_eegb(&b), Err(FormatError::Version { found: 7, supported: 1 }));
        let cut = &good[..good.len() - 10];
        assert_eq!(decode_eegb(cut), Err(FormatError::Truncated { expected: good.len(), actual: good.len() - 10 }));
        let mut set = sample(false);
        set.labels[1] = 1;
        let mut b = encode_eegb(&set).unwrap();
        b[31] = 5; // second label
        let n = b.len() - 4;
        let crc = crc32fast::hash(&b[..n]);
        b[n..].copy_from_slice(&crc.to_le_bytes());
        assert_eq!(decode_eegb(&b), Err(FormatError::LabelOutOfRange { trial: 1, label: 5, n_classes: 2 }));
        let mut b = good.clone();
        let k = b.len() - 20;
        b[k] ^= 0x01;
        assert!(matches!(decode_eegb(&b), Err(FormatError::Crc { .. })));
    }
}
