use super::TrialSet;
use crate::error::{Error, Result};

/// Cuts `[cue + t0*fs, cue + t1*fs)` out of a continuous `channels x samples`
/// recording (channel-major) for every cue.
#[allow(clippy::too_many_arguments)]
pub fn epoch_extract(
    continuous: &[f32],
    n_channels: usize,
    cue_samples: &[usize],
    fs: f32,
    window: (f64, f64),
    labels: &[usize],
    n_classes: usize,
    channel_names: Option<Vec<String>>,
) -> Result<TrialSet> {
    if n_channels == 0 || !continuous.len().is_multiple_of(n_channels) {
        return Err(Error::Data(format!(
            "{} samples do not divide into {n_channels} channels",
            continuous.len()
        )));
    }
    if cue_samples.len() != labels.len() {
        return Err(Error::Data(format!("{} cues but {} labels", cue_samples.len(), labels.len())));
    }
    let (t0, t1) = window;
    if !(t1 > t0) {
        return Err(Error::Config(format!("empty epoch window [{t0}, {t1})")));
    }
    let total = continuous.len() / n_channels;
    let offset = (t0 * fs as f64).round() as i64;
    let len = ((t1 - t0) * fs as f64).round() as usize;
    let mut data = Vec::with_capacity(cue_samples.len() * n_channels * len);
    for (i, &cue) in cue_samples.iter().enumerate() {
        let start = cue as i64 + offset;
        if start < 0 || start as usize + len > total {
            return Err(Error::Data(format!(
                "cue {i} at sample {cue}: window [{start}, {}) exceeds recording of {total} samples",
                start + len as i64
            )));
        }
        let start = start as usize;
        for c in 0..n_channels {
            data.extend_from_slice(&continuous[c * total + start..c * total + start + len]);
        }
    }
    TrialSet::new(n_channels, len, fs, n_classes, labels.to_vec(), data, channel_names)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_seconds_at_250_hz() {
        let rec: Vec<f32> = (0..2 * 3000).map(|v| v as f32).collect();
        let s = epoch_extract(&rec, 2, &[0, 1500], 250.0, (0.0, 4.0), &[0, 1], 2, None).unwrap();
        assert_eq!(s.n_samples, 1000);
        assert_eq!(s.trial(0)[0], 0.0);
        assert_eq!(s.trial(1)[0], 1500.0);
        assert_eq!(s.trial(1)[1000], 3000.0 + 1500.0);
    }

    #[test]
    fn late_cue_is_rejected() {
        let rec = vec![0.0f32; 2 * 3000];
        let err = epoch_extract(&rec, 2, &[0, 2500], 250.0, (0.0, 4.0), &[0, 1], 2, None).unwrap_err();
        assert!(err.to_string().contains("cue 1"), "{err}");
    }

    #[test]
    fn negative_offset() {
        let rec: Vec<f32> = (0..100).map(|v| v as f32).collect();
        let s = epoch_extract(&rec, 1, &[50], 10.0, (-0.5, 0.5), &[0], 1, None).unwrap();
        assert_eq!(s.trial(0), (45..55).map(|v| v as f32).collect::<Vec<_>>().as_slice());
        assert!(epoch_extract(&rec, 1, &[2], 10.0, (-0.5, 0.5), &[0], 1, None).is_err());
    }
}
