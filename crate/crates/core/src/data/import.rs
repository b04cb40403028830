//! Per-trial CSV import.
//!
//! The manifest is JSON, either a bare list of `{"file", "label"}` entries or
//! an object:
//!
//! ```json
//! {"sample_rate_hz": 250, "classes": ["left", "right"], "channel_names": ["C3", "C4"],
//!  "trials": [{"file": "t000.csv", "label": "left"}, {"file": "t001.csv", "label": 1}]}
//! ```
//!
//! Labels are class indices or names from `classes`. Each trial file holds one
//! row per channel and one column per sample, without a header.

use std::path::Path;

use serde::Deserialize;

use super::TrialSet;
use crate::error::{csv_err, Error, Result};

#[derive(Deserialize)]
#[serde(untagged)]
enum Label {
    Index(usize),
    Name(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    file: String,
    label: Label,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    #[serde(default = "default_rate")]
    sample_rate_hz: f32,
    #[serde(default)]
    n_classes: Option<usize>,
    #[serde(default)]
    classes: Option<Vec<String>>,
    #[serde(default)]
    channel_names: Option<Vec<String>>,
    trials: Vec<Entry>,
}

fn default_rate() -> f32 {
    250.0
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ManifestFile {
    Full(Manifest),
    List(Vec<Entry>),
}

fn read_trial(path: &Path) -> Result<(usize, Vec<f32>)> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "trial file not found")));
    }
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let mut width = None;
    let mut data = Vec::new();
    let mut rows = 0;
    for rec in r.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let line = rec.position().map_or(rows as u64 + 1, |p| p.line());
        let w = *width.get_or_insert(rec.len());
        if rec.len() != w {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line,
                detail: format!("ragged row: {} fields, expected {w}", rec.len()),
            });
        }
        for (col, field) in rec.iter().enumerate() {
            let v: f32 = field.parse().map_err(|_| Error::Parse {
                file: path.to_path_buf(),
                line,
                detail: format!("column {}: not a number: {field:?}", col + 1),
            })?;
            data.push(v);
        }
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::Parse { file: path.to_path_buf(), line: 1, detail: "empty trial file".into() });
    }
    Ok((rows, data))
}

/// Reads the manifest at `manifest`; trial paths are relative to `dir`.
pub fn import_csv(dir: &Path, manifest: &Path) -> Result<TrialSet> {
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let m = match serde_json::from_str::<ManifestFile>(&text)
        .map_err(|e| Error::Parse { file: manifest.to_path_buf(), line: 0, detail: e.to_string() })?
    {
        ManifestFile::Full(m) => m,
        ManifestFile::List(trials) => Manifest {
            sample_rate_hz: default_rate(),
            n_classes: None,
            classes: None,
            channel_names: None,
            trials,
        },
    };
    let n_classes = match (&m.classes, m.n_classes) {
        (Some(c), Some(n)) if c.len() != n => {
            return Err(Error::Data(format!("manifest lists {} classes but n_classes is {n}", c.len())))
        }
        (Some(c), _) => c.len(),
        (None, Some(n)) => n,
        (None, None) => {
            m.trials.iter().filter_map(|e| if let Label::Index(i) = e.label { Some(i + 1) } else { None }).max().unwrap_or(0)
        }
    };
    let mut labels = Vec::with_capacity(m.trials.len());
    let mut data = Vec::new();
    let mut extents: Option<(usize, usize)> = None;
    for (i, e) in m.trials.iter().enumerate() {
        let label = match &e.label {
            Label::Index(l) if *l < n_classes => *l,
            Label::Index(l) => return Err(Error::Data(format!("trial {i} ({}): label {l} outside [0, {n_classes})", e.file))),
            Label::Name(n) => m
                .classes
                .as_ref()
                .and_then(|c| c.iter().position(|x| x == n))
                .ok_or_else(|| Error::Data(format!("trial {i} ({}): unknown label {n:?}", e.file)))?,
        };
        let path = dir.join(&e.file);
        let (rows, values) = read_trial(&path)?;
        let ext = (rows, values.len() / rows);
        match extents {
            None => extents = Some(ext),
            Some(x) if x != ext => {
                return Err(Error::Data(format!(
                    "{}: {} channels x {} samples, expected {} x {}",
                    path.display(),
                    ext.0,
                    ext.1,
                    x.0,
                    x.1
                )))
            }
            _ => {}
        }
        labels.push(label);
        data.extend(values);
    }
    let (c, s) = extents.ok_or_else(|| Error::Data("manifest lists no trials".into()))?;
    TrialSet::new(c, s, m.sample_rate_hz, n_classes, labels, data, m.channel_names)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) {
        std::fs::write(dir.join(name), body).unwrap();
    }

    #[test]
    fn imports_two_trials() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), "a.csv", "1,2,3,4\n5,6,7,8\n9,10,11,12\n");
        write(d.path(), "b.csv", "0,0,0,0\n1,1,1,1\n2,2,2,2.5\n");
        write(d.path(), "m.json", r#"[{"file":"a.csv","label":1},{"file":"b.csv","label":0}]"#);
        let s = import_csv(d.path(), &d.path().join("m.json")).unwrap();
        assert_eq!((s.n_trials(), s.n_channels, s.n_samples, s.n_classes), (2, 3, 4, 2));
        assert_eq!(s.labels, vec![1, 0]);
        assert_eq!(s.trial(1)[11], 2.5);
    }

    #[test]
    fn ragged_row_reports_location() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), "a.csv", "1,2,3\n4,5\n");
        write(d.path(), "m.json", r#"[{"file":"a.csv","label":0}]"#);
        match import_csv(d.path(), &d.path().join("m.json")) {
            Err(Error::Parse { file, line, .. }) => {
                assert!(file.ends_with("a.csv"));
                assert_eq!(line, 2);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn named_labels_and_errors() {
        let d = tempfile::tempdir().unwrap();
        write(d.path(), "a.csv", "1,2\n");
        let m = r#"{"sample_rate_hz":128,"classes":["l","r"],"trials":[{"file":"a.csv","label":"r"}]}"#;
        write(d.path(), "m.json", m);
        let s = import_csv(d.path(), &d.path().join("m.json")).unwrap();
        assert_eq!((s.labels[0], s.sample_rate_hz), (1, 128.0));
        write(d.path(), "m.json", r#"{"classes":["l"],"trials":[{"file":"a.csv","label":"x"}]}"#);
        assert!(matches!(import_csv(d.path(), &d.path().join("m.json")), Err(Error::Data(_))));
        write(d.path(), "m.json", r#"[{"file":"missing.csv","label":0}]"#);
        assert!(matches!(import_csv(d.path(), &d.path().join("m.json")), Err(Error::Io { .. })));
        write(d.path(), "b.csv", "1,zz\n");
        write(d.path(), "m.json", r#"[{"file":"b.csv","label":0}]"#);
        assert!(matches!(import_csv(d.path(), &d.path().join("m.json")), Err(Error::Parse { line: 1, .. })));
    }
}
