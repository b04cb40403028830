//! Run configuration: one JSON file plus `--key value` overrides.
//!
//! Keys may be dotted to reach nested fields (`--train.lr 3e-4`,
//! `--synth.n_classes 4`); dashes in keys are read as underscores. A value
//! that parses as JSON is used as such, anything else is taken as a string,
//! so `--out_dir runs/a` and `--seeds [1,2,3]` both work.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{FilterSpec, SynthSpec};
use crate::error::{Error, Result};
use crate::model::Variant;
use crate::scalar::Precision;
use crate::train::TrainConfig;

/// Either a count of consecutive seeds starting at `train.seed`, or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    Count(usize),
    List(Vec<u64>),
}

impl Default for SeedSpec {
    fn default() -> Self {
        SeedSpec::Count(10)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub train_file: Option<PathBuf>,
    pub test_file: Option<PathBuf>,
    /// Input of `export`; falls back to `test_file`.
    pub data_file: Option<PathBuf>,
    /// Input of `export` and `eval`; defaults to `<out_dir>/checkpoint.sfnc`.
    pub checkpoint: Option<PathBuf>,
    pub out_dir: PathBuf,
    pub synth: SynthSpec,
    pub train: TrainConfig,
    /// Bandpass applied to every loaded set before use.
    pub filter: Option<FilterSpec>,
    pub zero_phase: bool,
    pub seeds: SeedSpec,
    /// Variants run by `ablate`; the first is the reference for the tests.
    pub variants: Vec<Variant>,
    pub precision: Precision,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            train_file: None,
            test_file: None,
            data_file: None,
            checkpoint: None,
            out_dir: PathBuf::from("out"),
            synth: SynthSpec::default(),
            train: TrainConfig::default(),
            filter: None,
            zero_phase: true,
            seeds: SeedSpec::default(),
            variants: Variant::ALL.to_vec(),
            precision: Precision::Single,
        }
    }
}

fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

fn set_path(root: &mut Value, key: &str, value: Value) -> Result<()> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for (i, part) in parts.iter().enumerate() {
        let obj = match cur {
            Value::Object(m) => m,
            _ => return Err(Error::Config(format!("--{key}: {} is not an object", parts[..i].join(".")))),
        };
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        let next = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
        if next.is_null() {
            *next = Value::Object(Map::new());
        }
        cur = next;
    }
    unreachable!("split yields at least one part")
}

/// Splits `--key value` / `--key=value` arguments into pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let body = a
            .strip_prefix("--")
            .ok_or_else(|| Error::Config(format!("expected --key value, found {a:?}")))?;
        let (key, val) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it.next().ok_or_else(|| Error::Config(format!("--{body} needs a value")))?;
                (body.to_string(), v.clone())
            }
        };
        if key.is_empty() {
            return Err(Error::Config(format!("empty key in {a:?}")));
        }
        out.push((key.replace('-', "_"), val));
    }
    Ok(out)
}

impl RunConfig {
    /// Builds the config from an optional JSON file and overrides. Flags win over the file.
    pub fn load(file: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut root = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str::<Value>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Object(Map::new()),
        };
        for (k, v) in overrides {
            set_path(&mut root, k, parse_value(v))?;
        }
        serde_json::from_value(root).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn seed_list(&self) -> Vec<u64> {
        match &self.seeds {
            SeedSpec::Count(n) => crate::train::default_seeds(&self.train, *n),
            SeedSpec::List(v) => v.clone(),
        }
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint.clone().unwrap_or_else(|| self.out_dir.join("checkpoint.sfnc"))
    }

    /// Checks that do not need the data: missing files, training
    /// hyperparameters, seeds, variants.
    pub fn problems(&self, needs: &[(&str, &Option<PathBuf>)]) -> Vec<String> {
        let mut p = Vec::new();
        for (name, path) in needs {
            match path {
                None => p.push(format!("{name} is required")),
                Some(f) if !f.is_file() => p.push(format!("{name} {} does not exist", f.display())),
                _ => {}
            }
        }
        p.extend(self.train.problems());
        if self.seed_list().is_empty() {
            p.push("at least one seed is required".into());
        }
        if let Some(f) = &self.filter {
            if f.order == 0 || !(f.low_hz > 0.0 && f.low_hz < f.high_hz) {
                p.push(format!("filter band {}-{} Hz of order {} is invalid", f.low_hz, f.high_hz, f.order));
            }
        }
        p
    }
}

pub(crate) fn fail_on(problems: Vec<String>) -> Result<()> {
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(problems.join("; ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn args(s: &[&str]) -> Vec<String> {
        s.iter().map(|a| a.to_string()).collect()
    }

    #[test]
    fn overrides_win_over_file() {
        let d = tempfile::tempdir().unwrap();
        let f = d.path().join("c.json");
        std::fs::write(&f, r#"{"seeds": 3, "train": {"lr": 0.01, "patience": 7}, "out_dir": "a"}"#).unwrap();
        let o = parse_overrides(&args(&["--train.lr", "0.5", "--out-dir=b", "--seeds", "[4,9]"])).unwrap();
        let c = RunConfig::load(Some(&f), &o).unwrap();
        assert_eq!((c.train.lr, c.train.patience), (0.5, 7));
        assert_eq!(c.out_dir, PathBuf::from("b"));
        assert_eq!(c.seed_list(), vec![4, 9]);
    }

    #[test]
    fn seed_count_starts_at_train_seed() {
        let o = parse_overrides(&args(&["--seeds", "3", "--train.seed", "10"])).unwrap();
        assert_eq!(RunConfig::load(None, &o).unwrap().seed_list(), vec![10, 11, 12]);
        assert_eq!(RunConfig::default().seed_list().len(), 10);
    }

    #[test]
    fn bad_input_is_a_config_error() {
        assert!(matches!(parse_overrides(&args(&["lr", "1"])), Err(Error::Config(_))));
        assert!(matches!(parse_overrides(&args(&["--lr"])), Err(Error::Config(_))));
        let o = parse_overrides(&args(&["--train.lrr", "1"])).unwrap();
        assert!(matches!(RunConfig::load(None, &o), Err(Error::Config(m)) if m.contains("lrr")));
        let o = parse_overrides(&args(&["--variants", "[\"full\", \"nope\"]"])).unwrap();
        assert!(matches!(RunConfig::load(None, &o), Err(Error::Config(_))));
    }

    #[test]
    fn problems_are_collected() {
        let mut c = RunConfig::default();
        c.train.patience = 0;
        c.train.batch_size = 1;
        let p = c.problems(&[("train_file", &None)]);
        assert_eq!(p.len(), 3, "{p:?}");
    }
}
