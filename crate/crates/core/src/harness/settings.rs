//! Layered run configuration: defaults, then a flat `key = value` config
//! file, then `PILF_*` environment variables, then command-line flags.

use std::collections::HashMap;
use std::path::PathBuf;

use thiserror::Error;

use crate::data::{DataFormat, SplitSpec};
use crate::model::{Hyperparams, IntegralAggregation};
use crate::optim::OptimizerKind;

use super::{ExperimentConfig, SweepConfig};

/// Every key a config file, environment variable, or flag may set. Keys use
/// the flag spelling; the environment variant is `PILF_` plus the key
/// uppercased with `-` replaced by `_`.
pub const KNOWN_KEYS: &[&str] = &[
    "data",
    "format",
    "optimizer",
    "rank",
    "lr",
    "lambda",
    "kp",
    "ki",
    "epochs",
    "seed",
    "split",
    "out",
    "checkpoint",
    "sweep-kp",
    "sweep-ki",
    "aggregation",
    "clamp",
    "threshold",
    "patience",
    "workers",
    "init-scale",
    "shuffle",
];

#[derive(Debug, Error)]
pub enum SettingsError {
    #[error("unknown setting '{key}' (from {origin})")]
    UnknownKey { key: String, origin: String },
    #[error("bad value for '{key}' (from {origin}): {reason}")]
    BadValue {
        key: String,
        origin: String,
        reason: String,
    },
    #[error("missing required setting '{key}'")]
    Missing { key: String },
    #[error("config file line {line}: expected 'key = value', got '{text}'")]
    BadConfigLine { line: usize, text: String },
}

/// Fully resolved run settings.
#[derive(Debug, Clone)]
pub struct Settings {
    pub data: PathBuf,
    pub format: DataFormat,
    pub optimizer: OptimizerKind,
    pub split: SplitSpec,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub hp: Hyperparams,
    pub sweep_kp: Option<Vec<f64>>,
    pub sweep_ki: Option<Vec<f64>>,
    pub workers: Option<usize>,
}

impl Settings {
    pub fn experiment_config(&self) -> ExperimentConfig {
        ExperimentConfig {
            data_path: self.data.clone(),
            data_format: self.format,
            split: self.split,
            optimizer: self.optimizer,
            hp: self.hp.clone(),
            output_path: self.out.clone(),
            checkpoint_path: self.checkpoint.clone(),
        }
    }

    /// Sweep mode is active when either gain list was given; a missing list
    /// defaults to the single scalar gain, keeping the grid well-formed.
    pub fn sweep_config(&self) -> Option<SweepConfig> {
        if self.sweep_kp.is_none() && self.sweep_ki.is_none() {
            return None;
        }
        Some(SweepConfig {
            base: self.experiment_config(),
            kp_values: self.sweep_kp.clone().unwrap_or_else(|| vec![self.hp.kp]),
            ki_values: self.sweep_ki.clone().unwrap_or_else(|| vec![self.hp.ki]),
            workers: self.workers,
        })
    }
}

/// Accumulates raw `key = value` pairs from layered sources; later
/// applications of a key override earlier ones.
#[derive(Debug, Default)]
pub struct SettingsBuilder {
    values: HashMap<&'static str, (String, String)>,
}

impl SettingsBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn apply(&mut self, key: &str, value: &str, source: &str) -> Result<(), SettingsError> {
        let Some(&known) = KNOWN_KEYS.iter().find(|&&k| k == key) else {
            return Err(SettingsError::UnknownKey {
                key: key.to_string(),
                origin: source.to_string(),
            });
        };
        self.values
            .insert(known, (value.to_string(), source.to_string()));
        Ok(())
    }

    pub fn apply_pairs<'a>(
        &mut self,
        pairs: impl IntoIterator<Item = (&'a str, String)>,
        source: &str,
    ) -> Result<(), SettingsError> {
        for (key, value) in pairs {
            self.apply(key, &value, source)?;
        }
        Ok(())
    }

    /// Pulls `PILF_*` overrides for every known key.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), SettingsError> {
        for &key in KNOWN_KEYS {
            let var = format!("PILF_{}", key.to_uppercase().replace('-', "_"));
            if let Some(value) = lookup(&var) {
                self.apply(key, &value, &format!("env {var}"))?;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<Settings, SettingsError> {
        let get = |key: &str| self.values.get(key);
        let bad = |key: &str, reason: String| {
            let origin = get(key).map(|(_, s)| s.clone()).unwrap_or_default();
            SettingsError::BadValue {
                key: key.to_string(),
                origin,
                reason,
            }
        };

        fn parse_with<T, E: std::fmt::Display>(
            entry: Option<&(String, String)>,
            default: T,
            parse: impl Fn(&str) -> Result<T, E>,
        ) -> Result<T, String> {
            match entry {
                None => Ok(default),
                Some((raw, _)) => parse(raw).map_err(|e| e.to_string()),
            }
        }

        let mut hp = Hyperparams::default();
        hp.rank = parse_with(get("rank"), hp.rank, str::parse::<usize>)
            .map_err(|e| bad("rank", e))?;
        hp.eta = parse_with(get("lr"), hp.eta, str::parse::<f64>).map_err(|e| bad("lr", e))?;
        hp.lambda =
            parse_with(get("lambda"), hp.lambda, str::parse::<f64>).map_err(|e| bad("lambda", e))?;
        hp.kp = parse_with(get("kp"), hp.kp, str::parse::<f64>).map_err(|e| bad("kp", e))?;
        hp.ki = parse_with(get("ki"), hp.ki, str::parse::<f64>).map_err(|e| bad("ki", e))?;
        hp.max_epochs = parse_with(get("epochs"), hp.max_epochs, str::parse::<usize>)
            .map_err(|e| bad("epochs", e))?;
        hp.seed = parse_with(get("seed"), hp.seed, str::parse::<u64>).map_err(|e| bad("seed", e))?;
        hp.conv_threshold = parse_with(get("threshold"), hp.conv_threshold, str::parse::<f64>)
            .map_err(|e| bad("threshold", e))?;
        hp.conv_patience = parse_with(get("patience"), hp.conv_patience, str::parse::<usize>)
            .map_err(|e| bad("patience", e))?;
        hp.init_scale = parse_with(get("init-scale"), hp.init_scale, str::parse::<f64>)
            .map_err(|e| bad("init-scale", e))?;
        hp.shuffle_per_epoch = parse_with(get("shuffle"), hp.shuffle_per_epoch, parse_bool)
            .map_err(|e| bad("shuffle", e))?;
        hp.integral_aggregation = parse_with(
            get("aggregation"),
            IntegralAggregation::default(),
            str::parse::<IntegralAggregation>,
        )
        .map_err(|e| bad("aggregation", e))?;
        hp.integral_clamp = match get("clamp") {
            None => None,
            Some((raw, _)) => Some(
                raw.parse::<f64>()
                    .map_err(|e| bad("clamp", e.to_string()))?,
            ),
        };

        let format = parse_with(get("format"), DataFormat::Csv, str::parse::<DataFormat>)
            .map_err(|e| bad("format", e))?;
        let optimizer = parse_with(get("optimizer"), OptimizerKind::Pilf, str::parse::<OptimizerKind>)
            .map_err(|e| bad("optimizer", e))?;
        let split = match get("split") {
            None => SplitSpec::new(0.8, 0.1, 0.1, hp.seed).expect("default split is valid"),
            Some((raw, _)) => SplitSpec::parse_fractions(raw, hp.seed)
                .map_err(|e| bad("split", e.to_string()))?,
        };

        let parse_list = |key: &str| -> Result<Option<Vec<f64>>, SettingsError> {
            match get(key) {
                None => Ok(None),
                Some((raw, _)) => {
                    let values: Result<Vec<f64>, _> =
                        raw.split(',').map(|s| s.trim().parse::<f64>()).collect();
                    let values = values.map_err(|e| bad(key, e.to_string()))?;
                    if values.is_empty() {
                        return Err(bad(key, "empty list".into()));
                    }
                    Ok(Some(values))
                }
            }
        };
        let sweep_kp = parse_list("sweep-kp")?;
        let sweep_ki = parse_list("sweep-ki")?;

        let workers = match get("workers") {
            None => None,
            Some((raw, _)) => Some(
                raw.parse::<usize>()
                    .map_err(|e| bad("workers", e.to_string()))?,
            ),
        };

        let data = get("data")
            .map(|(raw, _)| PathBuf::from(raw))
            .ok_or(SettingsError::Missing { key: "data".into() })?;
        let out = get("out")
            .map(|(raw, _)| PathBuf::from(raw))
            .ok_or(SettingsError::Missing { key: "out".into() })?;
        let checkpoint = get("checkpoint").map(|(raw, _)| PathBuf::from(raw));

        Ok(Settings {
            data,
            format,
            optimizer,
            split,
            out,
            checkpoint,
            hp,
            sweep_kp,
            sweep_ki,
            workers,
        })
    }
}

fn parse_bool(s: &str) -> Result<bool, String> {
    match s {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("expected true/false, got '{other}'")),
    }
}

/// Parses flat `key = value` config text. `#` starts a comment line.
pub fn parse_config_file(text: &str) -> Result<Vec<(String, String)>, SettingsError> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(SettingsError::BadConfigLine {
                line: idx + 1,
                text: raw.to_string(),
            });
        };
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_pairs() -> Vec<(&'static str, String)> {
        vec![("data", "r.csv".into()), ("out", "m.csv".into())]
    }

    #[test]
    fn defaults_fill_unset_keys() {
        let mut b = SettingsBuilder::new();
        b.apply_pairs(base_pairs(), "test").unwrap();
        let s = b.finish().unwrap();
        assert_eq!(s.hp.rank, 20);
        assert_eq!(s.hp.eta, 0.01);
        assert_eq!(s.hp.lambda, 0.03);
        assert_eq!(s.hp.max_epochs, 1000);
        assert_eq!(s.optimizer, OptimizerKind::Pilf);
        assert_eq!(s.format, DataFormat::Csv);
        assert_eq!(s.split.train_fraction, 0.8);
        assert!(s.sweep_config().is_none());
    }

    #[test]
    fn later_sources_override_earlier_ones() {
        let mut b = SettingsBuilder::new();
        let file = parse_config_file("rank = 8\nlr = 0.5\ndata = file.csv\nout = out.csv").unwrap();
        b.apply_pairs(
            file.iter().map(|(k, v)| (k.as_str(), v.clone())),
            "config file",
        )
        .unwrap();
        b.apply_env(|var| (var == "PILF_RANK").then(|| "16".to_string()))
            .unwrap();
        b.apply("rank", "32", "command line").unwrap();
        let s = b.finish().unwrap();
        assert_eq!(s.hp.rank, 32);
        assert_eq!(s.hp.eta, 0.5);
    }

    #[test]
    fn env_var_names_follow_the_prefix_convention() {
        let mut b = SettingsBuilder::new();
        b.apply_pairs(base_pairs(), "test").unwrap();
        b.apply_env(|var| match var {
            "PILF_SWEEP_KP" => Some("0.5, 1.0".to_string()),
            "PILF_INIT_SCALE" => Some("0.01".to_string()),
            _ => None,
        })
        .unwrap();
        let s = b.finish().unwrap();
        assert_eq!(s.sweep_kp, Some(vec![0.5, 1.0]));
        assert_eq!(s.hp.init_scale, 0.01);
        let sweep = s.sweep_config().unwrap();
        assert_eq!(sweep.ki_values, vec![0.0]); // falls back to scalar ki
    }

    #[test]
    fn unknown_keys_are_rejected_with_source() {
        let mut b = SettingsBuilder::new();
        let err = b.apply("learning-rate", "0.1", "config file").unwrap_err();
        assert!(err.to_string().contains("learning-rate"));
        assert!(err.to_string().contains("config file"));
    }

    #[test]
    fn bad_values_cite_key_and_source() {
        let mut b = SettingsBuilder::new();
        b.apply_pairs(base_pairs(), "test").unwrap();
        b.apply("rank", "many", "env PILF_RANK").unwrap();
        let err = b.finish().unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("rank") && msg.contains("PILF_RANK"), "{msg}");
    }

    #[test]
    fn missing_required_keys_are_reported() {
        let b = SettingsBuilder::new();
        assert!(matches!(b.finish(), Err(SettingsError::Missing { .. })));
    }

    #[test]
    fn config_file_syntax() {
        let pairs = parse_config_file("# comment\n\nrank = 4\nsplit = 0.7,0.2,0.1\n").unwrap();
        assert_eq!(pairs.len(), 2);
        assert_eq!(pairs[0], ("rank".to_string(), "4".to_string()));
        assert!(parse_config_file("no equals sign").is_err());
    }

    #[test]
    fn clamp_and_aggregation_round_trip() {
        let mut b = SettingsBuilder::new();
        b.apply_pairs(base_pairs(), "test").unwrap();
        b.apply("clamp", "2.5", "test").unwrap();
        b.apply("aggregation", "sum", "test").unwrap();
        let s = b.finish().unwrap();
        assert_eq!(s.hp.integral_clamp, Some(2.5));
        assert_eq!(s.hp.integral_aggregation, IntegralAggregation::Sum);
    }
}
