//! Run configuration: model, training and dataset settings behind one flat
//! `key=value` namespace.

use std::fs;
use std::path::Path;

use crate::datasynth::{DatasetConfig, Mode, SynthConfig};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Precision;
use crate::training::TrainConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DatasetConfig,
    pub precision: Precision,
}

impl RunConfig {
    /// Defaults for the synthetic task in `mode`.
    pub fn for_mode(mode: Mode) -> Self {
        match mode {
            Mode::Vector => Self {
                model: ModelConfig::desk(),
                train: TrainConfig::desk(),
                data: DatasetConfig {
                    synth: SynthConfig {
                        noise_level: 1.0,
                        ..SynthConfig::default()
                    },
                    ..DatasetConfig::default()
                },
                precision: Precision::Standard,
            },
            Mode::Image => Self {
                model: ModelConfig {
                    extractor: Some(vec![8, 16]),
                    ..ModelConfig::desk()
                },
                train: TrainConfig::desk_image(),
                data: DatasetConfig {
                    synth: SynthConfig {
                        mode: Mode::Image,
                        image_size: 32,
                        noise_level: 0.5,
                        ..SynthConfig::default()
                    },
                    ..DatasetConfig::default()
                },
                precision: Precision::Standard,
            },
        }
    }

    pub fn mode(&self) -> Mode {
        self.data.synth.mode
    }

    /// Builds a configuration from layered `key=value` settings: mode
    /// defaults first, then `file`, then `overrides`. The mode itself is taken
    /// from the last layer that sets it, else from `fallback`.
    pub fn layered(file: Option<&str>, overrides: &[(String, String)], fallback: Mode) -> Result<Self> {
        let file_kv = match file {
            Some(text) => parse_kv_text(text)?,
            None => Vec::new(),
        };
        let mut mode = fallback;
        for (k, v) in file_kv.iter().chain(overrides) {
            if k == "mode" {
                mode = v.parse()?;
            }
        }
        let mut cfg = Self::for_mode(mode);
        for (k, v) in file_kv.iter().chain(overrides).filter(|(k, _)| k != "mode") {
            cfg.apply_kv(k, v)?;
        }
        cfg.model.validate()?;
        cfg.train.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, String)], fallback: Mode) -> Result<Self> {
        let text = path.map(fs::read_to_string).transpose()?;
        Self::layered(text.as_deref(), overrides, fallback)
    }

    /// Sets one setting. Keys shared between sections update all of them.
    pub fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
        }
        let synth = &mut self.data.synth;
        match key {
            "mode" => {
                let mode: Mode = value.parse()?;
                if mode != synth.mode {
                    return Err(Error::Config(format!("mode `{mode}` conflicts with `{}`", synth.mode)));
                }
            }
            "precision" => self.precision = value.trim().parse()?,
            "seed" => {
                self.train.seed = parse(key, value)?;
                self.data.seed = self.train.seed;
            }
            "frames" | "num_frames" => {
                synth.num_frames = parse(key, value)?;
                self.model.num_frames = synth.num_frames;
            }
            "feature_dim" => {
                synth.feature_dim = parse(key, value)?;
                self.model.feature_dim = synth.feature_dim;
            }
            "batch" => self.train.batch_size = parse(key, value)?,
            "signal_dims" => synth.signal_dims = parse(key, value)?,
            "image_size" => synth.image_size = parse(key, value)?,
            "noise_level" => synth.noise_level = parse(key, value)?,
            "train_per_class" => self.data.train_per_class = parse(key, value)?,
            "test_per_class" => self.data.test_per_class = parse(key, value)?,
            "table_seed" => self.data.table_seed = parse(key, value)?,
            _ => {
                if !self.model.apply_kv(key, value)? && !self.train.apply_kv(key, value)? {
                    return Err(Error::Config(format!("unknown setting `{key}`")));
                }
            }
        }
        Ok(())
    }

    /// Every setting, in a form [`RunConfig::layered`] reads back.
    pub fn to_text(&self) -> String {
        let s = &self.data.synth;
        let mut lines = vec![
            format!("mode={}", s.mode),
            format!("precision={}", self.precision),
            format!("signal_dims={}", s.signal_dims),
            format!("image_size={}", s.image_size),
            format!("noise_level={:?}", s.noise_level),
            format!("train_per_class={}", self.data.train_per_class),
            format!("test_per_class={}", self.data.test_per_class),
            format!("table_seed={}", self.data.table_seed),
        ];
        for (k, v) in self.model.to_kv().into_iter().chain(self.train.to_kv()) {
            lines.push(format!("{k}={v}"));
        }
        lines.join("\n") + "\n"
    }
}

/// `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv_text(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got `{line}`", n + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

/// Default locations of run artifacts.
pub mod paths {
    pub const DATA_DIR: &str = "data";
    pub const RUN_DIR: &str = "run";
    pub const VIZ_DIR: &str = "viz";
    pub const CHECKPOINT: &str = "checkpoint.astc";
    pub const METRICS: &str = "metrics.txt";
    pub const CLASS_TABLE: &str = "class_table.txt";
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_apply_in_order() {
        let file = "# comment\nseed = 4\nepochs1=3 # trailing\nbatch_size=2\n\n";
        let flags = vec![("seed".to_string(), "9".to_string()), ("batch".to_string(), "5".to_string())];
        let cfg = RunConfig::layered(Some(file), &flags, Mode::Vector).unwrap();
        assert_eq!(cfg.train.seed, 9);
        assert_eq!(cfg.data.seed, 9);
        assert_eq!(cfg.train.epochs1, 3);
        assert_eq!(cfg.train.batch_size, 5);
        assert_eq!(cfg.train.epochs2, TrainConfig::desk().epochs2);
    }

    #[test]
    fn mode_picks_the_preset() {
        let cfg = RunConfig::layered(Some("mode=image\n"), &[], Mode::Vector).unwrap();
        assert_eq!(cfg.mode(), Mode::Image);
        assert!(cfg.model.extractor.is_some());
        let cfg = RunConfig::layered(Some("mode=image\n"), &[("mode".into(), "vector".into())], Mode::Image).unwrap();
        assert_eq!(cfg.mode(), Mode::Vector);
        assert_eq!(cfg.model.extractor, None);
        assert_eq!(RunConfig::layered(None, &[], Mode::Image).unwrap().mode(), Mode::Image);
    }

    #[test]
    fn shared_keys_update_every_section() {
        let cfg = RunConfig::layered(Some("frames=12\nfeature_dim=10\n"), &[], Mode::Vector).unwrap();
        assert_eq!((cfg.model.num_frames, cfg.data.synth.num_frames), (12, 12));
        assert_eq!((cfg.model.feature_dim, cfg.data.synth.feature_dim), (10, 10));
    }

    #[test]
    fn bad_input_is_a_config_error() {
        for text in ["nonsense", "wat=1", "seed=-1", "mode=audio", "batch_size=0"] {
            let err = RunConfig::layered(Some(text), &[], Mode::Vector).unwrap_err();
            assert!(matches!(err, Error::Config(_)), "{text}: {err}");
        }
    }

    #[test]
    fn text_roundtrip() {
        for mode in [Mode::Vector, Mode::Image] {
            let mut cfg = RunConfig::for_mode(mode);
            cfg.train.seed = 77;
            cfg.data.seed = 77;
            cfg.model.attention_enabled = false;
            let back = RunConfig::layered(Some(&cfg.to_text()), &[("seed".into(), "77".into())], Mode::Vector).unwrap();
            assert_eq!(back, cfg);
        }
    }
}
