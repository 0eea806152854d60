//! `key = value` run configuration. Blank lines and `#` comments are ignored;
//! unknown keys are errors.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use relpose_core::data::Convention;
use relpose_core::extractor::ExtractorConfig;
use relpose_core::regressor::RegressorConfig;
use relpose_core::train::TrainConfig;
use relpose_core::{Error, ModelConfig, Result, Variant};

/// Every accepted key, in documentation order.
pub const KEYS: &[&str] = &[
    "pairs",
    "out_dir",
    "convention",
    "swap",
    "split",
    "split_seed",
    "variant",
    "image_channels",
    "channels",
    "attn_layers",
    "heads",
    "pyramid_widths",
    "ffn_mult",
    "block_channels",
    "hidden",
    "temperature",
    "epochs",
    "lr",
    "batch_size",
    "step_size",
    "gamma",
    "seed",
    "resume",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub pairs: PathBuf,
    pub out_dir: PathBuf,
    pub convention: Convention,
    pub swap: bool,
    pub split: [f64; 3],
    pub split_seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub resume: Option<PathBuf>,
}

fn config_err(key: &str, msg: impl Into<String>) -> Error {
    Error::Config {
        key: key.into(),
        msg: msg.into(),
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| config_err(key, format!("cannot parse `{value}`")))
}

fn parse_list<T: FromStr, const N: usize>(key: &str, value: &str) -> Result<[T; N]> {
    let items: Vec<T> = value
        .split(',')
        .map(|v| parse(key, v.trim()))
        .collect::<Result<_>>()?;
    let found = items.len();
    items
        .try_into()
        .map_err(|_| config_err(key, format!("expected {N} comma-separated values, found {found}")))
}

impl RunConfig {
    /// Parses config text; relative paths resolve against `base_dir`.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut pairs = None;
        let mut out_dir = None;
        let mut cfg = RunConfig {
            pairs: PathBuf::new(),
            out_dir: PathBuf::new(),
            convention: Convention::Rectified,
            swap: false,
            split: [0.8, 0.1, 0.1],
            split_seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            resume: None,
        };
        let (ex, reg) = (&mut cfg.model.extractor, &mut cfg.model.regressor);
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::ParseError {
                line: idx + 1,
                msg: format!("expected `key = value`, found `{line}`"),
            })?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "pairs" => pairs = Some(base_dir.join(value)),
                "out_dir" => out_dir = Some(base_dir.join(value)),
                "convention" => {
                    cfg.convention = match value {
                        "rectified" => Convention::Rectified,
                        "erroneous" => Convention::Erroneous,
                        _ => return Err(config_err(key, format!("unknown convention `{value}`"))),
                    }
                }
                "swap" => cfg.swap = parse(key, value)?,
                "split" => cfg.split = parse_list(key, value)?,
                "split_seed" => cfg.split_seed = parse(key, value)?,
                "variant" => cfg.model.variant = value.parse()?,
                "image_channels" => ex.image_channels = parse(key, value)?,
                "channels" => ex.channels = parse(key, value)?,
                "attn_layers" => ex.attn_layers = parse(key, value)?,
                "heads" => ex.heads = parse(key, value)?,
                "pyramid_widths" => ex.pyramid_widths = parse_list(key, value)?,
                "ffn_mult" => ex.ffn_mult = parse(key, value)?,
                "block_channels" => {
                    let v: usize = parse(key, value)?;
                    reg.block_channels = (v > 0).then_some(v);
                }
                "hidden" => reg.hidden = parse(key, value)?,
                "temperature" => cfg.model.temperature = parse(key, value)?,
                "epochs" => cfg.train.epochs = parse(key, value)?,
                "lr" => cfg.train.lr = parse(key, value)?,
                "batch_size" => cfg.train.batch_size = parse(key, value)?,
                "step_size" => cfg.train.step_size = parse(key, value)?,
                "gamma" => cfg.train.gamma = parse(key, value)?,
                "seed" => cfg.train.seed = parse(key, value)?,
                "resume" => cfg.resume = Some(base_dir.join(value)),
                _ => return Err(config_err(key, "unknown key")),
            }
        }
        cfg.pairs = pairs.ok_or_else(|| config_err("pairs", "missing required key"))?;
        cfg.out_dir = out_dir.ok_or_else(|| config_err("out_dir", "missing required key"))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn validate(&self) -> Result<()> {
        if !self.pairs.is_file() {
            return Err(config_err("pairs", format!("{} does not exist", self.pairs.display())));
        }
        if let Some(r) = &self.resume {
            if !r.is_file() {
                return Err(config_err("resume", format!("{} does not exist", r.display())));
            }
        }
        ExtractorConfig::validate(&self.model.extractor)?;
        let RegressorConfig { hidden, .. } = self.model.regressor;
        if hidden == 0 {
            return Err(config_err("hidden", "must be positive"));
        }
        if !(self.train.lr > 0.0) || self.train.batch_size == 0 || self.train.step_size == 0 {
            return Err(config_err("lr", "lr, batch_size and step_size must be positive"));
        }
        if !(self.model.temperature > 0.0) {
            return Err(config_err("temperature", "must be positive"));
        }
        Ok(())
    }

    /// The config with a different ablation variant.
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.model.variant = variant;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dir_with_pairs() -> tempfile::TempDir {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("pairs.txt"), "").unwrap();
        dir
    }

    #[test]
    fn parses_known_keys() {
        let dir = dir_with_pairs();
        let text = "# run\npairs = pairs.txt\nout_dir = out\nchannels = 32 # width\nheads=4\npyramid_widths = 8, 16\nblock_channels = 0\nvariant = no_warp\nsplit = 0.5,0.25,0.25\n";
        let cfg = RunConfig::parse(text, dir.path()).unwrap();
        assert_eq!(cfg.model.extractor.channels, 32);
        assert_eq!(cfg.model.extractor.pyramid_widths, [8, 16]);
        assert_eq!(cfg.model.regressor.block_channels, None);
        assert_eq!(cfg.model.variant, Variant::NoWarp);
        assert_eq!(cfg.split, [0.5, 0.25, 0.25]);
        assert_eq!(cfg.out_dir, dir.path().join("out"));
    }

    #[test]
    fn errors_name_the_key() {
        let dir = dir_with_pairs();
        let key_of = |text: &str| match RunConfig::parse(text, dir.path()) {
            Err(Error::Config { key, .. }) => key,
            other => panic!("{other:?}"),
        };
        assert_eq!(key_of("pairs = pairs.txt\nout_dir = o\nvariant = warp\n"), "variant");
        assert_eq!(key_of("pairs = pairs.txt\nout_dir = o\nchanels = 3\n"), "chanels");
        assert_eq!(key_of("pairs = missing.txt\nout_dir = o\n"), "pairs");
        assert_eq!(key_of("out_dir = o\n"), "pairs");
        assert_eq!(key_of("pairs = pairs.txt\nout_dir = o\nsplit = 1,0\n"), "split");
    }
}
