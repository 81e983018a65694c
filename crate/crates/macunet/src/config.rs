//! `key = value` run configuration files.

use std::fmt::Write;
use std::str::FromStr;

use macunet_core::train::TrainConfig;
use macunet_core::{NetworkConfig, Variant};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Precision {
    F32,
    F64,
}

impl FromStr for Precision {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" => Ok(Precision::F32),
            "f64" => Ok(Precision::F64),
            _ => Err(format!("precision must be f32 or f64, got `{s}`")),
        }
    }
}

impl Precision {
    fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: Variant,
    pub levels: usize,
    pub base_width: usize,
    pub classes: usize,
    pub lr: f64,
    pub lr_min: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub precision: Precision,
    pub cab_ratio: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let net = NetworkConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            model: net.variant,
            levels: net.levels,
            base_width: net.base_width,
            classes: net.classes,
            lr: train.lr,
            lr_min: train.lr_min,
            epochs: train.epochs,
            batch_size: train.batch_size,
            seed: train.seed,
            precision: Precision::F32,
            cab_ratio: net.cab_ratio,
        }
    }
}

fn value<T: FromStr>(line: usize, key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse().map_err(|e| Error::Config { line, msg: format!("bad value `{v}` for `{key}`: {e}") })
}

impl RunConfig {
    /// Parses a config, starting from the defaults. Unknown keys and repeated keys are errors.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let (key, v) = content
                .split_once('=')
                .ok_or_else(|| Error::Config { line, msg: format!("expected `key = value`, got `{content}`") })?;
            let (key, v) = (key.trim(), v.trim());
            if seen.contains(&key) {
                return Err(Error::Config { line, msg: format!("`{key}` is set twice") });
            }
            match key {
                "model" => cfg.model = value(line, key, v)?,
                "levels" => cfg.levels = value(line, key, v)?,
                "base_width" => cfg.base_width = value(line, key, v)?,
                "classes" => cfg.classes = value(line, key, v)?,
                "lr" => cfg.lr = value(line, key, v)?,
                "lr_min" => cfg.lr_min = value(line, key, v)?,
                "epochs" => cfg.epochs = value(line, key, v)?,
                "batch_size" => cfg.batch_size = value(line, key, v)?,
                "seed" => cfg.seed = value(line, key, v)?,
                "precision" => cfg.precision = value(line, key, v)?,
                "cab_ratio" => cfg.cab_ratio = value(line, key, v)?,
                _ => return Err(Error::Config { line, msg: format!("unknown key `{key}`") }),
            }
            seen.push(key);
        }
        cfg.network().validate()?;
        if cfg.batch_size == 0 {
            return Err(Error::Config { line: 0, msg: "batch_size must be positive".into() });
        }
        if !(cfg.lr.is_finite() && cfg.lr_min.is_finite() && cfg.lr > 0.0 && cfg.lr_min >= 0.0) {
            return Err(Error::Config { line: 0, msg: "lr must be positive and lr_min non-negative".into() });
        }
        Ok(cfg)
    }

    pub fn network(&self) -> NetworkConfig {
        NetworkConfig::new(self.model, self.levels, self.base_width, self.classes).with_ratio(self.cab_ratio)
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            lr_min: self.lr_min,
            seed: self.seed,
            ..TrainConfig::default()
        }
    }

    /// The effective configuration, every key, in a form [`RunConfig::parse`] accepts.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "model = {}", self.model);
        let _ = writeln!(s, "levels = {}", self.levels);
        let _ = writeln!(s, "base_width = {}", self.base_width);
        let _ = writeln!(s, "classes = {}", self.classes);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "lr_min = {}", self.lr_min);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "precision = {}", self.precision.name());
        let _ = writeln!(s, "cab_ratio = {}", self.cab_ratio);
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = RunConfig::parse("# nothing\n\n").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.lr, 0.0003);
        assert_eq!((cfg.epochs, cfg.batch_size), (50, 8));
    }

    #[test]
    fn echo_roundtrips() {
        let cfg = RunConfig::parse("model = unet_h  # ablation\nlevels=4\nprecision = f64\nseed = 9\n").unwrap();
        assert_eq!(cfg.model, Variant::UnetH);
        assert_eq!(RunConfig::parse(&cfg.echo()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_lines() {
        for text in
            ["colour = red", "levels = many", "levels", "levels = 3\nlevels = 4", "model = unet++", "levels = 1"]
        {
            assert!(RunConfig::parse(text).is_err(), "{text}");
        }
        let err = RunConfig::parse("seed = 1\nfoo = 2").unwrap_err();
        assert_eq!(err.to_string(), "config line 2: unknown key `foo`");
    }
}
