//! Plain `key = value` training configuration files.
//!
//! Blank lines and lines starting with `#` are ignored. Keys:
//! `epochs`, `batch`, `seed`, `ctx`, `latent`, `embed`, `hidden`, `sign`.

use std::path::Path;

use crate::error::{BanError, Result};
use crate::trainer::TrainConfig;

/// Applies every assignment in `text` on top of `config`.
pub fn apply(text: &str, config: &mut TrainConfig) -> Result<()> {
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| BanError::InvalidConfig(format!("line {}: expected key=value", n + 1)))?;
        set(config, key.trim(), value.trim()).map_err(|e| match e {
            BanError::InvalidConfig(msg) => BanError::InvalidConfig(format!("line {}: {msg}", n + 1)),
            other => other,
        })?;
    }
    Ok(())
}

pub fn load(path: impl AsRef<Path>, config: &mut TrainConfig) -> Result<()> {
    apply(&std::fs::read_to_string(path)?, config)
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| BanError::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

pub fn set(config: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "epochs" => config.epochs = number(key, value)?,
        "batch" => config.batch = number(key, value)?,
        "seed" => config.seed = number(key, value)?,
        "ctx" => config.arch.context_len = number(key, value)?,
        "latent" => config.arch.latent_dim = number(key, value)?,
        "embed" => config.arch.embed_dim = number(key, value)?,
        "hidden" => config.arch.hidden = number(key, value)?,
        "sign" => config.attention_sign = value.parse()?,
        other => return Err(BanError::InvalidConfig(format!("unknown key {other:?}"))),
    }
    Ok(())
}
