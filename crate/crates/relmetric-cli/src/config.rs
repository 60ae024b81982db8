//! Configuration layering: built-in defaults, then the TOML file, then
//! command-line flags. The effective configuration is echoed next to every
//! run's outputs so the run can be reproduced from it.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use relmetric::train::TrainConfig;
use relmetric::{Error, Result};

use crate::ConfigArgs;

/// File-level view of the configuration: every key optional.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigPatch {
    learning_rate: Option<f64>,
    dropout: Option<f64>,
    epochs: Option<usize>,
    channels: Option<usize>,
    layers: Option<usize>,
    char_emb_size: Option<usize>,
    char_repr_size: Option<usize>,
    pos_emb_size: Option<usize>,
    dep_emb_size: Option<usize>,
    word_emb_size: Option<usize>,
    context_size: Option<usize>,
    batch_size: Option<usize>,
    seed: Option<u64>,
    conv_window: Option<usize>,
    char_window: Option<usize>,
    word_grad_scale: Option<f64>,
    batch_norm: Option<bool>,
    bn_momentum: Option<f64>,
    rmsprop_decay: Option<f64>,
    rmsprop_eps: Option<f64>,
    lr_half_life: Option<f64>,
    embeddings: Option<PathBuf>,
}

macro_rules! apply {
    ($cfg:ident, $patch:ident, $($field:ident),+ $(,)?) => {
        $(if let Some(v) = $patch.$field { $cfg.$field = v; })+
    };
}

fn apply_patch(cfg: &mut TrainConfig, patch: ConfigPatch) {
    apply!(
        cfg,
        patch,
        learning_rate,
        dropout,
        epochs,
        channels,
        layers,
        char_emb_size,
        char_repr_size,
        pos_emb_size,
        dep_emb_size,
        word_emb_size,
        context_size,
        batch_size,
        seed,
        conv_window,
        char_window,
        word_grad_scale,
        batch_norm,
        bn_momentum,
        rmsprop_decay,
        rmsprop_eps,
        lr_half_life,
    );
    if patch.embeddings.is_some() {
        cfg.embeddings = patch.embeddings;
    }
}

/// Defaults, overridden by the file, overridden by flags.
pub fn effective_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read config {}: {}", path.display(), e)))?;
        let patch: ConfigPatch = toml::from_str(&text)
            .map_err(|e| Error::config(format!("config {}: {}", path.display(), e)))?;
        apply_patch(&mut cfg, patch);
    }
    let flags = ConfigPatch {
        learning_rate: args.learning_rate,
        dropout: args.dropout,
        epochs: args.epochs,
        channels: args.channels,
        layers: args.layers,
        char_emb_size: args.char_emb_size,
        char_repr_size: args.char_repr_size,
        pos_emb_size: args.pos_emb_size,
        dep_emb_size: args.dep_emb_size,
        word_emb_size: args.word_emb_size,
        context_size: args.context_size,
        batch_size: args.batch_size,
        seed: args.seed,
        conv_window: None,
        char_window: None,
        word_grad_scale: args.word_grad_scale,
        batch_norm: args.batch_norm,
        bn_momentum: None,
        rmsprop_decay: None,
        rmsprop_eps: None,
        lr_half_life: args.lr_half_life,
        embeddings: args.embeddings.clone(),
    };
    apply_patch(&mut cfg, flags);
    cfg.validate()?;
    Ok(cfg)
}

/// Writes the post-override configuration as a flat TOML file.
pub fn write_effective(cfg: &TrainConfig, path: &Path) -> Result<()> {
    let text = toml::to_string_pretty(cfg)
        .map_err(|e| Error::config(format!("config serialization: {}", e)))?;
    std::fs::write(path, text)?;
    Ok(())
}
