//! Training settings resolved from defaults, an optional flat settings
//! file, and command-line flags, in that precedence order.

use std::collections::HashMap;
use std::path::Path;

use anyhow::{bail, Context, Result};
use spm_core::train::TrainConfig;

/// Model shape; vocabulary sizes come from the loaded vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelSettings {
    pub dim_embed: usize,
    pub dim_hidden: usize,
    pub layers: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        ModelSettings { dim_embed: 32, dim_hidden: 64, layers: 2 }
    }
}

/// Every optional override a settings file or flag set may provide.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub dim_embed: Option<usize>,
    pub dim_hidden: Option<usize>,
    pub layers: Option<usize>,
    pub spm_weight_c: Option<f64>,
    pub learning_rate: Option<f64>,
    pub decay_factor: Option<f64>,
    pub decay_start_epoch: Option<usize>,
    pub clip_norm: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub spm_enabled: Option<bool>,
    pub patience: Option<usize>,
    pub seed: Option<u64>,
}

impl Overrides {
    fn apply(&self, model: &mut ModelSettings, train: &mut TrainConfig) {
        macro_rules! set {
            ($dst:expr, $src:expr) => {
                if let Some(v) = $src {
                    $dst = v;
                }
            };
        }
        set!(model.dim_embed, self.dim_embed);
        set!(model.dim_hidden, self.dim_hidden);
        set!(model.layers, self.layers);
        set!(train.spm_weight_c, self.spm_weight_c);
        set!(train.learning_rate, self.learning_rate);
        set!(train.decay_factor, self.decay_factor);
        set!(train.decay_start_epoch, self.decay_start_epoch);
        set!(train.clip_norm, self.clip_norm);
        set!(train.batch_size, self.batch_size);
        set!(train.max_epochs, self.max_epochs);
        set!(train.dropout_rate, self.dropout_rate);
        set!(train.spm_enabled, self.spm_enabled);
        set!(train.patience, self.patience);
        set!(train.seed, self.seed);
    }
}

/// Parse a flat "key = value" file. Blank lines and #-comments are skipped;
/// unknown keys are errors.
pub fn parse_settings_file(path: &Path) -> Result<Overrides> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading settings file {}", path.display()))?;
    let mut raw: HashMap<&str, &str> = HashMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            bail!("{}:{}: expected key = value", path.display(), lineno + 1);
        };
        let key = key.trim();
        let value = value.trim();
        if raw.insert(key, value).is_some() {
            bail!("{}:{}: duplicate key {key}", path.display(), lineno + 1);
        }
    }

    let mut out = Overrides::default();
    for (key, value) in raw {
        let parse_err = || format!("settings key {key}: cannot parse {value:?}");
        match key {
            "dim_embed" => out.dim_embed = Some(value.parse().with_context(parse_err)?),
            "dim_hidden" => out.dim_hidden = Some(value.parse().with_context(parse_err)?),
            "layers" => out.layers = Some(value.parse().with_context(parse_err)?),
            "spm_weight_c" => out.spm_weight_c = Some(value.parse().with_context(parse_err)?),
            "learning_rate" => out.learning_rate = Some(value.parse().with_context(parse_err)?),
            "decay_factor" => out.decay_factor = Some(value.parse().with_context(parse_err)?),
            "decay_start_epoch" => {
                out.decay_start_epoch = Some(value.parse().with_context(parse_err)?)
            }
            "clip_norm" => out.clip_norm = Some(value.parse().with_context(parse_err)?),
            "batch_size" => out.batch_size = Some(value.parse().with_context(parse_err)?),
            "max_epochs" => out.max_epochs = Some(value.parse().with_context(parse_err)?),
            "dropout_rate" => out.dropout_rate = Some(value.parse().with_context(parse_err)?),
            "spm_enabled" => out.spm_enabled = Some(value.parse().with_context(parse_err)?),
            "patience" => out.patience = Some(value.parse().with_context(parse_err)?),
            "seed" => out.seed = Some(value.parse().with_context(parse_err)?),
            other => bail!("unknown settings key {other:?} in {}", path.display()),
        }
    }
    Ok(out)
}

/// Defaults, then the settings file, then flag overrides.
pub fn resolve(
    config_path: Option<&Path>,
    flags: &Overrides,
) -> Result<(ModelSettings, TrainConfig)> {
    let mut model = ModelSettings::default();
    let mut train = TrainConfig::default();
    if let Some(path) = config_path {
        parse_settings_file(path)?.apply(&mut model, &mut train);
    }
    flags.apply(&mut model, &mut train);
    Ok((model, train))
}
