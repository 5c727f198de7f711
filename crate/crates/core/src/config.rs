//! Flat `key=value` experiment files. Blank lines and `#` comments are
//! ignored; later assignments override earlier ones.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::training::TrainConfig;

pub const VALID_KEYS: &[&str] = &[
    "learning_rate",
    "batch_size",
    "epochs",
    "optimizer",
    "beta1",
    "beta2",
    "epsilon",
    "seed",
    "filters",
    "hidden",
    "k",
    "dropout",
    "max_len",
    "conv_activation",
    "validation_fraction",
];

/// Splits a config file into `(key, value)` pairs in file order.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got {raw:?}", i + 1))
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn parse_value<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

/// Sets one field of `config` by key.
pub fn apply(config: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    match key {
        "learning_rate" => config.learning_rate = parse_value(key, value)?,
        "batch_size" => config.batch_size = parse_value(key, value)?,
        "epochs" => config.epochs = parse_value(key, value)?,
        "optimizer" => config.optimizer = value.parse()?,
        "beta1" => config.beta1 = parse_value(key, value)?,
        "beta2" => config.beta2 = parse_value(key, value)?,
        "epsilon" => config.epsilon = parse_value(key, value)?,
        "seed" => config.seed = parse_value(key, value)?,
        "filters" => config.filters = parse_value(key, value)?,
        "hidden" => config.hidden = parse_value(key, value)?,
        "k" => config.k = parse_value(key, value)?,
        "dropout" => config.dropout = parse_value(key, value)?,
        "max_len" => config.max_len = parse_value(key, value)?,
        "conv_activation" => config.conv_activation = value.parse()?,
        "validation_fraction" => config.validation_fraction = parse_value(key, value)?,
        other => {
            return Err(Error::Config(format!(
                "unknown key {other:?}; valid keys: {}",
                VALID_KEYS.join(", ")
            )))
        }
    }
    Ok(())
}

pub fn apply_text(config: &mut TrainConfig, text: &str) -> Result<()> {
    for (key, value) in parse_pairs(text)? {
        apply(config, &key, &value)?;
    }
    Ok(())
}

pub fn load_config(path: impl AsRef<Path>) -> Result<TrainConfig> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut config = TrainConfig::default();
    apply_text(&mut config, &text)?;
    Ok(config)
}

/// Renders `config` in the same format, one key per line.
pub fn render(config: &TrainConfig) -> String {
    let c = config;
    let values: [(&str, String); 15] = [
        ("learning_rate", c.learning_rate.to_string()),
        ("batch_size", c.batch_size.to_string()),
        ("epochs", c.epochs.to_string()),
        ("optimizer", c.optimizer.to_string()),
        ("beta1", c.beta1.to_string()),
        ("beta2", c.beta2.to_string()),
        ("epsilon", c.epsilon.to_string()),
        ("seed", c.seed.to_string()),
        ("filters", c.filters.to_string()),
        ("hidden", c.hidden.to_string()),
        ("k", c.k.to_string()),
        ("dropout", c.dropout.to_string()),
        ("max_len", c.max_len.to_string()),
        ("conv_activation", c.conv_activation.to_string()),
        ("validation_fraction", c.validation_fraction.to_string()),
    ];
    values.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::Activation;
    use crate::training::OptimizerKind;

    #[test]
    fn parses_comments_and_overrides() {
        let mut c = TrainConfig::default();
        apply_text(
            &mut c,
            "# experiment\nepochs = 3\n\nlearning_rate=0.01 # faster\noptimizer=sgd\nconv_activation=relu\nepochs=4\n",
        )
        .unwrap();
        assert_eq!(c.epochs, 4);
        assert_eq!(c.learning_rate, 0.01);
        assert_eq!(c.optimizer, OptimizerKind::Sgd);
        assert_eq!(c.conv_activation, Activation::Relu);
    }

    #[test]
    fn unknown_key_lists_valid_ones() {
        let err = apply_text(&mut TrainConfig::default(), "colour=blue\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("colour") && msg.contains("learning_rate") && msg.contains("max_len"));
    }

    #[test]
    fn malformed_lines_and_values_fail() {
        assert!(apply_text(&mut TrainConfig::default(), "epochs\n").is_err());
        assert!(apply_text(&mut TrainConfig::default(), "epochs=many\n").is_err());
    }

    #[test]
    fn render_round_trips() {
        let c = TrainConfig {
            seed: 7,
            learning_rate: 3e-4,
            conv_activation: Activation::Identity,
            ..Default::default()
        };
        let mut back = TrainConfig::default();
        apply_text(&mut back, &render(&c)).unwrap();
        assert_eq!(back, c);
        assert_eq!(parse_pairs(&render(&c)).unwrap().len(), VALID_KEYS.len());
    }
}
