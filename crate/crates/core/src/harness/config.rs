//! Flat `key = value` run configuration.
//!
//! Blank lines and `#` comments are skipped. Keys under `run.` carry manifest
//! bookkeeping and are ignored when rebuilding a [`TrainConfig`].

use std::fmt::Write as _;

use crate::agent::TrainConfig;
use crate::error::{Error, Result};
use crate::schedule::BetaSchedule;

/// Every configuration key, in serialization order.
pub const CONFIG_KEYS: [&str; 19] = [
    "env",
    "mode",
    "seed",
    "epochs",
    "steps_per_epoch",
    "warmup_steps",
    "eval_episodes",
    "gamma",
    "tau",
    "lr",
    "alpha",
    "batch_size",
    "buffer_capacity",
    "hidden",
    "target_samples",
    "beta",
    "beta_rule",
    "sample_range",
    "sample_count",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("cannot parse `{value}` for key `{key}`")))
}

/// Sets one key on `config`. The beta base and rule are combined, so either
/// may be given first.
pub fn apply_setting(config: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let value = value.trim();
    let ex = &mut config.exploration;
    match key {
        "env" => config.env = value.to_string(),
        "mode" => config.mode = value.to_string(),
        "seed" => config.seed = parse(key, value)?,
        "epochs" => config.total_epochs = parse(key, value)?,
        "steps_per_epoch" => config.steps_per_epoch = parse(key, value)?,
        "warmup_steps" => config.warmup_steps = parse(key, value)?,
        "eval_episodes" => config.eval_episodes = parse(key, value)?,
        "gamma" => config.gamma = parse(key, value)?,
        "tau" => config.tau = parse(key, value)?,
        "lr" => config.lr = parse(key, value)?,
        "alpha" => config.alpha = parse(key, value)?,
        "batch_size" => config.batch_size = parse(key, value)?,
        "buffer_capacity" => config.buffer_capacity = parse(key, value)?,
        "hidden" => {
            config.hidden = if value.is_empty() {
                Vec::new()
            } else {
                value.split(',').map(|w| parse(key, w.trim())).collect::<Result<_>>()?
            }
        }
        "target_samples" => config.target_samples = parse(key, value)?,
        "beta" => ex.beta = ex.beta.with_base(parse(key, value)?),
        "beta_rule" => ex.beta = BetaSchedule::from_rule(value, ex.beta.base())?,
        "sample_range" => ex.sample_range = parse(key, value)?,
        "sample_count" => ex.sample_count = parse(key, value)?,
        other => return Err(Error::Config(format!("unknown config key `{other}`"))),
    }
    Ok(())
}

/// Splits the text into `(key, value)` pairs, including `run.` keys.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", lineno + 1)))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

/// Parses a configuration on top of the defaults. `beta_rule` is applied
/// before `beta` regardless of line order.
pub fn parse_config(text: &str) -> Result<TrainConfig> {
    let mut config = TrainConfig::default();
    let mut pairs: Vec<_> = parse_pairs(text)?
        .into_iter()
        .filter(|(k, _)| !k.starts_with("run."))
        .collect();
    pairs.sort_by_key(|(k, _)| k != "beta_rule");
    for (k, v) in pairs {
        apply_setting(&mut config, &k, &v)?;
    }
    Ok(config)
}

/// Canonical text form; [`parse_config`] inverts it exactly.
pub fn serialize_config(config: &TrainConfig) -> String {
    let ex = &config.exploration;
    let hidden: Vec<String> = config.hidden.iter().map(|h| h.to_string()).collect();
    let mut out = String::new();
    let mut line = |k: &str, v: String| {
        let _ = writeln!(out, "{k} = {v}");
    };
    line("env", config.env.clone());
    line("mode", config.mode.clone());
    line("seed", config.seed.to_string());
    line("epochs", config.total_epochs.to_string());
    line("steps_per_epoch", config.steps_per_epoch.to_string());
    line("warmup_steps", config.warmup_steps.to_string());
    line("eval_episodes", config.eval_episodes.to_string());
    line("gamma", format!("{:?}", config.gamma));
    line("tau", format!("{:?}", config.tau));
    line("lr", format!("{:?}", config.lr));
    line("alpha", format!("{:?}", config.alpha));
    line("batch_size", config.batch_size.to_string());
    line("buffer_capacity", config.buffer_capacity.to_string());
    line("hidden", hidden.join(","));
    line("target_samples", config.target_samples.to_string());
    line("beta", format!("{:?}", ex.beta.base()));
    line("beta_rule", ex.beta.rule_name());
    line("sample_range", format!("{:?}", ex.sample_range));
    line("sample_count", ex.sample_count.to_string());
    out
}
