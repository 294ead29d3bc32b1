//! Line-oriented `key = value` config files plus the flag overrides.
//!
//! Keys mirror the field names of the training, scene and encoder configs.
//! Unknown keys are rejected. Precedence: defaults, then the file, then
//! command-line flags.

use saan_core::data::SceneSpec;
use saan_core::error::{Error, Result};
use saan_core::model::EncoderVariant;
use saan_core::similarity::Reduction;
use saan_core::train::{TrainConfig, ValMetric};
use std::fmt::Write as _;
use std::path::Path;

pub fn parse_config_file(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string(), None))?;
    let mut pairs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::format(
                path.display().to_string(),
                format!("line {}: expected `key = value`, got {line:?}", lineno + 1),
                None,
            )
        })?;
        pairs.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::value("config", format!("bad value {value:?} for key {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "on" | "yes" => Ok(true),
        "false" | "0" | "off" | "no" => Ok(false),
        other => Err(Error::value(
            "config",
            format!("bad boolean {other:?} for key {key}"),
        )),
    }
}

/// Apply one key to the training config. Returns false if the key is not a
/// training key (the caller may route it elsewhere).
pub fn apply_train_key(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<bool> {
    match key {
        "lr0" => cfg.lr0 = parse(key, value)?,
        "weight_decay" => cfg.weight_decay = parse(key, value)?,
        "batch_size" => cfg.batch_size = parse(key, value)?,
        "plateau_patience" => cfg.plateau_patience = parse(key, value)?,
        "plateau_factor" => cfg.plateau_factor = parse(key, value)?,
        "min_lr" => cfg.min_lr = parse(key, value)?,
        "max_epochs" => cfg.max_epochs = parse(key, value)?,
        "seed" => cfg.seed = parse(key, value)?,
        "w" => cfg.loss.w = parse(key, value)?,
        "dice_smooth" => cfg.loss.dice_smooth = parse(key, value)?,
        "prediction_threshold" => cfg.loss.prediction_threshold = parse(key, value)?,
        "margin" => cfg.contrastive.margin = parse(key, value)?,
        "sqrt_eps" => cfg.contrastive.sqrt_eps = parse(key, value)?,
        "reduction" => {
            cfg.contrastive.reduction = match value {
                "mean" => Reduction::Mean,
                "sum" => Reduction::Sum,
                other => {
                    return Err(Error::value(
                        "config",
                        format!("reduction must be mean or sum, got {other:?}"),
                    ))
                }
            }
        }
        "sim_loss" => cfg.flags.sim_loss = parse_bool(key, value)?,
        "deep_supervision" => cfg.flags.deep_supervision = parse_bool(key, value)?,
        "sca" => cfg.flags.sca = parse_bool(key, value)?,
        "ssa" => cfg.flags.ssa = parse_bool(key, value)?,
        "flow" => cfg.flags.flow = parse_bool(key, value)?,
        "val_metric" => {
            cfg.val_metric = match value {
                "f1" => ValMetric::F1,
                "accuracy" => ValMetric::PixelAccuracy,
                other => {
                    return Err(Error::value(
                        "config",
                        format!("val_metric must be f1 or accuracy, got {other:?}"),
                    ))
                }
            }
        }
        "decoupled_weight_decay" => cfg.decoupled_weight_decay = parse_bool(key, value)?,
        "stage0_flow_neutral" => cfg.model.stage0_flow_neutral = parse_bool(key, value)?,
        "sca_gate_weighted" => cfg.model.sca_gate_weighted = parse_bool(key, value)?,
        "variant" => cfg.model.encoder.variant = EncoderVariant::parse(value)?,
        "input_channels" => cfg.model.encoder.input_channels = parse(key, value)?,
        "blocks_per_stage" => cfg.model.encoder.blocks_per_stage = parse(key, value)?,
        "stage_channels" => {
            cfg.model.encoder.stage_channels = value
                .split(',')
                .map(|s| parse("stage_channels", s.trim()))
                .collect::<Result<Vec<usize>>>()?
        }
        _ => return Ok(false),
    }
    Ok(true)
}

/// Apply one key to the scene spec. Returns false if the key is unknown.
pub fn apply_scene_key(spec: &mut SceneSpec, key: &str, value: &str) -> Result<bool> {
    match key {
        "size" => spec.size = parse(key, value)?,
        "channels" => spec.channels = parse(key, value)?,
        "min_objects" => spec.min_objects = parse(key, value)?,
        "max_objects" => spec.max_objects = parse(key, value)?,
        "p_keep" => spec.p_keep = parse(key, value)?,
        "p_remove" => spec.p_remove = parse(key, value)?,
        "p_add" => spec.p_add = parse(key, value)?,
        "brightness_jitter" => spec.brightness_jitter = parse(key, value)?,
        "noise_sigma" => spec.noise_sigma = parse(key, value)?,
        "seed" => spec.seed = parse(key, value)?,
        _ => return Ok(false),
    }
    Ok(true)
}

/// Apply a config file to a training config; every key must be known.
pub fn apply_train_file(cfg: &mut TrainConfig, path: &Path) -> Result<()> {
    for (key, value) in parse_config_file(path)? {
        if !apply_train_key(cfg, &key, &value)? {
            return Err(Error::format(
                path.display().to_string(),
                format!("unknown config key {key:?}"),
                None,
            ));
        }
    }
    Ok(())
}

/// Apply a config file to a scene spec; training keys are tolerated so one
/// file can drive both generation and training.
pub fn apply_scene_file(spec: &mut SceneSpec, path: &Path) -> Result<()> {
    let mut scratch = TrainConfig::default();
    for (key, value) in parse_config_file(path)? {
        if !apply_scene_key(spec, &key, &value)? && !apply_train_key(&mut scratch, &key, &value)? {
            return Err(Error::format(
                path.display().to_string(),
                format!("unknown config key {key:?}"),
                None,
            ));
        }
    }
    Ok(())
}

/// Every effective training value, one `key = value` per line, for the
/// reproducibility header.
pub fn echo_train_config(cfg: &TrainConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "lr0 = {}", cfg.lr0);
    let _ = writeln!(s, "weight_decay = {}", cfg.weight_decay);
    let _ = writeln!(s, "batch_size = {}", cfg.batch_size);
    let _ = writeln!(s, "plateau_patience = {}", cfg.plateau_patience);
    let _ = writeln!(s, "plateau_factor = {}", cfg.plateau_factor);
    let _ = writeln!(s, "min_lr = {}", cfg.min_lr);
    let _ = writeln!(s, "max_epochs = {}", cfg.max_epochs);
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "w = {}", cfg.loss.w);
    let _ = writeln!(s, "dice_smooth = {}", cfg.loss.dice_smooth);
    let _ = writeln!(s, "prediction_threshold = {}", cfg.loss.prediction_threshold);
    let _ = writeln!(s, "margin = {}", cfg.contrastive.margin);
    let _ = writeln!(s, "sqrt_eps = {}", cfg.contrastive.sqrt_eps);
    let _ = writeln!(
        s,
        "reduction = {}",
        match cfg.contrastive.reduction {
            Reduction::Mean => "mean",
            Reduction::Sum => "sum",
        }
    );
    let _ = writeln!(s, "sim_loss = {}", cfg.flags.sim_loss);
    let _ = writeln!(s, "deep_supervision = {}", cfg.flags.deep_supervision);
    let _ = writeln!(s, "sca = {}", cfg.flags.sca);
    let _ = writeln!(s, "ssa = {}", cfg.flags.ssa);
    let _ = writeln!(s, "flow = {}", cfg.flags.flow);
    let _ = writeln!(
        s,
        "val_metric = {}",
        match cfg.val_metric {
            ValMetric::F1 => "f1",
            ValMetric::PixelAccuracy => "accuracy",
        }
    );
    let _ = writeln!(s, "decoupled_weight_decay = {}", cfg.decoupled_weight_decay);
    let _ = writeln!(s, "stage0_flow_neutral = {}", cfg.model.stage0_flow_neutral);
    let _ = writeln!(s, "sca_gate_weighted = {}", cfg.model.sca_gate_weighted);
    let _ = writeln!(s, "variant = {}", cfg.model.encoder.variant.name());
    let _ = writeln!(s, "input_channels = {}", cfg.model.encoder.input_channels);
    let _ = writeln!(s, "blocks_per_stage = {}", cfg.model.encoder.blocks_per_stage);
    let _ = writeln!(
        s,
        "stage_channels = {}",
        cfg.model
            .encoder
            .stage_channels
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    s
}

pub fn echo_scene_spec(spec: &SceneSpec) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "size = {}", spec.size);
    let _ = writeln!(s, "channels = {}", spec.channels);
    let _ = writeln!(s, "min_objects = {}", spec.min_objects);
    let _ = writeln!(s, "max_objects = {}", spec.max_objects);
    let _ = writeln!(s, "p_keep = {}", spec.p_keep);
    let _ = writeln!(s, "p_remove = {}", spec.p_remove);
    let _ = writeln!(s, "p_add = {}", spec.p_add);
    let _ = writeln!(s, "brightness_jitter = {}", spec.brightness_jitter);
    let _ = writeln!(s, "noise_sigma = {}", spec.noise_sigma);
    let _ = writeln!(s, "seed = {}", spec.seed);
    s
}
