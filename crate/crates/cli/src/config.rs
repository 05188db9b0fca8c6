//! `key = value` configuration files for the `toytrain` subcommand.

use std::collections::BTreeMap;
use std::fmt;

use flowconf::losses::LossMode;
use flowconf::toytrain::{SceneSpec, TrainConfig};
use flowconf::{Task, WeightSpec};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: usize,
    pub key: Option<String>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.key {
            Some(key) => write!(f, "line {}: key `{key}`: {}", self.line, self.message),
            None => write!(f, "line {}: {}", self.line, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

pub const KEYS: &[(&str, &str)] = &[
    ("modes", "comma-separated loss modes"),
    ("seeds", "comma-separated scene seeds"),
    ("steps", "gradient steps per run"),
    ("learning_rate", "gradient-descent step size"),
    ("recompute_confidence_every", "steps between confidence rebuilds"),
    ("snapshot_every", "steps between confidence snapshots (omit to disable)"),
    ("height", "scene height in pixels"),
    ("width", "scene width in pixels"),
    ("block_size", "model block size in pixels"),
    ("noise_sigma", "label noise std on occluded pixels"),
    ("randomize_scenes", "draw square size and motions from each seed"),
    ("square_size", "square side when randomize_scenes = false"),
    ("square_motion", "`u, v` when randomize_scenes = false"),
    ("background_motion", "`u, v` when randomize_scenes = false"),
    ("alpha1", "DB strength override"),
    ("beta1", "DB exponent override"),
    ("alpha2", "OA strength override"),
    ("beta2", "OA exponent override"),
    ("gamma1", "cycle-check relative tolerance"),
    ("gamma2", "cycle-check absolute tolerance"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct ToyTrainConfig {
    pub configs: Vec<TrainConfig>,
    pub scene: SceneSpec,
    pub randomize_scenes: bool,
    pub block_size: usize,
}

impl ToyTrainConfig {
    pub fn seeds(&self) -> &[u64] {
        &self.configs[0].seeds
    }
}

/// Parses `key = value` lines. `#` starts a comment; blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = Vec::new();
    let mut seen = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError {
            line,
            key: None,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let key = key.trim().to_string();
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(ConfigError {
                line,
                key: Some(key),
                message: "unknown key".into(),
            });
        }
        if let Some(first) = seen.insert(key.clone(), line) {
            return Err(ConfigError {
                line,
                key: Some(key),
                message: format!("already set on line {first}"),
            });
        }
        out.push((line, key, value.trim().to_string()));
    }
    Ok(out)
}

fn parse_value<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<T, ConfigError>
where
    T::Err: fmt::Display,
{
    value.parse().map_err(|e: T::Err| ConfigError {
        line,
        key: Some(key.to_string()),
        message: format!("cannot parse `{value}`: {e}"),
    })
}

fn parse_list<T: std::str::FromStr>(line: usize, key: &str, value: &str) -> Result<Vec<T>, ConfigError>
where
    T::Err: fmt::Display,
{
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse_value(line, key, s))
        .collect()
}

fn parse_vec2(line: usize, key: &str, value: &str) -> Result<[f64; 2], ConfigError> {
    match parse_list::<f64>(line, key, value)?.as_slice() {
        &[u, v] => Ok([u, v]),
        other => Err(ConfigError {
            line,
            key: Some(key.to_string()),
            message: format!("expected two components, got {}", other.len()),
        }),
    }
}

pub fn parse_config(text: &str) -> Result<ToyTrainConfig, ConfigError> {
    let mut modes = vec![LossMode::PlainL1, LossMode::Db, LossMode::Oa];
    let mut seeds: Vec<u64> = (0..10).collect();
    let mut template = TrainConfig::new(WeightSpec::defaults(Task::Flow, LossMode::PlainL1));
    let mut scene = SceneSpec {
        occluded_label_noise_sigma: 3.0,
        ..SceneSpec::default()
    };
    let mut randomize_scenes = true;
    let mut block_size = 8;
    let mut overrides: [Option<f64>; 4] = [None; 4];
    let (mut gamma1, mut gamma2) = (None, None);
    let mut last_line = 0;

    for (line, key, value) in parse_pairs(text)? {
        last_line = line;
        let v = value.as_str();
        match key.as_str() {
            "modes" => modes = parse_list(line, &key, v)?,
            "seeds" => seeds = parse_list(line, &key, v)?,
            "steps" => template.steps = parse_value(line, &key, v)?,
            "learning_rate" => template.learning_rate = parse_value(line, &key, v)?,
            "recompute_confidence_every" => template.recompute_confidence_every = parse_value(line, &key, v)?,
            "snapshot_every" => template.snapshot_every = Some(parse_value(line, &key, v)?),
            "height" => scene.height = parse_value(line, &key, v)?,
            "width" => scene.width = parse_value(line, &key, v)?,
            "block_size" => block_size = parse_value(line, &key, v)?,
            "noise_sigma" => scene.occluded_label_noise_sigma = parse_value(line, &key, v)?,
            "randomize_scenes" => randomize_scenes = parse_value(line, &key, v)?,
            "square_size" => scene.square_size = parse_value(line, &key, v)?,
            "square_motion" => scene.square_motion = parse_vec2(line, &key, v)?,
            "background_motion" => scene.background_motion = parse_vec2(line, &key, v)?,
            "alpha1" => overrides[0] = Some(parse_value(line, &key, v)?),
            "beta1" => overrides[1] = Some(parse_value(line, &key, v)?),
            "alpha2" => overrides[2] = Some(parse_value(line, &key, v)?),
            "beta2" => overrides[3] = Some(parse_value(line, &key, v)?),
            "gamma1" => gamma1 = Some(parse_value(line, &key, v)?),
            "gamma2" => gamma2 = Some(parse_value(line, &key, v)?),
            _ => unreachable!("keys are checked by parse_pairs"),
        }
    }
    let err = |key: &str, message: String| ConfigError {
        line: last_line,
        key: Some(key.to_string()),
        message,
    };
    if modes.is_empty() {
        return Err(err("modes", "at least one mode is required".into()));
    }
    if seeds.is_empty() {
        return Err(err("seeds", "at least one seed is required".into()));
    }
    template.seeds = seeds;

    let configs = modes
        .iter()
        .map(|&mode| {
            let mut spec = WeightSpec::defaults(Task::Flow, mode);
            let slots = [&mut spec.alpha1, &mut spec.beta1, &mut spec.alpha2, &mut spec.beta2];
            for (slot, value) in slots.into_iter().zip(overrides) {
                if let Some(v) = value {
                    *slot = v;
                }
            }
            if let Some(g) = gamma1 {
                spec.cycle.gamma1 = g;
            }
            if let Some(g) = gamma2 {
                spec.cycle.gamma2 = g;
            }
            let config = TrainConfig {
                loss_spec: spec,
                ..template.clone()
            };
            config.validate().map_err(|e| err(parameter_key(&e), e.to_string()))?;
            Ok(config)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(ToyTrainConfig {
        configs,
        scene,
        randomize_scenes,
        block_size,
    })
}

fn parameter_key(e: &flowconf::Error) -> &'static str {
    match e {
        flowconf::Error::InvalidParameter { name, .. } => name,
        _ => "config",
    }
}
