//! Flat `key=value` configuration files for training runs.

use super::{BaselineMode, PretrainConfig, TrainConfig, TrainError};

/// Parses `key=value` lines; `#` starts a comment, blank lines are ignored.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>, TrainError> {
    let mut out = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(TrainError::Config(format!(
                "line {}: expected key=value, got `{raw}`",
                ln + 1
            )));
        };
        out.push((key.trim().to_string(), value.trim().to_string()));
    }
    Ok(out)
}

/// Training plus warm-up configuration parsed from one file.
#[derive(Debug, Clone, Copy, Default)]
pub struct ConfigBundle {
    pub train: TrainConfig,
    pub pretrain: PretrainConfig,
}

impl ConfigBundle {
    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let mut bundle = Self::default();
        for (key, value) in parse_key_values(text)? {
            bundle.apply(&key, &value)?;
        }
        bundle.train.validate()?;
        Ok(bundle)
    }

    /// Applies one key; unknown keys are errors so typos never pass silently.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let bad = |what: &str| TrainError::Config(format!("bad value for {what}: `{value}`"));
        macro_rules! parse {
            ($what:expr) => {
                value.parse().map_err(|_| bad($what))?
            };
        }
        match key {
            "n_keypoint_samples" => self.train.n_keypoint_samples = parse!(key),
            "n_match_samples" => self.train.n_match_samples = parse!(key),
            "keypoints_per_image" => self.train.keypoints_per_image = parse!(key),
            "match_fraction" => self.train.match_fraction = parse!(key),
            "learning_rate" => self.train.learning_rate = parse!(key),
            "iterations" => self.train.iterations = parse!(key),
            "seed" => self.train.seed = parse!(key),
            "checkpoint_every" => self.train.checkpoint_every = parse!(key),
            "baseline" => {
                self.train.baseline = match value {
                    "mean" => BaselineMode::GlobalMean,
                    "per_keypoint_set" => BaselineMode::PerKeypointSet,
                    "none" => BaselineMode::None,
                    _ => return Err(bad("baseline (mean|per_keypoint_set|none)")),
                }
            }
            "inlier_threshold" => self.train.ransac.inlier_threshold = parse!(key),
            "ransac_iters" => self.train.ransac.max_iterations = parse!(key),
            "confidence" => self.train.ransac.confidence = parse!(key),
            "ransac_seed" => self.train.ransac.seed = parse!(key),
            "pretrain_iterations" => self.pretrain.iterations = parse!(key),
            "pretrain_learning_rate" => self.pretrain.learning_rate = parse!(key),
            "pretrain_triplet_weight" => self.pretrain.triplet_weight = parse!(key),
            "pretrain_triplet_margin" => self.pretrain.triplet_margin = parse!(key),
            "pretrain_max_triplets" => self.pretrain.max_triplets = parse!(key),
            "pretrain_seed" => self.pretrain.seed = parse!(key),
            _ => {
                return Err(TrainError::Config(format!("unknown config key `{key}`")));
            }
        }
        Ok(())
    }
}
