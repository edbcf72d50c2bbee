//! Training harness: losses, Adam, the two-measure stop criteria,
//! teacher forcing, and the three regimes (module-wise, monolithic,
//! staged), with gradient statistics recorded every iteration.

mod adam;
mod measures;
mod metrics;
mod monolithic;
mod staged;
mod unit;

pub use adam::AdamState;
pub use measures::{
    gradient_stats, list_error_rate, pointer_error_rate, pointer_output_valid,
    qualitative_error, selection_error_rate, SATURATION_TOLERANCE,
};
pub use metrics::{MetricsError, MetricsRow, MovingAverage, RunMetrics, METRICS_HEADER};
pub use monolithic::{train_monolithic, MonolithicOutcome};
pub use staged::{train_staged, AssemblyPoint, StagedOutcome};
pub use unit::{train_module, train_modular, ModularOutcome, UnitOutcome, UnitParams};

use crate::rng::RNG_ALGORITHM;
use serde::{Deserialize, Serialize};
use std::str::FromStr;

/// Training regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Modular,
    Monolithic,
    Staged,
}

impl std::fmt::Display for TrainMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            TrainMode::Modular => "modular",
            TrainMode::Monolithic => "monolithic",
            TrainMode::Staged => "staged",
        };
        f.write_str(s)
    }
}

impl FromStr for TrainMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "modular" => Ok(TrainMode::Modular),
            "monolithic" => Ok(TrainMode::Monolithic),
            "staged" => Ok(TrainMode::Staged),
            other => Err(format!(
                "unknown mode {other:?} (expected modular, monolithic or staged)"
            )),
        }
    }
}

/// Full run configuration. Every field has a default and can come from
/// a JSON config file or CLI flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Complexity level N: maximum training list length.
    pub max_len: usize,
    /// LSTM width of every cell.
    pub hidden: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub mode: TrainMode,
    /// Input noise for module-wise and staged training. Monolithic
    /// training reads this flag too but defaults it off.
    pub noise: bool,
    /// Evaluation cadence in iterations.
    pub eval_every: usize,
    /// Fresh clean samples per evaluation.
    pub eval_samples: usize,
    /// Moving-average window, in evaluations.
    pub ma_window: usize,
    /// Quantitative stop threshold.
    pub quant_threshold: f64,
    /// Qualitative stop threshold (operation modules only).
    pub qual_threshold: f64,
    /// Monolithic loss floor.
    pub loss_floor: f64,
    /// Monolithic stagnation patience, in evaluations without a new
    /// best loss.
    pub stagnation_patience: usize,
    pub max_iterations: u64,
    /// Optional wall-clock budget per run.
    pub max_wall_ms: Option<u64>,
    /// Episode step budget; default 3N^2 + 5.
    pub max_steps: Option<usize>,
    /// Train the five modular units on separate threads.
    pub parallel: bool,
    /// Replace the curriculum with uniform length sampling.
    pub uniform_sampling: bool,
    /// Fixed evaluation episodes for the staged assembly checks.
    pub assembly_eval_samples: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_len: 4,
            hidden: crate::operators::HIDDEN_UNITS,
            learning_rate: 1e-3,
            batch_size: 64,
            seed: 0,
            mode: TrainMode::Modular,
            noise: true,
            eval_every: 50,
            eval_samples: 256,
            ma_window: 10,
            quant_threshold: 0.01,
            qual_threshold: 0.01,
            loss_floor: 1e-6,
            stagnation_patience: 20,
            max_iterations: 20_000,
            max_wall_ms: None,
            max_steps: None,
            parallel: false,
            uniform_sampling: false,
            assembly_eval_samples: 128,
        }
    }
}

impl TrainConfig {
    pub fn episode_step_budget(&self) -> usize {
        self.max_steps
            .unwrap_or_else(|| crate::control::default_max_steps(self.max_len))
    }

    /// Seed of one unit's streams: base seed plus the unit index, so
    /// parallel and sequential runs produce identical per-unit metrics.
    pub fn unit_seed(&self, unit: crate::data::UnitId) -> u64 {
        self.seed.wrapping_add(unit.index() as u64)
    }

    pub fn from_json(text: &str) -> Result<TrainConfig, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// What a run writes next to its outputs; enough to reproduce the run
/// bit-for-bit in single-threaded mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub rng_algorithm: String,
    pub config: TrainConfig,
}

impl RunManifest {
    pub fn new(config: &TrainConfig) -> Self {
        RunManifest {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            rng_algorithm: RNG_ALGORITHM.to_string(),
            config: config.clone(),
        }
    }
}

/// Why a training loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The configured error thresholds were met.
    Criterion,
    LossFloor,
    Stagnation,
    IterationBudget,
    WallClock,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_experiment_settings() {
        let c = TrainConfig::default();
        assert_eq!(c.hidden, 100);
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.batch_size, 64);
        assert_eq!(c.eval_every, 50);
        assert_eq!(c.ma_window, 10);
        assert_eq!(c.quant_threshold, 0.01);
        assert_eq!(c.qual_threshold, 0.01);
        assert_eq!(c.loss_floor, 1e-6);
        assert_eq!(c.episode_step_budget(), 3 * 16 + 5);
    }

    #[test]
    fn config_json_roundtrip_and_partial_files() {
        let c = TrainConfig::default();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(TrainConfig::from_json(&json).unwrap(), c);

        let partial = TrainConfig::from_json(r#"{"max_len": 7, "seed": 3}"#).unwrap();
        assert_eq!(partial.max_len, 7);
        assert_eq!(partial.seed, 3);
        assert_eq!(partial.batch_size, 64);
    }

    #[test]
    fn config_rejects_unknown_fields() {
        assert!(TrainConfig::from_json(r#"{"max_len": 7, "lr": 0.1}"#).is_err());
    }

    #[test]
    fn unit_seeds_are_base_plus_index() {
        let mut c = TrainConfig::default();
        c.seed = 100;
        assert_eq!(c.unit_seed(crate::data::UnitId::Mova), 100);
        assert_eq!(c.unit_seed(crate::data::UnitId::Control), 104);
    }

    #[test]
    fn mode_parses() {
        assert_eq!("staged".parse::<TrainMode>().unwrap(), TrainMode::Staged);
        assert!("joint".parse::<TrainMode>().is_err());
    }
}
