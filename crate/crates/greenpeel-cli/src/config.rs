//! Run configuration: JSON schema, validation, and the mapping onto the
//! library's reconstruction parameters. Unknown keys are rejected so typos
//! fail loudly instead of silently running defaults.

use serde::{Deserialize, Serialize};

use greenpeel::grid::Grid;
use greenpeel::peel::{NearFieldPolicy, PeelConfig, RankMode};
use greenpeel::sampling::KernelSpec;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("config key `{key}`: {message}")]
    Invalid { key: &'static str, message: String },
}

fn invalid(key: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key, message: message.into() }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub d: usize,
    pub n: usize,
    #[serde(default = "default_coefficient")]
    pub coefficient: String,
}

fn default_coefficient() -> String {
    "identity".into()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct HierarchyConfig {
    pub levels: usize,
    #[serde(default = "default_window")]
    pub window: usize,
}

fn default_window() -> usize {
    7
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SamplingConfig {
    #[serde(default = "default_kernel")]
    pub kernel: String,
    #[serde(default = "default_length_scale")]
    pub length_scale: f64,
    #[serde(default)]
    pub master_seed: u64,
    /// Pairs emitted by the `sample` subcommand.
    #[serde(default = "default_dataset_size")]
    pub dataset_size: usize,
}

fn default_kernel() -> String {
    "squared_exponential".into()
}

fn default_length_scale() -> f64 {
    0.2
}

fn default_dataset_size() -> usize {
    128
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    #[serde(default = "default_mode")]
    pub mode: String,
    /// Adaptive target accuracy. Exactly one of `epsilon` and `rank`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// Fixed per-block rank.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rank: Option<usize>,
    #[serde(default = "default_oversampling")]
    pub oversampling: usize,
    #[serde(default = "default_k_max")]
    pub k_max: usize,
    #[serde(default = "default_k_step")]
    pub k_step: usize,
    #[serde(default = "default_near_field")]
    pub near_field: String,
    /// Training data consumed when `mode` is `dataset`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<String>,
}

fn default_mode() -> String {
    "active".into()
}

fn default_oversampling() -> usize {
    10
}

fn default_k_max() -> usize {
    24
}

fn default_k_step() -> usize {
    2
}

fn default_near_field() -> String {
    "neglect".into()
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    #[serde(default = "default_true")]
    pub dense_oracle: bool,
    #[serde(default = "default_test_set_size")]
    pub test_set_size: usize,
}

fn default_true() -> bool {
    true
}

fn default_test_set_size() -> usize {
    16
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { dense_oracle: true, test_set_size: default_test_set_size() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: String,
}

fn default_out_dir() -> String {
    "out".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: default_out_dir() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Budget points: ranks in fixed-rank mode, target accuracies otherwise.
    pub budgets: Vec<f64>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3]
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub hierarchy: HierarchyConfig,
    pub sampling: SamplingConfig,
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
}

pub const DENSE_ORACLE_CAP: usize = 4096;

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(1..=3).contains(&self.problem.d) {
            return Err(invalid("problem.d", format!("must be 1, 2 or 3, got {}", self.problem.d)));
        }
        if self.problem.n < 2 {
            return Err(invalid("problem.n", format!("must be at least 2, got {}", self.problem.n)));
        }
        greenpeel::coeff::CoefficientField::from_name(&self.problem.coefficient)
            .map_err(|e| invalid("problem.coefficient", e.to_string()))?;

        let levels = self.hierarchy.levels;
        if levels < 2 {
            return Err(invalid("hierarchy.levels", "must be at least 2 (first admissible level)"));
        }
        let divisor = 1usize << levels;
        if divisor > self.problem.n || self.problem.n % divisor != 0 {
            return Err(invalid(
                "hierarchy.levels",
                format!("n = {} must be divisible by 2^levels = {divisor}", self.problem.n),
            ));
        }
        if self.hierarchy.window < 7 || self.hierarchy.window % 2 == 0 {
            return Err(invalid(
                "hierarchy.window",
                format!("must be an odd value of at least 7, got {}", self.hierarchy.window),
            ));
        }

        match self.sampling.kernel.as_str() {
            "white" => {}
            "squared_exponential" => {
                if !(self.sampling.length_scale > 0.0 && self.sampling.length_scale.is_finite()) {
                    return Err(invalid(
                        "sampling.length_scale",
                        format!("must be positive and finite, got {}", self.sampling.length_scale),
                    ));
                }
            }
            other => {
                return Err(invalid(
                    "sampling.kernel",
                    format!("unknown kernel `{other}` (expected squared_exponential or white)"),
                ));
            }
        }
        if self.sampling.dataset_size == 0 {
            return Err(invalid("sampling.dataset_size", "must be positive"));
        }

        match self.algorithm.mode.as_str() {
            "active" => {}
            "dataset" => {
                if self.algorithm.dataset_path.is_none() {
                    return Err(invalid(
                        "algorithm.dataset_path",
                        "required when algorithm.mode is `dataset`",
                    ));
                }
            }
            other => {
                return Err(invalid(
                    "algorithm.mode",
                    format!("unknown mode `{other}` (expected active or dataset)"),
                ));
            }
        }
        match (self.algorithm.epsilon, self.algorithm.rank) {
            (Some(_), Some(_)) => {
                return Err(invalid(
                    "algorithm.epsilon",
                    "set exactly one of algorithm.epsilon and algorithm.rank, not both",
                ));
            }
            (None, None) => {
                return Err(invalid(
                    "algorithm.rank",
                    "set exactly one of algorithm.epsilon and algorithm.rank",
                ));
            }
            (Some(eps), None) => {
                if !(eps > 0.0 && eps < 1.0) {
                    return Err(invalid(
                        "algorithm.epsilon",
                        format!("must lie in (0, 1), got {eps}"),
                    ));
                }
            }
            (None, Some(rank)) => {
                if rank == 0 {
                    return Err(invalid("algorithm.rank", "must be at least 1"));
                }
            }
        }
        if self.algorithm.k_step == 0 {
            return Err(invalid("algorithm.k_step", "must be at least 1"));
        }
        if self.algorithm.k_max == 0 {
            return Err(invalid("algorithm.k_max", "must be at least 1"));
        }
        match self.algorithm.near_field.as_str() {
            "neglect" | "dense_probe" => {}
            other => {
                return Err(invalid(
                    "algorithm.near_field",
                    format!("unknown policy `{other}` (expected neglect or dense_probe)"),
                ));
            }
        }

        let total = self.problem.n.pow(self.problem.d as u32);
        if self.evaluation.dense_oracle && total > DENSE_ORACLE_CAP {
            return Err(invalid(
                "evaluation.dense_oracle",
                format!("dense oracle limited to {DENSE_ORACLE_CAP} nodes, problem has {total}"),
            ));
        }
        if self.evaluation.test_set_size == 0 {
            return Err(invalid("evaluation.test_set_size", "must be positive"));
        }

        if let Some(sweep) = &self.sweep {
            if sweep.budgets.len() < 2 {
                return Err(invalid("sweep.budgets", "need at least 2 budget points"));
            }
            if sweep.seeds.is_empty() {
                return Err(invalid("sweep.seeds", "need at least 1 seed"));
            }
            for &b in &sweep.budgets {
                if self.algorithm.rank.is_some() {
                    if b < 1.0 || b.fract() != 0.0 {
                        return Err(invalid(
                            "sweep.budgets",
                            format!("fixed-rank sweeps take integer ranks, got {b}"),
                        ));
                    }
                } else if !(b > 0.0 && b < 1.0) {
                    return Err(invalid(
                        "sweep.budgets",
                        format!("adaptive sweeps take accuracies in (0,1), got {b}"),
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid, greenpeel::Error> {
        Grid::new(self.problem.d, self.problem.n)
    }

    pub fn kernel_spec(&self) -> KernelSpec {
        match self.sampling.kernel.as_str() {
            "white" => KernelSpec::White,
            _ => KernelSpec::SquaredExponential { length_scale: self.sampling.length_scale },
        }
    }

    pub fn near_field_policy(&self) -> NearFieldPolicy {
        match self.algorithm.near_field.as_str() {
            "dense_probe" => NearFieldPolicy::DenseProbe,
            _ => NearFieldPolicy::Neglect,
        }
    }

    /// Reconstruction parameters for one run; `budget` overrides the
    /// configured rank/accuracy and `seed` the master seed.
    pub fn peel_config(&self, budget: Option<f64>, seed: Option<u64>) -> PeelConfig {
        let rank_mode = match (self.algorithm.rank, self.algorithm.epsilon) {
            (Some(rank), _) => RankMode::Fixed(budget.map(|b| b as usize).unwrap_or(rank)),
            (None, Some(eps)) => RankMode::Adaptive {
                epsilon: budget.unwrap_or(eps),
                k_max: self.algorithm.k_max,
                k_step: self.algorithm.k_step,
            },
            (None, None) => RankMode::Fixed(4),
        };
        PeelConfig {
            depth: self.hierarchy.levels,
            window: self.hierarchy.window,
            rank_mode,
            oversampling: self.algorithm.oversampling,
            posterior_probes: 10,
            kernel: self.kernel_spec(),
            near_field: self.near_field_policy(),
            master_seed: seed.unwrap_or(self.sampling.master_seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        r#"{
            "problem": {"d": 1, "n": 64},
            "hierarchy": {"levels": 3},
            "sampling": {},
            "algorithm": {"rank": 2}
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let cfg = RunConfig::from_json(&minimal()).unwrap();
        assert_eq!(cfg.hierarchy.window, 7);
        assert_eq!(cfg.algorithm.oversampling, 10);
        assert_eq!(cfg.sampling.kernel, "squared_exponential");
        assert!(cfg.evaluation.dense_oracle);
    }

    #[test]
    fn parse_serialize_parse_is_fixed_point() {
        let cfg = RunConfig::from_json(&minimal()).unwrap();
        let json = cfg.to_json();
        let cfg2 = RunConfig::from_json(&json).unwrap();
        assert_eq!(cfg, cfg2);
        assert_eq!(json, cfg2.to_json());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = minimal().replace("\"rank\": 2", "\"rank\": 2, \"typo_key\": 1");
        let err = RunConfig::from_json(&bad).unwrap_err();
        assert!(err.to_string().contains("typo_key"), "{err}");
    }

    #[test]
    fn divisibility_violation_names_the_key() {
        let bad = minimal().replace("\"n\": 64", "\"n\": 6").replace("\"levels\": 3", "\"levels\": 2");
        let err = RunConfig::from_json(&bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("hierarchy.levels") && msg.contains("divisible"), "{msg}");
    }

    #[test]
    fn epsilon_and_rank_are_mutually_exclusive() {
        let bad = minimal().replace("\"rank\": 2", "\"rank\": 2, \"epsilon\": 0.1");
        assert!(RunConfig::from_json(&bad).is_err());
        let neither = minimal().replace("\"rank\": 2", "\"oversampling\": 10");
        assert!(RunConfig::from_json(&neither).is_err());
    }

    #[test]
    fn dataset_mode_requires_path() {
        let bad = minimal().replace("\"rank\": 2", "\"rank\": 2, \"mode\": \"dataset\"");
        let err = RunConfig::from_json(&bad).unwrap_err();
        assert!(err.to_string().contains("dataset_path"));
    }

    #[test]
    fn dense_oracle_cap_enforced() {
        let big = r#"{
            "problem": {"d": 2, "n": 128},
            "hierarchy": {"levels": 3},
            "sampling": {},
            "algorithm": {"rank": 2}
        }"#;
        let err = RunConfig::from_json(big).unwrap_err();
        assert!(err.to_string().contains("dense oracle"), "{err}");
    }
}
