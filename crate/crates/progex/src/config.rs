//! Run configuration: one strict JSON document drives every command.
//!
//! A [`RunConfig`] parses strictly (unknown fields are errors), validates
//! before anything executes, and is written back out, fully resolved,
//! into the run's output directory together with the schema, the derived
//! seeds and a content hash of the running binary. A run directory is
//! therefore enough to reproduce the run.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::dsl::{Dialect, TOKEN_BUDGET};
use crate::executor::{ExecMode, GuidanceMode, ModelConfig};
use crate::rng::derive_seed;
use crate::taskgen::{EnvRanges, PolicyConstraints, ReasoningConstraints, SceneRanges};
use crate::tensor::params::AdamConfig;
use crate::train::{A2cConfig, FitConfig, Supervision};

/// The eight command names a config may record or a run may execute.
pub const SUBCOMMANDS: [&str; 8] = [
    "parse", "fmt", "check", "gen", "exec", "oracle", "train", "eval",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Command this config drove; recorded into the resolved config.
    pub subcommand: Option<String>,
    pub dialect: Dialect,
    /// Master seed; every random stream derives from it by keyed tags.
    pub seed: u64,
    /// Worker threads for data-parallel work; absent uses the default
    /// pool size.
    pub threads: Option<usize>,
    pub dataset_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub model: ModelSection,
    pub train: TrainSection,
    pub rl: RlSection,
    pub gen: GenSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            subcommand: None,
            dialect: Dialect::Reasoning,
            seed: 0,
            threads: None,
            dataset_dir: None,
            out_dir: None,
            model: ModelSection::default(),
            train: TrainSection::default(),
            rl: RlSection::default(),
            gen: GenSection::default(),
        }
    }
}

/// Executor shape. The model width is `8 * d_token` (eight token slots
/// per routine).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub d_token: usize,
    pub heads: usize,
    pub blocks: usize,
    pub head_hidden: usize,
    pub encoder_hidden: usize,
    /// Object slots for scene features and the object-set head.
    pub n_slots: usize,
    pub guidance: GuidanceMode,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            d_token: 16,
            heads: 8,
            blocks: 1,
            head_hidden: 64,
            encoder_hidden: 64,
            n_slots: 8,
            guidance: GuidanceMode::Full,
        }
    }
}

impl ModelSection {
    pub fn to_model_config(&self, dialect: Dialect, seed: u64) -> ModelConfig {
        ModelConfig {
            dialect,
            d_token: self.d_token,
            heads: self.heads,
            blocks: self.blocks,
            head_hidden: self.head_hidden,
            encoder_hidden: self.encoder_hidden,
            n_slots: self.n_slots,
            guidance: self.guidance,
            seed: derive_seed(seed, "model-init", 0),
        }
    }
}

/// Which loss a training run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainTarget {
    /// Every routine supervised by its exact value.
    Dense,
    /// Only the sink routine supervised.
    Partial,
    /// Actor-critic on episode reward.
    Rl,
}

impl TrainTarget {
    pub fn supervision(self) -> Option<Supervision> {
        match self {
            TrainTarget::Dense => Some(Supervision::Dense),
            TrainTarget::Partial => Some(Supervision::Partial),
            TrainTarget::Rl => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub target: TrainTarget,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Multiplicative learning-rate factor applied after each epoch.
    pub lr_decay: f64,
    pub weight_decay: f64,
    /// Execution schedule during supervised runs.
    pub mode: ExecMode,
    pub time_limit_secs: Option<u64>,
    pub target_accuracy: Option<f64>,
    pub eval_every: usize,
    /// Per-batch gradient chunks; fixed so results do not depend on
    /// thread scheduling.
    pub chunks: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            target: TrainTarget::Dense,
            epochs: 20,
            batch_size: 32,
            lr: 2e-3,
            lr_decay: 0.8,
            weight_decay: 0.01,
            mode: ExecMode::Parallel,
            time_limit_secs: None,
            target_accuracy: None,
            eval_every: 1,
            chunks: 16,
        }
    }
}

impl TrainSection {
    /// Supervised schedule for this section; `target` must not be `rl`.
    pub fn to_fit_config(&self, seed: u64) -> FitConfig {
        FitConfig {
            epochs: self.epochs,
            start_epoch: 0,
            batch_size: self.batch_size,
            adam: AdamConfig {
                lr: self.lr,
                weight_decay: self.weight_decay,
                ..AdamConfig::default()
            },
            lr_decay: self.lr_decay,
            supervision: self
                .target
                .supervision()
                .expect("rl target has no supervised schedule"),
            mode: self.mode,
            shuffle_seed: derive_seed(seed, "fit-shuffle", 0),
            target_accuracy: self.target_accuracy,
            time_limit: self.time_limit_secs.map(Duration::from_secs),
            eval_every: self.eval_every,
            chunks: self.chunks,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlSection {
    pub envs: usize,
    pub window: usize,
    pub gamma: f64,
    pub entropy_beta: f64,
    pub value_coeff: f64,
    pub lr: f64,
    pub max_env_steps: usize,
    /// Per-episode environment-step budget.
    pub action_budget: usize,
    /// Per-episode control-evaluation budget.
    pub control_budget: usize,
    /// Extra reward per finished routine; zero keeps the sparse signal.
    pub routine_bonus: f64,
    /// Held-out evaluation roughly every this many environment steps.
    pub eval_every: usize,
    pub target_completion: Option<f64>,
    pub time_limit_secs: Option<u64>,
    pub chunks: usize,
}

impl Default for RlSection {
    fn default() -> Self {
        RlSection {
            envs: 64,
            window: 5,
            gamma: 0.99,
            entropy_beta: 0.1,
            value_coeff: 0.5,
            lr: 1e-3,
            max_env_steps: 2_000_000,
            action_budget: 100,
            control_budget: 1000,
            routine_bonus: 0.0,
            eval_every: 50_000,
            target_completion: None,
            time_limit_secs: None,
            chunks: 16,
        }
    }
}

impl RlSection {
    pub fn to_a2c_config(&self, seed: u64) -> A2cConfig {
        A2cConfig {
            envs: self.envs,
            window: self.window,
            gamma: self.gamma,
            entropy_beta: self.entropy_beta,
            value_coeff: self.value_coeff,
            adam: AdamConfig {
                lr: self.lr,
                ..AdamConfig::default()
            },
            max_env_steps: self.max_env_steps,
            action_budget: self.action_budget,
            control_budget: self.control_budget,
            routine_bonus: self.routine_bonus,
            eval_every: self.eval_every,
            target_completion: self.target_completion,
            seed: derive_seed(seed, "a2c", 0),
            chunks: self.chunks,
            time_limit: self.time_limit_secs.map(Duration::from_secs),
        }
    }
}

/// Gridworld sampling ranges by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvPreset {
    /// Small rivers-free grids.
    Desk,
    /// Larger grids with rivers and more walls.
    Rich,
}

impl EnvPreset {
    pub fn ranges(self) -> EnvRanges {
        match self {
            EnvPreset::Desk => EnvRanges::desk(),
            EnvPreset::Rich => EnvRanges::rich(),
        }
    }
}

/// Policy program shapes by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskPreset {
    Standard,
    Supervised,
    Reinforcement,
    Longer,
    Complex,
    Nested,
}

impl TaskPreset {
    pub fn constraints(self) -> PolicyConstraints {
        match self {
            TaskPreset::Standard => PolicyConstraints::standard(),
            TaskPreset::Supervised => PolicyConstraints::supervised(),
            TaskPreset::Reinforcement => PolicyConstraints::reinforcement(),
            TaskPreset::Longer => PolicyConstraints::longer(),
            TaskPreset::Complex => PolicyConstraints::complex(),
            TaskPreset::Nested => PolicyConstraints::nested(),
        }
    }
}

/// Reasoning program shapes by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReasonPreset {
    /// Any final output type.
    Standard,
    /// Word-answer sinks only, with balanced answers.
    Answers,
}

impl ReasonPreset {
    pub fn constraints(self) -> ReasoningConstraints {
        match self {
            ReasonPreset::Standard => ReasoningConstraints::standard(),
            ReasonPreset::Answers => ReasoningConstraints::answers(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSection {
    pub train_count: usize,
    pub test_count: usize,
    pub env_preset: EnvPreset,
    pub task_preset: TaskPreset,
    pub reason_preset: ReasonPreset,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Largest share any single final answer may take of a reasoning
    /// split; keeps the label distribution near uniform.
    pub answer_cap: f64,
    /// Share of a reasoning split drawn from scenes whose question
    /// cannot be answered without relational context.
    pub ambiguity_share: f64,
}

impl Default for GenSection {
    fn default() -> Self {
        GenSection {
            train_count: 5000,
            test_count: 500,
            env_preset: EnvPreset::Desk,
            task_preset: TaskPreset::Supervised,
            reason_preset: ReasonPreset::Answers,
            min_objects: 3,
            max_objects: 7,
            answer_cap: 0.15,
            ambiguity_share: 0.0,
        }
    }
}

impl GenSection {
    pub fn scene_ranges(&self) -> SceneRanges {
        SceneRanges {
            min_objects: self.min_objects,
            max_objects: self.max_objects,
        }
    }
}

impl RunConfig {
    /// Strict parse: unknown fields and type mismatches are errors.
    pub fn from_json_str(text: &str) -> Result<RunConfig, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<RunConfig, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        RunConfig::from_json_str(&text)
    }

    /// A copy with one dotted-path field replaced, e.g.
    /// `("train.lr", "0.001")`. The raw value is parsed as JSON when it
    /// is valid JSON and treated as a string otherwise, then the whole
    /// document re-parses strictly so type errors surface immediately.
    pub fn with_override(&self, dotted: &str, raw: &str) -> Result<RunConfig, String> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        let pointer = format!("/{}", dotted.replace('.', "/"));
        let slot = doc
            .pointer_mut(&pointer)
            .ok_or_else(|| format!("no config field at '{dotted}'"))?;
        *slot = match serde_json::from_str::<serde_json::Value>(raw) {
            Ok(v) => v,
            Err(_) => serde_json::Value::String(raw.to_string()),
        };
        serde_json::from_value(doc).map_err(|e| format!("override '{dotted}={raw}': {e}"))
    }

    /// Model width implied by the model section.
    pub fn d(&self) -> usize {
        TOKEN_BUDGET * self.model.d_token
    }

    /// Every problem with this config; an empty list means it can run.
    pub fn validate(&self) -> Result<(), Vec<String>> {
        let mut errs = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                errs.push(msg);
            }
        };
        if let Some(sub) = &self.subcommand {
            check(
                SUBCOMMANDS.contains(&sub.as_str()),
                format!("unknown subcommand '{sub}'"),
            );
        }
        let m = &self.model;
        check(m.d_token >= 1, "model.d_token must be at least 1".into());
        check(m.heads >= 1, "model.heads must be at least 1".into());
        check(
            m.heads == 0 || self.d() % m.heads == 0,
            format!(
                "model width {} (8 x d_token) must divide into model.heads {}",
                self.d(),
                m.heads
            ),
        );
        check(m.blocks >= 1, "model.blocks must be at least 1".into());
        check(m.head_hidden >= 1, "model.head_hidden must be at least 1".into());
        check(
            m.encoder_hidden >= 1,
            "model.encoder_hidden must be at least 1".into(),
        );

        let t = &self.train;
        check(t.epochs >= 1, "train.epochs must be at least 1".into());
        check(t.batch_size >= 1, "train.batch_size must be at least 1".into());
        check(
            t.lr.is_finite() && t.lr > 0.0,
            "train.lr must be positive".into(),
        );
        check(
            t.lr_decay > 0.0 && t.lr_decay <= 1.0,
            "train.lr_decay must be in (0, 1]".into(),
        );
        check(t.weight_decay >= 0.0, "train.weight_decay must not be negative".into());
        check(t.eval_every >= 1, "train.eval_every must be at least 1".into());
        check(t.chunks >= 1, "train.chunks must be at least 1".into());
        if let Some(acc) = t.target_accuracy {
            check(
                acc > 0.0 && acc <= 1.0,
                "train.target_accuracy must be in (0, 1]".into(),
            );
        }
        check(
            !(self.dialect == Dialect::Policy && t.target == TrainTarget::Partial),
            "partial supervision applies to reasoning programs only".into(),
        );
        check(
            !(self.dialect == Dialect::Reasoning && t.target == TrainTarget::Rl),
            "the rl target applies to policy programs only".into(),
        );

        let r = &self.rl;
        check(r.envs >= 1, "rl.envs must be at least 1".into());
        check(r.window >= 1, "rl.window must be at least 1".into());
        check(
            r.gamma > 0.0 && r.gamma <= 1.0,
            "rl.gamma must be in (0, 1]".into(),
        );
        check(r.entropy_beta >= 0.0, "rl.entropy_beta must not be negative".into());
        check(r.value_coeff >= 0.0, "rl.value_coeff must not be negative".into());
        check(r.lr.is_finite() && r.lr > 0.0, "rl.lr must be positive".into());
        check(r.action_budget >= 1, "rl.action_budget must be at least 1".into());
        check(r.control_budget >= 1, "rl.control_budget must be at least 1".into());
        check(r.chunks >= 1, "rl.chunks must be at least 1".into());
        if let Some(c) = r.target_completion {
            check(
                c > 0.0 && c <= 1.0,
                "rl.target_completion must be in (0, 1]".into(),
            );
        }

        let g = &self.gen;
        check(g.train_count >= 1, "gen.train_count must be at least 1".into());
        check(g.test_count >= 1, "gen.test_count must be at least 1".into());
        check(g.min_objects >= 1, "gen.min_objects must be at least 1".into());
        check(
            g.min_objects <= g.max_objects,
            "gen.min_objects must not exceed gen.max_objects".into(),
        );
        check(
            g.answer_cap > 0.0 && g.answer_cap <= 1.0,
            "gen.answer_cap must be in (0, 1]".into(),
        );
        check(
            (0.0..=1.0).contains(&g.ambiguity_share),
            "gen.ambiguity_share must be in [0, 1]".into(),
        );
        if self.dialect == Dialect::Reasoning {
            check(
                g.max_objects <= m.n_slots,
                format!(
                    "gen.max_objects {} needs at least that many model.n_slots (got {})",
                    g.max_objects, m.n_slots
                ),
            );
        }
        if errs.is_empty() {
            Ok(())
        } else {
            Err(errs)
        }
    }
}

/// JSON Schema describing [`RunConfig`]; written into every run
/// directory next to the resolved config.
pub const SCHEMA: &str = r##"{
  "$schema": "http://json-schema.org/draft-07/schema#",
  "title": "RunConfig",
  "type": "object",
  "additionalProperties": false,
  "properties": {
    "subcommand": {
      "type": ["string", "null"],
      "enum": ["parse", "fmt", "check", "gen", "exec", "oracle", "train", "eval", null]
    },
    "dialect": { "type": "string", "enum": ["policy", "reasoning"] },
    "seed": { "type": "integer", "minimum": 0 },
    "threads": { "type": ["integer", "null"], "minimum": 1 },
    "dataset_dir": { "type": ["string", "null"] },
    "out_dir": { "type": ["string", "null"] },
    "model": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "d_token": { "type": "integer", "minimum": 1 },
        "heads": { "type": "integer", "minimum": 1 },
        "blocks": { "type": "integer", "minimum": 1 },
        "head_hidden": { "type": "integer", "minimum": 1 },
        "encoder_hidden": { "type": "integer", "minimum": 1 },
        "n_slots": { "type": "integer", "minimum": 0 },
        "guidance": { "type": "string", "enum": ["full", "no_structure", "no_semantic"] }
      }
    },
    "train": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "target": { "type": "string", "enum": ["dense", "partial", "rl"] },
        "epochs": { "type": "integer", "minimum": 1 },
        "batch_size": { "type": "integer", "minimum": 1 },
        "lr": { "type": "number", "exclusiveMinimum": 0 },
        "lr_decay": { "type": "number", "exclusiveMinimum": 0, "maximum": 1 },
        "weight_decay": { "type": "number", "minimum": 0 },
        "mode": { "type": "string", "enum": ["sequential", "parallel"] },
        "time_limit_secs": { "type": ["integer", "null"], "minimum": 1 },
        "target_accuracy": { "type": ["number", "null"], "exclusiveMinimum": 0, "maximum": 1 },
        "eval_every": { "type": "integer", "minimum": 1 },
        "chunks": { "type": "integer", "minimum": 1 }
      }
    },
    "rl": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "envs": { "type": "integer", "minimum": 1 },
        "window": { "type": "integer", "minimum": 1 },
        "gamma": { "type": "number", "exclusiveMinimum": 0, "maximum": 1 },
        "entropy_beta": { "type": "number", "minimum": 0 },
        "value_coeff": { "type": "number", "minimum": 0 },
        "lr": { "type": "number", "exclusiveMinimum": 0 },
        "max_env_steps": { "type": "integer", "minimum": 0 },
        "action_budget": { "type": "integer", "minimum": 1 },
        "control_budget": { "type": "integer", "minimum": 1 },
        "routine_bonus": { "type": "number", "minimum": 0 },
        "eval_every": { "type": "integer", "minimum": 0 },
        "target_completion": { "type": ["number", "null"], "exclusiveMinimum": 0, "maximum": 1 },
        "time_limit_secs": { "type": ["integer", "null"], "minimum": 1 },
        "chunks": { "type": "integer", "minimum": 1 }
      }
    },
    "gen": {
      "type": "object",
      "additionalProperties": false,
      "properties": {
        "train_count": { "type": "integer", "minimum": 1 },
        "test_count": { "type": "integer", "minimum": 1 },
        "env_preset": { "type": "string", "enum": ["desk", "rich"] },
        "task_preset": {
          "type": "string",
          "enum": ["standard", "supervised", "reinforcement", "longer", "complex", "nested"]
        },
        "reason_preset": { "type": "string", "enum": ["standard", "answers"] },
        "min_objects": { "type": "integer", "minimum": 1 },
        "max_objects": { "type": "integer", "minimum": 1 },
        "answer_cap": { "type": "number", "exclusiveMinimum": 0, "maximum": 1 },
        "ambiguity_share": { "type": "number", "minimum": 0, "maximum": 1 }
      }
    }
  }
}"##;

/// FNV-1a over the running binary: changes whenever the code does.
pub fn code_hash() -> String {
    let bytes = std::env::current_exe()
        .and_then(fs::read)
        .unwrap_or_default();
    if bytes.is_empty() {
        return "unknown".to_string();
    }
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Seeds derived from the master for each named random stream.
pub fn derived_seeds(master: u64) -> serde_json::Value {
    let tags = [
        "model-init",
        "gen-train",
        "gen-test",
        "fit-shuffle",
        "a2c",
        "feature-codebook",
    ];
    let derived: serde_json::Map<String, serde_json::Value> = tags
        .iter()
        .map(|t| ((*t).to_string(), derive_seed(master, t, 0).into()))
        .collect();
    serde_json::json!({ "master": master, "derived": derived })
}

/// Write everything needed to reproduce a run: the resolved config, the
/// schema it validates against, the derived seeds, and a content hash
/// of the binary.
pub fn prepare_run_dir(dir: &Path, cfg: &RunConfig) -> std::io::Result<()> {
    fs::create_dir_all(dir)?;
    let pretty = serde_json::to_string_pretty(cfg).expect("config serializes");
    fs::write(dir.join("config.resolved.json"), pretty + "\n")?;
    fs::write(dir.join("config.schema.json"), SCHEMA.to_string() + "\n")?;
    let seeds = serde_json::to_string_pretty(&derived_seeds(cfg.seed)).expect("seeds serialize");
    fs::write(dir.join("seeds.json"), seeds + "\n")?;
    fs::write(dir.join("code_hash.txt"), code_hash() + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid_and_round_trips() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        let back = RunConfig::from_json_str(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = RunConfig::from_json_str(r#"{"sede": 3}"#).unwrap_err();
        assert!(err.contains("sede"), "{err}");
        let err = RunConfig::from_json_str(r#"{"model": {"dtoken": 4}}"#).unwrap_err();
        assert!(err.contains("dtoken"), "{err}");
    }

    #[test]
    fn overrides_replace_single_fields() {
        let cfg = RunConfig::default();
        let cfg = cfg.with_override("train.lr", "0.01").unwrap();
        assert_eq!(cfg.train.lr, 0.01);
        let cfg = cfg.with_override("dialect", "policy").unwrap();
        assert_eq!(cfg.dialect, Dialect::Policy);
        let cfg = cfg.with_override("gen.task_preset", "reinforcement").unwrap();
        assert_eq!(cfg.gen.task_preset, TaskPreset::Reinforcement);
        assert!(cfg.with_override("train.missing", "1").is_err());
        assert!(cfg.with_override("train.lr", "not-a-number").is_err());
    }

    #[test]
    fn validation_reports_every_problem() {
        let mut cfg = RunConfig::default();
        cfg.model.heads = 3;
        cfg.train.lr = -1.0;
        cfg.gen.min_objects = 9;
        let errs = cfg.validate().unwrap_err();
        assert!(errs.len() >= 3, "{errs:?}");
        assert!(errs.iter().any(|e| e.contains("heads")));
        assert!(errs.iter().any(|e| e.contains("train.lr")));
        assert!(errs.iter().any(|e| e.contains("min_objects")));
    }

    #[test]
    fn target_and_dialect_must_agree() {
        let mut cfg = RunConfig::default();
        cfg.dialect = Dialect::Reasoning;
        cfg.train.target = TrainTarget::Rl;
        assert!(cfg.validate().is_err());
        cfg.dialect = Dialect::Policy;
        cfg.model.n_slots = 0;
        cfg.validate().unwrap();
        cfg.train.target = TrainTarget::Partial;
        assert!(cfg.validate().is_err());
    }

    /// The published schema names every field the config actually has,
    /// at both the top level and inside each section.
    #[test]
    fn schema_covers_the_whole_config() {
        let schema: serde_json::Value = serde_json::from_str(SCHEMA).unwrap();
        let doc = serde_json::to_value(RunConfig::default()).unwrap();
        let props = schema["properties"].as_object().unwrap();
        for (key, value) in doc.as_object().unwrap() {
            let spec = props
                .get(key)
                .unwrap_or_else(|| panic!("schema misses top-level '{key}'"));
            if let Some(section) = value.as_object() {
                let inner = spec["properties"].as_object().unwrap();
                for field in section.keys() {
                    assert!(inner.contains_key(field), "schema misses '{key}.{field}'");
                }
            }
        }
    }

    #[test]
    fn run_dir_contains_the_reproduction_set() {
        let dir = std::env::temp_dir().join(format!("run-dir-test-{}", std::process::id()));
        let cfg = RunConfig::default();
        prepare_run_dir(&dir, &cfg).unwrap();
        for name in [
            "config.resolved.json",
            "config.schema.json",
            "seeds.json",
            "code_hash.txt",
        ] {
            assert!(dir.join(name).exists(), "missing {name}");
        }
        let text = fs::read_to_string(dir.join("config.resolved.json")).unwrap();
        RunConfig::from_json_str(&text).unwrap();
        let hash = fs::read_to_string(dir.join("code_hash.txt")).unwrap();
        assert_eq!(hash.trim().len(), 16);
        fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn sections_map_onto_runtime_configs() {
        let cfg = RunConfig::default();
        let model = cfg.model.to_model_config(cfg.dialect, cfg.seed);
        assert_eq!(model.d(), cfg.d());
        let fit = cfg.train.to_fit_config(cfg.seed);
        assert_eq!(fit.epochs, cfg.train.epochs);
        assert_eq!(fit.adam.lr, cfg.train.lr);
        let a2c = cfg.rl.to_a2c_config(cfg.seed);
        assert_eq!(a2c.envs, cfg.rl.envs);
        assert_eq!(a2c.adam.lr, cfg.rl.lr);
    }
}
