use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::base::PretrainConfig;
use super::synthetic::LEAK_INSTRUCTION;
use super::PipelineError;
use crate::evalkit::TaskKind;
use crate::oracle::BackendConfig;
use crate::peft::AdapterConfig;
use crate::prompting::{InstructionSet, Role};
use crate::toylm::{CheckpointKind, ModelConfig};

/// Which of FIAT's ingredients a run uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    pub use_cot: bool,
    pub use_instructions: bool,
    pub use_peft: bool,
    pub base_checkpoint: CheckpointKind,
}

impl Variant {
    pub const FIAT: Variant = Variant {
        use_cot: true,
        use_instructions: true,
        use_peft: true,
        base_checkpoint: CheckpointKind::InstructionPretrained,
    };

    /// Plain fine-tuning: every weight of a raw base, bare inputs.
    pub const FINE_TUNE: Variant = Variant {
        use_cot: false,
        use_instructions: false,
        use_peft: false,
        base_checkpoint: CheckpointKind::RawPretrained,
    };

    pub fn is_fiat(&self) -> bool {
        *self == Self::FIAT
    }

    /// Short label used in reports.
    pub fn label(&self) -> String {
        if self.is_fiat() {
            return "fiat".into();
        }
        if *self == Self::FINE_TUNE {
            return "fine-tune".into();
        }
        let mut parts = Vec::new();
        parts.push(if self.use_cot { "cot" } else { "no-cot" });
        parts.push(if self.use_instructions { "instr" } else { "no-instr" });
        parts.push(if self.use_peft { "peft" } else { "full-ft" });
        parts.push(match self.base_checkpoint {
            CheckpointKind::InstructionPretrained => "instr-base",
            CheckpointKind::RawPretrained => "raw-base",
        });
        parts.join("+")
    }
}

impl Default for Variant {
    fn default() -> Self {
        Self::FIAT
    }
}

/// Where examples come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    /// The generated leak task; labels are only recoverable from rationales.
    Synthetic {
        n_train: usize,
        n_dev: usize,
        #[serde(default)]
        n_test: usize,
    },
    /// JSONL files. Relative paths resolve against the config file.
    Files {
        task: TaskKind,
        train: PathBuf,
        validation: PathBuf,
        #[serde(default)]
        test: Option<PathBuf>,
    },
}

impl DataSource {
    pub fn task(&self) -> TaskKind {
        match self {
            DataSource::Synthetic { .. } => TaskKind::Attribution,
            DataSource::Files { task, .. } => *task,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
    /// Decode budget for answers.
    pub max_answer_tokens: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_steps: 500,
            batch_size: 8,
            lr: 1e-3,
            eval_every: 25,
            patience: 5,
            max_answer_tokens: 24,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IclConfig {
    pub instruction: String,
    /// Exemplars drawn from the training split for each language.
    pub per_language: usize,
}

impl Default for IclConfig {
    fn default() -> Self {
        Self {
            instruction: "Decide whether the answer is supported by the passage. Think it through, then give the answer."
                .into(),
            per_language: 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub name: String,
    pub seed: u64,
    pub data: DataSource,
    pub variant: Variant,
    pub model: ModelConfig,
    pub pretrain: PretrainConfig,
    pub adapter: AdapterConfig,
    pub train: TrainConfig,
    pub backend: BackendConfig,
    /// Mock backends only: chance that a rationale gives the label away.
    pub leak_strength: f64,
    /// I_β, sent to the oracle.
    pub reasoning: InstructionSet,
    /// I_τ, prepended to the small model's inputs.
    pub tuning: InstructionSet,
    pub icl: IclConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "fiat".into(),
            seed: 17,
            data: DataSource::Synthetic {
                n_train: 200,
                n_dev: 200,
                n_test: 200,
            },
            variant: Variant::FIAT,
            model: ModelConfig::default(),
            pretrain: PretrainConfig::default(),
            adapter: AdapterConfig::default(),
            train: TrainConfig::default(),
            backend: BackendConfig::mock("mock"),
            leak_strength: 1.0,
            reasoning: InstructionSet::new(
                "leak-reasoning",
                Role::Reasoning,
                "Point out the clue in the passage that settles whether the answer is supported.",
            ),
            tuning: InstructionSet::new("leak-tuning", Role::Tuning, LEAK_INSTRUCTION),
            icl: IclConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn with_variant(&self, variant: Variant) -> Self {
        Self {
            variant,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: &str| Err(PipelineError::InvalidConfig(m.to_string()));
        self.model.validate()?;
        if self.reasoning.role != Role::Reasoning {
            return bad("reasoning instruction set must have the reasoning role");
        }
        if self.tuning.role != Role::Tuning {
            return bad("tuning instruction set must have the tuning role");
        }
        self.reasoning.validate()?;
        self.tuning.validate()?;
        if self.reasoning.id == self.tuning.id {
            return bad("instruction set ids must differ");
        }
        if self.train.batch_size == 0 || self.train.eval_every == 0 {
            return bad("batch_size and eval_every must be positive");
        }
        if !(self.train.lr > 0.0 && self.train.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.leak_strength) {
            return bad("leak_strength must lie in [0, 1]");
        }
        if self.train.max_answer_tokens == 0 || self.train.max_answer_tokens >= self.model.max_seq_len {
            return bad("max_answer_tokens must be positive and below max_seq_len");
        }
        self.backend.validate()?;
        Ok(())
    }

    pub fn from_json(text: &str, overrides: &[String]) -> Result<Self, PipelineError> {
        // Overrides go on top of the defaulted config so partial paths resolve.
        let parsed: RunConfig = serde_json::from_str(text)?;
        let mut value = serde_json::to_value(&parsed)?;
        for o in overrides {
            apply_override(&mut value, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(value)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file, applies `key.path=value` overrides and makes
    /// data paths absolute.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::InvalidConfig(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_json(&text, overrides)?;
        if let (DataSource::Files { train, validation, test, .. }, Some(dir)) = (&mut cfg.data, path.parent()) {
            for p in [Some(train), Some(validation), test.as_mut()].into_iter().flatten() {
                if p.is_relative() {
                    *p = dir.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Sets `a.b.c=value` in a JSON tree. The value is parsed as JSON when
/// possible and taken as a string otherwise.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), PipelineError> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| PipelineError::InvalidConfig(format!("override {assignment:?} lacks '='")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(PipelineError::InvalidConfig(format!("bad override path {path:?}")));
    }
    let mut node = root;
    for k in &keys[..keys.len() - 1] {
        if !node.is_object() {
            return Err(PipelineError::InvalidConfig(format!("{path}: {k} is not an object")));
        }
        node = node
            .as_object_mut()
            .expect("checked")
            .entry(k.to_string())
            .or_insert_with(|| Value::Object(Default::default()));
    }
    let obj = node
        .as_object_mut()
        .ok_or_else(|| PipelineError::InvalidConfig(format!("{path}: parent is not an object")))?;
    obj.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_fiat_and_valid() {
        let c = RunConfig::default();
        assert!(c.variant.is_fiat());
        c.validate().unwrap();
        let back = RunConfig::from_json(&c.to_json(), &[]).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn fiat_needs_every_flag() {
        let mut v = Variant::FIAT;
        v.use_peft = false;
        assert!(!v.is_fiat());
        assert_eq!(v.label(), "cot+instr+full-ft+instr-base");
        assert_eq!(Variant::FINE_TUNE.label(), "fine-tune");
    }

    #[test]
    fn overrides_apply_after_parse() {
        let c = RunConfig::from_json(
            "{}",
            &["train.max_steps=7".into(), "variant.use_cot=false".into(), "name=abc".into()],
        )
        .unwrap();
        assert_eq!(c.train.max_steps, 7);
        assert!(!c.variant.use_cot);
        assert_eq!(c.name, "abc");
        assert!(RunConfig::from_json("{}", &["train.max_steps".into()]).is_err());
        assert!(RunConfig::from_json("{}", &["leak_strength=2".into()]).is_err());
    }
}
