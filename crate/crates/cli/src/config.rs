//! Run configuration: a sectioned TOML document. Missing keys take the
//! task's defaults; unknown keys are rejected.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use enas_core::cnn::{MacroConfig, MicroConfig};
use enas_core::controller::ControllerConfig;
use enas_core::data::{load_images_cifar_binary, load_text, shapes_dataset, synth_lm_corpus, Grammar, ImageSet, Level, TextCorpus};
use enas_core::optim::OptimizerKind;
use enas_core::rng::child_rng;
use enas_core::rnn::DropoutRates;
use enas_core::schedule::LrSchedule;
use enas_core::space::{SpaceKind, SpaceSpec};
use enas_core::trainer::{ImageNetConfig, ImageTask, ImageTaskConfig, LmTask, LmTaskConfig, RewardSpec, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfigFile {
    pub run: RunSection,
    pub space: SpaceSection,
    pub data: DataSection,
    pub lm: LmSection,
    pub image: ImageSection,
    pub controller: ControllerSection,
    pub shared: SharedSection,
    pub derive: DeriveSection,
    pub retrain: RetrainSection,
    pub random: RandomSection,
    pub ablate: AblateSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    /// `lm` or `image`.
    pub task: String,
    pub out: PathBuf,
    /// Adds a wall-clock field to metrics rows (breaks byte-identical reruns).
    pub timestamps: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSection {
    pub kind: String,
    pub nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// `synthetic` or `text` for LM; `shapes` or `cifar` for images.
    pub source: String,
    pub grammar: String,
    pub length: usize,
    pub path: String,
    pub test_path: String,
    /// `char` or `word`.
    pub level: String,
    pub image_side: usize,
    pub per_class: usize,
    pub test_per_class: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmSection {
    pub embed: usize,
    pub hidden: usize,
    pub tied: bool,
    pub batch: usize,
    pub steps: usize,
    pub eval_batch: usize,
    pub eval_steps: usize,
    pub dropout_input: f64,
    pub dropout_hidden: f64,
    pub dropout_output: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImageSection {
    pub channels: usize,
    pub batch: usize,
    pub eval_batch: usize,
    pub augment: bool,
    pub projection_bn: bool,
    /// Convolution cells per block (micro space).
    pub repeats: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    pub hidden: usize,
    pub temperature: f64,
    /// `0` disables the tanh squashing.
    pub tanh_constant: f64,
    pub init_range: f64,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub entropy_weight: f64,
    pub reward_c: f64,
    pub baseline_decay: f64,
    /// `0` disables the skip-density penalty.
    pub skip_weight: f64,
    pub skip_rho: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharedSection {
    pub epochs: usize,
    /// `sgd`, `nesterov` or `adam`.
    pub optimizer: String,
    pub momentum: f64,
    /// `constant`, `exponential` or `cosine`.
    pub schedule: String,
    pub lr: f64,
    pub lr_min: f64,
    pub decay: f64,
    pub decay_start: u32,
    pub t0: f64,
    pub t_mul: f64,
    /// `0` disables clipping.
    pub clip: f64,
    pub weight_decay: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeriveSection {
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrainSection {
    pub epochs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomSection {
    pub trials: usize,
    pub skip_prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    pub ensemble: usize,
}

impl RunConfigFile {
    /// Desk-scale defaults for `task` (`lm` or `image`).
    pub fn defaults(task: &str) -> Result<Self> {
        let lm = match task {
            "lm" => true,
            "image" => false,
            other => bail!("unknown task `{other}` (expected lm or image)"),
        };
        Ok(RunConfigFile {
            run: RunSection {
                seed: 0,
                task: task.into(),
                out: PathBuf::from("runs/default"),
                timestamps: false,
            },
            space: SpaceSection {
                kind: if lm { "rnn" } else { "macro" }.into(),
                nodes: 6,
            },
            data: DataSection {
                source: if lm { "synthetic" } else { "shapes" }.into(),
                grammar: "lagged".into(),
                length: 12_000,
                path: String::new(),
                test_path: String::new(),
                level: "char".into(),
                image_side: 8,
                per_class: 100,
                test_per_class: 25,
            },
            lm: LmSection {
                embed: 16,
                hidden: 16,
                tied: true,
                batch: 16,
                steps: 16,
                eval_batch: 8,
                eval_steps: 64,
                dropout_input: 0.0,
                dropout_hidden: 0.0,
                dropout_output: 0.0,
            },
            image: ImageSection {
                channels: 8,
                batch: 32,
                eval_batch: 64,
                augment: true,
                projection_bn: true,
                repeats: 1,
            },
            controller: ControllerSection {
                hidden: 32,
                temperature: 5.0,
                tanh_constant: 2.5,
                init_range: 0.1,
                lr: 3.5e-3,
                steps: 50,
                batch: 1,
                entropy_weight: 1e-4,
                reward_c: 80.0,
                baseline_decay: 0.99,
                skip_weight: if lm { 0.0 } else { 0.8 },
                skip_rho: 0.4,
            },
            shared: SharedSection {
                epochs: 30,
                optimizer: "adam".into(),
                momentum: 0.9,
                schedule: "constant".into(),
                lr: 0.01,
                lr_min: 0.001,
                decay: 0.96,
                decay_start: 15,
                t0: 10.0,
                t_mul: 2.0,
                clip: if lm { 0.25 } else { 0.0 },
                weight_decay: 0.0,
            },
            derive: DeriveSection { samples: 10 },
            retrain: RetrainSection { epochs: 30 },
            random: RandomSection { trials: 8, skip_prob: 0.4 },
            ablate: AblateSection { ensemble: 32 },
        })
    }

    /// Parses a document, filling missing keys from the task's defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        let task = user
            .get("run")
            .and_then(|r| r.get("task"))
            .and_then(|t| t.as_str())
            .unwrap_or("lm")
            .to_string();
        let mut base = toml::Table::try_from(Self::defaults(&task)?)?;
        merge(&mut base, user);
        let cfg: RunConfigFile = toml::Value::Table(base).try_into().map_err(|e: toml::de::Error| anyhow::anyhow!("{}", e.message()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in config {}", path.display()))
    }

    /// The fully resolved document, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.spec()?;
        let lm = self.run.task == "lm";
        if lm != (self.space.kind == "rnn") {
            bail!("task `{}` cannot search a `{}` space", self.run.task, self.space.kind);
        }
        self.train_config()?.validate()?;
        Ok(())
    }

    pub fn spec(&self) -> Result<SpaceSpec> {
        Ok(SpaceSpec::new(SpaceKind::parse(&self.space.kind)?, self.space.nodes)?)
    }

    pub fn is_lm(&self) -> bool {
        self.run.task == "lm"
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let s = &self.shared;
        let c = &self.controller;
        let shared_optimizer = match s.optimizer.as_str() {
            "sgd" => OptimizerKind::Sgd,
            "nesterov" => OptimizerKind::Nesterov { momentum: s.momentum },
            "adam" => OptimizerKind::adam(),
            other => bail!("unknown optimizer `{other}`"),
        };
        let shared_schedule = match s.schedule.as_str() {
            "constant" => LrSchedule::Constant { lr: s.lr },
            "exponential" => LrSchedule::ExponentialAfterEpoch {
                base: s.lr,
                factor: s.decay,
                start: s.decay_start,
            },
            "cosine" => LrSchedule::CosineRestarts {
                l_max: s.lr,
                l_min: s.lr_min,
                t0: s.t0,
                t_mul: s.t_mul,
            },
            other => bail!("unknown schedule `{other}`"),
        };
        Ok(TrainConfig {
            epochs: s.epochs,
            controller_steps: c.steps,
            controller_batch: c.batch,
            reward: if self.is_lm() {
                RewardSpec::InversePerplexity { c: c.reward_c }
            } else {
                RewardSpec::Accuracy
            },
            entropy_weight: c.entropy_weight,
            skip_prior: (c.skip_weight > 0.0).then_some((c.skip_rho, c.skip_weight)),
            baseline_decay: c.baseline_decay,
            controller: ControllerConfig {
                hidden: c.hidden,
                temperature: c.temperature,
                tanh_constant: (c.tanh_constant > 0.0).then_some(c.tanh_constant),
                init_range: c.init_range,
            },
            controller_optimizer: OptimizerKind::adam(),
            controller_lr: c.lr,
            shared_optimizer,
            shared_schedule,
            shared_clip: (s.clip > 0.0).then_some(s.clip),
            shared_weight_decay: s.weight_decay,
            derive_samples: self.derive.samples,
            retrain_epochs: self.retrain.epochs,
            random_skip_prob: self.random.skip_prob,
            seed: self.run.seed,
        })
    }

    pub fn corpus(&self) -> Result<TextCorpus> {
        let d = &self.data;
        Ok(match d.source.as_str() {
            "synthetic" => synth_lm_corpus(Grammar::parse(&d.grammar)?, d.length, &mut child_rng(self.run.seed, "data/corpus"))?,
            "text" => {
                let level = match d.level.as_str() {
                    "char" => Level::Char,
                    "word" => Level::Word,
                    other => bail!("unknown text level `{other}`"),
                };
                load_text(Path::new(&d.path), level)?
            }
            other => bail!("`{other}` is not a text source"),
        })
    }

    pub fn images(&self) -> Result<ImageSet> {
        let d = &self.data;
        Ok(match d.source.as_str() {
            "shapes" => shapes_dataset(d.image_side, d.per_class, d.test_per_class, &mut child_rng(self.run.seed, "data/shapes"))?,
            "cifar" => {
                let test = (!d.test_path.is_empty()).then(|| Path::new(&d.test_path));
                load_images_cifar_binary(Path::new(&d.path), test)?
            }
            other => bail!("`{other}` is not an image source"),
        })
    }

    pub fn lm_task(&self) -> Result<LmTask> {
        let l = &self.lm;
        let cfg = LmTaskConfig {
            embed: l.embed,
            hidden: l.hidden,
            nodes: self.space.nodes,
            tied: l.tied,
            batch: l.batch,
            steps: l.steps,
            eval_batch: l.eval_batch,
            eval_steps: l.eval_steps,
            dropout: DropoutRates {
                input: l.dropout_input,
                hidden: l.dropout_hidden,
                output: l.dropout_output,
            },
        };
        Ok(LmTask::new(Arc::new(self.corpus()?), cfg, &mut child_rng(self.run.seed, "task/init"))?)
    }

    pub fn image_task(&self) -> Result<ImageTask> {
        let data = self.images()?;
        let i = &self.image;
        let net = match SpaceKind::parse(&self.space.kind)? {
            SpaceKind::Macro => ImageNetConfig::Macro(MacroConfig {
                layers: self.space.nodes,
                channels: i.channels,
                classes: data.classes,
                in_channels: data.channels,
                projection_bn: i.projection_bn,
            }),
            SpaceKind::Micro => ImageNetConfig::Micro(MicroConfig {
                nodes: self.space.nodes,
                channels: i.channels,
                classes: data.classes,
                in_channels: data.channels,
                repeats: i.repeats,
                projection_bn: i.projection_bn,
            }),
            SpaceKind::Rnn => bail!("image task needs a macro or micro space"),
        };
        let cfg = ImageTaskConfig {
            net,
            batch: i.batch,
            eval_batch: i.eval_batch,
            augment: i.augment,
        };
        Ok(ImageTask::new(Arc::new(data), cfg, &mut child_rng(self.run.seed, "task/init"))?)
    }
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_resolves_to_defaults() {
        let c = RunConfigFile::parse("").unwrap();
        assert_eq!(c, RunConfigFile::defaults("lm").unwrap());
        let again = RunConfigFile::parse(&c.to_toml()).unwrap();
        assert_eq!(again, c);
    }

    #[test]
    fn unknown_key_is_named() {
        let e = RunConfigFile::parse("[shared]\nlearning_rate = 3\n").unwrap_err();
        assert!(format!("{e:#}").contains("learning_rate"), "{e:#}");
        assert!(RunConfigFile::parse("[nope]\n").is_err());
    }

    #[test]
    fn image_defaults_follow_task() {
        let c = RunConfigFile::parse("[run]\ntask = \"image\"\n").unwrap();
        assert_eq!(c.space.kind, "macro");
        assert!(RunConfigFile::parse("[run]\ntask = \"image\"\n[space]\nkind = \"rnn\"\n").is_err());
    }
}
