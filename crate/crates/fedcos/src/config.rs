//! Experiment config files: a sectioned TOML schema that resolves into a
//! runnable [`SimConfig`]. Unknown keys are rejected and every field is
//! validated with an error naming the key before any compute starts.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::PartitionScheme;
use crate::error::{Error, Result};
use crate::penalties::PenaltyConfig;
use crate::scenes;
use crate::simulator::{DataSpec, ObjectiveSpec, RuleKind, SimConfig};
use crate::strategies::LocalPlan;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    #[serde(default)]
    pub data: Option<DataSection>,
    pub model: ModelSection,
    pub strategy: StrategySection,
    pub sim: SimSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub root_seed: u64,
    pub rounds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    /// idx | cifar10 | blobs | none
    pub source: String,
    // blobs
    pub classes: Option<usize>,
    pub per_class: Option<usize>,
    pub dim: Option<usize>,
    pub spread: Option<f64>,
    pub eval_per_class: Option<usize>,
    // idx
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub eval_images: Option<PathBuf>,
    pub eval_labels: Option<PathBuf>,
    // cifar10
    pub train_files: Option<Vec<PathBuf>>,
    pub eval_files: Option<Vec<PathBuf>>,
    // idx/cifar10
    pub train_limit: Option<usize>,
    // partitioning: iid | totally_noniid | mixed | shards
    pub partition: Option<String>,
    pub partition_p: Option<f64>,
    pub shards_per_client: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// quadratic | softmax | mlp
    pub kind: String,
    /// mlp hidden width
    pub hidden: Option<usize>,
    /// quadratic scene: two_client | three_client
    pub variant: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategySection {
    /// fedavg | fedprox | fedavgm | fedopt
    pub base: String,
    /// fedprox mu / fedavgm beta / fedopt eta_g
    pub base_param: Option<f64>,
    #[serde(default)]
    pub fedcos_mu: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub n_clients: usize,
    pub participation: f64,
    pub eta: f64,
    pub steps_per_round: usize,
    pub batch_size: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    #[serde(default = "default_tracked_pair")]
    pub tracked_pair: [usize; 2],
}

fn default_eval_every() -> usize {
    1
}

fn default_tracked_pair() -> [usize; 2] {
    [0, 1]
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config {
            key: "config".to_string(),
            reason: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config { key, reason } if key == "config" => Error::Config {
                key: path.display().to_string(),
                reason,
            },
            other => other,
        })
    }

    /// Command-line overrides applied before resolution.
    pub fn apply_overrides(&mut self, seed: Option<u64>, eval_every: Option<usize>) {
        if let Some(s) = seed {
            self.experiment.root_seed = s;
        }
        if let Some(e) = eval_every {
            self.sim.eval_every = e;
        }
    }

    fn partition_scheme(data: &DataSection) -> Result<PartitionScheme> {
        let scheme = data
            .partition
            .as_deref()
            .ok_or_else(|| Error::config("data.partition", "missing partition scheme"))?;
        match scheme {
            "iid" => Ok(PartitionScheme::Iid),
            "totally_noniid" => Ok(PartitionScheme::TotallyNonIid),
            "mixed" => {
                let p = data.partition_p.ok_or_else(|| {
                    Error::config("data.partition_p", "mixed partition needs a fraction p")
                })?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::config("data.partition_p", "must be in [0, 1]"));
                }
                Ok(PartitionScheme::Mixed { p })
            }
            "shards" => {
                let k = data.shards_per_client.ok_or_else(|| {
                    Error::config(
                        "data.shards_per_client",
                        "shards partition needs shards_per_client",
                    )
                })?;
                Ok(PartitionScheme::Shards { per_client: k })
            }
            other => Err(Error::config(
                "data.partition",
                format!("unknown scheme '{other}' (iid, totally_noniid, mixed, shards)"),
            )),
        }
    }

    fn resolve_data(&self) -> Result<DataSpec> {
        let Some(data) = &self.data else {
            return Ok(DataSpec::None);
        };
        match data.source.as_str() {
            "none" => Ok(DataSpec::None),
            "blobs" => {
                let req_usize = |field: &str, v: Option<usize>| {
                    v.ok_or_else(|| {
                        Error::config(&format!("data.{field}"), "required for source = blobs")
                    })
                };
                Ok(DataSpec::Blobs {
                    classes: req_usize("classes", data.classes)?,
                    per_class: req_usize("per_class", data.per_class)?,
                    dim: req_usize("dim", data.dim)?,
                    spread: data.spread.ok_or_else(|| {
                        Error::config("data.spread", "required for source = blobs")
                    })?,
                    eval_per_class: req_usize("eval_per_class", data.eval_per_class)?,
                    partition: Self::partition_scheme(data)?,
                })
            }
            "idx" => {
                let req = |field: &str, v: &Option<PathBuf>| {
                    v.clone().ok_or_else(|| {
                        Error::config(&format!("data.{field}"), "required for source = idx")
                    })
                };
                Ok(DataSpec::Idx {
                    train_images: req("train_images", &data.train_images)?,
                    train_labels: req("train_labels", &data.train_labels)?,
                    eval_images: req("eval_images", &data.eval_images)?,
                    eval_labels: req("eval_labels", &data.eval_labels)?,
                    train_limit: data.train_limit,
                    partition: Self::partition_scheme(data)?,
                })
            }
            "cifar10" => Ok(DataSpec::Cifar10 {
                train_files: data.train_files.clone().ok_or_else(|| {
                    Error::config("data.train_files", "required for source = cifar10")
                })?,
                eval_files: data.eval_files.clone().ok_or_else(|| {
                    Error::config("data.eval_files", "required for source = cifar10")
                })?,
                train_limit: data.train_limit,
                partition: Self::partition_scheme(data)?,
            }),
            other => Err(Error::config(
                "data.source",
                format!("unknown source '{other}' (idx, cifar10, blobs, none)"),
            )),
        }
    }

    fn resolve_objective(&self) -> Result<ObjectiveSpec> {
        match self.model.kind.as_str() {
            "quadratic" => {
                let variant = self.model.variant.as_deref().ok_or_else(|| {
                    Error::config("model.variant", "quadratic needs two_client or three_client")
                })?;
                match variant {
                    "two_client" => Ok(ObjectiveSpec::Quadratics {
                        problems: vec![scenes::toy_problem_f1(), scenes::toy_problem_f2()],
                        start: scenes::TOY_TWO_CLIENT_START.to_vec(),
                    }),
                    "three_client" => Ok(ObjectiveSpec::Quadratics {
                        problems: vec![
                            scenes::toy_problem_f1(),
                            scenes::toy_problem_f2(),
                            scenes::toy_problem_f3(),
                        ],
                        start: scenes::TOY_THREE_CLIENT_START.to_vec(),
                    }),
                    other => Err(Error::config(
                        "model.variant",
                        format!("unknown variant '{other}'"),
                    )),
                }
            }
            "softmax" => Ok(ObjectiveSpec::Softmax),
            "mlp" => Ok(ObjectiveSpec::Mlp {
                hidden: self.model.hidden.unwrap_or(64),
            }),
            other => Err(Error::config(
                "model.kind",
                format!("unknown kind '{other}' (quadratic, softmax, mlp)"),
            )),
        }
    }

    fn resolve_strategy(&self) -> Result<(RuleKind, PenaltyConfig)> {
        let s = &self.strategy;
        let need_param = |what: &str| {
            s.base_param.ok_or_else(|| {
                Error::config(
                    "strategy.base_param",
                    format!("required for base = {what}"),
                )
            })
        };
        let (rule, mu_prox) = match s.base.as_str() {
            "fedavg" => {
                if s.base_param.is_some() {
                    return Err(Error::config(
                        "strategy.base_param",
                        "fedavg takes no base_param",
                    ));
                }
                (RuleKind::Average, 0.0)
            }
            "fedprox" => (RuleKind::Average, need_param("fedprox")?),
            "fedavgm" => (
                RuleKind::Momentum {
                    beta: need_param("fedavgm")?,
                },
                0.0,
            ),
            "fedopt" => (
                RuleKind::Scaled {
                    eta_g: need_param("fedopt")?,
                },
                0.0,
            ),
            other => {
                return Err(Error::config(
                    "strategy.base",
                    format!("unknown base '{other}' (fedavg, fedprox, fedavgm, fedopt)"),
                ))
            }
        };
        Ok((
            rule,
            PenaltyConfig {
                mu_cos: s.fedcos_mu,
                mu_prox,
            },
        ))
    }

    /// Resolves and validates into a runnable simulator config.
    pub fn resolve(&self) -> Result<SimConfig> {
        let (rule, penalties) = self.resolve_strategy()?;
        let cfg = SimConfig {
            name: self.experiment.name.clone(),
            root_seed: self.experiment.root_seed,
            rounds: self.experiment.rounds,
            n_clients: self.sim.n_clients,
            participation: self.sim.participation,
            plan: LocalPlan {
                eta: self.sim.eta,
                steps_per_round: self.sim.steps_per_round,
                batch_size: self.sim.batch_size,
                penalties,
            },
            rule,
            objective: self.resolve_objective()?,
            data: self.resolve_data()?,
            eval_every: self.sim.eval_every,
            tracked_pair: (self.sim.tracked_pair[0], self.sim.tracked_pair[1]),
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
