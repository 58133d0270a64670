//! Round orchestration: broadcast -> local training -> aggregation -> server
//! rule -> direction update -> evaluation, with per-round mechanism metrics.
//!
//! Runs are bit-reproducible for a fixed root seed: every random stream is
//! addressed by a [`SeedPath`], client results are reduced in ascending id
//! order, and the worker count changes only wall time.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    gen_blobs, load_cifar10_bin, load_idx, partition, EpochSampler, LabeledDataset,
    PartitionScheme, PartitionSpec,
};
use crate::error::{Error, Result};
use crate::numkit::{cosine_between, rng_for, ParamVector, SeedPath};
use crate::objectives::{MlpObjective, Objective, QuadraticObjective, SoftmaxRegression};
use crate::penalties::DirectionAnchor;
use crate::strategies::{
    aggregate_weighted, local_train, server_apply, update_direction, ClientData, ClientUpdate,
    LocalPlan, ServerRule,
};

/// Server rule selector (the runtime state lives in [`ServerRule`]).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum RuleKind {
    Average,
    Momentum { beta: f64 },
    Scaled { eta_g: f64 },
}

impl RuleKind {
    pub fn fresh(&self) -> ServerRule {
        match *self {
            RuleKind::Average => ServerRule::Average,
            RuleKind::Momentum { beta } => ServerRule::Momentum {
                beta,
                velocity: None,
            },
            RuleKind::Scaled { eta_g } => ServerRule::Scaled { eta_g },
        }
    }
}

/// One convex quadratic client problem, in serializable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadraticProblemSpec {
    pub matrix: Vec<Vec<f64>>,
    pub center: Vec<f64>,
}

/// What each client optimizes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ObjectiveSpec {
    /// One quadratic per client plus a shared start point; no dataset.
    Quadratics {
        problems: Vec<QuadraticProblemSpec>,
        start: Vec<f64>,
    },
    /// Shared softmax regression over the partitioned dataset.
    Softmax,
    /// Shared 2-layer MLP over the partitioned dataset.
    Mlp { hidden: usize },
}

/// Where training and evaluation data come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataSpec {
    /// No dataset (quadratic scenes).
    None,
    /// Synthetic Gaussian blobs; the eval split shares class centers but
    /// draws fresh noise.
    Blobs {
        classes: usize,
        per_class: usize,
        dim: usize,
        spread: f64,
        eval_per_class: usize,
        partition: PartitionScheme,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        eval_images: PathBuf,
        eval_labels: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        partition: PartitionScheme,
    },
    Cifar10 {
        train_files: Vec<PathBuf>,
        eval_files: Vec<PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        partition: PartitionScheme,
    },
}

/// A fully resolved, rerunnable experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub name: String,
    pub root_seed: u64,
    pub rounds: usize,
    pub n_clients: usize,
    /// Fraction of clients sampled each round; 1.0 is cross-silo.
    pub participation: f64,
    pub plan: LocalPlan,
    pub rule: RuleKind,
    pub objective: ObjectiveSpec,
    pub data: DataSpec,
    pub eval_every: usize,
    /// Client pair whose displacement cosine and model distance are recorded.
    pub tracked_pair: (usize, usize),
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::config("experiment.rounds", "must be >= 1"));
        }
        if self.n_clients == 0 {
            return Err(Error::config("sim.n_clients", "must be >= 1"));
        }
        if !(self.participation.is_finite()
            && self.participation > 0.0
            && self.participation <= 1.0)
        {
            return Err(Error::config("sim.participation", "must be in (0, 1]"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("sim.eval_every", "must be >= 1"));
        }
        if self.tracked_pair.0 >= self.n_clients || self.tracked_pair.1 >= self.n_clients {
            return Err(Error::config(
                "sim.tracked_pair",
                "tracked client ids must be < n_clients",
            ));
        }
        self.plan.validate()?;
        self.rule.fresh().validate()?;
        match (&self.objective, &self.data) {
            (ObjectiveSpec::Quadratics { problems, start }, DataSpec::None) => {
                if problems.len() != self.n_clients {
                    return Err(Error::config(
                        "model.problems",
                        format!(
                            "{} quadratic problems for {} clients",
                            problems.len(),
                            self.n_clients
                        ),
                    ));
                }
                let dim = start.len();
                if dim == 0 {
                    return Err(Error::config("model.start", "start point must be non-empty"));
                }
                for p in problems {
                    if p.center.len() != dim || p.matrix.len() != dim {
                        return Err(Error::config(
                            "model.problems",
                            "problem dimensions must match the start point",
                        ));
                    }
                }
                Ok(())
            }
            (ObjectiveSpec::Quadratics { .. }, _) => Err(Error::config(
                "data.source",
                "quadratic scenes take no dataset (source = none)",
            )),
            (_, DataSpec::None) => Err(Error::config(
                "data.source",
                "softmax/mlp objectives need a dataset",
            )),
            (ObjectiveSpec::Mlp { hidden }, _) if *hidden == 0 => {
                Err(Error::config("model.hidden", "must be >= 1"))
            }
            _ => match &self.data {
                DataSpec::Blobs {
                    classes,
                    per_class,
                    dim,
                    spread,
                    eval_per_class,
                    ..
                } => {
                    if *classes < 2 {
                        return Err(Error::config("data.classes", "need at least 2 classes"));
                    }
                    if *per_class == 0 || *dim == 0 || *eval_per_class == 0 {
                        return Err(Error::config("data.blobs", "counts must be positive"));
                    }
                    if !(spread.is_finite() && *spread >= 0.0) {
                        return Err(Error::config("data.spread", "must be finite and >= 0"));
                    }
                    Ok(())
                }
                DataSpec::Cifar10 { eval_files, .. } if eval_files.is_empty() => {
                    Err(Error::config("data.eval_files", "must name at least one file"))
                }
                _ => Ok(()),
            },
        }
    }
}

/// Per-round metrics: movement geometry plus held-out evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub participants: Vec<usize>,
    /// ||x_hat_new - x_hat|| after the server rule.
    pub global_move: f64,
    /// ||x_i - x_hat|| per participant, in participant order.
    pub local_moves: Vec<f64>,
    /// cos of the angle between the tracked pair's displacements; absent
    /// when either tracked client sat the round out.
    pub pair_cosine: Option<f64>,
    pub pair_model_distance: Option<f64>,
    pub eval_accuracy: Option<f64>,
    pub eval_loss: Option<f64>,
}

/// Run metadata sufficient to rerun the experiment exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMeta {
    pub config: SimConfig,
    pub code_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition_note: Option<String>,
    /// Wall time is observational, not part of the reproducible content; it
    /// is skipped on serialization so identical configs serialize
    /// identically.
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<RoundRecord>,
    pub meta: RunMeta,
}

impl History {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.records.iter().rev().find_map(|r| r.eval_accuracy)
    }

    pub fn best_accuracy(&self) -> Option<f64> {
        self.records
            .iter()
            .filter_map(|r| r.eval_accuracy)
            .fold(None, |best, a| Some(best.map_or(a, |b: f64| b.max(a))))
    }
}

/// First round whose recorded accuracy reaches the target, if any.
pub fn rounds_to_target(history: &History, target: f64) -> Option<usize> {
    history
        .records
        .iter()
        .find(|r| r.eval_accuracy.is_some_and(|a| a >= target))
        .map(|r| r.round)
}

/// Uniform sample without replacement of max(1, round(C * N)) client ids,
/// ascending, deterministic per (seed, round).
pub fn sample_clients(
    n_clients: usize,
    participation: f64,
    round: usize,
    seed: &SeedPath,
) -> Vec<usize> {
    let size = ((participation * n_clients as f64).round() as usize)
        .max(1)
        .min(n_clients);
    if size == n_clients {
        return (0..n_clients).collect();
    }
    let mut rng = rng_for(&seed.child("participants", round as u64));
    let mut ids: Vec<usize> = (0..n_clients).collect();
    for k in 0..size {
        let j = rng.random_range(k..n_clients);
        ids.swap(k, j);
    }
    let mut chosen = ids[..size].to_vec();
    chosen.sort_unstable();
    chosen
}

/// Movement geometry of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementMetrics {
    pub global_move: f64,
    pub local_moves: Vec<f64>,
    pub pair_cosine: Option<f64>,
    pub pair_model_distance: Option<f64>,
}

/// Computes d_i = x_i - x_hat per participant, the global move after the
/// server rule, and the tracked pair's direction cosine and model distance.
/// Absent tracked clients yield absent pair metrics, not an error.
pub fn displacement_metrics(
    x_hat: &ParamVector,
    x_new: &ParamVector,
    updates: &[ClientUpdate],
    tracked: Option<(usize, usize)>,
) -> Result<DisplacementMetrics> {
    if updates.is_empty() {
        return Err(Error::EmptyAggregation);
    }
    let local_moves = updates
        .iter()
        .map(|u| u.params.distance(x_hat))
        .collect::<Result<Vec<f64>>>()?;
    let (mut pair_cosine, mut pair_model_distance) = (None, None);
    if let Some((a, b)) = tracked {
        let find = |id: usize| updates.iter().find(|u| u.client_id == id);
        if let (Some(ua), Some(ub)) = (find(a), find(b)) {
            let da = ua.params.sub(x_hat)?;
            let db = ub.params.sub(x_hat)?;
            pair_cosine = Some(cosine_between(&da, &db)?);
            pair_model_distance = Some(ua.params.distance(&ub.params)?);
        }
    }
    Ok(DisplacementMetrics {
        global_move: x_new.distance(x_hat)?,
        local_moves,
        pair_cosine,
        pair_model_distance,
    })
}

/// Full-pass top-1 accuracy and mean loss on a held-out set. Argmax ties
/// break toward the lowest class index.
pub fn evaluate(
    objective: &dyn Objective,
    x: &ParamVector,
    eval: &LabeledDataset,
) -> Result<(f64, f64)> {
    if eval.is_empty() {
        return Err(Error::config("data.eval", "evaluation set is empty"));
    }
    let mut correct = 0usize;
    for i in 0..eval.len() {
        let scores = objective
            .class_scores(x, eval.feature(i))
            .ok_or_else(|| Error::config("model", "objective does not classify"))?;
        let mut arg = 0usize;
        for (c, &s) in scores.iter().enumerate() {
            if s > scores[arg] {
                arg = c;
            }
        }
        if arg == eval.label(i) {
            correct += 1;
        }
    }
    let all: Vec<usize> = (0..eval.len()).collect();
    let loss = objective.loss(x, &eval.gather(&all)?)?;
    Ok((correct as f64 / eval.len() as f64, loss))
}

// ---------------------------------------------------------------------------
// Scene: resolved runtime state for one experiment
// ---------------------------------------------------------------------------

enum EvalSuite {
    Classification {
        objective: Arc<dyn Objective>,
        dataset: LabeledDataset,
    },
    /// Quadratic scenes report accuracy 0 and the equal-weight mean of the
    /// client losses (the global composite objective).
    Quadratic {
        problems: Vec<QuadraticObjective>,
    },
}

struct Scene {
    objectives: Vec<Arc<dyn Objective>>,
    samplers: Vec<Option<EpochSampler>>,
    dataset: Option<LabeledDataset>,
    eval: EvalSuite,
    init: ParamVector,
    partition_note: Option<String>,
}

impl Scene {
    fn build(cfg: &SimConfig, seed: &SeedPath) -> Result<Scene> {
        match &cfg.objective {
            ObjectiveSpec::Quadratics { problems, start } => {
                let start = ParamVector::new(start.clone())?;
                let built = problems
                    .iter()
                    .map(|p| {
                        QuadraticObjective::new(&p.matrix, ParamVector::new(p.center.clone())?)?
                            .with_start(start.clone())
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Scene {
                    objectives: built
                        .iter()
                        .cloned()
                        .map(|q| Arc::new(q) as Arc<dyn Objective>)
                        .collect(),
                    samplers: vec![None; problems.len()],
                    dataset: None,
                    eval: EvalSuite::Quadratic { problems: built },
                    init: start,
                    partition_note: None,
                })
            }
            spec => {
                let (train, eval_ds) = load_datasets(&cfg.data, seed)?;
                if train.feature_dim() != eval_ds.feature_dim() {
                    return Err(Error::config(
                        "data",
                        format!(
                            "train feature dim {} != eval feature dim {}",
                            train.feature_dim(),
                            eval_ds.feature_dim()
                        ),
                    ));
                }
                if eval_ds.n_classes() > train.n_classes() {
                    return Err(Error::config(
                        "data",
                        "eval set contains labels unseen in training",
                    ));
                }
                let objective: Arc<dyn Objective> = match spec {
                    ObjectiveSpec::Softmax => Arc::new(SoftmaxRegression::new(
                        train.feature_dim(),
                        train.n_classes(),
                    )?),
                    ObjectiveSpec::Mlp { hidden } => Arc::new(MlpObjective::new(
                        train.feature_dim(),
                        *hidden,
                        train.n_classes(),
                    )?),
                    ObjectiveSpec::Quadratics { .. } => unreachable!("handled above"),
                };
                let scheme = data_partition_scheme(&cfg.data)
                    .expect("statistical data specs carry a partition scheme");
                let split = partition(
                    &train,
                    &PartitionSpec {
                        scheme,
                        n_clients: cfg.n_clients,
                        seed: seed.child("partition", 0),
                    },
                )?;
                let samplers = split
                    .clients()
                    .iter()
                    .enumerate()
                    .map(|(i, indices)| {
                        EpochSampler::new(indices.clone(), seed.child("client", i as u64))
                            .map(Some)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let init = objective.init_params(&seed.child("init", 0));
                Ok(Scene {
                    objectives: vec![objective.clone(); cfg.n_clients],
                    samplers,
                    dataset: Some(train),
                    eval: EvalSuite::Classification {
                        objective,
                        dataset: eval_ds,
                    },
                    init,
                    partition_note: Some(split.note().to_string()),
                })
            }
        }
    }

    fn evaluate(&self, x: &ParamVector) -> Result<(f64, f64)> {
        match &self.eval {
            EvalSuite::Classification { objective, dataset } => {
                evaluate(objective.as_ref(), x, dataset)
            }
            EvalSuite::Quadratic { problems } => {
                let mut total = 0.0;
                for p in problems {
                    total += p.loss(x, &crate::objectives::Batch::whole())?;
                }
                Ok((0.0, total / problems.len() as f64))
            }
        }
    }
}

fn data_partition_scheme(data: &DataSpec) -> Option<PartitionScheme> {
    match data {
        DataSpec::None => None,
        DataSpec::Blobs { partition, .. }
        | DataSpec::Idx { partition, .. }
        | DataSpec::Cifar10 { partition, .. } => Some(partition.clone()),
    }
}

fn truncate_dataset(ds: LabeledDataset, limit: Option<usize>) -> Result<LabeledDataset> {
    match limit {
        None => Ok(ds),
        Some(n) if n >= ds.len() => Ok(ds),
        Some(n) => {
            let keep: Vec<usize> = (0..n).collect();
            let mut features = Vec::with_capacity(n * ds.feature_dim());
            let mut labels = Vec::with_capacity(n);
            for &i in &keep {
                features.extend_from_slice(ds.feature(i));
                labels.push(ds.label(i));
            }
            LabeledDataset::new(
                features,
                labels,
                ds.feature_dim(),
                ds.n_classes(),
                format!("{}[..{n}]", ds.provenance()),
            )
        }
    }
}

fn load_datasets(data: &DataSpec, seed: &SeedPath) -> Result<(LabeledDataset, LabeledDataset)> {
    match data {
        DataSpec::None => Err(Error::config("data.source", "no dataset configured")),
        DataSpec::Blobs {
            classes,
            per_class,
            dim,
            spread,
            eval_per_class,
            ..
        } => {
            let data_seed = seed.child("data", 0);
            let train = gen_blobs(*classes, *per_class, *dim, *spread, &data_seed, 0)?;
            let eval = gen_blobs(*classes, *eval_per_class, *dim, *spread, &data_seed, 1)?;
            Ok((train, eval))
        }
        DataSpec::Idx {
            train_images,
            train_labels,
            eval_images,
            eval_labels,
            train_limit,
            ..
        } => {
            let train = truncate_dataset(load_idx(train_images, train_labels)?, *train_limit)?;
            let eval = load_idx(eval_images, eval_labels)?;
            Ok((train, eval))
        }
        DataSpec::Cifar10 {
            train_files,
            eval_files,
            train_limit,
            ..
        } => {
            let train = truncate_dataset(load_cifar10_bin(train_files)?, *train_limit)?;
            let eval = load_cifar10_bin(eval_files)?;
            Ok((train, eval))
        }
    }
}

// ---------------------------------------------------------------------------
// The experiment driver
// ---------------------------------------------------------------------------

fn train_round(
    scene: &mut Scene,
    x_hat: &ParamVector,
    anchor: &DirectionAnchor,
    plan: &LocalPlan,
    participants: &[usize],
    round: usize,
    pool: Option<&rayon::ThreadPool>,
) -> Result<Vec<ClientUpdate>> {
    let selected: Vec<bool> = {
        let mut mask = vec![false; scene.samplers.len()];
        for &id in participants {
            mask[id] = true;
        }
        mask
    };
    let objectives = &scene.objectives;
    let dataset = scene.dataset.as_ref();
    let run_one = |client_id: usize, sampler: &mut Option<EpochSampler>| {
        let data = match (dataset, sampler.as_mut()) {
            (Some(ds), Some(s)) => ClientData::Batched {
                dataset: ds,
                sampler: s,
            },
            _ => ClientData::Whole,
        };
        local_train(
            objectives[client_id].as_ref(),
            x_hat,
            anchor,
            plan,
            data,
            client_id,
        )
        .map_err(|e| e.at_round(round, client_id))
    };
    let results: Vec<Result<ClientUpdate>> = match pool {
        Some(pool) => pool.install(|| {
            scene
                .samplers
                .par_iter_mut()
                .enumerate()
                .filter(|(i, _)| selected[*i])
                .map(|(i, sampler)| run_one(i, sampler))
                .collect()
        }),
        None => scene
            .samplers
            .iter_mut()
            .enumerate()
            .filter(|(i, _)| selected[*i])
            .map(|(i, sampler)| run_one(i, sampler))
            .collect(),
    };
    results.into_iter().collect()
}

/// Per-client partition summary for inspection tooling: sample count and
/// label histogram, plus the split's mode note. Uses exactly the seed paths
/// a run would use, so the preview matches the training split.
pub fn partition_summary(cfg: &SimConfig) -> Result<(Vec<(usize, usize, Vec<usize>)>, String)> {
    cfg.validate()?;
    let seed = SeedPath::new(cfg.root_seed);
    let scheme = data_partition_scheme(&cfg.data)
        .ok_or_else(|| Error::config("data.source", "this scene has no dataset to partition"))?;
    let (train, _eval) = load_datasets(&cfg.data, &seed)?;
    let split = partition(
        &train,
        &PartitionSpec {
            scheme,
            n_clients: cfg.n_clients,
            seed: seed.child("partition", 0),
        },
    )?;
    let clients = split
        .clients()
        .iter()
        .enumerate()
        .map(|(i, indices)| (i, indices.len(), train.label_histogram(indices)))
        .collect();
    Ok((clients, split.note().to_string()))
}

/// Runs the experiment, streaming each finished round's record and the
/// post-round global model through `on_round` before the next round starts.
pub fn run_experiment_with(
    cfg: &SimConfig,
    workers: usize,
    mut on_round: impl FnMut(&RoundRecord, &ParamVector) -> Result<()>,
) -> Result<History> {
    cfg.validate()?;
    let started = Instant::now();
    let seed = SeedPath::new(cfg.root_seed);
    let mut scene = Scene::build(cfg, &seed)?;
    let pool = if workers > 1 {
        Some(
            rayon::ThreadPoolBuilder::new()
                .num_threads(workers)
                .build()
                .map_err(|e| Error::Usage(format!("worker pool: {e}")))?,
        )
    } else {
        None
    };

    let mut x_hat = scene.init.clone();
    let mut d_hat = ParamVector::zeros(x_hat.len());
    let mut rule = cfg.rule.fresh();
    let mut records = Vec::with_capacity(cfg.rounds);

    for round in 1..=cfg.rounds {
        let participants = sample_clients(cfg.n_clients, cfg.participation, round, &seed);
        let anchor = DirectionAnchor::new(x_hat.clone(), d_hat.clone(), round - 1)?;
        let updates = train_round(
            &mut scene,
            &x_hat,
            &anchor,
            &cfg.plan,
            &participants,
            round,
            pool.as_ref(),
        )?;
        let aggregated = aggregate_weighted(&updates)?;
        let x_new = server_apply(&mut rule, &x_hat, &aggregated)?;
        let metrics = displacement_metrics(&x_hat, &x_new, &updates, Some(cfg.tracked_pair))?;

        let evaluated = if round % cfg.eval_every == 0 || round == cfg.rounds {
            Some(scene.evaluate(&x_new)?)
        } else {
            None
        };
        let record = RoundRecord {
            round,
            participants,
            global_move: metrics.global_move,
            local_moves: metrics.local_moves,
            pair_cosine: metrics.pair_cosine,
            pair_model_distance: metrics.pair_model_distance,
            eval_accuracy: evaluated.map(|e| e.0),
            eval_loss: evaluated.map(|e| e.1),
        };
        on_round(&record, &x_new)?;
        records.push(record);

        d_hat = update_direction(&x_new, &x_hat)?;
        x_hat = x_new;
    }

    Ok(History {
        records,
        meta: RunMeta {
            config: cfg.clone(),
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            partition_note: scene.partition_note.clone(),
            wall_time_s: started.elapsed().as_secs_f64(),
        },
    })
}

pub fn run_experiment(cfg: &SimConfig, workers: usize) -> Result<History> {
    run_experiment_with(cfg, workers, |_, _| Ok(()))
}
