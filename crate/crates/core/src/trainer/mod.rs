//! Training loop, model selection and parameter bookkeeping.

mod adam;
mod checkpoint;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, clip_global_norm, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{Checkpoint, MAGIC, VERSION};

use crate::autodiff::{Graph, ParamStore};
use crate::corpus::{Corpus, Split, UtteranceMode};
use crate::error::{Error, Result};
use crate::evaluator::{evaluate, EvalOptions, Metrics};
use crate::featurizer::EmbeddingTable;
use crate::model::{Ablation, Dims, ModelConfig, SimModel};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    /// Upper bound on epochs.
    pub epochs: usize,
    /// Turns per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    /// Epochs without a dev joint-goal improvement before stopping.
    pub patience: usize,
    pub clip_norm: f64,
    pub ablation: Ablation,
    pub dims: Dims,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            dropout: 0.1,
            epochs: 100,
            batch_size: 8,
            seed: 1,
            patience: 10,
            clip_norm: 10.0,
            ablation: Ablation::default(),
            dims: Dims::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Config(format!("learning_rate {} must lie in (0, 1]", self.learning_rate)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.patience == 0 {
            return Err(Error::Config("epochs, batch_size and patience must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config(format!("clip_norm {} must be positive", self.clip_norm)));
        }
        apply_ablation(self).validate()
    }
}

/// Model wiring implied by a training config's sizes and ablation flags.
pub fn apply_ablation(config: &TrainConfig) -> ModelConfig {
    ModelConfig {
        dims: config.dims,
        ablation: config.ablation,
        dropout: config.dropout,
    }
}

/// Trainable count, or all parameters including the frozen word table.
pub fn count_parameters(model: &SimModel, trainable_only: bool) -> usize {
    let own = model.params.count(trainable_only);
    if trainable_only {
        own
    } else {
        own + model.words.rows() * model.words.dim()
    }
}

/// Parameter counts grouped by the name component before the first dot.
pub fn parameter_breakdown(params: &ParamStore) -> BTreeMap<String, usize> {
    let mut out = BTreeMap::new();
    for (name, p) in params.iter_by_name() {
        if p.frozen {
            continue;
        }
        let component = name.split('.').next().unwrap_or(name).to_string();
        *out.entry(component).or_insert(0) += p.value.len();
    }
    out
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_joint_goal: f64,
    pub dev_turn_request: f64,
    /// Seconds since training started.
    pub wallclock: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_joint_goal: Option<f64>,
}

/// Knobs that do not affect the learned parameters.
#[derive(Clone, Debug, Default)]
pub struct TrainOptions {
    /// Append one JSON line per epoch here.
    pub log_path: Option<PathBuf>,
    /// How the dev split is scored between epochs.
    pub eval: EvalOptions,
    /// Also score the training split each epoch.
    pub track_train_accuracy: bool,
    /// Stop once the epoch loss is below this value and, when tracked,
    /// training joint goal is perfect.
    pub stop_below_loss: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters of the best dev epoch.
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    /// Model as it stands after the last epoch.
    pub last: SimModel,
}

/// Trains on the train split, selecting the epoch with the best dev joint
/// goal (earliest on ties). All randomness derives from `config.seed`.
pub fn train(
    corpus: &Corpus,
    words: Arc<EmbeddingTable>,
    config: &TrainConfig,
    opts: &TrainOptions,
) -> Result<TrainOutcome> {
    config.validate()?;
    let train_split = corpus.split_owned(Split::Train);
    let dev_split = corpus.split_owned(Split::Dev);
    if train_split.iter().all(|d| d.turns.is_empty()) {
        return Err(Error::InvalidInput("the training split is empty".into()));
    }
    if dev_split.is_empty() {
        return Err(Error::InvalidInput("the dev split is empty".into()));
    }
    let mut model = SimModel::new(&apply_ablation(config), words, config.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);

    let pairs = corpus.ontology.pairs();
    let examples: Vec<(usize, usize)> = train_split
        .iter()
        .enumerate()
        .flat_map(|(d, dia)| (0..dia.turns.len()).map(move |t| (d, t)))
        .collect();
    let gold: Vec<Vec<Vec<_>>> = train_split
        .iter()
        .map(|d| {
            d.turns
                .iter()
                .map(|t| t.gold_turn_goals.iter().chain(&t.gold_turn_requests).cloned().collect())
                .collect()
        })
        .collect();

    let mut log = match &opts.log_path {
        Some(p) => Some(open_log(p)?),
        None => None,
    };
    let started = Instant::now();
    let mut adam = AdamState::new();
    let mut order = examples.clone();
    let mut history = Vec::new();
    let mut best: Option<(usize, Metrics, ParamStore)> = None;
    let mut since_best = 0;

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut clipped = 0;
        for batch in order.chunks(config.batch_size) {
            let (batch_loss, mut grads) = {
                let net = &model.net;
                let mut g = Graph::new(&model.params);
                let s_o = net.encode_ontology(&mut g, &pairs, &model.words, Some(&mut rng))?;
                let mut losses = Vec::with_capacity(batch.len());
                for &(d, t) in batch {
                    let turn = &train_split[d].turns[t];
                    losses.push(net.turn_loss(
                        &mut g,
                        &turn.utterance,
                        &turn.system_actions,
                        &gold[d][t],
                        &pairs,
                        &s_o,
                        &model.words,
                        Some(&mut rng),
                    )?);
                }
                let sum = g.sum_scalars(&losses)?;
                let mean = g.scale(sum, 1.0 / batch.len() as f64);
                g.backward(mean)?;
                (g.value(sum).item(), g.param_grads())
            };
            if clip_global_norm(&mut grads, config.clip_norm) > config.clip_norm {
                clipped += 1;
            }
            adam_step(&mut model.params, &grads, &mut adam, config.learning_rate)?;
            total += batch_loss;
        }
        if clipped > 0 {
            log::info!("epoch {epoch}: gradient clipped on {clipped} steps");
        }
        let train_loss = total / examples.len() as f64;
        let dev = evaluate(&model, &dev_split, &corpus.ontology, &opts.eval)?.metrics;
        let train_joint_goal = if opts.track_train_accuracy {
            let train_opts = EvalOptions {
                mode: UtteranceMode::Transcript,
                ..opts.eval
            };
            Some(evaluate(&model, &train_split, &corpus.ontology, &train_opts)?.metrics.joint_goal_acc)
        } else {
            None
        };
        let record = EpochRecord {
            epoch,
            train_loss,
            dev_joint_goal: dev.joint_goal_acc,
            dev_turn_request: dev.turn_request_acc,
            wallclock: started.elapsed().as_secs_f64(),
            train_joint_goal,
        };
        log::info!(
            "epoch {epoch}: loss {train_loss:.6} dev joint {:.4} dev request {:.4}",
            dev.joint_goal_acc,
            dev.turn_request_acc
        );
        if let Some((path, file)) = log.as_mut() {
            let line = serde_json::to_string(&record).expect("record serializes");
            writeln!(file, "{line}").map_err(|e| Error::io(path.as_path(), e))?;
        }
        history.push(record);

        if best.as_ref().is_none_or(|(_, m, _)| dev.joint_goal_acc > m.joint_goal_acc) {
            best = Some((epoch, dev, model.params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
        }
        let fit = opts
            .stop_below_loss
            .is_some_and(|target| train_loss < target && train_joint_goal.unwrap_or(1.0) == 1.0);
        if fit || since_best >= config.patience {
            break;
        }
    }

    let (epoch, dev, params) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: config.clone(),
            epoch,
            dev_joint_goal: dev.joint_goal_acc,
            dev_turn_request: dev.turn_request_acc,
            params,
        },
        history,
        last: model,
    })
}

fn open_log(path: &Path) -> Result<(PathBuf, std::fs::File)> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    Ok((path.to_path_buf(), file))
}

/// Rebuilds a model from a checkpoint and word vectors.
pub fn load_model(checkpoint: &Checkpoint, words: Arc<EmbeddingTable>) -> Result<SimModel> {
    SimModel::from_params(&apply_ablation(&checkpoint.config), checkpoint.params.clone(), words)
}
