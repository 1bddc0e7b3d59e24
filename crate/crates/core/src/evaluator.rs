//! Decoding pair probabilities into predictions and scoring them.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    accumulate_joint_goals, select_utterance, Dialogue, JointGoal, Ontology, SlotValue, UtteranceMode,
};
use crate::error::{Error, Result};
use crate::model::SimModel;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Predicted turn goals and requests for one turn.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub turn_goals: BTreeSet<SlotValue>,
    pub turn_requests: BTreeSet<SlotValue>,
    /// Every scored pair, in ontology order.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub probabilities: Vec<(SlotValue, f64)>,
}

impl PredictionSet {
    /// The gold labels of a turn, as if predicted perfectly.
    pub fn gold(turn: &crate::corpus::Turn) -> Self {
        Self {
            turn_goals: turn.gold_turn_goals.iter().cloned().collect(),
            turn_requests: turn.gold_turn_requests.iter().cloned().collect(),
            probabilities: Vec::new(),
        }
    }
}

/// Requests above `threshold` are all kept; for each goal slot only the
/// most probable value above `threshold` is kept, earlier pairs winning
/// ties.
pub fn decode_predictions(probabilities: &[(SlotValue, f64)], threshold: f64) -> PredictionSet {
    let mut best: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    let mut turn_requests = BTreeSet::new();
    for (i, (pair, p)) in probabilities.iter().enumerate() {
        if *p <= threshold {
            continue;
        }
        if pair.is_request() {
            turn_requests.insert(pair.clone());
        } else {
            let entry = best.entry(pair.slot.as_str()).or_insert((i, *p));
            if *p > entry.1 {
                *entry = (i, *p);
            }
        }
    }
    PredictionSet {
        turn_goals: best.values().map(|&(i, _)| probabilities[i].0.clone()).collect(),
        turn_requests,
        probabilities: probabilities.to_vec(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub joint_goal_acc: f64,
    pub turn_request_acc: f64,
    pub n_turns: usize,
}

/// Machine-readable result line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub split: String,
    pub mode: UtteranceMode,
    pub joint_goal_acc: f64,
    pub turn_request_acc: f64,
    pub n_turns: usize,
}

impl ResultRecord {
    pub fn new(split: impl Into<String>, mode: UtteranceMode, m: &Metrics) -> Self {
        Self {
            split: split.into(),
            mode,
            joint_goal_acc: m.joint_goal_acc,
            turn_request_acc: m.turn_request_acc,
            n_turns: m.n_turns,
        }
    }
}

/// Per-turn outcome for error analysis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnOutcome {
    pub dialogue: String,
    pub turn: usize,
    pub predicted_joint: JointGoal,
    pub gold_joint: JointGoal,
    pub predicted_requests: BTreeSet<SlotValue>,
    pub gold_requests: BTreeSet<SlotValue>,
    pub joint_correct: bool,
    pub request_correct: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub turns: Vec<TurnOutcome>,
}

/// Compares predictions to gold labels turn by turn. `predictions[d][t]`
/// belongs to turn `t` of `dialogues[d]`.
pub fn score_predictions(dialogues: &[Dialogue], predictions: &[Vec<PredictionSet>]) -> Result<Evaluation> {
    if dialogues.len() != predictions.len() {
        return Err(Error::InvalidInput(format!(
            "{} dialogues but {} prediction lists",
            dialogues.len(),
            predictions.len()
        )));
    }
    let mut turns = Vec::new();
    for (d, preds) in dialogues.iter().zip(predictions) {
        if d.turns.len() != preds.len() {
            return Err(Error::InvalidInput(format!(
                "dialogue {}: {} turns but {} predictions",
                d.id,
                d.turns.len(),
                preds.len()
            )));
        }
        let gold_goals: Vec<Vec<SlotValue>> = d.turns.iter().map(|t| t.gold_turn_goals.clone()).collect();
        let pred_goals: Vec<Vec<SlotValue>> = preds.iter().map(|p| p.turn_goals.iter().cloned().collect()).collect();
        let gold_joint = accumulate_joint_goals(&gold_goals)?;
        let pred_joint = accumulate_joint_goals(&pred_goals)?;
        for (((t, p), gj), pj) in d.turns.iter().zip(preds).zip(gold_joint).zip(pred_joint) {
            let gold_requests: BTreeSet<SlotValue> = t.gold_turn_requests.iter().cloned().collect();
            turns.push(TurnOutcome {
                dialogue: d.id.clone(),
                turn: t.index,
                joint_correct: pj == gj,
                request_correct: p.turn_requests == gold_requests,
                predicted_joint: pj,
                gold_joint: gj,
                predicted_requests: p.turn_requests.clone(),
                gold_requests,
            });
        }
    }
    let n = turns.len();
    let frac = |k: usize| if n == 0 { 0.0 } else { k as f64 / n as f64 };
    let metrics = Metrics {
        joint_goal_acc: frac(turns.iter().filter(|t| t.joint_correct).count()),
        turn_request_acc: frac(turns.iter().filter(|t| t.request_correct).count()),
        n_turns: n,
    };
    Ok(Evaluation { metrics, turns })
}

/// Runs `predict` over every turn, in parallel over dialogues, on at most
/// `threads` workers (0 = rayon default).
pub fn evaluate_with<F>(dialogues: &[Dialogue], threads: usize, predict: F) -> Result<Evaluation>
where
    F: Fn(&Dialogue, usize) -> Result<PredictionSet> + Sync,
{
    let run = || -> Result<Vec<Vec<PredictionSet>>> {
        dialogues
            .par_iter()
            .map(|d| (0..d.turns.len()).map(|t| predict(d, t)).collect())
            .collect()
    };
    let predictions = if threads == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?
            .install(run)?
    };
    score_predictions(dialogues, &predictions)
}

/// Evaluation settings.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalOptions {
    pub mode: UtteranceMode,
    pub threshold: f64,
    pub threads: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: UtteranceMode::Transcript,
            threshold: DEFAULT_THRESHOLD,
            threads: 0,
        }
    }
}

/// Scores every turn of `dialogues` with the model and compares to gold.
pub fn evaluate(model: &SimModel, dialogues: &[Dialogue], ontology: &Ontology, opts: &EvalOptions) -> Result<Evaluation> {
    if !(opts.threshold > 0.0 && opts.threshold < 1.0) {
        return Err(Error::InvalidInput(format!("threshold {} must lie in (0, 1)", opts.threshold)));
    }
    // Fail on missing ASR before doing any work.
    for d in dialogues {
        for t in &d.turns {
            select_utterance(&d.id, t, opts.mode)?;
        }
    }
    let encoded = model.encode_ontology(ontology)?;
    evaluate_with(dialogues, opts.threads, |d, i| {
        let turn = &d.turns[i];
        let tokens = select_utterance(&d.id, turn, opts.mode)?;
        let probs = model.score_encoded(&tokens, &turn.system_actions, &encoded)?;
        let scored: Vec<(SlotValue, f64)> = encoded.pairs.iter().cloned().zip(probs).collect();
        Ok(decode_predictions(&scored, opts.threshold))
    })
}
