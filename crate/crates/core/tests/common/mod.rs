//! Shared fixtures and criterion checks for the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use sim_dst::autodiff::{grad_check, grad_check_params, Graph, NodeId, ParamStore};
use sim_dst::corpus::{
    generate_synthetic_corpus, AnnotatedToken, Corpus, Dialogue, Ontology, OntologySpec, SlotValue, Split, Turn,
};
use sim_dst::encoder::{mask_at_step, self_attend};
use sim_dst::evaluator::{score_predictions, PredictionSet};
use sim_dst::featurizer::{vocabulary, EmbeddingTable};
use sim_dst::model::{Ablation, Dims, ModelConfig, SimModel};
use sim_dst::scorer::{action_score, bce_loss, content_score};
use sim_dst::trainer::{count_parameters, train, TrainConfig, TrainOptions};
use sim_dst::Tensor;

pub type Check = Result<String, String>;

pub const EPS: f64 = 1e-6;

pub fn tiny_dims() -> Dims {
    Dims {
        d_word: 6,
        char_dim: 3,
        char_filters: 4,
        char_window: 3,
        pos_dim: 2,
        ner_dim: 2,
        hidden: 3,
    }
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        dims: tiny_dims(),
        ..ModelConfig::default()
    }
}

pub fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

/// Synthetic corpus plus deterministic word vectors covering it.
pub fn synthetic(seed: u64, n: usize, spec: &OntologySpec, d_word: usize) -> (Corpus, Arc<EmbeddingTable>) {
    let (d, o) = generate_synthetic_corpus(seed, n, spec).unwrap();
    let corpus = Corpus::new(d, o).unwrap();
    let mut vocab: Vec<String> = vocabulary(&corpus.dialogues, &corpus.ontology).into_iter().collect();
    vocab.sort();
    let words = Arc::new(EmbeddingTable::random(&vocab, d_word, seed));
    (corpus, words)
}

/// Overwrites every parameter with uniform noise so no gradient is
/// trivially zero.
pub fn randomize(model: &mut SimModel, seed: u64, scale: f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ids: Vec<_> = model.params.iter().map(|(id, _)| id).collect();
    for id in ids {
        for x in model.params.value_mut(id).data_mut() {
            *x = rng.gen_range(-scale..scale);
        }
    }
}

fn reduce(g: &mut Graph<'_>, out: NodeId, weights: &Tensor) -> sim_dst::Result<NodeId> {
    let w = g.constant(weights.clone());
    let m = g.mul(out, w)?;
    Ok(g.sum(m))
}

type Builder = Box<dyn Fn(&mut Graph<'_>, NodeId) -> sim_dst::Result<NodeId>>;

/// Relative gradient error of every primitive with respect to every
/// differentiable input.
pub fn primitive_gradient_errors() -> Vec<(String, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut r = |shape: &[usize]| rand_tensor(&mut rng, shape, 1.0);
    let (a34, b42, v4, v3, m3) = (r(&[3, 4]), r(&[4, 2]), r(&[4]), r(&[3]), r(&[3, 4]));
    let w32 = r(&[3, 2]);
    let w3 = r(&[3]);
    let w4 = r(&[4]);
    let w34 = r(&[3, 4]);
    let w2 = r(&[2]);
    let s1 = r(&[1]);
    let x_conv = r(&[5, 3]);
    let w_conv = r(&[4, 9]);
    let b_conv = r(&[4]);
    let short = r(&[2, 3]);
    let w_out_conv = r(&[3, 4]);
    let w_out_conv1 = r(&[1, 4]);
    let table = r(&[5, 3]);
    let w_gather = r(&[4, 3]);
    let hid = 3;
    let (lx, lh, lc, lw, lb) = (r(&[4]), r(&[hid]), r(&[hid]), r(&[4 * hid, 4 + hid]), r(&[4 * hid]));
    let w_lstm = r(&[2 * hid]);
    let w_stack = r(&[2, 4]);
    let w_concat = r(&[3, 8]);
    let w_pool = r(&[4]);
    let pool_in = Tensor::matrix(3, 4, vec![0.1, 0.9, -0.3, 0.5, 0.7, -0.2, 0.4, 0.0, -0.5, 0.3, 0.8, -0.9]).unwrap();
    let full_mask = Tensor::matrix(3, 4, vec![0.0, 1.25, 1.25, 0.0, 1.25, 1.25, 1.25, 0.0, 0.0, 0.0, 1.25, 1.25]).unwrap();
    let row_mask = Tensor::vector(vec![1.25, 0.0, 1.25, 1.25]);

    let c = |t: &Tensor| t.clone();
    let mut cases: Vec<(&str, Tensor, Builder)> = Vec::new();
    {
        let (b, w) = (c(&b42), c(&w32));
        cases.push(("matmul/lhs", c(&a34), Box::new(move |g, x| {
            let bb = g.constant(b.clone());
            let o = g.matmul(x, bb)?;
            reduce(g, o, &w)
        })));
    }
    {
        let (a, w) = (c(&a34), c(&w32));
        cases.push(("matmul/rhs", c(&b42), Box::new(move |g, x| {
            let aa = g.constant(a.clone());
            let o = g.matmul(aa, x)?;
            reduce(g, o, &w)
        })));
    }
    {
        let (v, w) = (c(&v4), c(&w3));
        cases.push(("matvec/matrix", c(&a34), Box::new(move |g, x| {
            let vv = g.constant(v.clone());
            let o = g.matvec(x, vv)?;
            reduce(g, o, &w)
        })));
    }
    {
        let (a, w) = (c(&a34), c(&w3));
        cases.push(("matvec/vector", c(&v4), Box::new(move |g, x| {
            let aa = g.constant(a.clone());
            let o = g.matvec(aa, x)?;
            reduce(g, o, &w)
        })));
    }
    {
        let (p, w) = (c(&v3), c(&w4));
        cases.push(("matvec_t/matrix", c(&a34), Box::new(move |g, x| {
            let pp = g.constant(p.clone());
            let o = g.matvec_t(x, pp)?;
            reduce(g, o, &w)
        })));
    }
    {
        let (a, w) = (c(&a34), c(&w4));
        cases.push(("matvec_t/weights", c(&v3), Box::new(move |g, x| {
            let aa = g.constant(a.clone());
            let o = g.matvec_t(aa, x)?;
            reduce(g, o, &w)
        })));
    }
    {
        let v = c(&v4);
        cases.push(("dot", c(&w4), Box::new(move |g, x| {
            let vv = g.constant(v.clone());
            let d = g.dot(x, vv)?;
            let sq = g.mul(d, d)?;
            Ok(g.sum(sq))
        })));
    }
    cases.push(("dot/self", c(&v4), Box::new(|g, x| g.dot(x, x))));
    {
        let (m, w) = (c(&m3), c(&w34));
        cases.push(("add", c(&a34), Box::new(move |g, x| {
            let mm = g.constant(m.clone());
            let o = g.add(x, mm)?;
            let o = g.mul(o, o)?;
            reduce(g, o, &w)
        })));
    }
    {
        let (s, w) = (c(&s1), c(&w4));
        cases.push(("add_scalar/vector", c(&v4), Box::new(move |g, x| {
            let ss = g.constant(s.clone());
            let o = g.add_scalar(x, ss)?;
            let o = g.tanh(o);
            reduce(g, o, &w)
        })));
    }
    {
        let (v, w) = (c(&v4), c(&w4));
        cases.push(("add_scalar/scalar", c(&s1), Box::new(move |g, x| {
            let vv = g.constant(v.clone());
            let o = g.add_scalar(vv, x)?;
            let o = g.tanh(o);
            reduce(g, o, &w)
        })));
    }
    {
        let (m, w) = (c(&m3), c(&w34));
        cases.push(("mul", c(&a34), Box::new(move |g, x| {
            let mm = g.constant(m.clone());
            let o = g.mul(x, mm)?;
            reduce(g, o, &w)
        })));
    }
    cases.push(("mul/self", c(&v4), Box::new(|g, x| {
        let o = g.mul(x, x)?;
        Ok(g.sum(o))
    })));
    {
        let w = c(&w4);
        cases.push(("scale", c(&v4), Box::new(move |g, x| {
            let o = g.scale(x, -2.5);
            reduce(g, o, &w)
        })));
    }
    cases.push(("sum", c(&a34), Box::new(|g, x| {
        let t = g.tanh(x);
        Ok(g.sum(t))
    })));
    cases.push(("sum_scalars", c(&v3), Box::new(|g, x| {
        let a = g.slice(x, 0, 1)?;
        let b = g.slice(x, 1, 1)?;
        let cc = g.slice(x, 2, 1)?;
        let bb = g.mul(b, cc)?;
        g.sum_scalars(&[a, bb, cc])
    })));
    {
        let w = c(&w34);
        cases.push(("sigmoid", c(&a34), Box::new(move |g, x| {
            let o = g.sigmoid(x);
            reduce(g, o, &w)
        })));
    }
    {
        let w = c(&w34);
        cases.push(("tanh", c(&a34), Box::new(move |g, x| {
            let o = g.tanh(x);
            reduce(g, o, &w)
        })));
    }
    {
        let w = c(&w4);
        cases.push(("softmax", c(&v4), Box::new(move |g, x| {
            let o = g.softmax(x)?;
            reduce(g, o, &w)
        })));
    }
    {
        let (m, w) = (c(&m3), c(&w_concat));
        cases.push(("concat", c(&a34), Box::new(move |g, x| {
            let mm = g.constant(m.clone());
            let o = g.concat(&[mm, x])?;
            let o = g.tanh(o);
            reduce(g, o, &w)
        })));
    }
    {
        let (v, w) = (c(&v4), c(&w_stack));
        cases.push(("stack", c(&w4), Box::new(move |g, x| {
            let vv = g.constant(v.clone());
            let o = g.stack(&[x, vv])?;
            let o = g.mul(o, o)?;
            reduce(g, o, &w)
        })));
    }
    {
        let w = c(&w4);
        cases.push(("row", c(&a34), Box::new(move |g, x| {
            let o = g.row(x, 1)?;
            let o = g.tanh(o);
            reduce(g, o, &w)
        })));
    }
    {
        let w = c(&w2);
        cases.push(("slice", c(&v4), Box::new(move |g, x| {
            let o = g.slice(x, 1, 2)?;
            let o = g.mul(o, o)?;
            reduce(g, o, &w)
        })));
    }
    {
        let w = c(&w_gather);
        cases.push(("gather", c(&table), Box::new(move |g, x| {
            let o = g.gather(x, &[0, 2, 2, 4])?;
            let o = g.tanh(o);
            reduce(g, o, &w)
        })));
    }
    {
        let (wc, bc, w) = (c(&w_conv), c(&b_conv), c(&w_out_conv));
        cases.push(("conv1d/input", c(&x_conv), Box::new(move |g, x| {
            let (ww, bb) = (g.constant(wc.clone()), g.constant(bc.clone()));
            let o = g.conv1d(x, ww, bb, 3)?;
            let o = g.tanh(o);
            reduce(g, o, &w)
        })));
    }
    {
        let (xc, bc, w) = (c(&x_conv), c(&b_conv), c(&w_out_conv));
        cases.push(("conv1d/weight", c(&w_conv), Box::new(move |g, x| {
            let (xx, bb) = (g.constant(xc.clone()), g.constant(bc.clone()));
            let o = g.conv1d(xx, x, bb, 3)?;
            let o = g.tanh(o);
            reduce(g, o, &w)
        })));
    }
    {
        let (xc, wc, w) = (c(&x_conv), c(&w_conv), c(&w_out_conv));
        cases.push(("conv1d/bias", c(&b_conv), Box::new(move |g, x| {
            let (xx, ww) = (g.constant(xc.clone()), g.constant(wc.clone()));
            let o = g.conv1d(xx, ww, x, 3)?;
            let o = g.tanh(o);
            reduce(g, o, &w)
        })));
    }
    {
        let (wc, bc, w) = (c(&w_conv), c(&b_conv), c(&w_out_conv1));
        cases.push(("conv1d/padded", c(&short), Box::new(move |g, x| {
            let (ww, bb) = (g.constant(wc.clone()), g.constant(bc.clone()));
            let o = g.conv1d(x, ww, bb, 3)?;
            let o = g.tanh(o);
            reduce(g, o, &w)
        })));
    }
    {
        let w = c(&w_pool);
        cases.push(("max_pool_time", pool_in, Box::new(move |g, x| {
            let o = g.max_pool_time(x)?;
            reduce(g, o, &w)
        })));
    }
    {
        let (m, w) = (c(&full_mask), c(&w34));
        cases.push(("dropout/full", c(&a34), Box::new(move |g, x| {
            let o = g.dropout(x, &m)?;
            let o = g.tanh(o);
            reduce(g, o, &w)
        })));
    }
    {
        let (m, w) = (c(&row_mask), c(&w34));
        cases.push(("dropout/row", c(&a34), Box::new(move |g, x| {
            let o = g.dropout(x, &m)?;
            let o = g.tanh(o);
            reduce(g, o, &w)
        })));
    }
    let lstm_inputs = [("x", c(&lx)), ("h", c(&lh)), ("c", c(&lc)), ("w", c(&lw)), ("b", c(&lb))];
    for (k, (name, theta)) in lstm_inputs.iter().enumerate() {
        let fixed: Vec<Tensor> = lstm_inputs.iter().map(|(_, t)| t.clone()).collect();
        let w = c(&w_lstm);
        let label: &'static str = match *name {
            "x" => "lstm_cell/x",
            "h" => "lstm_cell/h",
            "c" => "lstm_cell/c",
            "w" => "lstm_cell/w",
            _ => "lstm_cell/b",
        };
        cases.push((label, theta.clone(), Box::new(move |g, x| {
            let nodes: Vec<NodeId> = (0..5).map(|i| if i == k { x } else { g.constant(fixed[i].clone()) }).collect();
            let o = g.lstm_cell(nodes[0], nodes[1], nodes[2], nodes[3], nodes[4])?;
            reduce(g, o, &w)
        })));
    }
    cases.push(("bce/positive", Tensor::scalar(0.3), Box::new(|g, x| g.bce(x, 1.0))));
    cases.push(("bce/negative", Tensor::scalar(0.6), Box::new(|g, x| g.bce(x, 0.0))));

    cases
        .into_iter()
        .map(|(name, theta, f)| {
            let err = grad_check(|g, x| f(g, x), &theta, EPS).unwrap_or(f64::INFINITY);
            (name.to_string(), err)
        })
        .collect()
}

/// One-dialogue corpus over a three-slot ontology (plus requests).
pub fn toy_corpus() -> (Dialogue, Ontology) {
    let spec = OntologySpec {
        goal_slots: vec![2, 2, 2],
        request_values: 2,
    };
    let (d, o) = generate_synthetic_corpus(11, 1, &spec).unwrap();
    (d.into_iter().next().unwrap(), o)
}

/// Largest relative error of the summed loss over a dialogue, per
/// parameter tensor, with random parameters.
pub fn full_loss_gradient_errors() -> Vec<(String, f64)> {
    let (dialogue, ontology) = toy_corpus();
    let mut vocab: Vec<String> = vocabulary(std::slice::from_ref(&dialogue), &ontology).into_iter().collect();
    vocab.sort();
    let words = Arc::new(EmbeddingTable::random(&vocab, 6, 3));
    let mut model = SimModel::new(&tiny_config(), words.clone(), 2).unwrap();
    randomize(&mut model, 5, 0.8);
    let pairs = ontology.pairs();
    let net = model.net.clone();
    let report = grad_check_params(
        &model.params,
        |g| {
            let s_o = net.encode_ontology(g, &pairs, &words, None)?;
            let mut losses = Vec::new();
            for t in &dialogue.turns {
                let gold: Vec<SlotValue> = t.gold_turn_goals.iter().chain(&t.gold_turn_requests).cloned().collect();
                losses.push(net.turn_loss(g, &t.utterance, &t.system_actions, &gold, &pairs, &s_o, &words, None)?);
            }
            g.sum_scalars(&losses)
        },
        EPS,
        Some(24),
    )
    .unwrap();
    report
        .params
        .into_iter()
        .map(|p| (p.name, p.max_relative_error))
        .collect()
}

pub fn criterion_gradients() -> Check {
    let prim = primitive_gradient_errors();
    let worst_prim = prim.iter().cloned().fold(("".to_string(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    if worst_prim.1 >= 1e-5 {
        return Err(format!("primitive {} relative error {:.2e} >= 1e-5", worst_prim.0, worst_prim.1));
    }
    let full = full_loss_gradient_errors();
    let worst_full = full.iter().cloned().fold(("".to_string(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    if worst_full.1 >= 1e-4 {
        return Err(format!("loss gradient of {} relative error {:.2e} >= 1e-4", worst_full.0, worst_full.1));
    }
    Ok(format!(
        "{} primitive checks, worst {:.1e} ({}); full loss over {} tensors, worst {:.1e} ({})",
        prim.len(),
        worst_prim.1,
        worst_prim.0,
        full.len(),
        worst_full.1,
        worst_full.0
    ))
}

pub const REFERENCE_PARAMS: f64 = 1_470_000.0;

/// Builds a default-size model, scores a turn against the ontology and
/// returns the trainable count afterwards.
pub fn count_against(spec: &OntologySpec) -> (usize, usize) {
    let (corpus, _) = synthetic(3, 2, spec, 300);
    let words = Arc::new(EmbeddingTable::new(300));
    let model = SimModel::new(&ModelConfig::default(), words, 1).unwrap();
    let turn = &corpus.dialogues[0].turns[0];
    let scores = model.score_turn(&turn.utterance, &turn.system_actions, &corpus.ontology).unwrap();
    (count_parameters(&model, true), scores.len())
}

pub fn criterion_slot_independence() -> Check {
    let (woz, n_woz) = count_against(&OntologySpec::woz_like());
    let (dstc2, n_dstc2) = count_against(&OntologySpec::dstc2_like());
    if n_woz != 94 || n_dstc2 != 220 {
        return Err(format!("ontologies scored {n_woz} and {n_dstc2} pairs, expected 94 and 220"));
    }
    if woz != dstc2 {
        return Err(format!("counts differ: {woz} vs {dstc2}"));
    }
    let rel = (woz as f64 - REFERENCE_PARAMS) / REFERENCE_PARAMS;
    if rel.abs() > 0.10 {
        return Err(format!("{woz} trainable parameters is {:+.1}% from 1.47M", 100.0 * rel));
    }
    Ok(format!("{woz} trainable parameters for 94 and 220 values ({:+.1}% vs 1.47M)", 100.0 * rel))
}

/// Gold joint goals replayed with a plain map, independent of the library.
pub fn brute_force_joint(dialogues: &[Dialogue], predictions: &[Vec<PredictionSet>]) -> (usize, usize, usize) {
    let (mut joint_ok, mut req_ok, mut n) = (0, 0, 0);
    for (d, preds) in dialogues.iter().zip(predictions) {
        let mut gold_state: HashMap<String, String> = HashMap::new();
        let mut pred_state: HashMap<String, String> = HashMap::new();
        for (t, p) in d.turns.iter().zip(preds) {
            for g in &t.gold_turn_goals {
                gold_state.insert(g.slot.clone(), g.value.clone());
            }
            for g in &p.turn_goals {
                pred_state.insert(g.slot.clone(), g.value.clone());
            }
            n += 1;
            if gold_state == pred_state {
                joint_ok += 1;
            }
            let mut gr: Vec<&String> = t.gold_turn_requests.iter().map(|r| &r.value).collect();
            let mut pr: Vec<&String> = p.turn_requests.iter().map(|r| &r.value).collect();
            gr.sort();
            gr.dedup();
            pr.sort();
            if gr == pr {
                req_ok += 1;
            }
        }
    }
    (joint_ok, req_ok, n)
}

/// Random labels and correlated random predictions over a small ontology.
pub fn random_labeled_corpus(seed: u64) -> (Vec<Dialogue>, Vec<Vec<PredictionSet>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let slots = ["area", "food", "price range"];
    let values = ["a", "b", "c"];
    let requests = ["phone", "address", "postcode"];
    let random_turn = |rng: &mut ChaCha8Rng| -> (Vec<SlotValue>, Vec<SlotValue>) {
        let mut goals = Vec::new();
        for s in slots {
            if rng.gen_bool(0.3) {
                goals.push(SlotValue::new(s, values[rng.gen_range(0..values.len())]));
            }
        }
        let reqs = requests
            .iter()
            .filter(|_| rng.gen_bool(0.25))
            .map(|r| SlotValue::request(*r))
            .collect();
        (goals, reqs)
    };
    let n_dialogues = rng.gen_range(1..=6);
    let mut dialogues = Vec::new();
    let mut predictions = Vec::new();
    for i in 0..n_dialogues {
        let n_turns = rng.gen_range(1..=7);
        let mut turns = Vec::new();
        let mut preds = Vec::new();
        for index in 0..n_turns {
            let (goals, reqs) = random_turn(&mut rng);
            let (pred_goals, pred_reqs) = if rng.gen_bool(0.6) {
                (goals.clone(), reqs.clone())
            } else {
                random_turn(&mut rng)
            };
            turns.push(Turn {
                index,
                utterance: vec![AnnotatedToken::bare("x")],
                asr_hypotheses: Vec::new(),
                system_actions: Vec::new(),
                gold_turn_goals: goals,
                gold_turn_requests: reqs,
            });
            preds.push(PredictionSet {
                turn_goals: pred_goals.into_iter().collect(),
                turn_requests: pred_reqs.into_iter().collect(),
                probabilities: Vec::new(),
            });
        }
        dialogues.push(Dialogue {
            id: format!("r{i}"),
            split: Split::Test,
            turns,
        });
        predictions.push(preds);
    }
    (dialogues, predictions)
}

pub fn criterion_metric_oracle() -> Check {
    let mut turns = 0;
    for seed in 0..1000 {
        let (dialogues, predictions) = random_labeled_corpus(seed);
        let e = score_predictions(&dialogues, &predictions).map_err(|e| e.to_string())?;
        let (joint_ok, req_ok, n) = brute_force_joint(&dialogues, &predictions);
        let expect_joint = joint_ok as f64 / n as f64;
        let expect_req = req_ok as f64 / n as f64;
        if e.metrics.n_turns != n || e.metrics.joint_goal_acc != expect_joint || e.metrics.turn_request_acc != expect_req {
            return Err(format!(
                "corpus {seed}: evaluator ({}, {}) vs oracle ({expect_joint}, {expect_req})",
                e.metrics.joint_goal_acc, e.metrics.turn_request_acc
            ));
        }
        turns += n;
    }
    Ok(format!("1000 random corpora ({turns} turns) match the replay oracle exactly"))
}

fn check(cond: bool, what: &str, failures: &mut Vec<String>) {
    if !cond {
        failures.push(what.to_string());
    }
}

/// The equation-level properties, each as (description, holds).
pub fn equation_properties() -> Vec<(String, bool)> {
    let mut out = Vec::new();
    let store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(8);

    // Attention summarization.
    let r = rand_tensor(&mut rng, &[5, 4], 1.0);
    let w = rand_tensor(&mut rng, &[4], 1.0);
    let summary = |b: f64| {
        let mut g = Graph::new(&store);
        let (rn, wn, bn) = (g.constant(r.clone()), g.constant(w.clone()), g.constant(Tensor::scalar(b)));
        let s = self_attend(&mut g, rn, wn, bn).unwrap();
        g.value(s).clone()
    };
    let s0 = summary(0.3);
    let shifted = summary(0.3 + 17.0);
    out.push((
        "attention bias shift leaves s unchanged (1e-12)".into(),
        s0.max_abs_diff(&shifted).unwrap() < 1e-12,
    ));
    let in_hull = (0..4).all(|j| {
        let col: Vec<f64> = (0..5).map(|i| r.row(i)[j]).collect();
        let lo = col.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = col.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        s0.data()[j] >= lo - 1e-15 && s0.data()[j] <= hi + 1e-15
    });
    out.push(("attention summary lies in the rows' convex hull".into(), in_hull));
    let zero = {
        let mut g = Graph::new(&store);
        let rn = g.constant(r.clone());
        let wn = g.constant(Tensor::zeros(&[4]));
        let bn = g.constant(Tensor::scalar(0.0));
        let s = self_attend(&mut g, rn, wn, bn).unwrap();
        g.value(s).clone()
    };
    let mean_ok = (0..4).all(|j| ((0..5).map(|i| r.row(i)[j]).sum::<f64>() / 5.0 - zero.data()[j]).abs() < 1e-12);
    out.push(("zero attention parameters give the column mean".into(), mean_ok));

    // Content score.
    let row = rand_tensor(&mut rng, &[1, 4], 1.0);
    let s_o = rand_tensor(&mut rng, &[4], 1.0);
    let w1 = rand_tensor(&mut rng, &[4], 1.0);
    let b1 = 0.37;
    let y1 = |r: &Tensor, w1: &Tensor| {
        let mut g = Graph::new(&store);
        let (rn, sn, wn, bn) = (
            g.constant(r.clone()),
            g.constant(s_o.clone()),
            g.constant(w1.clone()),
            g.constant(Tensor::scalar(b1)),
        );
        let y = content_score(&mut g, rn, sn, wn, bn).unwrap();
        g.value(y).item()
    };
    let expect: f64 = w1.data().iter().zip(row.data()).map(|(a, b)| a * b).sum::<f64>() + b1;
    out.push(("content score with one row is w1·r + b1".into(), (y1(&row, &w1) - expect).abs() < 1e-12));
    out.push((
        "content score with w1 = 0 equals b1".into(),
        y1(&r, &Tensor::zeros(&[4])) == b1,
    ));

    // Action score.
    let a1 = rand_tensor(&mut rng, &[4], 1.0);
    let s_u = rand_tensor(&mut rng, &[4], 1.0);
    let y2 = |actions: &[Tensor], s_o: &Tensor| {
        let mut g = Graph::new(&store);
        let nodes: Vec<NodeId> = actions.iter().map(|a| g.constant(a.clone())).collect();
        let (un, on) = (g.constant(s_u.clone()), g.constant(s_o.clone()));
        let y = action_score(&mut g, un, &nodes, on).unwrap();
        g.value(y).item()
    };
    let dot = |a: &Tensor, b: &Tensor| a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum::<f64>();
    out.push((
        "action score with one action is s_A·s_O".into(),
        (y2(std::slice::from_ref(&a1), &s_o) - dot(&a1, &s_o)).abs() < 1e-12,
    ));
    out.push((
        "action score with s_O = 0 is 0".into(),
        y2(&[a1.clone(), s_u.clone()], &Tensor::zeros(&[4])) == 0.0,
    ));
    out.push((
        "two identical actions give q2 = v".into(),
        (y2(&[a1.clone(), a1.clone()], &s_o) - dot(&a1, &s_o)).abs() < 1e-12,
    ));

    // Cold start.
    let (corpus, words) = synthetic(4, 2, &OntologySpec::small(), 6);
    let model = SimModel::new(&tiny_config(), words.clone(), 9).unwrap();
    let turn = &corpus.dialogues[0].turns[0];
    let probs = model.score_turn(&turn.utterance, &turn.system_actions, &corpus.ontology).unwrap();
    out.push((
        "untrained model gives exactly 0.5 for every pair".into(),
        probs.iter().all(|(_, p)| *p == 0.5),
    ));

    // Loss additivity.
    let mut model = model;
    randomize(&mut model, 12, 0.7);
    let pairs = corpus.ontology.pairs();
    let gold: Vec<SlotValue> = turn.gold_turn_goals.iter().chain(&turn.gold_turn_requests).cloned().collect();
    let loss_for = |subset: &[SlotValue]| {
        let mut g = Graph::new(&model.params);
        let s_o = model.net.encode_ontology(&mut g, subset, &words, None).unwrap();
        let l = model
            .net
            .turn_loss(&mut g, &turn.utterance, &turn.system_actions, &gold, subset, &s_o, &words, None)
            .unwrap();
        g.value(l).item()
    };
    let total = loss_for(&pairs);
    let parts: f64 = pairs.iter().map(|p| loss_for(std::slice::from_ref(p))).sum();
    out.push(("ontology loss equals the sum of single-pair losses (1e-10)".into(), (total - parts).abs() < 1e-10));
    let mut g = Graph::new(&store);
    let half = g.constant(Tensor::scalar(0.5));
    let l = bce_loss(&mut g, &[half], &[1.0]).unwrap();
    out.push((
        "loss of p = 0.5 against y = 1 is ln 2".into(),
        (g.value(l).item() - std::f64::consts::LN_2).abs() < 1e-15,
    ));
    out
}

pub fn criterion_equations() -> Check {
    let props = equation_properties();
    let failed: Vec<&String> = props.iter().filter(|(_, ok)| !ok).map(|(d, _)| d).collect();
    if failed.is_empty() {
        Ok(format!("{} properties hold", props.len()))
    } else {
        Err(format!("failed: {}", failed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("; ")))
    }
}

pub fn criterion_variational_dropout() -> Check {
    let mut failures = Vec::new();
    let var = SimModel::new(&tiny_config(), Arc::new(EmbeddingTable::new(6)), 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mask = var.net.input_mask(&mut Some(&mut rng), 9, 40).unwrap();
    check(
        (1..9).all(|t| mask_at_step(&mask, t) == mask_at_step(&mask, 0)),
        "variational mask differs between timesteps",
        &mut failures,
    );
    check(mask.data().contains(&0.0), "mask drops nothing", &mut failures);
    let cfg = ModelConfig {
        ablation: Ablation {
            use_var_dropout: false,
            ..Ablation::default()
        },
        ..tiny_config()
    };
    let plain = SimModel::new(&cfg, Arc::new(EmbeddingTable::new(6)), 1).unwrap();
    let mut differ = 0;
    for _ in 0..100 {
        let mask = plain.net.input_mask(&mut Some(&mut rng), 2, 40).unwrap();
        if mask_at_step(&mask, 0) != mask_at_step(&mask, 1) {
            differ += 1;
        }
    }
    check(differ == 100, &format!("per-step masks differed in only {differ}/100 trials"), &mut failures);
    if failures.is_empty() {
        Ok("shared mask across 9 steps; per-step masks differed in 100/100 trials".into())
    } else {
        Err(failures.join("; "))
    }
}

pub fn small_train_config(seed: u64, epochs: usize) -> TrainConfig {
    TrainConfig {
        dims: Dims {
            d_word: 12,
            char_dim: 4,
            char_filters: 6,
            char_window: 3,
            pos_dim: 3,
            ner_dim: 2,
            hidden: 8,
        },
        epochs,
        batch_size: 4,
        seed,
        ..TrainConfig::default()
    }
}

pub fn criterion_determinism() -> Check {
    let (corpus, words) = synthetic(2, 6, &OntologySpec::small(), 12);
    let cfg = small_train_config(5, 3);
    let run = || {
        let out = train(&corpus, words.clone(), &cfg, &TrainOptions::default()).map_err(|e| e.to_string())?;
        let bytes = out.checkpoint.to_bytes().map_err(|e| e.to_string())?;
        let losses: Vec<u64> = out.history.iter().map(|r| r.train_loss.to_bits()).collect();
        let dev: Vec<(u64, u64)> = out
            .history
            .iter()
            .map(|r| (r.dev_joint_goal.to_bits(), r.dev_turn_request.to_bits()))
            .collect();
        Ok::<_, String>((bytes, losses, dev))
    };
    let a = run()?;
    let b = run()?;
    if a.0 != b.0 {
        return Err("checkpoint bytes differ between identical runs".into());
    }
    if a.1 != b.1 || a.2 != b.2 {
        return Err("loss or metric traces differ between identical runs".into());
    }
    Ok(format!("{} checkpoint bytes and {} epoch records identical across two runs", a.0.len(), a.1.len()))
}

pub fn ablation_rows() -> Vec<(String, usize, usize)> {
    let words = Arc::new(EmbeddingTable::new(300));
    Ablation::study()
        .into_iter()
        .map(|(name, ablation)| {
            let cfg = ModelConfig {
                ablation,
                ..ModelConfig::default()
            };
            let model = SimModel::new(&cfg, words.clone(), 1).unwrap();
            (name.to_string(), cfg.dims.d_u(&ablation), model.parameter_count())
        })
        .collect()
}

pub fn criterion_ablation_dims() -> Check {
    let rows: BTreeMap<String, (usize, usize)> = ablation_rows().into_iter().map(|(n, d, c)| (n, (d, c))).collect();
    let d = Dims::default();
    let (full_du, full) = rows["full"];
    let char_cnn = 96 * d.char_dim + d.char_filters * d.char_window * d.char_dim + d.char_filters;
    // Removing a feature block also narrows the utterance LSTM input.
    let lstm_cols = |cols: usize| 2 * 4 * d.hidden * cols;
    let utt = 46 * d.pos_dim + 20 * d.ner_dim;
    let expect = [
        ("full", 372, full),
        ("use_var_dropout=false", 372, full),
        ("use_char_cnn=false", 322, full - char_cnn - lstm_cols(d.char_filters)),
        ("use_utt_features=false", 350, full - utt - lstm_cols(d.pos_dim + d.ner_dim + 2)),
    ];
    for (name, du, count) in expect {
        let got = rows[name];
        if got != (du, count) {
            return Err(format!("{name}: d_u {} params {} (expected {du}, {count})", got.0, got.1));
        }
    }
    Ok(format!(
        "d_u {full_du}/322/350, counts {}/{}/{}",
        full, rows["use_char_cnn=false"].1, rows["use_utt_features=false"].1
    ))
}
