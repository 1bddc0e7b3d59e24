//! The slot-independent network: featurizer, three encoders, scorer.
//!
//! [`SimNet`] holds parameter handles only and runs the forward pass on a
//! [`Graph`]; [`SimModel`] pairs it with the parameter values and the
//! frozen word table.

use std::collections::HashMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::corpus::{AnnotatedToken, Ontology, SlotValue};
use crate::encoder::{sample_input_mask, SeqEncoder};
use crate::error::{Error, Result};
use crate::featurizer::{
    exact_match, featurize_slot_value, slot_value_text, EmbeddingTable, FeaturizerParams, SlotValueText,
    TextSource,
};
use crate::scorer::{self, ScorerParams};
use crate::tensor::Tensor;

/// Layer sizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Dims {
    pub d_word: usize,
    pub char_dim: usize,
    pub char_filters: usize,
    pub char_window: usize,
    pub pos_dim: usize,
    pub ner_dim: usize,
    /// Per direction; encoded rows are twice this wide.
    pub hidden: usize,
}

impl Default for Dims {
    fn default() -> Self {
        Self {
            d_word: 300,
            char_dim: 50,
            char_filters: 50,
            char_window: 3,
            pos_dim: 12,
            ner_dim: 8,
            hidden: 125,
        }
    }
}

impl Dims {
    /// Width of one utterance token's feature vector.
    pub fn d_u(&self, ablation: &Ablation) -> usize {
        let mut d = self.d_word;
        if ablation.use_char_cnn {
            d += self.char_filters;
        }
        if ablation.use_utt_features {
            d += self.pos_dim + self.ner_dim + 2;
        }
        d
    }

    pub fn d_rnn(&self) -> usize {
        2 * self.hidden
    }

    fn validate(&self) -> Result<()> {
        let fields = [
            ("d_word", self.d_word),
            ("char_dim", self.char_dim),
            ("char_filters", self.char_filters),
            ("char_window", self.char_window),
            ("pos_dim", self.pos_dim),
            ("ner_dim", self.ner_dim),
            ("hidden", self.hidden),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::Config(format!("dimension `{name}` must be positive"))),
            None => Ok(()),
        }
    }
}

/// Switches for the ablation study.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    pub use_var_dropout: bool,
    pub use_char_cnn: bool,
    pub use_utt_features: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            use_var_dropout: true,
            use_char_cnn: true,
            use_utt_features: true,
        }
    }
}

impl Ablation {
    /// The full model followed by one row per disabled flag.
    pub fn study() -> Vec<(&'static str, Ablation)> {
        let full = Ablation::default();
        vec![
            ("full", full),
            ("use_var_dropout=false", Ablation { use_var_dropout: false, ..full }),
            ("use_char_cnn=false", Ablation { use_char_cnn: false, ..full }),
            ("use_utt_features=false", Ablation { use_utt_features: false, ..full }),
        ]
    }
}

/// Uniform in `±1/sqrt(fan_in)` where fan-in is the last dimension.
pub fn init_uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let fan_in = *shape.last().expect("non-empty shape");
    init_uniform_bound(rng, shape, 1.0 / (fan_in as f64).sqrt())
}

pub fn init_uniform_bound(rng: &mut ChaCha8Rng, shape: &[usize], bound: f64) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-bound..bound)).collect()).expect("shape")
}

/// Everything that determines the network's structure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dims: Dims,
    pub ablation: Ablation,
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: Dims::default(),
            ablation: Ablation::default(),
            dropout: 0.1,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} must lie in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

pub const UTTERANCE_ENCODER: &str = "utterance_encoder";
pub const ACTION_ENCODER: &str = "action_encoder";
pub const ONTOLOGY_ENCODER: &str = "ontology_encoder";
pub const SENTINEL_PARAM: &str = "sentinel.embedding";

/// Parameter handles and the forward pass.
#[derive(Clone, Debug)]
pub struct SimNet {
    pub config: ModelConfig,
    pub featurizer: FeaturizerParams,
    pub utterance: SeqEncoder,
    pub action: SeqEncoder,
    pub ontology: SeqEncoder,
    pub scorer: ScorerParams,
    pub sentinel: ParamId,
}

/// Source of dropout masks during training. `None` means eval mode.
pub type Dropout<'r> = Option<&'r mut ChaCha8Rng>;

impl SimNet {
    /// Registers all trainable parameters in a fixed order.
    pub fn register(store: &mut ParamStore, config: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let dims = &config.dims;
        let featurizer = FeaturizerParams::register(store, dims, &config.ablation, rng)?;
        let utterance = SeqEncoder::register(store, UTTERANCE_ENCODER, dims.d_u(&config.ablation), dims.hidden, rng)?;
        let action = SeqEncoder::register(store, ACTION_ENCODER, dims.d_word, dims.hidden, rng)?;
        let ontology = SeqEncoder::register(store, ONTOLOGY_ENCODER, dims.d_word, dims.hidden, rng)?;
        let scorer = ScorerParams::register(store, dims.d_rnn())?;
        let sentinel = store.add(SENTINEL_PARAM, init_uniform(rng, &[1, dims.d_word]), false)?;
        Ok(Self {
            config: config.clone(),
            featurizer,
            utterance,
            action,
            ontology,
            scorer,
            sentinel,
        })
    }

    /// Rebuilds the handles over a store restored from a checkpoint.
    pub fn attach(store: &ParamStore, config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let dims = &config.dims;
        let mut expected = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        Self::register(&mut expected, config, &mut rng)?;
        for (name, p) in expected.iter_by_name() {
            let id = store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if store.value(id).shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, config expects {:?}",
                    store.value(id).shape(),
                    p.value.shape()
                )));
            }
        }
        if store.len() != expected.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, config expects {}",
                store.len(),
                expected.len()
            )));
        }
        Ok(Self {
            config: config.clone(),
            featurizer: FeaturizerParams::attach(store, dims),
            utterance: SeqEncoder::attach(store, UTTERANCE_ENCODER)?,
            action: SeqEncoder::attach(store, ACTION_ENCODER)?,
            ontology: SeqEncoder::attach(store, ONTOLOGY_ENCODER)?,
            scorer: ScorerParams::attach(store)?,
            sentinel: store.id(SENTINEL_PARAM).expect("checked above"),
        })
    }

    /// Input mask for a `[steps × width]` sequence: one shared row under
    /// variational dropout, otherwise one row per step. `None` in eval mode.
    pub fn input_mask(&self, dropout: &mut Dropout<'_>, steps: usize, width: usize) -> Option<Tensor> {
        let rate = self.config.dropout;
        match dropout {
            Some(rng) if rate > 0.0 => Some(sample_input_mask(
                rng,
                steps,
                width,
                rate,
                self.config.ablation.use_var_dropout,
            )),
            _ => None,
        }
    }

    /// Summary vectors `s^O` of the ontology pairs, in the given order.
    pub fn encode_ontology(
        &self,
        g: &mut Graph<'_>,
        pairs: &[SlotValue],
        words: &EmbeddingTable,
        mut dropout: Dropout<'_>,
    ) -> Result<Vec<NodeId>> {
        let mut out = Vec::with_capacity(pairs.len());
        for pair in pairs {
            let text = slot_value_text(pair, TextSource::Ontology);
            let x = g.constant(featurize_slot_value(&text, words)?);
            let mask = self.input_mask(&mut dropout, text.tokens.len(), self.config.dims.d_word);
            let (_, s) = self.ontology.summarize(g, x, mask.as_ref())?;
            out.push(s);
        }
        Ok(out)
    }

    /// Summary vectors `s^A` of the previous system actions followed by the
    /// sentinel action.
    pub fn encode_actions(
        &self,
        g: &mut Graph<'_>,
        actions: &[SlotValue],
        words: &EmbeddingTable,
        mut dropout: Dropout<'_>,
    ) -> Result<Vec<NodeId>> {
        let d_word = self.config.dims.d_word;
        let mut out = Vec::with_capacity(actions.len() + 1);
        for action in actions {
            let text = slot_value_text(action, TextSource::SystemAction);
            let x = g.constant(featurize_slot_value(&text, words)?);
            let mask = self.input_mask(&mut dropout, text.tokens.len(), d_word);
            out.push(self.action.summarize(g, x, mask.as_ref())?.1);
        }
        let x = g.param(self.sentinel);
        let mask = self.input_mask(&mut dropout, 1, d_word);
        out.push(self.action.summarize(g, x, mask.as_ref())?.1);
        Ok(out)
    }

    /// Probability nodes, one per pair, for a single turn.
    ///
    /// `s_o[j]` is the ontology summary of `pairs[j]`. The utterance is
    /// encoded once per distinct exact-match pattern: pairs whose match
    /// columns coincide see the same `X^U`, so their `R^U` is shared.
    pub fn forward_turn(
        &self,
        g: &mut Graph<'_>,
        tokens: &[AnnotatedToken],
        actions: &[SlotValue],
        pairs: &[SlotValue],
        s_o: &[NodeId],
        words: &EmbeddingTable,
        mut dropout: Dropout<'_>,
    ) -> Result<Vec<NodeId>> {
        if pairs.len() != s_o.len() {
            return Err(Error::InvalidInput(format!(
                "{} pairs but {} ontology encodings",
                pairs.len(),
                s_o.len()
            )));
        }
        let base = self.featurizer.utterance_base(g, tokens, words)?;
        let d_u = self.config.dims.d_u(&self.config.ablation);
        // One mask per turn, shared by every pair's copy of the utterance.
        let utt_mask = self.input_mask(&mut dropout, tokens.len(), d_u);
        let s_a = self.encode_actions(g, actions, words, dropout)?;

        let texts: Vec<SlotValueText> = pairs.iter().map(|p| slot_value_text(p, TextSource::Ontology)).collect();
        let mut groups: HashMap<Vec<u8>, (NodeId, NodeId)> = HashMap::new();
        let (w1, b1, beta) = self.scorer.nodes(g);
        let mut probs = Vec::with_capacity(pairs.len());
        for (text, &s_o) in texts.iter().zip(s_o) {
            let key: Vec<u8> = if self.featurizer.uses_utt_features() {
                tokens
                    .iter()
                    .flat_map(|t| exact_match(t, text))
                    .map(|b| b as u8)
                    .collect()
            } else {
                Vec::new()
            };
            let (r_u, s_u) = match groups.get(&key) {
                Some(&enc) => enc,
                None => {
                    let x = self.featurizer.utterance_for_pair(g, base, tokens, text)?;
                    let enc = self.utterance.summarize(g, x, utt_mask.as_ref())?;
                    groups.insert(key, enc);
                    enc
                }
            };
            let y1 = scorer::content_score(g, r_u, s_o, w1, b1)?;
            let y2 = scorer::action_score(g, s_u, &s_a, s_o)?;
            probs.push(scorer::pair_probability(g, y1, y2, beta)?);
        }
        Ok(probs)
    }

    /// Summed binary cross entropy of one turn against its gold pairs.
    pub fn turn_loss(
        &self,
        g: &mut Graph<'_>,
        tokens: &[AnnotatedToken],
        actions: &[SlotValue],
        gold: &[SlotValue],
        pairs: &[SlotValue],
        s_o: &[NodeId],
        words: &EmbeddingTable,
        dropout: Dropout<'_>,
    ) -> Result<NodeId> {
        let probs = self.forward_turn(g, tokens, actions, pairs, s_o, words, dropout)?;
        let labels: Vec<f64> = pairs.iter().map(|p| if gold.contains(p) { 1.0 } else { 0.0 }).collect();
        scorer::bce_loss(g, &probs, &labels)
    }
}

/// Ontology encodings computed once for evaluation.
#[derive(Clone, Debug)]
pub struct EncodedOntology {
    pub pairs: Vec<SlotValue>,
    pub summaries: Vec<Tensor>,
}

/// A network together with its parameter values and word vectors.
#[derive(Clone, Debug)]
pub struct SimModel {
    pub net: SimNet,
    pub params: ParamStore,
    pub words: Arc<EmbeddingTable>,
}

impl SimModel {
    /// Fresh model; parameter initialization draws from `seed` only.
    /// Nothing here depends on an ontology.
    pub fn new(config: &ModelConfig, words: Arc<EmbeddingTable>, seed: u64) -> Result<Self> {
        check_word_dim(config, &words)?;
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = SimNet::register(&mut params, config, &mut rng)?;
        Ok(Self { net, params, words })
    }

    pub fn from_params(config: &ModelConfig, params: ParamStore, words: Arc<EmbeddingTable>) -> Result<Self> {
        check_word_dim(config, &words)?;
        let net = SimNet::attach(&params, config)?;
        Ok(Self { net, params, words })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.net.config
    }

    /// Trainable parameter count; the frozen word table is never counted.
    pub fn parameter_count(&self) -> usize {
        self.params.count(true)
    }

    pub fn encode_ontology(&self, ontology: &Ontology) -> Result<EncodedOntology> {
        let pairs = ontology.pairs();
        let mut g = Graph::new(&self.params);
        let nodes = self.net.encode_ontology(&mut g, &pairs, &self.words, None)?;
        let summaries = nodes.iter().map(|&n| g.value(n).clone()).collect();
        Ok(EncodedOntology { pairs, summaries })
    }

    /// Eval-mode probabilities, aligned with `encoded.pairs`.
    pub fn score_encoded(
        &self,
        tokens: &[AnnotatedToken],
        actions: &[SlotValue],
        encoded: &EncodedOntology,
    ) -> Result<Vec<f64>> {
        let mut g = Graph::new(&self.params);
        let s_o: Vec<NodeId> = encoded.summaries.iter().map(|t| g.constant(t.clone())).collect();
        let probs = self
            .net
            .forward_turn(&mut g, tokens, actions, &encoded.pairs, &s_o, &self.words, None)?;
        Ok(probs.iter().map(|&p| g.value(p).item()).collect())
    }

    /// One probability per ontology pair for a single turn.
    pub fn score_turn(
        &self,
        tokens: &[AnnotatedToken],
        actions: &[SlotValue],
        ontology: &Ontology,
    ) -> Result<Vec<(SlotValue, f64)>> {
        let encoded = self.encode_ontology(ontology)?;
        let probs = self.score_encoded(tokens, actions, &encoded)?;
        Ok(encoded.pairs.into_iter().zip(probs).collect())
    }
}

fn check_word_dim(config: &ModelConfig, words: &EmbeddingTable) -> Result<()> {
    if words.dim() != config.dims.d_word {
        return Err(Error::Config(format!(
            "word vectors have {} dims but the model expects {}",
            words.dim(),
            config.dims.d_word
        )));
    }
    Ok(())
}
