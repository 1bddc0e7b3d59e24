//! Per-token utterance features and slot-value text embeddings.
//!
//! An utterance token is represented as `[word; char-CNN; POS; NER; match]`
//! where the last two columns are the exact-match bits against one
//! particular slot-value pair. Slot-value texts are embedded with the frozen
//! word table only.

use std::collections::{HashMap, HashSet};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::corpus::{AnnotatedToken, Kind, SlotValue};
use crate::error::{Error, Result};
use crate::model::{init_uniform, Ablation, Dims};
use crate::tensor::Tensor;

pub const RANDOM_VECTOR_RANGE: f64 = 0.7;

/// Frozen pretrained word vectors. Row 0 is the all-zero unknown-word row.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    vocab: HashMap<String, usize>,
    dim: usize,
    vectors: Vec<f64>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        Self {
            vocab: HashMap::new(),
            dim,
            vectors: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of rows including the unknown-word row.
    pub fn rows(&self) -> usize {
        self.vectors.len() / self.dim
    }

    pub fn is_frozen(&self) -> bool {
        true
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vocab.contains_key(word)
    }

    /// Adds a word; the first vector for a word wins.
    pub fn insert(&mut self, word: &str, vector: &[f64]) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::InvalidInput(format!(
                "vector for `{word}` has {} dims, table has {}",
                vector.len(),
                self.dim
            )));
        }
        if !self.vocab.contains_key(word) {
            self.vocab.insert(word.to_string(), self.rows());
            self.vectors.extend_from_slice(vector);
        }
        Ok(())
    }

    pub fn lookup(&self, word: &str) -> &[f64] {
        let row = self.vocab.get(word).copied().unwrap_or(0);
        &self.vectors[row * self.dim..(row + 1) * self.dim]
    }

    /// `[n × dim]` matrix of word vectors; unknown words give zero rows.
    pub fn embed<S: AsRef<str>>(&self, words: &[S]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(words.len() * self.dim);
        for w in words {
            data.extend_from_slice(self.lookup(w.as_ref()));
        }
        Tensor::matrix(words.len(), self.dim, data)
    }

    /// Deterministic random vectors for a vocabulary, for corpora without
    /// pretrained embeddings. Entries are uniform in `±RANDOM_VECTOR_RANGE`,
    /// about the spread of GloVe coordinates.
    pub fn random<S: AsRef<str>>(words: &[S], dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = Self::new(dim);
        for w in words {
            let v: Vec<f64> = (0..dim)
                .map(|_| rng.gen_range(-RANDOM_VECTOR_RANGE..RANDOM_VECTOR_RANGE))
                .collect();
            table.insert(w.as_ref(), &v).expect("dims match");
        }
        table
    }

    /// Reads a GloVe-style text file: a token followed by `dim`
    /// whitespace-separated floats per line. Tokens are lowercased. When
    /// `keep` is given, only those words are retained.
    pub fn load_glove(path: &Path, keep: Option<&HashSet<String>>) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut table: Option<Self> = None;
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 2 {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message,
            };
            let dim = match &table {
                Some(t) => t.dim,
                None => {
                    // Some releases contain tokens with spaces, so the
                    // dimension is fixed by the first line.
                    fields.len() - 1
                }
            };
            if fields.len() < dim + 1 {
                return Err(err(format!("expected {dim} values, got {}", fields.len() - 1)));
            }
            let split = fields.len() - dim;
            let word = fields[..split].join(" ").to_lowercase();
            let t = table.get_or_insert_with(|| Self::new(dim));
            if keep.is_some_and(|k| !k.contains(&word)) || t.contains(&word) {
                continue;
            }
            let vector = fields[split..]
                .iter()
                .map(|f| f.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| err(e.to_string()))?;
            t.insert(&word, &vector)?;
        }
        table.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: "no vectors found".into(),
        })
    }

    /// Writes the table in GloVe text format, words in row order.
    pub fn write_glove(&self, path: &Path) -> Result<()> {
        let mut rows: Vec<(&String, &usize)> = self.vocab.iter().collect();
        rows.sort_by_key(|(_, r)| **r);
        let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        for (word, row) in rows {
            let v = &self.vectors[row * self.dim..(row + 1) * self.dim];
            let nums: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            writeln!(out, "{word} {}", nums.join(" ")).map_err(|e| Error::io(path, e))?;
        }
        out.flush().map_err(|e| Error::io(path, e))
    }
}

/// A closed tag inventory with a trailing unknown tag.
#[derive(Clone, Debug)]
pub struct TagSet {
    tags: Vec<String>,
    index: HashMap<String, usize>,
}

impl TagSet {
    pub fn new(tags: &[&str]) -> Self {
        let mut all: Vec<String> = tags.iter().map(|t| t.to_string()).collect();
        all.push(crate::corpus::UNK_TAG.into());
        let index = all.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Self { tags: all, index }
    }

    /// Penn Treebank part-of-speech tags plus unknown.
    pub fn pos() -> Self {
        Self::new(PTB_TAGS)
    }

    /// OntoNotes entity labels, the "O" outside label, plus unknown.
    pub fn ner() -> Self {
        let mut tags = ONTONOTES_LABELS.to_vec();
        tags.push("O");
        Self::new(&tags)
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn index(&self, tag: &str) -> usize {
        self.index.get(tag).copied().unwrap_or(self.tags.len() - 1)
    }
}

pub const PTB_TAGS: &[&str] = &[
    "CC", "CD", "DT", "EX", "FW", "IN", "JJ", "JJR", "JJS", "LS", "MD", "NN", "NNS", "NNP", "NNPS", "PDT",
    "POS", "PRP", "PRP$", "RB", "RBR", "RBS", "RP", "SYM", "TO", "UH", "VB", "VBD", "VBG", "VBN", "VBP",
    "VBZ", "WDT", "WP", "WP$", "WRB", "$", "#", "``", "''", "-LRB-", "-RRB-", ",", ".", ":",
];

pub const ONTONOTES_LABELS: &[&str] = &[
    "PERSON", "NORP", "FAC", "ORG", "GPE", "LOC", "PRODUCT", "EVENT", "WORK_OF_ART", "LAW", "LANGUAGE",
    "DATE", "TIME", "PERCENT", "MONEY", "QUANTITY", "ORDINAL", "CARDINAL",
];

/// Printable ASCII plus one unknown-character row. Padding is a zero
/// vector inside the convolution and has no row of its own.
pub const CHARSET_SIZE: usize = 95 + 1;

pub fn char_index(c: char) -> usize {
    match c as u32 {
        code @ 0x20..=0x7e => (code - 0x20) as usize,
        _ => CHARSET_SIZE - 1,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TextSource {
    Ontology,
    SystemAction,
}

/// Word sequence standing for a slot-value pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotValueText {
    pub tokens: Vec<String>,
    pub source: TextSource,
    pub kind: Kind,
}

pub const SENTINEL_TOKEN: &str = "<sentinel>";

impl SlotValueText {
    /// The extra system action that lets attention ignore the real ones.
    pub fn sentinel() -> Self {
        Self {
            tokens: vec![SENTINEL_TOKEN.into()],
            source: TextSource::SystemAction,
            kind: Kind::Request,
        }
    }

    pub fn is_sentinel(&self) -> bool {
        self.tokens.len() == 1 && self.tokens[0] == SENTINEL_TOKEN
    }

    /// Tokens that carry content: everything after the leading
    /// `inform`/`request` marker.
    pub fn content(&self) -> &[String] {
        if self.is_sentinel() {
            &self.tokens
        } else {
            &self.tokens[1..]
        }
    }
}

/// `inform <slot words> <value words>` for goals and
/// `request <value words>` for requests.
pub fn slot_value_text(pair: &SlotValue, source: TextSource) -> SlotValueText {
    let mut tokens = Vec::new();
    match pair.kind {
        Kind::Goal => {
            tokens.push("inform".to_string());
            tokens.extend(pair.slot.split_whitespace().map(str::to_lowercase));
        }
        Kind::Request => tokens.push("request".to_string()),
    }
    tokens.extend(pair.value.split_whitespace().map(str::to_lowercase));
    SlotValueText {
        tokens,
        source,
        kind: pair.kind,
    }
}

/// Two bits: surface form in the pair's content words, lemma in them.
pub fn exact_match(token: &AnnotatedToken, text: &SlotValueText) -> [f64; 2] {
    let content = text.content();
    let surface = token.surface.to_lowercase();
    let lemma = token.lemma.to_lowercase();
    let hit = |w: &str| if content.iter().any(|c| c == w) { 1.0 } else { 0.0 };
    [hit(&surface), hit(&lemma)]
}

/// `[m × 2]` exact-match columns of an utterance against one pair.
pub fn exact_match_matrix(tokens: &[AnnotatedToken], text: &SlotValueText) -> Result<Tensor> {
    let data: Vec<f64> = tokens.iter().flat_map(|t| exact_match(t, text)).collect();
    Tensor::matrix(tokens.len(), 2, data)
}

/// Row `j` is the word vector of token `j`; unknown words give zero rows.
pub fn featurize_slot_value(text: &SlotValueText, words: &EmbeddingTable) -> Result<Tensor> {
    if text.tokens.is_empty() {
        return Err(Error::InvalidInput("empty slot-value text".into()));
    }
    words.embed(&text.tokens)
}

/// Every word the featurizer may look up for these dialogues and this
/// ontology: utterance and ASR tokens plus slot-value texts.
pub fn vocabulary(dialogues: &[crate::corpus::Dialogue], ontology: &crate::corpus::Ontology) -> HashSet<String> {
    let mut out: HashSet<String> = ["inform", "request"].iter().map(|s| s.to_string()).collect();
    let add_text = |pair: &SlotValue, out: &mut HashSet<String>| {
        out.extend(slot_value_text(pair, TextSource::Ontology).tokens);
    };
    for pair in ontology.pairs() {
        add_text(&pair, &mut out);
    }
    for d in dialogues {
        for t in &d.turns {
            out.extend(t.utterance.iter().map(|a| a.surface.clone()));
            for h in &t.asr_hypotheses {
                out.extend(h.tokens.iter().cloned());
            }
            for a in &t.system_actions {
                add_text(a, &mut out);
            }
        }
    }
    out
}

/// Trainable parameters of the utterance featurizer.
#[derive(Clone, Debug)]
pub struct FeaturizerParams {
    pub char_table: Option<ParamId>,
    pub conv_weight: Option<ParamId>,
    pub conv_bias: Option<ParamId>,
    pub pos_table: Option<ParamId>,
    pub ner_table: Option<ParamId>,
    pos_tags: TagSet,
    ner_tags: TagSet,
    window: usize,
}

impl FeaturizerParams {
    pub fn register(store: &mut ParamStore, dims: &Dims, ablation: &Ablation, rng: &mut ChaCha8Rng) -> Result<Self> {
        let pos_tags = TagSet::pos();
        let ner_tags = TagSet::ner();
        let (mut char_table, mut conv_weight, mut conv_bias) = (None, None, None);
        if ablation.use_char_cnn {
            char_table = Some(store.add(
                "char_cnn.embedding",
                init_uniform(rng, &[CHARSET_SIZE, dims.char_dim]),
                false,
            )?);
            conv_weight = Some(store.add(
                "char_cnn.conv.weight",
                init_uniform(rng, &[dims.char_filters, dims.char_window * dims.char_dim]),
                false,
            )?);
            conv_bias = Some(store.add("char_cnn.conv.bias", Tensor::zeros(&[dims.char_filters]), false)?);
        }
        let (mut pos_table, mut ner_table) = (None, None);
        if ablation.use_utt_features {
            pos_table = Some(store.add("pos.embedding", init_uniform(rng, &[pos_tags.len(), dims.pos_dim]), false)?);
            ner_table = Some(store.add("ner.embedding", init_uniform(rng, &[ner_tags.len(), dims.ner_dim]), false)?);
        }
        Ok(Self {
            char_table,
            conv_weight,
            conv_bias,
            pos_table,
            ner_table,
            pos_tags,
            ner_tags,
            window: dims.char_window,
        })
    }

    /// Looks up the parameters of an existing store.
    pub fn attach(store: &ParamStore, dims: &Dims) -> Self {
        Self {
            char_table: store.id("char_cnn.embedding"),
            conv_weight: store.id("char_cnn.conv.weight"),
            conv_bias: store.id("char_cnn.conv.bias"),
            pos_table: store.id("pos.embedding"),
            ner_table: store.id("ner.embedding"),
            pos_tags: TagSet::pos(),
            ner_tags: TagSet::ner(),
            window: dims.char_window,
        }
    }

    pub fn uses_utt_features(&self) -> bool {
        self.pos_table.is_some()
    }

    /// Character-CNN vector of one word: convolution, max over time, tanh.
    pub fn char_cnn(&self, g: &mut Graph<'_>, word: &str) -> Result<Option<NodeId>> {
        let (Some(table), Some(w), Some(b)) = (self.char_table, self.conv_weight, self.conv_bias) else {
            return Ok(None);
        };
        let mut ids: Vec<usize> = word.chars().map(char_index).collect();
        if ids.is_empty() {
            ids.push(CHARSET_SIZE - 1);
        }
        let table = g.param(table);
        let chars = g.gather(table, &ids)?;
        let (w, b) = (g.param(w), g.param(b));
        let conv = g.conv1d(chars, w, b, self.window)?;
        let pooled = g.max_pool_time(conv)?;
        Ok(Some(g.tanh(pooled)))
    }

    /// Pair-independent columns `[word; char; pos; ner]` of an utterance.
    pub fn utterance_base(
        &self,
        g: &mut Graph<'_>,
        tokens: &[AnnotatedToken],
        words: &EmbeddingTable,
    ) -> Result<NodeId> {
        if tokens.is_empty() {
            return Err(Error::InvalidInput("cannot featurize an empty utterance".into()));
        }
        let surfaces: Vec<&str> = tokens.iter().map(|t| t.surface.as_str()).collect();
        let mut parts = vec![g.constant(words.embed(&surfaces)?)];
        if self.char_table.is_some() {
            let mut rows = Vec::with_capacity(tokens.len());
            for t in tokens {
                rows.push(self.char_cnn(g, &t.surface)?.expect("char cnn enabled"));
            }
            parts.push(g.stack(&rows)?);
        }
        if let (Some(pos), Some(ner)) = (self.pos_table, self.ner_table) {
            let pos_ids: Vec<usize> = tokens.iter().map(|t| self.pos_tags.index(&t.pos)).collect();
            let ner_ids: Vec<usize> = tokens.iter().map(|t| self.ner_tags.index(&t.ner)).collect();
            let pt = g.param(pos);
            parts.push(g.gather(pt, &pos_ids)?);
            let nt = g.param(ner);
            parts.push(g.gather(nt, &ner_ids)?);
        }
        g.concat(&parts)
    }

    /// Full `X^U` node for one pair: the base columns plus, when utterance
    /// features are enabled, the two exact-match columns.
    pub fn utterance_for_pair(
        &self,
        g: &mut Graph<'_>,
        base: NodeId,
        tokens: &[AnnotatedToken],
        text: &SlotValueText,
    ) -> Result<NodeId> {
        if !self.uses_utt_features() {
            return Ok(base);
        }
        let em = g.constant(exact_match_matrix(tokens, text)?);
        g.concat(&[base, em])
    }
}

/// Featurized utterance `X^U` (`[m × d_u]`) for a specific pair.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturizedUtterance {
    pub x_u: Tensor,
}

/// Evaluates `X^U` outside of training.
pub fn featurize_utterance(
    tokens: &[AnnotatedToken],
    pair: &SlotValue,
    params: &FeaturizerParams,
    store: &ParamStore,
    words: &EmbeddingTable,
) -> Result<FeaturizedUtterance> {
    let mut g = Graph::new(store);
    let base = params.utterance_base(&mut g, tokens, words)?;
    let text = slot_value_text(pair, TextSource::Ontology);
    let x = params.utterance_for_pair(&mut g, base, tokens, &text)?;
    Ok(FeaturizedUtterance { x_u: g.value(x).clone() })
}
