use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Name of the distinguished slot whose values are requestable fields.
pub const REQUEST_SLOT: &str = "request";

/// Tag used for tokens whose POS/NER annotation is unknown.
pub const UNK_TAG: &str = "<unk>";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Goal,
    Request,
}

/// A slot-value pair. The kind is derived from the slot name.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SlotValue {
    pub slot: String,
    pub value: String,
    pub kind: Kind,
}

impl SlotValue {
    pub fn new(slot: impl Into<String>, value: impl Into<String>) -> Self {
        let slot = slot.into();
        let kind = if slot == REQUEST_SLOT {
            Kind::Request
        } else {
            Kind::Goal
        };
        Self {
            slot,
            value: value.into(),
            kind,
        }
    }

    pub fn request(value: impl Into<String>) -> Self {
        Self::new(REQUEST_SLOT, value)
    }

    pub fn is_request(&self) -> bool {
        self.kind == Kind::Request
    }
}

impl fmt::Display for SlotValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.slot, self.value)
    }
}

// Serialized as a two-element array `[slot, value]`.
impl Serialize for SlotValue {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        (&self.slot, &self.value).serialize(s)
    }
}

impl<'de> Deserialize<'de> for SlotValue {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let (slot, value) = <(String, String)>::deserialize(d)?;
        Ok(SlotValue::new(slot, value))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedToken {
    pub surface: String,
    pub lemma: String,
    pub pos: String,
    pub ner: String,
}

impl AnnotatedToken {
    /// A token with no annotation: lemma equals the surface form and both
    /// tags are unknown.
    pub fn bare(surface: impl Into<String>) -> Self {
        let surface = surface.into();
        Self {
            lemma: surface.clone(),
            surface,
            pos: UNK_TAG.into(),
            ner: UNK_TAG.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AsrHypothesis {
    pub tokens: Vec<String>,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Turn {
    /// Position of the turn within its dialogue (0-based).
    pub index: usize,
    pub utterance: Vec<AnnotatedToken>,
    /// Ranked by descending score; empty when the corpus has no ASR.
    pub asr_hypotheses: Vec<AsrHypothesis>,
    pub system_actions: Vec<SlotValue>,
    pub gold_turn_goals: Vec<SlotValue>,
    pub gold_turn_requests: Vec<SlotValue>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" | "validate" | "valid" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidInput(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dialogue {
    pub id: String,
    pub split: Split,
    pub turns: Vec<Turn>,
}

/// Which user utterance to feed the model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtteranceMode {
    #[default]
    Transcript,
    AsrTop1,
}

impl FromStr for UtteranceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "transcript" => Ok(UtteranceMode::Transcript),
            "asr_top1" => Ok(UtteranceMode::AsrTop1),
            other => Err(Error::InvalidInput(format!(
                "unknown mode `{other}` (expected transcript or asr_top1)"
            ))),
        }
    }
}

impl fmt::Display for UtteranceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            UtteranceMode::Transcript => "transcript",
            UtteranceMode::AsrTop1 => "asr_top1",
        })
    }
}

/// Picks the token sequence the model sees for a turn. ASR hypotheses carry
/// no annotations, so their tokens come back with unknown tags.
pub fn select_utterance(
    dialogue_id: &str,
    turn: &Turn,
    mode: UtteranceMode,
) -> Result<Vec<AnnotatedToken>> {
    match mode {
        UtteranceMode::Transcript => Ok(turn.utterance.clone()),
        UtteranceMode::AsrTop1 => {
            let top = turn
                .asr_hypotheses
                .iter()
                .max_by(|a, b| a.score.total_cmp(&b.score).then(std::cmp::Ordering::Greater))
                .ok_or_else(|| Error::MissingAsr {
                    dialogue: dialogue_id.to_string(),
                    turn: turn.index,
                })?;
            Ok(top.tokens.iter().map(AnnotatedToken::bare).collect())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn turn_with_asr(hyps: &[(&str, f64)]) -> Turn {
        Turn {
            index: 3,
            utterance: vec![AnnotatedToken::bare("transcript"), AnnotatedToken::bare("tokens")],
            asr_hypotheses: hyps
                .iter()
                .map(|(t, s)| AsrHypothesis {
                    tokens: t.split_whitespace().map(String::from).collect(),
                    score: *s,
                })
                .collect(),
            system_actions: vec![],
            gold_turn_goals: vec![],
            gold_turn_requests: vec![],
        }
    }

    fn surfaces(tokens: &[AnnotatedToken]) -> Vec<&str> {
        tokens.iter().map(|t| t.surface.as_str()).collect()
    }

    #[test]
    fn asr_top1_picks_highest_score() {
        let turn = turn_with_asr(&[("cheap restaurant", 0.8), ("chip restaurant", 0.2)]);
        let toks = select_utterance("d", &turn, UtteranceMode::AsrTop1).unwrap();
        assert_eq!(surfaces(&toks), ["cheap", "restaurant"]);
    }

    #[test]
    fn asr_top1_ties_keep_first() {
        let turn = turn_with_asr(&[("first", 0.5), ("second", 0.5)]);
        let toks = select_utterance("d", &turn, UtteranceMode::AsrTop1).unwrap();
        assert_eq!(surfaces(&toks), ["first"]);
    }

    #[test]
    fn transcript_ignores_hypotheses() {
        let turn = turn_with_asr(&[("cheap restaurant", 0.8)]);
        let toks = select_utterance("d", &turn, UtteranceMode::Transcript).unwrap();
        assert_eq!(surfaces(&toks), ["transcript", "tokens"]);
    }

    #[test]
    fn single_hypothesis() {
        let turn = turn_with_asr(&[("only one", -3.0)]);
        let toks = select_utterance("d", &turn, UtteranceMode::AsrTop1).unwrap();
        assert_eq!(surfaces(&toks), ["only", "one"]);
    }

    #[test]
    fn missing_asr_names_turn() {
        let turn = turn_with_asr(&[]);
        let err = select_utterance("dlg-7", &turn, UtteranceMode::AsrTop1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("dlg-7") && msg.contains("turn 3"), "{msg}");
    }

    #[test]
    fn slot_value_kind_follows_slot() {
        assert_eq!(SlotValue::new("request", "phone").kind, Kind::Request);
        assert_eq!(SlotValue::new("area", "south").kind, Kind::Goal);
        let json = serde_json::to_string(&SlotValue::new("area", "south")).unwrap();
        assert_eq!(json, r#"["area","south"]"#);
    }
}
