//! Line-delimited native corpus format: one dialogue record per line.
//!
//! ```text
//! {"id":"d1","split":"train","turns":[{"tokens":["i","want","thai","food"],
//!   "lemmas":[…],"pos":[…],"ner":[…],"system_actions":[["request","food"]],
//!   "turn_goals":[["food","thai"]],"turn_requests":[],
//!   "asr":[{"tokens":["i","want","thai","food"],"score":0.9}]}]}
//! ```

use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::types::{AnnotatedToken, AsrHypothesis, Dialogue, SlotValue, Split, Turn};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    split: Split,
    turns: Vec<TurnRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TurnRecord {
    tokens: Vec<String>,
    lemmas: Vec<String>,
    pos: Vec<String>,
    ner: Vec<String>,
    system_actions: Vec<SlotValue>,
    turn_goals: Vec<SlotValue>,
    turn_requests: Vec<SlotValue>,
    #[serde(default)]
    asr: Vec<AsrRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct AsrRecord {
    tokens: Vec<String>,
    score: f64,
}

/// Serializes one dialogue as a single JSON line (no trailing newline).
pub fn to_line(dialogue: &Dialogue) -> String {
    let record = Record {
        id: dialogue.id.clone(),
        split: dialogue.split,
        turns: dialogue
            .turns
            .iter()
            .map(|t| TurnRecord {
                tokens: t.utterance.iter().map(|a| a.surface.clone()).collect(),
                lemmas: t.utterance.iter().map(|a| a.lemma.clone()).collect(),
                pos: t.utterance.iter().map(|a| a.pos.clone()).collect(),
                ner: t.utterance.iter().map(|a| a.ner.clone()).collect(),
                system_actions: t.system_actions.clone(),
                turn_goals: t.gold_turn_goals.clone(),
                turn_requests: t.gold_turn_requests.clone(),
                asr: t
                    .asr_hypotheses
                    .iter()
                    .map(|h| AsrRecord {
                        tokens: h.tokens.clone(),
                        score: h.score,
                    })
                    .collect(),
            })
            .collect(),
    };
    serde_json::to_string(&record).expect("dialogue record serializes")
}

pub fn to_string(dialogues: &[Dialogue]) -> String {
    let mut out = String::new();
    for d in dialogues {
        out.push_str(&to_line(d));
        out.push('\n');
    }
    out
}

/// Parses one record line. Tokens and lemmas are lowercased; turns whose
/// utterance is empty are dropped with a warning.
pub fn parse_line(line: &str, path: &Path, line_no: usize) -> Result<Dialogue> {
    let err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: line_no,
        message,
    };
    let record: Record = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
    let mut turns = Vec::with_capacity(record.turns.len());
    for (index, t) in record.turns.into_iter().enumerate() {
        let n = t.tokens.len();
        if t.lemmas.len() != n || t.pos.len() != n || t.ner.len() != n {
            return Err(err(format!(
                "turn {index}: tokens/lemmas/pos/ner lengths differ ({n}/{}/{}/{})",
                t.lemmas.len(),
                t.pos.len(),
                t.ner.len()
            )));
        }
        let utterance: Vec<AnnotatedToken> = t
            .tokens
            .into_iter()
            .zip(t.lemmas)
            .zip(t.pos)
            .zip(t.ner)
            .map(|(((surface, lemma), pos), ner)| AnnotatedToken {
                surface: surface.to_lowercase(),
                lemma: lemma.to_lowercase(),
                pos,
                ner,
            })
            .collect();
        if utterance.is_empty() {
            log::warn!(
                "{}:{line_no}: dialogue {} turn {index} has an empty utterance; dropped",
                path.display(),
                record.id
            );
            continue;
        }
        let mut asr_hypotheses: Vec<AsrHypothesis> = t
            .asr
            .into_iter()
            .map(|h| AsrHypothesis {
                tokens: h.tokens.iter().map(|s| s.to_lowercase()).collect(),
                score: h.score,
            })
            .collect();
        asr_hypotheses.sort_by(|a, b| b.score.total_cmp(&a.score));
        turns.push(Turn {
            index,
            utterance,
            asr_hypotheses,
            system_actions: t.system_actions,
            gold_turn_goals: t.turn_goals,
            gold_turn_requests: t.turn_requests,
        });
    }
    Ok(Dialogue {
        id: record.id,
        split: record.split,
        turns,
    })
}

pub fn read_file(path: &Path) -> Result<Vec<Dialogue>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_line(&line, path, i + 1)?);
    }
    if out.is_empty() {
        return Err(Error::EmptyCorpus(path.to_path_buf()));
    }
    Ok(out)
}

pub fn write_file(path: &Path, dialogues: &[Dialogue]) -> Result<()> {
    std::fs::write(path, to_string(dialogues)).map_err(|e| Error::io(path, e))
}
