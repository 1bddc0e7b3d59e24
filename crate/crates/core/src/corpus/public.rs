//! Loader for the publicly distributed WoZ 2.0 / DSTC2 JSON dialogue files.
//!
//! Each file is a list of `{"dialogue_idx", "dialogue": [turn…]}` objects
//! whose turns carry `transcript`, `system_acts`, `turn_label` and, for
//! DSTC2, `asr` as `[[text, score], …]`. A system act is either a bare slot
//! name (the system requested that slot) or a `[slot, value]` pair.
//!
//! Token annotations come from an optional sidecar next to each dialogue
//! file, `<stem>.ann.jsonl`, with one record per turn:
//! `{"id": "<dialogue_idx>", "turn": <turn_idx>, "tokens": […], "lemmas": […],
//! "pos": […], "ner": […]}`. Without a sidecar the transcript is split on
//! whitespace and punctuation and every tag is unknown.

use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::types::{AnnotatedToken, AsrHypothesis, Dialogue, SlotValue, Split, Turn};
use crate::error::{Error, Result};

#[derive(Deserialize)]
struct SidecarRecord {
    id: String,
    turn: usize,
    tokens: Vec<String>,
    lemmas: Vec<String>,
    pos: Vec<String>,
    ner: Vec<String>,
}

type Sidecar = HashMap<(String, usize), Vec<AnnotatedToken>>;

pub fn sidecar_path(dialogue_file: &Path) -> std::path::PathBuf {
    let stem = dialogue_file
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    dialogue_file.with_file_name(format!("{stem}.ann.jsonl"))
}

fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let r: SidecarRecord = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        let n = r.tokens.len();
        if r.lemmas.len() != n || r.pos.len() != n || r.ner.len() != n {
            return Err(err("tokens/lemmas/pos/ner lengths differ".into()));
        }
        let tokens = r
            .tokens
            .into_iter()
            .zip(r.lemmas)
            .zip(r.pos)
            .zip(r.ner)
            .map(|(((surface, lemma), pos), ner)| AnnotatedToken {
                surface: surface.to_lowercase(),
                lemma: lemma.to_lowercase(),
                pos,
                ner,
            })
            .collect();
        out.insert((r.id, r.turn), tokens);
    }
    Ok(out)
}

/// Lowercases and splits on whitespace, separating ASCII punctuation into
/// tokens of its own.
pub fn simple_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        let mut cur = String::new();
        for ch in word.chars() {
            if ch.is_ascii_punctuation() && ch != '\'' && ch != '-' {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(ch.to_string());
            } else {
                cur.extend(ch.to_lowercase());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

fn parse_act(act: &Value) -> Option<SlotValue> {
    match act {
        Value::String(slot) => Some(SlotValue::request(slot.clone())),
        Value::Array(items) => match items.as_slice() {
            [Value::String(slot)] => Some(SlotValue::request(slot.clone())),
            [Value::String(slot), Value::String(value)] => Some(SlotValue::new(slot.clone(), value.clone())),
            _ => None,
        },
        _ => None,
    }
}

fn parse_asr(v: &Value) -> Option<AsrHypothesis> {
    let (text, score) = match v {
        Value::Array(items) => match items.as_slice() {
            [Value::String(t), s] => (t.as_str(), s.as_f64()?),
            _ => return None,
        },
        Value::Object(map) => (
            map.get("hyp").or_else(|| map.get("text"))?.as_str()?,
            map.get("score")?.as_f64()?,
        ),
        _ => return None,
    };
    Some(AsrHypothesis {
        tokens: simple_tokenize(text),
        score,
    })
}

/// Reads one public dialogue file into dialogues of the given split.
pub fn read_file(path: &Path, split: Split) -> Result<Vec<Dialogue>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root: Value = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    let err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message,
    };
    let sidecar_file = sidecar_path(path);
    let sidecar = if sidecar_file.exists() {
        Some(read_sidecar(&sidecar_file)?)
    } else {
        log::warn!(
            "{}: no annotation sidecar ({}); using plain tokenization with unknown tags",
            path.display(),
            sidecar_file.display()
        );
        None
    };

    let items = root
        .as_array()
        .ok_or_else(|| err("expected a top-level array of dialogues".into()))?;
    if items.is_empty() {
        return Err(Error::EmptyCorpus(path.to_path_buf()));
    }
    let mut dialogues = Vec::with_capacity(items.len());
    for (di, item) in items.iter().enumerate() {
        let id = match item.get("dialogue_idx") {
            Some(Value::String(s)) => s.clone(),
            Some(Value::Number(n)) => n.to_string(),
            _ => return Err(err(format!("dialogue #{di}: missing dialogue_idx"))),
        };
        let raw_turns = item
            .get("dialogue")
            .and_then(Value::as_array)
            .ok_or_else(|| err(format!("dialogue {id}: missing `dialogue` array")))?;
        let mut turns = Vec::with_capacity(raw_turns.len());
        for (ti, t) in raw_turns.iter().enumerate() {
            let index = t
                .get("turn_idx")
                .and_then(Value::as_u64)
                .map_or(ti, |v| v as usize);
            let utterance = match &sidecar {
                Some(map) => map.get(&(id.clone(), index)).cloned().ok_or_else(|| {
                    err(format!("dialogue {id} turn {index}: missing from annotation sidecar"))
                })?,
                None => {
                    let transcript = t.get("transcript").and_then(Value::as_str).unwrap_or("");
                    simple_tokenize(transcript)
                        .into_iter()
                        .map(AnnotatedToken::bare)
                        .collect()
                }
            };
            if utterance.is_empty() {
                log::warn!("{}: dialogue {id} turn {index} has an empty utterance; dropped", path.display());
                continue;
            }
            let mut system_actions = Vec::new();
            for act in t.get("system_acts").and_then(Value::as_array).into_iter().flatten() {
                system_actions.push(
                    parse_act(act).ok_or_else(|| err(format!("dialogue {id} turn {index}: bad system act {act}")))?,
                );
            }
            let mut goals = Vec::new();
            let mut requests = Vec::new();
            for label in t.get("turn_label").and_then(Value::as_array).into_iter().flatten() {
                let pair = match parse_act(label) {
                    Some(p) if matches!(label, Value::Array(a) if a.len() == 2) => p,
                    _ => return Err(err(format!("dialogue {id} turn {index}: bad turn label {label}"))),
                };
                if pair.is_request() {
                    requests.push(pair);
                } else {
                    goals.push(pair);
                }
            }
            let mut asr_hypotheses: Vec<AsrHypothesis> = t
                .get("asr")
                .and_then(Value::as_array)
                .into_iter()
                .flatten()
                .filter_map(parse_asr)
                .collect();
            asr_hypotheses.sort_by(|a, b| b.score.total_cmp(&a.score));
            turns.push(Turn {
                index,
                utterance,
                asr_hypotheses,
                system_actions,
                gold_turn_goals: goals,
                gold_turn_requests: requests,
            });
        }
        dialogues.push(Dialogue { id, split, turns });
    }
    Ok(dialogues)
}
