//! Ontologies, dialogues and labels, plus the loaders that produce them.

mod joint;
pub mod native;
mod ontology;
pub mod public;
pub mod synthetic;
mod types;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use joint::{accumulate_joint_goals, JointGoal};
pub use ontology::{Ontology, SlotDef};
pub use synthetic::{generate_synthetic_corpus, OntologySpec};
pub use types::{
    select_utterance, AnnotatedToken, AsrHypothesis, Dialogue, Kind, SlotValue, Split, Turn,
    UtteranceMode, REQUEST_SLOT, UNK_TAG,
};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Woz,
    Dstc2,
    #[default]
    Native,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "woz" => Ok(CorpusFormat::Woz),
            "dstc2" => Ok(CorpusFormat::Dstc2),
            "native" => Ok(CorpusFormat::Native),
            other => Err(Error::InvalidInput(format!("unknown corpus format `{other}`"))),
        }
    }
}

impl fmt::Display for CorpusFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CorpusFormat::Woz => "woz",
            CorpusFormat::Dstc2 => "dstc2",
            CorpusFormat::Native => "native",
        })
    }
}

/// Name of the ontology file inside a corpus directory.
pub const ONTOLOGY_FILE: &str = "ontology.json";
/// Name of the dialogue file the native writer produces.
pub const NATIVE_DIALOGUES_FILE: &str = "dialogues.jsonl";

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub dialogues: Vec<Dialogue>,
    pub ontology: Ontology,
}

impl Corpus {
    /// Validates labels against the ontology and builds the corpus.
    pub fn new(dialogues: Vec<Dialogue>, ontology: Ontology) -> Result<Self> {
        validate_labels(&dialogues, &ontology)?;
        let mut seen = HashSet::new();
        for d in &dialogues {
            if !seen.insert((d.split, d.id.as_str())) {
                return Err(Error::InvalidInput(format!("duplicate dialogue id `{}` in {} split", d.id, d.split)));
            }
        }
        Ok(Self { dialogues, ontology })
    }

    pub fn split(&self, split: Split) -> Vec<&Dialogue> {
        self.dialogues.iter().filter(|d| d.split == split).collect()
    }

    pub fn split_owned(&self, split: Split) -> Vec<Dialogue> {
        self.dialogues.iter().filter(|d| d.split == split).cloned().collect()
    }

    /// Dialogue and turn counts per split.
    pub fn split_sizes(&self) -> Vec<(Split, usize, usize)> {
        Split::ALL
            .iter()
            .map(|&s| {
                let ds = self.split(s);
                (s, ds.len(), ds.iter().map(|d| d.turns.len()).sum())
            })
            .collect()
    }

    /// Writes `ontology.json` and `dialogues.jsonl` into `dir`.
    pub fn write_native(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let opath = dir.join(ONTOLOGY_FILE);
        std::fs::write(&opath, self.ontology.to_json()).map_err(|e| Error::io(&opath, e))?;
        native::write_file(&dir.join(NATIVE_DIALOGUES_FILE), &self.dialogues)
    }
}

/// Checks every gold label against the ontology, rejecting unknown pairs
/// and turns that assign two values to one goal slot.
pub fn validate_labels(dialogues: &[Dialogue], ontology: &Ontology) -> Result<()> {
    let mut unknown = Vec::new();
    for d in dialogues {
        for t in &d.turns {
            for pair in t.gold_turn_goals.iter().chain(&t.gold_turn_requests) {
                if !ontology.contains(pair) {
                    unknown.push(format!("{pair} in dialogue {} turn {}", d.id, t.index));
                }
            }
            if t.gold_turn_goals.iter().any(SlotValue::is_request)
                || t.gold_turn_requests.iter().any(|p| !p.is_request())
            {
                return Err(Error::InvalidInput(format!(
                    "dialogue {} turn {}: goal/request labels of the wrong kind",
                    d.id, t.index
                )));
            }
            let mut slots = HashSet::new();
            for g in &t.gold_turn_goals {
                if !slots.insert(g.slot.as_str()) {
                    return Err(Error::InvalidInput(format!(
                        "dialogue {} turn {}: several values for slot `{}` in one turn",
                        d.id, t.index, g.slot
                    )));
                }
            }
        }
    }
    if !unknown.is_empty() {
        return Err(Error::UnknownLabels(unknown));
    }
    Ok(())
}

fn list_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Loads a corpus directory.
///
/// * `native`: `ontology.json` plus every `*.jsonl` file in the directory.
/// * `woz` / `dstc2`: an ontology file (`ontology*.json`) plus dialogue
///   files whose names contain `train`, `validate`/`dev`, or `test`.
///
/// A path to a single dialogue file is also accepted; the ontology is then
/// looked up next to it.
pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    if !path.exists() {
        return Err(Error::io(path, std::io::Error::new(std::io::ErrorKind::NotFound, "no such file or directory")));
    }
    let (dir, files) = if path.is_dir() {
        (path.to_path_buf(), list_dir(path)?)
    } else {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        (dir, vec![path.to_path_buf()])
    };

    let ontology_path = if dir.join(ONTOLOGY_FILE).exists() {
        dir.join(ONTOLOGY_FILE)
    } else {
        list_dir(&dir)?
            .into_iter()
            .find(|p| file_name(p).starts_with("ontology") && file_name(p).ends_with(".json"))
            .ok_or_else(|| Error::Config(format!("no ontology file in {}", dir.display())))?
    };
    let ontology = Ontology::load(&ontology_path)?;

    let mut dialogues = Vec::new();
    match format {
        CorpusFormat::Native => {
            for f in files.iter().filter(|p| p.extension().is_some_and(|e| e == "jsonl")) {
                if file_name(f).ends_with(".ann.jsonl") {
                    continue;
                }
                dialogues.extend(native::read_file(f)?);
            }
        }
        CorpusFormat::Woz | CorpusFormat::Dstc2 => {
            for f in &files {
                let name = file_name(f);
                if !name.ends_with(".json") || name.starts_with("ontology") {
                    continue;
                }
                let split = if name.contains("train") {
                    Split::Train
                } else if name.contains("validate") || name.contains("dev") {
                    Split::Dev
                } else if name.contains("test") {
                    Split::Test
                } else {
                    continue;
                };
                dialogues.extend(public::read_file(f, split)?);
            }
        }
    }
    if dialogues.is_empty() {
        return Err(Error::EmptyCorpus(path.to_path_buf()));
    }
    let corpus = Corpus::new(dialogues, ontology)?;
    for (split, n_dialogues, n_turns) in corpus.split_sizes() {
        log::info!("{}: {split}: {n_dialogues} dialogues, {n_turns} turns", path.display());
    }
    Ok(corpus)
}
