//! C ABI over the tracker: load a checkpoint, encode an ontology once and
//! score turns against it.
//!
//! Every fallible call returns a [`SimStatus`]; on failure the message is
//! available from [`sim_dst_last_error`] on the same thread. Handles are
//! opaque and must be released with their matching `*_free` function.
//! Strings returned by the library are freed with [`sim_dst_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use sim_dst::corpus::{AnnotatedToken, Ontology, SlotValue};
use sim_dst::featurizer::EmbeddingTable;
use sim_dst::model::EncodedOntology;
use sim_dst::trainer::{load_model, Checkpoint};
use sim_dst::{Error, SimModel};

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SimStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    Io = 4,
    Checkpoint = 5,
    Config = 6,
    Internal = 7,
}

/// A loaded model with its word vectors.
pub struct SimModelHandle {
    model: SimModel,
}

/// An ontology encoded by a particular model.
pub struct SimOntologyHandle {
    encoded: EncodedOntology,
    /// Identity of the model that produced the encodings.
    owner: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(e: &Error) -> SimStatus {
    match e {
        Error::Io { .. } => SimStatus::Io,
        Error::Checkpoint(_) => SimStatus::Checkpoint,
        Error::Config(_) => SimStatus::Config,
        Error::Parse { .. } | Error::InvalidInput(_) | Error::UnknownLabels(_) | Error::EmptyCorpus(_) => {
            SimStatus::InvalidInput
        }
        _ => SimStatus::Internal,
    }
}

struct Failure(SimStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            SimStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            SimStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(SimStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(SimStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn null(what: &str) -> Failure {
    Failure(SimStatus::NullPointer, format!("{what} is null"))
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn sim_dst_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint and GloVe-format word vectors.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sim_dst_model_load(
    checkpoint_path: *const c_char,
    embeddings_path: *const c_char,
    out: *mut *mut SimModelHandle,
) -> SimStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let ck = str_arg(checkpoint_path, "checkpoint_path")?;
        let emb = str_arg(embeddings_path, "embeddings_path")?;
        let checkpoint = Checkpoint::load(Path::new(ck))?;
        let words = Arc::new(EmbeddingTable::load_glove(Path::new(emb), None)?);
        let model = load_model(&checkpoint, words)?;
        *out = Box::into_raw(Box::new(SimModelHandle { model }));
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`sim_dst_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sim_dst_model_free(model: *mut SimModelHandle) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of trainable parameters (the frozen word table excluded).
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sim_dst_model_parameter_count(model: *const SimModelHandle, out: *mut usize) -> SimStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = model.model.parameter_count();
        Ok(())
    })
}

/// Encodes an ontology given as JSON (`{"informable": {slot: [values]},
/// "requestable": [slots]}`) with `model`.
///
/// # Safety
/// `model` must be a live handle, `ontology_json` a NUL-terminated string
/// and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sim_dst_ontology_encode(
    model: *const SimModelHandle,
    ontology_json: *const c_char,
    out: *mut *mut SimOntologyHandle,
) -> SimStatus {
    guard(|| {
        let handle = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let text = str_arg(ontology_json, "ontology_json")?;
        let ontology = Ontology::from_json_str(text, Path::new("<ontology>"))?;
        let encoded = handle.model.encode_ontology(&ontology)?;
        *out = Box::into_raw(Box::new(SimOntologyHandle {
            encoded,
            owner: model as usize,
        }));
        Ok(())
    })
}

/// # Safety
/// `ontology` must come from [`sim_dst_ontology_encode`].
#[no_mangle]
pub unsafe extern "C" fn sim_dst_ontology_free(ontology: *mut SimOntologyHandle) {
    if !ontology.is_null() {
        drop(Box::from_raw(ontology));
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TurnInput {
    tokens: Vec<String>,
    #[serde(default)]
    lemmas: Option<Vec<String>>,
    #[serde(default)]
    pos: Option<Vec<String>>,
    #[serde(default)]
    ner: Option<Vec<String>>,
    #[serde(default)]
    system_actions: Vec<SlotValue>,
}

#[derive(Serialize)]
struct Scored<'a> {
    slot: &'a str,
    value: &'a str,
    probability: f64,
}

fn annotate(turn: TurnInput) -> Result<Vec<AnnotatedToken>, Failure> {
    let n = turn.tokens.len();
    if n == 0 {
        return Err(Failure(SimStatus::InvalidInput, "turn has no tokens".into()));
    }
    for (name, col) in [("lemmas", &turn.lemmas), ("pos", &turn.pos), ("ner", &turn.ner)] {
        if let Some(c) = col {
            if c.len() != n {
                return Err(Failure(
                    SimStatus::InvalidInput,
                    format!("{name} has {} entries for {n} tokens", c.len()),
                ));
            }
        }
    }
    Ok(turn
        .tokens
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut tok = AnnotatedToken::bare(t.to_lowercase());
            if let Some(l) = &turn.lemmas {
                tok.lemma = l[i].to_lowercase();
            }
            if let Some(p) = &turn.pos {
                tok.pos = p[i].clone();
            }
            if let Some(e) = &turn.ner {
                tok.ner = e[i].clone();
            }
            tok
        })
        .collect())
}

/// Scores one turn (`{"tokens": [...], "lemmas"?, "pos"?, "ner"?,
/// "system_actions": [[slot, value], ...]}`) against every pair of an
/// encoded ontology. Writes a JSON array of `{slot, value, probability}`
/// in ontology order to `out_json`.
///
/// # Safety
/// Handles must be live and `ontology` must have been encoded by `model`;
/// `turn_json` must be NUL-terminated and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn sim_dst_score_turn(
    model: *const SimModelHandle,
    ontology: *const SimOntologyHandle,
    turn_json: *const c_char,
    out_json: *mut *mut c_char,
) -> SimStatus {
    guard(|| {
        let handle = model.as_ref().ok_or_else(|| null("model"))?;
        let onto = ontology.as_ref().ok_or_else(|| null("ontology"))?;
        if out_json.is_null() {
            return Err(null("out_json"));
        }
        *out_json = ptr::null_mut();
        if onto.owner != model as usize {
            return Err(Failure(
                SimStatus::InvalidInput,
                "ontology was encoded by a different model".into(),
            ));
        }
        let text = str_arg(turn_json, "turn_json")?;
        let turn: TurnInput =
            serde_json::from_str(text).map_err(|e| Failure(SimStatus::InvalidInput, format!("turn_json: {e}")))?;
        let actions = turn.system_actions.clone();
        let tokens = annotate(turn)?;
        let probs = handle.model.score_encoded(&tokens, &actions, &onto.encoded)?;
        let scored: Vec<Scored> = onto
            .encoded
            .pairs
            .iter()
            .zip(&probs)
            .map(|(p, &probability)| Scored {
                slot: &p.slot,
                value: &p.value,
                probability,
            })
            .collect();
        let json = serde_json::to_string(&scored).expect("scores serialize");
        *out_json = CString::new(json).expect("no interior NUL").into_raw();
        Ok(())
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sim_dst_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
