//! Template-generated dialogues for dataset-free training and testing.
//!
//! Every gold pair is mentioned verbatim in its utterance (the value, and
//! for goals also the slot name), so labels are recoverable by string
//! matching and a sufficiently large model can fit the data exactly.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ontology::Ontology;
use super::types::{AnnotatedToken, Dialogue, SlotValue, Split, Turn, REQUEST_SLOT};
use crate::error::{Error, Result};

/// Sizes of a synthetic ontology: values per goal slot and the number of
/// requestable values.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct OntologySpec {
    pub goal_slots: Vec<usize>,
    pub request_values: usize,
}

impl OntologySpec {
    /// Small ontology used by the default synthetic corpus.
    pub fn small() -> Self {
        Self {
            goal_slots: vec![5, 6, 3],
            request_values: 5,
        }
    }

    /// Four slots and 94 values, the shape of the WoZ restaurant ontology.
    pub fn woz_like() -> Self {
        Self {
            goal_slots: vec![6, 75, 4],
            request_values: 9,
        }
    }

    /// Five slots and 220 values, the shape of the DSTC2 ontology.
    pub fn dstc2_like() -> Self {
        Self {
            goal_slots: vec![6, 91, 4, 110],
            request_values: 9,
        }
    }

    pub fn total_values(&self) -> usize {
        self.goal_slots.iter().sum::<usize>() + self.request_values
    }
}

impl Default for OntologySpec {
    fn default() -> Self {
        Self::small()
    }
}

const GOAL_SLOT_NAMES: &[&str] = &["area", "food", "price range", "name", "day", "stars", "type", "parking"];
const EXTRA_REQUESTS: &[&str] = &[
    "phone", "address", "postcode", "signature", "reference", "website", "hours", "rating", "menu",
];

/// Words used by the templates. Generated values avoid them.
const TEMPLATE_WORDS: &[(&str, &str)] = &[
    ("i", "PRP"),
    ("want", "VBP"),
    ("am", "VBP"),
    ("looking", "VBG"),
    ("for", "IN"),
    ("a", "DT"),
    ("restaurant", "NN"),
    ("how", "WRB"),
    ("about", "IN"),
    ("please", "UH"),
    ("what", "WP"),
    ("is", "VBZ"),
    ("the", "DT"),
    ("can", "MD"),
    ("get", "VB"),
    ("and", "CC"),
    ("hello", "UH"),
    ("thank", "VBP"),
    ("you", "PRP"),
    ("that", "DT"),
    ("sounds", "VBZ"),
    ("good", "JJ"),
    ("actually", "RB"),
    ("instead", "RB"),
    ("in", "IN"),
    ("of", "IN"),
    ("it", "PRP"),
    ("bye", "UH"),
];

fn template_pos(word: &str) -> &'static str {
    TEMPLATE_WORDS
        .iter()
        .find(|(w, _)| *w == word)
        .map_or("NN", |(_, p)| p)
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh"];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ai", "ou"];
    let syllables = rng.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
        w.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
    }
    w
}

/// Builds an ontology of the requested shape with pseudo-word values.
pub fn synthetic_ontology(rng: &mut ChaCha8Rng, spec: &OntologySpec) -> Result<Ontology> {
    if spec.goal_slots.iter().any(|&n| n < 2) || spec.request_values < 2 {
        return Err(Error::InvalidInput("every synthetic slot needs at least 2 values".into()));
    }
    let slot_names: Vec<String> = (0..spec.goal_slots.len())
        .map(|i| {
            GOAL_SLOT_NAMES
                .get(i)
                .map_or_else(|| format!("slot{i}"), |s| s.to_string())
        })
        .collect();
    let mut reserved: BTreeSet<String> = TEMPLATE_WORDS.iter().map(|(w, _)| w.to_string()).collect();
    for name in slot_names.iter().map(String::as_str).chain(EXTRA_REQUESTS.iter().copied()) {
        reserved.extend(name.split_whitespace().map(String::from));
    }
    reserved.insert(REQUEST_SLOT.into());

    let mut goals = Vec::new();
    for (name, &count) in slot_names.iter().zip(&spec.goal_slots) {
        let mut values = Vec::with_capacity(count);
        while values.len() < count {
            let w = pseudo_word(rng);
            if reserved.insert(w.clone()) {
                values.push(w);
            }
        }
        goals.push((name.clone(), values));
    }
    let mut requestable: Vec<String> = slot_names.clone();
    requestable.extend(EXTRA_REQUESTS.iter().map(|s| s.to_string()));
    let mut extra = 0;
    while requestable.len() < spec.request_values {
        requestable.push(format!("field{extra}"));
        extra += 1;
    }
    requestable.truncate(spec.request_values);
    Ontology::from_parts(goals, requestable)
}

struct Utterance {
    words: Vec<String>,
}

impl Utterance {
    fn push(&mut self, text: &str) {
        self.words.extend(text.split_whitespace().map(String::from));
    }

    fn tokens(self) -> Vec<AnnotatedToken> {
        self.words
            .into_iter()
            .map(|w| AnnotatedToken {
                pos: template_pos(&w).to_string(),
                ner: "O".into(),
                lemma: w.clone(),
                surface: w,
            })
            .collect()
    }
}

fn goal_phrase(rng: &mut ChaCha8Rng, u: &mut Utterance, pair: &SlotValue, replacing: bool) {
    let (s, v) = (&pair.slot, &pair.value);
    let text = match (replacing, rng.gen_range(0..4)) {
        (true, _) => format!("actually i want {v} {s} instead"),
        (false, 0) => format!("i want {v} {s}"),
        (false, 1) => format!("i am looking for a {v} {s} restaurant"),
        (false, 2) => format!("how about {v} {s}"),
        _ => format!("{v} {s} please"),
    };
    u.push(&text);
}

fn request_phrase(rng: &mut ChaCha8Rng, u: &mut Utterance, field: &str) {
    let text = match rng.gen_range(0..3) {
        0 => format!("what is the {field}"),
        1 => format!("can i get the {field}"),
        _ => format!("the {field} please"),
    };
    u.push(&text);
}

fn dialogue(rng: &mut ChaCha8Rng, ontology: &Ontology, id: String, split: Split) -> Dialogue {
    let goal_slots: Vec<_> = ontology.slots().iter().filter(|s| s.name != REQUEST_SLOT).collect();
    let requestable: Vec<String> = ontology
        .slot(REQUEST_SLOT)
        .map(|s| s.values.clone())
        .unwrap_or_default();
    let n_turns = rng.gen_range(2..=5);
    let mut state: BTreeMap<String, String> = BTreeMap::new();
    let mut prev_actions: Vec<SlotValue> = Vec::new();
    let mut turns = Vec::with_capacity(n_turns);

    for index in 0..n_turns {
        let max_goals = goal_slots.len().min(2);
        let n_goals = if index == 0 {
            rng.gen_range(1..=max_goals)
        } else {
            rng.gen_range(0..=max_goals)
        };
        let n_requests = if index == 0 || requestable.is_empty() {
            0
        } else {
            rng.gen_range(0..=requestable.len().min(2))
        };

        let mut slots = goal_slots.clone();
        slots.shuffle(rng);
        let goals: Vec<SlotValue> = slots[..n_goals]
            .iter()
            .map(|s| SlotValue::new(&s.name, &s.values[rng.gen_range(0..s.values.len())]))
            .collect();
        let mut fields = requestable.clone();
        fields.shuffle(rng);
        let requests: Vec<SlotValue> = fields[..n_requests].iter().map(SlotValue::request).collect();

        let mut u = Utterance { words: Vec::new() };
        if index == 0 && rng.gen_bool(0.3) {
            u.push("hello");
        }
        let mut phrases = 0;
        for g in &goals {
            if phrases > 0 {
                u.push("and");
            }
            let replacing = state.get(&g.slot).is_some_and(|v| *v != g.value);
            goal_phrase(rng, &mut u, g, replacing);
            phrases += 1;
        }
        for r in &requests {
            if phrases > 0 {
                u.push("and");
            }
            request_phrase(rng, &mut u, &r.value);
            phrases += 1;
        }
        if phrases == 0 {
            u.push(["thank you", "that sounds good", "thank you bye"][rng.gen_range(0..3)]);
        }

        for g in &goals {
            state.insert(g.slot.clone(), g.value.clone());
        }
        turns.push(Turn {
            index,
            utterance: u.tokens(),
            asr_hypotheses: Vec::new(),
            system_actions: std::mem::take(&mut prev_actions),
            gold_turn_goals: goals,
            gold_turn_requests: requests,
        });

        // What the system says before the next user turn.
        let unfilled: Vec<_> = goal_slots.iter().filter(|s| !state.contains_key(&s.name)).collect();
        if let Some(slot) = unfilled.choose(rng) {
            if requestable.contains(&slot.name) && rng.gen_bool(0.6) {
                prev_actions.push(SlotValue::request(&slot.name));
            }
        }
        if !state.is_empty() && rng.gen_bool(0.4) {
            let (s, v) = state.iter().nth(rng.gen_range(0..state.len())).unwrap();
            prev_actions.push(SlotValue::new(s, v));
        }
    }
    Dialogue { id, split, turns }
}

/// Generates `n_dialogues` training dialogues plus `max(1, n/4)` dev and
/// test dialogues each, with an ontology of the given shape.
pub fn generate_synthetic_corpus(
    seed: u64,
    n_dialogues: usize,
    spec: &OntologySpec,
) -> Result<(Vec<Dialogue>, Ontology)> {
    if n_dialogues == 0 {
        return Err(Error::InvalidInput("synthetic corpus needs at least one dialogue".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ontology = synthetic_ontology(&mut rng, spec)?;
    let held_out = (n_dialogues / 4).max(1);
    let mut dialogues = Vec::new();
    for (split, count) in [(Split::Train, n_dialogues), (Split::Dev, held_out), (Split::Test, held_out)] {
        for i in 0..count {
            let id = format!("synth-{split}-{i:04}");
            dialogues.push(dialogue(&mut rng, &ontology, id, split));
        }
    }
    Ok((dialogues, ontology))
}

fn contains_run(haystack: &[&str], needle: &[&str]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Checks that every gold pair is mentioned verbatim in its utterance and
/// returns a description of each violation.
pub fn audit_verbatim(dialogues: &[Dialogue]) -> Vec<String> {
    let mut problems = Vec::new();
    for d in dialogues {
        for t in &d.turns {
            let words: Vec<&str> = t.utterance.iter().map(|a| a.surface.as_str()).collect();
            for pair in t.gold_turn_goals.iter().chain(&t.gold_turn_requests) {
                let value: Vec<&str> = pair.value.split_whitespace().collect();
                let slot: Vec<&str> = pair.slot.split_whitespace().collect();
                let ok = contains_run(&words, &value) && (pair.is_request() || contains_run(&words, &slot));
                if !ok {
                    problems.push(format!("{} turn {}: {pair} not in \"{}\"", d.id, t.index, words.join(" ")));
                }
            }
        }
    }
    problems
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::native;

    #[test]
    fn deterministic_given_seed() {
        let (a, oa) = generate_synthetic_corpus(1, 20, &OntologySpec::small()).unwrap();
        let (b, ob) = generate_synthetic_corpus(1, 20, &OntologySpec::small()).unwrap();
        assert_eq!(native::to_string(&a), native::to_string(&b));
        assert_eq!(oa.to_json(), ob.to_json());
        let (c, _) = generate_synthetic_corpus(2, 20, &OntologySpec::small()).unwrap();
        assert_ne!(native::to_string(&a), native::to_string(&c));
    }

    #[test]
    fn woz_and_dstc2_shapes() {
        let (_, woz) = generate_synthetic_corpus(3, 2, &OntologySpec::woz_like()).unwrap();
        assert_eq!(woz.slots().len(), 4);
        assert_eq!(woz.total_values(), 94);
        let (_, dstc) = generate_synthetic_corpus(3, 2, &OntologySpec::dstc2_like()).unwrap();
        assert_eq!(dstc.slots().len(), 5);
        assert_eq!(dstc.total_values(), 220);
    }

    #[test]
    fn gold_pairs_appear_verbatim() {
        for seed in 0..5 {
            let (d, o) = generate_synthetic_corpus(seed, 30, &OntologySpec::woz_like()).unwrap();
            assert!(audit_verbatim(&d).is_empty(), "{:?}", audit_verbatim(&d));
            for dia in &d {
                for t in &dia.turns {
                    assert!(o.unknown_labels(t.gold_turn_goals.iter().chain(&t.gold_turn_requests)).is_empty());
                }
            }
        }
    }

    #[test]
    fn splits_present() {
        let (d, _) = generate_synthetic_corpus(1, 20, &OntologySpec::small()).unwrap();
        let count = |s| d.iter().filter(|x| x.split == s).count();
        assert_eq!((count(Split::Train), count(Split::Dev), count(Split::Test)), (20, 5, 5));
    }

    #[test]
    fn preconditions() {
        assert!(generate_synthetic_corpus(1, 0, &OntologySpec::small()).is_err());
        let bad = OntologySpec {
            goal_slots: vec![1],
            request_values: 3,
        };
        assert!(generate_synthetic_corpus(1, 3, &bad).is_err());
    }
}
