use std::collections::HashSet;
use std::path::Path;

use serde_json::{Map, Value};

use super::types::{SlotValue, REQUEST_SLOT};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SlotDef {
    pub name: String,
    pub values: Vec<String>,
}

/// Slots and their permissible values. Slot order and value order are
/// preserved from the source; they define the ontology pair order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ontology {
    slots: Vec<SlotDef>,
}

impl Ontology {
    pub fn new(slots: Vec<SlotDef>) -> Result<Self> {
        let mut seen = HashSet::new();
        for slot in &slots {
            if !seen.insert(slot.name.as_str()) {
                return Err(Error::InvalidInput(format!("duplicate slot `{}`", slot.name)));
            }
            if slot.values.is_empty() {
                return Err(Error::InvalidInput(format!("slot `{}` has no values", slot.name)));
            }
            let mut vals = HashSet::new();
            for v in &slot.values {
                if !vals.insert(v.as_str()) {
                    return Err(Error::InvalidInput(format!(
                        "duplicate value `{v}` in slot `{}`",
                        slot.name
                    )));
                }
            }
        }
        Ok(Self { slots })
    }

    /// Builds an ontology from goal slots plus the request values.
    pub fn from_parts(goal_slots: Vec<(String, Vec<String>)>, requestable: Vec<String>) -> Result<Self> {
        let mut slots: Vec<SlotDef> = goal_slots
            .into_iter()
            .map(|(name, values)| SlotDef { name, values })
            .collect();
        if !requestable.is_empty() {
            slots.push(SlotDef {
                name: REQUEST_SLOT.into(),
                values: requestable,
            });
        }
        Self::new(slots)
    }

    pub fn slots(&self) -> &[SlotDef] {
        &self.slots
    }

    pub fn slot(&self, name: &str) -> Option<&SlotDef> {
        self.slots.iter().find(|s| s.name == name)
    }

    pub fn contains(&self, pair: &SlotValue) -> bool {
        self.slot(&pair.slot)
            .is_some_and(|s| s.values.contains(&pair.value))
    }

    /// Every (slot, value) pair in ontology order.
    pub fn pairs(&self) -> Vec<SlotValue> {
        self.slots
            .iter()
            .flat_map(|s| s.values.iter().map(|v| SlotValue::new(&s.name, v)))
            .collect()
    }

    pub fn total_values(&self) -> usize {
        self.slots.iter().map(|s| s.values.len()).sum()
    }

    /// Parses `{"informable": {slot: [values…]}, "requestable": [values…]}`.
    /// Other top-level keys are ignored.
    pub fn from_json_str(text: &str, path: &Path) -> Result<Self> {
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message,
        };
        let root: Value = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line(),
            message: e.to_string(),
        })?;
        let informable = root
            .get("informable")
            .and_then(Value::as_object)
            .ok_or_else(|| parse_err("missing `informable` object".into()))?;
        let strings = |v: &Value, what: &str| -> Result<Vec<String>> {
            v.as_array()
                .ok_or_else(|| parse_err(format!("`{what}` must be an array")))?
                .iter()
                .map(|x| {
                    x.as_str()
                        .map(str::to_string)
                        .ok_or_else(|| parse_err(format!("non-string value in `{what}`")))
                })
                .collect()
        };
        let mut goals = Vec::new();
        for (slot, values) in informable {
            goals.push((slot.clone(), strings(values, slot)?));
        }
        let requestable = match root.get("requestable") {
            Some(v) => strings(v, "requestable")?,
            None => Vec::new(),
        };
        Self::from_parts(goals, requestable).map_err(|e| parse_err(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text, path)
    }

    pub fn to_json(&self) -> String {
        let mut informable = Map::new();
        let mut requestable = Vec::new();
        for slot in &self.slots {
            let vals: Vec<Value> = slot.values.iter().cloned().map(Value::String).collect();
            if slot.name == REQUEST_SLOT {
                requestable = vals;
            } else {
                informable.insert(slot.name.clone(), Value::Array(vals));
            }
        }
        let mut root = Map::new();
        root.insert("informable".into(), Value::Object(informable));
        root.insert("requestable".into(), Value::Array(requestable));
        serde_json::to_string_pretty(&Value::Object(root)).expect("ontology serializes")
    }

    /// Lists every pair not present in this ontology.
    pub fn unknown_labels<'a>(&self, pairs: impl IntoIterator<Item = &'a SlotValue>) -> Vec<String> {
        pairs
            .into_iter()
            .filter(|p| !self.contains(p))
            .map(ToString::to_string)
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip_preserves_order() {
        let text = r#"{"informable": {"food": ["thai", "italian"], "area": ["south"]}, "requestable": ["phone", "area"]}"#;
        let o = Ontology::from_json_str(text, Path::new("o.json")).unwrap();
        let names: Vec<_> = o.slots().iter().map(|s| s.name.as_str()).collect();
        assert_eq!(names, ["food", "area", "request"]);
        assert_eq!(o.total_values(), 5);
        let again = Ontology::from_json_str(&o.to_json(), Path::new("o.json")).unwrap();
        assert_eq!(o, again);
    }

    #[test]
    fn rejects_duplicates_and_empty_slots() {
        assert!(Ontology::from_parts(vec![("a".into(), vec![])], vec![]).is_err());
        assert!(Ontology::from_parts(vec![("a".into(), vec!["x".into(), "x".into()])], vec![]).is_err());
    }

    #[test]
    fn unknown_labels_listed() {
        let o = Ontology::from_parts(vec![("area".into(), vec!["south".into()])], vec!["phone".into()]).unwrap();
        let bad = o.unknown_labels(&[
            SlotValue::new("area", "south"),
            SlotValue::new("area", "west"),
            SlotValue::request("fax"),
        ]);
        assert_eq!(bad, ["(area, west)", "(request, fax)"]);
    }
}
