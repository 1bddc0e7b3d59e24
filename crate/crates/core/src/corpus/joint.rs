use std::collections::{BTreeMap, BTreeSet};

use super::types::SlotValue;
use crate::error::{Error, Result};

pub type JointGoal = BTreeSet<SlotValue>;

/// Folds per-turn goals into per-turn joint goals. A later value for a slot
/// replaces the earlier one; turns without new goals inherit the previous
/// state unchanged.
pub fn accumulate_joint_goals(turn_goals_by_turn: &[Vec<SlotValue>]) -> Result<Vec<JointGoal>> {
    let mut state: BTreeMap<&str, &SlotValue> = BTreeMap::new();
    let mut out = Vec::with_capacity(turn_goals_by_turn.len());
    for goals in turn_goals_by_turn {
        for pair in goals {
            if pair.is_request() {
                return Err(Error::InvalidInput(format!(
                    "request pair {pair} passed to joint-goal accumulation"
                )));
            }
            state.insert(pair.slot.as_str(), pair);
        }
        out.push(state.values().map(|p| (*p).clone()).collect());
    }
    Ok(out)
}
