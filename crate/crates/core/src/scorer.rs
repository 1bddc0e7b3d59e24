//! Similarity between an utterance and one slot-value pair, and the loss.

use crate::autodiff::{Graph, NodeId, ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const W1: &str = "scorer.w1";
pub const B1: &str = "scorer.b1";
pub const BETA: &str = "scorer.beta";

/// Output layer `w1`, `b1` and the fusion coefficient `beta`, all zero at
/// initialization so an untrained model predicts 0.5 for every pair.
#[derive(Clone, Copy, Debug)]
pub struct ScorerParams {
    pub w1: ParamId,
    pub b1: ParamId,
    pub beta: ParamId,
}

impl ScorerParams {
    pub fn register(store: &mut ParamStore, d_rnn: usize) -> Result<Self> {
        Ok(Self {
            w1: store.add(W1, Tensor::zeros(&[d_rnn]), false)?,
            b1: store.add(B1, Tensor::zeros(&[1]), false)?,
            beta: store.add(BETA, Tensor::zeros(&[1]), false)?,
        })
    }

    pub fn attach(store: &ParamStore) -> Result<Self> {
        let id = |name: &str| {
            store
                .id(name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))
        };
        Ok(Self {
            w1: id(W1)?,
            b1: id(B1)?,
            beta: id(BETA)?,
        })
    }

    /// `(w1, b1, beta)` as graph nodes.
    pub fn nodes(&self, g: &mut Graph<'_>) -> (NodeId, NodeId, NodeId) {
        (g.param(self.w1), g.param(self.b1), g.param(self.beta))
    }
}

/// Content path: attend over the utterance rows with the pair summary,
/// then project. `α = R s`, `p = softmax(α)`, `q = Rᵀp`, `y = w1·q + b1`.
pub fn content_score(g: &mut Graph<'_>, r_u: NodeId, s_o: NodeId, w1: NodeId, b1: NodeId) -> Result<NodeId> {
    let alpha = g.matvec(r_u, s_o)?;
    let p1 = g.softmax(alpha)?;
    let q1 = g.matvec_t(r_u, p1)?;
    let y = g.dot(w1, q1)?;
    g.add(y, b1)
}

/// Action path: attend over the system actions with the utterance summary
/// and compare the result to the pair summary.
pub fn action_score(g: &mut Graph<'_>, s_u: NodeId, actions: &[NodeId], s_o: NodeId) -> Result<NodeId> {
    if actions.is_empty() {
        return Err(Error::EmptySoftmax);
    }
    let s = g.stack(actions)?;
    let alpha = g.matvec(s, s_u)?;
    let p2 = g.softmax(alpha)?;
    let q2 = g.matvec_t(s, p2)?;
    g.dot(q2, s_o)
}

/// `σ(y1 + β y2)`.
pub fn pair_probability(g: &mut Graph<'_>, y1: NodeId, y2: NodeId, beta: NodeId) -> Result<NodeId> {
    let weighted = g.mul(beta, y2)?;
    let z = g.add(y1, weighted)?;
    Ok(g.sigmoid(z))
}

/// Sum of binary cross entropies; `probs` and `labels` are aligned by
/// position and must cover the same pairs.
pub fn bce_loss(g: &mut Graph<'_>, probs: &[NodeId], labels: &[f64]) -> Result<NodeId> {
    if probs.len() != labels.len() || probs.is_empty() {
        return Err(Error::InvalidInput(format!(
            "loss over {} probabilities but {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let terms = probs
        .iter()
        .zip(labels)
        .map(|(&p, &y)| g.bce(p, y))
        .collect::<Result<Vec<_>>>()?;
    g.sum_scalars(&terms)
}

/// Keyed variant of [`bce_loss`]: both maps must hold exactly the same
/// pairs.
pub fn bce_loss_keyed<K: Ord + std::fmt::Debug>(
    g: &mut Graph<'_>,
    probs: &std::collections::BTreeMap<K, NodeId>,
    labels: &std::collections::BTreeMap<K, f64>,
) -> Result<NodeId> {
    if !probs.keys().eq(labels.keys()) {
        let missing: Vec<String> = probs
            .keys()
            .filter(|k| !labels.contains_key(k))
            .chain(labels.keys().filter(|k| !probs.contains_key(k)))
            .map(|k| format!("{k:?}"))
            .collect();
        return Err(Error::InvalidInput(format!(
            "probabilities and labels cover different pairs: {}",
            missing.join(", ")
        )));
    }
    let p: Vec<NodeId> = probs.values().copied().collect();
    let y: Vec<f64> = labels.values().copied().collect();
    bce_loss(g, &p, &y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn scalar(g: &mut Graph<'_>, x: f64) -> NodeId {
        g.constant(Tensor::scalar(x))
    }

    #[test]
    fn pair_probability_values() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let (y1, y2, beta) = (scalar(&mut g, 0.0), scalar(&mut g, 0.0), scalar(&mut g, 3.0));
        let p = pair_probability(&mut g, y1, y2, beta).unwrap();
        assert_eq!(g.value(p).item(), 0.5);
        let (y1, y2) = (scalar(&mut g, 2.0), scalar(&mut g, 0.0));
        let p = pair_probability(&mut g, y1, y2, beta).unwrap();
        assert!((g.value(p).item() - 0.880797077977882).abs() < 1e-12);
    }

    #[test]
    fn keyed_loss_rejects_coverage_mismatch() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let p = scalar(&mut g, 0.5);
        let probs: BTreeMap<&str, NodeId> = [("a", p), ("b", p)].into();
        let labels: BTreeMap<&str, f64> = [("a", 1.0), ("c", 0.0)].into();
        let err = bce_loss_keyed(&mut g, &probs, &labels).unwrap_err().to_string();
        assert!(err.contains("\"b\"") && err.contains("\"c\""), "{err}");
    }

    #[test]
    fn empty_action_list_is_error() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let s = g.constant(Tensor::vector(vec![1.0]));
        assert!(action_score(&mut g, s, &[], s).is_err());
    }
}
