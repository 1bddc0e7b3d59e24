mod common;

use proptest::prelude::*;
use sim_dst::evaluator::score_predictions;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn evaluator_agrees_with_replay(seed in any::<u64>()) {
        let (dialogues, predictions) = common::random_labeled_corpus(seed);
        let e = score_predictions(&dialogues, &predictions).unwrap();
        let (joint, req, n) = common::brute_force_joint(&dialogues, &predictions);
        prop_assert_eq!(e.metrics.n_turns, n);
        prop_assert_eq!(e.metrics.joint_goal_acc, joint as f64 / n as f64);
        prop_assert_eq!(e.metrics.turn_request_acc, req as f64 / n as f64);
    }

    #[test]
    fn gold_predictions_score_perfectly(seed in any::<u64>()) {
        let (dialogues, _) = common::random_labeled_corpus(seed);
        let gold: Vec<Vec<_>> = dialogues
            .iter()
            .map(|d| d.turns.iter().map(sim_dst::evaluator::PredictionSet::gold).collect())
            .collect();
        let e = score_predictions(&dialogues, &gold).unwrap();
        prop_assert_eq!(e.metrics.joint_goal_acc, 1.0);
        prop_assert_eq!(e.metrics.turn_request_acc, 1.0);
    }
}

#[test]
fn thousand_corpora_match_oracle() {
    common::criterion_metric_oracle().unwrap();
}
