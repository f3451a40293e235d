//! Property tests for structural invariants: canonical set representation,
//! downward closure of the candidate lattice, rule bounds, and mining
//! determinism.

use std::collections::BTreeSet;

use proptest::prelude::*;

use signalroom::miner::{mine_rules, CooccurrenceStats, History, MinerParams};
use signalroom::signal::{ActionId, SignalFrame, SignalGroup, SignalSet};

const N_SIGNALS: u16 = 10;

#[derive(Debug, Clone)]
struct Step {
    bits: u16,
    action: u16,
    recall: bool,
    new_segment: bool,
}

fn step_strategy() -> impl Strategy<Value = Step> {
    // AND of two masks keeps frames sparse, which keeps the candidate
    // lattice small enough for exhaustive checks
    (0u16..1 << N_SIGNALS, 0u16..1 << N_SIGNALS, 0u16..3, any::<bool>(), proptest::bool::weighted(0.05))
        .prop_map(|(a, b, action, recall, new_segment)| Step {
            bits: a & b,
            action,
            recall,
            new_segment,
        })
}

fn build_history(steps: &[Step]) -> History {
    let mut history = History::new();
    history.begin_segment();
    for (tick, s) in steps.iter().enumerate() {
        if s.new_segment {
            history.begin_segment();
        }
        let active = SignalSet::from_indices((0..N_SIGNALS).filter(|i| s.bits & (1 << i) != 0));
        let frame = if s.recall && !active.is_empty() {
            SignalFrame::new(tick as u64, active, active).unwrap()
        } else {
            SignalFrame::external(tick as u64, active)
        };
        history.push(frame, ActionId(s.action));
    }
    history
}

fn params_strategy() -> impl Strategy<Value = MinerParams> {
    (1usize..=2, 1usize..=2, 2u32..=4, prop_oneof![Just(0.25), Just(0.5), Just(1.0)]).prop_map(
        |(w, g, s_min, theta_conf)| MinerParams {
            w,
            g,
            theta_conf,
            theta_demote: 0.5,
            s_min,
            x_min: 2,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn signal_sets_are_canonical(ids in proptest::collection::vec(0u16..N_SIGNALS, 0..16)) {
        let set = SignalSet::from_indices(ids.iter().copied());
        let indices = set.indices();
        let unique: BTreeSet<u16> = ids.iter().copied().collect();
        prop_assert_eq!(&indices, &unique.into_iter().collect::<Vec<_>>());
        // reconstruction round-trips regardless of input order or duplicates
        prop_assert_eq!(SignalSet::from_indices(indices), set);
    }

    #[test]
    fn candidate_lattice_is_downward_closed(
        steps in proptest::collection::vec(step_strategy(), 2..40),
        params in params_strategy(),
    ) {
        let history = build_history(&steps);
        let mut stats = CooccurrenceStats::new(params.g);
        for step in history.segments.iter().flatten() {
            stats.observe(&step.frame);
        }
        let candidates = stats.candidate_groups(params.s_min);
        for c in &candidates {
            let members = c.set().indices();
            for drop in 0..members.len() {
                if members.len() == 1 {
                    continue;
                }
                let sub: Vec<u16> = members
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| *i != drop)
                    .map(|(_, &m)| m)
                    .collect();
                let sub = SignalGroup::from_indices(sub).unwrap();
                prop_assert!(candidates.contains(&sub), "{sub:?} missing under {c:?}");
            }
        }
    }

    #[test]
    fn mined_rules_respect_bounds(
        steps in proptest::collection::vec(step_strategy(), 2..40),
        params in params_strategy(),
    ) {
        let history = build_history(&steps);
        let mut stats = CooccurrenceStats::new(params.g);
        for step in history.segments.iter().flatten() {
            stats.observe(&step.frame);
        }
        let candidates = stats.candidate_groups(params.s_min);
        let rules = mine_rules(&history, &candidates, &params).unwrap();
        for (i, r) in rules.iter().enumerate() {
            prop_assert_eq!(r.id.0 as usize, i);
            prop_assert!(r.support >= params.s_min);
            prop_assert!(r.hits <= r.support);
            prop_assert!(r.confidence >= params.theta_conf && r.confidence <= 1.0);
            prop_assert!((r.confidence - r.hits as f64 / r.support as f64).abs() < 1e-12);
            prop_assert!(!r.condition.steps.is_empty() && r.condition.steps.len() <= params.w);
            prop_assert_eq!(r.action, r.condition.final_action());
            for (g, _) in &r.condition.steps {
                prop_assert!(candidates.contains(g), "condition group outside lattice");
            }
            // consequents are candidates, or the whole active set of some
            // recall frame
            let from_recall = history.segments.iter().flatten().any(|s| {
                s.frame.is_recall() && s.frame.active == *r.consequent.set()
            });
            prop_assert!(candidates.contains(&r.consequent) || from_recall);
        }
    }

    #[test]
    fn mining_is_deterministic(
        steps in proptest::collection::vec(step_strategy(), 2..40),
        params in params_strategy(),
    ) {
        let history = build_history(&steps);
        let mut stats = CooccurrenceStats::new(params.g);
        for step in history.segments.iter().flatten() {
            stats.observe(&step.frame);
        }
        let candidates = stats.candidate_groups(params.s_min);
        let a = mine_rules(&history, &candidates, &params).unwrap();
        let b = mine_rules(&history, &candidates, &params).unwrap();
        prop_assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }
}
