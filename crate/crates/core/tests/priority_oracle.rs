//! Value-iteration oracle for priority propagation: the fixpoint
//! p(g) = max(base(g), gamma * max p(consequent)) is recomputed by plain
//! Jacobi iteration from scratch and compared against `propagate` on random
//! rule graphs over randomly valenced worlds.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use signalroom::miner::{Rule, RuleId, RuleStatus, TemporalPattern};
use signalroom::priority::{base_priority, propagate};
use signalroom::signal::{ActionId, SignalGroup};
use signalroom::world::{load_scenario, World};

fn grp(ids: &[u16]) -> SignalGroup {
    SignalGroup::from_indices(ids.iter().copied()).unwrap()
}

/// A one-state world whose only purpose is to carry a random valence table.
fn valence_world(rng: &mut ChaCha8Rng, n_signals: u16) -> World {
    let names: Vec<String> = (0..n_signals - 1)
        .map(|i| format!("s{i}"))
        .chain(["R".to_string()])
        .collect();
    let mut valences = serde_json::Map::new();
    for name in &names[..names.len() - 1] {
        if rng.gen_bool(0.4) {
            let class = if rng.gen_bool(0.8) { "beneficial" } else { "harmful" };
            valences.insert(
                name.clone(),
                serde_json::json!({"class": class, "weight": (rng.gen_range(1..=10) as f64) / 10.0}),
            );
        }
    }
    let doc = serde_json::json!({
        "n_signals": n_signals,
        "signals": names,
        "channels": [
            {"name": "sense", "members": names[..names.len() - 1]},
            {"name": "internal", "members": ["R"]}
        ],
        "valences": valences,
        "actions": [{"name": "wait", "kind": "noop"}],
        "modes": ["default"],
        "states": ["t"],
        "transitions": {"t": {"_": "self"}},
        "emissions": {"t": {"*": []}},
        "initial": "t",
        "seed": 1
    });
    load_scenario(&doc.to_string()).unwrap()
}

fn random_group(rng: &mut ChaCha8Rng, n_signals: u16) -> SignalGroup {
    let size = rng.gen_range(1..=2usize);
    let mut ids: BTreeSet<u16> = BTreeSet::new();
    while ids.len() < size {
        ids.insert(rng.gen_range(0..n_signals - 1));
    }
    grp(&ids.into_iter().collect::<Vec<_>>())
}

fn random_rules(rng: &mut ChaCha8Rng, n_signals: u16) -> Vec<Rule> {
    let n_rules = rng.gen_range(0..=25usize);
    (0..n_rules)
        .map(|i| {
            let steps: Vec<(SignalGroup, ActionId)> = (0..rng.gen_range(1..=2))
                .map(|_| (random_group(rng, n_signals), ActionId(0)))
                .collect();
            let action = steps.last().unwrap().1;
            Rule {
                id: RuleId(i as u32),
                condition: TemporalPattern { steps },
                action,
                consequent: random_group(rng, n_signals),
                support: 5,
                hits: 5,
                confidence: 1.0,
                priority: 0.0,
                status: if rng.gen_bool(0.8) {
                    RuleStatus::Active
                } else {
                    RuleStatus::Quarantined
                },
                exceptions: Vec::new(),
            }
        })
        .collect()
}

/// Synchronous value iteration from the base priorities. With gamma < 1 the
/// update is a sup-norm contraction toward base, so a fixed iteration count
/// bounds the error by gamma^k.
fn oracle_fixpoint(
    world: &World,
    rules: &[Rule],
    universe: &BTreeSet<SignalGroup>,
    gamma: f64,
) -> BTreeMap<SignalGroup, f64> {
    let mut groups = universe.clone();
    for r in rules {
        for (g, _) in &r.condition.steps {
            groups.insert(*g);
        }
        groups.insert(r.consequent);
    }
    let mut p: BTreeMap<SignalGroup, f64> =
        groups.iter().map(|g| (*g, base_priority(world, g))).collect();
    for _ in 0..2000 {
        let prev = p.clone();
        for g in &groups {
            let backed = rules
                .iter()
                .filter(|r| r.status == RuleStatus::Active && r.condition.final_group() == g)
                .map(|r| gamma * prev.get(&r.consequent).copied().unwrap_or(0.0))
                .fold(0.0, f64::max);
            p.insert(*g, base_priority(world, g).max(backed));
        }
        if groups.iter().all(|g| (p[g] - prev[g]).abs() < 1e-15) {
            break;
        }
    }
    p
}

#[test]
fn propagate_matches_value_iteration() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE);
    for case in 0..200 {
        let n_signals = rng.gen_range(3..=10u16);
        let world = valence_world(&mut rng, n_signals);
        let mut rules = random_rules(&mut rng, n_signals);
        let universe: BTreeSet<SignalGroup> =
            (0..rng.gen_range(0..=5)).map(|_| random_group(&mut rng, n_signals)).collect();
        let gamma = rng.gen_range(0.5..=0.95);

        let expected = oracle_fixpoint(&world, &rules, &universe, gamma);
        let got = propagate(&world, &mut rules, &universe, gamma);

        assert_eq!(
            got.values.keys().collect::<Vec<_>>(),
            expected.keys().collect::<Vec<_>>(),
            "group coverage diverges in case {case}"
        );
        for (g, want) in &expected {
            assert!(
                (got.get(g) - want).abs() < 1e-9,
                "case {case}: p({g:?}) = {} want {want}",
                got.get(g)
            );
        }
        for r in &rules {
            let want = gamma * expected[&r.consequent];
            assert!(
                (r.priority - want).abs() < 1e-9,
                "case {case}: rule {:?} priority {} want {want}",
                r.id,
                r.priority
            );
        }
    }
}
