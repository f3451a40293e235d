//! Valence-derived priority: signal groups that matter (innately or because
//! validated rules chain toward something that matters) get mined and acted
//! on first. Priority propagates backwards through Active rules with a
//! discount, combined by max, to a fixpoint.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::miner::{
    mine_rules_with, CooccurrenceStats, History, MinerError, MinerParams, Rule,
};
use crate::signal::SignalGroup;
use crate::world::World;

/// Hard cap on fixpoint sweeps; with max-combination and gamma < 1 the
/// iteration converges in at most |groups| sweeps anyway.
const MAX_SWEEPS: usize = 100;

/// Priorities for every known signal group. Groups absent from the map have
/// priority 0.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PriorityMap {
    pub values: BTreeMap<SignalGroup, f64>,
    pub gamma: f64,
}

impl PriorityMap {
    pub fn get(&self, g: &SignalGroup) -> f64 {
        self.values.get(g).copied().unwrap_or(0.0)
    }
}

/// Innate priority of a group: the largest valence weight among its member
/// signals, zero when none carries valence.
pub fn base_priority(world: &World, g: &SignalGroup) -> f64 {
    g.iter()
        .filter_map(|s| world.valence_of(s).ok())
        .map(|v| v.weight)
        .fold(0.0, f64::max)
}

/// Propagate priority backwards through the Active rules until stable:
///
/// p(g) = max(base(g), gamma * max { p(c) : Active rule with final
/// condition group g and consequent c })
///
/// Afterwards every rule carries priority = gamma * p(consequent). Groups
/// covered are the given universe plus every group appearing in a rule.
pub fn propagate(
    world: &World,
    rules: &mut [Rule],
    universe: &BTreeSet<SignalGroup>,
    gamma: f64,
) -> PriorityMap {
    let mut groups: BTreeSet<SignalGroup> = universe.clone();
    for r in rules.iter() {
        for (g, _) in &r.condition.steps {
            groups.insert(*g);
        }
        groups.insert(r.consequent);
    }

    let mut values: BTreeMap<SignalGroup, f64> =
        groups.iter().map(|g| (*g, base_priority(world, g))).collect();

    for _ in 0..MAX_SWEEPS {
        let mut changed = false;
        for g in &groups {
            let backed = rules
                .iter()
                .filter(|r| r.is_active() && r.condition.final_group() == g)
                .map(|r| gamma * values.get(&r.consequent).copied().unwrap_or(0.0))
                .fold(0.0, f64::max);
            let next = base_priority(world, g).max(backed);
            let cur = values.get_mut(g).unwrap();
            if (next - *cur).abs() > 1e-12 {
                *cur = next;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    for r in rules.iter_mut() {
        r.priority = gamma * values.get(&r.consequent).copied().unwrap_or(0.0);
    }
    PriorityMap { values, gamma }
}

/// Deterministic processing order for candidate groups: priority
/// descending, then co-occurrence count descending, then canonical order.
pub fn mining_order(
    candidates: &BTreeSet<SignalGroup>,
    priorities: &PriorityMap,
    stats: &CooccurrenceStats,
) -> Vec<SignalGroup> {
    let mut order: Vec<SignalGroup> = candidates.iter().copied().collect();
    order.sort_by(|a, b| {
        priorities
            .get(b)
            .partial_cmp(&priorities.get(a))
            .unwrap()
            .then_with(|| stats.count(b).cmp(&stats.count(a)))
            .then_with(|| a.cmp(&b))
    });
    order
}

/// One budgeted discovery pass: which groups were expanded and what the rule
/// set looked like afterwards.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BudgetPass {
    pub pass: usize,
    pub expanded: Vec<SignalGroup>,
    pub rules_after: usize,
}

/// Priority-ordered, budgeted rule discovery. Each pass expands the `budget`
/// highest-priority unexpanded candidate groups as consequents, mining only
/// rules that lead to them, then re-propagates priority so newly backed
/// groups rise in the order. High-valence chains are thus fully mined before
/// equally frequent but worthless structure.
pub struct BudgetedMiner {
    pub budget: usize,
    pub params: MinerParams,
    expanded: BTreeSet<SignalGroup>,
    pub rules: Vec<Rule>,
    pub priorities: PriorityMap,
    pub passes: Vec<BudgetPass>,
}

impl BudgetedMiner {
    pub fn new(budget: usize, params: MinerParams) -> Self {
        assert!(budget >= 1);
        Self {
            budget,
            params,
            expanded: BTreeSet::new(),
            rules: Vec::new(),
            priorities: PriorityMap::default(),
            passes: Vec::new(),
        }
    }

    pub fn expanded(&self) -> &BTreeSet<SignalGroup> {
        &self.expanded
    }

    /// Run one pass. Returns the groups expanded, empty once every candidate
    /// has been processed.
    pub fn pass(
        &mut self,
        world: &World,
        history: &History,
        candidates: &BTreeSet<SignalGroup>,
        stats: &CooccurrenceStats,
        gamma: f64,
    ) -> Result<Vec<SignalGroup>, MinerError> {
        if self.priorities.values.is_empty() {
            self.priorities = propagate(world, &mut self.rules, candidates, gamma);
        }
        let picked: Vec<SignalGroup> = mining_order(candidates, &self.priorities, stats)
            .into_iter()
            .filter(|g| !self.expanded.contains(g))
            .take(self.budget)
            .collect();
        if picked.is_empty() {
            return Ok(picked);
        }
        self.expanded.extend(picked.iter().copied());
        self.rules =
            mine_rules_with(history, candidates, &self.params, Some(&self.expanded))?;
        self.priorities = propagate(world, &mut self.rules, candidates, gamma);
        self.passes.push(BudgetPass {
            pass: self.passes.len(),
            expanded: picked.clone(),
            rules_after: self.rules.len(),
        });
        Ok(picked)
    }

    /// Run passes until exhaustion.
    pub fn run_to_exhaustion(
        &mut self,
        world: &World,
        history: &History,
        candidates: &BTreeSet<SignalGroup>,
        stats: &CooccurrenceStats,
        gamma: f64,
    ) -> Result<(), MinerError> {
        loop {
            if self.pass(world, history, candidates, stats, gamma)?.is_empty() {
                return Ok(());
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miner::{RuleId, RuleStatus, TemporalPattern};
    use crate::signal::ActionId;

    fn grp(ids: &[u16]) -> SignalGroup {
        SignalGroup::from_indices(ids.iter().copied()).unwrap()
    }

    fn rule(id: u32, cond: &[u16], action: u16, cons: &[u16]) -> Rule {
        Rule {
            id: RuleId(id),
            condition: TemporalPattern::single(grp(cond), ActionId(action)),
            action: ActionId(action),
            consequent: grp(cons),
            support: 5,
            hits: 5,
            confidence: 1.0,
            priority: 0.0,
            status: RuleStatus::Active,
            exceptions: Vec::new(),
        }
    }

    fn chain_world() -> World {
        // s1=0 (beneficial weight 1.0), s2=1, s3=2
        let doc = serde_json::json!({
            "n_signals": 4,
            "signals": ["s1", "s2", "s3", "R"],
            "channels": [
                {"name": "sense", "members": ["s1", "s2", "s3"]},
                {"name": "internal", "members": ["R"]}
            ],
            "valences": {"s1": {"class": "beneficial", "weight": 1.0}},
            "actions": [
                {"name": "wait", "kind": "noop"},
                {"name": "A", "kind": "motor"},
                {"name": "B", "kind": "motor"}
            ],
            "modes": ["default"],
            "states": ["t1"],
            "transitions": {"t1": {"_": "self"}},
            "emissions": {"t1": {"*": ["s1"]}},
            "initial": "t1",
            "seed": 7
        });
        crate::world::load_scenario(&doc.to_string()).unwrap()
    }

    #[test]
    fn base_priority_is_max_valence_weight() {
        let w = chain_world();
        assert_eq!(base_priority(&w, &grp(&[0])), 1.0);
        assert_eq!(base_priority(&w, &grp(&[1])), 0.0);
        assert_eq!(base_priority(&w, &grp(&[0, 1])), 1.0);
    }

    #[test]
    fn chain_propagation_discounts_per_link() {
        let w = chain_world();
        // {s3}+B -> {s2}, {s2}+A -> {s1}
        let mut rules = vec![rule(0, &[2], 2, &[1]), rule(1, &[1], 1, &[0])];
        let universe: BTreeSet<SignalGroup> =
            [grp(&[0]), grp(&[1]), grp(&[2])].into_iter().collect();
        let p = propagate(&w, &mut rules, &universe, 0.9);
        assert!((p.get(&grp(&[0])) - 1.0).abs() < 1e-9);
        assert!((p.get(&grp(&[1])) - 0.9).abs() < 1e-9);
        assert!((p.get(&grp(&[2])) - 0.81).abs() < 1e-9);
        // rule priority = gamma * p(consequent)
        assert!((rules[0].priority - 0.81).abs() < 1e-9);
        assert!((rules[1].priority - 0.9).abs() < 1e-9);
    }

    #[test]
    fn quarantined_rules_do_not_conduct_priority() {
        let w = chain_world();
        let mut r = rule(0, &[1], 1, &[0]);
        r.status = RuleStatus::Quarantined;
        let mut rules = vec![r];
        let universe: BTreeSet<SignalGroup> = [grp(&[0]), grp(&[1])].into_iter().collect();
        let p = propagate(&w, &mut rules, &universe, 0.9);
        assert_eq!(p.get(&grp(&[1])), 0.0);
    }

    #[test]
    fn cycle_converges() {
        let w = chain_world();
        // 1 -> 2 -> 1 cycle, with 1 also reaching the valent 0
        let mut rules = vec![
            rule(0, &[1], 1, &[2]),
            rule(1, &[2], 1, &[1]),
            rule(2, &[1], 2, &[0]),
        ];
        let universe: BTreeSet<SignalGroup> =
            [grp(&[0]), grp(&[1]), grp(&[2])].into_iter().collect();
        let p = propagate(&w, &mut rules, &universe, 0.9);
        assert!((p.get(&grp(&[1])) - 0.9).abs() < 1e-9);
        assert!((p.get(&grp(&[2])) - 0.81).abs() < 1e-9);
    }

    #[test]
    fn mining_order_prefers_priority_then_frequency() {
        let w = chain_world();
        let mut rules = vec![rule(0, &[1], 1, &[0])];
        let universe: BTreeSet<SignalGroup> =
            [grp(&[0]), grp(&[1]), grp(&[2]), grp(&[3])].into_iter().collect();
        let p = propagate(&w, &mut rules, &universe, 0.9);
        let mut stats = CooccurrenceStats::new(4);
        use crate::signal::{SignalFrame, SignalSet};
        for t in 0..5 {
            stats.observe(&SignalFrame::external(t, SignalSet::from_indices([3u16])));
        }
        stats.observe(&SignalFrame::external(9, SignalSet::from_indices([2u16])));
        let order = mining_order(&universe, &p, &stats);
        // 0 (p=1.0), 1 (p=0.9), then by count: 3 (5) before 2 (1)
        assert_eq!(order, vec![grp(&[0]), grp(&[1]), grp(&[3]), grp(&[2])]);
    }
}
