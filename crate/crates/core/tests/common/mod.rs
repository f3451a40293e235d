//! Shared brute-force oracles for the integration suites.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use signalroom::miner::{
    mine_rules, CooccurrenceStats, History, HistoryStep, MinerParams, Rule, RuleId, RuleStatus,
    TemporalPattern,
};
use signalroom::signal::{ActionId, SignalFrame, SignalGroup, SignalSet};

pub struct Case {
    pub history: History,
    pub params: MinerParams,
    pub n_signals: u16,
}

/// A random segmented history drawn from a small pool of frame patterns so
/// that support thresholds actually bite. Mixes in empty frames, recall
/// frames, and short segments.
pub fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_signals = rng.gen_range(4..=12u16);
    let n_actions = rng.gen_range(1..=4u16);
    let ticks = rng.gen_range(10..=200usize);

    let pool: Vec<SignalSet> = (0..rng.gen_range(3..=6))
        .map(|_| {
            let size = rng.gen_range(0..=3usize);
            let mut ids: Vec<u16> = (0..n_signals).collect();
            ids.shuffle(&mut rng);
            SignalSet::from_indices(ids.into_iter().take(size))
        })
        .collect();

    let mut history = History::new();
    history.begin_segment();
    for tick in 0..ticks as u64 {
        if rng.gen_bool(0.05) {
            history.begin_segment();
        }
        let active = pool[rng.gen_range(0..pool.len())];
        let frame = if rng.gen_bool(0.15) && !active.is_empty() {
            // full-recall frame: everything active came from memory
            SignalFrame::new(tick, active, active).unwrap()
        } else {
            SignalFrame::external(tick, active)
        };
        history.push(frame, ActionId(rng.gen_range(0..n_actions)));
    }

    let params = MinerParams {
        w: rng.gen_range(1..=2),
        g: rng.gen_range(1..=3),
        theta_conf: *[0.3, 0.6, 0.9, 1.0].choose(&mut rng).unwrap(),
        theta_demote: 0.5,
        s_min: rng.gen_range(2..=3),
        x_min: 2,
    };
    Case { history, params, n_signals }
}

/// All nonempty groups of size <= g whose external co-activation count
/// reaches s_min, recounted by scanning every frame per group.
pub fn oracle_candidates(case: &Case) -> BTreeSet<SignalGroup> {
    let frames: Vec<SignalSet> = case
        .history
        .segments
        .iter()
        .flatten()
        .map(|s| s.frame.external_active())
        .collect();
    let mut universe: BTreeSet<SignalGroup> = BTreeSet::new();
    for set in frames.iter().collect::<BTreeSet<_>>() {
        subsets_up_to(&set.indices(), case.params.g, &mut universe);
    }
    universe
        .into_iter()
        .filter(|g| {
            let count = frames.iter().filter(|f| g.set().is_subset(f)).count();
            count >= case.params.s_min as usize
        })
        .collect()
}

fn subsets_up_to(members: &[u16], g: usize, out: &mut BTreeSet<SignalGroup>) {
    fn rec(
        members: &[u16],
        from: usize,
        stack: &mut Vec<u16>,
        g: usize,
        out: &mut BTreeSet<SignalGroup>,
    ) {
        for i in from..members.len() {
            stack.push(members[i]);
            out.insert(SignalGroup::from_indices(stack.iter().copied()).unwrap());
            if stack.len() < g {
                rec(members, i + 1, stack, g, out);
            }
            stack.pop();
        }
    }
    rec(members, 0, &mut Vec::new(), g, out);
}

/// A position in the history with a successor inside its segment; the
/// condition window of length `len` ends here.
struct Pos<'a> {
    seg: &'a [HistoryStep],
    t: usize,
}

impl Pos<'_> {
    fn matches(&self, cond: &[(SignalGroup, ActionId)]) -> bool {
        let len = cond.len();
        if self.t + 1 < len {
            return false;
        }
        let base = self.t + 1 - len;
        cond.iter().enumerate().all(|(i, (g, a))| {
            let step = &self.seg[base + i];
            step.action == *a && g.set().is_subset(&step.frame.active)
        })
    }

    fn next_frame(&self) -> &SignalFrame {
        &self.seg[self.t + 1].frame
    }
}

/// Exhaustive enumeration: every condition sequence over the candidate
/// lattice crossed with every observed action window, counted by direct
/// position scans. Independent of the miner's per-position accumulation.
pub fn oracle_rules(case: &Case, candidates: &BTreeSet<SignalGroup>) -> Vec<Rule> {
    let cands: Vec<SignalGroup> = candidates.iter().copied().collect();
    let positions: Vec<Pos> = case
        .history
        .segments
        .iter()
        .filter(|seg| seg.len() >= 2)
        .flat_map(|seg| (0..seg.len() - 1).map(move |t| Pos { seg, t }))
        .collect();

    let mut rules: Vec<Rule> = Vec::new();
    for len in 1..=case.params.w {
        if cands.is_empty() {
            break;
        }
        let action_windows: BTreeSet<Vec<ActionId>> = positions
            .iter()
            .filter(|p| p.t + 1 >= len)
            .map(|p| (0..len).map(|i| p.seg[p.t + 1 - len + i].action).collect())
            .collect();
        for actions in &action_windows {
            let mut combo = vec![0usize; len];
            'product: loop {
                let cond: Vec<(SignalGroup, ActionId)> = combo
                    .iter()
                    .zip(actions)
                    .map(|(&c, &a)| (cands[c], a))
                    .collect();
                tally_condition(case, candidates, &positions, &cond, &mut rules);
                for i in (0..len).rev() {
                    combo[i] += 1;
                    if combo[i] < cands.len() {
                        continue 'product;
                    }
                    combo[i] = 0;
                }
                break;
            }
        }
    }

    rules.sort_by(|a, b| {
        b.support
            .cmp(&a.support)
            .then_with(|| a.condition.cmp(&b.condition))
            .then_with(|| a.consequent.cmp(&b.consequent))
    });
    for (i, r) in rules.iter_mut().enumerate() {
        r.id = RuleId(i as u32);
    }
    rules
}

fn tally_condition(
    case: &Case,
    candidates: &BTreeSet<SignalGroup>,
    positions: &[Pos],
    cond: &[(SignalGroup, ActionId)],
    rules: &mut Vec<Rule>,
) {
    let matched: Vec<&Pos> = positions.iter().filter(|p| p.matches(cond)).collect();
    let support = matched.len() as u32;
    if support < case.params.s_min {
        return;
    }
    let mut hit_counts: BTreeMap<SignalGroup, u32> = BTreeMap::new();
    for p in &matched {
        let next = p.next_frame();
        for c in candidates {
            if c.set().is_subset(&next.active) {
                *hit_counts.entry(*c).or_insert(0) += 1;
            }
        }
        if next.is_recall() {
            // recall frames additionally offer their whole active set
            let full = SignalGroup::new(next.active).unwrap();
            if !candidates.contains(&full) {
                *hit_counts.entry(full).or_insert(0) += 1;
            }
        }
    }
    for (consequent, hits) in hit_counts {
        let confidence = hits as f64 / support as f64;
        if confidence < case.params.theta_conf {
            continue;
        }
        rules.push(Rule {
            id: RuleId(0),
            condition: TemporalPattern { steps: cond.to_vec() },
            action: cond.last().unwrap().1,
            consequent,
            support,
            hits,
            confidence,
            priority: 0.0,
            status: RuleStatus::Active,
            exceptions: Vec::new(),
        });
    }
}

/// Run the full 100-seed comparison, panicking on any divergence.
pub fn run_oracle_sweep() {
    for seed in 0..100u64 {
        let case = random_case(seed);

        let mut stats = CooccurrenceStats::new(case.params.g);
        for step in case.history.segments.iter().flatten() {
            stats.observe(&step.frame);
        }
        let mined_cands = stats.candidate_groups(case.params.s_min);
        let oracle_cands = oracle_candidates(&case);
        assert_eq!(mined_cands, oracle_cands, "candidates diverge at seed {seed}");

        let mined = mine_rules(&case.history, &mined_cands, &case.params)
            .expect("histories always span at least two steps");
        let oracle = oracle_rules(&case, &oracle_cands);
        assert_eq!(
            serde_json::to_value(&mined).unwrap(),
            serde_json::to_value(&oracle).unwrap(),
            "rules diverge at seed {seed} (n_signals {})",
            case.n_signals,
        );
    }
}
