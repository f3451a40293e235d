//! Active experimentation: notice when current evidence is consistent with
//! more than one hypothesis, pick the action whose predicted outcomes best
//! separate the contenders, and fall back to seeded novelty when the rule
//! set has nothing to say.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::miner::{
    predict, predict_detailed, HistoryStep, MinerParams, ObjectRegistry, Prediction, Rule,
    RuleId,
};
use crate::priority::PriorityMap;
use crate::signal::{ActionId, SignalFrame, SignalGroup, SignalSet};
use crate::world::{TaskSpec, World, WorldCursor};

/// A pair of hypotheses the current frame cannot separate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContenderPair {
    pub a: SignalGroup,
    pub b: SignalGroup,
    /// Rules backing the pair, empty for object-overlap contenders.
    pub rules: Vec<RuleId>,
}

/// The ambiguity analysis of one frame: contender pairs plus, per action,
/// the signals on which the contenders' predictions differ.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct AmbiguityReport {
    pub contenders: Vec<ContenderPair>,
    pub discriminating: BTreeMap<ActionId, SignalSet>,
}

impl AmbiguityReport {
    pub fn is_ambiguous(&self) -> bool {
        !self.contenders.is_empty()
    }
}

/// Find hypotheses the frame leaves open.
///
/// Two sources: pairs of known objects whose shared part is active while
/// neither is confirmed or contained in the other, and pairs of Active
/// rules that both fire on this frame for the same action yet predict
/// disjoint outcomes. The latter also yield the discriminating actions: the
/// predicted consequents differ, so taking that action settles the matter.
pub fn detect_ambiguity(
    frame: &SignalFrame,
    tail: &[HistoryStep],
    rules: &[Rule],
    registry: &ObjectRegistry,
    world: &World,
    x_min: u32,
) -> AmbiguityReport {
    let mut report = AmbiguityReport::default();

    for (i, oa) in registry.objects.iter().enumerate() {
        for ob in registry.objects.iter().skip(i + 1) {
            let (ga, gb) = (oa.defining_group, ob.defining_group);
            let shared = ga.set().intersection(gb.set());
            if shared.is_empty()
                || ga.set().is_subset(gb.set())
                || gb.set().is_subset(ga.set())
            {
                continue;
            }
            let confirmed =
                ga.set().is_subset(&frame.active) || gb.set().is_subset(&frame.active);
            if shared.is_subset(&frame.active) && !confirmed {
                report.contenders.push(ContenderPair { a: ga, b: gb, rules: vec![] });
            }
        }
    }

    for action in world.actions.world_action_ids() {
        // one prediction per distinct consequent group keeps the pair scan
        // quadratic in groups, not in fired rules
        let mut by_group: BTreeMap<SignalGroup, Prediction> = BTreeMap::new();
        for p in predict_detailed(rules, tail, frame, action, x_min) {
            by_group.entry(p.group).or_insert(p);
        }
        let fired: Vec<Prediction> = by_group.into_values().collect();
        for (i, pa) in fired.iter().enumerate() {
            for pb in fired.iter().skip(i + 1) {
                if !pa.group.set().intersection(pb.group.set()).is_empty() {
                    continue;
                }
                let (a, b) = if pa.group <= pb.group {
                    (pa.group, pb.group)
                } else {
                    (pb.group, pa.group)
                };
                let pair = ContenderPair { a, b, rules: vec![pa.rule, pb.rule] };
                if !report.contenders.contains(&pair) {
                    report.contenders.push(pair);
                }
                let diff = pa.group.set().union(pb.group.set());
                report
                    .discriminating
                    .entry(action)
                    .and_modify(|s| *s = s.union(&diff))
                    .or_insert(diff);
            }
        }
    }
    report
}

/// Pick the experiment: the discriminating action with the highest
/// information-times-stakes score. Score = number of differing signals
/// times the best contender priority (1.0 when no contender carries
/// priority, so pure curiosity still acts). Ties break to the lowest
/// action id. `None` when nothing discriminates.
pub fn select_action(report: &AmbiguityReport, priorities: &PriorityMap) -> Option<ActionId> {
    let stake = report
        .contenders
        .iter()
        .flat_map(|p| [priorities.get(&p.a), priorities.get(&p.b)])
        .fold(0.0, f64::max);
    let stake = if stake > 0.0 { stake } else { 1.0 };
    report
        .discriminating
        .iter()
        .map(|(a, diff)| (*a, diff.len() as f64 * stake))
        .max_by(|(aa, sa), (ab, sb)| {
            sa.partial_cmp(sb).unwrap().then_with(|| ab.cmp(aa))
        })
        .map(|(a, _)| a)
}

/// How one task run ended.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskOutcome {
    pub name: String,
    pub success: bool,
    /// Global elapsed ticks when the target appeared (or the budget ran out).
    pub ticks: u64,
    pub actions: Vec<ActionId>,
    /// How many steps were spent on disambiguation experiments.
    pub experiments: u32,
}

struct TaskState<'t> {
    task: &'t TaskSpec,
    cursor: WorldCursor,
    frame: SignalFrame,
    tail: Vec<HistoryStep>,
    tried: BTreeSet<ActionId>,
    actions: Vec<ActionId>,
    experiments: u32,
    done: Option<TaskOutcome>,
}

impl TaskState<'_> {
    fn target_met(&self) -> bool {
        self.task.targets.iter().any(|t| t.set().is_subset(&self.frame.active))
    }

    fn target_union(&self) -> SignalSet {
        self.task
            .targets
            .iter()
            .fold(SignalSet::new(), |acc, t| acc.union(t.set()))
    }

    fn finish(&mut self, success: bool, ticks: u64) {
        self.done = Some(TaskOutcome {
            name: self.task.name.clone(),
            success,
            ticks,
            actions: self.actions.clone(),
            experiments: self.experiments,
        });
    }
}

/// Runs tasks against a world using the learned structures, without ever
/// touching world internals beyond the public step interface.
pub struct TaskRunner<'a> {
    pub world: &'a World,
    pub rules: &'a [Rule],
    pub priorities: &'a PriorityMap,
    pub registry: &'a ObjectRegistry,
    pub params: MinerParams,
}

impl TaskRunner<'_> {
    /// Run one task alone. Equivalent to an interleaved run with a single
    /// task, so solo and dual timings are directly comparable.
    pub fn run_task(&self, task: &TaskSpec, round: usize) -> TaskOutcome {
        self.run_tasks_interleaved(std::slice::from_ref(task), round)
            .pop()
            .expect("one outcome per task")
    }

    /// Run several tasks round-robin against independent world instances,
    /// with budgets charged against the shared elapsed tick count. The
    /// serial bottleneck is the point: each step spent on one task ages the
    /// other's deadline.
    pub fn run_tasks_interleaved(&self, tasks: &[TaskSpec], round: usize) -> Vec<TaskOutcome> {
        let mut rng = ChaCha8Rng::seed_from_u64(
            self.world
                .seed
                .wrapping_add(round as u64)
                .wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let mut states: Vec<TaskState> = tasks
            .iter()
            .map(|task| {
                let (cursor, frame) = self.world.spawn(round);
                TaskState {
                    task,
                    cursor,
                    frame,
                    tail: Vec::new(),
                    tried: BTreeSet::new(),
                    actions: Vec::new(),
                    experiments: 0,
                    done: None,
                }
            })
            .collect();

        let mut elapsed: u64 = 0;
        // Tasks run to completion (or a hard cap) and success is judged
        // against the budget afterwards, so interleaved completion times
        // are measured rather than truncated.
        let hard_cap: u64 = tasks.iter().map(|t| t.budget).sum::<u64>().max(1);
        // Spawn frames might already satisfy a target, at zero cost.
        for st in &mut states {
            if st.target_met() {
                st.finish(true, 0);
            }
        }

        while states.iter().any(|s| s.done.is_none()) {
            for i in 0..states.len() {
                if states[i].done.is_some() {
                    continue;
                }
                if elapsed >= hard_cap {
                    states[i].finish(false, elapsed);
                    continue;
                }
                let (action, experimental) = self.choose(&states[i], &mut rng);
                let st = &mut states[i];
                let (next_cursor, next_frame) = self
                    .world
                    .step(&st.cursor, action)
                    .expect("world actions are steppable");
                st.tail.push(HistoryStep { frame: st.frame.clone(), action });
                st.actions.push(action);
                if experimental {
                    st.experiments += 1;
                    st.tried.insert(action);
                }
                st.cursor = next_cursor;
                st.frame = next_frame;
                elapsed += 1;
                if st.target_met() {
                    let ok = elapsed <= st.task.budget;
                    st.finish(ok, elapsed);
                }
            }
        }
        states.into_iter().map(|s| s.done.unwrap()).collect()
    }

    /// Decide the next action for a task: a task-relevant disambiguation
    /// experiment if one is open, else the greedy highest-priority
    /// prediction, else seeded novelty.
    fn choose(&self, st: &TaskState, rng: &mut ChaCha8Rng) -> (ActionId, bool) {
        let report = detect_ambiguity(
            &st.frame,
            &st.tail,
            self.rules,
            self.registry,
            self.world,
            self.params.x_min,
        );
        if report.is_ambiguous() {
            let targets = st.target_union();
            let mut relevant = report.clone();
            relevant.discriminating.retain(|a, diff| {
                !st.tried.contains(a) && !diff.intersection(&targets).is_empty()
            });
            if let Some(a) = select_action(&relevant, self.priorities) {
                return (a, true);
            }
        }

        let mut best: Option<(ActionId, f64)> = None;
        for action in self.world.actions.world_action_ids() {
            let score = predict(self.rules, &st.tail, &st.frame, action, self.params.x_min)
                .iter()
                .map(|(g, _)| self.priorities.get(g))
                .fold(0.0, f64::max);
            if score > 0.0 && best.map_or(true, |(_, s)| score > s) {
                best = Some((action, score));
            }
        }
        if let Some((a, _)) = best {
            return (a, false);
        }

        let motors = self.world.actions.motor_actions();
        match self.world.actions.noop() {
            Some(noop) if motors.is_empty() => (noop, false),
            _ => (motors[rng.gen_range(0..motors.len())], false),
        }
    }
}
