//! The closed-loop agent: train on scripted experience, mine rules, make
//! decisions that capture episodes, replay them through the recall buttons,
//! re-mine so the recall rules join the rule set, and finally package the
//! stores for introspection.

use thiserror::Error;

use crate::episode::{self, EpisodeError, EpisodeStore, NOT_RECORDED};
use crate::explorer::{TaskOutcome, TaskRunner};
use crate::introspect::{form_recall_objects, AgentStores, IntrospectError, RecallObject};
use crate::miner::{
    define_objects, mine_rules, predict_detailed, record_outcome, CooccurrenceStats,
    History, MinerError, MinerParams, ObjectRegistry, Prediction, Rule,
};
use crate::priority::{propagate, BudgetedMiner, PriorityMap};
use crate::signal::{ActionId, SignalFrame};
use crate::world::{World, WorldError};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    World(#[from] WorldError),
    #[error(transparent)]
    Miner(#[from] MinerError),
    #[error(transparent)]
    Episode(#[from] EpisodeError),
    #[error(transparent)]
    Introspect(#[from] IntrospectError),
}

/// Run-level knobs. Scenario parameter overrides are applied by
/// [`AgentConfig::for_world`]; ablation switches default off.
#[derive(Debug, Clone)]
pub struct AgentConfig {
    pub params: MinerParams,
    pub gamma: f64,
    /// When set, mining is budgeted and priority-ordered with this many
    /// group expansions per pass.
    pub budget: Option<usize>,
    /// Ablation: never press recall buttons.
    pub no_recall: bool,
    /// Ablation: episode store perturbs every recall.
    pub corrupt_episodes: bool,
    /// Cap on total world-advancing steps across all phases. `Some(0)`
    /// means no experience at all.
    pub tick_budget: Option<u64>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            params: MinerParams::default(),
            gamma: 0.9,
            budget: None,
            no_recall: false,
            corrupt_episodes: false,
            tick_budget: None,
        }
    }
}

impl AgentConfig {
    pub fn for_world(world: &World) -> Self {
        let mut c = Self::default();
        let p = &world.params;
        if let Some(v) = p.w {
            c.params.w = v;
        }
        if let Some(v) = p.g {
            c.params.g = v;
        }
        if let Some(v) = p.theta_conf {
            c.params.theta_conf = v;
        }
        if let Some(v) = p.theta_demote {
            c.params.theta_demote = v;
        }
        if let Some(v) = p.s_min {
            c.params.s_min = v;
        }
        if let Some(v) = p.x_min {
            c.params.x_min = v;
        }
        if let Some(v) = p.gamma {
            c.gamma = v;
        }
        c.budget = p.budget;
        c
    }
}

/// The agent and everything it has learned.
pub struct Agent {
    pub world: World,
    pub config: AgentConfig,
    pub history: History,
    pub stats: CooccurrenceStats,
    pub rules: Vec<Rule>,
    pub priorities: PriorityMap,
    pub registry: ObjectRegistry,
    pub episodes: EpisodeStore,
    pub recall_objects: Vec<RecallObject>,
    round: usize,
    steps: u64,
}

impl Agent {
    pub fn new(world: World, config: AgentConfig) -> Self {
        let g = config.params.g;
        let mut episodes = EpisodeStore::new(world.channels.clone());
        episodes.corrupt = config.corrupt_episodes;
        Self {
            world,
            config,
            history: History::new(),
            stats: CooccurrenceStats::new(g),
            rules: Vec::new(),
            priorities: PriorityMap::default(),
            registry: ObjectRegistry::default(),
            episodes,
            recall_objects: Vec::new(),
            round: 0,
            steps: 0,
        }
    }

    fn budget_spent(&self) -> bool {
        self.config.tick_budget.map_or(false, |b| self.steps >= b)
    }

    fn next_round(&mut self) -> usize {
        let r = self.round;
        self.round += 1;
        r
    }

    /// One scripted pass through the world, appended as a fresh history
    /// segment. When `capture` is set, rule-backed steps store episodes and
    /// have their outcomes recorded against the fired rule (credit goes to
    /// that rule alone, located through the episode).
    fn scripted_pass(&mut self, capture: bool) -> Result<(), AgentError> {
        if self.budget_spent() {
            return Ok(());
        }
        let script = self.world.script.clone();
        let round = self.next_round();
        let (mut cursor, mut frame) = self.world.spawn(round);
        self.history.begin_segment();
        let seg_start = self.history.segments.len() - 1;

        for action in script {
            if self.budget_spent() {
                break;
            }
            self.steps += 1;
            let decision = if capture {
                let tail = &self.history.segments[seg_start]
                    [self.history.segments[seg_start].len().saturating_sub(self.config.params.w)..];
                let fired = predict_detailed(
                    &self.rules,
                    tail,
                    &frame,
                    action,
                    self.config.params.x_min,
                );
                self.pick_decision(&fired).map(|p| (p, frame.clone()))
            } else {
                None
            };

            let (next_cursor, next_frame) = self.world.step(&cursor, action)?;
            self.history.push(frame.clone(), action);

            if let Some((pred, decided_at)) = decision {
                let rule_idx = self
                    .rules
                    .iter()
                    .position(|r| r.id == pred.rule)
                    .expect("fired rule exists");
                let (pattern, predicted) = {
                    let r = &self.rules[rule_idx];
                    (r.condition.clone(), r.consequent)
                };
                // Episodes index predictive content, not labels: strip the
                // label channel before storing (the gate config handles
                // gated channels inside store_episode).
                let labels = self
                    .world
                    .label_channel
                    .map(|c| self.world.channels[c.0 as usize].members)
                    .unwrap_or_default();
                let strip = |g: &crate::signal::SignalGroup| {
                    crate::signal::SignalGroup::new(g.set().difference(&labels))
                };
                let stripped_steps: Option<Vec<_>> = pattern
                    .steps
                    .iter()
                    .map(|(g, a)| strip(g).ok().map(|g| (g, *a)))
                    .collect();
                if let (Some(steps), Ok(predicted_stripped)) =
                    (stripped_steps, strip(&predicted))
                {
                    let stored = episode::store_episode(
                        &mut self.episodes,
                        &crate::miner::TemporalPattern { steps },
                        action,
                        &predicted_stripped,
                        pred.rule,
                        decided_at.tick,
                    );
                    let _ = stored == NOT_RECORDED; // gating may refuse; fine
                }
                let faulty = if predicted.set().is_subset(&next_frame.active) {
                    rule_idx
                } else {
                    // locate the one rule that made this decision
                    let id = episode::locate_faulty_rule(
                        &self.episodes,
                        decided_at.tick,
                        &predicted,
                        &next_frame,
                    )
                    .unwrap_or(pred.rule);
                    self.rules
                        .iter()
                        .position(|r| r.id == id)
                        .unwrap_or(rule_idx)
                };
                record_outcome(
                    &mut self.rules[faulty],
                    &decided_at,
                    &next_frame,
                    &self.config.params,
                );
            }

            cursor = next_cursor;
            frame = next_frame;
        }
        // terminal frame closes the segment under the world's no-op
        let closing = self.world.actions.noop().unwrap_or(ActionId(0));
        self.history.push(frame, closing);
        Ok(())
    }

    /// Decision-rule choice among the fired predictions: highest confidence,
    /// then the most specific (largest stripped condition ∪ consequent),
    /// then canonical order.
    fn pick_decision(&self, fired: &[Prediction]) -> Option<Prediction> {
        fired
            .iter()
            .max_by(|a, b| {
                let rule = |p: &Prediction| self.rules.iter().find(|r| r.id == p.rule).unwrap();
                let union_size = |p: &Prediction| {
                    let r = rule(p);
                    self.registry
                        .strip(&r.condition.final_group().set().union(r.consequent.set()))
                        .len()
                };
                let cond_size = |p: &Prediction| {
                    self.registry.strip(rule(p).condition.final_group().set()).len()
                };
                a.confidence
                    .partial_cmp(&b.confidence)
                    .unwrap()
                    .then_with(|| union_size(a).cmp(&union_size(b)))
                    .then_with(|| cond_size(a).cmp(&cond_size(b)))
                    .then_with(|| b.group.cmp(&a.group))
                    .then_with(|| b.rule.cmp(&a.rule))
            })
            .copied()
    }

    /// Phase 1: scripted training rounds, no capture.
    pub fn train(&mut self) -> Result<(), AgentError> {
        for _ in 0..self.world.training_rounds.max(1) {
            self.scripted_pass(false)?;
        }
        Ok(())
    }

    /// Phases 2 and 5: recount co-occurrence, mine (budgeted if configured),
    /// propagate priority, rebuild the object registry.
    pub fn mine(&mut self) -> Result<(), AgentError> {
        self.stats = CooccurrenceStats::new(self.config.params.g);
        for step in self.history.segments.iter().flatten() {
            if !step.frame.is_recall() {
                self.stats.observe(&step.frame);
            }
        }
        let candidates = self.stats.candidate_groups(self.config.params.s_min);

        match self.config.budget {
            Some(b) => {
                let mut miner = BudgetedMiner::new(b, self.config.params);
                miner.run_to_exhaustion(
                    &self.world,
                    &self.history,
                    &candidates,
                    &self.stats,
                    self.config.gamma,
                )?;
                self.rules = miner.rules;
                self.priorities = miner.priorities;
            }
            None => {
                self.rules = mine_rules(&self.history, &candidates, &self.config.params)?;
                self.priorities =
                    propagate(&self.world, &mut self.rules, &candidates, self.config.gamma);
            }
        }

        let label_channel = self
            .world
            .label_channel
            .map(|c| self.world.channels[c.0 as usize].clone());
        self.registry = define_objects(
            &self.rules,
            label_channel.as_ref(),
            self.world.recall_flag(),
            &self.history,
            self.config.params.s_min,
        );
        Ok(())
    }

    /// Phase 3: one more scripted pass, now making decisions and storing
    /// episodes.
    pub fn decide(&mut self) -> Result<(), AgentError> {
        self.scripted_pass(true)
    }

    /// Phase 4: press every episode's recall button s_min + 1 times in a
    /// row, in fresh segments, so re-mining finds the recall rules.
    pub fn recall_phase(&mut self) -> Result<(), AgentError> {
        if self.config.no_recall {
            return Ok(());
        }
        let presses = self.config.params.s_min + 1;
        for k in 0..self.episodes.len() {
            let id = crate::signal::EpisodeId(k as u32);
            let button = self.world.actions.recall_button(id);
            let round = self.next_round();
            let (mut cursor, mut frame) = self.world.spawn(round);
            self.history.begin_segment();
            for _ in 0..presses {
                if self.budget_spent() {
                    break;
                }
                self.steps += 1;
                self.history.push(frame.clone(), button);
                let (c, f) = episode::recall(&mut self.episodes, id, &self.world, &cursor)?;
                cursor = c;
                frame = f;
            }
            let closing = self.world.actions.noop().unwrap_or(ActionId(0));
            self.history.push(frame, closing);
        }
        Ok(())
    }

    /// Phase 6: form recall objects and package the stores.
    pub fn introspect(&mut self) -> Result<AgentStores, AgentError> {
        self.recall_objects = form_recall_objects(
            &self.rules,
            &self.episodes,
            &self.registry,
            &self.history,
            &self.world.actions,
            self.config.params.s_min,
        )?;
        Ok(self.stores())
    }

    /// Snapshot the introspectable stores (no world handle inside).
    pub fn stores(&self) -> AgentStores {
        AgentStores {
            rules: self.rules.clone(),
            registry: self.registry.clone(),
            recall_objects: self.recall_objects.clone(),
            channels: self.world.channels.clone(),
            label_channel: self.world.label_channel,
            recall_flag: self.world.recall_flag(),
            action_names: self.world.actions.names.clone(),
            names: self.world.name_table(),
            episode_count: self.episodes.len(),
            malformed_world: self.world.emits_reserved,
        }
    }

    /// Run the scenario's declared tasks with the current knowledge.
    pub fn run_tasks(&mut self) -> Vec<TaskOutcome> {
        let round = self.next_round();
        let runner = TaskRunner {
            world: &self.world,
            rules: &self.rules,
            priorities: &self.priorities,
            registry: &self.registry,
            params: self.config.params,
        };
        self.world.tasks.iter().map(|t| runner.run_task(t, round)).collect()
    }

    /// The whole pipeline: train → mine → decide → recall → re-mine →
    /// introspect.
    pub fn run_full(world: World, config: AgentConfig) -> Result<(Agent, AgentStores), AgentError> {
        let mut agent = Agent::new(world, config);
        agent.train()?;
        agent.mine()?;
        agent.decide()?;
        agent.recall_phase()?;
        agent.mine()?;
        let stores = agent.introspect()?;
        Ok((agent, stores))
    }

    /// The last external frame the agent saw — handy for tests.
    pub fn last_frame(&self) -> Option<&SignalFrame> {
        self.history
            .segments
            .iter()
            .flatten()
            .map(|s| &s.frame)
            .filter(|f| !f.is_recall())
            .last()
    }
}
