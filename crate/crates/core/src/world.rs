//! The "room": a hidden finite-state world advanced by agent actions,
//! emitting mode-dependent signal frames. Includes the JSON scenario loader.
//!
//! The agent-facing surface is [`World::spawn`] and [`World::step`]: only
//! frames and the action table cross the boundary. State identity stays
//! private to this module.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{
    ActionId, ActionKind, ActionTable, Channel, ChannelId, ModeId, SignalFrame, SignalGroup,
    SignalId, SignalSet, Valence, MAX_SIGNALS,
};

#[derive(Debug, Error)]
pub enum WorldError {
    #[error("scenario schema violation at `{key}`: {detail}")]
    Schema { key: String, detail: String },
    #[error("transition table not total; missing pairs: {0:?}")]
    Totality(Vec<String>),
    #[error("unknown action id {0:?}")]
    UnknownAction(ActionId),
    #[error("recall buttons are not world actions; route them through the episode store")]
    RecallNotWorldAction,
    #[error("signal id {0:?} out of range")]
    SignalOutOfRange(SignalId),
    #[error("unknown name `{0}`")]
    UnknownName(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
struct StateId(u16);

/// One possibly-stochastic emission entry. Canonical scenarios use prob 1.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Emit {
    signal: SignalId,
    prob: f64,
}

/// A task the harness can run against this world: succeed by observing any
/// of the target groups within the tick budget.
#[derive(Debug, Clone, Serialize)]
pub struct TaskSpec {
    pub name: String,
    pub targets: Vec<SignalGroup>,
    pub budget: u64,
}

/// Name-to-index audit table, emitted alongside every run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NameTable {
    pub signals: Vec<String>,
    pub actions: Vec<String>,
    pub modes: Vec<String>,
    pub states: Vec<String>,
    pub channels: Vec<String>,
}

/// Per-scenario mining parameter overrides.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ScenarioParams {
    pub w: Option<usize>,
    pub g: Option<usize>,
    pub theta_conf: Option<f64>,
    pub theta_demote: Option<f64>,
    pub s_min: Option<u32>,
    pub x_min: Option<u32>,
    pub gamma: Option<f64>,
    pub budget: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct World {
    pub n_signals: usize,
    pub actions: ActionTable,
    pub channels: Vec<Channel>,
    pub label_channel: Option<ChannelId>,
    pub modes: Vec<String>,
    valences: Vec<Valence>,
    state_names: Vec<String>,
    /// transitions[state][action] for world actions; mode switches use the
    /// noop column.
    transitions: Vec<Vec<StateId>>,
    emissions: Vec<Vec<Vec<Emit>>>,
    initial: Vec<StateId>,
    pub seed: u64,
    pub tasks: Vec<TaskSpec>,
    pub script: Vec<ActionId>,
    pub training_rounds: usize,
    pub params: ScenarioParams,
    /// Set when the document emits the reserved recall flag from a world
    /// state. Such a world is malformed for the consciousness probes but
    /// still loadable as a negative control.
    pub emits_reserved: bool,
    noop: ActionId,
    signal_names: Vec<String>,
}

/// Where the simulation currently is. Opaque to agent code: state identity
/// is not exposed.
#[derive(Debug, Clone)]
pub struct WorldCursor {
    state: StateId,
    tick: u64,
    mode: ModeId,
    rng: ChaCha8Rng,
}

impl WorldCursor {
    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn mode(&self) -> ModeId {
        self.mode
    }
}

impl World {
    /// Reserved recall-flag signal: always the top index.
    pub fn recall_flag(&self) -> SignalId {
        SignalId(self.n_signals as u16 - 1)
    }

    pub fn valence_of(&self, s: SignalId) -> Result<Valence, WorldError> {
        if s.index() >= self.n_signals {
            return Err(WorldError::SignalOutOfRange(s));
        }
        Ok(self.valences[s.index()])
    }

    pub fn valences(&self) -> &[Valence] {
        &self.valences
    }

    pub fn name_table(&self) -> NameTable {
        NameTable {
            signals: self.signal_names.clone(),
            actions: self.actions.names.clone(),
            modes: self.modes.clone(),
            states: self.state_names.clone(),
            channels: self.channels.iter().map(|c| c.name.clone()).collect(),
        }
    }

    pub fn signal_by_name(&self, name: &str) -> Result<SignalId, WorldError> {
        self.signal_names
            .iter()
            .position(|n| n == name)
            .map(|i| SignalId(i as u16))
            .ok_or_else(|| WorldError::UnknownName(name.to_string()))
    }

    pub fn channel_by_name(&self, name: &str) -> Option<&Channel> {
        self.channels.iter().find(|c| c.name == name)
    }

    /// Start a simulation. `round` selects among seeded initial states when
    /// the scenario declares several; a single-state scenario ignores it.
    pub fn spawn(&self, round: usize) -> (WorldCursor, SignalFrame) {
        let state = self.initial[(self.seed as usize + round) % self.initial.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(round as u64));
        let mode = ModeId(0);
        let active = self.emit(state, mode, &mut rng);
        let cursor = WorldCursor { state, tick: 0, mode, rng };
        (cursor, SignalFrame::external(0, active))
    }

    fn emit(&self, state: StateId, mode: ModeId, rng: &mut ChaCha8Rng) -> SignalSet {
        let mut set = SignalSet::new();
        for e in &self.emissions[state.0 as usize][mode.0 as usize] {
            if e.prob >= 1.0 || rng.gen::<f64>() < e.prob {
                set.insert(e.signal);
            }
        }
        set
    }

    /// Advance one tick. Mode switches consume the tick (the world applies
    /// its noop transition) and the frame is emitted under the new mode.
    pub fn step(
        &self,
        cursor: &WorldCursor,
        action: ActionId,
    ) -> Result<(WorldCursor, SignalFrame), WorldError> {
        if self.actions.is_recall(action) {
            return Err(WorldError::RecallNotWorldAction);
        }
        if action.index() >= self.actions.world_len() {
            return Err(WorldError::UnknownAction(action));
        }
        let mut next = cursor.clone();
        match self.actions.kind(action) {
            ActionKind::Motor | ActionKind::NoOp => {
                next.state = self.transitions[cursor.state.0 as usize][action.index()];
            }
            ActionKind::ModeSwitch(m) => {
                next.mode = m;
                next.state = self.transitions[cursor.state.0 as usize][self.noop.index()];
            }
            ActionKind::RecallButton(_) => unreachable!(),
        }
        next.tick += 1;
        let active = self.emit(next.state, next.mode, &mut next.rng);
        let frame = SignalFrame::external(next.tick, active);
        Ok((next, frame))
    }

    /// Advance the hidden state by the noop transition without emitting;
    /// used by the episode store when a recall button consumes the tick.
    pub fn advance_silent(&self, cursor: &WorldCursor) -> WorldCursor {
        let mut next = cursor.clone();
        next.state = self.transitions[cursor.state.0 as usize][self.noop.index()];
        next.tick += 1;
        next
    }

    /// Rewire one transition by name. Used to inject mid-run world changes
    /// when exercising credit assignment.
    pub fn override_transition(
        &mut self,
        state: &str,
        action: &str,
        next: &str,
    ) -> Result<(), WorldError> {
        let s = self.state_index(state)?;
        let a = self
            .actions
            .by_name(action)
            .ok_or_else(|| WorldError::UnknownName(action.to_string()))?;
        let n = self.state_index(next)?;
        self.transitions[s.0 as usize][a.index()] = n;
        Ok(())
    }

    fn state_index(&self, name: &str) -> Result<StateId, WorldError> {
        self.state_names
            .iter()
            .position(|n| n == name)
            .map(|i| StateId(i as u16))
            .ok_or_else(|| WorldError::UnknownName(name.to_string()))
    }

    /// The same world with its internal signals relabelled through `perm`
    /// (a bijection on `[0, n_signals)`). Actions, modes and states are
    /// untouched. Used by the alignment harness.
    pub fn permute_signals(&self, perm: &[u16]) -> World {
        assert_eq!(perm.len(), self.n_signals);
        let map = |s: SignalId| SignalId(perm[s.index()]);
        let map_set = |set: &SignalSet| -> SignalSet { set.iter().map(map).collect() };
        let mut w = self.clone();
        for state in &mut w.emissions {
            for mode in state {
                for e in &mut *mode {
                    e.signal = map(e.signal);
                }
                mode.sort_by_key(|e| e.signal);
            }
        }
        let mut valences = vec![Valence::NEUTRAL; self.n_signals];
        for (i, v) in self.valences.iter().enumerate() {
            valences[perm[i] as usize] = *v;
        }
        w.valences = valences;
        for c in &mut w.channels {
            c.members = map_set(&c.members);
        }
        let mut names = vec![String::new(); self.n_signals];
        for (i, n) in self.signal_names.iter().enumerate() {
            names[perm[i] as usize] = n.clone();
        }
        w.signal_names = names;
        for t in &mut w.tasks {
            t.targets = t
                .targets
                .iter()
                .map(|g| SignalGroup::new(map_set(g.set())).unwrap())
                .collect();
        }
        w
    }
}

// ---------------------------------------------------------------------------
// Scenario document
// ---------------------------------------------------------------------------

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioDoc {
    n_signals: usize,
    signals: Vec<String>,
    channels: Vec<ChannelDoc>,
    #[serde(default)]
    labels: Option<String>,
    #[serde(default)]
    valences: BTreeMap<String, ValenceDoc>,
    actions: Vec<ActionDoc>,
    modes: Vec<String>,
    states: Vec<String>,
    transitions: BTreeMap<String, BTreeMap<String, String>>,
    emissions: BTreeMap<String, BTreeMap<String, Vec<EmitDoc>>>,
    initial: InitialDoc,
    seed: u64,
    #[serde(default)]
    script: Vec<String>,
    #[serde(default)]
    training: Option<TrainingDoc>,
    #[serde(default)]
    tasks: Vec<TaskDoc>,
    #[serde(default)]
    params: Option<ScenarioParams>,
}

#[derive(Debug, Deserialize)]
struct ChannelDoc {
    name: String,
    members: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct ValenceDoc {
    class: String,
    weight: f64,
}

#[derive(Debug, Deserialize)]
struct ActionDoc {
    name: String,
    kind: String,
    #[serde(default)]
    mode: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum EmitDoc {
    Plain(String),
    WithProb { signal: String, prob: f64 },
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum InitialDoc {
    Fixed(String),
    Seeded { seeded: Vec<String> },
}

#[derive(Debug, Deserialize)]
struct TrainingDoc {
    rounds: usize,
}

#[derive(Debug, Deserialize)]
struct TaskDoc {
    name: String,
    targets: Vec<Vec<String>>,
    budget: u64,
}

fn schema_err(key: &str, detail: impl Into<String>) -> WorldError {
    WorldError::Schema { key: key.to_string(), detail: detail.into() }
}

/// Parse and validate a scenario document. Deterministic: two loads of the
/// same text produce identical worlds.
pub fn load_scenario(text: &str) -> Result<World, WorldError> {
    let doc: ScenarioDoc = serde_json::from_str(text)
        .map_err(|e| schema_err("<document>", e.to_string()))?;

    if doc.n_signals == 0 || doc.n_signals > MAX_SIGNALS {
        return Err(schema_err("n_signals", format!("must be in 1..={MAX_SIGNALS}")));
    }
    if doc.signals.len() != doc.n_signals {
        return Err(schema_err(
            "signals",
            format!("declared {} names for n_signals={}", doc.signals.len(), doc.n_signals),
        ));
    }
    let signal_index = |name: &str| -> Result<SignalId, WorldError> {
        doc.signals
            .iter()
            .position(|n| n == name)
            .map(|i| SignalId(i as u16))
            .ok_or_else(|| schema_err("signals", format!("unknown signal `{name}`")))
    };

    // Channels must partition the whole array, recall flag included.
    let mut channels = Vec::new();
    let mut seen = SignalSet::new();
    for c in &doc.channels {
        let mut members = SignalSet::new();
        for m in &c.members {
            let s = signal_index(m)?;
            if seen.contains(s) {
                return Err(schema_err("channels", format!("signal `{m}` in two channels")));
            }
            seen.insert(s);
            members.insert(s);
        }
        channels.push(Channel { name: c.name.clone(), members });
    }
    if seen.len() != doc.n_signals {
        return Err(schema_err("channels", "channels do not cover the signal array"));
    }
    let label_channel = match &doc.labels {
        None => None,
        Some(name) => Some(ChannelId(
            channels
                .iter()
                .position(|c| &c.name == name)
                .ok_or_else(|| schema_err("labels", format!("no channel named `{name}`")))?
                as u16,
        )),
    };

    let mut valences = vec![Valence::NEUTRAL; doc.n_signals];
    for (name, v) in &doc.valences {
        let s = signal_index(name)?;
        let val = match v.class.as_str() {
            "beneficial" => Valence::beneficial(v.weight),
            "harmful" => Valence::harmful(v.weight),
            "neutral" if v.weight == 0.0 => Valence::NEUTRAL,
            other => return Err(schema_err("valences", format!("bad class `{other}`"))),
        };
        valences[s.index()] = val;
    }

    if doc.modes.is_empty() {
        return Err(schema_err("modes", "at least the default mode is required"));
    }
    let mode_index = |name: &str| -> Result<ModeId, WorldError> {
        doc.modes
            .iter()
            .position(|n| n == name)
            .map(|i| ModeId(i as u16))
            .ok_or_else(|| schema_err("modes", format!("unknown mode `{name}`")))
    };

    let mut names = Vec::new();
    let mut kinds = Vec::new();
    for a in &doc.actions {
        let kind = match a.kind.as_str() {
            "motor" => ActionKind::Motor,
            "noop" => ActionKind::NoOp,
            "mode" => {
                let m = a.mode.as_deref().ok_or_else(|| {
                    schema_err("actions", format!("mode action `{}` missing `mode`", a.name))
                })?;
                ActionKind::ModeSwitch(mode_index(m)?)
            }
            other => return Err(schema_err("actions", format!("bad kind `{other}`"))),
        };
        names.push(a.name.clone());
        kinds.push(kind);
    }
    let actions = ActionTable { names, kinds };
    let noop = actions
        .noop()
        .ok_or_else(|| schema_err("actions", "exactly one noop action is required"))?;

    if doc.states.is_empty() {
        return Err(schema_err("states", "at least one state is required"));
    }
    let state_index = |name: &str| -> Result<StateId, WorldError> {
        doc.states
            .iter()
            .position(|n| n == name)
            .map(|i| StateId(i as u16))
            .ok_or_else(|| schema_err("states", format!("unknown state `{name}`")))
    };

    // Transition totality over states x (motor + noop) actions. A `_` entry
    // supplies a per-state default; `self` loops back.
    let world_actions: Vec<ActionId> = actions.motor_actions();
    let mut transitions = vec![vec![StateId(0); actions.world_len()]; doc.states.len()];
    let mut missing = Vec::new();
    for (si, sname) in doc.states.iter().enumerate() {
        let row = doc.transitions.get(sname);
        let default = row.and_then(|r| r.get("_"));
        for &a in &world_actions {
            let aname = &actions.names[a.index()];
            let target = row.and_then(|r| r.get(aname)).or(default);
            match target {
                Some(t) => {
                    let next = if t == "self" { StateId(si as u16) } else { state_index(t)? };
                    transitions[si][a.index()] = next;
                }
                None => missing.push(format!("({sname}, {aname})")),
            }
        }
        // Mode switches use the noop column; fill for completeness.
        for (ai, kind) in actions.kinds.iter().enumerate() {
            if matches!(kind, ActionKind::ModeSwitch(_)) {
                transitions[si][ai] = transitions[si][noop.index()];
            }
        }
        if let Some(r) = row {
            for key in r.keys() {
                if key != "_" && actions.by_name(key).is_none() {
                    return Err(schema_err("transitions", format!("unknown action `{key}`")));
                }
            }
        }
    }
    if !missing.is_empty() {
        return Err(WorldError::Totality(missing));
    }

    // Emissions total over states x modes. `*` covers unlisted modes.
    let recall_flag = SignalId(doc.n_signals as u16 - 1);
    let mut emits_reserved = false;
    let mut emissions = vec![vec![Vec::new(); doc.modes.len()]; doc.states.len()];
    let mut missing = Vec::new();
    for (si, sname) in doc.states.iter().enumerate() {
        let row = doc.emissions.get(sname);
        let fallback = row.and_then(|r| r.get("*"));
        for (mi, mname) in doc.modes.iter().enumerate() {
            let entries = row.and_then(|r| r.get(mname)).or(fallback);
            match entries {
                Some(list) => {
                    let mut emits = Vec::new();
                    for e in list {
                        let (name, prob) = match e {
                            EmitDoc::Plain(n) => (n.as_str(), 1.0),
                            EmitDoc::WithProb { signal, prob } => (signal.as_str(), *prob),
                        };
                        if !(0.0..=1.0).contains(&prob) {
                            return Err(schema_err("emissions", "prob must be in [0,1]"));
                        }
                        let s = signal_index(name)?;
                        if s == recall_flag {
                            emits_reserved = true;
                        }
                        emits.push(Emit { signal: s, prob });
                    }
                    emits.sort_by_key(|e| e.signal);
                    emissions[si][mi] = emits;
                }
                None => missing.push(format!("({sname}, {mname})")),
            }
        }
    }
    if !missing.is_empty() {
        return Err(WorldError::Totality(missing));
    }

    let initial = match &doc.initial {
        InitialDoc::Fixed(name) => vec![state_index(name)?],
        InitialDoc::Seeded { seeded } => {
            if seeded.is_empty() {
                return Err(schema_err("initial", "seeded list must be nonempty"));
            }
            seeded.iter().map(|n| state_index(n)).collect::<Result<Vec<_>, _>>()?
        }
    };

    let script = doc
        .script
        .iter()
        .map(|n| {
            actions
                .by_name(n)
                .ok_or_else(|| schema_err("script", format!("unknown action `{n}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;

    let mut tasks = Vec::new();
    for t in &doc.tasks {
        if t.budget < 1 {
            return Err(schema_err("tasks", "budget must be >= 1"));
        }
        let mut targets = Vec::new();
        for g in &t.targets {
            let mut set = SignalSet::new();
            for n in g {
                set.insert(signal_index(n)?);
            }
            targets.push(
                SignalGroup::new(set)
                    .map_err(|_| schema_err("tasks", "empty target group"))?,
            );
        }
        if targets.is_empty() {
            return Err(schema_err("tasks", "at least one target group required"));
        }
        tasks.push(TaskSpec { name: t.name.clone(), targets, budget: t.budget });
    }

    // Duplicate-name audits.
    for (key, list) in [
        ("signals", &doc.signals),
        ("modes", &doc.modes),
        ("states", &doc.states),
    ] {
        let set: BTreeSet<_> = list.iter().collect();
        if set.len() != list.len() {
            return Err(schema_err(key, "duplicate names"));
        }
    }

    Ok(World {
        n_signals: doc.n_signals,
        actions,
        channels,
        label_channel,
        modes: doc.modes.clone(),
        valences,
        state_names: doc.states.clone(),
        transitions,
        emissions,
        initial,
        seed: doc.seed,
        tasks,
        script,
        training_rounds: doc.training.map(|t| t.rounds).unwrap_or(1),
        params: doc.params.unwrap_or_default(),
        emits_reserved,
        noop,
        signal_names: doc.signals.clone(),
    })
}
