//! Indexed episodic storage: at every decision where a rule fires, the
//! matched condition and prediction are stored under a dense index.
//! Pressing the matching recall button later replays exactly that content
//! as a Recall-provenance frame — no reconstruction, no noise — which is
//! what makes credit assignment and recall-rule mining possible.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::miner::{RuleId, TemporalPattern};
use crate::signal::{
    ActionId, Channel, ChannelId, EpisodeId, SignalFrame, SignalGroup, SignalSet,
};
use crate::world::{World, WorldCursor};

/// Sentinel returned when gating removed everything there was to store.
/// Recalling it is a fault, distinct from an unknown index.
pub const NOT_RECORDED: EpisodeId = EpisodeId(u32::MAX);

#[derive(Debug, Error)]
pub enum EpisodeError {
    #[error("recall fault: episode {0:?} does not exist")]
    UnknownEpisode(EpisodeId),
    #[error("recall fault: episode was not recorded (gated out at capture)")]
    NotRecorded,
    #[error("assignment fault: no decision episode at tick {0}")]
    NoEpisodeAtTick(u64),
}

/// A stored decision: the condition that matched, the action taken on it,
/// and what the cited rule predicted.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Episode {
    pub id: EpisodeId,
    pub trace: TemporalPattern,
    pub action: ActionId,
    pub predicted: SignalGroup,
    pub rule: RuleId,
    pub tick: u64,
}

impl Episode {
    /// Everything a recall of this episode reactivates, before the recall
    /// flag is added: the trace groups plus the predicted group.
    pub fn content(&self) -> SignalSet {
        self.trace
            .steps
            .iter()
            .fold(self.predicted.set().clone(), |acc, (g, _)| acc.union(g.set()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateState {
    Open,
    Gated,
}

/// Per-channel recording gates. A gated channel's signals are silently
/// dropped from captured episodes; online prediction never consults this.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GateConfig {
    pub states: BTreeMap<ChannelId, GateState>,
}

impl GateConfig {
    pub fn state(&self, c: ChannelId) -> GateState {
        self.states.get(&c).copied().unwrap_or(GateState::Open)
    }
}

/// The episode store: dense ids in creation order, plus the channel table
/// (copied in, so no live world access is ever needed) and gate settings.
#[derive(Debug, Clone)]
pub struct EpisodeStore {
    pub episodes: Vec<Episode>,
    pub gates: GateConfig,
    channels: Vec<Channel>,
    /// Ablation switch: when set, recalled content is deterministically
    /// perturbed per invocation, violating recall determinism on purpose.
    pub corrupt: bool,
    recall_invocations: u64,
}

impl EpisodeStore {
    pub fn new(channels: Vec<Channel>) -> Self {
        Self {
            episodes: Vec::new(),
            gates: GateConfig::default(),
            channels,
            corrupt: false,
            recall_invocations: 0,
        }
    }

    pub fn get(&self, k: EpisodeId) -> Option<&Episode> {
        self.episodes.get(k.0 as usize)
    }

    pub fn len(&self) -> usize {
        self.episodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    /// The union of all currently gated channels' members.
    fn gated_mask(&self) -> SignalSet {
        self.channels
            .iter()
            .enumerate()
            .filter(|(i, _)| self.gates.state(ChannelId(*i as u16)) == GateState::Gated)
            .fold(SignalSet::new(), |acc, (_, c)| acc.union(&c.members))
    }
}

/// Capture a decision. Gated channels' signals are removed from every
/// group; if that empties the condition pattern or the prediction, nothing
/// is stored and [`NOT_RECORDED`] comes back.
pub fn store_episode(
    store: &mut EpisodeStore,
    pattern: &TemporalPattern,
    action: ActionId,
    predicted: &SignalGroup,
    rule: RuleId,
    tick: u64,
) -> EpisodeId {
    let mask = store.gated_mask();
    let mut steps = Vec::with_capacity(pattern.steps.len());
    for (g, a) in &pattern.steps {
        match SignalGroup::new(g.set().difference(&mask)) {
            Ok(g) => steps.push((g, *a)),
            Err(_) => return NOT_RECORDED,
        }
    }
    let predicted = match SignalGroup::new(predicted.set().difference(&mask)) {
        Ok(p) => p,
        Err(_) => return NOT_RECORDED,
    };
    let id = EpisodeId(store.episodes.len() as u32);
    store.episodes.push(Episode {
        id,
        trace: TemporalPattern { steps },
        action,
        predicted,
        rule,
        tick,
    });
    id
}

/// Re-activate episode `k`. Consumes one tick: the world advances silently
/// under its no-op (external emissions suppressed) and the frame the agent
/// sees is exactly the stored content plus the recall flag, all with Recall
/// provenance. Deterministic while the store is unmodified.
pub fn recall(
    store: &mut EpisodeStore,
    k: EpisodeId,
    world: &World,
    cursor: &WorldCursor,
) -> Result<(WorldCursor, SignalFrame), EpisodeError> {
    if k == NOT_RECORDED {
        return Err(EpisodeError::NotRecorded);
    }
    let episode = store.get(k).ok_or(EpisodeError::UnknownEpisode(k))?;
    let mut content = episode.content();
    store.recall_invocations += 1;
    if store.corrupt {
        // Rotate membership by invocation parity: drop the lowest signal
        // on odd calls so successive recalls disagree.
        if store.recall_invocations % 2 == 1 {
            let lowest = content.iter().next();
            if let Some(lowest) = lowest {
                content.remove(lowest);
            }
        }
    }
    content.insert(world.recall_flag());
    let next = world.advance_silent(cursor);
    let frame = SignalFrame::recalled(next.tick(), content);
    Ok((next, frame))
}

/// Credit assignment: a prediction made at `tick` failed, and the episode
/// stored at that decision names the one rule that produced it — even when
/// several rules predict the same consequent.
pub fn locate_faulty_rule(
    store: &EpisodeStore,
    tick: u64,
    _predicted: &SignalGroup,
    _observed: &SignalFrame,
) -> Result<RuleId, EpisodeError> {
    store
        .episodes
        .iter()
        .rev()
        .find(|e| e.tick == tick)
        .map(|e| e.rule)
        .ok_or(EpisodeError::NoEpisodeAtTick(tick))
}

/// Flip a channel's recording gate. Past episodes are untouched.
pub fn set_gate(store: &mut EpisodeStore, channel: ChannelId, g: GateState) -> GateConfig {
    store.gates.states.insert(channel, g);
    store.gates.clone()
}

/// Signals of any gated channel present in stored episodes — must always be
/// empty while the gate discipline holds.
pub fn gated_leakage(store: &EpisodeStore) -> SignalSet {
    let mask = store.gated_mask();
    store
        .episodes
        .iter()
        .fold(SignalSet::new(), |acc, e| acc.union(&e.content()))
        .intersection(&mask)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::SignalId;
    use crate::world::load_scenario;

    fn grp(ids: &[u16]) -> SignalGroup {
        SignalGroup::from_indices(ids.iter().copied()).unwrap()
    }

    fn world() -> World {
        let doc = serde_json::json!({
            "n_signals": 5,
            "signals": ["v1", "v2", "t1", "L", "R"],
            "channels": [
                {"name": "vision", "members": ["v1", "v2"]},
                {"name": "touch", "members": ["t1"]},
                {"name": "labels", "members": ["L"]},
                {"name": "internal", "members": ["R"]}
            ],
            "labels": "labels",
            "valences": {},
            "actions": [
                {"name": "wait", "kind": "noop"},
                {"name": "touch", "kind": "motor"}
            ],
            "modes": ["default"],
            "states": ["s"],
            "transitions": {"s": {"_": "self"}},
            "emissions": {"s": {"*": ["v1", "v2"]}},
            "initial": "s",
            "seed": 1
        });
        load_scenario(&doc.to_string()).unwrap()
    }

    fn store_for(w: &World) -> EpisodeStore {
        EpisodeStore::new(w.channels.clone())
    }

    fn capture(store: &mut EpisodeStore, tick: u64) -> EpisodeId {
        store_episode(
            store,
            &TemporalPattern::single(grp(&[0, 1]), ActionId(1)),
            ActionId(1),
            &grp(&[2]),
            RuleId(7),
            tick,
        )
    }

    #[test]
    fn recall_replays_trace_prediction_and_flag() {
        let w = world();
        let mut store = store_for(&w);
        let k = capture(&mut store, 3);
        assert_eq!(k, EpisodeId(0));
        let (cursor, _) = w.spawn(0);
        let (next, frame) = recall(&mut store, k, &w, &cursor).unwrap();
        assert_eq!(frame.active, SignalSet::from_indices([0u16, 1, 2, 4]));
        assert!(frame.is_recall());
        assert_eq!(next.tick(), cursor.tick() + 1);
        // every signal carries Recall provenance
        use crate::signal::Provenance;
        for s in frame.active.iter() {
            assert_eq!(frame.provenance(s), Some(Provenance::Recall));
        }
    }

    #[test]
    fn recall_is_deterministic_while_store_unchanged() {
        let w = world();
        let mut store = store_for(&w);
        let k = capture(&mut store, 3);
        let (cursor, _) = w.spawn(0);
        let (_, a) = recall(&mut store, k, &w, &cursor).unwrap();
        let (_, b) = recall(&mut store, k, &w, &cursor).unwrap();
        assert_eq!(a.active, b.active);
    }

    #[test]
    fn corrupt_store_breaks_determinism() {
        let w = world();
        let mut store = store_for(&w);
        let k = capture(&mut store, 3);
        store.corrupt = true;
        let (cursor, _) = w.spawn(0);
        let (_, a) = recall(&mut store, k, &w, &cursor).unwrap();
        let (_, b) = recall(&mut store, k, &w, &cursor).unwrap();
        assert_ne!(a.active, b.active);
    }

    #[test]
    fn recall_faults() {
        let w = world();
        let mut store = store_for(&w);
        let (cursor, _) = w.spawn(0);
        assert!(matches!(
            recall(&mut store, EpisodeId(5), &w, &cursor),
            Err(EpisodeError::UnknownEpisode(_))
        ));
        assert!(matches!(
            recall(&mut store, NOT_RECORDED, &w, &cursor),
            Err(EpisodeError::NotRecorded)
        ));
    }

    #[test]
    fn gating_strips_and_can_refuse() {
        let w = world();
        let mut store = store_for(&w);
        // gate vision (channel 0): condition {v1,v2} empties -> not recorded
        set_gate(&mut store, ChannelId(0), GateState::Gated);
        assert_eq!(capture(&mut store, 1), NOT_RECORDED);
        assert!(store.is_empty());

        // gate touch instead: prediction {t1} empties -> not recorded
        set_gate(&mut store, ChannelId(0), GateState::Open);
        set_gate(&mut store, ChannelId(1), GateState::Gated);
        assert_eq!(capture(&mut store, 2), NOT_RECORDED);

        // mixed-content episode survives with gated ids stripped
        let k = store_episode(
            &mut store,
            &TemporalPattern::single(grp(&[0, 2]), ActionId(0)),
            ActionId(0),
            &grp(&[1]),
            RuleId(0),
            3,
        );
        assert_eq!(k, EpisodeId(0));
        assert_eq!(store.get(k).unwrap().content(), SignalSet::from_indices([0u16, 1]));
        assert!(gated_leakage(&store).is_empty());
    }

    #[test]
    fn past_episodes_survive_gate_changes() {
        let w = world();
        let mut store = store_for(&w);
        let k = capture(&mut store, 1);
        set_gate(&mut store, ChannelId(0), GateState::Gated);
        assert!(store.get(k).unwrap().content().contains(SignalId(0)));
    }

    #[test]
    fn credit_assignment_names_the_fired_rule() {
        let w = world();
        let mut store = store_for(&w);
        // two episodes at different ticks citing different rules
        store_episode(
            &mut store,
            &TemporalPattern::single(grp(&[1]), ActionId(1)),
            ActionId(1),
            &grp(&[2]),
            RuleId(3),
            10,
        );
        store_episode(
            &mut store,
            &TemporalPattern::single(grp(&[0]), ActionId(1)),
            ActionId(1),
            &grp(&[2]),
            RuleId(4),
            11,
        );
        let observed = SignalFrame::external(12, SignalSet::new());
        assert_eq!(
            locate_faulty_rule(&store, 11, &grp(&[2]), &observed).unwrap(),
            RuleId(4)
        );
        assert_eq!(
            locate_faulty_rule(&store, 10, &grp(&[2]), &observed).unwrap(),
            RuleId(3)
        );
        assert!(matches!(
            locate_faulty_rule(&store, 99, &grp(&[2]), &observed),
            Err(EpisodeError::NoEpisodeAtTick(99))
        ));
    }

    #[test]
    fn ids_are_dense_in_creation_order() {
        let w = world();
        let mut store = store_for(&w);
        for i in 0..3 {
            assert_eq!(capture(&mut store, i), EpisodeId(i as u32));
        }
    }
}
