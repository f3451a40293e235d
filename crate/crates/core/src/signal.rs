//! Core value types: signal ids, bitmask-backed signal sets, groups, frames,
//! actions, valence and channels, plus the set algebra everything else uses.

use std::fmt;

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeSeq, Serializer};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Hard cap on the signal array width. The default scenarios stay under 64
/// so frames fit a single machine word; the u128 backing gives headroom for
/// wider scenarios without changing the representation.
pub const MAX_SIGNALS: usize = 128;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SignalError {
    #[error("signal index {0} out of range (max {MAX_SIGNALS})")]
    IndexOutOfRange(u16),
    #[error("signal group must be nonempty")]
    EmptyGroup,
    #[error("recall provenance set is not a subset of the active set")]
    ProvenanceMismatch,
}

/// One binary perceptual primitive. Opaque to the agent: no semantics beyond
/// the index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SignalId(pub u16);

impl SignalId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for SignalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

/// Where an active signal came from: the world's sensors, or the agent's own
/// recall machinery.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    External,
    Recall,
}

/// A set of signal ids backed by a u128 bitmask. Equality and hashing are
/// canonical by construction; iteration is ascending by index.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct SignalSet(u128);

impl SignalSet {
    pub const EMPTY: SignalSet = SignalSet(0);

    pub fn new() -> Self {
        Self(0)
    }

    pub fn singleton(id: SignalId) -> Self {
        let mut s = Self(0);
        s.insert(id);
        s
    }

    pub fn from_indices<I: IntoIterator<Item = u16>>(ids: I) -> Self {
        let mut s = Self(0);
        for i in ids {
            s.insert(SignalId(i));
        }
        s
    }

    pub fn insert(&mut self, id: SignalId) {
        debug_assert!(id.index() < MAX_SIGNALS);
        self.0 |= 1u128 << id.index();
    }

    pub fn remove(&mut self, id: SignalId) {
        self.0 &= !(1u128 << id.index());
    }

    pub fn contains(&self, id: SignalId) -> bool {
        id.index() < MAX_SIGNALS && self.0 & (1u128 << id.index()) != 0
    }

    pub fn is_empty(&self) -> bool {
        self.0 == 0
    }

    pub fn len(&self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn union(&self, other: &SignalSet) -> SignalSet {
        SignalSet(self.0 | other.0)
    }

    pub fn intersection(&self, other: &SignalSet) -> SignalSet {
        SignalSet(self.0 & other.0)
    }

    pub fn difference(&self, other: &SignalSet) -> SignalSet {
        SignalSet(self.0 & !other.0)
    }

    pub fn symmetric_difference(&self, other: &SignalSet) -> SignalSet {
        SignalSet(self.0 ^ other.0)
    }

    pub fn is_subset(&self, other: &SignalSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = SignalId> + '_ {
        let bits = self.0;
        (0..MAX_SIGNALS as u16).filter(move |i| bits & (1u128 << i) != 0).map(SignalId)
    }

    pub fn indices(&self) -> Vec<u16> {
        self.iter().map(|s| s.0).collect()
    }
}

impl FromIterator<SignalId> for SignalSet {
    fn from_iter<I: IntoIterator<Item = SignalId>>(iter: I) -> Self {
        let mut s = Self::new();
        for id in iter {
            s.insert(id);
        }
        s
    }
}

impl fmt::Debug for SignalSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter().map(|s| s.0)).finish()
    }
}

/// Canonical ordering: lexicographic over the ascending member sequence.
impl Ord for SignalSet {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.iter().cmp(other.iter())
    }
}

impl PartialOrd for SignalSet {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Serialize for SignalSet {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut seq = serializer.serialize_seq(Some(self.len()))?;
        for id in self.iter() {
            seq.serialize_element(&id.0)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for SignalSet {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = SignalSet;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a sequence of signal indices")
            }
            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<SignalSet, A::Error> {
                let mut set = SignalSet::new();
                while let Some(i) = seq.next_element::<u16>()? {
                    if i as usize >= MAX_SIGNALS {
                        return Err(de::Error::custom(format!("signal index {i} out of range")));
                    }
                    set.insert(SignalId(i));
                }
                Ok(set)
            }
        }
        deserializer.deserialize_seq(V)
    }
}

/// A nonempty set of co-active signals treated as a unit: the carrier of
/// predictive power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(transparent)]
pub struct SignalGroup(SignalSet);

impl SignalGroup {
    pub fn new(set: SignalSet) -> Result<Self, SignalError> {
        if set.is_empty() {
            Err(SignalError::EmptyGroup)
        } else {
            Ok(Self(set))
        }
    }

    pub fn from_indices<I: IntoIterator<Item = u16>>(ids: I) -> Result<Self, SignalError> {
        Self::new(SignalSet::from_indices(ids))
    }

    pub fn set(&self) -> &SignalSet {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, id: SignalId) -> bool {
        self.0.contains(id)
    }

    pub fn iter(&self) -> impl Iterator<Item = SignalId> + '_ {
        self.0.iter()
    }
}

impl<'de> Deserialize<'de> for SignalGroup {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let set = SignalSet::deserialize(deserializer)?;
        SignalGroup::new(set).map_err(de::Error::custom)
    }
}

/// The lit-lights state at one tick. `recall` marks the subset of `active`
/// carrying Recall provenance; every other active id is External.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SignalFrame {
    pub tick: u64,
    pub active: SignalSet,
    recall: SignalSet,
}

impl SignalFrame {
    pub fn external(tick: u64, active: SignalSet) -> Self {
        Self { tick, active, recall: SignalSet::EMPTY }
    }

    pub fn recalled(tick: u64, active: SignalSet) -> Self {
        Self { tick, active, recall: active }
    }

    pub fn new(tick: u64, active: SignalSet, recall: SignalSet) -> Result<Self, SignalError> {
        if !recall.is_subset(&active) {
            return Err(SignalError::ProvenanceMismatch);
        }
        Ok(Self { tick, active, recall })
    }

    pub fn provenance(&self, id: SignalId) -> Option<Provenance> {
        if !self.active.contains(id) {
            None
        } else if self.recall.contains(id) {
            Some(Provenance::Recall)
        } else {
            Some(Provenance::External)
        }
    }

    /// True when any active signal carries Recall provenance.
    pub fn is_recall(&self) -> bool {
        !self.recall.is_empty()
    }

    /// The active signals with External provenance.
    pub fn external_active(&self) -> SignalSet {
        self.active.difference(&self.recall)
    }

    pub fn recall_set(&self) -> &SignalSet {
        &self.recall
    }
}

/// An index into the world's button array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub u16);

impl ActionId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// A named observation configuration. Index 0 is always the default mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeId(pub u16);

/// An index into the episode store, used to address recall buttons.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EpisodeId(pub u32);

/// What pressing a button does. Recall buttons occupy a reserved contiguous
/// range above all world-defined actions; see [`ActionTable`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActionKind {
    Motor,
    #[serde(rename = "mode")]
    ModeSwitch(ModeId),
    #[serde(rename = "recall")]
    RecallButton(EpisodeId),
    NoOp,
}

/// The world-defined button array plus the reserved recall range above it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ActionTable {
    pub names: Vec<String>,
    pub kinds: Vec<ActionKind>,
}

impl ActionTable {
    /// Number of world-defined actions; recall buttons start at this index.
    pub fn world_len(&self) -> usize {
        self.kinds.len()
    }

    pub fn kind(&self, a: ActionId) -> ActionKind {
        if a.index() >= self.kinds.len() {
            ActionKind::RecallButton(EpisodeId((a.index() - self.kinds.len()) as u32))
        } else {
            self.kinds[a.index()]
        }
    }

    pub fn recall_button(&self, k: EpisodeId) -> ActionId {
        ActionId(self.kinds.len() as u16 + k.0 as u16)
    }

    pub fn is_recall(&self, a: ActionId) -> bool {
        a.index() >= self.kinds.len()
    }

    pub fn name(&self, a: ActionId) -> String {
        if let ActionKind::RecallButton(k) = self.kind(a) {
            format!("recall({})", k.0)
        } else {
            self.names[a.index()].clone()
        }
    }

    pub fn by_name(&self, name: &str) -> Option<ActionId> {
        self.names.iter().position(|n| n == name).map(|i| ActionId(i as u16))
    }

    /// World actions that are motor or noop (not mode switches).
    pub fn motor_actions(&self) -> Vec<ActionId> {
        (0..self.kinds.len())
            .filter(|&i| matches!(self.kinds[i], ActionKind::Motor | ActionKind::NoOp))
            .map(|i| ActionId(i as u16))
            .collect()
    }

    /// Every world-defined action id, in table order.
    pub fn world_action_ids(&self) -> Vec<ActionId> {
        (0..self.kinds.len()).map(|i| ActionId(i as u16)).collect()
    }

    pub fn noop(&self) -> Option<ActionId> {
        self.kinds
            .iter()
            .position(|k| matches!(k, ActionKind::NoOp))
            .map(|i| ActionId(i as u16))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValenceClass {
    Beneficial,
    Harmful,
    Neutral,
}

/// Innate beneficial/harmful tagging of a signal. Weight is zero exactly for
/// Neutral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Valence {
    pub class: ValenceClass,
    pub weight: f64,
}

impl Valence {
    pub const NEUTRAL: Valence = Valence { class: ValenceClass::Neutral, weight: 0.0 };

    pub fn beneficial(weight: f64) -> Self {
        assert!(weight > 0.0);
        Self { class: ValenceClass::Beneficial, weight }
    }

    pub fn harmful(weight: f64) -> Self {
        assert!(weight > 0.0);
        Self { class: ValenceClass::Harmful, weight }
    }

    pub fn is_neutral(&self) -> bool {
        matches!(self.class, ValenceClass::Neutral)
    }

    pub fn validate(&self) -> bool {
        (self.weight > 0.0) != self.is_neutral() || (self.weight == 0.0 && self.is_neutral())
    }
}

/// An index into the world's channel list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ChannelId(pub u16);

/// A sensor source: a named block of the signal array. Channels partition
/// the array; the partition is asserted at world load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Channel {
    pub name: String,
    pub members: SignalSet,
}

/// True iff every member of `a` is a member of `b`.
pub fn group_subset(a: &SignalGroup, b: &SignalGroup) -> bool {
    a.set().is_subset(b.set())
}

/// The part of `g` visible on channel `c`; None when the intersection is
/// empty.
pub fn group_project(g: &SignalGroup, c: &Channel) -> Option<SignalGroup> {
    SignalGroup::new(g.set().intersection(&c.members)).ok()
}

/// True iff `g` is entirely lit in `frame`.
pub fn frame_matches(frame: &SignalFrame, g: &SignalGroup) -> bool {
    g.set().is_subset(&frame.active)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grp(ids: &[u16]) -> SignalGroup {
        SignalGroup::from_indices(ids.iter().copied()).unwrap()
    }

    #[test]
    fn subset_examples() {
        assert!(group_subset(&grp(&[3]), &grp(&[3, 7])));
        assert!(group_subset(&grp(&[3, 7]), &grp(&[3, 7])));
        assert!(!group_subset(&grp(&[1, 9]), &grp(&[1, 2, 3])));
    }

    #[test]
    fn project_examples() {
        let vision = Channel { name: "vision".into(), members: SignalSet::from_indices(0..5) };
        assert_eq!(group_project(&grp(&[1, 2, 9]), &vision), Some(grp(&[1, 2])));
        assert_eq!(group_project(&grp(&[9]), &vision), None);
    }

    #[test]
    fn project_union_over_partition_recovers_group() {
        let chans = vec![
            Channel { name: "a".into(), members: SignalSet::from_indices(0..3) },
            Channel { name: "b".into(), members: SignalSet::from_indices(3..6) },
            Channel { name: "c".into(), members: SignalSet::from_indices(6..10) },
        ];
        let g = grp(&[0, 4, 7, 9]);
        let mut union = SignalSet::new();
        for c in &chans {
            if let Some(p) = group_project(&g, c) {
                union = union.union(p.set());
            }
        }
        assert_eq!(&union, g.set());
    }

    #[test]
    fn frame_match_examples() {
        let f = SignalFrame::external(0, SignalSet::from_indices([1, 2, 3]));
        assert!(frame_matches(&f, &grp(&[2, 3])));
        let empty = SignalFrame::external(0, SignalSet::new());
        assert!(!frame_matches(&empty, &grp(&[2])));
        let exact = SignalFrame::external(0, SignalSet::from_indices([2]));
        assert!(frame_matches(&exact, &grp(&[2])));
    }

    #[test]
    fn canonical_equality_is_order_independent() {
        let a: SignalSet = [SignalId(5), SignalId(1), SignalId(9)].into_iter().collect();
        let b: SignalSet = [SignalId(9), SignalId(5), SignalId(1)].into_iter().collect();
        assert_eq!(a, b);
        assert_eq!(SignalGroup::new(a).unwrap(), SignalGroup::new(b).unwrap());
    }

    #[test]
    fn empty_group_rejected() {
        assert_eq!(SignalGroup::new(SignalSet::new()), Err(SignalError::EmptyGroup));
    }

    #[test]
    fn provenance_totality() {
        let active = SignalSet::from_indices([1, 2]);
        let bad_recall = SignalSet::from_indices([3]);
        assert_eq!(
            SignalFrame::new(0, active, bad_recall),
            Err(SignalError::ProvenanceMismatch)
        );
        let f = SignalFrame::new(0, active, SignalSet::from_indices([2])).unwrap();
        assert_eq!(f.provenance(SignalId(1)), Some(Provenance::External));
        assert_eq!(f.provenance(SignalId(2)), Some(Provenance::Recall));
        assert_eq!(f.provenance(SignalId(5)), None);
    }

    #[test]
    fn set_ordering_is_lexicographic_on_members() {
        // [1,9] < [2] under member-sequence lexicographic order.
        let a = SignalSet::from_indices([1, 9]);
        let b = SignalSet::from_indices([2]);
        assert!(a < b);
    }

    #[test]
    fn set_serde_round_trip() {
        let s = SignalSet::from_indices([0, 3, 63]);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, "[0,3,63]");
        let back: SignalSet = serde_json::from_str(&json).unwrap();
        assert_eq!(s, back);
    }

    #[test]
    fn recall_button_range_is_above_world_actions() {
        let table = ActionTable {
            names: vec!["noop".into(), "touch".into()],
            kinds: vec![ActionKind::NoOp, ActionKind::Motor],
        };
        let b = table.recall_button(EpisodeId(0));
        assert_eq!(b, ActionId(2));
        assert!(table.is_recall(b));
        assert_eq!(table.kind(b), ActionKind::RecallButton(EpisodeId(0)));
        assert!(!table.is_recall(ActionId(1)));
    }
}
