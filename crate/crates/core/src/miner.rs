//! Predictive rule induction: bind co-active signals into candidate groups,
//! mine action-conditioned rules over a short temporal window, track
//! exceptions and outcomes, and define objects in reverse from validated
//! rules.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::signal::{
    ActionId, Channel, SignalFrame, SignalGroup, SignalId, SignalSet,
};

#[derive(Debug, Error)]
pub enum MinerError {
    #[error("history too short to mine (need at least 2 steps)")]
    HistoryTooShort,
    #[error("confidence threshold must be in (0, 1]")]
    BadThreshold,
}

/// Mining parameters. Defaults are sized so exhaustive oracles stay cheap.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MinerParams {
    /// Temporal window: maximum condition length in steps.
    pub w: usize,
    /// Maximum candidate group size.
    pub g: usize,
    /// Minimum confidence for a mined rule.
    pub theta_conf: f64,
    /// Confidence floor below which a rule is quarantined.
    pub theta_demote: f64,
    /// Minimum support for candidates and rules.
    pub s_min: u32,
    /// Misses before an exception context suppresses predictions.
    pub x_min: u32,
}

impl Default for MinerParams {
    fn default() -> Self {
        Self { w: 2, g: 4, theta_conf: 0.9, theta_demote: 0.5, s_min: 3, x_min: 2 }
    }
}

/// One completed step of experience: the frame observed at a tick and the
/// action then taken.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HistoryStep {
    pub frame: SignalFrame,
    pub action: ActionId,
}

/// Run history as segments. Temporal conditions never span a segment
/// boundary, so independent runs can be mined together.
#[derive(Debug, Clone, Default)]
pub struct History {
    pub segments: Vec<Vec<HistoryStep>>,
}

impl History {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn begin_segment(&mut self) {
        if self.segments.last().map_or(true, |s| !s.is_empty()) {
            self.segments.push(Vec::new());
        }
    }

    pub fn push(&mut self, frame: SignalFrame, action: ActionId) {
        if self.segments.is_empty() {
            self.segments.push(Vec::new());
        }
        self.segments.last_mut().unwrap().push(HistoryStep { frame, action });
    }

    pub fn len(&self) -> usize {
        self.segments.iter().map(|s| s.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Co-occurrence counts for signal groups up to size G, over external
/// (non-recall) signals.
#[derive(Debug, Clone)]
pub struct CooccurrenceStats {
    pub g: usize,
    counts: BTreeMap<SignalGroup, u64>,
    pub frames_seen: u64,
}

impl CooccurrenceStats {
    pub fn new(g: usize) -> Self {
        Self { g, counts: BTreeMap::new(), frames_seen: 0 }
    }

    /// Tally every nonempty subset (size <= G) of the frame's external
    /// signals. Recall-provenance signals never enter external counting.
    pub fn observe(&mut self, frame: &SignalFrame) {
        self.frames_seen += 1;
        let members: Vec<SignalId> = frame.external_active().iter().collect();
        let mut stack: Vec<SignalId> = Vec::with_capacity(self.g);
        Self::tally(&members, 0, &mut stack, self.g, &mut self.counts);
    }

    fn tally(
        members: &[SignalId],
        from: usize,
        stack: &mut Vec<SignalId>,
        g: usize,
        counts: &mut BTreeMap<SignalGroup, u64>,
    ) {
        for i in from..members.len() {
            stack.push(members[i]);
            let group = SignalGroup::new(stack.iter().copied().collect()).unwrap();
            *counts.entry(group).or_insert(0) += 1;
            if stack.len() < g {
                Self::tally(members, i + 1, stack, g, counts);
            }
            stack.pop();
        }
    }

    pub fn count(&self, g: &SignalGroup) -> u64 {
        self.counts.get(g).copied().unwrap_or(0)
    }

    /// All groups of size <= G with count >= s_min. Downward closed by
    /// construction: a subset's count is never below its superset's.
    pub fn candidate_groups(&self, s_min: u32) -> BTreeSet<SignalGroup> {
        assert!(s_min >= 1);
        self.counts
            .iter()
            .filter(|(_, &c)| c >= s_min as u64)
            .map(|(g, _)| *g)
            .collect()
    }
}

/// A temporal condition: (group, action) steps ordered oldest to newest.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TemporalPattern {
    pub steps: Vec<(SignalGroup, ActionId)>,
}

impl TemporalPattern {
    pub fn single(group: SignalGroup, action: ActionId) -> Self {
        Self { steps: vec![(group, action)] }
    }

    pub fn final_group(&self) -> &SignalGroup {
        &self.steps.last().expect("pattern nonempty").0
    }

    pub fn final_action(&self) -> ActionId {
        self.steps.last().expect("pattern nonempty").1
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RuleId(pub u32);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleStatus {
    Active,
    Quarantined,
}

/// A recorded miss context: signals co-active beyond the condition when the
/// prediction failed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExceptionRecord {
    pub context: SignalGroup,
    pub misses: u32,
}

/// A mined predictive rule: condition pattern + action -> consequent group,
/// with its running statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Rule {
    pub id: RuleId,
    pub condition: TemporalPattern,
    pub action: ActionId,
    pub consequent: SignalGroup,
    pub support: u32,
    pub hits: u32,
    pub confidence: f64,
    pub priority: f64,
    pub status: RuleStatus,
    pub exceptions: Vec<ExceptionRecord>,
}

impl Rule {
    pub fn recompute_confidence(&mut self) {
        debug_assert!(self.support >= self.hits);
        self.confidence = if self.support == 0 {
            0.0
        } else {
            self.hits as f64 / self.support as f64
        };
    }

    pub fn is_active(&self) -> bool {
        self.status == RuleStatus::Active
    }
}

/// Mine every (condition <= W steps, action, consequent) triple meeting the
/// support and confidence thresholds over the history.
///
/// Condition step groups are drawn from `candidates`; consequents from
/// `candidates` plus the full active set of any recall-produced frame (so
/// recall rules fall out of the same machinery). Ordering is deterministic:
/// support descending, then canonical encoding.
pub fn mine_rules(
    history: &History,
    candidates: &BTreeSet<SignalGroup>,
    params: &MinerParams,
) -> Result<Vec<Rule>, MinerError> {
    mine_rules_with(history, candidates, params, None)
}

/// As [`mine_rules`], but when `allowed_consequents` is given only rules
/// whose consequent is in the set (or is a recall frame) are produced. Used
/// by budgeted, priority-ordered discovery.
pub fn mine_rules_with(
    history: &History,
    candidates: &BTreeSet<SignalGroup>,
    params: &MinerParams,
    allowed_consequents: Option<&BTreeSet<SignalGroup>>,
) -> Result<Vec<Rule>, MinerError> {
    if history.len() < 2 {
        return Err(MinerError::HistoryTooShort);
    }
    if !(params.theta_conf > 0.0 && params.theta_conf <= 1.0) {
        return Err(MinerError::BadThreshold);
    }

    type CondKey = Vec<(SignalGroup, ActionId)>;
    let mut support: BTreeMap<CondKey, u32> = BTreeMap::new();
    let mut hits: BTreeMap<(CondKey, SignalGroup), u32> = BTreeMap::new();

    for seg in &history.segments {
        if seg.len() < 2 {
            continue;
        }
        // Per-position matching candidate groups.
        let matches: Vec<Vec<SignalGroup>> = seg
            .iter()
            .map(|s| {
                candidates
                    .iter()
                    .filter(|g| g.set().is_subset(&s.frame.active))
                    .copied()
                    .collect()
            })
            .collect();

        for t in 0..seg.len() - 1 {
            let next = &seg[t + 1].frame;
            // Consequent pool at this position.
            let mut pool: Vec<SignalGroup> = candidates
                .iter()
                .filter(|c| {
                    c.set().is_subset(&next.active)
                        && allowed_consequents.map_or(true, |a| a.contains(c))
                })
                .copied()
                .collect();
            if next.is_recall() {
                let full = SignalGroup::new(next.active).expect("recall frame nonempty");
                if !pool.contains(&full) {
                    pool.push(full);
                }
            }
            for len in 1..=params.w {
                if t + 1 < len {
                    continue;
                }
                let base = t + 1 - len;
                if matches[base..base + len].iter().any(|m| m.is_empty()) {
                    continue;
                }
                // Cartesian product of matching groups over the window.
                let mut combo = vec![0usize; len];
                'outer: loop {
                    let cond: CondKey = (0..len)
                        .map(|i| (matches[base + i][combo[i]], seg[base + i].action))
                        .collect();
                    *support.entry(cond.clone()).or_insert(0) += 1;
                    for c in &pool {
                        *hits.entry((cond.clone(), *c)).or_insert(0) += 1;
                    }
                    // advance the product counter
                    for i in (0..len).rev() {
                        combo[i] += 1;
                        if combo[i] < matches[base + i].len() {
                            break;
                        }
                        if i == 0 {
                            break 'outer;
                        }
                        combo[i] = 0;
                    }
                }
            }
        }
    }

    let mut rules: Vec<Rule> = Vec::new();
    for ((cond, consequent), &h) in &hits {
        let s = support[cond];
        if s < params.s_min {
            continue;
        }
        let confidence = h as f64 / s as f64;
        if confidence < params.theta_conf {
            continue;
        }
        rules.push(Rule {
            id: RuleId(0),
            condition: TemporalPattern { steps: cond.clone() },
            action: *cond.last().map(|(_, a)| a).expect("condition nonempty"),
            consequent: *consequent,
            support: s,
            hits: h,
            confidence,
            priority: 0.0,
            status: RuleStatus::Active,
            exceptions: Vec::new(),
        });
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
    Ok(rules)
}

/// A rule match against the current window, carrying its confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub rule: RuleId,
    pub group: SignalGroup,
    pub confidence: f64,
}

fn condition_matches(
    pattern: &TemporalPattern,
    tail: &[HistoryStep],
    frame: &SignalFrame,
    action: ActionId,
) -> bool {
    let (last, earlier) = pattern.steps.split_last().expect("pattern nonempty");
    if last.1 != action || !last.0.set().is_subset(&frame.active) {
        return false;
    }
    if earlier.len() > tail.len() {
        return false;
    }
    let offset = tail.len() - earlier.len();
    earlier.iter().enumerate().all(|(i, (g, a))| {
        let step = &tail[offset + i];
        step.action == *a && g.set().is_subset(&step.frame.active)
    })
}

fn exception_active(rule: &Rule, frame: &SignalFrame, x_min: u32) -> bool {
    rule.exceptions
        .iter()
        .any(|e| e.misses >= x_min && e.context.set().is_subset(&frame.active))
}

/// All matching Active rules for `action` against the current frame and the
/// preceding completed steps, with exception-suppressed rules removed.
/// Sorted confidence descending with deterministic tie-breaks.
pub fn predict_detailed(
    rules: &[Rule],
    tail: &[HistoryStep],
    frame: &SignalFrame,
    action: ActionId,
    x_min: u32,
) -> Vec<Prediction> {
    let mut out: Vec<Prediction> = rules
        .iter()
        .filter(|r| r.is_active())
        .filter(|r| condition_matches(&r.condition, tail, frame, action))
        .filter(|r| !exception_active(r, frame, x_min))
        .map(|r| Prediction { rule: r.id, group: r.consequent, confidence: r.confidence })
        .collect();
    out.sort_by(|a, b| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap()
            .then_with(|| a.group.cmp(&b.group))
            .then_with(|| a.rule.cmp(&b.rule))
    });
    out
}

/// The deduplicated prediction set: one entry per consequent group, at the
/// best available confidence.
pub fn predict(
    rules: &[Rule],
    tail: &[HistoryStep],
    frame: &SignalFrame,
    action: ActionId,
    x_min: u32,
) -> Vec<(SignalGroup, f64)> {
    let detailed = predict_detailed(rules, tail, frame, action, x_min);
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for p in detailed {
        if seen.insert(p.group) {
            out.push((p.group, p.confidence));
        }
    }
    out
}

/// Record the observed outcome of a fired rule. On a miss the co-active
/// surplus becomes (or reinforces) an exception context, and the rule is
/// quarantined once its confidence falls below the demotion threshold.
pub fn record_outcome(
    rule: &mut Rule,
    matched_frame: &SignalFrame,
    next_frame: &SignalFrame,
    params: &MinerParams,
) {
    rule.support += 1;
    if rule.consequent.set().is_subset(&next_frame.active) {
        rule.hits += 1;
    } else {
        let surplus = matched_frame
            .active
            .difference(rule.condition.final_group().set());
        if let Ok(context) = SignalGroup::new(surplus) {
            match rule.exceptions.iter_mut().find(|e| e.context == context) {
                Some(e) => e.misses += 1,
                None => rule.exceptions.push(ExceptionRecord { context, misses: 1 }),
            }
        }
    }
    rule.recompute_confidence();
    rule.status = if rule.confidence < params.theta_demote {
        RuleStatus::Quarantined
    } else {
        RuleStatus::Active
    };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ObjectId(pub u32);

/// An external object, defined in reverse by the validated predictive
/// relations its signal group participates in.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectRecord {
    pub id: ObjectId,
    pub defining_group: SignalGroup,
    pub relations: Vec<RuleId>,
    pub label: Option<SignalId>,
}

/// The registry of objects defined by the current Active rule set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ObjectRegistry {
    pub objects: Vec<ObjectRecord>,
    /// Signals stripped from defining groups (labels plus the recall flag).
    pub stripped: SignalSet,
}

impl ObjectRegistry {
    pub fn by_group(&self, g: &SignalGroup) -> Option<&ObjectRecord> {
        self.objects.iter().find(|o| &o.defining_group == g)
    }

    pub fn by_id(&self, id: ObjectId) -> Option<&ObjectRecord> {
        self.objects.get(id.0 as usize)
    }

    pub fn by_label(&self, label: SignalId) -> Option<&ObjectRecord> {
        self.objects.iter().find(|o| o.label == Some(label))
    }

    /// Project a raw rule group onto object identity space.
    pub fn strip(&self, set: &SignalSet) -> SignalSet {
        set.difference(&self.stripped)
    }

    pub fn object_of(&self, raw: &SignalGroup) -> Option<&ObjectRecord> {
        SignalGroup::new(self.strip(raw.set()))
            .ok()
            .and_then(|g| self.by_group(&g))
    }
}

/// Build the object registry from the Active rules: one record per distinct
/// condition or consequent group (label and recall-flag signals stripped),
/// with a label attached when a label-channel signal tracks the group
/// reliably and unambiguously.
pub fn define_objects(
    rules: &[Rule],
    label_channel: Option<&Channel>,
    recall_flag: SignalId,
    history: &History,
    s_min: u32,
) -> ObjectRegistry {
    let mut stripped = SignalSet::singleton(recall_flag);
    if let Some(c) = label_channel {
        stripped = stripped.union(&c.members);
    }

    let mut relations: BTreeMap<SignalGroup, BTreeSet<RuleId>> = BTreeMap::new();
    for r in rules.iter().filter(|r| r.is_active()) {
        let mut touch = |raw: &SignalGroup| {
            if let Ok(g) = SignalGroup::new(raw.set().difference(&stripped)) {
                relations.entry(g).or_default().insert(r.id);
            }
        };
        for (g, _) in &r.condition.steps {
            touch(g);
        }
        touch(&r.consequent);
    }

    // Label statistics over external frames only.
    let ext_frames: Vec<&SignalFrame> = history
        .segments
        .iter()
        .flatten()
        .map(|s| &s.frame)
        .filter(|f| !f.is_recall())
        .collect();
    let label_signals: Vec<SignalId> =
        label_channel.map(|c| c.members.iter().collect()).unwrap_or_default();

    // For each label: the set of groups it reliably marks (co-occurs
    // >= s_min times, never fires without the group). The label attaches to
    // the unique maximal such group, if any.
    let mut label_of: BTreeMap<SignalGroup, SignalId> = BTreeMap::new();
    for &lab in &label_signals {
        let mut eligible: Vec<SignalGroup> = Vec::new();
        for g in relations.keys() {
            let mut with = 0u32;
            let mut without = 0u32;
            for f in &ext_frames {
                if f.active.contains(lab) {
                    if g.set().is_subset(&f.active) {
                        with += 1;
                    } else {
                        without += 1;
                    }
                }
            }
            if with >= s_min && without == 0 {
                eligible.push(*g);
            }
        }
        let maximal: Vec<SignalGroup> = eligible
            .iter()
            .filter(|g| !eligible.iter().any(|h| h != *g && g.set().is_subset(h.set())))
            .copied()
            .collect();
        if let [unique] = maximal.as_slice() {
            label_of.entry(*unique).or_insert(lab);
        }
    }

    let objects = relations
        .iter()
        .enumerate()
        .map(|(i, (g, rels))| ObjectRecord {
            id: ObjectId(i as u32),
            defining_group: *g,
            relations: rels.iter().copied().collect(),
            label: label_of.get(g).copied(),
        })
        .collect();
    ObjectRegistry { objects, stripped }
}
