//! Recall-object formation and the probe harness. Everything here answers
//! from the agent's own stores — rules, objects, episodes — never from the
//! world. Probe answers are deliberately signal-free: labels, action names,
//! channel names and sizes only, so two agents differing by an internal
//! signal permutation produce byte-identical transcripts.

use std::collections::BTreeMap;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::episode::EpisodeStore;
use crate::miner::{History, ObjectId, ObjectRecord, ObjectRegistry, Rule, RuleId};
use crate::signal::{
    ActionTable, Channel, ChannelId, EpisodeId, SignalGroup, SignalId, SignalSet,
};
use crate::world::NameTable;

#[derive(Debug, Error)]
pub enum IntrospectError {
    #[error("integrity fault: recall of episode {0:?} was not deterministic")]
    IntegrityFault(EpisodeId),
    #[error("query fault: {0}")]
    QueryFault(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RecallObjectId(pub u32);

/// The object defined by a deterministic recall rule: this artifact's
/// operationalization of a quale. `defining_group` always contains the
/// recall flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecallObject {
    pub id: RecallObjectId,
    pub source_episode: EpisodeId,
    pub defining_group: SignalGroup,
    pub referent: ObjectId,
    pub via_rule: RuleId,
}

/// Everything the introspector may consult. Deliberately holds no world
/// handle: probe answering is store-only by construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AgentStores {
    pub rules: Vec<Rule>,
    pub registry: ObjectRegistry,
    pub recall_objects: Vec<RecallObject>,
    pub channels: Vec<Channel>,
    pub label_channel: Option<ChannelId>,
    pub recall_flag: SignalId,
    pub action_names: Vec<String>,
    pub names: NameTable,
    pub episode_count: usize,
    /// Carried over from scenario load: the world declared an emission of
    /// the reserved flag, so irreducibility findings are suspect.
    pub malformed_world: bool,
}

impl AgentStores {
    pub fn strip(&self, set: &SignalSet) -> SignalSet {
        self.registry.strip(set)
    }

    fn label_name(&self, label: SignalId) -> String {
        self.names.signals[label.index()].clone()
    }

    /// Signal-free name of an external object: its label if one attached,
    /// otherwise an anonymous size-keyed handle.
    pub fn object_name(&self, o: &ObjectRecord) -> String {
        match o.label {
            Some(l) => self.label_name(l),
            None => format!("anon[{}]", o.defining_group.len()),
        }
    }

    /// Signal-free handle of a recall object: referent label plus ordinal
    /// among qualia sharing that referent (episode order).
    pub fn quale_handle(&self, q: &RecallObject) -> String {
        let referent_name = self
            .registry
            .by_id(q.referent)
            .map(|o| self.object_name(o))
            .unwrap_or_else(|| "unresolved".into());
        let ordinal = self
            .recall_objects
            .iter()
            .filter(|r| r.referent == q.referent && r.source_episode < q.source_episode)
            .count();
        format!("quale:{referent_name}:{ordinal}")
    }

    fn find_object(&self, name: &str) -> Option<&ObjectRecord> {
        self.registry.objects.iter().find(|o| self.object_name(o) == name)
    }

    fn find_quale(&self, handle: &str) -> Option<&RecallObject> {
        self.recall_objects.iter().find(|q| self.quale_handle(q) == handle)
    }

    fn action_name(&self, a: crate::signal::ActionId) -> String {
        ActionTable {
            names: self.action_names.clone(),
            kinds: vec![crate::signal::ActionKind::Motor; self.action_names.len()],
        }
        .name(a)
    }
}

/// Form one recall object per episode whose recall rule is Active at
/// confidence 1.0 with adequate support. The history is consulted for the
/// integrity check: every occurrence of `recall(k)` must have produced the
/// identical frame, whatever the confidence filter later did.
pub fn form_recall_objects(
    rules: &[Rule],
    episodes: &EpisodeStore,
    registry: &ObjectRegistry,
    history: &History,
    actions: &ActionTable,
    s_min: u32,
) -> Result<Vec<RecallObject>, IntrospectError> {
    let mut out = Vec::new();
    for episode in &episodes.episodes {
        let button = actions.recall_button(episode.id);
        // Integrity: all frames following a press of this button agree.
        let mut seen: Option<SignalSet> = None;
        let mut presses = 0u32;
        for seg in &history.segments {
            for t in 0..seg.len() {
                if seg[t].action != button || t + 1 >= seg.len() {
                    continue;
                }
                presses += 1;
                let got = &seg[t + 1].frame.active;
                match &seen {
                    None => seen = Some(*got),
                    Some(prev) if prev == got => {}
                    Some(_) => return Err(IntrospectError::IntegrityFault(episode.id)),
                }
            }
        }
        if presses < s_min {
            continue;
        }

        let recall_rule = rules
            .iter()
            .filter(|r| r.is_active() && r.condition.final_action() == button)
            .filter(|r| seen.as_ref().map_or(false, |s| r.consequent.set() == s))
            .max_by_key(|r| (r.support, std::cmp::Reverse(r.id)));
        let Some(rule) = recall_rule else { continue };
        if rule.confidence < 1.0 {
            return Err(IntrospectError::IntegrityFault(episode.id));
        }
        if rule.support < s_min {
            continue;
        }
        // Referent: the external object behind the decision this episode
        // recorded — resolved through the stored condition, which survives
        // re-mining unchanged (rule ids may not).
        let Some(referent) = registry.object_of(episode.trace.final_group()) else {
            continue;
        };
        out.push(RecallObject {
            id: RecallObjectId(out.len() as u32),
            source_episode: episode.id,
            defining_group: rule.consequent,
            referent: referent.id,
            via_rule: rule.id,
        });
    }
    Ok(out)
}

/// Aboutness, answered mechanically: the quale's referent.
pub fn check_intentionality(q: &RecallObject) -> ObjectId {
    q.referent
}

/// Split a quale's defining group along the channel partition. Nonempty
/// parts only; the recall flag appears under its own channel.
pub fn decompose_unity(
    q: &RecallObject,
    channels: &[Channel],
) -> Vec<(ChannelId, SignalGroup)> {
    channels
        .iter()
        .enumerate()
        .filter_map(|(i, c)| {
            crate::signal::group_project(&q.defining_group, c)
                .map(|g| (ChannelId(i as u16), g))
        })
        .collect()
}

/// True iff the recall flag is unreachable from purely external conditions:
/// no Active rule predicts a consequent containing R from R-free condition
/// groups without a recall action anywhere in the pattern.
pub fn check_irreducibility(
    rules: &[Rule],
    recall_flag: SignalId,
    actions: &ActionTable,
) -> bool {
    !rules.iter().any(|r| {
        r.is_active()
            && r.consequent.contains(recall_flag)
            && r.condition
                .steps
                .iter()
                .all(|(g, a)| !g.contains(recall_flag) && !actions.is_recall(*a))
    })
}

/// Same reachability question, asked without an [`ActionTable`]: the stores
/// carry only world-action names, so any action index at or past that count
/// is a recall button.
fn externally_definable(stores: &AgentStores) -> bool {
    stores.rules.iter().any(|r| {
        r.is_active()
            && r.consequent.contains(stores.recall_flag)
            && r.condition.steps.iter().all(|(g, a)| {
                !g.contains(stores.recall_flag) && a.index() < stores.action_names.len()
            })
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "query", rename_all = "snake_case")]
pub enum ProbeQuery {
    Relations { object: String },
    Referent { quale: String },
    Components { quale: String },
    DefinableExternally { name: String },
    ListObjects { kind: ObjectKind },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectKind {
    External,
    Recall,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "answer", rename_all = "snake_case")]
pub enum ProbeAnswer {
    Relations { tuples: Vec<(String, String, String)> },
    Referent { object: String },
    Components { parts: Vec<(String, usize)> },
    DefinableExternally { value: bool },
    Objects { names: Vec<String> },
    Fault { reason: String },
}

impl ProbeAnswer {
    pub fn is_fault(&self) -> bool {
        matches!(self, ProbeAnswer::Fault { .. })
    }
}

/// Answer one probe from the stores alone. Faults are answers, not errors,
/// so transcripts stay line-aligned with the query stream.
pub fn answer_probe(stores: &AgentStores, query: &ProbeQuery) -> ProbeAnswer {
    match query {
        ProbeQuery::Relations { object } => {
            let Some(rec) = stores.find_object(object) else {
                return fault(format!("unknown object '{object}'"));
            };
            let mut tuples = BTreeSet::new();
            for r in stores.rules.iter().filter(|r| r.is_active()) {
                let cond = stores.strip(r.condition.final_group().set());
                let cons = stores.strip(r.consequent.set());
                let target = rec.defining_group.set();
                if &cond != target && &cons != target {
                    continue;
                }
                let name_of = |s: &SignalSet| -> String {
                    SignalGroup::new(*s)
                        .ok()
                        .and_then(|g| stores.registry.by_group(&g))
                        .map(|o| stores.object_name(o))
                        .unwrap_or_else(|| format!("anon[{}]", s.len()))
                };
                tuples.insert((name_of(&cond), stores.action_name(r.action), name_of(&cons)));
            }
            ProbeAnswer::Relations { tuples: tuples.into_iter().collect() }
        }
        ProbeQuery::Referent { quale } => match stores.find_quale(quale) {
            Some(q) => {
                let id = check_intentionality(q);
                match stores.registry.by_id(id) {
                    Some(o) => ProbeAnswer::Referent { object: stores.object_name(o) },
                    None => fault(format!("dangling referent for '{quale}'")),
                }
            }
            None => fault(format!("unknown quale '{quale}'")),
        },
        ProbeQuery::Components { quale } => match stores.find_quale(quale) {
            Some(q) => {
                let parts = decompose_unity(q, &stores.channels)
                    .into_iter()
                    .map(|(c, g)| (stores.channels[c.0 as usize].name.clone(), g.len()))
                    .collect();
                ProbeAnswer::Components { parts }
            }
            None => fault(format!("unknown quale '{quale}'")),
        },
        ProbeQuery::DefinableExternally { name } => {
            if stores.find_object(name).is_some() {
                // External objects are defined by external-only rules.
                ProbeAnswer::DefinableExternally { value: true }
            } else if stores.find_quale(name).is_some() {
                ProbeAnswer::DefinableExternally { value: externally_definable(stores) }
            } else {
                fault(format!("unknown name '{name}'"))
            }
        }
        ProbeQuery::ListObjects { kind } => {
            let mut names: Vec<String> = match kind {
                ObjectKind::External => {
                    stores.registry.objects.iter().map(|o| stores.object_name(o)).collect()
                }
                ObjectKind::Recall => {
                    stores.recall_objects.iter().map(|q| stores.quale_handle(q)).collect()
                }
            };
            names.sort();
            names.dedup();
            ProbeAnswer::Objects { names }
        }
    }
}

fn fault(reason: String) -> ProbeAnswer {
    ProbeAnswer::Fault { reason }
}

/// The canonical probe suite over a store: generated purely from
/// signal-free handles, so permuted twins generate the identical suite.
/// Only labeled objects (and qualia whose referent is labeled) are
/// addressed by name — anonymous size-keyed handles are ambiguous, so they
/// appear solely as opaque endpoints inside answers.
pub fn standard_probe_suite(stores: &AgentStores) -> Vec<ProbeQuery> {
    let mut queries = vec![
        ProbeQuery::ListObjects { kind: ObjectKind::External },
        ProbeQuery::ListObjects { kind: ObjectKind::Recall },
    ];
    let mut names: Vec<String> = stores
        .registry
        .objects
        .iter()
        .filter(|o| o.label.is_some())
        .map(|o| stores.object_name(o))
        .collect();
    names.sort();
    names.dedup();
    for n in names {
        queries.push(ProbeQuery::Relations { object: n.clone() });
        queries.push(ProbeQuery::DefinableExternally { name: n });
    }
    let mut handles: Vec<String> = stores
        .recall_objects
        .iter()
        .filter(|q| {
            stores
                .registry
                .by_id(q.referent)
                .map_or(false, |o| o.label.is_some())
        })
        .map(|q| stores.quale_handle(q))
        .collect();
    handles.sort();
    handles.dedup();
    for h in handles {
        queries.push(ProbeQuery::Referent { quale: h.clone() });
        queries.push(ProbeQuery::Components { quale: h.clone() });
        queries.push(ProbeQuery::DefinableExternally { name: h });
    }
    queries
}

/// Serialize a full question/answer session as JSON lines: the artifact of
/// record for ineffability comparisons.
pub fn probe_transcript(stores: &AgentStores, queries: &[ProbeQuery]) -> String {
    let mut out = String::new();
    for q in queries {
        let a = answer_probe(stores, q);
        let line = serde_json::json!({ "q": q, "a": a });
        out.push_str(&serde_json::to_string(&line).expect("serializable"));
        out.push('\n');
    }
    out
}

/// The alignment verdict between an agent and its internally permuted twin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// label → (object id in A, object id in B)
    pub object_map: BTreeMap<String, (ObjectId, ObjectId)>,
    pub relation_isomorphic: bool,
    pub recall_internal_identifiable: bool,
}

/// Label-projected relation edges of one store: (name, action, name)
/// triples over labeled-object endpoints, all signal-free.
fn relation_graph(stores: &AgentStores) -> BTreeSet<(String, String, String)> {
    let mut edges = BTreeSet::new();
    for r in stores.rules.iter().filter(|r| r.is_active()) {
        let ends: Vec<Option<String>> = [r.condition.final_group(), &r.consequent]
            .iter()
            .map(|g| {
                SignalGroup::new(stores.strip(g.set()))
                    .ok()
                    .and_then(|g| stores.registry.by_group(&g))
                    .filter(|o| o.label.is_some())
                    .map(|o| stores.object_name(o))
            })
            .collect();
        if let (Some(from), Some(to)) = (&ends[0], &ends[1]) {
            edges.insert((from.clone(), stores.action_name(r.action), to.clone()));
        }
    }
    edges
}

/// Compare two runs that differ (at most) by an internal signal permutation
/// fixing labels and the recall flag. Shared labels align the objects; the
/// label-level relation graphs must coincide; and the runs' internal recall
/// compositions are only "identifiable" from outside if they are literally
/// the same bits.
pub fn alignment_test(a: &AgentStores, b: &AgentStores) -> AlignmentReport {
    let mut object_map = BTreeMap::new();
    for oa in &a.registry.objects {
        let Some(la) = oa.label else { continue };
        let name = a.label_name(la);
        if let Some(ob) = b.registry.objects.iter().find(|o| {
            o.label.map(|lb| b.label_name(lb)) == Some(name.clone())
        }) {
            object_map.insert(name, (oa.id, ob.id));
        }
    }
    let relation_isomorphic = relation_graph(a) == relation_graph(b);
    let sets_a: BTreeSet<SignalGroup> =
        a.recall_objects.iter().map(|q| q.defining_group).collect();
    let sets_b: BTreeSet<SignalGroup> =
        b.recall_objects.iter().map(|q| q.defining_group).collect();
    let recall_internal_identifiable = !sets_a.is_empty() && sets_a == sets_b;
    AlignmentReport { object_map, relation_isomorphic, recall_internal_identifiable }
}

/// The four property verdicts plus the overall pass, with human-readable
/// reasons for every failure.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CriterionReport {
    pub ineffability: bool,
    pub irreducibility: bool,
    pub intentionality: bool,
    pub unity: bool,
    pub pass: bool,
    pub reasons: Vec<String>,
}

/// Evaluate the sufficiency criterion from agent A's stores plus its
/// permuted twins. Every verdict is computed from probe answers and
/// transcripts — the third-party stance — not by opening the boxes.
pub fn evaluate_criterion(a: &AgentStores, twins: &[AgentStores]) -> CriterionReport {
    let mut reasons = Vec::new();

    if a.recall_objects.is_empty() {
        reasons.push("no recall-objects".to_string());
    }

    // Intentionality: every quale's referent resolves to a known object.
    let mut intentionality = !a.recall_objects.is_empty();
    for q in &a.recall_objects {
        if a.registry.by_id(check_intentionality(q)).is_none() {
            intentionality = false;
            reasons.push(format!("unresolvable referent for {}", a.quale_handle(q)));
        }
    }

    // Unity: components decompose completely for every quale.
    let mut unity = !a.recall_objects.is_empty();
    for q in &a.recall_objects {
        let parts = decompose_unity(q, &a.channels);
        let whole = parts
            .iter()
            .fold(SignalSet::new(), |acc, (_, g)| acc.union(g.set()));
        let subsets_ok = parts
            .iter()
            .all(|(_, g)| g.set().is_subset(q.defining_group.set()));
        if whole != *q.defining_group.set() || !subsets_ok {
            unity = false;
            reasons.push(format!("incomplete decomposition for {}", a.quale_handle(q)));
        }
    }

    // Irreducibility: the probe must deny external definability, and the
    // world must not be flagged malformed.
    let mut irreducibility = !a.recall_objects.is_empty();
    if a.malformed_world {
        irreducibility = false;
        reasons.push("scenario emits the reserved recall flag externally".to_string());
    }
    for q in &a.recall_objects {
        let ans = answer_probe(
            a,
            &ProbeQuery::DefinableExternally { name: a.quale_handle(q) },
        );
        if ans != (ProbeAnswer::DefinableExternally { value: false }) {
            irreducibility = false;
            reasons.push(format!("{} is externally definable", a.quale_handle(q)));
            break;
        }
    }

    // Ineffability: transcript invariance plus non-recoverable composition
    // across every permuted twin.
    let mut ineffability = !twins.is_empty() && !a.recall_objects.is_empty();
    if twins.is_empty() {
        reasons.push("no permuted twin runs supplied".to_string());
    }
    let suite = standard_probe_suite(a);
    let transcript_a = probe_transcript(a, &suite);
    for (i, b) in twins.iter().enumerate() {
        let report = alignment_test(a, b);
        let transcript_b = probe_transcript(b, &suite);
        if !report.relation_isomorphic {
            ineffability = false;
            reasons.push(format!("twin {i}: relation graphs differ"));
        }
        if transcript_a != transcript_b {
            ineffability = false;
            reasons.push(format!("twin {i}: probe transcripts differ"));
        }
        if report.recall_internal_identifiable {
            ineffability = false;
            reasons.push(format!("twin {i}: internal composition recoverable from reports"));
        }
    }

    let pass = ineffability && irreducibility && intentionality && unity;
    CriterionReport { ineffability, irreducibility, intentionality, unity, pass, reasons }
}
