//! Experiment harness: scenario runs, deterministic metrics files, the
//! probe REPL, and the criterion pipeline with its permuted twin runs.
//! Everything written to disk is byte-stable under a fixed seed.

use std::collections::BTreeSet;
use std::fs;
use std::io::BufRead;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{Agent, AgentConfig, AgentError};
use crate::explorer::TaskOutcome;
use crate::introspect::{
    answer_probe, evaluate_criterion, probe_transcript, standard_probe_suite,
    AgentStores, CriterionReport, IntrospectError, ProbeQuery,
};
use crate::miner::MinerError;
use crate::signal::SignalGroup;
use crate::world::{load_scenario, ScenarioParams, World, WorldError};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SIGNALROOM_OUT";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("scenario error: {0}")]
    Scenario(#[from] WorldError),
    #[error("agent error: {0}")]
    Agent(AgentError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("configuration error: {0}")]
    Config(String),
    #[error("probe stream contained faults")]
    ProbeFaults,
    #[error("criterion failed: {0}")]
    CriterionFailed(String),
}

impl From<AgentError> for HarnessError {
    fn from(e: AgentError) -> Self {
        HarnessError::Agent(e)
    }
}

impl HarnessError {
    /// Stable process exit codes, documented in the CLI help.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::CriterionFailed(_) => 1,
            HarnessError::Scenario(_) => 2,
            HarnessError::Io { .. } => 3,
            HarnessError::ProbeFaults => 4,
            HarnessError::Config(_) => 5,
            HarnessError::Agent(_) => 6,
        }
    }
}

/// One run's configuration: scenario, seed, budget, parameter overrides,
/// ablation switches, output directory.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub scenario: PathBuf,
    pub seed: Option<u64>,
    pub ticks: Option<u64>,
    pub overrides: ScenarioParams,
    pub no_recall: bool,
    pub corrupt_episodes: bool,
    pub out_dir: PathBuf,
}

impl RunConfig {
    pub fn new(scenario: impl Into<PathBuf>, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            scenario: scenario.into(),
            seed: None,
            ticks: None,
            overrides: ScenarioParams::default(),
            no_recall: false,
            corrupt_episodes: false,
            out_dir: out_dir.into(),
        }
    }
}

/// One frame of the per-tick log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FrameRecord {
    pub segment: usize,
    pub tick: u64,
    pub active: Vec<u16>,
    pub recall: Vec<u16>,
    pub action: String,
}

/// Everything a run emits, serialized deterministically.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub seed: u64,
    pub frames: Vec<FrameRecord>,
    pub rule_count: usize,
    pub object_count: usize,
    pub episode_count: usize,
    pub recall_object_count: usize,
    pub task_outcomes: Vec<TaskOutcome>,
    pub criterion: Option<CriterionReport>,
}

fn load_world(config: &RunConfig) -> Result<World, HarnessError> {
    let text = fs::read_to_string(&config.scenario).map_err(|source| HarnessError::Io {
        path: config.scenario.clone(),
        source,
    })?;
    let mut world = load_scenario(&text)?;
    if let Some(seed) = config.seed {
        world.seed = seed;
    }
    Ok(world)
}

fn agent_config(world: &World, config: &RunConfig) -> AgentConfig {
    let mut c = AgentConfig::for_world(world);
    let o = &config.overrides;
    if let Some(v) = o.w {
        c.params.w = v;
    }
    if let Some(v) = o.g {
        c.params.g = v;
    }
    if let Some(v) = o.theta_conf {
        c.params.theta_conf = v;
    }
    if let Some(v) = o.theta_demote {
        c.params.theta_demote = v;
    }
    if let Some(v) = o.s_min {
        c.params.s_min = v;
    }
    if let Some(v) = o.x_min {
        c.params.x_min = v;
    }
    if let Some(v) = o.gamma {
        c.gamma = v;
    }
    if o.budget.is_some() {
        c.budget = o.budget;
    }
    c.no_recall = config.no_recall;
    c.corrupt_episodes = config.corrupt_episodes;
    c.tick_budget = config.ticks;
    c
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let io = |source| HarnessError::Io { path: path.to_path_buf(), source };
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), HarnessError> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).expect("serializable");
        buf.push(b'\n');
    }
    write_atomic(path, &buf)
}

fn frame_log(agent: &Agent) -> Vec<FrameRecord> {
    let mut out = Vec::new();
    for (i, seg) in agent.history.segments.iter().enumerate() {
        for step in seg {
            out.push(FrameRecord {
                segment: i,
                tick: step.frame.tick,
                active: step.frame.active.indices(),
                recall: step.frame.recall_set().indices(),
                action: agent.world.actions.name(step.action),
            });
        }
    }
    out
}

/// Execute the closed loop for one scenario and write the metrics bundle:
/// frames, rules, priorities, episodes, objects, stores, name audit table
/// and a summary. All files are written atomically and byte-deterministic.
pub fn cmd_run(config: &RunConfig) -> Result<RunMetrics, HarnessError> {
    let world = load_world(config)?;
    let scenario_name = config
        .scenario
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let seed = world.seed;
    let ac = agent_config(&world, config);

    let no_experience = config.ticks == Some(0);
    let (mut agent, stores) = if no_experience {
        let agent = Agent::new(world, ac);
        let stores = agent.stores();
        (agent, stores)
    } else {
        Agent::run_full(world, ac)?
    };
    let task_outcomes = if no_experience { Vec::new() } else { agent.run_tasks() };

    let metrics = RunMetrics {
        scenario: scenario_name,
        seed,
        frames: frame_log(&agent),
        rule_count: agent.rules.len(),
        object_count: agent.registry.objects.len(),
        episode_count: agent.episodes.len(),
        recall_object_count: stores.recall_objects.len(),
        task_outcomes,
        criterion: None,
    };

    write_metrics(&config.out_dir, &agent, &stores, &metrics)?;
    Ok(metrics)
}

fn write_metrics(
    dir: &Path,
    agent: &Agent,
    stores: &AgentStores,
    metrics: &RunMetrics,
) -> Result<(), HarnessError> {
    fs::create_dir_all(dir).map_err(|source| HarnessError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_jsonl(&dir.join("frames.jsonl"), &metrics.frames)?;
    write_jsonl(&dir.join("rules.jsonl"), &agent.rules)?;
    let priorities: Vec<_> = agent
        .priorities
        .values
        .iter()
        .map(|(g, p)| serde_json::json!({ "group": g, "priority": p }))
        .collect();
    write_jsonl(&dir.join("priorities.jsonl"), &priorities)?;
    write_jsonl(&dir.join("episodes.jsonl"), &agent.episodes.episodes)?;
    write_jsonl(&dir.join("objects.jsonl"), &agent.registry.objects)?;
    write_atomic(
        &dir.join("stores.json"),
        serde_json::to_string_pretty(stores).expect("serializable").as_bytes(),
    )?;
    write_atomic(
        &dir.join("names.json"),
        serde_json::to_string_pretty(&agent.world.name_table())
            .expect("serializable")
            .as_bytes(),
    )?;
    write_atomic(
        &dir.join("summary.json"),
        serde_json::to_string_pretty(metrics).expect("serializable").as_bytes(),
    )?;
    Ok(())
}

/// Train and mine only; dump the rule set. The `mine` subcommand.
pub fn cmd_mine(config: &RunConfig) -> Result<usize, HarnessError> {
    let world = load_world(config)?;
    let ac = agent_config(&world, config);
    let mut agent = Agent::new(world, ac);
    agent.train()?;
    match agent.mine() {
        Ok(()) => {}
        Err(AgentError::Miner(MinerError::HistoryTooShort)) => {}
        Err(e) => return Err(e.into()),
    }
    fs::create_dir_all(&config.out_dir).map_err(|source| HarnessError::Io {
        path: config.out_dir.clone(),
        source,
    })?;
    write_jsonl(&config.out_dir.join("rules.jsonl"), &agent.rules)?;
    Ok(agent.rules.len())
}

/// Answer a JSON-lines query stream from a stores file. One answer line per
/// query line; malformed queries become per-line fault records. Errors with
/// [`HarnessError::ProbeFaults`] if any line faulted.
pub fn cmd_probe(
    stores_path: &Path,
    input: impl BufRead,
    mut output: impl std::io::Write,
) -> Result<(), HarnessError> {
    let text = fs::read_to_string(stores_path).map_err(|source| HarnessError::Io {
        path: stores_path.to_path_buf(),
        source,
    })?;
    let stores: AgentStores = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Config(format!("stores file: {e}")))?;

    let mut faults = false;
    for line in input.lines() {
        let line = line.map_err(|source| HarnessError::Io {
            path: stores_path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record = match serde_json::from_str::<ProbeQuery>(&line) {
            Ok(q) => {
                let a = answer_probe(&stores, &q);
                faults |= a.is_fault();
                serde_json::json!({ "q": q, "a": a })
            }
            Err(e) => {
                faults = true;
                serde_json::json!({ "error": format!("malformed query: {e}") })
            }
        };
        writeln!(output, "{record}").map_err(|source| HarnessError::Io {
            path: stores_path.to_path_buf(),
            source,
        })?;
    }
    if faults {
        Err(HarnessError::ProbeFaults)
    } else {
        Ok(())
    }
}

/// Channel-preserving signal permutations that fix the label channel and
/// the recall flag, rejection-sampled so the images of `probe_groups` are
/// pairwise distinct across the returned set (and distinct from identity
/// when possible).
pub fn label_fixing_permutations(
    world: &World,
    count: usize,
    seed: u64,
    probe_groups: &[SignalGroup],
) -> Result<Vec<Vec<u16>>, HarnessError> {
    if count == 0 {
        return Err(HarnessError::Config(
            "permutation count 0: ineffability untestable".into(),
        ));
    }
    let label_members = world
        .label_channel
        .map(|c| world.channels[c.0 as usize].members)
        .unwrap_or_default();
    let flag = world.recall_flag();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perms: Vec<Vec<u16>> = Vec::new();
    let mut signatures: BTreeSet<Vec<Vec<u16>>> = BTreeSet::new();
    // identity's signature is reserved so twins genuinely move bits
    if probe_groups.is_empty() {
        signatures.insert(vec![(0..world.n_signals as u16).collect()]);
    } else {
        signatures.insert(
            probe_groups.iter().map(|g| g.set().indices()).collect(),
        );
    }

    let mut attempts = 0;
    while perms.len() < count {
        attempts += 1;
        if attempts > 10_000 {
            return Err(HarnessError::Config(format!(
                "could not find {count} permutations with distinct images; \
                 scenario channels leave too little room",
            )));
        }
        let mut perm: Vec<u16> = (0..world.n_signals as u16).collect();
        for channel in &world.channels {
            let movable: Vec<u16> = channel
                .members
                .iter()
                .map(|s| s.0)
                .filter(|&s| {
                    !label_members.contains(crate::signal::SignalId(s)) && s != flag.0
                })
                .collect();
            let mut image = movable.clone();
            image.shuffle(&mut rng);
            for (from, to) in movable.iter().zip(image.iter()) {
                perm[*from as usize] = *to;
            }
        }
        // With no probe groups (e.g. an ablated run) distinctness of the
        // images is vacuous; fall back to distinctness of the permutations
        // so the twins still differ.
        let signature: Vec<Vec<u16>> = if probe_groups.is_empty() {
            vec![perm.clone()]
        } else {
            probe_groups
                .iter()
                .map(|g| {
                    let mut v: Vec<u16> =
                        g.iter().map(|s| perm[s.index()]).collect();
                    v.sort_unstable();
                    v
                })
                .collect()
        };
        if signatures.insert(signature) {
            perms.push(perm);
        }
    }
    Ok(perms)
}

/// The criterion pipeline: run agent A, run >= `perm_count` permuted twins,
/// evaluate the four properties, write the report. Errors with
/// [`HarnessError::CriterionFailed`] when the verdict is negative.
pub fn cmd_criterion(
    config: &RunConfig,
    perm_count: usize,
) -> Result<CriterionReport, HarnessError> {
    let world = load_world(config)?;
    if world.label_channel.is_none() {
        return Err(HarnessError::Config(
            "scenario has no label channel; alignment is impossible".into(),
        ));
    }
    let ac = agent_config(&world, config);

    let run = |w: World| -> Result<AgentStores, HarnessError> {
        match Agent::run_full(w, ac.clone()) {
            Ok((_, stores)) => Ok(stores),
            Err(AgentError::Introspect(IntrospectError::IntegrityFault(k))) => {
                // Surface the fault as a failing report rather than an
                // execution error: the ablation controls depend on it.
                Err(HarnessError::CriterionFailed(format!(
                    "integrity fault: episode {} recall was not deterministic",
                    k.0
                )))
            }
            Err(e) => Err(e.into()),
        }
    };

    let a_stores = run(world.clone())?;

    let probe_groups: Vec<SignalGroup> =
        a_stores.recall_objects.iter().map(|q| q.defining_group).collect();
    let perms = label_fixing_permutations(&world, perm_count, world.seed, &probe_groups)?;

    let mut twins = Vec::new();
    for perm in &perms {
        let twin_world = world.permute_signals(perm);
        twins.push(run(twin_world)?);
    }

    let report = evaluate_criterion(&a_stores, &twins);

    fs::create_dir_all(&config.out_dir).map_err(|source| HarnessError::Io {
        path: config.out_dir.clone(),
        source,
    })?;
    write_atomic(
        &config.out_dir.join("criterion.json"),
        serde_json::to_string_pretty(&report).expect("serializable").as_bytes(),
    )?;
    let suite = standard_probe_suite(&a_stores);
    write_atomic(
        &config.out_dir.join("transcript_a.jsonl"),
        probe_transcript(&a_stores, &suite).as_bytes(),
    )?;

    if report.pass {
        Ok(report)
    } else {
        Err(HarnessError::CriterionFailed(report.reasons.join("; ")))
    }
}

/// Render a previous run's summary as a short human-readable report.
pub fn cmd_report(out_dir: &Path) -> Result<String, HarnessError> {
    let path = out_dir.join("summary.json");
    let text = fs::read_to_string(&path)
        .map_err(|source| HarnessError::Io { path: path.clone(), source })?;
    let metrics: RunMetrics = serde_json::from_str(&text)
        .map_err(|e| HarnessError::Config(format!("summary file: {e}")))?;
    let mut out = String::new();
    out.push_str(&format!("scenario:        {}\n", metrics.scenario));
    out.push_str(&format!("seed:            {}\n", metrics.seed));
    out.push_str(&format!("frames:          {}\n", metrics.frames.len()));
    out.push_str(&format!("rules:           {}\n", metrics.rule_count));
    out.push_str(&format!("objects:         {}\n", metrics.object_count));
    out.push_str(&format!("episodes:        {}\n", metrics.episode_count));
    out.push_str(&format!("recall objects:  {}\n", metrics.recall_object_count));
    for t in &metrics.task_outcomes {
        out.push_str(&format!(
            "task {}: {} in {} ticks ({} experiments)\n",
            t.name,
            if t.success { "success" } else { "failure" },
            t.ticks,
            t.experiments,
        ));
    }
    if let Some(c) = &metrics.criterion {
        out.push_str(&format!("criterion pass:  {}\n", c.pass));
    }
    Ok(out)
}
