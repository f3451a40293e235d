//! signalroom: a deterministic agent/world simulation framework.
//!
//! An agent embedded in a discrete signal world learns predictive rules over
//! co-active signal groups (prediction), resolves ambiguity through
//! mode-switching experiments (exploration), propagates valence-derived
//! priority through rule chains (priority), and replays indexed episodes of
//! its own past decisions (recall). Automated probes then interrogate the
//! resulting structures from the outside.

pub mod agent;
pub mod episode;
pub mod explorer;
pub mod harness;
pub mod introspect;
pub mod miner;
pub mod priority;
pub mod signal;
pub mod world;
