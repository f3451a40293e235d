//! Brute-force equivalence oracle for the rule miner: candidates and rules
//! are recomputed straight from their definitions (powerset lattice walk,
//! global enumeration of condition windows, direct support/hit counting)
//! and compared field-for-field against the production miner on seeded
//! random histories.

mod common;

use std::time::Instant;

#[test]
fn mined_rules_equal_exhaustive_enumeration() {
    let start = Instant::now();
    common::run_oracle_sweep();
    assert!(start.elapsed().as_secs() < 60, "oracle sweep exceeded budget");
}
