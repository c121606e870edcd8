use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::isa::InstrClass;

/// Threads started by one switch event. All of them share `cycle`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpawnRecord {
    pub cycle: u64,
    pub switch: usize,
    pub threads: Vec<usize>,
    /// True when the event was a bypass (FALSE) rather than a firing.
    pub bypass: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub instructions: u64,
    pub comparisons: u64,
    pub jumps: u64,
    pub ms_ops: u64,
    pub polls: u64,
    pub other: u64,
    pub cycles: u64,
    /// Distinct cycles in which at least one comparison executed.
    pub comparison_cycles: u64,
    pub first_comparison_cycle: Option<u64>,
    pub last_comparison_cycle: Option<u64>,
    pub threads: u64,
    pub firings: u64,
    pub bypasses: u64,
    /// Firings that started two or more threads at once.
    pub parallel_phases: u64,
    pub max_parallel: u64,
    pub spawns: Vec<SpawnRecord>,
}

impl RunMetrics {
    pub(crate) fn count(&mut self, class: InstrClass) {
        self.instructions += 1;
        match class {
            InstrClass::Comparison => self.comparisons += 1,
            InstrClass::Jump => self.jumps += 1,
            InstrClass::MsOp => self.ms_ops += 1,
            InstrClass::Poll => self.polls += 1,
            InstrClass::Other => self.other += 1,
        }
    }

    pub(crate) fn note_comparison_cycle(&mut self, cycle: u64) {
        if self.last_comparison_cycle != Some(cycle) {
            self.comparison_cycles += 1;
        }
        self.first_comparison_cycle.get_or_insert(cycle);
        self.last_comparison_cycle = Some(cycle);
    }

    /// Spawn cycle of every thread started by a switch, in start order.
    pub fn spawn_timestamps(&self) -> Vec<u64> {
        self.spawns.iter().flat_map(|s| s.threads.iter().map(move |_| s.cycle)).collect()
    }

    /// The first firing that started exactly `n` threads.
    pub fn fan_out_of(&self, n: usize) -> Option<&SpawnRecord> {
        self.spawns.iter().find(|s| !s.bypass && s.threads.len() == n)
    }

    pub fn to_map(&self) -> BTreeMap<&'static str, String> {
        let opt = |v: Option<u64>| v.map(|c| c.to_string()).unwrap_or_else(|| "-".into());
        BTreeMap::from([
            ("instructions", self.instructions.to_string()),
            ("comparisons", self.comparisons.to_string()),
            ("jumps", self.jumps.to_string()),
            ("ms_ops", self.ms_ops.to_string()),
            ("polls", self.polls.to_string()),
            ("other", self.other.to_string()),
            ("cycles", self.cycles.to_string()),
            ("comparison_cycles", self.comparison_cycles.to_string()),
            ("first_comparison_cycle", opt(self.first_comparison_cycle)),
            ("last_comparison_cycle", opt(self.last_comparison_cycle)),
            ("threads", self.threads.to_string()),
            ("firings", self.firings.to_string()),
            ("bypasses", self.bypasses.to_string()),
            ("parallel_phases", self.parallel_phases.to_string()),
            ("max_parallel", self.max_parallel.to_string()),
        ])
    }

    /// Flat `key=value` block, one pair per line, keys sorted.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.to_map() {
            writeln!(out, "{k}={v}").unwrap();
        }
        let stamps: Vec<String> =
            self.spawns.iter().filter(|s| !s.bypass).map(|s| format!("{}x{}", s.cycle, s.threads.len())).collect();
        writeln!(out, "spawns={}", stamps.join(",")).unwrap();
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}
