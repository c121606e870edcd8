use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use super::ast::{stmt_mscalls, Ast, Stmt};

/// Concurrent-branch sites in a program: mswitch calls and fused ifs.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BranchStats {
    pub sites: usize,
    /// fan-out -> number of sites
    pub histogram: BTreeMap<usize, usize>,
    pub max_fan_out: usize,
    pub mean_fan_out: f64,
}

impl BranchStats {
    fn add(&mut self, fan: usize) {
        self.sites += 1;
        *self.histogram.entry(fan).or_default() += 1;
    }

    fn finish(mut self) -> Self {
        self.max_fan_out = self.histogram.keys().copied().max().unwrap_or(0);
        let total: usize = self.histogram.iter().map(|(f, n)| f * n).sum();
        self.mean_fan_out = if self.sites == 0 { 0.0 } else { total as f64 / self.sites as f64 };
        self
    }
}

impl fmt::Display for BranchStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sites={}", self.sites)?;
        writeln!(f, "max_fan_out={}", self.max_fan_out)?;
        writeln!(f, "mean_fan_out={:.2}", self.mean_fan_out)?;
        let hist: Vec<String> = self.histogram.iter().map(|(k, v)| format!("{k}:{v}")).collect();
        writeln!(f, "histogram={}", hist.join(","))
    }
}

/// Counts every mswitch call and every `if` whose condition is an `and`
/// chain of at least `threshold` conjuncts.
pub fn analyze_branching_with(ast: &Ast, threshold: usize) -> BranchStats {
    let mut stats = BranchStats::default();
    let mut visit = |s: &Stmt| {
        for call in stmt_mscalls(s) {
            stats.add(call.targets.len());
        }
        if let Stmt::If { cond, .. } = s {
            let n = cond.conjuncts().len();
            if n >= threshold.max(2) {
                stats.add(n);
            }
        }
    };
    for s in ast.body.iter().chain(ast.procs.iter().flat_map(|p| p.body.iter())) {
        s.walk(&mut visit);
    }
    stats.finish()
}

pub fn analyze_branching(ast: &Ast) -> BranchStats {
    analyze_branching_with(ast, super::DEFAULT_FUSE_THRESHOLD)
}
