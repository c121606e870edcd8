//! Mapping of logical switches onto the physical bank.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::gate::{FireEvent, GateKind, MultiSwitch};
use crate::shape::MachineShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Policy {
    BestFit,
    Gang,
    Page,
}

impl Policy {
    /// This policy and every less permissive one, tried in order.
    pub fn ladder(self) -> Vec<Policy> {
        [Policy::BestFit, Policy::Gang, Policy::Page].into_iter().filter(|p| *p <= self).collect()
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Policy::BestFit => "best-fit",
            Policy::Gang => "gang",
            Policy::Page => "page",
        })
    }
}

impl FromStr for Policy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "best-fit" | "bestfit" => Ok(Policy::BestFit),
            "gang" => Ok(Policy::Gang),
            "page" => Ok(Policy::Page),
            _ => Err(format!("unknown policy `{s}` (expected best-fit, gang or page)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Role {
    /// Arity 1, one target line per started thread.
    Spawner,
    /// Arity equal to its line count; may be ganged.
    Joiner,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Demand {
    pub name: String,
    pub lines: usize,
    pub role: Role,
    /// Half-open range of program points during which the switch is live.
    pub lifetime: Option<(usize, usize)>,
}

impl Demand {
    pub fn new(name: impl Into<String>, lines: usize) -> Self {
        Demand { name: name.into(), lines, role: Role::Joiner, lifetime: None }
    }

    pub fn spawner(name: impl Into<String>, lines: usize) -> Self {
        Demand { role: Role::Spawner, ..Demand::new(name, lines) }
    }

    pub fn with_lifetime(mut self, start: usize, end: usize) -> Self {
        self.lifetime = Some((start, end.max(start + 1)));
        self
    }
}

/// A joiner split over two levels: `direct` inputs land on the top switch,
/// the rest on sub-joins whose firing is relayed into the top switch on
/// lines `direct..direct + subs.len()`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GangPlan {
    pub top: usize,
    pub direct: usize,
    /// (physical switch, arity)
    pub subs: Vec<(usize, usize)>,
}

impl GangPlan {
    pub fn arity(&self) -> usize {
        self.direct + self.subs.iter().map(|s| s.1).sum::<usize>()
    }

    pub fn top_arity(&self) -> usize {
        self.direct + self.subs.len()
    }

    /// Physical (switch, line) for a logical input line.
    pub fn place(&self, line: usize) -> Option<(usize, usize)> {
        if line < self.direct {
            return Some((self.top, line));
        }
        let mut base = self.direct;
        for &(sw, n) in &self.subs {
            if line < base + n {
                return Some((sw, line - base));
            }
            base += n;
        }
        None
    }

    /// Fires the composed structure once on `inputs` using gate models.
    pub fn eval(&self, inputs: &[bool]) -> bool {
        assert_eq!(inputs.len(), self.arity(), "input width");
        let top_n = self.top_arity();
        let mut top = MultiSwitch::new(top_n.max(2), top_n, GateKind::And).expect("top shape");
        top.set_target(0, 1).expect("line 0");
        let mut base = self.direct;
        for (k, &(_, n)) in self.subs.iter().enumerate() {
            let mut sub = MultiSwitch::new(n.max(2), n, GateKind::And).expect("sub shape");
            sub.set_target(0, 1).expect("line 0");
            for i in 0..n {
                if inputs[base + i] {
                    sub.drive_input(i).expect("line");
                }
            }
            if matches!(sub.step(), FireEvent::Fired(_)) {
                top.drive_input(self.direct + k).expect("relay line");
            }
            base += n;
        }
        for (i, &b) in inputs[..self.direct].iter().enumerate() {
            if b {
                top.drive_input(i).expect("line");
            }
        }
        matches!(top.step(), FireEvent::Fired(_))
    }
}

/// Builds a gang plan for `n` inputs from candidate switches `(id, size)`.
pub fn plan_gang(n: usize, candidates: &[(usize, usize)]) -> Option<GangPlan> {
    let mut c = candidates.to_vec();
    c.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    if n < 2 || c.len() < 2 {
        return None;
    }
    let top = c[0];
    for m in 1..c.len() {
        if top.1 < m {
            break;
        }
        let subs = &c[1..=m];
        let direct = (top.1 - m).min(n - m);
        let cap: usize = subs.iter().map(|s| s.1).sum();
        let rest = n - direct;
        if rest > cap || rest < m {
            continue;
        }
        let mut arities = vec![1; m];
        let mut left = rest - m;
        for (a, s) in arities.iter_mut().zip(subs) {
            let add = left.min(s.1 - 1);
            *a += add;
            left -= add;
        }
        return Some(GangPlan { top: top.0, direct, subs: subs.iter().map(|s| s.0).zip(arities).collect() });
    }
    None
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum Placement {
    Single(usize),
    Gang(GangPlan),
}

impl Placement {
    /// The switch that fires: the only one, or the top of a gang.
    pub fn switch(&self) -> usize {
        match self {
            Placement::Single(s) => *s,
            Placement::Gang(g) => g.top,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Residency {
    Resident,
    /// Shares its physical switch with other logical switches over time.
    Paged,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Assignment {
    pub name: String,
    pub lines: usize,
    pub role: Role,
    pub lifetime: (usize, usize),
    pub placement: Placement,
    pub residency: Residency,
}

impl Assignment {
    /// Every (physical switch, line) the logical switch occupies.
    pub fn physical_lines(&self) -> Vec<(usize, usize)> {
        match &self.placement {
            Placement::Single(sw) => (0..self.lines.max(1)).map(|l| (*sw, l)).collect(),
            Placement::Gang(g) => {
                let mut v: Vec<_> = (0..g.top_arity()).map(|l| (g.top, l)).collect();
                for &(sw, n) in &g.subs {
                    v.extend((0..n).map(|l| (sw, l)));
                }
                v
            }
        }
    }

    pub fn switches(&self) -> Vec<usize> {
        match &self.placement {
            Placement::Single(sw) => vec![*sw],
            Placement::Gang(g) => std::iter::once(g.top).chain(g.subs.iter().map(|s| s.0)).collect(),
        }
    }

    pub fn primary(&self) -> usize {
        match &self.placement {
            Placement::Single(sw) => *sw,
            Placement::Gang(g) => g.top,
        }
    }

    fn overlaps(&self, other: &Assignment) -> bool {
        self.lifetime.0 < other.lifetime.1 && other.lifetime.0 < self.lifetime.1
    }
}

/// A physical switch handed from one logical switch to the next. The
/// outgoing configuration is dropped and the incoming one is loaded by the
/// reset-and-configure sequence the incoming switch already performs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PageEvent {
    pub switch: usize,
    pub point: usize,
    pub evicted: String,
    pub loaded: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AllocationTable {
    pub policy: Policy,
    pub sizes: Vec<usize>,
    /// One entry per demand, in demand order.
    pub entries: Vec<Assignment>,
    pub page_events: Vec<PageEvent>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("capacity error under {policy}: {msg}")]
pub struct CapacityError {
    pub policy: Policy,
    pub msg: String,
}

impl AllocationTable {
    pub fn get(&self, name: &str) -> Option<&Assignment> {
        self.entries.iter().find(|e| e.name == name)
    }

    /// Lines of `switch` never assigned to any logical switch.
    pub fn free_lines(&self, switch: usize) -> Vec<usize> {
        let used: std::collections::BTreeSet<usize> = self
            .entries
            .iter()
            .flat_map(|e| e.physical_lines())
            .filter(|&(sw, _)| sw == switch)
            .map(|(_, l)| l)
            .collect();
        (0..self.sizes.get(switch).copied().unwrap_or(0)).filter(|l| !used.contains(l)).collect()
    }

    /// Verifies that no physical line serves two live logical switches and
    /// that every placement fits its switch.
    pub fn check(&self) -> Result<(), String> {
        for e in &self.entries {
            for (sw, l) in e.physical_lines() {
                let size = *self.sizes.get(sw).ok_or_else(|| format!("{} placed on missing switch {sw}", e.name))?;
                if l >= size {
                    return Err(format!("{} uses line {l} of size-{size} switch {sw}", e.name));
                }
            }
        }
        for (i, a) in self.entries.iter().enumerate() {
            for b in &self.entries[i + 1..] {
                let shared = self.policy != Policy::Page || a.overlaps(b);
                if !shared {
                    continue;
                }
                let la = a.physical_lines();
                if let Some(x) = b.physical_lines().iter().find(|x| la.contains(x)) {
                    return Err(format!("{} and {} both hold switch {} line {}", a.name, b.name, x.0, x.1));
                }
            }
        }
        Ok(())
    }
}

impl fmt::Display for AllocationTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "policy={}", self.policy)?;
        for e in &self.entries {
            let place = match &e.placement {
                Placement::Single(sw) => format!("switch {sw}"),
                Placement::Gang(g) => {
                    let subs: Vec<String> = g.subs.iter().map(|(s, n)| format!("{s}/{n}")).collect();
                    format!("gang top {} ({} direct) subs {}", g.top, g.direct, subs.join(","))
                }
            };
            writeln!(
                f,
                "  {:<14} {:?} lines={} live=[{},{}) -> {place}{}",
                e.name,
                e.role,
                e.lines,
                e.lifetime.0,
                e.lifetime.1,
                if e.residency == Residency::Paged { " (paged)" } else { "" }
            )?;
        }
        for p in &self.page_events {
            writeln!(f, "  page switch {} at {}: {} -> {}", p.switch, p.point, p.evicted, p.loaded)?;
        }
        Ok(())
    }
}

/// Places every demand on the bank under one policy.
pub fn allocate(demands: &[Demand], shape: &MachineShape, policy: Policy) -> Result<AllocationTable, CapacityError> {
    let fail = |msg: String| CapacityError { policy, msg };
    if let Some(d) = demands.iter().find(|d| d.lines == 0) {
        return Err(fail(format!("{} has no lines", d.name)));
    }
    let lifetimes: Vec<(usize, usize)> =
        demands.iter().enumerate().map(|(i, d)| d.lifetime.unwrap_or((i, i + 1))).collect();
    let sizes = &shape.sizes;
    let mut placed: Vec<Option<Placement>> = vec![None; demands.len()];
    let mut page_events = Vec::new();

    let mut order: Vec<usize> = (0..demands.len()).collect();
    if policy == Policy::Page {
        order.sort_by(|&a, &b| lifetimes[a].0.cmp(&lifetimes[b].0).then(demands[b].lines.cmp(&demands[a].lines)));
    } else {
        order.sort_by(|&a, &b| demands[b].lines.cmp(&demands[a].lines));
    }

    // occupants[sw] = demand indices placed on sw
    let mut occupants: Vec<Vec<usize>> = vec![Vec::new(); sizes.len()];
    for &i in &order {
        let d = &demands[i];
        let free: Vec<(usize, usize)> = (0..sizes.len())
            .filter(|&sw| match policy {
                Policy::Page => occupants[sw].iter().all(|&o| {
                    let (a, b) = (lifetimes[o], lifetimes[i]);
                    a.1 <= b.0 || b.1 <= a.0
                }),
                _ => occupants[sw].is_empty(),
            })
            .map(|sw| (sw, sizes[sw]))
            .collect();
        let best = free.iter().filter(|&&(_, s)| s >= d.lines).min_by_key(|&&(sw, s)| (s, sw)).copied();
        let placement = match best {
            Some((sw, _)) => Placement::Single(sw),
            None if policy >= Policy::Gang && d.role == Role::Joiner => match plan_gang(d.lines, &free) {
                Some(g) => Placement::Gang(g),
                None => return Err(fail(shortfall(d, &free))),
            },
            None => return Err(fail(shortfall(d, &free))),
        };
        let sws = match &placement {
            Placement::Single(sw) => vec![*sw],
            Placement::Gang(g) => std::iter::once(g.top).chain(g.subs.iter().map(|s| s.0)).collect(),
        };
        for sw in sws {
            if let Some(&prev) = occupants[sw].iter().max_by_key(|&&o| lifetimes[o].1) {
                page_events.push(PageEvent {
                    switch: sw,
                    point: lifetimes[i].0,
                    evicted: demands[prev].name.clone(),
                    loaded: d.name.clone(),
                });
            }
            occupants[sw].push(i);
        }
        placed[i] = Some(placement);
    }
    page_events.sort_by_key(|p| (p.point, p.switch));

    let entries = demands
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let placement = placed[i].clone().expect("every demand placed");
            let shared = match &placement {
                Placement::Single(sw) => occupants[*sw].len() > 1,
                Placement::Gang(g) => {
                    std::iter::once(g.top).chain(g.subs.iter().map(|s| s.0)).any(|sw| occupants[sw].len() > 1)
                }
            };
            Assignment {
                name: d.name.clone(),
                lines: d.lines,
                role: d.role,
                lifetime: lifetimes[i],
                placement,
                residency: if shared { Residency::Paged } else { Residency::Resident },
            }
        })
        .collect();
    let table = AllocationTable { policy, sizes: sizes.clone(), entries, page_events };
    debug_assert_eq!(table.check(), Ok(()));
    Ok(table)
}

fn shortfall(d: &Demand, free: &[(usize, usize)]) -> String {
    let largest = free.iter().map(|f| f.1).max();
    match largest {
        None => format!("{} needs {} lines but no switch is free", d.name, d.lines),
        Some(s) => format!("{} needs {} lines, largest free switch has {s} (short by {})", d.name, d.lines, d.lines.saturating_sub(s)),
    }
}
