//! Lookup table of capacitor banks built from series/parallel connections.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Valued;
use crate::error::{Error, Result};

/// Two effective capacitances closer than this (relative) are one table value.
pub const MERGE_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapacitorRecord {
    pub name: String,
    pub c_uf: f64,
    pub volume_cm3: f64,
    /// Dissipation factor.
    pub tan_delta: f64,
    /// ESL factor, H·F.
    pub k_esl: f64,
}

impl CapacitorRecord {
    pub fn validate(&self) -> Result<()> {
        if !(self.c_uf > 0.0) || !(self.volume_cm3 > 0.0) || !(self.tan_delta >= 0.0) || !(self.k_esl >= 0.0) {
            return Err(Error::InvalidCatalog(format!(
                "capacitor {}: C and volume must be positive, tan_delta and k_esl non-negative",
                self.name
            )));
        }
        Ok(())
    }
}

/// How the parts of a bank are wired. Indices refer to the capacitor list the
/// table was built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "parts", rename_all = "snake_case")]
pub enum Connection {
    Single(usize),
    Parallel(Vec<usize>),
    Series(Vec<usize>),
    /// Parallel groups connected in series, e.g. `(C1 + C1) // C1`.
    SeriesOfParallel(Vec<Vec<usize>>),
    /// Series strings connected in parallel.
    ParallelOfSeries(Vec<Vec<usize>>),
}

/// Series/parallel reduction of one electrical quantity. `Admittance` adds in
/// parallel (capacitance); `Impedance` adds in series (ESL, ESR).
#[derive(Clone, Copy)]
enum Combine {
    Admittance,
    Impedance,
}

fn parallel(kind: Combine, xs: impl Iterator<Item = f64>) -> f64 {
    match kind {
        Combine::Admittance => xs.sum(),
        Combine::Impedance => 1.0 / xs.map(|x| 1.0 / x).sum::<f64>(),
    }
}

fn series(kind: Combine, xs: impl Iterator<Item = f64>) -> f64 {
    match kind {
        Combine::Admittance => 1.0 / xs.map(|x| 1.0 / x).sum::<f64>(),
        Combine::Impedance => xs.sum(),
    }
}

impl Connection {
    pub fn parts(&self) -> Vec<usize> {
        match self {
            Connection::Single(i) => vec![*i],
            Connection::Parallel(v) | Connection::Series(v) => v.clone(),
            Connection::SeriesOfParallel(g) | Connection::ParallelOfSeries(g) => {
                g.iter().flatten().copied().collect()
            }
        }
    }

    pub fn count(&self) -> usize {
        self.parts().len()
    }

    fn reduce(&self, kind: Combine, unit: &dyn Fn(usize) -> f64) -> f64 {
        match self {
            Connection::Single(i) => unit(*i),
            Connection::Parallel(v) => parallel(kind, v.iter().map(|&i| unit(i))),
            Connection::Series(v) => series(kind, v.iter().map(|&i| unit(i))),
            Connection::SeriesOfParallel(groups) => series(
                kind,
                groups.iter().map(|g| parallel(kind, g.iter().map(|&i| unit(i)))),
            ),
            Connection::ParallelOfSeries(groups) => parallel(
                kind,
                groups.iter().map(|g| series(kind, g.iter().map(|&i| unit(i)))),
            ),
        }
    }

    /// Effective capacitance of the connection, µF.
    pub fn capacitance_uf(&self, caps: &[CapacitorRecord]) -> f64 {
        self.reduce(Combine::Admittance, &|i| caps[i].c_uf)
    }

    pub fn volume_cm3(&self, caps: &[CapacitorRecord]) -> f64 {
        self.parts().iter().map(|&i| caps[i].volume_cm3).sum()
    }

    /// Bank ESL (H) from per-part `k_esl / C`.
    fn esl_h(&self, caps: &[CapacitorRecord]) -> f64 {
        self.reduce(Combine::Impedance, &|i| caps[i].k_esl / (caps[i].c_uf * 1e-6))
    }

    /// `ESR * omega` of the bank (Ω·rad/s), frequency independent.
    fn esr_omega(&self, caps: &[CapacitorRecord]) -> f64 {
        self.reduce(Combine::Impedance, &|i| caps[i].tan_delta / (caps[i].c_uf * 1e-6))
    }

    fn class_rank(&self) -> u8 {
        match self {
            Connection::Single(_) => 0,
            Connection::Parallel(_) => 1,
            Connection::Series(_) => 2,
            Connection::SeriesOfParallel(_) => 3,
            Connection::ParallelOfSeries(_) => 4,
        }
    }
}

/// One realizable capacitance value and the cheapest-in-volume way to build it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CapBankEntry {
    pub c_uf: f64,
    pub connection: Connection,
    pub count: usize,
    pub volume_cm3: f64,
    /// Effective ESL factor of the bank, H·F (`ESL = esl_factor / C`).
    pub esl_factor: f64,
    /// Effective dissipation factor of the bank.
    pub tan_delta: f64,
}

impl Valued for CapBankEntry {
    fn value(&self) -> f64 {
        self.c_uf
    }
}

impl CapBankEntry {
    pub fn from_connection(connection: Connection, caps: &[CapacitorRecord]) -> Self {
        let c_uf = connection.capacitance_uf(caps);
        let c_f = c_uf * 1e-6;
        CapBankEntry {
            c_uf,
            count: connection.count(),
            volume_cm3: connection.volume_cm3(caps),
            esl_factor: connection.esl_h(caps) * c_f,
            tan_delta: connection.esr_omega(caps) * c_f,
            connection,
        }
    }

    pub fn c_farad(&self) -> f64 {
        self.c_uf * 1e-6
    }
}

/// Equivalent series resistance (Ω) and inductance (H) of a bank at `fs`.
pub fn cap_parasitics(entry: &CapBankEntry, fs: f64) -> Result<(f64, f64)> {
    if !(fs > 0.0) {
        return Err(Error::Domain(format!("switching frequency must be positive, got {fs}")));
    }
    if !(entry.c_uf > 0.0) {
        return Err(Error::Domain("bank capacitance must be positive".into()));
    }
    let c = entry.c_farad();
    let esr = entry.tan_delta / (2.0 * std::f64::consts::PI * fs * c);
    let esl = entry.esl_factor / c;
    Ok((esr, esl))
}

/// All non-decreasing index sequences of length `1..=max_len` over `n` symbols.
fn multisets(n: usize, max_len: usize) -> Vec<Vec<usize>> {
    fn grow(n: usize, max_len: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let start = cur.last().copied().unwrap_or(0);
        for i in start..n {
            cur.push(i);
            out.push(cur.clone());
            if cur.len() < max_len {
                grow(n, max_len, cur, out);
            }
            cur.pop();
        }
    }
    let mut out = Vec::new();
    grow(n, max_len, &mut Vec::new(), &mut out);
    out
}

/// Multisets of at least two groups (by group index, non-decreasing) with a
/// total part count of at most `budget`.
fn group_multisets(groups: &[Vec<usize>], budget: usize) -> Vec<Vec<usize>> {
    fn grow(
        groups: &[Vec<usize>],
        budget: usize,
        used: usize,
        cur: &mut Vec<usize>,
        out: &mut Vec<Vec<usize>>,
    ) {
        let start = cur.last().copied().unwrap_or(0);
        for g in start..groups.len() {
            let size = groups[g].len();
            if used + size > budget {
                continue;
            }
            cur.push(g);
            if cur.len() >= 2 {
                out.push(cur.clone());
            }
            grow(groups, budget, used + size, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    grow(groups, budget, 0, &mut Vec::new(), &mut out);
    out
}

/// Every connection of at most `mp` parts in the single, parallel, series and
/// one-level mixed classes.
pub fn enumerate_connections(n_caps: usize, mp: usize) -> Vec<Connection> {
    let sets = multisets(n_caps, mp);
    let mut out = Vec::new();
    for s in &sets {
        match s.len() {
            1 => out.push(Connection::Single(s[0])),
            _ => {
                out.push(Connection::Parallel(s.clone()));
                out.push(Connection::Series(s.clone()));
            }
        }
    }
    // Mixed classes need at least one multi-part group, otherwise they
    // collapse into the pure series or parallel class.
    for combo in group_multisets(&sets, mp) {
        if combo.iter().all(|&g| sets[g].len() == 1) {
            continue;
        }
        let groups: Vec<Vec<usize>> = combo.iter().map(|&g| sets[g].clone()).collect();
        out.push(Connection::SeriesOfParallel(groups.clone()));
        out.push(Connection::ParallelOfSeries(groups));
    }
    out
}

/// Collapses candidates whose capacitances lie within [`MERGE_TOLERANCE`] of
/// each other. Preference is the smallest volume, then fewest parts, then the
/// simplest connection class. The result is sorted by capacitance and adjacent
/// values differ by more than the tolerance.
pub fn merge_banks(mut candidates: Vec<CapBankEntry>) -> Vec<CapBankEntry> {
    // Best-first: an entry survives unless a preferred one lies within tolerance.
    candidates.sort_by(|a, b| {
        a.volume_cm3
            .total_cmp(&b.volume_cm3)
            .then(a.count.cmp(&b.count))
            .then(a.connection.class_rank().cmp(&b.connection.class_rank()))
            .then(a.c_uf.total_cmp(&b.c_uf))
    });
    let mut kept: BTreeMap<OrderedValue, CapBankEntry> = BTreeMap::new();
    for cand in candidates {
        let c = cand.c_uf;
        let lo = OrderedValue(c / (1.0 + MERGE_TOLERANCE));
        let hi = OrderedValue(c * (1.0 + MERGE_TOLERANCE));
        if kept.range(lo..=hi).next().is_none() {
            kept.insert(OrderedValue(c), cand);
        }
    }
    kept.into_values().collect()
}

/// Capacitance as a map key, ordered by `total_cmp`.
#[derive(Debug, Clone, Copy)]
struct OrderedValue(f64);

impl PartialEq for OrderedValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for OrderedValue {}

impl PartialOrd for OrderedValue {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrderedValue {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Builds the capacitor bank lookup table for parts `caps` with at most `mp`
/// parts per bank, filtered to `range_uf`.
pub fn build_capacitor_table(
    caps: &[CapacitorRecord],
    mp: usize,
    range_uf: (f64, f64),
) -> Result<Vec<CapBankEntry>> {
    if caps.is_empty() {
        return Err(Error::InvalidCatalog("no capacitors given".into()));
    }
    if mp == 0 {
        return Err(Error::InvalidCatalog("MP must be at least 1".into()));
    }
    for c in caps {
        c.validate()?;
    }
    let (lo, hi) = range_uf;
    if !(lo < hi) {
        return Err(Error::InvalidCatalog(format!("capacitance range [{lo}, {hi}] is empty")));
    }
    let candidates = enumerate_connections(caps.len(), mp)
        .into_iter()
        .map(|conn| CapBankEntry::from_connection(conn, caps))
        .filter(|e| e.c_uf >= lo * (1.0 - 1e-12) && e.c_uf <= hi * (1.0 + 1e-12))
        .collect();
    let table = merge_banks(candidates);
    if table.is_empty() {
        return Err(Error::EmptyTable(format!(
            "no capacitor bank falls within [{lo}, {hi}] µF"
        )));
    }
    Ok(table)
}
