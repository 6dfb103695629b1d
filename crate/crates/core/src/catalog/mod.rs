//! Discrete component catalogs.
//!
//! Realizable inductances come from winding a fixed wire on a set of toroidal
//! cores; realizable capacitances from series/parallel banks of a few
//! electrolytic parts. Both tables are sorted ascending by value and are
//! immutable once built.

mod capacitor;
mod inductor;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use capacitor::{
    build_capacitor_table, cap_parasitics, enumerate_connections, merge_banks, CapBankEntry,
    CapacitorRecord, Connection, MERGE_TOLERANCE,
};
pub use inductor::{
    build_inductor_table, l_max, n_max, winding_resistance, CoreRecord, InductorEntry, Steinmetz,
    WireSpec, COPPER_RESISTIVITY,
};

use crate::error::{Error, Result};

/// Current catalog file schema.
pub const SCHEMA_VERSION: u32 = 1;

/// Anything stored in a lookup table under a scalar value (µH or µF).
pub trait Valued {
    fn value(&self) -> f64;
}

/// Entry whose value is closest to `value`; ties go to the smaller entry.
pub fn nearest_entry<T: Valued>(table: &[T], value: f64) -> Result<&T> {
    if table.is_empty() {
        return Err(Error::EmptyTable("lookup in empty table".into()));
    }
    let idx = nearest_index(table, value);
    Ok(&table[idx])
}

pub(crate) fn nearest_index<T: Valued>(table: &[T], value: f64) -> usize {
    let upper = table.partition_point(|e| e.value() < value);
    if upper == 0 {
        return 0;
    }
    if upper == table.len() {
        return table.len() - 1;
    }
    let below = value - table[upper - 1].value();
    let above = table[upper].value() - value;
    if above < below {
        upper
    } else {
        upper - 1
    }
}

/// Smallest entry whose value is at least `value`.
pub fn ceil_entry<T: Valued>(table: &[T], value: f64) -> Option<&T> {
    let idx = table.partition_point(|e| e.value() < value);
    table.get(idx)
}

/// Catalog definition as read from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogDef {
    /// Window fill factor.
    #[serde(default = "default_ku")]
    pub ku: f64,
    /// Maximum number of parts in one capacitor bank.
    #[serde(default = "default_mp")]
    pub mp: usize,
    pub wire: WireSpec,
    pub cores: Vec<CoreRecord>,
    pub capacitors: Vec<CapacitorRecord>,
}

fn default_ku() -> f64 {
    0.35
}

fn default_mp() -> usize {
    5
}

const DESIGN_CASE: &str = include_str!("../../data/design_case_catalog.toml");

impl CatalogDef {
    /// Cores, wire and capacitors of the 48 V to 12 V design case.
    pub fn design_case() -> Self {
        Self::from_toml_str(DESIGN_CASE).expect("bundled catalog definition is valid")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let def: CatalogDef = toml::from_str(s)?;
        def.validate()?;
        Ok(def)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cores.is_empty() || self.capacitors.is_empty() {
            return Err(Error::InvalidCatalog("need at least one core and one capacitor".into()));
        }
        self.wire.validate()?;
        for c in &self.cores {
            c.validate()?;
        }
        for c in &self.capacitors {
            c.validate()?;
        }
        Ok(())
    }

    /// Builds both lookup tables restricted to the given ranges.
    pub fn build(&self, l_range_uh: (f64, f64), c_range_uf: (f64, f64)) -> Result<Catalog> {
        self.validate()?;
        let inductors = build_inductor_table(&self.cores, &self.wire, self.ku, l_range_uh)?;
        let banks = build_capacitor_table(&self.capacitors, self.mp, c_range_uf)?;
        Ok(Catalog {
            schema: SCHEMA_VERSION,
            ku: self.ku,
            mp: self.mp,
            wire: self.wire.clone(),
            capacitors: self.capacitors.clone(),
            inductors,
            banks,
        })
    }
}

/// Both lookup tables plus the inputs they were derived from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Catalog {
    pub schema: u32,
    pub ku: f64,
    pub mp: usize,
    pub wire: WireSpec,
    /// Parts referenced by bank connections.
    pub capacitors: Vec<CapacitorRecord>,
    pub inductors: Vec<InductorEntry>,
    pub banks: Vec<CapBankEntry>,
}

impl Catalog {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let value: serde_json::Value = serde_json::from_str(s)?;
        match value.get("schema").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(SCHEMA_VERSION) => {}
            other => {
                return Err(Error::Format(format!(
                    "catalog schema {other:?} not supported (expected {SCHEMA_VERSION})"
                )))
            }
        }
        Ok(serde_json::from_value(value)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Dissipation factor of the capacitor family (the largest of the parts).
    pub fn family_tan_delta(&self) -> f64 {
        self.capacitors.iter().map(|c| c.tan_delta).fold(0.0, f64::max)
    }

    /// Index bounds `[lo, hi]` of inductors inside `range_uh`.
    pub fn inductor_span(&self, range_uh: (f64, f64)) -> Option<(usize, usize)> {
        span(&self.inductors, range_uh)
    }

    /// Index bounds `[lo, hi]` of banks inside `range_uf`.
    pub fn bank_span(&self, range_uf: (f64, f64)) -> Option<(usize, usize)> {
        span(&self.banks, range_uf)
    }
}

fn span<T: Valued>(table: &[T], (lo, hi): (f64, f64)) -> Option<(usize, usize)> {
    let a = table.partition_point(|e| e.value() < lo * (1.0 - 1e-12));
    let b = table.partition_point(|e| e.value() <= hi * (1.0 + 1e-12));
    (a < b).then(|| (a, b - 1))
}
