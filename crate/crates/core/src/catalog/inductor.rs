//! Lookup table of realizable inductances on toroidal powder cores.

use serde::{Deserialize, Serialize};

use super::Valued;
use crate::error::{Error, Result};

/// Empirical core-loss law `Pv = k * f^alpha * dB^beta` in W/m³ with `f` in Hz
/// and the peak-to-peak flux swing `dB` in T.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Steinmetz {
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for Steinmetz {
    fn default() -> Self {
        Steinmetz {
            k: 3.0,
            alpha: 1.5,
            beta: 2.0,
        }
    }
}

impl Steinmetz {
    pub fn loss_density(&self, fs: f64, delta_b: f64) -> f64 {
        self.k * fs.powf(self.alpha) * delta_b.abs().powf(self.beta)
    }
}

/// Geometric and magnetic data of one toroidal core.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoreRecord {
    pub name: String,
    /// Outer diameter, mm.
    pub od_mm: f64,
    /// Inner diameter, mm.
    pub id_mm: f64,
    /// Height, mm.
    pub height_mm: f64,
    /// Effective cross-section, mm².
    pub ae_mm2: f64,
    /// Core volume, cm³.
    pub volume_cm3: f64,
    /// Nominal inductance, nH/turn².
    pub al_nh: f64,
    pub mu_i: f64,
    /// Saturation flux density, T.
    pub b_sat_t: f64,
    #[serde(default)]
    pub steinmetz: Steinmetz,
}

impl CoreRecord {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidCatalog(format!("core {}: {what}", self.name)));
        if !(self.id_mm > 0.0) {
            return bad("inner diameter must be positive");
        }
        if !(self.od_mm > self.id_mm) {
            return bad("outer diameter must exceed inner diameter");
        }
        if !(self.height_mm > 0.0) {
            return bad("height must be positive");
        }
        if !(self.ae_mm2 > 0.0) {
            return bad("cross-section must be positive");
        }
        if !(self.volume_cm3 > 0.0) {
            return bad("volume must be positive");
        }
        if !(self.al_nh > 0.0) {
            return bad("A_L must be positive");
        }
        Ok(())
    }

    /// Length of one turn around the core section, m.
    pub fn turn_length_m(&self) -> f64 {
        (self.od_mm - self.id_mm + 2.0 * self.height_mm) * 1e-3
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireSpec {
    pub name: String,
    /// Copper cross-section, mm².
    pub area_mm2: f64,
    /// Resistance per unit length, Ω/m.
    pub ohm_per_m: f64,
}

/// Copper resistivity at 20 °C, Ω·m.
pub const COPPER_RESISTIVITY: f64 = 1.724e-8;

impl WireSpec {
    /// Round copper wire of the given bare diameter.
    pub fn copper(name: impl Into<String>, diameter_mm: f64) -> Self {
        let area_mm2 = std::f64::consts::PI * diameter_mm * diameter_mm / 4.0;
        WireSpec {
            name: name.into(),
            area_mm2,
            ohm_per_m: COPPER_RESISTIVITY / (area_mm2 * 1e-6),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.area_mm2 > 0.0) || !(self.ohm_per_m > 0.0) {
            return Err(Error::InvalidCatalog(format!(
                "wire {}: area and resistance must be positive",
                self.name
            )));
        }
        Ok(())
    }
}

/// One realizable inductance: a core wound with `turns` turns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InductorEntry {
    pub l_uh: f64,
    pub core: CoreRecord,
    pub turns: u32,
    /// Winding resistance, Ω.
    pub r_l: f64,
    pub volume_cm3: f64,
}

impl Valued for InductorEntry {
    fn value(&self) -> f64 {
        self.l_uh
    }
}

impl InductorEntry {
    pub fn l_henry(&self) -> f64 {
        self.l_uh * 1e-6
    }
}

/// Maximum number of turns the core window accepts at fill factor `ku`.
///
/// Rounded to the nearest integer: this reproduces the published 56/74/93/162
/// turns of the TAF-200 cores where flooring does not.
pub fn n_max(core: &CoreRecord, wire: &WireSpec, ku: f64) -> Result<u32> {
    core.validate()?;
    wire.validate()?;
    if !(ku > 0.0 && ku <= 1.0) {
        return Err(Error::InvalidCatalog(format!(
            "fill factor must lie in (0, 1], got {ku}"
        )));
    }
    let window = std::f64::consts::PI * core.id_mm * core.id_mm / 4.0;
    Ok((ku * window / wire.area_mm2).round() as u32)
}

/// Inductance of `n` turns on `core`, µH.
pub fn l_max(core: &CoreRecord, n: u32) -> f64 {
    core.al_nh * f64::from(n) * f64::from(n) / 1000.0
}

/// DC winding resistance of `n` turns, Ω.
pub fn winding_resistance(core: &CoreRecord, n: u32, wire: &WireSpec) -> f64 {
    f64::from(n) * core.turn_length_m() * wire.ohm_per_m
}

/// Builds the inductor lookup table.
///
/// Every core contributes `A_L * N² / 1000` for `N = 1..=n_max`. A value is kept
/// only when the contributing core is the one selected for it: the smallest
/// core (by volume, then by reachable inductance) whose maximum inductance
/// covers the value. With volumes that grow alongside `L_max` this is the
/// partition of the inductance axis at each core's `L_max`.
pub fn build_inductor_table(
    cores: &[CoreRecord],
    wire: &WireSpec,
    ku: f64,
    range_uh: (f64, f64),
) -> Result<Vec<InductorEntry>> {
    if cores.is_empty() {
        return Err(Error::InvalidCatalog("no cores given".into()));
    }
    let (lo, hi) = range_uh;
    if !(lo < hi) {
        return Err(Error::InvalidCatalog(format!(
            "inductance range [{lo}, {hi}] is empty"
        )));
    }

    let mut sized = cores
        .iter()
        .map(|c| {
            let n = n_max(c, wire, ku)?;
            Ok((c, n, l_max(c, n)))
        })
        .collect::<Result<Vec<_>>>()?;
    sized.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.volume_cm3.total_cmp(&b.0.volume_cm3)));

    let selected_for = |l: f64| -> Option<usize> {
        sized
            .iter()
            .enumerate()
            .filter(|(_, (_, _, lmax))| *lmax >= l)
            .min_by(|(_, a), (_, b)| {
                a.0.volume_cm3
                    .total_cmp(&b.0.volume_cm3)
                    .then(a.2.total_cmp(&b.2))
            })
            .map(|(i, _)| i)
    };

    let mut entries = Vec::new();
    for (idx, (core, nmax, _)) in sized.iter().enumerate() {
        for n in 1..=*nmax {
            let l = l_max(core, n);
            if l < lo || l > hi || selected_for(l) != Some(idx) {
                continue;
            }
            entries.push(InductorEntry {
                l_uh: l,
                core: (*core).clone(),
                turns: n,
                r_l: winding_resistance(core, n, wire),
                volume_cm3: core.volume_cm3,
            });
        }
    }
    entries.sort_by(|a, b| a.l_uh.total_cmp(&b.l_uh));
    entries.dedup_by(|a, b| a.l_uh == b.l_uh);

    if entries.is_empty() {
        return Err(Error::EmptyTable(format!(
            "no inductor reaches a value within [{lo}, {hi}] µH"
        )));
    }
    Ok(entries)
}
