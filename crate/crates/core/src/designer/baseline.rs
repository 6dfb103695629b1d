//! Conventional ripple-driven design: size L and C from the ripple limits at a
//! fixed frequency, then round both up to realizable parts.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::catalog::{ceil_entry, CapBankEntry, Catalog, InductorEntry};
use crate::convsim::{DesignPoint, DesignSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConventionalDesign {
    pub fs: f64,
    pub duty: f64,
    /// Computed inductance before rounding, µH.
    pub l_calc_uh: f64,
    /// Computed capacitance before rounding, µF.
    pub c_calc_uf: f64,
    pub inductor: InductorEntry,
    pub capacitor: CapBankEntry,
}

impl ConventionalDesign {
    pub fn point(&self) -> DesignPoint {
        DesignPoint::new(self.fs, self.inductor.clone(), self.capacitor.clone())
    }
}

/// `L = (1 - D) V_o / (fs dIL_lim I_o)` in µH with `D = V_o / V_in`.
pub fn required_inductance_uh(spec: &DesignSpec, fs: f64) -> f64 {
    let d = spec.v_o / spec.v_in;
    (1.0 - d) * spec.v_o / (fs * spec.dil_lim * spec.i_o()) * 1e6
}

/// `C = (π + 4 tanδ) dIL_lim I_o / (8π fs V_o dVo_lim)` in µF.
pub fn required_capacitance_uf(spec: &DesignSpec, fs: f64, tan_delta: f64) -> f64 {
    (PI + 4.0 * tan_delta) * spec.dil_lim * spec.i_o() / (8.0 * PI * fs * spec.v_o * spec.dvo_lim) * 1e6
}

fn check_bounds(name: &str, unit: &str, value: f64, min: f64, max: f64) -> Result<()> {
    if value < min {
        return Err(Error::OutOfRange(format!("{name}_calc = {value:.4} {unit} is below the lower bound {min} {unit}")));
    }
    if value > max {
        return Err(Error::OutOfRange(format!("{name}_calc = {value:.4} {unit} exceeds the upper bound {max} {unit}")));
    }
    Ok(())
}

/// Baseline design at `fs`. L takes the smallest catalog inductor at or above
/// the computed value; C takes the bank with the fewest parts that reaches the
/// computed value, smallest capacitance first.
pub fn conventional_design(spec: &DesignSpec, fs: f64, catalog: &Catalog) -> Result<ConventionalDesign> {
    spec.validate()?;
    if !spec.fs_range.contains(fs) {
        return Err(Error::OutOfRange(format!(
            "fs = {fs} Hz is outside [{}, {}] Hz",
            spec.fs_range.min, spec.fs_range.max
        )));
    }
    let l_calc = required_inductance_uh(spec, fs);
    let c_calc = required_capacitance_uf(spec, fs, catalog.family_tan_delta());
    check_bounds("L", "µH", l_calc, spec.l_range.min, spec.l_range.max)?;
    check_bounds("C", "µF", c_calc, spec.c_range.min, spec.c_range.max)?;

    let inductor = ceil_entry(&catalog.inductors, l_calc)
        .filter(|e| e.l_uh <= spec.l_range.max)
        .ok_or_else(|| Error::OutOfRange(format!("no catalog inductor at or above L_calc = {l_calc:.4} µH")))?;
    let capacitor = catalog
        .banks
        .iter()
        .filter(|b| b.c_uf >= c_calc && b.c_uf <= spec.c_range.max)
        .min_by(|a, b| a.count.cmp(&b.count).then(a.c_uf.total_cmp(&b.c_uf)))
        .ok_or_else(|| Error::OutOfRange(format!("no capacitor bank at or above C_calc = {c_calc:.4} µF")))?;

    Ok(ConventionalDesign {
        fs,
        duty: spec.v_o / spec.v_in,
        l_calc_uh: l_calc,
        c_calc_uf: c_calc,
        inductor: inductor.clone(),
        capacitor: capacitor.clone(),
    })
}
