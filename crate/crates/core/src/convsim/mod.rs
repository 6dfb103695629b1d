//! Circuit evaluation engine for the synchronous buck converter.
//!
//! Two independent evaluators compute the same [`PerformanceRecord`]: a
//! closed-form CCM analysis ([`analytic_evaluate`]) and a time-stepped periodic
//! steady-state simulation of the switched network ([`transient_evaluate`]).
//! They share the operating point definitions below and nothing else.

mod analytic;
mod transient;

use serde::{Deserialize, Serialize};

pub use analytic::{analytic_evaluate, duty_cycle, voltage_ripple_breakdown, RippleBreakdown};
pub use transient::{
    simulate, transient_evaluate, write_waveform_csv, SimConfig, TransientDiagnostics,
    TransientResult, WaveSample,
};

use crate::catalog::{CapBankEntry, InductorEntry};
use crate::error::{Error, Result};

/// Closed interval `[min, max]`, written as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Range { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max - self.min
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.min && x <= self.max
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.min, self.max)
    }

    pub fn as_tuple(&self) -> (f64, f64) {
        (self.min, self.max)
    }

    /// `n` evenly spaced points including both ends.
    pub fn linspace(&self, n: usize) -> Vec<f64> {
        match n {
            0 => vec![],
            1 => vec![self.min],
            _ => (0..n)
                .map(|i| self.min + self.width() * i as f64 / (n - 1) as f64)
                .collect(),
        }
    }
}

impl From<[f64; 2]> for Range {
    fn from(v: [f64; 2]) -> Self {
        Range::new(v[0], v[1])
    }
}

impl From<Range> for [f64; 2] {
    fn from(r: Range) -> Self {
        [r.min, r.max]
    }
}

/// Operating conditions, parameter ranges and constraint limits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub v_in: f64,
    pub v_o: f64,
    pub p_o: f64,
    /// Switching frequency range, Hz.
    pub fs_range: Range,
    /// Inductance range, µH.
    pub l_range: Range,
    /// Capacitance range, µF.
    pub c_range: Range,
    /// Volume limit for inductor plus capacitors, cm³.
    pub vol_lim: f64,
    /// Output voltage ripple limit (fraction of `v_o`).
    pub dvo_lim: f64,
    /// Inductor current ripple limit (fraction of `i_o`).
    pub dil_lim: f64,
    /// Dead time at each switching edge, s.
    pub dead_time: f64,
}

impl DesignSpec {
    /// The 48 V to 12 V, 100 W accessory-load supply.
    pub fn table_one() -> Self {
        DesignSpec {
            v_in: 48.0,
            v_o: 12.0,
            p_o: 100.0,
            fs_range: Range::new(20e3, 200e3),
            l_range: Range::new(30.0, 2000.0),
            c_range: Range::new(20.0, 1000.0),
            vol_lim: 7.0,
            dvo_lim: 0.01,
            dil_lim: 0.10,
            dead_time: 200e-9,
        }
    }

    pub fn i_o(&self) -> f64 {
        self.p_o / self.v_o
    }

    /// Resistive load drawing `p_o` at `v_o`.
    pub fn r_load(&self) -> f64 {
        self.v_o * self.v_o / self.p_o
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        if !(self.v_o > 0.0 && self.v_o < self.v_in) {
            return bad("need 0 < V_o < V_in");
        }
        if !(self.p_o > 0.0) {
            return bad("P_o must be positive");
        }
        for (name, r) in [("fs", self.fs_range), ("L", self.l_range), ("C", self.c_range)] {
            if !(r.min > 0.0 && r.min < r.max) {
                return Err(Error::InvalidSpec(format!("{name} range must satisfy 0 < min < max")));
            }
        }
        if !(self.vol_lim > 0.0 && self.dvo_lim > 0.0 && self.dil_lim > 0.0) {
            return bad("constraint limits must be positive");
        }
        if !(self.dead_time >= 0.0) {
            return bad("dead time must be non-negative");
        }
        Ok(())
    }

    /// Same spec at a different output power.
    pub fn at_power(&self, p_o: f64) -> Self {
        DesignSpec { p_o, ..self.clone() }
    }
}

/// Power switch model shared by the high- and low-side devices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SwitchParams {
    /// On-resistance, Ω.
    pub r_dson: f64,
    /// Body-diode forward drop, V.
    pub v_sd: f64,
    /// Current rise time, s.
    pub t_r: f64,
    /// Current fall time, s.
    pub t_f: f64,
    /// Body-diode reverse-recovery charge, C.
    pub q_rr: f64,
    /// Output capacitance, F.
    pub c_oss: f64,
}

impl Default for SwitchParams {
    /// Approximates an IRFB4310-class 100 V MOSFET.
    fn default() -> Self {
        SwitchParams {
            r_dson: 5.6e-3,
            v_sd: 1.0,
            t_r: 100e-9,
            t_f: 100e-9,
            q_rr: 170e-9,
            c_oss: 430e-12,
        }
    }
}

impl SwitchParams {
    /// Lossless switches.
    pub fn ideal() -> Self {
        SwitchParams {
            r_dson: 0.0,
            v_sd: 0.0,
            t_r: 0.0,
            t_f: 0.0,
            q_rr: 0.0,
            c_oss: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.r_dson, self.v_sd, self.t_r, self.t_f, self.q_rr, self.c_oss];
        if vals.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::InvalidSpec("switch parameters must be non-negative".into()));
        }
        Ok(())
    }

    fn switching_energy_terms(&self, v_in: f64, i_on: f64, i_off: f64) -> f64 {
        0.5 * v_in * (i_on.max(0.0) * self.t_r + i_off.max(0.0) * self.t_f)
            + self.q_rr * v_in
            + self.c_oss * v_in * v_in
    }
}

/// A candidate design: switching frequency plus one entry of each table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignPoint {
    pub fs: f64,
    pub inductor: InductorEntry,
    pub capacitor: CapBankEntry,
}

impl DesignPoint {
    pub fn new(fs: f64, inductor: InductorEntry, capacitor: CapBankEntry) -> Self {
        DesignPoint { fs, inductor, capacitor }
    }

    pub fn volume_cm3(&self) -> f64 {
        self.inductor.volume_cm3 + self.capacitor.volume_cm3
    }

    fn check(&self, spec: &DesignSpec) -> Result<()> {
        spec.validate()?;
        if !(self.fs > 0.0) {
            return Err(Error::Domain(format!("switching frequency must be positive, got {}", self.fs)));
        }
        if !(self.inductor.l_uh > 0.0 && self.capacitor.c_uf > 0.0) {
            return Err(Error::Domain("L and C must be positive".into()));
        }
        if 2.0 * spec.dead_time * self.fs >= 0.5 {
            return Err(Error::Domain(format!(
                "dead time {} s is too long for {} Hz",
                spec.dead_time, self.fs
            )));
        }
        Ok(())
    }
}

/// Losses, ripples and volume of one design at one operating point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRecord {
    /// High-side switch loss, W.
    #[serde(rename = "P_Ls1")]
    pub p_ls1: f64,
    /// Low-side switch loss including the dead-time body diode, W.
    #[serde(rename = "P_Ls2")]
    pub p_ls2: f64,
    /// Inductor copper loss, W.
    #[serde(rename = "P_LCu")]
    pub p_lcu: f64,
    /// Inductor core loss, W.
    #[serde(rename = "P_LFe")]
    pub p_lfe: f64,
    /// Capacitor ESR loss, W.
    #[serde(rename = "P_LC")]
    pub p_lc: f64,
    /// Peak-to-peak output voltage ripple over `v_o`.
    #[serde(rename = "dVo")]
    pub dvo: f64,
    /// Peak-to-peak inductor current ripple over `i_o`.
    #[serde(rename = "dIL")]
    pub dil: f64,
    #[serde(rename = "Vol")]
    pub vol: f64,
    pub eta: f64,
    pub duty: f64,
    pub ccm: bool,
}

impl PerformanceRecord {
    pub fn total_loss(&self) -> f64 {
        self.p_ls1 + self.p_ls2 + self.p_lcu + self.p_lfe + self.p_lc
    }

    /// Fills `eta` from the rated output power and the loss terms.
    pub(crate) fn with_efficiency(mut self, p_o: f64) -> Self {
        self.eta = p_o / (p_o + self.total_loss());
        self
    }

    pub fn feasible(&self, spec: &DesignSpec) -> bool {
        self.vol <= spec.vol_lim && self.dvo <= spec.dvo_lim && self.dil <= spec.dil_lim
    }
}

/// Flux-density warning for a design that runs close to saturation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaturationWarning {
    pub b_peak: f64,
    pub b_sat: f64,
}

impl std::fmt::Display for SaturationWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "peak flux density {:.3} T exceeds 90% of saturation ({:.3} T)",
            self.b_peak, self.b_sat
        )
    }
}

/// Peak core flux density `L * (I_o + dI/2) / (N * Ae)` in T.
pub fn peak_flux_density(point: &DesignPoint, record: &PerformanceRecord, i_o: f64) -> f64 {
    let ind = &point.inductor;
    let i_peak = i_o + record.dil * i_o / 2.0;
    ind.l_henry() * i_peak / (f64::from(ind.turns) * ind.core.ae_mm2 * 1e-6)
}

/// Warns when the peak flux density exceeds 90% of the core's `B_sat`.
pub fn check_saturation(
    point: &DesignPoint,
    record: &PerformanceRecord,
    i_o: f64,
) -> Option<SaturationWarning> {
    let b_peak = peak_flux_density(point, record, i_o);
    let b_sat = point.inductor.core.b_sat_t;
    (b_peak > 0.9 * b_sat).then_some(SaturationWarning { b_peak, b_sat })
}

/// Which evaluator produces performance data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Engine {
    #[default]
    Analytic,
    Transient,
}

impl std::str::FromStr for Engine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "analytic" => Ok(Engine::Analytic),
            "transient" => Ok(Engine::Transient),
            other => Err(Error::Config(format!("unknown engine `{other}` (analytic|transient)"))),
        }
    }
}

impl std::fmt::Display for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Engine::Analytic => "analytic",
            Engine::Transient => "transient",
        })
    }
}

/// Evaluates `point` with the chosen engine (default simulation settings).
pub fn evaluate(
    engine: Engine,
    point: &DesignPoint,
    spec: &DesignSpec,
    sw: &SwitchParams,
) -> Result<PerformanceRecord> {
    match engine {
        Engine::Analytic => analytic_evaluate(point, spec, sw),
        Engine::Transient => transient_evaluate(point, spec, sw, &SimConfig::default()),
    }
}
