use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sampling::SamplingPlan;
use crate::convsim::{DesignSpec, Engine, Range, SimConfig, SwitchParams};
use crate::error::{Error, Result};
use crate::evo::GaConfig;
use crate::surrogate::{Structure, StructureChoice, TrainConfig};

const TABLE_ONE: &str = include_str!("../../data/table1.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Operating {
    #[serde(rename = "V_in")]
    pub v_in: f64,
    #[serde(rename = "V_o")]
    pub v_o: f64,
    #[serde(rename = "P_o")]
    pub p_o: f64,
    #[serde(default = "default_dead_time")]
    pub dead_time: f64,
}

fn default_dead_time() -> f64 {
    200e-9
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranges {
    /// Hz.
    pub fs: Range,
    /// µH.
    #[serde(rename = "L")]
    pub l: Range,
    /// µF.
    #[serde(rename = "C")]
    pub c: Range,
}

/// Limits; ripples are fractions (0.01 = 1%).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    #[serde(rename = "Vol_lim")]
    pub vol_lim: f64,
    #[serde(rename = "dVo_lim")]
    pub dvo_lim: f64,
    #[serde(rename = "dIL_lim")]
    pub dil_lim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingSection {
    #[serde(flatten)]
    pub config: TrainConfig,
    /// Search the full `H × N_h` grid instead of the reference structures.
    #[serde(default)]
    pub search: bool,
    /// Explicit candidate list `[[H, N_h], ...]`; implies search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub structures: Option<Vec<[usize; 2]>>,
}

impl TrainingSection {
    pub fn structure_choice(&self) -> StructureChoice {
        match (&self.structures, self.search) {
            (Some(list), _) => StructureChoice::Search(list.iter().map(|s| Structure::new(s[0], s[1])).collect()),
            (None, true) => StructureChoice::Search(Structure::default_grid()),
            (None, false) => StructureChoice::Fixed,
        }
    }
}

/// Pipeline knobs that are not part of the paper's design case.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineSection {
    /// Engine used to generate training data.
    pub dataset_engine: Engine,
    /// Engine used to re-check the final design and the baseline.
    pub verify_engine: Engine,
    /// Factor applied to the ripple limits during the GA search.
    pub margin: f64,
    /// GA reruns with tighter ripple limits after a failed direct check.
    pub max_refinements: usize,
    /// Switching frequency of the conventional design, Hz.
    pub baseline_fs: f64,
}

impl Default for PipelineSection {
    fn default() -> Self {
        PipelineSection {
            dataset_engine: Engine::Analytic,
            verify_engine: Engine::Transient,
            margin: 0.97,
            max_refinements: 3,
            baseline_fs: 20e3,
        }
    }
}

/// A design spec file (TOML).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub operating: Operating,
    pub ranges: Ranges,
    pub constraints: Constraints,
    #[serde(default)]
    pub switch: SwitchParams,
    #[serde(default)]
    pub sampling: SamplingPlan,
    #[serde(default)]
    pub ga: GaConfig,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub simulation: SimConfig,
    #[serde(default)]
    pub pipeline: PipelineSection,
}

impl SpecFile {
    /// The bundled 48 V to 12 V, 100 W design case.
    pub fn table_one() -> Self {
        Self::from_toml_str(TABLE_ONE).expect("bundled spec file is valid")
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let f: SpecFile = toml::from_str(s)?;
        f.validate()?;
        Ok(f)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(format!("spec file: {e}")))
    }

    pub fn design_spec(&self) -> DesignSpec {
        DesignSpec {
            v_in: self.operating.v_in,
            v_o: self.operating.v_o,
            p_o: self.operating.p_o,
            fs_range: self.ranges.fs,
            l_range: self.ranges.l,
            c_range: self.ranges.c,
            vol_lim: self.constraints.vol_lim,
            dvo_lim: self.constraints.dvo_lim,
            dil_lim: self.constraints.dil_lim,
            dead_time: self.operating.dead_time,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.design_spec().validate()?;
        self.switch.validate()?;
        self.sampling.validate()?;
        self.ga.validate()?;
        self.training.config.validate()?;
        self.simulation.validate()?;
        if let StructureChoice::Search(list) = self.training.structure_choice() {
            if list.is_empty() || list.iter().any(|s| s.hidden_layers == 0 || s.width == 0) {
                return Err(Error::Config("training structures need H >= 1 and N_h >= 1".into()));
            }
        }
        let p = &self.pipeline;
        if !(p.margin > 0.0 && p.margin <= 1.0) {
            return Err(Error::Config("pipeline margin must lie in (0, 1]".into()));
        }
        if !self.ranges.fs.contains(p.baseline_fs) {
            return Err(Error::Config(format!("baseline_fs {} Hz is outside the fs range", p.baseline_fs)));
        }
        Ok(())
    }
}
