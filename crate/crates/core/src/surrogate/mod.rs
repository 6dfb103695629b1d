//! Batch-normalized neural-network surrogates for losses and ripples.
//!
//! Four small networks map `(fs, L, C)` to the seven performance targets,
//! grouped as switch losses, inductor losses, capacitor loss and ripples.
//! Inputs are min-max scaled over the design ranges; targets are standardized
//! on the training split (after a log transform when strictly positive).

mod dataset;
mod model;
mod network;
mod ridge;
mod scalarizer;

use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

pub use dataset::{assign_splits, DataRow, Dataset, Split, Target};
pub use model::{
    select_structure, train, CandidateScore, Selection, Structure, SurrogateModel, TrainConfig,
    TrainingMeta, MODEL_SCHEMA,
};
pub use network::{
    gradient_check, gradient_check_with, mse, mse_and_grad, Activation, BnLayer, GradientReport,
    Gradients, LinearLayer, Mode, Network, Trace, BN_EPSILON, BN_MOMENTUM, FD_STEP,
};
pub use ridge::{RidgeModel, RIDGE_LAMBDA};
pub use scalarizer::{OutputTransform, Scalarizer, LOG_SPAN};

use crate::convsim::{DesignPoint, DesignSpec, PerformanceRecord, Range};
use crate::error::{Error, Result};

/// Builds a record from targets in dataset units (ripples in percent).
pub fn performance_from_targets(t: &[f64; 7], vol: f64, spec: &DesignSpec) -> PerformanceRecord {
    let dil = t[Target::DIL.index()] / 100.0;
    let rec = PerformanceRecord {
        p_ls1: t[Target::PLs1.index()],
        p_ls2: t[Target::PLs2.index()],
        p_lcu: t[Target::PLCu.index()],
        p_lfe: t[Target::PLFe.index()],
        p_lc: t[Target::PLC.index()],
        dvo: t[Target::DVo.index()] / 100.0,
        dil,
        vol,
        eta: 1.0,
        duty: spec.v_o / spec.v_in,
        ccm: dil <= 2.0,
    };
    rec.with_efficiency(spec.p_o)
}

/// Targets of one surrogate and its reference structure.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelGroup {
    pub name: &'static str,
    pub targets: &'static [Target],
    pub structure: Structure,
}

pub const GROUPS: [ModelGroup; 4] = [
    ModelGroup {
        name: "switch",
        targets: &[Target::PLs1, Target::PLs2],
        structure: Structure::new(3, 10),
    },
    ModelGroup {
        name: "inductor",
        targets: &[Target::PLCu, Target::PLFe],
        structure: Structure::new(3, 20),
    },
    ModelGroup {
        name: "capacitor",
        targets: &[Target::PLC],
        structure: Structure::new(2, 10),
    },
    ModelGroup {
        name: "ripple",
        targets: &[Target::DVo, Target::DIL],
        structure: Structure::new(2, 10),
    },
];

/// Input ranges `(fs, L, C)` of a design spec.
pub fn input_ranges(spec: &DesignSpec) -> [Range; 3] {
    [spec.fs_range, spec.l_range, spec.c_range]
}

/// How to choose the structure of each model.
#[derive(Debug, Clone, PartialEq)]
pub enum StructureChoice {
    /// Use each group's reference structure without search.
    Fixed,
    /// Search the same candidate list for every group.
    Search(Vec<Structure>),
}

/// The four trained surrogates covering all seven targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateSet {
    pub schema: u32,
    pub models: Vec<SurrogateModel>,
}

/// Per-group outcome of [`SurrogateSet::train`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub group: String,
    pub structure: Structure,
    pub meta: TrainingMeta,
    pub candidates: Vec<CandidateScore>,
}

impl SurrogateSet {
    pub fn train(
        data: &Dataset,
        spec: &DesignSpec,
        choice: &StructureChoice,
        cfg: &TrainConfig,
    ) -> Result<(Self, Vec<GroupSummary>)> {
        let ranges = input_ranges(spec);
        let mut models = Vec::with_capacity(GROUPS.len());
        let mut summary = Vec::with_capacity(GROUPS.len());
        for g in &GROUPS {
            let (model, candidates) = match choice {
                StructureChoice::Fixed => (train(data, g.targets, &ranges, g.structure, cfg)?, Vec::new()),
                StructureChoice::Search(c) => {
                    let sel = select_structure(data, g.targets, &ranges, c, cfg)?;
                    (sel.model, sel.scores)
                }
            };
            log::info!(
                "surrogate `{}` structure {} val MSE {:?}",
                g.name,
                model.meta.structure,
                model.meta.val_mse
            );
            summary.push(GroupSummary {
                group: g.name.to_string(),
                structure: model.meta.structure,
                meta: model.meta.clone(),
                candidates,
            });
            models.push(model);
        }
        Ok((
            SurrogateSet {
                schema: MODEL_SCHEMA,
                models,
            },
            summary,
        ))
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != MODEL_SCHEMA {
            return Err(Error::Format(format!("surrogate set schema {} not supported", self.schema)));
        }
        let mut seen = [false; 7];
        for m in &self.models {
            m.validate()?;
            for t in &m.targets {
                if std::mem::replace(&mut seen[t.index()], true) {
                    return Err(Error::Format(format!("target {} covered twice", t.name())));
                }
            }
        }
        if !seen.iter().all(|s| *s) {
            return Err(Error::Format("surrogate set does not cover all seven targets".into()));
        }
        Ok(())
    }

    /// Predicted targets in dataset units, indexed by [`Target::index`].
    pub fn predict_targets(&self, fs: f64, l_uh: f64, c_uf: f64) -> [f64; 7] {
        let x = Array2::from_shape_vec((1, 3), vec![fs, l_uh, c_uf]).expect("1 × 3");
        let mut out = [0.0; 7];
        for m in &self.models {
            let p = m.predict(&x);
            for (j, t) in m.targets.iter().enumerate() {
                out[t.index()] = p[[0, j]];
            }
        }
        out
    }

    /// Predicted performance of a design; volume comes from the catalog
    /// entries, not from a network.
    pub fn predict_record(&self, point: &DesignPoint, spec: &DesignSpec) -> PerformanceRecord {
        let t = self.predict_targets(point.fs, point.inductor.l_uh, point.capacitor.c_uf);
        performance_from_targets(&t, point.volume_cm3(), spec)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(s).map_err(|e| Error::Format(format!("surrogate file is not valid JSON: {e}")))?;
        model::check_schema(&value, MODEL_SCHEMA, "surrogate set")?;
        let set: SurrogateSet =
            serde_json::from_value(value).map_err(|e| Error::Format(format!("surrogate file: {e}")))?;
        set.validate()?;
        Ok(set)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
