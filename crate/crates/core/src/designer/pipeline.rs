use std::path::Path;

use super::baseline::conventional_design;
use super::report::{evaluate_with, DesignReport};
use super::sampling::{generate_dataset, sample_grid, SamplingPlan};
use super::spec_file::SpecFile;
use crate::catalog::{CapBankEntry, Catalog, CatalogDef, InductorEntry};
use crate::convsim::{DesignSpec, Engine, PerformanceRecord, SimConfig, SwitchParams};
use crate::error::Result;
use crate::evo::{
    optimize, write_history_csv, AnalyticEvaluator, DesignRecord, Evaluator, GaConfig, GaResult, SearchSpace,
    TransientEvaluator,
};
use crate::surrogate::{
    performance_from_targets, Dataset, GroupSummary, StructureChoice, SurrogateSet, TrainConfig,
};

/// GA evaluator backed by the trained surrogates.
pub struct SurrogateEvaluator<'a> {
    pub set: &'a SurrogateSet,
    pub spec: &'a DesignSpec,
}

impl Evaluator for SurrogateEvaluator<'_> {
    fn evaluate(&self, fs: f64, inductor: &InductorEntry, bank: &CapBankEntry) -> Result<PerformanceRecord> {
        let t = self.set.predict_targets(fs, inductor.l_uh, bank.c_uf);
        Ok(performance_from_targets(&t, inductor.volume_cm3 + bank.volume_cm3, self.spec))
    }
}

/// Direct evaluator for `engine`.
pub fn engine_evaluator<'a>(
    engine: Engine,
    spec: &'a DesignSpec,
    switch: &'a SwitchParams,
    sim: SimConfig,
) -> Box<dyn Evaluator + 'a> {
    match engine {
        Engine::Analytic => Box::new(AnalyticEvaluator { spec, switch }),
        Engine::Transient => Box::new(TransientEvaluator { spec, switch, sim }),
    }
}

/// Copy of `spec` with both ripple limits scaled by `margin`. Volume comes
/// from the catalog exactly and keeps its limit.
pub fn tightened(spec: &DesignSpec, margin: f64) -> DesignSpec {
    DesignSpec {
        dvo_lim: spec.dvo_lim * margin,
        dil_lim: spec.dil_lim * margin,
        ..spec.clone()
    }
}

/// Shrinks each search ripple limit the verified value exceeded, in
/// proportion to the overshoot. Returns `None` when nothing was violated.
fn retighten(search: &DesignSpec, spec: &DesignSpec, verified: &PerformanceRecord) -> Option<DesignSpec> {
    const BACKOFF: f64 = 0.99;
    let mut next = search.clone();
    let mut changed = false;
    if verified.dvo > spec.dvo_lim {
        next.dvo_lim = search.dvo_lim * spec.dvo_lim / verified.dvo * BACKOFF;
        changed = true;
    }
    if verified.dil > spec.dil_lim {
        next.dil_lim = search.dil_lim * spec.dil_lim / verified.dil * BACKOFF;
        changed = true;
    }
    changed.then_some(next)
}

/// Search space covering the whole catalog inside the spec ranges.
pub fn search_space<'a>(spec: &DesignSpec, catalog: &'a Catalog) -> Result<SearchSpace<'a>> {
    let empty = |t: &str| crate::Error::EmptyTable(format!("no {t} inside the design range"));
    let (l0, l1) = catalog.inductor_span(spec.l_range.as_tuple()).ok_or_else(|| empty("inductor"))?;
    let (c0, c1) = catalog.bank_span(spec.c_range.as_tuple()).ok_or_else(|| empty("capacitor bank"))?;
    Ok(SearchSpace {
        fs: spec.fs_range,
        inductors: &catalog.inductors[l0..=l1],
        banks: &catalog.banks[c0..=c1],
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub switch: SwitchParams,
    pub plan: SamplingPlan,
    pub dataset_engine: Engine,
    pub verify_engine: Engine,
    pub structures: StructureChoice,
    pub train: TrainConfig,
    pub ga: GaConfig,
    pub sim: SimConfig,
    pub margin: f64,
    /// Extra GA rounds after a failed verification.
    pub max_refinements: usize,
    pub baseline_fs: f64,
}

impl PipelineConfig {
    /// Settings from a spec file; `seed` overrides the file's seed.
    pub fn from_spec_file(f: &SpecFile, seed: Option<u64>) -> Self {
        PipelineConfig {
            seed: seed.or(f.seed).unwrap_or(0),
            switch: f.switch,
            plan: f.sampling,
            dataset_engine: f.pipeline.dataset_engine,
            verify_engine: f.pipeline.verify_engine,
            structures: f.training.structure_choice(),
            train: f.training.config,
            ga: f.ga,
            sim: f.simulation,
            margin: f.pipeline.margin,
            max_refinements: f.pipeline.max_refinements,
            baseline_fs: f.pipeline.baseline_fs,
        }
    }
}

/// Everything produced by one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub catalog: Catalog,
    pub dataset: Dataset,
    pub surrogates: SurrogateSet,
    pub training: Vec<GroupSummary>,
    /// Limits the final GA round searched under.
    pub search_spec: DesignSpec,
    /// GA rounds rerun after a failed verification.
    pub refinements: usize,
    pub ga: GaResult,
    /// GA winner with its surrogate-predicted performance.
    pub design: DesignRecord,
    pub report: DesignReport,
}

impl PipelineOutput {
    /// Writes every artifact into `dir`; the report goes to `dir/report`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        self.catalog.save(dir.join("catalog.json"))?;
        self.dataset.save(dir.join("dataset.csv"))?;
        self.surrogates.save(dir.join("surrogates.json"))?;
        std::fs::write(dir.join("training.json"), serde_json::to_string_pretty(&self.training)?)?;
        write_history_csv(std::fs::File::create(dir.join("ga_history.csv"))?, &self.ga.history)?;
        self.design.save(dir.join("design.json"))?;
        self.report.write(dir.join("report"))?;
        Ok(())
    }
}

/// Catalog, sampling and evaluation, surrogate training, GA search over the
/// surrogates, then a direct re-evaluation of the winner and the baseline.
pub fn run_pipeline(spec: &DesignSpec, catalog_def: &CatalogDef, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    spec.validate().map_err(|e| e.in_stage("spec"))?;

    let catalog = catalog_def
        .build(spec.l_range.as_tuple(), spec.c_range.as_tuple())
        .map_err(|e| e.in_stage("catalog"))?;
    log::info!("catalog: {} inductors, {} capacitor banks", catalog.inductors.len(), catalog.banks.len());

    let sample = sample_grid(spec, &cfg.plan, &catalog, cfg.seed).map_err(|e| e.in_stage("sampling"))?;
    let evaluator = engine_evaluator(cfg.dataset_engine, spec, &cfg.switch, cfg.sim);
    let dataset = generate_dataset(&sample, &catalog, evaluator.as_ref());
    log::info!(
        "dataset: {} rows ({} duplicates merged, {} evaluations failed)",
        dataset.len(),
        dataset.duplicates,
        dataset.dropped
    );

    let train_cfg = TrainConfig {
        seed: cfg.seed,
        ..cfg.train
    };
    let (surrogates, training) =
        SurrogateSet::train(&dataset, spec, &cfg.structures, &train_cfg).map_err(|e| e.in_stage("training"))?;

    // Search on the surrogates, re-check the winner directly, and tighten
    // the violated ripple limits until the direct check passes.
    let space = search_space(spec, &catalog).map_err(|e| e.in_stage("optimization"))?;
    let ga_cfg = GaConfig { seed: cfg.seed, ..cfg.ga };
    let mut search_spec = tightened(spec, cfg.margin);
    let mut refinements = 0;
    let (ga, design) = loop {
        let surrogate_eval = SurrogateEvaluator {
            set: &surrogates,
            spec: &search_spec,
        };
        let ga =
            optimize(&search_spec, &space, &surrogate_eval, &ga_cfg).map_err(|e| e.in_stage("optimization"))?;
        let design = DesignRecord::from_result(&ga, &space);
        if !ga.feasible || refinements == cfg.max_refinements {
            break (ga, design);
        }
        let verified = evaluate_with(cfg.verify_engine, &design.point(), spec, &cfg.switch, &cfg.sim)
            .map_err(|e| e.in_stage("verification"))?;
        match retighten(&search_spec, spec, &verified) {
            Some(next) => {
                log::info!(
                    "winner fails direct check (dVo {:.4}, dIL {:.4}); retrying with tighter ripple limits",
                    verified.dvo,
                    verified.dil
                );
                search_spec = next;
                refinements += 1;
            }
            None => break (ga, design),
        }
    };
    if !ga.feasible {
        log::warn!("GA found no design meeting the search limits");
    }

    let baseline = conventional_design(spec, cfg.baseline_fs, &catalog).map_err(|e| e.in_stage("baseline"))?;
    let predicted = surrogates.predict_record(&design.point(), spec);
    let report = DesignReport::build(
        design.point(),
        Some(predicted),
        spec,
        &cfg.switch,
        cfg.verify_engine,
        &cfg.sim,
        Some(baseline),
        Some(cfg.seed),
    )
    .map_err(|e| e.in_stage("verification"))?;

    Ok(PipelineOutput {
        catalog,
        dataset,
        surrogates,
        training,
        search_spec,
        refinements,
        ga,
        design,
        report,
    })
}
