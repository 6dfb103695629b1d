use std::f64::consts::TAU;

use buckdesign::catalog::{CapBankEntry, CatalogDef, InductorEntry};
use buckdesign::convsim::{DesignSpec, Engine, PerformanceRecord, SimConfig, SwitchParams};
use buckdesign::designer::{
    conventional_design, engine_evaluator, evaluate_with, generate_dataset, run_pipeline, sample_grid, search_space,
    DesignReport, PipelineConfig, SamplingPlan, SpecFile,
};
use buckdesign::evo::{optimize, DesignRecord, Evaluator, GaConfig};
use buckdesign::surrogate::TrainConfig;
use buckdesign::{Error, Result};

fn table_one() -> (DesignSpec, buckdesign::catalog::Catalog) {
    let spec = DesignSpec::table_one();
    let cat = CatalogDef::design_case().build(spec.l_range.as_tuple(), spec.c_range.as_tuple()).unwrap();
    (spec, cat)
}

/// Table I case with a small grid, short training and a small GA.
fn small_config(seed: u64) -> PipelineConfig {
    let mut cfg = PipelineConfig::from_spec_file(&SpecFile::table_one(), Some(seed));
    cfg.plan = SamplingPlan::new(5, 5, 5);
    cfg.train = TrainConfig {
        epochs: 30,
        decay_every: 10,
        finetune_epochs: 30,
        batch_size: 16,
        ..cfg.train
    };
    cfg.ga = GaConfig {
        population: 20,
        generations: 10,
        restarts: 1,
        polish: false,
        ..cfg.ga
    };
    cfg.verify_engine = Engine::Analytic;
    cfg
}

#[test]
fn baseline_reproduces_table_six() {
    let (spec, cat) = table_one();
    let d = conventional_design(&spec, 20e3, &cat).unwrap();
    assert!((d.l_calc_uh - 540.0).abs() < 1e-9);
    assert!((d.c_calc_uf - 51.14).abs() < 0.01);
    assert_eq!(d.capacitor.c_uf, 56.0);
    assert_eq!(d.capacitor.count, 1);
    assert_eq!(d.duty, 0.25);
}

#[test]
fn dataset_engines_agree_on_a_subsample() {
    let (spec, cat) = table_one();
    let sw = SwitchParams::default();
    let sample = sample_grid(&spec, &SamplingPlan::default(), &cat, 1).unwrap();
    let analytic = engine_evaluator(Engine::Analytic, &spec, &sw, SimConfig::default());
    let transient = engine_evaluator(Engine::Transient, &spec, &sw, SimConfig::default());
    let mut compared = 0;
    for p in sample.points.iter().step_by(sample.points.len() / 120) {
        let (l, c) = (&cat.inductors[p.l_idx], &cat.banks[p.c_idx]);
        // Closed-form slopes assume a steady output, so fs well above the LC corner.
        let f_lc = 1.0 / (TAU * (l.l_uh * 1e-6 * c.c_farad()).sqrt());
        if p.fs < 5.0 * f_lc {
            continue;
        }
        let a = analytic.evaluate(p.fs, l, c).unwrap();
        if !a.ccm {
            continue;
        }
        let t = transient.evaluate(p.fs, l, c).unwrap();
        assert!((t.dil / a.dil - 1.0).abs() < 0.02, "dIL {} vs {}", t.dil, a.dil);
        assert!((t.dvo / a.dvo - 1.0).abs() < 0.10, "dVo {} vs {}", t.dvo, a.dvo);
        let cond = |r: &PerformanceRecord| r.p_ls1 + r.p_ls2 + r.p_lcu;
        assert!((cond(&t) / cond(&a) - 1.0).abs() < 0.05);
        compared += 1;
        if compared == 50 {
            break;
        }
    }
    assert_eq!(compared, 50);
}

#[test]
fn failed_rows_are_dropped_and_counted() {
    struct HighOnly;
    impl Evaluator for HighOnly {
        fn evaluate(&self, fs: f64, _: &InductorEntry, _: &CapBankEntry) -> Result<PerformanceRecord> {
            if fs < 100e3 {
                return Err(Error::Domain("too slow".into()));
            }
            Ok(PerformanceRecord {
                p_ls1: 1.0,
                p_ls2: 1.0,
                p_lcu: 1.0,
                p_lfe: 1.0,
                p_lc: 1.0,
                dvo: 0.001,
                dil: 0.01,
                vol: 1.0,
                eta: 0.95,
                duty: 0.25,
                ccm: true,
            })
        }
    }
    let (spec, cat) = table_one();
    let sample = sample_grid(&spec, &SamplingPlan::new(4, 3, 3), &cat, 0).unwrap();
    let data = generate_dataset(&sample, &cat, &HighOnly);
    assert_eq!(data.len() + data.dropped, sample.points.len());
    assert_eq!(data.dropped, 18);
    assert!(data.rows.iter().all(|r| r.fs_hz >= 100e3));
}

#[test]
fn feasibility_comes_from_the_direct_check() {
    let (spec, cat) = table_one();
    let sw = SwitchParams::default();
    let base = conventional_design(&spec, 20e3, &cat).unwrap();
    // A flattering prediction must not rescue an oversize design.
    let mut predicted = evaluate_with(Engine::Analytic, &base.point(), &spec, &sw, &SimConfig::default()).unwrap();
    predicted.vol = 1.0;
    predicted.dil = 0.05;
    assert!(predicted.feasible(&spec));
    let r = DesignReport::build(
        base.point(),
        Some(predicted),
        &spec,
        &sw,
        Engine::Analytic,
        &SimConfig::default(),
        None,
        None,
    )
    .unwrap();
    assert!(!r.feasible);
    let vol = r.constraints.iter().find(|c| c.name == "Vol").unwrap();
    assert!(!vol.pass && vol.value > 7.0);
    assert_eq!(r.sweep.len(), 10);
}

#[test]
fn stage_failures_are_tagged() {
    let def = CatalogDef::design_case();
    let stage = |r: Result<_>| match r {
        Err(Error::Stage { stage, .. }) => stage,
        Err(e) => panic!("untagged error {e}"),
        Ok(_) => panic!("expected failure"),
    };

    let mut spec = DesignSpec::table_one();
    spec.v_o = 60.0;
    assert_eq!(stage(run_pipeline(&spec, &def, &small_config(0))), "spec");

    let mut spec = DesignSpec::table_one();
    spec.l_range = buckdesign::convsim::Range::new(1e6, 2e6);
    assert_eq!(stage(run_pipeline(&spec, &def, &small_config(0))), "catalog");

    let mut cfg = small_config(0);
    cfg.train.learning_rate = 1e300;
    assert_eq!(stage(run_pipeline(&DesignSpec::table_one(), &def, &cfg)), "training");

    let mut cfg = small_config(0);
    cfg.baseline_fs = 5e3;
    assert_eq!(stage(run_pipeline(&DesignSpec::table_one(), &def, &cfg)), "baseline");
}

#[test]
fn small_pipeline_writes_reproducible_artifacts() {
    let def = CatalogDef::design_case();
    let spec = DesignSpec::table_one();
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = run_pipeline(&spec, &def, &small_config(9)).unwrap();
        out.write(dir.path().join(name)).unwrap();
        assert!(out.refinements <= small_config(9).max_refinements);
        assert_eq!(out.report.feasible, out.report.verified.feasible(&spec));
        assert_eq!(out.report.seed, Some(9));
        outputs.push(out);
    }
    for f in [
        "catalog.json",
        "dataset.csv",
        "surrogates.json",
        "training.json",
        "ga_history.csv",
        "design.json",
        "report/report.json",
        "report/sweep.svg",
    ] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
    let rec = DesignRecord::load(dir.path().join("a/design.json")).unwrap();
    assert_eq!(rec, outputs[0].design);
    assert_eq!(outputs[0].dataset.len() + outputs[0].dataset.duplicates, 125);

    let other = run_pipeline(&spec, &def, &small_config(10)).unwrap();
    assert_ne!(other.dataset, outputs[0].dataset);
}

#[test]
fn direct_search_lands_near_the_surrogate_design() {
    let file = SpecFile::table_one();
    let spec = file.design_spec();
    let cfg = PipelineConfig::from_spec_file(&file, None);
    let out = run_pipeline(&spec, &CatalogDef::design_case(), &cfg).unwrap();
    assert!(out.report.feasible, "{:?}", out.report.constraints);

    let space = search_space(&spec, &out.catalog).unwrap();
    let analytic = engine_evaluator(Engine::Analytic, &spec, &cfg.switch, cfg.sim);
    let ga = optimize(&spec, &space, analytic.as_ref(), &GaConfig { seed: cfg.seed, ..cfg.ga }).unwrap();
    let direct = DesignRecord::from_result(&ga, &space);
    let direct_loss = evaluate_with(cfg.verify_engine, &direct.point(), &spec, &cfg.switch, &cfg.sim)
        .unwrap()
        .total_loss();
    let surrogate_loss = out.report.verified.total_loss();
    assert!(
        (direct_loss - surrogate_loss).abs() <= 0.10 * surrogate_loss,
        "direct {direct_loss} W vs surrogate-driven {surrogate_loss} W"
    );
}
