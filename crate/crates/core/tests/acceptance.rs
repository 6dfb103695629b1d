//! Acceptance criteria for the design toolkit. Each test prints one
//! `criterion N ... PASS|FAIL` line; run with `--nocapture` to see them.
//!
//! The criteria run one at a time so the wall-clock limits are measured
//! without competing tests on the same cores.

use std::path::PathBuf;
use std::sync::{Mutex, MutexGuard, OnceLock};
use std::time::{Duration, Instant};

use buckdesign::catalog::{build_capacitor_table, l_max, n_max, CatalogDef, Connection};
use buckdesign::convsim::{
    analytic_evaluate, simulate, DesignPoint, DesignSpec, PerformanceRecord, SimConfig, SwitchParams,
};
use buckdesign::designer::{
    conventional_design, evaluate_with, generate_dataset, run_pipeline, sample_grid, PipelineConfig,
    PipelineOutput, SpecFile,
};
use buckdesign::evo::{objective, optimize, AnalyticEvaluator, Evaluator, GaConfig, SearchSpace};
use buckdesign::surrogate::{
    gradient_check, input_ranges, Activation, Mode, Network, RidgeModel, Split, SurrogateSet, RIDGE_LAMBDA,
};
use ndarray::{Array2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(n: u32, name: &str, pass: bool, detail: &str) {
    println!("criterion {n} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "criterion {n} {name} failed: {detail}");
}

fn table_one() -> DesignSpec {
    DesignSpec::table_one()
}

#[test]
fn criterion_1_inductor_table() {
    let _g = serial();
    let start = Instant::now();
    let def = CatalogDef::design_case();
    let cat = def.build((1.0, 1e4), (20.0, 1000.0)).unwrap();
    let elapsed = start.elapsed();

    let mut pairs = Vec::new();
    for core in &def.cores {
        let n = n_max(core, &def.wire, def.ku).unwrap();
        pairs.push((n, l_max(core, n).round() as u32));
    }
    pairs.sort();
    let expected = [(56, 144), (74, 509), (93, 1003), (162, 2519)];

    // Each core's full-turn entry is present in the table.
    let tops_present = expected.iter().all(|&(n, l)| {
        cat.inductors
            .iter()
            .any(|e| e.turns == n && e.l_uh.round() as u32 == l)
    });
    let table3 = cat
        .inductors
        .iter()
        .any(|e| (e.l_uh - 281.3).abs() < 0.05 && e.core.name.starts_with("T106") && e.turns == 55);

    let pass = pairs == expected && tops_present && table3 && elapsed < Duration::from_secs(1);
    verdict(
        1,
        "inductor table",
        pass,
        &format!("pairs {pairs:?}, 281.3 µH T106 N=55 present {table3}, {elapsed:.2?}"),
    );
}

#[test]
fn criterion_2_capacitor_table() {
    let _g = serial();
    let def = CatalogDef::design_case();
    let start = Instant::now();
    let table = build_capacitor_table(&def.capacitors, 5, (20.0, 1000.0)).unwrap();
    let elapsed = start.elapsed();

    let idx = |c: f64| def.capacitors.iter().position(|r| r.c_uf == c).unwrap();
    let entry = |c: f64| table.iter().find(|e| (e.c_uf - c).abs() < 1e-9 * c);
    let e660 = entry(660.0).map(|e| e.connection.clone());
    let e112 = entry(112.0).map(|e| e.connection.clone());

    // Minimal volume among every bank of the table that realizes 660 µF.
    let min_660 = table
        .iter()
        .filter(|e| (e.c_uf - 660.0).abs() < 1e-9 * 660.0)
        .map(|e| e.volume_cm3)
        .fold(f64::INFINITY, f64::min);
    let two_330 = 2.0 * def.capacitors[idx(330.0)].volume_cm3;

    let pass = e660 == Some(Connection::Parallel(vec![idx(330.0), idx(330.0)]))
        && e112 == Some(Connection::Parallel(vec![idx(56.0), idx(56.0)]))
        && (min_660 - two_330).abs() < 1e-12
        && elapsed < Duration::from_secs(5);
    verdict(
        2,
        "capacitor table",
        pass,
        &format!("660 µF {e660:?}, 112 µF {e112:?}, {} banks, {elapsed:.2?}", table.len()),
    );
}

#[test]
fn criterion_3_conventional_baseline() {
    let _g = serial();
    let spec = table_one();
    let cat = CatalogDef::design_case().build(spec.l_range.as_tuple(), spec.c_range.as_tuple()).unwrap();
    let d = conventional_design(&spec, 20e3, &cat).unwrap();
    let pass = (d.l_calc_uh / 540.0 - 1.0).abs() <= 1e-3 && d.capacitor.c_uf == 56.0;
    verdict(
        3,
        "conventional baseline",
        pass,
        &format!("L_calc {:.3} µH, C {} µF", d.l_calc_uh, d.capacitor.c_uf),
    );
}

#[test]
fn criterion_4_ga_against_exhaustive_oracle() {
    let _g = serial();
    let spec = table_one();
    let sw = SwitchParams::default();
    let cat = CatalogDef::design_case().build(spec.l_range.as_tuple(), spec.c_range.as_tuple()).unwrap();
    let eval = AnalyticEvaluator { spec: &spec, switch: &sw };

    let start = Instant::now();
    let (mut hits, mut same_choice) = (0, 0);
    let mut worst = f64::MIN;
    for seed in 0..20u64 {
        // A fresh truncated instance per seed.
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let mut li = sample(&mut rng, cat.inductors.len(), 20).into_vec();
        let mut ci = sample(&mut rng, cat.banks.len(), 20).into_vec();
        li.sort_unstable();
        ci.sort_unstable();
        let inductors: Vec<_> = li.iter().map(|&i| cat.inductors[i].clone()).collect();
        let banks: Vec<_> = ci.iter().map(|&i| cat.banks[i].clone()).collect();

        // Exhaustive enumeration on a 50-point frequency grid: the least
        // objective overall, and the design the GA's reporting rule would
        // pick (feasible first, then least objective).
        let mut least = f64::INFINITY;
        let mut chosen = (true, f64::INFINITY);
        for k in 0..50 {
            let fs = spec.fs_range.min + (spec.fs_range.max - spec.fs_range.min) * k as f64 / 49.0;
            for l in &inductors {
                for c in &banks {
                    let r = eval.evaluate(fs, l, c).unwrap();
                    let o = objective(&r, &spec, 1.0);
                    least = least.min(o);
                    let key = (!r.feasible(&spec), o);
                    if key.0.cmp(&chosen.0).then(key.1.total_cmp(&chosen.1)).is_lt() {
                        chosen = key;
                    }
                }
            }
        }

        let space = SearchSpace {
            fs: spec.fs_range,
            inductors: &inductors,
            banks: &banks,
        };
        let ga = optimize(&spec, &space, &eval, &GaConfig { seed, ..GaConfig::default() }).unwrap();
        // The GA searches frequency continuously and may land below the grid.
        let attained = ga.history.iter().map(|h| h.best_o).fold(ga.best.objective, f64::min);
        hits += usize::from(attained <= least * 1.01);
        worst = worst.max((attained / least - 1.0) * 100.0);
        let reported = (!ga.best.feasible, ga.best.objective);
        same_choice += usize::from(reported.0 == chosen.0 && reported.1 <= chosen.1 * 1.01);
    }
    let elapsed = start.elapsed();
    let pass = hits >= 19 && elapsed < Duration::from_secs(10);
    verdict(
        4,
        "GA vs exhaustive oracle",
        pass,
        &format!(
            "{hits}/20 attain the least objective within 1%, worst gap {worst:+.3}%; \
             reported design matches the feasible-first choice in {same_choice}/20; {elapsed:.2?}"
        ),
    );
}

#[test]
fn criterion_5_surrogates_beat_ridge() {
    let _g = serial();
    let file = SpecFile::table_one();
    let spec = file.design_spec();
    let cfg = PipelineConfig::from_spec_file(&file, None);
    let cat = CatalogDef::design_case().build(spec.l_range.as_tuple(), spec.c_range.as_tuple()).unwrap();
    let grid = sample_grid(&spec, &cfg.plan, &cat, cfg.seed).unwrap();
    let eval = AnalyticEvaluator { spec: &spec, switch: &cfg.switch };
    let data = generate_dataset(&grid, &cat, &eval);

    let start = Instant::now();
    let train = buckdesign::surrogate::TrainConfig { seed: cfg.seed, ..cfg.train };
    let (set, summary) = SurrogateSet::train(&data, &spec, &cfg.structures, &train).unwrap();
    let elapsed = start.elapsed();

    let ranges = input_ranges(&spec);
    let mut ratios = Vec::new();
    for (m, s) in set.models.iter().zip(&summary) {
        let ridge = RidgeModel::fit(&data, &m.targets, &ranges, RIDGE_LAMBDA).unwrap();
        let nn = m.split_mse(&data, Split::Test).unwrap();
        let lin = ridge.split_mse(&data, Split::Test).unwrap();
        ratios.push((s.group.clone(), lin / nn));
    }
    let rows = data.len() + data.duplicates;
    let pass = rows == 8000 && ratios.iter().all(|(_, r)| *r >= 5.0) && elapsed < Duration::from_secs(600);
    let shown: Vec<String> = ratios.iter().map(|(g, r)| format!("{g} {r:.1}x")).collect();
    verdict(
        5,
        "surrogate fidelity",
        pass,
        &format!("{rows} samples, ridge/NN test MSE {}, training {elapsed:.1?}", shown.join(", ")),
    );
}

#[test]
fn criterion_6_batch_normalization() {
    let _g = serial();
    // Normalized variance is exactly s2/(s2 + eps) for batch variance s2, so
    // it sits within 1e-4 of one only where s2 >= 0.1; every channel is held
    // to the exact identity and those channels to the 1e-4 bound.
    let mut worst_mean = 0.0_f64;
    let mut worst_identity = 0.0_f64;
    let mut worst_var = 0.0_f64;
    let mut worst_grad = 0.0_f64;
    let (mut channels, mut narrow) = (0, 0);
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut net = Network::new(3, 3, 16, 2, Activation::Relu, &mut rng).unwrap();
        let x = Array2::from_shape_simple_fn((64, 3), || rng.random_range(-2.0..2.0));
        let (_, trace) = net.forward_batch(&x, Mode::Train).unwrap();
        for ((z, input), bn) in trace.normalized.iter().zip(&trace.inputs).zip(&net.hidden) {
            let pre = input.dot(&bn.weight.t()) + &bn.bias;
            let s2 = pre.var_axis(Axis(0), 0.0);
            let mean = z.mean_axis(Axis(0)).unwrap();
            let var = z.var_axis(Axis(0), 0.0);
            for k in 0..z.ncols() {
                channels += 1;
                worst_mean = worst_mean.max(mean[k].abs());
                worst_identity = worst_identity.max((var[k] - s2[k] / (s2[k] + bn.epsilon)).abs());
                if s2[k] >= 0.1 {
                    worst_var = worst_var.max((var[k] - 1.0).abs());
                } else {
                    narrow += 1;
                }
            }
        }

        let smooth = Network::new(3, 2, 6, 2, Activation::Softplus, &mut rng).unwrap();
        let xs = Array2::from_shape_simple_fn((12, 3), || rng.random_range(-2.0..2.0));
        let ys = Array2::from_shape_simple_fn((12, 2), || rng.random_range(-2.0..2.0));
        worst_grad = worst_grad.max(gradient_check(&smooth, &xs, &ys, 1.0).unwrap().max_rel_error);
    }
    let pass = worst_mean < 1e-6 && worst_identity < 1e-9 && worst_var < 1e-4 && worst_grad < 1e-4;
    verdict(
        6,
        "batch normalization",
        pass,
        &format!(
            "{channels} channels: max |mean| {worst_mean:.1e}, max |var-1| {worst_var:.1e} \
             ({narrow} channels with batch variance < 0.1 held to the exact shrinkage, max error {worst_identity:.1e}), \
             max gradient error {worst_grad:.1e}"
        ),
    );
}

#[test]
fn criterion_7_engines_agree() {
    let _g = serial();
    let spec = table_one();
    let sw = SwitchParams::default();
    let cat = CatalogDef::design_case().build(spec.l_range.as_tuple(), spec.c_range.as_tuple()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let cond = |r: &PerformanceRecord| r.p_ls1 + r.p_ls2 + r.p_lcu;
    let rel = |a: f64, b: f64| (a / b - 1.0).abs();

    let (mut checked, mut agree) = (0, 0);
    let mut worst = [0.0_f64; 4];
    while checked < 100 {
        let p = DesignPoint::new(
            rng.random_range(spec.fs_range.min..=spec.fs_range.max),
            cat.inductors[rng.random_range(0..cat.inductors.len())].clone(),
            cat.banks[rng.random_range(0..cat.banks.len())].clone(),
        );
        let a = analytic_evaluate(&p, &spec, &sw).unwrap();
        if !a.ccm {
            continue;
        }
        let r = simulate(&p, &spec, &sw, &SimConfig::default(), false).unwrap();
        let t = r.record;
        let errs = [
            rel(t.dil, a.dil),
            rel(t.dvo, a.dvo),
            rel(cond(&t), cond(&a)),
            r.diagnostics.balance_error,
        ];
        for (w, e) in worst.iter_mut().zip(errs) {
            *w = w.max(e);
        }
        if t.ccm && errs[0] <= 0.02 && errs[1] <= 0.10 && errs[2] <= 0.05 && errs[3] <= 0.01 {
            agree += 1;
        }
        checked += 1;
    }
    verdict(
        7,
        "engine self-consistency",
        agree == checked,
        &format!(
            "{agree}/{checked} CCM points; worst dIL {:.2}%, dVo {:.2}%, conduction {:.2}%, balance {:.3}%",
            worst[0] * 100.0,
            worst[1] * 100.0,
            worst[2] * 100.0,
            worst[3] * 100.0
        ),
    );
}

/// Two full Table I pipeline runs with the bundled seed, written to disk.
struct Runs {
    first: PipelineOutput,
    dirs: [PathBuf; 2],
    _tmp: tempfile::TempDir,
}

fn runs() -> &'static Runs {
    static RUNS: OnceLock<Runs> = OnceLock::new();
    RUNS.get_or_init(|| {
        let file = SpecFile::table_one();
        let spec = file.design_spec();
        let cfg = PipelineConfig::from_spec_file(&file, None);
        let def = CatalogDef::design_case();
        let tmp = tempfile::tempdir().unwrap();
        let dirs = [tmp.path().join("run1"), tmp.path().join("run2")];
        let first = run_pipeline(&spec, &def, &cfg).unwrap();
        first.write(&dirs[0]).unwrap();
        run_pipeline(&spec, &def, &cfg).unwrap().write(&dirs[1]).unwrap();
        Runs { first, dirs, _tmp: tmp }
    })
}

#[test]
fn criterion_8_pipeline_beats_baseline() {
    let _g = serial();
    let out = &runs().first;
    let file = SpecFile::table_one();
    let spec = file.design_spec();
    let cfg = PipelineConfig::from_spec_file(&file, None);

    let verified = &out.report.verified;
    let base = conventional_design(&spec, cfg.baseline_fs, &out.catalog).unwrap();
    let base_perf = evaluate_with(cfg.verify_engine, &base.point(), &spec, &cfg.switch, &cfg.sim).unwrap();
    let feasible = verified.feasible(&spec);
    let pass = feasible && verified.total_loss() <= base_perf.total_loss();
    verdict(
        8,
        "pipeline vs baseline",
        pass,
        &format!(
            "design fs {:.1} kHz, L {:.1} µH, C {:.1} µF: loss {:.3} W, Vol {:.3} cm³, dVo {:.3}%, dIL {:.2}%; baseline loss {:.3} W",
            out.design.fs / 1e3,
            out.design.inductor.l_uh,
            out.design.capacitor.c_uf,
            verified.total_loss(),
            verified.vol,
            verified.dvo * 100.0,
            verified.dil * 100.0,
            base_perf.total_loss()
        ),
    );
}

#[test]
fn criterion_9_determinism() {
    let _g = serial();
    let r = runs();
    let same = |f: &str| std::fs::read(r.dirs[0].join(f)).unwrap() == std::fs::read(r.dirs[1].join(f)).unwrap();
    let design = same("design.json");
    let dataset = same("dataset.csv");
    verdict(
        9,
        "determinism",
        design && dataset,
        &format!("design.json identical {design}, dataset.csv identical {dataset}"),
    );
}
