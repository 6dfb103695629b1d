//! Command-line front end for the buck converter design flow.
//!
//! Exit codes: 0 on success or a feasible design, 2 when the design checked
//! by the command violates a constraint, 1 on any error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use buckdesign::catalog::{nearest_entry, Catalog, CatalogDef};
use buckdesign::convsim::{DesignPoint, DesignSpec, Engine, PerformanceRecord};
use buckdesign::designer::{
    constraint_rows, conventional_design, engine_evaluator, evaluate_with, generate_dataset, run_pipeline,
    sample_grid, search_space, tightened, DesignReport, PipelineConfig, SpecFile, SurrogateEvaluator,
};
use buckdesign::evo::{optimize, write_history_csv, DesignRecord, Evaluator, GaConfig};
use buckdesign::surrogate::{Dataset, SurrogateSet, TrainConfig};

const EXIT_INFEASIBLE: u8 = 2;

#[derive(Parser)]
#[command(name = "buckdesign", version, about = "Surrogate-assisted synchronous buck converter design")]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Design spec (TOML); defaults to the bundled 48 V to 12 V, 100 W case.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Built catalog (JSON from `catalog build`); rebuilt from the bundled
    /// definition when omitted.
    #[arg(long)]
    catalog: Option<PathBuf>,
    /// Overrides the seed in the spec file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Component lookup tables.
    #[command(subcommand)]
    Catalog(CatalogCommand),
    /// Sample the (fs, L, C) grid and evaluate every row.
    Dataset {
        #[command(flatten)]
        common: Common,
        /// Engine used to evaluate rows; defaults to the spec's dataset engine.
        #[arg(long)]
        engine: Option<Engine>,
        #[arg(long, default_value = "dataset.csv")]
        out: PathBuf,
    },
    /// Train the four surrogate networks on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset CSV written by `dataset`.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "surrogates.json")]
        out: PathBuf,
        /// Also write the per-group training summary (JSON).
        #[arg(long)]
        summary: Option<PathBuf>,
    },
    /// Run the GA over surrogates or a direct engine.
    Optimize {
        #[command(flatten)]
        common: Common,
        /// Surrogate set; the search then uses the spec's ripple margin.
        #[arg(long, conflicts_with = "engine")]
        surrogates: Option<PathBuf>,
        /// Direct engine to optimize on when no surrogates are given.
        #[arg(long)]
        engine: Option<Engine>,
        #[arg(long, default_value = "design.json")]
        out: PathBuf,
        /// GA history CSV.
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Conventional ripple-driven design at a fixed frequency.
    Baseline {
        #[command(flatten)]
        common: Common,
        /// Switching frequency in Hz; defaults to the spec's baseline frequency.
        #[arg(long)]
        fs: Option<f64>,
        #[arg(long, default_value = "analytic")]
        engine: Engine,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate one design point.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        point: PointArgs,
        #[arg(long, default_value = "analytic")]
        engine: Engine,
        /// Performance record (JSON).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-evaluate a design and write the report files.
    Report {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        point: PointArgs,
        /// Surrogate set for the predicted column.
        #[arg(long)]
        surrogates: Option<PathBuf>,
        #[arg(long)]
        engine: Option<Engine>,
        /// Baseline frequency in Hz; defaults to the spec's baseline frequency.
        #[arg(long)]
        baseline_fs: Option<f64>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// End to end: catalog, dataset, training, GA, verification, report.
    Pipeline {
        #[command(flatten)]
        common: Common,
        /// Catalog definition (TOML); defaults to the bundled design case.
        #[arg(long)]
        catalog_def: Option<PathBuf>,
        /// Verification engine; defaults to the spec's verify engine.
        #[arg(long)]
        engine: Option<Engine>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum CatalogCommand {
    /// Build the inductor and capacitor-bank tables.
    Build {
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Catalog definition (TOML); defaults to the bundled design case.
        #[arg(long)]
        def: Option<PathBuf>,
        #[arg(long, default_value = "catalog.json")]
        out: PathBuf,
    },
}

/// A design given either as a JSON record or as values snapped to the catalog.
#[derive(Args, Clone)]
struct PointArgs {
    /// Design record written by `optimize` or `pipeline`.
    #[arg(long, conflicts_with_all = ["fs", "l_uh", "c_uf"])]
    design: Option<PathBuf>,
    /// Hz.
    #[arg(long, requires_all = ["l_uh", "c_uf"])]
    fs: Option<f64>,
    /// µH, snapped to the nearest catalog inductor.
    #[arg(long)]
    l_uh: Option<f64>,
    /// µF, snapped to the nearest capacitor bank.
    #[arg(long)]
    c_uf: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_INFEASIBLE),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

struct Loaded {
    file: SpecFile,
    spec: DesignSpec,
}

fn load_spec(path: Option<&Path>) -> Result<Loaded> {
    let file = match path {
        Some(p) => SpecFile::load(p).with_context(|| format!("reading spec {}", p.display()))?,
        None => SpecFile::table_one(),
    };
    let spec = file.design_spec();
    Ok(Loaded { file, spec })
}

fn load_catalog(path: Option<&Path>, spec: &DesignSpec) -> Result<Catalog> {
    match path {
        Some(p) => Catalog::load(p).with_context(|| format!("reading catalog {}", p.display())),
        None => Ok(CatalogDef::design_case().build(spec.l_range.as_tuple(), spec.c_range.as_tuple())?),
    }
}

fn load_catalog_def(path: Option<&Path>) -> Result<CatalogDef> {
    match path {
        Some(p) => CatalogDef::load(p).with_context(|| format!("reading catalog definition {}", p.display())),
        None => Ok(CatalogDef::design_case()),
    }
}

fn resolve_point(args: &PointArgs, catalog: &Catalog, spec: &DesignSpec) -> Result<DesignPoint> {
    if let Some(p) = &args.design {
        let rec = DesignRecord::load(p).with_context(|| format!("reading design {}", p.display()))?;
        return Ok(rec.point());
    }
    let (Some(fs), Some(l), Some(c)) = (args.fs, args.l_uh, args.c_uf) else {
        bail!("give either --design or all of --fs, --l-uh and --c-uf");
    };
    if !spec.fs_range.contains(fs) {
        bail!("fs = {fs} Hz is outside [{}, {}] Hz", spec.fs_range.min, spec.fs_range.max);
    }
    let inductor = nearest_entry(&catalog.inductors, l)?.clone();
    let capacitor = nearest_entry(&catalog.banks, c)?.clone();
    Ok(DesignPoint::new(fs, inductor, capacitor))
}

fn print_performance(label: &str, p: &PerformanceRecord, spec: &DesignSpec) {
    println!(
        "{label}: P_Ltot {:.4} W, eta {:.2}%, {}",
        p.total_loss(),
        p.eta * 100.0,
        if p.ccm { "CCM" } else { "DCM" }
    );
    for r in constraint_rows(p, spec) {
        println!(
            "  {:<8} {:>10.4} / {:<8.4} {}",
            r.name,
            r.value,
            r.limit,
            if r.pass { "pass" } else { "FAIL" }
        );
    }
}

fn print_point(p: &DesignPoint) {
    println!(
        "design: fs {:.1} Hz, L {:.3} µH ({} N={}), C {:.3} µF ({} parts), volume {:.3} cm³",
        p.fs,
        p.inductor.l_uh,
        p.inductor.core.name,
        p.inductor.turns,
        p.capacitor.c_uf,
        p.capacitor.count,
        p.volume_cm3()
    );
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

/// Runs one command; `Ok(false)` means an infeasible design.
fn run(command: Command) -> Result<bool> {
    match command {
        Command::Catalog(CatalogCommand::Build { spec, def, out }) => {
            let ctx = load_spec(spec.as_deref())?;
            let catalog = load_catalog_def(def.as_deref())?.build(ctx.spec.l_range.as_tuple(), ctx.spec.c_range.as_tuple())?;
            catalog.save(&out).with_context(|| format!("writing {}", out.display()))?;
            println!(
                "{} inductors, {} capacitor banks -> {}",
                catalog.inductors.len(),
                catalog.banks.len(),
                out.display()
            );
            Ok(true)
        }

        Command::Dataset { common, engine, out } => {
            let ctx = load_spec(common.spec.as_deref())?;
            let catalog = load_catalog(common.catalog.as_deref(), &ctx.spec)?;
            let cfg = PipelineConfig::from_spec_file(&ctx.file, common.seed);
            let engine = engine.unwrap_or(cfg.dataset_engine);
            let sample = sample_grid(&ctx.spec, &cfg.plan, &catalog, cfg.seed)?;
            let evaluator = engine_evaluator(engine, &ctx.spec, &cfg.switch, cfg.sim);
            let data = generate_dataset(&sample, &catalog, evaluator.as_ref());
            data.save(&out).with_context(|| format!("writing {}", out.display()))?;
            println!(
                "{} rows ({} duplicates merged, {} failed) -> {}",
                data.len(),
                data.duplicates,
                data.dropped,
                out.display()
            );
            Ok(true)
        }

        Command::Train {
            common,
            data,
            out,
            summary,
        } => {
            let ctx = load_spec(common.spec.as_deref())?;
            let cfg = PipelineConfig::from_spec_file(&ctx.file, common.seed);
            let dataset = Dataset::load(&data).with_context(|| format!("reading dataset {}", data.display()))?;
            let train_cfg = TrainConfig {
                seed: cfg.seed,
                ..cfg.train
            };
            let (set, groups) = SurrogateSet::train(&dataset, &ctx.spec, &cfg.structures, &train_cfg)?;
            set.save(&out).with_context(|| format!("writing {}", out.display()))?;
            for g in &groups {
                println!(
                    "{:<10} structure {} train MSE {:.3e} test MSE {}",
                    g.group,
                    g.structure,
                    g.meta.train_mse,
                    g.meta.test_mse.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".into())
                );
            }
            if let Some(p) = summary {
                write_json(&p, &groups)?;
            }
            Ok(true)
        }

        Command::Optimize {
            common,
            surrogates,
            engine,
            out,
            history,
        } => {
            let ctx = load_spec(common.spec.as_deref())?;
            let catalog = load_catalog(common.catalog.as_deref(), &ctx.spec)?;
            let cfg = PipelineConfig::from_spec_file(&ctx.file, common.seed);
            let space = search_space(&ctx.spec, &catalog)?;
            let ga_cfg = GaConfig { seed: cfg.seed, ..cfg.ga };
            let set = surrogates
                .as_deref()
                .map(|p| SurrogateSet::load(p).with_context(|| format!("reading surrogates {}", p.display())))
                .transpose()?;
            let search_spec = if set.is_some() { tightened(&ctx.spec, cfg.margin) } else { ctx.spec.clone() };
            let direct;
            let surrogate;
            let evaluator: &dyn Evaluator = match &set {
                Some(set) => {
                    surrogate = SurrogateEvaluator { set, spec: &search_spec };
                    &surrogate
                }
                None => {
                    direct = engine_evaluator(engine.unwrap_or_default(), &ctx.spec, &cfg.switch, cfg.sim);
                    direct.as_ref()
                }
            };
            let result = optimize(&search_spec, &space, evaluator, &ga_cfg)?;
            let record = DesignRecord::from_result(&result, &space);
            record.save(&out).with_context(|| format!("writing {}", out.display()))?;
            if let Some(p) = history {
                let f = std::fs::File::create(&p).with_context(|| format!("writing {}", p.display()))?;
                write_history_csv(f, &result.history)?;
            }
            print_point(&record.point());
            print_performance("predicted", &record.performance, &ctx.spec);
            println!("{} evaluations, objective {:.5}", result.evaluations, result.best.objective);
            Ok(record.feasible)
        }

        Command::Baseline {
            common,
            fs,
            engine,
            out,
        } => {
            let ctx = load_spec(common.spec.as_deref())?;
            let catalog = load_catalog(common.catalog.as_deref(), &ctx.spec)?;
            let cfg = PipelineConfig::from_spec_file(&ctx.file, common.seed);
            let design = conventional_design(&ctx.spec, fs.unwrap_or(cfg.baseline_fs), &catalog)?;
            println!(
                "L_calc {:.3} µH -> {:.3} µH, C_calc {:.3} µF -> {:.3} µF ({} parts)",
                design.l_calc_uh, design.inductor.l_uh, design.c_calc_uf, design.capacitor.c_uf, design.capacitor.count
            );
            let perf = evaluate_with(engine, &design.point(), &ctx.spec, &cfg.switch, &cfg.sim)?;
            print_point(&design.point());
            print_performance(&engine.to_string(), &perf, &ctx.spec);
            if let Some(p) = out {
                write_json(&p, &serde_json::json!({ "design": design, "engine": engine, "performance": perf }))?;
            }
            Ok(perf.feasible(&ctx.spec))
        }

        Command::Evaluate {
            common,
            point,
            engine,
            out,
        } => {
            let ctx = load_spec(common.spec.as_deref())?;
            let catalog = load_catalog(common.catalog.as_deref(), &ctx.spec)?;
            let cfg = PipelineConfig::from_spec_file(&ctx.file, common.seed);
            let point = resolve_point(&point, &catalog, &ctx.spec)?;
            let perf = evaluate_with(engine, &point, &ctx.spec, &cfg.switch, &cfg.sim)?;
            print_point(&point);
            print_performance(&engine.to_string(), &perf, &ctx.spec);
            if let Some(p) = out {
                write_json(&p, &perf)?;
            }
            Ok(perf.feasible(&ctx.spec))
        }

        Command::Report {
            common,
            point,
            surrogates,
            engine,
            baseline_fs,
            out,
        } => {
            let ctx = load_spec(common.spec.as_deref())?;
            let catalog = load_catalog(common.catalog.as_deref(), &ctx.spec)?;
            let cfg = PipelineConfig::from_spec_file(&ctx.file, common.seed);
            let design = resolve_point(&point, &catalog, &ctx.spec)?;
            let predicted = match surrogates {
                Some(p) => Some(
                    SurrogateSet::load(&p)
                        .with_context(|| format!("reading surrogates {}", p.display()))?
                        .predict_record(&design, &ctx.spec),
                ),
                None => None,
            };
            let baseline = conventional_design(&ctx.spec, baseline_fs.unwrap_or(cfg.baseline_fs), &catalog)?;
            let report = DesignReport::build(
                design,
                predicted,
                &ctx.spec,
                &cfg.switch,
                engine.unwrap_or(cfg.verify_engine),
                &cfg.sim,
                Some(baseline),
                Some(cfg.seed),
            )?;
            let files = report.write(&out).with_context(|| format!("writing report to {}", out.display()))?;
            summarize_report(&report, &ctx.spec);
            println!("report -> {}", files.json.display());
            Ok(report.feasible)
        }

        Command::Pipeline {
            common,
            catalog_def,
            engine,
            out,
        } => {
            let ctx = load_spec(common.spec.as_deref())?;
            if common.catalog.is_some() {
                bail!("`pipeline` builds its own catalog; pass a definition with --catalog-def");
            }
            let def = load_catalog_def(catalog_def.as_deref())?;
            let mut cfg = PipelineConfig::from_spec_file(&ctx.file, common.seed);
            if let Some(e) = engine {
                cfg.verify_engine = e;
            }
            let output = run_pipeline(&ctx.spec, &def, &cfg)?;
            output.write(&out).with_context(|| format!("writing artifacts to {}", out.display()))?;
            summarize_report(&output.report, &ctx.spec);
            if output.refinements > 0 {
                println!("GA rerun {} time(s) with tighter ripple limits", output.refinements);
            }
            println!("artifacts -> {}", out.display());
            Ok(output.report.feasible)
        }
    }
}

fn summarize_report(report: &DesignReport, spec: &DesignSpec) {
    print_point(&report.design);
    if let Some(p) = &report.predicted {
        println!("predicted: P_Ltot {:.4} W", p.total_loss());
    }
    print_performance(&format!("verified ({})", report.engine), &report.verified, spec);
    if let Some(b) = &report.baseline {
        println!(
            "baseline at {:.0} Hz: P_Ltot {:.4} W, {}",
            b.design.fs,
            b.performance.total_loss(),
            if b.feasible { "feasible" } else { "infeasible" }
        );
    }
    if let Some(w) = &report.saturation {
        println!("warning: peak flux {:.3} T is close to saturation ({:.3} T)", w.b_peak, w.b_sat);
    }
}
