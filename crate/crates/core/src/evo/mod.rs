//! Penalty-fitness genetic algorithm over `(fs, inductor index, bank index)`.
//!
//! The objective adds one penalty per violated constraint to the total loss;
//! fitness rescales objectives of a generation to `[ξ, 1 + ξ]`. Selection is
//! roulette-wheel on fitness, with elitism.

use std::io::Write;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{CapBankEntry, InductorEntry};
use crate::convsim::{
    analytic_evaluate, transient_evaluate, DesignPoint, DesignSpec, PerformanceRecord, Range, SimConfig,
    SwitchParams,
};
use crate::error::{Error, Result};
use crate::rng;

/// Anything that maps a candidate design to its performance.
pub trait Evaluator: Sync {
    fn evaluate(&self, fs: f64, inductor: &InductorEntry, bank: &CapBankEntry) -> Result<PerformanceRecord>;
}

/// Closed-form circuit evaluation.
pub struct AnalyticEvaluator<'a> {
    pub spec: &'a DesignSpec,
    pub switch: &'a SwitchParams,
}

impl Evaluator for AnalyticEvaluator<'_> {
    fn evaluate(&self, fs: f64, inductor: &InductorEntry, bank: &CapBankEntry) -> Result<PerformanceRecord> {
        analytic_evaluate(&DesignPoint::new(fs, inductor.clone(), bank.clone()), self.spec, self.switch)
    }
}

/// Time-stepped circuit evaluation.
pub struct TransientEvaluator<'a> {
    pub spec: &'a DesignSpec,
    pub switch: &'a SwitchParams,
    pub sim: SimConfig,
}

impl Evaluator for TransientEvaluator<'_> {
    fn evaluate(&self, fs: f64, inductor: &InductorEntry, bank: &CapBankEntry) -> Result<PerformanceRecord> {
        let point = DesignPoint::new(fs, inductor.clone(), bank.clone());
        transient_evaluate(&point, self.spec, self.switch, &self.sim)
    }
}

/// Candidate tables the GA indexes into; both already limited to the design ranges.
#[derive(Debug, Clone, Copy)]
pub struct SearchSpace<'a> {
    pub fs: Range,
    pub inductors: &'a [InductorEntry],
    pub banks: &'a [CapBankEntry],
}

impl SearchSpace<'_> {
    fn validate(&self) -> Result<()> {
        if self.inductors.is_empty() || self.banks.is_empty() {
            return Err(Error::EmptyTable("search space has no inductor or no capacitor bank".into()));
        }
        if !(self.fs.min > 0.0 && self.fs.min <= self.fs.max) {
            return Err(Error::Config("frequency range must satisfy 0 < min <= max".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub fs: f64,
    pub l_idx: usize,
    pub c_idx: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub genome: Genome,
    pub objective: f64,
    pub fitness: f64,
    pub performance: PerformanceRecord,
    pub feasible: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    pub mutation_rate: f64,
    pub elitism: usize,
    pub xi: f64,
    pub seed: u64,
    /// Multiplies every penalty term of the objective.
    pub penalty_weight: f64,
    /// Independent runs; the best result is kept.
    pub restarts: usize,
    /// Refine the best of each run with [`polish`].
    pub polish: bool,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 60,
            generations: 100,
            crossover_rate: 0.9,
            mutation_rate: 0.1,
            elitism: 2,
            xi: 0.01,
            seed: 0,
            penalty_weight: 1.0,
            restarts: 1,
            polish: true,
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        let rate = |r: f64| (0.0..=1.0).contains(&r);
        if self.population < 4 {
            return Err(Error::Config("GA population must be at least 4".into()));
        }
        if !rate(self.crossover_rate) || !rate(self.mutation_rate) {
            return Err(Error::Config("GA rates must lie in [0, 1]".into()));
        }
        if self.restarts == 0 {
            return Err(Error::Config("GA needs at least one run".into()));
        }
        if self.elitism >= self.population {
            return Err(Error::Config("elitism must be smaller than the population".into()));
        }
        if !(self.xi > 0.0) || !(self.penalty_weight >= 0.0) {
            return Err(Error::Config("xi must be positive and the penalty weight non-negative".into()));
        }
        Ok(())
    }
}

/// Total loss plus weighted relative violations of the volume and ripple limits.
pub fn objective(perf: &PerformanceRecord, spec: &DesignSpec, penalty_weight: f64) -> f64 {
    let over = |v: f64, lim: f64| (v / lim - 1.0).max(0.0);
    perf.total_loss()
        + penalty_weight
            * (over(perf.vol, spec.vol_lim) + over(perf.dvo, spec.dvo_lim) + over(perf.dil, spec.dil_lim))
}

/// `F = (O_max - O) / (O_max - O_min) + ξ`, or `F = 1` for all when every
/// objective is equal.
pub fn fitness_assign(population: &mut [Individual], xi: f64) {
    let (lo, hi) = population
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| (lo.min(i.objective), hi.max(i.objective)));
    for ind in population.iter_mut() {
        ind.fitness = if hi > lo { (hi - ind.objective) / (hi - lo) + xi } else { 1.0 };
    }
}

/// One line of the run history.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub generation: usize,
    pub best_o: f64,
    pub mean_o: f64,
    /// Least objective among feasible individuals seen so far.
    pub best_feasible: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaResult {
    /// Best feasible individual of the run, or the least-objective one if none was feasible.
    pub best: Individual,
    pub feasible: bool,
    pub history: Vec<HistoryRow>,
    pub evaluations: usize,
    pub seed: u64,
}

/// Writes `generation,best_O,mean_O,best_feasible`.
pub fn write_history_csv<W: Write>(out: W, history: &[HistoryRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["generation", "best_O", "mean_O", "best_feasible"])?;
    for h in history {
        w.write_record(&[
            h.generation.to_string(),
            h.best_o.to_string(),
            h.mean_o.to_string(),
            h.best_feasible.map(|v| v.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// JSON record of a chosen design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRecord {
    pub fs: f64,
    pub inductor: InductorEntry,
    pub capacitor: CapBankEntry,
    pub performance: PerformanceRecord,
    pub feasible: bool,
    pub seed: u64,
}

impl DesignRecord {
    pub fn from_result(result: &GaResult, space: &SearchSpace) -> Self {
        let g = result.best.genome;
        DesignRecord {
            fs: g.fs,
            inductor: space.inductors[g.l_idx].clone(),
            capacitor: space.banks[g.c_idx].clone(),
            performance: result.best.performance,
            feasible: result.feasible,
            seed: result.seed,
        }
    }

    pub fn point(&self) -> DesignPoint {
        DesignPoint::new(self.fs, self.inductor.clone(), self.capacitor.clone())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Variation operators; public for property testing.
pub mod ops {
    use super::*;

    pub const BLX_ALPHA: f64 = 0.5;
    /// Gaussian mutation width as a fraction of the frequency range.
    pub const FS_SIGMA: f64 = 0.05;

    pub fn random_genome<R: Rng + ?Sized>(space: &SearchSpace, rng: &mut R) -> Genome {
        Genome {
            fs: if space.fs.width() > 0.0 {
                rng.random_range(space.fs.min..=space.fs.max)
            } else {
                space.fs.min
            },
            l_idx: rng.random_range(0..space.inductors.len()),
            c_idx: rng.random_range(0..space.banks.len()),
        }
    }

    /// Blend crossover on `fs` (clamped), uniform crossover on the indices.
    pub fn crossover<R: Rng + ?Sized>(a: &Genome, b: &Genome, space: &SearchSpace, rng: &mut R) -> (Genome, Genome) {
        let lo = a.fs.min(b.fs);
        let d = (a.fs - b.fs).abs();
        let mut blend = || space.fs.clamp(lo - BLX_ALPHA * d + rng.random::<f64>() * d * (1.0 + 2.0 * BLX_ALPHA));
        let (fs1, fs2) = (blend(), blend());
        let (mut c1, mut c2) = (
            Genome { fs: fs1, ..*a },
            Genome { fs: fs2, ..*b },
        );
        if rng.random_bool(0.5) {
            std::mem::swap(&mut c1.l_idx, &mut c2.l_idx);
        }
        if rng.random_bool(0.5) {
            std::mem::swap(&mut c1.c_idx, &mut c2.c_idx);
        }
        (c1, c2)
    }

    /// Each gene mutates with probability `rate`.
    pub fn mutate<R: Rng + ?Sized>(g: &mut Genome, space: &SearchSpace, rate: f64, rng: &mut R) {
        if rng.random_bool(rate) {
            let sigma = FS_SIGMA * space.fs.width();
            if sigma > 0.0 {
                let n = Normal::new(0.0, sigma).expect("positive sigma");
                g.fs = space.fs.clamp(g.fs + n.sample(rng));
            }
        }
        if rng.random_bool(rate) {
            g.l_idx = rng.random_range(0..space.inductors.len());
        }
        if rng.random_bool(rate) {
            g.c_idx = rng.random_range(0..space.banks.len());
        }
    }

    pub fn in_bounds(g: &Genome, space: &SearchSpace) -> bool {
        space.fs.contains(g.fs) && g.l_idx < space.inductors.len() && g.c_idx < space.banks.len()
    }
}

fn evaluate_all(
    genomes: &[Genome],
    spec: &DesignSpec,
    space: &SearchSpace,
    evaluator: &dyn Evaluator,
    cfg: &GaConfig,
) -> Result<Vec<Individual>> {
    genomes
        .par_iter()
        .map(|g| {
            let perf = evaluator.evaluate(g.fs, &space.inductors[g.l_idx], &space.banks[g.c_idx])?;
            let o = objective(&perf, spec, cfg.penalty_weight);
            if !o.is_finite() {
                return Err(Error::Domain(format!("non-finite objective at fs = {} Hz", g.fs)));
            }
            Ok(Individual {
                genome: *g,
                objective: o,
                fitness: 0.0,
                performance: perf,
                feasible: perf.feasible(spec),
            })
        })
        .collect()
}

fn by_objective(a: &Individual, b: &Individual) -> std::cmp::Ordering {
    a.objective.total_cmp(&b.objective)
}

/// Runs the generational GA `restarts` times with a fixed generation budget
/// each; keeps the best feasible run, else the least objective.
pub fn optimize(
    spec: &DesignSpec,
    space: &SearchSpace,
    evaluator: &dyn Evaluator,
    cfg: &GaConfig,
) -> Result<GaResult> {
    cfg.validate()?;
    space.validate()?;
    let mut seeds = rng::stream(cfg.seed, rng::GA_RESTARTS);
    let mut best: Option<GaResult> = None;
    let mut evaluations = 0;
    for k in 0..cfg.restarts {
        let seed = if k == 0 { cfg.seed } else { seeds.random() };
        let mut run = optimize_once(spec, space, evaluator, &GaConfig { seed, ..*cfg })?;
        if cfg.polish {
            let (ind, n) = polish(spec, space, evaluator, &run.best, cfg.penalty_weight);
            run.feasible = ind.feasible;
            run.best = ind;
            run.evaluations += n;
        }
        evaluations += run.evaluations;
        if best.as_ref().is_none_or(|b| improves(&run.best, &b.best)) {
            best = Some(run);
        }
    }
    let mut best = best.expect("at least one run");
    best.evaluations = evaluations;
    best.seed = cfg.seed;
    Ok(best)
}

/// Feasible beats infeasible; otherwise the lower objective wins.
pub fn improves(a: &Individual, b: &Individual) -> bool {
    match (a.feasible, b.feasible) {
        (true, false) => true,
        (false, true) => false,
        _ => a.objective < b.objective,
    }
}

/// Deterministic coordinate search from `start`. Each round tries `fs` up and
/// down by a step that halves when nothing improves, every inductor at the
/// same `fs` and with `fs` rescaled to keep `L·fs` (and so the current
/// ripple) fixed, and every capacitor bank. Meant for cheap evaluators: one
/// round costs about `2·|L| + |C|` evaluations. Candidates that fail to
/// evaluate are skipped. Returns the refined individual and the evaluation
/// count.
pub fn polish(
    spec: &DesignSpec,
    space: &SearchSpace,
    evaluator: &dyn Evaluator,
    start: &Individual,
    penalty_weight: f64,
) -> (Individual, usize) {
    let eval = |g: Genome| -> Option<Individual> {
        let perf = evaluator.evaluate(g.fs, &space.inductors[g.l_idx], &space.banks[g.c_idx]).ok()?;
        let objective = objective(&perf, spec, penalty_weight);
        objective.is_finite().then(|| Individual {
            genome: g,
            objective,
            fitness: 0.0,
            performance: perf,
            feasible: perf.feasible(spec),
        })
    };
    let min_step = space.fs.width() * 1e-7;
    let mut step = space.fs.width() * ops::FS_SIGMA;
    let mut best = start.clone();
    let mut evaluations = 0;
    for _ in 0..500 {
        if step <= min_step {
            break;
        }
        let g = best.genome;
        let mut moves = vec![
            Genome { fs: space.fs.clamp(g.fs + step), ..g },
            Genome { fs: space.fs.clamp(g.fs - step), ..g },
        ];
        let l_now = space.inductors[g.l_idx].l_uh;
        for (l, ind) in space.inductors.iter().enumerate() {
            moves.push(Genome { l_idx: l, ..g });
            moves.push(Genome { l_idx: l, fs: space.fs.clamp(g.fs * l_now / ind.l_uh), ..g });
        }
        moves.extend((0..space.banks.len()).map(|c| Genome { c_idx: c, ..g }));
        moves.retain(|m| *m != g);
        evaluations += moves.len();
        let found = moves
            .into_par_iter()
            .filter_map(eval)
            .collect::<Vec<_>>()
            .into_iter()
            .fold(None::<Individual>, |acc, c| match acc {
                Some(a) if !improves(&c, &a) => Some(a),
                _ => Some(c),
            });
        match found {
            Some(c) if improves(&c, &best) => best = c,
            _ => step *= 0.5,
        }
    }
    (best, evaluations)
}

/// One generational run seeded with `cfg.seed`.
fn optimize_once(
    spec: &DesignSpec,
    space: &SearchSpace,
    evaluator: &dyn Evaluator,
    cfg: &GaConfig,
) -> Result<GaResult> {
    let mut rng = rng::stream(cfg.seed, rng::GA);

    let init: Vec<Genome> = (0..cfg.population).map(|_| ops::random_genome(space, &mut rng)).collect();
    let mut pop = evaluate_all(&init, spec, space, evaluator, cfg)?;
    let mut evaluations = pop.len();
    let mut best_any = pop.iter().min_by(|a, b| by_objective(a, b)).expect("non-empty").clone();
    let mut best_feasible: Option<Individual> = None;
    let mut history = Vec::with_capacity(cfg.generations + 1);

    let mut record = |gen: usize, pop: &[Individual], best_any: &mut Individual, best_feasible: &mut Option<Individual>| {
        for ind in pop {
            if ind.objective < best_any.objective {
                *best_any = ind.clone();
            }
            if ind.feasible && best_feasible.as_ref().is_none_or(|b| ind.objective < b.objective) {
                *best_feasible = Some(ind.clone());
            }
        }
        let best_o = pop.iter().map(|i| i.objective).fold(f64::INFINITY, f64::min);
        let mean_o = pop.iter().map(|i| i.objective).sum::<f64>() / pop.len() as f64;
        history.push(HistoryRow {
            generation: gen,
            best_o,
            mean_o,
            best_feasible: best_feasible.as_ref().map(|b| b.objective),
        });
    };
    record(0, &pop, &mut best_any, &mut best_feasible);

    for gen in 1..=cfg.generations {
        fitness_assign(&mut pop, cfg.xi);
        let mut ranked: Vec<&Individual> = pop.iter().collect();
        ranked.sort_by(|a, b| by_objective(a, b));
        let mut next: Vec<Individual> = ranked.iter().take(cfg.elitism).map(|i| (*i).clone()).collect();

        let wheel = WeightedIndex::new(pop.iter().map(|i| i.fitness))
            .map_err(|e| Error::Domain(format!("roulette wheel: {e}")))?;
        let n_children = cfg.population - next.len();
        let mut children = Vec::with_capacity(n_children + 1);
        while children.len() < n_children {
            let a = &pop[wheel.sample(&mut rng)].genome;
            let b = &pop[wheel.sample(&mut rng)].genome;
            let (mut c1, mut c2) = if rng.random_bool(cfg.crossover_rate) {
                ops::crossover(a, b, space, &mut rng)
            } else {
                (*a, *b)
            };
            ops::mutate(&mut c1, space, cfg.mutation_rate, &mut rng);
            ops::mutate(&mut c2, space, cfg.mutation_rate, &mut rng);
            children.push(c1);
            if children.len() < n_children {
                children.push(c2);
            }
        }
        let evaluated = evaluate_all(&children, spec, space, evaluator, cfg)?;
        evaluations += evaluated.len();
        next.extend(evaluated);
        pop = next;
        record(gen, &pop, &mut best_any, &mut best_feasible);
    }

    let feasible = best_feasible.is_some();
    Ok(GaResult {
        best: best_feasible.unwrap_or(best_any),
        feasible,
        history,
        evaluations,
        seed: cfg.seed,
    })
}
