use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{nearest_index, Catalog};
use crate::convsim::{DesignPoint, DesignSpec, Range};
use crate::error::{Error, Result};
use crate::evo::Evaluator;
use crate::rng;
use crate::surrogate::{assign_splits, DataRow, Dataset, Split};

/// Grid counts for fs, L and C.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplingPlan {
    #[serde(rename = "N1")]
    pub n1: usize,
    #[serde(rename = "N2")]
    pub n2: usize,
    #[serde(rename = "N3")]
    pub n3: usize,
}

impl Default for SamplingPlan {
    fn default() -> Self {
        SamplingPlan { n1: 20, n2: 20, n3: 20 }
    }
}

impl SamplingPlan {
    pub const fn new(n1: usize, n2: usize, n3: usize) -> Self {
        SamplingPlan { n1, n2, n3 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n1 < 2 || self.n2 < 2 || self.n3 < 2 {
            return Err(Error::Config("sampling grid counts must each be at least 2".into()));
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.n1 * self.n2 * self.n3
    }
}

/// One grid point after snapping, with indices into the catalog tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridPoint {
    pub fs: f64,
    pub l_idx: usize,
    pub c_idx: usize,
    pub split: Split,
}

/// Snapped, deduplicated grid waiting for evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSample {
    pub points: Vec<GridPoint>,
    /// Grid points that collapsed onto an earlier one after snapping.
    pub duplicates: usize,
}

impl GridSample {
    pub fn design_point(&self, i: usize, catalog: &Catalog) -> DesignPoint {
        let p = &self.points[i];
        DesignPoint::new(p.fs, catalog.inductors[p.l_idx].clone(), catalog.banks[p.c_idx].clone())
    }
}

/// Catalog index span inside `range`, or an error naming the table.
fn span_or_err(span: Option<(usize, usize)>, table: &str, range: Range) -> Result<(usize, usize)> {
    span.ok_or_else(|| {
        Error::EmptyTable(format!("no {table} entry inside [{}, {}]", range.min, range.max))
    })
}

/// Uniform `N1 × N2 × N3` grid over the spec ranges; L and C snap to the
/// nearest catalog entry inside the range. Splits come from a seeded shuffle.
pub fn sample_grid(spec: &DesignSpec, plan: &SamplingPlan, catalog: &Catalog, seed: u64) -> Result<GridSample> {
    plan.validate()?;
    spec.validate()?;
    let (l_lo, l_hi) = span_or_err(catalog.inductor_span(spec.l_range.as_tuple()), "inductor", spec.l_range)?;
    let (c_lo, c_hi) = span_or_err(catalog.bank_span(spec.c_range.as_tuple()), "capacitor bank", spec.c_range)?;
    let l_idx: Vec<usize> = spec
        .l_range
        .linspace(plan.n2)
        .into_iter()
        .map(|l| l_lo + nearest_index(&catalog.inductors[l_lo..=l_hi], l))
        .collect();
    let c_idx: Vec<usize> = spec
        .c_range
        .linspace(plan.n3)
        .into_iter()
        .map(|c| c_lo + nearest_index(&catalog.banks[c_lo..=c_hi], c))
        .collect();

    let mut seen = HashSet::new();
    let mut cells = Vec::with_capacity(plan.total());
    let mut duplicates = 0;
    for (fi, fs) in spec.fs_range.linspace(plan.n1).into_iter().enumerate() {
        for &li in &l_idx {
            for &ci in &c_idx {
                if seen.insert((fi, li, ci)) {
                    cells.push((fs, li, ci));
                } else {
                    duplicates += 1;
                }
            }
        }
    }
    if duplicates > 0 {
        log::info!("{duplicates} grid point(s) merged after snapping to the catalog");
    }
    let splits = assign_splits(cells.len(), &mut rng::stream(seed, rng::SAMPLING));
    let points = cells
        .into_iter()
        .zip(splits)
        .map(|((fs, l_idx, c_idx), split)| GridPoint { fs, l_idx, c_idx, split })
        .collect();
    Ok(GridSample { points, duplicates })
}

/// Evaluates every grid point; failed points are dropped and counted.
/// Row order follows the grid regardless of scheduling.
pub fn generate_dataset(sample: &GridSample, catalog: &Catalog, evaluator: &dyn Evaluator) -> Dataset {
    let results: Vec<_> = sample
        .points
        .par_iter()
        .map(|p| {
            evaluator
                .evaluate(p.fs, &catalog.inductors[p.l_idx], &catalog.banks[p.c_idx])
                .map(|rec| {
                    DataRow::new(p.fs, catalog.inductors[p.l_idx].l_uh, catalog.banks[p.c_idx].c_uf, &rec, p.split)
                })
        })
        .collect();
    let mut rows = Vec::with_capacity(results.len());
    let mut dropped = 0;
    for (p, r) in sample.points.iter().zip(results) {
        match r {
            Ok(row) => rows.push(row),
            Err(e) => {
                dropped += 1;
                log::warn!("dropping sample at fs={} Hz (L #{}, C #{}): {e}", p.fs, p.l_idx, p.c_idx);
            }
        }
    }
    Dataset {
        rows,
        duplicates: sample.duplicates,
        dropped,
    }
}
