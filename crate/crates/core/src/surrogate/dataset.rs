use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::convsim::PerformanceRecord;
use crate::error::{Error, Result};

/// Regression targets in dataset column order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Target {
    #[serde(rename = "P_Ls1")]
    PLs1,
    #[serde(rename = "P_Ls2")]
    PLs2,
    #[serde(rename = "P_LCu")]
    PLCu,
    #[serde(rename = "P_LFe")]
    PLFe,
    #[serde(rename = "P_LC")]
    PLC,
    #[serde(rename = "dVo_pct")]
    DVo,
    #[serde(rename = "dIL_pct")]
    DIL,
}

impl Target {
    pub const ALL: [Target; 7] = [
        Target::PLs1,
        Target::PLs2,
        Target::PLCu,
        Target::PLFe,
        Target::PLC,
        Target::DVo,
        Target::DIL,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Target::PLs1 => "P_Ls1",
            Target::PLs2 => "P_Ls2",
            Target::PLCu => "P_LCu",
            Target::PLFe => "P_LFe",
            Target::PLC => "P_LC",
            Target::DVo => "dVo_pct",
            Target::DIL => "dIL_pct",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    /// Value of this target in dataset units (W, or percent for ripples).
    pub fn of(self, rec: &PerformanceRecord) -> f64 {
        match self {
            Target::PLs1 => rec.p_ls1,
            Target::PLs2 => rec.p_ls2,
            Target::PLCu => rec.p_lcu,
            Target::PLFe => rec.p_lfe,
            Target::PLC => rec.p_lc,
            Target::DVo => 100.0 * rec.dvo,
            Target::DIL => 100.0 * rec.dil,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn parse(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Format(format!("unknown split `{other}`"))),
        }
    }
}

/// One sampled design with its evaluated targets.
#[derive(Debug, Clone, PartialEq)]
pub struct DataRow {
    pub fs_hz: f64,
    pub l_uh: f64,
    pub c_uf: f64,
    /// Indexed by [`Target::index`]; ripples in percent.
    pub targets: [f64; 7],
    pub vol_cm3: f64,
    pub ccm: bool,
    pub split: Split,
}

impl DataRow {
    pub fn new(fs_hz: f64, l_uh: f64, c_uf: f64, rec: &PerformanceRecord, split: Split) -> Self {
        DataRow {
            fs_hz,
            l_uh,
            c_uf,
            targets: Target::ALL.map(|t| t.of(rec)),
            vol_cm3: rec.vol,
            ccm: rec.ccm,
            split,
        }
    }

    pub fn inputs(&self) -> [f64; 3] {
        [self.fs_hz, self.l_uh, self.c_uf]
    }

    pub fn target(&self, t: Target) -> f64 {
        self.targets[t.index()]
    }
}

/// Rows plus bookkeeping from sampling and evaluation.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub rows: Vec<DataRow>,
    /// Rows removed because they duplicated another after snapping.
    pub duplicates: usize,
    /// Rows removed because evaluation failed.
    pub dropped: usize,
}

const HEADER: [&str; 13] = [
    "fs_hz", "L_uH", "C_uF", "P_Ls1", "P_Ls2", "P_LCu", "P_LFe", "P_LC", "dVo_pct", "dIL_pct",
    "vol_cm3", "ccm", "split",
];

impl Dataset {
    pub fn new(rows: Vec<DataRow>) -> Self {
        Dataset {
            rows,
            duplicates: 0,
            dropped: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.rows.iter().filter(|r| r.split == split).count()
    }

    fn split_rows(&self, split: Split) -> impl Iterator<Item = &DataRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    /// `n × 3` matrix of raw `(fs, L, C)` for one split.
    pub fn inputs(&self, split: Split) -> Array2<f64> {
        let rows: Vec<[f64; 3]> = self.split_rows(split).map(DataRow::inputs).collect();
        Array2::from_shape_fn((rows.len(), 3), |(i, j)| rows[i][j])
    }

    /// `n × targets.len()` matrix of raw target values for one split.
    pub fn targets(&self, split: Split, targets: &[Target]) -> Array2<f64> {
        let rows: Vec<&DataRow> = self.split_rows(split).collect();
        Array2::from_shape_fn((rows.len(), targets.len()), |(i, j)| rows[i].target(targets[j]))
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(HEADER)?;
        for r in &self.rows {
            let mut rec: Vec<String> = vec![r.fs_hz.to_string(), r.l_uh.to_string(), r.c_uf.to_string()];
            rec.extend(r.targets.iter().map(f64::to_string));
            rec.push(r.vol_cm3.to_string());
            rec.push(if r.ccm { "1" } else { "0" }.to_string());
            rec.push(r.split.as_str().to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        if header != HEADER {
            return Err(Error::Format(format!("unexpected dataset header {header:?}")));
        }
        let mut rows = Vec::new();
        for (n, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|_| Error::Format(format!("row {}: column {} is not a number", n + 1, HEADER[i])))
            };
            let mut targets = [0.0; 7];
            for (k, t) in targets.iter_mut().enumerate() {
                *t = num(3 + k)?;
            }
            rows.push(DataRow {
                fs_hz: num(0)?,
                l_uh: num(1)?,
                c_uf: num(2)?,
                targets,
                vol_cm3: num(10)?,
                ccm: match &rec[11] {
                    "1" => true,
                    "0" => false,
                    other => return Err(Error::Format(format!("row {}: bad ccm flag `{other}`", n + 1))),
                },
                split: Split::parse(&rec[12])?,
            });
        }
        Ok(Dataset::new(rows))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_csv(std::fs::File::open(path)?)
    }
}

/// Split labels for `n` rows: a seeded shuffle, then 70% train, 15% validation
/// and the rest test.
pub fn assign_splits<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<Split> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let n_train = (0.70 * n as f64).round() as usize;
    let n_val = ((0.15 * n as f64).round() as usize).min(n - n_train);
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}
