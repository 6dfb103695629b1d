use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::baseline::ConventionalDesign;
use crate::convsim::{
    analytic_evaluate, check_saturation, transient_evaluate, DesignPoint, DesignSpec, Engine, PerformanceRecord,
    SaturationWarning, SimConfig, SwitchParams,
};
use crate::error::{Error, Result};

pub const REPORT_SCHEMA: u32 = 1;

/// Number of load points in the efficiency sweep (10% to 100%).
pub const SWEEP_POINTS: usize = 10;

/// Evaluates `point` with `engine` and explicit simulation settings.
pub fn evaluate_with(
    engine: Engine,
    point: &DesignPoint,
    spec: &DesignSpec,
    sw: &SwitchParams,
    sim: &SimConfig,
) -> Result<PerformanceRecord> {
    match engine {
        Engine::Analytic => analytic_evaluate(point, spec, sw),
        Engine::Transient => transient_evaluate(point, spec, sw, sim),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintRow {
    pub name: String,
    pub limit: f64,
    pub value: f64,
    pub pass: bool,
}

/// Volume in cm³, ripples in percent.
pub fn constraint_rows(perf: &PerformanceRecord, spec: &DesignSpec) -> Vec<ConstraintRow> {
    [
        ("Vol", spec.vol_lim, perf.vol),
        ("dVo_pct", spec.dvo_lim * 100.0, perf.dvo * 100.0),
        ("dIL_pct", spec.dil_lim * 100.0, perf.dil * 100.0),
    ]
    .into_iter()
    .map(|(name, limit, value)| ConstraintRow {
        name: name.to_string(),
        limit,
        value,
        pass: value <= limit,
    })
    .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub load_pct: f64,
    pub p_o: f64,
    pub total_loss: f64,
    pub eta: f64,
    pub ccm: bool,
}

/// Efficiency at 10%, 20%, ..., 100% of rated power.
pub fn load_sweep(
    point: &DesignPoint,
    spec: &DesignSpec,
    sw: &SwitchParams,
    engine: Engine,
    sim: &SimConfig,
) -> Result<Vec<SweepPoint>> {
    (1..=SWEEP_POINTS)
        .map(|k| {
            let load_pct = 100.0 * k as f64 / SWEEP_POINTS as f64;
            let p_o = spec.p_o * k as f64 / SWEEP_POINTS as f64;
            let rec = evaluate_with(engine, point, &spec.at_power(p_o), sw, sim)?;
            Ok(SweepPoint {
                load_pct,
                p_o,
                total_loss: rec.total_loss(),
                eta: rec.eta,
                ccm: rec.ccm,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineSummary {
    pub design: ConventionalDesign,
    pub performance: PerformanceRecord,
    pub feasible: bool,
}

/// Final design, its predicted and re-evaluated performance, the baseline and
/// a load sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignReport {
    pub schema: u32,
    pub seed: Option<u64>,
    /// Engine behind `verified`, the baseline and the sweep.
    pub engine: Engine,
    pub design: DesignPoint,
    pub predicted: Option<PerformanceRecord>,
    pub verified: PerformanceRecord,
    /// Computed from `verified` against the unmodified limits.
    pub feasible: bool,
    pub constraints: Vec<ConstraintRow>,
    pub baseline: Option<BaselineSummary>,
    pub sweep: Vec<SweepPoint>,
    pub saturation: Option<SaturationWarning>,
}

/// Paths written by [`DesignReport::write`].
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub json: PathBuf,
    pub constraints: PathBuf,
    pub performance: PathBuf,
    pub sweep: PathBuf,
    pub svg: PathBuf,
}

impl DesignReport {
    #[allow(clippy::too_many_arguments)]
    pub fn build(
        design: DesignPoint,
        predicted: Option<PerformanceRecord>,
        spec: &DesignSpec,
        sw: &SwitchParams,
        engine: Engine,
        sim: &SimConfig,
        baseline: Option<ConventionalDesign>,
        seed: Option<u64>,
    ) -> Result<Self> {
        let verified = evaluate_with(engine, &design, spec, sw, sim)?;
        let baseline = baseline
            .map(|b| {
                let performance = evaluate_with(engine, &b.point(), spec, sw, sim)?;
                Ok::<_, Error>(BaselineSummary {
                    feasible: performance.feasible(spec),
                    design: b,
                    performance,
                })
            })
            .transpose()?;
        let sweep = load_sweep(&design, spec, sw, engine, sim)?;
        Ok(DesignReport {
            schema: REPORT_SCHEMA,
            seed,
            engine,
            saturation: check_saturation(&design, &verified, spec.i_o()),
            feasible: verified.feasible(spec),
            constraints: constraint_rows(&verified, spec),
            design,
            predicted,
            verified,
            baseline,
            sweep,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: DesignReport = serde_json::from_str(s).map_err(|e| Error::Format(format!("report: {e}")))?;
        if r.schema != REPORT_SCHEMA {
            return Err(Error::Format(format!("report schema {} not supported", r.schema)));
        }
        Ok(r)
    }

    /// `quantity,predicted,verified,baseline` for every loss, efficiency and constraint quantity.
    pub fn write_performance_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["quantity", "predicted", "verified", "baseline"])?;
        type Quantity<'a> = &'a dyn Fn(&PerformanceRecord) -> f64;
        let cell = |r: Option<&PerformanceRecord>, f: Quantity| {
            r.map(|r| f(r).to_string()).unwrap_or_default()
        };
        let rows: [(&str, Quantity); 11] = [
            ("P_Ls1", &|r| r.p_ls1),
            ("P_Ls2", &|r| r.p_ls2),
            ("P_LCu", &|r| r.p_lcu),
            ("P_LFe", &|r| r.p_lfe),
            ("P_LC", &|r| r.p_lc),
            ("P_Ltot", &|r| r.total_loss()),
            ("eta", &|r| r.eta),
            ("Vol", &|r| r.vol),
            ("dVo_pct", &|r| r.dvo * 100.0),
            ("dIL_pct", &|r| r.dil * 100.0),
            ("ccm", &|r| if r.ccm { 1.0 } else { 0.0 }),
        ];
        let base = self.baseline.as_ref().map(|b| &b.performance);
        for (name, f) in rows {
            w.write_record([
                name.to_string(),
                cell(self.predicted.as_ref(), f),
                cell(Some(&self.verified), f),
                cell(base, f),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_constraints_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["name", "limit", "value", "pass"])?;
        for r in &self.constraints {
            w.write_record([r.name.clone(), r.limit.to_string(), r.value.to_string(), r.pass.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Writes `report.json`, `constraints.csv`, `performance.csv`,
    /// `sweep.csv` and `sweep.svg` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<ReportFiles> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let files = ReportFiles {
            json: dir.join("report.json"),
            constraints: dir.join("constraints.csv"),
            performance: dir.join("performance.csv"),
            sweep: dir.join("sweep.csv"),
            svg: dir.join("sweep.svg"),
        };
        std::fs::write(&files.json, self.to_json()?)?;
        self.write_constraints_csv(std::fs::File::create(&files.constraints)?)?;
        self.write_performance_csv(std::fs::File::create(&files.performance)?)?;
        let mut sweep_csv = Vec::new();
        write_sweep_csv(&mut sweep_csv, &self.sweep)?;
        std::fs::write(&files.sweep, &sweep_csv)?;
        std::fs::write(&files.svg, svg_from_sweep_csv(sweep_csv.as_slice())?)?;
        Ok(files)
    }
}

const SWEEP_HEADER: [&str; 5] = ["load_pct", "p_o", "total_loss", "eta", "ccm"];

pub fn write_sweep_csv<W: Write>(out: W, sweep: &[SweepPoint]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for p in sweep {
        w.write_record([
            p.load_pct.to_string(),
            p.p_o.to_string(),
            p.total_loss.to_string(),
            p.eta.to_string(),
            u8::from(p.ccm).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: Read>(input: R) -> Result<Vec<SweepPoint>> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(SWEEP_HEADER) {
        return Err(Error::Format(format!("sweep CSV header must be {}", SWEEP_HEADER.join(","))));
    }
    let num = |s: &str| s.parse::<f64>().map_err(|e| Error::Format(format!("sweep CSV value `{s}`: {e}")));
    r.records()
        .map(|rec| {
            let rec = rec?;
            if rec.len() != SWEEP_HEADER.len() {
                return Err(Error::Format("sweep CSV row has the wrong number of fields".into()));
            }
            Ok(SweepPoint {
                load_pct: num(&rec[0])?,
                p_o: num(&rec[1])?,
                total_loss: num(&rec[2])?,
                eta: num(&rec[3])?,
                ccm: &rec[4] == "1",
            })
        })
        .collect()
}

/// Line plot of efficiency (%) against load (%).
pub fn sweep_svg(sweep: &[SweepPoint]) -> String {
    const W: f64 = 480.0;
    const H: f64 = 320.0;
    const M: f64 = 50.0;
    let etas: Vec<f64> = sweep.iter().map(|p| p.eta * 100.0).collect();
    let lo = etas.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = etas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let (y0, y1) = if lo.is_finite() && hi > lo {
        ((lo - 0.5).floor(), (hi + 0.5).ceil())
    } else {
        let c = if lo.is_finite() { lo.round() } else { 90.0 };
        (c - 1.0, c + 1.0)
    };
    let sx = |x: f64| M + x / 100.0 * (W - 2.0 * M);
    let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{:.2} {:.2} L{:.2} {:.2} L{:.2} {:.2}" fill="none" stroke="black"/>"#,
        sx(0.0),
        sy(y1),
        sx(0.0),
        sy(y0),
        sx(100.0),
        sy(y0)
    );
    for k in 0..=5 {
        let x = 20.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{x}</text>"#,
            sx(x),
            sy(y0) + 16.0
        );
        let y = y0 + (y1 - y0) * k as f64 / 5.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end">{y:.1}</text>"#,
            sx(0.0) - 6.0,
            sy(y) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">load (%)</text>"#,
        W / 2.0,
        H - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 14 {:.2})">efficiency (%)</text>"#,
        H / 2.0,
        H / 2.0
    );
    if !sweep.is_empty() {
        let pts: Vec<String> = sweep
            .iter()
            .zip(&etas)
            .map(|(p, e)| format!("{:.2},{:.2}", sx(p.load_pct), sy(*e)))
            .collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, pts.join(" "));
        for (p, e) in sweep.iter().zip(&etas) {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, sx(p.load_pct), sy(*e));
        }
    }
    s.push_str("</svg>\n");
    s
}

/// Regenerates the sweep plot from its CSV.
pub fn svg_from_sweep_csv<R: Read>(input: R) -> Result<String> {
    Ok(sweep_svg(&read_sweep_csv(input)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::convsim::fixtures;

    fn perf(vol: f64, dvo: f64, dil: f64) -> PerformanceRecord {
        PerformanceRecord {
            p_ls1: 1.0,
            p_ls2: 1.0,
            p_lcu: 1.0,
            p_lfe: 1.0,
            p_lc: 1.0,
            dvo,
            dil,
            vol,
            eta: 100.0 / 105.0,
            duty: 0.25,
            ccm: true,
        }
    }

    #[test]
    fn constraint_table_matches_record() {
        let spec = DesignSpec::table_one();
        let rows = constraint_rows(&perf(6.5, 0.012, 0.05), &spec);
        let names: Vec<_> = rows.iter().map(|r| r.name.as_str()).collect();
        assert_eq!(names, ["Vol", "dVo_pct", "dIL_pct"]);
        assert!(rows[0].pass && !rows[1].pass && rows[2].pass);
        assert!((rows[1].value - 1.2).abs() < 1e-12);
        assert_eq!(rows[2].limit, 10.0);
    }

    #[test]
    fn sweep_csv_round_trip_and_svg_is_stable() {
        let sweep: Vec<SweepPoint> = (1..=10)
            .map(|k| SweepPoint {
                load_pct: 10.0 * k as f64,
                p_o: 10.0 * k as f64,
                total_loss: 1.0 + 0.05 * k as f64,
                eta: 0.9 + 0.004 * k as f64,
                ccm: k > 2,
            })
            .collect();
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &sweep).unwrap();
        assert_eq!(read_sweep_csv(buf.as_slice()).unwrap(), sweep);
        let a = svg_from_sweep_csv(buf.as_slice()).unwrap();
        assert_eq!(a, svg_from_sweep_csv(buf.as_slice()).unwrap());
        assert_eq!(a, sweep_svg(&sweep));
        assert!(a.starts_with("<svg") && a.contains("polyline"));
        assert!(read_sweep_csv("a,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn report_sweep_ends_at_rated_point() {
        let spec = fixtures::ideal_spec();
        let point = fixtures::ideal_point(100e3, 200.0, 100.0);
        let sw = SwitchParams::default();
        let r = DesignReport::build(point, None, &spec, &sw, Engine::Analytic, &SimConfig::default(), None, Some(3))
            .unwrap();
        assert_eq!(r.sweep.len(), SWEEP_POINTS);
        assert_eq!(r.sweep[0].load_pct, 10.0);
        let last = r.sweep.last().unwrap();
        assert_eq!(last.total_loss, r.verified.total_loss());
        assert_eq!(last.eta, r.verified.eta);
        assert_eq!(r.feasible, r.constraints.iter().all(|c| c.pass));
        assert_eq!(DesignReport::from_json(&r.to_json().unwrap()).unwrap(), r);

        let dir = tempfile::tempdir().unwrap();
        let files = r.write(dir.path()).unwrap();
        let svg = std::fs::read_to_string(&files.svg).unwrap();
        assert_eq!(svg, svg_from_sweep_csv(std::fs::File::open(&files.sweep).unwrap()).unwrap());
        let table = std::fs::read_to_string(&files.constraints).unwrap();
        assert!(table.lines().skip(1).map(|l| l.split(',').next().unwrap()).eq(["Vol", "dVo_pct", "dIL_pct"]));
    }
}
