//! Time-stepped periodic steady-state simulation of the switched network.
//!
//! The converter is a two-state (`i_L`, `v_C`) piecewise-linear system with a
//! resistive load. Each switching period is split into four intervals (high
//! side on, dead time, low side on, dead time) and integrated with the
//! trapezoidal rule. The periodic orbit is located by shooting: the one-cycle
//! map is iterated with Newton steps until the start and end states agree,
//! and an outer secant loop trims the duty cycle until the mean output equals
//! the nominal output voltage.
//!
//! Loss terms come from integrating the settled waveforms at step midpoints,
//! which for trapezoidal steps of a linear network balances the stored-energy
//! change exactly. Switching and core losses use the same event-based models
//! as the analytic evaluator, fed with the simulated edge currents and ripple.
//! The capacitor ESL is not a state; its voltage `ESL * di/dt` is added to the
//! output when measuring ripple.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::analytic::duty_cycle;
use super::{DesignPoint, DesignSpec, PerformanceRecord, SwitchParams};
use crate::catalog::cap_parasitics;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub steps_per_cycle: usize,
    /// Budget of simulated cycles for locating the periodic orbit.
    pub max_cycles: usize,
    /// Start/end state mismatch accepted as periodic, relative to `I_o` and `V_o`.
    pub periodicity_tol: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            steps_per_cycle: 1000,
            max_cycles: 400,
            periodicity_tol: 1e-9,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_cycle < 100 || self.max_cycles < 2 || !(self.periodicity_tol > 0.0) {
            return Err(Error::Config(
                "simulation needs steps_per_cycle >= 100, max_cycles >= 2 and a positive tolerance".into(),
            ));
        }
        Ok(())
    }
}

/// One recorded instant of the settled cycle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaveSample {
    pub t: f64,
    pub i_l: f64,
    pub v_c: f64,
    pub v_o: f64,
    pub i_c: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransientDiagnostics {
    pub duty: f64,
    pub mean_v_o: f64,
    /// Energy drawn from the input per cycle by the simulated network, J.
    pub energy_in: f64,
    /// Energy delivered to the load per cycle, J.
    pub energy_out: f64,
    /// Energy dissipated in the network per cycle, J.
    pub energy_dissipated: f64,
    /// `|in - out - dissipated| / in`.
    pub balance_error: f64,
    pub cycles: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransientResult {
    pub record: PerformanceRecord,
    pub diagnostics: TransientDiagnostics,
    pub waveform: Vec<WaveSample>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Phase {
    High,
    Dead,
    Low,
}

/// Network constants in SI units.
struct Circuit {
    l: f64,
    r_l: f64,
    c: f64,
    esr: f64,
    esl: f64,
    r_load: f64,
    v_in: f64,
    r_ds: f64,
    v_sd: f64,
}

type Vec2 = [f64; 2];
type Mat2 = [[f64; 2]; 2];

/// Dead-time conduction path chosen by the sign of the inductor current.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum DeadPath {
    /// Low-side body diode carries positive current.
    LowDiode,
    /// High-side body diode carries negative current back to the input.
    HighDiode,
    /// Both diodes off, inductor current held at zero.
    Clamped,
}

impl Circuit {
    fn new(point: &DesignPoint, spec: &DesignSpec, sw: &SwitchParams) -> Result<Self> {
        let (esr, esl) = cap_parasitics(&point.capacitor, point.fs)?;
        Ok(Circuit {
            l: point.inductor.l_henry(),
            r_l: point.inductor.r_l,
            c: point.capacitor.c_farad(),
            esr,
            esl,
            r_load: spec.r_load(),
            v_in: spec.v_in,
            r_ds: sw.r_dson,
            v_sd: sw.v_sd,
        })
    }

    /// `v_o = k * (v_C + ESR * i_L)`.
    fn k(&self) -> f64 {
        self.r_load / (self.r_load + self.esr)
    }

    fn v_o(&self, x: Vec2) -> f64 {
        self.k() * (x[1] + self.esr * x[0])
    }

    fn i_c(&self, x: Vec2) -> f64 {
        x[0] - self.v_o(x) / self.r_load
    }

    /// Series switch resistance and source voltage seen by the inductor.
    fn source(&self, phase: Phase, path: DeadPath) -> (f64, f64) {
        match (phase, path) {
            (Phase::High, _) => (self.r_ds, self.v_in),
            (Phase::Low, _) => (self.r_ds, 0.0),
            (Phase::Dead, DeadPath::LowDiode) => (0.0, -self.v_sd),
            (Phase::Dead, DeadPath::HighDiode) => (0.0, self.v_in + self.v_sd),
            (Phase::Dead, DeadPath::Clamped) => unreachable!("clamped interval has no source"),
        }
    }

    /// `dx/dt = A x + b` for a conducting interval.
    fn system(&self, phase: Phase, path: DeadPath) -> (Mat2, Vec2) {
        let k = self.k();
        let (r_sw, v_src) = self.source(phase, path);
        let a = [
            [-(r_sw + self.r_l + k * self.esr) / self.l, -k / self.l],
            [(1.0 - k * self.esr / self.r_load) / self.c, -k / (self.r_load * self.c)],
        ];
        (a, [v_src / self.l, 0.0])
    }

    fn di_dt(&self, phase: Phase, path: DeadPath, x: Vec2) -> f64 {
        if path == DeadPath::Clamped && phase == Phase::Dead {
            return 0.0;
        }
        let (a, b) = self.system(phase, path);
        a[0][0] * x[0] + a[0][1] * x[1] + b[0]
    }
}

/// Trapezoidal step `x' = M x + c` of `dx/dt = A x + b`.
#[derive(Clone, Copy)]
struct StepMap {
    m: Mat2,
    c: Vec2,
}

impl StepMap {
    fn trapezoidal(a: Mat2, b: Vec2, h: f64) -> Self {
        let lhs = [
            [1.0 - 0.5 * h * a[0][0], -0.5 * h * a[0][1]],
            [-0.5 * h * a[1][0], 1.0 - 0.5 * h * a[1][1]],
        ];
        let rhs = [
            [1.0 + 0.5 * h * a[0][0], 0.5 * h * a[0][1]],
            [0.5 * h * a[1][0], 1.0 + 0.5 * h * a[1][1]],
        ];
        let inv = inverse(lhs);
        StepMap {
            m: mul(inv, rhs),
            c: apply(inv, [h * b[0], h * b[1]]),
        }
    }

    fn step(&self, x: Vec2) -> Vec2 {
        let y = apply(self.m, x);
        [y[0] + self.c[0], y[1] + self.c[1]]
    }
}

fn inverse(a: Mat2) -> Mat2 {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]]
}

fn mul(a: Mat2, b: Mat2) -> Mat2 {
    let mut out = [[0.0; 2]; 2];
    for (r, row) in out.iter_mut().enumerate() {
        for (c, cell) in row.iter_mut().enumerate() {
            *cell = a[r][0] * b[0][c] + a[r][1] * b[1][c];
        }
    }
    out
}

fn apply(a: Mat2, x: Vec2) -> Vec2 {
    [a[0][0] * x[0] + a[0][1] * x[1], a[1][0] * x[0] + a[1][1] * x[1]]
}

/// One interval of the switching period with its precomputed step maps.
struct Interval {
    phase: Phase,
    steps: usize,
    h: f64,
    main: StepMap,
    /// Dead interval only: map for negative current through the high-side diode.
    reverse: Option<StepMap>,
    /// Dead interval only: capacitor discharge with `i_L` held at zero.
    clamped: Option<StepMap>,
}

/// Per-cycle integrals of the settled waveform, J (or V·s for `vo_integral`).
#[derive(Default)]
struct Tally {
    high_conduction: f64,
    low_conduction: f64,
    low_diode: f64,
    high_diode: f64,
    copper: f64,
    esr: f64,
    output: f64,
    input: f64,
    vo_integral: f64,
    i_min: f64,
    i_max: f64,
    vo_min: f64,
    vo_max: f64,
    i_turn_on: f64,
    i_turn_off: f64,
}

struct Cycle<'a> {
    ckt: &'a Circuit,
    period: f64,
    intervals: Vec<Interval>,
}

impl<'a> Cycle<'a> {
    fn new(ckt: &'a Circuit, fs: f64, dead_time: f64, duty: f64, steps_per_cycle: usize) -> Self {
        let period = 1.0 / fs;
        let h_nominal = period / steps_per_cycle as f64;
        let layout = [
            (Phase::High, duty * period),
            (Phase::Dead, dead_time),
            (Phase::Low, (1.0 - duty) * period - 2.0 * dead_time),
            (Phase::Dead, dead_time),
        ];
        let mut intervals = Vec::with_capacity(4);
        for (phase, duration) in layout {
            if duration <= 0.0 {
                continue;
            }
            let steps = ((duration / h_nominal).round() as usize).max(1);
            let h = duration / steps as f64;
            let (path, reverse, clamped) = if phase == Phase::Dead {
                let (a, b) = ckt.system(Phase::Dead, DeadPath::HighDiode);
                // i_L = 0: dv/dt = -k v / (R C)
                let k = ckt.k();
                let a_clamped = [[0.0, 0.0], [0.0, -k / (ckt.r_load * ckt.c)]];
                (
                    DeadPath::LowDiode,
                    Some(StepMap::trapezoidal(a, b, h)),
                    Some(StepMap::trapezoidal(a_clamped, [0.0, 0.0], h)),
                )
            } else {
                (DeadPath::LowDiode, None, None)
            };
            let (a, b) = ckt.system(phase, path);
            intervals.push(Interval {
                phase,
                steps,
                h,
                main: StepMap::trapezoidal(a, b, h),
                reverse,
                clamped,
            });
        }
        Cycle { ckt, period, intervals }
    }

    /// Advances one cycle from `x`; accumulates integrals into `tally` and
    /// samples into `wave` when given.
    fn run(&self, x: Vec2, tally: Option<&mut Tally>, wave: Option<&mut Vec<WaveSample>>) -> Vec2 {
        self.run_full(x, tally, wave, None)
    }

    /// Like `run`, also returning the Jacobian of the end state with respect
    /// to the start state.
    fn run_with_jacobian(&self, x: Vec2) -> (Vec2, Mat2) {
        let mut jac = [[1.0, 0.0], [0.0, 1.0]];
        let y = self.run_full(x, None, None, Some(&mut jac));
        (y, jac)
    }

    fn run_full(
        &self,
        mut x: Vec2,
        mut tally: Option<&mut Tally>,
        mut wave: Option<&mut Vec<WaveSample>>,
        mut jac: Option<&mut Mat2>,
    ) -> Vec2 {
        let ckt = self.ckt;
        let mut t = 0.0;
        if let Some(tl) = tally.as_deref_mut() {
            tl.i_min = x[0];
            tl.i_max = x[0];
            tl.vo_min = f64::MAX;
            tl.vo_max = f64::MIN;
            tl.i_turn_on = x[0];
        }
        for iv in &self.intervals {
            for _ in 0..iv.steps {
                let (next, path) = match iv.phase {
                    Phase::Dead => dead_step(iv, x),
                    _ => (iv.main.step(x), DeadPath::LowDiode),
                };
                if let Some(j) = jac.as_deref_mut() {
                    *j = mul(step_matrix(iv, path), *j);
                }
                if let Some(tl) = tally.as_deref_mut() {
                    let mid = [0.5 * (x[0] + next[0]), 0.5 * (x[1] + next[1])];
                    let h = iv.h;
                    let i2 = mid[0] * mid[0];
                    let v_o = ckt.v_o(mid);
                    let i_c = ckt.i_c(mid);
                    match (iv.phase, path) {
                        (Phase::High, _) => {
                            tl.high_conduction += h * ckt.r_ds * i2;
                            tl.input += h * ckt.v_in * mid[0];
                        }
                        (Phase::Low, _) => tl.low_conduction += h * ckt.r_ds * i2,
                        (Phase::Dead, DeadPath::LowDiode) => tl.low_diode += h * ckt.v_sd * mid[0],
                        (Phase::Dead, DeadPath::HighDiode) => {
                            tl.high_diode += h * ckt.v_sd * mid[0].abs();
                            tl.input += h * ckt.v_in * mid[0];
                        }
                        (Phase::Dead, DeadPath::Clamped) => {}
                    }
                    tl.copper += h * ckt.r_l * i2;
                    tl.esr += h * ckt.esr * i_c * i_c;
                    tl.output += h * v_o * v_o / ckt.r_load;
                    tl.vo_integral += h * v_o;
                    tl.i_min = tl.i_min.min(next[0]);
                    tl.i_max = tl.i_max.max(next[0]);
                    // ESL voltage follows the slope of the interval being integrated
                    for s in [x, next] {
                        let v = ckt.v_o(s) + ckt.esl * ckt.di_dt(iv.phase, path, s);
                        tl.vo_min = tl.vo_min.min(v);
                        tl.vo_max = tl.vo_max.max(v);
                    }
                }
                if let Some(w) = wave.as_deref_mut() {
                    w.push(WaveSample {
                        t,
                        i_l: x[0],
                        v_c: x[1],
                        v_o: ckt.v_o(x) + ckt.esl * ckt.di_dt(iv.phase, path, x),
                        i_c: ckt.i_c(x),
                    });
                }
                x = next;
                t += iv.h;
            }
            if iv.phase == Phase::High {
                if let Some(tl) = tally.as_deref_mut() {
                    tl.i_turn_off = x[0];
                }
            }
        }
        x
    }
}

/// Dead-time step: the body diode matching the current sign conducts; a
/// current that would cross zero is clamped there.
fn dead_step(iv: &Interval, x: Vec2) -> (Vec2, DeadPath) {
    let reverse = iv.reverse.as_ref().expect("dead interval");
    let clamped = iv.clamped.as_ref().expect("dead interval");
    if x[0] > 0.0 {
        let y = iv.main.step(x);
        if y[0] >= 0.0 {
            return (y, DeadPath::LowDiode);
        }
    } else if x[0] < 0.0 {
        let y = reverse.step(x);
        if y[0] <= 0.0 {
            return (y, DeadPath::HighDiode);
        }
    }
    let y = clamped.step([0.0, x[1]]);
    ([0.0, y[1]], DeadPath::Clamped)
}

/// Linear part of the step taken along `path`.
fn step_matrix(iv: &Interval, path: DeadPath) -> Mat2 {
    match (iv.phase, path) {
        (Phase::Dead, DeadPath::HighDiode) => iv.reverse.as_ref().expect("dead interval").m,
        (Phase::Dead, DeadPath::Clamped) => {
            let m = iv.clamped.as_ref().expect("dead interval").m;
            [[0.0, 0.0], [0.0, m[1][1]]]
        }
        _ => iv.main.m,
    }
}

/// Newton shooting for the periodic orbit of one duty cycle.
fn periodic_orbit(cycle: &Cycle, x0: Vec2, scale: Vec2, cfg: &SimConfig, used: &mut usize) -> Result<Vec2> {
    let mut x = x0;
    let residual_of = |x: Vec2, y: Vec2| ((y[0] - x[0]) / scale[0]).abs().max(((y[1] - x[1]) / scale[1]).abs());
    loop {
        if *used + 1 > cfg.max_cycles {
            let y = cycle.run(x, None, None);
            return Err(Error::Convergence {
                cycles: *used,
                residual: residual_of(x, y),
            });
        }
        let (y, jac) = cycle.run_with_jacobian(x);
        *used += 1;
        let r = [y[0] - x[0], y[1] - x[1]];
        if residual_of(x, y) <= cfg.periodicity_tol {
            return Ok(x);
        }
        let g = [[1.0 - jac[0][0], -jac[0][1]], [-jac[1][0], 1.0 - jac[1][1]]];
        let det = g[0][0] * g[1][1] - g[0][1] * g[1][0];
        if !det.is_finite() || det.abs() < 1e-300 {
            x = y;
            continue;
        }
        let dx = apply(inverse(g), r);
        x = [x[0] + dx[0], x[1] + dx[1]];
        if !(x[0].is_finite() && x[1].is_finite()) {
            return Err(Error::Convergence {
                cycles: *used,
                residual: f64::INFINITY,
            });
        }
    }
}

/// Full transient evaluation with diagnostics and the settled waveform.
pub fn simulate(
    point: &DesignPoint,
    spec: &DesignSpec,
    sw: &SwitchParams,
    cfg: &SimConfig,
    record_waveform: bool,
) -> Result<TransientResult> {
    point.check(spec)?;
    sw.validate()?;
    cfg.validate()?;
    let ckt = Circuit::new(point, spec, sw)?;
    let fs = point.fs;
    let i_o = spec.i_o();
    let scale = [i_o, spec.v_o];

    let d0 = duty_cycle(spec, sw, point.inductor.r_l, fs)?;
    let dead = 2.0 * spec.dead_time * fs;
    let d_max = 1.0 - dead - 1e-6;
    let mut used = 0;

    // Mean output at a given duty cycle, warm-starting from the last orbit.
    let mut x_guess = [i_o, spec.v_o / ckt.k()];
    let settle = |d: f64, used: &mut usize, x_guess: &mut Vec2| -> Result<(f64, Vec2)> {
        let cycle = Cycle::new(&ckt, fs, spec.dead_time, d, cfg.steps_per_cycle);
        let x = periodic_orbit(&cycle, *x_guess, scale, cfg, used)?;
        *x_guess = x;
        let mut tally = Tally::default();
        cycle.run(x, Some(&mut tally), None);
        *used += 1;
        Ok((tally.vo_integral / cycle.period, x))
    };

    let mut d_prev = d0;
    let (mut m_prev, _) = settle(d_prev, &mut used, &mut x_guess)?;
    let mut d = (d0 + (spec.v_o - m_prev) / spec.v_in).clamp(1e-6, d_max);
    for _ in 0..30 {
        let (m, _) = settle(d, &mut used, &mut x_guess)?;
        if ((m - spec.v_o) / spec.v_o).abs() < 1e-10 {
            break;
        }
        let slope = if (d - d_prev).abs() > 1e-15 {
            (m - m_prev) / (d - d_prev)
        } else {
            spec.v_in
        };
        let slope = if slope.is_finite() && slope > 0.0 { slope } else { spec.v_in };
        d_prev = d;
        m_prev = m;
        d = (d + (spec.v_o - m) / slope).clamp(1e-6, d_max);
    }

    let cycle = Cycle::new(&ckt, fs, spec.dead_time, d, cfg.steps_per_cycle);
    let x = periodic_orbit(&cycle, x_guess, scale, cfg, &mut used)?;
    let mut tally = Tally::default();
    let mut wave = Vec::new();
    let end = cycle.run(x, Some(&mut tally), record_waveform.then_some(&mut wave));
    used += 1;
    let residual = ((end[0] - x[0]) / scale[0]).abs().max(((end[1] - x[1]) / scale[1]).abs());
    if residual > cfg.periodicity_tol.max(1e-12) * 10.0 {
        return Err(Error::Convergence { cycles: used, residual });
    }

    let period = cycle.period;
    let delta_i = tally.i_max - tally.i_min;
    let ind = &point.inductor;
    let delta_b = ind.l_henry() * delta_i / (f64::from(ind.turns) * ind.core.ae_mm2 * 1e-6);

    let p_ls1 = (tally.high_conduction + tally.high_diode) / period
        + fs * sw.switching_energy_terms(spec.v_in, tally.i_turn_on, tally.i_turn_off);
    let p_ls2 = (tally.low_conduction + tally.low_diode) / period;
    let p_lcu = tally.copper / period;
    let p_lfe = ind.core.steinmetz.loss_density(fs, delta_b) * ind.core.volume_cm3 * 1e-6;
    let p_lc = tally.esr / period;

    let dissipated = tally.high_conduction
        + tally.low_conduction
        + tally.low_diode
        + tally.high_diode
        + tally.copper
        + tally.esr;
    let balance_error = if tally.input.abs() > 0.0 {
        ((tally.input - tally.output - dissipated) / tally.input).abs()
    } else {
        0.0
    };

    let record = PerformanceRecord {
        p_ls1,
        p_ls2,
        p_lcu,
        p_lfe,
        p_lc,
        dvo: (tally.vo_max - tally.vo_min) / spec.v_o,
        dil: delta_i / i_o,
        vol: point.volume_cm3(),
        eta: 1.0,
        duty: d,
        ccm: tally.i_min > 0.0,
    }
    .with_efficiency(spec.p_o);

    Ok(TransientResult {
        record,
        diagnostics: TransientDiagnostics {
            duty: d,
            mean_v_o: tally.vo_integral / period,
            energy_in: tally.input,
            energy_out: tally.output,
            energy_dissipated: dissipated,
            balance_error,
            cycles: used,
        },
        waveform: wave,
    })
}

/// Transient evaluation of the settled cycle.
pub fn transient_evaluate(
    point: &DesignPoint,
    spec: &DesignSpec,
    sw: &SwitchParams,
    cfg: &SimConfig,
) -> Result<PerformanceRecord> {
    simulate(point, spec, sw, cfg, false).map(|r| r.record)
}

/// Writes a waveform as CSV with columns `t,i_L,v_C,v_o,i_C`.
pub fn write_waveform_csv<W: Write>(out: W, wave: &[WaveSample]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "i_L", "v_C", "v_o", "i_C"])?;
    for s in wave {
        w.write_record(&[
            s.t.to_string(),
            s.i_l.to_string(),
            s.v_c.to_string(),
            s.v_o.to_string(),
            s.i_c.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
