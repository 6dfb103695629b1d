//! Closed-form CCM analysis of the synchronous buck.

use serde::{Deserialize, Serialize};

use super::{DesignPoint, DesignSpec, PerformanceRecord, SwitchParams};
use crate::catalog::cap_parasitics;
use crate::error::{Error, Result};

/// Duty cycle from the loss-inclusive volt-second balance.
///
/// Over one period the high-side switch conducts for `D*T`, each dead time
/// routes the load current through the low-side body diode and the low-side
/// channel conducts for the remainder. With conduction drops taken at the mean
/// current the balance is linear in `D`:
///
/// `D*V_in = V_o + I_o*R_L + I_o*R_dson*(1 - 2*t_d*f_s) + 2*t_d*f_s*V_sd`
pub fn duty_cycle(spec: &DesignSpec, sw: &SwitchParams, r_l: f64, fs: f64) -> Result<f64> {
    let i = spec.i_o();
    let dead = 2.0 * spec.dead_time * fs;
    let d = (spec.v_o + i * r_l + i * sw.r_dson * (1.0 - dead) + dead * sw.v_sd) / spec.v_in;
    if !(d > 0.0 && d + dead < 1.0) {
        return Err(Error::Domain(format!(
            "no valid duty cycle: D = {d:.4} with dead-time fraction {dead:.4}"
        )));
    }
    Ok(d)
}

/// One linear piece of the inductor current over a switching period.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Segment {
    pub duration: f64,
    /// di_L/dt, A/s.
    pub slope: f64,
}

/// Inductor current pieces: high-side on, dead time, low-side on, dead time.
pub(crate) fn current_segments(
    spec: &DesignSpec,
    sw: &SwitchParams,
    point: &DesignPoint,
    d: f64,
) -> [Segment; 4] {
    let l = point.inductor.l_henry();
    let r_l = point.inductor.r_l;
    let i = spec.i_o();
    let period = 1.0 / point.fs;
    let td = spec.dead_time;
    let on = (spec.v_in - spec.v_o - i * (sw.r_dson + r_l)) / l;
    let diode = -(spec.v_o + sw.v_sd + i * r_l) / l;
    let low = -(spec.v_o + i * (sw.r_dson + r_l)) / l;
    [
        Segment { duration: d * period, slope: on },
        Segment { duration: td, slope: diode },
        Segment { duration: (1.0 - d) * period - 2.0 * td, slope: low },
        Segment { duration: td, slope: diode },
    ]
}

/// Components of the peak-to-peak output voltage ripple, V.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RippleBreakdown {
    /// Capacitor charge ripple alone (`dI / (8 f C)` for a symmetric triangle).
    pub charge: f64,
    /// `ESR * dI`.
    pub esr: f64,
    /// ESL step between the steepest rising and falling current slopes.
    pub esl: f64,
    /// Sum of the three terms; an upper bound.
    pub additive: f64,
    /// Peak-to-peak output voltage with the load sharing the ripple current.
    pub composite: f64,
}

/// Output ripple of the inductor current `segments` into the capacitor
/// branch (`C` with `esr`, `esl`) in parallel with `r_load`.
///
/// The charge, ESR and ESL terms assume the whole inductor ripple flows into
/// the capacitor. The composite solves the loaded network exactly: the
/// capacitor voltage is exponential plus linear on each piece, and the terms
/// peak at different instants.
pub(crate) fn ripple_from_segments(
    segments: &[Segment],
    c: f64,
    esr: f64,
    esl: f64,
    r_load: f64,
) -> RippleBreakdown {
    let segs: Vec<Segment> = segments.iter().copied().filter(|s| s.duration > 0.0).collect();
    let period: f64 = segs.iter().map(|s| s.duration).sum();

    // Inductor current from zero, then shift to zero mean.
    let mut knots = Vec::with_capacity(segs.len() + 1);
    let mut i = 0.0;
    let mut area = 0.0;
    knots.push(i);
    for s in &segs {
        let next = i + s.slope * s.duration;
        area += 0.5 * (i + next) * s.duration;
        i = next;
        knots.push(i);
    }
    let mean = area / period;

    let i_max = knots.iter().copied().fold(f64::MIN, f64::max);
    let i_min = knots.iter().copied().fold(f64::MAX, f64::min);
    let delta_i = i_max - i_min;
    let s_max = segs.iter().map(|s| s.slope).fold(f64::MIN, f64::max);
    let s_min = segs.iter().map(|s| s.slope).fold(f64::MAX, f64::min);

    let mut vc = 0.0;
    let (mut vc_lo, mut vc_hi) = (0.0_f64, 0.0_f64);
    for (k, s) in segs.iter().enumerate() {
        let ic0 = knots[k] - mean;
        // v_C(t) = vc + (ic0*t + s*t²/2)/C on this piece
        let vc_at = |t: f64| vc + (ic0 * t + 0.5 * s.slope * t * t) / c;
        let mut ts = vec![0.0, s.duration];
        if s.slope != 0.0 {
            // v_C extremum where i_C = 0
            let t0 = -ic0 / s.slope;
            if t0 > 0.0 && t0 < s.duration {
                ts.push(t0);
            }
        }
        for &t in &ts {
            let v = vc_at(t);
            vc_lo = vc_lo.min(v);
            vc_hi = vc_hi.max(v);
        }
        vc = vc_at(s.duration);
    }

    let (g_lo, g_hi) = loaded_extremes(&segs, &knots, mean, c, esr, esl, r_load);
    let charge = vc_hi - vc_lo;
    let esr_term = esr * delta_i;
    let esl_term = esl * (s_max - s_min);
    RippleBreakdown {
        charge,
        esr: esr_term,
        esl: esl_term,
        additive: charge + esr_term + esl_term,
        composite: g_hi - g_lo,
    }
}

/// Extremes of `v_o = k*(v_C + ESR*i_L) + ESL*di_L/dt` over the periodic
/// steady state, with `dv_C/dt = (k*i_L - v_C/R)/C` and `k = R/(R + ESR)`.
fn loaded_extremes(
    segs: &[Segment],
    knots: &[f64],
    mean: f64,
    c: f64,
    esr: f64,
    esl: f64,
    r_load: f64,
) -> (f64, f64) {
    let k = r_load / (r_load + esr);
    let tau = c * (r_load + esr);
    // 1 - exp(-x) and x - (1 - exp(-x)), both accurate for small x.
    let e1 = |x: f64| -(-x).exp_m1();
    let g2 = |x: f64| {
        if x < 1e-3 {
            x * x * (0.5 - x * (1.0 / 6.0 - x * (1.0 / 24.0 - x / 120.0)))
        } else {
            x - e1(x)
        }
    };
    // v_C after time t on a piece with i = i0 + slope*t, starting from v0
    let advance = |v0: f64, i0: f64, slope: f64, t: f64| {
        let x = t / tau;
        v0 * (-x).exp() + k * tau / c * (i0 * e1(x) + slope * tau * g2(x))
    };

    // Periodic start: v(T) = M*v0 + B, linear in v0.
    let mut b = 0.0;
    let mut total = 0.0;
    for (j, s) in segs.iter().enumerate() {
        b = advance(b, knots[j] - mean, s.slope, s.duration);
        total += s.duration;
    }
    let mut v0 = b / e1(total / tau);

    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    for (j, s) in segs.iter().enumerate() {
        let i0 = knots[j] - mean;
        let v_o = |t: f64| k * (advance(v0, i0, s.slope, t) + esr * (i0 + s.slope * t)) + esl * s.slope;
        let mut ts = vec![0.0, s.duration];
        // dv_o/dt = 0 where dv_C/dt = -ESR*slope
        let w0 = k * i0 / c - v0 / tau;
        let denom = k * s.slope * tau / c - w0;
        if denom != 0.0 {
            let u = (w0 + esr * s.slope) / denom;
            if u > -1.0 {
                let t = -tau * u.ln_1p();
                if t > 0.0 && t < s.duration {
                    ts.push(t);
                }
            }
        }
        for t in ts {
            let v = v_o(t);
            lo = lo.min(v);
            hi = hi.max(v);
        }
        v0 = advance(v0, i0, s.slope, s.duration);
    }
    (lo, hi)
}

/// Output ripple decomposition of `point` at its operating duty cycle.
pub fn voltage_ripple_breakdown(
    point: &DesignPoint,
    spec: &DesignSpec,
    sw: &SwitchParams,
) -> Result<RippleBreakdown> {
    point.check(spec)?;
    let d = duty_cycle(spec, sw, point.inductor.r_l, point.fs)?;
    let (esr, esl) = cap_parasitics(&point.capacitor, point.fs)?;
    let segs = current_segments(spec, sw, point, d);
    Ok(ripple_from_segments(&segs, point.capacitor.c_farad(), esr, esl, spec.r_load()))
}

/// Closed-form CCM evaluation of all loss terms, both ripples and the volume.
///
/// Points whose ripple would drive the mean-referenced valley below zero
/// are still evaluated with the CCM expressions and flagged `ccm = false`:
/// the synchronous low-side switch carries the negative current.
pub fn analytic_evaluate(
    point: &DesignPoint,
    spec: &DesignSpec,
    sw: &SwitchParams,
) -> Result<PerformanceRecord> {
    point.check(spec)?;
    sw.validate()?;
    let fs = point.fs;
    let ind = &point.inductor;
    let l = ind.l_henry();
    let i = spec.i_o();
    let dead = 2.0 * spec.dead_time * fs;

    let d = duty_cycle(spec, sw, ind.r_l, fs)?;
    let delta_i = (spec.v_in - spec.v_o - i * (sw.r_dson + ind.r_l)) * d / (l * fs);
    let irms2 = i * i + delta_i * delta_i / 12.0;

    let p_ls1 = d * irms2 * sw.r_dson + fs * sw.switching_energy_terms(spec.v_in, i, i);
    let p_ls2 = (1.0 - d - dead) * irms2 * sw.r_dson + sw.v_sd * i * dead;
    let p_lcu = irms2 * ind.r_l;

    let delta_b = l * delta_i / (f64::from(ind.turns) * ind.core.ae_mm2 * 1e-6);
    let p_lfe = ind.core.steinmetz.loss_density(fs, delta_b) * ind.core.volume_cm3 * 1e-6;

    let (esr, esl) = cap_parasitics(&point.capacitor, fs)?;
    let p_lc = delta_i * delta_i / 12.0 * esr;

    let segs = current_segments(spec, sw, point, d);
    let ripple = ripple_from_segments(&segs, point.capacitor.c_farad(), esr, esl, spec.r_load());

    Ok(PerformanceRecord {
        p_ls1,
        p_ls2,
        p_lcu,
        p_lfe,
        p_lc,
        dvo: ripple.composite / spec.v_o,
        dil: delta_i / i,
        vol: point.volume_cm3(),
        eta: 1.0,
        duty: d,
        ccm: delta_i / 2.0 <= i,
    }
    .with_efficiency(spec.p_o))
}

#[cfg(test)]
mod tests {
    use super::super::fixtures::*;
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn ideal_ripple_at_twenty_khz() {
        let spec = ideal_spec();
        let p = ideal_point(20e3, 540.0, 56.0);
        let r = analytic_evaluate(&p, &spec, &SwitchParams::ideal()).unwrap();
        assert_relative_eq!(r.duty, 0.25, max_relative = 1e-12);
        assert_relative_eq!(r.dil, 0.10, max_relative = 1e-12);
        assert_eq!(r.total_loss(), 0.0);
        assert_eq!(r.eta, 1.0);
        assert!(r.ccm);
        // pure charge ripple of a triangle: dI/(8 f C)
        let di = 0.1 * spec.i_o();
        let b = voltage_ripple_breakdown(&p, &spec, &SwitchParams::ideal()).unwrap();
        assert_relative_eq!(b.charge, di / (8.0 * 20e3 * 56e-6), max_relative = 1e-9);
        // the load takes a small share of the ripple current
        assert!(r.dvo * spec.v_o < b.charge && r.dvo * spec.v_o > 0.99 * b.charge);
    }

    #[test]
    fn high_side_conduction_hand_value() {
        let spec = DesignSpec {
            dead_time: 0.0,
            ..DesignSpec::table_one()
        };
        let sw = SwitchParams {
            r_dson: 5.6e-3,
            ..SwitchParams::ideal()
        };
        // Choose L so that dI = 0.8333 A at D ~ 0.25.
        let p = ideal_point(20e3, 540.0, 56.0);
        let r = analytic_evaluate(&p, &spec, &sw).unwrap();
        let i: f64 = 100.0 / 12.0;
        let di = r.dil * i;
        assert_relative_eq!(di, 0.8333, max_relative = 5e-3);
        let expected = r.duty * (i * i + di * di / 12.0) * 5.6e-3;
        assert_relative_eq!(r.p_ls1, expected, max_relative = 1e-12);
        assert_relative_eq!(r.p_ls1, 0.0973, max_relative = 5e-3);
    }

    #[test]
    fn no_load_limit() {
        let spec = DesignSpec {
            p_o: 1e-9,
            ..ideal_spec()
        };
        let p = ideal_point(50e3, 300.0, 100.0);
        let r = analytic_evaluate(&p, &spec, &SwitchParams::ideal()).unwrap();
        assert!(r.total_loss() < 1e-12);
        assert!(r.eta > 1.0 - 1e-9);
        assert!(!r.ccm);
    }

    #[test]
    fn duty_includes_drops() {
        let spec = DesignSpec::table_one();
        let sw = SwitchParams::default();
        let d = duty_cycle(&spec, &sw, 0.04, 36.6e3).unwrap();
        assert!(d > 0.25 && d < 0.27);
        let i = spec.i_o();
        let dead = 2.0 * spec.dead_time * 36.6e3;
        // volt-second balance residual
        let on = (spec.v_in - i * sw.r_dson - i * 0.04 - spec.v_o) * d;
        let off = (i * sw.r_dson + i * 0.04 + spec.v_o) * (1.0 - d - dead)
            + (sw.v_sd + i * 0.04 + spec.v_o) * dead;
        assert!((on - off).abs() < 1e-12);
    }

    #[test]
    fn breakdown_is_bounded_by_additive_sum() {
        let spec = DesignSpec::table_one();
        let sw = SwitchParams::default();
        let p = crate::convsim::DesignPoint::new(36.6e3, inductor(281.3, 0.0418), bank(112.0, 0.14, 4.389e-11));
        let b = voltage_ripple_breakdown(&p, &spec, &sw).unwrap();
        assert!(b.composite <= b.additive * (1.0 + 1e-12));
        assert!(b.composite >= 0.9 * b.esl.max(b.esr).max(b.charge));
        assert!(b.esl > 0.0 && b.esr > 0.0 && b.charge > 0.0);
    }

    #[test]
    fn monotone_in_l_fs_and_c() {
        let spec = ideal_spec();
        let sw = SwitchParams::ideal();
        let eval = |fs, l, c| analytic_evaluate(&ideal_point(fs, l, c), &spec, &sw).unwrap();
        let mut prev = f64::MAX;
        for l in [50.0, 100.0, 200.0, 400.0, 800.0] {
            let r = eval(50e3, l, 100.0);
            assert!(r.dil < prev);
            prev = r.dil;
        }
        prev = f64::MAX;
        for fs in [20e3, 40e3, 80e3, 160e3] {
            let r = eval(fs, 300.0, 100.0);
            assert!(r.dil < prev);
            prev = r.dil;
        }
        prev = f64::MAX;
        for c in [20.0, 50.0, 100.0, 500.0] {
            let r = eval(50e3, 300.0, c);
            assert!(r.dvo < prev);
            prev = r.dvo;
        }
    }

    #[test]
    fn dead_time_too_long_is_rejected() {
        let spec = DesignSpec {
            dead_time: 2e-6,
            ..DesignSpec::table_one()
        };
        let p = ideal_point(200e3, 300.0, 100.0);
        assert!(analytic_evaluate(&p, &spec, &SwitchParams::default()).is_err());
    }
}
