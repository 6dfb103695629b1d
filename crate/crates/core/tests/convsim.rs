use approx::assert_relative_eq;
use buckdesign::catalog::{CapBankEntry, CapacitorRecord, Catalog, CatalogDef, Connection, InductorEntry};
use buckdesign::convsim::{
    analytic_evaluate, simulate, transient_evaluate, voltage_ripple_breakdown, DesignPoint, DesignSpec, SimConfig,
    SwitchParams,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn catalog() -> Catalog {
    let s = DesignSpec::table_one();
    CatalogDef::design_case().build(s.l_range.as_tuple(), s.c_range.as_tuple()).unwrap()
}

/// Lossless inductor of `l_uh` on a real core.
fn ideal_inductor(cat: &Catalog, l_uh: f64) -> InductorEntry {
    InductorEntry {
        l_uh,
        r_l: 0.0,
        ..cat.inductors[0].clone()
    }
}

/// Single part with no ESR and no ESL.
fn ideal_bank(c_uf: f64) -> CapBankEntry {
    let part = CapacitorRecord {
        name: "ideal".into(),
        c_uf,
        volume_cm3: 1.0,
        tan_delta: 0.0,
        k_esl: 0.0,
    };
    CapBankEntry::from_connection(Connection::Single(0), &[part])
}

fn lossless_spec() -> DesignSpec {
    DesignSpec {
        dead_time: 0.0,
        ..DesignSpec::table_one()
    }
}

/// Peak-to-peak output ripple of a lossless buck: the ideal triangle current
/// into `C` parallel to the load, integrated with RK4 until periodic.
fn rk4_output_ripple(spec: &DesignSpec, fs: f64, l_uh: f64, c_uf: f64) -> f64 {
    let d = spec.v_o / spec.v_in;
    let (l, c, r) = (l_uh * 1e-6, c_uf * 1e-6, spec.r_load());
    let period = 1.0 / fs;
    let up = (spec.v_in - spec.v_o) / l;
    let down = -spec.v_o / l;
    let di = up * d * period;
    let current = |t: f64| {
        let t = t.rem_euclid(period);
        if t < d * period {
            -di / 2.0 + up * t
        } else {
            di / 2.0 + down * (t - d * period)
        }
    };
    let f = |t: f64, v: f64| (current(t) - v / r) / c;
    let steps = 20_000;
    let h = period / steps as f64;
    let settle = (40.0 * r * c / period).ceil() as usize + 2;
    let mut v = 0.0;
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    for n in 0..settle * steps {
        let t = n as f64 * h;
        let k1 = f(t, v);
        let k2 = f(t + h / 2.0, v + h / 2.0 * k1);
        let k3 = f(t + h / 2.0, v + h / 2.0 * k2);
        let k4 = f(t + h, v + h * k3);
        v += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if n >= (settle - 1) * steps {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    hi - lo
}

#[test]
fn ideal_ripples_match_textbook_formulas() {
    let cat = catalog();
    let spec = lossless_spec();
    let sw = SwitchParams::ideal();
    for (fs, l, c) in [(20e3, 540.0, 56.0), (50e3, 200.0, 100.0), (120e3, 90.0, 330.0)] {
        let p = DesignPoint::new(fs, ideal_inductor(&cat, l), ideal_bank(c));
        let d = spec.v_o / spec.v_in;
        let di = (1.0 - d) * spec.v_o / (l * 1e-6 * fs);
        let dv = di / (8.0 * fs * c * 1e-6);
        let loaded = rk4_output_ripple(&spec, fs, l, c);
        let a = analytic_evaluate(&p, &spec, &sw).unwrap();
        assert_relative_eq!(a.dil, di / spec.i_o(), max_relative = 1e-9);
        assert_relative_eq!(voltage_ripple_breakdown(&p, &spec, &sw).unwrap().charge, dv, max_relative = 1e-9);
        assert_relative_eq!(a.dvo * spec.v_o, loaded, max_relative = 1e-6);
        let t = transient_evaluate(&p, &spec, &sw, &SimConfig::default()).unwrap();
        assert_relative_eq!(t.dil, di / spec.i_o(), max_relative = 5e-3);
        assert_relative_eq!(t.dvo * spec.v_o, loaded, max_relative = 2e-2);
        // Only the core keeps its Steinmetz loss.
        assert!((t.p_ls1 + t.p_ls2 + t.p_lcu + t.p_lc).abs() < 1e-9);
    }
}

#[test]
fn random_ccm_points_agree_across_engines() {
    let cat = catalog();
    let spec = DesignSpec::table_one();
    let sw = SwitchParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checked = 0;
    while checked < 25 {
        let p = DesignPoint::new(
            rng.random_range(spec.fs_range.min..spec.fs_range.max),
            cat.inductors[rng.random_range(0..cat.inductors.len())].clone(),
            cat.banks[rng.random_range(0..cat.banks.len())].clone(),
        );
        let a = analytic_evaluate(&p, &spec, &sw).unwrap();
        if !a.ccm {
            continue;
        }
        let r = simulate(&p, &spec, &sw, &SimConfig::default(), false).unwrap();
        let t = r.record;
        assert!(t.ccm);
        assert_relative_eq!(t.dil, a.dil, max_relative = 0.02);
        assert_relative_eq!(t.dvo, a.dvo, max_relative = 0.10);
        let cond = |x: &buckdesign::convsim::PerformanceRecord| x.p_ls1 + x.p_ls2 + x.p_lcu;
        assert_relative_eq!(cond(&t), cond(&a), max_relative = 0.05);
        assert!(r.diagnostics.balance_error < 0.01, "{:?}", r.diagnostics);
        checked += 1;
    }
}

#[test]
fn dcm_points_are_flagged_by_both_engines() {
    let cat = catalog();
    let spec = DesignSpec::table_one().at_power(10.0);
    let sw = SwitchParams::default();
    let p = DesignPoint::new(20e3, cat.inductors[0].clone(), cat.banks[10].clone());
    let a = analytic_evaluate(&p, &spec, &sw).unwrap();
    let t = transient_evaluate(&p, &spec, &sw, &SimConfig::default()).unwrap();
    assert!(!a.ccm && !t.ccm);
}

#[test]
fn waveform_is_recorded_on_request() {
    let cat = catalog();
    let spec = DesignSpec::table_one();
    let p = DesignPoint::new(40e3, cat.inductors[60].clone(), cat.banks[100].clone());
    let cfg = SimConfig::default();
    let with = simulate(&p, &spec, &SwitchParams::default(), &cfg, true).unwrap();
    let without = simulate(&p, &spec, &SwitchParams::default(), &cfg, false).unwrap();
    assert!(with.waveform.len() >= cfg.steps_per_cycle);
    assert!(without.waveform.is_empty());
    assert_eq!(with.record, without.record);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn current_ripple_falls_with_l_and_fs(fs in 20e3f64..150e3, l in 30.0f64..1500.0, c in 20.0f64..1000.0, k in 1.01f64..1.3) {
        let cat = catalog();
        let spec = lossless_spec();
        let sw = SwitchParams::ideal();
        let base = analytic_evaluate(&DesignPoint::new(fs, ideal_inductor(&cat, l), ideal_bank(c)), &spec, &sw).unwrap();
        let more_l = analytic_evaluate(&DesignPoint::new(fs, ideal_inductor(&cat, l * k), ideal_bank(c)), &spec, &sw).unwrap();
        let more_f = analytic_evaluate(&DesignPoint::new(fs * k, ideal_inductor(&cat, l), ideal_bank(c)), &spec, &sw).unwrap();
        prop_assert!(more_l.dil < base.dil);
        prop_assert!(more_f.dil < base.dil);
    }

    #[test]
    fn voltage_ripple_falls_with_c(fs in 20e3f64..200e3, l in 30.0f64..2000.0, c in 20.0f64..900.0, k in 1.01f64..1.5) {
        let cat = catalog();
        let spec = lossless_spec();
        let sw = SwitchParams::ideal();
        let a = analytic_evaluate(&DesignPoint::new(fs, ideal_inductor(&cat, l), ideal_bank(c)), &spec, &sw).unwrap();
        let b = analytic_evaluate(&DesignPoint::new(fs, ideal_inductor(&cat, l), ideal_bank(c * k)), &spec, &sw).unwrap();
        prop_assert!(b.dvo < a.dvo);
    }

    #[test]
    fn analytic_engine_is_pure(fs in 20e3f64..200e3, li in 0usize..135, ci in 0usize..2000) {
        let cat = catalog();
        let spec = DesignSpec::table_one();
        let p = DesignPoint::new(fs, cat.inductors[li % cat.inductors.len()].clone(), cat.banks[ci % cat.banks.len()].clone());
        let a = analytic_evaluate(&p, &spec, &SwitchParams::default()).unwrap();
        let b = analytic_evaluate(&p.clone(), &spec.clone(), &SwitchParams::default()).unwrap();
        prop_assert_eq!(a, b);
        prop_assert!(a.total_loss() > 0.0 && a.eta > 0.0 && a.eta < 1.0);
    }
}
