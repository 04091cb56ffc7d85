//! Acceptance suite. Each test prints one `PASS`/`FAIL` line to stdout,
//! bypassing libtest's capture, then asserts.

use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use skrock::cheb::build_coefficients;
use skrock::harness::{
    count_divergences, invariant_measure_error, spde_cost_table, stage_history, strong_error, weak_error,
    ConvergenceTable, InvariantMode, McSettings, WeakReference,
};
use skrock::problems::{
    make_double_well, make_heat_spde, make_linear_test, make_ou, make_pb1, make_population, PopulationParams,
};
use skrock::stability::{
    default_damping_range, domain_length, ergodicity_bound_check, max_boundary_amplification, non_ergodic_witness,
    optimize_damping, ou_invariant_ratio, stab_ab, StabilityPolynomials,
};
use skrock::{Integrator, IntegratorConfig, Method, NoiseKind};

fn report(id: u32, name: &str, passed: bool, detail: &str, started: Instant) {
    let line = format!(
        "criterion {id:02} {:<4} {name}: {detail} ({:.2}s)\n",
        if passed { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
}

#[test]
fn criterion_01_coefficient_identities() {
    let t0 = Instant::now();
    let mut worst_kappa: f64 = 0.0;
    let mut worst_deriv: f64 = 0.0;
    let mut worst_order: f64 = 0.0;
    let mut worst_c: f64 = 0.0;
    for s in 1..=50 {
        for eta in [0.0, 0.05, 0.5, 1.0, 4.0] {
            let c = build_coefficients(s, eta).unwrap();
            for i in 2..=s {
                worst_kappa = worst_kappa.max((c.kappa[i] - (1.0 - c.nu[i])).abs());
            }
            worst_deriv = worst_deriv.max((c.dt_s - s as f64 * c.u_s1).abs() / c.dt_s.abs());
            let (r1, r2) = c.order_condition_residuals();
            worst_order = worst_order.max(r1.abs()).max(r2.abs());
            if eta == 0.0 {
                worst_c = worst_c.max((c.c().unwrap() - 0.5 / s as f64).abs());
            }
        }
    }
    let ok = worst_kappa <= 1e-12 && worst_deriv <= 1e-12 && worst_order <= 1e-12 && worst_c <= 1e-12;
    report(
        1,
        "coefficient identities",
        ok,
        &format!("kappa {worst_kappa:.1e}, T'=sU {worst_deriv:.1e} (rel), order {worst_order:.1e}, c {worst_c:.1e}"),
        t0,
    );
    assert!(ok);
}

#[test]
fn criterion_02_optimal_domain_boundary() {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    for s in [1usize, 2, 5, 10, 25, 50] {
        let p_min = -2.0 * (s * s) as f64;
        worst = worst.max(max_boundary_amplification(Method::SkRock, s, 0.0, p_min, 10_000).unwrap());
    }
    let ok = worst <= 1.0 + 1e-12;
    report(2, "boundary amplification at eta=0", ok, &format!("max E|R|^2 = {worst:.15}"), t0);
    assert!(ok);
}

#[test]
fn criterion_03_domain_length() {
    let t0 = Instant::now();
    let r7 = domain_length(7, 0.05, 1e-10).unwrap() / 49.0;
    let r20 = domain_length(20, 0.05, 1e-10).unwrap() / 400.0;
    let ok = (1.90..=2.00).contains(&r7) && (1.90..=2.00).contains(&r20);
    report(3, "domain length eta=0.05", ok, &format!("L(7)/49 = {r7:.5}, L(20)/400 = {r20:.5}"), t0);
    assert!(ok);
}

#[test]
fn criterion_04_srock_damping_optimizer() {
    let t0 = Instant::now();
    let o7 = optimize_damping(7, default_damping_range(7), 1e-6).unwrap();
    let o20 = optimize_damping(20, default_damping_range(20), 1e-6).unwrap();
    let (r7, r20) = (o7.length / 49.0, o20.length / 400.0);
    let eta_ok = (3.5..=4.5).contains(&o7.eta) && (6.0..=8.0).contains(&o20.eta);
    let ratio_ok = (0.30..=0.40).contains(&r7) && (0.30..=0.40).contains(&r20);
    report(
        4,
        "S-ROCK damping optimizer",
        eta_ok && ratio_ok,
        &format!(
            "eta_opt(7) = {:.3}, eta_opt(20) = {:.3} [{}]; L/s^2 = {r7:.4}, {r20:.4} [{}]",
            o7.eta,
            o20.eta,
            if eta_ok { "ok" } else { "out of range" },
            if ratio_ok { "ok" } else { "out of [0.30, 0.40]" },
        ),
        t0,
    );
    assert!(eta_ok, "optimal dampings out of range");
    assert!(ratio_ok, "L_opt/s^2 = {r7}, {r20} outside [0.30, 0.40]");
}

#[test]
fn criterion_05_linear_test_equivalence() {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let s = rng.random_range(1..=50usize);
        let eta = [0.0, 0.05, 0.5, 1.0, 4.0][rng.random_range(0..5)];
        let h = rng.random_range(0.01..1.0);
        let length = domain_length(s, eta, 1e-8).unwrap();
        let p = -rng.random_range(0.0..length);
        let q2 = rng.random_range(0.0..=-2.0 * p);
        let (lambda, mu) = (p / h, (q2 / h).sqrt());
        let spec = make_linear_test(lambda, mu).unwrap();
        let xi: f64 = rng.sample(StandardNormal);
        let x0 = rng.random_range(0.5..2.0);
        let mut integ =
            Integrator::new(&spec.problem, IntegratorConfig::new(Method::SkRock, h).stages(s).eta(eta)).unwrap();
        let mut x = [x0];
        integ.step_with_increments(&mut x, &[h.sqrt() * xi]).unwrap();
        let (a, b) = stab_ab(p, s, eta).unwrap();
        let expected = x0 * (a + b * q2.sqrt() * xi);
        worst = worst.max((x[0] - expected).abs() / expected.abs());
    }
    let ok = worst <= 1e-11;
    report(5, "linear-test equivalence", ok, &format!("max relative deviation {worst:.2e} over 100 draws"), t0);
    assert!(ok);
}

#[test]
fn criterion_06_pb1_orders() {
    let t0 = Instant::now();
    let spec = make_pb1().unwrap();
    let settings = McSettings::new(10_000, 6);
    let arcsinh = |x: &[f64]| x[0].asinh();
    let mut details = Vec::new();
    let mut ok = true;
    for s in [1usize, 5] {
        let mut strong = ConvergenceTable::new();
        let mut weak = ConvergenceTable::new();
        for k in 2..=7 {
            let h = 2f64.powi(-k);
            let cfg = IntegratorConfig::new(Method::SkRock, h).stages(s);
            strong.push(h, &strong_error(&spec.problem, &cfg, &spec.x0, 1.0, settings).unwrap());
            weak.push(
                h,
                &weak_error(&spec.problem, &cfg, &spec.x0, 1.0, settings, &arcsinh, WeakReference::Pathwise).unwrap(),
            );
        }
        let (ss, ws) = (strong.fit_slope().unwrap(), weak.fit_slope().unwrap());
        ok &= (0.4..=0.6).contains(&ss) && (0.75..=1.25).contains(&ws);
        details.push(format!("s={s}: strong {ss:.3}, weak {ws:.3}"));
    }
    report(6, "pb1 strong/weak orders", ok, &details.join("; "), t0);
    assert!(ok);
}

#[test]
fn criterion_07_ou_exactness() {
    let t0 = Instant::now();
    let spec = make_ou(1.0, 2f64.sqrt(), 1, None).unwrap();
    let square = |x: &[f64]| x[0] * x[0];
    let mut details = Vec::new();
    let mut ok = true;
    for s in [1usize, 5, 10] {
        let cfg = IntegratorConfig::new(Method::PskRock, 0.5).stages(s).eta(0.0);
        let est = invariant_measure_error(
            &spec.problem,
            &cfg,
            &spec.x0,
            10.0,
            InvariantMode::Ensemble,
            McSettings::new(100_000, 7),
            &square,
            Some(1.0),
        )
        .unwrap();
        ok &= est.value <= 3.0 * est.std_error;
        details.push(format!("s={s}: |v-1| = {:.2e} (SE {:.2e})", est.value, est.std_error));
    }
    let mut worst: f64 = 0.0;
    for s in [1usize, 5, 10] {
        let poly = StabilityPolynomials::new(s, 0.0).unwrap();
        let p_min = poly.p_of(-1.0);
        for j in 1..=100 {
            let p = p_min * j as f64 / 101.0;
            worst = worst.max((ou_invariant_ratio(p, s, 0.0).unwrap().postprocessed - 1.0).abs());
        }
    }
    ok &= worst <= 1e-10;
    details.push(format!("R - 2c^2p deviation {worst:.1e}"));
    report(7, "OU exactness at eta=0", ok, &details.join("; "), t0);
    assert!(ok);
}

#[test]
fn criterion_08_double_well_invariant_order() {
    let t0 = Instant::now();
    let spec = make_double_well().unwrap();
    let reference = spec.stationary_second_moment(0);
    let square = |x: &[f64]| x[0] * x[0];
    let settings = McSettings::new(1, 1).noise(NoiseKind::ThreePoint);
    let mut slopes = Vec::new();
    for method in [Method::PskRock, Method::SkRock] {
        let mut table = ConvergenceTable::new();
        for h in [0.5, 0.25, 0.125, 0.0625] {
            let cfg = IntegratorConfig::new(method, h).stages(4).eta(1.0);
            let est = invariant_measure_error(
                &spec.problem,
                &cfg,
                &spec.x0,
                h * 1e7,
                InvariantMode::time_average(),
                settings,
                &square,
                reference,
            )
            .unwrap();
            table.push(h, &est);
        }
        slopes.push(table.fit_slope().unwrap());
    }
    let ok = (1.6..=2.4).contains(&slopes[0]) && (0.75..=1.25).contains(&slopes[1]);
    report(8, "double-well invariant order", ok, &format!("PSK-ROCK {:.3}, SK-ROCK {:.3}", slopes[0], slopes[1]), t0);
    assert!(ok);
}

#[test]
fn criterion_09_stiff_population() {
    let t0 = Instant::now();
    let spec = make_population(PopulationParams::stiff()).unwrap();
    let settings = McSettings::new(1_000, 9);
    let sk = IntegratorConfig::new(Method::SkRock, 0.5).adaptive().eta(4.0);
    let em = IntegratorConfig::new(Method::EulerMaruyama, 0.5);
    let sk_count = count_divergences(&spec.problem, &sk, &spec.x0, 10.0, settings).unwrap();
    let em_count = count_divergences(&spec.problem, &em, &spec.x0, 10.0, settings).unwrap();
    let ok = sk_count.diverged == 0 && 2 * em_count.diverged > em_count.samples;
    report(
        9,
        "stiff population divergence",
        ok,
        &format!("SK-ROCK {}/1000 diverged, Euler-Maruyama {}/1000 diverged", sk_count.diverged, em_count.diverged),
        t0,
    );
    assert!(ok);
}

#[test]
fn criterion_10_spde_run_and_cost() {
    let t0 = Instant::now();
    let spec = make_heat_spde(100).unwrap();
    let cfg = IntegratorConfig::new(Method::SkRock, 1.0 / 50.0).adaptive().eta(0.05);
    let (stages, state) = stage_history(&spec.problem, &cfg, &spec.x0, 1.0, 10).unwrap();
    let stages_ok = stages.iter().all(|s| *s == 21 || *s == 22);
    let finite = state.iter().all(|v| v.is_finite());
    let dts: Vec<f64> = (0..=10).map(|k| 2f64.powi(-k)).collect();
    let rows =
        spde_cost_table(&spec.problem, &spec.x0, 1.0, &[(Method::SkRock, Some(0.05)), (Method::SRock, None)], &dts, 10)
            .unwrap();
    let cost = |m: Method| rows.iter().find(|r| r.method == m && r.dt == 1.0).unwrap().f_evals as f64;
    let ratio = cost(Method::SRock) / cost(Method::SkRock);
    let ok = stages_ok && finite && (2.0..=2.8).contains(&ratio);
    let (lo, hi) = (stages.iter().min().unwrap(), stages.iter().max().unwrap());
    report(
        10,
        "stochastic heat equation",
        ok,
        &format!("stages {lo}..{hi}, finite {finite}, S-ROCK/SK-ROCK f-evals at dt=1: {ratio:.3}"),
        t0,
    );
    assert!(ok);
}

#[test]
fn criterion_11_ergodicity_bound() {
    let t0 = Instant::now();
    let (s, eta, lambda1) = (10usize, 0.05, 1.0);
    let h = eta / lambda1;
    let omega1 = build_coefficients(s, eta).unwrap().omega1;
    let lambda_max = 2.0 / (omega1 * h);
    let grid: Vec<f64> = (0..1000).map(|j| lambda1 + (lambda_max - lambda1) * j as f64 / 999.0).collect();
    let check = ergodicity_bound_check(s, eta, &grid, h).unwrap();
    let witness = non_ergodic_witness(5, lambda1, 1e-9).unwrap();
    let analytic = 25.0 * (1.0 - (std::f64::consts::PI / 5.0).cos());
    let ok = check.violations == 0 && (witness.h - analytic).abs() <= 1e-6 && (witness.a + 1.0).abs() <= 1e-12;
    report(
        11,
        "ergodicity bound",
        ok,
        &format!(
            "{} violations (worst margin {:.2e}); witness h = {:.9} vs {:.9}",
            check.violations, check.worst_margin, witness.h, analytic
        ),
        t0,
    );
    assert!(ok);
}
