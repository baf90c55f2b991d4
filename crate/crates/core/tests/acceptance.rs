//! Acceptance gate. Every criterion prints one `PASS`/`FAIL` line; the
//! process exits non-zero if any criterion fails.
//!
//! Reference values come from oracles written here (plug-in formulas,
//! composite Simpson quadrature, inclusion–exclusion, summation of Poisson
//! tails) rather than from the library's own closed-form routines.

use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::Instant;

use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};

use shotnoise::arrivals::{CountingProcessSpec, InterArrivalLaw};
use shotnoise::estimators::{
    blocks_extremal_index, conditional_tail_ratio_curve, runs_extremal_index, tail_ratio_curve, Aggregate,
    TailRatioCurve,
};
use shotnoise::heavytail::HeavyTailDist;
use shotnoise::parallel::stream_rng;
use shotnoise::risk::{
    etot_limit, extremal_index, ies_constant, ies_integral, mc_indicator, mc_indicators, ruin_constant, tail_constant,
    es_constant, Indicator, McOptions, RiskReport, RiskScenario, ThetaMode,
};
use shotnoise::seqmodel::{
    breiman_constant_mc, empirical_quantile, empirical_spectral_measure, induced_matrix_norm, spectral_atoms_closed,
    CountLaw, DenseMatrix, LengthSpec, Marginal, MatrixSpec, Norm, SequenceScenario, SpectralOptions, ThresholdSpec,
};
use shotnoise::snp::{kdem_chain, KdemOptions, OmegaLaw, ShockFunctionSpec, SnpPath, SupremumMode};
use shotnoise::Exec;

struct Gate {
    failed: Vec<u32>,
}

impl Gate {
    fn report(&mut self, id: u32, pass: bool, summary: &str, started: Instant) {
        let tag = if pass { "PASS" } else { "FAIL" };
        println!("criterion {id}: {tag} [{:.1}s] {summary}", started.elapsed().as_secs_f64());
        if !pass {
            self.failed.push(id);
        }
    }
}

fn pareto(alpha: f64) -> HeavyTailDist {
    HeavyTailDist::pareto(alpha, 1.0).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

/// Composite Simpson rule with `n` (even) panels.
fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, n: usize) -> f64 {
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn fmt_curve(c: &TailRatioCurve) -> String {
    c.thresholds
        .iter()
        .zip(&c.ratios)
        .zip(&c.ci)
        .map(|((x, r), ci)| format!("x={x:.1}: {r:.3}±{ci:.3}"))
        .collect::<Vec<_>>()
        .join(", ")
}

fn criterion_1(gate: &mut Gate, exec: &Exec) {
    let t0 = Instant::now();
    let d = pareto(1.5);
    let xs = [d.quantile(0.999).unwrap(), d.quantile(0.9999).unwrap()];
    let n = 10_000_000;
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, norm, agg) in [("l1", Norm::L1, Aggregate::Sum), ("linf", Norm::Linf, Aggregate::Max)] {
        let sc = SequenceScenario::new(
            Marginal::Iid(d.clone()),
            LengthSpec::Poisson { mean: 10.0, at_least_one: false },
            MatrixSpec::Identity,
            norm,
        )
        .unwrap();
        let sampler = sc.sampler().unwrap();
        let plain = tail_ratio_curve(|rng| sampler.realize(rng).norm_c, &d, &xs, Some(10.0), n, exec, 101).unwrap();
        let cond = conditional_tail_ratio_curve(
            |rng| {
                let r = sampler.realize(rng);
                (vec![1.0; r.x.len()], r.x)
            },
            agg,
            &d,
            &xs,
            Some(10.0),
            n,
            exec,
            102,
        )
        .unwrap();
        let top = plain.ratios[1];
        let within = rel(top, 10.0) <= 0.15;
        let dev = cond.deviations().unwrap();
        let shrinking = dev[1] < dev[0];
        let agree = (0..2).all(|i| (plain.ratios[i] - cond.ratios[i]).abs() <= 3.0 * plain.ci[i].hypot(cond.ci[i]));
        pass &= within && shrinking && agree;
        parts.push(format!(
            "{name}: plain [{}] conditional [{}] top within 15%: {within}, deviation shrinking: {shrinking}, estimators agree: {agree}",
            fmt_curve(&plain),
            fmt_curve(&cond)
        ));
    }
    gate.report(1, pass, &parts.join("; "), t0);
}

fn criterion_2(gate: &mut Gate, exec: &Exec) {
    let t0 = Instant::now();
    let d = pareto(2.0);
    let x = d.quantile(0.9999).unwrap();
    let p = d.survival(x);
    let sc = SequenceScenario::new(Marginal::Iid(d.clone()), LengthSpec::Fixed(3), MatrixSpec::Identity, Norm::Linf).unwrap();
    let sampler = sc.sampler().unwrap();
    let curve = tail_ratio_curve(|rng| sampler.realize(rng).norm_c, &d, &[x], None, 10_000_000, exec, 201).unwrap();
    let est = curve.ratios[0] / 3.0;
    let oracle = (1.0 - (1.0 - p).powi(3)) / (3.0 * p);
    let err = rel(est, oracle);
    gate.report(
        2,
        err <= 0.03,
        &format!(
            "x={x:.2}: estimate {est:.4} (95% half-width {:.4}) vs inclusion-exclusion {oracle:.6}, rel err {:.2}%",
            curve.ci[0] / 3.0,
            100.0 * err
        ),
        t0,
    );
}

fn criterion_3(gate: &mut Gate, exec: &Exec) {
    let t0 = Instant::now();
    let opts = SpectralOptions {
        threshold: ThresholdSpec::Quantile(0.999),
        min_exceedances: 2_000,
        batch: 1_000_000,
        max_samples: 50_000_000,
    };
    let d = pareto(2.0);
    let fixed = SequenceScenario::new(Marginal::Iid(d.clone()), LengthSpec::Fixed(3), MatrixSpec::Identity, Norm::Linf).unwrap();
    let a = empirical_spectral_measure(&fixed, &opts, exec, 301).unwrap();
    let fixed_ok = a.exceedances >= 1_000
        && a.atom_weights.len() == 3
        && a.atom_weights.iter().all(|w| (w - 1.0 / 3.0).abs() <= 0.05);

    let pois = SequenceScenario::new(
        Marginal::Iid(d),
        LengthSpec::Poisson { mean: 3.0, at_least_one: true },
        MatrixSpec::Identity,
        Norm::Linf,
    )
    .unwrap();
    let b = empirical_spectral_measure(&pois, &opts, exec, 302).unwrap();
    // P(N >= j | N >= 1) / E[N | N >= 1] by direct summation of the pmf.
    let pmf: Vec<f64> = {
        let mut v = vec![(-3.0f64).exp()];
        for k in 1..200 {
            v.push(v[k - 1] * 3.0 / k as f64);
        }
        v
    };
    let p0 = pmf[0];
    let mean: f64 = pmf.iter().enumerate().map(|(k, p)| k as f64 * p).sum::<f64>() / (1.0 - p0);
    let oracle: Vec<f64> = (1..=5)
        .map(|j| pmf[j..].iter().sum::<f64>() / (1.0 - p0) / mean)
        .collect();
    let emp: Vec<f64> = (0..5).map(|j| b.atom_weights.get(j).copied().unwrap_or(0.0)).collect();
    let closed = spectral_atoms_closed(&CountLaw::PoissonAtLeastOne(3.0), Some(5)).unwrap();
    let closed_ok = closed.atoms.iter().zip(&oracle).all(|((_, c), o)| rel(*c, *o) < 1e-12);
    let pois_ok = b.exceedances >= 1_000 && emp.iter().zip(&oracle).all(|(e, o)| (e - o).abs() <= 0.05);
    gate.report(
        3,
        fixed_ok && pois_ok && closed_ok,
        &format!(
            "N=3: atoms {:?} from {} exceedances; Poisson(3)|N>=1: atoms {:?} vs oracle {:?} from {} exceedances; closed form matches oracle: {closed_ok}",
            a.atom_weights.iter().map(|w| (w * 1e4).round() / 1e4).collect::<Vec<_>>(),
            a.exceedances,
            emp.iter().map(|w| (w * 1e4).round() / 1e4).collect::<Vec<_>>(),
            oracle.iter().map(|w| (w * 1e4).round() / 1e4).collect::<Vec<_>>(),
            b.exceedances
        ),
        t0,
    );
}

fn criterion_4(gate: &mut Gate, exec: &Exec) {
    let t0 = Instant::now();
    let target = 1.0 - (-1.0f64).exp();
    let counting = CountingProcessSpec::homogeneous(1.0).unwrap();
    let shock = ShockFunctionSpec::exponential(1.0);
    let sc = SequenceScenario::new(
        Marginal::Iid(pareto(1.0)),
        LengthSpec::Counting { spec: counting.clone(), horizon: 1.0 },
        MatrixSpec::Diagonal(shock.clone()),
        Norm::L1,
    )
    .unwrap();
    let mc = breiman_constant_mc(&sc, 1_000_000, exec, 401).unwrap();
    let risk = RiskScenario::new(pareto(1.0), counting, shock, 1.0).unwrap();
    let quad = tail_constant(&risk).unwrap();
    let simpson_oracle = simpson(|s| (-(1.0 - s)).exp(), 0.0, 1.0, 2000);
    let mc_ok = rel(mc.mean, target) <= 0.02;
    let quad_ok = rel(quad, target) <= 1e-6 && rel(simpson_oracle, target) <= 1e-9;
    gate.report(
        4,
        mc_ok && quad_ok,
        &format!(
            "MC {:.5}±{:.5} vs 1-e^-1 = {target:.6} (rel {:.3}%); quadrature {quad:.10} (rel {:.1e})",
            mc.mean,
            mc.ci_half_width,
            100.0 * rel(mc.mean, target),
            rel(quad, target)
        ),
        t0,
    );
}

fn criterion_5(gate: &mut Gate, exec: &Exec) {
    let t0 = Instant::now();
    let d = pareto(1.5);
    let counting = CountingProcessSpec::homogeneous(1.0).unwrap();
    let shock = ShockFunctionSpec::Constant(1.0);
    let sc = RiskScenario::new(d.clone(), counting.clone(), shock.clone(), 10.0).unwrap();
    let sampler = counting.prepare(10.0).unwrap();
    let sup_of = |path: &SnpPath| path.supremum(&shock, SupremumMode::SkeletonTerminal).unwrap().value;

    // Threshold: empirical 0.999-quantile of the path supremum from a pilot run.
    let pilot = exec.collect(1_000_000, 501, |rng| sup_of(&SnpPath::sample(&sampler, &d, &shock, rng)));
    let x = empirical_quantile(pilot, 0.999);

    let n = 10_000_000;
    let opts = McOptions { n_paths: n, ..McOptions::default() };
    let ruin = mc_indicator(&sc, Indicator::Ruin, x, &opts, exec, 502).unwrap();
    let ratio_ok = rel(ruin.mc_estimate, 10.0) <= 0.15;

    // Path-wise sandwich max X_i <= sup Y <= Σ X_i on the same number of paths.
    #[derive(Default)]
    struct Sandwich {
        violations: u64,
        max_hits: u64,
        sup_hits: u64,
        sum_hits: u64,
    }
    impl shotnoise::parallel::Accumulator for Sandwich {
        fn merge(&mut self, o: Self) {
            self.violations += o.violations;
            self.max_hits += o.max_hits;
            self.sup_hits += o.sup_hits;
            self.sum_hits += o.sum_hits;
        }
    }
    let s: Sandwich = exec.run(n, 503, |rng, acc: &mut Sandwich| {
        let path = SnpPath::sample(&sampler, &d, &shock, rng);
        let max = path.shocks.iter().fold(0.0f64, |m, &v| m.max(v));
        let sum: f64 = path.shocks.iter().sum();
        let sup = sup_of(&path);
        let (a, b, c) = (max > x, sup > x, sum > x);
        acc.max_hits += a as u64;
        acc.sup_hits += b as u64;
        acc.sum_hits += c as u64;
        if (a && !b) || (b && !c) {
            acc.violations += 1;
        }
    });
    let sandwich_ok = s.violations == 0 && s.max_hits <= s.sup_hits && s.sup_hits <= s.sum_hits;

    // Informational: the same ratio at the 0.999 quantile of a single shock.
    let xm = d.quantile(0.999).unwrap();
    let marginal = mc_indicator(&sc, Indicator::Ruin, xm, &McOptions { n_paths: 1_000_000, ..opts }, exec, 504).unwrap();
    gate.report(
        5,
        ratio_ok && sandwich_ok,
        &format!(
            "x={x:.1} (sup 0.999-quantile): ruin ratio {:.3}±{:.3} vs 10 (closed form {:.6}); sandwich violations {} over {n} paths (max {} <= sup {} <= sum {}); info: at marginal 0.999-quantile x={xm:.1} ratio {:.3}±{:.3}",
            ruin.mc_estimate,
            ruin.ci_half_width,
            ruin.closed_form.unwrap(),
            s.violations,
            s.max_hits,
            s.sup_hits,
            s.sum_hits,
            marginal.mc_estimate,
            marginal.ci_half_width
        ),
        t0,
    );
}

/// Independent oracles for exponential shocks, constant ω, λ, T.
struct KdemOracle {
    tail: f64,
    ruin: f64,
    ies_integral: f64,
}

fn kdem_oracle(omega: f64, alpha: f64, lambda: f64, t: f64) -> (KdemOracle, KdemOracle) {
    let c = alpha * omega;
    let plug = KdemOracle {
        tail: lambda * (1.0 - (-c * t).exp()) / c,
        ruin: if omega > 0.0 { lambda * t } else { lambda * (1.0 - (-c * t).exp()) / c },
        ies_integral: lambda * (c * t + (-c * t).exp() - 1.0) / (c * c),
    };
    let h = |tt: f64, s: f64| (-omega * (tt - s)).exp().powf(alpha);
    let quad = KdemOracle {
        tail: simpson(|s| lambda * h(t, s), 0.0, t, 2000),
        ruin: simpson(|s| lambda * h(s, s).max(h(t, s)), 0.0, t, 2000),
        // Outer integral over t of m(t) E[h^α(t, V₀(t))], inner over s in [0, t].
        ies_integral: simpson(|tt| simpson(|s| lambda * h(tt, s), 0.0, tt, 400), 0.0, t, 400),
    };
    (plug, quad)
}

fn kdem_scenario(omega: f64, alpha: f64) -> RiskScenario {
    RiskScenario::new(
        pareto(alpha),
        CountingProcessSpec::homogeneous(1.0).unwrap(),
        ShockFunctionSpec::exponential(omega),
        1.0,
    )
    .unwrap()
}

const HEAVY_INDICATORS: [Indicator; 3] = [Indicator::TailRatio, Indicator::Ruin, Indicator::Etot];
const SEVERITY_INDICATORS: [Indicator; 2] = [Indicator::Es, Indicator::Ies];

/// Monte Carlo part of criterion 6 for one ω and seed.
fn kdem_mc(omega: f64, seed: u64, n_paths: u64, exec: &Exec) -> (RiskReport, RiskReport) {
    let opts = McOptions { n_paths, ..McOptions::default() };
    let a1 = kdem_scenario(omega, 1.0);
    let x1 = a1.marginal.quantile(0.999).unwrap();
    let r1 = mc_indicators(&a1, &HEAVY_INDICATORS, x1, &opts, exec, seed).unwrap();
    let a2 = kdem_scenario(omega, 2.0);
    let x2 = a2.marginal.quantile(0.9999).unwrap();
    let r2 = mc_indicators(&a2, &SEVERITY_INDICATORS, x2, &opts, exec, seed ^ 0x5eed).unwrap();
    (r1, r2)
}

fn criterion_6(gate: &mut Gate, exec: &Exec) {
    let t0 = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for omega in [1.0, -1.0] {
        let a1 = kdem_scenario(omega, 1.0);
        let a2 = kdem_scenario(omega, 2.0);
        let (p1, q1) = kdem_oracle(omega, 1.0, 1.0, 1.0);
        let (p2, q2) = kdem_oracle(omega, 2.0, 1.0, 1.0);
        let gamma = 2.0;
        let checks = [
            ("tail", tail_constant(&a1).unwrap(), p1.tail, q1.tail),
            ("ruin", ruin_constant(&a1).unwrap(), p1.ruin, q1.ruin),
            ("ies-integral", ies_integral(&a1).unwrap(), p1.ies_integral, q1.ies_integral),
            ("etot", etot_limit(&a1).unwrap(), p1.ies_integral / p1.ruin, q1.ies_integral / q1.ruin),
            ("es(α=2)", es_constant(&a2).unwrap(), gamma * p2.tail, gamma * q2.tail),
            ("ies(α=2)", ies_constant(&a2).unwrap(), gamma * p2.ies_integral, gamma * q2.ies_integral),
        ];
        let mut worst: f64 = 0.0;
        for (_, lib, plug, quad) in checks {
            worst = worst.max(rel(lib, plug)).max(rel(lib, quad));
        }
        let closed_ok = worst <= 1e-6;
        pass &= closed_ok;

        let mut worst_z: f64 = 0.0;
        let mut misses = 0;
        for seed in 0..20u64 {
            let (r1, r2) = kdem_mc(omega, 600 + seed, 1_000_000, exec);
            for e in r1.entries.iter().chain(&r2.entries) {
                let cf = e.closed_form.unwrap();
                let z = (e.mc_estimate - cf).abs() / e.ci_half_width;
                worst_z = worst_z.max(z);
                if !(z <= 3.0) {
                    misses += 1;
                }
            }
        }
        pass &= misses == 0;
        parts.push(format!(
            "ω={omega}: closed forms {} (worst rel diff to oracles {worst:.1e}); MC: {misses} misses of 3 half-widths over 20 seeds x 5 indicators (worst {worst_z:.2} half-widths)",
            checks.iter().map(|(n, v, _, _)| format!("{n}={v:.6}")).collect::<Vec<_>>().join(" "),
        ));
    }
    gate.report(6, pass, &parts.join("; "), t0);
}

fn criterion_7(gate: &mut Gate, exec: &Exec) {
    let t0 = Instant::now();
    let sc = kdem_scenario(1.0, 1.0);
    let chain_theta = extremal_index(&sc, ThetaMode::EmbeddedChain).unwrap().value;
    let closed_ok = chain_theta == 0.5;

    let mut rng = stream_rng(701, 0);
    let series = kdem_chain(
        &OmegaLaw::Constant(1.0),
        &InterArrivalLaw::Exponential { rate: 1.0 },
        &pareto(1.0),
        1_000_000,
        KdemOptions { y0: 0.0, burn_in: 10_000 },
        &mut rng,
    )
    .unwrap();
    let u = empirical_quantile(series.clone(), 0.999);
    let blocks = blocks_extremal_index(&series, u, 100).unwrap();
    let runs = runs_extremal_index(&series, u, 10).unwrap();
    let blocks_ok = rel(blocks, 0.5) <= 0.2;

    let mut numeric_ok = true;
    let mut numeric = Vec::new();
    for (omega, alpha) in [(1.0, 1.0), (1.0, 2.0), (0.5, 1.5)] {
        let th = extremal_index(&kdem_scenario(omega, alpha), ThetaMode::NumericLimit).unwrap();
        numeric_ok &= rel(th.value, alpha * omega) <= 0.02;
        numeric.push(format!("αω={}: {:.5}", alpha * omega, th.value));
    }
    let _ = exec;
    gate.report(
        7,
        closed_ok && blocks_ok && numeric_ok,
        &format!(
            "embedded-chain θ = {chain_theta}; blocks estimator {blocks:.4} (runs {runs:.4}) at u={u:.1} on 10^6 steps; numeric limit {}",
            numeric.join(", ")
        ),
        t0,
    );
}

static CASES: AtomicUsize = AtomicUsize::new(0);

fn runner(seed: u8) -> TestRunner {
    TestRunner::new_with_rng(
        Config { cases: 1_000, failure_persistence: None, ..Config::default() },
        TestRng::from_seed(RngAlgorithm::ChaCha, &[seed; 32]),
    )
}

fn omega_law_strategy() -> impl Strategy<Value = OmegaLaw> {
    prop_oneof![
        (-3.0f64..3.0).prop_map(OmegaLaw::Constant),
        (proptest::collection::vec(-2.0f64..3.0, 1..4), proptest::collection::vec(0.1f64..1.0, 4)).prop_map(|(values, w)| {
            let w = &w[..values.len()];
            let total: f64 = w.iter().sum();
            OmegaLaw::Discrete { probs: w.iter().map(|p| p / total).collect(), values }
        }),
    ]
}

fn criterion_8(gate: &mut Gate) {
    let t0 = Instant::now();
    let mut results = Vec::new();

    let sandwich = runner(1).run(
        &(proptest::collection::vec(-1e6f64..1e6, 0..50), 1.0001f64..100.0),
        |(u, p)| {
            CASES.fetch_add(1, Ordering::Relaxed);
            let (inf, lp, one) = (Norm::Linf.eval(&u), Norm::Lp(p).eval(&u), Norm::L1.eval(&u));
            prop_assert!(inf <= lp * (1.0 + 1e-12) && lp <= one * (1.0 + 1e-12));
            Ok(())
        },
    );
    results.push(("norm sandwich", sandwich.map_err(|e| e.to_string()), CASES.swap(0, Ordering::Relaxed)));

    let induced = runner(2).run(
        &(1usize..7, proptest::collection::vec(-10.0f64..10.0, 49), proptest::collection::vec(-5.0f64..5.0, 7), 1.01f64..10.0),
        |(n, entries, v, p)| {
            CASES.fetch_add(1, Ordering::Relaxed);
            let rows: Vec<Vec<f64>> = (0..n).map(|i| entries[i * 7..i * 7 + n].to_vec()).collect();
            let a = DenseMatrix::from_rows(&rows).unwrap();
            let v = &v[..n];
            for norm in [Norm::L1, Norm::Linf, Norm::Lp(p)] {
                let op = induced_matrix_norm(norm, &a).unwrap().value;
                let av: Vec<f64> = (0..n).map(|i| (0..n).map(|j| a.get(i, j) * v[j]).sum()).collect();
                prop_assert!(norm.eval(&av) <= op * norm.eval(v) * (1.0 + 1e-12) + 1e-300);
                for k in 0..n {
                    let col: Vec<f64> = (0..n).map(|i| a.get(i, k)).collect();
                    prop_assert!(norm.eval(&col) <= op * (1.0 + 1e-12));
                }
            }
            Ok(())
        },
    );
    results.push(("induced-norm bound", induced.map_err(|e| e.to_string()), CASES.swap(0, Ordering::Relaxed)));

    let atoms = runner(3).run(
        &prop_oneof![
            (1usize..50).prop_map(CountLaw::Fixed),
            (0.05f64..40.0).prop_map(CountLaw::Poisson),
            (0.05f64..40.0).prop_map(CountLaw::PoissonAtLeastOne),
            proptest::collection::vec(0.0f64..1.0, 2..20).prop_filter_map("positive mean", |w| {
                let total: f64 = w.iter().sum();
                let pmf: Vec<f64> = w.iter().map(|p| p / total).collect();
                (pmf[1..].iter().sum::<f64>() > 1e-6).then_some(CountLaw::Pmf(pmf))
            }),
        ],
        |law| {
            CASES.fetch_add(1, Ordering::Relaxed);
            let a = spectral_atoms_closed(&law, None).unwrap();
            let total: f64 = a.atoms.iter().map(|(_, p)| p).sum();
            prop_assert!((total - 1.0).abs() <= 1e-10, "{law:?}: total {total}");
            prop_assert!(a.atoms.windows(2).all(|w| w[1].1 <= w[0].1 + 1e-15));
            Ok(())
        },
    );
    results.push(("atom normalization", atoms.map_err(|e| e.to_string()), CASES.swap(0, Ordering::Relaxed)));

    let scenario = (omega_law_strategy(), 0.6f64..4.0, 0.2f64..5.0, 0.05f64..5.0);
    let etot = runner(4).run(&scenario, |(law, alpha, lambda, t)| {
            CASES.fetch_add(1, Ordering::Relaxed);
        let sc = RiskScenario::new(
            pareto(alpha),
            CountingProcessSpec::homogeneous(lambda).unwrap(),
            ShockFunctionSpec::ExponentialDecay(law),
            t,
        )
        .unwrap();
        let e = etot_limit(&sc).unwrap();
        prop_assert!((0.0..=t).contains(&e), "ETOT {e} outside [0, {t}]");
        Ok(())
    });
    results.push(("ETOT in [0,T]", etot.map_err(|e| e.to_string()), CASES.swap(0, Ordering::Relaxed)));

    let ordering = runner(5).run(&scenario, |(law, alpha, lambda, t)| {
            CASES.fetch_add(1, Ordering::Relaxed);
        let sc = RiskScenario::new(
            pareto(alpha),
            CountingProcessSpec::homogeneous(lambda).unwrap(),
            ShockFunctionSpec::ExponentialDecay(law),
            t,
        )
        .unwrap();
        let (tail, ruin) = (tail_constant(&sc).unwrap(), ruin_constant(&sc).unwrap());
        prop_assert!(tail <= ruin * (1.0 + 1e-12), "tail {tail} > ruin {ruin}");
        Ok(())
    });
    results.push(("tail <= ruin", ordering.map_err(|e| e.to_string()), CASES.swap(0, Ordering::Relaxed)));

    let pass = results.iter().all(|(_, r, n)| r.is_ok() && *n >= 1_000);
    let summary = results
        .iter()
        .map(|(name, r, n)| match r {
            Ok(()) => format!("{name}: {n} cases, 0 failures"),
            Err(e) => format!("{name}: {e}"),
        })
        .collect::<Vec<_>>()
        .join("; ");
    gate.report(8, pass, &summary, t0);
}

fn criterion_9(gate: &mut Gate) {
    let t0 = Instant::now();
    let one = Exec::with_workers(1);
    let four = Exec::with_workers(4);
    let mut worst: f64 = 0.0;
    for omega in [1.0, -1.0] {
        let (a1, a2) = kdem_mc(omega, 900, 200_000, &one);
        let (b1, b2) = kdem_mc(omega, 900, 200_000, &four);
        for (x, y) in a1.entries.iter().chain(&a2.entries).zip(b1.entries.iter().chain(&b2.entries)) {
            for (u, v) in [(x.mc_estimate, y.mc_estimate), (x.ci_half_width, y.ci_half_width), (x.ci_low, y.ci_low)] {
                worst = worst.max(rel(u, v));
            }
        }
    }
    gate.report(9, worst <= 1e-12, &format!("criterion-6 MC at workers 1 vs 4: worst relative difference {worst:.1e}"), t0);
}

fn main() -> ExitCode {
    // Respect `cargo test -- <filter>` style invocations that target other tests.
    let args: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    if !args.is_empty() && !args.iter().any(|a| "acceptance".contains(a.as_str())) {
        return ExitCode::SUCCESS;
    }
    // `ACCEPTANCE_ONLY=1,5` runs a subset.
    let only: Option<Vec<u32>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let selected = |id: u32| only.as_ref().is_none_or(|o| o.contains(&id));
    let exec = Exec::with_workers(0);
    let mut gate = Gate { failed: Vec::new() };
    let criteria: [(u32, &dyn Fn(&mut Gate)); 9] = [
        (1, &|g| criterion_1(g, &exec)),
        (2, &|g| criterion_2(g, &exec)),
        (3, &|g| criterion_3(g, &exec)),
        (4, &|g| criterion_4(g, &exec)),
        (5, &|g| criterion_5(g, &exec)),
        (6, &|g| criterion_6(g, &exec)),
        (7, &|g| criterion_7(g, &exec)),
        (8, &criterion_8),
        (9, &criterion_9),
    ];
    for (id, run) in criteria {
        if selected(id) {
            run(&mut gate);
        }
    }
    if gate.failed.is_empty() {
        println!("acceptance: all selected criteria pass");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {:?}", gate.failed);
        ExitCode::FAILURE
    }
}
