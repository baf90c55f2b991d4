use std::sync::Arc;

use proptest::prelude::*;

use shotnoise::arrivals::{ArrivalSequence, CountingProcessSpec};
use shotnoise::heavytail::HeavyTailDist;
use shotnoise::parallel::stream_rng;
use shotnoise::snp::{write_trace_csv, Monotonicity, OmegaLaw, ShockFunctionSpec, SnpPath, SupremumMode};

fn sample_path(rate: f64, horizon: f64, alpha: f64, spec: &ShockFunctionSpec, seed: u64) -> SnpPath {
    let sampler = CountingProcessSpec::homogeneous(rate).unwrap().prepare(horizon).unwrap();
    let d = HeavyTailDist::pareto(alpha, 1.0).unwrap();
    SnpPath::sample(&sampler, &d, spec, &mut stream_rng(seed, 0))
}

fn mixed_omegas() -> impl Strategy<Value = OmegaLaw> {
    prop_oneof![
        (-2.0f64..2.0).prop_map(OmegaLaw::Constant),
        (-2.0f64..0.0, 0.0f64..2.0, 0.05f64..0.95).prop_map(|(a, b, p)| OmegaLaw::Discrete {
            values: vec![a, b],
            probs: vec![p, 1.0 - p],
        }),
        (-1.5f64..0.0, 0.0f64..1.5).prop_map(|(lo, hi)| OmegaLaw::Uniform { lo, hi }),
    ]
}

fn bump() -> ShockFunctionSpec {
    ShockFunctionSpec::UserDeterministic {
        h: Arc::new(|t, s| {
            let u = t - s;
            if u < 0.0 {
                0.0
            } else {
                u * (-u).exp()
            }
        }),
        monotonicity: Monotonicity::Mixed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn each_jump_adds_its_shock(law in mixed_omegas(), seed in any::<u64>()) {
        let spec = ShockFunctionSpec::ExponentialDecay(law);
        let path = sample_path(4.0, 2.0, 1.5, &spec, seed);
        let times = &path.arrivals.times;
        let omegas = path.omegas.clone().unwrap();
        for k in 0..path.len() {
            let earlier: f64 = (0..k).map(|i| path.shocks[i] * (-omegas[i] * (times[k] - times[i])).exp()).sum();
            let jump = path.evaluate(&spec, times[k]) - earlier;
            prop_assert!((jump - path.shocks[k]).abs() <= 1e-9 * (1.0 + earlier.abs()));
        }
    }

    #[test]
    fn dense_supremum_never_below_skeleton(law in mixed_omegas(), seed in any::<u64>()) {
        let spec = ShockFunctionSpec::ExponentialDecay(law);
        let path = sample_path(3.0, 2.0, 1.2, &spec, seed);
        let skel = path.supremum(&spec, SupremumMode::Skeleton).unwrap().value;
        let dense = path.supremum(&spec, SupremumMode::Dense { dt: 0.01 }).unwrap().value;
        prop_assert!(dense >= skel);
    }

    #[test]
    fn exponential_suprema_live_on_the_skeleton(law in mixed_omegas(), seed in any::<u64>()) {
        // A positive combination of exponentials is convex between jumps.
        let spec = ShockFunctionSpec::ExponentialDecay(law);
        let path = sample_path(3.0, 2.0, 1.5, &spec, seed);
        let cmp = path.compare_suprema(&spec, 2.0 / 1e4, 1e-9).unwrap();
        prop_assert!(!cmp.disagree, "{cmp:?}");
    }

    #[test]
    fn unit_constant_shock_ends_at_the_shock_total(seed in any::<u64>()) {
        let spec = ShockFunctionSpec::Constant(1.0);
        let path = sample_path(5.0, 3.0, 1.5, &spec, seed);
        let total = path.shocks.iter().fold(0.0, |a, b| a + b);
        prop_assert!((path.evaluate(&spec, 3.0) - total).abs() <= 1e-12 * total.max(1.0));
    }
}

#[test]
fn interior_maximum_of_a_bump_is_flagged() {
    let spec = bump();
    let path = SnpPath::new(ArrivalSequence::new(vec![0.5], 5.0).unwrap(), vec![2.0], None).unwrap();
    let skel = path.supremum(&spec, SupremumMode::SkeletonTerminal).unwrap();
    assert!(skel.warning.is_some());
    let cmp = path.compare_suprema(&spec, 5.0 / 1e4, 1e-9).unwrap();
    assert!(cmp.disagree);
    assert!((cmp.dense - 2.0 / std::f64::consts::E).abs() < 1e-6, "{}", cmp.dense);
}

#[test]
fn exact_exceedance_matches_fine_midpoint_rule() {
    let spec = ShockFunctionSpec::ExponentialDecay(OmegaLaw::Discrete { values: vec![-0.5, 1.5], probs: vec![0.3, 0.7] });
    for seed in 0..20 {
        let path = sample_path(3.0, 2.0, 1.5, &spec, seed);
        let x = 1.5;
        let e = path.exceedance(&spec, x);
        let steps = 200_000;
        let dt = 2.0 / steps as f64;
        let (mut time, mut excess) = (0.0, 0.0);
        for i in 0..steps {
            let y = path.evaluate(&spec, (i as f64 + 0.5) * dt);
            if y > x {
                time += dt;
                excess += (y - x) * dt;
            }
        }
        assert!((e.time_above - time).abs() < 1e-3, "seed {seed}: {} vs {time}", e.time_above);
        assert!((e.integrated_excess - excess).abs() < 1e-3 * (1.0 + excess), "seed {seed}: {} vs {excess}", e.integrated_excess);
    }
}

#[test]
fn cramer_check_values() {
    let (alpha, horizon) = (2.0, 3.0);
    assert_eq!(OmegaLaw::Constant(0.5).cramer_check(alpha, horizon).value, 1.0);
    let neg = OmegaLaw::Constant(-1.0).cramer_check(alpha, horizon);
    assert!((neg.value - (2.0 * alpha * horizon).exp()).abs() < 1e-9 * neg.value);
    assert!(neg.satisfied);
    let mix = OmegaLaw::Discrete { values: vec![-0.5, 1.0], probs: vec![0.25, 0.75] }.cramer_check(alpha, horizon);
    let oracle = 0.25 * (2.0 * alpha * 0.5 * horizon).exp() + 0.75;
    assert!((mix.value - oracle).abs() < 1e-9 * oracle);
    assert_eq!(mix.p, 4.0);
}

#[test]
fn trace_includes_jumps_and_writes_csv() {
    let spec = ShockFunctionSpec::exponential(1.0);
    let path = SnpPath::new(ArrivalSequence::new(vec![0.25, 0.7], 1.0).unwrap(), vec![3.0, 1.0], Some(vec![1.0, 1.0])).unwrap();
    let trace = path.trace(&spec, 5);
    let ts: Vec<f64> = trace.iter().map(|p| p.0).collect();
    assert_eq!(ts, vec![0.0, 0.25, 0.5, 0.7, 0.75, 1.0]);
    assert_eq!(trace[0].1, 0.0);
    assert_eq!(trace[1].1, 3.0);
    let mut buf = Vec::new();
    write_trace_csv(&mut buf, &trace).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("t,y\n0,0\n0.25,3\n"));
    assert_eq!(text.lines().count(), 7);
}

#[test]
fn embedded_chain_matches_evaluation_at_jumps() {
    let spec = ShockFunctionSpec::ExponentialDecay(OmegaLaw::Uniform { lo: -0.5, hi: 2.0 });
    let path = sample_path(6.0, 4.0, 1.5, &spec, 77);
    let chain = path.embedded_chain(&spec);
    for (y, &t) in chain.iter().zip(&path.arrivals.times) {
        assert!((y - path.evaluate(&spec, t)).abs() <= 1e-10 * y.abs().max(1.0));
    }
}
