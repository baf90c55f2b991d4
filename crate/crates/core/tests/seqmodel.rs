use proptest::prelude::*;

use shotnoise::arrivals::CountingProcessSpec;
use shotnoise::estimators::{conditional_tail_ratio_curve, Aggregate};
use shotnoise::heavytail::HeavyTailDist;
use shotnoise::parallel::stream_rng;
use shotnoise::seqmodel::{
    breiman_constant_mc, empirical_spectral_measure, EntryLaw, LengthSpec, Marginal, MatrixSpec, Norm,
    SequenceScenario, SpectralOptions, ThresholdSpec,
};
use shotnoise::snp::ShockFunctionSpec;
use shotnoise::Exec;

fn pareto(alpha: f64) -> HeavyTailDist {
    HeavyTailDist::pareto(alpha, 1.0).unwrap()
}

/// `P(Pois(m) >= i)` by summing the pmf.
fn poisson_tail(m: f64, i: usize) -> f64 {
    let mut pmf = (-m).exp();
    let mut below = 0.0;
    for k in 0..i {
        below += pmf;
        pmf *= m / (k + 1) as f64;
    }
    1.0 - below
}

#[test]
fn one_large_coordinate_dominates_a_pair() {
    let d = pareto(1.5);
    let sc = SequenceScenario::new(Marginal::Iid(d.clone()), LengthSpec::Fixed(2), MatrixSpec::Identity, Norm::L1).unwrap();
    let sampler = sc.sampler().unwrap();
    let x = d.quantile(0.9999).unwrap();
    let curve = conditional_tail_ratio_curve(
        |rng| {
            let r = sampler.realize(rng);
            (vec![1.0; r.x.len()], r.x)
        },
        Aggregate::Sum,
        &d,
        &[x],
        Some(2.0),
        1_000_000,
        &Exec::with_workers(0),
        11,
    )
    .unwrap();
    let r = curve.ratios[0] / 2.0;
    assert!((r - 1.0).abs() < 0.05, "P(X1+X2>x)/(2F(x)) = {r}");
}

#[test]
fn spectral_atoms_do_not_depend_on_the_threshold() {
    let d = pareto(2.0);
    let sc = SequenceScenario::new(
        Marginal::Iid(d.clone()),
        LengthSpec::Poisson { mean: 3.0, at_least_one: true },
        MatrixSpec::Identity,
        Norm::Linf,
    )
    .unwrap();
    let x = d.quantile(0.999).unwrap();
    let run = |x: f64, seed| {
        let opts = SpectralOptions {
            threshold: ThresholdSpec::Raw(x),
            min_exceedances: 3_000,
            batch: 1_000_000,
            max_samples: 20_000_000,
        };
        empirical_spectral_measure(&sc, &opts, &Exec::with_workers(0), seed).unwrap()
    };
    let (lo, hi) = (run(x, 31), run(2.0 * x, 32));
    for j in 0..3 {
        let diff = (lo.atom_weights[j] - hi.atom_weights[j]).abs();
        let band = 3.0 * lo.atom_ci[j].hypot(hi.atom_ci[j]);
        assert!(diff < band, "atom {}: {} vs {} (band {band})", j + 1, lo.atom_weights[j], hi.atom_weights[j]);
    }
}

#[test]
fn theta_moments_match_length_tails() {
    // N ~ Poisson(3) given N >= 1: P(N >= i) / E[N] = P(Pois(3) >= i) / 3.
    let alpha = 2.0;
    let sc = SequenceScenario::new(
        Marginal::Iid(pareto(alpha)),
        LengthSpec::Poisson { mean: 3.0, at_least_one: true },
        MatrixSpec::Identity,
        Norm::Lp(alpha),
    )
    .unwrap();
    let opts = SpectralOptions {
        threshold: ThresholdSpec::Quantile(0.999),
        min_exceedances: 4_000,
        batch: 1_000_000,
        max_samples: 20_000_000,
    };
    let e = empirical_spectral_measure(&sc, &opts, &Exec::with_workers(0), 41).unwrap();
    for i in 1..=3 {
        let oracle = poisson_tail(3.0, i) / 3.0;
        let got = e.mean_theta_pow[i - 1];
        assert!((got - oracle).abs() < 0.03, "E|Theta_{i}|^a = {got} vs {oracle}");
    }
}

#[test]
fn unit_shock_matrices_reduce_to_partial_sums() {
    let counting = LengthSpec::Counting { spec: CountingProcessSpec::homogeneous(3.0).unwrap(), horizon: 2.0 };
    let tri = SequenceScenario::new(
        Marginal::Iid(pareto(1.5)),
        counting.clone(),
        MatrixSpec::LowerTriangularShock(ShockFunctionSpec::Constant(1.0)),
        Norm::Linf,
    )
    .unwrap();
    let diag =
        SequenceScenario::new(Marginal::Iid(pareto(1.5)), counting, MatrixSpec::Diagonal(ShockFunctionSpec::Constant(1.0)), Norm::L1)
            .unwrap();
    let mut rng = stream_rng(5, 0);
    for _ in 0..500 {
        for sc in [&tri, &diag] {
            let r = sc.realize(&mut rng).unwrap();
            let total = r.x.iter().fold(0.0, |a, b| a + b);
            assert!((r.norm_c - total).abs() <= 1e-12 * total.max(1.0), "{} vs {total}", r.norm_c);
            assert_eq!(r.arrivals.as_ref().unwrap().count(), r.len());
        }
    }
}

#[test]
fn single_entry_dense_matrix_gives_power_of_entry() {
    for &(c, alpha) in &[(2.0f64, 1.5f64), (0.5, 3.0), (-1.5, 2.0)] {
        let sc = SequenceScenario::new(
            Marginal::Iid(pareto(alpha)),
            LengthSpec::Fixed(1),
            MatrixSpec::UserDense(EntryLaw::Constant(c)),
            Norm::L1,
        )
        .unwrap();
        let est = breiman_constant_mc(&sc, 1_000, &Exec::sequential(), 3).unwrap();
        assert!((est.mean - c.abs().powf(alpha)).abs() < 1e-12, "{c}: {}", est.mean);
    }
}

#[test]
fn identity_breiman_constant_is_mean_length() {
    let sc = SequenceScenario::new(
        Marginal::Iid(pareto(1.2)),
        LengthSpec::Poisson { mean: 7.0, at_least_one: false },
        MatrixSpec::Identity,
        Norm::Linf,
    )
    .unwrap();
    let est = breiman_constant_mc(&sc, 200_000, &Exec::with_workers(0), 9).unwrap();
    assert!((est.mean - 7.0).abs() < est.ci_half_width * 1.5, "{} +- {}", est.mean, est.ci_half_width);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 64, ..ProptestConfig::default() })]

    #[test]
    fn column_norms_bounded_by_norm_of_image(mean in 0.5f64..6.0, p in 1.0f64..6.0, seed in any::<u64>()) {
        // With nonnegative entries and shocks, each weighted column sits below ‖C‖_p.
        let sc = SequenceScenario::new(
            Marginal::Iid(pareto(1.5)),
            LengthSpec::Counting { spec: CountingProcessSpec::homogeneous(mean).unwrap(), horizon: 1.0 },
            MatrixSpec::LowerTriangularShock(ShockFunctionSpec::exponential(0.7)),
            Norm::Lp(p),
        ).unwrap();
        let mut rng = stream_rng(seed, 2);
        let r = sc.realize(&mut rng).unwrap();
        for k in 0..r.len() {
            let weighted = r.matrix.column_norm(k, sc.norm) * r.x[k];
            prop_assert!(weighted <= r.norm_c * (1.0 + 1e-12));
        }
    }
}
