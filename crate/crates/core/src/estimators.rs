//! Statistical checks: Hill estimator, empirical tail-ratio curves, the
//! pairwise asymptotic independence diagnostic and cluster estimators of the
//! extremal index.

use std::io::{self, Write};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::heavytail::HeavyTailDist;
use crate::numeric::{score_interval, Moments, Z95};
use crate::parallel::{Accumulator, Exec, McRng};
use crate::seqmodel::{empirical_quantile, ThresholdSpec};

/// Hill estimate of the tail index from the `k` largest observations.
pub fn hill(samples: &[f64], k: usize) -> Result<f64> {
    let n = samples.len();
    if k < 2 || k >= n {
        return Err(Error::param("k", format!("need 2 <= k < n = {n}, got {k}")));
    }
    if samples.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::param("samples", "Hill estimator needs positive samples"));
    }
    let mut xs = samples.to_vec();
    xs.sort_by(|a, b| b.total_cmp(a));
    let base = xs[k].ln();
    let denom: f64 = xs[..k].iter().map(|x| x.ln() - base).sum();
    if !(denom > 0.0) {
        return Err(Error::Numerical("Hill denominator is zero (tied order statistics)".into()));
    }
    Ok(k as f64 / denom)
}

/// Empirical `P(Z > x) / F̄(x)` over a threshold ladder.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailRatioCurve {
    pub thresholds: Vec<f64>,
    pub ratios: Vec<f64>,
    /// 95% half-widths.
    pub ci: Vec<f64>,
    pub exceedances: Vec<u64>,
    pub n_samples: u64,
    pub reference_constant: Option<f64>,
}

impl TailRatioCurve {
    /// CSV with header `x,ratio,ci,reference`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x,ratio,ci,reference")?;
        let reference = self.reference_constant.map_or(String::new(), |c| c.to_string());
        for i in 0..self.thresholds.len() {
            writeln!(w, "{},{},{},{reference}", self.thresholds[i], self.ratios[i], self.ci[i])?;
        }
        Ok(())
    }

    /// `|ratio - reference|` per threshold.
    pub fn deviations(&self) -> Option<Vec<f64>> {
        let c = self.reference_constant?;
        Some(self.ratios.iter().map(|r| (r - c).abs()).collect())
    }
}

fn check_ascending(thresholds: &[f64]) -> Result<()> {
    if thresholds.is_empty() {
        return Err(Error::param("thresholds", "empty threshold grid"));
    }
    if thresholds.windows(2).any(|w| !(w[0] < w[1])) || !(thresholds[0] > 0.0) {
        return Err(Error::param("thresholds", "must be positive and strictly ascending"));
    }
    Ok(())
}

#[derive(Default)]
struct Counts(Vec<u64>);

impl Accumulator for Counts {
    fn merge(&mut self, other: Self) {
        if self.0.is_empty() {
            self.0 = other.0;
        } else {
            for (a, b) in self.0.iter_mut().zip(other.0) {
                *a += b;
            }
        }
    }
}

/// Plain Monte Carlo tail-ratio curve of the statistic produced by `draw`
/// against the exact survival of `reference`, with score-interval CIs.
pub fn tail_ratio_curve<F>(
    draw: F,
    reference: &HeavyTailDist,
    thresholds: &[f64],
    reference_constant: Option<f64>,
    n_samples: u64,
    exec: &Exec,
    seed: u64,
) -> Result<TailRatioCurve>
where
    F: Fn(&mut McRng) -> f64 + Sync,
{
    check_ascending(thresholds)?;
    if n_samples == 0 {
        return Err(Error::param("n_samples", "need at least one sample"));
    }
    let counts: Counts = exec.run(n_samples, seed, |rng, acc: &mut Counts| {
        if acc.0.is_empty() {
            acc.0 = vec![0; thresholds.len()];
        }
        let z = draw(rng);
        for (c, &x) in acc.0.iter_mut().zip(thresholds) {
            if z > x {
                *c += 1;
            } else {
                break;
            }
        }
    });
    let mut ratios = Vec::new();
    let mut ci = Vec::new();
    for (&k, &x) in counts.0.iter().zip(thresholds) {
        let sf = reference.survival(x);
        let (lo, hi) = score_interval(k, n_samples, Z95);
        ratios.push(k as f64 / n_samples as f64 / sf);
        ci.push(0.5 * (hi - lo) / sf);
    }
    Ok(TailRatioCurve {
        thresholds: thresholds.to_vec(),
        ratios,
        ci,
        exceedances: counts.0,
        n_samples,
        reference_constant,
    })
}

/// How a weighted shock vector is aggregated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Aggregate {
    Sum,
    Max,
}

/// `P(agg_i w_i X_i > x | w, X)` smoothed by conditioning, for i.i.d. shocks
/// with law `dist` and non-negative weights.
///
/// For `Max` this is the exact conditional probability given the weights.
/// For `Sum` it is the largest-term estimator: the event is split according
/// to which term is largest, and the largest term is integrated out given
/// the others.
pub fn conditional_exceedance(agg: Aggregate, weights: &[f64], values: &[f64], dist: &HeavyTailDist, x: f64) -> f64 {
    match agg {
        Aggregate::Max => {
            let log_below: f64 = weights
                .iter()
                .filter(|&&w| w > 0.0)
                .map(|&w| (-dist.survival(x / w)).ln_1p())
                .sum();
            -log_below.exp_m1()
        }
        Aggregate::Sum => {
            let n = weights.len();
            if n == 0 {
                return 0.0;
            }
            let terms: Vec<f64> = weights.iter().zip(values).map(|(w, v)| w * v).collect();
            let total: f64 = terms.iter().sum();
            // Largest and second-largest terms give the leave-one-out max.
            let (mut i1, mut m1, mut m2) = (0, f64::NEG_INFINITY, f64::NEG_INFINITY);
            for (i, &t) in terms.iter().enumerate() {
                if t > m1 {
                    m2 = m1;
                    m1 = t;
                    i1 = i;
                } else if t > m2 {
                    m2 = t;
                }
            }
            let mut p = 0.0;
            for (i, &w) in weights.iter().enumerate() {
                if w <= 0.0 {
                    continue;
                }
                let rest = total - terms[i];
                let max_rest = if i == i1 { m2.max(0.0) } else { m1 };
                let level = (x - rest).max(max_rest);
                p += dist.survival(level / w);
            }
            p
        }
    }
}

/// Tail-ratio curve from the conditional estimator of
/// [`conditional_exceedance`]. `draw` returns `(weights, shocks)` with shocks
/// distributed as `reference`. CIs are normal 95% half-widths.
#[allow(clippy::too_many_arguments)]
pub fn conditional_tail_ratio_curve<F>(
    draw: F,
    agg: Aggregate,
    reference: &HeavyTailDist,
    thresholds: &[f64],
    reference_constant: Option<f64>,
    n_samples: u64,
    exec: &Exec,
    seed: u64,
) -> Result<TailRatioCurve>
where
    F: Fn(&mut McRng) -> (Vec<f64>, Vec<f64>) + Sync,
{
    check_ascending(thresholds)?;
    if n_samples < 2 {
        return Err(Error::param("n_samples", "need at least two samples"));
    }
    let acc: Vec<Moments> = exec
        .map_chunks(n_samples, seed, 0, |range, rng| {
            let mut m = vec![Moments::default(); thresholds.len()];
            for _ in range {
                let (w, v) = draw(rng);
                for (mi, &x) in m.iter_mut().zip(thresholds) {
                    mi.push(conditional_exceedance(agg, &w, &v, reference, x));
                }
            }
            m
        })
        .into_iter()
        .fold(vec![Moments::default(); thresholds.len()], |mut tot, part| {
            for (a, b) in tot.iter_mut().zip(&part) {
                a.merge(b);
            }
            tot
        });
    let mut ratios = Vec::new();
    let mut ci = Vec::new();
    for (m, &x) in acc.iter().zip(thresholds) {
        let sf = reference.survival(x);
        ratios.push(m.mean() / sf);
        ci.push(Z95 * m.std_error() / sf);
    }
    Ok(TailRatioCurve {
        thresholds: thresholds.to_vec(),
        ratios,
        ci,
        exceedances: vec![0; thresholds.len()],
        n_samples,
        reference_constant,
    })
}

/// Result of the pairwise joint-exceedance diagnostic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct H2Report {
    pub thresholds: Vec<f64>,
    /// `max_{(i,j)} P̂(X_i > x, X_j > x) / P̂(X_1 > x)` per threshold.
    pub ratios: Vec<f64>,
    /// Pair attaining the maximum, 0-based.
    pub worst_pairs: Vec<(usize, usize)>,
    pub marginal_exceedances: Vec<u64>,
    pub decreasing: bool,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Default)]
struct PairCounts {
    marginal: Vec<u64>,
    joint: Vec<Vec<u64>>,
}

impl Accumulator for PairCounts {
    fn merge(&mut self, other: Self) {
        if self.marginal.is_empty() {
            *self = other;
            return;
        }
        for (a, b) in self.marginal.iter_mut().zip(other.marginal) {
            *a += b;
        }
        for (ra, rb) in self.joint.iter_mut().zip(other.joint) {
            for (a, b) in ra.iter_mut().zip(rb) {
                *a += b;
            }
        }
    }
}

/// Joint-exceedance ratios of a sequence generator over `pairs`.
/// Quantile thresholds refer to the empirical law of `X_1`; they are
/// resolved on the same samples (the generator is replayed from `seed`).
pub fn h2_diagnostic<F>(
    draw: F,
    pairs: &[(usize, usize)],
    thresholds: &[ThresholdSpec],
    bound: f64,
    n_samples: u64,
    exec: &Exec,
    seed: u64,
) -> Result<H2Report>
where
    F: Fn(&mut McRng) -> Vec<f64> + Sync,
{
    if pairs.is_empty() || pairs.iter().any(|(i, j)| i == j) {
        return Err(Error::param("pairs", "need a non-empty set of pairs with i != j"));
    }
    if thresholds.is_empty() || n_samples == 0 {
        return Err(Error::param("thresholds", "need thresholds and samples"));
    }
    let needs_quantile = thresholds.iter().any(|t| matches!(t, ThresholdSpec::Quantile(_)));
    let firsts = if needs_quantile {
        exec.collect(n_samples, seed, |rng| draw(rng).first().copied().unwrap_or(0.0))
    } else {
        Vec::new()
    };
    let xs: Vec<f64> = thresholds
        .iter()
        .map(|t| match *t {
            ThresholdSpec::Raw(x) => x,
            ThresholdSpec::Quantile(p) => empirical_quantile(firsts.clone(), p),
        })
        .collect();
    let counts: PairCounts = exec.run(n_samples, seed, |rng, acc: &mut PairCounts| {
        if acc.marginal.is_empty() {
            acc.marginal = vec![0; xs.len()];
            acc.joint = vec![vec![0; pairs.len()]; xs.len()];
        }
        let seq = draw(rng);
        let get = |i: usize| seq.get(i).copied().unwrap_or(f64::NEG_INFINITY);
        for (t, &x) in xs.iter().enumerate() {
            if get(0) > x {
                acc.marginal[t] += 1;
            }
            for (p, &(i, j)) in pairs.iter().enumerate() {
                if get(i) > x && get(j) > x {
                    acc.joint[t][p] += 1;
                }
            }
        }
    });
    let mut ratios = Vec::new();
    let mut worst_pairs = Vec::new();
    for t in 0..xs.len() {
        let m = counts.marginal[t];
        let (best, &k) = counts.joint[t]
            .iter()
            .enumerate()
            .max_by_key(|(_, &k)| k)
            .expect("pairs non-empty");
        ratios.push(if m == 0 { 0.0 } else { k as f64 / m as f64 });
        worst_pairs.push(pairs[best]);
    }
    let decreasing = ratios.windows(2).all(|w| w[1] <= w[0]);
    let pass = *ratios.last().expect("non-empty") < bound;
    Ok(H2Report {
        thresholds: xs,
        ratios,
        worst_pairs,
        marginal_exceedances: counts.marginal,
        decreasing,
        bound,
        pass,
    })
}

/// Blocks estimator of the extremal index:
/// `θ̂ = log(1 - K/k) / (b log(1 - N/n))` with `K` exceeding blocks out of `k`
/// blocks of length `b` and `N` exceedances out of `n` observations.
pub fn blocks_extremal_index(series: &[f64], threshold: f64, block_len: usize) -> Result<f64> {
    if block_len == 0 || series.len() < block_len {
        return Err(Error::param("block_len", "need 0 < block length <= series length"));
    }
    let n_blocks = series.len() / block_len;
    let n = n_blocks * block_len;
    let exceed = series[..n].iter().filter(|&&y| y > threshold).count();
    let blocks = series[..n]
        .chunks(block_len)
        .filter(|b| b.iter().any(|&y| y > threshold))
        .count();
    if exceed == 0 {
        return Err(Error::Numerical("no exceedances of the threshold".into()));
    }
    if blocks == n_blocks {
        return Err(Error::Numerical("every block exceeds the threshold".into()));
    }
    let num = (1.0 - blocks as f64 / n_blocks as f64).ln();
    let den = block_len as f64 * (1.0 - exceed as f64 / n as f64).ln();
    Ok(num / den)
}

/// Runs estimator: fraction of exceedances that are followed by `run`
/// consecutive non-exceedances.
pub fn runs_extremal_index(series: &[f64], threshold: f64, run: usize) -> Result<f64> {
    if run == 0 {
        return Err(Error::param("run", "run length must be >= 1"));
    }
    let usable = series.len().saturating_sub(run);
    let mut exceed = 0usize;
    let mut ends = 0usize;
    for i in 0..usable {
        if series[i] > threshold {
            exceed += 1;
            if series[i + 1..=i + run].iter().all(|&y| y <= threshold) {
                ends += 1;
            }
        }
    }
    if exceed == 0 {
        return Err(Error::Numerical("no exceedances of the threshold".into()));
    }
    Ok(ends as f64 / exceed as f64)
}
