//! Shot noise paths `Y(t) = Σ_{i <= N(t)} X_i h_i(t, T_i)`.
//!
//! Besides pointwise evaluation this module computes the embedded chain, path
//! suprema under several conventions, exact exceedance functionals (time
//! above a level and integrated excess) and the recursive KDEM chain.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::arrivals::{ArrivalSampler, ArrivalSequence, InterArrivalLaw};
use crate::error::{Error, Result};
use crate::heavytail::{Draw, HeavyTailDist};
use crate::numeric::{self, one_minus_exp_over};
use crate::parallel::{derive_seed, stream_rng};

/// Inner Monte Carlo draws used to integrate over continuous ω laws.
pub const OMEGA_MC_DRAWS: usize = 100_000;
const OMEGA_MC_SEED: u64 = 0x0e6a_5eed;

/// Law of the per-shock elimination rate ω.
#[derive(Debug, Clone, PartialEq)]
pub enum OmegaLaw {
    Constant(f64),
    Discrete { values: Vec<f64>, probs: Vec<f64> },
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, sd: f64 },
}

/// Sign pattern of the support of ω.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OmegaSign {
    /// ω ≡ 0.
    Zero,
    /// ω >= 0 a.s. and not identically 0.
    NonNegative,
    /// ω <= 0 a.s. and not identically 0.
    NonPositive,
    Mixed,
}

/// How an expectation over ω was evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExpectationMethod {
    /// Finite support: exact weighted sum.
    Exact,
    /// Continuous law: fixed-seed Monte Carlo sample.
    NestedMonteCarlo { draws: usize },
}

/// A weighted point set standing in for the ω law inside expectations.
#[derive(Debug, Clone)]
pub struct OmegaAtoms {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
    pub method: ExpectationMethod,
}

impl OmegaAtoms {
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.values
            .iter()
            .zip(&self.weights)
            .map(|(&w, &p)| p * f(w))
            .collect::<numeric::CompensatedSum>()
            .value()
    }
}

impl OmegaLaw {
    pub fn validate(&self) -> Result<()> {
        let finite = |name, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be finite, got {v}")))
            }
        };
        match self {
            OmegaLaw::Constant(w) => finite("omega", *w),
            OmegaLaw::Discrete { values, probs } => {
                if values.is_empty() || values.len() != probs.len() {
                    return Err(Error::param("omega", "discrete law needs matching non-empty values and probs"));
                }
                values.iter().try_for_each(|&v| finite("omega", v))?;
                if probs.iter().any(|&p| !(p >= 0.0)) {
                    return Err(Error::param("probs", "probabilities must be >= 0"));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(Error::param("probs", format!("probabilities sum to {total}, not 1")));
                }
                Ok(())
            }
            OmegaLaw::Uniform { lo, hi } => {
                finite("lo", *lo)?;
                finite("hi", *hi)?;
                if hi > lo {
                    Ok(())
                } else {
                    Err(Error::param("hi", format!("need hi > lo, got [{lo}, {hi}]")))
                }
            }
            OmegaLaw::Normal { mean, sd } => {
                finite("mean", *mean)?;
                if *sd > 0.0 && sd.is_finite() {
                    Ok(())
                } else {
                    Err(Error::param("sd", format!("must be finite and > 0, got {sd}")))
                }
            }
        }
    }

    pub fn sign(&self) -> OmegaSign {
        let (lo, hi) = match self {
            OmegaLaw::Constant(w) => (*w, *w),
            OmegaLaw::Discrete { values, probs } => {
                let support = values.iter().zip(probs).filter(|(_, &p)| p > 0.0).map(|(&v, _)| v);
                support.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)))
            }
            OmegaLaw::Uniform { lo, hi } => (*lo, *hi),
            OmegaLaw::Normal { .. } => (f64::NEG_INFINITY, f64::INFINITY),
        };
        if lo == 0.0 && hi == 0.0 {
            OmegaSign::Zero
        } else if lo >= 0.0 {
            OmegaSign::NonNegative
        } else if hi <= 0.0 {
            OmegaSign::NonPositive
        } else {
            OmegaSign::Mixed
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            OmegaLaw::Constant(w) => *w,
            OmegaLaw::Discrete { values, probs } => values.iter().zip(probs).map(|(v, p)| v * p).sum(),
            OmegaLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
            OmegaLaw::Normal { mean, .. } => *mean,
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            OmegaLaw::Constant(w) => w * w,
            OmegaLaw::Discrete { values, probs } => values.iter().zip(probs).map(|(v, p)| v * v * p).sum(),
            OmegaLaw::Uniform { lo, hi } => (lo * lo + lo * hi + hi * hi) / 3.0,
            OmegaLaw::Normal { mean, sd } => mean * mean + sd * sd,
        }
    }

    pub fn is_constant(&self) -> bool {
        match self {
            OmegaLaw::Constant(_) => true,
            OmegaLaw::Discrete { values, probs } => {
                let mut support = values.iter().zip(probs).filter(|(_, &p)| p > 0.0).map(|(&v, _)| v);
                let first = support.next();
                support.all(|v| Some(v) == first)
            }
            _ => false,
        }
    }

    /// Point set used for expectations: exact atoms for finite supports,
    /// a fixed-seed sample of [`OMEGA_MC_DRAWS`] draws otherwise.
    pub fn atoms(&self) -> OmegaAtoms {
        match self {
            OmegaLaw::Constant(w) => OmegaAtoms {
                values: vec![*w],
                weights: vec![1.0],
                method: ExpectationMethod::Exact,
            },
            OmegaLaw::Discrete { values, probs } => OmegaAtoms {
                values: values.clone(),
                weights: probs.clone(),
                method: ExpectationMethod::Exact,
            },
            _ => {
                let mut rng = stream_rng(derive_seed(OMEGA_MC_SEED, 1), 0);
                let values: Vec<f64> = (0..OMEGA_MC_DRAWS).map(|_| self.draw(&mut rng)).collect();
                OmegaAtoms {
                    weights: vec![1.0 / OMEGA_MC_DRAWS as f64; OMEGA_MC_DRAWS],
                    values,
                    method: ExpectationMethod::NestedMonteCarlo { draws: OMEGA_MC_DRAWS },
                }
            }
        }
    }

    /// Empirical Cramér check `E[exp(p ω₋ T)] < ∞` at `p = 2α`.
    pub fn cramer_check(&self, alpha: f64, horizon: f64) -> CramerCheck {
        let p = 2.0 * alpha;
        let value = self.atoms().expect(|w| (p * (-w).max(0.0) * horizon).exp());
        CramerCheck {
            p,
            value,
            satisfied: value.is_finite(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CramerCheck {
    pub p: f64,
    pub value: f64,
    pub satisfied: bool,
}

impl Draw for OmegaLaw {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            OmegaLaw::Constant(w) => *w,
            OmegaLaw::Discrete { values, probs } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (v, p) in values.iter().zip(probs) {
                    acc += p;
                    if u < acc {
                        return *v;
                    }
                }
                *values.last().expect("validated non-empty")
            }
            OmegaLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            OmegaLaw::Normal { mean, sd } => Normal::new(*mean, *sd).expect("validated").sample(rng),
        }
    }
}

/// Declared behaviour of `t ↦ h(t, s)` for `t >= s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Monotonicity {
    /// Both non-increasing and non-decreasing.
    Constant,
    NonIncreasing,
    NonDecreasing,
    Mixed,
}

pub type ShockFn = Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>;

/// Shock function `h_i(t, s)`; zero for `t < s`.
#[derive(Clone)]
pub enum ShockFunctionSpec {
    Constant(f64),
    /// `h_i(t, s) = exp(-ω_i (t - s))`, ω_i drawn once per shock.
    ExponentialDecay(OmegaLaw),
    /// `h(t, s) = 1{t = s}`.
    Indicator,
    UserDeterministic { h: ShockFn, monotonicity: Monotonicity },
}

impl fmt::Debug for ShockFunctionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShockFunctionSpec::Constant(c) => write!(f, "Constant({c})"),
            ShockFunctionSpec::ExponentialDecay(w) => write!(f, "ExponentialDecay({w:?})"),
            ShockFunctionSpec::Indicator => write!(f, "Indicator"),
            ShockFunctionSpec::UserDeterministic { monotonicity, .. } => {
                write!(f, "UserDeterministic({monotonicity:?})")
            }
        }
    }
}

impl ShockFunctionSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ShockFunctionSpec::Constant(c) if !(*c > 0.0 && c.is_finite()) => {
                Err(Error::param("c", format!("constant shock must be finite and > 0, got {c}")))
            }
            ShockFunctionSpec::ExponentialDecay(w) => w.validate(),
            _ => Ok(()),
        }
    }

    pub fn exponential(omega: f64) -> Self {
        ShockFunctionSpec::ExponentialDecay(OmegaLaw::Constant(omega))
    }

    /// `h(t, s)` for the shock with rate `omega` (ignored unless exponential).
    pub fn value(&self, t: f64, s: f64, omega: f64) -> f64 {
        if t < s {
            return 0.0;
        }
        match self {
            ShockFunctionSpec::Constant(c) => *c,
            ShockFunctionSpec::ExponentialDecay(_) => (-omega * (t - s)).exp(),
            ShockFunctionSpec::Indicator => {
                if t == s {
                    1.0
                } else {
                    0.0
                }
            }
            ShockFunctionSpec::UserDeterministic { h, .. } => h(t, s),
        }
    }

    pub fn monotonicity(&self) -> Monotonicity {
        match self {
            ShockFunctionSpec::Constant(_) => Monotonicity::Constant,
            ShockFunctionSpec::ExponentialDecay(w) => match w.sign() {
                OmegaSign::Zero => Monotonicity::Constant,
                OmegaSign::NonNegative => Monotonicity::NonIncreasing,
                OmegaSign::NonPositive => Monotonicity::NonDecreasing,
                OmegaSign::Mixed => Monotonicity::Mixed,
            },
            ShockFunctionSpec::Indicator => Monotonicity::NonIncreasing,
            ShockFunctionSpec::UserDeterministic { monotonicity, .. } => *monotonicity,
        }
    }

    pub fn omega_law(&self) -> Option<&OmegaLaw> {
        match self {
            ShockFunctionSpec::ExponentialDecay(w) => Some(w),
            _ => None,
        }
    }

    /// Atoms of ω for expectations; a single dummy atom for kinds without ω.
    pub fn omega_atoms(&self) -> OmegaAtoms {
        match self {
            ShockFunctionSpec::ExponentialDecay(w) => w.atoms(),
            _ => OmegaLaw::Constant(0.0).atoms(),
        }
    }

    /// `∫_s^T h(t, s)^α dt` for one shock.
    pub fn time_integral_pow(&self, s: f64, horizon: f64, omega: f64, alpha: f64) -> Result<f64> {
        let len = (horizon - s).max(0.0);
        Ok(match self {
            ShockFunctionSpec::Constant(c) => c.powf(alpha) * len,
            ShockFunctionSpec::ExponentialDecay(_) => len * one_minus_exp_over(alpha * omega * len),
            ShockFunctionSpec::Indicator => 0.0,
            ShockFunctionSpec::UserDeterministic { h, .. } => {
                numeric::integrate(|t| h(t, s).max(0.0).powf(alpha), s, horizon, 1e-14, 1e-9)?
            }
        })
    }

    /// Whether paths of this shock are sums of exponentials in `t`.
    fn exp_family(&self) -> bool {
        matches!(self, ShockFunctionSpec::Constant(_) | ShockFunctionSpec::ExponentialDecay(_))
    }
}

/// One realised shot noise path on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SnpPath {
    pub arrivals: ArrivalSequence,
    pub shocks: Vec<f64>,
    /// Per-shock ω for exponential shocks.
    pub omegas: Option<Vec<f64>>,
}

/// Convention for the path supremum over `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SupremumMode {
    /// Max over the embedded chain.
    Skeleton,
    /// Max over the embedded chain and `Y(T)`.
    SkeletonTerminal,
    /// Max over a uniform grid of step `dt` merged with the jump instants and `T`.
    Dense { dt: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Supremum {
    pub value: f64,
    pub time: f64,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct SupremumComparison {
    pub skeleton_terminal: f64,
    pub dense: f64,
    pub disagree: bool,
}

/// Exceedance functionals of one path above a level `x`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Exceedance {
    /// `∫_0^T 1{Y(t) > x} dt`.
    pub time_above: f64,
    /// `∫_0^T (Y(t) - x)_+ dt`.
    pub integrated_excess: f64,
}

impl SnpPath {
    pub fn new(arrivals: ArrivalSequence, shocks: Vec<f64>, omegas: Option<Vec<f64>>) -> Result<Self> {
        if shocks.len() != arrivals.count() {
            return Err(Error::param("shocks", "one shock per arrival required"));
        }
        if omegas.as_ref().is_some_and(|w| w.len() != shocks.len()) {
            return Err(Error::param("omegas", "one omega per arrival required"));
        }
        Ok(SnpPath {
            arrivals,
            shocks,
            omegas,
        })
    }

    /// Draw arrivals, shocks and (for exponential shocks) the per-shock ω.
    pub fn sample<R: Rng + ?Sized>(
        arrivals: &ArrivalSampler,
        marginal: &HeavyTailDist,
        shock: &ShockFunctionSpec,
        rng: &mut R,
    ) -> Self {
        let arr = arrivals.sample(rng);
        let shocks = marginal.sample(arr.count(), rng);
        let omegas = shock
            .omega_law()
            .map(|law| (0..arr.count()).map(|_| law.draw(rng)).collect());
        SnpPath {
            arrivals: arr,
            shocks,
            omegas,
        }
    }

    /// Path driven by an arbitrary shock-value generator (e.g. dependent).
    pub fn sample_with<R: Rng + ?Sized>(
        arrivals: &ArrivalSampler,
        shock_values: impl FnOnce(usize, &mut R) -> Vec<f64>,
        shock: &ShockFunctionSpec,
        rng: &mut R,
    ) -> Self {
        let arr = arrivals.sample(rng);
        let shocks = shock_values(arr.count(), rng);
        let omegas = shock
            .omega_law()
            .map(|law| (0..arr.count()).map(|_| law.draw(rng)).collect());
        SnpPath {
            arrivals: arr,
            shocks,
            omegas,
        }
    }

    pub fn horizon(&self) -> f64 {
        self.arrivals.horizon
    }

    pub fn len(&self) -> usize {
        self.shocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shocks.is_empty()
    }

    fn omega(&self, i: usize) -> f64 {
        self.omegas.as_ref().map_or(0.0, |w| w[i])
    }

    /// `Y(t)`.
    pub fn evaluate(&self, spec: &ShockFunctionSpec, t: f64) -> f64 {
        let n = self.arrivals.count_until(t);
        (0..n)
            .map(|i| self.shocks[i] * spec.value(t, self.arrivals.times[i], self.omega(i)))
            .fold(0.0, |a, b| a + b)
    }

    /// `(Y(T_1), …, Y(T_N))`, each value including the shock just arrived.
    pub fn embedded_chain(&self, spec: &ShockFunctionSpec) -> Vec<f64> {
        let times = &self.arrivals.times;
        let recursive = match spec {
            ShockFunctionSpec::Constant(_) => Some(0.0),
            ShockFunctionSpec::ExponentialDecay(law) if law.is_constant() => Some(law.mean()),
            _ => None,
        };
        if let Some(w) = recursive {
            let c = match spec {
                ShockFunctionSpec::Constant(c) => *c,
                _ => 1.0,
            };
            let mut y = 0.0;
            let mut prev = 0.0;
            return times
                .iter()
                .zip(&self.shocks)
                .map(|(&t, &x)| {
                    y = y * (-w * (t - prev)).exp() + c * x;
                    prev = t;
                    y
                })
                .collect();
        }
        (0..times.len())
            .map(|k| {
                (0..=k)
                    .map(|i| self.shocks[i] * spec.value(times[k], times[i], self.omega(i)))
                    .sum()
            })
            .collect()
    }

    pub fn supremum(&self, spec: &ShockFunctionSpec, mode: SupremumMode) -> Result<Supremum> {
        let horizon = self.horizon();
        let chain_max = || {
            self.embedded_chain(spec)
                .into_iter()
                .zip(&self.arrivals.times)
                .fold((0.0, 0.0), |best, (y, &t)| if y > best.0 { (y, t) } else { best })
        };
        let warning = (matches!(mode, SupremumMode::Skeleton | SupremumMode::SkeletonTerminal)
            && spec.monotonicity() == Monotonicity::Mixed
            && !spec.exp_family())
        .then(|| "shock function has mixed monotonicity; skeleton value may miss interior maxima, use dense mode".to_string());
        let (value, time) = match mode {
            SupremumMode::Skeleton => chain_max(),
            SupremumMode::SkeletonTerminal => {
                let (v, t) = chain_max();
                let terminal = self.evaluate(spec, horizon);
                if terminal > v {
                    (terminal, horizon)
                } else {
                    (v, t)
                }
            }
            SupremumMode::Dense { dt } => {
                if !(dt > 0.0) {
                    return Err(Error::param("dt", format!("grid step must be > 0, got {dt}")));
                }
                let steps = (horizon / dt).ceil() as usize;
                let grid = (0..=steps).map(|i| (i as f64 * dt).min(horizon));
                let on_grid = grid
                    .map(|t| (self.evaluate(spec, t), t))
                    .fold((0.0, 0.0), |best, (y, t)| if y > best.0 { (y, t) } else { best });
                // Jump values come from the chain so that dense >= skeleton holds bit for bit.
                let (v, t) = chain_max();
                if v > on_grid.0 {
                    (v, t)
                } else {
                    on_grid
                }
            }
        };
        Ok(Supremum { value, time, warning })
    }

    /// Skeleton-plus-terminal and dense-grid suprema side by side. The
    /// pair is flagged when the dense value exceeds the skeleton value by
    /// more than `rel_tol`, i.e. when an interior maximum was missed.
    pub fn compare_suprema(&self, spec: &ShockFunctionSpec, dt: f64, rel_tol: f64) -> Result<SupremumComparison> {
        let skeleton_terminal = self.supremum(spec, SupremumMode::SkeletonTerminal)?.value;
        let dense = self.supremum(spec, SupremumMode::Dense { dt })?.value;
        Ok(SupremumComparison {
            skeleton_terminal,
            dense,
            disagree: dense > skeleton_terminal * (1.0 + rel_tol),
        })
    }

    /// Time spent above `x` and integrated excess over `x` on `[0, T]`.
    ///
    /// Exact for constant and exponential shocks; a midpoint rule on a grid
    /// of `T / 10^4` otherwise. Indicator shocks never spend time above a
    /// positive level.
    pub fn exceedance(&self, spec: &ShockFunctionSpec, x: f64) -> Exceedance {
        match spec {
            ShockFunctionSpec::Indicator => Exceedance::default(),
            _ if spec.exp_family() => self.exceedance_exact(spec, x),
            _ => {
                let horizon = self.horizon();
                let steps = 10_000;
                let dt = horizon / steps as f64;
                let mut out = Exceedance::default();
                for i in 0..steps {
                    let y = self.evaluate(spec, (i as f64 + 0.5) * dt);
                    if y > x {
                        out.time_above += dt;
                        out.integrated_excess += (y - x) * dt;
                    }
                }
                out
            }
        }
    }

    fn exceedance_exact(&self, spec: &ShockFunctionSpec, x: f64) -> Exceedance {
        let c = match spec {
            ShockFunctionSpec::Constant(c) => *c,
            _ => 1.0,
        };
        let times = &self.arrivals.times;
        let horizon = self.horizon();
        let mut terms: Vec<ExpTerm> = Vec::with_capacity(times.len());
        let mut out = Exceedance::default();
        if x < 0.0 {
            // Y >= 0 everywhere; only [0, T_1) needs the zero level.
            let first = times.first().copied().unwrap_or(horizon);
            out.time_above += first;
            out.integrated_excess += -x * first;
        }
        for (i, &t) in times.iter().enumerate() {
            terms.push(ExpTerm {
                amp: c * self.shocks[i],
                rate: self.omega(i),
                start: t,
            });
            let end = times.get(i + 1).copied().unwrap_or(horizon);
            if end > t {
                segment_exceedance(&terms, t, end, x, &mut out);
            }
        }
        out
    }

    /// `(t, Y(t))` on a uniform grid of `n_points` merged with the jump instants.
    pub fn trace(&self, spec: &ShockFunctionSpec, n_points: usize) -> Vec<(f64, f64)> {
        let horizon = self.horizon();
        let n = n_points.max(2);
        let mut ts: Vec<f64> = (0..n).map(|i| horizon * i as f64 / (n - 1) as f64).collect();
        ts.extend(&self.arrivals.times);
        ts.sort_by(f64::total_cmp);
        ts.dedup();
        ts.into_iter().map(|t| (t, self.evaluate(spec, t))).collect()
    }
}

/// Write a path trace as CSV with header `t,y`.
pub fn write_trace_csv<W: Write>(mut w: W, trace: &[(f64, f64)]) -> io::Result<()> {
    writeln!(w, "t,y")?;
    for (t, y) in trace {
        writeln!(w, "{t},{y}")?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct ExpTerm {
    amp: f64,
    rate: f64,
    start: f64,
}

fn y_at(terms: &[ExpTerm], t: f64) -> f64 {
    terms.iter().map(|k| k.amp * (-k.rate * (t - k.start)).exp()).sum()
}

fn dy_at(terms: &[ExpTerm], t: f64) -> f64 {
    terms
        .iter()
        .map(|k| -k.rate * k.amp * (-k.rate * (t - k.start)).exp())
        .sum()
}

fn integral_y(terms: &[ExpTerm], a: f64, b: f64) -> f64 {
    let len = b - a;
    terms
        .iter()
        .map(|k| k.amp * (-k.rate * (a - k.start)).exp() * len * one_minus_exp_over(k.rate * len))
        .sum()
}

/// Between jumps `Y` is a positive combination of exponentials, hence convex:
/// `{Y > x}` on a segment is the segment minus one interval, found from the
/// minimiser and at most two crossings.
fn segment_exceedance(terms: &[ExpTerm], a: f64, b: f64, x: f64, out: &mut Exceedance) {
    let tol = 1e-13 * b.abs().max(1.0);
    let ya = y_at(terms, a);
    let yb = y_at(terms, b);
    if ya <= x && yb <= x {
        // Convexity: Y <= max(Y(a), Y(b)) on the segment.
        return;
    }
    let mut add = |u: f64, v: f64| {
        if v > u {
            out.time_above += v - u;
            out.integrated_excess += integral_y(terms, u, v) - x * (v - u);
        }
    };
    let argmin = if dy_at(terms, a) >= 0.0 {
        a
    } else if dy_at(terms, b) <= 0.0 {
        b
    } else {
        numeric::bisect(|t| dy_at(terms, t), a, b, tol).unwrap_or(a)
    };
    let ymin = y_at(terms, argmin);
    if ymin > x {
        add(a, b);
        return;
    }
    // Decreasing part [a, argmin]: above x on [a, r).
    if ya > x {
        let r = numeric::bisect(|t| y_at(terms, t) - x, a, argmin, tol).unwrap_or(a);
        add(a, r);
    }
    // Increasing part [argmin, b]: above x on (r, b].
    if yb > x {
        let r = numeric::bisect(|t| y_at(terms, t) - x, argmin, b, tol).unwrap_or(b);
        add(r, b);
    }
}

/// Options for [`kdem_chain`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KdemOptions {
    /// Starting value `Y_0`.
    pub y0: f64,
    /// Steps discarded before recording; requires `E[ω] > 0`.
    pub burn_in: usize,
}

impl Default for KdemOptions {
    fn default() -> Self {
        KdemOptions { y0: 0.0, burn_in: 0 }
    }
}

/// KDEM chain `Y_{j+1} = exp(-ω_{j+1} ΔT_{j+1}) Y_j + X_{j+1}`; returns
/// `Y_1, …, Y_n` after the burn-in.
pub fn kdem_chain<R, S>(
    omega: &OmegaLaw,
    interarrival: &InterArrivalLaw,
    shock: &S,
    n_steps: usize,
    options: KdemOptions,
    rng: &mut R,
) -> Result<Vec<f64>>
where
    R: Rng + ?Sized,
    S: Draw,
{
    if n_steps == 0 {
        return Err(Error::param("n_steps", "need at least one step"));
    }
    if options.burn_in > 0 && omega.mean() <= 0.0 {
        return Err(Error::NoStationarySolution {
            mean_omega: omega.mean(),
        });
    }
    let mut y = options.y0;
    let mut out = Vec::with_capacity(n_steps);
    for step in 0..options.burn_in + n_steps {
        let w = omega.draw(rng);
        let dt = interarrival.draw(rng);
        y = (-w * dt).exp() * y + shock.draw(rng);
        if step >= options.burn_in {
            out.push(y);
        }
    }
    Ok(out)
}
