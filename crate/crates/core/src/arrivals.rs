//! Counting processes: homogeneous and inhomogeneous Poisson processes
//! sampled through the order-statistics property, and renewal processes.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma, Poisson};

use crate::error::{Error, Result};
use crate::heavytail::Draw;
use crate::numeric::{self, Moments};
use crate::parallel::Exec;

pub type RealFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Intensity `λ(·)` of an inhomogeneous Poisson process.
#[derive(Clone)]
pub enum Intensity {
    Constant(f64),
    /// `λ(t) = intercept + slope · t`.
    Linear { intercept: f64, slope: f64 },
    /// `rates[0]` on `[0, breaks[0])`, `rates[i]` on `[breaks[i-1], breaks[i])`,
    /// last rate up to infinity.
    PiecewiseConstant { breaks: Vec<f64>, rates: Vec<f64> },
    /// Arbitrary intensity, optionally with its exact cumulative.
    User { rate: RealFn, cumulative: Option<RealFn> },
}

impl fmt::Debug for Intensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Intensity::Constant(l) => write!(f, "Constant({l})"),
            Intensity::Linear { intercept, slope } => write!(f, "Linear({intercept} + {slope} t)"),
            Intensity::PiecewiseConstant { breaks, rates } => write!(f, "PiecewiseConstant({breaks:?}, {rates:?})"),
            Intensity::User { cumulative, .. } => write!(f, "User(cumulative: {})", cumulative.is_some()),
        }
    }
}

impl Intensity {
    fn validate(&self) -> Result<()> {
        match self {
            Intensity::Constant(l) => non_negative("rate", *l),
            Intensity::Linear { intercept, slope } => {
                non_negative("intercept", *intercept)?;
                non_negative("slope", *slope)
            }
            Intensity::PiecewiseConstant { breaks, rates } => {
                if rates.len() != breaks.len() + 1 {
                    return Err(Error::param("rates", "need exactly one more rate than breakpoints"));
                }
                if breaks.windows(2).any(|w| w[1] <= w[0]) || breaks.first().is_some_and(|&b| b <= 0.0) {
                    return Err(Error::param("breaks", "breakpoints must be positive and strictly increasing"));
                }
                rates.iter().try_for_each(|&r| non_negative("rates", r))
            }
            Intensity::User { .. } => Ok(()),
        }
    }

    pub fn rate(&self, t: f64) -> f64 {
        match self {
            Intensity::Constant(l) => *l,
            Intensity::Linear { intercept, slope } => intercept + slope * t,
            Intensity::PiecewiseConstant { breaks, rates } => {
                let idx = breaks.partition_point(|&b| b <= t);
                rates[idx]
            }
            Intensity::User { rate, .. } => rate(t),
        }
    }

    pub fn cumulative(&self, t: f64) -> Result<f64> {
        Ok(match self {
            Intensity::Constant(l) => l * t,
            Intensity::Linear { intercept, slope } => intercept * t + 0.5 * slope * t * t,
            Intensity::PiecewiseConstant { breaks, rates } => {
                let mut acc = 0.0;
                let mut left = 0.0;
                for (i, &r) in rates.iter().enumerate() {
                    let right = breaks.get(i).copied().unwrap_or(f64::INFINITY).min(t);
                    if right > left {
                        acc += r * (right - left);
                    }
                    left = right;
                    if left >= t {
                        break;
                    }
                }
                acc
            }
            Intensity::User { rate, cumulative } => match cumulative {
                Some(m) => m(t),
                None => numeric::integrate(|s| rate(s), 0.0, t, 0.0, 1e-10)?,
            },
        })
    }
}

/// Inter-arrival law of a renewal process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InterArrivalLaw {
    Exponential { rate: f64 },
    Deterministic(f64),
    Gamma { shape: f64, rate: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl InterArrivalLaw {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InterArrivalLaw::Exponential { rate } => positive("rate", rate),
            InterArrivalLaw::Deterministic(d) => positive("interarrival", d),
            InterArrivalLaw::Gamma { shape, rate } => {
                positive("shape", shape)?;
                positive("rate", rate)
            }
            InterArrivalLaw::Uniform { lo, hi } => {
                non_negative("lo", lo)?;
                if hi > lo {
                    Ok(())
                } else {
                    Err(Error::param("hi", format!("need hi > lo, got [{lo}, {hi}]")))
                }
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            InterArrivalLaw::Exponential { rate } => 1.0 / rate,
            InterArrivalLaw::Deterministic(d) => d,
            InterArrivalLaw::Gamma { shape, rate } => shape / rate,
            InterArrivalLaw::Uniform { lo, hi } => 0.5 * (lo + hi),
        }
    }

    /// Laplace transform `E[e^{-s Δ}]`; infinite where it diverges.
    pub fn laplace(&self, s: f64) -> f64 {
        match *self {
            InterArrivalLaw::Exponential { rate } => {
                if rate + s > 0.0 {
                    rate / (rate + s)
                } else {
                    f64::INFINITY
                }
            }
            InterArrivalLaw::Deterministic(d) => (-s * d).exp(),
            InterArrivalLaw::Gamma { shape, rate } => {
                if rate + s > 0.0 {
                    (rate / (rate + s)).powf(shape)
                } else {
                    f64::INFINITY
                }
            }
            InterArrivalLaw::Uniform { lo, hi } => {
                if s == 0.0 {
                    1.0
                } else {
                    ((-s * lo).exp() - (-s * hi).exp()) / (s * (hi - lo))
                }
            }
        }
    }
}

impl Draw for InterArrivalLaw {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            InterArrivalLaw::Exponential { rate } => Exp::new(rate).expect("validated rate").sample(rng),
            InterArrivalLaw::Deterministic(d) => d,
            InterArrivalLaw::Gamma { shape, rate } => Gamma::new(shape, 1.0 / rate).expect("validated").sample(rng),
            InterArrivalLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum CountingProcessSpec {
    HomogeneousPoisson { rate: f64 },
    InhomogeneousPoisson(Intensity),
    Renewal(InterArrivalLaw),
}

impl CountingProcessSpec {
    pub fn homogeneous(rate: f64) -> Result<Self> {
        non_negative("rate", rate)?;
        Ok(CountingProcessSpec::HomogeneousPoisson { rate })
    }

    pub fn inhomogeneous(intensity: Intensity) -> Result<Self> {
        intensity.validate()?;
        Ok(CountingProcessSpec::InhomogeneousPoisson(intensity))
    }

    pub fn renewal(law: InterArrivalLaw) -> Result<Self> {
        law.validate()?;
        Ok(CountingProcessSpec::Renewal(law))
    }

    pub fn is_poisson(&self) -> bool {
        !matches!(self, CountingProcessSpec::Renewal(_))
    }

    /// `λ(t)` for Poisson kinds.
    pub fn intensity(&self, t: f64) -> Result<f64> {
        match self {
            CountingProcessSpec::HomogeneousPoisson { rate } => Ok(*rate),
            CountingProcessSpec::InhomogeneousPoisson(i) => Ok(i.rate(t)),
            CountingProcessSpec::Renewal(_) => Err(Error::NoIntensity("renewal process".into())),
        }
    }

    /// `m(t) = ∫_0^t λ(s) ds`.
    pub fn cumulative_intensity(&self, t: f64) -> Result<f64> {
        if t < 0.0 {
            return Err(Error::param("t", format!("time must be >= 0, got {t}")));
        }
        match self {
            CountingProcessSpec::HomogeneousPoisson { rate } => Ok(rate * t),
            CountingProcessSpec::InhomogeneousPoisson(i) => i.cumulative(t),
            CountingProcessSpec::Renewal(_) => Err(Error::NoIntensity("renewal process".into())),
        }
    }

    /// The inter-arrival law of the renewal structure, if there is one.
    pub fn interarrival_law(&self) -> Option<InterArrivalLaw> {
        match self {
            CountingProcessSpec::HomogeneousPoisson { rate } if *rate > 0.0 => {
                Some(InterArrivalLaw::Exponential { rate: *rate })
            }
            CountingProcessSpec::Renewal(law) => Some(*law),
            _ => None,
        }
    }

    /// Precompute what is needed to sample repeatedly on `[0, horizon]`.
    pub fn prepare(&self, horizon: f64) -> Result<ArrivalSampler> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::param("horizon", format!("must be finite and > 0, got {horizon}")));
        }
        let m_total = match self {
            CountingProcessSpec::Renewal(_) => None,
            CountingProcessSpec::InhomogeneousPoisson(Intensity::User { rate, .. }) => {
                for i in 0..=1000 {
                    let t = horizon * i as f64 / 1000.0;
                    if !(rate(t) >= 0.0) {
                        return Err(Error::param("intensity", format!("negative or NaN intensity at t = {t}")));
                    }
                }
                Some(self.cumulative_intensity(horizon)?)
            }
            _ => Some(self.cumulative_intensity(horizon)?),
        };
        let poisson = match m_total {
            Some(m) if m > 0.0 => Some(Poisson::new(m).map_err(|e| Error::Numerical(e.to_string()))?),
            _ => None,
        };
        Ok(ArrivalSampler {
            spec: self.clone(),
            horizon,
            m_total,
            poisson,
        })
    }

    pub fn sample_arrivals<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R) -> Result<ArrivalSequence> {
        Ok(self.prepare(horizon)?.sample(rng))
    }

    /// One draw of `V_0`, with density `λ(t)/m(T)` on `[0, T]`.
    pub fn sample_v0<R: Rng + ?Sized>(&self, horizon: f64, rng: &mut R) -> Result<f64> {
        self.prepare(horizon)?.sample_v0(rng)
    }
}

/// Empirical raw moments of `N(T)`.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct CountMoments {
    /// `E[N(T)^k]` for `k = 1..=order`.
    pub moments: Vec<f64>,
    pub rel_std_error: Vec<f64>,
    /// Set when some moment is poorly determined by the sample.
    pub warning: Option<String>,
}

/// Relative standard error above which a moment estimate is flagged.
pub const MOMENT_REL_SE_LIMIT: f64 = 0.05;

/// Estimate `E[N(T)^k]` up to `order` from `n_paths` simulated paths. Meant
/// for renewal laws, where no closed form is used; a warning is attached when
/// any relative standard error exceeds [`MOMENT_REL_SE_LIMIT`].
pub fn count_moments(
    spec: &CountingProcessSpec,
    horizon: f64,
    order: u32,
    n_paths: u64,
    exec: &Exec,
    seed: u64,
) -> Result<CountMoments> {
    if order == 0 || n_paths < 2 {
        return Err(Error::param("order", "need order >= 1 and at least two paths"));
    }
    let sampler = spec.prepare(horizon)?;
    let parts = exec.map_chunks(n_paths, seed, 0, |range, rng| {
        let mut acc = vec![Moments::default(); order as usize];
        for _ in range {
            let n = sampler.sample(rng).count() as f64;
            let mut p = 1.0;
            for m in acc.iter_mut() {
                p *= n;
                m.push(p);
            }
        }
        acc
    });
    let mut acc = vec![Moments::default(); order as usize];
    for part in &parts {
        for (a, b) in acc.iter_mut().zip(part) {
            a.merge(b);
        }
    }
    let moments: Vec<f64> = acc.iter().map(Moments::mean).collect();
    let rel_std_error: Vec<f64> = acc
        .iter()
        .map(|m| if m.mean() > 0.0 { m.std_error() / m.mean() } else { 0.0 })
        .collect();
    let warning = rel_std_error
        .iter()
        .position(|&r| !(r <= MOMENT_REL_SE_LIMIT))
        .map(|k| {
            format!(
                "moment of order {} has relative standard error {:.3} > {MOMENT_REL_SE_LIMIT}; increase n_paths",
                k + 1,
                rel_std_error[k]
            )
        });
    Ok(CountMoments {
        moments,
        rel_std_error,
        warning,
    })
}

/// Arrival times `T_1 < T_2 < … <= T` on `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrivalSequence {
    pub times: Vec<f64>,
    pub horizon: f64,
}

impl ArrivalSequence {
    pub fn new(times: Vec<f64>, horizon: f64) -> Result<Self> {
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("times", "arrival times must be strictly increasing"));
        }
        if times.first().is_some_and(|&t| t < 0.0) || times.last().is_some_and(|&t| t > horizon) {
            return Err(Error::param("times", "arrival times must lie in [0, horizon]"));
        }
        Ok(ArrivalSequence { times, horizon })
    }

    pub fn empty(horizon: f64) -> Self {
        ArrivalSequence {
            times: Vec::new(),
            horizon,
        }
    }

    pub fn count(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// `N(t)`.
    pub fn count_until(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t)
    }
}

/// A counting process bound to a horizon, ready for repeated sampling.
#[derive(Debug, Clone)]
pub struct ArrivalSampler {
    spec: CountingProcessSpec,
    horizon: f64,
    m_total: Option<f64>,
    poisson: Option<Poisson<f64>>,
}

impl ArrivalSampler {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `m(T)` for Poisson kinds.
    pub fn mean_count(&self) -> Option<f64> {
        self.m_total
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> ArrivalSequence {
        let t_max = self.horizon;
        let mut times = match &self.spec {
            CountingProcessSpec::Renewal(law) => {
                let mut out = Vec::new();
                let mut t = 0.0;
                loop {
                    t += law.draw(rng);
                    if t > t_max {
                        break;
                    }
                    out.push(t);
                }
                out
            }
            _ => {
                let n = match &self.poisson {
                    Some(p) => p.sample(rng) as usize,
                    None => 0,
                };
                let mut out: Vec<f64> = (0..n).map(|_| self.draw_point(rng)).collect();
                out.sort_by(f64::total_cmp);
                out
            }
        };
        // Floating-point ties: push later copies up by one ulp.
        for i in 1..times.len() {
            if times[i] <= times[i - 1] {
                times[i] = times[i - 1].next_up();
            }
        }
        while times.last().is_some_and(|&t| t > t_max) {
            times.pop();
        }
        ArrivalSequence { times, horizon: t_max }
    }

    /// Point with density `λ(t)/m(T)` on `(0, T]`.
    fn draw_point<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u = 1.0 - rng.random::<f64>();
        match &self.spec {
            CountingProcessSpec::HomogeneousPoisson { .. } => self.horizon * u,
            _ => {
                let target = self.m_total.unwrap_or(0.0) * u;
                numeric::bisect(
                    |t| self.spec.cumulative_intensity(t).unwrap_or(f64::NAN) - target,
                    0.0,
                    self.horizon,
                    1e-12,
                )
                .unwrap_or(self.horizon)
            }
        }
    }

    pub fn sample_v0<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<f64> {
        match self.m_total {
            None => Err(Error::NoIntensity("V0 needs a Poisson counting process".into())),
            Some(m) if m <= 0.0 => Err(Error::param("horizon", "m(T) = 0: V0 has no density")),
            Some(_) => Ok(self.draw_point(rng)),
        }
    }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite and > 0, got {v}")))
    }
}

fn non_negative(name: &'static str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite and >= 0, got {v}")))
    }
}
