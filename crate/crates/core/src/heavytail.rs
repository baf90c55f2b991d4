//! Regularly varying marginal laws and a serially dependent, pairwise
//! asymptotically independent sequence generator.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::numeric;

/// Anything that can produce one real draw from an RNG.
pub trait Draw {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64;
}

/// A degenerate law at a fixed value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fixed(pub f64);

impl Draw for Fixed {
    fn draw<R: Rng + ?Sized>(&self, _rng: &mut R) -> f64 {
        self.0
    }
}

pub type SurvivalFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Clone)]
enum Kind {
    Pareto,
    User(SurvivalFn),
}

/// Regularly varying law of the shocks `X_i`.
///
/// The Pareto law `P(X > x) = (x_m / x)^α`, `x >= x_m`, is built in. Any
/// other law is supplied as a survival function together with its declared
/// tail index and mean; those declarations are trusted (see
/// [`HeavyTailDist::regular_variation_ratio`] for a spot check).
#[derive(Clone)]
pub struct HeavyTailDist {
    kind: Kind,
    alpha: f64,
    scale: f64,
    gamma: Option<f64>,
}

impl fmt::Debug for HeavyTailDist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            Kind::Pareto => "Pareto",
            Kind::User(_) => "UserSurvival",
        };
        f.debug_struct("HeavyTailDist")
            .field("kind", &kind)
            .field("alpha", &self.alpha)
            .field("scale", &self.scale)
            .field("gamma", &self.gamma)
            .finish()
    }
}

impl HeavyTailDist {
    pub fn pareto(alpha: f64, scale: f64) -> Result<Self> {
        check_positive("alpha", alpha)?;
        check_positive("scale", scale)?;
        let gamma = (alpha > 1.0).then(|| alpha * scale / (alpha - 1.0));
        Ok(HeavyTailDist {
            kind: Kind::Pareto,
            alpha,
            scale,
            gamma,
        })
    }

    /// User-defined law with support `[lower, ∞)` and survival function
    /// `survival` (equal to 1 at `lower`). `gamma` must be given iff `alpha > 1`.
    pub fn user_defined(survival: SurvivalFn, alpha: f64, lower: f64, gamma: Option<f64>) -> Result<Self> {
        check_positive("alpha", alpha)?;
        if !(lower >= 0.0 && lower.is_finite()) {
            return Err(Error::param("lower", format!("support start must be >= 0, got {lower}")));
        }
        match gamma {
            Some(g) if !(g.is_finite() && g > 0.0) => {
                return Err(Error::param("gamma", format!("mean must be finite and > 0, got {g}")))
            }
            Some(_) if alpha <= 1.0 => {
                return Err(Error::param("gamma", "a finite mean requires alpha > 1"));
            }
            _ => {}
        }
        Ok(HeavyTailDist {
            kind: Kind::User(survival),
            alpha,
            scale: lower,
            gamma,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Pareto `x_m`, or the support start of a user law.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    /// Mean; `None` when infinite.
    pub fn gamma(&self) -> Option<f64> {
        self.gamma
    }

    pub fn is_pareto(&self) -> bool {
        matches!(self.kind, Kind::Pareto)
    }

    /// `P(X > x)`.
    pub fn survival(&self, x: f64) -> f64 {
        match &self.kind {
            Kind::Pareto => {
                if x <= self.scale {
                    1.0
                } else {
                    (self.scale / x).powf(self.alpha)
                }
            }
            Kind::User(s) => {
                if x <= self.scale {
                    1.0
                } else {
                    s(x).clamp(0.0, 1.0)
                }
            }
        }
    }

    /// Smallest `x` with `P(X > x) <= 1 - p`.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::param("p", format!("quantile level must lie in [0, 1), got {p}")));
        }
        let target = 1.0 - p;
        match &self.kind {
            Kind::Pareto => Ok(self.scale * target.powf(-1.0 / self.alpha)),
            Kind::User(_) => self.invert_survival(target),
        }
    }

    fn invert_survival(&self, target: f64) -> Result<f64> {
        if target >= 1.0 {
            return Ok(self.scale);
        }
        let mut hi = self.scale.max(1.0) * 2.0;
        while self.survival(hi) > target {
            hi *= 2.0;
            if !hi.is_finite() {
                return Err(Error::Numerical(format!("survival never drops below {target:e}")));
            }
        }
        let lo = self.scale;
        numeric::bisect(|x| self.survival(x) - target, lo, hi, 1e-12 * hi)
    }

    /// `(1/γ) ∫_y^∞ P(X > x) dx`.
    pub fn integrated_tail_survival(&self, y: f64) -> Result<f64> {
        let gamma = self.gamma.ok_or(Error::InfiniteMean { alpha: self.alpha })?;
        let y = y.max(0.0);
        match &self.kind {
            Kind::Pareto => {
                let a = self.alpha;
                let xm = self.scale;
                if y >= xm {
                    Ok((xm / y).powf(a - 1.0) / a)
                } else {
                    Ok(((xm - y) + xm / (a - 1.0)) / gamma)
                }
            }
            Kind::User(_) => {
                // Below the support the survival is 1; integrate the rest
                // piecewise on doubling intervals, then close with the
                // regular-variation remainder `x F̄(x) / (α - 1)`.
                let mut total = (self.scale - y).max(0.0);
                let mut lo = y.max(self.scale);
                let mut hi = if lo > 0.0 { 2.0 * lo } else { 1.0 };
                loop {
                    total += numeric::integrate(|x| self.survival(x), lo, hi, 0.0, 1e-11)?;
                    let remainder = hi * self.survival(hi) / (self.alpha - 1.0);
                    if remainder < 1e-10 * total {
                        total += remainder;
                        break;
                    }
                    lo = hi;
                    hi *= 2.0;
                    if !hi.is_finite() {
                        return Err(Error::Numerical("integrated tail did not converge".into()));
                    }
                }
                Ok(total / gamma)
            }
        }
    }

    /// `P(X > t x) / P(X > x)`; tends to `t^{-α}` under regular variation.
    pub fn regular_variation_ratio(&self, x: f64, t: f64) -> f64 {
        self.survival(t * x) / self.survival(x)
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        (0..n).map(|_| self.draw(rng)).collect()
    }
}

impl Draw for HeavyTailDist {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // 1 - U lies in (0, 1], so the power never blows up.
        let u = 1.0 - rng.random::<f64>();
        match &self.kind {
            Kind::Pareto => self.scale * u.powf(-1.0 / self.alpha),
            Kind::User(_) => self
                .invert_survival(u)
                .expect("survival function of a user law must tend to zero"),
        }
    }
}

fn check_positive(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::param(name, format!("must be finite and > 0, got {v}")))
    }
}

/// Stochastic-volatility style sequence `X_t = σ_t ε_t`.
///
/// `ε_t` are i.i.d. draws from the heavy-tailed marginal and
/// `log σ_t = φ log σ_{t-1} + σ_ξ η_t` with standard normal `η_t`, started
/// from its stationary law so that the `X_t` are identically distributed.
/// The volatility is light tailed, which keeps pairs of coordinates
/// asymptotically independent while making the sequence serially dependent.
#[derive(Debug, Clone)]
pub struct DependentSequenceGen {
    marginal: HeavyTailDist,
    phi: f64,
    sigma_xi: f64,
}

impl DependentSequenceGen {
    pub fn new(marginal: HeavyTailDist, phi: f64, sigma_xi: f64) -> Result<Self> {
        if !(phi > 0.0 && phi < 1.0) {
            return Err(Error::param("volatility_persistence", format!("phi must lie in (0, 1), got {phi}")));
        }
        if !(sigma_xi >= 0.0 && sigma_xi.is_finite()) {
            return Err(Error::param("volatility_noise_sd", format!("must be >= 0, got {sigma_xi}")));
        }
        Ok(DependentSequenceGen {
            marginal,
            phi,
            sigma_xi,
        })
    }

    pub fn marginal(&self) -> &HeavyTailDist {
        &self.marginal
    }

    pub fn alpha(&self) -> f64 {
        self.marginal.alpha()
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        let stationary_sd = self.sigma_xi / (1.0 - self.phi * self.phi).sqrt();
        let mut log_vol = if self.sigma_xi > 0.0 {
            stationary_sd * Distribution::<f64>::sample(&StandardNormal, rng)
        } else {
            0.0
        };
        let mut out = Vec::with_capacity(n);
        for t in 0..n {
            if t > 0 && self.sigma_xi > 0.0 {
                let eta: f64 = StandardNormal.sample(rng);
                log_vol = self.phi * log_vol + self.sigma_xi * eta;
            }
            out.push(log_vol.exp() * self.marginal.draw(rng));
        }
        out
    }
}
