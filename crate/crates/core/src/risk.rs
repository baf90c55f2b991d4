//! Asymptotic risk constants of shot noise processes and their Monte Carlo
//! counterparts.
//!
//! Each constant `K` describes a first-order equivalent `I(x) ~ K · F̄(x)`
//! (or `K · F̄^I(x)` for the severity indicators) as `x → ∞`. Expectations
//! over the arrival time of a single shock are computed by adaptive
//! quadrature over `s ∈ [0, T]` against the intensity; expectations over ω
//! use [`OmegaLaw::atoms`].

use serde::{Serialize, Serializer};

use crate::arrivals::{ArrivalSampler, CountingProcessSpec};
use crate::error::{Error, Result};
use crate::estimators::{conditional_exceedance, Aggregate};
use crate::heavytail::HeavyTailDist;
use crate::numeric::{exp_remainder_over_sq, integrate, one_minus_exp_over, score_interval, Moments, Z95};
use crate::parallel::{Accumulator, Exec};
use crate::snp::{ExpectationMethod, Monotonicity, OmegaAtoms, OmegaLaw, OmegaSign, ShockFunctionSpec, SnpPath, SupremumMode};

const QUAD_ABS_TOL: f64 = 1e-15;
const QUAD_REL_TOL: f64 = 1e-10;

/// Shot noise model on a fixed window `[0, T]`.
#[derive(Debug, Clone)]
pub struct RiskScenario {
    pub marginal: HeavyTailDist,
    pub counting: CountingProcessSpec,
    pub shock: ShockFunctionSpec,
    pub horizon: f64,
}

impl RiskScenario {
    pub fn new(
        marginal: HeavyTailDist,
        counting: CountingProcessSpec,
        shock: ShockFunctionSpec,
        horizon: f64,
    ) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::param("horizon", format!("must be finite and > 0, got {horizon}")));
        }
        shock.validate()?;
        counting.prepare(horizon)?;
        Ok(RiskScenario {
            marginal,
            counting,
            shock,
            horizon,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.marginal.alpha()
    }

    /// Same scenario on another window.
    pub fn with_horizon(&self, horizon: f64) -> Result<Self> {
        RiskScenario::new(self.marginal.clone(), self.counting.clone(), self.shock.clone(), horizon)
    }

    pub fn expectation_method(&self) -> ExpectationMethod {
        self.shock.omega_atoms().method
    }

    fn require_poisson(&self) -> Result<()> {
        if self.counting.is_poisson() {
            Ok(())
        } else {
            Err(Error::NotAvailable("closed-form constants need Poisson arrivals".into()))
        }
    }

    /// `∫_0^T λ(s) g(s) ds`.
    fn against_intensity<G: Fn(f64) -> f64>(&self, g: G) -> Result<f64> {
        let counting = &self.counting;
        integrate(
            |s| counting.intensity(s).unwrap_or(0.0) * g(s),
            0.0,
            self.horizon,
            QUAD_ABS_TOL,
            QUAD_REL_TOL,
        )
    }

    fn gamma(&self) -> Result<f64> {
        self.marginal.gamma().ok_or(Error::InfiniteMean { alpha: self.alpha() })
    }
}

fn shock_pow(shock: &ShockFunctionSpec, atoms: &OmegaAtoms, t: f64, s: f64, alpha: f64) -> f64 {
    atoms.expect(|w| shock.value(t, s, w).abs().powf(alpha))
}

/// `m(T) E[h^α(T, V₀)]`: `P(Y(T) > x) ~ K F̄(x)`.
pub fn tail_constant(sc: &RiskScenario) -> Result<f64> {
    sc.require_poisson()?;
    let atoms = sc.shock.omega_atoms();
    let (a, t) = (sc.alpha(), sc.horizon);
    sc.against_intensity(|s| shock_pow(&sc.shock, &atoms, t, s, a))
}

/// Ruin constant: `ψ(x, T) ~ K F̄(x)`.
///
/// Every shock with a monotone profile peaks at its arrival or at `T`, so
/// `K = ∫ λ(s) E[max(h(s,s), h(T,s))^α] ds`. This is `m(T) E[h^α(V₀,V₀)]`
/// for non-increasing profiles and the tail constant for non-decreasing
/// ones. Exponential shocks with a sign-mixed ω law are monotone per shock
/// and covered by the same formula.
pub fn ruin_constant(sc: &RiskScenario) -> Result<f64> {
    sc.require_poisson()?;
    let per_shock_monotone = matches!(sc.shock, ShockFunctionSpec::ExponentialDecay(_));
    if sc.shock.monotonicity() == Monotonicity::Mixed && !per_shock_monotone {
        return Err(Error::NotAvailable("ruin constant needs a monotone shock profile".into()));
    }
    let atoms = sc.shock.omega_atoms();
    let (a, t) = (sc.alpha(), sc.horizon);
    let shock = &sc.shock;
    sc.against_intensity(|s| {
        atoms.expect(|w| {
            let peak = shock.value(s, s, w).abs().max(shock.value(t, s, w).abs());
            peak.powf(a)
        })
    })
}

/// `γ ·` [`tail_constant`]: `ES(x) ~ K F̄^I(x)`.
pub fn es_constant(sc: &RiskScenario) -> Result<f64> {
    let gamma = sc.gamma()?;
    Ok(gamma * tail_constant(sc)?)
}

/// `∫_0^T m(t) E[h^α(t, V₀(t))] dt`, evaluated as
/// `∫_0^T λ(s) E[∫_s^T h^α(t, s) dt] ds`.
pub fn ies_integral(sc: &RiskScenario) -> Result<f64> {
    sc.require_poisson()?;
    let atoms = sc.shock.omega_atoms();
    let (a, t) = (sc.alpha(), sc.horizon);
    let shock = &sc.shock;
    if let ShockFunctionSpec::UserDeterministic { .. } = shock {
        let inner = |s: f64| shock.time_integral_pow(s, t, 0.0, a);
        // Propagate inner quadrature failures instead of silently using 0.
        inner(0.0)?;
        return sc.against_intensity(|s| inner(s).unwrap_or(f64::NAN));
    }
    sc.against_intensity(|s| atoms.expect(|w| shock.time_integral_pow(s, t, w, a).expect("closed form")))
}

/// `γ ·` [`ies_integral`]: `IES(x) ~ K F̄^I(x)`.
pub fn ies_constant(sc: &RiskScenario) -> Result<f64> {
    let gamma = sc.gamma()?;
    Ok(gamma * ies_integral(sc)?)
}

/// `lim ETOT(x)` = [`ies_integral`] / [`ruin_constant`].
pub fn etot_limit(sc: &RiskScenario) -> Result<f64> {
    let ruin = ruin_constant(sc)?;
    if !(ruin > 0.0) {
        return Err(Error::Numerical("ruin constant is 0; ETOT limit undefined".into()));
    }
    Ok(ies_integral(sc)? / ruin)
}

/// Explicit constants for exponential shocks under homogeneous Poisson
/// arrivals, evaluated by plugging ω atoms into one-line formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KdemConstants {
    pub tail: f64,
    pub ruin: f64,
    pub ies_integral: f64,
    pub etot: f64,
    /// `None` when the marginal has infinite mean.
    pub es: Option<f64>,
    pub ies: Option<f64>,
}

pub fn kdem_constants(rate: f64, omega: &OmegaLaw, alpha: f64, horizon: f64, gamma: Option<f64>) -> Result<KdemConstants> {
    omega.validate()?;
    let atoms = omega.atoms();
    let t = horizon;
    let tail = rate * t * atoms.expect(|w| one_minus_exp_over(alpha * w * t));
    let ruin = rate * atoms.expect(|w| if w > 0.0 { t } else { t * one_minus_exp_over(alpha * w * t) });
    let ies_integral = rate * t * t * atoms.expect(|w| exp_remainder_over_sq(alpha * w * t));
    Ok(KdemConstants {
        tail,
        ruin,
        ies_integral,
        etot: ies_integral / ruin,
        es: gamma.map(|g| g * tail),
        ies: gamma.map(|g| g * ies_integral),
    })
}

/// Which extremal index formula to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThetaMode {
    /// `1 / lim_{T→∞} ETOT`, extrapolated from a horizon grid.
    NumericLimit,
    /// Closed-form expressions in the ω law.
    PaperClosedForm,
    /// Extremal index of the chain sampled at jump instants.
    EmbeddedChain,
}

fn ser_extended<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str(if *v > 0.0 { "+inf" } else { "-inf" })
    } else {
        s.serialize_f64(*v)
    }
}

/// θ in `[0, ∞]`; `+∞` is serialized as the string `"+inf"`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExtremalIndex {
    pub mode: ThetaMode,
    #[serde(serialize_with = "ser_extended")]
    pub value: f64,
    /// `(T, 1/ETOT(T))` for the numeric limit.
    pub trace: Vec<(f64, f64)>,
}

pub const DEFAULT_THETA_GRID: [f64; 4] = [10.0, 20.0, 40.0, 80.0];

pub fn extremal_index(sc: &RiskScenario, mode: ThetaMode) -> Result<ExtremalIndex> {
    extremal_index_on_grid(sc, mode, &DEFAULT_THETA_GRID)
}

fn strictly_positive(law: &OmegaLaw) -> bool {
    match law {
        OmegaLaw::Constant(w) => *w > 0.0,
        OmegaLaw::Discrete { values, probs } => values.iter().zip(probs).all(|(&v, &p)| p == 0.0 || v > 0.0),
        OmegaLaw::Uniform { lo, .. } => *lo > 0.0,
        OmegaLaw::Normal { .. } => false,
    }
}

/// As [`extremal_index`] with an explicit doubling horizon grid for the
/// numeric limit (at least three points).
pub fn extremal_index_on_grid(sc: &RiskScenario, mode: ThetaMode, grid: &[f64]) -> Result<ExtremalIndex> {
    let done = |value| Ok(ExtremalIndex { mode, value, trace: Vec::new() });
    let alpha = sc.alpha();
    match mode {
        ThetaMode::PaperClosedForm => match &sc.shock {
            ShockFunctionSpec::Indicator => done(f64::INFINITY),
            ShockFunctionSpec::Constant(_) => done(0.0),
            ShockFunctionSpec::ExponentialDecay(law) => {
                if law.sign() == OmegaSign::Zero {
                    done(0.0)
                } else if strictly_positive(law) {
                    done(alpha * law.second_moment() / law.mean())
                } else if law.is_constant() && law.mean() < 0.0 {
                    done(alpha * -law.mean())
                } else {
                    Err(Error::NotAvailable(
                        "no closed-form extremal index for this ω law".into(),
                    ))
                }
            }
            ShockFunctionSpec::UserDeterministic { .. } => {
                Err(Error::NotAvailable("no closed-form extremal index for user shocks".into()))
            }
        },
        ThetaMode::EmbeddedChain => {
            let law = match &sc.counting {
                CountingProcessSpec::HomogeneousPoisson { rate } => {
                    crate::arrivals::InterArrivalLaw::Exponential { rate: *rate }
                }
                CountingProcessSpec::Renewal(law) => *law,
                CountingProcessSpec::InhomogeneousPoisson(_) => {
                    return Err(Error::NotAvailable("embedded chain needs i.i.d. inter-arrival times".into()));
                }
            };
            match &sc.shock {
                ShockFunctionSpec::Indicator => done(1.0),
                ShockFunctionSpec::Constant(_) => done(0.0),
                ShockFunctionSpec::ExponentialDecay(w) if matches!(w.sign(), OmegaSign::Zero | OmegaSign::NonNegative) => {
                    let atoms = w.atoms();
                    done(1.0 - atoms.expect(|om| law.laplace(alpha * om)))
                }
                _ => Err(Error::NotAvailable(
                    "embedded-chain extremal index needs ω >= 0 exponential shocks".into(),
                )),
            }
        }
        ThetaMode::NumericLimit => {
            if let ShockFunctionSpec::Indicator = sc.shock {
                return done(f64::INFINITY);
            }
            if grid.len() < 3 || grid.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(Error::param("grid", "need at least three ascending horizons"));
            }
            let mut trace = Vec::new();
            for &t in grid {
                let etot = etot_limit(&sc.with_horizon(t)?)?;
                trace.push((t, if etot > 0.0 { 1.0 / etot } else { f64::INFINITY }));
            }
            if trace.iter().all(|p| p.1.is_infinite()) {
                return Ok(ExtremalIndex { mode, value: f64::INFINITY, trace });
            }
            // θ(T) = θ + c/T + O(T^-2): Richardson across doubling steps.
            let extrapolated: Vec<f64> = trace
                .windows(2)
                .map(|w| {
                    let r = w[1].0 / w[0].0;
                    ((r * w[1].1 - w[0].1) / (r - 1.0)).max(0.0)
                })
                .collect();
            let n = extrapolated.len();
            let (prev, last) = (extrapolated[n - 2], extrapolated[n - 1]);
            if !last.is_finite() || (last - prev).abs() > 0.01 * last.abs() + 1e-6 {
                let shown: Vec<String> = trace.iter().map(|(t, th)| format!("T={t}: {th}")).collect();
                return Err(Error::NoConvergence(format!(
                    "extremal index extrapolation did not settle ({prev} vs {last}); trace: {}",
                    shown.join(", ")
                )));
            }
            Ok(ExtremalIndex { mode, value: last, trace })
        }
    }
}

/// Risk indicator estimated by Monte Carlo.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Indicator {
    TailRatio,
    Ruin,
    Es,
    Ies,
    Etot,
}

impl Indicator {
    pub const ALL: [Indicator; 5] = [Indicator::TailRatio, Indicator::Ruin, Indicator::Es, Indicator::Ies, Indicator::Etot];

    pub fn name(&self) -> &'static str {
        match self {
            Indicator::TailRatio => "tail-ratio",
            Indicator::Ruin => "ruin",
            Indicator::Es => "es",
            Indicator::Ies => "ies",
            Indicator::Etot => "etot",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Indicator::ALL.into_iter().find(|i| i.name() == s)
    }

    /// Closed-form constant matching the Monte Carlo ratio.
    pub fn closed_form(&self, sc: &RiskScenario) -> Result<f64> {
        match self {
            Indicator::TailRatio => tail_constant(sc),
            Indicator::Ruin => ruin_constant(sc),
            Indicator::Es => es_constant(sc),
            Indicator::Ies => ies_constant(sc),
            Indicator::Etot => etot_limit(sc),
        }
    }
}

/// Monte Carlo settings shared by all indicators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McOptions {
    pub n_paths: u64,
    pub supremum: SupremumMode,
    /// Use the conditional (largest-shock) estimator for the tail ratio, and
    /// for ruin when shock profiles are non-decreasing.
    pub conditional: bool,
}

impl Default for McOptions {
    fn default() -> Self {
        McOptions {
            n_paths: 100_000,
            supremum: SupremumMode::SkeletonTerminal,
            conditional: false,
        }
    }
}

/// One indicator of a [`RiskReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskEntry {
    pub indicator: Indicator,
    pub threshold: f64,
    /// `None` when no closed form applies; see `closed_form_note`.
    pub closed_form: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub closed_form_note: Option<String>,
    pub mc_estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_half_width: f64,
    pub n_paths: u64,
    /// Paths contributing a nonzero value.
    pub exceedances: u64,
    /// Set when no path exceeded the threshold (the CI is then very wide).
    pub flagged: bool,
    pub estimator: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RiskReport {
    pub expectation: ExpectationMethod,
    pub entries: Vec<RiskEntry>,
}

#[derive(Default)]
struct PathAcc {
    n: u64,
    tail_hits: u64,
    ruin_hits: u64,
    tail_cond: Moments,
    ruin_cond: Moments,
    es: Moments,
    ies: Moments,
    etot: Moments,
    warnings: u64,
}

impl Accumulator for PathAcc {
    fn merge(&mut self, o: Self) {
        self.n += o.n;
        self.tail_hits += o.tail_hits;
        self.ruin_hits += o.ruin_hits;
        self.tail_cond.merge(&o.tail_cond);
        self.ruin_cond.merge(&o.ruin_cond);
        self.es.merge(&o.es);
        self.ies.merge(&o.ies);
        self.etot.merge(&o.etot);
        self.warnings += o.warnings;
    }
}

fn nonneg_weights(shock: &ShockFunctionSpec) -> bool {
    match shock {
        ShockFunctionSpec::Constant(_) | ShockFunctionSpec::ExponentialDecay(_) | ShockFunctionSpec::Indicator => true,
        ShockFunctionSpec::UserDeterministic { .. } => false,
    }
}

/// Per-path weights `h(T, T_i)` of the terminal value.
fn terminal_weights(path: &SnpPath, shock: &ShockFunctionSpec) -> Vec<f64> {
    let t = path.horizon();
    let omegas = path.omegas.as_deref();
    path.arrivals
        .times
        .iter()
        .enumerate()
        .map(|(i, &s)| shock.value(t, s, omegas.map_or(0.0, |w| w[i])))
        .collect()
}

/// Monte Carlo estimates of several indicators at one threshold from a
/// common set of paths. Ratios are normalised by `F̄(x)` (tail, ruin),
/// `F̄^I(x)` (ES, IES) or reported raw (ETOT, conditional on ruin).
pub fn mc_indicators(
    sc: &RiskScenario,
    indicators: &[Indicator],
    x: f64,
    opts: &McOptions,
    exec: &Exec,
    seed: u64,
) -> Result<RiskReport> {
    if !(x > 0.0 && x.is_finite()) {
        return Err(Error::param("x", format!("threshold must be finite and > 0, got {x}")));
    }
    if opts.n_paths == 0 {
        return Err(Error::param("n_paths", "need at least one path"));
    }
    let needs_severity = indicators.iter().any(|i| matches!(i, Indicator::Es | Indicator::Ies));
    let integrated = if needs_severity {
        Some(sc.marginal.integrated_tail_survival(x)?)
    } else {
        None
    };
    let want = |i: Indicator| indicators.contains(&i);
    let need_sup = want(Indicator::Ruin) || want(Indicator::Etot);
    let need_exc = want(Indicator::Ies) || want(Indicator::Etot);
    let conditional = opts.conditional && nonneg_weights(&sc.shock);
    let ruin_is_terminal = matches!(sc.shock.monotonicity(), Monotonicity::Constant | Monotonicity::NonDecreasing)
        && !matches!(sc.shock, ShockFunctionSpec::Indicator);
    let sampler: ArrivalSampler = sc.counting.prepare(sc.horizon)?;
    let shock = &sc.shock;
    let marginal = &sc.marginal;

    let acc: PathAcc = exec.run(opts.n_paths, seed, |rng, acc: &mut PathAcc| {
        let path = SnpPath::sample(&sampler, marginal, shock, rng);
        acc.n += 1;
        let y_t = path.evaluate(shock, sc.horizon);
        if y_t > x {
            acc.tail_hits += 1;
        }
        if conditional {
            let w = terminal_weights(&path, shock);
            let p = conditional_exceedance(Aggregate::Sum, &w, &path.shocks, marginal, x);
            acc.tail_cond.push(p);
            if ruin_is_terminal {
                acc.ruin_cond.push(p);
            }
        }
        if let Some(_fi) = integrated {
            acc.es.push((y_t - x).max(0.0));
        }
        let ruined = if need_sup {
            let sup = path.supremum(shock, opts.supremum).expect("validated supremum mode");
            if sup.warning.is_some() {
                acc.warnings += 1;
            }
            sup.value > x
        } else {
            false
        };
        if ruined {
            acc.ruin_hits += 1;
        }
        if need_exc {
            let e = path.exceedance(shock, x);
            acc.ies.push(e.integrated_excess);
            if ruined || e.time_above > 0.0 {
                acc.etot.push(e.time_above);
            }
        }
    });

    let n = acc.n;
    let sf = marginal.survival(x);
    let mut entries = Vec::new();
    for &ind in indicators {
        let (closed_form, closed_form_note) = match ind.closed_form(sc) {
            Ok(v) => (Some(v), None),
            Err(e) => (None, Some(e.to_string())),
        };
        let base = RiskEntry {
            indicator: ind,
            threshold: x,
            closed_form,
            closed_form_note,
            mc_estimate: 0.0,
            ci_low: 0.0,
            ci_high: 0.0,
            ci_half_width: 0.0,
            n_paths: n,
            exceedances: 0,
            flagged: false,
            estimator: "plain",
        };
        let entry = match ind {
            Indicator::TailRatio | Indicator::Ruin => {
                let cond = match ind {
                    Indicator::TailRatio if conditional => Some(&acc.tail_cond),
                    Indicator::Ruin if conditional && ruin_is_terminal => Some(&acc.ruin_cond),
                    _ => None,
                };
                let hits = if ind == Indicator::TailRatio { acc.tail_hits } else { acc.ruin_hits };
                match cond {
                    Some(m) if n >= 2 => {
                        let est = m.mean() / sf;
                        let hw = Z95 * m.std_error() / sf;
                        RiskEntry {
                            mc_estimate: est,
                            ci_low: (est - hw).max(0.0),
                            ci_high: est + hw,
                            ci_half_width: hw,
                            exceedances: hits,
                            estimator: "conditional",
                            ..base
                        }
                    }
                    _ => ratio_entry(base, hits, n, sf),
                }
            }
            Indicator::Es | Indicator::Ies => {
                let fi = integrated.expect("computed when severity requested");
                let m = if ind == Indicator::Es { &acc.es } else { &acc.ies };
                let hits = if ind == Indicator::Es { acc.tail_hits } else { acc.etot.n };
                mean_entry(base, m, fi, hits)
            }
            Indicator::Etot => mean_entry(base, &acc.etot, 1.0, acc.etot.n),
        };
        entries.push(entry);
    }
    Ok(RiskReport {
        expectation: sc.expectation_method(),
        entries,
    })
}

fn ratio_entry(base: RiskEntry, hits: u64, n: u64, sf: f64) -> RiskEntry {
    let est = hits as f64 / n as f64 / sf;
    let (lo, hi) = if n < 2 {
        (0.0, 1.0)
    } else {
        score_interval(hits, n, Z95)
    };
    RiskEntry {
        mc_estimate: est,
        ci_low: lo / sf,
        ci_high: hi / sf,
        ci_half_width: 0.5 * (hi - lo) / sf,
        exceedances: hits,
        flagged: hits == 0,
        ..base
    }
}

fn mean_entry(base: RiskEntry, m: &Moments, scale: f64, hits: u64) -> RiskEntry {
    let est = if m.n == 0 { 0.0 } else { m.mean() / scale };
    let hw = if m.n < 2 { f64::INFINITY } else { Z95 * m.std_error() / scale };
    RiskEntry {
        mc_estimate: est,
        ci_low: (est - hw).max(0.0),
        ci_high: est + hw,
        ci_half_width: hw,
        exceedances: hits,
        flagged: hits == 0,
        ..base
    }
}

/// Single-indicator convenience wrapper around [`mc_indicators`].
pub fn mc_indicator(sc: &RiskScenario, indicator: Indicator, x: f64, opts: &McOptions, exec: &Exec, seed: u64) -> Result<RiskEntry> {
    Ok(mc_indicators(sc, &[indicator], x, opts, exec, seed)?
        .entries
        .remove(0))
}
