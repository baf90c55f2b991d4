//! Scenario assembly from a config and the experiments run on it.

use std::fmt::Write as _;
use std::path::PathBuf;

use serde_json::{json, Value as Json};
use toml::Value;

use shotnoise::arrivals::{count_moments, CountingProcessSpec, InterArrivalLaw, Intensity};
use shotnoise::estimators::{h2_diagnostic, tail_ratio_curve, TailRatioCurve};
use shotnoise::heavytail::{DependentSequenceGen, HeavyTailDist};
use shotnoise::parallel::{derive_seed, stream_rng};
use shotnoise::risk::{
    es_constant, etot_limit, extremal_index_on_grid, ies_constant, kdem_constants, mc_indicators, ruin_constant,
    tail_constant, Indicator, McOptions, RiskEntry, RiskScenario, ThetaMode, DEFAULT_THETA_GRID,
};
use shotnoise::seqmodel::{
    breiman_constant_mc, empirical_spectral_measure, spectral_atoms_closed, CountLaw, EntryLaw, LengthSpec, Marginal,
    MatrixSpec, Norm, SequenceScenario, SpectralOptions, ThresholdSpec,
};
use shotnoise::snp::{write_trace_csv, OmegaLaw, OmegaSign, ShockFunctionSpec, SnpPath, SupremumMode};
use shotnoise::{Error, Exec};

use crate::config::{ConfigError, RawConfig, Resolved, Section};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    SimulatePath,
    TailRatio,
    Ruin,
    Indicators,
    Spectral,
    ExtremalIndex,
    ConvergenceStudy,
    H2Check,
}

impl Experiment {
    pub const ALL: [Experiment; 8] = [
        Experiment::SimulatePath,
        Experiment::TailRatio,
        Experiment::Ruin,
        Experiment::Indicators,
        Experiment::Spectral,
        Experiment::ExtremalIndex,
        Experiment::ConvergenceStudy,
        Experiment::H2Check,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::SimulatePath => "simulate-path",
            Experiment::TailRatio => "tail-ratio",
            Experiment::Ruin => "ruin",
            Experiment::Indicators => "indicators",
            Experiment::Spectral => "spectral",
            Experiment::ExtremalIndex => "extremal-index",
            Experiment::ConvergenceStudy => "convergence-study",
            Experiment::H2Check => "h2-check",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Experiment::ALL.into_iter().find(|e| e.name() == s)
    }
}

/// Paths used for the empirical renewal count-moment check.
const MOMENT_PATHS: u64 = 100_000;

const THETA_MODES: [(&str, ThetaMode); 3] = [
    ("numeric-limit", ThetaMode::NumericLimit),
    ("paper-closed-form", ThetaMode::PaperClosedForm),
    ("embedded-chain", ThetaMode::EmbeddedChain),
];

pub struct OutputSpec {
    pub dir: PathBuf,
    pub report: String,
    pub csv: bool,
}

/// A validated experiment ready to run.
pub struct Plan {
    pub experiment: Experiment,
    pub seed: u64,
    pub resolved: Resolved,
    pub output: OutputSpec,
    /// Resolved `[output]` section; kept out of the hash.
    pub output_table: toml::Table,
    job: Job,
}

enum Job {
    Path {
        sc: RiskScenario,
        n_points: usize,
        supremum: SupremumMode,
    },
    Risk {
        sc: RiskScenario,
        indicators: Vec<Indicator>,
        thresholds: Vec<f64>,
        mc: McOptions,
        moment_order: Option<u32>,
    },
    Convergence {
        sc: RiskScenario,
        indicators: Vec<Indicator>,
        thresholds: Vec<f64>,
        mc: McOptions,
    },
    TailRatio {
        sc: SequenceScenario,
        thresholds: Vec<f64>,
        n: u64,
    },
    Spectral {
        sc: SequenceScenario,
        opts: SpectralOptions,
    },
    Theta {
        sc: RiskScenario,
        modes: Vec<ThetaMode>,
        grid: Vec<f64>,
    },
    H2 {
        marginal: Marginal,
        length: usize,
        pairs: Vec<(usize, usize)>,
        thresholds: Vec<ThresholdSpec>,
        bound: f64,
        n: u64,
    },
}

/// Files produced by an experiment, besides the JSON report.
pub struct Outcome {
    pub results: Json,
    pub csv: Vec<(String, String)>,
}

/// Map a construction error onto the offending key of `sec`, falling back
/// to its `kind` line or header.
fn core_err(sec: &Section<'_>, e: Error) -> ConfigError {
    match e {
        Error::InvalidParameter { name, reason } if sec.contains(name) => sec.err(name, reason),
        other if sec.contains("kind") => sec.err("kind", other.to_string()),
        other => sec.err("", other.to_string()),
    }
}

fn positive(sec: &Section<'_>, key: &str, v: f64) -> Result<f64, ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(sec.err(key, format!("must be finite and > 0, got {v}")))
    }
}

fn marginal(raw: &RawConfig, resolved: &mut Resolved, allow_dependent: bool) -> Result<Marginal, ConfigError> {
    let mut s = raw.section("marginal");
    let kinds: &[&str] = if allow_dependent { &["pareto", "dependent"] } else { &["pareto"] };
    let kind = s.choice("kind", "pareto", kinds)?;
    let alpha = s.req_f64("alpha")?;
    let scale = s.f64("scale", 1.0)?;
    let base = HeavyTailDist::pareto(alpha, scale).map_err(|e| core_err(&s, e))?;
    let m = if kind == "dependent" {
        let phi = s.req_f64("phi")?;
        let sigma_xi = s.f64("sigma_xi", 1.0)?;
        Marginal::Dependent(DependentSequenceGen::new(base, phi, sigma_xi).map_err(|e| core_err(&s, e))?)
    } else {
        Marginal::Iid(base)
    };
    resolved.insert("marginal", s.finish());
    Ok(m)
}

/// Counting process plus, for renewal laws, the order up to which count
/// moments are checked empirically.
fn counting(raw: &RawConfig, resolved: &mut Resolved) -> Result<(CountingProcessSpec, Option<u32>), ConfigError> {
    let mut s = raw.section("counting");
    let kind = s.choice("kind", "poisson", &["poisson", "linear", "piecewise", "renewal"])?;
    let mut moment_order = None;
    let spec = match kind.as_str() {
        "poisson" => {
            let rate = s.f64("rate", 1.0)?;
            CountingProcessSpec::homogeneous(rate)
        }
        "linear" => {
            let intercept = s.req_f64("intercept")?;
            let slope = s.req_f64("slope")?;
            CountingProcessSpec::inhomogeneous(Intensity::Linear { intercept, slope })
        }
        "piecewise" => {
            let breaks = s.f64_list("breaks", &[])?;
            let rates = s.f64_list("rates", &[])?;
            CountingProcessSpec::inhomogeneous(Intensity::PiecewiseConstant { breaks, rates })
        }
        _ => {
            let law = match s
                .choice("interarrival", "exponential", &["exponential", "deterministic", "gamma", "uniform"])?
                .as_str()
            {
                "exponential" => InterArrivalLaw::Exponential { rate: s.f64("rate", 1.0)? },
                "deterministic" => InterArrivalLaw::Deterministic(s.req_f64("step")?),
                "gamma" => InterArrivalLaw::Gamma {
                    shape: s.req_f64("shape")?,
                    rate: s.f64("rate", 1.0)?,
                },
                _ => InterArrivalLaw::Uniform {
                    lo: s.req_f64("lo")?,
                    hi: s.req_f64("hi")?,
                },
            };
            let order = s.u64("moment_order", 4)?;
            if !(1..=16).contains(&order) {
                return Err(s.err("moment_order", format!("must lie in 1..=16, got {order}")));
            }
            moment_order = Some(order as u32);
            CountingProcessSpec::renewal(law)
        }
    }
    .map_err(|e| core_err(&s, e))?;
    resolved.insert("counting", s.finish());
    Ok((spec, moment_order))
}

fn shock(raw: &RawConfig, resolved: &mut Resolved) -> Result<ShockFunctionSpec, ConfigError> {
    let mut s = raw.section("shock");
    let kind = s.choice("kind", "constant", &["constant", "exponential", "indicator"])?;
    let spec = match kind.as_str() {
        "constant" => ShockFunctionSpec::Constant(s.f64("c", 1.0)?),
        "indicator" => ShockFunctionSpec::Indicator,
        _ => {
            let law = match s
                .choice("omega_law", "constant", &["constant", "discrete", "uniform", "normal"])?
                .as_str()
            {
                "constant" => OmegaLaw::Constant(s.req_f64("omega")?),
                "discrete" => OmegaLaw::Discrete {
                    values: s.f64_list("omega_values", &[])?,
                    probs: s.f64_list("omega_probs", &[])?,
                },
                "uniform" => OmegaLaw::Uniform {
                    lo: s.req_f64("omega_lo")?,
                    hi: s.req_f64("omega_hi")?,
                },
                _ => OmegaLaw::Normal {
                    mean: s.req_f64("omega_mean")?,
                    sd: s.req_f64("omega_sd")?,
                },
            };
            ShockFunctionSpec::ExponentialDecay(law)
        }
    };
    spec.validate().map_err(|e| core_err(&s, e))?;
    resolved.insert("shock", s.finish());
    Ok(spec)
}

fn horizon(raw: &RawConfig, resolved: &mut Resolved) -> Result<f64, ConfigError> {
    let mut s = raw.section("scenario");
    let t = s.f64("horizon", 1.0)?;
    positive(&s, "horizon", t)?;
    resolved.insert("scenario", s.finish());
    Ok(t)
}

fn risk_scenario(raw: &RawConfig, resolved: &mut Resolved) -> Result<(RiskScenario, Option<u32>), ConfigError> {
    let Marginal::Iid(dist) = marginal(raw, resolved, false)? else {
        unreachable!("dependent marginals are rejected above")
    };
    let (counting, moment_order) = counting(raw, resolved)?;
    let shock = shock(raw, resolved)?;
    let t = horizon(raw, resolved)?;
    counting.prepare(t).map_err(|e| raw.error("counting", "kind", e.to_string()))?;
    let sc = RiskScenario::new(dist, counting, shock, t).map_err(|e| raw.error("scenario", "horizon", e.to_string()))?;
    Ok((sc, moment_order))
}

fn sequence_scenario(raw: &RawConfig, resolved: &mut Resolved) -> Result<SequenceScenario, ConfigError> {
    let marginal = marginal(raw, resolved, true)?;
    let mut s = raw.section("sequence");
    let length_kind = s.choice("length", "fixed", &["fixed", "poisson", "counting"])?;
    let matrix_kind = s.choice("matrix", "identity", &["identity", "diagonal", "lower-triangular", "dense"])?;
    let length = match length_kind.as_str() {
        "fixed" => {
            let n = s.opt_u64("n")?.ok_or_else(|| s.err("n", "missing required value"))?;
            LengthSpec::Fixed(n as usize)
        }
        "poisson" => {
            let mean = s.req_f64("mean")?;
            positive(&s, "mean", mean)?;
            LengthSpec::Poisson {
                mean,
                at_least_one: s.bool("at_least_one", false)?,
            }
        }
        _ => LengthSpec::Counting {
            spec: counting(raw, resolved)?.0,
            horizon: horizon(raw, resolved)?,
        },
    };
    let matrix = match matrix_kind.as_str() {
        "identity" => MatrixSpec::Identity,
        "diagonal" => MatrixSpec::Diagonal(shock(raw, resolved)?),
        "lower-triangular" => MatrixSpec::LowerTriangularShock(shock(raw, resolved)?),
        _ => {
            let entry = match s.choice("entry", "constant", &["constant", "uniform", "pareto"])?.as_str() {
                "constant" => EntryLaw::Constant(s.f64("entry_value", 1.0)?),
                "uniform" => EntryLaw::Uniform {
                    lo: s.req_f64("entry_lo")?,
                    hi: s.req_f64("entry_hi")?,
                },
                _ => {
                    let alpha = s.req_f64("entry_alpha")?;
                    let scale = s.f64("entry_scale", 1.0)?;
                    EntryLaw::HeavyTail(HeavyTailDist::pareto(alpha, scale).map_err(|e| s.err("entry_alpha", e.to_string()))?)
                }
            };
            MatrixSpec::UserDense(entry)
        }
    };
    let norm = match s.choice("norm", "l1", &["l1", "linf", "lp"])?.as_str() {
        "l1" => Norm::L1,
        "linf" => Norm::Linf,
        _ => {
            let p = s.f64("p", 2.0)?;
            Norm::lp(p).map_err(|e| s.err("p", e.to_string()))?
        }
    };
    let sc = SequenceScenario::new(marginal, length, matrix, norm).map_err(|e| core_err(&s, e))?;
    resolved.insert("sequence", s.finish());
    Ok(sc)
}

fn mc_options(raw: &RawConfig, resolved: &mut Resolved) -> Result<McOptions, ConfigError> {
    let mut s = raw.section("monte_carlo");
    let n_paths = s.u64("n_paths", 100_000)?;
    if n_paths < 2 {
        return Err(s.err("n_paths", "need at least 2 paths"));
    }
    let conditional = s.bool("conditional", false)?;
    let supremum = match s.choice("supremum", "skeleton-terminal", &["skeleton", "skeleton-terminal", "dense"])?.as_str() {
        "skeleton" => SupremumMode::Skeleton,
        "skeleton-terminal" => SupremumMode::SkeletonTerminal,
        _ => {
            let dt = s.f64("dense_dt", 1e-3)?;
            SupremumMode::Dense {
                dt: positive(&s, "dense_dt", dt)?,
            }
        }
    };
    resolved.insert("monte_carlo", s.finish());
    Ok(McOptions {
        n_paths,
        supremum,
        conditional,
    })
}

/// Threshold ladder: raw `values` if given, otherwise quantiles of `dist`.
fn thresholds(
    raw: &RawConfig,
    resolved: &mut Resolved,
    dist: &HeavyTailDist,
    default_quantiles: &[f64],
) -> Result<Vec<f64>, ConfigError> {
    let mut s = raw.section("thresholds");
    let values = s.f64_list("values", &[])?;
    let xs = if values.is_empty() {
        let qs = s.f64_list("quantiles", default_quantiles)?;
        let mut xs = Vec::with_capacity(qs.len());
        for q in qs {
            if !(q > 0.0 && q < 1.0) {
                return Err(s.err("quantiles", format!("quantile levels must lie in (0, 1), got {q}")));
            }
            xs.push(dist.quantile(q).map_err(|e| s.err("quantiles", e.to_string()))?);
        }
        xs
    } else {
        values
    };
    let key = if s.contains("values") { "values" } else { "quantiles" };
    if xs.is_empty() {
        return Err(s.err(key, "need at least one threshold"));
    }
    if xs[0] <= 0.0 || xs.windows(2).any(|w| w[0] >= w[1]) {
        return Err(s.err(key, "thresholds must be positive and strictly ascending"));
    }
    resolved.insert("thresholds", s.finish());
    Ok(xs)
}

fn reference_dist(m: &Marginal) -> &HeavyTailDist {
    match m {
        Marginal::Iid(d) => d,
        Marginal::Dependent(g) => g.marginal(),
    }
}

fn count_mean(law: &CountLaw) -> f64 {
    match law {
        CountLaw::Fixed(n) => *n as f64,
        CountLaw::Poisson(m) => *m,
        CountLaw::PoissonAtLeastOne(m) => m / (1.0 - (-m).exp()),
        CountLaw::Pmf(p) => p.iter().enumerate().map(|(n, q)| n as f64 * q).sum(),
    }
}

/// Build a plan from a parsed config. `forced` is set by the subcommand
/// name; `run` reads `[run] experiment` instead.
pub fn load(raw: &RawConfig, forced: Option<Experiment>, seed_override: Option<u64>) -> Result<Plan, ConfigError> {
    let mut resolved = Resolved::default();
    let mut run = raw.section("run");
    let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
    let experiment = match forced {
        Some(e) => {
            run.set("experiment", Value::String(e.name().into()));
            e
        }
        None => {
            if !run.contains("experiment") {
                return Err(run.err("experiment", "missing required value (or use a subcommand)"));
            }
            Experiment::parse(&run.choice("experiment", "", &names)?).expect("checked by choice")
        }
    };
    let seed = match (seed_override, run.opt_u64("seed")?) {
        (Some(s), _) | (None, Some(s)) => s,
        (None, None) => {
            return Err(run.err("seed", "a seed is mandatory: set [run] seed or pass --seed"));
        }
    };
    run.set("seed", Value::Integer(seed as i64));

    let job = match experiment {
        Experiment::SimulatePath => {
            let sc = risk_scenario(raw, &mut resolved)?.0;
            let mut p = raw.section("path");
            let n_points = p.u64("n_points", 1000)? as usize;
            resolved.insert("path", p.finish());
            let supremum = mc_options(raw, &mut resolved)?.supremum;
            Job::Path { sc, n_points, supremum }
        }
        Experiment::Ruin | Experiment::Indicators | Experiment::ConvergenceStudy => {
            let (sc, moment_order) = risk_scenario(raw, &mut resolved)?;
            let indicators = match experiment {
                Experiment::Ruin => vec![Indicator::Ruin],
                _ => {
                    let default: &[&str] = match (experiment, sc.alpha() > 1.0) {
                        (Experiment::ConvergenceStudy, _) => &["tail-ratio"],
                        (_, true) => &["tail-ratio", "ruin", "es", "ies", "etot"],
                        (_, false) => &["tail-ratio", "ruin", "etot"],
                    };
                    let names = run.string_list("indicators", default)?;
                    let mut out = Vec::new();
                    for n in &names {
                        let i = Indicator::parse(n).ok_or_else(|| {
                            run.err("indicators", format!("unknown indicator {n:?} (expected tail-ratio, ruin, es, ies, etot)"))
                        })?;
                        if matches!(i, Indicator::Es | Indicator::Ies) && sc.alpha() <= 1.0 {
                            return Err(run.err("indicators", format!("{n} needs a finite mean (alpha > 1)")));
                        }
                        out.push(i);
                    }
                    if out.is_empty() {
                        return Err(run.err("indicators", "select at least one indicator"));
                    }
                    out
                }
            };
            let default_q: &[f64] = if experiment == Experiment::ConvergenceStudy {
                &[0.99, 0.999, 0.9999]
            } else {
                &[0.999]
            };
            let thresholds = thresholds(raw, &mut resolved, &sc.marginal, default_q)?;
            let mc = mc_options(raw, &mut resolved)?;
            if experiment == Experiment::ConvergenceStudy {
                Job::Convergence {
                    sc,
                    indicators,
                    thresholds,
                    mc,
                }
            } else {
                Job::Risk {
                    sc,
                    indicators,
                    thresholds,
                    mc,
                    moment_order,
                }
            }
        }
        Experiment::TailRatio => {
            let sc = sequence_scenario(raw, &mut resolved)?;
            let thresholds = thresholds(raw, &mut resolved, reference_dist(&sc.marginal), &[0.99, 0.999])?;
            let n = mc_options(raw, &mut resolved)?.n_paths;
            Job::TailRatio { sc, thresholds, n }
        }
        Experiment::Spectral => {
            let sc = sequence_scenario(raw, &mut resolved)?;
            let mut s = raw.section("spectral");
            let defaults = SpectralOptions::default();
            let threshold = match s.opt_f64("threshold")? {
                Some(x) => ThresholdSpec::Raw(positive(&s, "threshold", x)?),
                None => {
                    let q = s.f64("quantile", 0.999)?;
                    if !(q > 0.0 && q < 1.0) {
                        return Err(s.err("quantile", format!("must lie in (0, 1), got {q}")));
                    }
                    ThresholdSpec::Quantile(q)
                }
            };
            let opts = SpectralOptions {
                threshold,
                min_exceedances: s.u64("min_exceedances", defaults.min_exceedances)?,
                batch: s.u64("batch", defaults.batch)?.max(1),
                max_samples: s.u64("max_samples", defaults.max_samples)?,
            };
            resolved.insert("spectral", s.finish());
            Job::Spectral { sc, opts }
        }
        Experiment::ExtremalIndex => {
            let sc = risk_scenario(raw, &mut resolved)?.0;
            let mut s = raw.section("extremal_index");
            let all: Vec<&str> = THETA_MODES.iter().map(|(n, _)| *n).collect();
            let mut modes = Vec::new();
            for n in s.string_list("modes", &all)? {
                let m = THETA_MODES.iter().find(|(k, _)| *k == n).map(|(_, m)| *m);
                modes.push(m.ok_or_else(|| s.err("modes", format!("unknown mode {n:?} (expected one of: {})", all.join(", "))))?);
            }
            let grid = s.f64_list("grid", &DEFAULT_THETA_GRID)?;
            if grid.len() < 3 || grid[0] <= 0.0 || grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(s.err("grid", "need at least three positive, strictly ascending horizons"));
            }
            resolved.insert("extremal_index", s.finish());
            Job::Theta { sc, modes, grid }
        }
        Experiment::H2Check => {
            let marginal = marginal(raw, &mut resolved, true)?;
            let mut s = raw.section("h2");
            let length = s.u64("length", 10)? as usize;
            if length < 2 {
                return Err(s.err("length", "need sequences of length >= 2"));
            }
            let consecutive: Vec<(usize, usize)> = (0..length - 1).map(|i| (i, i + 1)).collect();
            let pairs = s.pair_list("pairs", &consecutive)?;
            if pairs.iter().any(|&(i, j)| i == j || i >= length || j >= length) {
                return Err(s.err("pairs", format!("pairs need distinct indices below length {length}")));
            }
            let bound = s.f64("bound", 0.05)?;
            resolved.insert("h2", s.finish());
            let mut t = raw.section("thresholds");
            let values = t.f64_list("values", &[])?;
            let thresholds: Vec<ThresholdSpec> = if values.is_empty() {
                let qs = t.f64_list("quantiles", &[0.99, 0.999])?;
                if let Some(q) = qs.iter().find(|q| !(**q > 0.0 && **q < 1.0)) {
                    return Err(t.err("quantiles", format!("quantile levels must lie in (0, 1), got {q}")));
                }
                qs.into_iter().map(ThresholdSpec::Quantile).collect()
            } else {
                values.into_iter().map(ThresholdSpec::Raw).collect()
            };
            resolved.insert("thresholds", t.finish());
            let n = mc_options(raw, &mut resolved)?.n_paths;
            Job::H2 {
                marginal,
                length,
                pairs,
                thresholds,
                bound,
                n,
            }
        }
    };
    resolved.insert("run", run.finish());

    let mut o = raw.section("output");
    let output = OutputSpec {
        dir: PathBuf::from(o.string("dir", "shotnoise-out")?),
        report: o.string("report", "report.json")?,
        csv: o.bool("csv", true)?,
    };
    Ok(Plan {
        experiment,
        seed,
        resolved,
        output,
        output_table: o.finish(),
        job,
    })
}

fn closed_forms(sc: &RiskScenario) -> Json {
    let named: [(&str, shotnoise::Result<f64>); 5] = [
        ("tail", tail_constant(sc)),
        ("ruin", ruin_constant(sc)),
        ("es", es_constant(sc)),
        ("ies", ies_constant(sc)),
        ("etot", etot_limit(sc)),
    ];
    let mut values = serde_json::Map::new();
    let mut notes = serde_json::Map::new();
    for (name, r) in named {
        match r {
            Ok(v) => {
                values.insert(name.into(), json!(v));
            }
            Err(e) => {
                values.insert(name.into(), Json::Null);
                notes.insert(name.into(), json!(e.to_string()));
            }
        }
    }
    values.insert("notes".into(), Json::Object(notes));
    if let ShockFunctionSpec::ExponentialDecay(law) = &sc.shock {
        if matches!(law.sign(), OmegaSign::NonPositive | OmegaSign::Mixed) {
            values.insert("cramer".into(), json!(law.cramer_check(sc.alpha(), sc.horizon)));
        }
    }
    Json::Object(values)
}

fn kdem(sc: &RiskScenario) -> Json {
    match (&sc.counting, &sc.shock) {
        (CountingProcessSpec::HomogeneousPoisson { rate }, ShockFunctionSpec::ExponentialDecay(law)) => {
            kdem_constants(*rate, law, sc.alpha(), sc.horizon, sc.marginal.gamma())
                .map_or(Json::Null, |k| json!(k))
        }
        _ => Json::Null,
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

fn entries_csv(entries: &[RiskEntry]) -> String {
    let mut out = String::from("indicator,threshold,closed_form,mc_estimate,ci_low,ci_high,n_paths,exceedances,flagged\n");
    for e in entries {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            e.indicator.name(),
            e.threshold,
            fmt_opt(e.closed_form),
            e.mc_estimate,
            e.ci_low,
            e.ci_high,
            e.n_paths,
            e.exceedances,
            e.flagged
        );
    }
    out
}

fn csv_string(write: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> String {
    let mut buf = Vec::new();
    write(&mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("CSV writers emit UTF-8")
}

impl Plan {
    /// Run the experiment. Numeric failures come back as core errors.
    pub fn execute(&self, exec: &Exec) -> shotnoise::Result<Outcome> {
        let seed = self.seed;
        match &self.job {
            Job::Path { sc, n_points, supremum } => {
                let sampler = sc.counting.prepare(sc.horizon)?;
                let mut rng = stream_rng(seed, 0);
                let path = SnpPath::sample(&sampler, &sc.marginal, &sc.shock, &mut rng);
                let sup = path.supremum(&sc.shock, *supremum)?;
                let trace = path.trace(&sc.shock, *n_points);
                let check = path.compare_suprema(&sc.shock, sc.horizon / 1e4, 1e-9)?;
                if check.disagree {
                    eprintln!(
                        "warning: dense supremum {} exceeds skeleton+terminal {}",
                        check.dense, check.skeleton_terminal
                    );
                }
                Ok(Outcome {
                    results: json!({
                        "n_arrivals": path.len(),
                        "arrival_times": path.arrivals.times,
                        "shocks": path.shocks,
                        "omegas": path.omegas,
                        "terminal_value": path.evaluate(&sc.shock, sc.horizon),
                        "supremum": { "value": sup.value, "time": sup.time, "warning": sup.warning },
                        "supremum_check": check,
                    }),
                    csv: vec![("path.csv".into(), csv_string(|w| write_trace_csv(w, &trace)))],
                })
            }
            Job::Risk {
                sc,
                indicators,
                thresholds,
                mc,
                moment_order,
            } => {
                let moments = match moment_order {
                    Some(k) => {
                        let m = count_moments(&sc.counting, sc.horizon, *k, MOMENT_PATHS, exec, derive_seed(seed, 7))?;
                        if let Some(w) = &m.warning {
                            eprintln!("warning: renewal counts: {w}");
                        }
                        json!(m)
                    }
                    None => Json::Null,
                };
                let mut entries = Vec::new();
                let mut expectation = None;
                for &x in thresholds {
                    let r = mc_indicators(sc, indicators, x, mc, exec, seed)?;
                    expectation = Some(r.expectation);
                    entries.extend(r.entries);
                }
                Ok(Outcome {
                    results: json!({
                        "expectation": expectation,
                        "closed_form": closed_forms(sc),
                        "kdem": kdem(sc),
                        "count_moments": moments,
                        "entries": entries,
                    }),
                    csv: vec![("indicators.csv".into(), entries_csv(&entries))],
                })
            }
            Job::Convergence {
                sc,
                indicators,
                thresholds,
                mc,
            } => {
                let mut per_x = Vec::new();
                for &x in thresholds {
                    per_x.push(mc_indicators(sc, indicators, x, mc, exec, seed)?.entries);
                }
                let mut curves = serde_json::Map::new();
                let mut csv = Vec::new();
                for (k, ind) in indicators.iter().enumerate() {
                    let column: Vec<&RiskEntry> = per_x.iter().map(|es| &es[k]).collect();
                    let curve = TailRatioCurve {
                        thresholds: thresholds.clone(),
                        ratios: column.iter().map(|e| e.mc_estimate).collect(),
                        ci: column.iter().map(|e| e.ci_half_width).collect(),
                        exceedances: column.iter().map(|e| e.exceedances).collect(),
                        n_samples: mc.n_paths,
                        reference_constant: column[0].closed_form,
                    };
                    csv.push((format!("convergence_{}.csv", ind.name()), csv_string(|w| curve.write_csv(w))));
                    curves.insert(
                        ind.name().into(),
                        json!({ "curve": curve, "deviations": curve.deviations() }),
                    );
                }
                Ok(Outcome {
                    results: json!({ "closed_form": closed_forms(sc), "curves": curves }),
                    csv,
                })
            }
            Job::TailRatio { sc, thresholds, n } => {
                let dist = reference_dist(&sc.marginal);
                let (reference, source) = match (&sc.matrix, sc.length.count_law()) {
                    (MatrixSpec::Identity, Some(law)) => (count_mean(&law), "closed-form"),
                    _ => (breiman_constant_mc(sc, *n, exec, derive_seed(seed, 1))?.mean, "monte-carlo"),
                };
                let sampler = sc.sampler()?;
                let curve = tail_ratio_curve(
                    |rng| sampler.realize(rng).norm_c,
                    dist,
                    thresholds,
                    Some(reference),
                    *n,
                    exec,
                    seed,
                )?;
                Ok(Outcome {
                    results: json!({
                        "reference_source": source,
                        "curve": curve,
                        "deviations": curve.deviations(),
                    }),
                    csv: vec![("tail_ratio.csv".into(), csv_string(|w| curve.write_csv(w)))],
                })
            }
            Job::Spectral { sc, opts } => {
                let est = empirical_spectral_measure(sc, opts, exec, seed)?;
                let closed = match sc.length.count_law() {
                    Some(law) if matches!(sc.matrix, MatrixSpec::Identity) => {
                        let atoms = spectral_atoms_closed(&law, Some(est.atom_weights.len().max(1)))?;
                        json!(atoms.atoms.iter().map(|(_, p)| *p).collect::<Vec<_>>())
                    }
                    _ => Json::Null,
                };
                Ok(Outcome {
                    results: json!({
                        "threshold": est.threshold,
                        "samples": est.samples,
                        "exceedances": est.exceedances,
                        "atom_weights": est.atom_weights,
                        "atom_ci": est.atom_ci,
                        "mean_theta_pow": est.mean_theta_pow,
                        "closed_form_atoms": closed,
                    }),
                    csv: vec![("spectral.csv".into(), csv_string(|w| est.write_csv(w)))],
                })
            }
            Job::Theta { sc, modes, grid } => {
                let mut out = Vec::new();
                let mut first_err = None;
                let mut any_ok = false;
                for &mode in modes {
                    match extremal_index_on_grid(sc, mode, grid) {
                        Ok(theta) => {
                            any_ok = true;
                            out.push(json!(theta));
                        }
                        Err(e) => {
                            out.push(json!({ "mode": mode, "value": null, "note": e.to_string() }));
                            first_err.get_or_insert(e);
                        }
                    }
                }
                match first_err {
                    Some(e) if !any_ok => Err(e),
                    _ => Ok(Outcome {
                        results: json!({ "extremal_index": out }),
                        csv: Vec::new(),
                    }),
                }
            }
            Job::H2 {
                marginal,
                length,
                pairs,
                thresholds,
                bound,
                n,
            } => {
                let report = h2_diagnostic(|rng| marginal.sample(*length, rng), pairs, thresholds, *bound, *n, exec, seed)?;
                let mut csv = String::from("x,max_joint_ratio,worst_i,worst_j,marginal_exceedances\n");
                for k in 0..report.thresholds.len() {
                    let (i, j) = report.worst_pairs[k];
                    let _ = writeln!(
                        csv,
                        "{},{},{i},{j},{}",
                        report.thresholds[k], report.ratios[k], report.marginal_exceedances[k]
                    );
                }
                Ok(Outcome {
                    results: json!(report),
                    csv: vec![("h2.csv".into(), csv)],
                })
            }
        }
    }
}
