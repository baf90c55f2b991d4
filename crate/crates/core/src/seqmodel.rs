//! Random-length sequences `C(N) = A(N) X(N)`: norms, random matrices,
//! generalized Breiman constants and spectral atoms.

use std::io::{self, Write};

use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::arrivals::{ArrivalSampler, ArrivalSequence, CountingProcessSpec};
use crate::error::{Error, Result};
use crate::heavytail::{DependentSequenceGen, Draw, HeavyTailDist};
use crate::numeric::{poisson_tail, score_interval, CompensatedSum, Moments, Z95};
use crate::parallel::{derive_seed, Accumulator, Exec, McRng};
use crate::snp::ShockFunctionSpec;

/// Sequence norm sandwiched between ℓ^∞ and ℓ^1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Norm {
    L1,
    Linf,
    Lp(f64),
}

impl Norm {
    pub fn lp(p: f64) -> Result<Self> {
        if p > 1.0 && p.is_finite() {
            Ok(Norm::Lp(p))
        } else {
            Err(Error::param("p", format!("Lp norm needs p in (1, ∞), got {p}")))
        }
    }

    pub fn eval(&self, u: &[f64]) -> f64 {
        match *self {
            Norm::L1 => u.iter().map(|v| v.abs()).sum(),
            Norm::Linf => u.iter().fold(0.0, |m, v| m.max(v.abs())),
            Norm::Lp(p) => {
                // Scale by the max entry to avoid overflow of |u_i|^p.
                let m = Norm::Linf.eval(u);
                if m == 0.0 {
                    return 0.0;
                }
                m * u.iter().map(|v| (v.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p)
            }
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::param("rows", "ragged matrix"));
        }
        Ok(DenseMatrix {
            rows: rows.len(),
            cols,
            data: rows.concat(),
        })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.rows)
            .map(|i| (0..self.cols).map(|j| self.get(i, j) * v[j]).sum())
            .collect()
    }
}

/// Induced operator norm; `exact == false` marks an upper bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InducedNorm {
    pub value: f64,
    pub exact: bool,
}

/// Operator norm induced by `norm`: max column sum for ℓ^1, max row sum for
/// ℓ^∞, and the interpolation bound `‖A‖_1^{1/p} ‖A‖_∞^{1-1/p}` for ℓ^p.
pub fn induced_matrix_norm(norm: Norm, a: &DenseMatrix) -> Result<InducedNorm> {
    if a.rows != a.cols {
        return Err(Error::param("matrix", format!("must be square, got {}x{}", a.rows, a.cols)));
    }
    if a.rows == 0 {
        return Ok(InducedNorm { value: 0.0, exact: true });
    }
    let col_max = (0..a.cols)
        .map(|j| (0..a.rows).map(|i| a.get(i, j).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let row_max = (0..a.rows)
        .map(|i| (0..a.cols).map(|j| a.get(i, j).abs()).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(match norm {
        Norm::L1 => InducedNorm { value: col_max, exact: true },
        Norm::Linf => InducedNorm { value: row_max, exact: true },
        Norm::Lp(p) => InducedNorm {
            value: col_max.powf(1.0 / p) * row_max.powf(1.0 - 1.0 / p),
            exact: false,
        },
    })
}

/// Law of i.i.d. entries of a user-supplied dense matrix.
#[derive(Debug, Clone)]
pub enum EntryLaw {
    Constant(f64),
    Uniform { lo: f64, hi: f64 },
    HeavyTail(HeavyTailDist),
}

impl Draw for EntryLaw {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            EntryLaw::Constant(c) => *c,
            EntryLaw::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            EntryLaw::HeavyTail(d) => d.draw(rng),
        }
    }
}

#[derive(Debug, Clone)]
pub enum MatrixSpec {
    Identity,
    /// `a_jj = h_j(T, T_j)`.
    Diagonal(ShockFunctionSpec),
    /// `a_kj = h_j(T_k, T_j)` for `j <= k`.
    LowerTriangularShock(ShockFunctionSpec),
    UserDense(EntryLaw),
}

impl MatrixSpec {
    fn shock(&self) -> Option<&ShockFunctionSpec> {
        match self {
            MatrixSpec::Diagonal(s) | MatrixSpec::LowerTriangularShock(s) => Some(s),
            _ => None,
        }
    }
}

/// How the random length `N` is produced.
#[derive(Debug, Clone)]
pub enum LengthSpec {
    Fixed(usize),
    Poisson { mean: f64, at_least_one: bool },
    /// `N = N(T)` from a counting process; provides arrival times.
    Counting { spec: CountingProcessSpec, horizon: f64 },
}

/// Law of `N` for closed-form spectral atoms.
#[derive(Debug, Clone, PartialEq)]
pub enum CountLaw {
    Fixed(usize),
    Poisson(f64),
    /// Poisson conditioned on `N >= 1`.
    PoissonAtLeastOne(f64),
    /// `pmf[n] = P(N = n)`.
    Pmf(Vec<f64>),
}

impl LengthSpec {
    pub fn count_law(&self) -> Option<CountLaw> {
        match self {
            LengthSpec::Fixed(n) => Some(CountLaw::Fixed(*n)),
            LengthSpec::Poisson { mean, at_least_one: false } => Some(CountLaw::Poisson(*mean)),
            LengthSpec::Poisson { mean, at_least_one: true } => Some(CountLaw::PoissonAtLeastOne(*mean)),
            LengthSpec::Counting { spec, horizon } if spec.is_poisson() => {
                spec.cumulative_intensity(*horizon).ok().map(CountLaw::Poisson)
            }
            LengthSpec::Counting { .. } => None,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Marginal {
    Iid(HeavyTailDist),
    Dependent(DependentSequenceGen),
}

impl Marginal {
    pub fn alpha(&self) -> f64 {
        match self {
            Marginal::Iid(d) => d.alpha(),
            Marginal::Dependent(g) => g.alpha(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<f64> {
        match self {
            Marginal::Iid(d) => d.sample(n, rng),
            Marginal::Dependent(g) => g.sample(n, rng),
        }
    }
}

/// Full model `C(N) = A(N) X(N)` with a norm.
#[derive(Debug, Clone)]
pub struct SequenceScenario {
    pub marginal: Marginal,
    pub length: LengthSpec,
    pub matrix: MatrixSpec,
    pub norm: Norm,
}

impl SequenceScenario {
    pub fn new(marginal: Marginal, length: LengthSpec, matrix: MatrixSpec, norm: Norm) -> Result<Self> {
        if matrix.shock().is_some() && !matches!(length, LengthSpec::Counting { .. }) {
            return Err(Error::param("matrix", "shock-based matrices need a counting process for arrival times"));
        }
        if let Some(s) = matrix.shock() {
            s.validate()?;
        }
        match &length {
            LengthSpec::Poisson { mean, .. } if !(*mean > 0.0 && mean.is_finite()) => {
                return Err(Error::param("mean", format!("Poisson mean must be > 0, got {mean}")));
            }
            LengthSpec::Counting { spec, horizon } => {
                spec.prepare(*horizon)?;
            }
            _ => {}
        }
        Ok(SequenceScenario {
            marginal,
            length,
            matrix,
            norm,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.marginal.alpha()
    }

    /// Prepared sampler for repeated realizations.
    pub fn sampler(&self) -> Result<ScenarioSampler<'_>> {
        let length = match &self.length {
            LengthSpec::Fixed(n) => LengthSampler::Fixed(*n),
            LengthSpec::Poisson { mean, at_least_one } => LengthSampler::Poisson(
                Poisson::new(*mean).map_err(|e| Error::Numerical(e.to_string()))?,
                *at_least_one,
            ),
            LengthSpec::Counting { spec, horizon } => LengthSampler::Counting(spec.prepare(*horizon)?),
        };
        Ok(ScenarioSampler { scenario: self, length })
    }

    pub fn realize<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Realization> {
        Ok(self.sampler()?.realize(rng))
    }
}

enum LengthSampler {
    Fixed(usize),
    Poisson(Poisson<f64>, bool),
    Counting(ArrivalSampler),
}

pub struct ScenarioSampler<'a> {
    scenario: &'a SequenceScenario,
    length: LengthSampler,
}

impl ScenarioSampler<'_> {
    pub fn realize<R: Rng + ?Sized>(&self, rng: &mut R) -> Realization {
        let sc = self.scenario;
        let (n, arrivals) = match &self.length {
            LengthSampler::Fixed(n) => (*n, None),
            LengthSampler::Poisson(p, at_least_one) => loop {
                let n = p.sample(rng) as usize;
                if n > 0 || !at_least_one {
                    break (n, None);
                }
            },
            LengthSampler::Counting(s) => {
                let a = s.sample(rng);
                (a.count(), Some(a))
            }
        };
        // A(N) is drawn before X(N) and independently of it.
        let matrix = match &sc.matrix {
            MatrixSpec::Identity => RealizedMatrix::Identity(n),
            MatrixSpec::Diagonal(shock) => {
                let a = arrivals.as_ref().expect("checked at construction");
                let omegas = draw_omegas(shock, n, rng);
                RealizedMatrix::Diagonal(
                    (0..n)
                        .map(|j| shock.value(a.horizon, a.times[j], omegas[j]))
                        .collect(),
                )
            }
            MatrixSpec::LowerTriangularShock(shock) => {
                let a = arrivals.as_ref().expect("checked at construction");
                RealizedMatrix::LowerTriangular {
                    times: a.times.clone(),
                    omegas: draw_omegas(shock, n, rng),
                    shock: shock.clone(),
                }
            }
            MatrixSpec::UserDense(law) => {
                let mut m = DenseMatrix::zeros(n, n);
                for i in 0..n {
                    for j in 0..n {
                        m.set(i, j, law.draw(rng));
                    }
                }
                RealizedMatrix::Dense(m)
            }
        };
        let x = sc.marginal.sample(n, rng);
        let c = matrix.apply(&x);
        let norm_c = sc.norm.eval(&c);
        Realization {
            arrivals,
            x,
            matrix,
            c,
            norm_c,
        }
    }
}

fn draw_omegas<R: Rng + ?Sized>(shock: &ShockFunctionSpec, n: usize, rng: &mut R) -> Vec<f64> {
    match shock.omega_law() {
        Some(law) => (0..n).map(|_| law.draw(rng)).collect(),
        None => vec![0.0; n],
    }
}

/// `A(N)`, stored only as far as needed to produce entries and columns.
#[derive(Debug, Clone)]
pub enum RealizedMatrix {
    Identity(usize),
    Diagonal(Vec<f64>),
    LowerTriangular {
        times: Vec<f64>,
        omegas: Vec<f64>,
        shock: ShockFunctionSpec,
    },
    Dense(DenseMatrix),
}

impl RealizedMatrix {
    pub fn dim(&self) -> usize {
        match self {
            RealizedMatrix::Identity(n) => *n,
            RealizedMatrix::Diagonal(d) => d.len(),
            RealizedMatrix::LowerTriangular { times, .. } => times.len(),
            RealizedMatrix::Dense(m) => m.rows(),
        }
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        match self {
            RealizedMatrix::Identity(_) => f64::from(u8::from(i == j)),
            RealizedMatrix::Diagonal(d) => {
                if i == j {
                    d[i]
                } else {
                    0.0
                }
            }
            RealizedMatrix::LowerTriangular { times, omegas, shock } => {
                if j <= i {
                    shock.value(times[i], times[j], omegas[j])
                } else {
                    0.0
                }
            }
            RealizedMatrix::Dense(m) => m.get(i, j),
        }
    }

    /// Column `A_k(N)`.
    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.dim()).map(|i| self.entry(i, k)).collect()
    }

    pub fn column_norm(&self, k: usize, norm: Norm) -> f64 {
        match self {
            RealizedMatrix::Identity(_) => 1.0,
            RealizedMatrix::Diagonal(d) => d[k].abs(),
            RealizedMatrix::LowerTriangular { .. } => {
                let n = self.dim();
                let tail: Vec<f64> = (k..n).map(|i| self.entry(i, k)).collect();
                norm.eval(&tail)
            }
            RealizedMatrix::Dense(_) => norm.eval(&self.column(k)),
        }
    }

    /// `A x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            RealizedMatrix::Identity(_) => x.to_vec(),
            RealizedMatrix::Diagonal(d) => d.iter().zip(x).map(|(a, b)| a * b).collect(),
            RealizedMatrix::LowerTriangular { times, omegas, shock } => {
                if let ShockFunctionSpec::ExponentialDecay(law) = shock {
                    if law.is_constant() {
                        let w = law.mean();
                        let mut acc = 0.0;
                        let mut prev = 0.0;
                        return times
                            .iter()
                            .zip(x)
                            .map(|(&t, &xv)| {
                                acc = acc * (-w * (t - prev)).exp() + xv;
                                prev = t;
                                acc
                            })
                            .collect();
                    }
                }
                (0..times.len())
                    .map(|i| (0..=i).map(|j| shock.value(times[i], times[j], omegas[j]) * x[j]).sum())
                    .collect()
            }
            RealizedMatrix::Dense(m) => m.mul_vec(x),
        }
    }

    pub fn to_dense(&self) -> DenseMatrix {
        let n = self.dim();
        let mut m = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                m.set(i, j, self.entry(i, j));
            }
        }
        m
    }

    pub fn induced_norm(&self, norm: Norm) -> InducedNorm {
        match self {
            RealizedMatrix::Identity(n) => InducedNorm {
                value: if *n == 0 { 0.0 } else { 1.0 },
                exact: true,
            },
            RealizedMatrix::Diagonal(d) => InducedNorm {
                value: d.iter().fold(0.0, |m, v| m.max(v.abs())),
                exact: true,
            },
            _ => induced_matrix_norm(norm, &self.to_dense()).expect("square by construction"),
        }
    }
}

/// One joint draw of the model.
#[derive(Debug, Clone)]
pub struct Realization {
    pub arrivals: Option<ArrivalSequence>,
    pub x: Vec<f64>,
    pub matrix: RealizedMatrix,
    pub c: Vec<f64>,
    pub norm_c: f64,
}

impl Realization {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

/// Monte Carlo mean with a 95% normal confidence half-width.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct McEstimate {
    pub mean: f64,
    pub ci_half_width: f64,
    pub n: u64,
}

impl McEstimate {
    pub fn from_moments(m: &Moments) -> Self {
        McEstimate {
            mean: m.mean(),
            ci_half_width: Z95 * m.std_error(),
            n: m.n,
        }
    }
}

/// Monte Carlo estimate of `E[Σ_k ‖A_k(N)‖^α]`.
pub fn breiman_constant_mc(scenario: &SequenceScenario, n_samples: u64, exec: &Exec, seed: u64) -> Result<McEstimate> {
    if n_samples == 0 {
        return Err(Error::param("n_samples", "need at least one sample"));
    }
    let sampler = scenario.sampler()?;
    let alpha = scenario.alpha();
    let norm = scenario.norm;
    let acc: Moments = exec.run(n_samples, seed, |rng, acc: &mut Moments| {
        let r = sampler.realize(rng);
        let total: f64 = (0..r.len()).map(|k| r.matrix.column_norm(k, norm).powf(alpha)).sum();
        acc.push(total);
    });
    if !acc.sum().is_finite() {
        return Err(Error::NonFinite(format!(
            "Breiman constant sum is {} after {n_samples} samples",
            acc.sum()
        )));
    }
    Ok(McEstimate::from_moments(&acc))
}

/// Atoms `P(Θ = e_j) = P(N >= j) / E[N]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralAtoms {
    /// `(j, p_j)` for `j = 1..=j_max`.
    pub atoms: Vec<(usize, f64)>,
    pub j_max: usize,
    /// `1 - Σ p_j`.
    pub deficit: f64,
}

const ATOM_TAIL_CUTOFF: f64 = 1e-12;

/// Closed-form spectral atoms of `X(N)`. With `j_max == None` the list is
/// truncated once the remaining mass drops below 1e-12.
pub fn spectral_atoms_closed(law: &CountLaw, j_max: Option<usize>) -> Result<SpectralAtoms> {
    let (mean, tail): (f64, Box<dyn Fn(usize) -> f64>) = match law {
        CountLaw::Fixed(n) => {
            let n = *n;
            (n as f64, Box::new(move |j| f64::from(u8::from(j <= n))))
        }
        CountLaw::Poisson(m) => {
            let m = *m;
            (m, Box::new(move |j| poisson_tail(m, j as u64)))
        }
        CountLaw::PoissonAtLeastOne(m) => {
            let m = *m;
            let p0 = (-m).exp();
            (m / (1.0 - p0), Box::new(move |j| poisson_tail(m, j as u64) / (1.0 - p0)))
        }
        CountLaw::Pmf(pmf) => {
            if pmf.iter().any(|&p| !(p >= 0.0)) {
                return Err(Error::param("pmf", "probabilities must be >= 0"));
            }
            let mean = pmf.iter().enumerate().map(|(n, p)| n as f64 * p).sum();
            let pmf = pmf.clone();
            (mean, Box::new(move |j| pmf.iter().skip(j).sum()))
        }
    };
    if !(mean > 0.0) {
        return Err(Error::param("N", "E[N] = 0: no spectral measure"));
    }
    let mut atoms = Vec::new();
    let mut total = CompensatedSum::default();
    let mut j = 1;
    loop {
        let p = tail(j) / mean;
        if let Some(limit) = j_max {
            if j > limit {
                break;
            }
        } else if p <= 0.0 || 1.0 - total.value() < ATOM_TAIL_CUTOFF || j > 100_000 {
            break;
        }
        total.add(p);
        atoms.push((j, p));
        j += 1;
    }
    Ok(SpectralAtoms {
        j_max: atoms.len(),
        deficit: 1.0 - total.value(),
        atoms,
    })
}

/// Threshold as a raw level or as an empirical quantile level of `‖C‖`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThresholdSpec {
    Raw(f64),
    Quantile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralOptions {
    pub threshold: ThresholdSpec,
    pub min_exceedances: u64,
    /// Realizations per round (and for the pilot quantile run).
    pub batch: u64,
    pub max_samples: u64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        SpectralOptions {
            threshold: ThresholdSpec::Quantile(0.999),
            min_exceedances: 200,
            batch: 1_000_000,
            max_samples: 50_000_000,
        }
    }
}

/// Summary of `Θ = C / ‖C‖` given `‖C‖ > x`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalSpectral {
    pub threshold: f64,
    pub samples: u64,
    pub exceedances: u64,
    /// Fraction of exceedances whose largest coordinate is `j` (index 0 = coordinate 1).
    pub atom_weights: Vec<f64>,
    /// Score-interval half-widths for `atom_weights`.
    pub atom_ci: Vec<f64>,
    /// Mean of `|Θ_j|^α` over exceedances.
    pub mean_theta_pow: Vec<f64>,
}

impl EmpiricalSpectral {
    /// CSV with header `coordinate,atom_weight,ci_half_width`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "coordinate,atom_weight,ci_half_width")?;
        for (j, (p, ci)) in self.atom_weights.iter().zip(&self.atom_ci).enumerate() {
            writeln!(w, "{},{p},{ci}", j + 1)?;
        }
        Ok(())
    }
}

#[derive(Default)]
struct SpectralAcc {
    samples: u64,
    exceed: u64,
    argmax: Vec<u64>,
    theta_pow: Vec<CompensatedSum>,
}

impl Accumulator for SpectralAcc {
    fn merge(&mut self, other: Self) {
        self.samples += other.samples;
        self.exceed += other.exceed;
        if other.argmax.len() > self.argmax.len() {
            self.argmax.resize(other.argmax.len(), 0);
            self.theta_pow.resize(other.theta_pow.len(), CompensatedSum::default());
        }
        for (a, b) in self.argmax.iter_mut().zip(other.argmax) {
            *a += b;
        }
        for (a, b) in self.theta_pow.iter_mut().zip(&other.theta_pow) {
            a.merge(b);
        }
    }
}

/// Empirical quantile (type 1) of a sample.
pub fn empirical_quantile(mut xs: Vec<f64>, p: f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let idx = ((p * xs.len() as f64).ceil() as usize).clamp(1, xs.len()) - 1;
    xs[idx]
}

/// Empirical spectral measure of `C(N)` above a threshold; keeps sampling in
/// batches until `min_exceedances` are collected or the budget runs out.
pub fn empirical_spectral_measure(
    scenario: &SequenceScenario,
    options: &SpectralOptions,
    exec: &Exec,
    seed: u64,
) -> Result<EmpiricalSpectral> {
    let sampler = scenario.sampler()?;
    let alpha = scenario.alpha();
    let threshold = match options.threshold {
        ThresholdSpec::Raw(x) => x,
        ThresholdSpec::Quantile(p) => {
            let pilot = exec.collect(options.batch, derive_seed(seed, 1), |rng| sampler.realize(rng).norm_c);
            empirical_quantile(pilot, p)
        }
    };
    let main_seed = derive_seed(seed, 2);
    let chunks_per_batch = options.batch.div_ceil(crate::parallel::CHUNK);
    let mut acc = SpectralAcc::default();
    let mut round = 0;
    while acc.exceed < options.min_exceedances {
        if acc.samples >= options.max_samples {
            return Err(Error::ThresholdTooExtreme {
                found: acc.exceed,
                samples: acc.samples,
                needed: options.min_exceedances,
            });
        }
        let part = exec.run_offset(
            options.batch,
            main_seed,
            round * chunks_per_batch,
            |rng: &mut McRng, acc: &mut SpectralAcc| {
                acc.samples += 1;
                let r = sampler.realize(rng);
                if !(r.norm_c > threshold) {
                    return;
                }
                acc.exceed += 1;
                let n = r.c.len();
                if acc.argmax.len() < n {
                    acc.argmax.resize(n, 0);
                    acc.theta_pow.resize(n, CompensatedSum::default());
                }
                let mut best = 0;
                for (j, &v) in r.c.iter().enumerate() {
                    if v.abs() > r.c[best].abs() {
                        best = j;
                    }
                    acc.theta_pow[j].add((v.abs() / r.norm_c).powf(alpha));
                }
                acc.argmax[best] += 1;
            },
        );
        acc.merge(part);
        round += 1;
    }
    let k = acc.exceed;
    let atom_weights: Vec<f64> = acc.argmax.iter().map(|&c| c as f64 / k as f64).collect();
    let atom_ci = acc
        .argmax
        .iter()
        .map(|&c| {
            let (lo, hi) = score_interval(c, k, Z95);
            0.5 * (hi - lo)
        })
        .collect();
    let mean_theta_pow = acc.theta_pow.iter().map(|s| s.value() / k as f64).collect();
    Ok(EmpiricalSpectral {
        threshold,
        samples: acc.samples,
        exceedances: k,
        atom_weights,
        atom_ci,
        mean_theta_pow,
    })
}

/// Result of the matrix moment diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct MomentDiagnostic {
    pub estimate: f64,
    pub ci_half_width: f64,
    /// Share of the total contributed by the largest 1% of samples.
    pub top_share: f64,
    pub stable: bool,
    /// Whether every induced norm used was exact (false for ℓ^p bounds).
    pub exact_norms: bool,
}

/// Empirical `E[‖A(N)‖^{α+ε} N^{1+α+ε}]`; flagged unstable when the top 1%
/// of samples carries more than half of the sum.
pub fn h4_moment_diagnostic(
    scenario: &SequenceScenario,
    eps: f64,
    n_samples: u64,
    exec: &Exec,
    seed: u64,
) -> Result<MomentDiagnostic> {
    if !(eps > 0.0) {
        return Err(Error::param("eps", format!("must be > 0, got {eps}")));
    }
    if n_samples == 0 {
        return Err(Error::param("n_samples", "need at least one sample"));
    }
    let sampler = scenario.sampler()?;
    let a = scenario.alpha() + eps;
    let norm = scenario.norm;
    let values: Vec<(f64, bool)> = exec.run(n_samples, seed, |rng, acc: &mut Vec<(f64, bool)>| {
        let r = sampler.realize(rng);
        let op = r.matrix.induced_norm(norm);
        let n = r.len() as f64;
        acc.push((op.value.powf(a) * n.powf(1.0 + a), op.exact));
    });
    let exact_norms = values.iter().all(|v| v.1);
    let mut xs: Vec<f64> = values.into_iter().map(|v| v.0).collect();
    let mut m = Moments::default();
    xs.iter().for_each(|&x| m.push(x));
    xs.sort_by(|a, b| b.total_cmp(a));
    let top = ((xs.len() as f64 * 0.01).ceil() as usize).max(1);
    let total = m.sum();
    let top_sum: f64 = xs[..top].iter().sum();
    let top_share = if total > 0.0 { top_sum / total } else { 0.0 };
    Ok(MomentDiagnostic {
        estimate: m.mean(),
        ci_half_width: Z95 * m.std_error(),
        top_share,
        stable: total.is_finite() && top_share <= 0.5,
        exact_norms,
    })
}
