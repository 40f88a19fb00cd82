//! Sampling of the killed continuous-time Markov chains of a generator pair
//! and the path statistics built on them.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{self, CoefficientSet, VertexField};
use crate::convergence::fdd_functional_with;
use crate::dirichlet_form::{GeneratorPair, Side};
use crate::error::{LabError, Result};
use crate::mm_space::{DiscreteSpace, DistanceTable};
use crate::numeric::{least_squares, mean_and_se};
use crate::semigroup::SemigroupEvaluator;

/// Rates in `[−RATE_TOL·scale, 0)` are treated as float noise and set to 0.
const RATE_TOL: f64 = 1e-12;

/// Number of standard errors within which Monte Carlo estimates must agree.
pub const SE_BAND: f64 = 4.0;

/// Jump rates and killing rates of a generator.
#[derive(Clone, Debug)]
pub struct JumpChain {
    /// Positive off-diagonal rates per vertex.
    jumps: Vec<Vec<(usize, f64)>>,
    kill: Vec<f64>,
    total: Vec<f64>,
    measure: Vec<f64>,
}

impl JumpChain {
    pub fn new(pair: &GeneratorPair, side: Side) -> Result<Self> {
        Self::from_generator(pair.side(side), &pair.measure)
    }

    /// `q(x) = Σ_{y≠x} L(x,y) + κ(x)` with `κ(x) = −Σ_y L(x,y)`, clamped at 0.
    pub fn from_generator(l: &DMatrix<f64>, measure: &[f64]) -> Result<Self> {
        let n = measure.len();
        if l.nrows() != n || l.ncols() != n {
            return Err(LabError::SizeMismatch {
                what: "generator",
                expected: n,
                got: l.nrows(),
            });
        }
        let mut jumps = Vec::with_capacity(n);
        let mut kill = Vec::with_capacity(n);
        let mut total = Vec::with_capacity(n);
        for x in 0..n {
            let scale = l.row(x).amax().max(f64::MIN_POSITIVE);
            let mut row = Vec::new();
            for y in 0..n {
                if y == x {
                    continue;
                }
                let r = l[(x, y)];
                if r < -RATE_TOL * scale {
                    return Err(LabError::NegativeRate { from: x, to: y, rate: r });
                }
                if r > 0.0 {
                    row.push((y, r));
                }
            }
            let row_sum: f64 = l.row(x).iter().sum();
            let mut k = -row_sum;
            if k < 0.0 {
                if k < -RATE_TOL * scale {
                    log::warn!("vertex {x} has negative killing rate {k:e}; clamped to 0");
                }
                k = 0.0;
            }
            let q = row.iter().map(|e| e.1).sum::<f64>() + k;
            jumps.push(row);
            kill.push(k);
            total.push(q);
        }
        Ok(Self {
            jumps,
            kill,
            total,
            measure: measure.to_vec(),
        })
    }

    pub fn n(&self) -> usize {
        self.total.len()
    }

    pub fn killing_rate(&self, x: usize) -> f64 {
        self.kill[x]
    }

    pub fn total_rate(&self, x: usize) -> f64 {
        self.total[x]
    }

    /// Picks the next state given a uniform draw in `[0, q(x))`; `None` is ∂.
    fn pick(&self, x: usize, mut u: f64) -> Option<usize> {
        for &(y, r) in &self.jumps[x] {
            if u < r {
                return Some(y);
            }
            u -= r;
        }
        if self.kill[x] > 0.0 {
            None
        } else {
            // rounding left u just above the last rate
            self.jumps[x].last().map(|e| e.0)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Exponential holding times with rate `q(x)`.
    #[default]
    ExactJump,
    /// Poisson clock at the largest rate with self-loops.
    Uniformization,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Initial {
    Vertex(usize),
    Distribution(Vec<f64>),
    MeasureProportional,
}

impl Initial {
    /// The initial law as a probability vector.
    pub fn distribution(&self, measure: &[f64]) -> Result<Vec<f64>> {
        let n = measure.len();
        match self {
            Initial::Vertex(x) => {
                if *x >= n {
                    return Err(LabError::InvalidArgument(format!("initial vertex {x} out of range")));
                }
                let mut p = vec![0.0; n];
                p[*x] = 1.0;
                Ok(p)
            }
            Initial::Distribution(p) => {
                if p.len() != n {
                    return Err(LabError::SizeMismatch {
                        what: "initial distribution",
                        expected: n,
                        got: p.len(),
                    });
                }
                let total: f64 = p.iter().sum();
                if p.iter().any(|v| !(*v >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                    return Err(LabError::InvalidArgument(
                        "initial distribution must be nonnegative and sum to 1".into(),
                    ));
                }
                Ok(p.clone())
            }
            Initial::MeasureProportional => {
                let total: f64 = measure.iter().sum();
                Ok(measure.iter().map(|m| m / total).collect())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub horizon: f64,
    pub n_paths: usize,
    pub seed: u64,
    #[serde(default)]
    pub scheme: Scheme,
    pub initial: Initial,
}

impl SimConfig {
    fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(LabError::InvalidArgument(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.n_paths == 0 {
            return Err(LabError::InvalidArgument("n_paths must be at least 1".into()));
        }
        Ok(())
    }
}

/// A piecewise constant path on `[0, T]`, possibly killed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub path_id: usize,
    /// Jump times; `times[0] = 0`.
    pub times: Vec<f64>,
    /// State held from `times[i]` until the next jump.
    pub states: Vec<usize>,
    /// Time of the jump to ∂; `None` when the path survives the horizon.
    pub lifetime: Option<f64>,
    pub horizon: f64,
    pub seed: u64,
}

impl PathSample {
    pub fn alive_at(&self, t: f64) -> bool {
        self.lifetime.is_none_or(|z| t < z)
    }

    /// State at time `t`, `None` once killed.
    pub fn state_at(&self, t: f64) -> Option<usize> {
        if !self.alive_at(t) {
            return None;
        }
        let i = self.times.partition_point(|&s| s <= t);
        Some(self.states[i.saturating_sub(1)])
    }

    /// `f(S_t)` with `f(∂) = 0`.
    pub fn eval(&self, f: &[f64], t: f64) -> f64 {
        self.state_at(t).map_or(0.0, |x| f[x])
    }

    /// `∫₀^t g(S_s) ds` summed exactly over holding intervals, with `g(∂) = 0`.
    pub fn integral(&self, g: &[f64], t: f64) -> f64 {
        let end = self.lifetime.map_or(t, |z| z.min(t));
        let mut acc = 0.0;
        for (i, &x) in self.states.iter().enumerate() {
            let a = self.times[i];
            if a >= end {
                break;
            }
            let b = self.times.get(i + 1).copied().unwrap_or(f64::INFINITY).min(end);
            acc += g[x] * (b - a);
        }
        acc
    }
}

fn path_rng(seed: u64, path_id: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path_id as u64);
    rng
}

fn draw_initial(p: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (x, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return x;
        }
    }
    p.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

fn sample_one(chain: &JumpChain, config: &SimConfig, p0: &[f64], path_id: usize) -> PathSample {
    let mut rng = path_rng(config.seed, path_id);
    let mut x = draw_initial(p0, &mut rng);
    let mut times = vec![0.0];
    let mut states = vec![x];
    let mut lifetime = None;
    let mut t = 0.0;
    let t_end = config.horizon;
    match config.scheme {
        Scheme::ExactJump => loop {
            let q = chain.total[x];
            if q <= 0.0 {
                break;
            }
            let e: f64 = Exp1.sample(&mut rng);
            t += e / q;
            if t > t_end {
                break;
            }
            let u = rng.random::<f64>() * q;
            match chain.pick(x, u) {
                Some(y) => {
                    x = y;
                    times.push(t);
                    states.push(y);
                }
                None => {
                    lifetime = Some(t);
                    break;
                }
            }
        },
        Scheme::Uniformization => {
            let lam = chain.total.iter().copied().fold(0.0, f64::max);
            if lam > 0.0 {
                loop {
                    let e: f64 = Exp1.sample(&mut rng);
                    t += e / lam;
                    if t > t_end {
                        break;
                    }
                    let u = rng.random::<f64>() * lam;
                    if u >= chain.total[x] {
                        continue;
                    }
                    match chain.pick(x, u) {
                        Some(y) => {
                            if y != x {
                                x = y;
                                times.push(t);
                                states.push(y);
                            }
                        }
                        None => {
                            lifetime = Some(t);
                            break;
                        }
                    }
                }
            }
        }
    }
    PathSample {
        path_id,
        times,
        states,
        lifetime,
        horizon: t_end,
        seed: config.seed,
    }
}

/// Samples `n_paths` independent paths. Path `i` draws from the ChaCha8
/// stream `(seed, i)`, so the output does not depend on the thread count.
pub fn sample_paths(chain: &JumpChain, config: &SimConfig) -> Result<Vec<PathSample>> {
    config.validate()?;
    let p0 = config.initial.distribution(&chain.measure)?;
    Ok((0..config.n_paths)
        .into_par_iter()
        .map(|i| sample_one(chain, config, &p0, i))
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn of(values: &[f64]) -> Self {
        let (estimate, std_error) = mean_and_se(values);
        Self { estimate, std_error }
    }

    /// `|estimate − exact| ≤ k·SE`, with an absolute floor of `1e-12` for
    /// degenerate samples.
    pub fn agrees(&self, exact: f64, k: f64) -> bool {
        (self.estimate - exact).abs() <= k * self.std_error + 1e-12
    }
}

/// Fraction of paths in each vertex at time `t`, with binomial standard
/// errors.
pub fn empirical_occupation(paths: &[PathSample], t: f64, n: usize) -> Vec<Estimate> {
    let mut counts = vec![0usize; n];
    for p in paths {
        if let Some(x) = p.state_at(t) {
            counts[x] += 1;
        }
    }
    let total = paths.len() as f64;
    counts
        .iter()
        .map(|&c| {
            let p = c as f64 / total;
            Estimate {
                estimate: p,
                std_error: (p * (1.0 - p) / total).sqrt(),
            }
        })
        .collect()
}

/// Mean of `Π_j f_j(S_{t_j})` over paths, with dead paths contributing 0.
pub fn empirical_fdd(paths: &[PathSample], times: &[f64], fs: &[&[f64]]) -> Result<Estimate> {
    if times.len() != fs.len() || times.is_empty() {
        return Err(LabError::InvalidArgument("times and functions must match and be nonempty".into()));
    }
    if let Some(p) = paths.first() {
        if times.iter().any(|&t| t > p.horizon) {
            return Err(LabError::InvalidArgument("fdd time beyond the path horizon".into()));
        }
    }
    let values: Vec<f64> = paths
        .iter()
        .map(|p| times.iter().zip(fs).map(|(&t, f)| p.eval(f, t)).product())
        .collect();
    Ok(Estimate::of(&values))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FddComparison {
    pub estimate: Estimate,
    pub exact: f64,
    pub within: bool,
}

/// Compares [`empirical_fdd`] with `Σ_x π(x) P_k(x)` for the initial law `π`.
pub fn fdd_comparison(
    paths: &[PathSample],
    evaluator: &SemigroupEvaluator,
    initial: &[f64],
    times: &[f64],
    fs: &[&[f64]],
) -> Result<FddComparison> {
    let estimate = empirical_fdd(paths, times, fs)?;
    let p = fdd_functional_with(evaluator, times, fs)?;
    let exact: f64 = initial.iter().zip(p.iter()).map(|(a, b)| a * b).sum();
    Ok(FddComparison {
        estimate,
        exact,
        within: estimate.agrees(exact, SE_BAND),
    })
}

/// `M_t = f(S_t) − f(S_0) − ∫₀^t Lf(S_s) ds`, with `f(∂) = Lf(∂) = 0`.
pub fn dynkin_martingale(path: &PathSample, f: &[f64], lf: &[f64], t: f64) -> f64 {
    path.eval(f, t) - path.eval(f, 0.0) - path.integral(lf, t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleCheckpoint {
    pub t: f64,
    pub mean: Estimate,
    pub within: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MartingaleStats {
    pub checkpoints: Vec<MartingaleCheckpoint>,
    /// Mean of `(M_{t₁} − M_0)(M_{t₂} − M_{t₁})` over consecutive checkpoints.
    pub increment_products: Vec<Estimate>,
    pub increments_within: bool,
}

impl MartingaleStats {
    pub fn passes(&self) -> bool {
        self.increments_within && self.checkpoints.iter().all(|c| c.within)
    }
}

/// Mean drift of the Dynkin martingale at each checkpoint and the
/// orthogonality of disjoint increments.
pub fn martingale_residuals(paths: &[PathSample], l: &DMatrix<f64>, f: &[f64], checkpoints: &[f64]) -> Result<MartingaleStats> {
    if f.len() != l.nrows() {
        return Err(LabError::SizeMismatch {
            what: "martingale test function",
            expected: l.nrows(),
            got: f.len(),
        });
    }
    if checkpoints.windows(2).any(|w| w[1] <= w[0]) || checkpoints.first().is_some_and(|&t| t < 0.0) {
        return Err(LabError::InvalidArgument("checkpoints must be increasing and nonnegative".into()));
    }
    let lf: Vec<f64> = (l * DVector::from_column_slice(f)).as_slice().to_vec();
    let values: Vec<Vec<f64>> = paths
        .par_iter()
        .map(|p| checkpoints.iter().map(|&t| dynkin_martingale(p, f, &lf, t)).collect())
        .collect();
    let checkpoints_out = checkpoints
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let col: Vec<f64> = values.iter().map(|v| v[k]).collect();
            let mean = Estimate::of(&col);
            MartingaleCheckpoint {
                t,
                mean,
                within: mean.agrees(0.0, SE_BAND),
            }
        })
        .collect();
    let mut increment_products = Vec::new();
    for k in 1..checkpoints.len() {
        let col: Vec<f64> = values.iter().map(|v| v[k - 1] * (v[k] - v[k - 1])).collect();
        increment_products.push(Estimate::of(&col));
    }
    let increments_within = increment_products.iter().all(|e| e.agrees(0.0, SE_BAND));
    Ok(MartingaleStats {
        checkpoints: checkpoints_out,
        increment_products,
        increments_within,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyonsZhengCheckpoint {
    pub t: f64,
    pub forward: Estimate,
    pub backward: Estimate,
    pub drift: Estimate,
    pub max_residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LyonsZhengStats {
    /// Paths alive on `[0, T]`.
    pub paths_used: usize,
    /// Largest pathwise `|reconstruction − (f(S_t) − f(S_0))|`.
    pub max_residual: f64,
    /// Same with the divergence terms entering as `−f div b₁ + f div b₂`.
    pub literal_variant_max_residual: f64,
    pub checkpoints: Vec<LyonsZhengCheckpoint>,
    /// Mean of the dual Dynkin martingale along dual paths, when supplied.
    pub dual_forward: Option<Vec<Estimate>>,
}

/// Reconstructs `f(S_t) − f(S_0)` on surviving paths as
///
/// ```text
/// ½ M_t − ½ (M̂_T − M̂_{T−t})∘r_T − ∫₀^t ½ (L̂ − L) f(S_s) ds
/// ```
///
/// where `M` is the primal Dynkin martingale, the backward term is the dual
/// Dynkin martingale along the reversed path
/// `f(S_0) − f(S_t) − ∫₀^t L̂f(S_s) ds`, and the drift
/// `(L̂ − L) f = 2b₁(f) − 2b₂(f) + f(div b₁ − div b₂)` is evaluated from the
/// coefficients.
#[allow(clippy::too_many_arguments)]
pub fn lyons_zheng_residual(
    space: &DiscreteSpace,
    coeffs: &CoefficientSet,
    pair: &GeneratorPair,
    paths: &[PathSample],
    dual_paths: Option<&[PathSample]>,
    f: &[f64],
    horizon: f64,
    checkpoints: &[f64],
) -> Result<LyonsZhengStats> {
    let n = space.n_vertices();
    if f.len() != n {
        return Err(LabError::SizeMismatch {
            what: "test function",
            expected: n,
            got: f.len(),
        });
    }
    if checkpoints.iter().any(|&t| !(t >= 0.0 && t <= horizon)) {
        return Err(LabError::InvalidArgument("checkpoints must lie in [0, T]".into()));
    }
    let fv = DVector::from_column_slice(f);
    let lf: Vec<f64> = (&pair.l * &fv).as_slice().to_vec();
    let lhf: Vec<f64> = (&pair.l_hat * &fv).as_slice().to_vec();
    let (b1, _) = calculus::apply_derivation(space, &coeffs.theta1, f)?;
    let (b2, _) = calculus::apply_derivation(space, &coeffs.theta2, f)?;
    let d1 = calculus::divergence(space, &coeffs.theta1)?;
    let d2 = calculus::divergence(space, &coeffs.theta2)?;
    let half_drift: Vec<f64> = (0..n)
        .map(|x| 0.5 * (2.0 * b1[x] - 2.0 * b2[x] + f[x] * (d1[x] - d2[x])))
        .collect();
    let half_literal: Vec<f64> = (0..n)
        .map(|x| 0.5 * (2.0 * b1[x] - 2.0 * b2[x] - f[x] * d1[x] + f[x] * d2[x]))
        .collect();

    let alive: Vec<&PathSample> = paths.iter().filter(|p| p.alive_at(horizon)).collect();
    // per path, per checkpoint: (forward, backward, drift, residual, literal residual)
    let rows: Vec<Vec<[f64; 5]>> = alive
        .par_iter()
        .map(|p| {
            checkpoints
                .iter()
                .map(|&t| {
                    let target = p.eval(f, t) - p.eval(f, 0.0);
                    let forward = dynkin_martingale(p, f, &lf, t);
                    let backward = p.eval(f, 0.0) - p.eval(f, t) - p.integral(&lhf, t);
                    let drift = p.integral(&half_drift, t);
                    let literal = p.integral(&half_literal, t);
                    let recon = 0.5 * forward - 0.5 * backward - drift;
                    let recon_literal = 0.5 * forward - 0.5 * backward - literal;
                    [forward, backward, drift, (recon - target).abs(), (recon_literal - target).abs()]
                })
                .collect()
        })
        .collect();

    let mut max_residual = 0.0_f64;
    let mut literal_variant_max_residual = 0.0_f64;
    let checkpoints_out = checkpoints
        .iter()
        .enumerate()
        .map(|(k, &t)| {
            let col = |j: usize| -> Vec<f64> { rows.iter().map(|r| r[k][j]).collect() };
            let res = col(3).into_iter().fold(0.0, f64::max);
            max_residual = max_residual.max(res);
            literal_variant_max_residual = literal_variant_max_residual.max(col(4).into_iter().fold(0.0, f64::max));
            LyonsZhengCheckpoint {
                t,
                forward: Estimate::of(&col(0)),
                backward: Estimate::of(&col(1)),
                drift: Estimate::of(&col(2)),
                max_residual: res,
            }
        })
        .collect();
    let dual_forward = dual_paths.map(|dp| {
        checkpoints
            .iter()
            .map(|&t| {
                let v: Vec<f64> = dp.iter().map(|p| dynkin_martingale(p, f, &lhf, t)).collect();
                Estimate::of(&v)
            })
            .collect()
    });
    Ok(LyonsZhengStats {
        paths_used: alive.len(),
        max_residual,
        literal_variant_max_residual,
        checkpoints: checkpoints_out,
        dual_forward,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentMode {
    Exact,
    MonteCarlo { n_paths: usize, seed: u64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KolmogorovParams {
    pub beta: f64,
    pub t: f64,
    pub h_grid: Vec<f64>,
    pub start: usize,
    pub mode: MomentMode,
    /// `(ε, η grid)` for the modulus exceedance statistic in Monte Carlo mode.
    pub modulus: Option<(f64, Vec<f64>)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulusPoint {
    pub eta: f64,
    /// Fraction of paths with `sup_{|t−s|≤η} |g(S_t) − g(S_s)| > ε`.
    pub exceedance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KolmogorovMoments {
    pub h_grid: Vec<f64>,
    /// `E^x[d̃^β(S_t, S_{t+h})]` with `d̃ = min{d, 1}`.
    pub moments: Vec<f64>,
    /// Zero in exact mode.
    pub std_errors: Vec<f64>,
    /// Least-squares fit `moment ≈ C h^θ`.
    pub fit_c: f64,
    pub fit_theta: f64,
    pub modulus: Option<Vec<ModulusPoint>>,
}

fn truncated_power(d: f64, beta: f64) -> f64 {
    d.min(1.0).powf(beta)
}

fn fit_power_law(h: &[f64], m: &[f64]) -> (f64, f64) {
    let rows: Vec<(f64, f64)> = h.iter().zip(m).filter(|(_, &v)| v > 0.0).map(|(&a, &b)| (a, b)).collect();
    if rows.len() < 2 {
        return (0.0, f64::NAN);
    }
    let x = DMatrix::from_fn(rows.len(), 2, |i, j| if j == 0 { 1.0 } else { rows[i].0.ln() });
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.1.ln()));
    match least_squares(&x, &y) {
        Some(b) => (b[0].exp(), b[1]),
        None => (0.0, f64::NAN),
    }
}

/// Moments `E^x[d̃^β(S_t, S_{t+h})]` over an `h` grid, exactly by the double
/// kernel sum `Σ_{y,z} T_t(x,y) T_h(y,z) d̃^β(y,z)` or by Monte Carlo.
pub fn kolmogorov_moment(
    evaluator: &SemigroupEvaluator,
    chain: &JumpChain,
    metric: &DistanceTable,
    params: &KolmogorovParams,
) -> Result<KolmogorovMoments> {
    let n = evaluator.n();
    if !(params.beta > 0.0) {
        return Err(LabError::InvalidArgument("beta must be positive".into()));
    }
    if params.h_grid.is_empty() || params.h_grid.iter().any(|&h| !(h > 0.0)) {
        return Err(LabError::InvalidArgument("h grid must be nonempty and positive".into()));
    }
    if params.start >= n || metric.len() != n {
        return Err(LabError::InvalidArgument("start vertex or metric size mismatch".into()));
    }
    let x = params.start;
    match &params.mode {
        MomentMode::Exact => {
            let tt = evaluator.transition(params.t)?;
            let moments = params
                .h_grid
                .iter()
                .map(|&h| {
                    let th = evaluator.transition(h)?;
                    let mut acc = 0.0;
                    for y in 0..n {
                        let a = tt[(x, y)];
                        if a == 0.0 {
                            continue;
                        }
                        let inner: f64 = (0..n).map(|z| th[(y, z)] * truncated_power(metric.get(y, z), params.beta)).sum();
                        acc += a * inner;
                    }
                    Ok(acc)
                })
                .collect::<Result<Vec<f64>>>()?;
            let (fit_c, fit_theta) = fit_power_law(&params.h_grid, &moments);
            Ok(KolmogorovMoments {
                h_grid: params.h_grid.clone(),
                std_errors: vec![0.0; moments.len()],
                moments,
                fit_c,
                fit_theta,
                modulus: None,
            })
        }
        MomentMode::MonteCarlo { n_paths, seed } => {
            let h_max = params.h_grid.iter().copied().fold(0.0, f64::max);
            let horizon = params.t + h_max;
            let config = SimConfig {
                horizon,
                n_paths: *n_paths,
                seed: *seed,
                scheme: Scheme::ExactJump,
                initial: Initial::Vertex(x),
            };
            let paths = sample_paths(chain, &config)?;
            let mut moments = Vec::new();
            let mut std_errors = Vec::new();
            for &h in &params.h_grid {
                let vals: Vec<f64> = paths
                    .iter()
                    .map(|p| match (p.state_at(params.t), p.state_at(params.t + h)) {
                        (Some(a), Some(b)) => truncated_power(metric.get(a, b), params.beta),
                        _ => 0.0,
                    })
                    .collect();
                let e = Estimate::of(&vals);
                moments.push(e.estimate);
                std_errors.push(e.std_error);
            }
            let (fit_c, fit_theta) = fit_power_law(&params.h_grid, &moments);
            let modulus = params.modulus.as_ref().map(|(eps, etas)| {
                let g: Vec<f64> = (0..n).map(|y| metric.get(x, y).min(1.0)).collect();
                etas.iter()
                    .map(|&eta| ModulusPoint {
                        eta,
                        exceedance: modulus_exceedance(&paths, &g, eta, *eps),
                    })
                    .collect()
            });
            Ok(KolmogorovMoments {
                h_grid: params.h_grid.clone(),
                moments,
                std_errors,
                fit_c,
                fit_theta,
                modulus,
            })
        }
    }
}

/// Fraction of paths whose `g`-oscillation over some window of length `η`
/// exceeds `ε` (killed paths are evaluated up to their lifetime).
pub fn modulus_exceedance(paths: &[PathSample], g: &[f64], eta: f64, eps: f64) -> f64 {
    if paths.is_empty() {
        return 0.0;
    }
    let hits = paths
        .par_iter()
        .filter(|p| {
            let k = p.states.len();
            for i in 0..k {
                for j in (i + 1)..k {
                    // states i and j are both visited within a window of length η
                    // iff the gap between leaving i and entering j is at most η
                    let leave_i = p.times[i + 1];
                    if p.times[j] - leave_i > eta {
                        break;
                    }
                    if (g[p.states[i]] - g[p.states[j]]).abs() > eps {
                        return true;
                    }
                }
            }
            false
        })
        .count();
    hits as f64 / paths.len() as f64
}

/// Path functional `F(ω) = Π_j f_j(ω(t_j))` on `{ζ > T}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeFunctional {
    pub times: Vec<f64>,
    pub fs: Vec<Vec<f64>>,
}

impl TimeFunctional {
    fn eval(&self, p: &PathSample, horizon: f64, reversed: bool) -> f64 {
        if !p.alive_at(horizon) {
            return 0.0;
        }
        self.times
            .iter()
            .zip(&self.fs)
            .map(|(&t, f)| p.eval(f, if reversed { horizon - t } else { t }))
            .product()
    }

    /// Exact `E^π[F(ω); ζ > T]`, or of `F(r_T ω)` when `reversed`.
    fn exact(&self, ev: &SemigroupEvaluator, pi: &[f64], horizon: f64, reversed: bool) -> Result<f64> {
        let n = ev.n();
        let mut events: Vec<(f64, Vec<f64>)> = self
            .times
            .iter()
            .zip(&self.fs)
            .map(|(&t, f)| (if reversed { horizon - t } else { t }, f.clone()))
            .collect();
        events.push((horizon, vec![1.0; n]));
        events.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, Vec<f64>)> = Vec::new();
        for (t, f) in events {
            match merged.last_mut() {
                Some((s, g)) if (*s - t).abs() <= 1e-15 * horizon.max(1.0) => {
                    g.iter_mut().zip(&f).for_each(|(a, b)| *a *= b);
                }
                _ => merged.push((t, f)),
            }
        }
        let times: Vec<f64> = merged.iter().map(|e| e.0).collect();
        let fs: Vec<&[f64]> = merged.iter().map(|e| e.1.as_slice()).collect();
        let p = fdd_functional_with(ev, &times, &fs)?;
        Ok(pi.iter().zip(p.iter()).map(|(a, b)| a * b).sum())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReversalRow {
    pub exact_reversed_primal: f64,
    pub exact_dual: f64,
    pub mc_reversed_primal: Estimate,
    pub mc_dual: Estimate,
    pub defect: f64,
    pub combined_se: f64,
    pub within: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeReversalReport {
    pub rows: Vec<ReversalRow>,
    /// `max |mc reversed − mc dual|`.
    pub defect: f64,
    /// `max |exact reversed − exact dual|`.
    pub exact_gap: f64,
    pub within: bool,
}

/// Compares `E^m[F(r_T ω); ζ > T]` under the primal chain with `Ê^m[F(ω); ζ > T]`
/// under the dual chain, both started from the normalized measure.
pub fn time_reversal_check(
    pair: &GeneratorPair,
    horizon: f64,
    functionals: &[TimeFunctional],
    n_paths: usize,
    seed: u64,
) -> Result<TimeReversalReport> {
    for f in functionals {
        if f.times.len() != f.fs.len() || f.times.iter().any(|&t| !(t >= 0.0 && t <= horizon)) {
            return Err(LabError::InvalidArgument("functional times must lie in [0, T]".into()));
        }
        if f.fs.iter().any(|g| g.len() != pair.n()) {
            return Err(LabError::SizeMismatch {
                what: "functional",
                expected: pair.n(),
                got: f.fs.iter().map(|g| g.len()).find(|&l| l != pair.n()).unwrap_or(0),
            });
        }
    }
    let primal = JumpChain::new(pair, Side::Primal)?;
    let dual = JumpChain::new(pair, Side::Dual)?;
    let config = SimConfig {
        horizon,
        n_paths,
        seed,
        scheme: Scheme::ExactJump,
        initial: Initial::MeasureProportional,
    };
    let fwd = sample_paths(&primal, &config)?;
    let bwd = sample_paths(
        &dual,
        &SimConfig {
            seed: seed ^ 0x9E37_79B9_7F4A_7C15,
            ..config.clone()
        },
    )?;
    let ev = SemigroupEvaluator::new(pair, Side::Primal, crate::semigroup::Method::Dense)?;
    let ev_hat = SemigroupEvaluator::new(pair, Side::Dual, crate::semigroup::Method::Dense)?;
    let pi = Initial::MeasureProportional.distribution(&pair.measure)?;
    let mut rows = Vec::new();
    for func in functionals {
        let r: Vec<f64> = fwd.iter().map(|p| func.eval(p, horizon, true)).collect();
        let d: Vec<f64> = bwd.iter().map(|p| func.eval(p, horizon, false)).collect();
        let mc_reversed_primal = Estimate::of(&r);
        let mc_dual = Estimate::of(&d);
        let defect = (mc_reversed_primal.estimate - mc_dual.estimate).abs();
        let combined_se = (mc_reversed_primal.std_error.powi(2) + mc_dual.std_error.powi(2)).sqrt();
        rows.push(ReversalRow {
            exact_reversed_primal: func.exact(&ev, &pi, horizon, true)?,
            exact_dual: func.exact(&ev_hat, &pi, horizon, false)?,
            mc_reversed_primal,
            mc_dual,
            defect,
            combined_se,
            within: defect <= SE_BAND * combined_se + 1e-12,
        });
    }
    let defect = rows.iter().map(|r| r.defect).fold(0.0, f64::max);
    let exact_gap = rows
        .iter()
        .map(|r| (r.exact_reversed_primal - r.exact_dual).abs())
        .fold(0.0, f64::max);
    let within = rows.iter().all(|r| r.within);
    Ok(TimeReversalReport {
        rows,
        defect,
        exact_gap,
        within,
    })
}

/// Survival indicator `1{ζ > t}` per path.
pub fn survival(paths: &[PathSample], t: f64) -> Estimate {
    let v: Vec<f64> = paths.iter().map(|p| if p.alive_at(t) { 1.0 } else { 0.0 }).collect();
    Estimate::of(&v)
}

/// Convenience for tests and the CLI: a vertex field as a slice vector.
pub fn field_refs(fields: &[VertexField]) -> Vec<&[f64]> {
    fields.iter().map(|f| &f[..]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::semigroup::Method;

    fn two_state_pair(l: &[f64]) -> GeneratorPair {
        GeneratorPair::from_primal(DMatrix::from_row_slice(2, 2, l), vec![1.0, 1.0]).unwrap()
    }

    fn config(n_paths: usize, horizon: f64, initial: Initial) -> SimConfig {
        SimConfig {
            horizon,
            n_paths,
            seed: 7,
            scheme: Scheme::ExactJump,
            initial,
        }
    }

    #[test]
    fn zero_generator_paths_are_constant() {
        let pair = two_state_pair(&[0.0, 0.0, 0.0, 0.0]);
        let chain = JumpChain::new(&pair, Side::Primal).unwrap();
        let paths = sample_paths(&chain, &config(50, 3.0, Initial::Vertex(1))).unwrap();
        assert!(paths.iter().all(|p| p.states == vec![1] && p.lifetime.is_none()));
    }

    #[test]
    fn negative_rate_names_the_edge() {
        let l = DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 0.0]);
        let err = JumpChain::from_generator(&l, &[1.0, 1.0]).unwrap_err();
        assert!(matches!(err, LabError::NegativeRate { from: 0, to: 1, .. }));
    }

    #[test]
    fn invalid_initial_distribution() {
        let pair = two_state_pair(&[-0.5, 0.5, 0.5, -0.5]);
        let chain = JumpChain::new(&pair, Side::Primal).unwrap();
        let bad = config(10, 1.0, Initial::Distribution(vec![0.5, 0.6]));
        assert!(sample_paths(&chain, &bad).is_err());
    }

    #[test]
    fn two_state_occupation() {
        let pair = two_state_pair(&[-0.5, 0.5, 0.5, -0.5]);
        let chain = JumpChain::new(&pair, Side::Primal).unwrap();
        let paths = sample_paths(&chain, &config(100_000, 1.0, Initial::Vertex(0))).unwrap();
        let occ = empirical_occupation(&paths, 1.0, 2);
        let exact = 0.5 * (1.0 + (-1.0f64).exp());
        assert!(occ[0].agrees(exact, 3.0), "{occ:?}");
    }

    #[test]
    fn uniform_killing_survival() {
        let pair = two_state_pair(&[-1.5, 0.5, 0.5, -1.5]);
        let chain = JumpChain::new(&pair, Side::Primal).unwrap();
        for scheme in [Scheme::ExactJump, Scheme::Uniformization] {
            let cfg = SimConfig {
                scheme,
                ..config(100_000, 1.0, Initial::Vertex(0))
            };
            let paths = sample_paths(&chain, &cfg).unwrap();
            assert!(survival(&paths, 1.0).agrees((-1.0f64).exp(), 3.0));
        }
    }

    #[test]
    fn path_integral_is_exact() {
        let p = PathSample {
            path_id: 0,
            times: vec![0.0, 0.5, 1.25],
            states: vec![0, 1, 0],
            lifetime: Some(1.5),
            horizon: 2.0,
            seed: 0,
        };
        let g = [1.0, 10.0];
        assert!((p.integral(&g, 2.0) - (0.5 + 7.5 + 0.25)).abs() < 1e-14);
        assert_eq!(p.state_at(1.0), Some(1));
        assert_eq!(p.state_at(1.6), None);
        assert_eq!(p.eval(&g, 1.6), 0.0);
    }

    #[test]
    fn constant_function_martingale_vanishes() {
        let pair = two_state_pair(&[-0.5, 0.5, 0.5, -0.5]);
        let chain = JumpChain::new(&pair, Side::Primal).unwrap();
        let paths = sample_paths(&chain, &config(200, 2.0, Initial::Vertex(0))).unwrap();
        let lf = [0.0, 0.0];
        for p in &paths {
            assert_eq!(dynkin_martingale(p, &[3.0, 3.0], &lf, 1.5), 0.0);
        }
    }

    #[test]
    fn two_state_martingale() {
        let pair = two_state_pair(&[-0.5, 0.5, 0.5, -0.5]);
        let chain = JumpChain::new(&pair, Side::Primal).unwrap();
        let paths = sample_paths(&chain, &config(100_000, 1.0, Initial::Vertex(0))).unwrap();
        let stats = martingale_residuals(&paths, &pair.l, &[0.0, 1.0], &[0.25, 0.5, 1.0]).unwrap();
        assert!(stats.passes(), "{stats:?}");
    }

    #[test]
    fn reversal_exact_identity() {
        let pair = two_state_pair(&[-1.0, 0.0, 1.0, -1.0]);
        let f = TimeFunctional {
            times: vec![0.5],
            fs: vec![vec![1.0, 0.0]],
        };
        let rep = time_reversal_check(&pair, 1.0, &[f], 2_000, 1).unwrap();
        assert!(rep.exact_gap < 1e-12);
    }

    #[test]
    fn exact_kolmogorov_of_rate_zero_generator() {
        let pair = two_state_pair(&[0.0, 0.0, 0.0, 0.0]);
        let ev = SemigroupEvaluator::new(&pair, Side::Primal, Method::Dense).unwrap();
        let chain = JumpChain::new(&pair, Side::Primal).unwrap();
        let metric = DistanceTable::from_fn(2, |x, y| if x == y { 0.0 } else { 1.0 });
        let params = KolmogorovParams {
            beta: 2.0,
            t: 0.5,
            h_grid: vec![0.1, 0.2],
            start: 0,
            mode: MomentMode::Exact,
            modulus: None,
        };
        let k = kolmogorov_moment(&ev, &chain, &metric, &params).unwrap();
        assert!(k.moments.iter().all(|&m| m == 0.0));
    }
}
