//! Semigroups, resolvents, heat kernels and the Cheeger spectrum of a
//! generator pair.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calculus::VertexField;
use crate::diagnostics::{bishop_gromov_constant, BishopGromovCheck};
use crate::dirichlet_form::{FormAssembly, GeneratorPair, Side};
use crate::error::{LabError, Result};
use crate::mm_space::{DiscreteSpace, DistanceTable};
use crate::numeric::{inf_norm, least_squares};

/// Kernel values below this are treated as float noise by the Gaussian fit.
pub const KERNEL_NOISE_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Padé scaling-and-squaring matrix exponential.
    #[default]
    Dense,
    /// Eigen-decomposition of `M^{1/2} L M^{-1/2}`; requires `L` self-adjoint
    /// in `L²(m)`.
    Spectral,
}

#[derive(Clone, Debug)]
struct SpectralCache {
    values: DVector<f64>,
    /// Columns are `M^{-1/2} v_k`.
    left: DMatrix<f64>,
    /// Rows are `v_kᵀ M^{1/2}`.
    right: DMatrix<f64>,
}

/// `T_t = e^{tL}` for one side of a generator pair.
#[derive(Clone, Debug)]
pub struct SemigroupEvaluator {
    l: DMatrix<f64>,
    measure: Vec<f64>,
    method: Method,
    spectral: Option<SpectralCache>,
}

fn check_time(t: f64) -> Result<()> {
    if t.is_finite() && t >= 0.0 {
        Ok(())
    } else {
        Err(LabError::InvalidArgument(format!("time must be finite and ≥ 0, got {t}")))
    }
}

impl SemigroupEvaluator {
    pub fn new(pair: &GeneratorPair, side: Side, method: Method) -> Result<Self> {
        Self::from_generator(pair.side(side).clone(), pair.measure.clone(), method)
    }

    pub fn from_generator(l: DMatrix<f64>, measure: Vec<f64>, method: Method) -> Result<Self> {
        let n = measure.len();
        if l.nrows() != n || l.ncols() != n {
            return Err(LabError::SizeMismatch {
                what: "generator",
                expected: n,
                got: l.nrows(),
            });
        }
        let spectral = match method {
            Method::Dense => None,
            Method::Spectral => Some(spectral_cache(&l, &measure)?),
        };
        Ok(Self {
            l,
            measure,
            method,
            spectral,
        })
    }

    pub fn generator(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn n(&self) -> usize {
        self.measure.len()
    }

    /// The transition matrix `T_t` with `(T_t f)(x) = Σ_y T_t(x,y) f(y)`.
    pub fn transition(&self, t: f64) -> Result<DMatrix<f64>> {
        check_time(t)?;
        if t == 0.0 {
            return Ok(DMatrix::identity(self.n(), self.n()));
        }
        Ok(match &self.spectral {
            Some(s) => {
                let mut left = s.left.clone();
                for (k, mut col) in left.column_iter_mut().enumerate() {
                    col *= (t * s.values[k]).exp();
                }
                left * &s.right
            }
            None => (&self.l * t).exp(),
        })
    }

    /// `1 − T_t 1 = ∫₀ᵗ T_s k ds` with `k = −L1`, computed without the
    /// cancellation of subtracting `T_t 1` from 1.
    ///
    /// For a sub-Markov generator (nonnegative off-diagonals, `k ≥ 0`) the
    /// integral is the uniformization series
    /// `Λ⁻¹ Σ_j P(N_{Λt} > j) Pʲ k` with `P = I + L/Λ ≥ 0`, whose terms are all
    /// nonnegative, so every entry keeps full relative accuracy. Otherwise the
    /// top-right block of `exp(t [[L, k], [0, 0]])` is used.
    /// In the sub-Markov case the result is capped at 1.
    pub fn mass_deficit(&self, t: f64) -> Result<VertexField> {
        check_time(t)?;
        let n = self.n();
        let mut k: Vec<f64> = (0..n).map(|x| -self.l.row(x).sum()).collect();
        if t == 0.0 {
            return Ok(VertexField::zeros(n));
        }
        let lam = (0..n).map(|x| -self.l[(x, x)]).fold(0.0, f64::max);
        // rounding-level negatives count as zero rates
        let noise = 1e-13 * lam;
        let sub_markov = k.iter().all(|&v| v >= -noise)
            && (0..n).all(|x| (0..n).all(|y| x == y || self.l[(x, y)] >= -noise));
        if sub_markov && lam > 0.0 && lam * t < 600.0 {
            k.iter_mut().for_each(|v| *v = v.max(0.0));
            let mut p = &self.l / lam;
            for x in 0..n {
                for y in 0..n {
                    if x != y {
                        p[(x, y)] = p[(x, y)].max(0.0);
                    }
                }
                p[(x, x)] += 1.0;
            }
            let mu = lam * t;
            // Poisson(μ) pmf until the remaining mass is negligible
            let mut pmf = vec![(-mu).exp()];
            let mut cum = pmf[0];
            let cap = (mu + 40.0 * mu.sqrt() + 100.0) as usize;
            while pmf.len() < cap && (1.0 - cum > 1e-18 || (pmf.len() as f64) < mu) {
                let j = pmf.len() as f64;
                let next = pmf[pmf.len() - 1] * mu / j;
                cum += next;
                pmf.push(next);
            }
            let mut tails = vec![0.0; pmf.len()];
            let mut acc = 0.0;
            for j in (0..pmf.len()).rev() {
                tails[j] = acc;
                acc += pmf[j];
            }
            let mut v = DVector::from_column_slice(&k);
            let mut out = DVector::zeros(n);
            for &w in &tails {
                out.axpy(w / lam, &v, 1.0);
                v = &p * v;
            }
            // a probability; the truncated series can overshoot 1 by rounding
            // when nearly all mass is killed
            return Ok(VertexField(out.iter().map(|v| v.min(1.0)).collect()));
        }
        let mut aug = DMatrix::zeros(n + 1, n + 1);
        aug.view_mut((0, 0), (n, n)).copy_from(&self.l);
        for x in 0..n {
            aug[(x, n)] = k[x];
        }
        let e = (aug * t).exp();
        let cap = if sub_markov { 1.0 } else { f64::INFINITY };
        Ok(VertexField((0..n).map(|x| e[(x, n)].min(cap)).collect()))
    }

    pub fn evolve(&self, f: &[f64], t: f64) -> Result<VertexField> {
        self.check_len(f)?;
        let tt = self.transition(t)?;
        Ok(apply(&tt, f))
    }

    /// Evolves several fields over a nondecreasing time grid, reusing `T_Δ`
    /// for repeated increments. Result is indexed `[time][field]`.
    pub fn evolve_grid(&self, fields: &[&[f64]], times: &[f64]) -> Result<Vec<Vec<VertexField>>> {
        for f in fields {
            self.check_len(f)?;
        }
        let mut out = Vec::with_capacity(times.len());
        let mut current: Vec<DVector<f64>> = fields.iter().map(|f| DVector::from_column_slice(f)).collect();
        let mut prev = 0.0;
        let mut cached: Option<(f64, DMatrix<f64>)> = None;
        for &t in times {
            check_time(t)?;
            if t < prev {
                return Err(LabError::InvalidArgument("time grid must be nondecreasing".into()));
            }
            let dt = t - prev;
            if dt > 0.0 {
                let reuse = matches!(&cached, Some((d, _)) if (d - dt).abs() <= 1e-14 * dt.max(1.0));
                if !reuse {
                    cached = Some((dt, self.transition(dt)?));
                }
                let step = &cached.as_ref().expect("step cached").1;
                for u in current.iter_mut() {
                    *u = step * &*u;
                }
            }
            out.push(current.iter().map(|u| VertexField(u.as_slice().to_vec())).collect());
            prev = t;
        }
        Ok(out)
    }

    /// `(α − L)⁻¹`.
    pub fn resolvent_matrix(&self, alpha: f64) -> Result<DMatrix<f64>> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(LabError::InvalidArgument(format!("resolvent needs alpha > 0, got {alpha}")));
        }
        let n = self.n();
        let a = DMatrix::identity(n, n) * alpha - &self.l;
        a.lu()
            .try_inverse()
            .ok_or_else(|| LabError::Singular(format!("α − L at α = {alpha}")))
    }

    /// `G_α f = (α − L)⁻¹ f`.
    pub fn resolvent(&self, f: &[f64], alpha: f64) -> Result<VertexField> {
        self.check_len(f)?;
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(LabError::InvalidArgument(format!("resolvent needs alpha > 0, got {alpha}")));
        }
        let n = self.n();
        let a = DMatrix::identity(n, n) * alpha - &self.l;
        let u = a
            .lu()
            .solve(&DVector::from_column_slice(f))
            .ok_or_else(|| LabError::Singular(format!("α − L at α = {alpha}")))?;
        Ok(VertexField(u.as_slice().to_vec()))
    }

    /// `‖T_{t+s} − T_t T_s‖ / ‖T_{t+s}‖` in the max-row-sum norm.
    pub fn semigroup_law_defect(&self, t: f64, s: f64) -> Result<f64> {
        let ts = self.transition(t + s)?;
        let prod = self.transition(t)? * self.transition(s)?;
        Ok(inf_norm(&(&ts - prod)) / inf_norm(&ts).max(f64::MIN_POSITIVE))
    }

    /// Relative defect between a Richardson-extrapolated central difference of
    /// `t ↦ T_t f` and `L T_t f`.
    pub fn time_derivative_defect(&self, f: &[f64], t: f64) -> Result<f64> {
        self.check_len(f)?;
        check_time(t)?;
        let norm = inf_norm(&self.l).max(1e-300);
        let h = (1e-2 / norm).min(t.max(1e-300) * 0.5).max(1e-300);
        let central = |h: f64| -> Result<DVector<f64>> {
            let up = self.transition(t + h)? * DVector::from_column_slice(f);
            let down = if t - h >= 0.0 {
                self.transition(t - h)? * DVector::from_column_slice(f)
            } else {
                return Err(LabError::InvalidArgument("derivative check needs t > 0".into()));
            };
            Ok((up - down) / (2.0 * h))
        };
        let d1 = central(h)?;
        let d2 = central(h / 2.0)?;
        let richardson = (d2 * 4.0 - d1) / 3.0;
        let u = self.transition(t)? * DVector::from_column_slice(f);
        let lu = &self.l * u;
        let scale = lu.amax().max(f64::MIN_POSITIVE);
        Ok((richardson - lu).amax() / scale)
    }

    /// `max |G_α f − ∫₀^∞ e^{−αt} T_t f dt|` with the integral evaluated by
    /// 16-point Gauss–Legendre panels on a geometric time grid.
    pub fn laplace_defect(&self, f: &[f64], alpha: f64) -> Result<f64> {
        let g = self.resolvent(f, alpha)?;
        let norm = inf_norm(&self.l).max(alpha);
        let t_end = 60.0 / alpha;
        let mut a = 0.0;
        let mut b = 1e-3 / norm;
        let fv = DVector::from_column_slice(f);
        let mut acc = DVector::zeros(self.n());
        let (nodes, weights) = gauss_legendre_16();
        while a < t_end {
            let half = 0.5 * (b - a);
            let mid = 0.5 * (b + a);
            for (xi, wi) in nodes.iter().zip(weights.iter()) {
                let t = mid + half * xi;
                let u = self.transition(t)? * &fv;
                acc += u * (wi * half * (-alpha * t).exp());
            }
            a = b;
            b = (2.0 * b).min(t_end.max(b * 1.0000001));
            if b <= a {
                break;
            }
        }
        Ok((acc - DVector::from_column_slice(&g)).amax())
    }

    fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.n() {
            return Err(LabError::SizeMismatch {
                what: "vertex field",
                expected: self.n(),
                got: f.len(),
            });
        }
        Ok(())
    }
}

fn apply(m: &DMatrix<f64>, f: &[f64]) -> VertexField {
    VertexField((m * DVector::from_column_slice(f)).as_slice().to_vec())
}

fn spectral_cache(l: &DMatrix<f64>, measure: &[f64]) -> Result<SpectralCache> {
    let n = measure.len();
    let sq: Vec<f64> = measure.iter().map(|m| m.sqrt()).collect();
    let mut s = DMatrix::zeros(n, n);
    let mut asym = 0.0_f64;
    for x in 0..n {
        for y in 0..n {
            s[(x, y)] = sq[x] * l[(x, y)] / sq[y];
        }
    }
    for x in 0..n {
        for y in 0..x {
            asym = asym.max((s[(x, y)] - s[(y, x)]).abs());
        }
    }
    let scale = s.amax().max(f64::MIN_POSITIVE);
    if asym > 1e-12 * scale {
        return Err(LabError::InvalidArgument(format!(
            "spectral method needs a generator self-adjoint in L²(m); asymmetry {asym:e}"
        )));
    }
    let sym = (&s + s.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut left = eig.eigenvectors.clone();
    let mut right = eig.eigenvectors.transpose();
    for x in 0..n {
        left.row_mut(x).scale_mut(1.0 / sq[x]);
        right.column_mut(x).scale_mut(sq[x]);
    }
    Ok(SpectralCache {
        values: eig.eigenvalues,
        left,
        right,
    })
}

fn gauss_legendre_16() -> ([f64; 16], [f64; 16]) {
    const X: [f64; 8] = [
        0.095_012_509_837_637_44,
        0.281_603_550_779_258_9,
        0.458_016_777_657_227_4,
        0.617_876_244_402_643_7,
        0.755_404_408_355_003,
        0.865_631_202_387_831_7,
        0.944_575_023_073_232_6,
        0.989_400_934_991_649_9,
    ];
    const W: [f64; 8] = [
        0.189_450_610_455_068_5,
        0.182_603_415_044_923_6,
        0.169_156_519_395_002_5,
        0.149_595_988_816_576_7,
        0.124_628_971_255_533_9,
        0.095_158_511_682_492_78,
        0.062_253_523_938_647_89,
        0.027_152_459_411_754_1,
    ];
    let mut x = [0.0; 16];
    let mut w = [0.0; 16];
    for i in 0..8 {
        x[2 * i] = -X[i];
        x[2 * i + 1] = X[i];
        w[2 * i] = W[i];
        w[2 * i + 1] = W[i];
    }
    (x, w)
}

/// `max |E_α(G_α f, g) − (f, g)_m| / max|(f,g)_m|` over indicator pairs,
/// using the assembled table for `E`.
pub fn resolvent_identity_defect(assembly: &FormAssembly, evaluator: &SemigroupEvaluator, alpha: f64) -> Result<f64> {
    let g_alpha = evaluator.resolvent_matrix(alpha)?;
    let n = evaluator.n();
    let m = evaluator.measure();
    let b = assembly.matrix();
    // E_α(G_α e_j, e_i) = Σ_x G(x,j) B(x,i) + α G(i,j) m(i)
    let lhs = b.transpose() * &g_alpha;
    let mut worst = 0.0_f64;
    let mut scale = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            let e = lhs[(i, j)] + alpha * g_alpha[(i, j)] * m[i];
            let exact = if i == j { m[i] } else { 0.0 };
            worst = worst.max((e - exact).abs());
            scale = scale.max(exact.abs());
        }
    }
    Ok(worst / scale)
}

/// `‖G_α − G_β − (β−α)G_αG_β‖ / ‖G_α‖`.
pub fn resolvent_equation_defect(evaluator: &SemigroupEvaluator, alpha: f64, beta: f64) -> Result<f64> {
    let ga = evaluator.resolvent_matrix(alpha)?;
    let gb = evaluator.resolvent_matrix(beta)?;
    let lhs = &ga - &gb;
    let rhs = (&ga * &gb) * (beta - alpha);
    Ok(inf_norm(&(lhs - rhs)) / inf_norm(&ga).max(f64::MIN_POSITIVE))
}

/// `|(T_t f, g)_m − (f, T̂_t g)_m| / (‖f‖ ‖g‖)` with `L²(m)` norms.
pub fn duality_defect(pair: &GeneratorPair, f: &[f64], g: &[f64], t: f64, method: Method) -> Result<f64> {
    let fwd = SemigroupEvaluator::new(pair, Side::Primal, method)?;
    let bwd = SemigroupEvaluator::new(pair, Side::Dual, method)?;
    let tf = fwd.evolve(f, t)?;
    let tg = bwd.evolve(g, t)?;
    let m = &pair.measure;
    let ip = |u: &[f64], v: &[f64]| -> f64 { (0..m.len()).map(|x| u[x] * v[x] * m[x]).sum() };
    let lhs = ip(&tf, g);
    let rhs = ip(f, &tg);
    let scale = (ip(f, f) * ip(g, g)).sqrt().max(f64::MIN_POSITIVE);
    Ok((lhs - rhs).abs() / scale)
}

/// `p(t,x,y) = T_t(x,y)/m(y)`.
#[derive(Clone, Debug)]
pub struct HeatKernel {
    pub t: f64,
    pub p: DMatrix<f64>,
    pub measure: Vec<f64>,
}

impl HeatKernel {
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.p[(x, y)]
    }

    /// `(T_t 1)(x) = Σ_y p(t,x,y) m(y)`.
    pub fn row_mass(&self) -> Vec<f64> {
        (0..self.p.nrows())
            .map(|x| (0..self.p.ncols()).map(|y| self.p[(x, y)] * self.measure[y]).sum())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovReport {
    pub positivity: bool,
    pub contraction: bool,
    /// `‖T_t 1 − 1‖_∞`.
    pub conservative_defect: f64,
    pub min_kernel: f64,
    pub max_row_mass: f64,
}

pub fn heat_kernel(evaluator: &SemigroupEvaluator, t: f64) -> Result<(HeatKernel, MarkovReport)> {
    if !(t > 0.0) {
        return Err(LabError::InvalidArgument(format!("heat kernel needs t > 0, got {t}")));
    }
    let tt = evaluator.transition(t)?;
    let m = evaluator.measure().to_vec();
    let n = m.len();
    let mut p = tt.clone();
    for y in 0..n {
        p.column_mut(y).scale_mut(1.0 / m[y]);
    }
    let kernel = HeatKernel { t, p, measure: m };
    let mass = kernel.row_mass();
    let min_kernel = kernel.p.min();
    let max_row_mass = mass.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let conservative_defect = mass.iter().fold(0.0_f64, |acc, v| acc.max((v - 1.0).abs()));
    let report = MarkovReport {
        positivity: min_kernel >= -1e-12,
        contraction: max_row_mass <= 1.0 + 1e-12,
        conservative_defect,
        min_kernel,
        max_row_mass,
    };
    Ok((kernel, report))
}

/// Cheeger Laplacian `Δ = M⁻¹(W − D)` with `W` the conductance table.
pub fn cheeger_laplacian(space: &DiscreteSpace) -> DMatrix<f64> {
    let n = space.n_vertices();
    let m = space.measure();
    let mut lap = DMatrix::zeros(n, n);
    for e in space.edges() {
        let (u, v, w) = (e.u, e.v, e.conductance);
        lap[(u, v)] += w / m[u];
        lap[(v, u)] += w / m[v];
        lap[(u, u)] -= w / m[u];
        lap[(v, v)] -= w / m[v];
    }
    lap
}

#[derive(Clone, Debug)]
pub struct Spectrum {
    /// `0 = λ_0 ≤ λ_1 ≤ …` with `−Δ u_k = λ_k u_k`.
    pub values: Vec<f64>,
    /// `m`-orthonormal eigenfunctions.
    pub vectors: Vec<VertexField>,
}

/// The first `k_max` eigenpairs of `−Δ`.
pub fn cheeger_spectrum(space: &DiscreteSpace, k_max: usize) -> Result<Spectrum> {
    let n = space.n_vertices();
    if k_max > n {
        return Err(LabError::InvalidArgument(format!(
            "k_max = {k_max} exceeds the {n} vertices"
        )));
    }
    let m = space.measure();
    let sq: Vec<f64> = m.iter().map(|v| v.sqrt()).collect();
    let lap = cheeger_laplacian(space);
    let mut s = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in 0..n {
            s[(x, y)] = -sq[x] * lap[(x, y)] / sq[y];
        }
    }
    let s = (&s + s.transpose()) * 0.5;
    let eig = s.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let mut values = Vec::with_capacity(k_max);
    let mut vectors = Vec::with_capacity(k_max);
    for &k in order.iter().take(k_max) {
        let mut u: Vec<f64> = (0..n).map(|x| eig.eigenvectors[(x, k)] / sq[x]).collect();
        let peak = u.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let lead = u
            .iter()
            .position(|v| v.abs() >= peak * (1.0 - 1e-9))
            .expect("nonempty eigenvector");
        if u[lead] < 0.0 {
            u.iter_mut().for_each(|v| *v = -*v);
        }
        values.push(eig.eigenvalues[k].max(0.0));
        vectors.push(VertexField(u));
    }
    Ok(Spectrum { values, vectors })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianFit {
    pub c1: f64,
    pub c2: f64,
    pub nu: f64,
    pub holds: bool,
    /// `max (p − bound)` over the grid; nonpositive when the bound holds.
    pub max_excess: f64,
    pub samples: usize,
    pub bishop_gromov: BishopGromovCheck,
}

/// Fits `p(t,x,y) ≤ (C₁/t^ν) exp(−C₂ d(x,y)²/t)` to a kernel set.
///
/// `log p` is regressed on `(1, −log t, −d²/t)` with `ν` clamped to the
/// bracket and `C₂ ≥ 1e-6`; `C₁` is then inflated by the largest positive
/// residual unless `c1_override` is supplied.
pub fn gaussian_bound_fit(
    kernels: &[HeatKernel],
    metric: &DistanceTable,
    nu_bracket: (f64, f64),
    c1_override: Option<f64>,
) -> Result<GaussianFit> {
    let (nu_lo, nu_hi) = nu_bracket;
    if !(nu_lo > 0.0 && nu_lo <= nu_hi) {
        return Err(LabError::InvalidArgument(format!(
            "invalid nu bracket ({nu_lo}, {nu_hi})"
        )));
    }
    if kernels.is_empty() {
        return Err(LabError::InvalidArgument("empty kernel set".into()));
    }
    let n = metric.len();
    let mut rows: Vec<(f64, f64, f64)> = Vec::new();
    let mut all: Vec<(f64, f64, f64)> = Vec::new();
    for k in kernels {
        if k.p.nrows() != n {
            return Err(LabError::SizeMismatch {
                what: "kernel",
                expected: n,
                got: k.p.nrows(),
            });
        }
        if !(k.t > 0.0) {
            return Err(LabError::InvalidArgument("kernel times must be positive".into()));
        }
        for x in 0..n {
            for y in 0..n {
                let d = metric.get(x, y);
                let p = k.p[(x, y)];
                all.push((k.t, d * d / k.t, p));
                if p >= KERNEL_NOISE_FLOOR {
                    rows.push((k.t, d * d / k.t, p));
                }
            }
        }
    }
    if rows.is_empty() {
        return Err(LabError::InvalidArgument(
            "degenerate grid: no kernel values above the noise floor".into(),
        ));
    }
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2.ln()));
    let fit3 = |rows: &[(f64, f64, f64)]| {
        let x = DMatrix::from_fn(rows.len(), 3, |i, j| match j {
            0 => 1.0,
            1 => -rows[i].0.ln(),
            _ => -rows[i].1,
        });
        least_squares(&x, &y)
    };
    let beta = fit3(&rows).ok_or_else(|| LabError::Singular("Gaussian fit".into()))?;
    let (mut log_c1, mut nu, mut c2) = (beta[0], beta[1], beta[2]);
    let clamped_nu = nu.clamp(nu_lo, nu_hi);
    if clamped_nu != nu || c2 < 1e-6 {
        nu = clamped_nu;
        // refit with ν fixed
        let y2 = DVector::from_iterator(rows.len(), rows.iter().map(|r| r.2.ln() + nu * r.0.ln()));
        let x2 = DMatrix::from_fn(rows.len(), 2, |i, j| if j == 0 { 1.0 } else { -rows[i].1 });
        let b2 = least_squares(&x2, &y2).ok_or_else(|| LabError::Singular("Gaussian fit".into()))?;
        log_c1 = b2[0];
        c2 = b2[1];
        if c2 < 1e-6 {
            c2 = 1e-6;
            log_c1 = rows.iter().map(|r| r.2.ln() + nu * r.0.ln() + c2 * r.1).sum::<f64>() / rows.len() as f64;
        }
    }
    let model = |t: f64, q: f64, log_c1: f64| log_c1 - nu * t.ln() - c2 * q;
    let c1 = match c1_override {
        Some(c) => c,
        None => {
            let worst = rows
                .iter()
                .map(|r| r.2.ln() - model(r.0, r.1, log_c1))
                .fold(f64::NEG_INFINITY, f64::max);
            (log_c1 + worst.max(0.0)).exp()
        }
    };
    let mut max_excess = f64::NEG_INFINITY;
    for &(t, q, p) in &all {
        let bound = c1 / t.powf(nu) * (-c2 * q).exp();
        max_excess = max_excess.max(p - bound);
    }
    let measure = &kernels[0].measure;
    let constant = (0..n)
        .map(|x| bishop_gromov_constant(metric, measure, x, nu))
        .fold(f64::INFINITY, f64::min);
    Ok(GaussianFit {
        c1,
        c2,
        nu,
        holds: max_excess <= KERNEL_NOISE_FLOOR,
        max_excess,
        samples: rows.len(),
        bishop_gromov: BishopGromovCheck {
            nu,
            constant,
            feasible: constant > 0.0,
        },
    })
}
