//! Assembly of the non-symmetric form, assumption checks, sector constant
//! and the generator pair `(L, L̂)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::calculus::{self, CoefficientSet, EdgeField, VertexField};
use crate::error::{LabError, Result};
use crate::mm_space::DiscreteSpace;
use crate::numeric::inf_norm;

/// Relative tolerance of the generator-difference identity.
pub const GENERATOR_IDENTITY_RTOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientBounds {
    pub a_sup: f64,
    pub a_min: f64,
    /// `‖|b_i|‖_∞` for `i = 1, 2`.
    pub b_norm_sup: [f64; 2],
    /// `‖div b_i‖_∞`.
    pub div_sup: [f64; 2],
    pub c_sup: f64,
    /// `‖|b₁ − b₂|‖_∞`, the quantity entering the sector constant.
    pub b_diff_norm_sup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    /// `min_e a(e) ≥ λ` with `λ > 0`.
    pub elliptic: bool,
    /// `c ≥ div b_i` pointwise, the vertexwise form of `∫(b_i(f) + cf) dm ≥ 0`.
    pub positivity: [bool; 2],
    /// Vertices where `c < div b_i`.
    pub violations: [Vec<usize>; 2],
    /// `a` is a symmetric field with strictly positive values.
    pub symmetric_a: bool,
    pub bounds: CoefficientBounds,
}

impl AssumptionReport {
    pub fn passes(&self) -> bool {
        self.elliptic && self.positivity[0] && self.positivity[1] && self.symmetric_a
    }
}

pub fn check_assumptions(space: &DiscreteSpace, coeffs: &CoefficientSet) -> Result<AssumptionReport> {
    coeffs.validate_shape(space)?;
    let a_min = coeffs.a.values.iter().copied().fold(f64::INFINITY, f64::min);
    let a_sup = coeffs.a.values.iter().copied().fold(0.0, |acc: f64, v| acc.max(v.abs()));
    let a_min = if a_min.is_finite() { a_min } else { 0.0 };
    let elliptic = coeffs.lambda > 0.0 && coeffs.a.values.iter().all(|&v| v >= coeffs.lambda);
    let symmetric_a = coeffs.a.symmetric && coeffs.a.values.iter().all(|&v| v > 0.0);

    let mut positivity = [true; 2];
    let mut violations = [Vec::new(), Vec::new()];
    let mut b_norm_sup = [0.0; 2];
    let mut div_sup = [0.0; 2];
    for (i, theta) in [&coeffs.theta1, &coeffs.theta2].into_iter().enumerate() {
        let div = calculus::divergence(space, theta)?;
        let norm = calculus::derivation_norm(space, theta)?;
        b_norm_sup[i] = norm.sup_norm();
        div_sup[i] = div.sup_norm();
        for x in 0..space.n_vertices() {
            if coeffs.c[x] < div[x] {
                positivity[i] = false;
                violations[i].push(x);
            }
        }
    }
    let diff = coeffs.theta1.difference(&coeffs.theta2)?;
    let b_diff_norm_sup = calculus::derivation_norm(space, &diff)?.sup_norm();
    Ok(AssumptionReport {
        elliptic,
        positivity,
        violations,
        symmetric_a,
        bounds: CoefficientBounds {
            a_sup,
            a_min,
            b_norm_sup,
            div_sup,
            c_sup: coeffs.c.sup_norm(),
            b_diff_norm_sup,
        },
    })
}

/// Dense representation `E(f,g) = fᵀ B g` of the form.
#[derive(Clone, Debug)]
pub struct FormAssembly {
    space: DiscreteSpace,
    coeffs: CoefficientSet,
    matrix: DMatrix<f64>,
    sym: DMatrix<f64>,
    anti: DMatrix<f64>,
    lambda: f64,
    assumptions: AssumptionReport,
}

impl FormAssembly {
    pub fn space(&self) -> &DiscreteSpace {
        &self.space
    }

    pub fn coeffs(&self) -> &CoefficientSet {
        &self.coeffs
    }

    /// The table `B`.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// `(B + Bᵀ)/2`, the symmetric part `Ẽ`.
    pub fn symmetric_part(&self) -> &DMatrix<f64> {
        &self.sym
    }

    /// `(B − Bᵀ)/2`, the antisymmetric part `Ě`.
    pub fn antisymmetric_part(&self) -> &DMatrix<f64> {
        &self.anti
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn assumptions(&self) -> &AssumptionReport {
        &self.assumptions
    }

    /// Whether the coefficient set passed [`check_assumptions`].
    pub fn is_validated(&self) -> bool {
        self.assumptions.passes()
    }

    pub fn eval(&self, f: &[f64], g: &[f64]) -> f64 {
        let f = DVector::from_column_slice(f);
        let g = DVector::from_column_slice(g);
        f.dot(&(&self.matrix * g))
    }

    /// `E_α(f,g) = E(f,g) + α (f,g)_m`.
    pub fn eval_alpha(&self, alpha: f64, f: &[f64], g: &[f64]) -> f64 {
        self.eval(f, g) + alpha * self.space.inner(f, g)
    }
}

/// Assembles `B` edge by edge:
///
/// ```text
/// E(f,g) = Ch_a(f,g) + ∫ b₁(f) g dm + ∫ f b₂(g) dm + ∫ f g c dm
/// ```
pub fn assemble(space: &DiscreteSpace, coeffs: &CoefficientSet) -> Result<FormAssembly> {
    let assumptions = check_assumptions(space, coeffs)?;
    if !assumptions.passes() {
        log::warn!("assembling a coefficient set that fails the form assumptions");
    }
    let n = space.n_vertices();
    let mut b = DMatrix::<f64>::zeros(n, n);
    for (i, e) in space.edges().iter().enumerate() {
        let (u, v, w) = (e.u, e.v, e.conductance);
        let k = 0.5 * w * coeffs.a.values[i];
        b[(u, u)] += k;
        b[(v, v)] += k;
        b[(u, v)] -= k;
        b[(v, u)] -= k;

        // ∫ b₁(f) g dm = Σ_x g(x) ½ Σ_y w θ₁(x,y) (f(y) − f(x))
        let t1 = 0.5 * w * coeffs.theta1.values[i];
        b[(v, u)] += t1;
        b[(u, u)] -= t1;
        b[(u, v)] -= t1;
        b[(v, v)] += t1;

        // ∫ f b₂(g) dm = Σ_x f(x) ½ Σ_y w θ₂(x,y) (g(y) − g(x))
        let t2 = 0.5 * w * coeffs.theta2.values[i];
        b[(u, v)] += t2;
        b[(u, u)] -= t2;
        b[(v, u)] -= t2;
        b[(v, v)] += t2;
    }
    for x in 0..n {
        b[(x, x)] += coeffs.c[x] * space.measure()[x];
    }
    let bt = b.transpose();
    let sym = (&b + &bt) * 0.5;
    let anti = (&b - &bt) * 0.5;
    Ok(FormAssembly {
        space: space.clone(),
        coeffs: coeffs.clone(),
        matrix: b,
        sym,
        anti,
        lambda: coeffs.lambda,
        assumptions,
    })
}

/// Evaluates `E(f,g)` term by term from the calculus operations, without the
/// assembled table.
pub fn evaluate_form(space: &DiscreteSpace, coeffs: &CoefficientSet, f: &[f64], g: &[f64]) -> Result<f64> {
    let (_, ch_a) = calculus::carre_du_champ(space, f, g, Some(&coeffs.a))?;
    let (b1f, _) = calculus::apply_derivation(space, &coeffs.theta1, f)?;
    let (b2g, _) = calculus::apply_derivation(space, &coeffs.theta2, g)?;
    let fgc: Vec<f64> = (0..space.n_vertices()).map(|x| f[x] * g[x] * coeffs.c[x]).collect();
    Ok(ch_a + space.inner(&b1f, g) + space.inner(f, &b2g) + space.integrate(&fgc))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SectorConstant {
    /// `(1/λ)·‖|Ǎ|‖_∞ + 2·sqrt(2/λ)·‖|b₁−b₂|‖_∞ + 1` with `Ǎ = 0`.
    pub analytic: f64,
    /// `sup |E₁(f,g)| / (E₁(f)^{1/2} E₁(g)^{1/2})` over all nonzero pairs.
    pub measured: f64,
}

pub fn sector_constant(assembly: &FormAssembly) -> Result<SectorConstant> {
    let lambda = assembly.lambda;
    if !(lambda > 0.0) {
        return Err(LabError::InvalidArgument(format!(
            "sector constant needs lambda > 0, got {lambda}"
        )));
    }
    let antisymmetric_a_norm = 0.0;
    let analytic = antisymmetric_a_norm / lambda
        + 2.0 * (2.0 / lambda).sqrt() * assembly.assumptions.bounds.b_diff_norm_sup
        + 1.0;

    let m = DMatrix::from_diagonal(&DVector::from_column_slice(assembly.space.measure()));
    let e1 = &assembly.matrix + &m;
    let s1 = &assembly.sym + &m;
    let chol = s1.cholesky().ok_or_else(|| {
        LabError::InvalidCoefficients(
            "symmetric part of E₁ is not positive definite".into(),
        )
    })?;
    let l = chol.l();
    // K = L⁻¹ B₁ L⁻ᵀ, so E₁(f,g) = uᵀ K v with E₁(f) = |u|²
    let x = l
        .solve_lower_triangular(&e1)
        .ok_or_else(|| LabError::Singular("Cholesky factor".into()))?;
    let k = l
        .solve_lower_triangular(&x.transpose())
        .ok_or_else(|| LabError::Singular("Cholesky factor".into()))?
        .transpose();
    let measured = k.singular_values().max();
    Ok(SectorConstant { analytic, measured })
}

/// `|E₁(f,g)| / (E₁(f)^{1/2} E₁(g)^{1/2})` for one pair.
pub fn sector_ratio(assembly: &FormAssembly, f: &[f64], g: &[f64]) -> f64 {
    let num = assembly.eval_alpha(1.0, f, g).abs();
    let ef = assembly.eval_alpha(1.0, f, f);
    let eg = assembly.eval_alpha(1.0, g, g);
    num / (ef.sqrt() * eg.sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarkovStructure {
    pub min_off_diagonal: f64,
    pub min_off_diagonal_dual: f64,
    /// `(x, y, L(x,y))` for negative off-diagonal entries of `L`.
    pub negative_entries: Vec<(usize, usize, f64)>,
    pub negative_entries_dual: Vec<(usize, usize, f64)>,
}

impl MarkovStructure {
    pub fn is_markov(&self) -> bool {
        self.negative_entries.is_empty() && self.negative_entries_dual.is_empty()
    }

    fn of(l: &DMatrix<f64>, l_hat: &DMatrix<f64>) -> Self {
        // rates above −1e-12 times the largest diagonal entry are rounding
        // residue, e.g. from a = |θ₁ − θ₂| exactly
        let scan = |m: &DMatrix<f64>| {
            let tol = 1e-12 * (0..m.nrows()).map(|x| m[(x, x)].abs()).fold(0.0, f64::max);
            let mut min = f64::INFINITY;
            let mut neg = Vec::new();
            for x in 0..m.nrows() {
                for y in 0..m.ncols() {
                    if x != y {
                        let v = m[(x, y)];
                        min = min.min(v);
                        if v < -tol {
                            neg.push((x, y, v));
                        }
                    }
                }
            }
            (if min.is_finite() { min } else { 0.0 }, neg)
        };
        let (min_off_diagonal, negative_entries) = scan(l);
        let (min_off_diagonal_dual, negative_entries_dual) = scan(l_hat);
        Self {
            min_off_diagonal,
            min_off_diagonal_dual,
            negative_entries,
            negative_entries_dual,
        }
    }
}

/// Generator `L` and dual generator `L̂` with `E(f,g) = (−Lf, g)_m = (f, −L̂g)_m`.
#[derive(Clone, Debug)]
pub struct GeneratorPair {
    pub l: DMatrix<f64>,
    pub l_hat: DMatrix<f64>,
    pub measure: Vec<f64>,
    pub markov: MarkovStructure,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Primal,
    Dual,
}

impl GeneratorPair {
    /// Builds a pair from a primal generator and the measure, with
    /// `L̂ = M⁻¹ Lᵀ M`.
    pub fn from_primal(l: DMatrix<f64>, measure: Vec<f64>) -> Result<Self> {
        let n = measure.len();
        if l.nrows() != n || l.ncols() != n {
            return Err(LabError::SizeMismatch {
                what: "generator",
                expected: n,
                got: l.nrows(),
            });
        }
        let mut l_hat = DMatrix::zeros(n, n);
        for x in 0..n {
            for y in 0..n {
                l_hat[(x, y)] = l[(y, x)] * measure[y] / measure[x];
            }
        }
        let markov = MarkovStructure::of(&l, &l_hat);
        Ok(Self {
            l,
            l_hat,
            measure,
            markov,
        })
    }

    pub fn n(&self) -> usize {
        self.measure.len()
    }

    pub fn side(&self, side: Side) -> &DMatrix<f64> {
        match side {
            Side::Primal => &self.l,
            Side::Dual => &self.l_hat,
        }
    }

    /// The same pair with primal and dual exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            l: self.l_hat.clone(),
            l_hat: self.l.clone(),
            measure: self.measure.clone(),
            markov: MarkovStructure {
                min_off_diagonal: self.markov.min_off_diagonal_dual,
                min_off_diagonal_dual: self.markov.min_off_diagonal,
                negative_entries: self.markov.negative_entries_dual.clone(),
                negative_entries_dual: self.markov.negative_entries.clone(),
            },
        }
    }

    pub fn apply(&self, side: Side, f: &[f64]) -> VertexField {
        let v = self.side(side) * DVector::from_column_slice(f);
        VertexField(v.as_slice().to_vec())
    }
}

/// `L = −M⁻¹Bᵀ`, `L̂ = −M⁻¹B`.
pub fn generators(assembly: &FormAssembly) -> GeneratorPair {
    let m = assembly.space.measure();
    let n = m.len();
    let b = &assembly.matrix;
    let mut l = DMatrix::zeros(n, n);
    let mut l_hat = DMatrix::zeros(n, n);
    for x in 0..n {
        for y in 0..n {
            l[(x, y)] = -b[(y, x)] / m[x];
            l_hat[(x, y)] = -b[(x, y)] / m[x];
        }
    }
    let markov = MarkovStructure::of(&l, &l_hat);
    GeneratorPair {
        l,
        l_hat,
        measure: m.to_vec(),
        markov,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorDifference {
    /// `max |(L̂−L)f − [2b₁(f) − 2b₂(f) + f(div b₁ − div b₂)]|` over the basis.
    pub max_residual: f64,
    /// Same with the divergence terms entering as `−f div b₁ + f div b₂`.
    pub literal_variant_residual: f64,
    /// `‖L‖_∞`, the scale the residual is compared against.
    pub scale: f64,
    pub passes: bool,
}

/// Checks `(L̂ − L) f = 2b₁(f) − 2b₂(f) + f(div b₁ − div b₂)` on every
/// indicator `f = 1_{x}`.
pub fn generator_difference_check(space: &DiscreteSpace, coeffs: &CoefficientSet) -> Result<GeneratorDifference> {
    let pair = generators(&assemble(space, coeffs)?);
    let n = space.n_vertices();
    let div1 = calculus::divergence(space, &coeffs.theta1)?;
    let div2 = calculus::divergence(space, &coeffs.theta2)?;
    let diff = &pair.l_hat - &pair.l;
    let mut max_residual = 0.0_f64;
    let mut literal = 0.0_f64;
    let mut basis = vec![0.0; n];
    for j in 0..n {
        basis[j] = 1.0;
        let (b1, _) = calculus::apply_derivation(space, &coeffs.theta1, &basis)?;
        let (b2, _) = calculus::apply_derivation(space, &coeffs.theta2, &basis)?;
        for x in 0..n {
            let drift = 2.0 * b1[x] - 2.0 * b2[x];
            let derived = drift + basis[x] * (div1[x] - div2[x]);
            let literal_form = drift - basis[x] * div1[x] + basis[x] * div2[x];
            max_residual = max_residual.max((diff[(x, j)] - derived).abs());
            literal = literal.max((diff[(x, j)] - literal_form).abs());
        }
        basis[j] = 0.0;
    }
    let scale = inf_norm(&pair.l);
    Ok(GeneratorDifference {
        max_residual,
        literal_variant_residual: literal,
        scale,
        passes: max_residual <= GENERATOR_IDENTITY_RTOL * scale.max(f64::MIN_POSITIVE),
    })
}

/// Generator pair after upwinding.
#[derive(Clone, Debug)]
pub struct Upwinded {
    pub coeffs: CoefficientSet,
    pub pair: GeneratorPair,
    /// `max_e (a'(e) − a(e))`: the largest added diffusion, which bounds the
    /// relative form perturbation `|ΔE(f)| / Ch(f)`.
    pub modification_norm: f64,
    pub modified_edges: Vec<usize>,
}

/// Raises `a` to `|θ₁ − θ₂|` on edges where the centered drift would make an
/// off-diagonal entry of `L` or `L̂` negative. Row sums are unchanged.
pub fn markovize_upwind(space: &DiscreteSpace, coeffs: &CoefficientSet) -> Result<Upwinded> {
    coeffs.validate_shape(space)?;
    let drift = coeffs.theta1.difference(&coeffs.theta2)?;
    let mut a = coeffs.a.values.clone();
    let mut modified_edges = Vec::new();
    let mut modification_norm = 0.0_f64;
    for (i, e) in space.edges().iter().enumerate() {
        if e.conductance == 0.0 {
            continue;
        }
        let need = drift.values[i].abs();
        if a[i] < need {
            modification_norm = modification_norm.max(need - a[i]);
            a[i] = need;
            modified_edges.push(i);
        }
    }
    let coeffs = CoefficientSet {
        a: EdgeField::symmetric(a),
        ..coeffs.clone()
    };
    let pair = generators(&assemble(space, &coeffs)?);
    Ok(Upwinded {
        coeffs,
        pair,
        modification_norm,
        modified_edges,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mm_space::{AmbientSpace, Edge};
    use std::sync::Arc;

    fn two_vertex() -> DiscreteSpace {
        let ambient = Arc::new(AmbientSpace::from_coords(1, vec![0.0, 1.0]).unwrap());
        DiscreteSpace::new(
            ambient,
            vec![0, 1],
            vec![Edge { u: 0, v: 1, length: 1.0, conductance: 1.0 }],
            vec![1.0, 1.0],
            0,
        )
        .unwrap()
    }

    fn drift_two_vertex(c: [f64; 2]) -> (DiscreteSpace, CoefficientSet) {
        let s = two_vertex();
        let coeffs = CoefficientSet {
            theta1: EdgeField::antisymmetric(vec![1.0]),
            c: VertexField(c.to_vec()),
            ..CoefficientSet::trivial(&s)
        };
        (s, coeffs)
    }

    #[test]
    fn trivial_form_is_cheeger_energy() {
        let s = two_vertex();
        let asm = assemble(&s, &CoefficientSet::trivial(&s)).unwrap();
        let f = [0.3, -1.2];
        let ch = calculus::cheeger_energy(&s, &f).unwrap();
        assert!((asm.eval(&f, &f) - ch).abs() < 1e-15);
    }

    #[test]
    fn two_vertex_drift_example() {
        let (s, coeffs) = drift_two_vertex([1.0, 0.0]);
        let asm = assemble(&s, &coeffs).unwrap();
        let e = asm.eval(&[0.0, 1.0], &[1.0, 0.0]);
        assert!(e.abs() < 1e-15, "E(f,g) = {e}");
        let direct = evaluate_form(&s, &coeffs, &[0.0, 1.0], &[1.0, 0.0]).unwrap();
        assert!(direct.abs() < 1e-15);
    }

    #[test]
    fn trivial_assumptions() {
        let s = two_vertex();
        let r = check_assumptions(&s, &CoefficientSet::trivial(&s)).unwrap();
        assert!(r.passes());
        assert_eq!(r.bounds.a_sup, 1.0);
        assert_eq!(r.bounds.b_norm_sup, [0.0, 0.0]);
        assert_eq!(r.bounds.div_sup, [0.0, 0.0]);
        assert_eq!(r.bounds.c_sup, 0.0);
    }

    #[test]
    fn positivity_pointwise() {
        let (s, ok) = drift_two_vertex([1.0, 0.0]);
        assert!(check_assumptions(&s, &ok).unwrap().positivity[0]);
        let (s, bad) = drift_two_vertex([0.0, 0.0]);
        let r = check_assumptions(&s, &bad).unwrap();
        assert!(!r.positivity[0]);
        assert_eq!(r.violations[0], vec![0]);
    }

    #[test]
    fn two_vertex_generator() {
        let s = two_vertex();
        let pair = generators(&assemble(&s, &CoefficientSet::trivial(&s)).unwrap());
        let expected = DMatrix::from_row_slice(2, 2, &[-0.5, 0.5, 0.5, -0.5]);
        assert!((&pair.l - expected).abs().max() < 1e-15);
        assert!(pair.markov.is_markov());
    }

    #[test]
    fn sector_constant_two_vertex_drift() {
        let (s, coeffs) = drift_two_vertex([1.0, 0.0]);
        let asm = assemble(&s, &coeffs).unwrap();
        let sc = sector_constant(&asm).unwrap();
        // |b₁ − b₂| = sqrt(w θ² / 2m) = 1/√2 on both vertices
        assert!((sc.analytic - 3.0).abs() < 1e-12);
        assert!(sc.measured <= sc.analytic);
        // dense grid of directions stays below the exact supremum
        let mut grid_max = 0.0_f64;
        for i in 0..72 {
            for j in 0..72 {
                let (a, b) = (i as f64 * 5f64.to_radians(), j as f64 * 5f64.to_radians());
                let f = [a.cos(), a.sin()];
                let g = [b.cos(), b.sin()];
                grid_max = grid_max.max(sector_ratio(&asm, &f, &g));
            }
        }
        assert!(grid_max <= sc.measured * (1.0 + 1e-12));
        assert!(sc.measured - grid_max < 1e-2);
    }

    #[test]
    fn sector_constant_rejects_nonpositive_lambda() {
        let s = two_vertex();
        let coeffs = CoefficientSet {
            lambda: 0.0,
            ..CoefficientSet::trivial(&s)
        };
        let asm = assemble(&s, &coeffs).unwrap();
        assert!(sector_constant(&asm).is_err());
    }

    #[test]
    fn generator_difference_two_vertex() {
        let (s, coeffs) = drift_two_vertex([1.0, -1.0]);
        let d = generator_difference_check(&s, &coeffs).unwrap();
        assert!(d.max_residual < 1e-15);
        assert!(d.passes);
        assert!(d.literal_variant_residual > 0.5);
    }

    #[test]
    fn markovize_leaves_markov_generators_alone() {
        let s = two_vertex();
        let coeffs = CoefficientSet::trivial(&s);
        let up = markovize_upwind(&s, &coeffs).unwrap();
        assert_eq!(up.modification_norm, 0.0);
        assert!(up.modified_edges.is_empty());
        let pair = generators(&assemble(&s, &coeffs).unwrap());
        assert_eq!(up.pair.l, pair.l);
    }

    #[test]
    fn markovize_large_drift() {
        let s = two_vertex();
        let coeffs = CoefficientSet {
            theta1: EdgeField::antisymmetric(vec![10.0]),
            c: VertexField(vec![10.0, 0.0]),
            ..CoefficientSet::trivial(&s)
        };
        let before = generators(&assemble(&s, &coeffs).unwrap());
        assert!(!before.markov.is_markov());
        let up = markovize_upwind(&s, &coeffs).unwrap();
        assert!(up.pair.markov.is_markov());
        assert_eq!(up.modification_norm, 9.0);
        let ones = [1.0, 1.0];
        let r0 = before.apply(Side::Primal, &ones);
        let r1 = up.pair.apply(Side::Primal, &ones);
        for x in 0..2 {
            assert!((r0[x] - r1[x]).abs() < 1e-14);
        }
    }
}
