//! Discrete first-order calculus on a weighted graph.
//!
//! With conductance `w` and vertex measure `m`:
//!
//! ```text
//! Γ_a(f,g)(x) = 1/(2m(x)) Σ_y w(x,y) a(x,y) (f(y)−f(x)) (g(y)−g(x))
//! b(f)(x)     = 1/(2m(x)) Σ_y w(x,y) θ(x,y) (f(y)−f(x))
//! |b|(x)      = sqrt( 1/(2m(x)) Σ_y w(x,y) θ(x,y)² )
//! div b(x)    = 1/m(x)     Σ_y w(x,y) θ(x,y)
//! ```
//!
//! `θ` is an antisymmetric edge field, so `−∫ b(f) dm = ∫ f div b dm` holds
//! exactly. The Cheeger energy is `Ch(f,g) = ½ ∫ Γ_1(f,g) dm`.

use std::ops::{Deref, DerefMut};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::mm_space::DiscreteSpace;

/// One real value per vertex.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexField(pub Vec<f64>);

impl VertexField {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    pub fn constant(n: usize, value: f64) -> Self {
        Self(vec![value; n])
    }

    pub fn from_fn(n: usize, f: impl FnMut(usize) -> f64) -> Self {
        Self((0..n).map(f).collect())
    }

    pub fn sup_norm(&self) -> f64 {
        crate::numeric::max_abs(self.0.iter().copied())
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for VertexField {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for VertexField {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

impl From<Vec<f64>> for VertexField {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

/// One value per edge in canonical orientation `(u, v)`, `u < v`.
///
/// The antisymmetric variant stores `θ(u, v)` and implies `θ(v, u) = −θ(u, v)`;
/// the symmetric variant stores `a(u, v) = a(v, u)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeField {
    pub values: Vec<f64>,
    pub symmetric: bool,
}

impl EdgeField {
    pub fn antisymmetric(values: Vec<f64>) -> Self {
        Self {
            values,
            symmetric: false,
        }
    }

    pub fn symmetric(values: Vec<f64>) -> Self {
        Self {
            values,
            symmetric: true,
        }
    }

    pub fn zeros_antisymmetric(n_edges: usize) -> Self {
        Self::antisymmetric(vec![0.0; n_edges])
    }

    pub fn ones(n_edges: usize) -> Self {
        Self::symmetric(vec![1.0; n_edges])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Value seen from `x` along an incidence with orientation `sign`.
    #[inline]
    pub fn oriented(&self, edge: usize, sign: f64) -> f64 {
        if self.symmetric {
            self.values[edge]
        } else {
            sign * self.values[edge]
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * s).collect(),
            symmetric: self.symmetric,
        }
    }

    /// `self − other`, both antisymmetric.
    pub fn difference(&self, other: &EdgeField) -> Result<Self> {
        if self.symmetric || other.symmetric {
            return Err(LabError::InvalidArgument(
                "difference is defined for antisymmetric fields".into(),
            ));
        }
        if self.len() != other.len() {
            return Err(LabError::SizeMismatch {
                what: "edge field",
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(Self::antisymmetric(
            self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
        ))
    }
}

/// The coefficients `(A, λ, b₁, b₂, c)` of the non-symmetric form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientSet {
    pub a: EdgeField,
    pub lambda: f64,
    pub theta1: EdgeField,
    pub theta2: EdgeField,
    pub c: VertexField,
}

impl CoefficientSet {
    /// Checks sizes, symmetry flags and finiteness. Ellipticity and the
    /// positivity conditions are reported by
    /// [`crate::dirichlet_form::check_assumptions`], not enforced here.
    pub fn new(
        space: &DiscreteSpace,
        a: EdgeField,
        lambda: f64,
        theta1: EdgeField,
        theta2: EdgeField,
        c: VertexField,
    ) -> Result<Self> {
        let set = Self {
            a,
            lambda,
            theta1,
            theta2,
            c,
        };
        set.validate_shape(space)?;
        Ok(set)
    }

    /// `a = 1`, `λ = 1`, `θ₁ = θ₂ = 0`, `c = 0`: the Cheeger energy.
    pub fn trivial(space: &DiscreteSpace) -> Self {
        Self {
            a: EdgeField::ones(space.n_edges()),
            lambda: 1.0,
            theta1: EdgeField::zeros_antisymmetric(space.n_edges()),
            theta2: EdgeField::zeros_antisymmetric(space.n_edges()),
            c: VertexField::zeros(space.n_vertices()),
        }
    }

    pub fn validate_shape(&self, space: &DiscreteSpace) -> Result<()> {
        let ne = space.n_edges();
        for (name, field) in [("a", &self.a), ("theta1", &self.theta1), ("theta2", &self.theta2)] {
            if field.len() != ne {
                return Err(LabError::InvalidCoefficients(format!(
                    "{name} has {} values for {ne} edges",
                    field.len()
                )));
            }
            if field.values.iter().any(|v| !v.is_finite()) {
                return Err(LabError::InvalidCoefficients(format!("{name} is not finite")));
            }
        }
        if !self.a.symmetric {
            return Err(LabError::InvalidCoefficients("a must be a symmetric edge field".into()));
        }
        if self.theta1.symmetric || self.theta2.symmetric {
            return Err(LabError::InvalidCoefficients(
                "theta1/theta2 must be antisymmetric edge fields".into(),
            ));
        }
        if self.c.len() != space.n_vertices() {
            return Err(LabError::InvalidCoefficients(format!(
                "c has {} values for {} vertices",
                self.c.len(),
                space.n_vertices()
            )));
        }
        if self.c.iter().any(|v| !v.is_finite()) {
            return Err(LabError::InvalidCoefficients("c is not finite".into()));
        }
        if !(self.lambda.is_finite()) {
            return Err(LabError::InvalidCoefficients("lambda is not finite".into()));
        }
        Ok(())
    }
}

fn check_vertex(space: &DiscreteSpace, what: &'static str, f: &[f64]) -> Result<()> {
    if f.len() != space.n_vertices() {
        return Err(LabError::SizeMismatch {
            what,
            expected: space.n_vertices(),
            got: f.len(),
        });
    }
    Ok(())
}

fn check_edge(space: &DiscreteSpace, what: &'static str, e: &EdgeField) -> Result<()> {
    if e.len() != space.n_edges() {
        return Err(LabError::SizeMismatch {
            what,
            expected: space.n_edges(),
            got: e.len(),
        });
    }
    Ok(())
}

/// Pointwise carré du champ `Γ_a(f,g)` and the energy `½∫Γ_a(f,g) dm`.
/// `a = None` means `a ≡ 1`.
pub fn carre_du_champ(
    space: &DiscreteSpace,
    f: &[f64],
    g: &[f64],
    a: Option<&EdgeField>,
) -> Result<(VertexField, f64)> {
    check_vertex(space, "f", f)?;
    check_vertex(space, "g", g)?;
    if let Some(a) = a {
        check_edge(space, "a", a)?;
    }
    let n = space.n_vertices();
    let mut gamma = vec![0.0; n];
    for (i, e) in space.edges().iter().enumerate() {
        let weight = e.conductance * a.map_or(1.0, |a| a.values[i]);
        let term = weight * (f[e.v] - f[e.u]) * (g[e.v] - g[e.u]);
        gamma[e.u] += term;
        gamma[e.v] += term;
    }
    for (x, val) in gamma.iter_mut().enumerate() {
        *val /= 2.0 * space.measure()[x];
    }
    let energy = 0.5 * space.integrate(&gamma);
    Ok((VertexField(gamma), energy))
}

/// `Ch(f) = ½ ∫ Γ(f,f) dm`.
pub fn cheeger_energy(space: &DiscreteSpace, f: &[f64]) -> Result<f64> {
    Ok(carre_du_champ(space, f, f, None)?.1)
}

/// `|∇f| = Γ(f,f)^{1/2}` pointwise.
pub fn gradient_norm(space: &DiscreteSpace, f: &[f64]) -> Result<VertexField> {
    let (g, _) = carre_du_champ(space, f, f, None)?;
    Ok(VertexField(g.iter().map(|v| v.max(0.0).sqrt()).collect()))
}

/// Action `b(f)` of the derivation given by `theta`, and its pointwise norm `|b|`.
pub fn apply_derivation(
    space: &DiscreteSpace,
    theta: &EdgeField,
    f: &[f64],
) -> Result<(VertexField, VertexField)> {
    check_edge(space, "theta", theta)?;
    check_vertex(space, "f", f)?;
    let n = space.n_vertices();
    let mut bf = vec![0.0; n];
    let mut norm2 = vec![0.0; n];
    for (i, e) in space.edges().iter().enumerate() {
        // θ(u,v)(f(v)−f(u)) and θ(v,u)(f(u)−f(v)) coincide
        let t = theta.values[i];
        let term = e.conductance * t * (f[e.v] - f[e.u]);
        bf[e.u] += term;
        bf[e.v] += term;
        let sq = e.conductance * t * t;
        norm2[e.u] += sq;
        norm2[e.v] += sq;
    }
    let m = space.measure();
    for x in 0..n {
        bf[x] /= 2.0 * m[x];
        norm2[x] = (norm2[x] / (2.0 * m[x])).sqrt();
    }
    Ok((VertexField(bf), VertexField(norm2)))
}

/// Pointwise norm `|b|` alone.
pub fn derivation_norm(space: &DiscreteSpace, theta: &EdgeField) -> Result<VertexField> {
    let zeros = vec![0.0; space.n_vertices()];
    Ok(apply_derivation(space, theta, &zeros)?.1)
}

/// Closed-form divergence `div b(x) = (1/m(x)) Σ_y w(x,y) θ(x,y)`.
pub fn divergence(space: &DiscreteSpace, theta: &EdgeField) -> Result<VertexField> {
    check_edge(space, "theta", theta)?;
    let mut div = vec![0.0; space.n_vertices()];
    for (i, e) in space.edges().iter().enumerate() {
        let flux = e.conductance * theta.values[i];
        div[e.u] += flux;
        div[e.v] -= flux;
    }
    for (x, d) in div.iter_mut().enumerate() {
        *d /= space.measure()[x];
    }
    Ok(VertexField(div))
}

/// `θ_f(x,y) = f(y) − f(x)`: the derivation `g ↦ Γ(f,g)`.
pub fn gradient_derivation(space: &DiscreteSpace, f: &[f64]) -> Result<EdgeField> {
    check_vertex(space, "f", f)?;
    Ok(EdgeField::antisymmetric(
        space.edges().iter().map(|e| f[e.v] - f[e.u]).collect(),
    ))
}

/// `max_x |b(fg)(x) − b(f)(x)g(x) − f(x)b(g)(x)|`.
pub fn leibniz_defect(space: &DiscreteSpace, theta: &EdgeField, f: &[f64], g: &[f64]) -> Result<f64> {
    check_vertex(space, "g", g)?;
    let fg: Vec<f64> = f.iter().zip(g).map(|(a, b)| a * b).collect();
    let (bfg, _) = apply_derivation(space, theta, &fg)?;
    let (bf, _) = apply_derivation(space, theta, f)?;
    let (bg, _) = apply_derivation(space, theta, g)?;
    Ok((0..space.n_vertices())
        .map(|x| (bfg[x] - bf[x] * g[x] - f[x] * bg[x]).abs())
        .fold(0.0, f64::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mm_space::{AmbientSpace, Edge};
    use std::sync::Arc;

    pub(crate) fn two_vertex() -> DiscreteSpace {
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

    #[test]
    fn constants_have_no_gradient() {
        let s = two_vertex();
        let (g, e) = carre_du_champ(&s, &[3.0, 3.0], &[3.0, 3.0], None).unwrap();
        assert_eq!(g.0, vec![0.0, 0.0]);
        assert_eq!(e, 0.0);
    }

    #[test]
    fn two_vertex_carre_du_champ() {
        let s = two_vertex();
        let (g, e) = carre_du_champ(&s, &[0.0, 1.0], &[0.0, 1.0], None).unwrap();
        assert_eq!(g.0, vec![0.5, 0.5]);
        assert_eq!(e, 0.5);
    }

    #[test]
    fn two_vertex_derivation_and_divergence() {
        let s = two_vertex();
        let theta = EdgeField::antisymmetric(vec![1.0]);
        let (bf, _) = apply_derivation(&s, &theta, &[0.0, 1.0]).unwrap();
        assert_eq!(bf.0, vec![0.5, 0.5]);
        assert_eq!(divergence(&s, &theta).unwrap().0, vec![1.0, -1.0]);
        let zero = EdgeField::zeros_antisymmetric(1);
        let (b0, n0) = apply_derivation(&s, &zero, &[0.0, 1.0]).unwrap();
        assert_eq!(b0.0, vec![0.0, 0.0]);
        assert_eq!(n0.0, vec![0.0, 0.0]);
        assert_eq!(divergence(&s, &zero).unwrap().0, vec![0.0, 0.0]);
    }

    #[test]
    fn two_vertex_leibniz_defect() {
        let s = two_vertex();
        let theta = EdgeField::antisymmetric(vec![1.0]);
        let d = leibniz_defect(&s, &theta, &[0.0, 1.0], &[0.0, 1.0]).unwrap();
        assert_eq!(d, 0.5);
        let d0 = leibniz_defect(&s, &theta, &[0.0, 1.0], &[2.0, 2.0]).unwrap();
        assert!(d0.abs() < 1e-15);
    }

    #[test]
    fn gradient_field_definition() {
        let s = two_vertex();
        assert_eq!(gradient_derivation(&s, &[0.0, 1.0]).unwrap().values, vec![1.0]);
        assert_eq!(gradient_derivation(&s, &[4.0, 4.0]).unwrap().values, vec![0.0]);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let s = two_vertex();
        assert!(carre_du_champ(&s, &[0.0], &[0.0, 1.0], None).is_err());
        assert!(apply_derivation(&s, &EdgeField::antisymmetric(vec![]), &[0.0, 1.0]).is_err());
        assert!(divergence(&s, &EdgeField::antisymmetric(vec![1.0, 2.0])).is_err());
    }
}
