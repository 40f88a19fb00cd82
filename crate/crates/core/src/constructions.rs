//! Model space sequences (circle, interval, torus) and coefficient factories
//! built from Cheeger resolvents and Laplacian eigenfunctions.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calculus::{self, CoefficientSet, EdgeField, VertexField};
use crate::convergence::CoefficientSequence;
use crate::error::{LabError, Result};
use crate::mm_space::{AmbientField, AmbientSpace, DiscreteSpace, Edge, SpaceSequence};
use crate::semigroup::{cheeger_laplacian, cheeger_spectrum, Method, SemigroupEvaluator};

/// Eigenvalue gaps at or below this make an index ambiguous.
pub const EIGEN_GAP_TOL: f64 = 1e-8;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    Circle,
    Interval,
    Torus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFamily {
    pub kind: FamilyKind,
    /// Strictly increasing member sizes (vertices per side for the torus).
    pub sizes: Vec<usize>,
    /// Circumference, interval length or torus side.
    pub length: f64,
    /// Size of a separate limit surrogate; the finest member when absent.
    pub limit: Option<usize>,
}

impl ModelFamily {
    pub fn circle(sizes: Vec<usize>, limit: Option<usize>) -> Self {
        Self {
            kind: FamilyKind::Circle,
            sizes,
            length: 2.0 * PI,
            limit,
        }
    }

    pub fn interval(sizes: Vec<usize>, length: f64, limit: Option<usize>) -> Self {
        Self {
            kind: FamilyKind::Interval,
            sizes,
            length,
            limit,
        }
    }

    pub fn torus(sizes: Vec<usize>, length: f64, limit: Option<usize>) -> Self {
        Self {
            kind: FamilyKind::Torus,
            sizes,
            length,
            limit,
        }
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Position as a reduced fraction of the period, so equal points of
/// different members share one ambient index.
type Key = Vec<(usize, usize)>;

fn reduced(k: usize, n: usize) -> (usize, usize) {
    if k == 0 {
        return (0, 1);
    }
    let g = gcd(k, n);
    (k / g, n / g)
}

fn frac(key: (usize, usize)) -> f64 {
    key.0 as f64 / key.1 as f64
}

struct MemberLayout {
    keys: Vec<Key>,
    edges: Vec<(usize, usize, f64, f64)>,
    measure: Vec<f64>,
}

fn layout(kind: FamilyKind, n: usize, length: f64) -> Result<MemberLayout> {
    match kind {
        FamilyKind::Circle => {
            if n < 3 {
                return Err(LabError::InvalidArgument(format!("circle needs n ≥ 3, got {n}")));
            }
            let h = length / n as f64;
            Ok(MemberLayout {
                keys: (0..n).map(|k| vec![reduced(k, n)]).collect(),
                edges: (0..n).map(|k| (k, (k + 1) % n, h, 1.0 / h)).collect(),
                measure: vec![h; n],
            })
        }
        FamilyKind::Interval => {
            if n < 3 {
                return Err(LabError::InvalidArgument(format!("interval needs n ≥ 3, got {n}")));
            }
            let h = length / (n - 1) as f64;
            let mut measure = vec![h; n];
            measure[0] = 0.5 * h;
            measure[n - 1] = 0.5 * h;
            Ok(MemberLayout {
                keys: (0..n).map(|k| vec![reduced(k, n - 1)]).collect(),
                edges: (0..n - 1).map(|k| (k, k + 1, h, 1.0 / h)).collect(),
                measure,
            })
        }
        FamilyKind::Torus => {
            if n < 3 {
                return Err(LabError::InvalidArgument(format!("torus needs n ≥ 3, got {n}")));
            }
            let h = length / n as f64;
            let idx = |i: usize, j: usize| i * n + j;
            let mut keys = Vec::with_capacity(n * n);
            let mut edges = Vec::with_capacity(2 * n * n);
            for i in 0..n {
                for j in 0..n {
                    keys.push(vec![reduced(i, n), reduced(j, n)]);
                    edges.push((idx(i, j), idx((i + 1) % n, j), h, 1.0));
                    edges.push((idx(i, j), idx(i, (j + 1) % n), h, 1.0));
                }
            }
            Ok(MemberLayout {
                keys,
                edges,
                measure: vec![h * h; n * n],
            })
        }
    }
}

fn key_distance(kind: FamilyKind, length: f64, a: &Key, b: &Key) -> f64 {
    let wrap = |x: f64, y: f64| {
        let d = (x - y).abs();
        d.min(1.0 - d)
    };
    match kind {
        FamilyKind::Circle => length * wrap(frac(a[0]), frac(b[0])),
        FamilyKind::Interval => length * (frac(a[0]) - frac(b[0])).abs(),
        FamilyKind::Torus => {
            let dx = wrap(frac(a[0]), frac(b[0]));
            let dy = wrap(frac(a[1]), frac(b[1]));
            length * (dx * dx + dy * dy).sqrt()
        }
    }
}

type Layouts = (Vec<MemberLayout>, BTreeMap<Key, usize>, Vec<Key>);

/// Member layouts (limit last) and the ambient points in first-seen order.
fn family_layouts(family: &ModelFamily) -> Result<Layouts> {
    let mut all_sizes = family.sizes.clone();
    if let Some(l) = family.limit {
        all_sizes.push(l);
    }
    let layouts = all_sizes
        .iter()
        .map(|&n| layout(family.kind, n, family.length))
        .collect::<Result<Vec<_>>>()?;
    let mut index: BTreeMap<Key, usize> = BTreeMap::new();
    let mut keys: Vec<Key> = Vec::new();
    for lay in &layouts {
        for k in &lay.keys {
            if !index.contains_key(k) {
                index.insert(k.clone(), keys.len());
                keys.push(k.clone());
            }
        }
    }
    Ok((layouts, index, keys))
}

/// Position of every ambient point of [`model_sequence`] as a fraction of
/// the period (circle, torus) or of the length (interval).
pub fn family_coordinates(family: &ModelFamily) -> Result<Vec<Vec<f64>>> {
    let (_, _, keys) = family_layouts(family)?;
    Ok(keys.iter().map(|k| k.iter().map(|&p| frac(p)).collect()).collect())
}

/// A named function of the first family coordinate `s ∈ [0, 1]`:
/// `cos[:k]`, `sin[:k]` (`cos 2πks` on periodic families, `cos πks` on the
/// interval), `pos_cos[:k]` = `1 + ½ cos`, and `const:v`.
pub fn named_field(family: &ModelFamily, name: &str) -> Result<AmbientField> {
    let (head, arg) = match name.split_once(':') {
        Some((h, a)) => (h, Some(a)),
        None => (name, None),
    };
    let bad = || LabError::InvalidArgument(format!("unknown function `{name}`; expected cos[:k], sin[:k], pos_cos[:k] or const:v"));
    let coords = family_coordinates(family)?;
    if head == "const" {
        let v: f64 = arg.and_then(|a| a.parse().ok()).ok_or_else(bad)?;
        return Ok(AmbientField(vec![v; coords.len()]));
    }
    let k: f64 = match arg {
        Some(a) => a.parse::<u32>().map_err(|_| bad())? as f64,
        None => 1.0,
    };
    let period = if family.kind == FamilyKind::Interval { PI } else { 2.0 * PI };
    let f: fn(f64) -> f64 = match head {
        "cos" => f64::cos,
        "sin" => f64::sin,
        "pos_cos" => |u| 1.0 + 0.5 * u.cos(),
        _ => return Err(bad()),
    };
    Ok(AmbientField(coords.iter().map(|c| f(period * k * c[0])).collect()))
}

/// Builds the members and limit of a model family over one shared ambient
/// space: the union of all member points with the arc, line or flat torus
/// metric. Circle members have `ℓ = h = L/n`, `w = 1/h`, `m = h`; interval
/// members reflect at the ends, whose vertices carry half measure; torus
/// members have `w = 1`, `m = h²`.
pub fn model_sequence(family: &ModelFamily) -> Result<SpaceSequence> {
    if family.sizes.is_empty() {
        return Err(LabError::InvalidArgument("family has no sizes".into()));
    }
    if family.sizes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::InvalidArgument("family sizes must be strictly increasing".into()));
    }
    if !(family.length > 0.0 && family.length.is_finite()) {
        return Err(LabError::InvalidArgument("family length must be positive".into()));
    }
    let (layouts, index, keys) = family_layouts(family)?;
    let np = keys.len();
    let mut table = vec![0.0; np * np];
    for p in 0..np {
        for q in (p + 1)..np {
            let d = key_distance(family.kind, family.length, &keys[p], &keys[q]);
            table[p * np + q] = d;
            table[q * np + p] = d;
        }
    }
    let ambient = Arc::new(AmbientSpace::from_table_trusted(np, table));

    let mut spaces = layouts
        .into_iter()
        .map(|lay| {
            let embed = lay.keys.iter().map(|k| index[k]).collect();
            let edges = lay
                .edges
                .iter()
                .map(|&(u, v, length, conductance)| Edge {
                    u,
                    v,
                    length,
                    conductance,
                })
                .collect();
            DiscreteSpace::new(ambient.clone(), embed, edges, lay.measure, 0)
        })
        .collect::<Result<Vec<_>>>()?;
    let limit = if family.limit.is_some() {
        spaces.pop().expect("limit layout")
    } else {
        spaces.last().expect("nonempty").clone()
    };
    SpaceSequence::new(spaces, limit)
}

/// `f = (λ − Δ)⁻¹ g` for the Cheeger Laplacian.
pub fn cheeger_resolvent(space: &DiscreteSpace, g: &[f64], lam: f64) -> Result<VertexField> {
    if !(lam > 0.0) {
        return Err(LabError::InvalidArgument(format!("lam must be positive, got {lam}")));
    }
    let n = space.n_vertices();
    if g.len() != n {
        return Err(LabError::SizeMismatch {
            what: "resolvent source",
            expected: n,
            got: g.len(),
        });
    }
    let a = DMatrix::identity(n, n) * lam - cheeger_laplacian(space);
    let f = a
        .lu()
        .solve(&DVector::from_column_slice(g))
        .ok_or_else(|| LabError::Singular("λ − Δ".into()))?;
    Ok(VertexField(f.as_slice().to_vec()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolventParams {
    pub lam: f64,
    /// Ellipticity floor added to `h`.
    pub a0: f64,
    pub slack: f64,
    /// Heat-flow time `s` applied to `h` on each member before use; 0 keeps
    /// `h` as given.
    #[serde(default)]
    pub h_smoothing: f64,
}

fn killing_field(space: &DiscreteSpace, t1: &EdgeField, t2: &EdgeField, slack: f64) -> Result<VertexField> {
    let d1 = calculus::divergence(space, t1)?;
    let d2 = calculus::divergence(space, t2)?;
    Ok(VertexField::from_fn(space.n_vertices(), |x| d1[x].max(d2[x]) + slack))
}

/// Derivations from gradients of Cheeger resolvents: on every member and the
/// limit, `f = (λ − Δ)⁻¹ g`, `θ₁ = ∇f` (and `θ₂ = ∇f²` from `g2`, else 0),
/// `a = ½(h(u)+h(v)) + a0`, `c = max(div b₁, div b₂) + slack`, with `h`
/// replaced by `e^{sΔ}h` when `h_smoothing = s > 0`.
pub fn resolvent_coefficients(
    seq: &SpaceSequence,
    g: &AmbientField,
    g2: Option<&AmbientField>,
    h: Option<&AmbientField>,
    params: &ResolventParams,
) -> Result<CoefficientSequence> {
    if !(params.lam > 0.0) {
        return Err(LabError::InvalidArgument(format!("lam must be positive, got {}", params.lam)));
    }
    if !(params.a0 > 0.0) {
        return Err(LabError::InvalidArgument(format!("a0 must be positive, got {}", params.a0)));
    }
    if !(params.slack >= 0.0) {
        return Err(LabError::InvalidArgument("slack must be nonnegative".into()));
    }
    if !(params.h_smoothing >= 0.0 && params.h_smoothing.is_finite()) {
        return Err(LabError::InvalidArgument("h_smoothing must be finite and nonnegative".into()));
    }
    if let Some(h) = h {
        if h.0.iter().any(|v| !(*v >= 0.0)) {
            return Err(LabError::InvalidArgument("h must be nonnegative".into()));
        }
    }
    let build = |space: &DiscreteSpace| -> Result<CoefficientSet> {
        let gradient_of = |src: &AmbientField| -> Result<EdgeField> {
            let f = cheeger_resolvent(space, &src.restrict(space)?, params.lam)?;
            calculus::gradient_derivation(space, &f)
        };
        let theta1 = gradient_of(g)?;
        let theta2 = match g2 {
            Some(g2) => gradient_of(g2)?,
            None => EdgeField::zeros_antisymmetric(space.n_edges()),
        };
        let hv = match h {
            Some(h) if params.h_smoothing > 0.0 => {
                let heat = SemigroupEvaluator::from_generator(cheeger_laplacian(space), space.measure().to_vec(), Method::Dense)?;
                // the heat flow is positivity preserving; clip rounding below 0
                let mut v = heat.evolve(&h.restrict(space)?, params.h_smoothing)?;
                v.0.iter_mut().for_each(|x| *x = x.max(0.0));
                v
            }
            Some(h) => h.restrict(space)?,
            None => VertexField::zeros(space.n_vertices()),
        };
        let a = EdgeField::symmetric(
            space
                .edges()
                .iter()
                .map(|e| 0.5 * (hv[e.u] + hv[e.v]) + params.a0)
                .collect(),
        );
        let c = killing_field(space, &theta1, &theta2, params.slack)?;
        CoefficientSet::new(space, a, params.a0, theta1, theta2, c)
    };
    let members = seq.members().iter().map(build).collect::<Result<Vec<_>>>()?;
    let limit = build(seq.limit())?;
    CoefficientSequence::new(seq, members, limit)
}

fn check_gap(values: &[f64], k: usize) -> Result<()> {
    let mut gap = f64::INFINITY;
    if k > 0 {
        gap = gap.min((values[k] - values[k - 1]).abs());
    }
    if k + 1 < values.len() {
        gap = gap.min((values[k + 1] - values[k]).abs());
    }
    if gap <= EIGEN_GAP_TOL {
        return Err(LabError::DegenerateEigenvalue { index: k, gap });
    }
    Ok(())
}

/// Value of a limit field at each member vertex, read at the nearest limit
/// vertex in the ambient metric.
fn transport(limit: &DiscreteSpace, field: &[f64], member: &DiscreteSpace) -> Vec<f64> {
    let amb = limit.ambient();
    member
        .embedding()
        .iter()
        .map(|&p| {
            let mut best = (f64::INFINITY, 0.0);
            for (x, &q) in limit.embedding().iter().enumerate() {
                let d = amb.dist(p, q);
                if d < best.0 {
                    best = (d, field[x]);
                }
            }
            best.1
        })
        .collect()
}

/// Derivations from gradients of the `k`-th and `k2`-th Cheeger
/// eigenfunctions, with signs aligned to the limit member by `L²` pairing.
pub fn eigen_coefficients(seq: &SpaceSequence, k: usize, k2: usize, slack: f64) -> Result<CoefficientSequence> {
    if !(slack >= 0.0) {
        return Err(LabError::InvalidArgument("slack must be nonnegative".into()));
    }
    let kmax = k.max(k2);
    let min_size = seq
        .members()
        .iter()
        .chain(std::iter::once(seq.limit()))
        .map(|s| s.n_vertices())
        .min()
        .unwrap_or(0);
    if kmax >= min_size {
        return Err(LabError::InvalidArgument(format!(
            "eigen index {kmax} needs more than {min_size} vertices"
        )));
    }
    let limit = seq.limit();
    let limit_spec = cheeger_spectrum(limit, (kmax + 2).min(limit.n_vertices()))?;
    check_gap(&limit_spec.values, k)?;
    check_gap(&limit_spec.values, k2)?;

    let build = |space: &DiscreteSpace| -> Result<CoefficientSet> {
        let spec = cheeger_spectrum(space, kmax + 1)?;
        let mut thetas = Vec::with_capacity(2);
        for &j in &[k, k2] {
            let mut u = spec.vectors[j].clone();
            let reference = transport(limit, &limit_spec.vectors[j], space);
            if space.inner(&u, &reference) < 0.0 {
                u.iter_mut().for_each(|v| *v = -*v);
            }
            thetas.push(calculus::gradient_derivation(space, &u)?);
        }
        let theta2 = thetas.pop().expect("two thetas");
        let theta1 = thetas.pop().expect("two thetas");
        let c = killing_field(space, &theta1, &theta2, slack)?;
        CoefficientSet::new(space, EdgeField::ones(space.n_edges()), 1.0, theta1, theta2, c)
    };
    let members = seq.members().iter().map(build).collect::<Result<Vec<_>>>()?;
    let limit_coeffs = build(limit)?;
    CoefficientSequence::new(seq, members, limit_coeffs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomCoefficientParams {
    pub lambda: f64,
    /// `a ∈ [λ, λ + a_spread]`.
    pub a_spread: f64,
    /// `θ_i ∈ [−theta_scale, theta_scale]`.
    pub theta_scale: f64,
    /// `c ∈ max(div b₁, div b₂) + [0, slack]`.
    pub slack: f64,
    /// Raise `a` to `|θ₁ − θ₂|` so both generators have nonnegative rates.
    pub markov: bool,
}

impl Default for RandomCoefficientParams {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            a_spread: 1.0,
            theta_scale: 1.0,
            slack: 0.5,
            markov: false,
        }
    }
}

/// Random coefficients that satisfy the form assumptions by construction.
pub fn random_coefficients(space: &DiscreteSpace, params: &RandomCoefficientParams, seed: u64) -> Result<CoefficientSet> {
    if !(params.lambda > 0.0) {
        return Err(LabError::InvalidArgument("lambda must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ne = space.n_edges();
    let theta1: Vec<f64> = (0..ne).map(|_| rng.random_range(-1.0..=1.0) * params.theta_scale).collect();
    let theta2: Vec<f64> = (0..ne).map(|_| rng.random_range(-1.0..=1.0) * params.theta_scale).collect();
    let a: Vec<f64> = (0..ne)
        .map(|e| {
            let base = params.lambda + rng.random_range(0.0..=1.0) * params.a_spread;
            if params.markov {
                base.max((theta1[e] - theta2[e]).abs())
            } else {
                base
            }
        })
        .collect();
    let theta1 = EdgeField::antisymmetric(theta1);
    let theta2 = EdgeField::antisymmetric(theta2);
    let d1 = calculus::divergence(space, &theta1)?;
    let d2 = calculus::divergence(space, &theta2)?;
    let c = VertexField::from_fn(space.n_vertices(), |x| {
        d1[x].max(d2[x]) + rng.random_range(0.0..=1.0) * params.slack
    });
    CoefficientSet::new(space, EdgeField::symmetric(a), params.lambda, theta1, theta2, c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dirichlet_form::check_assumptions;
    use crate::mm_space::shortest_path_metric;

    #[test]
    fn named_fields_follow_vertex_positions() {
        let family = ModelFamily::circle(vec![8], Some(16));
        let seq = model_sequence(&family).unwrap();
        let g = named_field(&family, "cos:2").unwrap();
        let limit = seq.limit();
        for x in 0..16 {
            let expect = (2.0 * PI * 2.0 * x as f64 / 16.0).cos();
            assert!((g.0[limit.ambient_point(x)] - expect).abs() < 1e-14);
        }
        let iv = ModelFamily::interval(vec![5], 2.0, None);
        let iv_seq = model_sequence(&iv).unwrap();
        let s = &iv_seq.members()[0];
        let g = named_field(&iv, "cos").unwrap();
        assert!((g.0[s.ambient_point(4)] + 1.0).abs() < 1e-15);
        assert_eq!(named_field(&iv, "const:0.5").unwrap().0, vec![0.5; 5]);
        assert!(named_field(&iv, "tan").is_err());
        assert!(named_field(&iv, "cos:x").is_err());
    }

    #[test]
    fn circle_four() {
        let seq = model_sequence(&ModelFamily::circle(vec![4], None)).unwrap();
        let s = &seq.members()[0];
        assert_eq!(s.n_edges(), 4);
        for e in s.edges() {
            assert!((e.conductance - 2.0 / PI).abs() < 1e-15);
        }
        assert!(s.measure().iter().all(|m| (m - PI / 2.0).abs() < 1e-15));
        assert!((s.total_measure() - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn small_sizes_rejected() {
        assert!(model_sequence(&ModelFamily::interval(vec![2], 1.0, None)).is_err());
        assert!(model_sequence(&ModelFamily::circle(vec![2], None)).is_err());
        assert!(model_sequence(&ModelFamily::circle(vec![8, 4], None)).is_err());
    }

    #[test]
    fn circle_diameter_is_pi() {
        let seq = model_sequence(&ModelFamily::circle(vec![4, 8, 16], Some(32))).unwrap();
        for s in seq.members() {
            let d = shortest_path_metric(s).unwrap();
            assert!((d.diameter() - PI).abs() < 1e-12);
        }
        // shared points are shared ambient indices
        assert_eq!(seq.ambient().len(), 32);
    }

    #[test]
    fn totals_match_across_members() {
        for fam in [
            ModelFamily::circle(vec![5, 8, 13], None),
            ModelFamily::interval(vec![3, 5, 9], 2.0, Some(17)),
            ModelFamily::torus(vec![3, 4], 1.0, None),
        ] {
            let seq = model_sequence(&fam).unwrap();
            let t0 = seq.limit().total_measure();
            for s in seq.members() {
                assert!((s.total_measure() - t0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn resolvent_zero_source() {
        let seq = model_sequence(&ModelFamily::circle(vec![8, 16], None)).unwrap();
        let zero = AmbientField::constant(seq.ambient(), 0.0);
        let params = ResolventParams {
            lam: 1.0,
            a0: 1.0,
            slack: 0.3,
            h_smoothing: 0.0,
        };
        let cs = resolvent_coefficients(&seq, &zero, None, None, &params).unwrap();
        for set in cs.members.iter() {
            assert!(set.theta1.values.iter().all(|&v| v == 0.0));
            assert!(set.c.iter().all(|&v| (v - 0.3).abs() < 1e-15));
        }
        let bad = ResolventParams { lam: 0.0, ..params };
        assert!(resolvent_coefficients(&seq, &zero, None, None, &bad).is_err());
    }

    #[test]
    fn smoothing_spreads_h_and_keeps_its_mass() {
        let seq = model_sequence(&ModelFamily::circle(vec![16], None)).unwrap();
        let s = &seq.members()[0];
        let zero = AmbientField::constant(seq.ambient(), 0.0);
        let spike = AmbientField::from_fn(seq.ambient(), |p| if p == s.ambient_point(3) { 4.0 } else { 0.0 });
        let flat = AmbientField::constant(seq.ambient(), 2.0);
        let params = ResolventParams {
            lam: 1.0,
            a0: 1.0,
            slack: 0.0,
            h_smoothing: 0.0,
        };
        let smooth = ResolventParams { h_smoothing: 0.5, ..params.clone() };
        let raw = resolvent_coefficients(&seq, &zero, None, Some(&spike), &params).unwrap();
        let sm = resolvent_coefficients(&seq, &zero, None, Some(&spike), &smooth).unwrap();
        let max = |c: &CoefficientSet| c.a.values.iter().copied().fold(0.0, f64::max);
        assert_eq!(max(&raw.members[0]), 3.0);
        assert!(max(&sm.members[0]) < 3.0);
        assert!(sm.members[0].a.values.iter().all(|&v| v >= 1.0));
        // with equal edge lengths, sum over edges of ½(h(u)+h(v)) is the vertex sum of h
        let total = |c: &CoefficientSet| c.a.values.iter().map(|v| v - 1.0).sum::<f64>();
        assert!((total(&raw.members[0]) - total(&sm.members[0])).abs() < 1e-12);
        let fl = resolvent_coefficients(&seq, &zero, None, Some(&flat), &smooth).unwrap();
        assert!(fl.members[0].a.values.iter().all(|&v| (v - 3.0).abs() < 1e-12));
        let bad = ResolventParams { h_smoothing: -1.0, ..params };
        assert!(resolvent_coefficients(&seq, &zero, None, Some(&flat), &bad).is_err());
    }

    #[test]
    fn resolvent_divergence_identity() {
        let n = 16;
        let seq = model_sequence(&ModelFamily::circle(vec![n], None)).unwrap();
        let s = &seq.members()[0];
        let g = AmbientField::from_fn(seq.ambient(), |p| {
            // ambient points are k/16 of the circle here
            let x = s.embedding().iter().position(|&q| q == p).unwrap();
            (2.0 * PI * x as f64 / n as f64).cos()
        });
        let params = ResolventParams {
            lam: 1.0,
            a0: 1.0,
            slack: 0.1,
            h_smoothing: 0.0,
        };
        let cs = resolvent_coefficients(&seq, &g, None, None, &params).unwrap();
        let gv = g.restrict(s).unwrap();
        let f = cheeger_resolvent(s, &gv, 1.0).unwrap();
        let div = calculus::divergence(s, &cs.members[0].theta1).unwrap();
        let h = 2.0 * PI / n as f64;
        let lam1 = 2.0 * (1.0 - (2.0 * PI / n as f64).cos()) / (h * h);
        for x in 0..n {
            assert!((div[x] - (f[x] - gv[x])).abs() < 1e-10);
            assert!((f[x] - gv[x] / (1.0 + lam1)).abs() < 1e-12);
        }
        assert!(check_assumptions(s, &cs.members[0]).unwrap().passes());
    }

    #[test]
    fn eigen_refuses_degenerate_circle_mode() {
        let seq = model_sequence(&ModelFamily::circle(vec![8, 16], None)).unwrap();
        let err = eigen_coefficients(&seq, 1, 0, 0.1).unwrap_err();
        assert!(matches!(err, LabError::DegenerateEigenvalue { index: 1, .. }));
    }

    #[test]
    fn eigen_interval_mode() {
        let seq = model_sequence(&ModelFamily::interval(vec![16], PI, None)).unwrap();
        let cs = eigen_coefficients(&seq, 1, 0, 0.1).unwrap();
        let s = &seq.members()[0];
        let sp = cheeger_spectrum(s, 2).unwrap();
        let div = calculus::divergence(s, &cs.members[0].theta1).unwrap();
        let u = &sp.vectors[1];
        // the aligned eigenfunction is ±u, and div ∇u = Δu = −λ₁u
        let residual = |sign: f64| (0..16).map(|x| (div[x] + sign * sp.values[1] * u[x]).abs()).fold(0.0, f64::max);
        assert!(residual(1.0).min(residual(-1.0)) < 1e-10);
        assert!(cs.members[0].theta2.values.iter().all(|&v| v.abs() < 1e-12));
    }

    #[test]
    fn random_coefficients_pass_assumptions() {
        let seq = model_sequence(&ModelFamily::circle(vec![16], None)).unwrap();
        let s = &seq.members()[0];
        for seed in 0..10 {
            let c = random_coefficients(s, &RandomCoefficientParams::default(), seed).unwrap();
            assert!(check_assumptions(s, &c).unwrap().passes());
        }
    }
}
