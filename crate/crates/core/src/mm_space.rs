//! Finite pointed metric measure spaces sharing a common ambient space.
//!
//! Every [`DiscreteSpace`] embeds its vertices into one [`AmbientSpace`]
//! (a finite point cloud with a metric). Cross-space comparisons are done by
//! integrating ambient functions against the pushed-forward vertex measures.

use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::calculus::{self, VertexField};
use crate::error::{LabError, Result};

const TRIANGLE_RTOL: f64 = 1e-12;
const ISOMETRY_RTOL: f64 = 1e-9;
const BASEPOINT_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub enum AmbientMetric {
    /// Row-major `n × n` distance table.
    Table(Vec<f64>),
    /// Row-major `n × dim` coordinates with Euclidean distance.
    Euclidean { dim: usize, coords: Vec<f64> },
}

/// The common finite metric space `(X, d)` all members embed into.
#[derive(Clone, Debug, PartialEq)]
pub struct AmbientSpace {
    n: usize,
    metric: AmbientMetric,
}

impl AmbientSpace {
    /// Builds an ambient space from an explicit distance table, checking
    /// symmetry, a zero diagonal, non-negativity and the triangle inequality.
    pub fn from_table(n: usize, table: Vec<f64>) -> Result<Self> {
        if table.len() != n * n {
            return Err(LabError::SizeMismatch {
                what: "distance table",
                expected: n * n,
                got: table.len(),
            });
        }
        for p in 0..n {
            if table[p * n + p] != 0.0 {
                return Err(LabError::InvalidAmbient(format!("d({p},{p}) is not zero")));
            }
            for q in 0..n {
                let d = table[p * n + q];
                if !d.is_finite() || d < 0.0 {
                    return Err(LabError::InvalidAmbient(format!(
                        "d({p},{q}) = {d} is not a finite non-negative number"
                    )));
                }
                if d != table[q * n + p] {
                    return Err(LabError::InvalidAmbient(format!("d({p},{q}) != d({q},{p})")));
                }
            }
        }
        for p in 0..n {
            for q in 0..n {
                let dpq = table[p * n + q];
                for r in 0..n {
                    let via = dpq + table[q * n + r];
                    if table[p * n + r] > via * (1.0 + TRIANGLE_RTOL) + f64::MIN_POSITIVE {
                        return Err(LabError::InvalidAmbient(format!(
                            "triangle inequality fails for ({p},{q},{r})"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            n,
            metric: AmbientMetric::Table(table),
        })
    }

    /// Table constructor for metrics that are correct by construction.
    pub(crate) fn from_table_trusted(n: usize, table: Vec<f64>) -> Self {
        debug_assert_eq!(table.len(), n * n);
        Self {
            n,
            metric: AmbientMetric::Table(table),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        let mut table = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(LabError::InvalidAmbient(format!(
                    "distance table row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            table.extend_from_slice(row);
        }
        Self::from_table(n, table)
    }

    pub fn from_coords(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 || !coords.len().is_multiple_of(dim) {
            return Err(LabError::InvalidAmbient(format!(
                "{} coordinates do not split into points of dimension {dim}",
                coords.len()
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(LabError::InvalidAmbient("non-finite coordinate".into()));
        }
        Ok(Self {
            n: coords.len() / dim,
            metric: AmbientMetric::Euclidean { dim, coords },
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn metric(&self) -> &AmbientMetric {
        &self.metric
    }

    #[inline]
    pub fn dist(&self, p: usize, q: usize) -> f64 {
        match &self.metric {
            AmbientMetric::Table(t) => t[p * self.n + q],
            AmbientMetric::Euclidean { dim, coords } => {
                let a = &coords[p * dim..(p + 1) * dim];
                let b = &coords[q * dim..(q + 1) * dim];
                a.iter()
                    .zip(b)
                    .map(|(x, y)| (x - y) * (x - y))
                    .sum::<f64>()
                    .sqrt()
            }
        }
    }
}

/// A function on the ambient point set, one value per ambient point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AmbientField(pub Vec<f64>);

impl AmbientField {
    pub fn from_fn(ambient: &AmbientSpace, f: impl Fn(usize) -> f64) -> Self {
        Self((0..ambient.len()).map(f).collect())
    }

    pub fn constant(ambient: &AmbientSpace, value: f64) -> Self {
        Self(vec![value; ambient.len()])
    }

    /// Restriction to the embedded vertices of `space`.
    pub fn restrict(&self, space: &DiscreteSpace) -> Result<VertexField> {
        if self.0.len() != space.ambient().len() {
            return Err(LabError::SizeMismatch {
                what: "ambient field",
                expected: space.ambient().len(),
                got: self.0.len(),
            });
        }
        Ok(VertexField(
            space.embedding().iter().map(|&p| self.0[p]).collect(),
        ))
    }
}

/// An edge as stored: canonical orientation `u < v`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub u: usize,
    pub v: usize,
    pub length: f64,
    pub conductance: f64,
}

/// One endpoint's view of an incident edge. `sign` is `+1` when the vertex is
/// the canonical tail `u`, so an antisymmetric field evaluates as
/// `θ(x, neighbor) = sign · θ(e)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Incidence {
    pub neighbor: usize,
    pub edge: usize,
    pub sign: f64,
}

/// A finite pointed metric measure space `(X, d, m, x̄)` realized as a
/// weighted graph embedded into an [`AmbientSpace`].
#[derive(Clone, Debug)]
pub struct DiscreteSpace {
    ambient: Arc<AmbientSpace>,
    embed: Vec<usize>,
    edges: Vec<Edge>,
    measure: Vec<f64>,
    basepoint: usize,
    incidence: Vec<Vec<Incidence>>,
}

impl DiscreteSpace {
    pub fn new(
        ambient: Arc<AmbientSpace>,
        embed: Vec<usize>,
        edges: Vec<Edge>,
        measure: Vec<f64>,
        basepoint: usize,
    ) -> Result<Self> {
        let n = embed.len();
        if n == 0 {
            return Err(LabError::InvalidSpace("no vertices".into()));
        }
        if measure.len() != n {
            return Err(LabError::SizeMismatch {
                what: "measure",
                expected: n,
                got: measure.len(),
            });
        }
        if basepoint >= n {
            return Err(LabError::InvalidSpace(format!(
                "basepoint {basepoint} out of range for {n} vertices"
            )));
        }
        let mut seen = HashSet::with_capacity(n);
        for (x, &p) in embed.iter().enumerate() {
            if p >= ambient.len() {
                return Err(LabError::InvalidSpace(format!(
                    "vertex {x} embeds to ambient point {p}, but the ambient space has {} points",
                    ambient.len()
                )));
            }
            if !seen.insert(p) {
                return Err(LabError::InvalidSpace(format!(
                    "embedding is not injective at ambient point {p}"
                )));
            }
        }
        for (x, &mx) in measure.iter().enumerate() {
            if !(mx.is_finite() && mx > 0.0) {
                return Err(LabError::InvalidSpace(format!(
                    "measure at vertex {x} is {mx}, must be positive"
                )));
            }
        }

        let mut pairs = HashSet::with_capacity(edges.len());
        let mut canonical = Vec::with_capacity(edges.len());
        for (i, e) in edges.into_iter().enumerate() {
            if e.u >= n || e.v >= n || e.u == e.v {
                return Err(LabError::InvalidSpace(format!(
                    "edge {i} ({}, {}) is not a pair of distinct vertices",
                    e.u, e.v
                )));
            }
            if !(e.length.is_finite() && e.length > 0.0) {
                return Err(LabError::InvalidSpace(format!(
                    "edge {i} has non-positive length {}",
                    e.length
                )));
            }
            if !(e.conductance.is_finite() && e.conductance >= 0.0) {
                return Err(LabError::InvalidSpace(format!(
                    "edge {i} has negative conductance {}",
                    e.conductance
                )));
            }
            let (u, v) = if e.u < e.v { (e.u, e.v) } else { (e.v, e.u) };
            if !pairs.insert((u, v)) {
                return Err(LabError::InvalidSpace(format!("duplicate edge ({u}, {v})")));
            }
            let ambient_len = ambient.dist(embed[u], embed[v]);
            if (ambient_len - e.length).abs() > ISOMETRY_RTOL * e.length.max(ambient_len).max(1.0)
            {
                return Err(LabError::InvalidSpace(format!(
                    "edge ({u}, {v}) has length {} but its endpoints are {ambient_len} apart in the ambient space",
                    e.length
                )));
            }
            canonical.push(Edge { u, v, ..e });
        }

        let mut incidence = vec![Vec::new(); n];
        for (i, e) in canonical.iter().enumerate() {
            incidence[e.u].push(Incidence {
                neighbor: e.v,
                edge: i,
                sign: 1.0,
            });
            incidence[e.v].push(Incidence {
                neighbor: e.u,
                edge: i,
                sign: -1.0,
            });
        }

        let space = Self {
            ambient,
            embed,
            edges: canonical,
            measure,
            basepoint,
            incidence,
        };
        if let Some(stranded) = space.first_unreachable(|e| e.conductance > 0.0) {
            return Err(LabError::Disconnected { vertex: stranded });
        }
        Ok(space)
    }

    fn first_unreachable(&self, usable: impl Fn(&Edge) -> bool) -> Option<usize> {
        let n = self.n_vertices();
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(x) = stack.pop() {
            for inc in &self.incidence[x] {
                if usable(&self.edges[inc.edge]) && !seen[inc.neighbor] {
                    seen[inc.neighbor] = true;
                    stack.push(inc.neighbor);
                }
            }
        }
        seen.iter().position(|s| !s)
    }

    pub fn n_vertices(&self) -> usize {
        self.embed.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn measure(&self) -> &[f64] {
        &self.measure
    }

    pub fn total_measure(&self) -> f64 {
        crate::numeric::compensated_sum(self.measure.iter().copied())
    }

    pub fn basepoint(&self) -> usize {
        self.basepoint
    }

    pub fn embedding(&self) -> &[usize] {
        &self.embed
    }

    pub fn ambient(&self) -> &Arc<AmbientSpace> {
        &self.ambient
    }

    pub fn ambient_point(&self, x: usize) -> usize {
        self.embed[x]
    }

    pub fn incident(&self, x: usize) -> &[Incidence] {
        &self.incidence[x]
    }

    /// Index of the edge joining `x` and `y`, if any.
    pub fn edge_between(&self, x: usize, y: usize) -> Option<usize> {
        self.incidence[x]
            .iter()
            .find(|inc| inc.neighbor == y)
            .map(|inc| inc.edge)
    }

    /// Ambient distance between the embedded images of two vertices.
    pub fn ambient_dist(&self, x: usize, y: usize) -> f64 {
        self.ambient.dist(self.embed[x], self.embed[y])
    }

    /// `∫ φ dm` for a vertex function `φ`.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        crate::numeric::compensated_sum(values.iter().zip(&self.measure).map(|(v, m)| v * m))
    }

    /// `∫ f g dm`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        crate::numeric::compensated_sum(
            f.iter()
                .zip(g)
                .zip(&self.measure)
                .map(|((a, b), m)| a * b * m),
        )
    }
}

/// Intrinsic graph distance between all vertex pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct DistanceTable {
    n: usize,
    dist: Vec<f64>,
}

impl DistanceTable {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.dist[x * self.n + y]
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.dist[x * self.n..(x + 1) * self.n]
    }

    pub fn diameter(&self) -> f64 {
        self.dist.iter().copied().fold(0.0, f64::max)
    }

    /// Builds a table from any symmetric pairwise function (e.g. ambient
    /// distances restricted to a member).
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut dist = vec![0.0; n * n];
        for x in 0..n {
            for y in 0..n {
                dist[x * n + y] = f(x, y);
            }
        }
        Self { n, dist }
    }
}

#[derive(Copy, Clone, PartialEq)]
struct HeapItem(f64, usize);

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .total_cmp(&self.0)
            .then_with(|| other.1.cmp(&self.1))
    }
}

/// All-pairs shortest path distances by edge length (Dijkstra per source).
pub fn shortest_path_metric(space: &DiscreteSpace) -> Result<DistanceTable> {
    let n = space.n_vertices();
    let mut dist = vec![f64::INFINITY; n * n];
    for s in 0..n {
        let row = &mut dist[s * n..(s + 1) * n];
        row[s] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(HeapItem(0.0, s));
        while let Some(HeapItem(d, x)) = heap.pop() {
            if d > row[x] {
                continue;
            }
            for inc in space.incident(x) {
                let nd = d + space.edges()[inc.edge].length;
                if nd < row[inc.neighbor] {
                    row[inc.neighbor] = nd;
                    heap.push(HeapItem(nd, inc.neighbor));
                }
            }
        }
        if let Some(y) = row.iter().position(|d| d.is_infinite()) {
            return Err(LabError::Disconnected {
                vertex: if s == 0 { y } else { s },
            });
        }
    }
    // symmetrize exactly; Dijkstra sums are order dependent in the last ulp
    for x in 0..n {
        for y in (x + 1)..n {
            let d = dist[x * n + y].min(dist[y * n + x]);
            dist[x * n + y] = d;
            dist[y * n + x] = d;
        }
    }
    Ok(DistanceTable { n, dist })
}

/// Open ball `{x : d(center, x) < r}` and its measure.
#[derive(Clone, Debug, PartialEq)]
pub struct Ball {
    pub vertices: Vec<usize>,
    pub measure: f64,
}

pub fn ball_volume(
    space: &DiscreteSpace,
    metric: &DistanceTable,
    center: usize,
    r: f64,
) -> Result<Ball> {
    if !(r >= 0.0) {
        return Err(LabError::InvalidArgument(format!("ball radius {r} is negative")));
    }
    if center >= space.n_vertices() || metric.len() != space.n_vertices() {
        return Err(LabError::InvalidArgument(format!(
            "center {center} or metric size {} does not match the space",
            metric.len()
        )));
    }
    let vertices: Vec<usize> = (0..space.n_vertices())
        .filter(|&y| metric.get(center, y) < r)
        .collect();
    let measure =
        crate::numeric::compensated_sum(vertices.iter().map(|&y| space.measure()[y]));
    Ok(Ball { vertices, measure })
}

/// An element of the truncated test algebra: a product of one or two
/// generators `min{d(·, p), k}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    /// `(ambient point, truncation level)` factors, sorted.
    pub factors: Vec<(usize, f64)>,
    pub lipschitz: f64,
    pub sup: f64,
}

impl TestFunction {
    pub fn generator(center: usize, level: f64) -> Self {
        Self {
            factors: vec![(center, level)],
            lipschitz: 1.0,
            sup: level,
        }
    }

    fn product(a: &TestFunction, b: &TestFunction) -> Self {
        let mut factors = a.factors.clone();
        factors.extend_from_slice(&b.factors);
        factors.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));
        Self {
            factors,
            lipschitz: a.sup * b.lipschitz + b.sup * a.lipschitz,
            sup: a.sup * b.sup,
        }
    }

    pub fn eval(&self, ambient: &AmbientSpace, p: usize) -> f64 {
        self.factors
            .iter()
            .map(|&(c, k)| ambient.dist(p, c).min(k))
            .product()
    }

    pub fn sample(&self, ambient: &AmbientSpace) -> AmbientField {
        AmbientField::from_fn(ambient, |p| self.eval(ambient, p))
    }

    pub fn restrict(&self, space: &DiscreteSpace) -> VertexField {
        VertexField(
            space
                .embedding()
                .iter()
                .map(|&p| self.eval(space.ambient(), p))
                .collect(),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestFamily {
    pub functions: Vec<TestFunction>,
}

impl TestFamily {
    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }
}

/// Generators `min{d(·, x), k}` for every requested `(x, k)`, plus the first
/// `max_products` pairwise products in lexicographic order.
pub fn build_test_family(
    ambient: &AmbientSpace,
    centers: &[usize],
    levels: &[f64],
    max_products: usize,
) -> Result<TestFamily> {
    if centers.is_empty() {
        return Err(LabError::InvalidArgument("test family needs at least one center".into()));
    }
    if levels.is_empty() || levels.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
        return Err(LabError::InvalidArgument("truncation levels must be positive".into()));
    }
    if let Some(&c) = centers.iter().find(|&&c| c >= ambient.len()) {
        return Err(LabError::InvalidArgument(format!(
            "center {c} is not an ambient point"
        )));
    }
    let mut keys = BTreeSet::new();
    let mut generators = Vec::new();
    for &c in centers {
        for &k in levels {
            if keys.insert((c, k.to_bits())) {
                generators.push(TestFunction::generator(c, k));
            }
        }
    }
    let mut functions = generators.clone();
    let mut product_keys = BTreeSet::new();
    'outer: for i in 0..generators.len() {
        for j in (i + 1)..generators.len() {
            if product_keys.len() >= max_products {
                break 'outer;
            }
            let p = TestFunction::product(&generators[i], &generators[j]);
            let key: Vec<(usize, u64)> = p.factors.iter().map(|&(c, k)| (c, k.to_bits())).collect();
            if product_keys.insert(key) {
                functions.push(p);
            }
        }
    }
    Ok(TestFamily { functions })
}

/// Ordered family of members plus a designated limit, all embedded in one
/// ambient space.
#[derive(Clone, Debug)]
pub struct SpaceSequence {
    ambient: Arc<AmbientSpace>,
    members: Vec<DiscreteSpace>,
    limit: DiscreteSpace,
}

impl SpaceSequence {
    pub fn new(members: Vec<DiscreteSpace>, limit: DiscreteSpace) -> Result<Self> {
        Self::with_options(members, limit, true)
    }

    /// `require_monotone_basepoints` enforces that the ambient distance from
    /// each member's basepoint to the limit basepoint is non-increasing and
    /// ends below `1e-6`.
    pub fn with_options(
        members: Vec<DiscreteSpace>,
        limit: DiscreteSpace,
        require_monotone_basepoints: bool,
    ) -> Result<Self> {
        if members.is_empty() {
            return Err(LabError::InvalidArgument("sequence has no members".into()));
        }
        let ambient = limit.ambient().clone();
        for (i, m) in members.iter().enumerate() {
            if !Arc::ptr_eq(m.ambient(), &ambient) && **m.ambient() != *ambient {
                return Err(LabError::InvalidArgument(format!(
                    "member {i} lives in a different ambient space"
                )));
            }
        }
        if require_monotone_basepoints {
            let limit_bp = limit.ambient_point(limit.basepoint());
            let gaps: Vec<f64> = members
                .iter()
                .map(|m| ambient.dist(m.ambient_point(m.basepoint()), limit_bp))
                .collect();
            if gaps.windows(2).any(|w| w[1] > w[0]) {
                return Err(LabError::InvalidArgument(
                    "basepoint distances to the limit basepoint are not non-increasing".into(),
                ));
            }
            if *gaps.last().unwrap() >= BASEPOINT_TOL {
                return Err(LabError::InvalidArgument(
                    "basepoints do not converge to the limit basepoint".into(),
                ));
            }
        }
        Ok(Self {
            ambient,
            members,
            limit,
        })
    }

    pub fn ambient(&self) -> &Arc<AmbientSpace> {
        &self.ambient
    }

    pub fn members(&self) -> &[DiscreteSpace] {
        &self.members
    }

    pub fn limit(&self) -> &DiscreteSpace {
        &self.limit
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Same members in a different order (no basepoint monotonicity check).
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        let members = order
            .iter()
            .map(|&i| {
                self.members.get(i).cloned().ok_or_else(|| {
                    LabError::InvalidArgument(format!("member index {i} out of range"))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::with_options(members, self.limit.clone(), false)
    }
}

/// Per-member defects of a field sequence against its limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossSpaceDefect {
    pub measure_defect: f64,
    pub l2_weak_defect: f64,
    /// `∫|f_n|² dm_n − ∫|f_∞|² dm_∞`; strong convergence needs `limsup ≤ 0`.
    pub l2_norm_gap: f64,
    /// `Ch_n(f_n) − Ch_∞(f_∞)`.
    pub w12_energy_gap: f64,
}

pub fn cross_space_defects(
    seq: &SpaceSequence,
    f_members: &[VertexField],
    f_limit: &VertexField,
    tests: &TestFamily,
) -> Result<Vec<CrossSpaceDefect>> {
    if f_members.len() != seq.len() {
        return Err(LabError::SizeMismatch {
            what: "member fields",
            expected: seq.len(),
            got: f_members.len(),
        });
    }
    let limit = seq.limit();
    check_len("limit field", f_limit, limit.n_vertices())?;
    let limit_tests: Vec<VertexField> = tests.functions.iter().map(|t| t.restrict(limit)).collect();
    let limit_mass: Vec<f64> = limit_tests.iter().map(|phi| limit.integrate(phi)).collect();
    let limit_weak: Vec<f64> = limit_tests.iter().map(|phi| limit.inner(phi, f_limit)).collect();
    let limit_norm = limit.inner(f_limit, f_limit);
    let limit_energy = calculus::cheeger_energy(limit, f_limit)?;

    seq.members()
        .iter()
        .zip(f_members)
        .map(|(space, f)| {
            check_len("member field", f, space.n_vertices())?;
            let mut measure_defect = 0.0_f64;
            let mut l2_weak_defect = 0.0_f64;
            for (k, t) in tests.functions.iter().enumerate() {
                let phi = t.restrict(space);
                measure_defect = measure_defect.max((space.integrate(&phi) - limit_mass[k]).abs());
                l2_weak_defect = l2_weak_defect.max((space.inner(&phi, f) - limit_weak[k]).abs());
            }
            Ok(CrossSpaceDefect {
                measure_defect,
                l2_weak_defect,
                l2_norm_gap: space.inner(f, f) - limit_norm,
                w12_energy_gap: calculus::cheeger_energy(space, f)? - limit_energy,
            })
        })
        .collect()
}

fn check_len(what: &'static str, f: &[f64], n: usize) -> Result<()> {
    if f.len() != n {
        return Err(LabError::SizeMismatch {
            what,
            expected: n,
            got: f.len(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_ambient(points: &[f64]) -> Arc<AmbientSpace> {
        Arc::new(AmbientSpace::from_coords(1, points.to_vec()).unwrap())
    }

    fn path(lengths: &[f64]) -> DiscreteSpace {
        let mut pos = vec![0.0];
        for l in lengths {
            pos.push(pos.last().unwrap() + l);
        }
        let ambient = line_ambient(&pos);
        let edges = lengths
            .iter()
            .enumerate()
            .map(|(i, &l)| Edge {
                u: i,
                v: i + 1,
                length: l,
                conductance: 1.0,
            })
            .collect();
        DiscreteSpace::new(ambient, (0..pos.len()).collect(), edges, vec![1.0; pos.len()], 0)
            .unwrap()
    }

    #[test]
    fn single_edge_distance() {
        let s = path(&[1.0]);
        let d = shortest_path_metric(&s).unwrap();
        assert_eq!(d.get(0, 1), 1.0);
    }

    #[test]
    fn path_distances_add() {
        let s = path(&[1.0, 1.0]);
        let d = shortest_path_metric(&s).unwrap();
        assert_eq!(d.get(0, 2), 2.0);
    }

    #[test]
    fn triangle_with_long_side_uses_detour() {
        // ambient table where the long side is 3 and the others are 1
        let table = vec![0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0];
        // 3 > 1 + 1 violates the triangle inequality in the table itself
        assert!(AmbientSpace::from_table(3, table.clone()).is_err());
        let ambient = Arc::new(AmbientSpace::from_table_trusted(3, table));
        let edges = vec![
            Edge { u: 0, v: 1, length: 1.0, conductance: 1.0 },
            Edge { u: 1, v: 2, length: 1.0, conductance: 1.0 },
            Edge { u: 0, v: 2, length: 3.0, conductance: 1.0 },
        ];
        let s = DiscreteSpace::new(ambient, vec![0, 1, 2], edges, vec![1.0; 3], 0).unwrap();
        let d = shortest_path_metric(&s).unwrap();
        assert_eq!(d.get(0, 2), 2.0);
        assert_eq!(d.get(2, 0), 2.0);
    }

    #[test]
    fn disconnected_graph_names_vertex() {
        let ambient = line_ambient(&[0.0, 1.0, 5.0]);
        let edges = vec![Edge { u: 0, v: 1, length: 1.0, conductance: 1.0 }];
        let err = DiscreteSpace::new(ambient, vec![0, 1, 2], edges, vec![1.0; 3], 0).unwrap_err();
        assert!(matches!(err, LabError::Disconnected { vertex: 2 }));
    }

    #[test]
    fn zero_conductance_bridge_counts_as_disconnected() {
        let ambient = line_ambient(&[0.0, 1.0]);
        let edges = vec![Edge { u: 0, v: 1, length: 1.0, conductance: 0.0 }];
        assert!(DiscreteSpace::new(ambient, vec![0, 1], edges, vec![1.0; 2], 0).is_err());
    }

    #[test]
    fn isometry_violation_rejected() {
        let ambient = line_ambient(&[0.0, 2.0]);
        let edges = vec![Edge { u: 0, v: 1, length: 1.0, conductance: 1.0 }];
        assert!(DiscreteSpace::new(ambient, vec![0, 1], edges, vec![1.0; 2], 0).is_err());
    }

    #[test]
    fn ball_edge_cases() {
        let s = path(&[1.0, 1.0]);
        let d = shortest_path_metric(&s).unwrap();
        let empty = ball_volume(&s, &d, 0, 0.0).unwrap();
        assert!(empty.vertices.is_empty());
        assert_eq!(empty.measure, 0.0);
        let full = ball_volume(&s, &d, 0, 10.0).unwrap();
        assert_eq!(full.vertices.len(), 3);
        assert_eq!(full.measure, 3.0);
        assert!(ball_volume(&s, &d, 0, -1.0).is_err());
    }

    #[test]
    fn test_family_counts() {
        let ambient = AmbientSpace::from_coords(1, vec![0.0, 1.0, 2.0]).unwrap();
        let one = build_test_family(&ambient, &[0], &[1.0], 0).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one.functions[0].sup, 1.0);
        assert_eq!(one.functions[0].lipschitz, 1.0);
        let four = build_test_family(&ambient, &[0, 2], &[1.0, 2.0], 0).unwrap();
        assert_eq!(four.len(), 4);
        let three = build_test_family(&ambient, &[0, 2], &[1.0], 1).unwrap();
        assert_eq!(three.len(), 3);
        assert_eq!(three.functions[2].factors.len(), 2);
        assert!(build_test_family(&ambient, &[], &[1.0], 0).is_err());
        assert!(build_test_family(&ambient, &[0], &[0.0], 0).is_err());
    }

    #[test]
    fn duplicate_requests_are_deduplicated() {
        let ambient = AmbientSpace::from_coords(1, vec![0.0, 1.0]).unwrap();
        let fam = build_test_family(&ambient, &[0, 0], &[1.0, 1.0], 5).unwrap();
        assert_eq!(fam.len(), 1);
    }
}
