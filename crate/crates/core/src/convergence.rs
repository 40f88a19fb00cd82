//! Cross-space convergence: coefficient defects, resolvent and semigroup
//! convergence, the finite-dimensional distribution functional and the
//! McShane extension used to compare outputs across members.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::calculus::{self, CoefficientSet, VertexField};
use crate::dirichlet_form::{assemble, check_assumptions, generators, Side};
use crate::error::{LabError, Result};
use crate::mm_space::{AmbientField, AmbientSpace, DiscreteSpace, SpaceSequence, TestFamily};
use crate::semigroup::{Method, SemigroupEvaluator};

/// Relative slack when comparing a Hölder quotient against `H`.
const HOLDER_RTOL: f64 = 1e-12;

/// Largest `|F(a) − F(b)| / d(a,b)^β` over sample pairs, with the pair.
pub fn holder_quotient(ambient: &AmbientSpace, points: &[usize], values: &[f64], beta: f64) -> (f64, Option<(usize, usize)>) {
    let mut best = (0.0, None);
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            let diff = (values[i] - values[j]).abs();
            if diff == 0.0 {
                continue;
            }
            let d = ambient.dist(points[i], points[j]);
            let q = if d == 0.0 { f64::INFINITY } else { diff / d.powf(beta) };
            if q > best.0 {
                best = (q, Some((points[i], points[j])));
            }
        }
    }
    best
}

/// `F̃(x) = (sup_a {F(a) − H d(a,x)^β} ∧ sup F) ∨ inf F` evaluated at the
/// query points.
pub fn mcshane_extend(
    ambient: &AmbientSpace,
    points: &[usize],
    values: &[f64],
    h: f64,
    beta: f64,
    queries: &[usize],
) -> Result<Vec<f64>> {
    if points.len() != values.len() {
        return Err(LabError::SizeMismatch {
            what: "sample values",
            expected: points.len(),
            got: values.len(),
        });
    }
    if points.is_empty() {
        return Err(LabError::InvalidArgument("McShane extension needs a sample".into()));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(LabError::InvalidArgument(format!("beta must lie in (0, 1], got {beta}")));
    }
    if !(h >= 0.0) {
        return Err(LabError::InvalidArgument(format!("H must be nonnegative, got {h}")));
    }
    let (q, pair) = holder_quotient(ambient, points, values, beta);
    if q > h * (1.0 + HOLDER_RTOL) {
        let (a, b) = pair.expect("a violating pair exists");
        return Err(LabError::HolderViolation { a, b, quotient: q, h });
    }
    let sup = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let inf = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(queries
        .iter()
        .map(|&x| {
            if let Some(i) = points.iter().position(|&p| p == x) {
                return values[i];
            }
            let s = points
                .iter()
                .zip(values)
                .map(|(&a, &v)| v - h * ambient.dist(a, x).powf(beta))
                .fold(f64::NEG_INFINITY, f64::max);
            s.min(sup).max(inf)
        })
        .collect())
}

/// Extends a vertex field of `space` to the query points with `β = 1` and `H`
/// equal to the field's measured Lipschitz quotient.
pub fn extend_field(space: &DiscreteSpace, field: &[f64], queries: &[usize]) -> Result<Vec<f64>> {
    let points = space.embedding();
    let (q, _) = holder_quotient(space.ambient(), points, field, 1.0);
    mcshane_extend(space.ambient(), points, field, q, 1.0, queries)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniformBounds {
    pub a_sup: f64,
    pub b_norm_sup: [f64; 2],
    pub div_sup: [f64; 2],
    pub c_sup: f64,
    /// Every member and the limit pass the form assumptions.
    pub all_pass: bool,
}

/// Coefficient sets aligned with the members and limit of a sequence.
#[derive(Clone, Debug)]
pub struct CoefficientSequence {
    pub members: Vec<CoefficientSet>,
    pub limit: CoefficientSet,
}

impl CoefficientSequence {
    pub fn new(seq: &SpaceSequence, members: Vec<CoefficientSet>, limit: CoefficientSet) -> Result<Self> {
        if members.len() != seq.len() {
            return Err(LabError::SizeMismatch {
                what: "coefficient sets",
                expected: seq.len(),
                got: members.len(),
            });
        }
        for (space, c) in seq.members().iter().zip(&members) {
            c.validate_shape(space)?;
        }
        limit.validate_shape(seq.limit())?;
        Ok(Self { members, limit })
    }

    /// The same coefficient set on every member, for identical members.
    pub fn constant(seq: &SpaceSequence, coeffs: &CoefficientSet) -> Result<Self> {
        Self::new(seq, vec![coeffs.clone(); seq.len()], coeffs.clone())
    }

    pub fn uniform_bounds(&self, seq: &SpaceSequence) -> Result<UniformBounds> {
        let mut out = UniformBounds {
            a_sup: 0.0,
            b_norm_sup: [0.0; 2],
            div_sup: [0.0; 2],
            c_sup: 0.0,
            all_pass: true,
        };
        let spaces = seq.members().iter().chain(std::iter::once(seq.limit()));
        let sets = self.members.iter().chain(std::iter::once(&self.limit));
        for (space, c) in spaces.zip(sets) {
            let r = check_assumptions(space, c)?;
            out.a_sup = out.a_sup.max(r.bounds.a_sup);
            out.c_sup = out.c_sup.max(r.bounds.c_sup);
            for i in 0..2 {
                out.b_norm_sup[i] = out.b_norm_sup[i].max(r.bounds.b_norm_sup[i]);
                out.div_sup[i] = out.div_sup[i].max(r.bounds.div_sup[i]);
            }
            out.all_pass &= r.passes();
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DefectRecord {
    pub member_index: usize,
    pub n_vertices: usize,
    pub check: String,
    pub defect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckSummary {
    pub check: String,
    pub first: f64,
    pub last: f64,
    /// Defects are non-increasing along the sequence.
    pub monotone: bool,
}

/// Per-member defects keyed by check name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub records: Vec<DefectRecord>,
}

impl ConvergenceReport {
    pub fn push(&mut self, member_index: usize, n_vertices: usize, check: impl Into<String>, defect: f64) {
        self.records.push(DefectRecord {
            member_index,
            n_vertices,
            check: check.into(),
            defect: defect.abs(),
        });
    }

    pub fn extend(&mut self, other: ConvergenceReport) {
        self.records.extend(other.records);
        self.records.sort_by_key(|a| a.member_index);
    }

    /// Check names in order of first appearance.
    pub fn checks(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.records {
            if !out.contains(&r.check) {
                out.push(r.check.clone());
            }
        }
        out
    }

    /// Defects of one check ordered by member index.
    pub fn defects(&self, check: &str) -> Vec<f64> {
        let mut rows: Vec<&DefectRecord> = self.records.iter().filter(|r| r.check == check).collect();
        rows.sort_by_key(|r| r.member_index);
        rows.iter().map(|r| r.defect).collect()
    }

    pub fn monotone(&self, check: &str) -> bool {
        self.defects(check).windows(2).all(|w| w[1] <= w[0])
    }

    pub fn summary(&self) -> Vec<CheckSummary> {
        self.checks()
            .into_iter()
            .map(|check| {
                let d = self.defects(&check);
                CheckSummary {
                    first: d.first().copied().unwrap_or(0.0),
                    last: d.last().copied().unwrap_or(0.0),
                    monotone: self.monotone(&check),
                    check,
                }
            })
            .collect()
    }

    /// `member_index,n_vertices,check_name,defect` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("member_index,n_vertices,check_name,defect\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{},{:.17e}\n", r.member_index, r.n_vertices, r.check, r.defect));
        }
        s
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "records": self.records,
            "summary": self.summary(),
        })
    }
}

fn clamp_identity(x: f64) -> f64 {
    x.clamp(-1.0, 1.0)
}

fn clamp_square(x: f64) -> f64 {
    (x * x).min(1.0)
}

struct CoefficientFields {
    b: [Vec<VertexField>; 2],
    div: [VertexField; 2],
    c: VertexField,
    tests: Vec<VertexField>,
    coeffs: CoefficientSet,
}

fn coefficient_fields(space: &DiscreteSpace, coeffs: &CoefficientSet, tests: &TestFamily) -> Result<CoefficientFields> {
    coeffs.validate_shape(space)?;
    let tv: Vec<VertexField> = tests.functions.iter().map(|t| t.restrict(space)).collect();
    let mut b = [Vec::new(), Vec::new()];
    for (i, theta) in [&coeffs.theta1, &coeffs.theta2].into_iter().enumerate() {
        for f in &tv {
            b[i].push(calculus::apply_derivation(space, theta, f)?.0);
        }
    }
    Ok(CoefficientFields {
        b,
        div: [
            calculus::divergence(space, &coeffs.theta1)?,
            calculus::divergence(space, &coeffs.theta2)?,
        ],
        c: coeffs.c.clone(),
        tests: tv,
        coeffs: coeffs.clone(),
    })
}

fn mapped_inner(space: &DiscreteSpace, u: &[f64], phi: fn(f64) -> f64, h: &[f64]) -> f64 {
    let v: Vec<f64> = u.iter().map(|&x| phi(x)).collect();
    space.inner(&v, h)
}

/// Weak, norm and in-measure defects of `b_i`, `div b_i`, `a` and `c` for
/// every member against the limit, tested on the family.
pub fn coefficient_convergence_defects(
    seq: &SpaceSequence,
    cs: &CoefficientSequence,
    tests: &TestFamily,
) -> Result<ConvergenceReport> {
    if cs.members.len() != seq.len() {
        return Err(LabError::SizeMismatch {
            what: "coefficient sets",
            expected: seq.len(),
            got: cs.members.len(),
        });
    }
    if tests.is_empty() {
        return Err(LabError::InvalidArgument("empty test family".into()));
    }
    let limit = seq.limit();
    let lf = coefficient_fields(limit, &cs.limit, tests)?;
    let phis: [fn(f64) -> f64; 2] = [clamp_identity, clamp_square];

    let per_member = seq
        .members()
        .par_iter()
        .zip(cs.members.par_iter())
        .enumerate()
        .map(|(idx, (space, coeffs))| -> Result<ConvergenceReport> {
            let mf = coefficient_fields(space, coeffs, tests)?;
            let nt = tests.len();
            let mut rep = ConvergenceReport::default();
            let nv = space.n_vertices();
            for i in 0..2 {
                let mut weak = 0.0_f64;
                let mut norm = 0.0_f64;
                let mut phi_defect = 0.0_f64;
                for f in 0..nt {
                    let (bn, bl) = (&mf.b[i][f], &lf.b[i][f]);
                    norm = norm.max((space.inner(bn, bn) - limit.inner(bl, bl)).abs());
                    for h in 0..nt {
                        weak = weak.max((space.inner(bn, &mf.tests[h]) - limit.inner(bl, &lf.tests[h])).abs());
                        for phi in phis {
                            let dn = mapped_inner(space, bn, phi, &mf.tests[h]);
                            let dl = mapped_inner(limit, bl, phi, &lf.tests[h]);
                            phi_defect = phi_defect.max((dn - dl).abs());
                        }
                    }
                }
                rep.push(idx, nv, format!("b{}_weak", i + 1), weak);
                rep.push(idx, nv, format!("b{}_norm_gap", i + 1), norm);
                rep.push(idx, nv, format!("b{}_phi", i + 1), phi_defect);

                let (dn, dl) = (&mf.div[i], &lf.div[i]);
                let div_weak = (0..nt)
                    .map(|h| (space.inner(dn, &mf.tests[h]) - limit.inner(dl, &lf.tests[h])).abs())
                    .fold(0.0, f64::max);
                rep.push(idx, nv, format!("div{}_weak", i + 1), div_weak);
                rep.push(idx, nv, format!("div{}_norm_gap", i + 1), space.inner(dn, dn) - limit.inner(dl, dl));
            }
            let mut a_energy = 0.0_f64;
            for u in 0..nt {
                for v in u..nt {
                    let (_, en) = calculus::carre_du_champ(space, &mf.tests[u], &mf.tests[v], Some(&mf.coeffs.a))?;
                    let (_, el) = calculus::carre_du_champ(limit, &lf.tests[u], &lf.tests[v], Some(&lf.coeffs.a))?;
                    // ∫Γ_a dm = 2·energy
                    a_energy = a_energy.max(2.0 * (en - el).abs());
                }
            }
            rep.push(idx, nv, "a_energy", a_energy);
            let c_weak = (0..nt)
                .map(|h| (space.inner(&mf.c, &mf.tests[h]) - limit.inner(&lf.c, &lf.tests[h])).abs())
                .fold(0.0, f64::max);
            rep.push(idx, nv, "c_weak", c_weak);
            rep.push(idx, nv, "c_norm_gap", space.inner(&mf.c, &mf.c) - limit.inner(&lf.c, &lf.c));
            Ok(rep)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = ConvergenceReport::default();
    for r in per_member {
        report.records.extend(r.records);
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolventSemigroupParams {
    pub alpha: f64,
    /// Nondecreasing times in `[0, T]`.
    pub t_grid: Vec<f64>,
    pub method: Method,
}

fn l2_distance(space: &DiscreteSpace, u: &[f64], v: &[f64]) -> f64 {
    let d: Vec<f64> = u.iter().zip(v).map(|(a, b)| a - b).collect();
    space.inner(&d, &d).sqrt()
}

/// `R`-defect `max_φ ‖G_α^n φ_n − G̃_α^∞ φ_∞‖_{L²(m_n)}` and `S`-defect
/// `max_{φ,t} ‖T_t^n φ_n − T̃_t^∞ φ_∞‖_{L²(m_n)}`, where `~` is the McShane
/// extension of the limit output sampled at member points.
pub fn resolvent_semigroup_convergence(
    seq: &SpaceSequence,
    cs: &CoefficientSequence,
    tests: &TestFamily,
    params: &ResolventSemigroupParams,
) -> Result<ConvergenceReport> {
    if !(params.alpha > 0.0) {
        return Err(LabError::InvalidArgument(format!("alpha must be positive, got {}", params.alpha)));
    }
    if cs.members.len() != seq.len() {
        return Err(LabError::SizeMismatch {
            what: "coefficient sets",
            expected: seq.len(),
            got: cs.members.len(),
        });
    }
    let outputs = |space: &DiscreteSpace, coeffs: &CoefficientSet| -> Result<(Vec<VertexField>, Vec<Vec<VertexField>>)> {
        let pair = generators(&assemble(space, coeffs)?);
        let ev = SemigroupEvaluator::new(&pair, Side::Primal, params.method)?;
        let fields: Vec<VertexField> = tests.functions.iter().map(|t| t.restrict(space)).collect();
        let resolvents = fields
            .iter()
            .map(|f| ev.resolvent(f, params.alpha))
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = fields.iter().map(|f| &f[..]).collect();
        let grid = ev.evolve_grid(&refs, &params.t_grid)?;
        Ok((resolvents, grid))
    };
    let limit = seq.limit();
    let (lim_res, lim_grid) = outputs(limit, &cs.limit)?;

    let per_member = seq
        .members()
        .par_iter()
        .zip(cs.members.par_iter())
        .enumerate()
        .map(|(idx, (space, coeffs))| -> Result<ConvergenceReport> {
            let (res, grid) = outputs(space, coeffs)?;
            let queries = space.embedding();
            let mut r_defect = 0.0_f64;
            let mut s_defect = 0.0_f64;
            for k in 0..tests.len() {
                let ext = extend_field(limit, &lim_res[k], queries)?;
                r_defect = r_defect.max(l2_distance(space, &res[k], &ext));
                for (ti, row) in grid.iter().enumerate() {
                    let ext = extend_field(limit, &lim_grid[ti][k], queries)?;
                    s_defect = s_defect.max(l2_distance(space, &row[k], &ext));
                }
            }
            let mut rep = ConvergenceReport::default();
            rep.push(idx, space.n_vertices(), "r_defect", r_defect);
            rep.push(idx, space.n_vertices(), "s_defect", s_defect);
            Ok(rep)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = ConvergenceReport::default();
    for r in per_member {
        report.records.extend(r.records);
    }
    Ok(report)
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(LabError::InvalidArgument("fdd needs at least one time".into()));
    }
    if times[0] < 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::InvalidArgument(
            "fdd times must be nonnegative and strictly increasing".into(),
        ));
    }
    Ok(())
}

/// `P_k = T_{t₁}(f₁ T_{t₂−t₁}(f₂ ⋯ T_{t_k−t_{k−1}} f_k))`.
pub fn fdd_functional_with(evaluator: &SemigroupEvaluator, times: &[f64], fs: &[&[f64]]) -> Result<VertexField> {
    check_times(times)?;
    if fs.len() != times.len() {
        return Err(LabError::SizeMismatch {
            what: "fdd functions",
            expected: times.len(),
            got: fs.len(),
        });
    }
    let k = times.len();
    let mut u = VertexField(fs[k - 1].to_vec());
    for j in (0..k - 1).rev() {
        let moved = evaluator.evolve(&u, times[j + 1] - times[j])?;
        u = VertexField(moved.iter().zip(fs[j]).map(|(a, b)| a * b).collect());
    }
    evaluator.evolve(&u, times[0])
}

pub fn fdd_functional(space: &DiscreteSpace, coeffs: &CoefficientSet, times: &[f64], fs: &[AmbientField]) -> Result<VertexField> {
    let pair = generators(&assemble(space, coeffs)?);
    let ev = SemigroupEvaluator::new(&pair, Side::Primal, Method::Dense)?;
    let fields = fs.iter().map(|f| f.restrict(space)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&[f64]> = fields.iter().map(|f| &f[..]).collect();
    fdd_functional_with(&ev, times, &refs)
}

/// `|P̃_k^n(x̄_∞) − P_k^∞(x̄_∞)|` per member, with `P̃` the McShane extension.
pub fn fdd_convergence_defect(
    seq: &SpaceSequence,
    cs: &CoefficientSequence,
    times: &[f64],
    fs: &[AmbientField],
) -> Result<ConvergenceReport> {
    check_times(times)?;
    let limit = seq.limit();
    let p_lim = fdd_functional(limit, &cs.limit, times, fs)?;
    let lim_bp = limit.basepoint();
    let target = limit.ambient_point(lim_bp);
    let per_member = seq
        .members()
        .par_iter()
        .zip(cs.members.par_iter())
        .enumerate()
        .map(|(idx, (space, coeffs))| -> Result<DefectRecord> {
            let p = fdd_functional(space, coeffs, times, fs)?;
            let ext = extend_field(space, &p, &[target])?[0];
            Ok(DefectRecord {
                member_index: idx,
                n_vertices: space.n_vertices(),
                check: "fdd".into(),
                defect: (ext - p_lim[lim_bp]).abs(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceReport { records: per_member })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mm_space::build_test_family;
    use nalgebra::DMatrix;

    fn line(points: &[f64]) -> AmbientSpace {
        AmbientSpace::from_coords(1, points.to_vec()).unwrap()
    }

    #[test]
    fn mcshane_examples() {
        let amb = line(&[0.0, 1.0, 0.5, 3.0]);
        let out = mcshane_extend(&amb, &[0, 1], &[0.0, 1.0], 1.0, 1.0, &[2, 0, 1, 3]).unwrap();
        assert_eq!(out, vec![0.5, 0.0, 1.0, 0.0]);
        let single = mcshane_extend(&amb, &[2], &[0.7], 1.0, 1.0, &[0, 1, 3]).unwrap();
        assert_eq!(single, vec![0.7; 3]);
    }

    #[test]
    fn mcshane_rejects_small_constant() {
        let amb = line(&[0.0, 1.0]);
        let err = mcshane_extend(&amb, &[0, 1], &[0.0, 2.0], 1.0, 1.0, &[0]).unwrap_err();
        assert!(matches!(err, LabError::HolderViolation { a: 0, b: 1, .. }));
    }

    #[test]
    fn report_roundtrip() {
        let mut r = ConvergenceReport::default();
        r.push(0, 8, "x", 0.5);
        r.push(1, 16, "x", -0.25);
        assert_eq!(r.defects("x"), vec![0.5, 0.25]);
        assert!(r.monotone("x"));
        assert!(r.to_csv().starts_with("member_index,n_vertices,check_name,defect\n0,8,x,"));
        let back: ConvergenceReport = serde_json::from_value(r.to_json()["records"].clone())
            .map(|records| ConvergenceReport { records })
            .unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn two_state_fdd() {
        let l = DMatrix::from_row_slice(2, 2, &[-0.5, 0.5, 0.5, -0.5]);
        let ev = SemigroupEvaluator::from_generator(l, vec![1.0, 1.0], Method::Dense).unwrap();
        let f = [1.0, 0.0];
        let p = fdd_functional_with(&ev, &[1.0, 2.0], &[&f, &f]).unwrap();
        // P(S₁ = 0, S₂ = 0 | S₀ = 0) = T₁(0,0)²
        let stay = 0.5 * (1.0 + (-1.0f64).exp());
        assert!((p[0] - stay * stay).abs() < 1e-14);
        assert!(fdd_functional_with(&ev, &[1.0, 1.0], &[&f, &f]).is_err());
        let ones = [1.0, 1.0];
        let p1 = fdd_functional_with(&ev, &[0.7], &[&ones]).unwrap();
        assert!(p1.iter().all(|v| (v - 1.0).abs() < 1e-14));
    }

    #[test]
    fn constant_sequence_has_zero_defects() {
        use crate::constructions::{model_sequence, ModelFamily};
        let base = model_sequence(&ModelFamily::circle(vec![8], None)).unwrap();
        let s = base.members()[0].clone();
        let seq = SpaceSequence::new(vec![s.clone(), s.clone()], s.clone()).unwrap();
        let coeffs = crate::constructions::random_coefficients(&s, &Default::default(), 3).unwrap();
        let cs = CoefficientSequence::constant(&seq, &coeffs).unwrap();
        let tests = build_test_family(seq.ambient(), &[0, 3], &[1.0, 2.0], 2).unwrap();
        let rep = coefficient_convergence_defects(&seq, &cs, &tests).unwrap();
        assert!(rep.records.iter().all(|r| r.defect == 0.0), "{:?}", rep.records);
        let params = ResolventSemigroupParams {
            alpha: 1.0,
            t_grid: vec![0.1, 0.5],
            method: Method::Dense,
        };
        let rep = resolvent_semigroup_convergence(&seq, &cs, &tests, &params).unwrap();
        assert!(rep.records.iter().all(|r| r.defect == 0.0));
        let fs = vec![tests.functions[0].sample(seq.ambient()), tests.functions[1].sample(seq.ambient())];
        let rep = fdd_convergence_defect(&seq, &cs, &[0.2, 0.4], &fs).unwrap();
        assert!(rep.records.iter().all(|r| r.defect == 0.0));
    }
}
