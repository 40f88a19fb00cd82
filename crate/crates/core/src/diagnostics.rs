//! Complementary error function, the Erfc conservativeness criterion and
//! volume growth checks.

use serde::{Deserialize, Serialize};

use crate::calculus::{self, CoefficientSet, VertexField};
use crate::dirichlet_form::{assemble, generators, Side};
use crate::error::{LabError, Result};
use crate::mm_space::{shortest_path_metric, DiscreteSpace, DistanceTable};
use crate::semigroup::{Method, SemigroupEvaluator};

const ERF_A: [f64; 5] = [
    3.161_123_743_870_565_6,
    113.864_154_151_050_16,
    377.485_237_685_302,
    3_209.377_589_138_469_5,
    0.185_777_706_184_603_15,
];
const ERF_B: [f64; 4] = [
    23.601_290_952_344_12,
    244.024_637_934_444_17,
    1_282.616_526_077_372_3,
    2_844.236_833_439_171,
];
const ERF_C: [f64; 9] = [
    0.564_188_496_988_670_1,
    8.883_149_794_388_376,
    66.119_190_637_141_63,
    298.635_138_197_400_1,
    881.952_221_241_769,
    1_712.047_612_634_070_6,
    2_051.078_377_826_071_6,
    1_230.339_354_797_997_2,
    2.153_115_354_744_038_5e-8,
];
const ERF_D: [f64; 8] = [
    15.744_926_110_709_835,
    117.693_950_891_312_5,
    537.181_101_862_009_9,
    1_621.389_574_566_690_2,
    3_290.799_235_733_459_7,
    4_362.619_090_143_247,
    3_439.367_674_143_721_6,
    1_230.339_354_803_749_4,
];
const ERF_P: [f64; 6] = [
    0.305_326_634_961_232_36,
    0.360_344_899_949_804_45,
    0.125_781_726_111_229_26,
    0.016_083_785_148_742_275,
    6.587_491_615_298_378e-4,
    0.016_315_387_137_302_097,
];
const ERF_Q: [f64; 5] = [
    2.568_520_192_289_822,
    1.872_952_849_923_460_4,
    0.527_905_102_951_428_4,
    0.060_518_341_312_441_32,
    0.002_335_204_976_268_691_8,
];
const FRAC_1_SQRT_PI: f64 = 0.564_189_583_547_756_3;
const ERF_THRESHOLD: f64 = 0.46875;
const ERF_XBIG: f64 = 26.543;

/// `exp(−y²)` split as `exp(−ỹ²)·exp(−(y−ỹ)(y+ỹ))` with `ỹ` truncated to
/// sixteenths, which avoids the cancellation in `y²` for large `y`.
fn exp_neg_square(y: f64) -> f64 {
    let yt = (y * 16.0).trunc() / 16.0;
    (-yt * yt).exp() * (-(y - yt) * (y + yt)).exp()
}

/// Complementary error function `(2/√π)∫_x^∞ e^{−y²}dy` by Cody's rational
/// Chebyshev approximations.
pub fn erfc(x: f64) -> f64 {
    if x.is_nan() {
        return f64::NAN;
    }
    let y = x.abs();
    if y <= ERF_THRESHOLD {
        let z = y * y;
        let num = (((ERF_A[4] * z + ERF_A[0]) * z + ERF_A[1]) * z + ERF_A[2]) * z + ERF_A[3];
        let den = (((z + ERF_B[0]) * z + ERF_B[1]) * z + ERF_B[2]) * z + ERF_B[3];
        return 1.0 - x * num / den;
    }
    let tail = if y >= ERF_XBIG {
        0.0
    } else if y <= 4.0 {
        let mut num = ERF_C[8] * y;
        let mut den = y;
        for i in 0..7 {
            num = (num + ERF_C[i]) * y;
            den = (den + ERF_D[i]) * y;
        }
        (num + ERF_C[7]) / (den + ERF_D[7]) * exp_neg_square(y)
    } else {
        let z = 1.0 / (y * y);
        let mut num = ERF_P[5] * z;
        let mut den = z;
        for i in 0..4 {
            num = (num + ERF_P[i]) * z;
            den = (den + ERF_Q[i]) * z;
        }
        let pq = z * (num + ERF_P[4]) / (den + ERF_Q[4]);
        (FRAC_1_SQRT_PI - pq) / y * exp_neg_square(y)
    };
    if x < 0.0 {
        2.0 - tail
    } else {
        tail
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionRow {
    pub r: f64,
    /// `m(B^ρ_{R+r})`.
    pub ball_measure: f64,
    /// `M^ρ(R+r)`.
    pub max_carre: f64,
    /// `r / sqrt(M^ρ(R+r)·T)`.
    pub erfc_argument: f64,
    pub product: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExactDefect {
    pub t: f64,
    /// `‖T_t 1 − 1‖_∞`.
    pub defect: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConservativenessReport {
    /// `div b_i = c` to 1e-12 for `i = 1, 2`.
    pub div_matches: [bool; 2],
    pub criterion_table: Vec<CriterionRow>,
    /// Smallest `c` with `|b₁−b₂||∇ρ| ≤ c(1+r)` on every `B^ρ_r`.
    pub drift_constant: f64,
    pub drift_bound_ok: bool,
    /// Products decrease over the last half of the table.
    pub tail_decreasing: bool,
    pub exact_defect: Vec<ExactDefect>,
}

impl ConservativenessReport {
    /// The criterion's hypotheses hold and its table decays.
    pub fn criterion_applies(&self) -> bool {
        self.div_matches[0] && self.div_matches[1] && self.drift_bound_ok && self.tail_decreasing
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConservativenessParams {
    /// Time horizon `T` in the Erfc argument.
    pub horizon: f64,
    /// Inner radius `R`.
    pub inner_radius: f64,
    pub r_grid: Vec<f64>,
    /// Times at which `‖T_t 1 − 1‖_∞` is measured.
    pub exact_times: Vec<f64>,
}

pub fn conservativeness_criterion(
    space: &DiscreteSpace,
    coeffs: &CoefficientSet,
    params: &ConservativenessParams,
    rho: Option<&VertexField>,
) -> Result<ConservativenessReport> {
    coeffs.validate_shape(space)?;
    if params.r_grid.is_empty() {
        return Err(LabError::InvalidArgument("empty r grid".into()));
    }
    if params.r_grid.windows(2).any(|w| w[1] <= w[0]) || params.r_grid[0] < 0.0 {
        return Err(LabError::InvalidArgument(
            "r grid must be nonnegative and strictly increasing".into(),
        ));
    }
    if !(params.horizon > 0.0) {
        return Err(LabError::InvalidArgument("horizon must be positive".into()));
    }
    let n = space.n_vertices();
    let rho = match rho {
        Some(r) => {
            if r.len() != n {
                return Err(LabError::SizeMismatch {
                    what: "rho",
                    expected: n,
                    got: r.len(),
                });
            }
            r.clone()
        }
        None => {
            let d = shortest_path_metric(space)?;
            VertexField(d.row(space.basepoint()).to_vec())
        }
    };

    let div1 = calculus::divergence(space, &coeffs.theta1)?;
    let div2 = calculus::divergence(space, &coeffs.theta2)?;
    let matches = |div: &VertexField| (0..n).all(|x| (div[x] - coeffs.c[x]).abs() <= 1e-12);
    let div_matches = [matches(&div1), matches(&div2)];

    let (gamma, _) = calculus::carre_du_champ(space, &rho, &rho, Some(&coeffs.a))?;
    let m = space.measure();
    let criterion_table: Vec<CriterionRow> = params
        .r_grid
        .iter()
        .map(|&r| {
            let radius = params.inner_radius + r;
            let ball_measure: f64 = (0..n).filter(|&x| rho[x] < radius).map(|x| m[x]).sum();
            let max_carre = (0..n)
                .filter(|&x| rho[x] <= radius)
                .map(|x| gamma[x])
                .fold(0.0, f64::max);
            let scale = (max_carre * params.horizon).sqrt();
            let erfc_argument = if scale > 0.0 {
                r / scale
            } else if r > 0.0 {
                f64::INFINITY
            } else {
                0.0
            };
            CriterionRow {
                r,
                ball_measure,
                max_carre,
                erfc_argument,
                product: ball_measure * erfc(erfc_argument),
            }
        })
        .collect();
    let half = criterion_table.len() / 2;
    let tail_decreasing = criterion_table[half..]
        .windows(2)
        .all(|w| w[1].product <= w[0].product);

    let diff = coeffs.theta1.difference(&coeffs.theta2)?;
    let diff_norm = calculus::derivation_norm(space, &diff)?;
    let grad = calculus::gradient_norm(space, &rho)?;
    let drift_constant = (0..n)
        .map(|x| diff_norm[x] * grad[x] / (1.0 + rho[x].max(0.0)))
        .fold(0.0, f64::max);

    let pair = generators(&assemble(space, coeffs)?);
    let ev = SemigroupEvaluator::new(&pair, Side::Primal, Method::Dense)?;
    let ones = vec![1.0; n];
    let exact_defect = params
        .exact_times
        .iter()
        .map(|&t| {
            let u = ev.evolve(&ones, t)?;
            Ok(ExactDefect {
                t,
                defect: u.iter().fold(0.0_f64, |acc, v| acc.max((v - 1.0).abs())),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ConservativenessReport {
        div_matches,
        criterion_table,
        drift_constant,
        drift_bound_ok: drift_constant.is_finite(),
        tail_decreasing,
        exact_defect,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeGrowth {
    pub holds: bool,
    /// `max_r m(B_r(x̄)) / (c₁ e^{c₂ r²})`.
    pub worst_ratio: f64,
}

/// `m(B_r(x̄)) ≤ c₁ e^{c₂ r²}` over every radius. Since `r ↦ m(B_r)` is a left
/// continuous step function it suffices to test the closed balls at the
/// distinct distances from the base point.
pub fn volume_growth_check(space: &DiscreteSpace, c1: f64, c2: f64) -> Result<VolumeGrowth> {
    let d = shortest_path_metric(space)?;
    let levels = closed_ball_masses(&d, space.measure(), space.basepoint());
    let worst_ratio = levels
        .iter()
        .map(|&(r, mass)| mass / (c1 * (c2 * r * r).exp()))
        .fold(0.0, f64::max);
    Ok(VolumeGrowth {
        holds: worst_ratio <= 1.0 + 1e-12,
        worst_ratio,
    })
}

/// Distinct distances from `center` with the mass of the closed ball.
fn closed_ball_masses(metric: &DistanceTable, measure: &[f64], center: usize) -> Vec<(f64, f64)> {
    let mut pairs: Vec<(f64, f64)> = metric.row(center).iter().copied().zip(measure.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut mass = 0.0;
    for (r, m) in pairs {
        mass += m;
        match out.last_mut() {
            Some(last) if last.0 == r => last.1 = mass,
            _ => out.push((r, mass)),
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BishopGromovCheck {
    pub nu: f64,
    /// Smallest `m(B_r)/r^{2ν}` over the sampled centers and distinct radii.
    pub constant: f64,
    pub feasible: bool,
}

/// `min_r m(B_r(center)) / r^{2ν}` over the distinct positive distances from
/// `center`; with strict balls the minimum on each step is at its right end.
pub fn bishop_gromov_constant(metric: &DistanceTable, measure: &[f64], center: usize, nu: f64) -> f64 {
    let levels = closed_ball_masses(metric, measure, center);
    levels
        .windows(2)
        .map(|w| w[0].1 / w[1].0.powf(2.0 * nu))
        .fold(f64::INFINITY, f64::min)
}

pub fn bishop_gromov_check(space: &DiscreteSpace, nu: f64) -> Result<BishopGromovCheck> {
    if !(nu > 0.0) {
        return Err(LabError::InvalidArgument(format!("nu must be positive, got {nu}")));
    }
    let d = shortest_path_metric(space)?;
    let constant = bishop_gromov_constant(&d, space.measure(), space.basepoint(), nu);
    Ok(BishopGromovCheck {
        nu,
        constant,
        feasible: constant > 0.0 && constant.is_finite(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calculus::EdgeField;
    use crate::mm_space::{AmbientSpace, Edge};
    use std::sync::Arc;

    /// Adaptive Simpson quadrature, used as an independent oracle.
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
            let m = 0.5 * (a + b);
            let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
            let (flm, frm) = (f(lm), f(rm));
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            let delta = left + right - whole;
            if depth == 0 || delta.abs() <= 15.0 * tol {
                return left + right + delta / 15.0;
            }
            rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
        }
        let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 50)
    }

    fn erfc_quadrature(x: f64) -> f64 {
        let g = |y: f64| (-y * y).exp();
        2.0 / std::f64::consts::PI.sqrt() * simpson(&g, x, x.max(0.0) + 12.0, 1e-16)
    }

    #[test]
    fn erfc_known_values() {
        assert_eq!(erfc(0.0), 1.0);
        assert!((erfc(1.0) - 0.157_299_207_050_285_1).abs() <= 1e-12);
        assert!((erfc(-6.0) - 2.0).abs() <= 1e-12);
        assert!(erfc(30.0).abs() <= 1e-12);
    }

    #[test]
    fn erfc_against_quadrature() {
        for i in 0..=40 {
            let x = -3.0 + 0.2 * i as f64;
            let q = erfc_quadrature(x);
            assert!((erfc(x) - q).abs() <= 1e-12, "x = {x}: {} vs {q}", erfc(x));
        }
    }

    #[test]
    fn erfc_reflection_and_monotone() {
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let x = -3.0 + 6.0 * i as f64 / 99.0;
            let v = erfc(x);
            assert!(v < prev);
            prev = v;
        }
        // near ±6 the values saturate at 2 and underflow toward 0
        let mut prev = f64::INFINITY;
        for i in 0..100 {
            let x = -6.0 + 36.0 * i as f64 / 99.0;
            assert!((erfc(x) + erfc(-x) - 2.0).abs() <= 1e-12);
            let v = erfc(x);
            assert!(v <= prev);
            prev = v;
        }
    }

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

    fn params() -> ConservativenessParams {
        ConservativenessParams {
            horizon: 1.0,
            inner_radius: 0.0,
            r_grid: vec![0.5, 1.0, 2.0, 4.0],
            exact_times: vec![0.1, 1.0, 10.0],
        }
    }

    #[test]
    fn trivial_coefficients_are_conservative() {
        let s = two_vertex();
        let rep = conservativeness_criterion(&s, &CoefficientSet::trivial(&s), &params(), None).unwrap();
        assert_eq!(rep.div_matches, [true, true]);
        assert!(rep.exact_defect.iter().all(|d| d.defect <= 1e-12));
        assert!(rep.tail_decreasing);
    }

    #[test]
    fn mismatched_divergence_flags_non_applicability() {
        let s = two_vertex();
        let coeffs = CoefficientSet {
            theta1: EdgeField::antisymmetric(vec![1.0]),
            c: VertexField(vec![1.0, -1.0]),
            ..CoefficientSet::trivial(&s)
        };
        let rep = conservativeness_criterion(&s, &coeffs, &params(), None).unwrap();
        assert_eq!(rep.div_matches, [true, false]);
        assert!(!rep.criterion_applies());
        assert_eq!(rep.exact_defect.len(), 3);
    }

    #[test]
    fn empty_grid_is_an_error() {
        let s = two_vertex();
        let p = ConservativenessParams { r_grid: vec![], ..params() };
        assert!(conservativeness_criterion(&s, &CoefficientSet::trivial(&s), &p, None).is_err());
    }

    #[test]
    fn growth_with_total_mass() {
        let s = two_vertex();
        assert!(volume_growth_check(&s, s.total_measure(), 0.0).unwrap().holds);
        assert!(!volume_growth_check(&s, 0.5, 0.0).unwrap().holds);
    }

    #[test]
    fn bishop_gromov_two_vertex() {
        let s = two_vertex();
        // only radius 1: B_1 = {0}, m = 1
        let bg = bishop_gromov_check(&s, 0.5).unwrap();
        assert_eq!(bg.constant, 1.0);
        assert!(bg.feasible);
    }
}
