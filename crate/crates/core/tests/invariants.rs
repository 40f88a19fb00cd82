use dirichlet_lab::calculus::{self, CoefficientSet};
use dirichlet_lab::constructions::{model_sequence, random_coefficients, ModelFamily, RandomCoefficientParams};
use dirichlet_lab::convergence::{holder_quotient, mcshane_extend};
use dirichlet_lab::diagnostics::erfc;
use dirichlet_lab::diffusion_sim::{sample_paths, Initial, JumpChain, Scheme, SimConfig};
use dirichlet_lab::dirichlet_form::{self, GeneratorPair, Side};
use dirichlet_lab::io;
use dirichlet_lab::mm_space::{AmbientSpace, DiscreteSpace};
use dirichlet_lab::semigroup::{self, Method, SemigroupEvaluator};
use proptest::prelude::*;

fn circle(n: usize) -> DiscreteSpace {
    let seq = model_sequence(&ModelFamily::circle(vec![n], None)).unwrap();
    seq.members()[0].clone()
}

fn interval(n: usize) -> DiscreteSpace {
    let seq = model_sequence(&ModelFamily::interval(vec![n], 1.0, None)).unwrap();
    seq.members()[0].clone()
}

fn space(n: usize, periodic: bool) -> DiscreteSpace {
    if periodic {
        circle(n)
    } else {
        interval(n)
    }
}

fn coefficients(space: &DiscreteSpace, seed: u64, markov: bool) -> CoefficientSet {
    let params = RandomCoefficientParams {
        markov,
        ..RandomCoefficientParams::default()
    };
    random_coefficients(space, &params, seed).unwrap()
}

fn pair(space: &DiscreteSpace, coeffs: &CoefficientSet) -> GeneratorPair {
    dirichlet_form::generators(&dirichlet_form::assemble(space, coeffs).unwrap())
}

fn field(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn random_coefficients_satisfy_assumptions(n in 4usize..24, periodic: bool, seed: u64, markov: bool) {
        let s = space(n, periodic);
        let c = coefficients(&s, seed, markov);
        prop_assert!(dirichlet_form::check_assumptions(&s, &c).unwrap().passes());
        let asm = dirichlet_form::assemble(&s, &c).unwrap();
        let sector = dirichlet_form::sector_constant(&asm).unwrap();
        prop_assert!(sector.measured <= sector.analytic * (1.0 + 1e-12));
        let p = pair(&s, &c);
        if markov {
            prop_assert!(p.markov.is_markov());
        }
    }

    #[test]
    fn form_dominates_cheeger_energy((n, f) in (4usize..20).prop_flat_map(|n| (Just(n), field(n))), seed: u64) {
        let s = circle(n);
        let c = coefficients(&s, seed, false);
        let asm = dirichlet_form::assemble(&s, &c).unwrap();
        let e = asm.eval(&f, &f);
        let ch = calculus::cheeger_energy(&s, &f).unwrap();
        prop_assert!(e >= c.lambda * ch - 1e-12 * (1.0 + e.abs()), "E = {e}, lambda Ch = {}", c.lambda * ch);
    }

    #[test]
    fn dual_generator_is_measure_adjoint(n in 3usize..16, periodic: bool, seed: u64) {
        let s = space(n, periodic);
        let p = pair(&s, &coefficients(&s, seed, false));
        let m = s.measure();
        let scale = p.l.amax().max(1.0);
        for x in 0..n {
            for y in 0..n {
                let d = m[x] * p.l[(x, y)] - m[y] * p.l_hat[(y, x)];
                prop_assert!(d.abs() <= 1e-12 * scale, "({x},{y}): {d}");
            }
        }
    }

    #[test]
    fn semigroup_duality(
        (n, f, g) in (3usize..14).prop_flat_map(|n| (Just(n), field(n), field(n))),
        t in 0.0f64..3.0,
        seed: u64,
    ) {
        let s = circle(n);
        let p = pair(&s, &coefficients(&s, seed, false));
        prop_assert!(semigroup::duality_defect(&p, &f, &g, t, Method::Dense).unwrap() < 1e-10);
    }

    #[test]
    fn markov_semigroup_is_sub_markov(n in 3usize..14, periodic: bool, t in 0.01f64..5.0, seed: u64) {
        let s = space(n, periodic);
        let p = pair(&s, &coefficients(&s, seed, true));
        let ev = SemigroupEvaluator::new(&p, Side::Primal, Method::Dense).unwrap();
        let tt = ev.transition(t).unwrap();
        prop_assert!(tt.iter().all(|&v| v >= -1e-12));
        let deficit = ev.mass_deficit(t).unwrap();
        for x in 0..n {
            let row: f64 = tt.row(x).sum();
            prop_assert!(row <= 1.0 + 1e-12);
            prop_assert!((0.0..=1.0).contains(&deficit[x]), "deficit {} at {x}", deficit[x]);
            prop_assert!((1.0 - row - deficit[x]).abs() < 1e-10);
        }
    }

    #[test]
    fn resolvent_equation_holds(n in 3usize..14, a in 0.1f64..5.0, b in 0.1f64..5.0, seed: u64) {
        let s = interval(n);
        let p = pair(&s, &coefficients(&s, seed, false));
        let ev = SemigroupEvaluator::new(&p, Side::Primal, Method::Dense).unwrap();
        prop_assert!(semigroup::resolvent_equation_defect(&ev, a, b).unwrap() < 1e-9);
    }

    #[test]
    fn derivations_are_linear_and_kill_constants(
        (n, f, g) in (3usize..16).prop_flat_map(|n| (Just(n), field(n), field(n))),
        k in -2.0f64..2.0,
        seed: u64,
    ) {
        let s = circle(n);
        let c = coefficients(&s, seed, false);
        let (bf, _) = calculus::apply_derivation(&s, &c.theta1, &f).unwrap();
        let (bg, _) = calculus::apply_derivation(&s, &c.theta1, &g).unwrap();
        let sum: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a + k * b).collect();
        let (bs, _) = calculus::apply_derivation(&s, &c.theta1, &sum).unwrap();
        for x in 0..n {
            prop_assert!((bs[x] - bf[x] - k * bg[x]).abs() < 1e-12);
        }
        let (b1, _) = calculus::apply_derivation(&s, &c.theta1, &vec![k; n]).unwrap();
        prop_assert!(b1.sup_norm() < 1e-12);
        // the product rule is exact when one factor is constant
        prop_assert!(calculus::leibniz_defect(&s, &c.theta1, &f, &vec![k; n]).unwrap() < 1e-12);
    }

    #[test]
    fn sampling_is_deterministic(n in 2usize..10, seed: u64, uniformize: bool) {
        let s = circle(n.max(3));
        let p = pair(&s, &coefficients(&s, seed, true));
        let chain = JumpChain::new(&p, Side::Primal).unwrap();
        let config = SimConfig {
            horizon: 1.0,
            n_paths: 64,
            seed,
            scheme: if uniformize { Scheme::Uniformization } else { Scheme::ExactJump },
            initial: Initial::MeasureProportional,
        };
        let a = sample_paths(&chain, &config).unwrap();
        let b = sample_paths(&chain, &config).unwrap();
        prop_assert_eq!(&a, &b);
        for path in &a {
            prop_assert!(path.times.windows(2).all(|w| w[0] < w[1]));
            prop_assert!(path.times.last().copied().unwrap_or(0.0) <= 1.0);
            prop_assert!(path.lifetime.is_none_or(|z| z <= 1.0));
        }
        let rows = io::parse_paths_csv(&io::paths_csv(&a)).unwrap();
        let expected: usize = a.iter().map(|p| p.times.len() + usize::from(p.lifetime.is_some())).sum();
        prop_assert_eq!(rows.len(), expected);
    }

    #[test]
    fn space_and_coefficients_round_trip(n in 3usize..20, periodic: bool, seed: u64) {
        let s = space(n, periodic);
        let c = coefficients(&s, seed, false);
        let s2 = io::parse_space(&io::space_to_json(&s).unwrap()).unwrap();
        prop_assert_eq!(s2.measure(), s.measure());
        prop_assert_eq!(s2.edges(), s.edges());
        let c2 = io::parse_coefficients(&io::coefficients_to_json(&c).unwrap(), &s2).unwrap();
        prop_assert_eq!(c2.a.values, c.a.values);
        prop_assert_eq!(c2.theta1.values, c.theta1.values);
        prop_assert_eq!(c2.theta2.values, c.theta2.values);
        prop_assert_eq!(c2.c.0, c.c.0);
    }

    #[test]
    fn mcshane_extension_preserves_holder_constant(
        values in prop::collection::vec(-1.0f64..1.0, 6),
        beta in 0.2f64..1.0,
    ) {
        let coords: Vec<f64> = (0..12).map(|k| k as f64 / 11.0).collect();
        let ambient = AmbientSpace::from_coords(1, coords).unwrap();
        let points = [0usize, 2, 4, 6, 8, 10];
        let (h, _) = holder_quotient(&ambient, &points, &values, beta);
        let all: Vec<usize> = (0..12).collect();
        let ext = mcshane_extend(&ambient, &points, &values, h, beta, &all).unwrap();
        for (k, &p) in points.iter().enumerate() {
            prop_assert!((ext[p] - values[k]).abs() < 1e-12);
        }
        let (h_ext, _) = holder_quotient(&ambient, &all, &ext, beta);
        prop_assert!(h_ext <= h * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn erfc_reflection_and_range(x in -6.0f64..6.0) {
        let v = erfc(x);
        prop_assert!((0.0..=2.0).contains(&v));
        prop_assert!((v + erfc(-x) - 2.0).abs() < 1e-14);
    }
}
