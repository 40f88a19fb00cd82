//! Experiment stages for each config kind.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use dirichlet_lab::calculus::{self, CoefficientSet, VertexField};
use dirichlet_lab::constructions::{self, FamilyKind, ModelFamily, RandomCoefficientParams, ResolventParams};
use dirichlet_lab::convergence::{self, CoefficientSequence, ConvergenceReport, ResolventSemigroupParams};
use dirichlet_lab::diagnostics::{self, ConservativenessParams};
use dirichlet_lab::diffusion_sim::{self, Estimate, Initial, JumpChain, KolmogorovParams, MomentMode, SimConfig};
use dirichlet_lab::dirichlet_form::{self, GeneratorPair, Side};
use dirichlet_lab::io::{self, CoefficientFile};
use dirichlet_lab::mm_space::{build_test_family, AmbientField, DiscreteSpace, DistanceTable, SpaceSequence};
use dirichlet_lab::semigroup::{self, Method, SemigroupEvaluator};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::bundle::Bundle;
use crate::config::{
    CoefficientSpec, ConserveParams, ConvergeParams, ExperimentConfig, FddParams, FieldSpec, Params, SimulateParams,
    SpectrumParams, TightnessParams, Tolerances, ValidateParams,
};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub member: Option<usize>,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

/// Checks and statistics accumulated by a run.
#[derive(Default)]
pub struct Outcome {
    pub checks: Vec<Check>,
    pub stats: Map<String, Value>,
}

impl Outcome {
    /// `value ≤ threshold`.
    fn at_most(&mut self, name: &str, member: Option<usize>, value: f64, threshold: f64, detail: impl Into<String>) {
        self.push(name, member, value <= threshold, value, threshold, detail);
    }

    fn push(&mut self, name: &str, member: Option<usize>, passed: bool, value: f64, threshold: f64, detail: impl Into<String>) {
        self.checks.push(Check {
            name: name.into(),
            member,
            passed,
            value,
            threshold,
            detail: detail.into(),
        });
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Runs a stage, labelling any error with its name.
fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().with_context(|| format!("stage `{name}` failed"))
}

struct Setup {
    family: Option<ModelFamily>,
    seq: SpaceSequence,
    cs: CoefficientSequence,
}

fn family_of(config: &ExperimentConfig) -> Option<ModelFamily> {
    let s = &config.space;
    let kind = s.family?;
    let sizes = s.sizes.clone().unwrap_or_default();
    let length = s.length.unwrap_or(1.0);
    Some(match kind {
        FamilyKind::Circle => {
            let mut f = ModelFamily::circle(sizes, s.limit);
            f.length = length;
            f
        }
        FamilyKind::Interval => ModelFamily::interval(sizes, length, s.limit),
        FamilyKind::Torus => ModelFamily::torus(sizes, length, s.limit),
    })
}

fn resolve_path(base: &Path, p: &str) -> std::path::PathBuf {
    let path = Path::new(p);
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base.join(path)
    }
}

fn ambient_field(setup_family: Option<&ModelFamily>, seq: &SpaceSequence, spec: &FieldSpec, key: &str) -> Result<AmbientField> {
    match spec {
        FieldSpec::Named(name) => {
            let family = setup_family.ok_or_else(|| anyhow!("{key}: named functions need space.family"))?;
            Ok(constructions::named_field(family, name).with_context(|| key.to_string())?)
        }
        FieldSpec::Values(v) => {
            if v.len() != seq.ambient().len() {
                bail!("{key}: {} values given, the ambient space has {} points", v.len(), seq.ambient().len());
            }
            Ok(AmbientField(v.clone()))
        }
    }
}

fn setup(config: &ExperimentConfig, base: &Path) -> Result<Setup> {
    let family = family_of(config);
    let seq = stage("space", || match (&family, &config.space.file) {
        (Some(f), _) => Ok(constructions::model_sequence(f)?),
        (None, Some(p)) => {
            let space = io::read_space(&resolve_path(base, p))?;
            Ok(SpaceSequence::new(vec![space.clone()], space)?)
        }
        (None, None) => bail!("no space given"),
    })?;
    let cs = stage("coefficients", || {
        let each = |build: &dyn Fn(&DiscreteSpace, u64) -> Result<CoefficientSet>| -> Result<CoefficientSequence> {
            let members = seq
                .members()
                .iter()
                .enumerate()
                .map(|(i, s)| build(s, i as u64))
                .collect::<Result<Vec<_>>>()?;
            let limit_index = if config.space.limit.is_some() { seq.len() } else { seq.len() - 1 };
            let limit = build(seq.limit(), limit_index as u64)?;
            Ok(CoefficientSequence::new(&seq, members, limit)?)
        };
        match &config.coefficients {
            CoefficientSpec::Trivial => each(&|s, _| Ok(CoefficientSet::trivial(s))),
            CoefficientSpec::Random {
                lambda,
                a_spread,
                theta_scale,
                slack,
                markov,
            } => {
                let p = RandomCoefficientParams {
                    lambda: *lambda,
                    a_spread: *a_spread,
                    theta_scale: *theta_scale,
                    slack: *slack,
                    markov: *markov,
                };
                each(&|s, i| Ok(constructions::random_coefficients(s, &p, config.seed.wrapping_add(i))?))
            }
            CoefficientSpec::Resolvent {
                lam,
                a0,
                slack,
                g,
                g2,
                h,
                h_smoothing,
            } => {
                let fam = family.as_ref();
                let g = ambient_field(fam, &seq, g, "coefficients.g")?;
                let g2 = g2.as_ref().map(|s| ambient_field(fam, &seq, s, "coefficients.g2")).transpose()?;
                let h = h.as_ref().map(|s| ambient_field(fam, &seq, s, "coefficients.h")).transpose()?;
                let params = ResolventParams {
                    lam: *lam,
                    a0: *a0,
                    slack: *slack,
                    h_smoothing: *h_smoothing,
                };
                Ok(constructions::resolvent_coefficients(&seq, &g, g2.as_ref(), h.as_ref(), &params)?)
            }
            CoefficientSpec::Eigen { k, k2, slack } => Ok(constructions::eigen_coefficients(&seq, *k, *k2, *slack)?),
            CoefficientSpec::File { path } => {
                let text = std::fs::read_to_string(resolve_path(base, path)).with_context(|| format!("reading {path}"))?;
                each(&|s, _| Ok(io::parse_coefficients(&text, s)?))
            }
            CoefficientSpec::Inline {
                a,
                lambda,
                theta1,
                theta2,
                c,
            } => {
                let file = CoefficientFile {
                    a: a.clone(),
                    lambda: *lambda,
                    theta1: theta1.clone(),
                    theta2: theta2.clone(),
                    c: c.clone(),
                };
                each(&|s, _| Ok(file.build(s)?))
            }
        }
    })?;
    Ok(Setup { family, seq, cs })
}

fn member(setup: &Setup, index: usize) -> Result<(&DiscreteSpace, &CoefficientSet)> {
    let space = setup
        .seq
        .members()
        .get(index)
        .ok_or_else(|| anyhow!("params.member: {index} out of range for {} members", setup.seq.len()))?;
    Ok((space, &setup.cs.members[index]))
}

/// Generator pair of a member, upwinded on request.
fn member_pair(space: &DiscreteSpace, coeffs: &CoefficientSet, upwind: bool) -> Result<(CoefficientSet, GeneratorPair, f64)> {
    if upwind {
        let up = dirichlet_form::markovize_upwind(space, coeffs)?;
        Ok((up.coeffs, up.pair, up.modification_norm))
    } else {
        let pair = dirichlet_form::generators(&dirichlet_form::assemble(space, coeffs)?);
        Ok((coeffs.clone(), pair, 0.0))
    }
}

/// `|estimate − p| / SE` for an empirical frequency, with the binomial SE under
/// the exact probability so unvisited states still get a finite score.
fn frequency_z(e: &Estimate, p: f64, n_paths: usize) -> f64 {
    let se = (p * (1.0 - p) / n_paths as f64).max(0.0).sqrt();
    z_score(&Estimate { estimate: e.estimate, std_error: se }, p)
}

fn assumptions_check(space: &DiscreteSpace, coeffs: &CoefficientSet, member: usize, out: &mut Outcome) -> Result<()> {
    let r = dirichlet_form::check_assumptions(space, coeffs)?;
    out.push(
        "assumptions",
        Some(member),
        r.passes(),
        r.bounds.a_min,
        coeffs.lambda,
        format!(
            "elliptic {}, positivity {:?}, {} + {} vertices with c < div b",
            r.elliptic,
            r.positivity,
            r.violations[0].len(),
            r.violations[1].len()
        ),
    );
    Ok(())
}

fn z_score(e: &Estimate, exact: f64) -> f64 {
    let diff = (e.estimate - exact).abs();
    if e.std_error > 0.0 {
        diff / e.std_error
    } else if diff <= 1e-12 {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn run(config: &ExperimentConfig, base: &Path, bundle: &mut Bundle) -> Result<Outcome> {
    let setup = setup(config, base)?;
    let mut out = Outcome::default();
    out.stats.insert("members".into(), json!(setup.seq.members().iter().map(|s| s.n_vertices()).collect::<Vec<_>>()));
    out.stats.insert("limit_vertices".into(), json!(setup.seq.limit().n_vertices()));
    let tol = &config.tolerances;
    match &config.params {
        Params::Validate(p) => validate(&setup, p, tol, config.seed, bundle, &mut out)?,
        Params::Spectrum(p) => spectrum(&setup, p, bundle, &mut out)?,
        Params::Simulate(p) => simulate(&setup, p, tol, config.seed, bundle, &mut out)?,
        Params::Converge(p) => converge(&setup, p, bundle, &mut out)?,
        Params::Conserve(p) => conserve(&setup, p, tol, bundle, &mut out)?,
        Params::Fdd(p) => fdd(&setup, p, tol, config.seed, bundle, &mut out)?,
        Params::Tightness(p) => tightness(&setup, p, tol, config.seed, bundle, &mut out)?,
    }
    Ok(out)
}

fn validate(setup: &Setup, p: &ValidateParams, tol: &Tolerances, seed: u64, bundle: &mut Bundle, out: &mut Outcome) -> Result<()> {
    let mut sector_csv = String::from("member_index,n_vertices,lambda,analytic,measured\n");
    for (i, (space, coeffs)) in setup.seq.members().iter().zip(&setup.cs.members).enumerate() {
        let m = Some(i);
        let n = space.n_vertices();
        let report = stage("assumptions", || Ok(dirichlet_form::check_assumptions(space, coeffs)?))?;
        out.push(
            "assumptions",
            m,
            report.passes(),
            report.bounds.a_min,
            coeffs.lambda,
            format!(
                "elliptic {}, positivity {:?}, symmetric a {}",
                report.elliptic, report.positivity, report.symmetric_a
            ),
        );
        let asm = stage("assemble", || Ok(dirichlet_form::assemble(space, coeffs)?))?;
        let sector = stage("sector", || Ok(dirichlet_form::sector_constant(&asm)?))?;
        let _ = writeln!(sector_csv, "{i},{n},{},{},{}", coeffs.lambda, sector.analytic, sector.measured);
        out.at_most(
            "sector_bound",
            m,
            sector.measured,
            sector.analytic * (1.0 + 1e-12),
            "measured sector constant against its analytic bound",
        );

        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(i as u64));
        let mut worst = f64::INFINITY;
        let mut fields = Vec::with_capacity(p.n_random_fields);
        for _ in 0..p.n_random_fields {
            let f: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect();
            let e = asm.eval(&f, &f);
            let lower = coeffs.lambda * calculus::cheeger_energy(space, &f)?;
            let scale = e.abs().max(lower.abs()).max(f64::MIN_POSITIVE);
            worst = worst.min((e - lower) / scale);
            fields.push(f);
        }
        if p.n_random_fields > 0 {
            out.push(
                "form_positivity",
                m,
                worst >= -tol.positivity_rtol,
                worst,
                -tol.positivity_rtol,
                "min (E(f,f) - lambda Ch(f)) / scale over random f",
            );
        }

        let diff = stage("generator_difference", || Ok(dirichlet_form::generator_difference_check(space, coeffs)?))?;
        out.at_most(
            "generator_difference",
            m,
            diff.max_residual,
            tol.generator_identity * diff.scale.max(f64::MIN_POSITIVE),
            format!("literal sign variant residual {:e}", diff.literal_variant_residual),
        );
        let pair = dirichlet_form::generators(&asm);
        if p.require_markov {
            out.push(
                "markov_rates",
                m,
                pair.markov.is_markov(),
                pair.markov.min_off_diagonal.min(pair.markov.min_off_diagonal_dual),
                0.0,
                format!(
                    "{} negative primal and {} negative dual rates",
                    pair.markov.negative_entries.len(),
                    pair.markov.negative_entries_dual.len()
                ),
            );
        }
        let ev = SemigroupEvaluator::new(&pair, Side::Primal, Method::Dense)?;
        let mut dual = 0.0_f64;
        for (k, &t) in p.times.iter().enumerate() {
            if let (Some(f), Some(g)) = (fields.get(2 * k), fields.get(2 * k + 1)) {
                dual = dual.max(semigroup::duality_defect(&pair, f, g, t, Method::Dense)?);
            }
            if t > 0.0 && pair.markov.is_markov() {
                let (_, rep) = semigroup::heat_kernel(&ev, t)?;
                out.push(
                    "kernel_sub_markov",
                    m,
                    rep.positivity && rep.contraction,
                    rep.max_row_mass,
                    1.0 + 1e-12,
                    format!("t = {t}, min kernel {:e}", rep.min_kernel),
                );
            }
        }
        if fields.len() >= 2 {
            out.at_most("duality", m, dual, tol.duality, "(T_t f, g) vs (f, T^_t g)");
        }
        let mut ident = 0.0_f64;
        for &alpha in &p.alphas {
            ident = ident.max(semigroup::resolvent_identity_defect(&asm, &ev, alpha)?);
        }
        if !p.alphas.is_empty() {
            out.at_most("resolvent_identity", m, ident, tol.resolvent_identity, "E_alpha(G_alpha f, g) = (f, g)");
        }
        if p.alphas.len() >= 2 {
            let (a, b) = (p.alphas[0], p.alphas[p.alphas.len() - 1]);
            let d = semigroup::resolvent_equation_defect(&ev, a, b)?;
            out.at_most("resolvent_equation", m, d, tol.resolvent_equation, format!("alpha = {a}, beta = {b}"));
        }
    }
    bundle.write("sector.csv", &sector_csv)
}

/// Closed-form eigenvalues of `−Δ` on a model family member, ascending.
fn analytic_spectrum(family: &ModelFamily, n: usize) -> Vec<f64> {
    let mut v: Vec<f64> = match family.kind {
        FamilyKind::Circle => {
            let h = family.length / n as f64;
            (0..n).map(|j| 2.0 * (1.0 - (2.0 * PI * j as f64 / n as f64).cos()) / (h * h)).collect()
        }
        FamilyKind::Interval => {
            let h = family.length / (n - 1) as f64;
            (0..n).map(|j| 2.0 * (1.0 - (PI * j as f64 / (n - 1) as f64).cos()) / (h * h)).collect()
        }
        FamilyKind::Torus => {
            let side = (n as f64).sqrt().round() as usize;
            let h = family.length / side as f64;
            let one = |j: usize| 2.0 * (1.0 - (2.0 * PI * j as f64 / side as f64).cos());
            (0..side)
                .flat_map(|a| (0..side).map(move |b| (a, b)))
                .map(|(a, b)| (one(a) + one(b)) / (h * h))
                .collect()
        }
    };
    v.sort_by(f64::total_cmp);
    v
}

fn spectrum(setup: &Setup, p: &SpectrumParams, bundle: &mut Bundle, out: &mut Outcome) -> Result<()> {
    let mut csv = String::from("member_index,n_vertices,k,eigenvalue,analytic\n");
    for (i, space) in setup.seq.members().iter().enumerate() {
        let n = space.n_vertices();
        let k_max = p.k_max.min(n);
        let spec = stage("spectrum", || Ok(semigroup::cheeger_spectrum(space, k_max)?))?;
        let analytic = setup.family.as_ref().map(|f| analytic_spectrum(f, n));
        let scale = analytic.as_ref().map_or(1.0, |a| a.last().copied().unwrap_or(1.0).max(1.0));
        let mut worst = 0.0_f64;
        for (k, &lam) in spec.values.iter().enumerate() {
            let a = analytic.as_ref().map(|a| a[k]);
            if let Some(a) = a {
                worst = worst.max((lam - a).abs() / scale);
            }
            let a_str = a.map_or(String::new(), |a| a.to_string());
            let _ = writeln!(csv, "{i},{n},{k},{lam},{a_str}");
        }
        let min = spec.values.iter().copied().fold(f64::INFINITY, f64::min);
        out.push(
            "spectrum_nonnegative",
            Some(i),
            min >= -1e-10 * scale,
            min,
            -1e-10 * scale,
            "smallest eigenvalue of -Laplacian",
        );
        if analytic.is_some() {
            out.at_most(
                "spectrum_analytic",
                Some(i),
                worst,
                p.analytic_rtol,
                "max |computed - closed form| relative to the spectral radius",
            );
        }
    }
    bundle.write("spectrum.csv", &csv)
}

fn simulate(setup: &Setup, p: &SimulateParams, tol: &Tolerances, seed: u64, bundle: &mut Bundle, out: &mut Outcome) -> Result<()> {
    let (space, coeffs) = member(setup, p.member)?;
    let m = Some(p.member);
    let n = space.n_vertices();
    let (coeffs, pair, modification) = stage("generators", || member_pair(space, coeffs, p.upwind))?;
    assumptions_check(space, &coeffs, p.member, out)?;
    out.stats.insert("upwind_modification".into(), json!(modification));
    let f = ambient_field(setup.family.as_ref(), &setup.seq, &p.test_function, "params.test_function")?.restrict(space)?;
    let config = SimConfig {
        horizon: p.horizon,
        n_paths: p.n_paths,
        seed,
        scheme: p.scheme,
        initial: p.initial.clone(),
    };
    let paths = stage("sample", || {
        Ok(diffusion_sim::sample_paths(&JumpChain::new(&pair, Side::Primal)?, &config)?)
    })?;
    let dual_paths = stage("sample_dual", || {
        let cfg = SimConfig {
            seed: seed ^ 0x5DEE_CE66_D1CE_4E5B,
            ..config.clone()
        };
        Ok(diffusion_sim::sample_paths(&JumpChain::new(&pair, Side::Dual)?, &cfg)?)
    })?;
    bundle.write("paths.csv", &io::paths_csv(&paths[..p.dump_paths.min(paths.len())]))?;

    let ev = SemigroupEvaluator::new(&pair, Side::Primal, Method::Dense)?;
    let pi = p.initial.distribution(space.measure())?;
    let tt = ev.transition(p.horizon)?;
    let occ = diffusion_sim::empirical_occupation(&paths, p.horizon, n);
    let mut csv = String::from("vertex,estimate,std_error,exact\n");
    let mut worst = 0.0_f64;
    for (y, e) in occ.iter().enumerate() {
        let exact: f64 = (0..n).map(|x| pi[x] * tt[(x, y)]).sum();
        worst = worst.max(frequency_z(e, exact, p.n_paths));
        let _ = writeln!(csv, "{y},{},{},{exact}", e.estimate, e.std_error);
    }
    bundle.write("occupation.csv", &csv)?;
    out.at_most("occupation", m, worst, tol.se_band, "max |z| of empirical occupation at the horizon, binomial SE");

    let survival = diffusion_sim::survival(&paths, p.horizon);
    let ones = vec![1.0; n];
    let exact_survival: f64 = pi.iter().zip(ev.evolve(&ones, p.horizon)?.iter()).map(|(a, b)| a * b).sum();
    out.at_most(
        "survival",
        m,
        frequency_z(&survival, exact_survival, p.n_paths),
        tol.se_band,
        format!("empirical {} vs exact {exact_survival}", survival.estimate),
    );

    let mart = stage("martingale", || Ok(diffusion_sim::martingale_residuals(&paths, &pair.l, &f, &p.checkpoints)?))?;
    let mut csv = String::from("t,mean,std_error\n");
    let mut worst = 0.0_f64;
    for c in &mart.checkpoints {
        worst = worst.max(z_score(&c.mean, 0.0));
        let _ = writeln!(csv, "{},{},{}", c.t, c.mean.estimate, c.mean.std_error);
    }
    for e in &mart.increment_products {
        worst = worst.max(z_score(e, 0.0));
    }
    bundle.write("martingale.csv", &csv)?;
    out.at_most("martingale", m, worst, tol.se_band, "max |z| of Dynkin means and increment products");

    let lz = stage("lyons_zheng", || {
        Ok(diffusion_sim::lyons_zheng_residual(
            space,
            &coeffs,
            &pair,
            &paths,
            Some(&dual_paths),
            &f,
            p.horizon,
            &p.checkpoints,
        )?)
    })?;
    let mut csv = String::from("t,forward_mean,forward_se,backward_mean,backward_se,drift_mean,drift_se,max_residual\n");
    for c in &lz.checkpoints {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            c.t,
            c.forward.estimate,
            c.forward.std_error,
            c.backward.estimate,
            c.backward.std_error,
            c.drift.estimate,
            c.drift.std_error,
            c.max_residual
        );
    }
    bundle.write("lyons_zheng.csv", &csv)?;
    out.at_most(
        "lyons_zheng",
        m,
        lz.max_residual,
        tol.lyons_zheng,
        format!("{} surviving paths; literal variant {:e}", lz.paths_used, lz.literal_variant_max_residual),
    );
    out.stats.insert("survival".into(), json!(survival));
    Ok(())
}

fn converge(setup: &Setup, p: &ConvergeParams, bundle: &mut Bundle, out: &mut Outcome) -> Result<()> {
    let seq = &setup.seq;
    let limit = seq.limit();
    let nl = limit.n_vertices();
    let centers: Vec<usize> = (0..p.n_centers.max(1))
        .map(|k| limit.ambient_point(k * nl / p.n_centers.max(1)))
        .collect();
    let tests = stage("test_family", || Ok(build_test_family(seq.ambient(), &centers, &p.levels, p.max_products)?))?;
    let mut report = ConvergenceReport::default();
    if p.coefficient_defects {
        let bounds = stage("uniform_bounds", || Ok(setup.cs.uniform_bounds(seq)?))?;
        out.push(
            "uniform_bounds",
            None,
            bounds.all_pass,
            f64::from(u8::from(bounds.all_pass)),
            1.0,
            format!(
                "every member satisfies the assumptions; sup a = {}, sup |b| = {:?}, sup c = {}",
                bounds.a_sup, bounds.b_norm_sup, bounds.c_sup
            ),
        );
        report.extend(stage("coefficient_defects", || {
            Ok(convergence::coefficient_convergence_defects(seq, &setup.cs, &tests)?)
        })?);
    }
    let params = ResolventSemigroupParams {
        alpha: p.alpha,
        t_grid: p.t_grid.clone(),
        method: p.method,
    };
    report.extend(stage("resolvent_semigroup", || {
        Ok(convergence::resolvent_semigroup_convergence(seq, &setup.cs, &tests, &params)?)
    })?);
    let fs = p
        .fdd_functions
        .iter()
        .enumerate()
        .map(|(k, s)| ambient_field(setup.family.as_ref(), seq, s, &format!("params.fdd_functions[{k}]")))
        .collect::<Result<Vec<_>>>()?;
    report.extend(stage("fdd", || Ok(convergence::fdd_convergence_defect(seq, &setup.cs, &p.fdd_times, &fs)?))?);
    bundle.write("defects.csv", &report.to_csv())?;
    for name in &p.halving {
        let d = report.defects(name);
        let (first, last) = (d[0], d[d.len() - 1]);
        out.push(
            &format!("{name}_halved"),
            None,
            last < 0.5 * first,
            last,
            0.5 * first,
            format!("coarsest {first:e}, finest {last:e}"),
        );
    }
    for name in &p.decreasing {
        let d = report.defects(name);
        out.push(
            &format!("{name}_decreasing"),
            None,
            report.monotone(name),
            d[d.len() - 1],
            d[0],
            "defects nonincreasing along the sequence",
        );
    }
    out.stats.insert("summary".into(), serde_json::to_value(report.summary())?);
    Ok(())
}

fn conserve(setup: &Setup, p: &ConserveParams, tol: &Tolerances, bundle: &mut Bundle, out: &mut Outcome) -> Result<()> {
    let params = ConservativenessParams {
        horizon: p.horizon,
        inner_radius: p.inner_radius,
        r_grid: p.r_grid.clone(),
        exact_times: p.exact_times.clone(),
    };
    let mut table = String::from("member_index,r,ball_measure,max_carre,erfc_argument,product\n");
    let mut defects = String::from("member_index,t,conservative_defect,min_mass_deficit,max_mass_deficit\n");
    let mut drift = Vec::new();
    for (i, (space, coeffs)) in setup.seq.members().iter().zip(&setup.cs.members).enumerate() {
        let m = Some(i);
        let rep = stage("criterion", || Ok(diagnostics::conservativeness_criterion(space, coeffs, &params, None)?))?;
        for row in &rep.criterion_table {
            let _ = writeln!(
                table,
                "{i},{},{},{},{},{}",
                row.r, row.ball_measure, row.max_carre, row.erfc_argument, row.product
            );
        }
        out.push(
            "criterion_tail_decreasing",
            m,
            rep.tail_decreasing,
            rep.criterion_table.last().map_or(0.0, |r| r.product),
            rep.criterion_table[rep.criterion_table.len() / 2].product,
            "ball measure times erfc decreases over the last half of the r grid",
        );
        drift.push(json!({"member_index": i, "drift_constant": rep.drift_constant, "div_matches": rep.div_matches}));

        let div2 = calculus::divergence(space, &coeffs.theta2)?;
        let excess = VertexField::from_fn(space.n_vertices(), |x| coeffs.c[x] - div2[x]);
        let min_excess = excess.iter().copied().fold(f64::INFINITY, f64::min);
        let ev = SemigroupEvaluator::new(&dirichlet_form::generators(&dirichlet_form::assemble(space, coeffs)?), Side::Primal, Method::Dense)?;
        let mut worst_exact = 0.0_f64;
        let mut deficit_range = (f64::INFINITY, f64::NEG_INFINITY);
        for d in &rep.exact_defect {
            let deficit = ev.mass_deficit(d.t)?;
            let lo = deficit.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = deficit.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            deficit_range = (deficit_range.0.min(lo), deficit_range.1.max(hi));
            worst_exact = worst_exact.max(d.defect);
            let _ = writeln!(defects, "{i},{},{},{lo},{hi}", d.t, d.defect);
        }
        if rep.div_matches[1] {
            out.at_most("conservative", m, worst_exact, tol.conservative, "max |T_t 1 - 1| with c = div b2");
        } else {
            out.push(
                "killing_dominates_divergence",
                m,
                min_excess >= -1e-12,
                min_excess,
                0.0,
                "min (c - div b2); sub-Markov needs it nonnegative",
            );
            out.push(
                "strictly_sub_markov",
                m,
                deficit_range.0 > 0.0 && deficit_range.1 <= 1.0,
                deficit_range.0,
                0.0,
                "1 - T_t 1 lies in (0, 1] when c > div b2 somewhere",
            );
        }
    }
    bundle.write("criterion.csv", &table)?;
    bundle.write("mass_defects.csv", &defects)?;
    out.stats.insert("drift".into(), Value::Array(drift));
    Ok(())
}

fn fdd(setup: &Setup, p: &FddParams, tol: &Tolerances, seed: u64, bundle: &mut Bundle, out: &mut Outcome) -> Result<()> {
    let fs = p
        .functions
        .iter()
        .enumerate()
        .map(|(k, s)| ambient_field(setup.family.as_ref(), &setup.seq, s, &format!("params.functions[{k}]")))
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("member_index,n_vertices,start,exact,estimate,std_error,z\n");
    for (i, (space, coeffs)) in setup.seq.members().iter().zip(&setup.cs.members).enumerate() {
        let start = p.start.unwrap_or(space.basepoint());
        if start >= space.n_vertices() {
            bail!("params.start: vertex {start} out of range for member {i}");
        }
        let (used, pair, _) = stage("generators", || member_pair(space, coeffs, p.upwind))?;
        assumptions_check(space, &used, i, out)?;
        let fields = fs.iter().map(|f| f.restrict(space)).collect::<dirichlet_lab::Result<Vec<_>>>()?;
        let refs: Vec<&[f64]> = fields.iter().map(|f| &f[..]).collect();
        let ev = SemigroupEvaluator::new(&pair, Side::Primal, Method::Dense)?;
        let exact = convergence::fdd_functional_with(&ev, &p.times, &refs)?[start];
        let config = SimConfig {
            horizon: *p.times.last().expect("validated nonempty"),
            n_paths: p.n_paths,
            seed: seed.wrapping_add(i as u64),
            scheme: p.scheme,
            initial: Initial::Vertex(start),
        };
        let paths = stage("sample", || Ok(diffusion_sim::sample_paths(&JumpChain::new(&pair, Side::Primal)?, &config)?))?;
        let est = diffusion_sim::empirical_fdd(&paths, &p.times, &refs)?;
        let z = z_score(&est, exact);
        let _ = writeln!(csv, "{i},{},{start},{exact},{},{},{z}", space.n_vertices(), est.estimate, est.std_error);
        out.at_most("fdd_monte_carlo", Some(i), z, tol.se_band, format!("exact {exact}, estimate {}", est.estimate));
    }
    bundle.write("fdd.csv", &csv)?;
    if setup.seq.len() > 1 {
        let report = stage("fdd_defects", || Ok(convergence::fdd_convergence_defect(&setup.seq, &setup.cs, &p.times, &fs)?))?;
        bundle.write("fdd_defects.csv", &report.to_csv())?;
    }
    Ok(())
}

fn tightness(setup: &Setup, p: &TightnessParams, tol: &Tolerances, seed: u64, bundle: &mut Bundle, out: &mut Outcome) -> Result<()> {
    let (space, coeffs) = member(setup, p.member)?;
    let m = Some(p.member);
    let n = space.n_vertices();
    if p.start >= n {
        bail!("params.start: vertex {} out of range", p.start);
    }
    let (used, pair, _) = stage("generators", || member_pair(space, coeffs, p.upwind))?;
    assumptions_check(space, &used, p.member, out)?;
    let ev = SemigroupEvaluator::new(&pair, Side::Primal, Method::Dense)?;
    let chain = stage("chain", || Ok(JumpChain::new(&pair, Side::Primal)?))?;
    let metric = DistanceTable::from_fn(n, |x, y| space.ambient_dist(x, y));
    let mut params = KolmogorovParams {
        beta: p.beta,
        t: p.t,
        h_grid: p.h_grid.clone(),
        start: p.start,
        mode: MomentMode::Exact,
        modulus: None,
    };
    let exact = stage("moments_exact", || Ok(diffusion_sim::kolmogorov_moment(&ev, &chain, &metric, &params)?))?;
    out.push(
        "kolmogorov_theta",
        m,
        exact.fit_theta > 1.0,
        exact.fit_theta,
        1.0,
        format!("fitted C = {}", exact.fit_c),
    );
    let mut csv = String::from("h,exact,mc,std_error\n");
    if p.mc_paths > 0 {
        params.mode = MomentMode::MonteCarlo {
            n_paths: p.mc_paths,
            seed,
        };
        params.modulus = Some((p.modulus_eps, p.modulus_etas.clone()));
        let mc = stage("moments_mc", || Ok(diffusion_sim::kolmogorov_moment(&ev, &chain, &metric, &params)?))?;
        let mut worst = 0.0_f64;
        for k in 0..exact.h_grid.len() {
            let e = Estimate {
                estimate: mc.moments[k],
                std_error: mc.std_errors[k],
            };
            worst = worst.max(z_score(&e, exact.moments[k]));
            let _ = writeln!(csv, "{},{},{},{}", exact.h_grid[k], exact.moments[k], mc.moments[k], mc.std_errors[k]);
        }
        out.at_most("kolmogorov_monte_carlo", m, worst, tol.se_band, "max |z| of MC moments against exact");
        if let Some(modulus) = &mc.modulus {
            let mut mcsv = String::from("eta,exceedance\n");
            for pt in modulus {
                let _ = writeln!(mcsv, "{},{}", pt.eta, pt.exceedance);
            }
            bundle.write("modulus.csv", &mcsv)?;
        }
    } else {
        for k in 0..exact.h_grid.len() {
            let _ = writeln!(csv, "{},{},,", exact.h_grid[k], exact.moments[k]);
        }
    }
    bundle.write("moments.csv", &csv)?;

    let kernels = stage("heat_kernels", || {
        p.kernel_times
            .iter()
            .map(|&t| Ok(semigroup::heat_kernel(&ev, t)?.0))
            .collect::<Result<Vec<_>>>()
    })?;
    bundle.write("kernels.csv", &io::kernel_csv(&kernels))?;
    let fit = stage("gaussian_fit", || {
        Ok(semigroup::gaussian_bound_fit(&kernels, &metric, (p.nu_bracket[0], p.nu_bracket[1]), None)?)
    })?;
    out.push(
        "gaussian_bound",
        m,
        fit.holds,
        fit.max_excess,
        semigroup::KERNEL_NOISE_FLOOR,
        format!("C1 = {}, C2 = {}, nu = {}", fit.c1, fit.c2, fit.nu),
    );
    let bg = stage("bishop_gromov", || Ok(diagnostics::bishop_gromov_check(space, p.bishop_gromov_nu)?))?;
    out.push(
        "bishop_gromov",
        m,
        bg.feasible && bg.constant > 0.0,
        bg.constant,
        0.0,
        format!("nu = {}", bg.nu),
    );
    out.stats.insert("gaussian_fit".into(), serde_json::to_value(&fit)?);
    out.stats.insert("kolmogorov".into(), json!({"c": exact.fit_c, "theta": exact.fit_theta}));
    Ok(())
}
