//! Experiment configs: strict parsing, kind-specific defaults and an
//! idempotent normalized form.

use std::f64::consts::PI;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use dirichlet_lab::constructions::FamilyKind;
use dirichlet_lab::diffusion_sim::{Initial, Scheme};
use dirichlet_lab::io::ScalarOrList;
use dirichlet_lab::semigroup::Method;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Validate,
    Spectrum,
    Simulate,
    Converge,
    Conserve,
    Fdd,
    Tightness,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Validate => "validate",
            Kind::Spectrum => "spectrum",
            Kind::Simulate => "simulate",
            Kind::Converge => "converge",
            Kind::Conserve => "conserve",
            Kind::Fdd => "fdd",
            Kind::Tightness => "tightness",
        }
    }
}

/// Either a model family or a JSON space file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub family: Option<FamilyKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sizes: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
}

impl SpaceSpec {
    fn normalize(&mut self) -> Result<()> {
        match (&self.family, &self.file) {
            (Some(kind), None) => {
                let sizes = self.sizes.as_ref().ok_or_else(|| anyhow!("space.sizes: required with space.family"))?;
                if sizes.is_empty() {
                    bail!("space.sizes: must not be empty");
                }
                if sizes.windows(2).any(|w| w[1] <= w[0]) {
                    bail!("space.sizes: must be strictly increasing");
                }
                if self.length.is_none() {
                    self.length = Some(match kind {
                        FamilyKind::Circle => 2.0 * PI,
                        FamilyKind::Interval | FamilyKind::Torus => 1.0,
                    });
                }
                if let Some(l) = self.length {
                    if !(l > 0.0 && l.is_finite()) {
                        bail!("space.length: must be positive, got {l}");
                    }
                }
                Ok(())
            }
            (None, Some(_)) => {
                for (key, set) in [
                    ("sizes", self.sizes.is_some()),
                    ("length", self.length.is_some()),
                    ("limit", self.limit.is_some()),
                ] {
                    if set {
                        bail!("space.{key}: only valid with space.family");
                    }
                }
                Ok(())
            }
            _ => bail!("space: exactly one of `family` or `file` is required"),
        }
    }
}

/// A field given by name (families only) or by explicit values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FieldSpec {
    Named(String),
    Values(Vec<f64>),
}

fn one() -> f64 {
    1.0
}
fn one_list() -> ScalarOrList {
    ScalarOrList::Scalar(1.0)
}
fn zero_list() -> ScalarOrList {
    ScalarOrList::Scalar(0.0)
}
fn half() -> f64 {
    0.5
}
fn tenth() -> f64 {
    0.1
}
fn cos_name() -> FieldSpec {
    FieldSpec::Named("cos".into())
}
fn eigen_k() -> usize {
    1
}
fn eigen_k2() -> usize {
    3
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "factory", rename_all = "snake_case", deny_unknown_fields)]
pub enum CoefficientSpec {
    /// `a ≡ 1`, `λ = 1`, no drift, no killing.
    Trivial,
    /// Random coefficients satisfying the assumptions; member `i` uses
    /// `seed + i`.
    Random {
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default = "one")]
        a_spread: f64,
        #[serde(default = "one")]
        theta_scale: f64,
        #[serde(default = "half")]
        slack: f64,
        #[serde(default)]
        markov: bool,
    },
    /// Derivations from gradients of Cheeger resolvents of `g` (and `g2`),
    /// with `a = h + a0`.
    Resolvent {
        #[serde(default = "one")]
        lam: f64,
        #[serde(default = "one")]
        a0: f64,
        #[serde(default = "tenth")]
        slack: f64,
        #[serde(default = "cos_name")]
        g: FieldSpec,
        #[serde(default)]
        g2: Option<FieldSpec>,
        #[serde(default)]
        h: Option<FieldSpec>,
        /// Heat-flow time applied to `h` on each member; 0 leaves it as is.
        #[serde(default)]
        h_smoothing: f64,
    },
    /// Derivations from gradients of Cheeger eigenfunctions.
    Eigen {
        #[serde(default = "eigen_k")]
        k: usize,
        #[serde(default = "eigen_k2")]
        k2: usize,
        #[serde(default = "tenth")]
        slack: f64,
    },
    /// A JSON coefficient file, applied to every member.
    File { path: String },
    /// Inline coefficients, applied to every member.
    Inline {
        #[serde(default = "one_list")]
        a: ScalarOrList,
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default = "zero_list")]
        theta1: ScalarOrList,
        #[serde(default = "zero_list")]
        theta2: ScalarOrList,
        #[serde(default = "zero_list")]
        c: ScalarOrList,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub generator_identity: f64,
    pub duality: f64,
    pub resolvent_identity: f64,
    pub resolvent_equation: f64,
    pub conservative: f64,
    pub lyons_zheng: f64,
    pub positivity_rtol: f64,
    pub se_band: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            generator_identity: 1e-12,
            duality: 1e-10,
            resolvent_identity: 1e-9,
            resolvent_equation: 1e-10,
            conservative: 1e-10,
            lyons_zheng: 1e-10,
            positivity_rtol: 1e-12,
            se_band: 4.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ValidateParams {
    pub alphas: Vec<f64>,
    pub times: Vec<f64>,
    pub n_random_fields: usize,
    /// Require nonnegative jump rates for both generators.
    pub require_markov: bool,
}

impl Default for ValidateParams {
    fn default() -> Self {
        Self {
            alphas: vec![0.5, 1.0, 4.0],
            times: vec![0.1, 1.0, 10.0],
            n_random_fields: 100,
            require_markov: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SpectrumParams {
    pub k_max: usize,
    /// Tolerance against closed-form family eigenvalues, relative to the
    /// spectral radius.
    pub analytic_rtol: f64,
}

impl Default for SpectrumParams {
    fn default() -> Self {
        Self {
            k_max: 8,
            analytic_rtol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateParams {
    pub member: usize,
    pub horizon: f64,
    pub n_paths: usize,
    pub scheme: Scheme,
    pub initial: Initial,
    pub checkpoints: Vec<f64>,
    pub test_function: FieldSpec,
    /// Number of paths written to `paths.csv`.
    pub dump_paths: usize,
    /// Raise `a` to `|θ₁ − θ₂|` before sampling.
    pub upwind: bool,
}

impl Default for SimulateParams {
    fn default() -> Self {
        Self {
            member: 0,
            horizon: 1.0,
            n_paths: 10_000,
            scheme: Scheme::ExactJump,
            initial: Initial::MeasureProportional,
            checkpoints: vec![0.25, 0.5, 0.75, 1.0],
            test_function: cos_name(),
            dump_paths: 100,
            upwind: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConvergeParams {
    pub alpha: f64,
    pub t_grid: Vec<f64>,
    pub method: Method,
    pub fdd_times: Vec<f64>,
    pub fdd_functions: Vec<FieldSpec>,
    /// Test-family centers: this many limit vertices, evenly spaced.
    pub n_centers: usize,
    pub levels: Vec<f64>,
    pub max_products: usize,
    pub coefficient_defects: bool,
    /// Checks whose finest-member defect must be below half the coarsest.
    pub halving: Vec<String>,
    /// Checks whose defects must be nonincreasing along the sequence.
    pub decreasing: Vec<String>,
}

impl Default for ConvergeParams {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            t_grid: (1..=10).map(|k| k as f64 / 10.0).collect(),
            method: Method::Dense,
            fdd_times: vec![0.5, 1.0],
            fdd_functions: vec![FieldSpec::Named("pos_cos".into()), FieldSpec::Named("pos_cos:2".into())],
            n_centers: 4,
            levels: vec![1.0, 2.0],
            max_products: 2,
            coefficient_defects: true,
            halving: vec!["s_defect".into(), "r_defect".into(), "fdd".into()],
            decreasing: vec!["s_defect".into()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConserveParams {
    pub horizon: f64,
    pub inner_radius: f64,
    pub r_grid: Vec<f64>,
    pub exact_times: Vec<f64>,
}

impl Default for ConserveParams {
    fn default() -> Self {
        Self {
            horizon: 1.0,
            inner_radius: 0.5,
            r_grid: (1..=20).map(|k| k as f64 / 2.0).collect(),
            exact_times: vec![0.1, 1.0, 10.0],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FddParams {
    pub times: Vec<f64>,
    pub functions: Vec<FieldSpec>,
    /// Start vertex; the basepoint when absent.
    pub start: Option<usize>,
    pub n_paths: usize,
    pub scheme: Scheme,
    pub upwind: bool,
}

impl Default for FddParams {
    fn default() -> Self {
        Self {
            times: vec![0.5, 1.0],
            functions: vec![FieldSpec::Named("pos_cos".into()), FieldSpec::Named("pos_cos:2".into())],
            start: None,
            n_paths: 20_000,
            scheme: Scheme::ExactJump,
            upwind: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TightnessParams {
    pub member: usize,
    pub beta: f64,
    pub t: f64,
    pub h_grid: Vec<f64>,
    pub start: usize,
    /// Monte Carlo paths for the moment cross-check; 0 disables it.
    pub mc_paths: usize,
    pub modulus_eps: f64,
    pub modulus_etas: Vec<f64>,
    pub kernel_times: Vec<f64>,
    pub nu_bracket: [f64; 2],
    pub bishop_gromov_nu: f64,
    pub upwind: bool,
}

impl Default for TightnessParams {
    fn default() -> Self {
        Self {
            member: 0,
            beta: 4.0,
            t: 0.5,
            h_grid: (3..=8).map(|k| 2f64.powi(-k)).collect(),
            start: 0,
            mc_paths: 20_000,
            modulus_eps: 0.5,
            modulus_etas: vec![0.01, 0.05, 0.1],
            kernel_times: (1..=20).map(|k| k as f64 / 20.0).collect(),
            nu_bracket: [0.25, 2.0],
            bishop_gromov_nu: 0.5,
            upwind: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Params {
    Validate(ValidateParams),
    Spectrum(SpectrumParams),
    Simulate(SimulateParams),
    Converge(ConvergeParams),
    Conserve(ConserveParams),
    Fdd(FddParams),
    Tightness(TightnessParams),
}

/// A validated config with every default filled in.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: u64,
    pub space: SpaceSpec,
    pub coefficients: CoefficientSpec,
    pub params: Params,
    pub tolerances: Tolerances,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kind: Option<Kind>,
    seed: Option<u64>,
    space: SpaceSpec,
    coefficients: Option<CoefficientSpec>,
    params: Option<serde_json::Value>,
    tolerances: Option<serde_json::Value>,
    out: Option<String>,
}

fn section<T: DeserializeOwned + Default>(name: &str, value: Option<serde_json::Value>) -> Result<T> {
    match value {
        None | Some(serde_json::Value::Null) => Ok(T::default()),
        Some(v) => serde_path_to_error::deserialize(v).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            if path == "." {
                anyhow!("{name}: {inner}")
            } else {
                anyhow!("{name}.{path}: {inner}")
            }
        }),
    }
}

fn parse_params(kind: Kind, value: Option<serde_json::Value>) -> Result<Params> {
    Ok(match kind {
        Kind::Validate => Params::Validate(section("params", value)?),
        Kind::Spectrum => Params::Spectrum(section("params", value)?),
        Kind::Simulate => Params::Simulate(section("params", value)?),
        Kind::Converge => Params::Converge(section("params", value)?),
        Kind::Conserve => Params::Conserve(section("params", value)?),
        Kind::Fdd => Params::Fdd(section("params", value)?),
        Kind::Tightness => Params::Tightness(section("params", value)?),
    })
}

/// Parses JSON, or TOML when `is_toml`, into a normalized config. `kind`
/// comes from the subcommand and must agree with the file when both are set.
pub fn parse_config(text: &str, is_toml: bool, kind: Option<Kind>) -> Result<ExperimentConfig> {
    let value: serde_json::Value = if is_toml {
        toml::from_str(text).map_err(|e| anyhow!("{e}"))?
    } else {
        serde_json::from_str(text).map_err(|e| anyhow!("{e}"))?
    };
    let raw: RawConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        anyhow!("{path}: {}", e.into_inner())
    })?;
    let kind = match (kind, raw.kind) {
        (Some(a), Some(b)) if a != b => bail!("kind: config says `{}` but the subcommand is `{}`", b.name(), a.name()),
        (Some(a), _) => a,
        (None, Some(b)) => b,
        (None, None) => bail!("kind: required when no subcommand names it"),
    };
    let mut space = raw.space;
    space.normalize()?;
    let params = parse_params(kind, raw.params)?;
    let tolerances: Tolerances = section("tolerances", raw.tolerances)?;
    let config = ExperimentConfig {
        kind,
        seed: raw.seed.unwrap_or(0),
        space,
        coefficients: raw.coefficients.unwrap_or(CoefficientSpec::Trivial),
        params,
        tolerances,
        out: raw.out,
    };
    check_semantics(&config)?;
    Ok(config)
}

pub fn read_config(path: &Path, kind: Option<Kind>) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let is_toml = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("toml"));
    parse_config(&text, is_toml, kind).with_context(|| format!("invalid config {}", path.display()))
}

fn positive(key: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        bail!("{key}: must be positive, got {v}")
    }
}

fn increasing(key: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        bail!("{key}: must not be empty");
    }
    if v[0] < 0.0 || v.windows(2).any(|w| w[1] <= w[0]) {
        bail!("{key}: must be nonnegative and strictly increasing");
    }
    Ok(())
}

fn check_semantics(c: &ExperimentConfig) -> Result<()> {
    let multi = c.space.sizes.as_ref().is_some_and(|s| s.len() > 1);
    if matches!(c.coefficients, CoefficientSpec::Resolvent { .. } | CoefficientSpec::Eigen { .. }) && c.space.family.is_none() {
        bail!("coefficients.factory: resolvent and eigen need space.family");
    }
    let t = &c.tolerances;
    for (k, v) in [
        ("tolerances.generator_identity", t.generator_identity),
        ("tolerances.duality", t.duality),
        ("tolerances.resolvent_identity", t.resolvent_identity),
        ("tolerances.resolvent_equation", t.resolvent_equation),
        ("tolerances.conservative", t.conservative),
        ("tolerances.lyons_zheng", t.lyons_zheng),
        ("tolerances.positivity_rtol", t.positivity_rtol),
        ("tolerances.se_band", t.se_band),
    ] {
        positive(k, v)?;
    }
    match &c.params {
        Params::Validate(p) => {
            increasing("params.times", &p.times)?;
            for &a in &p.alphas {
                positive("params.alphas", a)?;
            }
        }
        Params::Spectrum(p) => {
            if p.k_max == 0 {
                bail!("params.k_max: must be at least 1");
            }
        }
        Params::Simulate(p) => {
            positive("params.horizon", p.horizon)?;
            if p.n_paths == 0 {
                bail!("params.n_paths: must be at least 1");
            }
            increasing("params.checkpoints", &p.checkpoints)?;
            if p.checkpoints.last().is_some_and(|&t| t > p.horizon) {
                bail!("params.checkpoints: must not exceed params.horizon");
            }
        }
        Params::Converge(p) => {
            if !multi {
                bail!("space.sizes: converge needs at least two members");
            }
            positive("params.alpha", p.alpha)?;
            increasing("params.t_grid", &p.t_grid)?;
            increasing("params.fdd_times", &p.fdd_times)?;
            if p.fdd_functions.len() != p.fdd_times.len() {
                bail!("params.fdd_functions: need one function per fdd time");
            }
            if matches!(c.coefficients, CoefficientSpec::Random { .. } | CoefficientSpec::File { .. } | CoefficientSpec::Inline { .. }) {
                bail!("coefficients.factory: converge needs trivial, resolvent or eigen coefficients");
            }
            for name in p.halving.iter().chain(&p.decreasing) {
                if !["s_defect", "r_defect", "fdd"].contains(&name.as_str()) {
                    bail!("params.halving/decreasing: unknown check `{name}`");
                }
            }
        }
        Params::Conserve(p) => {
            positive("params.horizon", p.horizon)?;
            increasing("params.r_grid", &p.r_grid)?;
            increasing("params.exact_times", &p.exact_times)?;
        }
        Params::Fdd(p) => {
            increasing("params.times", &p.times)?;
            if p.functions.len() != p.times.len() {
                bail!("params.functions: need one function per time");
            }
            if p.n_paths == 0 {
                bail!("params.n_paths: must be at least 1");
            }
        }
        Params::Tightness(p) => {
            positive("params.beta", p.beta)?;
            positive("params.t", p.t)?;
            for &h in &p.h_grid {
                positive("params.h_grid", h)?;
            }
            increasing("params.kernel_times", &p.kernel_times)?;
            positive("params.kernel_times", p.kernel_times[0])?;
            if !(p.nu_bracket[0] > 0.0 && p.nu_bracket[0] <= p.nu_bracket[1]) {
                bail!("params.nu_bracket: need 0 < lo ≤ hi");
            }
        }
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }

    pub fn to_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"kind": "validate", "space": {"family": "circle", "sizes": [16]}}"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config(MINIMAL, false, None).unwrap();
        assert_eq!(c.seed, 0);
        assert_eq!(c.space.length, Some(2.0 * PI));
        assert_eq!(c.coefficients, CoefficientSpec::Trivial);
        assert_eq!(c.params, Params::Validate(ValidateParams::default()));
    }

    #[test]
    fn normalization_is_idempotent() {
        for text in [
            MINIMAL,
            r#"{"kind": "converge", "space": {"family": "circle", "sizes": [8, 16], "limit": 64},
                "coefficients": {"factory": "resolvent", "lam": 1.0}}"#,
            r#"{"kind": "simulate", "space": {"family": "interval", "sizes": [8]},
                "params": {"initial": {"vertex": 2}, "test_function": [1,2,3,4,5,6,7,8]}}"#,
        ] {
            let once = parse_config(text, false, None).unwrap().to_pretty();
            let twice = parse_config(&once, false, None).unwrap().to_pretty();
            assert_eq!(once, twice);
        }
    }

    #[test]
    fn misspelled_key_is_named() {
        let text = r#"{"kind": "validate", "space": {"family": "circle", "sizes": [16]},
            "coefficients": {"factory": "random", "lamda": 1.0}}"#;
        let err = format!("{:#}", parse_config(text, false, None).unwrap_err());
        assert!(err.contains("lamda"), "{err}");
        let text = r#"{"kind": "validate", "space": {"family": "circle", "sizes": [16]}, "params": {"alpha": [1.0]}}"#;
        let err = format!("{:#}", parse_config(text, false, None).unwrap_err());
        assert!(err.contains("params") && err.contains("alpha"), "{err}");
    }

    #[test]
    fn toml_is_accepted() {
        let text = "kind = \"spectrum\"\nseed = 3\n[space]\nfamily = \"circle\"\nsizes = [8]\n[params]\nk_max = 4\n";
        let c = parse_config(text, true, Some(Kind::Spectrum)).unwrap();
        assert_eq!(c.seed, 3);
        assert!(matches!(c.params, Params::Spectrum(SpectrumParams { k_max: 4, .. })));
    }

    #[test]
    fn kind_mismatch_and_missing_space() {
        assert!(parse_config(MINIMAL, false, Some(Kind::Simulate)).is_err());
        assert!(parse_config(r#"{"kind": "validate", "space": {}}"#, false, None).is_err());
        let both = r#"{"kind": "validate", "space": {"family": "circle", "sizes": [8], "file": "x.json"}}"#;
        assert!(parse_config(both, false, None).is_err());
    }
}
