//! Config-driven front end.
//!
//! Exit codes: 0 success, 2 certification infeasible, 3 runtime or plant
//! failure, 64 config error. Every run writes `manifest.json` next to its
//! artifacts with the config hash, seeds and an artifact digest list.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::certify::{
    self, Certificate, CertifyOptions, JacobianSet, PolytopicMode, ValidationReport,
};
use crate::error::{Error, Result};
use crate::numlin::{Mat, Vector};
use crate::plants::academic::{self, AcademicPlant};
use crate::plants::feeder::{
    self, Feeder, FeederModel, GammaReport, NoLoadSampler, OperatingSampler, Series, SeriesSampler,
    UniformSampler,
};
use crate::plants::{JacobianPlant, LinearPlant};
use crate::problem::{FeasibleSet, ProblemSpec};
use crate::serde_ext;
use crate::sim::{self, Algorithm, Scenario, SeriesStep, SimTrace, TraceStatus, WSource};
use crate::uncertainty::{self, LftSet, MultiplierCone, PolytopeSet};
use crate::vi;
use crate::seed;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_CONFIG: i32 = 64;

#[derive(Debug, Parser)]
#[command(name = "robust-oag", version, about = "Robust online approximate gradient toolkit")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Certify robust monotonicity and write a certificate.
    Certify(RunArgs),
    /// Run closed-loop simulations.
    Simulate(RunArgs),
    /// Estimate the Jacobian error bound for a feeder.
    SampleGamma(RunArgs),
    /// Full pipeline on a built-in example.
    Demo {
        #[arg(value_enum)]
        name: DemoName,
        #[command(flatten)]
        args: RunArgs,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoName {
    Academic,
    Feeder,
}

// ---------------------------------------------------------------- config ---

fn default_eta() -> f64 {
    10.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum PlantConfig {
    Academic,
    Feeder {
        /// FeederModel JSON; the shipped 8-bus feeder when absent.
        #[serde(default)]
        model: Option<PathBuf>,
        #[serde(default = "default_eta")]
        eta: f64,
    },
    Linear {
        #[serde(with = "serde_ext::mat")]
        pi: Mat,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum UncertaintyConfig {
    /// Jacobian vertices given directly.
    Polytope {
        #[serde(with = "serde_ext::mat_list")]
        vertices: Vec<Mat>,
    },
    /// `H + weight·ΠᵀΠ̃_i`.
    DirectPolytope {
        weight: f64,
        #[serde(with = "serde_ext::mat_list")]
        pi_tildes: Vec<Mat>,
    },
    /// `H + ηΠᵀQ_jΠ̃_i` over all output-activity patterns.
    OagPolytope {
        #[serde(with = "serde_ext::mat_list")]
        pi_tildes: Vec<Mat>,
        #[serde(default)]
        vertex_cap: Option<usize>,
    },
    Lft {
        set: LftSet,
        #[serde(default)]
        cone: Option<MultiplierCone>,
    },
    /// `H + ηΠᵀΔ_q(Π_nom + Δ_π)`, `γ` sampled from the feeder when absent.
    OagLft {
        #[serde(default, with = "serde_ext::opt_mat")]
        pi_nom: Option<Mat>,
        #[serde(default)]
        gamma: Option<f64>,
    },
}

fn default_trials() -> usize {
    1000
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    /// Fixed ρ to test; maximized when absent.
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default = "default_trials")]
    pub validation_trials: usize,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default)]
    pub rho_tol: Option<f64>,
}

impl Default for CertifyConfig {
    fn default() -> Self {
        CertifyConfig {
            rho: None,
            validation_trials: default_trials(),
            eps: None,
            rho_tol: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutoKeyword {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSpec {
    Fixed(f64),
    /// `τ*/2` from the certificate.
    Auto(AutoKeyword),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SeriesConfig {
    Csv(PathBuf),
    Synthetic { steps: usize, #[serde(default)] seed: Option<u64> },
}

fn default_algorithms() -> Vec<Algorithm> {
    vec![Algorithm::Oag]
}

fn default_tol() -> f64 {
    1e-10
}

fn default_horizon() -> usize {
    100_000
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_algorithms")]
    pub algorithms: Vec<Algorithm>,
    pub tau: TauSpec,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Constant disturbance.
    #[serde(default)]
    pub w: Option<Vec<f64>>,
    #[serde(default)]
    pub series: Option<SeriesConfig>,
    /// Uniform random starts when `u0` is absent.
    #[serde(default = "one")]
    pub starts: usize,
    #[serde(default)]
    pub u0: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SamplerConfig {
    Uniform {
        #[serde(default)]
        load_p: Option<(f64, f64)>,
        #[serde(default)]
        load_q: Option<(f64, f64)>,
        #[serde(default)]
        irradiance: Option<(f64, f64)>,
    },
    NoLoad,
    /// Rows of the simulate section's series.
    Series,
}

fn default_samples() -> usize {
    2000
}

fn default_safety() -> f64 {
    feeder::DEFAULT_SAFETY
}

fn default_failure_fraction() -> f64 {
    0.05
}

fn default_sampler() -> SamplerConfig {
    SamplerConfig::Uniform {
        load_p: None,
        load_q: None,
        irradiance: None,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaConfig {
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_safety")]
    pub safety: f64,
    #[serde(default = "default_sampler")]
    pub sampler: SamplerConfig,
    #[serde(default = "default_failure_fraction")]
    pub max_failure_fraction: f64,
}

impl Default for GammaConfig {
    fn default() -> Self {
        GammaConfig {
            samples: default_samples(),
            safety: default_safety(),
            sampler: default_sampler(),
            max_failure_fraction: default_failure_fraction(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    /// Output directory, relative to the config file.
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub plant: PlantConfig,
    /// Overrides the plant's default problem.
    #[serde(default)]
    pub problem: Option<ProblemSpec>,
    #[serde(default)]
    pub uncertainty: Option<UncertaintyConfig>,
    #[serde(default)]
    pub certify: Option<CertifyConfig>,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub gamma: Option<GammaConfig>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Built-in academic pipeline: polytopic certificate, automatic step,
    /// 100 random starts for OAG and the true-gradient baseline.
    pub fn academic_demo() -> Self {
        RunConfig {
            seed: 1,
            output: None,
            plant: PlantConfig::Academic,
            problem: None,
            uncertainty: Some(UncertaintyConfig::DirectPolytope {
                weight: academic::Q2_WEIGHT,
                pi_tildes: academic::academic_pi_tildes(),
            }),
            certify: Some(CertifyConfig::default()),
            simulate: Some(SimulateConfig {
                algorithms: vec![Algorithm::Oag, Algorithm::GdTrue],
                tau: TauSpec::Auto(AutoKeyword::Auto),
                tol: 1e-10,
                horizon: 1_000_000,
                w: Some(vec![1.0, 1.0]),
                series: None,
                starts: 100,
                u0: None,
            }),
            gamma: None,
        }
    }

    /// Built-in feeder pipeline: sampled γ, LFT certificate, automatic step,
    /// OAG against no control on a synthetic overvoltage day.
    pub fn feeder_demo() -> Self {
        RunConfig {
            seed: 1,
            output: None,
            plant: PlantConfig::Feeder {
                model: None,
                eta: default_eta(),
            },
            problem: None,
            uncertainty: Some(UncertaintyConfig::OagLft {
                pi_nom: None,
                gamma: None,
            }),
            certify: Some(CertifyConfig::default()),
            simulate: Some(SimulateConfig {
                algorithms: vec![Algorithm::Oag, Algorithm::Uncontrolled],
                tau: TauSpec::Auto(AutoKeyword::Auto),
                tol: 0.0,
                horizon: default_horizon(),
                w: None,
                series: Some(SeriesConfig::Synthetic {
                    steps: 600,
                    seed: None,
                }),
                starts: 1,
                u0: None,
            }),
            gamma: Some(GammaConfig::default()),
        }
    }
}

// ---------------------------------------------------------------- errors ---

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub stage: &'static str,
    pub error: Error,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}] {}", self.stage, self.error)
    }
}

impl std::error::Error for CliError {}

fn config_err(e: Error) -> CliError {
    CliError {
        code: EXIT_CONFIG,
        stage: "config",
        error: e,
    }
}

/// Runtime classification: certification failures are 2, everything else 3.
fn stage_err(stage: &'static str) -> impl Fn(Error) -> CliError {
    move |e| {
        let code = match e {
            Error::Infeasible { .. } | Error::NotMonotone(_) | Error::CertificateRejected(_) => {
                EXIT_INFEASIBLE
            }
            _ => EXIT_RUNTIME,
        };
        CliError { code, stage, error: e }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

// -------------------------------------------------------------- prepared ---

pub enum BuiltPlant {
    Academic(AcademicPlant),
    Feeder(Box<Feeder>),
    Linear(LinearPlant),
}

impl BuiltPlant {
    pub fn as_plant(&self) -> &dyn JacobianPlant {
        match self {
            BuiltPlant::Academic(p) => p,
            BuiltPlant::Feeder(p) => p.as_ref(),
            BuiltPlant::Linear(p) => p,
        }
    }

    fn w_dim(&self) -> usize {
        match self {
            BuiltPlant::Academic(_) => 2,
            BuiltPlant::Feeder(f) => f.model.w_dim(),
            BuiltPlant::Linear(p) => p.pi_w.as_ref().map_or(0, |m| m.ncols()),
        }
    }
}

/// A config that passed validation, with its plant and problem built.
pub struct Prepared {
    pub config: RunConfig,
    pub config_sha256: String,
    pub plant: BuiltPlant,
    pub problem: ProblemSpec,
    pub series: Option<Series>,
    pub out_dir: PathBuf,
    pub format: Format,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn check_dims(problem: &ProblemSpec, plant: &dyn JacobianPlant) -> Result<()> {
    if problem.n() != plant.n_inputs() || problem.m() != plant.n_outputs() {
        return Err(Error::Config(format!(
            "problem is {}×{} but the plant has {} inputs and {} outputs",
            problem.m(),
            problem.n(),
            plant.n_inputs(),
            plant.n_outputs()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Certify,
    Simulate,
    SampleGamma,
    Demo,
}

/// Schema and cross-section checks; nothing expensive runs here.
pub fn prepare(
    config: RunConfig,
    raw: &[u8],
    base: &Path,
    kind: CommandKind,
    args: &RunArgs,
) -> CliResult<Prepared> {
    let mut config = config;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let plant = match &config.plant {
        PlantConfig::Academic => BuiltPlant::Academic(AcademicPlant),
        PlantConfig::Feeder { model, eta } => {
            if !(*eta > 0.0) {
                return Err(config_err(Error::Config("feeder eta must be positive".into())));
            }
            let m = match model {
                Some(p) => {
                    let path = resolve(base, p);
                    let text = fs::read_to_string(&path).map_err(|e| {
                        config_err(Error::Config(format!("cannot read feeder model {}: {e}", path.display())))
                    })?;
                    FeederModel::from_json(&text).map_err(config_err)?
                }
                None => FeederModel::default_8bus(),
            };
            BuiltPlant::Feeder(Box::new(Feeder::new(m).map_err(config_err)?))
        }
        PlantConfig::Linear { pi } => BuiltPlant::Linear(LinearPlant::new(pi.clone())),
    };
    let problem = match (&config.problem, &plant) {
        (Some(p), _) => {
            p.validate().map_err(config_err)?;
            p.clone()
        }
        (None, BuiltPlant::Academic(_)) => academic::academic_problem(),
        (None, BuiltPlant::Feeder(f)) => {
            let PlantConfig::Feeder { eta, .. } = config.plant else { unreachable!() };
            // the nominal sensitivity is a handful of no-load power flows
            let pi = f.linearize_nominal().map_err(config_err)?;
            f.problem(&pi, eta, &f.available_power(1.0)).map_err(config_err)?
        }
        (None, BuiltPlant::Linear(_)) => {
            return Err(config_err(Error::Config("a linear plant needs a problem section".into())))
        }
    };
    check_dims(&problem, plant.as_plant()).map_err(config_err)?;

    let needs_cert = match kind {
        CommandKind::Certify | CommandKind::Demo => true,
        CommandKind::Simulate => matches!(
            config.simulate.as_ref().map(|s| s.tau),
            Some(TauSpec::Auto(_))
        ),
        CommandKind::SampleGamma => false,
    };
    if needs_cert && config.uncertainty.is_none() {
        let why = if kind == CommandKind::Simulate {
            "tau \"auto\" needs an uncertainty section to certify against"
        } else {
            "certification needs an uncertainty section"
        };
        return Err(config_err(Error::Config(why.into())));
    }
    if let Some(u) = &config.uncertainty {
        check_uncertainty(u, &problem, &plant).map_err(config_err)?;
    }
    if matches!(kind, CommandKind::Simulate | CommandKind::Demo) && config.simulate.is_none() {
        return Err(config_err(Error::Config("missing simulate section".into())));
    }
    if kind == CommandKind::SampleGamma && !matches!(plant, BuiltPlant::Feeder(_)) {
        return Err(config_err(Error::Config("sample-gamma needs a feeder plant".into())));
    }
    let mut series = None;
    if let Some(s) = &config.simulate {
        check_simulate(s, &problem, &plant).map_err(config_err)?;
        series = match &s.series {
            Some(SeriesConfig::Csv(p)) => {
                let path = resolve(base, p);
                let file = fs::File::open(&path).map_err(|e| {
                    config_err(Error::Config(format!("cannot open series {}: {e}", path.display())))
                })?;
                Some(Series::from_csv(file, plant.w_dim()).map_err(config_err)?)
            }
            Some(SeriesConfig::Synthetic { steps, seed }) => match &plant {
                BuiltPlant::Feeder(f) => Some(feeder::synthetic_overvoltage_series(
                    f,
                    *steps,
                    seed.unwrap_or(config.seed),
                )),
                _ => return Err(config_err(Error::Config("synthetic series need a feeder plant".into()))),
            },
            None => None,
        };
    }
    if let Some(g) = &config.gamma {
        if g.samples == 0 || !(g.safety >= 1.0) || !(0.0..=1.0).contains(&g.max_failure_fraction) {
            return Err(config_err(Error::Config(
                "gamma needs samples ≥ 1, safety ≥ 1 and a failure fraction in [0, 1]".into(),
            )));
        }
        if matches!(g.sampler, SamplerConfig::Series) && series.is_none() {
            return Err(config_err(Error::Config("series sampler needs a simulate.series section".into())));
        }
    }
    if let Some(c) = &config.certify {
        if c.rho.is_some_and(|r| !r.is_finite()) || c.validation_trials == 0 {
            return Err(config_err(Error::Config("certify: rho must be finite, trials ≥ 1".into())));
        }
    }
    let out_dir = match (&args.out, &config.output) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => resolve(base, o),
        (None, None) => PathBuf::from("out"),
    };
    Ok(Prepared {
        config,
        config_sha256: sha256_hex(raw),
        plant,
        problem,
        series,
        out_dir,
        format: args.format,
    })
}

fn check_uncertainty(u: &UncertaintyConfig, problem: &ProblemSpec, plant: &BuiltPlant) -> Result<()> {
    let n = problem.n();
    let m = problem.m();
    let sq = |v: &[Mat], rows: usize, what: &str| -> Result<()> {
        if v.is_empty() || v.iter().any(|x| x.nrows() != rows || x.ncols() != n) {
            return Err(Error::Config(format!("{what} must be nonempty {rows}×{n} matrices")));
        }
        Ok(())
    };
    match u {
        UncertaintyConfig::Polytope { vertices } => sq(vertices, n, "vertices"),
        UncertaintyConfig::DirectPolytope { pi_tildes, weight } => {
            if !weight.is_finite() {
                return Err(Error::Config("weight must be finite".into()));
            }
            sq(pi_tildes, m, "pi_tildes")
        }
        UncertaintyConfig::OagPolytope { pi_tildes, .. } => sq(pi_tildes, m, "pi_tildes"),
        UncertaintyConfig::Lft { set, cone } => {
            set.validate()?;
            if set.n() != n {
                return Err(Error::Config("LFT dimension differs from the problem".into()));
            }
            if let Some(c) = cone {
                c.validate()?;
                if c.q_dim != set.z() || c.p_dim != set.s() {
                    return Err(Error::Config("cone dimensions differ from the LFT".into()));
                }
            }
            Ok(())
        }
        UncertaintyConfig::OagLft { pi_nom, gamma } => {
            if let Some(p) = pi_nom {
                sq(std::slice::from_ref(p), m, "pi_nom")?;
            }
            match gamma {
                Some(g) if !(*g >= 0.0 && g.is_finite()) => {
                    Err(Error::Config("gamma must be finite and nonnegative".into()))
                }
                Some(_) => Ok(()),
                None if matches!(plant, BuiltPlant::Feeder(_)) => Ok(()),
                None => Err(Error::Config("oag_lft without gamma needs a feeder plant to sample from".into())),
            }
        }
    }
}

fn check_simulate(s: &SimulateConfig, problem: &ProblemSpec, plant: &BuiltPlant) -> Result<()> {
    if let TauSpec::Fixed(t) = s.tau {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Config(format!("tau must be positive, got {t}")));
        }
    }
    if s.algorithms.is_empty() {
        return Err(Error::Config("simulate.algorithms is empty".into()));
    }
    if s.w.is_some() && s.series.is_some() {
        return Err(Error::Config("give either simulate.w or simulate.series".into()));
    }
    if let Some(w) = &s.w {
        if w.len() != plant.w_dim() {
            return Err(Error::Config(format!("w has length {}, plant expects {}", w.len(), plant.w_dim())));
        }
    }
    if let Some(u0) = &s.u0 {
        if u0.len() != problem.n() {
            return Err(Error::Config("u0 length differs from the problem".into()));
        }
    }
    if s.starts == 0 || !(s.tol >= 0.0) || s.horizon == 0 {
        return Err(Error::Config("simulate needs starts ≥ 1, horizon ≥ 1 and tol ≥ 0".into()));
    }
    Ok(())
}

// ---------------------------------------------------------------- stages ---

pub struct CertifyOutcome {
    pub certificate: Certificate,
    pub validation: ValidationReport,
    pub gamma: Option<GammaReport>,
}

fn gamma_report(prep: &Prepared) -> Result<GammaReport> {
    let BuiltPlant::Feeder(f) = &prep.plant else {
        return Err(Error::Config("γ sampling needs a feeder plant".into()));
    };
    let g = prep.config.gamma.clone().unwrap_or_default();
    let uniform;
    let series_sampler;
    let sampler: &dyn OperatingSampler = match &g.sampler {
        SamplerConfig::Uniform {
            load_p,
            load_q,
            irradiance,
        } => {
            let d = UniformSampler::default();
            uniform = UniformSampler {
                load_p: load_p.unwrap_or(d.load_p),
                load_q: load_q.unwrap_or(d.load_q),
                irradiance: irradiance.unwrap_or(d.irradiance),
            };
            &uniform
        }
        SamplerConfig::NoLoad => &NoLoadSampler,
        SamplerConfig::Series => {
            series_sampler = SeriesSampler {
                series: prep.series.clone().expect("checked in prepare"),
            };
            &series_sampler
        }
    };
    let report = feeder::sample_gamma(f, sampler, g.samples, g.safety, prep.config.seed)?;
    if report.failures as f64 > g.max_failure_fraction * g.samples as f64 {
        return Err(Error::PowerFlow(format!(
            "{} of {} sampled operating points failed",
            report.failures, g.samples
        )));
    }
    Ok(report)
}

/// Certification per the uncertainty section, followed by sampled validation.
pub fn certify_stage(prep: &Prepared) -> Result<CertifyOutcome> {
    let problem = &prep.problem;
    let obj = &problem.objective;
    let settings = prep.config.certify.clone().unwrap_or_default();
    let seed_value = prep.config.seed;
    let u = prep
        .config
        .uncertainty
        .as_ref()
        .ok_or_else(|| Error::Config("missing uncertainty section".into()))?;
    let polytope = |set: PolytopeSet| -> Result<CertifyOutcome> {
        let mut opts = CertifyOptions::polytopic();
        apply(&mut opts, &settings, seed_value);
        let mode = settings.rho.map_or(PolytopicMode::Maximize, PolytopicMode::Check);
        let cert = certify::certify_polytopic(&set, &problem.set, mode, &opts)?;
        let validation =
            certify::validate_certificate(&cert, JacobianSet::Polytope(&set), settings.validation_trials, seed_value)?;
        Ok(CertifyOutcome {
            certificate: cert,
            validation,
            gamma: None,
        })
    };
    let lft = |set: LftSet, cone: MultiplierCone, gamma: Option<GammaReport>| -> Result<CertifyOutcome> {
        let mut opts = CertifyOptions::lft();
        apply(&mut opts, &settings, seed_value);
        let cert = match settings.rho {
            Some(rho) => certify::certify_lft(&set, &cone, &problem.set, rho, &opts)?,
            None => certify::maximize_lft(&set, &cone, &problem.set, &opts)?,
        };
        let validation =
            certify::validate_certificate(&cert, JacobianSet::Lft(&set), settings.validation_trials, seed_value)?;
        Ok(CertifyOutcome {
            certificate: cert,
            validation,
            gamma,
        })
    };
    match u {
        UncertaintyConfig::Polytope { vertices } => polytope(PolytopeSet::new(vertices.clone())?),
        UncertaintyConfig::DirectPolytope { weight, pi_tildes } => polytope(uncertainty::build_direct_polytope(
            &obj.h_mat,
            &problem.model.pi,
            *weight,
            pi_tildes,
        )?),
        UncertaintyConfig::OagPolytope { pi_tildes, vertex_cap } => {
            polytope(uncertainty::build_oag_polytope(
                &obj.h_mat,
                &problem.model.pi,
                obj.eta,
                pi_tildes,
                vertex_cap.unwrap_or(uncertainty::DEFAULT_VERTEX_CAP),
            )?)
        }
        UncertaintyConfig::Lft { set, cone } => {
            let cone = match cone {
                Some(c) => c.clone(),
                None => uncertainty::cone_for_structure(&set.structure)?,
            };
            lft(set.clone(), cone, None)
        }
        UncertaintyConfig::OagLft { pi_nom, gamma } => {
            let pi_nom = match (pi_nom, &prep.plant) {
                (Some(p), _) => p.clone(),
                (None, BuiltPlant::Feeder(f)) => f.linearize_nominal()?,
                (None, _) => problem.model.pi.clone(),
            };
            let (g, report) = match gamma {
                Some(g) => (*g, None),
                None => {
                    let r = gamma_report(prep)?;
                    (r.gamma, Some(r))
                }
            };
            let (set, cone) = uncertainty::build_oag_lft(&obj.h_mat, &problem.model.pi, &pi_nom, obj.eta, g)?;
            lft(set, cone, report)
        }
    }
}

fn apply(opts: &mut CertifyOptions, c: &CertifyConfig, seed_value: u64) {
    if let Some(e) = c.eps {
        opts.lmi.eps = e;
    }
    if let Some(t) = c.rho_tol {
        opts.rho_tol = t;
    }
    opts.seed = seed_value;
}

pub struct SimulateOutcome {
    pub traces: Vec<SimTrace>,
    pub feedforward: Option<Vector>,
    pub tau: f64,
}

fn random_start(set: &FeasibleSet, seed_value: u64, index: u64) -> Result<Vector> {
    let mut rng = seed::trial_rng(seed_value, index);
    let n = set.dim();
    let n2 = set.n2();
    let x = Vector::from_fn(n, |i, _| {
        if i >= set.n1 && i < set.n1 + n2 {
            let (lo, hi) = (set.box_lower[i - set.n1], set.box_upper[i - set.n1]);
            let (lo, hi) = (lo.max(-1e3), hi.min(1e3));
            if hi > lo {
                rng.random_range(lo..=hi)
            } else {
                lo
            }
        } else {
            rng.random_range(-1.0..=1.0)
        }
    });
    set.project(&x)
}

/// Builds scenarios from the simulate section and runs every algorithm.
pub fn simulate_stage(prep: &Prepared, tau: f64) -> Result<SimulateOutcome> {
    let s = prep
        .config
        .simulate
        .as_ref()
        .ok_or_else(|| Error::Config("missing simulate section".into()))?;
    let problem = &prep.problem;
    let plant = prep.plant.as_plant();
    let scenarios: Vec<Scenario> = match (&prep.series, &prep.plant) {
        (Some(series), BuiltPlant::Feeder(f)) => {
            let PlantConfig::Feeder { eta, .. } = prep.config.plant else { unreachable!() };
            let mut sc = sim::feeder_scenario(f, series, &problem.model.pi, eta, tau)?;
            if prep.config.problem.is_some() {
                sc.problem = problem.clone();
            }
            sc.horizon = s.horizon.min(series.len());
            if let Some(u0) = &s.u0 {
                sc.u0 = Vector::from_vec(u0.clone());
            }
            vec![sc]
        }
        (Some(series), _) => {
            let steps = series
                .w
                .iter()
                .map(|w| SeriesStep {
                    w: w.clone(),
                    h: None,
                    set: None,
                })
                .collect();
            let u0 = match &s.u0 {
                Some(u) => Vector::from_vec(u.clone()),
                None => problem.set.project(&Vector::zeros(problem.n()))?,
            };
            vec![Scenario {
                problem: problem.clone(),
                w: WSource::Series(steps),
                tau,
                u0,
                horizon: s.horizon,
                tol: 0.0,
            }]
        }
        (None, _) => {
            let w = Vector::from_vec(s.w.clone().unwrap_or_else(|| vec![0.0; prep.plant.w_dim()]));
            let starts: Vec<Vector> = match &s.u0 {
                Some(u) => vec![Vector::from_vec(u.clone())],
                None => (0..s.starts as u64)
                    .map(|i| random_start(&problem.set, prep.config.seed, i))
                    .collect::<Result<_>>()?,
            };
            starts
                .into_iter()
                .map(|u0| Scenario::constant(problem.clone(), w.clone(), tau, u0, s.horizon, s.tol))
                .collect()
        }
    };
    let mut traces = Vec::new();
    for alg in &s.algorithms {
        let results = sim::run_batch(&scenarios, |sc| match alg {
            Algorithm::Oag => sim::run_oag(plant, sc),
            Algorithm::GdTrue => sim::run_gd_true(plant, sc),
            Algorithm::Uncontrolled => sim::run_uncontrolled(plant, sc),
        });
        for r in results {
            traces.push(r?);
        }
    }
    let feedforward = match (&prep.series, &s.w) {
        (None, w) => {
            let w = Vector::from_vec(w.clone().unwrap_or_else(|| vec![0.0; prep.plant.w_dim()]));
            Some(sim::feedforward_baseline(problem, &w)?)
        }
        _ => None,
    };
    Ok(SimulateOutcome {
        traces,
        feedforward,
        tau,
    })
}

// ------------------------------------------------------------- artifacts ---

/// Files written by a command, in write order.
#[derive(Debug, Default)]
pub struct Artifacts {
    pub dir: PathBuf,
    pub files: Vec<String>,
}

impl Artifacts {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            files: vec![],
        })
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub crate_version: String,
    pub format: Format,
    pub exit_code: i32,
    pub artifacts: Vec<ManifestEntry>,
}

fn write_manifest(art: &mut Artifacts, command: &str, prep: &Prepared, exit_code: i32) -> Result<()> {
    let mut names = art.files.clone();
    names.sort();
    let artifacts = names
        .iter()
        .map(|f| -> Result<ManifestEntry> {
            Ok(ManifestEntry {
                file: f.clone(),
                sha256: sha256_hex(&fs::read(art.dir.join(f))?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let m = Manifest {
        command: command.to_string(),
        config_sha256: prep.config_sha256.clone(),
        seed: prep.config.seed,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        format: prep.format,
        exit_code,
        artifacts,
    };
    art.json("manifest.json", &m)
}

fn traces_csv(traces: &[SimTrace]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut header_done = false;
    for (run, t) in traces.iter().enumerate() {
        let mut buf = Vec::new();
        t.write_csv(&mut buf)?;
        let text = String::from_utf8(buf).expect("csv output is utf-8");
        let mut lines = text.lines();
        if let Some(h) = lines.next() {
            if !header_done {
                out.extend_from_slice(format!("run,{h}\n").as_bytes());
                header_done = true;
            }
        }
        for l in lines {
            out.extend_from_slice(format!("{run},{l}\n").as_bytes());
        }
    }
    Ok(out)
}

#[derive(Serialize)]
struct JsonRecord<'a> {
    k: usize,
    residual: f64,
    objective: f64,
    violation: f64,
    u: &'a [f64],
    y: &'a [f64],
}

#[derive(Serialize)]
struct JsonTrace<'a> {
    run: usize,
    status: TraceStatus,
    message: &'a Option<String>,
    records: Vec<JsonRecord<'a>>,
}

fn traces_json(traces: &[SimTrace]) -> Vec<JsonTrace<'_>> {
    traces
        .iter()
        .enumerate()
        .map(|(run, t)| JsonTrace {
            run,
            status: t.status,
            message: &t.message,
            records: t
                .records
                .iter()
                .map(|r| JsonRecord {
                    k: r.k,
                    residual: r.residual,
                    objective: r.objective,
                    violation: r.violation,
                    u: r.u.as_slice(),
                    y: r.y.as_slice(),
                })
                .collect(),
        })
        .collect()
}

#[derive(Serialize)]
struct CertificateSummary {
    rho: f64,
    lipschitz: f64,
    tau_star: f64,
    tau_max: f64,
    margin: f64,
    validation_samples: usize,
    validation_min_margin: f64,
    gamma: Option<f64>,
}

fn write_certify(art: &mut Artifacts, out: &CertifyOutcome, format: Format) -> Result<CertificateSummary> {
    art.write("certificate.json", (out.certificate.to_json()? + "\n").as_bytes())?;
    if let Some(g) = &out.gamma {
        write_gamma(art, g, format)?;
    }
    let c = &out.certificate;
    Ok(CertificateSummary {
        rho: c.rho,
        lipschitz: c.lipschitz,
        tau_star: c.tau_star,
        tau_max: c.tau_max,
        margin: c.margin,
        validation_samples: out.validation.samples,
        validation_min_margin: out.validation.min_margin,
        gamma: out.gamma.as_ref().map(|g| g.gamma),
    })
}

#[derive(Serialize)]
struct GammaSummary {
    gamma: f64,
    safety: f64,
    max_error: f64,
    samples: usize,
    failures: usize,
}

fn write_gamma(art: &mut Artifacts, g: &GammaReport, format: Format) -> Result<GammaSummary> {
    let summary = GammaSummary {
        gamma: g.gamma,
        safety: g.safety,
        max_error: g.max_error,
        samples: g.errors.len() + g.failures,
        failures: g.failures,
    };
    match format {
        Format::Csv => {
            let mut buf = Vec::new();
            g.write_csv(&mut buf)?;
            art.write("gamma_errors.csv", &buf)?;
            art.json("gamma.json", &summary)?;
        }
        Format::Json => art.json("gamma.json", g)?,
    }
    Ok(summary)
}

fn write_simulation(art: &mut Artifacts, prep: &Prepared, out: &SimulateOutcome) -> Result<sim::ComparisonReport> {
    let algs: Vec<Algorithm> = prep.config.simulate.as_ref().map(|s| s.algorithms.clone()).unwrap_or_default();
    for alg in &algs {
        let group: Vec<SimTrace> = out.traces.iter().filter(|t| t.algorithm == *alg).cloned().collect();
        match prep.format {
            Format::Csv => art.write(&format!("trace_{}.csv", alg.label()), &traces_csv(&group)?)?,
            Format::Json => art.json(&format!("trace_{}.json", alg.label()), &traces_json(&group))?,
        }
    }
    let report = sim::compare(&out.traces, out.feedforward.as_ref());
    art.json("metrics.json", &report)?;
    if prep.series.is_some() {
        let band = (
            prep.problem.objective.y_lower.min(),
            prep.problem.objective.y_upper.max(),
        );
        let band = if band.0.is_finite() && band.1.is_finite() { band } else { (0.0, 0.0) };
        art.write("envelope.svg", sim::svg_voltage_envelope(&out.traces, band).as_bytes())?;
    } else if prep.problem.n() == 2 {
        let set = &prep.problem.set;
        let bounds = if set.n2() == 2 {
            let b = |i: usize| -> (f64, f64) {
                let (lo, hi) = (set.box_lower[i], set.box_upper[i]);
                if lo.is_finite() && hi.is_finite() { (lo, hi) } else { (-5.0, 5.0) }
            };
            [b(0), b(1)]
        } else {
            [(-5.0, 5.0), (-5.0, 5.0)]
        };
        art.write(
            "trajectories.svg",
            sim::svg_trajectories(&out.traces, bounds, out.feedforward.as_ref()).as_bytes(),
        )?;
    }
    Ok(report)
}

fn resolve_tau(prep: &Prepared, cert: Option<&Certificate>) -> Result<f64> {
    match prep.config.simulate.as_ref().map(|s| s.tau) {
        Some(TauSpec::Fixed(t)) => Ok(t),
        Some(TauSpec::Auto(_)) => {
            let c = cert.ok_or_else(|| Error::Config("tau auto needs a certificate".into()))?;
            Ok(vi::recommend_step(c.rho, c.lipschitz)?.tau_star / 2.0)
        }
        None => Err(Error::Config("missing simulate section".into())),
    }
}

fn plant_failure(traces: &[SimTrace]) -> Option<String> {
    traces
        .iter()
        .find(|t| t.status == TraceStatus::PlantFailure)
        .map(|t| t.message.clone().unwrap_or_else(|| "plant failure".into()))
}

// -------------------------------------------------------------- commands ---

/// What a finished command leaves behind.
#[derive(Debug)]
pub struct RunOutcome {
    pub code: i32,
    pub out_dir: PathBuf,
    pub files: Vec<String>,
    pub summary: serde_json::Value,
}

fn finish(mut art: Artifacts, command: &str, prep: &Prepared, code: i32, summary: serde_json::Value) -> CliResult<RunOutcome> {
    art.json("summary.json", &summary).map_err(stage_err("output"))?;
    write_manifest(&mut art, command, prep, code).map_err(stage_err("output"))?;
    Ok(RunOutcome {
        code,
        out_dir: art.dir,
        files: art.files,
        summary,
    })
}

fn infeasible_outcome(art: Artifacts, command: &str, prep: &Prepared, e: &CliError) -> CliResult<RunOutcome> {
    let summary = serde_json::json!({ "stage": e.stage, "error": e.error.to_string() });
    finish(art, command, prep, e.code, summary)
}

pub fn cmd_certify(prep: &Prepared) -> CliResult<RunOutcome> {
    let mut art = Artifacts::new(&prep.out_dir).map_err(stage_err("output"))?;
    let out = match certify_stage(prep).map_err(stage_err("certify")) {
        Ok(o) => o,
        Err(e) if e.code == EXIT_INFEASIBLE => return infeasible_outcome(art, "certify", prep, &e),
        Err(e) => return Err(e),
    };
    let summary = write_certify(&mut art, &out, prep.format).map_err(stage_err("output"))?;
    let summary = serde_json::to_value(summary).map_err(|e| stage_err("output")(e.into()))?;
    finish(art, "certify", prep, EXIT_OK, summary)
}

pub fn cmd_simulate(prep: &Prepared) -> CliResult<RunOutcome> {
    let mut art = Artifacts::new(&prep.out_dir).map_err(stage_err("output"))?;
    let cert = if matches!(prep.config.simulate.as_ref().map(|s| s.tau), Some(TauSpec::Auto(_))) {
        let out = match certify_stage(prep).map_err(stage_err("certify")) {
            Ok(o) => o,
            Err(e) if e.code == EXIT_INFEASIBLE => return infeasible_outcome(art, "simulate", prep, &e),
            Err(e) => return Err(e),
        };
        write_certify(&mut art, &out, prep.format).map_err(stage_err("output"))?;
        Some(out.certificate)
    } else {
        None
    };
    let tau = resolve_tau(prep, cert.as_ref()).map_err(stage_err("simulate"))?;
    let out = simulate_stage(prep, tau).map_err(stage_err("simulate"))?;
    let report = write_simulation(&mut art, prep, &out).map_err(stage_err("output"))?;
    let code = if plant_failure(&out.traces).is_some() { EXIT_RUNTIME } else { EXIT_OK };
    let summary = serde_json::json!({
        "tau": tau,
        "plant_failure": plant_failure(&out.traces),
        "metrics": report,
    });
    finish(art, "simulate", prep, code, summary)
}

pub fn cmd_sample_gamma(prep: &Prepared) -> CliResult<RunOutcome> {
    let mut art = Artifacts::new(&prep.out_dir).map_err(stage_err("output"))?;
    let report = gamma_report(prep).map_err(stage_err("sample-gamma"))?;
    let summary = write_gamma(&mut art, &report, prep.format).map_err(stage_err("output"))?;
    let summary = serde_json::to_value(summary).map_err(|e| stage_err("output")(e.into()))?;
    finish(art, "sample-gamma", prep, EXIT_OK, summary)
}

/// certify → recommend τ → simulate → compare.
pub fn cmd_demo(prep: &Prepared) -> CliResult<RunOutcome> {
    let mut art = Artifacts::new(&prep.out_dir).map_err(stage_err("output"))?;
    art.json("config.json", &prep.config).map_err(stage_err("output"))?;
    let cert = certify_stage(prep).map_err(stage_err("certify"))?;
    let cert_summary = write_certify(&mut art, &cert, prep.format).map_err(stage_err("output"))?;
    let tau = resolve_tau(prep, Some(&cert.certificate)).map_err(stage_err("recommend-step"))?;
    let out = simulate_stage(prep, tau).map_err(stage_err("simulate"))?;
    let report = write_simulation(&mut art, prep, &out).map_err(stage_err("compare"))?;
    let code = if plant_failure(&out.traces).is_some() { EXIT_RUNTIME } else { EXIT_OK };
    let summary = serde_json::json!({
        "certificate": cert_summary,
        "tau": tau,
        "plant_failure": plant_failure(&out.traces),
        "metrics": report,
    });
    finish(art, "demo", prep, code, summary)
}

fn load_config(args: &RunArgs) -> CliResult<(RunConfig, Vec<u8>, PathBuf)> {
    let path = args
        .config
        .as_ref()
        .ok_or_else(|| config_err(Error::Config("--config is required".into())))?;
    let raw = fs::read(path)
        .map_err(|e| config_err(Error::Config(format!("cannot read {}: {e}", path.display()))))?;
    let text = std::str::from_utf8(&raw).map_err(|_| config_err(Error::Config("config is not UTF-8".into())))?;
    let cfg = RunConfig::from_json(text).map_err(config_err)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((cfg, raw, base))
}

/// Parses and runs one command.
pub fn execute(cli: &Cli) -> CliResult<RunOutcome> {
    match &cli.command {
        Command::Certify(a) => {
            let (cfg, raw, base) = load_config(a)?;
            cmd_certify(&prepare(cfg, &raw, &base, CommandKind::Certify, a)?)
        }
        Command::Simulate(a) => {
            let (cfg, raw, base) = load_config(a)?;
            cmd_simulate(&prepare(cfg, &raw, &base, CommandKind::Simulate, a)?)
        }
        Command::SampleGamma(a) => {
            let (cfg, raw, base) = load_config(a)?;
            cmd_sample_gamma(&prepare(cfg, &raw, &base, CommandKind::SampleGamma, a)?)
        }
        Command::Demo { name, args } => {
            let (cfg, raw, base) = match &args.config {
                Some(_) => load_config(args)?,
                None => {
                    let cfg = match name {
                        DemoName::Academic => RunConfig::academic_demo(),
                        DemoName::Feeder => RunConfig::feeder_demo(),
                    };
                    let raw = cfg.to_json().map_err(config_err)?.into_bytes();
                    (cfg, raw, PathBuf::from("."))
                }
            };
            let mut args = args.clone();
            if args.out.is_none() && cfg.output.is_none() {
                args.out = Some(PathBuf::from(match name {
                    DemoName::Academic => "out/demo-academic",
                    DemoName::Feeder => "out/demo-feeder",
                }));
            }
            cmd_demo(&prepare(cfg, &raw, &base, CommandKind::Demo, &args)?)
        }
    }
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let started = std::time::Instant::now();
    match execute(&cli) {
        Ok(out) => {
            let text = serde_json::to_string_pretty(&out.summary).unwrap_or_default();
            println!("{text}");
            println!(
                "wrote {} files to {} in {:.2?}",
                out.files.len(),
                out.out_dir.display(),
                started.elapsed()
            );
            if out.code != EXIT_OK {
                eprintln!("exit {}", out.code);
            }
            out.code
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.code
        }
    }
}
