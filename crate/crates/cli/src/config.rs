//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use harnack_core::estimates::{ExponentConvention, GammaCondition, Theorem};
use harnack_core::geometry::{GeometryKind, ModelGeometry};
use harnack_core::harnack::{YoungMeasure, DEFAULT_QUAD_NODES};
use harnack_core::params::{ParamTriple, DEFAULT_CONDITION_TOL};
use harnack_core::solver::Source;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub grid: GridConfig,
    pub solve: Option<SolveConfig>,
    #[serde(default)]
    pub initial: InitialData,
    #[serde(default = "no_source")]
    pub source: Source,
    #[serde(default)]
    pub triples: Vec<TripleConfig>,
    /// Overrides every triple's curvature bound.
    pub k: Option<f64>,
    #[serde(default)]
    pub conditions: ConditionsConfig,
    pub verify: Option<VerifyConfig>,
    pub harnack: Option<HarnackConfig>,
    pub sweep: Option<SweepConfig>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
}

fn no_source() -> Source {
    Source::None
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryName {
    FlatTorus,
    ShrinkingSphere,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub kind: GeometryName,
    pub n: usize,
    /// Torus side length (default 2π).
    pub side: Option<f64>,
    /// Time horizon for the sphere (default 0.8 of extinction).
    pub t_max: Option<f64>,
}

impl GeometryConfig {
    pub fn build(&self) -> Result<ModelGeometry> {
        let kind = match self.kind {
            GeometryName::FlatTorus => GeometryKind::FlatTorus {
                n: self.n,
                side: self.side.unwrap_or(std::f64::consts::TAU),
            },
            GeometryName::ShrinkingSphere => {
                if self.side.is_some() {
                    bail!("side applies to the flat torus only");
                }
                GeometryKind::ShrinkingSphere { n: self.n }
            }
        };
        let geo = ModelGeometry::from_kind(kind)?;
        Ok(match self.t_max {
            Some(t) => geo.with_t_max(t)?,
            None => geo,
        })
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { points: 128 }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    pub t_end: f64,
    /// Defaults to the CFL limit.
    pub dt: Option<f64>,
    #[serde(default = "one")]
    pub save_every: usize,
    /// Load this dump instead of solving.
    pub dump: Option<PathBuf>,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialData {
    Constant { value: f64 },
    /// mean + amplitude · cos(wavenumber · x)
    Cosine { mean: f64, amplitude: f64, wavenumber: f64 },
    /// Seeded trigonometric polynomial, see [`crate::initial::random_trig`].
    RandomTrig,
}

impl Default for InitialData {
    fn default() -> Self {
        InitialData::Cosine {
            mean: 1.0,
            amplitude: 0.5,
            wavenumber: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum TripleConfig {
    LiYau { alpha: f64, theta: f64, k: Option<f64>, n: Option<usize> },
    Hamilton { k: Option<f64>, n: Option<usize> },
    LiXu { k: Option<f64>, n: Option<usize> },
    LinearLiXu { mu: f64, k: Option<f64>, n: Option<usize> },
}

impl TripleConfig {
    pub fn name(&self) -> &'static str {
        match self {
            TripleConfig::LiYau { .. } => "li_yau",
            TripleConfig::Hamilton { .. } => "hamilton",
            TripleConfig::LiXu { .. } => "li_xu",
            TripleConfig::LinearLiXu { .. } => "linear_li_xu",
        }
    }

    fn own_k(&self) -> Option<f64> {
        match *self {
            TripleConfig::LiYau { k, .. }
            | TripleConfig::Hamilton { k, .. }
            | TripleConfig::LiXu { k, .. }
            | TripleConfig::LinearLiXu { k, .. } => k,
        }
    }

    fn own_n(&self) -> Option<usize> {
        match *self {
            TripleConfig::LiYau { n, .. }
            | TripleConfig::Hamilton { n, .. }
            | TripleConfig::LiXu { n, .. }
            | TripleConfig::LinearLiXu { n, .. } => n,
        }
    }

    /// Builds the triple; K comes from `k_override`, then the entry, then `default_k`.
    pub fn build(&self, k_override: Option<f64>, default_k: f64, default_n: usize) -> Result<ParamTriple> {
        let k = k_override.or(self.own_k()).unwrap_or(default_k);
        let n = self.own_n().unwrap_or(default_n);
        let triple = match *self {
            TripleConfig::LiYau { alpha, theta, .. } => ParamTriple::li_yau(alpha, theta, k, n),
            TripleConfig::Hamilton { .. } => ParamTriple::hamilton(k, n),
            TripleConfig::LiXu { .. } => ParamTriple::li_xu(k, n),
            TripleConfig::LinearLiXu { mu, .. } => ParamTriple::linear_li_xu(mu, k, n),
        };
        triple.with_context(|| format!("building the {} triple", self.name()))
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ConditionsConfig {
    pub t_min: Option<f64>,
    pub t_max: Option<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_condition_tol")]
    pub tol: f64,
}

fn default_samples() -> usize {
    2000
}

fn default_condition_tol() -> f64 {
    DEFAULT_CONDITION_TOL
}

impl Default for ConditionsConfig {
    fn default() -> Self {
        Self {
            t_min: None,
            t_max: None,
            samples: default_samples(),
            tol: default_condition_tol(),
        }
    }
}

impl ConditionsConfig {
    /// The configured window, clipped to the triple's domain.
    pub fn range(&self, triple: &ParamTriple) -> (f64, f64) {
        let lo = self.t_min.unwrap_or(1e-3);
        let hi = self.t_max.unwrap_or(10.0).min(triple.t_upper());
        (lo, hi)
    }
}

/// A number, or the word "fit".
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ConstantSetting {
    Value(f64),
    Word(String),
}

impl ConstantSetting {
    pub fn fit(&self) -> Result<bool> {
        match self {
            ConstantSetting::Value(_) => Ok(false),
            ConstantSetting::Word(w) if w == "fit" => Ok(true),
            ConstantSetting::Word(w) => bail!("constant must be a number or \"fit\", got {w:?}"),
        }
    }

    pub fn value(&self) -> f64 {
        match self {
            ConstantSetting::Value(c) => *c,
            ConstantSetting::Word(_) => 1.0,
        }
    }
}

impl Default for ConstantSetting {
    fn default() -> Self {
        ConstantSetting::Value(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremName {
    LocalPower,
    GlobalPower,
    LocalLog,
    GlobalLog,
    LocalHeat,
    GlobalHeat,
    ClosedManifold,
}

impl TheoremName {
    pub fn as_str(&self) -> &'static str {
        match self {
            TheoremName::LocalPower => "local_power",
            TheoremName::GlobalPower => "global_power",
            TheoremName::LocalLog => "local_log",
            TheoremName::GlobalLog => "global_log",
            TheoremName::LocalHeat => "local_heat",
            TheoremName::GlobalHeat => "global_heat",
            TheoremName::ClosedManifold => "closed_manifold",
        }
    }

    /// The theorem with l or a read from the source.
    pub fn resolve(&self, source: &Source, gamma_condition: GammaCondition) -> Result<Theorem> {
        let power_l = || match source {
            Source::Power { l, .. } => Ok(*l),
            other => bail!("{} needs a power source, got {}", self.as_str(), other.name()),
        };
        let log_a = || match source {
            Source::Log { a } => Ok(*a),
            other => bail!("{} needs a log source, got {}", self.as_str(), other.name()),
        };
        Ok(match self {
            TheoremName::LocalPower => Theorem::LocalPower {
                l: power_l()?,
                gamma_condition,
            },
            TheoremName::GlobalPower => Theorem::GlobalPower { l: power_l()? },
            TheoremName::LocalLog => Theorem::LocalLog {
                a: log_a()?,
                gamma_condition,
            },
            TheoremName::GlobalLog => Theorem::GlobalLog { a: log_a()? },
            TheoremName::LocalHeat => Theorem::LocalHeat { gamma_condition },
            TheoremName::GlobalHeat => Theorem::GlobalHeat,
            TheoremName::ClosedManifold => Theorem::ClosedManifold,
        })
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentChoice {
    SourcePower,
    ShiftedPower,
    #[default]
    Both,
}

impl ExponentChoice {
    pub fn conventions(&self) -> Vec<ExponentConvention> {
        match self {
            ExponentChoice::SourcePower => vec![ExponentConvention::SourcePower],
            ExponentChoice::ShiftedPower => vec![ExponentConvention::ShiftedPower],
            ExponentChoice::Both => vec![ExponentConvention::SourcePower, ExponentConvention::ShiftedPower],
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub theorems: Vec<TheoremName>,
    #[serde(default = "c1")]
    pub gamma_condition: GammaCondition,
    #[serde(default)]
    pub constant: ConstantSetting,
    pub radius: Option<f64>,
    pub anchor: Option<f64>,
    #[serde(default)]
    pub t_min: f64,
    pub t_max: Option<f64>,
    pub tol: Option<f64>,
    #[serde(default)]
    pub exponent: ExponentChoice,
    pub u_bar: Option<f64>,
}

fn c1() -> GammaCondition {
    GammaCondition::C1Bound
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionChoice {
    #[default]
    EarlierBounded,
    LaterBounded,
    Both,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HarnackConfig {
    #[serde(default = "ten")]
    pub nx: usize,
    #[serde(default = "five")]
    pub nt: usize,
    #[serde(default)]
    pub t_min: f64,
    pub t_max: Option<f64>,
    #[serde(default)]
    pub direction: DirectionChoice,
    #[serde(default)]
    pub young: YoungMeasure,
    #[serde(default = "quad_nodes")]
    pub quad_nodes: usize,
    #[serde(default = "unit")]
    pub constant: f64,
    pub tol: Option<f64>,
    pub u_bar: Option<f64>,
}

fn ten() -> usize {
    10
}

fn five() -> usize {
    5
}

fn quad_nodes() -> usize {
    DEFAULT_QUAD_NODES
}

fn unit() -> f64 {
    1.0
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    /// Base triple; defaults to the first `[[triples]]` entry.
    pub triple: Option<TripleConfig>,
    pub mu: Option<Vec<f64>>,
    pub theta: Option<Vec<f64>>,
    pub alpha: Option<Vec<f64>>,
    pub k: Option<Vec<f64>>,
    pub grid: Option<Vec<usize>>,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).context("parsing the configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Static checks that do not need a run.
    pub fn validate(&self) -> Result<()> {
        let geo = self.geometry.build()?;
        if self.grid.points < 8 {
            bail!("grid.points must be at least 8");
        }
        if let Some(solve) = &self.solve {
            if solve.dump.is_none() {
                let grid = geo.grid(self.grid.points)?;
                let limit = geo.cfl_limit(&grid, solve.t_end)?;
                if let Some(dt) = solve.dt {
                    if dt > limit {
                        bail!("dt = {dt} exceeds the CFL limit {limit} for {} points", self.grid.points);
                    }
                }
            }
        }
        if let Some(v) = &self.verify {
            v.constant.fit()?;
        }
        Ok(())
    }

    /// K used when neither the override nor the entry gives one: sup |Ric| up to t_end.
    pub fn default_k(&self) -> Result<f64> {
        let geo = self.geometry.build()?;
        let horizon = self.solve.as_ref().map_or(geo.t_max().min(1.0), |s| s.t_end);
        Ok(geo.ricci_bound(horizon.min(geo.t_max()))?)
    }

    pub fn build_triples(&self) -> Result<Vec<ParamTriple>> {
        let k = self.default_k()?;
        self.triples
            .iter()
            .map(|t| t.build(self.k, k, self.geometry.n))
            .collect()
    }
}
