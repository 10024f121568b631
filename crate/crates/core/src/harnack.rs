//! Harnack factors along space-time paths and their check against solver output.
//!
//! The path runs from (x₂, t₂) at s = 0 to (x₁, t₁) at s = 1 along a geodesic, with
//! t(s) = (1 − s)t₂ + s t₁. Its speed is measured in the metric at time t(s).

use std::io::{self, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::ModelGeometry;
use crate::params::{check_conditions, ParamTriple, DEFAULT_CONDITION_TOL};
use crate::quadrature::{odd_nodes, refined_nodes, simpson};
use crate::report::fmt_f64;
use crate::solver::{Deltas, SolutionField, Source};

/// Starting Simpson node count per axis.
pub const DEFAULT_QUAD_NODES: usize = 129;
pub const MIN_QUAD_NODES: usize = 16;
/// Largest accepted relative change of log(factor) on the last doubling.
pub const QUADRATURE_REL_TOL: f64 = 1e-6;
/// Node doubling stops once the relative change drops below this.
const CONVERGED_REL: f64 = 1e-12;
const MAX_REFINEMENTS: usize = 8;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimePath {
    pub x1: f64,
    pub t1: f64,
    pub x2: f64,
    pub t2: f64,
}

impl SpaceTimePath {
    pub fn new(x1: f64, t1: f64, x2: f64, t2: f64) -> Result<Self> {
        if !(t1 > 0.0) {
            return Err(LabError::domain("harnack path", t1, "(0, t2)"));
        }
        if !(t2 > t1) {
            return Err(LabError::InvalidParameter(format!("need t1 < t2, got {t1} and {t2}")));
        }
        Ok(Self { x1, t1, x2, t2 })
    }

    pub fn duration(&self) -> f64 {
        self.t2 - self.t1
    }

    pub fn time_at(&self, s: f64) -> f64 {
        (1.0 - s) * self.t2 + s * self.t1
    }

    /// |γ′(s)|: coordinate length of the geodesic times the metric scale at t(s).
    pub fn speed(&self, geo: &ModelGeometry, s: f64) -> Result<f64> {
        geo.distance(self.x1, self.x2, self.time_at(s))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HarnackKind {
    PowerLle1 { l: f64, u_bar: f64, deltas: Deltas },
    PowerLgt1 { l: f64, u_bar: f64, deltas: Deltas },
    Log { a: f64 },
    Heat,
}

impl HarnackKind {
    /// Picks the l ≤ 1 or l > 1 branch.
    pub fn power(l: f64, u_bar: f64, deltas: Deltas) -> Self {
        if l <= 1.0 {
            HarnackKind::PowerLle1 { l, u_bar, deltas }
        } else {
            HarnackKind::PowerLgt1 { l, u_bar, deltas }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            HarnackKind::PowerLle1 { .. } => "power_l_le_1",
            HarnackKind::PowerLgt1 { .. } => "power_l_gt_1",
            HarnackKind::Log { .. } => "log",
            HarnackKind::Heat => "heat",
        }
    }

    /// √(ū₁δ₃) + ū₁δ₁ + √((2−l)ū₁δ₂) for l ≤ 1, (l−1)ū₂δ₁ + √(ū₂δ₃) for l > 1.
    pub fn mu(&self) -> f64 {
        match *self {
            HarnackKind::PowerLle1 { l, u_bar, deltas } => {
                (u_bar * deltas.d3).sqrt() + u_bar * deltas.d1 + ((2.0 - l) * u_bar * deltas.d2).sqrt()
            }
            HarnackKind::PowerLgt1 { l, u_bar, deltas } => {
                (l - 1.0) * u_bar * deltas.d1 + (u_bar * deltas.d3).sqrt()
            }
            HarnackKind::Log { a } => a.abs(),
            HarnackKind::Heat => 0.0,
        }
    }
}

/// Measure for the α²/32 term produced by Young's inequality.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YoungMeasure {
    /// ∫₀¹ α(t(s))²/32 ds, what the splitting of the path integrand yields.
    #[default]
    PathParameter,
    /// ∫_{t₁}^{t₂} α²/32 dt as printed; smaller than the split when t₂ − t₁ < 1.
    Time,
}

/// Which endpoint the inequality bounds.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HarnackDirection {
    /// u(x₁, t₁) ≤ u(x₂, t₂) · factor, the form obtained by integrating along the path.
    #[default]
    EarlierBounded,
    /// u(x₂, t₂) ≤ u(x₁, t₁) · factor.
    LaterBounded,
}

#[derive(Clone, Debug)]
pub struct HarnackInstance {
    pub geometry: ModelGeometry,
    pub path: SpaceTimePath,
    pub triple: ParamTriple,
    pub constant: f64,
    pub kind: HarnackKind,
    pub young: YoungMeasure,
}

impl HarnackInstance {
    pub fn new(geometry: ModelGeometry, path: SpaceTimePath, triple: ParamTriple, kind: HarnackKind) -> Self {
        Self {
            geometry,
            path,
            triple,
            constant: 1.0,
            kind,
            young: YoungMeasure::default(),
        }
    }

    pub fn constant(mut self, c: f64) -> Self {
        self.constant = c;
        self
    }

    pub fn young(mut self, young: YoungMeasure) -> Self {
        self.young = young;
        self
    }

    pub fn with_path(&self, path: SpaceTimePath) -> Self {
        Self { path, ..self.clone() }
    }
}

/// Time integrand of the factor (statement form) or of the pre-split bound (proof form).
fn time_integrand(inst: &HarnackInstance, t: f64, proof_form: bool) -> Result<f64> {
    let v = inst.triple.eval(t)?;
    let (alpha, phi) = (v.alpha, v.phi);
    let c = inst.constant;
    let k = inst.triple.k();
    let n = inst.triple.n() as f64;
    let c_alpha = if proof_form { c * alpha } else { c * alpha * alpha };
    let mu = inst.kind.mu();
    Ok(match inst.kind {
        HarnackKind::PowerLle1 { u_bar, deltas, .. } => phi + c_alpha * (k + mu) + deltas.d1 * u_bar,
        HarnackKind::PowerLgt1 { l, u_bar, deltas } => {
            let root = ((l * alpha - 1.0) / (l - 1.0)).sqrt() * (u_bar * deltas.d2).sqrt();
            let cross = (n * (l - 1.0) * phi * deltas.d1).sqrt();
            if proof_form {
                phi + c_alpha * (k + mu) + root + alpha.sqrt() * cross
            } else {
                phi + c_alpha * (k + mu) + alpha * root + alpha.powf(1.5) * cross
            }
        }
        HarnackKind::Log { .. } => phi + c * alpha * (k + mu),
        HarnackKind::Heat => phi + c * alpha * k,
    })
}

/// ∫_{t₁}^{t₂} g dt after t = t₁(t₂/t₁)^v, which flattens the 1/t behaviour of φ.
fn integrate_time<G: Fn(f64) -> Result<f64>>(path: &SpaceTimePath, g: G, nodes: usize) -> Result<f64> {
    let span = (path.t2 / path.t1).ln();
    let mut failure = None;
    let value = simpson(
        |v| {
            let t = if v >= 1.0 { path.t2 } else { path.t1 * (span * v).exp() };
            match g(t) {
                Ok(x) => x * t * span,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            }
        },
        0.0,
        1.0,
        nodes,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

fn integrate_path<G: Fn(f64) -> Result<f64>>(g: G, nodes: usize) -> Result<f64> {
    let mut failure = None;
    let value = simpson(
        |s| match g(s) {
            Ok(x) => x,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        },
        0.0,
        1.0,
        nodes,
    );
    match failure {
        Some(e) => Err(e),
        None => Ok(value),
    }
}

/// The three pieces of log(factor).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FactorTerms {
    /// ∫₀¹ |γ′|⁴ / (2(t₂ − t₁)²) ds
    pub path: f64,
    /// the α²/32 term
    pub young: f64,
    /// ∫ of the kind's time integrand
    pub time: f64,
}

impl FactorTerms {
    pub fn log_factor(&self) -> f64 {
        self.path + self.young + self.time
    }
}

fn factor_terms_at(inst: &HarnackInstance, nodes: usize) -> Result<FactorTerms> {
    let path = &inst.path;
    let dt = path.duration();
    let path_term = integrate_path(
        |s| {
            let speed = path.speed(&inst.geometry, s)?;
            Ok(speed.powi(4) / (2.0 * dt * dt))
        },
        nodes,
    )?;
    let alpha_sq = |t: f64| -> Result<f64> {
        let a = inst.triple.eval(t)?.alpha;
        Ok(a * a / 32.0)
    };
    let young = match inst.young {
        YoungMeasure::Time => integrate_time(path, alpha_sq, nodes)?,
        YoungMeasure::PathParameter => integrate_time(path, alpha_sq, nodes)? / dt,
    };
    let time = integrate_time(path, |t| time_integrand(inst, t, false), nodes)?;
    Ok(FactorTerms {
        path: path_term,
        young,
        time,
    })
}

fn check_nodes(nodes: usize) -> Result<()> {
    if nodes < MIN_QUAD_NODES {
        return Err(LabError::InvalidParameter(format!(
            "need at least {MIN_QUAD_NODES} quadrature nodes, got {nodes}"
        )));
    }
    Ok(())
}

/// Doubles the Simpson panels from `nodes` until successive values agree.
///
/// Returns the value and the node count that produced it.
fn richardson<F: Fn(usize) -> Result<f64>>(f: F, nodes: usize) -> Result<(f64, usize)> {
    check_nodes(nodes)?;
    let mut m = odd_nodes(nodes);
    let mut coarse = f(m)?;
    let mut rel_change = f64::INFINITY;
    for _ in 0..MAX_REFINEMENTS {
        let m2 = refined_nodes(m);
        let fine = f(m2)?;
        rel_change = (fine - coarse).abs() / fine.abs().max(1.0);
        coarse = fine;
        m = m2;
        if rel_change <= CONVERGED_REL {
            break;
        }
    }
    if !(rel_change <= QUADRATURE_REL_TOL) {
        return Err(LabError::Quadrature { rel_change });
    }
    Ok((coarse, m))
}

/// Components of log(factor), checked against a refined quadrature.
pub fn factor_terms(inst: &HarnackInstance, quad_nodes: usize) -> Result<FactorTerms> {
    let (_, m) = richardson(|m| Ok(factor_terms_at(inst, m)?.log_factor()), quad_nodes)?;
    factor_terms_at(inst, m)
}

pub fn log_factor(inst: &HarnackInstance, quad_nodes: usize) -> Result<f64> {
    Ok(richardson(|m| Ok(factor_terms_at(inst, m)?.log_factor()), quad_nodes)?.0)
}

/// exp(Γ), exp(Λ) or the log/heat analogue.
pub fn factor(inst: &HarnackInstance, quad_nodes: usize) -> Result<f64> {
    Ok(log_factor(inst, quad_nodes)?.exp())
}

fn log_tighter_at(inst: &HarnackInstance, nodes: usize) -> Result<f64> {
    let path = &inst.path;
    let dt = path.duration();
    let spatial = integrate_path(
        |s| {
            let speed = path.speed(&inst.geometry, s)?;
            let alpha = inst.triple.eval(path.time_at(s))?.alpha;
            Ok(alpha * speed * speed / (4.0 * dt))
        },
        nodes,
    )?;
    Ok(spatial + integrate_time(path, |t| time_integrand(inst, t, true), nodes)?)
}

/// log of the bound before Young's split of the path term.
pub fn log_tighter_path_bound(inst: &HarnackInstance, quad_nodes: usize) -> Result<f64> {
    Ok(richardson(|m| log_tighter_at(inst, m), quad_nodes)?.0)
}

pub fn tighter_path_bound(inst: &HarnackInstance, quad_nodes: usize) -> Result<f64> {
    Ok(log_tighter_path_bound(inst, quad_nodes)?.exp())
}

/// Stored indices the endpoints are drawn from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EndpointGrid {
    pub x_indices: Vec<usize>,
    pub t_indices: Vec<usize>,
}

impl EndpointGrid {
    /// `nx` evenly spread nodes and `nt` evenly spread interior slices in [t_lo, t_hi].
    pub fn spread(field: &SolutionField, nx: usize, nt: usize, t_lo: f64, t_hi: f64) -> Result<Self> {
        let spread = |candidates: &[usize], count: usize| -> Vec<usize> {
            if count == 0 || candidates.is_empty() {
                return Vec::new();
            }
            if count == 1 {
                return vec![candidates[0]];
            }
            let mut out: Vec<usize> = (0..count)
                .map(|i| candidates[i * (candidates.len() - 1) / (count - 1)])
                .collect();
            out.dedup();
            out
        };
        let xs: Vec<usize> = (0..field.n_space()).collect();
        let ts: Vec<usize> = (1..field.n_times().saturating_sub(1))
            .filter(|&ti| {
                let t = field.times()[ti];
                t >= t_lo - 1e-12 && t <= t_hi + 1e-12
            })
            .collect();
        if ts.len() < 2 {
            return Err(LabError::InvalidParameter(format!(
                "fewer than two stored slices in [{t_lo}, {t_hi}]"
            )));
        }
        Ok(Self {
            x_indices: spread(&xs, nx),
            t_indices: spread(&ts, nt),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HarnackRow {
    pub x1: f64,
    pub t1: f64,
    pub x2: f64,
    pub t2: f64,
    pub log_u1: f64,
    pub log_u2: f64,
    pub log_factor: f64,
    pub log_tighter: f64,
    pub margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct HarnackReport {
    pub kind: String,
    pub direction: HarnackDirection,
    pub young: YoungMeasure,
    pub pairs: usize,
    pub violations: usize,
    pub worst_margin: f64,
    pub worst_pair: Option<[f64; 4]>,
    /// Pairs where the pre-split bound exceeded the factor.
    pub tighter_exceeds_factor: usize,
    pub tol: f64,
    #[serde(skip)]
    pub rows: Vec<HarnackRow>,
}

impl HarnackReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    /// CSV with columns x1, t1, x2, t2, log_u1, log_u2, log_factor, margin.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "x1,t1,x2,t2,log_u1,log_u2,log_factor,margin")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                fmt_f64(r.x1),
                fmt_f64(r.t1),
                fmt_f64(r.x2),
                fmt_f64(r.t2),
                fmt_f64(r.log_u1),
                fmt_f64(r.log_u2),
                fmt_f64(r.log_factor),
                fmt_f64(r.margin)
            )?;
        }
        Ok(())
    }
}

/// max over the field's stored values of u^{l−1}.
pub fn realized_u_bar(field: &SolutionField, l: f64) -> f64 {
    (0..field.n_times())
        .flat_map(|ti| field.slice(ti).iter())
        .map(|u| u.powf(l - 1.0))
        .fold(f64::NEG_INFINITY, f64::max)
}

fn check_field_matches(field: &SolutionField, template: &HarnackInstance, t_lo: f64, t_hi: f64) -> Result<()> {
    let ok = match (template.kind, field.source()) {
        (HarnackKind::Heat, Source::None) => true,
        (HarnackKind::Log { a }, Source::Log { a: b }) => a == *b,
        (
            HarnackKind::PowerLle1 { l, u_bar, .. } | HarnackKind::PowerLgt1 { l, u_bar, .. },
            Source::Power { l: field_l, .. },
        ) => {
            if l != *field_l {
                false
            } else {
                let realized = realized_u_bar(field, l);
                if u_bar < realized * (1.0 - 1e-12) {
                    return Err(LabError::Hypothesis(format!(
                        "ū = {u_bar} is below the realized max u^(l−1) = {realized}"
                    )));
                }
                true
            }
        }
        _ => false,
    };
    if !ok {
        return Err(LabError::Hypothesis(format!(
            "{} factor does not apply to a field with a {} source",
            template.kind.name(),
            field.source().name()
        )));
    }
    let report = check_conditions(&template.triple, (t_lo, t_hi), 2000, DEFAULT_CONDITION_TOL)?;
    if !report.pass {
        return Err(LabError::Hypothesis(format!(
            "{} triple is not admissible on [{t_lo}, {t_hi}]",
            template.triple.family().name()
        )));
    }
    let ricci = field.geometry().ricci_bound(t_hi)?;
    if template.triple.k() < ricci * (1.0 - 1e-12) {
        return Err(LabError::Hypothesis(format!(
            "curvature bound K = {} is below sup |Ric| = {ricci}",
            template.triple.k()
        )));
    }
    Ok(())
}

/// Checks the Harnack inequality for every endpoint pair with t₁ < t₂.
///
/// `template` supplies everything but the path. Pairs run in parallel.
pub fn verify_harnack(
    field: &SolutionField,
    template: &HarnackInstance,
    endpoints: &EndpointGrid,
    direction: HarnackDirection,
    quad_nodes: usize,
    tol: f64,
) -> Result<HarnackReport> {
    check_nodes(quad_nodes)?;
    let times = field.times();
    let last = field.n_times().saturating_sub(2);
    for &ti in &endpoints.t_indices {
        if ti < 1 || ti > last {
            return Err(LabError::TimeIndex { index: ti, lo: 1, hi: last });
        }
    }
    if let Some(&xi) = endpoints.x_indices.iter().find(|&&xi| xi >= field.n_space()) {
        return Err(LabError::InvalidParameter(format!("node index {xi} out of range")));
    }
    let t_lo = endpoints.t_indices.iter().map(|&i| times[i]).fold(f64::INFINITY, f64::min);
    let t_hi = endpoints.t_indices.iter().map(|&i| times[i]).fold(f64::NEG_INFINITY, f64::max);
    check_field_matches(field, template, t_lo, t_hi)?;

    let mut pairs = Vec::new();
    for &a in &endpoints.t_indices {
        for &b in &endpoints.t_indices {
            if times[a] < times[b] {
                for &x1 in &endpoints.x_indices {
                    for &x2 in &endpoints.x_indices {
                        pairs.push((x1, a, x2, b));
                    }
                }
            }
        }
    }
    let points = field.grid().points();
    let rows: Vec<HarnackRow> = pairs
        .par_iter()
        .map(|&(x1, t1, x2, t2)| -> Result<HarnackRow> {
            let path = SpaceTimePath::new(points[x1], times[t1], points[x2], times[t2])?;
            let inst = template.with_path(path);
            let log_factor = log_factor(&inst, quad_nodes)?;
            let log_tighter = log_tighter_path_bound(&inst, quad_nodes)?;
            let log_u1 = field.value(t1, x1).ln();
            let log_u2 = field.value(t2, x2).ln();
            let margin = match direction {
                HarnackDirection::EarlierBounded => log_u2 + log_factor - log_u1,
                HarnackDirection::LaterBounded => log_u1 + log_factor - log_u2,
            };
            Ok(HarnackRow {
                x1: path.x1,
                t1: path.t1,
                x2: path.x2,
                t2: path.t2,
                log_u1,
                log_u2,
                log_factor,
                log_tighter,
                margin,
            })
        })
        .collect::<Result<_>>()?;

    let violations = rows.iter().filter(|r| !(r.margin >= -tol)).count();
    let tighter_exceeds_factor = rows
        .iter()
        .filter(|r| r.log_tighter > r.log_factor + QUADRATURE_REL_TOL)
        .count();
    let worst = rows
        .iter()
        .min_by(|a, b| a.margin.total_cmp(&b.margin));
    Ok(HarnackReport {
        kind: template.kind.name().to_string(),
        direction,
        young: template.young,
        pairs: rows.len(),
        violations,
        worst_margin: worst.map_or(f64::INFINITY, |r| r.margin),
        worst_pair: worst.map(|r| [r.x1, r.t1, r.x2, r.t2]),
        tighter_exceeds_factor,
        tol,
        rows,
    })
}
