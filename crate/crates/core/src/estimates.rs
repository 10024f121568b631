//! Gradient-estimate checks on solver output.
//!
//! Every right-hand side is affine in the undetermined universal constant C, so a
//! bound is carried as [`Bound`] (`fixed + C · c_coeff`). That keeps verification
//! with a given C and fitting the smallest admissible C on the same code path.

use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::params::{check_conditions, ParamTriple, DEFAULT_CONDITION_TOL};
use crate::report::fmt_f64;
use crate::solver::{log_derivatives, reaction_over_u, validate_source, Deltas, SolutionField, Source};

pub const DEFAULT_MARGIN_TOL: f64 = 1e-8;
/// Tolerance on the first checked slice, where the time difference is least accurate.
pub const FIRST_SLICE_TOL: f64 = 1e-6;
const CONDITION_SAMPLES: usize = 2000;

/// Which boundedness hypothesis on γ the local display assumes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaCondition {
    /// γα⁴/(α−1) ≤ C₁
    C1Bound,
    /// γ/(α−1) ≤ C₂
    C2Bound,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Theorem {
    LocalPower { l: f64, gamma_condition: GammaCondition },
    GlobalPower { l: f64 },
    LocalLog { a: f64, gamma_condition: GammaCondition },
    GlobalLog { a: f64 },
    LocalHeat { gamma_condition: GammaCondition },
    GlobalHeat,
    ClosedManifold,
}

impl Theorem {
    pub fn name(&self) -> &'static str {
        match self {
            Theorem::LocalPower { .. } => "local_power",
            Theorem::GlobalPower { .. } => "global_power",
            Theorem::LocalLog { .. } => "local_log",
            Theorem::GlobalLog { .. } => "global_log",
            Theorem::LocalHeat { .. } => "local_heat",
            Theorem::GlobalHeat => "global_heat",
            Theorem::ClosedManifold => "closed_manifold",
        }
    }

    pub fn is_local(&self) -> bool {
        matches!(
            self,
            Theorem::LocalPower { .. } | Theorem::LocalLog { .. } | Theorem::LocalHeat { .. }
        )
    }

    fn gamma_condition(&self) -> Option<GammaCondition> {
        match *self {
            Theorem::LocalPower { gamma_condition, .. }
            | Theorem::LocalLog { gamma_condition, .. }
            | Theorem::LocalHeat { gamma_condition } => Some(gamma_condition),
            _ => None,
        }
    }
}

/// One theorem applied with one triple.
#[derive(Clone, Debug)]
pub struct EstimateInstance {
    pub theorem: Theorem,
    pub triple: ParamTriple,
    /// Ball radius R (local theorems only).
    pub radius: Option<f64>,
    /// The universal constant C.
    pub constant: f64,
    pub deltas: Deltas,
    /// max u^{l−1}; `None` means take it from the checked region.
    pub u_bar: Option<f64>,
}

impl EstimateInstance {
    pub fn new(theorem: Theorem, triple: ParamTriple) -> Self {
        Self {
            theorem,
            triple,
            radius: None,
            constant: 1.0,
            deltas: Deltas::default(),
            u_bar: None,
        }
    }

    pub fn radius(mut self, r: f64) -> Self {
        self.radius = Some(r);
        self
    }

    pub fn constant(mut self, c: f64) -> Self {
        self.constant = c;
        self
    }

    pub fn deltas(mut self, deltas: Deltas) -> Self {
        self.deltas = deltas;
        self
    }

    pub fn u_bar(mut self, u_bar: f64) -> Self {
        self.u_bar = Some(u_bar);
        self
    }

    fn k(&self) -> f64 {
        self.triple.k()
    }

    fn n(&self) -> f64 {
        self.triple.n() as f64
    }

    fn radius_checked(&self) -> Result<f64> {
        match self.radius {
            Some(r) if r > 0.0 => Ok(r),
            Some(r) => Err(LabError::InvalidParameter(format!("radius must be positive, got {r}"))),
            None => Err(LabError::InvalidParameter(format!(
                "{} needs a ball radius",
                self.theorem.name()
            ))),
        }
    }

    fn u_bar_or_zero(&self) -> f64 {
        self.u_bar.unwrap_or(0.0)
    }
}

/// A right-hand side written as `fixed + C · c_coeff`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bound {
    pub fixed: f64,
    pub c_coeff: f64,
}

impl Bound {
    pub fn value(&self, c: f64) -> f64 {
        self.fixed + c * self.c_coeff
    }
}

/// C-marked radius terms shared by the local displays: α²(1/R² + √K/R + extra + K).
fn radius_terms(alpha: f64, k: f64, r: f64, extra: f64) -> f64 {
    alpha * alpha * (1.0 / (r * r) + k.sqrt() / r + extra + k)
}

/// The γ-dependent C-marked term: n²/(R²γ) or n²α⁴/(R²γ).
fn gamma_term(n: f64, alpha: f64, gamma: f64, r: f64, with_alpha4: bool) -> f64 {
    let base = n * n / (r * r * gamma);
    if with_alpha4 {
        base * alpha.powi(4)
    } else {
        base
    }
}

/// Fixed part of the power displays beyond αφ and the curvature term.
fn power_source_terms(inst: &EstimateInstance, l: f64, alpha: f64, phi: f64) -> Result<f64> {
    let n = inst.n();
    let u = inst.u_bar_or_zero();
    let Deltas { d1, d2, d3 } = inst.deltas;
    if l <= 1.0 {
        Ok(alpha * (n * u * d3).sqrt()
            + n * alpha * alpha * u * d1
            + ((2.0 - l) / 2.0).sqrt() * alpha.powf(1.5) * (n * u * d2).sqrt())
    } else {
        Ok(n * alpha * alpha * (l - 1.0) * d1 * u
            + alpha * (n * (l * alpha - 1.0) * u * d2 / (l - 1.0)).sqrt()
            + alpha.powf(1.5) * (n * (l - 1.0) * d1 * phi).sqrt()
            + alpha.powf(1.5) * (n * d3 * u).sqrt())
    }
}

/// Local power-source bound at time `t`; the l ≤ 1 and l > 1 displays are chosen by `l`.
pub fn rhs_local_power(inst: &EstimateInstance, t: f64) -> Result<Bound> {
    let Theorem::LocalPower { l, .. } = inst.theorem else {
        return Err(mismatch("local_power", inst));
    };
    let v = inst.triple.eval(t)?;
    let (n, k, r) = (inst.n(), inst.k(), inst.radius_checked()?);
    // Both γ-conditions lead to the same display for the power source.
    let c_coeff = radius_terms(v.alpha, k, r, 0.0) + gamma_term(n, v.alpha, v.gamma, r, true);
    let fixed = n.powf(1.5) * v.alpha * v.alpha * k
        + power_source_terms(inst, l, v.alpha, v.phi)?
        + v.alpha * v.phi;
    Ok(Bound { fixed, c_coeff })
}

/// Global power-source bound (no radius terms).
pub fn rhs_global_power(inst: &EstimateInstance, t: f64) -> Result<Bound> {
    let Theorem::GlobalPower { l } = inst.theorem else {
        return Err(mismatch("global_power", inst));
    };
    let v = inst.triple.eval(t)?;
    let (a, k, phi) = (v.alpha, inst.k(), v.phi);
    let u = inst.u_bar_or_zero();
    let Deltas { d1, d2, d3 } = inst.deltas;
    let inner = if l <= 1.0 {
        a * k + (u * d3).sqrt() + a * u * d1 + ((2.0 - l) / 2.0).sqrt() * (u * d2).sqrt()
    } else {
        a * k
            + (l - 1.0) * a * u * d1
            + ((l * a - 1.0) * u * d2 / (l - 1.0)).sqrt()
            + a.sqrt() * ((l - 1.0) * d1 * phi).sqrt()
            + a.sqrt() * (u * d3).sqrt()
    };
    Ok(Bound {
        fixed: a * phi,
        c_coeff: a * inner,
    })
}

/// Local log-source bound; a ≤ 0 and a > 0 use their own displays.
pub fn rhs_local_log(inst: &EstimateInstance, t: f64) -> Result<Bound> {
    let Theorem::LocalLog { a, gamma_condition } = inst.theorem else {
        return Err(mismatch("local_log", inst));
    };
    let v = inst.triple.eval(t)?;
    let (n, k, r) = (inst.n(), inst.k(), inst.radius_checked()?);
    let alpha4 = gamma_condition == GammaCondition::C2Bound;
    let g = gamma_term(n, v.alpha, v.gamma, r, alpha4);
    let curvature = n.powf(1.5) * v.alpha * v.alpha * k;
    if a <= 0.0 {
        Ok(Bound {
            fixed: curvature + n * a.abs() * v.alpha * v.alpha + v.alpha * v.phi,
            c_coeff: radius_terms(v.alpha, k, r, 0.0) + g,
        })
    } else {
        Ok(Bound {
            fixed: curvature + v.alpha * v.phi,
            c_coeff: radius_terms(v.alpha, k, r, a) + g,
        })
    }
}

/// Cα²(K + |a|) + αφ.
pub fn rhs_global_log(inst: &EstimateInstance, t: f64) -> Result<Bound> {
    let Theorem::GlobalLog { a } = inst.theorem else {
        return Err(mismatch("global_log", inst));
    };
    let v = inst.triple.eval(t)?;
    Ok(Bound {
        fixed: v.alpha * v.phi,
        c_coeff: v.alpha * v.alpha * (inst.k() + a.abs()),
    })
}

/// Heat-equation bounds, local or global.
pub fn rhs_heat(inst: &EstimateInstance, t: f64) -> Result<Bound> {
    let v = inst.triple.eval(t)?;
    let k = inst.k();
    match inst.theorem {
        Theorem::LocalHeat { gamma_condition } => {
            let (n, r) = (inst.n(), inst.radius_checked()?);
            let alpha4 = gamma_condition == GammaCondition::C2Bound;
            Ok(Bound {
                fixed: v.alpha * v.phi,
                c_coeff: radius_terms(v.alpha, k, r, 0.0) + gamma_term(n, v.alpha, v.gamma, r, alpha4),
            })
        }
        Theorem::GlobalHeat => Ok(Bound {
            fixed: v.alpha * v.phi,
            c_coeff: v.alpha * v.alpha * k,
        }),
        _ => Err(mismatch("local_heat or global_heat", inst)),
    }
}

/// The bound matching the instance's theorem.
pub fn rhs_bound(inst: &EstimateInstance, t: f64) -> Result<Bound> {
    match inst.theorem {
        Theorem::LocalPower { .. } => rhs_local_power(inst, t),
        Theorem::GlobalPower { .. } => rhs_global_power(inst, t),
        Theorem::LocalLog { .. } => rhs_local_log(inst, t),
        Theorem::GlobalLog { .. } => rhs_global_log(inst, t),
        Theorem::LocalHeat { .. } | Theorem::GlobalHeat => rhs_heat(inst, t),
        Theorem::ClosedManifold => Err(LabError::InvalidParameter(
            "the closed-manifold bound is per node, use closed_manifold_bound".into(),
        )),
    }
}

pub fn rhs(inst: &EstimateInstance, t: f64) -> Result<f64> {
    Ok(rhs_bound(inst, t)?.value(inst.constant))
}

fn mismatch(expected: &str, inst: &EstimateInstance) -> LabError {
    LabError::InvalidParameter(format!(
        "expected a {expected} instance, got {}",
        inst.theorem.name()
    ))
}

/// |∇u|²/u² − α u_t/u plus α h u^{l−1} or α a log u, per node of slice `ti`.
pub fn lhs_quantity(field: &SolutionField, triple: &ParamTriple, ti: usize) -> Result<Vec<f64>> {
    let d = log_derivatives(field, ti)?;
    let alpha = triple.eval(d.t)?.alpha;
    let reaction = reaction_over_u(field, ti);
    Ok((0..d.f.len())
        .map(|i| d.grad_f_sq[i] - alpha * d.f_t[i] + alpha * reaction[i])
        .collect())
}

/// Space-time window to check.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub t_min: f64,
    pub t_max: f64,
    /// Ball centre x₀ in grid coordinates; defaults to the first node.
    pub anchor: Option<f64>,
}

impl Region {
    pub fn new(t_min: f64, t_max: f64) -> Self {
        Self {
            t_min,
            t_max,
            anchor: None,
        }
    }

    pub fn anchor(mut self, x0: f64) -> Self {
        self.anchor = Some(x0);
        self
    }

    /// Every stored time.
    pub fn everything() -> Self {
        Self::new(0.0, f64::INFINITY)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionSummary {
    pub t_min: f64,
    pub t_max: f64,
    pub slices: usize,
    pub nodes: usize,
    pub anchor: Option<f64>,
    pub radius: Option<f64>,
}

struct Selection {
    slices: Vec<usize>,
    nodes: Vec<usize>,
    summary: RegionSummary,
}

fn select(field: &SolutionField, region: &Region, radius: Option<f64>, interior: bool) -> Result<Selection> {
    let times = field.times();
    let cutoff = 2.0 * field.slice_spacing();
    let last = if interior {
        times.len().saturating_sub(2)
    } else {
        times.len().saturating_sub(1)
    };
    let slices: Vec<usize> = (1..=last)
        .filter(|&ti| {
            let t = times[ti];
            t >= cutoff * (1.0 - 1e-12) && t >= region.t_min - 1e-12 && t <= region.t_max + 1e-12
        })
        .collect();
    if slices.is_empty() {
        return Err(LabError::InvalidParameter(format!(
            "no stored slice in [{}, {}] past t = {cutoff}",
            region.t_min, region.t_max
        )));
    }
    let grid = field.grid();
    let anchor = radius.map(|_| region.anchor.unwrap_or(grid.points()[0]));
    let nodes: Vec<usize> = match (radius, anchor) {
        (Some(r), Some(x0)) => {
            let t_anchor = times[*slices.last().expect("non-empty")];
            let mut keep = Vec::new();
            for (i, x) in grid.points().iter().enumerate() {
                if field.geometry().distance(*x, x0, t_anchor)? <= r {
                    keep.push(i);
                }
            }
            keep
        }
        _ => (0..grid.len()).collect(),
    };
    if nodes.is_empty() {
        return Err(LabError::InvalidParameter("the ball contains no grid node".into()));
    }
    let summary = RegionSummary {
        t_min: times[slices[0]],
        t_max: times[*slices.last().expect("non-empty")],
        slices: slices.len(),
        nodes: nodes.len(),
        anchor,
        radius,
    };
    Ok(Selection {
        slices,
        nodes,
        summary,
    })
}

/// Pointwise comparison of one bound over a region.
#[derive(Clone, Debug, Serialize)]
pub struct EstimateReport {
    pub theorem: String,
    #[serde(skip)]
    pub t: Vec<f64>,
    #[serde(skip)]
    pub x: Vec<f64>,
    #[serde(skip)]
    pub lhs: Vec<f64>,
    #[serde(skip)]
    pub rhs: Vec<f64>,
    #[serde(skip)]
    pub margin: Vec<f64>,
    pub violations: usize,
    pub worst_margin: f64,
    pub worst_t: f64,
    pub worst_x: f64,
    pub region: RegionSummary,
    /// C used for the right-hand side (absent for constant-free bounds).
    pub constant: Option<f64>,
    pub u_bar: Option<f64>,
    pub tol: f64,
}

impl EstimateReport {
    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    /// CSV with columns t, x, lhs, rhs, margin.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,x,lhs,rhs,margin")?;
        for i in 0..self.lhs.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt_f64(self.t[i]),
                fmt_f64(self.x[i]),
                fmt_f64(self.lhs[i]),
                fmt_f64(self.rhs[i]),
                fmt_f64(self.margin[i])
            )?;
        }
        Ok(())
    }

    /// Smallest margin among nodes whose slice lies in [t_lo, t_hi].
    pub fn worst_margin_between(&self, t_lo: f64, t_hi: f64) -> Option<f64> {
        self.margin
            .iter()
            .zip(&self.t)
            .filter(|(_, t)| **t >= t_lo && **t <= t_hi)
            .map(|(m, _)| *m)
            .reduce(f64::min)
    }
}

struct Rows {
    t: Vec<f64>,
    x: Vec<f64>,
    lhs: Vec<f64>,
    rhs: Vec<f64>,
    tols: Vec<f64>,
}

fn finish(theorem: &str, rows: Rows, summary: RegionSummary, constant: Option<f64>, u_bar: Option<f64>, tol: f64) -> EstimateReport {
    let margin: Vec<f64> = rows.rhs.iter().zip(&rows.lhs).map(|(r, l)| r - l).collect();
    let violations = margin
        .iter()
        .zip(&rows.tols)
        .filter(|(m, tol)| !(**m >= -**tol))
        .count();
    let (worst_idx, worst_margin) = margin
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |(bi, bm), (i, m)| {
            if m < bm || m.is_nan() {
                (i, m)
            } else {
                (bi, bm)
            }
        });
    EstimateReport {
        theorem: theorem.to_string(),
        worst_t: rows.t[worst_idx],
        worst_x: rows.x[worst_idx],
        t: rows.t,
        x: rows.x,
        lhs: rows.lhs,
        rhs: rows.rhs,
        margin,
        violations,
        worst_margin,
        region: summary,
        constant,
        u_bar,
        tol,
    }
}

/// Left sides and affine right sides over a region, before C is applied.
pub struct Assembly {
    pub t: Vec<f64>,
    pub x: Vec<f64>,
    pub lhs: Vec<f64>,
    pub bounds: Vec<Bound>,
    pub u_bar: Option<f64>,
    summary: RegionSummary,
    first_slice_len: usize,
}

fn power_exponent(theorem: &Theorem) -> Option<f64> {
    match *theorem {
        Theorem::LocalPower { l, .. } | Theorem::GlobalPower { l } => Some(l),
        _ => None,
    }
}

/// Checks every hypothesis the theorem places on the triple, the curvature bound
/// and the source, over the times of `sel`.
fn check_hypotheses(field: &SolutionField, inst: &EstimateInstance, sel: &Selection) -> Result<()> {
    let (t_lo, t_hi) = (sel.summary.t_min, sel.summary.t_max);
    let report = check_conditions(&inst.triple, (t_lo, t_hi), CONDITION_SAMPLES, DEFAULT_CONDITION_TOL)?;
    if !report.pass {
        let at = report.first_failure(DEFAULT_CONDITION_TOL);
        return Err(LabError::Hypothesis(format!(
            "{} triple is not admissible on [{t_lo}, {t_hi}] (first failure at t = {at:?})",
            inst.triple.family().name()
        )));
    }
    if let Some(cond) = inst.theorem.gamma_condition() {
        for &ti in &sel.slices {
            let t = field.times()[ti];
            let v = inst.triple.eval(t)?;
            let am1 = inst.triple.alpha_minus_one(t)?;
            let ratio = match cond {
                GammaCondition::C1Bound => v.gamma * v.alpha.powi(4) / am1,
                GammaCondition::C2Bound => v.gamma / am1,
            };
            if !ratio.is_finite() {
                return Err(LabError::Hypothesis(format!("γ-condition {cond:?} unbounded at t = {t}")));
            }
        }
    }
    let ricci = field.geometry().ricci_bound(t_hi)?;
    if inst.k() < ricci * (1.0 - 1e-12) {
        return Err(LabError::Hypothesis(format!(
            "curvature bound K = {} is below sup |Ric| = {ricci} on the region",
            inst.k()
        )));
    }
    let source = field.source();
    match (inst.theorem, source) {
        (Theorem::LocalHeat { .. } | Theorem::GlobalHeat, Source::None) => Ok(()),
        (Theorem::LocalLog { a, .. } | Theorem::GlobalLog { a }, Source::Log { a: field_a }) => {
            if a == *field_a {
                Ok(())
            } else {
                Err(LabError::Hypothesis(format!(
                    "theorem has a = {a} but the field was solved with a = {field_a}"
                )))
            }
        }
        (Theorem::LocalPower { l, .. } | Theorem::GlobalPower { l }, Source::Power { l: field_l, .. }) => {
            if l != *field_l {
                return Err(LabError::Hypothesis(format!(
                    "theorem has l = {l} but the field was solved with l = {field_l}"
                )));
            }
            let with_deltas = match *source {
                Source::Power { l, h, .. } => Source::Power {
                    l,
                    h,
                    deltas: inst.deltas,
                },
                _ => unreachable!(),
            };
            let times: Vec<f64> = sel.slices.iter().map(|&ti| field.times()[ti]).collect();
            let check = validate_source(field.geometry(), field.grid(), &with_deltas, &times, DEFAULT_CONDITION_TOL)?;
            if check.pass {
                Ok(())
            } else {
                Err(LabError::Hypothesis(format!(
                    "source hypotheses fail: min h {}, δ₂h − |∇h|² {}, Δh + δ₃ {}, δ₁ − max h {}",
                    check.nonnegative_margin, check.gradient_margin, check.laplacian_margin, check.delta1_margin
                )))
            }
        }
        (theorem, source) => Err(LabError::Hypothesis(format!(
            "{} does not apply to a field with a {} source",
            theorem.name(),
            source.name()
        ))),
    }
}

/// Evaluates left sides and bounds over the region after checking hypotheses.
pub fn assemble(field: &SolutionField, inst: &EstimateInstance, region: &Region) -> Result<Assembly> {
    if inst.theorem == Theorem::ClosedManifold {
        return Err(LabError::InvalidParameter(
            "the closed-manifold bound has no constant, use closed_manifold_bound".into(),
        ));
    }
    let radius = if inst.theorem.is_local() {
        Some(inst.radius_checked()?)
    } else {
        None
    };
    let sel = select(field, region, radius, true)?;
    check_hypotheses(field, inst, &sel)?;

    let mut inst = inst.clone();
    if let Some(l) = power_exponent(&inst.theorem) {
        let mut realized = f64::NEG_INFINITY;
        for &ti in &sel.slices {
            let slice = field.slice(ti);
            for &i in &sel.nodes {
                realized = realized.max(slice[i].powf(l - 1.0));
            }
        }
        match inst.u_bar {
            Some(given) if given < realized * (1.0 - 1e-12) => {
                return Err(LabError::Hypothesis(format!(
                    "supplied ū = {given} is below the realized max u^(l−1) = {realized}"
                )));
            }
            Some(_) => {}
            None => inst.u_bar = Some(realized),
        }
    }

    let points = field.grid().points();
    let capacity = sel.slices.len() * sel.nodes.len();
    let mut out = Assembly {
        t: Vec::with_capacity(capacity),
        x: Vec::with_capacity(capacity),
        lhs: Vec::with_capacity(capacity),
        bounds: Vec::with_capacity(capacity),
        u_bar: inst.u_bar,
        summary: sel.summary.clone(),
        first_slice_len: sel.nodes.len(),
    };
    for &ti in &sel.slices {
        let t = field.times()[ti];
        let lhs = lhs_quantity(field, &inst.triple, ti)?;
        let bound = rhs_bound(&inst, t)?;
        for &i in &sel.nodes {
            out.t.push(t);
            out.x.push(points[i]);
            out.lhs.push(lhs[i]);
            out.bounds.push(bound);
        }
    }
    Ok(out)
}

fn slice_tols(n: usize, first: usize, tol: f64) -> Vec<f64> {
    (0..n).map(|i| if i < first { tol.max(FIRST_SLICE_TOL) } else { tol }).collect()
}

/// Checks the instance's bound with its C over the region.
pub fn verify(field: &SolutionField, inst: &EstimateInstance, region: &Region, tol: f64) -> Result<EstimateReport> {
    let asm = assemble(field, inst, region)?;
    let rhs: Vec<f64> = asm.bounds.iter().map(|b| b.value(inst.constant)).collect();
    let tols = slice_tols(rhs.len(), asm.first_slice_len, tol);
    Ok(finish(
        inst.theorem.name(),
        Rows {
            t: asm.t,
            x: asm.x,
            lhs: asm.lhs,
            rhs,
            tols,
        },
        asm.summary,
        Some(inst.constant),
        asm.u_bar,
        tol,
    ))
}

/// Smallest C ≥ 0 with every margin non-negative on the region.
///
/// The bound is affine in C, so this is max over nodes of (lhs − fixed)/c_coeff.
pub fn fit_constant(field: &SolutionField, inst: &EstimateInstance, region: &Region) -> Result<f64> {
    let asm = assemble(field, inst, region)?;
    fit_affine(&asm.lhs, &asm.bounds)
}

/// Closed-form fit of C for given left sides and affine bounds.
pub fn fit_affine(lhs: &[f64], bounds: &[Bound]) -> Result<f64> {
    if !bounds.iter().any(|b| b.c_coeff > 0.0) {
        return Err(LabError::InvalidParameter(
            "no node has a positive C coefficient".into(),
        ));
    }
    let mut c = 0.0f64;
    for (l, b) in lhs.iter().zip(bounds) {
        let excess = l - b.fixed;
        if excess <= 0.0 {
            continue;
        }
        if b.c_coeff > 0.0 {
            c = c.max(excess / b.c_coeff);
        } else {
            return Err(LabError::Infeasible(format!(
                "the C-free part is exceeded by {excess} where the C coefficient vanishes"
            )));
        }
    }
    Ok(c)
}

/// How the closed-manifold theorem's exponent is read against the solved equation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExponentConvention {
    /// The theorem's l is the solver's exponent: u_t = Δu + h u^l, l ≥ 1.
    SourcePower,
    /// The theorem's equation is u_t = Δu + h u^{l−1}, so the solver exponent is l − 1 ≥ 0.
    ShiftedPower,
}

fn closed_manifold_hypotheses(source: &Source, convention: ExponentConvention) -> Result<()> {
    match *source {
        Source::None => Ok(()),
        Source::Power { l, h, .. } => {
            if !h.is_spatially_constant() {
                return Err(LabError::Hypothesis("h must be spatially constant".into()));
            }
            if h.eval(0.0) > 0.0 {
                return Err(LabError::Hypothesis(format!("h must be <= 0, got {}", h.eval(0.0))));
            }
            let theorem_l = match convention {
                ExponentConvention::SourcePower => l,
                ExponentConvention::ShiftedPower => l + 1.0,
            };
            if theorem_l < 1.0 {
                return Err(LabError::Hypothesis(format!(
                    "needs l >= 1, the solver exponent {l} gives l = {theorem_l} under {convention:?}"
                )));
            }
            Ok(())
        }
        Source::Log { .. } => Err(LabError::Hypothesis(
            "the closed-manifold bound does not cover the log source".into(),
        )),
    }
}

/// |∇u|² ≤ (max u(·,0)² − u²)/(2t) at every node of the region.
pub fn closed_manifold_bound(
    field: &SolutionField,
    convention: ExponentConvention,
    region: &Region,
    tol: f64,
) -> Result<EstimateReport> {
    closed_manifold_hypotheses(field.source(), convention)?;
    let sel = select(field, region, None, false)?;
    let geo = field.geometry();
    let grid = field.grid();
    let max0_sq = field.slice(0).iter().map(|u| u * u).fold(0.0, f64::max);
    let capacity = sel.slices.len() * sel.nodes.len();
    let mut rows = Rows {
        t: Vec::with_capacity(capacity),
        x: Vec::with_capacity(capacity),
        lhs: Vec::with_capacity(capacity),
        rhs: Vec::with_capacity(capacity),
        tols: Vec::new(),
    };
    for &ti in &sel.slices {
        let t = field.times()[ti];
        let u = field.slice(ti);
        let grad_sq = geo.gradient_sq(grid, u, t)?;
        for &i in &sel.nodes {
            rows.t.push(t);
            rows.x.push(grid.points()[i]);
            rows.lhs.push(grad_sq[i]);
            rows.rhs.push((max0_sq - u[i] * u[i]) / (2.0 * t));
        }
    }
    rows.tols = vec![tol; rows.lhs.len()];
    Ok(finish("closed_manifold", rows, sel.summary, None, None, tol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ModelGeometry;
    use crate::solver::{solve, SolveParams, SourceProfile};
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    fn li_yau(alpha: f64, k: f64, n: usize) -> ParamTriple {
        ParamTriple::li_yau(alpha, 1.0, k, n).unwrap()
    }

    fn alpha_phi(triple: &ParamTriple, t: f64) -> f64 {
        let v = triple.eval(t).unwrap();
        v.alpha * v.phi
    }

    #[test]
    fn local_power_l1_hand_value() {
        let inst = EstimateInstance::new(
            Theorem::LocalPower {
                l: 1.0,
                gamma_condition: GammaCondition::C1Bound,
            },
            li_yau(2.0, 0.0, 1),
        )
        .radius(10.0)
        .u_bar(1.0);
        // 0.04 + 16/100 + αφ with αφ = 2 · 2/1.
        assert_relative_eq!(rhs(&inst, 1.0).unwrap(), 4.20, epsilon = 1e-12);
    }

    #[test]
    fn local_power_reduces_to_alpha_phi() {
        for l in [0.5, 1.0, 2.0] {
            let inst = EstimateInstance::new(
                Theorem::LocalPower {
                    l,
                    gamma_condition: GammaCondition::C2Bound,
                },
                li_yau(2.0, 0.0, 2),
            )
            .radius(1e9)
            .u_bar(3.0);
            let t = 0.7;
            assert_relative_eq!(rhs(&inst, t).unwrap(), alpha_phi(&inst.triple, t), max_relative = 1e-12);
        }
    }

    #[test]
    fn square_root_prefactor_term() {
        let inst = EstimateInstance::new(
            Theorem::LocalPower {
                l: 0.5,
                gamma_condition: GammaCondition::C1Bound,
            },
            li_yau(2.0, 0.0, 1),
        )
        .radius(1e12)
        .u_bar(1.0)
        .deltas(Deltas::new(0.0, 2.0, 0.0));
        let b = rhs_local_power(&inst, 1.0).unwrap();
        assert_relative_eq!(b.fixed - alpha_phi(&inst.triple, 1.0), 3.4641016151377544, epsilon = 1e-12);
    }

    #[test]
    fn global_power_hand_values() {
        let triple = li_yau(2.0, 1.0, 1);
        let low = EstimateInstance::new(Theorem::GlobalPower { l: 0.0 }, triple.clone())
            .u_bar(1.0)
            .deltas(Deltas::new(1.0, 1.0, 1.0));
        let b = rhs_global_power(&low, 1.0).unwrap();
        assert_relative_eq!(b.value(1.0) - alpha_phi(&triple, 1.0), 12.0, epsilon = 1e-12);

        let flat = li_yau(2.0, 0.0, 1);
        let high = EstimateInstance::new(Theorem::GlobalPower { l: 2.0 }, flat.clone())
            .u_bar(1.0)
            .deltas(Deltas::new(0.0, 1.0, 0.0));
        let b = rhs_global_power(&high, 1.0).unwrap();
        assert_relative_eq!(b.value(1.0) - alpha_phi(&flat, 1.0), 2.0 * 3f64.sqrt(), epsilon = 1e-12);

        let zero = EstimateInstance::new(Theorem::GlobalPower { l: 0.3 }, flat.clone()).u_bar(2.0);
        assert_eq!(rhs(&zero, 0.4).unwrap(), alpha_phi(&flat, 0.4));
    }

    #[test]
    fn log_hand_values() {
        let global = EstimateInstance::new(Theorem::GlobalLog { a: -1.0 }, li_yau(2.0, 1.0, 1));
        assert_relative_eq!(rhs(&global, 1.0).unwrap() - alpha_phi(&global.triple, 1.0), 8.0, epsilon = 1e-12);

        let local = EstimateInstance::new(
            Theorem::LocalLog {
                a: 1.0,
                gamma_condition: GammaCondition::C1Bound,
            },
            li_yau(2.0, 0.0, 1),
        )
        .radius(10.0);
        // γ = t = 1
        assert_relative_eq!(rhs(&local, 1.0).unwrap() - alpha_phi(&local.triple, 1.0), 4.05, epsilon = 1e-12);

        for a in [0.0, -0.0] {
            let inst = EstimateInstance::new(
                Theorem::LocalLog {
                    a,
                    gamma_condition: GammaCondition::C2Bound,
                },
                li_yau(2.0, 0.0, 3),
            )
            .radius(1e9);
            assert_relative_eq!(rhs(&inst, 0.3).unwrap(), alpha_phi(&inst.triple, 0.3), max_relative = 1e-12);
        }
    }

    #[test]
    fn heat_hand_values() {
        let global = EstimateInstance::new(Theorem::GlobalHeat, li_yau(3.0, 2.0, 1));
        let t = 0.5;
        let phi = global.triple.eval(t).unwrap().phi;
        assert_relative_eq!(rhs(&global, t).unwrap(), 18.0 + 3.0 * phi, epsilon = 1e-12);
        let flat = EstimateInstance::new(Theorem::GlobalHeat, li_yau(3.0, 0.0, 1));
        assert_eq!(rhs(&flat, t).unwrap(), alpha_phi(&flat.triple, t));

        let local = EstimateInstance::new(
            Theorem::LocalHeat {
                gamma_condition: GammaCondition::C1Bound,
            },
            li_yau(2.0, 0.0, 1),
        )
        .radius(10.0);
        assert_relative_eq!(rhs(&local, 1.0).unwrap() - alpha_phi(&local.triple, 1.0), 0.05, epsilon = 1e-12);
    }

    #[test]
    fn wrong_theorem_is_rejected() {
        let inst = EstimateInstance::new(Theorem::GlobalHeat, li_yau(2.0, 0.0, 1));
        assert!(rhs_local_power(&inst, 1.0).is_err());
        assert!(rhs_global_log(&inst, 1.0).is_err());
        let local = EstimateInstance::new(
            Theorem::LocalHeat {
                gamma_condition: GammaCondition::C1Bound,
            },
            li_yau(2.0, 0.0, 1),
        );
        assert!(rhs(&local, 1.0).is_err());
        let closed = EstimateInstance::new(Theorem::ClosedManifold, li_yau(2.0, 0.0, 1));
        assert!(rhs(&closed, 1.0).is_err());
    }

    #[test]
    fn bounds_are_monotone_in_every_input() {
        let theorems = [
            Theorem::LocalPower { l: 0.5, gamma_condition: GammaCondition::C1Bound },
            Theorem::LocalPower { l: 2.0, gamma_condition: GammaCondition::C2Bound },
            Theorem::GlobalPower { l: 0.5 },
            Theorem::GlobalPower { l: 2.5 },
            Theorem::LocalLog { a: -0.5, gamma_condition: GammaCondition::C1Bound },
            Theorem::LocalLog { a: 0.5, gamma_condition: GammaCondition::C2Bound },
            Theorem::GlobalLog { a: 0.7 },
            Theorem::LocalHeat { gamma_condition: GammaCondition::C1Bound },
            Theorem::GlobalHeat,
        ];
        let base = |th: Theorem, c: f64, k: f64, d: Deltas, u: f64| {
            EstimateInstance::new(th, li_yau(2.0, k, 2))
                .radius(3.0)
                .constant(c)
                .deltas(d)
                .u_bar(u)
        };
        let d0 = Deltas::new(0.5, 0.4, 0.3);
        for th in theorems {
            for &t in &[0.05, 0.5, 2.0] {
                let r0 = rhs(&base(th, 1.0, 0.5, d0, 0.8), t).unwrap();
                let bumps = [
                    base(th, 1.1, 0.5, d0, 0.8),
                    base(th, 1.0, 0.55, d0, 0.8),
                    base(th, 1.0, 0.5, Deltas::new(0.55, 0.4, 0.3), 0.8),
                    base(th, 1.0, 0.5, Deltas::new(0.5, 0.44, 0.3), 0.8),
                    base(th, 1.0, 0.5, Deltas::new(0.5, 0.4, 0.33), 0.8),
                    base(th, 1.0, 0.5, d0, 0.88),
                ];
                for (j, b) in bumps.iter().enumerate() {
                    let r1 = rhs(b, t).unwrap();
                    assert!(r1 >= r0 - 1e-12 * r0.abs(), "{} bump {j} t={t}: {r1} < {r0}", th.name());
                }
            }
        }
    }

    fn torus_heat(m: usize, t_end: f64) -> SolutionField {
        let geo = ModelGeometry::flat_torus(1, 2.0 * PI).unwrap();
        let grid = geo.grid(m).unwrap();
        let u0: Vec<f64> = grid.points().iter().map(|x| 1.0 + 0.5 * x.cos()).collect();
        let dt = geo.cfl_limit(&grid, t_end).unwrap();
        solve(&geo, &grid, &u0, &Source::None, &SolveParams::new(t_end, dt).save_every(4)).unwrap()
    }

    #[test]
    fn lhs_matches_spectral_oracle() {
        let field = torus_heat(256, 1.2);
        let triple = li_yau(2.0, 0.0, 1);
        let ti = field.times().iter().position(|t| (*t - 1.0).abs() < 0.5 * field.slice_spacing()).unwrap();
        let t = field.times()[ti];
        let lhs = lhs_quantity(&field, &triple, ti).unwrap();
        let e = 0.5 * (-t).exp();
        assert_relative_eq!(lhs[0], 2.0 * e / (1.0 + e), epsilon = 1e-4);
        if (t - 1.0).abs() < 1e-9 {
            assert_relative_eq!(lhs[0], 0.31071, epsilon = 1e-4);
        }
    }

    #[test]
    fn global_heat_on_torus_is_constant_free() {
        let field = torus_heat(128, 1.0);
        let inst = EstimateInstance::new(Theorem::GlobalHeat, li_yau(2.0, 0.0, 1));
        let report = verify(&field, &inst, &Region::new(0.05, 1.0), DEFAULT_MARGIN_TOL).unwrap();
        assert_eq!(report.violations, 0);
        for (r, t) in report.rhs.iter().zip(&report.t) {
            assert_eq!(*r, 4.0 / t);
        }
        assert!(report.t.iter().all(|t| *t >= 2.0 * field.slice_spacing()));
    }

    #[test]
    fn inadmissible_triple_is_rejected_before_checking() {
        // The μ = 0.1 margin turns negative between t = 1 and t = 2.
        let field = torus_heat(32, 3.0);
        let triple = ParamTriple::linear_li_xu(0.1, 1.0, 1).unwrap();
        let inst = EstimateInstance::new(Theorem::GlobalHeat, triple);
        assert!(verify(&field, &inst, &Region::new(0.0, 0.9), 1e-8).is_ok());
        assert!(matches!(
            verify(&field, &inst, &Region::new(0.0, 3.0), 1e-8),
            Err(LabError::Hypothesis(_))
        ));
    }

    #[test]
    fn curvature_and_source_mismatch_are_hypothesis_errors() {
        let sphere = ModelGeometry::shrinking_sphere(2).unwrap();
        let grid = sphere.grid(32).unwrap();
        let dt = sphere.cfl_limit(&grid, 0.1).unwrap();
        let field = solve(&sphere, &grid, &vec![1.0; 32], &Source::None, &SolveParams::new(0.1, dt)).unwrap();
        let low_k = EstimateInstance::new(Theorem::GlobalHeat, li_yau(2.0, 0.5, 2));
        assert!(matches!(verify(&field, &low_k, &Region::everything(), 1e-8), Err(LabError::Hypothesis(_))));
        let wrong = EstimateInstance::new(Theorem::GlobalLog { a: 1.0 }, li_yau(2.0, 2.0, 2));
        assert!(matches!(verify(&field, &wrong, &Region::everything(), 1e-8), Err(LabError::Hypothesis(_))));
    }

    #[test]
    fn power_hypotheses_use_instance_deltas() {
        let geo = ModelGeometry::flat_torus(1, 2.0 * PI).unwrap();
        let grid = geo.grid(64).unwrap();
        let source = Source::Power {
            l: 0.5,
            h: SourceProfile::Cosine { mean: 2.0, amplitude: 1.0, wavenumber: 1.0 },
            deltas: Deltas::new(3.0, 1.0, 1.0),
        };
        let dt = geo.cfl_limit(&grid, 0.3).unwrap();
        let u0: Vec<f64> = grid.points().iter().map(|x| 1.0 + 0.3 * x.sin()).collect();
        let field = solve(&geo, &grid, &u0, &source, &SolveParams::new(0.3, dt)).unwrap();
        let th = Theorem::GlobalPower { l: 0.5 };
        let good = EstimateInstance::new(th, li_yau(2.0, 0.0, 1)).deltas(Deltas::new(3.0, 1.0, 1.0));
        let report = verify(&field, &good, &Region::everything(), 1e-8).unwrap();
        assert!(report.u_bar.unwrap() > 1.0);
        let bad = EstimateInstance::new(th, li_yau(2.0, 0.0, 1)).deltas(Deltas::new(3.0, 0.1, 1.0));
        assert!(matches!(verify(&field, &bad, &Region::everything(), 1e-8), Err(LabError::Hypothesis(_))));
        let low_u = good.clone().u_bar(0.5);
        assert!(matches!(verify(&field, &low_u, &Region::everything(), 1e-8), Err(LabError::Hypothesis(_))));
    }

    #[test]
    fn local_region_is_a_ball() {
        let field = torus_heat(64, 0.5);
        let inst = EstimateInstance::new(
            Theorem::LocalHeat {
                gamma_condition: GammaCondition::C2Bound,
            },
            li_yau(2.0, 0.0, 1),
        )
        .radius(1.0);
        let report = verify(&field, &inst, &Region::everything().anchor(PI), 1e-8).unwrap();
        assert!(report.x.iter().all(|x| (x - PI).abs() <= 1.0));
        assert_eq!(report.region.nodes, 21);
        assert_eq!(report.violations, 0);
    }

    #[test]
    fn affine_fit_examples() {
        let b = [Bound { fixed: 3.0, c_coeff: 2.0 }];
        assert_eq!(fit_affine(&[5.0], &b).unwrap(), 1.0);
        assert_eq!(fit_affine(&[2.0], &b).unwrap(), 0.0);
        let zero = [Bound { fixed: 3.0, c_coeff: 0.0 }, Bound { fixed: 0.0, c_coeff: 1.0 }];
        assert!(matches!(fit_affine(&[5.0, 0.0], &zero), Err(LabError::Infeasible(_))));
        assert!(fit_affine(&[1.0], &zero[..1]).is_err());
    }

    #[test]
    fn affine_fit_matches_bisection() {
        let lhs = [1.0, 4.0, 9.0, -2.0, 7.5];
        let bounds = [
            Bound { fixed: 2.0, c_coeff: 0.5 },
            Bound { fixed: 1.0, c_coeff: 1.5 },
            Bound { fixed: 3.0, c_coeff: 4.0 },
            Bound { fixed: 0.0, c_coeff: 0.0 },
            Bound { fixed: 7.0, c_coeff: 0.1 },
        ];
        let ok = |c: f64| lhs.iter().zip(&bounds).all(|(l, b)| b.value(c) >= *l);
        let (mut lo, mut hi) = (0.0, 100.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        assert_relative_eq!(fit_affine(&lhs, &bounds).unwrap(), hi, max_relative = 1e-12);
    }

    #[test]
    fn closed_manifold_on_torus_heat() {
        let field = torus_heat(128, 1.0);
        let report = closed_manifold_bound(&field, ExponentConvention::SourcePower, &Region::new(0.1, 1.0), 1e-8).unwrap();
        assert_eq!(report.violations, 0);
        assert!(report.constant.is_none());
        // x = π/2 has lhs 0.25 e^{−2t} and rhs 1.25/(2t).
        let grid = field.grid();
        let xi = grid.nearest(PI / 2.0);
        let x = grid.points()[xi];
        assert!((x - PI / 2.0).abs() < 1e-12);
        for ((t, xx), (l, r)) in report.t.iter().zip(&report.x).zip(report.lhs.iter().zip(&report.rhs)) {
            if *xx == x {
                assert_relative_eq!(*l, 0.25 * (-2.0 * t).exp(), epsilon = 1e-3);
                assert_relative_eq!(*r, 1.25 / (2.0 * t), epsilon = 1e-3);
            }
        }
    }

    #[test]
    fn closed_manifold_scales_quadratically() {
        let field = torus_heat(64, 0.5);
        let scaled = field.scaled(2.0).unwrap();
        let region = Region::new(0.1, 0.5);
        let a = closed_manifold_bound(&field, ExponentConvention::SourcePower, &region, 1e-8).unwrap();
        let b = closed_manifold_bound(&scaled, ExponentConvention::SourcePower, &region, 1e-8).unwrap();
        for (m1, m2) in a.margin.iter().zip(&b.margin) {
            assert_relative_eq!(*m2, 4.0 * m1, max_relative = 1e-9, epsilon = 1e-14);
        }
        let triple = li_yau(2.0, 0.0, 1);
        for ti in 2..5 {
            let l1 = lhs_quantity(&field, &triple, ti).unwrap();
            let l2 = lhs_quantity(&scaled, &triple, ti).unwrap();
            for (p, q) in l1.iter().zip(&l2) {
                assert_relative_eq!(*p, *q, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn closed_manifold_hypotheses() {
        let geo = ModelGeometry::flat_torus(1, 2.0 * PI).unwrap();
        let grid = geo.grid(16).unwrap();
        let constant = |l: f64, h: f64| Source::Power {
            l,
            h: SourceProfile::Constant { value: h },
            deltas: Deltas::default(),
        };
        let run = |s: Source| solve(&geo, &grid, &[1.0; 16], &s, &SolveParams::new(0.2, 1e-3)).unwrap();
        let region = Region::everything();
        let conv = ExponentConvention::SourcePower;
        assert!(closed_manifold_bound(&run(constant(2.0, -1.0)), conv, &region, 1e-8).is_ok());
        assert!(matches!(
            closed_manifold_bound(&run(constant(2.0, 0.5)), conv, &region, 1e-8),
            Err(LabError::Hypothesis(_))
        ));
        let half = run(constant(0.5, -1.0));
        assert!(closed_manifold_bound(&half, conv, &region, 1e-8).is_err());
        assert!(closed_manifold_bound(&half, ExponentConvention::ShiftedPower, &region, 1e-8).is_ok());
        let varying = Source::Power {
            l: 1.0,
            h: SourceProfile::Cosine { mean: -2.0, amplitude: 1.0, wavenumber: 1.0 },
            deltas: Deltas::default(),
        };
        assert!(closed_manifold_bound(&run(varying), conv, &region, 1e-8).is_err());
        let report = closed_manifold_bound(&run(constant(1.0, -1.0)), conv, &region, 1e-8).unwrap();
        assert!(report.lhs.iter().all(|l| *l == 0.0));
    }

    #[test]
    fn csv_and_json_shapes() {
        let field = torus_heat(64, 0.2);
        let inst = EstimateInstance::new(Theorem::GlobalHeat, li_yau(2.0, 0.0, 1));
        let report = verify(&field, &inst, &Region::everything(), 1e-8).unwrap();
        let mut csv = Vec::new();
        report.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("t,x,lhs,rhs,margin\n"));
        assert_eq!(text.lines().count(), 1 + report.lhs.len());
        let json = serde_json::to_value(&report).unwrap();
        for key in ["theorem", "violations", "worst_margin", "region", "constant"] {
            assert!(json.get(key).is_some(), "{key}");
        }
    }
}
