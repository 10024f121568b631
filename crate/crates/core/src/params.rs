//! Parameter-function triples (α, φ, γ) and their admissibility conditions.
//!
//! A triple is admissible on a time window when
//!
//! * α > 1, φ > 0, γ > 0,
//! * (2φ/n − 2αK) − (2φ/n − α′)/α ≥ 0, 2φ/n − α′ > 0, φ²/n + αφ′ ≥ 0,
//! * γ′/γ − (2φ/n − α′)/α ≤ 0,
//! * γ is non-decreasing and α is non-decreasing or uniformly bounded,
//!
//! and the boundedness ratio (γα⁴/(α−1) or γ/(α−1)) stays finite.
//! [`check_conditions`] samples all of these on a log-spaced grid.

use std::fmt;
use std::io::{self, Write};
use std::sync::Arc;

use serde::Serialize;

use crate::error::{LabError, Result};
use crate::report::fmt_f64;

/// Below this time the boundedness ratios are replaced by their t → 0⁺ limits.
pub const NEAR_ZERO_T: f64 = 1e-12;
/// Default absolute tolerance on condition margins.
pub const DEFAULT_CONDITION_TOL: f64 = 1e-9;

/// Limit of γα⁴/(α−1) for the Li-Xu family as t → 0⁺.
pub const LI_XU_RATIO_AT_ZERO: f64 = 1.5;
/// Limit of γα⁴/(α−1) for the Li-Xu family as t → ∞.
pub const LI_XU_RATIO_AT_INFINITY: f64 = 16.0;
/// Uniform bound on the Li-Xu α(t).
pub const LI_XU_ALPHA_BOUND: f64 = 2.0;

// Below this value of Kt the Li-Xu α−1 and α′ come from their Taylor series.
const LI_XU_SERIES_CUTOFF: f64 = 0.1;

pub type TimeFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// User-supplied triple with explicit derivatives.
#[derive(Clone)]
pub struct CustomFunctions {
    pub alpha: TimeFn,
    pub phi: TimeFn,
    pub gamma: TimeFn,
    pub d_alpha: TimeFn,
    pub d_phi: TimeFn,
    pub d_gamma: TimeFn,
    /// Known uniform bound on α, if any.
    pub alpha_bound: Option<f64>,
    /// Upper end of the valid time domain (the lower end is always 0, open).
    pub t_upper: f64,
}

impl fmt::Debug for CustomFunctions {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomFunctions")
            .field("alpha_bound", &self.alpha_bound)
            .field("t_upper", &self.t_upper)
            .finish_non_exhaustive()
    }
}

#[derive(Clone, Debug)]
pub enum Family {
    /// α constant, φ = αn/t + nKα²/(α−1), γ = t^θ.
    LiYau { alpha: f64, theta: f64 },
    /// α = e^{2Kt}, φ = (n/t)e^{4Kt}, γ = t e^{2Kt}, valid for 0 < Kt ≤ 1.
    Hamilton,
    /// α = 1 + (sinh cosh − Kt)/sinh², φ = 2nK(1 + coth), γ = tanh, all at Kt.
    LiXu,
    /// α = 1 + 2Kt, φ = n/t + nK(1 + 2Kt + μKt), γ = Kt.
    LinearLiXu { mu: f64 },
    Custom(CustomFunctions),
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::LiYau { .. } => "li_yau",
            Family::Hamilton => "hamilton",
            Family::LiXu => "li_xu",
            Family::LinearLiXu { .. } => "linear_li_xu",
            Family::Custom(_) => "custom",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RatioKind {
    /// γα⁴/(α−1)
    GammaAlpha4,
    /// γ/(α−1)
    GammaPlain,
}

/// α, φ, γ and their first time derivatives at one instant.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamValues {
    pub alpha: f64,
    pub phi: f64,
    pub gamma: f64,
    pub d_alpha: f64,
    pub d_phi: f64,
    pub d_gamma: f64,
}

#[derive(Clone, Debug)]
pub struct ParamTriple {
    family: Family,
    k: f64,
    n: usize,
}

impl ParamTriple {
    pub fn li_yau(alpha: f64, theta: f64, k: f64, n: usize) -> Result<Self> {
        if !(alpha > 1.0 && alpha.is_finite()) {
            return Err(LabError::InvalidParameter(format!(
                "Li-Yau alpha must be a finite value > 1, got {alpha}"
            )));
        }
        if !(theta > 0.0 && theta.is_finite()) {
            return Err(LabError::InvalidParameter(format!(
                "Li-Yau theta must be positive, got {theta}"
            )));
        }
        Self::build(Family::LiYau { alpha, theta }, k, n, false)
    }

    pub fn hamilton(k: f64, n: usize) -> Result<Self> {
        Self::build(Family::Hamilton, k, n, true)
    }

    pub fn li_xu(k: f64, n: usize) -> Result<Self> {
        Self::build(Family::LiXu, k, n, true)
    }

    pub fn linear_li_xu(mu: f64, k: f64, n: usize) -> Result<Self> {
        if !mu.is_finite() {
            return Err(LabError::InvalidParameter(format!("mu must be finite, got {mu}")));
        }
        Self::build(Family::LinearLiXu { mu }, k, n, true)
    }

    pub fn custom(functions: CustomFunctions, k: f64, n: usize) -> Result<Self> {
        if !(functions.t_upper > 0.0) {
            return Err(LabError::InvalidParameter(
                "custom triple needs a positive upper time bound".into(),
            ));
        }
        Self::build(Family::Custom(functions), k, n, false)
    }

    fn build(family: Family, k: f64, n: usize, needs_positive_k: bool) -> Result<Self> {
        if n == 0 {
            return Err(LabError::InvalidParameter("dimension n must be >= 1".into()));
        }
        if !(k >= 0.0 && k.is_finite()) {
            return Err(LabError::InvalidParameter(format!(
                "curvature bound K must be finite and >= 0, got {k}"
            )));
        }
        if needs_positive_k && k == 0.0 {
            return Err(LabError::InvalidParameter(format!(
                "the {} family degenerates at K = 0 (alpha = 1)",
                family.name()
            )));
        }
        Ok(Self { family, k, n })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Same family and parameters, instantiated against another curvature bound.
    pub fn with_k(&self, k: f64) -> Result<Self> {
        let needs_positive = matches!(
            self.family,
            Family::Hamilton | Family::LiXu | Family::LinearLiXu { .. }
        );
        Self::build(self.family.clone(), k, self.n, needs_positive)
    }

    /// Supremum of the valid time domain; the domain is (0, t_upper].
    pub fn t_upper(&self) -> f64 {
        match &self.family {
            Family::Hamilton => 1.0 / self.k,
            Family::Custom(c) => c.t_upper,
            _ => f64::INFINITY,
        }
    }

    pub fn ratio_kind(&self) -> RatioKind {
        match self.family {
            Family::LiXu => RatioKind::GammaAlpha4,
            _ => RatioKind::GammaPlain,
        }
    }

    /// Known uniform bound on α(t) over the whole domain, if the family has one.
    pub fn alpha_bound(&self) -> Option<f64> {
        match &self.family {
            Family::LiYau { alpha, .. } => Some(*alpha),
            Family::LiXu => Some(LI_XU_ALPHA_BOUND),
            Family::Custom(c) => c.alpha_bound,
            _ => None,
        }
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        let upper = self.t_upper();
        let within = if upper.is_finite() {
            // Kt = 1 is inclusive for Hamilton; allow rounding in 1/K.
            t > 0.0 && t <= upper * (1.0 + 4.0 * f64::EPSILON)
        } else {
            t > 0.0 && t.is_finite()
        };
        if within {
            Ok(())
        } else {
            Err(LabError::domain(
                self.family.name(),
                t,
                format!("(0, {upper}]"),
            ))
        }
    }

    pub fn eval(&self, t: f64) -> Result<ParamValues> {
        self.check_domain(t)?;
        let n = self.n as f64;
        let k = self.k;
        let v = match &self.family {
            Family::LiYau { alpha, theta } => {
                let a = *alpha;
                ParamValues {
                    alpha: a,
                    phi: a * n / t + n * k * a * a / (a - 1.0),
                    gamma: t.powf(*theta),
                    d_alpha: 0.0,
                    d_phi: -a * n / (t * t),
                    d_gamma: theta * t.powf(theta - 1.0),
                }
            }
            Family::Hamilton => {
                let e2 = (2.0 * k * t).exp();
                let e4 = e2 * e2;
                ParamValues {
                    alpha: e2,
                    phi: n / t * e4,
                    gamma: t * e2,
                    d_alpha: 2.0 * k * e2,
                    d_phi: n * e4 * (4.0 * k / t - 1.0 / (t * t)),
                    d_gamma: e2 * (1.0 + 2.0 * k * t),
                }
            }
            Family::LiXu => {
                let x = k * t;
                let (coth, csch2) = coth_csch2(x);
                if !coth.is_finite() || !csch2.is_finite() {
                    return Err(LabError::Numeric(format!(
                        "sinh(Kt) vanishes at Kt = {x}"
                    )));
                }
                let cosh = x.cosh();
                ParamValues {
                    alpha: 1.0 + li_xu_alpha_minus_one(x),
                    phi: 2.0 * n * k * (1.0 + coth),
                    gamma: x.tanh(),
                    d_alpha: k * li_xu_alpha_slope(x),
                    d_phi: -2.0 * n * k * k * csch2,
                    d_gamma: k / (cosh * cosh),
                }
            }
            Family::LinearLiXu { mu } => ParamValues {
                alpha: 1.0 + 2.0 * k * t,
                phi: n / t + n * k * (1.0 + 2.0 * k * t + mu * k * t),
                gamma: k * t,
                d_alpha: 2.0 * k,
                d_phi: -n / (t * t) + n * k * k * (2.0 + mu),
                d_gamma: k,
            },
            Family::Custom(c) => ParamValues {
                alpha: (c.alpha)(t),
                phi: (c.phi)(t),
                gamma: (c.gamma)(t),
                d_alpha: (c.d_alpha)(t),
                d_phi: (c.d_phi)(t),
                d_gamma: (c.d_gamma)(t),
            },
        };
        Ok(v)
    }

    /// α(t) − 1 without the cancellation of forming α first.
    pub fn alpha_minus_one(&self, t: f64) -> Result<f64> {
        self.check_domain(t)?;
        Ok(match &self.family {
            Family::LiYau { alpha, .. } => alpha - 1.0,
            Family::Hamilton => (2.0 * self.k * t).exp_m1(),
            Family::LiXu => li_xu_alpha_minus_one(self.k * t),
            Family::LinearLiXu { .. } => 2.0 * self.k * t,
            Family::Custom(c) => (c.alpha)(t) - 1.0,
        })
    }

    /// φ²/n + αφ′, with the leading 1/t² cancellation removed analytically
    /// for the families where φ ~ c/t.
    fn phi_margin(&self, t: f64, v: &ParamValues) -> f64 {
        let n = self.n as f64;
        let k = self.k;
        match &self.family {
            Family::LiYau { alpha, .. } => {
                let b = n * k * alpha * alpha / (alpha - 1.0);
                2.0 * alpha * b / t + b * b / n
            }
            Family::Hamilton => {
                let e2 = (2.0 * k * t).exp();
                n * e2 * e2 * e2 * ((2.0 * k * t).exp_m1() / (t * t) + 4.0 * k / t)
            }
            Family::LinearLiXu { mu } => {
                let b = n * k * (1.0 + (2.0 + mu) * k * t);
                (2.0 + mu) * n * k * k * (2.0 + v.alpha) + b * b / n
            }
            _ => v.phi * v.phi / n + v.alpha * v.d_phi,
        }
    }

    /// The family's boundedness ratio at `t` (see [`ParamTriple::ratio_kind`]).
    pub fn boundedness_ratio(&self, t: f64) -> Result<f64> {
        self.check_domain(t)?;
        if t < NEAR_ZERO_T {
            match self.family {
                Family::Hamilton => return Ok(1.0 / (2.0 * self.k)),
                Family::LiXu => return Ok(LI_XU_RATIO_AT_ZERO),
                _ => {}
            }
        }
        let v = self.eval(t)?;
        let am1 = self.alpha_minus_one(t)?;
        Ok(match self.ratio_kind() {
            RatioKind::GammaAlpha4 => v.gamma * v.alpha.powi(4) / am1,
            RatioKind::GammaPlain => v.gamma / am1,
        })
    }
}

/// coth x and csch² x for x > 0, stable for both small and large x.
fn coth_csch2(x: f64) -> (f64, f64) {
    let e = (-2.0 * x).exp();
    let one_minus_e = -(-2.0 * x).exp_m1();
    ((1.0 + e) / one_minus_e, 4.0 * e / (one_minus_e * one_minus_e))
}

/// coth x − x csch² x, the Li-Xu α − 1 at x = Kt.
fn li_xu_alpha_minus_one(x: f64) -> f64 {
    if x < LI_XU_SERIES_CUTOFF {
        let x2 = x * x;
        x * (2.0 / 3.0
            + x2 * (-4.0 / 45.0
                + x2 * (4.0 / 315.0
                    + x2 * (-8.0 / 4725.0 + x2 * (4.0 / 18711.0 - x2 * 5528.0 / 212837625.0)))))
    } else {
        let (coth, csch2) = coth_csch2(x);
        coth - x * csch2
    }
}

/// d/dx of [coth x − x csch² x] = csch² x (2x coth x − 2).
fn li_xu_alpha_slope(x: f64) -> f64 {
    if x < LI_XU_SERIES_CUTOFF {
        let x2 = x * x;
        2.0 / 3.0
            + x2 * (-4.0 / 15.0
                + x2 * (4.0 / 63.0
                    + x2 * (-8.0 / 675.0 + x2 * (4.0 / 2079.0 - x2 * 5528.0 / 19348875.0))))
    } else {
        let (coth, csch2) = coth_csch2(x);
        csch2 * (2.0 * x * coth - 2.0)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct Boundedness {
    pub ratio_kind: RatioKind,
    pub sup_value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MonotoneCheck {
    pub gamma_non_decreasing: bool,
    pub alpha_non_decreasing_or_bounded: bool,
}

/// Sampled admissibility check of one triple over a time window.
#[derive(Clone, Debug, Serialize)]
pub struct ConditionReport {
    pub grid: Vec<f64>,
    /// Per sample: first, second and third inequality of the α/φ system.
    pub c2_margins: Vec<[f64; 3]>,
    pub c3_margin: Vec<f64>,
    pub boundedness: Boundedness,
    pub monotone_ok: MonotoneCheck,
    pub pass: bool,
    /// Boundedness ratio per sample (CSV column only).
    #[serde(skip)]
    pub ratio: Vec<f64>,
    /// α > 1, φ > 0, γ > 0 on every sample; folded into `pass`.
    #[serde(skip)]
    pub positivity_ok: bool,
}

impl ConditionReport {
    /// Smallest value of each of the three α/φ margins.
    pub fn worst_c2(&self) -> [f64; 3] {
        let mut worst = [f64::INFINITY; 3];
        for m in &self.c2_margins {
            for (w, v) in worst.iter_mut().zip(m) {
                *w = w.min(*v);
            }
        }
        worst
    }

    pub fn worst_c3(&self) -> f64 {
        self.c3_margin.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// First grid time at which any margin drops below `-tol`.
    pub fn first_failure(&self, tol: f64) -> Option<f64> {
        self.grid
            .iter()
            .zip(self.c2_margins.iter().zip(&self.c3_margin))
            .find(|(_, (m, c3))| m.iter().any(|v| !(*v >= -tol)) || !(**c3 >= -tol))
            .map(|(t, _)| *t)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,m1,m2,m3,c3,ratio")?;
        for (i, t) in self.grid.iter().enumerate() {
            let [m1, m2, m3] = self.c2_margins[i];
            writeln!(
                w,
                "{},{},{},{},{},{}",
                fmt_f64(*t),
                fmt_f64(m1),
                fmt_f64(m2),
                fmt_f64(m3),
                fmt_f64(self.c3_margin[i]),
                fmt_f64(self.ratio[i])
            )?;
        }
        Ok(())
    }
}

/// `samples` log-spaced times covering `[t_lo, t_hi]` inclusive.
pub fn geometric_grid(t_lo: f64, t_hi: f64, samples: usize) -> Result<Vec<f64>> {
    if samples < 2 {
        return Err(LabError::InvalidParameter(format!(
            "need at least 2 samples, got {samples}"
        )));
    }
    if !(t_lo > 0.0 && t_hi > t_lo && t_hi.is_finite()) {
        return Err(LabError::InvalidParameter(format!(
            "time window [{t_lo}, {t_hi}] must satisfy 0 < lo < hi < inf"
        )));
    }
    let log_ratio = (t_hi / t_lo).ln();
    let last = (samples - 1) as f64;
    let mut grid: Vec<f64> = (0..samples)
        .map(|i| t_lo * (log_ratio * i as f64 / last).exp())
        .collect();
    grid[0] = t_lo;
    grid[samples - 1] = t_hi;
    Ok(grid)
}

/// Samples every admissibility inequality of `triple` on a geometric grid.
pub fn check_conditions(
    triple: &ParamTriple,
    t_range: (f64, f64),
    samples: usize,
    tol: f64,
) -> Result<ConditionReport> {
    if !(tol >= 0.0) {
        return Err(LabError::InvalidParameter(format!("tol must be >= 0, got {tol}")));
    }
    let grid = geometric_grid(t_range.0, t_range.1, samples)?;
    let n = triple.n() as f64;
    let k = triple.k();

    let mut c2_margins = Vec::with_capacity(samples);
    let mut c3_margin = Vec::with_capacity(samples);
    let mut ratio = Vec::with_capacity(samples);
    let mut alphas = Vec::with_capacity(samples);
    let mut gammas = Vec::with_capacity(samples);
    let mut positivity_ok = true;

    for &t in &grid {
        let v = triple.eval(t)?;
        let am1 = triple.alpha_minus_one(t)?;
        positivity_ok &= am1 > 0.0 && v.phi > 0.0 && v.gamma > 0.0;

        let drive = 2.0 * v.phi / n - v.d_alpha;
        let m1 = (2.0 * v.phi / n - 2.0 * v.alpha * k) - drive / v.alpha;
        let m3 = triple.phi_margin(t, &v);
        c2_margins.push([m1, drive, m3]);
        c3_margin.push(-(v.d_gamma / v.gamma - drive / v.alpha));
        ratio.push(triple.boundedness_ratio(t)?);
        alphas.push(v.alpha);
        gammas.push(v.gamma);
    }

    let non_decreasing = |xs: &[f64]| {
        xs.windows(2)
            .all(|w| w[1] - w[0] >= -tol * w[0].abs().max(1.0))
    };
    let gamma_non_decreasing = non_decreasing(&gammas);
    let alpha_bounded = triple.alpha_bound().is_some_and(|bound| {
        alphas.iter().all(|a| *a <= bound + tol)
    });
    let alpha_ok = non_decreasing(&alphas) || alpha_bounded;

    let sup_value = ratio.iter().copied().fold(f64::NEG_INFINITY, |a, b| {
        if b.is_nan() {
            f64::NAN
        } else {
            a.max(b)
        }
    });

    let margins_ok = c2_margins
        .iter()
        .flatten()
        .chain(c3_margin.iter())
        .all(|m| *m >= -tol);

    let pass = margins_ok
        && sup_value.is_finite()
        && gamma_non_decreasing
        && alpha_ok
        && positivity_ok;

    Ok(ConditionReport {
        grid,
        c2_margins,
        c3_margin,
        boundedness: Boundedness {
            ratio_kind: triple.ratio_kind(),
            sup_value,
        },
        monotone_ok: MonotoneCheck {
            gamma_non_decreasing,
            alpha_non_decreasing_or_bounded: alpha_ok,
        },
        pass,
        ratio,
        positivity_ok,
    })
}

/// Bisects a pass/fail predicate on a scalar parameter.
///
/// `passes(lo)` and `passes(hi)` must differ. Returns the final bracket,
/// ordered as (failing side, passing side) in parameter value order.
pub fn bracket_threshold<F>(mut lo: f64, mut hi: f64, iterations: usize, passes: F) -> Result<(f64, f64)>
where
    F: Fn(f64) -> Result<bool>,
{
    let at_lo = passes(lo)?;
    let at_hi = passes(hi)?;
    if at_lo == at_hi {
        return Err(LabError::InvalidParameter(format!(
            "predicate has the same outcome ({at_lo}) at both ends of [{lo}, {hi}]"
        )));
    }
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        if passes(mid)? == at_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, hi))
}
