//! Method-of-lines solver for
//!
//! * u_t = Δu + h(x) u^l   (power source),
//! * u_t = Δu + a u log u  (log source),
//! * u_t = Δu              (heat),
//!
//! on a [`ModelGeometry`] whose Laplacian is taken in the metric at the current time.
//! Time stepping is explicit midpoint RK2 behind a CFL check. Positivity is never
//! repaired: a non-positive stage value aborts the run.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::geometry::{ModelGeometry, SpatialGrid};
use crate::report::fmt_f64;

/// Runs stop with [`LabError::BlowUp`] once max u exceeds this.
pub const BLOW_UP_LIMIT: f64 = 1e12;

/// Spatial profile of the power-source coefficient h.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceProfile {
    Constant { value: f64 },
    /// mean + amplitude · cos(wavenumber · x) in the grid coordinate.
    Cosine {
        mean: f64,
        amplitude: f64,
        wavenumber: f64,
    },
}

impl SourceProfile {
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            SourceProfile::Constant { value } => value,
            SourceProfile::Cosine {
                mean,
                amplitude,
                wavenumber,
            } => mean + amplitude * (wavenumber * x).cos(),
        }
    }

    pub fn is_spatially_constant(&self) -> bool {
        match *self {
            SourceProfile::Constant { .. } => true,
            SourceProfile::Cosine {
                amplitude,
                wavenumber,
                ..
            } => amplitude == 0.0 || wavenumber == 0.0,
        }
    }

    pub fn sample(&self, grid: &SpatialGrid) -> Vec<f64> {
        grid.points().iter().map(|x| self.eval(*x)).collect()
    }
}

/// Hypothesis constants of a power source: δ₁ ≥ max h, |∇h|² ≤ δ₂h, Δh ≥ −δ₃.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Deltas {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
}

impl Deltas {
    pub fn new(d1: f64, d2: f64, d3: f64) -> Self {
        Self { d1, d2, d3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Source {
    None,
    Power {
        l: f64,
        h: SourceProfile,
        deltas: Deltas,
    },
    Log {
        a: f64,
    },
}

impl Source {
    pub fn name(&self) -> &'static str {
        match self {
            Source::None => "heat",
            Source::Power { .. } => "power",
            Source::Log { .. } => "log",
        }
    }

    /// Reaction term of the equation at coordinate `x` and value `u`.
    #[inline]
    fn reaction(&self, x: f64, u: f64) -> f64 {
        match *self {
            Source::None => 0.0,
            Source::Power { l, h, .. } => h.eval(x) * pow(u, l),
            Source::Log { a } => a * u * u.ln(),
        }
    }

    /// Reaction term divided by u, written in terms of f = log u where useful.
    #[inline]
    fn reaction_over_u(&self, x: f64, u: f64) -> f64 {
        match *self {
            Source::None => 0.0,
            Source::Power { l, h, .. } => h.eval(x) * pow(u, l - 1.0),
            Source::Log { a } => a * u.ln(),
        }
    }
}

#[inline]
fn pow(u: f64, l: f64) -> f64 {
    if l == 0.0 {
        1.0
    } else if l == 1.0 {
        u
    } else if l == 2.0 {
        u * u
    } else {
        u.powf(l)
    }
}

/// Worst margins of the power-source hypotheses over all nodes and times.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SourceReport {
    /// min h (h ≥ 0 required).
    pub nonnegative_margin: f64,
    /// min(δ₂h − |∇h|²).
    pub gradient_margin: f64,
    /// min(Δh + δ₃).
    pub laplacian_margin: f64,
    /// δ₁ − max h.
    pub delta1_margin: f64,
    pub pass: bool,
}

/// Checks h ≥ 0, |∇h|² ≤ δ₂h, Δh ≥ −δ₃ and δ₁ ≥ max h numerically on the grid.
pub fn validate_source(
    geo: &ModelGeometry,
    grid: &SpatialGrid,
    source: &Source,
    times: &[f64],
    tol: f64,
) -> Result<SourceReport> {
    let Source::Power { h, deltas, .. } = source else {
        return Err(LabError::InvalidParameter(format!(
            "source validation applies to power sources, got {}",
            source.name()
        )));
    };
    let values = h.sample(grid);
    let min_h = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max_h = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut gradient_margin = f64::INFINITY;
    let mut laplacian_margin = f64::INFINITY;
    for &t in times {
        let grad_sq = geo.gradient_sq(grid, &values, t)?;
        let lap = geo.laplacian_apply(grid, &values, t)?;
        for i in 0..values.len() {
            gradient_margin = gradient_margin.min(deltas.d2 * values[i] - grad_sq[i]);
            laplacian_margin = laplacian_margin.min(lap[i] + deltas.d3);
        }
    }
    let delta1_margin = deltas.d1 - max_h;
    let pass = [min_h, gradient_margin, laplacian_margin, delta1_margin]
        .iter()
        .all(|m| *m >= -tol);
    Ok(SourceReport {
        nonnegative_margin: min_h,
        gradient_margin,
        laplacian_margin,
        delta1_margin,
        pass,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveParams {
    pub t_end: f64,
    pub dt: f64,
    /// Store every `save_every`-th step (the initial and final slices are always stored).
    pub save_every: usize,
}

impl SolveParams {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self {
            t_end,
            dt,
            save_every: 1,
        }
    }

    pub fn save_every(mut self, every: usize) -> Self {
        self.save_every = every;
        self
    }
}

/// Positive space-time solution on a uniform set of stored time slices.
#[derive(Clone, Debug)]
pub struct SolutionField {
    geometry: ModelGeometry,
    grid: SpatialGrid,
    times: Vec<f64>,
    /// Row-major time × space.
    values: Vec<f64>,
    source: Source,
    step: f64,
}

impl SolutionField {
    /// Assembles a field from raw parts, checking sizes and positivity.
    pub fn from_parts(
        geometry: ModelGeometry,
        grid: SpatialGrid,
        times: Vec<f64>,
        values: Vec<f64>,
        source: Source,
        step: f64,
    ) -> Result<Self> {
        if times.is_empty() || values.len() != times.len() * grid.len() {
            return Err(LabError::SizeMismatch {
                expected: times.len() * grid.len(),
                got: values.len(),
            });
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(LabError::InvalidParameter("times must be increasing".into()));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !(**v > 0.0)) {
            let m = grid.len();
            return Err(LabError::PositivityLost {
                horizon: times[i / m],
                node: i % m,
                value: *v,
            });
        }
        Ok(Self {
            geometry,
            grid,
            times,
            values,
            source,
            step,
        })
    }

    pub fn geometry(&self) -> &ModelGeometry {
        &self.geometry
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn source(&self) -> &Source {
        &self.source
    }

    /// Integrator step used to produce the field.
    pub fn step(&self) -> f64 {
        self.step
    }

    /// Spacing between stored slices.
    pub fn slice_spacing(&self) -> f64 {
        if self.times.len() < 2 {
            0.0
        } else {
            self.times[1] - self.times[0]
        }
    }

    pub fn n_times(&self) -> usize {
        self.times.len()
    }

    pub fn n_space(&self) -> usize {
        self.grid.len()
    }

    pub fn slice(&self, ti: usize) -> &[f64] {
        let m = self.grid.len();
        &self.values[ti * m..(ti + 1) * m]
    }

    pub fn value(&self, ti: usize, xi: usize) -> f64 {
        self.values[ti * self.grid.len() + xi]
    }

    pub fn last(&self) -> &[f64] {
        self.slice(self.times.len() - 1)
    }

    /// c·u, which solves the same equation when the source is absent or h ≡ 0.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return Err(LabError::InvalidParameter(format!("scale must be positive, got {c}")));
        }
        let mut out = self.clone();
        for v in &mut out.values {
            *v *= c;
        }
        Ok(out)
    }

    /// CSV with columns t, x, u.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "t,x,u")?;
        for (ti, t) in self.times.iter().enumerate() {
            let t = fmt_f64(*t);
            for (xi, x) in self.grid.points().iter().enumerate() {
                writeln!(w, "{},{},{}", t, fmt_f64(*x), fmt_f64(self.value(ti, xi)))?;
            }
        }
        Ok(())
    }

    /// Little-endian dump: u64 time count, u64 node count, f64 step, then the
    /// times, the node coordinates and the values (row-major time × space).
    pub fn write_binary<W: Write>(&self, mut w: W) -> io::Result<()> {
        w.write_all(&(self.times.len() as u64).to_le_bytes())?;
        w.write_all(&(self.grid.len() as u64).to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        for v in self
            .times
            .iter()
            .chain(self.grid.points())
            .chain(&self.values)
        {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    /// Rebuilds a field from a dump written by [`SolutionField::write_binary`].
    pub fn read_binary<R: Read>(
        mut r: R,
        geometry: ModelGeometry,
        grid: SpatialGrid,
        source: Source,
    ) -> Result<Self> {
        let io_err = |e: io::Error| LabError::InvalidParameter(format!("bad dump: {e}"));
        let mut word = [0u8; 8];
        let mut next_u64 = |r: &mut R| -> Result<u64> {
            r.read_exact(&mut word).map_err(io_err)?;
            Ok(u64::from_le_bytes(word))
        };
        let n_times = next_u64(&mut r)? as usize;
        let n_space = next_u64(&mut r)? as usize;
        let step = f64::from_bits(next_u64(&mut r)?);
        if n_space != grid.len() {
            return Err(LabError::SizeMismatch {
                expected: grid.len(),
                got: n_space,
            });
        }
        let mut read_f64s = |count: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; count * 8];
            r.read_exact(&mut buf).map_err(io_err)?;
            Ok(buf
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect())
        };
        let times = read_f64s(n_times)?;
        let points = read_f64s(n_space)?;
        if points
            .iter()
            .zip(grid.points())
            .any(|(a, b)| (a - b).abs() > 1e-12 * b.abs().max(1.0))
        {
            return Err(LabError::InvalidParameter(
                "dump node coordinates do not match the configured grid".into(),
            ));
        }
        let values = read_f64s(n_times * n_space)?;
        Self::from_parts(geometry, grid, times, values, source, step)
    }
}

/// Integrates the equation selected by `source` from `u0` up to `params.t_end`.
pub fn solve(
    geo: &ModelGeometry,
    grid: &SpatialGrid,
    u0: &[f64],
    source: &Source,
    params: &SolveParams,
) -> Result<SolutionField> {
    let m = grid.len();
    if u0.len() != m {
        return Err(LabError::SizeMismatch {
            expected: m,
            got: u0.len(),
        });
    }
    if let Some((node, v)) = u0.iter().enumerate().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
        return Err(LabError::PositivityLost {
            horizon: 0.0,
            node,
            value: *v,
        });
    }
    let SolveParams {
        t_end,
        dt,
        save_every,
    } = *params;
    if !(t_end > 0.0 && dt > 0.0) || save_every == 0 {
        return Err(LabError::InvalidParameter(format!(
            "need t_end > 0, dt > 0 and save_every >= 1 (got {t_end}, {dt}, {save_every})"
        )));
    }
    geo.metric_scale(t_end)?;
    let limit = geo.cfl_limit(grid, t_end)?;
    if dt > limit {
        return Err(LabError::StabilityViolated { dt, limit });
    }

    let chunks = (t_end / (dt * save_every as f64) - 1e-9).ceil().max(1.0) as usize;
    let n_steps = chunks * save_every;
    let step = t_end / n_steps as f64;

    let points = grid.points();
    let mut times = Vec::with_capacity(chunks + 1);
    let mut values = Vec::with_capacity((chunks + 1) * m);
    times.push(0.0);
    values.extend_from_slice(u0);

    let mut u = u0.to_vec();
    let mut mid = vec![0.0; m];
    let mut rate = vec![0.0; m];

    let rhs = |state: &[f64], t: f64, out: &mut [f64]| -> Result<()> {
        geo.laplacian_into(grid, state, t, out)?;
        if !matches!(source, Source::None) {
            for i in 0..m {
                out[i] += source.reaction(points[i], state[i]);
            }
        }
        Ok(())
    };
    let check = |state: &[f64], t: f64| -> Result<()> {
        let mut max = 0.0f64;
        for (node, v) in state.iter().enumerate() {
            if !(*v > 0.0) {
                return Err(LabError::PositivityLost {
                    horizon: t,
                    node,
                    value: *v,
                });
            }
            max = max.max(*v);
        }
        if max > BLOW_UP_LIMIT || !max.is_finite() {
            return Err(LabError::BlowUp {
                horizon: t,
                limit: BLOW_UP_LIMIT,
            });
        }
        Ok(())
    };

    for j in 0..n_steps {
        let t = j as f64 * step;
        rhs(&u, t, &mut rate)?;
        for i in 0..m {
            mid[i] = u[i] + 0.5 * step * rate[i];
        }
        check(&mid, t + 0.5 * step)?;
        rhs(&mid, t + 0.5 * step, &mut rate)?;
        for i in 0..m {
            u[i] += step * rate[i];
        }
        let t_next = if j + 1 == n_steps {
            t_end
        } else {
            (j + 1) as f64 * step
        };
        check(&u, t_next)?;
        if (j + 1) % save_every == 0 {
            times.push(t_next);
            values.extend_from_slice(&u);
        }
    }

    SolutionField::from_parts(*geo, grid.clone(), times, values, *source, step)
}

/// f = log u and its derivatives at one stored time slice.
#[derive(Clone, Debug, PartialEq)]
pub struct LogDerivatives {
    pub t: f64,
    pub f: Vec<f64>,
    pub grad_f_sq: Vec<f64>,
    pub f_t: Vec<f64>,
    pub laplacian_f: Vec<f64>,
}

fn check_interior(field: &SolutionField, ti: usize) -> Result<()> {
    let hi = field.n_times().saturating_sub(2);
    if ti < 1 || ti > hi {
        return Err(LabError::TimeIndex { index: ti, lo: 1, hi });
    }
    Ok(())
}

/// Metric-aware derivatives of f = log u at interior slice `ti` (central in time).
pub fn log_derivatives(field: &SolutionField, ti: usize) -> Result<LogDerivatives> {
    check_interior(field, ti)?;
    let geo = field.geometry();
    let grid = field.grid();
    let t = field.times()[ti];
    let f: Vec<f64> = field.slice(ti).iter().map(|u| u.ln()).collect();
    let span = field.times()[ti + 1] - field.times()[ti - 1];
    let f_t: Vec<f64> = field
        .slice(ti + 1)
        .iter()
        .zip(field.slice(ti - 1))
        .map(|(up, down)| (up.ln() - down.ln()) / span)
        .collect();
    let grad_f_sq = geo.gradient_sq(grid, &f, t)?;
    let laplacian_f = geo.laplacian_apply(grid, &f, t)?;
    Ok(LogDerivatives {
        t,
        f,
        grad_f_sq,
        f_t,
        laplacian_f,
    })
}

/// Pointwise f_t − Δf − |∇f|² − (reaction / u); zero for exact solutions.
pub fn equation_residual(field: &SolutionField, ti: usize) -> Result<Vec<f64>> {
    let d = log_derivatives(field, ti)?;
    let points = field.grid().points();
    let u = field.slice(ti);
    Ok((0..u.len())
        .map(|i| {
            d.f_t[i] - d.laplacian_f[i] - d.grad_f_sq[i]
                - field.source().reaction_over_u(points[i], u[i])
        })
        .collect())
}

/// h(x) u^{l−1}, a log u, or 0 at each node of slice `ti`.
pub fn reaction_over_u(field: &SolutionField, ti: usize) -> Vec<f64> {
    let points = field.grid().points();
    field
        .slice(ti)
        .iter()
        .zip(points)
        .map(|(u, x)| field.source().reaction_over_u(*x, *u))
        .collect()
}
