//! Model manifolds with closed-form Ricci flow.
//!
//! * Flat torus: Ric ≡ 0, so the metric is a fixed point of the flow and K = 0.
//!   Data depend on one periodic coordinate x ∈ [0, side).
//! * Round sphere Sⁿ: g(t) = s(t) g₀ with s(t) = 1 − 2(n−1)t, so |Ric| = (n−1)/s(t)
//!   in the evolving metric. Data are rotationally symmetric, functions of the
//!   colatitude θ ∈ (0, π), and the Laplace–Beltrami operator reduces to
//!   (1/s)[u_θθ + (n−1) cot θ u_θ].

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Fraction of the sphere's extinction time used as the default horizon.
pub const SPHERE_DEFAULT_HORIZON_FRACTION: f64 = 0.8;
/// Explicit stability factor: dt ≤ CFL_FACTOR · (metric spacing)².
pub const CFL_FACTOR: f64 = 0.4;
pub const MIN_GRID_POINTS: usize = 8;

// Slack on the horizon check so accumulated step times equal to T_max are accepted.
const HORIZON_SLACK: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeometryKind {
    FlatTorus { n: usize, side: f64 },
    ShrinkingSphere { n: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ModelGeometry {
    kind: GeometryKind,
    t_max: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    Periodic,
    /// Open interval between two poles with mirrored ghost values.
    PoleToPole,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpatialGrid {
    points: Vec<f64>,
    spacing: f64,
    topology: Topology,
}

impl SpatialGrid {
    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    /// Index of the grid point nearest to coordinate `x`.
    pub fn nearest(&self, x: f64) -> usize {
        let mut best = 0;
        let mut best_d = f64::INFINITY;
        for (i, p) in self.points.iter().enumerate() {
            let d = (p - x).abs();
            if d < best_d {
                best = i;
                best_d = d;
            }
        }
        best
    }
}

impl ModelGeometry {
    pub fn flat_torus(n: usize, side: f64) -> Result<Self> {
        if n == 0 {
            return Err(LabError::InvalidParameter("torus dimension must be >= 1".into()));
        }
        if !(side > 0.0 && side.is_finite()) {
            return Err(LabError::InvalidParameter(format!(
                "torus side must be positive, got {side}"
            )));
        }
        Ok(Self {
            kind: GeometryKind::FlatTorus { n, side },
            t_max: f64::INFINITY,
        })
    }

    pub fn shrinking_sphere(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(LabError::InvalidParameter(format!(
                "sphere dimension must be >= 2, got {n}"
            )));
        }
        Ok(Self {
            kind: GeometryKind::ShrinkingSphere { n },
            t_max: SPHERE_DEFAULT_HORIZON_FRACTION * extinction_time(n),
        })
    }

    pub fn from_kind(kind: GeometryKind) -> Result<Self> {
        match kind {
            GeometryKind::FlatTorus { n, side } => Self::flat_torus(n, side),
            GeometryKind::ShrinkingSphere { n } => Self::shrinking_sphere(n),
        }
    }

    /// Overrides the latest admissible time.
    pub fn with_t_max(mut self, t_max: f64) -> Result<Self> {
        if !(t_max > 0.0) {
            return Err(LabError::InvalidParameter(format!(
                "T_max must be positive, got {t_max}"
            )));
        }
        if let GeometryKind::ShrinkingSphere { n } = self.kind {
            let extinction = extinction_time(n);
            if t_max >= extinction {
                return Err(LabError::InvalidParameter(format!(
                    "T_max = {t_max} reaches the extinction time {extinction}"
                )));
            }
        }
        self.t_max = t_max;
        Ok(self)
    }

    pub fn kind(&self) -> GeometryKind {
        self.kind
    }

    pub fn dimension(&self) -> usize {
        match self.kind {
            GeometryKind::FlatTorus { n, .. } | GeometryKind::ShrinkingSphere { n } => n,
        }
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            GeometryKind::FlatTorus { .. } => "flat_torus",
            GeometryKind::ShrinkingSphere { .. } => "shrinking_sphere",
        }
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t >= 0.0 && t <= self.t_max * (1.0 + HORIZON_SLACK) {
            Ok(())
        } else {
            Err(LabError::domain(
                self.name(),
                t,
                format!("[0, {}]", self.t_max),
            ))
        }
    }

    /// Conformal factor s(t) with g(t) = s(t) g(0).
    pub fn metric_scale(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(match self.kind {
            GeometryKind::FlatTorus { .. } => 1.0,
            GeometryKind::ShrinkingSphere { n } => 1.0 - 2.0 * (n as f64 - 1.0) * t,
        })
    }

    /// |Ric(·, t)| measured in g(t).
    pub fn ricci_norm(&self, t: f64) -> Result<f64> {
        let s = self.metric_scale(t)?;
        Ok(match self.kind {
            GeometryKind::FlatTorus { .. } => 0.0,
            GeometryKind::ShrinkingSphere { n } => (n as f64 - 1.0) / s,
        })
    }

    /// Smallest K with |Ric| ≤ K on [0, horizon].
    pub fn ricci_bound(&self, horizon: f64) -> Result<f64> {
        // |Ric| is non-decreasing in t on both models.
        self.ricci_norm(horizon)
    }

    pub fn grid(&self, count: usize) -> Result<SpatialGrid> {
        if count < MIN_GRID_POINTS {
            return Err(LabError::InvalidParameter(format!(
                "grid needs at least {MIN_GRID_POINTS} points, got {count}"
            )));
        }
        Ok(match self.kind {
            GeometryKind::FlatTorus { side, .. } => {
                let h = side / count as f64;
                SpatialGrid {
                    points: (0..count).map(|i| i as f64 * h).collect(),
                    spacing: h,
                    topology: Topology::Periodic,
                }
            }
            GeometryKind::ShrinkingSphere { .. } => {
                let h = std::f64::consts::PI / count as f64;
                SpatialGrid {
                    points: (0..count).map(|i| (i as f64 + 0.5) * h).collect(),
                    spacing: h,
                    topology: Topology::PoleToPole,
                }
            }
        })
    }

    /// Distance in the reference metric g(0) between two coordinates.
    pub fn coordinate_distance(&self, x1: f64, x2: f64) -> f64 {
        let d = (x1 - x2).abs();
        match self.kind {
            GeometryKind::FlatTorus { side, .. } => {
                let d = d.rem_euclid(side);
                d.min(side - d)
            }
            GeometryKind::ShrinkingSphere { .. } => d,
        }
    }

    /// Geodesic distance in g(t).
    pub fn distance(&self, x1: f64, x2: f64, t: f64) -> Result<f64> {
        let s = self.metric_scale(t)?;
        Ok(s.sqrt() * self.coordinate_distance(x1, x2))
    }

    /// Largest stable explicit step on [0, t_end].
    pub fn cfl_limit(&self, grid: &SpatialGrid, t_end: f64) -> Result<f64> {
        let s = self.metric_scale(t_end)?;
        let h = grid.spacing();
        Ok(CFL_FACTOR * s * h * h)
    }

    fn check_sizes(&self, grid: &SpatialGrid, values: &[f64]) -> Result<()> {
        if grid.len() != values.len() {
            return Err(LabError::SizeMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        let expected = match self.kind {
            GeometryKind::FlatTorus { .. } => Topology::Periodic,
            GeometryKind::ShrinkingSphere { .. } => Topology::PoleToPole,
        };
        if grid.topology() != expected {
            return Err(LabError::InvalidParameter(format!(
                "grid topology {:?} does not belong to a {}",
                grid.topology(),
                self.name()
            )));
        }
        Ok(())
    }

    /// Second-order Laplace–Beltrami operator of g(t).
    pub fn laplacian_apply(&self, grid: &SpatialGrid, values: &[f64], t: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; values.len()];
        self.laplacian_into(grid, values, t, &mut out)?;
        Ok(out)
    }

    /// [`ModelGeometry::laplacian_apply`] writing into a caller buffer.
    pub fn laplacian_into(
        &self,
        grid: &SpatialGrid,
        u: &[f64],
        t: f64,
        out: &mut [f64],
    ) -> Result<()> {
        self.check_sizes(grid, u)?;
        if out.len() != u.len() {
            return Err(LabError::SizeMismatch {
                expected: u.len(),
                got: out.len(),
            });
        }
        let s = self.metric_scale(t)?;
        let m = u.len();
        let h = grid.spacing();
        let inv_h2 = 1.0 / (h * h);
        match self.kind {
            GeometryKind::FlatTorus { .. } => {
                for i in 0..m {
                    let left = u[(i + m - 1) % m];
                    let right = u[(i + 1) % m];
                    out[i] = (left - 2.0 * u[i] + right) * inv_h2;
                }
            }
            GeometryKind::ShrinkingSphere { n } => {
                let nf = n as f64;
                let inv_s = 1.0 / s;
                // At the nodes next to a pole the mirrored ghost gives u_θ = 0 there,
                // and cot θ·u_θ → u_θθ, so Δu ≈ n·u_θθ.
                out[0] = inv_s * nf * (u[1] - u[0]) * inv_h2;
                out[m - 1] = inv_s * nf * (u[m - 2] - u[m - 1]) * inv_h2;
                let points = grid.points();
                for i in 1..m - 1 {
                    let cot = 1.0 / points[i].tan();
                    let second = (u[i - 1] - 2.0 * u[i] + u[i + 1]) * inv_h2;
                    let first = (u[i + 1] - u[i - 1]) / (2.0 * h);
                    out[i] = inv_s * (second + (nf - 1.0) * cot * first);
                }
            }
        }
        Ok(())
    }

    /// Central-difference derivative along the grid coordinate.
    pub fn gradient(&self, grid: &SpatialGrid, u: &[f64]) -> Result<Vec<f64>> {
        self.check_sizes(grid, u)?;
        let m = u.len();
        let h = grid.spacing();
        let mut out = vec![0.0; m];
        match self.kind {
            GeometryKind::FlatTorus { .. } => {
                for i in 0..m {
                    out[i] = (u[(i + 1) % m] - u[(i + m - 1) % m]) / (2.0 * h);
                }
            }
            GeometryKind::ShrinkingSphere { .. } => {
                out[0] = (u[1] - u[0]) / (2.0 * h);
                out[m - 1] = (u[m - 1] - u[m - 2]) / (2.0 * h);
                for i in 1..m - 1 {
                    out[i] = (u[i + 1] - u[i - 1]) / (2.0 * h);
                }
            }
        }
        Ok(out)
    }

    /// |∇u|² in the metric g(t).
    pub fn gradient_sq(&self, grid: &SpatialGrid, u: &[f64], t: f64) -> Result<Vec<f64>> {
        let s = self.metric_scale(t)?;
        let mut g = self.gradient(grid, u)?;
        for v in &mut g {
            *v = *v * *v / s;
        }
        Ok(g)
    }
}

/// Time at which the round Sⁿ of unit initial radius collapses under the flow.
pub fn extinction_time(n: usize) -> f64 {
    1.0 / (2.0 * (n as f64 - 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn metric_scale_values() {
        let torus = ModelGeometry::flat_torus(1, 2.0 * PI).unwrap();
        assert_eq!(torus.metric_scale(0.7).unwrap(), 1.0);
        let sphere = ModelGeometry::shrinking_sphere(2).unwrap();
        assert_eq!(sphere.metric_scale(0.0).unwrap(), 1.0);
        assert_eq!(sphere.metric_scale(0.25).unwrap(), 0.5);
        assert_relative_eq!(sphere.t_max(), 0.4);
        assert!(matches!(sphere.metric_scale(0.41), Err(LabError::Domain { .. })));
        assert!(sphere.metric_scale(-0.1).is_err());
    }

    #[test]
    fn ricci_bound_values() {
        let torus = ModelGeometry::flat_torus(3, 1.0).unwrap();
        assert_eq!(torus.ricci_bound(1.0).unwrap(), 0.0);
        let sphere = ModelGeometry::shrinking_sphere(2).unwrap();
        assert_eq!(sphere.ricci_bound(0.0).unwrap(), 1.0);
        assert_eq!(sphere.ricci_bound(0.25).unwrap(), 2.0);
        assert!(sphere.ricci_bound(0.45).is_err());
    }

    #[test]
    fn ricci_norm_never_exceeds_bound() {
        let sphere = ModelGeometry::shrinking_sphere(4).unwrap();
        let horizon = sphere.t_max();
        let k = sphere.ricci_bound(horizon).unwrap();
        let violations = (0..1000)
            .map(|i| horizon * i as f64 / 999.0)
            .filter(|t| sphere.ricci_norm(*t).unwrap() > k)
            .count();
        assert_eq!(violations, 0);
    }

    #[test]
    fn t_max_override_rejects_extinction() {
        let sphere = ModelGeometry::shrinking_sphere(3).unwrap();
        assert!(sphere.with_t_max(0.25).is_err());
        assert_eq!(sphere.with_t_max(0.2).unwrap().t_max(), 0.2);
    }

    #[test]
    fn distances() {
        let torus = ModelGeometry::flat_torus(1, 2.0 * PI).unwrap();
        assert_relative_eq!(torus.distance(0.0, FRAC_PI_2, 3.0).unwrap(), FRAC_PI_2);
        assert_relative_eq!(torus.distance(0.1, 2.0 * PI - 0.1, 0.0).unwrap(), 0.2, epsilon = 1e-12);
        let sphere = ModelGeometry::shrinking_sphere(2).unwrap();
        assert_relative_eq!(sphere.distance(0.0, FRAC_PI_2, 0.0).unwrap(), FRAC_PI_2);
        assert_relative_eq!(
            sphere.distance(0.0, FRAC_PI_2, 0.25).unwrap(),
            1.1107207345395915,
            epsilon = 1e-12
        );
    }

    #[test]
    fn sphere_distance_shrinks_with_time() {
        let sphere = ModelGeometry::shrinking_sphere(3).unwrap();
        let mut prev = f64::INFINITY;
        for i in 0..=100 {
            let t = sphere.t_max() * i as f64 / 100.0;
            let d = sphere.distance(0.3, 2.9, t).unwrap();
            assert!(d <= prev);
            prev = d;
        }
    }

    #[test]
    fn laplacian_annihilates_constants() {
        for geo in [
            ModelGeometry::flat_torus(2, 3.0).unwrap(),
            ModelGeometry::shrinking_sphere(2).unwrap(),
            ModelGeometry::shrinking_sphere(5).unwrap(),
        ] {
            let grid = geo.grid(64).unwrap();
            let lap = geo.laplacian_apply(&grid, &vec![2.75; 64], 0.1).unwrap();
            assert!(lap.iter().all(|v| v.abs() <= 1e-13), "{}", geo.name());
        }
    }

    #[test]
    fn torus_cosine_is_second_order() {
        let geo = ModelGeometry::flat_torus(1, 2.0 * PI).unwrap();
        let err = |m: usize| {
            let grid = geo.grid(m).unwrap();
            let u: Vec<f64> = grid.points().iter().map(|x| x.cos()).collect();
            let lap = geo.laplacian_apply(&grid, &u, 0.3).unwrap();
            let exact: Vec<f64> = u.iter().map(|v| -v).collect();
            max_abs_diff(&lap, &exact)
        };
        let ratio = err(64) / err(128);
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
        assert!(err(128) < 1e-3);
    }

    #[test]
    fn sphere_first_harmonic_is_second_order() {
        let geo = ModelGeometry::shrinking_sphere(2).unwrap();
        let err = |m: usize, t: f64| {
            let grid = geo.grid(m).unwrap();
            let u: Vec<f64> = grid.points().iter().map(|x| x.cos()).collect();
            let lap = geo.laplacian_apply(&grid, &u, t).unwrap();
            let s = geo.metric_scale(t).unwrap();
            let exact: Vec<f64> = u.iter().map(|v| -2.0 * v / s).collect();
            max_abs_diff(&lap, &exact)
        };
        for t in [0.0, 0.3] {
            let ratio = err(64, t) / err(128, t);
            assert!((3.5..4.5).contains(&ratio), "t={t} ratio {ratio}");
        }
        assert!(err(256, 0.0) < 1e-4);
    }

    #[test]
    fn sphere_higher_dimension_zonal_harmonic() {
        // On S³ the zonal eigenfunction of degree 2 is 4cos²θ − 1 with eigenvalue −8.
        let geo = ModelGeometry::shrinking_sphere(3).unwrap();
        let err = |m: usize| {
            let grid = geo.grid(m).unwrap();
            let u: Vec<f64> = grid.points().iter().map(|x| 4.0 * x.cos().powi(2) - 1.0).collect();
            let lap = geo.laplacian_apply(&grid, &u, 0.0).unwrap();
            let exact: Vec<f64> = u.iter().map(|v| -8.0 * v).collect();
            max_abs_diff(&lap, &exact)
        };
        let ratio = err(64) / err(128);
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn torus_summation_by_parts() {
        let geo = ModelGeometry::flat_torus(1, 2.0 * PI).unwrap();
        let grid = geo.grid(97).unwrap();
        let u: Vec<f64> = grid.points().iter().map(|x| (2.0 * x).sin() + 0.3 * x.cos()).collect();
        let v: Vec<f64> = grid.points().iter().map(|x| (x.cos() * 2.0).exp()).collect();
        let lu = geo.laplacian_apply(&grid, &u, 0.0).unwrap();
        let lv = geo.laplacian_apply(&grid, &v, 0.0).unwrap();
        let h = grid.spacing();
        let a: f64 = u.iter().zip(&lv).map(|(x, y)| x * y * h).sum();
        let b: f64 = v.iter().zip(&lu).map(|(x, y)| x * y * h).sum();
        assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()));
    }

    #[test]
    fn size_mismatch_is_reported() {
        let geo = ModelGeometry::flat_torus(1, 1.0).unwrap();
        let grid = geo.grid(16).unwrap();
        assert_eq!(
            geo.laplacian_apply(&grid, &[1.0; 15], 0.0),
            Err(LabError::SizeMismatch { expected: 16, got: 15 })
        );
        let sphere_grid = ModelGeometry::shrinking_sphere(2).unwrap().grid(16).unwrap();
        assert!(geo.laplacian_apply(&sphere_grid, &[1.0; 16], 0.0).is_err());
        assert!(geo.grid(7).is_err());
    }

    #[test]
    fn gradient_sq_uses_current_metric() {
        let geo = ModelGeometry::shrinking_sphere(2).unwrap();
        let grid = geo.grid(128).unwrap();
        let u: Vec<f64> = grid.points().iter().map(|x| x.cos()).collect();
        let g0 = geo.gradient_sq(&grid, &u, 0.0).unwrap();
        let g1 = geo.gradient_sq(&grid, &u, 0.25).unwrap();
        for (a, b) in g0.iter().zip(&g1) {
            assert_relative_eq!(*b, 2.0 * a, max_relative = 1e-12);
        }
        let i = grid.nearest(FRAC_PI_2);
        assert_relative_eq!(g0[i], grid.points()[i].sin().powi(2), max_relative = 1e-3);
    }
}
