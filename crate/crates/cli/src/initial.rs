//! Initial data on a grid.

use anyhow::{bail, Result};
use harnack_core::geometry::{GeometryKind, ModelGeometry, SpatialGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::InitialData;

/// Lowest and highest mode of [`random_trig`].
pub const RANDOM_MODES: std::ops::RangeInclusive<u32> = 1..=4;
/// Sum of absolute coefficients of [`random_trig`]; the data stays above 1 − this.
pub const RANDOM_AMPLITUDE: f64 = 0.8;

/// 1 + Σ aₖ cos(kx) + bₖ sin(kx) for k = 1..4 on the torus (x scaled to period 2π),
/// or 1 + Σ aₖ cos(kθ) on the sphere. Coefficients are uniform, then scaled so
/// Σ|aₖ| + Σ|bₖ| = 0.8.
pub fn random_trig(geo: &ModelGeometry, grid: &SpatialGrid, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let torus_side = match geo.kind() {
        GeometryKind::FlatTorus { side, .. } => Some(side),
        GeometryKind::ShrinkingSphere { .. } => None,
    };
    let mut coeffs: Vec<(f64, f64, f64)> = RANDOM_MODES
        .map(|k| {
            let a = rng.gen_range(-1.0..1.0);
            let b = if torus_side.is_some() { rng.gen_range(-1.0..1.0) } else { 0.0 };
            (k as f64, a, b)
        })
        .collect();
    let total: f64 = coeffs.iter().map(|(_, a, b)| a.abs() + b.abs()).sum();
    for c in &mut coeffs {
        c.1 *= RANDOM_AMPLITUDE / total;
        c.2 *= RANDOM_AMPLITUDE / total;
    }
    let scale = torus_side.map_or(1.0, |side| std::f64::consts::TAU / side);
    grid.points()
        .iter()
        .map(|x| {
            let y = x * scale;
            1.0 + coeffs
                .iter()
                .map(|(k, a, b)| a * (k * y).cos() + b * (k * y).sin())
                .sum::<f64>()
        })
        .collect()
}

pub fn build(initial: &InitialData, geo: &ModelGeometry, grid: &SpatialGrid, seed: u64) -> Result<Vec<f64>> {
    let u0: Vec<f64> = match *initial {
        InitialData::Constant { value } => vec![value; grid.len()],
        InitialData::Cosine {
            mean,
            amplitude,
            wavenumber,
        } => grid
            .points()
            .iter()
            .map(|x| mean + amplitude * (wavenumber * x).cos())
            .collect(),
        InitialData::RandomTrig => random_trig(geo, grid, seed),
    };
    if let Some(v) = u0.iter().find(|v| !(**v > 0.0)) {
        bail!("initial data must be positive, found {v}");
    }
    Ok(u0)
}
