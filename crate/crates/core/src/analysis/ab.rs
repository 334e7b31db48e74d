use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::grid::{Field, Grid};
use crate::morrey::{window_sums, BallFamily, BallShape, WindowEngine};

/// `beta(r)` must be below `-AB_TOLERANCE` to count as negative.
pub const AB_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ABWitness {
    /// `beta(radius) = -c`.
    pub c: f64,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ABReport {
    pub radii: Vec<f64>,
    /// `max_x h^N Σ_{B(x,r)} V` for each radius.
    pub beta: Vec<f64>,
    pub holds: bool,
    /// Smallest tested radius with negative `beta`.
    pub witness: Option<ABWitness>,
    pub shape: BallShape,
    /// How balls reaching past the box are treated. Always `"periodic"`.
    pub extension: String,
}

/// Dyadic radii `h 2^j` up to `L/4`.
///
/// Balls of radius `r < 3L/8` centred opposite the origin miss a support
/// inside `B(0, L/8)`, so on the torus a compactly supported potential fails
/// the test for every default radius.
pub fn default_ab_radii(grid: &Grid) -> Vec<f64> {
    let cap = 0.25 * grid.extent();
    let mut radii = Vec::new();
    let mut r = grid.spacing();
    while r <= cap * (1.0 + 1e-12) {
        radii.push(r);
        r *= 2.0;
    }
    radii
}

pub fn ab_check(v: &Field, radii: &[f64]) -> Result<ABReport> {
    ab_check_with(v, radii, BallShape::Euclidean, WindowEngine::PrefixSums)
}

pub fn ab_check_with(v: &Field, radii: &[f64], shape: BallShape, engine: WindowEngine) -> Result<ABReport> {
    let grid = v.grid();
    let family = BallFamily::new(grid, radii.to_vec(), shape)?;
    let vol = grid.cell_volume();
    let mut beta = Vec::with_capacity(family.radii.len());
    for &r in &family.radii {
        let sums = window_sums(grid, v.values(), r, shape, engine)?;
        beta.push(vol * sums.into_iter().fold(f64::NEG_INFINITY, f64::max));
    }
    let witness = family
        .radii
        .iter()
        .zip(&beta)
        .find(|(_, &b)| b < -AB_TOLERANCE)
        .map(|(&radius, &b)| ABWitness { c: -b, radius });
    Ok(ABReport {
        radii: family.radii,
        beta,
        holds: witness.is_some(),
        witness,
        shape,
        extension: "periodic".into(),
    })
}
