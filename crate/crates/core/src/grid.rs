//! Periodic box discretization of ℝ^N (N = 1, 2), real fields on it and
//! the FFT pair used to realize Fourier multipliers.
//!
//! Nodes sit at `-L/2 + i h`, `i = 0..n`, on every axis; the node with index
//! `n/2` is the origin. Multi-indices are flattened row-major (last axis
//! fastest).
//!
//! FFT plans are built once per grid and stored behind `Arc<dyn Fft>`, which is
//! `Send + Sync`: a `Grid` (and every `Field` holding it) can be shared freely
//! between threads. Scratch buffers are allocated per call.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Parameters that fully determine a grid; this is also the JSON sidecar of
/// field files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub extent: f64,
    pub points_per_axis: usize,
}

#[derive(Clone)]
pub struct Grid {
    inner: Arc<GridInner>,
}

struct GridInner {
    dim: usize,
    extent: f64,
    n: usize,
    spacing: f64,
    wavenumbers: Vec<f64>,
    freq_sq: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.inner.dim)
            .field("extent", &self.inner.extent)
            .field("points_per_axis", &self.inner.n)
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.inner, &other.inner) || self.spec() == other.spec()
    }
}

impl Grid {
    pub fn new(dim: usize, extent: f64, points_per_axis: usize) -> Result<Grid> {
        if dim != 1 && dim != 2 {
            return Err(Error::InvalidDimension(dim));
        }
        let n = points_per_axis;
        if n < 8 || n % 2 != 0 {
            return Err(Error::InvalidPointCount(n));
        }
        if !(extent > 0.0) || !extent.is_finite() {
            return Err(Error::NonPositiveExtent(extent));
        }
        let spacing = extent / n as f64;
        let wavenumbers: Vec<f64> = (0..n)
            .map(|k| {
                let signed = if k < n / 2 { k as f64 } else { k as f64 - n as f64 };
                2.0 * PI * signed / extent
            })
            .collect();
        let freq_sq = match dim {
            1 => wavenumbers.iter().map(|k| k * k).collect(),
            _ => {
                let mut v = Vec::with_capacity(n * n);
                for kx in &wavenumbers {
                    for ky in &wavenumbers {
                        v.push(kx * kx + ky * ky);
                    }
                }
                v
            }
        };
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        Ok(Grid {
            inner: Arc::new(GridInner {
                dim,
                extent,
                n,
                spacing,
                wavenumbers,
                freq_sq,
                forward,
                inverse,
            }),
        })
    }

    pub fn from_spec(spec: GridSpec) -> Result<Grid> {
        Grid::new(spec.dim, spec.extent, spec.points_per_axis)
    }

    pub fn spec(&self) -> GridSpec {
        GridSpec {
            dim: self.inner.dim,
            extent: self.inner.extent,
            points_per_axis: self.inner.n,
        }
    }

    pub fn dim(&self) -> usize {
        self.inner.dim
    }

    pub fn extent(&self) -> f64 {
        self.inner.extent
    }

    pub fn points_per_axis(&self) -> usize {
        self.inner.n
    }

    pub fn spacing(&self) -> f64 {
        self.inner.spacing
    }

    /// Total number of nodes, `n^dim`.
    pub fn len(&self) -> usize {
        self.inner.n.pow(self.inner.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `h^dim`, the quadrature weight of a node.
    pub fn cell_volume(&self) -> f64 {
        self.inner.spacing.powi(self.inner.dim as i32)
    }

    /// Coordinate of axis index `i`.
    pub fn coordinate(&self, i: usize) -> f64 {
        -0.5 * self.inner.extent + i as f64 * self.inner.spacing
    }

    /// Axis indices of a flat node index; unused axes are 0.
    pub fn multi_index(&self, flat: usize) -> [usize; 2] {
        let n = self.inner.n;
        match self.inner.dim {
            1 => [flat, 0],
            _ => [flat / n, flat % n],
        }
    }

    pub fn flat_index(&self, idx: [usize; 2]) -> usize {
        match self.inner.dim {
            1 => idx[0],
            _ => idx[0] * self.inner.n + idx[1],
        }
    }

    /// Coordinates of a node; only the first `dim` entries are meaningful.
    pub fn node(&self, flat: usize) -> [f64; 2] {
        let [i, j] = self.multi_index(flat);
        match self.inner.dim {
            1 => [self.coordinate(i), 0.0],
            _ => [self.coordinate(i), self.coordinate(j)],
        }
    }

    /// Flat index of the node at the origin.
    pub fn origin(&self) -> usize {
        let c = self.inner.n / 2;
        self.flat_index([c, c])
    }

    /// Minimal-image distance between a node and an arbitrary point.
    pub fn periodic_distance(&self, flat: usize, point: &[f64]) -> f64 {
        let x = self.node(flat);
        let mut d2 = 0.0;
        for axis in 0..self.inner.dim {
            let d = wrap(x[axis] - point.get(axis).copied().unwrap_or(0.0), self.inner.extent);
            d2 += d * d;
        }
        d2.sqrt()
    }

    /// Per-axis frequencies `2πk/L`, `k = 0..n/2-1, -n/2..-1` (FFT order).
    pub fn wavenumbers(&self) -> &[f64] {
        &self.inner.wavenumbers
    }

    /// `|ξ|²` for every spectral index, in FFT order.
    pub fn frequency_squared(&self) -> &[f64] {
        &self.inner.freq_sq
    }

    /// Symbol `|ξ|^{2μ}` of the fractional Laplacian.
    pub fn laplacian_power_symbol(&self, mu: f64) -> Vec<f64> {
        self.inner.freq_sq.iter().map(|&k2| if k2 == 0.0 { 0.0 } else { k2.powf(mu) }).collect()
    }

    pub fn forward_transform(&self, field: &Field) -> Result<Spectrum> {
        self.check(field)?;
        let mut data: Vec<Complex64> = field.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft_in_place(&mut data, true);
        Ok(Spectrum {
            grid: self.clone(),
            data,
        })
    }

    pub fn inverse_transform(&self, spectrum: &Spectrum) -> Result<Field> {
        if spectrum.data.len() != self.len() {
            return Err(Error::SizeMismatch {
                expected: self.len(),
                got: spectrum.data.len(),
            });
        }
        let mut data = spectrum.data.clone();
        self.fft_in_place(&mut data, false);
        let scale = 1.0 / self.len() as f64;
        Field::from_values(self, data.iter().map(|c| c.re * scale).collect())
    }

    /// Applies a real, even Fourier multiplier (given in FFT order) to raw
    /// node values.
    pub fn apply_symbol(&self, values: &[f64], symbol: &[f64]) -> Vec<f64> {
        debug_assert_eq!(values.len(), self.len());
        debug_assert_eq!(symbol.len(), self.len());
        let mut data: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft_in_place(&mut data, true);
        for (c, s) in data.iter_mut().zip(symbol) {
            *c *= *s;
        }
        self.fft_in_place(&mut data, false);
        let scale = 1.0 / self.len() as f64;
        data.iter().map(|c| c.re * scale).collect()
    }

    /// Raw transform on a complex buffer (unnormalized in both directions).
    pub(crate) fn fft_in_place(&self, data: &mut [Complex64], forward: bool) {
        let n = self.inner.n;
        let plan = if forward { &self.inner.forward } else { &self.inner.inverse };
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        match self.inner.dim {
            1 => plan.process_with_scratch(data, &mut scratch),
            _ => {
                plan.process_with_scratch(data, &mut scratch);
                transpose(data, n);
                plan.process_with_scratch(data, &mut scratch);
                transpose(data, n);
            }
        }
    }

    pub(crate) fn check(&self, field: &Field) -> Result<()> {
        if field.grid != *self {
            return Err(Error::GridMismatch);
        }
        Ok(())
    }
}

fn transpose(data: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

/// Wraps a coordinate difference into `[-L/2, L/2]`.
pub(crate) fn wrap(d: f64, extent: f64) -> f64 {
    d - extent * (d / extent).round()
}

/// Unnormalized discrete Fourier coefficients of a field, in FFT order.
#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: Grid,
    data: Vec<Complex64>,
}

impl Spectrum {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.data
    }

    /// `Σ|û|² / n^dim`, equal to `Σ|u|²` by Parseval.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum::<f64>() / self.data.len() as f64
    }
}

/// Real samples on a grid. Values are always finite.
#[derive(Clone, Debug)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl PartialEq for Field {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.values == other.values
    }
}

impl Field {
    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Field> {
        if values.len() != grid.len() {
            return Err(Error::SizeMismatch {
                expected: grid.len(),
                got: values.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Field {
            grid: grid.clone(),
            values,
        })
    }

    /// Samples `f` at every node; coordinates lie in `[-L/2, L/2)^dim`.
    pub fn from_fn(grid: &Grid, f: impl Fn(&[f64]) -> f64) -> Result<Field> {
        let dim = grid.dim();
        let values = (0..grid.len())
            .map(|i| {
                let x = grid.node(i);
                f(&x[..dim])
            })
            .collect();
        Field::from_values(grid, values)
    }

    pub fn constant(grid: &Grid, value: f64) -> Field {
        Field {
            grid: grid.clone(),
            values: vec![value; grid.len()],
        }
    }

    pub fn zeros(grid: &Grid) -> Field {
        Field::constant(grid, 0.0)
    }

    /// Indicator of the closed periodic ball `B(center, radius)`.
    pub fn characteristic_ball(grid: &Grid, center: &[f64], radius: f64) -> Result<Field> {
        let max = 0.5 * grid.extent();
        if !(radius > 0.0) || radius > max * (1.0 + 1e-12) {
            return Err(Error::RadiusOutOfRange { radius, max });
        }
        let tol = 1e-9 * grid.spacing();
        let values = (0..grid.len())
            .map(|i| if grid.periodic_distance(i, center) <= radius + tol { 1.0 } else { 0.0 })
            .collect();
        Ok(Field {
            grid: grid.clone(),
            values,
        })
    }

    /// `|x - center|^{-exponent}` in the periodic distance. The node at the
    /// singularity takes the value at distance `h/2`.
    pub fn homogeneous(grid: &Grid, center: &[f64], exponent: f64) -> Result<Field> {
        let h = grid.spacing();
        let values = (0..grid.len())
            .map(|i| {
                let r = grid.periodic_distance(i, center);
                let r = if r < 0.25 * h { 0.5 * h } else { r };
                r.powf(-exponent)
            })
            .collect();
        Field::from_values(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Field> {
        Field::from_values(&self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.grid.check(other)?;
        Field::from_values(
            &self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        )
    }

    pub fn abs(&self) -> Field {
        Field {
            grid: self.grid.clone(),
            values: self.values.iter().map(|v| v.abs()).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Result<Field> {
        self.map(|v| v * factor)
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Field) -> Result<Field> {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `h^dim Σ u`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// Grid L^p norm `(h^dim Σ|u|^p)^{1/p}`; `p = ∞` gives the max norm.
    pub fn lp_norm(&self, p: f64) -> f64 {
        if p.is_infinite() {
            return self.max_abs();
        }
        let s: f64 = self.values.iter().map(|v| v.abs().powf(p)).sum();
        (s * self.grid.cell_volume()).powf(1.0 / p)
    }

    /// Cyclic shift by a lattice vector: `(τ_y u)(x) = u(x - y)`.
    pub fn shifted(&self, shift: &[isize]) -> Field {
        let n = self.grid.points_per_axis() as isize;
        let s0 = shift.first().copied().unwrap_or(0);
        let s1 = shift.get(1).copied().unwrap_or(0);
        let values = (0..self.len())
            .map(|flat| {
                let [i, j] = self.grid.multi_index(flat);
                let si = (i as isize - s0).rem_euclid(n) as usize;
                let sj = (j as isize - s1).rem_euclid(n) as usize;
                self.values[self.grid.flat_index([si, sj])]
            })
            .collect();
        Field {
            grid: self.grid.clone(),
            values,
        }
    }
}

/// Finite sum of point masses at grid nodes.
#[derive(Clone, Debug)]
pub struct AtomicMeasure {
    grid: Grid,
    atoms: Vec<(usize, f64)>,
}

impl AtomicMeasure {
    pub fn new(grid: &Grid, atoms: Vec<(usize, f64)>) -> Result<AtomicMeasure> {
        for &(index, mass) in &atoms {
            if index >= grid.len() {
                return Err(Error::SizeMismatch {
                    expected: grid.len(),
                    got: index,
                });
            }
            if !mass.is_finite() {
                return Err(Error::NonFinite { index, value: mass });
            }
        }
        Ok(AtomicMeasure {
            grid: grid.clone(),
            atoms,
        })
    }

    /// Unit mass at the origin.
    pub fn unit_atom(grid: &Grid) -> AtomicMeasure {
        AtomicMeasure {
            grid: grid.clone(),
            atoms: vec![(grid.origin(), 1.0)],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn atoms(&self) -> &[(usize, f64)] {
        &self.atoms
    }

    pub fn total_variation(&self) -> f64 {
        self.atoms.iter().map(|(_, m)| m.abs()).sum()
    }

    /// Masses accumulated per node (no `h^dim` scaling).
    pub fn node_masses(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.grid.len()];
        for &(i, mass) in &self.atoms {
            m[i] += mass;
        }
        m
    }

    /// Grid density `mass / h^dim`, whose grid integral reproduces the masses.
    pub fn to_density(&self) -> Field {
        let w = 1.0 / self.grid.cell_volume();
        Field {
            grid: self.grid.clone(),
            values: self.node_masses().into_iter().map(|m| m * w).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn make_grid_contract() {
        let g = Grid::new(1, 2.0 * PI, 64).unwrap();
        assert_eq!(g.spacing(), 2.0 * PI / 64.0);
        let g2 = Grid::new(2, 10.0, 128).unwrap();
        assert_eq!(g2.len(), 128 * 128);
        assert_eq!(g2.spacing(), 10.0 / 128.0);
        assert!(matches!(Grid::new(3, 1.0, 16), Err(Error::InvalidDimension(3))));
        assert!(matches!(Grid::new(1, 1.0, 15), Err(Error::InvalidPointCount(15))));
        assert!(matches!(Grid::new(1, 1.0, 6), Err(Error::InvalidPointCount(6))));
        assert!(matches!(Grid::new(1, -1.0, 16), Err(Error::NonPositiveExtent(_))));
    }

    #[test]
    fn frequencies_cover_symmetric_band() {
        let g = Grid::new(1, 4.0, 16).unwrap();
        let mut ks: Vec<f64> = g.wavenumbers().iter().map(|k| k * 4.0 / (2.0 * PI)).collect();
        ks.sort_by(f64::total_cmp);
        let expected: Vec<f64> = (-8..8).map(|k| k as f64).collect();
        for (a, b) in ks.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn origin_node_is_zero() {
        let g = Grid::new(2, 3.0, 16).unwrap();
        assert_eq!(g.node(g.origin()), [0.0, 0.0]);
    }

    #[test]
    fn from_fn_rejects_non_finite() {
        let g = Grid::new(1, 1.0, 8).unwrap();
        let err = Field::from_fn(&g, |x| 1.0 / x[0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    #[test]
    fn gaussian_integral() {
        for dim in [1, 2] {
            let g = Grid::new(dim, 12.0, 64).unwrap();
            let f = Field::from_fn(&g, |x| (-x.iter().map(|v| v * v).sum::<f64>()).exp()).unwrap();
            let exact = PI.powf(dim as f64 / 2.0);
            assert!((f.integral() - exact).abs() < 1e-8, "dim {dim}");
        }
    }

    #[test]
    fn ball_counts_nodes() {
        let g = Grid::new(1, 10.0, 200).unwrap();
        let h = g.spacing();
        for r in [0.5, 1.0, 2.33, 4.9] {
            let chi = Field::characteristic_ball(&g, &[0.0], r).unwrap();
            assert!((chi.integral() - 2.0 * r).abs() <= h + 1e-12, "r = {r}");
        }
        let full = Field::characteristic_ball(&g, &[0.0], 5.0).unwrap();
        assert!(full.values().iter().all(|&v| v == 1.0));
        assert!(Field::characteristic_ball(&g, &[0.0], 5.1).is_err());
        assert!(Field::characteristic_ball(&g, &[0.0], 0.0).is_err());
    }

    #[test]
    fn ball_wraps_periodically() {
        let g = Grid::new(1, 8.0, 16).unwrap();
        let chi = Field::characteristic_ball(&g, &[-4.0], 1.0).unwrap();
        // nodes at -4, -3.5, -3 and the wrapped 3, 3.5
        assert_eq!(chi.values().iter().sum::<f64>(), 5.0);
    }

    #[test]
    fn homogeneous_regularizes_center() {
        let g = Grid::new(1, 8.0, 16).unwrap();
        let f = Field::homogeneous(&g, &[0.0], 0.5).unwrap();
        let h = g.spacing();
        assert!((f.values()[g.origin()] - (0.5 * h).powf(-0.5)).abs() < 1e-12);
        assert!((f.values()[g.origin() + 1] - h.powf(-0.5)).abs() < 1e-12);
    }

    #[test]
    fn constant_transform_is_single_mode() {
        let g = Grid::new(2, 5.0, 16).unwrap();
        let s = g.forward_transform(&Field::constant(&g, 2.0)).unwrap();
        let c = s.coefficients();
        assert!((c[0].re - 2.0 * 256.0).abs() < 1e-9);
        assert!(c[1..].iter().all(|z| z.norm() < 1e-9));
    }

    #[test]
    fn round_trip_and_parseval() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for dim in [1, 2] {
            let g = Grid::new(dim, 3.0, 32).unwrap();
            for _ in 0..50 {
                let vals: Vec<f64> = (0..g.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let f = Field::from_values(&g, vals).unwrap();
                let spec = g.forward_transform(&f).unwrap();
                let back = g.inverse_transform(&spec).unwrap();
                let err = f.sub(&back).unwrap().max_abs();
                assert!(err <= 1e-12 * f.max_abs());
                // direct summation oracle
                let direct: f64 = f.values().iter().map(|v| v * v).sum();
                assert!((spec.energy() - direct).abs() <= 1e-10 * direct);
            }
        }
    }

    #[test]
    fn shift_moves_mass() {
        let g = Grid::new(2, 4.0, 8).unwrap();
        let mut v = vec![0.0; 64];
        v[g.flat_index([1, 2])] = 1.0;
        let f = Field::from_values(&g, v).unwrap().shifted(&[3, -3]);
        assert_eq!(f.values()[g.flat_index([4, 7])], 1.0);
    }

    #[test]
    fn measure_density_has_atom_mass() {
        let g = Grid::new(2, 4.0, 8).unwrap();
        let m = AtomicMeasure::new(&g, vec![(3, 2.0), (10, -0.5)]).unwrap();
        assert!((m.to_density().integral() - 1.5).abs() < 1e-14);
        assert_eq!(m.total_variation(), 2.5);
        assert!(AtomicMeasure::new(&g, vec![(64, 1.0)]).is_err());
    }
}
