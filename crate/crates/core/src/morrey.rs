//! Discrete Morrey, Morrey-measure, Lebesgue and uniform norms.
//!
//! The Morrey norm of `u` is the maximum over every grid center `x` and every
//! radius `R` of the family of `R^{(ℓ-N)/p} (h^N Σ_{B(x,R)} |u|^p)^{1/p}`.
//! Balls are periodic and closed: a node belongs to `B(x, R)` when its
//! minimal-image offset `(a h, b h)` has Euclidean (or max-) norm at most `R`.
//! Window sums come from cyclic prefix sums; the brute-force mask path is kept
//! as an oracle.

use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::{AtomicMeasure, Field, Grid};

/// Integrability exponent and Morrey index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MorreyParams {
    /// `f64::INFINITY` encodes `p = ∞`.
    pub p: f64,
    pub ell: f64,
}

impl MorreyParams {
    pub fn new(p: f64, ell: f64) -> Result<MorreyParams> {
        if !(p >= 1.0) {
            return Err(Error::param("p", p, "must lie in [1, inf]"));
        }
        if !(ell > 0.0) || !ell.is_finite() {
            return Err(Error::param("ell", ell, "must be positive"));
        }
        Ok(MorreyParams { p, ell })
    }

    /// `M^{p,N} = L^p`.
    pub fn lebesgue(p: f64, dim: usize) -> Result<MorreyParams> {
        MorreyParams::new(p, dim as f64)
    }

    pub fn sup() -> MorreyParams {
        MorreyParams {
            p: f64::INFINITY,
            ell: 1.0,
        }
    }

    pub fn is_infinite(&self) -> bool {
        self.p.is_infinite()
    }

    /// `ℓ/p`, the homogeneity degree of the norm.
    pub fn slope(&self) -> f64 {
        if self.is_infinite() {
            0.0
        } else {
            self.ell / self.p
        }
    }

    /// `κ = ℓ/(2μp)`.
    pub fn kappa(&self, mu: f64) -> f64 {
        self.slope() / (2.0 * mu)
    }

    pub fn is_admissible(&self, mu: f64) -> bool {
        self.kappa(mu) < 1.0
    }

    pub(crate) fn check_dim(&self, dim: usize) -> Result<()> {
        if self.ell > dim as f64 * (1.0 + 1e-12) {
            return Err(Error::param("ell", self.ell, "must not exceed the dimension"));
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ParamsRepr {
    p: ExponentRepr,
    ell: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ExponentRepr {
    Finite(f64),
    Named(String),
}

impl Serialize for MorreyParams {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let p = if self.is_infinite() {
            ExponentRepr::Named("inf".into())
        } else {
            ExponentRepr::Finite(self.p)
        };
        ParamsRepr { p, ell: self.ell }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MorreyParams {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = ParamsRepr::deserialize(d)?;
        let p = match r.p {
            ExponentRepr::Finite(p) => p,
            ExponentRepr::Named(s) => parse_exponent(&s).map_err(serde::de::Error::custom)?,
        };
        MorreyParams::new(p, r.ell).map_err(serde::de::Error::custom)
    }
}

/// Parses `2`, `1.5`, `inf` or `infinity`.
pub fn parse_exponent(s: &str) -> std::result::Result<f64, String> {
    match s.trim().to_ascii_lowercase().as_str() {
        "inf" | "infinity" | "∞" => Ok(f64::INFINITY),
        t => t.parse::<f64>().map_err(|e| format!("bad exponent {s:?}: {e}")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BallShape {
    #[default]
    Euclidean,
    /// `[-R, R]^N`.
    Cube,
}

/// How window sums are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WindowEngine {
    #[default]
    PrefixSums,
    /// Enumerates every node for every center. `O(N²)` per radius.
    Mask,
}

/// Radii (sorted, within `[h, L/2]`) and ball shape; centers are all nodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BallFamily {
    pub radii: Vec<f64>,
    pub shape: BallShape,
}

impl BallFamily {
    pub fn new(grid: &Grid, mut radii: Vec<f64>, shape: BallShape) -> Result<BallFamily> {
        if radii.is_empty() {
            return Err(Error::EmptyRadii);
        }
        let (lo, hi) = (grid.spacing(), 0.5 * grid.extent());
        for &r in &radii {
            if !(r >= lo * (1.0 - 1e-12)) || r > hi * (1.0 + 1e-12) {
                return Err(Error::RadiusOutOfRange { radius: r, max: hi });
            }
        }
        radii.sort_by(f64::total_cmp);
        radii.dedup();
        Ok(BallFamily { radii, shape })
    }

    /// `{h 2^j} ∩ [h, L/2]` together with `L/2` itself.
    pub fn dyadic(grid: &Grid, shape: BallShape) -> BallFamily {
        let (h, top) = (grid.spacing(), 0.5 * grid.extent());
        let mut radii = Vec::new();
        let mut r = h;
        while r <= top * (1.0 + 1e-12) {
            radii.push(r);
            r *= 2.0;
        }
        if (radii.last().copied().unwrap_or(0.0) - top).abs() > 1e-12 * top {
            radii.push(top);
        }
        BallFamily { radii, shape }
    }

    /// Dyadic radii between `r_min` and `r_max` (both included).
    pub fn dyadic_between(grid: &Grid, r_min: f64, r_max: f64, shape: BallShape) -> Result<BallFamily> {
        if !(r_max >= r_min) {
            return Err(Error::param("r_max", r_max, "must be at least r_min"));
        }
        let mut radii = Vec::new();
        let mut r = r_min;
        while r < r_max * (1.0 - 1e-12) {
            radii.push(r);
            r *= 2.0;
        }
        radii.push(r_max);
        BallFamily::new(grid, radii, shape)
    }
}

fn half_width(radius: f64, h: f64) -> usize {
    (radius / h + 1e-9).floor().max(0.0) as usize
}

/// Cyclic sum of `row[c-b ..= c+b]`, using `pre` (prefix sums of the row
/// repeated twice, length `2n+1`).
#[inline]
fn cyclic_window(pre: &[f64], n: usize, c: usize, b: usize) -> f64 {
    if 2 * b + 1 >= n {
        return pre[n];
    }
    let start = (c + n - b) % n;
    pre[start + 2 * b + 1] - pre[start]
}

fn doubled_prefix(row: &[f64]) -> Vec<f64> {
    let n = row.len();
    let mut pre = Vec::with_capacity(2 * n + 1);
    pre.push(0.0);
    let mut acc = 0.0;
    for k in 0..2 * n {
        acc += row[k % n];
        pre.push(acc);
    }
    pre
}

/// Offsets along one axis taken by a window of half-width `m`: `|a| ≤ m`
/// restricted to the minimal images `(-n/2, n/2]`.
fn axis_offsets(m: usize, n: usize) -> (isize, isize) {
    let half = (n / 2) as isize;
    let m = m as isize;
    if m >= half {
        (-half + 1, half)
    } else {
        (-m, m)
    }
}

/// Sum of `values` over `B(node, radius)` for every node (no `h^N` factor).
pub fn window_sums(grid: &Grid, values: &[f64], radius: f64, shape: BallShape, engine: WindowEngine) -> Result<Vec<f64>> {
    if values.len() != grid.len() {
        return Err(Error::SizeMismatch {
            expected: grid.len(),
            got: values.len(),
        });
    }
    if !(radius > 0.0) {
        return Err(Error::RadiusOutOfRange {
            radius,
            max: 0.5 * grid.extent(),
        });
    }
    Ok(match engine {
        WindowEngine::Mask => mask_sums(grid, values, radius, shape),
        WindowEngine::PrefixSums => match grid.dim() {
            1 => {
                let n = grid.points_per_axis();
                let b = half_width(radius, grid.spacing());
                let pre = doubled_prefix(values);
                (0..n).map(|c| cyclic_window(&pre, n, c, b)).collect()
            }
            _ => match shape {
                BallShape::Cube => cube_sums_2d(grid, values, radius),
                BallShape::Euclidean => disc_sums_2d(grid, values, radius),
            },
        },
    })
}

fn cube_sums_2d(grid: &Grid, values: &[f64], radius: f64) -> Vec<f64> {
    let n = grid.points_per_axis();
    let b = half_width(radius, grid.spacing());
    let rows: Vec<f64> = values
        .par_chunks(n)
        .flat_map_iter(|row| {
            let pre = doubled_prefix(row);
            (0..n).map(move |j| cyclic_window(&pre, n, j, b))
        })
        .collect();
    // columns of the row-window sums
    let mut out = vec![0.0; n * n];
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let col: Vec<f64> = (0..n).map(|i| rows[i * n + j]).collect();
            let pre = doubled_prefix(&col);
            (0..n).map(|i| cyclic_window(&pre, n, i, b)).collect()
        })
        .collect();
    for (j, col) in cols.iter().enumerate() {
        for (i, v) in col.iter().enumerate() {
            out[i * n + j] = *v;
        }
    }
    out
}

fn disc_sums_2d(grid: &Grid, values: &[f64], radius: f64) -> Vec<f64> {
    let n = grid.points_per_axis();
    let rh = radius / grid.spacing() + 1e-9;
    let m = rh.floor() as usize;
    let (a_lo, a_hi) = axis_offsets(m, n);
    // half-width of the row segment at row offset a
    let widths: Vec<(isize, usize)> = (a_lo..=a_hi)
        .map(|a| {
            let w = (rh * rh - (a * a) as f64).max(0.0).sqrt().floor() as usize;
            (a, w)
        })
        .collect();
    let prefixes: Vec<Vec<f64>> = values.par_chunks(n).map(doubled_prefix).collect();
    (0..n * n)
        .into_par_iter()
        .map(|flat| {
            let (i, j) = (flat / n, flat % n);
            let mut s = 0.0;
            for &(a, w) in &widths {
                let row = (i as isize + a).rem_euclid(n as isize) as usize;
                s += cyclic_window(&prefixes[row], n, j, w);
            }
            s
        })
        .collect()
}

fn mask_sums(grid: &Grid, values: &[f64], radius: f64, shape: BallShape) -> Vec<f64> {
    let n = grid.points_per_axis() as isize;
    let dim = grid.dim();
    let rh = radius / grid.spacing() + 1e-9;
    let minimal = |d: isize| {
        let d = d.rem_euclid(n);
        if d > n / 2 {
            d - n
        } else {
            d
        }
    };
    (0..grid.len())
        .into_par_iter()
        .map(|c| {
            let ci = grid.multi_index(c);
            let mut s = 0.0;
            for (k, v) in values.iter().enumerate() {
                let ki = grid.multi_index(k);
                let a = minimal(ki[0] as isize - ci[0] as isize) as f64;
                let b = if dim == 2 {
                    minimal(ki[1] as isize - ci[1] as isize) as f64
                } else {
                    0.0
                };
                let inside = match shape {
                    BallShape::Euclidean => a * a + b * b <= rh * rh,
                    BallShape::Cube => a.abs() <= rh && b.abs() <= rh,
                };
                if inside {
                    s += v;
                }
            }
            s
        })
        .collect()
}

/// Value of a discrete Morrey norm and where the supremum is attained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MorreyNorm {
    pub value: f64,
    /// Flat index of the maximizing center.
    pub center: usize,
    /// Maximizing radius; `None` for `p = ∞`.
    pub radius: Option<f64>,
}

pub fn morrey_norm(field: &Field, params: MorreyParams, family: &BallFamily) -> Result<MorreyNorm> {
    morrey_norm_with(field, params, family, WindowEngine::PrefixSums)
}

pub fn morrey_norm_with(
    field: &Field,
    params: MorreyParams,
    family: &BallFamily,
    engine: WindowEngine,
) -> Result<MorreyNorm> {
    let grid = field.grid();
    params.check_dim(grid.dim())?;
    if family.radii.is_empty() {
        return Err(Error::EmptyRadii);
    }
    if params.is_infinite() {
        let (center, value) = argmax(field.values().iter().map(|v| v.abs()));
        return Ok(MorreyNorm {
            value,
            center,
            radius: None,
        });
    }
    let p = params.p;
    let powered: Vec<f64> = field.values().iter().map(|v| v.abs().powf(p)).collect();
    let vol = grid.cell_volume();
    let dim = grid.dim() as f64;
    let best = family
        .radii
        .par_iter()
        .map(|&r| -> Result<(f64, usize, f64)> {
            let sums = window_sums(grid, &powered, r, family.shape, engine)?;
            let (c, s) = argmax(sums.into_iter());
            Ok((r.powf((params.ell - dim) / p) * (vol * s).powf(1.0 / p), c, r))
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .fold((f64::NEG_INFINITY, 0, 0.0), |a, b| if b.0 > a.0 { b } else { a });
    Ok(MorreyNorm {
        value: best.0,
        center: best.1,
        radius: Some(best.2),
    })
}

fn argmax(it: impl Iterator<Item = f64>) -> (usize, f64) {
    it.enumerate().fold((0, f64::NEG_INFINITY), |a, (i, v)| if v > a.1 { (i, v) } else { a })
}

/// Morrey-measure norm `sup R^{ℓ-N} |m|(B(x, R))`.
pub fn morrey_measure_norm(measure: &AtomicMeasure, ell: f64, family: &BallFamily) -> Result<MorreyNorm> {
    let grid = measure.grid();
    MorreyParams::new(1.0, ell)?.check_dim(grid.dim())?;
    if family.radii.is_empty() {
        return Err(Error::EmptyRadii);
    }
    let masses: Vec<f64> = measure.node_masses().into_iter().map(f64::abs).collect();
    let dim = grid.dim() as f64;
    let mut best = MorreyNorm {
        value: f64::NEG_INFINITY,
        center: 0,
        radius: None,
    };
    for &r in &family.radii {
        let sums = window_sums(grid, &masses, r, family.shape, WindowEngine::PrefixSums)?;
        let (c, s) = argmax(sums.into_iter());
        let v = r.powf(ell - dim) * s;
        if v > best.value {
            best = MorreyNorm {
                value: v,
                center: c,
                radius: Some(r),
            };
        }
    }
    Ok(best)
}

/// `sup_x ‖u‖_{L^p(B(x, 1))}`, the norm of the uniform space `L^p_U`.
pub fn uniform_norm(field: &Field, p: f64) -> Result<f64> {
    let grid = field.grid();
    if grid.extent() < 2.0 {
        return Err(Error::BoxTooSmall {
            extent: grid.extent(),
            required: 2.0,
        });
    }
    if !(p >= 1.0) {
        return Err(Error::param("p", p, "must lie in [1, inf]"));
    }
    if p.is_infinite() {
        return Ok(field.max_abs());
    }
    let powered: Vec<f64> = field.values().iter().map(|v| v.abs().powf(p)).collect();
    let sums = window_sums(grid, &powered, 1.0, BallShape::Euclidean, WindowEngine::PrefixSums)?;
    let s = sums.into_iter().fold(0.0, f64::max);
    Ok((s * grid.cell_volume()).powf(1.0 / p))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EmbeddingRatio {
    /// `‖u‖_{M^{p,ℓ}} / ‖u‖_{M^{q,s}}`, 0 for `u = 0`.
    pub ratio: f64,
    pub smaller_space_norm: f64,
    pub larger_space_norm: f64,
}

/// Ratio for the embedding `M^{q,s} ⊂ M^{p,ℓ}` (`p ≤ q`, `ℓ/p = s/q`).
pub fn embedding_check(
    field: &Field,
    smaller: MorreyParams,
    larger: MorreyParams,
    family: &BallFamily,
) -> Result<EmbeddingRatio> {
    if larger.p > smaller.p || (larger.slope() - smaller.slope()).abs() > 1e-12 * larger.slope().max(1.0) {
        return Err(Error::Hypothesis(format!(
            "embedding needs p <= q and l/p = s/q, got (q,s) = ({}, {}), (p,l) = ({}, {})",
            smaller.p, smaller.ell, larger.p, larger.ell
        )));
    }
    let lhs = morrey_norm(field, larger, family)?.value;
    let rhs = morrey_norm(field, smaller, family)?.value;
    let ratio = if rhs == 0.0 { 0.0 } else { lhs / rhs };
    Ok(EmbeddingRatio {
        ratio,
        smaller_space_norm: rhs,
        larger_space_norm: lhs,
    })
}

/// Exponents of the product space: `1/z = 1/p + 1/p₁`, `ν/z = ℓ/p + ℓ₁/p₁`.
pub fn morrey_product_params(u: MorreyParams, v: MorreyParams) -> Result<MorreyParams> {
    let inv_z = 1.0 / u.p + 1.0 / v.p;
    if inv_z > 1.0 + 1e-12 {
        return Err(Error::ExponentOverflow { inv_z });
    }
    if inv_z == 0.0 {
        return Ok(MorreyParams::sup());
    }
    let z = 1.0 / inv_z.min(1.0);
    Ok(MorreyParams {
        p: z,
        ell: z * (u.slope() + v.slope()),
    })
}

/// `‖τ_y u - u‖` in the given Morrey norm, for a lattice shift `y`.
pub fn translation_modulus(field: &Field, shift: &[isize], params: MorreyParams, family: &BallFamily) -> Result<f64> {
    let diff = field.shifted(shift).sub(field)?;
    Ok(morrey_norm(&diff, params, family)?.value)
}

/// A norm to track along trajectories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum NormSpec {
    /// Morrey norm over the dyadic family of the given shape.
    Morrey {
        #[serde(flatten)]
        params: MorreyParams,
        #[serde(default)]
        shape: BallShape,
    },
    /// Uniform-space norm `sup_x ‖u‖_{L^p(B(x,1))}`.
    Uniform {
        #[serde(with = "exponent_serde")]
        p: f64,
    },
}

impl NormSpec {
    pub fn morrey(p: f64, ell: f64) -> Result<NormSpec> {
        Ok(NormSpec::Morrey {
            params: MorreyParams::new(p, ell)?,
            shape: BallShape::Euclidean,
        })
    }

    pub fn sup() -> NormSpec {
        NormSpec::Morrey {
            params: MorreyParams::sup(),
            shape: BallShape::Euclidean,
        }
    }

    pub fn evaluate(&self, field: &Field) -> Result<f64> {
        match *self {
            NormSpec::Morrey { params, shape } => {
                Ok(morrey_norm(field, params, &BallFamily::dyadic(field.grid(), shape))?.value)
            }
            NormSpec::Uniform { p } => uniform_norm(field, p),
        }
    }

    /// Short label such as `M(2,1)`, `Linf` or `U(1)`.
    pub fn label(&self) -> String {
        let e = |p: f64| if p.is_infinite() { "inf".to_string() } else { format!("{p}") };
        match self {
            NormSpec::Morrey { params, shape } => {
                if params.is_infinite() {
                    "Linf".into()
                } else {
                    let s = if *shape == BallShape::Cube { ",cube" } else { "" };
                    format!("M({},{}{s})", e(params.p), params.ell)
                }
            }
            NormSpec::Uniform { p } => format!("U({})", e(*p)),
        }
    }
}

/// Parses `p,ell[,shape]`, e.g. `2,1`, `inf,1` or `1,1,cube`.
impl std::str::FromStr for NormSpec {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        if matches!(s.trim(), "inf" | "linf" | "Linf" | "sup") {
            return Ok(NormSpec::sup());
        }
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.first() == Some(&"uniform") && parts.len() == 2 {
            return Ok(NormSpec::Uniform {
                p: parse_exponent(parts[1])?,
            });
        }
        if parts.len() < 2 || parts.len() > 3 {
            return Err(format!("norm {s:?}: expected p,ell[,shape]"));
        }
        let p = parse_exponent(parts[0])?;
        let ell: f64 = parts[1].parse().map_err(|e| format!("bad ell {:?}: {e}", parts[1]))?;
        let shape = match parts.get(2) {
            None | Some(&"euclidean") | Some(&"ball") => BallShape::Euclidean,
            Some(&"cube") => BallShape::Cube,
            Some(other) => return Err(format!("unknown shape {other:?}")),
        };
        let params = MorreyParams::new(p, ell).map_err(|e| e.to_string())?;
        Ok(NormSpec::Morrey { params, shape })
    }
}

mod exponent_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &f64, s: S) -> Result<S::Ok, S::Error> {
        if p.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*p)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match super::ExponentRepr::deserialize(d)? {
            super::ExponentRepr::Finite(p) => Ok(p),
            super::ExponentRepr::Named(s) => super::parse_exponent(&s).map_err(serde::de::Error::custom),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dyadic_family_ends_at_half_box() {
        let g = Grid::new(1, 10.0, 40).unwrap();
        let f = BallFamily::dyadic(&g, BallShape::Euclidean);
        assert_eq!(f.radii.first(), Some(&0.25));
        assert_eq!(f.radii.last(), Some(&5.0));
        assert!(f.radii.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn family_validation() {
        let g = Grid::new(1, 10.0, 40).unwrap();
        assert!(matches!(BallFamily::new(&g, vec![], BallShape::Cube), Err(Error::EmptyRadii)));
        assert!(BallFamily::new(&g, vec![6.0], BallShape::Cube).is_err());
        assert!(BallFamily::new(&g, vec![0.1], BallShape::Cube).is_err());
    }

    #[test]
    fn params_serde_encodes_infinity() {
        let p = MorreyParams::sup();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"inf\""));
        let back: MorreyParams = serde_json::from_str(&s).unwrap();
        assert!(back.p.is_infinite());
        let q: MorreyParams = serde_json::from_str(r#"{"p": 2, "ell": 0.5}"#).unwrap();
        assert_eq!(q, MorreyParams::new(2.0, 0.5).unwrap());
        assert!(serde_json::from_str::<MorreyParams>(r#"{"p": 0.5, "ell": 1}"#).is_err());
    }

    #[test]
    fn kappa_and_admissibility() {
        let p = MorreyParams::new(2.0, 1.0).unwrap();
        assert_eq!(p.kappa(0.5), 0.5);
        assert!(p.is_admissible(0.5));
        assert!(!p.is_admissible(0.25));
    }

    #[test]
    fn engines_agree_on_every_shape() {
        let g1 = Grid::new(1, 7.0, 32).unwrap();
        let g2 = Grid::new(2, 7.0, 24).unwrap();
        for g in [g1, g2] {
            let f = Field::from_fn(&g, |x| (3.0 * x[0]).sin() + x.iter().sum::<f64>().cos() * 0.5).unwrap();
            for shape in [BallShape::Euclidean, BallShape::Cube] {
                for r in [g.spacing(), 0.6, 1.3, 2.9, 3.5] {
                    let a = window_sums(&g, f.values(), r, shape, WindowEngine::PrefixSums).unwrap();
                    let b = window_sums(&g, f.values(), r, shape, WindowEngine::Mask).unwrap();
                    for (x, y) in a.iter().zip(&b) {
                        assert!((x - y).abs() < 1e-10, "{shape:?} r {r}: {x} vs {y}");
                    }
                }
            }
        }
    }

    #[test]
    fn window_counts_match_characteristic_ball() {
        let g = Grid::new(2, 8.0, 32).unwrap();
        let ones = vec![1.0; g.len()];
        for r in [0.25, 1.0, 2.6, 4.0] {
            let sums = window_sums(&g, &ones, r, BallShape::Euclidean, WindowEngine::PrefixSums).unwrap();
            let chi = Field::characteristic_ball(&g, &[0.0, 0.0], r).unwrap();
            let count: f64 = chi.values().iter().sum();
            assert!(sums.iter().all(|&s| s == count), "r {r}");
        }
    }

    #[test]
    fn l1_full_cover() {
        let g = Grid::new(1, 12.0, 64).unwrap();
        let f = Field::from_fn(&g, |x| (-x[0] * x[0]).exp() * (1.0 + 0.3 * x[0].sin())).unwrap();
        let fam = BallFamily::dyadic(&g, BallShape::Euclidean);
        let n = morrey_norm(&f, MorreyParams::new(1.0, 1.0).unwrap(), &fam).unwrap();
        assert!((n.value - f.lp_norm(1.0)).abs() < 1e-12 * n.value);
    }

    #[test]
    fn sup_path_is_max_abs() {
        let g = Grid::new(2, 4.0, 16).unwrap();
        let f = Field::from_fn(&g, |x| x[0] - 2.0 * x[1]).unwrap();
        let fam = BallFamily::dyadic(&g, BallShape::Cube);
        let n = morrey_norm(&f, MorreyParams::sup(), &fam).unwrap();
        assert_eq!(n.value, f.max_abs());
        assert_eq!(n.radius, None);
    }

    #[test]
    fn measure_norms() {
        let g = Grid::new(1, 8.0, 32).unwrap();
        let fam = BallFamily::dyadic(&g, BallShape::Euclidean);
        let atom = AtomicMeasure::unit_atom(&g);
        assert!((morrey_measure_norm(&atom, 1.0, &fam).unwrap().value - 1.0).abs() < 1e-15);
        let n = morrey_measure_norm(&atom, 0.5, &fam).unwrap();
        assert!((n.value - g.spacing().powf(-0.5)).abs() < 1e-12);
        // two atoms 8 nodes apart are covered together once R >= 4h
        let two = AtomicMeasure::new(&g, vec![(10, 1.0), (18, 1.0)]).unwrap();
        let small = BallFamily::new(&g, vec![g.spacing(), 2.0 * g.spacing()], BallShape::Euclidean).unwrap();
        assert_eq!(morrey_measure_norm(&two, 1.0, &small).unwrap().value, 1.0);
        let big = BallFamily::new(&g, vec![4.0 * g.spacing()], BallShape::Euclidean).unwrap();
        assert_eq!(morrey_measure_norm(&two, 1.0, &big).unwrap().value, 2.0);
    }

    #[test]
    fn uniform_norm_of_constants() {
        let g = Grid::new(1, 10.0, 100).unwrap();
        let one = Field::constant(&g, 1.0);
        let v = uniform_norm(&one, 1.0).unwrap();
        assert!((v - 2.0).abs() <= g.spacing() + 1e-12);
        assert_eq!(uniform_norm(&one, f64::INFINITY).unwrap(), 1.0);
        let small = Grid::new(1, 1.5, 16).unwrap();
        assert!(matches!(uniform_norm(&Field::constant(&small, 1.0), 1.0), Err(Error::BoxTooSmall { .. })));
    }

    #[test]
    fn uniform_norm_below_l1_for_wide_bump() {
        let g = Grid::new(1, 20.0, 200).unwrap();
        let f = Field::from_fn(&g, |x| if x[0].abs() < 4.0 { 1.0 } else { 0.0 }).unwrap();
        assert!(uniform_norm(&f, 1.0).unwrap() < f.lp_norm(1.0));
    }

    #[test]
    fn product_exponents() {
        let a = MorreyParams::new(2.0, 1.0).unwrap();
        let z = morrey_product_params(a, a).unwrap();
        assert!((z.p - 1.0).abs() < 1e-15 && (z.ell - 1.0).abs() < 1e-15);
        let v = MorreyParams::new(3.0, 0.6).unwrap();
        let z = morrey_product_params(MorreyParams::sup(), v).unwrap();
        assert!((z.p - 3.0).abs() < 1e-12 && (z.ell - 0.6).abs() < 1e-12);
        let over = morrey_product_params(MorreyParams::new(1.5, 1.0).unwrap(), a);
        assert!(matches!(over, Err(Error::ExponentOverflow { .. })));
    }

    #[test]
    fn embedding_contract() {
        let g = Grid::new(1, 8.0, 64).unwrap();
        let fam = BallFamily::dyadic(&g, BallShape::Euclidean);
        let f = Field::from_fn(&g, |x| (-x[0] * x[0]).exp()).unwrap();
        let a = MorreyParams::new(2.0, 0.5).unwrap();
        assert_eq!(embedding_check(&f, a, a, &fam).unwrap().ratio, 1.0);
        assert_eq!(embedding_check(&Field::zeros(&g), a, a, &fam).unwrap().ratio, 0.0);
        let bad = MorreyParams::new(1.0, 0.5).unwrap();
        assert!(matches!(embedding_check(&f, a, bad, &fam), Err(Error::Hypothesis(_))));
    }

    #[test]
    fn norm_spec_parsing_and_serde() {
        let n: NormSpec = "2,1".parse().unwrap();
        assert_eq!(n, NormSpec::morrey(2.0, 1.0).unwrap());
        let c: NormSpec = "inf,1,cube".parse().unwrap();
        assert!(matches!(c, NormSpec::Morrey { shape: BallShape::Cube, .. }));
        let u: NormSpec = "uniform,inf".parse().unwrap();
        assert_eq!(u, NormSpec::Uniform { p: f64::INFINITY });
        assert_eq!("inf".parse::<NormSpec>().unwrap(), NormSpec::sup());
        assert!("2".parse::<NormSpec>().is_err());
        assert!("2,1,hexagon".parse::<NormSpec>().is_err());
        for spec in [n, c, u] {
            let json = serde_json::to_string(&spec).unwrap();
            assert_eq!(serde_json::from_str::<NormSpec>(&json).unwrap(), spec, "{json}");
        }
    }

    #[test]
    fn translation_modulus_of_ball() {
        let g = Grid::new(1, 8.0, 128).unwrap();
        let fam = BallFamily::dyadic(&g, BallShape::Euclidean);
        let chi = Field::characteristic_ball(&g, &[0.0], 1.0).unwrap();
        let l1 = MorreyParams::new(1.0, 1.0).unwrap();
        assert_eq!(translation_modulus(&chi, &[0], l1, &fam).unwrap(), 0.0);
        let m = translation_modulus(&chi, &[1], l1, &fam).unwrap();
        assert!((m - 2.0 * g.spacing()).abs() < 1e-12);
    }
}
