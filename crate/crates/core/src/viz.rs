//! Sphere-marginal visualization: densities of `R·eᵢ` on an equirectangular
//! grid, their sum, and jet-colored heatmaps.
//!
//! Rows map to polar angle `θ ∈ (0, π)` from `+e₃`, columns to azimuth
//! `φ ∈ (−π, π)` from `+e₁` towards `+e₂`. Values are sampled at cell
//! centers. Densities are with respect to the area measure on S².

use std::f64::consts::PI;
use std::fmt::Write as _;

use image::{Rgb, RgbImage};
use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fisher::MatrixFisher;

pub const DEFAULT_FIBER_NODES: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SphereGrid {
    pub height: usize,
    pub width: usize,
    /// Row-major, `height × width`.
    pub values: Vec<f64>,
}

impl SphereGrid {
    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::validation(format!("grid dimensions must be positive, got {height}x{width}")));
        }
        Ok(SphereGrid { height, width, values: vec![0.0; height * width] })
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn polar(&self, row: usize) -> f64 {
        (row as f64 + 0.5) * PI / self.height as f64
    }

    pub fn azimuth(&self, col: usize) -> f64 {
        -PI + (col as f64 + 0.5) * 2.0 * PI / self.width as f64
    }

    /// Unit direction at the center of a cell.
    pub fn direction(&self, row: usize, col: usize) -> Vector3<f64> {
        let (st, ct) = self.polar(row).sin_cos();
        let (sp, cp) = self.azimuth(col).sin_cos();
        Vector3::new(st * cp, st * sp, ct)
    }

    /// Cell containing a direction.
    pub fn cell_of(&self, x: &Vector3<f64>) -> (usize, usize) {
        let theta = x.z.clamp(-1.0, 1.0).acos();
        let phi = x.y.atan2(x.x);
        let row = ((theta / PI * self.height as f64) as usize).min(self.height - 1);
        let col = (((phi + PI) / (2.0 * PI) * self.width as f64) as usize).min(self.width - 1);
        (row, col)
    }

    /// Exact area of a cell in a given row.
    pub fn cell_area(&self, row: usize) -> f64 {
        let h = self.height as f64;
        let top = (row as f64 * PI / h).cos();
        let bottom = ((row + 1) as f64 * PI / h).cos();
        (top - bottom) * 2.0 * PI / self.width as f64
    }

    /// `Σ value · area`
    pub fn integral(&self) -> f64 {
        (0..self.height)
            .map(|r| self.cell_area(r) * self.values[r * self.width..(r + 1) * self.width].iter().sum::<f64>())
            .sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn argmax(&self) -> (usize, usize) {
        let k = self
            .values
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(k, _)| k)
            .unwrap_or(0);
        (k / self.width, k % self.width)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for r in 0..self.height {
            let row = &self.values[r * self.width..(r + 1) * self.width];
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }
}

/// Which marginal to draw.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X = 0,
    Y = 1,
    Z = 2,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        self as usize
    }

    /// From a 1-based axis number.
    pub fn from_number(n: usize) -> Result<Self> {
        match n {
            1 => Ok(Axis::X),
            2 => Ok(Axis::Y),
            3 => Ok(Axis::Z),
            _ => Err(Error::validation(format!("axis must be 1, 2 or 3, got {n}"))),
        }
    }
}

/// A rotation taking `e_axis` to `x`: Gram–Schmidt of a reference vector
/// against `x`, cyclically completed to a right-handed frame.
pub fn fiber_base(x: &Vector3<f64>, axis: Axis, reference: &Vector3<f64>) -> Matrix3<f64> {
    let mut r = *reference;
    if x.dot(&r).abs() > 0.9 * r.norm() {
        r = if x.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
    }
    let a = (r - x * x.dot(&r)).normalize();
    let b = x.cross(&a);
    let i = axis.index();
    let mut m = Matrix3::zeros();
    m.set_column(i, x);
    m.set_column((i + 1) % 3, &a);
    m.set_column((i + 2) % 3, &b);
    m
}

/// Log of the fiber average `(1/2π)∮ exp(tr(Fᵀ R₀ Rφ)) dφ` by the
/// trapezoidal rule, `Rφ` the rotation by `φ` about `e_axis`.
fn log_fiber_mean(f: &Matrix3<f64>, base: &Matrix3<f64>, axis: Axis, nodes: usize) -> f64 {
    let g = base.transpose() * f;
    let i = axis.index();
    let (j, k) = ((i + 1) % 3, (i + 2) % 3);
    // tr(Gᵀ Rφ) = G_ii + (G_jj + G_kk) cos φ + (G_kj − G_jk) sin φ
    let c0 = g[(i, i)];
    let ca = g[(j, j)] + g[(k, k)];
    let cb = g[(k, j)] - g[(j, k)];
    let terms: Vec<f64> = (0..nodes)
        .map(|n| {
            let (s, c) = (2.0 * PI * n as f64 / nodes as f64).sin_cos();
            ca * c + cb * s
        })
        .collect();
    let top = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean = terms.iter().map(|t| (t - top).exp()).sum::<f64>() / nodes as f64;
    c0 + top + mean.ln()
}

/// Density of `R·e_axis` for `R ∼ d`.
pub fn axis_marginal(d: &MatrixFisher, axis: Axis, height: usize, width: usize) -> Result<SphereGrid> {
    axis_marginal_with(d, axis, height, width, DEFAULT_FIBER_NODES, &Vector3::z())
}

/// [`axis_marginal`] with explicit fiber node count and Gram–Schmidt reference.
pub fn axis_marginal_with(
    d: &MatrixFisher,
    axis: Axis,
    height: usize,
    width: usize,
    nodes: usize,
    reference: &Vector3<f64>,
) -> Result<SphereGrid> {
    if nodes < 3 {
        return Err(Error::validation("fiber quadrature needs at least 3 nodes"));
    }
    let mut grid = SphereGrid::new(height, width)?;
    let f = d.params().matrix();
    let log_scale = -d.log_norm() - (4.0 * PI).ln();
    for row in 0..height {
        for col in 0..width {
            let x = grid.direction(row, col);
            let base = fiber_base(&x, axis, reference);
            grid.values[row * width + col] = (log_fiber_mean(f, &base, axis, nodes) + log_scale).exp();
        }
    }
    Ok(grid)
}

/// Pointwise sum of the three axis marginals.
pub fn compact_vis(d: &MatrixFisher, height: usize, width: usize) -> Result<SphereGrid> {
    let parts = Axis::ALL.map(|a| axis_marginal(d, a, height, width));
    let mut out = SphereGrid::new(height, width)?;
    for p in parts {
        let p = p?;
        for (o, v) in out.values.iter_mut().zip(&p.values) {
            *o += v;
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapScale {
    /// One maximum over all grids.
    Shared,
    /// Each grid scaled to its own maximum.
    Independent,
}

/// Piecewise-linear jet colormap on `[0, 1]`.
pub fn jet(t: f64) -> [u8; 3] {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let ch = |c: f64| ((1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [ch(3.0), ch(2.0), ch(1.0)]
}

/// One image per grid, `width × height` pixels, row 0 at the top.
pub fn render_heatmap(grids: &[SphereGrid], scale: HeatmapScale) -> Vec<RgbImage> {
    let shared = grids.iter().map(SphereGrid::max).fold(f64::NEG_INFINITY, f64::max);
    grids
        .iter()
        .map(|g| {
            let top = match scale {
                HeatmapScale::Shared => shared,
                HeatmapScale::Independent => g.max(),
            };
            RgbImage::from_fn(g.width as u32, g.height as u32, |x, y| {
                let v = g.get(y as usize, x as usize);
                let t = if top > 0.0 { v / top } else { 0.0 };
                Rgb(jet(t))
            })
        })
        .collect()
}
