//! Radial convolution kernels and their grid stencils.
//!
//! A [`Kernel`] is a nonnegative radial profile with compact support, scaled
//! to unit mass over ℝ^N. Moments are computed by composite Simpson
//! quadrature of the radial integral `|S^{N-1}| ∫₀^ρ f(r) r^{N-1+k} dr`.
//! A [`DiscreteKernel`] samples the profile at lattice offsets and rescales
//! the samples by one scalar so the discrete mass is one.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Simpson panels per kernel radius.
pub const QUADRATURE_PANELS: usize = 10_000;

/// Shape of the radial profile, expressed in the scaled radius `s = |z| / ρ`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum KernelFamily {
    /// `(1 - s²)²` on `s < 1`.
    PolynomialBump,
    /// `exp(-1 / (1 - s²))` on `s < 1`.
    SmoothBump,
    /// Piecewise-linear profile through `(s_i, v_i)`, zero beyond the last
    /// sample and for `s >= 1`.
    Table { radii: Vec<f64>, values: Vec<f64> },
}

impl KernelFamily {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "polynomial-bump" => Some(Self::PolynomialBump),
            "smooth-bump" => Some(Self::SmoothBump),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::PolynomialBump => "polynomial-bump",
            Self::SmoothBump => "smooth-bump",
            Self::Table { .. } => "table",
        }
    }

    fn profile(&self, s: f64) -> f64 {
        if !(0.0..1.0).contains(&s) {
            return 0.0;
        }
        match self {
            Self::PolynomialBump => {
                let q = 1.0 - s * s;
                q * q
            }
            Self::SmoothBump => (-1.0 / (1.0 - s * s)).exp(),
            Self::Table { radii, values } => table_lookup(radii, values, s),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Self::Table { radii, values } = self {
            if radii.len() < 2 || radii.len() != values.len() {
                return Err(invalid("kernel.table", "need at least two samples and equal lengths"));
            }
            if radii[0] != 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
                return Err(invalid("kernel.table", "radii must start at 0 and increase strictly"));
            }
            if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(invalid("kernel.table", "profile values must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

fn table_lookup(radii: &[f64], values: &[f64], s: f64) -> f64 {
    let last = radii.len() - 1;
    if s > radii[last] {
        return 0.0;
    }
    let j = radii.partition_point(|&r| r <= s).clamp(1, last);
    let (r0, r1) = (radii[j - 1], radii[j]);
    let theta = (s - r0) / (r1 - r0);
    values[j - 1] + theta * (values[j] - values[j - 1])
}

/// Surface measure of the unit sphere in ℝ^N (`2` for N = 1).
pub fn sphere_area(dim: usize) -> f64 {
    match dim {
        1 => 2.0,
        2 => 2.0 * std::f64::consts::PI,
        3 => 4.0 * std::f64::consts::PI,
        _ => f64::NAN,
    }
}

/// Composite Simpson rule on `[a, b]` with an even number of panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let n = panels + panels % 2;
    let step = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * step);
    }
    acc * step / 3.0
}

/// Radial, compactly supported, unit-mass convolution kernel.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    family: KernelFamily,
    support_radius: f64,
    dim: usize,
    normalization_constant: f64,
}

/// Builds a unit-mass kernel of the given family.
pub fn make_kernel(family: KernelFamily, support_radius: f64, dim: usize) -> Result<Kernel> {
    if !(support_radius > 0.0 && support_radius.is_finite()) {
        return Err(invalid(
            "kernel.radius",
            format!("must be positive, got {support_radius}"),
        ));
    }
    if !(1..=3).contains(&dim) {
        return Err(invalid("kernel.dim", format!("must be 1, 2 or 3, got {dim}")));
    }
    family.validate()?;
    let mut kernel = Kernel {
        family,
        support_radius,
        dim,
        normalization_constant: 1.0,
    };
    let mass = kernel.radial_moment(0);
    if !mass.is_finite() {
        return Err(Error::QuadratureFailure);
    }
    if mass <= 0.0 {
        return Err(invalid("kernel.family", "profile has zero mass"));
    }
    kernel.normalization_constant = 1.0 / mass;
    Ok(kernel)
}

impl Kernel {
    pub fn family(&self) -> &KernelFamily {
        &self.family
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn normalization_constant(&self) -> f64 {
        self.normalization_constant
    }

    /// Normalized kernel value at distance `r` from the origin.
    pub fn radial(&self, r: f64) -> f64 {
        self.normalization_constant * self.family.profile(r.abs() / self.support_radius)
    }

    /// Normalized kernel value at the point `z` (only the first `dim`
    /// components are read).
    pub fn eval(&self, z: &[f64]) -> f64 {
        let r2: f64 = z.iter().take(self.dim).map(|c| c * c).sum();
        self.radial(r2.sqrt())
    }

    /// `∫ J(z) |z|^k dz` over ℝ^N.
    pub fn radial_moment(&self, k: u32) -> f64 {
        let power = self.dim as i32 - 1 + k as i32;
        let integrand = |r: f64| self.radial(r) * r.powi(power);
        sphere_area(self.dim) * simpson(integrand, 0.0, self.support_radius, QUADRATURE_PANELS)
    }

    pub fn mass(&self) -> f64 {
        self.radial_moment(0)
    }
}

/// `A(J) = (1/2N) ∫ J(z) |z|² dz`, the effective diffusivity of `J∗u − u`.
pub fn diffusivity(kernel: &Kernel) -> f64 {
    kernel.radial_moment(2) / (2.0 * kernel.dim as f64)
}

/// Kernel sampled on a lattice of spacing `h`, renormalized to unit
/// discrete mass.
///
/// Weights are stored as densities `w(k)` on the cube of offsets
/// `[-r, r]^N` in row-major order; `w(k)·h^N` is the mass carried by
/// offset `k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteKernel {
    dim: usize,
    spacing: f64,
    radius_cells: usize,
    support_radius: f64,
    weights: Vec<f64>,
    masses: Vec<f64>,
    raw_mass: f64,
}

/// Samples `kernel` at lattice offsets `k·h` and renormalizes.
pub fn discretize_kernel(kernel: &Kernel, spacing: f64) -> Result<DiscreteKernel> {
    if !(spacing > 0.0 && spacing.is_finite()) {
        return Err(invalid("grid.spacing", format!("must be positive, got {spacing}")));
    }
    let rho = kernel.support_radius;
    let cells_per_radius = rho / spacing;
    if cells_per_radius < 4.0 * (1.0 - 1e-12) {
        return Err(Error::CoarseStencil { cells_per_radius });
    }
    // largest k with k·h strictly inside the support
    let radius_cells = (cells_per_radius * (1.0 - 1e-12)).floor() as usize;
    let dim = kernel.dim;
    let side = 2 * radius_cells + 1;
    let count = side.pow(dim as u32);
    let cell_volume = spacing.powi(dim as i32);

    let mut raw = Vec::with_capacity(count);
    for flat in 0..count {
        let offset = unflatten_offset(flat, side, radius_cells, dim);
        let r2: f64 = offset.iter().take(dim).map(|&k| (k as f64 * spacing).powi(2)).sum();
        raw.push(kernel.radial(r2.sqrt()));
    }
    let raw_sum: f64 = raw.iter().sum();
    let raw_mass = raw_sum * cell_volume;
    if !(raw_sum > 0.0 && raw_sum.is_finite()) {
        return Err(Error::QuadratureFailure);
    }
    let masses: Vec<f64> = raw.iter().map(|w| w / raw_sum).collect();
    let weights = masses.iter().map(|m| m / cell_volume).collect();
    Ok(DiscreteKernel {
        dim,
        spacing,
        radius_cells,
        support_radius: rho,
        weights,
        masses,
        raw_mass,
    })
}

fn unflatten_offset(mut flat: usize, side: usize, r: usize, dim: usize) -> [isize; 3] {
    let mut out = [0isize; 3];
    for d in (0..dim).rev() {
        out[d] = (flat % side) as isize - r as isize;
        flat /= side;
    }
    out
}

impl DiscreteKernel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    /// Largest offset (in cells, per axis) with a nonzero weight.
    pub fn radius_cells(&self) -> usize {
        self.radius_cells
    }

    pub fn support_radius(&self) -> f64 {
        self.support_radius
    }

    /// Weight densities over the offset cube, row-major.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Sampled mass before renormalization (`Σ raw·h^N`).
    pub fn raw_mass(&self) -> f64 {
        self.raw_mass
    }

    /// `Σ w(k)·h^N` after renormalization.
    pub fn renormalized_sum(&self) -> f64 {
        self.masses.iter().sum()
    }

    pub fn side(&self) -> usize {
        2 * self.radius_cells + 1
    }

    /// Weight density at an offset; zero outside the stencil cube.
    pub fn weight(&self, offset: &[isize]) -> f64 {
        self.flat_index(offset).map_or(0.0, |i| self.weights[i])
    }

    /// Mass `w(k)·h^N` at an offset.
    pub fn mass_at(&self, offset: &[isize]) -> f64 {
        self.flat_index(offset).map_or(0.0, |i| self.masses[i])
    }

    fn flat_index(&self, offset: &[isize]) -> Option<usize> {
        let r = self.radius_cells as isize;
        let side = self.side();
        let mut flat = 0usize;
        for d in 0..self.dim {
            let k = offset.get(d).copied().unwrap_or(0);
            if k.abs() > r {
                return None;
            }
            flat = flat * side + (k + r) as usize;
        }
        Some(flat)
    }

    /// Nonzero taps as `(offset, w·h^N)`, in row-major offset order.
    pub fn taps(&self) -> Vec<([isize; 3], f64)> {
        let side = self.side();
        self.masses
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(|(flat, &m)| (unflatten_offset(flat, side, self.radius_cells, self.dim), m))
            .collect()
    }

    /// `Σ w(k) |k h|² h^N / (2N)`.
    pub fn discrete_diffusivity(&self) -> f64 {
        let second: f64 = self
            .taps()
            .iter()
            .map(|(k, m)| {
                let r2: f64 = k
                    .iter()
                    .take(self.dim)
                    .map(|&c| (c as f64 * self.spacing).powi(2))
                    .sum();
                m * r2
            })
            .sum();
        second / (2.0 * self.dim as f64)
    }
}
