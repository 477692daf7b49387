//! Principal Dirichlet eigenpairs of `−𝓛` on balls and the Laplacian
//! references they converge to after rescaling.
//!
//! The eigenproblem is solved by power iteration on the map
//! `u ↦ (J∗u)|_{B_R}`, which preserves positivity. Its dominant eigenvalue
//! `μ` gives `Λ_R = 1 − μ`. Iterates are normalized in the sup norm, so the
//! returned eigenfunction has maximum exactly one.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::grid::{norm, BallMask, ExteriorRule, Field, Grid, Point};
use crate::kernel::DiscreteKernel;
use crate::nonlocal_op::{check_compatible, rayleigh_quotient, ConvolutionMethod, Convolver};
use crate::special::{bessel_j0, bessel_j1, j0_first_zero};

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// Principal Dirichlet eigenpair of the Laplacian on the unit ball,
/// normalized so that `h₁(0) = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LaplaceReference {
    dim: usize,
    lambda1: f64,
    root: f64,
}

pub fn laplace_reference(dim: usize) -> Result<LaplaceReference> {
    let root = match dim {
        1 => 0.5 * PI,
        2 => j0_first_zero(),
        3 => PI,
        _ => return Err(invalid("dim", format!("no reference for dimension {dim}"))),
    };
    Ok(LaplaceReference {
        dim,
        lambda1: root * root,
        root,
    })
}

impl LaplaceReference {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lambda1(&self) -> f64 {
        self.lambda1
    }

    /// Radial profile `η` with `h₁(x) = η(|x|)`.
    pub fn eta(&self, r: f64) -> f64 {
        let z = self.root * r;
        match self.dim {
            1 => z.cos(),
            2 => bessel_j0(z),
            _ => {
                if z.abs() < 1e-4 {
                    1.0 - z * z / 6.0
                } else {
                    z.sin() / z
                }
            }
        }
    }

    pub fn eta_prime(&self, r: f64) -> f64 {
        let z = self.root * r;
        match self.dim {
            1 => -self.root * z.sin(),
            2 => -self.root * bessel_j1(z),
            _ => {
                if z.abs() < 1e-4 {
                    -self.root * z / 3.0
                } else {
                    self.root * (z * z.cos() - z.sin()) / (z * z)
                }
            }
        }
    }

    /// `h₁` extended by zero outside the unit ball.
    pub fn h1(&self, x: &[f64]) -> f64 {
        let r = x.iter().take(self.dim).map(|c| c * c).sum::<f64>().sqrt();
        if r >= 1.0 {
            0.0
        } else {
            self.eta(r)
        }
    }

    /// `sup |η'|` on `[0, 1]`, sampled on 10⁴ panels.
    pub fn eta_prime_sup(&self) -> f64 {
        (0..=10_000)
            .map(|i| self.eta_prime(i as f64 / 10_000.0).abs())
            .fold(0.0, f64::max)
    }
}

/// Principal eigenpair of `−𝓛` on `B_R` with zero volume constraint.
///
/// The eigenfunction lives on the smallest box of the solve grid's spacing
/// that holds `B_{R+ρ}`; it is zero outside `B_R`.
#[derive(Clone, Debug)]
pub struct EigenPair {
    pub radius: f64,
    pub lambda: f64,
    pub eigenfunction: Field,
    pub residual: f64,
    pub iterations: usize,
}

impl EigenPair {
    pub fn grid(&self) -> &Grid {
        self.eigenfunction.grid()
    }

    pub fn mask(&self) -> BallMask {
        BallMask::new(self.grid(), self.radius)
    }

    /// `H_R` at a lattice point of the same spacing; zero off the box.
    pub fn value_at_lattice(&self, lattice: &[isize]) -> f64 {
        self.grid()
            .flat_index_signed(lattice)
            .map_or(0.0, |i| self.eigenfunction.values()[i])
    }

    /// `H_R` sampled on a larger (or smaller) grid of the same spacing.
    pub fn embed(&self, grid: &Grid) -> Result<Field> {
        if !grid.compatible_with(self.grid()) {
            return Err(Error::SpacingMismatch {
                field: grid.spacing(),
                kernel: self.grid().spacing(),
            });
        }
        let values = (0..grid.len())
            .map(|i| self.value_at_lattice(&grid.lattice(i)))
            .collect();
        Field::new(*grid, values, ExteriorRule::Zero)
    }

    /// Multilinear interpolation of `H_R` at an arbitrary point.
    pub fn interpolate(&self, y: &Point) -> f64 {
        let grid = self.grid();
        let dim = grid.dim();
        let h = grid.spacing();
        let mut base = [0isize; 3];
        let mut theta = [0.0; 3];
        for d in 0..dim {
            let s = y[d] / h;
            let f = s.floor();
            base[d] = f as isize;
            theta[d] = s - f;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << dim) {
            let mut weight = 1.0;
            let mut lattice = base;
            for d in 0..dim {
                if corner >> d & 1 == 1 {
                    lattice[d] += 1;
                    weight *= theta[d];
                } else {
                    weight *= 1.0 - theta[d];
                }
            }
            if weight != 0.0 {
                acc += weight * self.value_at_lattice(&lattice);
            }
        }
        acc
    }
}

/// Computes `(Λ_R, H_R)` by sup-normalized power iteration from the
/// constant one on the mask.
///
/// Stops once successive iterates differ by less than `tol` in the sup norm
/// and the eigen-residual is below `tol`. The eigenvalue is then polished
/// with the Rayleigh quotient of the final iterate.
pub fn principal_eigenpair(
    dk: &DiscreteKernel,
    grid: &Grid,
    radius: f64,
    tol: f64,
    max_iter: usize,
) -> Result<EigenPair> {
    check_compatible(grid, dk)?;
    if !(radius > 0.0 && tol > 0.0) {
        return Err(invalid("radius", "radius and tolerance must be positive"));
    }
    let h = grid.spacing();
    let required = radius + dk.support_radius();
    if required > grid.half_width() * (1.0 + 1e-12) {
        return Err(Error::DomainTooSmall {
            radius,
            required,
            available: grid.half_width(),
        });
    }
    let half_count = ((required / h) * (1.0 - 1e-12)).ceil() as usize;
    let sub = Grid::from_half_count(grid.dim(), half_count.clamp(1, grid.half_count()), h)?;
    let mask = BallMask::new(&sub, radius);
    if mask.count() == 0 {
        return Err(Error::EmptyBall { radius });
    }
    let conv = Convolver::new(&sub, dk, ConvolutionMethod::Direct)?;
    let mut ws = conv.workspace(&ExteriorRule::Zero);
    let inside = mask.inside();

    let mut u: Vec<f64> = inside.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
    let mut v = vec![0.0; u.len()];
    let (mut delta, mut residual) = (f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        conv.apply(&u, &mut ws, &mut v);
        let (mut uv, mut uu, mut vmax) = (0.0, 0.0, 0.0f64);
        for ((vi, &ui), &b) in v.iter_mut().zip(&u).zip(inside) {
            if b {
                uv += ui * *vi;
                uu += ui * ui;
                vmax = vmax.max(*vi);
            } else {
                *vi = 0.0;
            }
        }
        if !(vmax > f64::MIN_POSITIVE && vmax.is_finite()) {
            return Err(Error::Collapse);
        }
        let mu = uv / uu;
        let inv = 1.0 / vmax;
        residual = 0.0;
        delta = 0.0;
        for (ui, &vi) in u.iter_mut().zip(&v) {
            residual = residual.max((vi - mu * *ui).abs());
            let next = vi * inv;
            delta = delta.max((next - *ui).abs());
            *ui = next;
        }
        if delta < tol && residual < tol {
            break;
        }
    }
    if !(delta < tol && residual < tol) {
        return Err(Error::NoConvergence {
            iterations,
            delta,
            residual,
        });
    }
    if mask.indices().any(|i| u[i] <= 0.0) {
        return Err(Error::Collapse);
    }

    let eigenfunction = Field::new(sub, u, ExteriorRule::Zero)?;
    let lambda = rayleigh_quotient(&eigenfunction, dk, &mask)?;
    conv.apply(eigenfunction.values(), &mut ws, &mut v);
    let residual = mask
        .indices()
        .map(|i| {
            let hv = eigenfunction.values()[i];
            (hv - v[i] - lambda * hv).abs()
        })
        .fold(0.0, f64::max);
    Ok(EigenPair {
        radius,
        lambda,
        eigenfunction,
        residual,
        iterations,
    })
}

/// Eigenpairs for every radius, solved concurrently and sorted by radius.
pub fn eigen_sweep(
    dk: &DiscreteKernel,
    grid: &Grid,
    radii: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<Vec<EigenPair>> {
    let mut sorted = radii.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .par_iter()
        .map(|&r| principal_eigenpair(dk, grid, r, tol, max_iter))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingRow {
    pub radius: f64,
    pub lambda: f64,
    pub r2_lambda: f64,
    /// `|R²Λ_R − A(J)λ₁|`.
    pub gap: f64,
}

pub fn scaling_table(eigenpairs: &[EigenPair], target: f64) -> Vec<ScalingRow> {
    let mut rows: Vec<ScalingRow> = eigenpairs
        .iter()
        .map(|ep| {
            let r2_lambda = ep.radius * ep.radius * ep.lambda;
            ScalingRow {
                radius: ep.radius,
                lambda: ep.lambda,
                r2_lambda,
                gap: (r2_lambda - target).abs(),
            }
        })
        .collect();
    rows.sort_by(|a, b| a.radius.total_cmp(&b.radius));
    rows
}

/// `(R, Λ_R, R²Λ_R)` over a radius sweep, with the gap to `target = A(J)λ₁`.
pub fn eigen_scaling_curve(
    dk: &DiscreteKernel,
    grid: &Grid,
    radii: &[f64],
    target: f64,
    tol: f64,
    max_iter: usize,
) -> Result<Vec<ScalingRow>> {
    Ok(scaling_table(&eigen_sweep(dk, grid, radii, tol, max_iter)?, target))
}

/// `H̃_R(x) = H_R(Rx)` on a grid spanning `[−1, 1]^N`.
#[derive(Clone, Debug)]
pub struct Rescaled {
    pub field: Field,
    /// The target grid resolves finer than the source nodes do.
    pub finer_than_source: bool,
}

pub fn rescale_eigenfunction(ep: &EigenPair, target: &Grid) -> Result<Rescaled> {
    if (target.half_width() - 1.0).abs() > 1e-9 || target.dim() != ep.grid().dim() {
        return Err(invalid(
            "target_grid",
            "must span [-1, 1]^N in the eigenfunction's dimension",
        ));
    }
    let r = ep.radius;
    let values = (0..target.len())
        .map(|i| {
            let x = target.point(i);
            if norm(&x) >= 1.0 {
                return 0.0;
            }
            ep.interpolate(&[r * x[0], r * x[1], r * x[2]])
        })
        .collect();
    Ok(Rescaled {
        field: Field::new(*target, values, ExteriorRule::Zero)?,
        finer_than_source: target.spacing() * r < ep.grid().spacing() * (1.0 - 1e-12),
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub radius: f64,
    /// `sup_{B₁} |H̃_R − h₁|`.
    pub sup_err: f64,
    /// `sup H̃_R` over `0.9 < |x| < 1`.
    pub collar_sup: f64,
}

/// Uniform distance between rescaled eigenfunctions and `h₁`.
pub fn eigen_convergence_report(
    eigenpairs: &[EigenPair],
    reference: &LaplaceReference,
    target: &Grid,
) -> Result<Vec<ConvergenceRow>> {
    let mut rows = Vec::with_capacity(eigenpairs.len());
    for ep in eigenpairs {
        let rescaled = rescale_eigenfunction(ep, target)?.field;
        let (mut sup_err, mut collar_sup) = (0.0f64, 0.0f64);
        for (i, x) in target.points().enumerate() {
            let r = norm(&x);
            if r >= 1.0 {
                continue;
            }
            let v = rescaled.values()[i];
            sup_err = sup_err.max((v - reference.h1(&x[..target.dim()])).abs());
            if r > 0.9 {
                collar_sup = collar_sup.max(v);
            }
        }
        rows.push(ConvergenceRow {
            radius: ep.radius,
            sup_err,
            collar_sup,
        });
    }
    rows.sort_by(|a, b| a.radius.total_cmp(&b.radius));
    Ok(rows)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierFit {
    /// Smallest `C` with `H_R ≤ C·(η(|x|/2R) − η(1/2) + C₀/R)` on the mask.
    pub c_fit: f64,
    pub c0: f64,
    pub max_violation: f64,
}

/// Fits the upper barrier `C{η(|x|/2R) − η(1/2) + C₀/R}` with
/// `C₀ = sup|η'|` on `[0, 1]`.
pub fn upper_barrier_fit(ep: &EigenPair, reference: &LaplaceReference) -> Result<BarrierFit> {
    let c0 = reference.eta_prime_sup();
    let r = ep.radius;
    let grid = ep.grid();
    let eta_half = reference.eta(0.5);
    let barrier = |i: usize| reference.eta(norm(&grid.point(i)) / (2.0 * r)) - eta_half + c0 / r;
    let mask = ep.mask();
    let mut c_fit = 0.0f64;
    for i in mask.indices() {
        let b = barrier(i);
        if b <= 0.0 {
            return Err(Error::DegenerateBarrier { index: i, value: b });
        }
        c_fit = c_fit.max(ep.eigenfunction.values()[i] / b);
    }
    let max_violation = mask
        .indices()
        .map(|i| ep.eigenfunction.values()[i] - c_fit * barrier(i))
        .fold(0.0, f64::max);
    Ok(BarrierFit {
        c_fit,
        c0,
        max_violation,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AnnulusBound {
    /// `R · max (J∗H_R)` over `R ≤ |x| < R + ρ`.
    pub k_fit: f64,
    pub annulus_max: f64,
    pub annulus_nodes: usize,
}

pub fn annulus_bound_check(ep: &EigenPair, dk: &DiscreteKernel) -> Result<AnnulusBound> {
    let grid = ep.grid();
    let conv = Convolver::new(grid, dk, ConvolutionMethod::Direct)?;
    let mut ws = conv.workspace(&ExteriorRule::Zero);
    let mut out = vec![0.0; grid.len()];
    conv.apply(ep.eigenfunction.values(), &mut ws, &mut out);
    let (inner, outer) = (ep.radius, ep.radius + dk.support_radius());
    let mut annulus_max = 0.0f64;
    let mut annulus_nodes = 0;
    for (i, x) in grid.points().enumerate() {
        let r = norm(&x);
        if r >= inner && r < outer {
            annulus_nodes += 1;
            annulus_max = annulus_max.max(out[i]);
        }
    }
    if annulus_nodes == 0 {
        return Err(Error::EmptyAnnulus { inner, outer });
    }
    Ok(AnnulusBound {
        k_fit: ep.radius * annulus_max,
        annulus_max,
        annulus_nodes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use crate::kernel::{discretize_kernel, make_kernel, KernelFamily};
    use crate::nonlocal_op::{convolve, rayleigh_quotient};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference_kernel(h: f64) -> DiscreteKernel {
        discretize_kernel(&make_kernel(KernelFamily::PolynomialBump, 1.0, 1).unwrap(), h).unwrap()
    }

    fn solve(h: f64, hw: f64, r: f64) -> (DiscreteKernel, EigenPair) {
        let dk = reference_kernel(h);
        let g = make_grid(1, hw, h).unwrap();
        let ep = principal_eigenpair(&dk, &g, r, DEFAULT_TOLERANCE, DEFAULT_MAX_ITER).unwrap();
        (dk, ep)
    }

    #[test]
    fn reference_eigenvalues() {
        let r1 = laplace_reference(1).unwrap();
        assert!((r1.lambda1() - PI * PI / 4.0).abs() < 1e-15);
        assert!((r1.lambda1() - 2.467401).abs() < 1e-6);
        let r2 = laplace_reference(2).unwrap();
        assert!((r2.lambda1() - 5.783186).abs() < 1e-6);
        let r3 = laplace_reference(3).unwrap();
        assert_eq!(r3.h1(&[0.0, 0.0, 0.0]), 1.0);
        assert!((r3.lambda1() - PI * PI).abs() < 1e-15);
        assert!(laplace_reference(4).is_err());
    }

    // Finite-difference oracle: smallest eigenvalue of −d²/dx² on (−1, 1)
    // with 2000 interior nodes, via bisection on the Sturm sequence of the
    // tridiagonal matrix.
    #[test]
    fn one_dimensional_eigenvalue_against_finite_differences() {
        let n = 2000usize;
        let h = 2.0 / (n + 1) as f64;
        let (diag, off) = (2.0 / (h * h), -1.0 / (h * h));
        let count_below = |x: f64| {
            let mut count = 0;
            let mut d = diag - x;
            if d < 0.0 {
                count += 1;
            }
            for _ in 1..n {
                d = diag - x - off * off / d;
                if d < 0.0 {
                    count += 1;
                }
            }
            count
        };
        let (mut lo, mut hi) = (0.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if count_below(mid) >= 1 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let fd = 0.5 * (lo + hi);
        assert!((fd - laplace_reference(1).unwrap().lambda1()).abs() < 1e-5, "{fd}");
    }

    // Radial finite-difference oracle in 2D: −(η'' + η'/r) on (0, 1) with a
    // symmetric discretization (Neumann at 0, Dirichlet at 1).
    #[test]
    fn two_dimensional_eigenvalue_against_radial_finite_differences() {
        let n = 4000usize;
        let h = 1.0 / n as f64;
        // unknowns at r_i = (i + ½)h, i = 0..n
        // −(1/r)(r u')' ≈ −[r_{i+½}(u_{i+1} − u_i) − r_{i−½}(u_i − u_{i−1})] / (r_i h²)
        let r = |i: usize| (i as f64 + 0.5) * h;
        // symmetrized by √r: D^{1/2} A D^{-1/2}
        let mut diag = vec![0.0; n];
        let mut off = vec![0.0; n];
        for i in 0..n {
            let rp = r(i) + 0.5 * h;
            let rm = r(i) - 0.5 * h;
            diag[i] = (rp + rm) / (r(i) * h * h);
            if i + 1 == n {
                // ghost node mirrors u across r = 1
                diag[i] += rp / (r(i) * h * h);
            }
            if i + 1 < n {
                off[i] = -rp / (h * h * (r(i) * r(i + 1)).sqrt());
            }
        }
        let count_below = |x: f64| {
            let mut count = 0;
            let mut d = diag[0] - x;
            if d < 0.0 {
                count += 1;
            }
            for i in 1..n {
                d = diag[i] - x - off[i - 1] * off[i - 1] / d;
                if d < 0.0 {
                    count += 1;
                }
            }
            count
        };
        let (mut lo, mut hi) = (0.0, 20.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if count_below(mid) >= 1 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        let fd = 0.5 * (lo + hi);
        assert!((fd - laplace_reference(2).unwrap().lambda1()).abs() < 1e-5, "{fd}");
    }

    #[test]
    fn reference_eigenfunctions_satisfy_the_pde() {
        let d = 1e-4;
        for dim in 1..=3 {
            let rf = laplace_reference(dim).unwrap();
            for &(a, b) in &[(0.1, 0.2), (0.3, -0.25), (-0.5, 0.1), (0.05, 0.6), (0.45, 0.45)] {
                let mut x = [a, b, 0.15];
                if dim == 1 {
                    x = [a, 0.0, 0.0];
                }
                let f = |y: &[f64; 3]| rf.h1(&y[..dim]);
                let mut lap = 0.0;
                for axis in 0..dim {
                    let mut p = x;
                    let mut m = x;
                    p[axis] += d;
                    m[axis] -= d;
                    lap += (f(&p) - 2.0 * f(&x) + f(&m)) / (d * d);
                }
                let rhs = rf.lambda1() * f(&x);
                assert!((-lap - rhs).abs() <= 1e-6 * rhs.abs().max(1.0), "dim {dim} at {x:?}");
            }
            assert_eq!(rf.h1(&[0.0; 3][..dim]), 1.0);
            assert!(rf.eta(1.0).abs() < 1e-12);
            let samples: Vec<f64> = (0..=100).map(|i| rf.eta(i as f64 / 100.0)).collect();
            assert!(samples.windows(2).all(|w| w[1] <= w[0]));
            assert!(samples[..100].iter().all(|&v| v > 0.0));
            // η' against central differences
            for &r in &[0.2, 0.5, 0.9] {
                let fd = (rf.eta(r + 1e-6) - rf.eta(r - 1e-6)) / 2e-6;
                assert!((fd - rf.eta_prime(r)).abs() < 1e-7);
            }
        }
        assert!((laplace_reference(1).unwrap().eta_prime_sup() - PI / 2.0).abs() < 1e-12);
    }

    #[test]
    fn eigenpair_invariants_small() {
        let (dk, ep) = solve(0.25, 8.0, 5.0);
        assert!(ep.lambda > 0.0 && ep.lambda < 1.0);
        assert!(ep.residual <= DEFAULT_TOLERANCE);
        let mask = ep.mask();
        assert!(mask.indices().all(|i| ep.eigenfunction.values()[i] > 0.0));
        assert_eq!(ep.eigenfunction.sup(), 1.0);
        assert!((0..ep.grid().len())
            .filter(|&i| !mask.contains(i))
            .all(|i| ep.eigenfunction.values()[i] == 0.0));
        let q = rayleigh_quotient(&ep.eigenfunction, &dk, &mask).unwrap();
        assert!((q - ep.lambda).abs() <= 10.0 * DEFAULT_TOLERANCE);
    }

    fn dense_oracle(dk: &DiscreteKernel, ep: &EigenPair) -> (f64, Vec<f64>) {
        let g = ep.grid();
        let nodes: Vec<usize> = ep.mask().indices().collect();
        let n = nodes.len();
        let a = nalgebra::DMatrix::from_fn(n, n, |i, j| {
            let (li, lj) = (g.lattice(nodes[i]), g.lattice(nodes[j]));
            let off = [li[0] - lj[0], li[1] - lj[1], li[2] - lj[2]];
            dk.mass_at(&off[..g.dim()])
        });
        let eig = nalgebra::SymmetricEigen::new(a);
        let top = eig.eigenvalues.imax();
        let col = eig.eigenvectors.column(top);
        let scale = col
            .iter()
            .copied()
            .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
        (1.0 - eig.eigenvalues[top], col.iter().map(|v| v / scale).collect())
    }

    #[test]
    fn power_iteration_matches_dense_eigensolver() {
        let (dk, ep) = solve(0.25, 8.0, 5.0);
        let (lambda, vector) = dense_oracle(&dk, &ep);
        assert!((ep.lambda - lambda).abs() <= 1e-9, "{} vs {lambda}", ep.lambda);
        for (k, i) in ep.mask().indices().enumerate() {
            assert!((ep.eigenfunction.values()[i] - vector[k]).abs() <= 1e-6);
        }

        let dk2 = discretize_kernel(&make_kernel(KernelFamily::SmoothBump, 1.0, 2).unwrap(), 0.25).unwrap();
        let g2 = make_grid(2, 4.0, 0.25).unwrap();
        let ep2 = principal_eigenpair(&dk2, &g2, 2.5, 1e-11, DEFAULT_MAX_ITER).unwrap();
        let (lambda2, vector2) = dense_oracle(&dk2, &ep2);
        assert!((ep2.lambda - lambda2).abs() <= 1e-9);
        for (k, i) in ep2.mask().indices().enumerate() {
            assert!((ep2.eigenfunction.values()[i] - vector2[k]).abs() <= 1e-6);
        }
    }

    #[test]
    fn random_positive_fields_have_larger_quotients() {
        let (dk, ep) = solve(0.1, 12.0, 10.0);
        let mask = ep.mask();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let values = (0..ep.grid().len())
                .map(|i| {
                    if mask.contains(i) {
                        rng.random_range(0.01..1.0)
                    } else {
                        0.0
                    }
                })
                .collect();
            let f = Field::new(*ep.grid(), values, ExteriorRule::Zero).unwrap();
            assert!(rayleigh_quotient(&f, &dk, &mask).unwrap() >= ep.lambda);
        }
    }

    #[test]
    fn eigenvalue_decreases_with_radius() {
        let dk = reference_kernel(0.1);
        let g = make_grid(1, 45.0, 0.1).unwrap();
        let eps = eigen_sweep(&dk, &g, &[20.0, 10.0, 40.0], 1e-9, DEFAULT_MAX_ITER).unwrap();
        assert_eq!(eps.iter().map(|e| e.radius).collect::<Vec<_>>(), vec![10.0, 20.0, 40.0]);
        assert!(eps[0].lambda > eps[1].lambda && eps[1].lambda > eps[2].lambda);
        let target = PI * PI / 56.0;
        let rows = scaling_table(&eps, target);
        assert!(rows.iter().all(|r| r.r2_lambda > 0.0));
        assert!(rows[0].gap > rows[1].gap && rows[1].gap > rows[2].gap);
        // 10% at R = 20
        assert!(rows[1].gap / target < 0.1);
    }

    #[test]
    fn refinement_changes_eigenvalue_little() {
        let (_, coarse) = solve(0.1, 12.0, 10.0);
        let (_, fine) = solve(0.05, 12.0, 10.0);
        assert!(((coarse.lambda - fine.lambda) / fine.lambda).abs() <= 0.01);
    }

    #[test]
    fn eigenfunction_is_symmetric_and_rescales() {
        let (_, ep) = solve(0.1, 12.0, 10.0);
        let g = ep.grid();
        for i in 0..g.len() {
            let k = g.lattice(i);
            let mirror = ep.value_at_lattice(&[-k[0]]);
            assert!((ep.eigenfunction.values()[i] - mirror).abs() < 1e-9);
        }
        let target = make_grid(1, 1.0, 0.02).unwrap();
        let rescaled = rescale_eigenfunction(&ep, &target).unwrap();
        assert!(!rescaled.finer_than_source);
        assert!((rescaled.field.values()[target.origin_index()] - 1.0).abs() < 1e-3);
        for (i, x) in target.points().enumerate() {
            if norm(&x) >= 1.0 {
                assert_eq!(rescaled.field.values()[i], 0.0);
            }
        }
        let fine = make_grid(1, 1.0, 0.005).unwrap();
        assert!(rescale_eigenfunction(&ep, &fine).unwrap().finer_than_source);
        assert!(rescale_eigenfunction(&ep, &make_grid(1, 2.0, 0.01).unwrap()).is_err());
    }

    #[test]
    fn domain_must_hold_ball_and_support() {
        let dk = reference_kernel(0.1);
        let g = make_grid(1, 10.0, 0.1).unwrap();
        assert!(matches!(
            principal_eigenpair(&dk, &g, 9.5, 1e-10, 100),
            Err(Error::DomainTooSmall { .. })
        ));
        assert!(matches!(
            principal_eigenpair(&dk, &g, 5.0, 1e-10, 3),
            Err(Error::NoConvergence { .. })
        ));
    }

    #[test]
    fn barrier_fit_and_annulus_bound() {
        let (dk, ep) = solve(0.1, 12.0, 10.0);
        let rf = laplace_reference(1).unwrap();
        let fit = upper_barrier_fit(&ep, &rf).unwrap();
        assert_eq!(fit.max_violation, 0.0);
        assert!((fit.c0 - PI / 2.0).abs() < 1e-12);
        // at the origin the barrier must dominate H_R(0) = 1
        let b0 = 1.0 - rf.eta(0.5) + fit.c0 / 10.0;
        assert!(fit.c_fit * b0 >= 1.0 - 1e-12);

        let bound = annulus_bound_check(&ep, &dk).unwrap();
        assert!(bound.annulus_max > 0.0 && bound.annulus_nodes > 0);

        // J∗H_R vanishes beyond R + ρ
        let big = make_grid(1, 14.0, 0.1).unwrap();
        let ju = convolve(&ep.embed(&big).unwrap(), &dk, ConvolutionMethod::Direct).unwrap();
        for (i, x) in big.points().enumerate() {
            if norm(&x) >= 11.0 {
                assert_eq!(ju.values()[i], 0.0);
            }
        }
    }

    #[test]
    fn two_dimensional_eigenpair() {
        let dk = discretize_kernel(&make_kernel(KernelFamily::PolynomialBump, 1.0, 2).unwrap(), 0.25).unwrap();
        let g = make_grid(2, 5.0, 0.25).unwrap();
        let ep = principal_eigenpair(&dk, &g, 3.0, 1e-10, DEFAULT_MAX_ITER).unwrap();
        assert!(ep.lambda > 0.0 && ep.lambda < 1.0);
        let mask = ep.mask();
        assert!(mask.indices().all(|i| ep.eigenfunction.values()[i] > 0.0));
        // fourfold symmetry
        let gg = ep.grid();
        for i in 0..gg.len() {
            let k = gg.lattice(i);
            let v = ep.eigenfunction.values()[i];
            assert!((v - ep.value_at_lattice(&[k[1], k[0]])).abs() < 1e-9);
            assert!((v - ep.value_at_lattice(&[-k[0], k[1]])).abs() < 1e-9);
        }
    }
}
