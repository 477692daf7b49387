//! The nonlocal operator `𝓛u = J∗u − u`.
//!
//! Convolutions read the field through a padded buffer whose collar (one
//! stencil radius wide) holds the exterior-rule values. The collar is
//! filled once per [`Workspace`]; each application copies the interior in.
//! Two evaluation paths share that layout: a direct stencil sum and a
//! circular FFT over the padded box. The collar is at least as wide as the
//! stencil, so wrap-around never reaches interior outputs.

use std::sync::Arc;

use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{same_spacing, BallMask, ExteriorRule, Field, Grid};
use crate::kernel::DiscreteKernel;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvolutionMethod {
    #[default]
    Direct,
    Fast,
}

const PAR_MIN_LEN: usize = 4096;

struct FftState {
    forward: Vec<Arc<dyn Fft<f64>>>,
    inverse: Vec<Arc<dyn Fft<f64>>>,
    spectrum: Vec<Complex64>,
}

/// Precomputed convolution of fields on one grid with one stencil.
pub struct Convolver {
    grid: Grid,
    pad: usize,
    padded_dims: Vec<usize>,
    taps: Vec<(isize, f64)>,
    bases: Vec<usize>,
    method: ConvolutionMethod,
    fft: Option<FftState>,
}

/// Padded buffer with the exterior collar filled in.
pub struct Workspace {
    buf: Vec<f64>,
}

pub(crate) fn check_compatible(grid: &Grid, dk: &DiscreteKernel) -> Result<()> {
    if grid.dim() != dk.dim() {
        return Err(Error::DimensionMismatch {
            field: grid.dim(),
            kernel: dk.dim(),
        });
    }
    if !same_spacing(grid.spacing(), dk.spacing()) {
        return Err(Error::SpacingMismatch {
            field: grid.spacing(),
            kernel: dk.spacing(),
        });
    }
    Ok(())
}

impl Convolver {
    pub fn new(grid: &Grid, dk: &DiscreteKernel, method: ConvolutionMethod) -> Result<Convolver> {
        check_compatible(grid, dk)?;
        let dim = grid.dim();
        let pad = dk.radius_cells();
        let n = grid.points_per_axis();
        let padded_dims = vec![n + 2 * pad; dim];
        let mut strides = vec![1usize; dim];
        for d in (0..dim.saturating_sub(1)).rev() {
            strides[d] = strides[d + 1] * padded_dims[d + 1];
        }
        let taps = dk
            .taps()
            .into_iter()
            .map(|(k, m)| {
                let off: isize = (0..dim).map(|d| k[d] * strides[d] as isize).sum();
                (off, m)
            })
            .collect();
        let bases = (0..grid.len())
            .map(|i| {
                let idx = grid.multi_index(i);
                (0..dim).map(|d| (idx[d] + pad) * strides[d]).sum()
            })
            .collect();
        let fft = match method {
            ConvolutionMethod::Direct => None,
            ConvolutionMethod::Fast => Some(build_fft(dk, &padded_dims)),
        };
        Ok(Convolver {
            grid: *grid,
            pad,
            padded_dims,
            taps,
            bases,
            method,
            fft,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn method(&self) -> ConvolutionMethod {
        self.method
    }

    /// Workspace whose collar holds `exterior` evaluated at the collar nodes.
    pub fn workspace(&self, exterior: &ExteriorRule) -> Workspace {
        let total: usize = self.padded_dims.iter().product();
        let mut buf = vec![0.0; total];
        if !matches!(exterior, ExteriorRule::Zero) {
            let dim = self.grid.dim();
            let hc = self.grid.half_count() as isize;
            let h = self.grid.spacing();
            for (p, slot) in buf.iter_mut().enumerate() {
                let mut rem = p;
                let mut x = [0.0; 3];
                let mut outside = false;
                for d in (0..dim).rev() {
                    let q = (rem % self.padded_dims[d]) as isize;
                    rem /= self.padded_dims[d];
                    let k = q - self.pad as isize - hc;
                    outside |= k.abs() > hc;
                    x[d] = k as f64 * h;
                }
                if outside {
                    *slot = exterior.eval(&x);
                }
            }
        }
        Workspace { buf }
    }

    /// `out = J∗u` with `u` given by `values` inside the box and by the
    /// workspace collar outside.
    pub fn apply(&self, values: &[f64], ws: &mut Workspace, out: &mut [f64]) {
        debug_assert_eq!(values.len(), self.grid.len());
        debug_assert_eq!(out.len(), self.grid.len());
        for (&b, &v) in self.bases.iter().zip(values) {
            ws.buf[b] = v;
        }
        match &self.fft {
            None => self.apply_direct(&ws.buf, out),
            Some(state) => self.apply_fft(state, &ws.buf, out),
        }
    }

    fn apply_direct(&self, buf: &[f64], out: &mut [f64]) {
        let taps = &self.taps;
        out.par_iter_mut()
            .with_min_len(PAR_MIN_LEN)
            .zip(self.bases.par_iter().with_min_len(PAR_MIN_LEN))
            .for_each(|(o, &b)| {
                let mut acc = 0.0;
                for &(off, m) in taps {
                    acc += m * buf[(b as isize - off) as usize];
                }
                *o = acc;
            });
    }

    fn apply_fft(&self, state: &FftState, buf: &[f64], out: &mut [f64]) {
        let mut data: Vec<Complex64> = buf.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft_nd(&mut data, &self.padded_dims, &state.forward);
        for (z, s) in data.iter_mut().zip(&state.spectrum) {
            *z *= s;
        }
        fft_nd(&mut data, &self.padded_dims, &state.inverse);
        let scale = 1.0 / data.len() as f64;
        for (o, &b) in out.iter_mut().zip(&self.bases) {
            *o = data[b].re * scale;
        }
    }
}

fn build_fft(dk: &DiscreteKernel, dims: &[usize]) -> FftState {
    let mut planner = FftPlanner::new();
    let forward: Vec<_> = dims.iter().map(|&n| planner.plan_fft_forward(n)).collect();
    let inverse: Vec<_> = dims.iter().map(|&n| planner.plan_fft_inverse(n)).collect();
    let total: usize = dims.iter().product();
    let mut spectrum = vec![Complex64::new(0.0, 0.0); total];
    for (k, m) in dk.taps() {
        let mut flat = 0usize;
        for (d, &n) in dims.iter().enumerate() {
            flat = flat * n + k[d].rem_euclid(n as isize) as usize;
        }
        spectrum[flat].re += m;
    }
    fft_nd(&mut spectrum, dims, &forward);
    FftState {
        forward,
        inverse,
        spectrum,
    }
}

/// In-place N-dimensional transform of a row-major array.
fn fft_nd(data: &mut [Complex64], dims: &[usize], plans: &[Arc<dyn Fft<f64>>]) {
    let dim = dims.len();
    for axis in 0..dim {
        let len = dims[axis];
        let stride: usize = dims[axis + 1..].iter().product();
        if stride == 1 {
            plans[axis].process(data);
            continue;
        }
        let block = len * stride;
        let mut line = vec![Complex64::new(0.0, 0.0); len];
        for start in (0..data.len()).step_by(block) {
            for offset in 0..stride {
                for (j, z) in line.iter_mut().enumerate() {
                    *z = data[start + offset + j * stride];
                }
                plans[axis].process(&mut line);
                for (j, z) in line.iter().enumerate() {
                    data[start + offset + j * stride] = *z;
                }
            }
        }
    }
}

/// `J∗u`, reading `u` through its exterior rule outside the box.
pub fn convolve(field: &Field, dk: &DiscreteKernel, method: ConvolutionMethod) -> Result<Field> {
    let conv = Convolver::new(field.grid(), dk, method)?;
    let mut ws = conv.workspace(field.exterior());
    let mut out = vec![0.0; field.grid().len()];
    conv.apply(field.values(), &mut ws, &mut out);
    Field::new(*field.grid(), out, field.exterior().clone())
}

/// `𝓛u = J∗u − u` by the direct path.
pub fn apply_l(field: &Field, dk: &DiscreteKernel) -> Result<Field> {
    apply_l_with(field, dk, ConvolutionMethod::Direct)
}

pub fn apply_l_with(field: &Field, dk: &DiscreteKernel, method: ConvolutionMethod) -> Result<Field> {
    let mut out = convolve(field, dk, method)?;
    for (o, u) in out.values_mut().iter_mut().zip(field.values()) {
        *o -= u;
    }
    Ok(out.with_exterior(ExteriorRule::Zero))
}

/// Tolerance for "zero outside the mask".
pub const MASK_TOLERANCE: f64 = 1e-14;

fn check_masked(field: &Field, mask: &BallMask) -> Result<()> {
    if field.grid() != mask.grid() {
        return Err(crate::error::invalid("mask", "mask and field live on different grids"));
    }
    let max_abs = field
        .values()
        .iter()
        .zip(mask.inside())
        .filter(|(_, &inside)| !inside)
        .fold(0.0f64, |m, (v, _)| m.max(v.abs()));
    if max_abs > MASK_TOLERANCE {
        return Err(Error::NotMasked { max_abs });
    }
    Ok(())
}

fn masked_values(field: &Field, mask: &BallMask) -> Vec<f64> {
    field
        .values()
        .iter()
        .zip(mask.inside())
        .map(|(&v, &inside)| if inside { v } else { 0.0 })
        .collect()
}

/// `𝓛u` for `u` extended by zero outside the ball; zero off the mask.
pub fn apply_dirichlet_l(field: &Field, dk: &DiscreteKernel, mask: &BallMask) -> Result<Field> {
    check_masked(field, mask)?;
    let u = masked_values(field, mask);
    let conv = Convolver::new(field.grid(), dk, ConvolutionMethod::Direct)?;
    let mut ws = conv.workspace(&ExteriorRule::Zero);
    let mut out = vec![0.0; u.len()];
    conv.apply(&u, &mut ws, &mut out);
    for ((o, &v), &inside) in out.iter_mut().zip(&u).zip(mask.inside()) {
        *o = if inside { *o - v } else { 0.0 };
    }
    Field::new(*field.grid(), out, ExteriorRule::Zero)
}

/// Discrete Rayleigh quotient
/// `½ ΣΣ w(k)h^N (u_i − u_{i−k})² / Σ u_i²` for `u` vanishing off the mask.
///
/// The double sum runs over every lattice point, including those beyond
/// the box where `u = 0`.
pub fn rayleigh_quotient(field: &Field, dk: &DiscreteKernel, mask: &BallMask) -> Result<f64> {
    check_compatible(field.grid(), dk)?;
    check_masked(field, mask)?;
    let grid = field.grid();
    let u = masked_values(field, mask);
    let denom: f64 = u.iter().map(|v| v * v).sum();
    if denom == 0.0 {
        return Err(Error::ZeroField);
    }
    let taps = dk.taps();
    let value_at = |lattice: &[isize; 3]| grid.flat_index_signed(lattice).map_or(0.0, |j| u[j]);

    // pairs with the first point inside the box
    let inside_sum: f64 = (0..grid.len())
        .into_par_iter()
        .with_min_len(PAR_MIN_LEN)
        .map(|i| {
            let x = grid.lattice(i);
            let ui = u[i];
            let mut acc = 0.0;
            for (k, m) in &taps {
                let y = [x[0] - k[0], x[1] - k[1], x[2] - k[2]];
                let d = ui - value_at(&y);
                acc += m * d * d;
            }
            acc
        })
        .sum();
    // pairs with the first point beyond the box and the second inside
    let outside_sum: f64 = (0..grid.len())
        .filter(|&j| u[j] != 0.0)
        .map(|j| {
            let y = grid.lattice(j);
            let leak: f64 = taps
                .iter()
                .filter(|(k, _)| {
                    grid.flat_index_signed(&[y[0] + k[0], y[1] + k[1], y[2] + k[2]])
                        .is_none()
                })
                .map(|(_, m)| m)
                .sum();
            leak * u[j] * u[j]
        })
        .sum();
    Ok(0.5 * (inside_sum + outside_sum) / denom)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, norm, sample_field};
    use crate::kernel::{discretize_kernel, make_kernel, KernelFamily};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reference(h: f64, dim: usize) -> DiscreteKernel {
        discretize_kernel(&make_kernel(KernelFamily::PolynomialBump, 1.0, dim).unwrap(), h).unwrap()
    }

    #[test]
    fn constants_are_reproduced() {
        let dk = reference(0.05, 1);
        let g = make_grid(1, 6.0, 0.05).unwrap();
        let c = sample_field(&g, |_| 3.0, ExteriorRule::Constant { value: 3.0 }).unwrap();
        for method in [ConvolutionMethod::Direct, ConvolutionMethod::Fast] {
            let lu = apply_l_with(&c, &dk, method).unwrap();
            assert!(lu.max_abs() < 1e-12, "{method:?}: {}", lu.max_abs());
        }
    }

    #[test]
    fn spike_spreads_into_stencil() {
        let dk = reference(0.25, 1);
        let g = make_grid(1, 3.0, 0.25).unwrap();
        let origin = g.origin_index();
        let spike = sample_field(&g, |x| if x[0] == 0.0 { 4.0 } else { 0.0 }, ExteriorRule::Zero).unwrap();
        let out = convolve(&spike, &dk, ConvolutionMethod::Direct).unwrap();
        for k in -5isize..=5 {
            let expected = dk.weight(&[k]);
            let got = out.values()[(origin as isize + k) as usize];
            assert!((got - expected).abs() < 1e-14, "offset {k}");
        }
    }

    #[test]
    fn direct_and_fast_agree_on_random_fields() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cases = [(1usize, 4.0, 0.05), (2, 2.0, 0.1), (3, 1.0, 0.2)];
        for (dim, hw, h) in cases {
            let dk = reference(h, dim);
            let g = make_grid(dim, hw, h).unwrap();
            let exterior = ExteriorRule::PowerTail {
                amplitude: 2.0,
                alpha: 0.7,
                cap: 1.5,
            };
            let direct = Convolver::new(&g, &dk, ConvolutionMethod::Direct).unwrap();
            let fast = Convolver::new(&g, &dk, ConvolutionMethod::Fast).unwrap();
            let mut wd = direct.workspace(&exterior);
            let mut wf = fast.workspace(&exterior);
            for _ in 0..10 {
                let u: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
                let mut a = vec![0.0; g.len()];
                let mut b = vec![0.0; g.len()];
                direct.apply(&u, &mut wd, &mut a);
                fast.apply(&u, &mut wf, &mut b);
                let scale = u.iter().fold(1.5f64, |m, v| m.max(v.abs()));
                let diff = a.iter().zip(&b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                assert!(diff <= 1e-12 * scale, "dim {dim}: {diff:e}");
            }
        }
    }

    #[test]
    fn mass_is_conserved_for_interior_support() {
        let dk = reference(0.05, 1);
        let g = make_grid(1, 8.0, 0.05).unwrap();
        let u = sample_field(
            &g,
            |x| (1.0 - (x[0] / 3.0).powi(2)).max(0.0) * (2.0 + x[0].sin()),
            ExteriorRule::Zero,
        )
        .unwrap();
        let lu = apply_l(&u, &dk).unwrap();
        assert!(lu.integral().abs() < 1e-12, "{}", lu.integral());
    }

    #[test]
    fn dirichlet_l_matches_full_operator_deep_inside() {
        let dk = reference(0.1, 1);
        let g = make_grid(1, 8.0, 0.1).unwrap();
        let mask = BallMask::new(&g, 5.0);
        let bump = sample_field(
            &g,
            |x| (1.0 - (x[0] / 3.5).powi(2)).max(0.0).powi(3),
            ExteriorRule::Zero,
        )
        .unwrap();
        let a = apply_dirichlet_l(&bump, &dk, &mask).unwrap();
        let b = apply_l(&bump, &dk).unwrap();
        for i in mask.indices() {
            assert!((a.values()[i] - b.values()[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn truncated_one_leaks_only_across_the_collar() {
        let dk = reference(0.1, 1);
        let g = make_grid(1, 8.0, 0.1).unwrap();
        let r = 5.0;
        let mask = BallMask::new(&g, r);
        let one = sample_field(&g, |x| if x[0].abs() < r { 1.0 } else { 0.0 }, ExteriorRule::Zero).unwrap();
        let lu = apply_dirichlet_l(&one, &dk, &mask).unwrap();
        for i in mask.indices() {
            let dist = r - norm(&g.point(i));
            let v = lu.values()[i];
            if dist <= 1.0 - 1e-9 {
                assert!(v < 0.0, "collar node at depth {dist} has {v}");
            } else {
                assert!(v.abs() < 1e-14, "deep node at depth {dist} has {v}");
            }
        }
    }

    #[test]
    fn nonnegative_data_spreads_positivity() {
        let dk = reference(0.1, 1);
        let g = make_grid(1, 8.0, 0.1).unwrap();
        let u = sample_field(&g, |x| if x[0].abs() < 0.5 { 1.0 } else { 0.0 }, ExteriorRule::Zero).unwrap();
        let ju = convolve(&u, &dk, ConvolutionMethod::Direct).unwrap();
        for (i, x) in g.points().enumerate() {
            if x[0].abs() < 0.5 + 1.0 - 0.15 {
                assert!(ju.values()[i] > 0.0, "x = {}", x[0]);
            }
        }
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let dk = reference(0.1, 1);
        let g = make_grid(1, 4.0, 0.05).unwrap();
        let u = Field::zeros(&g, ExteriorRule::Zero);
        assert!(matches!(
            convolve(&u, &dk, ConvolutionMethod::Direct),
            Err(Error::SpacingMismatch { .. })
        ));
        let g2 = make_grid(2, 4.0, 0.1).unwrap();
        let u2 = Field::zeros(&g2, ExteriorRule::Zero);
        assert!(matches!(apply_l(&u2, &dk), Err(Error::DimensionMismatch { .. })));

        let g3 = make_grid(1, 4.0, 0.1).unwrap();
        let mask = BallMask::new(&g3, 2.0);
        let wide = sample_field(&g3, |_| 1.0, ExteriorRule::Zero).unwrap();
        assert!(matches!(
            apply_dirichlet_l(&wide, &dk, &mask),
            Err(Error::NotMasked { .. })
        ));
        let zero = Field::zeros(&g3, ExteriorRule::Zero);
        assert!(matches!(rayleigh_quotient(&zero, &dk, &mask), Err(Error::ZeroField)));
    }

    #[test]
    fn single_node_quotient() {
        let dk = reference(0.25, 1);
        let g = make_grid(1, 3.0, 0.25).unwrap();
        let mask = BallMask::new(&g, 2.0);
        let spike = sample_field(&g, |x| if x[0] == 0.5 { 1.0 } else { 0.0 }, ExteriorRule::Zero).unwrap();
        let q = rayleigh_quotient(&spike, &dk, &mask).unwrap();
        let expected = 1.0 - dk.weight(&[0]) * 0.25;
        assert!((q - expected).abs() < 1e-14, "{q} vs {expected}");
    }

    #[test]
    fn quotient_counts_pairs_beyond_the_box() {
        // mask touching the box edge: the leak term must match a padded copy
        let dk = reference(0.25, 1);
        let small = make_grid(1, 2.0, 0.25).unwrap();
        let big = make_grid(1, 4.0, 0.25).unwrap();
        let f = |x: &[f64]| {
            if x[0].abs() < 2.0 {
                2.0 - x[0].abs() + 0.3 * x[0]
            } else {
                0.0
            }
        };
        let a = rayleigh_quotient(
            &sample_field(&small, f, ExteriorRule::Zero).unwrap(),
            &dk,
            &BallMask::new(&small, 2.0),
        )
        .unwrap();
        let b = rayleigh_quotient(
            &sample_field(&big, f, ExteriorRule::Zero).unwrap(),
            &dk,
            &BallMask::new(&big, 2.0),
        )
        .unwrap();
        assert!((a - b).abs() < 1e-14, "{a} vs {b}");
    }

    proptest! {
        #[test]
        fn operator_norm_is_at_most_two(seed in 0u64..10_000) {
            let dk = reference(0.1, 1);
            let g = make_grid(1, 3.0, 0.1).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<f64> = (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect();
            let sup = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let field = Field::new(g, u, ExteriorRule::Constant { value: 0.0 }).unwrap();
            let lu = apply_l(&field, &dk).unwrap();
            prop_assert!(lu.max_abs() <= 2.0 * sup + 1e-15);
        }

        #[test]
        fn quotient_identity_holds(seed in 0u64..10_000) {
            // ½ΣΣ m (u_i − u_j)² = Σu² − Σ u·(J∗u) when Σm = 1 and u vanishes near the edge
            let dk = reference(0.2, 1);
            let g = make_grid(1, 4.0, 0.2).unwrap();
            let mask = BallMask::new(&g, 2.5);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let u: Vec<f64> = (0..g.len())
                .map(|i| if mask.contains(i) { rng.random_range(0.0..1.0) } else { 0.0 })
                .collect();
            let field = Field::new(g, u.clone(), ExteriorRule::Zero).unwrap();
            let ju = convolve(&field, &dk, ConvolutionMethod::Direct).unwrap();
            let uu: f64 = u.iter().map(|v| v * v).sum();
            let uju: f64 = u.iter().zip(ju.values()).map(|(a, b)| a * b).sum();
            let q = rayleigh_quotient(&field, &dk, &mask).unwrap();
            prop_assert!((q - (uu - uju) / uu).abs() < 1e-12);
        }
    }
}
