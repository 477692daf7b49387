//! The split `F = e^{−t}δ + ω` of the fundamental solution of `∂_t − 𝓛`
//! and decay probes for `∇ω`.

use crate::error::{invalid, Error, Result};
use crate::grid::{norm, ExteriorRule, Field, Grid};
use crate::kernel::DiscreteKernel;
use crate::nonlocal_op::{ConvolutionMethod, Convolver};

pub const DEFAULT_MASS_BUDGET: f64 = 1e-8;
pub const DEFAULT_TIME_STEP: f64 = 0.05;

#[derive(Clone, Debug)]
pub struct OmegaSample {
    pub t: f64,
    /// Solution of `w_t = 𝓛w` from the unit-mass spike.
    pub w: Field,
    /// `w − e^{−t}δ`.
    pub omega: Field,
    pub mass: f64,
}

/// Integrates `w_t = 𝓛w` from the discrete delta with classical RK4 steps
/// and subtracts the atom `e^{−t}δ`.
pub fn omega_fields(
    dk: &DiscreteKernel,
    grid: &Grid,
    t_list: &[f64],
    dt: f64,
    mass_budget: f64,
) -> Result<Vec<OmegaSample>> {
    if grid.dim() > 2 {
        return Err(invalid(
            "dim",
            "the fundamental-solution probe supports dimensions 1 and 2",
        ));
    }
    if t_list.is_empty() || t_list[0] <= 0.0 || t_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("t_list", "must be positive and strictly increasing"));
    }
    if dt.is_nan() || dt <= 0.0 {
        return Err(invalid("dt", "must be positive"));
    }
    let conv = Convolver::new(grid, dk, ConvolutionMethod::Direct)?;
    let mut ws = conv.workspace(&ExteriorRule::Zero);
    let n = grid.len();
    let origin = grid.origin_index();
    let spike = 1.0 / grid.cell_volume();
    let mut w = vec![0.0; n];
    w[origin] = spike;

    let mut ju = vec![0.0; n];
    let mut stage = vec![0.0; n];
    let mut ks: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    let mut rhs = |u: &[f64], out: &mut Vec<f64>, ju: &mut Vec<f64>| {
        conv.apply(u, &mut ws, ju);
        for ((o, &j), &v) in out.iter_mut().zip(ju.iter()).zip(u) {
            *o = j - v;
        }
    };

    let mut t = 0.0;
    let mut samples = Vec::with_capacity(t_list.len());
    for &target in t_list {
        let steps = (((target - t) / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let h = (target - t) / steps as f64;
        for _ in 0..steps {
            rhs(&w, &mut ks[0], &mut ju);
            for ((s, &v), &k) in stage.iter_mut().zip(&w).zip(&ks[0]) {
                *s = v + 0.5 * h * k;
            }
            rhs(&stage, &mut ks[1], &mut ju);
            for ((s, &v), &k) in stage.iter_mut().zip(&w).zip(&ks[1]) {
                *s = v + 0.5 * h * k;
            }
            rhs(&stage, &mut ks[2], &mut ju);
            for ((s, &v), &k) in stage.iter_mut().zip(&w).zip(&ks[2]) {
                *s = v + h * k;
            }
            rhs(&stage, &mut ks[3], &mut ju);
            for i in 0..n {
                w[i] += h / 6.0 * (ks[0][i] + 2.0 * ks[1][i] + 2.0 * ks[2][i] + ks[3][i]);
            }
        }
        t = target;
        let mass = w.iter().sum::<f64>() * grid.cell_volume();
        let loss = (1.0 - mass).abs();
        if loss > mass_budget {
            return Err(Error::MassLoss {
                loss,
                budget: mass_budget,
            });
        }
        let mut omega = w.clone();
        omega[origin] -= (-t).exp() * spike;
        samples.push(OmegaSample {
            t,
            w: Field::new(*grid, w.clone(), ExteriorRule::Zero)?,
            omega: Field::new(*grid, omega, ExteriorRule::Zero)?,
            mass,
        });
    }
    Ok(samples)
}

/// `|∇ω|` by central differences; zero on the outermost layer of nodes.
pub fn gradient_magnitude(field: &Field) -> Vec<f64> {
    let grid = field.grid();
    let dim = grid.dim();
    let h = grid.spacing();
    (0..grid.len())
        .map(|i| {
            let k = grid.lattice(i);
            let mut sq = 0.0;
            for d in 0..dim {
                let (mut up, mut down) = (k, k);
                up[d] += 1;
                down[d] -= 1;
                match (grid.flat_index_signed(&up[..dim]), grid.flat_index_signed(&down[..dim])) {
                    (Some(a), Some(b)) => {
                        let g = (field.values()[a] - field.values()[b]) / (2.0 * h);
                        sq += g * g;
                    }
                    _ => return 0.0,
                }
            }
            sq.sqrt()
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradRow {
    pub t: f64,
    /// `∫|∇ω|`.
    pub l1_grad: f64,
    /// `max_{|x| ≥ 2√t} |∇ω|·|x|^{N+3}/t`.
    pub pointwise_const: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub rows: Vec<GradRow>,
    /// Least-squares slope of `log ∫|∇ω|` against `log t`.
    pub l1_slope: f64,
    pub pointwise_const: f64,
    /// Ratio of the largest to the smallest per-time constant.
    pub pointwise_spread: f64,
}

pub const MIN_PROBE_TIME: f64 = 5.0;

pub fn grad_omega_report(samples: &[OmegaSample]) -> Result<GradReport> {
    if samples.len() < 4 {
        return Err(Error::TooFewSamples {
            needed: 4,
            got: samples.len(),
        });
    }
    let (t_min, t_max) = (samples[0].t, samples[samples.len() - 1].t);
    if t_min < MIN_PROBE_TIME || t_max < 10.0 * t_min * (1.0 - 1e-12) {
        return Err(invalid("t_list", "probe times must start at t >= 5 and span a decade"));
    }
    let rows: Vec<GradRow> = samples
        .iter()
        .map(|s| {
            let grid = s.omega.grid();
            let n = grid.dim() as i32;
            let grad = gradient_magnitude(&s.omega);
            let l1_grad = grad.iter().sum::<f64>() * grid.cell_volume();
            let cutoff = 2.0 * s.t.sqrt();
            let pointwise_const = grid
                .points()
                .zip(&grad)
                .filter(|(x, _)| norm(x) >= cutoff)
                .map(|(x, g)| g * norm(&x).powi(n + 3) / s.t)
                .fold(0.0, f64::max);
            GradRow {
                t: s.t,
                l1_grad,
                pointwise_const,
            }
        })
        .collect();
    let xs: Vec<f64> = rows.iter().map(|r| r.t.ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.l1_grad.ln()).collect();
    let m = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let consts = rows.iter().map(|r| r.pointwise_const);
    let max = consts.clone().fold(0.0, f64::max);
    let min = consts.fold(f64::INFINITY, f64::min);
    Ok(GradReport {
        rows,
        l1_slope: sxy / sxx,
        pointwise_const: max,
        pointwise_spread: max / min,
    })
}
