//! Explicit time integration of `u_t = J∗u − u − u^p` on a truncated box.
//!
//! The exterior keeps its initial law for all time. Every step is checked
//! against the maximum principle `0 ≤ u ≤ sup u₀`; violations abort the run
//! and are never clamped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::{norm, radial_table, sample_field, BallMask, ExteriorRule, Field, Grid};
use crate::kernel::DiscreteKernel;
use crate::nonlocal_op::{ConvolutionMethod, Convolver, Workspace};

/// Slack allowed by the maximum-principle monitor.
pub const MAX_PRINCIPLE_SLACK: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InitialDatum {
    /// `min(cap, A|x|^{-α})`.
    PowerTail {
        amplitude: f64,
        alpha: f64,
        cap: f64,
    },
    /// `min(1, |x|^{-α})`.
    FloorTail {
        alpha: f64,
    },
    /// `height·(1 − |x|²/radius²)²₊`.
    CompactBump {
        radius: f64,
        height: f64,
    },
    Constant {
        value: f64,
    },
    /// Radial piecewise-linear profile; the last value holds beyond the table.
    Table {
        radii: Vec<f64>,
        values: Vec<f64>,
    },
}

impl InitialDatum {
    pub fn name(&self) -> &'static str {
        match self {
            Self::PowerTail { .. } => "power-tail",
            Self::FloorTail { .. } => "floor-tail",
            Self::CompactBump { .. } => "compact-bump",
            Self::Constant { .. } => "constant",
            Self::Table { .. } => "table",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(invalid(name, format!("must be positive and finite, got {v}")))
            }
        };
        match self {
            Self::PowerTail { amplitude, alpha, cap } => {
                positive("datum.amplitude", *amplitude)?;
                positive("datum.alpha", *alpha)?;
                positive("datum.cap", *cap)
            }
            Self::FloorTail { alpha } => positive("datum.alpha", *alpha),
            Self::CompactBump { radius, height } => {
                positive("datum.radius", *radius)?;
                positive("datum.height", *height)
            }
            Self::Constant { value } => {
                if *value >= 0.0 && value.is_finite() {
                    Ok(())
                } else {
                    Err(invalid("datum.value", "must be nonnegative and finite"))
                }
            }
            Self::Table { radii, values } => {
                if radii.is_empty() || radii.len() != values.len() {
                    return Err(invalid(
                        "datum.values",
                        "radii and values must be nonempty and of equal length",
                    ));
                }
                if radii[0] < 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(invalid("datum.radii", "must be nonnegative and strictly increasing"));
                }
                if values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                    return Err(invalid("datum.values", "must be nonnegative and finite"));
                }
                Ok(())
            }
        }
    }

    pub fn eval_radial(&self, r: f64) -> f64 {
        self.profile(r)
    }

    /// The same law continued outside the box.
    pub fn exterior(&self) -> ExteriorRule {
        match self {
            Self::PowerTail { amplitude, alpha, cap } => ExteriorRule::PowerTail {
                amplitude: *amplitude,
                alpha: *alpha,
                cap: *cap,
            },
            Self::FloorTail { alpha } => ExteriorRule::PowerTail {
                amplitude: 1.0,
                alpha: *alpha,
                cap: 1.0,
            },
            Self::CompactBump { .. } => ExteriorRule::Zero,
            Self::Constant { value } => ExteriorRule::Constant { value: *value },
            Self::Table { radii, values } => ExteriorRule::RadialTable {
                radii: radii.clone(),
                values: values.clone(),
            },
        }
    }

    fn profile(&self, r: f64) -> f64 {
        match self {
            Self::CompactBump { radius, height } => {
                let s = 1.0 - (r / radius).powi(2);
                height * s.max(0.0).powi(2)
            }
            Self::Table { radii, values } => radial_table(radii, values, r),
            _ => self.exterior().eval(&[r, 0.0, 0.0]),
        }
    }

    pub fn sup(&self) -> f64 {
        match self {
            Self::PowerTail { cap, .. } => *cap,
            Self::FloorTail { .. } => 1.0,
            Self::CompactBump { height, .. } => *height,
            Self::Constant { value } => *value,
            Self::Table { values, .. } => values.iter().copied().fold(0.0, f64::max),
        }
    }

    /// Whether `|x|^{2/(p−1)}u₀(x) → ∞`, the tail hypothesis of the
    /// long-time limit.
    pub fn satisfies_hypotheses(&self, p: f64) -> bool {
        let critical = 2.0 / (p - 1.0);
        match self {
            Self::PowerTail { alpha, .. } | Self::FloorTail { alpha } => *alpha < critical,
            Self::CompactBump { .. } => false,
            Self::Constant { value } => *value > 0.0,
            Self::Table { values, .. } => values.last().is_some_and(|&v| v > 0.0),
        }
    }
}

pub fn make_initial_datum(datum: &InitialDatum, grid: &Grid) -> Result<Field> {
    datum.validate()?;
    let dim = grid.dim();
    sample_field(
        grid,
        |x| datum.profile(x[..dim].iter().map(|c| c * c).sum::<f64>().sqrt()),
        datum.exterior(),
    )
}

/// `0.5 / (2 + p·sup^{p−1})`.
pub fn stable_dt(p: f64, sup_u0: f64) -> Result<f64> {
    if p.is_nan() || p <= 1.0 {
        return Err(invalid("p", "must exceed 1"));
    }
    if !(sup_u0 > 0.0 && sup_u0.is_finite()) {
        return Err(invalid("sup_u0", "must be positive and finite"));
    }
    Ok(0.5 / (2.0 + p * sup_u0.powf(p - 1.0)))
}

#[inline]
fn absorption(u: f64, p: f64) -> f64 {
    if p == 2.0 {
        u * u
    } else if u > 0.0 {
        u.powf(p)
    } else {
        0.0
    }
}

#[derive(Clone, Debug)]
pub struct SimState {
    pub u: Field,
    pub t: f64,
    pub p: f64,
    /// `sup u₀` over the box and the exterior.
    pub upper: f64,
}

impl SimState {
    pub fn new(u: Field, p: f64) -> Result<SimState> {
        if !(p > 1.0 && p.is_finite()) {
            return Err(invalid("p", "must exceed 1"));
        }
        let upper = u.sup().max(u.exterior().sup());
        let state = SimState { u, t: 0.0, p, upper };
        state.check()?;
        Ok(state)
    }

    /// Resumes from a stored field with the original upper bound.
    pub fn resume(u: Field, t: f64, p: f64, upper: f64) -> Result<SimState> {
        let state = SimState { u, t, p, upper };
        state.check()?;
        Ok(state)
    }

    pub fn check(&self) -> Result<()> {
        let upper = self.upper + MAX_PRINCIPLE_SLACK;
        match self
            .u
            .values()
            .iter()
            .position(|&v| !(v >= -MAX_PRINCIPLE_SLACK && v <= upper))
        {
            None => Ok(()),
            Some(index) => Err(Error::MaximumPrinciple {
                t: self.t,
                index,
                value: self.u.values()[index],
                upper: self.upper,
            }),
        }
    }
}

/// Reusable convolution state for repeated steps on one grid.
pub struct Stepper {
    conv: Convolver,
    ws: Workspace,
    scratch: Vec<f64>,
}

impl Stepper {
    pub fn new(
        grid: &Grid,
        dk: &DiscreteKernel,
        exterior: &ExteriorRule,
        method: ConvolutionMethod,
    ) -> Result<Stepper> {
        let conv = Convolver::new(grid, dk, method)?;
        let ws = conv.workspace(exterior);
        Ok(Stepper {
            conv,
            ws,
            scratch: vec![0.0; grid.len()],
        })
    }

    /// `u ← u + dt(J∗u − u − u^p)`, then the maximum-principle check.
    pub fn step(&mut self, state: &mut SimState, dt: f64) -> Result<()> {
        let p = state.p;
        self.conv.apply(state.u.values(), &mut self.ws, &mut self.scratch);
        state
            .u
            .values_mut()
            .par_iter_mut()
            .with_min_len(4096)
            .zip(self.scratch.par_iter())
            .for_each(|(u, &ju)| *u += dt * (ju - *u - absorption(*u, p)));
        state.t += dt;
        state.check()
    }

    /// Advances to `t_target` in `ceil((t_target − t)/dt)` equal steps and
    /// lands on `t_target` exactly.
    pub fn advance_to(&mut self, state: &mut SimState, t_target: f64, dt: f64) -> Result<usize> {
        let interval = t_target - state.t;
        if interval < 0.0 {
            return Err(invalid("checkpoint_times", "must not precede the current time"));
        }
        if interval == 0.0 {
            return Ok(0);
        }
        let n = ((interval / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let h = interval / n as f64;
        let t0 = state.t;
        for k in 1..=n {
            self.step(state, h)?;
            state.t = if k == n { t_target } else { t0 + k as f64 * h };
        }
        Ok(n)
    }
}

/// One explicit step with a fresh convolution state.
pub fn step(state: &SimState, dk: &DiscreteKernel, dt: f64) -> Result<SimState> {
    let mut next = state.clone();
    Stepper::new(state.u.grid(), dk, state.u.exterior(), ConvolutionMethod::Direct)?.step(&mut next, dt)?;
    Ok(next)
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub t: f64,
    pub u: Field,
}

#[derive(Clone, Debug)]
pub struct Trajectory {
    pub checkpoints: Vec<Checkpoint>,
    pub dt: f64,
    pub p: f64,
    pub upper: f64,
    pub steps: usize,
}

impl Trajectory {
    pub fn at(&self, t: f64) -> Option<&Field> {
        self.checkpoints.iter().find(|c| c.t == t).map(|c| &c.u)
    }
}

/// Sorted schedule `checkpoint_times ∪ {t_end}`.
pub fn schedule(checkpoint_times: &[f64], t_end: f64) -> Result<Vec<f64>> {
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(invalid("t_end", "must be nonnegative and finite"));
    }
    if let Some(t) = checkpoint_times.iter().find(|&&t| !(0.0..=t_end).contains(&t)) {
        return Err(invalid("checkpoint_times", format!("{t} lies outside [0, t_end]")));
    }
    let mut times = checkpoint_times.to_vec();
    times.push(t_end);
    times.sort_by(f64::total_cmp);
    times.dedup();
    Ok(times)
}

/// Runs the schedule from `state`, calling `on_checkpoint` with every
/// checkpoint index and state reached (including the current one if it is
/// listed).
pub fn evolve_from(
    state: &mut SimState,
    stepper: &mut Stepper,
    times: &[f64],
    dt: f64,
    mut on_checkpoint: impl FnMut(usize, &SimState) -> Result<()>,
) -> Result<usize> {
    if dt.is_nan() || dt <= 0.0 {
        return Err(invalid("dt", "must be positive"));
    }
    let mut steps = 0;
    for (k, &t) in times.iter().enumerate() {
        if t < state.t {
            continue;
        }
        steps += stepper.advance_to(state, t, dt)?;
        on_checkpoint(k, state)?;
    }
    Ok(steps)
}

pub fn evolve(
    state0: &SimState,
    dk: &DiscreteKernel,
    t_end: f64,
    dt: f64,
    checkpoint_times: &[f64],
) -> Result<Trajectory> {
    evolve_with(state0, dk, t_end, dt, checkpoint_times, ConvolutionMethod::Direct)
}

pub fn evolve_with(
    state0: &SimState,
    dk: &DiscreteKernel,
    t_end: f64,
    dt: f64,
    checkpoint_times: &[f64],
    method: ConvolutionMethod,
) -> Result<Trajectory> {
    let times = schedule(checkpoint_times, t_end)?;
    let mut state = state0.clone();
    let mut stepper = Stepper::new(state.u.grid(), dk, state.u.exterior(), method)?;
    let mut checkpoints = Vec::with_capacity(times.len());
    let steps = evolve_from(&mut state, &mut stepper, &times, dt, |_, s| {
        checkpoints.push(Checkpoint { t: s.t, u: s.u.clone() });
        Ok(())
    })?;
    Ok(Trajectory {
        checkpoints,
        dt,
        p: state.p,
        upper: state.upper,
        steps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PositivityRow {
    pub t: f64,
    pub radius: f64,
    pub inf: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LowerBoundRow {
    pub t: f64,
    /// `min_x (u(x,t) − e^{−At}u₀(x))`.
    pub min_slack: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PositivityReport {
    pub rows: Vec<PositivityRow>,
    pub lower_bound: Vec<LowerBoundRow>,
    /// `A = 1 + (sup u₀)^{p−1}`.
    pub rate: f64,
}

impl PositivityReport {
    pub fn lower_bound_holds(&self, slack: f64) -> bool {
        self.lower_bound.iter().all(|r| r.min_slack >= -slack)
    }
}

/// Infima of `u` over each ball at each checkpoint, and the nodewise bound
/// `u(x,t) ≥ e^{−At}u₀(x)`.
pub fn positivity_report(traj: &Trajectory, u0: &Field, radii: &[f64]) -> Result<PositivityReport> {
    if traj.checkpoints.is_empty() {
        return Err(invalid("trajectory", "has no checkpoints"));
    }
    let grid = traj.checkpoints[0].u.grid();
    if !grid.compatible_with(u0.grid()) || grid.len() != u0.grid().len() {
        return Err(invalid("u0", "must live on the trajectory grid"));
    }
    let rate = 1.0 + u0.sup().max(u0.exterior().sup()).powf(traj.p - 1.0);
    let masks = radii.iter().map(|&r| BallMask::new(grid, r)).collect::<Vec<_>>();
    let mut rows = Vec::new();
    let mut lower_bound = Vec::new();
    for c in &traj.checkpoints {
        for mask in &masks {
            if mask.count() == 0 {
                return Err(Error::EmptyBall { radius: mask.radius() });
            }
            let inf = mask.indices().map(|i| c.u.values()[i]).fold(f64::INFINITY, f64::min);
            rows.push(PositivityRow {
                t: c.t,
                radius: mask.radius(),
                inf,
            });
        }
        let decay = (-rate * c.t).exp();
        let min_slack =
            c.u.values()
                .iter()
                .zip(u0.values())
                .map(|(u, v)| u - decay * v)
                .fold(f64::INFINITY, f64::min);
        lower_bound.push(LowerBoundRow { t: c.t, min_slack });
    }
    Ok(PositivityReport {
        rows,
        lower_bound,
        rate,
    })
}

/// `sup` over `|x| ≤ radius` of `|t^{1/(p−1)}u − κ|`, the deviation from
/// the flat profile on a parabolic set.
pub fn flat_deviation(u: &Field, t: f64, p: f64, radius: f64) -> Option<f64> {
    let scale = t.powf(1.0 / (p - 1.0));
    let kappa = (1.0 / (p - 1.0)).powf(1.0 / (p - 1.0));
    u.grid()
        .points()
        .zip(u.values())
        .filter(|(x, _)| norm(x) <= radius)
        .map(|(_, &v)| (scale * v - kappa).abs())
        .reduce(f64::max)
}
