//! Pipeline stages. Each stage reads only the configuration and the
//! artifacts persisted by earlier stages, and writes its own artifacts.

use std::fs;
use std::path::Path;

use nonlocal_core::barrier::{barrier_rows, kappa, phi_of_r, RSelector};
use nonlocal_core::evolve::{
    evolve_from, make_initial_datum, positivity_report, schedule, Checkpoint, SimState, Stepper, Trajectory,
};
use nonlocal_core::fundamental::{grad_omega_report, omega_fields};
use nonlocal_core::grid::io::{read_field, write_field};
use nonlocal_core::grid::{make_grid, make_grid_with_budget, Field, Grid};
use nonlocal_core::kernel::{diffusivity, discretize_kernel, make_kernel, DiscreteKernel, Kernel};
use nonlocal_core::spectral::{
    annulus_bound_check, eigen_convergence_report, eigen_sweep, laplace_reference, rescale_eigenfunction,
    scaling_table, upper_barrier_fit, EigenPair,
};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::artifacts::{num, parse_num, Artifacts};
use crate::config::Config;
use crate::error::{HarnessError, Result};
use crate::theorem::{main_theorem_report, TheoremReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Eigen,
    Evolve,
    Barrier,
    Fundamental,
    Verify,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Eigen,
        Stage::Evolve,
        Stage::Barrier,
        Stage::Fundamental,
        Stage::Verify,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Eigen => "eigen",
            Stage::Evolve => "evolve",
            Stage::Barrier => "barrier",
            Stage::Fundamental => "fundamental",
            Stage::Verify => "verify",
            Stage::Report => "report",
        }
    }
}

pub struct Context {
    pub cfg: Config,
    pub canonical: String,
    pub art: Artifacts,
    pub kernel: Kernel,
    pub dk: DiscreteKernel,
    pub grid: Grid,
}

#[derive(Serialize, Deserialize)]
struct PairEntry {
    radius: f64,
    lambda: f64,
    residual: f64,
    iterations: usize,
    file: String,
}

impl Context {
    pub fn new(cfg: Config, out: &Path) -> Result<Context> {
        let g = &cfg.grid;
        let grid = make_grid_with_budget(g.dim, g.half_width, g.spacing, g.node_budget)?;
        let kernel = make_kernel(cfg.kernel.family.clone(), cfg.kernel.radius, g.dim)?;
        let dk = discretize_kernel(&kernel, grid.spacing())?;
        let art = Artifacts::create(out)?;
        Ok(Context {
            canonical: cfg.canonical(),
            cfg,
            art,
            kernel,
            dk,
            grid,
        })
    }

    pub fn initial_datum(&self) -> Result<Field> {
        Ok(make_initial_datum(&self.cfg.datum, &self.grid)?)
    }

    fn record(&self, stage: Stage, entry: serde_json::Value) -> Result<()> {
        self.art.record_stage(&self.canonical, stage.name(), entry)
    }

    /// Refuses to resume into a directory written with another configuration.
    pub fn check_resumable(&self) -> Result<()> {
        let path = self.art.path("manifest.json");
        if !path.exists() {
            return Ok(());
        }
        let manifest = self.art.read_json(&path, "eigen")?;
        let config: serde_json::Value = serde_json::from_str(&self.canonical)?;
        if manifest.get("config") == Some(&config) {
            Ok(())
        } else {
            Err(HarnessError::ConfigChanged {
                dir: self.art.root().to_path_buf(),
            })
        }
    }
}

pub fn run_stage(ctx: &Context, stage: Stage, resume: bool) -> Result<String> {
    let summary = match stage {
        Stage::Eigen => eigen(ctx)?,
        Stage::Evolve => evolve(ctx, resume)?,
        Stage::Barrier => barrier(ctx)?,
        Stage::Fundamental => fundamental(ctx)?,
        Stage::Verify => verify(ctx)?,
        Stage::Report => report(ctx)?,
    };
    ctx.art.mark_done(stage.name(), &ctx.canonical)?;
    Ok(summary)
}

/// All stages in order. With `resume`, stages already completed under the
/// same configuration are skipped and the evolution restarts from its last
/// checkpoint on disk.
pub fn run_all(ctx: &Context, resume: bool, mut log: impl FnMut(&str)) -> Result<()> {
    if resume {
        ctx.check_resumable()?;
    } else {
        ctx.art.clear_markers()?;
    }
    for stage in Stage::ALL {
        match ctx.art.done_with(stage.name(), &ctx.canonical) {
            Some(true) if resume => {
                log(&format!("{}: already complete", stage.name()));
                continue;
            }
            Some(false) if resume => {
                return Err(HarnessError::ConfigChanged {
                    dir: ctx.art.root().to_path_buf(),
                })
            }
            _ => {}
        }
        let summary = run_stage(ctx, stage, resume)?;
        log(&format!("{}: {summary}", stage.name()));
    }
    Ok(())
}

fn eigen(ctx: &Context) -> Result<String> {
    let run = &ctx.cfg.run;
    let dim = ctx.grid.dim();
    let eps = eigen_sweep(&ctx.dk, &ctx.grid, &run.radii, run.eigen_tol, run.eigen_max_iter)?;
    let reference = laplace_reference(dim)?;
    let a = diffusivity(&ctx.kernel);
    let target = a * reference.lambda1();
    let unit = make_grid(dim, 1.0, run.convergence_spacing)?;
    let convergence = eigen_convergence_report(&eps, &reference, &unit)?;
    let scaling = scaling_table(&eps, target);

    let mut rows = Vec::new();
    let mut entries = Vec::new();
    let mut coarse_interpolation = Vec::new();
    for ((ep, conv), sc) in eps.iter().zip(&convergence).zip(&scaling) {
        let fit = upper_barrier_fit(ep, &reference)?;
        let annulus = annulus_bound_check(ep, &ctx.dk)?;
        rows.push(vec![
            num(ep.radius),
            num(ep.lambda),
            num(sc.r2_lambda),
            num(ep.residual),
            ep.iterations.to_string(),
            num(conv.sup_err),
            num(conv.collar_sup),
            num(fit.c_fit),
            num(fit.c0),
            num(annulus.k_fit),
        ]);
        let path = ctx.art.eigenfunction(ep.radius);
        write_field(&path, &ep.eigenfunction, 0.0)?;
        entries.push(PairEntry {
            radius: ep.radius,
            lambda: ep.lambda,
            residual: ep.residual,
            iterations: ep.iterations,
            file: path.file_name().unwrap().to_string_lossy().into_owned(),
        });
        let rescaled = rescale_eigenfunction(ep, &unit)?;
        if rescaled.finer_than_source {
            coarse_interpolation.push(ep.radius);
        }
        let axis: Vec<(f64, f64)> = unit
            .points()
            .zip(rescaled.field.values())
            .filter(|(x, _)| x[1] == 0.0 && x[2] == 0.0)
            .map(|(x, &v)| (x[0], v))
            .collect();
        ctx.art
            .write_plot(&format!("eigenfunction_R{}", num(ep.radius)), "x", "H_tilde", &axis)?;
    }
    ctx.art.write_csv(
        &ctx.art.path("eigen.csv"),
        &[
            "R",
            "lambda",
            "R2lambda",
            "residual",
            "iterations",
            "sup_err_vs_h1",
            "collar_sup",
            "C_fit",
            "C0",
            "K_fit",
        ],
        &rows,
    )?;
    ctx.art
        .write_json(&ctx.art.path("eigen/pairs.json"), &serde_json::to_value(&entries)?)?;
    let series = |col: usize| -> Vec<(f64, f64)> {
        rows.iter()
            .map(|r| (r[0].parse().unwrap(), r[col].parse().unwrap()))
            .collect()
    };
    ctx.art.write_plot("eigen_scaling", "R", "R2lambda", &series(2))?;
    ctx.art.write_plot("eigen_sup_err", "R", "sup_err_vs_h1", &series(5))?;
    ctx.art.write_plot("eigen_C_fit", "R", "C_fit", &series(7))?;
    ctx.art.write_plot("eigen_K_fit", "R", "K_fit", &series(9))?;
    ctx.record(
        Stage::Eigen,
        json!({
            "diffusivity": a,
            "lambda1": reference.lambda1(),
            "target_R2lambda": target,
            "radii": run.radii,
            "spacing": ctx.grid.spacing(),
            "interpolation_finer_than_source": coarse_interpolation,
        }),
    )?;
    let last = scaling.last().expect("nonempty sweep");
    Ok(format!(
        "{} radii, R2*lambda = {} at R = {} (limit {})",
        eps.len(),
        num(last.r2_lambda),
        num(last.radius),
        num(target)
    ))
}

pub fn load_eigenpairs(ctx: &Context) -> Result<Vec<EigenPair>> {
    let path = ctx.art.path("eigen/pairs.json");
    let entries: Vec<PairEntry> = serde_json::from_value(ctx.art.read_json(&path, "eigen")?)?;
    entries
        .into_iter()
        .map(|e| {
            let file = ctx.art.require(ctx.art.path("eigen").join(&e.file), "eigen")?;
            let (eigenfunction, _) = read_field(&file)?;
            Ok(EigenPair {
                radius: e.radius,
                lambda: e.lambda,
                eigenfunction,
                residual: e.residual,
                iterations: e.iterations,
            })
        })
        .collect()
}

fn evolve(ctx: &Context, resume: bool) -> Result<String> {
    let run = &ctx.cfg.run;
    let u0 = ctx.initial_datum()?;
    let fresh = SimState::new(u0.clone(), run.p)?;
    let upper = fresh.upper;
    let times = schedule(&run.checkpoints, run.t_end)?;

    let mut start = None;
    if resume {
        for k in (0..times.len()).rev() {
            let path = ctx.art.checkpoint(k);
            if let Ok((field, t)) = read_field(&path) {
                if t == times[k] && field.grid().len() == ctx.grid.len() {
                    start = Some((field, t));
                    break;
                }
            }
        }
    } else {
        remove_checkpoints(ctx)?;
    }
    let resumed_from = start.as_ref().map(|(_, t)| *t);
    let mut state = match start {
        Some((field, t)) => SimState::resume(field, t, run.p, upper)?,
        None => fresh,
    };
    let mut stepper = Stepper::new(&ctx.grid, &ctx.dk, state.u.exterior(), run.method)?;
    evolve_from(&mut state, &mut stepper, &times, run.dt, |k, s| {
        write_field(&ctx.art.checkpoint(k), &s.u, s.t)
    })?;

    let traj = load_trajectory(ctx)?;
    let report = positivity_report(&traj, &u0, &run.positivity_radii)?;
    let mut rows = Vec::new();
    for (i, lb) in report.lower_bound.iter().enumerate() {
        for row in report
            .rows
            .iter()
            .skip(i * run.positivity_radii.len())
            .take(run.positivity_radii.len())
        {
            rows.push(vec![num(row.t), num(row.radius), num(row.inf), num(lb.min_slack)]);
        }
    }
    ctx.art.write_csv(
        &ctx.art.path("positivity.csv"),
        &["t", "R", "inf_u", "exp_bound_slack"],
        &rows,
    )?;
    let holds = report.lower_bound_holds(ctx.cfg.tolerances.barrier_slack);
    ctx.record(
        Stage::Evolve,
        json!({
            "p": run.p,
            "dt": run.dt,
            "t_end": run.t_end,
            "checkpoints": times,
            "method": run.method,
            "subcritical": ctx.cfg.subcritical,
            "sup_u0": upper,
            "invariant_violations": 0,
            "exp_bound_rate": report.rate,
            "exp_bound_holds": holds,
        }),
    )?;
    if !holds {
        return Err(HarnessError::Invariant(
            "u(x,t) >= exp(-At) u0(x) fails beyond the barrier slack; see positivity.csv".into(),
        ));
    }
    Ok(match resumed_from {
        Some(t) => format!("{} checkpoints, resumed from t = {}", times.len(), num(t)),
        None => format!("{} checkpoints up to t = {}", times.len(), num(run.t_end)),
    })
}

fn remove_checkpoints(ctx: &Context) -> Result<()> {
    let dir = ctx.art.path("checkpoints");
    for entry in fs::read_dir(&dir).map_err(|e| HarnessError::io(&dir, e))? {
        let path = entry.map_err(|e| HarnessError::io(&dir, e))?.path();
        fs::remove_file(&path).map_err(|e| HarnessError::io(&path, e))?;
    }
    Ok(())
}

pub fn load_trajectory(ctx: &Context) -> Result<Trajectory> {
    let run = &ctx.cfg.run;
    let times = schedule(&run.checkpoints, run.t_end)?;
    let mut checkpoints = Vec::with_capacity(times.len());
    for (k, &t) in times.iter().enumerate() {
        let path = ctx.art.require(ctx.art.checkpoint(k), "evolve")?;
        let (u, stamp) = read_field(&path)?;
        if stamp != t {
            return Err(HarnessError::MalformedArtifact {
                path,
                reason: format!("time stamp {stamp} does not match the schedule entry {t}"),
            });
        }
        checkpoints.push(Checkpoint { t, u });
    }
    let upper = ctx.cfg.datum.sup();
    Ok(Trajectory {
        checkpoints,
        dt: run.dt,
        p: run.p,
        upper,
        steps: 0,
    })
}

fn probe_field<'a>(ctx: &Context, traj: &'a Trajectory) -> Result<&'a Field> {
    traj.at(ctx.cfg.run.t_probe)
        .ok_or_else(|| HarnessError::MissingArtifact {
            path: ctx.art.path("checkpoints"),
            stage: "evolve",
        })
}

fn barrier(ctx: &Context) -> Result<String> {
    let run = &ctx.cfg.run;
    let eps = load_eigenpairs(ctx)?;
    let traj = load_trajectory(ctx)?;
    let u0 = &traj.checkpoints[0].u;
    let allowed = ctx.cfg.tolerances.barrier_slack;
    let mut worst = f64::INFINITY;
    let mut per_radius = Vec::new();
    for ep in &eps {
        let (params, rows) = barrier_rows(&traj, u0, ep)?;
        let table: Vec<Vec<String>> = rows
            .iter()
            .map(|r| vec![num(r.t), num(r.psi), num(r.min_slack), num(r.origin_slack)])
            .collect();
        ctx.art.write_csv(
            &ctx.art.barrier_csv(ep.radius),
            &["t", "psi", "min_slack", "origin_slack"],
            &table,
        )?;
        let series: Vec<(f64, f64)> = rows.iter().map(|r| (r.t, r.min_slack)).collect();
        ctx.art
            .write_plot(&format!("barrier_R{}", num(ep.radius)), "t", "min_slack", &series)?;
        let w = rows.iter().map(|r| r.min_slack).fold(f64::INFINITY, f64::min);
        worst = worst.min(w);
        per_radius.push(json!({ "R": ep.radius, "lambda": params.lambda, "c": params.c, "min_slack": w }));
    }

    let phi = phi_of_r(probe_field(ctx, &traj)?, &eps, run.t_probe)?;
    let exponent = 2.0 / (run.p - 1.0);
    let rows: Vec<Vec<String>> = phi
        .radii
        .iter()
        .zip(&phi.raw_values)
        .zip(&phi.phi_values)
        .map(|((&r, &raw), &v)| vec![num(r), num(raw), num(v), num(r.powf(exponent) * v)])
        .collect();
    ctx.art
        .write_csv(&ctx.art.path("phi.csv"), &["R", "phi_raw", "phi", "R_pow_phi"], &rows)?;
    let series: Vec<(f64, f64)> = phi.radii.iter().copied().zip(phi.phi_values.iter().copied()).collect();
    ctx.art.write_plot("phi", "R", "phi", &series)?;
    let selector = RSelector::new(phi, run.p)?;
    let ys: Vec<f64> = traj.checkpoints.iter().map(|c| c.t).filter(|&t| t > 0.0).collect();
    let limits = selector.validate_limits(&ys)?;

    ctx.record(
        Stage::Barrier,
        json!({
            "radii": per_radius,
            "worst_slack": worst,
            "allowed_slack": allowed,
            "t_probe": run.t_probe,
            "selector_rows": limits.rows.len(),
            "selector_ratio_decreasing": limits.ratio_decreasing,
            "selector_product_increasing": limits.product_increasing,
        }),
    )?;
    if worst < -allowed {
        return Err(HarnessError::Invariant(format!(
            "subsolution slack {} below -{}",
            num(worst),
            num(allowed)
        )));
    }
    Ok(format!("{} radii, worst slack {}", eps.len(), num(worst)))
}

fn fundamental(ctx: &Context) -> Result<String> {
    let run = &ctx.cfg.run;
    let h = ctx.grid.spacing();
    let half_count = (run.fundamental_half_width / h).round().max(1.0) as usize;
    let grid = Grid::from_half_count(ctx.grid.dim(), half_count, h)?;
    let samples = omega_fields(
        &ctx.dk,
        &grid,
        &run.fundamental_times,
        run.fundamental_dt,
        ctx.cfg.tolerances.mass_budget,
    )?;
    let report = grad_omega_report(&samples)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| vec![num(r.t), num(r.l1_grad), num(r.pointwise_const)])
        .collect();
    ctx.art.write_csv(
        &ctx.art.path("fundamental.csv"),
        &["t", "L1_grad", "pointwise_const"],
        &rows,
    )?;
    let l1: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.t, r.l1_grad)).collect();
    let pc: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.t, r.pointwise_const)).collect();
    ctx.art.write_plot("fundamental_L1_grad", "t", "L1_grad", &l1)?;
    ctx.art
        .write_plot("fundamental_pointwise_const", "t", "pointwise_const", &pc)?;
    let mass_error = samples.iter().map(|s| (s.mass - 1.0).abs()).fold(0.0, f64::max);
    ctx.record(
        Stage::Fundamental,
        json!({
            "half_width": grid.half_width(),
            "l1_slope": report.l1_slope,
            "pointwise_const": report.pointwise_const,
            "pointwise_spread": report.pointwise_spread,
            "max_mass_error": mass_error,
        }),
    )?;
    Ok(format!(
        "L1 slope {}, pointwise constant spread {}",
        num(report.l1_slope),
        num(report.pointwise_spread)
    ))
}

/// The theorem report recomputed from persisted checkpoints and eigenpairs.
pub fn theorem_report(ctx: &Context) -> Result<TheoremReport> {
    let run = &ctx.cfg.run;
    let eps = load_eigenpairs(ctx)?;
    let traj = load_trajectory(ctx)?;
    let phi = phi_of_r(probe_field(ctx, &traj)?, &eps, run.t_probe)?;
    let selector = RSelector::new(phi, run.p)?;
    main_theorem_report(
        &traj.checkpoints,
        &eps,
        &selector,
        &run.k,
        run.p,
        ctx.cfg.tolerances.trend_inversion,
    )
}

fn verify(ctx: &Context) -> Result<String> {
    let run = &ctx.cfg.run;
    let tol = &ctx.cfg.tolerances;
    let report = theorem_report(ctx)?;
    let rows: Vec<Vec<String>> = report
        .rows
        .iter()
        .map(|r| {
            vec![
                num(r.t),
                num(r.k),
                num(r.radius),
                num(r.sup_err),
                num(r.upper_max),
                num(r.u_min_scaled),
                num(r.sandwich_lower),
                num(r.h_min),
            ]
        })
        .collect();
    ctx.art.write_csv(
        &ctx.art.path("theorem.csv"),
        &[
            "t",
            "k",
            "R_t",
            "sup_err",
            "upper_max",
            "u_min_scaled",
            "sandwich_lower",
            "H_min",
        ],
        &rows,
    )?;
    let trend_rows: Vec<Vec<String>> = report
        .trends
        .iter()
        .map(|t| {
            let (first, last) = (t.ladder.first(), t.ladder.last());
            vec![
                num(t.k),
                first.map_or("nan".into(), |p| num(p.0)),
                first.map_or("nan".into(), |p| num(p.1)),
                last.map_or("nan".into(), |p| num(p.0)),
                last.map_or("nan".into(), |p| num(p.1)),
                t.inversions.to_string(),
                num(t.worst_inversion),
                t.trend_ok.to_string(),
            ]
        })
        .collect();
    ctx.art.write_csv(
        &ctx.art.path("trend.csv"),
        &[
            "k",
            "t_first",
            "err_first",
            "t_last",
            "err_last",
            "inversions",
            "worst_inversion",
            "trend_ok",
        ],
        &trend_rows,
    )?;

    let upper_limit = kappa(run.p) + tol.upper_slack;
    let upper_ok = report.rows.iter().all(|r| r.upper_max <= upper_limit);
    let sandwich_ok = report
        .rows
        .iter()
        .filter(|r| r.t >= run.t_probe)
        .all(|r| r.sandwich_lower <= r.u_min_scaled + tol.barrier_slack * r.t.powf(1.0 / (run.p - 1.0)));
    ctx.record(
        Stage::Verify,
        json!({
            "kappa": report.kappa,
            "upper_bound_holds": upper_ok,
            "sandwich_below_solution": sandwich_ok,
            "trends": report.trends.iter().map(|t| json!({
                "k": t.k,
                "inversions": t.inversions,
                "worst_inversion": t.worst_inversion,
                "trend_ok": t.trend_ok,
            })).collect::<Vec<_>>(),
        }),
    )?;
    if !upper_ok {
        return Err(HarnessError::Invariant(format!(
            "t^(1/(p-1)) u exceeds kappa + {}; see theorem.csv",
            num(tol.upper_slack)
        )));
    }
    if !sandwich_ok {
        return Err(HarnessError::Invariant(
            "the barrier lower bound exceeds the solution; see theorem.csv".into(),
        ));
    }
    let summary = report
        .trends
        .iter()
        .map(|t| {
            let last = t.ladder.last().map_or(f64::NAN, |p| p.1);
            format!("k = {}: error {} at t = {}", num(t.k), num(last), num(run.t_end))
        })
        .collect::<Vec<_>>()
        .join("; ");
    Ok(summary)
}

fn column(header: &[String], name: &str, path: &Path) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| HarnessError::MalformedArtifact {
            path: path.to_path_buf(),
            reason: format!("no `{name}` column"),
        })
}

fn report(ctx: &Context) -> Result<String> {
    let path = ctx.art.path("theorem.csv");
    let (header, rows) = ctx.art.read_csv(&path, "verify")?;
    let (ct, ck) = (column(&header, "t", &path)?, column(&header, "k", &path)?);
    let (ce, cs, cu) = (
        column(&header, "sup_err", &path)?,
        column(&header, "sandwich_lower", &path)?,
        column(&header, "upper_max", &path)?,
    );
    let mut upper = Vec::new();
    for &k in &ctx.cfg.run.k {
        let mut err = Vec::new();
        let mut lower = Vec::new();
        for row in &rows {
            if parse_num(&path, &row[ck])? != k {
                continue;
            }
            let t = parse_num(&path, &row[ct])?;
            err.push((t, parse_num(&path, &row[ce])?));
            lower.push((t, parse_num(&path, &row[cs])?));
            if k == ctx.cfg.run.k[0] {
                upper.push((t, parse_num(&path, &row[cu])?));
            }
        }
        ctx.art
            .write_plot(&format!("theorem_k{}", num(k)), "t", "sup_err", &err)?;
        ctx.art
            .write_plot(&format!("sandwich_k{}", num(k)), "t", "sandwich_lower", &lower)?;
    }
    ctx.art.write_plot("upper_bound", "t", "upper_max", &upper)?;

    let dir = ctx.art.path("plots");
    let mut plots: Vec<String> = fs::read_dir(&dir)
        .map_err(|e| HarnessError::io(&dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".dat"))
        .collect();
    plots.sort();
    let csvs: Vec<String> = {
        let root = ctx.art.root();
        let mut v: Vec<String> = fs::read_dir(root)
            .map_err(|e| HarnessError::io(root, e))?
            .filter_map(|e| e.ok())
            .map(|e| e.file_name().to_string_lossy().into_owned())
            .filter(|n| n.ends_with(".csv"))
            .collect();
        v.sort();
        v
    };
    let count = plots.len();
    ctx.record(Stage::Report, json!({ "plots": plots, "csv": csvs }))?;
    Ok(format!("{count} plot series"))
}
