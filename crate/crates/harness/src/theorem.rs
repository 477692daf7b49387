//! Long-time profile report on the parabolic sets `E_k = {|x| ≤ k√t}`.
//!
//! For each checkpoint the report gives the deviation of `t^{1/(p−1)}u` from
//! `κ`, the flat upper bound and the separated-variables lower bound
//! `t^{1/(p−1)}ψ_{R(t)}(t)·min_{E_k}H_{R(t)}`.

use nonlocal_core::barrier::{kappa, PsiClosedForm, RSelector};
use nonlocal_core::evolve::Checkpoint;
use nonlocal_core::grid::norm;
use nonlocal_core::spectral::EigenPair;

use crate::error::{HarnessError, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoremRow {
    pub t: f64,
    pub k: f64,
    pub radius: f64,
    /// `sup_{E_k} |t^{1/(p−1)}u − κ|`.
    pub sup_err: f64,
    /// `max` over the box of `t^{1/(p−1)}u`.
    pub upper_max: f64,
    /// `min_{E_k} t^{1/(p−1)}u`.
    pub u_min_scaled: f64,
    pub sandwich_lower: f64,
    pub h_min: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trend {
    pub k: f64,
    /// `(t, sup_err)` over the dyadic checkpoints `t = 2^j ≥ 1`.
    pub ladder: Vec<(f64, f64)>,
    pub inversions: usize,
    /// Largest relative increase between consecutive ladder entries.
    pub worst_inversion: f64,
    /// At most one inversion, of relative size at most the tolerance.
    pub trend_ok: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TheoremReport {
    pub kappa: f64,
    pub rows: Vec<TheoremRow>,
    pub trends: Vec<Trend>,
}

impl TheoremReport {
    pub fn error_at(&self, t: f64, k: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.t == t && r.k == k).map(|r| r.sup_err)
    }
}

fn is_dyadic(t: f64) -> bool {
    t >= 1.0 && t.log2().fract() == 0.0
}

/// Consecutive increases along a ladder and the trend verdict.
pub fn trend(k: f64, ladder: Vec<(f64, f64)>, tolerance: f64) -> Trend {
    let mut inversions = 0;
    let mut worst_inversion = 0.0f64;
    for w in ladder.windows(2) {
        if w[1].1 > w[0].1 {
            inversions += 1;
            worst_inversion = worst_inversion.max((w[1].1 - w[0].1) / w[0].1);
        }
    }
    Trend {
        k,
        ladder,
        inversions,
        worst_inversion,
        trend_ok: inversions <= 1 && worst_inversion <= tolerance,
    }
}

pub fn main_theorem_report(
    checkpoints: &[Checkpoint],
    eigenpairs: &[EigenPair],
    selector: &RSelector,
    k_list: &[f64],
    p: f64,
    inversion_tolerance: f64,
) -> Result<TheoremReport> {
    let kap = kappa(p);
    let mut rows = Vec::new();
    for cp in checkpoints.iter().filter(|c| c.t > 0.0) {
        let t = cp.t;
        let scale = t.powf(1.0 / (p - 1.0));
        let grid = cp.u.grid();
        let upper_max = cp.u.values().iter().fold(f64::NEG_INFINITY, |m, &v| m.max(scale * v));
        let sel = selector.select(t)?;
        if sel.exhausted {
            return Err(HarnessError::SelectorExhausted { t });
        }
        let ep = eigenpairs
            .iter()
            .find(|e| e.radius == sel.radius)
            .ok_or(HarnessError::MissingRadius { radius: sel.radius })?;
        let c = selector.phi.phi_values[sel.index];
        let psi = PsiClosedForm::new(ep.lambda, c, p)?.eval(t);
        let h = ep.embed(grid)?;
        let radii: Vec<f64> = grid.points().map(|x| norm(&x)).collect();
        for &k in k_list {
            let reach = k * t.sqrt();
            let (mut sup_err, mut u_min, mut h_min) = (0.0f64, f64::INFINITY, f64::INFINITY);
            for (i, &r) in radii.iter().enumerate() {
                if r <= reach {
                    let v = scale * cp.u.values()[i];
                    sup_err = sup_err.max((v - kap).abs());
                    u_min = u_min.min(v);
                    h_min = h_min.min(h.values()[i]);
                }
            }
            rows.push(TheoremRow {
                t,
                k,
                radius: sel.radius,
                sup_err,
                upper_max,
                u_min_scaled: u_min,
                sandwich_lower: scale * psi * h_min,
                h_min,
            });
        }
    }
    let trends = k_list
        .iter()
        .map(|&k| {
            let ladder = rows
                .iter()
                .filter(|r| r.k == k && is_dyadic(r.t))
                .map(|r| (r.t, r.sup_err))
                .collect();
            trend(k, ladder, inversion_tolerance)
        })
        .collect();
    Ok(TheoremReport {
        kappa: kap,
        rows,
        trends,
    })
}
