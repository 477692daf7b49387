//! Separated-variables barriers `ψ_R(t)H_R(x)`, the flat supersolution,
//! the `φ(R)` functional and the radius selector `R(y)`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::evolve::Trajectory;
use crate::grid::Field;
use crate::spectral::EigenPair;

/// Exponent beyond which `e^{Λ(p−1)t}` is replaced by its asymptotic form.
pub const OVERFLOW_EXPONENT: f64 = 700.0;

/// Nodes where `H_R` falls below this are left out of `u/H_R`.
pub const PHI_EXCLUSION: f64 = 1e-14;

/// Solution of `ψ' + Λψ + ψ^p = 0`, `ψ(0) = c`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PsiClosedForm {
    pub lambda: f64,
    pub c: f64,
    pub p: f64,
}

impl PsiClosedForm {
    pub fn new(lambda: f64, c: f64, p: f64) -> Result<PsiClosedForm> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(invalid("lambda", "must be nonnegative and finite"));
        }
        if !(c >= 0.0 && c.is_finite()) {
            return Err(invalid("c", "must be nonnegative and finite"));
        }
        if !(p > 1.0 && p.is_finite()) {
            return Err(invalid("p", "must exceed 1"));
        }
        Ok(PsiClosedForm { lambda, c, p })
    }

    /// `(Λ / ((1 + c^{1−p}Λ)e^{Λ(p−1)t} − 1))^{1/(p−1)}`.
    pub fn eval(&self, t: f64) -> f64 {
        let (lambda, c, q) = (self.lambda, self.c, self.p - 1.0);
        if c == 0.0 {
            return 0.0;
        }
        let inv_c = c.powf(-q);
        if lambda == 0.0 {
            return (inv_c + q * t).powf(-1.0 / q);
        }
        let a = inv_c * lambda;
        let x = lambda * q * t;
        if x > OVERFLOW_EXPONENT {
            return lambda.powf(1.0 / q) * (1.0 + a).powf(-1.0 / q) * (-lambda * t).exp();
        }
        // (1 + a)e^x − 1 = (1 + a)·expm1(x) + a, exact as Λ → 0
        let denom = (1.0 + a) * x.exp_m1() + a;
        (lambda / denom).powf(1.0 / q)
    }

    pub fn derivative_residual(&self, t: f64, dt: f64) -> f64 {
        let d = (self.eval(t + dt) - self.eval(t - dt)) / (2.0 * dt);
        let v = self.eval(t);
        d + self.lambda * v + v.powf(self.p)
    }
}

/// `sup |ψ_closed − ψ_RK4|` over `[0, t_max]`.
pub fn psi_ode_check(params: &PsiClosedForm, t_max: f64, dt: f64) -> Result<f64> {
    if !(dt > 0.0 && t_max >= 0.0) {
        return Err(invalid("dt", "must be positive"));
    }
    let rhs = |y: f64| -params.lambda * y - y.max(0.0).powf(params.p);
    let n = ((t_max / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    let h = t_max / n as f64;
    let mut y = params.c;
    let mut worst = (y - params.eval(0.0)).abs();
    for k in 1..=n {
        let k1 = rhs(y);
        let k2 = rhs(y + 0.5 * h * k1);
        let k3 = rhs(y + 0.5 * h * k2);
        let k4 = rhs(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        worst = worst.max((y - params.eval(k as f64 * h)).abs());
    }
    if worst > 1e-3 {
        return Err(Error::StepTooLarge { residual: worst });
    }
    Ok(worst)
}

/// `κ = (1/(p−1))^{1/(p−1)}`.
pub fn kappa(p: f64) -> f64 {
    (1.0 / (p - 1.0)).powf(1.0 / (p - 1.0))
}

/// `((p−1)t)^{−1/(p−1)}`.
pub fn flat_supersolution(p: f64, t: f64) -> Result<f64> {
    if p.is_nan() || p <= 1.0 {
        return Err(invalid("p", "must exceed 1"));
    }
    if t.is_nan() || t <= 0.0 {
        return Err(invalid("t", "must be positive"));
    }
    Ok(((p - 1.0) * t).powf(-1.0 / (p - 1.0)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiTable {
    pub radii: Vec<f64>,
    /// Running minimum of the raw infima.
    pub phi_values: Vec<f64>,
    pub raw_values: Vec<f64>,
    pub t_probe: f64,
}

impl PhiTable {
    pub fn new(radii: Vec<f64>, raw_values: Vec<f64>, t_probe: f64) -> Result<PhiTable> {
        if radii.is_empty() || radii.len() != raw_values.len() {
            return Err(invalid("phi", "radii and values must be nonempty and of equal length"));
        }
        if radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("phi.radii", "must be strictly increasing"));
        }
        if raw_values.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid("phi.values", "must be positive and finite"));
        }
        let mut running = f64::INFINITY;
        let phi_values = raw_values
            .iter()
            .map(|&v| {
                running = running.min(v);
                running
            })
            .collect();
        Ok(PhiTable {
            radii,
            phi_values,
            raw_values,
            t_probe,
        })
    }
}

/// `inf u/H_R` over each ball, made nonincreasing in `R`.
pub fn phi_of_r(u_t: &Field, eigenpairs: &[EigenPair], t_probe: f64) -> Result<PhiTable> {
    let grid = u_t.grid();
    let mut pairs: Vec<&EigenPair> = eigenpairs.iter().collect();
    pairs.sort_by(|a, b| a.radius.total_cmp(&b.radius));
    let mut raw = Vec::with_capacity(pairs.len());
    for ep in &pairs {
        let h = ep.embed(grid)?;
        let inf = grid_ratio_inf(u_t, &h)?;
        if inf.is_nan() || inf <= 0.0 {
            return Err(invalid("u_t", format!("must be positive on B_{}", ep.radius)));
        }
        raw.push(inf);
    }
    PhiTable::new(pairs.iter().map(|e| e.radius).collect(), raw, t_probe)
}

fn grid_ratio_inf(u: &Field, h: &Field) -> Result<f64> {
    let inf = u
        .values()
        .iter()
        .zip(h.values())
        .filter(|(_, &hv)| hv >= PHI_EXCLUSION)
        .map(|(&uv, &hv)| uv / hv)
        .fold(f64::INFINITY, f64::min);
    if inf.is_finite() {
        Ok(inf)
    } else {
        Err(Error::ZeroField)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    pub radius: f64,
    pub index: usize,
    /// No tabulated radius satisfies the rule; the largest was returned.
    pub exhausted: bool,
}

/// Radius schedule built from `g = φ^{p−1}`.
///
/// Selects the smallest tabulated `R` with `R² ≥ y·m(R)^{1/2}`, where
/// `m(R) = min_{r ≥ R} r²g(r)` is the tail minimum over the table.
#[derive(Clone, Debug, PartialEq)]
pub struct RSelector {
    pub phi: PhiTable,
    pub exponent: f64,
    tail_min: Vec<f64>,
}

impl RSelector {
    pub fn new(phi: PhiTable, p: f64) -> Result<RSelector> {
        if p.is_nan() || p <= 1.0 {
            return Err(invalid("p", "must exceed 1"));
        }
        let exponent = p - 1.0;
        let mut tail_min = vec![0.0; phi.radii.len()];
        let mut running = f64::INFINITY;
        for i in (0..phi.radii.len()).rev() {
            let r = phi.radii[i];
            running = running.min(r * r * phi.phi_values[i].powf(exponent));
            tail_min[i] = running;
        }
        Ok(RSelector {
            phi,
            exponent,
            tail_min,
        })
    }

    pub fn g(&self, index: usize) -> f64 {
        self.phi.phi_values[index].powf(self.exponent)
    }

    pub fn select(&self, y: f64) -> Result<Selection> {
        if y.is_nan() || y <= 0.0 {
            return Err(invalid("y", "must be positive"));
        }
        let found = self
            .phi
            .radii
            .iter()
            .zip(&self.tail_min)
            .position(|(&r, &m)| r * r >= y * m.sqrt());
        let last = self.phi.radii.len() - 1;
        Ok(match found {
            Some(index) => Selection {
                radius: self.phi.radii[index],
                index,
                exhausted: false,
            },
            None => Selection {
                radius: self.phi.radii[last],
                index: last,
                exhausted: true,
            },
        })
    }

    /// Tracks `y/R(y)²` and `y·g(R(y))` along `ys` while the table lasts.
    pub fn validate_limits(&self, ys: &[f64]) -> Result<LimitCheck> {
        let mut rows = Vec::new();
        for &y in ys {
            let s = self.select(y)?;
            if s.exhausted {
                break;
            }
            rows.push((y, y / (s.radius * s.radius), y * self.g(s.index)));
        }
        let ratio_decreasing = rows.windows(2).all(|w| w[1].1 <= w[0].1 * (1.0 + 1e-12))
            && rows.len() >= 2
            && rows.last().unwrap().1 < rows[0].1;
        let product_increasing = rows.windows(2).all(|w| w[1].2 >= w[0].2 * (1.0 - 1e-12))
            && rows.len() >= 2
            && rows.last().unwrap().2 > rows[0].2;
        Ok(LimitCheck {
            rows,
            ratio_decreasing,
            product_increasing,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LimitCheck {
    /// `(y, y/R², y·g(R))`.
    pub rows: Vec<(f64, f64, f64)>,
    pub ratio_decreasing: bool,
    pub product_increasing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BarrierRow {
    pub t: f64,
    pub psi: f64,
    /// `min over B_R of u − ψ_R(t)H_R`.
    pub min_slack: f64,
    pub origin_slack: f64,
}

/// `c = inf u₀/H_R` on the mask and the barrier rows along the trajectory.
pub fn barrier_rows(traj: &Trajectory, u0: &Field, ep: &EigenPair) -> Result<(PsiClosedForm, Vec<BarrierRow>)> {
    let grid = u0.grid();
    let h = ep.embed(grid)?;
    let c = grid_ratio_inf(u0, &h)?;
    let params = PsiClosedForm::new(ep.lambda, c, traj.p)?;
    let mask = ep.mask();
    let nodes: Vec<usize> = mask
        .indices()
        .filter_map(|i| grid.flat_index_signed(&ep.grid().lattice(i)[..grid.dim()]))
        .collect();
    let origin = grid.origin_index();
    let rows = traj
        .checkpoints
        .iter()
        .map(|cp| {
            let psi = params.eval(cp.t);
            let min_slack = nodes
                .iter()
                .map(|&i| cp.u.values()[i] - psi * h.values()[i])
                .fold(f64::INFINITY, f64::min);
            BarrierRow {
                t: cp.t,
                psi,
                min_slack,
                origin_slack: cp.u.values()[origin] - psi * h.values()[origin],
            }
        })
        .collect();
    Ok((params, rows))
}

/// As [`barrier_rows`], failing when a slack drops below `−allowed`.
pub fn barrier_check(traj: &Trajectory, u0: &Field, ep: &EigenPair, allowed: f64) -> Result<Vec<BarrierRow>> {
    let (_, rows) = barrier_rows(traj, u0, ep)?;
    if let Some(r) = rows.iter().find(|r| r.min_slack < -allowed) {
        return Err(Error::BarrierViolation {
            t: r.t,
            slack: r.min_slack,
            allowed,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolve::{evolve, make_initial_datum, InitialDatum, SimState};
    use crate::grid::{make_grid, ExteriorRule};
    use crate::kernel::{discretize_kernel, make_kernel, KernelFamily};
    use crate::spectral::principal_eigenpair;
    use proptest::prelude::*;

    fn rk4_oracle(lambda: f64, c: f64, p: f64, t: f64, n: usize) -> f64 {
        let f = |y: f64| -lambda * y - y.powf(p);
        let h = t / n as f64;
        let mut y = c;
        for _ in 0..n {
            let k1 = f(y);
            let k2 = f(y + 0.5 * h * k1);
            let k3 = f(y + 0.5 * h * k2);
            let k4 = f(y + h * k3);
            y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        y
    }

    #[test]
    fn psi_values() {
        let psi = PsiClosedForm::new(0.1, 1.0, 2.0).unwrap();
        assert_eq!(psi.eval(0.0), 1.0);
        let oracle = rk4_oracle(0.1, 1.0, 2.0, 1.0, 10_000);
        assert!((psi.eval(1.0) - oracle).abs() < 1e-12);
        assert!((psi.eval(1.0) - 0.46364).abs() < 1e-5);
        let tiny = PsiClosedForm::new(1e-8, 1.0, 2.0).unwrap();
        assert!((tiny.eval(1.0) - 0.5).abs() < 1e-6);
        assert_eq!(PsiClosedForm::new(0.0, 1.0, 2.0).unwrap().eval(1.0), 0.5);
        assert_eq!(PsiClosedForm::new(0.3, 0.0, 2.0).unwrap().eval(2.0), 0.0);
        assert!(PsiClosedForm::new(-0.1, 1.0, 2.0).is_err());
        assert!(PsiClosedForm::new(0.1, 1.0, 1.0).is_err());
    }

    #[test]
    fn psi_overflow_guard_is_continuous() {
        let psi = PsiClosedForm::new(1.0, 1.0, 2.0).unwrap();
        let below = psi.eval(699.999_999);
        let above = psi.eval(700.000_001);
        assert!(below > 0.0 && above > 0.0);
        // the two times differ by 2e-6, so the ratio is e^{2e-6}
        assert!((below / above - (2e-6f64).exp()).abs() < 1e-9);
        assert!(psi.eval(5000.0) >= 0.0);
    }

    #[test]
    fn psi_against_integration() {
        let psi = PsiClosedForm::new(0.1, 1.0, 2.0).unwrap();
        let r = psi_ode_check(&psi, 10.0, 1e-3).unwrap();
        assert!(r <= 1e-8, "{r:e}");
        let r_half = psi_ode_check(&psi, 10.0, 5e-4).unwrap();
        assert!(r_half < r);
        assert_eq!(
            psi_ode_check(&PsiClosedForm::new(0.1, 0.0, 2.0).unwrap(), 10.0, 1e-3).unwrap(),
            0.0
        );
        let pure = PsiClosedForm::new(0.0, 2.0, 2.0).unwrap();
        assert!(psi_ode_check(&pure, 10.0, 1e-3).unwrap() < 1e-10);
        assert!(matches!(
            psi_ode_check(&PsiClosedForm::new(0.1, 50.0, 3.0).unwrap(), 1.0, 0.5),
            Err(Error::StepTooLarge { .. })
        ));
    }

    #[test]
    fn psi_satisfies_the_ode_at_sample_times() {
        for &(l, c, p) in &[(0.1, 1.0, 2.0), (0.01, 0.5, 3.0), (0.5, 2.0, 1.5)] {
            let psi = PsiClosedForm::new(l, c, p).unwrap();
            let mut prev = f64::INFINITY;
            for k in 0..1000 {
                let t = 1e-4 + k as f64 * 0.01;
                assert!(psi.derivative_residual(t, 1e-5).abs() <= 1e-6);
                let v = psi.eval(t);
                assert!(v > 0.0 && v < prev);
                prev = v;
            }
        }
    }

    #[test]
    fn flat_supersolution_values() {
        assert_eq!(flat_supersolution(2.0, 1.0).unwrap(), 1.0);
        assert!((flat_supersolution(3.0, 1.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
        assert!(flat_supersolution(2.0, 0.0).is_err());
        assert_eq!(kappa(2.0), 1.0);
        assert!((kappa(3.0) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn flat_profile_constant(p in 1.1f64..5.0, t in 0.01f64..1e4) {
            let w = flat_supersolution(p, t).unwrap();
            let k = kappa(p);
            prop_assert!((t.powf(1.0 / (p - 1.0)) * w - k).abs() <= 1e-12 * k);
        }

        #[test]
        fn selector_is_nondecreasing(
            raw in proptest::collection::vec(0.01f64..2.0, 2..12),
            y1 in 0.1f64..500.0,
            y2 in 0.1f64..500.0,
            p in 1.2f64..4.0,
        ) {
            let radii = (0..raw.len()).map(|i| 2.0 * (i + 1) as f64).collect();
            let sel = RSelector::new(PhiTable::new(radii, raw, 1.0).unwrap(), p).unwrap();
            let (a, b) = if y1 <= y2 { (y1, y2) } else { (y2, y1) };
            prop_assert!(sel.select(a).unwrap().radius <= sel.select(b).unwrap().radius);
            prop_assert!(sel.phi.phi_values.windows(2).all(|w| w[1] <= w[0]));
            prop_assert!(sel.phi.phi_values.iter().all(|&v| v > 0.0));
        }
    }

    fn geometric_radii(n: usize) -> Vec<f64> {
        (0..n).map(|i| 1.1f64.powi(i as i32)).collect()
    }

    #[test]
    fn selector_constant_table() {
        let radii = geometric_radii(120);
        let sel = RSelector::new(PhiTable::new(radii.clone(), vec![1.0; 120], 1.0).unwrap(), 2.0).unwrap();
        for &y in &[2.0, 10.0, 100.0, 1000.0] {
            let s = sel.select(y).unwrap();
            assert!(!s.exhausted);
            let want = radii.iter().copied().find(|&r| r >= y).unwrap();
            assert_eq!(s.radius, want);
        }
        let check = sel.validate_limits(&[1.0, 10.0, 100.0, 1000.0, 10_000.0]).unwrap();
        assert!(check.ratio_decreasing && check.product_increasing);
        let s = sel.select(1e9).unwrap();
        assert!(s.exhausted && s.index == 119);
    }

    #[test]
    fn selector_inverse_table() {
        let radii = geometric_radii(150);
        let phi = radii.iter().map(|r| 1.0 / r).collect();
        let sel = RSelector::new(PhiTable::new(radii, phi, 1.0).unwrap(), 2.0).unwrap();
        for &y in &[10.0, 1000.0, 100_000.0] {
            let r = sel.select(y).unwrap().radius;
            let expected = y.powf(2.0 / 3.0);
            assert!(r >= expected && r <= 1.1 * expected * (1.0 + 1e-12));
        }
        let check = sel
            .validate_limits(&[10.0, 100.0, 1000.0, 10_000.0, 100_000.0])
            .unwrap();
        assert!(check.ratio_decreasing && check.product_increasing);
        assert!(check.rows.last().unwrap().1 < 0.05);
        assert!(check.rows.last().unwrap().2 > 40.0);
    }

    fn eigen_setup() -> (crate::grid::Grid, EigenPair) {
        let dk = discretize_kernel(&make_kernel(KernelFamily::PolynomialBump, 1.0, 1).unwrap(), 0.1).unwrap();
        let g = make_grid(1, 20.0, 0.1).unwrap();
        let ep = principal_eigenpair(&dk, &g, 5.0, 1e-10, 100_000).unwrap();
        (g, ep)
    }

    #[test]
    fn phi_trivial_cases() {
        let (g, ep) = eigen_setup();
        let one = Field::new(g, vec![1.0; g.len()], ExteriorRule::Constant { value: 1.0 }).unwrap();
        let t = phi_of_r(&one, std::slice::from_ref(&ep), 1.0).unwrap();
        assert_eq!(t.phi_values, vec![1.0]);
        let h = ep.embed(&g).unwrap();
        let t = phi_of_r(&h, std::slice::from_ref(&ep), 1.0).unwrap();
        assert_eq!(t.phi_values, vec![1.0]);
        assert!(phi_of_r(&Field::zeros(&g, ExteriorRule::Zero), &[ep], 1.0).is_err());
    }

    #[test]
    fn running_minimum_enforced() {
        let t = PhiTable::new(vec![1.0, 2.0, 3.0], vec![0.5, 0.6, 0.4], 1.0).unwrap();
        assert_eq!(t.phi_values, vec![0.5, 0.5, 0.4]);
        assert!(PhiTable::new(vec![1.0, 1.0], vec![1.0, 1.0], 1.0).is_err());
        assert!(PhiTable::new(vec![1.0], vec![0.0], 1.0).is_err());
    }

    #[test]
    fn subsolution_holds_along_a_run() {
        let dk = discretize_kernel(&make_kernel(KernelFamily::PolynomialBump, 1.0, 1).unwrap(), 0.1).unwrap();
        let (g, ep) = eigen_setup();
        let u0 = make_initial_datum(&InitialDatum::FloorTail { alpha: 1.0 }, &g).unwrap();
        let traj = evolve(
            &SimState::new(u0.clone(), 2.0).unwrap(),
            &dk,
            8.0,
            0.01,
            &[0.0, 1.0, 2.0, 4.0],
        )
        .unwrap();
        let rows = barrier_check(&traj, &u0, &ep, 1e-3).unwrap();
        assert_eq!(rows[0].t, 0.0);
        assert!(rows[0].min_slack >= 0.0);
        assert!(rows.windows(2).all(|w| w[1].psi < w[0].psi));
        assert!(rows.iter().all(|r| r.min_slack >= -1e-3));

        let h = ep.embed(&g).unwrap();
        let traj = evolve(
            &SimState::new(h.clone(), 2.0).unwrap(),
            &dk,
            4.0,
            0.01,
            &[0.0, 1.0, 2.0],
        )
        .unwrap();
        let (params, rows) = barrier_rows(&traj, &h, &ep).unwrap();
        assert_eq!(params.c, 1.0);
        assert!(rows.iter().all(|r| r.min_slack >= -1e-3));
    }
}
