//! Hierarchical (L2, BV) decomposition. Starting from `u_0` (zero by default),
//! each level splits the current residual at a finer scale,
//!
//! ```text
//! (w_{k+1}, v_{k+1}) = argmin_{w + v = v_k} 1/2 ||v||^2 + t_k TV(w),   t_k = t_0 r^k
//! ```
//!
//! so that `f = u_0 + w_1 + ... + w_N + v_N`. At exact minimizers the ledger
//! satisfies `sum_k (2 t_k TV(w_{k+1}) + ||w_{k+1}||^2) = ||v_0||^2 - ||v_{n+1}||^2`.

use serde::{Deserialize, Serialize};

use crate::error::{DecompError, Result};
use crate::field::{DualField, GridField};
use crate::rof::{solve_rof_from, Certificate, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleSchedule {
    pub t0: f64,
    pub ratio: f64,
    pub levels: usize,
}

impl ScaleSchedule {
    pub fn new(t0: f64, ratio: f64, levels: usize) -> Result<Self> {
        let s = ScaleSchedule { t0, ratio, levels };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return Err(DecompError::InvalidParameter(format!("t0 must be positive, got {}", self.t0)));
        }
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(DecompError::InvalidParameter(format!("ratio must lie in (0, 1), got {}", self.ratio)));
        }
        if self.levels == 0 {
            return Err(DecompError::InvalidParameter("schedule needs at least one level".into()));
        }
        Ok(())
    }

    /// `t_k = t0 ratio^k` for `k = 0..levels`.
    pub fn scales(&self) -> Vec<f64> {
        (0..self.levels).map(|k| self.t0 * self.ratio.powi(k as i32)).collect()
    }
}

/// Initial approximation `u_0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Start {
    #[default]
    Zero,
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerRow {
    /// Level index `k` (0-based); the row describes `w_{k+1}` and `v_{k+1}`.
    pub level: usize,
    pub t: f64,
    pub tv_w: f64,
    pub w_norm_sq: f64,
    pub v_norm_sq: f64,
    pub iterations: usize,
    pub certified: bool,
    pub certificate: Certificate,
    /// The level only moved the mean (`TV(w)` negligible).
    pub pure_mean: bool,
}

#[derive(Debug, Clone)]
pub struct MultiscaleDecomposition {
    pub schedule: ScaleSchedule,
    pub start: Start,
    pub u0: GridField,
    /// `w_1 .. w_N`
    pub details: Vec<GridField>,
    /// `v_0 .. v_N`
    pub residuals: Vec<GridField>,
    pub ledger: Vec<LedgerRow>,
    /// Dual fields `z_1 .. z_N`; `v_{k+1} = -t_k div z_{k+1}`.
    pub duals: Vec<DualField>,
}

impl MultiscaleDecomposition {
    pub fn levels(&self) -> usize {
        self.details.len()
    }

    pub fn all_certified(&self) -> bool {
        self.ledger.iter().all(|r| r.certified)
    }
}

pub fn decompose(f: &GridField, schedule: &ScaleSchedule, cfg: &SolverConfig) -> Result<MultiscaleDecomposition> {
    decompose_from(f, schedule, cfg, Start::Zero)
}

pub fn decompose_from(
    f: &GridField,
    schedule: &ScaleSchedule,
    cfg: &SolverConfig,
    start: Start,
) -> Result<MultiscaleDecomposition> {
    schedule.validate()?;
    let u0 = match start {
        Start::Zero => GridField::zeros(f.grid().clone()),
        Start::Mean => GridField::constant(f.grid().clone(), f.mean())?,
    };
    let v0 = f.sub(&u0)?;
    let scale = f.l2_norm().max(f64::MIN_POSITIVE);
    let mut residuals = vec![v0];
    let mut details = Vec::with_capacity(schedule.levels);
    let mut ledger = Vec::with_capacity(schedule.levels);
    let mut duals: Vec<DualField> = Vec::with_capacity(schedule.levels);
    for (k, t) in schedule.scales().into_iter().enumerate() {
        let vk = &residuals[k];
        let sol = solve_rof_from(vk, t, cfg, duals.last())?;
        let w = sol.u;
        let tv_w = sol.tv_u;
        ledger.push(LedgerRow {
            level: k,
            t,
            tv_w,
            w_norm_sq: w.l2_norm().powi(2),
            v_norm_sq: sol.v.l2_norm().powi(2),
            iterations: sol.iterations,
            certified: sol.certified,
            certificate: sol.certificate,
            pure_mean: tv_w <= 1e-9 * scale,
        });
        details.push(w);
        residuals.push(sol.v);
        duals.push(sol.z);
    }
    Ok(MultiscaleDecomposition {
        schedule: *schedule,
        start,
        u0,
        details,
        residuals,
        ledger,
        duals,
    })
}

/// `u_k = u_0 + w_1 + ... + w_k`.
pub fn reconstruct(d: &MultiscaleDecomposition, k: usize) -> Result<GridField> {
    if k > d.levels() {
        return Err(DecompError::InvalidParameter(format!(
            "level {k} out of range 0..={}",
            d.levels()
        )));
    }
    let mut acc = d.u0.clone();
    for w in &d.details[..k] {
        acc = acc.add(w)?;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerCheck {
    /// `sum_{k<=n} (2 t_k TV(w_{k+1}) + ||w_{k+1}||^2)` for each `n`.
    pub lhs_partial_sums: Vec<f64>,
    /// `||v_0||^2 - ||v_{n+1}||^2` for each `n`.
    pub rhs: Vec<f64>,
    pub max_relative_gap: f64,
    /// `sum_{k<=n} 2 t_k |<z_{k+1}, grad w_{k+1}> - TV(w_{k+1})|`: the identity
    /// is off by at most this much when each level carries its certificate.
    pub certificate_bound: Vec<f64>,
}

/// Compare both sides of the energy identity level by level.
pub fn energy_ledger_check(d: &MultiscaleDecomposition) -> LedgerCheck {
    let v0 = d.residuals[0].l2_norm().powi(2);
    let mut lhs = Vec::with_capacity(d.levels());
    let mut rhs = Vec::with_capacity(d.levels());
    let mut acc = 0.0;
    let mut gap = 0.0f64;
    let mut bound = Vec::with_capacity(d.levels());
    let mut cert = 0.0;
    for row in &d.ledger {
        acc += 2.0 * row.t * row.tv_w + row.w_norm_sq;
        cert += 2.0 * row.t * row.certificate.pairing_residual;
        bound.push(cert);
        let r = v0 - row.v_norm_sq;
        let denom = r.abs().max(f64::MIN_POSITIVE);
        if acc != r {
            gap = gap.max((acc - r).abs() / denom);
        }
        lhs.push(acc);
        rhs.push(r);
    }
    LedgerCheck { lhs_partial_sums: lhs, rhs, max_relative_gap: gap, certificate_bound: bound }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;
    use crate::rof::solve_rof;

    fn tight() -> SolverConfig {
        SolverConfig::default().with_tol(1e-9).with_gap_rtol(1e-8)
    }

    #[test]
    fn schedule_validation() {
        assert!(ScaleSchedule::new(0.1, 0.5, 3).is_ok());
        assert!(ScaleSchedule::new(0.0, 0.5, 3).is_err());
        assert!(ScaleSchedule::new(0.1, 1.0, 3).is_err());
        assert!(ScaleSchedule::new(0.1, 0.5, 0).is_err());
        let s = ScaleSchedule::new(1.0, 0.5, 4).unwrap().scales();
        assert_eq!(s, vec![1.0, 0.5, 0.25, 0.125]);
    }

    #[test]
    fn constant_captured_at_first_level() {
        let f = GridField::constant(Grid::new_1d(16).unwrap(), 1.5).unwrap();
        let d = decompose(&f, &ScaleSchedule::new(0.1, 0.5, 3).unwrap(), &tight()).unwrap();
        assert!(d.details[0].values().iter().all(|&x| (x - 1.5).abs() < 1e-12));
        for w in &d.details[1..] {
            assert!(w.sup_norm() < 1e-12);
        }
        assert!(d.ledger[0].pure_mean);
        let check = energy_ledger_check(&d);
        assert!(check.max_relative_gap < 1e-12);
        assert!((check.rhs[0] - f.l2_norm().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn single_level_matches_rof() {
        let f = GridField::sample(Grid::new_1d(64).unwrap(), |x| (6.0 * x[0]).sin()).unwrap();
        let d = decompose(&f, &ScaleSchedule::new(0.05, 0.5, 1).unwrap(), &tight()).unwrap();
        let direct = solve_rof(&f, 0.05, &tight()).unwrap();
        assert!(d.details[0].sub(&direct.u).unwrap().sup_norm() < 1e-6);
    }

    #[test]
    fn reconstruct_bounds_and_exactness() {
        let f = GridField::sample(Grid::new_1d(32).unwrap(), |x| x[0] * x[0]).unwrap();
        let d = decompose(&f, &ScaleSchedule::new(0.05, 0.5, 4).unwrap(), &tight()).unwrap();
        assert_eq!(reconstruct(&d, 0).unwrap().sup_norm(), 0.0);
        let full = reconstruct(&d, 4).unwrap().add(&d.residuals[4]).unwrap();
        assert!(full.sub(&f).unwrap().sup_norm() < 1e-14);
        assert!(reconstruct(&d, 5).is_err());
    }

    #[test]
    fn mean_start() {
        let f = GridField::sample(Grid::new_1d(32).unwrap(), |x| x[0]).unwrap();
        let d = decompose_from(&f, &ScaleSchedule::new(0.05, 0.5, 2).unwrap(), &tight(), Start::Mean).unwrap();
        assert!((d.u0.values()[0] - 0.5).abs() < 1e-15);
        assert!(d.residuals[0].mean().abs() < 1e-15);
    }
}
