//! Discretization study: `K_n(f, t)` on dyadic grids with `2^n` cells per axis,
//! compared with a reference value, plus the matrix-free `l1` form of the
//! discrete anisotropic problem.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{DecompError, Result};
use crate::field::{project_to_level, Grid, GridField, TvMode};
use crate::oracles::AnalyticSolution;
use crate::rof::{solve_rof, SolverConfig};

/// Finest and coarsest levels accepted by [`kn_study`].
pub const MIN_LEVEL: u32 = 3;
pub const MAX_LEVEL: u32 = 12;

/// Midpoint subsamples per axis when averaging analytic data over a cell.
const AVERAGE_SUBSAMPLES: usize = 4;

#[derive(Debug, Clone)]
pub enum StudySource {
    /// Closed-form example; `f_n` are cell averages and the errors are
    /// measured against cell averages of the analytic `u_t`.
    Analytic(AnalyticSolution),
    /// Data on a fine dyadic grid; the finest studied level is the reference.
    Field(GridField),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Analytic,
    FinestGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelRow {
    pub level: u32,
    pub cells_per_axis: usize,
    pub k_n: f64,
    /// `|K_n - K_ref|`
    pub k_gap: f64,
    pub l2_error: f64,
    pub l1_error: f64,
    pub iterations: usize,
    pub certified: bool,
    pub tv_mode: TvMode,
    pub config: SolverConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub t: f64,
    pub levels: Vec<u32>,
    pub k_ref: f64,
    pub provenance: Provenance,
    pub tv_mode: TvMode,
    pub config: SolverConfig,
    pub rows: Vec<LevelRow>,
}

impl ConvergenceReport {
    pub fn k_gaps(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.k_gap).collect()
    }

    /// Each gap is at most `(1 + slack)` times the previous one.
    pub fn k_gap_decreasing(&self, slack: f64) -> bool {
        self.rows.windows(2).all(|w| w[1].k_gap <= w[0].k_gap * (1.0 + slack))
    }

    /// The L1 error trends down: the last error is below the first, and no
    /// level exceeds its predecessor by more than `slack` relative.
    pub fn l1_trend_ok(&self, slack: f64) -> bool {
        let (Some(first), Some(last)) = (self.rows.first(), self.rows.last()) else {
            return true;
        };
        last.l1_error <= first.l1_error
            && self.rows.windows(2).all(|w| w[1].l1_error <= w[0].l1_error * (1.0 + slack))
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,cells_per_axis,t,k_n,k_ref,k_gap,l2_error,l1_error,iterations,certified,tv_mode,provenance\n");
        let prov = match self.provenance {
            Provenance::Analytic => "analytic",
            Provenance::FinestGrid => "finest-grid",
        };
        for r in &self.rows {
            let mode = match r.tv_mode {
                TvMode::Isotropic => "isotropic",
                TvMode::Anisotropic => "anisotropic",
            };
            s.push_str(&format!(
                "{},{},{:e},{:.12e},{:.12e},{:.6e},{:.6e},{:.6e},{},{},{},{}\n",
                r.level,
                r.cells_per_axis,
                self.t,
                r.k_n,
                self.k_ref,
                r.k_gap,
                r.l2_error,
                r.l1_error,
                r.iterations,
                r.certified,
                mode,
                prov
            ));
        }
        s
    }
}

fn check_levels(levels: &[u32]) -> Result<()> {
    if levels.is_empty() {
        return Err(DecompError::InvalidParameter("study needs at least one level".into()));
    }
    if let Some(&l) = levels.iter().find(|&&l| !(MIN_LEVEL..=MAX_LEVEL).contains(&l)) {
        return Err(DecompError::InvalidParameter(format!(
            "level {l} outside the supported range {MIN_LEVEL}..={MAX_LEVEL}"
        )));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(DecompError::InvalidParameter("levels must be strictly increasing".into()));
    }
    Ok(())
}

/// Piecewise-constant injection of a dyadic field onto a finer dyadic grid.
fn prolong(u: &GridField, fine: &Grid) -> Result<GridField> {
    let d = fine.dims();
    let nc = u.grid().shape()[0];
    let nf = fine.shape()[0];
    if nf % nc != 0 || u.grid().dims() != d {
        return Err(DecompError::ShapeMismatch {
            expected: fine.shape().to_vec(),
            got: u.grid().shape().to_vec(),
        });
    }
    let r = nf / nc;
    let vals = (0..fine.len())
        .map(|c| {
            if d == 1 {
                u.values()[c / r]
            } else {
                let (i, j) = (c / nf, c % nf);
                u.values()[(i / r) * nc + j / r]
            }
        })
        .collect();
    GridField::new(fine.clone(), vals)
}

/// Solve at each level in parallel and tabulate `K_n` and the solution errors.
pub fn kn_study(source: &StudySource, t: f64, levels: &[u32], cfg: &SolverConfig) -> Result<ConvergenceReport> {
    check_levels(levels)?;
    cfg.validate(1)?;
    if !(t > 0.0 && t.is_finite()) {
        return Err(DecompError::InvalidParameter(format!("scale t must be positive, got {t}")));
    }
    let finest = *levels.last().expect("levels checked non-empty");
    if let StudySource::Field(f) = source {
        let need = 1usize << finest;
        if f.grid().shape().iter().any(|&n| n % need != 0) {
            return Err(DecompError::Level { level: finest, shape: f.grid().shape().to_vec() });
        }
    }

    struct Solved {
        level: u32,
        u: GridField,
        k_n: f64,
        iterations: usize,
        certified: bool,
        analytic_errors: Option<(f64, f64)>,
    }

    let solved: Vec<Solved> = levels
        .par_iter()
        .map(|&level| -> Result<Solved> {
            let n = 1usize << level;
            match source {
                StudySource::Analytic(ex) => {
                    let grid = ex.grid(n)?;
                    let f = ex.cell_averages(&grid, AVERAGE_SUBSAMPLES, |s, x| s.f(x))?;
                    let u_ref = ex.cell_averages(&grid, AVERAGE_SUBSAMPLES, |s, x| s.u(x))?;
                    let sol = solve_rof(&f, t, cfg)?;
                    let e = sol.u.sub(&u_ref)?;
                    Ok(Solved {
                        level,
                        k_n: sol.k_direct(),
                        iterations: sol.iterations,
                        certified: sol.certified,
                        analytic_errors: Some((e.l2_norm(), e.lp_norm(1.0)?)),
                        u: sol.u,
                    })
                }
                StudySource::Field(f) => {
                    let fnl = project_to_level(f, level)?;
                    let sol = solve_rof(&fnl, t, cfg)?;
                    Ok(Solved {
                        level,
                        k_n: sol.k_direct(),
                        iterations: sol.iterations,
                        certified: sol.certified,
                        analytic_errors: None,
                        u: sol.u,
                    })
                }
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let (k_ref, provenance) = match source {
        StudySource::Analytic(ex) => (ex.k_value(), Provenance::Analytic),
        StudySource::Field(_) => (solved.last().expect("non-empty").k_n, Provenance::FinestGrid),
    };
    let reference = solved.last().expect("non-empty").u.clone();
    let mut rows = Vec::with_capacity(solved.len());
    for s in &solved {
        let (l2_error, l1_error) = match s.analytic_errors {
            Some(e) => e,
            None => {
                let e = prolong(&s.u, reference.grid())?.sub(&reference)?;
                (e.l2_norm(), e.lp_norm(1.0)?)
            }
        };
        rows.push(LevelRow {
            level: s.level,
            cells_per_axis: 1 << s.level,
            k_n: s.k_n,
            k_gap: (s.k_n - k_ref).abs(),
            l2_error,
            l1_error,
            iterations: s.iterations,
            certified: s.certified,
            tv_mode: cfg.tv,
            config: *cfg,
        });
    }
    Ok(ConvergenceReport {
        t,
        levels: levels.to_vec(),
        k_ref,
        provenance,
        tv_mode: cfg.tv,
        config: *cfg,
        rows,
    })
}

/// `K_n` over nested spaces with the data held at the finest grid:
/// `inf_{u in V_n} 1/2 ||f - u||^2 + t TV(u)` for each level, computed as
/// `1/2 ||f - P_n f||^2 + K(P_n f, t)` on the coarse grid. With anisotropic TV
/// the coarse-grid TV of `u in V_n` equals its fine-grid TV, so the values are
/// nonincreasing in `n`.
pub fn nested_k_values(f: &GridField, t: f64, levels: &[u32], cfg: &SolverConfig) -> Result<Vec<f64>> {
    levels
        .iter()
        .map(|&level| {
            let coarse = project_to_level(f, level)?;
            let back = prolong(&coarse, f.grid())?;
            let defect = 0.5 * f.sub(&back)?.l2_norm().powi(2);
            Ok(defect + solve_rof(&coarse, t, cfg)?.k_direct())
        })
        .collect()
}

/// The discrete anisotropic problem written as
/// `min_x ||b - x||^2 + t_num ||M x||_1` on an unmasked grid, where `M`
/// stacks the forward differences over active edges divided by the spacing.
///
/// The grid energy `1/2 ||b - x||^2_h + t TV(x)` equals
/// `energy_scale * objective(x)` with `energy_scale = h^d / 2` and `t_num = 2 t`.
#[derive(Debug, Clone)]
pub struct L1Form {
    grid: Grid,
    pub b: Vec<f64>,
    pub t: f64,
    pub t_num: f64,
    pub energy_scale: f64,
}

pub fn l1_minimization_form(f_n: &GridField, t: f64, mode: TvMode) -> Result<L1Form> {
    if mode != TvMode::Anisotropic {
        return Err(DecompError::Unsupported("the l1 form is exact only for anisotropic TV".into()));
    }
    if f_n.grid().mask().is_some() {
        return Err(DecompError::Unsupported("the l1 form needs an unmasked grid".into()));
    }
    if !(t >= 0.0 && t.is_finite()) {
        return Err(DecompError::InvalidParameter(format!("scale t must be nonnegative, got {t}")));
    }
    Ok(L1Form {
        grid: f_n.grid().clone(),
        b: f_n.values().to_vec(),
        t,
        t_num: 2.0 * t,
        energy_scale: 0.5 * f_n.grid().cell_volume(),
    })
}

impl L1Form {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Number of rows of `M`.
    pub fn rows(&self) -> usize {
        (0..self.grid.dims())
            .map(|a| (0..self.grid.len()).filter(|&c| self.grid.edge_active(a, c)).count())
            .sum()
    }

    pub fn apply_m(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.grid.len() {
            return Err(DecompError::ShapeMismatch { expected: vec![self.grid.len()], got: vec![x.len()] });
        }
        let shape = self.grid.shape();
        let mut out = Vec::with_capacity(self.rows());
        for a in 0..self.grid.dims() {
            let stride = if a == 0 && self.grid.dims() == 2 { shape[1] } else { 1 };
            let h = self.grid.spacing()[a];
            for c in 0..self.grid.len() {
                if self.grid.edge_active(a, c) {
                    out.push((x[c + stride] - x[c]) / h);
                }
            }
        }
        Ok(out)
    }

    pub fn objective(&self, x: &[f64]) -> Result<f64> {
        let mx = self.apply_m(x)?;
        let fid: f64 = crate::field::csum(self.b.iter().zip(x).map(|(b, x)| (b - x) * (b - x)));
        let l1: f64 = crate::field::csum(mx.iter().map(|v| v.abs()));
        Ok(fid + self.t_num * l1)
    }

    /// `energy_scale * objective(x)`, comparable with the grid ROF energy.
    pub fn grid_energy(&self, x: &[f64]) -> Result<f64> {
        Ok(self.energy_scale * self.objective(x)?)
    }
}
