//! Desk-scale checks for the `(L_p, W^1(L_tau))` pair with `1/tau = 1/p + 1/d`:
//!
//! ```text
//! (u_t, v_t) = argmin_{u + v = f} 1/p ||v||_p^p + t ||grad u||_tau
//! ```
//!
//! There is no solver here. Given a candidate `u`, [`check_lp_sobolev_optimality`]
//! evaluates the optimality conditions through the duality map
//! `J_p(v) = |v|^(p-2) v` and the norm
//! `||s||_G = sup { <s, w> : ||grad w||_tau <= 1 }`. That sup is only
//! estimated from below, so a passing report is evidence, not proof.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{DecompError, Result};
use crate::field::{csum, DualField, GridField, Stencil};

/// `|u|^(p-2) u` componentwise, with `0 -> 0`.
pub fn duality_map(u: &[f64], p: f64) -> Result<Vec<f64>> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(DecompError::InvalidParameter(format!("duality map needs 1 < p < inf, got {p}")));
    }
    Ok(u.iter().map(|&x| if x == 0.0 { 0.0 } else { x.abs().powf(p - 2.0) * x }).collect())
}

pub fn duality_map_field(u: &GridField, p: f64) -> Result<GridField> {
    GridField::new(u.grid().clone(), duality_map(u.values(), p)?)
}

/// `tau` with `1/tau = 1/p + 1/d`.
pub fn sobolev_index(p: f64, d: usize) -> f64 {
    1.0 / (1.0 / p + 1.0 / d as f64)
}

/// `(sum_cells |grad u|^tau h^d)^(1/tau)` with the Euclidean per-cell norm.
pub fn grad_lt_norm(u: &GridField, tau: f64) -> f64 {
    let g = crate::field::grad(u);
    grad_field_norm(&g, tau)
}

fn grad_field_norm(g: &DualField, tau: f64) -> f64 {
    let d = g.grid().dims();
    let n = g.grid().len();
    let s = csum((0..n).map(|c| {
        let m: f64 = (0..d).map(|a| g.component(a)[c].powi(2)).sum::<f64>().sqrt();
        if m == 0.0 {
            0.0
        } else {
            m.powf(tau)
        }
    }));
    (s * g.grid().cell_volume()).powf(1.0 / tau)
}

/// Relative mean above which `s` is not treated as mean-free.
pub const MEAN_FREE_RTOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GNormEstimate {
    /// Best lower bound found.
    pub value: f64,
    /// Contribution of the ascent alone.
    pub ascent_value: f64,
    /// Contribution of the random probes alone.
    pub probe_value: f64,
    pub iterations: usize,
}

/// Lower bound on `||s||_G` by ascent on `<s, w> / ||grad w||_tau`, started
/// from `s` itself, plus a fixed set of random probes.
pub fn g_tau_norm_estimate(s: &GridField, tau: f64, iters: usize) -> Result<f64> {
    Ok(g_tau_norm_estimate_seeded(s, tau, iters, &[])?.value)
}

pub fn g_tau_norm_estimate_seeded(s: &GridField, tau: f64, iters: usize, seeds: &[GridField]) -> Result<GNormEstimate> {
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(DecompError::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    let scale = s.sup_norm();
    if scale == 0.0 {
        return Ok(GNormEstimate { value: 0.0, ascent_value: 0.0, probe_value: 0.0, iterations: 0 });
    }
    if s.mean().abs() > MEAN_FREE_RTOL * scale {
        return Err(DecompError::InvalidParameter(format!(
            "G-norm needs a mean-free input, mean = {:e}",
            s.mean()
        )));
    }
    let grid = s.grid();
    let ratio = |w: &GridField| -> f64 {
        let den = grad_lt_norm(w, tau);
        if den > 0.0 {
            s.dot(w).unwrap_or(0.0) / den
        } else {
            0.0
        }
    };

    // random probes: fixed count and seed so the result does not depend on iters
    let mut rng = ChaCha8Rng::seed_from_u64(0x6_7a0);
    let mut probe_value = 0.0f64;
    for _ in 0..256 {
        let w = GridField::new(
            grid.clone(),
            (0..grid.len()).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect(),
        )?;
        let r = ratio(&w);
        probe_value = probe_value.max(r.abs());
    }
    for seed in seeds {
        s.check_grid(seed)?;
        probe_value = probe_value.max(ratio(seed).abs());
    }
    // indicator probes: axis-aligned half spaces and superlevel sets of s and
    // the seeds; for tau <= 1 the sup sits on such jump functions
    for w in structured_probes(s, seeds) {
        probe_value = probe_value.max(ratio(&w).abs());
    }

    // ascent from the best of s and the seeds
    let mut w = s.clone();
    let mut best = ratio(&w);
    for seed in seeds {
        let r = ratio(seed);
        if r > best {
            best = r;
            w = seed.clone();
        }
    }
    let st = Stencil::new(grid);
    let vol = grid.cell_volume();
    let d = grid.dims();
    let n = grid.len();
    let mut step = 1.0;
    let mut gbuf = vec![vec![0.0; n]; d];
    let mut divbuf = vec![0.0; n];
    let mut done = 0;
    for _ in 0..iters {
        done += 1;
        // gradient of R(w) = <s,w>/J(w) with respect to raw cell values
        st.grad_into(w.values(), &mut gbuf);
        let j = grad_field_norm(&DualField::from_parts_unchecked(grid.clone(), gbuf.clone()), tau);
        if j <= 0.0 {
            break;
        }
        let num = s.dot(&w)?;
        let floor = 1e-12 * j;
        let mut flux = vec![vec![0.0; n]; d];
        for c in 0..n {
            let m: f64 = (0..d).map(|a| gbuf[a][c].powi(2)).sum::<f64>().sqrt();
            if m > 0.0 {
                let coef = j.powf(1.0 - tau) * m.max(floor).powf(tau - 2.0);
                for a in 0..d {
                    flux[a][c] = coef * gbuf[a][c];
                }
            }
        }
        st.div_into(&flux, &mut divbuf);
        // dJ/dw = -div(flux) h^d, d<s,w>/dw = s h^d
        let dir: Vec<f64> = (0..n)
            .map(|c| if grid.is_active(c) { (s.values()[c] + (num / j) * divbuf[c]) * vol / j } else { 0.0 })
            .collect();
        let dnorm = dir.iter().map(|x| x * x).sum::<f64>().sqrt();
        if dnorm == 0.0 || !dnorm.is_finite() {
            break;
        }
        let wnorm = w.values().iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        let mut improved = false;
        for _ in 0..40 {
            let cand = GridField::new(
                grid.clone(),
                w.values().iter().zip(&dir).map(|(a, b)| a + step * wnorm * b / dnorm).collect(),
            )?;
            let r = ratio(&cand);
            if r > best {
                best = r;
                w = cand;
                step *= 1.5;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    let ascent_value = best.max(0.0);
    Ok(GNormEstimate {
        value: ascent_value.max(probe_value),
        ascent_value,
        probe_value,
        iterations: done,
    })
}

fn structured_probes(s: &GridField, seeds: &[GridField]) -> Vec<GridField> {
    let grid = s.grid();
    let n = grid.len();
    let mut out = Vec::new();
    for a in 0..grid.dims() {
        for cut in 1..grid.shape()[a] {
            let vals = (0..n)
                .map(|c| {
                    let idx = if grid.dims() == 1 || a == 1 { c % grid.shape()[grid.dims() - 1] } else { c / grid.shape()[1] };
                    if idx >= cut { 1.0 } else { 0.0 }
                })
                .collect();
            out.push(GridField::new(grid.clone(), vals).expect("indicator values are finite"));
        }
    }
    for src in std::iter::once(s).chain(seeds) {
        let mut levels: Vec<f64> = src.values().to_vec();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        for &lam in levels.iter().skip(1) {
            let vals = src.values().iter().map(|&x| if x >= lam { 1.0 } else { 0.0 }).collect();
            out.push(GridField::new(grid.clone(), vals).expect("indicator values are finite"));
        }
    }
    out
}

/// `argmin_c ||f - c||_p` by golden-section search on `[min f, max f]`.
pub fn best_constant(f: &GridField, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(DecompError::InvalidParameter(format!("p must be >= 1, got {p}")));
    }
    if p == 2.0 {
        return Ok(f.mean());
    }
    let (mut lo, mut hi) = f.min_max();
    let cost = |c: f64| -> f64 {
        csum(
            f.values()
                .iter()
                .enumerate()
                .filter(|(i, _)| f.grid().is_active(*i))
                .map(|(_, &x)| (x - c).abs().powf(p)),
        )
    };
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut a = hi - phi * (hi - lo);
    let mut b = lo + phi * (hi - lo);
    let (mut fa, mut fb) = (cost(a), cost(b));
    for _ in 0..200 {
        if hi - lo <= 1e-15 * (1.0 + lo.abs().max(hi.abs())) {
            break;
        }
        if fa < fb {
            hi = b;
            b = a;
            fb = fa;
            a = hi - phi * (hi - lo);
            fa = cost(a);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + phi * (hi - lo);
            fb = cost(b);
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SobolevCheckConfig {
    /// Relative tolerance for each condition.
    pub tol: f64,
    /// Ascent iterations for the G-norm estimate.
    pub ascent_iters: usize,
}

impl Default for SobolevCheckConfig {
    fn default() -> Self {
        SobolevCheckConfig { tol: 1e-3, ascent_iters: 500 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub value: f64,
    pub target: f64,
    /// `|value - target|` relative to the condition's scale.
    pub residual: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SobolevCheckReport {
    pub p: f64,
    pub tau: f64,
    pub dims: usize,
    pub t: f64,
    /// Best constant `c_f`.
    pub best_constant: f64,
    /// Candidate is (numerically) constant, so the collapse condition applies.
    pub constant_candidate: bool,
    /// Lower-bound estimate of `||J_p(v)||_G`; not a certified value.
    pub g_norm_estimate: f64,
    /// `<J_p(v), u>`
    pub pairing: f64,
    /// `t ||grad u||_tau`
    pub t_grad_norm: f64,
    pub mean_jp: f64,
    /// `mean(J_p(v)) ~ 0`
    pub mean_free: Condition,
    /// Collapse case: `||J_p(f - c_f)||_G <= t`; otherwise `||J_p(v)||_G = t`.
    pub g_norm: Condition,
    /// `<J_p(v), u> = t ||grad u||_tau` (trivially true for constant `u`).
    pub pairing_condition: Condition,
    pub passed: bool,
    pub estimate_is_lower_bound: bool,
}

/// Evaluate the optimality conditions for a candidate `u` of the
/// `(L_p, W^1(L_tau))` problem at scale `t`.
pub fn check_lp_sobolev_optimality(
    f: &GridField,
    u: &GridField,
    p: f64,
    t: f64,
    cfg: &SobolevCheckConfig,
) -> Result<SobolevCheckReport> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(DecompError::InvalidParameter(format!("scale t must be positive, got {t}")));
    }
    f.check_grid(u)?;
    let d = f.grid().dims();
    let tau = sobolev_index(p, d);
    let c_f = best_constant(f, p)?;
    let v = f.sub(u)?;
    let jp = duality_map_field(&v, p)?;
    let jscale = jp.sup_norm().max(f64::MIN_POSITIVE);
    let mean_jp = jp.mean();
    let mean_free = {
        let residual = mean_jp.abs() / jscale;
        Condition { value: mean_jp, target: 0.0, residual, passed: residual <= cfg.tol }
    };
    let urange = u.range();
    let constant_candidate = urange <= cfg.tol * f.range().max(f64::MIN_POSITIVE);

    let pairing = jp.dot(u)?;
    let t_grad_norm = t * grad_lt_norm(u, tau);

    let centered = jp.shift(-mean_jp);
    let g_norm_condition;
    let g_est;
    if constant_candidate {
        let j0 = duality_map_field(&f.shift(-c_f), p)?;
        let j0 = j0.shift(-j0.mean());
        g_est = g_tau_norm_estimate_seeded(&j0, tau, cfg.ascent_iters, &[])?.value;
        let residual = ((g_est - t) / t).max(0.0);
        g_norm_condition = Condition { value: g_est, target: t, residual, passed: residual <= cfg.tol };
    } else {
        g_est = g_tau_norm_estimate_seeded(&centered, tau, cfg.ascent_iters, std::slice::from_ref(u))?.value;
        let residual = (g_est - t).abs() / t;
        g_norm_condition = Condition { value: g_est, target: t, residual, passed: residual <= cfg.tol };
    }
    let pairing_condition = {
        let residual = (pairing - t_grad_norm).abs() / (1.0 + t_grad_norm.abs());
        Condition { value: pairing, target: t_grad_norm, residual, passed: residual <= cfg.tol }
    };
    let passed = mean_free.passed && g_norm_condition.passed && pairing_condition.passed;
    Ok(SobolevCheckReport {
        p,
        tau,
        dims: d,
        t,
        best_constant: c_f,
        constant_candidate,
        g_norm_estimate: g_est,
        pairing,
        t_grad_norm,
        mean_jp,
        mean_free,
        g_norm: g_norm_condition,
        pairing_condition,
        passed,
        estimate_is_lower_bound: true,
    })
}

/// Minimize `1/p ||f - u||_p^p + t ||grad u||_tau` on a tiny grid by gradient
/// descent on a smoothed objective with continuation, followed by a
/// coordinate pattern search on the exact objective. Intended for desk-size
/// instances (tens of cells) with `tau >= 1`, where the problem is convex.
pub fn desk_solve_lp_sobolev(f: &GridField, p: f64, t: f64) -> Result<GridField> {
    if !(p > 1.0) {
        return Err(DecompError::InvalidParameter(format!("p must exceed 1, got {p}")));
    }
    let d = f.grid().dims();
    let tau = sobolev_index(p, d);
    let grid = f.grid().clone();
    let n = grid.len();
    let vol = grid.cell_volume();
    let objective = |u: &[f64]| -> f64 {
        let uf = GridField::from_parts_unchecked(grid.clone(), u.to_vec());
        let fid = csum(
            f.values()
                .iter()
                .zip(u)
                .enumerate()
                .filter(|(i, _)| grid.is_active(*i))
                .map(|(_, (a, b))| (a - b).abs().powf(p)),
        ) * vol
            / p;
        fid + t * grad_lt_norm(&uf, tau)
    };
    let st = Stencil::new(&grid);
    let mut u: Vec<f64> = vec![best_constant(f, p)?; n];
    for (i, x) in u.iter_mut().enumerate() {
        if !grid.is_active(i) {
            *x = 0.0;
        }
    }
    let mut g = vec![vec![0.0; n]; d];
    let mut divbuf = vec![0.0; n];
    let mut eps = 1e-2 * f.range().max(1e-12);
    for _ in 0..8 {
        let smoothed = |u: &[f64], g: &mut Vec<Vec<f64>>| -> f64 {
            st.grad_into(u, g);
            let mut acc = 0.0;
            for c in 0..n {
                let m2: f64 = (0..d).map(|a| g[a][c].powi(2)).sum();
                acc += (m2 + eps * eps).powf(0.5 * tau);
            }
            let fid = csum(
                f.values()
                    .iter()
                    .zip(u)
                    .enumerate()
                    .filter(|(i, _)| grid.is_active(*i))
                    .map(|(_, (a, b))| (a - b).abs().powf(p)),
            ) * vol
                / p;
            fid + t * (acc * vol).powf(1.0 / tau)
        };
        let mut step = 1e-2;
        for _ in 0..4000 {
            let e0 = smoothed(&u, &mut g);
            let mut acc = 0.0;
            let mut flux = vec![vec![0.0; n]; d];
            for c in 0..n {
                let m2: f64 = (0..d).map(|a| g[a][c].powi(2)).sum();
                let w = (m2 + eps * eps).powf(0.5 * tau - 1.0);
                acc += (m2 + eps * eps).powf(0.5 * tau);
                for a in 0..d {
                    flux[a][c] = w * g[a][c];
                }
            }
            let jn = (acc * vol).powf(1.0 / tau);
            let coef = jn.powf(1.0 - tau);
            st.div_into(&flux, &mut divbuf);
            let grad: Vec<f64> = (0..n)
                .map(|c| {
                    if !grid.is_active(c) {
                        return 0.0;
                    }
                    let r = u[c] - f.values()[c];
                    (r.abs().powf(p - 1.0) * r.signum() - t * coef * divbuf[c]) * vol
                })
                .collect();
            let gn = grad.iter().map(|x| x * x).sum::<f64>().sqrt();
            if gn < 1e-15 {
                break;
            }
            let mut accepted = false;
            for _ in 0..60 {
                let cand: Vec<f64> = u.iter().zip(&grad).map(|(a, b)| a - step * b).collect();
                if smoothed(&cand, &mut g) < e0 {
                    u = cand;
                    step *= 1.3;
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        eps *= 0.1;
    }
    // pattern search on the exact objective, including the all-ones direction
    let mut e = objective(&u);
    let mut h = 1e-3 * f.range().max(1e-12);
    while h > 1e-14 * f.range().max(1e-12) {
        let mut moved = false;
        for c in 0..=n {
            for sgn in [1.0, -1.0] {
                let mut cand = u.clone();
                if c == n {
                    for (i, x) in cand.iter_mut().enumerate() {
                        if grid.is_active(i) {
                            *x += sgn * h;
                        }
                    }
                } else {
                    if !grid.is_active(c) {
                        continue;
                    }
                    cand[c] += sgn * h;
                }
                let ec = objective(&cand);
                if ec < e {
                    e = ec;
                    u = cand;
                    moved = true;
                }
            }
        }
        if !moved {
            h *= 0.5;
        }
    }
    GridField::new(grid, u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Grid;

    #[test]
    fn duality_map_examples() {
        let x = [1.5, -0.3, 0.0];
        assert_eq!(duality_map(&x, 2.0).unwrap(), x.to_vec());
        assert_eq!(duality_map(&[2.0, -1.0], 3.0).unwrap(), vec![4.0, -1.0]);
        let y = duality_map(&[4.0], 1.5).unwrap();
        assert!((y[0] - 2.0).abs() < 1e-15);
        assert!(duality_map(&x, 1.0).is_err());
        assert_eq!(duality_map(&[0.0], 1.5).unwrap(), vec![0.0]);
    }

    #[test]
    fn sobolev_index_values() {
        assert!((sobolev_index(2.0, 2) - 1.0).abs() < 1e-15);
        assert!((sobolev_index(2.0, 1) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn g_norm_of_zero() {
        let s = GridField::zeros(Grid::new_1d(5).unwrap());
        assert_eq!(g_tau_norm_estimate(&s, 2.0, 10).unwrap(), 0.0);
    }

    #[test]
    fn g_norm_rejects_nonzero_mean() {
        let s = GridField::from_1d(vec![1.0, 1.0, 0.0]).unwrap();
        assert!(g_tau_norm_estimate(&s, 2.0, 10).is_err());
    }

    #[test]
    fn g_norm_recovers_dirichlet_pairing() {
        // s = -div grad w* with ||grad w*||_2 = 1 has ||s||_G = <s, w*> = 1 for tau = 2
        let w = GridField::sample(Grid::new_1d(16).unwrap(), |x| (3.0 * x[0]).cos() + x[0] * x[0]).unwrap();
        let w = w.scale(1.0 / grad_lt_norm(&w, 2.0));
        let s = crate::field::div(&crate::field::grad(&w)).scale(-1.0);
        let pairing = s.dot(&w).unwrap();
        assert!((pairing - 1.0).abs() < 1e-12);
        let est = g_tau_norm_estimate(&s, 2.0, 500).unwrap();
        assert!(est <= 1.0 + 1e-9);
        assert!(est >= pairing - 1e-6, "{est}");
    }

    #[test]
    fn best_constant_matches_median_like_search() {
        let f = GridField::from_1d(vec![0.0, 0.0, 1.0, 5.0]).unwrap();
        let c = best_constant(&f, 1.5).unwrap();
        let cost = |c: f64| f.values().iter().map(|x| (x - c).abs().powf(1.5)).sum::<f64>();
        for k in 0..=5000 {
            let probe = k as f64 / 1000.0;
            assert!(cost(c) <= cost(probe) + 1e-12);
        }
        assert!((best_constant(&f, 2.0).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn rof_solution_passes_p2_d2_check() {
        let grid = Grid::new_2d(6, 6).unwrap();
        let f = GridField::sample(grid, |x| if x[0] < 0.5 && x[1] < 0.6 { 1.0 } else { 0.0 }).unwrap();
        let cfg = crate::rof::SolverConfig::default().with_tol(1e-10).with_gap_rtol(1e-10);
        let sol = crate::rof::solve_rof(&f, 0.02, &cfg).unwrap();
        let rep = check_lp_sobolev_optimality(&f, &sol.u, 2.0, 0.02, &SobolevCheckConfig::default()).unwrap();
        assert!(rep.passed, "{rep:?}");
        let desk = desk_solve_lp_sobolev(&f, 2.0, 0.02).unwrap();
        assert!(desk.sub(&sol.u).unwrap().sup_norm() < 1e-3);
    }

    #[test]
    fn perturbed_candidate_fails() {
        let grid = Grid::new_2d(6, 6).unwrap();
        let f = GridField::sample(grid, |x| if x[0] < 0.5 { 1.0 } else { 0.0 }).unwrap();
        let cfg = crate::rof::SolverConfig::default().with_tol(1e-10).with_gap_rtol(1e-10);
        let sol = crate::rof::solve_rof(&f, 0.02, &cfg).unwrap();
        let bad = sol.u.scale(0.9);
        let rep = check_lp_sobolev_optimality(&f, &bad, 2.0, 0.02, &SobolevCheckConfig::default()).unwrap();
        assert!(!rep.passed);
    }
}
