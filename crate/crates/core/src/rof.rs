//! The (L2, BV) minimizing pair
//!
//! ```text
//! (u_t, v_t) = argmin_{u + v = f} 1/2 ||v||^2 + t |u|_BV
//! ```
//!
//! computed through its dual: `u = f + t div z` with `|z| <= 1` per cell and
//! `z` vanishing on the boundary. The dual field is found by the semi-implicit
//! fixed-point iteration
//!
//! ```text
//! g = grad(div z + f / t)
//! z <- (z + tau g) / (1 + tau |g|)
//! ```
//!
//! whose iterates stay inside the unit ball. The converged `z` is returned as
//! an optimality certificate: `sup |z| <= 1`, `<z, grad u> = TV(u)` and
//! `mean(u) = mean(f)`. Since `v = -t div z`, the two ways of writing the
//! K-functional differ by exactly `t * (TV(u) - <z, grad u>)`, the duality gap.

use serde::{Deserialize, Serialize};

use crate::error::{DecompError, Result};
use crate::field::{discrete_tv, grad, tv_of_grad, DualField, GridField, Stencil, TvMode};

/// Dual iteration used to find `z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DualScheme {
    /// Plain semi-implicit fixed-point iteration.
    #[default]
    FixedPoint,
    /// Same projected dual step with Nesterov extrapolation.
    Accelerated,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Dual step in grid units; stable for `tau <= 1/(2d)`.
    pub tau: Option<f64>,
    pub max_iters: usize,
    /// Stop once the largest per-cell change of `z` drops below this.
    pub tol: f64,
    pub tv: TvMode,
    pub scheme: DualScheme,
    /// Also require `|<z, grad u> - TV(u)| <= gap_rtol (1 + TV(u))` before stopping.
    pub gap_rtol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            tau: None,
            max_iters: 100_000,
            tol: 1e-6,
            tv: TvMode::Isotropic,
            scheme: DualScheme::Accelerated,
            gap_rtol: 1e-6,
        }
    }
}

/// Bounds used to decide whether a finished solve is certified.
pub const SUP_NORM_SLACK: f64 = 1e-8;
pub const PAIRING_RTOL: f64 = 1e-4;
pub const MEAN_RTOL: f64 = 1e-10;
const RESTART: bool = true;
const GAP_CHECK_EVERY: usize = 10;

impl SolverConfig {
    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_iters(mut self, n: usize) -> Self {
        self.max_iters = n;
        self
    }

    pub fn with_tv(mut self, tv: TvMode) -> Self {
        self.tv = tv;
        self
    }

    pub fn with_scheme(mut self, scheme: DualScheme) -> Self {
        self.scheme = scheme;
        self
    }

    pub fn with_gap_rtol(mut self, gap_rtol: f64) -> Self {
        self.gap_rtol = gap_rtol;
        self
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = Some(tau);
        self
    }

    /// Step actually used on a `dims`-dimensional grid.
    pub fn effective_tau(&self, dims: usize) -> f64 {
        self.tau.unwrap_or(0.9 * self.tau_bound(dims))
    }

    /// Largest stable step in grid units. The extrapolated scheme needs the
    /// gradient-step bound `1/||div||^2 = 1/(4d)`.
    pub fn tau_bound(&self, dims: usize) -> f64 {
        match self.scheme {
            DualScheme::FixedPoint => 1.0 / (2.0 * dims as f64),
            DualScheme::Accelerated => 1.0 / (4.0 * dims as f64),
        }
    }

    pub fn validate(&self, dims: usize) -> Result<()> {
        let tau = self.effective_tau(dims);
        let bound = self.tau_bound(dims);
        if !(tau > 0.0 && tau <= bound) {
            return Err(DecompError::InvalidParameter(format!(
                "dual step {tau} outside (0, {bound}]"
            )));
        }
        if !(self.gap_rtol >= 0.0) {
            return Err(DecompError::InvalidParameter(format!("gap_rtol {} must be >= 0", self.gap_rtol)));
        }
        if !(self.tol >= 0.0) {
            return Err(DecompError::InvalidParameter(format!("tol {} must be >= 0", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(DecompError::InvalidParameter("max_iters must be >= 1".into()));
        }
        Ok(())
    }
}

/// Residuals of the three optimality conditions for a computed pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub sup_norm_z: f64,
    /// `|<z, grad u> h^d - TV(u)|`
    pub pairing_residual: f64,
    /// `|mean(u) - mean(f)|`
    pub mean_residual: f64,
}

impl Certificate {
    /// Whether all three residuals are within the fixed acceptance bounds.
    pub fn holds(&self, tv_u: f64, mean_f: f64) -> bool {
        self.sup_norm_z <= 1.0 + SUP_NORM_SLACK
            && self.pairing_residual <= PAIRING_RTOL * (1.0 + tv_u)
            && self.mean_residual <= MEAN_RTOL * (1.0 + mean_f.abs())
    }
}

#[derive(Debug, Clone)]
pub struct RofSolution {
    pub u: GridField,
    pub v: GridField,
    pub z: DualField,
    pub t: f64,
    pub iterations: usize,
    /// The stopping rule fired before `max_iters`.
    pub converged: bool,
    /// Converged and the certificate holds.
    pub certified: bool,
    pub certificate: Certificate,
    pub tv_u: f64,
    /// `1/2 ||v||^2 + t TV(u)`
    pub energy: f64,
    pub tv_mode: TvMode,
}

impl RofSolution {
    /// `1/2 ||v||^2 + t TV(u)`.
    pub fn k_direct(&self) -> f64 {
        self.energy
    }

    /// `<v, f> - 1/2 ||v||^2`, the dual objective at `z`.
    pub fn k_projection(&self, f: &GridField) -> f64 {
        let vf = self.v.dot(f).unwrap_or(f64::NAN);
        vf - 0.5 * self.v.l2_norm().powi(2)
    }
}

/// Build the pair and certificate from a dual field.
pub fn assemble(f: &GridField, t: f64, z: DualField, mode: TvMode) -> Result<RofSolution> {
    if !f.grid().same_as(z.grid()) {
        return Err(DecompError::ShapeMismatch {
            expected: f.grid().shape().to_vec(),
            got: z.grid().shape().to_vec(),
        });
    }
    let dz = crate::field::div(&z);
    let u = f.axpby(1.0, &dz, t)?;
    let v = f.sub(&u)?;
    Ok(finish(f, t, u, v, z, mode, 0, true))
}

fn finish(
    f: &GridField,
    t: f64,
    u: GridField,
    v: GridField,
    z: DualField,
    mode: TvMode,
    iterations: usize,
    converged: bool,
) -> RofSolution {
    let gu = grad(&u);
    let tv_u = tv_of_grad(&gu, mode);
    let pairing = z.dot(&gu).unwrap_or(f64::NAN);
    let certificate = Certificate {
        sup_norm_z: z.sup_norm(mode),
        pairing_residual: (pairing - tv_u).abs(),
        mean_residual: (u.mean() - f.mean()).abs(),
    };
    let energy = 0.5 * v.l2_norm().powi(2) + t * tv_u;
    let certified = converged && certificate.holds(tv_u, f.mean());
    RofSolution {
        u,
        v,
        z,
        t,
        iterations,
        converged,
        certified,
        certificate,
        tv_u,
        energy,
        tv_mode: mode,
    }
}

/// Solve the (L2, BV) problem at scale `t`.
pub fn solve_rof(f: &GridField, t: f64, cfg: &SolverConfig) -> Result<RofSolution> {
    solve_rof_from(f, t, cfg, None)
}

/// As [`solve_rof`], starting the dual iteration from `z0`.
pub fn solve_rof_from(
    f: &GridField,
    t: f64,
    cfg: &SolverConfig,
    z0: Option<&DualField>,
) -> Result<RofSolution> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(DecompError::InvalidParameter(format!("scale t must be positive, got {t}")));
    }
    let grid = f.grid();
    cfg.validate(grid.dims())?;
    let st = Stencil::new(grid);
    let d = st.dims;
    let n = st.len;
    let hmin = grid.spacing().iter().cloned().fold(f64::INFINITY, f64::min);
    // grid-unit step converted to physical operators
    let tau = cfg.effective_tau(d) * hmin * hmin;
    let inv_t = 1.0 / t;

    let mut z: Vec<Vec<f64>> = match z0 {
        Some(z0) if z0.grid().same_as(grid) => z0.components().to_vec(),
        Some(_) => {
            return Err(DecompError::ShapeMismatch {
                expected: grid.shape().to_vec(),
                got: z0.map(|z| z.grid().shape().to_vec()).unwrap_or_default(),
            })
        }
        None => vec![vec![0.0; n]; d],
    };
    // project a warm start into the feasible set
    project_dual(&mut z, &st, cfg.tv);

    let fv = f.values();
    let mut y = z.clone(); // extrapolated point (accelerated scheme only)
    let mut z_prev = z.clone();
    let mut momentum = 1.0f64;
    let mut dz = vec![0.0; n];
    let mut g = vec![vec![0.0; n]; d];
    let mut iterations = 0;
    let mut converged = false;
    let accelerated = cfg.scheme == DualScheme::Accelerated;

    while iterations < cfg.max_iters {
        iterations += 1;
        let base = if accelerated { &y } else { &z };
        st.div_into(base, &mut dz);
        for c in 0..n {
            dz[c] += fv[c] * inv_t;
        }
        st.grad_into(&dz, &mut g);

        let mut change = 0.0f64;
        if accelerated {
            std::mem::swap(&mut z_prev, &mut z);
            // projected gradient step from y
            for a in 0..d {
                for c in 0..n {
                    z[a][c] = y[a][c] + tau * g[a][c];
                }
            }
            project_dual(&mut z, &st, cfg.tv);
            // gradient-based adaptive restart: drop momentum when the step
            // (z - y) points against the direction of travel (z - z_prev)
            let mut align = 0.0;
            for a in 0..d {
                for c in 0..n {
                    align += (y[a][c] - z[a][c]) * (z[a][c] - z_prev[a][c]);
                }
            }
            if align > 0.0 && RESTART {
                momentum = 1.0;
            }
            let next = 0.5 * (1.0 + (1.0 + 4.0 * momentum * momentum).sqrt());
            let beta = (momentum - 1.0) / next;
            momentum = next;
            for a in 0..d {
                for c in 0..n {
                    let delta = z[a][c] - z_prev[a][c];
                    change = change.max(delta.abs());
                    y[a][c] = z[a][c] + beta * delta;
                }
            }
        } else {
            change = fixed_point_step(&mut z, &g, &st, tau, cfg.tv);
        }
        if change <= cfg.tol && (iterations % GAP_CHECK_EVERY == 0 || change == 0.0) {
            if relative_gap(&z, fv, t, &st, cfg.tv, &mut dz, &mut g) <= cfg.gap_rtol {
                converged = true;
                break;
            }
        }
    }

    let zf = DualField::from_parts_unchecked(grid.clone(), z);
    let dzf = crate::field::div(&zf);
    let u = f.axpby(1.0, &dzf, t)?;
    let v = f.sub(&u)?;
    Ok(finish(f, t, u, v, zf, cfg.tv, iterations, converged))
}

/// `|<z, grad u> - TV(u)| / (1 + TV(u))` for `u = f + t div z`, scaled by `h^d`.
fn relative_gap(
    z: &[Vec<f64>],
    f: &[f64],
    t: f64,
    st: &Stencil,
    mode: TvMode,
    u: &mut [f64],
    g: &mut [Vec<f64>],
) -> f64 {
    st.div_into(z, u);
    for (ui, fi) in u.iter_mut().zip(f) {
        *ui = fi + t * *ui;
    }
    st.grad_into(u, g);
    let d = st.dims;
    let mut tv = crate::field::CompensatedSum::default();
    let mut pair = crate::field::CompensatedSum::default();
    let mut buf = [0.0; 2];
    for c in 0..st.len {
        for a in 0..d {
            buf[a] = g[a][c];
            pair.add(z[a][c] * g[a][c]);
        }
        tv.add(mode.cell_norm(&buf[..d]));
    }
    let tv = tv.value() * st.cell_volume;
    let pair = pair.value() * st.cell_volume;
    (pair - tv).abs() / (1.0 + tv)
}

/// One semi-implicit step in place; returns the largest per-cell change.
fn fixed_point_step(z: &mut [Vec<f64>], g: &[Vec<f64>], st: &Stencil, tau: f64, mode: TvMode) -> f64 {
    let d = st.dims;
    let mut change = 0.0f64;
    match mode {
        TvMode::Isotropic => {
            for c in 0..st.len {
                let mut norm2 = 0.0;
                for a in 0..d {
                    norm2 += g[a][c] * g[a][c];
                }
                let denom = 1.0 + tau * norm2.sqrt();
                for a in 0..d {
                    if st.edges[a][c] {
                        let new = (z[a][c] + tau * g[a][c]) / denom;
                        change = change.max((new - z[a][c]).abs());
                        z[a][c] = new;
                    }
                }
            }
        }
        TvMode::Anisotropic => {
            for a in 0..d {
                for c in 0..st.len {
                    if st.edges[a][c] {
                        let new = (z[a][c] + tau * g[a][c]) / (1.0 + tau * g[a][c].abs());
                        change = change.max((new - z[a][c]).abs());
                        z[a][c] = new;
                    }
                }
            }
        }
    }
    change
}

/// Euclidean projection onto `{|z(cell)| <= 1, z = 0 on boundary edges}`.
fn project_dual(z: &mut [Vec<f64>], st: &Stencil, mode: TvMode) {
    let d = st.dims;
    for a in 0..d {
        for c in 0..st.len {
            if !st.edges[a][c] {
                z[a][c] = 0.0;
            }
        }
    }
    match mode {
        TvMode::Isotropic => {
            for c in 0..st.len {
                let mut norm2 = 0.0;
                for a in 0..d {
                    norm2 += z[a][c] * z[a][c];
                }
                if norm2 > 1.0 {
                    let s = 1.0 / norm2.sqrt();
                    for a in 0..d {
                        z[a][c] *= s;
                    }
                }
            }
        }
        TvMode::Anisotropic => {
            for comp in z.iter_mut() {
                for x in comp.iter_mut() {
                    *x = x.clamp(-1.0, 1.0);
                }
            }
        }
    }
}

/// `v_t`, the L2 projection of `f` onto the dual ball `t U_2`.
pub fn project_onto_dual_ball(f: &GridField, t: f64, cfg: &SolverConfig) -> Result<GridField> {
    Ok(solve_rof(f, t, cfg)?.v)
}

/// Both evaluations of the K-functional at the computed pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KFunctional {
    pub t: f64,
    /// `1/2 ||v_t||^2 + t TV(u_t)`
    pub k_direct: f64,
    /// `<v_t, f> - 1/2 ||v_t||^2`
    pub k_projection: f64,
    pub certified: bool,
}

impl KFunctional {
    pub fn gap(&self) -> f64 {
        (self.k_direct - self.k_projection).abs()
    }
}

pub fn k_functional(f: &GridField, t: f64, cfg: &SolverConfig) -> Result<KFunctional> {
    let sol = solve_rof(f, t, cfg)?;
    Ok(KFunctional {
        t,
        k_direct: sol.k_direct(),
        k_projection: sol.k_projection(f),
        certified: sol.certified,
    })
}

/// Relative sup deviation below which a solution counts as constant.
pub const CONSTANCY_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StarNormEstimate {
    pub value: f64,
    pub t_lo: f64,
    pub t_hi: f64,
    pub constancy_threshold: f64,
    pub solves: usize,
}

/// Whether `u` is constant up to `eps` times the oscillation of `f`.
pub fn is_constant(u: &GridField, f_range: f64, eps: f64) -> bool {
    let m = u.mean();
    let dev = u.map(|x| x - m).map(|g| g.sup_norm()).unwrap_or(f64::INFINITY);
    dev <= eps * f_range
}

/// Smallest `t` at which `u_t` collapses to the mean, bracketed to `bisect_tol`.
pub fn estimate_star_norm(f: &GridField, bisect_tol: f64, cfg: &SolverConfig) -> Result<StarNormEstimate> {
    estimate_star_norm_with(f, bisect_tol, CONSTANCY_THRESHOLD, cfg)
}

pub fn estimate_star_norm_with(
    f: &GridField,
    bisect_tol: f64,
    eps_const: f64,
    cfg: &SolverConfig,
) -> Result<StarNormEstimate> {
    if !(bisect_tol > 0.0) {
        return Err(DecompError::InvalidParameter(format!("bisection tolerance {bisect_tol} must be positive")));
    }
    let range = f.range();
    if range == 0.0 {
        return Ok(StarNormEstimate {
            value: 0.0,
            t_lo: 0.0,
            t_hi: 0.0,
            constancy_threshold: eps_const,
            solves: 0,
        });
    }
    let centered = f.shift(-f.mean());
    // ||f - mean||_{Y} <= C ||f - mean||_{L2} with C of order the domain diameter
    let diam: f64 = f
        .grid()
        .shape()
        .iter()
        .zip(f.grid().spacing())
        .map(|(&n, &h)| (n as f64 * h).powi(2))
        .sum::<f64>()
        .sqrt();
    let mut solves = 0;
    // warm start from the last dual field, rescaled since z ~ 1/t once collapsed
    let mut last: Option<(f64, DualField)> = None;
    // relative oscillation of u_t; collapse means it is below eps_const
    let mut deviation = |t: f64| -> Result<f64> {
        solves += 1;
        let z0 = last.as_ref().map(|(tp, z)| z.scale(tp / t));
        let sol = solve_rof_from(f, t, cfg, z0.as_ref())?;
        let m = sol.u.mean();
        let dev = sol.u.map(|x| x - m)?.sup_norm() / range;
        last = Some((t, sol.z));
        Ok(dev)
    };
    let mut t_hi = (centered.l2_norm() * diam).max(f64::MIN_POSITIVE);
    while deviation(t_hi)? > eps_const {
        t_hi *= 2.0;
        if !t_hi.is_finite() {
            return Err(DecompError::InvalidParameter("star-norm bracket diverged".into()));
        }
    }
    // non-collapsed samples (t, deviation), latest last
    let mut history: Vec<(f64, f64)> = Vec::new();
    let mut t_lo = t_hi / 2.0;
    loop {
        let d = deviation(t_lo)?;
        if d > eps_const {
            history.push((t_lo, d));
            break;
        }
        t_hi = t_lo;
        t_lo /= 2.0;
        if t_lo < f64::MIN_POSITIVE {
            t_lo = 0.0;
            break;
        }
    }
    // Near the threshold the oscillation of u_t vanishes roughly linearly in
    // t, so a secant through the last two non-collapsed samples predicts the
    // collapse point. Probes straddle the prediction; bisection is the fallback.
    let mut straddle = 0usize;
    while t_hi - t_lo > bisect_tol {
        let mid = 0.5 * (t_lo + t_hi);
        let mut next = mid;
        if let [.., (t1, d1), (t2, d2)] = history[..] {
            if d1 > d2 && straddle < 4 {
                let pred = t2 + d2 * (t2 - t1) / (d1 - d2);
                let offset = if straddle % 2 == 0 { 0.45 } else { -0.45 } * bisect_tol;
                let cand = pred + offset;
                if cand > t_lo && cand < t_hi {
                    next = cand;
                }
                straddle += 1;
            }
        }
        let d = deviation(next)?;
        if d <= eps_const {
            t_hi = next;
        } else {
            t_lo = next;
            history.push((next, d));
        }
    }
    Ok(StarNormEstimate {
        value: 0.5 * (t_lo + t_hi),
        t_lo,
        t_hi,
        constancy_threshold: eps_const,
        solves,
    })
}

/// Primal energy `1/2 ||f - w||^2 + t TV(w)` of an arbitrary candidate.
pub fn rof_energy(f: &GridField, w: &GridField, t: f64, mode: TvMode) -> Result<f64> {
    let r = f.sub(w)?;
    Ok(0.5 * r.l2_norm().powi(2) + t * discrete_tv(w, mode))
}

/// Exact discrete 1D star norm: `max_i |sum_{j<=i} (f_j - mean) h|`.
///
/// In one dimension `v = -t div z` determines `z` by a running sum, so the
/// smallest admissible `t` for `v = f - mean` is the sup of that running sum.
pub fn star_norm_1d(f: &GridField) -> Result<f64> {
    if f.grid().dims() != 1 || f.grid().mask().is_some() {
        return Err(DecompError::Unsupported("closed-form star norm needs an unmasked 1D grid".into()));
    }
    let h = f.grid().spacing()[0];
    let m = f.mean();
    let mut acc = crate::field::CompensatedSum::default();
    let mut best = 0.0f64;
    let vals = f.values();
    for &x in &vals[..vals.len() - 1] {
        acc.add((x - m) * h);
        best = best.max(acc.value().abs());
    }
    Ok(best)
}
