//! Minimizing pairs for `(l2, lp)`:
//!
//! ```text
//! (x_t, y_t) = argmin_{x + y = b} 1/2 ||y||_2^2 + t ||x||_p
//! ```
//!
//! The pair is `y_t = pi_{t U_q}(b)`, the Euclidean projection of `b` onto
//! the `lq` ball of radius `t` with `1/p + 1/q = 1`, and `x_t = b - y_t`.
//! For `p = 1` that projection is a componentwise clamp and `x_t` is soft
//! thresholding.

use serde::{Deserialize, Serialize};

use crate::error::{DecompError, Result};

/// Unweighted `lp` norm of a finite sequence; `p = inf` is the max norm.
pub fn seq_norm(x: &[f64], p: f64) -> f64 {
    if p.is_infinite() {
        return x.iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    if p == 1.0 {
        return x.iter().map(|v| v.abs()).sum();
    }
    if p == 2.0 {
        return x.iter().map(|v| v * v).sum::<f64>().sqrt();
    }
    // scale by the max to avoid overflow in |x|^p
    let m = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if m == 0.0 {
        return 0.0;
    }
    m * x.iter().map(|v| (v.abs() / m).powf(p)).sum::<f64>().powf(1.0 / p)
}

/// Dual index `q` with `1/p + 1/q = 1` (`q = inf` for `p = 1`).
pub fn dual_index(p: f64) -> Result<f64> {
    if !(p >= 1.0) || p.is_infinite() {
        return Err(DecompError::InvalidParameter(format!("p must lie in [1, inf), got {p}")));
    }
    Ok(if p == 1.0 { f64::INFINITY } else { p / (p - 1.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShrinkageDiagnostics {
    /// `||y_t||_q`
    pub y_norm_q: f64,
    /// `y_t . x_t`
    pub alignment: f64,
    /// `t ||x_t||_p`
    pub t_x_norm_p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShrinkagePair {
    pub b: Vec<f64>,
    pub p: f64,
    #[serde(with = "infinite_as_null")]
    pub q: f64,
    pub t: f64,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub diagnostics: ShrinkageDiagnostics,
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

impl ShrinkagePair {
    fn new(b: &[f64], p: f64, q: f64, t: f64, y: Vec<f64>) -> Self {
        let x: Vec<f64> = b.iter().zip(&y).map(|(bi, yi)| bi - yi).collect();
        let diagnostics = ShrinkageDiagnostics {
            y_norm_q: seq_norm(&y, q),
            alignment: y.iter().zip(&x).map(|(a, b)| a * b).sum(),
            t_x_norm_p: t * seq_norm(&x, p),
        };
        ShrinkagePair { b: b.to_vec(), p, q, t, x, y, diagnostics }
    }

    /// `1/2 ||y||^2 + t ||x||_p`.
    pub fn energy(&self) -> f64 {
        0.5 * self.y.iter().map(|v| v * v).sum::<f64>() + self.diagnostics.t_x_norm_p
    }
}

fn check_t(t: f64) -> Result<()> {
    if t > 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(DecompError::InvalidParameter(format!("threshold must be positive, got {t}")))
    }
}

/// Soft thresholding `x_i = sign(b_i) max(0, |b_i| - t)`, computed as
/// `b - clamp(b, -t, t)`.
pub fn soft_threshold(b: &[f64], t: f64) -> Result<ShrinkagePair> {
    check_t(t)?;
    let y: Vec<f64> = b.iter().map(|v| v.clamp(-t, t)).collect();
    Ok(ShrinkagePair::new(b, 1.0, f64::INFINITY, t, y))
}

/// Euclidean projection of `b` onto `{||y||_q <= radius}` for `q` in `(1, inf]`.
pub fn project_lq_ball(b: &[f64], radius: f64, q: f64) -> Result<Vec<f64>> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(DecompError::InvalidParameter(format!("radius must be positive, got {radius}")));
    }
    if !(q > 1.0) {
        return Err(DecompError::InvalidParameter(format!("projection needs q > 1, got {q}")));
    }
    if b.iter().any(|v| !v.is_finite()) {
        return Err(DecompError::InvalidParameter("sequence has non-finite entries".into()));
    }
    if q.is_infinite() {
        return Ok(b.iter().map(|v| v.clamp(-radius, radius)).collect());
    }
    let norm = seq_norm(b, q);
    if norm <= radius {
        return Ok(b.to_vec());
    }
    if q == 2.0 {
        let s = radius / norm;
        return Ok(b.iter().map(|v| v * s).collect());
    }
    Ok(project_general(b, radius, q))
}

/// Magnitude `s >= 0` solving `s + lambda q s^(q-1) = a` on `[0, a]`.
fn shrink_magnitude(a: f64, lambda: f64, q: f64) -> f64 {
    if a == 0.0 || lambda == 0.0 {
        return a;
    }
    let (mut lo, mut hi) = (0.0f64, a);
    // start from the side where Newton is well behaved
    let mut s = if q >= 2.0 { a } else { 0.5 * a };
    for _ in 0..200 {
        let r = s + lambda * q * s.powf(q - 1.0) - a;
        if r > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let dr = 1.0 + lambda * q * (q - 1.0) * s.powf(q - 2.0);
        let mut next = s - r / dr;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - s).abs() <= 1e-17 * a || hi - lo <= 4.0 * f64::EPSILON * a {
            s = next;
            break;
        }
        s = next;
    }
    s
}

/// Lagrange multiplier search: `g(lambda) = ||shrink(b, lambda)||_q - radius`
/// is decreasing; bracket it, then bisect with safeguarded Newton steps.
fn project_general(b: &[f64], radius: f64, q: f64) -> Vec<f64> {
    // homogeneity: project b / radius onto the unit ball
    let scaled: Vec<f64> = b.iter().map(|v| v.abs() / radius).collect();
    let mags = |lambda: f64| -> Vec<f64> { scaled.iter().map(|&a| shrink_magnitude(a, lambda, q)).collect() };
    let g = |lambda: f64| -> f64 { seq_norm(&mags(lambda), q) - 1.0 };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    while g(hi) > 0.0 {
        lo = hi;
        hi *= 2.0;
        assert!(hi.is_finite(), "lq projection multiplier failed to bracket");
    }
    let mut lambda = 0.5 * (lo + hi);
    for _ in 0..300 {
        let s = mags(lambda);
        let val = seq_norm(&s, q) - 1.0;
        if val > 0.0 {
            lo = lambda;
        } else {
            hi = lambda;
        }
        // d/dlambda of sum s_i^q, with ds/dlambda = -q s^(q-1) / (1 + lambda q (q-1) s^(q-2))
        let mut dsum = 0.0;
        let mut sum = 0.0;
        for &si in &s {
            if si > 0.0 {
                let ds = -q * si.powf(q - 1.0) / (1.0 + lambda * q * (q - 1.0) * si.powf(q - 2.0));
                dsum += q * si.powf(q - 1.0) * ds;
                sum += si.powf(q);
            }
        }
        let dg = if sum > 0.0 { sum.powf(1.0 / q - 1.0) / q * dsum } else { 0.0 };
        let mut next = if dg < 0.0 { lambda - val / dg } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - lambda).abs() <= 1e-12 * lambda.max(1e-300) && val.abs() <= 1e-15 {
            lambda = next;
            break;
        }
        if hi - lo <= 1e-15 * hi {
            lambda = next;
            break;
        }
        lambda = next;
    }
    mags(lambda)
        .into_iter()
        .zip(b)
        .map(|(s, &bi)| bi.signum() * s * radius)
        .collect()
}

/// Minimizing pair of `1/2 ||y||^2 + t ||x||_p` over `x + y = b`.
///
/// When `||b||_q <= t` (including equality) the pair is `(0, b)`.
pub fn solve_l2_lp(b: &[f64], t: f64, p: f64) -> Result<ShrinkagePair> {
    check_t(t)?;
    let q = dual_index(p)?;
    if p == 1.0 {
        return soft_threshold(b, t);
    }
    let y = if seq_norm(b, q) <= t { b.to_vec() } else { project_lq_ball(b, t, q)? };
    Ok(ShrinkagePair::new(b, p, q, t, y))
}
