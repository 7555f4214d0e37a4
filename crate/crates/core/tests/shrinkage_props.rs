use decomp_core::shrinkage::{dual_index, project_lq_ball, seq_norm, soft_threshold, solve_l2_lp};
use proptest::prelude::*;

fn vecs() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(-5.0f64..5.0, 1..12)
}

fn p_index() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.0), Just(1.5), Just(2.0), Just(4.0), 1.05f64..6.0]
}

/// `x + y` reproduces `b` up to the single rounding of `x = b - y`.
fn sums_to_b(x: &[f64], y: &[f64], b: &[f64]) -> bool {
    x.iter().zip(y).zip(b).all(|((x, y), b)| (x + y - b).abs() <= f64::EPSILON * b.abs().max(y.abs()))
}

fn random_ball_point(w: &[f64], radius: f64, q: f64) -> Vec<f64> {
    let n = seq_norm(w, q);
    if n <= radius { w.to_vec() } else { w.iter().map(|v| v * radius / n).collect() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn pair_sums_to_b(b in vecs(), t in 0.05f64..5.0, p in p_index()) {
        let s = solve_l2_lp(&b, t, p).unwrap();
        prop_assert!(sums_to_b(&s.x, &s.y, &b));
    }

    #[test]
    fn dual_feasibility(b in vecs(), t in 0.05f64..5.0, p in p_index()) {
        let s = solve_l2_lp(&b, t, p).unwrap();
        let q = dual_index(p).unwrap();
        let yq = seq_norm(&s.y, q);
        prop_assert!(yq <= t + 1e-10, "{yq} > {t}");
        if seq_norm(&b, q) >= t {
            prop_assert!((yq - t).abs() <= 1e-8, "{yq} vs {t}");
        }
    }

    #[test]
    fn alignment(b in vecs(), t in 0.05f64..5.0, p in p_index()) {
        let s = solve_l2_lp(&b, t, p).unwrap();
        let d = s.diagnostics;
        prop_assert!((d.alignment - d.t_x_norm_p).abs() <= 1e-8 * (1.0 + d.t_x_norm_p), "{d:?}");
    }

    #[test]
    fn energy_dominates_probes(b in vecs(), t in 0.05f64..5.0, p in p_index(), seed in proptest::collection::vec(-5.0f64..5.0, 12)) {
        let s = solve_l2_lp(&b, t, p).unwrap();
        let e = s.energy();
        let x: Vec<f64> = seed.iter().take(b.len()).copied().collect();
        let near: Vec<f64> = s.x.iter().zip(&x).map(|(a, r)| a + 1e-3 * r).collect();
        for probe in [&x, &near, &b] {
            let ep = 0.5 * b.iter().zip(probe.iter()).map(|(b, x)| (b - x) * (b - x)).sum::<f64>() + t * seq_norm(probe, p);
            prop_assert!(ep >= e - 1e-8, "{ep} < {e}");
        }
    }

    #[test]
    fn projection_characterization(b in vecs(), t in 0.05f64..5.0, p in p_index(), seed in proptest::collection::vec(-5.0f64..5.0, 12)) {
        let s = solve_l2_lp(&b, t, p).unwrap();
        let q = dual_index(p).unwrap();
        let w: Vec<f64> = seed.iter().take(b.len()).copied().collect();
        let w = random_ball_point(&w, t, q);
        let ip: f64 = w.iter().zip(&s.y).zip(&b).map(|((w, y), b)| (w - y) * (b - y)).sum();
        prop_assert!(ip <= 1e-8, "{ip}");
    }

    #[test]
    fn soft_threshold_closed_form(b in vecs(), t in 0.01f64..5.0) {
        let s = soft_threshold(&b, t).unwrap();
        for (i, &bi) in b.iter().enumerate() {
            prop_assert_eq!(s.x[i].to_bits(), (bi - bi.clamp(-t, t)).to_bits());
            prop_assert!(s.x[i] == bi.signum() * (bi.abs() - t).max(0.0));
        }
    }

    #[test]
    fn p1_matches_soft_threshold(b in vecs(), t in 0.01f64..5.0) {
        prop_assert_eq!(solve_l2_lp(&b, t, 1.0).unwrap(), soft_threshold(&b, t).unwrap());
    }

    #[test]
    fn below_threshold_gives_zero_x(b in vecs(), p in p_index(), extra in 0.0f64..2.0) {
        let q = dual_index(p).unwrap();
        let t = seq_norm(&b, q) + extra + 1e-12;
        let s = solve_l2_lp(&b, t, p).unwrap();
        prop_assert!(s.x.iter().all(|&v| v == 0.0));
        prop_assert_eq!(s.y, b);
    }

    #[test]
    fn projection_is_nonexpansive(a in vecs(), r in 0.1f64..3.0, q in 1.2f64..8.0, shift in proptest::collection::vec(-1.0f64..1.0, 12)) {
        let b: Vec<f64> = a.iter().zip(&shift).map(|(x, s)| x + s).collect();
        let pa = project_lq_ball(&a, r, q).unwrap();
        let pb = project_lq_ball(&b, r, q).unwrap();
        let d1: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        let d0: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
        prop_assert!(d1 <= d0 * (1.0 + 1e-9) + 1e-12);
    }
}

#[test]
fn q4_projection_against_dense_search() {
    // minimize |b - y| over the boundary of the l4 unit ball, parametrized by angle
    let b = [1.0, 1.0];
    let y = project_lq_ball(&b, 1.0, 4.0).unwrap();
    let mut best = (f64::INFINITY, [0.0, 0.0]);
    let n = 2_000_000;
    for k in 0..n {
        let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
        let (c, s) = (th.cos(), th.sin());
        let r = (c.powi(4) + s.powi(4)).powf(-0.25);
        let p = [r * c, r * s];
        let d = (b[0] - p[0]).powi(2) + (b[1] - p[1]).powi(2);
        if d < best.0 {
            best = (d, p);
        }
    }
    assert!((y[0] - best.1[0]).abs() <= 1e-6 && (y[1] - best.1[1]).abs() <= 1e-6, "{y:?} vs {:?}", best.1);
}
