mod common;

use common::*;
use decomp_core::field::{Grid, GridField};
use decomp_core::rof::{solve_rof, SolverConfig};
use decomp_core::sobolev::{
    check_lp_sobolev_optimality, desk_solve_lp_sobolev, duality_map, g_tau_norm_estimate, g_tau_norm_estimate_seeded,
    SobolevCheckConfig,
};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn duality_map_pairing(u in proptest::collection::vec(-10.0f64..10.0, 1..20), p in 1.01f64..6.0) {
        let j = duality_map(&u, p).unwrap();
        for (a, b) in j.iter().zip(&u) {
            let lhs = a * b;
            let rhs = b.abs().powf(p);
            prop_assert!((lhs - rhs).abs() <= 1e-13 * rhs.max(f64::MIN_POSITIVE), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn estimate_monotone_in_iterations(f in unmasked_field(2.0), tau in 0.7f64..3.0, k in 0usize..30, extra in 1usize..30) {
        let s = f.shift(-f.mean());
        prop_assume!(s.sup_norm() > 1e-6);
        let a = g_tau_norm_estimate(&s, tau, k).unwrap();
        let b = g_tau_norm_estimate(&s, tau, k + extra).unwrap();
        prop_assert!(b >= a, "{b} < {a}");
        prop_assert!(a >= 0.0);
    }
}

fn dense_g_norm_4cells(s: &[f64; 4], tau: f64) -> f64 {
    // <s, v> h = -sum_e C_e delta_e h with C_e the running sum of s h, and
    // ||grad v||_tau = (sum_e |delta_e / h|^tau h)^(1/tau); scan delta on a mesh
    let h = 0.25;
    let mut c = [0.0; 3];
    let mut acc = 0.0;
    for e in 0..3 {
        acc += s[e] * h;
        c[e] = acc;
    }
    let m = 120;
    let mut best = 0.0f64;
    for i in -m..=m {
        for j in -m..=m {
            for k in -m..=m {
                let d = [i as f64 / m as f64, j as f64 / m as f64, k as f64 / m as f64];
                let num: f64 = -(0..3).map(|e| c[e] * d[e]).sum::<f64>();
                let den = (0..3).map(|e| (d[e] / h).abs().powf(tau) * h).sum::<f64>().powf(1.0 / tau);
                if den > 0.0 {
                    best = best.max(num / den);
                }
            }
        }
    }
    best
}

#[test]
fn four_cell_estimate_matches_dense_search() {
    let s = [1.0, -0.5, 0.75, -1.25];
    let field = GridField::from_1d(s.to_vec()).unwrap();
    for tau in [2.0, 1.5, 1.0] {
        let est = g_tau_norm_estimate(&field, tau, 2000).unwrap();
        let oracle = dense_g_norm_4cells(&s, tau);
        assert!(est <= oracle * (1.0 + 1e-3) + 1e-12, "tau {tau}: {est} exceeds {oracle}");
        assert!((est - oracle).abs() <= 1e-3 * (1.0 + oracle), "tau {tau}: {est} vs {oracle}");
    }
}

#[test]
fn rejects_mean_and_bad_p() {
    let s = GridField::from_1d(vec![1.0, 0.0]).unwrap();
    assert!(g_tau_norm_estimate(&s, 2.0, 5).is_err());
    assert!(duality_map(&[1.0], 0.5).is_err());
}

fn blocky(grid: Grid) -> GridField {
    GridField::sample(grid, |x| if x[0] < 0.5 && x.get(1).is_none_or(|y| *y < 0.7) { 1.0 } else { -0.3 * x[0] }).unwrap()
}

#[test]
fn p2_d2_matches_rof_certificate() {
    let f = blocky(Grid::new_2d(2, 2).unwrap());
    let cfg = SolverConfig::default().with_tol(1e-12).with_gap_rtol(1e-12);
    for t in [0.01, 0.03] {
        let sol = solve_rof(&f, t, &cfg).unwrap();
        assert!(sol.certified);
        let rep = check_lp_sobolev_optimality(&f, &sol.u, 2.0, t, &SobolevCheckConfig::default()).unwrap();
        assert_eq!(rep.tau, 1.0);
        assert!(rep.passed, "{rep:?}");
        // the rof pairing and the Sobolev pairing are the same quantity
        assert!((rep.pairing - t * sol.tv_u).abs() <= 1e-6 * (1.0 + t * sol.tv_u));
    }
}

#[test]
fn check_separates_solutions_from_perturbations() {
    let cfg = SobolevCheckConfig::default();
    for (grid, p, t) in [
        (Grid::new_2d(4, 4).unwrap(), 2.0, 0.02),
        (Grid::new_2d(3, 3).unwrap(), 3.0, 0.02),
        (Grid::new_2d(3, 3).unwrap(), 4.0, 0.02),
    ] {
        let f = blocky(grid);
        let u = desk_solve_lp_sobolev(&f, p, t).unwrap();
        let rep = check_lp_sobolev_optimality(&f, &u, p, t, &cfg).unwrap();
        assert!(rep.passed, "p {p}: {rep:?}");
        let bad = u.scale(0.8).shift(0.2 * u.mean());
        let rep_bad = check_lp_sobolev_optimality(&f, &bad, p, t, &cfg).unwrap();
        let worst = [rep_bad.mean_free, rep_bad.g_norm, rep_bad.pairing_condition]
            .iter()
            .map(|c| c.residual)
            .fold(0.0, f64::max);
        assert!(!rep_bad.passed && worst > 10.0 * cfg.tol, "p {p}: {rep_bad:?}");
    }
}

#[test]
fn collapse_case_passes_at_best_constant() {
    let f = GridField::from_1d(vec![0.1, -0.05, 0.02, 0.0]).unwrap();
    let c = decomp_core::sobolev::best_constant(&f, 3.0).unwrap();
    let u = GridField::constant(f.grid().clone(), c).unwrap();
    let rep = check_lp_sobolev_optimality(&f, &u, 3.0, 10.0, &SobolevCheckConfig::default()).unwrap();
    assert!(rep.constant_candidate);
    assert!(rep.passed, "{rep:?}");
}

#[test]
fn seeded_estimate_never_below_seed_ratio() {
    let f = blocky(Grid::new_1d(8).unwrap());
    let s = f.shift(-f.mean());
    let seed = GridField::sample(Grid::new_1d(8).unwrap(), |x| x[0]).unwrap();
    let est = g_tau_norm_estimate_seeded(&s, 2.0, 0, std::slice::from_ref(&seed)).unwrap();
    let ratio = s.dot(&seed).unwrap() / decomp_core::sobolev::grad_lt_norm(&seed, 2.0);
    assert!(est.value >= ratio.abs() - 1e-15);
}
