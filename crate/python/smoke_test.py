"""Smoke test for the decomp extension module.

Build and install first, e.g. `maturin build --release` in crates/python and
pip install the wheel, then run `python python/smoke_test.py`.
"""

import math

import decomp


def close(a, b, tol):
    return abs(a - b) <= tol * max(1.0, abs(b))


def main():
    n = 256
    t = 0.02
    ramp = [(i + 0.5) / n for i in range(n)]
    sol = decomp.solve_rof(ramp, t)
    assert sol.certified, sol
    h = math.sqrt(2 * t)
    u = sol.u.tolist()
    err = math.sqrt(sum((a - min(max(x, h), 1 - h)) ** 2 for a, x in zip(u, ramp)) / n)
    assert err < 0.01, err
    f = decomp.Field(ramp)
    assert all(close(a + b, c, 1e-12) for a, b, c in zip(u, sol.v.tolist(), f.tolist()))
    assert close(sol.k_direct, sol.k_projection, 1e-4)

    k = decomp.k_functional(ramp, t)
    assert k["certified"] and k["gap"] < 1e-4 * k["k_direct"]

    assert close(decomp.star_norm_1d(ramp), 0.125, 1e-3)
    est = decomp.star_norm(ramp, tol=1e-4)
    assert close(est["value"], 0.125, 0.02), est

    ms = decomp.decompose(ramp, 0.1, 5)
    assert ms.all_certified and len(ms.details) == 5
    recon = ms.reconstruct(5).tolist()
    last = ms.residuals[-1].tolist()
    assert all(close(a + b, c, 1e-10) for a, b, c in zip(recon, last, ramp))
    check = ms.ledger_check()
    assert check["max_relative_gap"] < 1e-3, check

    x, y = decomp.solve_l2_lp([3.0, -1.0, 0.5], 1.0, 1.0)
    assert x == [2.0, 0.0, 0.0] and y == [1.0, -1.0, 0.5]
    x, _ = decomp.soft_threshold([3.0, -1.0, 0.5], 1.0)
    assert x == [2.0, 0.0, 0.0]
    proj = decomp.project_lq_ball([3.0, 4.0], 1.0, 2.0)
    assert close(proj[0], 0.6, 1e-12) and close(proj[1], 0.8, 1e-12)
    assert decomp.duality_map([-2.0, 3.0], 2.0) == [-2.0, 3.0]

    ex = decomp.Example.radial(0.05)
    f2 = ex.f_field(64)
    assert f2.shape == [64, 64]
    sol2 = decomp.solve_rof(f2, 0.05)
    assert sol2.certified

    grid = decomp.Field([[1.0, 2.0], [3.0, 4.0]])
    assert grid.shape == [2, 2] and close(grid.mean(), 2.5, 1e-15)
    try:
        decomp.solve_rof(ramp, -1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative t accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
