"""Acceptance suite: one or more tests per criterion, named ``test_ac<N>_*``.

Each test prints a single ``AC<N> ... PASS/FAIL`` line with the measured
quantity; ``conftest.py`` aggregates them into the terminal summary.
"""

import math
import time

import numpy as np
import pytest
from scipy.integrate import quad

from riccati_escape.grassmann import build_net, chart_embed, chart_retract
from riccati_escape.mean_escape import (
    PoissonLaw,
    build_transfer_matrices,
    g_value,
    make_grid,
    solve_power_series,
    solve_transfer,
)
from riccati_escape.montecarlo import estimate_mean_escape
from riccati_escape.numerics import lambert_w0, matrix_exp
from riccati_escape.rde import (
    RiccatiSystem,
    box_sampler,
    escape_profile,
    escape_time,
    flow,
    rde_rhs,
    step_sequence,
)
from riccati_escape.systems import quadratic_growth, rotation, rotation_switch


def report(tag, ok, detail):
    print(f"{tag} {'PASS' if ok else 'FAIL'}: {detail}")
    return ok


@pytest.fixture(scope="module")
def unit_pair():
    sw = rotation_switch(1.0, 1.0, 1.0)
    grid = make_grid(sw, 0.005)
    return sw, grid, solve_power_series(sw, grid, K=21)


def test_ac1_scalar_escape_time():
    start = time.perf_counter()
    res = escape_time(quadratic_growth(), 1.0)
    times, _ = step_sequence(quadratic_growth(), 1.0, 25)
    elapsed = time.perf_counter() - start
    err = abs(res.t_escape - math.log(3) / 2)
    # the iteration is labelled from t_1 = 0, so the 20th iterate is times[19]
    t20 = times[19]
    ok = err < 1e-5 and round(t20, 6) == 0.549306 and elapsed < 1.0
    assert report("AC1", ok, f"error={err:.2e} t20={t20:.6f} runtime={elapsed:.3f}s")


def test_ac2_rotation_escape_law():
    start = time.perf_counter()
    thetas = np.linspace(-math.pi / 2, math.pi / 2, 102)[1:-1]
    worst = 0.0
    for omega in (1.0, 10.0, 100.0):
        sys = rotation(omega)
        for th in thetas:
            t = escape_time(sys, math.tan(th)).t_escape
            exact = (math.pi / 2 - th) / omega
            worst = max(worst, abs(t - exact) / exact)
    elapsed = time.perf_counter() - start
    ok = worst < 1e-6 and elapsed < 10.0
    assert report("AC2", ok, f"max rel error={worst:.2e} runtime={elapsed:.2f}s")


def test_ac3_series_vs_monte_carlo(unit_pair):
    start = time.perf_counter()
    sw, grid, sol = unit_pair
    lines, ok = [], True
    for th in (-1.2, -0.6, 0.0, 0.6, 1.2):
        series = sol.TA_at(th)
        rep = estimate_mean_escape(sw, math.tan(th), "A", n_trials=100_000, rng_seed=0)
        diff = abs(series - rep.mean)
        ok &= diff <= 3 * rep.stderr
        lines.append(f"theta={th:+.1f} series={series:.4f} mc={rep.mean:.4f} |d|={diff:.4f} 3se={3 * rep.stderr:.4f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed < 120.0
    print("\n".join(lines))
    assert report("AC3", ok, f"K=21 spacing=0.005 n=1e5 runtime={elapsed:.1f}s")


def test_ac4_small_rate_limit():
    sw = rotation_switch(1.0, 1.0, 0.01)
    grid = make_grid(sw, 0.005)
    sol = solve_power_series(sw, grid)
    inside = np.abs(grid.points) <= 1.4
    rel = np.abs(sol.TA - grid.tA)[inside] / grid.tA[inside]
    assert report("AC4", rel.max() < 0.05, f"max relative deviation={rel.max():.4f}")


def test_ac5_monotone_in_rotation_speed():
    TA = {}
    for omega in (1.0, 10.0, 100.0):
        sw = rotation_switch(omega, 1.0, 1.0)
        TA[omega] = solve_power_series(sw, make_grid(sw, 0.005)).TA
    d1 = float(np.max(TA[10.0] - TA[1.0]))
    d2 = float(np.max(TA[100.0] - TA[10.0]))
    ok = d1 <= 1e-9 and d2 <= 1e-9
    assert report("AC5", ok, f"max(T10-T1)={d1:.3e} max(T100-T10)={d2:.3e}")


def test_ac6_contraction_bounds(unit_pair):
    sw, grid, sol = unit_pair
    F0 = sol.info["F_t0"]
    tm = build_transfer_matrices(sw, grid)
    rows = max(tm.NA.sum(axis=1).max(), tm.NB.sum(axis=1).max())
    norms = np.array(sol.term_norms)
    ratio = float((norms[1:] / norms[:-1]).max())
    ok = rows <= F0 + 1e-8 and ratio <= F0 + 0.02
    assert report("AC6", ok, f"max row sum={rows:.6f} max term ratio={ratio:.4f} F(t0)={F0:.6f}")


def test_ac7_transfer_vs_series(unit_pair):
    sw, grid, sol = unit_pair
    TA, TB = solve_transfer(build_transfer_matrices(sw, grid))
    gap = max(np.abs(TA - sol.TA).max(), np.abs(TB - sol.TB).max())
    assert report("AC7", gap <= 0.05, f"sup-norm discrepancy={gap:.4f}")


def _rk4(sys, y, t, n=2000):
    h = t / n
    for _ in range(n):
        k1 = rde_rhs(sys, y)
        k2 = rde_rhs(sys, y + 0.5 * h * k1)
        k3 = rde_rhs(sys, y + 0.5 * h * k2)
        k4 = rde_rhs(sys, y + h * k3)
        y = y + h * (k1 + 2 * k2 + 2 * k3 + k4) / 6
    return y


def _random_escaping(rng, d=3, k=1):
    while True:
        s = RiccatiSystem(rng.normal(size=(d, d)), k)
        if s.can_escape:
            return s


def test_ac8_exponential_bound():
    rng = np.random.default_rng(0)
    worst = -np.inf
    for _ in range(1000):
        d = int(rng.integers(2, 6))
        M = rng.normal(size=(d, d))
        A = rng.normal(size=(d, d)) * rng.uniform(0.1, 3)
        t = rng.uniform(0, 2)
        lhs = np.linalg.norm(matrix_exp(A, t) @ M - M, 2)
        rhs = (math.exp(np.linalg.norm(A, 2) * t) - 1) * np.linalg.norm(M, 2)
        worst = max(worst, lhs - rhs * (1 + 1e-12))
    assert report("AC8[exp bound]", worst <= 0, f"max violation={worst:.2e}")


def test_ac8_shift_identity():
    rng = np.random.default_rng(1)
    worst, n = 0.0, 0
    while n < 100:
        s = _random_escaping(rng)
        Y0 = rng.normal(size=(2, 1))
        res = escape_time(s, Y0, t_cap=20.0)
        if not res.finite:
            continue
        t = rng.uniform(0.05, 0.95) * res.t_escape
        worst = max(worst, abs(escape_time(s, flow(s, Y0, t), t_cap=20.0).t_escape - (res.t_escape - t)))
        n += 1
    assert report("AC8[shift]", worst < 1e-6, f"max deviation={worst:.2e}")


def test_ac8_flow_vs_rk4():
    rng = np.random.default_rng(2)
    worst, n = 0.0, 0
    while n < 20:
        s = _random_escaping(rng)
        Y0 = rng.normal(size=(2, 1))
        res = escape_time(s, Y0, t_cap=5.0)
        t = 0.5 * min(res.t_escape, 1.0)
        worst = max(worst, float(np.abs(flow(s, Y0, t) - _rk4(s, Y0, t)).max()))
        n += 1
    assert report("AC8[rk4]", worst < 1e-6, f"max deviation={worst:.2e}")


def test_ac8_chart_round_trip():
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(500):
        Y = rng.normal(size=(int(rng.integers(1, 4)), int(rng.integers(1, 4)))) * 3
        worst = max(worst, float(np.abs(chart_retract(chart_embed(Y)) - Y).max()))
    assert report("AC8[chart]", worst < 1e-10, f"max deviation={worst:.2e}")


def test_ac8_lambert_inverse():
    x = np.concatenate([np.linspace(0, 50, 2001), np.logspace(-12, 6, 200)])
    w = lambert_w0(x)
    err = float(np.max(np.abs(w * np.exp(w) - x) / np.maximum(1.0, x)))
    assert report("AC8[lambert]", err < 1e-10, f"max residual={err:.2e}")


def test_ac8_g_value_quadrature():
    worst = 0.0
    for lam in (0.01, 0.7, 1.0, 5.0):
        for T in (0.0, 0.1, 1.3, 4.0, 20.0):
            ref = quad(lambda s: s * lam * math.exp(-lam * s), 0, T, epsabs=1e-14)[0] + T * math.exp(-lam * T)
            worst = max(worst, abs(g_value(T, PoissonLaw(lam)) - ref))
    assert report("AC8[g]", worst < 1e-10, f"max deviation={worst:.2e}")


@pytest.mark.parametrize("eps", [0.1, 0.01])
def test_ac8_net_coverage(eps):
    net = build_net(eps)
    probe = np.linspace(-math.pi / 2, math.pi / 2, 20_001)
    gap = max(float(np.abs(np.sin(p - net)).min()) for p in probe)
    assert report(f"AC8[net eps={eps}]", gap <= eps, f"covering radius={gap:.4f}")


def test_ac9_non_escape():
    res = escape_time(quadratic_growth(), -1.0)
    not_before = (not res.finite) and res.t_cap == 50.0
    pairs = escape_profile(quadratic_growth(), box_sampler((1, 1), 5.0), 40, n_steps=40, seed=0)
    plateau = [math.atan(t) for Y, t in pairs if Y[0, 0] < 0]
    flat = bool(plateau) and all(v == math.pi / 2 for v in plateau)
    ok = not_before and flat
    assert report("AC9", ok, f"outcome=NotBefore({res.t_cap}) plateau points={len(plateau)}")
