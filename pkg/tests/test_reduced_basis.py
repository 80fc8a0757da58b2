import math
import struct
import zlib

import numpy as np
import pytest

from fracrb import (
    BasisFormatError,
    FractionalProblem,
    SincGrid,
    TrainingSet,
    assemble,
    build_interval_mesh,
    error_norm,
    evaluate_full,
    evaluate_rb,
    greedy_build,
    greedy_build_exact,
    h10_norm,
    l2_norm,
    load_basis,
    rb_solve,
    residual_dual_norm,
    save_basis,
)
from fracrb.errors import InvalidParameter
from fracrb.reduced_basis import ESTIMATOR_FLOOR, dumps_basis, loads_basis, true_errors


@pytest.fixture(scope="module")
def built(sys8, grid):
    prob = FractionalProblem(sys8, grid, cache_factorizations=True)
    rb = greedy_build(sys8, grid, TrainingSet.uniform(grid, 2000), eps=1e-12, n_max=30, prob=prob)
    return rb, prob


def test_initial_step_and_trace(built):
    rb, _ = built
    assert rb.selected_y[0] == 0.0
    assert rb.trace[0].n == 1 and rb.trace[0].y == 0.0
    est = np.array([t.estimator_max for t in rb.trace])
    assert np.all(est > 0)
    assert np.all(np.diff(est) <= 1e-13)


def test_basis_orthonormal(built, sys8):
    rb, _ = built
    G = rb.B.T @ (sys8.A0 @ rb.B)
    assert np.allclose(G, np.eye(rb.n), atol=1e-10)
    assert np.allclose(rb.A1r, rb.B.T @ (sys8.A1 @ rb.B), atol=1e-12)
    assert np.allclose(rb.Fr, rb.B.T @ sys8.F, atol=1e-13)


def test_huge_eps_stops_at_one(sys6, grid):
    rb = greedy_build(sys6, grid, TrainingSet.uniform(grid, 100), eps=1e6)
    assert rb.n == 1 and list(rb.selected_y) == [0.0]


def test_snapshot_reproduction(built, sys8):
    rb, prob = built
    for y in rb.selected_y[:10]:
        c = rb_solve(rb, float(y))
        w = prob.solve_shifted(float(y))
        assert h10_norm(rb.lift(c) - w, sys8) <= 1e-8
        assert residual_dual_norm(rb, sys8, float(y), c) <= 1e-8 * sys8.f_norm


def test_empty_basis_estimator(built, sys8):
    rb0 = built[0].truncate(0)
    z = sys8.a0_solver().solve(sys8.F)
    for y in (-3.0, 0.0, 10.0):
        assert rb0.estimator([y])[0] == pytest.approx(h10_norm(z, sys8), rel=1e-12)


def test_batched_coefficients(built, rng):
    rb = built[0].truncate(8)
    ys = rng.uniform(-50, 50, 20)
    C = rb.coefficients(ys)
    for j, y in enumerate(ys):
        assert np.allclose(C[:, j], rb_solve(rb, float(y)), rtol=1e-10, atol=1e-14)


def test_offline_vs_direct_estimator(built, sys8, rng):
    for n in (1, 5, 10):
        rb = built[0].truncate(n)
        for y in rng.uniform(-197.5, 197.5, 30):
            c = rb_solve(rb, float(y))
            a = residual_dual_norm(rb, sys8, float(y), c)
            b = residual_dual_norm(rb, sys8, float(y), c, direct=True)
            if max(a, b) > ESTIMATOR_FLOOR * sys8.f_norm:
                assert abs(a - b) <= 1e-8 * b
            else:
                assert abs(a - b) <= ESTIMATOR_FLOOR * sys8.f_norm


@pytest.mark.parametrize("n", [1, 5, 10])
def test_sandwich(built, sys8, n, rng):
    rb = built[0].truncate(n)
    prob = built[1]
    for y in rng.uniform(-197.5, 197.5, 25):
        y = float(y)
        c = rb_solve(rb, y)
        est = residual_dual_norm(rb, sys8, y, c, direct=True)
        err = error_norm(rb, sys8, y, c, prob)
        diff = h10_norm(prob.solve_shifted(y) - rb.lift(c), sys8)
        assert abs(err - diff) <= 1e-13 * sys8.f_norm
        low = est / (1 + sys8.poincare**2 * math.exp(y))
        assert low * (1 - 1e-8) <= err <= est * (1 + 1e-8)


def test_quasi_optimality(built, sys8, rng):
    rb = built[0].truncate(4)
    prob = built[1]
    for y in rng.uniform(-20, 20, 10):
        y = float(y)
        w = prob.solve_shifted(y)
        proj = rb.B @ (rb.B.T @ (sys8.A0 @ w))
        best = h10_norm(w - proj, sys8)
        err = h10_norm(w - rb.lift(rb_solve(rb, y)), sys8)
        assert best <= err * (1 + 1e-10)
        assert err <= math.sqrt(1 + sys8.poincare**2 * math.exp(y)) * best * (1 + 1e-8)


def test_exact_vs_weak_greedy(sys8, grid):
    prob = FractionalProblem(sys8, grid, cache_factorizations=True)
    theta = TrainingSet(np.linspace(*grid.domain, 500), "uniform", 0, *grid.domain)
    weak = greedy_build(sys8, grid, theta, eps=1e-6, prob=prob)
    exact = greedy_build_exact(sys8, grid, theta, eps=1e-6, prob=prob)
    assert weak.selected_y[0] == exact.selected_y[0] == 0.0
    assert abs(weak.n - exact.n) <= 3
    # the true error never exceeds the estimator at the selection steps
    W = np.column_stack([prob.solve_shifted(float(y)) for y in theta.points])
    for n in range(1, weak.n + 1):
        sub = weak.truncate(n)
        err = true_errors(sub, sys8, theta.points, W)
        est = sub.estimator(theta.points)
        low = est / (1 + sys8.poincare**2 * np.exp(theta.points))
        # snapshot differences carry ~1e-14 absolute cancellation error
        slack = 1e-13 * sys8.f_norm
        assert np.all(err <= est * (1 + 1e-8) + slack)
        # below the offline floor the lower bound is not resolvable
        ok = est > ESTIMATOR_FLOOR * sys8.f_norm
        assert np.all(low[ok] <= err[ok] * (1 + 1e-8) + slack)


def test_exact_greedy_cap(sys6, grid):
    with pytest.raises(InvalidParameter):
        greedy_build_exact(sys6, grid, TrainingSet.uniform(grid, 501))


def test_full_span_matches_full(grid):
    sys = assemble(build_interval_mesh(2.0**-3))
    prob = FractionalProblem(sys, grid)
    rb = greedy_build(sys, grid, TrainingSet.uniform(grid, 400), eps=1e-15, prob=prob)
    # f = 1 only excites the symmetric modes
    assert rb.n == (sys.n_dofs + 1) // 2 or rb.stagnated
    for s in (0.2, 0.8):
        d = evaluate_rb(rb, grid, s) - evaluate_full(prob, s)
        assert l2_norm(d, sys) <= 1e-10 * sys.f_norm


def test_rb_accuracy_s07(built, sys8, grid):
    rb, prob = built
    sub = rb.truncate(20)
    d = evaluate_rb(sub, grid, 0.7) - evaluate_full(prob, 0.7)
    assert l2_norm(d, sys8) <= 1e-6 * sys8.f_norm


def test_rb_solve_domain(built):
    with pytest.raises(InvalidParameter):
        rb_solve(built[0], 300.0)


def test_training_set_validation(grid):
    with pytest.raises(InvalidParameter):
        TrainingSet(np.array([]))
    with pytest.raises(InvalidParameter):
        TrainingSet(np.array([1.0, 0.0]))
    with pytest.raises(InvalidParameter):
        TrainingSet.explicit([0.0, 500.0]).check_within(grid)
    r1, r2 = TrainingSet.random(grid, 50, 7), TrainingSet.random(grid, 50, 7)
    assert np.array_equal(r1.points, r2.points)


def test_truncate_bounds(built):
    with pytest.raises(InvalidParameter):
        built[0].truncate(built[0].n + 1)


# -- persistence -------------------------------------------------------------


def test_roundtrip_bytes(built, tmp_path, grid):
    rb = built[0]
    p1, p2 = tmp_path / "a.flrb", tmp_path / "b.flrb"
    save_basis(rb, p1)
    loaded = load_basis(p1)
    save_basis(loaded, p2)
    assert p1.read_bytes() == p2.read_bytes()
    assert np.array_equal(loaded.B, rb.B) and np.array_equal(loaded.R, rb.R)
    assert np.array_equal(loaded.training.points, rb.training.points)
    assert loaded.grid == rb.grid and loaded.gamma == rb.gamma
    for s in (0.1, 0.6):
        assert np.array_equal(evaluate_rb(loaded, grid, s), evaluate_rb(rb, grid, s))


@pytest.mark.parametrize("kind", ["explicit", "random"])
def test_roundtrip_training_kinds(sys6, grid, kind):
    theta = (TrainingSet.explicit(np.linspace(-100, 150, 37)) if kind == "explicit"
             else TrainingSet.random(grid, 300, 11))
    rb = greedy_build(sys6, grid, theta, eps=1e-6)
    data = dumps_basis(rb)
    back = loads_basis(data)
    assert back.training.kind == kind
    assert np.array_equal(back.training.points, theta.points)
    assert dumps_basis(back) == data


def test_corrupted_payload(built):
    data = bytearray(dumps_basis(built[0]))
    data[100] ^= 0xFF
    with pytest.raises(BasisFormatError, match="checksum"):
        loads_basis(bytes(data))


def test_truncated(built):
    data = dumps_basis(built[0])
    for cut in (10, len(data) // 2, len(data) - 1):
        with pytest.raises(BasisFormatError):
            loads_basis(data[:cut])


def test_version_mismatch(built):
    data = bytearray(dumps_basis(built[0]))
    data[4:8] = struct.pack("<I", 99)
    payload = bytes(data[:-4])
    data[-4:] = struct.pack("<I", zlib.crc32(payload))
    with pytest.raises(BasisFormatError, match="version"):
        loads_basis(bytes(data))


def test_bad_magic(built):
    data = b"XXXX" + dumps_basis(built[0])[4:]
    with pytest.raises(BasisFormatError, match="magic"):
        loads_basis(data)
