import numpy as np
import pytest

from conftest import make_rng
from src.data.sampling import DataMatrix
from src.errors import DivergenceError, DomainError
from src.pruning.select import (
    SolverConfig,
    group_soft_threshold,
    importance_report,
    solve_group_sparse,
)


def matrix(values):
    return DataMatrix.from_values(values)


def random_data(seed, rows=50, cols=4, scales=None):
    rng = make_rng(seed)
    d = rng.standard_normal((rows, cols))
    if scales is not None:
        d *= np.asarray(scales)
    return d / np.linalg.norm(d)


def assert_affine(coefficients):
    column_sums = coefficients.U.astype(np.float64).sum(axis=0)
    assert np.all(np.abs(column_sums - 1.0) <= 1e-4)


def relative_residual(d, u):
    d = np.asarray(d, dtype=np.float64)
    return np.linalg.norm(d - d @ u.astype(np.float64)) / np.linalg.norm(d)


def subgradient_reference(d, lam, iters=100_000):
    """Projected subgradient on the raw (uncentered) problem, best iterate"""
    d = np.asarray(d, dtype=np.float64)
    c = d.shape[1]
    gram = d.T @ d
    step = 1.0 / (np.linalg.norm(gram, 2) + 10.0 * lam)

    def value(u):
        return 0.5 * np.linalg.norm(d - d @ u) ** 2 + lam * np.linalg.norm(u, axis=1).sum()

    u = np.eye(c)
    best = value(u)
    for _ in range(iters):
        norms = np.linalg.norm(u, axis=1, keepdims=True)
        sub = gram @ u - gram + lam * np.divide(u, norms, out=np.zeros_like(u), where=norms > 0)
        sub -= sub.mean(axis=0, keepdims=True)  # project onto 1^T G = 0
        u = u - step * sub
        best = min(best, value(u))
    return best


def test_soft_threshold_rows():
    v = np.array([[3.0, 4.0], [0.3, 0.4], [0.0, 0.0]])
    out = group_soft_threshold(v, 1.0)
    np.testing.assert_allclose(out[0], [2.4, 3.2])
    np.testing.assert_array_equal(out[1:], 0.0)


def test_config_validation():
    with pytest.raises(DomainError):
        SolverConfig(lambda_rel=0.0)
    with pytest.raises(DomainError):
        SolverConfig(lambda_rel=1.5)
    with pytest.raises(DomainError):
        SolverConfig(rho=0.0)
    with pytest.raises(DomainError):
        SolverConfig(max_iters=0)
    with pytest.raises(DomainError):
        SolverConfig(tol_dual=0.0)


def test_more_channels_than_rows_is_rejected():
    with pytest.raises(DomainError):
        solve_group_sparse(matrix(np.ones((3, 4))))


def test_non_finite_data_diverges():
    d = random_data(0)
    d[0, 0] = np.nan
    with pytest.raises(DivergenceError):
        solve_group_sparse(matrix(d))


def test_vanishing_lambda_reconstructs_exactly():
    d = random_data(1, rows=60, cols=5)
    coefficients = solve_group_sparse(matrix(d), SolverConfig(lambda_rel=1e-6))
    assert_affine(coefficients)
    assert relative_residual(d, coefficients.U) < 1e-4


def test_duplicate_pair_with_orthogonal_column():
    rng = make_rng(2)
    base = rng.standard_normal((80, 2))
    q, _ = np.linalg.qr(base)
    d = np.column_stack([q[:, 0], q[:, 0], q[:, 1]])
    coefficients = solve_group_sparse(matrix(d), SolverConfig(lambda_rel=1e-4))
    assert_affine(coefficients)
    assert relative_residual(d, coefficients.U) < 1e-3
    factors = importance_report(coefficients, "dup").factors
    assert abs(factors[0] - factors[1]) <= 1e-2 * max(factors[0], factors[1])
    assert factors[2] >= factors[0] - 1e-6


def test_matches_subgradient_reference():
    for seed, cols in [(3, 3), (4, 3)]:
        d = random_data(seed, rows=50, cols=cols)
        coefficients = solve_group_sparse(matrix(d), SolverConfig(lambda_rel=0.01, max_iters=5000, tol_primal=1e-8, tol_dual=1e-8))
        assert_affine(coefficients)
        reference = subgradient_reference(d.astype(np.float32), coefficients.lam)
        assert abs(coefficients.objective_trace[-1] - reference) <= 1e-3 * abs(reference)


def test_objective_descends_after_warmup():
    for seed in range(5):
        d = random_data(seed, rows=60, cols=6, scales=[1.0, 0.5, 2.0, 1.0, 0.2, 1.5])
        coefficients = solve_group_sparse(matrix(d))
        assert_affine(coefficients)
        trace = np.asarray(coefficients.objective_trace)
        assert np.all(np.diff(trace[5:]) <= 1e-6)


def test_ranking_is_translation_invariant():
    checked = 0
    for trial in range(50):
        rng = make_rng(100 + trial)
        cols = int(rng.integers(3, 7))
        d = random_data(100 + trial, rows=40, cols=cols, scales=rng.uniform(0.2, 2.0, size=cols))
        shifted = d + rng.standard_normal((40, 1)) * 3.0
        cfg = SolverConfig(lambda_rel=0.1)
        a = solve_group_sparse(matrix(d), cfg)
        b = solve_group_sparse(matrix(shifted), cfg)
        assert_affine(a)
        assert_affine(b)
        ra = importance_report(a, "x")
        rb = importance_report(b, "x")
        gaps = np.concatenate([-np.diff(ra.factors[ra.ranking]), -np.diff(rb.factors[rb.ranking])])
        if gaps.min() <= 1e-3:
            continue
        checked += 1
        np.testing.assert_array_equal(ra.ranking, rb.ranking)
    assert checked >= 10


def test_larger_lambda_shrinks_total_row_norm():
    for seed in range(5):
        d = random_data(seed, rows=50, cols=5)
        small = solve_group_sparse(matrix(d), SolverConfig(lambda_rel=0.02))
        large = solve_group_sparse(matrix(d), SolverConfig(lambda_rel=0.2))
        total = lambda c: np.linalg.norm(c.U.astype(np.float64), axis=1).sum()
        assert total(large) <= total(small) + 1e-5


def test_duplicate_channels_get_equal_factors():
    for seed in range(5):
        d = random_data(seed, rows=50, cols=4)
        d[:, 1] = d[:, 0]
        coefficients = solve_group_sparse(matrix(d))
        factors = importance_report(coefficients, "x").factors
        assert abs(factors[0] - factors[1]) <= 1e-2 * max(factors[0], factors[1])


def test_importance_report_examples():
    report = importance_report(np.eye(4), "layer")
    np.testing.assert_array_equal(report.factors, np.ones(4))
    np.testing.assert_array_equal(report.ranking, [0, 1, 2, 3])

    u = np.eye(3)
    u[2] = 0.0
    report = importance_report(u, "layer")
    assert report.factors[2] == 0.0
    assert report.ranking[-1] == 2

    report = importance_report(np.array([[3.0, 0.0], [4.0, 0.0]]), "layer")
    np.testing.assert_allclose(report.factors, [3.0, 4.0])
    np.testing.assert_array_equal(report.ranking, [1, 0])


def test_importance_frame_is_in_rank_order():
    frame = importance_report(np.diag([1.0, 3.0, 2.0]), "conv1").to_frame()
    assert list(frame.columns) == ["channel", "factor", "rank"]
    assert frame["channel"].tolist() == [1, 2, 0]
    assert frame["rank"].tolist() == [1, 2, 3]
    assert frame["factor"].is_monotonic_decreasing
