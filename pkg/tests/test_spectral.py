import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hesd.models import HessianOperator, ModelSpec
from hesd.optim import OptimizerConfig
from hesd.spectral import (RitzSet, TridiagonalMatrix, density_from_ritz, extreme_eigenvalues,
                           hutchinson_trace, lanczos, power_extreme, ritz_from_tridiagonal, slq,
                           slq_density)
from hesd.train import RunConfig, train
from hesd.data import DatasetConfig


def matop(A):
    A = np.asarray(A, dtype=float)
    return lambda v: A @ v


def random_symmetric(n, seed):
    rng = np.random.default_rng(seed)
    M = rng.normal(size=(n, n))
    return (M + M.T) / 2


@pytest.fixture(scope="module")
def trained_mlp():
    spec = ModelSpec("mlp", (4, 16, 16, 3))
    cfg = RunConfig(model=spec,
                    dataset=DatasetConfig(n_samples=120, input_dim=4, n_classes=3,
                                          separation=4.0, noise=0.7, seed=0),
                    optimizer=OptimizerConfig("sgd", lr=0.3), epochs=20, checkpoint_every=20)
    r = train(cfg)
    op = HessianOperator(r.model, r.params, r.dataset.train)
    return op, np.linalg.eigvalsh(op.dense())


# -- power iteration -------------------------------------------------------

def test_power_dominant_positive():
    res = power_extreme(matop(np.diag([1.0, 2.0, 5.0])), 3, seed=0)
    assert res.converged and res.eigenvalue == pytest.approx(5.0, rel=1e-6)


def test_power_negative_dominant_and_shifted_pass():
    op = matop(np.diag([-3.0, 1.0]))
    assert power_extreme(op, 2, seed=0).eigenvalue == pytest.approx(-3.0, rel=1e-6)
    lo, hi = extreme_eigenvalues(op, 2, seed=0)
    assert lo.eigenvalue == pytest.approx(-3.0, rel=1e-6)
    assert hi.eigenvalue == pytest.approx(1.0, rel=1e-5)


def test_power_flags_non_convergence():
    # equal-magnitude eigenvalues of opposite sign never settle
    res = power_extreme(matop(np.diag([-2.0, 2.0, 0.5])), 3, seed=0, max_iters=20)
    assert not res.converged and res.iterations == 20


def test_power_matches_dense_on_toy_mlp(trained_mlp):
    op, ev = trained_mlp
    lo, hi = extreme_eigenvalues(op, op.dim, seed=0, max_iters=2000, tol=1e-8)
    assert hi.eigenvalue == pytest.approx(ev[-1], rel=0.01)
    assert lo.eigenvalue == pytest.approx(ev[0], rel=0.01)


# -- Lanczos ---------------------------------------------------------------

def test_lanczos_identity_stops_after_one_step():
    t, basis = lanczos(lambda v: v.copy(), np.array([1.0, 2.0, -1.0, 0.5]), 3)
    np.testing.assert_allclose(t.alphas, 1.0)
    assert t.steps == 1 and t.early_stop and t.betas.size == 0
    assert basis.shape == (1, 4)


def test_lanczos_two_by_two_is_exact():
    t, _ = lanczos(matop(np.diag([1.0, 2.0])), np.array([1.0, 1.0]) / np.sqrt(2), 2)
    nodes, weights = ritz_from_tridiagonal(t)
    np.testing.assert_allclose(nodes, [1.0, 2.0], atol=1e-14)
    np.testing.assert_allclose(weights, [0.5, 0.5], atol=1e-14)


def test_lanczos_full_dimension_recovers_spectrum():
    A = random_symmetric(50, 0)
    t, basis = lanczos(matop(A), np.random.default_rng(1).normal(size=50), 50)
    nodes, _ = ritz_from_tridiagonal(t)
    ev = np.linalg.eigvalsh(A)
    assert abs(nodes[0] - ev[0]) < 1e-6 and abs(nodes[-1] - ev[-1]) < 1e-6
    np.testing.assert_allclose(basis @ basis.T, np.eye(t.steps), atol=1e-12)
    np.testing.assert_allclose(basis @ A @ basis.T, t.dense(), atol=1e-10)


def test_lanczos_rejects_zero_probe():
    with pytest.raises(ValueError):
        lanczos(matop(np.eye(3)), np.zeros(3), 2)


def test_single_step_ritz():
    nodes, weights = ritz_from_tridiagonal(TridiagonalMatrix(np.array([3.0]), np.array([]), 1))
    assert nodes.tolist() == [3.0] and weights.tolist() == [1.0]


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31))
def test_ritz_weights_nonnegative_and_normalised(seed):
    A = random_symmetric(40, seed)
    t, _ = lanczos(matop(A), np.random.default_rng(seed + 1).normal(size=40), 30)
    nodes, weights = ritz_from_tridiagonal(t)
    assert np.all(weights >= 0)
    assert abs(weights.sum() - 1.0) < 1e-10
    assert np.all(np.diff(nodes) >= 0)


# -- SLQ -------------------------------------------------------------------

def test_identity_density_is_one_bump_at_one():
    density, ritz = slq_density(lambda v: v.copy(), 20, n_probes=3, m=8, seed=0)
    assert density.degenerate
    assert density.grid[np.argmax(density.density)] == pytest.approx(1.0, abs=density.sigma / 5)
    assert density.integral() == pytest.approx(1.0, abs=1e-3)


def test_symmetric_spectrum_symmetric_density():
    density, _ = slq_density(matop(np.diag([-1.0, 1.0])), 2, n_probes=4, m=2, seed=0)
    np.testing.assert_allclose(density.grid, -density.grid[::-1], atol=1e-12)
    np.testing.assert_allclose(density.density, density.density[::-1], atol=1e-9)


def test_density_properties():
    A = random_symmetric(60, 3)
    density, ritz = slq_density(matop(A), 60, n_probes=5, m=20, seed=2)
    assert np.all(density.density >= 0)
    assert density.integral() == pytest.approx(1.0, abs=1e-3)
    assert density.grid.size >= 1024
    span = ritz.lambda_max - ritz.lambda_min
    assert density.sigma == pytest.approx(0.01 * span)
    assert density.grid[0] == pytest.approx(ritz.lambda_min - 3 * density.sigma)
    assert density.grid[-1] == pytest.approx(ritz.lambda_max + 3 * density.sigma)
    np.testing.assert_allclose(ritz.weight_sums(), 1.0, atol=1e-10)


def test_moment_matching_per_probe():
    A = random_symmetric(80, 4)
    ritz, _ = slq(matop(A), 80, n_probes=6, m=12, seed=9)
    # the probe stream is shared, so Hutchinson sees exactly the same z
    expected = hutchinson_trace(matop(A), 80, 6, seed=9) / 80
    assert ritz.first_moment() == pytest.approx(expected, rel=1e-10)


def test_first_moment_vs_hutchinson_and_trace_on_toy_mlp(trained_mlp):
    op, ev = trained_mlp
    ritz, _ = slq(op, op.dim, n_probes=10, m=64, seed=0)
    hutch = hutchinson_trace(op, op.dim, 10, seed=0) / op.dim
    assert abs(ritz.first_moment() - hutch) <= 0.05 * abs(hutch)
    assert abs(ritz.first_moment() - ev.mean()) <= 0.05 * abs(ev.mean())


def test_ritz_nodes_interlace_dense_extremes(trained_mlp):
    op, ev = trained_mlp
    ritz, _ = slq(op, op.dim, n_probes=4, m=32, seed=1)
    eps = 1e-6 * np.abs(ev).max()
    assert ritz.nodes.min() >= ev[0] - eps and ritz.nodes.max() <= ev[-1] + eps


def test_slq_is_deterministic():
    A = random_symmetric(30, 5)
    d1, r1 = slq_density(matop(A), 30, n_probes=3, m=10, seed=4)
    d2, r2 = slq_density(matop(A), 30, n_probes=3, m=10, seed=4)
    assert r1.nodes.tobytes() == r2.nodes.tobytes() and r1.weights.tobytes() == r2.weights.tobytes()
    assert d1.density.tobytes() == d2.density.tobytes()


def test_zero_operator_is_degenerate():
    density, ritz = slq_density(lambda v: np.zeros_like(v), 5, n_probes=2, m=3)
    assert density.degenerate and ritz.lambda_max == 0.0
    assert np.all(np.isfinite(density.density))


def test_ritz_set_sorts_and_pools():
    r = RitzSet.concatenate([(np.array([2.0, -1.0]), np.array([0.3, 0.7])),
                             (np.array([0.5]), np.array([1.0]))])
    assert r.nodes.tolist() == [-1.0, 0.5, 2.0]
    assert r.probe.tolist() == [0, 1, 0]
    np.testing.assert_allclose(r.weight_sums(), [1.0, 1.0])
    d = density_from_ritz(r)
    assert d.integral() == pytest.approx(1.0, abs=1e-3)
