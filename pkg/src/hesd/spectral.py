"""Hessian spectrum estimation from matrix-vector products alone.

``hvp_op`` is any callable mapping a flat float64 vector to ``H @ v``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .errors import NumericalError, ShapeMismatchError

HvpOp = Callable[[np.ndarray], np.ndarray]

DEFAULT_PROBES = 10
DEFAULT_STEPS = 64
DEFAULT_SIGMA_FACTOR = 0.01
DEFAULT_GRID = 1024
BETA_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class TridiagonalMatrix:
    alphas: np.ndarray
    betas: np.ndarray
    requested_steps: int
    early_stop: bool = False

    @property
    def steps(self) -> int:
        return self.alphas.size

    def dense(self) -> np.ndarray:
        return np.diag(self.alphas) + np.diag(self.betas, 1) + np.diag(self.betas, -1)


@dataclass(frozen=True, eq=False)
class RitzSet:
    """Quadrature nodes and weights pooled over probes, sorted by node."""

    nodes: np.ndarray
    weights: np.ndarray
    probe: np.ndarray
    n_probes: int = 1

    def __post_init__(self):
        order = np.argsort(self.nodes, kind="stable")
        for name in ("nodes", "weights", "probe"):
            arr = np.asarray(getattr(self, name))[order]
            object.__setattr__(self, name, arr)

    def __len__(self) -> int:
        return self.nodes.size

    @property
    def lambda_min(self) -> float:
        return float(self.nodes[0])

    @property
    def lambda_max(self) -> float:
        return float(self.nodes[-1])

    def weight_sums(self) -> np.ndarray:
        return np.bincount(self.probe, weights=self.weights, minlength=self.n_probes)

    def first_moment(self) -> float:
        """Probe-averaged sum of weight times node (estimate of trace / n)."""
        per = np.bincount(self.probe, weights=self.weights * self.nodes, minlength=self.n_probes)
        return float(per.mean())

    def scaled(self, c: float) -> RitzSet:
        return RitzSet(self.nodes * c, self.weights.copy(), self.probe.copy(), self.n_probes)

    @classmethod
    def from_nodes(cls, nodes, weights=None) -> RitzSet:
        """Single-probe set, uniform weights unless given."""
        nodes = np.asarray(nodes, dtype=np.float64).reshape(-1)
        if weights is None:
            weights = np.full(nodes.size, 1.0 / max(nodes.size, 1))
        return cls(nodes, np.asarray(weights, dtype=np.float64),
                   np.zeros(nodes.size, dtype=np.int64), 1)

    @classmethod
    def concatenate(cls, parts: list[tuple[np.ndarray, np.ndarray]]) -> RitzSet:
        nodes = np.concatenate([p[0] for p in parts])
        weights = np.concatenate([p[1] for p in parts])
        probe = np.concatenate([np.full(p[0].size, i, dtype=np.int64)
                                for i, p in enumerate(parts)])
        return cls(nodes, weights, probe, len(parts))


@dataclass(frozen=True, eq=False)
class SpectralDensity:
    grid: np.ndarray
    density: np.ndarray
    sigma: float
    n_probes: int
    steps: int
    seed: int
    lambda_min: float
    lambda_max: float
    degenerate: bool = False
    meta: dict = field(default_factory=dict)

    def integral(self) -> float:
        return float(np.trapezoid(self.density, self.grid))


@dataclass(frozen=True)
class PowerResult:
    eigenvalue: float
    iterations: int
    converged: bool
    residual: float


def _as_flat(v) -> np.ndarray:
    return np.asarray(getattr(v, "values", v), dtype=np.float64).reshape(-1)


def power_extreme(hvp_op: HvpOp, dim: int, seed: int = 0, max_iters: int = 1000,
                  tol: float = 1e-6, shift: float = 0.0) -> PowerResult:
    """Dominant-magnitude eigenvalue of ``H - shift*I``, reported for ``H``.

    Stops once ``||Av - lam v|| <= tol * |lam|`` with ``A = H - shift*I``.
    On hitting ``max_iters`` the last Rayleigh quotient is returned with
    ``converged=False``.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(dim)
    v /= np.linalg.norm(v)
    lam, res = 0.0, np.inf
    for it in range(1, max_iters + 1):
        av = hvp_op(v) - shift * v
        lam = float(v @ av)
        res = float(np.linalg.norm(av - lam * v))
        if not np.isfinite(res):
            raise NumericalError("power iteration produced a non-finite residual")
        if res <= tol * abs(lam) or res == 0.0:
            return PowerResult(lam + shift, it, True, res / max(abs(lam), 1e-300))
        norm = np.linalg.norm(av)
        if norm == 0.0:
            return PowerResult(shift, it, True, 0.0)
        v = av / norm
    return PowerResult(lam + shift, max_iters, False, res / max(abs(lam), 1e-300))


def extreme_eigenvalues(hvp_op: HvpOp, dim: int, seed: int = 0, max_iters: int = 1000,
                        tol: float = 1e-6) -> tuple[PowerResult, PowerResult]:
    """``(smallest, largest)`` eigenvalue via a plain and a shifted power pass."""
    first = power_extreme(hvp_op, dim, seed, max_iters, tol)
    second = power_extreme(hvp_op, dim, seed + 1, max_iters, tol, shift=first.eigenvalue)
    if first.eigenvalue >= 0:
        return second, first
    return first, second


def lanczos(hvp_op: HvpOp, probe, m: int, tol: float = BETA_TOL
            ) -> tuple[TridiagonalMatrix, np.ndarray]:
    """``m``-step Lanczos with full reorthogonalization.

    Returns the tridiagonal matrix and the ``(steps, n)`` orthonormal basis.
    Stops early when the next off-diagonal falls below ``tol`` relative to the
    largest recurrence coefficient seen so far.
    """
    q = _as_flat(probe)
    if m < 1:
        raise ValueError("m must be >= 1")
    norm = np.linalg.norm(q)
    if norm == 0.0 or not np.isfinite(norm):
        raise ValueError("Lanczos probe must be a non-zero finite vector")
    n = q.size
    m_eff = min(m, n)
    basis = np.zeros((m_eff, n))
    alphas, betas = [], []
    basis[0] = q / norm
    scale = 0.0
    early = False
    for j in range(m_eff):
        w = hvp_op(basis[j])
        if w.shape != (n,):
            raise ShapeMismatchError(f"operator returned shape {w.shape} for length-{n} input")
        alpha = float(basis[j] @ w)
        alphas.append(alpha)
        # two Gram-Schmidt passes against the whole basis
        for _ in range(2):
            w = w - basis[:j + 1].T @ (basis[:j + 1] @ w)
        beta = float(np.linalg.norm(w))
        scale = max(scale, abs(alpha), beta)
        if j == m_eff - 1:
            break
        if beta <= tol * scale or beta == 0.0:
            early = True
            break
        betas.append(beta)
        basis[j + 1] = w / beta
    k = len(alphas)
    t = TridiagonalMatrix(np.array(alphas), np.array(betas), m, early or k < m)
    return t, basis[:k]


def ritz_from_tridiagonal(t: TridiagonalMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues of ``t`` and the squared first components of its eigenvectors."""
    if t.steps == 1:
        return t.alphas.copy(), np.ones(1)
    nodes, vecs = eigh_tridiagonal(t.alphas, t.betas)
    return nodes, vecs[0] ** 2


def rademacher(rng: np.random.Generator, dim: int) -> np.ndarray:
    return rng.integers(0, 2, size=dim).astype(np.float64) * 2.0 - 1.0


def slq(hvp_op: HvpOp, dim: int, n_probes: int = DEFAULT_PROBES, m: int = DEFAULT_STEPS,
        seed: int = 0) -> tuple[RitzSet, list[TridiagonalMatrix]]:
    """Stochastic Lanczos quadrature over normalised Rademacher probes."""
    if n_probes < 1:
        raise ValueError("n_probes must be >= 1")
    rng = np.random.default_rng(seed)
    parts, tris = [], []
    for _ in range(n_probes):
        z = rademacher(rng, dim)
        t, _ = lanczos(hvp_op, z, m)
        parts.append(ritz_from_tridiagonal(t))
        tris.append(t)
    return RitzSet.concatenate(parts), tris


def density_from_ritz(ritz: RitzSet, sigma_factor: float = DEFAULT_SIGMA_FACTOR,
                      n_grid: int = DEFAULT_GRID, steps: int = 0, seed: int = 0
                      ) -> SpectralDensity:
    """Gaussian-smoothed quadrature density on a uniform grid.

    ``sigma = sigma_factor * (lambda_max - lambda_min)`` and the grid covers
    three sigmas beyond each extreme node. The curve is renormalised to unit
    trapezoidal mass so truncated tails do not bias it. A spectrum narrower
    than 1e-12 is flagged degenerate and rendered as one narrow bump.
    """
    lo, hi = ritz.lambda_min, ritz.lambda_max
    span = hi - lo
    degenerate = span < 1e-12
    if degenerate:
        centre = 0.5 * (lo + hi)
        sigma = sigma_factor * (abs(centre) if centre != 0.0 else 1.0)
        lo = hi = centre
    else:
        sigma = sigma_factor * span
    grid = np.linspace(lo - 3 * sigma, hi + 3 * sigma, max(n_grid, 1024))
    density = np.zeros_like(grid)
    # reduce probe by probe, in index order
    for p in range(ritz.n_probes):
        sel = ritz.probe == p
        diff = grid[:, None] - ritz.nodes[sel][None, :]
        kernel = np.exp(-0.5 * (diff / sigma) ** 2) / (sigma * np.sqrt(2 * np.pi))
        density += kernel @ ritz.weights[sel]
    density /= ritz.n_probes
    mass = np.trapezoid(density, grid)
    if mass > 0:
        density = density / mass
    return SpectralDensity(grid, density, float(sigma), ritz.n_probes, steps, seed,
                           ritz.lambda_min, ritz.lambda_max, bool(degenerate))


def slq_density(hvp_op: HvpOp, dim: int, n_probes: int = DEFAULT_PROBES,
                m: int = DEFAULT_STEPS, sigma_factor: float = DEFAULT_SIGMA_FACTOR,
                seed: int = 0, n_grid: int = DEFAULT_GRID) -> tuple[SpectralDensity, RitzSet]:
    ritz, _ = slq(hvp_op, dim, n_probes, m, seed)
    return density_from_ritz(ritz, sigma_factor, n_grid, m, seed), ritz


def hutchinson_trace(hvp_op: HvpOp, dim: int, n_probes: int, seed: int = 0) -> float:
    """Plain Rademacher estimate of ``trace(H)``."""
    rng = np.random.default_rng(seed)
    total = 0.0
    for _ in range(n_probes):
        z = rademacher(rng, dim)
        total += float(z @ hvp_op(z))
    return total / n_probes


def signed_extremes(ritz: RitzSet, power: tuple[PowerResult, PowerResult] | None = None
                    ) -> tuple[float, float]:
    """Spectrum extremes from Ritz nodes, widened by power-iteration estimates.

    Both are Rayleigh quotients, so the larger-magnitude value is the better one.
    """
    lo, hi = ritz.lambda_min, ritz.lambda_max
    if power is not None:
        lo = min(lo, power[0].eigenvalue)
        hi = max(hi, power[1].eigenvalue)
    return lo, hi
