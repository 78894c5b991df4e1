"""Finite abstractions built from one-step samples.

Two routes: an interval MDP whose entries are empirical transition
frequencies with Chebyshev half-widths, and a point MDP obtained by fitting
an additive Gaussian noise model and integrating it over the grid cells.
Transition tensors have shape ``(n_cells, n_inputs, n_cells + 1)``; the last
column is the absorbing out-of-box state.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .blackbox import BlackBoxSystem, InputSet, NoiseStream
from .errors import InvalidParameter
from .grid import Grid
from .scenario import min_transition_samples_G

ROW_TOL = 1e-12
EMPIRICAL = "empirical-point"
MLE = "mle-gaussian"
MODEL = "model-based"


def _check_rows(T: np.ndarray) -> None:
    if np.any(T < 0):
        raise InvalidParameter("transition probabilities must be non-negative")
    dev = np.max(np.abs(T.sum(axis=-1) - 1.0)) if T.size else 0.0
    if dev > ROW_TOL:
        raise InvalidParameter(f"transition rows must sum to 1 (max deviation {dev:.3g})")


@dataclass
class FiniteMdp:
    grid: Grid
    inputs: InputSet
    T: np.ndarray
    provenance: str = EMPIRICAL

    def __post_init__(self):
        self.T = np.asarray(self.T, dtype=float)
        shape = (self.grid.n_cells, len(self.inputs), self.grid.n_cells + 1)
        if self.T.shape != shape:
            raise InvalidParameter(f"transition tensor has shape {self.T.shape}, expected {shape}")
        _check_rows(self.T)


@dataclass
class IntervalMdp:
    grid: Grid
    inputs: InputSet
    p_bar: np.ndarray
    eps_bar: np.ndarray
    beta_bar: np.ndarray
    G: np.ndarray

    def __post_init__(self):
        self.p_bar = np.asarray(self.p_bar, dtype=float)
        shape = self.p_bar.shape
        self.eps_bar = np.broadcast_to(np.asarray(self.eps_bar, dtype=float), shape).copy()
        self.beta_bar = np.broadcast_to(np.asarray(self.beta_bar, dtype=float), shape).copy()
        self.G = np.asarray(self.G, dtype=np.int64)
        _check_rows(self.p_bar)

    @property
    def lower(self) -> np.ndarray:
        return np.maximum(0.0, self.p_bar - self.eps_bar)

    @property
    def upper(self) -> np.ndarray:
        return np.minimum(1.0, self.p_bar + self.eps_bar)

    @property
    def beta3(self) -> float:
        """Union-bound confidence over all entries."""
        return float(self.beta_bar.sum())


def _per_entry(value, shape, name) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=float), shape)
    if np.any(arr <= 0) or np.any(arr > 1):
        raise InvalidParameter(f"{name} entries must lie in (0, 1]")
    return arr


def estimate_imdp(sys: BlackBoxSystem, grid: Grid, eps_bar, beta_bar, seed: int,
                  *, workers: int = 1) -> IntervalMdp:
    """Empirical transition frequencies from every (representative point, input).

    Each row ``(i, u)`` gets ``max_j G(eps_ij, beta_ij)`` independent samples
    from a noise stream keyed by ``(i, u)``; successors leaving the box count
    towards the absorbing column.
    """
    C, m = grid.n_cells, len(sys.inputs)
    shape = (C, m, C + 1)
    eps = _per_entry(eps_bar, shape, "eps_bar")
    beta = _per_entry(beta_bar, shape, "beta_bar")
    if np.any(beta >= 1):
        raise InvalidParameter("beta_bar entries must lie in (0, 1)")
    if np.all(eps == eps.flat[0]) and np.all(beta == beta.flat[0]):
        G = np.full((C, m), min_transition_samples_G(eps.flat[0], beta.flat[0]), dtype=np.int64)
    else:
        G = np.ceil(1.0 / (4.0 * beta * eps * eps) * (1 - 1e-12)).max(axis=-1).astype(np.int64)
    centers = grid.centers

    def row(i):
        out = np.zeros((m, C + 1))
        for u in range(m):
            g = int(G[i, u])
            w = NoiseStream(seed, ("imdp", i, u), sys.noise_dim, sys.noise_dist).draw(0, g)
            nxt = sys.transition(centers[i][None, :], u, w)
            idx = grid.project(nxt).index
            out[u] = np.bincount(idx, minlength=C + 1) / g
        return out

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            rows = list(ex.map(row, range(C)))
    else:
        rows = [row(i) for i in range(C)]
    return IntervalMdp(grid, sys.inputs, np.stack(rows), eps, beta, G)


def imdp_rho(imdp: IntervalMdp, T: int) -> float:
    """``2 T max_(i,u) sum_j eps_ij`` with ``j`` over grid cells."""
    if T < 0:
        raise InvalidParameter("horizon must be non-negative")
    e = imdp.eps_bar[..., : imdp.grid.n_cells]
    if np.all(e == e.flat[0]):
        return float(2 * T * e.flat[0] * imdp.grid.n_cells)
    return float(2 * T * e.sum(axis=-1).max())


def imdp_to_point_mdp(imdp: IntervalMdp) -> FiniteMdp:
    return FiniteMdp(imdp.grid, imdp.inputs, imdp.p_bar.copy(), EMPIRICAL)


@dataclass(frozen=True)
class GaussianFit:
    mean: np.ndarray
    std: np.ndarray
    n: int

    def __post_init__(self):
        if np.any(np.asarray(self.std) < 0):
            raise InvalidParameter("std must be non-negative")


def fit_gaussian_mle(samples) -> GaussianFit:
    """Per-dimension sample mean and ``(N-1)``-normalized standard deviation."""
    x = np.asarray(samples, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    if n < 2:
        raise InvalidParameter("need at least 2 samples")
    mean = x.mean(axis=0)
    var = np.sum((x - mean) ** 2, axis=0) / (n - 1)
    return GaussianFit(mean, np.sqrt(var), n)


def collect_residuals(sys: BlackBoxSystem, grid: Grid, n_hat: int, pilot: int = 32,
                      seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Pilot means per (cell, input) and ``n_hat`` one-step residuals.

    Returns ``(means, residuals)``: ``means[i, u]`` averages ``pilot``
    successors of representative point ``i`` under input ``u``; residual
    ``t`` is a fresh successor of pair ``t mod (n_cells * n_inputs)`` minus
    that pair's pilot mean.
    """
    if pilot < 1 or n_hat < 2:
        raise InvalidParameter("need pilot >= 1 and n_hat >= 2")
    C, m = grid.n_cells, len(sys.inputs)
    centers = grid.centers
    u_idx = np.arange(m)[None, :, None]
    w = NoiseStream(seed, ("mle-pilot",), sys.noise_dim, sys.noise_dist).draw(0, C * m * pilot)
    means = sys.transition(centers[:, None, None, :], u_idx, w.reshape(C, m, pilot, -1)).mean(axis=2)
    pair = np.arange(n_hat) % (C * m)
    ci, ui = pair // m, pair % m
    w = NoiseStream(seed, ("mle-resid",), sys.noise_dim, sys.noise_dist).draw(0, n_hat)
    resid = sys.transition(centers[ci], ui, w) - means[ci, ui]
    return means, resid


def _cell_masses(edges: np.ndarray, mean: np.ndarray, std: float) -> np.ndarray:
    """Mass of ``N(mean, std^2)`` on each interval between consecutive edges."""
    if std > 0:
        cdf = ndtr((edges - mean[..., None]) / std)
    else:
        # point mass: half-open cells, last one closed
        cdf = (edges > mean[..., None]).astype(float)
        cdf[..., -1] = (edges[-1] >= mean).astype(float)
    return np.diff(cdf, axis=-1)


def gaussian_transitions(grid: Grid, means, std) -> np.ndarray:
    """Rows for successors ``N(means[..], diag(std^2))`` integrated over cells."""
    means = np.asarray(means, dtype=float)
    std = np.broadcast_to(np.asarray(std, dtype=float), (grid.n,))
    inside = None
    for d in range(grid.n):
        p = _cell_masses(grid.edges[d], means[..., d], float(std[d]))
        inside = p if inside is None else (inside[..., :, None] * p[..., None, :]).reshape(
            p.shape[:-1] + (-1,))
    absorbing = np.clip(1.0 - inside.sum(axis=-1, keepdims=True), 0.0, 1.0)
    return np.concatenate([inside, absorbing], axis=-1)


def mdp_from_gaussian(means, fit: GaussianFit, grid: Grid, inputs: InputSet,
                      provenance: str = MLE) -> FiniteMdp:
    """Point MDP centered at per-(cell, input) empirical means, spread by the fitted noise."""
    return FiniteMdp(grid, inputs, gaussian_transitions(grid, means, fit.std), provenance)


def mle_mdp(sys: BlackBoxSystem, grid: Grid, n_hat: int, pilot: int = 32, seed: int = 0):
    """End-to-end data-driven MDP: residual collection, MLE fit, cell integration."""
    means, resid = collect_residuals(sys, grid, n_hat, pilot, seed)
    fit = fit_gaussian_mle(resid)
    return mdp_from_gaussian(means, fit, grid, sys.inputs), fit


def model_based_mdp(sys: BlackBoxSystem, grid: Grid) -> FiniteMdp:
    """Reference MDP from the true nominal map and noise level (built-ins only)."""
    if sys.noise_std is None:
        raise InvalidParameter("system does not expose a noise model")
    C, m = grid.n_cells, len(sys.inputs)
    means = sys.nominal(grid.centers[:, None, :], np.arange(m)[None, :])
    return FiniteMdp(grid, sys.inputs, gaussian_transitions(grid, means, sys.noise_std), MODEL)
