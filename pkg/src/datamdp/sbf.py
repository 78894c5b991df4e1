"""Stochastic bisimulation function templates and the guarantees they imply.

An SBF candidate is a linear combination ``S(q, x, xh) = sum_j q_j b_j(x, xh)``
of fixed basis functions.  All built-in bases depend on ``x - xh`` only:
per-coordinate squares, the cross terms of a full quadratic form, and the
constant 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .errors import InvalidParameter, InvalidState

FAMILIES = ("diagonal", "full")


@dataclass(frozen=True)
class Basis:
    """Declarative basis family over the difference ``d = x - xh``.

    ``diagonal``: ``d_1^2, ..., d_n^2``.  ``full``: the diagonal terms followed
    by ``2 d_a d_b`` for ``a < b``, so coefficients are the entries of a
    symmetric ``P`` in ``d^T P d``.  ``constant`` appends the basis ``1``.
    """

    n: int
    family: str = "diagonal"
    constant: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidParameter(f"unknown basis family {self.family!r}")
        if self.n < 1:
            raise InvalidParameter("basis dimension must be >= 1")

    @property
    def pairs(self) -> list:
        return list(combinations(range(self.n), 2)) if self.family == "full" else []

    @property
    def r(self) -> int:
        return self.n + len(self.pairs) + int(self.constant)

    @property
    def names(self) -> list:
        names = [f"sq{d + 1}" for d in range(self.n)]
        names += [f"cross{a + 1}{b + 1}" for a, b in self.pairs]
        if self.constant:
            names.append("const")
        return names

    def values(self, d) -> np.ndarray:
        """Basis values for differences ``d`` of shape ``(..., n)`` -> ``(..., r)``."""
        d = np.asarray(d, dtype=float)
        if d.shape[-1:] != (self.n,):
            raise InvalidState(f"difference has trailing dimension {d.shape[-1:]}, expected {self.n}")
        cols = [d * d]
        if self.pairs:
            a, b = np.array(self.pairs).T
            cols.append(2.0 * d[..., a] * d[..., b])
        if self.constant:
            cols.append(np.ones(d.shape[:-1] + (1,)))
        return np.concatenate(cols, axis=-1)

    def quadratic_matrix(self, q) -> np.ndarray:
        """Symmetric ``P`` such that the non-constant part equals ``d^T P d``."""
        q = np.asarray(q, dtype=float)
        P = np.diag(q[: self.n])
        for k, (a, b) in enumerate(self.pairs):
            P[a, b] = P[b, a] = q[self.n + k]
        return P

    def to_dict(self) -> dict:
        return {"n": self.n, "family": self.family, "constant": self.constant}


@dataclass(frozen=True)
class SbfTemplate:
    basis: Basis
    q: tuple
    alpha: float
    psi: float = 0.0

    def __post_init__(self):
        q = tuple(float(v) for v in self.q)
        if len(q) != self.basis.r:
            raise InvalidParameter(f"need {self.basis.r} coefficients, got {len(q)}")
        if not self.alpha > 0:
            raise InvalidParameter("alpha must be positive")
        if not self.psi >= 0:
            raise InvalidParameter("psi must be non-negative")
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "psi", float(self.psi))

    def __call__(self, x, xh) -> np.ndarray:
        return evaluate(self, x, xh)

    def with_q(self, q) -> "SbfTemplate":
        return SbfTemplate(self.basis, tuple(q), self.alpha, self.psi)

    def to_dict(self) -> dict:
        return {"basis": self.basis.to_dict(), "q": list(self.q), "alpha": self.alpha, "psi": self.psi}

    @classmethod
    def from_dict(cls, d: dict) -> "SbfTemplate":
        return cls(Basis(**d["basis"]), tuple(d["q"]), d["alpha"], d["psi"])


def evaluate(t: SbfTemplate, x, xh) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    xh = np.asarray(xh, dtype=float)
    if x.shape[-1] != xh.shape[-1]:
        raise InvalidState("x and xh dimensions differ")
    return t.basis.values(x - xh) @ np.asarray(t.q)


@dataclass(frozen=True)
class ClosenessBound:
    raw: float
    clamped: float
    horizon_independent: bool

    @property
    def vacuous(self) -> bool:
        return self.raw >= 1.0


def closeness_bound(S_at_init: float, alpha: float, psi: float, T: int, eps: float) -> ClosenessBound:
    """Upper bound on P{sup_{k<=T} |x(k) - xh(k)| >= eps}: ``(S + psi T) / (alpha eps^2)``."""
    if not alpha > 0:
        raise InvalidParameter("alpha must be positive")
    if not eps > 0:
        raise InvalidParameter("eps must be positive")
    if psi < 0 or T < 0 or S_at_init < 0:
        raise InvalidParameter("S_at_init, psi and T must be non-negative")
    raw = (S_at_init + psi * T) / (alpha * eps * eps)
    return ClosenessBound(float(raw), float(min(raw, 1.0)), psi == 0)


@dataclass
class GuaranteeReport:
    p_hat: float
    delta_raw: float
    rho_raw: float
    betas: tuple
    epsilon: float | None = None
    horizon: int | None = None
    lower_bound_raw: float = field(init=False)
    lower_bound: float = field(init=False)
    confidence_raw: float = field(init=False)
    confidence: float = field(init=False)
    flags: list = field(init=False)

    def __post_init__(self):
        self.betas = tuple(float(b) for b in self.betas)
        self.lower_bound_raw = self.p_hat - self.delta_raw - self.rho_raw
        self.lower_bound = float(min(max(0.0, self.lower_bound_raw), self.p_hat))
        self.confidence_raw = 1.0 - sum(self.betas)
        self.confidence = float(min(1.0, max(0.0, self.confidence_raw)))
        flags = []
        if self.delta_raw >= 1.0:
            flags.append("VACUOUS_DELTA")
        if self.rho_raw >= 1.0:
            flags.append("VACUOUS_RHO")
        if self.lower_bound_raw <= 0.0:
            flags.append("VACUOUS_BOUND")
        if self.confidence_raw <= 0.0:
            flags.append("VACUOUS_CONFIDENCE")
        self.flags = flags

    @property
    def delta(self) -> float:
        return float(min(1.0, max(0.0, self.delta_raw)))

    @property
    def rho(self) -> float:
        return float(min(1.0, max(0.0, self.rho_raw)))

    def to_dict(self) -> dict:
        return {
            "p_hat": self.p_hat, "delta_raw": self.delta_raw, "delta": self.delta,
            "rho_raw": self.rho_raw, "rho": self.rho, "epsilon": self.epsilon,
            "horizon": self.horizon, "betas": list(self.betas),
            "lower_bound_raw": self.lower_bound_raw, "lower_bound": self.lower_bound,
            "confidence_raw": self.confidence_raw, "confidence": self.confidence,
            "flags": list(self.flags),
        }


def compose_guarantee(p_hat, delta, rho, beta1=0.0, beta2=0.0, beta3=0.0, *,
                      epsilon=None, horizon=None) -> GuaranteeReport:
    """Lower bound ``max(0, p_hat - delta - rho)`` at confidence ``1 - sum(betas)``."""
    if not 0.0 <= p_hat <= 1.0:
        raise InvalidParameter("p_hat must lie in [0, 1]")
    return GuaranteeReport(float(p_hat), float(delta), float(rho), (beta1, beta2, beta3),
                           epsilon, horizon)


@dataclass(frozen=True)
class ConditionSlacks:
    g1: np.ndarray
    g2: np.ndarray

    @property
    def worst_g1(self) -> float:
        return float(np.max(self.g1))

    @property
    def worst_g2(self) -> float:
        return float(np.max(self.g2))

    @property
    def worst(self) -> float:
        return max(self.worst_g1, self.worst_g2)


def check_conditions_on_points(t: SbfTemplate, x, xh, next_x, next_xh, mu: float = 0.0) -> ConditionSlacks:
    """Empirical slacks of the two SBF conditions at given test points.

    ``x``, ``xh``: ``(P, n)`` concrete and abstract states.  ``next_x``,
    ``next_xh``: ``(P, M, n)`` successors drawn under common noise (the
    abstract ones already projected).  Returns
    ``g1 = alpha |x - xh|^2 - S(x, xh)`` and
    ``g2 = mean_z S(next_x, next_xh) - S(x, xh) - psi + mu`` per point.
    This is an a-posteriori sanity check, not a proof.
    """
    x, xh = np.atleast_2d(x), np.atleast_2d(xh)
    s_now = evaluate(t, x, xh)
    g1 = t.alpha * np.sum((x - xh) ** 2, axis=-1) - s_now
    g2 = evaluate(t, next_x, next_xh).mean(axis=-1) - s_now - t.psi + mu
    return ConditionSlacks(g1, g2)


def sample_condition_slacks(t: SbfTemplate, sys, grid, n_points: int, M: int, seed: int,
                            mu: float = 0.0) -> ConditionSlacks:
    """Draw fresh ``(x, xbar, u)`` test triples and evaluate :func:`check_conditions_on_points`."""
    from .blackbox import NoiseStream

    rng = np.random.default_rng(seed)
    x = sys.state_box.lo_array + rng.random((n_points, sys.n)) * sys.state_box.widths
    cells = rng.integers(grid.n_cells, size=n_points)
    u = rng.integers(len(sys.inputs), size=n_points)
    xh = grid.centers[cells]
    w = NoiseStream(seed, ("slack",), sys.noise_dim, sys.noise_dist).draw(0, n_points * M)
    w = w.reshape(n_points, M, sys.noise_dim)
    nx = sys.transition(x[:, None, :], u[:, None], w)
    nxh = grid.project_clipped(sys.transition(xh[:, None, :], u[:, None], w)).point
    return check_conditions_on_points(t, x, xh, nx, nxh, mu)
