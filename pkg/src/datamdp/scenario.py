"""Scenario program for SBF synthesis: sample sizes, Lipschitz bounds,
constraint assembly and the certification verdict.

Decision variables are laid out as ``[alpha, psi, q_1..q_r, upsilon]``.
For every sampled state ``x_i``, representative point ``xbar`` and input
``u`` two rows are emitted::

    g1:  alpha |x_i - xbar|^2 - S(q, x_i, xbar)                   - upsilon <= 0
    g2:  mean_z S(q, f(x_i,u,w_z), fhat(xbar,u,w_z)) - S(q, x_i, xbar)
         - psi + mu                                               - upsilon <= 0

where ``fhat`` snaps the successor of ``xbar`` to its cell center and the
``w_z`` are shared between the two successors (paired noise).
"""
from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.special import logsumexp, gammaln, xlog1py, xlogy

from . import lp
from .blackbox import INDEPENDENT, BlackBoxSystem, NoiseStream, sample_states
from .errors import InsufficientSamples, InvalidParameter, SamplingError, Unsatisfiable
from .grid import Grid
from .sbf import Basis, SbfTemplate

log = logging.getLogger(__name__)

G1, G2 = 0, 1
CERTIFIED = "CERTIFIED"
INCONCLUSIVE = "INCONCLUSIVE"
UNSOUND_SCALE = "UNSOUND_SCALE"

# relative slack for ceil() of a float ratio that is an integer up to rounding
_CEIL_RTOL = 1e-12


def _ceil(ratio: float) -> int:
    return max(1, math.ceil(ratio * (1.0 - _CEIL_RTOL)))


def log_binomial_tail(N: int, eps: float, c: int) -> float:
    """``log sum_{i<c} C(N,i) eps^i (1-eps)^(N-i)``, exact in log space."""
    i = np.arange(min(c, N + 1))
    terms = (gammaln(N + 1) - gammaln(i + 1) - gammaln(N - i + 1)
             + xlogy(i, eps) + xlog1py(N - i, -eps))
    return float(logsumexp(terms))


def min_samples_N(eps2: float, beta2: float, c: int) -> int:
    """Smallest ``N >= 1`` whose binomial tail ``P(Bin(N, eps2) < c)`` is ``<= beta2``."""
    if not 0.0 <= eps2 <= 1.0:
        raise InvalidParameter("eps2 must lie in [0, 1]")
    if not 0.0 < beta2 <= 1.0:
        raise InvalidParameter("beta2 must lie in (0, 1]")
    if int(c) < 1:
        raise InvalidParameter("c must be >= 1")
    c = int(c)
    log_beta = math.log(beta2)

    def ok(N):
        return log_binomial_tail(N, eps2, c) <= log_beta

    if eps2 == 0.0:
        if beta2 >= 1.0:
            return 1
        raise Unsatisfiable("eps2 = 0: the tail equals 1 for every N")
    # the tail is nonincreasing in N: double, then bisect
    hi = 1
    while not ok(hi):
        hi *= 2
        if hi > 1 << 62:
            raise Unsatisfiable("no N below 2^62 meets the requested confidence")
    lo = hi // 2 + 1 if hi > 1 else 1
    while lo < hi:
        mid = (lo + hi) // 2
        if ok(mid):
            hi = mid
        else:
            lo = mid + 1
    return lo


def min_realizations_M(Q: float, beta1: float, mu: float) -> int:
    """Noise realizations needed for the empirical mean: ``ceil(Q / (beta1 mu^2))``."""
    if not Q > 0:
        raise InvalidParameter("Q must be positive")
    if not 0.0 < beta1 <= 1.0:
        raise InvalidParameter("beta1 must lie in (0, 1]")
    if not mu > 0:
        raise InvalidParameter("mu must be positive")
    return _ceil(Q / (beta1 * mu * mu))


def min_transition_samples_G(eps_bar: float, beta_bar: float) -> int:
    """Samples per (state, input) for +-eps_bar frequencies at confidence 1 - beta_bar."""
    if not 0.0 < eps_bar <= 1.0:
        raise InvalidParameter("eps_bar must lie in (0, 1]")
    if not 0.0 < beta_bar < 1.0:
        raise InvalidParameter("beta_bar must lie in (0, 1)")
    return _ceil(1.0 / (4.0 * beta_bar * eps_bar * eps_bar))


def eps2_from(eps1: float, L_g: float, n: int) -> float:
    if not L_g > 0:
        raise InvalidParameter("L_g must be positive")
    if not 0.0 <= eps1 <= 1.0 or eps1 > L_g:
        raise InvalidParameter("eps1 must lie in [0, 1] and not exceed L_g")
    return (eps1 / L_g) ** n


@dataclass(frozen=True)
class LipschitzBound:
    dynamics_term: float
    quadratic_term: float

    @property
    def L_g(self) -> float:
        return max(self.dynamics_term, self.quadratic_term)


def _check_nonneg(**kw):
    for k, v in kw.items():
        if v < 0:
            raise InvalidParameter(f"{k} must be non-negative")


def lipschitz_linear(L1, L2, h, h_hat, eta, lam_min, lam_max) -> LipschitzBound:
    """Bound for ``x' = A x + B u + w`` with ``|A| <= L1``, ``|B| <= L2``,
    ``|x| <= h`` on the box and ``|u| <= h_hat``, quadratic SBF with
    eigenvalues ``lam_min <= lam_max``."""
    _check_nonneg(L1=L1, L2=L2, h=h, h_hat=h_hat, eta=eta, lam_max=lam_max)
    if lam_min > lam_max:
        raise InvalidParameter("lam_min must not exceed lam_max")
    dyn = 2 * lam_max * (2 * L1 ** 2 * h + 2 * L1 * L2 * h_hat + L1 * eta + 2 * h)
    return LipschitzBound(dyn, 4 * h * (lam_min + lam_max))


def lipschitz_nonlinear(Lf, Lx, h, eta, lam_min, lam_max) -> LipschitzBound:
    """Bound for ``x' = f(x, u) + w`` with ``|f| <= Lf`` and ``|df/dx| <= Lx``."""
    _check_nonneg(Lf=Lf, Lx=Lx, h=h, eta=eta, lam_max=lam_max)
    if lam_min > lam_max:
        raise InvalidParameter("lam_min must not exceed lam_max")
    dyn = 2 * lam_max * (2 * Lf * Lx + Lf * eta + 2 * h)
    return LipschitzBound(dyn, 4 * h * (lam_min + lam_max))


@dataclass(frozen=True)
class ScenarioConfig:
    eps1: float
    beta1: float
    beta2: float
    mu: float
    L_g: float
    n: int
    c: int
    Q: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.eps1 <= 1.0:
            raise InvalidParameter("eps1 must lie in [0, 1]")
        if not 0.0 < self.beta1 <= 1.0:
            raise InvalidParameter("beta1 must lie in (0, 1]")
        if not 0.0 <= self.beta2 <= 1.0:
            raise InvalidParameter("beta2 must lie in [0, 1]")
        if self.mu < 0:
            raise InvalidParameter("mu must be non-negative")
        if self.Q is not None and not self.Q > 0:
            raise InvalidParameter("Q must be positive")
        if self.c < 1 or self.n < 1:
            raise InvalidParameter("c and n must be >= 1")
        eps2_from(self.eps1, self.L_g, self.n)

    @property
    def eps2(self) -> float:
        return eps2_from(self.eps1, self.L_g, self.n)

    @property
    def N(self) -> int:
        return min_samples_N(self.eps2, self.beta2, self.c)

    @property
    def M(self) -> int | None:
        if self.Q is None or self.mu == 0:
            return None
        return min_realizations_M(self.Q, self.beta1, self.mu)

    def to_dict(self) -> dict:
        return {"eps1": self.eps1, "beta1": self.beta1, "beta2": self.beta2, "mu": self.mu,
                "L_g": self.L_g, "n": self.n, "c": self.c, "Q": self.Q}


def variable_names(basis: Basis) -> tuple:
    return ("alpha", "psi", *[f"q{j + 1}" for j in range(basis.r)], "upsilon")


@dataclass
class ScenarioProgram:
    """Assembled rows of the scenario program plus their provenance.

    ``provenance[k] = (sample i, cell index, input index, kind)`` with kind
    0 for g1 rows and 1 for g2 rows.
    """

    basis: Basis
    A: np.ndarray
    const: np.ndarray
    provenance: np.ndarray
    n_samples: int
    M: int
    mu: float
    names: tuple = field(init=False)

    def __post_init__(self):
        self.names = variable_names(self.basis)

    @property
    def n_rows(self) -> int:
        return self.const.size

    def to_linear_program(self, lower, upper) -> lp.LinearProgram:
        return lp.LinearProgram(self.A, self.const, lower, upper, objective=-1, names=self.names)

    def subset(self, n_samples: int) -> "ScenarioProgram":
        """Rows of the first ``n_samples`` samples (rows are sorted by sample)."""
        k = int(np.searchsorted(self.provenance[:, 0], n_samples))
        return ScenarioProgram(self.basis, self.A[:k], self.const[:k], self.provenance[:k],
                               n_samples, self.M, self.mu)

    def dump(self, path, lower, upper) -> None:
        lp.write_text(path, self.to_linear_program(lower, upper), self.provenance)


def _rows_for_sample(i, x_i, sys, grid, basis, centers, M, mu, noise_abs_key, seed):
    C, m, n = grid.n_cells, len(sys.inputs), sys.n
    stream = NoiseStream(seed, ("scp", i), sys.noise_dim, sys.noise_dist)
    w = stream.draw(0, C * m * M).reshape(C, m, M, sys.noise_dim)
    if noise_abs_key is None:
        w_abs = w
    else:
        w_abs = stream.substream(noise_abs_key).draw(0, C * m * M).reshape(C, m, M, sys.noise_dim)
    u_idx = np.arange(m)[None, :, None]
    nxt = sys.transition(x_i[None, None, None, :], u_idx, w)
    nxt_abs = grid.project_clipped(sys.transition(centers[:, None, None, :], u_idx, w_abs)).point
    mean_b = basis.values(nxt - nxt_abs).mean(axis=2)  # (C, m, r)
    d0 = x_i[None, :] - centers
    b0 = basis.values(d0)  # (C, r)
    r = basis.r
    v = r + 3
    rows = np.zeros((C, m, 2, v))
    const = np.zeros((C, m, 2))
    rows[:, :, 0, 0] = np.sum(d0 * d0, axis=-1)[:, None]
    rows[:, :, 0, 2:2 + r] = -b0[:, None, :]
    rows[:, :, 1, 1] = -1.0
    rows[:, :, 1, 2:2 + r] = mean_b - b0[:, None, :]
    rows[:, :, :, -1] = -1.0
    const[:, :, 1] = mu
    prov = np.empty((C, m, 2, 4), dtype=np.int64)
    prov[..., 0] = i
    prov[..., 1] = np.arange(C)[:, None, None]
    prov[..., 2] = np.arange(m)[None, :, None]
    prov[..., 3] = np.array([G1, G2])[None, None, :]
    if not np.all(np.isfinite(rows)):
        raise SamplingError(f"non-finite constraint coefficients for sample {i}", sample=i)
    return rows.reshape(-1, v), const.reshape(-1), prov.reshape(-1, 4)


def build_scp(sys: BlackBoxSystem, grid: Grid, basis: Basis, N: int, M: int, mu: float, seed: int,
              *, workers: int = 1, states=None) -> ScenarioProgram:
    """Sample ``N`` states and assemble both rows for every (sample, cell, input).

    Row order is lexicographic in (sample, cell, input, g1/g2) and the noise
    for sample ``i`` comes from a stream keyed by ``i`` alone, so the output
    does not depend on ``workers`` and the program for ``N`` samples is a
    prefix of the program for any larger ``N``.
    """
    if M < 1:
        raise InvalidParameter("M must be >= 1")
    if mu < 0:
        raise InvalidParameter("mu must be non-negative")
    if basis.n != sys.n:
        raise InvalidParameter("basis dimension does not match the system")
    noise_abs_key = None
    if sys.noise_mode == INDEPENDENT:
        warnings.warn("independent noise mode: successors of x_i and xbar use different noise "
                      "draws, which the coupled expectation does not cover", stacklevel=2)
        noise_abs_key = "abstract"
    X = sample_states(sys, N, seed) if states is None else np.asarray(states, dtype=float)
    centers = grid.centers

    def work(i):
        try:
            return _rows_for_sample(i, X[i], sys, grid, basis, centers, M, mu, noise_abs_key, seed)
        except SamplingError:
            raise
        except Exception as exc:
            raise SamplingError(f"sampler failed for sample {i}: {exc}", sample=i) from exc

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(work, range(len(X))))
    else:
        parts = [work(i) for i in range(len(X))]
    A = np.concatenate([p[0] for p in parts])
    const = np.concatenate([p[1] for p in parts])
    prov = np.concatenate([p[2] for p in parts])
    log.info("assembled %d rows from %d samples", const.size, len(X))
    return ScenarioProgram(basis, A, const, prov, len(X), M, mu)


def default_bounds(basis: Basis, bounds: dict | None = None, freeze: dict | None = None,
                   alpha_min: float = 1e-6, limit: float = 1e6):
    """Box bounds per variable name, with frozen variables pinned.

    ``bounds`` maps a name (``alpha``, ``psi``, ``q1``.., ``upsilon``, or
    ``q`` for all coefficients) to ``(lo, hi)``.
    """
    names = variable_names(basis)
    lower = np.full(len(names), -limit)
    upper = np.full(len(names), limit)
    lower[0] = alpha_min
    lower[1] = 0.0
    for name, (lo, hi) in (bounds or {}).items():
        targets = [k for k, nm in enumerate(names) if nm == name or (name == "q" and nm.startswith("q"))]
        if not targets:
            raise InvalidParameter(f"unknown decision variable {name!r}")
        for k in targets:
            lower[k], upper[k] = lo, hi
    for name, value in (freeze or {}).items():
        if name not in names:
            raise InvalidParameter(f"unknown decision variable {name!r}")
        k = names.index(name)
        lower[k] = upper[k] = value
    return lower, upper


def free_variable_count(lower, upper) -> int:
    return int(np.sum(np.asarray(lower) < np.asarray(upper)))


def template_upsilon(p: lp.LinearProgram, x) -> float:
    """Smallest ``upsilon`` making every row hold at the other coordinates of ``x``.

    Assumes the upsilon column is ``-1`` in every row, as assembled here.
    """
    x = np.asarray(x, dtype=float)
    if p.n_rows == 0:
        return float(p.lower[-1])
    worst = float(np.max(p.A[:, :-1] @ x[:-1] + p.const))
    return max(worst, float(p.lower[-1]))


def solve_scp(p: lp.LinearProgram, *, tol: float = 1e-9, maximize_alpha: bool = True):
    """Minimize upsilon, then (optionally) maximize alpha among near-optimal points.

    The first pass alone leaves alpha at whatever vertex the solver lands on,
    usually its lower bound, which makes the closeness bound uselessly large.
    The second pass caps upsilon at the first optimum plus ``tol`` and pushes
    alpha up.  The returned solution's ``value`` is recomputed from the final
    point by :func:`template_upsilon`, so it is exact for the reported template.

    Returns ``(solution, stats)``.
    """
    first = lp.solve(p, tol)
    stats = {"status": first.status, "iterations": first.iterations,
             "working_set": int(first.working_set.size), "dual_bound": first.dual_bound,
             "upsilon_lp": first.value, "max_violation": first.max_violation, "n_rows": p.n_rows,
             "n_vars": p.n_vars, "alpha_refined": False}
    if not first.optimal:
        return first, stats
    best = first
    if maximize_alpha and p.lower[0] < p.upper[0]:
        upper = p.upper.copy()
        upper[-1] = min(upper[-1], first.value + tol * (1.0 + abs(first.value)))
        q = lp.LinearProgram(p.A, p.const, p.lower, upper, objective=0, names=p.names, maximize=True)
        second = lp.solve(q, tol)
        stats.update(alpha_iterations=second.iterations, alpha_status=second.status)
        if second.optimal:
            best = second
            stats["alpha_refined"] = True
    x = best.x.copy()
    x[-1] = template_upsilon(p, x)
    stats["upsilon_template"] = float(x[-1])
    return replace(first, x=x, value=float(x[-1])), stats


@dataclass
class SbfCertificate:
    template: SbfTemplate | None
    upsilon: float
    eps1: float
    beta1: float
    beta2: float
    verdict: str
    n_samples: int
    N_required: int
    M: int
    M_required: int | None
    mu: float
    scenario: dict = field(default_factory=dict)

    @property
    def margin(self) -> float:
        return self.upsilon + self.eps1

    @property
    def confidence(self) -> float:
        return max(0.0, 1.0 - self.beta1 - self.beta2)

    def to_dict(self) -> dict:
        return {
            "template": None if self.template is None else self.template.to_dict(),
            "upsilon": self.upsilon, "eps1": self.eps1, "beta1": self.beta1, "beta2": self.beta2,
            "verdict": self.verdict, "margin": self.margin, "confidence": self.confidence,
            "n_samples": self.n_samples, "N_required": self.N_required, "M": self.M,
            "M_required": self.M_required, "mu": self.mu, "scenario": dict(self.scenario),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SbfCertificate":
        t = None if d["template"] is None else SbfTemplate.from_dict(d["template"])
        return cls(t, d["upsilon"], d["eps1"], d["beta1"], d["beta2"], d["verdict"], d["n_samples"],
                   d["N_required"], d["M"], d["M_required"], d["mu"], dict(d.get("scenario", {})))


def certify(program: ScenarioProgram, cfg: ScenarioConfig, solution: lp.LpSolution,
            *, override_samples: bool = False) -> SbfCertificate:
    """Verdict: CERTIFIED iff ``upsilon* + eps1 <= 0``.

    Too few samples (or noise realizations, when ``Q`` is known) raises
    :class:`InsufficientSamples` unless ``override_samples`` is set, in which
    case the verdict is downgraded to UNSOUND_SCALE.
    """
    if not solution.optimal:
        raise InvalidParameter(f"LP solution is not optimal ({solution.status})")
    N_req, M_req = cfg.N, cfg.M
    short = program.n_samples < N_req or (M_req is not None and program.M < M_req)
    if short and not override_samples:
        raise InsufficientSamples(
            f"have N={program.n_samples}, M={program.M}; need N>={N_req}"
            + ("" if M_req is None else f", M>={M_req}"))
    x = solution.x
    r = program.basis.r
    template = SbfTemplate(program.basis, tuple(x[2:2 + r]), float(x[0]), float(max(x[1], 0.0)))
    upsilon = float(solution.value)
    if short:
        verdict = UNSOUND_SCALE
    else:
        verdict = CERTIFIED if upsilon + cfg.eps1 <= 0 else INCONCLUSIVE
    return SbfCertificate(template, upsilon, cfg.eps1, cfg.beta1, cfg.beta2, verdict,
                          program.n_samples, N_req, program.M, M_req, program.mu, cfg.to_dict())


def estimate_Q_pilot(sys: BlackBoxSystem, grid: Grid, basis: Basis, q_ref, n_pilot: int = 64,
                     M_pilot: int = 200, seed: int = 0, inflate: float = 2.0) -> float:
    """Heuristic variance bound: largest sample variance of ``S(q_ref, f, fhat)``
    over random pilot triples, times ``inflate``.  Not a certified bound."""
    rng = np.random.default_rng(seed)
    X = sample_states(sys, n_pilot, seed + 1)
    cells = rng.integers(grid.n_cells, size=n_pilot)
    u = rng.integers(len(sys.inputs), size=n_pilot)
    w = NoiseStream(seed, ("q-pilot",), sys.noise_dim, sys.noise_dist).draw(0, n_pilot * M_pilot)
    w = w.reshape(n_pilot, M_pilot, sys.noise_dim)
    nx = sys.transition(X[:, None, :], u[:, None], w)
    nxh = grid.project_clipped(sys.transition(grid.centers[cells][:, None, :], u[:, None], w)).point
    s = basis.values(nx - nxh) @ np.asarray(q_ref, dtype=float)
    return float(inflate * np.max(np.var(s, axis=1, ddof=1)))
