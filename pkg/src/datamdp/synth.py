"""Finite-horizon safety synthesis on (interval) MDPs and closed-loop simulation."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .blackbox import BlackBoxSystem, NoiseStream, StateBox
from .errors import InvalidInterval, InvalidParameter, InvalidState
from .estimator import FiniteMdp, IntervalMdp
from .grid import Grid, deflate


@dataclass(frozen=True)
class SafetySpec:
    safe_box: StateBox
    horizon: int
    epsilon: float = 0.0

    def __post_init__(self):
        if self.horizon < 0:
            raise InvalidParameter("horizon must be non-negative")
        if self.epsilon < 0:
            raise InvalidParameter("epsilon must be non-negative")

    def safe_cells(self, grid: Grid) -> np.ndarray:
        """Cells whose center lies in the (deflated) safe box."""
        lo, hi = self.safe_box.lo_array, self.safe_box.hi_array
        if np.any(lo < grid.box.lo_array) or np.any(hi > grid.box.hi_array):
            raise InvalidParameter("safe box must lie inside the state box")
        return deflate(self.safe_box, self.epsilon, grid.box).contains(grid.centers)

    def straddling_cells(self, grid: Grid) -> int:
        """Number of cells that intersect the deflated safe set only partially."""
        dset = deflate(self.safe_box, self.epsilon, grid.box)
        n = 0
        for i in range(grid.n_cells):
            lo, hi = grid.cell_bounds(i)
            inside = np.all(lo >= dset.lo) and np.all(hi <= dset.hi)
            overlap = np.all(hi > dset.lo) and np.all(lo < dset.hi)
            n += bool(overlap and not inside)
        return n

    def to_dict(self) -> dict:
        return {"safe_box": self.safe_box.to_list(), "horizon": self.horizon, "epsilon": self.epsilon}

    @classmethod
    def from_dict(cls, d) -> "SafetySpec":
        return cls(StateBox.from_bounds(d["safe_box"]), int(d["horizon"]), float(d["epsilon"]))


@dataclass
class ValueTable:
    V: np.ndarray  # (T + 1, n_cells)
    notes: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.any(self.V < -1e-12) or np.any(self.V > 1 + 1e-12):
            raise InvalidParameter("value table left [0, 1]")


@dataclass
class Policy:
    table: np.ndarray  # (T, n_cells) input indices

    @property
    def horizon(self) -> int:
        return self.table.shape[0]

    def action(self, k: int, cell: int) -> int:
        return int(self.table[k, cell])


def bellman_backup(T: np.ndarray, v_next: np.ndarray):
    """``max_u sum_j T[i,u,j] v_next[j]``; ties go to the lowest input index."""
    q = T @ v_next
    best = np.argmax(q, axis=1)
    return q[np.arange(q.shape[0]), best], best


def safety_value_iteration(mdp: FiniteMdp, spec: SafetySpec) -> tuple[ValueTable, Policy]:
    safe = spec.safe_cells(mdp.grid).astype(float)
    C = mdp.grid.n_cells
    T = spec.horizon
    V = np.zeros((T + 1, C))
    pol = np.zeros((T, C), dtype=np.int64)
    V[T] = safe
    for k in range(T - 1, -1, -1):
        v_next = np.append(V[k + 1], 0.0)
        val, best = bellman_backup(mdp.T, v_next)
        V[k] = safe * np.clip(val, 0.0, 1.0)
        pol[k] = best
    return ValueTable(V, {"safe_cells": int(safe.sum()), "straddling": spec.straddling_cells(mdp.grid)}), Policy(pol)


def repair_intervals(lower, upper):
    """Clip bounds to [0, 1]; returns ``(lower, upper, n_repaired)``.

    Raises :class:`InvalidInterval` if some row admits no distribution.
    """
    lo = np.clip(lower, 0.0, 1.0)
    hi = np.clip(upper, 0.0, 1.0)
    changed = np.any((lo != lower) | (hi != upper), axis=-1)
    if np.any(lo > hi):
        raise InvalidInterval("interval with lower > upper")
    slo, shi = lo.sum(axis=-1), hi.sum(axis=-1)
    if np.any(slo > 1 + 1e-12) or np.any(shi < 1 - 1e-12):
        bad = np.argwhere((slo > 1 + 1e-12) | (shi < 1 - 1e-12))[0]
        raise InvalidInterval(f"row {tuple(bad.tolist())} admits no distribution")
    return lo, hi, int(changed.sum())


def worst_case_expectation(lower, upper, v) -> np.ndarray:
    """``min sum_j p_j v_j`` over ``lower <= p <= upper``, ``sum p = 1``.

    Greedy: start from the lower bounds and pour the remaining mass into
    successors in ascending order of ``v``, each up to its upper bound.
    ``lower``/``upper`` have shape ``(..., S)``, ``v`` has shape ``(S,)``.
    """
    order = np.argsort(v, kind="stable")
    lo = lower[..., order]
    cap = upper[..., order] - lo
    rest = 1.0 - lo.sum(axis=-1, keepdims=True)
    before = np.cumsum(cap, axis=-1) - cap
    alloc = np.clip(rest - before, 0.0, cap)
    return ((lo + alloc) * v[order]).sum(axis=-1)


def robust_safety_value_iteration(imdp: IntervalMdp, spec: SafetySpec) -> tuple[ValueTable, Policy]:
    """Pessimistic value iteration: nature picks the worst distribution in the intervals."""
    lo, hi, repaired = repair_intervals(imdp.lower, imdp.upper)
    safe = spec.safe_cells(imdp.grid).astype(float)
    C = imdp.grid.n_cells
    T = spec.horizon
    V = np.zeros((T + 1, C))
    pol = np.zeros((T, C), dtype=np.int64)
    V[T] = safe
    for k in range(T - 1, -1, -1):
        q = worst_case_expectation(lo, hi, np.append(V[k + 1], 0.0))
        best = np.argmax(q, axis=1)
        V[k] = safe * np.clip(q[np.arange(C), best], 0.0, 1.0)
        pol[k] = best
    notes = {"safe_cells": int(safe.sum()), "repaired_rows": repaired,
             "straddling": spec.straddling_cells(imdp.grid)}
    return ValueTable(V, notes), Policy(pol)


@dataclass
class SimulationResult:
    states: np.ndarray  # (R, T + 1, n); NaN after leaving the box
    inputs: np.ndarray  # (R, T) input indices; -1 once absorbed
    safe: np.ndarray  # (R,) bool

    @property
    def frequency(self) -> float:
        return float(np.mean(self.safe))


def closed_loop_sim(sys: BlackBoxSystem, grid: Grid, policy: Policy, spec: SafetySpec,
                    runs: int, seed: int, x0) -> SimulationResult:
    """Run the lookup-table controller on the concrete system.

    The noise of run ``r`` at step ``k`` is realization ``k`` of a stream
    keyed by ``r``, so two policies simulated with the same seed see
    identical noise.  A run is safe if every state up to the horizon stays in
    the (undeflated) safe box.
    """
    T = spec.horizon
    if policy.horizon < T:
        raise InvalidParameter("policy horizon shorter than the specification horizon")
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (runs, sys.n))
    states = np.full((runs, T + 1, sys.n), np.nan)
    inputs = np.full((runs, T), -1, dtype=np.int64)
    safe = np.ones(runs, dtype=bool)
    for r in range(runs):
        stream = NoiseStream(seed, ("sim", r), sys.noise_dim, sys.noise_dist)
        w = stream.draw(0, max(T, 1))
        x = x0[r]
        states[r, 0] = x
        for k in range(T + 1):
            if not spec.safe_box.contains(x):
                safe[r] = False
            if k == T:
                break
            cell = int(grid.project(x).index)
            if cell == grid.absorbing:
                break
            u = policy.action(k, cell)
            inputs[r, k] = u
            x = sys.transition(x, u, w[k])
            states[r, k + 1] = x
    return SimulationResult(states, inputs, safe)


def compare_trajectories(traj_a, traj_b) -> np.ndarray:
    """Euclidean error ``|x_a(k) - x_b(k)|`` per step (and per run, if batched)."""
    a = np.asarray(traj_a, dtype=float)
    b = np.asarray(traj_b, dtype=float)
    if a.shape != b.shape:
        raise InvalidState(f"trajectory shapes differ: {a.shape} vs {b.shape}")
    return np.linalg.norm(a - b, axis=-1)


def write_trajectories_csv(path, result: SimulationResult, sys: BlackBoxSystem) -> None:
    R, K, n = result.states.shape
    mbar = sys.inputs.dim
    in_cols = ["input"] if mbar == 1 else [f"input_{j + 1}" for j in range(mbar)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "k", *[f"x_{d + 1}" for d in range(n)], *in_cols, "safe"])
        for r in range(R):
            for k in range(K):
                x = result.states[r, k]
                u = result.inputs[r, k] if k < K - 1 else -1
                uval = [""] * mbar if u < 0 else [repr(float(v)) for v in sys.inputs[u]]
                w.writerow([r, k, *[repr(float(v)) for v in x], *uval, int(result.safe[r])])


def write_errors_csv(path, errors: np.ndarray) -> None:
    errors = np.atleast_2d(errors)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["run", "k", "error"])
        for r in range(errors.shape[0]):
            for k in range(errors.shape[1]):
                w.writerow([r, k, repr(float(errors[r, k]))])
