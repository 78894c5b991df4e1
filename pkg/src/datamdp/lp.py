"""Cutting-plane solver for ``min t`` over many affine rows and few variables.

Programs have the form

    minimize   x[obj]            (or maximize)
    subject to A x + const <= 0      (row-wise)
               lower <= x <= upper

with millions of rows but at most a few dozen variables.  The solver keeps
a small working set of rows, solves the dense subproblem exactly, adds the
most violated rows and repeats until no row is violated beyond tolerance.
The subproblem is a relaxation, so its optimum is a lower bound; a point
that is feasible for every row is therefore optimal.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .errors import InvalidParameter, SolverFailure

OPTIMAL = "Optimal"
INFEASIBLE = "Infeasible"
UNBOUNDED = "Unbounded"

MAX_VARIABLES = 64


@dataclass
class LinearProgram:
    A: np.ndarray
    const: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    objective: int = -1
    names: tuple = ()
    maximize: bool = False

    def __post_init__(self):
        self.A = np.ascontiguousarray(np.atleast_2d(np.asarray(self.A, dtype=float)))
        self.const = np.asarray(self.const, dtype=float).reshape(-1)
        self.lower = np.asarray(self.lower, dtype=float).reshape(-1)
        self.upper = np.asarray(self.upper, dtype=float).reshape(-1)
        v = self.lower.size
        if self.A.size == 0:
            self.A = self.A.reshape(0, v)
        if v > MAX_VARIABLES:
            raise InvalidParameter(f"at most {MAX_VARIABLES} variables supported")
        if self.A.shape != (self.const.size, v) or self.upper.size != v:
            raise InvalidParameter("inconsistent LP dimensions")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.const))):
            raise InvalidParameter("LP rows must be finite")
        if np.any(self.lower > self.upper):
            raise InvalidParameter("variable bounds require lower <= upper")
        self.objective = int(self.objective) % v
        if not self.names:
            self.names = tuple(f"x{j}" for j in range(v))

    @property
    def n_vars(self) -> int:
        return self.lower.size

    @property
    def n_rows(self) -> int:
        return self.const.size

    def residuals(self, x) -> np.ndarray:
        """``A x + const``; positive entries are violations."""
        return self.A @ np.asarray(x, dtype=float) + self.const

    def thresholds(self, x, tol) -> np.ndarray:
        return tol * (1.0 + np.abs(self.A) @ np.abs(x) + np.abs(self.const))

    @property
    def sign(self) -> float:
        return -1.0 if self.maximize else 1.0

    def take_rows(self, idx) -> "LinearProgram":
        return LinearProgram(self.A[idx], self.const[idx], self.lower, self.upper,
                             self.objective, self.names, self.maximize)

    def append_rows(self, A, const) -> "LinearProgram":
        return LinearProgram(np.vstack([self.A, np.atleast_2d(A)]),
                             np.concatenate([self.const, np.atleast_1d(const)]),
                             self.lower, self.upper, self.objective, self.names, self.maximize)


@dataclass
class LpSolution:
    x: np.ndarray
    value: float
    status: str
    active_rows: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    max_violation: float = 0.0
    iterations: int = 0
    working_set: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    dual_bound: float = -np.inf

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


def _subproblem(p: LinearProgram, W: np.ndarray):
    c = np.zeros(p.n_vars)
    c[p.objective] = p.sign
    bounds = [(None if not np.isfinite(lo) else lo, None if not np.isfinite(hi) else hi)
              for lo, hi in zip(p.lower, p.upper)]
    kw = {}
    if W.size:
        kw = {"A_ub": p.A[W], "b_ub": -p.const[W]}
    res = linprog(c, bounds=bounds, method="highs",
                  options={"primal_feasibility_tolerance": 1e-10,
                           "dual_feasibility_tolerance": 1e-10}, **kw)
    return res


def _dual_bound(p: LinearProgram, W: np.ndarray, y: np.ndarray) -> float:
    """Lagrangian bound on the objective from multipliers ``y >= 0`` on working rows.

    Valid for any ``y >= 0`` regardless of how it was obtained, so it
    independently certifies that no feasible point beats it.
    """
    c = np.zeros(p.n_vars)
    c[p.objective] = p.sign
    y = np.maximum(y, 0.0)
    red = c + (p.A[W].T @ y if W.size else 0.0)
    box = np.where(red >= 0, red * p.lower, red * p.upper)
    box = np.where(red == 0, 0.0, box)
    bound = float(y @ p.const[W] + box.sum()) if W.size else float(box.sum())
    return p.sign * bound


def _select(viol: np.ndarray, thr: np.ndarray, k: int, exclude: np.ndarray) -> np.ndarray:
    """Up to ``k`` most violated rows; ties broken by lowest index."""
    mask = viol > thr
    mask[exclude] = False
    cand = np.flatnonzero(mask)
    if cand.size > k:
        vals = viol[cand]
        kth = np.partition(vals, cand.size - k)[cand.size - k]
        cand = cand[vals >= kth]
    order = np.lexsort((cand, -viol[cand]))
    return cand[order][:k]


def solve(p: LinearProgram, tol: float = 1e-9, *, max_iter: int = 500, batch: int | None = None) -> LpSolution:
    """Solve ``p`` by constraint generation.

    Deterministic: the working set grows by the ``batch`` most violated rows
    (default ``n_vars + 1``) per iteration, ties broken by row index, and is
    always passed to the subproblem in ascending row order.
    """
    batch = batch or p.n_vars + 1
    W = np.zeros(0, dtype=np.int64)
    for it in range(1, max_iter + 1):
        res = _subproblem(p, W)
        if res.status == 2:
            return LpSolution(np.full(p.n_vars, np.nan), p.sign * np.inf, INFEASIBLE, iterations=it, working_set=W)
        if res.status == 3:
            return LpSolution(np.full(p.n_vars, np.nan), -p.sign * np.inf, UNBOUNDED, iterations=it, working_set=W)
        if res.status != 0:
            raise SolverFailure(f"subproblem failed: {res.message}",
                                {"iteration": it, "working_set": W.tolist(), "status": int(res.status)})
        x = np.clip(res.x, p.lower, p.upper)
        viol = p.residuals(x)
        thr = p.thresholds(x, tol)
        new = _select(viol, thr, batch, W)
        if new.size == 0:
            bad = np.flatnonzero(viol > thr)
            if bad.size:
                raise SolverFailure("working-set rows remain violated beyond tolerance",
                                    {"rows": bad[:20].tolist(), "max_violation": float(viol.max())})
            y = -res.ineqlin.marginals if W.size else np.zeros(0)
            active = W[np.abs(viol[W]) <= thr[W] * 1e3] if W.size else W
            return LpSolution(x, float(x[p.objective]), OPTIMAL, np.sort(active),
                              float(max(0.0, viol.max())) if viol.size else 0.0, it, W,
                              _dual_bound(p, W, y))
        W = np.sort(np.concatenate([W, new]))
    raise SolverFailure("cutting-plane iteration limit reached", {"max_iter": max_iter, "working_set": W.size})


@dataclass
class CrossCheckReport:
    solution_violation: float
    solution_feasible: bool
    improving: np.ndarray
    best_candidate_value: float

    @property
    def ok(self) -> bool:
        return self.solution_feasible and self.improving.size == 0


def cross_check(p: LinearProgram, s: LpSolution, candidates, tol: float = 1e-9) -> CrossCheckReport:
    """Check ``s`` against candidate points: flags candidates that are feasible
    (within ``tol``) and improve on ``s.value`` by more than ``tol``, and whether
    ``s.x`` itself violates any row or bound by more than ``tol``."""
    C = np.atleast_2d(np.asarray(candidates, dtype=float))
    in_box = np.all((C >= p.lower - tol) & (C <= p.upper + tol), axis=1)
    if p.n_rows:
        feas = in_box & np.all(C @ p.A.T + p.const <= tol, axis=1)
    else:
        feas = in_box
    vals = p.sign * C[:, p.objective]
    improving = np.flatnonzero(feas & (vals < p.sign * s.value - tol))
    sv = float(max(0.0, p.residuals(s.x).max())) if p.n_rows else 0.0
    box_v = float(max(0.0, np.max(p.lower - s.x), np.max(s.x - p.upper)))
    best = float(p.sign * vals[feas].min()) if feas.any() else p.sign * np.inf
    return CrossCheckReport(max(sv, box_v), max(sv, box_v) <= tol, improving, best)


# text matrix format: "# datamdp-lp v1" header, "# names ..." / "# lower ..." /
# "# upper ..." / "# objective k" / "# sense min|max" lines, then one row per line:
# coefficients..., const[, provenance ints...]
def write_text(path, p: LinearProgram, provenance=None) -> None:
    with open(path, "w") as fh:
        fh.write("# datamdp-lp v1\n")
        fh.write("# names " + " ".join(p.names) + "\n")
        fh.write("# lower " + " ".join(repr(float(v)) for v in p.lower) + "\n")
        fh.write("# upper " + " ".join(repr(float(v)) for v in p.upper) + "\n")
        fh.write(f"# objective {p.objective}\n")
        fh.write(f"# sense {'max' if p.maximize else 'min'}\n")
        fh.write(f"# provenance {0 if provenance is None else np.shape(provenance)[1]}\n")
        for i in range(p.n_rows):
            parts = [repr(float(v)) for v in p.A[i]] + [repr(float(p.const[i]))]
            if provenance is not None:
                parts += [str(int(v)) for v in provenance[i]]
            fh.write(" ".join(parts) + "\n")


def read_text(path):
    """Inverse of :func:`write_text`; returns ``(program, provenance or None)``."""
    header = {}
    rows = []
    with open(path) as fh:
        first = fh.readline().strip()
        if first != "# datamdp-lp v1":
            raise InvalidParameter(f"not a datamdp LP dump: {first!r}")
        for line in fh:
            if line.startswith("#"):
                key, _, rest = line[1:].strip().partition(" ")
                header[key] = rest.split()
            elif line.strip():
                rows.append(line.split())
    names = tuple(header["names"])
    v = len(names)
    n_prov = int(header["provenance"][0])
    A = np.array([[float(t) for t in r[:v]] for r in rows]).reshape(-1, v)
    const = np.array([float(r[v]) for r in rows])
    prov = np.array([[int(t) for t in r[v + 1:]] for r in rows], dtype=np.int64) if n_prov else None
    lp = LinearProgram(A, const, [float(t) for t in header["lower"]], [float(t) for t in header["upper"]],
                       int(header["objective"][0]), names, header.get("sense", ["min"])[0] == "max")
    return lp, prov
