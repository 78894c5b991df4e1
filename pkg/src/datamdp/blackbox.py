"""Sampling-only access to discrete-time stochastic control systems.

A :class:`BlackBoxSystem` exposes one thing: draw the successor of a state
under an input.  Noise realizations come from :class:`NoiseStream` objects,
which map ``(seed, key, index)`` to a realization deterministically, so that
two one-step transitions can be evaluated under the *same* noise draw
(paired mode).  Built-in simulators (jet engine compressor, linear and
affine systems) are provided for experiments and tests.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import InputNotInSet, InvalidParameter, InvalidState

PAIRED = "paired"
INDEPENDENT = "independent"


@dataclass(frozen=True)
class StateBox:
    """Axis-aligned box ``[lo_d, hi_d]`` in R^n."""

    lo: tuple
    hi: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lo)
        hi = tuple(float(v) for v in self.hi)
        if len(lo) == 0 or len(lo) != len(hi):
            raise InvalidParameter("box bounds must be non-empty and of equal length")
        if not all(np.isfinite(lo) & np.isfinite(hi)):
            raise InvalidParameter("box bounds must be finite")
        if any(a >= b for a, b in zip(lo, hi)):
            raise InvalidParameter(f"box requires lo < hi in every dimension, got {lo}, {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_bounds(cls, bounds) -> "StateBox":
        bounds = [tuple(b) for b in bounds]
        return cls(tuple(b[0] for b in bounds), tuple(b[1] for b in bounds))

    @property
    def n(self) -> int:
        return len(self.lo)

    @property
    def lo_array(self) -> np.ndarray:
        return np.asarray(self.lo)

    @property
    def hi_array(self) -> np.ndarray:
        return np.asarray(self.hi)

    @property
    def widths(self) -> np.ndarray:
        return self.hi_array - self.lo_array

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo_array) & (x <= self.hi_array), axis=-1)

    def clip(self, x) -> np.ndarray:
        return np.clip(x, self.lo_array, self.hi_array)

    def to_list(self):
        return [[a, b] for a, b in zip(self.lo, self.hi)]


class InputSet:
    """Ordered finite set of input vectors."""

    def __init__(self, vectors):
        arr = np.asarray(vectors, dtype=float)
        if arr.ndim == 1:
            arr = arr[:, None]
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise InvalidParameter("input set must be a non-empty list of vectors")
        if len({tuple(row) for row in arr}) != arr.shape[0]:
            raise InvalidParameter("input set contains duplicate vectors")
        arr.setflags(write=False)
        self.vectors = arr

    def __len__(self):
        return self.vectors.shape[0]

    def __getitem__(self, idx):
        return self.vectors[idx]

    def __eq__(self, other):
        return isinstance(other, InputSet) and np.array_equal(self.vectors, other.vectors)

    def __repr__(self):
        return f"InputSet({self.vectors.tolist()})"

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def index_of(self, u) -> int:
        u = np.atleast_1d(np.asarray(u, dtype=float))
        if u.shape != (self.dim,):
            raise InputNotInSet(f"input {u.tolist()} has wrong dimension")
        hits = np.flatnonzero(np.all(self.vectors == u, axis=1))
        if hits.size == 0:
            raise InputNotInSet(f"input {u.tolist()} is not a member of the input set")
        return int(hits[0])

    def to_list(self):
        return self.vectors.tolist()


def _key_part(part) -> int:
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise InvalidParameter("noise stream keys must be non-negative")
        return int(part)
    return zlib.crc32(str(part).encode())


class NoiseStream:
    """Counter-addressed stream of i.i.d. noise realizations.

    Realization ``index`` is a pure function of ``(seed, key, index)``:
    indices are grouped into fixed-size chunks and each chunk is generated
    by its own ``SeedSequence``-derived generator, so arbitrary index ranges
    can be drawn (and re-drawn) without replaying the whole stream.
    """

    def __init__(self, seed: int, key=(), dim: int = 1, dist: str = "normal", chunk: int = 4096):
        if dist not in ("normal", "uniform"):
            raise InvalidParameter(f"unknown noise distribution {dist!r}")
        if int(seed) < 0:
            raise InvalidParameter("seed must be non-negative")
        self.seed = int(seed)
        self.key = tuple(_key_part(k) for k in key)
        self.dim = int(dim)
        self.dist = dist
        self.chunk = int(chunk)
        self.counter = 0

    def substream(self, *key) -> "NoiseStream":
        return NoiseStream(self.seed, self.key + tuple(_key_part(k) for k in key),
                           self.dim, self.dist, self.chunk)

    def _block(self, c: int) -> np.ndarray:
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key + (c,))
        rng = np.random.Generator(np.random.PCG64(ss))
        if self.dist == "normal":
            return rng.standard_normal((self.chunk, self.dim))
        return rng.random((self.chunk, self.dim))

    def draw(self, start: int, count: int) -> np.ndarray:
        """Realizations ``start .. start+count-1`` as a ``(count, dim)`` array."""
        if start < 0 or count < 0:
            raise InvalidParameter("draw range must be non-negative")
        out = np.empty((count, self.dim))
        pos = 0
        stop = start + count
        c = start // self.chunk
        while pos < count:
            base = c * self.chunk
            a = max(start, base) - base
            b = min(stop, base + self.chunk) - base
            out[pos:pos + b - a] = self._block(c)[a:b]
            pos += b - a
            c += 1
        return out

    def realization(self, index: int) -> np.ndarray:
        return self.draw(index, 1)[0]

    def take(self, count: int) -> np.ndarray:
        """Sequential draw that advances the internal counter."""
        out = self.draw(self.counter, count)
        self.counter += count
        return out


Dynamics = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]


class BlackBoxSystem:
    """One-step sampler ``x' = f(x, u, noise)`` with unknown ``f``.

    ``step`` broadcasts over leading axes of ``x`` and ``noise``.  Successors
    are returned as-is even when they leave ``state_box``.
    """

    def __init__(self, state_box: StateBox, inputs: InputSet, dynamics: Dynamics, *,
                 noise_dim: int | None = None, noise_dist: str = "normal",
                 noise_mode: str = PAIRED, seed: int = 0, name: str = "custom",
                 params: dict | None = None, noise_std=None):
        if noise_mode not in (PAIRED, INDEPENDENT):
            raise InvalidParameter(f"noise_mode must be {PAIRED!r} or {INDEPENDENT!r}")
        self.state_box = state_box
        self.inputs = inputs
        self._f = dynamics
        self.noise_dim = state_box.n if noise_dim is None else int(noise_dim)
        self.noise_dist = noise_dist
        self.noise_mode = noise_mode
        self.seed = int(seed)
        self.name = name
        self.params = dict(params or {})
        # Per-coordinate std of additive Gaussian noise; only built-ins know it.
        self.noise_std = None if noise_std is None else np.asarray(noise_std, dtype=float)
        self._independent = np.random.default_rng(self.seed)

    @property
    def n(self) -> int:
        return self.state_box.n

    def noise_stream(self, *key) -> NoiseStream:
        return NoiseStream(self.seed, key, self.noise_dim, self.noise_dist)

    def _check_state(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1:] != (self.n,):
            raise InvalidState(f"state has shape {x.shape}, expected trailing dimension {self.n}")
        if not np.all(np.isfinite(x)):
            raise InvalidState("state contains non-finite values")
        return x

    def step(self, x, u, noise=None) -> np.ndarray:
        """One realization of the successor of ``x`` under input vector ``u``.

        ``noise`` is either ``None`` (fresh independent draw) or an explicit
        realization array whose trailing axis has length ``noise_dim``.
        """
        x = self._check_state(x)
        k = self.inputs.index_of(u)
        return self.transition(x, k, noise)

    def step_stream(self, x, u, stream: NoiseStream, index: int) -> np.ndarray:
        return self.step(x, u, stream.realization(index))

    def transition(self, x, u_index, noise=None) -> np.ndarray:
        """Vectorized step by input index; no membership or finiteness checks."""
        x = np.asarray(x, dtype=float)
        u = self.inputs.vectors[u_index]
        if noise is None:
            shape = x.shape[:-1] + (self.noise_dim,)
            if self.noise_dist == "normal":
                noise = self._independent.standard_normal(shape)
            else:
                noise = self._independent.random(shape)
        return self._f(x, u, np.asarray(noise, dtype=float))

    def nominal(self, x, u_index) -> np.ndarray:
        """Zero-noise successor; meaningful for additive-noise built-ins only."""
        x = np.asarray(x, dtype=float)
        return self._f(x, self.inputs.vectors[u_index], np.zeros(x.shape[:-1] + (self.noise_dim,)))


def sample_states(sys: BlackBoxSystem, N: int, seed: int) -> np.ndarray:
    """``N`` i.i.d. uniform states over the state box; prefix-stable in ``N``."""
    if int(N) < 1:
        raise InvalidParameter("N must be at least 1")
    box = sys.state_box if isinstance(sys, BlackBoxSystem) else sys
    stream = NoiseStream(seed, ("states",), dim=box.n, dist="uniform")
    return box.lo_array + stream.draw(0, int(N)) * box.widths


def jet_engine_system(tau: float = 0.01, noise_scale: float = 0.01, *, seed: int = 0,
                      noise_mode: str = PAIRED, inputs=None) -> BlackBoxSystem:
    """Moore-Greitzer jet engine compressor, forward-Euler discretized.

    State box ``[-0.5, 0.5]^2``; by default 21 inputs ``-0.5, -0.45, ..., 0.5``.
    """
    if not tau > 0:
        raise InvalidParameter("tau must be positive")
    if noise_scale < 0:
        raise InvalidParameter("noise_scale must be non-negative")

    def f(x, u, w):
        x1, x2 = x[..., 0], x[..., 1]
        v = u[..., 0]
        y1 = x1 + tau * (-x2 - 1.5 * x1 ** 2 - 0.5 * x1 ** 3) + noise_scale * w[..., 0]
        y2 = x2 + tau * (x1 - v) + noise_scale * w[..., 1]
        return np.stack(np.broadcast_arrays(y1, y2), axis=-1)

    if inputs is None:
        inputs = np.round(np.linspace(-0.5, 0.5, 21), 10)
    inputs = inputs if isinstance(inputs, InputSet) else InputSet(inputs)
    return BlackBoxSystem(StateBox((-0.5, -0.5), (0.5, 0.5)), inputs, f, noise_dim=2,
                          noise_mode=noise_mode, seed=seed, name="jet",
                          params={"tau": tau, "noise_scale": noise_scale},
                          noise_std=[noise_scale, noise_scale])


def affine_system(A, B, box: StateBox, inputs, *, c=None, noise_scale=0.0, seed: int = 0,
                  noise_mode: str = PAIRED, name: str = "custom-affine") -> BlackBoxSystem:
    """``x' = A x + B u + c + diag(noise_scale) * w`` with standard normal ``w``."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    n = box.n
    if A.shape != (n, n):
        raise InvalidParameter(f"A must be {n}x{n}")
    inputs = inputs if isinstance(inputs, InputSet) else InputSet(inputs)
    B = np.asarray(B, dtype=float).reshape(n, inputs.dim)
    c = np.zeros(n) if c is None else np.asarray(c, dtype=float).reshape(n)
    scale = np.broadcast_to(np.asarray(noise_scale, dtype=float), (n,)).copy()
    if np.any(scale < 0):
        raise InvalidParameter("noise_scale must be non-negative")

    def f(x, u, w):
        return x @ A.T + u @ B.T + c + scale * w

    params = {"A": A.tolist(), "B": B.tolist(), "noise_scale": scale.tolist()}
    if name == "custom-affine":
        params["c"] = c.tolist()
    return BlackBoxSystem(box, inputs, f, noise_dim=n, noise_mode=noise_mode, seed=seed,
                          name=name, params=params, noise_std=scale)


def linear_system(A, B, box: StateBox, inputs, *, noise_scale=0.0, seed: int = 0,
                  noise_mode: str = PAIRED) -> BlackBoxSystem:
    return affine_system(A, B, box, inputs, noise_scale=noise_scale, seed=seed,
                         noise_mode=noise_mode, name="linear")


def system_from_config(section: dict) -> BlackBoxSystem:
    """Build a built-in family from a config mapping (no code loading)."""
    from .errors import ConfigError

    section = dict(section)
    family = section.pop("family", None)
    seed = section.pop("seed", None)
    if seed is None:
        raise ConfigError("system.seed", "a seed is mandatory")
    mode = section.pop("noise_mode", PAIRED)
    try:
        if family == "jet":
            return jet_engine_system(section.pop("tau", 0.01), section.pop("noise_scale", 0.01),
                                     seed=seed, noise_mode=mode, inputs=section.pop("inputs", None))
        if family in ("linear", "custom-affine"):
            box = StateBox.from_bounds(section["box"])
            kw = dict(noise_scale=section.get("noise_scale", 0.0), seed=seed, noise_mode=mode)
            if family == "linear":
                return linear_system(section["A"], section["B"], box, section["inputs"], **kw)
            return affine_system(section["A"], section["B"], box, section["inputs"],
                                 c=section.get("c"), **kw)
    except KeyError as exc:
        raise ConfigError(f"system.{exc.args[0]}", "missing required field") from None
    except InvalidParameter as exc:
        raise ConfigError("system", str(exc)) from None
    raise ConfigError("system.family", f"unknown family {family!r} (jet | linear | custom-affine)")


__all__ = [
    "StateBox", "InputSet", "NoiseStream", "BlackBoxSystem", "sample_states",
    "jet_engine_system", "linear_system", "affine_system", "system_from_config",
    "PAIRED", "INDEPENDENT",
]

