"""YAML run configuration with field-level validation.

Every numeric field is range-checked when the file is loaded; a failure
raises :class:`ConfigError` naming the offending key (``scenario.eps1``).
Sections are optional at load time and required by the subcommands that
use them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import yaml

from .blackbox import BlackBoxSystem, StateBox, system_from_config
from .errors import ConfigError, DataMdpError
from .grid import Grid, build_grid
from .sbf import FAMILIES, Basis
from .scenario import LipschitzBound, lipschitz_linear, lipschitz_nonlinear
from .synth import SafetySpec

SECTIONS = ("system", "grid", "sbf", "scenario", "imdp", "mle", "spec", "simulate", "output")


def _num(d: dict, key: str, where: str, *, default=None, lo=None, hi=None, lo_open=False, hi_open=False,
         integer=False, required=True):
    name = f"{where}.{key}"
    if key not in d or d[key] is None:
        if required and default is None:
            raise ConfigError(name, "missing required field")
        return default
    v = d[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(name, f"expected a number, got {v!r}")
    if integer and (not float(v).is_integer()):
        raise ConfigError(name, f"expected an integer, got {v!r}")
    if not math.isfinite(v):
        raise ConfigError(name, "must be finite")
    if lo is not None and (v < lo or (lo_open and v == lo)):
        raise ConfigError(name, f"must be {'>' if lo_open else '>='} {lo}, got {v}")
    if hi is not None and (v > hi or (hi_open and v == hi)):
        raise ConfigError(name, f"must be {'<' if hi_open else '<='} {hi}, got {v}")
    return int(v) if integer else float(v)


def _unknown(d: dict, allowed, where: str):
    extra = sorted(set(d) - set(allowed))
    if extra:
        raise ConfigError(f"{where}.{extra[0]}", "unknown field")


def _box(value, where: str) -> StateBox:
    try:
        return StateBox.from_bounds(value)
    except (DataMdpError, TypeError, ValueError) as exc:
        raise ConfigError(where, f"expected [[lo, hi], ...] bounds ({exc})") from None


@dataclass
class SbfSection:
    family: str = "diagonal"
    constant: bool = True
    freeze: dict = field(default_factory=dict)
    bounds: dict = field(default_factory=dict)
    alpha_min: float = 1e-6
    limit: float = 1e6
    maximize_alpha: bool = True

    @classmethod
    def parse(cls, d: dict) -> "SbfSection":
        _unknown(d, ("family", "constant", "freeze", "bounds", "alpha_min", "limit", "maximize_alpha"), "sbf")
        fam = d.get("family", "diagonal")
        if fam not in FAMILIES:
            raise ConfigError("sbf.family", f"must be one of {FAMILIES}, got {fam!r}")
        freeze = {str(k): _num(d["freeze"], k, "sbf.freeze") for k in (d.get("freeze") or {})}
        bounds = {}
        for k, v in (d.get("bounds") or {}).items():
            if not (isinstance(v, (list, tuple)) and len(v) == 2):
                raise ConfigError(f"sbf.bounds.{k}", "expected [lo, hi]")
            lo, hi = (float(t) for t in v)
            if lo > hi:
                raise ConfigError(f"sbf.bounds.{k}", "lo must not exceed hi")
            bounds[str(k)] = (lo, hi)
        return cls(fam, bool(d.get("constant", True)), freeze, bounds,
                   _num(d, "alpha_min", "sbf", default=1e-6, lo=0, lo_open=True),
                   _num(d, "limit", "sbf", default=1e6, lo=0, lo_open=True),
                   bool(d.get("maximize_alpha", True)))

    def basis(self, n: int) -> Basis:
        return Basis(n, self.family, self.constant)


@dataclass
class ScenarioSection:
    eps1: float
    beta1: float
    beta2: float
    mu: float
    L_g: float | None = None
    lipschitz: dict | None = None
    Q: float | None = None
    pilot_Q: bool = False
    c: int | None = None
    N: int | None = None
    M: int | None = None
    lp_tol: float = 1e-9
    max_rows: int = 20_000_000

    @classmethod
    def parse(cls, d: dict) -> "ScenarioSection":
        w = "scenario"
        _unknown(d, ("eps1", "beta1", "beta2", "mu", "L_g", "lipschitz", "Q", "pilot_Q", "c", "N", "M",
                     "lp_tol", "max_rows"), w)
        s = cls(_num(d, "eps1", w, lo=0, hi=1), _num(d, "beta1", w, lo=0, hi=1, lo_open=True),
                _num(d, "beta2", w, lo=0, hi=1), _num(d, "mu", w, lo=0),
                L_g=_num(d, "L_g", w, lo=0, lo_open=True, required=False),
                Q=_num(d, "Q", w, lo=0, lo_open=True, required=False),
                pilot_Q=bool(d.get("pilot_Q", False)),
                c=_num(d, "c", w, lo=1, integer=True, required=False),
                N=_num(d, "N", w, lo=1, integer=True, required=False),
                M=_num(d, "M", w, lo=1, integer=True, required=False),
                lp_tol=_num(d, "lp_tol", w, default=1e-9, lo=0, lo_open=True),
                max_rows=_num(d, "max_rows", w, default=20_000_000, lo=1, integer=True))
        lip = d.get("lipschitz")
        if lip is not None:
            form = lip.get("form")
            keys = {"linear": ("L1", "L2", "h", "h_hat", "lam_min", "lam_max"),
                    "nonlinear": ("Lf", "Lx", "h", "lam_min", "lam_max")}
            if form not in keys:
                raise ConfigError("scenario.lipschitz.form", "must be 'linear' or 'nonlinear'")
            _unknown(lip, ("form", "eta", *keys[form]), "scenario.lipschitz")
            vals = {k: _num(lip, k, "scenario.lipschitz", lo=0) for k in keys[form]}
            vals["eta"] = _num(lip, "eta", "scenario.lipschitz", lo=0, required=False)
            if vals["lam_min"] > vals["lam_max"]:
                raise ConfigError("scenario.lipschitz.lam_min", "must not exceed lam_max")
            s.lipschitz = {"form": form, **vals}
        if s.L_g is None and s.lipschitz is None:
            raise ConfigError("scenario.L_g", "give either L_g or a lipschitz section")
        if s.Q is not None and s.pilot_Q:
            raise ConfigError("scenario.Q", "Q and pilot_Q are mutually exclusive")
        return s

    def lipschitz_bound(self, grid: Grid | None) -> LipschitzBound | None:
        if self.lipschitz is None:
            return None
        p = dict(self.lipschitz)
        form = p.pop("form")
        if p["eta"] is None:
            if grid is None:
                raise ConfigError("scenario.lipschitz.eta", "needs a grid section or an explicit value")
            p["eta"] = grid.eta
        return lipschitz_linear(**p) if form == "linear" else lipschitz_nonlinear(**p)

    def resolve_L_g(self, grid: Grid | None) -> float:
        """Direct ``L_g`` wins over the Lipschitz inputs."""
        return self.L_g if self.L_g is not None else self.lipschitz_bound(grid).L_g


@dataclass
class ImdpSection:
    eps_bar: float
    beta_bar: float

    @classmethod
    def parse(cls, d: dict) -> "ImdpSection":
        _unknown(d, ("eps_bar", "beta_bar"), "imdp")
        return cls(_num(d, "eps_bar", "imdp", lo=0, hi=1, lo_open=True),
                   _num(d, "beta_bar", "imdp", lo=0, hi=1, lo_open=True, hi_open=True))


@dataclass
class MleSection:
    n_hat: int
    pilot: int = 32

    @classmethod
    def parse(cls, d: dict) -> "MleSection":
        _unknown(d, ("n_hat", "pilot"), "mle")
        return cls(_num(d, "n_hat", "mle", lo=2, integer=True),
                   _num(d, "pilot", "mle", default=32, lo=1, integer=True))


@dataclass
class SpecSection:
    spec: SafetySpec
    init: np.ndarray | None = None

    @classmethod
    def parse(cls, d: dict) -> "SpecSection":
        _unknown(d, ("safe_box", "horizon", "epsilon", "init"), "spec")
        if "safe_box" not in d:
            raise ConfigError("spec.safe_box", "missing required field")
        box = _box(d["safe_box"], "spec.safe_box")
        spec = SafetySpec(box, _num(d, "horizon", "spec", lo=0, integer=True),
                          _num(d, "epsilon", "spec", default=0.0, lo=0))
        init = d.get("init")
        if init is not None:
            init = np.asarray(init, dtype=float).reshape(-1)
            if init.size != box.n or not np.all(box.contains(init)):
                raise ConfigError("spec.init", "must be a point inside the safe box")
        return cls(spec, init)

    @property
    def init_point(self) -> np.ndarray:
        b = self.spec.safe_box
        return self.init if self.init is not None else 0.5 * (b.lo_array + b.hi_array)


@dataclass
class SimulateSection:
    runs: int = 10
    seed: int | None = None
    x0: np.ndarray | None = None

    @classmethod
    def parse(cls, d: dict) -> "SimulateSection":
        _unknown(d, ("runs", "seed", "x0"), "simulate")
        x0 = d.get("x0")
        return cls(_num(d, "runs", "simulate", default=10, lo=1, integer=True),
                   _num(d, "seed", "simulate", lo=0, integer=True, required=False),
                   None if x0 is None else np.asarray(x0, dtype=float))


@dataclass
class RunConfig:
    system: dict | None = None
    grid: tuple | None = None
    sbf: SbfSection | None = None
    scenario: ScenarioSection | None = None
    imdp: ImdpSection | None = None
    mle: MleSection | None = None
    spec: SpecSection | None = None
    simulate: SimulateSection | None = None
    output: str | None = None
    seed_source: str = "config"

    @property
    def seed(self) -> int:
        return int(self.require("system")["seed"])

    def require(self, *names):
        for name in names:
            if getattr(self, name) is None:
                raise ConfigError(name, "section required by this command")
        return getattr(self, names[0]) if len(names) == 1 else None

    def build_system(self) -> BlackBoxSystem:
        return system_from_config(self.require("system"))

    def build_grid(self, sys: BlackBoxSystem) -> Grid:
        counts = self.require("grid")
        if len(counts) != sys.n:
            raise ConfigError("grid.counts", f"expected {sys.n} counts, got {len(counts)}")
        return build_grid(sys.state_box, counts)


def parse_config(data: dict, *, seed_entropy: bool = False) -> RunConfig:
    """Validate a config mapping.  With ``seed_entropy`` a missing system seed
    is replaced by fresh OS entropy (recorded in the config)."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "expected a mapping")
    _unknown(data, SECTIONS, "<root>")
    cfg = RunConfig()
    if data.get("system") is not None:
        sysd = dict(data["system"])
        if seed_entropy:
            sysd["seed"] = int(np.random.SeedSequence().entropy % (2 ** 63))
            cfg.seed_source = "entropy"
        elif sysd.get("seed") is None:
            raise ConfigError("system.seed", "a seed is mandatory (or pass --seed-entropy)")
        else:
            _num(sysd, "seed", "system", lo=0, integer=True)
        cfg.system = sysd
    if data.get("grid") is not None:
        g = data["grid"]
        counts = g.get("counts") if isinstance(g, dict) else g
        if not (isinstance(counts, (list, tuple)) and counts
                and all(isinstance(c, int) and not isinstance(c, bool) and c >= 1 for c in counts)):
            raise ConfigError("grid.counts", "expected a list of positive integers")
        cfg.grid = tuple(counts)
    parsers = {"sbf": SbfSection, "scenario": ScenarioSection, "imdp": ImdpSection, "mle": MleSection,
               "spec": SpecSection, "simulate": SimulateSection}
    for name, kind in parsers.items():
        if data.get(name) is not None:
            if not isinstance(data[name], dict):
                raise ConfigError(name, "expected a mapping")
            setattr(cfg, name, kind.parse(data[name]))
    if data.get("output") is not None:
        out = data["output"]
        cfg.output = str(out.get("dir") if isinstance(out, dict) else out)
    return cfg


def load_config(path, *, seed_entropy: bool = False) -> RunConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError("--config", str(exc)) from None
    except yaml.YAMLError as exc:
        raise ConfigError("--config", f"invalid YAML: {exc}") from None
    return parse_config(data, seed_entropy=seed_entropy)
