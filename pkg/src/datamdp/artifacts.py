"""Versioned on-disk formats for certificates, abstractions and policies.

Documents are JSON with sorted keys.  Scalars are written with ``repr``
precision, and arrays as base64 of zlib-compressed little-endian bytes, so
``load(save(x))`` reproduces every value bit for bit.
"""
from __future__ import annotations

import base64
import json
import zlib
from dataclasses import dataclass

import numpy as np

from .blackbox import InputSet
from .errors import IncompatibleFile
from .estimator import FiniteMdp, IntervalMdp
from .grid import Grid
from .scenario import SbfCertificate
from .synth import Policy, SafetySpec, ValueTable

VERSION = 1
CERTIFICATE = "datamdp/certificate"
ABSTRACTION = "datamdp/abstraction"
POLICY = "datamdp/policy"


def encode_array(a) -> dict:
    a = np.asarray(a, order="C")
    dt = a.dtype.newbyteorder("<") if a.dtype.byteorder == ">" else a.dtype
    raw = a.astype(dt, copy=False).tobytes()
    return {"dtype": dt.str, "shape": list(a.shape),
            "zlib_b64": base64.b64encode(zlib.compress(raw, 6)).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    raw = zlib.decompress(base64.b64decode(d["zlib_b64"]))
    return np.frombuffer(raw, dtype=np.dtype(d["dtype"])).reshape(tuple(d["shape"])).copy()


def dumps(doc: dict) -> str:
    return json.dumps(doc, sort_keys=True, indent=1, allow_nan=True) + "\n"


def save(path, doc: dict) -> None:
    with open(path, "w") as fh:
        fh.write(dumps(doc))


def load(path, fmt: str) -> dict:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise IncompatibleFile(f"{path}: not a JSON document ({exc})") from None
    if doc.get("format") != fmt:
        raise IncompatibleFile(f"{path}: expected format {fmt!r}, found {doc.get('format')!r}")
    if "version" not in doc:
        raise IncompatibleFile(f"{path}: missing version field")
    if doc["version"] != VERSION:
        raise IncompatibleFile(f"{path}: version {doc['version']} unsupported (expected {VERSION})")
    return doc


# -- certificates ---------------------------------------------------------

def certificate_doc(cert: SbfCertificate, *, seeds: dict, grid: Grid, system: dict, lp_stats: dict) -> dict:
    return {"format": CERTIFICATE, "version": VERSION, "certificate": cert.to_dict(),
            "seeds": dict(seeds), "grid": grid.to_dict(), "system": dict(system), "lp": dict(lp_stats)}


def read_certificate(path) -> tuple[SbfCertificate, dict]:
    doc = load(path, CERTIFICATE)
    return SbfCertificate.from_dict(doc["certificate"]), doc


# -- abstractions ---------------------------------------------------------

@dataclass
class Abstraction:
    model: FiniteMdp | IntervalMdp
    seeds: dict
    extra: dict

    @property
    def kind(self) -> str:
        return "imdp" if isinstance(self.model, IntervalMdp) else "mdp"


def abstraction_doc(model, *, seeds: dict, extra: dict | None = None) -> dict:
    doc = {"format": ABSTRACTION, "version": VERSION, "grid": model.grid.to_dict(),
           "inputs": model.inputs.to_list(), "seeds": dict(seeds), "extra": dict(extra or {})}
    if isinstance(model, IntervalMdp):
        doc.update(kind="imdp", provenance="empirical-interval", p_bar=encode_array(model.p_bar),
                   eps_bar=encode_array(model.eps_bar), beta_bar=encode_array(model.beta_bar),
                   G=encode_array(model.G))
    else:
        doc.update(kind="mdp", provenance=model.provenance, T=encode_array(model.T))
    return doc


def read_abstraction(path) -> Abstraction:
    doc = load(path, ABSTRACTION)
    grid = Grid.from_dict(doc["grid"])
    inputs = InputSet(doc["inputs"])
    if doc["kind"] == "imdp":
        model = IntervalMdp(grid, inputs, decode_array(doc["p_bar"]), decode_array(doc["eps_bar"]),
                            decode_array(doc["beta_bar"]), decode_array(doc["G"]))
    elif doc["kind"] == "mdp":
        model = FiniteMdp(grid, inputs, decode_array(doc["T"]), doc["provenance"])
    else:
        raise IncompatibleFile(f"{path}: unknown abstraction kind {doc['kind']!r}")
    return Abstraction(model, doc["seeds"], doc["extra"])


# -- policies -------------------------------------------------------------

@dataclass
class PolicyBundle:
    policy: Policy
    values: ValueTable
    spec: SafetySpec
    grid: Grid
    inputs: InputSet
    abstraction_kind: str
    initial: dict


def policy_doc(b: PolicyBundle) -> dict:
    return {"format": POLICY, "version": VERSION, "policy": encode_array(b.policy.table),
            "values": encode_array(b.values.V), "notes": dict(b.values.notes), "spec": b.spec.to_dict(),
            "grid": b.grid.to_dict(), "inputs": b.inputs.to_list(),
            "abstraction_kind": b.abstraction_kind, "initial": dict(b.initial)}


def read_policy(path) -> PolicyBundle:
    doc = load(path, POLICY)
    return PolicyBundle(Policy(decode_array(doc["policy"])), ValueTable(decode_array(doc["values"]), doc["notes"]),
                        SafetySpec.from_dict(doc["spec"]), Grid.from_dict(doc["grid"]),
                        InputSet(doc["inputs"]), doc["abstraction_kind"], doc["initial"])
