"""Closed-loop comparison of an MLE-based policy and a model-based policy.

Builds both abstractions on a 20 x 20 grid, synthesizes a safety policy on
each, simulates 10 runs of each under shared noise and writes trajectory and
error CSVs for external plotting.

    python scripts/compare_policies.py [--out DIR]
"""
import argparse
import json
from pathlib import Path

from datamdp.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(*argv):
    code = main([str(a) for a in argv])
    if code:
        raise SystemExit(code)


if __name__ == "__main__":
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "jet_compare.yaml")
    ap.add_argument("--out", default=ROOT / "out" / "jet_compare")
    args = ap.parse_args()
    cfg, out = args.config, Path(args.out)
    for mode in ("mle", "model"):
        run("abstract", "--config", cfg, "--out", out, "--mode", mode)
        run("synthesize", "--config", cfg, "--out", out, "--abstraction", out / f"abstraction_{mode}.json")
    run("simulate", "--config", cfg, "--out", out, "--policy", out / "policy_model.json")
    run("simulate", "--config", cfg, "--out", out, "--policy", out / "policy_mle.json",
        "--compare-policy", out / "policy_model.json")
    summary = json.loads((out / "simulation_policy_mle.json").read_text())
    print(json.dumps(summary, indent=1))
