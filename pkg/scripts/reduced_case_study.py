"""Desk-scale jet engine study: certify, abstract, synthesize, simulate, report.

    python scripts/reduced_case_study.py [--out DIR] [--workers K]
"""
import argparse
import json
from pathlib import Path

from datamdp.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run(*argv):
    code = main([str(a) for a in argv])
    if code not in (0, 2):
        raise SystemExit(code)
    return code


def parse_args():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=ROOT / "configs" / "jet_reduced.yaml")
    ap.add_argument("--out", default=ROOT / "out" / "jet_reduced")
    ap.add_argument("--workers", type=int, default=1)
    return ap.parse_args()


if __name__ == "__main__":
    args = parse_args()
    cfg, out = args.config, Path(args.out)
    common = ("--config", cfg, "--out", out, "--workers", args.workers)
    run("complexity", *common)
    run("certify", *common)
    run("abstract", *common, "--mode", "imdp")
    run("synthesize", *common, "--abstraction", out / "abstraction_imdp.json")
    run("simulate", *common, "--policy", out / "policy_imdp.json")
    run("report", *common, "--policy", out / "policy_imdp.json", "--certificate", out / "certificate.json",
        "--abstraction", out / "abstraction_imdp.json")
    print(json.dumps(json.loads((out / "report.json").read_text()), indent=1))
