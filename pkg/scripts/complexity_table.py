"""Sample-size pipeline for the full-scale jet engine configuration.

    python scripts/complexity_table.py
"""
from pathlib import Path

from datamdp.cli import main

ROOT = Path(__file__).resolve().parents[1]

if __name__ == "__main__":
    raise SystemExit(main(["complexity", "--config", str(ROOT / "configs" / "jet_full.yaml"),
                           "--out", str(ROOT / "out" / "jet_full")]))
