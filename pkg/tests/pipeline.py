"""The scripted gen-data -> slic -> train -> eval -> plot pipeline, shared by
the CLI tests and the acceptance suite."""
from __future__ import annotations

import json
from pathlib import Path

from sp3.cli import main


def run_pipeline(root: Path, samples: int = 16, size: int = 48, iters: int = 30, n_sp: int = 60) -> dict:
    data, run, plots = root / "data", root / "run", root / "plots"
    steps = [
        ["gen-data", "--family", "rings", "--n", str(samples), "--size", str(size), "--seed", "1", "--out", str(data)],
        ["slic", "--manifest", str(data / "manifest.json"), "--n", str(n_sp)],
        ["train", "--manifest", str(data / "manifest.json"), "--iters", str(iters), "--seed", "0", "--out", str(run)],
        ["eval", "--pred-dir", str(run / "predictions"), "--manifest", str(data / "manifest.json"),
         "--out", str(root / "metrics.json")],
        ["plot", "--log", str(run / "log.csv"), "--out", str(plots)],
    ]
    codes = [main(argv) for argv in steps]
    return {"codes": codes, "data": data, "run": run, "plots": plots, "metrics": root / "metrics.json"}


def missing_artifacts(out: dict) -> list[str]:
    """Paths the pipeline should have produced but did not."""
    missing = []
    manifest = json.loads((out["data"] / "manifest.json").read_text())
    for rec in manifest["samples"]:
        for key in ("image", "label", "scribble", "superpixel"):
            if not rec.get(key) or not (out["data"] / rec[key]).exists():
                missing.append(f"{rec['id']}:{key}")
    for name in ("log.csv", "weights.spt", "config.json"):
        if not (out["run"] / name).exists():
            missing.append(name)
    tests = [r["id"] for r in manifest["samples"] if r["split"] == "test"]
    missing += [f"predictions/{t}" for t in tests if not (out["run"] / "predictions" / f"{t}.spt").exists()]
    if not out["metrics"].exists():
        missing.append("metrics.json")
    missing += [f"plots/{p}" for p in ("log.csv", "dice.svg", "thresholds.svg", "sampling_rate.svg")
                if not (out["plots"] / p).exists()]
    return missing
