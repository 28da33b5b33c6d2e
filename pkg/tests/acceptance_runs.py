"""Cached full-length training runs used by the acceptance suite.

A run is keyed by its resolved configuration and by a hash of the numerical
source modules, so changing either retrains.  The cache lives in
``$SYMPLIFT_ACCEPTANCE_CACHE`` (default ``<repo>/.acceptance_cache``).

Warm the cache ahead of a test session with::

    python3 tests/acceptance_runs.py [name ...]
"""
from __future__ import annotations

import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass

from symplift.config import RunConfig, load_preset
from symplift.integrators import Dataset
from symplift.persistence import load_bundle, save_bundle
from symplift.training import LossHistory, ModelBundle
from symplift import workflows

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CACHE = os.environ.get("SYMPLIFT_ACCEPTANCE_CACHE") or os.path.join(ROOT, ".acceptance_cache")
NUMERIC_MODULES = ("nn/autodiff.py", "nn/networks.py", "quadham.py", "training.py",
                   "integrators.py", "systems.py", "workflows.py")

# name -> (preset, overrides for workflows.with_overrides)
RUNS = {
    "pendulum": ("pendulum", {}),
    "pendulum_koopman": ("pendulum_koopman", {}),
    "oscillator": ("oscillator", {}),
    "oscillator_no_symp": ("oscillator_no_symp", {}),
    "wave_256": ("wave_256", {}),
}


def source_hash() -> str:
    h = hashlib.sha256()
    pkg = os.path.join(ROOT, "src", "symplift")
    for rel in NUMERIC_MODULES:
        with open(os.path.join(pkg, rel), "rb") as fh:
            h.update(rel.encode() + b"\0" + fh.read())
    return h.hexdigest()[:16]


@dataclass
class Run:
    config: RunConfig
    dataset: Dataset
    bundle: ModelBundle
    history: LossHistory
    seconds: float


def resolved_config(name: str) -> RunConfig:
    preset, overrides = RUNS[name]
    return workflows.with_overrides(load_preset(preset), **overrides)


def run_key(cfg: RunConfig) -> str:
    blob = {k: v for k, v in cfg.to_dict().items() if k not in ("paths", "eval")}
    blob["source"] = source_hash()
    return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:16]


def cached_run(name: str, log=None) -> Run:
    cfg = resolved_config(name)
    dataset = workflows.generate(cfg)
    d = os.path.join(CACHE, f"{name}-{run_key(cfg)}")
    bundle_path = os.path.join(d, "bundle.json")
    history_path = os.path.join(d, "history.csv")
    meta_path = os.path.join(d, "meta.json")
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            seconds = json.load(fh)["seconds"]
        return Run(cfg, dataset, load_bundle(bundle_path), LossHistory.read_csv(history_path),
                   seconds)
    start = time.perf_counter()
    callback = None
    if log is not None:
        def callback(epoch, row):
            if epoch % 250 == 0:
                log(f"{name} epoch {epoch}: {row.tolist()}")
    result = workflows.fit(cfg, dataset, callback=callback)
    seconds = time.perf_counter() - start
    os.makedirs(d, exist_ok=True)
    save_bundle(result.bundle, bundle_path)
    result.history.write_csv(history_path)
    with open(meta_path, "w") as fh:
        json.dump({"seconds": seconds, "config": cfg.to_dict()}, fh, indent=2, sort_keys=True)
    return Run(cfg, dataset, result.bundle, result.history, seconds)


if __name__ == "__main__":
    names = sys.argv[1:] or list(RUNS)
    for n in names:
        r = cached_run(n, log=lambda msg: print(msg, flush=True))
        print(f"{n}: {len(r.history)} epochs in {r.seconds:.0f} s, final {r.history.final()}",
              flush=True)
