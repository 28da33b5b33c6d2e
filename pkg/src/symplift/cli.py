"""Command-line interface.

::

    symplift --list-presets
    symplift generate CONFIG [--seed N]
    symplift train CONFIG [--mode M] [--lambda2 L] [--seed N] [--epochs E]
    symplift eval CONFIG [--trajectory CSV] [--num N] [--horizon T] [--seed N]
    symplift inspect PATH

``CONFIG`` is a preset name or a path to an INI file.  Outputs go to the run
directory ``$SYMPLIFT_OUTPUT_ROOT/<config name>`` (default ``./runs/<name>``)
unless ``--out`` or ``[paths] root`` says otherwise.

Exit codes: 0 success, 2 configuration error, 3 numerical failure, 4 I/O or
file-format error.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, list_presets, resolve_config
from .evaluation import export_report
from .integrators import NewtonConvergenceError
from .persistence import (FormatError, detect_format, load_bundle, load_dataset, load_json,
                          read_trajectory_csv, save_bundle, save_dataset)
from .systems import InfeasibleWindowError, hamiltonian
from .training import LossHistory, MissingDerivativesError, TrainingDivergedError
from . import workflows

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4


def _load(args) -> RunConfig:
    cfg = resolve_config(args.config)
    if getattr(args, "out", None):
        cfg = dataclasses.replace(cfg, paths=dataclasses.replace(cfg.paths, root=args.out))
    return cfg


def _energy_range(ds) -> tuple[float, float] | None:
    if ds.system is None:
        return None
    h = np.asarray(hamiltonian(ds.system, ds.snapshots()[0]), dtype=float).reshape(-1)
    return float(h.min()), float(h.max())


def cmd_generate(args) -> int:
    cfg = _load(args)
    if args.seed is not None:
        cfg = dataclasses.replace(cfg, data=dataclasses.replace(cfg.data, seed=args.seed))
    ds = workflows.generate(cfg)
    out = cfg.path("dataset")
    save_dataset(ds, out, dt=cfg.data.step(), seed=cfg.data.seed)
    lo, hi = _energy_range(ds)
    print(f"wrote {out}: {len(ds.trajectories)} trajectories, {ds.num_samples} samples, "
          f"dimension {ds.dim}, energy range [{lo:.6g}, {hi:.6g}]")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = workflows.with_overrides(_load(args), mode=args.mode, lambda2=args.lambda2,
                                   seed=args.seed, epochs=args.epochs)
    ds_path = args.dataset or cfg.path("dataset")
    if not os.path.exists(ds_path):
        print(f"error: dataset {ds_path} not found (run `symplift generate` first)",
              file=sys.stderr)
        return EXIT_IO
    ds = load_dataset(ds_path)
    every = max(1, args.log_every)

    def report(epoch, row):
        if not args.quiet and (epoch % every == 0 or epoch == cfg.train.epochs - 1):
            print(f"epoch {epoch:5d}  L_encdec {row[0]:.3e}  L_symp {row[1]:.3e}  "
                  f"L_zdot {row[2]:.3e}  total {row[3]:.3e}", flush=True)

    result = workflows.fit(cfg, ds, callback=report)
    bundle_path = args.bundle or cfg.path("bundle")
    history_path = args.history or cfg.path("history")
    save_bundle(result.bundle, bundle_path)
    os.makedirs(os.path.dirname(os.path.abspath(history_path)), exist_ok=True)
    result.history.write_csv(history_path)
    fin = result.history.final()
    print(f"wrote {bundle_path} and {history_path}; final L_encdec {fin['encdec']:.3e}, "
          f"L_symp {fin['symp']:.3e}, L_zdot {fin['zdot']:.3e}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _load(args)
    ev = cfg.eval
    kw = {k: v for k, v in (("num_trajectories", args.num), ("horizon", args.horizon),
                            ("seed", args.seed), ("trajectory", args.trajectory)) if v is not None}
    if kw:
        cfg = dataclasses.replace(cfg, eval=dataclasses.replace(ev, **kw))
    bundle_path = args.bundle or cfg.path("bundle")
    if not os.path.exists(bundle_path):
        print(f"error: bundle {bundle_path} not found (run `symplift train` first)",
              file=sys.stderr)
        return EXIT_IO
    bundle = load_bundle(bundle_path)
    report = workflows.run_eval(cfg, bundle)
    out = args.report or cfg.path("report")
    export_report(report, out)
    s = report.summary()
    print(f"wrote {out}: {s['num_trajectories']} trajectories")
    for k, tr in enumerate(s["trajectories"]):
        print(f"  traj_{k:03d}: final_mae {tr['final_mae']:.3e}  max_error {tr['max_error']:.3e}  "
              f"h_drift_decoded {tr['h_drift_decoded']:.3e}  "
              f"symp_residual_mean {tr['symp_residual_mean']:.3e}")
    return EXIT_OK


def _inspect_bundle(path) -> None:
    b = load_bundle(path)
    kind = "linear (koopman)" if b.is_koopman else "quadratic hamiltonian"
    print(f"bundle {path}")
    print(f"  mode {b.mode}, state dim {b.state_dim}, latent dim {b.latent_dim}, dynamics {kind}")
    print(f"  encoder {b.encoder.kind} ({b.encoder.num_params()} params), "
          f"decoder {b.decoder.kind} ({b.decoder.num_params()} params)")
    if b.system is not None:
        print(f"  system {json.dumps(b.system.to_dict())}")
    if b.config is not None:
        print(f"  config {json.dumps(b.config.to_dict(), sort_keys=True)}")
    chk = b.structure_residuals()
    if chk is not None:
        print(f"  structure check: hamiltonian={chk.is_hamiltonian}  "
              f"B residual {chk.b_residual:.3e}  C residual {chk.c_residual:.3e}")


def _inspect_dataset(path) -> None:
    ds = load_dataset(path)
    print(f"dataset {path}")
    print(f"  {len(ds.trajectories)} trajectories, {ds.num_samples} samples, dimension {ds.dim}, "
          f"derivatives {'present' if ds.has_derivs else 'absent'}")
    print(f"  samples per trajectory {[len(t) for t in ds.trajectories]}")
    if ds.system is not None:
        h = np.asarray(hamiltonian(ds.system, ds.snapshots()[0]), dtype=float).reshape(-1)
        print(f"  system {json.dumps(ds.system.to_dict())}")
        print(f"  energy min {h.min():.6g}  mean {h.mean():.6g}  max {h.max():.6g}")
    if ds.normalization is not None:
        print("  normalization stored")


def cmd_inspect(args) -> int:
    path = args.path
    fmt = detect_format(path)
    if fmt == "bundle":
        _inspect_bundle(path)
    elif fmt == "dataset":
        _inspect_dataset(path)
    elif fmt == "report":
        p = os.path.join(path, "summary.json") if os.path.isdir(path) else path
        s = load_json(p)
        print(f"report {path}: {s['num_trajectories']} trajectories")
        for key in ("final_mae", "h_drift_truth", "h_drift_latent", "h_drift_decoded",
                    "symp_residual_mean", "symp_residual_max"):
            print(f"  {key} {s.get(key)}")
    elif fmt == "history":
        h = LossHistory.read_csv(path)
        print(f"loss history {path}: {len(h)} epochs, final {h.final()}")
    else:
        tr = read_trajectory_csv(path)
        print(f"trajectory {path}: {len(tr)} samples, dimension {tr.dim}, "
              f"t in [{tr.times[0]:g}, {tr.times[-1]:g}], "
              f"derivatives {'present' if tr.has_derivs else 'absent'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="symplift", description=(
        "Learn quadratic Hamiltonian latent models with weakly symplectic autoencoders."))
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--list-presets", action="store_true", help="list bundled run presets")
    sub = p.add_subparsers(dest="command")

    def common(sp):
        sp.add_argument("config", help="preset name or INI file")
        sp.add_argument("--out", help="run directory (overrides the output root)")

    g = sub.add_parser("generate", help="simulate training trajectories")
    common(g)
    g.add_argument("--seed", type=int, help="initial-condition seed")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train a bundle on a generated dataset")
    common(t)
    t.add_argument("--mode", choices=("lifting", "reduction", "koopman"))
    t.add_argument("--lambda2", type=float, help="weight of the symplectic loss")
    t.add_argument("--seed", type=int, help="training seed (initialization and shuffling)")
    t.add_argument("--epochs", type=int)
    t.add_argument("--dataset", help="dataset directory or CSV (default: run directory)")
    t.add_argument("--bundle", help="output bundle path")
    t.add_argument("--history", help="output loss-history CSV path")
    t.add_argument("--log-every", type=int, default=100, help="print every N epochs")
    t.add_argument("--quiet", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="roll out a bundle and export report files")
    common(e)
    e.add_argument("--bundle", help="bundle path (default: run directory)")
    e.add_argument("--report", help="report directory (default: run directory)")
    e.add_argument("--trajectory", help="external CSV trajectory to compare against")
    e.add_argument("--num", type=int, help="number of random test initial conditions")
    e.add_argument("--horizon", type=float, help="rollout final time")
    e.add_argument("--seed", type=int, help="test initial-condition seed")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="summarize a dataset, bundle, report or CSV file")
    i.add_argument("path")
    i.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.list_presets:
        for name in list_presets():
            print(name)
        return EXIT_OK
    if args.command is None:
        parser.print_help()
        return EXIT_CONFIG
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NewtonConvergenceError, TrainingDivergedError, InfeasibleWindowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, MissingDerivativesError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
