"""On-disk formats for datasets and trained bundles.

Dataset directory::

    manifest.json      {"format": "symplift-dataset", "version": 1, "system", "dt", "seed",
                        "normalization", "files", "meta"}
    traj_000.csv       header ``t,x_0,..,x_{D-1},xdot_0,..,xdot_{D-1}``, values in
                       shortest round-trip (``repr``) precision

Bundle file (JSON)::

    {"format": "symplift-bundle", "version": 1, "mode", "encoder", "decoder",
     "dynamics", "system", "normalization", "config", "checksum"}

Parameter arrays are stored as base64 of little-endian float64 bytes in
declaration order, so a round trip is bitwise lossless.
"""
from __future__ import annotations

import base64
import csv
import hashlib
import json
import os

import numpy as np

from .integrators import Dataset, Normalization, Trajectory
from .nn.networks import Network, network_from_architecture
from .quadham import QuadHamParams
from .systems import SystemSpec
from .training import KoopmanDynamics, ModelBundle, TrainConfig

DATASET_FORMAT = "symplift-dataset"
BUNDLE_FORMAT = "symplift-bundle"
FORMAT_VERSION = 1
MANIFEST = "manifest.json"


class FormatError(ValueError):
    """A file is not in a recognized format, has the wrong version or is corrupted."""


# -- arrays -------------------------------------------------------------------

def encode_array(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_array(d: dict) -> np.ndarray:
    try:
        raw = base64.b64decode(d["data"], validate=True)
        shape = tuple(int(s) for s in d["shape"])
        a = np.frombuffer(raw, dtype="<f8")
        return a.reshape(shape).astype(np.float64)
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"corrupted array record: {exc}") from None


# -- trajectories and datasets -------------------------------------------------

def _fmt(v: float) -> str:
    return repr(float(v))


def write_trajectory_csv(tr: Trajectory, path) -> None:
    d = tr.dim
    header = ["t", *[f"x_{i}" for i in range(d)]]
    if tr.has_derivs:
        header += [f"xdot_{i}" for i in range(d)]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for k in range(len(tr)):
            row = [tr.times[k], *tr.states[k]]
            if tr.has_derivs:
                row += list(tr.derivs[k])
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def read_trajectory_csv(path) -> Trajectory:
    """Read one trajectory.

    Recognized layouts: the native header ``t, x_*, [xdot_*]``; or any file
    whose first column is time and whose remaining columns are state
    coordinates in ``(q, p)`` order (derivatives absent), with or without a
    header row.  The latter covers external measurements such as
    ``t, angle, angular_velocity``.
    """
    try:
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    except (UnicodeDecodeError, csv.Error) as exc:
        raise FormatError(f"{path}: unreadable CSV ({exc})") from None
    if not rows:
        raise FormatError(f"{path}: empty file")
    header = [c.strip() for c in rows[0]]
    if all(_is_number(c) for c in header):
        header, body = None, rows
    else:
        body = rows[1:]
    try:
        data = np.array([[float(c) for c in r] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric value ({exc})") from None
    if data.ndim != 2 or data.shape[0] == 0 or data.shape[1] < 2:
        raise FormatError(f"{path}: need a time column and at least one state column")
    width = data.shape[1]
    if header is not None and len(header) != width:
        raise FormatError(f"{path}: header has {len(header)} columns, rows have {width}")
    derivs = None
    if header is not None:
        xs = [i for i, h in enumerate(header) if h.startswith("x_")]
        xd = [i for i, h in enumerate(header) if h.startswith("xdot_")]
        if xs:
            states = data[:, xs]
            if xd:
                if len(xd) != len(xs):
                    raise FormatError(f"{path}: {len(xs)} state but {len(xd)} derivative columns")
                derivs = data[:, xd]
        else:
            states = data[:, 1:]
    else:
        states = data[:, 1:]
    try:
        return Trajectory(data[:, 0], states, derivs)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None


def save_dataset(ds: Dataset, path, *, dt: float | None = None, seed: int | None = None) -> list[str]:
    """Write the dataset directory; returns the written file paths."""
    os.makedirs(path, exist_ok=True)
    files = []
    for k, tr in enumerate(ds.trajectories):
        name = f"traj_{k:03d}.csv"
        write_trajectory_csv(tr, os.path.join(path, name))
        files.append(name)
    manifest = {
        "format": DATASET_FORMAT,
        "version": FORMAT_VERSION,
        "system": ds.system.to_dict() if ds.system is not None else None,
        "dt": dt if dt is not None else ds.meta.get("dt"),
        "seed": seed if seed is not None else ds.meta.get("seed"),
        "normalization": _norm_record(ds.normalization),
        "files": files,
        "meta": ds.meta,
    }
    with open(os.path.join(path, MANIFEST), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return [os.path.join(path, f) for f in files] + [os.path.join(path, MANIFEST)]


def _norm_record(norm: Normalization | None):
    if norm is None:
        return None
    return {"shift": encode_array(norm.shift), "scale": encode_array(norm.scale)}


def _norm_from_record(rec) -> Normalization | None:
    if rec is None:
        return None
    return Normalization(decode_array(rec["shift"]), decode_array(rec["scale"]))


def load_json(path) -> dict:
    try:
        with open(path) as fh:
            return json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from None


def _check_header(doc, fmt: str, path) -> None:
    if not isinstance(doc, dict) or doc.get("format") != fmt:
        raise FormatError(f"{path}: not a {fmt} file")
    if doc.get("version") != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported {fmt} version {doc.get('version')!r} "
                          f"(expected {FORMAT_VERSION})")


def load_dataset(path, system: SystemSpec | None = None) -> Dataset:
    """Load a dataset directory, its manifest, or a single CSV trajectory."""
    if os.path.isdir(path):
        path = os.path.join(path, MANIFEST)
    if not path.endswith(".json"):
        return Dataset([read_trajectory_csv(path)], system)
    doc = load_json(path)
    _check_header(doc, DATASET_FORMAT, path)
    root = os.path.dirname(path)
    try:
        sys_rec = doc.get("system")
        if system is None and sys_rec is not None:
            system = SystemSpec.from_dict(sys_rec)
        trajs = [read_trajectory_csv(os.path.join(root, f)) for f in doc["files"]]
        return Dataset(trajs, system, _norm_from_record(doc.get("normalization")),
                       dict(doc.get("meta") or {}))
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed manifest ({exc})") from None


# -- bundles ------------------------------------------------------------------

def _network_record(net: Network) -> dict:
    return {"architecture": net.architecture(),
            "params": [{"name": k, **encode_array(v)} for k, v in net.params.items()]}


def _network_from_record(rec: dict) -> Network:
    net = network_from_architecture(rec["architecture"])
    stored = {p["name"]: decode_array(p) for p in rec["params"]}
    if list(stored) != list(net.params):
        raise FormatError("parameter names do not match the architecture")
    for name, arr in stored.items():
        if arr.shape != net.params[name].shape:
            raise FormatError(f"parameter {name!r} has shape {arr.shape}, "
                              f"expected {net.params[name].shape}")
        net.params[name] = arr
    return net


def _dynamics_record(dyn) -> dict:
    if isinstance(dyn, KoopmanDynamics):
        return {"kind": "koopman", "K": encode_array(dyn.K)}
    return {"kind": "quadham", "dim": dyn.dim, "alpha": encode_array(dyn.alpha),
            "s_upper": encode_array(dyn.s_upper), "t_sym": encode_array(dyn.t_sym)}


def _dynamics_from_record(rec: dict):
    if rec["kind"] == "koopman":
        return KoopmanDynamics(decode_array(rec["K"]))
    if rec["kind"] == "quadham":
        return QuadHamParams(int(rec["dim"]), decode_array(rec["alpha"]),
                             decode_array(rec["s_upper"]), decode_array(rec["t_sym"]))
    raise FormatError(f"unknown latent dynamics kind {rec['kind']!r}")


def _checksum(doc: dict) -> str:
    body = {k: v for k, v in doc.items() if k != "checksum"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def bundle_to_dict(b: ModelBundle) -> dict:
    doc = {
        "format": BUNDLE_FORMAT,
        "version": FORMAT_VERSION,
        "mode": b.mode,
        "encoder": _network_record(b.encoder),
        "decoder": _network_record(b.decoder),
        "dynamics": _dynamics_record(b.dynamics),
        "system": b.system.to_dict() if b.system is not None else None,
        "normalization": _norm_record(b.normalization),
        "config": b.config.to_dict() if b.config is not None else None,
    }
    doc["checksum"] = _checksum(doc)
    return doc


def bundle_from_dict(doc: dict, path="<bundle>") -> ModelBundle:
    _check_header(doc, BUNDLE_FORMAT, path)
    if doc.get("checksum") != _checksum(doc):
        raise FormatError(f"{path}: checksum mismatch (file corrupted or edited)")
    try:
        cfg = TrainConfig(**doc["config"]) if doc.get("config") else None
        system = SystemSpec.from_dict(doc["system"]) if doc.get("system") else None
        return ModelBundle(_network_from_record(doc["encoder"]),
                           _network_from_record(doc["decoder"]),
                           _dynamics_from_record(doc["dynamics"]), doc["mode"], system,
                           _norm_from_record(doc.get("normalization")), cfg)
    except (KeyError, TypeError) as exc:
        raise FormatError(f"{path}: malformed bundle ({exc})") from None


def save_bundle(b: ModelBundle, path) -> None:
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(bundle_to_dict(b), fh, indent=1, sort_keys=True)


def load_bundle(path) -> ModelBundle:
    return bundle_from_dict(load_json(path), path)


# -- format sniffing --------------------------------------------------------------

def detect_format(path) -> str:
    """One of ``dataset``, ``bundle``, ``report``, ``history``, ``trajectory``."""
    if os.path.isdir(path):
        if os.path.exists(os.path.join(path, MANIFEST)):
            return "dataset"
        if os.path.exists(os.path.join(path, "summary.json")):
            return "report"
        raise FormatError(f"{path}: directory is neither a dataset nor a report")
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if path.endswith(".json"):
        doc = load_json(path)
        fmt = doc.get("format") if isinstance(doc, dict) else None
        if fmt == DATASET_FORMAT:
            return "dataset"
        if fmt == BUNDLE_FORMAT:
            return "bundle"
        if isinstance(doc, dict) and "num_trajectories" in doc:
            return "report"
        raise FormatError(f"{path}: unknown JSON format")
    with open(path, newline="") as fh:
        first = fh.readline().strip()
    if first.startswith("epoch,L_encdec"):
        return "history"
    return "trajectory"

