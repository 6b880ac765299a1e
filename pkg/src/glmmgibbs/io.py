"""Manifest ingestion and artifact serialization.

A manifest is a JSON file binding dense CSV matrices (no header, one row per
line) to their roles.  Paths are relative to the manifest's directory::

    {
      "y": "y.csv",
      "x": "X.csv",
      "z": ["Z1.csv", "Z2.csv"],
      "q": [5, 3],
      "prior": {
        "mu_beta": "mu.csv",        # or null for zeros
        "sigma_beta": "Sigma.csv",  # or a number c meaning c * I
        "a": [0.5, 0.5, 0.5],
        "b": [1.0, 1.0, 1.0]
      }
    }
"""

import json
import math
from dataclasses import fields
from importlib import resources
from pathlib import Path

import numpy as np

from .model import DerivedQuantities, GlmmDesign, Model, PriorSpec, build_model


class InputError(ValueError):
    pass


def read_matrix(path):
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: file not found")
    try:
        arr = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise InputError(f"{path}: cannot parse as numeric CSV ({exc})") from None
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{path}: non-finite entries")
    return arr


def _vector(path, expected, name):
    arr = read_matrix(path)
    if 1 not in arr.shape:
        raise InputError(f"{path}: {name} must be a single row or column, got shape {arr.shape}")
    vec = arr.reshape(-1)
    if expected is not None and vec.size != expected:
        raise InputError(f"{path}: {name} has length {vec.size}, expected {expected}")
    return vec


def load_manifest(path):
    """Parse a manifest and its matrices into ``(GlmmDesign, PriorSpec)``."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"{path}: manifest not found")
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None
    base = path.parent
    for key in ("y", "x", "z", "prior"):
        if key not in spec:
            raise InputError(f"{path}: missing key {key!r}")

    y = _vector(base / spec["y"], None, "y")
    n = y.size
    x_path = base / spec["x"]
    x = read_matrix(x_path)
    if x.shape[0] != n:
        raise InputError(f"{x_path}: X has {x.shape[0]} rows, expected N={n}")
    z_files = spec["z"] if isinstance(spec["z"], list) else [spec["z"]]
    blocks = []
    for f in z_files:
        zb = read_matrix(base / f)
        if zb.shape[0] != n:
            raise InputError(f"{base / f}: Z block has {zb.shape[0]} rows, expected N={n}")
        blocks.append(zb)
    q_list = spec.get("q")
    if q_list is not None:
        if len(q_list) != len(blocks):
            raise InputError(f"{path}: q lists {len(q_list)} blocks but {len(blocks)} Z files given")
        for f, zb, qi in zip(z_files, blocks, q_list):
            if zb.shape[1] != qi:
                raise InputError(f"{base / f}: Z block has {zb.shape[1]} columns, q says {qi}")

    p = x.shape[1]
    prior = spec["prior"]
    mu_ref = prior.get("mu_beta")
    mu = np.zeros(p) if mu_ref is None else _vector(base / mu_ref, p, "mu_beta")
    sig_ref = prior.get("sigma_beta", 1.0)
    if isinstance(sig_ref, (int, float)):
        sigma = float(sig_ref)
    else:
        sigma = read_matrix(base / sig_ref)
        if sigma.shape != (p, p):
            raise InputError(f"{base / sig_ref}: Sigma_beta is {sigma.shape}, expected ({p}, {p})")
    r = len(blocks)
    a = np.asarray(prior.get("a", []), dtype=float)
    b = np.asarray(prior.get("b", []), dtype=float)
    if a.size != r + 1 or b.size != r + 1:
        raise InputError(f"{path}: prior a and b need r+1={r + 1} entries, got {a.size} and {b.size}")
    return GlmmDesign(y, x, blocks), PriorSpec(mu, sigma, a, b)


def load_model(manifest_path):
    design, prior = load_manifest(manifest_path)
    return build_model(design, prior)


def write_matrix(path, arr):
    np.savetxt(path, np.atleast_2d(arr), delimiter=",", fmt="%.17g")


def write_manifest(directory, design, prior, name="manifest.json"):
    """Write a model's matrices and manifest to ``directory``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_matrix(directory / "y.csv", design.y[:, None])
    write_matrix(directory / "X.csv", design.x)
    z_files = []
    for i, zb in enumerate(design.z_blocks, start=1):
        fname = f"Z{i}.csv"
        write_matrix(directory / fname, zb)
        z_files.append(fname)
    write_matrix(directory / "mu_beta.csv", prior.mu_beta[:, None])
    if np.ndim(prior.sigma_beta) == 0:
        sigma = float(prior.sigma_beta)
    else:
        sigma = "Sigma_beta.csv"
        write_matrix(directory / sigma, prior.sigma_beta)
    spec = {"y": "y.csv", "x": "X.csv", "z": z_files, "q": list(design.q_sizes),
            "prior": {"mu_beta": "mu_beta.csv", "sigma_beta": sigma,
                      "a": prior.a.tolist(), "b": prior.b.tolist()}}
    out = directory / name
    out.write_text(json.dumps(spec, indent=2))
    return out


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        obj = float(obj)
        return obj if math.isfinite(obj) else None
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(path, obj):
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def write_samples_csv(path, store, chain):
    """One row per recorded iteration: ``iter, lambda_e, lambda_u_*, beta_*, u_*``."""
    header = ",".join(["iter"] + store.columns)
    draws = store.draws(chain)
    with open(path, "w", newline="\n") as fh:
        fh.write(header + "\n")
        for it, row in enumerate(draws):
            fh.write(str(it) + "," + ",".join(format(v, ".17g") for v in row) + "\n")


def read_samples_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data.reshape(-1, len(header))


def save_model(model, path):
    """Persist design, prior and derived quantities to ``.npz`` (no recomputation on load)."""
    d = model.derived
    arrays = {f"derived.{f.name}": getattr(d, f.name) for f in fields(d) if f.name != "svd_xtilde"}
    u, s, vt = d.svd_xtilde
    arrays.update({"svd.u": u, "svd.s": s, "svd.vt": vt})
    for i, zb in enumerate(model.design.z_blocks):
        arrays[f"z.{i}"] = zb
    arrays.update({"y": model.y, "x": model.x, "mu_beta": model.prior.mu_beta,
                   "sigma_beta": model.sigma_beta, "a": model.prior.a, "b": model.prior.b,
                   "n_blocks": np.array(model.r)})
    np.savez(path, **arrays)


def load_saved_model(path):
    with np.load(path) as z:
        data = {k: z[k] for k in z.files}
    blocks = [data[f"z.{i}"] for i in range(int(data["n_blocks"]))]
    design = GlmmDesign(data["y"], data["x"], blocks)
    prior = PriorSpec(data["mu_beta"], data["sigma_beta"], data["a"], data["b"])
    kwargs = {}
    for f in fields(DerivedQuantities):
        if f.name == "svd_xtilde":
            kwargs[f.name] = (data["svd.u"], data["svd.s"], data["svd.vt"])
            continue
        val = data[f"derived.{f.name}"]
        kwargs[f.name] = val.item() if val.ndim == 0 else val
    for name in ("rank_z", "rank_x", "rank_out"):
        kwargs[name] = int(kwargs[name])
    return Model(design, prior, data["sigma_beta"], DerivedQuantities(**kwargs))


def load_schema(name):
    return json.loads(resources.files("glmmgibbs.schemas").joinpath(f"{name}.schema.json").read_text())
