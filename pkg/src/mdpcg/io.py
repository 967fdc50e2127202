"""File formats: distribution/trace/rollout CSVs, key-value manifests, game archives."""
from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .game import CostModel, PrimitiveField
from .solver import GameInstance

FLOAT_FMT = "{:.17g}"


class FormatError(ValueError):
    """A file does not match its expected schema."""


def fmt(value):
    if isinstance(value, (float, np.floating)):
        return FLOAT_FMT.format(float(value))
    return str(value)


def distribution_path(directory, player):
    return Path(directory) / f"x_player{player + 1}.csv"


def write_distribution(path, x):
    """One row per ``(t, s, a)`` entry, zeros included."""
    T1, S, A = x.shape
    t, s, a = np.meshgrid(np.arange(T1), np.arange(S), np.arange(A), indexing="ij")
    with open(path, "w", newline="") as fh:
        fh.write("t,s,a,mass\n")
        for row in zip(t.ravel(), s.ravel(), a.ravel(), x.ravel()):
            fh.write(f"{row[0]},{row[1]},{row[2]},{FLOAT_FMT.format(row[3])}\n")


def read_distribution(path, shape):
    """Load a distribution CSV, requiring every entry of ``shape = (T+1, S, A)``."""
    path = Path(path)
    if not path.exists():
        raise FormatError(f"missing distribution file {path}")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    expected = int(np.prod(shape))
    if data.shape != (expected, 4):
        raise FormatError(f"{path}: expected {expected} rows of t,s,a,mass, got {data.shape[0]}")
    idx = data[:, :3].astype(int)
    if (idx.min(axis=0) < 0).any() or (idx.max(axis=0) >= np.array(shape)).any():
        raise FormatError(f"{path}: index out of range for shape {shape}")
    x = np.full(shape, np.nan)
    x[idx[:, 0], idx[:, 1], idx[:, 2]] = data[:, 3]
    if np.isnan(x).any():
        raise FormatError(f"{path}: duplicate or missing (t,s,a) entries")
    return x


def write_joint(directory, x):
    for i in range(x.shape[0]):
        write_distribution(distribution_path(directory, i), x[i])


def read_joint(directory, shape):
    N = shape[0]
    return np.stack([read_distribution(distribution_path(directory, i), shape[1:]) for i in range(N)])


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([fmt(v) for v in row])


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_trace(path, trace):
    N = len(trace.movement[0]) if len(trace) else 0
    header = ["k", "potential", "fw_gap"]
    header += [f"movement_{i + 1}" for i in range(N)] + [f"norm_{i + 1}" for i in range(N)]
    rows = ([k, F, gap, *mv, *nm] for k, F, gap, mv, nm in trace.rows())
    write_csv(path, header, rows)


def write_kv(path, items, mode="w"):
    with open(path, mode) as fh:
        for key, value in items:
            fh.write(f"{key} = {fmt(value)}\n")


def read_kv(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip()
    return out


def save_game(path, instance: GameInstance):
    """Write a custom game as a ``.npz`` archive of kernel and cost-parameter tables."""
    m = instance.model
    np.savez(
        path,
        kernels=np.stack([np.asarray(k) for k in instance.kernels]),
        z0=instance.z0,
        alpha=m.alpha,
        groups=m.groups,
        f=np.stack(m.f.params),
        g=np.stack(m.g.params),
        h=np.stack(m.h.params),
        discount=instance.discount,
    )


def load_game(path) -> GameInstance:
    """Inverse of :func:`save_game`.

    Arrays: ``kernels (N,T,S,S,A)``, ``z0 (N,S)``, ``alpha (N,)``,
    ``groups (S,)``, and ``f``/``g``/``h`` holding the four primitive
    parameter tables stacked on a leading axis of length 4.
    """
    try:
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise FormatError(f"cannot read game file {path}: {exc}") from exc
    missing = {"kernels", "z0", "alpha", "f", "g", "h"} - set(arrays)
    if missing:
        raise FormatError(f"game file {path} lacks {sorted(missing)}")
    model = CostModel(
        alpha=arrays["alpha"],
        f=PrimitiveField(*arrays["f"]),
        g=PrimitiveField(*arrays["g"]),
        h=PrimitiveField(*arrays["h"]),
        groups=arrays.get("groups"),
    )
    return GameInstance(
        kernels=list(arrays["kernels"]),
        z0=arrays["z0"],
        model=model,
        discount=float(arrays.get("discount", 1.0)),
    )
