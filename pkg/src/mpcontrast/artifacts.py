"""Config files, CSV tables, SVG scatter plots and output-directory locking."""

from __future__ import annotations

import csv
import fcntl
import io
import os
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .dynamics import ConfigError

_BOOL = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


def _means(text: str) -> tuple[tuple[float, float], ...]:
    out = []
    for part in text.split(";"):
        xy = [float(v) for v in part.split(",")]
        if len(xy) != 2:
            raise ValueError(f"mean {part!r} is not an 'x,y' pair")
        out.append((xy[0], xy[1]))
    return tuple(out)


def _bool(text: str) -> bool:
    try:
        return _BOOL[text.lower()]
    except KeyError:
        raise ValueError(f"not a boolean: {text!r}") from None


def _optional_float(text: str):
    return None if text.lower() in ("", "none") else float(text)


# key -> (parser, default)
SCHEMA = {
    "synth.means": (_means, ((-1.0, 0.0), (1.0, 0.0))),
    "synth.variance": (float, 0.7),
    "synth.points_per_class": (int, 100),
    "synth.seed": (int, 0),
    "graph.path": (str, ""),
    "graph.labels_path": (str, ""),
    "graph.groups_path": (str, ""),
    "graph.epsilon": (float, 0.4),
    "graph.weight_mode": (str, "degree"),
    "graph.self_loops": (_bool, False),
    "dynamics.rule": (str, "contrastive"),
    "dynamics.alpha": (float, 0.1),
    "dynamics.steps": (int, 1000),
    "dynamics.temperature": (float, 1.0),
    "dynamics.beta": (float, 0.0),
    "dynamics.stages": (int, 1),
    "dynamics.preprocess": (str, "none"),
    "dynamics.normalization_set": (str, "all"),
    "dynamics.delta_t": (_optional_float, None),
    "dynamics.init": (str, "uniform_box"),
    "dynamics.init_path": (str, ""),
    "dynamics.init_low": (float, -1.0),
    "dynamics.init_high": (float, 1.0),
    "dynamics.dim": (int, 2),
    "dynamics.seed": (int, 0),
    "dynamics.snapshot_every": (int, 10),
    "outputs.dir": (str, "out"),
    "outputs.plot": (_bool, True),
    "outputs.snapshots": (_bool, True),
    "check.seed": (int, 0),
    "check.n": (int, 16),
    "check.m": (int, 4),
}


def _assign(cfg: dict, key: str, value: str, where: str) -> None:
    if key not in SCHEMA:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        cfg[key] = SCHEMA[key][0](value)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key}: {exc}") from None


def load_config(path: str | None = None, overrides=()) -> dict:
    """Flat ``section.key = value`` config with defaults, then ``key=value`` overrides applied in order."""
    cfg = {k: default for k, (_, default) in SCHEMA.items()}
    if path:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            _assign(cfg, key, value, f"{path}:{lineno}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set {item!r}: expected key=value")
        key, value = (s.strip() for s in item.split("=", 1))
        _assign(cfg, key, value, f"--set {key}")
    return cfg


def section(cfg: dict, name: str) -> dict:
    prefix = name + "."
    return {k[len(prefix):]: v for k, v in cfg.items() if k.startswith(prefix)}


def _cell(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path, header, rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    Path(path).write_text(buf.getvalue())


def read_csv(path, numeric: bool = True) -> tuple[list[str], np.ndarray]:
    """Header and body of a CSV table; parse errors name the line."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc.strerror}") from None
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise ValueError(f"{path}: empty file")
    header, body = rows[0], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            body.append([float(v) for v in row] if numeric else row)
        except ValueError:
            raise ValueError(f"{path}:{lineno}: non-numeric field in {row!r}") from None
    return header, np.array(body, dtype=float if numeric else object).reshape(len(body), len(header))


def read_features(path) -> np.ndarray:
    header, body = read_csv(path)
    if not header or header[0] != "node":
        raise ValueError(f"{path}: first column must be 'node'")
    if not np.array_equal(body[:, 0], np.arange(len(body))):
        raise ValueError(f"{path}: node ids must be 0..n-1 in order")
    return body[:, 1:]


def read_node_column(path, column: str) -> np.ndarray:
    header, body = read_csv(path)
    if header != ["node", column]:
        raise ValueError(f"{path}: expected header 'node,{column}'")
    if not np.array_equal(body[:, 0], np.arange(len(body))):
        raise ValueError(f"{path}: node ids must be 0..n-1 in order")
    if not np.all(body[:, 1] == np.round(body[:, 1])):
        raise ValueError(f"{path}: {column} values must be integers")
    return body[:, 1].astype(int)


PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
)


def scatter_svg(points, labels=None, size: int = 600, margin: int = 20, radius: float = 3.0) -> str:
    """2-D scatter with one circle per row, coloured by label."""
    p = np.asarray(points, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ValueError("scatter plot needs 2-D points")
    labels = np.zeros(len(p), dtype=int) if labels is None else np.asarray(labels, dtype=int)
    lo, hi = p.min(axis=0), p.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    scale = (size - 2 * margin) / span
    xy = (p - lo) * scale + margin
    xy[:, 1] = size - xy[:, 1]  # y axis up
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for (x, y), k in zip(xy, labels):
        out.append(f'<circle cx="{x:.3f}" cy="{y:.3f}" r="{radius}" fill="{PALETTE[k % len(PALETTE)]}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


class DirectoryBusy(RuntimeError):
    pass


@contextmanager
def locked_directory(path):
    """Create ``path`` and hold an exclusive lock on ``path/.lock`` for the duration."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    lock = path / ".lock"
    fd = os.open(lock, os.O_CREAT | os.O_RDWR, 0o644)
    try:
        try:
            fcntl.flock(fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
        except BlockingIOError:
            raise DirectoryBusy(f"output directory {path} is in use by another command") from None
        yield path
    finally:
        os.close(fd)
