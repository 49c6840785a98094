"""Command-line entry point: ``synth``, ``run``, ``analyze`` and ``check``.

Exit codes: 0 success, 1 check failure, 2 config or input error, 3 divergence.
"""

from __future__ import annotations

import argparse
import sys
import warnings
from pathlib import Path

import numpy as np

from . import analysis, artifacts, dynamics, oracle
from .artifacts import DirectoryBusy, load_config, section
from .dynamics import ConfigError, DivergenceError, DynamicsConfig
from .graph import (
    GaussianMixtureConfig,
    IsolatedNodeWarning,
    build_synthetic_gaussians,
    build_threshold_graph,
    load_edge_list,
    save_edge_list,
)

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def _gaussian_config(cfg) -> GaussianMixtureConfig:
    try:
        return GaussianMixtureConfig(**section(cfg, "synth"))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"synth: {exc}") from None


def _check_graph_section(cfg) -> None:
    if not cfg["graph.epsilon"] > 0:
        raise ConfigError("graph.epsilon must be positive")
    if cfg["graph.weight_mode"] not in ("degree", "uniform"):
        raise ConfigError("graph.weight_mode must be 'degree' or 'uniform'")
    for key in ("graph.path", "graph.labels_path", "graph.groups_path", "dynamics.init_path"):
        if cfg[key] and not Path(cfg[key]).is_file():
            raise ConfigError(f"{key}: no such file {cfg[key]!r}")


def _synthesize(cfg):
    points, labels = build_synthetic_gaussians(_gaussian_config(cfg))
    g = build_threshold_graph(
        points, cfg["graph.epsilon"], cfg["graph.self_loops"], cfg["graph.weight_mode"], labels=labels
    )
    return points, labels, g


def _load_graph(cfg):
    labels = groups = None
    if cfg["graph.labels_path"]:
        labels = artifacts.read_node_column(cfg["graph.labels_path"], "label")
    if cfg["graph.groups_path"]:
        groups = artifacts.read_node_column(cfg["graph.groups_path"], "group")
    text = Path(cfg["graph.path"]).read_text()
    return load_edge_list(text, cfg["graph.weight_mode"], labels=labels, groups=groups)


def _report_warnings(g) -> None:
    for msg in g.warnings:
        print(f"warning: {msg}", file=sys.stderr)


def cmd_synth(cfg) -> int:
    _check_graph_section(cfg)
    points, labels, g = _synthesize(cfg)
    _report_warnings(g)
    with artifacts.locked_directory(cfg["outputs.dir"]) as out:
        artifacts.write_csv(out / "points.csv", ["x0", "x1", "label"], [[x, y, int(k)] for (x, y), k in zip(points, labels)])
        artifacts.write_csv(out / "labels.csv", ["node", "label"], [[i, int(k)] for i, k in enumerate(labels)])
        (out / "graph.edges").write_text(save_edge_list(g))
    print(f"nodes={g.n} edges={int(np.count_nonzero(np.triu(g.adjacency, 1)))} isolated={int(g.isolated.sum())}")
    return EXIT_OK


def _dynamics_config(cfg) -> DynamicsConfig:
    fields = {k: v for k, v in section(cfg, "dynamics").items() if k != "init_path"}
    return DynamicsConfig(**fields).validate()


def _write_trajectory(path, record, error: str | None = None) -> None:
    rows = record.rows()
    if error is not None:
        rows.append(["ERROR", error] + [""] * (len(record.columns) - 2))
    artifacts.write_csv(path, record.columns, rows)


def _feature_rows(f):
    return [[i, *row] for i, row in enumerate(f)]


def cmd_run(cfg) -> int:
    _check_graph_section(cfg)
    dcfg = _dynamics_config(cfg)
    g = _load_graph(cfg) if cfg["graph.path"] else _synthesize(cfg)[2]
    _report_warnings(g)
    f0 = None
    if dcfg.init == "given":
        if not cfg["dynamics.init_path"]:
            raise ConfigError("dynamics.init = given needs dynamics.init_path")
        f0 = artifacts.read_features(cfg["dynamics.init_path"])
        if f0.shape[0] != g.n:
            raise ConfigError(f"initial features have {f0.shape[0]} rows, graph has {g.n} nodes")

    with artifacts.locked_directory(cfg["outputs.dir"]) as out:
        try:
            record = dynamics.run(g, f0, dcfg)
        except DivergenceError as exc:
            _write_trajectory(out / "trajectory.csv", exc.record, str(exc))
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_DIVERGED
        _write_trajectory(out / "trajectory.csv", record)
        m = record.final.shape[1]
        header = ["node"] + [f"f{j}" for j in range(m)]
        artifacts.write_csv(out / "features_final.csv", header, _feature_rows(record.final))
        if cfg["outputs.snapshots"]:
            snap = out / "snapshots"
            snap.mkdir(exist_ok=True)
            width = len(str(dcfg.steps))
            for t, f in record.snapshots.items():
                artifacts.write_csv(snap / f"step_{t:0{width}d}.csv", header, _feature_rows(f))
        if cfg["outputs.plot"] and m == 2:
            (out / "plot.svg").write_text(artifacts.scatter_svg(record.final, g.labels))
    print(f"steps={dcfg.steps} recorded={len(record.steps)} residual={record.residual[-1]!r}")
    return EXIT_OK


def cmd_analyze(cfg, features: str, graph: str | None, labels: str | None) -> int:
    f = artifacts.read_features(features)
    lab = artifacts.read_node_column(labels, "label") if labels else np.zeros(f.shape[0], dtype=int)
    if lab.shape[0] != f.shape[0]:
        raise ConfigError(f"labels have {lab.shape[0]} rows, features have {f.shape[0]}")
    report = analysis.clustering_report(f, lab)
    for key, value in report.as_dict().items():
        print(f"{key}={value!r}" if isinstance(value, float) else f"{key}={value}")
    if graph:
        g = load_edge_list(Path(graph).read_text(), cfg["graph.weight_mode"])
        if g.n != f.shape[0]:
            raise ConfigError(f"graph has {g.n} nodes, features have {f.shape[0]} rows")
        print(f"residual={analysis.equilibrium_residual(f, g, cfg['dynamics.temperature'])!r}")
    return EXIT_OK


def cmd_check(cfg) -> int:
    if cfg["check.n"] < 4 or cfg["check.m"] < 1:
        raise ConfigError("check.n must be at least 4 and check.m at least 1")
    reports = oracle.run_checks(cfg["check.seed"], cfg["check.n"], cfg["check.m"])
    for r in reports:
        print(r.line())
    failed = [r.name for r in reports if not r.passed]
    print(f"SUMMARY checks={len(reports)} failed={len(failed)}")
    return EXIT_CHECK if failed else EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mpcontrast", description="Contrastive feature dynamics on augmentation graphs.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("synth", "generate the Gaussian-mixture points and threshold graph"),
        ("run", "run feature dynamics and write the trajectory"),
        ("analyze", "report clustering metrics of a feature table"),
        ("check", "run the verification suite"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat 'section.key = value' config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")
        if name == "analyze":
            p.add_argument("--features", required=True)
            p.add_argument("--graph")
            p.add_argument("--labels")
        if name == "check":
            p.add_argument("--seed", type=int)
            p.add_argument("--n", type=int)
            p.add_argument("--m", type=int)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.set)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", IsolatedNodeWarning)
            if args.command == "synth":
                return cmd_synth(cfg)
            if args.command == "run":
                return cmd_run(cfg)
            if args.command == "analyze":
                return cmd_analyze(cfg, args.features, args.graph, args.labels)
            for key in ("seed", "n", "m"):
                if getattr(args, key) is not None:
                    cfg[f"check.{key}"] = getattr(args, key)
            return cmd_check(cfg)
    except (ConfigError, DirectoryBusy, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
