import fcntl
import os
import re

import numpy as np
import pytest

from mpcontrast import artifacts, cli, dynamics
from mpcontrast.artifacts import load_config, read_features, scatter_svg
from mpcontrast.dynamics import ConfigError
from mpcontrast.oracle import random_label_preserving_graph
from mpcontrast.graph import save_edge_list


def _run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def _files(d):
    return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file() and p.name != ".lock"}


def test_config_file_and_overrides(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text("# comment\ndynamics.alpha = 0.2  # trailing\n\nsynth.means = -2,0; 2,0\ngraph.self_loops = yes\n")
    cfg = load_config(str(path), ["dynamics.alpha=0.3", "dynamics.rule = alignment"])
    assert cfg["dynamics.alpha"] == 0.3 and cfg["dynamics.rule"] == "alignment"
    assert cfg["synth.means"] == ((-2.0, 0.0), (2.0, 0.0)) and cfg["graph.self_loops"] is True
    assert cfg["dynamics.steps"] == 1000


@pytest.mark.parametrize(
    "text, overrides, match",
    [
        ("dynamics.nope = 1\n", [], "exp.cfg:1: unknown key"),
        ("\ndynamics.alpha = fast\n", [], "exp.cfg:2: bad value"),
        ("dynamics.alpha\n", [], "exp.cfg:1"),
        ("", ["dynamics.alpha"], "--set"),
        ("", ["graph.self_loops=maybe"], "self_loops"),
    ],
)
def test_config_errors(tmp_path, text, overrides, match):
    path = tmp_path / "exp.cfg"
    path.write_text(text)
    with pytest.raises(ConfigError, match=match):
        load_config(str(path), overrides)


def test_config_errors_exit_2(tmp_path, capsys):
    code, _, err = _run(capsys, "run", "--set", "dynamics.alpha=-1", "--set", f"outputs.dir={tmp_path}")
    assert code == 2 and "alpha" in err
    code, _, err = _run(capsys, "synth", "--config", str(tmp_path / "missing.cfg"))
    assert code == 2
    code, _, err = _run(capsys, "run", "--set", "graph.path=/nonexistent.edges")
    assert code == 2 and "graph.path" in err
    code, _, _ = _run(capsys, "run", "--set", f"outputs.dir={tmp_path}", "--set", "dynamics.steps=1",
                      "--set", "dynamics.preprocess=bogus")
    assert code == 2


def test_synth_defaults_and_determinism(tmp_path, capsys):
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(capsys, "synth", "--set", f"outputs.dir={a}")[0] == 0
    assert _run(capsys, "synth", "--set", f"outputs.dir={b}")[0] == 0
    assert {str(p) for p in _files(a)} == {"points.csv", "labels.csv", "graph.edges"}
    assert _files(a) == _files(b)
    edges = [line for line in (a / "graph.edges").read_text().splitlines()[1:] if line]
    assert len(edges) >= 1
    assert (a / "points.csv").read_text().splitlines()[0] == "x0,x1,label"
    assert (a / "labels.csv").read_text().splitlines()[0] == "node,label"
    # rerun overwrites byte-identically
    _run(capsys, "synth", "--set", f"outputs.dir={a}")
    assert _files(a) == _files(b)


def test_synth_tiny_edgeless_warns(tmp_path, capsys):
    code, out, err = _run(capsys, "synth", "--set", "synth.points_per_class=1", "--set", f"outputs.dir={tmp_path}")
    assert code == 0 and "nodes=2" in out
    assert "isolated" in err


def _label_preserving_files(tmp_path):
    rng = np.random.default_rng(5)
    g = random_label_preserving_graph([6, 7], rng)
    (tmp_path / "g.edges").write_text(save_edge_list(g))
    artifacts.write_csv(tmp_path / "labels.csv", ["node", "label"], [[i, int(k)] for i, k in enumerate(g.labels)])
    return tmp_path / "g.edges", tmp_path / "labels.csv"


def test_run_writes_outputs_and_is_deterministic(tmp_path, capsys):
    args = ["run", "--set", "dynamics.steps=30"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert _run(capsys, *args, "--set", f"outputs.dir={a}")[0] == 0
    assert _run(capsys, *args, "--set", f"outputs.dir={b}")[0] == 0
    assert _files(a) == _files(b)
    header = (a / "trajectory.csv").read_text().splitlines()[0]
    assert header == "step,L_align,L_unif,L_total,dM_class_0,dM_class_1,residual"
    assert len((a / "trajectory.csv").read_text().splitlines()) == 1 + 4
    f = read_features(a / "features_final.csv")
    assert f.shape == (200, 2)
    assert sorted(p.name for p in (a / "snapshots").iterdir()) == ["step_00.csv", "step_10.csv", "step_20.csv", "step_30.csv"]
    svg = (a / "plot.svg").read_text()
    assert 'width="600" height="600"' in svg and svg.count("<circle") == 200


def test_run_round_trip_precision(tmp_path, capsys):
    _run(capsys, "run", "--set", "dynamics.steps=3", "--set", f"outputs.dir={tmp_path}")
    f = read_features(tmp_path / "features_final.csv")
    from mpcontrast.graph import GaussianMixtureConfig, build_synthetic_gaussians, build_threshold_graph

    pts, lab = build_synthetic_gaussians(GaussianMixtureConfig())
    g = build_threshold_graph(pts, 0.4, labels=lab)
    rec = dynamics.run(g, None, dynamics.DynamicsConfig(steps=3))
    assert np.array_equal(f, rec.final)


def test_run_zero_steps_single_row(tmp_path, capsys):
    assert _run(capsys, "run", "--set", "dynamics.steps=0", "--set", f"outputs.dir={tmp_path}")[0] == 0
    assert len((tmp_path / "trajectory.csv").read_text().splitlines()) == 2


def test_run_no_plot_when_not_2d(tmp_path, capsys):
    _run(capsys, "run", "--set", "dynamics.steps=1", "--set", "dynamics.dim=3", "--set", f"outputs.dir={tmp_path}")
    assert not (tmp_path / "plot.svg").exists()
    assert read_features(tmp_path / "features_final.csv").shape == (200, 3)


def test_run_alignment_dm_columns_decrease(tmp_path, capsys):
    edges, labels = _label_preserving_files(tmp_path)
    out = tmp_path / "out"
    code, _, _ = _run(capsys, "run", "--set", f"graph.path={edges}", "--set", f"graph.labels_path={labels}",
                      "--set", "dynamics.rule=alignment", "--set", "dynamics.steps=200",
                      "--set", f"outputs.dir={out}")
    assert code == 0
    _, body = artifacts.read_csv(out / "trajectory.csv")
    for col in (4, 5):
        assert np.all(np.diff(body[:, col]) <= 1e-9)


def test_run_given_init(tmp_path, capsys):
    edges, labels = _label_preserving_files(tmp_path)
    init = tmp_path / "init.csv"
    artifacts.write_csv(init, ["node", "f0"], [[i, float(i)] for i in range(13)])
    out = tmp_path / "out"
    code, _, _ = _run(capsys, "run", "--set", f"graph.path={edges}", "--set", "dynamics.init=given",
                      "--set", f"dynamics.init_path={init}", "--set", "dynamics.steps=0", "--set", f"outputs.dir={out}")
    assert code == 0
    np.testing.assert_array_equal(read_features(out / "features_final.csv")[:, 0], np.arange(13.0))
    code, _, err = _run(capsys, "run", "--set", f"graph.path={edges}", "--set", "dynamics.init=given",
                        "--set", f"outputs.dir={out}")
    assert code == 2 and "init_path" in err


def test_run_divergence_exit_3(tmp_path, capsys):
    code, _, err = _run(capsys, "run", "--set", "dynamics.rule=uniformity", "--set", "dynamics.alpha=5",
                        "--set", f"outputs.dir={tmp_path}")
    assert code == 3 and "diverged" in err
    last = (tmp_path / "trajectory.csv").read_text().splitlines()[-1]
    assert last.startswith("ERROR,")


def test_default_contrastive_run(tmp_path, capsys):
    assert _run(capsys, "run", "--set", f"outputs.dir={tmp_path}")[0] == 0
    _, body = artifacts.read_csv(tmp_path / "trajectory.csv")
    assert len(body) == 1000 // 10 + 1
    # residual over the last 100 simulation steps: non-increasing within 1e-3
    tail = body[body[:, 0] >= 900, -1]
    assert np.all(np.diff(tail) <= 1e-3)


def test_directory_lock(tmp_path, capsys):
    tmp_path.mkdir(exist_ok=True)
    fd = os.open(tmp_path / ".lock", os.O_CREAT | os.O_RDWR)
    fcntl.flock(fd, fcntl.LOCK_EX)
    try:
        code, _, err = _run(capsys, "synth", "--set", f"outputs.dir={tmp_path}")
        assert code == 2 and "in use" in err
    finally:
        os.close(fd)
    assert _run(capsys, "synth", "--set", f"outputs.dir={tmp_path}")[0] == 0


def _features_csv(path, f):
    artifacts.write_csv(path, ["node"] + [f"f{j}" for j in range(f.shape[1])], [[i, *r] for i, r in enumerate(f)])


def test_analyze_separated_and_collapsed(tmp_path, capsys):
    rng = np.random.default_rng(0)
    f = np.vstack([rng.normal(0, 0.1, (10, 2)), rng.normal(5, 0.1, (10, 2))])
    _features_csv(tmp_path / "f.csv", f)
    artifacts.write_csv(tmp_path / "l.csv", ["node", "label"], [[i, i // 10] for i in range(20)])
    code, out, _ = _run(capsys, "analyze", "--features", str(tmp_path / "f.csv"), "--labels", str(tmp_path / "l.csv"))
    assert code == 0 and "nn_accuracy=1.0" in out.splitlines()
    assert all(re.fullmatch(r"\w+=\S+", line) for line in out.splitlines())
    again = _run(capsys, "analyze", "--features", str(tmp_path / "f.csv"), "--labels", str(tmp_path / "l.csv"))[1]
    assert again == out

    _features_csv(tmp_path / "c.csv", np.ones((6, 2)))
    out = _run(capsys, "analyze", "--features", str(tmp_path / "c.csv"))[1]
    rank = float(re.search(r"effective_rank=(\S+)", out).group(1))
    assert rank == pytest.approx(1.0, abs=1e-6)


def test_analyze_with_graph_reports_residual(tmp_path, capsys):
    edges, labels = _label_preserving_files(tmp_path)
    _features_csv(tmp_path / "f.csv", np.zeros((13, 2)))
    code, out, _ = _run(capsys, "analyze", "--features", str(tmp_path / "f.csv"), "--graph", str(edges),
                        "--labels", str(labels))
    assert code == 0 and re.search(r"^residual=\S+$", out, re.M)


def test_analyze_parse_errors_name_line(tmp_path, capsys):
    (tmp_path / "f.csv").write_text("node,f0\n0,1.0\n1,abc\n")
    code, _, err = _run(capsys, "analyze", "--features", str(tmp_path / "f.csv"))
    assert code == 2 and ":3:" in err
    (tmp_path / "g.csv").write_text("node,f0\n0,1.0,2.0\n")
    code, _, err = _run(capsys, "analyze", "--features", str(tmp_path / "g.csv"))
    assert code == 2 and ":2:" in err


def test_check_exit_codes(capsys, monkeypatch):
    code, out, _ = _run(capsys, "check")
    assert code == 0 and "failed=0" in out
    assert all(line.startswith(("CHECK ", "SUMMARY ")) for line in out.splitlines())
    monkeypatch.setattr(dynamics, "alignment_step", lambda f, g, a: dynamics.dgc_step(f, g, 2 * a) + 1e-3)
    code, out, _ = _run(capsys, "check", "--seed", "0")
    assert code == 1 and "pass=false" in out


def test_check_sizes(capsys):
    code, out, _ = _run(capsys, "check", "--seed", "3", "--n", "10", "--m", "2")
    assert code == 0 and "n=10" in out
    assert _run(capsys, "check", "--n", "2")[0] == 2


def test_scatter_svg_palette_and_validation():
    svg = scatter_svg(np.array([[0.0, 0.0], [1.0, 1.0]]), [0, 11])
    assert svg.count("#1f77b4") == 1 and svg.count("#ff7f0e") == 1
    with pytest.raises(ValueError):
        scatter_svg(np.zeros((3, 3)))
