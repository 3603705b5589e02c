import csv
import json

import pytest

from hpdpg.app import cli
from hpdpg.app.config import ConfigError, parse_config
from hpdpg.app.vtk import export_vtk, read_vtu_counts
from hpdpg.mesh import Mesh, RefFlag, refine_with_closure


def test_config_defaults_and_comments():
    cfg = parse_config("problem = boundary_layer  # desk\n# comment\neps = 0.05\nvtk = no\n")
    assert cfg.theta == 0.75 and cfg.alpha == 1.0 and cfg.dp == 1 and cfg.p_max == 6
    assert cfg.eps == 0.05 and cfg.vtk is False
    assert parse_config("problem = fichera", mode="iso-p3").mode == "iso-p3"


@pytest.mark.parametrize("text", [
    "problem = nope",
    "problem = fichera\ntheta = 0",
    "problem = fichera\ntheta = 1.5",
    "problem = fichera\ntol = 0",
    "problem = fichera\np_max = 1",
    "problem = fichera\nmode = iso-p9",
    "problem = fichera\nbogus = 1",
    "problem = fichera\nmax_iter = many",
    "problem fichera",
])
def test_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def _write(tmp_path, body):
    p = tmp_path / "run.cfg"
    p.write_text(body)
    return str(p)


def test_run_poly_sanity(tmp_path):
    cfg = _write(tmp_path, "problem = poly_sanity\ndegree = 2\ntol = 1e-8\n")
    out = tmp_path / "o"
    assert cli.main(["run", "--config", cfg, "--out", str(out)]) == cli.EXIT_OK
    rows = list(csv.reader(open(out / "convergence.csv")))
    assert tuple(rows[0]) == cli.CSV_COLUMNS
    assert len(rows) == 2 and float(rows[1][3]) < 1e-9
    summary = json.load(open(out / "summary.json"))
    assert summary["reason"] == "converged" and summary["iterations"] == 1
    assert read_vtu_counts(out / "mesh_001.vtu") == (8, 1)


def test_exit_codes(tmp_path):
    assert cli.main(["run", "--config", _write(tmp_path, "problem = nope\n")]) == cli.EXIT_CONFIG
    assert cli.main(["run", "--config", str(tmp_path / "missing.cfg")]) == cli.EXIT_CONFIG
    cfg = _write(tmp_path, "problem = boundary_layer\neps = 0.2\nmax_iter = 2\nvtk = false\n")
    assert cli.main(["run", "--config", cfg, "--out", str(tmp_path / "b")]) == cli.EXIT_BUDGET
    assert cli.main(["verify", "--suite", "nope"]) == cli.EXIT_CONFIG


def test_rerun_identical_csv(tmp_path, monkeypatch):
    monkeypatch.setenv("HPDPG_THREADS", "1")
    body = ("problem = boundary_layer\neps = 0.2\nmax_iter = 3\np_max = 4\n"
            "vtk = false\ntiming = false\n")
    cfg = _write(tmp_path, body)
    texts = []
    for k in range(2):
        out = tmp_path / f"r{k}"
        cli.main(["run", "--config", cfg, "--out", str(out)])
        texts.append((out / "convergence.csv").read_bytes())
    assert texts[0] == texts[1]
    lines = texts[0].decode().splitlines()
    nd = [int(l.split(",")[1]) for l in lines[1:]]
    assert all(b > a for a, b in zip(nd, nd[1:]))
    assert all(l.endswith(",") for l in lines[1:])


def test_vtk_counts(tmp_path):
    m = Mesh.box_grid()
    assert export_vtk(tmp_path / "a.vtu", m) == 1
    assert read_vtu_counts(tmp_path / "a.vtu") == (8, 1)
    refine_with_closure(m, [(m.leaves[0], RefFlag.H2_X)])
    export_vtk(tmp_path / "b.vtu", m, eta={e: 1.0 for e in m.leaves})
    assert read_vtu_counts(tmp_path / "b.vtu")[1] == 2
    refine_with_closure(m, [(m.leaves[0], RefFlag.H8)])
    export_vtk(tmp_path / "c.vtu", m)
    assert read_vtu_counts(tmp_path / "c.vtu")[1] == len(m.leaves)
    text = (tmp_path / "b.vtu").read_text()
    for name in ("px", "py", "pz", "eta"):
        assert f'Name="{name}"' in text
    with pytest.raises(OSError):
        export_vtk(tmp_path / "no" / "such" / "dir.vtu", m)
