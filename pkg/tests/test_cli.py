import json
import math
import subprocess
import sys

import numpy as np
import pytest

from levelflow.chart import seed_radial, write_samples
from levelflow.cli import main
from levelflow.objfile import read_obj
from levelflow.scalarfield import parse


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


SHELL_ARGS = ["verify", "--f", "x^2+y^2+z^2", "--g", "1", "--n", "3", "--a", "1", "--b", "4",
              "--center", "0,0,0", "--box", "-2,2", "--seed", "42", "-q"]


def test_verify_sphere_shell(capsys):
    code, out, _ = run(capsys, *SHELL_ARGS, "--mc-samples", "1000000")
    report = json.loads(out)
    assert code == 0 and report["pass"]
    assert report["lhs"] == pytest.approx(28 * math.pi / 3, rel=1e-3)
    assert report["rhs"] == pytest.approx(28 * math.pi / 3, rel=1e-3)


def test_verify_is_byte_identical(capsys, tmp_path):
    args = [*SHELL_ARGS, "--mc-samples", "50000", "--u-grid", "16,32", "--t-nodes", "9"]
    _, first, _ = run(capsys, *args, "--out", str(tmp_path / "a.json"))
    _, second, _ = run(capsys, *args)
    assert first == second
    assert (tmp_path / "a.json").read_text() == first


def test_verify_critical_band(capsys):
    code, out, err = run(capsys, "verify", "--f", "x^2+y^2", "--g", "1", "--n", "2", "--a", "-1",
                         "--b", "1", "--center", "0,0", "--box", "-2,2", "-q")
    report = json.loads(out)
    assert code == 2
    assert report["valid"] is False and report["lhs"] is None
    assert report["error"]["type"] == "CriticalPointDetected"
    assert "CriticalPointDetected" in err


def test_verify_fail_exit_code(capsys):
    code, out, _ = run(capsys, "verify", "--f", "x^2+y^2", "--n", "2", "--a", "1", "--b", "4",
                       "--box", "-2,2", "--mc-samples", "1000", "--u-grid", "32", "--t-nodes", "5",
                       "--rel-tol", "1e-9", "-q")
    assert code == 1
    assert json.loads(out)["pass"] is False


def test_verify_tensor_grid_and_box_per_axis(capsys):
    code, out, _ = run(capsys, "verify", "--f", "x^2/4+y^2", "--n", "2", "--a", "1", "--b", "4",
                       "--box-per-axis", "-4,4;-2,2", "--grid-nodes", "1024", "-q")
    report = json.loads(out)
    assert code == 0
    assert report["diagnostics"]["volume_method"] == "tensor_grid"
    assert report["lhs"] == pytest.approx(6 * math.pi, rel=1e-3)


def test_verify_two_charts(capsys):
    code, out, _ = run(capsys, "verify", "--f", "x^2+y^2", "--n", "2", "--a", "1", "--b", "4",
                       "--box", "-2,2", "--grid-nodes", "512", "--charts", "2", "-q")
    report = json.loads(out)
    assert code == 0 and report["diagnostics"]["charts"] == 2
    assert report["rhs"] == pytest.approx(3 * math.pi, rel=1e-6)


def test_verify_samples_file(capsys, tmp_path):
    f = parse("x^2+y^2+z^2", 3)
    path = tmp_path / "seed.txt"
    write_samples(path, seed_radial(f, 1.0, (0, 0, 0), (32, 64)))
    code, out, _ = run(capsys, "verify", "--f", "x^2+y^2+z^2", "--n", "3", "--a", "1", "--b", "4",
                       "--box", "-2,2", "--mc-samples", "200000", "--samples-file", str(path),
                       "--periodic", "1", "-q")
    assert code == 0
    assert json.loads(out)["rhs"] == pytest.approx(28 * math.pi / 3, rel=1e-2)


@pytest.mark.parametrize("argv", [
    ["verify", "--g", "1", "--n", "2", "--a", "1", "--b", "4", "--box", "-2,2"],  # no --f
    ["verify", "--f", "x^2+y^2", "--n", "2", "--a", "1", "--b", "4"],  # no box
    ["verify", "--f", "x^2+y^2", "--n", "2", "--a", "1", "--b", "4", "--box", "a,b"],
    ["frobnicate"],
    [],
])
def test_usage_errors(capsys, argv):
    code, _, err = run(capsys, *argv)
    assert code == 64
    assert "usage" in err


def test_bad_expression_exit_code(capsys):
    code, _, err = run(capsys, "transport", "--f", "x^2+", "--n", "2", "--p", "1,0", "--a", "1",
                       "--b", "2", "-q")
    assert code == 2 and "ParseError" in err


def test_transport_table(capsys):
    code, out, _ = run(capsys, "transport", "--f", "x^2+y^2", "--n", "2", "--p", "1,0",
                       "--a", "1", "--b", "4", "--t-nodes", "4", "-q")
    rows = [list(map(float, line.split())) for line in out.strip().splitlines()]
    assert code == 0
    assert [r[0] for r in rows] == [1.0, 2.0, 3.0, 4.0]
    np.testing.assert_allclose(rows[-1][1:], [2.0, 0.0], atol=1e-9)


def test_transport_degenerate(capsys):
    code, out, _ = run(capsys, "transport", "--f", "x^2+y^2", "--n", "2", "--p", "0.6,0.8",
                       "--a", "1", "--b", "1", "-q")
    assert code == 0
    assert [float(v) for v in out.split()] == [1.0, 0.6, 0.8]


def test_transport_off_level(capsys):
    code, _, err = run(capsys, "transport", "--f", "x^2+y^2", "--n", "2", "--p", "1.1,0",
                       "--a", "1", "--b", "4", "-q")
    assert code == 2 and "LevelMismatch" in err


def test_mesh_export(capsys, tmp_path):
    prefix = tmp_path / "sphere"
    code, out, _ = run(capsys, "mesh", "--f", "x^2+y^2+z^2", "--n", "3", "--a", "1", "--b", "4",
                       "--t-nodes", "2", "--u-grid", "8,16", "--out", str(prefix), "-q")
    assert code == 0
    files = json.loads(out)["files"]
    assert [entry["t"] for entry in files] == [1.0, 4.0]
    verts, normals, faces = read_obj(files[-1]["path"])
    assert len(verts) == 128 and len(normals) == 128
    assert len(faces) == 2 * 7 * 16
    np.testing.assert_allclose(np.linalg.norm(verts, axis=1), 2.0, atol=1e-6)
    assert faces.min() == 0 and faces.max() == 127


def test_mesh_obj_records(capsys, tmp_path):
    prefix = tmp_path / "m"
    run(capsys, "mesh", "--f", "x^2+y^2+z^2", "--n", "3", "--a", "1", "--b", "1",
        "--u-grid", "4,8", "--out", str(prefix), "-q")
    lines = (tmp_path / "m_t0.obj").read_text().splitlines()
    kinds = {line.split()[0] for line in lines if line and not line.startswith("#")}
    assert kinds == {"v", "vn", "f"}
    ids = [int(tok.split("//")[0]) for line in lines if line.startswith("f ")
           for tok in line.split()[1:]]
    assert min(ids) == 1 and max(ids) == 32


def test_mesh_needs_three_dimensions(capsys, tmp_path):
    code, _, _ = run(capsys, "mesh", "--f", "x^2+y^2", "--n", "2", "--a", "1", "--b", "4",
                     "--out", str(tmp_path / "c"), "-q")
    assert code == 2


def test_grad_check(capsys):
    code, out, _ = run(capsys, "grad-check", "--f", "exp(x)*sin(y)", "--n", "2", "--seed", "3", "-q")
    report = json.loads(out)
    assert code == 0 and report["pass"]
    assert report["checked"] == 100
    assert report["max_scaled_error"] <= 1e-6


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "levelflow.cli", "transport", "--f", "x1", "--n", "1", "--p", "0",
         "--a", "0", "--b", "5", "--t-nodes", "2", "-q"],
        capture_output=True, text=True, check=True,
    )
    assert proc.stdout.split() == ["0.0", "0.0", "5.0", "5.0"]
