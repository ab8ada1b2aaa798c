import shutil
import subprocess
import sys

import pytest

from fracflow.cli import FLOW_CSV_HEADER, main
from fracflow.config import CONFIG_KEYS, load
from fracflow.geometry import IndicatorGrid


def _run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_list_names_every_experiment(capsys):
    code, out, _ = _run(capsys, "list")
    assert code == 0
    names = [l.split("\t")[0] for l in out.strip().splitlines()]
    assert "ball-shrink" in names and "sandwich-regularization" in names and len(names) == 10


def test_experiment_help_lists_config_keys(capsys):
    with pytest.raises(SystemExit) as ex:
        main(["experiment", "--help"])
    assert ex.value.code == 0
    out = capsys.readouterr().out
    for key in CONFIG_KEYS:
        assert f"  {key}:" in out


def test_bad_order_exits_with_config_error(capsys):
    code, _, err = _run(capsys, "verify-modulus", "--s", "1.5")
    assert code == 2 and "config error" in err and "'s'" in err


def test_unknown_experiment(capsys):
    code, _, err = _run(capsys, "experiment", "nope")
    assert code == 2 and "half-space-curvature" in err


def test_curvature_and_perimeter_csv(capsys, tmp_path):
    code, out, _ = _run(capsys, "curvature", "--shape", "disk", "--n", "32", "--h", "0.0625",
                        "--radius", "0.5", "--max-points", "3")
    lines = out.strip().splitlines()
    assert code == 0 and lines[0] == "x,x_d,H_s,s,d,h" and len(lines) == 4
    assert all(float(l.split(",")[2]) > 0 for l in lines[1:])
    out_file = tmp_path / "p.csv"
    code, _, _ = _run(capsys, "perimeter", "--shape", "disk", "--n", "32", "--h", "0.0625",
                      "--radius", "0.5", "--out", str(out_file))
    head, row = out_file.read_text().strip().splitlines()
    assert code == 0 and head == "perimeter,s,d,h"
    assert float(row.split(",")[0]) > 0


def test_curvature_of_grid_file(capsys, tmp_path):
    E = IndicatorGrid.from_predicate(lambda x, z: z < 0, 16, 16, 0.125, (0.0, 0.0), True)
    p = tmp_path / "h.grid"
    E.save(p)
    code, out, _ = _run(capsys, "curvature", "--grid", str(p), "--max-points", "4")
    assert code == 0
    assert all(abs(float(l.split(",")[2])) < 1e-10 for l in out.strip().splitlines()[1:])


def test_graph_flow_records_and_snapshots(capsys, tmp_path):
    snap = tmp_path / "snaps"
    code, out, _ = _run(capsys, "graph-flow", "--nx", "16", "--t-end", "0.01", "--record-every",
                        "2", "--snapshots", str(snap))
    lines = out.strip().splitlines()
    assert code == 0 and lines[0] == FLOW_CSV_HEADER
    assert lines[-1].split(",")[0] == "0.01"
    assert "np." not in out
    assert all(l.endswith("true") for l in lines[1:])
    files = sorted(p.name for p in snap.iterdir())
    assert files[0] == "snapshot_00000.grid" and len(files) == len(lines) - 1
    assert IndicatorGrid.load(snap / files[-1]).nx == 16


def test_graph_flow_rejects_large_step(capsys):
    code, _, err = _run(capsys, "graph-flow", "--nx", "16", "--dt", "1.0", "--t-end", "1.0")
    assert code == 2 and "stability limit" in err


def test_levelset_flow_half_space(capsys, tmp_path):
    snap = tmp_path / "ls"
    code, out, _ = _run(capsys, "levelset-flow", "--init", "half-space", "--nx", "8", "--nz", "32",
                        "--t-end", "0.003", "--record-every", "100", "--snapshots", str(snap))
    lines = out.strip().splitlines()
    assert code == 0 and len(lines) == 3
    t, gap, lip, ok = lines[-1].split(",")
    assert float(gap) == 0.0 and float(lip) == 0.0 and ok == "true"
    assert len(list(snap.iterdir())) == 2


def test_experiment_writes_report_and_config(capsys, tmp_path):
    out_dir = tmp_path / "run"
    cfg = tmp_path / "run.cfg"
    code, out, _ = _run(capsys, "experiment", "half-space-curvature", "--out", str(out_dir),
                        "--dump-config", str(cfg), "--seed", "4")
    assert code == 0 and out.startswith("[PASS]  1 half-space")
    assert {"criteria.csv", "report.txt", "half_space.csv"} <= {p.name for p in out_dir.iterdir()}
    c = load(str(cfg))
    assert c.seed == 4 and c.output_dir == str(out_dir)


def test_experiment_reads_config_file(capsys, tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"experiment = half-space-curvature\noutput_dir = {tmp_path / 'o'}\n")
    code, out, _ = _run(capsys, "experiment", "half-space-curvature", "--config", str(cfg))
    assert code == 0 and (tmp_path / "o" / "report.txt").exists()
    cfg.write_text("s = 2\n")
    code, _, err = _run(capsys, "experiment", "half-space-curvature", "--config", str(cfg))
    assert code == 2 and "config error" in err


def test_verify_modulus_small_grid(capsys, tmp_path):
    csv = tmp_path / "m.csv"
    code, out, _ = _run(capsys, "verify-modulus", "--grid-t", "6", "--grid-xi", "8", "--out",
                        str(csv))
    assert code == 0 and out.strip().startswith("K=") and out.strip().endswith("all_pass=True")
    assert len(csv.read_text().strip().splitlines()) == 1 + 6 * 8


@pytest.mark.skipif(shutil.which("fracflow") is None, reason="console script not installed")
def test_console_script_entry_point():
    r = subprocess.run(["fracflow", "list"], capture_output=True, text=True, check=False)
    assert r.returncode == 0 and "comparison" in r.stdout
    r = subprocess.run([sys.executable, "-m", "fracflow.cli", "perimeter", "--s", "0"],
                       capture_output=True, text=True, check=False)
    assert r.returncode == 2
