"""CLI behaviour, exit codes and golden outputs.

Golden files live in ``tests/golden``; regenerate them with
``PERTGIBBS_REGEN_GOLDEN=1 pytest tests/test_cli.py``.
"""
import csv
import io
import json
import math
import os
import subprocess
import sys
from pathlib import Path

import pytest

from pertgibbs.cli import HEADERS, format_value, render, run_experiment

HERE = Path(__file__).parent
GOLDEN = HERE / "golden"
DATA = HERE / "data"

# one small, fast invocation per subcommand
CASES = {
    "two-state": ["two-state", "--p", "0.1", "--C", "1.5", "2"],
    "birth-death": ["birth-death", "--n", "30", "60", "--Cn", "6"],
    "product-bernoulli": ["product-bernoulli", "--n", "5", "10"],
    "tree-decay": ["tree-decay", "--depth", "3", "--beta", "0.05", "0.1", "--radii", "1", "2", "3"],
    "tree-scaling": ["tree-scaling", "--depths", "1", "2", "--replicas", "2", "--steps", "5000", "--counts", "4"],
    "subadditivity": ["subadditivity", "--pairs", "5", "--vertices", "4"],
    "coupling": ["coupling", "--states", "5", "--t-max", "5", "--replicas", "1000"],
    "audit-kernel": ["audit-kernel", "--graph", str(DATA / "chain3.json")],
    "audit-alternating": ["audit-kernel", "--graph", str(DATA / "ising_pair.json"),
                          "--obs", str(DATA / "ising_pair_obs.json"), "--m", "1"],
}


def run_to_dir(argv, out, fmt="csv", seed=7):
    code = run_experiment(argv + ["--seed", str(seed), "--format", fmt, "--out", str(out)])
    return code, {p.name: p.read_bytes() for p in sorted(Path(out).iterdir())}


def same_table(a, b):
    """CSV tables equal up to 1e-9 relative (1e-12 absolute) on numeric cells."""
    ra = list(csv.reader(io.StringIO(a.decode())))
    rb = list(csv.reader(io.StringIO(b.decode())))
    if len(ra) != len(rb) or ra[0] != rb[0]:
        return False
    for x, y in zip(ra[1:], rb[1:]):
        if len(x) != len(y):
            return False
        for u, v in zip(x, y):
            try:
                fu, fv = float(u), float(v)
            except ValueError:
                if u != v:
                    return False
                continue
            if not (math.isclose(fu, fv, rel_tol=1e-9, abs_tol=1e-12) or (math.isnan(fu) and math.isnan(fv))):
                return False
    return True


@pytest.mark.parametrize("name", sorted(CASES))
def test_golden(name, tmp_path):
    code, files = run_to_dir(CASES[name], tmp_path)
    assert code == 0
    target = GOLDEN / name
    if os.environ.get("PERTGIBBS_REGEN_GOLDEN"):
        target.mkdir(parents=True, exist_ok=True)
        for old in target.iterdir():
            old.unlink()
        for fname, data in files.items():
            (target / fname).write_bytes(data)
    expected = {p.name: p.read_bytes() for p in sorted(target.iterdir())}
    assert set(files) == set(expected)
    for fname in files:
        assert same_table(files[fname], expected[fname]), fname


@pytest.mark.parametrize("name", sorted(CASES))
def test_headers_match_declared_schema(name, tmp_path):
    argv = CASES[name]
    _, files = run_to_dir(argv, tmp_path)
    stem, fields = HEADERS[argv[0]]
    header = files[f"{stem}.csv"].split(b"\r\n", 1)[0].decode()
    assert header == ",".join(fields)


@pytest.mark.parametrize("name", ["two-state", "tree-scaling", "coupling", "subadditivity"])
@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_deterministic(name, fmt, tmp_path):
    a = run_to_dir(CASES[name], tmp_path / "a", fmt)
    b = run_to_dir(CASES[name], tmp_path / "b", fmt)
    assert a == b


def test_seed_changes_stochastic_output(tmp_path):
    _, a = run_to_dir(CASES["coupling"], tmp_path / "a", seed=1)
    _, b = run_to_dir(CASES["coupling"], tmp_path / "b", seed=2)
    assert a != b


def test_threads_do_not_change_values(tmp_path):
    argv = CASES["tree-scaling"]
    _, a = run_to_dir(argv + ["--threads", "1"], tmp_path / "a")
    _, b = run_to_dir(argv + ["--threads", "3"], tmp_path / "b")
    assert a == b


def test_two_state_example(tmp_path):
    out = tmp_path / "two_state.csv"
    assert run_experiment(["two-state", "--p", "0.1", "--C", "2", "--out", str(out)]) == 0
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert len(rows) == 1
    assert float(rows[0]["stat_dist"]) == pytest.approx(1 / 3, abs=1e-11)
    assert out.read_bytes().count(b"\r\n") == 2


def test_json_lines(tmp_path):
    out = tmp_path / "x.json"
    assert run_experiment(["two-state", "--C", "1.5", "2", "--format", "json", "--out", str(out)]) == 0
    lines = out.read_text().splitlines()
    assert len(lines) == 2
    rec = json.loads(lines[1])
    assert rec["C"] == 2 and rec["stat_dist"] == pytest.approx(1 / 3)
    assert set(rec) == set(HEADERS["two-state"][1])


def test_stdout(capsys):
    assert run_experiment(["product-bernoulli"]) == 0
    text = capsys.readouterr().out
    assert text.startswith("n,p,ptilde,kernel_tv,adell_bound,exact_tv\r\n10,0.4,0.41,0.01,")


def test_exit_codes(tmp_path, capsys):
    assert run_experiment(["no-such-command"]) == 2
    assert run_experiment([]) == 2
    assert run_experiment(["two-state", "--p", "0.7"]) == 2
    assert run_experiment(["birth-death", "--n", "10", "--Cn", "20"]) == 2
    assert run_experiment(["coupling", "--x", "99"]) == 2
    assert run_experiment(["tree-scaling", "--beta", "0.3"]) == 2
    assert run_experiment(["subadditivity", "--mu", str(DATA / "chain3.json")]) == 2
    assert run_experiment(["audit-kernel", "--graph", str(tmp_path / "missing.json")]) == 2
    err = capsys.readouterr().err
    assert "pertgibbs: error:" in err


def test_validation_error_writes_nothing(tmp_path):
    out = tmp_path / "bd.csv"
    assert run_experiment(["birth-death", "--n", "10", "--Cn", "20", "--out", str(out)]) == 2
    assert not out.exists()


def test_budget_exit_keeps_partial_results(tmp_path):
    out = tmp_path / "bd.csv"
    code = run_experiment(["birth-death", "--n", "30", "6000", "--Cn", "6", "--out", str(out)])
    assert code == 3
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert [r["n"] for r in rows] == ["30"]

    out = tmp_path / "sc.csv"
    code = run_experiment(CASES["tree-scaling"] + ["--max-steps", "10000", "--out", str(out)])
    assert code == 3
    rows = list(csv.DictReader(io.StringIO(out.read_text())))
    assert rows[0]["hellinger_upper"] != "nan" and rows[1]["hellinger_upper"] == "nan"


def test_state_space_budget(tmp_path):
    code = run_experiment(["audit-kernel", "--graph", str(DATA / "chain3.json"), "--budget", "4",
                           "--out", str(tmp_path / "a.csv")])
    assert code == 3


def test_audit_external_kernel(tmp_path):
    from pertgibbs.gibbs import gibbs_kernel
    from pertgibbs.factor_graph import FactorGraph
    from pertgibbs.measures import kernel_to_json

    g = FactorGraph.from_json(json.loads((DATA / "chain3.json").read_text()))
    kpath = tmp_path / "k.json"
    kpath.write_text(json.dumps(kernel_to_json(gibbs_kernel(g))))
    out = tmp_path / "audit.csv"
    assert run_experiment(["audit-kernel", "--graph", str(DATA / "chain3.json"), "--kernel", str(kpath),
                           "--out", str(out)]) == 0
    rows = {r["check"]: r for r in csv.DictReader(io.StringIO(out.read_text()))}
    assert float(rows["distance_to_gibbs"]["value"]) == 0
    assert all(r["pass"] == "true" for r in rows.values())


def test_svg(tmp_path):
    pytest.importorskip("matplotlib")
    out = tmp_path / "o"
    assert run_experiment(["coupling", "--t-max", "4", "--replicas", "100", "--svg", "--out", str(out)]) == 0
    svg = (out / "coupling.svg").read_text()
    assert svg.lstrip().startswith("<?xml") and "<svg" in svg
    again = tmp_path / "p"
    run_experiment(["coupling", "--t-max", "4", "--replicas", "100", "--svg", "--out", str(again)])
    assert (again / "coupling.svg").read_text() == svg


def test_format_value():
    assert format_value(1 / 3) == "0.333333333333"
    assert format_value(2.0) == "2"
    assert format_value(True) == "true"
    assert format_value(float("nan")) == "nan"
    assert format_value(7) == "7"


def test_render_quotes_fields():
    text = render([{"a": "x,y", "b": 1.5}], ("a", "b"), "csv")
    assert text == 'a,b\r\n"x,y",1.5\r\n'


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "pertgibbs.cli", "two-state"], capture_output=True, text=True)
    assert res.returncode == 0 and res.stdout.startswith("p,C,")
    res = subprocess.run([sys.executable, "-m", "pertgibbs.cli", "bogus"], capture_output=True, text=True)
    assert res.returncode == 2 and "usage" in res.stderr
