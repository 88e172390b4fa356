import json
import subprocess
import sys

import pytest

from brwgibbs.cli import COMMANDS, STATEMENTS, build_parser, run
from brwgibbs.config import RunConfig, resolve


def read(path):
    return path.read_text(encoding="utf-8")


def test_every_command_has_a_statement():
    assert set(COMMANDS) == set(STATEMENTS)
    parser = build_parser()
    for name in COMMANDS:
        ns = parser.parse_args([name, "--seed", "1"])
        assert ns.command == name


def test_simulate_root_only(tmp_path):
    assert run(["simulate", "--n", "0", "--seed", "3", "--out", str(tmp_path)]) == 0
    summary = json.loads(read(tmp_path / "summary.json"))
    assert summary["results"]["nodes"] == 1 and summary["results"]["generation_sizes"] == [1]
    lines = read(tmp_path / "tree.csv").splitlines()
    assert lines[0].startswith("# statement: ") and lines[1] == "# command: simulate"
    assert lines[2] == f"# config_hash: {summary['config_hash']}" and lines[3] == "# seed: 3"


def test_missing_seed_exits_2(tmp_path, capsys):
    assert run(["simulate", "--out", str(tmp_path)]) == 2
    assert "--seed is required" in capsys.readouterr().err


def test_unknown_command_exits_2():
    with pytest.raises(SystemExit) as exc:
        run(["no-such-command", "--seed", "1"])
    assert exc.value.code == 2


def test_bad_config_key_exits_2(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"simulate": {"bogus": 1}}))
    assert run(["simulate", "--config", str(cfg), "--seed", "1", "--out", str(tmp_path / "o")]) == 2


def test_config_sections_and_flag_precedence(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"defaults": {"seed": 4, "n": 3}, "simulate": {"n": 2}}))
    assert run(["simulate", "--config", str(cfg), "--out", str(tmp_path / "a")]) == 0
    s = json.loads(read(tmp_path / "a" / "summary.json"))
    assert s["seed"] == 4 and s["config"]["n"] == 2
    assert run(["simulate", "--config", str(cfg), "--n", "1", "--out", str(tmp_path / "b")]) == 0
    assert json.loads(read(tmp_path / "b" / "summary.json"))["config"]["n"] == 1


def test_resolve_layers():
    cfg = resolve("x", {"n": 5, "k": 1}, {"defaults": {"k": 2}, "x": {"beta": 3.0}}, {"k": None, "seed": 9})
    assert cfg.n == 5 and cfg.beta == 3.0 and cfg.seed == 9 and cfg.params == {"k": 2}


def test_hash_ignores_out_and_workers():
    a = RunConfig("simulate", seed=1, out="a", workers=1)
    b = RunConfig("simulate", seed=1, out="b", workers=4)
    c = RunConfig("simulate", seed=2)
    assert a.config_hash() == b.config_hash() != c.config_hash()


def test_overlap_limit_column(tmp_path):
    args = ["overlap", "--n", "6", "--replicas", "20", "--limit-replicas", "4000", "--seed", "5",
            "--out", str(tmp_path), "--gates"]
    run(args)
    s = json.loads(read(tmp_path / "summary.json"))
    limit = s["results"]["limit"]
    assert abs(limit["mean"] - 0.5) <= 4 * limit["se"] + 1e-4
    assert [g["name"] for g in s["gates"]] == ["flat", "level", "limit"]
    header = read(tmp_path / "overlap.csv").splitlines()[0]
    assert header.startswith("# statement: overlap")


@pytest.mark.parametrize("argv", [
    ["simulate", "--n", "6"],
    ["martingales", "--n", "5", "--replicas", "30"],
    ["overlap", "--n", "5", "--replicas", "8", "--limit-replicas", "50"],
    ["renewal", "--replicas", "200", "--x-grid", "0,1,3"],
])
def test_byte_identical_reruns(tmp_path, argv):
    outs = []
    for i, workers in enumerate(("1", "1", "2")):
        d = tmp_path / str(i)
        assert run(argv + ["--seed", "11", "--workers", workers, "--out", str(d)]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    assert outs[0] == outs[1] == outs[2]


def test_gates_set_exit_status(tmp_path):
    # pd-sample at a modest size passes its moment gate
    code = run(["pd-sample", "--replicas", "2000", "--seed", "1", "--out", str(tmp_path), "--gates"])
    s = json.loads(read(tmp_path / "summary.json"))
    assert code == (0 if s["all_passed"] else 1)


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "brwgibbs.cli", "simulate", "--n", "2", "--seed", "1",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0 and (tmp_path / "tree.csv").exists()
