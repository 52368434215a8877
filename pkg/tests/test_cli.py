import csv
import json
from pathlib import Path

import pytest

import lrqte.eom
from lrqte.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, cost_table, main
from lrqte.config import ConfigKeyError, from_dict, load
from lrqte.estimator import count_circuits

CONFIGS = Path(__file__).resolve().parent.parent / "configs"

BASE = {
    "lattice": {"kind": "chain", "length": 2},
    "model": {"jz": 1.0, "h": 0.5, "gamma": 1.0},
    "evolve": {"dt": 0.05, "t_final": 0.5},
    "ansatz": {"kind": "I", "rank": 4, "layers": 2},
    "oracle": {"enabled": True},
}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg, indent=2))
    return p


def with_(cfg, **sections):
    out = json.loads(json.dumps(cfg))
    for sec, vals in sections.items():
        out.setdefault(sec, {}).update(vals)
    return out


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_run_writes_artifacts(tmp_path):
    p = write_cfg(tmp_path, BASE)
    assert main(["run", str(p), "-o", str(tmp_path / "out")]) == EXIT_OK
    rows = read_csv(tmp_path / "out" / "timeseries.csv")
    assert rows[0][:6] == ["t", "s_x", "s_z", "trace", "purity", "infidelity"]
    assert len(rows) == 1 + 11
    assert all(len(r) == len(rows[0]) for r in rows)
    assert float(rows[-1][0]) == pytest.approx(0.5)
    m = json.loads((tmp_path / "out" / "timeseries.manifest.json").read_text())
    assert m["status"] == "ok" and m["seed"] == 0 and "numpy" in m["versions"] and m["wall_clock_s"] > 0
    assert m["config"]["ansatz"]["rank"] == 4 and m["config"]["regularization"]["scheme"] == "eigen_rescale"
    assert (tmp_path / "out" / "timeseries.log").read_text().count("step ") >= 10


def test_zero_final_time_one_row(tmp_path):
    p = write_cfg(tmp_path, with_(BASE, evolve={"t_final": 0.0}))
    assert main(["run", str(p), "-o", str(tmp_path / "o")]) == EXIT_OK
    rows = read_csv(tmp_path / "o" / "timeseries.csv")
    assert len(rows) == 2 and float(rows[1][2]) < -0.99


def test_rerun_byte_identical(tmp_path):
    cfg = with_(BASE, backend={"mode": "shots", "shots": 500, "seed": 11}, evolve={"t_final": 0.2})
    p = write_cfg(tmp_path, cfg)
    main(["run", str(p), "-o", str(tmp_path / "a")])
    main(["run", str(p), "-o", str(tmp_path / "b")])
    a = (tmp_path / "a" / "timeseries.csv").read_bytes()
    assert a == (tmp_path / "b" / "timeseries.csv").read_bytes()
    p2 = write_cfg(tmp_path, with_(cfg, backend={"seed": 12}), "c.json")
    main(["run", str(p2), "-o", str(tmp_path / "c")])
    assert a != (tmp_path / "c" / "timeseries.csv").read_bytes()


def test_seventeen_digits(tmp_path):
    p = write_cfg(tmp_path, with_(BASE, evolve={"t_final": 0.1}))
    main(["run", str(p), "-o", str(tmp_path / "o")])
    val = read_csv(tmp_path / "o" / "timeseries.csv")[2][2]
    assert float(format(float(val), ".17g")) == float(val)
    assert len(val.lstrip("-").replace(".", "").lstrip("0")) >= 15


@pytest.mark.parametrize(
    "patch,key",
    [
        ({"evolve": {"dt": -1}}, "evolve.dt"),
        ({"ansatz": {"rank": 9}}, "ansatz.rank"),
        ({"ansatz": {"kind": "III"}}, "ansatz.kind"),
        ({"backend": {"mode": "shots", "shots": 0}}, "backend.shots"),
        ({"model": {"jz": "one"}}, "model.jz"),
        ({"model": {"mu": 1}}, "model.mu"),
        ({"regularization": {"scheme": "magic"}}, "regularization.scheme"),
    ],
)
def test_config_errors(tmp_path, capsys, patch, key):
    p = write_cfg(tmp_path, with_(BASE, **patch))
    assert main(["run", str(p), "-o", str(tmp_path / "o")]) == EXIT_CONFIG
    err = capsys.readouterr().err
    assert key in err and "line " in err


def test_config_error_line_number(tmp_path):
    text = json.dumps(with_(BASE, evolve={"dt": 0}), indent=2)
    p = tmp_path / "c.json"
    p.write_text(text)
    with pytest.raises(ConfigKeyError) as exc:
        load(p)
    want = next(i for i, line in enumerate(text.splitlines(), 1) if '"dt"' in line)
    assert exc.value.line == want and exc.value.key == "evolve.dt"


def test_invalid_json(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "model": {\n    "jz": 1.0,\n  }\n}')
    assert main(["run", str(p)]) == EXIT_CONFIG
    assert "line 4" in capsys.readouterr().err


def test_runtime_failure_keeps_partial_csv(tmp_path, monkeypatch, capsys):
    real = lrqte.eom.regularized_solve
    calls = []

    def flaky(sys, scheme):
        calls.append(1)
        if len(calls) > 3:
            raise lrqte.eom.NumericalError("injected")
        return real(sys, scheme)

    monkeypatch.setattr(lrqte.eom, "regularized_solve", flaky)
    p = write_cfg(tmp_path, BASE)
    assert main(["run", str(p), "-o", str(tmp_path / "o")]) == EXIT_RUNTIME
    assert "injected" in capsys.readouterr().err
    assert len(read_csv(tmp_path / "o" / "timeseries.csv")) == 1 + 4
    m = json.loads((tmp_path / "o" / "timeseries.manifest.json").read_text())
    assert m["status"] == "error" and "injected" in m["error"]


def test_semantic_hash():
    base = from_dict(BASE)
    h = base.semantic_hash()
    assert from_dict(with_(BASE, output={"path": "elsewhere"})).semantic_hash() == h
    assert from_dict(with_(BASE, backend={"seed": 5})).semantic_hash() == h  # unused by the exact backend
    assert from_dict(with_(BASE, ansatz={"epsilon": 1e-4})).semantic_hash() == h  # explicit default
    for patch in ({"evolve": {"dt": 0.02}}, {"model": {"h": 0.6}}, {"ansatz": {"layers": 3}},
                  {"regularization": {"scheme": "eigen_rescale", "a_c": 1e-3}}, {"output": {"stride": 2}},
                  {"backend": {"mode": "shots"}}):
        assert from_dict(with_(BASE, **patch)).semantic_hash() != h
    shots = with_(BASE, backend={"mode": "shots", "seed": 1})
    assert from_dict(shots).semantic_hash() != from_dict(with_(shots, backend={"seed": 2})).semantic_hash()


def test_stride(tmp_path):
    p = write_cfg(tmp_path, with_(BASE, output={"stride": 5}))
    main(["run", str(p), "-o", str(tmp_path / "o")])
    t = [float(r[0]) for r in read_csv(tmp_path / "o" / "timeseries.csv")[1:]]
    assert t == pytest.approx([0.0, 0.25, 0.5])


def test_cost_matches_counts(capsys):
    for kind in ("I", "II"):
        assert main(["cost", "--ansatz", kind, "--rank", "3", "--ntheta", "7", "--L", "2"]) == EXIT_OK
        out = capsys.readouterr().out
        counts = count_circuits(kind, 3, 7, 2)
        for name, n, _ in cost_table(kind, 3, 7, 2):
            assert n == counts[name]
            assert any(line.split()[:2] == [name, str(n)] for line in out.splitlines())
    rows = {name: n for name, n, _ in cost_table("I", 2, 5, 1)}
    assert rows["M_aa"] == 0 and rows["M_at"] == 0
    cls = {name: c for name, _, c in cost_table("II", 1, 4, 1)}
    assert cls["M_aa"].startswith("O(1)") and cls["M_at"].startswith("O(1)")


def test_sweep_rank_single(tmp_path):
    cfg = with_(BASE, sweep={"rank": [1]}, evolve={"t_final": 0.1})
    p = write_cfg(tmp_path, cfg)
    assert main(["sweep", str(p), "-o", str(tmp_path / "s")]) == EXIT_OK
    rows = read_csv(tmp_path / "s" / "summary.csv")
    assert len(rows) == 2 and rows[1][0] == "rank_1" and rows[1][4] == "ok"
    assert (tmp_path / "s" / "rank_1.csv").exists()


def test_sweep_basis_comparison(tmp_path):
    cfg = with_(BASE, ansatz={"rank": 2}, evolve={"t_final": 0.1},
                sweep={"basis": {"A": ["11", "00"], "B": "hamming"}})
    p = write_cfg(tmp_path, cfg)
    assert main(["sweep", str(p), "-o", str(tmp_path / "s")]) == EXIT_OK
    rows = read_csv(tmp_path / "s" / "summary.csv")
    assert [r[0] for r in rows[1:]] == ["basis_A", "basis_B", "basis_B-minus-basis_A"]
    assert float(rows[3][5]) == pytest.approx(float(rows[2][5]) - float(rows[1][5]))


def test_sweep_point_failure_continues(tmp_path):
    cfg = with_(BASE, evolve={"t_final": 0.1}, sweep={"basis": {"bad": ["00", "11"], "ok": "hamming"}})
    p = write_cfg(tmp_path, cfg)
    assert main(["sweep", str(p), "-o", str(tmp_path / "s")]) == EXIT_RUNTIME
    rows = {r[0]: r for r in read_csv(tmp_path / "s" / "summary.csv")[1:]}
    assert rows["basis_bad"][4] == "error" and rows["basis_ok"][4] == "ok"


def test_sweep_workers_identical(tmp_path, monkeypatch):
    cfg = with_(BASE, evolve={"t_final": 0.1}, sweep={"layers": [1, 2]})
    p = write_cfg(tmp_path, cfg)
    main(["sweep", str(p), "-o", str(tmp_path / "one")])
    monkeypatch.setenv("LRQTE_WORKERS", "2")
    main(["sweep", str(p), "-o", str(tmp_path / "two")])
    for name in ("layers_1.csv", "layers_2.csv", "summary.csv"):
        assert (tmp_path / "one" / name).read_bytes() == (tmp_path / "two" / name).read_bytes()


def test_sweep_without_section(tmp_path):
    p = write_cfg(tmp_path, BASE)
    assert main(["sweep", str(p)]) == EXIT_CONFIG


def test_oracle_subcommand(tmp_path):
    p = write_cfg(tmp_path, with_(BASE, evolve={"t_final": 1.0, "dt": 0.01}))
    assert main(["oracle", str(p), "-o", str(tmp_path / "o"), "--certify"]) == EXIT_OK
    rows = read_csv(tmp_path / "o" / "oracle.csv")
    assert rows[0] == ["t", "s_x", "s_z", "trace", "purity"] and len(rows) == 102
    assert float(rows[1][2]) == -1.0


def test_shipped_configs_parse():
    for path in sorted(CONFIGS.glob("*.json")):
        load(path)
