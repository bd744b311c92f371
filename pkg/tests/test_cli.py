import json

import numpy as np
import pytest

from tnsketch.cli import main
from tnsketch.tensor import write_tns


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, (json.loads(out) if code == 0 else None)


@pytest.fixture
def instance(tmp_path, capsys):
    code, rep = run(capsys, "generate", "--kind", "tt", "--dims", "6,6,6,6", "--rank", "2", "--noise", "0.2",
                    "--seed", "3", "--out", tmp_path / "inst")
    assert code == 0 and rep["witness_error"] == pytest.approx(0.2, abs=1e-12)
    return tmp_path / "inst"


REDUCED = ["--constants", "0.05,0.1,0.0001"]


def test_decompose_tt_best_of_seeds(instance, capsys, tmp_path):
    code, rep = run(capsys, "decompose-tt", instance / "tensor.tns", "--rank", "2", "--seeds", "5", *REDUCED,
                    "--out", tmp_path / "model")
    assert code == 0
    assert len(rep["per_seed_errors"]) == 5 and len(rep["seeds"]) == 5
    assert rep["error"] == min(rep["per_seed_errors"])
    assert rep["witness_eta"] == 0.2 and "tt_svd" in rep["oracle_errors"]
    assert max(rep["ranks"]) <= rep["t"]
    assert all(x >= 0 for x in rep["per_seed_errors"])
    code, ev = run(capsys, "eval", instance / "tensor.tns", "--model", tmp_path / "model")
    assert ev["error"] == pytest.approx(rep["error"], rel=1e-9)


def test_replay_determinism(instance, capsys):
    args = ["decompose-tt", instance / "tensor.tns", "--rank", "2", "--seeds", "3", "--seed", "9", *REDUCED]
    _, a = run(capsys, *args)
    _, b = run(capsys, *args)
    for key in ("error", "relative_error", "per_seed_errors", "seeds", "best_seed"):
        assert a[key] == b[key]


def test_eval_planted_network_is_witness(instance, capsys):
    code, rep = run(capsys, "eval", instance / "tensor.tns", "--model", instance / "planted")
    assert code == 0 and rep["error"] == pytest.approx(0.2, abs=1e-10)


def test_eval_network_against_own_materialization(tmp_path, capsys):
    code, gen = run(capsys, "generate", "--kind", "ring", "--dims", "3,3,3,3", "--rank", "2", "--out", tmp_path / "r")
    assert code == 0
    code, rep = run(capsys, "eval", tmp_path / "r" / "tensor.tns", "--model", tmp_path / "r" / "planted")
    assert code == 0 and rep["error"] <= 1e-12


def test_tree_and_net_commands(tmp_path, capsys):
    net = {"vertices": [{"id": i, "open_mode_size": 4} for i in range(4)],
           "edges": [{"u": i, "v": (i + 1) % 4, "rank": 2} for i in range(4)]}
    (tmp_path / "ring.json").write_text(json.dumps(net))
    run(capsys, "generate", "--kind", "ring", "--dims", "4,4,4,4", "--rank", "2", "--noise", "0.1",
        "--net", tmp_path / "ring.json", "--out", tmp_path / "r")
    code, rep = run(capsys, "decompose-net", tmp_path / "r" / "tensor.tns", "--net", tmp_path / "ring.json",
                    "--rank", "2", "--seeds", "2")
    assert code == 0 and rep["error"] <= 1.65 * 0.1 and rep["k_tree"] == 4
    code, rep = run(capsys, "decompose-tree", tmp_path / "r" / "tensor.tns", "--rank", "2", *REDUCED)
    assert code == 0 and all(r <= rep["t"] for _, _, r in rep["ranks"])
    code, rep = run(capsys, "compile-net", "--net", tmp_path / "ring.json", "--out", tmp_path / "compiled")
    assert code == 0 and rep["relative_error"] <= 1e-9 and rep["max_degree"] <= 3
    assert (tmp_path / "compiled" / "manifest.json").exists()
    tree = {"vertices": [{"id": 0, "open_mode_size": 4}, {"id": 1, "open_mode_size": 4, "parent": 0},
                         {"id": 2, "open_mode_size": 4, "parent": 1}, {"id": 3, "open_mode_size": 4, "parent": 2}]}
    (tmp_path / "path.json").write_text(json.dumps(tree))
    code, rep = run(capsys, "decompose-tree", tmp_path / "r" / "tensor.tns", "--tree", tmp_path / "path.json")
    assert code == 0


def test_fpt_tucker_command(tmp_path, capsys):
    run(capsys, "generate", "--kind", "tucker", "--dims", "6,6,6", "--rank", "1", "--out", tmp_path / "t")
    code, rep = run(capsys, "fpt-tucker", tmp_path / "t" / "tensor.tns", "--trials", "50", "--out", tmp_path / "f")
    assert code == 0 and rep["relative_cost"] <= 1e-4 and len(rep["chosen_trials"]) == 3
    code, rep = run(capsys, "fpt-tucker", tmp_path / "t" / "tensor.tns", "--p", "2", "--trials", "20",
                    "--eval-mode", "pcp")
    assert code == 0 and rep["exact_cost"] is not None


def test_bench_rows(capsys):
    code, rep = run(capsys, "bench", "--scale-nnz", "4", "--reps", "1", "--nnz0", "500", "--n0", "6",
                    "--constants", "0.02,0.5,0.0001")
    assert code == 0 and len(rep["rows"]) == 4
    nnz = [r["nnz"] for r in rep["rows"]]
    assert all(b > a for a, b in zip(nnz, nnz[1:]))


def test_exit_codes(tmp_path, capsys, monkeypatch):
    assert main(["decompose-tt", str(tmp_path / "missing.tns")]) == 2
    (tmp_path / "bad.tns").write_text("tns 2 2\n0 0 1\n")
    assert main(["decompose-tt", str(tmp_path / "bad.tns")]) == 2
    with pytest.raises(SystemExit) as e:
        main(["decompose-tt"])
    assert e.value.code == 2
    with pytest.raises(SystemExit) as e:
        main(["decompose-tt", "x.tns", "--constants", "1,2"])
    assert e.value.code == 2
    write_tns(tmp_path / "a.tns", np.ones((4, 4, 4)))
    assert main(["--dense-cap", "10", "decompose-tt", str(tmp_path / "a.tns")]) == 3
    assert main(["decompose-tt", str(tmp_path / "a.tns"), "--dense-cap", "10"]) == 3
    monkeypatch.setenv("TNSKETCH_DENSE_CAP", "10")
    assert main(["eval", str(tmp_path / "a.tns"), "--model", str(tmp_path)]) in (2, 3)
    assert main(["generate", "--kind", "tt", "--dims", "8,8", "--rank", "1"]) == 3
    monkeypatch.delenv("TNSKETCH_DENSE_CAP")
    assert main(["fpt-tucker", str(tmp_path / "a.tns"), "--trials", "1000"]) == 3
    assert main(["decompose-tt", str(tmp_path / "a.tns"), "--eps", "2"]) == 2
    capsys.readouterr()
