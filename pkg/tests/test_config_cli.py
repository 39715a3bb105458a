import csv
import json
import numpy as np
import pytest

import migraph.cli as cli
from migraph.config import ConfigError, RunConfig, load_config, parse_config
from migraph.data import generate_synthetic, read_epochs, write_epochs
from migraph.pipeline import prepare
from migraph.tensor import REGISTRY

SMALL = """\
n_channels = 8
erd_channels = 0,1; 2,3; 4,5; 6,7
trials_per_class = 6
n_samples = 500
omega = 250
step = 125
max_epochs = 2
patience = 2
batch_st = 8
"""


@pytest.fixture(scope="module")
def small_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("run")
    (root / "small.cfg").write_text(SMALL)
    data = root / "ep.bin"
    assert cli.main(["gen-data", "--config", str(root / "small.cfg"), "--out", str(data)]) == 0
    return root, data


def run_args(root, data, command, out, *extra):
    return cli.main([command, "--config", str(root / "small.cfg"), "--data", str(data), "--out", str(out), *extra])


class TestConfigParsing:
    def test_defaults(self):
        cfg = parse_config("")
        assert (cfg.lr_ae, cfg.lr_st, cfg.batch_st, cfg.lam, cfg.gamma) == (1e-3, 2e-4, 16, 0.3, 1.0)
        assert (cfg.max_epochs, cfg.patience, cfg.dropout, cfg.omega, cfg.step) == (100, 10, 0.3, 500, 62)

    def test_comments_and_alias(self):
        cfg = parse_config("# header\nlambda = 0.5  # weight\n\nseed=7\n")
        assert cfg.lam == 0.5 and cfg.seed == 7

    @pytest.mark.parametrize("text", ["bogus = 1", "seed = -1", "seed = x", "lr_ae", "seed = 1\nseed = 2",
                                      "batch_st = 1", "omega = 0", "stgnn_input = raw"])
    def test_rejected(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_round_trip(self, tmp_path):
        cfg = parse_config(SMALL + "lambda = 0.125\nseed = 3\n")
        path = tmp_path / "c.txt"
        path.write_text(cfg.dumps())
        assert load_config(path) == cfg

    def test_dumps_uses_file_key(self):
        assert "lambda = 0.3" in RunConfig().dumps().splitlines()


class TestPipeline:
    def test_split_disjoint_and_scaling_fitted_on_train(self, small_run):
        _, data = small_run
        prep = prepare(read_epochs(data), load_config(small_run[0] / "small.cfg").window(), 42)
        sets = [set(prep.train_trials), set(prep.val_trials), set(prep.test_trials)]
        assert not (sets[0] & sets[1] or sets[0] & sets[2] or sets[1] & sets[2])
        assert len(set().union(*sets)) == 24
        assert prep.train.x.min() == pytest.approx(0.0, abs=1e-6)
        assert prep.train.x.max() == pytest.approx(1.0, abs=1e-6)
        # per-feature bounds come from training windows only
        lo = prep.train.x.min(axis=(0, 1))
        hi = prep.train.x.max(axis=(0, 1))
        np.testing.assert_allclose(lo[hi > lo], 0.0, atol=1e-6)


class TestGenData:
    def test_rerun_identical_bytes(self, small_run, tmp_path):
        root, data = small_run
        again = tmp_path / "again.bin"
        assert cli.main(["gen-data", "--config", str(root / "small.cfg"), "--out", str(again)]) == 0
        assert again.read_bytes() == data.read_bytes()

    def test_seed_changes_output(self, small_run, tmp_path):
        root, data = small_run
        other = tmp_path / "other.bin"
        cli.main(["gen-data", "--config", str(root / "small.cfg"), "--out", str(other), "--seed", "43"])
        assert other.read_bytes() != data.read_bytes()

    def test_unwritable_path(self, tmp_path, capsys):
        blocker = tmp_path / "plain_file"
        blocker.write_text("")
        # a regular file used as a directory cannot be written into, even as root
        assert cli.main(["gen-data", "--out", str(blocker / "x.bin")]) == 2
        assert "error" in capsys.readouterr().err

    def test_missing_input(self, tmp_path, capsys):
        assert cli.main(["train", "--data", str(tmp_path / "nope.bin"), "--out", str(tmp_path)]) == 2
        assert "not found" in capsys.readouterr().err

    def test_bad_config_exit_code(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("unknown_key = 1\n")
        assert cli.main(["gradcheck", "--config", str(bad)]) == 2


@pytest.fixture(scope="module")
def trained(small_run):
    root, data = small_run
    out = root / "train"
    assert run_args(root, data, "train", out) == 0
    return root, data, out


class TestTrainEval:
    def test_outputs(self, trained):
        _, _, out = trained
        doc = json.loads((out / "metrics.json").read_text())
        for key in ("accuracy", "kappa", "macro_f1", "macro_auc", "confusion", "best_epoch", "parameters"):
            assert key in doc
        assert np.array(doc["confusion"]).sum() > 0
        for name in ("adjacency_before.csv", "adjacency_after.csv"):
            a = cli.read_matrix_csv(out / name)
            assert a.shape == (8, 8)
            np.testing.assert_allclose(a.sum(axis=1), 1.0, atol=1e-6)
            np.testing.assert_array_equal(np.diag(a), 0.0)
        rows = list(csv.reader((out / "edges_top10.csv").open()))
        assert rows[0] == ["i", "j", "delta"] and len(rows) == 11
        deltas = [abs(float(r[2])) for r in rows[1:]]
        assert deltas == sorted(deltas, reverse=True)

    def test_eval_reproduces_metrics(self, trained):
        root, data, out = trained
        assert run_args(root, data, "eval", out) == 0
        train_doc = json.loads((out / "metrics.json").read_text())
        eval_doc = json.loads((out / "eval_metrics.json").read_text())
        assert eval_doc["accuracy"] == train_doc["accuracy"]
        assert eval_doc["confusion"] == train_doc["confusion"]
        assert json.loads((out / "latency.json").read_text())["mean_single_window_ms"] > 0

    def test_export_graph(self, trained):
        root, data, out = trained
        assert run_args(root, data, "export-graph", out, "--top-k", "5") == 0
        rows = list(csv.reader((out / "graph_edges.csv").open()))
        assert len(rows) == 6
        names = read_epochs(data).channel_names
        for r in rows[1:]:
            assert (r[2], r[3]) == (names[int(r[0])], names[int(r[1])])
            assert float(r[6]) == pytest.approx(float(r[5]) - float(r[4]))

    def test_eval_without_training(self, small_run, tmp_path):
        root, data = small_run
        assert run_args(root, data, "eval", tmp_path) == 2


class TestGradcheckCommand:
    def test_each_op_listed_once(self, capsys):
        assert cli.main(["gradcheck", "--seed", "42"]) == 0
        lines = capsys.readouterr().out.splitlines()[1:]
        ops = [line.split()[1] for line in lines if line.startswith("op")]
        assert sorted(ops) == sorted(REGISTRY)
        assert all(line.split()[-1] == "pass" for line in lines)

    def test_corrupted_backward_reported(self, monkeypatch, capsys):
        original = REGISTRY["add"].backward

        def wrong(ctx, g):
            ga, gb = original(ctx, g)
            return ga * 1.01, gb

        monkeypatch.setattr(REGISTRY["add"], "backward", staticmethod(wrong))
        assert cli.main(["gradcheck", "--seed", "42"]) == 1
        captured = capsys.readouterr()
        add_line = next(line for line in captured.out.splitlines() if line.split()[:2] == ["op", "add"])
        assert add_line.endswith("FAIL")
        assert "add" in captured.err


class TestSweepAblate:
    def test_sweep_table_shape(self, small_run):
        root, data = small_run
        out = root / "sweep"
        assert run_args(root, data, "sweep", out) == 0
        rows = list(csv.reader((out / "sweep.csv").open()))
        assert rows[0] == ["omega\\s", "62", "125", "250"]
        assert [r[0] for r in rows[1:]] == ["125", "250", "500"]
        for r in rows[1:]:
            assert len(r) == 4
            for v in r[1:]:
                assert 0.0 <= float(v) <= 1.0
        cells = json.loads((out / "sweep_cells.json").read_text())
        assert [c["seed"] for c in cells] == [42 + i for i in range(9)]

    def test_sweep_marks_invalid_cells(self):
        rows = [{"omega": o, "s": s, "status": "ok", "accuracy": 0.5} for o in (1, 2) for s in (1,)]
        rows[1] = {"omega": 2, "s": 1, "status": "invalid"}
        assert cli.sweep_table(rows, (1, 2), (1,)).splitlines()[2] == "2,invalid"

    def test_ablation_rows(self, small_run):
        root, data = small_run
        out = root / "ablate"
        assert run_args(root, data, "ablate", out) == 0
        rows = list(csv.DictReader((out / "ablation.csv").open()))
        assert [r["variant"] for r in rows] == ["A", "B", "C", "D"]
        counts = {r["variant"]: int(r["params_without_adjacency"]) for r in rows}
        assert counts["A"] == counts["D"]
        assert counts["B"] < counts["A"] and counts["C"] < counts["A"]
        assert len({r["split_hash"] for r in rows}) == 1
        doc = json.loads((out / "ablation.json").read_text())
        assert [d["variant"] for d in doc] == ["A", "B", "C", "D"]
        assert all(float(r["accuracy"]) == d["accuracy"] for r, d in zip(rows, doc))
        assert all(set(d) >= {"accuracy", "kappa", "macro_f1", "macro_auc", "confusion"} for d in doc)


def test_synthetic_defaults_match_config():
    e = generate_synthetic(RunConfig(trials_per_class=2).synthetic())
    assert (e.n_trials, e.n_channels, e.n_samples, e.fs) == (8, 22, 750, 250.0)


def test_write_read_roundtrip(tmp_path):
    e = generate_synthetic(RunConfig(trials_per_class=1).synthetic())
    write_epochs(tmp_path / "e.bin", e)
    back = read_epochs(tmp_path / "e.bin")
    np.testing.assert_array_equal(back.data, e.data)
    np.testing.assert_array_equal(back.labels, e.labels)
