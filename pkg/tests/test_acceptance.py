"""End-to-end acceptance checks, one test per criterion.

Each test prints a single ``criterion N: PASS|FAIL ...`` line. The benchmark
criteria (4 to 8) train on the default synthetic data and are marked slow.
"""

from dataclasses import replace

import numpy as np
import pytest
from sklearn.discriminant_analysis import LinearDiscriminantAnalysis

import migraph.cli as cli
from migraph import gradcheck as gc
from migraph.config import RunConfig
from migraph.data import generate_synthetic
from migraph.metrics import binary_auc, compute_metrics
from migraph.model import ModelDims, analytic_counts, forward, init_params, layer_counts, parameter_totals
from migraph.pipeline import prepare
from migraph.training import evaluate, inference_latency, run_ablation, train

TABLE_TOTAL = 41_920  # "41.92 K"
TABLE_ROWS = {
    "st.bilstm": 16_640,
    "st.attention": 4_225,
    "st.linear_hidden": 4_160,
    "st.linear_out": 260,
    "ae.dense_block": 4_944,
    "ae.conv1d": 4_288,
    "ae.ct1d": 1_170,
}


@pytest.fixture
def report(capsys):
    def emit(number, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} {detail}")
        return ok

    return emit


@pytest.fixture(scope="module")
def benchmark():
    cfg = RunConfig()
    epochs = generate_synthetic(cfg.synthetic())
    return cfg, epochs, prepare(epochs, cfg.window(), cfg.seed)


@pytest.fixture(scope="module")
def trained(benchmark):
    cfg, epochs, prep = benchmark
    dims = ModelDims(epochs.n_channels, 18, epochs.n_classes, cfg.stgnn_input)
    return train(prep.train, prep.val, cfg.train_config(), dims, prep.adjacency_init)


def test_criterion_1_parameter_counts(report):
    params = init_params(0, ModelDims())
    runtime = layer_counts(params)
    analytic = analytic_counts()
    totals = parameter_totals(params)
    rows_ok = all(runtime[k] == v for k, v in TABLE_ROWS.items()) and 1_000 <= runtime["st.gc2"] <= 1_200
    total = totals["total_without_adjacency"]
    ok = (
        runtime == analytic
        and total == 41_899
        and totals["total_with_adjacency"] == 41_899 + 22 * 22
        and abs(total - TABLE_TOTAL) / TABLE_TOTAL < 0.005
        and rows_ok
    )
    assert report(1, ok, f"total {total} vs 41.92K ({abs(total - TABLE_TOTAL) / TABLE_TOTAL:.3%}), gc2 {runtime['st.gc2']}")


def test_criterion_2_gradient_fidelity(report):
    results = gc.run_all(42)
    ops = {r.name for r in results if r.kind == "op"}
    worst = max(r.max_rel_error for r in results if r.kind != "zero")
    failed = [r.name for r in results if not r.passed]
    ok = not failed and ops == set(gc.REGISTRY) and any(r.name == "adjacency" for r in results)
    assert report(2, ok, f"{len(results)} checks, worst rel error {worst:.2e}, failed {failed}")


def test_criterion_3_structural_invariants(benchmark, report):
    cfg, epochs, prep = benchmark
    dims = ModelDims(epochs.n_channels, 18, epochs.n_classes, cfg.stgnn_input)
    probe = prep.val.x[:32]
    worst = {"diag": 0.0, "rows": 0.0, "alpha": 0.0}
    decoder_inside = []

    def check(epoch, params, row):
        out = forward(params, probe, train=False)
        a = out.a_norm.data.astype(np.float64)
        worst["diag"] = max(worst["diag"], float(np.abs(np.diag(a)).max()))
        worst["rows"] = max(worst["rows"], float(np.abs(a.sum(axis=1) - 1).max()))
        worst["alpha"] = max(worst["alpha"], float(np.abs(out.alpha.data.astype(np.float64).sum(axis=1) - 1).max()))
        decoder_inside.append(bool((out.x_hat.data > 0).all() and (out.x_hat.data < 1).all()))

    five = replace(cfg.train_config(), max_epochs=5, patience=5)
    result = train(prep.train, prep.val, five, dims, prep.adjacency_init, on_epoch=check)
    ok = (
        len(result.log) == 5
        and len(decoder_inside) == 5
        and worst["diag"] == 0.0
        and worst["rows"] <= 1e-6
        and worst["alpha"] <= 1e-6
        and all(decoder_inside)
    )
    assert report(3, ok, f"5 epochs, max row-sum err {worst['rows']:.1e}, max attention-sum err {worst['alpha']:.1e}")


@pytest.mark.slow
def test_criterion_4_benchmark(benchmark, trained, report):
    _, _, prep = benchmark
    m = evaluate(trained.params, prep.test)
    lda = LinearDiscriminantAnalysis().fit(prep.train.x.reshape(len(prep.train), -1), prep.train.labels)
    lda_acc = float(lda.score(prep.test.x.reshape(len(prep.test), -1), prep.test.labels))
    ok = m.accuracy >= 0.90 and m.kappa >= 0.85 and lda_acc >= 0.85 and len(trained.log) <= 100
    assert report(4, ok, f"accuracy {m.accuracy:.4f}, kappa {m.kappa:.4f}, LDA {lda_acc:.4f}, "
                         f"best epoch {trained.best_epoch}")


@pytest.mark.slow
def test_criterion_5_ablation_ordering(benchmark, report):
    cfg, epochs, prep = benchmark
    rows = run_ablation(prep.train, prep.val, prep.test, cfg.train_config(), epochs.n_channels,
                        epochs.n_classes, prep.adjacency_init)
    acc = {r.variant: r.metrics.accuracy for r in rows}
    ok = acc["A"] >= acc["C"] and acc["A"] >= acc["D"] and len({r.split_hash for r in rows}) == 1
    assert report(5, ok, " ".join(f"{v}={a:.4f}" for v, a in acc.items()))


@pytest.mark.slow
def test_criterion_6_window_sweep(benchmark, report):
    cfg, epochs, _ = benchmark
    rows = cli.run_sweep(cfg, epochs)
    cells = {(r["omega"], r["s"]): r for r in rows}
    complete = len(rows) == 9 and all(r["status"] == "ok" for r in rows)
    best, short = cells[(500, 62)]["accuracy"], cells[(125, 250)]["accuracy"]
    ok = complete and best >= short
    assert report(6, ok, f"(500,62)={best:.4f} (125,250)={short:.4f}; table:\n{cli.sweep_table(rows)}")


@pytest.mark.slow
def test_criterion_7_latency(benchmark, trained, report):
    _, _, prep = benchmark
    ms = inference_latency(trained.params, prep.test.x) * 1e3
    assert report(7, ms < 100.0, f"mean single-window inference {ms:.3f} ms (reference figure 0.32 ms)")


@pytest.mark.slow
def test_criterion_8_determinism(tmp_path, report):
    data = tmp_path / "ep.bin"
    assert cli.main(["gen-data", "--out", str(data)]) == 0
    cfg_file = tmp_path / "run.cfg"
    cfg_file.write_text("max_epochs = 5\n")
    names = ("metrics.json", "adjacency_before.csv", "adjacency_after.csv", "edges_top10.csv")
    outputs = []
    for run in ("a", "b"):
        assert cli.main(["train", "--config", str(cfg_file), "--data", str(data), "--out", str(tmp_path / run)]) == 0
        outputs.append([(tmp_path / run / n).read_bytes() for n in names])
    same = [n for n, x, y in zip(names, *outputs) if x == y]
    assert report(8, same == list(names), f"identical: {', '.join(same)}")


def test_criterion_9_metric_oracles(report):
    labels = np.repeat(np.arange(4), 6)
    perfect = np.eye(4)[labels]
    constant = np.tile([1.0, 0.0, 0.0, 0.0], (24, 1))
    k_perfect = compute_metrics(labels, perfect).kappa
    k_constant = compute_metrics(labels, constant).kappa
    scores = np.array([0.9, 0.8, 0.4, 0.5, 0.3, 0.2])
    positive = np.array([True, True, True, False, False, False])
    pairs = [(p, n) for p in scores[positive] for n in scores[~positive]]
    enumerated = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p, n in pairs) / len(pairs)
    auc = binary_auc(scores, positive)
    ok = k_perfect == 1.0 and abs(k_constant) < 1e-12 and abs(auc - 8 / 9) < 1e-12 and abs(enumerated - 8 / 9) < 1e-12
    assert report(9, ok, f"kappa perfect {k_perfect}, kappa constant {k_constant}, AUC {auc:.6f} (8/9)")
