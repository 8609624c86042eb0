#!/usr/bin/env python3
"""Smoke test for the difflink_py extension module.

Builds nothing itself: expects `cargo build -p difflink-python` to have run.
Copies the cdylib next to a temp dir under the importable name and exercises
the whole surface end to end.
"""

import pathlib
import shutil
import sys
import tempfile


def import_module():
    root = pathlib.Path(__file__).resolve().parent.parent
    candidates = [
        root / "target" / "debug" / "libdifflink_py.so",
        root / "target" / "release" / "libdifflink_py.so",
    ]
    lib = next((p for p in candidates if p.exists()), None)
    if lib is None:
        sys.exit("libdifflink_py.so not found; run `cargo build -p difflink-python` first")
    tmp = tempfile.mkdtemp(prefix="difflink_py_")
    shutil.copy(lib, pathlib.Path(tmp) / "difflink_py.so")
    sys.path.insert(0, tmp)
    import difflink_py

    return difflink_py


def main():
    dl = import_module()

    graph, blocks_a, blocks_b = dl.Graph.synthetic(60, 30, 3, 0.5, 0.02, seed=5)
    assert graph.n_a == 60 and graph.n_b == 30
    assert len(blocks_a) == 60 and len(blocks_b) == 30
    edges = graph.edges()
    assert all(graph.has_edge(a, b) for a, b in edges[:20])

    na, nb = graph.metapath_neighbors(tau=4, seed=5)
    assert all(len(l) in (0, 4) for l in na + nb)

    train_edges, test_edges = dl.holdout_split(edges, train_fraction=0.8, seed=5)
    assert len(train_edges) + len(test_edges) == len(edges)
    train_graph = dl.with_edges(graph, train_edges)

    cfg = dl.TrainConfig(dim=16, steps=8, tau=4, batch_size=128, epochs=8, seed=5)
    model = dl.train(train_graph, cfg)
    history = model.loss_history
    assert len(history) == 8
    assert history[-1][1] < history[0][1], "classification loss should decrease"

    # held-out positives vs an equal count of unlinked pairs
    import random

    rng = random.Random(5)
    pairs = list(test_edges)
    labels = [1] * len(pairs)
    while sum(labels) * 2 > len(labels):
        a, b = rng.randrange(60), rng.randrange(30)
        if not graph.has_edge(a, b):
            pairs.append((a, b))
            labels.append(0)
    scores = model.scores(pairs, seed=1)
    auc = dl.roc_auc(scores, labels)
    report = dl.metric_report(scores, labels, threshold=0.0)
    assert abs(report["auc"] - auc) < 1e-12
    assert 0.0 <= report["aupr"] <= 1.0
    assert auc > 0.5, f"AUC {auc:.3f} should beat chance on an easy planted graph"

    ranked = model.rank_targets(0, k=5, seed=1)
    assert len(ranked) == 5
    assert all(ranked[i][1] >= ranked[i + 1][1] for i in range(4))

    errors = dl.gradcheck(seed=3)
    assert len(errors) == 16
    worst = max(errors.values())
    assert worst <= 1e-4, f"gradient check max relative error {worst:.2e}"

    print(f"smoke test OK: auc {auc:.3f}, aupr {report['aupr']:.3f}, "
          f"gradcheck max rel err {worst:.1e}")


if __name__ == "__main__":
    main()
