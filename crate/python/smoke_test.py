"""Smoke test for the nodegen_py extension module.

Build first, e.g. `maturin develop -m crates/python/Cargo.toml`, then run
`python python/smoke_test.py`.
"""

import json

import nodegen_py as ng


def main():
    g = ng.Graph(3, [(0, 1)])
    assert g.add_edge(1, 2)
    assert not g.add_edge(2, 1)
    assert (g.node_count, g.edge_count) == (3, 2)
    assert g.neighbors(1) == [0, 2]

    graph, features, labels = ng.sbm_generate(blocks=2, nodes_per_block=3, p_in=1.0, p_out=0.0, feature_dim=2, seed=7)
    assert graph.component_count() == 2
    assert len(features) == 6 and len(labels) == 6

    h = ng.smooth(graph, features)
    assert len(h) == 6 and len(h[0]) == 2

    e = ng.expected_update([0.0, 0.0], [1.0, 1.0], degree=1.0, p=1.0)
    assert abs(e[0] - 1.0 / 3.0) < 1e-12

    assert abs(ng.confidence([0.5, 0.5]) - 0.0) < 1e-12
    assert abs(ng.confidence([1.0, 0.0], "entropy") - 1.0) < 1e-12
    try:
        ng.confidence([0.5, 0.5], "bogus")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown metric accepted")

    config = {
        "dataset": {"sbm": {"blocks": 2, "nodes_per_block": 20, "p_in": 0.3, "p_out": 0.05, "feature_dim": 4, "seed": 1}},
        "label_fraction": 0.1,
        "trials": 1,
        "sessions": 1,
        "generation": {"nodes_per_label": 1},
    }
    report = json.loads(ng.run_experiment(json.dumps(config)))
    assert report["failed_trials"] == 0
    assert 0.0 <= report["trials"][0]["augmented_acc"] <= 1.0

    print("smoke test passed")


if __name__ == "__main__":
    main()
