"""Smoke test for the pewflow extension module.

Build and install the module first, e.g. `maturin develop -m crates/python/Cargo.toml`,
then run `python python/smoke_test.py`.
"""

import json
import math
import tempfile

import pewflow


def check_routing():
    single = pewflow.Topology.from_json(
        json.dumps(
            {
                "name": "single",
                "nodes": [{"id": 0, "label": "a"}, {"id": 1, "label": "b"}],
                "edges": [{"id": 0, "src": 0, "dst": 1, "weight": 1.0, "capacity": 5.0}],
            }
        )
    )
    mlu, loads = pewflow.route(single, [[0, 2], [0, 0]])
    assert mlu == 0.4 and loads == [2.0], (mlu, loads)
    theta, lower = pewflow.min_mlu(single, [[0, 2], [0, 0]])
    assert lower <= 0.4 <= theta <= 0.4 * 1.05, (theta, lower)
    try:
        pewflow.route(single, [[0, -1], [0, 0]])
    except ValueError:
        pass
    else:
        raise AssertionError("negative demand accepted")


def check_pipeline():
    topo = pewflow.Topology.synthetic("mesh", 8, 4, [1.0, 2.5, 10.0], seed=3)
    assert topo.n_nodes == 8 and topo.diameter() >= 1
    assert set(topo.metrics()) >= {"n_nodes", "edge_density", "weighted_betweenness_variance"}

    d = pewflow.gravity(topo, seed=1)
    theta, _ = pewflow.min_mlu(topo, d)
    assert 1.0 <= theta <= 1.05 ** 2, theta

    data = pewflow.Dataset.generate(topo, scheme="ecmp", samples=32, seed=7)
    assert data.flow_entries == pewflow.expected_flow_entries(32, 8)
    assert len(data.labels("test")) == 32
    mlu, _ = pewflow.route(topo, data.demands("train", 0), "ecmp")
    assert math.isclose(mlu, data.labels("train")[0], rel_tol=1e-9)

    with tempfile.TemporaryDirectory() as tmp:
        data.write(tmp)
        again = pewflow.Dataset.read(tmp)
        assert again.labels("validate") == data.labels("validate")

    pew = pewflow.train(data, "pew", 4, epochs=20, seed=0)
    const = pewflow.train(data, "constant", 1, epochs=20, seed=0)
    assert pew.failure is None and len(pew.val_losses) <= 20
    assert math.isfinite(pew.test_nmse) and math.isfinite(const.test_nmse)
    assert json.loads(pew.to_json())["config"]["architecture"] == "pew"
    print(pew, const, sep="\n")


def check_metrics():
    ranks = pewflow.rank_metrics({"g1": {"a": 0.1, "b": 0.2}, "g2": {"a": 0.3, "b": 0.3}})
    assert ranks["a"] == (1.0, 75.0) and ranks["b"] == (0.75, 25.0), ranks
    trace = pewflow.smooth_curve([9, 9, 9, 9, 9, 4.0, 2.0, 6.0])
    assert all(abs(x - y) < 1e-12 for x, y in zip(trace, [4.0, 3.84, 3.8528])), trace


if __name__ == "__main__":
    check_routing()
    check_pipeline()
    check_metrics()
    print("pewflow", pewflow.__version__, "smoke test passed")
