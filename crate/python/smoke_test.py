"""Smoke test for the lsm_py extension module.

Build and install first, e.g. `maturin develop -m crates/py/Cargo.toml`.
"""

import math
import random

import lsm_py


def main():
    g = lsm_py.Grid(2, 2, 0.0, 0.0, 30.0, [1.0, 2.0, 3.0, 4.0])
    back = lsm_py.Grid.from_ascii(g.to_ascii())
    assert back.shape == (2, 2)
    assert back.values == [1.0, 2.0, 3.0, 4.0]

    rows = [[i, 2 * i + 1] for i in range(20)]
    pca = lsm_py.PCA.fit(rows)
    assert abs(pca.eigenvalues[0] - 2.0) < 1e-9
    assert pca.select_k(0.9) == 1

    rng = random.Random(3)
    data = [[rng.gauss(0, 1) for _ in range(3)] for _ in range(40)]
    for f in lsm_py.collinearity(data, ["a", "b", "c"]):
        assert abs(f["vif"] * f["tolerance"] - 1.0) < 1e-9

    auc, fpr, tpr = lsm_py.roc_auc([1, 1, 0, 0], [0.9, 0.8, 0.3, 0.1])
    assert auc == 1.0 and fpr[0] == 0.0 and tpr[-1] == 1.0
    m = lsm_py.metrics([1, 0, 1, 0], [0.9, 0.2, 0.4, 0.6])
    assert m["tp"] == 1 and math.isclose(m["accuracy"], 0.5)

    values = [0.0, 0.05, 0.1, 0.9, 0.95, 1.0]
    breaks = lsm_py.jenks_breaks(values, 2)
    assert len(breaks) == 1 and 0.1 <= breaks[0] < 0.9
    classes = lsm_py.classify(lsm_py.Grid(6, 1, 0.0, 0.0, 1.0, values), breaks)
    assert classes.values == [1.0, 1.0, 1.0, 2.0, 2.0, 2.0]

    scene = lsm_py.gen_scene(seed=5, nrows=48, ncols=48, n_landslides=10)
    assert len(scene["lcf"]) == 14 and len(scene["embed"]) == 64
    assert len(scene["inventory"]) == 10
    assert scene["plantedness_auc"] >= 0.95
    assert len(scene["dem"].terrain()) == 7

    print("lsm_py smoke test passed")


if __name__ == "__main__":
    main()
