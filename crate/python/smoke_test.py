"""Smoke test for the `ekge` extension: run after `pip install ./crates/python`."""

import math
import os
import tempfile

import ekge


def main():
    assert ekge.param_count("distmult-epi", 258, 20, 72, 40) == 14040

    m = ekge.Model.init("cont", 5, 2, 4, 3, seed=1)
    assert m.param_count() == ekge.param_count("cont", 5, 2, 4, 3)
    score = m.score([1, 0, 1, 2])
    assert math.isfinite(score)

    # a single timestamp's Start projection is that timestamp's score
    one = ekge.Model.init("complex-epi", 4, 1, 1, 3, seed=2)
    assert abs(one.project(2, 0, 1, "start") - one.score([0, 2, 0, 1])) < 1e-12
    try:
        one.project(2, 0, 1, "startend")
    except ValueError:
        pass
    else:
        raise AssertionError("startend needs end-time tables")
    one.add_end_tables(3)
    assert math.isfinite(one.project(2, 0, 1))

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.ekge")
        m.save(path)
        back = ekge.Model.load(path)
        assert back.kind == "cont-epi"
        assert back.score([1, 0, 1, 2]) == score

    try:
        ekge.Model.init("tree", 3, 1, 2, 2).project(0, 0, 1)
    except ValueError:
        pass
    else:
        raise AssertionError("tree is not projectable")
    print("ekge python smoke test ok")


if __name__ == "__main__":
    main()
