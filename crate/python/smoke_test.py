"""Smoke test for the delayed_lq extension module.

Build and install first, e.g.

    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/delayed_lq-*.whl
"""

import math
import os
import tempfile

import delayed_lq as dl


def main():
    params = dl.ModelParams(0.5, 1.0, 0.5, 1.5)
    report = params.feasibility()
    assert report["sufficient_holds"], report
    assert report["n_cal"] == 4

    grid = dl.solve(params, 16)
    assert grid.positivity_ok
    p0 = grid.p11(0.0)
    assert report["a_seq"][4] < p0 < 1.0, p0
    assert grid.eval("p12", 1.2, -0.5) == 0.5
    assert grid.eval("p22", 1.5, -0.2, -0.3) == 0.0

    hist = [0.0] * grid.m
    assert grid.feedback(0.25, 1.5, hist, 1.5) == 0.0
    assert grid.feedback(1.25, 0.3, hist, 1.5) == 0.0
    assert math.isclose(grid.value(-0.5), 0.25 * p0)

    terminal = grid.simulate_terminal(20000, 11, 1.0, 1.5)
    errors = [(x - 1.5) ** 2 for x in terminal]
    mean = sum(errors) / len(errors)
    var = sum((e - mean) ** 2 for e in errors) / (len(errors) - 1)
    se = math.sqrt(var / len(errors))
    v0 = dl.inner_value(grid, 1.0, 1.5)
    assert abs(mean - v0) <= 4 * se, (mean, v0, se)

    paths = grid.simulate_paths(1, 0, 1.5, 1.5, zero_noise=True)
    assert all(x == 1.5 for x in paths[0]["x"])

    eta, xi = dl.eta_star(grid, 1.0, 1.0)
    assert (eta, xi) == (0.0, 1.0)
    points = dl.frontier(grid, 1.0, [0.5, 1.0, 1.5], gamma=0.0)
    assert points[1]["variance"] == 0.0
    assert math.isclose(points[0]["variance"], points[2]["variance"])

    two = dl.TwoAssetParams(1.0, 1.0, 0.5, 0.5, 0.3, 0.5, 1.5)
    grid2 = dl.solve_two_asset(two, 8)
    alpha, beta = grid2.feedback_two_asset(0.25, 1.0, [0.0] * 8, 1.0)
    assert (alpha, beta) == (0.0, 0.0)

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "p11.csv")
        grid.export_csv("p11", path)
        with open(path) as fh:
            assert fh.readline().strip() == "kernel,t,s,r,value"

    try:
        dl.ModelParams(0.5, 0.0, 0.5, 1.5)
    except dl.DelayedLqError as err:
        assert "parameter" in str(err)
    else:
        raise AssertionError("sigma = 0 accepted")

    print(f"ok: P11(0) = {p0:.6f}, MC {mean:.4f} vs V0 {v0:.4f}")


if __name__ == "__main__":
    main()
