"""Smoke test for the Python bindings.

Build and install first:

    pip install maturin
    maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/cefc-*.whl
"""

import math
import tempfile

import cefc


def main():
    grid = cefc.Grid.desk_scale()
    assert (grid.n_machines, grid.n_loads, grid.n_links) == (3, 3, 2)

    sc = cefc.Scenario([0, 1, 2], inertia_scale=0.85)
    traj = cefc.simulate(grid, sc)
    assert len(traj) == len(traj.omega) == len(traj.t)
    print(f"uncontrolled nadir {50 * (1 + traj.nadir()):.3f} Hz")

    sol = cefc.solve_dare([[0.5]], [[1.0]], [1.0], [1.0])
    p = sol["p"][0][0]
    assert abs(p - (0.25 + math.sqrt(4.0625)) / 2) < 1e-6, p
    assert cefc.quantize([14.0, 15.0, 0.0], 10.0) == [10.0, 20.0, 0.0]
    assert cefc.select_mode([3.0, 1.0, 2.0]) == 2

    data = cefc.Dataset.generate(grid, 30, 5, seed=3)
    model = cefc.Model.fit(data, "cefc")
    metrics = model.metrics(data)
    print(f"cefc model dim {model.dim}, mean test error {metrics['mean_hz']:.4f} Hz")
    with tempfile.TemporaryDirectory() as d:
        model.save(f"{d}/m.json")
        again = cefc.Model.load(f"{d}/m.json")
        assert again.a == model.a

    run = cefc.coordinate(grid, sc, model)
    s = run["summary"]
    print(f"coordinated nadir {s['nadir_hz']:.3f} Hz, shed {s['shed_total_mw']} MW")
    assert run["shed_changes"] <= 1

    report = cefc.check_prop1(grid, sc, model, model, [15.0, 15.0, 15.0])
    assert report["n_modes"] == 8 and report["holds"]
    print("ok")


if __name__ == "__main__":
    main()
