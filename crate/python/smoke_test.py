"""Smoke test for the `ergodic` extension module.

Build first with `cargo build --release -p ergodic-py`, or install with
`maturin develop -m crates/python/Cargo.toml`.
"""

import importlib.machinery
import importlib.util
import json
import math
import pathlib
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load():
    try:
        import ergodic

        return ergodic
    except ImportError:
        pass
    for profile in ("release", "debug"):
        lib = ROOT / "target" / profile / "libergodic.so"
        if lib.exists():
            loader = importlib.machinery.ExtensionFileLoader("ergodic", str(lib))
            spec = importlib.util.spec_from_file_location("ergodic", lib, loader=loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            sys.modules["ergodic"] = module
            return module
    sys.exit("ergodic extension not found; run `cargo build --release -p ergodic-py`")


def main():
    eg = load()

    model = eg.Model.ou_inventory(m=0.0, b=1.0, delta=0.5, sigma1=1.0, sigma2=1.0)
    assert model.validate()["overall"]
    c = model.coefficients(0.3, -0.2)
    assert math.isclose(c["b"], -0.2 - 0.5 * 0.3)

    try:
        weak = eg.Model.ou_inventory(m=0.0, b=0.4, delta=0.5, sigma1=1.0, sigma2=1.0)
        assert not weak.validate()["overall"]
    except ValueError:
        pass

    d = eg.ou_stationary_density(0.0, 1.0, 1.0)
    assert abs(d["normalization_error"]) < 1e-8

    config = json.loads((ROOT / "configs" / "ou_inventory.json").read_text())
    config["grid"].update(n_x=101, n_y=101)
    config["sim"] = None
    sol = eg.solve(json.dumps(config))
    fb = sol.boundaries
    assert fb["sup_a_plus"] < sol.alpha < fb["inf_a_minus"]
    assert len(sol.u) == 101 and len(sol.u[0]) == 101
    print(f"lambda* = {sol.lambda_star:.6f} after {sol.iterations} sweeps")

    lam = sol.lambda_profile
    dens = sol.density
    value = eg.ergodic_value(model, lam["y_nodes"], lam["lambda_values"], dens["y_nodes"], dens["mass"])
    assert math.isclose(value, sol.lambda_star, rel_tol=1e-9)

    est = eg.simulate(model, fb["y_nodes"], fb["a_plus"], fb["a_minus"], sol.alpha, 0.0, 200.0, 1e-2, 4, 3)
    print(f"simulated cost = {est['mean_cost']:.4f} +/- {est['stderr']:.4f}")
    assert est["mean_cost"] > 0.0

    with tempfile.TemporaryDirectory() as tmp:
        manifest = eg.run_pipeline(json.dumps(config), output_dir=tmp, with_sim=False)
        assert {a["file"] for a in manifest["artifacts"]} >= {"U.csv", "manifest.json"}

    bad = dict(config, grid=dict(config["grid"], n_x=1))
    try:
        eg.solve(json.dumps(bad))
    except ValueError as e:
        print(f"rejected bad grid: {e}")
    else:
        raise AssertionError("bad grid accepted")

    print("ok")


if __name__ == "__main__":
    main()
