#!/usr/bin/env python3
"""Build the dlglm_py extension in-place and exercise the core pipeline:
run a small experiment, reload the saved model, impute, and predict."""

import json
import os
import shutil
import subprocess
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
HERE = os.path.dirname(os.path.abspath(__file__))


def build_extension():
    subprocess.run(
        ["cargo", "build", "--release", "-p", "dlglm-py", "--features", "extension-module"],
        cwd=ROOT,
        check=True,
    )
    src = os.path.join(ROOT, "target", "release", "libdlglm_py.so")
    dst = os.path.join(HERE, "dlglm_py.so")
    shutil.copyfile(src, dst)


def main():
    build_extension()
    sys.path.insert(0, HERE)
    import dlglm_py as dl

    print(f"dlglm_py {dl.version()}")

    cfg = json.loads(dl.default_config())
    cfg["seed"] = 42
    cfg["data"] = {"source": "simulate", "sim": cfg["data"]["sim"]}
    cfg["data"]["sim"].update({"n": 400, "p": 4, "d": 2})
    cfg["grid"] = {"h": [8], "nhl": [1], "h_r": [4], "nhl_r": [0], "lr": [0.01]}
    cfg["k_train"] = 2
    cfg["k_eval"] = 20
    cfg["batch_size"] = 200
    cfg["epochs_max"] = 4

    with tempfile.TemporaryDirectory() as td:
        sim_dir = os.path.join(td, "sim")
        manifest = json.loads(dl.simulate(json.dumps(cfg), sim_dir))
        assert manifest["n"] == 400 and manifest["p_cols"] == 4
        assert os.path.exists(os.path.join(sim_dir, "X.csv"))

        run_dir = os.path.join(td, "run")
        metrics = json.loads(dl.run_experiment(json.dumps(cfg), run_dir))
        assert metrics["method"] == "dlglm"
        assert metrics["mechanism"] == "MNAR"
        assert metrics["imputation_l1"] is not None and metrics["imputation_l1"] > 0
        assert metrics["percent_bias"] is not None
        assert 0.0 <= metrics["accuracy"] <= 1.0
        print("run_experiment metrics:", {k: v for k, v in metrics.items() if v is not None})

        model = dl.Model.load(os.path.join(run_dir, "model.json"))
        assert model.method() == "dlglm"
        assert model.param_count() > 0

        intercepts, coef = model.coefficients()
        assert len(intercepts) == 1 and len(coef) == 1 and len(coef[0]) == 4
        print("coefficients:", [round(c, 4) for c in coef[0]])

        x = [[2.0, 1.5, 0.0, 2.5], [1.0, 2.0, 2.0, 1.0]]
        mask = [[1, 1, 0, 1], [1, 1, 1, 1]]
        y = [1.0, 0.0]

        imputed, ess = model.impute(x, mask, y, k=50, seed=7)
        assert len(imputed) == 2 and len(imputed[0]) == 4
        assert all(
            abs(a - b) < 1e-9 for a, b in zip(imputed[1], x[1])
        ), "fully observed row must pass through"
        assert imputed[0][2] != 0.0, "masked entry should be filled"
        assert all(1.0 <= e <= 50.0 + 1e-9 for e in ess)
        print("imputed row:", [round(v, 4) for v in imputed[0]])

        imputed2, _ = model.impute(x, mask, y, k=50, seed=7)
        assert imputed2 == imputed, "imputation must be deterministic by seed"

        y_pred, y_prob, _ = model.predict(x, mask, k=50, seed=7)
        assert len(y_pred) == 2
        assert all(0.0 <= p <= 1.0 for p in y_pred)
        assert y_prob is not None and abs(sum(y_prob[0]) - 1.0) < 1e-9
        print("predicted class-1 probabilities:", [round(p, 4) for p in y_pred])

    print("smoke test passed")


if __name__ == "__main__":
    main()
