#!/usr/bin/env python3
"""Smoke test for the xaikit_py extension module.

Run `cargo build -p xaikit-py` first, then `python3 python/smoke_test.py`.
The script copies the built cdylib next to itself under the importable name
and walks the whole surface: synthesis, training, checkpoints, attribution,
localisation metrics, MC-dropout, and pixel flipping.
"""

import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]


def load_module():
    for profile in ("debug", "release"):
        so = ROOT / "target" / profile / "libxaikit_py.so"
        if so.is_file():
            tmp = Path(tempfile.mkdtemp(prefix="xaikit-py-"))
            shutil.copy2(so, tmp / "xaikit_py.so")
            sys.path.insert(0, str(tmp))
            import xaikit_py

            return xaikit_py
    sys.exit("libxaikit_py.so not found; run `cargo build -p xaikit-py` first")


xk = load_module()


def check(name, cond):
    if not cond:
        sys.exit(f"FAIL {name}")
    print(f"ok {name}")


# dataset synthesis with exact masks
ds = xk.shapes3(8, 1)
check(
    "dataset",
    len(ds) == 24
    and ds.shape == (1, 64, 64)
    and ds.class_names == ["disc", "square", "triangle"],
)
mask = ds.mask_union(0)
check("masks", len(mask) == 64 * 64 and any(mask) and not all(mask))

# training and prediction
model = xk.Model.train(ds, epochs=4, batch=8, seed=3, early_stop=1.0)
check("train", model.epochs_run <= 4 and model.val_acc is not None)
probs = model.predict(ds.image(0))
check("predict", len(probs) == 3 and abs(sum(probs) - 1.0) < 1e-4)

# checkpoint round trip is bit-exact
with tempfile.TemporaryDirectory() as td:
    path = Path(td) / "model.ckpt"
    model.save(path)
    again = xk.Model.load(path)
    check("checkpoint", again.predict(ds.image(0)) == probs)

# attribution maps from all three methods
label = model.predict_label(ds.image(0))
maps = {
    m: xk.explain(model, ds.image(0), label, method=m, aggregation="absolute", ig_steps=8)
    for m in xk.METHODS
}
check(
    "explain",
    all(len(s.values) == 64 * 64 and s.width == s.height == 64 for s in maps.values()),
)

# localisation metrics against the planted mask
scores = xk.localisation_metrics(maps["gradient-x-input"].values, mask, k=100)
check(
    "localisation",
    set(scores)
    == {
        "pointing-game",
        "attribution-localisation",
        "top-k-intersection",
        "relevance-rank-accuracy",
        "auc",
    }
    and all(v is None or 0.0 <= v <= 1.0 for v in scores.values()),
)

# mc dropout: distribution shape, and rate 0 collapses to the deterministic pass
dist = xk.mcd_predict(model, ds.image(0), samples=5, seed=0)
check(
    "mcd",
    len(dist["rows"]) == 5
    and all(len(r) == 3 for r in dist["rows"])
    and len(dist["mean"]) == 3,
)
flat = xk.mcd_predict(model, ds.image(0), samples=3, seed=0, rate=0.0)
check("mcd-degenerate", all(r == probs for r in flat["rows"]))

qmap = xk.mcd_quantile_map(model, ds.image(0), label, q=0.5, samples=4, seed=0, ig_steps=8)
check("quantile-map", len(qmap.values) == 64 * 64 and qmap.q == 0.5)

# pixel flipping: explanation ranking and the random baseline share fraction 0
test = ds.subset([0, 8, 16])
rankings = [
    xk.argsort_desc(
        xk.explain(model, test.image(i), test.label(i), method="gradient-x-input").values
    )
    for i in range(len(test))
]
curve = xk.pf_curve(model, test, rankings, step=0.25, max_frac=0.5)
base = xk.pf_random_baseline(model, test, seeds=3, step=0.25, max_frac=0.5)
check(
    "pixel-flipping",
    len(curve) == 3
    and len(base["mean"]) == 3
    and abs(curve[0][1] - base["mean"][0][1]) < 1e-9,
)

print("SMOKE PASS: xaikit_py end to end")
