"""Smoke test for the herston Python bindings.

Build and install the extension first:

    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/herston-*.whl

then run `python python/smoke_test.py`.
"""

import math
import sys
import tempfile
from pathlib import Path

import herston_py as hs


def check(cond, msg):
    if not cond:
        print(f"FAIL: {msg}")
        sys.exit(1)
    print(f"ok   {msg}")


def main():
    # Statistics.
    check(f"{hs.improvement_pct(0.665, 0.535):.2f}" == "24.30", "improvement_pct reproduces 24.30")
    x = [1.0, 4.0, 2.5, 7.0, 3.3]
    r = hs.icc_2_1(x, x)
    check(abs(r["icc"] - 1.0) < 1e-12 and r["band"] == "excellent", "ICC of identical raters is 1")
    noisy = hs.icc_2_1(x, [v + 0.3 * (-1) ** i for i, v in enumerate(x)])
    check(noisy["ci_low"] <= noisy["icc"] <= noisy["ci_high"], "ICC interval brackets the estimate")
    check(hs.cyclic_lr(0, 10) == 1e-2 and hs.cyclic_lr(9, 10) == 1e-6, "cyclic schedule endpoints")

    # Phantoms.
    vol, targets = hs.generate_phantom(3, dim=32)
    check(vol.dims == [32, 32, 32] and len(vol) == 32**3, "phantom volume shape")
    check(len(targets) == 12 and all(v > 0 for v in targets.values()), "twelve positive targets")
    blob = targets["vol_blob0"]
    check(blob > 0 and math.isfinite(blob), f"blob volume {blob:.1f} mm^3")
    aug = vol.augmented(1)
    check(aug.dims == vol.dims, "augmentation keeps the grid")

    # Network.
    model = hs.Model(dim=32, measurements=12, heads=4, seed=0)
    per_head, combined = model.forward([vol, aug])
    check(len(per_head) == 4 and len(combined) == 2 and len(combined[0]) == 12, "forward shapes")
    inside = all(
        min(h[n][m] for h in per_head) - 1e-6 <= combined[n][m] <= max(h[n][m] for h in per_head) + 1e-6
        for n in range(2)
        for m in range(12)
    )
    check(inside, "mixture inside head range")
    weights = model.mixing_weights()
    check(all(abs(sum(col) - 1.0) < 1e-6 for col in zip(*weights)), "mixing weights sum to one")

    # Pipeline on the smoke preset.
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        data = hs.gen_data(tmp / "data", preset="smoke")
        ds = hs.Dataset.load(data)
        check(len(ds) == 24 and ds.subject_counts == [5, 1, 2], "smoke dataset split")
        rows = hs.train(tmp / "data", tmp / "run", preset="smoke")
        check(len(rows) == 12, "training report has one row per measurement")
        again = hs.evaluate(tmp / "run" / "final.ckpt", tmp / "data")
        check(again == rows, "eval reproduces the training report")
        try:
            hs.train(tmp / "data", tmp / "run", preset="smoke")
            check(False, "non-empty run directory is refused")
        except ValueError:
            check(True, "non-empty run directory is refused")

    print("python smoke test passed")


if __name__ == "__main__":
    main()
