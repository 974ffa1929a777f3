"""Smoke test for the wcpvol_py extension module.

Build and install first:

    pip install maturin
    maturin develop --release -m crates/python/Cargo.toml

then run `python python/smoke_test.py`.
"""

import json
import math
import os
import tempfile

import wcpvol_py as w


def check_conformal():
    assert w.score(10.0, 20.0, 25.0) == 5.0
    scores = [0.1, 0.5, 0.2, 0.9, 0.3]
    q = w.standard_quantile(scores, 0.2)
    assert q == 0.9, q
    # too few scores for the level
    assert math.isinf(w.standard_quantile(scores, 0.05))
    # uniform weights recover the standard quantile
    assert w.weighted_quantile(scores, [1.0] * 5, 1.0, 0.2) == q
    lo, hi = w.calibrated_interval((100.0, 120.0, 140.0), 5.0, 0.1)
    assert (lo, hi) == (95.0, 145.0)
    lo, _ = w.calibrated_interval((3.0, 4.0, 5.0), 10.0, 0.1)
    assert lo == 0.0


def check_phantoms():
    s = w.generate_sample(seed=7, id=0, snr=3.0)
    assert s.dims == (32, 32, 32)
    assert len(s.image()) == 32 ** 3
    mask = s.mask()
    assert sum(mask) == s.truth_volume()
    assert abs(s.measured_snr() - 3.0) < 0.5
    assert w.dice(s.dims, mask, mask) == 1.0
    t = w.tversky_index(s.dims, mask, mask, 0.5, 0.5, smooth=0.0)
    assert t == 1.0

    th = w.TriThresholds(3.0, 2.7, 2.4, 0.2)
    lo, mid, hi = s.predict_volumes(th)
    assert lo <= mid <= hi

    bank = w.FilterBank(seed=1, k=8, kernel_size=5)
    z = bank.extract(s)
    assert len(z) == len(bank) == 8
    assert all(math.isfinite(v) and v >= 0 for v in z)


def check_weights():
    import random

    rng = random.Random(0)
    calib = [[rng.gauss(0.0, 1.0)] for _ in range(200)]
    test = [[rng.gauss(1.0, 1.0)] for _ in range(200)]
    wc, wt, acc = w.density_ratio_weights(calib, test, folds=5, seed=3)
    assert len(wc) == 200 and len(wt) == 200
    assert 0.55 < acc < 0.85, acc
    # higher feature value, closer to the test pool, larger weight
    hi = [wi for (x,), wi in zip(calib, wc) if x > 1.0]
    lo = [wi for (x,), wi in zip(calib, wc) if x < -1.0]
    assert sum(hi) / len(hi) > sum(lo) / len(lo)


def check_experiment():
    cfg = w.ExperimentConfig(
        json.dumps(
            {
                "trials": 3,
                "folds": 5,
                "latent": {"dim": 8},
                "generation": {
                    "n_train": 40,
                    "n_calib": 60,
                    "n_id_test": 60,
                    "n_shift_test": 60,
                },
            }
        )
    )
    assert cfg.trials == 3
    out = w.run_experiment(cfg)
    rows = out["aggregate"]["rows"]
    assert len(rows) == 6
    for r in rows:
        assert 0.0 <= r["coverage"]["mean"] <= 1.0
    with tempfile.TemporaryDirectory() as d:
        w.run_and_export(cfg, d)
        for name in ("results.json", "results.csv", "weights.csv"):
            assert os.path.exists(os.path.join(d, name)), name

    try:
        w.ExperimentConfig('{"alpha": 2.0}')
    except ValueError:
        pass
    else:
        raise AssertionError("invalid config accepted")


if __name__ == "__main__":
    check_conformal()
    check_phantoms()
    check_weights()
    check_experiment()
    print("wcpvol_py smoke test passed")
