"""Smoke test for the shmssl extension.

Build first:  cargo build --release -p shmssl-py
Then run:     python3 crates/python/python/smoke_test.py
"""

import importlib
import math
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parents[3]


def load_module(tmp):
    for profile in ("release", "debug"):
        for name in ("libshmssl_py.so", "libshmssl_py.dylib", "shmssl_py.dll"):
            lib = ROOT / "target" / profile / name
            if lib.exists():
                suffix = ".pyd" if name.endswith(".dll") else ".so"
                shutil.copy(lib, Path(tmp) / ("shmssl" + suffix))
                sys.path.insert(0, tmp)
                return importlib.import_module("shmssl")
    sys.exit("extension not built: run `cargo build --release -p shmssl-py`")


def main():
    tmp = tempfile.mkdtemp()
    m = load_module(tmp)

    # a point mass fills one bin
    g = m.ierfh([0.0] * 3600, 1.0, -1.0, 1.0)
    assert len(g) == 512
    assert abs(sum(1.0 - v for v in g) - 1.0) < 1e-12
    assert sorted(g)[0] == 0.0

    seg = m.gen_segment("outlier", case=1, seed=3, index=0)
    assert len(seg) == 3600

    assert m.simclr_loss([[1.0, 0.0]], [[0.5, 0.5]], 0.5) == 0.0
    same = [[1.0, 2.0], [1.0, 2.0]]
    assert abs(m.simclr_loss(same, same, 0.5) - math.log(3.0)) < 1e-6
    ld, lg = m.gan_loss([0.5, 0.5], [0.5, 0.5])
    assert abs(ld - 2.0 * math.log(2.0)) < 1e-6
    assert abs(m.cosine_sim([1.0, 0.0], [0.0, 2.0])) < 1e-12

    cm = m.confusion([0, 1, 1, 1], [0, 0, 1, 1], 2)
    assert cm == [[1, 1], [0, 2]]
    met = m.metrics(cm)
    assert met["accuracy"] == 0.75
    assert abs(met["macro_f1"] - (2.0 / 3.0 + 0.8) / 2.0) < 1e-12

    enc = m.Encoder(seed=1)
    assert enc.param_count() == 131632
    z = enc.forward([g, g])
    assert len(z) == 2 and len(z[0]) == 256

    x, y = m.gen_dataset(case=1, scale=0.01, seed=5)
    assert len(x) == len(y) == 253
    assert m.class_names(1)[0] == "normal"

    ae = m.pretrain(x, "ae", epochs=2, batch_size=32, seed=1)
    assert len(ae.losses) == 2 and ae.method == "ae"
    assert len(ae.encode(x[:3])[0]) == 256
    clf = m.finetune(ae, x[::2], y[::2], x[1::2], y[1::2], 6, epochs=2, batch_size=32)
    pred = clf.predict(x[:10])
    assert len(pred) == 10 and all(0 <= p < 6 for p in pred)

    path = os.path.join(tmp, "clf.ckpt")
    clf.save(path)
    again = m.load_checkpoint(path)
    assert again.predict(x[:10]) == pred

    try:
        m.pretrain(x, "byol")
    except ValueError as e:
        assert "byol" in str(e)
    else:
        raise AssertionError("unknown method accepted")

    rows = m.run_experiment({
        "scale": "0.01", "methods": "sup", "low_shot": "1", "repeats": "2",
        "sup_epochs": "1", "batch_size": "16", "duration_s": "600",
        "out": os.path.join(tmp, "run"),
    })
    assert len(rows) == 1 and rows[0][0] == "sup" and rows[0][4] == 2

    shutil.rmtree(tmp)
    print("smoke test OK")


if __name__ == "__main__":
    main()
