"""Smoke test for the pvae_py extension.

Build first:  cargo build -p pvae-python --release
Then run:     python3 python/smoke_test.py [path/to/libpvae_py.so]
"""

import importlib.machinery
import importlib.util
import math
import os
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def load(path=None):
    if path is None:
        target = os.environ.get("CARGO_TARGET_DIR", os.path.join(ROOT, "target"))
        for profile in ("release", "debug"):
            for name in ("libpvae_py.so", "libpvae_py.dylib", "pvae_py.dll"):
                candidate = os.path.join(target, profile, name)
                if os.path.exists(candidate):
                    path = candidate
                    break
            if path:
                break
    if path is None:
        sys.exit("extension not found; run `cargo build -p pvae-python --release`")
    loader = importlib.machinery.ExtensionFileLoader("pvae_py", path)
    spec = importlib.util.spec_from_file_location("pvae_py", path, loader=loader)
    module = importlib.util.module_from_spec(spec)
    loader.exec_module(module)
    return module


def main():
    pv = load(sys.argv[1] if len(sys.argv) > 1 else None)

    assert abs(pv.rbf_kernel([1.0, 0.0], [0.0, 1.0]) - math.exp(-1.0)) < 1e-12
    assert abs(pv.log_prob([0.0], [0.0], [0.0]) + 0.5 * math.log(2 * math.pi)) < 1e-12
    assert abs(pv.kl_divergence([1.0], [0.0], [0.0], [0.0]) - 0.5) < 1e-12
    assert pv.weighted_purity([0, 0, 0, 1, 1], [0, 0, 1, 1, 1]) == 0.8

    blobs = [[x + 0.01 * i, y] for (x, y) in [(0, 0), (10, 0), (0, 10)] for i in range(5)]
    assignments, inertia = pv.kmeans(blobs, 3)
    assert len(set(assignments)) == 3 and inertia < 1e-2
    curve = pv.inertia_curve(blobs, 1, 4)
    assert [k for k, _ in curve] == [1, 2, 3, 4]

    train = pv.Dataset.generate("train", seed=1, n_train=40, n_test=20)
    test = pv.Dataset.generate("test", seed=1, n_train=40, n_test=20)
    assert len(train) == 40 and len(test.labels("image")) == 20
    assert len(train.image(0)) == 28 * 28 and len(train.audio(0)[0]) == 8

    model = pv.Model(arch="tiny", seed=3, batch_size=20)
    logs = model.fit(train, 2)
    assert [l["epoch"] for l in logs] == [1, 2]
    assert all(math.isfinite(l["total"]) for l in logs)
    zs, style = model.encode(test, "audio")
    assert len(zs) == 20 and len(style) == 20
    rows = model.table1(test)
    assert {(r["modality"], r["latent"]) for r in rows} == {
        ("audio", "zs"), ("audio", "za"), ("image", "zs"), ("image", "zi")
    }

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.ckpt")
        model.save(path)
        again = pv.Model.load(path)
        assert again.epoch == 2 and again.num_params == model.num_params
        assert again.encode(test, "image") == model.encode(test, "image")
        train.save(os.path.join(d, "train.pvds"))
        assert len(pv.Dataset.load(os.path.join(d, "train.pvds"))) == 40

    try:
        pv.Dataset.load("/nonexistent/file")
    except OSError as e:
        assert str(e).startswith("pvae-error[io]")
    else:
        raise AssertionError("missing file accepted")

    checks = pv.verify("fast")
    failed = [c for c in checks if not c[1]]
    assert not failed, failed
    print(f"smoke test ok: {len(checks)} verify checks, final total {logs[-1]['total']:.2f}")


if __name__ == "__main__":
    main()
