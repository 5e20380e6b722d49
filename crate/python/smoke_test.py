"""Quick end-to-end check of the spela_py extension module.

Build the module first:

    cargo build -p spela-py --release

then run this script from anywhere. It copies the cdylib next to a temp
import path, trains a small network on synthetic blobs and checks the
basics actually work.
"""

import math
import os
import random
import shutil
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))


def import_module():
    for name in ("libspela_py.so", "spela_py.dll", "libspela_py.dylib"):
        built = os.path.join(ROOT, "target", "release", name)
        if os.path.exists(built):
            d = tempfile.mkdtemp(prefix="spela_py_")
            ext = ".pyd" if name.endswith(".dll") else ".so"
            shutil.copy(built, os.path.join(d, "spela_py" + ext))
            sys.path.insert(0, d)
            import spela_py

            return spela_py
    raise SystemExit("build the module first: cargo build -p spela-py --release")


def make_blobs(n_per_class, dim, n_classes, spread, seed):
    rng = random.Random(seed)
    centers = []
    for _ in range(n_classes):
        c = [rng.gauss(0.0, 1.0) for _ in range(dim)]
        norm = math.sqrt(sum(v * v for v in c))
        centers.append([v / norm for v in c])
    xs, ys = [], []
    for label, center in enumerate(centers):
        for _ in range(n_per_class):
            xs.append([v + rng.gauss(0.0, spread) for v in center])
            ys.append(label)
    order = list(range(len(xs)))
    rng.shuffle(order)
    return [xs[i] for i in order], [ys[i] for i in order]


def main():
    spela = import_module()

    # embedding geometry: two classes must sit on opposite poles
    pair = spela.symmetric_embeddings(2, 8, seed=1)
    dot = sum(a * b for a, b in zip(pair[0], pair[1]))
    assert abs(dot + 1.0) < 1e-6, dot

    # an optimized set should have lower repulsion energy than a random one
    opt = spela.symmetric_embeddings(6, 16, seed=2)
    rng = random.Random(2)
    rnd = []
    for _ in range(6):
        v = [rng.gauss(0.0, 1.0) for _ in range(16)]
        norm = math.sqrt(sum(x * x for x in v))
        rnd.append([x / norm for x in v])
    assert spela.embedding_energy(opt) < spela.embedding_energy(rnd)

    # train on well-separated blobs and expect near-perfect accuracy;
    # split one draw so train and test share class centers
    xs, ys = make_blobs(190, 16, 4, 0.2, seed=3)
    train_x, train_y = xs[:600], ys[:600]
    test_x, test_y = xs[600:], ys[600:]
    net = spela.LocalNetwork(16, [32, 32], 4, seed=0)
    losses = net.fit(train_x, train_y, epochs=60, lr0=0.1, batch_size=20)
    assert len(losses) == 60 and len(losses[0]) == net.depth
    assert losses[-1][0] < losses[0][0], "layer 1 loss did not drop"

    accs = net.evaluate(test_x, test_y)
    assert len(accs) == net.depth
    assert accs[-1] > 0.9, accs

    # early exit from layer 1 must agree with evaluate()
    hits = sum(net.predict(x, exit_layer=1) == y for x, y in zip(test_x, test_y))
    assert abs(hits / len(test_x) - accs[0]) < 1e-9

    scores = net.scores(test_x[0])
    assert len(scores) == 4 and all(-1.0 <= s <= 1.0 for s in scores)

    # checkpoints round-trip bit for bit
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "model.spnw")
        net.save(path)
        loaded = spela.LocalNetwork.load(path)
        assert loaded.evaluate(test_x, test_y) == accs
        assert loaded.embeddings(1) == net.embeddings(1)

    print("smoke test passed: test accuracies per layer =", [round(a, 4) for a in accs])


if __name__ == "__main__":
    main()
