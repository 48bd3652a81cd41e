"""Smoke test for the seqplace extension module.

Build and stage the module first:

    cargo build --release -p seqplace-py --features extension-module
    cp target/release/libseqplace.so python/seqplace.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import seqplace  # noqa: E402


def main():
    assert seqplace.wl_loss([0.0, 1.0], [5.0, 5.0], [0.0, 1.0]) == 1.0
    loss, ga, gp, gn = seqplace.wl_loss_grad([0.0, 0.0], [0.5, 0.0], [0.8, 0.0], margin=0.5)
    assert math.isclose(loss, 0.2) and len(ga) == 2

    world = seqplace.generate_world(num_places=40, dim=8, seed=1)
    assert world.condition_ids() == [0, 1] and world.dim == 8
    assert world.place_ids(0) == list(range(40))
    assert world.reversed(0).place_ids(0) == list(range(39, -1, -1))

    train = seqplace.generate_world(num_places=40, dim=8, seed=1, train_places=200)
    composer, losses = seqplace.train(
        "recurrent", train, epochs=1, triplets_per_epoch=200, learning_rate=0.01, descriptor_dim=16, seed=1
    )
    assert composer.kind == "recurrent" and composer.trained_steps == 200 and len(losses) == 200
    frames = world.features(0)[:3]
    assert len(composer.describe(frames)) == 16

    raw = seqplace.Composer.raw(3)
    index = seqplace.PlaceIndex.build(world, 1, raw)
    assert len(index) == 38 and index.dim == 24
    start, dist = index.query(raw.describe(world.features(1)[5:8]))
    assert (start, dist) == (5, 0.0)
    assert seqplace.evaluate(world, 0, 1, raw) > 0.5

    with tempfile.TemporaryDirectory() as d:
        world.save(d)
        back = seqplace.FeatureStore.load(d)
        assert back.features(1) == [[float(f) for f in row] for row in back.features(1)]
        assert back.place_ids(1) == world.place_ids(1)
        composer.save(os.path.join(d, "r.spw"))
        again = seqplace.Composer.load(os.path.join(d, "r.spw"))
        assert again.kind == "recurrent" and again.trained_steps == 200

    rows = seqplace.run_suite(world, [("raw", raw), ("recurrent", composer)], seed=2)
    assert [r["composer"] for r in rows] == ["raw", "recurrent"]
    assert all(0.0 <= r[e] <= 1.0 for r in rows for e in ("NT", "RG", "RS"))

    assert seqplace.seqslam(world) > seqplace.seqslam(world, reverse=True)
    mean_ms, _ = seqplace.bench_search_ms(16, 1000, trials=3)
    assert mean_ms > 0.0

    try:
        seqplace.Composer.init("lstm", 3, 8)
    except seqplace.SeqPlaceError as e:
        assert e.kind == "config"
    else:
        raise AssertionError("unknown kind accepted")
    try:
        seqplace.FeatureStore.load("/nonexistent/manifest.json")
    except seqplace.SeqPlaceError as e:
        assert e.kind == "io"
    else:
        raise AssertionError("missing store loaded")

    print("smoke test ok:", rows)


if __name__ == "__main__":
    main()
