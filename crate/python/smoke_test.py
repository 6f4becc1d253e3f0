"""Smoke test for the banzip extension module.

Build and install first, e.g. `maturin develop -m crates/python/Cargo.toml`.
"""

import math
import os
import tempfile

import banzip


def main():
    text = b"the quick brown fox jumps over the lazy dog. " * 40

    model = banzip.Model.train(text, epochs=2, batch=8, seed=3, context_len=2, latent_dim=4, embed_dim=4, hidden=16)
    print(model)

    packed = banzip.compress(text, model)
    assert banzip.decompress(packed, model) == text
    assert len(packed) < len(text)

    selfcontained = banzip.compress(text, model, embed_model=True, sample_z=True)
    assert banzip.decompress(selfcontained) == text

    try:
        banzip.decompress(packed, banzip.Model.uniform(context_len=2, latent_dim=4, embed_dim=4, hidden=16))
    except ValueError as e:
        assert "wrong model" in str(e)
    else:
        raise AssertionError("hash mismatch not reported")

    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.banm")
        model.save(path)
        again = banzip.Model.load(path)
    assert again.hash == model.hash
    assert banzip.Model.from_bytes(model.to_bytes()).hash == model.hash

    p = model.pmf(b"th")
    assert len(p) == 256 and abs(sum(p) - 1.0) < 1e-9

    counts = banzip.quantize([1.0 / 256] * 256)
    assert counts == [256] * 256

    assert banzip.importance([1.0, 1.0, 2.0]) == [0.75, 0.75, 1.5]

    lhs, rhs, _ = banzip.jensen_gap([0.5, 0.5], [0.0, 1.0], [1.0, 1.0])
    assert abs(lhs - 3.0652) < 1e-4 and abs(rhs - math.e) < 1e-12

    samples = banzip.make_samples(b"abc", 2)
    assert samples == [(b"\x00\x00", 97), (b"\x00a", 98), (b"ab", 99)]

    assert banzip.sequence_log2_prob([0.5, 0.25]) == 3.0

    ok, report = banzip.run_checks(quick=True)
    print(report.splitlines()[-1])
    assert ok

    print("smoke test passed")


if __name__ == "__main__":
    main()
