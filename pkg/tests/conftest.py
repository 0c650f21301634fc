import numpy as np
import pytest

from beamsr.core import SamplingScheme, UsImage


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(params=[2, 4], ids=["2X", "4X"])
def scheme(request):
    return SamplingScheme(request.param)


def random_image(rng, lines, depth):
    return UsImage(rng.random((lines, depth)))


def quadratic_image(rng, lines, depth):
    """Per-depth quadratics in the line index, rescaled into [0.1, 0.9]."""
    l = np.arange(lines, dtype=np.float64)[:, None]
    a, b, c = rng.normal(size=(3, depth))
    f = a * l * l + b * l + c
    lo, hi = f.min(axis=0), f.max(axis=0)
    return UsImage(0.1 + 0.8 * (f - lo) / np.where(hi > lo, hi - lo, 1.0))


@pytest.fixture(scope="session")
def phantom_pairs():
    from beamsr.dataio import PhantomParams, build_dataset, generate_phantoms

    images = generate_phantoms(PhantomParams(seed=7, count=6, lines=32, depth=32))
    manifest, pairs = build_dataset(images, SamplingScheme(2), ratios=(1, 1, 1), seed=0)
    return [p for split in pairs.values() for p in split], manifest.corpus_mean


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        ok, detail = results[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
