import numpy as np
import pytest

from hazeprior.imgcore import save_image


def textured(h, w, seed, channels=3):
    """Smooth random texture in [0, 1]: a few sinusoids plus a colour ramp."""
    gen = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:h, 0:w] / max(h, w)
    img = np.zeros((h, w, channels))
    for c in range(channels):
        for _ in range(3):
            fy, fx, ph = gen.uniform(0.5, 6, 2).tolist() + [gen.uniform(0, 2 * np.pi)]
            img[:, :, c] += np.sin(2 * np.pi * (fy * ys + fx * xs) + ph)
    img = (img - img.min()) / (np.ptp(img) + 1e-12)
    return (0.1 + 0.8 * img).astype(np.float32)


def ramp_depth(h, w, seed):
    gen = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:h, 0:w]
    a, b = gen.uniform(0.2, 1.0, 2)
    d = a * ys / max(h - 1, 1) + b * xs / max(w - 1, 1)
    return (d / d.max()).astype(np.float32)


@pytest.fixture
def corpus(tmp_path):
    """Four 32x32 clean images with matching 16-bit depth maps."""
    clean, depth = tmp_path / "clean", tmp_path / "depth"
    clean.mkdir()
    depth.mkdir()
    for i in range(4):
        save_image(textured(32, 32, i), clean / f"img{i}.png")
        save_image(ramp_depth(32, 32, i)[:, :, None], depth / f"img{i}.png", bits=16)
    return clean, depth


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    """Standard fixture: clean corpus, synthesized hazy set, K=16 codebook, profiles."""
    from hazeprior.cli import main

    root = tmp_path_factory.mktemp("pipeline")
    clean, depth = root / "clean", root / "depth"
    clean.mkdir()
    depth.mkdir()
    for i in range(4):
        save_image(textured(32, 32, i), clean / f"img{i}.png")
        save_image(ramp_depth(32, 32, i)[:, :, None], depth / f"img{i}.png", bits=16)
    steps = [
        ["synth", "--clean-dir", clean, "--depth-dir", depth, "--out-dir", root / "syn", "--count", 8, "--seed", 42],
        ["fit", "--images", clean, "--k", 16, "--patch", 4, "--iters", 30, "--seed", 1, "--out", root / "cb.hqpc"],
        ["profile", "--images", clean, "--codebook", root / "cb.hqpc", "--out", root / "fc.json"],
        ["profile", "--images", root / "syn" / "hazy", "--codebook", root / "cb.hqpc", "--out", root / "fh.json",
         "--diff-images", clean, "--delta-out", root / "delta.json"],
    ]
    for argv in steps:
        assert main([str(a) for a in argv]) == 0
    return {
        "root": root,
        "clean": clean,
        "depth": depth,
        "hazy": root / "syn" / "hazy",
        "codebook": root / "cb.hqpc",
        "fc": root / "fc.json",
        "fh": root / "fh.json",
        "delta": root / "delta.json",
        "hazy_image": sorted((root / "syn" / "hazy").glob("*.png"))[0],
    }


ACCEPTANCE_RESULTS: list[tuple[str, bool, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
