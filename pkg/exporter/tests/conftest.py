"""Shared fixtures and the acceptance-criterion reporter."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings
from PIL import Image

from scdexport.backbones import Backbone, load_backbone, make_toy_checkpoint

settings.register_profile(
    "suite",
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("suite")

# (name, passed, detail) for every acceptance criterion checked this run
CRITERIA: list[tuple[str, bool, str]] = []


@pytest.fixture
def check_criterion():
    """Record one acceptance criterion and assert it: one PASS/FAIL line each."""

    def _check(name: str, ok: bool, detail: str = "") -> None:
        CRITERIA.append((name, bool(ok), detail))
        line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" — {detail}" if detail else "")
        print(line, flush=True)
        assert ok, line

    return _check


def pytest_terminal_summary(terminalreporter, exitstatus):
    if not CRITERIA:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, ok, detail in CRITERIA:
        line = f"[{'PASS' if ok else 'FAIL'}] {name}" + (f" — {detail}" if detail else "")
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def toy_backbone_dir(tmp_path_factory) -> str:
    """One tiny seeded checkpoint shared by every test in the session."""
    return str(make_toy_checkpoint(tmp_path_factory.mktemp("toy-backbone"), seed=0))


@pytest.fixture(scope="session")
def backbone(toy_backbone_dir) -> Backbone:
    return load_backbone(toy_backbone_dir)


def noise_image(seed: int, size: tuple[int, int] = (128, 128)) -> Image.Image:
    """Deterministic low-contrast RGB noise; every patch gets unique texture."""
    rng = np.random.default_rng(seed)
    arr = rng.integers(100, 156, size=(size[1], size[0], 3)).astype(np.uint8)
    return Image.fromarray(arr, mode="RGB")


def save_noise_pair_tree(root, n_pairs: int, seed: int = 0) -> None:
    """Write an input tree pairs/<id>/{t0,t1,gt}.png of distinct noise images."""
    for i in range(n_pairs):
        pair_dir = root / "pairs" / f"{i:03d}"
        pair_dir.mkdir(parents=True)
        noise_image(seed + 2 * i).save(pair_dir / "t0.png")
        noise_image(seed + 2 * i + 1).save(pair_dir / "t1.png")
        rng = np.random.default_rng(900 + i)
        gt = rng.random((64, 64)) < 0.2
        Image.fromarray(np.where(gt, 255, 0).astype(np.uint8), mode="L").save(
            pair_dir / "gt.png"
        )
