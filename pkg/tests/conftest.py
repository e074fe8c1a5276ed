"""Shared fixtures and the acceptance-criterion reporter."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from scenechange.formats import PatchEmbeddingGrid

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


def make_grid(
    rng: np.random.Generator,
    height: int = 4,
    width: int = 4,
    dim: int = 8,
    patch: int = 8,
    data: np.ndarray | None = None,
) -> PatchEmbeddingGrid:
    """Random (or supplied) descriptor grid with consistent geometry."""
    if data is None:
        data = rng.normal(size=(height, width, dim)).astype(np.float32)
    return PatchEmbeddingGrid(
        height=height,
        width=width,
        dim=dim,
        data=np.asarray(data, dtype=np.float32),
        patch_size_px=patch,
        image_height_px=height * patch,
        image_width_px=width * patch,
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
