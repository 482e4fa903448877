from __future__ import annotations

import numpy as np
import pytest

from spectemp.adapters.embedding import hash_embed_block
from spectemp.timeline import Timeline


def grid_timeline(duration: float, fps: float = 1.0, dim: int = 16, key: str = "grid") -> Timeline:
    """Frames at every ``1/fps`` seconds over ``[0, duration]``."""
    n = int(np.floor(duration * fps + 1e-9)) + 1
    ts = np.arange(n) / fps
    return Timeline(duration, fps, ts, hash_embed_block(key, n, dim))


@pytest.fixture
def tl10() -> Timeline:
    return grid_timeline(10.0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip("]"))):
            terminalreporter.write_line(line)
