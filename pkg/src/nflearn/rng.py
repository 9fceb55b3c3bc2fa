"""Counter-based random streams with jump-ahead per replicate."""
from __future__ import annotations

import numpy as np


def stream(seed: int, index: int = 0) -> np.random.Generator:
    """Generator for replicate ``index``: Philox keyed by ``seed``, advanced
    by ``index`` jumps of 2**128 draws."""
    bg = np.random.Philox(int(seed))
    if index:
        bg = bg.jumped(int(index))
    return np.random.Generator(bg)
