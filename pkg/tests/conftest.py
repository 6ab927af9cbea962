import random
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cmmi.simgen import fixture  # noqa: E402

# Hand-derived from the fixture: car 1 yields at intersection 5 (one step),
# everyone else drives through.
FIG2_OPT = {(6, 1): 0, (5, 1): 6, (7, 2): 0, (5, 2): 5, (2, 2): 10,
            (4, 3): 1, (1, 3): 6, (2, 3): 11, (4, 4): 2, (1, 4): 7, (2, 4): 12}
# Car 2 yields at 5 instead, and both followers then yield at 2.
FIG2_BAD = {(6, 1): 0, (5, 1): 5, (7, 2): 0, (5, 2): 6, (2, 2): 11,
            (4, 3): 1, (1, 3): 6, (2, 3): 12, (4, 4): 2, (1, 4): 7, (2, 4): 13}


@pytest.fixture
def fig2():
    return fixture("fig2")


def jitter_allocation(s, seed, p_none=0.1, spread=None):
    """Zero-wait schedule plus random waits; some slots dropped."""
    rng = random.Random(seed)
    spread = s.T_UB + 1 if spread is None else spread
    a = {}
    for tr in s.trips:
        t = tr.depart
        r = tr.route
        for n in range(len(r) - 1):
            t += rng.randint(0, spread)
            a[(r[n], tr.car_id)] = min(t, s.T) if rng.random() >= p_none else None
            t += s.network.edges[(r[n], r[n + 1])]
    return a
