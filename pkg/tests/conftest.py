import sys
from fractions import Fraction
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

# one line per acceptance criterion, filled in by test_acceptance.py
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])


def golden_scene():
    """Three 10x10 frames, two square objects, three keypoints.

    Object 1 covers rows/cols 1..3 (area 9), object 2 rows/cols 5..8
    (area 16), in every frame.

        kp0  (2, 2) active, active, inactive     -> object 1 at t = 0, 1
        kp1  (6, 6) active, inactive, (6.6, 5.4) active -> object 2 at t = 0, 2
        kp2  (0, 9) active on background, then (5, 5) and (8, 8) on object 2

    Worked by hand:
        detected / present: 2/2, 2/2, 1/2          -> DOP = 5/6
        tracked / present:  t=1 obj 1 by kp0;
                            t=2 obj 2 by kp2       -> TOP = (1/2 + 1/2)/2 = 1/2
        background keypoints: 1, 0, 0              -> UAK = 1/3
        A_k = (9 + 16)/2 = 25/2
        RAK terms: t=0 and t=1 give 7/18 and 7/32 each,
                   t=2 gives |9-0|/9 = 1 and |16-25|/16 = 9/16
                   mean of the six = 25/54
    """
    mask = np.zeros((10, 10), dtype=np.uint8)
    mask[1:4, 1:4] = 1
    mask[5:9, 5:9] = 2
    masks = [mask.copy() for _ in range(3)]
    positions = [
        np.array([[2, 2], [6, 6], [0, 9]], dtype=float),
        np.array([[2, 2], [6, 6], [5, 5]], dtype=float),
        np.array([[2, 2], [6.6, 5.4], [8, 8]], dtype=float),
    ]
    active = [
        np.array([True, True, True]),
        np.array([True, False, True]),
        np.array([False, True, True]),
    ]
    expected = {"dop": Fraction(5, 6), "top": Fraction(1, 2), "uak": Fraction(1, 3),
                "rak": Fraction(25, 54), "a_k": Fraction(25, 2)}
    return positions, active, masks, expected


@pytest.fixture
def golden():
    return golden_scene()
