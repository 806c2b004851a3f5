"""Independent reference implementations used as test oracles."""

import math
import statistics


def brute_force_median(values, px, arm, thick, min_valid):
    """Enumerate the cross pixel by pixel, drop zeros, sort, take the median."""
    h, w = values.shape
    c, r = math.floor(px[0] + 0.5), math.floor(px[1] + 0.5)
    a, t = arm // 2, thick // 2
    seen = set()
    for dy in range(-t, t + 1):
        for dx in range(-a, a + 1):
            seen.add((r + dy, c + dx))
    for dy in range(-a, a + 1):
        for dx in range(-t, t + 1):
            seen.add((r + dy, c + dx))
    vals = sorted(values[y, x] for y, x in seen if 0 <= y < h and 0 <= x < w and values[y, x] != 0)
    if len(vals) < min_valid:
        return None
    return statistics.median(vals)
