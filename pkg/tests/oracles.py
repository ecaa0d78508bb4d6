"""Independent reference computations shared by several test modules."""

import math


def brute_force_gadt(times, c, d, log_h, horizon):
    """Exact verdict of the dwell-time inequality from impulse-time pairs.

    Between impulses the left side only changes through ``-c (t - s)``, so the
    supremum over ``s <= t`` is approached with ``s`` at or just before an
    impulse (or at 0) and ``t`` at or just before an impulse (or at the
    horizon). Counts are taken by direct enumeration.
    """
    times = [t for t in times if t <= horizon]
    starts = [(0.0, 0)]  # (s, index of the first impulse counted)
    ends = [(horizon, len(times))]  # (t, number of impulses up to t)
    for i, tk in enumerate(times):
        starts += [(tk, i + 1), (tk, i)]  # s = t_k, and s -> t_k from below
        ends += [(tk, i + 1), (tk, i)]    # t = t_k, and t -> t_k from below
    for s, first in starts:
        for t, upto in ends:
            if t < s or (t == s and upto < first):
                continue
            n = max(upto - first, 0)
            if -d * n - c * (t - s) > log_h(t - s) + 1e-12:
                return False
    return True


def log_schedule_norm(t):
    """``|x(t)|`` for ``x' = -x`` from 1 plus unit arrivals at ``ln(k + 1)``, by direct summation.

    Each arrival at ``t_k`` contributes ``e^{-2 (t - t_k)} = e^{-2t} (k + 1)^2``.
    """
    K = math.floor(math.exp(t)) - 1
    while K >= 1 and math.log(K + 1) > t:
        K -= 1
    while math.log(K + 2) <= t:
        K += 1
    squares = (K + 1) * (K + 2) * (2 * K + 3) // 6 - 1  # sum of m^2 for m = 2 .. K + 1
    return math.sqrt(math.exp(-2 * t) * (1 + squares))
