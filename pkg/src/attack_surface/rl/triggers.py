"""Episodes at which the belief table may change.

Every episode up to ``tau(i0)`` is a trigger; after that only the
geometrically spaced ``tau(i) = ceil((1 + eta)^i)`` are, so the number of
policy switches grows logarithmically in the number of episodes.
"""

from __future__ import annotations

import bisect
import math
from typing import List

from ..errors import ParameterDomainError


def default_eta(H: int) -> float:
    return 1.0 / (2 * H * (H + 1))


def tau(i: int, eta: float) -> int:
    return math.ceil(math.exp(i * math.log1p(eta)))


def first_sparse_index(eta: float, H: int) -> int:
    """i0 = ceil(log(10 H^2) / log(1 + eta))."""
    return math.ceil(math.log(10 * H * H) / math.log1p(eta))


def trigger_times(eta: float, H: int, T: int) -> List[int]:
    """Sorted trigger episodes in [1, T]."""
    if not eta > 0:
        raise ParameterDomainError("eta must be > 0")
    if H < 1:
        raise ParameterDomainError("H must be >= 1")
    i0 = first_sparse_index(eta, H)
    dense_end = tau(i0, eta)
    out = list(range(1, min(dense_end, T) + 1))
    i = i0 + 1
    last = dense_end
    while True:
        t = tau(i, eta)
        if t > T:
            break
        if t > last:
            out.append(t)
            last = t
        i += 1
    return out


def tau_last(triggers: List[int], t: int) -> int:
    """Latest trigger at or before episode t (0 if none)."""
    k = bisect.bisect_right(triggers, t)
    return triggers[k - 1] if k else 0
