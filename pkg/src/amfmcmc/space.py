"""Box-constrained parameter spaces with uniform priors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ParameterSpace:
    """Axis-aligned box of admissible parameter vectors.

    The prior over the box is uniform; log-density is constant inside and
    -inf outside, so posterior computations drop the constant.

    Parameters
    ----------
    names : tuple of str
        One label per dimension.
    lower, upper : array_like
        Box bounds, ``lower[i] < upper[i]`` for every i.
    """

    names: tuple
    lower: np.ndarray
    upper: np.ndarray

    def __init__(self, names, lower, upper):
        object.__setattr__(self, "names", tuple(str(n) for n in names))
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        if lo.ndim != 1 or lo.shape != hi.shape or len(self.names) != lo.size:
            raise ValueError("names, lower and upper must have matching 1-d shapes")
        if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
            raise ValueError("bounds must be finite")
        if np.any(lo >= hi):
            raise ValueError("every lower bound must be strictly below its upper bound")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def ndim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, x) -> np.ndarray:
        """Vectorized membership test; accepts a vector or an (n, ndim) batch."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        ok = np.all((x >= self.lower) & (x <= self.upper), axis=1)
        return ok if ok.size > 1 else bool(ok[0])

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n points uniformly from the box, shape (n, ndim)."""
        u = rng.random((int(n), self.ndim))
        return self.lower + u * self.widths

    def reflect(self, x: np.ndarray) -> np.ndarray:
        """Fold out-of-box coordinates back inside by reflection at the bounds.

        Reflection is applied modulo the doubled box width so arbitrarily far
        excursions land inside; it is an involution-symmetric map, which keeps
        the parallel-direction proposal kernel symmetric on the box.
        """
        x = np.array(x, dtype=float)
        w = self.widths
        # map into [0, 2w) then fold the upper half back
        y = np.mod(x - self.lower, 2.0 * w)
        y = np.where(y > w, 2.0 * w - y, y)
        return self.lower + y
