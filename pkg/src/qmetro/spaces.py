"""Parameter spaces for the Bayesian posterior.

A space is an ordered list of continuous and discrete dimensions, optionally
restricted by a joint-support predicate (e.g. an ordering constraint between
two frequencies). Units follow the global convention: frequencies in MHz,
times in microseconds.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np


@dataclass(frozen=True)
class Continuous:
    """Continuous dimension with a uniform prior on (lower, upper)."""

    name: str
    lower: float
    upper: float

    def __post_init__(self) -> None:
        if not self.lower < self.upper:
            raise ValueError(
                f"dimension {self.name!r}: lower ({self.lower}) must be "
                f"smaller than upper ({self.upper})"
            )


@dataclass(frozen=True)
class Discrete:
    """Discrete dimension taking values 0 .. cardinality-1, uniform prior."""

    name: str
    cardinality: int

    def __post_init__(self) -> None:
        if self.cardinality < 2:
            raise ValueError(
                f"dimension {self.name!r}: cardinality must be >= 2, "
                f"got {self.cardinality}"
            )


Dimension = Union[Continuous, Discrete]

# Vectorized predicate: (N, d) points -> (N,) booleans.
SupportPredicate = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ParameterSpace:
    """Ordered collection of dimensions with an optional joint support.

    Discrete coordinates are stored as floats holding integral values so a
    single (N, d) array can represent hybrid ensembles.
    """

    dims: tuple
    support: Optional[SupportPredicate] = None

    def __init__(
        self,
        dims: Sequence[Dimension],
        support: Optional[SupportPredicate] = None,
    ) -> None:
        object.__setattr__(self, "dims", tuple(dims))
        object.__setattr__(self, "support", support)
        if not self.dims:
            raise ValueError("a parameter space needs at least one dimension")

    @property
    def ndim(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> tuple:
        return tuple(d.name for d in self.dims)

    @property
    def continuous_mask(self) -> np.ndarray:
        return np.array([isinstance(d, Continuous) for d in self.dims])

    @property
    def lowers(self) -> np.ndarray:
        """Lower corner of the bounding box (0 for discrete dims)."""
        return np.array(
            [d.lower if isinstance(d, Continuous) else 0.0 for d in self.dims]
        )

    @property
    def uppers(self) -> np.ndarray:
        """Upper corner of the bounding box (cardinality-1 for discrete)."""
        return np.array(
            [
                d.upper if isinstance(d, Continuous) else float(d.cardinality - 1)
                for d in self.dims
            ]
        )

    def in_support(self, points: np.ndarray) -> np.ndarray:
        """Evaluate the joint-support predicate on (N, d) points."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        ok = np.ones(points.shape[0], dtype=bool)
        if self.support is not None:
            ok &= np.asarray(self.support(points), dtype=bool)
        return ok

    def index(self, name: str) -> int:
        return self.names.index(name)


def box_space(**bounds: tuple) -> ParameterSpace:
    """Shorthand for a purely continuous space: box_space(omega=(0, 1))."""
    return ParameterSpace(
        [Continuous(name, lo, hi) for name, (lo, hi) in bounds.items()]
    )
