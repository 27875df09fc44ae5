"""Problem definition and the sorted-frame relabeling.

All numerical work happens in the *sorted frame*: rank ``i`` (0-based
internally, 1-based in user-facing text) carries the original body
``sigma[i]``, so the ordering constraint reads ``x[0] <= x[1] <= ...``.
The gravitational constant is 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    BadPermutation,
    NonPositiveMass,
    SymmetryMassMismatch,
    TooFewBodies,
)

MIRROR_RTOL = 1e-12


@dataclass(frozen=True)
class SystemSpec:
    """Masses, half period ``T`` and ordering of a collinear problem.

    ``sigma`` is the image list ``(sigma(1), ..., sigma(n))`` with 1-based
    body labels; the default is the identity.
    """

    masses: tuple[float, ...]
    half_period: float = 1.0
    sigma: tuple[int, ...] | None = None
    symmetric_mode: bool = False
    n: int = field(default=0)

    def __post_init__(self):
        object.__setattr__(self, "masses", tuple(float(m) for m in self.masses))
        if self.n == 0:
            object.__setattr__(self, "n", len(self.masses))
        if self.sigma is None:
            object.__setattr__(self, "sigma", tuple(range(1, self.n + 1)))
        else:
            object.__setattr__(self, "sigma", tuple(int(s) for s in self.sigma))
        object.__setattr__(self, "half_period", float(self.half_period))

    @property
    def sorted_masses(self) -> np.ndarray:
        return np.asarray(to_sorted_frame(self.masses, self.sigma), dtype=float)


@dataclass
class PhaseState:
    time: float
    positions: np.ndarray
    velocities: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float)
        self.velocities = np.asarray(self.velocities, dtype=float)


def validate_spec(raw: SystemSpec) -> SystemSpec:
    """Return ``raw`` unchanged if it describes a well-posed problem."""
    n = raw.n
    if n != len(raw.masses):
        raise TooFewBodies(f"n={n} but {len(raw.masses)} masses given")
    if n < 3:
        raise TooFewBodies(f"need at least 3 bodies, got n={n}")
    for i, m in enumerate(raw.masses, start=1):
        if not np.isfinite(m) or m <= 0.0:
            raise NonPositiveMass(f"mass m_{i}={m} is not strictly positive")
    if not np.isfinite(raw.half_period) or raw.half_period <= 0.0:
        raise ValueError(f"half period must be positive, got {raw.half_period}")
    if len(raw.sigma) != n or sorted(raw.sigma) != list(range(1, n + 1)):
        raise BadPermutation(f"sigma={raw.sigma} is not a permutation of 1..{n}")
    if raw.symmetric_mode:
        m = to_sorted_frame(raw.masses, raw.sigma)
        for i in range(n):
            a, b = m[i], m[n - 1 - i]
            if abs(a - b) > MIRROR_RTOL * max(abs(a), abs(b)):
                raise SymmetryMassMismatch(
                    f"symmetric mode needs m_sigma({i + 1}) = m_sigma({n - i}), "
                    f"got {a} and {b}"
                )
    return raw


def to_sorted_frame(values: Sequence, sigma: Sequence[int]) -> list:
    """Reindex per-body values so that rank ``i`` holds ``values[sigma(i)]``."""
    return [values[s - 1] for s in sigma]


def from_sorted_frame(values: Sequence, sigma: Sequence[int]) -> list:
    """Inverse of :func:`to_sorted_frame`."""
    out = [None] * len(sigma)
    for rank, s in enumerate(sigma):
        out[s - 1] = values[rank]
    return out


def total_mass_and_momentum(state: PhaseState, masses) -> tuple[float, float]:
    m = np.asarray(masses, dtype=float)
    return float(m.sum()), float(np.dot(m, state.velocities))
