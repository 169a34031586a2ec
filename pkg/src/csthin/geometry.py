"""Candidate element lattice on the xy-plane.

Positions are kept in wavelengths; metres only appear at I/O boundaries.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError

C0 = 299_792_458.0


@dataclass(frozen=True)
class ElementSite:
    index: int
    x_wl: float
    y_wl: float


@dataclass(frozen=True)
class ArrayGrid:
    """An ``nx`` by ``ny`` lattice centred on the origin.

    Linear index is ``k = n * nx + m`` with ``m`` the column (x) and ``n``
    the row (y).
    """

    nx: int
    ny: int
    pitch_x: float
    pitch_y: float
    frequency_hz: float

    def __post_init__(self):
        if int(self.nx) != self.nx or int(self.ny) != self.ny:
            raise InvalidArgumentError("nx and ny must be integers")
        if self.nx < 1 or self.ny < 1:
            raise InvalidArgumentError(f"grid dimensions must be >= 1, got {self.nx}x{self.ny}")
        if not (self.pitch_x > 0 and self.pitch_y > 0):
            raise InvalidArgumentError("pitch must be positive")
        if not self.frequency_hz > 0:
            raise InvalidArgumentError("frequency must be positive")

    @property
    def size(self):
        return self.nx * self.ny

    @property
    def wavelength_m(self):
        return C0 / self.frequency_hz

    @property
    def aperture_wl(self):
        return ((self.nx - 1) * self.pitch_x, (self.ny - 1) * self.pitch_y)

    def index(self, m, n):
        if not (0 <= m < self.nx and 0 <= n < self.ny):
            raise InvalidArgumentError(f"site ({m}, {n}) outside {self.nx}x{self.ny} grid")
        return n * self.nx + m

    def mn(self, k):
        self._check_index(k)
        return k % self.nx, k // self.nx

    def _check_index(self, k):
        if not 0 <= k < self.size:
            raise InvalidArgumentError(f"index {k} out of range 0..{self.size - 1}")

    def site(self, k):
        m, n = self.mn(k)
        x = (m - (self.nx - 1) / 2) * self.pitch_x
        y = (n - (self.ny - 1) / 2) * self.pitch_y
        return ElementSite(int(k), x, y)

    def positions(self):
        """Return ``(x, y)`` arrays of length ``size`` in wavelengths."""
        k = np.arange(self.size)
        m = k % self.nx
        n = k // self.nx
        x = (m - (self.nx - 1) / 2) * self.pitch_x
        y = (n - (self.ny - 1) / 2) * self.pitch_y
        return x, y

    def center_index(self):
        """Site nearest the origin (exact centre for odd dimensions)."""
        return self.index((self.nx - 1) // 2, (self.ny - 1) // 2)

    def to_dict(self):
        return {
            "nx": self.nx,
            "ny": self.ny,
            "pitch_x": self.pitch_x,
            "pitch_y": self.pitch_y,
            "frequency_hz": self.frequency_hz,
        }


def build_grid(nx, ny, pitch_x, pitch_y, frequency_hz):
    return ArrayGrid(nx, ny, float(pitch_x), float(pitch_y), float(frequency_hz))


def _check_indices(grid, active):
    idx = np.asarray(active, dtype=np.int64).ravel()
    if idx.size and (idx.min() < 0 or idx.max() >= grid.size):
        raise InvalidArgumentError(f"active index out of range 0..{grid.size - 1}")
    return idx


def pairwise_distances(grid, active=None):
    """Euclidean distance table in wavelengths between the given sites.

    ``active`` defaults to every site. Row/column order follows ``active``.
    """
    idx = np.arange(grid.size) if active is None else _check_indices(grid, active)
    x, y = grid.positions()
    x, y = x[idx], y[idx]
    dx = x[:, None] - x[None, :]
    dy = y[:, None] - y[None, :]
    # hypot(a, b) == hypot(-a, -b) bitwise, so the table is exactly symmetric
    return np.hypot(dx, dy)
