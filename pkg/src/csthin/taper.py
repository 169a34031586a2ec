"""Dolph-Chebyshev reference excitations and the reference far field."""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .fields import FarFieldPattern, build_steering, direction_cosines, evaluate_pattern


def chebyshev_poly(order, x):
    """Chebyshev polynomial of the first kind, valid for any real ``x``."""
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    inside = np.abs(x) <= 1
    out[inside] = np.cos(order * np.arccos(x[inside]))
    big = x > 1
    out[big] = np.cosh(order * np.arccosh(x[big]))
    small = x < -1
    out[small] = (-1) ** order * np.cosh(order * np.arccosh(-x[small]))
    return out


def chebyshev_taper(n, sll_db):
    """Dolph-Chebyshev weights for an ``n``-element half-wave line array.

    The array factor equals ``T_{n-1}(x0 cos(psi / 2))``, sampled at ``n``
    points and inverted by a DFT. Weights are scaled so the smallest is 1.
    """
    if int(n) != n or n < 3:
        raise InvalidArgumentError(f"Chebyshev taper needs n >= 3, got {n}")
    if not sll_db > 0:
        raise InvalidArgumentError(f"sidelobe level must be positive dB, got {sll_db}")
    n = int(n)
    order = n - 1
    ratio = 10 ** (sll_db / 20)
    x0 = np.cosh(np.arccosh(ratio) / order)
    k = np.arange(n)
    psi = 2 * np.pi * k / n
    af = chebyshev_poly(order, x0 * np.cos(psi / 2))
    offsets = k - order / 2
    w = (np.exp(-1j * np.outer(offsets, psi)) @ af).real / n
    w = 0.5 * (w + w[::-1])
    return w / w.min()


@dataclass(frozen=True)
class ReferenceSpec:
    taper_kind: str = "chebyshev"
    sll_target_db: float = 30.0
    scan_theta: float = 0.0
    scan_phi: float = 0.0

    def __post_init__(self):
        if self.taper_kind not in ("chebyshev", "uniform"):
            raise InvalidArgumentError(f"unknown taper kind {self.taper_kind!r}")
        if not self.sll_target_db > 0:
            raise InvalidArgumentError("sll_target_db must be positive")

    def to_dict(self):
        return {
            "taper_kind": self.taper_kind,
            "sll_target_db": self.sll_target_db,
            "scan_theta_deg": float(np.degrees(self.scan_theta)),
            "scan_phi_deg": float(np.degrees(self.scan_phi)),
        }


def _axis_taper(n, spec):
    # fewer than 3 elements have no sidelobe freedom: uniform
    if spec.taper_kind == "uniform" or n < 3:
        return np.ones(n)
    return chebyshev_taper(n, spec.sll_target_db)


def ura_reference_taper(grid, spec):
    """Separable product taper ``c_x[m] * c_y[n]`` with optional scan phase."""
    cx = _axis_taper(grid.nx, spec)
    cy = _axis_taper(grid.ny, spec)
    w = np.outer(cy, cx).ravel().astype(complex)
    if spec.scan_theta != 0.0:
        u0, v0 = direction_cosines(spec.scan_theta, spec.scan_phi)
        x, y = grid.positions()
        w *= np.exp(-2j * np.pi * (x * u0 + y * v0))
    return w


def reference_pattern(grid, spec, dirs, pattern=None, A=None):
    """Raw reference field ``p`` on ``dirs``; pass ``A`` to reuse a steering
    matrix."""
    if A is None:
        A = build_steering(grid, dirs, pattern)
    w = ura_reference_taper(grid, spec)
    return evaluate_pattern(A, w, dirs)
