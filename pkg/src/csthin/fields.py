"""Steering matrices, far-field evaluation, coordinate conversion and
pattern metrics.

Angles are radians throughout the API. Patterns follow ``P = A @ w``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    InsufficientResolutionError,
    InvalidArgumentError,
    OutOfDomainError,
    UndefinedDirectivityError,
)

_ANGLE_TOL = 1e-9


@dataclass(frozen=True)
class DirectionGrid:
    """Regular (theta, phi) sampling of the upper hemisphere.

    The pole is stored once, so ``samples`` has ``1 + (n_theta - 1) * n_phi``
    rows when ``thetas[0] == 0``. ``mesh`` expands a flat vector back to the
    full ``(n_theta, n_phi)`` table for quadrature.
    """

    thetas: np.ndarray
    phis: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.thetas, dtype=float)
        f = np.asarray(self.phis, dtype=float)
        if t.ndim != 1 or f.ndim != 1 or t.size == 0 or f.size == 0:
            raise InvalidArgumentError("thetas and phis must be non-empty 1-D arrays")
        if np.any(np.diff(t) <= 0) or np.any(np.diff(f) <= 0):
            raise InvalidArgumentError("thetas and phis must be strictly increasing")
        if t[0] < -_ANGLE_TOL or t[-1] > np.pi / 2 + _ANGLE_TOL:
            raise InvalidArgumentError("theta must lie in [0, pi/2]")
        if f[0] < -_ANGLE_TOL or f[-1] >= 2 * np.pi - _ANGLE_TOL:
            raise InvalidArgumentError("phi must lie in [0, 2 pi)")
        object.__setattr__(self, "thetas", t)
        object.__setattr__(self, "phis", f)

    @property
    def has_pole(self):
        return self.thetas[0] == 0.0

    @property
    def size(self):
        n_rings = self.thetas.size - (1 if self.has_pole else 0)
        return n_rings * self.phis.size + (1 if self.has_pole else 0)

    @property
    def theta(self):
        return self._flat()[0]

    @property
    def phi(self):
        return self._flat()[1]

    def _flat(self):
        rings = self.thetas[1:] if self.has_pole else self.thetas
        tt, ff = np.meshgrid(rings, self.phis, indexing="ij")
        theta, phi = tt.ravel(), ff.ravel()
        if self.has_pole:
            theta = np.concatenate(([0.0], theta))
            phi = np.concatenate(([0.0], phi))
        return theta, phi

    def mesh(self, values):
        """Reshape a flat per-direction vector to ``(n_theta, n_phi)``."""
        values = np.asarray(values)
        if values.shape[0] != self.size:
            raise InvalidArgumentError("value count does not match direction grid")
        if not self.has_pole:
            return values.reshape(self.thetas.size, self.phis.size)
        body = values[1:].reshape(self.thetas.size - 1, self.phis.size)
        pole = np.full((1, self.phis.size), values[0], dtype=values.dtype)
        return np.vstack([pole, body])

    def phi_column(self, phi):
        """Index of ``phi`` in ``phis`` (radians), or ``None``."""
        phi = phi % (2 * np.pi)
        d = np.abs((self.phis - phi + np.pi) % (2 * np.pi) - np.pi)
        j = int(np.argmin(d))
        return j if d[j] < 1e-9 else None

    def to_dict(self):
        return {
            "theta_deg": [float(v) for v in np.degrees(self.thetas)],
            "phi_deg": [float(v) for v in np.degrees(self.phis)],
        }


def hemisphere_grid(theta_step_deg=1.0, phi_step_deg=2.0):
    """Default synthesis sampling: theta in [0, 90] and phi in [0, 360)."""
    if theta_step_deg <= 0 or phi_step_deg <= 0:
        raise InvalidArgumentError("angular steps must be positive")
    n_t = int(round(90.0 / theta_step_deg))
    n_p = int(round(360.0 / phi_step_deg))
    if not (math.isclose(n_t * theta_step_deg, 90.0) and math.isclose(n_p * phi_step_deg, 360.0)):
        raise InvalidArgumentError("steps must divide 90 and 360 degrees")
    thetas = np.radians(np.arange(n_t + 1) * theta_step_deg)
    phis = np.radians(np.arange(n_p) * phi_step_deg)
    return DirectionGrid(thetas, phis)


# -- element patterns -------------------------------------------------------


class ElementPattern:
    """Complex element factor ``g(theta, phi)``."""

    def __call__(self, theta, phi):
        raise NotImplementedError


class IsotropicPattern(ElementPattern):
    def __call__(self, theta, phi):
        return np.ones(np.broadcast(theta, phi).shape, dtype=complex)

    def __repr__(self):
        return "IsotropicPattern()"


class FunctionPattern(ElementPattern):
    """Wraps a callable ``f(theta, phi) -> complex``; handy for analytic
    element models such as ``cos(theta)``."""

    def __init__(self, func):
        self.func = func

    def __call__(self, theta, phi):
        return np.asarray(self.func(theta, phi), dtype=complex) * np.ones(
            np.broadcast(theta, phi).shape
        )


@dataclass
class TabulatedPattern(ElementPattern):
    """Pattern sampled on a regular grid, bilinear in (theta, phi) with phi
    wraparound.

    ``magnitude`` is linear and ``phase`` in radians, both shaped
    ``(len(thetas), len(phis))``. Interpolation acts on the complex value.
    """

    thetas: np.ndarray
    phis: np.ndarray
    magnitude: np.ndarray
    phase: np.ndarray = None
    _table: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.thetas = np.asarray(self.thetas, dtype=float)
        self.phis = np.asarray(self.phis, dtype=float)
        self.magnitude = np.asarray(self.magnitude, dtype=float)
        if self.phase is None:
            self.phase = np.zeros_like(self.magnitude)
        self.phase = np.asarray(self.phase, dtype=float)
        shape = (self.thetas.size, self.phis.size)
        if self.magnitude.shape != shape or self.phase.shape != shape:
            raise InvalidArgumentError(f"pattern tables must have shape {shape}")
        if np.any(self.magnitude < 0) or not np.all(np.isfinite(self.magnitude)):
            raise InvalidArgumentError("magnitudes must be finite and non-negative")
        if self.thetas.size < 2 or self.phis.size < 2:
            raise InvalidArgumentError("pattern table needs at least 2x2 samples")
        self._table = self.magnitude * np.exp(1j * self.phase)

    def __call__(self, theta, phi):
        theta = np.asarray(theta, dtype=float)
        phi = np.asarray(phi, dtype=float)
        theta, phi = np.broadcast_arrays(theta, phi)
        t0, t1 = self.thetas[0], self.thetas[-1]
        if np.any(theta < t0 - _ANGLE_TOL) or np.any(theta > t1 + _ANGLE_TOL):
            raise OutOfDomainError(
                f"theta outside pattern table [{np.degrees(t0):g}, {np.degrees(t1):g}] deg"
            )
        theta = np.clip(theta, t0, t1)

        i = np.searchsorted(self.thetas, theta, side="right") - 1
        i = np.clip(i, 0, self.thetas.size - 2)
        ft = (theta - self.thetas[i]) / (self.thetas[i + 1] - self.thetas[i])

        # phi axis is periodic; the cell after the last column wraps to column 0
        period = 2 * np.pi
        phis_ext = np.append(self.phis, self.phis[0] + period)
        ph = (phi - self.phis[0]) % period + self.phis[0]
        j = np.searchsorted(phis_ext, ph, side="right") - 1
        j = np.clip(j, 0, self.phis.size - 1)
        fp = (ph - phis_ext[j]) / (phis_ext[j + 1] - phis_ext[j])
        j1 = (j + 1) % self.phis.size

        tab = self._table
        return (
            (1 - ft) * (1 - fp) * tab[i, j]
            + (1 - ft) * fp * tab[i, j1]
            + ft * (1 - fp) * tab[i + 1, j]
            + ft * fp * tab[i + 1, j1]
        )


# -- steering and evaluation ------------------------------------------------


def direction_cosines(theta, phi):
    st = np.sin(theta)
    return st * np.cos(phi), st * np.sin(phi)


def build_steering(grid, dirs, pattern=None):
    """Steering matrix ``A[q, k] = g(q) * exp(j 2 pi (x_k u_q + y_k v_q))``.

    ``dirs`` is a :class:`DirectionGrid` or a ``(theta, phi)`` pair of
    arrays.
    """
    x, y = grid.positions()
    return steering_from_positions(x, y, dirs, pattern)


def _as_angles(dirs):
    if isinstance(dirs, DirectionGrid):
        return dirs.theta, dirs.phi
    theta, phi = dirs
    theta, phi = np.broadcast_arrays(np.atleast_1d(np.asarray(theta, dtype=float)),
                                     np.atleast_1d(np.asarray(phi, dtype=float)))
    return theta, phi


@dataclass
class FarFieldPattern:
    dirs: DirectionGrid
    values: np.ndarray
    normalized: bool = False

    @property
    def peak(self):
        return float(np.max(np.abs(self.values))) if self.values.size else 0.0

    def normalize(self):
        peak = self.peak
        if peak == 0:
            raise InvalidArgumentError("cannot normalize a zero pattern")
        return FarFieldPattern(self.dirs, self.values / peak, normalized=True)

    def cut(self, phi):
        """Principal cut through ``phi`` (radians).

        Returns signed angles in degrees (negative side taken from
        ``phi + pi``) and complex values, sorted by angle.
        """
        return pattern_cut(self.dirs, self.values, phi)


def evaluate_pattern(A, w, dirs=None):
    """Far field ``P = A @ w``. Returns a bare array unless ``dirs`` is given."""
    w = np.asarray(w)
    if w.ndim != 1 or w.shape[0] != A.shape[1]:
        raise InvalidArgumentError(
            f"taper length {w.shape[0] if w.ndim else 0} does not match {A.shape[1]} candidates"
        )
    P = A @ w
    if dirs is None:
        return P
    return FarFieldPattern(dirs, P)


def pattern_cut(dirs, values, phi):
    if not dirs.has_pole:
        raise InvalidArgumentError("cuts need a direction grid that contains the pole")
    j_pos = dirs.phi_column(phi)
    j_neg = dirs.phi_column(phi + np.pi)
    if j_pos is None or j_neg is None:
        raise InvalidArgumentError(
            f"direction grid lacks phi = {np.degrees(phi):g} deg or its mirror"
        )
    table = dirs.mesh(values)
    t_deg = np.degrees(dirs.thetas)
    angles = np.concatenate((-t_deg[:0:-1], t_deg))
    vals = np.concatenate((table[:0:-1, j_neg], table[:, j_pos]))
    return angles, vals


# -- coordinate conversion --------------------------------------------------


def thetaphi_to_azel(theta, phi):
    """Spherical (theta, phi) to (azimuth, elevation).

    ``sin(el) = sin(phi) sin(theta)`` and ``tan(az) = cos(phi) tan(theta)``.
    """
    theta = np.asarray(theta, dtype=float)
    phi = np.asarray(phi, dtype=float)
    st = np.sin(theta)
    x = np.cos(phi) * st
    z = np.cos(theta)
    # atan2 keeps full precision near el = +-90 deg where arcsin does not
    el = np.arctan2(np.sin(phi) * st, np.hypot(x, z))
    az = np.arctan2(x, z)
    return az, el


def azel_to_thetaphi(az, el):
    az = np.asarray(az, dtype=float)
    el = np.asarray(el, dtype=float)
    ce = np.cos(el)
    x = ce * np.sin(az)
    y = np.sin(el)
    z = ce * np.cos(az)
    theta = np.arctan2(np.hypot(x, y), z)
    phi = np.arctan2(y, x) % (2 * np.pi)
    return theta, phi


# -- metrics ----------------------------------------------------------------


def _to_db(mag, ref):
    with np.errstate(divide="ignore"):
        return 20 * np.log10(mag / ref)


@dataclass
class CutMetrics:
    peak_db: float
    hpbw_deg: float
    sll_db: float
    peak_angle_deg: float
    first_nulls_deg: tuple

    def to_dict(self):
        return {
            "peak_db": self.peak_db,
            "hpbw_deg": self.hpbw_deg,
            "sll_db": self.sll_db,
            "peak_angle_deg": self.peak_angle_deg,
            "first_nulls_deg": list(self.first_nulls_deg),
        }


def main_lobe_bounds(mag):
    """Indices ``(lo, pk, hi)`` of the first minima around the peak."""
    pk = int(np.argmax(mag))
    lo = pk
    while lo > 0 and mag[lo - 1] <= mag[lo]:
        lo -= 1
    hi = pk
    while hi < mag.size - 1 and mag[hi + 1] <= mag[hi]:
        hi += 1
    return lo, pk, hi


def _crossing(angles, rel, i_in, i_out, level):
    """Angle where the normalized magnitude ``rel`` first drops to
    ``level`` walking from ``i_in`` toward ``i_out``; linear interpolation
    between the bracketing samples."""
    step = 1 if i_out > i_in else -1
    i = i_in
    while i != i_out:
        j = i + step
        if rel[j] <= level:
            a0, a1, r0, r1 = angles[i], angles[j], rel[i], rel[j]
            return a0 + (level - r0) * (a1 - a0) / (r1 - r0)
        i = j
    return None


def cut_metrics(angles_deg, values, min_lobe_samples=5):
    """Peak, half-power beamwidth and sidelobe level of a 1-D cut."""
    angles = np.asarray(angles_deg, dtype=float)
    mag = np.abs(np.asarray(values))
    peak = float(mag.max())
    if peak == 0:
        raise InvalidArgumentError("pattern cut is identically zero")
    lo, pk, hi = main_lobe_bounds(mag)
    if hi - lo + 1 < min_lobe_samples:
        raise InsufficientResolutionError(
            f"main lobe spans {hi - lo + 1} samples; need at least {min_lobe_samples}"
        )
    rel = mag / peak
    # the lobe must also be sampled above -6 dB on both sides of the peak,
    # otherwise a coarse cut can walk straight through the first nulls
    above = 1
    i = pk - 1
    while i >= 0 and rel[i] >= 0.5:
        above, i = above + 1, i - 1
    i = pk + 1
    while i < mag.size and rel[i] >= 0.5:
        above, i = above + 1, i + 1
    if above < 3 and 0 < pk < mag.size - 1:
        raise InsufficientResolutionError(
            f"only {above} sample(s) above -6 dB in the main lobe"
        )
    half_power = np.sqrt(0.5)
    left = _crossing(angles, rel, pk, lo, half_power) if lo < pk else None
    right = _crossing(angles, rel, pk, hi, half_power) if hi > pk else None
    if left is None or right is None:
        hpbw = math.inf
    else:
        hpbw = float(right - left)
    side = np.concatenate((mag[:lo], mag[hi + 1:]))
    sll = float(_to_db(side.max(), peak)) if side.size else -math.inf
    return CutMetrics(
        peak_db=float(20 * np.log10(peak)),
        hpbw_deg=hpbw,
        sll_db=sll,
        peak_angle_deg=float(angles[pk]),
        first_nulls_deg=(float(angles[lo]), float(angles[hi])),
    )


def sidelobe_level(angles_deg, values, lo_deg=None, hi_deg=None, use_abs_angle=True):
    """Highest sidelobe (dB re. cut peak) restricted to an angular window.

    The window applies to ``|angle|`` unless ``use_abs_angle`` is False.
    Returns ``-inf`` when no sidelobe sample falls inside the window.
    """
    angles = np.asarray(angles_deg, dtype=float)
    mag = np.abs(np.asarray(values))
    lo, _, hi = main_lobe_bounds(mag)
    mask = np.ones(mag.size, dtype=bool)
    mask[lo:hi + 1] = False
    a = np.abs(angles) if use_abs_angle else angles
    if lo_deg is not None:
        mask &= a >= lo_deg
    if hi_deg is not None:
        mask &= a <= hi_deg
    if not mask.any():
        return -math.inf
    return float(_to_db(mag[mask].max(), mag.max()))


def pattern_metrics(P, cut_phi=np.pi / 2):
    """Metrics of a :class:`FarFieldPattern` on the cut through ``cut_phi``."""
    angles, vals = P.cut(cut_phi)
    return cut_metrics(angles, vals)


def directivity(P):
    """Directivity in dBi assuming radiation into the upper hemisphere only.

    Trapezoidal quadrature of ``|P|^2 sin(theta)`` over the direction grid;
    phi is treated as periodic.
    """
    dirs = P.dirs
    power = np.abs(dirs.mesh(P.values)) ** 2
    if not np.any(power > 0):
        raise UndefinedDirectivityError("pattern radiates no power")
    if dirs.thetas.size < 2 or dirs.phis.size < 2:
        raise InvalidArgumentError("directivity needs at least a 2x2 direction grid")
    dphi = 2 * np.pi / dirs.phis.size
    ring = power.sum(axis=1) * dphi
    total = np.trapezoid(ring * np.sin(dirs.thetas), dirs.thetas)
    if total <= 0:
        raise UndefinedDirectivityError("pattern radiates no power")
    return float(10 * np.log10(4 * np.pi * power.max() / total))


def steering_from_positions(x, y, dirs, pattern=None):
    """Steering matrix for arbitrary element positions (wavelengths)."""
    theta, phi = _as_angles(dirs)
    g = (pattern or IsotropicPattern())(theta, phi)
    u, v = direction_cosines(theta, phi)
    A = np.exp(2j * np.pi * (np.outer(u, np.asarray(x, float)) + np.outer(v, np.asarray(y, float))))
    A *= g[:, None]
    return A
