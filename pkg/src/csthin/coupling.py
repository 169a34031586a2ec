"""Surrogate mutual-impedance models, two-port Z/S conversion and the
coupling burden used to steer the reweighting."""

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import sici

from .errors import DegenerateNetworkError, InvalidArgumentError, PatternFormatError
from .geometry import pairwise_distances

ETA0_OVER_4PI = 29.9792458  # free-space impedance / 4 pi, ohms

MODEL_KINDS = ("induced_emf_dipole", "exp_fit")


@dataclass(frozen=True)
class CouplingModel:
    """Distance-to-impedance model.

    ``induced_emf_dipole`` treats each element as a thin side-by-side dipole
    of ``length_wl`` with sinusoidal current; ``exp_fit`` is
    ``c0 * exp(-decay * d) * exp(-1j * phase_slope * d)``.
    """

    kind: str = "induced_emf_dipole"
    length_wl: float = 0.5
    c0: float = 30.0
    decay: float = 2.0
    phase_slope: float = 2 * np.pi
    z0: float = 50.0
    z11: complex = 50 + 0j
    eps_r: float = 3.55

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise InvalidArgumentError(f"unknown coupling model {self.kind!r}")
        if not self.length_wl > 0:
            raise InvalidArgumentError("element length must be positive")
        if self.kind == "exp_fit" and not self.decay > 0:
            raise InvalidArgumentError("exp_fit decay must be positive")
        if not self.z0 > 0:
            raise InvalidArgumentError("reference impedance must be positive")

    def to_dict(self):
        return {
            "kind": self.kind,
            "length_wl": self.length_wl,
            "c0": self.c0,
            "decay": self.decay,
            "phase_slope": self.phase_slope,
            "z0": self.z0,
            "z11": [complex(self.z11).real, complex(self.z11).imag],
            "eps_r": self.eps_r,
        }

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "z11" in d and isinstance(d["z11"], (list, tuple)):
            d["z11"] = complex(*d["z11"])
        return cls(**d)


def _expint_term(w):
    """``Ci(w) - j Si(w)``, the antiderivative of ``exp(-j w) / w``."""
    si, ci = sici(w)
    return ci - 1j * si


def _path_integral(s, d, a, b):
    """Integral of ``exp(j s z) exp(-j R) / R`` for z in [a, b] with
    ``R = sqrt(d^2 + z^2)``; all lengths in radians (k * length)."""

    def w(z):
        r = np.hypot(d, z)
        sz = s * z
        # R - s z loses precision when s z ~ R; use the conjugate form
        return np.where(sz > 0, d * d / (r + sz), r - sz)

    return -s * (_expint_term(w(b)) - _expint_term(w(a)))


def dipole_mutual_impedance(d_wl, length_wl=0.5):
    """Induced-EMF mutual impedance of two parallel side-by-side dipoles.

    Referred to the current maximum. ``d_wl`` may be an array; all entries
    must be positive.
    """
    k = 2 * np.pi
    d = k * np.asarray(d_wl, dtype=float)
    h = k * length_wl / 2
    # near field of a sinusoidal-current dipole: three spherical sources at
    # z = +h, -h (weight 1) and z = 0 (weight -2 cos kh)
    sources = ((h, 1.0), (-h, 1.0), (0.0, -2 * np.cos(h)))
    total = np.zeros(d.shape, dtype=complex)
    for c, weight in sources:
        if weight == 0:
            continue
        for sign in (1, -1):
            # sin(k(h - |z|)) = (e^{j(h-|z|)} - e^{-j(h-|z|)}) / 2j
            coef = sign / 2j * np.exp(1j * sign * h)
            # upper half z in [0, h]: e^{-j sign z}
            upper = np.exp(-1j * sign * c) * _path_integral(-sign, d, -c, h - c)
            # lower half z in [-h, 0]: e^{+j sign z}
            lower = np.exp(1j * sign * c) * _path_integral(sign, d, -h - c, -c)
            total += weight * coef * (upper + lower)
    return 1j * ETA0_OVER_4PI * total


def mutual_impedance(model, separation):
    """Mutual impedance (ohms) at ``separation`` wavelengths; ``Z11`` at 0."""
    sep = np.asarray(separation, dtype=float)
    if np.any(sep < 0) or not np.all(np.isfinite(sep)):
        raise InvalidArgumentError("separation must be finite and non-negative")
    out = np.full(sep.shape, complex(model.z11), dtype=complex)
    pos = sep > 0
    if np.any(pos):
        d = sep[pos]
        if model.kind == "induced_emf_dipole":
            out[pos] = dipole_mutual_impedance(d, model.length_wl)
        else:
            out[pos] = model.c0 * np.exp(-model.decay * d) * np.exp(-1j * model.phase_slope * d)
    return out[()] if out.ndim == 0 else out


def z_to_s12(z11, z12, z21, z22, z0=50.0):
    """Transmission coefficient ``S12`` of a two-port from its Z matrix."""
    den = (z11 + z0) * (z22 + z0) - z12 * z21
    if np.any(den == 0):
        raise DegenerateNetworkError("singular two-port: (Z11+Z0)(Z22+Z0) - Z12 Z21 = 0")
    return 2 * z12 * z0 / den


def s12_to_z12(s12, z11, z0=50.0):
    """Inverse of :func:`z_to_s12` for a symmetric reciprocal two-port.

    Picks the root that vanishes with ``s12``.
    """
    s12 = np.asarray(s12, dtype=complex)
    a = z11 + z0
    root = np.sqrt(z0 * z0 + (s12 * a) ** 2)
    den = z0 + root
    if np.any(den == 0):
        raise DegenerateNetworkError("no finite Z12 for this S12")
    out = s12 * a * a / den
    return out[()] if out.ndim == 0 else out


@dataclass(frozen=True)
class CouplingVectors:
    z_x: np.ndarray
    z_y: np.ndarray
    center: tuple

    @property
    def max_x(self):
        return _max_off_center(self.z_x, self.center[0])

    @property
    def max_y(self):
        return _max_off_center(self.z_y, self.center[1])


def _max_off_center(z, c):
    mags = np.abs(np.delete(z, c))
    return float(mags.max()) if mags.size else 0.0


def coupling_vectors(model, grid):
    """Impedances from the central element along its row and column."""
    x, y = grid.positions()
    mc, nc = (grid.nx - 1) // 2, (grid.ny - 1) // 2
    xs = x[: grid.nx]
    ys = y[:: grid.nx]
    z_x = mutual_impedance(model, np.abs(xs - xs[mc]))
    z_y = mutual_impedance(model, np.abs(ys - ys[nc]))
    return CouplingVectors(np.atleast_1d(z_x), np.atleast_1d(z_y), (mc, nc))


def default_threshold(model, pitch_wl=0.5):
    return float(abs(mutual_impedance(model, pitch_wl)))


def coupling_burden(model, grid, active=None, w=None, threshold=None, distances=None):
    """Per-candidate excess coupling from the active set.

    ``score[k] = sum_{j active, j != k} max(0, |Z(d_kj)| - t) / t``.
    ``active`` defaults to the nonzero entries of ``w``.
    """
    if threshold is None:
        threshold = default_threshold(model)
    if not threshold > 0:
        raise InvalidArgumentError("coupling threshold must be positive")
    if active is None:
        if w is None:
            raise InvalidArgumentError("need an active set or a taper")
        active = np.flatnonzero(np.asarray(w))
    active = np.asarray(active, dtype=np.int64)
    score = np.zeros(grid.size)
    if active.size == 0:
        return score
    if distances is None:
        distances = pairwise_distances(grid)
    d = distances[:, active]
    uniq, inv = np.unique(d, return_inverse=True)
    excess = np.maximum(0.0, np.abs(mutual_impedance(model, uniq)) - threshold) / threshold
    excess[uniq == 0] = 0.0  # the element itself
    # fsum is correctly rounded, so adding an active site never lowers a score
    return np.array([math.fsum(row) for row in excess[inv].reshape(d.shape)])


def fit_exp_model(separation_wl, s12, z11=50 + 0j, z0=50.0, eps_r=3.55):
    """Least-squares ``exp_fit`` from measured S12 against separation.

    Log-magnitude of the converted Z12 is fitted by a line; the phase slope
    is fitted through the origin on the unwrapped phase.
    """
    d = np.asarray(separation_wl, dtype=float)
    if d.size < 2:
        raise InvalidArgumentError("need at least two calibration points")
    z12 = np.asarray(s12_to_z12(np.asarray(s12, dtype=complex), z11, z0))
    order = np.argsort(d)
    d, z12 = d[order], z12[order]
    design = np.column_stack([np.ones_like(d), -d])
    (log_c0, decay), *_ = np.linalg.lstsq(design, np.log(np.abs(z12)), rcond=None)
    phase = np.unwrap(np.angle(z12))
    slope = -float(d @ phase / (d @ d))
    return CouplingModel(
        kind="exp_fit", c0=float(np.exp(log_c0)), decay=float(decay),
        phase_slope=slope, z0=z0, z11=z11, eps_r=eps_r,
    )


def load_calibration(path):
    """Read ``separation_wl,mag_s12_db,phase_deg`` rows; returns (d, s12)."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["separation_wl", "mag_s12_db", "phase_deg"]:
            raise PatternFormatError("expected header separation_wl,mag_s12_db,phase_deg", row=1)
        d, s = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                sep, mag_db, ph = (float(v) for v in row)
            except ValueError:
                raise PatternFormatError("expected three numeric fields", row=lineno) from None
            if not all(np.isfinite([sep, mag_db, ph])) or sep <= 0:
                raise PatternFormatError("non-finite value or non-positive separation", row=lineno)
            d.append(sep)
            s.append(10 ** (mag_db / 20) * np.exp(1j * np.radians(ph)))
    return np.array(d), np.array(s)
