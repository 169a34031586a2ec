"""File formats: result JSON, CSV exports and element-pattern import.

Files carry degrees; the API uses radians. Floats in JSON are written
with 17 significant digits; CSVs use ``.`` decimals and LF endings.
"""

import csv
import json
import math
import os
import tempfile

import numpy as np

from .errors import PatternFormatError
from .fields import TabulatedPattern

PATTERN_HEADER = ["theta_deg", "phi_deg", "mag_db", "phase_deg"]
_ANGLE_EPS = 1e-6


# -- JSON -------------------------------------------------------------------


def _fmt_float(x):
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return "%.17g" % x


def dumps(obj, indent=2, _level=0):
    """JSON text with every float at 17 significant digits."""
    pad = " " * (indent * (_level + 1))
    end = " " * (indent * _level)
    if isinstance(obj, bool) or obj is None:
        return json.dumps(obj)
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _fmt_float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {dumps(v, indent, _level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        if all(isinstance(v, (int, float, np.integer, np.floating)) and not isinstance(v, bool)
               for v in obj):
            return "[" + ", ".join(dumps(v) for v in obj) + "]"
        items = [pad + dumps(v, indent, _level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def atomic_write(path, text):
    """Write-temp-then-rename in the destination directory."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="\n", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj):
    atomic_write(path, dumps(obj) + "\n")


def read_json(path):
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


# -- CSV --------------------------------------------------------------------


def csv_text(header, rows):
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_cell(v) for v in row))
    return "\n".join(lines) + "\n"


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return _fmt_float(float(v))
    return str(v)


def write_csv(path, header, rows):
    atomic_write(path, csv_text(header, rows))


def taper_rows(grid, w, active_only=False):
    x, y = grid.positions()
    w = np.asarray(w)
    idx = np.flatnonzero(w) if active_only else np.arange(grid.size)
    return [(int(k), x[k], y[k], w[k].real, w[k].imag) for k in idx]


TAPER_HEADER = ["index", "x_wl", "y_wl", "re", "im"]
TRACE_HEADER = ["stage", "residual", "objective", "active_count", "max_burden"]
CUT_HEADER = ["angle_deg", "mag_db"]


def trace_rows(trace):
    return [(s.stage, s.residual, s.objective, s.active_count, s.max_burden) for s in trace]


def cut_rows(angles, values, peak=None):
    mag = np.abs(values)
    peak = mag.max() if peak is None else peak
    with np.errstate(divide="ignore"):
        db = 20 * np.log10(mag / peak)
    return list(zip(angles, db))


# -- element pattern import -------------------------------------------------


def _close(a, b):
    return abs(a - b) <= _ANGLE_EPS


def load_element_pattern(path):
    """Read a ``theta_deg,phi_deg,mag_db,phase_deg`` table.

    Rows run theta-major over a regular grid with theta in [0, 90] and phi
    covering [0, 360) at a fixed step. Any deviation raises
    :class:`PatternFormatError` naming the first offending row (1-based,
    header is row 1).
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise PatternFormatError(f"cannot read pattern file {path}: {exc.strerror}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != PATTERN_HEADER:
            raise PatternFormatError("expected header " + ",".join(PATTERN_HEADER), row=1)
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 4:
                raise PatternFormatError(f"expected 4 fields, got {len(row)}", row=lineno)
            try:
                vals = [float(c) for c in row]
            except ValueError:
                raise PatternFormatError("non-numeric field", row=lineno) from None
            if not all(math.isfinite(v) for v in vals):
                raise PatternFormatError("NaN or infinite value", row=lineno)
            rows.append((lineno, *vals))

    if len(rows) < 4:
        raise PatternFormatError("pattern needs at least a 2x2 grid", row=len(rows) + 2)
    first = rows[0]
    if not _close(first[1], 0.0) or not _close(first[2], 0.0):
        raise PatternFormatError("grid must start at theta=0, phi=0", row=first[0])
    phi_step = rows[1][2] - rows[0][2]
    if not _close(rows[1][1], 0.0) or phi_step <= 0:
        raise PatternFormatError("second row must advance phi at theta=0", row=rows[1][0])
    n_phi = 360.0 / phi_step
    if not _close(n_phi, round(n_phi)):
        raise PatternFormatError(f"phi step {phi_step:g} does not divide 360", row=rows[1][0])
    n_phi = int(round(n_phi))
    if len(rows) <= n_phi:
        raise PatternFormatError("pattern needs at least two theta rows", row=rows[-1][0] + 1)
    theta_step = rows[n_phi][1]
    if not theta_step > 0:
        lineno = rows[n_phi][0]
        raise PatternFormatError(
            f"expected theta>0, phi=0 after {n_phi} phi samples", row=lineno)
    n_theta = 90.0 / theta_step
    if not _close(n_theta, round(n_theta)):
        raise PatternFormatError(f"theta step {theta_step:g} does not divide 90",
                                 row=rows[n_phi][0])
    n_theta = int(round(n_theta)) + 1

    mag = np.empty((n_theta, n_phi))
    phase = np.empty((n_theta, n_phi))
    for r in range(n_theta * n_phi):
        i, j = divmod(r, n_phi)
        want_t, want_p = i * theta_step, j * phi_step
        if r >= len(rows):
            last = rows[-1][0] if rows else 1
            raise PatternFormatError(
                f"missing sample theta={want_t:g}, phi={want_p:g}", row=last + 1)
        lineno, t, p, mdb, ph = rows[r]
        if not (_close(t, want_t) and _close(p, want_p)):
            raise PatternFormatError(
                f"expected theta={want_t:g}, phi={want_p:g}, found theta={t:g}, phi={p:g}",
                row=lineno)
        mag[i, j] = 10 ** (mdb / 20)
        phase[i, j] = math.radians(ph)
    if len(rows) > n_theta * n_phi:
        raise PatternFormatError("rows beyond theta=90", row=rows[n_theta * n_phi][0])

    thetas = np.radians(np.arange(n_theta) * theta_step)
    phis = np.radians(np.arange(n_phi) * phi_step)
    return TabulatedPattern(thetas, phis, mag, phase)


def pattern_csv_text(thetas_deg, phis_deg, func):
    """CSV text for an analytic pattern ``func(theta_rad, phi_rad) -> complex``."""
    rows = []
    for t in thetas_deg:
        for p in phis_deg:
            g = complex(func(math.radians(t), math.radians(p)))
            with np.errstate(divide="ignore"):
                mdb = 20 * math.log10(abs(g)) if abs(g) > 0 else -300.0
            rows.append((float(t), float(p), mdb, math.degrees(math.atan2(g.imag, g.real))))
    return csv_text(PATTERN_HEADER, rows)


# -- result documents -------------------------------------------------------


def result_to_dict(result):
    grid = result.grid
    x, y = grid.positions()
    active = result.active
    return {
        "format": "csthin-result/1",
        "spec": result.spec.to_dict(),
        "candidate_grid": grid.to_dict(),
        "xi": result.xi,
        "residual": result.residual,
        "feasible": result.feasible,
        "merged": result.merged,
        "reference_count": result.reference_count,
        "active_count": int(active.size),
        "active": [
            {"index": int(k), "x_wl": x[k], "y_wl": y[k],
             "re": result.weights[k].real, "im": result.weights[k].imag}
            for k in active
        ],
        "metrics": result.metrics,
        "comparison": result.comparison.to_dict(),
        "trace": result.trace.to_dicts(),
    }


def save_result(path, result):
    write_json(path, result_to_dict(result))


def load_result(path):
    """Parse a result file; returns ``(doc, spec, grid, weights)``."""
    from .geometry import build_grid
    from .thinning import SynthesisSpec

    try:
        doc = read_json(path)
    except (OSError, ValueError) as exc:
        raise PatternFormatError(f"cannot read result file {path}: {exc}") from exc
    try:
        spec = SynthesisSpec.from_dict(doc["spec"])
        g = doc["candidate_grid"]
        grid = build_grid(int(g["nx"]), int(g["ny"]), float(g["pitch_x"]), float(g["pitch_y"]),
                          float(g["frequency_hz"]))
        w = np.zeros(grid.size, dtype=complex)
        for el in doc["active"]:
            w[int(el["index"])] = complex(float(el["re"]), float(el["im"]))
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise PatternFormatError(f"malformed result file {path}: {exc}") from exc
    return doc, spec, grid, w
