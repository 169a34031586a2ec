"""End-to-end thinning pipeline: reference, reweighted synthesis, spacing
enforcement, metrics."""

import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .coupling import CouplingModel, fit_exp_model, load_calibration
from .errors import InfeasibleError, InvalidArgumentError
from .fields import (
    FarFieldPattern,
    IsotropicPattern,
    build_steering,
    cut_metrics,
    directivity,
    evaluate_pattern,
    hemisphere_grid,
    sidelobe_level,
)
from .geometry import build_grid, pairwise_distances
from .solver import (
    SPACING_TOL,
    ReducedSystem,
    SolverConfig,
    _blend_to_feasible,
    repair_spacing,
    reweight_loop,
)
from .taper import ReferenceSpec, ura_reference_taper

PRINCIPAL_CUTS_DEG = (0.0, 90.0)
NEAR_REGION_DEG = 15.0
FAR_REGION_DEG = 50.0


@dataclass(frozen=True)
class SynthesisSpec:
    """Everything needed to reproduce one synthesis run.

    Exactly one of ``xi_rel`` (fraction of ``||p||``) and ``xi_abs`` is set.
    ``coupling`` is ``None`` to disable the coupling penalty;
    ``element_pattern`` is a CSV path or ``None`` for isotropic elements.
    """

    nx: int = 25
    ny: int = 25
    pitch_x: float = 0.5
    pitch_y: float = 0.5
    frequency_hz: float = 28e9
    reference: ReferenceSpec = field(default_factory=ReferenceSpec)
    element_pattern: str = None
    coupling: CouplingModel = field(default_factory=CouplingModel)
    coupling_threshold: float = None
    calibration: str = None
    xi_rel: float = 0.05
    xi_abs: float = None
    d_min_wl: float = 0.5
    solver: SolverConfig = field(default_factory=SolverConfig)
    theta_step_deg: float = 1.0
    phi_step_deg: float = 2.0
    oversample: int = 1
    seed: int = 0

    def __post_init__(self):
        if (self.xi_rel is None) == (self.xi_abs is None):
            raise InvalidArgumentError("set exactly one of xi_rel and xi_abs")
        xi = self.xi_rel if self.xi_rel is not None else self.xi_abs
        if not (isinstance(xi, (int, float)) and xi > 0 and math.isfinite(xi)):
            raise InvalidArgumentError(f"xi must be a positive number, got {xi!r}")
        if not self.d_min_wl > 0:
            raise InvalidArgumentError("d_min_wl must be positive")
        if self.oversample not in (1, 2):
            raise InvalidArgumentError("oversample must be 1 or 2")
        if self.coupling_threshold is not None and not self.coupling_threshold > 0:
            raise InvalidArgumentError("coupling_threshold must be positive")
        if not (self.phi_step_deg > 0 and math.isclose(90.0 / self.phi_step_deg,
                                                       round(90.0 / self.phi_step_deg))):
            raise InvalidArgumentError("phi_step_deg must divide 90 so principal cuts exist")
        if int(self.seed) != self.seed:
            raise InvalidArgumentError("seed must be an integer")
        # grid arguments are validated by constructing the grid
        build_grid(self.nx, self.ny, self.pitch_x, self.pitch_y, self.frequency_hz)

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.to_dict() if hasattr(v, "to_dict") else v
        return out

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise InvalidArgumentError(f"unknown spec keys: {', '.join(unknown)}")
        if "reference" in d and isinstance(d["reference"], dict):
            d["reference"] = _reference_from_dict(d["reference"])
        if "coupling" in d and isinstance(d["coupling"], dict):
            d["coupling"] = _strict(CouplingModel, d["coupling"], "coupling")
        if "solver" in d and isinstance(d["solver"], dict):
            d["solver"] = _strict(SolverConfig, d["solver"], "solver")
        if "xi_abs" in d and d["xi_abs"] is not None and "xi_rel" not in d:
            d["xi_rel"] = None
        for key in ("nx", "ny", "oversample", "seed"):
            if key in d and isinstance(d[key], float) and d[key].is_integer():
                d[key] = int(d[key])
        return cls(**d)

    def with_overrides(self, **kw):
        return replace(self, **{k: v for k, v in kw.items()})


def _strict(cls, d, where):
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise InvalidArgumentError(f"unknown {where} keys: {', '.join(unknown)}")
    if cls is CouplingModel:
        return CouplingModel.from_dict(d)
    d = dict(d)
    for key in ("outer_stages", "inner_iter_cap"):
        if key in d and isinstance(d[key], float) and d[key].is_integer():
            d[key] = int(d[key])
    return cls(**d)


def _reference_from_dict(d):
    allowed = {"taper_kind", "sll_target_db", "scan_theta_deg", "scan_phi_deg"}
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise InvalidArgumentError(f"unknown reference keys: {', '.join(unknown)}")
    return ReferenceSpec(
        taper_kind=d.get("taper_kind", "chebyshev"),
        sll_target_db=d.get("sll_target_db", 30.0),
        scan_theta=math.radians(d.get("scan_theta_deg", 0.0)),
        scan_phi=math.radians(d.get("scan_phi_deg", 0.0)),
    )


@dataclass
class ComparisonReport:
    delta_hpbw_deg: float
    near_sll_db: float
    near_sll_ref_db: float
    far_sll_db: float
    far_sll_ref_db: float
    residual: float
    reduction_ratio: float

    @property
    def delta_near_sll_db(self):
        return _delta(self.near_sll_db, self.near_sll_ref_db)

    @property
    def delta_far_sll_db(self):
        return _delta(self.far_sll_db, self.far_sll_ref_db)

    def to_dict(self):
        d = dict(self.__dict__)
        d["delta_near_sll_db"] = self.delta_near_sll_db
        d["delta_far_sll_db"] = self.delta_far_sll_db
        return d


def _delta(a, b):
    if a == b:
        return 0.0
    return a - b


@dataclass
class SynthesisResult:
    spec: SynthesisSpec
    grid: object
    weights: np.ndarray = field(repr=False)
    xi: float
    residual: float
    feasible: bool
    reference_count: int
    metrics: dict = field(repr=False)
    comparison: ComparisonReport
    trace: object = field(repr=False)
    merged: bool = False
    pattern: FarFieldPattern = field(default=None, repr=False)
    reference: FarFieldPattern = field(default=None, repr=False)

    @property
    def active(self):
        return np.flatnonzero(self.weights)

    @property
    def active_count(self):
        return int(self.active.size)

    def min_spacing(self):
        act = self.active
        if act.size < 2:
            return math.inf
        d = pairwise_distances(self.grid, act)
        np.fill_diagonal(d, np.inf)
        return float(d.min())


def pattern_metrics_summary(P):
    """Principal-cut metrics plus directivity for one pattern."""
    out = {}
    for phi_deg in PRINCIPAL_CUTS_DEG:
        angles, vals = P.cut(math.radians(phi_deg))
        out[f"phi{int(phi_deg)}"] = cut_metrics(angles, vals).to_dict()
    out["directivity_dbi"] = directivity(P)
    return out


def _region_sll(P, lo=None, hi=None):
    worst = -math.inf
    for phi_deg in PRINCIPAL_CUTS_DEG:
        angles, vals = P.cut(math.radians(phi_deg))
        worst = max(worst, sidelobe_level(angles, vals, lo, hi))
    return worst


def compare_patterns(P, reference, active_count=None, reference_count=None):
    """Beamwidth and sidelobe deltas of ``P`` against ``reference``."""
    if P.dirs.size != reference.dirs.size or not (
        np.array_equal(P.dirs.thetas, reference.dirs.thetas)
        and np.array_equal(P.dirs.phis, reference.dirs.phis)
    ):
        raise InvalidArgumentError("patterns are sampled on different direction grids")
    dh = []
    for phi_deg in PRINCIPAL_CUTS_DEG:
        phi = math.radians(phi_deg)
        dh.append(cut_metrics(*P.cut(phi)).hpbw_deg - cut_metrics(*reference.cut(phi)).hpbw_deg)
    ratio = active_count / reference_count if active_count is not None and reference_count else 1.0
    return ComparisonReport(
        delta_hpbw_deg=float(max(dh, key=abs)),
        near_sll_db=_region_sll(P, None, NEAR_REGION_DEG),
        near_sll_ref_db=_region_sll(reference, None, NEAR_REGION_DEG),
        far_sll_db=_region_sll(P, FAR_REGION_DEG, None),
        far_sll_ref_db=_region_sll(reference, FAR_REGION_DEG, None),
        residual=float(np.linalg.norm(P.values - reference.values)),
        reduction_ratio=float(ratio),
    )


def compare(result, reference):
    """Compare a :class:`SynthesisResult` (or a bare pattern) to a
    reference pattern."""
    if isinstance(result, FarFieldPattern):
        return compare_patterns(result, reference)
    return compare_patterns(result.pattern, reference, result.active_count,
                            result.reference_count)


def candidate_grid(spec):
    ref_grid = build_grid(spec.nx, spec.ny, spec.pitch_x, spec.pitch_y, spec.frequency_hz)
    if spec.oversample == 1:
        return ref_grid, ref_grid
    cand = build_grid(2 * spec.nx - 1, 2 * spec.ny - 1, spec.pitch_x / 2, spec.pitch_y / 2,
                      spec.frequency_hz)
    return ref_grid, cand


def resolve_pattern(spec):
    if spec.element_pattern is None:
        return IsotropicPattern()
    from .io import load_element_pattern

    return load_element_pattern(spec.element_pattern)


def resolve_coupling(spec):
    if spec.coupling is None:
        return None
    if spec.calibration is not None:
        base = spec.coupling
        d, s12 = load_calibration(spec.calibration)
        return fit_exp_model(d, s12, z11=base.z11, z0=base.z0, eps_r=base.eps_r)
    return spec.coupling


def _final_prune(system, w, xi, fraction, passes=10):
    """Drop weights below ``fraction * max|w|`` while staying feasible.

    Removing sites cannot break spacing. If the pruned taper leaves the
    residual ball it is blended back on its support; when that fails the
    previous taper is kept.
    """
    for _ in range(passes):
        mag = np.abs(w)
        if not mag.any():
            return w
        small = (mag > 0) & (mag < fraction * mag.max())
        if not small.any():
            return w
        cand = np.where(small, 0, w)
        if system.residual(cand) > xi:
            cand = _blend_to_feasible(system, cand, xi * (1 - 1e-9), np.flatnonzero(cand))
            if cand is None:
                return w
        w = cand
    return w


def _native_sites(spec, ref_grid):
    """Candidate indices of the native lattice when oversampling, provided
    its pitch already meets ``d_min``; otherwise ``None``."""
    if spec.oversample == 1:
        return None
    if min(ref_grid.pitch_x, ref_grid.pitch_y) < spec.d_min_wl * (1 - SPACING_TOL):
        return None
    nx = 2 * spec.nx - 1
    m, n = np.meshgrid(np.arange(spec.nx), np.arange(spec.ny))
    return (2 * n * nx + 2 * m).ravel()


def synthesize(spec, pattern=None):
    """Run the full thinning pipeline for ``spec``.

    Raises
    ------
    InfeasibleError
        When the residual bound is below the least-squares residual.
    """
    pattern = pattern if pattern is not None else resolve_pattern(spec)
    model = resolve_coupling(spec)
    ref_grid, grid = candidate_grid(spec)
    dirs = hemisphere_grid(spec.theta_step_deg, spec.phi_step_deg)

    A_ref = build_steering(ref_grid, dirs, pattern)
    p = evaluate_pattern(A_ref, ura_reference_taper(ref_grid, spec.reference), dirs)
    A = A_ref if grid is ref_grid else build_steering(grid, dirs, pattern)
    del A_ref

    p_norm = float(np.linalg.norm(p.values))
    xi = spec.xi_rel * p_norm if spec.xi_rel is not None else float(spec.xi_abs)
    system = ReducedSystem(A, p.values)

    w, trace = reweight_loop(grid, A, p.values, xi, model, spec.d_min_wl, spec.solver,
                             threshold=spec.coupling_threshold, system=system)

    try:
        w_sp = repair_spacing(grid, A, p.values, w, xi, spec.d_min_wl, spec.solver,
                              seed=spec.seed, system=system)
    except InfeasibleError:
        native = _native_sites(spec, ref_grid)
        if native is None:
            raise
        # the native lattice is compliant by itself; thin it instead
        sub_w, trace = reweight_loop(ref_grid, A[:, native], p.values, xi, model,
                                     spec.d_min_wl, spec.solver,
                                     threshold=spec.coupling_threshold)
        w_sp = np.zeros(grid.size, dtype=complex)
        w_sp[native] = sub_w
    merged = not np.array_equal(w_sp, w)
    w = _final_prune(system, w_sp, xi, spec.solver.prune_fraction)
    residual = system.residual(w)

    P = evaluate_pattern(A, w, dirs)
    metrics = {
        "reference": pattern_metrics_summary(p),
        "synthesized": pattern_metrics_summary(P),
    }
    active_count = int(np.count_nonzero(w))
    report = compare_patterns(P, p, active_count, ref_grid.size)
    return SynthesisResult(
        spec=spec,
        grid=grid,
        weights=w,
        xi=xi,
        residual=residual,
        feasible=bool(residual <= xi),
        reference_count=ref_grid.size,
        metrics=metrics,
        comparison=report,
        trace=trace,
        merged=merged,
        pattern=P,
        reference=p,
    )


def infeasibility_message(err):
    return (f"infeasible: xi = {err.xi:.17g} is below the minimum achievable "
            f"residual {err.residual:.17g}")


__all__ = [
    "ComparisonReport",
    "InfeasibleError",
    "SynthesisResult",
    "SynthesisSpec",
    "compare",
    "compare_patterns",
    "synthesize",
]
