"""Weighted l1 synthesis under an l2 residual bound, and the reweighted
outer loop with coupling and spacing penalties.

The constrained problem ``min sum_k g_k |w_k|  s.t.  ||A w - p|| <= xi`` is
solved by primal-dual hybrid gradient iterations (complex soft-threshold in
the primal, projection onto the l2 ball in the dual). When ``A`` is tall it
is first reduced by a thin QR factorization: with ``A = U R``,

    ||A w - p||^2 = ||R w - U^H p||^2 + ||p_perp||^2,

so the iterations run on the square ``R`` with a shrunken radius. The
problem is unchanged, only cheaper.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .coupling import coupling_burden, default_threshold
from .errors import InfeasibleError, InvalidArgumentError
from .geometry import pairwise_distances

_POLISH_MARGIN = 1e-9


@dataclass(frozen=True)
class SolverConfig:
    outer_stages: int = 5
    inner_iter_cap: int = 5000
    rel_tolerance: float = 1e-6
    epsilon_reweight: float = 1e-3
    coupling_beta: float = 1.0
    prune_fraction: float = 1e-3
    gap_tolerance: float = 1e-4

    def __post_init__(self):
        if int(self.outer_stages) != self.outer_stages or self.outer_stages < 1:
            raise InvalidArgumentError("outer_stages must be a positive integer")
        if int(self.inner_iter_cap) != self.inner_iter_cap or self.inner_iter_cap < 1:
            raise InvalidArgumentError("inner_iter_cap must be a positive integer")
        for name in ("rel_tolerance", "epsilon_reweight", "coupling_beta", "prune_fraction",
                     "gap_tolerance"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive")

    def to_dict(self):
        return {
            "outer_stages": self.outer_stages,
            "inner_iter_cap": self.inner_iter_cap,
            "rel_tolerance": self.rel_tolerance,
            "epsilon_reweight": self.epsilon_reweight,
            "coupling_beta": self.coupling_beta,
            "prune_fraction": self.prune_fraction,
            "gap_tolerance": self.gap_tolerance,
        }


class ReducedSystem:
    """``A`` and ``p`` reduced to ``(R, p_r, perp)`` with
    ``||A w - p||^2 == ||R w - p_r||^2 + perp^2`` for every ``w``."""

    def __init__(self, A, p):
        A = np.asarray(A, dtype=complex)
        p = np.asarray(p, dtype=complex)
        q, k = A.shape
        if q > k:
            U, R = scipy.linalg.qr(A, mode="economic", check_finite=False)
            p_r = U.conj().T @ p
            perp = float(np.linalg.norm(p - U @ p_r))
        else:
            R, p_r, perp = A, p, 0.0
        self.R = R
        self.p_r = p_r
        self.perp = perp
        self.p_norm = float(np.linalg.norm(p))
        self.shape = A.shape

    def residual(self, w):
        r = np.linalg.norm(self.R @ w - self.p_r)
        return float(np.hypot(r, self.perp))

    def lstsq(self, columns=None):
        """Least-squares fit on a column subset; returns ``(w, residual)``."""
        k = self.R.shape[1]
        cols = np.arange(k) if columns is None else np.asarray(columns)
        w = np.zeros(k, dtype=complex)
        if cols.size:
            sol, *_ = np.linalg.lstsq(self.R[:, cols], self.p_r, rcond=None)
            w[cols] = sol
        return w, self.residual(w)


@dataclass
class CsProblem:
    """``min sum gamma_k |w_k|`` subject to ``||A w - p||_2 <= xi``.

    ``gamma`` may contain ``inf`` to forbid a candidate outright.
    """

    A: np.ndarray
    p: np.ndarray
    xi: float
    gamma: np.ndarray = None
    system: ReducedSystem = field(default=None, repr=False)

    def __post_init__(self):
        self.A = np.asarray(self.A)
        self.p = np.asarray(self.p)
        if self.A.ndim != 2 or self.p.ndim != 1 or self.A.shape[0] != self.p.shape[0]:
            raise InvalidArgumentError(
                f"steering {self.A.shape} and reference {self.p.shape} are inconsistent"
            )
        if not self.xi > 0:
            raise InvalidArgumentError("xi must be positive")
        k = self.A.shape[1]
        if self.gamma is None:
            self.gamma = np.ones(k)
        self.gamma = np.asarray(self.gamma, dtype=float)
        if self.gamma.shape != (k,) or np.any(~(self.gamma > 0)):
            raise InvalidArgumentError("gamma must be a positive vector of length K")
        if self.system is None:
            self.system = ReducedSystem(self.A, self.p)


@dataclass
class L1Solution:
    weights: np.ndarray
    residual: float
    objective: float
    iterations: int
    converged: bool
    polished: bool = False
    dual: np.ndarray = field(default=None, repr=False)


def soft_threshold(z, t):
    """Complex soft-thresholding ``z * max(0, 1 - t / |z|)``."""
    mag = np.abs(z)
    t = np.broadcast_to(t, mag.shape)
    keep = mag > t
    scale = np.zeros(mag.shape)
    scale[keep] = 1 - t[keep] / mag[keep]
    return z * scale


def project_ball(z, center, radius):
    d = z - center
    n = np.linalg.norm(d)
    if n <= radius:
        return z
    return center + d * (radius / n)


def power_norm(B, iterations=20):
    """Spectral norm estimate of ``B`` by power iteration on ``B^H B``."""
    x = np.ones(B.shape[1], dtype=complex)
    x /= np.linalg.norm(x)
    s = 0.0
    for _ in range(iterations):
        y = B.conj().T @ (B @ x)
        s = np.linalg.norm(y)
        if s == 0:
            return 0.0
        x = y / s
    return float(np.sqrt(s))


def _dual_value(B, c, radius, gamma, y):
    """Dual objective at ``y`` rescaled into ``|B^H y| <= gamma``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.abs(B.conj().T @ y) / gamma
    scale = max(1.0, float(np.nanmax(ratio, initial=0.0)))
    y = y / scale
    return -np.vdot(y, c).real - radius * np.linalg.norm(y)


def _pdhg(B, c, radius, gamma, w, y, cap, tol, gap_tol, check_every=25):
    """Primal-dual iterations for ``min sum gamma|w| s.t. ||B w - c|| <= radius``.

    Step sizes start balanced at ``1 / ||B||`` and are adapted by residual
    balancing with ``sigma * tau`` held fixed, so ``sigma * tau * ||B||^2``
    stays below one. Stops once the iterate is feasible to ``tol`` and the
    duality gap is below ``gap_tol`` relative.
    """
    L = 1.1 * power_norm(B)
    if L == 0:
        return np.zeros_like(w), y, 0, True
    tau = sigma = 1.0 / L
    alpha, eta = 0.5, 0.95
    BH = B.conj().T
    Bw = B @ w
    converged = False
    it = 0
    for it in range(1, cap + 1):
        w_new = soft_threshold(w - tau * (BH @ y), tau * gamma)
        Bw_new = B @ w_new
        v = y + sigma * (2 * Bw_new - Bw)
        y_new = v - sigma * project_ball(v / sigma, c, radius)

        dw, dy, dBw = w - w_new, y - y_new, Bw - Bw_new
        primal_res = np.linalg.norm(dw / tau - BH @ dy)
        dual_res = np.linalg.norm(dy / sigma - dBw)
        w, y, Bw = w_new, y_new, Bw_new

        if it % check_every == 0 and np.linalg.norm(Bw - c) <= radius * (1 + tol):
            primal = np.sum(gamma[w != 0] * np.abs(w[w != 0]))
            if primal - _dual_value(B, c, radius, gamma, y) <= gap_tol * max(primal, 1e-300):
                converged = True
                break
        if primal_res > 2 * dual_res:
            tau, sigma = tau / (1 - alpha), sigma * (1 - alpha)
            alpha *= eta
        elif dual_res > 2 * primal_res:
            tau, sigma = tau * (1 - alpha), sigma / (1 - alpha)
            alpha *= eta
    return w, y, it, converged


def _blend_to_feasible(system, w, target, columns):
    """Move ``w`` along the segment to a least-squares fit on ``columns``
    just far enough to satisfy the residual bound. Returns ``None`` when the
    fit itself is infeasible."""
    w_ls, r_ls = system.lstsq(columns)
    if r_ls > target:
        return None
    a = system.R @ w - system.p_r
    b = system.R @ (w_ls - w)
    # ||a + t b||^2 + perp^2 = target^2, smallest root in [0, 1]
    qa = np.vdot(b, b).real
    qb = 2 * np.vdot(a, b).real
    qc = np.vdot(a, a).real + system.perp ** 2 - target ** 2
    if qc <= 0:
        return w
    disc = max(qb * qb - 4 * qa * qc, 0.0)
    t = (-qb - np.sqrt(disc)) / (2 * qa) if qa > 0 else 1.0
    if not 0 <= t <= 1:
        t = (-qb + np.sqrt(disc)) / (2 * qa)
    t = min(max(t, 0.0), 1.0)
    out = w + t * (w_ls - w)
    if system.residual(out) > target:
        # rounding on the boundary; step a hair further toward the fit
        out = w + min(1.0, t * (1 + 1e-6) + 1e-12) * (w_ls - w)
    if system.residual(out) > target:
        out = w_ls
    return out


def restore_feasibility(system, w, xi, columns=None):
    """Return a taper within ``xi`` that keeps ``w``'s support when it can.

    Tries the segment toward the least-squares fit on ``w``'s support, then
    toward the fit on ``columns`` (default: every candidate). Returns
    ``(w, polished)``.
    """
    if system.residual(w) <= xi:
        return w, False
    target = xi * (1 - _POLISH_MARGIN)
    support = np.flatnonzero(w)
    out = _blend_to_feasible(system, w, target, support)
    if out is None:
        out = _blend_to_feasible(system, w, target, columns)
    if out is None:
        w_ls, r_ls = system.lstsq(columns)
        raise InfeasibleError(r_ls, xi)
    return out, True


def solve_weighted_l1(prob, cfg=None, x0=None, y0=None):
    """Weighted l1 minimization with an l2 residual bound.

    Returns an :class:`L1Solution`. The returned weights always satisfy the
    bound; ``converged`` is False if the iteration cap was reached first.

    Raises
    ------
    InfeasibleError
        If ``xi`` is below the least-squares residual over the usable
        candidates.
    """
    cfg = cfg or SolverConfig()
    system = prob.system
    k = prob.A.shape[1]
    gamma = prob.gamma
    usable = np.isfinite(gamma)

    cert = system.perp
    if not usable.all():
        _, cert = system.lstsq(np.flatnonzero(usable))
    elif system.shape[0] <= k:
        _, cert = system.lstsq()
    if cert > prob.xi:
        raise InfeasibleError(cert, prob.xi)

    xi = prob.xi
    if system.p_norm <= xi:
        w = np.zeros(k, dtype=complex)
        return L1Solution(w, system.residual(w), 0.0, 0, True)

    # unit-norm reference and unit-rms weights make the iterations scale free;
    # neither changes the minimizer
    s = system.p_norm
    c = system.p_r / s
    radius = np.sqrt(max((xi / s) ** 2 - (system.perp / s) ** 2, 0.0))
    g = gamma / np.sqrt(np.mean(gamma[usable] ** 2))
    w0 = np.zeros(k, dtype=complex) if x0 is None else np.where(usable, x0, 0) / s
    y = np.zeros(system.R.shape[0], dtype=complex) if y0 is None else np.asarray(y0, dtype=complex)
    w, y, iters, converged = _pdhg(system.R, c, radius, g, w0, y, cfg.inner_iter_cap,
                                   cfg.rel_tolerance, cfg.gap_tolerance)
    w = s * w
    w, polished = restore_feasibility(system, w, xi,
                                      None if usable.all() else np.flatnonzero(usable))
    objective = float(np.sum(np.abs(w[usable]) * gamma[usable]))
    return L1Solution(w, system.residual(w), objective, iters, converged, polished, y)


# -- reweighted outer loop --------------------------------------------------


@dataclass
class StageRecord:
    stage: int
    residual: float
    objective: float
    active_count: int
    max_burden: float
    iterations: int
    converged: bool
    rolled_back: bool = False

    def to_dict(self):
        return dict(self.__dict__)


@dataclass
class IterationTrace:
    stages: list = field(default_factory=list)

    def __iter__(self):
        return iter(self.stages)

    def __len__(self):
        return len(self.stages)

    @property
    def converged(self):
        return all(s.converged for s in self.stages)

    def to_dicts(self):
        return [s.to_dict() for s in self.stages]


SPACING_TOL = 1e-9


def _near_active(distances, active, d_min):
    """Mask of inactive candidates closer than ``d_min`` to an active one."""
    mask = np.zeros(distances.shape[0], dtype=bool)
    if active.size == 0:
        return mask
    close = distances[:, active] < d_min * (1 - SPACING_TOL)
    mask = close.any(axis=1)
    mask[active] = False
    return mask


def reweight_loop(grid, A, p, xi, model=None, d_min=None, cfg=None, threshold=None,
                  system=None):
    """Reweighted l1 synthesis with coupling and spacing penalties.

    Each stage solves the weighted problem, prunes entries below
    ``prune_fraction * max|w|`` and sets the next weights to
    ``1 / (|w| + eps)`` scaled by ``1 + beta * burden`` and, for inactive
    candidates within ``d_min`` of an active one, by ``1 + beta``.

    Returns ``(w, trace)``.
    """
    cfg = cfg or SolverConfig()
    if system is None:
        system = ReducedSystem(A, p)
    k = A.shape[1]
    if k != grid.size:
        raise InvalidArgumentError("steering matrix does not match the grid")
    if model is not None and threshold is None:
        threshold = default_threshold(model, min(grid.pitch_x, grid.pitch_y))
    distances = pairwise_distances(grid) if (model is not None or d_min) else None

    gamma = np.ones(k)
    trace = IterationTrace()
    w = None
    y = None
    bound = xi
    for stage in range(1, cfg.outer_stages + 1):
        # never let a later stage accept a larger residual than an earlier one
        sol = solve_weighted_l1(CsProblem(A, p, bound, gamma, system), cfg, x0=w, y0=y)
        y = sol.dual
        w_full = sol.weights
        wmax = np.max(np.abs(w_full))
        w = np.where(np.abs(w_full) >= cfg.prune_fraction * wmax, w_full, 0)
        rolled_back = False
        if system.residual(w) > bound:
            w_try = _blend_to_feasible(system, w, bound * (1 - _POLISH_MARGIN), np.flatnonzero(w))
            if w_try is None:
                w, rolled_back = w_full, True
            else:
                w = w_try

        bound = min(bound, system.residual(w))
        active = np.flatnonzero(w)
        burden = np.zeros(k)
        if model is not None and active.size:
            burden = coupling_burden(model, grid, active, threshold=threshold,
                                     distances=distances)
        trace.stages.append(StageRecord(
            stage=stage,
            residual=system.residual(w),
            objective=float(np.sum(gamma * np.abs(w))),
            active_count=int(active.size),
            max_burden=float(burden.max()) if burden.size else 0.0,
            iterations=sol.iterations,
            converged=sol.converged,
            rolled_back=rolled_back,
        ))

        mag = np.abs(w)
        eps = cfg.epsilon_reweight * mag.max() if mag.max() > 0 else cfg.epsilon_reweight
        gamma = 1.0 / (mag + eps)
        gamma *= 1.0 + cfg.coupling_beta * burden
        if d_min:
            gamma[_near_active(distances, active, d_min)] *= 1.0 + cfg.coupling_beta
    return w, trace


# -- hard spacing enforcement -----------------------------------------------


def merge_close_elements(x, y, w, d_min, snap=None, seed=0):
    """Greedy merge of elements closer than ``d_min``.

    Seeds are taken in descending ``|w|`` (ties broken by a seeded
    shuffle); every unassigned element within ``d_min`` of a seed joins its
    cluster. A cluster becomes one element at the ``|w|``-weighted centroid,
    passed through ``snap`` if given, carrying the complex sum of weights.
    Passes repeat until the layout complies. Returns ``(x, y, w, dropped)``
    where ``dropped`` counts elements removed because a pass made no
    progress.
    """
    x = np.asarray(x, dtype=float).copy()
    y = np.asarray(y, dtype=float).copy()
    w = np.asarray(w, dtype=complex).copy()
    rng = np.random.default_rng(seed)
    limit = d_min * (1 - SPACING_TOL)
    dropped = 0
    while True:
        d = np.hypot(x[:, None] - x[None, :], y[:, None] - y[None, :])
        np.fill_diagonal(d, np.inf)
        if w.size < 2 or d.min() >= limit:
            return x, y, w, dropped
        tiebreak = rng.permutation(w.size)
        order = np.lexsort((tiebreak, -np.abs(w)))
        assigned = np.zeros(w.size, dtype=bool)
        nx_, ny_, nw_ = [], [], []
        for s in order:
            if assigned[s]:
                continue
            members = np.flatnonzero(~assigned & (d[s] < limit))
            members = np.append(members, s)
            assigned[members] = True
            mag = np.abs(w[members])
            # offsets from the seed keep co-located clusters exactly in place
            if mag.sum() > 0:
                cx = x[s] + (mag @ (x[members] - x[s])) / mag.sum()
                cy = y[s] + (mag @ (y[members] - y[s])) / mag.sum()
            else:
                cx, cy = x[s] + (x[members] - x[s]).mean(), y[s] + (y[members] - y[s]).mean()
            if members.size > 1 and snap is not None:
                cx, cy = snap(cx, cy)
            elif members.size == 1:
                cx, cy = x[s], y[s]
            nx_.append(cx)
            ny_.append(cy)
            nw_.append(w[members].sum())
        if len(nw_) == w.size:
            # no merge happened: drop the weakest element in a violation
            bad = np.flatnonzero((d < limit).any(axis=1))
            drop = bad[np.argmin(np.abs(w[bad]))]
            keep = np.arange(w.size) != drop
            x, y, w = x[keep], y[keep], w[keep]
            dropped += 1
            continue
        x, y, w = np.array(nx_), np.array(ny_), np.array(nw_, dtype=complex)


def snap_to_grid(grid):
    """Callable mapping a point (wavelengths) to the nearest grid site."""

    def snap(px, py):
        m = int(np.clip(np.rint(px / grid.pitch_x + (grid.nx - 1) / 2), 0, grid.nx - 1))
        n = int(np.clip(np.rint(py / grid.pitch_y + (grid.ny - 1) / 2), 0, grid.ny - 1))
        site = grid.site(grid.index(m, n))
        return site.x_wl, site.y_wl

    return snap


def enforce_min_spacing(grid, w, d_min, seed=0):
    """Merge active grid elements closer than ``d_min``.

    A compliant layout is returned unchanged. Merged clusters land on the
    grid site nearest their weighted centroid; clusters landing on the same
    site are summed.
    """
    if not d_min > 0:
        raise InvalidArgumentError("d_min must be positive")
    w = np.asarray(w, dtype=complex)
    active = np.flatnonzero(w)
    if active.size < 2:
        return w.copy()
    d = pairwise_distances(grid, active)
    np.fill_diagonal(d, np.inf)
    if d.min() >= d_min * (1 - SPACING_TOL):
        return w.copy()
    gx, gy = grid.positions()
    mx, my, mw, _ = merge_close_elements(gx[active], gy[active], w[active], d_min,
                                         snap=snap_to_grid(grid), seed=seed)
    out = np.zeros_like(w)
    for px, py, pw in zip(mx, my, mw):
        m = int(np.rint(px / grid.pitch_x + (grid.nx - 1) / 2))
        n = int(np.rint(py / grid.pitch_y + (grid.ny - 1) / 2))
        out[grid.index(m, n)] += pw
    return out


def repair_spacing(grid, A, p, w, xi, d_min, cfg=None, seed=0, system=None, rounds=10):
    """Make ``w`` spacing-compliant without leaving the residual ball.

    Each round merges close elements; if the merged taper is outside the
    ball and cannot be blended back on its support, the weighted problem is
    re-solved with every candidate within ``d_min`` of the merged layout
    forbidden, and the next round merges the new solution.

    Raises
    ------
    InfeasibleError
        When no compliant taper within ``xi`` is found; the certificate is
        that of the last restricted problem.
    """
    cfg = cfg or SolverConfig()
    if system is None:
        system = ReducedSystem(A, p)
    distances = pairwise_distances(grid)
    target = xi * (1 - _POLISH_MARGIN)
    last = None
    for _ in range(rounds):
        w_sp = enforce_min_spacing(grid, w, d_min, seed=seed)
        if system.residual(w_sp) <= xi:
            return w_sp
        active = np.flatnonzero(w_sp)
        fit = _blend_to_feasible(system, w_sp, target, active)
        if fit is not None:
            return fit
        mag = np.abs(w_sp)
        gamma = 1.0 / (mag + cfg.epsilon_reweight * mag.max())
        gamma[_near_active(distances, active, d_min)] = np.inf
        sol = solve_weighted_l1(CsProblem(A, p, xi, gamma, system), cfg, x0=w_sp)
        w = sol.weights
        pruned = np.where(np.abs(w) >= cfg.prune_fraction * np.abs(w).max(), w, 0)
        if system.residual(pruned) <= xi:
            w = pruned
        last = system.residual(w_sp)
    raise InfeasibleError(last, xi)
