"""Command-line interface: ``csthin {synth,reference,evaluate,coupling}``.

Exit codes: 0 success, 1 I/O or validation failure, 2 infeasible bound.
"""

import argparse
import math
import os
import sys

import numpy as np

from . import io
from .coupling import CouplingModel, mutual_impedance, z_to_s12
from .errors import CsThinError, InfeasibleError
from .fields import (
    IsotropicPattern,
    build_steering,
    cut_metrics,
    evaluate_pattern,
    hemisphere_grid,
)
from .geometry import build_grid
from .taper import ReferenceSpec, ura_reference_taper
from .thinning import SynthesisSpec, infeasibility_message, synthesize

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE = 0, 1, 2

MODEL_ALIASES = {"dipole": "induced_emf_dipole", "expfit": "exp_fit"}


def _fail(msg, code=EXIT_ERROR):
    print(f"error: {msg}", file=sys.stderr)
    return code


def _add_pattern_flags(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--pattern", metavar="PATH", help="element pattern CSV")
    g.add_argument("--isotropic", action="store_true", help="ideal isotropic elements")


def build_parser():
    parser = argparse.ArgumentParser(prog="csthin", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="thin an array by reweighted l1 synthesis")
    s.add_argument("--config", metavar="PATH", help="JSON config (spec fields plus 'out')")
    s.add_argument("--out", metavar="DIR")
    xi = s.add_mutually_exclusive_group()
    xi.add_argument("--xi-rel", type=float, metavar="F")
    xi.add_argument("--xi-abs", type=float, metavar="F")
    s.add_argument("--dmin-wl", type=float, metavar="F")
    s.add_argument("--stages", type=int, metavar="N")
    s.add_argument("--seed", type=int, metavar="N")
    _add_pattern_flags(s)
    s.add_argument("--coupling-model", choices=["dipole", "expfit", "none"])

    r = sub.add_parser("reference", help="export the Dolph-Chebyshev reference")
    r.add_argument("--nx", type=int, default=25)
    r.add_argument("--ny", type=int, default=25)
    r.add_argument("--pitch-x", type=float, default=0.5)
    r.add_argument("--pitch-y", type=float, default=0.5)
    r.add_argument("--freq", type=float, default=28e9, help="Hz")
    r.add_argument("--sll", type=float, default=30.0, help="sidelobe level, positive dB")
    r.add_argument("--kind", choices=["chebyshev", "uniform"], default="chebyshev")
    r.add_argument("--out", metavar="DIR", default=".")
    _add_pattern_flags(r)

    e = sub.add_parser("evaluate", help="pattern cut of a saved result")
    e.add_argument("result", metavar="RESULT")
    e.add_argument("--cut-phi", type=float, default=90.0, metavar="DEG")
    e.add_argument("--out", metavar="PATH", help="CSV destination (default stdout)")

    c = sub.add_parser("coupling", help="print |Z|(d) for a coupling model")
    c.add_argument("--coupling-model", choices=["dipole", "expfit"], default="dipole")
    c.add_argument("--dmax", type=float, default=3.0, help="largest separation, wavelengths")
    c.add_argument("--step", type=float, default=0.25, help="separation step, wavelengths")
    return parser


# -- synth ------------------------------------------------------------------


def _load_config(path):
    if path is None:
        return {}, None
    if not os.path.isfile(path):
        raise CsThinError(f"config file not found: {path}")
    try:
        doc = io.read_json(path)
    except ValueError as exc:
        raise CsThinError(f"cannot parse config {path}: {exc}") from exc
    if not isinstance(doc, dict):
        raise CsThinError("config must be a JSON object")
    doc = dict(doc)
    out = doc.pop("out", None)
    base = os.path.dirname(os.path.abspath(path))
    for key in ("element_pattern", "calibration"):
        if doc.get(key):
            doc[key] = os.path.join(base, doc[key])
    if out is not None:
        out = os.path.join(base, out)
    return doc, out


def resolve_spec(args):
    doc, out = _load_config(args.config)
    spec = SynthesisSpec.from_dict(doc)
    kw = {}
    if args.xi_rel is not None:
        kw.update(xi_rel=args.xi_rel, xi_abs=None)
    if args.xi_abs is not None:
        kw.update(xi_abs=args.xi_abs, xi_rel=None)
    if args.dmin_wl is not None:
        kw["d_min_wl"] = args.dmin_wl
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.stages is not None:
        d = spec.solver.to_dict()
        d["outer_stages"] = args.stages
        kw["solver"] = type(spec.solver)(**d)
    if args.pattern:
        kw["element_pattern"] = os.path.abspath(args.pattern)
    if args.isotropic:
        kw["element_pattern"] = None
    if args.coupling_model == "none":
        kw["coupling"] = None
    elif args.coupling_model:
        base = spec.coupling or CouplingModel()
        d = base.to_dict()
        d["kind"] = MODEL_ALIASES[args.coupling_model]
        kw["coupling"] = CouplingModel.from_dict(d)
    if kw:
        spec = SynthesisSpec.from_dict({**spec.to_dict(), **_spec_overrides(kw)})
    out = args.out or out or "."
    return spec, out


def _spec_overrides(kw):
    return {k: (v.to_dict() if hasattr(v, "to_dict") else v) for k, v in kw.items()}


def _check_paths(spec, out):
    for key in ("element_pattern", "calibration"):
        path = getattr(spec, key)
        if path is not None and not os.path.isfile(path):
            raise CsThinError(f"{key.replace('_', ' ')} file not found: {path}")
    os.makedirs(out, exist_ok=True)


def cmd_synth(args):
    try:
        spec, out = resolve_spec(args)
        _check_paths(spec, out)
        result = synthesize(spec)
    except InfeasibleError as exc:
        return _fail(infeasibility_message(exc), EXIT_INFEASIBLE)
    except (CsThinError, OSError) as exc:
        return _fail(str(exc))

    io.save_result(os.path.join(out, "result.json"), result)
    io.write_csv(os.path.join(out, "trace.csv"), io.TRACE_HEADER, io.trace_rows(result.trace))
    rows = []
    ref_peak = np.abs(result.reference.values).max()
    syn_peak = np.abs(result.pattern.values).max()
    for phi_deg in (0.0, 90.0):
        a, ref = result.reference.cut(math.radians(phi_deg))
        _, syn = result.pattern.cut(math.radians(phi_deg))
        for (ang, rdb), (_, sdb) in zip(io.cut_rows(a, ref, ref_peak), io.cut_rows(a, syn, syn_peak)):
            rows.append((phi_deg, ang, rdb, sdb))
    io.write_csv(os.path.join(out, "cuts.csv"),
                 ["phi_deg", "angle_deg", "reference_db", "synthesized_db"], rows)
    cmp = result.comparison
    print(f"active {result.active_count}/{result.reference_count}  "
          f"residual/xi {result.residual / result.xi:.6f}  "
          f"dHPBW {cmp.delta_hpbw_deg:+.3f} deg  "
          f"near SLL {cmp.near_sll_db:.2f} dB  far SLL {cmp.far_sll_db:.2f} dB")
    return EXIT_OK


# -- reference --------------------------------------------------------------


def cmd_reference(args):
    try:
        grid = build_grid(args.nx, args.ny, args.pitch_x, args.pitch_y, args.freq)
        spec = ReferenceSpec(taper_kind=args.kind, sll_target_db=args.sll)
        pattern = io.load_element_pattern(args.pattern) if args.pattern else IsotropicPattern()
        os.makedirs(args.out, exist_ok=True)
        w = ura_reference_taper(grid, spec)
        dirs = hemisphere_grid()
        P = evaluate_pattern(build_steering(grid, dirs, pattern), w, dirs)
    except (CsThinError, OSError) as exc:
        return _fail(str(exc))
    io.write_csv(os.path.join(args.out, "taper.csv"), io.TAPER_HEADER, io.taper_rows(grid, w))
    peak = np.abs(P.values).max()
    rows = []
    for phi_deg in (0.0, 90.0):
        a, v = P.cut(math.radians(phi_deg))
        rows.extend((phi_deg, ang, db) for ang, db in io.cut_rows(a, v, peak))
    io.write_csv(os.path.join(args.out, "reference_cuts.csv"),
                 ["phi_deg", "angle_deg", "mag_db"], rows)
    return EXIT_OK


# -- evaluate ---------------------------------------------------------------


def cmd_evaluate(args):
    from .thinning import resolve_pattern

    try:
        _, spec, grid, w = io.load_result(args.result)
        pattern = resolve_pattern(spec)
        dirs = hemisphere_grid(spec.theta_step_deg, spec.phi_step_deg)
        P = evaluate_pattern(build_steering(grid, dirs, pattern), w, dirs)
        angles, vals = P.cut(math.radians(args.cut_phi))
        m = cut_metrics(angles, vals)
    except (CsThinError, OSError) as exc:
        return _fail(str(exc))
    text = io.csv_text(io.CUT_HEADER, io.cut_rows(angles, vals))
    if args.out:
        io.atomic_write(args.out, text)
    else:
        sys.stdout.write(text)
    print(f"cut phi={args.cut_phi:g} deg: peak {m.peak_db:.3f} dB at {m.peak_angle_deg:g} deg, "
          f"HPBW {m.hpbw_deg:.3f} deg, SLL {m.sll_db:.2f} dB", file=sys.stderr)
    return EXIT_OK


# -- coupling ---------------------------------------------------------------


def cmd_coupling(args):
    try:
        model = CouplingModel(kind=MODEL_ALIASES[args.coupling_model])
        if not (args.step > 0 and args.dmax > 0):
            raise CsThinError("--dmax and --step must be positive")
        d = np.arange(1, int(math.floor(args.dmax / args.step + 1e-9)) + 1) * args.step
        z = mutual_impedance(model, d)
    except CsThinError as exc:
        return _fail(str(exc))
    s12 = z_to_s12(model.z11, z, z, model.z11, model.z0)
    rows = [(di, zi.real, zi.imag, abs(zi), 20 * math.log10(abs(si)))
            for di, zi, si in zip(d, z, s12)]
    sys.stdout.write(io.csv_text(["d_wl", "re_ohm", "im_ohm", "mag_ohm", "s12_db"], rows))
    return EXIT_OK


COMMANDS = {
    "synth": cmd_synth,
    "reference": cmd_reference,
    "evaluate": cmd_evaluate,
    "coupling": cmd_coupling,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
