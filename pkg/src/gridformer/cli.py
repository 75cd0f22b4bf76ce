"""Command-line front end.

Subcommands: ``fi``, ``strength``, ``step``, ``place`` and ``cscr``.  Every
run writes its CSV/JSON outputs and a ``manifest.json`` into ``--out``.

Exit codes: 0 ok, 2 parse error, 3 numerical failure, 4 unstable,
5 search space too large, 6 no stability boundary in the bracket.
"""
from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import casefile
from .converters import (OMEGA0, DeviceSpec, LineParams, OperatingPoint, build_admittance,
                         device_operating_point)
from .device_metrics import classify_gfm, forming_index, sensitivity
from .errors import (GridformerError, NoBracket, NumericalError,
                     SearchSpaceTooLarge, UnstableModel)
from .lti import FrequencyGrid, eval_at, hinf_norm, step_response
from .network import PowerSystem, promote_bus
from .outputs import RunManifest, tool_version, write_csv, write_curves_csv, write_json
from .placement import PlacementProblem, candidate_bus_strength, place_exhaustive, place_greedy
from .strength import compute_cscr, gscr, reduced_b_matrix, strength_report

EXIT_OK, EXIT_PARSE, EXIT_NUMERIC, EXIT_UNSTABLE, EXIT_SEARCH, EXIT_BRACKET = 0, 2, 3, 4, 5, 6
SEED = 0


class UsageError(GridformerError):
    pass


def _kv(text):
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected name=value, got {text!r}")
    k, v = text.split("=", 1)
    try:
        return k.strip(), float(v)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{k}: not a number: {v!r}") from None


def _sweep_spec(text):
    """``name=start:stop:count`` into ``(name, values)``."""
    try:
        name, rng = text.split("=", 1)
        a, b, c = rng.split(":")
        count = int(c)
        if count < 1:
            raise ValueError
        return name.strip(), np.linspace(float(a), float(b), count)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected name=start:stop:count, got {text!r}") from None


def _floats(text):
    try:
        return tuple(float(x) for x in text.split(",") if x.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers: {text!r}") from None


def _add_device_flags(p, default_arch=None):
    p.add_argument("--arch", default=default_arch, help="architecture, e.g. vsg or pll-pq")
    p.add_argument("--param", action="append", type=_kv, default=[], metavar="NAME=VALUE",
                   help="override a device parameter (repeatable)")
    p.add_argument("--p0", type=float, default=0.5, help="active power dispatch (device pu)")
    p.add_argument("--q0", type=float, default=None,
                   help="reactive power (PQ types) or voltage magnitude (others)")
    p.add_argument("--tau", type=float, default=0.1, help="line R/X ratio")


def _add_grid_flags(p):
    p.add_argument("--f-min", type=float, default=None, help="lowest sweep frequency (Hz)")
    p.add_argument("--f-max", type=float, default=None, help="highest sweep frequency (Hz)")
    p.add_argument("--points", type=int, default=None, help="sweep points (log spaced)")
    p.add_argument("--band", type=float, nargs=2, default=None, metavar=("LO", "HI"),
                   help="evaluation band (Hz)")


def build_parser():
    ap = argparse.ArgumentParser(prog="gridformer",
                                 description="Forming index and system strength analysis.")
    ap.add_argument("--version", action="store_true", help="print the version and exit")
    sub = ap.add_subparsers(dest="command")

    p = sub.add_parser("fi", help="forming index of one device")
    p.add_argument("--case", help="case file; use with --device")
    p.add_argument("--device", help="bus id of the device in the case")
    _add_device_flags(p)
    p.add_argument("--lg", type=float, default=0.3, help="grid inductance L_g (pu, = 1/SCR)")
    p.add_argument("--sweep-param", type=_sweep_spec, default=None,
                   metavar="NAME=START:STOP:COUNT",
                   help="sweep lg, tau, p0 or a device parameter")
    _add_grid_flags(p)
    p.add_argument("--out", default="out", help="output directory")

    p = sub.add_parser("strength", help="system, grid and bus strength of a case")
    p.add_argument("--case", required=True)
    _add_grid_flags(p)
    p.add_argument("--very-weak", type=float, default=0.5, help="very weak threshold")
    p.add_argument("--weak", type=float, default=1.0, help="weak threshold")
    p.add_argument("--out", default="out")

    p = sub.add_parser("step", help="voltage response to a current step at one bus")
    p.add_argument("--case", required=True)
    p.add_argument("--bus", required=True, help="bus id receiving the step")
    p.add_argument("--amp", type=float, default=0.1, help="step size (device pu)")
    p.add_argument("--axis", choices=("d", "q"), default="d")
    p.add_argument("--t-end", type=float, default=2.0, help="simulated time (s)")
    p.add_argument("--dt", type=float, default=1e-4, help="requested time step (s)")
    p.add_argument("--out", default="out")

    p = sub.add_parser("place", help="GFM placement under a capacity budget")
    p.add_argument("--case", required=True)
    p.add_argument("--candidates", default=None,
                   help="comma-separated interior bus ids (default: all interior buses)")
    p.add_argument("--budget", type=float, required=True, help="total capacity (pu)")
    p.add_argument("--sizes", type=_floats, default=(0.5, 1.0), help="capacity levels (pu)")
    p.add_argument("--method", choices=("exhaustive", "greedy"), default="exhaustive")
    _add_device_flags(p, default_arch="vsg")
    _add_grid_flags(p)
    p.add_argument("--out", default="out")

    p = sub.add_parser("cscr", help="critical SCR of a single device")
    _add_device_flags(p, default_arch="pll-pq")
    p.add_argument("--case", help="case file supplying gSCR for the stability margin")
    p.add_argument("--lo", type=float, default=0.1, help="lower SCR bracket")
    p.add_argument("--hi", type=float, default=10.0, help="upper SCR bracket")
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--out", default="out")
    return ap


# -- helpers -----------------------------------------------------------------

def _inline_spec(args):
    if not args.arch:
        raise UsageError("give --arch (or --case with --device)")
    try:
        return DeviceSpec(args.arch, dict(args.param), 1.0, args.p0, args.q0)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _grid(args, case=None):
    sw = dict(case.sweep) if case else dict(casefile.DEFAULT_SWEEP)
    for key, val in (("f_min_hz", args.f_min), ("f_max_hz", args.f_max), ("points", args.points)):
        if val is not None:
            sw[key] = val
    if not 0 < sw["f_min_hz"] < sw["f_max_hz"] or sw["points"] < 2:
        raise UsageError("invalid sweep range")
    return FrequencyGrid.log(sw["f_min_hz"], sw["f_max_hz"], sw["points"])


def _band(args, case=None):
    if args.band is not None:
        return tuple(args.band)
    if case is not None:
        return case.band_hz
    return (casefile.DEFAULT_BAND["f_lo_hz"], casefile.DEFAULT_BAND["f_hi_hz"])


def _bus_thevenin_lg(case, bus_id):
    """Driving-point reactance of a device bus, in its own capacity base."""
    net = case.network()
    k = case.index_of(bus_id)
    if k >= net.n:
        raise UsageError(f"bus {bus_id} carries no device")
    Z = np.linalg.inv(reduced_b_matrix(net))
    return float(Z[k, k] * net.capacities[k]), net.mean_tau, k


def _say(*a):
    print(*a, flush=True)


# -- commands ----------------------------------------------------------------

def _fi_curve(spec, line, grid):
    op = device_operating_point(spec, line)
    S = sensitivity(build_admittance(spec, op, line.omega0), line)
    curve = forming_index(S, grid)
    try:
        margin, w_peak = hinf_norm(S, grid)
    except UnstableModel:
        margin, w_peak = math.inf, math.nan
    return curve, margin, w_peak


def cmd_fi(args, man):
    case = casefile.load(args.case) if args.case else None
    omega0 = case.omega0 if case else OMEGA0
    if case is not None:
        if args.device is None:
            raise UsageError("--case needs --device")
        lg, tau, k = _bus_thevenin_lg(case, args.device)
        spec = case.device_specs()[k]
    else:
        spec, lg, tau = _inline_spec(args), args.lg, args.tau
    grid = _grid(args, case)
    band = _band(args, case)
    runs = []
    if args.sweep_param is None:
        runs.append(("FI", spec, LineParams(lg, tau, omega0), None))
    else:
        name, values = args.sweep_param
        for v in values:
            v = float(v)
            label = f"FI[{name}={v:g}]"
            if name == "lg":
                runs.append((label, spec, LineParams(v, tau, omega0), v))
            elif name == "tau":
                runs.append((label, spec, LineParams(lg, v, omega0), v))
            elif name == "p0":
                runs.append((label, DeviceSpec(spec.arch, spec.params, spec.capacity, v,
                                               spec.q0_or_v0), LineParams(lg, tau, omega0), v))
            else:
                try:
                    s2 = spec.with_params(**{name: v})
                except ValueError as exc:
                    raise UsageError(str(exc)) from exc
                runs.append((label, s2, LineParams(lg, tau, omega0), v))
    cols, summary = {}, []
    for label, sp, line, v in runs:
        curve, margin, w_peak = _fi_curve(sp, line, grid)
        verdict = classify_gfm(curve, band)
        cols[label] = curve.values
        summary.append({"label": label, "value": v, "arch": sp.arch, "L_g": line.L_g,
                        "tau": line.tau, "hinf_margin": margin,
                        "peak_f_hz": w_peak / (2 * math.pi), "verdict": verdict.verdict,
                        "band_hz": list(band), "max_fi_in_band": verdict.max_fi,
                        "dc": curve.dc})
        _say(f"{label}: ||S_v||_inf = {margin:.6g} at {w_peak / (2 * math.pi):.4g} Hz, "
             f"max FI in [{band[0]:g}, {band[1]:g}] Hz = {verdict.max_fi:.6g} -> {verdict.verdict}")
    out = Path(args.out)
    man.add(write_curves_csv(out / "fi.csv", grid, cols))
    man.add(write_json(out / "fi.json", {"runs": summary}))
    return EXIT_OK


def cmd_strength(args, man):
    case = casefile.load(args.case)
    grid = _grid(args, case)
    system = case.system()
    rep = strength_report(system, grid, very_weak=args.very_weak, weak=args.weak,
                          band=_band(args, case))
    ids = case.order
    doc = rep.to_dict()
    doc["bus_ids"] = ids[:system.net.n]
    doc["ranking_ids"] = [ids[i] for i in doc["ranking"]]
    doc["band_hz"] = list(_band(args, case))
    out = Path(args.out)
    man.add(write_json(out / "strength.json", doc))
    cols = {"kappa": rep.kappa.values, "alpha": rep.alpha.values,
            "passivity": rep.passivity.values}
    for i, c in enumerate(rep.bus):
        cols[f"kappa_bus_{ids[i]}"] = c.values
    man.add(write_curves_csv(out / "strength_curves.csv", grid, cols))
    _say(f"classification: {rep.classification}")
    _say(f"min kappa = {rep.kappa_min:.6g} at {rep.worst_omega / (2 * math.pi):.4g} Hz")
    _say(f"gSCR = {rep.gscr:.6g}, ESCR = " + ", ".join(
        f"{ids[i]}:{v:.4g}" for i, v in enumerate(rep.escr)))
    _say("weakest buses first: " + ", ".join(str(b) for b in doc["ranking_ids"]))
    for k, v in rep.self_check.items():
        _say(f"self-check {k} = {v:.3g}")
    return EXIT_OK


def step_system(case, bus_id):
    """Power system and bus index for a step at ``bus_id``; interior buses are promoted."""
    system = case.system()
    k = case.index_of(bus_id)
    net = system.net
    if k == net.ground:
        raise UsageError("cannot inject at the ground bus")
    if k >= net.n:
        net2, _ = promote_bus(net, k, 1.0)
        none = DeviceSpec("NONE")
        V = system.voltages[k]
        op = OperatingPoint.from_phasors(V, 0j)
        system = PowerSystem(net2, system.specs + (none,), ops=system.ops + (op,),
                             models=system.models + (build_admittance(none),))
        k = net.n
    return system, k


def voltage_step(system, k, amp, axis="d", t_end=2.0, dt=1e-4):
    """Per-bus ``|dU|`` after a current step at device bus ``k``.

    Returns ``(t, norms, dt_used, steady)``; ``steady`` is ``Z_cl(0) dI``.
    The derivative part of ``Z_cl`` only adds an impulse at ``t = 0`` and is
    left out of the trajectories.
    """
    proper, _ = system.closed_loop_ss()
    if not proper.n_states == 0 and np.max(np.linalg.eigvals(proper.A).real) >= -1e-9:
        raise UnstableModel("closed loop is unstable")
    lam = np.max(np.abs(np.linalg.eigvals(proper.A))) if proper.n_states else 0.0
    dt_used = min(dt, 0.09 / lam) if lam > 0 else dt
    dI = np.zeros(proper.n_inputs)
    dI[2 * k + (axis == "q")] = amp
    t, y = step_response(proper, dI, t_end, dt_used)
    norms = np.hypot(y[:, 0::2], y[:, 1::2])
    steady = eval_at(proper, 0.0).real @ dI
    return t, norms, dt_used, steady


def cmd_step(args, man):
    case = casefile.load(args.case)
    system, k = step_system(case, args.bus)
    t, norms, dt_used, _ = voltage_step(system, k, args.amp, args.axis, args.t_end, args.dt)
    ids = list(case.order[:case.network().n])
    if k >= len(ids):
        ids.append(args.bus)
    out = Path(args.out)
    man.config["dt_used"] = dt_used
    header = ["t_s"] + [f"dU_bus_{b}" for b in ids]
    man.add(write_csv(out / "step.csv", header, (np.r_[tt, row] for tt, row in zip(t, norms))))
    peaks = norms.max(axis=0)
    man.add(write_json(out / "step.json", {
        "bus": args.bus, "amp": args.amp, "axis": args.axis, "dt_used": dt_used,
        "peak": {str(b): float(p) for b, p in zip(ids, peaks)},
        "final": {str(b): float(v) for b, v in zip(ids, norms[-1])}}))
    if dt_used < args.dt:
        _say(f"time step reduced to {dt_used:.3g} s to resolve the fastest mode")
    for b, p, f in zip(ids, peaks, norms[-1]):
        _say(f"bus {b}: peak |dU| = {p:.6g}, final {f:.6g}")
    return EXIT_OK


def cmd_place(args, man):
    case = casefile.load(args.case)
    system = case.system()
    net = system.net
    if args.candidates:
        cands = [case.index_of(c.strip()) for c in args.candidates.split(",") if c.strip()]
    else:
        cands = list(range(net.n, net.n_buses))
    if not cands:
        raise UsageError("the case has no interior buses to place at")
    if not args.arch:
        raise UsageError("give --arch for the placed device template")
    try:
        template = DeviceSpec(args.arch, dict(args.param))
        problem = PlacementProblem(system, tuple(cands), template, args.sizes, args.budget)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    grid = _grid(args, case)
    search = place_exhaustive if args.method == "exhaustive" else place_greedy
    res = search(problem, grid)
    ks = candidate_bus_strength(system, problem.candidates, grid)
    ids = case.order
    doc = res.to_dict()
    doc["assignment"] = {str(ids[b]): c for b, c in sorted(res.assignment.items())}
    doc["candidate_bus_strength"] = {str(ids[b]): v for b, v in ks.items()}
    man.add(write_json(Path(args.out) / "placement.json", doc))
    _say(f"{'bus':>8} {'kappa_i':>10} {'placed':>8}")
    for b in sorted(ks, key=lambda b: (ks[b], b)):
        _say(f"{str(ids[b]):>8} {ks[b]:10.5g} {res.assignment.get(b, 0.0):8.3g}")
    _say(f"{res.method}: min kappa {res.baseline:.6g} -> {res.achieved:.6g} "
         f"with {res.total:g} pu in {res.evaluations} evaluations")
    return EXIT_OK


def cmd_cscr(args, man):
    spec = _inline_spec(args)
    omega0 = OMEGA0
    g = None
    if args.case:
        case = casefile.load(args.case)
        omega0 = case.omega0
        g = gscr(case.network())
    try:
        res = compute_cscr(spec, args.tau, omega0, args.lo, args.hi, args.tol, strict=True)
    except NoBracket:
        res = compute_cscr(spec, args.tau, omega0, args.lo, args.hi, args.tol)
        why = ("stable across the whole bracket" if res.stable_everywhere
               else "unstable at the top of the bracket" if res.unstable_everywhere
               else "stability does not change across the bracket")
        write_json(Path(args.out) / "cscr.json", {"found": False, "stable_everywhere":
                                                  res.stable_everywhere,
                                                  "unstable_everywhere": res.unstable_everywhere})
        man.add(Path(args.out) / "cscr.json")
        raise NoBracket(f"no stability boundary in SCR [{args.lo:g}, {args.hi:g}]: {why}")
    doc = {"found": True, "cscr": res.value, "iterations": res.iterations}
    _say(f"CSCR = {res.value:.6g}")
    if g is not None:
        doc["gscr"] = g
        doc["margin"] = res.margin(g)
        _say(f"gSCR = {g:.6g}, margin (gSCR - CSCR) / CSCR = {doc['margin']:.6g}")
    man.add(write_json(Path(args.out) / "cscr.json", doc))
    return EXIT_OK


COMMANDS = {"fi": cmd_fi, "strength": cmd_strength, "step": cmd_step,
            "place": cmd_place, "cscr": cmd_cscr}


def _exit_code(exc):
    if isinstance(exc, SearchSpaceTooLarge):
        return EXIT_SEARCH
    if isinstance(exc, NoBracket):
        return EXIT_BRACKET
    if isinstance(exc, UnstableModel):
        return EXIT_UNSTABLE
    if isinstance(exc, NumericalError):
        return EXIT_NUMERIC
    return EXIT_PARSE


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return EXIT_PARSE if exc.code else EXIT_OK
    if args.version:
        _say(tool_version())
        return EXIT_OK
    if args.command is None:
        ap.print_help(sys.stderr)
        return EXIT_PARSE
    config = {k: v for k, v in vars(args).items() if k not in ("command", "version")}
    man = RunManifest(args.command, getattr(args, "case", None), config, seed=SEED)
    try:
        code = COMMANDS[args.command](args, man)
    except SearchSpaceTooLarge as exc:
        print(f"error: {exc} (try --method greedy)", file=sys.stderr)
        code = EXIT_SEARCH
    except GridformerError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = _exit_code(exc)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_PARSE
    except np.linalg.LinAlgError as exc:
        print(f"error: {exc}", file=sys.stderr)
        code = EXIT_NUMERIC
    man.config["exit_code"] = code
    man.write(args.out)
    return code


if __name__ == "__main__":
    raise SystemExit(main())
