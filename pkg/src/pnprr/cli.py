"""``pnprr`` command line: synthetic data, registration, PnP-RR, evaluation
and parameter sweeps.

Every subcommand accepts ``--config FILE`` with ``key = value`` lines (``#``
starts a comment). Keys are flag names without the leading dashes; flags given
on the command line win over the file.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure,
3 plugin failure.
"""
import argparse
import logging
import os
import shlex
import shutil
import sys

import numpy as np

from . import __version__, harness, metrics
from . import io as fio
from .denoise import BUILTIN, get_denoiser
from .errors import (DimensionError, DivergenceError, FieldFormatError, ParameterError,
                     PluginError, PnprrError, StallError)
from .pnp import PnpParams, PnpStepError, pnp_rr
from .registration import RegistrationParams, register

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_PLUGIN = 0, 1, 2, 3

log = logging.getLogger("pnprr")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


class _Formatter(argparse.ArgumentDefaultsHelpFormatter):
    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


def float_list(text):
    """Comma-separated floats; an empty string is an empty list."""
    try:
        return [float(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def name_list(text):
    return [x.strip() for x in str(text).split(",") if x.strip()]


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


# ---------------------------------------------------------------------------
# config files
# ---------------------------------------------------------------------------

def read_config(path, parser):
    """Parse a key=value file into ``{dest: raw string}`` for ``parser``."""
    known = {}
    for action in parser._actions:
        for opt in action.option_strings:
            if opt.startswith("--") and opt not in ("--help", "--config"):
                known[opt[2:]] = action
                known[opt[2:].replace("-", "_")] = action
    values = {}
    try:
        fh = open(path)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    with fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value, got {raw.strip()!r}")
            key, value = (s.strip() for s in line.split("=", 1))
            if key not in known:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            action = known[key]
            if isinstance(action, argparse._StoreTrueAction):
                try:
                    values[action.dest] = _bool(value)
                except argparse.ArgumentTypeError as exc:
                    raise UsageError(f"{path}:{lineno}: {exc}") from None
            else:
                try:
                    values[action.dest] = action.type(value) if action.type else value
                except (argparse.ArgumentTypeError, ValueError) as exc:
                    raise UsageError(f"{path}:{lineno}: bad value for {key!r}: {exc}") from None
                if action.choices is not None and values[action.dest] not in action.choices:
                    raise UsageError(f"{path}:{lineno}: {key!r} must be one of "
                                     f"{sorted(action.choices)}")
    return values


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _reg_flags(p):
    d = RegistrationParams()
    g = p.add_argument_group("registration")
    g.add_argument("--alpha", type=float, default=d.alpha, help="metric weight alpha")
    g.add_argument("--c", type=float, default=d.c, help="metric smoothness exponent")
    g.add_argument("--sigma", type=float, default=d.sigma, help="image noise level")
    g.add_argument("--n-steps", type=int, default=d.n_steps, help="time steps of the geodesic")
    g.add_argument("--band", type=int, default=d.band, help="velocity band (frequencies kept)")
    g.add_argument("--max-iters", type=int, default=d.max_iters, help="optimizer iterations")
    g.add_argument("--step-size", type=float, default=d.step_size,
                   help="first trial step, in voxels of velocity change")
    g.add_argument("--grad-tol", type=float, default=d.grad_tol, help="gradient max-norm stop")
    g.add_argument("--energy-tol", type=float, default=d.energy_tol,
                   help="relative energy-decrease stop")
    g.add_argument("--scheme", choices=("rk4", "euler"), default=d.scheme,
                   help="integrator")
    g.add_argument("--preconditioner", choices=("sobolev", "none"), default=d.preconditioner,
                   help="descent direction: K-smoothed or plain gradient")


def _pnp_flags(p):
    d = PnpParams()
    p.add_argument("--denoiser", default=d.denoiser,
                   help="tv, nlm, gauss, identity or plugin:<command>")
    p.add_argument("--lambda1", type=float, default=d.lambda1, help="prior weight")
    p.add_argument("--lambda2", type=float, default=d.lambda2, help="noisy-target weight")
    p.add_argument("--max-outer", type=int, default=d.max_outer_iters, help="outer iterations")
    p.add_argument("--fixed-point-tol", type=float, default=d.fixed_point_tol,
                   help="relative reconstruction change that ends the loop")


def build_parser():
    parser = _Parser(prog="pnprr", description="Diffeomorphic registration of noisy images "
                     "with plug-and-play denoising priors.", formatter_class=_Formatter)
    parser.add_argument("--version", action="version", version=f"pnprr {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    def cmd(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text, formatter_class=_Formatter)
        p.add_argument("--config", default=None, help="key=value file with flag defaults")
        return p

    p = cmd("synth", "generate seeded synthetic source/target cases")
    p.add_argument("--seeds", default="0-9", help="seed list, e.g. 0-9 or 1,4,7")
    p.add_argument("--resolution", type=int, default=100, help="grid size per axis")
    p.add_argument("--noise-sigma", type=float, default=0.3, help="target noise level")
    p.add_argument("--max-displacement", type=float, default=0.08,
                   help="largest displacement as a fraction of the grid")
    p.add_argument("--out-dir", default=None, help="output directory (required)")

    p = cmd("register", "register source to target without denoising")
    p.add_argument("--source", default=None, help="source field file (required)")
    p.add_argument("--target", default=None, help="target field file (required)")
    p.add_argument("--out-prefix", default=None, help="output path prefix (required)")
    _reg_flags(p)

    p = cmd("pnp", "joint registration and reconstruction")
    p.add_argument("--source", default=None, help="source field file (required)")
    p.add_argument("--target", default=None, help="noisy target field file (required)")
    p.add_argument("--out-prefix", default=None, help="output path prefix (required)")
    _pnp_flags(p)
    _reg_flags(p)

    p = cmd("eval", "Dice and Jacobian statistics of a transformation")
    p.add_argument("--phi", default=None, help="phi^-1 displacement field (required)")
    p.add_argument("--source-mask", default=None, help="source mask field (required)")
    p.add_argument("--target-mask", default=None, help="target mask field (required)")
    p.add_argument("--threshold", type=float, default=0.5, help="mask threshold after warping")
    p.add_argument("--out-csv", default=None, help="output CSV (default: stdout)")

    p = cmd("sweep", "method x denoiser x lambda grid over a case directory")
    p.add_argument("--cases-dir", default=None, help="directory written by synth (required)")
    p.add_argument("--methods", type=name_list, default="baseline,two-step,pnp",
                   help="comma-separated subset of baseline,two-step,pnp")
    p.add_argument("--denoisers", type=name_list, default="tv", help="comma-separated denoisers")
    p.add_argument("--lambda1-grid", type=float_list, default=None,
                   help="comma-separated lambda1 values (default: each denoiser's reference "
                   "value times 10^-0.5, 1 and 10^0.5)")
    p.add_argument("--lambda2-grid", type=float_list, default=None,
                   help="comma-separated lambda2 values (default as for lambda1)")
    p.add_argument("--max-outer", type=int, default=50, help="PnP outer iterations")
    p.add_argument("--fixed-point-tol", type=float, default=1e-3, help="PnP fixed-point tolerance")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--out-csv", default=None, help="result CSV (required)")
    _reg_flags(p)

    p = cmd("denoise", "denoise a field read from stdin (plugin adapter)")
    p.add_argument("tau", type=float, help="denoiser strength")
    p.add_argument("--method", choices=sorted(BUILTIN), default="tv", help="denoiser")
    p.add_argument("--input", default="-", help="input field file, - for stdin")
    p.add_argument("--output", default="-", help="output field file, - for stdout")

    p = cmd("render", "export a 2-D field as PGM, or PPM with mask contours")
    p.add_argument("--image", default=None, help="field file (required)")
    p.add_argument("--contour", action="append", default=[], metavar="MASK:COLOR",
                   help="mask field and color name; repeatable")
    p.add_argument("--slice", type=int, default=None, help="slice index for 3-D fields")
    p.add_argument("--out", default=None, help="output .pgm/.ppm path (required)")
    return parser


def parse_args(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        subparser = parser._subparsers._group_actions[0].choices[args.command]
        try:
            values = read_config(args.config, subparser)
        except UsageError as exc:
            parser.exit(EXIT_USAGE, f"pnprr: error: {exc}\n")
        subparser.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


def _require(args, *names):
    missing = [n for n in names if getattr(args, n) in (None, "")]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise UsageError(f"{args.command}: missing required {flags}")


def reg_params(args):
    return RegistrationParams(sigma=args.sigma, alpha=args.alpha, c=args.c, n_steps=args.n_steps,
                              band=args.band, max_iters=args.max_iters, step_size=args.step_size,
                              grad_tol=args.grad_tol, energy_tol=args.energy_tol,
                              scheme=args.scheme, preconditioner=args.preconditioner)


def _check_plugin(which):
    if not which.startswith("plugin:"):
        return
    argv = shlex.split(which[len("plugin:"):])
    if not argv:
        raise PluginError("empty plugin command")
    exe = argv[0]
    if os.sep in exe:
        if not (os.path.isfile(exe) and os.access(exe, os.X_OK)):
            raise PluginError(f"plugin executable not found: {exe}")
    elif shutil.which(exe) is None:
        raise PluginError(f"plugin executable not found on PATH: {exe}")


def _trace_header(fh, items):
    for key, value in items:
        fh.write(f"# {key}={value}\n")


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_synth(args):
    _require(args, "out_dir")
    seeds = harness.parse_seeds(args.seeds)
    path = harness.write_cases(args.out_dir, seeds, args.resolution, args.noise_sigma,
                               args.max_displacement)
    print(f"wrote {len(seeds)} cases, manifest {path}")


def cmd_register(args):
    _require(args, "source", "target", "out_prefix")
    S, T = fio.load_field(args.source), fio.load_field(args.target)
    params = reg_params(args)
    res = register(S, T, params)
    pre = args.out_prefix
    fio.save_field(pre + "_v0.field", res.v0, "vector")
    fio.save_field(pre + "_phi_inv.field", res.phi_inv, "vector")
    fio.save_field(pre + "_warped.field", res.warped, "scalar")
    with open(pre + "_trace.csv", "w") as fh:
        _trace_header(fh, [("alpha", params.alpha), ("c", params.c), ("sigma", params.sigma),
                           ("n_steps", params.n_steps), ("band", params.band),
                           ("scheme", params.scheme), ("stop_reason", res.stop_reason)])
        fh.write("iteration,energy\n")
        for i, e in enumerate(res.energy_trace):
            fh.write(f"{i},{fio.format_value(e)}\n")
    print(f"final energy: {fio.format_value(res.energy_trace[-1])} "
          f"({res.iterations} iterations, {res.stop_reason})")


def cmd_pnp(args):
    _require(args, "source", "target", "out_prefix")
    _check_plugin(args.denoiser)
    S, T = fio.load_field(args.source), fio.load_field(args.target)
    params = PnpParams(args.lambda1, args.lambda2, args.max_outer, args.fixed_point_tol,
                       reg_params(args), args.denoiser)
    tr = pnp_rr(S, T, get_denoiser(args.denoiser), params)
    pre = args.out_prefix
    fio.save_field(pre + "_recon.field", tr.reconstruction, "scalar")
    fio.save_field(pre + "_v0.field", tr.v0, "vector")
    fio.save_field(pre + "_phi_inv.field", tr.phi_inv, "vector")
    fio.save_field(pre + "_warped.field", tr.warped, "scalar")
    with open(pre + "_trace.csv", "w") as fh:
        _trace_header(fh, [("denoiser", args.denoiser), ("lambda1", params.lambda1),
                           ("lambda2", params.lambda2), ("tau", tr.tau),
                           ("sigma", params.sigma), ("converged", tr.converged)])
        fh.write("k,energy,residual,ssd,inner_iters\n")
        for r in tr.records:
            fh.write(",".join(fio.format_value(x) for x in
                              (r.k, r.energy, r.residual, r.ssd, r.inner_iters)) + "\n")
    last = tr.records[-1]
    print(f"{tr.iterations} outer iterations, residual {last.residual:.3g}, "
          f"converged={tr.converged}")


def cmd_eval(args):
    _require(args, "phi", "source_mask", "target_mask")
    phi = fio.load_field(args.phi)
    src = metrics.as_mask(fio.load_field(args.source_mask) > 0.5)
    tgt = metrics.as_mask(fio.load_field(args.target_mask) > 0.5)
    warped = metrics.propagate_mask(src, phi, args.threshold)
    row = {"dice": metrics.dice(warped, tgt)}
    stats = metrics.jacobian_det_stats(phi)
    row.update(min_jac_det=stats["min"], max_jac_det=stats["max"],
               fraction_nonpositive=stats["fraction_nonpositive"])
    columns = ["dice", "min_jac_det", "max_jac_det", "fraction_nonpositive"]
    if args.out_csv:
        fio.write_csv([row], args.out_csv, columns)
    else:
        print(",".join(columns))
        print(",".join(fio.format_value(row[c]) for c in columns))


def cmd_sweep(args):
    _require(args, "cases_dir", "out_csv")
    bad = [m for m in args.methods if m not in harness.METHODS]
    if bad:
        raise UsageError(f"unknown methods {bad}; choose from {list(harness.METHODS)}")
    for den in args.denoisers:
        if den.startswith("plugin:"):
            _check_plugin(den)
        elif den not in BUILTIN:
            raise UsageError(f"unknown denoiser {den!r}")
    cases = harness.load_cases(args.cases_dir)
    records = harness.sweep(cases, args.methods, args.denoisers, args.lambda1_grid,
                            args.lambda2_grid, reg_params(args), args.max_outer,
                            args.fixed_point_tol, args.jobs)
    summary = harness.write_sweep(records, args.out_csv)
    failed = sum(r["status"] != "ok" for r in records)
    print(f"{len(records)} runs, {failed} failed; rows in {args.out_csv}")
    print("method,denoiser,runs,dice_mean,dice_std")
    for s in summary:
        print(",".join(fio.format_value(s[k])
                       for k in ("method", "denoiser", "runs", "dice_mean", "dice_std")))
    print(f"summary in {harness.summary_path(args.out_csv)}")


def cmd_denoise(args):
    raw = sys.stdin.buffer.read() if args.input == "-" else open(args.input, "rb").read()
    Z = fio.decode_field(raw)
    out = get_denoiser(args.method)(Z, args.tau)
    data = fio.encode_field(out, "scalar")
    if args.output == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
    else:
        with open(args.output, "wb") as fh:
            fh.write(data)


def cmd_render(args):
    _require(args, "image", "out")
    image = fio.load_field(args.image)
    contours = []
    for item in args.contour:
        path, _, color = item.rpartition(":")
        if not path:
            path, color = color, "magenta"
        if color not in fio.COLORS:
            raise UsageError(f"unknown color {color!r}; choose from {sorted(fio.COLORS)}")
        contours.append((fio.load_field(path) > 0.5, color))
    if contours or args.out.endswith(".ppm"):
        fio.render_overlay(image, contours, args.out, args.slice)
    else:
        fio.export_pgm(image, args.out, args.slice)


COMMANDS = {"synth": cmd_synth, "register": cmd_register, "pnp": cmd_pnp, "eval": cmd_eval,
            "sweep": cmd_sweep, "denoise": cmd_denoise, "render": cmd_render}


def _exit_code(exc):
    if isinstance(exc, PnpStepError):
        return _exit_code(exc.cause)
    if isinstance(exc, PluginError):
        return EXIT_PLUGIN
    if isinstance(exc, (DivergenceError, StallError, FloatingPointError)):
        return EXIT_NUMERIC
    if isinstance(exc, (UsageError, ParameterError, DimensionError, FieldFormatError, OSError)):
        return EXIT_USAGE
    if isinstance(exc, PnprrError):
        return EXIT_NUMERIC
    return None


def main(argv=None):
    args = parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with np.errstate(over="ignore", invalid="ignore"):
            COMMANDS[args.command](args)
    except Exception as exc:  # noqa: BLE001
        code = _exit_code(exc)
        if code is None:
            raise
        print(f"pnprr {args.command}: error: {exc}", file=sys.stderr)
        stderr = getattr(exc, "stderr", None) or getattr(getattr(exc, "cause", None), "stderr", None)
        if stderr:
            print(stderr.rstrip(), file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
