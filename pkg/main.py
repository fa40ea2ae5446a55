#!/usr/bin/env python3
"""freespec command line: invert, convolve, perturb, compress, sample, pestimate, compare.

Every CSV artifact starts with ``# freespec v<version> seed=<s> cmd=<flags>`` where the
flag string leaves out worker count, log level and output paths.
"""
import argparse
import json
import logging
import math
import sys
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from config import settings
from db.models import RunStatus
from services.compression import CLOSED_FORMS, compress_km_density, compression_evaluator, pde_residual
from services.convolution import free_convolve_density
from services.ensembles import (
    DiagonalDistribution,
    HamiltonianSpec,
    Metric,
    ModelKind,
    curve_distance,
    empirical_density,
    run_ensemble,
)
from services.errors import FreeSpecError, StencilFailure
from services.measures import AnalyticMeasure
from services.moments import SAMPLERS, p_parameter
from services.monitoring import monitoring_service
from services.perturbation import (
    PRESETS,
    PerturbationKind,
    PerturbationSpec,
    edge_band_mask,
    perturbed_density,
    preset_evaluator,
)
from services.storage import (
    header_line,
    read_curve_csv,
    write_curve_csv,
    write_spectra,
    write_table,
)
from services.transforms import DensityCurve, MeasureCauchy, stieltjes_invert, uniform_grid

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NONCONVERGED = 2
EXIT_COMPARE_FAILED = 3

# never part of the canonical flag string
UNCANONICAL_FLAGS = {"threads", "log_level", "out", "hist", "command"}


class FreeSpecArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1"""

    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def parse_grid(text: str) -> np.ndarray:
    try:
        lo, hi, n = text.split(":")
        return uniform_grid(float(lo), float(hi), int(n))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"grid must be lo:hi:n with n >= 2 and hi > lo, got '{text}'") from e


def parse_window(text: str) -> Tuple[float, float]:
    try:
        lo, hi = (float(v) for v in text.split(":"))
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"window must be lo:hi, got '{text}'") from e
    if not hi > lo:
        raise argparse.ArgumentTypeError(f"window needs hi > lo, got '{text}'")
    return lo, hi


def positive_float(text: str) -> float:
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"expected a positive number, got '{text}'")
    return value


def seed_value(text: str) -> int:
    value = int(text)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError(f"seed must be a 64-bit unsigned integer, got '{text}'")
    return value


@dataclass
class RunConfig:
    command: str
    options: Dict[str, Any] = field(default_factory=dict)
    raw: Dict[str, str] = field(default_factory=dict)
    seed: int = 0
    threads: int = 1
    log_level: str = "INFO"

    @classmethod
    def from_namespace(cls, args: argparse.Namespace, argv) -> "RunConfig":
        values = vars(args).copy()
        return cls(
            command=values.pop("command"),
            options={k: v for k, v in values.items() if k not in ("seed", "threads", "log_level")},
            raw=_raw_flags(argv),
            seed=values.get("seed", 0),
            threads=max(1, values.get("threads", 1)),
            log_level=values.get("log_level", settings.log_level),
        )

    @property
    def canonical_flags(self) -> str:
        parts = [self.command]
        for key in sorted(self.raw):
            if key.replace("-", "_") in UNCANONICAL_FLAGS or key == "seed":
                continue
            value = self.raw[key]
            parts.append(f"--{key}" if value is None else f"--{key}={value}")
        return " ".join(parts)

    @property
    def header(self) -> str:
        return header_line(self.seed, self.canonical_flags)


def _raw_flags(argv) -> Dict[str, Optional[str]]:
    """Flags as typed, so the canonical string reproduces the invocation"""
    flags: Dict[str, Optional[str]] = {}
    argv = list(argv or [])
    i = 0
    while i < len(argv):
        token = argv[i]
        if token.startswith("--"):
            name, _, inline = token[2:].partition("=")
            if inline:
                flags[name] = inline
            elif i + 1 < len(argv) and not argv[i + 1].startswith("--"):
                flags[name] = argv[i + 1]
                i += 1
            else:
                flags[name] = None
        i += 1
    return flags


def join_negative_values(argv):
    """'--grid -2:2:41' -> '--grid=-2:2:41'; argparse would read '-2:2:41' as an option"""
    out = []
    i = 0
    while i < len(argv):
        token = argv[i]
        following = argv[i + 1] if i + 1 < len(argv) else ""
        if (token.startswith("--") and "=" not in token and len(following) > 1
                and following[0] == "-" and (following[1].isdigit() or following[1] == ".")):
            out.append(f"{token}={following}")
            i += 2
            continue
        out.append(token)
        i += 1
    return out


@dataclass
class CommandResult:
    exit_code: int = EXIT_OK
    details: Dict[str, Any] = field(default_factory=dict)


def _curve_status(curve: DensityCurve) -> int:
    failed = len(curve.errors) / curve.grid.size
    if failed > settings.nonconvergence_budget:
        logger.error(f"{len(curve.errors)} of {curve.grid.size} points failed to converge "
                     f"({failed:.1%} > {settings.nonconvergence_budget:.0%})")
        return EXIT_NONCONVERGED
    return EXIT_OK


def _curve_details(curve: DensityCurve) -> Dict[str, Any]:
    return {
        "points": int(curve.grid.size),
        "invalid": int(np.count_nonzero(~curve.valid)),
        "failed": len(curve.errors),
        "mass": curve.mass,
    }


# Commands

def cmd_invert(config: RunConfig) -> CommandResult:
    o = config.options
    measure = AnalyticMeasure.from_file(o["measure"])
    eps = o["eps"] or settings.eps_closed_form
    curve = stieltjes_invert(MeasureCauchy(measure), o["grid"], eps, extrapolate=o["extrapolate"],
                             threads=config.threads)
    write_curve_csv(o["out"], curve, config.header)
    return CommandResult(_curve_status(curve), _curve_details(curve))


def cmd_convolve(config: RunConfig) -> CommandResult:
    o = config.options
    ma = AnalyticMeasure.from_file(o["a"])
    mb = AnalyticMeasure.from_file(o["b"])
    curve = free_convolve_density(ma, mb, o["grid"], eps=o["eps"], threads=config.threads)
    write_curve_csv(o["out"], curve, config.header)
    return CommandResult(_curve_status(curve), _curve_details(curve))


def cmd_perturb(config: RunConfig) -> CommandResult:
    o = config.options
    grid = o["grid"]
    eps = o["eps"] or settings.eps_closed_form
    delta = settings.edge_delta if o["delta"] is None else o["delta"]
    extra = {}

    if o["preset"]:
        model = preset_evaluator(o["preset"], J=o["J"], sigma=o["sigma"], gamma=o["gamma"],
                                 n=o["N"], order=o["order"])
        curve = stieltjes_invert(model.evaluator, grid, eps, threads=config.threads)
        curve.valid &= ~edge_band_mask(curve.grid, model.edges, delta * model.scale)
        if o["overlay_alpha"] is not None:
            if o["preset"] != "anderson-high-j":
                raise ValueError("--overlay-alpha applies to the anderson-high-j preset only")
            extra["compressed"] = compress_km_density(2.0, o["overlay_alpha"], grid / model.scale) / model.scale
    else:
        if o["base"] is None or o["kind"] is None or o["alpha"] is None:
            raise ValueError("perturb needs --preset or all of --base, --kind and --alpha")
        spec = PerturbationSpec(AnalyticMeasure.from_file(o["base"]), PerturbationKind(o["kind"]),
                                o["alpha"], 1 if o["order"] is None else o["order"])
        curve = perturbed_density(spec, grid, eps, delta)

    write_curve_csv(o["out"], curve, config.header, extra)
    return CommandResult(_curve_status(curve), _curve_details(curve))


def _pde_points(alpha: float):
    us = [math.log(alpha) + shift for shift in (-0.05, 0.0, 0.05)]
    zs = [complex(0.3, 0.5), complex(-1.0, 0.8), complex(1.5, 1.2)]
    return [(u, z) for u in us for z in zs]


def cmd_compress(config: RunConfig) -> CommandResult:
    o = config.options
    measure = AnalyticMeasure.from_file(o["measure"])
    alpha = o["alpha"]

    if o["check_pde"]:
        def g2(u, z):
            evaluator, _ = compression_evaluator(measure, math.exp(u), o["closed_form"])
            return evaluator(z)

        rows = []
        for u, z in _pde_points(alpha):
            try:
                residual = pde_residual(g2, u, z)
            except StencilFailure as e:
                logger.warning(f"PDE check skipped at u={u}, z={z}: {e}")
                residual = float("nan")
            rows.append((u, z.real, z.imag, residual))
        columns = {name: [row[i] for row in rows] for i, name in enumerate(("u", "re_z", "im_z", "residual"))}
        write_table(o["out"], columns, config.header)
        finite = [r[3] for r in rows if math.isfinite(r[3])]
        return CommandResult(details={"max_residual": max(finite) if finite else None})

    if o["grid"] is None:
        raise ValueError("compress needs --grid unless --check-pde is given")
    evaluator, used = compression_evaluator(measure, alpha, o["closed_form"])
    default_eps = settings.eps_solved if used == "none" else settings.eps_closed_form
    eps = o["eps"] or default_eps
    curve = stieltjes_invert(evaluator, o["grid"], eps, extrapolate=used == "none", threads=config.threads)
    write_curve_csv(o["out"], curve, config.header)
    details = _curve_details(curve)
    details["closed_form"] = used
    return CommandResult(_curve_status(curve), details)


def cmd_sample(config: RunConfig) -> CommandResult:
    o = config.options
    spec = HamiltonianSpec(
        model=ModelKind(o["model"]),
        N=o["N"],
        seed=config.seed,
        J=o["J"],
        diag_dist=DiagonalDistribution(o["diag_dist"]),
        sigma=o["sigma"],
        gamma=o["gamma"],
        sigma_diag=o["sigma_diag"],
    )
    realizations = o["realizations"] or settings.figure_realizations
    run = run_ensemble(spec, realizations, threads=config.threads, block_alpha=o["block_alpha"])
    if o["out"]:
        write_spectra(o["out"], run.spectra)
    details = {"realizations": realizations, "N": spec.N}
    if o["hist"] or not o["out"]:
        curve = empirical_density(run.spectra, o["grid"], bins=o["bins"], method=o["estimator"])
        write_curve_csv(o["hist"], curve, config.header)
        details["mass"] = curve.mass
    return CommandResult(details=details)


def cmd_pestimate(config: RunConfig) -> CommandResult:
    o = config.options
    estimate = p_parameter(o["a_model"], o["b_model"], o["N"], o["realizations"], seed=config.seed,
                           threads=config.threads)
    payload = json.dumps(estimate.to_dict())
    if o["out"]:
        with open(o["out"], "w", encoding="utf-8") as handle:
            handle.write(payload + "\n")
    else:
        print(payload)
    return CommandResult(details=estimate.to_dict())


def cmd_compare(config: RunConfig) -> CommandResult:
    o = config.options
    a = read_curve_csv(o["a"])
    b = read_curve_csv(o["b"])
    distance = curve_distance(a, b, o["metric"], o["window"])
    print(f"{distance:.17g}")
    details = {"distance": distance, "metric": o["metric"]}
    if o["tol"] is not None and not distance <= o["tol"]:
        logger.warning(f"Distance {distance:.6g} exceeds tolerance {o['tol']}")
        return CommandResult(EXIT_COMPARE_FAILED, details)
    return CommandResult(details=details)


COMMANDS: Dict[str, Callable[[RunConfig], CommandResult]] = {
    "invert": cmd_invert,
    "convolve": cmd_convolve,
    "perturb": cmd_perturb,
    "compress": cmd_compress,
    "sample": cmd_sample,
    "pestimate": cmd_pestimate,
    "compare": cmd_compare,
}

STATUS_BY_EXIT = {
    EXIT_OK: RunStatus.SUCCESS,
    EXIT_USAGE: RunStatus.ERROR,
    EXIT_NONCONVERGED: RunStatus.NONCONVERGED,
    EXIT_COMPARE_FAILED: RunStatus.COMPARE_FAILED,
}


def run(config: RunConfig) -> int:
    """Execute one command, record it in the ledger and return the exit status"""
    started = time.time()
    logger.info(f"Running {config.canonical_flags} (seed={config.seed}, threads={config.threads})")
    try:
        result = COMMANDS[config.command](config)
    except (FreeSpecError, ValidationError, ValueError, OSError) as e:
        logger.error(f"{config.command} failed: {e}")
        result = CommandResult(EXIT_USAGE, {"error": str(e)})

    duration = time.time() - started
    monitoring_service.record_run(
        command=config.command,
        canonical_flags=config.canonical_flags,
        seed=config.seed,
        status=STATUS_BY_EXIT[result.exit_code].value,
        exit_code=result.exit_code,
        duration=duration,
        details=result.details,
    )
    logger.info(f"{config.command} finished in {duration:.2f}s with exit code {result.exit_code}")
    return result.exit_code


def _common_options(parser: argparse.ArgumentParser, defaults: bool) -> None:
    suppress = argparse.SUPPRESS
    parser.add_argument("--threads", type=int, default=settings.threads if defaults else suppress,
                        help="Worker count (outputs do not depend on it)")
    parser.add_argument("--seed", type=seed_value, default=0 if defaults else suppress,
                        help="Master seed")
    parser.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"],
                        default=settings.log_level if defaults else suppress, help="Log level")


def build_parser() -> argparse.ArgumentParser:
    parser = FreeSpecArgumentParser(prog="freespec", description="Free-probability density-of-states toolkit")
    _common_options(parser, defaults=True)
    common = FreeSpecArgumentParser(add_help=False)
    _common_options(common, defaults=False)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=FreeSpecArgumentParser)

    p = sub.add_parser("invert", parents=[common], help="Density of a catalog measure by Stieltjes inversion")
    p.add_argument("--measure", required=True, help="Measure JSON file")
    p.add_argument("--grid", type=parse_grid, required=True, help="lo:hi:n")
    p.add_argument("--eps", type=positive_float, default=None, help="Imaginary offset")
    p.add_argument("--extrapolate", action="store_true", help="Richardson-extrapolate with 2 eps")
    p.add_argument("--out", default=None, help="Output CSV (stdout when omitted)")

    p = sub.add_parser("convolve", parents=[common], help="Free additive convolution of two measures")
    p.add_argument("--a", required=True, help="First measure JSON file")
    p.add_argument("--b", required=True, help="Second measure JSON file")
    p.add_argument("--grid", type=parse_grid, required=True, help="lo:hi:n")
    p.add_argument("--eps", type=positive_float, default=None, help="Imaginary offset")
    p.add_argument("--out", default=None, help="Output CSV (stdout when omitted)")

    p = sub.add_parser("perturb", parents=[common], help="Perturbative density of A + alpha B")
    p.add_argument("--preset", choices=PRESETS, default=None, help="Figure preset")
    p.add_argument("--base", default=None, help="Base measure JSON file")
    p.add_argument("--kind", choices=[k.value for k in PerturbationKind], default=None, help="Perturbation law")
    p.add_argument("--alpha", type=float, default=None, help="Perturbation strength")
    p.add_argument("--order", type=int, default=None, help="Truncation order")
    p.add_argument("--J", type=float, default=None, help="Hopping (presets)")
    p.add_argument("--sigma", type=positive_float, default=None, help="Disorder scale (presets)")
    p.add_argument("--gamma", type=float, default=None, help="RP exponent")
    p.add_argument("--N", type=int, default=None, help="Matrix size (rp preset)")
    p.add_argument("--overlay-alpha", type=positive_float, default=None,
                   help="Add a compressed-arcsine column (anderson-high-j)")
    p.add_argument("--delta", type=float, default=None, help="Edge band flagged invalid")
    p.add_argument("--grid", type=parse_grid, required=True, help="lo:hi:n")
    p.add_argument("--eps", type=positive_float, default=None, help="Imaginary offset")
    p.add_argument("--out", default=None, help="Output CSV (stdout when omitted)")

    p = sub.add_parser("compress", parents=[common], help="Free compression by alpha")
    p.add_argument("--measure", required=True, help="Measure JSON file")
    p.add_argument("--alpha", type=positive_float, required=True, help="Compression ratio")
    p.add_argument("--closed-form", choices=CLOSED_FORMS, default="auto", help="Closed form to use")
    p.add_argument("--grid", type=parse_grid, default=None, help="lo:hi:n")
    p.add_argument("--eps", type=positive_float, default=None, help="Imaginary offset")
    p.add_argument("--check-pde", action="store_true", help="Emit PDE residuals instead of a curve")
    p.add_argument("--out", default=None, help="Output CSV (stdout when omitted)")

    p = sub.add_parser("sample", parents=[common], help="Sample an ensemble and histogram its spectra")
    p.add_argument("--model", choices=[m.value for m in ModelKind], required=True, help="Hamiltonian model")
    p.add_argument("--N", type=int, default=2000, help="Matrix size")
    p.add_argument("--J", type=float, default=1.0, help="Hopping")
    p.add_argument("--gamma", type=float, default=1.5, help="RP exponent")
    p.add_argument("--sigma", type=positive_float, default=1.0, help="Anderson disorder scale")
    p.add_argument("--sigma-diag", type=positive_float, default=None, help="RP diagonal std (default 2/sqrt(N))")
    p.add_argument("--diag-dist", choices=[d.value for d in DiagonalDistribution], default="gaussian",
                   help="Anderson on-site law")
    p.add_argument("--realizations", type=int, default=None, help="Number of realizations")
    p.add_argument("--block-alpha", type=positive_float, default=None, help="Permuted principal block ratio")
    p.add_argument("--grid", type=parse_grid, default=None, help="Histogram grid lo:hi:n")
    p.add_argument("--bins", type=int, default=200, help="Bins when no grid is given")
    p.add_argument("--estimator", choices=["hist", "kde"], default="hist", help="Density estimator")
    p.add_argument("--out", default=None, help="Spectra binary file")
    p.add_argument("--hist", default=None, help="Histogram CSV (stdout when neither output is given)")

    p = sub.add_parser("pestimate", parents=[common], help="Estimate the fourth-moment coupling weight p")
    p.add_argument("--a-model", choices=sorted(SAMPLERS), required=True, help="Sampler for A")
    p.add_argument("--b-model", choices=sorted(SAMPLERS), required=True, help="Sampler for B")
    p.add_argument("--N", type=int, default=500, help="Matrix size")
    p.add_argument("--realizations", type=int, default=100, help="Number of realizations")
    p.add_argument("--out", default=None, help="Output JSON (stdout when omitted)")

    p = sub.add_parser("compare", parents=[common], help="Distance between two curve CSV files")
    p.add_argument("--a", required=True, help="Reference curve CSV")
    p.add_argument("--b", required=True, help="Curve CSV resampled onto the reference grid")
    p.add_argument("--metric", choices=[m.value for m in Metric], default="l1", help="Distance")
    p.add_argument("--window", type=parse_window, default=None, help="lo:hi")
    p.add_argument("--tol", type=float, default=None, help="Exit 3 when the distance exceeds it")
    return parser


def main(argv=None) -> int:
    argv = join_negative_values(sys.argv[1:] if argv is None else list(argv))
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    config = RunConfig.from_namespace(args, argv)
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
