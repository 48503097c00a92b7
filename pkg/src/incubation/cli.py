"""Command-line interface: ``incubation <command> [options]``.

Every command writes its results into ``--out-dir`` (default: the current
directory).  CSV files start with a ``# manifest:`` comment line and JSON
files carry a ``"manifest"`` key recording the command, its parameters, the
seed, the SHA-256 of the input file and the package version, so rerunning a
command with the same manifest reproduces the files byte for byte.

Exit status is 0 on success, 1 when a fit does not converge (results are
still written) and 2 on invalid input.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .data import ParseError, ValidationError, format_triples, read_sample, reduce
from .npmle import DiscreteDistribution, fit_npmle
from .parametric import WeibullParams, fit_weibull
from .smooth import CDF, DENSITY, density, smle

SEED_ENV = "INCUBATION_SEED"

EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_INPUT = 2


class InputError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    parameters: dict
    seed: int | None = None
    input_digest: str | None = None
    version: str = __version__

    def to_dict(self) -> dict:
        return {
            "command": self.command,
            "parameters": self.parameters,
            "seed": self.seed,
            "input_digest": self.input_digest,
            "version": self.version,
        }

    def header(self) -> str:
        return "# manifest: " + json.dumps(self.to_dict(), sort_keys=True) + "\n"


@dataclass
class Output:
    out_dir: Path
    manifest: RunManifest
    written: list = field(default_factory=list)

    def _path(self, name):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / name
        self.written.append(str(path))
        return path

    def csv(self, name: str, body: str):
        self._path(name).write_text(self.manifest.header() + body)

    def json(self, name: str, payload: dict):
        doc = {"manifest": self.manifest.to_dict(), **payload}
        self._path(name).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def text(self, name: str, body: str):
        self._path(name).write_text(self.manifest.header() + body)


def file_digest(path) -> str:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return hashlib.sha256(data).hexdigest()


def parse_range(text: str) -> np.ndarray:
    """``"lo:hi:step"`` (inclusive of ``hi``) or a comma-separated list."""
    try:
        if ":" in text:
            lo, hi, step = (float(x) for x in text.split(":"))
            if step <= 0 or hi < lo:
                raise ValueError
            n = int(round((hi - lo) / step))
            return np.round(lo + step * np.arange(n + 1), 10)
        return np.array([float(x) for x in text.split(",")])
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi:step or a comma list, got {text!r}") from None


def _params(args, skip=("func", "out_dir", "threads", "command")) -> dict:
    out = {}
    for k, v in sorted(vars(args).items()):
        if k in skip:
            continue
        out[k] = v.tolist() if isinstance(v, np.ndarray) else v
    return out


def _load(args):
    digest = file_digest(args.input)
    return read_sample(args.input), digest


def _setup(args, command, digest=None, seed=None) -> Output:
    params = _params(args)
    params.pop("seed", None)
    params.pop("input", None)
    manifest = RunManifest(command, params, seed, digest)
    return Output(Path(args.out_dir), manifest)


# -- commands -------------------------------------------------------------------


def cmd_fit(args) -> int:
    sample, digest = _load(args)
    out = _setup(args, "fit", digest)
    problem = reduce(sample)
    kw = {"max_iter": args.max_iter, "tol": args.tol}
    fit = fit_npmle(problem, args.algorithm, **kw)
    out.json("fit.json", {"fit": fit.to_dict(), "reduction": json.loads(problem.to_json())})
    rows = ["x,mass"] + [f"{x:.10g},{p:.12g}" for x, p in zip(fit.distribution.support, fit.distribution.masses)]
    out.csv("masses.csv", "\n".join(rows) + "\n")
    _report(out, fit.message or ("converged" if fit.converged else "not converged"))
    return EXIT_OK if fit.converged else EXIT_NOT_CONVERGED


def cmd_weibull(args) -> int:
    sample, digest = _load(args)
    out = _setup(args, "weibull", digest)
    init = WeibullParams(args.init_a, args.init_b)
    fit = fit_weibull(sample, init, args.step, args.shrink, args.min_step, args.max_evals)
    out.json("weibull.json", {"fit": fit.to_dict()})
    _report(out, f"a={fit.params.a:.6g} b={fit.params.b:.6g} loglik={fit.loglik:.8g}")
    return EXIT_OK if fit.converged else EXIT_NOT_CONVERGED


def _read_fit(path) -> DiscreteDistribution:
    try:
        doc = json.loads(Path(path).read_text())
        fit = doc.get("fit", doc)
        return DiscreteDistribution(fit["support"], fit["masses"])
    except OSError as exc:
        raise InputError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise InputError(f"{path} is not a fit file: {exc}") from exc


def cmd_smooth(args) -> int:
    digest = file_digest(args.input)
    dist = _read_fit(args.input).trimmed()
    out = _setup(args, "smooth", digest)
    estimator = smle if args.kind == CDF else density
    est = estimator(dist, args.h, args.grid)
    out.csv(f"{args.kind}.csv", est.to_csv())
    _report(out, f"{args.kind} at h={args.h}")
    return EXIT_OK


def cmd_bandwidth(args) -> int:
    from .bootstrap import select_bandwidth

    sample, digest = _load(args)
    out = _setup(args, "bandwidth", digest, args.seed)
    curve = select_bandwidth(
        sample, args.target, args.h_grid, args.h0, args.B, args.seed, args.rounding, n_jobs=args.threads
    )
    out.csv(f"bandwidth_{args.target}.csv", curve.to_csv())
    out.json(f"bandwidth_{args.target}.json", curve.metadata())
    _report(out, f"minimizer h={curve.minimizer:g} ({curve.n_dropped} replicates dropped)")
    return EXIT_OK


def cmd_subsample(args) -> int:
    from .bootstrap import subsample_bandwidth

    sample, digest = _load(args)
    out = _setup(args, "subsample", digest, args.seed)
    res = subsample_bandwidth(sample, args.m, args.c_grid, args.h_ref, args.B, args.seed, n_jobs=args.threads)
    out.csv("subsample.csv", res.to_csv())
    out.json("subsample.json", res.metadata())
    _report(out, f"c={res.c_hat:g} bandwidth={res.bandwidth:.6g}")
    return EXIT_OK


def _sim_config(args):
    from .bootstrap import SimulationConfig

    return SimulationConfig(
        n=args.n, M=args.M, M1=args.M1, weibull=WeibullParams(args.a, args.b), rounding=args.rounding, seed=getattr(args, "seed", 0)
    )


def cmd_simulate(args) -> int:
    from .bootstrap import simulate_continuous

    config = _sim_config(args)
    out = _setup(args, "simulate", None, args.seed)
    sample = simulate_continuous(config)
    out.text("simulated.txt", format_triples(sample))
    _report(out, f"{len(sample)} observations")
    return EXIT_OK


def cmd_ci(args) -> int:
    from .bootstrap import bootstrap_ci_density

    sample, digest = _load(args)
    out = _setup(args, "ci", digest, args.seed)
    band = bootstrap_ci_density(sample, args.h, args.grid, args.B, args.level, args.seed, n_jobs=args.threads)
    out.csv("ci.csv", band.to_csv())
    out.json("ci.json", band.metadata())
    _report(out, f"{band.n_dropped} replicates dropped")
    return EXIT_OK


def cmd_variance(args) -> int:
    from .asymptotics import asymptotic_variances, empirical_variance

    config = _sim_config(args)
    out = _setup(args, "variance", None, args.seed)
    if args.n_sims:
        report = empirical_variance(
            config, args.t, args.h, args.n_sims, args.seed, args.delta, n_jobs=args.threads
        )
        rows = ["t,empirical,asymptotic"] + [
            f"{t:.10g},{e:.12g},{a:.12g}" for t, e, a in zip(report.t_values, report.empirical, report.asymptotic)
        ]
        meta = report.metadata()
    else:
        asym = asymptotic_variances(config, args.t, args.h, args.delta, args.s_range)
        rows = ["t,asymptotic"] + [f"{t:.10g},{a:.12g}" for t, a in zip(args.t, asym)]
        meta = {"n": config.n, "h": args.h}
    out.csv("variance.csv", "\n".join(rows) + "\n")
    out.json("variance.json", meta)
    _report(out, f"{len(args.t)} target points")
    return EXIT_OK


def cmd_phi(args) -> int:
    from .asymptotics import mean_theta, model_cdf, solve_phi

    config = _sim_config(args)
    out = _setup(args, "phi", None)
    sol = solve_phi(model_cdf(config), args.t, args.h, config.M, config.M1, args.delta, args.method)
    out.csv("phi.csv", sol.to_csv())
    out.json(
        "phi.json",
        {"residual": sol.residual, "mean_theta": mean_theta(sol), "iterations": sol.iterations, "t": args.t, "h": args.h},
    )
    _report(out, f"residual={sol.residual:.3g}")
    return EXIT_OK


def _report(out: Output, summary: str):
    print(summary)
    for path in out.written:
        print(f"wrote {path}")


# -- argument parsing --------------------------------------------------------------


def _positive(kind):
    def conv(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v

    return conv


def default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise InputError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _model_flags(p, n=1000):
    p.add_argument("--n", type=_positive(int), default=n, help="sample size")
    p.add_argument("--M", type=_positive(float), default=30.0, help="exit times uniform on [0, M]")
    p.add_argument("--M1", type=_positive(float), default=20.0, help="incubation support [0, M1]")
    p.add_argument("--a", type=_positive(float), default=3.03514, help="Weibull shape")
    p.add_argument("--b", type=_positive(float), default=0.002619, help="Weibull rate")
    p.add_argument("--rounding", choices=("continuous", "round_to_day"), default="continuous")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="incubation", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out-dir", default=".", help="directory for output files")
    common.add_argument("--threads", type=_positive(int), default=1, help="worker processes for replicates")
    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument("--seed", type=int, default=None, help=f"master seed (default: ${SEED_ENV} or 0)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="NPMLE of the incubation distribution")
    p.add_argument("input", help="two-column (E, S) or three-column (E, S, delta) file")
    p.add_argument("--algorithm", choices=("icm", "em"), default="icm")
    p.add_argument("--max-iter", type=_positive(int), default=10_000)
    p.add_argument("--tol", type=float, default=1e-10)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("weibull", parents=[common], help="maximum likelihood Weibull fit")
    p.add_argument("input")
    p.add_argument("--init-a", type=float, default=2.0)
    p.add_argument("--init-b", type=float, default=0.01)
    p.add_argument("--step", type=_positive(float), default=0.5, help="initial step in log-parameters")
    p.add_argument("--shrink", type=float, default=0.5)
    p.add_argument("--min-step", type=_positive(float), default=1e-8)
    p.add_argument("--max-evals", type=_positive(int), default=100_000)
    p.set_defaults(func=cmd_weibull)

    p = sub.add_parser("smooth", parents=[common], help="SMLE or density estimate from a fit file")
    p.add_argument("input", help="fit.json written by the fit command")
    p.add_argument("--kind", choices=(CDF, DENSITY), default=DENSITY)
    p.add_argument("--h", type=float, required=True, help="bandwidth")
    p.add_argument("--grid", type=parse_range, default=parse_range("0:14:0.1"))
    p.set_defaults(func=cmd_smooth)

    p = sub.add_parser("bandwidth", parents=[common, seeded], help="smoothed-bootstrap bandwidth curve")
    p.add_argument("input")
    p.add_argument("--target", choices=(DENSITY, CDF), default=DENSITY)
    p.add_argument("--h0", type=_positive(float), default=4.0)
    p.add_argument("--B", type=_positive(int), default=1000)
    p.add_argument("--h-grid", type=parse_range, default=parse_range("2:7:0.2"))
    p.add_argument("--rounding", choices=("round_to_day", "continuous"), default="round_to_day")
    p.set_defaults(func=cmd_bandwidth)

    p = sub.add_parser("subsample", parents=[common, seeded], help="subsample bandwidth constant")
    p.add_argument("input")
    p.add_argument("--m", type=_positive(int), default=50)
    p.add_argument("--c-grid", type=parse_range, default=parse_range("4:16:0.2"))
    p.add_argument("--h-ref", type=_positive(float), default=3.0)
    p.add_argument("--B", type=_positive(int), default=500)
    p.set_defaults(func=cmd_subsample)

    p = sub.add_parser("simulate", parents=[common, seeded], help="draw a sample from the continuous model")
    _model_flags(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ci", parents=[common, seeded], help="pointwise bootstrap band for the density")
    p.add_argument("input")
    p.add_argument("--h", type=_positive(float), required=True)
    p.add_argument("--B", type=_positive(int), default=1000)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--grid", type=parse_range, default=parse_range("0:14:0.1"))
    p.set_defaults(func=cmd_ci)

    p = sub.add_parser("variance", parents=[common, seeded], help="asymptotic and simulated variances")
    _model_flags(p)
    p.add_argument("--t", type=parse_range, default=parse_range("2:11:1"))
    p.add_argument("--h", type=_positive(float), default=3.4)
    p.add_argument("--delta", type=_positive(float), default=0.05, help="integral-equation grid step")
    p.add_argument("--s-range", choices=("grid", "full"), default="grid")
    p.add_argument("--n-sims", type=int, default=0, help="simulated samples (0: asymptotic column only)")
    p.set_defaults(func=cmd_variance)

    p = sub.add_parser("phi", parents=[common], help="solve the integral equation for the score")
    _model_flags(p)
    p.add_argument("--t", type=float, default=6.0)
    p.add_argument("--h", type=_positive(float), default=3.4)
    p.add_argument("--delta", type=_positive(float), default=0.05)
    p.add_argument("--method", choices=("direct", "iteration"), default="direct")
    p.set_defaults(func=cmd_phi)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if hasattr(args, "seed") and args.seed is None:
            args.seed = default_seed()
        return args.func(args)
    except (InputError, ParseError, ValidationError, ValueError, FileNotFoundError) as exc:
        print(f"incubation {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except RuntimeError as exc:
        print(f"incubation {args.command}: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED


if __name__ == "__main__":
    sys.exit(main())
