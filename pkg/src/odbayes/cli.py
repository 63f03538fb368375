"""Command-line front end: ``odbayes {furness,calibrate,sample,summarize}``.

Every option can also come from a ``key=value`` config file given with
``--config``; command-line flags take precedence. Exit codes: 0 success,
2 input or configuration error, 3 model infeasibility.
"""

import argparse
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import __version__
from ._accel import backend_name
from .analysis import summarize
from .core import CostBins, InfeasibleError, MarginData, ODError, as_proportions
from .io import (
    read_draws,
    read_grid,
    read_margins,
    read_tld,
    write_csv,
    write_draws,
    write_grid,
    write_json,
)
from .priors import (
    calibrate_beta,
    furness_balance,
    gravity_proportions,
    mean_proportion_cost,
)
from .samplers import (
    ChainConfig,
    ChainOutput,
    run_beta_tld_chain,
    run_fixed_p_chain,
    run_seed_chain,
)

log = logging.getLogger("odbayes")

MODELS = ("fixed-p", "dirichlet-seed", "beta-tld")
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3


class ConfigError(ValueError):
    pass


def _float_list(s):
    if isinstance(s, (list, tuple)):
        return [float(x) for x in s]
    return [float(x) for x in str(s).split(",") if x.strip()]


def _bool(s):
    if isinstance(s, bool):
        return s
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off", ""):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


@dataclass
class RunConfig:
    """Resolved options for one invocation."""

    model: str = "fixed-p"
    margins: str = None
    costs: str = None
    seed_matrix: str = None
    tld: str = None
    proportions: str = None
    beta: float = None
    pi: str = "1.0"
    samples: int = 10_000
    burnin: int = None
    thin: int = 1
    rng_seed: int = 0
    sigma2: float = 1e-4
    bins: str = None
    gamma: float = 0.95
    out: str = "odbayes_out"
    chains: int = 1
    emit_draws: bool = False
    target_cost: float = None
    cost_thresholds: str = None
    draws: str = None

    _types = {
        "beta": float, "samples": int, "burnin": int, "thin": int, "rng_seed": int,
        "sigma2": float, "gamma": float, "chains": int, "emit_draws": _bool,
        "target_cost": float,
    }

    @classmethod
    def resolve(cls, flags, config_path=None):
        values = {}
        if config_path:
            values.update(load_config_file(config_path))
        values.update({k: v for k, v in flags.items() if v is not None})
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg = cls()
        for k, v in values.items():
            conv = cls._types.get(k)
            try:
                setattr(cfg, k, conv(v) if conv else v)
            except (TypeError, ValueError):
                raise ConfigError(f"bad value for {k}: {v!r}") from None
        if cfg.model not in MODELS:
            raise ConfigError(f"model must be one of {', '.join(MODELS)}")
        if not 0 < cfg.gamma <= 1:
            raise ConfigError("gamma must lie in (0, 1]")
        if cfg.chains < 1:
            raise ConfigError("chains must be >= 1")
        return cfg

    def chain_config(self, seed_offset=0):
        return ChainConfig(
            samples=self.samples, burn_in=self.burnin, thin=self.thin,
            rng_seed=self.rng_seed + seed_offset, sigma2=self.sigma2,
        )

    def echo(self):
        return {k: v for k, v in asdict(self).items() if v is not None}


def load_config_file(path):
    """Flat ``key=value`` lines; ``#`` starts a comment. Dashes in keys become underscores."""
    out = {}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            k, v = line.split("=", 1)
            out[k.strip().replace("-", "_")] = v.strip()
    return out


# ---------------------------------------------------------------- inputs


def _require(cfg, *names):
    missing = [n for n in names if getattr(cfg, n) is None]
    if missing:
        flags = ", ".join("--" + n.replace("_", "-") for n in missing)
        raise ConfigError(f"missing required input: {flags}")


def _margins(cfg):
    _require(cfg, "margins")
    return read_margins(cfg.margins)


def _costs(cfg, n=None):
    if cfg.costs is None:
        return None
    c = read_grid(cfg.costs)
    if n is not None and c.shape != (n, n):
        raise ConfigError(f"costs are {c.shape} but margins have {n} zones")
    return c


def _bins_and_tld(cfg):
    bins, counts = None, None
    if cfg.tld is not None:
        bins, counts = read_tld(cfg.tld)
    if cfg.bins is not None:
        edge_bins = CostBins(_float_list(cfg.bins))
        if bins is not None and not np.array_equal(bins.edges, edge_bins.edges):
            raise ConfigError("--bins disagrees with the bins in the TLD file")
        bins = edge_bins
    return bins, counts


def _proportions(cfg, m, costs):
    if cfg.proportions is not None:
        p = read_grid(cfg.proportions)
        if p.shape != (m.n, m.n):
            raise ConfigError(f"proportions are {p.shape} but margins have {m.n} zones")
        return as_proportions(p, normalize=True)
    if costs is not None and cfg.beta is not None:
        return gravity_proportions(costs, cfg.beta)
    raise ConfigError("need --proportions, or --costs together with --beta")


def _pi(cfg, shape):
    try:
        return float(cfg.pi)
    except (TypeError, ValueError):
        arr = read_grid(cfg.pi)
        if arr.size != int(np.prod(shape)):
            raise ConfigError(f"pi file has {arr.size} values, expected {int(np.prod(shape))}")
        return arr.reshape(shape)


def _thresholds(cfg):
    return _float_list(cfg.cost_thresholds) if cfg.cost_thresholds else []


@dataclass
class _Context:
    margins: MarginData
    costs: np.ndarray = None
    bins: CostBins = None
    tld: np.ndarray = None
    p: np.ndarray = None
    seed: np.ndarray = None
    pi: object = 1.0


def _context(cfg):
    m = _margins(cfg)
    costs = _costs(cfg, m.n)
    bins, tld = _bins_and_tld(cfg)
    ctx = _Context(m, costs, bins, tld)
    if cfg.model == "fixed-p":
        ctx.p = _proportions(cfg, m, costs)
    elif cfg.model == "dirichlet-seed":
        if cfg.seed_matrix is not None:
            ctx.seed = read_grid(cfg.seed_matrix)
        ctx.pi = _pi(cfg, (m.n, m.n))
    else:
        if costs is None:
            raise ConfigError("beta-tld needs --costs")
        if bins is None:
            raise ConfigError("beta-tld needs cost bins (--bins or --tld)")
        ctx.pi = _pi(cfg, (bins.k,))
    if bins is not None and costs is not None:
        bins.bin_index(costs)
    return ctx


# ---------------------------------------------------------------- commands


def _run_chain(cfg, ctx, offset):
    cc = cfg.chain_config(offset)
    if cfg.model == "fixed-p":
        return run_fixed_p_chain(ctx.margins, ctx.p, cfg=cc)
    if cfg.model == "dirichlet-seed":
        return run_seed_chain(ctx.margins, ctx.seed, ctx.pi, cfg=cc)
    beta0 = 0.0 if cfg.beta is None else cfg.beta
    return run_beta_tld_chain(
        ctx.margins, ctx.costs, ctx.bins, ctx.tld, ctx.pi, cfg=cc, beta0=beta0
    )


def _summary(cfg, ctx, out):
    s = summarize(
        out, cfg.gamma, costs=ctx.costs, bins=ctx.bins,
        thresholds=_thresholds(cfg), p=ctx.p,
    )
    d = s.to_dict()
    d["model"] = cfg.model
    d["n"] = out.n
    d["samples"] = out.samples
    return s, d


def _write_outputs(outdir, cfg, ctx, out):
    os.makedirs(outdir, exist_ok=True)
    s, d = _summary(cfg, ctx, out)
    write_json(os.path.join(outdir, "summary.json"), d)
    write_grid(os.path.join(outdir, "mean.csv"), s.mean)
    n = out.n
    write_csv(
        os.path.join(outdir, "intervals.csv"),
        ["origin", "destination", "mean", "lower", "upper"],
        [
            (i + 1, j + 1, float(s.mean[i, j]), int(s.lower[i, j]), int(s.upper[i, j]))
            for i in range(n) for j in range(n)
        ],
    )
    if s.cost is not None:
        e, c = s.cost.hist_edges, s.cost.hist_counts
        write_csv(
            os.path.join(outdir, "cost_hist.csv"), ["lower", "upper", "count"],
            [(float(e[k]), float(e[k + 1]), int(c[k])) for k in range(c.size)],
        )
    if s.tld is not None:
        t = s.tld
        ref = t.reference if t.reference is not None else [""] * len(t.labels)
        edges = ctx.bins.edges
        write_csv(
            os.path.join(outdir, "tld.csv"),
            ["lower", "upper", "mean_share", "share_lower", "share_upper", "reference"],
            [
                (float(edges[k]), float(edges[k + 1]), float(t.mean[k]),
                 float(t.lower[k]), float(t.upper[k]),
                 ref[k] if ref[k] == "" else float(ref[k]))
                for k in range(len(t.labels))
            ],
        )
    return d


def _sample_one(cfg, offset):
    ctx = _context(cfg)
    return _run_chain(cfg, ctx, offset)


def cmd_sample(cfg):
    ctx = _context(cfg)
    if cfg.chains == 1:
        outs = [_run_chain(cfg, ctx, 0)]
    else:
        with ProcessPoolExecutor(max_workers=min(cfg.chains, os.cpu_count() or 1)) as ex:
            outs = list(ex.map(_sample_one, [cfg] * cfg.chains, range(cfg.chains)))

    runs = []
    for k, out in enumerate(outs):
        outdir = cfg.out if cfg.chains == 1 else os.path.join(cfg.out, f"chain_{k + 1}")
        d = _write_outputs(outdir, cfg, ctx, out)
        if cfg.emit_draws:
            write_draws(os.path.join(outdir, "draws.bin"), out.draws, out.aux, out.aux_kind)
        run = {
            "command": "sample",
            "version": __version__,
            "backend": backend_name(),
            "config": cfg.echo(),
            "rng_seed": out.config.rng_seed,
            "burn_in": out.config.burn_in,
            "acceptance": out.acceptance,
            "initial_table": out.initial.tolist(),
        }
        write_json(os.path.join(outdir, "run.json"), run)
        runs.append(run)
        _report(d, outdir)

    if cfg.chains > 1:
        pooled = ChainOutput(
            np.concatenate([o.draws for o in outs]), ctx.margins, outs[0].config,
            aux=None if outs[0].aux is None else np.concatenate([o.aux for o in outs]),
            aux_kind=outs[0].aux_kind,
        )
        d = _write_outputs(cfg.out, cfg, ctx, pooled)
        write_json(
            os.path.join(cfg.out, "run.json"),
            {"command": "sample", "chains": cfg.chains, "config": cfg.echo(),
             "acceptance": [r["acceptance"] for r in runs]},
        )
        _report(d, cfg.out)
    return 0


def _report(d, outdir):
    line = f"{outdir}: {d['samples']} draws"
    if "beta" in d:
        line += f", beta mean {d['beta']['mean']:.4f}"
    if "cost" in d:
        line += f", regional cost mean {d['cost']['mean']:.4f}"
    print(line)


def cmd_summarize(cfg):
    _require(cfg, "draws")
    ctx = _context(cfg)
    draws, aux, kind = read_draws(cfg.draws)
    m = ctx.margins
    if draws.shape[1] != m.n:
        raise ConfigError(f"draws have {draws.shape[1]} zones but margins have {m.n}")
    if np.any(draws.sum(axis=2) != m.origins) or np.any(draws.sum(axis=1) != m.destinations):
        raise ConfigError("stored draws do not match the margins")
    out = ChainOutput(
        draws, m, ChainConfig(samples=draws.shape[0], rng_seed=cfg.rng_seed),
        aux=aux, aux_kind=kind,
    )
    d = _write_outputs(cfg.out, cfg, ctx, out)
    _report(d, cfg.out)
    return 0


def cmd_furness(cfg):
    m = _margins(cfg)
    costs = _costs(cfg, m.n)
    p = _proportions(cfg, m, costs)
    bal = furness_balance(m, p)
    os.makedirs(cfg.out, exist_ok=True)
    write_grid(os.path.join(cfg.out, "furness.csv"), bal.cells)
    write_csv(
        os.path.join(cfg.out, "factors.csv"), ["zone", "row_factor", "col_factor"],
        [(k + 1, float(a), float(b)) for k, (a, b) in
         enumerate(zip(bal.row_factors, bal.col_factors))],
    )
    run = {
        "command": "furness",
        "config": cfg.echo(),
        "iterations": bal.iterations,
        "residual": bal.residual,
    }
    if costs is not None and m.total > 0:
        run["regional_cost"] = bal.regional_cost(costs)
    write_json(os.path.join(cfg.out, "run.json"), run)
    print(f"Furness converged in {bal.iterations} iterations (residual {bal.residual:.3e})")
    if "regional_cost" in run:
        print(f"regional cost {run['regional_cost']:.6f}")
    return 0


def cmd_calibrate(cfg):
    _require(cfg, "costs", "target_cost")
    c = read_grid(cfg.costs)
    beta = calibrate_beta(c, cfg.target_cost)
    achieved = mean_proportion_cost(gravity_proportions(c, beta), c)
    print(f"beta={beta!r} mean_cost={achieved!r}")
    os.makedirs(cfg.out, exist_ok=True)
    write_json(
        os.path.join(cfg.out, "run.json"),
        {"command": "calibrate", "config": cfg.echo(), "beta": beta, "mean_cost": achieved},
    )
    return 0


COMMANDS = {
    "furness": cmd_furness,
    "calibrate": cmd_calibrate,
    "sample": cmd_sample,
    "summarize": cmd_summarize,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value config file; flags override it")
    common.add_argument("--margins", help="CSV with header zone,origin,destination")
    common.add_argument("--costs", help="headerless n x n cost grid")
    common.add_argument("--seed-matrix", dest="seed_matrix", help="headerless n x n seed table")
    common.add_argument("--tld", help="CSV with header lower,upper,count")
    common.add_argument("--proportions", help="headerless n x n proportions (rescaled to sum 1)")
    common.add_argument("--model", choices=MODELS)
    common.add_argument("--beta", type=float, help="gravity deterrence (initial value for beta-tld)")
    common.add_argument("--pi", help="Dirichlet parameter: scalar or path to a grid")
    common.add_argument("--samples", type=int, help="recorded draws G (default 10000)")
    common.add_argument("--burnin", type=int, help="burn-in sweeps (default 10 n^2)")
    common.add_argument("--thin", type=int)
    common.add_argument("--rng-seed", dest="rng_seed", type=int)
    common.add_argument("--sigma2", type=float, help="beta proposal variance")
    common.add_argument("--bins", help="comma-separated cost bin edges")
    common.add_argument("--gamma", type=float, help="credibility level (default 0.95)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--chains", type=int, help="independent chains with seeds seed, seed+1, ...")
    common.add_argument("--emit-draws", dest="emit_draws", action="store_const", const=True)
    common.add_argument("--target-cost", dest="target_cost", type=float)
    common.add_argument("--cost-thresholds", dest="cost_thresholds",
                        help="comma-separated x for P(regional cost >= x)")
    common.add_argument("--draws", help="draws.bin to summarize")

    parser = argparse.ArgumentParser(prog="odbayes", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("furness", parents=[common], help="Furness balancing of proportions")
    sub.add_parser("calibrate", parents=[common], help="beta matching a target mean cost")
    sub.add_parser("sample", parents=[common], help="run the MCMC sampler")
    sub.add_parser("summarize", parents=[common], help="summaries from a stored draws.bin")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    flags = {
        k: v for k, v in vars(args).items()
        if k not in ("command", "config", "verbose")
    }
    try:
        cfg = RunConfig.resolve(flags, args.config)
        return COMMANDS[args.command](cfg)
    except InfeasibleError as exc:
        print(f"odbayes: infeasible: {exc}", file=sys.stderr)
        return EXIT_INPUT if args.command == "furness" else EXIT_INFEASIBLE
    except (ODError, ValueError, OSError) as exc:
        print(f"odbayes: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
