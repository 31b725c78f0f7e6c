"""Command-line interface: ``spikeslab {generate,run,compare-engines,benchmark,evaluate}``.

Exit codes: 0 success, 2 usage or configuration error, 3 data error,
4 numerical failure.
"""

import argparse
import csv
import json
import logging
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .data import SIGNALS, Dataset, SyntheticSpec, default_hyperparams, generate_synthetic, load_csv
from .diagnostics import (
    inclusion_probabilities,
    median_model,
    predictive_rmse,
    tpr_fdr,
    trace_summary,
    write_inclusion_csv,
    write_metrics_json,
)
from .errors import ConfigError, DataError, NumericalError
from .samplers import ENGINES, MODELS, Hyperparams, make_engine, run_chain

log = logging.getLogger("spikeslab")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 0, 2, 3, 4


@dataclass
class RunConfig:
    """Everything needed to reproduce a run; written into every artifact."""

    model: str
    engine: str
    T: int
    burn_in: int
    thin: int
    seed: int
    chains: int
    hyperparams: dict
    source: dict
    refresh_period: int = 1000
    out: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def validate(self):
        if self.model not in MODELS:
            raise ConfigError(f"unknown model {self.model!r}")
        if self.engine not in ENGINES:
            raise ConfigError(f"unknown engine {self.engine!r}")
        if self.thin < 1:
            raise ConfigError("--thin must be >= 1")
        if not 0 <= self.burn_in < self.T:
            raise ConfigError("need 0 <= --burn-in < --T")
        if self.chains < 1:
            raise ConfigError("--chains must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ConfigError("--seed must be an unsigned 64-bit integer")
        if self.refresh_period < 0:
            raise ConfigError("--refresh-period must be >= 0")
        Hyperparams(**self.hyperparams)


# ----------------------------------------------------------------- helpers


def _kind_for(model):
    return "continuous" if model == "linear" else "binary"


def load_source(source):
    """Build the dataset described by a config ``source`` entry."""
    if "data" in source:
        d = load_csv(source["data"], source["response"], header=source.get("header", True),
                     standardize_columns=source.get("standardize", False),
                     response_kind=source.get("kind"))
        truth = None
    else:
        spec = SyntheticSpec(**source["synthetic"])
        d, truth = generate_synthetic(spec, source["kind"])
    if source.get("intercept"):
        d = d.with_intercept()
    return d, truth


def _source_from_args(args, model):
    if args.data:
        src = {"data": str(args.data), "response": args.response, "header": not args.no_header,
               "standardize": args.standardize}
        if model != "linear":
            src["kind"] = "binary"
    else:
        missing = [f for f in ("n", "p", "s") if getattr(args, f) is None]
        if missing:
            raise ConfigError("give --data or all of --n --p --s")
        src = {"synthetic": {"n": args.n, "p": args.p, "s": args.s, "sigma_star": args.sigma,
                             "signal": args.signal, "seed": args.data_seed if args.data_seed is not None else args.seed},
               "kind": _kind_for(model)}
    if args.intercept:
        src["intercept"] = True
    return src


def _hyperparams(args, n, p, model):
    hp = default_hyperparams(n, p, model, a0=args.a0, b0=args.b0).to_dict()
    for k in ("q", "tau0sq", "tau1sq"):
        v = getattr(args, k)
        if v is not None:
            hp[k] = v
    Hyperparams(**hp)
    return hp


def _workers(args):
    if args.workers is not None:
        w = args.workers
    elif os.environ.get("S3_WORKERS"):
        try:
            w = int(os.environ["S3_WORKERS"])
        except ValueError:
            raise ConfigError(f"S3_WORKERS must be an integer, got {os.environ['S3_WORKERS']!r}") from None
    else:
        w = os.cpu_count() or 1
    if w < 1:
        raise ConfigError("worker count must be >= 1")
    return w


def _fmt(v):
    return repr(float(v))


def write_draws_csv(path, out, config):
    p = out.z_draws.shape[1]
    with open(path, "w", newline="") as fh:
        fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        w = csv.writer(fh)
        head = ["iteration"] + [f"z_{j}" for j in range(p)] + [f"beta_{j}" for j in range(p)]
        if out.sigma2_draws is not None:
            head.append("sigma2")
        w.writerow(head)
        for k in range(out.stored):
            row = [out.burn_in + k * out.thin] + out.z_draws[k].tolist()
            row += [_fmt(b) for b in out.beta_draws[k]]
            if out.sigma2_draws is not None:
                row.append(_fmt(out.sigma2_draws[k]))
            w.writerow(row)


def write_trace_csv(path, out, config):
    with open(path, "w", newline="") as fh:
        fh.write("# config: " + json.dumps(config, sort_keys=True) + "\n")
        w = csv.writer(fh)
        w.writerow(["iteration", "delta", "p_t", "norm_z", "rho", "branch", "columns", "seconds"])
        for t, s in enumerate(out.swaps):
            w.writerow([t, s.delta, s.p_t, s.norm_z, _fmt(s.rho), s.branch,
                        int(out.columns[t]), _fmt(out.durations[t])])


def _chain_job(model, engine, data, hp, T, burn_in, thin, seed, chain, refresh_period):
    return run_chain(model, engine, data, Hyperparams(**hp), T, burn_in, thin, seed=seed,
                     chain=chain, refresh_period=refresh_period)


def run_chains(cfg, data, workers=1):
    jobs = [(cfg.model, cfg.engine, data, cfg.hyperparams, cfg.T, cfg.burn_in, cfg.thin,
             cfg.seed, i, cfg.refresh_period) for i in range(cfg.chains)]
    if workers == 1 or cfg.chains == 1:
        return [_chain_job(*j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, cfg.chains)) as pool:
        futures = [pool.submit(_chain_job, *j) for j in jobs]
        return [f.result() for f in futures]


def _emit(obj, out_path=None):
    text = json.dumps(obj, indent=2, sort_keys=True)
    if out_path:
        Path(out_path).write_text(text + "\n")
    print(text)


# ---------------------------------------------------------------- commands


def cmd_generate(args):
    kind = "binary" if args.model != "linear" else "continuous"
    spec = SyntheticSpec(n=args.n, p=args.p, s=args.s, sigma_star=args.sigma, signal=args.signal,
                         seed=args.seed)
    data, truth = generate_synthetic(spec, kind)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "data.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"x{j}" for j in range(data.p)] + ["y"])
        for i in range(data.n):
            w.writerow([_fmt(v) for v in data.X[i]] + [_fmt(data.y[i])])
    spec_blob = {**asdict(spec), "kind": kind}
    (out / "spec.json").write_text(json.dumps(spec_blob, indent=2, sort_keys=True) + "\n")
    truth_blob = {"spec": spec_blob, "beta_star": truth.beta_star.tolist(),
                  "support": list(truth.support)}
    (out / "truth.json").write_text(json.dumps(truth_blob, indent=2, sort_keys=True) + "\n")
    log.info("wrote %s", out)
    return EXIT_OK


def _build_config(args, model=None, engine=None):
    model = model or args.model
    source = _source_from_args(args, model)
    data, truth = load_source(source)
    hp = _hyperparams(args, data.n, data.p, model)
    cfg = RunConfig(model=model, engine=engine or args.engine, T=args.T, burn_in=args.burn_in,
                    thin=args.thin, seed=args.seed, chains=args.chains, hyperparams=hp,
                    source=source, refresh_period=args.refresh_period,
                    out=str(args.out) if args.out else None)
    cfg.validate()
    return cfg, data, truth


def _write_run(cfg, outputs, out_dir):
    out_dir.mkdir(parents=True, exist_ok=True)
    conf = cfg.to_dict()
    (out_dir / "config.json").write_text(json.dumps(conf, indent=2, sort_keys=True) + "\n")
    for o in outputs:
        if o.stored:
            write_draws_csv(out_dir / f"draws_chain{o.chain}.csv", o, conf)
        write_trace_csv(out_dir / f"trace_chain{o.chain}.csv", o, conf)
    stored = [o for o in outputs if o.stored]
    metrics = {"chains": len(outputs), "errors": [o.error for o in outputs if o.error]}
    if stored:
        est = inclusion_probabilities(stored)
        write_inclusion_csv(out_dir / "inclusion.csv", est, conf)
        metrics["median_model"] = list(median_model(est))
        metrics["draws_used"] = est.draws_used
    summaries = [trace_summary(o) for o in outputs if o.completed]
    for key in ("mean_p_t", "mean_delta", "seconds_per_iteration"):
        if summaries:
            metrics[key] = float(np.mean([s[key] for s in summaries]))
    write_metrics_json(out_dir / "metrics.json", metrics, conf)
    return metrics


def cmd_run(args):
    cfg, data, _ = _build_config(args)
    if not args.out:
        raise ConfigError("--out is required for run")
    try:
        outputs = run_chains(cfg, data, _workers(args))
    except NumericalError as exc:
        partial = getattr(exc, "partial", None)
        if partial is not None:
            _write_run(cfg, [partial], Path(args.out))
        raise
    metrics = _write_run(cfg, outputs, Path(args.out))
    _emit(metrics)
    return EXIT_OK


def _engine_list(text):
    engines = [e.strip() for e in text.split(",") if e.strip()]
    for e in engines:
        if e not in ENGINES:
            raise ConfigError(f"unknown engine {e!r}")
    return engines


def compare_engines(model, engines, data, hp, T, burn_in=0, seed=0, refresh_period=1000):
    """Run every engine from one seed and measure draw-level agreement."""
    if len(engines) < 2:
        raise ConfigError("compare-engines needs at least two engines")
    outs = {e: run_chain(model, e, data, hp, T, burn_in, 1, seed=seed,
                         refresh_period=refresh_period) for e in engines}
    ref = outs[engines[0]]
    report = {"reference": engines[0], "engines": {}}
    for e, o in outs.items():
        dz = int(np.count_nonzero(o.z_draws != ref.z_draws))
        scale = np.maximum(np.abs(ref.beta_draws), 1e-12 * np.abs(ref.beta_draws).max(initial=1.0))
        rel = float(np.max(np.abs(o.beta_draws - ref.beta_draws) / scale))
        report["engines"][e] = {"z_disagreements": dz, "beta_max_rel_dev": rel,
                                "seconds_per_iteration": float(o.durations.mean())}
    report["max_z_disagreements"] = max(v["z_disagreements"] for v in report["engines"].values())
    report["max_beta_rel_dev"] = max(v["beta_max_rel_dev"] for v in report["engines"].values())
    if "sota" in outs and "s3" in outs:
        report["speedup_sota_over_s3"] = (report["engines"]["sota"]["seconds_per_iteration"]
                                          / report["engines"]["s3"]["seconds_per_iteration"])
    return report, outs


def cmd_compare_engines(args):
    engines = _engine_list(args.engines)
    if len(engines) < 2:
        raise ConfigError("compare-engines needs at least two engines")
    cfg, data, _ = _build_config(args, engine=engines[0])
    report, _ = compare_engines(cfg.model, engines, data, Hyperparams(**cfg.hyperparams), cfg.T,
                                cfg.burn_in, cfg.seed, cfg.refresh_period)
    report["config"] = cfg.to_dict()
    _emit(report, args.out)
    return EXIT_OK


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {text!r}") from None


def cmd_benchmark(args):
    ns, ps, ss = _ints(args.n_grid), _ints(args.p_grid), _ints(args.s_grid)
    engines = _engine_list(args.engines)
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    if not (ns and ps and ss and engines and models):
        raise ConfigError("benchmark grid is empty")
    if args.warmup >= args.T:
        raise ConfigError("--warmup must be below --T")
    rows = []
    for model in models:
        if model not in MODELS:
            raise ConfigError(f"unknown model {model!r}")
        for n in ns:
            for p in ps:
                for s in ss:
                    spec = SyntheticSpec(n=n, p=p, s=s, sigma_star=args.sigma, signal=args.signal,
                                         seed=args.seed)
                    data, _ = generate_synthetic(spec, _kind_for(model))
                    hp = default_hyperparams(n, p, model)
                    for e in engines:
                        t0 = time.perf_counter()
                        eng = make_engine(e, data.X, hp, model, args.refresh_period)
                        o = run_chain(model, eng, data, hp, args.T, 0, 1, seed=args.seed)
                        total = time.perf_counter() - t0
                        secs = o.durations[args.warmup:]
                        swaps = o.swaps[args.warmup:]
                        mean = float(secs.mean())
                        if args.include_init:
                            mean = total / args.T
                        se = float(secs.std(ddof=1) / np.sqrt(secs.size)) if secs.size > 1 else 0.0
                        rows.append({"n": n, "p": p, "s": s, "engine": e, "model": model,
                                     "mean_seconds": mean, "se_seconds": se,
                                     "mean_p_t": float(np.mean([w.p_t for w in swaps])),
                                     "mean_delta": float(np.mean([w.delta for w in swaps]))})
                        log.info("%s", rows[-1])
    fh = open(args.out, "w", newline="") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow(r)
    finally:
        if args.out:
            fh.close()
    return EXIT_OK


def kfold_indices(n, k, seed):
    """Split ``range(n)`` into ``k`` folds uniformly at random."""
    if not 2 <= k <= n:
        raise ConfigError(f"need 2 <= k <= n for cross-validation, got k={k}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(f) for f in np.array_split(perm, k)]


def cross_validate(cfg, data, k):
    hp = Hyperparams(**cfg.hyperparams)
    scores = []
    for i, test in enumerate(kfold_indices(data.n, k, cfg.seed)):
        train = np.setdiff1d(np.arange(data.n), test)
        out = run_chain(cfg.model, cfg.engine, data.subset(train), hp, cfg.T, cfg.burn_in,
                        cfg.thin, seed=cfg.seed, chain=i, refresh_period=cfg.refresh_period)
        scores.append(predictive_rmse(out, data.subset(test)))
    return scores


def _load_run(run_dir):
    path = Path(run_dir) / "config.json"
    if not path.exists():
        raise DataError(f"{path} not found")
    conf = json.loads(path.read_text())
    return RunConfig(**conf)


def cmd_evaluate(args):
    cfg = _load_run(args.run)
    conf = cfg.to_dict()
    if args.cv:
        data, _ = load_source(cfg.source)
        scores = cross_validate(cfg, data, args.cv)
        result = {"cv_folds": args.cv, "fold_rmse": scores, "mean_rmse": float(np.mean(scores))}
    else:
        if not args.truth:
            raise ConfigError("give --truth FILE or --cv K")
        inc = Path(args.run) / "inclusion.csv"
        if not inc.exists():
            raise DataError(f"{inc} not found")
        pi = np.loadtxt(inc, delimiter=",", skiprows=2, usecols=1, ndmin=1)
        try:
            truth = json.loads(Path(args.truth).read_text())
        except OSError as exc:
            raise DataError(f"cannot read {args.truth}: {exc}") from exc
        support = truth["support"]
        offset = 1 if cfg.source.get("intercept") else 0
        sel = [j - offset for j in median_model(pi) if j >= offset]
        m = tpr_fdr(sel, support, pi.size - offset, conventional=args.conventional_fdr)
        result = {"tpr": m.tpr, "fdr": m.fdr, "selected": list(m.selected)}
    result["config"] = conf
    _emit(result, args.out)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def _add_data_args(p):
    g = p.add_argument_group("data")
    g.add_argument("--data", type=Path, help="CSV file (optionally gzip-compressed)")
    g.add_argument("--response", default="y", help="response column: header name or 0-based index")
    g.add_argument("--no-header", action="store_true", help="CSV has no header row")
    g.add_argument("--standardize", action="store_true", help="center and scale covariates")
    g.add_argument("--intercept", action="store_true", help="prepend a column of ones")
    g.add_argument("--n", type=int)
    g.add_argument("--p", type=int)
    g.add_argument("--s", type=int)
    g.add_argument("--sigma", type=float, default=2.0, help="noise sd of synthetic data")
    g.add_argument("--signal", choices=SIGNALS, default="constant2")
    g.add_argument("--data-seed", type=int, help="seed for synthetic data (default: --seed)")


def _add_chain_args(p, engine_default="s3"):
    p.add_argument("--model", choices=MODELS, default="linear")
    if engine_default is not None:
        p.add_argument("--engine", choices=ENGINES, default=engine_default)
    p.add_argument("--T", type=int, default=5000)
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--thin", type=int, default=1)
    p.add_argument("--chains", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    g = p.add_argument_group("prior (defaults scale with n and p)")
    g.add_argument("--tau0sq", type=float)
    g.add_argument("--tau1sq", type=float)
    g.add_argument("--q", type=float)
    g.add_argument("--a0", type=float, default=1.0)
    g.add_argument("--b0", type=float, default=1.0)
    p.add_argument("--refresh-period", type=int, default=1000,
                   help="rebuild the rolling matrices every this many sweeps (0 disables)")
    p.add_argument("--workers", type=int, help="parallel chains (env S3_WORKERS; default all cores)")


def build_parser():
    parser = argparse.ArgumentParser(prog="spikeslab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate a dataset and its true signal")
    g.add_argument("--model", choices=MODELS, default="linear", help="selects the response type")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--p", type=int, required=True)
    g.add_argument("--s", type=int, required=True)
    g.add_argument("--sigma", type=float, default=2.0)
    g.add_argument("--signal", choices=SIGNALS, default="constant2")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", type=Path, required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="sample one or more chains")
    _add_data_args(r)
    _add_chain_args(r)
    r.add_argument("--out", type=Path, help="output directory")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare-engines", help="run several engines from one seed")
    _add_data_args(c)
    _add_chain_args(c, engine_default=None)
    c.add_argument("--engines", default="naive,sota,s3,s3plus", help="comma-separated engines")
    c.add_argument("--out", type=Path, help="JSON report path")
    c.set_defaults(func=cmd_compare_engines, burn_in=0)

    b = sub.add_parser("benchmark", help="time engines over a grid of problem sizes")
    b.add_argument("--n", dest="n_grid", default="100", help="comma-separated n values")
    b.add_argument("--p", dest="p_grid", default="1000", help="comma-separated p values")
    b.add_argument("--s", dest="s_grid", default="10", help="comma-separated s values")
    b.add_argument("--engines", default="sota,s3")
    b.add_argument("--models", default="linear")
    b.add_argument("--sigma", type=float, default=2.0)
    b.add_argument("--signal", choices=SIGNALS, default="constant2")
    b.add_argument("--T", type=int, default=250)
    b.add_argument("--warmup", type=int, default=50, help="untimed leading sweeps")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--refresh-period", type=int, default=1000)
    b.add_argument("--include-init", action="store_true",
                   help="report end-to-end time per sweep, including matrix precomputation")
    b.add_argument("--out", type=Path, help="CSV path (default stdout)")
    b.set_defaults(func=cmd_benchmark)

    e = sub.add_parser("evaluate", help="score a finished run")
    e.add_argument("--run", type=Path, required=True, help="directory written by 'run'")
    e.add_argument("--truth", type=Path, help="truth.json written by 'generate'")
    e.add_argument("--cv", type=int, help="k-fold cross-validated predictive RMSE")
    e.add_argument("--conventional-fdr", action="store_true",
                   help="divide false selections by the number selected")
    e.add_argument("--out", type=Path, help="JSON report path")
    e.set_defaults(func=cmd_evaluate)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"spikeslab: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"spikeslab: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as exc:
        print(f"spikeslab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
