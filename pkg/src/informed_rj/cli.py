"""Command-line entry point: ``run``, ``enumerate``, ``compare`` and ``gen-data``."""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .datasets import DataUnavailable, add_outlier, prostate_analog, prostate_arrays, synthetic_arrays, write_csv
from .diagnostics import (ModelInfoCache, RunSummary, empirical_model_pmf,
                          switch_acceptance_rate, visit_rate, write_trace)
from .laplace import BALANCING_KINDS, MapConvergenceError
from .oracle import (ENUMERATION_LIMIT, EnumerationLimitError, LowEssError, ModelPmf,
                     exact_model_pmf_normal, golden_model_pmf, tv_distance)
from .regression import MODEL_KINDS, DataError, load_csv, lptn_constants
from .rng import check_seed
from .samplers import COMBINERS, SAMPLERS, AnnealConfig, SamplerSpec, run_chain, tune_ell

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_RUNTIME = 4
EXIT_ESS = 5

log = logging.getLogger("informed_rj")


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""


ANNEALED = ("ais", "multi", "improved")
MULTI_REPLICATE = ("multi", "improved")


@dataclass(frozen=True)
class RunConfig:
    sampler: str = "informed"
    h: str | None = "barker"
    model_kind: str = "normal"
    rho: float = 0.95
    iters: int = 100_000
    burnin: int | None = None
    seed: int = 0
    T: int | None = None
    N: int | None = None
    ell: float | str = 2.0
    combiner: str = "median"
    chains: int = 1
    reference: str = "auto"

    @property
    def effective_burnin(self) -> int:
        return self.iters // 10 if self.burnin is None else self.burnin

    def sampler_spec(self, ell=None) -> SamplerSpec:
        ell = self.ell if ell is None else ell
        if ell == "auto":
            ell = 2.0
        anneal = AnnealConfig(T=self.T or 1, ell=float(ell), N=self.N or 1, combiner=self.combiner)
        return SamplerSpec(self.sampler, self.h or "barker", anneal)


def _as_int(key, text):
    try:
        return int(text)
    except ValueError:
        raise ConfigError(f"{key}: expected an integer, got {text!r}") from None


def _as_float(key, text):
    try:
        value = float(text)
    except ValueError:
        raise ConfigError(f"{key}: expected a real number, got {text!r}") from None
    if not math.isfinite(value):
        raise ConfigError(f"{key}: expected a finite real number, got {text!r}")
    return value


def _as_choice(key, text, choices):
    if text not in choices:
        raise ConfigError(f"{key}: expected one of {', '.join(choices)}, got {text!r}")
    return text


_PARSERS = {
    "sampler": lambda k, v: _as_choice(k, v, SAMPLERS),
    "h": lambda k, v: _as_choice(k, v, BALANCING_KINDS),
    "model_kind": lambda k, v: _as_choice(k, v, MODEL_KINDS),
    "rho": _as_float,
    "iters": _as_int,
    "burnin": _as_int,
    "seed": _as_int,
    "T": _as_int,
    "N": _as_int,
    "ell": lambda k, v: "auto" if v == "auto" else _as_float(k, v),
    "combiner": lambda k, v: _as_choice(k, v, COMBINERS),
    "chains": _as_int,
    "reference": lambda k, v: v,
}


def parse_config_text(text: str, seed_override=None) -> RunConfig:
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        if not value:
            raise ConfigError(f"{key}: missing value")
        values[key] = _PARSERS[key](key, value)
    if seed_override is not None:
        values["seed"] = seed_override
    return validate_config(values)


def validate_config(values: dict) -> RunConfig:
    sampler = values.get("sampler", "informed")
    given = set(values)
    if sampler == "uninformed":
        if "h" in given:
            raise ConfigError("h: not used by the uninformed sampler")
        values["h"] = None
    elif "h" not in given:
        raise ConfigError(f"h: required for sampler {sampler} (one of {', '.join(BALANCING_KINDS)})")
    for key, users in (("T", ANNEALED), ("N", MULTI_REPLICATE), ("ell", ANNEALED),
                       ("combiner", ("improved",))):
        required = key in ("T", "N")
        if sampler in users and required and key not in given:
            raise ConfigError(f"{key}: required for sampler {sampler}")
        if sampler not in users and key in given:
            raise ConfigError(f"{key}: not used by sampler {sampler}")
    cfg = RunConfig(**values)
    if cfg.iters < 2:
        raise ConfigError(f"iters: expected an integer >= 2, got {cfg.iters}")
    if cfg.burnin is not None and not 0 <= cfg.burnin < cfg.iters:
        raise ConfigError(f"burnin: expected 0 <= burnin < iters={cfg.iters}, got {cfg.burnin}")
    if cfg.chains < 1:
        raise ConfigError(f"chains: expected a positive integer, got {cfg.chains}")
    try:
        check_seed(cfg.seed)
    except ValueError as exc:
        raise ConfigError(f"seed: {exc}") from None
    if cfg.T is not None and cfg.T < 1:
        raise ConfigError(f"T: expected a positive integer, got {cfg.T}")
    if cfg.N is not None and cfg.N < 1:
        raise ConfigError(f"N: expected a positive integer, got {cfg.N}")
    if isinstance(cfg.ell, float) and cfg.ell <= 0:
        raise ConfigError(f"ell: expected a positive real or 'auto', got {cfg.ell}")
    if cfg.model_kind == "lptn":
        try:
            lptn_constants(cfg.rho)
        except ValueError as exc:
            raise ConfigError(f"rho: {exc}") from None
    if cfg.model_kind == "normal" and "rho" in given:
        raise ConfigError("rho: only used with model_kind = lptn")
    return cfg


def read_config(path, seed_override=None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config_text(text, seed_override)


def config_to_text(cfg: RunConfig) -> str:
    """Inverse of :func:`parse_config_text`, writing only keys that apply to the sampler."""
    skip = set()
    if cfg.model_kind == "normal":
        skip.add("rho")
    if cfg.sampler not in ANNEALED:
        skip.add("ell")
    if cfg.sampler != "improved":
        skip.add("combiner")
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if v is not None and f.name not in skip:
            lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"


# run


def _reference_pmf(cfg: RunConfig, data):
    if cfg.reference == "none":
        return None
    if cfg.reference == "auto":
        if cfg.model_kind == "normal" and data.p_pred <= ENUMERATION_LIMIT:
            return exact_model_pmf_normal(data)
        return None
    try:
        return ModelPmf.read(cfg.reference)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read reference PMF {cfg.reference}: {exc}") from None


def merge_traces(traces, burnin) -> dict:
    """Pool rates and post-burn-in visits over chains."""
    proposed = sum(int(np.sum(t.switch)) for t in traces)
    accepted = sum(int(np.sum(np.asarray(t.switch) & np.asarray(t.accepted))) for t in traces)
    models = np.concatenate([t.model_array()[burnin:] for t in traces])
    total_iters = sum(len(t) for t in traces)
    return {"switch_acc_rate": accepted / proposed if proposed else None,
            "visit_rate": accepted / total_iters,
            "pmf": empirical_model_pmf(models, 0)}


def cmd_run(config_path, data_path, out_dir, seed=None) -> int:
    cfg = read_config(config_path, seed)
    data = load_csv(data_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reference = _reference_pmf(cfg, data)
    cache = ModelInfoCache(data, cfg.model_kind, cfg.rho)
    ell = cfg.ell
    search = None
    if ell == "auto":
        search = tune_ell(cfg.sampler_spec(), cache, cfg.seed)
        ell = search.best
        log.info("MALA scale line search: %s -> ell=%s", search.rates, ell)
    spec = cfg.sampler_spec(ell)

    def one_chain(chain):
        t0 = time.perf_counter()
        trace = run_chain(spec, cache, cfg.iters, cfg.seed, chain=chain)
        return trace, time.perf_counter() - t0

    t0 = time.perf_counter()
    workers = min(cfg.chains, os.cpu_count() or 1)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(one_chain, range(cfg.chains)))
    wall = time.perf_counter() - t0
    traces = [t for t, _ in results]
    per_chain = []
    for chain, (trace, secs) in enumerate(results):
        write_trace(trace, out / f"chain_{chain}.trace")
        per_chain.append({"chain": chain, "switch_acc_rate": switch_acceptance_rate(trace),
                          "visit_rate": visit_rate(trace), "wall_time": secs})
    merged = merge_traces(traces, cfg.effective_burnin)
    pmf = merged["pmf"]
    summary = RunSummary(
        switch_acc_rate=merged["switch_acc_rate"], visit_rate=merged["visit_rate"],
        empirical_pmf=pmf.as_dict(), iters=cfg.iters, burnin=cfg.effective_burnin,
        seed=cfg.seed, wall_time=wall,
        tv_to_reference=tv_distance(pmf, reference) if reference is not None else None,
        sampler=cfg.sampler if cfg.h is None else f"{cfg.sampler}-{cfg.h}",
        label=Path(config_path).stem,
        extra={"chains": per_chain, "ell": ell if cfg.sampler in ANNEALED else None,
               "ell_search": None if search is None else {str(k): v for k, v in search.rates.items()},
               "models_cached": len(cache), "model_kind": cfg.model_kind})
    summary.write(out / "summary.json")
    pmf.write(out / "empirical_pmf.txt")
    (out / "config.txt").write_text(config_to_text(cfg))
    log.info("wrote %d chain(s) to %s", cfg.chains, out)
    return EXIT_OK


# enumerate


def cmd_enumerate(data_path, model_kind, out_path, budget=100_000, seed=0, rho=0.95) -> int:
    if model_kind not in MODEL_KINDS:
        raise ConfigError(f"model_kind: expected one of {', '.join(MODEL_KINDS)}, got {model_kind!r}")
    if model_kind == "lptn":
        try:
            lptn_constants(rho)
        except ValueError as exc:
            raise ConfigError(f"rho: {exc}") from None
        if budget < 10_000:
            raise ConfigError(f"budget: expected at least 10000 draws per model, got {budget}")
    data = load_csv(data_path)
    if model_kind == "normal":
        pmf = exact_model_pmf_normal(data)
    else:
        pmf = golden_model_pmf(data, "lptn", budget=budget, seed=seed, rho=rho).pmf
    pmf.write(out_path)
    return EXIT_OK


# compare


@dataclass(frozen=True)
class CompareRow:
    label: str
    switch_acc_rate: float | None
    visit_rate: float
    tv: float
    rel_increase: float


def compare_summaries(summaries, labels, reference: ModelPmf) -> list[CompareRow]:
    if len(summaries) < 2:
        raise ConfigError("compare needs at least two summaries")
    universe = set(int(m) for m in reference.models)
    tvs = []
    for s, label in zip(summaries, labels):
        extra = set(s.empirical_pmf) - universe
        if extra:
            raise DataError(f"{label}: models {sorted(extra)[:5]} are outside the reference support")
        tvs.append(tv_distance(s.pmf(), reference))
    best = min(tvs)
    rows = [CompareRow(label, s.switch_acc_rate, s.visit_rate, tv,
                       (tv - best) / best if best > 0 else (0.0 if tv == best else math.inf))
            for s, label, tv in zip(summaries, labels, tvs)]
    return sorted(rows, key=lambda r: (r.tv, r.label))


def format_compare(rows) -> str:
    def f(v):
        return "NA" if v is None else f"{v:.6g}"

    lines = ["label\tswitch_acc_rate\tvisit_rate\ttv\trel_tv_increase"]
    lines += [f"{r.label}\t{f(r.switch_acc_rate)}\t{f(r.visit_rate)}\t{f(r.tv)}\t{f(r.rel_increase)}"
              for r in rows]
    return "\n".join(lines) + "\n"


def _summary_label(path: Path, summary: RunSummary, seen: set) -> str:
    label = summary.label or path.parent.name or path.stem
    if label in seen:
        label = str(path)
    seen.add(label)
    return label


def cmd_compare(summary_paths, reference_path, out_path) -> int:
    summaries, labels, seen = [], [], set()
    for p in map(Path, summary_paths):
        try:
            s = RunSummary.read(p)
        except (OSError, ValueError, TypeError, KeyError) as exc:
            raise DataError(f"cannot read summary {p}: {exc}") from None
        summaries.append(s)
        labels.append(_summary_label(p, s, seen))
    try:
        reference = ModelPmf.read(reference_path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read reference PMF {reference_path}: {exc}") from None
    table = format_compare(compare_summaries(summaries, labels, reference))
    if out_path:
        Path(out_path).write_text(table)
    else:
        sys.stdout.write(table)
    return EXIT_OK


# gen-data


GEN_KINDS = ("analog", "linear", "noise", "prostate")


def cmd_gen_data(out_path, kind="analog", n=None, p_pred=None, seed=0, outlier=False,
                 noise_sd=1.0) -> int:
    if kind == "prostate":
        X, y, names = prostate_arrays()
        write_csv(out_path, X, y, names, response="lpsa")
        return EXIT_OK
    if kind == "analog":
        if p_pred not in (None, 8):
            raise ConfigError("p-pred: the analog layout has 8 predictors")
        ds = prostate_analog(seed, n or 97)
        X, y, names = ds.C[:, 1:], ds.y, ds.names
    else:
        n = n or 100
        p_pred = 4 if p_pred is None else p_pred
        coef = np.zeros(p_pred)
        if kind == "linear":
            coef = 0.5 ** np.arange(1, p_pred + 1)
        X, y = synthetic_arrays(n, p_pred, coef, seed, noise_sd=noise_sd)
        names = [f"x{j + 1}" for j in range(p_pred)]
    if outlier:
        X, y = add_outlier(X, y)
    write_csv(out_path, X, y, names)
    return EXIT_OK


# argument parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="informed-rj", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run the configured sampler")
    run.add_argument("--config", required=True)
    run.add_argument("--data", required=True, help="CSV: response first, then predictors")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--seed", type=int, help="overrides the config seed")

    enum = sub.add_parser("enumerate", help="reference model PMF by enumeration")
    enum.add_argument("--data", required=True)
    enum.add_argument("--out", required=True)
    enum.add_argument("--model-kind", default="normal", choices=MODEL_KINDS)
    enum.add_argument("--budget", type=int, default=100_000, help="importance draws per model (lptn)")
    enum.add_argument("--rho", type=float, default=0.95)
    enum.add_argument("--seed", type=int, default=0)

    cmp_ = sub.add_parser("compare", help="tabulate rates and TV of several runs")
    cmp_.add_argument("summaries", nargs="+", help="summary.json files")
    cmp_.add_argument("--reference", required=True, help="model PMF file")
    cmp_.add_argument("--out", help="output table (stdout if omitted)")

    gen = sub.add_parser("gen-data", help="write a synthetic (or the prostate) dataset as CSV")
    gen.add_argument("--out", required=True)
    gen.add_argument("--kind", default="analog", choices=GEN_KINDS)
    gen.add_argument("--n", type=int)
    gen.add_argument("--p-pred", type=int)
    gen.add_argument("--noise-sd", type=float, default=1.0)
    gen.add_argument("--outlier", action="store_true", help="move one response far above the range")
    gen.add_argument("--seed", type=int, default=0)
    return parser


def dispatch(args) -> int:
    if args.command == "run":
        return cmd_run(args.config, args.data, args.out, args.seed)
    if args.command == "enumerate":
        return cmd_enumerate(args.data, args.model_kind, args.out, args.budget, args.seed, args.rho)
    if args.command == "compare":
        return cmd_compare(args.summaries, args.reference, args.out)
    return cmd_gen_data(args.out, args.kind, args.n, args.p_pred, args.seed, args.outlier,
                        args.noise_sd)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, DataUnavailable, EnumerationLimitError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FileNotFoundError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except LowEssError as exc:
        print(f"reference oracle refused: {exc}", file=sys.stderr)
        return EXIT_ESS
    except (MapConvergenceError, FloatingPointError, RuntimeError, ValueError, np.linalg.LinAlgError,
            OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
