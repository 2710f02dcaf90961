"""Run metrics, the on-the-fly ModelInfo cache, and trace/summary serialization."""

from __future__ import annotations

import json
import math
import threading
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .laplace import ModelInfo, build_model_info, model_proposal_pmf
from .model_space import check_model, format_model, n_columns
from .regression import Dataset, kernel_args
from .rng import derived_seed


class ModelInfoCache:
    """Per-model quantities computed on first use and never mutated afterwards.

    Entries depend only on ``(model_kind, k, data, rho)``; HMC tunings are
    cached separately and depend on ``hmc_config`` too. Failed computations
    are not stored, so a later lookup retries.
    """

    def __init__(self, data: Dataset, model_kind="normal", rho=0.95, hmc_config=None):
        kernel_args(model_kind, rho)  # validates both
        self.data = data
        self.model_kind = model_kind
        self.rho = rho
        self.hmc_config = dict(hmc_config or {})
        self._entries: dict[int, ModelInfo] = {}
        self._tunings: dict = {}
        self._proposals: dict = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0
        self.compute_time = 0.0

    @property
    def p_pred(self) -> int:
        return self.data.p_pred

    def __len__(self):
        return len(self._entries)

    def __contains__(self, k):
        return k in self._entries

    def keys(self):
        return sorted(self._entries)

    def get(self, k) -> ModelInfo:
        info = self._entries.get(k)
        if info is not None:
            self.hits += 1
            return info
        check_model(k, self.p_pred)
        t0 = time.perf_counter()
        info = build_model_info(self.model_kind, k, self.data, self.rho)
        with self._lock:
            self.misses += 1
            self.compute_time += time.perf_counter() - t0
            # a concurrent duplicate is identical; keep whichever landed first
            return self._entries.setdefault(k, info)

    def proposal(self, k, h):
        key = (k, h)
        pmf = self._proposals.get(key)
        if pmf is None:
            pmf = model_proposal_pmf(k, h, self)
            with self._lock:
                pmf = self._proposals.setdefault(key, pmf)
        return pmf

    def tuning_seed(self, k) -> int:
        return derived_seed("hmc", self.model_kind, self.rho, k, self.data.digest,
                            sorted(self.hmc_config.items()))

    def hmc_tuning(self, k):
        tuning = self._tunings.get(k)
        if tuning is None:
            from .samplers.hmc import hmc_autotune

            info = self.get(k)
            rng = np.random.Generator(np.random.Philox(self.tuning_seed(k)))
            start_var = np.diag(info.inv_chol @ info.inv_chol.T)
            t0 = time.perf_counter()
            tuning = hmc_autotune(info, info.map, start_var, rng, **self.hmc_config)
            with self._lock:
                self.compute_time += time.perf_counter() - t0
                tuning = self._tunings.setdefault(k, tuning)
        return tuning

    def stats(self) -> dict:
        return {"entries": len(self._entries), "hits": self.hits, "misses": self.misses,
                "hmc_tunings": len(self._tunings), "compute_time": self.compute_time}


def ess_scalar(series) -> float:
    """Effective sample size by Geyer's initial positive sequence.

    Negatively correlated series can exceed their length; the value is not capped.
    """
    x = np.asarray(series, dtype=float)
    n = x.shape[0]
    if n < 4:
        raise ValueError("need at least 4 values for an ESS estimate")
    x = x - x.mean()
    var = float(x @ x) / n
    if var == 0.0:
        return float(n)
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n] / n
    rho = acov / acov[0]
    # sums of adjacent pairs are positive and decreasing for reversible chains
    total = 0.0
    prev = math.inf
    for t in range(0, n - 1, 2):
        pair = rho[t] + rho[t + 1]
        if pair <= 0:
            break
        pair = min(pair, prev)
        total += pair
        prev = pair
    # antithetic series drive tau toward zero or below; bound it as Stan does,
    # which caps the ESS at n log10(n) rather than at n
    tau = max(2.0 * total - 1.0, 1.0 / math.log10(n))
    return float(n / tau)


@dataclass(frozen=True, eq=False)
class TraceRecord:
    iter: int
    move: str          # "param_update" or "model_switch"
    proposed_k: int
    accepted: bool
    k: int
    x: np.ndarray
    log_alpha: float


MOVES = ("param_update", "model_switch")


class Trace:
    """Column store of per-iteration records."""

    def __init__(self):
        self.proposed: list[int] = []
        self.switch: list[bool] = []
        self.accepted: list[bool] = []
        self.models: list[int] = []
        self.params: list[np.ndarray] = []
        self.log_alpha: list[float] = []

    def append(self, rec: TraceRecord):
        if rec.move not in MOVES:
            raise ValueError(f"unknown move {rec.move!r}")
        if rec.move == "param_update" and rec.proposed_k != rec.k:
            raise ValueError("parameter updates keep the model fixed")
        if rec.move == "model_switch" and rec.accepted and rec.proposed_k != rec.k:
            raise ValueError("an accepted switch must land in the proposed model")
        self.proposed.append(rec.proposed_k)
        self.switch.append(rec.move == "model_switch")
        self.accepted.append(bool(rec.accepted))
        self.models.append(rec.k)
        self.params.append(rec.x)
        self.log_alpha.append(float(rec.log_alpha))

    def __len__(self):
        return len(self.models)

    def __getitem__(self, i) -> TraceRecord:
        return TraceRecord(i, MOVES[self.switch[i]], self.proposed[i], self.accepted[i],
                           self.models[i], self.params[i], self.log_alpha[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def model_array(self):
        return np.asarray(self.models, dtype=np.int64)

    def params_of(self, k, start=0):
        """Parameter draws (rows) recorded while in model ``k``."""
        rows = [p for m, p in zip(self.models[start:], self.params[start:]) if m == k]
        return np.asarray(rows).reshape(len(rows), n_columns(k) + 1)


def switch_acceptance_rate(trace: Trace):
    """Accepted over proposed model switches; ``None`` when nothing was proposed."""
    sw = np.asarray(trace.switch, dtype=bool)
    if len(sw) == 0:
        raise ValueError("empty trace")
    if not sw.any():
        return None
    return float(np.asarray(trace.accepted, dtype=bool)[sw].mean())


def visit_rate(trace: Trace) -> float:
    """Accepted model switches per iteration."""
    sw = np.asarray(trace.switch, dtype=bool)
    if len(sw) == 0:
        raise ValueError("empty trace")
    return float(np.sum(sw & np.asarray(trace.accepted, dtype=bool)) / len(sw))


def default_burnin(iters: int) -> int:
    return iters // 10


def empirical_model_pmf(trace, burnin=None):
    """Visit frequencies of models after ``burnin`` iterations."""
    from .oracle import ModelPmf

    models = trace.model_array() if isinstance(trace, Trace) else np.asarray(trace, dtype=np.int64)
    if burnin is None:
        burnin = default_burnin(len(models))
    if not 0 <= burnin < len(models):
        raise ValueError(f"burnin={burnin} must be below the trace length {len(models)}")
    keys, counts = np.unique(models[burnin:], return_counts=True)
    return ModelPmf(keys, counts / counts.sum(), "empirical")


# trace files: one "key=value" record per line


def _fmt_float(v: float) -> str:
    return repr(float(v)) if math.isfinite(v) else str(float(v))


def format_record(rec: TraceRecord) -> str:
    params = ",".join(f"{v:.17g}" for v in rec.x)
    return (f"iter={rec.iter} move={rec.move} proposed={format_model(rec.proposed_k)} "
            f"accepted={int(rec.accepted)} model={format_model(rec.k)} "
            f"log_alpha={rec.log_alpha:.17g} x={params}")


def write_trace(trace: Trace, path):
    with open(path, "w") as fh:
        for rec in trace:
            fh.write(format_record(rec))
            fh.write("\n")


def parse_record(line: str) -> TraceRecord:
    fields = {}
    rest = line.strip()
    while rest:
        key, _, rest = rest.partition("=")
        key = key.strip()
        if key in ("proposed", "model"):
            bits, _, rest = rest.partition(" ")
            label_end = rest.index('"', 1) + 1
            rest = rest[label_end:].lstrip()
            fields[key] = int(bits)
        else:
            value, _, rest = rest.partition(" ")
            fields[key] = value
    x = fields.get("x", "")
    params = np.array([float(v) for v in x.split(",")]) if x else np.empty(0)
    return TraceRecord(int(fields["iter"]), fields["move"], fields["proposed"],
                       bool(int(fields["accepted"])), fields["model"], params,
                       float(fields["log_alpha"]))


def read_trace(path) -> Trace:
    trace = Trace()
    with open(path) as fh:
        for line in fh:
            if line.strip():
                trace.append(parse_record(line))
    return trace


@dataclass
class RunSummary:
    switch_acc_rate: float | None
    visit_rate: float
    empirical_pmf: dict
    iters: int
    burnin: int
    seed: int
    wall_time: float
    tv_to_reference: float | None = None
    sampler: str = ""
    label: str = ""
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        d["empirical_pmf"] = {str(k): v for k, v in sorted(self.empirical_pmf.items())}
        return json.dumps(d, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunSummary":
        d = json.loads(text)
        d["empirical_pmf"] = {int(k): float(v) for k, v in d["empirical_pmf"].items()}
        return cls(**d)

    def write(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_json())
            fh.write("\n")

    @classmethod
    def read(cls, path) -> "RunSummary":
        with open(path) as fh:
            return cls.from_json(fh.read())

    def pmf(self):
        from .oracle import ModelPmf

        return ModelPmf.from_dict(self.empirical_pmf, "empirical")


def summarize(trace: Trace, *, seed, wall_time, burnin=None, reference=None, sampler="",
              label="", extra=None) -> RunSummary:
    from .oracle import tv_distance

    if burnin is None:
        burnin = default_burnin(len(trace))
    pmf = empirical_model_pmf(trace, burnin)
    tv = tv_distance(pmf, reference) if reference is not None else None
    return RunSummary(switch_acc_rate=switch_acceptance_rate(trace), visit_rate=visit_rate(trace),
                      empirical_pmf=pmf.as_dict(), iters=len(trace), burnin=burnin, seed=seed,
                      wall_time=wall_time, tv_to_reference=tv, sampler=sampler, label=label,
                      extra=dict(extra or {}))
