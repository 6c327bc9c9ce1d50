"""Regret and NMPD metrics, model evaluation, and solver timing benchmarks."""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from fairsched.core import Assignment, GroupPartition, InvalidInputError, SizeLimitError, _matrix
from fairsched.datagen import Dataset
from fairsched.learn import MlpModel, predict_pool
from fairsched.matching import solve_assignment
from fairsched.oracle import MAX_EXACT_N, LocalSearchConfig, exact_owa_schedule, local_search_owa
from fairsched.owa import gini_weights, owa_value

SOLVERS = ("exact", "local_search", "matching")


class UndefinedMetricError(ValueError):
    """Raised when a metric is undefined for its input (e.g. NMPD of all-zero utilities)."""


def nmpd(u) -> float:
    """Normalized mean pairwise difference ``sum_ij |u_i - u_j| / (n^2 * mean(u))``."""
    u = np.asarray(u, dtype=float).ravel()
    if u.size == 0 or u.mean() <= 0:
        raise UndefinedMetricError("NMPD needs a positive mean utility")
    return float(np.abs(u[:, None] - u[None, :]).sum() / (u.size ** 2 * u.mean()))


def _group_utils(perm, y, partition):
    u = y[np.arange(y.shape[0]), perm]
    return np.bincount(partition.group_of, weights=u, minlength=len(partition)) / partition.sizes


def schedule(prefs, weights, partition: GroupPartition, solver: str,
             ls: LocalSearchConfig | None = None) -> Assignment:
    """Schedule for ``prefs`` from the named solver."""
    if solver == "matching":
        return solve_assignment(prefs)
    if solver == "exact":
        return exact_owa_schedule(prefs, weights, partition)[0]
    if solver == "local_search":
        return local_search_owa(prefs, weights, partition, ls or LocalSearchConfig(50, 5000))[0]
    raise InvalidInputError(f"unknown solver {solver!r}; expected one of {SOLVERS}")


@dataclass(frozen=True)
class RegretResult:
    raw: float
    percent: float
    reference_value: float
    achieved_value: float
    flagged: bool  # a proxy reference was beaten; raw/percent were clipped to 0


def regret_details(pred, truth, weights, partition: GroupPartition, reference: str = "exact",
                   inference: str | None = None, ls: LocalSearchConfig | None = None,
                   reference_schedule: Assignment | None = None,
                   inference_schedule: Assignment | None = None) -> RegretResult:
    """Regret of scheduling on ``pred`` instead of ``truth``, both scored under ``truth``.

    ``inference`` defaults to ``reference``. Only an exact reference
    guarantees nonnegative regret; otherwise a negative value is clipped to
    zero and flagged.
    """
    y = _matrix(truth)
    yhat = _matrix(pred)
    if y.shape != yhat.shape:
        raise InvalidInputError(f"prediction shape {yhat.shape} differs from truth {y.shape}")
    if reference == "exact" and y.shape[0] > MAX_EXACT_N:
        raise SizeLimitError(f"exact reference needs n <= {MAX_EXACT_N}, got {y.shape[0]}")
    inference = inference or reference
    ref = reference_schedule or schedule(y, weights, partition, reference, ls)
    got = inference_schedule or schedule(yhat, weights, partition, inference, ls)
    ref_value = owa_value(weights, _group_utils(ref.perm, y, partition))
    got_value = owa_value(weights, _group_utils(got.perm, y, partition))
    raw = ref_value - got_value
    flagged = False
    if raw < 0 and (reference != "exact" or inference != "exact"):
        if reference == "exact":
            raise AssertionError("exact reference was beaten; solver bug")
        raw, flagged = 0.0, True
    percent = 100.0 * raw / ref_value if ref_value > 0 else 0.0
    return RegretResult(raw, percent, ref_value, got_value, flagged)


def regret(pred, truth, weights, partition: GroupPartition, reference: str = "exact",
           ls: LocalSearchConfig | None = None) -> float:
    """``OWA(u(Pi*(Y), Y)) - OWA(u(Pi*(Yhat), Y))`` with ``Pi*`` from the reference solver."""
    y = _matrix(truth)
    yhat = _matrix(pred)
    if y.shape != yhat.shape:
        raise InvalidInputError(f"prediction shape {yhat.shape} differs from truth {y.shape}")
    if reference == "exact" and y.shape[0] > MAX_EXACT_N:
        raise SizeLimitError(f"exact reference needs n <= {MAX_EXACT_N}, got {y.shape[0]}")
    ref = schedule(y, weights, partition, reference, ls)
    got = schedule(yhat, weights, partition, reference, ls)
    return owa_value(weights, _group_utils(ref.perm, y, partition)) - owa_value(
        weights, _group_utils(got.perm, y, partition))


@dataclass(frozen=True)
class EvalConfig:
    reference: str = "auto"  # exact for n <= 9, local_search otherwise
    inference: str | None = None  # None: two_stage -> reference solver, DQ models -> matching
    ls_restarts: int = 50
    ls_max_iters: int = 5000
    seed: int = 0
    partition_attribute: str | None = None  # None: keep the dataset's groups

    def resolved_reference(self, n: int) -> str:
        if self.reference == "auto":
            return "exact" if n <= MAX_EXACT_N else "local_search"
        if self.reference not in SOLVERS:
            raise InvalidInputError(f"unknown reference solver {self.reference!r}")
        return self.reference

    def local_search(self) -> LocalSearchConfig:
        return LocalSearchConfig(self.ls_restarts, self.ls_max_iters, self.seed)


@dataclass
class EvalReport:
    model: str
    setting: str
    inference_solver: str
    reference_solver: str
    n_pools: int
    regret_pct_mean: float
    regret_pct_std: float
    regret_raw_mean: float
    nmpd_mean: float
    nmpd_std: float
    flagged: int
    seeds: list[int] = field(default_factory=list)
    runtime_s: float = 0.0
    regret_pct: list[float] = field(default_factory=list, repr=False)
    nmpd_values: list[float] = field(default_factory=list, repr=False)

    def to_dict(self, timing: bool = False) -> dict:
        d = asdict(self)
        if not timing:
            d.pop("runtime_s")
        return d


def reference_schedules(test: Dataset, cfg: EvalConfig) -> list[Assignment]:
    """Reference schedules on the true preferences; reusable across models."""
    if cfg.partition_attribute and test.metadata.get("partition_attribute") != cfg.partition_attribute:
        test = test.regroup(cfg.partition_attribute)
    reference = cfg.resolved_reference(test.n)
    out = []
    for pool in test.pools:
        partition = GroupPartition.from_labels(pool.groups)
        out.append(schedule(pool.prefs, gini_weights(len(partition)), partition, reference, cfg.local_search()))
    return out


def inference_solver_for(loss_kind: str, n: int, cfg: EvalConfig) -> str:
    if cfg.inference:
        return cfg.inference
    return cfg.resolved_reference(n) if loss_kind == "two_stage" else "matching"


def evaluate_model(model: MlpModel, test: Dataset, cfg: EvalConfig | None = None,
                   loss_kind: str = "owa_dq", name: str | None = None,
                   references: list[Assignment] | None = None, seeds=()) -> EvalReport:
    """Regret percent and group-utility NMPD of ``model`` over every test pool."""
    cfg = cfg or EvalConfig()
    if cfg.partition_attribute and test.metadata.get("partition_attribute") != cfg.partition_attribute:
        test = test.regroup(cfg.partition_attribute)
    if len(test) == 0 or test.n != model.n_slots:
        raise InvalidInputError(f"test pools of size {test.n if len(test) else 0} do not fit a "
                                f"model with {model.n_slots} slots")
    if references is not None and len(references) != len(test):
        raise InvalidInputError("one reference schedule per test pool is required")
    reference = cfg.resolved_reference(test.n)
    inference = inference_solver_for(loss_kind, test.n, cfg)
    ls = cfg.local_search()
    start = time.perf_counter()
    pct, raws, spreads, flagged = [], [], [], 0
    for k, pool in enumerate(test.pools):
        partition = GroupPartition.from_labels(pool.groups)
        weights = gini_weights(len(partition))
        yhat = predict_pool(model, pool.features)
        ref = references[k] if references is not None else None
        got = schedule(yhat, weights, partition, inference, ls)
        res = regret_details(yhat, pool.prefs, weights, partition, reference, inference, ls, ref, got)
        perm = got.perm
        pct.append(res.percent)
        raws.append(res.raw)
        flagged += res.flagged
        gu = _group_utils(perm, np.asarray(pool.prefs), partition)
        spreads.append(nmpd(gu) if gu.mean() > 0 else 0.0)
    return EvalReport(
        model=name or loss_kind,
        setting=test.metadata.get("partition_attribute", "individual"),
        inference_solver=inference,
        reference_solver=reference,
        n_pools=len(test),
        regret_pct_mean=float(np.mean(pct)),
        regret_pct_std=float(np.std(pct)),
        regret_raw_mean=float(np.mean(raws)),
        nmpd_mean=float(np.mean(spreads)),
        nmpd_std=float(np.std(spreads)),
        flagged=int(flagged),
        seeds=list(seeds),
        runtime_s=time.perf_counter() - start,
        regret_pct=[float(v) for v in pct],
        nmpd_values=[float(v) for v in spreads],
    )


_WARMUP = 2**31  # rng stream id kept apart from the timed repeats


def _random_profits(n: int, seed: int, repeat: int) -> np.ndarray:
    return np.random.default_rng([seed, n, repeat]).random((n, n))


def bench_matching(sizes=(4, 6, 8, 12, 24, 48), repeats: int = 100, seed: int = 0) -> list[dict]:
    """Wall-clock of ``solve_assignment`` on seeded random matrices; one row per call."""
    if any(n < 2 for n in sizes) or repeats < 1:
        raise InvalidInputError("sizes must be >= 2 and repeats >= 1")
    solve_assignment(_random_profits(4, seed, _WARMUP))  # compile outside the timed region
    rows = []
    for n in sizes:
        for r in range(repeats):
            a = _random_profits(n, seed, r)
            t0 = time.perf_counter()
            solve_assignment(a)
            rows.append({"n": n, "repeat": r, "micros": (time.perf_counter() - t0) * 1e6})
    return rows


def bench_exact(sizes, repeats: int = 10, seed: int = 0) -> list[dict]:
    """Wall-clock of exhaustive OWA enumeration, the stand-in for an OWA integer program."""
    rows = []
    for n in sizes:
        if n > MAX_EXACT_N:
            continue
        partition = GroupPartition.singletons(n)
        weights = gini_weights(n)
        exact_owa_schedule(_random_profits(n, seed, _WARMUP), weights, partition)  # warm the permutation cache
        for r in range(repeats):
            a = _random_profits(n, seed, r)
            t0 = time.perf_counter()
            exact_owa_schedule(a, weights, partition)
            rows.append({"n": n, "repeat": r, "micros": (time.perf_counter() - t0) * 1e6})
    return rows


def summarize_bench(rows: list[dict]) -> dict[int, dict]:
    out = {}
    for n in sorted({r["n"] for r in rows}):
        t = np.array([r["micros"] for r in rows if r["n"] == n])
        out[n] = {"mean": float(t.mean()), "p50": float(np.percentile(t, 50)), "p95": float(np.percentile(t, 95))}
    return out


def loglog_slope(summary: dict[int, dict], sizes) -> float:
    x = np.log([n for n in sizes])
    y = np.log([summary[n]["mean"] for n in sizes])
    return float(np.polyfit(x, y, 1)[0])
