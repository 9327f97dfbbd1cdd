"""Synthetic benchmark: factorial data generation, windowed matching and metrics.

Datasets have piecewise-constant intercepts alternating between 0 and ``delta``
plus scaled t noise. Detections are matched to true changes inside a window
on standardized time, closest pairs first. Results are written one row per
(dataset, model) so interrupted runs can resume from the partial file.
"""

from __future__ import annotations

import csv
import hashlib
import itertools
import logging
import math
import os
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .chain import (
    StatePath,
    TimeGrid,
    make_rng,
    sample_discrete_changepoints,
    sample_segment_lengths,
)
from .config import RunConfig
from .errors import InvalidInputError
from .inference import detect

log = logging.getLogger(__name__)

TIME_DISTS = ("uniform_grid", "beta_half", "beta_two")
SIGMA2_LEVELS = (0.1, 0.2, 0.3)
NU_LEVELS = (3, 10, 100)
DELTA_LEVELS = (0.1, 0.3, 0.5, 0.7, 0.9, 1.1)
K_LEVELS = (1, 2, 3, 4)
DEFAULT_WINDOW = 0.0225
DAYS_PER_YEAR = 365.0

# intercept-only fits, as in the synthetic protocol
_BASE = RunConfig(H=0, trend=False, contrasts=False)
MODELS = {
    "bpp_robust": _BASE,
    "bpp_gaussian": _BASE.replace(likelihood="gaussian"),
    "bpp_equal_volume_prior": _BASE.replace(prior_variant="equal_volume"),
    "discrete_noninformative": _BASE.replace(chain="discrete"),
}

RESULT_FIELDS = [
    "setting_id", "time_dist", "sigma2", "nu", "delta", "k_true", "n_obs", "span_years",
    "model", "replicate", "TP", "FP", "FN", "TPR", "FPR", "commission", "omission", "F1",
    "wall_seconds",
]


@dataclass(frozen=True)
class FactorialSetting:
    """One cell of the factorial design.

    Levels outside the published grid are accepted so that small desk-scale
    runs can shrink ``n_obs`` or use other noise levels.
    """

    time_dist: str = "uniform_grid"
    sigma2: float = 0.1
    nu: float = 3
    delta: float = 0.5
    k_true: int = 1
    n_obs: int = 500
    span_years: float = 20
    replicate: int = 0

    def __post_init__(self):
        if self.time_dist not in TIME_DISTS:
            raise InvalidInputError(f"time_dist must be one of {TIME_DISTS}")
        if not self.sigma2 > 0 or not self.nu > 0 or not self.span_years > 0:
            raise InvalidInputError("sigma2, nu and span_years must be positive")
        if not (1 <= self.k_true <= self.n_obs):
            raise InvalidInputError("need 1 <= k_true <= n_obs")
        if self.n_obs < 2:
            raise InvalidInputError("need at least two observations")

    @property
    def setting_id(self) -> str:
        return (f"{self.time_dist}_s{self.sigma2:g}_nu{self.nu:g}_d{self.delta:g}"
                f"_k{self.k_true}_n{self.n_obs}")

    @property
    def dataset_id(self) -> str:
        return f"{self.setting_id}_r{self.replicate}"

    def with_replicate(self, r: int) -> "FactorialSetting":
        return FactorialSetting(**{**asdict(self), "replicate": r})

    def columns(self) -> dict:
        d = asdict(self)
        d.pop("replicate")
        return d


def full_grid(n_obs: int = 500, span_years: float = 20) -> list[FactorialSetting]:
    """All 648 published factorial cells (replicate 0)."""
    return [
        FactorialSetting(td, s2, nu, d, k, n_obs, span_years)
        for td, s2, nu, d, k in itertools.product(
            TIME_DISTS, SIGMA2_LEVELS, NU_LEVELS, DELTA_LEVELS, K_LEVELS)
    ]


@dataclass(frozen=True)
class SyntheticDataset:
    grid: TimeGrid
    y: np.ndarray
    true_change_times: list
    true_path: StatePath
    setting: FactorialSetting
    seed: int
    raw_days: np.ndarray = None


def derive_seed(global_seed: int, setting_id: str, replicate: int) -> int:
    """64-bit dataset seed from a SHA-256 digest of the run seed, setting and replicate."""
    key = f"{int(global_seed)}|{setting_id}|{int(replicate)}".encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little")


def _raw_days(setting: FactorialSetting, rng) -> np.ndarray:
    N = setting.n_obs
    span = setting.span_years * DAYS_PER_YEAR
    if setting.time_dist == "uniform_grid":
        return np.arange(N) * (span / N)
    a = 0.5 if setting.time_dist == "beta_half" else 2.0
    while True:
        d = np.sort(rng.beta(a, a, N)) * span
        if np.all(np.diff(d) > 0):
            return d


def generate_dataset(setting: FactorialSetting, seed: int) -> SyntheticDataset:
    """Draw times, a change configuration and a noisy piecewise-constant series."""
    rng = make_rng(seed)
    days = _raw_days(setting, rng)
    grid = TimeGrid.from_raw(days)
    k, n = setting.k_true, grid.n
    if setting.time_dist == "uniform_grid":
        if k - 1 > n:
            raise InvalidInputError("more changes than grid steps")
        cps = np.asarray(sample_discrete_changepoints(n, k, rng), dtype=np.int64)
        states = 1 + np.searchsorted(cps, np.arange(n + 1), side="right")
    else:
        while True:
            states = sample_segment_lengths(k, rng).states_at(grid.times).states
            if np.unique(states).size == k:
                break
    path = StatePath(states)
    mean = np.where((path.states - 1) % 2 == 1, float(setting.delta), 0.0)
    noise = math.sqrt(setting.sigma2) * rng.standard_t(setting.nu, size=n + 1)
    y = mean + noise
    change_times = [float(grid.times[i]) for i in path.change_indices()]
    return SyntheticDataset(grid, y, change_times, path, setting, seed, days)


# --------------------------------------------------------------------------
# matching and metrics

class MatchResult(NamedTuple):
    TP: int
    FP: int
    FN: int
    pairs: list
    false_positives: list


def match_changes(true_times: Sequence[float], detected_times: Sequence[float],
                  window: float = DEFAULT_WINDOW) -> MatchResult:
    """Match detections to true changes within ``window``, closest pairs first.

    When two detections fall near one truth the closer one is the hit and the
    other counts as a false positive.
    """
    if window < 0:
        raise InvalidInputError("window must be nonnegative")
    T = np.asarray(sorted(true_times), dtype=float)
    D = np.asarray(sorted(detected_times), dtype=float)
    cand = [
        (abs(d - t), a, b)
        for a, t in enumerate(T)
        for b, d in enumerate(D)
        if abs(d - t) <= window
    ]
    cand.sort()
    used_t, used_d, pairs = set(), set(), []
    for _, a, b in cand:
        if a in used_t or b in used_d:
            continue
        used_t.add(a)
        used_d.add(b)
        pairs.append((float(T[a]), float(D[b])))
    pairs.sort()
    fps = [float(D[b]) for b in range(D.size) if b not in used_d]
    tp = len(pairs)
    return MatchResult(tp, int(D.size) - tp, int(T.size) - tp, pairs, fps)


def fpr_bins(true_times, false_positives, window: float = DEFAULT_WINDOW):
    """``(bins with a false positive, bins with no true change)`` over a ``window`` tiling of [0, 1].

    Only bins free of true changes enter the numerator, so the ratio is a rate.
    """
    if not window > 0:
        raise InvalidInputError("window must be positive")
    nb = int(math.ceil(1.0 / window))

    def idx(ts):
        return {min(int(t // window), nb - 1) for t in ts}

    pos = idx(true_times)
    fp = idx(false_positives) - pos
    return len(fp), nb - len(pos)


def _ratio(a, b):
    return None if b == 0 else a / b


@dataclass
class MetricRow:
    setting_id: str
    TP: int
    FP: int
    FN: int
    TPR: float | None
    FPR: float | None
    commission: float | None
    omission: float | None
    F1: float | None
    model: str = ""
    replicate: int = -1
    wall_seconds: float = 0.0
    fp_bins: int = 0
    negative_bins: int = 0


def compute_metrics(counts, n_negative_bins: int, n_fp_bins: int = 0,
                    setting_id: str = "", model: str = "", replicate: int = -1,
                    wall_seconds: float = 0.0) -> MetricRow:
    """Rates from match counts; undefined ratios are ``None``."""
    tp, fp, fn = int(counts[0]), int(counts[1]), int(counts[2])
    if min(tp, fp, fn, n_negative_bins, n_fp_bins) < 0:
        raise InvalidInputError("counts must be nonnegative")
    return MetricRow(
        setting_id=setting_id,
        TP=tp, FP=fp, FN=fn,
        TPR=_ratio(tp, tp + fn),
        FPR=0.0 if fp == 0 else _ratio(n_fp_bins, n_negative_bins),
        commission=_ratio(fp, tp + fp),
        omission=_ratio(fn, tp + fn),
        F1=_ratio(2 * tp, 2 * tp + fp + fn),
        model=model, replicate=replicate, wall_seconds=wall_seconds,
        fp_bins=n_fp_bins, negative_bins=n_negative_bins,
    )


# --------------------------------------------------------------------------
# runner

def detect_changes(model: str, data: SyntheticDataset, K_max: int = 6) -> list[float]:
    """Standardized change times reported by one of the built-in models."""
    if model not in MODELS:
        raise InvalidInputError(f"unknown model {model!r}; choose from {sorted(MODELS)}")
    cfg = MODELS[model].replace(K_max=K_max)
    report = detect(data.y, data.raw_days, cfg)
    return [c.std_time for c in report.change_times]


def _evaluate(setting, model, seed, K_max, window, external):
    data = generate_dataset(setting, derive_seed(seed, setting.setting_id, setting.replicate))
    start = time.perf_counter()
    if model in MODELS:
        found = detect_changes(model, data, K_max)
    else:
        found = external.get(model, {}).get(setting.dataset_id, [])
    wall = time.perf_counter() - start
    m = match_changes(data.true_change_times, found, window)
    fpb, negb = fpr_bins(data.true_change_times, m.false_positives, window)
    return compute_metrics(m, negb, fpb, setting.setting_id, model, setting.replicate, wall)


def _row_dict(setting: FactorialSetting, row: MetricRow) -> dict:
    out = {"setting_id": setting.setting_id, **setting.columns(), "model": row.model,
           "replicate": row.replicate, "TP": row.TP, "FP": row.FP, "FN": row.FN}
    for key in ("TPR", "FPR", "commission", "omission", "F1"):
        v = getattr(row, key)
        out[key] = "" if v is None else repr(float(v))
    out["wall_seconds"] = f"{row.wall_seconds:.6f}"
    return out


def _key(d: Mapping) -> tuple:
    return (str(d["setting_id"]), str(d["model"]), int(d["replicate"]))


def read_external_detections(path) -> dict:
    """``{dataset_id: [standardized change times]}`` from a ``dataset_id,change_time`` CSV."""
    out: dict = {}
    with open(path, newline="") as fh:
        rows = csv.DictReader(line for line in fh if not line.startswith("#"))
        if rows.fieldnames is None or not {"dataset_id", "change_time"} <= set(rows.fieldnames):
            raise InvalidInputError(f"{path}: header must contain dataset_id,change_time")
        for lineno, r in enumerate(rows, start=2):
            try:
                t = float(r["change_time"])
            except (TypeError, ValueError) as exc:
                raise InvalidInputError(f"{path}: bad change_time on line {lineno}") from exc
            out.setdefault(r["dataset_id"], []).append(t)
    return out


def read_results(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _write_sorted(path: Path, rows: list[dict]) -> None:
    rows = sorted(rows, key=_key)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w", newline="") as fh:
        w = csv.DictWriter(fh, RESULT_FIELDS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    os.replace(tmp, path)


def run_factorial(
    settings: Iterable[FactorialSetting],
    replicates: int = 1,
    models: Sequence[str] = ("bpp_robust",),
    seed: int = 0,
    jobs: int = 1,
    results_path=None,
    resume: bool = False,
    external: Mapping[str, Mapping[str, list]] | None = None,
    window: float = DEFAULT_WINDOW,
    K_max: int = 6,
) -> list[dict]:
    """Evaluate every (setting, replicate, model) and return sorted result rows.

    ``external`` maps a model name to ``{dataset_id: change times}`` for
    detections produced elsewhere. With ``results_path`` each finished row is
    appended immediately; ``resume`` skips rows already present there.
    """
    external = dict(external or {})
    for m in models:
        if m not in MODELS and m not in external:
            raise InvalidInputError(f"unknown model {m!r}")
    if replicates < 1 or jobs < 1:
        raise InvalidInputError("replicates and jobs must be >= 1")
    settings = list(settings)

    done: dict = {}
    path = Path(results_path) if results_path is not None else None
    if path is not None and resume and path.exists():
        for r in read_results(path):
            done[_key(r)] = r
    tasks = []
    for s in settings:
        for rep in range(replicates):
            sr = s.with_replicate(rep)
            for m in models:
                if (sr.setting_id, m, rep) not in done:
                    tasks.append((sr, m))

    rows = dict(done)
    fh = writer = None
    if path is not None:
        fresh = not (resume and path.exists())
        fh = open(path, "w" if fresh else "a", newline="")
        writer = csv.DictWriter(fh, RESULT_FIELDS, lineterminator="\n")
        if fresh:
            writer.writeheader()
            fh.flush()

    def record(sr, row):
        d = _row_dict(sr, row)
        rows[_key(d)] = d
        if writer is not None:
            writer.writerow(d)
            fh.flush()

    try:
        if jobs == 1 or len(tasks) <= 1:
            for sr, m in tasks:
                record(sr, _evaluate(sr, m, seed, K_max, window, external))
        else:
            with ProcessPoolExecutor(max_workers=jobs) as ex:
                futs = [(sr, ex.submit(_evaluate, sr, m, seed, K_max, window, external))
                        for sr, m in tasks]
                for sr, f in futs:
                    record(sr, f.result())
    finally:
        if fh is not None:
            fh.close()
    if path is not None:
        _write_sorted(path, list(rows.values()))
    log.info("factorial run: %d new rows, %d reused", len(tasks), len(done))
    return sorted(rows.values(), key=_key)


def aggregate(rows: Iterable[Mapping], by: Sequence[str] = ("setting_id", "model")) -> list[dict]:
    """Pool counts over replicates and recompute rates for each group.

    The false-positive rate is not pooled here since bin counts are not kept
    in the results table; it is averaged over replicates where defined.
    """
    groups: dict = {}
    for r in rows:
        key = tuple(str(r[b]) for b in by)
        g = groups.setdefault(key, {"TP": 0, "FP": 0, "FN": 0, "fpr": [], "n": 0})
        for c in ("TP", "FP", "FN"):
            g[c] += int(r[c])
        if r.get("FPR") not in ("", None):
            g["fpr"].append(float(r["FPR"]))
        g["n"] += 1
    out = []
    for key in sorted(groups):
        g = groups[key]
        m = compute_metrics((g["TP"], g["FP"], g["FN"]), 0)
        d = dict(zip(by, key))
        d.update(replicates=g["n"], TP=g["TP"], FP=g["FP"], FN=g["FN"], TPR=m.TPR,
                 FPR=float(np.mean(g["fpr"])) if g["fpr"] else None,
                 commission=m.commission, omission=m.omission, F1=m.F1)
        out.append(d)
    return out


# --------------------------------------------------------------------------
# NDVI-like demonstration series

def ndvi_like_series(seed: int = 0, years: int = 12, step_year: float = 6.3,
                     step: float = -0.15, scale: float = 0.03, nu: float = 3.0,
                     revisit_days: int = 16, keep: float = 0.7):
    """Seasonal vegetation-index-like series with one abrupt level drop.

    Returns ``(dates, values, change_date)``. Observations come on a
    ``revisit_days`` cycle with a random fraction dropped as if clouded.
    """
    import datetime as dt

    rng = make_rng(seed)
    start = dt.date(2000, 1, 1)
    days = np.arange(0, int(years * DAYS_PER_YEAR), revisit_days)
    days = days[rng.random(days.size) < keep]
    w = 2.0 * math.pi * days / DAYS_PER_YEAR
    mean = 0.45 + 0.15 * np.sin(w - 1.2) + 0.04 * np.cos(2 * w) + 0.002 * days / DAYS_PER_YEAR
    change_day = step_year * DAYS_PER_YEAR
    mean = mean + np.where(days >= change_day, step, 0.0)
    y = mean + scale * rng.standard_t(nu, size=days.size)
    dates = [start + dt.timedelta(days=int(d)) for d in days]
    return dates, np.clip(y, -1.0, 1.0), start + dt.timedelta(days=int(math.ceil(change_day)))


__all__ = [
    "FactorialSetting", "SyntheticDataset", "MetricRow", "MatchResult", "MODELS",
    "generate_dataset", "match_changes", "compute_metrics", "fpr_bins", "run_factorial",
    "aggregate", "derive_seed", "full_grid", "read_external_detections", "ndvi_like_series",
]
