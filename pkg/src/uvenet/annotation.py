"""Aggregation of subjective ratings into raw/GT quality scores.

Per video set: screen observers by their raw-video rating (2 population
standard deviations, inclusive), let each remaining observer vote for the
enhancement they scored highest, pick the winning method, then

    R_q = mean raw rating of retained observers
    S_r, S_e = mean raw / winning-method rating of the winner's voters
    delta_s = S_e - S_r
    G_q = R_q + delta_s

A set is filtered out when ``R_q < 40`` and ``delta_s < 3``.
"""

from __future__ import annotations

import csv
import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

RAW = "raw"
FILTER_RQ = 40.0
FILTER_DELTA = 3.0
RELIABILITY_TARGET = 0.95


@dataclass
class RatingTable:
    """Observer x method score matrix for one video set; column 0 is the raw video."""

    set_id: str
    scores: np.ndarray
    observer_ids: list
    method_ids: list

    def __post_init__(self):
        self.scores = np.asarray(self.scores)
        if self.scores.ndim != 2:
            raise ValueError("scores must be a 2-D observers x methods matrix")
        if not np.issubdtype(self.scores.dtype, np.integer):
            if not np.all(self.scores == np.round(self.scores)):
                raise ValueError(f"{self.set_id}: scores must be integers")
            self.scores = self.scores.astype(int)
        if self.scores.size and (self.scores.min() < 0 or self.scores.max() > 100):
            raise ValueError(f"{self.set_id}: scores must lie in [0, 100]")
        self.observer_ids = list(self.observer_ids)
        self.method_ids = list(self.method_ids)
        if len(self.observer_ids) != self.scores.shape[0]:
            raise ValueError(f"{self.set_id}: {len(self.observer_ids)} observer ids for {self.scores.shape[0]} rows")
        if len(self.method_ids) != self.scores.shape[1]:
            raise ValueError(f"{self.set_id}: {len(self.method_ids)} method ids for {self.scores.shape[1]} columns")
        if not self.method_ids or self.method_ids[0] != RAW:
            raise ValueError(f"{self.set_id}: column 0 must be the {RAW!r} video")
        if len(self.method_ids) < 2:
            raise ValueError(f"{self.set_id}: at least one enhancement method is required")

    @property
    def raw(self) -> np.ndarray:
        return self.scores[:, 0]

    def subset(self, observer_mask) -> "RatingTable":
        mask = np.asarray(observer_mask, dtype=bool)
        return RatingTable(self.set_id, self.scores[mask],
                           [o for o, keep in zip(self.observer_ids, mask) if keep], self.method_ids)


@dataclass
class AggregationResult:
    set_id: str
    chosen_method: Optional[str]
    R_q: float
    S_r: float
    S_e: float
    delta_s: float
    G_q: float
    retained_observers: list
    voters: list = field(default_factory=list)
    filtered_out: bool = False
    usable: bool = True

    def to_dict(self) -> dict:
        return asdict(self)


def gt_quality(r_q: float, delta_s: float) -> float:
    return r_q + delta_s


def reject_outliers(table: RatingTable, k: float = 2.0) -> np.ndarray:
    """Boolean mask of observers whose raw rating lies within ``k`` population std of the mean."""
    raw = table.raw.astype(float)
    if raw.size < 3:
        raise ValueError(f"{table.set_id}: at least 3 observers are needed for screening, got {raw.size}")
    sigma = raw.std()
    if sigma == 0:
        return np.ones(raw.size, dtype=bool)
    return np.abs(raw - raw.mean()) <= k * sigma


def cast_votes(table: RatingTable) -> list[str]:
    """One vote per observer for their highest-scored enhancement.

    Personal ties go to the method with the higher cohort mean, then the
    lexicographically smallest id.
    """
    enhanced = table.scores[:, 1:].astype(float)
    cohort_mean = enhanced.mean(axis=0)
    methods = table.method_ids[1:]
    votes = []
    for row in enhanced:
        best = np.flatnonzero(row == row.max())
        votes.append(min(best, key=lambda j: (-cohort_mean[j], methods[j])))
    return [methods[j] for j in votes]


def select_method(table: RatingTable) -> str:
    """Winning method: most votes, then higher mean score, then smallest id."""
    if table.scores.shape[0] < 2:
        raise ValueError(f"{table.set_id}: method selection needs at least 2 observers")
    counts = Counter(cast_votes(table))
    means = dict(zip(table.method_ids[1:], table.scores[:, 1:].astype(float).mean(axis=0)))
    return min(counts, key=lambda m: (-counts[m], -means[m], m))


def aggregate(table: RatingTable, filter_mode: str = "and") -> AggregationResult:
    """Run screening, selection and score synthesis for one set.

    ``filter_mode`` is ``"and"`` (drop when both ``R_q < 40`` and ``delta_s < 3``)
    or ``"or"`` (drop when either holds).
    """
    if filter_mode not in ("and", "or"):
        raise ValueError(f"filter_mode must be 'and' or 'or', got {filter_mode!r}")
    keep = reject_outliers(table)
    retained = table.subset(keep)
    if len(retained.observer_ids) < 2:
        nan = float("nan")
        return AggregationResult(table.set_id, None, nan, nan, nan, nan, nan,
                                 retained.observer_ids, filtered_out=True, usable=False)
    method = select_method(retained)
    votes = cast_votes(retained)
    voter_mask = np.array([v == method for v in votes])
    if not voter_mask.any():
        raise AssertionError(f"{table.set_id}: winning method {method!r} has no voters")
    col = retained.method_ids.index(method)
    r_q = float(retained.raw.mean())
    s_r = float(retained.raw[voter_mask].mean())
    s_e = float(retained.scores[voter_mask, col].mean())
    delta = s_e - s_r
    low, small = r_q < FILTER_RQ, delta < FILTER_DELTA
    filtered = (low and small) if filter_mode == "and" else (low or small)
    return AggregationResult(
        set_id=table.set_id,
        chosen_method=method,
        R_q=r_q,
        S_r=s_r,
        S_e=s_e,
        delta_s=delta,
        G_q=gt_quality(r_q, delta),
        retained_observers=retained.observer_ids,
        voters=[o for o, v in zip(retained.observer_ids, voter_mask) if v],
        filtered_out=filtered,
    )


@dataclass
class ReliabilityReport:
    fraction: float
    ratings_counted: int
    excluded_columns: list
    target: float = RELIABILITY_TARGET

    @property
    def passed(self) -> bool:
        return self.fraction >= self.target


def reliability_stat(tables: Iterable[RatingTable], k: float = 2.0) -> ReliabilityReport:
    """Fraction of individual ratings within ``k`` standard deviations of their column mean.

    Columns with a single rating have no spread and are left out (listed in
    ``excluded_columns`` as ``(set_id, method_id)``).
    """
    inside = total = 0
    excluded = []
    for table in tables:
        for j, method in enumerate(table.method_ids):
            col = table.scores[:, j].astype(float)
            if col.size < 2:
                excluded.append((table.set_id, method))
                continue
            dev = np.abs(col - col.mean())
            inside += int(np.count_nonzero(dev <= k * col.std()))
            total += col.size
    fraction = inside / total if total else float("nan")
    return ReliabilityReport(fraction, total, excluded)


# ---------------------------------------------------------------------------
# CSV / JSON


def read_ratings_csv(path) -> list[RatingTable]:
    """Long-format ratings ``set_id, observer_id, method_id, score`` to one table per set.

    Method order is ``raw`` first, then methods sorted by id. Every observer
    must rate every method of a set.
    """
    cells = defaultdict(dict)
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        missing = {"set_id", "observer_id", "method_id", "score"} - set(reader.fieldnames or ())
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for row in reader:
            key = (row["observer_id"], row["method_id"])
            if key in cells[row["set_id"]]:
                raise ValueError(f"duplicate rating for set {row['set_id']} observer/method {key}")
            cells[row["set_id"]][key] = int(row["score"])
    tables = []
    for set_id in sorted(cells):
        ratings = cells[set_id]
        observers = sorted({o for o, _ in ratings})
        methods = sorted({m for _, m in ratings} - {RAW})
        columns = [RAW] + methods
        scores = np.empty((len(observers), len(columns)), dtype=int)
        for i, o in enumerate(observers):
            for j, m in enumerate(columns):
                if (o, m) not in ratings:
                    raise ValueError(f"set {set_id}: observer {o} has no rating for {m}")
                scores[i, j] = ratings[(o, m)]
        tables.append(RatingTable(set_id, scores, observers, columns))
    return tables


def write_ratings_csv(tables: Sequence[RatingTable], path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["set_id", "observer_id", "method_id", "score"])
        for t in tables:
            for i, o in enumerate(t.observer_ids):
                for j, m in enumerate(t.method_ids):
                    w.writerow([t.set_id, o, m, int(t.scores[i, j])])


SUMMARY_COLUMNS = ("set_id", "chosen_method", "R_q", "S_r", "S_e", "delta_s", "G_q",
                   "retained", "voters", "filtered_out", "usable")


def write_results(results: Sequence[AggregationResult], out_dir) -> None:
    """One JSON file per set plus ``summary.csv``."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with open(out_dir / "summary.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(SUMMARY_COLUMNS)
        for r in results:
            (out_dir / f"{r.set_id}.json").write_text(json.dumps(r.to_dict(), indent=2))
            w.writerow([r.set_id, r.chosen_method, r.R_q, r.S_r, r.S_e, r.delta_s, r.G_q,
                        len(r.retained_observers), len(r.voters), r.filtered_out, r.usable])
