import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uvenet.annotation import (
    RatingTable,
    aggregate,
    cast_votes,
    read_ratings_csv,
    reject_outliers,
    reliability_stat,
    select_method,
    write_ratings_csv,
    write_results,
)


def table(scores, methods=None, set_id="s"):
    scores = np.asarray(scores)
    methods = methods or ["raw"] + [f"m{j}" for j in range(1, scores.shape[1])]
    return RatingTable(set_id, scores, [f"o{i:03d}" for i in range(len(scores))], methods)


def naive_aggregate(t: RatingTable, mode="and"):
    """Loop-by-loop restatement of the aggregation rules, used as an oracle."""
    raw = [float(r[0]) for r in t.scores]
    n = len(raw)
    mu = sum(raw) / n
    sd = math.sqrt(sum((r - mu) ** 2 for r in raw) / n)
    keep = [i for i in range(n) if sd == 0 or abs(raw[i] - mu) <= 2 * sd + 1e-12]
    methods = t.method_ids[1:]
    means = {}
    for j, m in enumerate(methods, start=1):
        means[m] = sum(t.scores[i][j] for i in keep) / len(keep)
    votes = {}
    for i in keep:
        row = {m: t.scores[i][j] for j, m in enumerate(methods, start=1)}
        top = max(row.values())
        tied = sorted(m for m in row if row[m] == top)
        votes[i] = sorted(tied, key=lambda m: -means[m])[0]
    counts = Counter(votes.values())
    best = max(counts.values())
    cands = sorted(m for m in counts if counts[m] == best)
    winner = sorted(cands, key=lambda m: -means[m])[0]
    voters = [i for i in keep if votes[i] == winner]
    col = t.method_ids.index(winner)
    r_q = sum(raw[i] for i in keep) / len(keep)
    s_r = sum(raw[i] for i in voters) / len(voters)
    s_e = sum(t.scores[i][col] for i in voters) / len(voters)
    d = s_e - s_r
    f = (r_q < 40 and d < 3) if mode == "and" else (r_q < 40 or d < 3)
    return winner, r_q, s_r, s_e, d, r_q + d, f, len(keep)


def test_moderate_spread_keeps_everyone():
    t = table([[50, 60], [52, 60], [48, 60], [51, 60], [90, 60]])
    raw = t.raw.astype(float)
    assert raw.mean() == pytest.approx(58.2)
    assert raw.std() == pytest.approx(15.9549, abs=1e-4)
    assert reject_outliers(t).all()


def test_two_sigma_boundary_is_inclusive():
    t = table([[50, 1], [50, 1], [50, 1], [50, 1], [100, 1]])
    # mean 60, sigma 20: the 100 sits exactly on mean + 2 sigma
    assert reject_outliers(t).all()


def test_far_outlier_is_removed():
    t = table([[50, 1]] * 9 + [[100, 1]])
    assert reject_outliers(t).tolist() == [True] * 9 + [False]


def test_zero_spread_keeps_everyone():
    assert reject_outliers(table([[30, 1]] * 4)).all()


def test_too_few_observers():
    with pytest.raises(ValueError):
        reject_outliers(table([[30, 1], [31, 2]]))


def test_table_validation():
    with pytest.raises(ValueError):
        table([[101, 1], [1, 1], [1, 1]])
    with pytest.raises(ValueError):
        table([[1.5, 1], [1, 1], [1, 1]])
    with pytest.raises(ValueError):
        RatingTable("s", [[1, 2]], ["a"], ["m1", "raw"])


def test_personal_tie_goes_to_higher_cohort_mean():
    # observer 0 ties m1/m2; m2 has the higher cohort mean
    t = table([[10, 50, 50], [10, 20, 80], [10, 30, 70]])
    assert cast_votes(t) == ["m2", "m2", "m2"]


def test_personal_tie_with_equal_means_goes_to_smallest_id():
    t = table([[10, 50, 50], [10, 50, 50], [10, 50, 50]], ["raw", "zeta", "alpha"])
    assert cast_votes(t) == ["alpha"] * 3


def test_vote_tie_goes_to_higher_mean():
    t = table([[10, 90, 0], [10, 0, 60], [10, 50, 40], [10, 30, 80]])
    # votes m1, m2, m1, m2; means m1=42.5, m2=45
    assert select_method(t) == "m2"


def test_vote_and_mean_tie_goes_to_smallest_id():
    t = table([[10, 60, 40], [10, 40, 60], [10, 50, 50]], ["raw", "b", "a"])
    # votes b, a and one personal tie resolved to a (equal means): a wins
    assert select_method(t) == "a"


def test_worked_example_gt_score():
    # raw mean 40.71 over 100 observers, the chosen enhancement adds 10.58 on average
    raw = np.array([41] * 71 + [40] * 29)
    lift = np.array([11] * 58 + [10] * 42)
    t = table(np.stack([raw, raw + lift], axis=1))
    r = aggregate(t)
    assert r.chosen_method == "m1" and len(r.retained_observers) == 100
    assert r.R_q == pytest.approx(40.71)
    assert r.delta_s == pytest.approx(10.58)
    assert r.G_q == pytest.approx(51.29)
    assert not r.filtered_out


@pytest.mark.parametrize("raw,lift,and_out,or_out", [
    (30, 1, True, True),
    (30, 5, False, True),
    (50, 1, False, True),
    (50, 5, False, False),
])
def test_filter_modes(raw, lift, and_out, or_out):
    t = table([[raw, raw + lift]] * 5)
    assert aggregate(t, "and").filtered_out is and_out
    assert aggregate(t, "or").filtered_out is or_out
    with pytest.raises(ValueError):
        aggregate(t, "xor")


@pytest.mark.parametrize("seed", range(20))
def test_screening_keeps_at_least_three_quarters(seed):
    t = random_table(np.random.default_rng(100 + seed))
    assert reject_outliers(t).sum() >= 0.75 * len(t.observer_ids)
    assert aggregate(t).usable


def random_table(rng, set_id="s"):
    n, m = rng.integers(3, 25), rng.integers(2, 6)
    base = rng.integers(10, 90)
    raw = np.clip(rng.normal(base, 10, n), 0, 100).round()
    enh = np.clip(raw[:, None] + rng.normal(5, 8, (n, m - 1)), 0, 100).round()
    if rng.random() < 0.3:
        raw[0] = 100 if base < 50 else 0
    return table(np.column_stack([raw, enh]).astype(int), set_id=set_id)


def _compare(t, mode):
    r = aggregate(t, mode)
    w, r_q, s_r, s_e, d, g, f, kept = naive_aggregate(t, mode)
    assert r.chosen_method == w
    assert len(r.retained_observers) == kept
    for got, exp in [(r.R_q, r_q), (r.S_r, s_r), (r.S_e, s_e), (r.delta_s, d), (r.G_q, g)]:
        assert got == pytest.approx(exp, abs=1e-9)
    assert r.filtered_out == f


@pytest.mark.parametrize("seed", range(40))
def test_matches_naive_oracle(seed):
    t = random_table(np.random.default_rng(seed))
    _compare(t, "and")
    _compare(t, "or")


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000), st.integers(-5, 5))
def test_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    t = random_table(rng)
    lo, hi = t.scores.min(), t.scores.max()
    if lo + shift < 0 or hi + shift > 100:
        return
    a, b = aggregate(t), aggregate(table(t.scores + shift, t.method_ids))
    assert a.chosen_method == b.chosen_method
    assert b.R_q == pytest.approx(a.R_q + shift)
    assert b.delta_s == pytest.approx(a.delta_s)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10_000))
def test_observer_order_does_not_matter(seed):
    rng = np.random.default_rng(seed)
    t = random_table(rng)
    perm = rng.permutation(len(t.observer_ids))
    shuffled = RatingTable("s", t.scores[perm], [t.observer_ids[i] for i in perm], t.method_ids)
    a, b = aggregate(t), aggregate(shuffled)
    assert a.chosen_method == b.chosen_method
    assert a.G_q == pytest.approx(b.G_q) and sorted(a.voters) == sorted(b.voters)


def test_reliability_on_normal_ratings():
    rng = np.random.default_rng(0)
    tables = [table(np.clip(rng.normal(60, 6, (40, 4)), 0, 100).round().astype(int), set_id=str(i))
              for i in range(50)]
    rel = reliability_stat(tables)
    assert rel.fraction == pytest.approx(0.954, abs=0.02)
    assert rel.ratings_counted == 50 * 40 * 4


def test_reliability_pass_and_fail():
    agree = table([[50, 60]] * 10)
    assert reliability_stat([agree]).fraction == 1.0 and reliability_stat([agree]).passed
    # half the panel at each extreme: sigma 50, everyone on the boundary
    split = table([[0, 0]] * 5 + [[100, 100]] * 5)
    assert reliability_stat([split]).fraction == 1.0
    noisy = table([[50, 50]] * 18 + [[0, 0], [100, 100]])
    assert reliability_stat([noisy]).fraction == pytest.approx(36 / 40)
    assert not reliability_stat([noisy]).passed


def test_reliability_skips_single_rating_columns():
    lone = RatingTable("x", [[40, 50]], ["o"], ["raw", "m1"])
    rel = reliability_stat([lone, table([[1, 2]] * 3)])
    assert rel.excluded_columns == [("x", "raw"), ("x", "m1")]
    assert rel.ratings_counted == 6


def test_csv_round_trip_and_results(tmp_path):
    rng = np.random.default_rng(3)
    tables = [random_table(rng, set_id=f"set{i}") for i in range(3)]
    tables = [RatingTable(t.set_id, t.scores, t.observer_ids, t.method_ids) for t in tables]
    write_ratings_csv(tables, tmp_path / "r.csv")
    back = read_ratings_csv(tmp_path / "r.csv")
    for a, b in zip(tables, back):
        assert a.set_id == b.set_id and a.method_ids == b.method_ids
        assert np.array_equal(a.scores, b.scores)
    write_results([aggregate(t) for t in back], tmp_path / "out")
    assert (tmp_path / "out" / "set0.json").exists()
    assert len((tmp_path / "out" / "summary.csv").read_text().splitlines()) == 4


def test_csv_missing_rating(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("set_id,observer_id,method_id,score\ns,a,raw,10\ns,a,m,20\ns,b,raw,10\n")
    with pytest.raises(ValueError, match="no rating"):
        read_ratings_csv(p)
