"""Behavioral revisit analyses over event logs, emitted as CSV plot data.

Every fraction is reported with its numerator and denominator.  "Active
day" means a calendar day with at least one logged event of the user.
"""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .attribution import (
    RevisitEvent,
    RevisitKind,
    RevisitLabelRecord,
    SaveRecord,
    day_offset,
    derive_revisit_events,
    derive_saves,
    join_revisits,
)
from .events import CONTENT_TOPICS, Action, EventRecord, Surface, Topic, day_index
from .evaluator import Feed

FISHER_Z_95 = 1.959963984540054


class AnalysisError(ValueError):
    pass


@dataclass
class DailyFraction:
    day: int
    kind: str
    numerator: int
    denominator: int

    @property
    def fraction(self) -> float:
        return self.numerator / self.denominator


def _eligible(saves: Sequence[SaveRecord], max_day: int, last_day: Optional[int]) -> list[SaveRecord]:
    if last_day is None:
        return list(saves)
    return [s for s in saves if s.save_day + max_day <= last_day]


def daily_revisit_user_fraction(saves: Sequence[SaveRecord], revisits: Sequence[RevisitEvent],
                                max_day: int = 9, last_day: Optional[int] = None) -> list[DailyFraction]:
    """Share of saving users whose saved pin got a revisit of each kind on day d after the save.

    With ``last_day`` set, only saves whose whole 0..max_day window lies
    inside the log are considered.
    """
    saves = _eligible(saves, max_day, last_day)
    if not saves:
        raise AnalysisError("no saves to analyze")
    users = {s.user_id for s in saves}
    hit: dict[tuple[int, RevisitKind], set] = defaultdict(set)
    for save, rv in join_revisits(saves, revisits, max_offset=max_day):
        hit[(day_offset(save, rv), rv.kind)].add(save.user_id)
    return [
        DailyFraction(d, kind.value, len(hit[(d, kind)]), len(users))
        for kind in RevisitKind for d in range(max_day + 1)
    ]


def daily_revisit_volume_fraction(saves: Sequence[SaveRecord], revisits: Sequence[RevisitEvent],
                                  max_day: int = 9, last_day: Optional[int] = None,
                                  kind: RevisitKind = RevisitKind.GRID_CLICK) -> list[DailyFraction]:
    """Share of saved pins with a revisit of ``kind`` on day d after the save."""
    saves = _eligible(saves, max_day, last_day)
    if not saves:
        raise AnalysisError("no saves to analyze")
    hit: dict[int, set] = defaultdict(set)
    for save, rv in join_revisits(saves, revisits, max_offset=max_day):
        if rv.kind is kind:
            hit[day_offset(save, rv)].add(save.key)
    return [DailyFraction(d, kind.value, len(hit[d]), len(saves)) for d in range(max_day + 1)]


# ---------------------------------------------------------------------------
# Activity after revisiting
# ---------------------------------------------------------------------------

@dataclass
class _UserTimeline:
    anchor_day: int
    active_days: set


def _timelines(events: Sequence[EventRecord]) -> tuple[dict[str, _UserTimeline], int, int]:
    active: dict[str, set] = defaultdict(set)
    first_save: dict[str, int] = {}
    for e in events:
        d = day_index(e.timestamp)
        active[e.user_id].add(d)
        if e.action is Action.REPIN:
            first_save[e.user_id] = min(d, first_save.get(e.user_id, d))
    if not active:
        raise AnalysisError("empty event log")
    all_days = [d for days in active.values() for d in days]
    timelines = {u: _UserTimeline(a, active[u]) for u, a in first_save.items()}
    return timelines, min(all_days), max(all_days)


def _revisited_by(events: Sequence[EventRecord], timelines: dict[str, _UserTimeline],
                  max_day: int) -> dict[RevisitKind, dict[str, int]]:
    """Earliest revisit offset per user and kind, over saves made on the user's anchor day."""
    saves = [s for s in derive_saves(events, None)
             if s.user_id in timelines and s.save_day == timelines[s.user_id].anchor_day]
    earliest: dict[RevisitKind, dict[str, int]] = {k: {} for k in RevisitKind}
    for save, rv in join_revisits(saves, derive_revisit_events(events), max_offset=max_day):
        d = rv.revisit_day - timelines[save.user_id].anchor_day
        seen = earliest[rv.kind]
        if save.user_id not in seen or d < seen[save.user_id]:
            seen[save.user_id] = d
    return earliest


@dataclass
class ActivityHistograms:
    t: int
    horizon: int
    revisited: np.ndarray
    not_revisited: np.ndarray
    n_excluded: int

    def mean_active_days(self, group: str) -> float:
        hist = self.revisited if group == "revisited" else self.not_revisited
        total = hist.sum()
        return float(np.dot(np.arange(hist.size), hist) / total) if total else math.nan


def _count_active(days: set, lo: int, hi: int) -> int:
    return sum(1 for d in days if lo <= d <= hi)


def activity_by_revisit_status(events: Sequence[EventRecord], t: int, horizon: int = 28) -> ActivityHistograms:
    """Active-day histograms over the ``horizon`` days after day ``t`` of each user's first save.

    Users are split by whether they revisited (either kind) a pin saved on
    that first save day by day ``t``.  Users whose window runs past the end
    of the log are excluded and counted.
    """
    timelines, first_day, last_day = _timelines(events)
    if last_day - first_day < t + horizon:
        raise AnalysisError(f"log spans {last_day - first_day + 1} days; need more than {t + horizon}")
    earliest = _revisited_by(events, timelines, t)
    revisited_users = set(earliest[RevisitKind.IMPRESSION]) | set(earliest[RevisitKind.GRID_CLICK])
    rev = np.zeros(horizon + 1, dtype=np.int64)
    non = np.zeros(horizon + 1, dtype=np.int64)
    excluded = 0
    for user, tl in sorted(timelines.items()):
        lo, hi = tl.anchor_day + t + 1, tl.anchor_day + t + horizon
        if hi > last_day:
            excluded += 1
            continue
        n_active = _count_active(tl.active_days, lo, hi)
        (rev if user in revisited_users else non)[n_active] += 1
    return ActivityHistograms(t, horizon, rev, non, excluded)


@dataclass
class Correlation:
    r: Optional[float]
    ci_low: Optional[float]
    ci_high: Optional[float]
    n: int
    n_positive: int


def point_biserial(indicator: Sequence[int], values: Sequence[float]) -> Correlation:
    """Point-biserial correlation with a Fisher-z 95% interval.

    None when either group has fewer than two members or ``values`` is
    constant; the interval is None when n <= 3 or |r| = 1.
    """
    x = np.asarray(indicator, dtype=float)
    y = np.asarray(values, dtype=float)
    n = x.size
    n_pos = int(x.sum())
    if n_pos < 2 or n - n_pos < 2 or np.all(y == y[0]):
        return Correlation(None, None, None, n, n_pos)
    mean_1 = y[x == 1].mean()
    mean_0 = y[x == 0].mean()
    s = y.std()
    p = n_pos / n
    r = float((mean_1 - mean_0) / s * math.sqrt(p * (1 - p)))
    r = max(-1.0, min(1.0, r))
    if n <= 3 or abs(r) >= 1.0:
        return Correlation(r, None, None, n, n_pos)
    z = math.atanh(r)
    half = FISHER_Z_95 / math.sqrt(n - 3)
    return Correlation(r, math.tanh(z - half), math.tanh(z + half), n, n_pos)


@dataclass
class CorrelationRow:
    day: int
    kind: str
    correlation: Correlation


def revisit_engagement_correlation(events: Sequence[EventRecord], days: Iterable[int] = range(7),
                                   horizon: int = 28) -> list[CorrelationRow]:
    """Correlation of "revisited by day X via kind" with the change in active days.

    The change compares the ``horizon`` days after day X of the user's
    first save with the ``horizon`` days up to and including day X.
    """
    days = list(days)
    timelines, first_day, last_day = _timelines(events)
    earliest = _revisited_by(events, timelines, max(days) if days else 0)
    rows = []
    for x_day in days:
        users, deltas = [], []
        for user, tl in sorted(timelines.items()):
            post_lo, post_hi = tl.anchor_day + x_day + 1, tl.anchor_day + x_day + horizon
            pre_lo, pre_hi = post_lo - horizon, post_lo - 1
            if pre_lo < first_day or post_hi > last_day:
                continue
            users.append(user)
            deltas.append(_count_active(tl.active_days, post_lo, post_hi)
                          - _count_active(tl.active_days, pre_lo, pre_hi))
        for kind in RevisitKind:
            first = earliest[kind]
            ind = [1 if u in first and first[u] <= x_day else 0 for u in users]
            rows.append(CorrelationRow(x_day, kind.value, point_biserial(ind, deltas)))
    return rows


# ---------------------------------------------------------------------------
# Topic report
# ---------------------------------------------------------------------------

def long_short_ratio(day_volumes: Sequence[float]) -> Optional[float]:
    """Day 3-6 share of the day 0-6 grid-click revisit volume; None without volume."""
    if len(day_volumes) < 7:
        raise AnalysisError("need volumes for days 0-6")
    total = float(sum(day_volumes[0:7]))
    if total == 0:
        return None
    return float(sum(day_volumes[3:7])) / total


@dataclass
class TopicReportRow:
    topic: Topic
    impressions: int
    repins: int
    saves: int
    repin_rate: Optional[float]
    revisit_rate: Optional[float]
    revisit_grid_rate: Optional[float]
    grid_volume_0_6: int
    grid_volume_3_6: int
    long_short_ratio: Optional[float]
    mean_p_rp_rv: Optional[float]
    repin_volume_lift_pct: Optional[float]


def _ratio(num: float, den: float) -> Optional[float]:
    return num / den if den else None


def _topk_repins_by_topic(feeds: Sequence[Feed], pin_topic: dict[str, Topic], k: int) -> dict[Topic, int]:
    out: dict[Topic, int] = defaultdict(int)
    j = 1  # repin label column
    for feed in feeds:
        for pin, labels in zip(feed.pin_ids[:k], feed.labels[:k]):
            if labels[j]:
                out[pin_topic.get(pin, Topic.UNKNOWN)] += 1
    return out


def topic_report(events: Sequence[EventRecord], labels: Sequence[RevisitLabelRecord],
                 feeds_a: Optional[Sequence[Feed]] = None, feeds_b: Optional[Sequence[Feed]] = None,
                 k: int = 3, topics: Sequence[Topic] = CONTENT_TOPICS,
                 last_day: Optional[int] = None) -> list[TopicReportRow]:
    """Per-topic repin/revisit rates, long-vs-short revisit ratio and model columns.

    ``mean_p_rp_rv`` averages model A's repin-and-revisit probability over
    its scored candidates; ``repin_volume_lift_pct`` compares repins placed
    in the top ``k`` by model A against model B.  With ``last_day`` set,
    revisit rates and day volumes only count saves whose day 0-6 window
    lies inside the log.
    """
    def mature(save_day: int) -> bool:
        return last_day is None or save_day + 6 <= last_day

    pin_topic: dict[str, Topic] = {}
    impressions: dict[Topic, int] = defaultdict(int)
    repins: dict[Topic, int] = defaultdict(int)
    for e in events:
        pin_topic.setdefault(e.pin_id, e.topic)
        if e.surface is Surface.RELATED_PINS:
            if e.action is Action.IMPRESSION:
                impressions[e.topic] += 1
            elif e.action is Action.REPIN:
                repins[e.topic] += 1
    n_saves: dict[Topic, int] = defaultdict(int)
    merged: dict[Topic, int] = defaultdict(int)
    grid7: dict[Topic, int] = defaultdict(int)
    for rec in labels:
        if not mature(day_index(rec.save_timestamp)):
            continue
        t = pin_topic.get(rec.pin_id, Topic.UNKNOWN)
        n_saves[t] += 1
        merged[t] += rec.merged
        grid7[t] += rec.flag_7d_rev_grid
    day_volumes: dict[Topic, list[int]] = defaultdict(lambda: [0] * 7)
    for save, rv in join_revisits(derive_saves(events), derive_revisit_events(events)):
        if rv.kind is RevisitKind.GRID_CLICK and mature(save.save_day):
            day_volumes[pin_topic.get(save.pin_id, Topic.UNKNOWN)][day_offset(save, rv)] += 1
    p_sum: dict[Topic, float] = defaultdict(float)
    p_n: dict[Topic, int] = defaultdict(int)
    j_rv = 4
    for feed in feeds_a or ():
        if feed.probabilities is None:
            continue
        for pin, probs in zip(feed.pin_ids, feed.probabilities):
            t = pin_topic.get(pin, Topic.UNKNOWN)
            p_sum[t] += float(probs[j_rv])
            p_n[t] += 1
    top_a = _topk_repins_by_topic(feeds_a, pin_topic, k) if feeds_a is not None else None
    top_b = _topk_repins_by_topic(feeds_b, pin_topic, k) if feeds_b is not None else None
    rows = []
    for t in topics:
        vols = day_volumes[t]
        lift = None
        if top_a is not None and top_b is not None and top_b.get(t, 0):
            lift = 100.0 * (top_a.get(t, 0) - top_b[t]) / top_b[t]
        rows.append(TopicReportRow(
            topic=t,
            impressions=impressions[t],
            repins=repins[t],
            saves=n_saves[t],
            repin_rate=_ratio(repins[t], impressions[t]),
            revisit_rate=_ratio(merged[t], n_saves[t]),
            revisit_grid_rate=_ratio(grid7[t], n_saves[t]),
            grid_volume_0_6=sum(vols),
            grid_volume_3_6=sum(vols[3:7]),
            long_short_ratio=long_short_ratio(vols),
            mean_p_rp_rv=_ratio(p_sum[t], p_n[t]),
            repin_volume_lift_pct=lift,
        ))
    return rows


# ---------------------------------------------------------------------------
# Plot-data files
# ---------------------------------------------------------------------------

def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.9g}"
    if isinstance(v, Topic):
        return v.value
    return str(v)


def _write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def write_daily(path, rows: Sequence[DailyFraction]) -> None:
    _write_csv(Path(path), ["day", "kind", "fraction", "numerator", "denominator"],
               [(r.day, r.kind, r.fraction, r.numerator, r.denominator) for r in rows])


def write_activity(path, hists: Sequence[ActivityHistograms]) -> None:
    rows = []
    for h in hists:
        for n_days in range(h.horizon + 1):
            rows.append((h.t, n_days, int(h.revisited[n_days]), int(h.not_revisited[n_days])))
    _write_csv(Path(path), ["revisit_by_day", "active_days", "n_revisited", "n_not_revisited"], rows)


def write_correlations(path, rows: Sequence[CorrelationRow]) -> None:
    _write_csv(Path(path), ["day", "kind", "r", "ci_low", "ci_high", "n", "n_positive"],
               [(r.day, r.kind, r.correlation.r, r.correlation.ci_low, r.correlation.ci_high,
                 r.correlation.n, r.correlation.n_positive) for r in rows])


def write_topic_report(path, rows: Sequence[TopicReportRow]) -> None:
    names = [f.name for f in fields(TopicReportRow)]
    _write_csv(Path(path), names, [[getattr(r, n) for n in names] for r in rows])


def write_fig8(path, rows: Sequence[TopicReportRow]) -> None:
    _write_csv(Path(path), ["topic", "mean_p_rp_rv", "repin_volume_lift_pct"],
               [(r.topic, r.mean_p_rp_rv, r.repin_volume_lift_pct) for r in rows])


def write_fig9(path, rows: Sequence[TopicReportRow]) -> None:
    _write_csv(Path(path), ["topic", "repin_rate", "revisit_rate", "revisit_grid_rate"],
               [(r.topic, r.repin_rate, r.revisit_rate, r.revisit_grid_rate) for r in rows])


def write_table3(path, rows: Sequence[TopicReportRow]) -> None:
    _write_csv(Path(path), ["topic", "long_short_ratio", "grid_volume_3_6", "grid_volume_0_6"],
               [(r.topic, r.long_short_ratio, r.grid_volume_3_6, r.grid_volume_0_6) for r in rows])


def run_analyses(events: Sequence[EventRecord], labels: Sequence[RevisitLabelRecord], out_dir,
                 feeds_a: Optional[Sequence[Feed]] = None, feeds_b: Optional[Sequence[Feed]] = None,
                 horizon: int = 28, plot_data: bool = True) -> list[str]:
    """Write every analysis that the log supports; returns the file names written."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    saves = derive_saves(events, None)
    revisits = derive_revisit_events(events)
    last_day = max(day_index(e.timestamp) for e in events)
    rows = topic_report(events, labels, feeds_a, feeds_b, last_day=last_day)
    write_topic_report(out / "topic_report.csv", rows)
    written.append("topic_report.csv")
    if not plot_data:
        return written
    try:
        write_daily(out / "fig3a.csv", daily_revisit_user_fraction(saves, revisits, last_day=last_day))
        write_daily(out / "fig3b.csv", daily_revisit_volume_fraction(saves, revisits, last_day=last_day))
        written += ["fig3a.csv", "fig3b.csv"]
    except AnalysisError:
        pass
    try:
        write_activity(out / "fig4.csv", [activity_by_revisit_status(events, t, horizon) for t in range(7)])
        written.append("fig4.csv")
    except AnalysisError:
        pass
    try:
        write_correlations(out / "fig5.csv", revisit_engagement_correlation(events, range(7), horizon))
        written.append("fig5.csv")
    except AnalysisError:
        pass
    write_fig8(out / "fig8.csv", rows)
    write_fig9(out / "fig9.csv", rows)
    write_table3(out / "table3.csv", rows)
    written += ["fig8.csv", "fig9.csv", "table3.csv"]
    return written
