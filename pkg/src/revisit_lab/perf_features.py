"""Windowed per-pin revisitation popularity ("pin perf") features.

Five families are counted over trailing 7/30/90-day windows, each as an
action count and a distinct-user count:

* ``rp_*`` families count revisits credited (by the attribution join) to a
  save made on Related Pins by the same user.
* ``overall_*`` families count own-profile impressions / grid-clicks on any
  pin the user saved earlier on any surface, with no day limit.
"""

from __future__ import annotations

import bisect
import enum
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .attribution import RevisitEvent, RevisitKind, SaveRecord, day_offset
from .events import Action, EventRecord, Surface, day_index

WINDOWS = (7, 30, 90)
REFRESH_CADENCE = {7: 1, 30: 3, 90: 7}
PERF_HEADER = "pin_id,family,window,as_of_day,action_count,unique_users"


class FeatureError(ValueError):
    pass


class FeatureFamily(enum.Enum):
    RP_1D_REV_IMPRE = "rp_1d_rev_impre"
    RP_1D_REV_GRID = "rp_1d_rev_grid"
    RP_7D_REV_GRID = "rp_7d_rev_grid"
    OVERALL_REV_IMPRE = "overall_rev_impre"
    OVERALL_REV_GRID = "overall_rev_grid"

    @property
    def needs_join(self) -> bool:
        return self.value.startswith("rp_")


FAMILIES = tuple(FeatureFamily)

# Appended training-feature layout: family x window x (actions, unique users).
PERF_LAYOUT: tuple[tuple[FeatureFamily, int, str], ...] = tuple(
    (fam, w, stat) for fam in FAMILIES for w in WINDOWS for stat in ("actions", "users")
)
N_PERF_FEATURES = len(PERF_LAYOUT)

Triple = tuple[str, str, int]  # (pin_id, user_id, day)


def save_index(events: Iterable[EventRecord]) -> dict[tuple[str, str], int]:
    """First save timestamp per (user, pin), over saves on any surface."""
    first: dict[tuple[str, str], int] = {}
    for e in events:
        if e.action is Action.REPIN:
            key = (e.user_id, e.pin_id)
            if key not in first or e.timestamp < first[key]:
                first[key] = e.timestamp
    return first


def qualifying_events(events: Iterable[EventRecord],
                      pairs: Optional[Sequence[tuple[SaveRecord, RevisitEvent]]],
                      family: FeatureFamily) -> list[Triple]:
    """(pin, user, day) triples counted by ``family``, sorted."""
    if family.needs_join:
        if pairs is None:
            raise FeatureError(f"{family.value} needs the attribution join output")
        kind = RevisitKind.IMPRESSION if family is FeatureFamily.RP_1D_REV_IMPRE else RevisitKind.GRID_CLICK
        max_d = 6 if family is FeatureFamily.RP_7D_REV_GRID else 0
        out = [
            (rv.pin_id, rv.user_id, rv.revisit_day)
            for save, rv in pairs
            if rv.kind is kind and 0 <= day_offset(save, rv) <= max_d
        ]
    else:
        events = list(events)
        first_save = save_index(events)
        action = Action.IMPRESSION if family is FeatureFamily.OVERALL_REV_IMPRE else Action.GRID_CLICK
        out = []
        for e in events:
            if e.surface is not Surface.OWN_PROFILE or e.action is not action:
                continue
            saved_at = first_save.get((e.user_id, e.pin_id))
            if saved_at is not None and saved_at < e.timestamp:
                out.append((e.pin_id, e.user_id, day_index(e.timestamp)))
    out.sort()
    return out


@dataclass
class PartialAggregate:
    """Mergeable per-pin state: action count and the set of acting users."""

    counts: dict[str, int] = field(default_factory=dict)
    users: dict[str, set] = field(default_factory=dict)

    def add(self, pin: str, user: str) -> None:
        self.counts[pin] = self.counts.get(pin, 0) + 1
        self.users.setdefault(pin, set()).add(user)

    def merge(self, other: "PartialAggregate") -> "PartialAggregate":
        out = PartialAggregate(dict(self.counts), {p: set(u) for p, u in self.users.items()})
        for pin, n in other.counts.items():
            out.counts[pin] = out.counts.get(pin, 0) + n
            out.users.setdefault(pin, set()).update(other.users[pin])
        return out

    def finalize(self) -> dict[str, tuple[int, int]]:
        return {pin: (self.counts[pin], len(self.users[pin])) for pin in sorted(self.counts)}


def _check_window(window_days: int) -> None:
    if window_days < 1:
        raise FeatureError(f"window must be positive (got {window_days})")


def partial_window(triples: Iterable[Triple], window_days: int, as_of_day: int) -> PartialAggregate:
    _check_window(window_days)
    lo = as_of_day - window_days + 1
    agg = PartialAggregate()
    for pin, user, day in triples:
        if lo <= day <= as_of_day:
            agg.add(pin, user)
    return agg


def aggregate_window(triples: Iterable[Triple], window_days: int, as_of_day: int) -> dict[str, tuple[int, int]]:
    """pin -> (action_count, unique_user_count) over days ``[as_of - window + 1, as_of]``."""
    return partial_window(triples, window_days, as_of_day).finalize()


def refresh_plan(days: Sequence[int]) -> list[tuple[int, int]]:
    """(as_of_day, window) refresh tasks over a contiguous day range, anchored at its start."""
    days = list(days)
    if not days:
        raise FeatureError("empty day range")
    start = days[0]
    tasks = []
    for d in days:
        for w in WINDOWS:
            if (d - start) % REFRESH_CADENCE[w] == 0:
                tasks.append((d, w))
    return tasks


def coverage(table: Mapping[str, tuple[int, int]], candidate_pins: Iterable[str]) -> float:
    pins = list(candidate_pins)
    if not pins:
        raise FeatureError("coverage of an empty candidate set is undefined")
    hit = sum(1 for p in pins if table.get(p, (0, 0))[0] > 0)
    return hit / len(pins)


@dataclass
class PerfTables:
    """Refreshed feature tables keyed by (family, window, as_of_day)."""

    start_day: int
    end_day: int
    tables: dict[tuple[FeatureFamily, int, int], dict[str, tuple[int, int]]]

    def refresh_day(self, window: int, day: int) -> Optional[int]:
        """Latest refresh of ``window`` at or before ``day``."""
        if day < self.start_day:
            return None
        day = min(day, self.end_day)
        cadence = REFRESH_CADENCE[window]
        return day - (day - self.start_day) % cadence

    def lookup(self, pin: str, family: FeatureFamily, window: int, day: int) -> tuple[int, int]:
        as_of = self.refresh_day(window, day)
        if as_of is None:
            return (0, 0)
        return self.tables.get((family, window, as_of), {}).get(pin, (0, 0))

    def features_for(self, pin: str, request_day: int) -> list[int]:
        """The 30 raw counts for a request on ``request_day``.

        Only tables refreshed strictly before the request day are visible.
        """
        out = []
        cache: dict[tuple[FeatureFamily, int], tuple[int, int]] = {}
        for fam, w, stat in PERF_LAYOUT:
            key = (fam, w)
            if key not in cache:
                cache[key] = self.lookup(pin, fam, w, request_day - 1)
            out.append(cache[key][0] if stat == "actions" else cache[key][1])
        return out

    def rows(self):
        for (fam, w, as_of) in sorted(self.tables, key=lambda k: (k[2], FAMILIES.index(k[0]), k[1])):
            for pin, (a, u) in self.tables[(fam, w, as_of)].items():
                yield pin, fam, w, as_of, a, u


def build_perf_tables(events: Sequence[EventRecord],
                      pairs: Sequence[tuple[SaveRecord, RevisitEvent]],
                      days: Optional[Sequence[int]] = None) -> PerfTables:
    """Run every refresh task of the schedule over ``days`` (default: the log's day span)."""
    if days is None:
        if not events:
            raise FeatureError("cannot infer a day range from an empty log")
        all_days = [day_index(e.timestamp) for e in events]
        days = range(min(all_days), max(all_days) + 1)
    days = list(days)
    plan = refresh_plan(days)
    tables = {}
    for fam in FAMILIES:
        triples = qualifying_events(events, pairs if fam.needs_join else None, fam)
        by_day: dict[int, list[tuple[str, str]]] = defaultdict(list)
        for pin, user, day in triples:
            by_day[day].append((pin, user))
        sorted_days = sorted(by_day)
        for as_of, w in plan:
            lo_i = bisect.bisect_left(sorted_days, as_of - w + 1)
            hi_i = bisect.bisect_right(sorted_days, as_of)
            agg = PartialAggregate()
            for d in sorted_days[lo_i:hi_i]:
                for pin, user in by_day[d]:
                    agg.add(pin, user)
            table = agg.finalize()
            if table:
                tables[(fam, w, as_of)] = table
    return PerfTables(days[0], days[-1], tables)


def write_perf_tables(path, perf: PerfTables) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(PERF_HEADER + "\n")
        for pin, fam, w, as_of, a, u in perf.rows():
            fh.write(f"{pin},{fam.value},{w},{as_of},{a},{u}\n")


def read_perf_tables(path, start_day: int, end_day: int) -> PerfTables:
    """Load a feature table file; the refresh schedule's day range is not stored in it."""
    tables: dict = {}
    with open(path, encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != PERF_HEADER:
            raise FeatureError(f"{path}: bad header")
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != 6:
                raise FeatureError(f"{path}:{lineno}: expected 6 fields")
            pin, fam, w, as_of, a, u = parts
            tables.setdefault((FeatureFamily(fam), int(w), int(as_of)), {})[pin] = (int(a), int(u))
    return PerfTables(start_day, end_day, tables)
