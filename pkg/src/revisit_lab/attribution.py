"""Save -> revisit attribution and revisitation labels.

Saves on the Related Pins surface are joined to later own-profile
impressions and grid-clicks of the same (user, pin).  A revisit qualifies
when it happens strictly after the save and within calendar days 0-6 of
the save day; it is credited to the latest earlier save of that pin only.
"""

from __future__ import annotations

import bisect
import enum
from dataclasses import dataclass
from itertools import groupby
from operator import attrgetter
from typing import Iterable, Optional, Sequence

from .events import Action, EventRecord, Surface, day_index

LABEL_WINDOW_DAYS = 7
LABELS_HEADER = "user_id,pin_id,save_ts,request_id,f_1d_imp,f_1d_grid,f_7d_grid,merged"


class AttributionError(ValueError):
    pass


class RevisitKind(enum.Enum):
    IMPRESSION = "impression"
    GRID_CLICK = "grid_click"


@dataclass(frozen=True, slots=True)
class SaveRecord:
    user_id: str
    pin_id: str
    save_timestamp: int
    save_day: int
    request_id: str
    surface: Surface

    @property
    def key(self) -> tuple[str, str, int, str]:
        return (self.user_id, self.pin_id, self.save_timestamp, self.request_id)


@dataclass(frozen=True, slots=True)
class RevisitEvent:
    user_id: str
    pin_id: str
    revisit_timestamp: int
    revisit_day: int
    kind: RevisitKind


@dataclass(frozen=True, slots=True)
class RevisitLabelRecord:
    user_id: str
    pin_id: str
    save_timestamp: int
    request_id: str
    flag_1d_rev_impre: bool
    flag_1d_rev_grid: bool
    flag_7d_rev_grid: bool

    @property
    def merged(self) -> bool:
        return self.flag_1d_rev_impre or self.flag_1d_rev_grid or self.flag_7d_rev_grid

    @property
    def key(self) -> tuple[str, str, int, str]:
        return (self.user_id, self.pin_id, self.save_timestamp, self.request_id)


def _save_sort_key(s: SaveRecord):
    return (s.user_id, s.pin_id, s.save_timestamp, s.request_id)


def _revisit_sort_key(r: RevisitEvent):
    return (r.user_id, r.pin_id, r.revisit_timestamp, r.kind.value)


def derive_saves(events: Iterable[EventRecord],
                 surface_filter: Optional[Surface] = Surface.RELATED_PINS) -> list[SaveRecord]:
    """Repin events on ``surface_filter`` (any surface when None), sorted by (user, pin, time)."""
    saves = [
        SaveRecord(e.user_id, e.pin_id, e.timestamp, day_index(e.timestamp), e.request_id, e.surface)
        for e in events
        if e.action is Action.REPIN and (surface_filter is None or e.surface is surface_filter)
    ]
    saves.sort(key=_save_sort_key)
    return saves


_REVISIT_KINDS = {Action.IMPRESSION: RevisitKind.IMPRESSION, Action.GRID_CLICK: RevisitKind.GRID_CLICK}


def derive_revisit_events(events: Iterable[EventRecord]) -> list[RevisitEvent]:
    revisits = [
        RevisitEvent(e.user_id, e.pin_id, e.timestamp, day_index(e.timestamp), _REVISIT_KINDS[e.action])
        for e in events
        if e.surface is Surface.OWN_PROFILE and e.action in _REVISIT_KINDS
    ]
    revisits.sort(key=_revisit_sort_key)
    return revisits


def _check_sorted(items, key, what):
    prev = None
    for item in items:
        k = key(item)[:3]
        if prev is not None and k < prev:
            raise AttributionError(f"{what} are not sorted by (user_id, pin_id, timestamp)")
        prev = k


def join_revisits(saves: Sequence[SaveRecord], revisits: Sequence[RevisitEvent],
                  max_offset: int = LABEL_WINDOW_DAYS - 1) -> list[tuple[SaveRecord, RevisitEvent]]:
    """Pair each revisit with the latest strictly earlier save of the same (user, pin).

    The pair is kept when the calendar-day offset lies in ``[0, max_offset]``.
    Output is ordered like ``revisits``.
    """
    _check_sorted(saves, _save_sort_key, "saves")
    _check_sorted(revisits, _revisit_sort_key, "revisits")
    pairs: list[tuple[SaveRecord, RevisitEvent]] = []
    i, n = 0, len(saves)
    for (user, pin), group in groupby(revisits, key=attrgetter("user_id", "pin_id")):
        while i < n and (saves[i].user_id, saves[i].pin_id) < (user, pin):
            i += 1
        j = i
        while j < n and saves[j].user_id == user and saves[j].pin_id == pin:
            j += 1
        if j == i:
            continue
        block = saves[i:j]
        times = [s.save_timestamp for s in block]
        for rv in group:
            pos = bisect.bisect_left(times, rv.revisit_timestamp)
            if pos == 0:
                continue
            save = block[pos - 1]
            if 0 <= rv.revisit_day - save.save_day <= max_offset:
                pairs.append((save, rv))
        i = j
    return pairs


def day_offset(save: SaveRecord, revisit: RevisitEvent) -> int:
    return revisit.revisit_day - save.save_day


def build_labels(pairs: Iterable[tuple[SaveRecord, RevisitEvent]],
                 saves: Sequence[SaveRecord]) -> list[RevisitLabelRecord]:
    """One label record per save, in save order; flags are existential over its revisits."""
    flags = {s.key: [False, False, False] for s in saves}
    for save, rv in pairs:
        f = flags.get(save.key)
        if f is None:
            raise AttributionError(f"joined pair references unknown save {save.key}")
        d = day_offset(save, rv)
        if rv.kind is RevisitKind.IMPRESSION:
            if d == 0:
                f[0] = True
        else:
            if d == 0:
                f[1] = True
            if 0 <= d < LABEL_WINDOW_DAYS:
                f[2] = True
    return [
        RevisitLabelRecord(s.user_id, s.pin_id, s.save_timestamp, s.request_id, *flags[s.key])
        for s in saves
    ]


@dataclass(frozen=True)
class LabelVolumes:
    """Attributed revisit volume of each label type relative to the save count."""

    n_saves: int
    rev_impre_1d: int
    rev_grid_1d: int
    rev_grid_7d: int

    def ratio(self, name: str) -> float:
        if self.n_saves == 0:
            raise ZeroDivisionError("no saves")
        return getattr(self, name) / self.n_saves


def label_volumes(pairs: Iterable[tuple[SaveRecord, RevisitEvent]], n_saves: int) -> LabelVolumes:
    imp1 = grid1 = grid7 = 0
    for save, rv in pairs:
        d = day_offset(save, rv)
        if rv.kind is RevisitKind.IMPRESSION:
            imp1 += d == 0
        else:
            grid1 += d == 0
            grid7 += 0 <= d < LABEL_WINDOW_DAYS
    return LabelVolumes(n_saves, imp1, grid1, grid7)


def attribute(events: Sequence[EventRecord]) -> tuple[list[SaveRecord], list[tuple[SaveRecord, RevisitEvent]], list[RevisitLabelRecord]]:
    saves = derive_saves(events)
    pairs = join_revisits(saves, derive_revisit_events(events))
    return saves, pairs, build_labels(pairs, saves)


def write_labels(path, labels: Iterable[RevisitLabelRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(LABELS_HEADER + "\n")
        for r in labels:
            fh.write(f"{r.user_id},{r.pin_id},{r.save_timestamp},{r.request_id},"
                     f"{int(r.flag_1d_rev_impre)},{int(r.flag_1d_rev_grid)},"
                     f"{int(r.flag_7d_rev_grid)},{int(r.merged)}\n")


def _bit(token: str, path, lineno) -> bool:
    if token not in ("0", "1"):
        raise AttributionError(f"{path}:{lineno}: expected 0|1, got {token!r}")
    return token == "1"


def read_labels(path) -> list[RevisitLabelRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != LABELS_HEADER:
            raise AttributionError(f"{path}: bad labels header")
        for lineno, line in enumerate(fh, start=2):
            p = line.rstrip("\n").split(",")
            if len(p) != 8:
                raise AttributionError(f"{path}:{lineno}: expected 8 fields")
            rec = RevisitLabelRecord(p[0], p[1], int(p[2]), p[3],
                                     _bit(p[4], path, lineno), _bit(p[5], path, lineno), _bit(p[6], path, lineno))
            if rec.merged != _bit(p[7], path, lineno):
                raise AttributionError(f"{path}:{lineno}: merged flag disagrees with the three label flags")
            out.append(rec)
    return out


PAIRS_HEADER = "user_id,pin_id,save_ts,request_id,revisit_ts,kind,day_offset"


def write_pairs(path, pairs: Iterable[tuple[SaveRecord, RevisitEvent]]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(PAIRS_HEADER + "\n")
        for s, r in pairs:
            fh.write(f"{s.user_id},{s.pin_id},{s.save_timestamp},{s.request_id},"
                     f"{r.revisit_timestamp},{r.kind.value},{day_offset(s, r)}\n")


def read_pairs(path) -> list[tuple[SaveRecord, RevisitEvent]]:
    out = []
    with open(path, encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != PAIRS_HEADER:
            raise AttributionError(f"{path}: bad pairs header")
        for line in fh:
            user, pin, save_ts, req, rv_ts, kind, _ = line.rstrip("\n").split(",")
            save_ts, rv_ts = int(save_ts), int(rv_ts)
            out.append((SaveRecord(user, pin, save_ts, day_index(save_ts), req, Surface.RELATED_PINS),
                        RevisitEvent(user, pin, rv_ts, day_index(rv_ts), RevisitKind(kind))))
    return out


SAVES_HEADER = "user_id,pin_id,save_ts,request_id,surface"


def write_saves(path, saves: Iterable[SaveRecord]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(SAVES_HEADER + "\n")
        for s in saves:
            fh.write(f"{s.user_id},{s.pin_id},{s.save_timestamp},{s.request_id},{s.surface.value}\n")


def read_saves(path) -> list[SaveRecord]:
    out = []
    with open(path, encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != SAVES_HEADER:
            raise AttributionError(f"{path}: bad saves header")
        for line in fh:
            user, pin, ts, req, surface = line.rstrip("\n").split(",")
            ts = int(ts)
            out.append(SaveRecord(user, pin, ts, day_index(ts), req, Surface(surface)))
    return out
