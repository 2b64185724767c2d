"""Training-example assembly.

Rows are impressed (request, candidate) pairs from Related Pins.  Each row
carries the sidecar features followed by 30 log1p-compressed pin perf
counts, plus five binary labels (grid-click, repin, click, long-click,
repin-and-revisit).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional

import numpy as np

from .attribution import LABEL_WINDOW_DAYS, RevisitLabelRecord
from .events import ALL_TASKS, Action, EventRecord, Surface, day_index
from .loggen import FeatureSidecar
from .perf_features import N_PERF_FEATURES, PerfTables

LABEL_COLUMNS = ("y_grid", "y_repin", "y_click", "y_longclick", "y_rp_rv")
DATASET_DIGITS = 9


class DatasetError(ValueError):
    pass


@dataclass
class ActionLabels:
    user_id: str
    request_day: int
    grid_click: bool = False
    repin: bool = False
    click: bool = False
    long_click: bool = False
    repin_and_revisit: bool = False

    def as_tuple(self) -> tuple[bool, bool, bool, bool, bool]:
        return (self.grid_click, self.repin, self.click, self.long_click, self.repin_and_revisit)


_ACTION_FIELDS = {
    Action.GRID_CLICK: "grid_click",
    Action.REPIN: "repin",
    Action.CLICK: "click",
    Action.LONG_CLICK: "long_click",
}


def extract_action_labels(events: Iterable[EventRecord]) -> dict[tuple[str, str], ActionLabels]:
    """Engagement labels per impressed (request_id, pin_id) on Related Pins."""
    rp = [e for e in events if e.surface is Surface.RELATED_PINS]
    labels: dict[tuple[str, str], ActionLabels] = {}
    for e in rp:
        if e.action is Action.IMPRESSION:
            key = (e.request_id, e.pin_id)
            if key not in labels:
                labels[key] = ActionLabels(e.user_id, day_index(e.timestamp))
    for e in rp:
        if e.action is Action.IMPRESSION:
            continue
        row = labels.get((e.request_id, e.pin_id))
        if row is None:
            raise DatasetError(
                f"{e.action.value} on pin {e.pin_id} in request {e.request_id} has no impression")
        setattr(row, _ACTION_FIELDS[e.action], True)
    return labels


def attach_revisit_label(action_labels: dict[tuple[str, str], ActionLabels],
                         revisit_labels: Iterable[RevisitLabelRecord]) -> dict[tuple[str, str], ActionLabels]:
    """Set the repin-and-revisit label from the merged revisitation flag of each save.

    Mutates and returns ``action_labels``.
    """
    for rec in revisit_labels:
        row = action_labels.get((rec.request_id, rec.pin_id))
        if row is None or not row.repin:
            raise DatasetError(
                f"revisit label for pin {rec.pin_id} in request {rec.request_id!r} has no repin row")
        if rec.merged:
            row.repin_and_revisit = True
    for row in action_labels.values():
        if row.repin_and_revisit and not row.repin:
            raise DatasetError("repin-and-revisit label without repin")
    return action_labels


def usable_request_days(first_day: int, last_day: int) -> range:
    """Request days whose 7-day revisit labels have fully matured by ``last_day``."""
    return range(first_day, last_day - (LABEL_WINDOW_DAYS - 1) + 1)


@dataclass
class Dataset:
    request_ids: list[str]
    pin_ids: list[str]
    user_ids: list[str]
    features: np.ndarray  # (n, dim)
    labels: np.ndarray  # (n, 5) of 0/1
    request_days: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return len(self.request_ids)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, mask: np.ndarray) -> "Dataset":
        idx = np.flatnonzero(mask)
        return Dataset(
            [self.request_ids[i] for i in idx],
            [self.pin_ids[i] for i in idx],
            [self.user_ids[i] for i in idx],
            self.features[idx],
            self.labels[idx],
            None if self.request_days is None else self.request_days[idx],
        )


def assemble(sidecar: FeatureSidecar, perf: PerfTables,
             labeled: dict[tuple[str, str], ActionLabels],
             request_days: Optional[Iterable[int]] = None) -> Dataset:
    """Join sidecar features, point-in-time perf features and labels.

    ``request_days`` restricts rows to requests on those days.  Perf
    features of a row come from the tables refreshed before its request
    day; absent pins get zeros.
    """
    allowed = None if request_days is None else set(request_days)
    keys = sorted(k for k, row in labeled.items() if allowed is None or row.request_day in allowed)
    dim = sidecar.dim
    n = len(keys)
    feats = np.zeros((n, dim + N_PERF_FEATURES))
    labels = np.zeros((n, len(ALL_TASKS)), dtype=np.int8)
    days = np.zeros(n, dtype=np.int64)
    for i, key in enumerate(keys):
        idx = sidecar.index.get(key)
        if idx is None:
            raise DatasetError(f"no sidecar features for request {key[0]} pin {key[1]}")
        row = labeled[key]
        feats[i, :dim] = sidecar.values[idx]
        feats[i, dim:] = np.log1p(perf.features_for(key[1], row.request_day))
        labels[i] = row.as_tuple()
        days[i] = row.request_day
    return Dataset(
        [k[0] for k in keys],
        [k[1] for k in keys],
        [labeled[k].user_id for k in keys],
        feats,
        labels,
        days,
    )


def dataset_header(dim: int) -> str:
    return ",".join(["request_id", "pin_id", "user_id"] + [f"f{i}" for i in range(dim)] + list(LABEL_COLUMNS))


def write_dataset(path, ds: Dataset) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dataset_header(ds.dim) + "\n")
        for i in range(len(ds)):
            vals = ",".join(f"{x:.{DATASET_DIGITS}g}" for x in ds.features[i])
            labs = ",".join(str(int(y)) for y in ds.labels[i])
            fh.write(f"{ds.request_ids[i]},{ds.pin_ids[i]},{ds.user_ids[i]},{vals},{labs}\n")


def read_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header[:3] != ["request_id", "pin_id", "user_id"] or tuple(header[-5:]) != LABEL_COLUMNS:
            raise DatasetError(f"{path}: bad dataset header")
        dim = len(header) - 8
        req, pins, users, feats, labels = [], [], [], [], []
        for lineno, line in enumerate(fh, start=2):
            p = line.rstrip("\n").split(",")
            if len(p) != dim + 8:
                raise DatasetError(f"{path}:{lineno}: expected {dim + 8} fields, got {len(p)}")
            req.append(p[0])
            pins.append(p[1])
            users.append(p[2])
            feats.append([float(x) for x in p[3:3 + dim]])
            labels.append([int(x) for x in p[3 + dim:]])
    return Dataset(req, pins, users,
                   np.array(feats, dtype=float).reshape(len(req), dim),
                   np.array(labels, dtype=np.int8).reshape(len(req), len(ALL_TASKS)))


ACTION_LABELS_HEADER = "request_id,pin_id,user_id,request_day," + ",".join(LABEL_COLUMNS)


def write_action_labels(path, labels: dict[tuple[str, str], ActionLabels]) -> None:
    """Write labels sorted by (request_id, pin_id); the last column is the revisit label."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(ACTION_LABELS_HEADER + "\n")
        for (req, pin) in sorted(labels):
            row = labels[(req, pin)]
            flags = ",".join(str(int(f)) for f in row.as_tuple())
            fh.write(f"{req},{pin},{row.user_id},{row.request_day},{flags}\n")


def read_action_labels(path) -> dict[tuple[str, str], ActionLabels]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        if fh.readline().rstrip("\n") != ACTION_LABELS_HEADER:
            raise DatasetError(f"{path}: bad action-label header")
        for lineno, line in enumerate(fh, start=2):
            p = line.rstrip("\n").split(",")
            if len(p) != 9:
                raise DatasetError(f"{path}:{lineno}: expected 9 fields")
            out[(p[0], p[1])] = ActionLabels(p[2], int(p[3]), *(x == "1" for x in p[4:]))
    return out
