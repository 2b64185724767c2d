"""Random builders and reference oracles shared by the test modules."""

from __future__ import annotations

import itertools
import math
from collections import defaultdict

import numpy as np

from revisit_lab.events import Action, CONTENT_TOPICS, EventRecord, SECONDS_PER_DAY, Surface

ACTIONS = list(Action)


def random_log(seed: int, n_events: int = 2000, n_users: int = 8, n_pins: int = 12,
               n_days: int = 20, related_share: float = 0.45) -> list[EventRecord]:
    """A valid but unstructured log: dense (user, pin) collisions and repeated saves.

    Timestamps are coarse (quarter-day steps plus a small jitter) so that equal
    timestamps and day-boundary cases occur often.
    """
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n_events):
        user = f"u{int(rng.integers(n_users))}"
        pin = f"p{int(rng.integers(n_pins))}"
        ts = int(rng.integers(n_days * 4)) * (SECONDS_PER_DAY // 4) + int(rng.integers(0, 3))
        r = rng.random()
        if r < related_share:
            surface = Surface.RELATED_PINS
            action = ACTIONS[int(rng.integers(len(ACTIONS)))]
            req = f"{user}-q{int(rng.integers(40))}"
            slot = int(rng.integers(10))
        elif r < related_share + 0.4:
            surface = Surface.OWN_PROFILE
            action = ACTIONS[int(rng.integers(len(ACTIONS)))]
            req, slot = "", None
        else:
            surface = Surface.OTHER
            action = Action.REPIN
            req, slot = "", None
        topic = CONTENT_TOPICS[int(rng.integers(len(CONTENT_TOPICS)))]
        out.append(EventRecord(ts, user, pin, surface, action, req, topic, slot))
    out.sort(key=lambda e: (e.timestamp, e.user_id, e.pin_id))
    return out


def consistent_related_log(seed: int, n_requests: int = 60, n_pins: int = 15) -> list[EventRecord]:
    """Related-pins requests where every action follows an impression of the same candidate."""
    rng = np.random.default_rng(seed)
    out = []
    for r in range(n_requests):
        user = f"u{int(rng.integers(5))}"
        req = f"r{r:04d}"
        ts = int(rng.integers(0, 10 * SECONDS_PER_DAY))
        pins = rng.choice(n_pins, size=4, replace=False)
        for slot, p in enumerate(pins):
            pin = f"p{int(p)}"
            out.append(EventRecord(ts, user, pin, Surface.RELATED_PINS, Action.IMPRESSION, req, slot=slot))
            for action in (Action.GRID_CLICK, Action.REPIN, Action.CLICK, Action.LONG_CLICK):
                if rng.random() < 0.3:
                    out.append(EventRecord(ts + int(rng.integers(1, 50)), user, pin, Surface.RELATED_PINS,
                                           action, req, slot=slot))
    return out


def split_world(gen_config, train_days: int):
    """Generate, label and assemble; return (train, holdout) datasets split by request day."""
    from revisit_lab import attribution, dataset, loggen, perf_features

    log = loggen.generate_log(gen_config)
    sidecar = loggen.emit_feature_sidecar(gen_config, log)
    _, pairs, labels = attribution.attribute(log)
    perf = perf_features.build_perf_tables(log, pairs, range(gen_config.n_days))
    labeled = dataset.attach_revisit_label(dataset.extract_action_labels(log), labels)
    usable = dataset.usable_request_days(0, gen_config.n_days - 1)
    split = usable.start + train_days
    return (dataset.assemble(sidecar, perf, labeled, range(usable.start, split)),
            dataset.assemble(sidecar, perf, labeled, range(split, usable.stop)))


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with average ranks for ties."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=bool)
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores))
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2 + 1
        i = j + 1
    n_pos, n_neg = labels.sum(), (~labels).sum()
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# Oracles shared by the unit tests and the acceptance suite
# ---------------------------------------------------------------------------

def oracle_join(saves, revisits):
    """Literal condition: same (user, pin), later timestamp, day offset 0..6, latest prior save wins."""
    by_key = defaultdict(list)
    for s in saves:
        by_key[(s.user_id, s.pin_id)].append(s)
    out = []
    for r in revisits:
        prior = [s for s in by_key[(r.user_id, r.pin_id)] if s.save_timestamp < r.revisit_timestamp]
        if not prior:
            continue
        latest = max(prior, key=lambda s: (s.save_timestamp, s.request_id))
        if 0 <= r.revisit_timestamp // SECONDS_PER_DAY - latest.save_timestamp // SECONDS_PER_DAY <= 6:
            out.append((latest, r))
    return out


def oracle_triples(log, family):
    """Literal perf-feature family definitions over the raw log."""
    from revisit_lab.perf_features import FeatureFamily as F

    day = SECONDS_PER_DAY
    kind = Action.IMPRESSION if family in (F.RP_1D_REV_IMPRE, F.OVERALL_REV_IMPRE) else Action.GRID_CLICK
    any_saves, rp_saves = defaultdict(list), defaultdict(list)
    for s in log:
        if s.action is Action.REPIN:
            any_saves[(s.user_id, s.pin_id)].append(s.timestamp)
            if s.surface is Surface.RELATED_PINS:
                rp_saves[(s.user_id, s.pin_id)].append(s.timestamp)
    out = []
    for e in log:
        if e.surface is not Surface.OWN_PROFILE or e.action is not kind:
            continue
        key = (e.user_id, e.pin_id)
        if family in (F.OVERALL_REV_IMPRE, F.OVERALL_REV_GRID):
            if any(t < e.timestamp for t in any_saves[key]):
                out.append((e.pin_id, e.user_id, e.timestamp // day))
            continue
        prior = [t for t in rp_saves[key] if t < e.timestamp]
        if not prior:
            continue
        d = e.timestamp // day - max(prior) // day
        max_d = 6 if family is F.RP_7D_REV_GRID else 0
        if 0 <= d <= max_d:
            out.append((e.pin_id, e.user_id, e.timestamp // day))
    return sorted(out)


def oracle_window(triples, w, as_of):
    acts, users = defaultdict(int), defaultdict(set)
    for pin, user, d in triples:
        if as_of - w + 1 <= d <= as_of:
            acts[pin] += 1
            users[pin].add(user)
    return {p: (acts[p], len(users[p])) for p in acts}


def reference_metrics(rel, k):
    """Per-request ranking metrics written out from their definitions with plain loops."""
    from revisit_lab.evaluator import METRICS

    rel = [int(x) for x in rel]
    n_pos = sum(rel)
    out = {"hits": 1.0 if any(rel[:k]) else 0.0}
    if n_pos == 0:
        return {**out, **{m: None for m in METRICS if m != "hits"}}
    depth = min(k, len(rel))
    dcg = sum((2 ** rel[i] - 1) / math.log2(i + 2) for i in range(depth))
    ideal_rel = sorted(rel, reverse=True)
    idcg = sum((2 ** ideal_rel[i] - 1) / math.log2(i + 2) for i in range(depth))
    out["ndcg"] = dcg / idcg
    ap, seen = 0.0, 0
    for i in range(depth):
        if rel[i]:
            seen += 1
            ap += seen / (i + 1)
    out["map"] = ap / min(k, n_pos)
    out["recip_rank"] = 0.0
    for i in range(depth):
        if rel[i]:
            out["recip_rank"] = 1.0 / (i + 1)
            break
    out["recall"] = min(1.0, sum(rel[:k]) / n_pos)
    pairs = [(i, j) for i, j in itertools.product(range(len(rel)), repeat=2) if rel[i] == 1 and rel[j] == 0]
    out["pairwise_accuracy"] = sum(i < j for i, j in pairs) / len(pairs) if pairs else None
    return out


def random_model_case(seed, n=7, d=5, hidden=(6, 4)):
    """Random params (away from zero), features, binary labels and loss weights."""
    from revisit_lab.events import ALL_TASKS
    from revisit_lab.ranker import init_params

    rng = np.random.default_rng(seed)
    params = init_params(d, hidden, seed=seed)
    for a in params.arrays():
        a += rng.normal(0, 0.3, a.shape)
    X = rng.normal(size=(n, d))
    Y = (rng.random((n, len(ALL_TASKS))) < 0.4).astype(float)
    w = {t: float(rng.uniform(0.2, 2.0)) for t in ALL_TASKS}
    return params, X, Y, w


def finite_difference_errors(params, X, Y, w, h=1e-5):
    """Relative error of every analytic gradient entry against central differences."""
    from revisit_lab.ranker import loss, loss_and_grad

    _, grads = loss_and_grad(params, X, Y, w)
    errs = []
    for arr, g in zip(params.arrays(), grads):
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + h
            up = loss(params, X, Y, w)
            arr[idx] = orig - h
            down = loss(params, X, Y, w)
            arr[idx] = orig
            num = (up - down) / (2 * h)
            errs.append(abs(g[idx] - num) / max(abs(g[idx]), abs(num), 1e-8))
    return errs
