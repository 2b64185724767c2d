"""Synthetic multi-day event logs with configurable revisit decay curves.

Each user gets an independent random stream derived from ``(rng_seed,
user_id)``, so generating users in any order or on any number of workers
gives the same log.  Pins carry two latent scores drawn once per log: a
revisit propensity (surfaced as sidecar coordinate ``f0``) and a repin
appeal (coordinate ``f1``).
"""

from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, fields
from typing import Any, Mapping, Optional, Sequence

import numpy as np

from .events import (
    CONTENT_TOPICS,
    SECONDS_PER_DAY,
    Action,
    EventRecord,
    Surface,
    Topic,
)

N_REVISIT_DAYS = 10

# Revisit impressions (share of savers per day) at days 0, 1 and 9.
DEFAULT_IMPRESSION_ANCHORS = {0: 0.146, 1: 0.195, 9: 0.087}
# Grid-click revisit volume per saved pin: 4.7% on day 0, halved on day 1,
# halved again on day 3, 0.5% on day 5 and 0.3% on day 9.
DEFAULT_GRID_ANCHORS = {0: 0.047, 1: 0.0235, 3: 0.01175, 5: 0.005, 9: 0.003}

# Logit shift applied to revisit probabilities per unit of pin propensity
# when planted_signal_strength = 1.
REVISIT_SIGNAL_SCALE = 1.0

# Requests start early enough in the day that every follow-up action and
# same-day revisit still fits before midnight.
_REQUEST_WINDOW = SECONDS_PER_DAY - 3600
_ACTION_DELAY_MAX = 600

_PIN_STREAM = 0x5EED_0001
_FEATURE_STREAM = 0x5EED_0002


class GenConfigError(ValueError):
    pass


def interpolate_anchors(anchors: Mapping[int, float], n: int = N_REVISIT_DAYS) -> list[float]:
    """Linear interpolation between anchored days; flat beyond the outermost anchors."""
    days = sorted(anchors)
    values = [anchors[d] for d in days]
    return [round(float(np.interp(d, days, values)), 12) for d in range(n)]


def _uniform_topics() -> dict[Topic, float]:
    return {t: 1.0 / len(CONTENT_TOPICS) for t in CONTENT_TOPICS}


@dataclass
class GenConfig:
    n_users: int = 1000
    n_days: int = 30
    requests_per_user_day: float = 1.0
    candidates_per_request: int = 10
    p_repin: float = 0.05
    p_grid_click: float = 0.1
    p_click: float = 0.03
    p_long_click_given_click: float = 0.3
    # Per-save probability of a revisit impression / grid-click on day d after the save.
    revisit_impression_probs: list[float] = field(
        default_factory=lambda: interpolate_anchors(DEFAULT_IMPRESSION_ANCHORS))
    revisit_grid_probs: list[float] = field(
        default_factory=lambda: interpolate_anchors(DEFAULT_GRID_ANCHORS))
    # Scales the whole grid-click curve of a topic.
    topic_multipliers: dict[Topic, float] = field(default_factory=dict)
    # Scales the grid-click curve of a topic from day 3 on (long-term revisits only).
    topic_tail_multipliers: dict[Topic, float] = field(default_factory=dict)
    topic_mixture: dict[Topic, float] = field(default_factory=_uniform_topics)
    n_pins: int = 5000
    feature_dim: int = 8
    planted_signal_strength: float = 0.0
    repin_signal_strength: float = 0.0
    # Gamma shape of per-user activity (mean 1); larger is more homogeneous.
    activity_shape: float = 2.0
    # Logit shift of revisit probabilities per unit of log user activity.
    activity_revisit_coupling: float = 0.0
    appeal_propensity_correlation: float = 0.0
    other_saves_per_user_day: float = 0.1
    rng_seed: int = 0

    def validate(self) -> None:
        if self.n_users < 1:
            raise GenConfigError("n_users must be positive")
        if self.n_days < N_REVISIT_DAYS:
            raise GenConfigError(f"n_days must be >= {N_REVISIT_DAYS} (got {self.n_days})")
        if self.requests_per_user_day <= 0:
            raise GenConfigError("requests_per_user_day must be positive")
        if self.candidates_per_request < 1:
            raise GenConfigError("candidates_per_request must be positive")
        if self.candidates_per_request > self.n_pins:
            raise GenConfigError("candidates_per_request exceeds n_pins")
        if self.feature_dim < 0:
            raise GenConfigError("feature_dim must be non-negative")
        if self.planted_signal_strength < 0:
            raise GenConfigError("planted_signal_strength must be >= 0")
        if not -1.0 <= self.appeal_propensity_correlation <= 1.0:
            raise GenConfigError("appeal_propensity_correlation must lie in [-1, 1]")
        if self.activity_shape <= 0:
            raise GenConfigError("activity_shape must be positive")
        if self.other_saves_per_user_day < 0:
            raise GenConfigError("other_saves_per_user_day must be >= 0")
        for name in ("p_repin", "p_grid_click", "p_click", "p_long_click_given_click"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise GenConfigError(f"{name} must lie in [0, 1] (got {p})")
        for name in ("revisit_impression_probs", "revisit_grid_probs"):
            vec = getattr(self, name)
            if len(vec) != N_REVISIT_DAYS:
                raise GenConfigError(f"{name} needs {N_REVISIT_DAYS} entries (got {len(vec)})")
            if any(not 0.0 <= p <= 1.0 for p in vec):
                raise GenConfigError(f"{name} entries must lie in [0, 1]")
        for name in ("topic_multipliers", "topic_tail_multipliers"):
            if any(m <= 0 for m in getattr(self, name).values()):
                raise GenConfigError(f"{name} values must be positive")
        mix = self.topic_mixture
        if not mix or any(p < 0 for p in mix.values()) or abs(sum(mix.values()) - 1.0) > 1e-9:
            raise GenConfigError("topic_mixture must be a probability simplex")

    def grid_curve(self, topic: Topic) -> np.ndarray:
        """Per-day grid-click revisit probabilities for a saved pin of ``topic``."""
        curve = np.asarray(self.revisit_grid_probs, dtype=float) * self.topic_multipliers.get(topic, 1.0)
        curve[3:] *= self.topic_tail_multipliers.get(topic, 1.0)
        return np.clip(curve, 0.0, 1.0)

    @classmethod
    def from_mapping(cls, values: Mapping[str, Any]) -> "GenConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise GenConfigError(f"unknown generator keys: {sorted(unknown)}")
        kwargs: dict[str, Any] = {}
        for key, value in values.items():
            if key in ("topic_multipliers", "topic_tail_multipliers", "topic_mixture"):
                if value == []:  # an empty map is written as "[]"
                    value = {}
                if not isinstance(value, dict):
                    raise GenConfigError(f"{key} must be a [topic: value, ...] map")
                try:
                    value = {Topic(k): float(v) for k, v in value.items()}
                except ValueError as exc:
                    raise GenConfigError(f"{key}: {exc}") from None
            elif key in ("revisit_impression_probs", "revisit_grid_probs"):
                value = [float(v) for v in value]
            kwargs[key] = value
        cfg = cls(**kwargs)
        cfg.validate()
        return cfg

    def to_mapping(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, dict):
                value = {k.value: v for k, v in value.items()}
            out[f.name] = value
        return out


def fit_tail_multiplier(target_ratio: float, grid_probs: Sequence[float]) -> float:
    """Tail multiplier giving a day 3-6 / day 0-6 grid-revisit volume ratio of ``target_ratio``."""
    if not 0.0 < target_ratio < 1.0:
        raise ValueError("target_ratio must lie in (0, 1)")
    short = float(sum(grid_probs[0:3]))
    long = float(sum(grid_probs[3:7]))
    if short <= 0 or long <= 0:
        raise ValueError("grid curve needs mass on both days 0-2 and days 3-6")
    return target_ratio * short / ((1.0 - target_ratio) * long)


def user_id_for(index: int) -> str:
    return f"u{index:06d}"


def pin_id_for(index: int) -> str:
    return f"p{index:06d}"


def pin_index(pin_id: str) -> int:
    if not pin_id.startswith("p"):
        raise ValueError(f"not a generated pin id: {pin_id!r}")
    return int(pin_id[1:])


def user_seed(rng_seed: int, user_id: str) -> np.random.SeedSequence:
    digest = hashlib.blake2b(user_id.encode("utf-8"), digest_size=8).digest()
    return np.random.SeedSequence([rng_seed & 0xFFFFFFFFFFFFFFFF, int.from_bytes(digest, "little")])


@dataclass(frozen=True)
class PinCatalog:
    topics: list[Topic]
    revisit_propensity: np.ndarray
    repin_appeal: np.ndarray

    @classmethod
    def build(cls, config: GenConfig) -> "PinCatalog":
        rng = np.random.default_rng(np.random.SeedSequence([config.rng_seed & 0xFFFFFFFFFFFFFFFF, _PIN_STREAM]))
        names = sorted(config.topic_mixture, key=lambda t: t.value)
        probs = np.array([config.topic_mixture[t] for t in names])
        idx = rng.choice(len(names), size=config.n_pins, p=probs / probs.sum())
        z = rng.standard_normal(config.n_pins)
        noise = rng.standard_normal(config.n_pins)
        rho = config.appeal_propensity_correlation
        return cls(
            topics=[names[i] for i in idx],
            revisit_propensity=z,
            repin_appeal=rho * z + math.sqrt(1.0 - rho * rho) * noise,
        )


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _shift_probs(probs: np.ndarray, shift: float) -> np.ndarray:
    if shift == 0.0:
        return probs
    with np.errstate(divide="ignore"):
        logits = np.log(probs) - np.log1p(-probs)
    shifted = _sigmoid(logits + shift)
    # Keep degenerate 0/1 probabilities pinned.
    return np.where((probs <= 0.0) | (probs >= 1.0), probs, shifted)


_SURFACE_ORDER = {s: i for i, s in enumerate(Surface)}
_ACTION_ORDER = {a: i for i, a in enumerate(Action)}


def _event_sort_key(e: EventRecord):
    return (e.timestamp, e.user_id, e.pin_id, _SURFACE_ORDER[e.surface], _ACTION_ORDER[e.action], e.request_id)


class _UserSimulator:
    def __init__(self, config: GenConfig, pins: PinCatalog):
        self.config = config
        self.pins = pins
        self.impression_probs = np.asarray(config.revisit_impression_probs, dtype=float)
        self.grid_curves = {t: config.grid_curve(t) for t in set(pins.topics)}

    def _revisits(self, rng, user_id, pin, topic, save_ts, shift, out):
        cfg = self.config
        save_day = save_ts // SECONDS_PER_DAY
        p_imp = _shift_probs(self.impression_probs, shift)
        p_grid = _shift_probs(self.grid_curves[topic], shift)
        draws_imp = rng.random(N_REVISIT_DAYS)
        draws_grid = rng.random(N_REVISIT_DAYS)
        for d in range(N_REVISIT_DAYS):
            day = save_day + d
            if day >= cfg.n_days:
                break
            for action, hit in ((Action.IMPRESSION, draws_imp[d] < p_imp[d]),
                                (Action.GRID_CLICK, draws_grid[d] < p_grid[d])):
                if not hit:
                    continue
                lo = save_ts + 1 if d == 0 else day * SECONDS_PER_DAY
                hi = (day + 1) * SECONDS_PER_DAY
                if lo >= hi:
                    continue
                ts = int(rng.integers(lo, hi))
                out.append(EventRecord(ts, user_id, pin, Surface.OWN_PROFILE, action, "", topic, None))

    def run(self, user_index: int) -> list[EventRecord]:
        cfg = self.config
        pins = self.pins
        user_id = user_id_for(user_index)
        rng = np.random.default_rng(user_seed(cfg.rng_seed, user_id))
        activity = float(rng.gamma(cfg.activity_shape, 1.0 / cfg.activity_shape))
        user_shift = cfg.activity_revisit_coupling * math.log(max(activity, 1e-12))
        k = cfg.candidates_per_request
        base_repin_logit = (math.log(cfg.p_repin) - math.log1p(-cfg.p_repin)
                            if 0.0 < cfg.p_repin < 1.0 else None)
        out: list[EventRecord] = []
        for day in range(cfg.n_days):
            n_requests = int(rng.poisson(cfg.requests_per_user_day * activity))
            for r in range(n_requests):
                request_id = f"{user_id}-d{day}-r{r}"
                req_ts = day * SECONDS_PER_DAY + int(rng.integers(0, _REQUEST_WINDOW))
                cands: list[int] = []
                while len(cands) < k:
                    for c in rng.integers(0, cfg.n_pins, size=k):
                        c = int(c)
                        if c not in cands and len(cands) < k:
                            cands.append(c)
                u = rng.random((k, 5))
                delays = rng.integers(1, _ACTION_DELAY_MAX, size=(k, 4))
                for slot, c in enumerate(cands):
                    pin = pin_id_for(c)
                    topic = pins.topics[c]
                    out.append(EventRecord(req_ts, user_id, pin, Surface.RELATED_PINS,
                                           Action.IMPRESSION, request_id, topic, slot))
                    if base_repin_logit is None:
                        p_repin = cfg.p_repin
                    else:
                        p_repin = 1.0 / (1.0 + math.exp(-(base_repin_logit
                                                          + cfg.repin_signal_strength * pins.repin_appeal[c])))
                    clicked = u[slot, 2] < cfg.p_click
                    flags = (
                        (Action.GRID_CLICK, u[slot, 0] < cfg.p_grid_click),
                        (Action.REPIN, u[slot, 1] < p_repin),
                        (Action.CLICK, clicked),
                        (Action.LONG_CLICK, clicked and u[slot, 3] < cfg.p_long_click_given_click),
                    )
                    for j, (action, hit) in enumerate(flags):
                        if not hit:
                            continue
                        ts = req_ts + int(delays[slot, j])
                        out.append(EventRecord(ts, user_id, pin, Surface.RELATED_PINS,
                                               action, request_id, topic, slot))
                        if action is Action.REPIN:
                            shift = (cfg.planted_signal_strength * REVISIT_SIGNAL_SCALE
                                     * float(pins.revisit_propensity[c]) + user_shift)
                            self._revisits(rng, user_id, pin, topic, ts, shift, out)
            n_other = int(rng.poisson(cfg.other_saves_per_user_day * activity))
            for _ in range(n_other):
                c = int(rng.integers(0, cfg.n_pins))
                pin = pin_id_for(c)
                topic = pins.topics[c]
                ts = day * SECONDS_PER_DAY + int(rng.integers(0, _REQUEST_WINDOW))
                out.append(EventRecord(ts, user_id, pin, Surface.OTHER, Action.REPIN, "", topic, None))
                shift = (cfg.planted_signal_strength * REVISIT_SIGNAL_SCALE
                         * float(pins.revisit_propensity[c]) + user_shift)
                self._revisits(rng, user_id, pin, topic, ts, shift, out)
        return out


def generate_log(config: GenConfig, workers: int = 1) -> list[EventRecord]:
    """Generate a synthetic event log sorted by (timestamp, user_id, pin_id)."""
    config.validate()
    sim = _UserSimulator(config, PinCatalog.build(config))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            per_user = list(pool.map(sim.run, range(config.n_users)))
    else:
        per_user = [sim.run(i) for i in range(config.n_users)]
    events = [e for chunk in per_user for e in chunk]
    events.sort(key=_event_sort_key)
    return events


# ---------------------------------------------------------------------------
# Feature sidecar
# ---------------------------------------------------------------------------

SIDECAR_DIGITS = 9


@dataclass
class FeatureSidecar:
    """Dense features keyed by (request_id, pin_id), rows sorted by key."""

    keys: list[tuple[str, str]]
    values: np.ndarray

    def __post_init__(self):
        self.index = {k: i for i, k in enumerate(self.keys)}

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def row(self, request_id: str, pin_id: str) -> np.ndarray:
        return self.values[self.index[(request_id, pin_id)]]


class SidecarMismatchError(ValueError):
    pass


def emit_feature_sidecar(config: GenConfig, log: Sequence[EventRecord]) -> FeatureSidecar:
    """One feature row per impressed (request, candidate).

    ``f0`` is the pin's revisit propensity, ``f1`` its repin appeal; the
    remaining coordinates are standard normal noise.
    """
    config.validate()
    pins = PinCatalog.build(config)
    keys = set()
    for e in log:
        if e.surface is not Surface.RELATED_PINS or e.action is not Action.IMPRESSION:
            continue
        try:
            idx = pin_index(e.pin_id)
        except ValueError as exc:
            raise SidecarMismatchError(str(exc)) from None
        if idx >= config.n_pins or pins.topics[idx] is not e.topic:
            raise SidecarMismatchError(f"pin {e.pin_id} does not belong to this config's catalog")
        if e.timestamp // SECONDS_PER_DAY >= config.n_days:
            raise SidecarMismatchError(f"event at {e.timestamp} lies beyond the configured horizon")
        keys.add((e.request_id, e.pin_id))
    ordered = sorted(keys)
    n, dim = len(ordered), config.feature_dim
    values = np.zeros((n, dim))
    if dim > 0 and n > 0:
        idx = np.array([pin_index(p) for _, p in ordered])
        values[:, 0] = pins.revisit_propensity[idx]
        if dim > 1:
            values[:, 1] = pins.repin_appeal[idx]
        if dim > 2:
            rng = np.random.default_rng(
                np.random.SeedSequence([config.rng_seed & 0xFFFFFFFFFFFFFFFF, _FEATURE_STREAM]))
            values[:, 2:] = rng.standard_normal((n, dim - 2))
    return FeatureSidecar(ordered, values)


def _fmt(x: float) -> str:
    return f"{x:.{SIDECAR_DIGITS}g}"


def write_sidecar(path, sidecar: FeatureSidecar) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(["request_id", "pin_id"] + [f"f{i}" for i in range(sidecar.dim)]) + "\n")
        for (req, pin), row in zip(sidecar.keys, sidecar.values):
            fh.write(",".join([req, pin] + [_fmt(x) for x in row]) + "\n")


def read_sidecar(path) -> FeatureSidecar:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().rstrip("\n").split(",")
        if header[:2] != ["request_id", "pin_id"]:
            raise ValueError(f"{path}: not a feature sidecar file")
        dim = len(header) - 2
        keys, rows = [], []
        for lineno, line in enumerate(fh, start=2):
            parts = line.rstrip("\n").split(",")
            if len(parts) != dim + 2:
                raise ValueError(f"{path}:{lineno}: expected {dim + 2} fields")
            keys.append((parts[0], parts[1]))
            rows.append([float(x) for x in parts[2:]])
    values = np.array(rows, dtype=float).reshape(len(rows), dim)
    return FeatureSidecar(keys, values)


def config_comment_lines() -> list[str]:
    """Explanatory comments written at the top of generated config files."""
    return [
        "# revisit_impression_probs: per-save probability of a revisit impression on day d.",
        "#   Anchors 0.146 (day 0), 0.195 (day 1), 0.087 (day 9) are share-of-users values,",
        "#   reused here as per-save probabilities; other days are linearly interpolated.",
        "# revisit_grid_probs: per-save probability of a revisit grid-click on day d.",
        "#   Anchors 0.047 (day 0), 0.0235 (day 1), 0.01175 (day 3), 0.005 (day 5), 0.003 (day 9);",
        "#   other days are linearly interpolated.",
    ]


def default_config_text(config: Optional[GenConfig] = None) -> str:
    from .config import format_value

    config = config or GenConfig()
    lines = config_comment_lines()
    for key, value in config.to_mapping().items():
        lines.append(f"{key} = {format_value(value)}")
    return "\n".join(lines) + "\n"
