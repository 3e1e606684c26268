"""Route planning: strategies, experience knowledge base, reroute with a failed-prefix cache,
and the invocation-count models used by the routing benchmark."""

from __future__ import annotations

import hashlib
import itertools
import json
import logging
import math
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .degrade import ALL_KINDS, DegradationKind, Severity, parse_kind
from .errors import InvalidArgumentError, NothingToPlanError, RouteExhaustedError

log = logging.getLogger(__name__)

K = DegradationKind

# Removal order: codec artifacts first, then temporal/spatial sampling, then the
# per-pixel degradations in reverse of how they were applied.
EXPERT_ORDER = (K.COMPRESSION, K.LOW_FPS, K.LOW_RES, K.NOISE, K.BLUR, K.HAZE, K.RAIN, K.LOW_LIGHT)
_EXPERT_RANK = {k: i for i, k in enumerate(EXPERT_ORDER)}

STRATEGIES = ("reverse", "random", "expert", "zero-shot", "experience", "ours")
ROLLBACK_STRATEGIES = frozenset({"ours"})


def expert_order(kinds) -> list:
    return sorted({parse_kind(k) for k in kinds}, key=_EXPERT_RANK.__getitem__)


def _key(kinds) -> str:
    return "+".join(k.value for k in expert_order(kinds))


@dataclass(frozen=True)
class Route:
    subtasks: tuple
    origin: str = "manual"

    def __post_init__(self):
        subtasks = tuple(parse_kind(k) for k in self.subtasks)
        if len(set(subtasks)) != len(subtasks):
            raise InvalidArgumentError(f"route repeats a kind: {[k.value for k in subtasks]}")
        object.__setattr__(self, "subtasks", subtasks)

    def __len__(self) -> int:
        return len(self.subtasks)

    def __iter__(self):
        return iter(self.subtasks)

    def to_json(self) -> dict:
        return {"subtasks": [k.value for k in self.subtasks], "origin": self.origin}


# ---------------------------------------------------------------------------
# experience


@dataclass(frozen=True)
class ExperienceRecord:
    degradation: dict  # kind -> Severity
    sequence: tuple
    tools: tuple = ()
    success: bool = False
    score: float | None = None
    timestamp: int = 0
    id: str = ""

    def __post_init__(self):
        deg = {parse_kind(k): Severity.parse(v) for k, v in dict(self.degradation).items()}
        seq = tuple(parse_kind(k) for k in self.sequence)
        if len(set(seq)) != len(seq) or not set(seq) <= set(deg):
            raise InvalidArgumentError("experience sequence must be distinct kinds from its degradation set")
        object.__setattr__(self, "degradation", deg)
        object.__setattr__(self, "sequence", seq)
        object.__setattr__(self, "tools", tuple(self.tools))
        if not self.id:
            object.__setattr__(self, "id", hashlib.sha1(json.dumps(self._body(), sort_keys=True).encode()).hexdigest()[:16])

    @property
    def kinds(self) -> frozenset:
        return frozenset(self.degradation)

    def _body(self) -> dict:
        return {
            "degradation": {k.value: s.label for k, s in sorted(self.degradation.items(), key=lambda kv: kv[0].index)},
            "sequence": [k.value for k in self.sequence],
            "tools": list(self.tools),
            "success": bool(self.success),
            "score": self.score,
            "timestamp": int(self.timestamp),
        }

    def to_json(self) -> dict:
        return {"id": self.id, **self._body()}

    @classmethod
    def from_json(cls, obj: dict) -> "ExperienceRecord":
        return cls(obj["degradation"], tuple(obj["sequence"]), tuple(obj.get("tools", ())), bool(obj["success"]),
                   obj.get("score"), int(obj.get("timestamp", 0)), obj.get("id", ""))


@dataclass(frozen=True)
class RuleEntry:
    sequence: tuple
    success_rate: float
    mean_score: float | None
    trials: int

    def to_json(self) -> dict:
        return {"sequence": [k.value for k in self.sequence], "success_rate": self.success_rate,
                "mean_score": self.mean_score, "trials": self.trials}

    @classmethod
    def from_json(cls, obj: dict) -> "RuleEntry":
        return cls(tuple(parse_kind(k) for k in obj["sequence"]), float(obj["success_rate"]),
                   obj["mean_score"], int(obj["trials"]))


class KnowledgeBase:
    """Experience records plus the ranked routing rules consolidated from them."""

    FILENAME = "experience.json"

    def __init__(self, records=(), rules: dict | None = None):
        self.records: list = list(records)
        self.rules: dict = dict(rules or {})
        self._lock = threading.Lock()

    def __eq__(self, other) -> bool:
        return isinstance(other, KnowledgeBase) and self.to_json() == other.to_json()

    def record_experience(self, record: ExperienceRecord) -> None:
        with self._lock:
            self.records.append(record)

    def next_timestamp(self) -> int:
        return len(self.records)

    def consolidate(self) -> "KnowledgeBase":
        """Recompute rules from records; deterministic and idempotent."""
        groups: dict = {}
        for rec in self.records:
            groups.setdefault(rec.kinds, {}).setdefault(rec.sequence, []).append(rec)
        rules = {}
        for kinds, by_seq in groups.items():
            entries = []
            for seq, recs in by_seq.items():
                scores = [r.score for r in recs if r.score is not None]
                entries.append(RuleEntry(seq, sum(r.success for r in recs) / len(recs),
                                         float(np.mean(scores)) if scores else None, len(recs)))
            entries.sort(key=lambda e: (-e.success_rate,
                                        -(e.mean_score if e.mean_score is not None else -math.inf),
                                        tuple(_EXPERT_RANK[k] for k in e.sequence)))
            rules[kinds] = entries
        with self._lock:
            self.rules = rules
        return self

    def ranked(self, kinds) -> list:
        return list(self.rules.get(frozenset(parse_kind(k) for k in kinds), []))

    def best_sequence(self, kinds):
        """Top-ranked complete, at least once successful sequence for exactly ``kinds``."""
        kinds = frozenset(parse_kind(k) for k in kinds)
        for entry in self.ranked(kinds):
            if set(entry.sequence) == kinds and entry.success_rate > 0:
                return entry.sequence
        return None

    def to_json(self) -> dict:
        return {
            "records": [r.to_json() for r in self.records],
            "rules": {_key(k): [e.to_json() for e in v] for k, v in sorted(self.rules.items(), key=lambda kv: _key(kv[0]))},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "KnowledgeBase":
        rules = {frozenset(parse_kind(n) for n in key.split("+")): [RuleEntry.from_json(e) for e in v]
                 for key, v in obj.get("rules", {}).items()}
        return cls([ExperienceRecord.from_json(r) for r in obj.get("records", [])], rules)

    def merge(self, other: "KnowledgeBase") -> "KnowledgeBase":
        """Union of records, the later writer winning on equal ids."""
        by_id = {r.id: r for r in self.records}
        by_id.update({r.id: r for r in other.records})
        return KnowledgeBase(by_id.values()).consolidate()

    @classmethod
    def load(cls, path) -> "KnowledgeBase":
        path = Path(path)
        if not path.exists():
            return cls()
        return cls.from_json(json.loads(path.read_text()))

    def save(self, path, merge: bool = True) -> Path:
        """Write atomically, first merging records already on disk."""
        path = Path(path)
        kb = KnowledgeBase.load(path).merge(self) if merge and path.exists() else self
        tmp = path.with_suffix(path.suffix + f".{os.getpid()}.tmp")
        tmp.write_text(json.dumps(kb.to_json(), indent=2) + "\n")
        os.replace(tmp, path)
        return path


# ---------------------------------------------------------------------------
# predictors


def _dead_end(prefix: tuple, rest: frozenset, failed: set) -> bool:
    """True when every completion of ``prefix`` over ``rest`` passes a cached failure."""
    if prefix in failed:
        return True
    if not rest:
        return False
    return all(_dead_end(prefix + (k,), rest - {k}, failed) for k in rest)


class RoutePredictor:
    name = "base"

    def rank(self, active, prefix, kb) -> list:
        raise NotImplementedError

    def next_step(self, active, failed_prefixes, kb, prefix=()):
        """The preferred next kind, or None if every extension of ``prefix`` is a dead end."""
        active = frozenset(parse_kind(k) for k in active)
        prefix = tuple(prefix)
        for kind in self.rank(active, prefix, kb):
            if kind in active and not _dead_end(prefix + (kind,), active - {kind}, set(failed_prefixes)):
                return kind
        return None

    def complete(self, active, failed_prefixes, kb, prefix=()) -> list:
        active = frozenset(parse_kind(k) for k in active)
        seq = []
        while active:
            kind = self.next_step(active, failed_prefixes, kb, tuple(prefix) + tuple(seq))
            if kind is None:
                return None
            seq.append(kind)
            active = active - {kind}
        return seq


class HeuristicPredictor(RoutePredictor):
    """Knowledge-base ranking when available, otherwise the expert removal order."""

    name = "heuristic"

    def rank(self, active, prefix, kb) -> list:
        order = expert_order(active)
        if kb is not None:
            full = frozenset(prefix) | active
            for entry in kb.ranked(full):
                seq = entry.sequence
                if entry.success_rate > 0 and seq[: len(prefix)] == tuple(prefix) and len(seq) > len(prefix):
                    head = seq[len(prefix)]
                    return [head] + [k for k in order if k != head]
        return order


class ScriptedPredictor(RoutePredictor):
    """Test fixture: proposes the hidden correct order with probability ``p``, else a random alternative."""

    name = "scripted"

    def __init__(self, correct_order=None, p: float = 1.0, seed: int = 0):
        if not 0 < p <= 1:
            raise InvalidArgumentError(f"p must lie in (0, 1], got {p}")
        self.correct = None if correct_order is None else tuple(parse_kind(k) for k in correct_order)
        self.p = p
        self.rng = np.random.default_rng(seed)

    def rank(self, active, prefix, kb) -> list:
        kinds = sorted(active, key=lambda k: k.index)
        order = [kinds[i] for i in self.rng.permutation(len(kinds))]
        if self.correct is not None:
            right = [k for k in self.correct if k in active]
            if right and self.rng.random() < self.p:
                order.remove(right[0])
                order.insert(0, right[0])
        return order


# ---------------------------------------------------------------------------
# plans and reroutes


def plan(profile_or_kinds, strategy: str = "ours", kb: KnowledgeBase | None = None, predictor=None,
         seed: int = 0) -> Route:
    active = getattr(profile_or_kinds, "active", profile_or_kinds)
    active = frozenset(parse_kind(k) for k in active)
    if not active:
        raise NothingToPlanError("no active degradations")
    if strategy not in STRATEGIES:
        raise InvalidArgumentError(f"unknown strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")
    predictor = predictor or HeuristicPredictor()
    if strategy == "expert":
        seq = expert_order(active)
    elif strategy == "reverse":
        seq = expert_order(active)[::-1]
    elif strategy == "random":
        kinds = sorted(active, key=lambda k: k.index)
        seq = [kinds[i] for i in np.random.default_rng(seed).permutation(len(kinds))]
    elif strategy == "zero-shot":
        seq = predictor.complete(active, set(), KnowledgeBase())
    else:
        found = kb.best_sequence(active) if kb is not None else None
        seq = list(found) if found is not None else predictor.complete(active, set(), kb)
    return Route(tuple(seq), strategy)


@dataclass
class RouteState:
    remaining: list
    completed: list = field(default_factory=list)  # (kind, tool name)
    failed_prefixes: set = field(default_factory=set)
    rollback_count: int = 0
    snapshots: list = field(default_factory=list)

    @classmethod
    def start(cls, route: Route) -> "RouteState":
        return cls(list(route.subtasks))

    @property
    def prefix(self) -> tuple:
        return tuple(k for k, _ in self.completed)

    def advance(self, tool_name: str, snapshot=None) -> None:
        kind = self.remaining.pop(0)
        self.completed.append((kind, tool_name))
        self.snapshots.append(snapshot)

    def rollback(self):
        """Undo the last completed step; returns the snapshot taken before it."""
        kind, _ = self.completed.pop()
        self.rollback_count += 1
        return kind, self.snapshots.pop()


def reroute(state: RouteState, failed_kind, predictor: RoutePredictor | None = None,
            kb: KnowledgeBase | None = None, on_rollback=None) -> Route:
    """Cache the failed prefix and plan an alternative over the still-active kinds.

    Rolls back one completed step at a time while the current prefix is a
    dead end; ``on_rollback(snapshot)`` lets the caller restore its state.
    """
    failed_kind = parse_kind(failed_kind)
    if not state.remaining or state.remaining[0] != failed_kind:
        raise InvalidArgumentError("failed kind must head the remaining route")
    predictor = predictor or HeuristicPredictor()
    state.failed_prefixes.add(state.prefix + (failed_kind,))
    active = frozenset(state.remaining)
    while True:
        seq = predictor.complete(active, state.failed_prefixes, kb, state.prefix)
        if seq is not None:
            state.remaining = list(seq)
            return Route(tuple(seq), "reroute")
        if not state.completed:
            raise RouteExhaustedError("every ordering of the active kinds has failed")
        state.failed_prefixes.add(state.prefix)
        kind, snap = state.rollback()
        active = active | {kind}
        if on_rollback is not None:
            on_rollback(snap)


# ---------------------------------------------------------------------------
# complexity


def _check_n(n: int) -> int:
    if int(n) != n or n < 1:
        raise InvalidArgumentError(f"n must be a positive integer, got {n}")
    return int(n)


def t_full(n: int) -> int:
    n = _check_n(n)
    return n * math.factorial(n)


def t_tree(n: int) -> int:
    n = _check_n(n)
    return sum(math.factorial(n) // math.factorial(n - k) for k in range(1, n + 1))


def t_ours(n: int, p: float) -> float:
    n = _check_n(n)
    if not 0 < p <= 1:
        raise InvalidArgumentError(f"p must lie in (0, 1], got {p}")
    return n / p + (1.0 - p) * n * n


@dataclass(frozen=True)
class SimulationStats:
    strategy: str
    n: int
    p: float
    trials: int
    mean: float
    min: int
    max: int
    runtime: float

    def to_json(self) -> dict:
        return dict(self.__dict__)


def _ours_trial(n: int, p: float, rng: np.random.Generator) -> int:
    # each attempt costs one invocation; a failure at depth i also replays the i-step chain
    total = 0
    for depth in range(1, n + 1):
        failures = int(rng.geometric(p)) - 1
        total += 1 + failures * (1 + depth)
    return total


def simulate_strategy(n: int, strategy: str, p: float = 1.0, trials: int = 1000, seed: int = 0,
                      cost: float = 1.0) -> SimulationStats:
    """Tool-invocation statistics of a routing strategy against a synthetic executor."""
    n = _check_n(n)
    if not 0 < p <= 1:
        raise InvalidArgumentError(f"p must lie in (0, 1], got {p}")
    if trials < 1:
        raise InvalidArgumentError("trials must be >= 1")
    if strategy in ("full", "exhaustive"):
        counts = np.full(trials, t_full(n))
    elif strategy == "tree":
        counts = np.full(trials, t_tree(n))
    elif strategy == "ours":
        rng = np.random.default_rng(seed)
        counts = np.array([_ours_trial(n, p, rng) for _ in range(trials)])
    elif strategy in STRATEGIES:
        counts = np.full(trials, n)
    else:
        raise InvalidArgumentError(f"unknown strategy {strategy!r}")
    mean = float(counts.mean())
    return SimulationStats(strategy, n, float(p), int(trials), mean, int(counts.min()), int(counts.max()), mean * cost)


def enumerate_full(n: int) -> int:
    """Brute force: run every permutation start to finish."""
    return sum(len(perm) for perm in itertools.permutations(range(_check_n(n))))


def enumerate_tree(n: int) -> int:
    """Brute force: count nodes of the permutation prefix tree (excluding the root)."""
    items = range(_check_n(n))
    return sum(1 for k in range(1, n + 1) for _ in itertools.permutations(items, k))
