"""The closed restoration loop: identify, plan, fan out over tools, select, check, advance or reroute."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

from .context import ClipContext
from .degrade import parse_kind
from .errors import ConfigurationError, IdentifierUnavailableError, InvalidArgumentError, RouteExhaustedError
from .identify import HeuristicIdentifier, Identifier
from .media import VideoClip
from .quality import Assessor, NRAssessor, PSNRAssessor, QualityReport, report
from .router import (
    ROLLBACK_STRATEGIES,
    ExperienceRecord,
    HeuristicPredictor,
    KnowledgeBase,
    Route,
    RouteState,
    plan,
    reroute,
)
from .toolbox import Toolbox

log = logging.getLogger(__name__)


def iteration_cap(n: int) -> int:
    return 3 * n + 4


@dataclass
class RestoreConfig:
    strategy: str = "ours"
    assessor: str = "nr"
    rollback: bool | None = None  # None: enabled exactly for the "ours" strategy
    max_iterations: int | None = None
    seed: int = 0
    threads: int = 1
    record_experience: bool = True

    @property
    def rollback_enabled(self) -> bool:
        return self.strategy in ROLLBACK_STRATEGIES if self.rollback is None else bool(self.rollback)

    def to_json(self) -> dict:
        return dict(self.__dict__)


@dataclass
class RestorationRun:
    input: VideoClip
    output: VideoClip
    trace: list
    status: str  # "done", "exhausted" or "cap"
    iterations: int
    invocations: int
    final_active: frozenset
    path: list = field(default_factory=list)  # accepted (kind, tool) steps
    quality: QualityReport | None = None
    config: RestoreConfig | None = None

    @property
    def warning(self) -> bool:
        return self.status != "done"

    def write_trace(self, path) -> Path:
        return write_trace(self.trace, path)


def select_best(candidates):
    """Highest score wins; ties go to the earliest candidate."""
    candidates = list(candidates)
    if not candidates:
        raise InvalidArgumentError("no candidates to select from")
    best = 0
    for i, (_, score) in enumerate(candidates):
        if score > candidates[best][1]:
            best = i
    return best, candidates[best]


def make_assessor(name: str, thresholds=None) -> Assessor:
    if isinstance(name, Assessor):
        return name
    if name == "nr":
        return NRAssessor(thresholds)
    if name == "psnr":
        return PSNRAssessor()
    raise ConfigurationError(f"unknown assessor {name!r}")


class _Tracer:
    def __init__(self):
        self.events = []

    def __call__(self, event: str, **fields):
        self.events.append({"step": len(self.events), "event": event, **fields})


def _kinds(kinds) -> list:
    return [k.value for k in kinds]


def restore(clip: VideoClip, toolbox: Toolbox, identifier: Identifier | None = None,
            context: ClipContext | None = None, config: RestoreConfig | None = None,
            kb: KnowledgeBase | None = None, predictor=None, assessor: Assessor | None = None) -> RestorationRun:
    """Run the restoration loop on ``clip``; never raises for exhausted or capped runs."""
    config = config or RestoreConfig()
    context = context or ClipContext.from_clip(clip)
    identifier = identifier or HeuristicIdentifier()
    predictor = predictor or HeuristicPredictor()
    assessor = assessor or make_assessor(config.assessor)
    kb = kb if kb is not None else KnowledgeBase()
    trace = _Tracer()
    trace("config", config=config.to_json(), identifier=type(identifier).__name__, assessor=assessor.name)
    start_invocations = toolbox.invocations

    try:
        profile = identifier.identify(clip, context)
    except IdentifierUnavailableError as exc:
        raise ConfigurationError(f"identifier unavailable and no fallback: {exc}") from exc
    trace("identify", severity={k.value: s.label for k, s in profile.severity.items() if s},
          scores={k.value: float(v) for k, v in profile.scores.items()})
    initial = profile
    cap = config.max_iterations or iteration_cap(len(profile.active))

    current = clip
    current_score = assessor.score(clip, context)
    visited = [(clip, current_score)]
    visited_paths = [[]]
    status = "done"
    iterations = 0

    if not profile.active:
        trace("done", status=status, path=[], final_active=[])
        return RestorationRun(clip, clip, trace.events, status, 0, 0, frozenset(), [], None, config)

    route = plan(profile, config.strategy, kb, predictor, config.seed)
    trace("plan", route=_kinds(route.subtasks), origin=route.origin)
    state = RouteState.start(route)
    done_kinds: set = set()

    def roll_back(snap):
        nonlocal current, current_score
        current, current_score, id_state = snap
        identifier.restore(id_state)
        trace("rollback", to_step=len(state.completed), prefix=_kinds(state.prefix))

    pool = ThreadPoolExecutor(max(1, config.threads)) if config.threads > 1 else None
    try:
        while state.remaining:
            if iterations >= cap:
                status = "cap"
                break
            kind = state.remaining[0]
            tools = toolbox[kind]
            if pool is not None:
                outs = list(pool.map(lambda t: toolbox.apply_tool(t, current, context), tools))
            else:
                outs = [toolbox.apply_tool(t, current, context) for t in tools]
            candidates = []
            for tool, out in zip(tools, outs):
                score = assessor.score(out, context, kind)
                trace("invoke", kind=kind.value, tool=tool.name, score=score)
                candidates.append((out, score))
            iterations += 1
            best_i, (best_clip, best_score) = select_best(candidates)
            trace("select", kind=kind.value, tool=tools[best_i].name, score=best_score)

            id_state = identifier.snapshot()
            identifier.notify_applied(kind)
            after = identifier.identify(best_clip, context)
            removed = after.severity[kind] <= identifier.success_level
            trace("check", kind=kind.value, removed=bool(removed), severity=after.severity[kind].label)

            if removed or not config.rollback_enabled:
                state.advance(tools[best_i].name, (current, current_score, id_state))
                done_kinds.add(kind)
                current, current_score = best_clip, best_score
                visited.append((current, current_score))
                visited_paths.append([(k.value, t) for k, t in state.completed])
                # re-identification: keep still-active kinds, append newly revealed ones
                still = [k for k in state.remaining if k in after.active]
                fresh = [k for k in sorted(after.active, key=lambda k: k.index)
                         if k not in done_kinds and k not in still]
                if fresh:
                    fresh_order = predictor.complete(fresh, set(), kb) or fresh
                    trace("reveal", kinds=_kinds(fresh_order))
                    still += fresh_order
                state.remaining = still
                continue

            identifier.restore(id_state)
            visited.append((best_clip, best_score))
            visited_paths.append([(k.value, t) for k, t in state.completed] + [(kind.value, tools[best_i].name)])
            try:
                new_route = reroute(state, kind, predictor, kb, on_rollback=roll_back)
            except RouteExhaustedError:
                status = "exhausted"
                trace("exhausted", failed_prefixes=[_kinds(p) for p in sorted(state.failed_prefixes)])
                break
            trace("reroute", route=_kinds(new_route.subtasks), failed=_kinds(state.prefix + (kind,)))
    finally:
        if pool is not None:
            pool.shutdown()

    path = [(k.value, t) for k, t in state.completed]
    if status != "done":
        # surface the best-scoring intermediate; earliest wins ties
        best_i, (current, current_score) = select_best(visited)
        path = visited_paths[best_i]
    final_active = identifier.identify(current, context).active if status == "done" else frozenset(state.remaining)
    invocations = toolbox.invocations - start_invocations
    trace("done", status=status, path=path, final_active=_kinds(sorted(final_active, key=lambda k: k.index)),
          iterations=iterations, rollbacks=state.rollback_count)
    if status != "done":
        log.warning("restoration of %s ended with status %s", clip.id, status)

    if config.record_experience:
        ts = kb.next_timestamp()
        degr = dict(initial.severity)
        degr = {k: s for k, s in degr.items() if s}
        for i, prefix in enumerate(sorted(state.failed_prefixes, key=lambda p: [k.index for k in p])):
            if set(prefix) <= set(degr):
                kb.record_experience(ExperienceRecord(degr, prefix, (), False, None, ts + i))
        seq = [k for k, _ in state.completed if k in degr]
        kb.record_experience(ExperienceRecord(
            degr, tuple(seq), tuple(t for k, t in state.completed if k in degr),
            status == "done" and not final_active, float(current_score), kb.next_timestamp()))
        kb.consolidate()

    return RestorationRun(clip, current, trace.events, status, iterations, invocations, frozenset(final_active),
                          path, None, config)


def evaluate(run: RestorationRun, reference: VideoClip, context: ClipContext | None = None) -> RestorationRun:
    run.quality = report(run.output, reference, context)
    return run


# ---------------------------------------------------------------------------
# traces


def _jsonable(obj):
    if isinstance(obj, float):
        return float(repr(obj)) if obj == obj else None
    return obj


def write_trace(events, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for event in events:
            fh.write(json.dumps(event, sort_keys=True, default=_jsonable) + "\n")
    return path


def read_trace(path) -> list:
    with Path(path).open() as fh:
        return [json.loads(line) for line in fh if line.strip()]


def trace_path(events) -> tuple:
    """Status and the accepted (kind, tool) steps recorded by the final event."""
    done = [e for e in events if e["event"] == "done"]
    if not done:
        raise InvalidArgumentError("trace has no terminal event")
    return done[-1]["status"], done[-1]["path"]


def replay(events, clip: VideoClip, toolbox: Toolbox, context: ClipContext | None = None) -> VideoClip:
    """Re-apply the tool sequence that produced the run's output to ``clip``."""
    _, path = trace_path(events)
    context = context or ClipContext.from_clip(clip)
    out = clip
    for kind, tool_name in path:
        tool = toolbox.tool(tool_name)
        if tool.targets != parse_kind(kind):
            raise InvalidArgumentError(f"trace pairs tool {tool_name} with kind {kind}")
        out = toolbox.apply_tool(tool, out, context)
    return out


def route_from_trace(events) -> Route:
    plans = [e for e in events if e["event"] == "plan"]
    return Route(tuple(plans[0]["route"]), plans[0]["origin"]) if plans else Route((), "empty")
