import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from restoroute.context import ClipContext
from restoroute.degrade import ALL_KINDS, DegradationKind as K, DegradationSpec, Severity, compose_mixed
from restoroute.errors import ConfigurationError, IdentifierUnavailableError, InvalidArgumentError
from restoroute.identify import Identifier, OracleIdentifier
from restoroute.media import VideoClip
from restoroute.orchestrator import (
    RestoreConfig,
    iteration_cap,
    read_trace,
    replay,
    restore,
    route_from_trace,
    select_best,
    trace_path,
    write_trace,
)
from restoroute.quality import Assessor, psnr
from restoroute.router import KnowledgeBase, ScriptedPredictor, t_tree
from restoroute.toolbox import Tool, Toolbox, default_toolbox

from conftest import constant_clip


# --- toy fixtures: cheap tools and an assessor that prefers brighter clips -----


def _shift(clip, ctx, delta):
    return VideoClip(np.clip(clip.data + delta, 0, 1), clip.fps, clip.id)


def toy_toolbox():
    tools = []
    for kind in ALL_KINDS:
        for j, delta in enumerate((0.01, 0.03, 0.02)):
            tools.append(Tool(f"{kind.value}-{j}", kind, _shift, 1.0, {"delta": delta}))
    return Toolbox(tools)


class MeanAssessor(Assessor):
    name = "mean"

    def score(self, clip, context=None, subtask=None):
        return float(clip.data.mean())


class OrderedOracle(OracleIdentifier):
    """Oracle whose removals only count when ``order`` is respected."""

    def __init__(self, truth, order):
        super().__init__(truth)
        self.order = list(order)

    def notify_applied(self, kind):
        before = self.order[: self.order.index(kind)]
        if all(k in self._removed for k in before):
            super().notify_applied(kind)


class NeverRemoves(OracleIdentifier):
    def notify_applied(self, kind):
        pass


class RandomOracle(OracleIdentifier):
    def __init__(self, truth, seed, p):
        super().__init__(truth)
        self.rng = np.random.default_rng(seed)
        self.p = p

    def notify_applied(self, kind):
        if self.rng.random() < self.p:
            super().notify_applied(kind)


def toy_clip():
    return constant_clip(0.3, frames=2, height=8, width=8)


# --- select_best ---------------------------------------------------------------


def test_select_best_examples():
    assert select_best([("a", 5.0)]) == (0, ("a", 5.0))
    assert select_best([("a", 10), ("b", 30), ("c", 20)])[0] == 1
    assert select_best([("a", 30), ("b", 30)])[0] == 0
    with pytest.raises(InvalidArgumentError):
        select_best([])


@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=8))
def test_select_best_is_first_argmax(scores):
    i, (_, s) = select_best([(j, v) for j, v in enumerate(scores)])
    assert s == max(scores) and i == scores.index(max(scores))


def test_iteration_cap():
    assert [iteration_cap(n) for n in (1, 2, 3)] == [7, 10, 13]


# --- loop behaviour with toy tools ---------------------------------------------


def test_pristine_input_is_untouched():
    tb = toy_toolbox()
    clip = toy_clip()
    run = restore(clip, tb, OracleIdentifier({}), assessor=MeanAssessor())
    assert run.invocations == 0 and tb.invocations == 0
    assert run.output is clip and run.status == "done"


def test_fan_out_tries_every_tool_and_keeps_the_best():
    tb = toy_toolbox()
    run = restore(toy_clip(), tb, OracleIdentifier({K.NOISE: Severity.MEDIUM}), assessor=MeanAssessor())
    assert run.invocations == 3
    assert run.path == [("noise", "noise-1")]
    np.testing.assert_allclose(run.output.data, 0.33)
    invokes = [e for e in run.trace if e["event"] == "invoke"]
    assert [e["tool"] for e in invokes] == ["noise-0", "noise-1", "noise-2"]


def test_rollback_reroutes_to_the_working_order():
    truth = {K.NOISE: Severity.MEDIUM, K.COMPRESSION: Severity.MEDIUM}
    ident = OrderedOracle(truth, [K.COMPRESSION, K.NOISE])
    predictor = ScriptedPredictor([K.NOISE, K.COMPRESSION], 1.0, 0)
    kb = KnowledgeBase()
    run = restore(toy_clip(), toy_toolbox(), ident, assessor=MeanAssessor(), predictor=predictor, kb=kb)
    assert run.status == "done" and not run.final_active
    assert run.iterations == 3 <= t_tree(2)
    assert [k for k, _ in run.path] == ["compression", "noise"]
    events = [e["event"] for e in run.trace]
    assert "reroute" in events
    assert kb.best_sequence({K.NOISE, K.COMPRESSION}) == (K.COMPRESSION, K.NOISE)
    assert any(not r.success and r.sequence == (K.NOISE,) for r in kb.records)


def test_rollback_disabled_carries_on():
    truth = {K.NOISE: Severity.MEDIUM, K.COMPRESSION: Severity.MEDIUM}
    ident = OrderedOracle(truth, [K.COMPRESSION, K.NOISE])
    predictor = ScriptedPredictor([K.NOISE, K.COMPRESSION], 1.0, 0)
    run = restore(toy_clip(), toy_toolbox(), ident, config=RestoreConfig(strategy="experience"),
                  assessor=MeanAssessor(), predictor=predictor)
    assert run.iterations == 2
    assert run.final_active == {K.NOISE}


def test_exhausted_run_surfaces_best_intermediate():
    truth = {K.NOISE: Severity.MEDIUM, K.BLUR: Severity.MEDIUM}
    run = restore(toy_clip(), toy_toolbox(), NeverRemoves(truth), assessor=MeanAssessor())
    assert run.status == "exhausted" and run.warning
    assert run.final_active == {K.NOISE, K.BLUR}
    np.testing.assert_allclose(run.output.data, 0.33)
    assert "exhausted" in [e["event"] for e in run.trace]


def test_cap_terminates():
    truth = {K.NOISE: Severity.MEDIUM, K.BLUR: Severity.MEDIUM}
    run = restore(toy_clip(), toy_toolbox(), NeverRemoves(truth), None,
                  RestoreConfig(max_iterations=1), assessor=MeanAssessor())
    assert run.status == "cap" and run.iterations == 1


@settings(max_examples=200)
@given(st.sets(st.sampled_from(ALL_KINDS), min_size=1, max_size=4), st.integers(0, 2**31), st.floats(0.1, 1.0))
def test_every_run_halts_within_cap(kinds, seed, p):
    truth = {k: Severity.MEDIUM for k in kinds}
    run = restore(toy_clip(), toy_toolbox(), RandomOracle(truth, seed, p), assessor=MeanAssessor(),
                  config=RestoreConfig(seed=seed), predictor=ScriptedPredictor(None, 1.0, seed))
    assert run.iterations <= iteration_cap(len(kinds))
    assert run.status in ("done", "exhausted", "cap")
    assert run.status != "done" or not run.final_active or run.final_active <= kinds
    selects = [e for e in run.trace if e["event"] == "select"]
    assert all(e["tool"].endswith("-1") for e in selects)


def test_identifier_without_fallback_is_configuration_error():
    class Down(Identifier):
        def identify(self, clip, context=None):
            raise IdentifierUnavailableError("down")

    with pytest.raises(ConfigurationError):
        restore(toy_clip(), toy_toolbox(), Down(), assessor=MeanAssessor())


# --- desk-scale runs with the shipped toolbox -----------------------------------


def desk_sample(gt, specs, cid):
    clip, label = compose_mixed(gt, [DegradationSpec(k, s, {}, seed) for k, s, seed in specs], cid)
    ctx = ClipContext.from_clip(gt, with_reference=True)
    return clip, label, ctx


def gain(clip, out, gt):
    return psnr(clip.data, gt.data), psnr(out.data, gt.data)


def test_single_noise_medium(desk_scene):
    clip, label, ctx = desk_sample(desk_scene, [(K.NOISE, Severity.MEDIUM, 1)], "n")
    run = restore(clip, default_toolbox(), OracleIdentifier(label), ctx)
    assert run.iterations == 1 and run.invocations == 3
    before, after = gain(clip, run.output, desk_scene)
    assert after > before


def test_noise_compression_reaches_empty_set(desk_scene):
    clip, label, ctx = desk_sample(desk_scene, [(K.NOISE, Severity.MEDIUM, 2), (K.COMPRESSION, Severity.MEDIUM, 3)], "nc")
    run = restore(clip, default_toolbox(), OracleIdentifier(label), ctx)
    assert run.status == "done" and not run.final_active
    assert run.iterations <= t_tree(2)


def test_trace_determinism_and_replay(tmp_path, small_scene):
    clip, label, ctx = desk_sample(small_scene, [(K.HAZE, Severity.HIGH, 4), (K.NOISE, Severity.LOW, 5)], "hn")
    runs = []
    for threads in (1, 1, 3):
        cfg = RestoreConfig(seed=7, threads=threads)
        runs.append(restore(clip, default_toolbox(), OracleIdentifier(label), ctx, cfg))
    a, b, c = runs
    assert a.trace == b.trace
    assert np.array_equal(a.output.data, b.output.data)
    assert np.array_equal(a.output.data, c.output.data)
    strip = lambda tr: [{k: v for k, v in e.items() if k != "config"} for e in tr]
    assert strip(a.trace) == strip(c.trace)

    path = write_trace(a.trace, tmp_path / "trace.jsonl")
    assert path.read_bytes() == write_trace(b.trace, tmp_path / "again.jsonl").read_bytes()
    events = read_trace(path)
    assert trace_path(events)[0] == "done"
    out = replay(events, clip, default_toolbox(), ctx)
    assert out.data.tobytes() == a.output.data.tobytes()
    assert route_from_trace(events).origin == "ours"


def test_replay_rejects_mismatched_trace(small_scene):
    events = [{"event": "done", "status": "done", "path": [["noise", "unsharp-mask"]]}]
    with pytest.raises(InvalidArgumentError):
        replay(events, small_scene, default_toolbox())
    with pytest.raises(InvalidArgumentError):
        trace_path([])
