"""JSON-over-HTTP adapters for externally hosted identifier, assessor and route predictor.

The service base URL comes from the constructor or ``RESTOROUTE_SERVICE_URL``.
Endpoints: ``POST /identify``, ``POST /assess`` and ``POST /next``.
"""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
import urllib.error
import urllib.request
from pathlib import Path

from .context import ClipContext
from .degrade import ALL_KINDS, Severity, parse_kind
from .errors import IdentifierUnavailableError, InvalidArgumentError
from .identify import DegradationProfile, HeuristicIdentifier, Identifier, sample_indices
from .media import MANIFEST_NAME, VideoClip, save_clip
from .quality import Assessor, NRAssessor
from .router import HeuristicPredictor, RoutePredictor, _key

log = logging.getLogger(__name__)

ENV_URL = "RESTOROUTE_SERVICE_URL"
DEFAULT_TIMEOUT = 5.0


def service_url(url: str | None = None) -> str:
    url = url or os.environ.get(ENV_URL)
    if not url:
        raise IdentifierUnavailableError(f"no service URL given and {ENV_URL} is unset")
    return url.rstrip("/")


def post_json(url: str, payload: dict, timeout: float = DEFAULT_TIMEOUT) -> dict:
    req = urllib.request.Request(url, json.dumps(payload).encode(), {"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=timeout) as resp:
            body = json.loads(resp.read().decode())
    except (urllib.error.URLError, OSError, ValueError) as exc:
        raise IdentifierUnavailableError(f"{url}: {exc}") from exc
    if not isinstance(body, dict):
        raise IdentifierUnavailableError(f"{url}: response is not a JSON object")
    return body


class ExternalIdentifier(Identifier):
    """Posts the clip's manifest path and sampled frame files; expects ``{"severity": {...}}``."""

    def __init__(self, url: str | None = None, timeout: float = DEFAULT_TIMEOUT, fallback: Identifier | None = None,
                 success_level=Severity.LOW):
        self.url = url
        self.timeout = timeout
        self.fallback = fallback
        self.success_level = Severity.parse(success_level)

    def _query(self, clip: VideoClip) -> DegradationProfile:
        with tempfile.TemporaryDirectory(prefix="restoroute-") as tmp:
            root = save_clip(clip, Path(tmp) / clip.id)
            frames = json.loads((root / MANIFEST_NAME).read_text())["frames"]
            payload = {
                "manifest": str(root / MANIFEST_NAME),
                "frames": [str(root / frames[i]) for i in sample_indices(len(frames))],
            }
            body = post_json(service_url(self.url) + "/identify", payload, self.timeout)
        try:
            severity = {parse_kind(k): Severity.parse(v) for k, v in body["severity"].items()}
        except (KeyError, AttributeError, InvalidArgumentError) as exc:
            raise IdentifierUnavailableError(f"malformed identify response: {exc}") from exc
        return DegradationProfile(severity, {k: float(severity.get(k, 0)) for k in ALL_KINDS})

    def identify(self, clip: VideoClip, context: ClipContext | None = None) -> DegradationProfile:
        try:
            return self._query(clip)
        except IdentifierUnavailableError as exc:
            if self.fallback is None:
                raise
            log.warning("external identifier unavailable, using fallback: %s", exc)
            return self.fallback.identify(clip, context)


class ExternalAssessor(Assessor):
    """Expects ``{"score": number}``; falls back to the no-reference proxy."""

    name = "external"

    def __init__(self, url: str | None = None, timeout: float = DEFAULT_TIMEOUT, fallback: Assessor | None = None):
        self.url = url
        self.timeout = timeout
        self.fallback = fallback if fallback is not None else NRAssessor()

    def score(self, clip, context=None, subtask=None) -> float:
        try:
            with tempfile.TemporaryDirectory(prefix="restoroute-") as tmp:
                root = save_clip(clip, Path(tmp) / clip.id)
                payload = {"manifest": str(root / MANIFEST_NAME),
                           "subtask": None if subtask is None else parse_kind(subtask).value}
                body = post_json(service_url(self.url) + "/assess", payload, self.timeout)
            value = float(body["score"])
            if not math.isfinite(value):
                raise ValueError("non-finite score")
            return value
        except (IdentifierUnavailableError, KeyError, TypeError, ValueError) as exc:
            log.warning("external assessor unavailable, using fallback: %s", exc)
            return self.fallback.score(clip, context, subtask)


class ExternalPredictor(RoutePredictor):
    """Asks the service for the next step; any failure defers to the heuristic predictor."""

    name = "external"

    def __init__(self, url: str | None = None, timeout: float = DEFAULT_TIMEOUT, fallback: RoutePredictor | None = None):
        self.url = url
        self.timeout = timeout
        self.fallback = fallback or HeuristicPredictor()

    def rank(self, active, prefix, kb) -> list:
        order = self.fallback.rank(active, prefix, kb)
        rules = {} if kb is None else {_key(k): [e.to_json() for e in v] for k, v in kb.rules.items()}
        payload = {"active": [k.value for k in order], "prefix": [k.value for k in prefix],
                   "failed_prefixes": getattr(self, "_failed", []), "rules": rules}
        try:
            body = post_json(service_url(self.url) + "/next", payload, self.timeout)
            head = parse_kind(body["next"])
        except (IdentifierUnavailableError, KeyError, InvalidArgumentError) as exc:
            log.warning("external predictor unavailable, using heuristic: %s", exc)
            return order
        if head not in active:
            log.warning("external predictor proposed inactive kind %s, using heuristic", head.value)
            return order
        return [head] + [k for k in order if k != head]

    def next_step(self, active, failed_prefixes, kb, prefix=()):
        self._failed = [[k.value for k in p] for p in sorted(failed_prefixes, key=lambda p: [k.index for k in p])]
        return super().next_step(active, failed_prefixes, kb, prefix)


def external_identifier_with_fallback(url: str | None = None, timeout: float = DEFAULT_TIMEOUT) -> ExternalIdentifier:
    return ExternalIdentifier(url, timeout, fallback=HeuristicIdentifier())
