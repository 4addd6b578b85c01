"""Black-box access to NER systems under test.

``predict`` is the only way the rest of the toolkit talks to a backend: it consults the
response cache, invokes the backend on a miss, and validates every returned span against
the sentence text before anything downstream sees it.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
import time
import urllib.error
import urllib.request
from collections import defaultdict
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .core import EntityCategory, NerOutput, NerPrediction, Sentence, find_occurrences
from .errors import (
    AuthError,
    BackendError,
    BackendUnavailable,
    NetworkDisabled,
    RateLimited,
    SchemaError,
    SpanMismatch,
)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RawEntity:
    """An entity as reported by a backend, before validation."""

    start: int
    end: int
    label: str
    text: str | None = None


class NerBackend:
    """Base class for systems under test; subclasses implement :meth:`_invoke`."""

    name: str = "backend"
    version: str = "0"

    def __init__(self) -> None:
        self.invocations = 0
        self._count_lock = threading.Lock()

    @property
    def categories(self) -> frozenset[EntityCategory]:
        return frozenset()

    def invoke(self, text: str) -> list[RawEntity]:
        with self._count_lock:
            self.invocations += 1
        return self._invoke(text)

    def _invoke(self, text: str) -> list[RawEntity]:
        raise NotImplementedError


# -- cache -------------------------------------------------------------------------


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class CacheEntry:
    backend_name: str
    backend_version: str
    text_hash: str
    text: str
    predictions: tuple[NerPrediction, ...]
    fetched_at: str

    def to_json(self) -> dict:
        return {
            "backend": self.backend_name,
            "version": self.backend_version,
            "text_hash": self.text_hash,
            "text": self.text,
            "predictions": [p.to_json() for p in self.predictions],
            "fetched_at": self.fetched_at,
        }

    @classmethod
    def from_json(cls, raw: Mapping) -> CacheEntry:
        entry = cls(
            raw["backend"], raw["version"], raw["text_hash"], raw["text"],
            tuple(NerPrediction.from_json(p) for p in raw["predictions"]), raw["fetched_at"],
        )
        if text_digest(entry.text) != entry.text_hash:
            raise ValueError("cache entry hash does not match its text")
        return entry


class ResponseCache:
    """Append-only JSONL cache keyed by (backend name, backend version, exact text).

    Entries never expire.  A truncated final line (interrupted write) is ignored on load.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[tuple[str, str, str], CacheEntry] = {}
        self._lock = threading.Lock()
        self._key_locks: dict[tuple[str, str, str], threading.Lock] = defaultdict(threading.Lock)
        self.hits = 0
        self.misses = 0
        if self.path is not None and self.path.exists():
            self._load()

    def _load(self) -> None:
        text = self.path.read_text(encoding="utf-8")
        lines = text.splitlines()
        truncated = False
        for lineno, line in enumerate(lines, 1):
            if not line.strip():
                continue
            try:
                entry = CacheEntry.from_json(json.loads(line))
            except (json.JSONDecodeError, KeyError, ValueError):
                if lineno == len(lines):
                    log.warning("dropping truncated trailing line in cache %s", self.path)
                    truncated = True
                    continue
                raise ValueError(f"{self.path}:{lineno}: corrupt cache entry")
            self._entries[(entry.backend_name, entry.backend_version, entry.text)] = entry
        if truncated:
            kept = "".join(line + "\n" for line in lines[:-1] if line.strip())
            self.path.write_text(kept, encoding="utf-8")
        elif text and not text.endswith("\n"):
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write("\n")

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, backend: NerBackend, text: str) -> tuple[NerPrediction, ...] | None:
        with self._lock:
            entry = self._entries.get((backend.name, backend.version, text))
            if entry is None:
                self.misses += 1
                return None
            self.hits += 1
            return entry.predictions

    def put(self, backend: NerBackend, text: str, predictions: Sequence[NerPrediction]) -> None:
        entry = CacheEntry(
            backend.name, backend.version, text_digest(text), text, tuple(predictions),
            datetime.now(timezone.utc).isoformat(timespec="seconds"),
        )
        with self._lock:
            self._entries[(backend.name, backend.version, text)] = entry
            if self.path is not None:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(entry.to_json(), ensure_ascii=False) + "\n")

    def key_lock(self, backend: NerBackend, text: str) -> threading.Lock:
        with self._lock:
            return self._key_locks[(backend.name, backend.version, text)]


def _validate(raw: Iterable[RawEntity], text: str, backend: NerBackend) -> list[NerPrediction]:
    preds = []
    declared = {c.label for c in backend.categories}
    for ent in raw:
        if not (0 <= ent.start < ent.end <= len(text)):
            raise SpanMismatch(f"{backend.name} returned span ({ent.start}, {ent.end}) for text of length {len(text)}")
        surface = text[ent.start:ent.end]
        if ent.text is not None and ent.text != surface:
            raise SpanMismatch(f"{backend.name} reported {ent.text!r} but text has {surface!r} at ({ent.start}, {ent.end})")
        if declared and ent.label.strip() not in declared:
            raise SchemaError(f"{backend.name} returned undeclared category {ent.label!r}")
        preds.append(NerPrediction(ent.start, ent.end, surface, ent.label))
    return preds


def predict(backend: NerBackend, sentence: Sentence, cache: ResponseCache | None = None) -> NerOutput:
    """N(s): cache-first prediction with span validation."""
    if cache is None:
        preds = _validate(backend.invoke(sentence.text), sentence.text, backend)
        return NerOutput(sentence.id, tuple(preds))
    with cache.key_lock(backend, sentence.text):
        cached = cache.get(backend, sentence.text)
        if cached is not None:
            return NerOutput(sentence.id, cached)
        preds = _validate(backend.invoke(sentence.text), sentence.text, backend)
        output = NerOutput(sentence.id, tuple(preds))
        cache.put(backend, sentence.text, output.predictions)
        return output


# -- dictionary mock with fault injection ------------------------------------------

FAULT_CATEGORIES = {
    "drop_entity": "OMISSION",
    "add_entity": "OVER_LABELING",
    "relabel": "INCORRECT_CATEGORY",
    "split_entity": "RANGE_ERROR",
}


@dataclass(frozen=True)
class FaultRule:
    """Deterministic NER bug: when ``trigger`` matches the text, apply ``effect`` to ``surface``.

    ``trigger`` is ``{"substring"|"prefix"|"suffix"|"regex": pattern}``.  ``parts`` (for
    ``split_entity``) lists sub-surfaces, optionally as ``[surface, label]`` pairs.
    """

    trigger: Mapping[str, str]
    effect: str
    surface: str
    label: str | None = None
    parts: tuple = ()
    name: str = ""

    def __post_init__(self) -> None:
        if self.effect not in FAULT_CATEGORIES:
            raise ValueError(f"unknown fault effect {self.effect!r}")
        if len(self.trigger) != 1 or next(iter(self.trigger)) not in ("substring", "prefix", "suffix", "regex"):
            raise ValueError(f"bad trigger {self.trigger!r}")
        if self.effect in ("add_entity", "relabel") and not self.label:
            raise ValueError(f"{self.effect} needs a label")
        if self.effect == "split_entity" and len(self.parts) < 2:
            raise ValueError("split_entity needs at least two parts")
        object.__setattr__(self, "trigger", dict(self.trigger))
        object.__setattr__(self, "parts", tuple(tuple(p) if isinstance(p, (list, tuple)) else p for p in self.parts))

    @property
    def error_category(self) -> str:
        return FAULT_CATEGORIES[self.effect]

    @property
    def touched_surfaces(self) -> set[str]:
        out = {self.surface}
        out.update(p[0] if isinstance(p, tuple) else p for p in self.parts)
        return out

    def triggered(self, text: str) -> bool:
        (kind, pattern), = self.trigger.items()
        if kind == "substring":
            return pattern in text
        if kind == "prefix":
            return text.startswith(pattern)
        if kind == "suffix":
            return text.endswith(pattern)
        return re.search(pattern, text) is not None

    def apply(self, text: str, preds: list[NerPrediction]) -> list[NerPrediction] | None:
        """New prediction list, or ``None`` when the rule does not fire on ``text``."""
        if not self.triggered(text):
            return None
        matching = [p for p in preds if p.surface == self.surface]
        if self.effect == "drop_entity":
            return [p for p in preds if p.surface != self.surface] if matching else None
        if self.effect == "relabel":
            if not matching:
                return None
            return [NerPrediction(p.start, p.end, p.surface, self.label) if p.surface == self.surface else p
                    for p in preds]
        if self.effect == "add_entity":
            added = [NerPrediction(s, e, self.surface, self.label) for s, e in find_occurrences(self.surface, text)
                     if not any(p.overlaps(s, e) for p in preds)]
            return preds + added if added else None
        # split_entity
        if not matching:
            return None
        out = [p for p in preds if p.surface != self.surface]
        for whole in matching:
            cursor = whole.start
            for part in self.parts:
                part_surface, part_label = part if isinstance(part, tuple) else (part, whole.label)
                offset = text.find(part_surface, cursor, whole.end)
                if offset < 0:
                    raise ValueError(f"split part {part_surface!r} not inside {whole.surface!r}")
                out.append(NerPrediction(offset, offset + len(part_surface), part_surface, part_label))
                cursor = offset + len(part_surface)
        return out

    def to_json(self) -> dict:
        out: dict[str, Any] = {"trigger": dict(self.trigger), "effect": self.effect, "surface": self.surface}
        if self.label:
            out["label"] = self.label
        if self.parts:
            out["parts"] = [list(p) if isinstance(p, tuple) else p for p in self.parts]
        if self.name:
            out["name"] = self.name
        return out

    @classmethod
    def from_json(cls, raw: Mapping) -> FaultRule:
        return cls(raw["trigger"], raw["effect"], raw["surface"], raw.get("label"),
                   tuple(raw.get("parts", ())), raw.get("name", ""))


class DictionaryMockBackend(NerBackend):
    """Labels exact lexicon matches (longest first, left to right), then applies fault rules."""

    name = "mock"

    def __init__(self, lexicon: Mapping[str, str], faults: Sequence[FaultRule] = ()):
        super().__init__()
        if any(not s.strip() for s in lexicon):
            raise ValueError("lexicon surfaces must be non-empty")
        self.lexicon = dict(lexicon)
        self.faults = tuple(faults)
        ordered = sorted(self.lexicon, key=lambda s: (-len(s), s))
        self._pattern = (
            re.compile(r"(?<!\w)(?:" + "|".join(re.escape(s) for s in ordered) + r")(?!\w)")
            if ordered else None
        )
        blob = json.dumps({"lexicon": sorted(self.lexicon.items()), "faults": [f.to_json() for f in self.faults]},
                          sort_keys=True, ensure_ascii=False)
        self.version = hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]

    @property
    def categories(self) -> frozenset[EntityCategory]:
        labels = set(self.lexicon.values())
        for f in self.faults:
            if f.label:
                labels.add(f.label)
            labels.update(p[1] for p in f.parts if isinstance(p, tuple))
        return frozenset(EntityCategory(label) for label in labels)

    def lexicon_predictions(self, text: str) -> list[NerPrediction]:
        if self._pattern is None:
            return []
        return [NerPrediction(m.start(), m.end(), m.group(), self.lexicon[m.group()])
                for m in self._pattern.finditer(text)]

    def fired_rules(self, text: str) -> list[FaultRule]:
        preds = self.lexicon_predictions(text)
        fired = []
        for rule in self.faults:
            result = rule.apply(text, preds)
            if result is not None:
                fired.append(rule)
                preds = result
        return fired

    def _invoke(self, text: str) -> list[RawEntity]:
        preds = self.lexicon_predictions(text)
        for rule in self.faults:
            result = rule.apply(text, preds)
            if result is not None:
                preds = result
        return [RawEntity(p.start, p.end, p.label, p.surface) for p in sorted(preds)]


def dictionary_mock_backend(lexicon: Mapping[str, str], faults: Sequence[FaultRule] = ()) -> DictionaryMockBackend:
    return DictionaryMockBackend(lexicon, faults)


def load_faults(path: str | Path) -> list[FaultRule]:
    with open(path, encoding="utf-8") as fh:
        return [FaultRule.from_json(raw) for raw in json.load(fh)]


# -- remote providers --------------------------------------------------------------

Transport = Callable[[str, str, Mapping[str, str], bytes], tuple[int, bytes]]


def urllib_transport(method: str, url: str, headers: Mapping[str, str], body: bytes,
                     timeout: float = 30.0) -> tuple[int, bytes]:
    request = urllib.request.Request(url, data=body, headers=dict(headers), method=method)
    try:
        with urllib.request.urlopen(request, timeout=timeout) as resp:
            return resp.status, resp.read()
    except urllib.error.HTTPError as exc:
        return exc.code, exc.read()
    except urllib.error.URLError as exc:
        raise BackendUnavailable(str(exc.reason)) from exc


@dataclass
class EndpointConfig:
    name: str
    provider: str = "azure"
    endpoint: str | None = None
    api_key: str | None = None
    version: str = "1"
    language: str = "en"
    max_retries: int = 5
    backoff_base: float = 0.5
    categories: tuple[str, ...] = ()

    @classmethod
    def from_env(cls, name: str, provider: str | None = None, environ: Mapping[str, str] | None = None,
                 **kwargs) -> EndpointConfig:
        env = os.environ if environ is None else environ
        prefix = re.sub(r"\W", "_", name).upper()
        return cls(name=name, provider=provider or name.lower(), endpoint=env.get(f"{prefix}_ENDPOINT"),
                   api_key=env.get(f"{prefix}_API_KEY"), **kwargs)


def parse_provider_response(provider: str, payload: Any) -> list[RawEntity]:
    """Map a provider's entity-recognition JSON onto :class:`RawEntity` records.

    Offsets are taken as character (code point) offsets.  Category strings are upper-cased
    so ``"Location"`` and ``"LOCATION"`` agree.
    """
    try:
        if provider == "aws":
            items = payload["Entities"]
            return [RawEntity(int(e["BeginOffset"]), int(e["EndOffset"]), str(e["Type"]).upper(), e.get("Text"))
                    for e in items]
        if "entities" in payload:
            items = payload["entities"]
        else:
            items = payload["documents"][0]["entities"]
        return [RawEntity(int(e["offset"]), int(e["offset"]) + int(e["length"]), str(e["category"]).upper(),
                          e.get("text")) for e in items]
    except (KeyError, IndexError, TypeError, ValueError) as exc:
        raise SchemaError(f"unparseable {provider} response: {exc}") from exc


class RemoteBackend(NerBackend):
    """HTTP adapter.  All traffic goes through ``transport`` so fixtures can replay payloads."""

    def __init__(self, config: EndpointConfig, transport: Transport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        super().__init__()
        if not config.api_key or not config.endpoint:
            raise AuthError(f"{config.name}: credentials missing (set the _API_KEY and _ENDPOINT variables)")
        self.config = config
        self.name = config.name
        self.version = config.version
        self.transport = transport or urllib_transport
        self.sleep = sleep
        self.retries = 0

    @property
    def categories(self) -> frozenset[EntityCategory]:
        return frozenset(EntityCategory(c) for c in self.config.categories)

    def _request(self, text: str) -> tuple[dict[str, str], bytes]:
        headers = {"Content-Type": "application/json"}
        if self.config.provider == "azure":
            headers["Ocp-Apim-Subscription-Key"] = self.config.api_key
            body = {"documents": [{"id": "1", "language": self.config.language, "text": text}]}
        else:
            headers["x-api-key"] = self.config.api_key
            body = {"Text": text, "LanguageCode": self.config.language}
        return headers, json.dumps(body, ensure_ascii=False).encode("utf-8")

    def _invoke(self, text: str) -> list[RawEntity]:
        if os.environ.get("NO_NETWORK") == "1":
            raise NetworkDisabled(f"{self.name}: NO_NETWORK=1 forbids remote calls")
        headers, body = self._request(text)
        status = 0
        for attempt in range(self.config.max_retries + 1):
            status, payload = self.transport("POST", self.config.endpoint, headers, body)
            if status == 200:
                try:
                    decoded = json.loads(payload.decode("utf-8"))
                except (UnicodeDecodeError, json.JSONDecodeError) as exc:
                    raise SchemaError(f"{self.name}: response is not JSON") from exc
                return parse_provider_response(self.config.provider, decoded)
            if status in (401, 403):
                raise AuthError(f"{self.name}: HTTP {status}")
            if status != 429 and status < 500:
                raise BackendError(f"{self.name}: HTTP {status}")
            if attempt == self.config.max_retries:
                break
            self.retries += 1
            delay = self.config.backoff_base * 2 ** attempt
            log.info("%s: HTTP %d, retry %d in %.2fs", self.name, status, attempt + 1, delay)
            self.sleep(delay)
        if status == 429:
            raise RateLimited(f"{self.name}: still rate limited after {self.config.max_retries} retries")
        raise BackendUnavailable(f"{self.name}: HTTP {status} after {self.config.max_retries} retries")


def remote_adapter(config: EndpointConfig, transport: Transport | None = None,
                   sleep: Callable[[float], None] = time.sleep) -> RemoteBackend:
    return RemoteBackend(config, transport, sleep)


class ReplayTransport:
    """Serves recorded response bodies in order; records the requests it received."""

    def __init__(self, responses: Iterable[tuple[int, bytes]]):
        self.responses = list(responses)
        self.requests: list[tuple[str, str, dict, bytes]] = []

    def __call__(self, method: str, url: str, headers: Mapping[str, str], body: bytes) -> tuple[int, bytes]:
        self.requests.append((method, url, dict(headers), body))
        if not self.responses:
            raise BackendUnavailable("replay exhausted")
        return self.responses.pop(0)
