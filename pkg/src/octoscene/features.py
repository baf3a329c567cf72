"""Feature and text-embedding providers.

Two provider roles exist:

* FeatureProvider answers "give me visual/caption features for this view of
  this instance" during pool refinement. Implementations: a pass-through that
  keeps the existing pool, a deterministic hash embedder for tests, and a
  remote HTTP service.
* TextEmbedder turns query text into a vector for retrieval. Same trio.

The hash embedder maps text to a fixed unit vector by seeding an RNG from the
SHA-256 of the normalized text, so equal strings embed identically on every
platform and distinct strings are nearly orthogonal at reasonable dims.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass

import numpy as np
import requests

from .errors import EmbedderFailure, ProviderFailure

EMBED_ENDPOINT_VAR = "EMBED_ENDPOINT"
EMBED_TOKEN_VAR = "EMBED_TOKEN"
LLM_ENDPOINT_VAR = "LLM_ENDPOINT"
LLM_TOKEN_VAR = "LLM_TOKEN"


def hash_embed(text: str, dim: int) -> np.ndarray:
    """Deterministic unit vector for a piece of text."""
    digest = hashlib.sha256(text.strip().lower().encode("utf-8")).digest()
    seed = int.from_bytes(digest[:8], "little")
    rng = np.random.default_rng(seed)
    vec = rng.standard_normal(dim)
    return (vec / np.linalg.norm(vec)).astype(np.float32)


@dataclass
class ProviderResponse:
    f_v: np.ndarray
    f_c: np.ndarray
    caption: str


class FeatureProvider:
    """Request features for one view: (frame id, mask or instance id)."""

    def get(self, frame_id: int, instance_id: int, mask=None) -> ProviderResponse:
        raise NotImplementedError


class PassThroughProvider(FeatureProvider):
    """Marker provider: refinement keeps the pool produced by merging."""

    def get(self, frame_id: int, instance_id: int, mask=None) -> ProviderResponse:
        raise ProviderFailure("pass-through provider has no features", view_id=frame_id)


class HashFeatureProvider(FeatureProvider):
    """Deterministic per-view features derived from (frame, instance)."""

    def __init__(self, dim: int, salt: str = ""):
        self.dim = dim
        self.salt = salt

    def get(self, frame_id: int, instance_id: int, mask=None) -> ProviderResponse:
        base = f"{self.salt}|frame:{frame_id}|instance:{instance_id}"
        return ProviderResponse(
            f_v=hash_embed("v|" + base, self.dim),
            f_c=hash_embed("c|" + base, self.dim),
            caption=f"view {frame_id} of instance {instance_id}",
        )


class HttpFeatureProvider(FeatureProvider):
    """Remote feature service.

    POSTs {"frame": int, "instance": int} and expects
    {"f_v": [...], "f_c": [...], "caption": "..."} with D-length arrays.
    Endpoint and bearer token come from EMBED_ENDPOINT / EMBED_TOKEN unless
    given explicitly.
    """

    def __init__(self, dim: int, endpoint: str | None = None, token: str | None = None,
                 timeout: float = 10.0):
        self.dim = dim
        self.endpoint = endpoint or os.environ.get(EMBED_ENDPOINT_VAR, "")
        self.token = token if token is not None else os.environ.get(EMBED_TOKEN_VAR, "")
        self.timeout = timeout
        if not self.endpoint:
            raise ProviderFailure(f"no feature endpoint: set {EMBED_ENDPOINT_VAR}")

    def get(self, frame_id: int, instance_id: int, mask=None) -> ProviderResponse:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        try:
            resp = requests.post(
                self.endpoint,
                data=json.dumps({"frame": int(frame_id), "instance": int(instance_id)}),
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
            payload = resp.json()
            f_v = np.asarray(payload["f_v"], dtype=np.float32)
            f_c = np.asarray(payload["f_c"], dtype=np.float32)
        except Exception as exc:
            raise ProviderFailure(f"feature request failed: {exc}", view_id=frame_id) from exc
        if f_v.shape != (self.dim,) or f_c.shape != (self.dim,):
            raise ProviderFailure(
                f"feature service returned dims {f_v.shape}/{f_c.shape}, wanted ({self.dim},)",
                view_id=frame_id,
            )
        return ProviderResponse(f_v=f_v, f_c=f_c, caption=str(payload.get("caption", "")))


class TextEmbedder:
    def embed(self, texts: list[str]) -> np.ndarray:
        """Embed a batch of texts into (len(texts), D)."""
        raise NotImplementedError


class HashTextEmbedder(TextEmbedder):
    def __init__(self, dim: int):
        self.dim = dim

    def embed(self, texts: list[str]) -> np.ndarray:
        if not texts:
            return np.empty((0, self.dim), dtype=np.float32)
        return np.stack([hash_embed(t, self.dim) for t in texts])


class HttpTextEmbedder(TextEmbedder):
    """Remote text embedding: POST {"texts": [...]} expecting
    {"embeddings": [[...], ...]} of D-length float arrays."""

    def __init__(self, dim: int, endpoint: str | None = None, token: str | None = None,
                 timeout: float = 10.0):
        self.dim = dim
        self.endpoint = endpoint or os.environ.get(EMBED_ENDPOINT_VAR, "")
        self.token = token if token is not None else os.environ.get(EMBED_TOKEN_VAR, "")
        self.timeout = timeout
        if not self.endpoint:
            raise EmbedderFailure(f"no embedding endpoint: set {EMBED_ENDPOINT_VAR}")

    def embed(self, texts: list[str]) -> np.ndarray:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        try:
            resp = requests.post(
                self.endpoint,
                data=json.dumps({"texts": list(texts)}),
                headers=headers,
                timeout=self.timeout,
            )
            resp.raise_for_status()
            arr = np.asarray(resp.json()["embeddings"], dtype=np.float32)
        except Exception as exc:
            raise EmbedderFailure(f"embedding request failed: {exc}") from exc
        if arr.shape != (len(texts), self.dim):
            raise EmbedderFailure(f"embedding service returned shape {arr.shape}")
        return arr


class ChatClient:
    """Minimal single-turn chat client for the LLM query planner.

    POSTs {"messages": [{"role": "system"|"user", "content": ...}]} and
    expects {"content": "..."}. Retries once on transport errors. Endpoint
    and token default to LLM_ENDPOINT / LLM_TOKEN.
    """

    def __init__(self, endpoint: str | None = None, token: str | None = None,
                 timeout: float = 30.0):
        self.endpoint = endpoint or os.environ.get(LLM_ENDPOINT_VAR, "")
        self.token = token if token is not None else os.environ.get(LLM_TOKEN_VAR, "")
        self.timeout = timeout
        if not self.endpoint:
            raise EmbedderFailure(f"no chat endpoint: set {LLM_ENDPOINT_VAR}")

    def complete(self, system: str, user: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.token:
            headers["Authorization"] = f"Bearer {self.token}"
        body = json.dumps(
            {"messages": [{"role": "system", "content": system}, {"role": "user", "content": user}]}
        )
        last_exc: Exception | None = None
        for _ in range(2):
            try:
                resp = requests.post(self.endpoint, data=body, headers=headers, timeout=self.timeout)
                resp.raise_for_status()
                return str(resp.json()["content"])
            except Exception as exc:
                last_exc = exc
        raise EmbedderFailure(f"chat request failed: {last_exc}") from last_exc
