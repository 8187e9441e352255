"""Embedding backends for BERTScore.

The metric core never loads a neural model: it consumes per-text token
embeddings from an EmbeddingBackend. Two backends ship here — a deterministic
hash-based backend for offline runs and tests, and a line-protocol client for
a local embedding service (newline-delimited JSON over TCP or a subprocess's
stdio; one ``{id, mode, text}`` request per line, one ``{id, tokens, vectors,
model, layer}`` response per line, responses matched by id).
"""

from __future__ import annotations

import hashlib
import json
import socket
import subprocess
from dataclasses import dataclass, field

import numpy as np

from .metrics import MetricError, NormalizedText, TokenEmbeddings, normalize


class EmbeddingBackendError(RuntimeError):
    """Embedding backend unreachable or returned an invalid response."""


def _unit_rows(vectors: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(vectors, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise EmbeddingBackendError("backend returned a zero vector")
    return vectors / norms


@dataclass
class HashEmbeddingBackend:
    """Deterministic synthetic embeddings: each token maps to a fixed unit vector.

    Identical tokens always share a vector, so identical texts score F1 = 1.0.
    """

    dim: int = 32
    _cache: dict[str, np.ndarray] = field(default_factory=dict, repr=False)

    def _vector(self, token: str) -> np.ndarray:
        cached = self._cache.get(token)
        if cached is None:
            seed = int.from_bytes(hashlib.sha256(token.encode("utf-8")).digest()[:8], "big")
            raw = np.random.default_rng(seed).standard_normal(self.dim)
            cached = raw / np.linalg.norm(raw)
            self._cache[token] = cached
        return cached

    def embed_tokens(self, text: str | NormalizedText) -> TokenEmbeddings:
        tokens = text.tokens if isinstance(text, NormalizedText) else normalize(text).tokens
        if not tokens:
            raise MetricError("no tokens to embed")
        vectors = np.stack([self._vector(t) for t in tokens])
        return TokenEmbeddings(tokens=tokens, vectors=vectors)

    def metadata(self) -> dict:
        return {"model": "hash-fixture", "layer": None, "dim": self.dim}


class _LineChannel:
    """One NDJSON request/response exchange over a socket or subprocess stdio."""

    def __init__(self, host: str | None = None, port: int | None = None,
                 command: list[str] | None = None):
        self._proc = None
        self._sock = None
        if command:
            self._proc = subprocess.Popen(
                command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, text=True
            )
            self._writer = self._proc.stdin
            self._reader = self._proc.stdout
        elif host is not None and port is not None:
            self._sock = socket.create_connection((host, port))
            handle = self._sock.makefile("rw", encoding="utf-8", newline="\n")
            self._writer = handle
            self._reader = handle
        else:
            raise ValueError("need either host/port or a command")

    def send(self, record: dict) -> None:
        self._writer.write(json.dumps(record, ensure_ascii=False) + "\n")
        self._writer.flush()

    def receive(self) -> dict:
        line = self._reader.readline()
        if not line:
            raise EmbeddingBackendError("embedding service closed the connection")
        return json.loads(line)

    def close(self) -> None:
        if self._sock is not None:
            self._sock.close()
        if self._proc is not None:
            self._proc.stdin.close()
            self._proc.terminate()
            self._proc.wait(timeout=10)


class ServiceEmbeddingBackend:
    """Client for the local embedding service.

    Vectors are re-normalised at this boundary so cosine similarity in the
    metric core reduces to a dot product regardless of service rounding.
    """

    def __init__(self, host: str | None = None, port: int | None = None,
                 command: list[str] | None = None):
        self._channel = _LineChannel(host=host, port=port, command=command)
        self._next_id = 0
        self._model_meta: dict = {}

    def close(self) -> None:
        self._channel.close()

    def __enter__(self) -> "ServiceEmbeddingBackend":
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()

    def _roundtrip(self, mode: str, text: str) -> dict:
        request_id = f"req-{self._next_id}"
        self._next_id += 1
        self._channel.send({"id": request_id, "mode": mode, "text": text})
        pending: dict[str, dict] = {}
        while request_id not in pending:
            response = self._channel.receive()
            pending[str(response.get("id"))] = response
        response = pending[request_id]
        if "error" in response:
            raise EmbeddingBackendError(f"embedding service error: {response['error']}")
        self._model_meta = {"model": response.get("model"), "layer": response.get("layer")}
        return response

    def embed_tokens(self, text: str | NormalizedText) -> TokenEmbeddings:
        raw = text.original if isinstance(text, NormalizedText) else text
        response = self._roundtrip("tokens", raw)
        tokens = tuple(response["tokens"])
        vectors = np.asarray(response["vectors"], dtype=np.float64)
        if vectors.ndim != 2 or len(tokens) != vectors.shape[0]:
            raise EmbeddingBackendError("token/vector count mismatch from service")
        return TokenEmbeddings(tokens=tokens, vectors=_unit_rows(vectors))

    def embed_sentence(self, text: str) -> np.ndarray:
        response = self._roundtrip("sentence", text)
        vectors = np.asarray(response["vectors"], dtype=np.float64)
        return _unit_rows(vectors)[0]

    def metadata(self) -> dict:
        return dict(self._model_meta)
