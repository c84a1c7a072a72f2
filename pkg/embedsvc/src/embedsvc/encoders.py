"""Encoders behind the /embed endpoint.

Model identifiers are configuration, not code. Two families ship here:

* ``hashed``: deterministic feature-hashing encoders with no model weights.
  They give geometrically valid (unit-norm, fixed-dimension, reproducible)
  vectors for development, testing, and offline plumbing.
* ``sentence-transformers:<model>``: real checkpoints, loaded lazily so the
  service can run where the packages or weights are absent. Loading failures
  keep the service in its "loading" (503) state.

Every encoder is read-only after load() and safe to share across requests.
"""

from __future__ import annotations

import base64
import binascii
import hashlib

import numpy as np


class ImageDecodeError(ValueError):
    """Payload is not decodable base64 image data."""


class EncoderLoadError(RuntimeError):
    """The configured model could not be loaded."""


def _accumulate_hashed(vec: np.ndarray, chunks, salt: bytes) -> None:
    for chunk in chunks:
        digest = hashlib.sha256(salt + chunk).digest()
        bucket = int.from_bytes(digest[:8], "big") % vec.size
        sign = 1.0 if digest[8] & 1 else -1.0
        vec[bucket] += sign


def _finish(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if norm == 0.0:
        # Degenerate input (e.g. empty text): a fixed unit vector keeps the
        # contract without inventing similarity structure.
        vec = vec.copy()
        vec[0] = 1.0
        return vec
    return vec / norm


def decode_image(image_base64: str) -> bytes:
    try:
        raw = base64.b64decode(image_base64, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise ImageDecodeError(f"invalid base64 image payload: {exc}") from exc
    if not raw:
        raise ImageDecodeError("empty image payload")
    return raw


def _text_features(text: str) -> list[bytes]:
    tokens = [t.encode("utf-8") for t in text.lower().split()]
    bigrams = [a + b" " + b for a, b in zip(tokens, tokens[1:])]
    return tokens + bigrams


def _image_features(raw: bytes, block: int = 64) -> list[bytes]:
    return [raw[i : i + block] for i in range(0, len(raw), block)]


class HashedTextEncoder:
    """Feature-hashing sentence encoder (tokens + bigrams)."""

    def __init__(self, dim: int = 384) -> None:
        self.dim = dim
        self.name = f"hashed-text-{dim}"

    def load(self) -> None:
        pass  # nothing to load

    def encode(self, text: str | None, image_base64: str | None) -> np.ndarray:
        if text is None:
            raise ValueError("question space requires 'text'")
        vec = np.zeros(self.dim, dtype=np.float64)
        _accumulate_hashed(vec, _text_features(text), b"text:")
        return _finish(vec)


class HashedImageEncoder:
    """Feature-hashing image encoder over raw byte blocks."""

    def __init__(self, dim: int = 384) -> None:
        self.dim = dim
        self.name = f"hashed-image-{dim}"

    def load(self) -> None:
        pass

    def encode(self, text: str | None, image_base64: str | None) -> np.ndarray:
        if image_base64 is None:
            raise ValueError("image space requires 'image_base64'")
        raw = decode_image(image_base64)
        vec = np.zeros(self.dim, dtype=np.float64)
        _accumulate_hashed(vec, _image_features(raw), b"image:")
        return _finish(vec)


class HashedJointEncoder:
    """Joint text+image encoder: both feature families share one space."""

    def __init__(self, dim: int = 384) -> None:
        self.dim = dim
        self.name = f"hashed-joint-{dim}"

    def load(self) -> None:
        pass

    def encode(self, text: str | None, image_base64: str | None) -> np.ndarray:
        if text is None or image_base64 is None:
            raise ValueError("joint space requires both 'text' and 'image_base64'")
        raw = decode_image(image_base64)
        vec = np.zeros(self.dim, dtype=np.float64)
        _accumulate_hashed(vec, _text_features(text), b"joint-text:")
        _accumulate_hashed(vec, _image_features(raw), b"joint-image:")
        return _finish(vec)


class SentenceTransformerEncoder:
    """Real sentence encoder checkpoint; lazy import, inference mode only."""

    def __init__(self, model_id: str) -> None:
        self.model_id = model_id
        self.name = model_id
        self.dim = 0
        self._model = None

    def load(self) -> None:
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise EncoderLoadError(
                "sentence-transformers is not installed; use the 'encoders' extra"
            ) from exc
        try:
            self._model = SentenceTransformer(self.model_id)
        except Exception as exc:  # weights missing, network down, ...
            raise EncoderLoadError(f"could not load {self.model_id!r}: {exc}") from exc
        self.dim = int(self._model.get_sentence_embedding_dimension())

    def encode(self, text: str | None, image_base64: str | None) -> np.ndarray:
        if text is None:
            raise ValueError("question space requires 'text'")
        if self._model is None:
            raise EncoderLoadError("encoder used before load()")
        vec = self._model.encode([text], convert_to_numpy=True, normalize_embeddings=True)[0]
        return np.asarray(vec, dtype=np.float64)


def build_encoder(spec: str, space: str, dim: int = 384):
    """Encoder factory from a config string.

    "hashed" (default family) or "sentence-transformers:<model id>".
    """
    if spec == "hashed":
        if space == "question":
            return HashedTextEncoder(dim)
        if space == "image":
            return HashedImageEncoder(dim)
        return HashedJointEncoder(dim)
    if spec.startswith("sentence-transformers:"):
        if space != "question":
            raise EncoderLoadError("sentence-transformers encoders only embed text")
        return SentenceTransformerEncoder(spec.split(":", 1)[1])
    raise EncoderLoadError(f"unknown encoder spec {spec!r}")
