"""Encoder registry.

Two families:

* Always-available deterministic encoders for environments without model
  weights: ``hash-text`` (token feature hashing) and ``pixel-image``
  (downsampled grayscale statistics). Deterministic across platforms, so
  exports are reproducible fixtures.
* Pretrained backends resolved lazily: ``st:<model>`` via
  sentence-transformers and ``torchvision:<model>`` via torchvision. These
  run frozen, in inference mode, and raise EncoderUnavailable with an
  actionable message when the library or the local model weights are
  missing (this tool never downloads).

Names accept an optional ``:<dim>`` suffix for the hashing encoders, e.g.
``hash-text:512``.
"""

from __future__ import annotations

import hashlib
import re

import numpy as np


class EncoderUnavailable(RuntimeError):
    """The requested encoder cannot run in this environment."""


_TOKEN_RE = re.compile(r"[a-z0-9']+")


class HashTextEncoder:
    """Feature hashing over lowercased tokens, L2-normalized.

    Each token contributes +/-1 at an index derived from its SHA-256, so
    identical text always yields identical rows, with no model weights.
    """

    def __init__(self, dim: int = 256):
        if dim < 8:
            raise ValueError("hash-text dim must be >= 8")
        self.dim = dim
        self.name = f"hash-text:{dim}"

    def encode(self, texts: list[str]) -> np.ndarray:
        out = np.zeros((len(texts), self.dim), dtype=np.float64)
        for i, text in enumerate(texts):
            for token in _TOKEN_RE.findall(text.lower()):
                digest = hashlib.sha256(token.encode("utf-8")).digest()
                index = int.from_bytes(digest[:8], "little") % self.dim
                sign = 1.0 if digest[8] % 2 == 0 else -1.0
                out[i, index] += sign
            norm = np.linalg.norm(out[i])
            if norm > 0:
                out[i] /= norm
            else:
                out[i, 0] = 1.0  # canonical direction for empty text
        return out.astype(np.float32)


class PixelImageEncoder:
    """Grayscale thumbnail intensities as a fixed-size vector.

    Resizes to sqrt(dim) x sqrt(dim) with Pillow, scales to [0, 1], and
    L2-normalizes. Deterministic for a given file.
    """

    def __init__(self, dim: int = 256):
        side = int(round(dim ** 0.5))
        if side * side != dim:
            raise ValueError("pixel-image dim must be a perfect square")
        self.side = side
        self.dim = dim
        self.name = f"pixel-image:{dim}"

    def encode_paths(self, paths: list) -> np.ndarray:
        try:
            from PIL import Image
        except ImportError as exc:  # pragma: no cover
            raise EncoderUnavailable("pixel-image needs Pillow installed") from exc
        out = np.zeros((len(paths), self.dim), dtype=np.float64)
        for i, path in enumerate(paths):
            with Image.open(path) as img:
                gray = img.convert("L").resize((self.side, self.side))
            vec = np.asarray(gray, dtype=np.float64).reshape(-1) / 255.0
            norm = np.linalg.norm(vec)
            out[i] = vec / norm if norm > 0 else vec
        return out.astype(np.float32)


class SentenceTransformerEncoder:
    """Frozen sentence-transformers model, local weights only."""

    def __init__(self, model_name: str, batch_size: int = 32):
        try:
            from sentence_transformers import SentenceTransformer
        except ImportError as exc:
            raise EncoderUnavailable(
                "sentence-transformers is not installed; "
                "pip install 'g3-export[encoders]'"
            ) from exc
        try:
            self._model = SentenceTransformer(model_name, local_files_only=True)
        except Exception as exc:
            raise EncoderUnavailable(
                f"model {model_name!r} is not available locally: {exc}"
            ) from exc
        self._model.eval()
        self.batch_size = batch_size
        self.name = f"st:{model_name}"

    def encode(self, texts: list[str]) -> np.ndarray:
        emb = self._model.encode(
            texts,
            batch_size=self.batch_size,
            convert_to_numpy=True,
            show_progress_bar=False,
        )
        return np.asarray(emb, dtype=np.float32)


class TorchvisionImageEncoder:
    """Frozen torchvision classifier backbone, penultimate features."""

    def __init__(self, model_name: str, batch_size: int = 16):
        try:
            import torch
            import torchvision.models as tvm
            from torchvision.models.feature_extraction import (
                create_feature_extractor,
            )
        except ImportError as exc:
            raise EncoderUnavailable(
                "torch/torchvision are not installed; "
                "pip install 'g3-export[encoders]'"
            ) from exc
        builder = getattr(tvm, model_name, None)
        if builder is None:
            raise EncoderUnavailable(f"torchvision has no model {model_name!r}")
        from pathlib import Path

        weights = tvm.get_model_weights(model_name).DEFAULT
        cached = Path(torch.hub.get_dir()) / "checkpoints" / weights.url.rsplit("/", 1)[1]
        if not cached.exists():
            raise EncoderUnavailable(
                f"pretrained weights for {model_name!r} are not cached locally "
                f"(expected {cached}); this tool never downloads"
            )
        try:
            model = builder(weights=weights)
        except Exception as exc:
            raise EncoderUnavailable(
                f"failed to load cached weights for {model_name!r}: {exc}"
            ) from exc
        model.eval()
        self._torch = torch
        self._model = create_feature_extractor(model, {"flatten": "features"})
        self._preprocess = weights.transforms()
        self.batch_size = batch_size
        self.name = f"torchvision:{model_name}"

    def encode_paths(self, paths: list) -> np.ndarray:
        from PIL import Image

        rows = []
        with self._torch.no_grad():
            for start in range(0, len(paths), self.batch_size):
                batch = []
                for path in paths[start : start + self.batch_size]:
                    with Image.open(path) as img:
                        batch.append(self._preprocess(img.convert("RGB")))
                feats = self._model(self._torch.stack(batch))["features"]
                rows.append(feats.cpu().numpy())
        return np.concatenate(rows).astype(np.float32)


def _split_dim(name: str, default: int) -> tuple[str, int]:
    if ":" in name:
        head, tail = name.rsplit(":", 1)
        if tail.isdigit():
            return head, int(tail)
    return name, default


def resolve_text_encoder(name: str, batch_size: int = 32):
    base, dim = _split_dim(name, 256)
    if base == "hash-text":
        return HashTextEncoder(dim=dim)
    if name.startswith("st:"):
        return SentenceTransformerEncoder(name[3:], batch_size=batch_size)
    raise EncoderUnavailable(
        f"unknown text encoder {name!r}; try 'hash-text' or 'st:<model>'"
    )


def resolve_image_encoder(name: str, batch_size: int = 16):
    base, dim = _split_dim(name, 256)
    if base == "pixel-image":
        return PixelImageEncoder(dim=dim)
    if name.startswith("torchvision:"):
        return TorchvisionImageEncoder(name.split(":", 1)[1], batch_size=batch_size)
    raise EncoderUnavailable(
        f"unknown image encoder {name!r}; try 'pixel-image' or "
        "'torchvision:<model>'"
    )
