"""Deterministic stand-in runtime for tests and offline demos.

Behaves like a tiny multimodal LM runtime: whitespace tokenization for the
prompt, a fixed-size media token block derived from the media bytes, and
seeded random attention rows per generation step. Identical requests yield
identical captures.
"""

from __future__ import annotations

import zlib
from pathlib import Path

import numpy as np

from ..capture import CaptureRequest, RawCapture, replicate_media_block
from ..errors import CapabilityError, LabelingError

LAYERS = 6
HEADS = 4
# media tokens per block: 8..15, a deterministic function of the media bytes
BASE_MEDIA_TOKENS = 8
MAX_MEDIA_TOKENS = 512


class MockRuntime:
    """Seeded synthetic runtime; replication happens at the token level."""

    def __init__(self, model_id: str):
        self.model_id = model_id

    def _media_block_len(self, media: str) -> int:
        data = Path(media).read_bytes()
        return BASE_MEDIA_TOKENS + zlib.crc32(data) % 8

    def capture(self, request: CaptureRequest) -> RawCapture:
        words = request.prompt.split()
        if not words:
            raise LabelingError("prompt produced no text tokens")

        tokens: list[str] = ["<bos>"] + list(words)
        roles = ["special"] + ["text"] * len(words)
        if request.media is not None:
            block = self._media_block_len(request.media)
            if block * request.replicate > MAX_MEDIA_TOKENS:
                raise CapabilityError(
                    f"runtime caps media tokens at {MAX_MEDIA_TOKENS}; "
                    f"{request.replicate} x {block} exceeds it"
                )
            tokens += ["<sep>"] + [f"<media:{i}>" for i in range(block)]
            roles += ["special"] + ["nontext"] * block
            tokens, roles = replicate_media_block(tokens, roles, request.replicate)

        seed = zlib.crc32(
            f"{self.model_id}|{request.prompt}|{request.media}|"
            f"{request.replicate}".encode()
        )
        rng = np.random.default_rng(seed)
        input_len = len(tokens)
        steps = []
        for step in range(request.max_steps):
            logits = rng.normal(0.0, 1.5, (LAYERS, HEADS, input_len + step))
            shifted = logits - logits.max(axis=-1, keepdims=True)
            probs = np.exp(shifted)
            probs /= probs.sum(axis=-1, keepdims=True)
            steps.append(probs)
        return RawCapture(
            roles=roles,
            steps=steps,
            model_id=self.model_id,
            metadata={"replication_mode": "token", "runtime": "mock"},
        )
