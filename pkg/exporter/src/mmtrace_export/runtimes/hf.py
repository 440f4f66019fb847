"""Hugging Face transformers adapter.

Captures per-layer attention during `generate` with eager attention (fused
kernels do not expose weights and raise CapabilityError). Replication is
applied at the prompt level by repeating the media reference; the mode is
recorded in the trace metadata.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..capture import CaptureRequest, RawCapture, roles_from_ids
from ..errors import CapabilityError, LabelingError

# config attributes that hold the media placeholder token id across
# image/video/audio architectures
_MEDIA_TOKEN_ATTRS = (
    "image_token_index",
    "image_token_id",
    "video_token_index",
    "video_token_id",
    "audio_token_index",
    "audio_token_id",
)


def media_token_ids(config, tokenizer) -> set[int]:
    """Collect every media placeholder id the model/config declares."""
    ids: set[int] = set()
    for source in (config, getattr(config, "text_config", None)):
        if source is None:
            continue
        for name in _MEDIA_TOKEN_ATTRS:
            value = getattr(source, name, None)
            if isinstance(value, int) and value >= 0:
                ids.add(value)
    for token in ("<image>", "<video>", "<audio>", "<|image_pad|>",
                  "<|video_pad|>", "<|audio_pad|>"):
        converted = tokenizer.convert_tokens_to_ids(token)
        if converted is not None and converted >= 0 \
                and converted != tokenizer.unk_token_id:
            ids.add(int(converted))
    return ids


def stack_generate_attentions(attentions: Sequence) -> list[np.ndarray]:
    """Flatten `generate`'s nested attention tuples into per-step arrays.

    Input follows the transformers convention: one entry per generated
    token, each a tuple of per-layer tensors with shape
    (batch, heads, query_len, key_len); the first entry is the prefill
    with query_len == key_len, later entries have query_len == 1. Output
    is one (layers, heads, key_len) array per step, the new token's rows.
    """
    if not attentions or any(step is None for step in attentions):
        raise CapabilityError(
            "the runtime did not expose attention weights; load the model "
            "with eager attention"
        )
    steps = []
    for step_layers in attentions:
        if any(layer is None for layer in step_layers):
            raise CapabilityError("a layer returned no attention weights")
        rows = [np.asarray(layer)[0, :, -1, :] for layer in step_layers]
        steps.append(np.stack(rows))  # (layers, heads, key_len)
    return steps


class HFRuntime:
    """Adapter over AutoProcessor/AutoModel* generation."""

    def __init__(self, model_id: str, device: str = "cpu"):
        self.model_id = model_id.removeprefix("hf:")
        self.device = device

    def _load(self):
        try:
            import torch
            from transformers import AutoProcessor
        except ImportError as exc:
            raise CapabilityError(
                f"the hf runtime needs torch and transformers installed: {exc}"
            ) from exc

        processor = AutoProcessor.from_pretrained(self.model_id)
        model = None
        errors = []
        try:
            from transformers import AutoModelForImageTextToText

            model = AutoModelForImageTextToText.from_pretrained(
                self.model_id,
                attn_implementation="eager",
                torch_dtype=torch.float32,
            )
        except Exception as exc:  # fall through to the causal-LM loader
            errors.append(str(exc))
        if model is None:
            try:
                from transformers import AutoModelForCausalLM

                model = AutoModelForCausalLM.from_pretrained(
                    self.model_id,
                    attn_implementation="eager",
                    torch_dtype=torch.float32,
                )
            except Exception as exc:
                raise CapabilityError(
                    f"could not load {self.model_id!r}: {errors + [str(exc)]}"
                ) from exc
        model.to(self.device)
        model.eval()
        return processor, model

    def _prepare_inputs(self, processor, request: CaptureRequest):
        try:
            from PIL import Image
        except ImportError as exc:
            raise CapabilityError(f"media handling needs Pillow: {exc}") from exc

        if request.media is None:
            return processor(text=request.prompt, return_tensors="pt")
        try:
            image = Image.open(request.media).convert("RGB")
        except Exception as exc:
            raise CapabilityError(
                f"only image media is supported by the hf adapter: {exc}"
            ) from exc

        content = [{"type": "image", "image": image}] * request.replicate
        content.append({"type": "text", "text": request.prompt})
        messages = [{"role": "user", "content": content}]
        if hasattr(processor, "apply_chat_template"):
            try:
                return processor.apply_chat_template(
                    messages,
                    add_generation_prompt=True,
                    tokenize=True,
                    return_dict=True,
                    return_tensors="pt",
                )
            except Exception:
                pass
        text = "<image>\n" * request.replicate + request.prompt
        return processor(text=text, images=[image] * request.replicate,
                         return_tensors="pt")

    def capture(self, request: CaptureRequest) -> RawCapture:
        import torch

        processor, model = self._load()
        inputs = self._prepare_inputs(processor, request)
        inputs = {k: v.to(self.device) if hasattr(v, "to") else v
                  for k, v in inputs.items()}

        with torch.no_grad():
            out = model.generate(
                **inputs,
                max_new_tokens=request.max_steps,
                do_sample=False,
                output_attentions=True,
                return_dict_in_generate=True,
            )
        if getattr(out, "attentions", None) is None:
            raise CapabilityError(
                "generate returned no attentions; this model/kernel does not "
                "expose attention weights"
            )
        steps = stack_generate_attentions(out.attentions)

        tokenizer = getattr(processor, "tokenizer", processor)
        input_ids = [int(i) for i in inputs["input_ids"][0]]
        media_ids = media_token_ids(model.config, tokenizer)
        special_ids = set(int(i) for i in tokenizer.all_special_ids) - media_ids
        roles = roles_from_ids(input_ids, media_ids, special_ids)
        if request.media is not None and "nontext" not in roles:
            raise LabelingError(
                f"no media token span found in the tokenized prompt for "
                f"{self.model_id!r}"
            )
        return RawCapture(
            roles=roles,
            steps=steps,
            model_id=self.model_id,
            metadata={"replication_mode": "prompt", "runtime": "hf"},
        )
