"""HF adapter: pure helpers are tested directly; the live-model test is
gated on MMTRACE_EXPORT_MODEL because it needs downloaded weights."""

import json
import os
import subprocess

import numpy as np
import pytest

from mmtrace_export import CapabilityError
from mmtrace_export.runtimes.hf import media_token_ids, stack_generate_attentions


class FakeConfig:
    image_token_index = 32000

    class text_config:
        video_token_id = 151656


class FakeTokenizer:
    unk_token_id = 0

    def convert_tokens_to_ids(self, token):
        return {"<image>": 32000, "<|image_pad|>": 151655}.get(token, 0)


class TestHelpers:
    def test_media_ids_collected_from_config_and_tokenizer(self):
        ids = media_token_ids(FakeConfig(), FakeTokenizer())
        assert ids == {32000, 151655, 151656}

    def test_stack_handles_prefill_and_single_token_steps(self):
        layers = 2
        heads = 3
        p = 5
        prefill = tuple(np.random.default_rng(i).random((1, heads, p, p))
                        for i in range(layers))
        step1 = tuple(np.random.default_rng(10 + i).random((1, heads, 1, p + 1))
                      for i in range(layers))
        steps = stack_generate_attentions([prefill, step1])
        assert steps[0].shape == (layers, heads, p)
        assert steps[1].shape == (layers, heads, p + 1)
        # the prefill contributes its last query row
        assert np.array_equal(steps[0][0], np.asarray(prefill[0])[0, :, -1, :])

    def test_missing_attentions_raise_capability_error(self):
        with pytest.raises(CapabilityError):
            stack_generate_attentions([])
        with pytest.raises(CapabilityError):
            stack_generate_attentions([None])


MODEL = os.environ.get("MMTRACE_EXPORT_MODEL")


@pytest.mark.skipif(
    MODEL is None,
    reason="set MMTRACE_EXPORT_MODEL to a local multimodal model id to run",
)
class TestLiveModel:
    def test_capture_validates_and_shows_text_dominance(self, tmp_path,
                                                        media_file):
        from mmtrace_export import CaptureRequest, capture_trace

        out = tmp_path / "live.mmtr"
        request = CaptureRequest(model=MODEL, prompt="Describe the image.",
                                 media=media_file, max_steps=8)
        capture_trace(request, out)
        validate = subprocess.run(["mmtrace", "validate", str(out)],
                                  capture_output=True, text=True)
        assert validate.returncode == 0, validate.stderr
        analyze = subprocess.run(
            ["mmtrace", "analyze", str(out), "--format", "json"],
            capture_output=True, text=True,
        )
        assert analyze.returncode == 0, analyze.stderr
        report = json.loads(analyze.stdout)
        assert report["buckets"]["late"]["mdi"] > 1.0
