"""Runtime adapters: map a model id to something with a capture() method."""

from .mock import MockRuntime


def resolve_runtime(model_id: str):
    """Pick an adapter from the model id.

    `mock:<name>` is the deterministic built-in runtime used for testing
    and demos; anything else is treated as a Hugging Face model id.
    """
    if model_id.startswith("mock:"):
        return MockRuntime(model_id)
    from .hf import HFRuntime

    return HFRuntime(model_id)


__all__ = ["MockRuntime", "resolve_runtime"]
