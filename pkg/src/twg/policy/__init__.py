from .base import (
    GenerationRequest,
    GenerationResponse,
    Message,
    Policy,
    PolicyKind,
    SamplingParams,
    ScriptError,
    TransportError,
    Unsupported,
)
from .scripted import ScriptedPolicy, always_answer

__all__ = [
    "GenerationRequest",
    "GenerationResponse",
    "Message",
    "Policy",
    "PolicyKind",
    "SamplingParams",
    "ScriptError",
    "ScriptedPolicy",
    "TransportError",
    "Unsupported",
    "always_answer",
]
