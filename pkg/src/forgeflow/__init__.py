"""Deterministic kernel for an LLM-driven model-development crew.

Four agents (task, data, model, server) cooperate around a hub-and-spoke
message bus to turn a natural-language requirement into a trained,
evaluated, and deployed model. Every run is reproducible: language-model
calls go through a record/replay gateway, tools are fixtures or
subprocesses with schema-checked IO, and the kernel emits a canonical
event log that replays byte-identically.
"""

__version__ = "0.1.0"
