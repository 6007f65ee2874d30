"""Grammar-constrained decoding over precomputed subterminal trees."""

from __future__ import annotations

from importlib import resources

from .engine import (
    DecodeOptions,
    DecodeResult,
    DecodeSession,
    MaskConfig,
    check_token,
    compute_mask,
    constrained_decode,
    force_eos_check,
    heal_prompt,
    session_update,
)
from .grammar import Cfg, load_grammar, parse_grammar, validate_cfg
from .serialize import load_artifact, save_artifact
from .speculate import SpeculationTable
from .treegen import CompiledArtifact, build_trees, classify_traversal, compile_artifact
from .vocab import Vocabulary, detokenize, load_vocab

__all__ = [
    "Cfg",
    "CompiledArtifact",
    "DecodeOptions",
    "DecodeResult",
    "DecodeSession",
    "MaskConfig",
    "SpeculationTable",
    "Vocabulary",
    "build_trees",
    "check_token",
    "classify_traversal",
    "compile_artifact",
    "compute_mask",
    "constrained_decode",
    "detokenize",
    "fixture_path",
    "force_eos_check",
    "heal_prompt",
    "load_artifact",
    "load_grammar",
    "load_vocab",
    "parse_grammar",
    "save_artifact",
    "session_update",
    "validate_cfg",
]


def fixture_path(*parts: str) -> str:
    """Path of a bundled fixture, e.g. ``fixture_path("grammars", "json.gbnf")``."""
    return str(resources.files("domino").joinpath("fixtures", *parts))
