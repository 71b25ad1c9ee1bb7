"""Versioned prompt templates shipped as text assets in ``semmap_bench/prompts``."""

from __future__ import annotations

import hashlib
from functools import lru_cache
from importlib import resources
from string import Template


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return resources.files("semmap_bench").joinpath("prompts", f"{name}.txt").read_text(
        encoding="utf-8")


def template_hash(name: str) -> str:
    return hashlib.sha256(load_template(name).encode("utf-8")).hexdigest()[:16]


def render(name: str, **fields) -> str:
    # substitute() so a missing field fails loudly instead of leaking "$x" into a prompt
    return Template(load_template(name)).substitute(**{k: str(v) for k, v in fields.items()})


def template_hashes(names) -> dict:
    return {name: template_hash(name) for name in sorted(names)}
