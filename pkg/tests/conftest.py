from __future__ import annotations

from importlib import resources
from pathlib import Path

import numpy as np
import pytest

from lag.config import load_settings
from lag.core import Passage
from lag.index import VectorIndex, ingest, load_corpus

DATA = Path(str(resources.files("lag.data")))


def bundle(name: str) -> Path:
    return DATA / name


def build_index(name: str, settings=None) -> VectorIndex:
    settings = settings or load_settings(bundle(name) / "config.yaml")
    docs = load_corpus(bundle(name) / "corpus.jsonl")
    return ingest(docs, settings.build_embedder(), settings.chunk_size, settings.overlap, timestamp="fixed")


def step_reply(answer: str, answerable: bool = True, consistent: bool = True) -> str:
    return (
        f"ANSWER: {answer}\n"
        f"ASSESSMENT: {'ANSWERABLE' if answerable else 'UNANSWERABLE'}\n"
        f"CONSISTENCY: {'CONSISTENT' if consistent else 'CONTRADICTS'}"
    )


def unit_passage(pid: str, vec, text: str | None = None) -> Passage:
    v = np.asarray(vec, dtype=float)
    return Passage(pid, pid, text or f"passage {pid}", tuple((v / np.linalg.norm(v)).tolist()))


class FixedEmbedder:
    """Embeds every text to a preset vector (default: a fixed unit vector)."""

    def __init__(self, table: dict[str, np.ndarray] | None = None, default=None, dimension: int = 4):
        self.dimension = dimension
        self.table = table or {}
        self.default = np.asarray(default if default is not None else [1.0] + [0.0] * (dimension - 1))

    def embed(self, text: str) -> np.ndarray:
        return np.asarray(self.table.get(text, self.default), dtype=float)


@pytest.fixture(scope="session")
def label_chain_settings():
    return load_settings(bundle("label_chain") / "config.yaml")


@pytest.fixture(scope="session")
def label_chain_question() -> str:
    return (bundle("label_chain") / "question.txt").read_text(encoding="utf-8").strip()


@pytest.fixture(scope="session")
def label_chain_index(label_chain_settings) -> VectorIndex:
    return build_index("label_chain", label_chain_settings)


@pytest.fixture(scope="session")
def poisoned_settings():
    return load_settings(bundle("label_chain_poisoned") / "config.yaml")


@pytest.fixture(scope="session")
def poisoned_index(poisoned_settings) -> VectorIndex:
    return build_index("label_chain_poisoned", poisoned_settings)
